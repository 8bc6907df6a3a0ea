//! Cache refresh policies: decide per frame between full and cached inference.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::smape;
use crate::tensor::Tensor;
use crate::workload::FrameInput;

/// SMAPE threshold of the high-sensitivity frame-delta preset.
pub const DELTA_H_TAU: f64 = 0.20;
/// SMAPE threshold of the low-sensitivity frame-delta preset.
pub const DELTA_L_TAU: f64 = 0.25;
/// Mean motion threshold in pixels per frame.
pub const MOTION_TAU: f64 = 1.0;
pub const NONLINEAR_C: f64 = 110.0;
pub const NONLINEAR_P: f64 = 1.4;

pub const PRESET_NAMES: [&str; 8] = [
    "delta_h",
    "delta_l",
    "n2",
    "n5",
    "motion",
    "nonlinear",
    "no_update",
    "every_frame",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RefreshPolicy {
    EveryN {
        n: usize,
    },
    /// Power-spaced schedule of `refreshes` frames over `horizon` frames.
    /// `c` is carried along with the preset but does not enter the schedule.
    NonLinear {
        c: f64,
        p: f64,
        refreshes: usize,
        horizon: usize,
    },
    /// Refresh when SMAPE against the last refresh frame's input exceeds `tau`.
    /// An infinite `tau` never refreshes after frame 0.
    DeltaSmape {
        tau: f64,
    },
    /// Refresh when the mean motion magnitude exceeds `tau` pixels per frame.
    MotionThreshold {
        tau: f64,
    },
}

impl RefreshPolicy {
    pub fn no_update() -> Self {
        RefreshPolicy::DeltaSmape { tau: f64::INFINITY }
    }

    /// Named preset for a sequence of `horizon` frames.
    pub fn preset(name: &str, horizon: usize) -> Result<Self> {
        let policy = match name {
            "delta_h" => RefreshPolicy::DeltaSmape { tau: DELTA_H_TAU },
            "delta_l" => RefreshPolicy::DeltaSmape { tau: DELTA_L_TAU },
            "n2" => RefreshPolicy::EveryN { n: 2 },
            "n5" => RefreshPolicy::EveryN { n: 5 },
            "motion" => RefreshPolicy::MotionThreshold { tau: MOTION_TAU },
            // as many refreshes as every-5 would spend
            "nonlinear" => RefreshPolicy::NonLinear {
                c: NONLINEAR_C,
                p: NONLINEAR_P,
                refreshes: horizon.div_ceil(5).max(1),
                horizon,
            },
            "no_update" => RefreshPolicy::no_update(),
            "every_frame" => RefreshPolicy::EveryN { n: 1 },
            other => return Err(Error::InvalidPolicy(format!("unknown preset `{other}`"))),
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPolicy(m));
        match *self {
            RefreshPolicy::EveryN { n: 0 } => bad("every-N needs n >= 1".into()),
            RefreshPolicy::NonLinear {
                c,
                p,
                refreshes,
                horizon,
            } => {
                if !(c > 0.0 && c.is_finite() && p > 0.0 && p.is_finite()) {
                    bad(format!(
                        "non-linear needs positive c and p, got c={c}, p={p}"
                    ))
                } else if refreshes == 0 || horizon == 0 {
                    bad("non-linear needs at least one refresh and one frame".into())
                } else {
                    Ok(())
                }
            }
            RefreshPolicy::DeltaSmape { tau } if tau.is_nan() || tau <= 0.0 => {
                bad(format!("SMAPE threshold must be positive, got {tau}"))
            }
            RefreshPolicy::MotionThreshold { tau } if tau.is_nan() || tau < 0.0 => {
                bad(format!("motion threshold must be non-negative, got {tau}"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for RefreshPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefreshPolicy::EveryN { n } => write!(f, "N-{n}"),
            RefreshPolicy::NonLinear { refreshes, p, .. } => {
                write!(f, "Non-Linear(K={refreshes}, p={p})")
            }
            RefreshPolicy::DeltaSmape { tau } if tau.is_infinite() => write!(f, "No Update"),
            RefreshPolicy::DeltaSmape { tau } => write!(f, "Delta(tau={tau})"),
            RefreshPolicy::MotionThreshold { tau } => write!(f, "Motion(tau={tau})"),
        }
    }
}

/// `unique{ round((k / (K-1))^p * (T-1)) : k in 0..K }`, halves rounded away
/// from zero. Always contains 0; contains `T-1` whenever `K >= 2`.
pub fn nonlinear_schedule(p: f64, refreshes: usize, horizon: usize) -> Result<BTreeSet<usize>> {
    if horizon == 0 {
        return Err(Error::InvalidPolicy(
            "schedule horizon must be at least 1".into(),
        ));
    }
    if refreshes == 0 || !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidPolicy(format!(
            "schedule needs refreshes >= 1 and p > 0, got {refreshes} and {p}"
        )));
    }
    if refreshes == 1 {
        return Ok([0].into());
    }
    let last = (horizon - 1) as f64;
    Ok((0..refreshes)
        .map(|k| {
            let t = (k as f64 / (refreshes - 1) as f64).powf(p);
            (t * last).round() as usize
        })
        .collect())
}

/// Mean Euclidean norm of the per-pixel motion vectors.
pub fn mean_motion_magnitude(frame: &FrameInput) -> Result<f64> {
    let motion = frame
        .motion
        .as_ref()
        .ok_or(Error::MissingMotion { index: frame.index })?;
    if motion.channels() != 2 {
        return Err(Error::ChannelMismatch {
            expected: 2,
            actual: motion.channels(),
        });
    }
    let sum: f64 = motion
        .channel(0)
        .iter()
        .zip(motion.channel(1))
        .map(|(&dx, &dy)| (dx as f64).hypot(dy as f64))
        .sum();
    Ok(sum / motion.shape().plane() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub frames_since_refresh: usize,
    pub frame_index: usize,
    pub schedule: Option<BTreeSet<usize>>,
    /// Input of the last refresh frame, kept for frame-delta policies.
    pub stored_input: Option<Tensor>,
}

impl PolicyState {
    pub fn new(policy: &RefreshPolicy) -> Result<Self> {
        policy.validate()?;
        let schedule = match *policy {
            RefreshPolicy::NonLinear {
                p,
                refreshes,
                horizon,
                ..
            } => Some(nonlinear_schedule(p, refreshes, horizon)?),
            _ => None,
        };
        Ok(Self {
            frames_since_refresh: 0,
            frame_index: 0,
            schedule,
            stored_input: None,
        })
    }

    /// Moves to the next frame after `frame` was processed.
    pub fn advance(&mut self, policy: &RefreshPolicy, frame: &FrameInput, refreshed: bool) {
        if refreshed {
            self.frames_since_refresh = 0;
            if matches!(policy, RefreshPolicy::DeltaSmape { .. }) {
                self.stored_input = Some(frame.input.clone());
            }
        } else {
            self.frames_since_refresh += 1;
        }
        self.frame_index += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub refresh: bool,
    /// The quantity the policy compared: SMAPE, motion magnitude, or frames
    /// since the last refresh.
    pub metric: f64,
}

pub fn should_refresh(
    policy: &RefreshPolicy,
    state: &PolicyState,
    frame: &FrameInput,
) -> Result<Decision> {
    let first = state.frame_index == 0;
    let t = state.frame_index;
    let decision = match policy {
        RefreshPolicy::EveryN { n } => Decision {
            refresh: t.is_multiple_of(*n),
            metric: state.frames_since_refresh as f64,
        },
        RefreshPolicy::NonLinear { .. } => {
            let schedule = state
                .schedule
                .as_ref()
                .ok_or_else(|| Error::PolicyState("non-linear state has no schedule".into()))?;
            Decision {
                refresh: schedule.contains(&t),
                metric: state.frames_since_refresh as f64,
            }
        }
        RefreshPolicy::DeltaSmape { tau } => {
            if first {
                Decision {
                    refresh: true,
                    metric: 0.0,
                }
            } else {
                let stored = state
                    .stored_input
                    .as_ref()
                    .ok_or_else(|| Error::PolicyState(format!("no stored input at frame {t}")))?;
                let metric = smape(&frame.input, stored)?;
                Decision {
                    refresh: metric > *tau,
                    metric,
                }
            }
        }
        RefreshPolicy::MotionThreshold { tau } => {
            let metric = mean_motion_magnitude(frame)?;
            Decision {
                refresh: metric > *tau,
                metric,
            }
        }
    };
    Ok(Decision {
        refresh: decision.refresh || first,
        ..decision
    })
}

/// Refresh decisions for a whole sequence, without running any network.
pub fn refresh_mask(policy: &RefreshPolicy, frames: &[FrameInput]) -> Result<Vec<bool>> {
    let mut state = PolicyState::new(policy)?;
    frames
        .iter()
        .map(|f| {
            let d = should_refresh(policy, &state, f)?;
            state.advance(policy, f, d.refresh);
            Ok(d.refresh)
        })
        .collect()
}
