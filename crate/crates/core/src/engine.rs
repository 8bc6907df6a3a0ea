//! Runs a network over a frame sequence, refreshing or reusing the layer cache
//! as the policy decides.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NetworkSpec;
use crate::metrics::{self, FrameRow, QualityReport, Summary};
use crate::policy::{should_refresh, PolicyState, RefreshPolicy};
use crate::tensor::Tensor;
use crate::workload::FrameInput;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CacheState {
    pub entries: BTreeMap<String, Tensor>,
    /// Input of the refresh frame, kept only for frame-delta policies.
    pub reference_input: Option<Tensor>,
    pub last_refresh_frame: Option<usize>,
}

impl CacheState {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bytes(&self) -> u64 {
        cache_bytes_report(self)
    }
}

/// Float32 storage held by the cache: every entry plus the reference input.
pub fn cache_bytes_report(state: &CacheState) -> u64 {
    state
        .entries
        .values()
        .chain(state.reference_input.as_ref())
        .map(|t| t.bytes() as u64)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CorruptionMode {
    Zero,
    /// Uniform over each entry's own `[min, max]`.
    UniformRandom,
    /// Gaussian with each entry's own mean and standard deviation.
    NormalRandom,
    /// Adds zero-mean Gaussian noise with `sigma_scale` times the entry's std.
    Noise {
        sigma_scale: f64,
    },
}

impl std::fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorruptionMode::Zero => write!(f, "zero"),
            CorruptionMode::UniformRandom => write!(f, "uniform"),
            CorruptionMode::NormalRandom => write!(f, "normal"),
            CorruptionMode::Noise { sigma_scale } => write!(f, "noise({sigma_scale}σ)"),
        }
    }
}

fn distribution_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidPolicy(format!("corruption: {e}"))
}

/// Replaces or perturbs every cache entry. Shapes and the reference input are
/// kept; the result depends only on `(state, mode, seed)`.
pub fn corrupt_cache(state: &CacheState, mode: CorruptionMode, seed: u64) -> Result<CacheState> {
    if state.is_empty() {
        return Err(Error::EmptyCache);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = BTreeMap::new();
    for (name, t) in &state.entries {
        let corrupted = match mode {
            CorruptionMode::Zero => t.map(|_| 0.0),
            CorruptionMode::Noise { sigma_scale: 0.0 } => t.clone(),
            CorruptionMode::Noise { sigma_scale } => {
                let normal = Normal::new(0.0, sigma_scale * t.std()).map_err(distribution_err)?;
                let data = t
                    .data()
                    .iter()
                    .map(|&v| (v as f64 + normal.sample(&mut rng)) as f32)
                    .collect();
                Tensor::new(t.shape(), data)?
            }
            CorruptionMode::UniformRandom => {
                let (lo, hi) = t.min_max();
                if lo == hi {
                    t.clone()
                } else {
                    let u = Uniform::new_inclusive(lo, hi).map_err(distribution_err)?;
                    let data = (0..t.len()).map(|_| u.sample(&mut rng)).collect();
                    Tensor::new(t.shape(), data)?
                }
            }
            CorruptionMode::NormalRandom => {
                let normal = Normal::new(t.mean(), t.std()).map_err(distribution_err)?;
                let data = (0..t.len())
                    .map(|_| normal.sample(&mut rng) as f32)
                    .collect();
                Tensor::new(t.shape(), data)?
            }
        };
        entries.insert(name.clone(), corrupted);
    }
    Ok(CacheState {
        entries,
        reference_input: state.reference_input.clone(),
        last_refresh_frame: state.last_refresh_frame,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Leading frames that always run full inference and are left out of the
    /// report totals.
    pub warmup: usize,
    /// Corrupt the cache after every refresh (null-hypothesis runs).
    pub corruption: Option<(CorruptionMode, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub index: usize,
    pub refreshed: bool,
    pub flops: u64,
    pub policy_metric: f64,
    #[serde(skip)]
    pub output: Tensor,
    pub quality: Option<QualityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceReport {
    pub policy: String,
    pub cache_label: String,
    pub warmup: usize,
    /// Frames after warmup.
    pub frames: Vec<FrameRecord>,
    pub full_pass_flops: u64,
    pub cached_pass_flops: u64,
    pub refresh_count: usize,
    pub skipped_frame_fraction: f64,
    pub eliminated_flops_fraction: f64,
    pub cache_bytes: u64,
}

impl SequenceReport {
    pub fn total_flops(&self) -> u64 {
        self.frames.iter().map(|f| f.flops).sum()
    }

    pub fn outputs(&self) -> Vec<&Tensor> {
        self.frames.iter().map(|f| &f.output).collect()
    }

    pub fn rows(&self) -> Vec<FrameRow> {
        self.frames
            .iter()
            .map(|f| FrameRow {
                refreshed: f.refreshed,
                flops: f.flops,
                quality: f.quality,
            })
            .collect()
    }

    /// Scores each output against the matching reference frame. `reference`
    /// covers the same frames as the report, warmup excluded.
    pub fn attach_reference(&mut self, reference: &[Tensor], peak: f64) -> Result<()> {
        if reference.len() != self.frames.len() {
            return Err(Error::TooFewFrames {
                needed: self.frames.len(),
                got: reference.len(),
            });
        }
        for (f, r) in self.frames.iter_mut().zip(reference) {
            f.quality = Some(QualityReport::measure(&f.output, r, peak)?);
        }
        Ok(())
    }

    pub fn summary(&self, peak: f64) -> Result<Summary> {
        metrics::aggregate(&self.rows(), self.full_pass_flops, peak)
    }

    /// One row per frame: `index,refreshed,flops,policy_metric,mse_vs_baseline`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,refreshed,flops,policy_metric,mse_vs_baseline\n");
        for f in &self.frames {
            let mse = f.quality.map(|q| q.mse.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                f.index, f.refreshed as u8, f.flops, f.policy_metric, mse
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

/// Full inference on every frame.
pub fn run_baseline(spec: &NetworkSpec, frames: &[FrameInput]) -> Result<Vec<Tensor>> {
    frames
        .iter()
        .map(|f| Ok(spec.forward_full(&f.input)?.output))
        .collect()
}

pub fn run_sequence(
    spec: &NetworkSpec,
    frames: &[FrameInput],
    policy: &RefreshPolicy,
) -> Result<SequenceReport> {
    run_sequence_with(spec, frames, policy, &RunOptions::default())
}

pub fn run_sequence_with(
    spec: &NetworkSpec,
    frames: &[FrameInput],
    policy: &RefreshPolicy,
    options: &RunOptions,
) -> Result<SequenceReport> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    if options.warmup >= frames.len() {
        return Err(Error::TooFewFrames {
            needed: options.warmup + 1,
            got: frames.len(),
        });
    }
    let keeps_reference = matches!(policy, RefreshPolicy::DeltaSmape { .. });
    let mut state = PolicyState::new(policy)?;
    let mut cache = CacheState::default();
    let mut cache_bytes = 0;
    let mut records = Vec::with_capacity(frames.len() - options.warmup);

    for (t, frame) in frames.iter().enumerate() {
        let decision = should_refresh(policy, &state, frame)?;
        let refresh = decision.refresh || t < options.warmup;
        let record = if refresh {
            let rec = spec.forward_full(&frame.input)?;
            let fresh = CacheState {
                entries: rec.edge_tensors,
                reference_input: keeps_reference.then(|| frame.input.clone()),
                last_refresh_frame: Some(t),
            };
            cache = match options.corruption {
                Some((mode, seed)) if !fresh.is_empty() => {
                    corrupt_cache(&fresh, mode, seed.wrapping_add(t as u64))?
                }
                _ => fresh,
            };
            cache_bytes = cache_bytes.max(cache.bytes());
            FrameRecord {
                index: frame.index,
                refreshed: true,
                flops: rec.flops_executed,
                policy_metric: decision.metric,
                output: rec.output,
                quality: None,
            }
        } else {
            let rec = spec.forward_cached(&frame.input, &cache.entries)?;
            FrameRecord {
                index: frame.index,
                refreshed: false,
                flops: rec.flops_executed,
                policy_metric: decision.metric,
                output: rec.output,
                quality: None,
            }
        };
        state.advance(policy, frame, refresh);
        if t >= options.warmup {
            records.push(record);
        }
    }

    let full_pass_flops = spec.full_flops();
    let rows: Vec<_> = records
        .iter()
        .map(|f| FrameRow {
            refreshed: f.refreshed,
            flops: f.flops,
            quality: None,
        })
        .collect();
    let summary = metrics::aggregate(&rows, full_pass_flops, metrics::DEFAULT_PEAK)?;
    Ok(SequenceReport {
        policy: policy.to_string(),
        cache_label: spec.cache_config().label.to_string(),
        warmup: options.warmup,
        frames: records,
        full_pass_flops,
        cached_pass_flops: spec.cached_flops(),
        refresh_count: summary.refresh_count,
        skipped_frame_fraction: summary.skipped_frame_fraction,
        eliminated_flops_fraction: summary.eliminated_flops_fraction,
        cache_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_unet, BuildOptions};
    use crate::tensor::Shape;
    use crate::workload::{generate, SceneConfig};

    fn scene(pan_speed: f64) -> SceneConfig {
        SceneConfig {
            seed: 3,
            height: 16,
            width: 16,
            pan_speed,
            ..SceneConfig::default()
        }
    }

    fn net() -> NetworkSpec {
        build_unet(3, 4, Shape::new(6, 16, 16), &BuildOptions::default()).unwrap()
    }

    #[test]
    fn bytes_examples() {
        let mut state = CacheState::default();
        assert_eq!(cache_bytes_report(&state), 0);
        state
            .entries
            .insert("a".into(), Tensor::zeros(Shape::new(24, 360, 640)).unwrap());
        assert_eq!(cache_bytes_report(&state), 22_118_400);
        state.reference_input = Some(Tensor::zeros(Shape::new(1, 2, 2)).unwrap());
        assert_eq!(cache_bytes_report(&state), 22_118_416);
    }

    #[test]
    fn corruption_modes() {
        let t = Tensor::from_fn(Shape::new(2, 4, 4), |c, y, x| (c + y * x) as f32).unwrap();
        let state = CacheState {
            entries: [("e".to_string(), t.clone())].into(),
            reference_input: None,
            last_refresh_frame: Some(0),
        };
        let zero = corrupt_cache(&state, CorruptionMode::Zero, 1).unwrap();
        assert!(zero.entries["e"].data().iter().all(|&v| v == 0.0));
        let same = corrupt_cache(&state, CorruptionMode::Noise { sigma_scale: 0.0 }, 1).unwrap();
        assert_eq!(same, state);
        let noisy = corrupt_cache(&state, CorruptionMode::Noise { sigma_scale: 1.0 }, 1).unwrap();
        assert_ne!(noisy.entries["e"], t);
        assert_eq!(
            noisy,
            corrupt_cache(&state, CorruptionMode::Noise { sigma_scale: 1.0 }, 1).unwrap()
        );
        let (lo, hi) = t.min_max();
        let uni = corrupt_cache(&state, CorruptionMode::UniformRandom, 2).unwrap();
        assert!(uni.entries["e"].data().iter().all(|&v| v >= lo && v <= hi));
        let normal = corrupt_cache(&state, CorruptionMode::NormalRandom, 2).unwrap();
        assert_eq!(normal.entries["e"].shape(), t.shape());
        assert!(matches!(
            corrupt_cache(&CacheState::default(), CorruptionMode::Zero, 0),
            Err(Error::EmptyCache)
        ));
    }

    #[test]
    fn static_scene_refreshes_once() {
        let seq = generate(&scene(0.0), 10).unwrap();
        let spec = net();
        let report =
            run_sequence(&spec, &seq.frames, &RefreshPolicy::DeltaSmape { tau: 0.25 }).unwrap();
        assert_eq!(report.refresh_count, 1);
        assert!((report.skipped_frame_fraction - 0.9).abs() < 1e-12);
        let baseline = run_baseline(&spec, &seq.frames).unwrap();
        for (f, b) in report.frames.iter().zip(&baseline) {
            assert!(f.output.max_abs_diff(b).unwrap() <= 1e-6);
        }
        // the reference input is held alongside the single cached edge
        let edge = spec.edge_shape("dec1->dec0").unwrap();
        assert_eq!(
            report.cache_bytes,
            (edge.bytes() + Shape::new(6, 16, 16).bytes()) as u64
        );
    }

    #[test]
    fn every_n_totals_and_ledger() {
        let seq = generate(&scene(1.0), 10).unwrap();
        let spec = net();
        let report = run_sequence(&spec, &seq.frames, &RefreshPolicy::EveryN { n: 5 }).unwrap();
        assert_eq!(report.refresh_count, 2);
        let total: u64 = report.total_flops();
        assert_eq!(total, 2 * spec.full_flops() + 8 * spec.cached_flops());
        let savings = 1.0 - spec.cached_flops() as f64 / spec.full_flops() as f64;
        assert!(
            (report.eliminated_flops_fraction - report.skipped_frame_fraction * savings).abs()
                < 1e-12
        );

        let baseline = run_baseline(&spec, &seq.frames).unwrap();
        for (f, b) in report.frames.iter().zip(&baseline) {
            if f.refreshed {
                assert_eq!(&f.output, b);
            }
        }
    }

    #[test]
    fn warmup_frames_are_excluded() {
        let seq = generate(&scene(1.0), 8).unwrap();
        let opts = RunOptions {
            warmup: 3,
            corruption: None,
        };
        let report =
            run_sequence_with(&net(), &seq.frames, &RefreshPolicy::no_update(), &opts).unwrap();
        assert_eq!(report.frames.len(), 5);
        assert_eq!(report.frames[0].index, 3);
        assert_eq!(report.refresh_count, 0);
        assert_eq!(report.skipped_frame_fraction, 1.0);
        let too_long = RunOptions {
            warmup: 8,
            corruption: None,
        };
        assert!(
            run_sequence_with(&net(), &seq.frames, &RefreshPolicy::no_update(), &too_long).is_err()
        );
    }

    #[test]
    fn csv_has_one_row_per_frame() {
        let seq = generate(&scene(1.0), 4).unwrap();
        let spec = net();
        let mut report = run_sequence(&spec, &seq.frames, &RefreshPolicy::EveryN { n: 2 }).unwrap();
        let baseline = run_baseline(&spec, &seq.frames).unwrap();
        report.attach_reference(&baseline, 1.0).unwrap();
        let csv = report.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,1,"));
        assert!(lines[1].ends_with(",0"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["refresh_count"], 2);
        assert!(run_sequence(&spec, &[], &RefreshPolicy::EveryN { n: 2 }).is_err());
    }
}
