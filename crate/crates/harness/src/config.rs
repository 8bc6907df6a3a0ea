use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use framecache::graph::{
    build_multibranch, build_multibranch_preset, build_unet, build_unetpp, BranchPlan,
    BuildOptions, CacheLabel, LayerPlan, NetworkSpec,
};
use framecache::policy::RefreshPolicy;
use framecache::workload::SceneConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PolicySweep,
    AblationLevels,
    NullHypothesis,
    SuperresTradeoff,
    MemoryReport,
    FeatureProfile,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::PolicySweep,
        Scenario::AblationLevels,
        Scenario::NullHypothesis,
        Scenario::SuperresTradeoff,
        Scenario::MemoryReport,
        Scenario::FeatureProfile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::PolicySweep => "policy_sweep",
            Scenario::AblationLevels => "ablation_levels",
            Scenario::NullHypothesis => "null_hypothesis",
            Scenario::SuperresTradeoff => "superres_tradeoff",
            Scenario::MemoryReport => "memory_report",
            Scenario::FeatureProfile => "feature_profile",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .with_context(|| format!("unknown scenario `{name}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NetworkConfig {
    Unet {
        depth: usize,
        base_channels: usize,
    },
    Unetpp {
        depth: usize,
        base_channels: usize,
    },
    /// The three-branch preset when `branches` is empty.
    Multibranch {
        #[serde(default)]
        branches: Vec<BranchPlan>,
        #[serde(default)]
        fusion: Vec<LayerPlan>,
    },
}

impl NetworkConfig {
    pub fn build(
        &self,
        scene: &SceneConfig,
        out_channels: usize,
        seed: u64,
    ) -> Result<NetworkSpec> {
        let input = scene.shape();
        let opts = BuildOptions { out_channels, seed };
        Ok(match self {
            NetworkConfig::Unet {
                depth,
                base_channels,
            } => build_unet(*depth, *base_channels, input, &opts)?,
            NetworkConfig::Unetpp {
                depth,
                base_channels,
            } => build_unetpp(*depth, *base_channels, input, &opts)?,
            NetworkConfig::Multibranch { branches, .. } if branches.is_empty() => {
                build_multibranch_preset(input, out_channels, seed)?
            }
            NetworkConfig::Multibranch { branches, fusion } => {
                build_multibranch(input, branches, fusion, seed)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub preset: String,
    /// Replaces `tau` of threshold presets or `n` of every-N.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
}

impl PolicyConfig {
    pub fn resolve(&self, frames: usize) -> Result<RefreshPolicy> {
        let mut policy = RefreshPolicy::preset(&self.preset, frames)?;
        match &mut policy {
            RefreshPolicy::DeltaSmape { tau } | RefreshPolicy::MotionThreshold { tau } => {
                if let Some(t) = self.tau {
                    *tau = t;
                }
            }
            RefreshPolicy::EveryN { n } => {
                if let Some(v) = self.n {
                    *n = v;
                }
            }
            RefreshPolicy::NonLinear { .. } => {}
        }
        policy.validate()?;
        Ok(policy)
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            preset: "n5".into(),
            tau: None,
            n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NullHypothesisConfig {
    /// Extra noise levels, in standard deviations, besides 0 and 1.
    pub noise_scales: Vec<f64>,
}

impl Default for NullHypothesisConfig {
    fn default() -> Self {
        Self {
            noise_scales: vec![4.0, 16.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperresConfig {
    /// Downscale factor of the cheap, uncached baseline input.
    pub coarse_factor: usize,
    /// Downscale factor of the larger input that runs with the cache.
    pub fine_factor: usize,
    pub policies: Vec<String>,
}

impl Default for SuperresConfig {
    fn default() -> Self {
        Self {
            coarse_factor: 4,
            fine_factor: 3,
            policies: vec!["delta_h".into(), "delta_l".into(), "n5".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub label: String,
    /// `[channels, height, width]` of each cached tensor.
    pub tensors: Vec<[usize; 3]>,
    #[serde(default)]
    pub expected_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub entries: Vec<MemoryEntry>,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            entries: vec![
                MemoryEntry {
                    label: "single 24x360x640".into(),
                    tensors: vec![[24, 360, 640]],
                    expected_bytes: Some(22_118_400),
                },
                MemoryEntry {
                    label: "seven 64x192x256".into(),
                    tensors: vec![[64, 192, 256]; 7],
                    expected_bytes: Some(88_080_384),
                },
                MemoryEntry {
                    label: "empty".into(),
                    tensors: vec![],
                    expected_bytes: Some(0),
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub frames: usize,
    pub network: NetworkConfig,
    /// Defaults to the builder's own configuration.
    #[serde(default)]
    pub cache: Option<CacheLabel>,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Scene geometry. Its `seed` is replaced by the run seed.
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default = "default_out_channels")]
    pub out_channels: usize,
    #[serde(default)]
    pub warmup: usize,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub null_hypothesis: NullHypothesisConfig,
    #[serde(default)]
    pub superres: SuperresConfig,
    #[serde(default)]
    pub memory: MemoryConfig,
}

fn default_out_channels() -> usize {
    3
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(json).context("parsing run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&json)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            );
        }
        if self.frames == 0 {
            bail!("frames must be at least 1");
        }
        if self.warmup >= self.frames {
            bail!(
                "warmup ({}) must be shorter than the sequence ({})",
                self.warmup,
                self.frames
            );
        }
        self.policy.resolve(self.frames)?;
        self.scene.validate()?;
        Ok(())
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            seed: self.seed,
            ..self.scene.clone()
        }
    }

    /// The configured network with the configured cache applied.
    pub fn network(&self) -> Result<NetworkSpec> {
        let spec = self
            .network
            .build(&self.scene(), self.out_channels, self.seed)?;
        Ok(match &self.cache {
            Some(label) => spec.with_cache(label)?,
            None => spec,
        })
    }

    pub fn refresh_policy(&self) -> Result<RefreshPolicy> {
        self.policy.resolve(self.frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "frames": 10,
        "network": {"type": "unet", "depth": 3, "base_channels": 4},
        "scene": {"height": 16, "width": 16}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.policy.preset, "n5");
        assert_eq!(cfg.scene.channels, 6);
        assert_eq!(cfg.out_channels, 3);
        let spec = cfg.network().unwrap();
        assert_eq!(spec.cache_config().label, CacheLabel::UnetLevel(1));
        assert_eq!(
            cfg.refresh_policy().unwrap(),
            RefreshPolicy::EveryN { n: 5 }
        );
    }

    #[test]
    fn rejects_bad_configs() {
        let bump = MINIMAL.replace("\"version\": 1", "\"version\": 2");
        assert!(RunConfig::from_json(&bump).is_err());
        let zero = MINIMAL.replace("\"frames\": 10", "\"frames\": 0");
        assert!(RunConfig::from_json(&zero).is_err());
        let mut cfg = RunConfig::from_json(MINIMAL).unwrap();
        cfg.policy.preset = "sometimes".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overrides_apply() {
        let p = PolicyConfig {
            preset: "delta_l".into(),
            tau: Some(0.4),
            n: None,
        };
        assert_eq!(
            p.resolve(10).unwrap(),
            RefreshPolicy::DeltaSmape { tau: 0.4 }
        );
        let cached = MINIMAL.replace(
            "\"frames\": 10,",
            "\"frames\": 10, \"cache\": {\"kind\": \"unet_level\", \"value\": 2},",
        );
        let cfg = RunConfig::from_json(&cached).unwrap();
        assert_eq!(
            cfg.network().unwrap().cache_config().label,
            CacheLabel::UnetLevel(2)
        );
        assert_eq!(
            Scenario::parse("memory_report").unwrap(),
            Scenario::MemoryReport
        );
        assert!(Scenario::parse("bogus").is_err());
    }

    #[test]
    fn custom_multibranch_network() {
        let json = r#"{
            "version": 1,
            "frames": 4,
            "network": {
                "type": "multibranch",
                "branches": [
                    {"name": "lr", "layers": [{"op": "conv", "out_channels": 4, "kernel": 3}, {"op": "relu"}]},
                    {"name": "hr", "layers": [{"op": "conv", "out_channels": 8, "kernel": 3}, {"op": "relu"}], "cached": true}
                ],
                "fusion": [{"op": "conv", "out_channels": 3, "kernel": 1}]
            },
            "scene": {"height": 16, "width": 16}
        }"#;
        let spec = RunConfig::from_json(json).unwrap().network().unwrap();
        let label = CacheLabel::MultiBranch(["hr".to_string()].into());
        assert_eq!(spec.cache_config().label, label);
        assert!(spec.cached_flops() < spec.full_flops());
    }
}
