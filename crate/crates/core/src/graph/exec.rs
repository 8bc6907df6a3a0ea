use std::collections::{BTreeMap, HashMap};

use super::{Layer, NetworkSpec, Resample, Source};
use crate::error::{Error, Result};
use crate::ops::{concat_channels, conv2d, conv_flops, maxpool2, relu, smape, upsample_nearest2};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub output: Tensor,
    /// Producer-side tensors of the cached edges. Empty on cached passes.
    pub edge_tensors: BTreeMap<String, Tensor>,
    pub flops_executed: u64,
    /// Encoder outputs by depth, when requested.
    pub per_level_features: Option<BTreeMap<usize, Tensor>>,
}

enum Mode<'a> {
    Full { features: bool },
    Cached(&'a BTreeMap<String, Tensor>),
}

fn resample(t: &Tensor, r: Resample) -> Result<Tensor> {
    match r {
        Resample::None => Ok(t.clone()),
        Resample::Down2 => maxpool2(t),
        Resample::Up2 => Ok(upsample_nearest2(t)),
    }
}

impl NetworkSpec {
    /// Evaluates every block and records the tensors on cached edges.
    pub fn forward_full(&self, input: &Tensor) -> Result<ForwardRecord> {
        self.run(input, Mode::Full { features: false })
    }

    /// Like [`forward_full`](Self::forward_full), also keeping encoder outputs per depth.
    pub fn forward_full_with_features(&self, input: &Tensor) -> Result<ForwardRecord> {
        self.run(input, Mode::Full { features: true })
    }

    /// Evaluates only the live blocks, reading cached edges from `cache`.
    pub fn forward_cached(
        &self,
        input: &Tensor,
        cache: &BTreeMap<String, Tensor>,
    ) -> Result<ForwardRecord> {
        for name in &self.cache.cached_edges {
            let tensor = cache
                .get(name)
                .ok_or_else(|| Error::MissingCacheEntry(name.clone()))?;
            let expected = self.edge_shape(name).expect("cached edges are validated");
            if tensor.shape() != expected {
                return Err(Error::CacheShape {
                    edge: name.clone(),
                    expected,
                    actual: tensor.shape(),
                });
            }
        }
        self.run(input, Mode::Cached(cache))
    }

    fn run(&self, input: &Tensor, mode: Mode<'_>) -> Result<ForwardRecord> {
        if input.shape() != self.input {
            return Err(Error::ShapeMismatch {
                left: self.input,
                right: input.shape(),
            });
        }
        let cached_pass = matches!(mode, Mode::Cached(_));
        let mut values: HashMap<_, Tensor> = HashMap::new();
        let mut flops = 0u64;

        for block in &self.blocks {
            if cached_pass && !self.cache.live_blocks.contains(&block.id) {
                continue;
            }
            let mut parts = Vec::new();
            for e in self.incoming(block.id) {
                let src = match (&mode, e.from) {
                    (_, Source::Input) => input,
                    (Mode::Cached(cache), Source::Block(_))
                        if self.cache.cached_edges.contains(&e.name) =>
                    {
                        &cache[&e.name]
                    }
                    (_, Source::Block(id)) => &values[&id],
                };
                parts.push(resample(src, e.resample)?);
            }
            let mut x = if parts.len() == 1 {
                parts.pop().expect("one part")
            } else {
                concat_channels(&parts.iter().collect::<Vec<_>>())?
            };
            for layer in &block.layers {
                x = match layer {
                    Layer::Conv(p) => {
                        let y = conv2d(&x, p)?;
                        flops += conv_flops(p, y.height(), y.width());
                        y
                    }
                    Layer::Relu => relu(&x),
                    Layer::Maxpool2 => maxpool2(&x)?,
                    Layer::Upsample2 => upsample_nearest2(&x),
                };
            }
            values.insert(block.id, x);
        }

        let edge_tensors = if cached_pass {
            BTreeMap::new()
        } else {
            self.cache
                .cached_edges
                .iter()
                .map(|name| {
                    let Source::Block(id) = self.edge(name).expect("validated").from else {
                        unreachable!("cached edges never start at the input")
                    };
                    (name.clone(), values[&id].clone())
                })
                .collect()
        };
        let per_level_features = match mode {
            Mode::Full { features: true } => Some(
                self.encoder_levels()
                    .into_iter()
                    .map(|(depth, id)| (depth, values[&id].clone()))
                    .collect(),
            ),
            _ => None,
        };
        let output = values
            .remove(&self.output)
            .expect("output block is always evaluated");
        Ok(ForwardRecord {
            output,
            edge_tensors,
            flops_executed: flops,
            per_level_features,
        })
    }
}

/// SMAPE between each frame's encoder features and frame 0's, per depth.
pub fn feature_delta_profile(
    spec: &NetworkSpec,
    frames: &[Tensor],
) -> Result<BTreeMap<usize, Vec<f64>>> {
    if frames.len() < 2 {
        return Err(Error::TooFewFrames {
            needed: 2,
            got: frames.len(),
        });
    }
    if spec.encoder_levels().is_empty() {
        return Err(Error::InvalidNetwork(
            "network has no encoder levels".into(),
        ));
    }
    let features = |t: &Tensor| -> Result<BTreeMap<usize, Tensor>> {
        Ok(spec
            .forward_full_with_features(t)?
            .per_level_features
            .expect("requested"))
    };
    let reference = features(&frames[0])?;
    let mut profile: BTreeMap<usize, Vec<f64>> =
        reference.keys().map(|&d| (d, vec![0.0])).collect();
    for frame in &frames[1..] {
        for (depth, f) in features(frame)? {
            profile
                .get_mut(&depth)
                .expect("same levels every frame")
                .push(smape(&f, &reference[&depth])?);
        }
    }
    Ok(profile)
}
