use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, Block, BlockId, CacheLabel, Edge, Layer, NetworkSpec, Resample, Source};
use crate::error::{Error, Result};
use crate::ops::ConvParams;
use crate::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Channels produced by the 1x1 output head.
    pub out_channels: usize,
    /// Seed for He-normal weight initialization.
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            out_channels: 3,
            seed: 0,
        }
    }
}

/// A layer whose weights are drawn when the network is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerPlan {
    Conv { out_channels: usize, kernel: usize },
    Relu,
    Maxpool2,
    Upsample2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchPlan {
    pub name: String,
    pub layers: Vec<LayerPlan>,
    /// Whether the branch output is cached by default.
    #[serde(default)]
    pub cached: bool,
}

fn materialize(
    plan: &[LayerPlan],
    mut channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Layer>> {
    plan.iter()
        .map(|l| {
            Ok(match *l {
                LayerPlan::Conv {
                    out_channels,
                    kernel,
                } => {
                    let p = ConvParams::he_init(channels, out_channels, kernel, rng)?;
                    channels = out_channels;
                    Layer::Conv(p)
                }
                LayerPlan::Relu => Layer::Relu,
                LayerPlan::Maxpool2 => Layer::Maxpool2,
                LayerPlan::Upsample2 => Layer::Upsample2,
            })
        })
        .collect()
}

/// conv3x3 -> relu -> conv3x3 -> relu, optionally followed by the 1x1 head.
fn double_conv(out_channels: usize, head: Option<usize>) -> Vec<LayerPlan> {
    let mut plan = vec![
        LayerPlan::Conv {
            out_channels,
            kernel: 3,
        },
        LayerPlan::Relu,
        LayerPlan::Conv {
            out_channels,
            kernel: 3,
        },
        LayerPlan::Relu,
    ];
    if let Some(out) = head {
        plan.push(LayerPlan::Conv {
            out_channels: out,
            kernel: 1,
        });
    }
    plan
}

fn check_dims(depth: usize, base_channels: usize, input: Shape) -> Result<()> {
    if depth < 2 {
        return Err(Error::InvalidNetwork(format!(
            "depth must be at least 2, got {depth}"
        )));
    }
    if base_channels == 0 {
        return Err(Error::InvalidNetwork(
            "base_channels must be positive".into(),
        ));
    }
    let divisor = 1usize << (depth - 1);
    if !input.height.is_multiple_of(divisor) || !input.width.is_multiple_of(divisor) {
        return Err(Error::Indivisible {
            height: input.height,
            width: input.width,
            divisor,
        });
    }
    Ok(())
}

/// U-Net with `depth` resolution levels. Encoder `enc{d}` produces
/// `base_channels << d` channels; decoder `dec{d}` concatenates the upsampled
/// deeper result (slot 0) with the skip from `enc{d}` (slot 1). The default
/// cache configuration is Level 1.
pub fn build_unet(
    depth: usize,
    base_channels: usize,
    input: Shape,
    opts: &BuildOptions,
) -> Result<NetworkSpec> {
    check_dims(depth, base_channels, input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ch = |d: usize| base_channels << d;
    let mut blocks = Vec::new();
    let mut edges = Vec::new();

    for d in 0..depth {
        let id = BlockId::encoder(d as u32);
        let (from, in_ch, resample) = if d == 0 {
            (Source::Input, input.channels, Resample::None)
        } else {
            (
                Source::Block(BlockId::encoder(d as u32 - 1)),
                ch(d - 1),
                Resample::Down2,
            )
        };
        blocks.push(Block {
            id,
            name: id.to_string(),
            layers: materialize(&double_conv(ch(d), None), in_ch, &mut rng)?,
        });
        edges.push(Edge::new(from, id, 0, resample));
    }
    for d in (0..depth - 1).rev() {
        let id = BlockId::decoder(d as u32);
        let deep = if d == depth - 2 {
            BlockId::encoder(d as u32 + 1)
        } else {
            BlockId::decoder(d as u32 + 1)
        };
        let head = (d == 0).then_some(opts.out_channels);
        blocks.push(Block {
            id,
            name: id.to_string(),
            layers: materialize(&double_conv(ch(d), head), ch(d + 1) + ch(d), &mut rng)?,
        });
        edges.push(Edge::new(Source::Block(deep), id, 0, Resample::Up2));
        edges.push(Edge::new(
            Source::Block(BlockId::encoder(d as u32)),
            id,
            1,
            Resample::None,
        ));
    }

    NetworkSpec::assemble(
        Architecture::Unet {
            depth,
            base_channels,
        },
        input,
        opts.seed,
        blocks,
        edges,
        BlockId::decoder(0),
    )?
    .with_cache(&CacheLabel::UnetLevel(1))
}

/// Nested U-Net. The backbone `X{i},0` spans `depth` levels; every
/// intermediate `X{i},{j}` (i + j < depth) concatenates the upsampled
/// `X{i+1},{j-1}` with all of `X{i},0..j`. The final block `X0,{depth}`
/// concatenates the whole top row, newest first. Defaults to Config B.
pub fn build_unetpp(
    depth: usize,
    base_channels: usize,
    input: Shape,
    opts: &BuildOptions,
) -> Result<NetworkSpec> {
    check_dims(depth, base_channels, input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ch = |d: usize| base_channels << d;
    let mut blocks = Vec::new();
    let mut edges = Vec::new();

    for i in 0..depth {
        let id = BlockId::nested(i as u32, 0);
        let (from, in_ch, resample) = if i == 0 {
            (Source::Input, input.channels, Resample::None)
        } else {
            (
                Source::Block(BlockId::nested(i as u32 - 1, 0)),
                ch(i - 1),
                Resample::Down2,
            )
        };
        blocks.push(Block {
            id,
            name: id.to_string(),
            layers: materialize(&double_conv(ch(i), None), in_ch, &mut rng)?,
        });
        edges.push(Edge::new(from, id, 0, resample));
    }
    for j in 1..depth {
        for i in 0..depth - j {
            let id = BlockId::nested(i as u32, j as u32);
            let in_ch = ch(i + 1) + j * ch(i);
            blocks.push(Block {
                id,
                name: id.to_string(),
                layers: materialize(&double_conv(ch(i), None), in_ch, &mut rng)?,
            });
            let deep = BlockId::nested(i as u32 + 1, j as u32 - 1);
            edges.push(Edge::new(Source::Block(deep), id, 0, Resample::Up2));
            for k in 0..j {
                let skip = BlockId::nested(i as u32, k as u32);
                edges.push(Edge::new(Source::Block(skip), id, k + 1, Resample::None));
            }
        }
    }
    let last = BlockId::nested(0, depth as u32);
    blocks.push(Block {
        id: last,
        name: last.to_string(),
        layers: materialize(
            &double_conv(ch(0), Some(opts.out_channels)),
            depth * ch(0),
            &mut rng,
        )?,
    });
    for (slot, j) in (0..depth).rev().enumerate() {
        let from = BlockId::nested(0, j as u32);
        edges.push(Edge::new(Source::Block(from), last, slot, Resample::None));
    }

    NetworkSpec::assemble(
        Architecture::Unetpp {
            depth,
            base_channels,
        },
        input,
        opts.seed,
        blocks,
        edges,
        last,
    )?
    .with_cache(&CacheLabel::UnetppConfigB)
}

/// Parallel feature-extraction branches over the shared input, concatenated
/// in order into a fusion block. Branches flagged `cached` form the default
/// cache configuration.
pub fn build_multibranch(
    input: Shape,
    branches: &[BranchPlan],
    fusion: &[LayerPlan],
    seed: u64,
) -> Result<NetworkSpec> {
    if branches.is_empty() {
        return Err(Error::InvalidNetwork(
            "at least one branch is required".into(),
        ));
    }
    let mut names = BTreeSet::new();
    for b in branches {
        if !names.insert(b.name.as_str()) {
            return Err(Error::InvalidNetwork(format!(
                "duplicate branch `{}`",
                b.name
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    let mut edges = Vec::new();
    let mut fusion_in = 0;
    for (k, b) in branches.iter().enumerate() {
        let id = BlockId::branch(k as u32);
        let layers = materialize(&b.layers, input.channels, &mut rng)?;
        fusion_in += layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Conv(p) => Some(p.out_channels),
                _ => None,
            })
            .unwrap_or(input.channels);
        blocks.push(Block {
            id,
            name: b.name.clone(),
            layers,
        });
        edges.push(Edge {
            name: format!("input->{}", b.name),
            from: Source::Input,
            to: id,
            slot: 0,
            resample: Resample::None,
        });
        edges.push(Edge {
            name: format!("{}->fusion", b.name),
            from: Source::Block(id),
            to: BlockId::fusion(),
            slot: k,
            resample: Resample::None,
        });
    }
    blocks.push(Block {
        id: BlockId::fusion(),
        name: "fusion".into(),
        layers: materialize(fusion, fusion_in, &mut rng)?,
    });

    let cached = branches
        .iter()
        .filter(|b| b.cached)
        .map(|b| b.name.clone())
        .collect();
    NetworkSpec::assemble(
        Architecture::MultiBranch {
            branches: branches.iter().map(|b| b.name.clone()).collect(),
        },
        input,
        seed,
        blocks,
        edges,
        BlockId::fusion(),
    )?
    .with_cache(&CacheLabel::MultiBranch(cached))
}

/// Three-branch supersampling-style network: a cheap live `lr` branch plus
/// heavier `temporal` and `hr` branches that are cached.
pub fn build_multibranch_preset(
    input: Shape,
    out_channels: usize,
    seed: u64,
) -> Result<NetworkSpec> {
    use LayerPlan::*;
    let conv = |out_channels, kernel| Conv {
        out_channels,
        kernel,
    };
    let branches = [
        BranchPlan {
            name: "lr".into(),
            layers: vec![conv(8, 3), Relu],
            cached: false,
        },
        BranchPlan {
            name: "temporal".into(),
            layers: vec![conv(16, 3), Relu, conv(16, 3), Relu],
            cached: true,
        },
        BranchPlan {
            name: "hr".into(),
            layers: vec![conv(16, 3), Relu, conv(32, 3), Relu, conv(16, 3), Relu],
            cached: true,
        },
    ];
    let fusion = [conv(16, 3), Relu, conv(out_channels, 1)];
    build_multibranch(input, &branches, &fusion, seed)
}
