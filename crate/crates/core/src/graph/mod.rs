//! Encoder-decoder networks as explicit DAGs of convolutional blocks.
//!
//! A [`NetworkSpec`] owns its blocks in topological order together with the
//! named edges that feed each block's input concatenation. Its [`CacheConfig`]
//! splits the graph into *live* blocks, which run on every frame, and cached
//! edges, whose producer-side tensors are stored on refresh frames and
//! substituted on the frames in between.

mod build;
mod exec;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{conv_flops, ConvParams};
use crate::tensor::Shape;

pub use build::{
    build_multibranch, build_multibranch_preset, build_unet, build_unetpp, BranchPlan,
    BuildOptions, LayerPlan,
};
pub use exec::{feature_delta_profile, ForwardRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Unet,
    Unetpp,
    Branch,
    Fusion,
}

/// Position of a block in its architecture.
///
/// U-Net blocks use `index` 0 for the encoder and 1 for the decoder at a
/// given depth. U-Net++ blocks are `X^{depth,index}` of the nested grid.
/// Branches are numbered by `index` at depth 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId {
    pub kind: BlockKind,
    pub depth: u32,
    pub index: u32,
}

impl BlockId {
    pub const fn new(kind: BlockKind, depth: u32, index: u32) -> Self {
        Self { kind, depth, index }
    }

    pub const fn encoder(depth: u32) -> Self {
        Self::new(BlockKind::Unet, depth, 0)
    }

    pub const fn decoder(depth: u32) -> Self {
        Self::new(BlockKind::Unet, depth, 1)
    }

    pub const fn nested(depth: u32, index: u32) -> Self {
        Self::new(BlockKind::Unetpp, depth, index)
    }

    pub const fn branch(index: u32) -> Self {
        Self::new(BlockKind::Branch, 0, index)
    }

    pub const fn fusion() -> Self {
        Self::new(BlockKind::Fusion, 0, 0)
    }

    /// Encoder depth for blocks on the downsampling path.
    pub fn encoder_depth(&self) -> Option<usize> {
        match self.kind {
            BlockKind::Unet | BlockKind::Unetpp if self.index == 0 => Some(self.depth as usize),
            _ => None,
        }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            BlockKind::Unet if self.index == 0 => write!(f, "enc{}", self.depth),
            BlockKind::Unet => write!(f, "dec{}", self.depth),
            BlockKind::Unetpp => write!(f, "X{},{}", self.depth, self.index),
            BlockKind::Branch => write!(f, "branch{}", self.index),
            BlockKind::Fusion => write!(f, "fusion"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Layer {
    Conv(ConvParams),
    Relu,
    Maxpool2,
    Upsample2,
}

impl Layer {
    fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Conv(p) => p.output_shape(input),
            Layer::Relu => Ok(input),
            Layer::Maxpool2 => {
                if !input.height.is_multiple_of(2) || !input.width.is_multiple_of(2) {
                    Err(Error::OddDimension(input))
                } else {
                    Ok(Shape::new(
                        input.channels,
                        input.height / 2,
                        input.width / 2,
                    ))
                }
            }
            Layer::Upsample2 => Ok(Shape::new(
                input.channels,
                input.height * 2,
                input.width * 2,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub name: String,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Input,
    Block(BlockId),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Input => write!(f, "input"),
            Source::Block(id) => id.fmt(f),
        }
    }
}

/// Resampling applied on the consumer side of an edge, before concatenation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    #[default]
    None,
    Down2,
    Up2,
}

impl Resample {
    fn apply_shape(self, s: Shape) -> Result<Shape> {
        match self {
            Resample::None => Ok(s),
            Resample::Down2 => Layer::Maxpool2.output_shape(s),
            Resample::Up2 => Layer::Upsample2.output_shape(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub name: String,
    pub from: Source,
    pub to: BlockId,
    pub slot: usize,
    #[serde(default)]
    pub resample: Resample,
}

impl Edge {
    pub fn new(from: Source, to: BlockId, slot: usize, resample: Resample) -> Self {
        Self {
            name: format!("{from}->{to}"),
            from,
            to,
            slot,
            resample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CacheLabel {
    UnetLevel(usize),
    UnetppConfigA,
    UnetppConfigB,
    MultiBranch(BTreeSet<String>),
    Custom,
}

impl fmt::Display for CacheLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheLabel::UnetLevel(k) => write!(f, "Level {k}"),
            CacheLabel::UnetppConfigA => write!(f, "U-Net++ A"),
            CacheLabel::UnetppConfigB => write!(f, "U-Net++ B"),
            CacheLabel::MultiBranch(names) => {
                let names: Vec<_> = names.iter().map(String::as_str).collect();
                write!(f, "branches[{}]", names.join(","))
            }
            CacheLabel::Custom => write!(f, "custom"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub label: CacheLabel,
    pub cached_edges: BTreeSet<String>,
    pub live_blocks: BTreeSet<BlockId>,
}

/// Which family of builder produced a spec. Needed to resolve cache labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Unet { depth: usize, base_channels: usize },
    Unetpp { depth: usize, base_channels: usize },
    MultiBranch { branches: Vec<String> },
    Custom,
}

/// Serialized form of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub version: u32,
    pub architecture: Architecture,
    pub input: Shape,
    pub seed: u64,
    pub blocks: Vec<Block>,
    pub edges: Vec<Edge>,
    pub output: BlockId,
    pub cache: CacheConfig,
}

pub const NETWORK_DOC_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct NetworkSpec {
    architecture: Architecture,
    input: Shape,
    seed: u64,
    /// Topologically ordered.
    blocks: Vec<Block>,
    edges: Vec<Edge>,
    output: BlockId,
    cache: CacheConfig,
    position: HashMap<BlockId, usize>,
    /// Edge indices per block, sorted by slot.
    incoming: HashMap<BlockId, Vec<usize>>,
    shapes: HashMap<BlockId, Shape>,
    flops: HashMap<BlockId, u64>,
}

impl NetworkSpec {
    /// Validates and assembles a network. Blocks may be given in any order;
    /// the cache configuration starts empty (every block live).
    pub fn assemble(
        architecture: Architecture,
        input: Shape,
        seed: u64,
        blocks: Vec<Block>,
        edges: Vec<Edge>,
        output: BlockId,
    ) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::ZeroDimension(input));
        }
        let mut ids = BTreeSet::new();
        for b in &blocks {
            if !ids.insert(b.id) {
                return Err(Error::InvalidNetwork(format!("duplicate block {}", b.id)));
            }
            for layer in &b.layers {
                if let Layer::Conv(p) = layer {
                    p.validate()?;
                }
            }
        }
        if !ids.contains(&output) {
            return Err(Error::InvalidNetwork(format!(
                "output block {output} not defined"
            )));
        }

        let mut names = BTreeSet::new();
        let mut incoming: HashMap<BlockId, Vec<usize>> = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            if !names.insert(e.name.as_str()) {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate edge name `{}`",
                    e.name
                )));
            }
            if !ids.contains(&e.to) {
                return Err(Error::InvalidNetwork(format!(
                    "edge `{}` feeds unknown block",
                    e.name
                )));
            }
            if let Source::Block(from) = e.from {
                if !ids.contains(&from) {
                    return Err(Error::InvalidNetwork(format!(
                        "edge `{}` comes from unknown block",
                        e.name
                    )));
                }
            }
            incoming.entry(e.to).or_default().push(i);
        }
        for b in &blocks {
            let slots = incoming.entry(b.id).or_default();
            slots.sort_by_key(|&i| edges[i].slot);
            if slots.is_empty() {
                return Err(Error::InvalidNetwork(format!(
                    "block {} has no inputs",
                    b.id
                )));
            }
            for (expected, &i) in slots.iter().enumerate() {
                if edges[i].slot != expected {
                    return Err(Error::InvalidNetwork(format!(
                        "block {} slot {} is not filled exactly once",
                        b.id, expected
                    )));
                }
            }
        }

        let blocks = topo_sort(blocks, &edges, &incoming)?;
        let position = blocks.iter().enumerate().map(|(i, b)| (b.id, i)).collect();

        let mut shapes: HashMap<BlockId, Shape> = HashMap::new();
        let mut flops = HashMap::new();
        for b in &blocks {
            let mut in_shape: Option<Shape> = None;
            for &ei in &incoming[&b.id] {
                let e = &edges[ei];
                let src = match e.from {
                    Source::Input => input,
                    Source::Block(id) => shapes[&id],
                };
                let s = e.resample.apply_shape(src)?;
                in_shape = Some(match in_shape {
                    None => s,
                    Some(acc) if acc.same_spatial(&s) => {
                        Shape::new(acc.channels + s.channels, acc.height, acc.width)
                    }
                    Some(acc) => {
                        return Err(Error::SpatialMismatch {
                            left: acc,
                            right: s,
                        })
                    }
                });
            }
            let mut s = in_shape.expect("every block has at least one input");
            let mut block_flops = 0;
            for layer in &b.layers {
                let next = layer.output_shape(s)?;
                if let Layer::Conv(p) = layer {
                    block_flops += conv_flops(p, next.height, next.width);
                }
                s = next;
            }
            shapes.insert(b.id, s);
            flops.insert(b.id, block_flops);
        }

        let cache = CacheConfig {
            label: CacheLabel::Custom,
            cached_edges: BTreeSet::new(),
            live_blocks: ids,
        };
        Ok(Self {
            architecture,
            input,
            seed,
            blocks,
            edges,
            output,
            cache,
            position,
            incoming,
            shapes,
            flops,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes[&self.output]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.position.get(&id).map(|&i| &self.blocks[i])
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, name: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.name == name)
    }

    pub fn output(&self) -> BlockId {
        self.output
    }

    pub fn cache_config(&self) -> &CacheConfig {
        &self.cache
    }

    /// Output shape of a block.
    pub fn block_shape(&self, id: BlockId) -> Option<Shape> {
        self.shapes.get(&id).copied()
    }

    /// Static convolution FLOPs of one block.
    pub fn block_flops(&self, id: BlockId) -> u64 {
        self.flops.get(&id).copied().unwrap_or(0)
    }

    pub fn full_flops(&self) -> u64 {
        self.blocks.iter().map(|b| self.block_flops(b.id)).sum()
    }

    /// FLOPs of one cached pass under the active configuration.
    pub fn cached_flops(&self) -> u64 {
        self.cache
            .live_blocks
            .iter()
            .map(|&id| self.block_flops(id))
            .sum()
    }

    /// Blocks skipped on cached frames.
    pub fn skipped_blocks(&self) -> Vec<BlockId> {
        self.blocks
            .iter()
            .map(|b| b.id)
            .filter(|id| !self.cache.live_blocks.contains(id))
            .collect()
    }

    /// Shape of the producer-side tensor stored for a cached edge.
    pub fn edge_shape(&self, name: &str) -> Option<Shape> {
        match self.edge(name)?.from {
            Source::Input => Some(self.input),
            Source::Block(id) => self.block_shape(id),
        }
    }

    /// Encoder blocks by depth, used for per-level feature profiles.
    pub fn encoder_levels(&self) -> BTreeMap<usize, BlockId> {
        self.blocks
            .iter()
            .filter_map(|b| b.id.encoder_depth().map(|d| (d, b.id)))
            .collect()
    }

    pub(crate) fn incoming(&self, id: BlockId) -> impl Iterator<Item = &Edge> {
        self.incoming[&id].iter().map(|&i| &self.edges[i])
    }

    /// Live block set for a label, derived from the architecture.
    fn live_blocks_for(&self, label: &CacheLabel) -> Result<BTreeSet<BlockId>> {
        let mismatch = || {
            Error::InvalidCacheConfig(format!(
                "label {label} does not apply to {:?}",
                self.architecture
            ))
        };
        match (label, &self.architecture) {
            (CacheLabel::UnetLevel(k), Architecture::Unet { depth, .. }) => {
                if *k < 1 || *k >= *depth {
                    return Err(Error::InvalidCacheConfig(format!(
                        "level {k} outside 1..={} for depth {depth}",
                        depth - 1
                    )));
                }
                Ok((0..*k as u32)
                    .flat_map(|d| [BlockId::encoder(d), BlockId::decoder(d)])
                    .collect())
            }
            (CacheLabel::UnetppConfigB, Architecture::Unetpp { depth, .. }) => {
                Ok((0..=*depth as u32).map(|j| BlockId::nested(0, j)).collect())
            }
            (CacheLabel::UnetppConfigA, Architecture::Unetpp { depth, .. }) => {
                // Backbone column, the outer decoder diagonal and the final block.
                let n = *depth as u32;
                let mut live: BTreeSet<_> = (0..n).map(|i| BlockId::nested(i, 0)).collect();
                live.extend((0..n).map(|i| BlockId::nested(i, n - 1 - i)));
                live.insert(BlockId::nested(0, n));
                Ok(live)
            }
            (CacheLabel::MultiBranch(cached), Architecture::MultiBranch { branches }) => {
                for name in cached {
                    if !branches.contains(name) {
                        return Err(Error::InvalidCacheConfig(format!(
                            "unknown branch `{name}`"
                        )));
                    }
                }
                let mut live: BTreeSet<_> = branches
                    .iter()
                    .enumerate()
                    .filter(|(_, name)| !cached.contains(*name))
                    .map(|(i, _)| BlockId::branch(i as u32))
                    .collect();
                live.insert(BlockId::fusion());
                Ok(live)
            }
            (CacheLabel::Custom, _) => Err(Error::InvalidCacheConfig(
                "custom configurations need explicit edges; use with_custom_cache".into(),
            )),
            _ => Err(mismatch()),
        }
    }

    /// Resolves a named configuration. Cached edges are exactly the edges
    /// running from a skipped block into a live one.
    pub fn cache_config_for(&self, label: &CacheLabel) -> Result<CacheConfig> {
        let live_blocks = self.live_blocks_for(label)?;
        let cached_edges = self
            .edges
            .iter()
            .filter(|e| live_blocks.contains(&e.to))
            .filter(|e| matches!(e.from, Source::Block(id) if !live_blocks.contains(&id)))
            .map(|e| e.name.clone())
            .collect();
        let config = CacheConfig {
            label: label.clone(),
            cached_edges,
            live_blocks,
        };
        self.validate_cache(&config)?;
        Ok(config)
    }

    /// Static check that every live block can be evaluated on a cached frame.
    pub fn validate_cache(&self, config: &CacheConfig) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCacheConfig(msg));
        for id in &config.live_blocks {
            if !self.position.contains_key(id) {
                return bad(format!("live block {id} does not exist"));
            }
        }
        if !config.live_blocks.contains(&self.output) {
            return bad(format!("output block {} must be live", self.output));
        }
        for name in &config.cached_edges {
            let Some(edge) = self.edge(name) else {
                return bad(format!("cached edge `{name}` does not exist"));
            };
            match edge.from {
                Source::Input => return bad(format!("cached edge `{name}` starts at the input")),
                Source::Block(id) if config.live_blocks.contains(&id) => {
                    return bad(format!(
                        "cached edge `{name}` is produced by live block {id}"
                    ))
                }
                _ => {}
            }
            if !config.live_blocks.contains(&edge.to) {
                return bad(format!(
                    "cached edge `{name}` feeds skipped block {}",
                    edge.to
                ));
            }
        }
        for &id in &config.live_blocks {
            for e in self.incoming(id) {
                let ok = match e.from {
                    Source::Input => true,
                    Source::Block(src) => {
                        config.live_blocks.contains(&src) || config.cached_edges.contains(&e.name)
                    }
                };
                if !ok {
                    return bad(format!(
                        "slot {} of live block {id} (edge `{}`) is unsatisfiable",
                        e.slot, e.name
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn set_cache(&mut self, label: &CacheLabel) -> Result<()> {
        self.cache = self.cache_config_for(label)?;
        Ok(())
    }

    pub fn with_cache(mut self, label: &CacheLabel) -> Result<Self> {
        self.set_cache(label)?;
        Ok(self)
    }

    pub fn with_custom_cache(
        mut self,
        cached_edges: BTreeSet<String>,
        live_blocks: BTreeSet<BlockId>,
    ) -> Result<Self> {
        let config = CacheConfig {
            label: CacheLabel::Custom,
            cached_edges,
            live_blocks,
        };
        self.validate_cache(&config)?;
        self.cache = config;
        Ok(self)
    }

    pub fn to_doc(&self) -> NetworkDoc {
        NetworkDoc {
            version: NETWORK_DOC_VERSION,
            architecture: self.architecture.clone(),
            input: self.input,
            seed: self.seed,
            blocks: self.blocks.clone(),
            edges: self.edges.clone(),
            output: self.output,
            cache: self.cache.clone(),
        }
    }

    pub fn from_doc(doc: NetworkDoc) -> Result<Self> {
        if doc.version != NETWORK_DOC_VERSION {
            return Err(Error::InvalidNetwork(format!(
                "unsupported document version {}",
                doc.version
            )));
        }
        let mut spec = Self::assemble(
            doc.architecture,
            doc.input,
            doc.seed,
            doc.blocks,
            doc.edges,
            doc.output,
        )?;
        spec.validate_cache(&doc.cache)?;
        spec.cache = doc.cache;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("network documents always serialize")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: NetworkDoc =
            serde_json::from_str(json).map_err(|e| Error::InvalidNetwork(e.to_string()))?;
        Self::from_doc(doc)
    }
}

fn topo_sort(
    blocks: Vec<Block>,
    edges: &[Edge],
    incoming: &HashMap<BlockId, Vec<usize>>,
) -> Result<Vec<Block>> {
    let mut pending: Vec<Option<Block>> = blocks.into_iter().map(Some).collect();
    let mut done: BTreeSet<BlockId> = BTreeSet::new();
    let mut ordered = Vec::with_capacity(pending.len());
    while ordered.len() < pending.len() {
        let ready = pending.iter().position(|slot| {
            slot.as_ref().is_some_and(|b| {
                incoming[&b.id].iter().all(|&i| match edges[i].from {
                    Source::Input => true,
                    Source::Block(id) => done.contains(&id),
                })
            })
        });
        let Some(i) = ready else {
            return Err(Error::InvalidNetwork("graph contains a cycle".into()));
        };
        let block = pending[i].take().expect("ready slot is occupied");
        done.insert(block.id);
        ordered.push(block);
    }
    Ok(ordered)
}
