//! Procedural, temporally coherent frame sequences.
//!
//! A seeded value-noise texture is viewed through a translating camera, with
//! optional moving disc sprites on top. Each frame carries G-buffer-like input
//! channels (`r, g, b, depth, normal_x, normal_y`, then zero padding) and the
//! exact screen-space motion field of its content.
//!
//! Velocities are in pixels per frame at the configured resolution. The scene
//! itself lives in world units, `pixel_scale` world units per pixel, so the
//! same scene can be rendered at several resolutions with
//! [`SceneConfig::rescaled`].

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::smape;
use crate::tensor::{Shape, Tensor};

/// Channels with content; anything beyond is zero padding.
pub const SCENE_CHANNELS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameInput {
    pub index: usize,
    pub input: Tensor,
    /// Two channels: content displacement `(dx, dy)` from the previous frame.
    pub motion: Option<Tensor>,
}

impl FrameInput {
    pub fn new(index: usize, input: Tensor, motion: Option<Tensor>) -> Self {
        Self {
            index,
            input,
            motion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanSegment {
    pub frames: usize,
    /// Camera velocity in pixels per frame.
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Horizontal camera speed, used when `pan_schedule` is empty.
    pub pan_speed: f64,
    /// Piecewise-constant camera velocities; the last segment extends to the end.
    pub pan_schedule: Vec<PanSegment>,
    pub sprite_count: usize,
    pub texture_octaves: u32,
    /// World units per pixel. One noise lattice cell is one world unit.
    pub pixel_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            channels: SCENE_CHANNELS,
            height: 64,
            width: 64,
            pan_speed: 1.0,
            pan_schedule: Vec::new(),
            sprite_count: 0,
            texture_octaves: 3,
            pixel_scale: 1.0 / 16.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScene(m.into()));
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("channels and resolution must be positive");
        }
        if !(self.pixel_scale.is_finite() && self.pixel_scale > 0.0) {
            return bad("pixel_scale must be positive");
        }
        if !(self.pan_speed.is_finite() && self.pan_speed >= 0.0) {
            return bad("pan_speed must be non-negative");
        }
        for seg in &self.pan_schedule {
            if seg.velocity.iter().any(|v| !v.is_finite()) {
                return bad("pan velocities must be finite");
            }
        }
        if self.texture_octaves == 0 {
            return bad("texture_octaves must be at least 1");
        }
        Ok(())
    }

    /// The same scene seen at `1/factor` of the resolution.
    pub fn rescaled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor)
        {
            return Err(Error::Indivisible {
                height: self.height,
                width: self.width,
                divisor: factor.max(1),
            });
        }
        let f = factor as f64;
        Ok(Self {
            height: self.height / factor,
            width: self.width / factor,
            pan_speed: self.pan_speed / f,
            pan_schedule: self
                .pan_schedule
                .iter()
                .map(|s| PanSegment {
                    frames: s.frames,
                    velocity: [s.velocity[0] / f, s.velocity[1] / f],
                })
                .collect(),
            pixel_scale: self.pixel_scale * f,
            ..self.clone()
        })
    }

    /// Camera velocity during `frame`, pixels per frame.
    pub fn velocity_at(&self, frame: usize) -> [f64; 2] {
        if self.pan_schedule.is_empty() {
            return [self.pan_speed, 0.0];
        }
        let mut start = 0;
        for seg in &self.pan_schedule {
            if frame < start + seg.frames {
                return seg.velocity;
            }
            start += seg.frames;
        }
        self.pan_schedule.last().expect("non-empty").velocity
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub config: SceneConfig,
    pub frames: Vec<FrameInput>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn inputs(&self) -> Vec<Tensor> {
        self.frames.iter().map(|f| f.input.clone()).collect()
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix(seed ^ mix((ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ mix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinearly interpolated lattice noise in `[0, 1)`.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (smoothstep(x - fx), smoothstep(y - fy));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

fn fbm(seed: u64, x: f64, y: f64, octaves: u32) -> f64 {
    let (mut sum, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, 1.0);
    for o in 0..octaves {
        sum += amp * value_noise(seed.wrapping_add(o as u64 * 7919), x * freq, y * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

#[derive(Debug, Clone, Copy)]
struct Sprite {
    /// World position at frame 0.
    center: [f64; 2],
    radius: f64,
    /// World units per frame.
    velocity: [f64; 2],
    color: [f64; 3],
}

fn sprites(config: &SceneConfig) -> Vec<Sprite> {
    // Sprites are defined in world units so every resolution sees the same ones.
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed ^ 0x5eed_5eed));
    let world_w = config.width as f64 * config.pixel_scale;
    let world_h = config.height as f64 * config.pixel_scale;
    (0..config.sprite_count)
        .map(|_| Sprite {
            center: [
                rng.random_range(0.0..world_w),
                rng.random_range(0.0..world_h),
            ],
            radius: rng.random_range(0.08..0.2) * world_w.min(world_h),
            velocity: [
                rng.random_range(-0.02..0.02) * world_w,
                rng.random_range(-0.02..0.02) * world_h,
            ],
            color: [rng.random(), rng.random(), rng.random()],
        })
        .collect()
}

/// Camera offset in world units at `frame`.
fn camera(config: &SceneConfig, frame: usize) -> [f64; 2] {
    let mut pos = [0.0, 0.0];
    for t in 1..=frame {
        let v = config.velocity_at(t);
        pos[0] += v[0] * config.pixel_scale;
        pos[1] += v[1] * config.pixel_scale;
    }
    pos
}

fn render_frame(config: &SceneConfig, sprites: &[Sprite], index: usize) -> Result<FrameInput> {
    let (h, w) = (config.height, config.width);
    let ps = config.pixel_scale;
    let cam = camera(config, index);
    let vel = config.velocity_at(index);
    let depth_seed = config.seed.wrapping_add(101);
    let depth = |x: f64, y: f64| value_noise(depth_seed, x * 0.5, y * 0.5);

    let mut values = vec![0.0f32; SCENE_CHANNELS * h * w];
    let mut motion = vec![0.0f32; 2 * h * w];
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            let wx = (x as f64 + 0.5) * ps + cam[0];
            let wy = (y as f64 + 0.5) * ps + cam[1];
            let mut px = [0.0f64; SCENE_CHANNELS];
            for (c, v) in px.iter_mut().take(3).enumerate() {
                *v = fbm(
                    config.seed.wrapping_add(c as u64 * 31),
                    wx,
                    wy,
                    config.texture_octaves,
                );
            }
            px[3] = depth(wx, wy);
            px[4] = (depth(wx - ps, wy) - depth(wx + ps, wy)) / (2.0 * ps) * 0.5;
            px[5] = (depth(wx, wy - ps) - depth(wx, wy + ps)) / (2.0 * ps) * 0.5;
            let mut mv = [-vel[0], -vel[1]];

            for s in sprites {
                let sx = s.center[0] + index as f64 * s.velocity[0];
                let sy = s.center[1] + index as f64 * s.velocity[1];
                if (wx - sx).powi(2) + (wy - sy).powi(2) <= s.radius * s.radius {
                    px[..3].copy_from_slice(&s.color);
                    px[3] = 0.05;
                    px[4] = 0.0;
                    px[5] = 0.0;
                    mv = [s.velocity[0] / ps - vel[0], s.velocity[1] / ps - vel[1]];
                }
            }
            let i = y * w + x;
            for (c, v) in px.iter().enumerate() {
                values[c * plane + i] = *v as f32;
            }
            motion[i] = mv[0] as f32;
            motion[plane + i] = mv[1] as f32;
        }
    }

    values.resize(config.channels.max(SCENE_CHANNELS) * plane, 0.0);
    values.truncate(config.channels * plane);
    Ok(FrameInput {
        index,
        input: Tensor::new(config.shape(), values)?,
        motion: Some(Tensor::from_vec(2, h, w, motion)?),
    })
}

/// Renders `frame_count` frames. Fully determined by `config`.
pub fn generate(config: &SceneConfig, frame_count: usize) -> Result<FrameSequence> {
    config.validate()?;
    if frame_count == 0 {
        return Err(Error::EmptySequence);
    }
    let sprites = sprites(config);
    let frames = (0..frame_count)
        .map(|t| render_frame(config, &sprites, t))
        .collect::<Result<_>>()?;
    Ok(FrameSequence {
        config: config.clone(),
        frames,
    })
}

/// SMAPE between each frame and its predecessor, for frames `1..len`.
pub fn inter_frame_delta_stats(seq: &FrameSequence) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::TooFewFrames {
            needed: 2,
            got: seq.len(),
        });
    }
    seq.frames
        .windows(2)
        .map(|w| smape(&w[1].input, &w[0].input))
        .collect()
}

const SEQUENCE_MAGIC: &[u8; 4] = b"FSEQ";
const SEQUENCE_VERSION: u32 = 1;

/// Writes the binary fixture format: magic `FSEQ`, then little-endian
/// `u32 version, channels, height, width, frame_count`, `u64 seed`, then for
/// each frame its input tensor followed by its two motion channels, all `f32`.
pub fn write_sequence<W: Write>(seq: &FrameSequence, mut out: W) -> Result<()> {
    let first = seq.frames.first().ok_or(Error::EmptySequence)?;
    let shape = first.input.shape();
    out.write_all(SEQUENCE_MAGIC)?;
    for v in [
        SEQUENCE_VERSION,
        shape.channels as u32,
        shape.height as u32,
        shape.width as u32,
        seq.len() as u32,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&seq.config.seed.to_le_bytes())?;
    let zero_motion = vec![0.0f32; 2 * shape.plane()];
    for f in &seq.frames {
        if f.input.shape() != shape {
            return Err(Error::ShapeMismatch {
                left: shape,
                right: f.input.shape(),
            });
        }
        let motion = f.motion.as_ref().map_or(&zero_motion[..], |m| m.data());
        for v in f.input.data().iter().chain(motion) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFile {
    pub seed: u64,
    pub frames: Vec<FrameInput>,
}

pub fn read_sequence<R: Read>(mut input: R) -> Result<SequenceFile> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != SEQUENCE_MAGIC {
        return Err(Error::SequenceFormat("bad magic".into()));
    }
    let mut u32s = [0u32; 5];
    for v in &mut u32s {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let [version, channels, height, width, count] = u32s.map(|v| v as usize);
    if version != SEQUENCE_VERSION as usize {
        return Err(Error::SequenceFormat(format!(
            "unsupported version {version}"
        )));
    }
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    let seed = u64::from_le_bytes(b);

    let mut read_f32s = |n: usize| -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        input.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };
    let shape = Shape::new(channels, height, width);
    let frames = (0..count)
        .map(|index| {
            let data = read_f32s(shape.len())?;
            let motion = read_f32s(2 * shape.plane())?;
            Ok(FrameInput {
                index,
                input: Tensor::new(shape, data)?,
                motion: Some(Tensor::from_vec(2, height, width, motion)?),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SequenceFile { seed, frames })
}
