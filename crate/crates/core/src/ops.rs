//! Convolutional primitives every network block is assembled from.
//!
//! All operations are single-threaded and accumulate in a fixed order, so
//! identical inputs always give bit-identical outputs.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Guard term in the SMAPE denominator.
pub const SMAPE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out_channels][in_channels][kernel_h][kernel_w]`, flattened.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let p = Self {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            weights,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    /// Square kernel with "same" padding for odd sizes and He-normal weights
    /// (variance `2 / fan_in`), zero bias.
    pub fn he_init<R: rand::Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
            .map_err(|e| Error::InvalidConv(e.to_string()))?;
        let weights = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| normal.sample(rng) as f32)
            .collect();
        Self::new(
            in_channels,
            out_channels,
            kernel,
            kernel,
            1,
            kernel / 2,
            weights,
            vec![0.0; out_channels],
        )
    }

    /// 1x1 convolution that copies input channel `c` to output channel `c`.
    pub fn identity(channels: usize) -> Result<Self> {
        let mut weights = vec![0.0; channels * channels];
        for c in 0..channels {
            weights[c * channels + c] = 1.0;
        }
        Self::new(channels, channels, 1, 1, 1, 0, weights, vec![0.0; channels])
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel_h == 0
            || self.kernel_w == 0
            || self.stride == 0
        {
            return Err(Error::InvalidConv(format!(
                "channels, kernel and stride must be positive ({}->{}, {}x{}, stride {})",
                self.in_channels, self.out_channels, self.kernel_h, self.kernel_w, self.stride
            )));
        }
        let expected = self.out_channels * self.in_channels * self.kernel_h * self.kernel_w;
        if self.weights.len() != expected {
            return Err(Error::InvalidConv(format!(
                "weights length {} != {}",
                self.weights.len(),
                expected
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::InvalidConv(format!(
                "bias length {} != {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((oc * self.in_channels + ic) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    /// Output shape for an input of `input` shape.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.in_channels,
                actual: input.channels,
            });
        }
        let span = |extent: usize, kernel: usize| {
            (extent + 2 * self.padding)
                .checked_sub(kernel)
                .map(|v| v / self.stride + 1)
        };
        match (
            span(input.height, self.kernel_h),
            span(input.width, self.kernel_w),
        ) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Ok(Shape::new(self.out_channels, h, w)),
            _ => Err(Error::EmptyOutput {
                input,
                kernel_h: self.kernel_h,
                kernel_w: self.kernel_w,
                stride: self.stride,
                padding: self.padding,
            }),
        }
    }
}

/// Cross-correlation with zero padding.
///
/// Each output element is accumulated as `bias`, then every in-bounds tap in
/// `(in_channel, ky, kx)` order.
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let out_shape = p.output_shape(input.shape())?;
    let (in_h, in_w) = (input.height() as isize, input.width() as isize);
    let (out_h, out_w) = (out_shape.height, out_shape.width);
    let stride = p.stride as isize;
    let pad = p.padding as isize;
    let src = input.data();
    let in_plane = input.shape().plane();
    let mut out = vec![0.0f32; out_shape.len()];

    for (oc, plane) in out.chunks_exact_mut(out_h * out_w).enumerate() {
        plane.fill(p.bias[oc]);
        for ic in 0..p.in_channels {
            let channel = &src[ic * in_plane..(ic + 1) * in_plane];
            for ky in 0..p.kernel_h {
                for kx in 0..p.kernel_w {
                    let w = p.weight(oc, ic, ky, kx);
                    let dx = kx as isize - pad;
                    // ox range with 0 <= ox * stride + dx < in_w
                    let ox_lo = if dx < 0 {
                        (-dx + stride - 1) / stride
                    } else {
                        0
                    };
                    let ox_hi = if in_w - 1 - dx < 0 {
                        0
                    } else {
                        ((in_w - 1 - dx) / stride + 1).min(out_w as isize)
                    };
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..out_h {
                        let iy = oy as isize * stride + ky as isize - pad;
                        if iy < 0 || iy >= in_h {
                            continue;
                        }
                        let row = &channel[(iy * in_w) as usize..((iy + 1) * in_w) as usize];
                        let dst = &mut plane[oy * out_w..(oy + 1) * out_w];
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * stride + dx) as usize;
                            dst[ox as usize] += w * row[ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Non-overlapping 2x2 max pooling.
pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) {
        return Err(Error::OddDimension(s));
    }
    let out_shape = Shape::new(s.channels, s.height / 2, s.width / 2);
    Tensor::from_fn(out_shape, |c, y, x| {
        let (y0, x0) = (2 * y, 2 * x);
        input
            .get(c, y0, x0)
            .max(input.get(c, y0, x0 + 1))
            .max(input.get(c, y0 + 1, x0))
            .max(input.get(c, y0 + 1, x0 + 1))
    })
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest2(input: &Tensor) -> Tensor {
    let s = input.shape();
    let out_shape = Shape::new(s.channels, s.height * 2, s.width * 2);
    Tensor::from_fn(out_shape, |c, y, x| input.get(c, y / 2, x / 2))
        .expect("upsampled shape is non-empty")
}

/// Stacks tensors along the channel axis, preserving input order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs.first().ok_or(Error::EmptyConcat)?.shape();
    let mut channels = 0;
    for t in inputs {
        if !t.shape().same_spatial(&first) {
            return Err(Error::SpatialMismatch {
                left: first,
                right: t.shape(),
            });
        }
        channels += t.channels();
    }
    let mut data = Vec::with_capacity(channels * first.plane());
    for t in inputs {
        data.extend_from_slice(t.data());
    }
    Tensor::new(Shape::new(channels, first.height, first.width), data)
}

/// Arithmetic cost of one convolution: two operations per multiply-accumulate,
/// bias additions excluded.
pub fn conv_flops(p: &ConvParams, out_h: usize, out_w: usize) -> u64 {
    2 * (p.kernel_h * p.kernel_w * p.in_channels * p.out_channels) as u64 * (out_h * out_w) as u64
}

/// Symmetric mean absolute percentage error, `mean(|a-b| / (|a| + |b| + eps))`.
pub fn smape(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let (x, y) = (x as f64, y as f64);
            (x - y).abs() / (x.abs() + y.abs() + SMAPE_EPSILON)
        })
        .sum();
    Ok(total / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_, _, _| rng.random_range(-1.0f32..1.0)).unwrap()
    }

    fn random_conv(
        ic: usize,
        oc: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> ConvParams {
        let weights = (0..oc * ic * kh * kw)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        let bias = (0..oc).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        ConvParams::new(ic, oc, kh, kw, stride, padding, weights, bias).unwrap()
    }

    /// Six nested loops over every tap, padding read as zero; counts one
    /// multiply and one add per tap.
    fn naive_conv(input: &Tensor, p: &ConvParams) -> (Vec<f32>, usize, usize, u64) {
        let (h, w) = (input.height() as isize, input.width() as isize);
        let oh = (input.height() + 2 * p.padding - p.kernel_h) / p.stride + 1;
        let ow = (input.width() + 2 * p.padding - p.kernel_w) / p.stride + 1;
        let mut out = Vec::new();
        let mut ops = 0u64;
        for oc in 0..p.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = p.bias[oc];
                    for ic in 0..p.in_channels {
                        for ky in 0..p.kernel_h {
                            for kx in 0..p.kernel_w {
                                let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                let v = if iy >= 0 && iy < h && ix >= 0 && ix < w {
                                    input.get(ic, iy as usize, ix as usize)
                                } else {
                                    0.0
                                };
                                acc += p.weight(oc, ic, ky, kx) * v;
                                ops += 2;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        (out, oh, ow, ops)
    }

    fn assert_rel_close(got: &[f32], want: &[f32], tol: f32) {
        assert_eq!(got.len(), want.len());
        for (i, (g, w)) in got.iter().zip(want).enumerate() {
            let denom = w.abs().max(1e-6);
            assert!((g - w).abs() / denom <= tol, "element {i}: {g} vs {w}");
        }
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let input = Tensor::full(Shape::new(1, 3, 3), 1.0).unwrap();
        let p = ConvParams::new(1, 1, 1, 1, 1, 0, vec![1.0], vec![0.0]).unwrap();
        assert_eq!(conv2d(&input, &p).unwrap(), input);
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let input = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = ConvParams::new(1, 1, 2, 2, 1, 0, vec![1.0; 4], vec![0.0]).unwrap();
        let out = conv2d(&input, &p).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 1));
        assert_eq!(out.data(), &[10.0]);
    }

    #[test]
    fn conv_matches_naive_loops_4_to_8() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random_tensor(Shape::new(4, 16, 16), &mut rng);
        let p = random_conv(4, 8, 3, 3, 1, 1, &mut rng);
        let out = conv2d(&input, &p).unwrap();
        let (want, oh, ow, _) = naive_conv(&input, &p);
        assert_eq!(out.shape(), Shape::new(8, oh, ow));
        assert_rel_close(out.data(), &want, 1e-6);
    }

    #[test]
    fn conv_matches_naive_loops_strided_and_padded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(kh, kw, stride, padding, h, w) in &[
            (3, 3, 2, 1, 9, 10),
            (1, 1, 1, 0, 5, 7),
            (5, 3, 1, 2, 6, 6),
            (2, 2, 2, 0, 8, 8),
            (3, 3, 3, 3, 4, 5),
            (4, 4, 1, 0, 4, 4),
        ] {
            let input = random_tensor(Shape::new(3, h, w), &mut rng);
            let p = random_conv(3, 2, kh, kw, stride, padding, &mut rng);
            let out = conv2d(&input, &p).unwrap();
            let (want, oh, ow, ops) = naive_conv(&input, &p);
            assert_eq!(out.shape(), Shape::new(2, oh, ow));
            assert_rel_close(out.data(), &want, 1e-6);
            assert_eq!(conv_flops(&p, oh, ow), ops);
        }
    }

    #[test]
    fn conv_errors() {
        let input = Tensor::zeros(Shape::new(2, 3, 3)).unwrap();
        let p = ConvParams::new(1, 1, 1, 1, 1, 0, vec![1.0], vec![0.0]).unwrap();
        assert!(matches!(
            conv2d(&input, &p),
            Err(Error::ChannelMismatch {
                expected: 1,
                actual: 2
            })
        ));
        let big = ConvParams::new(2, 1, 5, 5, 1, 0, vec![0.0; 50], vec![0.0]).unwrap();
        assert!(matches!(
            conv2d(&input, &big),
            Err(Error::EmptyOutput { .. })
        ));
        assert!(ConvParams::new(1, 1, 3, 3, 1, 1, vec![0.0; 8], vec![0.0]).is_err());
        assert!(ConvParams::new(1, 2, 1, 1, 1, 0, vec![0.0; 2], vec![0.0]).is_err());
    }

    #[test]
    fn conv_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(Shape::new(4, 12, 12), &mut rng);
        let p = random_conv(4, 6, 3, 3, 1, 1, &mut rng);
        let a = conv2d(&input, &p).unwrap();
        let b = conv2d(&input, &p).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn relu_examples() {
        let t = Tensor::from_vec(1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::from_vec(1, 1, 3, vec![0.5, 0.0, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_tensor(Shape::new(3, 5, 5), &mut rng);
        let out = relu(&r);
        for (o, i) in out.data().iter().zip(r.data()) {
            assert_eq!(*o, if *i > 0.0 { *i } else { 0.0 });
        }
    }

    #[test]
    fn maxpool_examples() {
        let t = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2(&t).unwrap().data(), &[4.0]);

        let c = Tensor::full(Shape::new(2, 4, 6), 1.5).unwrap();
        assert_eq!(
            maxpool2(&c).unwrap(),
            Tensor::full(Shape::new(2, 2, 3), 1.5).unwrap()
        );

        let odd = Tensor::zeros(Shape::new(1, 3, 4)).unwrap();
        assert!(matches!(maxpool2(&odd), Err(Error::OddDimension(_))));
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tensor(Shape::new(3, 8, 8), &mut rng);
        let out = maxpool2(&t).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(t.get(c, 2 * y + dy, 2 * x + dx));
                        }
                    }
                    assert_eq!(out.get(c, y, x), m);
                }
            }
        }
    }

    #[test]
    fn upsample_examples() {
        let t = Tensor::from_vec(1, 1, 1, vec![5.0]).unwrap();
        assert_eq!(
            upsample_nearest2(&t),
            Tensor::full(Shape::new(1, 2, 2), 5.0).unwrap()
        );

        let c = Tensor::full(Shape::new(2, 4, 4), -0.25).unwrap();
        assert_eq!(upsample_nearest2(&maxpool2(&c).unwrap()), c);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_tensor(Shape::new(2, 3, 5), &mut rng);
        let up = upsample_nearest2(&r);
        assert_eq!(up.shape(), Shape::new(2, 6, 10));
        for (i, v) in up.data().iter().enumerate() {
            let (c, rem) = (i / 60, i % 60);
            let (y, x) = (rem / 10, rem % 10);
            assert_eq!(*v, r.data()[c * 15 + (y / 2) * 5 + x / 2]);
        }
    }

    #[test]
    fn concat_examples() {
        let a = Tensor::full(Shape::new(2, 4, 4), 1.0).unwrap();
        let b = Tensor::full(Shape::new(3, 4, 4), 2.0).unwrap();
        let ab = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(ab.shape(), Shape::new(5, 4, 4));
        assert_eq!(ab.slice_channels(0..2).unwrap(), a);
        assert_eq!(ab.slice_channels(2..5).unwrap(), b);

        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        assert!(matches!(concat_channels(&[]), Err(Error::EmptyConcat)));
        let c = Tensor::zeros(Shape::new(1, 4, 5)).unwrap();
        assert!(matches!(
            concat_channels(&[&a, &c]),
            Err(Error::SpatialMismatch { .. })
        ));
    }

    #[test]
    fn flops_formula() {
        let p = ConvParams::new(2, 4, 3, 3, 1, 1, vec![0.0; 72], vec![0.0; 4]).unwrap();
        assert_eq!(conv_flops(&p, 8, 8), 9216);
        let q = ConvParams::new(1, 1, 1, 1, 1, 0, vec![0.0], vec![0.0]).unwrap();
        assert_eq!(conv_flops(&q, 1, 1), 2);
    }

    #[test]
    fn smape_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_tensor(Shape::new(2, 6, 6), &mut rng);
        assert_eq!(smape(&a, &a).unwrap(), 0.0);

        let one = Tensor::from_vec(1, 1, 1, vec![1.0]).unwrap();
        let neg = Tensor::from_vec(1, 1, 1, vec![-1.0]).unwrap();
        let s = smape(&one, &neg).unwrap();
        assert!((s - 2.0 / (2.0 + SMAPE_EPSILON)).abs() < 1e-15);

        let b = random_tensor(Shape::new(2, 6, 6), &mut rng);
        let mut want = 0.0f64;
        for (x, y) in a.data().iter().zip(b.data()) {
            let (x, y) = (*x as f64, *y as f64);
            want += (x - y).abs() / (x.abs() + y.abs() + 1e-6);
        }
        want /= a.len() as f64;
        assert!((smape(&a, &b).unwrap() - want).abs() < 1e-9);

        let c = Tensor::zeros(Shape::new(1, 6, 6)).unwrap();
        assert!(smape(&a, &c).is_err());
    }

    proptest! {
        #[test]
        fn smape_symmetric_and_bounded(
            xs in proptest::collection::vec(-10.0f32..10.0, 1..64),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = xs.len();
            let a = Tensor::from_vec(1, 1, n, xs).unwrap();
            let b = Tensor::from_fn(a.shape(), |_, _, _| rng.random_range(-10.0f32..10.0)).unwrap();
            let ab = smape(&a, &b).unwrap();
            prop_assert_eq!(ab, smape(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(smape(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn concat_then_slice_is_identity(c1 in 1usize..4, c2 in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_tensor(Shape::new(c1, h, w), &mut rng);
            let b = random_tensor(Shape::new(c2, h, w), &mut rng);
            let ab = concat_channels(&[&a, &b]).unwrap();
            prop_assert_eq!(ab.slice_channels(0..c1).unwrap(), a);
            prop_assert_eq!(ab.slice_channels(c1..c1 + c2).unwrap(), b);
        }
    }
}
