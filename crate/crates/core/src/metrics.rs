//! Full-reference quality metrics and sequence aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::smape;
use crate::tensor::Tensor;

pub const DEFAULT_PEAK: f64 = 1.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(peak^2 / mse)`; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// SSIM over 8x8 uniform windows at stride 4, averaged over windows and
/// channels, with `C1 = (0.01 peak)^2` and `C2 = (0.03 peak)^2`.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let s = a.shape();
    if s.height < SSIM_WINDOW || s.width < SSIM_WINDOW {
        return Err(Error::WindowTooLarge {
            shape: s,
            window: SSIM_WINDOW,
        });
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for c in 0..s.channels {
        let (pa, pb) = (a.channel(c), b.channel(c));
        for y0 in (0..=s.height - SSIM_WINDOW).step_by(SSIM_STRIDE) {
            for x0 in (0..=s.width - SSIM_WINDOW).step_by(SSIM_STRIDE) {
                let pixels = || {
                    (y0..y0 + SSIM_WINDOW)
                        .flat_map(move |y| (x0..x0 + SSIM_WINDOW).map(move |x| y * s.width + x))
                };
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in pixels() {
                    ma += pa[i] as f64;
                    mb += pb[i] as f64;
                }
                ma /= n;
                mb /= n;
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in pixels() {
                    let da = pa[i] as f64 - ma;
                    let db = pb[i] as f64 - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
                va /= n;
                vb /= n;
                cov /= n;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub smape: f64,
}

impl QualityReport {
    pub fn measure(output: &Tensor, reference: &Tensor, peak: f64) -> Result<Self> {
        let mse = mse(output, reference)?;
        Ok(Self {
            mse,
            psnr: psnr_from_mse(mse, peak),
            ssim: ssim(output, reference, peak)?,
            smape: smape(output, reference)?,
        })
    }
}

/// One frame of a run, as consumed by [`aggregate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub refreshed: bool,
    pub flops: u64,
    pub quality: Option<QualityReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frames: usize,
    pub refresh_count: usize,
    pub skipped_frame_fraction: f64,
    pub eliminated_flops_fraction: f64,
    pub total_flops: u64,
    /// Means over frames with a quality measurement.
    pub mean_mse: Option<f64>,
    /// PSNR of the mean MSE, so refresh frames with zero error stay finite.
    pub psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_smape: Option<f64>,
}

/// Sequence totals: `skipped = 1 - refreshes / T` and
/// `eliminated = 1 - sum(flops) / (T * full_pass_flops)`.
pub fn aggregate(rows: &[FrameRow], full_pass_flops: u64, peak: f64) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::EmptySequence);
    }
    let frames = rows.len();
    let refresh_count = rows.iter().filter(|r| r.refreshed).count();
    let total_flops: u64 = rows.iter().map(|r| r.flops).sum();
    let measured: Vec<_> = rows.iter().filter_map(|r| r.quality).collect();
    let mean = |f: fn(&QualityReport) -> f64| {
        (!measured.is_empty()).then(|| measured.iter().map(f).sum::<f64>() / measured.len() as f64)
    };
    let mean_mse = mean(|q| q.mse);
    Ok(Summary {
        frames,
        refresh_count,
        skipped_frame_fraction: 1.0 - refresh_count as f64 / frames as f64,
        eliminated_flops_fraction: 1.0
            - total_flops as f64 / (frames as f64 * full_pass_flops as f64),
        total_flops,
        mean_mse,
        psnr: mean_mse.map(|m| psnr_from_mse(m, peak)),
        mean_ssim: mean(|q| q.ssim),
        mean_smape: mean(|q| q.smape),
    })
}
