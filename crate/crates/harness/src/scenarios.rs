use std::collections::BTreeMap;

use anyhow::{ensure, Context, Result};
use framecache::engine::{
    cache_bytes_report, run_baseline, run_sequence_with, CacheState, CorruptionMode, RunOptions,
    SequenceReport,
};
use framecache::graph::{
    build_multibranch_preset, build_unet, build_unetpp, feature_delta_profile, BuildOptions,
    CacheLabel, NetworkSpec,
};
use framecache::metrics::{self, QualityReport, DEFAULT_PEAK};
use framecache::policy::RefreshPolicy;
use framecache::workload::{generate, FrameInput};
use framecache::{Shape, Tensor};
use rayon::prelude::*;

use crate::config::{NetworkConfig, RunConfig, Scenario};
use crate::table::{fmt_pct, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn run_scenario(cfg: &RunConfig, scenario: Scenario) -> Result<ScenarioOutcome> {
    let run = match scenario {
        Scenario::PolicySweep => policy_sweep,
        Scenario::AblationLevels => ablation_levels,
        Scenario::NullHypothesis => null_hypothesis,
        Scenario::SuperresTradeoff => superres_tradeoff,
        Scenario::MemoryReport => memory_report,
        Scenario::FeatureProfile => feature_profile,
    };
    run(cfg).with_context(|| format!("scenario {}", scenario.name()))
}

fn frames(cfg: &RunConfig) -> Result<Vec<FrameInput>> {
    Ok(generate(&cfg.scene(), cfg.frames)?.frames)
}

/// Runs `policy` and scores every post-warmup frame against `baseline`.
fn scored_run(
    spec: &NetworkSpec,
    frames: &[FrameInput],
    baseline: &[Tensor],
    policy: &RefreshPolicy,
    options: &RunOptions,
) -> Result<SequenceReport> {
    let mut report = run_sequence_with(spec, frames, policy, options)?;
    report.attach_reference(&baseline[options.warmup..], DEFAULT_PEAK)?;
    Ok(report)
}

fn quality(report: &SequenceReport) -> Result<(f64, f64, f64, f64)> {
    let s = report.summary(DEFAULT_PEAK)?;
    Ok((
        s.mean_mse.expect("scored"),
        s.psnr.expect("scored"),
        s.mean_ssim.expect("scored"),
        s.mean_smape.expect("scored"),
    ))
}

const FRAME_HEADERS: [&str; 8] = [
    "run",
    "index",
    "refreshed",
    "flops",
    "policy_metric",
    "mse",
    "ssim",
    "smape",
];
const TOTAL_HEADERS: [&str; 11] = [
    "run",
    "frames",
    "refreshes",
    "skipped_fraction",
    "total_flops",
    "full_pass_flops",
    "eliminated_flops_fraction",
    "mean_mse",
    "psnr",
    "mean_ssim",
    "mean_smape",
];

fn push_frames(table: &mut Table, run: &str, report: &SequenceReport) {
    for f in &report.frames {
        let q = f.quality.expect("scored");
        table.push(vec![
            run.into(),
            f.index.to_string(),
            (f.refreshed as u8).to_string(),
            f.flops.to_string(),
            f.policy_metric.to_string(),
            q.mse.to_string(),
            q.ssim.to_string(),
            q.smape.to_string(),
        ]);
    }
}

fn push_totals(table: &mut Table, run: &str, report: &SequenceReport) -> Result<()> {
    let s = report.summary(DEFAULT_PEAK)?;
    table.push(vec![
        run.into(),
        s.frames.to_string(),
        s.refresh_count.to_string(),
        s.skipped_frame_fraction.to_string(),
        s.total_flops.to_string(),
        report.full_pass_flops.to_string(),
        s.eliminated_flops_fraction.to_string(),
        s.mean_mse.expect("scored").to_string(),
        s.psnr.expect("scored").to_string(),
        s.mean_ssim.expect("scored").to_string(),
        s.mean_smape.expect("scored").to_string(),
    ]);
    Ok(())
}

/// Recomputes every totals row from the per-frame rows of the same run,
/// working only from the emitted strings. Returns the mismatching runs.
pub fn recompute_totals(frames: &Table, totals: &Table) -> Result<Vec<String>> {
    let col = |t: &Table, h: &str| {
        t.headers
            .iter()
            .position(|x| x == h)
            .with_context(|| format!("missing column {h}"))
    };
    let num = |s: &str| -> Result<f64> { s.parse().with_context(|| format!("bad number {s}")) };
    let mut groups: BTreeMap<&str, Vec<&Vec<String>>> = BTreeMap::new();
    for row in &frames.rows {
        groups.entry(row[0].as_str()).or_default().push(row);
    }
    let (fr, ff, fm, fs, fa) = (
        col(frames, "refreshed")?,
        col(frames, "flops")?,
        col(frames, "mse")?,
        col(frames, "ssim")?,
        col(frames, "smape")?,
    );
    let mut bad = Vec::new();
    for row in &totals.rows {
        let Some(rows) = groups.get(row[0].as_str()) else {
            bad.push(row[0].clone());
            continue;
        };
        let n = rows.len() as f64;
        let refreshes = rows.iter().filter(|r| r[fr] == "1").count();
        let flops: u64 = rows
            .iter()
            .map(|r| r[ff].parse::<u64>())
            .sum::<Result<u64, _>>()?;
        let mean = |c: usize| -> Result<f64> {
            Ok(rows.iter().map(|r| num(&r[c])).sum::<Result<f64>>()? / n)
        };
        let full: f64 = num(&row[col(totals, "full_pass_flops")?])?;
        let mean_mse = mean(fm)?;
        let expected = [
            ("frames", rows.len() as f64),
            ("refreshes", refreshes as f64),
            ("skipped_fraction", 1.0 - refreshes as f64 / n),
            ("total_flops", flops as f64),
            ("eliminated_flops_fraction", 1.0 - flops as f64 / (n * full)),
            ("mean_mse", mean_mse),
            ("psnr", metrics::psnr_from_mse(mean_mse, DEFAULT_PEAK)),
            ("mean_ssim", mean(fs)?),
            ("mean_smape", mean(fa)?),
        ];
        for (h, want) in expected {
            let got = num(&row[col(totals, h)?])?;
            let ok = got == want || (got - want).abs() <= 1e-12 * want.abs().max(1.0);
            if !ok {
                bad.push(format!("{}:{h}", row[0]));
            }
        }
    }
    Ok(bad)
}

fn consistency_check(frames: &Table, totals: &Table) -> Result<Check> {
    let bad = recompute_totals(frames, totals)?;
    Ok(Check::new(
        "totals recompute from per-frame rows",
        bad.is_empty(),
        if bad.is_empty() {
            "all totals match".to_string()
        } else {
            format!("mismatch: {}", bad.join(", "))
        },
    ))
}

const SWEEP_PRESETS: [&str; 6] = ["delta_l", "delta_h", "n5", "n2", "motion", "nonlinear"];

fn policy_sweep(cfg: &RunConfig) -> Result<ScenarioOutcome> {
    let spec = cfg.network()?;
    let frames = frames(cfg)?;
    let baseline = run_baseline(&spec, &frames)?;
    let options = RunOptions {
        warmup: cfg.warmup,
        corruption: None,
    };
    let names: Vec<&str> = SWEEP_PRESETS
        .iter()
        .copied()
        .chain(["no_update", "every_frame"])
        .collect();
    let reports: Vec<SequenceReport> = names
        .par_iter()
        .map(|name| {
            let policy = RefreshPolicy::preset(name, cfg.frames)?;
            scored_run(&spec, &frames, &baseline, &policy, &options)
        })
        .collect::<Result<_>>()?;
    let by_name: BTreeMap<&str, &SequenceReport> =
        names.iter().copied().zip(reports.iter()).collect();

    let mut per_frame = Table::new("policy_sweep_frames", &FRAME_HEADERS);
    let mut totals = Table::new("policy_sweep", &TOTAL_HEADERS);
    for (name, report) in names.iter().zip(&reports) {
        push_frames(&mut per_frame, name, report);
        push_totals(&mut totals, name, report)?;
    }

    let t = frames.len() - cfg.warmup;
    let refreshes = |n: &str| by_name[n].refresh_count;
    let mse = |n: &str| quality(by_name[n]).map(|q| q.0);
    let mut checks = vec![consistency_check(&per_frame, &totals)?];
    if cfg.warmup == 0 {
        for (name, n) in [("n5", 5), ("n2", 2)] {
            let want = t.div_ceil(n);
            checks.push(Check::new(
                format!("{name} refresh count"),
                refreshes(name) == want,
                format!("{} refreshes, expected {want}", refreshes(name)),
            ));
        }
        let want = t.div_ceil(5);
        checks.push(Check::new(
            "nonlinear refresh count",
            refreshes("nonlinear") == want,
            format!("{} refreshes, expected {want}", refreshes("nonlinear")),
        ));
    }
    checks.push(Check::new(
        "delta_h refreshes at least delta_l",
        refreshes("delta_h") >= refreshes("delta_l"),
        format!("{} vs {}", refreshes("delta_h"), refreshes("delta_l")),
    ));
    let ladder = ["no_update", "n5", "n2", "every_frame"];
    let mses: Vec<f64> = ladder.iter().map(|n| mse(n)).collect::<Result<_>>()?;
    checks.push(Check::new(
        "mse non-increasing with refresh rate",
        mses.windows(2).all(|w| w[1] <= w[0]),
        format!("{ladder:?} -> {mses:?}"),
    ));
    checks.push(Check::new(
        "every-frame matches baseline",
        mses[3] == 0.0,
        format!("mse {}", mses[3]),
    ));

    Ok(ScenarioOutcome {
        scenario: Scenario::PolicySweep,
        tables: vec![totals, per_frame],
        checks,
    })
}

fn ablation_levels(cfg: &RunConfig) -> Result<ScenarioOutcome> {
    let scene = cfg.scene();
    let opts = BuildOptions {
        out_channels: cfg.out_channels,
        seed: cfg.seed,
    };
    let base = match cfg.network {
        NetworkConfig::Unet { base_channels, .. } | NetworkConfig::Unetpp { base_channels, .. } => {
            base_channels
        }
        NetworkConfig::Multibranch { .. } => 8,
    };
    let unet = build_unet(4, base, scene.shape(), &opts)?;
    let unetpp = build_unetpp(3, base, scene.shape(), &opts)?;
    let variants = vec![
        (
            "Level 1",
            unet.clone().with_cache(&CacheLabel::UnetLevel(1))?,
        ),
        (
            "Level 2",
            unet.clone().with_cache(&CacheLabel::UnetLevel(2))?,
        ),
        ("Level 3", unet.with_cache(&CacheLabel::UnetLevel(3))?),
        (
            "U-Net++ A",
            unetpp.clone().with_cache(&CacheLabel::UnetppConfigA)?,
        ),
        ("U-Net++ B", unetpp.with_cache(&CacheLabel::UnetppConfigB)?),
    ];
    let frames = frames(cfg)?;
    let policy = cfg.refresh_policy()?;
    let options = RunOptions {
        warmup: cfg.warmup,
        corruption: None,
    };
    let reports: Vec<SequenceReport> = variants
        .par_iter()
        .map(|(_, spec)| {
            let baseline = run_baseline(spec, &frames)?;
            scored_run(spec, &frames, &baseline, &policy, &options)
        })
        .collect::<Result<_>>()?;

    let mut table = Table::new(
        "ablation_levels",
        &[
            "config",
            "full_pass_flops",
            "cached_pass_flops",
            "flops_remaining",
            "sequence_flops_fraction",
            "refreshes",
            "mean_mse",
            "psnr",
            "mean_ssim",
            "mean_smape",
        ],
    );
    let mut per_frame = Table::new("ablation_levels_frames", &FRAME_HEADERS);
    let mut totals = Table::new("ablation_levels_totals", &TOTAL_HEADERS);
    let mut remaining = Vec::new();
    let mut mses = Vec::new();
    for ((name, spec), report) in variants.iter().zip(&reports) {
        let r = spec.cached_flops() as f64 / spec.full_flops() as f64;
        let (mse, psnr, ssim, smape) = quality(report)?;
        remaining.push(r);
        mses.push(mse);
        table.push(vec![
            name.to_string(),
            spec.full_flops().to_string(),
            spec.cached_flops().to_string(),
            r.to_string(),
            (1.0 - report.eliminated_flops_fraction).to_string(),
            report.refresh_count.to_string(),
            mse.to_string(),
            psnr.to_string(),
            ssim.to_string(),
            smape.to_string(),
        ]);
        push_frames(&mut per_frame, name, report);
        push_totals(&mut totals, name, report)?;
    }
    let checks = vec![
        Check::new(
            "flops remaining strictly increases level 1 to 3",
            remaining[0] < remaining[1] && remaining[1] < remaining[2],
            format!("{:?}", &remaining[..3]),
        ),
        Check::new(
            "config B keeps fewer flops than config A",
            remaining[4] < remaining[3],
            format!("A {} B {}", remaining[3], remaining[4]),
        ),
        Check::new(
            "mse non-increasing level 1 to 3",
            mses[1] <= mses[0] && mses[2] <= mses[1],
            format!("{:?}", &mses[..3]),
        ),
        consistency_check(&per_frame, &totals)?,
    ];
    Ok(ScenarioOutcome {
        scenario: Scenario::AblationLevels,
        tables: vec![table, totals, per_frame],
        checks,
    })
}

fn null_hypothesis(cfg: &RunConfig) -> Result<ScenarioOutcome> {
    let spec = cfg.network()?;
    let frames = frames(cfg)?;
    let baseline = run_baseline(&spec, &frames)?;
    let policy = cfg.refresh_policy()?;
    let seed = cfg.seed;
    let mut runs: Vec<(String, RefreshPolicy, Option<CorruptionMode>)> = vec![
        ("proper".into(), policy.clone(), None),
        ("zero".into(), policy.clone(), Some(CorruptionMode::Zero)),
        (
            "uniform".into(),
            policy.clone(),
            Some(CorruptionMode::UniformRandom),
        ),
        (
            "normal".into(),
            policy.clone(),
            Some(CorruptionMode::NormalRandom),
        ),
    ];
    let mut scales = vec![0.0, 1.0];
    scales.extend(cfg.null_hypothesis.noise_scales.iter().copied());
    for k in scales {
        runs.push((
            format!("noise({k})"),
            policy.clone(),
            Some(CorruptionMode::Noise { sigma_scale: k }),
        ));
    }
    runs.push(("no_update".into(), RefreshPolicy::no_update(), None));

    let reports: Vec<SequenceReport> = runs
        .par_iter()
        .map(|(_, p, mode)| {
            let options = RunOptions {
                warmup: cfg.warmup,
                corruption: mode.map(|m| (m, seed)),
            };
            scored_run(&spec, &frames, &baseline, p, &options)
        })
        .collect::<Result<_>>()?;

    let mut per_frame = Table::new("null_hypothesis_frames", &FRAME_HEADERS);
    let mut totals = Table::new("null_hypothesis", &TOTAL_HEADERS);
    let mut mse = BTreeMap::new();
    for ((name, _, _), report) in runs.iter().zip(&reports) {
        push_frames(&mut per_frame, name, report);
        push_totals(&mut totals, name, report)?;
        mse.insert(name.as_str(), quality(report)?.0);
    }
    let proper_out: Vec<&Tensor> = reports[0].outputs();
    let noise0 = runs.iter().position(|r| r.0 == "noise(0)").expect("listed");
    let checks = vec![
        Check::new(
            "zero cache worse than proper cache",
            mse["zero"] > mse["proper"],
            format!("zero {} proper {}", mse["zero"], mse["proper"]),
        ),
        Check::new(
            "noise(0) identical to proper cache",
            reports[noise0].outputs() == proper_out,
            "outputs compared bit for bit",
        ),
        Check::new(
            "random caches worse than no update",
            mse["uniform"] > mse["no_update"] && mse["normal"] > mse["no_update"],
            format!(
                "uniform {} normal {} no_update {}",
                mse["uniform"], mse["normal"], mse["no_update"]
            ),
        ),
        consistency_check(&per_frame, &totals)?,
    ];
    Ok(ScenarioOutcome {
        scenario: Scenario::NullHypothesis,
        tables: vec![totals, per_frame],
        checks,
    })
}

/// Nearest-neighbour resize to `height x width`.
pub fn resize_nearest(t: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (h, w) = (t.height(), t.width());
    Ok(Tensor::from_fn(
        Shape::new(t.channels(), height, width),
        |c, y, x| t.get(c, y * h / height, x * w / width),
    )?)
}

/// Skipped fraction above which a cached run on the fine input costs less
/// than the uncached coarse run: `(F_fine - F_coarse) / (F_fine - F_cached)`.
pub fn break_even_skipped_fraction(fine_full: u64, fine_cached: u64, coarse_full: u64) -> f64 {
    (fine_full as f64 - coarse_full as f64) / (fine_full as f64 - fine_cached as f64)
}

fn rmse(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(metrics::mse(a, b)?.sqrt())
}

fn superres_tradeoff(cfg: &RunConfig) -> Result<ScenarioOutcome> {
    let sr = &cfg.superres;
    ensure!(
        sr.fine_factor < sr.coarse_factor,
        "fine_factor must be smaller than coarse_factor"
    );
    let hr = cfg.scene();
    let reference: Vec<Tensor> = generate(&hr, cfg.frames)?
        .frames
        .iter()
        .map(|f| f.input.slice_channels(0..cfg.out_channels))
        .collect::<framecache::Result<_>>()?;
    let setup = |factor: usize| -> Result<(NetworkSpec, Vec<FrameInput>)> {
        let scene = hr.rescaled(factor)?;
        let spec = build_multibranch_preset(scene.shape(), cfg.out_channels, cfg.seed)?;
        Ok((spec, generate(&scene, cfg.frames)?.frames))
    };
    let (coarse, coarse_frames) = setup(sr.coarse_factor)?;
    let (fine, fine_frames) = setup(sr.fine_factor)?;
    let up = |outs: Vec<&Tensor>| -> Result<Vec<Tensor>> {
        outs.into_iter()
            .map(|o| resize_nearest(o, hr.height, hr.width))
            .collect()
    };
    let mean_quality = |outs: &[Tensor]| -> Result<QualityReport> {
        let qs: Vec<_> = outs
            .iter()
            .zip(&reference)
            .map(|(o, r)| QualityReport::measure(o, r, DEFAULT_PEAK))
            .collect::<framecache::Result<_>>()?;
        let n = qs.len() as f64;
        let mse = qs.iter().map(|q| q.mse).sum::<f64>() / n;
        Ok(QualityReport {
            mse,
            psnr: metrics::psnr_from_mse(mse, DEFAULT_PEAK),
            ssim: qs.iter().map(|q| q.ssim).sum::<f64>() / n,
            smape: qs.iter().map(|q| q.smape).sum::<f64>() / n,
        })
    };

    let options = RunOptions::default();
    let every = RefreshPolicy::preset("every_frame", cfg.frames)?;
    let coarse_run = run_sequence_with(&coarse, &coarse_frames, &every, &options)?;
    let fine_base = run_sequence_with(&fine, &fine_frames, &every, &options)?;
    let coarse_up = up(coarse_run.outputs())?;
    let fine_up = up(fine_base.outputs())?;
    let coarse_total = coarse_run.total_flops();
    let s_star =
        break_even_skipped_fraction(fine.full_flops(), fine.cached_flops(), coarse.full_flops());

    let mut table = Table::new(
        "superres_tradeoff",
        &[
            "run",
            "factor",
            "input",
            "refreshes",
            "skipped_fraction",
            "total_flops",
            "flops_vs_coarse",
            "mse_vs_reference",
            "psnr",
            "ssim",
            "rmse_vs_same_input_baseline",
        ],
    );
    let mut row = |name: &str,
                   factor: usize,
                   shape: Shape,
                   report: &SequenceReport,
                   outs: &[Tensor],
                   drift: f64|
     -> Result<()> {
        let q = mean_quality(outs)?;
        table.push(vec![
            name.into(),
            factor.to_string(),
            format!("{}x{}", shape.height, shape.width),
            report.refresh_count.to_string(),
            report.skipped_frame_fraction.to_string(),
            report.total_flops().to_string(),
            (report.total_flops() as f64 / coarse_total as f64).to_string(),
            q.mse.to_string(),
            q.psnr.to_string(),
            q.ssim.to_string(),
            drift.to_string(),
        ]);
        Ok(())
    };
    row(
        "coarse baseline",
        sr.coarse_factor,
        coarse.input_shape(),
        &coarse_run,
        &coarse_up,
        0.0,
    )?;
    row(
        "fine baseline",
        sr.fine_factor,
        fine.input_shape(),
        &fine_base,
        &fine_up,
        0.0,
    )?;

    let mut checks = vec![Check::new(
        "fine baseline costs more than coarse baseline",
        fine_base.total_flops() > coarse_total,
        format!("{} vs {}", fine_base.total_flops(), coarse_total),
    )];
    let mut break_even_ok = true;
    let mut bound_ok = true;
    let mut details = Vec::new();
    for name in &sr.policies {
        let policy = RefreshPolicy::preset(name, cfg.frames)?;
        let report = run_sequence_with(&fine, &fine_frames, &policy, &options)?;
        let outs = up(report.outputs())?;
        let mut drift = 0.0;
        for (t, (o, b)) in outs.iter().zip(&fine_up).enumerate() {
            let cache_err = rmse(o, b)?;
            drift += cache_err;
            // Per frame: |d(o, ref) - d(b, ref)| <= d(o, b).
            let gap = (rmse(o, &reference[t])? - rmse(b, &reference[t])?).abs();
            if gap > cache_err + 1e-9 {
                bound_ok = false;
            }
        }
        drift /= outs.len() as f64;
        let s = report.skipped_frame_fraction;
        let cheaper = report.total_flops() < coarse_total;
        if (s - s_star).abs() > 1e-12 && cheaper != (s > s_star) {
            break_even_ok = false;
        }
        details.push(format!("{name}: skipped {s:.3} cheaper {cheaper}"));
        row(
            &format!("fine + {name}"),
            sr.fine_factor,
            fine.input_shape(),
            &report,
            &outs,
            drift,
        )?;
    }
    checks.push(Check::new(
        "cached cost below coarse baseline iff skipped above break-even",
        break_even_ok,
        format!("break-even {s_star:.4}; {}", details.join("; ")),
    ));
    checks.push(Check::new(
        "cached quality within cache error of uncached quality",
        bound_ok,
        "per-frame rmse triangle bound",
    ));
    let mut summary = Table::new("superres_break_even", &["quantity", "value"]);
    for (k, v) in [
        ("coarse_full_pass_flops", coarse.full_flops().to_string()),
        ("fine_full_pass_flops", fine.full_flops().to_string()),
        ("fine_cached_pass_flops", fine.cached_flops().to_string()),
        ("break_even_skipped_fraction", s_star.to_string()),
        ("break_even", fmt_pct(s_star)),
    ] {
        summary.push(vec![k.into(), v]);
    }
    Ok(ScenarioOutcome {
        scenario: Scenario::SuperresTradeoff,
        tables: vec![table, summary],
        checks,
    })
}

fn memory_report(cfg: &RunConfig) -> Result<ScenarioOutcome> {
    let mut table = Table::new("memory_report", &["cache", "entries", "bytes", "mib"]);
    let mut checks = Vec::new();
    let mut push = |label: &str, state: &CacheState| {
        let bytes = cache_bytes_report(state);
        table.push(vec![
            label.into(),
            (state.entries.len() + state.reference_input.is_some() as usize).to_string(),
            bytes.to_string(),
            format!("{:.2}", bytes as f64 / (1024.0 * 1024.0)),
        ]);
        bytes
    };
    for entry in &cfg.memory.entries {
        let entries = entry
            .tensors
            .iter()
            .enumerate()
            .map(|(i, &[c, h, w])| Ok((format!("entry{i}"), Tensor::zeros(Shape::new(c, h, w))?)))
            .collect::<Result<_>>()?;
        let state = CacheState {
            entries,
            ..CacheState::default()
        };
        let bytes = push(&entry.label, &state);
        let sum: u64 = entry
            .tensors
            .iter()
            .map(|[c, h, w]| (c * h * w * 4) as u64)
            .sum();
        checks.push(Check::new(
            format!("{} is the sum of its entries", entry.label),
            bytes == sum,
            format!("{bytes} bytes"),
        ));
        if let Some(want) = entry.expected_bytes {
            checks.push(Check::new(
                format!("{} matches {want} bytes", entry.label),
                bytes == want,
                format!("{bytes} bytes"),
            ));
        }
    }

    let spec = cfg.network()?;
    let frame = &frames(cfg)?[0];
    let record = spec.forward_full(&frame.input)?;
    let mut state = CacheState {
        entries: record.edge_tensors,
        reference_input: None,
        last_refresh_frame: Some(0),
    };
    let label = spec.cache_config().label.to_string();
    let plain = push(&format!("network {label}"), &state);
    state.reference_input = Some(frame.input.clone());
    let with_ref = push(&format!("network {label} + reference input"), &state);
    checks.push(Check::new(
        "reference input adds its own size",
        with_ref == plain + frame.input.shape().bytes() as u64,
        format!("{plain} + {}", frame.input.shape().bytes()),
    ));
    Ok(ScenarioOutcome {
        scenario: Scenario::MemoryReport,
        tables: vec![table],
        checks,
    })
}

fn feature_profile(cfg: &RunConfig) -> Result<ScenarioOutcome> {
    let spec = match cfg.network {
        NetworkConfig::Multibranch { .. } => build_unet(
            4,
            8,
            cfg.scene().shape(),
            &BuildOptions {
                out_channels: cfg.out_channels,
                seed: cfg.seed,
            },
        )?,
        _ => cfg.network()?,
    };
    let inputs: Vec<Tensor> = frames(cfg)?.into_iter().map(|f| f.input).collect();
    let profile = feature_delta_profile(&spec, &inputs)?;
    let mut headers = vec!["frame".to_string()];
    headers.extend(profile.keys().map(|d| format!("depth{d}")));
    let mut table = Table {
        name: "feature_profile".into(),
        headers,
        rows: Vec::new(),
    };
    for t in 0..inputs.len() {
        let mut row = vec![t.to_string()];
        row.extend(profile.values().map(|v| v[t].to_string()));
        table.push(row);
    }
    let checks = vec![
        Check::new(
            "frame 0 has zero delta at every depth",
            profile.values().all(|v| v[0] == 0.0),
            format!("{} depths", profile.len()),
        ),
        Check::new(
            "deltas are finite and within [0, 1]",
            profile
                .values()
                .flatten()
                .all(|v| v.is_finite() && (0.0..=1.0).contains(v)),
            format!("{} frames", inputs.len()),
        ),
    ];
    Ok(ScenarioOutcome {
        scenario: Scenario::FeatureProfile,
        tables: vec![table],
        checks,
    })
}
