use framecache::engine::{run_baseline, run_sequence};
use framecache::graph::{build_unet, BuildOptions, CacheLabel};
use framecache::policy::RefreshPolicy;
use framecache::workload::{generate, SceneConfig};
use proptest::prelude::*;

fn policy_strategy() -> impl Strategy<Value = RefreshPolicy> {
    prop_oneof![
        (1usize..6).prop_map(|n| RefreshPolicy::EveryN { n }),
        (0.02f64..0.5).prop_map(|tau| RefreshPolicy::DeltaSmape { tau }),
        (0.1f64..2.0).prop_map(|tau| RefreshPolicy::MotionThreshold { tau }),
        (1usize..4).prop_map(|k| RefreshPolicy::NonLinear {
            c: 110.0,
            p: 1.4,
            refreshes: k,
            horizon: 8,
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_keep_the_flops_ledger(
        seed in 0u64..1000,
        pan in 0.0f64..2.0,
        depth in 2usize..4,
        level in 1usize..3,
        policy in policy_strategy(),
    ) {
        let level = level.min(depth - 1);
        let scene = SceneConfig { seed, height: 16, width: 16, pan_speed: pan, ..SceneConfig::default() };
        let frames = generate(&scene, 8).unwrap().frames;
        let spec = build_unet(depth, 4, scene.shape(), &BuildOptions { out_channels: 3, seed })
            .unwrap()
            .with_cache(&CacheLabel::UnetLevel(level))
            .unwrap();
        let baseline = run_baseline(&spec, &frames).unwrap();
        let report = run_sequence(&spec, &frames, &policy).unwrap();

        prop_assert!(report.frames[0].refreshed);
        let (full, cached) = (spec.full_flops(), spec.cached_flops());
        let r = report.refresh_count as u64;
        let t = frames.len() as u64;
        prop_assert_eq!(report.total_flops(), r * full + (t - r) * cached);
        for (f, b) in report.frames.iter().zip(&baseline) {
            prop_assert_eq!(f.flops, if f.refreshed { full } else { cached });
            if f.refreshed {
                prop_assert_eq!(f.output.data(), b.data());
            }
        }
        let savings = 1.0 - cached as f64 / full as f64;
        let product = report.skipped_frame_fraction * savings;
        prop_assert!((report.eliminated_flops_fraction - product).abs() < 1e-12);
    }
}

#[test]
fn refreshing_every_frame_reproduces_the_baseline() {
    let scene = SceneConfig {
        seed: 5,
        height: 16,
        width: 16,
        sprite_count: 2,
        ..SceneConfig::default()
    };
    let frames = generate(&scene, 6).unwrap().frames;
    let spec = build_unet(3, 4, scene.shape(), &BuildOptions::default()).unwrap();
    let baseline = run_baseline(&spec, &frames).unwrap();
    let report = run_sequence(&spec, &frames, &RefreshPolicy::EveryN { n: 1 }).unwrap();
    assert_eq!(report.skipped_frame_fraction, 0.0);
    assert_eq!(report.eliminated_flops_fraction, 0.0);
    for (o, b) in report.outputs().into_iter().zip(&baseline) {
        assert_eq!(o, b);
    }
}
