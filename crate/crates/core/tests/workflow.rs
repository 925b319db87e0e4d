mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use common::*;
use fvarseg::evaluation::*;
use fvarseg::factor::XiAcvSource;
use fvarseg::simulate::{ChiModel, DgpSpec};
use fvarseg::spectral::LagCovSet;
use fvarseg::stage1::{stage1_grid, Stage1Trace};
use fvarseg::stage2::*;
use fvarseg::tuning::*;
use fvarseg::{segment, BandwidthPlan, PanelSeries, SegmentConfig, ThresholdRule};

fn tiny_calibration(seed: u64) -> CalibrationConfig {
    let plan = BandwidthPlan { stage1: vec![20, 25, 30, 40], stage2: vec![24, 30, 36, 44] };
    CalibrationConfig {
        grid: vec![
            CalibrationCell { n: 200, p: 6, q: 1, d: 1, bandwidths: Some(plan.clone()) },
            CalibrationCell { n: 240, p: 6, q: 1, d: 1, bandwidths: Some(plan.clone()) },
            CalibrationCell { n: 240, p: 8, q: 1, d: 1, bandwidths: Some(plan) },
        ],
        replicates: 20,
        tau: 0.1,
        seed,
        chi: ChiModel::C1,
        stage2_mode: Stage2Mode::FactorAdjusted,
        lambda: LambdaRule::Fixed(0.05),
        factor: Default::default(),
    }
}

#[test]
fn calibration_is_reproducible_across_pools() {
    let cfg = tiny_calibration(9);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| calibrate_thresholds(&cfg).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a, b);
    assert_eq!(a.points.len(), 24);
    for pt in &a.points {
        let t = match pt.stage {
            ThresholdStage::Stage1 => &a.stage1,
            ThresholdStage::Stage2 => &a.stage2,
        };
        assert!(pt.percentile > 0.0);
        assert!(t.threshold(pt.n, pt.p, pt.g) > 0.0);
    }
    let other = calibrate_thresholds(&tiny_calibration(10)).unwrap();
    assert_ne!(a.points, other.points);
}

#[test]
fn calibration_rejects_small_b() {
    let mut cfg = tiny_calibration(1);
    cfg.replicates = 19;
    assert!(matches!(calibrate_thresholds(&cfg), Err(fvarseg::Error::Config(_))));
}

#[test]
fn stage1_scaling_recomposes() {
    let x = gaussian_panel(5, 4, 200);
    let (g, m) = (30, 3);
    let raw = Stage1Trace::compute(&x, g, m, stage1_grid(200, g).unwrap()).unwrap();
    let scaled = scale_stage1(&raw).unwrap();
    let maxima = scaled_stage1_max(&raw).unwrap();
    for (i, &v) in raw.anchors.iter().enumerate() {
        let row = fvarseg::stage1::stage1_detector(&x, v, g, m).unwrap();
        let base = fvarseg::stage1::stage1_detector(&x, g, g, m).unwrap();
        let want: Vec<f64> = row.iter().zip(&base).map(|(a, b)| a / b).collect();
        for (a, b) in scaled.values[i].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(maxima[i], want.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    assert_eq!(maxima[0], 1.0);
}

#[test]
fn stage2_scaling_recomposes() {
    let x = gaussian_panel(6, 3, 240);
    let (g, d) = (40, 1);
    let params = Stage2Params { bandwidth: g, order: d, threshold: f64::INFINITY, eta: 0.0, lambda: LambdaRule::Fixed(0.05), scale: true };
    let res = stage2_scan(XiAcvSource::Raw(&x), &params).unwrap();
    let beta = &res.estimates[0].beta;
    let h = g / 2;
    let scale = (0..=d as isize)
        .map(|l| (brute_acv(&x, h, l, h) - brute_acv(&x, g, l, h)).amax())
        .fold(0.0, f64::max);
    assert!((res.scale - scale).abs() < 1e-12);
    for &(v, t) in &res.trace {
        let dg0 = brute_acv(&x, v, 0, g) - brute_acv(&x, v + g, 0, g);
        let dg1 = brute_acv(&x, v, 1, g) - brute_acv(&x, v + g, 1, g);
        let raw = (&dg0 * beta - dg1).amax();
        assert!((t - scale_stage2(raw, scale).unwrap()).abs() < 1e-9, "v={v}");
    }
    assert_eq!(res.trace.len(), 240 - 2 * g + 1);
}

#[test]
fn cv_choice_is_deterministic_and_on_grid() {
    let x = gaussian_panel(8, 4, 300);
    let source = XiAcvSource::Raw(&x);
    let sys = build_yule_walker(&fvarseg::spectral::local_acv_set(&x, 100, 100, 1).unwrap(), 1).unwrap();
    let grid = lambda_grid(&sys, 10).unwrap();
    assert!((grid[9] - sys.gvec.amax()).abs() < 1e-12);
    assert!((grid[0] / grid[9] - 0.01).abs() < 1e-12);
    let a = cv_lambda(&source, 100, 100, 1, &grid).unwrap();
    let b = cv_lambda(&source, 100, 100, 1, &grid).unwrap();
    assert_eq!(a, b);
    assert!(grid.contains(&a));
}

#[test]
fn cv_prefers_the_fitting_lambda_on_identical_halves() {
    let sys = YuleWalkerSystem { gmat: DMatrix::from_element(1, 1, 1.0), gvec: DMatrix::from_element(1, 1, 0.5) };
    assert_eq!(cv_lambda_on(&sys, &sys, &[0.6, 0.1]).unwrap(), 0.1);
    let _ = LagCovSet::zeros(1, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn hausdorff_symmetric_bounded_zero_on_equal(
        a in proptest::collection::btree_set(1usize..500, 0..6),
        b in proptest::collection::btree_set(1usize..500, 0..6),
    ) {
        let (a, b): (Vec<usize>, Vec<usize>) = (a.into_iter().collect(), b.into_iter().collect());
        let ab = hausdorff(&a, &b, 500);
        prop_assert_eq!(ab, hausdorff(&b, &a, 500));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(hausdorff(&a, &a, 500), 0.0);
    }
}

fn small_method() -> SegmentConfig {
    SegmentConfig {
        bandwidths: Some(BandwidthPlan { stage1: vec![40, 50], stage2: vec![50, 60] }),
        stage1_threshold: ThresholdRule::Fixed(3.0),
        stage2_threshold: ThresholdRule::Fixed(3.0),
        lambda: LambdaRule::Fixed(0.05),
        ..SegmentConfig::default()
    }
}

#[test]
fn single_replicate_experiment_reruns_identically() {
    let cfg = ExperimentConfig {
        cells: vec![DgpSpec::m1(300, 6, true, 0)],
        replicates: 1,
        seed: 4,
        method: small_method(),
    };
    let a = run_experiment(&cfg);
    let b = run_experiment(&cfg);
    assert_eq!(a.len(), 1);
    assert_eq!(a[0].replicates.len(), 1);
    assert_eq!(a[0].chi.distribution.total() + a[0].failures, 1);
    assert_eq!(a[0].without_timing(), b[0].without_timing());
}

#[test]
fn no_factor_mode_skips_stage1() {
    let data = fvarseg::simulate::gen_dataset(&DgpSpec::m3(300, 5, 1, true, 2)).unwrap();
    let cfg = SegmentConfig { no_factor: true, ..small_method() };
    let res = segment(&data.x, &cfg).unwrap();
    assert!(res.chi_points.is_empty());
    assert!(res.stage1.is_empty());
    assert!(res.segments.is_empty());
    assert_eq!(res.stage2.len(), 2);
}

#[test]
fn demeaning_removes_level_shifts() {
    let data = fvarseg::simulate::gen_dataset(&DgpSpec::m1(300, 6, true, 3)).unwrap();
    let shifted = PanelSeries::new(data.x.values().map(|v| v + 5.0)).unwrap();
    let cfg = small_method();
    let a = segment(&data.x, &cfg).unwrap();
    let b = segment(&shifted, &cfg).unwrap();
    assert_eq!(a.chi_points.locations(), b.chi_points.locations());
    assert_eq!(a.xi_points.locations(), b.xi_points.locations());
    for ((ta, _), (tb, _)) in a.stage1.iter().zip(&b.stage1) {
        for (ra, rb) in ta.values.iter().zip(&tb.values) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
            }
        }
    }
}
