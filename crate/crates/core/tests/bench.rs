use std::collections::HashMap;

use invnav::bench::{benchmark, run_filter, run_with, simulated_segments, ConstantNoise, FilterOptions, Variant};
use invnav::dataio::{inject_test_noise, FilterKind, NnVariant, RunConfig, Segment, TestNoise};
use invnav::simgen::TrajectoryFamily;

fn segment(family: TrajectoryFamily, seed: u64) -> Segment {
    Segment::simulated(1, family, seed).unwrap()
}

#[test]
fn noise_free_straight_line_stays_on_track() {
    let seg = segment(TrajectoryFamily::StraightConst, 2);
    for filter in [FilterKind::Aekf, FilterKind::ArIkf] {
        let r = run_filter(&seg, &RunConfig::for_filter(filter), None).unwrap();
        assert!(r.rmse_position < 0.5, "{filter}: {}", r.rmse_position);
        assert!(r.pos_err.iter().all(|e| e.is_finite()));
    }
}

#[test]
fn full_network_weight_with_oracle_equals_fixed_noise_filter() {
    let seg = inject_test_noise(&segment(TrajectoryFamily::Circular, 5), &TestNoise::default(), 1);
    let cfg = RunConfig { lambda: 1.0, ..RunConfig::for_filter(FilterKind::ArIkf) };
    let mut opts = FilterOptions::from_config(&cfg, None).unwrap();
    let oracle = ConstantNoise(std::array::from_fn(|i| opts.q_base[i]));
    opts.nn = Some(&oracle);
    let blended = run_with(&seg, &opts).unwrap();

    let mut fixed = FilterOptions::from_config(&cfg, None).unwrap();
    fixed.adaptive = false;
    let reference = run_with(&seg, &fixed).unwrap();
    assert_eq!(blended, reference);
}

#[test]
fn base_noise_is_used_until_the_buffer_fills() {
    let seg = inject_test_noise(&segment(TrajectoryFamily::Lissajous, 3), &TestNoise::default(), 4);
    let n_updates = seg.dvl.len();
    let cfg = RunConfig { innovation_window: n_updates + 10, ..RunConfig::for_filter(FilterKind::ArIkf) };
    let adaptive = run_filter(&seg, &cfg, None).unwrap();
    let mut opts = FilterOptions::from_config(&cfg, None).unwrap();
    opts.adaptive = false;
    assert_eq!(adaptive, run_with(&seg, &opts).unwrap());

    let cfg = RunConfig { innovation_window: 5, ..cfg };
    assert_ne!(run_filter(&seg, &cfg, None).unwrap(), adaptive);
}

#[test]
fn benchmark_is_deterministic_and_shaped() {
    let segs = simulated_segments(2, 99).unwrap();
    let variants = [Variant::new(FilterKind::Aekf, NnVariant::None).unwrap(), Variant::new(FilterKind::ArIkf, NnVariant::None).unwrap()];
    let base = RunConfig::default();
    let run = || benchmark(&segs, &variants, &[0, 1], &base, &HashMap::new(), &mut |_| {}).unwrap();
    let a = run();
    assert_eq!(a, run());
    assert!(!a.diverged());
    assert_eq!(a.cells.len(), 2);
    assert!(a.cells.iter().flatten().flatten().all(|x| x.is_finite() && *x > 0.0));
    let csv = a.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
    assert!(a.to_text().contains("AR-IKF"));
    assert_eq!(Variant::full_grid().len(), 8);
}

#[test]
fn divergence_is_recorded_not_fatal() {
    let good = segment(TrajectoryFamily::Circular, 1);
    let mut bad = segment(TrajectoryFamily::Circular, 2);
    bad.id = 2;
    bad.imu[500].gyro.x = f64::NAN;
    let variants = [Variant::new(FilterKind::ArIkf, NnVariant::None).unwrap()];
    let t = benchmark(&[good, bad], &variants, &[0], &RunConfig::default(), &HashMap::new(), &mut |_| {}).unwrap();
    assert!(t.diverged());
    assert_eq!(t.failures.len(), 1);
    assert!(t.cells[0][0][0].is_finite());
    assert!(t.cells[1][0][0].is_nan());
}

#[test]
fn network_variant_without_weights_is_rejected() {
    let segs = simulated_segments(1, 1).unwrap();
    let v: Variant = "NN-AR-IKF:s1_mse".parse().unwrap();
    assert!(benchmark(&segs, &[v], &[0], &RunConfig::default(), &HashMap::new(), &mut |_| {}).is_err());
}
