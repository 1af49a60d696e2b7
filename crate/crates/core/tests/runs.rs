use sso_core::sso::Phase;
use sso_core::{
    make_synthetic, run_sso, BoxBounds, DirectionSampler, ExitReason, NoiseModel, Problem,
    RngStream, RunTrace, ScheduleMode, SsoConfig, SubproblemSchedule,
};

fn solar_schedule(epsilon: f64) -> SubproblemSchedule {
    SubproblemSchedule::new(
        0.3,
        0.1,
        0.5,
        epsilon,
        ScheduleMode::Default {
            alpha1: 0.5,
            alpha2: 0.25,
        },
    )
    .unwrap()
}

#[test]
fn sso_trace_survives_a_file_round_trip() {
    let oracle = make_synthetic(
        Problem::Rosenbrock,
        3,
        NoiseModel::AdditiveGaussian { sigma: 0.05 },
        2,
    )
    .unwrap();
    let mut cfg = SsoConfig::new(solar_schedule(1e-4), 10, 5, 5000);
    cfg.search_budget = 300;
    let r = run_sso(
        &oracle,
        &[0.0; 3],
        &cfg,
        &mut DirectionSampler::new(RngStream::root(2)),
    )
    .unwrap();
    r.trace.check_invariants().unwrap();
    assert_eq!(r.summaries[0].phase, Phase::Search);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    r.trace.save(&path).unwrap();
    let loaded = RunTrace::load(&path).unwrap();
    assert_eq!(loaded, r.trace);
    assert_eq!(loaded.last().unwrap().evals, r.evals);
}

#[test]
fn sso_iterates_stay_in_the_box() {
    let oracle = make_synthetic(Problem::Sphere, 4, NoiseModel::None, 3).unwrap();
    let mut cfg = SsoConfig::new(solar_schedule(1e-3), 10, 5, 20_000);
    cfg.bounds = Some(BoxBounds::uniform(4, 0.5, 2.0).unwrap());
    let r = run_sso(
        &oracle,
        &[2.0; 4],
        &cfg,
        &mut DirectionSampler::new(RngStream::root(3)),
    )
    .unwrap();
    assert!(!r.exit.is_aborted());
    // the constrained minimizer is the corner (0.5, ..., 0.5)
    for v in &r.x {
        assert!((0.5..=2.0).contains(v));
        assert!((v - 0.5).abs() < 0.05, "x = {:?}", r.x);
    }
}

#[test]
fn epsilon_ends_the_run() {
    let oracle = make_synthetic(Problem::Sphere, 2, NoiseModel::None, 4).unwrap();
    // beta^i <= 0.03 first at i = 3, so subproblems 0..=2 run
    let cfg = SsoConfig::new(solar_schedule(0.03), 10, 5, 1_000_000);
    let r = run_sso(
        &oracle,
        &[1.0, 1.0],
        &cfg,
        &mut DirectionSampler::new(RngStream::root(4)),
    )
    .unwrap();
    assert_eq!(r.exit, ExitReason::EpsilonReached);
    assert_eq!(r.summaries.last().unwrap().i, 2);
}
