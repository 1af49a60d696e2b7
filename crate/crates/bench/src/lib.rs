//! Shared fixtures for the benchmarks.

use sso_core::{
    make_synthetic, DirectionSampler, NoiseModel, ObjectiveOracle, Problem, RngStream,
    ScheduleMode, SmoothingConfig, SsoConfig, StepSchedule, SubproblemSchedule, ZosParams,
};

/// Noisy sphere of dimension `n`.
pub fn sphere(n: usize) -> ObjectiveOracle {
    make_synthetic(
        Problem::Sphere,
        n,
        NoiseModel::AdditiveGaussian { sigma: 0.01 },
        7,
    )
    .expect("valid problem")
}

pub fn sampler() -> DirectionSampler {
    DirectionSampler::new(RngStream::root(7).named("bench"))
}

pub fn smoothing(q: usize, parallel: bool) -> SmoothingConfig {
    SmoothingConfig::new(0.01, q)
        .expect("valid smoothing")
        .with_parallel(parallel)
}

/// ZO-Signum run of a fixed number of iterations.
pub fn zos_params(q: usize, iterations: u64) -> ZosParams {
    let schedule = StepSchedule::power(0.1, 0.5, 0.75, 0.5).expect("valid schedule");
    let mut p = ZosParams::new(smoothing(q, false), schedule, 0.0, iterations);
    p.max_iters = Some(iterations);
    p
}

/// Solar-style driver with a fixed budget.
pub fn sso_config(max_evals: u64) -> SsoConfig {
    let schedule = SubproblemSchedule::new(
        0.3,
        0.1,
        0.5,
        1e-9,
        ScheduleMode::Default {
            alpha1: 0.5,
            alpha2: 0.25,
        },
    )
    .expect("valid schedule");
    SsoConfig::new(schedule, 10, 5, max_evals)
}
