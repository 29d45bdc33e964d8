use criterion::{black_box, criterion_group, criterion_main, Criterion};

use evsync::destimator::{run_trial, TrialMode};
use evsync::kalman::KalmanDesign;
use evsync::matops::solve_dare_fixed_point;
use evsync::runner::build_estimator;
use evsync::Decomposition;
use evsync_bench::{example_config, example_setup};

fn design(c: &mut Criterion) {
    let config = example_config();
    let scenario = config.estimation_scenario().unwrap();
    let (plant, sensors) = (scenario.plant, scenario.sensors);
    c.bench_function("dare_fixed_point", |b| {
        b.iter(|| {
            solve_dare_fixed_point(black_box(&plant.a), &sensors.c, &plant.q, &sensors.r).unwrap()
        })
    });
    let kalman = KalmanDesign::design(&plant, &sensors).unwrap();
    c.bench_function("decomposition_build", |b| {
        b.iter(|| Decomposition::build(black_box(&kalman), &sensors).unwrap())
    });
    c.bench_function("estimator_setup_f64", |b| {
        b.iter(|| build_estimator::<f64>(black_box(&config)).unwrap())
    });
}

fn trials(c: &mut Criterion) {
    let config = example_config();
    let setup = example_setup();
    let mut group = c.benchmark_group("trial_h400");
    group.sample_size(20);
    group.bench_function("event_and_full_double_double", |b| {
        b.iter(|| {
            run_trial(
                &setup,
                &config.trigger,
                400,
                black_box(3),
                &[TrialMode::Event, TrialMode::Full],
            )
            .unwrap()
        })
    });
    let f64_setup = build_estimator::<f64>(&config).unwrap();
    group.bench_function("event_and_full_f64", |b| {
        b.iter(|| {
            run_trial(
                &f64_setup,
                &config.trigger,
                400,
                black_box(3),
                &[TrialMode::Event, TrialMode::Full],
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, design, trials);
criterion_main!(benches);
