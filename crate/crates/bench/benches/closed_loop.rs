use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector2;

use platoon_core::dynamics::build_error_matrices;
use platoon_core::observer::SlidingModeObserver;
use platoon_core::scenario::{simulate, ScenarioConfig};
use platoon_core::thresholds::{PendingSample, ThresholdDesign, ThresholdMonitor};
use platoon_core::{AttackSignal, CommMode};

fn full_runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_20s_3_vehicles");
    group.sample_size(10);
    for mode in [CommMode::Continuous, CommMode::Event] {
        let cfg = ScenarioConfig {
            comm_mode: mode,
            ..Default::default()
        };
        let attack = AttackSignal::constant_from(4.01, 0.7);
        group.bench_function(mode.to_string(), |b| {
            b.iter(|| simulate(black_box(&cfg), &attack).unwrap())
        });
    }
    group.finish();
}

fn detector_tick(c: &mut Criterion) {
    let cfg = ScenarioConfig::default();
    let mats = build_error_matrices(&cfg.cacc, &cfg.vehicle).unwrap();
    let design = ThresholdDesign {
        observer: cfg.observer,
        mats,
        noise: cfg.noise.clone(),
        gains: cfg.cacc,
        t0: 0.0,
    };
    c.bench_function("observer_and_thresholds_1000_ticks", |b| {
        b.iter(|| {
            let mut obs = SlidingModeObserver::new(cfg.observer, mats, Vector2::zeros());
            let mut monitor = ThresholdMonitor::new(design.clone(), CommMode::Continuous).unwrap();
            for n in 0..1000 {
                let t = n as f64 * cfg.dt;
                let y = Vector2::new(
                    0.05 * (n as f64 * 0.37).sin(),
                    0.05 * (n as f64 * 0.71).cos(),
                );
                let (sample, nu_fil) = obs.step(&y, t, cfg.dt);
                let ev = monitor
                    .process_immediate(PendingSample {
                        tick: n,
                        t,
                        sign: sample.sign,
                        nu_fil,
                    })
                    .unwrap();
                black_box(ev);
            }
        })
    });
}

criterion_group!(benches, full_runs, detector_tick);
criterion_main!(benches);
