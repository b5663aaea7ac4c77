use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use platoon_core::dynamics::{vehicle_step, NoiseModel, VehicleParams, VehicleState};
use platoon_core::scenario::{emit, run, simulate, summary_json, write_trace, ScenarioConfig};
use platoon_core::{AttackSignal, CommMode, Error, TriggerConfig};

fn euler(s: &VehicleState, u: f64, dt: f64, tau: f64, substeps: usize) -> VehicleState {
    let h = dt / substeps as f64;
    let (mut p, mut v, mut a) = (s.p, s.v, s.a);
    for _ in 0..substeps {
        let (dp, dv, da) = (v, a, (u - a) / tau);
        p += h * dp;
        v += h * dv;
        a += h * da;
    }
    VehicleState { p, v, a, u }
}

#[test]
fn zoh_step_matches_fine_euler_over_ten_seconds() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = VehicleParams::default();
    let dt = 1e-3;
    for _ in 0..3 {
        let mut exact = VehicleState {
            p: 0.0,
            v: rng.random_range(0.0..30.0),
            a: rng.random_range(-2.0..2.0),
            u: 0.0,
        };
        let mut fine = exact;
        let mut u = 0.0;
        for n in 0..10_000 {
            if n % 250 == 0 {
                u = rng.random_range(-3.0..3.0);
            }
            exact = vehicle_step(&exact, u, dt, &params);
            fine = euler(&fine, u, dt, params.tau, 100);
        }
        for (x, y) in [(exact.p, fine.p), (exact.v, fine.v), (exact.a, fine.a)] {
            assert!((x - y).abs() <= 1e-4 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn noise_free_closed_loop_settles_after_maneuver() {
    let cfg = ScenarioConfig {
        comm_mode: CommMode::Continuous,
        noise: NoiseModel::noise_free(),
        ..Default::default()
    };
    let tr = simulate(&cfg, &AttackSignal::none()).unwrap();
    let last = tr.records.last().unwrap();
    for f in &last.followers {
        assert!(f.e.abs() < 1e-3, "spacing error {}", f.e);
    }
    let v = |r: &platoon_core::scenario::TraceRecord| r.vehicles[0].v;
    assert!(
        v(last) - v(&tr.records[0]) > 1.0,
        "the lead should have changed speed"
    );
}

#[test]
fn noise_free_output_error_stays_in_chattering_band() {
    let cfg = ScenarioConfig {
        comm_mode: CommMode::Continuous,
        noise: NoiseModel::noise_free(),
        ..Default::default()
    };
    let tr = simulate(&cfg, &AttackSignal::none()).unwrap();
    let band = cfg.observer.m_gain * cfg.dt;
    for r in tr.records.iter().filter(|r| r.t > 1.0) {
        for f in &r.followers {
            assert!(
                f.eps_y.amax() <= band * (1.0 + 1e-6),
                "t={} eps_y={}",
                r.t,
                f.eps_y
            );
        }
    }
}

fn trace_bytes(cfg: &ScenarioConfig) -> (Vec<u8>, String) {
    let out = run(cfg).unwrap();
    let mut buf = Vec::new();
    write_trace(&out.trace, &mut buf).unwrap();
    (buf, summary_json(&out))
}

#[test]
fn same_seed_gives_identical_outputs() {
    let cfg = ScenarioConfig {
        duration: 5.0,
        seed: 42,
        ..Default::default()
    };
    assert_eq!(trace_bytes(&cfg), trace_bytes(&cfg));
    let other = ScenarioConfig {
        seed: 43,
        ..cfg.clone()
    };
    assert_ne!(trace_bytes(&cfg).0, trace_bytes(&other).0);
}

#[test]
fn event_mode_at_every_step_reproduces_continuous_mode() {
    let base = ScenarioConfig {
        duration: 8.0,
        seed: 3,
        comm_mode: CommMode::Continuous,
        ..Default::default()
    };
    let event = ScenarioConfig {
        comm_mode: CommMode::Event,
        trigger: TriggerConfig {
            t_low: base.dt / 2.0,
            t_high: base.dt,
            dy_low: [1e-12; 2],
        },
        ..base.clone()
    };
    let a = simulate(&base, &AttackSignal::none()).unwrap();
    let b = simulate(&event, &AttackSignal::none()).unwrap();
    assert_eq!(a.transmissions.len(), b.transmissions.len());
    assert!(a.alarms.is_empty() && b.alarms.is_empty());
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert_eq!(ra.vehicles, rb.vehicles);
        for (fa, fb) in ra.followers.iter().zip(&rb.followers) {
            assert_eq!((fa.e, fa.e_hat, fa.edot_hat), (fb.e, fb.e_hat, fb.edot_hat));
            assert_eq!((fa.eps_y, fa.nu, fa.nu_fil), (fb.eps_y, fb.nu, fb.nu_fil));
            assert_eq!((fa.du_c, fa.du_hat), (fb.du_c, fb.du_hat));
            // thresholds differ only by the one-step communication change
            if fb.upper[0].is_finite() {
                assert!((fa.upper - fb.upper).amax() < 1e-2);
                assert!((fa.lower - fb.lower).amax() < 1e-2);
            }
        }
    }
}

#[test]
fn communication_error_bounded_by_input_change_over_max_interval() {
    let cfg = ScenarioConfig::default();
    let tr = simulate(&cfg, &AttackSignal::none()).unwrap();
    let span = (cfg.trigger.t_high / cfg.dt).round() as usize;
    for link in 1..cfg.vehicles {
        let u: Vec<f64> = tr.records.iter().map(|r| r.vehicles[link - 1].u).collect();
        let mut max_change = 0.0f64;
        for n in 0..u.len() {
            let window = &u[n.saturating_sub(span)..=n];
            let (lo, hi) = window
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                    (a.min(*x), b.max(*x))
                });
            max_change = max_change.max(hi - lo);
        }
        let max_err = tr
            .records
            .iter()
            .map(|r| r.followers[link - 1].du_c.abs())
            .fold(0.0, f64::max);
        assert!(max_err > 0.0);
        assert!(max_err <= max_change + 1e-12, "{max_err} > {max_change}");
    }
}

#[test]
fn attack_free_runs_have_no_delay() {
    let cfg = ScenarioConfig {
        duration: 6.0,
        ..Default::default()
    };
    let out = run(&cfg).unwrap();
    assert_eq!(out.metrics.detection_delay, None);
    assert_eq!(out.metrics.false_alarm_count, 0);
    assert_eq!(out.metrics.attack_onset, None);
}

#[test]
fn emitted_trace_has_one_row_per_tick() {
    let cfg = ScenarioConfig {
        duration: 2.0,
        attack: platoon_core::scenario::AttackConfig {
            schedule: vec![[1.0, 0.8]],
            ..Default::default()
        },
        ..Default::default()
    };
    let out = run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit(&out, dir.path()).unwrap();
    assert_eq!(files.len(), 6);

    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), cfg.ticks() + 2);
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));

    let plot = std::fs::read_to_string(dir.path().join("plot_eoi.csv")).unwrap();
    let header: Vec<&str> = plot.lines().next().unwrap().split(',').collect();
    let comm = header.iter().position(|c| *c == "comm").unwrap();
    let marked = plot
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(comm) == Some("1"))
        .count();
    assert_eq!(
        marked,
        out.trace
            .transmissions
            .iter()
            .filter(|e| e.link == 1)
            .count()
    );

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["metrics"]["seed"], 0);
    let alarms: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("alarms.json")).unwrap())
            .unwrap();
    assert_eq!(alarms.as_array().unwrap().len(), out.trace.alarms.len());
}

#[test]
fn emit_into_a_file_path_is_an_io_error() {
    let cfg = ScenarioConfig {
        duration: 0.1,
        ..Default::default()
    };
    let out = run(&cfg).unwrap();
    let file = tempfile::NamedTempFile::new().unwrap();
    let err = emit(&out, file.path()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn reference_run_is_fast() {
    let cfg = ScenarioConfig::default();
    let start = std::time::Instant::now();
    simulate(&cfg, &AttackSignal::constant_from(4.01, 0.7)).unwrap();
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "{elapsed:?}");
}
