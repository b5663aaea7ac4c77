//! Closed-loop simulation of the platoon with one observer per follower.
//!
//! Per tick, in order: measure, trigger/transmit (closing threshold windows
//! in event mode), observe and filter, thresholds, estimate, control, and
//! finally advance the vehicles.

use nalgebra::Vector2;

use crate::dynamics::{
    build_error_matrices, cacc_control_step, desired_distance, measure, measure_local,
    true_error_state, vehicle_step, ErrorMatrices, Measurement, NoiseSource, NoisyErrors,
    VehicleState,
};
use crate::error::{Error, Result};
use crate::estimator::AttackEstimator;
use crate::network::{
    comm_error, delta_u_bar, transmit, trigger_check, AttackSignal, CommMode, CommState,
    WindowExtremum,
};
use crate::observer::SlidingModeObserver;
use crate::thresholds::{AlarmEvent, Evaluated, PendingSample, ThresholdDesign, ThresholdMonitor};

use super::config::ScenarioConfig;
use super::metrics::{compute_metrics, RunMetrics};

/// Tolerance when testing the monotone-input assumption between sends.
const EXTREMUM_TOL: f64 = 1e-6;

/// Per-follower part of a trace record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerRecord {
    pub e: f64,
    pub edot: f64,
    pub e_hat: f64,
    pub edot_hat: f64,
    /// `z1_hat - z1` from exact states.
    pub eps1: Vector2<f64>,
    /// `z2_hat - z2` from exact states.
    pub eps2: f64,
    pub eps_y: Vector2<f64>,
    pub nu: Vector2<f64>,
    pub nu_fil: Vector2<f64>,
    /// NaN until evaluated (deferred under event-triggered communication).
    pub upper: Vector2<f64>,
    pub lower: Vector2<f64>,
    pub alarm: bool,
    /// A transmission on the incoming link happened at this tick.
    pub comm: bool,
    /// Injection contained in the value currently held by the receiver.
    pub phi: f64,
    pub du_c: f64,
    pub du_hat: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub vehicles: Vec<VehicleState>,
    pub followers: Vec<FollowerRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionEvent {
    pub t: f64,
    /// Receiving follower.
    pub link: usize,
    pub payload: f64,
    pub attacked: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub vehicles: usize,
    pub records: Vec<TraceRecord>,
    pub transmissions: Vec<TransmissionEvent>,
    /// Alarms of all followers, by follower index (1-based) and event.
    pub alarms: Vec<(usize, AlarmEvent)>,
    /// Windows whose sender input had an interior extremum, by link.
    pub extremum_violations: Vec<(usize, f64)>,
    pub empty_windows: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    /// Attack actually injected (after calibration, if any).
    pub attack: AttackSignal,
    pub trace: Trace,
    pub metrics: RunMetrics,
}

struct Follower {
    observer: SlidingModeObserver,
    monitor: ThresholdMonitor,
    estimator: AttackEstimator,
    link: CommState,
    extremum: WindowExtremum,
}

fn initial_platoon(cfg: &ScenarioConfig) -> Vec<VehicleState> {
    let v0 = cfg.lead.initial_speed;
    let gap = cfg.vehicle.length + desired_distance(v0, &cfg.cacc);
    (0..cfg.vehicles)
        .map(|i| VehicleState {
            p: -(i as f64) * gap,
            v: v0,
            a: 0.0,
            u: 0.0,
        })
        .collect()
}

fn check_finite(t: f64, states: &[VehicleState], followers: &[FollowerRecord]) -> Result<()> {
    if let Some(i) = states.iter().position(|s| !s.is_finite()) {
        return Err(Error::Divergence {
            t,
            what: format!("state of vehicle {i} is not finite"),
        });
    }
    for (k, f) in followers.iter().enumerate() {
        let ok = f.nu_fil.iter().all(|x| x.is_finite()) && f.eps_y.iter().all(|x| x.is_finite());
        if !ok {
            return Err(Error::Divergence {
                t,
                what: format!("observer of follower {} is not finite", k + 1),
            });
        }
    }
    Ok(())
}

fn patch(trace: &mut Trace, follower: usize, evals: &[Evaluated]) {
    for ev in evals {
        let rec = &mut trace.records[ev.tick].followers[follower - 1];
        rec.upper = ev.upper;
        rec.lower = ev.lower;
        rec.clamped = ev.nu_under_clamped;
        if let Some(a) = ev.alarm {
            rec.alarm = true;
            trace.alarms.push((follower, a));
        }
    }
}

/// Runs `cfg` with the injection `attack` on link `cfg.attack.target`.
pub fn simulate(cfg: &ScenarioConfig, attack: &AttackSignal) -> Result<Trace> {
    cfg.validate()?;
    let mats: ErrorMatrices = build_error_matrices(&cfg.cacc, &cfg.vehicle)?;
    let m = cfg.vehicles;
    let dt = cfg.dt;
    let ticks = cfg.ticks();
    let target = cfg.attack.target;
    let none = AttackSignal::none();
    let attack_for = |link: usize| if link == target { attack } else { &none };

    let mut noise: Vec<NoiseSource> = (0..m)
        .map(|i| NoiseSource::new(&cfg.noise, cfg.seed, i as u64))
        .collect();
    let mut states = initial_platoon(cfg);
    states[0].u = cfg.lead.accel_at(0.0);

    let mut trace = Trace {
        vehicles: m,
        records: Vec::with_capacity(ticks + 1),
        ..Default::default()
    };
    let mut followers: Vec<Follower> = Vec::with_capacity(m - 1);

    for n in 0..=ticks {
        let t = n as f64 * dt;

        let mut meas: Vec<Measurement> = Vec::with_capacity(m);
        meas.push(Measurement {
            y_local: measure_local(&states[0], &mut noise[0]),
            y_rel: None,
        });
        for i in 1..m {
            meas.push(measure(
                &states[i],
                &states[i - 1],
                &mut noise[i],
                &cfg.vehicle,
            ));
        }
        let errs: Vec<NoisyErrors> = (1..m)
            .map(|i| NoisyErrors::from_measurement(&meas[i], &cfg.cacc).expect("follower"))
            .collect();

        if n == 0 {
            for i in 1..m {
                let y_send = meas[i - 1].y_local.fixed_rows::<2>(0).into_owned();
                let link = CommState::initial(states[i - 1].u, y_send, t, attack_for(i));
                let design = ThresholdDesign {
                    observer: cfg.observer,
                    mats,
                    noise: cfg.noise.clone(),
                    gains: cfg.cacc,
                    t0: t,
                };
                let mut extremum = WindowExtremum::default();
                extremum.reset(states[i - 1].u);
                followers.push(Follower {
                    observer: SlidingModeObserver::new(cfg.observer, mats, errs[i - 1].as_vector()),
                    monitor: ThresholdMonitor::new(design, cfg.comm_mode)?,
                    estimator: AttackEstimator::new(mats, cfg.observer.k_filter, t),
                    link,
                    extremum,
                });
                trace.transmissions.push(TransmissionEvent {
                    t,
                    link: i,
                    payload: link.u_tilde_last,
                    attacked: link.phi_applied != 0.0,
                });
            }
        }

        // links
        let mut comm = vec![n == 0; m - 1];
        for i in 1..m {
            if n == 0 {
                continue;
            }
            let u_send = states[i - 1].u;
            let f = &mut followers[i - 1];
            let y_send = meas[i - 1].y_local.fixed_rows::<2>(0).into_owned();
            let fire = match cfg.comm_mode {
                CommMode::Continuous => true,
                CommMode::Event => trigger_check(&f.link, &y_send, t, &cfg.trigger),
            };
            if !fire {
                continue;
            }
            f.link = transmit(&f.link, u_send, &y_send, t, attack_for(i));
            comm[i - 1] = true;
            trace.transmissions.push(TransmissionEvent {
                t,
                link: i,
                payload: f.link.u_tilde_last,
                attacked: f.link.phi_applied != 0.0,
            });
            if cfg.comm_mode == CommMode::Event {
                if f.extremum.violated(u_send, EXTREMUM_TOL) {
                    trace.extremum_violations.push((i, t));
                }
                f.extremum.reset(u_send);
                let du_bar = delta_u_bar(&f.link).unwrap_or(0.0);
                let evals = f.monitor.close_window(du_bar, t)?;
                patch(&mut trace, i, &evals);
            }
        }

        // observers, thresholds, estimates
        let mut frecs: Vec<FollowerRecord> = Vec::with_capacity(m - 1);
        let mut immediate: Vec<(usize, Evaluated)> = Vec::new();
        for i in 1..m {
            let f = &mut followers[i - 1];
            let truth = true_error_state(&states[i], &states[i - 1], &cfg.cacc, &cfg.vehicle);
            let z1_hat = f.observer.state().z1_hat;
            let z2_hat = f.observer.state().z2_hat;
            let e = errs[i - 1];
            let (sample, nu_fil) = f.observer.step(&e.as_vector(), t, dt);
            let pending = PendingSample {
                tick: n,
                t,
                sign: sample.sign,
                nu_fil,
            };
            let mut upper = Vector2::repeat(f64::NAN);
            let mut lower = Vector2::repeat(f64::NAN);
            match cfg.comm_mode {
                CommMode::Continuous => {
                    let ev = f.monitor.process_immediate(pending)?;
                    upper = ev.upper;
                    lower = ev.lower;
                    immediate.push((i, ev));
                }
                CommMode::Event => f.monitor.push_pending(pending),
            }
            let u_pred = states[i - 1].u;
            f.extremum.observe(u_pred);
            frecs.push(FollowerRecord {
                e: truth.x_e[0],
                edot: truth.x_e[1],
                e_hat: e.e_hat,
                edot_hat: e.edot_hat,
                eps1: z1_hat - truth.z1(),
                eps2: z2_hat - truth.z2(),
                eps_y: sample.eps_y,
                nu: sample.nu,
                nu_fil,
                upper,
                lower,
                alarm: false,
                comm: comm[i - 1],
                phi: f.link.phi_applied,
                du_c: comm_error(u_pred, &f.link),
                du_hat: f.estimator.estimate(&nu_fil)?.du_hat,
                clamped: false,
            });
        }
        check_finite(t, &states, &frecs)?;
        trace.records.push(TraceRecord {
            t,
            vehicles: states.clone(),
            followers: frecs,
        });
        for (i, ev) in immediate {
            patch(&mut trace, i, std::slice::from_ref(&ev));
        }

        if n == ticks {
            break;
        }

        // control and vehicle motion over [t, t + dt)
        let mut next = Vec::with_capacity(m);
        next.push({
            let mut s = vehicle_step(&states[0], states[0].u, dt, &cfg.vehicle);
            s.u = cfg.lead.accel_at(t + dt);
            s
        });
        for i in 1..m {
            let u_tilde = followers[i - 1].link.u_tilde_last;
            let u_next = cacc_control_step(states[i].u, &errs[i - 1], u_tilde, &cfg.cacc, dt);
            let mut s = vehicle_step(&states[i], states[i].u, dt, &cfg.vehicle);
            s.u = u_next;
            next.push(s);
        }
        states = next;
    }

    trace.empty_windows = followers.iter().map(|f| f.monitor.empty_windows()).sum();
    Ok(trace)
}

/// Attack-free calibration: steady-state upper threshold of the target follower.
pub fn calibrate(cfg: &ScenarioConfig) -> Result<Vector2<f64>> {
    let mut clean = cfg.clone();
    clean.attack.schedule.clear();
    clean.attack.calibrated = None;
    let trace = simulate(&clean, &AttackSignal::none())?;
    Ok(super::metrics::steady_state_threshold(
        &trace,
        clean.attack.target,
    ))
}

/// Resolves the attack (running a calibration first if requested), simulates
/// and computes metrics.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let attack = match cfg.attack.calibrated {
        Some(c) => {
            let steady = calibrate(cfg)?;
            AttackSignal::constant_from(c.onset, c.factor * steady[1])
        }
        None => cfg.attack.signal()?,
    };
    let trace = simulate(cfg, &attack)?;
    let metrics = compute_metrics(&trace, cfg, &attack);
    Ok(RunOutput {
        config: cfg.clone(),
        attack,
        trace,
        metrics,
    })
}
