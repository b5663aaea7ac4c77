//! Adaptive detection thresholds on the filtered output injection.
//!
//! Every component of the output error runs its own switch clock. At the
//! start of each positive interval an upper bound on `nu_fil` is computed as
//! the minimum of a one-switch-ahead bound (anchored on the current `nu_fil`)
//! and a multiple-switches-ahead bound (chained from the previous bound and
//! the measured length of the interval that just ended). Negative intervals
//! produce the mirrored lower bound.
//!
//! Under event-triggered communication the bounds depend on the delivery
//! error of the whole inter-transmission window, so samples are buffered and
//! the chain is replayed when the next transmission arrives.

use nalgebra::Vector2;
use serde::Serialize;

use crate::dynamics::{CaccGains, ErrorMatrices, NoiseModel};
use crate::error::{Error, Result};
use crate::network::CommMode;
use crate::observer::ObserverConfig;

/// All analytic bounds at one instant of the observer's life.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSet {
    pub zeta_bar: Vector2<f64>,
    pub eps1_bar: Vector2<f64>,
    pub eps2_0: f64,
    /// Bound on the unmeasured estimation error at the evaluation time.
    pub eps2_bar: f64,
    /// Limit of `eps2_bar` once the initial transient has decayed.
    pub eps2_steady: f64,
    pub eps1dot_min: Vector2<f64>,
    pub eps1dot_max: Vector2<f64>,
    pub nu_bar: Vector2<f64>,
    /// Lower magnitude bound on the injection, clamped at `-nu_bar`.
    pub nu_under: Vector2<f64>,
    pub nu_under_clamped: [bool; 2],
    pub t_bar: Vector2<f64>,
    /// `M > |A12 eps2_bar| + |A11 zeta_bar|` holds at this instant.
    pub gain_condition: bool,
}

/// Bounds for an observer started `t_since_start` seconds ago, with `du` the
/// assumed constant delivery error (zero for the attack-free design).
pub fn compute_bounds(
    cfg: &ObserverConfig,
    mats: &ErrorMatrices,
    noise: &NoiseModel,
    gains: &CaccGains,
    du: f64,
    t_since_start: f64,
) -> Result<BoundSet> {
    let eta = noise.eta_bound();
    let xi = noise.xi_bound();
    let zeta_bar = Vector2::new(eta[0] + gains.h * xi[1], eta[1] + gains.h * xi[2]);
    let eps1_bar = zeta_bar;
    let sum = eps1_bar + zeta_bar;

    let a22_abs = mats.a22.abs();
    let eps2_steady = ((mats.a21 * sum)[0].abs() + (mats.b * du).abs()) / a22_abs;
    let transient = if t_since_start.is_finite() {
        cfg.eps2_0 * (mats.a22 * t_since_start).exp()
    } else {
        0.0
    };
    let eps2_bar = transient + eps2_steady;

    let m = cfg.m_gain;
    let p = cfg.p_matrix();
    let a12_eps2 = (mats.a12 * eps2_bar).abs();
    let a11_zeta = (mats.a11 * zeta_bar).abs();
    let eps1dot_min = a12_eps2.map(|x| m - x);
    let eps1dot_max = (p * sum).abs() + a12_eps2 + a11_zeta.add_scalar(m);

    let injection = ((mats.a11 + p) * sum).abs();
    let nu_bar = injection.add_scalar(m);
    let raw_under = injection.map(|x| m - x);
    let mut nu_under = raw_under;
    let mut nu_under_clamped = [false; 2];
    for j in 0..2 {
        if raw_under[j] < -nu_bar[j] {
            nu_under[j] = -nu_bar[j];
            nu_under_clamped[j] = true;
        }
    }

    for j in 0..2 {
        if eps1dot_min[j].is_nan() || eps1dot_min[j] <= 0.0 {
            return Err(Error::DwellUndefined {
                component: j + 1,
                value: eps1dot_min[j],
            });
        }
    }
    let t_bar = Vector2::new(
        2.0 * eps1_bar[0] / eps1dot_min[0],
        2.0 * eps1_bar[1] / eps1dot_min[1],
    );
    let need = a12_eps2 + a11_zeta;
    let gain_condition = m > need[0] && m > need[1];

    Ok(BoundSet {
        zeta_bar,
        eps1_bar,
        eps2_0: cfg.eps2_0,
        eps2_bar,
        eps2_steady,
        eps1dot_min,
        eps1dot_max,
        nu_bar,
        nu_under,
        nu_under_clamped,
        t_bar,
        gain_condition,
    })
}

/// Longest time the output error can keep one sign without an attack.
pub fn max_dwell_time(b: &BoundSet) -> Result<Vector2<f64>> {
    for j in 0..2 {
        if b.eps1dot_min[j].is_nan() || b.eps1dot_min[j] <= 0.0 {
            return Err(Error::DwellUndefined {
                component: j + 1,
                value: b.eps1dot_min[j],
            });
        }
    }
    Ok(Vector2::new(
        2.0 * b.eps1_bar[0] / b.eps1dot_min[0],
        2.0 * b.eps1_bar[1] / b.eps1dot_min[1],
    ))
}

/// One-switch-ahead bound anchored on the filter value at the switch.
pub fn osa_threshold(nu_fil_at_switch: f64, b: &BoundSet, k: f64, j: usize) -> f64 {
    let decay = (-k * b.t_bar[j]).exp();
    decay * nu_fil_at_switch + (1.0 - decay) * b.nu_bar[j]
}

/// Worst-case length of the next same-sign interval after an opposite
/// interval of length `t_minus`.
pub fn hypothetical_t_plus(t_minus: f64, b: &BoundSet, j: usize) -> f64 {
    b.eps1dot_max[j] / b.eps1dot_min[j] * t_minus
}

/// Multiple-switches-ahead bound chained from `prev_bound`.
pub fn msa_threshold(prev_bound: f64, t_minus: f64, b: &BoundSet, k: f64, j: usize) -> f64 {
    let t_plus = hypothetical_t_plus(t_minus, b, j);
    let d_minus = (-k * t_minus).exp();
    let d_plus = (-k * t_plus).exp();
    d_plus * (d_minus * prev_bound - (1.0 - d_minus) * b.nu_under[j]) + (1.0 - d_plus) * b.nu_bar[j]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Initial one-switch-ahead bound with the filter at zero.
    Bootstrap,
    Osa,
    Msa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bound {
    pub value: f64,
    pub branch: Branch,
}

/// Minimum of the two branches; a tie is labelled MSA.
pub fn combined_threshold(osa: f64, msa: f64) -> Bound {
    if osa < msa {
        Bound {
            value: osa,
            branch: Branch::Osa,
        }
    } else {
        Bound {
            value: msa,
            branch: Branch::Msa,
        }
    }
}

/// Previous bound used by the MSA recursion at the `k`-th recomputation
/// (`k = 1` is the first switch back to the original sign). `history[i]` is
/// the combined bound at the `i`-th recomputation, `history[0]` being the
/// bootstrap value.
pub fn bootstrap_rule(k: usize, history: &[f64], osa_t0: f64) -> f64 {
    if k <= 1 {
        osa_t0
    } else {
        history[k - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlarmEvent {
    /// Instant the alarm was raised.
    pub time: f64,
    /// Instant of the offending sample; differs from `time` under deferred evaluation.
    pub sample_time: f64,
    /// 1-based component of the output injection.
    pub component: usize,
    pub value: f64,
    pub bound: f64,
    pub side: Side,
    pub mode: CommMode,
}

pub fn check_alarm(
    nu_fil: &Vector2<f64>,
    upper: &Vector2<f64>,
    lower: &Vector2<f64>,
    t: f64,
    mode: CommMode,
) -> Option<AlarmEvent> {
    (0..2).find_map(|j| {
        let (side, bound) = if nu_fil[j] > upper[j] {
            (Side::Upper, upper[j])
        } else if nu_fil[j] < lower[j] {
            (Side::Lower, lower[j])
        } else {
            return None;
        };
        Some(AlarmEvent {
            time: t,
            sample_time: t,
            component: j + 1,
            value: nu_fil[j],
            bound,
            side,
            mode,
        })
    })
}

/// Threshold recursion of one component, both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentChain {
    j: usize,
    k_filter: f64,
    sign: i8,
    interval_start: f64,
    upper: Bound,
    /// Magnitude of the lower bound; the bound itself is `-lower`.
    lower: Bound,
    upper_count: usize,
    lower_count: usize,
}

impl ComponentChain {
    /// Bootstraps both directions with `nu_fil(t0) = 0`.
    pub fn new(j: usize, k_filter: f64, t0: f64, b0: &BoundSet) -> Self {
        let init = Bound {
            value: osa_threshold(0.0, b0, k_filter, j),
            branch: Branch::Bootstrap,
        };
        Self {
            j,
            k_filter,
            sign: 0,
            interval_start: t0,
            upper: init,
            lower: init,
            upper_count: 0,
            lower_count: 0,
        }
    }

    pub fn upper(&self) -> Bound {
        self.upper
    }

    pub fn lower(&self) -> Bound {
        Bound {
            value: -self.lower.value,
            branch: self.lower.branch,
        }
    }

    /// Number of recomputations of (upper, lower).
    pub fn counts(&self) -> (usize, usize) {
        (self.upper_count, self.lower_count)
    }

    /// True when a sample with `sign` at this point starts a new interval.
    pub fn is_switch(&self, sign: i8) -> bool {
        sign != 0 && self.sign != 0 && sign != self.sign
    }

    /// Feeds the sign held at `t`. `bounds` is only queried on a switch.
    pub fn advance(
        &mut self,
        t: f64,
        sign: i8,
        nu_fil: f64,
        bounds: impl FnOnce() -> Result<BoundSet>,
    ) -> Result<()> {
        if sign == 0 {
            return Ok(());
        }
        if self.sign == 0 {
            self.sign = sign;
            return Ok(());
        }
        if sign == self.sign {
            return Ok(());
        }
        let b = bounds()?;
        let t_minus = t - self.interval_start;
        let (j, k) = (self.j, self.k_filter);
        if sign > 0 {
            let osa = osa_threshold(nu_fil, &b, k, j);
            let msa = msa_threshold(self.upper.value, t_minus, &b, k, j);
            self.upper = combined_threshold(osa, msa);
            self.upper_count += 1;
        } else {
            let osa = osa_threshold(-nu_fil, &b, k, j);
            let msa = msa_threshold(self.lower.value, t_minus, &b, k, j);
            self.lower = combined_threshold(osa, msa);
            self.lower_count += 1;
        }
        self.sign = sign;
        self.interval_start = t;
        Ok(())
    }
}

/// Inputs of the threshold design that do not change during a run.
#[derive(Debug, Clone)]
pub struct ThresholdDesign {
    pub observer: ObserverConfig,
    pub mats: ErrorMatrices,
    pub noise: NoiseModel,
    pub gains: CaccGains,
    /// Observer start time.
    pub t0: f64,
}

impl ThresholdDesign {
    pub fn bounds_at(&self, t: f64, du: f64) -> Result<BoundSet> {
        compute_bounds(
            &self.observer,
            &self.mats,
            &self.noise,
            &self.gains,
            du,
            t - self.t0,
        )
    }
}

/// One buffered observer sample awaiting threshold evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingSample {
    pub tick: usize,
    pub t: f64,
    pub sign: [i8; 2],
    pub nu_fil: Vector2<f64>,
}

/// Thresholds and verdict for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluated {
    pub tick: usize,
    pub t: f64,
    pub upper: Vector2<f64>,
    pub lower: Vector2<f64>,
    pub branches: [[Branch; 2]; 2],
    pub nu_under_clamped: bool,
    pub alarm: Option<AlarmEvent>,
}

/// Replays `chains` over a window of samples with the bounds inflated by
/// `du_bar`, evaluating each sample against the bounds in force at it.
/// Fails with `EmptyWindow` if no component switched inside the window, in
/// which case `chains` is left untouched.
pub fn retroactive_update(
    chains: &mut [ComponentChain; 2],
    window: &[PendingSample],
    du_bar: f64,
    design: &ThresholdDesign,
    raised_at: f64,
    mode: CommMode,
) -> Result<Vec<Evaluated>> {
    let any_switch = (0..2).any(|j| {
        let mut held = chains[j].sign;
        window.iter().any(|s| {
            let switched = s.sign[j] != 0 && held != 0 && s.sign[j] != held;
            if s.sign[j] != 0 {
                held = s.sign[j];
            }
            switched
        })
    });
    if !any_switch {
        return Err(Error::EmptyWindow);
    }
    evaluate_window(chains, window, du_bar, design, raised_at, mode)
}

fn evaluate_window(
    chains: &mut [ComponentChain; 2],
    window: &[PendingSample],
    du: f64,
    design: &ThresholdDesign,
    raised_at: f64,
    mode: CommMode,
) -> Result<Vec<Evaluated>> {
    let mut out = Vec::with_capacity(window.len());
    for s in window {
        let mut cached: Option<BoundSet> = None;
        let mut clamped = false;
        for (j, chain) in chains.iter_mut().enumerate() {
            chain.advance(s.t, s.sign[j], s.nu_fil[j], || {
                let b = match cached {
                    Some(b) => b,
                    None => design.bounds_at(s.t, du)?,
                };
                cached = Some(b);
                Ok(b)
            })?;
        }
        if let Some(b) = cached {
            clamped = b.nu_under_clamped.iter().any(|c| *c);
        }
        let upper = Vector2::new(chains[0].upper().value, chains[1].upper().value);
        let lower = Vector2::new(chains[0].lower().value, chains[1].lower().value);
        let alarm = check_alarm(&s.nu_fil, &upper, &lower, s.t, mode).map(|mut a| {
            a.time = raised_at;
            a
        });
        out.push(Evaluated {
            tick: s.tick,
            t: s.t,
            upper,
            lower,
            branches: [
                [chains[0].upper().branch, chains[1].upper().branch],
                [chains[0].lower().branch, chains[1].lower().branch],
            ],
            nu_under_clamped: clamped,
            alarm,
        });
    }
    Ok(out)
}

/// Threshold bookkeeping for one follower's observer.
#[derive(Debug, Clone)]
pub struct ThresholdMonitor {
    design: ThresholdDesign,
    mode: CommMode,
    chains: [ComponentChain; 2],
    pending: Vec<PendingSample>,
    warned_gain: bool,
    empty_windows: usize,
}

impl ThresholdMonitor {
    pub fn new(design: ThresholdDesign, mode: CommMode) -> Result<Self> {
        let b0 = design.bounds_at(design.t0, 0.0)?;
        let k = design.observer.k_filter;
        let chains = [
            ComponentChain::new(0, k, design.t0, &b0),
            ComponentChain::new(1, k, design.t0, &b0),
        ];
        Ok(Self {
            design,
            mode,
            chains,
            pending: Vec::new(),
            warned_gain: false,
            empty_windows: 0,
        })
    }

    pub fn mode(&self) -> CommMode {
        self.mode
    }

    pub fn design(&self) -> &ThresholdDesign {
        &self.design
    }

    /// Current bounds `(upper, lower)` of the committed chain.
    pub fn current(&self) -> (Vector2<f64>, Vector2<f64>) {
        (
            Vector2::new(self.chains[0].upper().value, self.chains[1].upper().value),
            Vector2::new(self.chains[0].lower().value, self.chains[1].lower().value),
        )
    }

    pub fn empty_windows(&self) -> usize {
        self.empty_windows
    }

    fn warn_gain(&mut self, t: f64) {
        if self.warned_gain {
            return;
        }
        if let Ok(b) = self.design.bounds_at(t, 0.0) {
            if !b.gain_condition {
                log::warn!("switching gain below the boundedness condition at t = {t:.3} s");
                self.warned_gain = true;
            }
        }
    }

    /// Continuous communication: evaluates the sample immediately with the
    /// attack-free bounds.
    pub fn process_immediate(&mut self, sample: PendingSample) -> Result<Evaluated> {
        self.warn_gain(sample.t);
        let mode = self.mode;
        let out = evaluate_window(
            &mut self.chains,
            std::slice::from_ref(&sample),
            0.0,
            &self.design,
            sample.t,
            mode,
        )?;
        Ok(out[0])
    }

    /// Event-triggered communication: holds the sample until the window closes.
    pub fn push_pending(&mut self, sample: PendingSample) {
        self.pending.push(sample);
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Closes the window at a transmission instant, replaying the chain with
    /// the delivery change `du_bar`. An empty window yields no evaluations.
    pub fn close_window(&mut self, du_bar: f64, tau_l: f64) -> Result<Vec<Evaluated>> {
        self.warn_gain(tau_l);
        let window = std::mem::take(&mut self.pending);
        let mode = self.mode;
        match retroactive_update(&mut self.chains, &window, du_bar, &self.design, tau_l, mode) {
            Ok(v) => Ok(v),
            Err(Error::EmptyWindow) => {
                self.empty_windows += 1;
                Ok(Vec::new())
            }
            Err(e) => Err(e),
        }
    }
}
