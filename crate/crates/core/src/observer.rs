//! Sliding-mode observer on the spacing-error outputs.
//!
//! The measured part `z1 = (e, e')` is driven to the measurement by the
//! discontinuous injection `nu`; its low-pass filtered version `nu_fil`
//! (the equivalent output injection) carries the effect of the unknown input
//! on the unmeasured state `z2 = e''`.

use std::collections::VecDeque;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{CaccGains, ErrorMatrices, NoiseModel};
use crate::error::{Error, Result};

/// Number of recent switch instants kept per component.
const SWITCH_HISTORY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverConfig {
    /// Row-major linear output-error gain.
    pub p: [[f64; 2]; 2],
    /// Switching gain.
    pub m_gain: f64,
    /// Pole of the equivalent-output-injection filter (1/s).
    pub k_filter: f64,
    /// Initial bound on the unmeasured estimation error (m/s^3 scale).
    pub eps2_0: f64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            p: [[0.0; 2]; 2],
            m_gain: 20.0,
            k_filter: 2.0,
            eps2_0: 10.0,
        }
    }
}

impl ObserverConfig {
    pub fn p_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.p[0][0], self.p[0][1], self.p[1][0], self.p[1][1])
    }

    /// Checks the scalar invariants and that `P` is positive semidefinite.
    pub fn validate(&self) -> Result<()> {
        if !(self.m_gain.is_finite() && self.m_gain > 0.0) {
            return Err(Error::invalid(
                "m_gain",
                format!("must be > 0, got {}", self.m_gain),
            ));
        }
        if !(self.k_filter.is_finite() && self.k_filter > 0.0) {
            return Err(Error::invalid(
                "k_filter",
                format!("must be > 0, got {}", self.k_filter),
            ));
        }
        if !(self.eps2_0.is_finite() && self.eps2_0 >= 0.0) {
            return Err(Error::invalid("eps2_0", "must be >= 0"));
        }
        let p = self.p_matrix();
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("p", "entries must be finite"));
        }
        let sym = (p + p.transpose()) * 0.5;
        let (tr, det) = (sym.trace(), sym.determinant());
        if tr < 0.0 || det < -1e-12 {
            return Err(Error::invalid("p", "must be positive semidefinite"));
        }
        Ok(())
    }

    /// Sufficient gain for bounded `eps1`: `M > |A12 eps2_bar| + |A11 zeta_bar|`
    /// componentwise, evaluated with the steady-state `eps2_bar`.
    pub fn check_gain_condition(
        &self,
        mats: &ErrorMatrices,
        noise: &NoiseModel,
        gains: &CaccGains,
    ) -> Result<()> {
        let b = crate::thresholds::compute_bounds(self, mats, noise, gains, 0.0, f64::INFINITY)?;
        let need = (mats.a12 * b.eps2_bar).abs() + (mats.a11 * b.zeta_bar).abs();
        for j in 0..2 {
            if self.m_gain <= need[j] {
                return Err(Error::invalid(
                    "m_gain",
                    format!(
                        "switching gain {} does not exceed {:.4} on component {}",
                        self.m_gain,
                        need[j],
                        j + 1
                    ),
                ));
            }
        }
        Ok(())
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(A11 + P) eps_y + M sgn(eps_y)` with `sgn(0) = 0`.
pub fn pseudo_control(
    eps_y: &Vector2<f64>,
    cfg: &ObserverConfig,
    mats: &ErrorMatrices,
) -> Vector2<f64> {
    (mats.a11 + cfg.p_matrix()) * eps_y + eps_y.map(sgn) * cfg.m_gain
}

/// Exact discrete update of `K / (s + K)` for an input held over `dt`.
pub fn eoi_filter_step(nu_fil: &Vector2<f64>, nu: &Vector2<f64>, k: f64, dt: f64) -> Vector2<f64> {
    let gain = -(-k * dt).exp_m1();
    nu_fil + (nu - nu_fil) * gain
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputError {
    pub eps_y: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub z1_hat: Vector2<f64>,
    pub z2_hat: f64,
    /// Injection applied over the last step.
    pub nu: Vector2<f64>,
    pub nu_fil: Vector2<f64>,
    /// Last nonzero sign of each output-error component (0 before the first).
    pub sgn_prev: [i8; 2],
    pub switch_times: [VecDeque<f64>; 2],
}

impl ObserverState {
    /// Starts on the first measurement with `z2_hat = 0` and a zero filter.
    pub fn new(y_e0: Vector2<f64>) -> Self {
        Self {
            z1_hat: y_e0,
            z2_hat: 0.0,
            nu: Vector2::zeros(),
            nu_fil: Vector2::zeros(),
            sgn_prev: [0; 2],
            switch_times: [VecDeque::new(), VecDeque::new()],
        }
    }
}

pub fn output_error(obs: &ObserverState, y_e: &Vector2<f64>) -> OutputError {
    OutputError {
        eps_y: obs.z1_hat - y_e,
    }
}

/// What happened to the output error at the sampled instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverSample {
    pub eps_y: Vector2<f64>,
    pub nu: Vector2<f64>,
    /// Sign held by each component at this instant (last nonzero sign).
    pub sign: [i8; 2],
    /// Component changed sign at this instant.
    pub switched: [bool; 2],
}

/// Samples the output error at `t`, then advances the estimates by one
/// forward-Euler step. The filter is not touched.
pub fn observer_step(
    obs: &ObserverState,
    y_e: &Vector2<f64>,
    t: f64,
    cfg: &ObserverConfig,
    mats: &ErrorMatrices,
    dt: f64,
) -> (ObserverState, ObserverSample) {
    let eps_y = output_error(obs, y_e).eps_y;
    let nu = pseudo_control(&eps_y, cfg, mats);

    let mut next = obs.clone();
    let mut switched = [false; 2];
    for j in 0..2 {
        let s = sgn(eps_y[j]) as i8;
        if s != 0 {
            if next.sgn_prev[j] != 0 && s != next.sgn_prev[j] {
                switched[j] = true;
                let times = &mut next.switch_times[j];
                if times.len() == SWITCH_HISTORY {
                    times.pop_front();
                }
                times.push_back(t);
            }
            next.sgn_prev[j] = s;
        }
    }

    let z1_rate = mats.a11 * obs.z1_hat + mats.a12 * obs.z2_hat - nu;
    let z2_rate = (mats.a21 * obs.z1_hat)[0] + mats.a22 * obs.z2_hat;
    next.z1_hat = obs.z1_hat + z1_rate * dt;
    next.z2_hat = obs.z2_hat + z2_rate * dt;
    next.nu = nu;

    let sample = ObserverSample {
        eps_y,
        nu,
        sign: next.sgn_prev,
        switched,
    };
    (next, sample)
}

/// Observer plus its output-injection filter, advanced together.
#[derive(Debug, Clone)]
pub struct SlidingModeObserver {
    cfg: ObserverConfig,
    mats: ErrorMatrices,
    state: ObserverState,
}

impl SlidingModeObserver {
    pub fn new(cfg: ObserverConfig, mats: ErrorMatrices, y_e0: Vector2<f64>) -> Self {
        Self {
            cfg,
            mats,
            state: ObserverState::new(y_e0),
        }
    }

    pub fn state(&self) -> &ObserverState {
        &self.state
    }

    /// Processes the measurement at `t`. The returned filter value is the one
    /// held at `t`, before this step's update.
    pub fn step(&mut self, y_e: &Vector2<f64>, t: f64, dt: f64) -> (ObserverSample, Vector2<f64>) {
        let nu_fil_now = self.state.nu_fil;
        let (mut next, sample) = observer_step(&self.state, y_e, t, &self.cfg, &self.mats, dt);
        next.nu_fil = eoi_filter_step(&nu_fil_now, &sample.nu, self.cfg.k_filter, dt);
        self.state = next;
        (sample, nu_fil_now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_error_matrices, VehicleParams};
    use approx::assert_relative_eq;

    fn mats() -> ErrorMatrices {
        build_error_matrices(&CaccGains::default(), &VehicleParams::default()).unwrap()
    }

    #[test]
    fn pseudo_control_examples() {
        let cfg = ObserverConfig::default();
        let m = mats();
        assert_eq!(
            pseudo_control(&Vector2::zeros(), &cfg, &m),
            Vector2::zeros()
        );
        let nu = pseudo_control(&Vector2::new(0.1, 0.2), &cfg, &m);
        assert_relative_eq!(nu[0], 20.2, epsilon = 1e-12);
        assert_relative_eq!(nu[1], 20.0, epsilon = 1e-12);
        let nu = pseudo_control(&Vector2::new(-0.1, -0.2), &cfg, &m);
        assert_relative_eq!(nu[0], -20.2, epsilon = 1e-12);
        assert_relative_eq!(nu[1], -20.0, epsilon = 1e-12);
    }

    #[test]
    fn output_error_is_difference() {
        let mut s = ObserverState::new(Vector2::new(1.0, 2.0));
        assert_eq!(
            output_error(&s, &Vector2::new(1.0, 2.0)).eps_y,
            Vector2::zeros()
        );
        s.z1_hat = Vector2::new(1.0, 2.0);
        let e = output_error(&s, &Vector2::new(0.5, 2.5)).eps_y;
        assert_eq!(e, Vector2::new(0.5, -0.5));
    }

    #[test]
    fn exact_estimate_follows_homogeneous_dynamics() {
        let m = mats();
        let cfg = ObserverConfig::default();
        let mut s = ObserverState::new(Vector2::new(0.3, -0.1));
        s.z2_hat = 0.05;
        let y = s.z1_hat;
        let (n, sample) = observer_step(&s, &y, 0.0, &cfg, &m, 1e-3);
        assert_eq!(sample.nu, Vector2::zeros());
        let expect = s.z1_hat + (m.a11 * s.z1_hat + m.a12 * s.z2_hat) * 1e-3;
        assert_relative_eq!(n.z1_hat, expect, epsilon = 1e-15);
    }

    #[test]
    fn positive_error_pulls_estimate_down() {
        let m = mats();
        let cfg = ObserverConfig::default();
        let s = ObserverState::new(Vector2::new(0.5, 0.5));
        let y = Vector2::new(0.4, 0.3);
        let (n, sample) = observer_step(&s, &y, 0.0, &cfg, &m, 1e-3);
        let drift = m.a11 * s.z1_hat + m.a12 * s.z2_hat;
        let expect = s.z1_hat - (sample.nu - drift) * 1e-3;
        assert_relative_eq!(n.z1_hat, expect, epsilon = 1e-15);
        assert!(n.z1_hat[0] < s.z1_hat[0] && n.z1_hat[1] < s.z1_hat[1]);
    }

    #[test]
    fn switches_are_recorded_per_component() {
        let m = mats();
        let cfg = ObserverConfig::default();
        let mut s = ObserverState::new(Vector2::zeros());
        let dt = 1e-3;
        let ys = [
            Vector2::new(-1.0, -1.0),
            Vector2::new(1.0, -1.0),
            Vector2::new(-1.0, -1.0),
        ];
        let mut all = Vec::new();
        for (k, y) in ys.iter().enumerate() {
            s.z1_hat = Vector2::zeros();
            let (n, sample) = observer_step(&s, y, k as f64 * dt, &cfg, &m, dt);
            all.push(sample.switched);
            s = n;
        }
        assert_eq!(all, vec![[false, false], [true, false], [true, false]]);
        assert_eq!(s.switch_times[0].len(), 2);
        assert!(s.switch_times[1].is_empty());
    }

    #[test]
    fn filter_fixed_point() {
        let v = Vector2::new(0.3, -1.2);
        assert_eq!(eoi_filter_step(&v, &v, 2.0, 1e-3), v);
    }

    #[test]
    fn filter_step_response() {
        let dt = 1e-3;
        let mut f = Vector2::zeros();
        let nu = Vector2::new(1.0, -2.0);
        for _ in 0..500 {
            f = eoi_filter_step(&f, &nu, 2.0, dt);
        }
        assert_relative_eq!(f[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(f[1] / -2.0, 0.6321, epsilon = 1e-4);
        assert_eq!(
            ObserverState::new(Vector2::new(3.0, 4.0)).nu_fil,
            Vector2::zeros()
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = ObserverConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.p = [[-1.0, 0.0], [0.0, 1.0]];
        assert!(cfg.validate().is_err());
        cfg.p = [[1.0, 0.0], [0.0, 2.0]];
        assert!(cfg.validate().is_ok());
        cfg.m_gain = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gain_condition() {
        let m = mats();
        let noise = NoiseModel::default();
        let g = CaccGains::default();
        assert!(ObserverConfig::default()
            .check_gain_condition(&m, &noise, &g)
            .is_ok());
        let weak = ObserverConfig {
            m_gain: 0.2,
            ..Default::default()
        };
        assert!(weak.check_gain_condition(&m, &noise, &g).is_err());
    }
}
