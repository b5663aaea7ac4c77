//! Longitudinal vehicle model, spacing policy and CACC control law.
//!
//! Each vehicle is a third-order chain `p' = v, v' = a, a' = (u - a) / tau`
//! driven by the controller state `u`. Both the vehicle and the controller are
//! linear with piecewise-constant inputs at the simulation rate, so they are
//! advanced with their exact zero-order-hold solutions.

use nalgebra::{Matrix2, Matrix2x1, Matrix2x3, Matrix3, RowVector2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Engine time constant (s).
    pub tau: f64,
    /// Vehicle length (m).
    pub length: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            tau: 0.1,
            length: 4.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid(
                "tau",
                format!("must be > 0, got {}", self.tau),
            ));
        }
        if !(self.length.is_finite() && self.length >= 0.0) {
            return Err(Error::invalid(
                "length",
                format!("must be >= 0, got {}", self.length),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaccGains {
    pub kp: f64,
    pub kd: f64,
    /// Time headway (s).
    pub h: f64,
    /// Standstill distance (m).
    pub r: f64,
}

impl Default for CaccGains {
    fn default() -> Self {
        Self {
            kp: 0.2,
            kd: 0.7,
            h: 0.7,
            r: 1.5,
        }
    }
}

impl CaccGains {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.h) {
            return Err(Error::invalid("h", format!("must be > 0, got {}", self.h)));
        }
        if !pos(self.kp) {
            return Err(Error::invalid(
                "kp",
                format!("must be > 0, got {}", self.kp),
            ));
        }
        if !pos(self.kd) {
            return Err(Error::invalid(
                "kd",
                format!("must be > 0, got {}", self.kd),
            ));
        }
        if !(self.r.is_finite() && self.r >= 0.0) {
            return Err(Error::invalid("r", format!("must be >= 0, got {}", self.r)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub p: f64,
    pub v: f64,
    pub a: f64,
    /// Controller state, i.e. the intended acceleration fed to the engine.
    pub u: f64,
}

impl VehicleState {
    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.v.is_finite() && self.a.is_finite() && self.u.is_finite()
    }
}

/// Noisy sensor outputs of one vehicle at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// `(p, v, a) + xi`.
    pub y_local: Vector3<f64>,
    /// `(d, dv) + eta`; `None` for the lead vehicle.
    pub y_rel: Option<Vector2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// When false, every measurement is exact and no random numbers are drawn.
    pub enabled: bool,
    pub sigma_xi: [f64; 3],
    pub sigma_eta: [f64; 2],
    /// Bounds on |xi|; `None` means twice the standard deviation.
    pub xi_bar: Option<[f64; 3]>,
    pub eta_bar: Option<[f64; 2]>,
    /// Reject samples outside the bounds so they hold sample by sample.
    pub truncate: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            enabled: true,
            sigma_xi: [0.05; 3],
            sigma_eta: [0.05; 2],
            xi_bar: None,
            eta_bar: None,
            truncate: true,
        }
    }
}

impl NoiseModel {
    pub fn noise_free() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn xi_bound(&self) -> [f64; 3] {
        self.xi_bar.unwrap_or(self.sigma_xi.map(|s| 2.0 * s))
    }

    pub fn eta_bound(&self) -> [f64; 2] {
        self.eta_bar.unwrap_or(self.sigma_eta.map(|s| 2.0 * s))
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = self.sigma_xi.iter().chain(self.sigma_eta.iter());
        if sigmas.into_iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("sigma", "standard deviations must be >= 0"));
        }
        let bounds = self.xi_bound().into_iter().chain(self.eta_bound());
        if bounds.into_iter().any(|b| !(b.is_finite() && b > 0.0)) {
            return Err(Error::invalid(
                "noise bounds",
                "xi_bar and eta_bar must be > 0 (set explicitly when a sigma is zero)",
            ));
        }
        Ok(())
    }
}

/// Seeded sampler for the measurement noise of one vehicle.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    model: NoiseModel,
    xi_bar: [f64; 3],
    eta_bar: [f64; 2],
    rng: ChaCha8Rng,
}

impl NoiseSource {
    /// Each vehicle gets its own ChaCha stream so adding vehicles does not
    /// perturb the noise of the others.
    pub fn new(model: &NoiseModel, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            xi_bar: model.xi_bound(),
            eta_bar: model.eta_bound(),
            model: model.clone(),
            rng,
        }
    }

    fn draw(&mut self, sigma: f64, bound: f64) -> f64 {
        if !self.model.enabled || sigma == 0.0 {
            return 0.0;
        }
        let normal = Normal::new(0.0, sigma).expect("sigma validated finite and >= 0");
        if !self.model.truncate {
            return normal.sample(&mut self.rng);
        }
        loop {
            let x: f64 = normal.sample(&mut self.rng);
            if x.abs() <= bound {
                return x;
            }
        }
    }

    pub fn local(&mut self) -> Vector3<f64> {
        let s = self.model.sigma_xi;
        let b = self.xi_bar;
        Vector3::new(
            self.draw(s[0], b[0]),
            self.draw(s[1], b[1]),
            self.draw(s[2], b[2]),
        )
    }

    pub fn relative(&mut self) -> Vector2<f64> {
        let s = self.model.sigma_eta;
        let b = self.eta_bar;
        Vector2::new(self.draw(s[0], b[0]), self.draw(s[1], b[1]))
    }

    /// Uniform draw in `[0, 1)`, used by tests that need an independent stream.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }
}

/// Matrices of the spacing-error dynamics `x' = A x + B zeta`, `y = C x + D zeta`
/// and their partition into measured (`e`, `e'`) and unmeasured (`e''`) parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMatrices {
    pub a_e: Matrix3<f64>,
    pub b_e: Matrix3<f64>,
    pub c_e: Matrix2x3<f64>,
    pub a11: Matrix2<f64>,
    pub a12: Matrix2x1<f64>,
    pub a21: RowVector2<f64>,
    pub a22: f64,
    /// Gain of the communicated acceleration error on `e'''`, `-1 / tau`.
    pub b: f64,
}

impl ErrorMatrices {
    pub fn d_e(&self) -> Matrix2x3<f64> {
        self.c_e
    }
}

pub fn build_error_matrices(gains: &CaccGains, params: &VehicleParams) -> Result<ErrorMatrices> {
    params.validate()?;
    gains.validate()?;
    let tau = params.tau;
    let row = [-gains.kp / tau, -gains.kd / tau, -1.0 / tau];
    #[rustfmt::skip]
    let a_e = Matrix3::new(
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
        row[0], row[1], row[2],
    );
    #[rustfmt::skip]
    let b_e = Matrix3::new(
        0.0, 0.0, 0.0,
        0.0, 0.0, 0.0,
        row[0], row[1], row[2],
    );
    #[rustfmt::skip]
    let c_e = Matrix2x3::new(
        1.0, 0.0, 0.0,
        0.0, 1.0, 0.0,
    );
    Ok(ErrorMatrices {
        a_e,
        b_e,
        c_e,
        a11: a_e.fixed_view::<2, 2>(0, 0).into_owned(),
        a12: a_e.fixed_view::<2, 1>(0, 2).into_owned(),
        a21: a_e.fixed_view::<1, 2>(2, 0).into_owned(),
        a22: a_e[(2, 2)],
        b: -1.0 / tau,
    })
}

/// Advances `(p, v, a)` over `dt` with the engine input held at `u_cmd`.
/// The returned state carries `u_cmd` as its controller value.
pub fn vehicle_step(s: &VehicleState, u_cmd: f64, dt: f64, params: &VehicleParams) -> VehicleState {
    let tau = params.tau;
    // 1 - exp(-dt / tau), kept accurate for dt << tau
    let decay = -(-dt / tau).exp_m1();
    let da = s.a - u_cmd;
    VehicleState {
        p: s.p + s.v * dt + 0.5 * u_cmd * dt * dt + da * tau * (dt - tau * decay),
        v: s.v + u_cmd * dt + da * tau * decay,
        a: u_cmd + da * (1.0 - decay),
        u: u_cmd,
    }
}

pub fn desired_distance(v: f64, gains: &CaccGains) -> f64 {
    gains.r + gains.h * v
}

/// Spacing error and its derivative as seen through the sensors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoisyErrors {
    pub e_hat: f64,
    pub edot_hat: f64,
}

impl NoisyErrors {
    /// Builds `(e + eta1 - h xi2, e' + eta2 - h xi3)` from a follower's own measurement.
    pub fn from_measurement(meas: &Measurement, gains: &CaccGains) -> Option<Self> {
        let rel = meas.y_rel?;
        let v = meas.y_local[1];
        let a = meas.y_local[2];
        Some(Self {
            e_hat: rel[0] - desired_distance(v, gains),
            edot_hat: rel[1] - gains.h * a,
        })
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.e_hat, self.edot_hat)
    }
}

/// One ZOH step of `u' = (-u + kp e + kd e' + u_prev~) / h`.
pub fn cacc_control_step(
    u: f64,
    errs: &NoisyErrors,
    u_tilde_prev: f64,
    gains: &CaccGains,
    dt: f64,
) -> f64 {
    let target = gains.kp * errs.e_hat + gains.kd * errs.edot_hat + u_tilde_prev;
    target + (u - target) * (-dt / gains.h).exp()
}

/// Right-hand side of the controller ODE, exposed for tests and diagnostics.
pub fn cacc_control_rate(u: f64, errs: &NoisyErrors, u_tilde_prev: f64, gains: &CaccGains) -> f64 {
    (-u + gains.kp * errs.e_hat + gains.kd * errs.edot_hat + u_tilde_prev) / gains.h
}

pub fn measure_local(s: &VehicleState, noise: &mut NoiseSource) -> Vector3<f64> {
    Vector3::new(s.p, s.v, s.a) + noise.local()
}

/// Measures a follower against its predecessor. Local noise is drawn before
/// relative noise so the stream order is fixed.
pub fn measure(
    s: &VehicleState,
    pred: &VehicleState,
    noise: &mut NoiseSource,
    params: &VehicleParams,
) -> Measurement {
    let y_local = measure_local(s, noise);
    let d = pred.p - s.p - params.length;
    let dv = pred.v - s.v;
    Measurement {
        y_local,
        y_rel: Some(Vector2::new(d, dv) + noise.relative()),
    }
}

/// `(e, e', e'')` of a follower, computed from exact states.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorState {
    pub x_e: Vector3<f64>,
}

impl ErrorState {
    pub fn z1(&self) -> Vector2<f64> {
        Vector2::new(self.x_e[0], self.x_e[1])
    }

    pub fn z2(&self) -> f64 {
        self.x_e[2]
    }
}

pub fn true_error_state(
    s: &VehicleState,
    pred: &VehicleState,
    gains: &CaccGains,
    params: &VehicleParams,
) -> ErrorState {
    let d = pred.p - s.p - params.length;
    let e = d - desired_distance(s.v, gains);
    let edot = (pred.v - s.v) - gains.h * s.a;
    // e'' = (a_pred - a) - h a', with a' from the engine model
    let a_rate = (s.u - s.a) / params.tau;
    let eddot = (pred.a - s.a) - gains.h * a_rate;
    ErrorState {
        x_e: Vector3::new(e, edot, eddot),
    }
}
