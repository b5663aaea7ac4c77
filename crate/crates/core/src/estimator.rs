//! Attack magnitude estimate from the filtered output injection.

use nalgebra::{RowVector2, Vector2};

use crate::dynamics::ErrorMatrices;
use crate::error::{Error, Result};

/// Settling horizon of the injection filter, in filter time constants.
pub const SETTLING_TIME_CONSTANTS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackEstimate {
    /// Estimated delivery error of the predecessor's acceleration (m/s^2).
    pub du_hat: f64,
    /// Time after which the filter has settled from its initial state.
    pub valid_from: f64,
}

/// Moore-Penrose inverse of a column vector, `c^T / (c^T c)`.
fn column_pinv(c: &Vector2<f64>) -> RowVector2<f64> {
    let n2 = c.norm_squared();
    if n2 == 0.0 {
        RowVector2::zeros()
    } else {
        c.transpose() / n2
    }
}

/// `b^-1 A22 A12^+ nu_fil`.
pub fn estimate_attack(nu_fil: &Vector2<f64>, mats: &ErrorMatrices) -> Result<f64> {
    if mats.b == 0.0 {
        return Err(Error::invalid("b", "input gain is zero"));
    }
    let a12 = Vector2::new(mats.a12[0], mats.a12[1]);
    Ok(mats.a22 / mats.b * (column_pinv(&a12) * nu_fil)[0])
}

/// Estimator bound to one observer.
#[derive(Debug, Clone, Copy)]
pub struct AttackEstimator {
    mats: ErrorMatrices,
    valid_from: f64,
}

impl AttackEstimator {
    pub fn new(mats: ErrorMatrices, k_filter: f64, t0: f64) -> Self {
        Self {
            mats,
            valid_from: t0 + SETTLING_TIME_CONSTANTS / k_filter,
        }
    }

    pub fn estimate(&self, nu_fil: &Vector2<f64>) -> Result<AttackEstimate> {
        Ok(AttackEstimate {
            du_hat: estimate_attack(nu_fil, &self.mats)?,
            valid_from: self.valid_from,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_error_matrices, CaccGains, VehicleParams};
    use proptest::prelude::*;

    fn mats(tau: f64) -> ErrorMatrices {
        build_error_matrices(&CaccGains::default(), &VehicleParams { tau, length: 4.0 }).unwrap()
    }

    #[test]
    fn reduces_to_second_component() {
        let m = mats(0.1);
        assert!((m.a22 / m.b - 1.0).abs() < 1e-15);
        let est = estimate_attack(&Vector2::new(0.3, -0.5), &m).unwrap();
        assert!((est + 0.5).abs() < 1e-15);
    }

    #[test]
    fn first_component_is_in_the_null_space() {
        let m = mats(0.1);
        for x in [-3.0, 0.0, 0.7, 12.0] {
            assert_eq!(estimate_attack(&Vector2::new(x, 0.0), &m).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_input_gain_is_rejected() {
        let mut m = mats(0.1);
        m.b = 0.0;
        assert!(estimate_attack(&Vector2::new(1.0, 1.0), &m).is_err());
    }

    #[test]
    fn valid_from_is_filter_settling() {
        let e = AttackEstimator::new(mats(0.1), 2.0, 0.0);
        assert_eq!(e.estimate(&Vector2::zeros()).unwrap().valid_from, 2.5);
    }

    proptest! {
        #[test]
        fn linear_and_tau_independent(
            tau in 0.01f64..5.0,
            a in -10.0f64..10.0, b in -10.0f64..10.0,
            c in -10.0f64..10.0, d in -10.0f64..10.0,
            s in -4.0f64..4.0,
        ) {
            let m = mats(tau);
            let x = Vector2::new(a, b);
            let y = Vector2::new(c, d);
            let lhs = estimate_attack(&(x * s + y), &m).unwrap();
            let rhs = s * estimate_attack(&x, &m).unwrap() + estimate_attack(&y, &m).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
            prop_assert!((estimate_attack(&x, &m).unwrap() - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }
}
