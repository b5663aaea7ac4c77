//! Scenario files (TOML). Every field is optional; omitted fields take the
//! reference parameter set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{build_error_matrices, CaccGains, NoiseModel, VehicleParams};
use crate::error::{Error, Result};
use crate::network::{AttackSignal, CommMode, TriggerConfig};
use crate::observer::ObserverConfig;

/// Piecewise-linear acceleration schedule of the lead vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeadProfile {
    /// Common initial speed of the platoon (m/s).
    pub initial_speed: f64,
    /// `(t, accel)` breakpoints, linearly interpolated and held at both ends.
    pub accel: Vec<[f64; 2]>,
}

impl Default for LeadProfile {
    fn default() -> Self {
        // speed-up starting at 2.01 s and a slow-down around 12 s
        Self {
            initial_speed: 10.0,
            accel: vec![
                [0.0, 0.0],
                [2.01, 0.0],
                [2.51, 1.0],
                [6.0, 1.0],
                [6.5, 0.0],
                [12.0, 0.0],
                [12.5, -1.0],
                [14.5, -1.0],
                [15.0, 0.0],
            ],
        }
    }
}

impl LeadProfile {
    pub fn accel_at(&self, t: f64) -> f64 {
        let pts = &self.accel;
        match pts.len() {
            0 => 0.0,
            _ if t <= pts[0][0] => pts[0][1],
            _ => {
                let idx = pts.partition_point(|p| p[0] <= t);
                if idx == pts.len() {
                    return pts[idx - 1][1];
                }
                let [t0, a0] = pts[idx - 1];
                let [t1, a1] = pts[idx];
                if t1 == t0 {
                    a1
                } else {
                    a0 + (a1 - a0) * (t - t0) / (t1 - t0)
                }
            }
        }
    }

    /// First instant the commanded acceleration departs from its initial value.
    pub fn maneuver_onset(&self) -> Option<f64> {
        let first = self.accel.first()?[1];
        self.accel
            .windows(2)
            .find(|w| w[1][1] != first)
            .map(|w| w[0][0])
    }

    fn validate(&self) -> Result<()> {
        if !self.initial_speed.is_finite() {
            return Err(config_err("lead.initial_speed", "must be finite"));
        }
        if self.accel.iter().flatten().any(|x| !x.is_finite()) {
            return Err(config_err("lead.accel", "breakpoints must be finite"));
        }
        if self.accel.windows(2).any(|w| w[1][0] < w[0][0]) {
            return Err(config_err(
                "lead.accel",
                "breakpoint times must be nondecreasing",
            ));
        }
        Ok(())
    }
}

/// Attack whose magnitude is set from an attack-free calibration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibratedAttack {
    pub onset: f64,
    /// Multiple of the steady-state upper threshold.
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Follower whose incoming link is attacked (1-based from the lead's successor).
    pub target: usize,
    /// `(t, phi)` breakpoints of a piecewise-constant injection.
    pub schedule: Vec<[f64; 2]>,
    /// Replaces `schedule` with a constant injection sized from a calibration run.
    pub calibrated: Option<CalibratedAttack>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            target: 1,
            schedule: Vec::new(),
            calibrated: None,
        }
    }
}

impl AttackConfig {
    pub fn signal(&self) -> Result<AttackSignal> {
        AttackSignal::new(self.schedule.iter().map(|p| (p[0], p[1])).collect())
            .map_err(|_| config_err("attack.schedule", "entries must be finite"))
    }

    pub fn is_active(&self) -> bool {
        self.calibrated.is_some() || self.schedule.iter().any(|p| p[1] != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Number of vehicles including the lead.
    pub vehicles: usize,
    /// Simulated time (s).
    pub duration: f64,
    /// Simulation step (s).
    pub dt: f64,
    pub comm_mode: CommMode,
    pub seed: u64,
    pub vehicle: VehicleParams,
    pub cacc: CaccGains,
    pub noise: NoiseModel,
    pub trigger: TriggerConfig,
    pub observer: ObserverConfig,
    pub lead: LeadProfile,
    pub attack: AttackConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".to_string(),
            vehicles: 3,
            duration: 20.0,
            dt: 1e-3,
            comm_mode: CommMode::Event,
            seed: 0,
            vehicle: VehicleParams::default(),
            cacc: CaccGains::default(),
            noise: NoiseModel::default(),
            trigger: TriggerConfig::default(),
            observer: ObserverConfig::default(),
            lead: LeadProfile::default(),
            attack: AttackConfig::default(),
        }
    }
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => {
            config_err(&format!("{prefix}.{field}"), reason)
        }
        Error::DwellUndefined { component, value } => config_err(
            "observer.m_gain",
            format!("lower rate bound on component {component} is {value}; raise m_gain"),
        ),
        other => other,
    }
}

impl ScenarioConfig {
    pub fn ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.vehicles < 2 {
            return Err(config_err(
                "vehicles",
                "need at least 2 vehicles (one follower)",
            ));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(config_err("duration", "must be > 0"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= self.duration) {
            return Err(config_err("dt", "must be > 0 and no longer than duration"));
        }
        if self.attack.target < 1 || self.attack.target > self.vehicles - 1 {
            return Err(config_err(
                "attack.target",
                format!(
                    "must be in [1, {}], got {}",
                    self.vehicles - 1,
                    self.attack.target
                ),
            ));
        }
        if let Some(c) = self.attack.calibrated {
            if !(c.onset.is_finite() && c.factor.is_finite() && c.factor > 0.0) {
                return Err(config_err(
                    "attack.calibrated",
                    "onset finite and factor > 0",
                ));
            }
        }
        self.attack.signal()?;
        self.lead.validate()?;
        self.vehicle
            .validate()
            .map_err(|e| prefixed("vehicle", e))?;
        self.cacc.validate().map_err(|e| prefixed("cacc", e))?;
        self.noise.validate().map_err(|e| prefixed("noise", e))?;
        if self.comm_mode == CommMode::Event {
            self.trigger
                .validate()
                .map_err(|e| prefixed("trigger", e))?;
        }
        self.observer
            .validate()
            .map_err(|e| prefixed("observer", e))?;
        let mats = build_error_matrices(&self.cacc, &self.vehicle)?;
        self.observer
            .check_gain_condition(&mats, &self.noise, &self.cacc)
            .map_err(|e| prefixed("observer", e))?;
        // the dwell bound must exist from the first instant
        crate::thresholds::compute_bounds(&self.observer, &mats, &self.noise, &self.cacc, 0.0, 0.0)
            .map_err(|e| prefixed("observer", e))?;
        Ok(())
    }

    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(src).map_err(|e| {
            let field = e
                .span()
                .and_then(|span| field_at(src, span.start))
                .unwrap_or_else(|| "<document>".to_string());
            config_err(&field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

/// Dotted key of the assignment containing byte offset `pos`.
fn field_at(src: &str, pos: usize) -> Option<String> {
    let mut table = String::new();
    let mut offset = 0;
    for line in src.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            table = trimmed
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
        }
        if pos < offset + line.len() {
            let key = trimmed.split('=').next()?.trim();
            if key.is_empty() || key.starts_with('[') {
                return (!table.is_empty()).then_some(table);
            }
            return Some(if table.is_empty() {
                key.to_string()
            } else {
                format!("{table}.{key}")
            });
        }
        offset += line.len();
    }
    None
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_toml_str(&src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let c = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(c.vehicle.tau, 0.1);
        assert_eq!(c.noise.sigma_xi, [0.05; 3]);
        assert_eq!(c.noise.sigma_eta, [0.05; 2]);
        assert_eq!(c.noise.xi_bound(), [0.1; 3]);
        assert_eq!(c.noise.eta_bound(), [0.1; 2]);
        assert_eq!(c.trigger.t_low, 0.1);
        assert_eq!(c.trigger.t_high, 1.0);
        assert_eq!(c.trigger.dy_low, [4.0, 0.5]);
        assert_eq!(
            (c.cacc.kp, c.cacc.kd, c.cacc.h, c.cacc.r),
            (0.2, 0.7, 0.7, 1.5)
        );
        assert_eq!(c.observer.p, [[0.0; 2]; 2]);
        assert_eq!(c.observer.m_gain, 20.0);
        assert_eq!(c.observer.k_filter, 2.0);
        assert_eq!(c.observer.eps2_0, 10.0);
        assert_eq!(c.dt, 1e-3);
        assert_eq!(c, ScenarioConfig::default());
    }

    #[test]
    fn single_vehicle_is_rejected() {
        let e = ScenarioConfig::from_toml_str("vehicles = 1").unwrap_err();
        assert!(
            matches!(e, Error::Config { ref field, .. } if field == "vehicles"),
            "{e}"
        );
    }

    #[test]
    fn attack_target_out_of_range() {
        let e = ScenarioConfig::from_toml_str("vehicles = 3\n[attack]\ntarget = 5\n").unwrap_err();
        assert!(
            matches!(e, Error::Config { ref field, .. } if field == "attack.target"),
            "{e}"
        );
    }

    #[test]
    fn type_errors_name_the_field() {
        let e = ScenarioConfig::from_toml_str("[cacc]\nkp = \"fast\"\n").unwrap_err();
        assert!(
            matches!(e, Error::Config { ref field, .. } if field == "cacc.kp"),
            "{e}"
        );
        let e = ScenarioConfig::from_toml_str("[observer]\nmgain = 3.0\n").unwrap_err();
        assert!(matches!(e, Error::Config { .. }), "{e}");
    }

    #[test]
    fn semantic_errors_are_prefixed() {
        let e = ScenarioConfig::from_toml_str("[vehicle]\ntau = -1.0\n").unwrap_err();
        assert!(
            matches!(e, Error::Config { ref field, .. } if field == "vehicle.tau"),
            "{e}"
        );
        let e = ScenarioConfig::from_toml_str("[observer]\nm_gain = 0.5\n").unwrap_err();
        assert!(
            matches!(e, Error::Config { ref field, .. } if field.starts_with("observer")),
            "{e}"
        );
    }

    #[test]
    fn toml_round_trip() {
        let c = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn lead_profile_interpolates() {
        let p = LeadProfile::default();
        assert_eq!(p.accel_at(0.0), 0.0);
        assert_eq!(p.accel_at(2.0), 0.0);
        assert!((p.accel_at(2.26) - 0.5).abs() < 1e-12);
        assert_eq!(p.accel_at(4.0), 1.0);
        assert_eq!(p.accel_at(13.0), -1.0);
        assert_eq!(p.accel_at(100.0), 0.0);
        assert_eq!(p.maneuver_onset(), Some(2.01));
    }
}
