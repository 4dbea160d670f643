//! Experiment description and deterministic user geometry.
//!
//! All quantities are stored in linear units; decibel values only exist at the
//! configuration boundary (see [`db_to_linear`] and [`dbm_to_watts`]).

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::dma::Constraint;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Stopping rules for the iterative solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    /// Relative objective decrease per EWR sweep.
    pub ewr_tol: f64,
    pub ewr_max_sweeps: usize,
    /// Relative change of the WMMSE objective between outer iterations.
    pub wmmse_tol: f64,
    pub wmmse_max_iterations: usize,
    /// Relative change of the augmented-Lagrangian objective (PDD inner loop).
    pub pdd_inner_tol: f64,
    pub pdd_inner_max: usize,
    pub pdd_outer_max: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ewr_tol: 1e-6,
            ewr_max_sweeps: 100,
            wmmse_tol: 1e-4,
            wmmse_max_iterations: 200,
            pdd_inner_tol: 1e-4,
            pdd_inner_max: 100,
            pdd_outer_max: 200,
        }
    }
}

/// Penalty-dual-decomposition schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PddSettings {
    /// Initial penalty `β`.
    pub penalty: f64,
    /// Penalty shrink factor `c₁ < 1`.
    pub penalty_shrink: f64,
    /// Violation-threshold factor `c₂ < 1`.
    pub threshold_factor: f64,
    /// Stop once the violation `h` drops below this.
    pub violation_tol: f64,
    /// Initial violation threshold `η`.
    pub initial_threshold: f64,
}

impl Default for PddSettings {
    fn default() -> Self {
        Self {
            penalty: 1e5,
            penalty_shrink: 0.5,
            threshold_factor: 1.0 / 6.0,
            violation_tol: 1e-5,
            initial_threshold: 1.0,
        }
    }
}

/// Circuit power figures for the energy-efficiency comparison (watts).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerModel {
    pub amplifier_efficiency: f64,
    pub rf_chain: f64,
    pub base_station: f64,
    pub phase_shifter: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            amplifier_efficiency: 0.35,
            rf_chain: dbm_to_watts(27.0),
            base_station: dbm_to_watts(39.0),
            phase_shifter: dbm_to_watts(17.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Number of microstrips `L` (one RF chain each).
    pub microstrips: usize,
    /// Elements per microstrip `S`.
    pub elements_per_microstrip: usize,
    /// Number of single-antenna users `K`.
    pub users: usize,
    pub wavelength: f64,
    pub spacing_x: f64,
    pub spacing_z: f64,
    /// Waveguide attenuation (1/m).
    pub waveguide_attenuation: f64,
    /// Guide wavenumber (1/m).
    pub waveguide_wavenumber: f64,
    /// Optional per-element feed distances (m), length `N`. Defaults to `s·d_x`.
    pub feed_distances: Option<Vec<f64>>,
    /// Rician factor `K0` (linear).
    pub rician_factor: f64,
    /// Exponential-correlation coefficient `r`.
    pub correlation: f64,
    pub pathloss_exponent: f64,
    /// Reference path loss at `reference_distance` (linear).
    pub reference_loss: f64,
    pub reference_distance: f64,
    /// Uplink receiver noise power `N0` (linear).
    pub uplink_noise: f64,
    /// Downlink per-user noise power `N_k` (W).
    pub downlink_noise: f64,
    /// Downlink power budget (W); unused for uplink runs.
    pub max_power: Option<f64>,
    pub dma_position: [f64; 3],
    pub user_center: [f64; 3],
    pub user_radius: f64,
    pub randomize_users: bool,
    pub constraint: Constraint,
    pub trials: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub pdd: PddSettings,
    pub power_model: PowerModel,
}

impl Default for Scenario {
    fn default() -> Self {
        let wavelength = 1.07e-2;
        Self {
            microstrips: 8,
            elements_per_microstrip: 8,
            users: 4,
            wavelength,
            spacing_x: wavelength / 2.0,
            spacing_z: wavelength / 2.0,
            waveguide_attenuation: 0.6,
            waveguide_wavenumber: 827.67,
            feed_distances: None,
            rician_factor: 10.0,
            correlation: 0.7,
            pathloss_exponent: 2.5,
            reference_loss: db_to_linear(-30.0),
            reference_distance: 1.0,
            uplink_noise: db_to_linear(-80.0),
            downlink_noise: dbm_to_watts(-80.0),
            max_power: Some(dbm_to_watts(5.0)),
            dma_position: [0.0, 0.0, 20.0],
            user_center: [0.0, 200.0, 0.0],
            user_radius: 20.0,
            randomize_users: false,
            constraint: Constraint::Lorentzian,
            trials: 10_000,
            seed: 0,
            tolerances: Tolerances::default(),
            pdd: PddSettings::default(),
            power_model: PowerModel::default(),
        }
    }
}

fn invalid(key: &'static str, reason: impl Into<alloc::string::String>) -> Error {
    Error::InvalidParameter {
        key,
        reason: reason.into(),
    }
}

impl Scenario {
    /// Total element count `N = L·S`.
    pub fn elements(&self) -> usize {
        self.microstrips * self.elements_per_microstrip
    }

    pub fn max_power(&self) -> Result<f64> {
        self.max_power
            .ok_or_else(|| invalid("Pmax", "downlink run requires a power budget"))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(
                    key,
                    format!("must be positive and finite, got {v}"),
                ))
            }
        };
        if self.microstrips == 0 {
            return Err(invalid("L", "must be at least 1"));
        }
        if self.elements_per_microstrip == 0 {
            return Err(invalid("S", "must be at least 1"));
        }
        if self.users == 0 {
            return Err(invalid("K", "must be at least 1"));
        }
        positive("wavelength", self.wavelength)?;
        positive("dx", self.spacing_x)?;
        positive("dz", self.spacing_z)?;
        positive("user_radius", self.user_radius)?;
        positive("D0", self.reference_distance)?;
        positive("alpha0", self.reference_loss)?;
        positive("N0", self.uplink_noise)?;
        positive("Nk", self.downlink_noise)?;
        positive("gamma_wg", self.waveguide_wavenumber)?;
        if !(self.waveguide_attenuation >= 0.0 && self.waveguide_attenuation.is_finite()) {
            return Err(invalid("alpha_wg", "must be non-negative"));
        }
        if !(self.rician_factor >= 0.0) || self.rician_factor.is_nan() {
            return Err(invalid("K0", "must be non-negative"));
        }
        if !(self.correlation > 0.0 && self.correlation < 1.0) {
            return Err(invalid(
                "r",
                format!("must lie in (0, 1), got {}", self.correlation),
            ));
        }
        if !self.pathloss_exponent.is_finite() {
            return Err(invalid("pathloss_exponent", "must be finite"));
        }
        if let Some(p) = self.max_power {
            positive("Pmax", p)?;
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if let Some(rho) = &self.feed_distances {
            if rho.len() != self.elements() {
                return Err(invalid(
                    "feed_distances",
                    format!("expected {} entries, got {}", self.elements(), rho.len()),
                ));
            }
            if rho.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return Err(invalid("feed_distances", "entries must be non-negative"));
            }
        }
        let pm = &self.power_model;
        if !(pm.amplifier_efficiency > 0.0 && pm.amplifier_efficiency <= 1.0) {
            return Err(invalid("amplifier_efficiency", "must lie in (0, 1]"));
        }
        let pdd = &self.pdd;
        positive("penalty", pdd.penalty)?;
        positive("pdd_eps", pdd.violation_tol)?;
        if !(pdd.penalty_shrink > 0.0 && pdd.penalty_shrink < 1.0) {
            return Err(invalid("c1", "must lie in (0, 1)"));
        }
        if !(pdd.threshold_factor > 0.0 && pdd.threshold_factor < 1.0) {
            return Err(invalid("c2", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserGeometry {
    pub position: [f64; 3],
    /// Distance to the DMA centre (m).
    pub distance: f64,
    /// Azimuth angle of arrival `ψ` in the (x, y) plane (rad).
    pub azimuth: f64,
    /// Polar angle `ω` measured from the array z-axis (rad).
    pub elevation: f64,
    /// Large-scale gain `α_k` (linear).
    pub path_loss: f64,
}

impl UserGeometry {
    /// Unit vector from the DMA towards the user, rebuilt from `(ψ, ω)`.
    pub fn direction(&self) -> [f64; 3] {
        let (sw, cw) = self.elevation.sin_cos();
        let (sp, cp) = self.azimuth.sin_cos();
        [sw * cp, sw * sp, cw]
    }
}

/// `α0 · (D/D0)^(−Γ)`.
pub fn path_loss(distance: f64, sc: &Scenario) -> f64 {
    sc.reference_loss * (distance / sc.reference_distance).powf(-sc.pathloss_exponent)
}

/// Places `K` users on the configured circle in the ground plane.
///
/// User `k` sits at angle `2πk/K` unless `randomize_users` is set, in which
/// case the angles are drawn uniformly from the scenario seed.
pub fn place_users(sc: &Scenario) -> Vec<UserGeometry> {
    let k = sc.users;
    let angles: Vec<f64> = if sc.randomize_users {
        let mut rng = rng::stream(sc.seed, Purpose::UserPlacement, 0);
        (0..k).map(|_| rng.random::<f64>() * 2.0 * PI).collect()
    } else {
        (0..k).map(|i| 2.0 * PI * i as f64 / k as f64).collect()
    };
    angles
        .into_iter()
        .map(|phi| {
            let (s, c) = phi.sin_cos();
            let position = [
                sc.user_center[0] + sc.user_radius * c,
                sc.user_center[1] + sc.user_radius * s,
                sc.user_center[2],
            ];
            geometry_for(position, sc)
        })
        .collect()
}

pub fn geometry_for(position: [f64; 3], sc: &Scenario) -> UserGeometry {
    let d = [
        position[0] - sc.dma_position[0],
        position[1] - sc.dma_position[1],
        position[2] - sc.dma_position[2],
    ];
    let distance = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let elevation = (d[2] / distance).clamp(-1.0, 1.0).acos();
    let azimuth = d[1].atan2(d[0]);
    UserGeometry {
        position,
        distance,
        azimuth,
        elevation,
        path_loss: path_loss(distance, sc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_validate() {
        Scenario::default().validate().unwrap();
    }

    #[test]
    fn reference_loss_from_db() {
        assert_relative_eq!(db_to_linear(-30.0), 1e-3, max_relative = 1e-15);
        assert_relative_eq!(db_to_linear(10.0), 10.0, max_relative = 1e-15);
        assert_relative_eq!(
            dbm_to_watts(5.0),
            3.1622776601683795e-3,
            max_relative = 1e-14
        );
    }

    #[test]
    fn path_loss_at_200m() {
        let sc = Scenario::default();
        // 1e-3 * 200^-2.5
        let expected = 1e-3 / (200f64 * 200.0 * 200f64.sqrt());
        assert_relative_eq!(path_loss(200.0, &sc), expected, max_relative = 1e-14);
        assert_relative_eq!(path_loss(200.0, &sc), 1.7678e-9, max_relative = 1e-4);
        assert_relative_eq!(path_loss(1.0, &sc), sc.reference_loss);
    }

    #[test]
    fn path_loss_decreasing() {
        let sc = Scenario::default();
        let mut prev = f64::INFINITY;
        for d in [1.0, 2.0, 10.0, 150.0, 200.0, 220.0, 1000.0] {
            let a = path_loss(d, &sc);
            assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn single_user_distance_bounds() {
        let sc = Scenario {
            users: 1,
            ..Scenario::default()
        };
        let u = &place_users(&sc)[0];
        let lo = (180f64 * 180.0 + 400.0).sqrt();
        let hi = (220f64 * 220.0 + 400.0).sqrt();
        assert!(u.distance >= lo && u.distance <= hi, "{}", u.distance);
    }

    #[test]
    fn direction_round_trip() {
        let sc = Scenario {
            users: 7,
            ..Scenario::default()
        };
        for u in place_users(&sc) {
            let d: [f64; 3] =
                core::array::from_fn(|i| (u.position[i] - sc.dma_position[i]) / u.distance);
            let r = u.direction();
            for i in 0..3 {
                assert!((d[i] - r[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn placement_is_pure() {
        let sc = Scenario::default();
        assert_eq!(place_users(&sc), place_users(&sc));
        let rnd = Scenario {
            randomize_users: true,
            seed: 9,
            ..Scenario::default()
        };
        assert_eq!(place_users(&rnd), place_users(&rnd));
        assert_ne!(place_users(&rnd), place_users(&sc));
    }

    #[test]
    fn rejects_bad_correlation() {
        let sc = Scenario {
            correlation: 1.0,
            ..Scenario::default()
        };
        match sc.validate() {
            Err(Error::InvalidParameter { key, .. }) => assert_eq!(key, "r"),
            other => panic!("{other:?}"),
        }
    }
}
