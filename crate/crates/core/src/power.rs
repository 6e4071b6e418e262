//! Rotary-wing propulsion power model and battery bookkeeping.
//!
//! The power draw of a UAV is modeled as the sum of blade profile power,
//! induced power, and fuselage parasite power, parameterized by the
//! physical airframe constants in [`PowerParams`]. At zero forward speed
//! the parasite term vanishes and the model reduces to hover power.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the rotary-wing propulsion model.
///
/// Defaults describe a small surveillance quadrotor hovering at low
/// altitude; all fields must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    /// UAV weight in Newtons.
    pub weight_newtons: f64,
    /// Rotor radius in meters.
    pub rotor_radius_m: f64,
    /// Blade angular velocity in radians per second.
    pub blade_angular_velocity_rad_s: f64,
    /// Rotor solidity (dimensionless).
    pub rotor_solidity: f64,
    /// Fuselage drag ratio (dimensionless).
    pub fuselage_drag_ratio: f64,
    /// Air density in kg/m^3.
    pub air_density_kg_m3: f64,
    /// Rotor disc area in m^2.
    pub rotor_disc_area_m2: f64,
    /// Tip speed of the rotor blade in m/s.
    pub tip_speed: f64,
    /// Mean rotor induced velocity while hovering, m/s.
    pub mean_rotor_induced_velocity_m_s: f64,
    /// Profile drag coefficient (dimensionless).
    pub profile_drag_coefficient: f64,
    /// Incremental correction factor to the induced power (dimensionless).
    /// Some parameter tables list this same factor under the name `k`.
    pub induced_power_correction: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            weight_newtons: 50.0,
            rotor_radius_m: 0.25,
            blade_angular_velocity_rad_s: 400.0,
            rotor_solidity: 0.05,
            fuselage_drag_ratio: 0.3,
            air_density_kg_m3: 1.225,
            rotor_disc_area_m2: 0.1963,
            tip_speed: 100.0,
            mean_rotor_induced_velocity_m_s: 10.2,
            profile_drag_coefficient: 0.012,
            induced_power_correction: 0.1,
        }
    }
}

impl PowerParams {
    /// Checks that every constant is strictly positive and finite.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("weight_newtons", self.weight_newtons),
            ("rotor_radius_m", self.rotor_radius_m),
            (
                "blade_angular_velocity_rad_s",
                self.blade_angular_velocity_rad_s,
            ),
            ("rotor_solidity", self.rotor_solidity),
            ("fuselage_drag_ratio", self.fuselage_drag_ratio),
            ("air_density_kg_m3", self.air_density_kg_m3),
            ("rotor_disc_area_m2", self.rotor_disc_area_m2),
            ("tip_speed", self.tip_speed),
            (
                "mean_rotor_induced_velocity_m_s",
                self.mean_rotor_induced_velocity_m_s,
            ),
            ("profile_drag_coefficient", self.profile_drag_coefficient),
            ("induced_power_correction", self.induced_power_correction),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!(
                    "power parameter {name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Blade profile power: (delta/8) * rho * s * A * Omega^3 * R^3.
pub fn blade_profile_power(params: &PowerParams) -> f64 {
    let omega_r = params.blade_angular_velocity_rad_s * params.rotor_radius_m;
    (params.profile_drag_coefficient / 8.0)
        * params.air_density_kg_m3
        * params.rotor_solidity
        * params.rotor_disc_area_m2
        * omega_r.powi(3)
}

/// Induced power while hovering: (1 + iota) * W^(3/2) / sqrt(2 * rho * A).
pub fn induced_power(params: &PowerParams) -> f64 {
    (1.0 + params.induced_power_correction) * params.weight_newtons.powf(1.5)
        / (2.0 * params.air_density_kg_m3 * params.rotor_disc_area_m2).sqrt()
}

/// Propulsion power at forward speed `speed_m_s`.
///
/// Rejects negative speeds. At zero speed this evaluates to exactly
/// `hover_power` (the speed-dependent factors collapse to 1, 1 and 0).
pub fn propulsion_power(params: &PowerParams, speed_m_s: f64) -> Result<f64> {
    if !(speed_m_s >= 0.0) {
        return Err(Error::NegativeSpeed(speed_m_s));
    }
    let p0 = blade_profile_power(params);
    let pi = induced_power(params);
    let v2 = speed_m_s * speed_m_s;
    let tip2 = params.tip_speed * params.tip_speed;
    let v0 = params.mean_rotor_induced_velocity_m_s;
    let v02 = v0 * v0;

    let profile = p0 * (1.0 + 3.0 * v2 / tip2);
    let induced = pi * ((1.0 + v2 * v2 / (4.0 * v02 * v02)).sqrt() - v2 / (2.0 * v02)).sqrt();
    let parasite = 0.5
        * params.fuselage_drag_ratio
        * params.air_density_kg_m3
        * params.rotor_solidity
        * params.rotor_disc_area_m2
        * v2
        * speed_m_s;
    Ok(profile + induced + parasite)
}

/// Hover power: blade profile power plus induced power.
pub fn hover_power(params: &PowerParams) -> f64 {
    blade_profile_power(params) + induced_power(params)
}

/// Battery of a single UAV. Value type; all updates return a new state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub capacity_joules: f64,
    pub remaining_joules: f64,
    /// Rounds left at the docking station; 0 while deployed.
    pub recharge_rounds_left: usize,
}

impl Battery {
    /// A full battery of the given capacity.
    pub fn full(capacity_joules: f64) -> Self {
        Self {
            capacity_joules,
            remaining_joules: capacity_joules,
            recharge_rounds_left: 0,
        }
    }

    /// Charge level in [0, 1].
    pub fn level(&self) -> f64 {
        self.remaining_joules / self.capacity_joules
    }
}

/// Drains `power_watts * duration_s` joules, clamping at empty.
pub fn drain_battery(battery: Battery, power_watts: f64, duration_s: f64) -> Battery {
    assert!(power_watts >= 0.0, "drain power must be non-negative");
    assert!(duration_s >= 0.0, "drain duration must be non-negative");
    let remaining = (battery.remaining_joules - power_watts * duration_s).max(0.0);
    Battery {
        remaining_joules: remaining,
        ..battery
    }
}
