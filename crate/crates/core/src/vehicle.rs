//! Differential-drive kinematics and inter-vehicle proximity checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::track::{wrap_angle, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub wheel_radius: f64,
    /// Wheel separation.
    pub baseline: f64,
    /// Wheel angular rate commanded by a unit action, rad/s.
    pub max_wheel_rate: f64,
    pub safety_radius: f64,
    pub body_length: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        let wheel_radius = 0.0318;
        Self {
            wheel_radius,
            baseline: 0.102,
            max_wheel_rate: 0.5 / wheel_radius,
            safety_radius: 0.15,
            body_length: 0.18,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid vehicle parameters: {0}")]
pub struct InvalidParams(pub String);

impl VehicleParams {
    pub fn validate(&self) -> Result<(), InvalidParams> {
        let fields = [
            ("wheel_radius", self.wheel_radius),
            ("baseline", self.baseline),
            ("max_wheel_rate", self.max_wheel_rate),
            ("safety_radius", self.safety_radius),
            ("body_length", self.body_length),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.safety_radius < self.body_length / 2.0 {
            return Err(InvalidParams(
                "safety_radius must be at least body_length / 2".into(),
            ));
        }
        Ok(())
    }

    /// Forward speed at `ω_l = ω_r = 1`.
    pub fn top_speed(&self) -> f64 {
        self.max_wheel_rate * self.wheel_radius
    }
}

/// Commanded wheel rates, dimensionless in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelRates {
    pub left: f64,
    pub right: f64,
}

impl WheelRates {
    pub const fn new(left: f64, right: f64) -> Self {
        Self { left, right }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    /// Radians in `(-π, π]`.
    pub heading: f64,
    pub rates: WheelRates,
}

impl VehicleState {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            rates: WheelRates::default(),
        }
    }
}

/// Integrates the kinematic model exactly over `dt` for constant wheel rates.
pub fn step_kinematics(
    state: &VehicleState,
    rates: WheelRates,
    params: &VehicleParams,
    dt: f64,
) -> VehicleState {
    let wheel_speed = params.max_wheel_rate * params.wheel_radius;
    let v_l = rates.left * wheel_speed;
    let v_r = rates.right * wheel_speed;
    let v = 0.5 * (v_l + v_r);
    let omega = (v_r - v_l) / params.baseline;
    let th = state.heading;
    let position = if omega.abs() < 1e-9 {
        state.position + Vec2::from_angle(th).scale(v * dt)
    } else {
        let r = v / omega;
        let th1 = th + omega * dt;
        state.position + Vec2::new(r * (th1.sin() - th.sin()), -r * (th1.cos() - th.cos()))
    };
    VehicleState {
        position,
        heading: wrap_angle(th + omega * dt),
        rates,
    }
}

/// Safety-circle overlap depth normalized to `[0, 1]`.
pub fn collision_penalty(a: &VehicleState, b: &VehicleState, params: &VehicleParams) -> f64 {
    let diameter = 2.0 * params.safety_radius;
    let dist = (a.position - b.position).norm();
    ((diameter - dist) / diameter).max(0.0)
}

pub fn check_body_collision(a: &VehicleState, b: &VehicleState, params: &VehicleParams) -> bool {
    (a.position - b.position).norm() < params.body_length
}
