//! PD lane-following controller on ground-truth lane pose, plus a scripted
//! car follower built on top of it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{map_action, ActionKind};
use crate::track::{wrap_angle, LanePose, TrackMap};
use crate::vehicle::{VehicleState, WheelRates};

#[derive(Debug, Error, PartialEq)]
#[error("invalid PD config: {0}")]
pub struct PdConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdConfig {
    /// Distance along the centerline to the aim point, meters.
    pub lookahead: f64,
    pub k_p: f64,
    pub k_d: f64,
}

impl Default for PdConfig {
    fn default() -> Self {
        Self {
            lookahead: 0.25,
            k_p: 2.0,
            k_d: 0.1,
        }
    }
}

impl PdConfig {
    pub fn validate(&self) -> Result<(), PdConfigError> {
        if !(self.lookahead > 0.0 && self.lookahead.is_finite()) {
            return Err(PdConfigError("lookahead must be positive".into()));
        }
        if !(self.k_p.is_finite() && self.k_d.is_finite()) {
            return Err(PdConfigError("gains must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdOutput {
    /// Steering action in `[-1, 1]`.
    pub action: f64,
    /// Set when the pose was off-road and the previous action was repeated.
    pub lost_track: bool,
}

#[derive(Debug, Clone)]
pub struct PdController {
    pub cfg: PdConfig,
    e_prev: Option<f64>,
    last_action: f64,
}

impl PdController {
    pub fn new(cfg: PdConfig) -> Self {
        Self {
            cfg,
            e_prev: None,
            last_action: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.e_prev = None;
        self.last_action = 0.0;
    }

    /// Angle from the current heading to the aim point, wrapped to `(-π, π]`.
    pub fn orientation_error(&self, pose: &LanePose, track: &TrackMap, state: &VehicleState) -> f64 {
        let (target, _) = track.centerline_point(pose.s + self.cfg.lookahead);
        wrap_angle((target - state.position).angle() - state.heading)
    }

    pub fn pd_control(&mut self, pose: &LanePose, track: &TrackMap, state: &VehicleState, dt: f64) -> PdOutput {
        if !pose.on_road {
            return PdOutput {
                action: self.last_action,
                lost_track: true,
            };
        }
        let e = self.orientation_error(pose, track, state);
        let de = match self.e_prev {
            Some(prev) if dt > 0.0 => (e - prev) / dt,
            _ => 0.0,
        };
        self.e_prev = Some(e);
        // positive e means the target is to the left; Steering a < 0 turns left
        let a = (-(self.cfg.k_p * e + self.cfg.k_d * de)).clamp(-1.0, 1.0);
        self.last_action = a;
        PdOutput {
            action: a,
            lost_track: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FollowerConfig {
    pub pd: PdConfig,
    /// Arc-length gap at which the follower stops completely.
    pub stop_gap: f64,
    /// Gap above `stop_gap` over which speed ramps from 0 to full.
    pub ramp: f64,
}

impl Default for FollowerConfig {
    fn default() -> Self {
        Self {
            pd: PdConfig::default(),
            stop_gap: 0.3,
            ramp: 0.3,
        }
    }
}

/// PD steering with speed scaled by the arc-length gap to a lead vehicle.
/// Emits Wheel-Velocity-Braking raw actions so it can stop.
#[derive(Debug, Clone)]
pub struct Follower {
    pub cfg: FollowerConfig,
    pd: PdController,
}

impl Follower {
    pub fn new(cfg: FollowerConfig) -> Self {
        Self {
            cfg,
            pd: PdController::new(cfg.pd),
        }
    }

    pub fn reset(&mut self) {
        self.pd.reset();
    }

    /// Speed factor in `[0, 1]` for a given gap; no lead means full speed.
    pub fn speed_factor(&self, gap: Option<f64>) -> f64 {
        gap.map_or(1.0, |g| ((g - self.cfg.stop_gap) / self.cfg.ramp).clamp(0.0, 1.0))
    }

    pub fn act(
        &mut self,
        pose: &LanePose,
        track: &TrackMap,
        state: &VehicleState,
        lead_s: Option<f64>,
        dt: f64,
    ) -> [f64; 2] {
        let steer = self.pd.pd_control(pose, track, state, dt).action;
        let rates = map_action(ActionKind::Steering, &[steer]).expect("one-dimensional action");
        let f = self.speed_factor(lead_s.map(|s| track.arc_delta(pose.s, s)));
        braking_raw(WheelRates::new(f * rates.left, f * rates.right))
    }
}

/// Inverse of the braking mapping for rates in `[0, 1]`.
pub fn braking_raw(rates: WheelRates) -> [f64; 2] {
    [1.0 - rates.left, 1.0 - rates.right]
}
