//! Episode engine: action mappings, shaped rewards, termination and observations.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{
    mix_seed, preprocess_frame, render_into, sample_randomization, CameraError, CameraParams,
    FrameStack, Image, ObservationTensor, RandomizationConfig, RandomizationState,
};
use crate::track::{generate_random_map, maps, LanePose, MapError, MapGenConfig, TrackMap, Vec2};
use crate::vehicle::{
    check_body_collision, collision_penalty, step_kinematics, InvalidParams, VehicleParams,
    VehicleState, WheelRates,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action has {found} components, {kind:?} expects {expected}")]
    ActionDim {
        kind: ActionKind,
        expected: usize,
        found: usize,
    },
    #[error("step called on a finished episode; call reset first")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("map: {0}")]
    Map(#[from] MapError),
    #[error("camera: {0}")]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Vehicle(#[from] InvalidParams),
    #[error("reading map file {path}: {source}")]
    MapFile {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    WheelVelocity,
    WheelVelocityPositiveOnly,
    WheelVelocityBraking,
    Steering,
}

impl ActionKind {
    pub const ALL: [ActionKind; 4] = [
        ActionKind::WheelVelocity,
        ActionKind::WheelVelocityPositiveOnly,
        ActionKind::WheelVelocityBraking,
        ActionKind::Steering,
    ];

    pub fn dim(self) -> usize {
        match self {
            ActionKind::Steering => 1,
            _ => 2,
        }
    }
}

/// Maps raw policy outputs to wheel rates in `[-1, 1]`.
pub fn map_action(kind: ActionKind, raw: &[f64]) -> Result<WheelRates, EnvError> {
    if raw.len() != kind.dim() {
        return Err(EnvError::ActionDim {
            kind,
            expected: kind.dim(),
            found: raw.len(),
        });
    }
    // NaN inputs clamp to the neutral value of each mapping
    let clamp = |x: f64, lo: f64, hi: f64| if x.is_nan() { lo.max(0.0) } else { x.clamp(lo, hi) };
    Ok(match kind {
        ActionKind::WheelVelocity => {
            WheelRates::new(clamp(raw[0], -1.0, 1.0), clamp(raw[1], -1.0, 1.0))
        }
        ActionKind::WheelVelocityPositiveOnly => {
            WheelRates::new(clamp(raw[0], 0.0, 1.0), clamp(raw[1], 0.0, 1.0))
        }
        ActionKind::WheelVelocityBraking => {
            WheelRates::new(1.0 - clamp(raw[0], 0.0, 1.0), 1.0 - clamp(raw[1], 0.0, 1.0))
        }
        ActionKind::Steering => {
            let a = clamp(raw[0], -1.0, 1.0);
            if a >= 0.0 {
                WheelRates::new(1.0, 1.0 - a)
            } else {
                WheelRates::new(1.0 + a, 1.0)
            }
        }
    })
}

/// Cosine bump on `|x| <= φ`, small negative linear tail outside.
pub fn lambda_fn(x: f64, phi: f64, epsilon: f64) -> f64 {
    let r = x / phi;
    if r.abs() <= 1.0 {
        0.5 + 0.5 * (PI * r).cos()
    } else {
        epsilon * (1.0 - r.abs())
    }
}

/// Desired heading error for a lateral offset: steer back toward the
/// centerline, saturating at `±psi_max`.
pub fn psi_des(d: f64, psi_max: f64, d_scale: f64) -> f64 {
    -psi_max * (d / d_scale).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    DistanceTraveled,
    Orientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub kind: RewardKind,
    pub lambda_psi: f64,
    pub lambda_v: f64,
    /// Radians.
    pub phi: f64,
    pub epsilon: f64,
    /// Saturation of the desired heading; defaults to `phi`.
    pub psi_max: Option<f64>,
    /// Lateral offset at which the desired heading saturates; defaults to half a lane.
    pub d_scale: Option<f64>,
    /// Distance reward per meter; defaults to `1 / (top_speed * dt)`.
    pub k_dist: Option<f64>,
    pub lambda_coll: f64,
    pub collision_term: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            kind: RewardKind::Orientation,
            lambda_psi: 0.5,
            lambda_v: 0.5,
            phi: 50f64.to_radians(),
            epsilon: 0.05,
            psi_max: None,
            d_scale: None,
            k_dist: None,
            lambda_coll: 10.0,
            collision_term: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let err = |m: &str| Err(EnvError::Config(format!("reward.{m}")));
        if !(self.phi > 0.0) {
            return err("phi must be positive");
        }
        if !(0.01..=0.1).contains(&self.epsilon) {
            return err("epsilon must lie in [0.01, 0.1]");
        }
        if !(self.lambda_psi >= 0.0 && self.lambda_v >= 0.0) {
            return err("lambda_psi and lambda_v must be non-negative");
        }
        if !(self.lambda_coll >= 0.0) {
            return err("lambda_coll must be non-negative");
        }
        if self.d_scale.is_some_and(|d| !(d > 0.0)) || self.psi_max.is_some_and(|p| !(p >= 0.0)) {
            return err("d_scale must be positive and psi_max non-negative");
        }
        if self.k_dist.is_some_and(|k| !(k >= 0.0)) {
            return err("k_dist must be non-negative");
        }
        Ok(())
    }
}

/// Orientation reward with the optional parameters resolved against a lane width.
pub fn reward_orientation(pose: &LanePose, rates: WheelRates, cfg: &RewardConfig, lane_width: f64) -> f64 {
    let psi_max = cfg.psi_max.unwrap_or(cfg.phi);
    let d_scale = cfg.d_scale.unwrap_or(lane_width / 2.0);
    let err = pose.psi - psi_des(pose.d, psi_max, d_scale);
    cfg.lambda_psi * lambda_fn(err, cfg.phi, cfg.epsilon) + cfg.lambda_v * rates.left.max(rates.right)
}

pub fn reward_distance(progress_delta: f64, pose: &LanePose, k_dist: f64) -> f64 {
    if pose.in_right_lane {
        k_dist * progress_delta.max(0.0)
    } else {
        0.0
    }
}

/// Rewards a shrinking safety-circle overlap; never negative.
pub fn reward_collision_term(p_prev: f64, p_now: f64, lambda_coll: f64) -> f64 {
    let delta = p_now - p_prev;
    if delta < 0.0 {
        -lambda_coll * delta
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionConfig {
    pub enabled: bool,
    /// Lead vehicle speed as a fraction of top speed.
    pub lead_speed_fraction: f64,
    /// Initial arc-length gap range, meters.
    pub gap: [f64; 2],
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            lead_speed_fraction: 0.4,
            gap: [0.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Built-in map name (`loop`, `ring`, `straight`) or a path to a map file.
    pub map: String,
    /// When set, every episode draws a fresh random map.
    pub random_maps: Option<MapGenConfig>,
    pub action: ActionKind,
    pub reward: RewardConfig,
    pub randomization: RandomizationConfig,
    pub frame_rate: f64,
    /// Episode horizon in seconds.
    pub horizon: f64,
    pub collision: CollisionConfig,
    pub vehicle: VehicleParams,
    pub camera: CameraParams,
    /// Spawn bounds: `|d| <= lane_width * spawn_lateral_fraction`, `|Ψ| <= spawn_heading`.
    pub spawn_lateral_fraction: f64,
    pub spawn_heading: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            map: "loop".into(),
            random_maps: None,
            action: ActionKind::Steering,
            reward: RewardConfig::default(),
            randomization: RandomizationConfig::default(),
            frame_rate: 15.0,
            horizon: 15.0,
            collision: CollisionConfig::default(),
            vehicle: VehicleParams::default(),
            camera: CameraParams::default(),
            spawn_lateral_fraction: 0.25,
            spawn_heading: 30f64.to_radians(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.reward.validate()?;
        self.randomization.validate()?;
        self.camera.validate()?;
        self.vehicle.validate()?;
        if let Some(g) = &self.random_maps {
            g.validate()?;
        }
        let err = |m: &str| Err(EnvError::Config(m.to_string()));
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return err("frame_rate must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return err("horizon must be positive");
        }
        let [g0, g1] = self.collision.gap;
        if !(g0 > 0.0 && g0 <= g1) {
            return err("collision.gap must satisfy 0 < min <= max");
        }
        if !(0.0..=1.0).contains(&self.collision.lead_speed_fraction) {
            return err("collision.lead_speed_fraction must lie in [0, 1]");
        }
        if !(0.0..=0.5).contains(&self.spawn_lateral_fraction) || !(self.spawn_heading >= 0.0) {
            return err("spawn bounds out of range");
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn horizon_steps(&self) -> usize {
        (self.horizon * self.frame_rate).round() as usize
    }

    /// Resolves `map` to a track: a built-in name or a file path.
    pub fn load_map(&self) -> Result<TrackMap, EnvError> {
        if let Some(text) = maps::by_name(&self.map) {
            return Ok(TrackMap::parse(text)?);
        }
        let text = std::fs::read_to_string(Path::new(&self.map)).map_err(|source| EnvError::MapFile {
            path: self.map.clone(),
            source,
        })?;
        Ok(TrackMap::parse(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    OffRoad,
    Collision,
    TimeLimit,
    /// Session ended externally (teleop disconnect or end request).
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub lane_pose: LanePose,
    pub progress_delta: f64,
    pub p_coll: f64,
    pub rates: WheelRates,
    pub termination_reason: Option<TerminationReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: ObservationTensor,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Scripted vehicle following the right-lane centerline at constant speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadVehicle {
    pub s: f64,
    pub speed: f64,
    pub state: VehicleState,
}

impl LeadVehicle {
    fn at(track: &TrackMap, s: f64, speed: f64) -> Self {
        let (p, t) = track.centerline_point(s);
        Self {
            s: s.rem_euclid(track.total_length()),
            speed,
            state: VehicleState::new(p, t),
        }
    }
}

const SPAWN_STREAM: u64 = 0x5A57;
const MAP_STREAM: u64 = 0x3A9;

pub struct Env {
    cfg: EnvConfig,
    base_track: Arc<TrackMap>,
    track: Arc<TrackMap>,
    ego: VehicleState,
    lead: Option<LeadVehicle>,
    rand: RandomizationState,
    frames: Option<FrameStack>,
    framebuffer: Image,
    pose: Option<LanePose>,
    p_coll: f64,
    step_count: usize,
    done: bool,
    episode_seed: u64,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Env, EnvError> {
        let track = cfg.load_map()?;
        Env::with_track(cfg, track)
    }

    pub fn with_track(cfg: EnvConfig, track: TrackMap) -> Result<Env, EnvError> {
        cfg.validate()?;
        if let Some(g) = &cfg.random_maps {
            generate_random_map(0, g)?;
        }
        let track = Arc::new(track);
        let fb = Image::new(cfg.camera.image_width, cfg.camera.image_height);
        Ok(Env {
            cfg,
            base_track: track.clone(),
            track,
            ego: VehicleState::new(Vec2::default(), 0.0),
            lead: None,
            rand: RandomizationState::identity(),
            frames: None,
            framebuffer: fb,
            pose: None,
            p_coll: 0.0,
            step_count: 0,
            done: true,
            episode_seed: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn track(&self) -> &TrackMap {
        &self.track
    }

    pub fn ego(&self) -> &VehicleState {
        &self.ego
    }

    pub fn lead(&self) -> Option<&LeadVehicle> {
        self.lead.as_ref()
    }

    pub fn randomization(&self) -> &RandomizationState {
        &self.rand
    }

    pub fn lane_pose(&self) -> Option<LanePose> {
        self.pose
    }

    pub fn action_kind(&self) -> ActionKind {
        self.cfg.action
    }

    pub fn action_dim(&self) -> usize {
        self.cfg.action.dim()
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt()
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn p_coll(&self) -> f64 {
        self.p_coll
    }

    pub fn episode_seed(&self) -> u64 {
        self.episode_seed
    }

    /// Latest camera image (before preprocessing).
    pub fn camera_image(&self) -> &Image {
        &self.framebuffer
    }

    pub fn observation(&self) -> Option<ObservationTensor> {
        self.frames.as_ref().map(FrameStack::observation)
    }

    /// Vehicle parameters after the episode's dynamics randomization.
    pub fn effective_vehicle_params(&self) -> VehicleParams {
        self.rand.dynamics_jitter.apply(&self.cfg.vehicle)
    }

    /// Starts an episode. Everything random about it derives from `seed`.
    pub fn reset(&mut self, seed: u64) -> ObservationTensor {
        self.episode_seed = seed;
        self.track = match &self.cfg.random_maps {
            Some(g) => generate_random_map(mix_seed(seed, MAP_STREAM), g)
                .map(Arc::new)
                .unwrap_or_else(|_| self.base_track.clone()),
            None => self.base_track.clone(),
        };
        self.rand = sample_randomization(self.cfg.randomization.seed, seed, &self.cfg.randomization);

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SPAWN_STREAM));
        let track = self.track.clone();
        let lw = track.lane_width();
        let d_max = lw * self.cfg.spawn_lateral_fraction;
        let psi_max = self.cfg.spawn_heading;
        let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let mut spawn_s = 0.0;
        for attempt in 0..100 {
            let s = rng.random_range(0.0..track.total_length());
            let d = sym(&mut rng, d_max);
            let psi = sym(&mut rng, psi_max);
            let (p, t) = track.centerline_point(s);
            let pos = p + Vec2::from_angle(t).perp().scale(d);
            let cand = VehicleState::new(pos, t + psi);
            let pose = track.lane_pose(cand.position, cand.heading);
            if pose.in_right_lane || attempt == 99 {
                self.ego = cand;
                spawn_s = s;
                break;
            }
        }

        self.lead = self.cfg.collision.enabled.then(|| {
            let [g0, g1] = self.cfg.collision.gap;
            let gap = if g0 < g1 { rng.random_range(g0..=g1) } else { g0 };
            let speed = self.cfg.collision.lead_speed_fraction * self.cfg.vehicle.top_speed();
            LeadVehicle::at(&track, spawn_s + gap, speed)
        });
        self.p_coll = self
            .lead
            .map_or(0.0, |l| collision_penalty(&self.ego, &l.state, &self.cfg.vehicle));
        self.pose = Some(track.lane_pose(self.ego.position, self.ego.heading));
        self.step_count = 0;
        self.done = false;
        self.render_frame();
        let first = preprocess_frame(&self.framebuffer);
        let stack = FrameStack::new(first);
        let obs = stack.observation();
        self.frames = Some(stack);
        obs
    }

    fn render_frame(&mut self) {
        let others: Vec<VehicleState> = self.lead.iter().map(|l| l.state).collect();
        let rand = self
            .rand
            .with_noise_seed(mix_seed(self.rand.noise_seed, self.step_count as u64));
        render_into(
            &mut self.framebuffer,
            &self.track,
            &others,
            &self.ego,
            &self.cfg.camera,
            &self.cfg.vehicle,
            &rand,
        );
    }

    pub fn step(&mut self, raw_action: &[f64]) -> Result<StepResult, EnvError> {
        if self.frames.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let rates = map_action(self.cfg.action, raw_action)?;
        let dt = self.cfg.dt();
        let params = self.effective_vehicle_params();
        let prev_pose = self.pose.expect("reset sets the pose");
        self.ego = step_kinematics(&self.ego, rates, &params, dt);
        if let Some(lead) = &mut self.lead {
            *lead = LeadVehicle::at(&self.track, lead.s + lead.speed * dt, lead.speed);
        }
        self.step_count += 1;

        let pose = self.track.lane_pose(self.ego.position, self.ego.heading);
        let progress_delta = self.track.arc_delta(prev_pose.s, pose.s);
        let p_prev = self.p_coll;
        let p_now = self
            .lead
            .map_or(0.0, |l| collision_penalty(&self.ego, &l.state, &self.cfg.vehicle));
        self.p_coll = p_now;
        self.pose = Some(pose);

        let rc = &self.cfg.reward;
        let mut reward = match rc.kind {
            RewardKind::Orientation => reward_orientation(&pose, rates, rc, self.track.lane_width()),
            RewardKind::DistanceTraveled => {
                let k = rc
                    .k_dist
                    .unwrap_or(1.0 / (self.cfg.vehicle.top_speed() * dt));
                reward_distance(progress_delta, &pose, k)
            }
        };
        if rc.collision_term {
            reward += reward_collision_term(p_prev, p_now, rc.lambda_coll);
        }

        let collided = self
            .lead
            .is_some_and(|l| check_body_collision(&self.ego, &l.state, &self.cfg.vehicle));
        let termination_reason = if collided {
            Some(TerminationReason::Collision)
        } else if !pose.on_road {
            Some(TerminationReason::OffRoad)
        } else if self.step_count >= self.cfg.horizon_steps() {
            Some(TerminationReason::TimeLimit)
        } else {
            None
        };
        self.done = termination_reason.is_some();

        self.render_frame();
        let frames = self.frames.as_mut().expect("checked above");
        frames.push(preprocess_frame(&self.framebuffer));
        Ok(StepResult {
            observation: frames.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                lane_pose: pose,
                progress_delta,
                p_coll: p_now,
                rates,
                termination_reason,
            },
        })
    }

    /// Ends the current episode without stepping.
    pub fn abort(&mut self) {
        self.done = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn steering_mapping_examples() {
        let m = |a: f64| map_action(ActionKind::Steering, &[a]).unwrap();
        assert_eq!(m(0.0), WheelRates::new(1.0, 1.0));
        assert_eq!(m(1.0), WheelRates::new(1.0, 0.0));
        assert_eq!(m(-1.0), WheelRates::new(0.0, 1.0));
        assert_eq!(m(7.0), WheelRates::new(1.0, 0.0));
    }

    #[test]
    fn wheel_mappings() {
        let b = |l: f64, r: f64| map_action(ActionKind::WheelVelocityBraking, &[l, r]).unwrap();
        assert_eq!(b(0.0, 0.0), WheelRates::new(1.0, 1.0));
        assert_eq!(b(1.0, 1.0), WheelRates::new(0.0, 0.0));
        assert_eq!(b(-0.2, 0.5), WheelRates::new(1.0, 0.5));
        let p = map_action(ActionKind::WheelVelocityPositiveOnly, &[-0.3, 1.4]).unwrap();
        assert_eq!(p, WheelRates::new(0.0, 1.0));
        let w = map_action(ActionKind::WheelVelocity, &[-3.0, 0.25]).unwrap();
        assert_eq!(w, WheelRates::new(-1.0, 0.25));
    }

    #[test]
    fn mapping_rejects_wrong_dimension() {
        assert!(matches!(
            map_action(ActionKind::Steering, &[0.0, 1.0]),
            Err(EnvError::ActionDim { expected: 1, found: 2, .. })
        ));
        assert!(map_action(ActionKind::WheelVelocity, &[0.0]).is_err());
    }

    #[test]
    fn lambda_examples() {
        let phi = 50f64.to_radians();
        assert_eq!(lambda_fn(0.0, phi, 0.05), 1.0);
        assert!(lambda_fn(phi, phi, 0.05).abs() < 1e-15);
        assert!(lambda_fn(-phi, phi, 0.05).abs() < 1e-15);
        assert!((lambda_fn(phi / 2.0, phi, 0.05) - 0.5).abs() < 1e-15);
        assert!((lambda_fn(2.0 * phi, phi, 0.05) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn psi_des_examples() {
        let (pm, ds) = (0.8, 0.1);
        assert_eq!(psi_des(0.0, pm, ds), 0.0);
        assert_eq!(psi_des(ds, pm, ds), -pm);
        assert_eq!(psi_des(-2.0 * ds, pm, ds), pm);
    }

    fn pose(d: f64, psi: f64) -> LanePose {
        LanePose {
            d,
            psi,
            s: 0.0,
            in_right_lane: true,
            on_road: true,
        }
    }

    #[test]
    fn orientation_reward_examples() {
        let cfg = RewardConfig::default();
        let lw = 0.2925;
        let r = reward_orientation(&pose(0.0, 0.0), WheelRates::new(1.0, 1.0), &cfg, lw);
        assert!((r - 1.0).abs() < 1e-15);
        let r = reward_orientation(&pose(0.0, 0.0), WheelRates::new(0.3, 0.9), &cfg, lw);
        assert!((r - (0.5 + 0.9 * 0.5)).abs() < 1e-15);
        let r = reward_orientation(&pose(0.0, 2.0 * cfg.phi), WheelRates::new(0.0, 0.0), &cfg, lw);
        assert!((r - 0.5 * -0.05).abs() < 1e-15);
    }

    #[test]
    fn distance_reward_examples() {
        let mut p = pose(0.0, 0.0);
        assert_eq!(reward_distance(0.01, &p, 1.0), 0.01);
        assert_eq!(reward_distance(-0.01, &p, 1.0), 0.0);
        p.in_right_lane = false;
        assert_eq!(reward_distance(0.01, &p, 1.0), 0.0);
    }

    #[test]
    fn collision_term_examples() {
        assert!((reward_collision_term(0.3, 0.25, 10.0) - 0.5).abs() < 1e-12);
        assert_eq!(reward_collision_term(0.1, 0.2, 10.0), 0.0);
        assert_eq!(reward_collision_term(0.2, 0.2, 10.0), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = EnvConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.reward.epsilon = 0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = EnvConfig::default();
        cfg.collision.gap = [2.0, 1.0];
        assert!(cfg.validate().is_err());
        let cfg = EnvConfig {
            map: "/definitely/missing.map".into(),
            ..Default::default()
        };
        assert!(matches!(Env::new(cfg), Err(EnvError::MapFile { .. })));
    }

    #[test]
    fn reset_is_deterministic_and_spawns_in_lane() {
        let mut env = Env::new(EnvConfig::default()).unwrap();
        let mut other = Env::new(EnvConfig::default()).unwrap();
        assert_eq!(env.reset(42), other.reset(42));
        assert_eq!(env.ego(), other.ego());
        for seed in 0..100 {
            env.reset(seed);
            let p = env.lane_pose().unwrap();
            assert!(p.in_right_lane, "seed {seed}: {p:?}");
            assert!(p.d.abs() <= env.track().lane_width() / 4.0 + 1e-12);
            assert!(p.psi.abs() <= 30f64.to_radians() + 1e-12);
        }
    }

    #[test]
    fn randomization_does_not_move_the_spawn() {
        let mut plain = Env::new(EnvConfig::default()).unwrap();
        let mut cfg = EnvConfig::default();
        cfg.randomization.enabled = true;
        let mut rand = Env::new(cfg).unwrap();
        for seed in 0..10 {
            let a = plain.reset(seed);
            let b = rand.reset(seed);
            assert_eq!(plain.lane_pose(), rand.lane_pose());
            assert_ne!(a, b);
        }
    }

    #[test]
    fn collision_mode_gap_in_range() {
        let mut cfg = EnvConfig::default();
        cfg.collision.enabled = true;
        let mut env = Env::new(cfg).unwrap();
        for seed in 0..100 {
            env.reset(seed);
            let ego_s = env.lane_pose().unwrap().s;
            let lead = env.lead().unwrap();
            let gap = env.track().arc_delta(ego_s, lead.s);
            assert!((0.5 - 1e-9..=2.0 + 1e-9).contains(&gap), "seed {seed}: {gap}");
        }
    }

    /// First seed whose spawn has `ahead` meters of straight road in front.
    fn straight_seed(env: &mut Env, ahead: f64) -> u64 {
        (0..1000)
            .find(|s| {
                env.reset(*s);
                let ego = *env.ego();
                (0..=10).all(|k| {
                    let p = ego.position + Vec2::from_angle(ego.heading).scale(ahead * k as f64 / 10.0);
                    env.track().tile_at(p).is_some_and(|(_, _, t)| t.is_road() && !t.is_curve())
                })
            })
            .expect("some seed spawns on a long straight")
    }

    #[test]
    fn full_speed_straight_gives_unit_reward() {
        let cfg = EnvConfig {
            map: "straight".into(),
            spawn_lateral_fraction: 0.0,
            spawn_heading: 0.0,
            ..Default::default()
        };
        let mut env = Env::new(cfg).unwrap();
        let seed = straight_seed(&mut env, 1.0);
        env.reset(seed);
        for _ in 0..20 {
            let r = env.step(&[0.0]).unwrap();
            assert!((r.reward - 1.0).abs() < 1e-9, "{}", r.reward);
            assert!(!r.done);
        }
    }

    #[test]
    fn leaving_the_road_terminates() {
        let cfg = EnvConfig {
            action: ActionKind::WheelVelocity,
            ..Default::default()
        };
        let mut env = Env::new(cfg).unwrap();
        env.reset(3);
        let mut last = None;
        for _ in 0..500 {
            // driving dead straight leaves the loop at the first curve
            let r = env.step(&[1.0, 1.0]).unwrap();
            if r.done {
                last = Some(r);
                break;
            }
        }
        let r = last.expect("episode ends");
        assert_eq!(r.info.termination_reason, Some(TerminationReason::OffRoad));
        assert!(!r.info.lane_pose.on_road);
        assert!(matches!(env.step(&[0.0]), Err(EnvError::StepAfterDone)));
    }

    #[test]
    fn stationary_robot_survives_to_horizon() {
        let cfg = EnvConfig {
            action: ActionKind::WheelVelocityBraking,
            horizon: 2.0,
            ..Default::default()
        };
        let mut env = Env::new(cfg).unwrap();
        env.reset(1);
        let start = *env.ego();
        let mut steps = 0;
        loop {
            let r = env.step(&[1.0, 1.0]).unwrap();
            steps += 1;
            if r.done {
                assert_eq!(r.info.termination_reason, Some(TerminationReason::TimeLimit));
                break;
            }
        }
        assert_eq!(steps, 30);
        assert_eq!(env.ego().position, start.position);
    }

    #[test]
    fn lead_contact_terminates_without_penalty() {
        let mut cfg = EnvConfig::default();
        cfg.collision.enabled = true;
        cfg.collision.gap = [0.5, 0.5];
        cfg.reward.collision_term = true;
        cfg.spawn_lateral_fraction = 0.0;
        cfg.spawn_heading = 0.0;
        cfg.map = "straight".into();
        let mut env = Env::new(cfg).unwrap();
        let seed = straight_seed(&mut env, 2.5);
        env.reset(seed);
        let mut end = None;
        for _ in 0..200 {
            let r = env.step(&[0.0]).unwrap();
            assert!(r.reward >= 0.0);
            if r.done {
                end = Some(r);
                break;
            }
        }
        let r = end.unwrap();
        assert_eq!(r.info.termination_reason, Some(TerminationReason::Collision));
        let plain = reward_orientation(
            &r.info.lane_pose,
            r.info.rates,
            &env.config().reward,
            env.track().lane_width(),
        );
        assert_eq!(r.reward, plain);
    }

    #[test]
    fn episodes_replay_bit_exactly() {
        let mut cfg = EnvConfig::default();
        cfg.randomization.enabled = true;
        cfg.collision.enabled = true;
        let run = |cfg: &EnvConfig| {
            let mut env = Env::new(cfg.clone()).unwrap();
            env.reset(9);
            let mut out = Vec::new();
            for k in 0..40 {
                let a = ((k as f64) * 0.37).sin();
                match env.step(&[a]) {
                    Ok(r) => {
                        let done = r.done;
                        out.push(r);
                        if done {
                            break;
                        }
                    }
                    Err(e) => panic!("{e}"),
                }
            }
            out
        };
        assert_eq!(run(&cfg), run(&cfg));
    }

    proptest! {
        #[test]
        fn mappings_always_in_range(kind_idx in 0usize..4, a in -10.0..10.0f64, b in -10.0..10.0f64) {
            let kind = ActionKind::ALL[kind_idx];
            let raw = if kind.dim() == 1 { vec![a] } else { vec![a, b] };
            let r = map_action(kind, &raw).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r.left) && (-1.0..=1.0).contains(&r.right));
        }

        #[test]
        fn steering_is_always_full_speed(a in -1.0..=1.0f64) {
            let r = map_action(ActionKind::Steering, &[a]).unwrap();
            prop_assert_eq!(r.left.max(r.right), 1.0);
        }

        #[test]
        fn lambda_even_and_bounded(x in -10.0..10.0f64, phi in 0.1..2.0f64, eps in 0.01..0.1f64) {
            prop_assert_eq!(lambda_fn(x, phi, eps), lambda_fn(-x, phi, eps));
            prop_assert!(lambda_fn(x, phi, eps) <= 1.0);
            if x.abs() >= phi {
                prop_assert!(lambda_fn(x, phi, eps) <= 0.0);
            }
        }

        #[test]
        fn orientation_reward_max_at_center(
            d in -0.3..0.3f64,
            psi in -3.0..3.0f64,
            l in -1.0..1.0f64,
            r in -1.0..1.0f64,
        ) {
            let cfg = RewardConfig::default();
            let best = reward_orientation(&pose(0.0, 0.0), WheelRates::new(1.0, 1.0), &cfg, 0.2925);
            let other = reward_orientation(&pose(d, psi), WheelRates::new(l, r), &cfg, 0.2925);
            prop_assert!(other <= best);
        }

        #[test]
        fn collision_term_nonnegative(a in 0.0..=1.0f64, b in 0.0..=1.0f64, k in 0.0..100.0f64) {
            prop_assert!(reward_collision_term(a, b, k) >= 0.0);
        }
    }
}
