//! Episode runner, per-episode metrics, aggregation and report files.
//!
//! CSV columns: `episode,controller,seed,termination,survival_time,
//! distance_ego_lane,distance_both_lanes,lateral_deviation,orientation_deviation`,
//! followed by a `mean` row. Episode logs are JSON lines, one [`EpisodeLog`] per line.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{Follower, FollowerConfig, PdConfig, PdController};
use crate::camera::{mix_seed, ObservationTensor};
use crate::env::{ActionKind, Env, EnvConfig, EnvError, StepResult, TerminationReason};
use crate::policy::{ActorCritic, PolicyError};
use crate::track::{LanePose, TrackMap};
use crate::vehicle::{VehicleState, WheelRates};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("controller {controller} emits {controller_kind:?} actions but the environment expects {env_kind:?}")]
    ActionMismatch {
        controller: String,
        controller_kind: ActionKind,
        env_kind: ActionKind,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub state: VehicleState,
    pub pose: LanePose,
    pub rates: WheelRates,
    pub reward: f64,
    pub p_coll: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead: Option<VehicleState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub version: u32,
    pub controller: String,
    /// Map name or path from the environment config.
    pub map: String,
    /// The exact track driven, in map-file syntax.
    pub track: String,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub termination_reason: Option<TerminationReason>,
    /// Starts with the spawn state at `t = 0`.
    pub records: Vec<StepRecord>,
}

impl EpisodeLog {
    pub fn parse_track(&self) -> Result<TrackMap, EvalError> {
        TrackMap::parse(&self.track).map_err(|e| EvalError::Format(e.to_string()))
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    pub fn collided(&self) -> bool {
        self.termination_reason == Some(TerminationReason::Collision)
    }
}

/// Builds an [`EpisodeLog`] step by step; shared by the batch runner and teleop.
#[derive(Debug)]
pub struct EpisodeRecorder {
    log: EpisodeLog,
}

impl EpisodeRecorder {
    /// Call right after `env.reset`.
    pub fn start(env: &Env, controller: &str) -> Self {
        let state = *env.ego();
        let log = EpisodeLog {
            version: LOG_VERSION,
            controller: controller.to_string(),
            map: env.config().map.clone(),
            track: env.track().serialize(),
            seed: env.episode_seed(),
            dt: env.dt(),
            horizon: env.config().horizon,
            termination_reason: None,
            records: vec![StepRecord {
                t: 0.0,
                state,
                pose: env.lane_pose().expect("env was reset"),
                rates: WheelRates::default(),
                reward: 0.0,
                p_coll: env.p_coll(),
                lead: env.lead().map(|l| l.state),
            }],
        };
        Self { log }
    }

    pub fn record(&mut self, env: &Env, step: &StepResult) {
        self.log.records.push(StepRecord {
            t: env.step_count() as f64 * self.log.dt,
            state: *env.ego(),
            pose: step.info.lane_pose,
            rates: step.info.rates,
            reward: step.reward,
            p_coll: step.info.p_coll,
            lead: env.lead().map(|l| l.state),
        });
        if step.done {
            self.log.termination_reason = step.info.termination_reason;
        }
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn finish(mut self, reason: Option<TerminationReason>) -> EpisodeLog {
        if self.log.termination_reason.is_none() {
            self.log.termination_reason = reason;
        }
        self.log
    }
}

/// Action source for [`run_episode`].
pub trait Controller: Send {
    fn id(&self) -> String;
    fn action_kind(&self) -> ActionKind;
    fn reset(&mut self) {}
    fn act(&mut self, env: &Env, obs: &ObservationTensor) -> Result<Vec<f64>, EvalError>;
}

/// Trained policy, acting with its mean action.
pub struct PolicyController {
    pub model: Arc<ActorCritic<f32>>,
    pub kind: ActionKind,
    pub name: String,
}

impl PolicyController {
    pub fn new(model: Arc<ActorCritic<f32>>, kind: ActionKind, name: impl Into<String>) -> Result<Self, EvalError> {
        if model.spec.action_dim != kind.dim() {
            return Err(EvalError::Format(format!(
                "policy outputs {} actions, {kind:?} needs {}",
                model.spec.action_dim,
                kind.dim()
            )));
        }
        Ok(Self {
            model,
            kind,
            name: name.into(),
        })
    }
}

impl Controller for PolicyController {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn action_kind(&self) -> ActionKind {
        self.kind
    }

    fn act(&mut self, _env: &Env, obs: &ObservationTensor) -> Result<Vec<f64>, EvalError> {
        Ok(self.model.forward_policy_obs(obs)?.mean)
    }
}

/// PD baseline on ground-truth pose, through the Steering mapping.
pub struct PdDriver(pub PdController);

impl PdDriver {
    pub fn new(cfg: PdConfig) -> Self {
        Self(PdController::new(cfg))
    }
}

impl Controller for PdDriver {
    fn id(&self) -> String {
        "pd".into()
    }

    fn action_kind(&self) -> ActionKind {
        ActionKind::Steering
    }

    fn reset(&mut self) {
        self.0.reset();
    }

    fn act(&mut self, env: &Env, _obs: &ObservationTensor) -> Result<Vec<f64>, EvalError> {
        let pose = env.lane_pose().expect("env was reset");
        Ok(vec![self.0.pd_control(&pose, env.track(), env.ego(), env.dt()).action])
    }
}

/// Gap-keeping PD follower for runs with a lead vehicle.
pub struct FollowDriver(pub Follower);

impl FollowDriver {
    pub fn new(cfg: FollowerConfig) -> Self {
        Self(Follower::new(cfg))
    }
}

impl Controller for FollowDriver {
    fn id(&self) -> String {
        "follow".into()
    }

    fn action_kind(&self) -> ActionKind {
        ActionKind::WheelVelocityBraking
    }

    fn reset(&mut self) {
        self.0.reset();
    }

    fn act(&mut self, env: &Env, _obs: &ObservationTensor) -> Result<Vec<f64>, EvalError> {
        let pose = env.lane_pose().expect("env was reset");
        let lead = env.lead().map(|l| l.s);
        Ok(self.0.act(&pose, env.track(), env.ego(), lead, env.dt()).to_vec())
    }
}

/// Replays a fixed action sequence, holding the last action once exhausted.
#[derive(Debug, Clone)]
pub struct Scripted {
    pub name: String,
    pub kind: ActionKind,
    pub actions: Vec<Vec<f64>>,
    cursor: usize,
}

impl Scripted {
    pub fn new(name: impl Into<String>, kind: ActionKind, actions: Vec<Vec<f64>>) -> Self {
        Self {
            name: name.into(),
            kind,
            actions,
            cursor: 0,
        }
    }

    pub fn constant(name: impl Into<String>, kind: ActionKind, action: Vec<f64>) -> Self {
        Self::new(name, kind, vec![action])
    }

    /// Both wheels stopped under the braking mapping.
    pub fn full_brake() -> Self {
        Self::constant("brake", ActionKind::WheelVelocityBraking, vec![1.0, 1.0])
    }
}

impl Controller for Scripted {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn action_kind(&self) -> ActionKind {
        self.kind
    }

    fn reset(&mut self) {
        self.cursor = 0;
    }

    fn act(&mut self, _env: &Env, _obs: &ObservationTensor) -> Result<Vec<f64>, EvalError> {
        let a = self
            .actions
            .get(self.cursor)
            .or(self.actions.last())
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.kind.dim()]);
        self.cursor += 1;
        Ok(a)
    }
}

/// Runs one episode to termination or the environment's horizon.
pub fn run_episode(controller: &mut dyn Controller, env: &mut Env, seed: u64) -> Result<EpisodeLog, EvalError> {
    if controller.action_kind() != env.action_kind() {
        return Err(EvalError::ActionMismatch {
            controller: controller.id(),
            controller_kind: controller.action_kind(),
            env_kind: env.action_kind(),
        });
    }
    controller.reset();
    let mut obs = env.reset(seed);
    let mut rec = EpisodeRecorder::start(env, &controller.id());
    loop {
        let action = controller.act(env, &obs)?;
        let step = env.step(&action)?;
        rec.record(env, &step);
        if step.done {
            break;
        }
        obs = step.observation;
    }
    Ok(rec.finish(None))
}

/// Seed of evaluation episode `i`.
pub fn episode_seed(base: u64, i: usize) -> u64 {
    mix_seed(mix_seed(base, 0xE7A1), i as u64)
}

/// Runs `episodes` episodes over `workers` threads; logs come back in episode order.
pub fn evaluate<F>(
    env_cfg: &EnvConfig,
    make_controller: F,
    episodes: usize,
    base_seed: u64,
    workers: usize,
) -> Result<Vec<EpisodeLog>, EvalError>
where
    F: Fn() -> Result<Box<dyn Controller>, EvalError> + Sync,
{
    let track = env_cfg.load_map()?;
    let workers = workers.clamp(1, episodes.max(1));
    let results: Vec<Result<Vec<(usize, EpisodeLog)>, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (track, make) = (track.clone(), &make_controller);
                scope.spawn(move || {
                    let mut env = Env::with_track(env_cfg.clone(), track)?;
                    let mut ctl = make()?;
                    (w..episodes)
                        .step_by(workers)
                        .map(|i| Ok((i, run_episode(ctl.as_mut(), &mut env, episode_seed(base_seed, i))?)))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut logs: Vec<Option<EpisodeLog>> = vec![None; episodes];
    for r in results {
        for (i, log) in r? {
            logs[i] = Some(log);
        }
    }
    Ok(logs.into_iter().map(|l| l.expect("every episode ran")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Seconds.
    pub survival_time: f64,
    /// Meters of forward progress while inside the right lane.
    pub distance_ego_lane: f64,
    /// Meters of forward progress while on the road.
    pub distance_both_lanes: f64,
    /// ∫|d| dt, m·s.
    pub lateral_deviation: f64,
    /// ∫|Ψ| dt, rad·s.
    pub orientation_deviation: f64,
}

impl MetricsReport {
    const NAMES: [&'static str; 5] = [
        "survival_time",
        "distance_ego_lane",
        "distance_both_lanes",
        "lateral_deviation",
        "orientation_deviation",
    ];

    fn values(&self) -> [f64; 5] {
        [
            self.survival_time,
            self.distance_ego_lane,
            self.distance_both_lanes,
            self.lateral_deviation,
            self.orientation_deviation,
        ]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            survival_time: v[0],
            distance_ego_lane: v[1],
            distance_both_lanes: v[2],
            lateral_deviation: v[3],
            orientation_deviation: v[4],
        }
    }
}

/// Integrates the five metrics over the log. Backward motion adds no distance.
pub fn compute_metrics(log: &EpisodeLog, track: &TrackMap) -> MetricsReport {
    let mut m = MetricsReport {
        survival_time: log.records.last().map_or(0.0, |r| r.t),
        ..MetricsReport::default()
    };
    for w in log.records.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let ds = track.arc_delta(prev.pose.s, cur.pose.s).max(0.0);
        if cur.pose.in_right_lane {
            m.distance_ego_lane += ds;
        }
        if cur.pose.on_road {
            m.distance_both_lanes += ds;
        }
        m.lateral_deviation += cur.pose.d.abs() * log.dt;
        m.orientation_deviation += cur.pose.psi.abs() * log.dt;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: usize,
    pub mean: MetricsReport,
    pub min: MetricsReport,
    pub max: MetricsReport,
}

pub fn aggregate(reports: &[MetricsReport]) -> Option<Summary> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mut sum = [0.0; 5];
    let mut lo = [f64::INFINITY; 5];
    let mut hi = [f64::NEG_INFINITY; 5];
    for r in reports {
        for (k, v) in r.values().into_iter().enumerate() {
            sum[k] += v;
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    Some(Summary {
        episodes: reports.len(),
        mean: MetricsReport::from_values(sum.map(|s| s / n)),
        min: MetricsReport::from_values(lo),
        max: MetricsReport::from_values(hi),
    })
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub controller: String,
    pub seed: u64,
    pub termination: Option<TerminationReason>,
    pub report: MetricsReport,
}

impl MetricsRow {
    pub fn from_log(log: &EpisodeLog) -> Result<Self, EvalError> {
        Ok(Self {
            controller: log.controller.clone(),
            seed: log.seed,
            termination: log.termination_reason,
            report: compute_metrics(log, &log.parse_track()?),
        })
    }
}

fn termination_label(t: Option<TerminationReason>) -> &'static str {
    match t {
        None => "",
        Some(TerminationReason::OffRoad) => "off_road",
        Some(TerminationReason::Collision) => "collision",
        Some(TerminationReason::TimeLimit) => "time_limit",
        Some(TerminationReason::Aborted) => "aborted",
    }
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(w, "episode,controller,seed,termination,{}", MetricsReport::NAMES.join(","))?;
    let fmt = |r: &MetricsReport| r.values().map(|v| v.to_string()).join(",");
    for (i, row) in rows.iter().enumerate() {
        let name = row.controller.replace([',', '\n'], "_");
        writeln!(w, "{i},{name},{},{},{}", row.seed, termination_label(row.termination), fmt(&row.report))?;
    }
    let reports: Vec<_> = rows.iter().map(|r| r.report).collect();
    if let Some(s) = aggregate(&reports) {
        writeln!(w, "mean,,,,{}", fmt(&s.mean))?;
    }
    Ok(())
}

pub fn write_logs_jsonl<W: Write>(mut w: W, logs: &[EpisodeLog]) -> Result<(), EvalError> {
    for log in logs {
        serde_json::to_writer(&mut w, log).map_err(|e| EvalError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_logs_jsonl<R: BufRead>(r: R) -> Result<Vec<EpisodeLog>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log: EpisodeLog =
            serde_json::from_str(&line).map_err(|e| EvalError::Format(format!("line {}: {e}", i + 1)))?;
        if log.version != LOG_VERSION {
            return Err(EvalError::Format(format!("line {}: unsupported log version {}", i + 1, log.version)));
        }
        out.push(log);
    }
    Ok(out)
}

/// Writes `metrics.csv` and `episodes.jsonl` into `dir`.
pub fn export(dir: &Path, logs: &[EpisodeLog]) -> Result<Vec<MetricsRow>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let rows = logs.iter().map(MetricsRow::from_log).collect::<Result<Vec<_>, _>>()?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.csv"))?);
    write_metrics_csv(&mut csv, &rows)?;
    csv.flush()?;
    let mut jl = std::io::BufWriter::new(std::fs::File::create(dir.join("episodes.jsonl"))?);
    write_logs_jsonl(&mut jl, logs)?;
    jl.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{maps, Vec2};
    use proptest::prelude::*;

    fn cfg(action: ActionKind, horizon: f64) -> EnvConfig {
        EnvConfig {
            action,
            horizon,
            ..EnvConfig::default()
        }
    }

    fn record(t: f64, s: f64, d: f64, psi: f64, lw: f64) -> StepRecord {
        StepRecord {
            t,
            state: VehicleState::new(Vec2::default(), 0.0),
            pose: LanePose {
                d,
                psi,
                s,
                in_right_lane: d.abs() <= lw / 2.0,
                on_road: d >= -lw / 2.0 && d <= 1.5 * lw,
            },
            rates: WheelRates::default(),
            reward: 0.0,
            p_coll: 0.0,
            lead: None,
        }
    }

    fn synthetic(track: &TrackMap, dt: f64, path: &[(f64, f64, f64)]) -> EpisodeLog {
        let lw = track.lane_width();
        EpisodeLog {
            version: LOG_VERSION,
            controller: "test".into(),
            map: "straight".into(),
            track: track.serialize(),
            seed: 0,
            dt,
            horizon: path.len() as f64 * dt,
            termination_reason: Some(TerminationReason::TimeLimit),
            records: path
                .iter()
                .enumerate()
                .map(|(k, &(s, d, psi))| record(k as f64 * dt, s, d, psi, lw))
                .collect(),
        }
    }

    #[test]
    fn straight_lane_driving() {
        let track = TrackMap::parse(maps::LONG_STRAIGHT).unwrap();
        let dt = 0.1;
        let path: Vec<_> = (0..=100).map(|k| (1.0 + 0.05 * k as f64, 0.0, 0.0)).collect();
        let m = compute_metrics(&synthetic(&track, dt, &path), &track);
        assert!((m.survival_time - 10.0).abs() < 1e-12);
        assert!((m.distance_ego_lane - 5.0).abs() < 1e-9);
        assert_eq!(m.distance_ego_lane, m.distance_both_lanes);
        assert_eq!(m.lateral_deviation, 0.0);
        assert_eq!(m.orientation_deviation, 0.0);
    }

    #[test]
    fn oncoming_lane_half_the_time() {
        let track = TrackMap::parse(maps::LONG_STRAIGHT).unwrap();
        let lw = track.lane_width();
        let path: Vec<_> = (0..=100)
            .map(|k| (1.0 + 0.05 * k as f64, if k > 50 { lw } else { 0.0 }, 0.0))
            .collect();
        let m = compute_metrics(&synthetic(&track, 0.1, &path), &track);
        assert!((m.distance_both_lanes - 2.0 * m.distance_ego_lane).abs() < 1e-9);
        assert!((m.lateral_deviation - 50.0 * lw * 0.1).abs() < 1e-9);
    }

    #[test]
    fn backward_motion_adds_nothing() {
        let track = TrackMap::parse(maps::LONG_STRAIGHT).unwrap();
        let path = [(2.0, 0.0, 0.0), (1.9, 0.0, 0.0), (1.95, 0.0, 0.0)];
        let m = compute_metrics(&synthetic(&track, 0.1, &path), &track);
        assert!((m.distance_both_lanes - 0.05).abs() < 1e-12);
    }

    #[test]
    fn aggregate_means_and_extremes() {
        let r = |s| MetricsReport {
            survival_time: s,
            ..MetricsReport::default()
        };
        let one = aggregate(&[r(7.0)]).unwrap();
        assert_eq!(one.mean, r(7.0));
        let two = aggregate(&[r(10.0), r(20.0)]).unwrap();
        assert_eq!(two.mean.survival_time, 15.0);
        assert_eq!((two.min.survival_time, two.max.survival_time), (10.0, 20.0));
        assert!(aggregate(&[]).is_none());
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("episode,controller,seed,termination,survival_time"));
    }

    #[test]
    fn full_brake_survives_horizon() {
        let mut env = Env::new(cfg(ActionKind::WheelVelocityBraking, 3.0)).unwrap();
        let log = run_episode(&mut Scripted::full_brake(), &mut env, 4).unwrap();
        let m = compute_metrics(&log, env.track());
        assert_eq!(log.termination_reason, Some(TerminationReason::TimeLimit));
        assert!((m.survival_time - 3.0).abs() < 1e-12);
        assert_eq!(m.distance_both_lanes, 0.0);
        assert_eq!(log.records.len(), 46);
        assert_eq!(log.records[0].t, 0.0);
        assert!(log.records.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn action_mismatch_is_rejected() {
        let mut env = Env::new(cfg(ActionKind::WheelVelocity, 1.0)).unwrap();
        let err = run_episode(&mut PdDriver::new(PdConfig::default()), &mut env, 0).unwrap_err();
        assert!(matches!(err, EvalError::ActionMismatch { .. }));
    }

    #[test]
    fn pd_short_episode_and_log_round_trip() {
        let c = cfg(ActionKind::Steering, 4.0);
        let logs = evaluate(&c, || Ok(Box::new(PdDriver::new(PdConfig::default()))), 3, 11, 2).unwrap();
        let again = evaluate(&c, || Ok(Box::new(PdDriver::new(PdConfig::default()))), 3, 11, 1).unwrap();
        assert_eq!(logs, again);
        for log in &logs {
            assert_eq!(log.termination_reason, Some(TerminationReason::TimeLimit));
        }
        let dir = tempfile::tempdir().unwrap();
        let rows = export(dir.path(), &logs).unwrap();
        let file = std::fs::File::open(dir.path().join("episodes.jsonl")).unwrap();
        let back = read_logs_jsonl(std::io::BufReader::new(file)).unwrap();
        assert_eq!(back, logs);
        for (log, row) in back.iter().zip(&rows) {
            let m = compute_metrics(log, &log.parse_track().unwrap());
            assert_eq!(m, row.report);
            assert!(m.distance_ego_lane > 0.0);
        }
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ego_never_exceeds_both(steps in prop::collection::vec((-0.05f64..0.1, -0.2f64..0.4, -1.0f64..1.0), 1..60)) {
            let track = TrackMap::parse(maps::RING_3X3).unwrap();
            let mut s = 0.0;
            let path: Vec<_> = steps.iter().map(|&(ds, d, psi)| { s += ds; (s.rem_euclid(track.total_length()), d, psi) }).collect();
            let m = compute_metrics(&synthetic(&track, 0.1, &path), &track);
            prop_assert!(m.distance_ego_lane <= m.distance_both_lanes);
            prop_assert!(m.lateral_deviation >= 0.0 && m.orientation_deviation >= 0.0);
        }

        #[test]
        fn metrics_add_over_a_cut(steps in prop::collection::vec((0.0f64..0.1, -0.1f64..0.3, -1.0f64..1.0), 2..60), cut in 0usize..60) {
            let track = TrackMap::parse(maps::RING_3X3).unwrap();
            let mut s = 0.0;
            let path: Vec<_> = steps.iter().map(|&(ds, d, psi)| { s += ds; (s.rem_euclid(track.total_length()), d, psi) }).collect();
            let cut = cut % (path.len() - 1) + 1;
            let whole = compute_metrics(&synthetic(&track, 0.1, &path), &track);
            let a = compute_metrics(&synthetic(&track, 0.1, &path[..=cut]), &track);
            let b = compute_metrics(&synthetic(&track, 0.1, &path[cut..]), &track);
            let close = |x: f64, y: f64| (x - y).abs() < 1e-9;
            prop_assert!(close(whole.survival_time, a.survival_time + b.survival_time));
            prop_assert!(close(whole.distance_ego_lane, a.distance_ego_lane + b.distance_ego_lane));
            prop_assert!(close(whole.distance_both_lanes, a.distance_both_lanes + b.distance_both_lanes));
            prop_assert!(close(whole.lateral_deviation, a.lateral_deviation + b.lateral_deviation));
            prop_assert!(close(whole.orientation_deviation, a.orientation_deviation + b.orientation_deviation));
        }
    }
}
