//! Keyboard teleoperation: message schema, the key-to-action table and the
//! transport-independent session state machine.
//!
//! The network side (websocket server, image compression, pacing) lives in
//! the CLI crate; everything here is synchronous and deterministic.

use serde::{Deserialize, Serialize};

use crate::baseline::braking_raw;
use crate::env::{map_action, ActionKind, Env, EnvConfig, EnvError, TerminationReason};
use crate::eval::{compute_metrics, EpisodeLog, EpisodeRecorder, MetricsReport};
use crate::track::LanePose;
use crate::vehicle::WheelRates;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 8700;
pub const CONTROLLER_ID: &str = "human";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeyState {
    #[serde(default)]
    pub up: bool,
    #[serde(default)]
    pub down: bool,
    #[serde(default)]
    pub left: bool,
    #[serde(default)]
    pub right: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        version: u32,
    },
    KeyState {
        #[serde(flatten)]
        keys: KeyState,
        /// Client clock, seconds; must not decrease within an episode.
        t_client: f64,
    },
    StartEpisode {
        seed: u64,
    },
    EndEpisode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        version: u32,
        step: usize,
        frame_rate: f64,
        horizon: f64,
        map: String,
    },
    Frame {
        version: u32,
        step: usize,
        t_server: f64,
        /// Base64 JPEG of the robot camera.
        camera_jpeg: String,
        /// Base64 PNG of the top-down view; empty when disabled.
        top_down_png: String,
        lane_pose: LanePose,
        reward: f64,
        metrics: MetricsReport,
        done: bool,
    },
    EpisodeSummary {
        version: u32,
        step: usize,
        seed: u64,
        termination_reason: Option<TerminationReason>,
        metrics: MetricsReport,
        log_file: Option<String>,
    },
    Error {
        version: u32,
        step: usize,
        message: String,
    },
}

/// Discrete driver command derived from arrow keys.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyAction {
    Steer(f64),
    Brake,
}

impl KeyAction {
    pub fn rates(self) -> WheelRates {
        match self {
            KeyAction::Steer(a) => map_action(ActionKind::Steering, &[a]).expect("one-dimensional action"),
            KeyAction::Brake => WheelRates::new(0.0, 0.0),
        }
    }

    /// Raw action for an environment using [`ActionKind::WheelVelocityBraking`].
    pub fn braking_raw(self) -> [f64; 2] {
        braking_raw(self.rates())
    }
}

/// Down brakes; up drives with half steering; a lone side key turns in place
/// around one wheel; opposite side keys cancel.
pub fn discrete_key_action(k: KeyState) -> KeyAction {
    if k.down {
        return KeyAction::Brake;
    }
    let side = f64::from(u8::from(k.right)) - f64::from(u8::from(k.left));
    match (k.up, side) {
        (true, s) => KeyAction::Steer(0.5 * s),
        (false, s) if s != 0.0 => KeyAction::Steer(s),
        _ => KeyAction::Brake,
    }
}

/// Environment settings for teleoperation: the configured scene with the
/// braking action mapping.
pub fn teleop_env_config(mut cfg: EnvConfig) -> EnvConfig {
    cfg.action = ActionKind::WheelVelocityBraking;
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub step: usize,
    pub lane_pose: LanePose,
    pub reward: f64,
    pub metrics: MetricsReport,
    pub done: bool,
}

/// One client's driving session. The caller owns pacing: feed key messages
/// as they arrive and call [`Session::tick`] once per control period.
pub struct Session {
    env: Env,
    keys: KeyState,
    last_t_client: Option<f64>,
    recorder: Option<EpisodeRecorder>,
    dropped: usize,
}

impl Session {
    pub fn new(cfg: EnvConfig) -> Result<Session, EnvError> {
        Ok(Session {
            env: Env::new(teleop_env_config(cfg))?,
            keys: KeyState::default(),
            last_t_client: None,
            recorder: None,
            dropped: 0,
        })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn keys(&self) -> KeyState {
        self.keys
    }

    /// Key messages discarded for carrying an older client timestamp.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn in_episode(&self) -> bool {
        self.recorder.is_some()
    }

    /// Latest-wins key update. Returns false when the message is stale.
    pub fn update_keys(&mut self, keys: KeyState, t_client: f64) -> bool {
        if self.last_t_client.is_some_and(|t| t_client < t) || !t_client.is_finite() {
            self.dropped += 1;
            return false;
        }
        self.last_t_client = Some(t_client);
        self.keys = keys;
        true
    }

    /// Starts a new episode, aborting any running one first.
    pub fn start(&mut self, seed: u64) -> Option<EpisodeLog> {
        let aborted = self.abort();
        self.env.reset(seed);
        self.recorder = Some(EpisodeRecorder::start(&self.env, CONTROLLER_ID));
        aborted
    }

    /// Advances one control period with the held key state. Returns `None`
    /// outside an episode.
    pub fn tick(&mut self) -> Result<Option<Tick>, EnvError> {
        let Some(rec) = self.recorder.as_mut() else {
            return Ok(None);
        };
        let step = self.env.step(&discrete_key_action(self.keys).braking_raw())?;
        rec.record(&self.env, &step);
        let metrics = compute_metrics(rec.log(), self.env.track());
        Ok(Some(Tick {
            step: self.env.step_count(),
            lane_pose: step.info.lane_pose,
            reward: step.reward,
            metrics,
            done: step.done,
        }))
    }

    /// Takes the finished episode log after a tick reported `done`.
    pub fn take_finished(&mut self) -> Option<EpisodeLog> {
        if self.env.is_done() {
            self.last_t_client = None;
            self.recorder.take().map(|r| r.finish(None))
        } else {
            None
        }
    }

    /// Ends the running episode as aborted (client request or disconnect).
    pub fn abort(&mut self) -> Option<EpisodeLog> {
        let rec = self.recorder.take()?;
        self.env.abort();
        self.last_t_client = None;
        Some(rec.finish(Some(TerminationReason::Aborted)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(up: bool, down: bool, left: bool, right: bool) -> KeyState {
        KeyState { up, down, left, right }
    }

    #[test]
    fn key_table() {
        let r = |k| discrete_key_action(k).rates();
        assert_eq!(r(keys(true, false, false, false)), WheelRates::new(1.0, 1.0));
        assert_eq!(r(keys(false, false, true, false)), WheelRates::new(0.0, 1.0));
        assert_eq!(r(keys(false, false, false, true)), WheelRates::new(1.0, 0.0));
        assert_eq!(r(keys(true, false, true, false)), WheelRates::new(0.5, 1.0));
        assert_eq!(r(keys(true, false, false, true)), WheelRates::new(1.0, 0.5));
        assert_eq!(r(KeyState::default()), WheelRates::new(0.0, 0.0));
        assert_eq!(r(keys(true, true, false, false)), WheelRates::new(0.0, 0.0));
        assert_eq!(discrete_key_action(keys(true, false, true, true)), KeyAction::Steer(0.0));
        for k in 0..16u8 {
            let ks = keys(k & 1 != 0, k & 2 != 0, k & 4 != 0, k & 8 != 0);
            let a = discrete_key_action(ks);
            let back = map_action(ActionKind::WheelVelocityBraking, &a.braking_raw()).unwrap();
            assert_eq!(back, a.rates());
        }
    }

    #[test]
    fn messages_round_trip() {
        let msg = ClientMessage::KeyState {
            keys: keys(true, false, true, false),
            t_client: 1.5,
        };
        let text = serde_json::to_string(&msg).unwrap();
        assert_eq!(text, r#"{"type":"key_state","up":true,"down":false,"left":true,"right":false,"t_client":1.5}"#);
        assert_eq!(serde_json::from_str::<ClientMessage>(&text).unwrap(), msg);
        let start: ClientMessage = serde_json::from_str(r#"{"type":"start_episode","seed":3}"#).unwrap();
        assert_eq!(start, ClientMessage::StartEpisode { seed: 3 });
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"warp"}"#).is_err());
    }

    #[test]
    fn idle_driver_survives_and_stale_keys_drop() {
        let cfg = EnvConfig {
            horizon: 2.0,
            ..EnvConfig::default()
        };
        let mut s = Session::new(cfg).unwrap();
        assert!(s.tick().unwrap().is_none());
        s.start(5);
        let mut last = None;
        while let Some(t) = s.tick().unwrap() {
            if t.done {
                last = Some(t);
                break;
            }
        }
        let t = last.unwrap();
        assert_eq!(t.step, 30);
        assert!((t.metrics.survival_time - 2.0).abs() < 1e-12);
        assert_eq!(t.metrics.distance_both_lanes, 0.0);
        let log = s.take_finished().unwrap();
        assert_eq!(log.termination_reason, Some(TerminationReason::TimeLimit));
        assert_eq!(log.controller, CONTROLLER_ID);

        s.start(6);
        assert!(s.update_keys(keys(true, false, false, false), 1.0));
        assert!(!s.update_keys(KeyState::default(), 0.5));
        assert_eq!(s.keys(), keys(true, false, false, false));
        assert_eq!(s.dropped(), 1);
        s.tick().unwrap();
        let log = s.abort().unwrap();
        assert_eq!(log.termination_reason, Some(TerminationReason::Aborted));
        assert_eq!(log.records.len(), 2);
        assert!(log.records[1].state.position != log.records[0].state.position);
    }
}
