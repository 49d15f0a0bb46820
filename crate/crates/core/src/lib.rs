//! Lane-following reinforcement-learning workbench.
//!
//! A tile-map differential-drive simulator with a software camera and domain
//! randomization ([`track`], [`vehicle`], [`camera`], [`env`]), a convolutional
//! Gaussian policy with hand-written backpropagation ([`policy`]), a PPO trainer
//! ([`ppo`]), a PD-controller baseline ([`baseline`]), the evaluation metrics
//! ([`eval`]) and the teleoperation session logic ([`teleop`]).

pub mod baseline;
pub mod camera;
pub mod config;
pub mod env;
pub mod eval;
pub mod policy;
pub mod ppo;
pub mod teleop;
pub mod track;
pub mod vehicle;
