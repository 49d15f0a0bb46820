//! Convolutional Gaussian policy and value networks with exact gradients.

mod checkpoint;
mod dist;
mod gradcheck;
mod net;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use dist::{entropy, kl_divergence, log_prob, sample_action, DistributionParams};
pub use gradcheck::{gradcheck, GradCheckReport};
pub use net::{
    orthogonal, ActorCritic, ConvGeom, ConvSpec, ForwardPass, Gradients, NetCache, NetRole,
    NetworkSpec, ParamArray, ParameterSet, Scalar, LOG_STD_INIT, LOG_STD_MAX, LOG_STD_MIN,
};

use crate::camera::{ObservationTensor, OBS_CHANNELS, OBS_SIZE};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ActorCritic<f32> {
    /// Action distribution for one observation.
    pub fn forward_policy_obs(&self, obs: &ObservationTensor) -> Result<DistributionParams, PolicyError> {
        if self.spec.input != [OBS_SIZE, OBS_SIZE, OBS_CHANNELS] {
            return Err(PolicyError::Shape(format!(
                "network expects {:?} input, observations are {:?}",
                self.spec.input,
                obs.shape()
            )));
        }
        let pass = self.forward(&obs.to_f32(), 1)?;
        Ok(self.distribution(pass.mean()))
    }
}

impl<T: Scalar> ActorCritic<T> {
    /// Wraps one row of policy outputs with the shared `log_std`.
    pub fn distribution(&self, mean_row: &[T]) -> DistributionParams {
        DistributionParams::new(mean_row.iter().map(|x| x.as_f64()).collect(), self.log_std())
    }
}

/// The action distribution for one observation.
pub fn forward_policy(params: &ActorCritic<f32>, obs: &ObservationTensor) -> Result<DistributionParams, PolicyError> {
    params.forward_policy_obs(obs)
}
