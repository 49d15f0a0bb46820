use std::f64::consts::{E, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::net::{LOG_STD_MAX, LOG_STD_MIN};

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionParams {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DistributionParams {
    /// Clamps `log_std` into `[-5, 2]`.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_std.len(), "mean and log_std dimensions differ");
        let log_std = log_std
            .into_iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Self { mean, log_std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

pub fn log_prob(dist: &DistributionParams, action: &[f64]) -> f64 {
    assert_eq!(action.len(), dist.dim());
    dist.mean
        .iter()
        .zip(&dist.log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LOG_2PI
        })
        .sum()
}

pub fn sample_action<R: Rng + ?Sized>(dist: &DistributionParams, rng: &mut R) -> (Vec<f64>, f64) {
    let action: Vec<f64> = dist
        .mean
        .iter()
        .zip(&dist.log_std)
        .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lp = log_prob(dist, &action);
    (action, lp)
}

/// `KL(old || new)` in closed form.
pub fn kl_divergence(old: &DistributionParams, new: &DistributionParams) -> f64 {
    assert_eq!(old.dim(), new.dim());
    (0..old.dim())
        .map(|i| {
            let (m0, l0) = (old.mean[i], old.log_std[i]);
            let (m1, l1) = (new.mean[i], new.log_std[i]);
            let var_ratio = (2.0 * (l0 - l1)).exp();
            let dm = (m0 - m1) * (-l1).exp();
            l1 - l0 + 0.5 * (var_ratio + dm * dm) - 0.5
        })
        .sum::<f64>()
        .max(0.0)
}

pub fn entropy(dist: &DistributionParams) -> f64 {
    let per_dim = 0.5 * (2.0 * PI * E).ln();
    dist.log_std.iter().map(|ls| ls + per_dim).sum()
}
