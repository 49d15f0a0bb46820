//! PPO with a clipped surrogate, adaptive KL penalty, GAE and parallel rollouts.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{mix_seed, ObservationTensor, OBS_LEN};
use crate::env::{Env, EnvConfig, EnvError};
use crate::policy::{
    entropy, kl_divergence, log_prob, sample_action, ActorCritic, Checkpoint, DistributionParams,
    NetworkSpec, ParameterSet, PolicyError,
};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid ppo config: {0}")]
    Config(String),
    #[error("sequence lengths differ: {0}")]
    LengthMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: u64, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda_gae: f64,
    pub clip_epsilon: f64,
    /// Initial KL penalty coefficient.
    pub beta: f64,
    pub kl_target: f64,
    pub c_value: f64,
    pub c_entropy: f64,
    pub learning_rate: f64,
    /// Steps per worker per iteration.
    pub rollout_length: usize,
    pub num_workers: usize,
    pub minibatch_size: usize,
    pub epochs_per_iteration: usize,
    pub total_steps: u64,
    /// Per-network gradient norm cap; 0 disables clipping.
    pub max_grad_norm: f64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0: initial and final only).
    pub checkpoint_every: u64,
    /// Completed episodes averaged in the logged episode statistics.
    pub stats_window: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda_gae: 0.95,
            clip_epsilon: 0.2,
            beta: 1.0,
            kl_target: 0.01,
            c_value: 0.5,
            c_entropy: 0.003,
            learning_rate: 3e-4,
            rollout_length: 1024,
            num_workers: 4,
            minibatch_size: 64,
            epochs_per_iteration: 3,
            total_steps: 100_000,
            max_grad_norm: 0.5,
            seed: 0,
            checkpoint_every: 10,
            stats_window: 20,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda_gae) {
            return bad("lambda_gae must lie in [0, 1]");
        }
        if !(0.1..=0.3).contains(&self.clip_epsilon) {
            return bad("clip_epsilon must lie in [0.1, 0.3]");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.kl_target > 0.0) {
            return bad("kl_target must be positive");
        }
        if !(self.c_value >= 0.0 && self.c_entropy >= 0.0) {
            return bad("c_value and c_entropy must be non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.rollout_length == 0 || self.num_workers == 0 || self.minibatch_size == 0 {
            return bad("rollout_length, num_workers and minibatch_size must be positive");
        }
        if self.epochs_per_iteration == 0 {
            return bad("epochs_per_iteration must be positive");
        }
        if !(self.max_grad_norm >= 0.0 && self.max_grad_norm.is_finite()) {
            return bad("max_grad_norm must be non-negative");
        }
        if self.stats_window == 0 {
            return bad("stats_window must be positive");
        }
        Ok(())
    }

    pub fn steps_per_iteration(&self) -> u64 {
        (self.rollout_length * self.num_workers) as u64
    }
}

/// Advantages and returns for one worker's trajectory segment.
/// `values[t]` estimates `V(s_t)`; `bootstrap_value` is `V(s_T)` after the last step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda_gae: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(PpoError::LengthMismatch(format!(
            "rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let delta = rewards[t] + gamma * next_v * not_done - values[t];
        next_adv = delta + gamma * lambda_gae * not_done * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

pub fn clip_surrogate(ratio: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (ratio * advantage).min(clipped * advantage)
}

pub fn update_kl_coefficient(beta: f64, measured_kl: f64, kl_target: f64) -> f64 {
    if measured_kl > 2.0 * kl_target {
        beta * 1.5
    } else if measured_kl < kl_target / 2.0 {
        beta / 1.5
    } else {
        beta
    }
}

/// One stored transition with its old-policy quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: ObservationTensor,
    pub action: Vec<f64>,
    pub old: DistributionParams,
    pub log_prob_old: f64,
    pub value_old: f64,
    pub reward: f64,
    pub done: bool,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    /// `-mean(clip_surrogate)`.
    pub policy_loss: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Per-sample derivatives of the loss with respect to the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub d_mean: Vec<f64>,
    pub d_log_std: Vec<f64>,
    pub d_value: Vec<f64>,
}

/// Combined loss on a minibatch: clipped surrogate, KL penalty, value error
/// and entropy bonus, each averaged over samples.
pub fn ppo_loss(
    batch: &[&Sample],
    new: &[DistributionParams],
    new_values: &[f64],
    beta: f64,
    cfg: &PpoConfig,
) -> (LossStats, LossGrads) {
    let n = batch.len();
    assert!(n > 0 && new.len() == n && new_values.len() == n);
    let dim = new[0].dim();
    let mut stats = LossStats::default();
    let mut g = LossGrads {
        d_mean: vec![0.0; n * dim],
        d_log_std: vec![0.0; n * dim],
        d_value: vec![0.0; n],
    };
    let eps = cfg.clip_epsilon;
    for (i, (s, d)) in batch.iter().zip(new).enumerate() {
        let lp = log_prob(d, &s.action);
        let ratio = (lp - s.log_prob_old).exp();
        let a = s.advantage;
        let surr = clip_surrogate(ratio, a, eps);
        let kl = kl_divergence(&s.old, d);
        let ent = entropy(d);
        let verr = new_values[i] - s.ret;
        stats.policy_loss -= surr;
        stats.mean_kl += kl;
        stats.entropy += ent;
        stats.value_loss += verr * verr;
        if (ratio - 1.0).abs() > eps {
            stats.clip_fraction += 1.0;
        }

        // the unclipped branch carries gradient whenever the min selects it
        let unclipped_active = ratio * a <= ratio.clamp(1.0 - eps, 1.0 + eps) * a;
        let surr_w = if unclipped_active { -a * ratio } else { 0.0 };
        for j in 0..dim {
            let (mu, ls) = (d.mean[j], d.log_std[j]);
            let inv_var = (-2.0 * ls).exp();
            let z = s.action[j] - mu;
            let dlp_dmu = z * inv_var;
            let dlp_dls = z * z * inv_var - 1.0;
            let (mu0, ls0) = (s.old.mean[j], s.old.log_std[j]);
            let dkl_dmu = (mu - mu0) * inv_var;
            let dkl_dls = 1.0 - (2.0 * (ls0 - ls)).exp() - (mu0 - mu).powi(2) * inv_var;
            g.d_mean[i * dim + j] = surr_w * dlp_dmu + beta * dkl_dmu;
            g.d_log_std[i * dim + j] = surr_w * dlp_dls + beta * dkl_dls - cfg.c_entropy;
        }
        g.d_value[i] = 2.0 * cfg.c_value * verr;
    }
    let inv = 1.0 / n as f64;
    stats.policy_loss *= inv;
    stats.mean_kl *= inv;
    stats.entropy *= inv;
    stats.value_loss *= inv;
    stats.clip_fraction *= inv;
    stats.loss = stats.policy_loss + beta * stats.mean_kl + cfg.c_value * stats.value_loss
        - cfg.c_entropy * stats.entropy;
    (stats, g)
}

/// Adam with default moment parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: ActorCritic<f32>,
    v: ActorCritic<f32>,
}

impl Adam {
    pub fn new(model: &ActorCritic<f32>, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
        }
    }

    pub fn step(&mut self, model: &mut ActorCritic<f32>, grads: &ActorCritic<f32>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (self.learning_rate * bc2.sqrt() / bc1) as f32;
        let (b1, b2, eps) = (self.beta1 as f32, self.beta2 as f32, self.eps as f32);
        let eps_hat = eps * bc2.sqrt() as f32;
        let sets = [
            (&mut model.policy, &grads.policy, &mut self.m.policy, &mut self.v.policy),
            (&mut model.value, &grads.value, &mut self.m.value, &mut self.v.value),
        ];
        for (p, g, m, v) in sets {
            for (((p, g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps_hat);
            }
        }
    }
}

/// Scales `g` so its norm is at most `max_norm`; returns the norm before scaling.
pub fn clip_grad_norm(g: &mut ParameterSet<f32>, max_norm: f64) -> f64 {
    let norm = g.sq_norm().sqrt();
    if norm > max_norm {
        g.scale((max_norm / norm) as f32);
    }
    norm
}

/// One record of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: u64,
    pub steps: u64,
    /// Statistics over the most recent completed episodes; `None` before the first one ends.
    pub mean_episode_reward: Option<f64>,
    pub min_episode_reward: Option<f64>,
    pub max_episode_reward: Option<f64>,
    pub mean_episode_length: Option<f64>,
    /// Episodes that ended during this iteration.
    pub episodes_completed: u64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub beta: f64,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

struct Worker {
    index: u64,
    env: Env,
    rng: ChaCha8Rng,
    obs: ObservationTensor,
    episode: u64,
    episode_return: f64,
    episode_length: u64,
}

struct Rollout {
    samples: Vec<Sample>,
    bootstrap_value: f64,
    /// (return, length) of every episode finished during the rollout.
    finished: Vec<(f64, u64)>,
}

impl Worker {
    fn episode_seed(base: u64, worker: u64, episode: u64) -> u64 {
        mix_seed(mix_seed(base, worker), episode)
    }

    fn collect(&mut self, model: &ActorCritic<f32>, steps: usize, base_seed: u64) -> Result<Rollout, PpoError> {
        let mut samples = Vec::with_capacity(steps);
        let mut finished = Vec::new();
        for _ in 0..steps {
            let pass = model.forward(&self.obs.to_f32(), 1)?;
            let dist = model.distribution(pass.mean());
            let value = pass.values()[0] as f64;
            let (action, lp) = sample_action(&dist, &mut self.rng);
            let r = self.env.step(&action)?;
            self.episode_return += r.reward;
            self.episode_length += 1;
            let obs = std::mem::replace(&mut self.obs, r.observation);
            samples.push(Sample {
                obs,
                action,
                old: dist,
                log_prob_old: lp,
                value_old: value,
                reward: r.reward,
                done: r.done,
                advantage: 0.0,
                ret: 0.0,
            });
            if r.done {
                finished.push((self.episode_return, self.episode_length));
                self.episode += 1;
                self.episode_return = 0.0;
                self.episode_length = 0;
                self.obs = self.env.reset(Worker::episode_seed(base_seed, self.index, self.episode));
            }
        }
        let bootstrap_value = model.forward(&self.obs.to_f32(), 1)?.values()[0] as f64;
        Ok(Rollout {
            samples,
            bootstrap_value,
            finished,
        })
    }
}

/// What a finished training run leaves behind.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ActorCritic<f32>,
    pub steps: u64,
    pub log: Vec<IterationLog>,
    pub final_checkpoint: PathBuf,
}

pub struct Trainer {
    cfg: PpoConfig,
    model: ActorCritic<f32>,
    adam: Adam,
    beta: f64,
    steps: u64,
    iteration: u64,
    workers: Vec<Worker>,
    rng: ChaCha8Rng,
    window: VecDeque<(f64, u64)>,
    meta: serde_json::Value,
}

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5F1E;
const ACTION_STREAM: u64 = 0xAC7;

impl Trainer {
    /// `meta` is stored in every checkpoint (e.g. the resolved run config).
    pub fn new(env_cfg: &EnvConfig, cfg: &PpoConfig, meta: serde_json::Value) -> Result<Trainer, PpoError> {
        cfg.validate()?;
        env_cfg.validate()?;
        let spec = NetworkSpec::standard(env_cfg.action.dim());
        let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, INIT_STREAM));
        let model = ActorCritic::init(spec, &mut init_rng)?;
        let mut workers = Vec::with_capacity(cfg.num_workers);
        for w in 0..cfg.num_workers as u64 {
            let mut env = Env::new(env_cfg.clone())?;
            let obs = env.reset(Worker::episode_seed(cfg.seed, w, 0));
            workers.push(Worker {
                index: w,
                env,
                rng: ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, ACTION_STREAM), w)),
                obs,
                episode: 0,
                episode_return: 0.0,
                episode_length: 0,
            });
        }
        Ok(Trainer {
            adam: Adam::new(&model, cfg.learning_rate),
            beta: cfg.beta,
            steps: 0,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SHUFFLE_STREAM)),
            window: VecDeque::with_capacity(cfg.stats_window),
            model,
            workers,
            meta,
            cfg: cfg.clone(),
        })
    }

    pub fn model(&self) -> &ActorCritic<f32> {
        &self.model
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_finished(&self) -> bool {
        self.steps >= self.cfg.total_steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            step: self.steps,
            meta: self.meta.clone(),
        }
    }

    /// Collects one rollout from every worker and runs the update epochs.
    pub fn iterate(&mut self) -> Result<IterationLog, PpoError> {
        let cfg = &self.cfg;
        let model = &self.model;
        let (len, seed) = (cfg.rollout_length, cfg.seed);
        let rollouts: Vec<Result<Rollout, PpoError>> = if self.workers.len() == 1 {
            vec![self.workers[0].collect(model, len, seed)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .workers
                    .iter_mut()
                    .map(|w| s.spawn(move || w.collect(model, len, seed)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("rollout worker panicked"))
                    .collect()
            })
        };

        let mut samples = Vec::with_capacity(len * self.workers.len());
        let mut episodes_completed = 0;
        for r in rollouts {
            let mut r = r?;
            let rewards: Vec<f64> = r.samples.iter().map(|s| s.reward).collect();
            let values: Vec<f64> = r.samples.iter().map(|s| s.value_old).collect();
            let dones: Vec<bool> = r.samples.iter().map(|s| s.done).collect();
            let (adv, ret) = compute_gae(&rewards, &values, &dones, r.bootstrap_value, cfg.gamma, cfg.lambda_gae)?;
            for ((s, a), rt) in r.samples.iter_mut().zip(adv).zip(ret) {
                s.advantage = a;
                s.ret = rt;
            }
            episodes_completed += r.finished.len() as u64;
            for f in r.finished {
                if self.window.len() == cfg.stats_window {
                    self.window.pop_front();
                }
                self.window.push_back(f);
            }
            samples.extend(r.samples);
        }
        normalize_advantages(&mut samples);
        self.steps += samples.len() as u64;
        self.iteration += 1;

        let stats = self.update(&samples)?;
        self.beta = update_kl_coefficient(self.beta, stats.mean_kl, self.cfg.kl_target);

        let rewards: Vec<f64> = self.window.iter().map(|w| w.0).collect();
        let n = rewards.len() as f64;
        let some = |x: f64| (n > 0.0).then_some(x);
        Ok(IterationLog {
            iteration: self.iteration,
            steps: self.steps,
            mean_episode_reward: some(rewards.iter().sum::<f64>() / n),
            min_episode_reward: some(rewards.iter().copied().fold(f64::INFINITY, f64::min)),
            max_episode_reward: some(rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            mean_episode_length: some(self.window.iter().map(|w| w.1 as f64).sum::<f64>() / n),
            episodes_completed,
            mean_kl: stats.mean_kl,
            clip_fraction: stats.clip_fraction,
            beta: self.beta,
            loss: stats.loss,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
        })
    }

    /// Minibatch epochs; the returned statistics average the last epoch.
    fn update(&mut self, samples: &[Sample]) -> Result<LossStats, PpoError> {
        let mb = self.cfg.minibatch_size.min(samples.len());
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut last = LossStats::default();
        let mut input = vec![0f32; mb * OBS_LEN];
        for _ in 0..self.cfg.epochs_per_iteration {
            order.shuffle(&mut self.rng);
            let mut acc = LossStats::default();
            let mut count = 0.0;
            for chunk in order.chunks(mb) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                let b = batch.len();
                let x = &mut input[..b * OBS_LEN];
                for (dst, s) in x.chunks_exact_mut(OBS_LEN).zip(&batch) {
                    s.obs.write_f32(dst);
                }
                let pass = self.model.forward(x, b)?;
                let a = self.model.spec.action_dim;
                let dists: Vec<DistributionParams> =
                    pass.mean().chunks_exact(a).map(|m| self.model.distribution(m)).collect();
                let values: Vec<f64> = pass.values().iter().map(|&v| v as f64).collect();
                let (stats, g) = ppo_loss(&batch, &dists, &values, self.beta, &self.cfg);
                if !stats.loss.is_finite() {
                    return Err(PpoError::NonFinite {
                        iteration: self.iteration,
                        detail: format!("{stats:?}"),
                    });
                }
                let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
                let mut grads = self
                    .model
                    .backward(&pass, x, &f(&g.d_mean), &f(&g.d_log_std), &f(&g.d_value))?;
                if self.cfg.max_grad_norm > 0.0 {
                    clip_grad_norm(&mut grads.policy, self.cfg.max_grad_norm);
                    clip_grad_norm(&mut grads.value, self.cfg.max_grad_norm);
                }
                self.adam.step(&mut self.model, &grads);
                let w = b as f64;
                acc.loss += stats.loss * w;
                acc.policy_loss += stats.policy_loss * w;
                acc.mean_kl += stats.mean_kl * w;
                acc.clip_fraction += stats.clip_fraction * w;
                acc.value_loss += stats.value_loss * w;
                acc.entropy += stats.entropy * w;
                count += w;
            }
            last = LossStats {
                loss: acc.loss / count,
                policy_loss: acc.policy_loss / count,
                mean_kl: acc.mean_kl / count,
                clip_fraction: acc.clip_fraction / count,
                value_loss: acc.value_loss / count,
                entropy: acc.entropy / count,
            };
        }
        if !self.model.is_finite() {
            return Err(PpoError::NonFinite {
                iteration: self.iteration,
                detail: "parameters became non-finite".into(),
            });
        }
        Ok(last)
    }
}

fn normalize_advantages(samples: &mut [Sample]) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for s in samples {
        s.advantage = (s.advantage - mean) / std;
    }
}

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.lfck";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.lfck";

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("step_{step:09}.lfck"))
}

/// Full training run writing `train_log.jsonl` and checkpoints into `run_dir`.
/// `on_iteration` sees every log record as it is produced.
pub fn train(
    env_cfg: &EnvConfig,
    cfg: &PpoConfig,
    run_dir: &Path,
    meta: serde_json::Value,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<TrainOutcome, PpoError> {
    let mut trainer = Trainer::new(env_cfg, cfg, meta)?;
    std::fs::create_dir_all(run_dir.join(CHECKPOINT_DIR))?;
    let mut log_file = BufWriter::new(File::create(run_dir.join(TRAIN_LOG))?);
    trainer.checkpoint().save(&checkpoint_path(run_dir, 0))?;

    let mut log = Vec::new();
    let mut last_good = trainer.checkpoint();
    while !trainer.is_finished() {
        let rec = match trainer.iterate() {
            Ok(rec) => rec,
            Err(e @ PpoError::NonFinite { .. }) => {
                last_good.save(&run_dir.join(LAST_GOOD_CHECKPOINT))?;
                log_file.flush()?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        serde_json::to_writer(&mut log_file, &rec).map_err(std::io::Error::from)?;
        log_file.write_all(b"\n")?;
        log_file.flush()?;
        on_iteration(&rec);
        last_good = trainer.checkpoint();
        if cfg.checkpoint_every > 0 && rec.iteration % cfg.checkpoint_every == 0 {
            last_good.save(&checkpoint_path(run_dir, trainer.steps()))?;
        }
        log.push(rec);
    }
    let final_checkpoint = if cfg.total_steps == 0 {
        checkpoint_path(run_dir, 0)
    } else {
        let p = run_dir.join(FINAL_CHECKPOINT);
        trainer.checkpoint().save(&p)?;
        p
    };
    Ok(TrainOutcome {
        model: trainer.model.clone(),
        steps: trainer.steps,
        log,
        final_checkpoint,
    })
}

/// Reads a training log written by [`train`].
pub fn read_train_log(path: &Path) -> Result<Vec<IterationLog>, PpoError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| PpoError::Io(e.into())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Direct double sum of the GAE definition.
    fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let vnext = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        let delta = |t: usize| r[t] + g * vnext(t) * if d[t] { 0.0 } else { 1.0 } - v[t];
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                for k in t..n {
                    total += (g * l).powi((k - t) as i32) * delta(k);
                    if d[k] {
                        break;
                    }
                }
                total
            })
            .collect()
    }

    #[test]
    fn gae_examples() {
        let (a, r) = compute_gae(&[1.0], &[0.0], &[false], 0.0, 1.0, 1.0).unwrap();
        assert_eq!((a[0], r[0]), (1.0, 1.0));
        let rw = [0.5, -1.0, 2.0];
        let v = [0.1, 0.4, -0.3];
        let (a, _) = compute_gae(&rw, &v, &[false, false, false], 0.7, 0.9, 0.0).unwrap();
        assert!((a[0] - (0.5 + 0.9 * 0.4 - 0.1)).abs() < 1e-15);
        assert!((a[2] - (2.0 + 0.9 * 0.7 + 0.3)).abs() < 1e-15);
        assert!(compute_gae(&rw, &v[..2], &[false; 3], 0.0, 0.9, 0.9).is_err());
    }

    #[test]
    fn gae_matches_double_sum_on_length_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let r: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d: Vec<bool> = (0..5).map(|_| rng.random_bool(0.3)).collect();
            let boot = rng.random_range(-1.0..1.0);
            let (g, l) = (rng.random_range(0.5..1.0), rng.random_range(0.0..1.0));
            let (a, ret) = compute_gae(&r, &v, &d, boot, g, l).unwrap();
            let o = gae_oracle(&r, &v, &d, boot, g, l);
            for t in 0..5 {
                assert!((a[t] - o[t]).abs() < 1e-9);
                assert!((ret[t] - (o[t] + v[t])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gae_undiscounted_reward_to_go() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let (a, _) = compute_gae(&r, &[0.0; 4], &[false; 4], 0.0, 1.0, 1.0).unwrap();
        assert_eq!(a, vec![10.0, 9.0, 7.0, 4.0]);
    }

    #[test]
    fn gae_respects_episode_boundaries() {
        // a huge reward right after a done must not leak backwards
        let r = [0.0, 0.0, 1000.0, 0.0];
        let d = [false, true, false, false];
        let (a, _) = compute_gae(&r, &[0.0; 4], &d, 0.0, 0.99, 0.95).unwrap();
        assert_eq!(a[0], 0.0);
        assert_eq!(a[1], 0.0);
        assert!(a[2] > 999.0);
    }

    #[test]
    fn clip_surrogate_examples() {
        assert_eq!(clip_surrogate(1.5, 1.0, 0.2), 1.2);
        assert_eq!(clip_surrogate(1.0, -0.37, 0.2), -0.37);
        assert_eq!(clip_surrogate(0.5, -1.0, 0.2), -0.8);
    }

    #[test]
    fn kl_coefficient_rule() {
        assert_eq!(update_kl_coefficient(2.0, 0.01, 0.01), 2.0);
        assert_eq!(update_kl_coefficient(2.0, 0.03, 0.01), 3.0);
        assert_eq!(update_kl_coefficient(3.0, 0.0025, 0.01), 2.0);
        assert_eq!(update_kl_coefficient(2.0, 0.02, 0.01), 2.0);
        assert_eq!(update_kl_coefficient(2.0, 0.005, 0.01), 2.0);
    }

    fn sample(action: f64, mean: f64, ls: f64, adv: f64, value: f64, ret: f64) -> Sample {
        let old = DistributionParams::new(vec![mean], vec![ls]);
        Sample {
            obs: ObservationTensor::from_codes(vec![0; OBS_LEN]).unwrap(),
            log_prob_old: log_prob(&old, &[action]),
            action: vec![action],
            old,
            value_old: value,
            reward: 0.0,
            done: false,
            advantage: adv,
            ret,
        }
    }

    #[test]
    fn loss_at_old_policy() {
        let s = [sample(0.2, 0.0, -0.5, 1.0, 0.3, 0.3), sample(-0.1, 0.1, -0.5, -1.0, 0.0, 0.0)];
        let b: Vec<&Sample> = s.iter().collect();
        let new: Vec<_> = s.iter().map(|s| s.old.clone()).collect();
        let (st, _) = ppo_loss(&b, &new, &[0.3, 0.0], 1.0, &PpoConfig::default());
        assert_eq!(st.mean_kl, 0.0);
        assert_eq!(st.clip_fraction, 0.0);
        assert!(st.policy_loss.abs() < 1e-15);
        assert_eq!(st.value_loss, 0.0);
    }

    #[test]
    fn loss_hand_evaluation() {
        // ratios 1.5 and 0.5 built by shifting log_prob_old
        let mut s1 = sample(0.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        s1.log_prob_old -= 1.5f64.ln();
        let mut s2 = sample(0.0, 0.0, 0.0, -1.0, 0.0, -2.0);
        s2.log_prob_old -= 0.5f64.ln();
        let new = vec![s1.old.clone(), s2.old.clone()];
        let cfg = PpoConfig {
            c_value: 0.5,
            c_entropy: 0.01,
            ..Default::default()
        };
        let (st, _) = ppo_loss(&[&s1, &s2], &new, &[0.5, -1.0], 0.0, &cfg);
        let surr = (1.2 + -0.8) / 2.0;
        let vloss = (0.25 + 1.0) / 2.0;
        let ent = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((st.loss - (-surr + 0.5 * vloss - 0.01 * ent)).abs() < 1e-12);
        assert_eq!(st.clip_fraction, 1.0);

        let bare = PpoConfig {
            c_value: 0.0,
            c_entropy: 0.0,
            ..Default::default()
        };
        let (st, _) = ppo_loss(&[&s1, &s2], &new, &[0.5, -1.0], 0.0, &bare);
        assert!((st.loss + surr).abs() < 1e-15);
    }

    /// Finite differences of the loss in the distribution parameters and value.
    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = PpoConfig::default();
        for _ in 0..50 {
            let s: Vec<Sample> = (0..3)
                .map(|_| {
                    sample(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-1.0..0.0),
                        rng.random_range(-2.0..2.0),
                        0.0,
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            let b: Vec<&Sample> = s.iter().collect();
            let new: Vec<DistributionParams> = s
                .iter()
                .map(|s| {
                    DistributionParams::new(
                        vec![s.old.mean[0] + rng.random_range(-0.3..0.3)],
                        vec![s.old.log_std[0] + rng.random_range(-0.3..0.3)],
                    )
                })
                .collect();
            let vals: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let beta = 0.7;
            let (_, g) = ppo_loss(&b, &new, &vals, beta, &cfg);
            let h = 1e-6;
            let total = |new: &[DistributionParams], vals: &[f64]| ppo_loss(&b, new, vals, beta, &cfg).0.loss * 3.0;
            for i in 0..3 {
                let mut p = new.clone();
                let mut m = new.clone();
                p[i].mean[0] += h;
                m[i].mean[0] -= h;
                let fd = (total(&p, &vals) - total(&m, &vals)) / (2.0 * h);
                // skip points sitting on the clip boundary
                let ratio = (log_prob(&new[i], &s[i].action) - s[i].log_prob_old).exp();
                if ((ratio - 1.0).abs() - cfg.clip_epsilon).abs() < 1e-4 {
                    continue;
                }
                assert!((fd - g.d_mean[i]).abs() < 1e-5, "d_mean {fd} vs {}", g.d_mean[i]);
                let mut p = new.clone();
                let mut m = new.clone();
                p[i].log_std[0] += h;
                m[i].log_std[0] -= h;
                let fd = (total(&p, &vals) - total(&m, &vals)) / (2.0 * h);
                assert!((fd - g.d_log_std[i]).abs() < 1e-5, "d_log_std {fd} vs {}", g.d_log_std[i]);
                let mut vp = vals.clone();
                let mut vm = vals.clone();
                vp[i] += h;
                vm[i] -= h;
                let fd = (total(&new, &vp) - total(&new, &vm)) / (2.0 * h);
                assert!((fd - g.d_value[i]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn vanilla_policy_gradient_at_old_policy() {
        let s = [sample(0.3, 0.1, -0.4, 1.3, 0.0, 0.0), sample(-0.2, 0.0, -0.4, -0.6, 0.0, 0.0)];
        let b: Vec<&Sample> = s.iter().collect();
        let new: Vec<_> = s.iter().map(|s| s.old.clone()).collect();
        let cfg = PpoConfig {
            c_value: 0.0,
            c_entropy: 0.0,
            ..Default::default()
        };
        let (_, g) = ppo_loss(&b, &new, &[0.0, 0.0], 0.0, &cfg);
        for (i, s) in s.iter().enumerate() {
            let var = (2.0 * s.old.log_std[0]).exp();
            let dlogp = (s.action[0] - s.old.mean[0]) / var;
            assert!((g.d_mean[i] + s.advantage * dlogp).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut m = ActorCritic::<f32>::zeros(NetworkSpec::tiny(1));
        let mut g = m.zeros_like();
        g.policy.arrays[0].data[0] = 3.0;
        g.value.arrays[0].data[0] = -0.01;
        let mut adam = Adam::new(&m, 0.1);
        adam.step(&mut m, &g);
        assert!((m.policy.arrays[0].data[0] + 0.1).abs() < 1e-6);
        assert!((m.value.arrays[0].data[0] - 0.1).abs() < 1e-5);
        assert_eq!(m.policy.arrays[0].data[1], 0.0);
    }

    #[test]
    fn grad_norm_clipping() {
        let mut g = ParameterSet::<f32>::zeros(&NetworkSpec::tiny(1), crate::policy::NetRole::Value);
        g.arrays[0].data[0] = 3.0;
        g.arrays[1].data[0] = 4.0;
        assert!((clip_grad_norm(&mut g, 1.0) - 5.0).abs() < 1e-6);
        assert!((g.sq_norm().sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        for bad in [
            PpoConfig { clip_epsilon: 0.5, ..Default::default() },
            PpoConfig { gamma: 1.5, ..Default::default() },
            PpoConfig { beta: 0.0, ..Default::default() },
            PpoConfig { num_workers: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn small_cfg(total: u64, workers: usize) -> PpoConfig {
        PpoConfig {
            rollout_length: 32,
            num_workers: workers,
            minibatch_size: 16,
            epochs_per_iteration: 2,
            total_steps: total,
            seed: 7,
            checkpoint_every: 1,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_writes_initial_checkpoint_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = train(&EnvConfig::default(), &small_cfg(0, 1), dir.path(), serde_json::Value::Null, |_| {}).unwrap();
        assert!(out.log.is_empty());
        let cks: Vec<_> = std::fs::read_dir(dir.path().join(CHECKPOINT_DIR)).unwrap().collect();
        assert_eq!(cks.len(), 1);
        assert!(!dir.path().join(FINAL_CHECKPOINT).exists());
        assert_eq!(read_train_log(&dir.path().join(TRAIN_LOG)).unwrap(), vec![]);
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let out = train(&EnvConfig::default(), &small_cfg(128, 2), dir.path(), serde_json::Value::Null, |_| {}).unwrap();
            let text = std::fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
            (out.model, text)
        };
        let (m1, t1) = run();
        let (m2, t2) = run();
        assert_eq!(t1, t2);
        assert_eq!(m1, m2);
        assert_eq!(t1.lines().count(), 2);
    }

    proptest! {
        #[test]
        fn clip_fraction_and_kl_in_range(
            shifts in proptest::collection::vec((-1.0..1.0f64, -0.5..0.5f64, -2.0..2.0f64), 1..6)
        ) {
            let s: Vec<Sample> = shifts.iter().map(|&(a, _, adv)| sample(a, 0.0, -0.5, adv, 0.0, 0.0)).collect();
            let new: Vec<_> = shifts
                .iter()
                .map(|&(_, dm, _)| DistributionParams::new(vec![dm], vec![-0.5 + dm]))
                .collect();
            let b: Vec<&Sample> = s.iter().collect();
            let vals = vec![0.0; s.len()];
            let (st, _) = ppo_loss(&b, &new, &vals, 1.0, &PpoConfig::default());
            prop_assert!((0.0..=1.0).contains(&st.clip_fraction));
            prop_assert!(st.mean_kl >= 0.0);
        }
    }
}
