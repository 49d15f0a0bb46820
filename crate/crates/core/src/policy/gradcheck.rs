//! Finite-difference verification of [`ActorCritic::backward`] in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::net::{ActorCritic, ForwardPass, NetRole, NetworkSpec};
use super::PolicyError;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates skipped because a `±h` step flipped a ReLU.
    pub redrawn: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Synthetic loss mixing linear and quadratic terms in every network output.
struct Probe {
    batch: usize,
    input: Vec<f64>,
    lin: Vec<f64>,
    target: Vec<f64>,
    ls_lin: Vec<f64>,
    v_target: Vec<f64>,
}

impl Probe {
    fn loss(&self, m: &ActorCritic<f64>, pass: &ForwardPass<f64>) -> f64 {
        let a = m.spec.action_dim;
        let ls = m.policy_log_std();
        let mut total = 0.0;
        for i in 0..self.batch {
            for j in 0..a {
                let k = i * a + j;
                let mu = pass.mean()[k];
                total += self.lin[k] * mu + 0.5 * (mu - self.target[k]).powi(2);
                total += self.ls_lin[k] * ls[j] + 0.25 * ls[j] * ls[j];
            }
            total += 0.5 * (pass.values()[i] - self.v_target[i]).powi(2);
        }
        total / self.batch as f64
    }

    fn output_grads(&self, m: &ActorCritic<f64>, pass: &ForwardPass<f64>) -> [Vec<f64>; 3] {
        let a = m.spec.action_dim;
        let ls = m.policy_log_std();
        let d_mean = (0..self.batch * a)
            .map(|k| self.lin[k] + pass.mean()[k] - self.target[k])
            .collect();
        let d_ls = (0..self.batch * a)
            .map(|k| self.ls_lin[k] + 0.5 * ls[k % a])
            .collect();
        let d_v = (0..self.batch)
            .map(|i| pass.values()[i] - self.v_target[i])
            .collect();
        [d_mean, d_ls, d_v]
    }
}

fn relu_pattern(pass: &ForwardPass<f64>) -> Vec<bool> {
    [&pass.policy, &pass.value]
        .iter()
        .flat_map(|c| c.acts.iter().flatten().map(|x| *x > 0.0))
        .collect()
}

fn param_mut(m: &mut ActorCritic<f64>, role: NetRole, array: usize, idx: usize) -> &mut f64 {
    let set = match role {
        NetRole::Policy => &mut m.policy,
        NetRole::Value => &mut m.value,
    };
    &mut set.arrays[array].data[idx]
}

/// Compares analytic gradients with central differences on `coords`
/// randomly chosen parameters.
pub fn gradcheck(spec: NetworkSpec, seed: u64, coords: usize, h: f64) -> Result<GradCheckReport, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ActorCritic::<f64>::init(spec.clone(), &mut rng)?;
    // move the heads away from their tiny initial gain so every term matters
    for set in [&mut model.policy, &mut model.value] {
        for a in &mut set.arrays {
            a.data.iter_mut().for_each(|x| *x += rng.random_range(-0.2..0.2));
        }
    }
    let batch = 3;
    let a = spec.action_dim;
    let mut u = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let probe = Probe {
        batch,
        input: u(batch * spec.input_len()).into_iter().map(|x| 0.5 + 0.5 * x).collect(),
        lin: u(batch * a),
        target: u(batch * a),
        ls_lin: u(batch * a),
        v_target: u(batch),
    };

    let pass = model.forward(&probe.input, batch)?;
    let base_pattern = relu_pattern(&pass);
    let [dm, dl, dv] = probe.output_grads(&model, &pass);
    let grads = model.backward(&pass, &probe.input, &dm, &dl, &dv)?;

    let index: Vec<(NetRole, usize, usize)> = [(NetRole::Policy, &model.policy), (NetRole::Value, &model.value)]
        .into_iter()
        .flat_map(|(role, set)| {
            set.arrays
                .iter()
                .enumerate()
                .flat_map(move |(ai, arr)| (0..arr.data.len()).map(move |i| (role, ai, i)))
        })
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        redrawn: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    let eval = |m: &ActorCritic<f64>| -> Result<(f64, Vec<bool>), PolicyError> {
        let p = m.forward(&probe.input, batch)?;
        Ok((probe.loss(m, &p), relu_pattern(&p)))
    };
    let mut attempts = 0;
    while report.checked < coords {
        attempts += 1;
        if attempts > 50 * coords {
            return Err(PolicyError::Spec("too many coordinates sit on ReLU kinks".into()));
        }
        let (role, ai, i) = index[rng.random_range(0..index.len())];
        let orig = *param_mut(&mut model, role, ai, i);
        *param_mut(&mut model, role, ai, i) = orig + h;
        let (lp, pp) = eval(&model)?;
        *param_mut(&mut model, role, ai, i) = orig - h;
        let (lm, pm) = eval(&model)?;
        *param_mut(&mut model, role, ai, i) = orig;
        if pp != base_pattern || pm != base_pattern {
            report.redrawn += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let set = match role {
            NetRole::Policy => &grads.policy,
            NetRole::Value => &grads.value,
        };
        let analytic = set.arrays[ai].data[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst = format!("{role:?}/{}[{i}]: analytic {analytic:e}, numeric {numeric:e}", set.arrays[ai].name);
        }
        report.checked += 1;
    }
    Ok(report)
}
