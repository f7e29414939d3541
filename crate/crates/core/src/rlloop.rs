//! Toy denoising chain: a Gaussian policy walks a state for `T` steps and is
//! rewarded once, at the end, for landing near a prompt-dependent target.
//! REINFORCE, RLOO, PPO and leave-one-out PPO (LOOP) are implemented on top.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optim::Adam;
use crate::stats::{mean, population_variance};
use crate::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub horizon: usize,
    pub state_dim: usize,
    pub context_dim: usize,
    pub n_prompts: usize,
    /// Extra Gaussian noise added to each transition on top of the policy's action.
    pub transition_noise: f64,
    /// Fixed per-step standard deviation of the policy.
    pub policy_std: f64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { horizon: 10, state_dim: 2, context_dim: 2, n_prompts: 16, transition_noise: 0.0, policy_std: 0.3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainMdp {
    pub horizon: usize,
    pub state_dim: usize,
    pub transition_noise: f64,
    pub policy_std: f64,
    /// Prompt embeddings.
    pub prompts: Vec<Vec<f64>>,
    /// `target(c) = G c`, row-major `state_dim x context_dim`.
    pub target_map: Vec<f64>,
}

impl ChainMdp {
    pub fn generate(config: &ChainConfig) -> Result<Self> {
        if config.horizon == 0 || config.state_dim == 0 || config.context_dim == 0 || config.n_prompts == 0 {
            return Err(invalid("horizon, dimensions and prompt count must be positive"));
        }
        if !(config.policy_std > 0.0) || config.transition_noise < 0.0 {
            return Err(invalid("policy std must be positive and transition noise non-negative"));
        }
        let mut rng = rng_from_seed(config.seed);
        let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect() };
        let target_map = normal(config.state_dim * config.context_dim);
        let prompts = (0..config.n_prompts).map(|_| normal(config.context_dim)).collect();
        Ok(Self {
            horizon: config.horizon,
            state_dim: config.state_dim,
            transition_noise: config.transition_noise,
            policy_std: config.policy_std,
            prompts,
            target_map,
        })
    }

    pub fn context_dim(&self) -> usize {
        self.prompts[0].len()
    }

    pub fn target(&self, prompt: usize) -> Vec<f64> {
        let c = &self.prompts[prompt];
        self.target_map.chunks_exact(c.len()).map(|g| crate::stats::dot(g, c)).collect()
    }

    /// `1 / (1 + ||x0 - target(c)||^2)`, in `(0, 1]`.
    pub fn reward(&self, final_state: &[f64], prompt: usize) -> f64 {
        let t = self.target(prompt);
        let d2: f64 = final_state.iter().zip(&t).map(|(x, y)| (x - y).powi(2)).sum();
        1.0 / (1.0 + d2)
    }

    /// Policy features `[x_t, c, t / T, 1]`.
    fn features(&self, state: &[f64], prompt: usize, t: usize) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.state_dim + self.context_dim() + 2);
        f.extend_from_slice(state);
        f.extend_from_slice(&self.prompts[prompt]);
        f.push(t as f64 / self.horizon as f64);
        f.push(1.0);
        f
    }

    pub fn feature_dim(&self) -> usize {
        self.state_dim + self.context_dim() + 2
    }
}

/// `x_{t-1} ~ N(x_t + W phi(x_t, c, t), sigma^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianChainPolicy {
    pub state_dim: usize,
    pub feature_dim: usize,
    /// Row-major `state_dim x feature_dim`.
    pub weights: Vec<f64>,
    pub std: f64,
}

impl GaussianChainPolicy {
    pub fn zeros(mdp: &ChainMdp) -> Self {
        Self { state_dim: mdp.state_dim, feature_dim: mdp.feature_dim(), weights: vec![0.0; mdp.state_dim * mdp.feature_dim()], std: mdp.policy_std }
    }

    fn mean(&self, state: &[f64], features: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.feature_dim)
            .zip(state)
            .map(|(w, s)| s + crate::stats::dot(w, features))
            .collect()
    }

    pub fn log_prob(&self, state: &[f64], features: &[f64], action: &[f64]) -> f64 {
        let mu = self.mean(state, features);
        let var = self.std * self.std;
        let sq: f64 = action.iter().zip(&mu).map(|(a, m)| (a - m).powi(2)).sum();
        -sq / (2.0 * var) - self.state_dim as f64 * (self.std * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }

    /// Adds `scale * grad log pi(action | state)` to `out`.
    fn add_grad_log_prob(&self, state: &[f64], features: &[f64], action: &[f64], scale: f64, out: &mut [f64]) {
        let mu = self.mean(state, features);
        let var = self.std * self.std;
        for j in 0..self.state_dim {
            let c = scale * (action[j] - mu[j]) / var;
            for (o, f) in out[j * self.feature_dim..(j + 1) * self.feature_dim].iter_mut().zip(features) {
                *o += c * f;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub features: Vec<f64>,
    pub action: Vec<f64>,
    /// Log-probability of `action` under the sampling policy.
    pub old_log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub final_state: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    /// Prompt index of each group.
    pub prompts: Vec<usize>,
    /// `groups[p]` holds the `K` trajectories sampled for `prompts[p]`.
    pub groups: Vec<Vec<Trajectory>>,
}

impl TrajectoryBatch {
    pub fn k(&self) -> usize {
        self.groups.first().map_or(0, Vec::len)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.groups.iter().flatten().map(|t| t.reward).collect()
    }

    pub fn n_trajectories(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Samples `k` independent trajectories per prompt; `x_T ~ N(0, I)`.
pub fn rollout<R: Rng + ?Sized>(policy: &GaussianChainPolicy, mdp: &ChainMdp, prompts: &[usize], k: usize, rng: &mut R) -> Result<TrajectoryBatch> {
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    if let Some(p) = prompts.iter().find(|p| **p >= mdp.prompts.len()) {
        return Err(invalid(format!("unknown prompt {p}")));
    }
    let groups = prompts
        .iter()
        .map(|&p| (0..k).map(|_| sample_trajectory(policy, mdp, p, rng)).collect())
        .collect();
    Ok(TrajectoryBatch { prompts: prompts.to_vec(), groups })
}

fn sample_trajectory<R: Rng + ?Sized>(policy: &GaussianChainPolicy, mdp: &ChainMdp, prompt: usize, rng: &mut R) -> Trajectory {
    let mut state: Vec<f64> = (0..mdp.state_dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut steps = Vec::with_capacity(mdp.horizon);
    for t in (1..=mdp.horizon).rev() {
        let features = mdp.features(&state, prompt, t);
        let mu = policy.mean(&state, &features);
        let action: Vec<f64> = mu.iter().map(|m| m + policy.std * rng.sample::<f64, _>(StandardNormal)).collect();
        let old_log_prob = policy.log_prob(&state, &features, &action);
        let next: Vec<f64> = action
            .iter()
            .map(|a| if mdp.transition_noise > 0.0 { a + mdp.transition_noise * rng.sample::<f64, _>(StandardNormal) } else { *a })
            .collect();
        steps.push(Step { state: std::mem::replace(&mut state, next), features, action, old_log_prob });
    }
    let reward = mdp.reward(&state, prompt);
    Trajectory { steps, final_state: state, reward }
}

/// Final state of the noiseless chain that always takes the policy mean.
pub fn mean_path(policy: &GaussianChainPolicy, mdp: &ChainMdp, prompt: usize, start: &[f64]) -> Vec<f64> {
    let mut state = start.to_vec();
    for t in (1..=mdp.horizon).rev() {
        let features = mdp.features(&state, prompt, t);
        state = policy.mean(&state, &features);
    }
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlBaseline {
    None,
    /// Mean reward of the batch.
    MeanReward,
}

fn check_on_policy(batch: &TrajectoryBatch, policy: &GaussianChainPolicy) -> Result<()> {
    for s in batch.groups.iter().flatten().flat_map(|t| &t.steps) {
        if (policy.log_prob(&s.state, &s.features, &s.action) - s.old_log_prob).abs() > 1e-9 {
            return Err(invalid("batch was not sampled from the current policy"));
        }
    }
    Ok(())
}

/// Sum over trajectories of `adv * sum_t grad log pi`, divided by `norm`.
fn score_gradient(batch: &TrajectoryBatch, policy: &GaussianChainPolicy, advantages: &[Vec<f64>], norm: f64) -> Vec<f64> {
    let mut g = vec![0.0; policy.weights.len()];
    for (group, adv) in batch.groups.iter().zip(advantages) {
        for (traj, a) in group.iter().zip(adv) {
            if *a == 0.0 {
                continue;
            }
            for s in &traj.steps {
                policy.add_grad_log_prob(&s.state, &s.features, &s.action, a / norm, &mut g);
            }
        }
    }
    g
}

/// `mean over trajectories of sum_t grad log pi(x_{t-1} | x_t) (r - b)`.
pub fn reinforce_gradient(batch: &TrajectoryBatch, policy: &GaussianChainPolicy, baseline: RlBaseline) -> Result<Vec<f64>> {
    if batch.n_trajectories() == 0 {
        return Err(Error::EmptyLog);
    }
    check_on_policy(batch, policy)?;
    let b = match baseline {
        RlBaseline::None => 0.0,
        RlBaseline::MeanReward => mean(&batch.rewards()),
    };
    let adv: Vec<Vec<f64>> = batch.groups.iter().map(|g| g.iter().map(|t| t.reward - b).collect()).collect();
    Ok(score_gradient(batch, policy, &adv, batch.n_trajectories() as f64))
}

/// `r^i - mean_{j != i} r^j` within each group.
pub fn leave_one_out_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let k = rewards.len();
    if k < 2 {
        return Err(invalid("leave-one-out baselines need K >= 2"));
    }
    let total: f64 = rewards.iter().sum();
    Ok(rewards.iter().map(|r| r - (total - r) / (k - 1) as f64).collect())
}

fn loo_advantages(batch: &TrajectoryBatch) -> Result<Vec<Vec<f64>>> {
    batch
        .groups
        .iter()
        .map(|g| leave_one_out_advantages(&g.iter().map(|t| t.reward).collect::<Vec<_>>()))
        .collect()
}

/// REINFORCE with leave-one-out baselines, averaged over the `K` samples and the prompts.
pub fn rloo_gradient(batch: &TrajectoryBatch, policy: &GaussianChainPolicy) -> Result<Vec<f64>> {
    if batch.n_trajectories() == 0 {
        return Err(Error::EmptyLog);
    }
    check_on_policy(batch, policy)?;
    let adv = loo_advantages(batch)?;
    Ok(score_gradient(batch, policy, &adv, batch.n_trajectories() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEstimate {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// `clip(x, 1 - eps, 1 + eps)`.
#[inline]
pub fn clip_ratio(x: f64, eps: f64) -> f64 {
    x.clamp(1.0 - eps, 1.0 + eps)
}

/// `mean over trajectories of sum_t clip(ratio_t) * adv`; the gradient passes
/// through steps whose ratio lies inside the clip range.
fn clipped_objective(batch: &TrajectoryBatch, policy: &GaussianChainPolicy, eps: f64, advantages: &[Vec<f64>]) -> Result<ObjectiveEstimate> {
    if !(eps > 0.0) {
        return Err(invalid("clip epsilon must be positive"));
    }
    let n = batch.n_trajectories();
    if n == 0 {
        return Err(Error::EmptyLog);
    }
    let mut value = 0.0;
    let mut g = vec![0.0; policy.weights.len()];
    for (group, adv) in batch.groups.iter().zip(advantages) {
        for (traj, a) in group.iter().zip(adv) {
            for s in &traj.steps {
                let ratio = (policy.log_prob(&s.state, &s.features, &s.action) - s.old_log_prob).exp();
                value += clip_ratio(ratio, eps) * a;
                if ratio >= 1.0 - eps && ratio <= 1.0 + eps && *a != 0.0 {
                    policy.add_grad_log_prob(&s.state, &s.features, &s.action, ratio * a / n as f64, &mut g);
                }
            }
        }
    }
    Ok(ObjectiveEstimate { value: value / n as f64, gradient: g })
}

/// PPO surrogate `sum_t clip(pi / pi_old, 1 - eps, 1 + eps) r`, averaged over trajectories.
pub fn ppo_objective(batch: &TrajectoryBatch, policy: &GaussianChainPolicy, eps: f64) -> Result<ObjectiveEstimate> {
    let adv: Vec<Vec<f64>> = batch.groups.iter().map(|g| g.iter().map(|t| t.reward).collect()).collect();
    clipped_objective(batch, policy, eps, &adv)
}

/// LOOP surrogate: the PPO surrogate with leave-one-out advantages `r^i - b^i`.
pub fn loop_objective(batch: &TrajectoryBatch, policy: &GaussianChainPolicy, eps: f64) -> Result<ObjectiveEstimate> {
    let adv = loo_advantages(batch)?;
    clipped_objective(batch, policy, eps, &adv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum RlMethod {
    Reinforce,
    ReinforceBc,
    Rloo { k: usize },
    Ppo,
    Loop { k: usize },
}

impl RlMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Reinforce => "reinforce",
            Self::ReinforceBc => "reinforce_bc",
            Self::Rloo { .. } => "rloo",
            Self::Ppo => "ppo",
            Self::Loop { .. } => "loop",
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Self::Rloo { k } | Self::Loop { k } => *k,
            _ => 1,
        }
    }

    /// Methods whose gradient is only valid at the sampling policy.
    pub fn on_policy(&self) -> bool {
        matches!(self, Self::Reinforce | Self::ReinforceBc | Self::Rloo { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub epochs: usize,
    /// Prompts sampled per epoch.
    pub prompts_per_epoch: usize,
    /// Gradient steps per rollout; must be 1 for the REINFORCE family.
    pub inner_epochs: usize,
    pub learning_rate: f64,
    pub clip_eps: f64,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self { epochs: 100, prompts_per_epoch: 8, inner_epochs: 1, learning_rate: 0.01, clip_eps: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlTraceRow {
    pub epoch: usize,
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub mean_reward: f64,
    pub reward_variance: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub policy: GaussianChainPolicy,
    pub trace: Vec<RlTraceRow>,
}

impl RlOutcome {
    /// Mean reward over the last `n` epochs.
    pub fn final_reward(&self, n: usize) -> f64 {
        let tail = &self.trace[self.trace.len().saturating_sub(n.max(1))..];
        mean(&tail.iter().map(|r| r.mean_reward).collect::<Vec<_>>())
    }
}

/// Trains a zero-initialized policy with Adam; prompts are drawn uniformly each epoch.
pub fn train_rl(mdp: &ChainMdp, method: RlMethod, config: &RlConfig) -> Result<RlOutcome> {
    if config.inner_epochs == 0 || config.prompts_per_epoch == 0 {
        return Err(invalid("inner_epochs and prompts_per_epoch must be positive"));
    }
    if method.on_policy() && config.inner_epochs > 1 {
        return Err(invalid(format!("{} is on-policy and cannot reuse samples", method.name())));
    }
    if matches!(method, RlMethod::Rloo { k } | RlMethod::Loop { k } if k < 2) {
        return Err(invalid("leave-one-out methods need K >= 2"));
    }
    let mut policy = GaussianChainPolicy::zeros(mdp);
    let mut adam = Adam::new(policy.weights.len());
    let mut rng = rng_from_seed(config.seed);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let prompts: Vec<usize> = (0..config.prompts_per_epoch).map(|_| rng.random_range(0..mdp.prompts.len())).collect();
        let batch = rollout(&policy, mdp, &prompts, method.k(), &mut rng)?;
        let rewards = batch.rewards();
        let mut first_norm = None;
        for _ in 0..config.inner_epochs {
            let grad = match method {
                RlMethod::Reinforce => reinforce_gradient(&batch, &policy, RlBaseline::None)?,
                RlMethod::ReinforceBc => reinforce_gradient(&batch, &policy, RlBaseline::MeanReward)?,
                RlMethod::Rloo { .. } => rloo_gradient(&batch, &policy)?,
                RlMethod::Ppo => ppo_objective(&batch, &policy, config.clip_eps)?.gradient,
                RlMethod::Loop { .. } => loop_objective(&batch, &policy, config.clip_eps)?.gradient,
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("policy gradient"));
            }
            first_norm.get_or_insert_with(|| grad.iter().map(|g| g * g).sum::<f64>().sqrt());
            adam.ascend(&mut policy.weights, &grad, config.learning_rate);
        }
        trace.push(RlTraceRow {
            epoch,
            method: method.name().to_string(),
            k: method.k(),
            mean_reward: mean(&rewards),
            reward_variance: population_variance(&rewards),
            grad_norm: first_norm.unwrap_or(0.0),
        });
    }
    Ok(RlOutcome { policy, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    /// PPO surrogate averaged over the `K` trajectories of a prompt.
    Ppo,
    /// LOOP surrogate with leave-one-out baselines; needs `K >= 2`.
    Loop,
}

/// Within-prompt variance of a surrogate objective at `policy`, averaged over
/// prompts: for each prompt, `n_batches` fresh batches of `k` trajectories
/// are sampled from `old`.
#[allow(clippy::too_many_arguments)]
pub fn objective_variance<R: Rng + ?Sized>(
    mdp: &ChainMdp,
    old: &GaussianChainPolicy,
    policy: &GaussianChainPolicy,
    surrogate: Surrogate,
    k: usize,
    eps: f64,
    n_batches: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_batches < 2 {
        return Err(invalid("at least two batches are required"));
    }
    let mut total = 0.0;
    for p in 0..mdp.prompts.len() {
        let mut values = Vec::with_capacity(n_batches);
        for _ in 0..n_batches {
            let batch = rollout(old, mdp, &[p], k, rng)?;
            let est = match surrogate {
                Surrogate::Ppo => ppo_objective(&batch, policy, eps)?,
                Surrogate::Loop => loop_objective(&batch, policy, eps)?,
            };
            values.push(est.value);
        }
        total += crate::stats::sample_variance(&values);
    }
    Ok(total / mdp.prompts.len() as f64)
}
