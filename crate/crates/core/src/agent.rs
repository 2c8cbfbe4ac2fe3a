//! Actor-critic networks with hand-written backpropagation, PPO training,
//! the PPO waypoint baseline and the value-function interface used by MPRL.

use crate::geom::Vec2;
use crate::simenv::{EnvAction, EnvConfig, EnvSnapshot, Observation, ShipEnv, PATCH_SIZE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Side of the pooled obstacle map.
pub const POOLED_SIZE: usize = 16;
const POOL: usize = PATCH_SIZE / POOLED_SIZE;
pub const FEATURE_DIM: usize = 3 + POOLED_SIZE * POOLED_SIZE;
pub const HIDDEN: usize = 64;
/// Actor outputs: two means followed by two log-stds.
pub const ACTOR_OUT: usize = 4;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const CHECKPOINT_MAGIC: &[u8; 8] = b"WNAVCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("non-finite loss at epoch {epoch}: policy {policy}, value {value}")]
    NonFinite { epoch: usize, policy: f64, value: f64 },
    #[error("rollout batch is not sealed: transition {0} has no successor value")]
    Unsealed(usize),
    #[error("invalid PPO config: {0}")]
    InvalidConfig(&'static str),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Env(#[from] crate::simenv::EnvError),
}

/// Maps an observation to the network input: normalized heading, distance and
/// speed followed by the obstacle map pooled to 16×16 (1 = any obstacle in the
/// 4×4 block, 0 = all free).
pub fn encode(obs: &Observation, cfg: &EnvConfig, v_max: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(FEATURE_DIM);
    x.push((obs.rel_heading / PI).clamp(-1.0, 1.0));
    x.push((obs.distance / cfg.d_max).clamp(0.0, 1.0));
    x.push((obs.speed / v_max).clamp(0.0, 1.0));
    for br in 0..POOLED_SIZE {
        for bc in 0..POOLED_SIZE {
            let blocked = (0..POOL).any(|r| {
                (0..POOL).any(|c| obs.patch_at(br * POOL + r, bc * POOL + c) == 0)
            });
            x.push(if blocked { 1.0 } else { 0.0 });
        }
    }
    x
}

/// Fully connected network, tanh on hidden layers, linear output.
/// Parameters are stored flat: per layer a row-major `out × in` weight block
/// followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations from a forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Glorot-uniform weights, zero biases; the last layer is scaled by `out_gain`.
    pub fn random(sizes: &[usize], out_gain: f64, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(sizes);
        let layers = sizes.len() - 1;
        let mut off = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l + 1 == layers {
                bound *= out_gain;
            }
            for v in &mut m.params[off..off + fan_in * fan_out] {
                *v = rng.gen_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        m
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// Offset of the bias block of layer `l`.
    pub fn bias_offset(&self, l: usize) -> usize {
        let before: usize = self.sizes[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        before + self.sizes[l] * self.sizes[l + 1]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = self.forward_cached(x);
        cache.acts.pop().unwrap()
    }

    pub fn forward_cached(&self, x: &[f64]) -> MlpCache {
        assert_eq!(x.len(), self.sizes[0], "input dimension");
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let a = &acts[l];
            // the pooled map is mostly zeros; skip them
            let nz: Vec<usize> = (0..n_in).filter(|&i| a[i] != 0.0).collect();
            let mut z: Vec<f64> = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += nz.iter().map(|&i| row[i] * a[i]).sum::<f64>();
            }
            if l + 1 < layers {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            acts.push(z);
            off += n_in * n_out + n_out;
        }
        MlpCache { acts }
    }

    /// Accumulates into `grad` the gradient of a scalar loss whose derivative
    /// with respect to the network output is `d_out`.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        assert_eq!(d_out.len(), self.sizes[layers]);
        assert_eq!(grad.len(), self.params.len());
        let offsets: Vec<usize> = (0..layers)
            .scan(0, |off, l| {
                let o = *off;
                *off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
                Some(o)
            })
            .collect();
        let mut g = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let a = &cache.acts[l];
            for o in 0..n_out {
                if g[o] == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (i, &ai) in a.iter().enumerate() {
                    if ai != 0.0 {
                        row[i] += g[o] * ai;
                    }
                }
                grad[off + n_in * n_out + o] += g[o];
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                if g[o] == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for (p, &wi) in prev.iter_mut().zip(row) {
                    *p += g[o] * wi;
                }
            }
            for (p, &ai) in prev.iter_mut().zip(a) {
                *p *= 1.0 - ai * ai;
            }
            g = prev;
        }
    }
}

/// Policy and value networks. The two share no parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub actor: Mlp,
    pub critic: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub mean: [f64; 2],
    pub log_std: [f64; 2],
    pub value: f64,
}

impl MlpParams {
    pub fn zeros() -> Self {
        Self {
            actor: Mlp::zeros(&[FEATURE_DIM, HIDDEN, HIDDEN, ACTOR_OUT]),
            critic: Mlp::zeros(&[FEATURE_DIM, HIDDEN, HIDDEN, 1]),
        }
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            actor: Mlp::random(&[FEATURE_DIM, HIDDEN, HIDDEN, ACTOR_OUT], 0.01, rng),
            critic: Mlp::random(&[FEATURE_DIM, HIDDEN, HIDDEN, 1], 1.0, rng),
        }
    }

    pub fn architecture(&self) -> String {
        let fmt = |m: &Mlp| {
            m.sizes()
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join("-")
        };
        format!("actor:{};critic:{};tanh", fmt(&self.actor), fmt(&self.critic))
    }

    pub fn architecture_hash(&self) -> [u8; 32] {
        Sha256::digest(self.architecture().as_bytes()).into()
    }

    pub fn is_finite(&self) -> bool {
        self.actor.params().iter().all(|v| v.is_finite())
            && self.critic.params().iter().all(|v| v.is_finite())
    }
}

fn split_actor(out: &[f64]) -> ([f64; 2], [f64; 2]) {
    (
        [out[0], out[1]],
        [
            out[2].clamp(LOG_STD_MIN, LOG_STD_MAX),
            out[3].clamp(LOG_STD_MIN, LOG_STD_MAX),
        ],
    )
}

pub fn forward(params: &MlpParams, x: &[f64]) -> Result<PolicyOutput, AgentError> {
    if x.len() != params.actor.input_dim() {
        return Err(AgentError::Shape {
            expected: params.actor.input_dim(),
            got: x.len(),
        });
    }
    let (mean, log_std) = split_actor(&params.actor.forward(x));
    Ok(PolicyOutput {
        mean,
        log_std,
        value: params.critic.forward(x)[0],
    })
}

/// log(1 − tanh²u), evaluated without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Log-density of the tanh-squashed action whose pre-squash sample is `u`.
pub fn log_prob(mean: &[f64; 2], log_std: &[f64; 2], u: &[f64; 2]) -> f64 {
    (0..2)
        .map(|i| {
            let z = (u[i] - mean[i]) / log_std[i].exp();
            -0.5 * z * z - log_std[i] - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(u[i])
        })
        .sum()
}

/// Differential entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: &[f64; 2]) -> f64 {
    log_std
        .iter()
        .map(|ls| ls + 0.5 * (1.0 + (2.0 * PI).ln()))
        .sum()
}

/// Squashes a pre-squash sample into environment action bounds.
pub fn squash(u: &[f64; 2], v_max: f64, a_max: f64) -> EnvAction {
    EnvAction {
        desired_speed: (u[0].tanh() + 1.0) / 2.0 * v_max,
        heading_change: u[1].tanh() * a_max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    pub action: EnvAction,
    pub log_prob: f64,
    pub raw: [f64; 2],
}

pub fn sample_gaussian(mean: &[f64; 2], log_std: &[f64; 2], rng: &mut impl Rng) -> [f64; 2] {
    let e0: f64 = rng.sample(StandardNormal);
    let e1: f64 = rng.sample(StandardNormal);
    [mean[0] + log_std[0].exp() * e0, mean[1] + log_std[1].exp() * e1]
}

pub fn sample_action(
    params: &MlpParams,
    x: &[f64],
    rng: &mut impl Rng,
    v_max: f64,
    a_max: f64,
) -> Result<SampledAction, AgentError> {
    let out = forward(params, x)?;
    let raw = sample_gaussian(&out.mean, &out.log_std, rng);
    Ok(SampledAction {
        action: squash(&raw, v_max, a_max),
        log_prob: log_prob(&out.mean, &out.log_std, &raw),
        raw,
    })
}

/// The squashed mean action.
pub fn deterministic_action(
    params: &MlpParams,
    x: &[f64],
    v_max: f64,
    a_max: f64,
) -> Result<EnvAction, AgentError> {
    let out = forward(params, x)?;
    Ok(squash(&out.mean, v_max, a_max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    pub raw_action: [f64; 2],
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    /// The episode ended after this step.
    pub done: bool,
    /// The episode ended in a true terminal state (no bootstrap).
    pub terminal: bool,
    /// Value of the successor state when it is not the next transition's state.
    pub next_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Supplies the bootstrap value for an unfinished final transition.
    pub fn seal(&mut self, last_value: f64) {
        if let Some(t) = self.transitions.last_mut() {
            if !t.terminal && t.next_value.is_none() {
                t.next_value = Some(last_value);
            }
        }
    }
}

/// GAE(λ) advantages and the matching returns (advantage + value).
pub fn compute_advantages(
    batch: &mut RolloutBatch,
    gamma: f64,
    gae_lambda: f64,
) -> Result<(), AgentError> {
    let ts = &batch.transitions;
    let n = ts.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let tr = &ts[t];
        let next_value = if tr.terminal {
            0.0
        } else if let Some(v) = tr.next_value {
            v
        } else if !tr.done && t + 1 < n {
            ts[t + 1].value
        } else {
            return Err(AgentError::Unsealed(t));
        };
        let carry = if tr.done || t + 1 == n { 0.0 } else { next_adv };
        let delta = tr.reward + gamma * next_value - tr.value;
        adv[t] = delta + gamma * gae_lambda * carry;
        next_adv = adv[t];
    }
    batch.returns = adv.iter().zip(ts).map(|(a, t)| a + t.value).collect();
    batch.advantages = adv;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub rollout_length: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub max_env_steps: usize,
    pub max_grad_norm: f64,
    /// The critic predicts returns divided by this factor. A power of two
    /// keeps the round trip through the critic's units exact.
    pub value_scale: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            epochs: 4,
            minibatch_size: 64,
            rollout_length: 2048,
            entropy_coef: 0.01,
            value_coef: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            max_env_steps: 500_000,
            max_grad_norm: 0.5,
            value_scale: 128.0,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(AgentError::InvalidConfig("clip_epsilon must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0)
        {
            return Err(AgentError::InvalidConfig("gamma and gae_lambda must lie in (0, 1]"));
        }
        if !(self.learning_rate > 0.0) || !(self.value_scale > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(AgentError::InvalidConfig(
                "learning_rate, value_scale and max_grad_norm must be positive",
            ));
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.rollout_length == 0 {
            return Err(AgentError::InvalidConfig(
                "epochs, minibatch_size and rollout_length must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub actor: Adam,
    pub critic: Adam,
}

impl OptimState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            actor: Adam::new(params.actor.params().len()),
            critic: Adam::new(params.critic.params().len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Advantages normalized to zero mean and unit standard deviation.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len().max(1) as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter().map(|a| (a - mean) / std).collect()
}

/// Clipped-surrogate, value and entropy terms for one sample.
struct SampleLoss {
    policy: f64,
    value: f64,
    entropy: f64,
    clipped: bool,
    d_actor: [f64; 4],
    d_critic: f64,
}

fn sample_loss(
    actor_out: &[f64],
    critic_out: f64,
    tr: &Transition,
    advantage: f64,
    ret: f64,
    cfg: &PpoConfig,
) -> SampleLoss {
    let (mean, log_std) = split_actor(actor_out);
    let logp = log_prob(&mean, &log_std, &tr.raw_action);
    let ratio = (logp - tr.log_prob).exp();
    let surr1 = ratio * advantage;
    let surr2 = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * advantage;
    let policy = -surr1.min(surr2);
    let d_logp = if surr1 <= surr2 { -advantage * ratio } else { 0.0 };
    let mut d_actor = [0.0; 4];
    for i in 0..2 {
        let var = (2.0 * log_std[i]).exp();
        let diff = tr.raw_action[i] - mean[i];
        d_actor[i] = d_logp * diff / var;
        let in_range = actor_out[2 + i] > LOG_STD_MIN && actor_out[2 + i] < LOG_STD_MAX;
        if in_range {
            d_actor[2 + i] = d_logp * (diff * diff / var - 1.0) - cfg.entropy_coef;
        }
    }
    let target = ret / cfg.value_scale;
    let err = critic_out - target;
    SampleLoss {
        policy,
        value: err * err,
        entropy: gaussian_entropy(&log_std),
        clipped: (ratio - 1.0).abs() > cfg.clip_epsilon,
        d_actor,
        d_critic: cfg.value_coef * 2.0 * err,
    }
}

/// Mean PPO loss terms of `params` on `batch` with the given advantages.
pub fn ppo_objective(
    params: &MlpParams,
    batch: &RolloutBatch,
    advantages: &[f64],
    cfg: &PpoConfig,
) -> PpoStats {
    let n = batch.len().max(1) as f64;
    let mut s = PpoStats::default();
    for (k, tr) in batch.transitions.iter().enumerate() {
        let a = params.actor.forward(&tr.features);
        let v = params.critic.forward(&tr.features)[0];
        let l = sample_loss(&a, v, tr, advantages[k], batch.returns[k], cfg);
        s.policy_loss += l.policy / n;
        s.value_loss += l.value / n;
        s.entropy += l.entropy / n;
        s.clip_fraction += if l.clipped { 1.0 / n } else { 0.0 };
    }
    s
}

/// Total minimized loss: policy + value_coef·value − entropy_coef·entropy.
pub fn total_loss(stats: &PpoStats, cfg: &PpoConfig) -> f64 {
    stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy_coef * stats.entropy
}

fn clip_grad(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
}

/// Mean loss terms over the samples `idx` and the gradient of
/// [`total_loss`] with respect to the actor and critic parameters.
pub fn ppo_gradient(
    params: &MlpParams,
    batch: &RolloutBatch,
    idx: &[usize],
    advantages: &[f64],
    cfg: &PpoConfig,
) -> (PpoStats, Vec<f64>, Vec<f64>) {
    let scale = 1.0 / idx.len().max(1) as f64;
    let mut g_actor = vec![0.0; params.actor.params().len()];
    let mut g_critic = vec![0.0; params.critic.params().len()];
    let mut mb = PpoStats::default();
    for &k in idx {
        let tr = &batch.transitions[k];
        let ac = params.actor.forward_cached(&tr.features);
        let cc = params.critic.forward_cached(&tr.features);
        let l = sample_loss(ac.output(), cc.output()[0], tr, advantages[k], batch.returns[k], cfg);
        mb.policy_loss += l.policy * scale;
        mb.value_loss += l.value * scale;
        mb.entropy += l.entropy * scale;
        mb.clip_fraction += if l.clipped { scale } else { 0.0 };
        let d_actor = l.d_actor.map(|d| d * scale);
        if d_actor.iter().any(|&d| d != 0.0) {
            params.actor.backward(&ac, &d_actor, &mut g_actor);
        }
        if l.d_critic != 0.0 {
            params.critic.backward(&cc, &[l.d_critic * scale], &mut g_critic);
        }
    }
    (mb, g_actor, g_critic)
}

/// Clipped-surrogate PPO update over `cfg.epochs` shuffled minibatch passes.
pub fn ppo_update(
    params: &MlpParams,
    opt: &mut OptimState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<(MlpParams, PpoStats), AgentError> {
    if batch.advantages.len() != batch.len() || batch.returns.len() != batch.len() {
        return Err(AgentError::Unsealed(batch.advantages.len()));
    }
    let mut p = params.clone();
    let adv = normalize_advantages(&batch.advantages);
    let mut stats = PpoStats::default();
    let mut count = 0.0;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let (mb, mut g_actor, mut g_critic) = ppo_gradient(&p, batch, chunk, &adv, cfg);
            if !(mb.policy_loss.is_finite() && mb.value_loss.is_finite()) {
                return Err(AgentError::NonFinite {
                    epoch,
                    policy: mb.policy_loss,
                    value: mb.value_loss,
                });
            }
            clip_grad(&mut g_actor, cfg.max_grad_norm);
            clip_grad(&mut g_critic, cfg.max_grad_norm);
            opt.actor.step(p.actor.params_mut(), &g_actor, cfg.learning_rate);
            opt.critic.step(p.critic.params_mut(), &g_critic, cfg.learning_rate);
            stats.policy_loss += mb.policy_loss;
            stats.value_loss += mb.value_loss;
            stats.entropy += mb.entropy;
            stats.clip_fraction += mb.clip_fraction;
            count += 1.0;
        }
    }
    if count > 0.0 {
        stats.policy_loss /= count;
        stats.value_loss /= count;
        stats.entropy /= count;
        stats.clip_fraction /= count;
    }
    Ok((p, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub env_steps: usize,
    pub mean_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: MlpParams,
    pub curve: Vec<CurvePoint>,
}

/// Whether a finished step ended in a state with no future reward.
fn is_terminal(env: &ShipEnv, collision: bool, goal: bool) -> bool {
    collision || (goal && env.config().goal_terminates && env.snapshot().target_is_final)
}

/// PPO training. `episode` draws a start pose and target for every new
/// episode. When `out_dir` is given, a checkpoint and the training curve are
/// rewritten there after every iteration.
pub fn train<F>(
    mut env: ShipEnv,
    mut episode: F,
    cfg: &PpoConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutput, AgentError>
where
    F: FnMut(&mut ChaCha8Rng) -> (crate::geom::Pose, Vec2),
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParams::random(&mut rng);
    let mut curve = Vec::new();
    if cfg.max_env_steps == 0 {
        return Ok(TrainOutput { params, curve });
    }
    let mut opt = OptimState::new(&params);
    let env_cfg = env.config().clone();
    let v_max = env.params().v_max;
    let new_episode = |env: &mut ShipEnv, rng: &mut ChaCha8Rng, episode: &mut F| loop {
        let (start, target) = episode(rng);
        if let Ok(obs) = env.reset(start, target) {
            break obs;
        }
    };
    let mut obs = new_episode(&mut env, &mut rng, &mut episode);
    let mut ep_return = 0.0;
    let mut steps = 0usize;
    let mut iteration = 0usize;
    while steps < cfg.max_env_steps {
        let len = cfg.rollout_length.min(cfg.max_env_steps - steps);
        let mut batch = RolloutBatch::default();
        let mut finished = Vec::new();
        for _ in 0..len {
            let x = encode(&obs, &env_cfg, v_max);
            let out = forward(&params, &x)?;
            let raw = sample_gaussian(&out.mean, &out.log_std, &mut rng);
            let res = env.step(squash(&raw, v_max, env_cfg.a_max))?;
            ep_return += res.reward;
            steps += 1;
            let terminal = res.done && is_terminal(&env, res.info.collision, res.info.goal_reached);
            let next_value = if res.done && !terminal {
                let xn = encode(&res.obs, &env_cfg, v_max);
                Some(params.critic.forward(&xn)[0] * cfg.value_scale)
            } else {
                None
            };
            batch.transitions.push(Transition {
                features: x,
                raw_action: raw,
                log_prob: log_prob(&out.mean, &out.log_std, &raw),
                reward: res.reward,
                value: out.value * cfg.value_scale,
                done: res.done,
                terminal,
                next_value,
            });
            if res.done {
                finished.push(ep_return);
                ep_return = 0.0;
                obs = new_episode(&mut env, &mut rng, &mut episode);
            } else {
                obs = res.obs;
            }
        }
        let last = params.critic.forward(&encode(&obs, &env_cfg, v_max))[0] * cfg.value_scale;
        batch.seal(last);
        compute_advantages(&mut batch, cfg.gamma, cfg.gae_lambda)?;
        let (next, _stats) = ppo_update(&params, &mut opt, &batch, cfg, &mut rng)?;
        params = next;
        let mean_return = if finished.is_empty() {
            f64::NAN
        } else {
            finished.iter().sum::<f64>() / finished.len() as f64
        };
        curve.push(CurvePoint {
            iteration,
            env_steps: steps,
            mean_return,
        });
        iteration += 1;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            save_checkpoint(&params, cfg.seed, &dir.join("checkpoint.bin"))?;
            write_curve(&curve, &dir.join("training_curve.csv"))?;
        }
    }
    Ok(TrainOutput { params, curve })
}

pub fn write_curve(curve: &[CurvePoint], path: &Path) -> Result<(), AgentError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>, AgentError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(AgentError::from)).collect()
}

/// Writes both networks as little-endian f64 after a header holding the
/// format version, architecture hash and training seed.
pub fn save_checkpoint(params: &MlpParams, seed: u64, path: &Path) -> Result<(), AgentError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&params.architecture_hash());
    buf.extend_from_slice(&seed.to_le_bytes());
    for net in [&params.actor, &params.critic] {
        buf.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
        for v in net.params() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]; returns the parameters
/// and the recorded seed.
pub fn load_checkpoint(path: &Path) -> Result<(MlpParams, u64), AgentError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| AgentError::Checkpoint(m.to_string());
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8], AgentError> {
        if cur.len() < n {
            return Err(bad("truncated file"));
        }
        let (a, b) = cur.split_at(n);
        cur = b;
        Ok(a)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(AgentError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut params = MlpParams::zeros();
    if take(32)? != params.architecture_hash() {
        return Err(bad("architecture mismatch"));
    }
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    for net in [&mut params.actor, &mut params.critic] {
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if n != net.params().len() {
            return Err(bad("parameter count mismatch"));
        }
        for v in net.params_mut() {
            *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
    }
    if !cur.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok((params, seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub goals: usize,
    pub collisions: usize,
}

impl EvalSummary {
    pub fn goal_rate(&self) -> f64 {
        self.goals as f64 / self.episodes.max(1) as f64
    }
}

/// Runs deterministic-policy episodes; an episode counts as a success if the
/// ship enters the goal radius at any step.
pub fn evaluate<F>(
    params: &MlpParams,
    env: &mut ShipEnv,
    mut episode: F,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary, AgentError>
where
    F: FnMut(&mut ChaCha8Rng) -> (crate::geom::Pose, Vec2),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = env.config().clone();
    let v_max = env.params().v_max;
    let mut summary = EvalSummary {
        episodes,
        goals: 0,
        collisions: 0,
    };
    for _ in 0..episodes {
        let mut obs = loop {
            let (start, target) = episode(&mut rng);
            if let Ok(o) = env.reset(start, target) {
                break o;
            }
        };
        let mut reached = false;
        loop {
            let a = deterministic_action(params, &encode(&obs, &cfg, v_max), v_max, cfg.a_max)?;
            let r = env.step(a)?;
            reached |= r.info.goal_reached;
            if r.info.collision {
                summary.collisions += 1;
            }
            if r.done {
                break;
            }
            obs = r.obs;
        }
        if reached {
            summary.goals += 1;
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PpoPlan {
    Waypoints(Vec<Vec2>),
    /// The first waypoint's simulation collided.
    Failure { position: Vec2 },
}

/// Rolls the deterministic policy forward from `snapshot`, recording the
/// position after every `steps_per_waypoint` env steps.
pub fn ppo_plan_waypoints(
    params: &MlpParams,
    env: &mut ShipEnv,
    snapshot: &EnvSnapshot,
    num_waypoints: usize,
    steps_per_waypoint: usize,
) -> Result<PpoPlan, AgentError> {
    let cfg = env.config().clone();
    let v_max = env.params().v_max;
    env.restore(&snapshot.for_planning());
    let mut waypoints = Vec::with_capacity(num_waypoints);
    let mut obs = env.observe();
    'outer: for w in 0..num_waypoints {
        for _ in 0..steps_per_waypoint {
            let a = deterministic_action(params, &encode(&obs, &cfg, v_max), v_max, cfg.a_max)?;
            let r = env.step(a)?;
            if r.info.collision {
                if w == 0 {
                    return Ok(PpoPlan::Failure {
                        position: r.info.position,
                    });
                }
                break 'outer;
            }
            obs = r.obs;
            if r.done {
                waypoints.push(r.info.position);
                break 'outer;
            }
        }
        waypoints.push(env.ship().position);
    }
    Ok(PpoPlan::Waypoints(waypoints))
}

/// Estimate of the discounted reward-to-go of an observation.
pub trait ValueFunction: Sync {
    fn value(&self, obs: &Observation) -> f64;
}

/// Discounted reward-to-go of a ship closing on the target in a straight line
/// by `closure` meters per env step and then holding position: the sum over
/// k ≥ 1 of γᵏ·(1 − d_k/d_max), d_k = max(d − k·closure, 0), plus γᴷ·r_goal
/// where K is the first step inside the goal radius.
pub fn heuristic_value(obs: &Observation, cfg: &EnvConfig, closure: f64) -> f64 {
    let d = obs.distance;
    let g = cfg.gamma;
    // steps with d_k > 0, summed explicitly; afterwards r_d = 1 forever
    let moving = (d / closure).ceil() as i64;
    let mut sum = 0.0;
    let mut gk = 1.0;
    for k in 1..moving {
        gk *= g;
        sum += gk * (1.0 - (d - k as f64 * closure) / cfg.d_max);
    }
    let first_zero = moving.max(1);
    sum += g.powi(first_zero as i32) / (1.0 - g);
    let arrival = if d < cfg.goal_radius {
        0
    } else {
        ((d - cfg.goal_radius) / closure).floor() as i32 + 1
    };
    sum + g.powi(arrival) * cfg.r_goal_reached
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicValue {
    pub cfg: EnvConfig,
    /// Distance closed per env step, m.
    pub closure: f64,
}

impl HeuristicValue {
    /// Closure at `v_max` over one env step of `substeps × dt` seconds.
    pub fn new(cfg: &EnvConfig, v_max: f64, dt: f64) -> Self {
        Self {
            cfg: cfg.clone(),
            closure: v_max * cfg.substeps as f64 * dt,
        }
    }
}

impl ValueFunction for HeuristicValue {
    fn value(&self, obs: &Observation) -> f64 {
        heuristic_value(obs, &self.cfg, self.closure)
    }
}

/// The critic of a trained agent.
#[derive(Debug, Clone)]
pub struct LearnedValue {
    pub params: MlpParams,
    pub cfg: EnvConfig,
    pub v_max: f64,
    pub value_scale: f64,
}

impl ValueFunction for LearnedValue {
    fn value(&self, obs: &Observation) -> f64 {
        self.params.critic.forward(&encode(obs, &self.cfg, self.v_max))[0] * self.value_scale
    }
}
