//! Episodic advantage actor-critic over low-dimensional observations.
//!
//! Both networks are one-hidden-layer tanh MLPs trained with Adam. Each
//! finished episode gives one update: Monte-Carlo returns `G_t`, advantages
//! `G_t − V(s_t)`, a policy-gradient loss with an entropy bonus and a
//! squared-error critic loss, each averaged over the episode's steps.
//!
//! [`Trainer`] keeps workers' in-progress episodes between calls, so training
//! in chunks is bit-for-bit the same as one long run with `workers = 1`.

use std::f64::consts::{E, PI};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{self, EnvConfig, EnvState, Scene};
use crate::error::{check_dim, Error, Result};

pub const LOG_STD_MIN: f64 = -6.907_755_278_982_137; // ln 1e-3
pub const LOG_STD_MAX: f64 = 0.0;
const EVAL_STREAM: u64 = u64::MAX;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected `in → hidden (tanh) → out`, or `in → out` when
/// `hidden == 0`. Parameters are one flat vector: `W1, b1, W2, b2`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub params: Vec<f64>,
}

/// Intermediate values of a forward pass, needed for backprop.
struct Trace {
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl Mlp {
    pub fn param_count(inputs: usize, hidden: usize, outputs: usize) -> usize {
        if hidden == 0 {
            inputs * outputs + outputs
        } else {
            inputs * hidden + hidden + hidden * outputs + outputs
        }
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            inputs,
            hidden,
            outputs,
            params: vec![0.0; Self::param_count(inputs, hidden, outputs)],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases; the output layer is
    /// scaled by `out_gain`.
    pub fn init<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, out_gain: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(inputs, hidden, outputs);
        let mut k = 0;
        let mut fill = |n: usize, fan_in: usize, gain: f64, params: &mut Vec<f64>, k: &mut usize| {
            let a = gain / (fan_in as f64).sqrt();
            for _ in 0..n {
                params[*k] = rng.random_range(-a..=a);
                *k += 1;
            }
        };
        if hidden == 0 {
            fill(inputs * outputs, inputs, out_gain, &mut m.params, &mut k);
        } else {
            fill(inputs * hidden, inputs, 1.0, &mut m.params, &mut k);
            k += hidden;
            fill(hidden * outputs, hidden, out_gain, &mut m.params, &mut k);
        }
        m
    }

    fn output_bias_offset(&self) -> usize {
        self.params.len() - self.outputs
    }

    fn forward_trace(&self, x: &[f64]) -> Trace {
        let p = &self.params;
        if self.hidden == 0 {
            let b = self.inputs * self.outputs;
            let out = (0..self.outputs)
                .map(|o| p[b + o] + (0..self.inputs).map(|i| p[o * self.inputs + i] * x[i]).sum::<f64>())
                .collect();
            return Trace { hidden: Vec::new(), out };
        }
        let (ni, nh) = (self.inputs, self.hidden);
        let b1 = ni * nh;
        let w2 = b1 + nh;
        let b2 = w2 + nh * self.outputs;
        let hidden: Vec<f64> = (0..nh)
            .map(|h| (p[b1 + h] + (0..ni).map(|i| p[h * ni + i] * x[i]).sum::<f64>()).tanh())
            .collect();
        let out = (0..self.outputs)
            .map(|o| p[b2 + o] + (0..nh).map(|h| p[w2 + o * nh + h] * hidden[h]).sum::<f64>())
            .collect();
        Trace { hidden, out }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).out
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂out` for input `x`.
    fn backward(&self, x: &[f64], trace: &Trace, d_out: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        if self.hidden == 0 {
            let b = self.inputs * self.outputs;
            for o in 0..self.outputs {
                for i in 0..self.inputs {
                    grad[o * self.inputs + i] += d_out[o] * x[i];
                }
                grad[b + o] += d_out[o];
            }
            return;
        }
        let (ni, nh) = (self.inputs, self.hidden);
        let b1 = ni * nh;
        let w2 = b1 + nh;
        let b2 = w2 + nh * self.outputs;
        let mut d_hidden = vec![0.0; nh];
        for o in 0..self.outputs {
            for h in 0..nh {
                grad[w2 + o * nh + h] += d_out[o] * trace.hidden[h];
                d_hidden[h] += d_out[o] * p[w2 + o * nh + h];
            }
            grad[b2 + o] += d_out[o];
        }
        for h in 0..nh {
            let dz = d_hidden[h] * (1.0 - trace.hidden[h] * trace.hidden[h]);
            for i in 0..ni {
                grad[h * ni + i] += dz * x[i];
            }
            grad[b1 + h] += dz;
        }
    }
}

/// Diagonal Gaussian policy. The network emits a mean and a raw log-std per
/// action dimension; the log-std is squashed smoothly into
/// `[ln 1e-3, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub net: Mlp,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Mlp::init(obs_dim, hidden, 2 * act_dim, 0.1, rng);
        // raw log-std bias giving an initial stddev of 0.5
        let q = (0.5f64.ln() - LOG_STD_MIN) / (LOG_STD_MAX - LOG_STD_MIN);
        let raw = (q / (1.0 - q)).ln();
        let b = net.output_bias_offset();
        for i in 0..act_dim {
            net.params[b + act_dim + i] = raw;
        }
        Self { net }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.inputs
    }

    pub fn act_dim(&self) -> usize {
        self.net.outputs / 2
    }

    fn split(&self, out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.act_dim();
        let mean = out[..k].to_vec();
        let log_std = out[k..].iter().map(|r| LOG_STD_MIN + (LOG_STD_MAX - LOG_STD_MIN) * sigmoid(*r)).collect();
        (mean, log_std)
    }

    /// Mean action and log-stddev for an observation.
    pub fn distribution(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.split(&self.net.forward(obs))
    }

    pub fn mean_action(&self, obs: &[f64]) -> Vec<f64> {
        self.distribution(obs).0
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Vec<f64> {
        let (mean, log_std) = self.distribution(obs);
        mean.iter()
            .zip(&log_std)
            .map(|(m, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.exp() * z
            })
            .collect()
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> f64 {
        let (mean, log_std) = self.distribution(obs);
        gaussian_log_prob(&mean, &log_std, action)
    }

    pub fn entropy(&self, obs: &[f64]) -> f64 {
        let (_, log_std) = self.distribution(obs);
        log_std.iter().map(|ls| ls + 0.5 * (2.0 * PI * E).ln()).sum()
    }
}

fn gaussian_log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFn {
    pub net: Mlp,
}

impl ValueFn {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::init(obs_dim, hidden, 1, 1.0, rng),
        }
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.net.forward(obs)[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_coef: f64,
    pub hidden: usize,
    pub workers: usize,
    /// Environment steps to train for.
    pub total_steps: usize,
    /// Evaluate after every multiple of this many environment steps.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Global gradient-norm clip per update.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            entropy_coef: 0.01,
            hidden: 32,
            workers: 4,
            total_steps: 40_000,
            eval_interval: 2_000,
            eval_episodes: 50,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be > 0".into());
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be >= 0".into());
        }
        if self.workers < 1 {
            return bad("workers must be >= 1".into());
        }
        if self.eval_interval < 1 || self.eval_episodes < 1 {
            return bad("eval_interval and eval_episodes must be >= 1".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

/// A training episode as it finished.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Global step count when the episode ended.
    pub env_steps: usize,
    pub discounted_return: f64,
    pub success: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    pub episodes: Vec<EpisodeRecord>,
}

impl LearningCurve {
    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    pub fn final_success(&self) -> f64 {
        self.last().map_or(0.0, |p| p.success_rate)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "env_steps,success_rate,mean_return")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.env_steps, p.success_rate, p.mean_return)?;
        }
        Ok(())
    }
}

pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Returns-to-go `G_t = Σ_k γ^k r_{t+k}` for every step.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    g
}

/// A resettable episodic task driven by [`Trainer`].
pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self, scene: &Scene, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
    /// Returns `(observation, reward, done, success)`.
    fn step(&mut self, action: &[f64], scene: &Scene, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64, bool, bool)>;
}

/// One of the three surrogate tasks behind the [`Environment`] interface.
#[derive(Debug, Clone)]
pub struct SurrogateEnv {
    pub cfg: EnvConfig,
    pub state: Option<EnvState>,
}

impl SurrogateEnv {
    pub fn new(cfg: EnvConfig) -> Self {
        Self { cfg, state: None }
    }
}

impl Environment for SurrogateEnv {
    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    fn action_dim(&self) -> usize {
        self.cfg.action_dim()
    }

    fn reset(&mut self, scene: &Scene, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let s = envs::reset(&self.cfg, scene, rng)?;
        let obs = envs::observe(&self.cfg, &s, scene);
        self.state = Some(s);
        Ok(obs)
    }

    fn step(&mut self, action: &[f64], scene: &Scene, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64, bool, bool)> {
        let state = self.state.as_ref().ok_or(Error::EpisodeDone)?;
        let out = envs::step(&self.cfg, state, action, scene, rng)?;
        let obs = envs::observe(&self.cfg, &out.state, scene);
        let success = out.state.success;
        self.state = Some(out.state);
        Ok((obs, out.reward, out.done, success))
    }
}

/// Scene as a function of the global training step.
pub trait SceneSchedule: Sync {
    fn scene_at(&self, env_step: usize) -> &Scene;
}

impl SceneSchedule for Scene {
    fn scene_at(&self, _env_step: usize) -> &Scene {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

fn clip_global_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// One step of experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    /// Regression target for the critic (a return-to-go).
    pub ret: f64,
}

/// Loss pieces and parameter gradients over a batch. The advantage
/// `ret − V(obs)` is treated as a constant inside the actor loss.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub actor_grad: Vec<f64>,
    pub critic_grad: Vec<f64>,
}

pub fn loss_and_grad(policy: &Policy, value: &ValueFn, batch: &[Sample], entropy_coef: f64) -> LossGrad {
    let n = batch.len().max(1) as f64;
    let k = policy.act_dim();
    let mut actor_grad = vec![0.0; policy.net.params.len()];
    let mut critic_grad = vec![0.0; value.net.params.len()];
    let mut actor_loss = 0.0;
    let mut critic_loss = 0.0;
    let span = LOG_STD_MAX - LOG_STD_MIN;
    for s in batch {
        let vt = value.net.forward_trace(&s.obs);
        let v = vt.out[0];
        let adv = s.ret - v;
        critic_loss += 0.5 * adv * adv / n;
        value.net.backward(&s.obs, &vt, &[-adv / n], &mut critic_grad);

        let pt = policy.net.forward_trace(&s.obs);
        let (mean, log_std) = policy.split(&pt.out);
        let logp = gaussian_log_prob(&mean, &log_std, &s.action);
        let entropy: f64 = log_std.iter().map(|ls| ls + 0.5 * (2.0 * PI * E).ln()).sum();
        actor_loss += (-adv * logp - entropy_coef * entropy) / n;
        let mut d_out = vec![0.0; 2 * k];
        for i in 0..k {
            let var = (2.0 * log_std[i]).exp();
            let diff = s.action[i] - mean[i];
            d_out[i] = -adv * diff / var / n;
            let d_ls = (-adv * (diff * diff / var - 1.0) - entropy_coef) / n;
            let sg = sigmoid(pt.out[k + i]);
            d_out[k + i] = d_ls * span * sg * (1.0 - sg);
        }
        policy.net.backward(&s.obs, &pt, &d_out, &mut actor_grad);
    }
    LossGrad {
        actor_loss,
        critic_loss,
        actor_grad,
        critic_grad,
    }
}

/// Largest relative disagreement between [`loss_and_grad`] and central
/// finite differences (step 1e-5) over all actor and critic parameters.
/// Relative error is `|a − b| / max(|a| + |b|, 1e-6)`.
pub fn gradient_check(policy: &Policy, value: &ValueFn, batch: &[Sample], entropy_coef: f64) -> f64 {
    const H: f64 = 1e-5;
    let analytic = loss_and_grad(policy, value, batch, entropy_coef);
    // hold the advantages fixed while perturbing the actor
    let fixed: Vec<Sample> = batch.to_vec();
    let advantages: Vec<f64> = fixed.iter().map(|s| s.ret - value.value(&s.obs)).collect();
    let actor_loss = |p: &Policy| -> f64 {
        let n = fixed.len() as f64;
        fixed
            .iter()
            .zip(&advantages)
            .map(|(s, a)| (-a * p.log_prob(&s.obs, &s.action) - entropy_coef * p.entropy(&s.obs)) / n)
            .sum()
    };
    let critic_loss = |v: &ValueFn| -> f64 {
        let n = fixed.len() as f64;
        fixed.iter().map(|s| 0.5 * (s.ret - v.value(&s.obs)).powi(2) / n).sum()
    };
    let rel = |a: f64, b: f64| (a - b).abs() / (a.abs() + b.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    let mut p = policy.clone();
    for i in 0..p.net.params.len() {
        let orig = p.net.params[i];
        p.net.params[i] = orig + H;
        let up = actor_loss(&p);
        p.net.params[i] = orig - H;
        let down = actor_loss(&p);
        p.net.params[i] = orig;
        worst = worst.max(rel((up - down) / (2.0 * H), analytic.actor_grad[i]));
    }
    let mut v = value.clone();
    for i in 0..v.net.params.len() {
        let orig = v.net.params[i];
        v.net.params[i] = orig + H;
        let up = critic_loss(&v);
        v.net.params[i] = orig - H;
        let down = critic_loss(&v);
        v.net.params[i] = orig;
        worst = worst.max(rel((up - down) / (2.0 * H), analytic.critic_grad[i]));
    }
    worst
}

/// Parameters and optimizer state shared by all workers.
#[derive(Debug, Clone)]
struct Shared {
    policy: Policy,
    value: ValueFn,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl Shared {
    fn update(&mut self, cfg: &TrainConfig, batch: &[Sample], env_step: usize) -> Result<()> {
        let mut lg = loss_and_grad(&self.policy, &self.value, batch, cfg.entropy_coef);
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let diag = |what| Error::NonFiniteLoss {
            env_step,
            what,
            actor_lr: cfg.actor_lr,
            critic_lr: cfg.critic_lr,
        };
        if !lg.actor_loss.is_finite() || !finite(&lg.actor_grad) {
            return Err(diag("actor"));
        }
        if !lg.critic_loss.is_finite() || !finite(&lg.critic_grad) {
            return Err(diag("critic"));
        }
        clip_global_norm(&mut lg.actor_grad, cfg.grad_clip);
        clip_global_norm(&mut lg.critic_grad, cfg.grad_clip);
        self.actor_opt.apply(&mut self.policy.net.params, &lg.actor_grad);
        self.critic_opt.apply(&mut self.value.net.params, &lg.critic_grad);
        Ok(())
    }
}

/// A worker's environment, random stream and unfinished episode.
struct Worker<E> {
    env: E,
    rng: ChaCha8Rng,
    obs: Option<Vec<f64>>,
    observations: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
}

/// Resumable actor-critic training state.
pub struct Trainer<E: Environment> {
    pub cfg: TrainConfig,
    shared: Shared,
    workers: Vec<Worker<E>>,
    env_steps: usize,
    pub curve: LearningCurve,
    eval_env: E,
}

impl<E: Environment> Trainer<E> {
    /// Fresh networks initialized from `cfg.seed`.
    pub fn new<F: Fn() -> E>(make_env: F, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let probe = make_env();
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
        let policy = Policy::new(probe.obs_dim(), probe.action_dim(), cfg.hidden, &mut init);
        let value = ValueFn::new(probe.obs_dim(), cfg.hidden, &mut init);
        Self::from_parts(make_env, policy, value, cfg)
    }

    /// Continues from existing networks with fresh optimizer state.
    pub fn from_parts<F: Fn() -> E>(make_env: F, policy: Policy, value: ValueFn, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let eval_env = make_env();
        check_dim(eval_env.obs_dim(), policy.obs_dim())?;
        check_dim(eval_env.action_dim(), policy.act_dim())?;
        check_dim(eval_env.obs_dim(), value.net.inputs)?;
        let workers = (0..cfg.workers)
            .map(|w| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(w as u64 + 1);
                Worker {
                    env: make_env(),
                    rng,
                    obs: None,
                    observations: Vec::new(),
                    actions: Vec::new(),
                    rewards: Vec::new(),
                }
            })
            .collect();
        Ok(Self {
            shared: Shared {
                actor_opt: Adam::new(policy.net.params.len(), cfg.actor_lr),
                critic_opt: Adam::new(value.net.params.len(), cfg.critic_lr),
                policy,
                value,
            },
            cfg,
            workers,
            env_steps: 0,
            curve: LearningCurve::default(),
            eval_env,
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.shared.policy
    }

    pub fn value(&self) -> &ValueFn {
        &self.shared.value
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn into_parts(self) -> (Policy, ValueFn, LearningCurve) {
        (self.shared.policy, self.shared.value, self.curve)
    }

    /// Evaluates the current policy and appends a curve point.
    pub fn evaluate_now(&mut self, scene: &Scene) -> Result<CurvePoint> {
        let (success_rate, mean_return) = evaluate_env(
            &self.shared.policy,
            &mut self.eval_env,
            scene,
            self.cfg.eval_episodes,
            self.cfg.seed,
            self.cfg.gamma,
        )?;
        let p = CurvePoint {
            env_steps: self.env_steps,
            success_rate,
            mean_return,
        };
        if self.curve.last().is_some_and(|l| l.env_steps == p.env_steps) {
            self.curve.points.pop();
        }
        self.curve.points.push(p);
        Ok(p)
    }

    /// Trains until the global step count reaches `until`, evaluating at
    /// every multiple of `eval_interval` under the scene active at that step.
    pub fn run_until<S: SceneSchedule + ?Sized>(&mut self, until: usize, schedule: &S) -> Result<()> {
        if self.curve.points.is_empty() {
            self.evaluate_now(schedule.scene_at(self.env_steps))?;
        }
        while self.env_steps < until {
            let next_eval = (self.env_steps / self.cfg.eval_interval + 1) * self.cfg.eval_interval;
            let stop = next_eval.min(until);
            if self.workers.len() == 1 {
                self.run_serial(stop, schedule)?;
            } else {
                self.run_parallel(stop, schedule)?;
            }
            if self.env_steps == next_eval {
                self.evaluate_now(schedule.scene_at(self.env_steps - 1))?;
            }
        }
        Ok(())
    }

    /// Trains until `episodes` training episodes have finished in total.
    /// Each step ends at most one episode, so the count is never overshot.
    pub fn run_episodes<S: SceneSchedule + ?Sized>(&mut self, episodes: usize, schedule: &S) -> Result<()> {
        while self.curve.episodes.len() < episodes {
            let need = episodes - self.curve.episodes.len();
            self.run_until(self.env_steps + need, schedule)?;
        }
        Ok(())
    }

    fn run_serial<S: SceneSchedule + ?Sized>(&mut self, stop: usize, schedule: &S) -> Result<()> {
        let cfg = self.cfg.clone();
        let w = &mut self.workers[0];
        while self.env_steps < stop {
            let scene = schedule.scene_at(self.env_steps);
            let finished = worker_step(w, &self.shared.policy, scene, cfg.gamma)?;
            self.env_steps += 1;
            if let Some((batch, discounted_return, success)) = finished {
                self.shared.update(&cfg, &batch, self.env_steps)?;
                self.curve.episodes.push(EpisodeRecord {
                    env_steps: self.env_steps,
                    discounted_return,
                    success,
                });
            }
        }
        Ok(())
    }

    fn run_parallel<S: SceneSchedule + ?Sized>(&mut self, stop: usize, schedule: &S) -> Result<()> {
        let cfg = self.cfg.clone();
        let counter = AtomicUsize::new(self.env_steps);
        let shared = Mutex::new(&mut self.shared);
        let episodes = Mutex::new(Vec::new());
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .workers
                .iter_mut()
                .map(|w| {
                    let (counter, shared, episodes, cfg) = (&counter, &shared, &episodes, &cfg);
                    scope.spawn(move || -> Result<()> {
                        let mut snapshot = shared.lock().unwrap().policy.clone();
                        loop {
                            let step = counter.fetch_add(1, Ordering::SeqCst);
                            if step >= stop {
                                return Ok(());
                            }
                            let scene = schedule.scene_at(step);
                            if let Some((batch, discounted_return, success)) =
                                worker_step(w, &snapshot, scene, cfg.gamma)?
                            {
                                let mut s = shared.lock().unwrap();
                                s.update(cfg, &batch, step + 1)?;
                                snapshot = s.policy.clone();
                                episodes.lock().unwrap().push(EpisodeRecord {
                                    env_steps: step + 1,
                                    discounted_return,
                                    success,
                                });
                            }
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            r?;
        }
        self.env_steps = stop;
        let mut eps = episodes.into_inner().unwrap();
        eps.sort_by_key(|e: &EpisodeRecord| e.env_steps);
        self.curve.episodes.extend(eps);
        Ok(())
    }
}

/// Training batch of a finished episode, its discounted return and outcome.
type Finished = (Vec<Sample>, f64, bool);

/// Advances one worker by one environment step. Returns the episode's
/// training batch when the episode ends.
fn worker_step<E: Environment>(w: &mut Worker<E>, policy: &Policy, scene: &Scene, gamma: f64) -> Result<Option<Finished>> {
    let obs = match w.obs.take() {
        Some(o) => o,
        None => w.env.reset(scene, &mut w.rng)?,
    };
    let action = policy.sample(&obs, &mut w.rng);
    let (next, reward, done, success) = w.env.step(&action, scene, &mut w.rng)?;
    w.observations.push(obs);
    w.actions.push(action);
    w.rewards.push(reward);
    if !done {
        w.obs = Some(next);
        return Ok(None);
    }
    let rewards = std::mem::take(&mut w.rewards);
    let returns = returns_to_go(&rewards, gamma);
    let batch = std::mem::take(&mut w.observations)
        .into_iter()
        .zip(std::mem::take(&mut w.actions))
        .zip(&returns)
        .map(|((obs, action), ret)| Sample { obs, action, ret: *ret })
        .collect();
    Ok(Some((batch, returns[0], success)))
}

/// Success fraction and mean discounted return of the deterministic (mean
/// action) policy over `episodes` episodes.
pub fn evaluate_env<E: Environment + ?Sized>(
    policy: &Policy,
    env: &mut E,
    scene: &Scene,
    episodes: usize,
    seed: u64,
    gamma: f64,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM);
    let mut wins = 0usize;
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset(scene, &mut rng)?;
        let mut rewards = Vec::new();
        loop {
            let (next, r, done, success) = env.step(&policy.mean_action(&obs), scene, &mut rng)?;
            rewards.push(r);
            obs = next;
            if done {
                wins += success as usize;
                break;
            }
        }
        total += discounted_return(&rewards, gamma);
    }
    Ok((wins as f64 / episodes as f64, total / episodes as f64))
}

pub fn evaluate(
    policy: &Policy,
    cfg: &EnvConfig,
    scene: &Scene,
    episodes: usize,
    seed: u64,
    gamma: f64,
) -> Result<(f64, f64)> {
    evaluate_env(policy, &mut SurrogateEnv::new(cfg.clone()), scene, episodes, seed, gamma)
}

/// Trains fresh networks on a surrogate task under a fixed scene.
pub fn train_policy(env: &EnvConfig, scene: &Scene, cfg: &TrainConfig) -> Result<(Policy, ValueFn, LearningCurve)> {
    env.validate()?;
    let mut t = Trainer::new(|| SurrogateEnv::new(env.clone()), cfg.clone())?;
    t.run_until(cfg.total_steps, scene)?;
    if t.curve.last().map(|p| p.env_steps) != Some(t.env_steps()) {
        t.evaluate_now(scene)?;
    }
    Ok(t.into_parts())
}

/// Network dump with an architecture header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDump {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: usize,
    pub policy: Vec<f64>,
    pub value: Vec<f64>,
}

impl PolicyDump {
    pub fn new(policy: &Policy, value: &ValueFn) -> Self {
        Self {
            obs_dim: policy.obs_dim(),
            act_dim: policy.act_dim(),
            hidden: policy.net.hidden,
            policy: policy.net.params.clone(),
            value: value.net.params.clone(),
        }
    }

    pub fn into_networks(self) -> Result<(Policy, ValueFn)> {
        let np = Mlp::param_count(self.obs_dim, self.hidden, 2 * self.act_dim);
        let nv = Mlp::param_count(self.obs_dim, self.hidden, 1);
        check_dim(np, self.policy.len())?;
        check_dim(nv, self.value.len())?;
        Ok((
            Policy {
                net: Mlp {
                    inputs: self.obs_dim,
                    hidden: self.hidden,
                    outputs: 2 * self.act_dim,
                    params: self.policy,
                },
            },
            ValueFn {
                net: Mlp {
                    inputs: self.obs_dim,
                    hidden: self.hidden,
                    outputs: 1,
                    params: self.value,
                },
            },
        ))
    }
}
