//! Group relative policy optimization on tabular softmax policies.
//!
//! For a group of `N` completions sampled from a frozen policy `π_old`,
//! advantages are the Z-scores of the rewards:
//!
//! ```text
//! Â_i = (r_i - mean(r)) / (std(r) + ε_stab)        (population std)
//! ρ_i = π_θ(o_i) / π_old(o_i)                     (product over steps)
//! J   = Σ_i min(ρ_i Â_i, clip(ρ_i, 1-ε, 1+ε) Â_i) - β KL(π_old ‖ π_θ)
//! ```
//!
//! The KL term is the exact categorical divergence averaged over every state
//! visited by the group. `Aggregation::Mean` divides the clipped sum by `N`.
//!
//! [`GridTask`] is a 5×5 navigation task used to exercise the trainer.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("advantages need at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("environment fault: {0}")]
    EnvFault(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn group_advantages(rewards: &[f64], stab_eps: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteInput("reward"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + stab_eps;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

pub fn prob_ratio(logp_new: f64, logp_old: f64) -> Result<f64, GrpoError> {
    if !logp_new.is_finite() || !logp_old.is_finite() {
        return Err(GrpoError::NonFiniteInput("log-probability"));
    }
    Ok((logp_new - logp_old).exp())
}

pub fn clipped_term(rho: f64, adv: f64, clip_eps: f64) -> f64 {
    let clipped = rho.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (rho * adv).min(clipped * adv)
}

/// Row-wise softmax policy over a `n_states × n_actions` parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            theta: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_theta(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), n_states * n_actions, "theta shape");
        Self {
            n_states,
            n_actions,
            theta,
        }
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.theta[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        let row = self.row(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|t| (t - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let row = self.row(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        row[a] - lse
    }

    pub fn sequence_log_prob(&self, steps: &[(usize, usize)]) -> f64 {
        steps.iter().map(|&(s, a)| self.log_prob(s, a)).sum()
    }

    pub fn sample<R: Rng>(&self, s: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let p = self.probs(s);
        for (a, pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return a;
            }
        }
        p.len() - 1
    }

    /// `Σ_a p(a) ln(p(a)/q(a))` at state `s`, with `self = p`.
    pub fn kl_at(&self, other: &Self, s: usize) -> f64 {
        let p = self.probs(s);
        p.iter()
            .enumerate()
            .filter(|(_, pa)| **pa > 0.0)
            .map(|(a, pa)| pa * (self.log_prob(s, a) - other.log_prob(s, a)))
            .sum()
    }
}

/// One sampled episode: visited `(state, action)` pairs and terminal reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub steps: Vec<(usize, usize)>,
    pub reward: f64,
    /// `log π_old(o)` at sampling time.
    pub logp_old: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub query: String,
    pub completions: Vec<Completion>,
    advantages: Option<Vec<f64>>,
}

impl GroupSample {
    pub fn new(query: impl Into<String>, completions: Vec<Completion>) -> Self {
        Self {
            query: query.into(),
            completions,
            advantages: None,
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.completions.iter().map(|c| c.reward).collect()
    }

    pub fn compute_advantages(&mut self, stab_eps: f64) -> Result<&[f64], GrpoError> {
        let adv = group_advantages(&self.rewards(), stab_eps)?;
        Ok(self.advantages.insert(adv))
    }

    /// Sets advantages directly.
    pub fn with_advantages(mut self, adv: Vec<f64>) -> Self {
        assert_eq!(adv.len(), self.completions.len(), "one advantage per completion");
        self.advantages = Some(adv);
        self
    }

    pub fn advantages(&self) -> Option<&[f64]> {
        self.advantages.as_deref()
    }

    pub fn visited_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.completions
            .iter()
            .flat_map(|c| c.steps.iter().map(|&(s, _)| s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub stab_eps: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Gradient steps per sampled group.
    pub update_epochs: usize,
    pub aggregation: Aggregation,
    pub task: GridTask,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.04,
            stab_eps: 1e-8,
            learning_rate: 0.2,
            iterations: 300,
            seed: 7,
            update_epochs: 1,
            aggregation: Aggregation::Sum,
            task: GridTask::default(),
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.kl_beta >= 0.0) {
            return bad("kl_beta must be non-negative");
        }
        if !(self.stab_eps > 0.0) {
            return bad("stab_eps must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.update_epochs == 0 {
            return bad("update_epochs must be at least 1");
        }
        self.task.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, GrpoError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Objective value and gradient with respect to `policy.theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub objective: f64,
    pub kl: f64,
    pub grad: Vec<f64>,
}

/// Evaluates `J(θ)` for `group`, holding `old` fixed.
pub fn grpo_objective(
    group: &GroupSample,
    policy: &TabularPolicy,
    old: &TabularPolicy,
    cfg: &GrpoConfig,
) -> f64 {
    evaluate(group, policy, old, cfg).objective
}

/// `J(θ)` together with its analytic gradient.
pub fn evaluate(
    group: &GroupSample,
    policy: &TabularPolicy,
    old: &TabularPolicy,
    cfg: &GrpoConfig,
) -> ObjectiveEval {
    let adv = group
        .advantages()
        .expect("advantages must be computed before evaluating the objective");
    let na = policy.n_actions;
    let mut grad = vec![0.0; policy.theta.len()];
    let scale = match cfg.aggregation {
        Aggregation::Sum => 1.0,
        Aggregation::Mean => 1.0 / group.completions.len() as f64,
    };

    let mut surrogate = 0.0;
    for (c, &a_hat) in group.completions.iter().zip(adv) {
        let rho = (policy.sequence_log_prob(&c.steps) - c.logp_old).exp();
        let clipped = rho.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        surrogate += (rho * a_hat).min(clipped * a_hat);
        // Only the unclipped branch depends on θ.
        if rho * a_hat <= clipped * a_hat {
            let w = scale * a_hat * rho;
            for &(s, a) in &c.steps {
                let p = policy.probs(s);
                for (b, pb) in p.iter().enumerate() {
                    let indicator = if a == b { 1.0 } else { 0.0 };
                    grad[s * na + b] += w * (indicator - pb);
                }
            }
        }
    }

    let visited: Vec<usize> = group.visited_states().collect();
    let mut kl = 0.0;
    if !visited.is_empty() {
        let m = visited.len() as f64;
        for &s in &visited {
            kl += old.kl_at(policy, s) / m;
            if cfg.kl_beta > 0.0 {
                let p_new = policy.probs(s);
                let p_old = old.probs(s);
                for b in 0..na {
                    grad[s * na + b] -= cfg.kl_beta * (p_new[b] - p_old[b]) / m;
                }
            }
        }
    }

    ObjectiveEval {
        objective: scale * surrogate - cfg.kl_beta * kl,
        kl,
        grad,
    }
}

/// Episodic environment with a discrete state and action space.
pub trait Environment {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn reset(&mut self) -> usize;
    /// Returns `(next_state, done, reward)`.
    fn step(&mut self, state: usize, action: usize) -> Result<(usize, bool, f64), GrpoError>;
}

/// Square grid. Actions: 0 up, 1 down, 2 left, 3 right, 4 finish. Moves
/// into a wall leave the state unchanged. Reward 1 iff finish is emitted on
/// the goal; any finish ends the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridTask {
    pub size: usize,
    pub start: usize,
    pub goal: usize,
    pub max_steps: usize,
}

impl Default for GridTask {
    fn default() -> Self {
        Self {
            size: 5,
            start: 6,
            goal: 18,
            max_steps: 12,
        }
    }
}

impl GridTask {
    pub const FINISH: usize = 4;

    pub fn validate(&self) -> Result<(), GrpoError> {
        let cells = self.size * self.size;
        if self.size == 0 || self.start >= cells || self.goal >= cells || self.max_steps == 0 {
            return Err(GrpoError::InvalidConfig(format!("bad grid task {self:?}")));
        }
        Ok(())
    }

    pub fn next_state(&self, s: usize, a: usize) -> usize {
        let (r, c) = (s / self.size, s % self.size);
        let (r, c) = match a {
            0 => (r.saturating_sub(1), c),
            1 => ((r + 1).min(self.size - 1), c),
            2 => (r, c.saturating_sub(1)),
            3 => (r, (c + 1).min(self.size - 1)),
            _ => (r, c),
        };
        r * self.size + c
    }

    /// Exact probability that `policy` succeeds within the step cap.
    pub fn success_probability(&self, policy: &TabularPolicy) -> f64 {
        let cells = self.size * self.size;
        let mut v = vec![0.0; cells];
        for _ in 0..self.max_steps {
            let mut next = vec![0.0; cells];
            for (s, slot) in next.iter_mut().enumerate() {
                let p = policy.probs(s);
                let mut val = if s == self.goal { p[Self::FINISH] } else { 0.0 };
                for a in 0..Self::FINISH {
                    val += p[a] * v[self.next_state(s, a)];
                }
                *slot = val;
            }
            v = next;
        }
        v[self.start]
    }
}

impl Environment for GridTask {
    fn n_states(&self) -> usize {
        self.size * self.size
    }

    fn n_actions(&self) -> usize {
        5
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self) -> usize {
        self.start
    }

    fn step(&mut self, state: usize, action: usize) -> Result<(usize, bool, f64), GrpoError> {
        if state >= self.n_states() || action >= 5 {
            return Err(GrpoError::EnvFault(format!("state {state} action {action}")));
        }
        if action == Self::FINISH {
            let reward = if state == self.goal { 1.0 } else { 0.0 };
            return Ok((state, true, reward));
        }
        Ok((self.next_state(state, action), false, 0.0))
    }
}

pub fn rollout<E: Environment, R: Rng>(
    env: &mut E,
    policy: &TabularPolicy,
    rng: &mut R,
) -> Result<Completion, GrpoError> {
    let mut s = env.reset();
    let mut steps = Vec::new();
    let mut reward = 0.0;
    for _ in 0..env.max_steps() {
        let a = policy.sample(s, rng);
        steps.push((s, a));
        let (next, done, r) = env.step(s, a)?;
        s = next;
        if done {
            reward = r;
            break;
        }
    }
    let logp_old = policy.sequence_log_prob(&steps);
    Ok(Completion {
        steps,
        reward,
        logp_old,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_reward: f64,
    pub objective: f64,
    pub kl: f64,
}

/// One iteration: sample from a frozen copy, score, normalize, ascend.
pub fn grpo_step<E: Environment, R: Rng>(
    policy: &mut TabularPolicy,
    env: &mut E,
    cfg: &GrpoConfig,
    rng: &mut R,
    iteration: usize,
) -> Result<IterationMetrics, GrpoError> {
    let old = policy.clone();
    let completions = (0..cfg.group_size)
        .map(|_| rollout(env, &old, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let mut group = GroupSample::new(format!("iter-{iteration}"), completions);
    group.compute_advantages(cfg.stab_eps)?;
    let mean_reward = group.rewards().iter().sum::<f64>() / cfg.group_size as f64;

    let mut objective = 0.0;
    for _ in 0..cfg.update_epochs {
        let eval = evaluate(&group, policy, &old, cfg);
        objective = eval.objective;
        for (t, g) in policy.theta.iter_mut().zip(&eval.grad) {
            *t += cfg.learning_rate * g;
        }
    }
    let kl = evaluate(&group, policy, &old, cfg).kl;
    Ok(IterationMetrics {
        iteration,
        mean_reward,
        objective,
        kl,
    })
}

/// Per-iteration record of a training run on [`GridTask`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub metrics: IterationMetrics,
    /// Exact success probability after the update.
    pub expected_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_expected_reward: f64,
    pub records: Vec<TrainRecord>,
    pub policy: TabularPolicy,
}

impl TrainReport {
    pub fn final_expected_reward(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_expected_reward, |r| r.expected_reward)
    }

    /// First iteration (1-based count) after which expected reward reaches
    /// `target`.
    pub fn iterations_to(&self, target: f64) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.expected_reward >= target)
            .map(|i| i + 1)
    }

    /// Trailing moving average of the expected reward, one value per full
    /// window.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let xs: Vec<f64> = self.records.iter().map(|r| r.expected_reward).collect();
        xs.windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "iteration,mean_reward,J,KL,expected_reward")?;
        for r in &self.records {
            let m = r.metrics;
            writeln!(
                out,
                "{},{},{},{},{}",
                m.iteration, m.mean_reward, m.objective, m.kl, r.expected_reward
            )?;
        }
        Ok(())
    }
}

/// Trains a uniform policy on `cfg.task` for `cfg.iterations` iterations.
pub fn train(cfg: &GrpoConfig) -> Result<TrainReport, GrpoError> {
    cfg.validate()?;
    let mut env = cfg.task;
    let mut policy = TabularPolicy::uniform(env.n_states(), env.n_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial_expected_reward = env.success_probability(&policy);
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let metrics = grpo_step(&mut policy, &mut env, cfg, &mut rng, it)?;
        records.push(TrainRecord {
            metrics,
            expected_reward: cfg.task.success_probability(&policy),
        });
    }
    Ok(TrainReport {
        initial_expected_reward,
        records,
        policy,
    })
}
