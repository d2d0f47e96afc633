//! DDPG, TD3 and SAC: bootstrap targets, critic and actor losses with their
//! gradients, and the [`Learner`] that owns the networks.
//!
//! Batch gradients are accumulated over fixed-size row chunks and summed in
//! chunk order, so sequential and parallel execution give bitwise identical
//! updates.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use reservoir_core::seed::{rng_for, Stream};
use reservoir_core::Execution;
use serde::{Deserialize, Serialize};

use crate::nn::{polyak_update, Activation, Matrix, Mlp, OutputSquash};
use crate::optim::{clip_global_norm, Optimizer, OptimizerKind};
use crate::replay::Batch;
use crate::{Result, RlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ddpg,
    Td3,
    Sac,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Ddpg => "ddpg",
            Self::Td3 => "td3",
            Self::Sac => "sac",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddpg" => Some(Self::Ddpg),
            "td3" => Some(Self::Td3),
            "sac" => Some(Self::Sac),
            _ => None,
        }
    }

    fn twin_critics(self) -> bool {
        !matches!(self, Self::Ddpg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Std of the Gaussian exploration noise (DDPG, TD3).
    pub exploration_sigma: f64,
    /// TD3: critic updates per actor and target update.
    pub policy_delay: usize,
    /// TD3: std of the target-action smoothing noise.
    pub target_noise: f64,
    /// TD3: clip of the target-action smoothing noise.
    pub noise_clip: f64,
    /// SAC: fixed entropy weight.
    pub alpha: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip per update, if any.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub total_steps: usize,
    /// Steps of uniform random actions before learning starts.
    pub warmup_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Bootstrap through time-limit truncation (treat it as non-terminal).
    pub bootstrap_truncated: bool,
    /// Stored rewards are `reward_scale * (reward + reward_shift)`.
    pub reward_scale: f64,
    pub reward_shift: f64,
    pub execution: Execution,
    /// Rows per gradient chunk.
    pub grad_chunk: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Td3,
            gamma: 0.999,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            tau: 0.005,
            batch_size: 128,
            buffer_capacity: 100_000,
            exploration_sigma: 0.1,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            alpha: 0.2,
            log_std_min: -5.0,
            log_std_max: 2.0,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            optimizer: OptimizerKind::Sgd,
            grad_clip: None,
            seed: 0,
            total_steps: 50_000,
            warmup_steps: 1_000,
            eval_interval: 5_000,
            eval_episodes: 1,
            bootstrap_truncated: true,
            reward_scale: 1.0,
            reward_shift: 0.0,
            execution: Execution::Sequential,
            grad_chunk: 32,
        }
    }
}

impl LearnerConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self { algorithm, ..Self::default() }
    }

    /// Settings for the one-step toy task: 20k steps with Adam.
    pub fn toy(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            total_steps: 20_000,
            warmup_steps: 1_000,
            eval_interval: 2_000,
            eval_episodes: 20,
            optimizer: OptimizerKind::Adam,
            seed: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RlError::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1".into());
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("exploration_sigma", self.exploration_sigma),
            ("target_noise", self.target_noise),
            ("noise_clip", self.noise_clip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max".into());
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch_size must be positive and fit in the buffer".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be non-empty and positive".into());
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 || self.grad_chunk == 0 {
            return bad("eval_interval, eval_episodes and grad_chunk must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive".into());
            }
        }
        if !self.reward_shift.is_finite() {
            return bad("reward_shift must be finite".into());
        }
        Ok(())
    }
}

/// Successor value fed to the bootstrap target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NextValue {
    /// DDPG: one target critic.
    Single(f64),
    /// TD3: twin target critics.
    Twin(f64, f64),
    /// SAC: twin target critics and the log-density of the sampled action.
    Soft { q1: f64, q2: f64, alpha: f64, log_prob: f64 },
}

/// Bootstrap target `r + (1 - done) * gamma * V'`.
pub fn critic_target(reward: f64, done: bool, gamma: f64, next: NextValue) -> f64 {
    let v = match next {
        NextValue::Single(q) => q,
        NextValue::Twin(q1, q2) => q1.min(q2),
        NextValue::Soft { q1, q2, alpha, log_prob } => q1.min(q2) - alpha * log_prob,
    };
    if done {
        reward
    } else {
        reward + gamma * v
    }
}

/// `log(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

/// Log-density of `a = tanh(u)` where `u ~ N(mean, exp(log_std)^2)`, given the
/// pre-squash value `u`.
pub fn tanh_gaussian_log_prob(u: f64, mean: f64, log_std: f64) -> f64 {
    let z = (u - mean) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln() - log_one_minus_tanh_sq(u)
}

/// Reparameterized draw: returns `(tanh(u), log pi, u)` with `u = mean + std * eps`.
pub fn squashed_sample(mean: f64, log_std: f64, eps: f64) -> (f64, f64, f64) {
    let u = mean + log_std.exp() * eps;
    (u.tanh(), tanh_gaussian_log_prob(u, mean, log_std), u)
}

/// Q values of `critic` at `(obs, actions)` and their gradient with respect to
/// the actions.
pub fn q_and_action_grad(critic: &Mlp, obs: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let x = obs.hcat(actions);
    let tape = critic.forward_tape(&x)?;
    let q = tape.output().data.clone();
    let ones = Matrix::from_vec(x.rows, 1, vec![1.0; x.rows]);
    let (_, dx) = critic.backward(&tape, &ones)?;
    Ok((q, dx.columns(obs.cols..x.cols)))
}

/// Squared-error critic loss `norm * sum (Q - y)^2` with its parameter
/// gradient; also returns `max |Q|` over the rows.
pub fn critic_loss_grad(critic: &Mlp, obs: &Matrix, actions: &Matrix, targets: &[f64], norm: f64) -> Result<(f64, Vec<f64>, f64)> {
    let x = obs.hcat(actions);
    let tape = critic.forward_tape(&x)?;
    let q = &tape.output().data;
    let mut loss = 0.0;
    let mut max_q = 0.0f64;
    let mut d = Vec::with_capacity(q.len());
    for (qi, yi) in q.iter().zip(targets) {
        let e = qi - yi;
        loss += norm * e * e;
        d.push(2.0 * norm * e);
        max_q = max_q.max(qi.abs());
    }
    if !loss.is_finite() {
        return Err(RlError::NonFinite(format!("critic loss {loss}")));
    }
    let (g, _) = critic.backward(&tape, &Matrix::from_vec(x.rows, 1, d))?;
    Ok((loss, g, max_q))
}

/// Deterministic actor loss `-norm * sum Q(s, pi(s))` and its gradient.
/// `critic` maps actions to `(Q, dQ/da)` for the rows of `obs`.
pub fn deterministic_actor_loss_grad<C>(actor: &Mlp, obs: &Matrix, norm: f64, critic: C) -> Result<(f64, Vec<f64>)>
where
    C: FnOnce(&Matrix) -> Result<(Vec<f64>, Matrix)>,
{
    let tape = actor.forward_tape(obs)?;
    let (q, dq) = critic(tape.output())?;
    let loss = -norm * q.iter().sum::<f64>();
    if !loss.is_finite() {
        return Err(RlError::NonFinite(format!("actor loss {loss}")));
    }
    let d = Matrix::from_vec(dq.rows, dq.cols, dq.data.iter().map(|g| -norm * g).collect());
    let (g, _) = actor.backward(&tape, &d)?;
    Ok((loss, g))
}

/// Per-row output of a Gaussian actor: `(mean, clamped log-std, clamp active)`.
fn gaussian_head(out: &[f64], bounds: (f64, f64)) -> (f64, f64, bool) {
    let raw = out[1];
    let ls = raw.clamp(bounds.0, bounds.1);
    (out[0], ls, raw < bounds.0 || raw > bounds.1)
}

/// Sample actions and log-densities from a Gaussian actor with the given
/// standard-normal draws.
pub fn sample_gaussian_actor(actor: &Mlp, obs: &Matrix, eps: &[f64], bounds: (f64, f64)) -> Result<(Matrix, Vec<f64>)> {
    let out = actor.forward(obs)?;
    let mut a = Vec::with_capacity(obs.rows);
    let mut logp = Vec::with_capacity(obs.rows);
    for r in 0..obs.rows {
        let (mean, ls, _) = gaussian_head(out.row(r), bounds);
        let (ai, lp, _) = squashed_sample(mean, ls, eps[r]);
        a.push(ai);
        logp.push(lp);
    }
    Ok((Matrix::from_vec(obs.rows, 1, a), logp))
}

/// Entropy-regularized actor loss `norm * sum (alpha log pi(a|s) - Q(s, a))`
/// with reparameterized `a = tanh(mean + std * eps)`. `critic` maps actions
/// to `(min Q, d min Q / da)`.
pub fn sac_actor_loss_grad<C>(
    actor: &Mlp,
    obs: &Matrix,
    eps: &[f64],
    alpha: f64,
    bounds: (f64, f64),
    norm: f64,
    critic: C,
) -> Result<(f64, Vec<f64>)>
where
    C: FnOnce(&Matrix) -> Result<(Vec<f64>, Matrix)>,
{
    if actor.output_dim() != 2 || eps.len() != obs.rows {
        return Err(RlError::Shape("Gaussian actor needs two outputs and one draw per row".into()));
    }
    let tape = actor.forward_tape(obs)?;
    let out = tape.output();
    let mut actions = Vec::with_capacity(obs.rows);
    let mut rows = Vec::with_capacity(obs.rows);
    for r in 0..obs.rows {
        let (mean, ls, clamped) = gaussian_head(out.row(r), bounds);
        let (a, lp, _) = squashed_sample(mean, ls, eps[r]);
        actions.push(a);
        rows.push((ls, clamped, lp));
    }
    let actions = Matrix::from_vec(obs.rows, 1, actions);
    let (q, dq) = critic(&actions)?;
    let mut loss = 0.0;
    let mut d = Matrix::zeros(obs.rows, 2);
    for r in 0..obs.rows {
        let (ls, clamped, lp) = rows[r];
        let a = actions.data[r];
        loss += norm * (alpha * lp - q[r]);
        // d/du of -log(1 - tanh(u)^2) is 2 tanh(u).
        let dl_du = alpha * 2.0 * a - dq.data[r] * (1.0 - a * a);
        d.set(r, 0, norm * dl_du);
        let dl_dls = dl_du * ls.exp() * eps[r] - alpha;
        d.set(r, 1, if clamped { 0.0 } else { norm * dl_dls });
    }
    if !loss.is_finite() {
        return Err(RlError::NonFinite(format!("actor loss {loss}")));
    }
    let (g, _) = actor.backward(&tape, &d)?;
    Ok((loss, g))
}

/// Sum chunk results in chunk order.
fn accumulate<T, F>(exec: Execution, n: usize, chunk: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Range<usize>) -> Result<T> + Sync + Send,
{
    exec.map_chunks(n, chunk, f).into_iter().collect()
}

fn sum_grads(parts: impl IntoIterator<Item = Vec<f64>>, n: usize) -> Vec<f64> {
    let mut total = vec![0.0; n];
    for g in parts {
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    /// Largest `|Q|` seen on the batch or in its targets.
    pub max_abs_q: f64,
}

#[derive(Debug, Clone)]
pub struct Learner {
    cfg: LearnerConfig,
    obs_dim: usize,
    actor: Mlp,
    actor_target: Mlp,
    critics: Vec<Mlp>,
    critic_targets: Vec<Mlp>,
    actor_opt: Optimizer,
    critic_opts: Vec<Optimizer>,
    explore_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    critic_updates: u64,
}

/// Initial range of the final actor layer relative to fan-in scaling.
const ACTOR_LAST_SCALE: f64 = 0.1;

impl Learner {
    pub fn new(cfg: LearnerConfig, obs_dim: usize) -> Result<Self> {
        cfg.validate()?;
        if obs_dim == 0 {
            return Err(RlError::Config("observation dimension must be positive".into()));
        }
        let mut init = rng_for(cfg.seed, Stream::Init, 0);
        let mut acts = vec![cfg.activation; cfg.hidden.len()];
        acts.push(Activation::Linear);

        let (out, squash) = match cfg.algorithm {
            Algorithm::Sac => (2, OutputSquash::None),
            _ => (1, OutputSquash::Tanh),
        };
        let mut dims = vec![obs_dim];
        dims.extend(&cfg.hidden);
        dims.push(out);
        let actor = Mlp::init(&dims, &acts, squash, ACTOR_LAST_SCALE, &mut init)?;

        let mut cdims = vec![obs_dim + 1];
        cdims.extend(&cfg.hidden);
        cdims.push(1);
        let n_critics = if cfg.algorithm.twin_critics() { 2 } else { 1 };
        let critics = (0..n_critics)
            .map(|_| Mlp::init(&cdims, &acts, OutputSquash::None, 1.0, &mut init))
            .collect::<Result<Vec<_>>>()?;

        let actor_opt = Optimizer::new(cfg.optimizer, cfg.actor_lr, actor.num_params());
        let critic_opts = critics.iter().map(|c| Optimizer::new(cfg.optimizer, cfg.critic_lr, c.num_params())).collect();
        Ok(Self {
            obs_dim,
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            actor_opt,
            critic_opts,
            explore_rng: rng_for(cfg.seed, Stream::Exploration, 0),
            update_rng: rng_for(cfg.seed, Stream::TargetNoise, 0),
            critic_updates: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_target(&self) -> &Mlp {
        &self.actor_target
    }

    pub fn critics(&self) -> &[Mlp] {
        &self.critics
    }

    pub fn critic_targets(&self) -> &[Mlp] {
        &self.critic_targets
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    /// Deterministic action in `[-1, 1]`: the actor output, or `tanh(mean)`
    /// for SAC.
    pub fn greedy_action(&self, obs: &[f64]) -> Result<f64> {
        greedy_action(self.cfg.algorithm, &self.actor, obs)
    }

    /// Action used while collecting experience.
    pub fn explore_action(&mut self, obs: &[f64]) -> Result<f64> {
        match self.cfg.algorithm {
            Algorithm::Sac => {
                let out = self.actor.forward_one(obs)?;
                let (mean, ls, _) = gaussian_head(&out, (self.cfg.log_std_min, self.cfg.log_std_max));
                let eps: f64 = StandardNormal.sample(&mut self.explore_rng);
                Ok(squashed_sample(mean, ls, eps).0)
            }
            _ => {
                let a = self.greedy_action(obs)?;
                let noise: f64 = StandardNormal.sample(&mut self.explore_rng);
                Ok((a + self.cfg.exploration_sigma * noise).clamp(-1.0, 1.0))
            }
        }
    }

    /// Uniform action for warm-up, drawn from the exploration stream.
    pub fn random_action(&mut self) -> f64 {
        self.explore_rng.random_range(-1.0..=1.0)
    }

    fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(&mut self.update_rng)).collect()
    }

    fn bounds(&self) -> (f64, f64) {
        (self.cfg.log_std_min, self.cfg.log_std_max)
    }

    /// Bootstrap targets for a batch, computed with the frozen target networks.
    pub fn targets(&mut self, batch: &Batch) -> Result<(Vec<f64>, f64)> {
        let n = batch.len();
        let gamma = self.cfg.gamma;
        let (next_actions, log_probs) = match self.cfg.algorithm {
            Algorithm::Ddpg => (self.actor_target.forward(&batch.next_obs)?, None),
            Algorithm::Td3 => {
                let mut a = self.actor_target.forward(&batch.next_obs)?;
                let noise = self.normals(n);
                let (s, c) = (self.cfg.target_noise, self.cfg.noise_clip);
                for (ai, z) in a.data.iter_mut().zip(noise) {
                    *ai = (*ai + (s * z).clamp(-c, c)).clamp(-1.0, 1.0);
                }
                (a, None)
            }
            Algorithm::Sac => {
                let eps = self.normals(n);
                let (a, lp) = sample_gaussian_actor(&self.actor, &batch.next_obs, &eps, self.bounds())?;
                (a, Some(lp))
            }
        };
        let x = batch.next_obs.hcat(&next_actions);
        let q: Vec<Vec<f64>> = self.critic_targets.iter().map(|c| c.forward(&x).map(|m| m.data)).collect::<Result<_>>()?;
        let mut max_q = 0.0f64;
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let next = match self.cfg.algorithm {
                Algorithm::Ddpg => NextValue::Single(q[0][i]),
                Algorithm::Td3 => NextValue::Twin(q[0][i], q[1][i]),
                Algorithm::Sac => NextValue::Soft {
                    q1: q[0][i],
                    q2: q[1][i],
                    alpha: self.cfg.alpha,
                    log_prob: log_probs.as_ref().unwrap()[i],
                },
            };
            for qj in &q {
                max_q = max_q.max(qj[i].abs());
            }
            let yi = critic_target(batch.rewards[i], batch.dones[i], gamma, next);
            if !yi.is_finite() {
                return Err(RlError::NonFinite("critic target".into()));
            }
            y.push(yi);
        }
        Ok((y, max_q))
    }

    fn step_params(opt: &mut Optimizer, net: &mut Mlp, mut g: Vec<f64>, clip: Option<f64>) -> Result<()> {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(RlError::NonFinite("gradient".into()));
        }
        if let Some(c) = clip {
            clip_global_norm(&mut g, c);
        }
        opt.step(&mut net.params, &g);
        Ok(())
    }

    /// One learning step on a sampled batch.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let n = batch.len();
        if n == 0 {
            return Err(RlError::Config("empty batch".into()));
        }
        let norm = 1.0 / n as f64;
        let (exec, chunk, clip) = (self.cfg.execution, self.cfg.grad_chunk, self.cfg.grad_clip);
        let (y, mut max_q) = self.targets(batch)?;

        let mut critic_loss = 0.0;
        for j in 0..self.critics.len() {
            let critic = &self.critics[j];
            let parts = accumulate(exec, n, chunk, |r| {
                critic_loss_grad(critic, &batch.obs.rows_slice(r.clone()), &batch.actions.rows_slice(r.clone()), &y[r], norm)
            })?;
            let mut g = Vec::with_capacity(parts.len());
            for (l, gi, m) in parts {
                critic_loss += l;
                max_q = max_q.max(m);
                g.push(gi);
            }
            let g = sum_grads(g, critic.num_params());
            Self::step_params(&mut self.critic_opts[j], &mut self.critics[j], g, clip)?;
        }
        self.critic_updates += 1;

        let actor_due = match self.cfg.algorithm {
            Algorithm::Td3 => self.critic_updates % self.cfg.policy_delay as u64 == 0,
            _ => true,
        };
        let mut actor_loss = None;
        if actor_due {
            let parts = match self.cfg.algorithm {
                Algorithm::Ddpg | Algorithm::Td3 => {
                    let (actor, critic) = (&self.actor, &self.critics[0]);
                    accumulate(exec, n, chunk, |r| {
                        let obs = batch.obs.rows_slice(r);
                        deterministic_actor_loss_grad(actor, &obs, norm, |a| q_and_action_grad(critic, &obs, a))
                    })?
                }
                Algorithm::Sac => {
                    let eps = self.normals(n);
                    let (actor, critics, alpha, bounds) = (&self.actor, &self.critics, self.cfg.alpha, self.bounds());
                    accumulate(exec, n, chunk, |r| {
                        let obs = batch.obs.rows_slice(r.clone());
                        sac_actor_loss_grad(actor, &obs, &eps[r], alpha, bounds, norm, |a| min_q_and_action_grad(critics, &obs, a))
                    })?
                }
            };
            let mut loss = 0.0;
            let mut g = Vec::with_capacity(parts.len());
            for (l, gi) in parts {
                loss += l;
                g.push(gi);
            }
            let g = sum_grads(g, self.actor.num_params());
            Self::step_params(&mut self.actor_opt, &mut self.actor, g, clip)?;
            actor_loss = Some(loss);
        }

        // Targets move only together with the actor (every step except for TD3).
        if actor_due {
            let tau = self.cfg.tau;
            for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
                polyak_update(t, c, tau)?;
            }
            if self.cfg.algorithm != Algorithm::Sac {
                polyak_update(&mut self.actor_target, &self.actor, tau)?;
            }
        }
        Ok(UpdateStats { critic_loss, actor_loss, max_abs_q: max_q })
    }
}

/// Minimum over twin critics with the gradient of the active one.
pub fn min_q_and_action_grad(critics: &[Mlp], obs: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let mut best: Option<(Vec<f64>, Matrix)> = None;
    for c in critics {
        let (q, dq) = q_and_action_grad(c, obs, actions)?;
        best = Some(match best {
            None => (q, dq),
            Some((bq, mut bdq)) => {
                let mut merged = bq;
                for i in 0..merged.len() {
                    if q[i] < merged[i] {
                        merged[i] = q[i];
                        bdq.data[i] = dq.data[i];
                    }
                }
                (merged, bdq)
            }
        });
    }
    best.ok_or_else(|| RlError::Config("no critics".into()))
}

/// Deterministic action of an actor network for one observation.
pub fn greedy_action(algorithm: Algorithm, actor: &Mlp, obs: &[f64]) -> Result<f64> {
    let out = actor.forward_one(obs)?;
    let a = match algorithm {
        Algorithm::Sac => out[0].tanh(),
        _ => out[0],
    };
    if !a.is_finite() {
        return Err(RlError::NonFinite("action".into()));
    }
    Ok(a.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn target_formulas() {
        assert_eq!(critic_target(1.0, false, 0.5, NextValue::Twin(2.0, 4.0)), 2.0);
        assert_eq!(critic_target(1.0, false, 0.5, NextValue::Single(4.0)), 3.0);
        assert_eq!(critic_target(1.0, true, 0.5, NextValue::Single(4.0)), 1.0);
        let soft = NextValue::Soft { q1: 2.0, q2: 4.0, alpha: 0.5, log_prob: -1.0 };
        assert_eq!(critic_target(1.0, false, 0.5, soft), 1.0 + 0.5 * 2.5);
        for next in [NextValue::Single(7.0), NextValue::Twin(-3.0, 9.0), soft] {
            assert_eq!(critic_target(-0.25, false, 0.0, next), -0.25);
        }
    }

    #[test]
    fn stable_log_density_matches_naive() {
        for (u, m, ls) in [(0.3, 0.1, -0.5), (-1.2, 0.0, 0.2), (2.0, 1.5, -1.0)] {
            let a: f64 = f64::tanh(u);
            let naive = -0.5 * ((u - m) / f64::exp(ls)).powi(2) - ls - 0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 - a * a).ln();
            assert!((tanh_gaussian_log_prob(u, m, ls) - naive).abs() < 1e-12);
        }
        assert!(tanh_gaussian_log_prob(30.0, 30.0, 0.0).is_finite());
    }

    #[test]
    fn config_validation() {
        assert!(LearnerConfig::default().validate().is_ok());
        for bad in [
            LearnerConfig { gamma: 1.0, ..Default::default() },
            LearnerConfig { tau: 0.0, ..Default::default() },
            LearnerConfig { policy_delay: 0, ..Default::default() },
            LearnerConfig { alpha: -0.1, ..Default::default() },
            LearnerConfig { batch_size: 10, buffer_capacity: 5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(Algorithm::parse("TD3"), Some(Algorithm::Td3));
        assert_eq!(Algorithm::parse("ppo"), None);
    }

    #[test]
    fn twin_minimum_picks_the_active_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let acts = [Activation::Tanh, Activation::Linear];
        let c1 = Mlp::init(&[3, 5, 1], &acts, OutputSquash::None, 1.0, &mut rng).unwrap();
        let c2 = Mlp::init(&[3, 5, 1], &acts, OutputSquash::None, 1.0, &mut rng).unwrap();
        let obs = Matrix::from_vec(4, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.0, 0.9]);
        let a = Matrix::from_vec(4, 1, vec![0.5, -0.5, 0.9, 0.0]);
        let (q, dq) = min_q_and_action_grad(&[c1.clone(), c2.clone()], &obs, &a).unwrap();
        let (q1, d1) = q_and_action_grad(&c1, &obs, &a).unwrap();
        let (q2, d2) = q_and_action_grad(&c2, &obs, &a).unwrap();
        for i in 0..4 {
            let (eq, ed) = if q1[i] <= q2[i] { (q1[i], d1.data[i]) } else { (q2[i], d2.data[i]) };
            assert_eq!(q[i], eq);
            assert_eq!(dq.data[i], ed);
        }
    }
}
