//! The off-policy training loop and greedy evaluation on an environment.

use std::io;

use reservoir_core::seed::{rng_for, Stream};
use serde::{Deserialize, Serialize};

use crate::algo::{Learner, LearnerConfig, UpdateStats};
use crate::replay::{ReplayBuffer, Transition};
use crate::task::Environment;
use crate::{Result, RlError};

/// `|Q|` above which training is declared divergent.
pub const Q_DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    /// CSV with header `step,mean_return,std_return`.
    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,mean_return,std_return")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.step, p.mean_return, p.std_return)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub learner: Learner,
    pub curve: LearningCurve,
    pub updates: usize,
    pub last_stats: Option<UpdateStats>,
}

/// Mean and population standard deviation of undiscounted episode returns
/// when acting with `act`. Episode `i` is reset from its own stream of
/// `seed`, so repeated evaluations see the same episodes.
pub fn evaluate_returns<V, F>(env: &mut V, episodes: usize, seed: u64, mut act: F) -> Result<(f64, f64)>
where
    V: Environment + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    if episodes == 0 {
        return Err(RlError::Config("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut rng = rng_for(seed, Stream::Evaluation, i as u64);
        let mut obs = env.reset(&mut rng)?;
        let mut total = 0.0;
        loop {
            let st = env.step(act(&obs)?)?;
            total += st.reward;
            if st.terminal || st.truncated {
                break;
            }
            obs = st.obs;
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64;
    Ok((mean, var.sqrt()))
}

/// Train a learner on `env`, evaluating the greedy policy on `eval_env`
/// every `eval_interval` steps and once more at the end.
pub fn train<E, V>(env: &mut E, eval_env: &mut V, cfg: &LearnerConfig) -> Result<TrainOutput>
where
    E: Environment + ?Sized,
    V: Environment + ?Sized,
{
    cfg.validate()?;
    if env.obs_dim() != eval_env.obs_dim() {
        return Err(RlError::Shape("training and evaluation observations differ".into()));
    }
    let mut learner = Learner::new(cfg.clone(), env.obs_dim())?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, env.obs_dim(), 1)?;
    let mut env_rng = rng_for(cfg.seed, Stream::Environment, 0);
    let mut replay_rng = rng_for(cfg.seed, Stream::Replay, 0);
    let mut curve = LearningCurve::default();
    let mut updates = 0;
    let mut last_stats = None;

    let abort = |step: usize, reason: String, curve: &LearningCurve| RlError::Aborted { step, reason, curve: curve.clone() };

    let mut obs = env.reset(&mut env_rng)?;
    for step in 0..cfg.total_steps {
        let action = if step < cfg.warmup_steps {
            learner.random_action()
        } else {
            learner.explore_action(&obs).map_err(|e| abort(step, e.to_string(), &curve))?
        };
        let st = env.step(action)?;
        let done = st.terminal || (st.truncated && !cfg.bootstrap_truncated);
        buffer.push(&Transition {
            obs: obs.clone(),
            action: vec![action],
            reward: cfg.reward_scale * (st.reward + cfg.reward_shift),
            next_obs: st.obs.clone(),
            done,
        })?;
        obs = if st.terminal || st.truncated { env.reset(&mut env_rng)? } else { st.obs };

        if step >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
            let batch = buffer.sample(cfg.batch_size, &mut replay_rng)?;
            let stats = learner.update(&batch).map_err(|e| abort(step, e.to_string(), &curve))?;
            if !(stats.max_abs_q <= Q_DIVERGENCE_LIMIT) {
                return Err(abort(step, format!("|Q| reached {:e}", stats.max_abs_q), &curve));
            }
            updates += 1;
            last_stats = Some(stats);
        }

        let done_steps = step + 1;
        if done_steps % cfg.eval_interval == 0 || done_steps == cfg.total_steps {
            let (mean_return, std_return) = evaluate_returns(eval_env, cfg.eval_episodes, cfg.seed, |o| learner.greedy_action(o))
                .map_err(|e| abort(step, e.to_string(), &curve))?;
            if curve.last().map(|p| p.step) != Some(done_steps) {
                curve.points.push(CurvePoint { step: done_steps, mean_return, std_return });
            }
        }
    }
    Ok(TrainOutput { learner, curve, updates, last_stats })
}
