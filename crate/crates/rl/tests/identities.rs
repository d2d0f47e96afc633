use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reservoir_core::Execution;
use reservoir_rl::algo::{critic_target, squashed_sample, tanh_gaussian_log_prob, Algorithm, Learner, LearnerConfig, NextValue};
use reservoir_rl::nn::polyak_update;
use reservoir_rl::replay::{ReplayBuffer, Transition};

#[test]
fn twin_target_never_exceeds_single_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let r = rng.random_range(-10.0..10.0);
        let gamma = rng.random_range(0.0..1.0);
        let done = rng.random_bool(0.2);
        let (q1, q2) = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let td3 = critic_target(r, done, gamma, NextValue::Twin(q1, q2));
        assert!(td3 <= critic_target(r, done, gamma, NextValue::Single(q1)));
        assert!(td3 <= critic_target(r, done, gamma, NextValue::Single(q2)));
        let sac = critic_target(r, done, gamma, NextValue::Soft { q1, q2, alpha: 0.0, log_prob: rng.random_range(-5.0..5.0) });
        assert_eq!(sac, td3);
    }
}

proptest! {
    #[test]
    fn myopic_targets_equal_reward(r in -1e3f64..1e3, q1 in -1e3f64..1e3, q2 in -1e3f64..1e3, lp in -10f64..10.0, done: bool) {
        for next in [NextValue::Single(q1), NextValue::Twin(q1, q2), NextValue::Soft { q1, q2, alpha: 0.2, log_prob: lp }] {
            prop_assert_eq!(critic_target(r, done, 0.0, next), r);
        }
    }

    #[test]
    fn squashed_actions_stay_in_bounds(mean in -20f64..20.0, ls in -5f64..2.0, eps in -6f64..6.0) {
        let (a, lp, _) = squashed_sample(mean, ls, eps);
        prop_assert!((-1.0..=1.0).contains(&a));
        prop_assert!(!lp.is_nan());
    }
}

/// Density of `tanh(u)` integrates to one over `(-1, 1)`.
#[test]
fn squashed_gaussian_density_integrates_to_one() {
    for (mean, ls) in [(0.0, 0.0), (0.5, -1.0), (-1.0, -0.5), (0.3, 0.3)] {
        // Midpoint rule in a; atanh keeps the tails exact in u.
        let n = 400_000;
        let h = 2.0 / n as f64;
        let total: f64 = (0..n)
            .map(|i| {
                let a: f64 = -1.0 + (i as f64 + 0.5) * h;
                tanh_gaussian_log_prob(a.atanh(), mean, ls).exp() * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-3, "mean {mean} log-std {ls}: {total}");
    }
}

/// Log-density against a numerically differentiated change of variables.
#[test]
fn log_density_matches_numerical_change_of_variables() {
    for (u, mean, ls) in [(0.2, 0.0, 0.0), (-0.7, 0.4, -1.2), (1.5, 1.0, 0.5), (-2.5, -2.0, -0.3)] {
        let sigma = f64::exp(ls);
        let gauss = (-0.5 * ((u - mean) / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let h = 1e-5;
        let jac = (f64::tanh(u + h) - f64::tanh(u - h)) / (2.0 * h);
        let numeric = (gauss / jac).ln();
        assert!((tanh_gaussian_log_prob(u, mean, ls) - numeric).abs() < 1e-6);
    }
}

#[test]
fn polyak_endpoints_on_default_networks() {
    let a = Learner::new(LearnerConfig { seed: 1, ..Default::default() }, 12).unwrap();
    let b = Learner::new(LearnerConfig { seed: 2, ..Default::default() }, 12).unwrap();
    let mut t = a.actor().clone();
    polyak_update(&mut t, b.actor(), 0.0).unwrap();
    assert_eq!(t.params, a.actor().params);
    polyak_update(&mut t, b.actor(), 1.0).unwrap();
    assert_eq!(t.params, b.actor().params);
}

fn filled_buffer(n: usize, obs_dim: usize, seed: u64) -> ReplayBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = ReplayBuffer::new(n, obs_dim, 1).unwrap();
    for _ in 0..n {
        let obs: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        buf.push(&Transition {
            obs: obs.clone(),
            action: vec![rng.random_range(-1.0..1.0)],
            reward: rng.random_range(-1.0..1.0),
            next_obs: obs,
            done: false,
        })
        .unwrap();
    }
    buf
}

/// TD3 only moves its target networks on actor updates; between them the
/// targets are bitwise frozen.
#[test]
fn td3_targets_frozen_between_delayed_updates() {
    let cfg = LearnerConfig { algorithm: Algorithm::Td3, policy_delay: 2, batch_size: 16, hidden: vec![8, 8], ..Default::default() };
    let mut l = Learner::new(cfg, 3).unwrap();
    let buf = filled_buffer(64, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let before = (l.actor_target().clone(), l.critic_targets().to_vec());
    let s = l.update(&buf.sample(16, &mut rng).unwrap()).unwrap();
    assert!(s.actor_loss.is_none());
    assert_eq!(l.actor_target(), &before.0);
    assert_eq!(l.critic_targets(), &before.1[..]);
    let s = l.update(&buf.sample(16, &mut rng).unwrap()).unwrap();
    assert!(s.actor_loss.is_some());
    assert_ne!(l.actor_target(), &before.0);
}

#[test]
fn sequential_and_parallel_updates_agree_bitwise() {
    for algorithm in [Algorithm::Ddpg, Algorithm::Td3, Algorithm::Sac] {
        let run = |execution| {
            let cfg = LearnerConfig { algorithm, execution, batch_size: 100, grad_chunk: 16, ..Default::default() };
            let mut l = Learner::new(cfg, 4).unwrap();
            let buf = filled_buffer(300, 4, 9);
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            for _ in 0..5 {
                l.update(&buf.sample(100, &mut rng).unwrap()).unwrap();
            }
            (l.actor().params.clone(), l.critics()[0].params.clone())
        };
        let (a, b) = (run(Execution::Sequential), run(Execution::Parallel));
        assert!(a.0.iter().zip(&b.0).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

/// Uniform sampling: chi-square over 1e5 draws from 100 slots, compared with
/// the 0.999 quantile from the Wilson-Hilferty approximation.
#[test]
fn replay_sampling_is_uniform() {
    let slots = 100;
    let buf = filled_buffer(slots, 2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = 100_000;
    let mut counts = vec![0usize; slots];
    for _ in 0..draws / 100 {
        for i in buf.sample_indices(100, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let expected = draws as f64 / slots as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let k = (slots - 1) as f64;
    let z = 3.090_232; // standard normal 0.999 quantile
    let critical = k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3);
    assert!(chi2 < critical, "chi-square {chi2} >= {critical}");
    assert!(counts.iter().all(|&c| c > 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn buffer_never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(cap, 1, 1).unwrap();
        for i in 0..pushes {
            buf.push(&Transition { obs: vec![i as f64], action: vec![0.0], reward: 0.0, next_obs: vec![0.0], done: false }).unwrap();
            prop_assert!(buf.len() <= cap);
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
    }
}
