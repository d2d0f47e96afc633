use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use reservoir_rl::algo::{
    critic_loss_grad, deterministic_actor_loss_grad, min_q_and_action_grad, q_and_action_grad, sac_actor_loss_grad, Algorithm,
    Learner, LearnerConfig,
};
use reservoir_rl::gradcheck::{central_differences, first_mismatch};
use reservoir_rl::{Activation, Matrix, Mlp, OutputSquash};

const OBS: usize = 12;
const EPS: f64 = 1e-5;
const REL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect())
}

fn learner(algorithm: Algorithm, seed: u64) -> Learner {
    Learner::new(LearnerConfig { algorithm, seed, ..Default::default() }, OBS).unwrap()
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    if let Some(m) = first_mismatch(analytic, numeric, REL, FLOOR) {
        panic!("{what}: parameter {} analytic {} numeric {}", m.index, m.analytic, m.numeric);
    }
}

#[test]
fn critic_gradients_match_finite_differences() {
    for seed in 0..5 {
        let l = learner(Algorithm::Td3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (obs, act) = (random_matrix(&mut rng, 6, OBS, 1.0), random_matrix(&mut rng, 6, 1, 1.0));
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let critic = l.critics()[0].clone();
        let (_, g, _) = critic_loss_grad(&critic, &obs, &act, &y, 1.0 / 6.0).unwrap();
        let mut probe = critic.clone();
        let numeric = central_differences(&mut probe.params.clone(), EPS, |p| {
            probe.params.copy_from_slice(p);
            critic_loss_grad(&probe, &obs, &act, &y, 1.0 / 6.0).unwrap().0
        });
        assert_close(&g, &numeric, "critic");
    }
}

#[test]
fn deterministic_actor_gradients_match_finite_differences() {
    for seed in 0..5 {
        let l = learner(Algorithm::Ddpg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let obs = random_matrix(&mut rng, 5, OBS, 1.0);
        let (actor, critic) = (l.actor().clone(), l.critics()[0].clone());
        let loss = |a: &Mlp| deterministic_actor_loss_grad(a, &obs, 0.2, |x| q_and_action_grad(&critic, &obs, x)).unwrap();
        let (_, g) = loss(&actor);
        let mut probe = actor.clone();
        let numeric = central_differences(&mut actor.params.clone(), EPS, |p| {
            probe.params.copy_from_slice(p);
            loss(&probe).0
        });
        assert_close(&g, &numeric, "actor");
    }
}

#[test]
fn sac_actor_gradients_match_finite_differences() {
    for seed in 0..5 {
        let l = learner(Algorithm::Sac, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let obs = random_matrix(&mut rng, 5, OBS, 1.0);
        let eps: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (actor, critics) = (l.actor().clone(), l.critics().to_vec());
        let loss = |a: &Mlp| {
            sac_actor_loss_grad(a, &obs, &eps, 0.2, (-5.0, 2.0), 0.2, |x| min_q_and_action_grad(&critics, &obs, x)).unwrap()
        };
        let (_, g) = loss(&actor);
        let mut probe = actor.clone();
        let numeric = central_differences(&mut actor.params.clone(), EPS, |p| {
            probe.params.copy_from_slice(p);
            loss(&probe).0
        });
        assert_close(&g, &numeric, "sac actor");
    }
}

#[test]
fn relu_and_squashed_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = Mlp::init(&[4, 9, 7, 3], &[Activation::Relu, Activation::Tanh, Activation::Linear], OutputSquash::Tanh, 1.0, &mut rng).unwrap();
    let x = random_matrix(&mut rng, 3, 4, 2.0);
    let w = random_matrix(&mut rng, 3, 3, 1.0);
    let loss = |n: &Mlp| {
        let y = n.forward(&x).unwrap();
        y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, g) = reservoir_rl::nn::grad(&net, &x, |_| (0.0, w.clone())).unwrap();
    let mut probe = net.clone();
    let numeric = central_differences(&mut net.params.clone(), EPS, |p| {
        probe.params.copy_from_slice(p);
        loss(&probe)
    });
    assert_close(&g, &numeric, "relu net");
}

#[test]
fn zero_critic_gives_zero_actor_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let obs = random_matrix(&mut rng, 4, OBS, 1.0);
    let zero = Mlp::zeros(&[OBS + 1, 64, 64, 1], &[Activation::Tanh, Activation::Tanh, Activation::Linear], OutputSquash::None).unwrap();
    for algorithm in [Algorithm::Ddpg, Algorithm::Sac] {
        let l = learner(algorithm, 1);
        let eps = vec![0.3, -1.0, 0.0, 2.0];
        let (loss, g) = match algorithm {
            Algorithm::Sac => {
                sac_actor_loss_grad(l.actor(), &obs, &eps, 0.0, (-5.0, 2.0), 0.25, |a| q_and_action_grad(&zero, &obs, a)).unwrap()
            }
            _ => deterministic_actor_loss_grad(l.actor(), &obs, 0.25, |a| q_and_action_grad(&zero, &obs, a)).unwrap(),
        };
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }
}

/// With `Q(s, a) = -(a - 3)^2` and an actor that is a single unsquashed bias,
/// gradient descent on the actor loss drives the action to 3.
#[test]
fn quadratic_critic_drives_constant_actor_to_its_maximum() {
    let mut actor = Mlp::zeros(&[1, 1], &[Activation::Linear], OutputSquash::None).unwrap();
    let obs = Matrix::from_vec(4, 1, vec![0.0; 4]);
    for _ in 0..500 {
        let (_, g) = deterministic_actor_loss_grad(&actor, &obs, 0.25, |a| {
            let q = a.data.iter().map(|x| -(x - 3.0).powi(2)).collect();
            let dq = Matrix::from_vec(a.rows, 1, a.data.iter().map(|x| -2.0 * (x - 3.0)).collect());
            Ok((q, dq))
        })
        .unwrap();
        for (p, gi) in actor.params.iter_mut().zip(&g) {
            *p -= 0.05 * gi;
        }
    }
    assert!((actor.forward_one(&[0.0]).unwrap()[0] - 3.0).abs() < 1e-9);
}
