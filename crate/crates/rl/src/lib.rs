//! Actor-critic learners for continuous reservoir control.
//!
//! * [`nn`]: flat-parameter MLPs with batched forward and reverse-mode passes.
//! * [`gradcheck`]: finite-difference gradient checks.
//! * [`scenario`]: train and test simulators built from one dataset.
//! * [`optim`]: SGD and Adam over flat parameter vectors.
//! * [`replay`]: uniform ring-buffer experience replay.
//! * [`algo`]: DDPG, TD3 and SAC targets, losses and the [`algo::Learner`].
//! * [`task`]: the environment interface, a 1-D toy task and the dam task.
//! * [`policy`]: serialized trained policies usable by the simulator.
//! * [`train`]: the training loop with periodic evaluation.

pub mod algo;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod policy;
pub mod replay;
pub mod scenario;
pub mod task;
pub mod train;

use thiserror::Error;

pub use algo::{Algorithm, Learner, LearnerConfig};
pub use nn::{Activation, Matrix, Mlp, OutputSquash};
pub use policy::TrainedPolicy;
pub use task::{DamFeatures, DamTask, Environment, ToyEnv};
pub use train::{train, LearningCurve, TrainOutput};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("replay buffer holds {len} transitions, batch needs {batch}")]
    NotEnoughSamples { len: usize, batch: usize },
    #[error("training aborted at step {step}: {reason}")]
    Aborted { step: usize, reason: String, curve: LearningCurve },
    #[error("environment: {0}")]
    Env(#[from] reservoir_core::env::EnvError),
    #[error("policy document: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RlError>;
