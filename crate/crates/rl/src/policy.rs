//! Trained actors as simulator policies, stored as versioned JSON.

use std::fs;
use std::path::Path;

use reservoir_core::env::Action;
use reservoir_core::policy::{Observation, Policy};
use serde::{Deserialize, Serialize};

use crate::algo::{greedy_action, Algorithm};
use crate::nn::Mlp;
use crate::task::DamFeatures;
use crate::{Result, RlError};

pub const POLICY_FORMAT: &str = "reservoir-policy";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub format: String,
    pub version: u32,
    pub algorithm: Algorithm,
    pub features: DamFeatures,
    pub actor: Mlp,
    pub seed: u64,
    pub steps: usize,
}

impl TrainedPolicy {
    pub fn new(algorithm: Algorithm, features: DamFeatures, actor: Mlp, seed: u64, steps: usize) -> Result<Self> {
        let p = Self { format: POLICY_FORMAT.into(), version: POLICY_VERSION, algorithm, features, actor, seed, steps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != POLICY_FORMAT || self.version != POLICY_VERSION {
            return Err(RlError::Config(format!("unsupported policy document {} v{}", self.format, self.version)));
        }
        self.actor.validate()?;
        if self.actor.input_dim() != self.features.dim() {
            return Err(RlError::Shape(format!(
                "actor takes {} inputs, features produce {}",
                self.actor.input_dim(),
                self.features.dim()
            )));
        }
        let outputs = if self.algorithm == Algorithm::Sac { 2 } else { 1 };
        if self.actor.output_dim() != outputs {
            return Err(RlError::Shape(format!("{} actor must have {outputs} outputs", self.algorithm.tag())));
        }
        Ok(())
    }

    /// Normalized action in `[-1, 1]` for an encoded observation.
    pub fn normalized_action(&self, features: &[f64]) -> Result<f64> {
        greedy_action(self.algorithm, &self.actor, features)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl Policy for TrainedPolicy {
    fn act(&mut self, obs: &Observation<'_>, _explore: bool) -> Action {
        let f = self.features.encode(obs);
        // A validated actor with finite parameters yields finite actions.
        let a = self.normalized_action(&f).expect("validated actor produces a finite action");
        Action { discharge: self.features.discharge(a) }
    }

    fn name(&self) -> String {
        self.algorithm.tag().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, OutputSquash};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use reservoir_core::{SimParams, StageStorageCurve};

    fn features() -> DamFeatures {
        DamFeatures::new(&SimParams::default(), &StageStorageCurve::default(), 100.0).unwrap()
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let f = features();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let actor = Mlp::init(&[f.dim(), 8, 1], &[Activation::Tanh, Activation::Linear], OutputSquash::Tanh, 1.0, &mut rng).unwrap();
        let p = TrainedPolicy::new(Algorithm::Td3, f, actor, 3, 100).unwrap();
        let back = TrainedPolicy::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json(), p.to_json());
    }

    #[test]
    fn rejects_mismatched_documents() {
        let f = features();
        let actor = Mlp::zeros(&[f.dim(), 2], &[Activation::Linear], OutputSquash::None).unwrap();
        assert!(TrainedPolicy::new(Algorithm::Ddpg, f, actor.clone(), 0, 0).is_err());
        assert!(TrainedPolicy::new(Algorithm::Sac, f, actor, 0, 0).is_ok());
        let mut doc: serde_json::Value = serde_json::from_str(
            &TrainedPolicy::new(Algorithm::Sac, f, Mlp::zeros(&[f.dim(), 2], &[Activation::Linear], OutputSquash::None).unwrap(), 0, 0)
                .unwrap()
                .to_json(),
        )
        .unwrap();
        doc["version"] = 99.into();
        assert!(TrainedPolicy::from_json(&doc.to_string()).is_err());
    }
}
