//! Compositional perturbational autoencoder: model, training, generation,
//! and checkpointing.

pub mod generate;
pub mod model;
pub mod train;

pub use generate::{
    combination_id, generate_combination_grid, predict_condition, validate_held_out,
    BaseCondition, NearestMatch,
};
pub use model::{
    compose_latent, perturbation_label, Activation, AdversaryHead, CovariateClass,
    CovariateVocabulary, Hyperparams, LatentState, Mlp, ModelParams, PerturbationVocabulary,
    PERTURBATION_ATTRIBUTE,
};
pub use train::{
    adversary_grads, adversary_objective, autoencoder_grads, autoencoder_objective, build_batch,
    init_params, train, AeGrads, AdvGrads, BatchData, TrainConfig, TrainOutcome, TrainSample,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model state. JSON with full f64 round-tripping, so save/load
/// is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: ModelParams,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(params: ModelParams, config: TrainConfig) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            params,
            config,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Data(format!("checkpoint serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&json).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("invalid checkpoint: {e}"),
        })?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let data = vec![
            TrainSample {
                cell: array![0.1, 0.2, 0.3],
                perturbations: BTreeSet::new(),
                covariates: BTreeMap::new(),
            },
            TrainSample {
                cell: array![1.0 / 3.0, std::f64::consts::PI, 2f64.sqrt()],
                perturbations: ["A".to_string()].into_iter().collect(),
                covariates: BTreeMap::new(),
            },
        ];
        let hyper = Hyperparams {
            latent_dim: 2,
            hidden_width: 3,
            depth: 1,
        };
        let params = init_params(&data, &hyper, 42).unwrap();
        let ckpt = Checkpoint::new(params, TrainConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, loaded);
    }

    #[test]
    fn wrong_version_rejected() {
        let data = vec![TrainSample {
            cell: array![0.1],
            perturbations: BTreeSet::new(),
            covariates: BTreeMap::new(),
        }];
        let hyper = Hyperparams {
            latent_dim: 1,
            hidden_width: 2,
            depth: 1,
        };
        let params = init_params(&data, &hyper, 0).unwrap();
        let mut ckpt = Checkpoint::new(params, TrainConfig::default());
        ckpt.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
