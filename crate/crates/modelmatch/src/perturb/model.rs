//! Feed-forward networks, learned embeddings, and the composed parameter
//! set of the perturbational autoencoder. All math is plain f64 with
//! hand-written backward passes so gradients stay oracle-checkable.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    /// Nonnegativity-enforcing output activation for decoded expression.
    Softplus,
}

fn softplus(x: f64) -> f64 {
    // numerically stable ln(1 + e^x)
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// out x in
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct LinearGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Multi-layer perceptron with tanh hidden activations and a configurable
/// output activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output: Activation,
}

pub struct MlpCache {
    /// activations[0] is the input; activations[l + 1] the output of layer l.
    activations: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(dims: &[usize], output: Activation, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    rng.gen_range(-scale..scale)
                });
                Linear {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut activations = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = activations[l].dot(&layer.w.t()) + &layer.b;
            let a = if l < last {
                z.mapv(f64::tanh)
            } else {
                match self.output {
                    Activation::Identity => z.clone(),
                    Activation::Softplus => z.mapv(softplus),
                }
            };
            pre.push(z);
            activations.push(a);
        }
        let out = activations.last().unwrap().clone();
        (out, MlpCache { activations, pre })
    }

    /// Backpropagate `grad_out` (d loss / d output); returns per-layer
    /// parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> (Vec<LinearGrad>, Array2<f64>) {
        let last = self.layers.len() - 1;
        let mut grads: Vec<LinearGrad> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let gpre = if l == last {
                match self.output {
                    Activation::Identity => g,
                    Activation::Softplus => &g * &cache.pre[l].mapv(sigmoid),
                }
            } else {
                let post = &cache.activations[l + 1];
                &g * &post.mapv(|a| 1.0 - a * a)
            };
            let gw = gpre.t().dot(&cache.activations[l]);
            let gb = gpre.sum_axis(Axis(0));
            g = gpre.dot(&self.layers[l].w);
            grads.push(LinearGrad { w: gw, b: gb });
        }
        grads.reverse();
        (grads, g)
    }
}

/// Ordered perturbation identifiers with one learned latent vector each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationVocabulary {
    pub names: Vec<String>,
    /// n_perturbations x latent_dim
    pub embeddings: Array2<f64>,
}

impl PerturbationVocabulary {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// One covariate class (e.g. batch or donor) with a learned vector per level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateClass {
    pub name: String,
    pub levels: Vec<String>,
    /// n_levels x latent_dim
    pub embeddings: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct CovariateVocabulary {
    pub classes: Vec<CovariateClass>,
}

impl CovariateVocabulary {
    pub fn class(&self, name: &str) -> Option<&CovariateClass> {
        self.classes.iter().find(|c| c.name == name)
    }
}

/// A cell's basal latent plus the perturbations and covariates applied to it.
#[derive(Clone, Debug)]
pub struct LatentState {
    pub basal: Array1<f64>,
    pub applied_perturbations: BTreeSet<String>,
    pub applied_covariates: BTreeMap<String, String>,
}

/// basal + sum of perturbation embeddings + sum of covariate embeddings.
pub fn compose_latent(
    state: &LatentState,
    vocab: &PerturbationVocabulary,
    covs: &CovariateVocabulary,
) -> Result<Array1<f64>> {
    let mut z = state.basal.clone();
    for p in &state.applied_perturbations {
        let idx = vocab
            .index(p)
            .ok_or_else(|| Error::UnknownIdentifier(format!("perturbation '{p}'")))?;
        z += &vocab.embeddings.row(idx);
    }
    for (class, level) in &state.applied_covariates {
        let c = covs
            .class(class)
            .ok_or_else(|| Error::UnknownIdentifier(format!("covariate class '{class}'")))?;
        let idx = c
            .levels
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| {
                Error::UnknownIdentifier(format!("covariate level '{class}={level}'"))
            })?;
        z += &c.embeddings.row(idx);
    }
    Ok(z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub latent_dim: usize,
    pub hidden_width: usize,
    /// number of hidden layers in encoder and decoder
    pub depth: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            latent_dim: 16,
            hidden_width: 64,
            depth: 2,
        }
    }
}

/// Adversary classifier predicting one attribute from the basal latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryHead {
    pub attribute: String,
    pub classes: Vec<String>,
    pub net: Mlp,
}

/// Attribute name of the perturbation adversary head.
pub const PERTURBATION_ATTRIBUTE: &str = "perturbation";

/// Class label of a perturbation set for the adversary.
pub fn perturbation_label(set: &BTreeSet<String>) -> String {
    if set.is_empty() {
        "control".to_string()
    } else {
        set.iter().cloned().collect::<Vec<_>>().join("+")
    }
}

/// All trainable tensors of the model plus its architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub adversaries: Vec<AdversaryHead>,
    pub perturbations: PerturbationVocabulary,
    pub covariates: CovariateVocabulary,
    pub hyper: Hyperparams,
    pub input_dim: usize,
}

impl ModelParams {
    /// Deterministic feed-forward mapping of an expression vector to its
    /// basal latent.
    pub fn encode(&self, cell: &Array1<f64>) -> Result<Array1<f64>> {
        if cell.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "cell has {} genes but the model expects {}",
                cell.len(),
                self.input_dim
            )));
        }
        if cell.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite expression value".into()));
        }
        let x = cell.clone().insert_axis(Axis(0));
        let z = self.encoder.forward(&x);
        Ok(z.index_axis(Axis(0), 0).to_owned())
    }

    /// Decode a latent vector to nonnegative expression.
    pub fn decode(&self, z: &Array1<f64>) -> Result<Array1<f64>> {
        if z.len() != self.hyper.latent_dim {
            return Err(Error::DimensionMismatch(format!(
                "latent has dimension {} but the model expects {}",
                z.len(),
                self.hyper.latent_dim
            )));
        }
        let zb = z.clone().insert_axis(Axis(0));
        let x = self.decoder.forward(&zb);
        Ok(x.index_axis(Axis(0), 0).to_owned())
    }

    /// Names of every trainable tensor, used by optimizers and the
    /// finite-difference gradient check.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.encoder.layers.len() {
            names.push(format!("encoder.{l}.w"));
            names.push(format!("encoder.{l}.b"));
        }
        for l in 0..self.decoder.layers.len() {
            names.push(format!("decoder.{l}.w"));
            names.push(format!("decoder.{l}.b"));
        }
        names.push("pert_emb".to_string());
        for c in &self.covariates.classes {
            names.push(format!("cov_emb.{}", c.name));
        }
        for head in &self.adversaries {
            for l in 0..head.net.layers.len() {
                names.push(format!("adv.{}.{l}.w", head.attribute));
                names.push(format!("adv.{}.{l}.b", head.attribute));
            }
        }
        names
    }

    /// Tensors updated by the autoencoder optimization step.
    pub fn autoencoder_tensor_names(&self) -> Vec<String> {
        self.tensor_names()
            .into_iter()
            .filter(|n| !n.starts_with("adv."))
            .collect()
    }

    /// Tensors updated by the adversary optimization step.
    pub fn adversary_tensor_names(&self) -> Vec<String> {
        self.tensor_names()
            .into_iter()
            .filter(|n| n.starts_with("adv."))
            .collect()
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        fn layer_slice<'a>(mlp: &'a mut Mlp, rest: &str) -> Option<&'a mut [f64]> {
            let (l, which) = rest.split_once('.')?;
            let l: usize = l.parse().ok()?;
            let layer = mlp.layers.get_mut(l)?;
            match which {
                "w" => layer.w.as_slice_mut(),
                "b" => layer.b.as_slice_mut(),
                _ => None,
            }
        }
        if let Some(rest) = name.strip_prefix("encoder.") {
            return layer_slice(&mut self.encoder, rest);
        }
        if let Some(rest) = name.strip_prefix("decoder.") {
            return layer_slice(&mut self.decoder, rest);
        }
        if name == "pert_emb" {
            return self.perturbations.embeddings.as_slice_mut();
        }
        if let Some(class) = name.strip_prefix("cov_emb.") {
            return self
                .covariates
                .classes
                .iter_mut()
                .find(|c| c.name == class)
                .and_then(|c| c.embeddings.as_slice_mut());
        }
        if let Some(rest) = name.strip_prefix("adv.") {
            let (attr, rest) = rest.split_once('.')?;
            let head = self.adversaries.iter_mut().find(|h| h.attribute == attr)?;
            return layer_slice(&mut head.net, rest);
        }
        None
    }

    pub fn all_finite(&self) -> bool {
        let finite2 = |a: &Array2<f64>| a.iter().all(|v| v.is_finite());
        let finite1 = |a: &Array1<f64>| a.iter().all(|v| v.is_finite());
        self.encoder
            .layers
            .iter()
            .chain(self.decoder.layers.iter())
            .chain(self.adversaries.iter().flat_map(|h| h.net.layers.iter()))
            .all(|l| finite2(&l.w) && finite1(&l.b))
            && finite2(&self.perturbations.embeddings)
            && self
                .covariates
                .classes
                .iter()
                .all(|c| finite2(&c.embeddings))
    }
}
