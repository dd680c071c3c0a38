//! Training: reconstruction objective with an adversarial disentanglement
//! penalty, alternating with adversary classifier updates.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::model::{
    perturbation_label, Activation, AdversaryHead, CovariateClass, CovariateVocabulary,
    Hyperparams, LinearGrad, Mlp, ModelParams, PerturbationVocabulary, PERTURBATION_ATTRIBUTE,
};

/// One training cell with its perturbation set and covariate levels.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub cell: Array1<f64>,
    pub perturbations: BTreeSet<String>,
    pub covariates: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_autoencoder: f64,
    pub lr_adversary: f64,
    /// Weight of the adversarial penalty in the autoencoder objective.
    pub lambda_adversary: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            lr_autoencoder: 1e-2,
            lr_adversary: 1e-2,
            lambda_adversary: 0.1,
            seed: 0,
        }
    }
}

/// A batch in tensor form: expression, perturbation multi-hot, covariate
/// one-hots, and per-adversary-head class targets.
#[derive(Clone, Debug)]
pub struct BatchData {
    pub x: Array2<f64>,
    /// batch x n_perturbations; 1.0 for each applied perturbation
    pub pert_multihot: Array2<f64>,
    /// per covariate class: batch x n_levels one-hot
    pub cov_onehots: Vec<Array2<f64>>,
    /// per adversary head (perturbation head first): class index per sample
    pub targets: Vec<Vec<usize>>,
}

/// Assemble a batch against the model's vocabularies.
pub fn build_batch(params: &ModelParams, samples: &[TrainSample]) -> Result<BatchData> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("empty training batch".into()));
    }
    let b = samples.len();
    let d = params.input_dim;
    let mut x = Array2::zeros((b, d));
    for (i, s) in samples.iter().enumerate() {
        if s.cell.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "sample {i} has {} genes, expected {d}",
                s.cell.len()
            )));
        }
        x.row_mut(i).assign(&s.cell);
    }
    let np = params.perturbations.names.len();
    let mut pert_multihot = Array2::zeros((b, np));
    for (i, s) in samples.iter().enumerate() {
        for p in &s.perturbations {
            let j = params
                .perturbations
                .index(p)
                .ok_or_else(|| Error::UnknownIdentifier(format!("perturbation '{p}'")))?;
            pert_multihot[[i, j]] = 1.0;
        }
    }
    let mut cov_onehots = Vec::with_capacity(params.covariates.classes.len());
    let mut cov_targets: Vec<Vec<usize>> = Vec::new();
    for class in &params.covariates.classes {
        let mut onehot = Array2::zeros((b, class.levels.len()));
        let mut targets = Vec::with_capacity(b);
        for (i, s) in samples.iter().enumerate() {
            let level = s.covariates.get(&class.name).ok_or_else(|| {
                Error::UnknownIdentifier(format!("sample {i} lacks covariate '{}'", class.name))
            })?;
            let j = class.levels.iter().position(|l| l == level).ok_or_else(|| {
                Error::UnknownIdentifier(format!("covariate level '{}={level}'", class.name))
            })?;
            onehot[[i, j]] = 1.0;
            targets.push(j);
        }
        cov_onehots.push(onehot);
        cov_targets.push(targets);
    }
    let pert_head = &params.adversaries[0];
    debug_assert_eq!(pert_head.attribute, PERTURBATION_ATTRIBUTE);
    let mut targets = vec![samples
        .iter()
        .map(|s| {
            let label = perturbation_label(&s.perturbations);
            pert_head
                .classes
                .iter()
                .position(|c| c == &label)
                .ok_or_else(|| Error::UnknownIdentifier(format!("condition class '{label}'")))
        })
        .collect::<Result<Vec<usize>>>()?];
    targets.extend(cov_targets);
    Ok(BatchData {
        x,
        pert_multihot,
        cov_onehots,
        targets,
    })
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn cross_entropy(probs: &Array2<f64>, targets: &[usize]) -> f64 {
    let b = targets.len();
    -targets
        .iter()
        .enumerate()
        .map(|(i, &t)| probs[[i, t]].max(1e-300).ln())
        .sum::<f64>()
        / b as f64
}

/// Gradients of the autoencoder objective for every autoencoder-side tensor.
#[derive(Clone, Debug)]
pub struct AeGrads {
    pub encoder: Vec<LinearGrad>,
    pub decoder: Vec<LinearGrad>,
    pub pert_emb: Array2<f64>,
    pub cov_embs: Vec<Array2<f64>>,
}

impl AeGrads {
    pub fn tensor(&self, params: &ModelParams, name: &str) -> Option<Vec<f64>> {
        fn layer(grads: &[LinearGrad], rest: &str) -> Option<Vec<f64>> {
            let (l, which) = rest.split_once('.')?;
            let l: usize = l.parse().ok()?;
            match which {
                "w" => Some(grads.get(l)?.w.iter().cloned().collect()),
                "b" => Some(grads.get(l)?.b.iter().cloned().collect()),
                _ => None,
            }
        }
        if let Some(rest) = name.strip_prefix("encoder.") {
            return layer(&self.encoder, rest);
        }
        if let Some(rest) = name.strip_prefix("decoder.") {
            return layer(&self.decoder, rest);
        }
        if name == "pert_emb" {
            return Some(self.pert_emb.iter().cloned().collect());
        }
        if let Some(class) = name.strip_prefix("cov_emb.") {
            let idx = params
                .covariates
                .classes
                .iter()
                .position(|c| c.name == class)?;
            return Some(self.cov_embs[idx].iter().cloned().collect());
        }
        None
    }
}

/// Gradients of the adversary objective for every adversary tensor.
#[derive(Clone, Debug)]
pub struct AdvGrads {
    pub heads: Vec<Vec<LinearGrad>>,
}

impl AdvGrads {
    pub fn tensor(&self, params: &ModelParams, name: &str) -> Option<Vec<f64>> {
        let rest = name.strip_prefix("adv.")?;
        let (attr, rest) = rest.split_once('.')?;
        let hi = params.adversaries.iter().position(|h| h.attribute == attr)?;
        let (l, which) = rest.split_once('.')?;
        let l: usize = l.parse().ok()?;
        match which {
            "w" => Some(self.heads[hi][l].w.iter().cloned().collect()),
            "b" => Some(self.heads[hi][l].b.iter().cloned().collect()),
            _ => None,
        }
    }
}

fn forward_recon(params: &ModelParams, batch: &BatchData) -> (f64, Array2<f64>, Array2<f64>) {
    let z = params.encoder.forward(&batch.x);
    let zc = composed_latents(params, batch, &z);
    let xhat = params.decoder.forward(&zc);
    let b = batch.x.nrows() as f64;
    let d = batch.x.ncols() as f64;
    let recon = (&xhat - &batch.x).mapv(|e| e * e).sum() / (b * d);
    (recon, z, zc)
}

fn composed_latents(params: &ModelParams, batch: &BatchData, z: &Array2<f64>) -> Array2<f64> {
    let mut zc = z + &batch.pert_multihot.dot(&params.perturbations.embeddings);
    for (onehot, class) in batch.cov_onehots.iter().zip(&params.covariates.classes) {
        zc = zc + onehot.dot(&class.embeddings);
    }
    zc
}

fn adversary_ce(params: &ModelParams, batch: &BatchData, z: &Array2<f64>) -> f64 {
    params
        .adversaries
        .iter()
        .zip(&batch.targets)
        .map(|(head, targets)| {
            let logits = head.net.forward(z);
            cross_entropy(&softmax_rows(&logits), targets)
        })
        .sum()
}

/// Reconstruction loss minus lambda times the adversary loss, the objective
/// minimized by the autoencoder step.
pub fn autoencoder_objective(params: &ModelParams, batch: &BatchData, lambda: f64) -> f64 {
    let (recon, z, _) = forward_recon(params, batch);
    recon - lambda * adversary_ce(params, batch, &z)
}

/// Summed adversary cross-entropy on detached basal latents, the objective
/// minimized by the adversary step.
pub fn adversary_objective(params: &ModelParams, batch: &BatchData) -> f64 {
    let z = params.encoder.forward(&batch.x);
    adversary_ce(params, batch, &z)
}

/// Analytic gradients of [`autoencoder_objective`]; also returns the
/// objective value and the plain reconstruction loss.
pub fn autoencoder_grads(
    params: &ModelParams,
    batch: &BatchData,
    lambda: f64,
) -> (f64, f64, AeGrads) {
    let b = batch.x.nrows() as f64;
    let d = batch.x.ncols() as f64;
    let (z, enc_cache) = params.encoder.forward_cached(&batch.x);
    let zc = composed_latents(params, batch, &z);
    let (xhat, dec_cache) = params.decoder.forward_cached(&zc);
    let recon = (&xhat - &batch.x).mapv(|e| e * e).sum() / (b * d);

    let g_xhat = (&xhat - &batch.x) * (2.0 / (b * d));
    let (dec_grads, g_zc) = params.decoder.backward(&dec_cache, &g_xhat);
    let pert_emb = batch.pert_multihot.t().dot(&g_zc);
    let cov_embs = batch
        .cov_onehots
        .iter()
        .map(|onehot| onehot.t().dot(&g_zc))
        .collect();

    let mut g_z = g_zc;
    let mut adv_loss = 0.0;
    for (head, targets) in params.adversaries.iter().zip(&batch.targets) {
        let (logits, cache) = head.net.forward_cached(&z);
        let probs = softmax_rows(&logits);
        adv_loss += cross_entropy(&probs, targets);
        let mut g_logits = probs;
        for (i, &t) in targets.iter().enumerate() {
            g_logits[[i, t]] -= 1.0;
        }
        g_logits /= b;
        let (_, g_z_head) = head.net.backward(&cache, &g_logits);
        g_z = g_z - lambda * &g_z_head;
    }
    let (enc_grads, _) = params.encoder.backward(&enc_cache, &g_z);

    let objective = recon - lambda * adv_loss;
    (
        objective,
        recon,
        AeGrads {
            encoder: enc_grads,
            decoder: dec_grads,
            pert_emb,
            cov_embs,
        },
    )
}

/// Analytic gradients of [`adversary_objective`] with respect to the
/// adversary heads.
pub fn adversary_grads(params: &ModelParams, batch: &BatchData) -> (f64, AdvGrads) {
    let b = batch.x.nrows() as f64;
    let z = params.encoder.forward(&batch.x);
    let mut total = 0.0;
    let mut heads = Vec::with_capacity(params.adversaries.len());
    for (head, targets) in params.adversaries.iter().zip(&batch.targets) {
        let (logits, cache) = head.net.forward_cached(&z);
        let probs = softmax_rows(&logits);
        total += cross_entropy(&probs, targets);
        let mut g_logits = probs;
        for (i, &t) in targets.iter().enumerate() {
            g_logits[[i, t]] -= 1.0;
        }
        g_logits /= b;
        let (grads, _) = head.net.backward(&cache, &g_logits);
        heads.push(grads);
    }
    (total, AdvGrads { heads })
}

struct Adam {
    lr: f64,
    t: f64,
    states: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64) -> Self {
        Adam {
            lr,
            t: 0.0,
            states: BTreeMap::new(),
        }
    }

    fn begin_step(&mut self) {
        self.t += 1.0;
    }

    fn apply(&mut self, name: &str, param: &mut [f64], grad: &[f64]) {
        let (m, v) = self
            .states
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        let bc1 = 1.0 - Self::BETA1.powf(self.t);
        let bc2 = 1.0 - Self::BETA2.powf(self.t);
        for ((p, g), (mi, vi)) in param
            .iter_mut()
            .zip(grad.iter())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * g;
            *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean reconstruction loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Initialize model parameters and vocabularies from the training data.
pub fn init_params(
    data: &[TrainSample],
    hyper: &Hyperparams,
    seed: u64,
) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    let input_dim = data[0].cell.len();
    let mut pert_names: BTreeSet<String> = BTreeSet::new();
    let mut condition_labels: BTreeSet<String> = BTreeSet::new();
    let mut cov_levels: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for s in data {
        pert_names.extend(s.perturbations.iter().cloned());
        condition_labels.insert(perturbation_label(&s.perturbations));
        for (class, level) in &s.covariates {
            cov_levels
                .entry(class.clone())
                .or_default()
                .insert(level.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc_dims = vec![input_dim];
    enc_dims.extend(std::iter::repeat(hyper.hidden_width).take(hyper.depth));
    enc_dims.push(hyper.latent_dim);
    let mut dec_dims = vec![hyper.latent_dim];
    dec_dims.extend(std::iter::repeat(hyper.hidden_width).take(hyper.depth));
    dec_dims.push(input_dim);

    let encoder = Mlp::new(&enc_dims, Activation::Identity, &mut rng);
    let decoder = Mlp::new(&dec_dims, Activation::Softplus, &mut rng);

    let pert_names: Vec<String> = pert_names.into_iter().collect();
    let perturbations = PerturbationVocabulary {
        embeddings: Array2::zeros((pert_names.len(), hyper.latent_dim)),
        names: pert_names,
    };
    let covariates = CovariateVocabulary {
        classes: cov_levels
            .into_iter()
            .map(|(name, levels)| {
                let levels: Vec<String> = levels.into_iter().collect();
                CovariateClass {
                    embeddings: Array2::zeros((levels.len(), hyper.latent_dim)),
                    name,
                    levels,
                }
            })
            .collect(),
    };

    let mut adversaries = vec![AdversaryHead {
        attribute: PERTURBATION_ATTRIBUTE.to_string(),
        net: Mlp::new(
            &[hyper.latent_dim, hyper.hidden_width, condition_labels.len()],
            Activation::Identity,
            &mut rng,
        ),
        classes: condition_labels.into_iter().collect(),
    }];
    for class in &covariates.classes {
        adversaries.push(AdversaryHead {
            attribute: class.name.clone(),
            classes: class.levels.clone(),
            net: Mlp::new(
                &[hyper.latent_dim, hyper.hidden_width, class.levels.len()],
                Activation::Identity,
                &mut rng,
            ),
        });
    }

    Ok(ModelParams {
        encoder,
        decoder,
        adversaries,
        perturbations,
        covariates,
        hyper: *hyper,
        input_dim,
    })
}

fn apply_ae_grads(params: &mut ModelParams, grads: &AeGrads, adam: &mut Adam) {
    adam.begin_step();
    let names = params.autoencoder_tensor_names();
    for name in names {
        let g = grads.tensor(params, &name).expect("ae tensor");
        let p = params.tensor_mut(&name).expect("ae tensor");
        adam.apply(&name, p, &g);
    }
}

fn apply_adv_grads(params: &mut ModelParams, grads: &AdvGrads, adam: &mut Adam) {
    adam.begin_step();
    let names = params.adversary_tensor_names();
    for name in names {
        let g = grads.tensor(params, &name).expect("adv tensor");
        let p = params.tensor_mut(&name).expect("adv tensor");
        adam.apply(&name, p, &g);
    }
}

/// Alternating optimization of the autoencoder and the adversary heads.
/// Deterministic given the data order and `cfg.seed`.
pub fn train(data: &[TrainSample], hyper: &Hyperparams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "epochs and batch size must be positive".into(),
        ));
    }
    if !data.iter().any(|s| s.perturbations.is_empty()) {
        return Err(Error::InvalidArgument(
            "training data must contain control samples (empty perturbation set)".into(),
        ));
    }
    let distinct: BTreeSet<String> = data
        .iter()
        .map(|s| perturbation_label(&s.perturbations))
        .collect();
    if cfg.lambda_adversary > 0.0 && distinct.len() < 2 {
        return Err(Error::InvalidArgument(
            "adversarial training needs at least two distinct conditions".into(),
        ));
    }

    let mut params = init_params(data, hyper, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam_ae = Adam::new(cfg.lr_autoencoder);
    let mut adam_adv = Adam::new(cfg.lr_adversary);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_recon = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            let samples: Vec<TrainSample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let batch = build_batch(&params, &samples)?;
            let (_, recon, grads) = autoencoder_grads(&params, &batch, cfg.lambda_adversary);
            apply_ae_grads(&mut params, &grads, &mut adam_ae);
            let (_, adv) = adversary_grads(&params, &batch);
            apply_adv_grads(&mut params, &adv, &mut adam_adv);
            epoch_recon += recon * chunk.len() as f64;
        }
        let mean_recon = epoch_recon / data.len() as f64;
        if !mean_recon.is_finite() || !params.all_finite() {
            return Err(Error::Training {
                epoch,
                message: "non-finite loss or parameters".into(),
            });
        }
        history.push(mean_recon);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}
