//! Seeded synthetic data with planted ground truth, used to validate the
//! ranking pipeline and the perturbational model at desk scale.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{CellExpressionMatrix, ConditionDataset, GenePanel, NormState, Role, StudyCollection};
use crate::perturb::{combination_id, TrainSample};

/// Planted-ranking generator parameters. Conditions live on a 1-D axis:
/// position 1.0 is the target phenotype, and a condition's cells are
/// base + p * signature + noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_genes: usize,
    pub n_signature_genes: usize,
    pub cells_per_condition: usize,
    /// Query positions on the axis, each in [0, 1]; must include 1.0.
    pub positions: Vec<f64>,
    pub effect_size: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_genes == 0 || self.cells_per_condition == 0 {
            return Err(Error::InvalidArgument(
                "n_genes and cells_per_condition must be positive".into(),
            ));
        }
        if self.n_signature_genes == 0 || self.n_signature_genes > self.n_genes {
            return Err(Error::InvalidArgument(
                "n_signature_genes must be in 1..=n_genes".into(),
            ));
        }
        if self.positions.is_empty() || self.positions.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidArgument(
                "positions must be nonempty and lie in [0, 1]".into(),
            ));
        }
        if !self.positions.iter().any(|&p| p == 1.0) {
            return Err(Error::InvalidArgument(
                "positions must include the target position 1.0".into(),
            ));
        }
        if self.effect_size < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(
                "effect_size and noise_sigma must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// A generated study plus its planted ground-truth query order.
#[derive(Clone, Debug)]
pub struct SyntheticStudy {
    pub collection: StudyCollection,
    /// Query ids by ascending |p - 1.0|; ties by condition id.
    pub planted_order: Vec<String>,
}

fn condition_cells(
    base: &Array1<f64>,
    signature: &Array1<f64>,
    p: f64,
    n_cells: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mean = base + &(signature * p);
    let mut values = Array2::zeros((n_cells, base.len()));
    for mut row in values.rows_mut() {
        for (v, &m) in row.iter_mut().zip(mean.iter()) {
            let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            *v = (m + n).max(0.0);
        }
    }
    values
}

/// Raw-count study collection with a planted ranking. The target sits at
/// position 1.0; every positions entry becomes a query.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticStudy> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gene_ids: Vec<String> = (0..spec.n_genes).map(|j| format!("g{j:05}")).collect();
    let base = Array1::from_shape_fn(spec.n_genes, |_| rng.gen_range(1.0..10.0));
    // positive signature restricted to the leading signature genes
    let signature = Array1::from_shape_fn(spec.n_genes, |j| {
        if j < spec.n_signature_genes {
            spec.effect_size * rng.gen_range(0.5..1.0)
        } else {
            0.0
        }
    });

    let make = |id: &str, p: f64, role: Role, rng: &mut ChaCha8Rng| -> Result<ConditionDataset> {
        let values = condition_cells(
            &base,
            &signature,
            p,
            spec.cells_per_condition,
            spec.noise_sigma,
            rng,
        );
        let cell_ids = (0..spec.cells_per_condition)
            .map(|i| format!("{id}:{i}"))
            .collect();
        let matrix =
            CellExpressionMatrix::new(values, gene_ids.clone(), cell_ids, NormState::RawCounts)?;
        ConditionDataset::new(id, matrix, role)
    };

    let target = make("target", 1.0, Role::Target, &mut rng)?;
    let mut queries = Vec::with_capacity(spec.positions.len());
    for (i, &p) in spec.positions.iter().enumerate() {
        queries.push((make(&format!("q{i:02}_p{p:.3}"), p, Role::Query, &mut rng)?, p));
    }
    let mut order: Vec<(f64, String)> = queries
        .iter()
        .map(|(q, p)| ((p - 1.0).abs(), q.condition_id.clone()))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    let planted_order = order.into_iter().map(|(_, id)| id).collect();

    let collection = StudyCollection::new(
        target,
        queries.into_iter().map(|(q, _)| q).collect(),
        GenePanel::new(gene_ids)?,
    )?;
    Ok(SyntheticStudy {
        collection,
        planted_order,
    })
}

/// Parameters of the additive perturbational generator. Conditions are
/// base profile + sum of addon effect vectors + noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationalSpec {
    pub n_genes: usize,
    pub cells_per_condition: usize,
    pub bases: Vec<String>,
    pub addons: Vec<String>,
    /// Held-out combinations: (base id, addon set of size 2 or 3). These are
    /// generated with exactly-additive effects and never enter training.
    pub held_out: Vec<(String, BTreeSet<String>)>,
    pub effect_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PerturbationalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_genes == 0 || self.cells_per_condition == 0 {
            return Err(Error::InvalidArgument(
                "n_genes and cells_per_condition must be positive".into(),
            ));
        }
        if self.bases.is_empty() || self.addons.is_empty() {
            return Err(Error::InvalidArgument(
                "bases and addons must be nonempty".into(),
            ));
        }
        let addon_set: BTreeSet<&str> = self.addons.iter().map(|s| s.as_str()).collect();
        if addon_set.len() != self.addons.len() {
            return Err(Error::InvalidArgument("duplicate addon id".into()));
        }
        for (base, combo) in &self.held_out {
            if !self.bases.contains(base) {
                return Err(Error::UnknownIdentifier(format!("held-out base '{base}'")));
            }
            if !(2..=3).contains(&combo.len()) {
                return Err(Error::InvalidArgument(format!(
                    "held-out combination for '{base}' must have 2 or 3 addons"
                )));
            }
            for a in combo {
                if !addon_set.contains(a.as_str()) {
                    return Err(Error::UnknownIdentifier(format!("held-out addon '{a}'")));
                }
            }
        }
        if self.effect_scale < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(
                "effect_scale and noise_sigma must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Covariate class under which the base condition is recorded.
pub const BASE_COVARIATE: &str = "base";

/// Generated perturbational data: training samples (controls + singles),
/// the same conditions as datasets, held-out combinations, and the ground
/// truth used to build them.
#[derive(Clone, Debug)]
pub struct PerturbationalData {
    pub gene_ids: Vec<String>,
    pub training: Vec<TrainSample>,
    /// Controls and singles as datasets; control id = base id, single id =
    /// combination_id(base, {addon}).
    pub training_conditions: Vec<ConditionDataset>,
    /// Exactly-additive doublet/triplet conditions, role held_out.
    pub held_out: Vec<ConditionDataset>,
    /// Control cells per base, the basal material for prediction.
    pub control_cells: BTreeMap<String, Vec<Array1<f64>>>,
    pub base_profiles: BTreeMap<String, Array1<f64>>,
    pub effects: BTreeMap<String, Array1<f64>>,
}

/// Sparse positive effect vector for one addon.
fn effect_vector(n_genes: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let n_hit = (n_genes / 5).max(2).min(n_genes);
    let idx = rand::seq::index::sample(rng, n_genes, n_hit);
    let mut e = Array1::zeros(n_genes);
    for i in idx {
        e[i] = scale * rng.gen_range(0.5..1.0);
    }
    e
}

fn noisy_cells(
    mean: &Array1<f64>,
    n_cells: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Array1<f64>> {
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    (0..n_cells)
        .map(|_| {
            mean.mapv(|m| {
                let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                (m + n).max(0.0)
            })
        })
        .collect()
}

fn cells_to_dataset(
    id: &str,
    cells: &[Array1<f64>],
    gene_ids: &[String],
    role: Role,
) -> Result<ConditionDataset> {
    let mut values = Array2::zeros((cells.len(), gene_ids.len()));
    for (i, c) in cells.iter().enumerate() {
        values.row_mut(i).assign(c);
    }
    let cell_ids = (0..cells.len()).map(|i| format!("{id}:{i}")).collect();
    let matrix = CellExpressionMatrix::new(
        values,
        gene_ids.to_vec(),
        cell_ids,
        NormState::LogNormalized,
    )?;
    ConditionDataset::new(id, matrix, role)
}

/// Additive perturbational benchmark: training data = controls and singles
/// per base; held-out combinations are exactly additive (plus noise) and
/// carry their ground-truth expression.
pub fn generate_synthetic_perturbational(spec: &PerturbationalSpec) -> Result<PerturbationalData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gene_ids: Vec<String> = (0..spec.n_genes).map(|j| format!("g{j:05}")).collect();

    let mut base_profiles = BTreeMap::new();
    for base in &spec.bases {
        let profile = Array1::from_shape_fn(spec.n_genes, |_| rng.gen_range(1.0..3.0));
        base_profiles.insert(base.clone(), profile);
    }
    let mut effects = BTreeMap::new();
    for addon in &spec.addons {
        effects.insert(
            addon.clone(),
            effect_vector(spec.n_genes, spec.effect_scale, &mut rng),
        );
    }

    let mut training = Vec::new();
    let mut training_conditions = Vec::new();
    let mut control_cells = BTreeMap::new();
    for base in &spec.bases {
        let profile = &base_profiles[base];
        let covariates: BTreeMap<String, String> =
            [(BASE_COVARIATE.to_string(), base.clone())].into_iter().collect();

        let controls = noisy_cells(profile, spec.cells_per_condition, spec.noise_sigma, &mut rng);
        training_conditions.push(cells_to_dataset(base, &controls, &gene_ids, Role::Query)?);
        for cell in &controls {
            training.push(TrainSample {
                cell: cell.clone(),
                perturbations: BTreeSet::new(),
                covariates: covariates.clone(),
            });
        }
        control_cells.insert(base.clone(), controls);

        for addon in &spec.addons {
            let mean = profile + &effects[addon];
            let cells = noisy_cells(&mean, spec.cells_per_condition, spec.noise_sigma, &mut rng);
            let single: BTreeSet<String> = [addon.clone()].into_iter().collect();
            let id = combination_id(base, &single);
            training_conditions.push(cells_to_dataset(&id, &cells, &gene_ids, Role::Query)?);
            for cell in cells {
                training.push(TrainSample {
                    cell,
                    perturbations: single.clone(),
                    covariates: covariates.clone(),
                });
            }
        }
    }

    let mut held_out = Vec::new();
    for (base, combo) in &spec.held_out {
        let mut mean = base_profiles[base].clone();
        for addon in combo {
            mean += &effects[addon];
        }
        let cells = noisy_cells(&mean, spec.cells_per_condition, spec.noise_sigma, &mut rng);
        held_out.push(cells_to_dataset(
            &combination_id(base, combo),
            &cells,
            &gene_ids,
            Role::HeldOut,
        )?);
    }

    Ok(PerturbationalData {
        gene_ids,
        training,
        training_conditions,
        held_out,
        control_cells,
        base_profiles,
        effects,
    })
}
