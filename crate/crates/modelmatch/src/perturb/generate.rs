//! In-silico condition generation from a trained model and validation of
//! generated conditions against held-out measurements.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distance::{pairwise_distance_matrix, DistanceMatrix, DistanceMetricSpec, EmdConfig};
use crate::error::{Error, Result};
use crate::expr::{CellExpressionMatrix, ConditionDataset, NormState, Role};
use crate::perturb::model::{compose_latent, LatentState, ModelParams};

/// Control cells serving as basal material for one base condition.
#[derive(Clone, Debug)]
pub struct BaseCondition {
    pub id: String,
    pub cells: Vec<Array1<f64>>,
    pub gene_ids: Vec<String>,
    /// covariate levels shared by all generated cells of this base
    pub covariates: BTreeMap<String, String>,
}

/// Deterministic id of a base plus an addon set: "base+A+B" with addons
/// sorted.
pub fn combination_id(base: &str, addons: &BTreeSet<String>) -> String {
    let mut id = base.to_string();
    for a in addons {
        id.push('+');
        id.push_str(a);
    }
    id
}

/// Sample basal cells, encode, add perturbation and covariate embeddings,
/// decode. Output cells are labeled in-silico and carry log-normalized
/// expression.
#[allow(clippy::too_many_arguments)]
pub fn predict_condition(
    params: &ModelParams,
    condition_id: &str,
    basal_cells: &[Array1<f64>],
    gene_ids: &[String],
    perturbations: &BTreeSet<String>,
    covariates: &BTreeMap<String, String>,
    n_cells: usize,
    replace: bool,
    seed: u64,
) -> Result<ConditionDataset> {
    if basal_cells.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no basal cells for condition '{condition_id}'"
        )));
    }
    if n_cells == 0 {
        return Err(Error::InvalidArgument("n_cells must be positive".into()));
    }
    if gene_ids.len() != params.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "{} gene ids but the model expects {}",
            gene_ids.len(),
            params.input_dim
        )));
    }
    for p in perturbations {
        if params.perturbations.index(p).is_none() {
            return Err(Error::UnknownIdentifier(format!("perturbation '{p}'")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if replace {
        (0..n_cells).map(|_| rng.gen_range(0..basal_cells.len())).collect()
    } else {
        if n_cells > basal_cells.len() {
            return Err(Error::InvalidArgument(format!(
                "requested {n_cells} cells without replacement from {} basal cells",
                basal_cells.len()
            )));
        }
        let mut idx = sample(&mut rng, basal_cells.len(), n_cells).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut values = Array2::<f64>::zeros((picks.len(), params.input_dim));
    for (row, &i) in picks.iter().enumerate() {
        let basal = params.encode(&basal_cells[i])?;
        let state = LatentState {
            basal,
            applied_perturbations: perturbations.clone(),
            applied_covariates: covariates.clone(),
        };
        let z = compose_latent(&state, &params.perturbations, &params.covariates)?;
        values.row_mut(row).assign(&params.decode(&z)?);
    }
    let cell_ids = (0..picks.len())
        .map(|i| format!("{condition_id}:insilico{i}"))
        .collect();
    let matrix = CellExpressionMatrix::new(
        values,
        gene_ids.to_vec(),
        cell_ids,
        NormState::LogNormalized,
    )?;
    ConditionDataset::new(condition_id, matrix, Role::InSilico)
}

/// All addon subsets of the requested orders, sorted for determinism.
fn addon_subsets(addons: &[String], orders: &BTreeSet<usize>) -> Result<Vec<BTreeSet<String>>> {
    for &o in orders {
        if o != 2 && o != 3 {
            return Err(Error::InvalidArgument(format!(
                "combination order {o} not supported (expected 2 or 3)"
            )));
        }
    }
    let mut sorted = addons.to_vec();
    sorted.sort();
    sorted.dedup();
    let n = sorted.len();
    let mut subsets = Vec::new();
    for &order in orders {
        if order == 2 {
            for i in 0..n {
                for j in i + 1..n {
                    subsets.push([sorted[i].clone(), sorted[j].clone()].into_iter().collect());
                }
            }
        } else {
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        subsets.push(
                            [sorted[i].clone(), sorted[j].clone(), sorted[k].clone()]
                                .into_iter()
                                .collect(),
                        );
                    }
                }
            }
        }
    }
    Ok(subsets)
}

/// For every base and every addon subset of a requested order, predict the
/// combined condition unless its id is excluded. Deterministic order: bases
/// as given, subsets sorted.
pub fn generate_combination_grid(
    params: &ModelParams,
    bases: &[BaseCondition],
    addons: &[String],
    orders: &BTreeSet<usize>,
    exclude: &BTreeSet<String>,
    cells_per_condition: usize,
    seed: u64,
) -> Result<Vec<ConditionDataset>> {
    if bases.is_empty() || addons.is_empty() {
        return Err(Error::InvalidArgument(
            "combination grid needs at least one base and one addon".into(),
        ));
    }
    let subsets = addon_subsets(addons, orders)?;
    let mut out = Vec::new();
    let mut counter = 0u64;
    for base in bases {
        for subset in &subsets {
            let id = combination_id(&base.id, subset);
            counter += 1;
            if exclude.contains(&id) {
                continue;
            }
            out.push(predict_condition(
                params,
                &id,
                &base.cells,
                &base.gene_ids,
                subset,
                &base.covariates,
                cells_per_condition,
                true,
                seed.wrapping_add(counter),
            )?);
        }
    }
    Ok(out)
}

/// Per held-out condition, the nearest predicted condition by raw distance.
#[derive(Clone, Debug, PartialEq)]
pub struct NearestMatch {
    pub held_out_id: String,
    pub nearest_predicted_id: String,
    pub distance: f64,
}

/// Pairwise held-out x predicted distances, column-normalized to [0, 1],
/// plus a nearest-match report. Nearest matches come from the raw distances
/// since column normalization is per predicted condition.
pub fn validate_held_out(
    predicted: &[ConditionDataset],
    held_out: &[ConditionDataset],
    spec: &DistanceMetricSpec,
    emd: &EmdConfig,
) -> Result<(DistanceMatrix, Vec<NearestMatch>)> {
    let raw = pairwise_distance_matrix(held_out, predicted, spec, emd)?;
    let matches = raw
        .values
        .rows()
        .into_iter()
        .zip(&raw.row_ids)
        .map(|(row, held_out_id)| {
            let (j, d) = row
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            NearestMatch {
                held_out_id: held_out_id.clone(),
                nearest_predicted_id: raw.col_ids[j].clone(),
                distance: *d,
            }
        })
        .collect();
    Ok((raw.normalize_columns_minmax()?, matches))
}
