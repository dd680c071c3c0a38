//! Dataset-to-dataset distances: pseudobulk L2 and exact Earth Mover's
//! Distance, the four metric/preprocessing variants, pairwise matrices,
//! and per-column min-max normalization.

mod transport;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{ConditionDataset, NormState};

pub use transport::solve_transportation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    L2Pseudobulk,
    Emd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    LogNormalized,
    ZscoredLogNormalized,
}

/// One of the four metric/preprocessing combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistanceMetricSpec {
    pub kind: MetricKind,
    pub preprocessing: Preprocessing,
}

impl DistanceMetricSpec {
    pub const ALL: [DistanceMetricSpec; 4] = [
        DistanceMetricSpec {
            kind: MetricKind::L2Pseudobulk,
            preprocessing: Preprocessing::LogNormalized,
        },
        DistanceMetricSpec {
            kind: MetricKind::L2Pseudobulk,
            preprocessing: Preprocessing::ZscoredLogNormalized,
        },
        DistanceMetricSpec {
            kind: MetricKind::Emd,
            preprocessing: Preprocessing::LogNormalized,
        },
        DistanceMetricSpec {
            kind: MetricKind::Emd,
            preprocessing: Preprocessing::ZscoredLogNormalized,
        },
    ];

    fn check_preprocessing(&self, d: &ConditionDataset) -> Result<()> {
        match self.preprocessing {
            Preprocessing::LogNormalized => d
                .matrix
                .require_state("log_normalized", |s| matches!(s, NormState::LogNormalized)),
            Preprocessing::ZscoredLogNormalized => d
                .matrix
                .require_state("zscored", |s| matches!(s, NormState::Zscored { .. })),
        }
    }
}

impl fmt::Display for DistanceMetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MetricKind::L2Pseudobulk => "l2",
            MetricKind::Emd => "emd",
        };
        let pre = match self.preprocessing {
            Preprocessing::LogNormalized => "log",
            Preprocessing::ZscoredLogNormalized => "zscore",
        };
        write!(f, "{kind}x{pre}")
    }
}

impl FromStr for DistanceMetricSpec {
    type Err = Error;

    /// Parse "l2xlog", "l2xzscore", "emdxlog", or "emdxzscore".
    fn from_str(s: &str) -> Result<Self> {
        let (kind, pre) = s.split_once('x').ok_or_else(|| {
            Error::InvalidArgument(format!(
                "metric must look like <l2|emd>x<log|zscore>, got '{s}'"
            ))
        })?;
        let kind = match kind {
            "l2" => MetricKind::L2Pseudobulk,
            "emd" => MetricKind::Emd,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown metric kind '{other}'"
                )))
            }
        };
        let preprocessing = match pre {
            "log" => Preprocessing::LogNormalized,
            "zscore" => Preprocessing::ZscoredLogNormalized,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown preprocessing '{other}'"
                )))
            }
        };
        Ok(DistanceMetricSpec {
            kind,
            preprocessing,
        })
    }
}

/// Options for the EMD metric: per-side cell cap and the subsampling seed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EmdConfig {
    pub max_cells: usize,
    pub seed: u64,
}

impl Default for EmdConfig {
    fn default() -> Self {
        EmdConfig {
            max_cells: 1000,
            seed: 0,
        }
    }
}

/// Optimal transport plan between two cell sets with uniform marginals.
#[derive(Clone, Debug)]
pub struct FlowMatrix {
    /// n_y x n_x flows; row i sums to 1/n_y, column j to 1/n_x.
    pub flows: Array2<f64>,
    pub cost: f64,
}

impl FlowMatrix {
    /// Check uniform marginals and cost consistency against a cost matrix.
    pub fn validate(&self, cost: &Array2<f64>) -> Result<()> {
        let (ny, nx) = self.flows.dim();
        for i in 0..ny {
            if (self.flows.row(i).sum() - 1.0 / ny as f64).abs() > 1e-9 {
                return Err(Error::Solver(format!("flow row {i} marginal violated")));
            }
        }
        for j in 0..nx {
            if (self.flows.column(j).sum() - 1.0 / nx as f64).abs() > 1e-9 {
                return Err(Error::Solver(format!("flow column {j} marginal violated")));
            }
        }
        let recomputed = (&self.flows * cost).sum();
        if (recomputed - self.cost).abs() > 1e-9 * self.cost.max(1.0) {
            return Err(Error::Solver("flow cost inconsistent".into()));
        }
        Ok(())
    }
}

fn check_comparable(x: &ConditionDataset, y: &ConditionDataset) -> Result<()> {
    if x.matrix.gene_ids != y.matrix.gene_ids {
        return Err(Error::GeneMismatch(format!(
            "conditions '{}' and '{}' have different gene orders",
            x.condition_id, y.condition_id
        )));
    }
    if x.matrix.norm_state != y.matrix.norm_state {
        return Err(Error::NormState {
            expected: x.matrix.norm_state.label().to_string(),
            found: y.matrix.norm_state.label().to_string(),
        });
    }
    Ok(())
}

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean norm of the difference of pseudobulk vectors.
pub fn l2_pseudobulk_distance(x: &ConditionDataset, y: &ConditionDataset) -> Result<f64> {
    check_comparable(x, y)?;
    let px = x.pseudobulk()?;
    let py = y.pseudobulk()?;
    Ok(euclidean(px.view(), py.view()))
}

/// Exact optimal-transport cost between uniform distributions over the two
/// cell sets, with Euclidean ground metric. A side with more than
/// `max_cells` cells is first subsampled deterministically.
pub fn emd_distance(
    x: &ConditionDataset,
    y: &ConditionDataset,
    max_cells: usize,
    seed: u64,
) -> Result<(f64, FlowMatrix)> {
    check_comparable(x, y)?;
    if max_cells == 0 {
        return Err(Error::InvalidArgument("max_cells must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xv = cap_cells(&x.matrix.values, max_cells, &mut rng);
    let yv = cap_cells(&y.matrix.values, max_cells, &mut rng);
    let (nx, ny) = (xv.nrows(), yv.nrows());

    let mut cost = Array2::<f64>::zeros((ny, nx));
    for i in 0..ny {
        for j in 0..nx {
            cost[[i, j]] = euclidean(yv.row(i), xv.row(j));
        }
    }
    let supply = vec![1.0 / ny as f64; ny];
    let demand = vec![1.0 / nx as f64; nx];
    let flows = solve_transportation(&cost, &supply, &demand)?;
    let total = (&flows * &cost).sum();
    let flow = FlowMatrix { flows, cost: total };
    flow.validate(&cost)?;
    Ok((total, flow))
}

fn cap_cells(values: &Array2<f64>, max_cells: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    if values.nrows() <= max_cells {
        values.clone()
    } else {
        let mut idx = rand::seq::index::sample(rng, values.nrows(), max_cells).into_vec();
        idx.sort_unstable();
        values.select(ndarray::Axis(0), &idx)
    }
}

/// Dispatch to the metric named by `spec`, checking that both datasets carry
/// the preprocessing that metric variant demands.
pub fn dataset_distance(
    x: &ConditionDataset,
    y: &ConditionDataset,
    spec: &DistanceMetricSpec,
    emd: &EmdConfig,
) -> Result<f64> {
    spec.check_preprocessing(x)?;
    spec.check_preprocessing(y)?;
    match spec.kind {
        MetricKind::L2Pseudobulk => l2_pseudobulk_distance(x, y),
        MetricKind::Emd => emd_distance(x, y, emd.max_cells, emd.seed).map(|(d, _)| d),
    }
}

/// Matrix of distances between two condition lists.
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: Array2<f64>,
    pub metric: DistanceMetricSpec,
    pub normalized: bool,
}

impl DistanceMatrix {
    /// Per-column min-max normalization to [0, 1]; a constant column maps
    /// to all zeros.
    pub fn normalize_columns_minmax(mut self) -> Result<DistanceMatrix> {
        if self.normalized {
            return Err(Error::InvalidArgument(
                "distance matrix is already normalized".into(),
            ));
        }
        for mut col in self.values.columns_mut() {
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = max - min;
            if span > 0.0 {
                col.mapv_inplace(|v| (v - min) / span);
            } else {
                col.fill(0.0);
            }
        }
        self.normalized = true;
        Ok(self)
    }
}

/// Distances between every row condition and every column condition.
pub fn pairwise_distance_matrix(
    rows: &[ConditionDataset],
    cols: &[ConditionDataset],
    spec: &DistanceMetricSpec,
    emd: &EmdConfig,
) -> Result<DistanceMatrix> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::EmptyDataset(
            "pairwise distance matrix needs nonempty row and column lists".into(),
        ));
    }
    let mut values = Array2::<f64>::zeros((rows.len(), cols.len()));
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            values[[i, j]] = dataset_distance(r, c, spec, emd)?;
        }
    }
    Ok(DistanceMatrix {
        row_ids: rows.iter().map(|d| d.condition_id.clone()).collect(),
        col_ids: cols.iter().map(|d| d.condition_id.clone()).collect(),
        values,
        metric: *spec,
        normalized: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{CellExpressionMatrix, Role};
    use ndarray::array;

    fn dataset(id: &str, values: Array2<f64>, state: NormState) -> ConditionDataset {
        let genes = (0..values.ncols()).map(|j| format!("g{j}")).collect();
        let cells = (0..values.nrows()).map(|i| format!("{id}:{i}")).collect();
        let m = CellExpressionMatrix::new(values, genes, cells, state).unwrap();
        ConditionDataset::new(id, m, Role::Query).unwrap()
    }

    fn log_ds(id: &str, values: Array2<f64>) -> ConditionDataset {
        dataset(id, values, NormState::LogNormalized)
    }

    #[test]
    fn l2_hand_example() {
        let x = log_ds("x", array![[0.0, 0.0], [2.0, 2.0]]);
        let y = log_ds("y", array![[4.0, 3.0]]);
        let d = l2_pseudobulk_distance(&x, &y).unwrap();
        assert!((d - 13f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn l2_identity_and_symmetry() {
        let x = log_ds("x", array![[1.0, 2.0], [0.5, 0.0]]);
        let y = log_ds("y", array![[3.0, 0.0]]);
        assert_eq!(l2_pseudobulk_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(
            l2_pseudobulk_distance(&x, &y).unwrap(),
            l2_pseudobulk_distance(&y, &x).unwrap()
        );
    }

    #[test]
    fn l2_gene_mismatch_errors() {
        let x = log_ds("x", array![[1.0]]);
        let mut y = log_ds("y", array![[1.0]]);
        y.matrix.gene_ids = vec!["other".into()];
        assert!(matches!(
            l2_pseudobulk_distance(&x, &y),
            Err(Error::GeneMismatch(_))
        ));
    }

    #[test]
    fn emd_identical_single_cells() {
        let x = log_ds("x", array![[1.0, 2.0]]);
        let y = log_ds("y", array![[1.0, 2.0]]);
        let (d, _) = emd_distance(&x, &y, 1000, 0).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn emd_unit_shift() {
        let x = log_ds("x", array![[0.0]]);
        let y = log_ds("y", array![[1.0]]);
        let (d, _) = emd_distance(&x, &y, 1000, 0).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn emd_two_point_hand_example() {
        // {0, 1} vs {1, 2} with uniform mass: cost 1
        let x = log_ds("x", array![[0.0], [1.0]]);
        let y = log_ds("y", array![[1.0], [2.0]]);
        let (d, flow) = emd_distance(&x, &y, 1000, 0).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
        assert_eq!(flow.flows.dim(), (2, 2));
    }

    #[test]
    fn emd_cell_permutation_invariant() {
        let x = log_ds("x", array![[0.0, 1.0], [3.0, 0.0], [1.0, 1.0]]);
        let xp = log_ds("xp", array![[1.0, 1.0], [0.0, 1.0], [3.0, 0.0]]);
        let y = log_ds("y", array![[2.0, 2.0], [0.0, 0.0]]);
        let (d1, _) = emd_distance(&x, &y, 1000, 0).unwrap();
        let (d2, _) = emd_distance(&xp, &y, 1000, 0).unwrap();
        assert!((d1 - d2).abs() < 1e-9);
    }

    #[test]
    fn emd_cap_is_deterministic() {
        let values = Array2::from_shape_fn((20, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let x = log_ds("x", values);
        let y = log_ds("y", array![[1.0, 2.0, 3.0]]);
        let (d1, _) = emd_distance(&x, &y, 5, 99).unwrap();
        let (d2, _) = emd_distance(&x, &y, 5, 99).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn dispatch_checks_preprocessing() {
        let x = dataset("x", array![[1.0]], NormState::RawCounts);
        let y = dataset("y", array![[1.0]], NormState::RawCounts);
        let spec: DistanceMetricSpec = "l2xlog".parse().unwrap();
        assert!(matches!(
            dataset_distance(&x, &y, &spec, &EmdConfig::default()),
            Err(Error::NormState { .. })
        ));
    }

    #[test]
    fn dispatch_zscored_emd() {
        let state = NormState::Zscored {
            mean: vec![0.0],
            std: vec![1.0],
        };
        let x = dataset("x", array![[0.0]], state.clone());
        let y = dataset("y", array![[1.5]], state);
        let spec: DistanceMetricSpec = "emdxzscore".parse().unwrap();
        let d = dataset_distance(&x, &y, &spec, &EmdConfig::default()).unwrap();
        assert!((d - 1.5).abs() < 1e-9);
    }

    #[test]
    fn metric_spec_round_trips_through_labels() {
        for spec in DistanceMetricSpec::ALL {
            let parsed: DistanceMetricSpec = spec.to_string().parse().unwrap();
            assert_eq!(parsed, spec);
        }
        assert!("l2-log".parse::<DistanceMetricSpec>().is_err());
        assert!("foo xlog".parse::<DistanceMetricSpec>().is_err());
    }

    #[test]
    fn pairwise_zero_diagonal() {
        let a = log_ds("a", array![[1.0, 0.0]]);
        let b = log_ds("b", array![[0.0, 2.0]]);
        let spec: DistanceMetricSpec = "l2xlog".parse().unwrap();
        let rows = vec![a.clone(), b.clone()];
        let m = pairwise_distance_matrix(&rows, &rows, &spec, &EmdConfig::default()).unwrap();
        assert_eq!(m.values[[0, 0]], 0.0);
        assert_eq!(m.values[[1, 1]], 0.0);
    }

    #[test]
    fn pairwise_matches_individual_calls() {
        let rows = vec![
            log_ds("r0", array![[1.0, 0.0]]),
            log_ds("r1", array![[0.0, 1.0]]),
        ];
        let cols = vec![
            log_ds("c0", array![[2.0, 2.0]]),
            log_ds("c1", array![[0.0, 0.0]]),
            log_ds("c2", array![[1.0, 1.0]]),
        ];
        let spec: DistanceMetricSpec = "l2xlog".parse().unwrap();
        let emd = EmdConfig::default();
        let m = pairwise_distance_matrix(&rows, &cols, &spec, &emd).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let d = dataset_distance(&rows[i], &cols[j], &spec, &emd).unwrap();
                assert_eq!(m.values[[i, j]], d);
            }
        }
    }

    #[test]
    fn normalize_columns() {
        let m = DistanceMatrix {
            row_ids: vec!["a".into(), "b".into(), "c".into()],
            col_ids: vec!["x".into(), "y".into()],
            values: array![[2.0, 3.0], [4.0, 3.0], [6.0, 3.0]],
            metric: "l2xlog".parse().unwrap(),
            normalized: false,
        };
        let n = m.normalize_columns_minmax().unwrap();
        assert_eq!(n.values.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        // constant column maps to zeros
        assert_eq!(n.values.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
        assert!(n.normalized);
        assert!(matches!(
            n.normalize_columns_minmax(),
            Err(Error::InvalidArgument(_))
        ));
    }
}
