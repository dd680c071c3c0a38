//! Expression-matrix data model: quality control, normalization, panel
//! projection, pseudobulking, and gene subsampling.
//!
//! All types are immutable after construction; operations return new values.

use std::collections::{HashMap, HashSet};

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to per-gene standard deviations when z-scoring.
pub const ZSCORE_STD_FLOOR: f64 = 1e-8;

/// Normalization state of a [`CellExpressionMatrix`].
///
/// Z-scored matrices carry the per-gene (mean, std) vectors that produced
/// them; the stored std values are already floored at [`ZSCORE_STD_FLOOR`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NormState {
    RawCounts,
    LogNormalized,
    Zscored { mean: Vec<f64>, std: Vec<f64> },
}

impl NormState {
    pub fn label(&self) -> &'static str {
        match self {
            NormState::RawCounts => "raw_counts",
            NormState::LogNormalized => "log_normalized",
            NormState::Zscored { .. } => "zscored",
        }
    }
}

/// Ordered list of unique gene identifiers restricting an analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenePanel {
    genes: Vec<String>,
}

impl GenePanel {
    pub fn new(genes: Vec<String>) -> Result<Self> {
        if genes.is_empty() {
            return Err(Error::InvalidArgument("gene panel is empty".into()));
        }
        let mut seen = HashSet::new();
        for g in &genes {
            if !seen.insert(g.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate gene '{g}' in panel"
                )));
            }
        }
        Ok(GenePanel { genes })
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }
}

/// Cells x genes nonnegative expression values with identifiers and a
/// normalization state.
#[derive(Clone, Debug, PartialEq)]
pub struct CellExpressionMatrix {
    pub values: Array2<f64>,
    pub gene_ids: Vec<String>,
    pub cell_ids: Vec<String>,
    pub norm_state: NormState,
}

impl CellExpressionMatrix {
    pub fn new(
        values: Array2<f64>,
        gene_ids: Vec<String>,
        cell_ids: Vec<String>,
        norm_state: NormState,
    ) -> Result<Self> {
        if values.nrows() != cell_ids.len() || values.ncols() != gene_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but has {} cell ids and {} gene ids",
                values.nrows(),
                values.ncols(),
                cell_ids.len(),
                gene_ids.len()
            )));
        }
        if matches!(norm_state, NormState::RawCounts | NormState::LogNormalized)
            && values.iter().any(|&v| v < 0.0)
        {
            return Err(Error::Data(format!(
                "negative value in {} matrix",
                norm_state.label()
            )));
        }
        if let NormState::Zscored { mean, std } = &norm_state {
            if mean.len() != gene_ids.len() || std.len() != gene_ids.len() {
                return Err(Error::DimensionMismatch(
                    "zscore statistics do not match gene count".into(),
                ));
            }
        }
        Ok(CellExpressionMatrix {
            values,
            gene_ids,
            cell_ids,
            norm_state,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.ncols()
    }

    /// Number of genes with nonzero expression, per cell.
    pub fn nonzero_genes_per_cell(&self) -> Vec<usize> {
        self.values
            .rows()
            .into_iter()
            .map(|row| row.iter().filter(|&&v| v != 0.0).count())
            .collect()
    }

    /// Retain cells with at least `min_nonzero_genes` nonzero genes.
    /// Cell order is preserved. Idempotent.
    pub fn filter_low_quality_cells(&self, min_nonzero_genes: usize) -> Result<Self> {
        self.require_state("raw_counts", |s| matches!(s, NormState::RawCounts))?;
        let counts = self.nonzero_genes_per_cell();
        let keep: Vec<usize> = (0..self.n_cells())
            .filter(|&i| counts[i] >= min_nonzero_genes)
            .collect();
        if keep.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "all {} cells fall below the QC threshold of {} nonzero genes",
                self.n_cells(),
                min_nonzero_genes
            )));
        }
        Ok(self.select_cells(&keep))
    }

    /// Scale each cell to `scale` total counts, then apply ln(1 + x).
    pub fn log_normalize(&self, scale: f64) -> Result<Self> {
        self.require_state("raw_counts", |s| matches!(s, NormState::RawCounts))?;
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "log-normalization scale must be positive, got {scale}"
            )));
        }
        let mut values = self.values.clone();
        for (i, mut row) in values.rows_mut().into_iter().enumerate() {
            let total: f64 = row.sum();
            if total <= 0.0 {
                return Err(Error::Data(format!(
                    "cell '{}' has zero total count; run QC filtering first",
                    self.cell_ids[i]
                )));
            }
            row.mapv_inplace(|v| (v / total * scale).ln_1p());
        }
        Ok(CellExpressionMatrix {
            values,
            gene_ids: self.gene_ids.clone(),
            cell_ids: self.cell_ids.clone(),
            norm_state: NormState::LogNormalized,
        })
    }

    /// Reorder columns to panel order. Panel genes absent from the matrix are
    /// zero-filled and returned as the second element; genes outside the
    /// panel are dropped. Errors if no panel gene is present at all.
    pub fn project_to_panel(&self, panel: &GenePanel) -> Result<(Self, Vec<String>)> {
        let index: HashMap<&str, usize> = self
            .gene_ids
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let mut missing = Vec::new();
        let mut values = Array2::zeros((self.n_cells(), panel.len()));
        let mut any_present = false;
        for (j, gene) in panel.genes().iter().enumerate() {
            match index.get(gene.as_str()) {
                Some(&src) => {
                    values.column_mut(j).assign(&self.values.column(src));
                    any_present = true;
                }
                None => missing.push(gene.clone()),
            }
        }
        if !any_present {
            return Err(Error::GeneMismatch(
                "no panel gene is present in the matrix".into(),
            ));
        }
        let projected = CellExpressionMatrix {
            values,
            gene_ids: panel.genes().to_vec(),
            cell_ids: self.cell_ids.clone(),
            norm_state: self.norm_state.clone(),
        };
        Ok((projected, missing))
    }

    /// Uniformly sample ceil(fraction * n_genes) gene columns without
    /// replacement, deterministically for a given seed. The selected columns
    /// keep their original relative order.
    pub fn subsample_genes(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "subsampling fraction must be in (0, 1], got {fraction}"
            )));
        }
        let k = ((fraction * self.n_genes() as f64).ceil() as usize).min(self.n_genes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, self.n_genes(), k).into_vec();
        idx.sort_unstable();
        Ok(self.select_genes(&idx))
    }

    /// Column subset by index, preserving normalization state.
    pub fn select_genes(&self, indices: &[usize]) -> Self {
        let values = self.values.select(Axis(1), indices);
        let gene_ids = indices.iter().map(|&j| self.gene_ids[j].clone()).collect();
        let norm_state = match &self.norm_state {
            NormState::Zscored { mean, std } => NormState::Zscored {
                mean: indices.iter().map(|&j| mean[j]).collect(),
                std: indices.iter().map(|&j| std[j]).collect(),
            },
            other => other.clone(),
        };
        CellExpressionMatrix {
            values,
            gene_ids,
            cell_ids: self.cell_ids.clone(),
            norm_state,
        }
    }

    fn select_cells(&self, indices: &[usize]) -> Self {
        CellExpressionMatrix {
            values: self.values.select(Axis(0), indices),
            gene_ids: self.gene_ids.clone(),
            cell_ids: indices.iter().map(|&i| self.cell_ids[i].clone()).collect(),
            norm_state: self.norm_state.clone(),
        }
    }

    /// Per-gene arithmetic mean over cells.
    pub fn pseudobulk(&self) -> Result<Array1<f64>> {
        if self.n_cells() == 0 {
            return Err(Error::EmptyDataset("pseudobulk of an empty matrix".into()));
        }
        Ok(self.values.mean_axis(Axis(0)).expect("nonempty"))
    }

    pub(crate) fn require_state(
        &self,
        expected: &str,
        pred: impl Fn(&NormState) -> bool,
    ) -> Result<()> {
        if pred(&self.norm_state) {
            Ok(())
        } else {
            Err(Error::NormState {
                expected: expected.to_string(),
                found: self.norm_state.label().to_string(),
            })
        }
    }
}

/// Z-score with per-gene statistics pooled over the concatenated cells of all
/// inputs (population std, floored at [`ZSCORE_STD_FLOOR`]). All inputs must
/// be log-normalized with identical gene order.
pub fn zscore_fit_apply(matrices: &[CellExpressionMatrix]) -> Result<Vec<CellExpressionMatrix>> {
    if matrices.is_empty() {
        return Err(Error::EmptyDataset("no matrices to z-score".into()));
    }
    for m in matrices {
        m.require_state("log_normalized", |s| matches!(s, NormState::LogNormalized))?;
        if m.gene_ids != matrices[0].gene_ids {
            return Err(Error::GeneMismatch(
                "gene order differs between matrices passed to z-scoring".into(),
            ));
        }
    }
    let n_genes = matrices[0].n_genes();
    let total_cells: usize = matrices.iter().map(|m| m.n_cells()).sum();
    if total_cells == 0 {
        return Err(Error::EmptyDataset("no cells to z-score".into()));
    }
    let mut mean = Array1::<f64>::zeros(n_genes);
    for m in matrices {
        mean += &m.values.sum_axis(Axis(0));
    }
    mean /= total_cells as f64;
    let mut var = Array1::<f64>::zeros(n_genes);
    for m in matrices {
        for row in m.values.rows() {
            for (j, &v) in row.iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
    }
    var /= total_cells as f64;
    let std: Array1<f64> = var.mapv(|v| v.sqrt().max(ZSCORE_STD_FLOOR));

    let state = NormState::Zscored {
        mean: mean.to_vec(),
        std: std.to_vec(),
    };
    Ok(matrices
        .iter()
        .map(|m| {
            let mut values = m.values.clone();
            for mut row in values.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - mean[j]) / std[j];
                }
            }
            CellExpressionMatrix {
                values,
                gene_ids: m.gene_ids.clone(),
                cell_ids: m.cell_ids.clone(),
                norm_state: state.clone(),
            }
        })
        .collect())
}

/// Role of a condition within a study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Target,
    Query,
    HeldOut,
    InSilico,
}

/// A named condition's cell population.
#[derive(Clone, Debug)]
pub struct ConditionDataset {
    pub condition_id: String,
    pub matrix: CellExpressionMatrix,
    pub role: Role,
}

impl ConditionDataset {
    pub fn new(condition_id: impl Into<String>, matrix: CellExpressionMatrix, role: Role) -> Result<Self> {
        let condition_id = condition_id.into();
        if matrix.n_cells() == 0 {
            return Err(Error::EmptyDataset(format!(
                "condition '{condition_id}' has no cells"
            )));
        }
        Ok(ConditionDataset {
            condition_id,
            matrix,
            role,
        })
    }

    pub fn pseudobulk(&self) -> Result<Array1<f64>> {
        self.matrix.pseudobulk()
    }
}

/// A target condition, its query conditions, and the shared gene panel.
#[derive(Clone, Debug)]
pub struct StudyCollection {
    pub target: ConditionDataset,
    pub queries: Vec<ConditionDataset>,
    pub panel: GenePanel,
}

impl StudyCollection {
    pub fn new(
        target: ConditionDataset,
        queries: Vec<ConditionDataset>,
        panel: GenePanel,
    ) -> Result<Self> {
        let mut ids = HashSet::new();
        ids.insert(target.condition_id.as_str());
        for q in &queries {
            if !ids.insert(q.condition_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate condition id '{}'",
                    q.condition_id
                )));
            }
        }
        for d in std::iter::once(&target).chain(queries.iter()) {
            if d.matrix.gene_ids != panel.genes() {
                return Err(Error::GeneMismatch(format!(
                    "condition '{}' does not share the panel gene order",
                    d.condition_id
                )));
            }
        }
        Ok(StudyCollection {
            target,
            queries,
            panel,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn raw(values: Array2<f64>) -> CellExpressionMatrix {
        let genes = (0..values.ncols()).map(|j| format!("g{j}")).collect();
        let cells = (0..values.nrows()).map(|i| format!("c{i}")).collect();
        CellExpressionMatrix::new(values, genes, cells, NormState::RawCounts).unwrap()
    }

    #[test]
    fn qc_threshold_is_inclusive() {
        // a cell with exactly `min_nonzero_genes` nonzero genes is retained
        let mut values = Array2::zeros((1, 1500));
        values.row_mut(0).fill(1.0);
        let m = raw(values);
        let filtered = m.filter_low_quality_cells(1500).unwrap();
        assert_eq!(filtered.n_cells(), 1);
    }

    #[test]
    fn qc_all_zero_cells_error() {
        let m = raw(Array2::zeros((3, 4)));
        assert!(matches!(
            m.filter_low_quality_cells(1),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn qc_counts_nonzero_genes() {
        let mut values = Array2::zeros((3, 10));
        for j in 0..2 {
            values[[0, j]] = 1.0;
        }
        for j in 0..5 {
            values[[1, j]] = 1.0;
        }
        for j in 0..9 {
            values[[2, j]] = 1.0;
        }
        let m = raw(values);
        let filtered = m.filter_low_quality_cells(5).unwrap();
        assert_eq!(filtered.cell_ids, vec!["c1", "c2"]);
    }

    #[test]
    fn qc_is_idempotent() {
        let mut values = Array2::zeros((3, 10));
        for j in 0..6 {
            values[[0, j]] = 2.0;
            values[[2, j]] = 3.0;
        }
        values[[1, 0]] = 1.0;
        let m = raw(values);
        let once = m.filter_low_quality_cells(4).unwrap();
        let twice = once.filter_low_quality_cells(4).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn log_normalize_hand_example() {
        let m = raw(array![[10.0, 0.0]]);
        let out = m.log_normalize(10.0).unwrap();
        assert!((out.values[[0, 0]] - 11f64.ln()).abs() < 1e-12);
        assert_eq!(out.values[[0, 1]], 0.0);
        assert_eq!(out.norm_state, NormState::LogNormalized);
    }

    #[test]
    fn log_normalize_zero_total_errors() {
        let m = raw(array![[0.0, 0.0]]);
        assert!(matches!(m.log_normalize(1e4), Err(Error::Data(_))));
    }

    #[test]
    fn log_normalize_preserves_equal_cells() {
        let m = raw(array![[1.0, 2.0], [1.0, 2.0]]);
        let out = m.log_normalize(1e4).unwrap();
        assert_eq!(out.values.row(0), out.values.row(1));
    }

    #[test]
    fn project_subset_and_order() {
        let m = raw(array![[1.0, 2.0, 3.0]]);
        let panel = GenePanel::new(vec!["g2".into(), "g0".into()]).unwrap();
        let (p, missing) = m.project_to_panel(&panel).unwrap();
        assert!(missing.is_empty());
        assert_eq!(p.gene_ids, vec!["g2", "g0"]);
        assert_eq!(p.values, array![[3.0, 1.0]]);
    }

    #[test]
    fn project_missing_gene_zero_filled() {
        let m = raw(array![[1.0, 2.0]]);
        let panel = GenePanel::new(vec!["g0".into(), "gX".into()]).unwrap();
        let (p, missing) = m.project_to_panel(&panel).unwrap();
        assert_eq!(missing, vec!["gX"]);
        assert_eq!(p.values, array![[1.0, 0.0]]);
    }

    #[test]
    fn project_disjoint_panel_errors() {
        let m = raw(array![[1.0, 2.0]]);
        let panel = GenePanel::new(vec!["x".into(), "y".into()]).unwrap();
        assert!(matches!(
            m.project_to_panel(&panel),
            Err(Error::GeneMismatch(_))
        ));
    }

    #[test]
    fn zscore_two_cells() {
        let m = CellExpressionMatrix::new(
            array![[0.0], [2.0]],
            vec!["g0".into()],
            vec!["a".into(), "b".into()],
            NormState::LogNormalized,
        )
        .unwrap();
        let out = zscore_fit_apply(&[m]).unwrap();
        // population std of {0, 2} is 1
        assert!((out[0].values[[0, 0]] + 1.0).abs() < 1e-12);
        assert!((out[0].values[[1, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zscore_constant_gene_maps_to_zero() {
        let m = CellExpressionMatrix::new(
            array![[3.0], [3.0]],
            vec!["g0".into()],
            vec!["a".into(), "b".into()],
            NormState::LogNormalized,
        )
        .unwrap();
        let out = zscore_fit_apply(&[m]).unwrap();
        assert_eq!(out[0].values, array![[0.0], [0.0]]);
    }

    #[test]
    fn zscore_twice_errors() {
        let m = CellExpressionMatrix::new(
            array![[0.0], [2.0]],
            vec!["g0".into()],
            vec!["a".into(), "b".into()],
            NormState::LogNormalized,
        )
        .unwrap();
        let out = zscore_fit_apply(&[m]).unwrap();
        assert!(matches!(
            zscore_fit_apply(&out),
            Err(Error::NormState { .. })
        ));
    }

    #[test]
    fn zscore_gene_order_mismatch_errors() {
        let a = CellExpressionMatrix::new(
            array![[0.0, 1.0]],
            vec!["g0".into(), "g1".into()],
            vec!["a".into()],
            NormState::LogNormalized,
        )
        .unwrap();
        let b = CellExpressionMatrix::new(
            array![[0.0, 1.0]],
            vec!["g1".into(), "g0".into()],
            vec!["b".into()],
            NormState::LogNormalized,
        )
        .unwrap();
        assert!(matches!(
            zscore_fit_apply(&[a, b]),
            Err(Error::GeneMismatch(_))
        ));
    }

    #[test]
    fn pooled_zscore_statistics_are_standard() {
        let a = CellExpressionMatrix::new(
            array![[0.0, 5.0], [1.0, 5.0]],
            vec!["g0".into(), "g1".into()],
            vec!["a".into(), "b".into()],
            NormState::LogNormalized,
        )
        .unwrap();
        let b = CellExpressionMatrix::new(
            array![[4.0, 5.0]],
            vec!["g0".into(), "g1".into()],
            vec!["c".into()],
            NormState::LogNormalized,
        )
        .unwrap();
        let out = zscore_fit_apply(&[a, b]).unwrap();
        let pooled: Vec<f64> = out
            .iter()
            .flat_map(|m| m.values.column(0).to_vec())
            .collect();
        let mean: f64 = pooled.iter().sum::<f64>() / pooled.len() as f64;
        let var: f64 =
            pooled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / pooled.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pseudobulk_mean() {
        let m = raw(array![[0.0, 0.0], [2.0, 4.0]]);
        assert_eq!(m.pseudobulk().unwrap(), array![1.0, 2.0]);
    }

    #[test]
    fn pseudobulk_single_cell_identity() {
        let m = raw(array![[1.5, 2.5, 0.0]]);
        assert_eq!(m.pseudobulk().unwrap(), array![1.5, 2.5, 0.0]);
    }

    #[test]
    fn subsample_full_fraction_identity() {
        let m = raw(array![[1.0, 2.0, 3.0]]);
        let out = m.subsample_genes(1.0, 7).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn subsample_half_takes_ceiling() {
        let m = raw(Array2::ones((2, 10)));
        let out = m.subsample_genes(0.5, 3).unwrap();
        assert_eq!(out.n_genes(), 5);
        let out = m.subsample_genes(0.55, 3).unwrap();
        assert_eq!(out.n_genes(), 6);
    }

    #[test]
    fn subsample_is_deterministic_per_seed() {
        let m = raw(Array2::ones((2, 30)));
        let a = m.subsample_genes(0.3, 42).unwrap();
        let b = m.subsample_genes(0.3, 42).unwrap();
        assert_eq!(a.gene_ids, b.gene_ids);
    }

    #[test]
    fn subsample_invalid_fraction_errors() {
        let m = raw(Array2::ones((1, 4)));
        assert!(m.subsample_genes(0.0, 0).is_err());
        assert!(m.subsample_genes(-0.5, 0).is_err());
        assert!(m.subsample_genes(1.5, 0).is_err());
    }

    #[test]
    fn condition_dataset_rejects_empty() {
        let m = CellExpressionMatrix::new(
            Array2::zeros((0, 2)),
            vec!["g0".into(), "g1".into()],
            vec![],
            NormState::RawCounts,
        )
        .unwrap();
        assert!(ConditionDataset::new("x", m, Role::Query).is_err());
    }

    #[test]
    fn pseudobulk_duplication_invariance() {
        // the mean of a duplicated dataset equals the original mean
        let m = raw(array![[1.0, 2.0], [3.0, 6.0]]);
        let mut doubled = ndarray::concatenate![Axis(0), m.values, m.values];
        let dup = CellExpressionMatrix::new(
            doubled.view_mut().to_owned(),
            m.gene_ids.clone(),
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            NormState::RawCounts,
        )
        .unwrap();
        assert_eq!(m.pseudobulk().unwrap(), dup.pseudobulk().unwrap());
    }
}
