//! Randomized invariant checks on the core numeric routines.

use ndarray::Array2;
use proptest::prelude::*;

use modelmatch::distance::{emd_distance, l2_pseudobulk_distance};
use modelmatch::expr::{CellExpressionMatrix, ConditionDataset, NormState, Role};
use modelmatch::io::{ingest_dense_csv, write_dense_csv};
use modelmatch::ranking::score_metric;

fn dataset(id: &str, rows: &[Vec<f64>]) -> ConditionDataset {
    let n = rows.len();
    let d = rows[0].len();
    let values = Array2::from_shape_fn((n, d), |(i, j)| rows[i][j]);
    let genes = (0..d).map(|j| format!("g{j}")).collect();
    let cells = (0..n).map(|i| format!("{id}:{i}")).collect();
    let m = CellExpressionMatrix::new(values, genes, cells, NormState::LogNormalized).unwrap();
    ConditionDataset::new(id, m, Role::Query).unwrap()
}

fn cloud() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5, 1usize..4).prop_flat_map(|(n, d)| {
        proptest::collection::vec(proptest::collection::vec(0.0..3.0f64, d), n)
    })
}

fn paired_clouds() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(nx, ny, d)| {
        (
            proptest::collection::vec(proptest::collection::vec(0.0..3.0f64, d), nx),
            proptest::collection::vec(proptest::collection::vec(0.0..3.0f64, d), ny),
        )
    })
}

proptest! {
    #[test]
    fn emd_is_symmetric_with_valid_flows((xs, ys) in paired_clouds()) {
        let x = dataset("x", &xs);
        let y = dataset("y", &ys);
        let (dxy, fxy) = emd_distance(&x, &y, 100, 0).unwrap();
        let (dyx, _) = emd_distance(&y, &x, 100, 0).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert!((dxy - dyx).abs() < 1e-9);
        // flow marginals are the two uniform empirical distributions and the
        // flow cost reproduces the reported distance
        let cost = Array2::from_shape_fn((ys.len(), xs.len()), |(i, j)| {
            ys[i].iter()
                .zip(&xs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        });
        prop_assert!(fxy.validate(&cost).is_ok());
        prop_assert!((fxy.cost - dxy).abs() < 1e-9);
    }

    #[test]
    fn emd_self_distance_is_zero(xs in cloud()) {
        let x = dataset("x", &xs);
        let (d, _) = emd_distance(&x, &x, 100, 0).unwrap();
        prop_assert!(d.abs() < 1e-9);
    }

    #[test]
    fn emd_dominates_pseudobulk_l2((xs, ys) in paired_clouds()) {
        let x = dataset("x", &xs);
        let y = dataset("y", &ys);
        let (d_emd, _) = emd_distance(&x, &y, 100, 0).unwrap();
        let d_l2 = l2_pseudobulk_distance(&x, &y).unwrap();
        prop_assert!(d_emd >= d_l2 - 1e-9);
    }

    #[test]
    fn score_is_scale_invariant_and_bounded(
        d in proptest::collection::vec(0.01..100.0f64, 2..8),
        c in 0.001..1000.0f64,
    ) {
        let base = score_metric(&d).unwrap().score;
        // 1.0 is the ceiling; inverted orders can push the margin term far
        // below zero, so there is no lower bound
        prop_assert!(base <= 1.0);
        let scaled: Vec<f64> = d.iter().map(|v| v * c).collect();
        let s = score_metric(&scaled).unwrap().score;
        prop_assert!((s - base).abs() < 1e-9);
    }

    #[test]
    fn perfect_order_scores_at_least_half(
        mut d in proptest::collection::vec(0.01..100.0f64, 2..8),
    ) {
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        prop_assume!(d.len() >= 2);
        let report = score_metric(&d).unwrap();
        // all ranks correct, so only the separation margin varies
        prop_assert!(report.score >= 0.5);
        prop_assert_eq!(report.ranks.clone(), report.expected_ranks.clone());
    }

    #[test]
    fn dense_csv_round_trips(
        values in (1usize..5, 1usize..5).prop_flat_map(|(n, d)| {
            proptest::collection::vec(proptest::collection::vec(0u32..1000, d), n)
        }),
    ) {
        let n = values.len();
        let d = values[0].len();
        let m = CellExpressionMatrix::new(
            Array2::from_shape_fn((n, d), |(i, j)| values[i][j] as f64),
            (0..d).map(|j| format!("g{j}")).collect(),
            (0..n).map(|i| format!("c{i}")).collect(),
            NormState::RawCounts,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_dense_csv(&m, &path).unwrap();
        let back = ingest_dense_csv(&path).unwrap();
        prop_assert_eq!(back.gene_ids, m.gene_ids);
        prop_assert_eq!(back.cell_ids, m.cell_ids);
        prop_assert_eq!(back.values, m.values);
    }
}
