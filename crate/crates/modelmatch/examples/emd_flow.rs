//! Exact earth mover's distance between two small cell populations,
//! including the optimal transport plan.

use ndarray::array;

use modelmatch::distance::emd_distance;
use modelmatch::expr::{CellExpressionMatrix, ConditionDataset, NormState, Role};

fn dataset(id: &str, values: ndarray::Array2<f64>) -> modelmatch::Result<ConditionDataset> {
    let genes = (0..values.ncols()).map(|j| format!("g{j}")).collect();
    let cells = (0..values.nrows()).map(|i| format!("{id}:{i}")).collect();
    let m = CellExpressionMatrix::new(values, genes, cells, NormState::LogNormalized)?;
    ConditionDataset::new(id, m, Role::Query)
}

fn main() -> modelmatch::Result<()> {
    // two clusters in x, one shifted cluster in y
    let x = dataset("x", array![[0.0, 0.0], [0.1, 0.0], [2.0, 2.0], [2.1, 2.0]])?;
    let y = dataset("y", array![[1.0, 1.0], [1.1, 1.0], [0.9, 1.1]])?;

    let (d, flow) = emd_distance(&x, &y, 1000, 0)?;
    println!("emd(x, y) = {d:.6}");
    println!("transport plan (rows: y cells, columns: x cells):");
    for (i, row) in flow.flows.rows().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|f| format!("{f:.4}")).collect();
        println!("  y:{i}  [{}]", cells.join(", "));
    }
    println!("row marginals are 1/n_y, column marginals 1/n_x");
    Ok(())
}
