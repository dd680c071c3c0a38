//! File ingestion and emission for expression matrices and gene panels.
//!
//! Dense CSV: first row gene ids, first column cell ids, nonnegative counts.
//! Sparse triplet: header "rows cols nnz", then 1-based "row col value"
//! lines, with sidecar files `<path>.genes` (one gene id per line) and
//! `<path>.cells` (cell id with an optional condition column).

use std::collections::HashSet;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::expr::{CellExpressionMatrix, GenePanel, NormState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngestFormat {
    DenseCsv,
    SparseTriplet,
}

impl std::str::FromStr for IngestFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-csv" | "dense_csv" => Ok(IngestFormat::DenseCsv),
            "sparse-triplet" | "sparse_triplet" => Ok(IngestFormat::SparseTriplet),
            other => Err(Error::InvalidArgument(format!(
                "unknown ingest format '{other}' (expected dense-csv or sparse-triplet)"
            ))),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn parse_count(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("non-numeric entry '{field}'")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(parse_err(path, line, format!("negative or non-finite count '{field}'")));
    }
    Ok(v)
}

fn check_unique(path: &Path, kind: &str, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(parse_err(path, 0, format!("duplicate {kind} id '{id}'")));
        }
    }
    Ok(())
}

/// Parse a dense CSV count matrix. The header row holds gene ids, with an
/// optional corner label above the cell-id column.
pub fn ingest_dense_csv(path: &Path) -> Result<CellExpressionMatrix> {
    let lines = read_lines(path);
    let lines = lines?;
    if lines.is_empty() {
        return Err(parse_err(path, 1, "empty file"));
    }
    let header: Vec<&str> = lines[0].split(',').map(|f| f.trim()).collect();
    if lines.len() < 2 {
        return Err(parse_err(path, 1, "no data rows after the header"));
    }
    let first_row_fields = lines[1].split(',').count();
    // header may or may not carry a corner label above the cell-id column
    let gene_ids: Vec<String> = if first_row_fields == header.len() {
        header[1..].iter().map(|s| s.to_string()).collect()
    } else if first_row_fields == header.len() + 1 {
        header.iter().map(|s| s.to_string()).collect()
    } else {
        return Err(parse_err(
            path,
            2,
            format!(
                "row has {} fields but the header names {} genes",
                first_row_fields,
                header.len()
            ),
        ));
    };
    if gene_ids.is_empty() || gene_ids.iter().any(|g| g.is_empty()) {
        return Err(parse_err(path, 1, "empty gene id in header"));
    }
    check_unique(path, "gene", &gene_ids)?;

    let n_genes = gene_ids.len();
    let mut cell_ids = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines[1..].iter().enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_genes + 1 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} fields, found {}", n_genes + 1, fields.len()),
            ));
        }
        let cell_id = fields[0].trim();
        if cell_id.is_empty() {
            return Err(parse_err(path, line_no, "empty cell id"));
        }
        cell_ids.push(cell_id.to_string());
        for f in &fields[1..] {
            values.push(parse_count(path, line_no, f)?);
        }
    }
    check_unique(path, "cell", &cell_ids)?;
    let values = Array2::from_shape_vec((cell_ids.len(), n_genes), values)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    CellExpressionMatrix::new(values, gene_ids, cell_ids, NormState::RawCounts)
}

fn sidecar(path: &Path, suffix: &str) -> std::path::PathBuf {
    std::path::PathBuf::from(format!("{}.{suffix}", path.display()))
}

/// Parse a sparse triplet count matrix with its `.genes` and `.cells`
/// sidecars. Returns the matrix and the per-cell condition label, if the
/// cells sidecar carries a condition column.
pub fn ingest_sparse_triplet(
    path: &Path,
) -> Result<(CellExpressionMatrix, Vec<Option<String>>)> {
    let lines = read_lines(path)?;
    if lines.is_empty() {
        return Err(parse_err(path, 1, "empty file"));
    }
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    if header.len() != 3 {
        return Err(parse_err(path, 1, "header must be 'rows cols nnz'"));
    }
    let parse_dim = |field: &str| -> Result<usize> {
        field
            .parse()
            .map_err(|_| parse_err(path, 1, format!("invalid header field '{field}'")))
    };
    let n_rows = parse_dim(header[0])?;
    let n_cols = parse_dim(header[1])?;
    let nnz = parse_dim(header[2])?;
    if n_rows == 0 || n_cols == 0 {
        return Err(parse_err(path, 1, "matrix dimensions must be positive"));
    }

    let mut values = Array2::<f64>::zeros((n_rows, n_cols));
    let mut seen = 0usize;
    for (i, line) in lines[1..].iter().enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(path, line_no, "expected 'row col value'"));
        }
        let r: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("invalid row index '{}'", fields[0])))?;
        let c: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("invalid column index '{}'", fields[1])))?;
        if r == 0 || r > n_rows || c == 0 || c > n_cols {
            return Err(parse_err(
                path,
                line_no,
                format!("index ({r}, {c}) out of bounds for {n_rows}x{n_cols}"),
            ));
        }
        values[[r - 1, c - 1]] += parse_count(path, line_no, fields[2])?;
        seen += 1;
    }
    if seen != nnz {
        return Err(parse_err(
            path,
            0,
            format!("header declares {nnz} entries but {seen} were found"),
        ));
    }

    let genes_path = sidecar(path, "genes");
    let gene_ids: Vec<String> = read_lines(&genes_path)?
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if gene_ids.len() != n_cols {
        return Err(parse_err(
            &genes_path,
            0,
            format!("{} gene ids for {n_cols} columns", gene_ids.len()),
        ));
    }
    check_unique(&genes_path, "gene", &gene_ids)?;

    let cells_path = sidecar(path, "cells");
    let mut cell_ids = Vec::new();
    let mut conditions = Vec::new();
    for (i, line) in read_lines(&cells_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(2, ',');
        let id = fields.next().unwrap().trim();
        if id.is_empty() {
            return Err(parse_err(&cells_path, i + 1, "empty cell id"));
        }
        cell_ids.push(id.to_string());
        conditions.push(fields.next().map(|c| c.trim().to_string()));
    }
    if cell_ids.len() != n_rows {
        return Err(parse_err(
            &cells_path,
            0,
            format!("{} cell ids for {n_rows} rows", cell_ids.len()),
        ));
    }
    check_unique(&cells_path, "cell", &cell_ids)?;

    let matrix = CellExpressionMatrix::new(values, gene_ids, cell_ids, NormState::RawCounts)?;
    Ok((matrix, conditions))
}

/// Dispatch on format; sparse condition labels are dropped here.
pub fn ingest(path: &Path, format: IngestFormat) -> Result<CellExpressionMatrix> {
    match format {
        IngestFormat::DenseCsv => ingest_dense_csv(path),
        IngestFormat::SparseTriplet => ingest_sparse_triplet(path).map(|(m, _)| m),
    }
}

/// One gene id per line; blank lines ignored.
pub fn read_gene_panel(path: &Path) -> Result<GenePanel> {
    let genes: Vec<String> = read_lines(path)?
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    GenePanel::new(genes)
}

/// Write a matrix in the dense CSV format read by [`ingest_dense_csv`].
pub fn write_dense_csv(matrix: &CellExpressionMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("cell_id");
    for g in &matrix.gene_ids {
        out.push(',');
        out.push_str(g);
    }
    out.push('\n');
    for (cell_id, row) in matrix.cell_ids.iter().zip(matrix.values.rows()) {
        out.push_str(cell_id);
        for v in row {
            out.push(',');
            if *v == v.trunc() && v.abs() < 1e15 {
                out.push_str(&format!("{}", *v as i64));
            } else {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
