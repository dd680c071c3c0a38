//! Report emission: delimited tables (6 decimal places), a JSON run
//! summary, and a small SVG bar chart of the ranking.

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::perturb::NearestMatch;
use crate::ranking::{RankingReport, SweepResult};
use crate::recommend::MedoidSelection;

/// All numeric table values are written with 6 decimal places.
pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_ranking_csv(report: &RankingReport, path: &Path) -> Result<()> {
    let mut out = String::from("rank,condition_id,distance\n");
    for e in &report.entries {
        out.push_str(&format!("{},{},{}\n", e.rank, e.condition_id, fmt6(e.distance)));
    }
    write_text(path, &out)
}

pub fn write_sweep_csv(sweep: &SweepResult, path: &Path) -> Result<()> {
    let mut out = String::from("metric,fraction,mean_score,std_error,repeats,skipped\n");
    for c in &sweep.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.spec,
            fmt6(c.fraction),
            fmt6(c.mean),
            fmt6(c.std_error),
            c.repeats,
            c.skipped
        ));
    }
    write_text(path, &out)
}

pub fn write_metric_comparison_csv(
    comparison: &[(crate::distance::DistanceMetricSpec, f64)],
    path: &Path,
) -> Result<()> {
    let mut out = String::from("rank,metric,area_under_score\n");
    for (i, (spec, area)) in comparison.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", i + 1, spec, fmt6(*area)));
    }
    write_text(path, &out)
}

pub fn write_distance_matrix_csv(matrix: &DistanceMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("condition_id");
    for c in &matrix.col_ids {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (r, row) in matrix.row_ids.iter().zip(matrix.values.rows()) {
        out.push_str(r);
        for v in row {
            out.push(',');
            out.push_str(&fmt6(*v));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_nearest_matches_csv(matches: &[NearestMatch], path: &Path) -> Result<()> {
    let mut out = String::from("held_out_id,nearest_predicted_id,distance\n");
    for m in matches {
        out.push_str(&format!(
            "{},{},{}\n",
            m.held_out_id,
            m.nearest_predicted_id,
            fmt6(m.distance)
        ));
    }
    write_text(path, &out)
}

pub fn write_medoids_json(selection: &MedoidSelection, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(selection)
        .map_err(|e| Error::Data(format!("medoid serialization failed: {e}")))?;
    write_text(path, &json)
}

/// Per-query table of the genes with the largest absolute pseudobulk
/// difference to the target.
#[derive(Clone, Debug, Serialize)]
pub struct GeneContribution {
    pub condition_id: String,
    pub gene_id: String,
    pub target_mean: f64,
    pub query_mean: f64,
    pub abs_difference: f64,
}

pub fn write_contributions_csv(rows: &[GeneContribution], path: &Path) -> Result<()> {
    let mut out = String::from("condition_id,gene_id,target_mean,query_mean,abs_difference\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.condition_id,
            r.gene_id,
            fmt6(r.target_mean),
            fmt6(r.query_mean),
            fmt6(r.abs_difference)
        ));
    }
    write_text(path, &out)
}

/// Run summary. The timestamp is the only non-deterministic field.
pub fn write_summary_json(
    seed: u64,
    config: &impl Serialize,
    outputs: &[String],
    path: &Path,
) -> Result<()> {
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let summary = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": serde_json::to_value(config)
            .map_err(|e| Error::Data(format!("config serialization failed: {e}")))?,
        "outputs": outputs,
        "timestamp": timestamp,
    });
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Data(format!("summary serialization failed: {e}")))?;
    write_text(path, &text)
}

/// Horizontal bar chart of ranking distances, nearest on top.
pub fn write_ranking_svg(report: &RankingReport, path: &Path) -> Result<()> {
    let n = report.entries.len();
    let bar_h = 22;
    let gap = 6;
    let label_w = 180;
    let chart_w = 420;
    let height = n * (bar_h + gap) + gap + 30;
    let max_d = report
        .entries
        .iter()
        .map(|e| e.distance)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" \
         font-family=\"monospace\" font-size=\"12\">\n",
        label_w + chart_w + 80
    );
    svg.push_str(&format!(
        "<text x=\"{label_w}\" y=\"18\">distance to target ({})</text>\n",
        report.metric
    ));
    for (i, e) in report.entries.iter().enumerate() {
        let y = 30 + i * (bar_h + gap);
        let w = ((e.distance / max_d) * chart_w as f64).round() as usize;
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{}\">{}. {}</text>\n",
            y + bar_h - 6,
            e.rank,
            e.condition_id
        ));
        svg.push_str(&format!(
            "<rect x=\"{label_w}\" y=\"{y}\" width=\"{w}\" height=\"{bar_h}\" fill=\"#4878a8\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            label_w + w + 6,
            y + bar_h - 6,
            fmt6(e.distance)
        ));
    }
    svg.push_str("</svg>\n");
    write_text(path, &svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::DistanceMetricSpec;
    use crate::ranking::RankingEntry;

    fn report() -> RankingReport {
        RankingReport {
            metric: DistanceMetricSpec::ALL[0],
            entries: vec![
                RankingEntry {
                    condition_id: "a".into(),
                    distance: 0.1234567,
                    rank: 1,
                },
                RankingEntry {
                    condition_id: "b".into(),
                    distance: 2.0,
                    rank: 2,
                },
                RankingEntry {
                    condition_id: "c".into(),
                    distance: 3.5,
                    rank: 3,
                },
            ],
        }
    }

    #[test]
    fn ranking_table_has_one_row_per_condition() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ranking.csv");
        write_ranking_csv(&report(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "rank,condition_id,distance");
        assert_eq!(lines[1], "1,a,0.123457");
    }

    #[test]
    fn six_decimal_round_trip_within_tolerance() {
        for &v in &[0.12345649, 3.9999996, 1e-7, 123.456789] {
            let parsed: f64 = fmt6(v).parse().unwrap();
            assert!((parsed - v).abs() < 5e-7, "{v} -> {parsed}");
        }
    }

    #[test]
    fn svg_contains_a_bar_per_entry() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ranking.svg");
        write_ranking_svg(&report(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.matches("<rect").count(), 3);
    }
}
