//! Query ranking against the target, the metric quality score, and the
//! gene-subsampling corruption sweep.

use serde::{Deserialize, Serialize};

use crate::distance::{dataset_distance, DistanceMetricSpec, EmdConfig, Preprocessing};
use crate::error::{Error, Result};
use crate::expr::{zscore_fit_apply, ConditionDataset, StudyCollection};

/// Number of trailing repeats over which the running mean must settle.
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankingEntry {
    pub condition_id: String,
    pub distance: f64,
    pub rank: usize,
}

/// Queries ordered by ascending distance to the target; ties broken by
/// condition id.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankingReport {
    pub metric: DistanceMetricSpec,
    pub entries: Vec<RankingEntry>,
}

/// Rank `queries` by distance to `target`.
pub fn rank_against_target(
    target: &ConditionDataset,
    queries: &[ConditionDataset],
    spec: &DistanceMetricSpec,
    emd: &EmdConfig,
) -> Result<RankingReport> {
    if queries.is_empty() {
        return Err(Error::EmptyDataset("no queries to rank".into()));
    }
    let mut scored: Vec<(String, f64)> = queries
        .iter()
        .map(|q| Ok((q.condition_id.clone(), dataset_distance(q, target, spec, emd)?)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    let entries = scored
        .into_iter()
        .enumerate()
        .map(|(i, (condition_id, distance))| RankingEntry {
            condition_id,
            distance,
            rank: i + 1,
        })
        .collect();
    Ok(RankingReport {
        metric: *spec,
        entries,
    })
}

/// Rank a collection's queries against its target.
pub fn rank_queries(
    collection: &StudyCollection,
    spec: &DistanceMetricSpec,
    emd: &EmdConfig,
) -> Result<RankingReport> {
    rank_against_target(&collection.target, &collection.queries, spec, emd)
}

/// Distances, observed and expected rank vectors, and the quality score of
/// one metric evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Distances ordered by expected rank (nearest expected first).
    pub distances: Vec<f64>,
    /// Observed rank of each entry (ascending distance, ties by position).
    pub ranks: Vec<usize>,
    pub expected_ranks: Vec<usize>,
    pub score: f64,
}

/// Score a distance vector that is ordered by expected rank:
/// (fraction of correctly ranked entries + relative separation of the
/// expected-farthest from the expected-nearest) / 2.
pub fn score_metric(distances: &[f64]) -> Result<ScoreReport> {
    let n = distances.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "score needs at least two distances".into(),
        ));
    }
    let d_far = distances[n - 1];
    if d_far <= 0.0 {
        return Err(Error::DegenerateSeparation);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .partial_cmp(&distances[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    let correct = ranks
        .iter()
        .enumerate()
        .filter(|&(i, &r)| r == i + 1)
        .count();
    let separation = (d_far - distances[0]) / d_far;
    let score = (correct as f64 / n as f64 + separation) / 2.0;
    Ok(ScoreReport {
        distances: distances.to_vec(),
        ranks,
        expected_ranks: (1..=n).collect(),
        score,
    })
}

/// Parameters for the corruption-robustness sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorruptionProtocol {
    /// Gene-retention fractions, sorted descending and containing 1.0.
    pub fractions: Vec<f64>,
    pub max_repeats: usize,
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for CorruptionProtocol {
    fn default() -> Self {
        CorruptionProtocol {
            fractions: vec![1.0, 0.8, 0.6, 0.4, 0.2, 0.1],
            max_repeats: 200,
            convergence_tol: 1e-3,
            seed: 0,
        }
    }
}

impl CorruptionProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::InvalidArgument("no corruption fractions".into()));
        }
        if !self.fractions.contains(&1.0) {
            return Err(Error::InvalidArgument(
                "corruption fractions must contain 1.0".into(),
            ));
        }
        if self
            .fractions
            .windows(2)
            .any(|w| w[0] <= w[1])
        {
            return Err(Error::InvalidArgument(
                "corruption fractions must be strictly descending".into(),
            ));
        }
        if self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::InvalidArgument(
                "corruption fractions must lie in (0, 1]".into(),
            ));
        }
        if self.max_repeats == 0 {
            return Err(Error::InvalidArgument("max_repeats must be positive".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "convergence_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mean score of one metric at one corruption fraction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub spec: DistanceMetricSpec,
    pub fraction: f64,
    pub mean: f64,
    pub std_error: f64,
    pub repeats: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Stopping rule: a fraction of 1.0 is deterministic (one repeat); an
/// infinite tolerance converges immediately; otherwise the running mean must
/// move by less than the tolerance across the trailing window.
fn converged(scores: &[f64], tol: f64, fraction: f64) -> bool {
    if fraction == 1.0 || tol.is_infinite() {
        return true;
    }
    let r = scores.len();
    if r <= CONVERGENCE_WINDOW {
        return false;
    }
    (mean(scores) - mean(&scores[..r - CONVERGENCE_WINDOW])).abs() < tol
}

/// Repeatedly subsample genes, recompute distances and the score, and report
/// the per-(spec, fraction) mean score with repeat counts.
///
/// The collection must hold raw counts; each repeat applies the metric
/// variant's preprocessing after corruption. The gene subset of repeat r at fraction
/// index f is seeded with `seed + f * 1_000_003 + r`, so every metric sees
/// the same corrupted panels.
pub fn corruption_sweep(
    collection: &StudyCollection,
    expected_order: &[String],
    specs: &[DistanceMetricSpec],
    protocol: &CorruptionProtocol,
    norm_scale: f64,
    emd: &EmdConfig,
) -> Result<SweepResult> {
    protocol.validate()?;
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no metrics to sweep".into()));
    }
    let mut query_ids: Vec<&str> = collection
        .queries
        .iter()
        .map(|q| q.condition_id.as_str())
        .collect();
    query_ids.sort_unstable();
    let mut expected_ids: Vec<&str> = expected_order.iter().map(|s| s.as_str()).collect();
    expected_ids.sort_unstable();
    if query_ids != expected_ids {
        return Err(Error::InvalidArgument(
            "expected_order must cover exactly the collection's queries".into(),
        ));
    }
    let queries_in_order: Vec<&ConditionDataset> = expected_order
        .iter()
        .map(|id| {
            collection
                .queries
                .iter()
                .find(|q| &q.condition_id == id)
                .expect("checked above")
        })
        .collect();

    let needs_zscore = specs
        .iter()
        .any(|s| s.preprocessing == Preprocessing::ZscoredLogNormalized);
    let n_genes = collection.panel.len();

    let mut cells = Vec::new();
    for (fi, &fraction) in protocol.fractions.iter().enumerate() {
        let mut scores: Vec<Vec<f64>> = vec![Vec::new(); specs.len()];
        let mut skipped = vec![0usize; specs.len()];
        let mut done = vec![false; specs.len()];
        for r in 1..=protocol.max_repeats {
            if done.iter().all(|&d| d) {
                break;
            }
            let subset_seed = protocol
                .seed
                .wrapping_add(fi as u64 * 1_000_003)
                .wrapping_add(r as u64);
            let keep = ((fraction * n_genes as f64).ceil() as usize).min(n_genes);
            if keep < 2 {
                for (si, d) in done.iter().enumerate() {
                    if !d {
                        skipped[si] += 1;
                    }
                }
                continue;
            }
            // same corrupted gene subset for every dataset and metric
            let target_raw = collection
                .target
                .matrix
                .subsample_genes(fraction, subset_seed)?;
            let gene_subset: Vec<String> = target_raw.gene_ids.clone();
            let subset_idx: Vec<usize> = {
                let mut pos = std::collections::HashMap::new();
                for (i, g) in collection.panel.genes().iter().enumerate() {
                    pos.insert(g.as_str(), i);
                }
                gene_subset.iter().map(|g| pos[g.as_str()]).collect()
            };

            let target_log = target_raw.log_normalize(norm_scale)?;
            let mut queries_log = Vec::with_capacity(queries_in_order.len());
            for q in &queries_in_order {
                queries_log.push(
                    q.matrix
                        .select_genes(&subset_idx)
                        .log_normalize(norm_scale)?,
                );
            }

            let (target_z, queries_z) = if needs_zscore {
                let mut all = Vec::with_capacity(queries_log.len() + 1);
                all.push(target_log.clone());
                all.extend(queries_log.iter().cloned());
                let mut z = zscore_fit_apply(&all)?;
                let t = z.remove(0);
                (Some(t), z)
            } else {
                (None, Vec::new())
            };

            for (si, spec) in specs.iter().enumerate() {
                if done[si] {
                    continue;
                }
                let emd_rep = EmdConfig {
                    max_cells: emd.max_cells,
                    seed: subset_seed,
                };
                let result: Result<Vec<f64>> = queries_in_order
                    .iter()
                    .enumerate()
                    .map(|(qi, q)| {
                        let (qm, tm) = match spec.preprocessing {
                            Preprocessing::LogNormalized => (&queries_log[qi], &target_log),
                            Preprocessing::ZscoredLogNormalized => {
                                (&queries_z[qi], target_z.as_ref().unwrap())
                            }
                        };
                        let qd = ConditionDataset {
                            condition_id: q.condition_id.clone(),
                            matrix: qm.clone(),
                            role: q.role,
                        };
                        let td = ConditionDataset {
                            condition_id: collection.target.condition_id.clone(),
                            matrix: tm.clone(),
                            role: collection.target.role,
                        };
                        dataset_distance(&qd, &td, spec, &emd_rep)
                    })
                    .collect();
                match result.and_then(|d| score_metric(&d)) {
                    Ok(report) => {
                        scores[si].push(report.score);
                        if converged(&scores[si], protocol.convergence_tol, fraction) {
                            done[si] = true;
                        }
                    }
                    Err(Error::DegenerateSeparation) => skipped[si] += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        for (si, spec) in specs.iter().enumerate() {
            if scores[si].is_empty() {
                // every repeat hit zero separation: the dataset itself is
                // degenerate for this metric, not merely this fraction
                if skipped[si] > 0 {
                    return Err(Error::DegenerateSeparation);
                }
                return Err(Error::Data(format!(
                    "no usable repeats for metric {spec} at fraction {fraction}"
                )));
            }
            cells.push(SweepCell {
                spec: *spec,
                fraction,
                mean: mean(&scores[si]),
                std_error: std_error(&scores[si]),
                repeats: scores[si].len(),
                skipped: skipped[si],
            });
        }
    }
    Ok(SweepResult { cells })
}

/// Aggregate a sweep into one scalar per metric: the trapezoidal area of the
/// score-vs-fraction curve, sorted descending (ties keep input spec order).
pub fn compare_metrics(sweep: &SweepResult) -> Result<Vec<(DistanceMetricSpec, f64)>> {
    let mut specs: Vec<DistanceMetricSpec> = Vec::new();
    for c in &sweep.cells {
        if !specs.contains(&c.spec) {
            specs.push(c.spec);
        }
    }
    let mut grids: Vec<Vec<f64>> = Vec::new();
    let mut areas = Vec::new();
    for (si, spec) in specs.iter().enumerate() {
        let mut points: Vec<(f64, f64)> = sweep
            .cells
            .iter()
            .filter(|c| c.spec == *spec)
            .map(|c| (c.fraction, c.mean))
            .collect();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        grids.push(points.iter().map(|p| p.0).collect());
        if grids[si] != grids[0] {
            return Err(Error::InvalidArgument(
                "metrics were swept on different fraction grids".into(),
            ));
        }
        let area = if points.len() == 1 {
            points[0].1
        } else {
            points
                .windows(2)
                .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
                .sum()
        };
        areas.push((*spec, area));
    }
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| areas[b].1.partial_cmp(&areas[a].1).unwrap().then(a.cmp(&b)));
    Ok(order.into_iter().map(|i| areas[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{CellExpressionMatrix, NormState, Role};
    use ndarray::Array2;

    fn log_ds(id: &str, row: &[f64]) -> ConditionDataset {
        let values = Array2::from_shape_vec((1, row.len()), row.to_vec()).unwrap();
        let genes = (0..row.len()).map(|j| format!("g{j}")).collect();
        let m = CellExpressionMatrix::new(values, genes, vec![format!("{id}:0")], NormState::LogNormalized)
            .unwrap();
        ConditionDataset::new(id, m, Role::Query).unwrap()
    }

    #[test]
    fn single_query_is_rank_one() {
        let target = log_ds("t", &[0.0, 0.0]);
        let q = log_ds("q", &[9.0, 9.0]);
        let spec = "l2xlog".parse().unwrap();
        let r = rank_against_target(&target, &[q], &spec, &EmdConfig::default()).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].rank, 1);
    }

    #[test]
    fn ranks_sort_ascending() {
        let target = log_ds("t", &[0.0]);
        let qs = vec![log_ds("a", &[5.0]), log_ds("b", &[2.0]), log_ds("c", &[9.0])];
        let spec = "l2xlog".parse().unwrap();
        let r = rank_against_target(&target, &qs, &spec, &EmdConfig::default()).unwrap();
        let ids: Vec<&str> = r.entries.iter().map(|e| e.condition_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "a", "c"]);
        assert_eq!(
            r.entries.iter().map(|e| e.rank).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn ties_break_lexicographically() {
        let target = log_ds("t", &[0.0]);
        let qs = vec![log_ds("zeta", &[3.0]), log_ds("alpha", &[3.0])];
        let spec = "l2xlog".parse().unwrap();
        let r = rank_against_target(&target, &qs, &spec, &EmdConfig::default()).unwrap();
        assert_eq!(r.entries[0].condition_id, "alpha");
        assert_eq!(r.entries[1].condition_id, "zeta");
    }

    #[test]
    fn score_perfect() {
        let r = score_metric(&[0.0, 5.0, 10.0]).unwrap();
        assert_eq!(r.score, 1.0);
        assert_eq!(r.ranks, vec![1, 2, 3]);
    }

    #[test]
    fn score_hand_examples() {
        let r = score_metric(&[4.0, 5.0, 8.0]).unwrap();
        assert!((r.score - 0.75).abs() < 1e-15);
        let r = score_metric(&[5.0, 4.0, 8.0]).unwrap();
        assert_eq!(r.ranks, vec![2, 1, 3]);
        assert!((r.score - (1.0 / 3.0 + 3.0 / 8.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn score_degenerate_errors() {
        assert!(matches!(
            score_metric(&[0.0, 0.0, 0.0]),
            Err(Error::DegenerateSeparation)
        ));
        assert!(score_metric(&[1.0]).is_err());
    }

    #[test]
    fn score_scale_invariant() {
        let base = [3.0, 1.0, 7.0, 5.0];
        let s0 = score_metric(&base).unwrap().score;
        for scale in [0.001, 0.7, 13.0, 1e6] {
            let scaled: Vec<f64> = base.iter().map(|d| d * scale).collect();
            let s = score_metric(&scaled).unwrap().score;
            assert!((s - s0).abs() < 1e-12);
        }
    }

    #[test]
    fn compare_metrics_hand_trapezoids() {
        let l2log: DistanceMetricSpec = "l2xlog".parse().unwrap();
        let emdlog: DistanceMetricSpec = "emdxlog".parse().unwrap();
        let mk = |spec, fraction, mean| SweepCell {
            spec,
            fraction,
            mean,
            std_error: 0.0,
            repeats: 1,
            skipped: 0,
        };
        let sweep = SweepResult {
            cells: vec![
                mk(l2log, 1.0, 0.8),
                mk(l2log, 0.5, 0.6),
                mk(emdlog, 1.0, 0.7),
                mk(emdlog, 0.5, 0.7),
            ],
        };
        let ranked = compare_metrics(&sweep).unwrap();
        assert!((ranked[0].1 - 0.35).abs() < 1e-15);
        assert!((ranked[1].1 - 0.35).abs() < 1e-15);
        // tie keeps input spec order
        assert_eq!(ranked[0].0, l2log);
    }

    #[test]
    fn compare_metrics_single_fraction_uses_raw_score() {
        let l2log: DistanceMetricSpec = "l2xlog".parse().unwrap();
        let sweep = SweepResult {
            cells: vec![SweepCell {
                spec: l2log,
                fraction: 1.0,
                mean: 0.9,
                std_error: 0.0,
                repeats: 1,
                skipped: 0,
            }],
        };
        let ranked = compare_metrics(&sweep).unwrap();
        assert_eq!(ranked[0].1, 0.9);
    }

    #[test]
    fn compare_metrics_mismatched_grids_error() {
        let l2log: DistanceMetricSpec = "l2xlog".parse().unwrap();
        let emdlog: DistanceMetricSpec = "emdxlog".parse().unwrap();
        let mk = |spec, fraction| SweepCell {
            spec,
            fraction,
            mean: 0.5,
            std_error: 0.0,
            repeats: 1,
            skipped: 0,
        };
        let sweep = SweepResult {
            cells: vec![mk(l2log, 1.0), mk(emdlog, 0.5)],
        };
        assert!(compare_metrics(&sweep).is_err());
    }

    #[test]
    fn protocol_validation() {
        let mut p = CorruptionProtocol::default();
        assert!(p.validate().is_ok());
        p.fractions = vec![0.5, 0.2];
        assert!(p.validate().is_err()); // missing 1.0
        p.fractions = vec![1.0, 1.0];
        assert!(p.validate().is_err()); // not strictly descending
    }
}
