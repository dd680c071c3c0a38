//! Next-experiment recommendation: k-medoids over candidate pseudobulk
//! vectors with already-tested conditions acting as fixed medoids.

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distance::{DistanceMetricSpec, EmdConfig};
use crate::error::{Error, Result};
use crate::expr::ConditionDataset;
use crate::ranking::{rank_against_target, RankingReport};

/// One candidate condition, represented by its pseudobulk vector. Fixed
/// candidates are already-tested conditions that always act as medoids.
#[derive(Clone, Debug)]
pub struct CandidatePoint {
    pub condition_id: String,
    pub vector: Array1<f64>,
    pub fixed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MedoidSelection {
    pub k: usize,
    /// Chosen non-fixed medoid ids, sorted.
    pub chosen: Vec<String>,
    pub fixed: Vec<String>,
    /// candidate id -> serving medoid id (nearest among fixed + chosen)
    pub assignment: BTreeMap<String, String>,
    pub total_cost: f64,
}

fn euclidean(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).mapv(|d| d * d).sum().sqrt()
}

fn validate_candidates(candidates: &[CandidatePoint]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::EmptyDataset("no candidates".into()));
    }
    let dim = candidates[0].vector.len();
    let mut seen = std::collections::HashSet::new();
    for c in candidates {
        if c.vector.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "candidate '{}' has dimension {} but expected {dim}",
                c.condition_id,
                c.vector.len()
            )));
        }
        if !seen.insert(c.condition_id.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate candidate id '{}'",
                c.condition_id
            )));
        }
    }
    Ok(())
}

/// Assign every candidate to its nearest medoid (distance ties favor the
/// earlier medoid in `medoids` order) and sum the distances.
fn assign(
    candidates: &[CandidatePoint],
    medoids: &[usize],
) -> (BTreeMap<String, String>, f64) {
    let mut assignment = BTreeMap::new();
    let mut total = 0.0;
    for c in candidates {
        let (mi, d) = medoids
            .iter()
            .map(|&m| (m, euclidean(&c.vector, &candidates[m].vector)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("at least one medoid");
        assignment.insert(c.condition_id.clone(), candidates[mi].condition_id.clone());
        total += d;
    }
    (assignment, total)
}

fn cost_of(candidates: &[CandidatePoint], medoids: &[usize]) -> f64 {
    assign(candidates, medoids).1
}

fn build_selection(
    candidates: &[CandidatePoint],
    fixed: &[usize],
    chosen: &[usize],
) -> MedoidSelection {
    let medoids: Vec<usize> = fixed.iter().chain(chosen.iter()).cloned().collect();
    let (assignment, total_cost) = assign(candidates, &medoids);
    let mut chosen_ids: Vec<String> = chosen
        .iter()
        .map(|&i| candidates[i].condition_id.clone())
        .collect();
    chosen_ids.sort();
    let mut fixed_ids: Vec<String> = fixed
        .iter()
        .map(|&i| candidates[i].condition_id.clone())
        .collect();
    fixed_ids.sort();
    MedoidSelection {
        k: chosen.len(),
        chosen: chosen_ids,
        fixed: fixed_ids,
        assignment,
        total_cost,
    }
}

fn split_indices(candidates: &[CandidatePoint]) -> (Vec<usize>, Vec<usize>) {
    let fixed = (0..candidates.len()).filter(|&i| candidates[i].fixed).collect();
    let free = (0..candidates.len()).filter(|&i| !candidates[i].fixed).collect();
    (fixed, free)
}

/// Greedy max-min initialization: repeatedly pick the non-fixed candidate
/// farthest from all current medoids. Ties are broken by a seeded shuffle of
/// the candidate order, so distinct seeds may explore distinct optima.
fn init_maxmin(
    candidates: &[CandidatePoint],
    fixed: &[usize],
    free: &[usize],
    k: usize,
    seed: u64,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = free.to_vec();
    order.shuffle(&mut rng);
    let mut medoids: Vec<usize> = fixed.to_vec();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let pick = order
            .iter()
            .filter(|i| !chosen.contains(*i))
            .map(|&i| {
                let dmin = medoids
                    .iter()
                    .map(|&m| euclidean(&candidates[i].vector, &candidates[m].vector))
                    .fold(f64::INFINITY, f64::min);
                (i, dmin)
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(i, _)| i)
            .expect("k <= free candidates");
        chosen.push(pick);
        medoids.push(pick);
    }
    chosen
}

/// One PAM swap step: evaluate every exchange of a chosen medoid for a
/// non-medoid non-fixed candidate and apply the best strict improvement.
/// Returns the (possibly unchanged) selection and a local-optimum flag.
pub fn swap_step(
    candidates: &[CandidatePoint],
    current: &MedoidSelection,
) -> Result<(MedoidSelection, bool)> {
    validate_candidates(candidates)?;
    let index_of = |id: &str| {
        candidates
            .iter()
            .position(|c| c.condition_id == id)
            .ok_or_else(|| Error::UnknownIdentifier(format!("candidate '{id}'")))
    };
    let fixed: Vec<usize> = current
        .fixed
        .iter()
        .map(|id| index_of(id))
        .collect::<Result<_>>()?;
    let chosen: Vec<usize> = current
        .chosen
        .iter()
        .map(|id| index_of(id))
        .collect::<Result<_>>()?;
    let (_, free) = split_indices(candidates);

    let medoids: Vec<usize> = fixed.iter().chain(chosen.iter()).cloned().collect();
    let base_cost = cost_of(candidates, &medoids);

    // best strictly improving swap; ties by lexicographic (out id, in id)
    let mut best: Option<(f64, &str, &str, Vec<usize>)> = None;
    for (ci, &out) in chosen.iter().enumerate() {
        for &inn in &free {
            if chosen.contains(&inn) {
                continue;
            }
            let mut trial = chosen.clone();
            trial[ci] = inn;
            let all: Vec<usize> = fixed.iter().chain(trial.iter()).cloned().collect();
            let cost = cost_of(candidates, &all);
            if cost >= base_cost - 1e-12 {
                continue;
            }
            let key = (
                candidates[out].condition_id.as_str(),
                candidates[inn].condition_id.as_str(),
            );
            let better = match &best {
                None => true,
                Some((bc, bo, bi, _)) => {
                    cost < bc - 1e-12 || ((cost - bc).abs() <= 1e-12 && key < (*bo, *bi))
                }
            };
            if better {
                best = Some((cost, key.0, key.1, trial));
            }
        }
    }
    match best {
        Some((_, _, _, trial)) => Ok((build_selection(candidates, &fixed, &trial), false)),
        None => Ok((current.clone(), true)),
    }
}

/// PAM-style k-medoids in which fixed candidates are permanent medoids:
/// greedy max-min initialization from the fixed set, then swap steps until
/// no exchange strictly lowers the cost.
pub fn constrained_kmedoids(
    candidates: &[CandidatePoint],
    k: usize,
    seed: u64,
) -> Result<MedoidSelection> {
    validate_candidates(candidates)?;
    let (fixed, free) = split_indices(candidates);
    if k > free.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} non-fixed candidates",
            free.len()
        )));
    }
    if k == 0 && fixed.is_empty() {
        return Err(Error::InvalidArgument(
            "no medoids: k = 0 with no fixed candidates".into(),
        ));
    }
    let chosen = init_maxmin(candidates, &fixed, &free, k, seed);
    let mut selection = build_selection(candidates, &fixed, &chosen);
    loop {
        let (next, local_opt) = swap_step(candidates, &selection)?;
        if local_opt {
            return Ok(selection);
        }
        debug_assert!(next.total_cost < selection.total_cost);
        selection = next;
    }
}

/// Globally optimal selection by enumerating every k-subset of the non-fixed
/// candidates. Test oracle; bounded to C(n, k) <= 10,000 subsets.
pub fn exhaustive_medoid_oracle(candidates: &[CandidatePoint], k: usize) -> Result<MedoidSelection> {
    validate_candidates(candidates)?;
    let (fixed, free) = split_indices(candidates);
    if k > free.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} non-fixed candidates",
            free.len()
        )));
    }
    if k == 0 && fixed.is_empty() {
        return Err(Error::InvalidArgument(
            "no medoids: k = 0 with no fixed candidates".into(),
        ));
    }
    let n_subsets = binomial(free.len(), k);
    if n_subsets > 10_000 {
        return Err(Error::InvalidArgument(format!(
            "C({}, {k}) = {n_subsets} exceeds the enumeration bound of 10000",
            free.len()
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let chosen: Vec<usize> = subset.iter().map(|&i| free[i]).collect();
        let all: Vec<usize> = fixed.iter().chain(chosen.iter()).cloned().collect();
        let cost = cost_of(candidates, &all);
        if best.as_ref().map_or(true, |(bc, _)| cost < *bc) {
            best = Some((cost, chosen));
        }
        if !next_combination(&mut subset, free.len()) {
            break;
        }
    }
    let (_, chosen) = best.expect("at least one subset");
    Ok(build_selection(candidates, &fixed, &chosen))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Advance `subset` to the next k-combination of 0..n; false when exhausted.
fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Proximity-only alternative: rank candidate datasets by distance to the
/// target. Delegates to the standard ranking.
pub fn rank_candidates_to_target(
    candidates: &[ConditionDataset],
    target: &ConditionDataset,
    spec: &DistanceMetricSpec,
    emd: &EmdConfig,
) -> Result<RankingReport> {
    rank_against_target(target, candidates, spec, emd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn pt(id: &str, x: f64, fixed: bool) -> CandidatePoint {
        CandidatePoint {
            condition_id: id.to_string(),
            vector: array![x],
            fixed,
        }
    }

    fn line_instance() -> Vec<CandidatePoint> {
        vec![
            pt("a", 0.0, false),
            pt("b", 1.0, false),
            pt("c", 10.0, false),
            pt("d", 11.0, false),
        ]
    }

    #[test]
    fn two_clusters_on_a_line() {
        // {0,1} and {10,11}: any optimum has one medoid per cluster, cost 2
        let sel = constrained_kmedoids(&line_instance(), 2, 0).unwrap();
        assert!((sel.total_cost - 2.0).abs() < 1e-12);
        let low = ["a", "b"];
        let high = ["c", "d"];
        assert!(sel.chosen.iter().any(|m| low.contains(&m.as_str())));
        assert!(sel.chosen.iter().any(|m| high.contains(&m.as_str())));
    }

    #[test]
    fn fixed_medoid_serves_nearby_points() {
        // fixed 0 covers {0, 0.1}; the single free medoid must be 5
        let candidates = vec![pt("f", 0.0, true), pt("x", 0.1, false), pt("y", 5.0, false)];
        let sel = constrained_kmedoids(&candidates, 1, 0).unwrap();
        assert_eq!(sel.chosen, vec!["y".to_string()]);
        assert!((sel.total_cost - 0.1).abs() < 1e-12);
        assert_eq!(sel.assignment["x"], "f");
        assert_eq!(sel.assignment["y"], "y");
    }

    #[test]
    fn k_zero_assigns_to_fixed_only() {
        let candidates = vec![pt("f", 0.0, true), pt("x", 3.0, false)];
        let sel = constrained_kmedoids(&candidates, 0, 0).unwrap();
        assert!(sel.chosen.is_empty());
        assert_eq!(sel.assignment["x"], "f");
        assert!((sel.total_cost - 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_too_large_rejected() {
        assert!(constrained_kmedoids(&line_instance(), 5, 0).is_err());
    }

    #[test]
    fn oracle_matches_hand_cost() {
        let sel = exhaustive_medoid_oracle(&line_instance(), 2).unwrap();
        assert!((sel.total_cost - 2.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_single_free_candidate() {
        let candidates = vec![pt("f", 0.0, true), pt("x", 4.0, false)];
        let sel = exhaustive_medoid_oracle(&candidates, 1).unwrap();
        assert_eq!(sel.chosen, vec!["x".to_string()]);
    }

    #[test]
    fn oracle_bound_enforced() {
        let candidates: Vec<CandidatePoint> = (0..30)
            .map(|i| pt(&format!("c{i}"), i as f64, false))
            .collect();
        assert!(exhaustive_medoid_oracle(&candidates, 6).is_err());
    }

    #[test]
    fn swap_step_improves_outlier_medoid() {
        // both medoids stuck in the left cluster, right cluster unserved
        let candidates = line_instance();
        let bad = build_selection(&candidates, &[], &[0, 1]);
        let (next, local_opt) = swap_step(&candidates, &bad).unwrap();
        assert!(!local_opt);
        assert!(next.total_cost < bad.total_cost);
    }

    #[test]
    fn swap_step_flags_local_optimum() {
        let candidates = line_instance();
        let opt = build_selection(&candidates, &[], &[0, 2]);
        let (next, local_opt) = swap_step(&candidates, &opt).unwrap();
        assert!(local_opt);
        assert_eq!(next.total_cost, opt.total_cost);
    }

    #[test]
    fn single_candidate_no_swap_possible() {
        let candidates = vec![pt("x", 1.0, false)];
        let sel = constrained_kmedoids(&candidates, 1, 0).unwrap();
        let (_, local_opt) = swap_step(&candidates, &sel).unwrap();
        assert!(local_opt);
    }

    #[test]
    fn cost_consistency_invariant() {
        let sel = constrained_kmedoids(&line_instance(), 2, 1).unwrap();
        let recomputed: f64 = line_instance()
            .iter()
            .map(|c| {
                let m = &sel.assignment[&c.condition_id];
                let mv = line_instance()
                    .iter()
                    .find(|x| &x.condition_id == m)
                    .unwrap()
                    .vector
                    .clone();
                euclidean(&c.vector, &mv)
            })
            .sum();
        assert!((sel.total_cost - recomputed).abs() < 1e-12);
    }

    #[test]
    fn adding_fixed_medoid_never_increases_cost() {
        let mut candidates = line_instance();
        let chosen = [0usize, 2];
        let before = cost_of(&candidates, &chosen);
        candidates.push(pt("extra", 5.5, true));
        let with_fixed: Vec<usize> = chosen.iter().cloned().chain([4]).collect();
        let after = cost_of(&candidates, &with_fixed);
        assert!(after <= before + 1e-12);
    }

    #[test]
    fn heuristic_matches_oracle_on_most_random_instances() {
        use rand::Rng;
        let mut zero_gap = 0;
        let total = 50;
        for seed in 0..total {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_free = rng.gen_range(4..=12);
            let n_fixed = rng.gen_range(0..=2);
            let k = rng.gen_range(1..=3.min(n_free));
            let mut candidates = Vec::new();
            for i in 0..n_fixed {
                candidates.push(CandidatePoint {
                    condition_id: format!("f{i}"),
                    vector: array![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                    fixed: true,
                });
            }
            for i in 0..n_free {
                candidates.push(CandidatePoint {
                    condition_id: format!("c{i}"),
                    vector: array![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                    fixed: false,
                });
            }
            let sel = constrained_kmedoids(&candidates, k, seed).unwrap();
            let oracle = exhaustive_medoid_oracle(&candidates, k).unwrap();
            assert!(sel.total_cost >= oracle.total_cost - 1e-9);
            // local optimality holds on every instance
            let (_, local_opt) = swap_step(&candidates, &sel).unwrap();
            assert!(local_opt, "seed {seed} not swap-local-optimal");
            if (sel.total_cost - oracle.total_cost).abs() < 1e-9 {
                zero_gap += 1;
            }
        }
        assert!(
            zero_gap * 10 >= total * 8,
            "only {zero_gap}/{total} instances matched the oracle"
        );
    }
}
