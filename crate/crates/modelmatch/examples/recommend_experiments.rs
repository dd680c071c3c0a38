//! Pick the k most informative conditions to profile next with constrained
//! k-medoids: already-profiled conditions are fixed medoids, and the
//! selection adds k new medoids that best cover the remaining space.

use modelmatch::recommend::{constrained_kmedoids, exhaustive_medoid_oracle, CandidatePoint};
use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> modelmatch::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut candidates = Vec::new();
    // two conditions already profiled in a previous round
    for i in 0..2 {
        candidates.push(CandidatePoint {
            condition_id: format!("profiled_{i}"),
            vector: Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0)),
            fixed: true,
        });
    }
    // twelve candidate conditions, three loose clusters
    for i in 0..12 {
        let center = (i % 3) as f64 * 4.0;
        candidates.push(CandidatePoint {
            condition_id: format!("candidate_{i:02}"),
            vector: Array1::from_shape_fn(4, |_| center + rng.gen_range(-0.5..0.5)),
            fixed: false,
        });
    }

    let k = 3;
    let selection = constrained_kmedoids(&candidates, k, 21)?;
    println!("fixed medoids:  {}", selection.fixed.join(", "));
    println!("chosen medoids: {}", selection.chosen.join(", "));
    println!("total assignment cost: {:.4}", selection.total_cost);

    let oracle = exhaustive_medoid_oracle(&candidates, k)?;
    println!(
        "exhaustive optimum: {:.4} (gap {:.6})",
        oracle.total_cost,
        selection.total_cost - oracle.total_cost
    );

    println!("\nassignments:");
    for (cond, medoid) in &selection.assignment {
        println!("  {cond:<14} -> {medoid}");
    }
    Ok(())
}
