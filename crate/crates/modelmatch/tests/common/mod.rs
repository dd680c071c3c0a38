//! Shared test support: an independent linear-programming oracle for the
//! optimal-transport cost, implemented as a dense two-phase simplex with
//! Bland's rule. Deliberately unrelated to the library's transportation
//! simplex so the two can cross-check each other.

#![allow(dead_code)]

use ndarray::Array2;

/// Minimize c'x subject to Ax = b, x >= 0 (b must be nonnegative).
/// Returns the optimal objective, or None if infeasible.
pub fn simplex_min(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<f64> {
    let m = a.len();
    let n = c.len();
    assert!(a.iter().all(|row| row.len() == n));
    assert_eq!(b.len(), m);
    assert!(b.iter().all(|&v| v >= 0.0));

    // tableau over n structural + m artificial variables
    let total = n + m;
    let mut t = vec![vec![0.0f64; total + 1]; m];
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][total] = b[i];
    }
    let mut basis: Vec<usize> = (n..total).collect();

    // phase 1: minimize the sum of artificials
    let mut phase_c = vec![0.0; total];
    for j in n..total {
        phase_c[j] = 1.0;
    }
    let feasible = run_simplex(&mut t, &mut basis, &phase_c, total);
    if !feasible || phase1_objective(&t, &basis, total) > 1e-8 {
        return None;
    }
    // drive any artificial still in the basis out (or its row is zero)
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, j, total);
            }
        }
    }

    // phase 2 on the structural costs, artificials locked at zero
    let mut full_c = vec![0.0; total];
    full_c[..n].copy_from_slice(c);
    for j in n..total {
        full_c[j] = f64::INFINITY; // never re-enter
    }
    if !run_simplex(&mut t, &mut basis, &full_c, total) {
        return None; // unbounded; cannot happen for transportation
    }
    let mut obj = 0.0;
    for (i, &bj) in basis.iter().enumerate() {
        if bj < n {
            obj += c[bj] * t[i][total];
        }
    }
    Some(obj)
}

fn phase1_objective(t: &[Vec<f64>], basis: &[usize], total: usize) -> f64 {
    basis
        .iter()
        .enumerate()
        .filter(|(_, &bj)| bj >= total - (t.len()))
        .map(|(i, _)| t[i][total])
        .sum::<f64>()
        .max(0.0)
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize, total: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    for i in 0..t.len() {
        if i == row {
            continue;
        }
        let f = t[i][col];
        if f == 0.0 {
            continue;
        }
        for j in 0..=total {
            t[i][j] -= f * t[row][j];
        }
    }
    basis[row] = col;
}

/// Bland's rule simplex on an existing basic feasible tableau. Returns false
/// only on unboundedness.
fn run_simplex(t: &mut [Vec<f64>], basis: &mut [usize], c: &[f64], total: usize) -> bool {
    let m = t.len();
    loop {
        // reduced costs: c_j - c_B' B^-1 A_j
        let mut entering = None;
        for j in 0..total {
            if basis.contains(&j) || c[j].is_infinite() {
                continue;
            }
            let mut rc = c[j];
            for i in 0..m {
                if c[basis[i]].is_finite() {
                    rc -= c[basis[i]] * t[i][j];
                }
            }
            if rc < -1e-9 {
                entering = Some(j); // Bland: smallest improving index
                break;
            }
        }
        let Some(j) = entering else {
            return true;
        };
        // ratio test, Bland tie-break on the leaving basic index
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][j] > 1e-9 {
                let ratio = t[i][total] / t[i][j];
                let replace = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - 1e-12
                            || ((ratio - lr).abs() <= 1e-12 && basis[i] < basis[li])
                    }
                };
                if replace {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = leave else {
            return false;
        };
        pivot(t, basis, row, j, total);
    }
}

/// Optimal transport cost via the generic LP: variables x_ij, row-sum and
/// column-sum equality constraints (one redundant column constraint dropped).
pub fn emd_lp_oracle(cost: &Array2<f64>, supply: &[f64], demand: &[f64]) -> f64 {
    let n = supply.len();
    let m = demand.len();
    assert_eq!(cost.dim(), (n, m));
    let nv = n * m;
    let mut c = vec![0.0; nv];
    for i in 0..n {
        for j in 0..m {
            c[i * m + j] = cost[[i, j]];
        }
    }
    let mut a = Vec::with_capacity(n + m - 1);
    let mut b = Vec::with_capacity(n + m - 1);
    for i in 0..n {
        let mut row = vec![0.0; nv];
        for j in 0..m {
            row[i * m + j] = 1.0;
        }
        a.push(row);
        b.push(supply[i]);
    }
    for j in 0..m - 1 {
        let mut row = vec![0.0; nv];
        for i in 0..n {
            row[i * m + j] = 1.0;
        }
        a.push(row);
        b.push(demand[j]);
    }
    simplex_min(&c, &a, &b).expect("balanced transportation is always feasible")
}

#[cfg(test)]
mod self_checks {
    use super::*;
    use ndarray::array;

    #[test]
    fn lp_oracle_two_point_shift() {
        let cost = array![[1.0, 2.0], [0.0, 1.0]];
        let v = emd_lp_oracle(&cost, &[0.5, 0.5], &[0.5, 0.5]);
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lp_oracle_identity() {
        let cost = array![[0.0, 9.0], [9.0, 0.0]];
        let v = emd_lp_oracle(&cost, &[0.5, 0.5], &[0.5, 0.5]);
        assert!(v.abs() < 1e-9);
    }
}
