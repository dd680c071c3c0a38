//! Exact solver for the balanced transportation problem, used as the
//! optimal-transport backend of the EMD metric.
//!
//! Transportation simplex with north-west-corner initialization and MODI
//! pivoting. Degeneracy is handled by perturbing the supplies; once the
//! optimal basis is found, flows are re-solved exactly on the basis tree
//! with the unperturbed marginals.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Minimize sum(F .* cost) subject to row sums = supply, column sums =
/// demand, F >= 0. Supply and demand totals must balance.
pub fn solve_transportation(
    cost: &Array2<f64>,
    supply: &[f64],
    demand: &[f64],
) -> Result<Array2<f64>> {
    let n = supply.len();
    let m = demand.len();
    if cost.nrows() != n || cost.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "cost matrix is {}x{} but there are {} supplies and {} demands",
            cost.nrows(),
            cost.ncols(),
            n,
            m
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::EmptyDataset("transportation with no nodes".into()));
    }
    let total_supply: f64 = supply.iter().sum();
    let total_demand: f64 = demand.iter().sum();
    if (total_supply - total_demand).abs() > 1e-9 * total_supply.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "unbalanced problem: supply {total_supply} vs demand {total_demand}"
        )));
    }
    if supply.iter().chain(demand.iter()).any(|&x| x < 0.0) {
        return Err(Error::InvalidArgument("negative supply or demand".into()));
    }

    // Perturb supplies so the north-west-corner walk never hits an exact tie
    // and pivot steps stay nondegenerate.
    let eps = total_supply.max(1.0) * 1e-9 / (n as f64 + 1.0);
    let s: Vec<f64> = supply.iter().map(|&x| x + eps).collect();
    let mut d: Vec<f64> = demand.to_vec();
    d[m - 1] += eps * n as f64;

    // North-west corner: a staircase of exactly n + m - 1 basic cells.
    let n_basic = n + m - 1;
    let mut cells: Vec<(usize, usize)> = Vec::with_capacity(n_basic);
    let mut flows: Vec<f64> = Vec::with_capacity(n_basic);
    let mut srem = s.clone();
    let mut drem = d.clone();
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let f = srem[i].min(drem[j]);
        cells.push((i, j));
        flows.push(f);
        srem[i] -= f;
        drem[j] -= f;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if j == m - 1 {
            i += 1;
        } else if i == n - 1 {
            j += 1;
        } else if srem[i] <= drem[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    debug_assert_eq!(cells.len(), n_basic);

    let mut is_basic = vec![false; n * m];
    for &(i, j) in &cells {
        is_basic[i * m + j] = true;
    }

    let cost_scale = cost.iter().fold(0.0f64, |a, &c| a.max(c.abs())).max(1.0);
    let tol = 1e-10 * cost_scale;
    let max_iter = 200 * (n + m) + 20_000;

    for _iter in 0..max_iter {
        // Node adjacency over the basis tree. Nodes 0..n are rows,
        // n..n+m are columns.
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m]; // (neighbor node, cell index)
        for (c, &(ci, cj)) in cells.iter().enumerate() {
            adj[ci].push((n + cj, c));
            adj[n + cj].push((ci, c));
        }

        // Potentials from a BFS rooted at row 0.
        let mut u = vec![f64::NAN; n];
        let mut v = vec![f64::NAN; m];
        u[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &(next, c) in &adj[node] {
                let (ci, cj) = cells[c];
                if next >= n {
                    if v[next - n].is_nan() {
                        v[next - n] = cost[[ci, cj]] - u[ci];
                        stack.push(next);
                    }
                } else if u[next].is_nan() {
                    u[next] = cost[[ci, cj]] - v[cj];
                    stack.push(next);
                }
            }
        }
        if u.iter().any(|x| x.is_nan()) || v.iter().any(|x| x.is_nan()) {
            return Err(Error::Solver("basis tree is disconnected".into()));
        }

        // Entering cell: most negative reduced cost.
        let mut best = (0.0f64, usize::MAX, usize::MAX);
        for bi in 0..n {
            for bj in 0..m {
                if is_basic[bi * m + bj] {
                    continue;
                }
                let rc = cost[[bi, bj]] - u[bi] - v[bj];
                if rc < best.0 {
                    best = (rc, bi, bj);
                }
            }
        }
        if best.0 >= -tol {
            // Optimal: re-solve flows exactly on the final basis tree with
            // unperturbed marginals by leaf elimination.
            return Ok(exact_flows_on_basis(&cells, supply, demand, n, m));
        }
        let (_, bi, bj) = best;

        // Cycle: tree path from row node bi to column node n + bj.
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n + m]; // (prev node, cell index)
        let mut visited = vec![false; n + m];
        visited[bi] = true;
        let mut queue = std::collections::VecDeque::from([bi]);
        while let Some(node) = queue.pop_front() {
            if node == n + bj {
                break;
            }
            for &(next, c) in &adj[node] {
                if !visited[next] {
                    visited[next] = true;
                    parent[next] = Some((node, c));
                    queue.push_back(next);
                }
            }
        }
        let mut path_cells = Vec::new(); // cells from the bi end to the bj end
        let mut node = n + bj;
        while let Some((prev, c)) = parent[node] {
            path_cells.push(c);
            node = prev;
        }
        path_cells.reverse();

        // Alternating signs along the cycle: the entering cell is +, and
        // path cell t (from the row end) is - for even t, + for odd t.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (t, &c) in path_cells.iter().enumerate() {
            if t % 2 == 0 {
                let f = flows[c];
                if f < theta - 1e-18 || (f <= theta && (leaving == usize::MAX || cells[c] < cells[leaving])) {
                    theta = f;
                    leaving = c;
                }
            }
        }
        if leaving == usize::MAX {
            return Err(Error::Solver("pivot found no leaving cell".into()));
        }
        for (t, &c) in path_cells.iter().enumerate() {
            if t % 2 == 0 {
                flows[c] -= theta;
            } else {
                flows[c] += theta;
            }
        }
        let (li, lj) = cells[leaving];
        is_basic[li * m + lj] = false;
        is_basic[bi * m + bj] = true;
        cells[leaving] = (bi, bj);
        flows[leaving] = theta;
    }

    Err(Error::Solver(
        "transportation simplex exceeded its iteration limit".into(),
    ))
}

/// Solve for the unique flows on a basis spanning tree for given marginals.
fn exact_flows_on_basis(
    cells: &[(usize, usize)],
    supply: &[f64],
    demand: &[f64],
    n: usize,
    m: usize,
) -> Array2<f64> {
    let mut degree = vec![0usize; n + m];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n + m];
    for (c, &(i, j)) in cells.iter().enumerate() {
        degree[i] += 1;
        degree[n + j] += 1;
        incident[i].push(c);
        incident[n + j].push(c);
    }
    let mut srem = supply.to_vec();
    let mut drem = demand.to_vec();
    let mut removed = vec![false; cells.len()];
    let mut flow = Array2::<f64>::zeros((n, m));
    let mut leaves: Vec<usize> = (0..n + m).filter(|&v| degree[v] == 1).collect();
    while let Some(node) = leaves.pop() {
        let Some(&c) = incident[node].iter().find(|&&c| !removed[c]) else {
            continue;
        };
        let (i, j) = cells[c];
        let f = if node < n { srem[i] } else { drem[j] };
        let f = f.max(0.0);
        flow[[i, j]] = f;
        srem[i] -= f;
        drem[j] -= f;
        removed[c] = true;
        for &v in &[i, n + j] {
            degree[v] -= 1;
            if degree[v] == 1 {
                leaves.push(v);
            }
        }
    }
    flow
}
