//! Exact Kantorovich-Rubinstein (W1) distance between equal-size empirical
//! measures.
//!
//! With equal weights the optimal coupling can be taken to be a permutation,
//! so W1 reduces to a min-cost perfect matching on the Euclidean cost matrix.
//! The solver is a shortest-augmenting-path assignment that maintains dual
//! potentials `u_i + w_j <= |a_i - b_j|`; the potentials double as an
//! optimality certificate for the Lipschitz dual form of the distance.
//!
//! Costs are raw distances. The `1/N` weight is applied once, to the plan.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::points::Points;

/// Largest instance [`w1_bruteforce`] will enumerate.
pub const BRUTEFORCE_MAX: usize = 9;

/// Tolerance used by [`verify_duality`] for feasibility and the duality gap.
pub const DUALITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct DualPotentials {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    /// `matching[i] = j` couples `a_i` with `b_j`.
    pub matching: Vec<usize>,
    /// `(1/N) sum_i |a_i - b_{matching[i]}|`.
    pub cost: f64,
    pub potentials: Option<DualPotentials>,
}

impl TransportPlan {
    pub fn len(&self) -> usize {
        self.matching.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matching.is_empty()
    }

    /// Per-pair raw costs `(i, j, |a_i - b_j|)`.
    pub fn pair_costs(&self, a: &Points, b: &Points) -> Vec<(usize, usize, f64)> {
        self.matching
            .iter()
            .enumerate()
            .map(|(i, &j)| (i, j, math::distance(a.get(i), b.get(j))))
            .collect()
    }
}

fn check_inputs(a: &Points, b: &Points) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.is_empty() {
        return Err(Error::domain(
            "empirical measures must carry at least one point",
        ));
    }
    Ok(a.len())
}

fn cost_matrix(a: &Points, b: &Points) -> Vec<f64> {
    let n = a.len();
    let mut c = Vec::with_capacity(n * n);
    for i in 0..n {
        let ai = a.get(i);
        for j in 0..n {
            c.push(math::distance(ai, b.get(j)));
        }
    }
    c
}

fn matched_cost(c: &[f64], n: usize, matching: &[usize]) -> f64 {
    let total: f64 = matching
        .iter()
        .enumerate()
        .map(|(i, &j)| c[i * n + j])
        .sum();
    total / n as f64
}

/// Exact W1 between two equal-size clouds, with dual certificate.
///
/// Among optimal matchings the lexicographically smallest one is returned,
/// so ties (e.g. lattice configurations) resolve reproducibly.
pub fn w1_exact(a: &Points, b: &Points) -> Result<TransportPlan> {
    let n = check_inputs(a, b)?;
    let c = cost_matrix(a, b);
    let (mut matching, u, w) = solve_assignment(&c, n);
    canonicalize(&c, n, &u, &w, &mut matching);
    let cost = matched_cost(&c, n, &matching);
    Ok(TransportPlan {
        matching,
        cost,
        potentials: Some(DualPotentials { row: u, col: w }),
    })
}

/// Shortest augmenting path assignment on a dense `n x n` cost matrix.
///
/// Returns `(col_for_row, u, w)` with `u_i + w_j <= c_ij` everywhere and
/// equality on matched pairs, up to rounding.
fn solve_assignment(c: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut row_for_col = vec![NONE; n];
    let mut col_for_row = vec![NONE; n];
    let mut path = vec![NONE; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut row_seen = vec![false; n];
    let mut col_seen = vec![false; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);
    let mut seen_rows: Vec<usize> = Vec::with_capacity(n);
    let mut seen_cols: Vec<usize> = Vec::with_capacity(n);

    for cur in 0..n {
        remaining.clear();
        // Reverse order so ties prefer lower column indices after swap-removal.
        remaining.extend((0..n).rev());
        for &r in &seen_rows {
            row_seen[r] = false;
        }
        for &j in &seen_cols {
            col_seen[j] = false;
        }
        seen_rows.clear();
        seen_cols.clear();
        dist.iter_mut().for_each(|x| *x = f64::INFINITY);

        let mut min_val = 0.0;
        let mut i = cur;
        let sink = loop {
            row_seen[i] = true;
            seen_rows.push(i);
            let ui = u[i];
            let row = &c[i * n..(i + 1) * n];
            let mut lowest = f64::INFINITY;
            let mut index = NONE;
            for (it, &j) in remaining.iter().enumerate() {
                let r = min_val + row[j] - ui - w[j];
                if r < dist[j] {
                    path[j] = i;
                    dist[j] = r;
                }
                let dj = dist[j];
                if dj < lowest || (dj == lowest && row_for_col[j] == NONE) {
                    lowest = dj;
                    index = it;
                }
            }
            min_val = lowest;
            let j = remaining.swap_remove(index);
            col_seen[j] = true;
            seen_cols.push(j);
            if row_for_col[j] == NONE {
                break j;
            }
            i = row_for_col[j];
        };

        u[cur] += min_val;
        for &r in &seen_rows {
            if r != cur {
                u[r] += min_val - dist[col_for_row[r]];
            }
        }
        for &j in &seen_cols {
            w[j] -= min_val - dist[j];
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row_for_col[j] = r;
            core::mem::swap(&mut col_for_row[r], &mut j);
            if r == cur {
                break;
            }
        }
    }
    (col_for_row, u, w)
}

/// Replace `matching` by the lexicographically smallest perfect matching on
/// the tight edges of the dual solution. Every such matching is optimal by
/// complementary slackness.
fn canonicalize(c: &[f64], n: usize, u: &[f64], w: &[f64], matching: &mut [usize]) {
    const NONE: usize = usize::MAX;
    let scale = c.iter().fold(1.0_f64, |m, &x| m.max(x));
    let tol = 1e-12 * scale;
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| matching[i] == j || c[i * n + j] - u[i] - w[j] <= tol)
                .collect()
        })
        .collect();
    let mut owner = vec![NONE; n];
    for (i, &j) in matching.iter().enumerate() {
        owner[j] = i;
    }
    let mut fixed_col = vec![false; n];
    let mut prev_col = vec![NONE; n];
    let mut visited = vec![false; n];
    let mut queue: Vec<usize> = Vec::new();
    let mut touched: Vec<usize> = Vec::new();

    for i in 0..n {
        for &j in &tight[i] {
            if fixed_col[j] {
                continue;
            }
            if matching[i] == j {
                break;
            }
            // Try to hand `j` to row i: its owner must reach i's current
            // column along an alternating path through unfixed rows.
            let target = matching[i];
            let start = owner[j];
            for &t in &touched {
                visited[t] = false;
            }
            touched.clear();
            queue.clear();
            queue.push(start);
            let mut head = 0;
            let mut found = false;
            'bfs: while head < queue.len() {
                let r = queue[head];
                head += 1;
                for &k in &tight[r] {
                    if fixed_col[k] || k == j || visited[k] {
                        continue;
                    }
                    visited[k] = true;
                    touched.push(k);
                    prev_col[k] = r;
                    if k == target {
                        found = true;
                        break 'bfs;
                    }
                    let next = owner[k];
                    if next != i {
                        queue.push(next);
                    }
                }
            }
            if !found {
                continue;
            }
            // Augment backwards from the target column.
            let mut k = target;
            loop {
                let r = prev_col[k];
                let old = matching[r];
                matching[r] = k;
                owner[k] = r;
                if r == start {
                    break;
                }
                k = old;
            }
            matching[i] = j;
            owner[j] = i;
            break;
        }
        fixed_col[matching[i]] = true;
    }
}

/// Exhaustive minimum over all `N!` matchings, visited in lexicographic order.
pub fn w1_bruteforce(a: &Points, b: &Points) -> Result<TransportPlan> {
    let n = check_inputs(a, b)?;
    if n > BRUTEFORCE_MAX {
        return Err(Error::TooLarge {
            n,
            max: BRUTEFORCE_MAX,
        });
    }
    let c = cost_matrix(a, b);
    let scale = c.iter().fold(1.0_f64, |m, &x| m.max(x));
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_sum = f64::INFINITY;
    loop {
        let s: f64 = perm.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
        if s < best_sum - 1e-13 * scale {
            best_sum = s;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let cost = matched_cost(&c, n, &best);
    Ok(TransportPlan {
        matching: best,
        cost,
        potentials: None,
    })
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// W1 on the line by monotone rearrangement.
pub fn w1_sorted_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::domain(
            "empirical measures must carry at least one point",
        ));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let s: f64 = sa.iter().zip(&sb).map(|(x, y)| libm::fabs(x - y)).sum();
    Ok(s / a.len() as f64)
}

/// Check the plan's dual certificate: feasibility `u_i + w_j <= |a_i - b_j|`
/// and a vanishing gap between the primal cost and `(1/N)(sum u + sum w)`.
pub fn verify_duality(plan: &TransportPlan, a: &Points, b: &Points) -> Result<bool> {
    let n = check_inputs(a, b)?;
    let pot = plan.potentials.as_ref().ok_or(Error::MissingCertificate)?;
    if plan.len() != n || pot.row.len() != n || pot.col.len() != n {
        return Err(Error::PlanMismatch {
            plan: plan.len(),
            n,
        });
    }
    let mut seen = vec![false; n];
    for &j in &plan.matching {
        if j >= n || seen[j] {
            return Ok(false);
        }
        seen[j] = true;
    }
    for i in 0..n {
        let ai = a.get(i);
        for j in 0..n {
            if pot.row[i] + pot.col[j] > math::distance(ai, b.get(j)) + DUALITY_TOL {
                return Ok(false);
            }
        }
    }
    let primal: f64 = plan
        .matching
        .iter()
        .enumerate()
        .map(|(i, &j)| math::distance(a.get(i), b.get(j)))
        .sum::<f64>()
        / n as f64;
    let dual = (pot.row.iter().sum::<f64>() + pot.col.iter().sum::<f64>()) / n as f64;
    let gap_ok = libm::fabs(primal - dual) <= DUALITY_TOL * primal.max(1.0);
    let cost_ok = libm::fabs(primal - plan.cost) <= DUALITY_TOL * primal.max(1.0);
    Ok(gap_ok && cost_ok)
}
