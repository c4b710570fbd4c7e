//! Minimum-cost assignment: a shortest-augmenting-path Hungarian solver and
//! Murty's ranked k-best enumeration on top of it.
//!
//! Cost matrices may contain `+inf` for forbidden pairs. Every row must be
//! assigned to a distinct column; columns may be left over.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// One row-to-column assignment with its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[r]` is the column assigned to row `r`.
    pub row_to_col: Vec<usize>,
    pub cost: f64,
}

/// Optimal assignment of all rows to distinct columns (rows <= columns).
///
/// Returns `InfeasibleAssignment` when no finite-cost complete assignment
/// exists.
pub fn solve_assignment(cost: &DMatrix<f64>) -> Result<Assignment> {
    let rows = cost.nrows();
    let cols = cost.ncols();
    if rows == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            cost: 0.0,
        });
    }
    if rows > cols {
        return Err(Error::InfeasibleAssignment);
    }

    // Shortest augmenting path with potentials, 1-based bookkeeping.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut matched_row = vec![0usize; cols + 1]; // matched_row[j] = row matched to col j (1-based)

    for i in 1..=rows {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_v = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        let mut way = vec![0usize; cols + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(Error::InfeasibleAssignment);
            }
            for j in 0..=cols {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Augment along the path.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![usize::MAX; rows];
    for j in 1..=cols {
        if matched_row[j] != 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    let mut total = 0.0;
    for (r, &c) in row_to_col.iter().enumerate() {
        let entry = cost[(r, c)];
        if !entry.is_finite() {
            return Err(Error::InfeasibleAssignment);
        }
        total += entry;
    }
    Ok(Assignment {
        row_to_col,
        cost: total,
    })
}

#[derive(Debug)]
struct MurtyNode {
    assignment: Assignment,
    /// Pairs frozen into every solution of this node.
    forced: Vec<(usize, usize)>,
    /// Pairs excluded from every solution of this node.
    banned: Vec<(usize, usize)>,
}

impl MurtyNode {
    fn key(&self) -> (f64, &[usize]) {
        (self.assignment.cost, &self.assignment.row_to_col)
    }
}

impl PartialEq for MurtyNode {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for MurtyNode {}
impl PartialOrd for MurtyNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for MurtyNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for min-first ordering with
        // lexicographic assignment vectors as tie-breaker.
        other
            .assignment
            .cost
            .partial_cmp(&self.assignment.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.assignment.row_to_col.cmp(&self.assignment.row_to_col))
    }
}

fn constrained_matrix(
    cost: &DMatrix<f64>,
    forced: &[(usize, usize)],
    banned: &[(usize, usize)],
) -> DMatrix<f64> {
    let mut m = cost.clone();
    for &(r, c) in banned {
        m[(r, c)] = f64::INFINITY;
    }
    for &(r, c) in forced {
        for j in 0..m.ncols() {
            if j != c {
                m[(r, j)] = f64::INFINITY;
            }
        }
        for i in 0..m.nrows() {
            if i != r {
                m[(i, c)] = f64::INFINITY;
            }
        }
    }
    m
}

/// The `k` lowest-cost assignments in nondecreasing cost order, ties broken
/// by the lexicographic assignment vector. Fewer are returned when fewer
/// feasible assignments exist.
pub fn kbest_assignments(cost: &DMatrix<f64>, k: usize) -> Result<Vec<Assignment>> {
    assert!(k >= 1, "k-best assignment needs k >= 1");
    let best = solve_assignment(cost)?;
    let mut heap = BinaryHeap::new();
    heap.push(MurtyNode {
        assignment: best,
        forced: Vec::new(),
        banned: Vec::new(),
    });

    let mut found: Vec<Assignment> = Vec::new();
    while let Some(node) = heap.pop() {
        // Once k solutions are known, nodes can only matter if they still tie
        // with the current k-th best cost.
        if found.len() >= k && node.assignment.cost > found[k - 1].cost {
            break;
        }
        found.push(node.assignment.clone());
        found.sort_by(|a, b| {
            a.cost
                .partial_cmp(&b.cost)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.row_to_col.cmp(&b.row_to_col))
        });

        // Murty partition of the node's remaining solution space.
        let forced_rows: Vec<usize> = node.forced.iter().map(|&(r, _)| r).collect();
        let mut forced = node.forced.clone();
        for r in 0..cost.nrows() {
            if forced_rows.contains(&r) {
                continue;
            }
            let pair = (r, node.assignment.row_to_col[r]);
            let mut banned = node.banned.clone();
            banned.push(pair);
            let m = constrained_matrix(cost, &forced, &banned);
            if let Ok(best) = solve_assignment(&m) {
                heap.push(MurtyNode {
                    assignment: best,
                    forced: forced.clone(),
                    banned,
                });
            }
            forced.push(pair);
        }
    }
    found.truncate(k);
    Ok(found)
}
