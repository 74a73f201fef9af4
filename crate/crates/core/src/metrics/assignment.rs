//! Exact W1 between equal-size uniform point clouds via linear assignment.

use crate::error::{Error, Result};
use crate::points::PointCloud;

/// Largest instance accepted by [`exact_w1_small`].
pub const MAX_ASSIGNMENT_SIZE: usize = 512;

/// Minimum-cost perfect matching on a square cost matrix (row-major).
///
/// Shortest augmenting paths with dual potentials, O(n^3). Returns the
/// column assigned to each row.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    // 1-based with a virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// W1 between the uniform measures on two equal-size clouds.
pub fn exact_w1_small(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Unsupported(format!(
            "exact W1 needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() > MAX_ASSIGNMENT_SIZE {
        return Err(Error::Unsupported(format!(
            "exact W1 is limited to {MAX_ASSIGNMENT_SIZE} points"
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut cost = Vec::with_capacity(n * n);
    for x in a.rows() {
        for y in b.rows() {
            cost.push(crate::points::sq_dist(x, y).sqrt());
        }
    }
    let asg = solve_assignment(&cost, n);
    Ok(asg
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum::<f64>()
        / n as f64)
}
