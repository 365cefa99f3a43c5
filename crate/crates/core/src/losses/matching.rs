//! Minimum-cost bipartite matching between optimized boxes and annotations.

use crate::fields::BoundBox;
use crate::geometry::{Box2D, CameraFrame};

use super::projection::pairwise_cost;
use super::{LossError, LossWeights};

/// Cost assigned to pairs that cannot be supervised: padding rows/columns of
/// a ragged problem and boxes that project behind the camera. Far above any
/// achievable real cost, far below anything that loses f64 precision.
pub const UNMATCHABLE_COST: f64 = 1e6;

/// Result of a square assignment: `permutation[row] = column`, a bijection.
#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-total-cost perfect matching on a square cost matrix.
///
/// Among matchings of equal (within 1e-9 relative) total cost, the
/// lexicographically smallest permutation is returned, so ties never make
/// results depend on iteration internals. The empty matrix yields the empty
/// matching.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<Matching, LossError> {
    let n = cost.len();
    if n == 0 {
        return Ok(Matching {
            permutation: Vec::new(),
            total_cost: 0.0,
        });
    }
    if cost.iter().any(|row| row.len() != n) {
        return Err(LossError::Shape("cost matrix must be square"));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(LossError::NonFiniteCost);
    }

    let full = |i: usize, j: usize| cost[i][j];
    let (_, best) = solve_assignment(&full, n);
    let tol = 1e-9 * (1.0 + best.abs());

    // Lexicographic refinement: fix rows in order to the smallest column
    // that still completes to an optimal assignment.
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut permutation = vec![0usize; n];
    let mut prefix = 0.0;
    for row in 0..n {
        let mut chosen = None;
        for (slot, &col) in free_cols.iter().enumerate() {
            let rest = free_cols
                .iter()
                .copied()
                .filter(|&c| c != col)
                .collect::<Vec<_>>();
            let m = n - row - 1;
            let sub = |i: usize, j: usize| cost[row + 1 + i][rest[j]];
            let (_, rest_cost) = solve_assignment(&sub, m);
            if prefix + cost[row][col] + rest_cost <= best + tol {
                chosen = Some((slot, col));
                break;
            }
        }
        let (slot, col) = chosen.expect("an optimal column always exists");
        prefix += cost[row][col];
        free_cols.remove(slot);
        permutation[row] = col;
    }
    let total_cost = (0..n).map(|i| cost[i][permutation[i]]).sum();
    Ok(Matching {
        permutation,
        total_cost,
    })
}

/// Shortest-augmenting-path assignment with row/column potentials, O(n^3).
/// Returns (row -> column, total cost); `n = 0` gives an empty result.
fn solve_assignment(cost: &dyn Fn(usize, usize) -> f64, n: usize) -> (Vec<usize>, f64) {
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-indexed internally; column 0 is the virtual start of each
    // augmenting search.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost(i, row_to_col[i])).sum();
    (row_to_col, total)
}

/// Matching between boxes and target-frame annotations; handles count
/// mismatches via padding.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchOutcome {
    /// For each box, the index of its ground-truth partner, or `None` when
    /// the box went unmatched (padding won, or it projects behind the
    /// camera) and must stay unsupervised.
    pub gt_for_box: Vec<Option<usize>>,
    /// Sum of the matched real pairs' costs (padding excluded).
    pub matched_cost: f64,
}

/// Pair optimized boxes with the target frame's 2D boxes. The pairwise cost
/// is the single-frame projection loss; count mismatches are padded with
/// [`UNMATCHABLE_COST`], and boxes assigned to padding come back as `None`.
pub fn match_boxes_to_gt(
    boxes: &[BoundBox<f64>],
    target: &CameraFrame,
    gt: &[Box2D],
    w: &LossWeights,
) -> Result<MatchOutcome, LossError> {
    let nb = boxes.len();
    let ng = gt.len();
    let n = nb.max(ng);
    if n == 0 {
        return Ok(MatchOutcome {
            gt_for_box: Vec::new(),
            matched_cost: 0.0,
        });
    }
    let mut cost = vec![vec![UNMATCHABLE_COST; n]; n];
    for (i, geom) in boxes.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if let Some(c) = pairwise_cost(geom, target, g, w) {
                cost[i][j] = c;
            }
        }
    }
    let matching = hungarian_match(&cost)?;
    let mut matched_cost = 0.0;
    let gt_for_box = (0..nb)
        .map(|i| {
            let j = matching.permutation[i];
            let real = j < ng && cost[i][j] < UNMATCHABLE_COST;
            if real {
                matched_cost += cost[i][j];
            }
            real.then_some(j)
        })
        .collect();
    Ok(MatchOutcome {
        gt_for_box,
        matched_cost,
    })
}
