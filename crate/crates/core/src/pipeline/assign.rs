//! Minimum-cost assignment of subjects (rows) to boxes (columns).

use super::{Assignment, PipelineError, RejectReason, Verdict};

/// Shortest-augmenting-path Hungarian method with row/column potentials.
/// Needs `rows <= cols`; returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = if n == 0 { 0 } else { cost[0].len() };
    assert!(n <= m, "hungarian needs rows <= cols");
    // 1-based potentials; p[j] is the row matched to column j (0 = free)
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

fn total(cost: &[Vec<f64>], cols: &[usize]) -> f64 {
    cols.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

/// Best cost of the rows `from..` over the columns not in `used`.
fn best_rest(cost: &[Vec<f64>], from: usize, used: &[bool]) -> f64 {
    let free: Vec<usize> = (0..used.len()).filter(|&j| !used[j]).collect();
    let sub: Vec<Vec<f64>> = cost[from..].iter().map(|r| free.iter().map(|&j| r[j]).collect()).collect();
    if sub.is_empty() {
        return 0.0;
    }
    let cols = hungarian(&sub);
    total(&sub, &cols)
}

/// Minimum-total-cost injective assignment of every subject.
///
/// Among optimal assignments the lexicographically smallest box sequence
/// wins: subjects are fixed in order, each to the lowest box that still
/// admits an optimal completion. Costs within `1e-9 * (1 + |optimum|)` of the
/// optimum count as optimal. More subjects than boxes is a rejection, not an
/// error.
pub fn assign(cost: &[Vec<f64>]) -> Result<Assignment, PipelineError> {
    let m = cost.len();
    if m == 0 {
        return Err(PipelineError::BadCostMatrix);
    }
    let n = cost[0].len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(PipelineError::BadCostMatrix);
    }
    for (row, r) in cost.iter().enumerate() {
        if let Some(col) = r.iter().position(|c| !c.is_finite()) {
            return Err(PipelineError::NonFiniteCost { row, col });
        }
    }
    if m > n {
        return Ok(Assignment {
            pairs: Vec::new(),
            total_cost: None,
            verdict: Verdict::Rejected(vec![RejectReason::IncompleteMatching { subjects: m, boxes: n }]),
        });
    }
    let best = total(cost, &hungarian(cost));
    let tol = 1e-9 * (1.0 + best.abs());
    let mut used = vec![false; n];
    let mut fixed = 0.0;
    let mut cols = Vec::with_capacity(m);
    for i in 0..m {
        let mut pick = None;
        for j in 0..n {
            if used[j] {
                continue;
            }
            used[j] = true;
            let c = fixed + cost[i][j] + best_rest(cost, i + 1, &used);
            used[j] = false;
            if c <= best + tol {
                pick = Some(j);
                break;
            }
        }
        // some box always admits an optimal completion; fall back defensively
        let pick = pick.unwrap_or_else(|| (0..n).find(|&j| !used[j]).unwrap());
        used[pick] = true;
        fixed += cost[i][pick];
        cols.push(pick);
    }
    Ok(Assignment {
        pairs: cols.iter().copied().enumerate().collect(),
        total_cost: Some(total(cost, &cols)),
        verdict: Verdict::Accepted,
    })
}

/// Exhaustive minimum over all injective maps (small matrices only);
/// `None` when there are more rows than columns.
pub fn brute_force_min_cost(cost: &[Vec<f64>]) -> Option<f64> {
    fn rec(cost: &[Vec<f64>], i: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if i == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                rec(cost, i + 1, used, acc + cost[i][j], best);
                used[j] = false;
            }
        }
    }
    let n = cost.first().map_or(0, Vec::len);
    if cost.len() > n {
        return None;
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; n], 0.0, &mut best);
    Some(if cost.is_empty() { 0.0 } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let a = assign(&[vec![0.1, 0.9], vec![0.8, 0.2]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert!((a.total_cost.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(a.verdict, Verdict::Accepted);

        let r = assign(&[vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]]).unwrap();
        assert_eq!(r.verdict, Verdict::Rejected(vec![RejectReason::IncompleteMatching { subjects: 3, boxes: 2 }]));
        assert_eq!(r.total_cost, None);

        let one = assign(&[vec![0.42]]).unwrap();
        assert_eq!((one.pairs, one.total_cost), (vec![(0, 0)], Some(0.42)));
    }

    #[test]
    fn ties_pick_lexicographically_smallest() {
        let a = assign(&[vec![0.5; 3], vec![0.5; 3]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        // {0->0, 1->1} and {0->1, 1->0} both cost 0.3 (up to rounding)
        let a = assign(&[vec![0.3, 0.1], vec![0.2, 0.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn errors() {
        assert_eq!(assign(&[vec![f64::NAN]]).unwrap_err(), PipelineError::NonFiniteCost { row: 0, col: 0 });
        assert_eq!(assign(&[]).unwrap_err(), PipelineError::BadCostMatrix);
        assert_eq!(assign(&[vec![0.1], vec![0.1, 0.2]]).unwrap_err(), PipelineError::BadCostMatrix);
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..=5, 1usize..=5).prop_flat_map(|(m, n)| prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), m))
    }

    proptest! {
        #[test]
        fn optimal_and_injective(c in matrix()) {
            let a = assign(&c).unwrap();
            match brute_force_min_cost(&c) {
                Some(best) => {
                    prop_assert!((a.total_cost.unwrap() - best).abs() < 1e-9);
                    let mut boxes: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
                    boxes.sort_unstable();
                    boxes.dedup();
                    prop_assert_eq!(boxes.len(), c.len());
                }
                None => prop_assert!(matches!(a.verdict, Verdict::Rejected(_))),
            }
        }

        #[test]
        fn row_shift_keeps_assignment(c in matrix(), row in 0usize..5, k in -3.0f64..3.0) {
            prop_assume!(c.len() <= c[0].len());
            let row = row % c.len();
            // quantize so shifted ties stay ties
            let q = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|v| (v * 64.0).round() / 64.0).collect()).collect::<Vec<Vec<f64>>>();
            let kq = (k * 64.0).round() / 64.0;
            let base = q(&c);
            let moved: Vec<Vec<f64>> = base.iter().enumerate().map(|(i, r)| r.iter().map(|v| if i == row { v + kq } else { *v }).collect()).collect();
            prop_assert_eq!(assign(&base).unwrap().pairs, assign(&moved).unwrap().pairs);
        }
    }
}
