//! Pareto front extraction over (maximize accuracy, minimize cost).

use super::{EvalRecord, RewardSpec};

/// Indices of the non-dominated points among `(accuracy, cost)` pairs, ties
/// kept, in input order. A point dominates another when it is no worse on
/// both axes and strictly better on at least one.
pub fn pareto_front_indices(points: &[(f64, f64)]) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    // Sweep in ascending cost; a point survives iff no strictly cheaper point
    // has accuracy >= its own, and it has the maximum accuracy within its own
    // cost value.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .1
            .partial_cmp(&points[b].1)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut front = Vec::new();
    let mut best_acc_cheaper = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        // Group of equal cost.
        let cost = points[order[i]].1;
        let mut j = i;
        let mut group_max = f64::NEG_INFINITY;
        while j < order.len() && points[order[j]].1 == cost {
            group_max = group_max.max(points[order[j]].0);
            j += 1;
        }
        if group_max > best_acc_cheaper {
            for &idx in &order[i..j] {
                if points[idx].0 == group_max {
                    front.push(idx);
                }
            }
        }
        best_acc_cheaper = best_acc_cheaper.max(group_max);
        i = j;
    }
    front.sort_unstable();
    front
}

/// Pareto front of a history under the reward spec's cost axis (energy for
/// accuracy-energy rewards, latency for accuracy-latency). Returns indices
/// into `history`.
pub fn pareto_front(history: &[EvalRecord], spec: &RewardSpec) -> Vec<usize> {
    let points: Vec<(f64, f64)> = history
        .iter()
        .map(|r| (r.accuracy, spec.cost_metric(&r.cost)))
        .collect();
    pareto_front_indices(&points)
}
