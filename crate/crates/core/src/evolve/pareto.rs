use std::cmp::Ordering;

use super::ScoreVector;

/// Pareto dominance under minimization. Any finite score dominates a
/// diverged one; two diverged scores are incomparable.
pub fn dominates(a: &ScoreVector, b: &ScoreVector) -> bool {
    match (a.diverged, b.diverged) {
        (true, _) => false,
        (false, true) => true,
        (false, false) => {
            let mut strictly = false;
            for (x, y) in a.objectives.iter().zip(&b.objectives) {
                if x > y {
                    return false;
                }
                strictly |= x < y;
            }
            strictly
        }
    }
}

/// Fast non-dominated sort; fronts hold indices into `scores`, best first.
pub fn non_dominated_sort(scores: &[ScoreVector]) -> Vec<Vec<usize>> {
    let n = scores.len();
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&scores[i], &scores[j]) {
                dominated_by_me[i].push(j);
                count[j] += 1;
            } else if dominates(&scores[j], &scores[i]) {
                dominated_by_me[j].push(i);
                count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by_me[i] {
                count[j] -= 1;
                if count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Front index (0-based) of every score.
pub fn front_ranks(fronts: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut rank = vec![usize::MAX; n];
    for (r, front) in fronts.iter().enumerate() {
        for &i in front {
            rank[i] = r;
        }
    }
    rank
}

/// Crowding distance of each member of one front, in input order.
///
/// Per objective the front is sorted; the two extremes get infinity and
/// interior members add `(f[i+1] - f[i-1]) / (f_max - f_min)`. Objectives
/// with zero range contribute nothing.
pub fn crowding_distance(front: &[&[f64]]) -> Vec<f64> {
    let n = front.len();
    if n == 0 {
        return Vec::new();
    }
    let m = front[0].len();
    let mut dist = vec![0.0f64; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for k in 0..m {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| front[a][k].partial_cmp(&front[b][k]).unwrap_or(Ordering::Equal));
        let (lo, hi) = (front[order[0]][k], front[order[n - 1]][k]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if !(range > 0.0) || !range.is_finite() {
            continue;
        }
        for w in 1..n - 1 {
            let i = order[w];
            if dist[i].is_finite() {
                dist[i] += (front[order[w + 1]][k] - front[order[w - 1]][k]) / range;
            }
        }
    }
    dist
}

/// Ranks and crowding distances for a whole population.
pub fn rank_and_crowding(scores: &[ScoreVector]) -> (Vec<usize>, Vec<f64>) {
    let fronts = non_dominated_sort(scores);
    let ranks = front_ranks(&fronts, scores.len());
    let mut crowd = vec![0.0; scores.len()];
    for front in &fronts {
        let objs: Vec<&[f64]> = front.iter().map(|&i| scores[i].objectives.as_slice()).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&objs)) {
            crowd[i] = d;
        }
    }
    (ranks, crowd)
}

/// Volume dominated by `points` and bounded by `reference` (minimization).
/// Points not strictly better than the reference in every objective add
/// nothing.
pub fn hypervolume(points: &[Vec<f64>], reference: &[f64]) -> f64 {
    let pts: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| p.len() == reference.len() && p.iter().zip(reference).all(|(x, r)| x < r))
        .cloned()
        .collect();
    hv(pts, reference)
}

fn hv(mut pts: Vec<Vec<f64>>, reference: &[f64]) -> f64 {
    let d = reference.len();
    if pts.is_empty() || d == 0 {
        return 0.0;
    }
    if d == 1 {
        let best = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        return reference[0] - best;
    }
    let last = d - 1;
    pts.sort_by(|a, b| a[last].partial_cmp(&b[last]).unwrap_or(Ordering::Equal));
    let mut total = 0.0;
    for i in 0..pts.len() {
        let upper = if i + 1 < pts.len() { pts[i + 1][last] } else { reference[last] };
        let height = upper - pts[i][last];
        if height <= 0.0 {
            continue;
        }
        let slice: Vec<Vec<f64>> = pts[..=i].iter().map(|p| p[..last].to_vec()).collect();
        total += height * hv(slice, &reference[..last]);
    }
    total
}
