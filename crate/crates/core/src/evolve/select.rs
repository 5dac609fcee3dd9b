use rand::seq::index;
use rand::Rng;

use crate::rng::GenomeRng;

/// Min-max normalization to `[0, 1]`; a constant list maps to zeros.
/// Non-finite entries are left untouched and ignored for the range.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let finite = values.iter().filter(|v| v.is_finite());
    let lo = finite.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.cloned().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                v
            } else if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                0.0
            }
        })
        .collect()
}

/// Sum of per-objective normalized values for each candidate, e.g.
/// `U(L) + U(P)` for loss and parameter count. Diverged candidates score
/// `+inf`.
pub fn scalarize(objectives: &[Vec<f64>], diverged: &[bool]) -> Vec<f64> {
    let n = objectives.len();
    if n == 0 {
        return Vec::new();
    }
    let m = objectives[0].len();
    let mut out = vec![0.0; n];
    for k in 0..m {
        let column: Vec<f64> = (0..n)
            .map(|i| if diverged[i] { f64::INFINITY } else { objectives[i][k] })
            .collect();
        for (o, u) in out.iter_mut().zip(normalize(&column)) {
            *o += u;
        }
    }
    for (o, &d) in out.iter_mut().zip(diverged) {
        if d {
            *o = f64::INFINITY;
        }
    }
    out
}

/// Samples `k` distinct members uniformly and returns the index of the best
/// under `better` (a strict "is better than" relation); ties are broken
/// uniformly at random.
pub fn tournament_select(
    n: usize,
    k: usize,
    rng: &mut GenomeRng,
    better: impl Fn(usize, usize) -> bool,
) -> usize {
    let k = k.clamp(1, n);
    let entrants = index::sample(rng, n, k).into_vec();
    let mut best: Vec<usize> = vec![entrants[0]];
    for &e in &entrants[1..] {
        if better(e, best[0]) {
            best = vec![e];
        } else if !better(best[0], e) {
            best.push(e);
        }
    }
    best[rng.random_range(0..best.len())]
}

/// Firefly light intensity of a scalar score.
pub fn fa_intensity(score: f64) -> f64 {
    1.0 / (1.0 + score)
}

/// Probability with which genome `i` adopts each gene of genome `j`: zero
/// unless `j` is brighter, otherwise `β0 (1 - exp(-γ (1 - r)))`.
pub fn fa_attraction(a_i: f64, a_j: f64, similarity: f64, beta0: f64, gamma: f64) -> f64 {
    if a_j > a_i {
        beta0 * (1.0 - (-gamma * (1.0 - similarity)).exp())
    } else {
        0.0
    }
}
