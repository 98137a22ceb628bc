//! Small shared optimization primitives.

/// Projects `v` in place onto the capped simplex `{ w ≥ 0, Σ w ≤ 1 }`.
///
/// Negative entries are clipped first; if the clipped vector still sums to
/// more than one it is projected onto the probability simplex with the usual
/// sorting/threshold rule. Ties are resolved deterministically by index
/// order via a stable sort.
pub(crate) fn project_capped_simplex(v: &mut [f64]) {
    for w in v.iter_mut() {
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    let sum: f64 = v.iter().sum();
    if sum <= 1.0 {
        return;
    }
    // Threshold projection onto { w >= 0, sum w = 1 }: find the largest
    // prefix of the descending sort whose running mean excess stays below
    // the prefix values, and shift by that excess.
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, w) in sorted.iter().enumerate() {
        cumulative += w;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if *w > candidate {
            theta = candidate;
        }
    }
    for w in v.iter_mut() {
        *w = (*w - theta).max(0.0);
    }
}

/// Infinity norm of the difference of two equal-length slices.
pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
