//! Small numerical helpers shared by the experiment modules.

/// Least-squares slope of `log v` against `log t`.
pub fn loglog_slope(ts: &[f64], vs: &[f64]) -> f64 {
    assert_eq!(ts.len(), vs.len());
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(vs)
        .filter(|(t, v)| **t > 0.0 && **v > 0.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Pairwise summation in a fixed tree order, independent of thread count.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Geometric grid `start, start·factor, …` up to `stop` (inclusive within
/// rounding).
pub fn geometric_grid(start: f64, stop: f64, factor: f64) -> Vec<f64> {
    assert!(start > 0.0 && factor > 1.0 && stop >= start);
    let mut out = Vec::new();
    let mut k = 0i32;
    loop {
        let v = start * factor.powi(k);
        if v > stop * (1.0 + 1e-12) {
            break;
        }
        out.push(v);
        k += 1;
    }
    out
}
