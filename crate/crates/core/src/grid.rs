/// Inclusive grid `{0, step, 2 step, ..., max}`.
///
/// When `max / step` is (numerically) an integer `n`, point `i` is computed as
/// `i * max / n`, so `0.5` is hit exactly on a `0.001` grid. Otherwise the
/// multiples of `step` below `max` are followed by `max` itself.
pub fn inclusive(step: f64, max: f64) -> Vec<f64> {
    if max == 0.0 {
        return vec![0.0];
    }
    let ratio = max / step;
    let n = ratio.round();
    if n >= 1.0 && (ratio - n).abs() < 1e-9 * n.max(1.0) {
        let n = n as usize;
        return (0..=n).map(|i| i as f64 * max / n as f64).collect();
    }
    let mut out: Vec<f64> = (0..).map(|i| i as f64 * step).take_while(|&t| t < max).collect();
    out.push(max);
    out
}
