//! Small shared utilities.

/// Kahan-compensated sum.
pub fn kahan_sum(vals: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for v in vals {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// Least-squares slope of `log(y)` against `log(x)`.
///
/// Used to fit convergence orders from (h, error) tables. Points with
/// non-positive values are rejected by the caller.
pub fn fit_log_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in lx.iter().zip(&ly) {
        num += (a - mx) * (b - my);
        den += (a - mx) * (a - mx);
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let x: [f64; 3] = [0.125, 0.0625, 0.03125];
        let y: Vec<f64> = x.iter().map(|h| 3.0 * h.powi(3)).collect();
        let s = fit_log_slope(&x, &y);
        assert!((s - 3.0).abs() < 1e-12);
    }
}
