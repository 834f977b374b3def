//! Small statistics helpers for metric series: moving averages and the
//! slope diagnostics the experiment reports use.

/// Simple moving average with the given window; the first `window - 1`
/// entries average the available prefix.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (i, &v) in series.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= series[i - w];
        }
        let count = (i + 1).min(w);
        out.push(acc / count as f64);
    }
    out
}

/// Ordinary least-squares slope of `y` against its index.
pub fn ols_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (v - mean_y);
        den += dx * dx;
    }
    num / den
}

/// OLS slope with a Newey-West standard error (Bartlett kernel), robust to
/// the autocorrelation metric series carry. Returns `(slope, std_error)`.
pub fn slope_with_robust_se(y: &[f64], max_lag: usize) -> (f64, f64) {
    let n = y.len();
    if n < 3 {
        return (0.0, f64::INFINITY);
    }
    let slope = ols_slope(y);
    let mean_x = (n as f64 - 1.0) / 2.0;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = (0..n).map(|i| (i as f64 - mean_x).powi(2)).sum();
    let intercept = mean_y - slope * mean_x;
    let resid: Vec<f64> = (0..n).map(|i| y[i] - intercept - slope * i as f64).collect();
    let score: Vec<f64> = (0..n).map(|i| (i as f64 - mean_x) * resid[i]).collect();
    let lag = max_lag.min(n - 1);
    let mut s = score.iter().map(|v| v * v).sum::<f64>();
    for l in 1..=lag {
        let w = 1.0 - l as f64 / (lag as f64 + 1.0);
        let mut cov = 0.0;
        for t in l..n {
            cov += score[t] * score[t - l];
        }
        s += 2.0 * w * cov;
    }
    let var = s / (sxx * sxx);
    (slope, var.max(0.0).sqrt())
}

/// Fraction of adjacent pairs where the series increases by more than `eps`.
pub fn increase_fraction(series: &[f64], eps: f64) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    let ups = series.windows(2).filter(|w| w[1] > w[0] + eps).count();
    ups as f64 / (series.len() - 1) as f64
}
