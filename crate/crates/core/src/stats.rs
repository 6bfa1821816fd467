//! Small statistics helpers: reproducible sums, confidence intervals, log-log fits.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Pairwise summation; result depends only on the slice order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub variance: f64,
    /// 95% half-width of the mean.
    pub ci_halfwidth: f64,
}

pub fn mean_ci(xs: &[f64]) -> MeanCi {
    let n = xs.len();
    if n == 0 {
        return MeanCi { mean: f64::NAN, variance: f64::NAN, ci_halfwidth: f64::NAN };
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return MeanCi { mean, variance: 0.0, ci_halfwidth: 0.0 };
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let variance = pairwise_sum(&sq) / (n - 1) as f64;
    MeanCi { mean, variance, ci_halfwidth: Z95 * (variance / n as f64).sqrt() }
}

/// Least-squares fit `y ≈ c · x^p` on positive data. Returns `(p, c)`.
pub fn power_law_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let (slope, intercept) = linear_fit(&pts)?;
    Some((slope, intercept.exp()))
}

/// Least-squares line through `(x, y)` points. Returns `(slope, intercept)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}
