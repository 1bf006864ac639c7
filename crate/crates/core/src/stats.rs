//! Small statistics toolkit: Welch's t-test, chi-square goodness of fit,
//! one-sample Kolmogorov-Smirnov against U(0,1) and Spearman correlation.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    /// Both samples had zero variance; p is 1 for equal means, else 0.
    pub degenerate: bool,
}

/// Two-sided Welch two-sample t-test of `b` against `a`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(invalid("welch test needs at least two observations per sample"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(invalid("samples must be finite"));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a) / a.len() as f64, variance(b) / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        let p_value = if ma == mb { 1.0 } else { 0.0 };
        return Ok(WelchResult {
            t: if ma == mb { 0.0 } else { f64::INFINITY.copysign(mb - ma) },
            df: (a.len() + b.len() - 2) as f64,
            p_value,
            degenerate: true,
        });
    }
    let t = (mb - ma) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| invalid(e.to_string()))?;
    let p_value = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
    Ok(WelchResult {
        t,
        df,
        p_value,
        degenerate: false,
    })
}

/// Pearson chi-square goodness of fit; returns (statistic, p-value).
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected_probs.len() || observed.len() < 2 {
        return Err(invalid("need matching observed/expected with >= 2 cells"));
    }
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(expected_probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).map_err(|e| invalid(e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}

/// KS test of `samples` against U(0,1); returns (D, asymptotic p-value).
pub fn ks_uniform(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(invalid("ks test needs samples"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i as f64 + 1.0) / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok((d, kolmogorov_survival(lambda)))
}

/// P(K > lambda) for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Average ranks (1-based), ties share their mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}
