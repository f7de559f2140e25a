//! Small statistics toolkit: jackknife, two-sample KS, chi-square, regression.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sample mean and its standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (m, 0.0);
    }
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1) as f64;
    (m, (v / n as f64).sqrt())
}

/// Delete-one jackknife of an arbitrary statistic over replicas.
/// Returns (full-sample estimate, jackknife standard error).
pub fn jackknife<T, F>(items: &[T], stat: F) -> (f64, f64)
where
    F: Fn(&mut dyn Iterator<Item = &T>) -> f64,
{
    let n = items.len();
    let full = stat(&mut items.iter());
    if n < 2 {
        return (full, 0.0);
    }
    let loo: Vec<f64> = (0..n)
        .map(|k| stat(&mut items.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, x)| x)))
        .collect();
    let mbar = loo.iter().sum::<f64>() / n as f64;
    let var = loo.iter().map(|a| (a - mbar) * (a - mbar)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (full, var.sqrt())
}

/// Jackknife SE of a plain mean, computed in O(n).
pub fn jackknife_mean(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let s: f64 = x.iter().sum();
    let m = s / n as f64;
    if n < 2 {
        return (m, 0.0);
    }
    let loo: Vec<f64> = x.iter().map(|a| (s - a) / (n - 1) as f64).collect();
    let var = loo.iter().map(|a| (a - m) * (a - m)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (m, var.sqrt())
}

/// Two-sample Kolmogorov–Smirnov test: (D statistic, asymptotic p-value).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let sq = ne.sqrt();
    (d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d))
}

/// Complementary Kolmogorov distribution Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson chi-square goodness of fit against equal cell probabilities.
/// Returns (statistic, p-value).
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64) {
    let k = counts.len();
    let total: u64 = counts.iter().sum();
    let e = total as f64 / k as f64;
    let stat = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum::<f64>();
    let dist = ChiSquared::new((k - 1) as f64).expect("k ≥ 2");
    (stat, 1.0 - dist.cdf(stat))
}

/// Weighted least squares y ≈ a + b x. Returns (a, b, se_b).
pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    (my - b * mx, b, (1.0 / sxx).sqrt())
}

/// Ordinary least squares y ≈ a + b x. Returns (a, b).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let w = vec![1.0; x.len()];
    let (a, b, _) = weighted_linear_fit(x, y, &w);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jackknife_of_mean_matches_classical_se() {
        let x: Vec<f64> = (0..50).map(|k| ((k * 37) % 11) as f64).collect();
        let (m, se) = mean_se(&x);
        let (mj, sej) = jackknife_mean(&x);
        let (mg, seg) = jackknife(&x, |it| {
            let v: Vec<f64> = it.copied().collect();
            v.iter().sum::<f64>() / v.len() as f64
        });
        assert!((m - mj).abs() < 1e-12 && (se - sej).abs() < 1e-12);
        assert!((m - mg).abs() < 1e-12 && (se - seg).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // classical critical value: Q(1.358) ≈ 0.05
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.628) - 0.01).abs() < 5e-4);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|x| 2.0 - 0.5 * x).collect();
        let (a, b) = linear_fit(&x, &y);
        assert!((a - 2.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12);
    }
}
