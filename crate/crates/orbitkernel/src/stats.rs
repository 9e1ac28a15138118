//! Small numerical utilities shared by the estimators and the test harness:
//! compensated summation, batch-mean standard errors, a two-sample
//! Kolmogorov–Smirnov test, and Gauss quadrature rules built by the
//! Golub–Welsch eigenvalue method.

use nalgebra::{DMatrix, SymmetricEigen};

/// Neumaier-compensated accumulator. Summation order is fixed by the caller,
/// so results are reproducible regardless of thread count.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sum a slice with compensation.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Mean and standard error of a set of (batch) means.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "need at least two batches");
    let mean = compensated_sum(xs) / n as f64;
    let mut ss = CompensatedSum::new();
    for &x in xs {
        let d = x - mean;
        ss.add(d * d);
    }
    let var = ss.value() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F1 - F2|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).unwrap());
    ys.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        // Advance both sides through the current value so ties never produce
        // a spurious mid-jump difference.
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at significance `alpha`:
/// `c(alpha) * sqrt((n + m) / (n m))` with `c = sqrt(-ln(alpha/2)/2)`.
pub fn ks_critical(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Nodes and weights from a symmetric Jacobi matrix (Golub–Welsch).
fn golub_welsch(offdiag: &[f64], mu0: f64) -> Vec<(f64, f64)> {
    let n = offdiag.len() + 1;
    let mut j = DMatrix::zeros(n, n);
    for (k, &b) in offdiag.iter().enumerate() {
        j[(k, k + 1)] = b;
        j[(k + 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let w = mu0 * eig.eigenvectors[(0, k)] * eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], w)
        })
        .collect();
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let offdiag: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&offdiag, 2.0)
}

/// Gauss–Hermite rule for the weight `exp(-x^2)` on the real line.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let offdiag: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    golub_welsch(&offdiag, std::f64::consts::PI.sqrt())
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gauss_legendre(n)
        .into_iter()
        .map(|(x, w)| (mid + half * x, half * w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn compensated_sum_handles_cancellation() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(&xs), 2.0);
    }

    #[test]
    fn gauss_legendre_low_order_moments() {
        for n in [2usize, 5, 8, 16] {
            let rule = gauss_legendre(n);
            let m0: f64 = rule.iter().map(|(_, w)| w).sum();
            let m2: f64 = rule.iter().map(|(x, w)| w * x * x).sum();
            assert_abs_diff_eq!(m0, 2.0, epsilon = 1e-13);
            assert_abs_diff_eq!(m2, 2.0 / 3.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        let rule = gauss_hermite(20);
        let m0: f64 = rule.iter().map(|(_, w)| w).sum();
        let m2: f64 = rule.iter().map(|(x, w)| w * x * x).sum();
        let pi_sqrt = std::f64::consts::PI.sqrt();
        assert_abs_diff_eq!(m0, pi_sqrt, epsilon = 1e-12);
        assert_abs_diff_eq!(m2, pi_sqrt / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ks_statistic_basics() {
        let a = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        let b = [10.1, 10.2, 10.3, 10.4];
        assert_abs_diff_eq!(ks_two_sample(&a, &b), 1.0, epsilon = 1e-15);
        // Tabulated c(0.01) is about 1.628.
        let c = ks_critical(0.01, 100, 100) / (0.02f64).sqrt();
        assert!((c - 1.628).abs() < 2e-3, "c(1%) = {c}");
    }

    #[test]
    fn mean_stderr_of_constant_batches() {
        let (m, se) = mean_and_stderr(&[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }
}
