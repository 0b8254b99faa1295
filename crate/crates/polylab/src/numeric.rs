//! Small numeric utilities shared by the kernels and estimators.

/// Neumaier compensated summation. Keeps normalization sums accurate to a
/// few ulp independent of slice size.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Kahan::default()
    }

    #[inline(always)]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline(always)]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Stable log-sum-exp of a slice (max factored out).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut acc = Kahan::new();
    for &v in values {
        acc.add((v - m).exp());
    }
    m + acc.value().ln()
}

/// Sample mean and standard error (sd / sqrt(len)). Returns (mean, stderr);
/// stderr is 0 for a single sample.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 1, "mean_stderr on empty sample");
    let mut acc = Kahan::new();
    for &v in values {
        acc.add(v);
    }
    let mean = acc.value() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let mut ss = Kahan::new();
    for &v in values {
        let d = v - mean;
        ss.add(d * d);
    }
    let var = ss.value() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive_on_adversarial_sum() {
        let mut k = Kahan::new();
        k.add(1.0);
        for _ in 0..10_000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn lse_matches_direct() {
        let xs = [0.0, (2.0f64).ln(), (3.0f64).ln()];
        assert!((log_sum_exp(&xs) - (6.0f64).ln()).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn mean_stderr_basics() {
        let (m, se) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
        let (m, se) = mean_stderr(&[5.0]);
        assert_eq!((m, se), (5.0, 0.0));
    }
}
