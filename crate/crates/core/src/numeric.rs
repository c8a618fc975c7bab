//! Small summation and regression helpers.

/// Kahan-Babuska (Neumaier) compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
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

const PAIRWISE_BLOCK: usize = 64;

/// Pairwise sum of `f(v)` over `values`; the split points depend only on the length.
pub fn pairwise_sum_by(values: &[f64], f: &impl Fn(f64) -> f64) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().map(|&v| f(v)).sum();
    }
    let mid = values.len() / 2;
    pairwise_sum_by(&values[..mid], f) + pairwise_sum_by(&values[mid..], f)
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    pairwise_sum_by(values, &|v| v)
}

/// Ordinary least squares fit of `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero when only two points are fitted.
    pub stderr: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Option<OlsFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(OlsFit {
        slope,
        intercept,
        stderr,
    })
}

/// Mean and unbiased variance.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    let var = if values.len() > 1 {
        pairwise_sum_by(values, &|v| (v - mean) * (v - mean)) / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}
