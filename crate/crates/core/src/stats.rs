//! Sample statistics used by the experiment reports: moments, the
//! Kolmogorov–Smirnov distance to a normal law, empirical characteristic
//! function gaps with a permutation null, and Wilson intervals.

use rand::seq::SliceRandom;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::RngStream;
use crate::special::{norm_cdf, norm_quantile};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the sample variance, `√((m₄ - s⁴)/R)`.
pub fn variance_se(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2).max(0.0) / n).sqrt()
}

/// `(E|X|^k)^{1/k}` from the sample.
pub fn abs_moment_norm(xs: &[f64], k: f64) -> f64 {
    (xs.iter().map(|x| x.abs().powf(k)).sum::<f64>() / xs.len() as f64).powf(1.0 / k)
}

/// Minimum sample size for [`ks_normal`].
pub const KS_MIN_SAMPLES: usize = 50;

/// `sup_x |F_R(x) - Φ((x - μ)/σ)|`.
pub fn ks_normal(samples: &[f64], mu: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance(var));
    }
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: samples.len(),
        });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let sd = var.sqrt();
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = norm_cdf((x - mu) / sd);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max))
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_99(r: usize) -> f64 {
    1.63 / (r as f64).sqrt()
}

/// Per-column phases `e^{i z x}` for `z ∈ {1, 2}`; negative `z` are conjugates.
struct Phases {
    cols: Vec<[Vec<Complex64>; 2]>,
}

impl Phases {
    fn new(columns: &[&[f64]]) -> Self {
        let cols = columns
            .iter()
            .map(|c| {
                [
                    c.iter().map(|&x| Complex64::from_polar(1.0, x)).collect(),
                    c.iter().map(|&x| Complex64::from_polar(1.0, 2.0 * x)).collect(),
                ]
            })
            .collect();
        Self { cols }
    }

    fn phase(&self, col: usize, z: i32, i: usize) -> Complex64 {
        let p = self.cols[col][(z.unsigned_abs() - 1) as usize][i];
        if z < 0 {
            p.conj()
        } else {
            p
        }
    }

    /// Gap for integer `z` in `{±1, ±2}^m`, with row `i` of column `j` read
    /// from `perm[j][i]`.
    fn gap(&self, z: &[i32], perm: &[Vec<usize>]) -> f64 {
        let r = self.cols[0][0].len();
        let mut joint = Complex64::new(0.0, 0.0);
        let mut marg = vec![Complex64::new(0.0, 0.0); z.len()];
        for i in 0..r {
            let mut prod = Complex64::new(1.0, 0.0);
            for (j, &zj) in z.iter().enumerate() {
                let p = self.phase(j, zj, perm[j][i]);
                prod *= p;
                marg[j] += p;
            }
            joint += prod;
        }
        let rf = r as f64;
        let prod_marg = marg.iter().fold(Complex64::new(1.0, 0.0), |acc, m| acc * (m / rf));
        (joint / rf - prod_marg).norm()
    }
}

/// `|Ê e^{iΣ z_j X_j} - Π_j Ê e^{i z_j X_j}|` for real `z`.
pub fn ecf_gap(columns: &[&[f64]], z: &[f64]) -> f64 {
    assert_eq!(columns.len(), z.len());
    let r = columns[0].len();
    let rf = r as f64;
    let mut joint = Complex64::new(0.0, 0.0);
    let mut marg = vec![Complex64::new(0.0, 0.0); z.len()];
    for i in 0..r {
        let mut phase = 0.0;
        for (j, col) in columns.iter().enumerate() {
            phase += z[j] * col[i];
            marg[j] += Complex64::from_polar(1.0, z[j] * col[i]);
        }
        joint += Complex64::from_polar(1.0, phase);
    }
    let prod = marg.iter().fold(Complex64::new(1.0, 0.0), |acc, m| acc * (m / rf));
    (joint / rf - prod).norm()
}

/// All `z ∈ {±1, ±2}^m` up to overall sign (the gap is invariant under `z → -z`).
pub fn z_grid(m: usize) -> Vec<Vec<i32>> {
    const VALUES: [i32; 4] = [1, 2, -1, -2];
    let total = 4usize.pow(m as u32);
    let mut out = Vec::new();
    for mut i in 0..total {
        let z: Vec<i32> = (0..m)
            .map(|_| {
                let v = VALUES[i % 4];
                i /= 4;
                v
            })
            .collect();
        if z[0] > 0 {
            out.push(z);
        }
    }
    out
}

fn max_gap(ph: &Phases, m: usize, perm: &[Vec<usize>]) -> f64 {
    z_grid(m).iter().map(|z| ph.gap(z, perm)).fold(0.0, f64::max)
}

/// `max_{z ∈ {±1,±2}^m} ecf_gap`.
pub fn ecf_gap_max(columns: &[&[f64]]) -> f64 {
    let r = columns[0].len();
    let ph = Phases::new(columns);
    let ident: Vec<Vec<usize>> = vec![(0..r).collect(); columns.len()];
    max_gap(&ph, columns.len(), &ident)
}

#[derive(Debug, Clone, Serialize)]
pub struct NullSummary {
    pub statistic: f64,
    pub p99: f64,
    pub mean: f64,
    pub std: f64,
    pub permutations: usize,
}

/// Permutation null of [`ecf_gap_max`]: columns `2..m` are shuffled
/// independently, which destroys the replica pairing and nothing else.
pub fn ecf_permutation_null(columns: &[&[f64]], permutations: usize, stream: RngStream) -> NullSummary {
    let r = columns[0].len();
    let m = columns.len();
    let ph = Phases::new(columns);
    let ident: Vec<Vec<usize>> = vec![(0..r).collect(); m];
    let statistic = max_gap(&ph, m, &ident);
    let mut rng = stream.rng();
    let mut null: Vec<f64> = (0..permutations)
        .map(|_| {
            let mut perm = ident.clone();
            for p in perm.iter_mut().skip(1) {
                p.shuffle(&mut rng);
            }
            max_gap(&ph, m, &perm)
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let idx = ((0.99 * permutations as f64).ceil() as usize).clamp(1, permutations.max(1)) - 1;
    NullSummary {
        statistic,
        p99: null.get(idx).copied().unwrap_or(f64::NAN),
        mean: if null.is_empty() { f64::NAN } else { mean(&null) },
        std: if null.len() < 2 { f64::NAN } else { variance(&null).sqrt() },
        permutations,
    }
}

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_900_4;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Normal quantiles `Φ^{-1}((i - ½)/R)`.
pub fn normal_scores(r: usize) -> Vec<f64> {
    (1..=r).map(|i| norm_quantile((i as f64 - 0.5) / r as f64)).collect()
}
