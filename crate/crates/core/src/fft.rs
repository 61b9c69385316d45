//! Separable multi-dimensional FFT on a cubic `n^d` array in row-major order.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct FftNd {
    n: usize,
    d: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl FftNd {
    pub fn new(n: usize, d: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            d,
            forward,
            inverse,
            line: vec![Complex64::new(0.0, 0.0); n],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized transform with kernel `e^{-2πi k·j/n}`.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        let fft = Arc::clone(&self.forward);
        self.apply(fft.as_ref(), data);
    }

    /// Unnormalized transform with kernel `e^{+2πi k·j/n}`.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let fft = Arc::clone(&self.inverse);
        self.apply(fft.as_ref(), data);
    }

    fn apply(&mut self, fft: &dyn Fft<f64>, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.len());
        let n = self.n;
        if self.d == 1 {
            fft.process_with_scratch(data, &mut self.scratch);
            return;
        }
        // Last axis is contiguous.
        for row in data.chunks_exact_mut(n) {
            fft.process_with_scratch(row, &mut self.scratch);
        }
        let total = data.len();
        let mut stride = n;
        for _ in 1..self.d {
            let block = stride * n;
            for base in (0..total).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for k in 0..n {
                        self.line[k] = data[start + k * stride];
                    }
                    fft.process_with_scratch(&mut self.line, &mut self.scratch);
                    for k in 0..n {
                        data[start + k * stride] = self.line[k];
                    }
                }
            }
            stride = block;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive(data: &[Complex64], n: usize, d: usize, sign: f64) -> Vec<Complex64> {
        let total = n.pow(d as u32);
        let idx = |mut i: usize| {
            let mut v = vec![0; d];
            for a in (0..d).rev() {
                v[a] = i % n;
                i /= n;
            }
            v
        };
        (0..total)
            .map(|k| {
                let kv = idx(k);
                (0..total)
                    .map(|j| {
                        let jv = idx(j);
                        let phase: f64 = kv.iter().zip(&jv).map(|(a, b)| (a * b) as f64).sum();
                        data[j] * Complex64::from_polar(1.0, sign * 2.0 * PI * phase / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for (n, d) in [(8usize, 1usize), (4, 2), (4, 3)] {
            let total = n.pow(d as u32);
            let data: Vec<Complex64> = (0..total)
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let mut plan = FftNd::new(n, d);
            let mut fwd = data.clone();
            plan.forward(&mut fwd);
            let mut inv = data.clone();
            plan.inverse(&mut inv);
            let ef = naive(&data, n, d, -1.0);
            let ei = naive(&data, n, d, 1.0);
            for k in 0..total {
                assert!((fwd[k] - ef[k]).norm() < 1e-10);
                assert!((inv[k] - ei[k]).norm() < 1e-10);
            }
        }
    }
}
