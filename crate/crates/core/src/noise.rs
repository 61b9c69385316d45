//! Space-time Gaussian noise on a periodic grid.
//!
//! Each time step gets an independent slice `ΔW_j` with
//! `Cov[ΔW_j, ΔW_k] = dt · F_grid(x_j - x_k)`, where `F_grid` is the
//! band-limited periodization of `f`:
//!
//! ```text
//! F_grid(x) = L^{-d} Σ_m f̂(2πm/L) e^{2πi m·x/L},   m ∈ {-n/2, …, n/2 - 1}^d.
//! ```
//!
//! For the Dirac mass this is `mass/dx^d` at lag 0 and zero at every other
//! grid lag, i.e. cell-averaged white noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::fft::FftNd;
use crate::spectral::CovarianceMeasure;

/// Periodic grid `[0, L)^d` with `n` cells per axis. Cell `j` covers
/// `[j·dx, (j+1)·dx)`; arrays are row-major with axis 0 slowest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: usize,
    pub length: f64,
    pub n: usize,
    pub dx: f64,
    pub dt: f64,
}

impl Grid {
    pub fn new(d: usize, length: f64, n: usize, dt: f64) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(invalid("d", format!("{d} not in 1..=3")));
        }
        if !n.is_power_of_two() || n < 2 {
            return Err(invalid("n", format!("{n} must be a power of two ≥ 2")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(invalid("length", format!("{length} must be finite and > 0")));
        }
        let dx = length / n as f64;
        let limit = dx * dx / (2.0 * d as f64);
        if !(dt > 0.0) {
            return Err(invalid("dt", format!("{dt} must be > 0")));
        }
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Unstable { dt, limit });
        }
        Ok(Self {
            d,
            length,
            n,
            dx,
            dt,
        })
    }

    /// Grid with the largest stable step `dt = dx²/(2d)`.
    pub fn with_max_dt(d: usize, length: f64, n: usize) -> Result<Self> {
        let dx = length / n as f64;
        Self::new(d, length, n, dx * dx / (2.0 * d as f64))
    }

    /// Smallest grid of spacing `dx` with `L > 2·extent + 8√t`.
    pub fn sized_for(d: usize, dx: f64, extent: f64, t: f64, dt: Option<f64>) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(invalid("dx", format!("{dx} must be > 0")));
        }
        let need = 2.0 * extent + 8.0 * t.max(0.0).sqrt();
        let cells = ((need / dx).floor() as usize + 1).next_power_of_two().max(2);
        let length = cells as f64 * dx;
        let dt = dt.unwrap_or(dx * dx / (2.0 * d as f64));
        Self::new(d, length, cells, dt)
    }

    pub fn stability_limit(&self) -> f64 {
        self.dx * self.dx / (2.0 * self.d as f64)
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(self.d as i32)
    }

    /// Number of steps that reach `t`, rejecting a `t` that is not a
    /// multiple of `dt`.
    pub fn steps_to(&self, t: f64) -> Result<usize> {
        if t < 0.0 {
            return Err(invalid("t", format!("{t} must be ≥ 0")));
        }
        let k = (t / self.dt).round();
        if (k * self.dt - t).abs() > 1e-9 * t.max(self.dt) {
            return Err(invalid("t", format!("{t} is not a multiple of dt = {}", self.dt)));
        }
        Ok(k as usize)
    }

    /// `L > 2·extent + 8√t`.
    pub fn fits(&self, extent: f64, t: f64) -> bool {
        self.length > 2.0 * extent + 8.0 * t.max(0.0).sqrt()
    }

    /// Multi-index of flat cell `i`.
    pub fn unflatten(&self, mut i: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.d).rev() {
            out[a] = i % self.n;
            i /= self.n;
        }
        out
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().take(self.d).fold(0, |acc, &k| acc * self.n + k)
    }

    /// Flat index shifted by `lag` cells along `axis`, periodically.
    pub fn shift(&self, i: usize, axis: usize, lag: isize) -> usize {
        let stride = self.n.pow((self.d - 1 - axis) as u32);
        let k = (i / stride) % self.n;
        let nk = (k as isize + lag).rem_euclid(self.n as isize) as usize;
        i - k * stride + nk * stride
    }

    /// Signed frequency index of FFT bin `k`.
    pub fn signed_mode(&self, k: usize) -> isize {
        if k < self.n / 2 {
            k as isize
        } else {
            k as isize - self.n as isize
        }
    }
}

/// Counter-based stream key. The ChaCha key is the little-endian encoding of
/// `(seed, tag, replica, step)`, so any stream can be regenerated
/// independently of thread scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub tag: u64,
    pub replica: u64,
    pub step: u64,
}

impl RngStream {
    pub fn new(seed: u64, tag: u64, replica: u64, step: u64) -> Self {
        Self {
            seed,
            tag,
            replica,
            step,
        }
    }

    pub fn at_step(self, step: u64) -> Self {
        Self { step, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (chunk, v) in key
            .chunks_exact_mut(8)
            .zip([self.seed, self.tag, self.replica, self.step])
        {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// Per-mode variances of the synthesized field, in FFT bin order.
#[derive(Debug, Clone)]
pub struct SpectralWeights {
    pub grid: Grid,
    pub weights: Vec<f64>,
    /// Sum of the negative parts removed before synthesis.
    pub clipped_mass: f64,
    flat: bool,
}

impl SpectralWeights {
    /// `F_grid` at every grid lag, by inverse DFT of the weights.
    pub fn grid_covariance(&self) -> Vec<f64> {
        let mut buf: Vec<Complex64> = self.weights.iter().map(|&w| Complex64::new(w, 0.0)).collect();
        FftNd::new(self.grid.n, self.grid.d).inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// `F_grid(0)`.
    pub fn cell_variance(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }

    pub fn warning(&self) -> Option<String> {
        (self.clipped_mass > 1e-8).then(|| {
            format!("synthesis warning: clipped {:.3e} of negative spectral weight", self.clipped_mass)
        })
    }
}

/// `w_m = f̂(2πm/L) / L^d` over the `n^d` modes of `grid`.
pub fn spectral_weights(grid: &Grid, f: &CovarianceMeasure) -> Result<SpectralWeights> {
    f.check_dalang()?;
    if f.dimension != grid.d {
        return Err(invalid(
            "dimension",
            format!("covariance has d = {}, grid has d = {}", f.dimension, grid.d),
        ));
    }
    let vol = grid.length.powi(grid.d as i32);
    let mut clipped = 0.0;
    let mut z = vec![0.0; grid.d];
    let weights = (0..grid.cells())
        .map(|i| {
            let idx = grid.unflatten(i);
            for a in 0..grid.d {
                z[a] = 2.0 * PI * grid.signed_mode(idx[a]) as f64 / grid.length;
            }
            let w = f.fourier(&z) / vol;
            if w < 0.0 {
                clipped -= w;
                0.0
            } else {
                w
            }
        })
        .collect();
    Ok(SpectralWeights {
        grid: *grid,
        weights,
        clipped_mass: clipped,
        flat: f.is_dirac(),
    })
}

/// One time step of noise increments, in units of noise × time.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSlice {
    pub values: Vec<f64>,
    pub dt: f64,
    pub stream: RngStream,
}

/// Reusable synthesis workspace for one thread.
pub struct NoiseSynth<'a> {
    weights: &'a SpectralWeights,
    fft: Option<FftNd>,
    buf: Vec<Complex64>,
    conj: Vec<usize>,
}

impl<'a> NoiseSynth<'a> {
    pub fn new(weights: &'a SpectralWeights) -> Self {
        let grid = weights.grid;
        let (fft, buf, conj) = if weights.flat {
            (None, Vec::new(), Vec::new())
        } else {
            let conj = (0..grid.cells())
                .map(|i| {
                    let idx = grid.unflatten(i);
                    let mut c = [0; 3];
                    for a in 0..grid.d {
                        c[a] = (grid.n - idx[a]) % grid.n;
                    }
                    grid.flatten(&c)
                })
                .collect();
            (
                Some(FftNd::new(grid.n, grid.d)),
                vec![Complex64::new(0.0, 0.0); grid.cells()],
                conj,
            )
        };
        Self {
            weights,
            fft,
            buf,
            conj,
        }
    }

    /// Writes one slice into `out`.
    pub fn fill(&mut self, dt: f64, stream: &RngStream, out: &mut [f64]) {
        let cells = self.weights.grid.cells();
        assert_eq!(out.len(), cells);
        if dt == 0.0 {
            out.fill(0.0);
            return;
        }
        let mut rng = stream.rng();
        if self.weights.flat {
            let sd = (dt * self.weights.weights[0] * cells as f64).sqrt();
            for v in out.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v = sd * g;
            }
            return;
        }
        for i in 0..cells {
            let j = self.conj[i];
            let w = self.weights.weights[i];
            if j == i {
                let g: f64 = rng.sample(StandardNormal);
                self.buf[i] = Complex64::new((dt * w).sqrt() * g, 0.0);
            } else if i < j {
                let s = (0.5 * dt * w).sqrt();
                let g1: f64 = rng.sample(StandardNormal);
                let g2: f64 = rng.sample(StandardNormal);
                self.buf[i] = Complex64::new(s * g1, s * g2);
                self.buf[j] = Complex64::new(s * g1, -s * g2);
            }
        }
        self.fft.as_mut().expect("spectral path").inverse(&mut self.buf);
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.re;
        }
    }

    /// Largest imaginary residue of the last synthesized field.
    pub fn last_imaginary_residue(&self) -> f64 {
        self.buf.iter().map(|c| c.im.abs()).fold(0.0, f64::max)
    }
}

pub fn sample_noise_slice(weights: &SpectralWeights, dt: f64, stream: RngStream) -> NoiseSlice {
    let mut values = vec![0.0; weights.grid.cells()];
    NoiseSynth::new(weights).fill(dt, &stream, &mut values);
    NoiseSlice { values, dt, stream }
}

/// Lag-indexed covariance estimates along axis 0, using the known zero mean.
#[derive(Debug, Clone, Serialize)]
pub struct NoiseCovariance {
    pub lags: Vec<usize>,
    pub spatial: Vec<f64>,
    pub spatial_se: Vec<f64>,
    /// Covariance between consecutive slices at the same lags.
    pub cross_time: Vec<f64>,
    pub cross_time_se: Vec<f64>,
    /// Set when two consecutive slices are identical.
    pub degenerate: bool,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn empirical_noise_covariance(
    grid: &Grid,
    slices: &[NoiseSlice],
    max_lag: usize,
) -> Result<NoiseCovariance> {
    if slices.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: slices.len(),
        });
    }
    let cells = grid.cells();
    let lag_avg = |a: &[f64], b: &[f64], lag: usize| {
        (0..cells)
            .map(|i| a[i] * b[grid.shift(i, 0, lag as isize)])
            .sum::<f64>()
            / cells as f64
    };
    let lags: Vec<usize> = (0..=max_lag).collect();
    let mut spatial = Vec::new();
    let mut spatial_se = Vec::new();
    let mut cross = Vec::new();
    let mut cross_se = Vec::new();
    for &lag in &lags {
        let per: Vec<f64> = slices.iter().map(|s| lag_avg(&s.values, &s.values, lag)).collect();
        let (m, se) = mean_and_se(&per);
        spatial.push(m);
        spatial_se.push(se);
        let per: Vec<f64> = slices
            .windows(2)
            .map(|w| lag_avg(&w[0].values, &w[1].values, lag))
            .collect();
        let (m, se) = mean_and_se(&per);
        cross.push(m);
        cross_se.push(se);
    }
    let degenerate = slices.windows(2).any(|w| w[0].values == w[1].values);
    Ok(NoiseCovariance {
        lags,
        spatial,
        spatial_se,
        cross_time: cross,
        cross_time_se: cross_se,
        degenerate,
    })
}

/// Writes `u64` header length, JSON header, then little-endian `f64` data.
pub fn write_dump<W: Write>(mut w: W, header: &serde_json::Value, data: &[f64]) -> Result<()> {
    let head = serde_json::to_vec(header)?;
    w.write_all(&(head.len() as u64).to_le_bytes())?;
    w.write_all(&head)?;
    let mut bytes = Vec::with_capacity(8 * data.len());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_dump<R: Read>(mut r: R) -> Result<(serde_json::Value, Vec<f64>)> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut head = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut head)?;
    let header = serde_json::from_slice(&head)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(invalid("dump", "payload is not a whole number of f64 values"));
    }
    let data = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, data))
}

impl NoiseSlice {
    pub fn dump<W: Write>(&self, grid: &Grid, w: W) -> Result<()> {
        let header = serde_json::json!({
            "kind": "noise_slice",
            "grid": grid,
            "dt": self.dt,
            "stream": self.stream,
        });
        write_dump(w, &header, &self.values)
    }
}
