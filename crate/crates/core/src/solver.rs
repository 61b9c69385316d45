//! Explicit Euler and Picard schemes for
//!
//! ```text
//! ∂_t u = ½ Δu + σ(u) η,    u(0) ≡ 1,
//! ```
//!
//! on the periodic grid. Euler advances
//! `u_j ← u_j + (dt/2) Δ_h u_j + σ(u_j) ΔW_j` with the `(2d+1)`-point
//! Laplacian. Picard iterates the mild form on a fixed noise realization,
//! propagating with the heat semigroup `e^{-dt|ξ|²/2}` in Fourier space.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::fft::FftNd;
use crate::noise::{spectral_weights, write_dump, Grid, NoiseSlice, NoiseSynth, RngStream, SpectralWeights};
use crate::occupation::LipFunction;
use crate::spectral::CovarianceMeasure;

/// Magnitude above which a field is declared blown up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// The diffusion coefficient `σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaFunction {
    /// `σ ≡ c`.
    Constant { c: f64 },
    /// `σ(u) = c u`.
    Linear { c: f64 },
    /// `σ(u) = a + b u`.
    Affine { a: f64, b: f64 },
    /// Piecewise linear through `knots`, constant beyond the end knots.
    Tabulated { knots: Vec<(f64, f64)> },
}

impl SigmaFunction {
    pub fn constant(c: f64) -> Result<Self> {
        Self::Constant { c }.validated()
    }

    pub fn linear(c: f64) -> Result<Self> {
        Self::Linear { c }.validated()
    }

    pub fn affine(a: f64, b: f64) -> Result<Self> {
        Self::Affine { a, b }.validated()
    }

    pub fn tabulated(knots: Vec<(f64, f64)>) -> Result<Self> {
        Self::Tabulated { knots }.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Finite Lipschitz constant and `σ(1) ≠ 0`.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        if self.sigma1() == 0.0 {
            return Err(invalid("sigma", "σ(1) = 0 makes u ≡ 1"));
        }
        Ok(())
    }

    /// Like [`Self::validate`] but allows `σ(1) = 0`.
    pub fn check_shape(&self) -> Result<()> {
        let finite = match self {
            Self::Constant { c } | Self::Linear { c } => c.is_finite(),
            Self::Affine { a, b } => a.is_finite() && b.is_finite(),
            Self::Tabulated { knots } => {
                if knots.len() < 2 {
                    return Err(invalid("sigma.knots", "need at least two knots"));
                }
                if knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    return Err(invalid("sigma.knots", "abscissae must be strictly increasing"));
                }
                knots.iter().all(|(x, y)| x.is_finite() && y.is_finite())
            }
        };
        if !finite {
            return Err(invalid("sigma", "parameters must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Self::Constant { c } => *c,
            Self::Linear { c } => c * u,
            Self::Affine { a, b } => a + b * u,
            Self::Tabulated { knots } => interpolate(knots, u),
        }
    }

    /// `|σ(0)|`.
    pub fn sigma0(&self) -> f64 {
        self.eval(0.0).abs()
    }

    pub fn sigma1(&self) -> f64 {
        self.eval(1.0)
    }

    pub fn lip(&self) -> f64 {
        match self {
            Self::Constant { .. } => 0.0,
            Self::Linear { c } => c.abs(),
            Self::Affine { b, .. } => b.abs(),
            Self::Tabulated { knots } => knots
                .windows(2)
                .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Self::Constant { .. } => true,
            Self::Linear { c } => *c == 0.0,
            Self::Affine { b, .. } => *b == 0.0,
            Self::Tabulated { knots } => knots.iter().all(|k| k.1 == knots[0].1),
        }
    }
}

pub(crate) fn interpolate(knots: &[(f64, f64)], u: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if u <= first.0 {
        return first.1;
    }
    if u >= last.0 {
        return last.1;
    }
    let k = knots.partition_point(|p| p.0 <= u);
    let (x0, y0) = knots[k - 1];
    let (x1, y1) = knots[k];
    y0 + (y1 - y0) * (u - x0) / (x1 - x0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Picard { iterations: usize },
}

/// One realization of `u(t, ·)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub grid: Grid,
    pub time: f64,
    pub values: Vec<f64>,
    pub scheme: Scheme,
    /// Stream of the first step; step `k` uses `stream.at_step(k)`.
    pub stream: RngStream,
}

impl SolutionField {
    pub fn flat(grid: Grid, stream: RngStream) -> Self {
        Self {
            grid,
            time: 0.0,
            values: vec![1.0; grid.cells()],
            scheme: Scheme::Euler,
            stream,
        }
    }

    /// Binary snapshot in the noise-dump format.
    pub fn dump<W: Write>(&self, w: W) -> Result<()> {
        let header = serde_json::json!({
            "kind": "solution_field",
            "grid": self.grid,
            "time": self.time,
            "scheme": self.scheme,
            "stream": self.stream,
        });
        write_dump(w, &header, &self.values)
    }
}

/// `Δ_h u` on the periodic grid, written into `out`.
pub fn discrete_laplacian(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let n = grid.n;
    let inv = 1.0 / (grid.dx * grid.dx);
    if grid.d == 1 {
        out[0] = (u[n - 1] - 2.0 * u[0] + u[1]) * inv;
        for j in 1..n - 1 {
            out[j] = (u[j - 1] - 2.0 * u[j] + u[j + 1]) * inv;
        }
        out[n - 1] = (u[n - 2] - 2.0 * u[n - 1] + u[0]) * inv;
        return;
    }
    let diag = -2.0 * grid.d as f64;
    for (j, o) in out.iter_mut().enumerate() {
        *o = diag * u[j];
    }
    for axis in 0..grid.d {
        let stride = n.pow((grid.d - 1 - axis) as u32);
        for (j, o) in out.iter_mut().enumerate() {
            let k = (j / stride) % n;
            let up = if k + 1 == n { j - (n - 1) * stride } else { j + stride };
            let down = if k == 0 { j + (n - 1) * stride } else { j - stride };
            *o += u[up] + u[down];
        }
    }
    for o in out.iter_mut() {
        *o *= inv;
    }
}

fn check_blowup(values: &[f64], replica: u64, step: usize) -> Result<()> {
    for &v in values {
        if !(v.abs() <= BLOWUP_THRESHOLD) {
            return Err(Error::SolverBlowup {
                replica,
                step,
                value: v.abs(),
            });
        }
    }
    Ok(())
}

fn euler_update(
    grid: &Grid,
    sigma: &SigmaFunction,
    u: &mut [f64],
    lap: &mut [f64],
    noise: &[f64],
) {
    discrete_laplacian(grid, u, lap);
    let h = 0.5 * grid.dt;
    for ((uj, lj), wj) in u.iter_mut().zip(lap.iter()).zip(noise) {
        let s = sigma.eval(*uj);
        *uj += h * lj + s * wj;
    }
}

/// One explicit Euler step of length `slice.dt`.
pub fn step_euler(state: &SolutionField, sigma: &SigmaFunction, slice: &NoiseSlice) -> Result<SolutionField> {
    let grid = Grid {
        dt: slice.dt,
        ..state.grid
    };
    if slice.dt > grid.stability_limit() * (1.0 + 1e-12) {
        return Err(Error::Unstable {
            dt: slice.dt,
            limit: grid.stability_limit(),
        });
    }
    let mut next = state.clone();
    let mut lap = vec![0.0; grid.cells()];
    euler_update(&grid, sigma, &mut next.values, &mut lap, &slice.values);
    next.time += slice.dt;
    check_blowup(&next.values, state.stream.replica, slice.stream.step as usize)?;
    Ok(next)
}

/// Reusable per-thread Euler integrator.
pub struct Solver<'a> {
    grid: Grid,
    sigma: &'a SigmaFunction,
    synth: NoiseSynth<'a>,
    noise: Vec<f64>,
    lap: Vec<f64>,
}

impl<'a> Solver<'a> {
    pub fn new(grid: Grid, sigma: &'a SigmaFunction, weights: &'a SpectralWeights) -> Self {
        let cells = grid.cells();
        Self {
            grid,
            sigma,
            synth: NoiseSynth::new(weights),
            noise: vec![0.0; cells],
            lap: vec![0.0; cells],
        }
    }

    /// Runs from `u(0) ≡ 1` and returns snapshots at each of `times`
    /// (non-decreasing multiples of `dt`).
    pub fn run(&mut self, stream: RngStream, times: &[f64]) -> Result<Vec<SolutionField>> {
        let mut targets = Vec::with_capacity(times.len());
        for w in times.windows(2) {
            if w[1] < w[0] {
                return Err(invalid("times", "must be non-decreasing"));
            }
        }
        for &t in times {
            targets.push(self.grid.steps_to(t)?);
        }
        let mut u = vec![1.0; self.grid.cells()];
        let mut out = Vec::with_capacity(times.len());
        let mut step = 0usize;
        let zero_sigma = self.sigma.is_constant() && self.sigma.eval(1.0) == 0.0;
        for (&target, &t) in targets.iter().zip(times) {
            while step < target {
                if !zero_sigma {
                    self.synth
                        .fill(self.grid.dt, &stream.at_step(step as u64), &mut self.noise);
                    euler_update(&self.grid, self.sigma, &mut u, &mut self.lap, &self.noise);
                    check_blowup(&u, stream.replica, step)?;
                }
                step += 1;
            }
            out.push(SolutionField {
                grid: self.grid,
                time: t,
                values: u.clone(),
                scheme: Scheme::Euler,
                stream,
            });
        }
        Ok(out)
    }
}

/// Euler solve from `u(0) ≡ 1` to `t_final`, noise stream `(seed, 0, replica, ·)`.
pub fn solve(
    grid: &Grid,
    sigma: &SigmaFunction,
    f: &CovarianceMeasure,
    t_final: f64,
    seed: u64,
    replica: u64,
) -> Result<SolutionField> {
    sigma.check_shape()?;
    let weights = spectral_weights(grid, f)?;
    let mut solver = Solver::new(*grid, sigma, &weights);
    let mut fields = solver.run(RngStream::new(seed, 0, replica, 0), &[t_final])?;
    Ok(fields.pop().expect("one snapshot"))
}

/// Independent Euler replicas `first..first+count`, in replica order.
pub fn solve_replicas(
    grid: &Grid,
    sigma: &SigmaFunction,
    f: &CovarianceMeasure,
    t_final: f64,
    seed: u64,
    tag: u64,
    replicas: std::ops::Range<u64>,
) -> Result<Vec<SolutionField>> {
    sigma.check_shape()?;
    let weights = spectral_weights(grid, f)?;
    let ids: Vec<u64> = replicas.collect();
    ids.par_iter()
        .map_init(
            || Solver::new(*grid, sigma, &weights),
            |solver, &r| {
                solver
                    .run(RngStream::new(seed, tag, r, 0), &[t_final])
                    .map(|mut v| v.pop().expect("one snapshot"))
            },
        )
        .collect()
}

/// `exp(-dt|ξ|²/2)` over the FFT modes of `grid`.
fn heat_multiplier(grid: &Grid, dt: f64) -> Vec<f64> {
    (0..grid.cells())
        .map(|i| {
            let idx = grid.unflatten(i);
            let xi2: f64 = (0..grid.d)
                .map(|a| {
                    let xi = 2.0 * PI * grid.signed_mode(idx[a]) as f64 / grid.length;
                    xi * xi
                })
                .sum();
            (-0.5 * dt * xi2).exp()
        })
        .collect()
}

/// Picard iterates `u₀ ≡ 1`, `u_{m+1}(t_k) = 1 + Σ_{l<k} P_{(k-1-l)dt}[σ(u_m(t_l)) ΔW_l]`
/// on the Euler noise realization of `(seed, replica)`. Returns `u_{n_iter}` at
/// `t_final` and the sup-norm differences between consecutive iterates.
pub fn picard_iterates(
    grid: &Grid,
    sigma: &SigmaFunction,
    f: &CovarianceMeasure,
    t_final: f64,
    seed: u64,
    replica: u64,
    n_iter: usize,
) -> Result<(SolutionField, Vec<f64>)> {
    sigma.check_shape()?;
    if n_iter == 0 {
        return Err(invalid("n_iter", "need at least one iteration"));
    }
    let steps = grid.steps_to(t_final)?;
    let cells = grid.cells();
    let weights = spectral_weights(grid, f)?;
    let stream = RngStream::new(seed, 0, replica, 0);
    let mut synth = NoiseSynth::new(&weights);
    let mut noise = vec![0.0; steps * cells];
    for (k, chunk) in noise.chunks_exact_mut(cells).enumerate() {
        synth.fill(grid.dt, &stream.at_step(k as u64), chunk);
    }
    let mult = heat_multiplier(grid, grid.dt);
    let mut fft = FftNd::new(grid.n, grid.d);
    let scale = 1.0 / cells as f64;

    // history[k] = u_m(t_k), k = 0..=steps.
    let mut history = vec![1.0; (steps + 1) * cells];
    let mut next = vec![1.0; (steps + 1) * cells];
    let mut acc = vec![Complex64::new(0.0, 0.0); cells];
    let mut buf = vec![Complex64::new(0.0, 0.0); cells];
    let mut diffs = Vec::with_capacity(n_iter);
    for _ in 0..n_iter {
        acc.fill(Complex64::new(0.0, 0.0));
        next[..cells].fill(1.0);
        for k in 0..steps {
            let u_k = &history[k * cells..(k + 1) * cells];
            let dw = &noise[k * cells..(k + 1) * cells];
            for ((b, &u), &w) in buf.iter_mut().zip(u_k).zip(dw) {
                *b = Complex64::new(sigma.eval(u) * w, 0.0);
            }
            fft.forward(&mut buf);
            for ((a, &b), &m) in acc.iter_mut().zip(&buf).zip(&mult) {
                *a = *a * m + b;
            }
            buf.copy_from_slice(&acc);
            fft.inverse(&mut buf);
            let out = &mut next[(k + 1) * cells..(k + 2) * cells];
            for (o, b) in out.iter_mut().zip(&buf) {
                *o = 1.0 + b.re * scale;
            }
            check_blowup(out, replica, k)?;
        }
        let diff = history
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        diffs.push(diff);
        std::mem::swap(&mut history, &mut next);
    }
    let n = diffs.len();
    if n >= 3 && diffs[n - 1] > 0.0 && diffs[n - 3] <= diffs[n - 2] && diffs[n - 2] <= diffs[n - 1] {
        return Err(Error::NonConvergence {
            iterations: n,
            diffs: diffs[n - 3..].to_vec(),
        });
    }
    let field = SolutionField {
        grid: *grid,
        time: steps as f64 * grid.dt,
        values: history[steps * cells..].to_vec(),
        scheme: Scheme::Picard { iterations: n_iter },
        stream,
    };
    Ok((field, diffs))
}

pub fn picard_solve(
    grid: &Grid,
    sigma: &SigmaFunction,
    f: &CovarianceMeasure,
    t_final: f64,
    seed: u64,
    replica: u64,
    n_iter: usize,
) -> Result<SolutionField> {
    Ok(picard_iterates(grid, sigma, f, t_final, seed, replica, n_iter)?.0)
}

/// Pooled statistics of `g(u(t, ·))` over replicas and cells.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalStats {
    pub mean: f64,
    pub variance: f64,
    /// Standard error of `mean`, from per-replica means.
    pub mean_se: f64,
    /// Standard error of `variance`, from per-replica variances.
    pub variance_se: f64,
    /// `Cov[g(u(t,x)), g(u(t,x + k·dx·e₁))]` for `k = 0..=max_lag`.
    pub lag_covariance: Vec<f64>,
    pub replicas: usize,
}

pub fn marginal_stats(fields: &[SolutionField], g: &LipFunction, max_lag: usize) -> Result<MarginalStats> {
    if fields.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: fields.len(),
        });
    }
    let grid = fields[0].grid;
    let cells = grid.cells() as f64;
    let mapped: Vec<Vec<f64>> = fields
        .iter()
        .map(|fld| fld.values.iter().map(|&u| g.eval(u)).collect())
        .collect();
    let rep_means: Vec<f64> = mapped.iter().map(|v| v.iter().sum::<f64>() / cells).collect();
    let r = fields.len() as f64;
    let mean = rep_means.iter().sum::<f64>() / r;
    let spread = |xs: &[f64], m: f64| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt();
    let mean_se = spread(&rep_means, mean);
    let mut lag_covariance = Vec::with_capacity(max_lag + 1);
    let mut rep_vars = Vec::new();
    for lag in 0..=max_lag {
        let per: Vec<f64> = mapped
            .iter()
            .map(|v| {
                (0..v.len())
                    .map(|i| (v[i] - mean) * (v[grid.shift(i, 0, lag as isize)] - mean))
                    .sum::<f64>()
                    / cells
            })
            .collect();
        if lag == 0 {
            rep_vars = per.clone();
        }
        lag_covariance.push(per.iter().sum::<f64>() / r);
    }
    let variance = lag_covariance[0];
    let variance_se = spread(&rep_vars, variance);
    Ok(MarginalStats {
        mean,
        variance,
        mean_se,
        variance_se,
        lag_covariance,
        replicas: fields.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1() -> Grid {
        Grid::with_max_dt(1, 8.0, 64).unwrap()
    }

    fn dirac() -> CovarianceMeasure {
        CovarianceMeasure::dirac(1, 1.0).unwrap()
    }

    #[test]
    fn sigma_properties() {
        let s = SigmaFunction::affine(0.5, -2.0).unwrap();
        assert_eq!((s.sigma0(), s.lip(), s.sigma1()), (0.5, 2.0, -1.5));
        assert!(SigmaFunction::linear(0.0).is_err());
        assert!(SigmaFunction::constant(0.0).is_err());
        let t = SigmaFunction::tabulated(vec![(0.0, 0.0), (1.0, 2.0), (3.0, 3.0)]).unwrap();
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(10.0), 3.0);
        assert_eq!(t.eval(-1.0), 0.0);
        assert_eq!(t.lip(), 2.0);
        assert!(SigmaFunction::tabulated(vec![(1.0, 1.0), (0.0, 2.0)]).is_err());
    }

    #[test]
    fn laplacian_of_flat_is_zero_and_of_cosine_matches() {
        let g = Grid::with_max_dt(2, 2.0 * PI, 32).unwrap();
        let mut out = vec![0.0; g.cells()];
        discrete_laplacian(&g, &vec![1.0; g.cells()], &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
        let u: Vec<f64> = (0..g.cells())
            .map(|i| {
                let idx = g.unflatten(i);
                (idx[0] as f64 * g.dx).cos()
            })
            .collect();
        discrete_laplacian(&g, &u, &mut out);
        let eig = -(2.0 - 2.0 * g.dx.cos()) / (g.dx * g.dx);
        for (o, v) in out.iter().zip(&u) {
            assert!((o - eig * v).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_sigma_keeps_flat_state() {
        let s = SigmaFunction::Constant { c: 0.0 };
        let u = solve(&grid1(), &s, &dirac(), 0.5, 1, 0).unwrap();
        assert!(u.values.iter().all(|&v| v == 1.0));
        let zero_lin = SigmaFunction::Linear { c: 0.0 };
        let field = SolutionField::flat(grid1(), RngStream::new(1, 0, 0, 0));
        let w = spectral_weights(&grid1(), &dirac()).unwrap();
        let slice = crate::noise::sample_noise_slice(&w, grid1().dt, RngStream::new(1, 0, 0, 0));
        let next = step_euler(&field, &zero_lin, &slice).unwrap();
        assert!(next.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn one_step_from_flat_is_additive() {
        let g = grid1();
        let field = SolutionField::flat(g, RngStream::new(1, 0, 0, 0));
        let w = spectral_weights(&g, &dirac()).unwrap();
        let slice = crate::noise::sample_noise_slice(&w, g.dt, RngStream::new(1, 0, 0, 0));
        let next = step_euler(&field, &SigmaFunction::Constant { c: 1.0 }, &slice).unwrap();
        for (u, dw) in next.values.iter().zip(&slice.values) {
            assert_eq!(*u, 1.0 + dw);
        }
        assert!((next.time - g.dt).abs() < 1e-15);
    }

    #[test]
    fn zero_time_is_initial_condition() {
        let u = solve(&grid1(), &SigmaFunction::Constant { c: 1.0 }, &dirac(), 0.0, 1, 0).unwrap();
        assert!(u.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn solve_matches_manual_stepping() {
        let g = grid1();
        let s = SigmaFunction::Linear { c: 0.7 };
        let f = dirac();
        let u = solve(&g, &s, &f, 10.0 * g.dt, 5, 3).unwrap();
        let w = spectral_weights(&g, &f).unwrap();
        let mut state = SolutionField::flat(g, RngStream::new(5, 0, 3, 0));
        for k in 0..10 {
            let slice = crate::noise::sample_noise_slice(&w, g.dt, RngStream::new(5, 0, 3, k));
            state = step_euler(&state, &s, &slice).unwrap();
        }
        assert_eq!(state.values, u.values);
    }

    #[test]
    fn blowup_is_reported() {
        let g = grid1();
        let err = solve(&g, &SigmaFunction::Linear { c: 1e6 }, &dirac(), 1.0, 1, 7).unwrap_err();
        assert!(matches!(err, Error::SolverBlowup { replica: 7, .. }), "{err}");
    }

    #[test]
    fn unstable_step_rejected() {
        let g = grid1();
        let field = SolutionField::flat(g, RngStream::new(1, 0, 0, 0));
        let slice = NoiseSlice {
            values: vec![0.0; g.cells()],
            dt: 2.0 * g.dt,
            stream: RngStream::new(1, 0, 0, 0),
        };
        assert!(matches!(
            step_euler(&field, &SigmaFunction::Constant { c: 1.0 }, &slice),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn picard_trivial_cases() {
        let g = grid1();
        let f = dirac();
        let (u, diffs) = picard_iterates(&g, &SigmaFunction::Constant { c: 0.0 }, &f, 0.25, 1, 0, 3).unwrap();
        assert!(u.values.iter().all(|&v| v == 1.0));
        assert!(diffs.iter().all(|&d| d == 0.0));
        let s = SigmaFunction::Constant { c: 1.0 };
        let u1 = picard_solve(&g, &s, &f, 0.25, 1, 0, 1).unwrap();
        let u2 = picard_solve(&g, &s, &f, 0.25, 1, 0, 2).unwrap();
        assert_eq!(u1.values, u2.values);
    }

    #[test]
    fn marginal_stats_of_constant_g() {
        let g = grid1();
        let fields: Vec<SolutionField> = (0..3)
            .map(|r| solve(&g, &SigmaFunction::Constant { c: 1.0 }, &dirac(), 0.125, 1, r).unwrap())
            .collect();
        let st = marginal_stats(&fields, &LipFunction::Constant { c: 2.5 }, 3).unwrap();
        assert_eq!(st.mean, 2.5);
        assert_eq!(st.variance, 0.0);
        assert!(st.lag_covariance.iter().all(|&c| c == 0.0));
        assert!(marginal_stats(&fields[..1], &LipFunction::Identity, 1).is_err());
    }

    #[test]
    fn field_dump_header() {
        let u = solve(&grid1(), &SigmaFunction::Constant { c: 1.0 }, &dirac(), 0.125, 1, 0).unwrap();
        let mut bytes = Vec::new();
        u.dump(&mut bytes).unwrap();
        let (h, data) = crate::noise::read_dump(bytes.as_slice()).unwrap();
        assert_eq!(h["kind"], "solution_field");
        assert_eq!(data, u.values);
    }
}
