//! Covering and packing numbers of finite metric spaces, the chaining bound
//! on expected maximal increments, and covering exponents of the test-function
//! and observable classes used by the functional limit theorems.
//!
//! Balls are open: `B(c, r) = {x : d(c, x) < r}`. A set is `r`-separated when
//! its points are pairwise more than `r` apart.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::noise::RngStream;
use crate::occupation::BaseFunction;
use crate::quad::{self, QuadOptions};
use crate::special::{norm_pdf, norm_quantile, norm_sf};

/// A metric on the indices `0..len()`.
pub trait Metric: Sync {
    fn len(&self) -> usize;
    fn dist(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Largest size for which the exhaustive covering and packing searches run.
pub const EXACT_LIMIT: usize = 16;

/// Points with an explicit distance matrix, checked to be a metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteMetricSpace {
    labels: Vec<String>,
    dist: Vec<f64>,
    n: usize,
    diameter: f64,
}

impl FiniteMetricSpace {
    pub fn new(labels: Vec<String>, matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(invalid("space", "need at least one point"));
        }
        if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
            return Err(invalid("space", "distance matrix must be n×n"));
        }
        let scale = matrix.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let tol = 1e-12 * scale;
        for i in 0..n {
            if matrix[i][i] != 0.0 {
                return Err(invalid("space", format!("d({i},{i}) = {} ≠ 0", matrix[i][i])));
            }
            for j in 0..n {
                let v = matrix[i][j];
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(invalid("space", format!("d({i},{j}) = {v} is not a finite nonnegative number")));
                }
                if (v - matrix[j][i]).abs() > tol {
                    return Err(invalid("space", format!("d({i},{j}) ≠ d({j},{i})")));
                }
                if i != j && v == 0.0 {
                    return Err(invalid("space", format!("points {i} and {j} coincide")));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if matrix[i][k] > matrix[i][j] + matrix[j][k] + tol {
                        return Err(invalid("space", format!("triangle inequality fails at ({i},{j},{k})")));
                    }
                }
            }
        }
        let diameter = matrix.iter().flatten().fold(0.0, |m: f64, v| m.max(*v));
        Ok(Self {
            labels,
            dist: matrix.into_iter().flatten().collect(),
            n,
            diameter,
        })
    }

    pub fn from_fn(n: usize, d: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let matrix = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { d(i, j) }).collect()).collect();
        Self::new((0..n).map(|i| i.to_string()).collect(), matrix)
    }

    /// Euclidean distances between `points`.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        Self::from_fn(points.len(), |i, j| {
            points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
    }

    /// `n` equally spaced points on a line.
    pub fn line(n: usize, spacing: f64) -> Result<Self> {
        Self::from_fn(n, |i, j| (i as f64 - j as f64).abs() * spacing)
    }

    /// `{i/(n-1)}` with the Brownian metric `√|s - t|`.
    pub fn brownian_grid(n: usize) -> Result<Self> {
        let h = 1.0 / (n.max(2) - 1) as f64;
        Self::from_fn(n, |i, j| ((i as f64 - j as f64).abs() * h).sqrt())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// `Δ = max d(s, t)`.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn min_positive_distance(&self) -> f64 {
        self.dist.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min)
    }

    /// Distinct positive distances, ascending.
    pub fn distances(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.dist.iter().copied().filter(|v| *v > 0.0).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

impl Metric for FiniteMetricSpace {
    fn len(&self) -> usize {
        self.n
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }
}

/// Farthest-point traversal from point 0 with lowest-index tie-breaking.
///
/// `radii[k]` is the distance from `centers[k]` to the earlier centers
/// (`radii[0] = ∞`); the radii are non-increasing. A prefix of the centers is
/// simultaneously the greedy cover and the greedy packing at any radius.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Traversal {
    pub centers: Vec<usize>,
    pub radii: Vec<f64>,
}

impl Traversal {
    /// Runs until every point is within `stop` of a center (`stop = 0` runs
    /// through the whole space).
    pub fn new<M: Metric + ?Sized>(space: &M, stop: f64) -> Self {
        let n = space.len();
        let mut centers = Vec::new();
        let mut radii = Vec::new();
        if n == 0 {
            return Self { centers, radii };
        }
        let mut mind: Vec<f64> = vec![f64::INFINITY; n];
        let mut next = 0usize;
        let mut radius = f64::INFINITY;
        loop {
            centers.push(next);
            radii.push(radius);
            let c = next;
            mind.par_iter_mut().enumerate().for_each(|(i, m)| {
                let d = space.dist(c, i);
                if d < *m {
                    *m = d;
                }
            });
            let (arg, best) = mind
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(ai, av), (i, &v)| if v > av { (i, v) } else { (ai, av) });
            if best <= 0.0 || best < stop {
                break;
            }
            next = arg;
            radius = best;
        }
        Self { centers, radii }
    }

    /// Greedy cover size: centers added while some point is at distance `≥ r`.
    pub fn covering(&self, r: f64) -> usize {
        self.radii.iter().filter(|&&v| v >= r).count()
    }

    /// Greedy packing size: the prefix that is `r`-separated.
    pub fn packing(&self, r: f64) -> usize {
        self.radii.iter().filter(|&&v| v > r).count()
    }
}

/// Greedy farthest-point covering number; an upper bound on `N(r)`, exact for
/// `r > Δ` and for `r` at or below the smallest positive distance.
pub fn covering_number<M: Metric + ?Sized>(space: &M, r: f64) -> Result<usize> {
    if !(r > 0.0) {
        return Err(invalid("r", format!("{r} must be > 0")));
    }
    Ok(Traversal::new(space, r).covering(r))
}

/// Greedy maximal `r`-separated set size; a lower bound on `P(r)`.
pub fn packing_number<M: Metric + ?Sized>(space: &M, r: f64) -> Result<usize> {
    if !(r > 0.0) {
        return Err(invalid("r", format!("{r} must be > 0")));
    }
    Ok(Traversal::new(space, r).packing(r))
}

fn check_exact<M: Metric + ?Sized>(space: &M, r: f64) -> Result<usize> {
    if !(r > 0.0) {
        return Err(invalid("r", format!("{r} must be > 0")));
    }
    let n = space.len();
    if n > EXACT_LIMIT {
        return Err(invalid("space", format!("{n} points exceeds the exhaustive limit {EXACT_LIMIT}")));
    }
    Ok(n)
}

/// Minimum number of open `r`-balls centered in the space, by exhaustive search.
pub fn covering_number_exact<M: Metric + ?Sized>(space: &M, r: f64) -> Result<usize> {
    let n = check_exact(space, r)?;
    if n == 0 {
        return Ok(0);
    }
    let full: u32 = (1u32 << n) - 1;
    let balls: Vec<u32> = (0..n)
        .map(|c| (0..n).filter(|&x| space.dist(c, x) < r).fold(0, |m, x| m | (1 << x)))
        .collect();
    let mut union = vec![0u32; 1 << n];
    let mut best = n;
    for mask in 1u32..=full {
        let low = mask.trailing_zeros() as usize;
        union[mask as usize] = union[(mask & (mask - 1)) as usize] | balls[low];
        if union[mask as usize] == full {
            best = best.min(mask.count_ones() as usize);
        }
    }
    Ok(best)
}

/// Largest `r`-separated subset, by exhaustive search.
pub fn packing_number_exact<M: Metric + ?Sized>(space: &M, r: f64) -> Result<usize> {
    let n = check_exact(space, r)?;
    if n == 0 {
        return Ok(0);
    }
    let conflict: Vec<u32> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && space.dist(i, j) <= r).fold(0, |m, j| m | (1 << j)))
        .collect();
    let full: u32 = (1u32 << n) - 1;
    let mut ok = vec![false; 1 << n];
    ok[0] = true;
    let mut best = 1;
    for mask in 1u32..=full {
        let low = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        ok[mask as usize] = ok[rest as usize] && conflict[low] & rest == 0;
        if ok[mask as usize] {
            best = best.max(mask.count_ones() as usize);
        }
    }
    Ok(best)
}

/// `N(r)`: exhaustive up to [`EXACT_LIMIT`] points, greedy beyond.
pub fn covering_number_auto<M: Metric + ?Sized>(space: &M, r: f64) -> Result<usize> {
    if space.len() <= EXACT_LIMIT {
        covering_number_exact(space, r)
    } else {
        covering_number(space, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Sandwich {
    pub cover_double: usize,
    pub packing: usize,
    pub cover_half: usize,
    /// Values are exact minima/maxima rather than greedy bounds.
    pub exact: bool,
    pub holds: bool,
}

/// `N(2r) ≤ P(r) ≤ N(r/2)`, exhaustively on spaces of at most 12 points.
pub fn sandwich_check<M: Metric + ?Sized>(space: &M, r: f64) -> Result<Sandwich> {
    let exact = space.len() <= 12;
    let (a, b, c) = if exact {
        (
            covering_number_exact(space, 2.0 * r)?,
            packing_number_exact(space, r)?,
            covering_number_exact(space, 0.5 * r)?,
        )
    } else {
        (
            covering_number(space, 2.0 * r)?,
            packing_number(space, r)?,
            covering_number(space, 0.5 * r)?,
        )
    };
    Ok(Sandwich {
        cover_double: a,
        packing: b,
        cover_half: c,
        exact,
        holds: a <= b && b <= c,
    })
}

#[derive(Clone)]
enum TailKind {
    Gaussian,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// A tail-probability function `Ψ` and `τ(λ) = ∫₀^∞ (λΨ(u) ∧ 1) du`.
#[derive(Clone)]
pub struct TailFunctional {
    kind: TailKind,
}

impl std::fmt::Debug for TailFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            TailKind::Gaussian => write!(f, "TailFunctional(gaussian)"),
            TailKind::Custom(_) => write!(f, "TailFunctional(custom)"),
        }
    }
}

impl TailFunctional {
    /// `Ψ(u) = 2(1 - Φ(u))`, the tail of `|X_s - X_t| / d(s,t)` for a
    /// Gaussian process whose increments have standard deviation `d(s,t)`.
    pub fn gaussian() -> Self {
        Self { kind: TailKind::Gaussian }
    }

    /// `Ψ` must be non-increasing and integrable on `[0, ∞)`.
    pub fn from_fn(psi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: TailKind::Custom(Arc::new(psi)),
        }
    }

    pub fn psi(&self, u: f64) -> f64 {
        match &self.kind {
            TailKind::Gaussian => 2.0 * norm_sf(u),
            TailKind::Custom(f) => f(u),
        }
    }

    /// Closed form for the Gaussian kind: `λ√(2/π)` for `λ ≤ 1`, otherwise
    /// `2λφ(u*)` with `λΨ(u*) = 1`.
    pub fn tau(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        match self.kind {
            TailKind::Gaussian => {
                if lambda <= 1.0 {
                    lambda * (2.0 / std::f64::consts::PI).sqrt()
                } else {
                    let u = -norm_quantile(0.5 / lambda);
                    2.0 * lambda * norm_pdf(u)
                }
            }
            TailKind::Custom(_) => self.tau_by_quadrature(lambda),
        }
    }

    /// `u* + λ ∫_{u*}^∞ Ψ` with `u*` the kink where `λΨ = 1`, by bisection and quadrature.
    pub fn tau_by_quadrature(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        let mut kink = 0.0;
        if lambda * self.psi(0.0) > 1.0 {
            let mut hi = 1.0;
            while lambda * self.psi(hi) > 1.0 && hi < 1e6 {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if lambda * self.psi(mid) > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            kink = 0.5 * (lo + hi);
        }
        let opts = QuadOptions::with_rel_tol(1e-12);
        kink + lambda * quad::integrate_to_infinity(|u| self.psi(u), kink, opts).value
    }
}

/// `N(r)` as a step function: `count` on `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveringProfile {
    pub pieces: Vec<(f64, f64, usize)>,
}

impl CoveringProfile {
    /// Exact pieces on small spaces (jumps only at pairwise distances),
    /// greedy pieces from a full traversal otherwise.
    pub fn of(space: &FiniteMetricSpace) -> Result<Self> {
        let mut knots = vec![0.0];
        if space.len() <= EXACT_LIMIT {
            knots.extend(space.distances());
        } else {
            let tr = Traversal::new(space, 0.0);
            let mut r: Vec<f64> = tr.radii[1..].to_vec();
            r.sort_by(f64::total_cmp);
            r.dedup();
            knots.extend(r);
        }
        let mut pieces = Vec::with_capacity(knots.len());
        for w in knots.windows(2) {
            pieces.push((w[0], w[1], covering_number_auto(space, w[1])?));
        }
        pieces.push((*knots.last().expect("nonempty"), f64::INFINITY, 1));
        Ok(Self { pieces })
    }

    pub fn at(&self, r: f64) -> usize {
        self.pieces
            .iter()
            .find(|(lo, hi, _)| *lo < r && r <= *hi)
            .map_or(1, |p| p.2)
    }

    /// `∫₀^upper h(N(r)) dr`, exactly for the step function.
    pub fn integrate(&self, upper: f64, h: impl Fn(usize) -> f64) -> f64 {
        self.pieces
            .iter()
            .map(|&(lo, hi, c)| {
                let len = hi.min(upper) - lo;
                if len > 0.0 {
                    h(c) * len
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// `32 ∫₀^{δ/4} τ(N(r)²) dr`. Requires `0 < δ ≤ Δ`.
pub fn chaining_bound(space: &FiniteMetricSpace, tau: &TailFunctional, delta: f64) -> Result<f64> {
    if space.len() == 1 {
        return Ok(0.0);
    }
    if !(delta > 0.0 && delta <= space.diameter()) {
        return Err(invalid("delta", format!("{delta} not in (0, Δ = {}]", space.diameter())));
    }
    let profile = CoveringProfile::of(space)?;
    Ok(32.0 * profile.integrate(delta / 4.0, |c| tau.tau((c * c) as f64)))
}

/// `8 ∫₀^{Δ/4} τ(N(r)) dr`, the one-sided bound on `E max_t |X_t - X_{t₀}|`.
pub fn lemma_bound(space: &FiniteMetricSpace, tau: &TailFunctional) -> Result<f64> {
    if space.len() == 1 {
        return Ok(0.0);
    }
    let profile = CoveringProfile::of(space)?;
    Ok(8.0 * profile.integrate(space.diameter() / 4.0, |c| tau.tau(c as f64)))
}

/// Nested nets `𝒯_n` at scales `ε_n = 2^{-n}Δ` with projections `π_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Chain {
    pub eps: Vec<f64>,
    /// `nets[n]` lists the points of `𝒯_n`; `nets[0] = [t₀]` and the last net
    /// is the whole space.
    pub nets: Vec<Vec<usize>>,
    /// `proj[n][t]` is the point of `𝒯_n` nearest to `t`.
    pub proj: Vec<Vec<usize>>,
    /// [`lemma_bound`] for the Gaussian tail.
    pub bound: f64,
}

impl Chain {
    /// `t₀, t₁, …, t_M = t` with `t_{i-1} = π_{i-1}(t_i)`.
    pub fn chain_of(&self, t: usize) -> Vec<usize> {
        let m = self.nets.len() - 1;
        let mut out = vec![t; m + 1];
        for i in (1..=m).rev() {
            out[i - 1] = self.proj[i - 1][out[i]];
        }
        out
    }

    /// `(t_i, t_{i+1})` pairs whose increments telescope to `X_t - X_{t₀}`.
    pub fn increments(&self, t: usize) -> Vec<(usize, usize)> {
        self.chain_of(t).windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn root(&self) -> usize {
        self.nets[0][0]
    }
}

/// Builds the chain from the farthest-point traversal: `𝒯_n` is the prefix of
/// centers inserted at radius `> ε_n`, so the nets are nested, `ε_n`-separated
/// and `ε_n`-covering, and equal the space once `ε_n` drops below the
/// smallest distance.
pub fn chain_construct(space: &FiniteMetricSpace) -> Result<Chain> {
    let n = space.len();
    let tr = Traversal::new(space, 0.0);
    let delta = space.diameter();
    let mut eps = vec![delta];
    let mut nets = vec![tr.centers[..tr.packing(delta)].to_vec()];
    while nets.last().expect("nonempty").len() < n {
        let e = 0.5 * eps.last().expect("nonempty");
        eps.push(e);
        nets.push(tr.centers[..tr.packing(e)].to_vec());
    }
    let proj = nets
        .iter()
        .map(|net| {
            (0..n)
                .map(|t| {
                    let mut best = net[0];
                    for &c in net {
                        let (dc, db) = (space.dist(t, c), space.dist(t, best));
                        if dc < db || (dc == db && c < best) {
                            best = c;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    Ok(Chain {
        eps,
        nets,
        proj,
        bound: lemma_bound(space, &TailFunctional::gaussian())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainingCheck {
    pub delta: f64,
    /// Monte Carlo `E max_{d(s,t) ≤ δ} |X_s - X_t|`.
    pub empirical: f64,
    pub empirical_se: f64,
    pub bound: f64,
    /// The Gram matrix was not PSD and negative eigenvalues were clipped.
    pub corrected: bool,
    pub replicas: usize,
    pub violated: bool,
}

/// Simulates the centered Gaussian process with `X_{t₀} = 0` and
/// `E(X_s - X_t)² = d(s,t)²`, and compares its mean maximal `δ`-increment
/// with [`chaining_bound`].
pub fn chaining_empirical_check(
    space: &FiniteMetricSpace,
    delta: f64,
    replicas: usize,
    stream: RngStream,
) -> Result<ChainingCheck> {
    let n = space.len();
    if replicas < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: replicas });
    }
    let gram = DMatrix::from_fn(n, n, |i, j| {
        0.5 * (space.dist(i, 0).powi(2) + space.dist(j, 0).powi(2) - space.dist(i, j).powi(2))
    });
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let corrected = eig.eigenvalues.iter().any(|&v| v < -1e-9 * top.max(1.0));
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| space.dist(i, j) <= delta)
        .collect();
    let maxima: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(stream.seed, stream.tag, r, stream.step).rng();
            let z = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &root * z;
            pairs.iter().map(|&(i, j)| (x[i] - x[j]).abs()).fold(0.0, f64::max)
        })
        .collect();
    let empirical = crate::stats::mean(&maxima);
    let empirical_se = (crate::stats::variance(&maxima) / replicas as f64).sqrt();
    let bound = if n == 1 {
        0.0
    } else {
        chaining_bound(space, &TailFunctional::gaussian(), delta.min(space.diameter()))?
    };
    Ok(ChainingCheck {
        delta,
        empirical,
        empirical_se,
        bound,
        corrected,
        replicas,
        violated: empirical > bound,
    })
}

/// Parameter families of test functions and observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionClass {
    /// `{1_{[0,y]} : y ∈ [0, m]^d}` in `L²`.
    Box { m: f64, dimension: usize },
    /// `{1_{[0,y]} * 1_{[0,z]} : y ∈ [0, m₁], z ∈ [0, m₂]}` in `L²(ℝ)`.
    Convolution { m1: f64, m2: f64 },
    /// `{g(· - a) : a ∈ [-n, n]}` in the Lipschitz norm `|h(0)| + Lip(h)`.
    Shift { g: Profile, n: f64 },
    /// `{b g(·/a) : a ∈ [1/m, m], b ∈ [-n, n]}` in the Lipschitz norm.
    Scale { g: Profile, m: f64, n: f64 },
}

/// Base function of the Lipschitz-norm classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// A smooth base; Lipschitz seminorms are maxima over a `u` grid.
    Smooth(BaseFunction),
    /// `g(u) = ∫₀^u (1 - |v|)₊ dv`. Its derivative is a hat, so derivative
    /// differences are piecewise linear and their suprema sit at the kinks.
    Ramp,
}

impl Profile {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Self::Smooth(g) => g.eval(u),
            Self::Ramp => {
                let v = u.abs().min(1.0);
                u.signum() * (v - 0.5 * v * v)
            }
        }
    }

    pub fn derivative(self, u: f64) -> Result<f64> {
        match self {
            Self::Smooth(g) => base_derivative(g, u),
            Self::Ramp => Ok(hat(u)),
        }
    }
}

fn hat(u: f64) -> f64 {
    (1.0 - u.abs()).max(0.0)
}

/// Derivative of a smooth base function.
fn base_derivative(g: BaseFunction, u: f64) -> Result<f64> {
    Ok(match g {
        BaseFunction::Identity => 1.0,
        BaseFunction::Sin => u.cos(),
        BaseFunction::Cos => -u.sin(),
        BaseFunction::Tanh => 1.0 - u.tanh().powi(2),
        BaseFunction::Abs => return Err(invalid("g", "|u| is not C¹")),
    })
}

/// Half-width and step of the `u` grid on which Lipschitz seminorms are
/// evaluated as a maximum of derivative differences. Scale families only need
/// `u ≥ 0` since the base derivatives are even or odd.
const LIP_GRID_HALF: f64 = 30.0;
const SHIFT_GRID_STEP: f64 = 0.05;
const SCALE_GRID_STEP: f64 = 0.1;

/// A finite parameter grid over a [`FunctionClass`] with its metric.
pub struct ClassSample {
    pub class: FunctionClass,
    pub params: Vec<Vec<f64>>,
    /// Largest distance between grid neighbours.
    pub spacing: f64,
    /// Per-point `(h(0), h′ on the u grid)` for the Lipschitz-norm classes.
    lip: Vec<(f64, Vec<f64>)>,
}

impl Metric for ClassSample {
    fn len(&self) -> usize {
        self.params.len()
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        let (p, q) = (&self.params[i], &self.params[j]);
        match self.class {
            FunctionClass::Box { .. } => {
                let vp: f64 = p.iter().product();
                let vq: f64 = q.iter().product();
                let vm: f64 = p.iter().zip(q).map(|(a, b)| a.min(*b)).product();
                (vp + vq - 2.0 * vm).max(0.0).sqrt()
            }
            FunctionClass::Convolution { .. } => convolution_distance(p[0], p[1], q[0], q[1]),
            FunctionClass::Shift { g: Profile::Ramp, .. } => {
                let (a, b) = (p[0], q[0]);
                let lip = [a - 1.0, a, a + 1.0, b - 1.0, b, b + 1.0]
                    .iter()
                    .map(|u| (hat(u - a) - hat(u - b)).abs())
                    .fold(0.0, f64::max);
                (Profile::Ramp.eval(-a) - Profile::Ramp.eval(-b)).abs() + lip
            }
            FunctionClass::Scale { g: Profile::Ramp, .. } => {
                // h′(u) = (b/a) hat(u/a), even in u with kinks at 0 and a.
                let (a, b, a2, b2) = (p[0], p[1], q[0], q[1]);
                [0.0, a, a2]
                    .iter()
                    .map(|u| (b / a * hat(u / a) - b2 / a2 * hat(u / a2)).abs())
                    .fold(0.0, f64::max)
            }
            FunctionClass::Shift { .. } | FunctionClass::Scale { .. } => {
                let (a, b) = (&self.lip[i], &self.lip[j]);
                let lip = a.1.iter().zip(&b.1).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                (a.0 - b.0).abs() + lip
            }
        }
    }
}

/// Knots and values of the trapezoid `1_{[0,y]} * 1_{[0,z]}`.
fn trapezoid(y: f64, z: f64) -> impl Fn(f64) -> f64 {
    let (lo, hi) = (y.min(z), y.max(z));
    move |x: f64| {
        if x <= 0.0 || x >= y + z {
            0.0
        } else if x < lo {
            x
        } else if x <= hi {
            lo
        } else {
            y + z - x
        }
    }
}

/// `‖C*D - c*d‖_{L²}` for interval indicators, integrating the squared
/// piecewise-linear difference exactly.
fn convolution_distance(y: f64, z: f64, y2: f64, z2: f64) -> f64 {
    let (f, g) = (trapezoid(y, z), trapezoid(y2, z2));
    let mut knots = vec![0.0, y.min(z), y.max(z), y + z, y2.min(z2), y2.max(z2), y2 + z2];
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut s = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (f(w[0]) - g(w[0]), f(w[1]) - g(w[1]));
        s += (w[1] - w[0]) * (a * a + a * b + b * b) / 3.0;
    }
    s.max(0.0).sqrt()
}

impl FunctionClass {
    pub fn param_dimension(&self) -> usize {
        match self {
            Self::Box { dimension, .. } => *dimension,
            Self::Convolution { .. } | Self::Scale { .. } => 2,
            Self::Shift { .. } => 1,
        }
    }

    fn ranges(&self) -> Vec<(f64, f64)> {
        match *self {
            Self::Box { m, dimension } => vec![(0.0, m); dimension],
            Self::Convolution { m1, m2 } => vec![(0.0, m1), (0.0, m2)],
            Self::Shift { n, .. } => vec![(-n, n)],
            Self::Scale { m, n, .. } => vec![(1.0 / m, m), (-n, n)], // first axis is 1/a
        }
    }

    /// `(h(0), h′)` on the `u` grid for the Lipschitz-norm classes.
    fn lip_data(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        match *self {
            Self::Shift { g, .. } => {
                let steps = (2.0 * LIP_GRID_HALF / SHIFT_GRID_STEP) as usize;
                let us = (0..=steps).map(|k| -LIP_GRID_HALF + k as f64 * SHIFT_GRID_STEP);
                let a = p[0];
                Ok((g.eval(-a), us.map(|u| g.derivative(u - a)).collect::<Result<_>>()?))
            }
            Self::Scale { g, .. } => {
                let steps = (LIP_GRID_HALF / SCALE_GRID_STEP) as usize;
                let us = (0..=steps).map(|k| k as f64 * SCALE_GRID_STEP);
                let (a, b) = (p[0], p[1]);
                Ok((b * g.eval(0.0), us.map(|u| g.derivative(u / a).map(|v| b / a * v)).collect::<Result<_>>()?))
            }
            _ => Ok((0.0, Vec::new())),
        }
    }

    /// Uniform grid of `points` per parameter axis.
    pub fn sample(&self, points: usize) -> Result<ClassSample> {
        if points < 2 {
            return Err(invalid("points", "need at least 2 per axis"));
        }
        let ranges = self.ranges();
        let k = ranges.len();
        let total = points.pow(k as u32);
        let params: Vec<Vec<f64>> = (0..total)
            .map(|mut i| {
                let mut p = vec![0.0; k];
                for a in (0..k).rev() {
                    let (lo, hi) = ranges[a];
                    p[a] = lo + (hi - lo) * (i % points) as f64 / (points - 1) as f64;
                    i /= points;
                }
                if let Self::Scale { .. } = self {
                    // Uniform in 1/a, where the metric is roughly uniform.
                    p[0] = 1.0 / p[0];
                }
                p
            })
            .collect();
        let lip = match self {
            Self::Shift { g: Profile::Ramp, .. } | Self::Scale { g: Profile::Ramp, .. } => Vec::new(),
            Self::Shift { .. } | Self::Scale { .. } => params.par_iter().map(|p| self.lip_data(p)).collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        let mut sample = ClassSample {
            class: *self,
            params,
            spacing: 0.0,
            lip,
        };
        let strides: Vec<usize> = (0..k).map(|a| points.pow((k - 1 - a) as u32)).collect();
        sample.spacing = (0..total)
            .into_par_iter()
            .map(|i| {
                strides
                    .iter()
                    .filter(|&&s| (i / s) % points + 1 < points)
                    .map(|&s| sample.dist(i, i + s))
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        Ok(sample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentEstimate {
    pub r: Vec<f64>,
    pub counts: Vec<usize>,
    /// Least-squares slope of `ln N(r)` against `ln r`.
    pub slope: f64,
    pub spacing: f64,
}

/// Log–log slope of greedy covering numbers of `sample` over `r_grid`.
pub fn covering_exponent(sample: &ClassSample, r_grid: &[f64]) -> Result<ExponentEstimate> {
    if r_grid.len() < 2 {
        return Err(invalid("r_grid", "need at least two radii"));
    }
    let r_min = r_grid.iter().copied().fold(f64::INFINITY, f64::min);
    if !(r_min > 0.0) {
        return Err(invalid("r_grid", "radii must be > 0"));
    }
    if sample.spacing > r_min / 4.0 {
        return Err(Error::ResolutionTooCoarse {
            spacing: sample.spacing,
            limit: r_min / 4.0,
        });
    }
    let tr = Traversal::new(sample, r_min);
    let counts: Vec<usize> = r_grid.iter().map(|&r| tr.covering(r)).collect();
    let xs: Vec<f64> = r_grid.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let slope = crate::stats::covariance(&xs, &ys) / crate::stats::variance(&xs);
    Ok(ExponentEstimate {
        r: r_grid.to_vec(),
        counts,
        slope,
        spacing: sample.spacing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_covering_cases() {
        let s = FiniteMetricSpace::line(5, 1.0).unwrap();
        assert_eq!(covering_number(&s, 4.5).unwrap(), 1);
        assert_eq!(covering_number(&s, 0.5).unwrap(), 5);
        assert_eq!(packing_number(&s, 4.0).unwrap(), 1);
        let single = FiniteMetricSpace::line(1, 1.0).unwrap();
        assert_eq!(packing_number(&single, 0.1).unwrap(), 1);
        assert_eq!(covering_number_exact(&single, 0.1).unwrap(), 1);
    }

    #[test]
    fn five_point_line_greedy_versus_exact() {
        let s = FiniteMetricSpace::line(5, 1.0).unwrap();
        // Farthest-point from 0: centers 0, 4, 2.
        assert_eq!(covering_number(&s, 1.1).unwrap(), 3);
        // Balls at 1 and 3 already cover.
        assert_eq!(covering_number_exact(&s, 1.1).unwrap(), 2);
        // {0, 2, 4} is 1-separated in the strict sense.
        assert_eq!(packing_number_exact(&s, 1.0).unwrap(), 3);
        assert_eq!(packing_number(&s, 1.0).unwrap(), 3);
    }

    #[test]
    fn metric_axioms_are_checked() {
        assert!(FiniteMetricSpace::from_fn(3, |i, j| if i + j == 1 { 5.0 } else { 1.0 }).is_err());
        assert!(FiniteMetricSpace::new(vec!["a".into(), "b".into()], vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(FiniteMetricSpace::new(vec!["a".into(), "b".into()], vec![vec![0.0, 0.0], vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn gaussian_tau_matches_quadrature() {
        let g = TailFunctional::gaussian();
        let generic = TailFunctional::from_fn(|u| 2.0 * norm_sf(u));
        assert_eq!(g.tau(0.0), 0.0);
        let mut last = 0.0;
        for lambda in [0.1, 0.5, 0.7, 2.0, 16.0, 1e4] {
            let a = g.tau(lambda);
            let b = generic.tau(lambda);
            assert!((a - b).abs() < 1e-9 * a.max(1.0), "{lambda}: {a} vs {b}");
            assert!(a > last);
            last = a;
        }
    }

    #[test]
    fn chain_on_two_points() {
        let s = FiniteMetricSpace::line(2, 1.0).unwrap();
        let c = chain_construct(&s).unwrap();
        assert_eq!(c.nets, vec![vec![0], vec![0, 1]]);
        assert_eq!(c.proj[0], vec![0, 0]);
        assert_eq!(c.proj[1], vec![0, 1]);
        assert_eq!(c.chain_of(1), vec![0, 1]);
        let one = FiniteMetricSpace::line(1, 1.0).unwrap();
        let c1 = chain_construct(&one).unwrap();
        assert_eq!(c1.nets, vec![vec![0]]);
        assert_eq!(c1.bound, 0.0);
    }

    #[test]
    fn chaining_bound_vanishes_with_delta() {
        let s = FiniteMetricSpace::line(8, 1.0).unwrap();
        let tau = TailFunctional::gaussian();
        let big = chaining_bound(&s, &tau, 7.0).unwrap();
        let small = chaining_bound(&s, &tau, 1e-6).unwrap();
        assert!(small < 1e-4 * big);
        let single = FiniteMetricSpace::line(1, 1.0).unwrap();
        assert_eq!(chaining_bound(&single, &tau, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn convolution_distance_matches_riemann_sum() {
        let (f, g) = (trapezoid(0.7, 0.3), trapezoid(0.4, 0.9));
        let h = 1e-5;
        let s: f64 = (0..200_000).map(|k| (f(k as f64 * h) - g(k as f64 * h)).powi(2) * h).sum();
        assert!((s.sqrt() - convolution_distance(0.7, 0.3, 0.4, 0.9)).abs() < 1e-5);
    }

    #[test]
    fn coarse_sample_is_rejected() {
        let s = FunctionClass::Box { m: 1.0, dimension: 1 }.sample(11).unwrap();
        assert!(matches!(
            covering_exponent(&s, &[0.1, 0.2]),
            Err(Error::ResolutionTooCoarse { .. })
        ));
    }
}
