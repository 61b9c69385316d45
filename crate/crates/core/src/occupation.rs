//! Test functions, Lipschitz observables and the occupation field
//!
//! ```text
//! S_{N,t}(ψ, g) = ∫ g(u(t,x)) ψ_N(x) dx - E[g(u(t,0))] ∫ψ,   ψ_N(x) = N^{-d} ψ(x/N),
//! ```
//!
//! together with estimators of the limiting covariance form `B_t(g, G)`.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft::FftNd;
use crate::noise::Grid;
use crate::solver::{interpolate, SigmaFunction, SolutionField};
use crate::spectral::CovarianceMeasure;

/// `amp · 1_{[lo, hi]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxTerm {
    pub amp: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxTerm {
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    fn overlap(&self, other: &BoxTerm) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .map(|((a, b), (c, e))| (b.min(*e) - a.max(*c)).max(0.0))
            .product()
    }
}

/// A signed combination `Σ aᵢ 1_{[yⁱ, zⁱ]}` of axis-aligned boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub dimension: usize,
    pub boxes: Vec<BoxTerm>,
}

impl TestFunction {
    pub fn new(dimension: usize, boxes: Vec<BoxTerm>) -> Result<Self> {
        let psi = Self { dimension, boxes };
        psi.validate()?;
        Ok(psi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dimension) {
            return Err(invalid("psi.dimension", format!("{} not in 1..=3", self.dimension)));
        }
        for b in &self.boxes {
            if b.lo.len() != self.dimension || b.hi.len() != self.dimension {
                return Err(invalid("psi.boxes", "corner length differs from dimension"));
            }
            if b.lo.iter().zip(&b.hi).any(|(l, h)| !(l <= h)) || !b.amp.is_finite() {
                return Err(invalid("psi.boxes", "need lo ≤ hi and a finite amplitude"));
            }
        }
        Ok(())
    }

    pub fn indicator(lo: &[f64], hi: &[f64]) -> Result<Self> {
        Self::new(
            lo.len(),
            vec![BoxTerm {
                amp: 1.0,
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            }],
        )
    }

    /// `1_{[a, b]}` in one dimension.
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::indicator(&[a], &[b])
    }

    /// Piecewise-constant function with value `values[i]` on grid cell `i`
    /// of a cubic array of `n` cells per axis starting at `origin`.
    pub fn from_samples(dimension: usize, origin: &[f64], dx: f64, n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n.pow(dimension as u32) {
            return Err(invalid("values", "length must be n^d"));
        }
        let boxes = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(mut i, &v)| {
                let mut idx = vec![0; dimension];
                for a in (0..dimension).rev() {
                    idx[a] = i % n;
                    i /= n;
                }
                BoxTerm {
                    amp: v,
                    lo: (0..dimension).map(|a| origin[a] + idx[a] as f64 * dx).collect(),
                    hi: (0..dimension).map(|a| origin[a] + (idx[a] + 1) as f64 * dx).collect(),
                }
            })
            .collect();
        Self::new(dimension, boxes)
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &TestFunction, b: f64) -> TestFunction {
        let mut boxes: Vec<BoxTerm> = self
            .boxes
            .iter()
            .map(|t| BoxTerm { amp: a * t.amp, ..t.clone() })
            .collect();
        boxes.extend(other.boxes.iter().map(|t| BoxTerm { amp: b * t.amp, ..t.clone() }));
        TestFunction {
            dimension: self.dimension,
            boxes,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.boxes
            .iter()
            .filter(|b| b.lo.iter().zip(&b.hi).zip(x).all(|((l, h), v)| l <= v && v < h))
            .map(|b| b.amp)
            .sum()
    }

    /// `∫ψ`.
    pub fn integral(&self) -> f64 {
        self.boxes.iter().map(|b| b.amp * b.volume()).sum()
    }

    /// `⟨ψ, φ⟩_{L²}` in closed form.
    pub fn inner(&self, other: &TestFunction) -> f64 {
        let mut s = 0.0;
        for a in &self.boxes {
            for b in &other.boxes {
                s += a.amp * b.amp * a.overlap(b);
            }
        }
        s
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.inner(self).max(0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// `‖ψ‖_{L¹}`.
    pub fn l1_norm(&self) -> f64 {
        self.abs().integral()
    }

    /// `|ψ|` as a combination of disjoint boxes.
    pub fn abs(&self) -> TestFunction {
        let d = self.dimension;
        let mut breaks: Vec<Vec<f64>> = vec![Vec::new(); d];
        for b in self.boxes.iter().filter(|b| b.amp != 0.0) {
            for a in 0..d {
                breaks[a].push(b.lo[a]);
                breaks[a].push(b.hi[a]);
            }
        }
        for br in &mut breaks {
            br.sort_by(f64::total_cmp);
            br.dedup();
        }
        let mut boxes = Vec::new();
        if breaks.iter().all(|b| b.len() >= 2) {
            let counts: Vec<usize> = breaks.iter().map(|b| b.len() - 1).collect();
            let total: usize = counts.iter().product();
            let mut mid = vec![0.0; d];
            for i in 0..total {
                let (mut lo, mut hi) = (vec![0.0; d], vec![0.0; d]);
                let mut rest = i;
                for a in (0..d).rev() {
                    let k = rest % counts[a];
                    rest /= counts[a];
                    lo[a] = breaks[a][k];
                    hi[a] = breaks[a][k + 1];
                    mid[a] = 0.5 * (lo[a] + hi[a]);
                }
                let v = self.eval(&mid).abs();
                if v != 0.0 {
                    boxes.push(BoxTerm { amp: v, lo, hi });
                }
            }
        }
        TestFunction { dimension: d, boxes }
    }

    /// Bounding box of the boxes with nonzero amplitude.
    pub fn support(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let active: Vec<&BoxTerm> = self.boxes.iter().filter(|b| b.amp != 0.0 && b.volume() > 0.0).collect();
        if active.is_empty() {
            return None;
        }
        let d = self.dimension;
        let lo = (0..d).map(|a| active.iter().map(|b| b.lo[a]).fold(f64::INFINITY, f64::min)).collect();
        let hi = (0..d).map(|a| active.iter().map(|b| b.hi[a]).fold(f64::NEG_INFINITY, f64::max)).collect();
        Some((lo, hi))
    }

    /// Largest absolute coordinate of the support.
    pub fn extent(&self) -> f64 {
        self.support()
            .map(|(lo, hi)| lo.iter().chain(&hi).map(|v| v.abs()).fold(0.0, f64::max))
            .unwrap_or(0.0)
    }
}

/// `ψ_N(x) = N^{-d} ψ(x/N)`.
pub fn scale_psi(psi: &TestFunction, n: f64) -> Result<TestFunction> {
    if !(n > 0.0) {
        return Err(invalid("N", format!("{n} must be > 0")));
    }
    let amp = n.powi(-(psi.dimension as i32));
    Ok(TestFunction {
        dimension: psi.dimension,
        boxes: psi
            .boxes
            .iter()
            .map(|b| BoxTerm {
                amp: b.amp * amp,
                lo: b.lo.iter().map(|v| v * n).collect(),
                hi: b.hi.iter().map(|v| v * n).collect(),
            })
            .collect(),
    })
}

/// Base functions for the shifted and scaled Lipschitz families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseFunction {
    Identity,
    Sin,
    Cos,
    Tanh,
    Abs,
}

impl BaseFunction {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Self::Identity => u,
            Self::Sin => u.sin(),
            Self::Cos => u.cos(),
            Self::Tanh => u.tanh(),
            Self::Abs => u.abs(),
        }
    }

    pub fn lip(self) -> f64 {
        1.0
    }
}

/// A Lipschitz observable `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LipFunction {
    Identity,
    Constant { c: f64 },
    /// `a + b u`.
    Affine { a: f64, b: f64 },
    /// `g_a(u) = g(u - a)`.
    Shifted { base: BaseFunction, a: f64 },
    /// `g_{a,b}(u) = b g(u / a)`.
    Scaled { base: BaseFunction, a: f64, b: f64 },
    /// Piecewise linear, constant beyond the end knots.
    Tabulated { knots: Vec<(f64, f64)> },
    /// `Σ cᵢ gᵢ`.
    Combination { terms: Vec<(f64, LipFunction)> },
}

impl LipFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Scaled { a, .. } if *a == 0.0 || !a.is_finite() => {
                Err(invalid("g.a", "scale must be finite and nonzero"))
            }
            Self::Tabulated { knots } => {
                if knots.len() < 2 || knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    Err(invalid("g.knots", "need ≥ 2 knots with increasing abscissae"))
                } else {
                    Ok(())
                }
            }
            Self::Combination { terms } => terms.iter().try_for_each(|(_, g)| g.validate()),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Self::Identity => u,
            Self::Constant { c } => *c,
            Self::Affine { a, b } => a + b * u,
            Self::Shifted { base, a } => base.eval(u - a),
            Self::Scaled { base, a, b } => b * base.eval(u / a),
            Self::Tabulated { knots } => interpolate(knots, u),
            Self::Combination { terms } => terms.iter().map(|(c, g)| c * g.eval(u)).sum(),
        }
    }

    /// An upper bound on `Lip(g)`, exact for every kind except combinations.
    pub fn lip(&self) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Constant { .. } => 0.0,
            Self::Affine { b, .. } => b.abs(),
            Self::Shifted { base, .. } => base.lip(),
            Self::Scaled { base, a, b } => base.lip() * b.abs() / a.abs(),
            Self::Tabulated { knots } => knots
                .windows(2)
                .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
                .fold(0.0, f64::max),
            Self::Combination { terms } => terms.iter().map(|(c, g)| c.abs() * g.lip()).sum(),
        }
    }

    pub fn g0(&self) -> f64 {
        self.eval(0.0)
    }

    /// `‖g‖_Lip = |g(0)| + Lip(g)`.
    pub fn norm(&self) -> f64 {
        self.g0().abs() + self.lip()
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Self::Constant { .. } => true,
            Self::Affine { b, .. } => *b == 0.0,
            Self::Scaled { b, .. } => *b == 0.0,
            Self::Tabulated { knots } => knots.iter().all(|k| k.1 == knots[0].1),
            Self::Combination { terms } => terms.iter().all(|(c, g)| *c == 0.0 || g.is_constant()),
            _ => false,
        }
    }

    /// `E[g(u(t, 0))]` when it follows from `E u = 1` alone.
    pub fn exact_baseline(&self) -> Option<f64> {
        match self {
            Self::Identity => Some(1.0),
            Self::Constant { c } => Some(*c),
            Self::Affine { a, b } => Some(a + b),
            Self::Shifted { base: BaseFunction::Identity, a } => Some(1.0 - a),
            Self::Scaled { base: BaseFunction::Identity, a, b } => Some(b / a),
            Self::Combination { terms } => terms
                .iter()
                .map(|(c, g)| g.exact_baseline().map(|v| c * v))
                .sum(),
            _ => None,
        }
    }

    /// `b` when `g(u) = a + b u`.
    pub fn affine_slope(&self) -> Option<f64> {
        match self {
            Self::Identity => Some(1.0),
            Self::Constant { .. } => Some(0.0),
            Self::Affine { b, .. } => Some(*b),
            Self::Shifted { base: BaseFunction::Identity, .. } => Some(1.0),
            Self::Scaled { base: BaseFunction::Identity, a, b } => Some(b / a),
            Self::Combination { terms } => terms
                .iter()
                .map(|(c, g)| g.affine_slope().map(|v| c * v))
                .sum(),
            _ => None,
        }
    }

    /// Short label for CSV output.
    pub fn label(&self) -> String {
        match self {
            Self::Identity => "id".into(),
            Self::Constant { c } => format!("const({c})"),
            Self::Affine { a, b } => format!("affine({a},{b})"),
            Self::Shifted { base, a } => format!("{base:?}(u-{a})").to_lowercase(),
            Self::Scaled { base, a, b } => format!("{b}*{base:?}(u/{a})").to_lowercase(),
            Self::Tabulated { knots } => format!("tabulated[{}]", knots.len()),
            Self::Combination { terms } => format!("combination[{}]", terms.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum BaselineSource {
    Exact,
    MonteCarlo { replicas: usize },
}

/// The centering constant `E[g(u(t,0))]` and where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
    pub source: BaselineSource,
}

impl Baseline {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            source: BaselineSource::Exact,
        }
    }

    /// Pooled mean of `g(u)` over a set of replicas not used for sampling.
    pub fn from_replicas(fields: &[SolutionField], g: &LipFunction) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let (sum, count) = fields.iter().fold((0.0, 0usize), |(s, c), f| {
            (s + f.values.iter().map(|&u| g.eval(u)).sum::<f64>(), c + f.values.len())
        });
        Ok(Self {
            value: sum / count as f64,
            source: BaselineSource::MonteCarlo { replicas: fields.len() },
        })
    }
}

/// Exact cell integrals `∫_{cell j} ψ_N`, stored sparsely.
#[derive(Debug, Clone)]
pub struct OccupationWeights {
    pub n: f64,
    pub dimension: usize,
    pub entries: Vec<(usize, f64)>,
    /// `∫ψ`.
    pub integral: f64,
}

/// Fails with `SupportOverflow` unless `L > 2·extent(ψ_N) + 8√t`.
pub fn check_support(grid: &Grid, psi: &TestFunction, n: f64, t: f64, name: &str) -> Result<()> {
    let extent = psi.extent() * n;
    if !grid.fits(extent, t) {
        return Err(Error::SupportOverflow {
            psi: name.to_string(),
            detail: format!(
                "scaled extent {extent} needs L > {}, grid has L = {}",
                2.0 * extent + 8.0 * t.max(0.0).sqrt(),
                grid.length
            ),
        });
    }
    Ok(())
}

pub fn occupation_weights(grid: &Grid, psi: &TestFunction, n: f64, t: f64) -> Result<OccupationWeights> {
    if psi.dimension != grid.d {
        return Err(invalid("psi.dimension", "differs from grid dimension"));
    }
    check_support(grid, psi, n, t, "psi")?;
    let scaled = scale_psi(psi, n)?;
    let mut dense = vec![0.0; grid.cells()];
    let mut touched = vec![false; grid.cells()];
    let nn = grid.n as i64;
    for b in &scaled.boxes {
        if b.amp == 0.0 || b.volume() == 0.0 {
            continue;
        }
        // Per-axis (cell, overlap length) lists.
        let axes: Vec<Vec<(usize, f64)>> = (0..grid.d)
            .map(|a| {
                let (lo, hi) = (b.lo[a], b.hi[a]);
                let first = (lo / grid.dx).floor() as i64;
                let last = (hi / grid.dx).ceil() as i64;
                (first..last)
                    .filter_map(|k| {
                        let len = hi.min((k + 1) as f64 * grid.dx) - lo.max(k as f64 * grid.dx);
                        (len > 0.0).then(|| (k.rem_euclid(nn) as usize, len))
                    })
                    .collect()
            })
            .collect();
        let counts: Vec<usize> = axes.iter().map(Vec::len).collect();
        let total: usize = counts.iter().product();
        let mut idx = [0usize; 3];
        for mut i in 0..total {
            let mut w = b.amp;
            for a in (0..grid.d).rev() {
                let (cell, len) = axes[a][i % counts[a]];
                i /= counts[a];
                idx[a] = cell;
                w *= len;
            }
            let j = grid.flatten(&idx);
            dense[j] += w;
            touched[j] = true;
        }
    }
    let entries = dense
        .into_iter()
        .zip(touched)
        .enumerate()
        .filter(|(_, (_, t))| *t)
        .map(|(j, (w, _))| (j, w))
        .collect();
    Ok(OccupationWeights {
        n,
        dimension: grid.d,
        entries,
        integral: psi.integral(),
    })
}

impl OccupationWeights {
    /// `N^{d/2} Σ_j w_j (g(u_j) - baseline)`.
    pub fn value(&self, u: &[f64], g: &LipFunction, baseline: f64) -> f64 {
        let s: f64 = self.entries.iter().map(|&(j, w)| w * (g.eval(u[j]) - baseline)).sum();
        self.n.powf(0.5 * self.dimension as f64) * s
    }
}

/// A realized `N^{d/2} S_{N,t}(ψ, g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationSample {
    pub n: f64,
    pub t: f64,
    pub psi_id: String,
    pub g_id: String,
    pub value: f64,
    pub baseline: Baseline,
}

pub fn occupation_sample(
    field: &SolutionField,
    psi: &TestFunction,
    g: &LipFunction,
    n: f64,
    baseline: Baseline,
) -> Result<OccupationSample> {
    let w = occupation_weights(&field.grid, psi, n, field.time)?;
    let value = w.value(&field.values, g, baseline.value);
    if !value.is_finite() {
        return Err(invalid("value", "occupation sample is not finite"));
    }
    Ok(OccupationSample {
        n,
        t: field.time,
        psi_id: "psi".into(),
        g_id: g.label(),
        value,
        baseline,
    })
}

/// `W_{N,t}(y) = N^{-d/2} ∫_{[0,Ny]} (g(u(t,x)) - baseline) dx` for each `y`,
/// from one prefix-sum pass over the field.
pub fn brownian_sheet_field(
    field: &SolutionField,
    g: &LipFunction,
    n: f64,
    ys: &[Vec<f64>],
    baseline: f64,
) -> Result<Vec<f64>> {
    let grid = field.grid;
    let d = grid.d;
    let m = ys
        .iter()
        .flat_map(|y| y.iter().copied())
        .fold(0.0, f64::max);
    if ys.iter().any(|y| y.len() != d || y.iter().any(|v| *v < 0.0)) {
        return Err(invalid("y", "points must be in [0, m]^d"));
    }
    let extent = n * m;
    if !grid.fits(extent, field.time) {
        return Err(Error::SupportOverflow {
            psi: "1_[0,y]".into(),
            detail: format!("N·m = {extent} does not fit L = {}", grid.length),
        });
    }
    let np = grid.n + 1;
    let total = np.pow(d as u32);
    // prefix[i] = Σ_{cells k < i componentwise} h_k
    let mut prefix = vec![0.0; total];
    let strides: Vec<usize> = (0..d).map(|a| np.pow((d - 1 - a) as u32)).collect();
    for (j, &u) in field.values.iter().enumerate() {
        let idx = grid.unflatten(j);
        let p: usize = (0..d).map(|a| (idx[a] + 1) * strides[a]).sum();
        prefix[p] = g.eval(u) - baseline;
    }
    for a in 0..d {
        let s = strides[a];
        for p in 0..total {
            if (p / s) % np > 0 {
                prefix[p] += prefix[p - s];
            }
        }
    }
    let vol = grid.cell_volume();
    let norm = n.powf(-0.5 * d as f64);
    Ok(ys
        .iter()
        .map(|y| {
            let mut base = [0usize; 3];
            let mut frac = [0.0; 3];
            for a in 0..d {
                let pos = n * y[a] / grid.dx;
                let k = (pos.floor() as usize).min(grid.n);
                base[a] = k;
                frac[a] = if k == grid.n { 0.0 } else { pos - k as f64 };
            }
            let mut acc = 0.0;
            for corner in 0..(1usize << d) {
                let mut w = 1.0;
                let mut p = 0;
                let mut skip = false;
                for a in 0..d {
                    let up = (corner >> a) & 1 == 1;
                    w *= if up { frac[a] } else { 1.0 - frac[a] };
                    let k = base[a] + up as usize;
                    if k > grid.n {
                        skip = true;
                    }
                    p += k * strides[a];
                }
                if !skip && w != 0.0 {
                    acc += w * prefix[p];
                }
            }
            norm * vol * acc
        })
        .collect())
}

/// `B_t(g, G) = c₀² t f(ℝ^d)` for `σ ≡ c₀`.
pub fn exact_bt_constant_sigma(c0: f64, t: f64, f: &CovarianceMeasure) -> f64 {
    c0 * c0 * t * f.total_mass()
}

/// Default lag cutoff `6√(2t)` plus the support radius of `f`.
pub fn default_cutoff(t: f64, f: &CovarianceMeasure) -> f64 {
    6.0 * (2.0 * t).sqrt() + f.support_radius()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BtEstimate {
    pub value: f64,
    /// Mean `|Ĉov|` over the lags on the boundary of the cutoff cube.
    pub boundary: f64,
    pub cutoff: f64,
    pub replicas: usize,
}

/// One replica's share of a [`BtAccumulator`]; partials are merged in replica
/// order so the estimate does not depend on thread scheduling.
#[derive(Debug, Clone)]
pub struct BtPartial {
    sum_a: f64,
    sum_b: f64,
    cube: Vec<f64>,
}

/// Streaming estimator of `B̂ = dx^d Σ_{|lag|∞ ≤ cutoff} Ĉov[g(u(t,x+lag)), G(u(T,x))]`.
///
/// Values are accumulated relative to `g(1)` and `G(1)`, which makes the
/// degenerate field `u ≡ 1` contribute exact zeros.
pub struct BtAccumulator {
    grid: Grid,
    cutoff_cells: usize,
    cutoff: f64,
    fft: FftNd,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    lag_index: Vec<(usize, bool)>,
    total: BtPartial,
    replicas: usize,
}

impl BtAccumulator {
    pub fn new(grid: Grid, cutoff: f64) -> Result<Self> {
        if !(cutoff >= 0.0) || cutoff > grid.length / 4.0 {
            return Err(invalid("cutoff", format!("{cutoff} must be in [0, L/4 = {}]", grid.length / 4.0)));
        }
        let cells = grid.cells();
        let k = (cutoff / grid.dx).round() as isize;
        let side = (2 * k + 1) as usize;
        let mut lag_index = Vec::with_capacity(side.pow(grid.d as u32));
        let mut idx = [0usize; 3];
        for mut i in 0..side.pow(grid.d as u32) {
            let mut on_edge = false;
            for a in (0..grid.d).rev() {
                let lag = (i % side) as isize - k;
                i /= side;
                on_edge |= lag.abs() == k;
                idx[a] = lag.rem_euclid(grid.n as isize) as usize;
            }
            lag_index.push((grid.flatten(&idx), on_edge));
        }
        let cube = vec![0.0; lag_index.len()];
        Ok(Self {
            grid,
            cutoff_cells: k as usize,
            cutoff,
            fft: FftNd::new(grid.n, grid.d),
            a: vec![Complex64::new(0.0, 0.0); cells],
            b: vec![Complex64::new(0.0, 0.0); cells],
            lag_index,
            total: BtPartial {
                sum_a: 0.0,
                sum_b: 0.0,
                cube,
            },
            replicas: 0,
        })
    }

    pub fn cutoff_cells(&self) -> usize {
        self.cutoff_cells
    }

    /// Lag sums of one replica: `ut` at time `t`, `u_big_t` at time `T`.
    pub fn contribution(&mut self, ut: &[f64], u_big_t: &[f64], g: &LipFunction, big_g: &LipFunction) -> BtPartial {
        let (oa, ob) = (g.eval(1.0), big_g.eval(1.0));
        for (slot, &u) in self.a.iter_mut().zip(ut) {
            *slot = Complex64::new(g.eval(u) - oa, 0.0);
        }
        for (slot, &u) in self.b.iter_mut().zip(u_big_t) {
            *slot = Complex64::new(big_g.eval(u) - ob, 0.0);
        }
        let sum_a = self.a.iter().map(|c| c.re).sum::<f64>();
        let sum_b = self.b.iter().map(|c| c.re).sum::<f64>();
        let mut cube = vec![0.0; self.lag_index.len()];
        if self.a.iter().any(|c| c.re != 0.0) && self.b.iter().any(|c| c.re != 0.0) {
            self.fft.forward(&mut self.a);
            self.fft.forward(&mut self.b);
            for (x, y) in self.a.iter_mut().zip(&self.b) {
                *x *= y.conj();
            }
            self.fft.inverse(&mut self.a);
            // a[lag] = cells · Σ_x A(x + lag) B(x)
            let inv = 1.0 / self.grid.cells() as f64;
            for (c, &(j, _)) in cube.iter_mut().zip(&self.lag_index) {
                *c = self.a[j].re * inv;
            }
        }
        BtPartial { sum_a, sum_b, cube }
    }

    pub fn add_partial(&mut self, p: &BtPartial) {
        self.total.sum_a += p.sum_a;
        self.total.sum_b += p.sum_b;
        for (c, v) in self.total.cube.iter_mut().zip(&p.cube) {
            *c += v;
        }
        self.replicas += 1;
    }

    pub fn add(&mut self, ut: &[f64], u_big_t: &[f64], g: &LipFunction, big_g: &LipFunction) {
        let p = self.contribution(ut, u_big_t, g, big_g);
        self.add_partial(&p);
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn finish(&self) -> BtEstimate {
        let cells = self.grid.cells() as f64;
        let r = self.replicas.max(1) as f64;
        let mean_a = self.total.sum_a / (r * cells);
        let mean_b = self.total.sum_b / (r * cells);
        let mut sum = 0.0;
        let mut boundary = 0.0;
        let mut boundary_count = 0usize;
        for (&raw, &(_, on_edge)) in self.total.cube.iter().zip(&self.lag_index) {
            let cov = raw / (r * cells) - mean_a * mean_b;
            sum += cov;
            if on_edge {
                boundary += cov.abs();
                boundary_count += 1;
            }
        }
        BtEstimate {
            value: self.grid.cell_volume() * sum,
            boundary: boundary / boundary_count.max(1) as f64,
            cutoff: self.cutoff,
            replicas: self.replicas,
        }
    }

    /// Like [`Self::finish`] but fails with `CutoffTooSmall` when the boundary
    /// covariance exceeds 5% of the estimate.
    pub fn finish_checked(&self) -> Result<BtEstimate> {
        let est = self.finish();
        if est.boundary > 0.05 * est.value.abs() {
            return Err(Error::CutoffTooSmall {
                boundary: est.boundary,
                estimate: est.value,
            });
        }
        Ok(est)
    }
}

/// Minimum replica count for [`estimate_bt`].
pub const MIN_BT_REPLICAS: usize = 100;

/// `B̂_{t,T}(g, G)` from paired replicas; pass `None` for `T = t`.
pub fn estimate_bt(
    fields_t: &[SolutionField],
    fields_big_t: Option<&[SolutionField]>,
    g: &LipFunction,
    big_g: &LipFunction,
    cutoff: f64,
) -> Result<BtEstimate> {
    if fields_t.len() < MIN_BT_REPLICAS {
        return Err(Error::TooFewSamples {
            needed: MIN_BT_REPLICAS,
            got: fields_t.len(),
        });
    }
    let other = fields_big_t.unwrap_or(fields_t);
    if other.len() != fields_t.len() {
        return Err(invalid("fields", "time-t and time-T replicas must pair up"));
    }
    let mut acc = BtAccumulator::new(fields_t[0].grid, cutoff)?;
    for (a, b) in fields_t.iter().zip(other) {
        acc.add(&a.values, &b.values, g, big_g);
    }
    acc.finish_checked()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NondegeneracyReport {
    pub estimate: f64,
    pub lower_bound: f64,
    /// 1 or 2, the structural condition that applies.
    pub condition: u8,
    pub constant: f64,
    pub passed: bool,
    pub skipped: bool,
}

/// Structural condition for `σ`: `(1, c₀)` when `σ ≥ c₀ > 0` (or `≤ -c₀`)
/// on `(0, ∞)`, `(2, c₁)` when `σ(0) = 0` and `σ(w) ≥ c₁ w` (or `≤ -c₁ w`).
pub fn nondegeneracy_condition(sigma: &SigmaFunction) -> Result<(u8, f64)> {
    let not = |why: &str| Err(Error::ConditionNotApplicable(why.to_string()));
    match sigma {
        SigmaFunction::Constant { c } if *c != 0.0 => Ok((1, c.abs())),
        SigmaFunction::Linear { c } if *c != 0.0 => Ok((2, c.abs())),
        SigmaFunction::Affine { a, b } => {
            if *a != 0.0 && a.signum() * b >= 0.0 {
                Ok((1, a.abs()))
            } else if *a == 0.0 && *b != 0.0 {
                Ok((2, b.abs()))
            } else {
                not("affine σ changes sign on (0, ∞)")
            }
        }
        SigmaFunction::Tabulated { knots } => {
            let mut vals: Vec<f64> = knots.iter().filter(|k| k.0 > 0.0).map(|k| k.1).collect();
            vals.push(sigma.eval(0.0));
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo > 0.0 {
                Ok((1, lo))
            } else if hi < 0.0 {
                Ok((1, -hi))
            } else {
                not("tabulated σ is not bounded away from zero on (0, ∞)")
            }
        }
        _ => not("σ ≡ 0"),
    }
}

/// Checks `B̂_t(id, id) ≥ c t f(ℝ^d) - tolerance` with `c = c₀²` or `c₁²`.
pub fn nondegeneracy_check(
    fields: &[SolutionField],
    sigma: &SigmaFunction,
    f: &CovarianceMeasure,
    tolerance: f64,
) -> Result<NondegeneracyReport> {
    let (condition, c) = nondegeneracy_condition(sigma)?;
    let t = fields.first().map(|fl| fl.time).unwrap_or(0.0);
    let lower_bound = c * c * t * f.total_mass();
    if t == 0.0 {
        return Ok(NondegeneracyReport {
            estimate: 0.0,
            lower_bound,
            condition,
            constant: c,
            passed: true,
            skipped: true,
        });
    }
    let cutoff = default_cutoff(t, f).min(fields[0].grid.length / 4.0);
    let est = estimate_bt(fields, None, &LipFunction::Identity, &LipFunction::Identity, cutoff)?;
    Ok(NondegeneracyReport {
        estimate: est.value,
        lower_bound,
        condition,
        constant: c,
        passed: est.value >= lower_bound - tolerance,
        skipped: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::RngStream;

    fn field(values: Vec<f64>, grid: Grid, t: f64) -> SolutionField {
        SolutionField {
            grid,
            time: t,
            values,
            scheme: crate::solver::Scheme::Euler,
            stream: RngStream::new(0, 0, 0, 0),
        }
    }

    #[test]
    fn scale_psi_examples() {
        let psi = TestFunction::interval(0.0, 1.0).unwrap();
        assert_eq!(scale_psi(&psi, 1.0).unwrap(), psi);
        let s = scale_psi(&psi, 4.0).unwrap();
        assert_eq!(s.boxes[0].amp, 0.25);
        assert_eq!((s.boxes[0].lo[0], s.boxes[0].hi[0]), (0.0, 4.0));
        assert!((s.l1_norm() - psi.l1_norm()).abs() < 1e-15);
        assert!((s.l2_norm_sq() * 4.0 - psi.l2_norm_sq()).abs() < 1e-15);
        assert!(scale_psi(&psi, 0.0).is_err());
    }

    #[test]
    fn norms_of_overlapping_boxes() {
        // 1_[0,2] - 1_[1,3]: +1 on [0,1), 0 on [1,2), -1 on [2,3]
        let psi = TestFunction::interval(0.0, 2.0)
            .unwrap()
            .combine(1.0, &TestFunction::interval(1.0, 3.0).unwrap(), -1.0);
        assert!((psi.l1_norm() - 2.0).abs() < 1e-15);
        assert!((psi.l2_norm_sq() - 2.0).abs() < 1e-15);
        assert_eq!(psi.integral(), 0.0);
        let a = TestFunction::interval(0.0, 2.0).unwrap();
        let b = TestFunction::interval(1.0, 3.0).unwrap();
        assert_eq!(a.inner(&b), 1.0);
    }

    #[test]
    fn l2_matches_grid_quadrature_in_two_dimensions() {
        let psi = TestFunction::new(
            2,
            vec![
                BoxTerm { amp: 1.5, lo: vec![0.0, 0.0], hi: vec![1.0, 0.5] },
                BoxTerm { amp: -0.5, lo: vec![0.5, 0.25], hi: vec![1.5, 1.0] },
            ],
        )
        .unwrap();
        let n = 400;
        let h = 2.0 / n as f64;
        let mut q = 0.0;
        let mut q1 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = psi.eval(&[(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
                q += v * v * h * h;
                q1 += v.abs() * h * h;
            }
        }
        assert!((q - psi.l2_norm_sq()).abs() < 1e-10);
        assert!((q1 - psi.l1_norm()).abs() < 1e-10);
    }

    #[test]
    fn from_samples_round_trip() {
        let psi = TestFunction::from_samples(1, &[-1.0], 0.5, 4, &[1.0, 0.0, -2.0, 3.0]).unwrap();
        assert_eq!(psi.eval(&[-0.75]), 1.0);
        assert_eq!(psi.eval(&[0.2]), -2.0);
        assert!((psi.l2_norm_sq() - 0.5 * (1.0 + 4.0 + 9.0)).abs() < 1e-15);
    }

    #[test]
    fn lip_function_properties() {
        let g = LipFunction::Scaled { base: BaseFunction::Tanh, a: 2.0, b: 3.0 };
        assert_eq!(g.lip(), 1.5);
        assert_eq!(g.g0(), 0.0);
        let h = LipFunction::Shifted { base: BaseFunction::Cos, a: 0.0 };
        assert_eq!(h.norm(), 2.0);
        assert_eq!(LipFunction::Affine { a: 2.0, b: -1.0 }.exact_baseline(), Some(1.0));
        assert_eq!(LipFunction::Shifted { base: BaseFunction::Sin, a: 1.0 }.exact_baseline(), None);
        assert_eq!(LipFunction::Affine { a: 2.0, b: -1.0 }.affine_slope(), Some(-1.0));
        assert_eq!(LipFunction::Shifted { base: BaseFunction::Sin, a: 1.0 }.affine_slope(), None);
        let mut x = 0.123f64;
        for _ in 0..200 {
            x = (x * 9301.0 + 0.49).fract();
            let y = (x * 7.0).fract() * 10.0 - 5.0;
            let u = x * 10.0 - 5.0;
            assert!((g.eval(u) - g.eval(y)).abs() <= g.lip() * (u - y).abs() + 1e-12);
        }
    }

    #[test]
    fn weights_are_exact_overlaps() {
        let grid = Grid::with_max_dt(1, 16.0, 64).unwrap();
        let psi = TestFunction::interval(0.1, 1.3).unwrap();
        let w = occupation_weights(&grid, &psi, 2.0, 0.0).unwrap();
        let total: f64 = w.entries.iter().map(|e| e.1).sum();
        assert!((total - psi.integral()).abs() < 1e-14);
        // ψ_2 = ½ 1_[0.2, 2.6], dx = 0.25: first cell [0, 0.25) holds 0.05
        assert_eq!(w.entries[0].0, 0);
        assert!((w.entries[0].1 - 0.5 * 0.05).abs() < 1e-15);
        let negative = TestFunction::interval(-1.0, 0.0).unwrap();
        let wn = occupation_weights(&grid, &negative, 1.0, 0.0).unwrap();
        assert_eq!(wn.entries.iter().map(|e| e.0).collect::<Vec<_>>(), vec![60, 61, 62, 63]);
        let big = TestFunction::interval(0.0, 8.0).unwrap();
        assert!(matches!(occupation_weights(&grid, &big, 1.0, 1.0), Err(Error::SupportOverflow { .. })));
    }

    #[test]
    fn constant_g_and_flat_field_give_zero() {
        let grid = Grid::with_max_dt(1, 16.0, 64).unwrap();
        let values: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let psi = TestFunction::interval(0.0, 1.0).unwrap();
        let fl = field(values, grid, 0.5);
        let s = occupation_sample(&fl, &psi, &LipFunction::Constant { c: 3.0 }, 2.0, Baseline::exact(3.0)).unwrap();
        assert_eq!(s.value, 0.0);
        let flat = field(vec![1.0; 64], grid, 0.5);
        let g = LipFunction::Shifted { base: BaseFunction::Sin, a: 0.3 };
        let s = occupation_sample(&flat, &psi, &g, 2.0, Baseline::exact(g.eval(1.0))).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn sheet_matches_occupation_samples() {
        let grid = Grid::with_max_dt(2, 16.0, 32).unwrap();
        let values: Vec<f64> = (0..grid.cells()).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
        let fl = field(values, grid, 0.0);
        let g = LipFunction::Identity;
        let ys = vec![vec![0.3, 0.7], vec![1.0, 0.0], vec![0.55, 1.2]];
        let w = brownian_sheet_field(&fl, &g, 2.0, &ys, 1.0).unwrap();
        assert_eq!(w[1], 0.0);
        for (y, wv) in ys.iter().zip(&w) {
            let psi = TestFunction::indicator(&[0.0, 0.0], y).unwrap();
            let s = occupation_sample(&fl, &psi, &g, 2.0, Baseline::exact(1.0)).unwrap();
            assert!((s.value - wv).abs() < 1e-12, "{y:?}: {} vs {wv}", s.value);
        }
    }

    #[test]
    fn exact_bt_examples() {
        let f = CovarianceMeasure::dirac(1, 1.0).unwrap();
        assert_eq!(exact_bt_constant_sigma(1.0, 1.0, &f), 1.0);
        assert_eq!(exact_bt_constant_sigma(2.0, 1.0, &f), 4.0);
        assert_eq!(exact_bt_constant_sigma(1.0, 0.0, &f), 0.0);
    }

    #[test]
    fn bt_of_flat_fields_is_zero() {
        let grid = Grid::with_max_dt(1, 16.0, 64).unwrap();
        let fields: Vec<SolutionField> = (0..100).map(|_| field(vec![1.0; 64], grid, 0.0)).collect();
        let est = estimate_bt(&fields, None, &LipFunction::Identity, &LipFunction::Identity, 2.0).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(estimate_bt(&fields[..10], None, &LipFunction::Identity, &LipFunction::Identity, 2.0).is_err());
    }

    #[test]
    fn nondegeneracy_conditions() {
        assert_eq!(nondegeneracy_condition(&SigmaFunction::Constant { c: -2.0 }).unwrap(), (1, 2.0));
        assert_eq!(nondegeneracy_condition(&SigmaFunction::Linear { c: 1.0 }).unwrap(), (2, 1.0));
        assert_eq!(nondegeneracy_condition(&SigmaFunction::Affine { a: 0.5, b: 1.0 }).unwrap(), (1, 0.5));
        assert!(matches!(
            nondegeneracy_condition(&SigmaFunction::Affine { a: 1.0, b: -1.0 }),
            Err(Error::ConditionNotApplicable(_))
        ));
    }
}
