//! Spatial covariance measures, the Dalang integral `Υ` and its inverse `Λ`,
//! the heat kernel, and the explicit moment, tail and Malliavin-derivative
//! bounds for the occupation field.
//!
//! Fourier transforms follow the convention `f̂(z) = ∫ e^{ix·z} f(dx)`, so
//! `f̂(0)` is the total mass and
//!
//! ```text
//! Υ(λ) = 2 (2π)^{-d} ∫ f̂(z) / (2λ + |z|²) dz.
//! ```
//!
//! Bounds that involve `exp{2TΛ(·)}` overflow `f64` for white noise, so each
//! has a `log_*` form; the plain form may return `+inf`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{invalid, Error, Result};
use crate::quad::{self, QuadOptions};
use crate::special::{gauss_density, ln_norm_cdf, norm_cdf, norm_pdf};

/// Closed-form covariance families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum CovarianceKind {
    /// `f = mass · δ₀` (space-time white noise).
    #[serde(alias = "dirac_at_zero")]
    Dirac,
    /// `f = mass · N(0, scale² I)`, `f̂(z) = mass · exp(-scale²|z|²/2)`.
    #[serde(alias = "gaussian_density")]
    Gaussian { scale: f64 },
    /// White noise averaged over a box of half-width `halfwidth`: the
    /// covariance is the product over axes of the tent `(2h - |x|)₊ / 4h²`
    /// and `f̂(z) = mass · Π sinc²(h z_j)`.
    UniformBox { halfwidth: f64 },
    /// Product of Laplace densities `(rate/2) e^{-rate |x_j|}`,
    /// `f̂(z) = mass · Π rate² / (rate² + z_j²)`.
    #[serde(alias = "exponential_density")]
    Exponential { rate: f64 },
}

/// The spatial correlation `f`, a finite nonnegative-definite measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMeasure {
    #[serde(flatten)]
    pub kind: CovarianceKind,
    pub dimension: usize,
    pub mass: f64,
}

impl CovarianceMeasure {
    pub fn new(kind: CovarianceKind, dimension: usize, mass: f64) -> Result<Self> {
        let m = Self {
            kind,
            dimension,
            mass,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn dirac(dimension: usize, mass: f64) -> Result<Self> {
        Self::new(CovarianceKind::Dirac, dimension, mass)
    }

    pub fn gaussian(dimension: usize, mass: f64, scale: f64) -> Result<Self> {
        Self::new(CovarianceKind::Gaussian { scale }, dimension, mass)
    }

    pub fn uniform_box(dimension: usize, mass: f64, halfwidth: f64) -> Result<Self> {
        Self::new(CovarianceKind::UniformBox { halfwidth }, dimension, mass)
    }

    pub fn exponential(dimension: usize, mass: f64, rate: f64) -> Result<Self> {
        Self::new(CovarianceKind::Exponential { rate }, dimension, mass)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dimension) {
            return Err(invalid("dimension", format!("{} not in 1..=3", self.dimension)));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(invalid("mass", format!("{} must be finite and > 0", self.mass)));
        }
        let param = match self.kind {
            CovarianceKind::Dirac => 1.0,
            CovarianceKind::Gaussian { scale } => scale,
            CovarianceKind::UniformBox { halfwidth } => halfwidth,
            CovarianceKind::Exponential { rate } => rate,
        };
        if !(param > 0.0 && param.is_finite()) {
            return Err(invalid("kind parameter", format!("{param} must be finite and > 0")));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            CovarianceKind::Dirac => "dirac",
            CovarianceKind::Gaussian { .. } => "gaussian",
            CovarianceKind::UniformBox { .. } => "uniform_box",
            CovarianceKind::Exponential { .. } => "exponential",
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self.kind, CovarianceKind::Dirac)
    }

    /// Dalang's condition: fails only for the Dirac mass in d ≥ 2.
    pub fn check_dalang(&self) -> Result<()> {
        if self.is_dirac() && self.dimension >= 2 {
            return Err(Error::DalangViolation {
                kind: self.name(),
                dimension: self.dimension,
            });
        }
        Ok(())
    }

    /// Normalized one-dimensional transform factor (equal to 1 at 0) for the
    /// product kinds.
    /// `J(τ) = ∫ φ(z) e^{-τz²} dz` for the normalized 1-D factor `φ` of the
    /// product kinds, equal to `2π E[k(X)]` with `X ~ N(0, 2τ)` and `k` the
    /// per-axis covariance density.
    fn axis_integral(&self, tau: f64) -> f64 {
        match self.kind {
            CovarianceKind::Exponential { rate } => {
                // π r e^{x²} erfc(x) with x = r√τ, in log form for large x.
                let x = rate * tau.sqrt();
                PI * rate * (2.0f64.ln() + x * x + ln_norm_cdf(-x * SQRT_2)).exp()
            }
            CovarianceKind::UniformBox { halfwidth } => {
                // Tent (a - |x|)₊ / a² with a = 2h.
                let a = 2.0 * halfwidth;
                let sd = (2.0 * tau).sqrt();
                let mean = if sd < 1e-300 {
                    a
                } else {
                    let q = a / sd;
                    2.0 * (a * (norm_cdf(q) - 0.5) - sd * (norm_pdf(0.0) - norm_pdf(q)))
                };
                2.0 * PI * mean / (a * a)
            }
            CovarianceKind::Gaussian { scale } => (PI / (tau + 0.5 * scale * scale)).sqrt(),
            CovarianceKind::Dirac => f64::INFINITY,
        }
    }

    fn fourier_factor(&self, z: f64) -> f64 {
        match self.kind {
            CovarianceKind::Dirac => 1.0,
            CovarianceKind::Gaussian { scale } => (-0.5 * scale * scale * z * z).exp(),
            CovarianceKind::UniformBox { halfwidth } => {
                let x = halfwidth * z;
                if x.abs() < 1e-4 {
                    let x2 = x * x;
                    // sinc² series
                    1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 45.0
                } else {
                    let s = x.sin() / x;
                    s * s
                }
            }
            CovarianceKind::Exponential { rate } => rate * rate / (rate * rate + z * z),
        }
    }

    /// `f̂(z)`; real, even, and bounded by `f̂(0) = mass`.
    pub fn fourier(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dimension);
        self.mass * z.iter().map(|&zj| self.fourier_factor(zj)).product::<f64>()
    }

    fn density_factor(&self, x: f64) -> f64 {
        match self.kind {
            CovarianceKind::Dirac => f64::NAN,
            CovarianceKind::Gaussian { scale } => gauss_density(scale * scale, x),
            CovarianceKind::UniformBox { halfwidth } => {
                let h = halfwidth;
                ((2.0 * h - x.abs()).max(0.0)) / (4.0 * h * h)
            }
            CovarianceKind::Exponential { rate } => 0.5 * rate * (-rate * x.abs()).exp(),
        }
    }

    /// Lebesgue density of `f`, `None` for the Dirac mass.
    pub fn density(&self, x: &[f64]) -> Option<f64> {
        if self.is_dirac() {
            return None;
        }
        Some(self.mass * x.iter().map(|&xj| self.density_factor(xj)).product::<f64>())
    }

    /// Kinks of the one-dimensional density factor, for quadrature.
    fn density_breaks(&self) -> Vec<f64> {
        match self.kind {
            CovarianceKind::UniformBox { halfwidth } => vec![-2.0 * halfwidth, 0.0, 2.0 * halfwidth],
            CovarianceKind::Exponential { .. } => vec![0.0],
            _ => vec![],
        }
    }

    /// A radius beyond which `f` is zero or negligible (per coordinate).
    pub fn support_radius(&self) -> f64 {
        match self.kind {
            CovarianceKind::Dirac => 0.0,
            CovarianceKind::Gaussian { scale } => 6.0 * scale,
            CovarianceKind::UniformBox { halfwidth } => 2.0 * halfwidth,
            CovarianceKind::Exponential { rate } => 12.0 / rate,
        }
    }

    fn heat_factor(&self, var: f64, x: f64) -> f64 {
        match self.kind {
            CovarianceKind::Dirac => gauss_density(var, x),
            CovarianceKind::Gaussian { scale } => gauss_density(var + scale * scale, x),
            CovarianceKind::UniformBox { halfwidth } => {
                let h = halfwidth;
                let sd = var.sqrt();
                let ramp = |c: f64| {
                    let m = x - c;
                    m * norm_cdf(m / sd) + sd * norm_pdf(m / sd)
                };
                (ramp(-2.0 * h) - 2.0 * ramp(0.0) + ramp(2.0 * h)) / (4.0 * h * h)
            }
            CovarianceKind::Exponential { rate } => {
                let sd = var.sqrt();
                let e = 0.5 * rate * rate * var;
                let left = (e - rate * x + ln_norm_cdf(x / sd - rate * sd)).exp();
                let right = (e + rate * x + ln_norm_cdf(-x / sd - rate * sd)).exp();
                0.5 * rate * (left + right)
            }
        }
    }

    /// `(p_v * f)(x)` in closed form, where `p_v` is the centered Gaussian
    /// density with covariance `v·I`. With `v = t` this is `(p_t * f)(x)`.
    pub fn heat_convolved(&self, var: f64, x: &[f64]) -> f64 {
        self.mass * x.iter().map(|&xj| self.heat_factor(var, xj)).product::<f64>()
    }

    /// One axis of [`Self::heat_convolved`] without the mass factor; the full
    /// value is `mass · Π_j heat_convolved_axis(v, x_j)`.
    pub fn heat_convolved_axis(&self, var: f64, x: f64) -> f64 {
        self.heat_factor(var, x)
    }

    /// `(p_s * f)(0)` evaluated in physical space by quadrature of
    /// `∫ p_s(x) f(x) dx` (closed form for the Dirac and Gaussian kinds).
    pub fn heat_at_origin_by_quadrature(&self, s: f64) -> f64 {
        let d = self.dimension as i32;
        match self.kind {
            CovarianceKind::Dirac => self.mass * (2.0 * PI * s).powf(-0.5 * d as f64),
            CovarianceKind::Gaussian { scale } => {
                self.mass * (2.0 * PI * (s + scale * scale)).powf(-0.5 * d as f64)
            }
            _ => {
                let sd = s.sqrt();
                let mut breaks = self.density_breaks();
                breaks.extend([-8.0 * sd, 8.0 * sd]);
                let reach = 10.0 * sd + 2.0 * self.support_radius();
                let r = quad::integrate_with_breaks(
                    |x| gauss_density(s, x) * self.density_factor(x),
                    -reach,
                    reach,
                    &breaks,
                    QuadOptions::with_rel_tol(1e-13),
                );
                self.mass * r.value.powi(d)
            }
        }
    }

    /// The constant `c = 2 / (3(2π)^d) ∫_{|z|<1} f̂(z) dz` with
    /// `λ Υ(λ) ≥ c` for every `λ > 1`.
    pub fn lul_constant(&self) -> f64 {
        let d = self.dimension;
        let opts = QuadOptions::with_rel_tol(1e-12);
        let ball_integral = match d {
            1 => quad::integrate(|z| self.fourier(&[z]), -1.0, 1.0, opts).value,
            2 => {
                quad::integrate(
                    |r| {
                        r * quad::integrate(
                            |th| self.fourier(&[r * th.cos(), r * th.sin()]),
                            0.0,
                            2.0 * PI,
                            opts,
                        )
                        .value
                    },
                    0.0,
                    1.0,
                    opts,
                )
                .value
            }
            _ => {
                quad::integrate(
                    |r| {
                        r * r
                            * quad::integrate(
                                |ct| {
                                    let st = (1.0 - ct * ct).max(0.0).sqrt();
                                    quad::integrate(
                                        |ph| {
                                            self.fourier(&[
                                                r * st * ph.cos(),
                                                r * st * ph.sin(),
                                                r * ct,
                                            ])
                                        },
                                        0.0,
                                        2.0 * PI,
                                        opts,
                                    )
                                    .value
                                },
                                -1.0,
                                1.0,
                                opts,
                            )
                            .value
                    },
                    0.0,
                    1.0,
                    opts,
                )
                .value
            }
        };
        2.0 / (3.0 * (2.0 * PI).powi(d as i32)) * ball_integral
    }
}

/// Heat kernel `p_t(x) = (2πt)^{-d/2} exp(-|x|²/2t)`.
pub fn heat_kernel(t: f64, x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (2.0 * PI * t).powf(-0.5 * x.len() as f64) * (-0.5 * r2 / t).exp()
}

fn unit_sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

/// `f` together with the quadrature settings used for `Υ` and `Λ`.
#[derive(Debug, Clone, Copy)]
pub struct DalangProfile {
    pub measure: CovarianceMeasure,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

/// Search bracket for `Λ`.
pub const LAMBDA_MIN: f64 = 1e-12;
pub const LAMBDA_MAX: f64 = 1e12;
const LAMBDA_MAX_ITER: usize = 200;
const LAMBDA_REL_TOL: f64 = 1e-10;

impl DalangProfile {
    pub fn new(measure: CovarianceMeasure) -> Result<Self> {
        measure.validate()?;
        measure.check_dalang()?;
        Ok(Self {
            measure,
            rel_tol: 1e-12,
            max_intervals: 4000,
        })
    }

    fn opts(&self) -> QuadOptions {
        QuadOptions {
            abs_tol: 1e-300,
            rel_tol: self.rel_tol,
            max_intervals: self.max_intervals,
        }
    }

    /// A frequency scale of `f̂` used to place quadrature split points.
    fn spectral_scale(&self) -> f64 {
        match self.measure.kind {
            CovarianceKind::Dirac => 1.0,
            CovarianceKind::Gaussian { scale } => 1.0 / scale,
            CovarianceKind::UniformBox { halfwidth } => 1.0 / halfwidth,
            CovarianceKind::Exponential { rate } => rate,
        }
    }

    /// `Υ(λ)`, by radial quadrature in frequency space. For the product
    /// kinds in d ≥ 2 the denominator is written as `∫₀^∞ e^{-(2λ+|z|²)τ} dτ`
    /// which factorizes the angular part.
    pub fn upsilon(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid("lambda", format!("{lambda} must be finite and > 0")));
        }
        self.measure.check_dalang()?;
        let f = &self.measure;
        let d = f.dimension;
        let opts = self.opts();
        let two_lambda = 2.0 * lambda;
        let prefactor = 2.0 / (2.0 * PI).powi(d as i32);
        let a = two_lambda.sqrt();
        let k = self.spectral_scale();

        let radial = |g: &dyn Fn(f64) -> f64| -> f64 {
            let cut = a.max(k);
            let mut breaks = vec![a.min(k), cut];
            if let CovarianceKind::UniformBox { halfwidth } = f.kind {
                // sinc² zeros; resolve the first few lobes explicitly.
                breaks.extend((1..=16).map(|j| j as f64 * PI / halfwidth));
            }
            let hi = breaks.iter().copied().fold(cut, f64::max);
            let body = quad::integrate_with_breaks(g, 0.0, hi, &breaks, opts).value;
            let tail = quad::integrate_to_infinity(g, hi, opts).value;
            body + tail
        };

        let value = match (d, f.kind) {
            (1, _) => {
                let g = |z: f64| f.fourier(&[z]) / (two_lambda + z * z);
                prefactor * 2.0 * radial(&g)
            }
            (_, CovarianceKind::Gaussian { .. }) => {
                let g = |r: f64| {
                    let mut z = vec![0.0; d];
                    z[0] = r;
                    r.powi(d as i32 - 1) * f.fourier(&z) / (two_lambda + r * r)
                };
                prefactor * unit_sphere_area(d) * radial(&g)
            }
            _ => {
                let g = |tau: f64| (-two_lambda * tau).exp() * f.axis_integral(tau).powi(d as i32);
                let t0 = 1.0 / two_lambda;
                // The mass sits near τ ~ 1/k²; decades up to t0 keep the
                // adaptive rule from skipping it when λ is tiny.
                let mut breaks = Vec::new();
                let mut b = 1e-3 / (k * k);
                while b < t0 {
                    breaks.push(b);
                    b *= 10.0;
                }
                let body = quad::integrate_with_breaks(g, 0.0, t0, &breaks, opts).value;
                let tail = quad::integrate_to_infinity(g, t0, opts).value;
                prefactor * f.mass * (body + tail)
            }
        };
        Ok(value)
    }

    /// `Υ(0+)`, infinite when the integral diverges at zero frequency.
    fn upsilon_floor_check(&self, a: f64) -> Result<bool> {
        Ok(self.upsilon(LAMBDA_MIN)? < a)
    }

    /// `Λ(a) = inf{λ > 0 : Υ(λ) < a}` by bracketing and log-scale bisection.
    /// Returns `0` when `a` exceeds `Υ` everywhere on the bracket and `+inf`
    /// when `Υ` stays above `a` on the whole bracket.
    pub fn lambda_of(&self, a: f64) -> Result<f64> {
        if !(a > 0.0) {
            return Err(invalid("a", format!("{a} must be > 0")));
        }
        if self.upsilon_floor_check(a)? {
            return Ok(0.0);
        }
        if self.upsilon(LAMBDA_MAX)? >= a {
            return Ok(f64::INFINITY);
        }
        let (mut lo, mut hi) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
        for _ in 0..LAMBDA_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if self.upsilon(mid.exp())? < a {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < LAMBDA_REL_TOL {
                break;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }

    /// Computes `(v_λ * f)(0) = ∫₀^∞ e^{-λs} (p_s * f)(0) ds` in physical
    /// space and returns it alongside `Υ(λ)`.
    pub fn resolvent_identity_check(&self, lambda: f64) -> Result<(f64, f64)> {
        let rhs = self.upsilon(lambda)?;
        let f = self.measure;
        // s = w² removes the s^{-d/2} singularity of the Dirac kind in d = 1.
        let g = |w: f64| {
            if w <= 0.0 {
                return if f.dimension == 1 && f.is_dirac() {
                    2.0 * f.mass / (2.0 * PI).sqrt()
                } else {
                    0.0
                };
            }
            let s = w * w;
            2.0 * w * (-lambda * s).exp() * f.heat_at_origin_by_quadrature(s)
        };
        let w0 = 1.0 / lambda.sqrt();
        let opts = QuadOptions {
            abs_tol: 1e-300,
            rel_tol: 1e-12,
            max_intervals: 2000,
        };
        let body = quad::integrate(g, 0.0, w0, opts).value;
        let tail = quad::integrate_to_infinity(g, w0, opts).value;
        Ok((body + tail, rhs))
    }
}

/// `A(ε)` and `a(ε)` of the occupation-field moment bound.
pub fn moment_constants(
    eps: f64,
    sigma0: f64,
    lip_sigma: f64,
    mass: f64,
    dimension: usize,
) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps", format!("{eps} not in (0, 1)")));
    }
    let s = sigma0.abs().max(lip_sigma);
    if !(s > 0.0) {
        return Err(invalid("sigma", "|σ(0)| ∨ Lip(σ) must be > 0"));
    }
    let big_a = 16.0 * s * mass.sqrt() / eps.powf(1.5);
    let small_a = (1.0 - eps).powi(2) / (2f64.powf((dimension as f64 + 6.0) / 2.0) * s * s);
    Ok((big_a, small_a))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentBoundParams {
    pub eps: f64,
    pub k: f64,
    pub n: f64,
    pub horizon: f64,
    pub sigma0: f64,
    pub lip_sigma: f64,
    pub lip_g: f64,
    pub psi_norm: f64,
}

/// `ln` of `A(ε)√(Tk) N^{-d/2} exp{2TΛ(a(ε)/k)} Lip(g) ‖ψ‖_{L²}`, which bounds
/// `sup_{t<T} ‖S_{N,t}(ψ,g)‖_k`. Returns `-inf` when `Lip(g)‖ψ‖ = 0`.
pub fn log_moment_bound(p: &MomentBoundParams, profile: &DalangProfile) -> Result<f64> {
    if p.k < 2.0 {
        return Err(invalid("k", format!("{} must be ≥ 2", p.k)));
    }
    if !(p.n > 0.0 && p.horizon > 0.0) {
        return Err(invalid("N/T", "must be > 0"));
    }
    let f = profile.measure;
    let (big_a, small_a) = moment_constants(p.eps, p.sigma0, p.lip_sigma, f.mass, f.dimension)?;
    let scale = p.lip_g * p.psi_norm;
    if scale == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let lam = profile.lambda_of(small_a / p.k)?;
    Ok(big_a.ln() + 0.5 * (p.horizon * p.k).ln() - 0.5 * f.dimension as f64 * p.n.ln()
        + 2.0 * p.horizon * lam
        + scale.ln())
}

pub fn moment_bound(p: &MomentBoundParams, profile: &DalangProfile) -> Result<f64> {
    Ok(log_moment_bound(p, profile)?.exp())
}

/// Parameters of the occupation-field tail bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBoundParams {
    pub eps: f64,
    pub delta: f64,
    pub horizon: f64,
    /// `B = A(ε) Lip(g) ‖ψ‖_{L²} √T`.
    pub scale: f64,
    /// `a(ε)`.
    pub small_a: f64,
}

impl TailBoundParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        eps: f64,
        delta: f64,
        horizon: f64,
        sigma0: f64,
        lip_sigma: f64,
        lip_g: f64,
        psi_norm: f64,
        measure: &CovarianceMeasure,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta", format!("{delta} not in (0, 1)")));
        }
        let (big_a, small_a) =
            moment_constants(eps, sigma0, lip_sigma, measure.mass, measure.dimension)?;
        Ok(Self {
            eps,
            delta,
            horizon,
            scale: big_a * lip_g * psi_norm * horizon.sqrt(),
            small_a,
        })
    }
}

/// Upper bound for `sup_N P{N^{d/2}|S_{N,t}(ψ,g)| > ℓ}`, clamped to the
/// vacuous value 1 wherever `ℓ ≤ B`.
pub fn tail_bound(ell: f64, p: &TailBoundParams, profile: &DalangProfile) -> Result<f64> {
    if !(ell > p.scale) || p.scale <= 0.0 {
        return Ok(1.0);
    }
    let log_ratio = (ell / p.scale).ln();
    let ups = profile.upsilon((1.0 - p.delta) / (2.0 * p.horizon) * log_ratio)?;
    let exponent = -p.small_a * p.delta * log_ratio / (2.0 * ups);
    Ok(exponent.exp().min(1.0))
}

/// `ln` of the bound `8(σ₀∨Lipσ) e^{2TΛ(a(ε)/k)} ε^{-3/2} p_{t-s}(x-z)` on
/// `‖D_{s,z}u(t,x)‖_k`.
#[allow(clippy::too_many_arguments)]
pub fn log_malliavin_bound(
    eps: f64,
    horizon: f64,
    k: f64,
    t: f64,
    s: f64,
    x: &[f64],
    z: &[f64],
    sigma0: f64,
    lip_sigma: f64,
    profile: &DalangProfile,
) -> Result<f64> {
    if !(0.0 < s && s < t && t <= horizon) {
        return Err(invalid("s,t", format!("need 0 < s < t ≤ T, got s={s}, t={t}, T={horizon}")));
    }
    if k < 2.0 {
        return Err(invalid("k", format!("{k} must be ≥ 2")));
    }
    let f = profile.measure;
    let (_, small_a) = moment_constants(eps, sigma0, lip_sigma, f.mass, f.dimension)?;
    let lam = profile.lambda_of(small_a / k)?;
    let diff: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
    let tau = t - s;
    let r2: f64 = diff.iter().map(|v| v * v).sum();
    let log_kernel = -0.5 * x.len() as f64 * (2.0 * PI * tau).ln() - 0.5 * r2 / tau;
    let sig = sigma0.abs().max(lip_sigma);
    Ok((8.0 * sig).ln() + 2.0 * horizon * lam - 1.5 * eps.ln() + log_kernel)
}

#[allow(clippy::too_many_arguments)]
pub fn malliavin_bound(
    eps: f64,
    horizon: f64,
    k: f64,
    t: f64,
    s: f64,
    x: &[f64],
    z: &[f64],
    sigma0: f64,
    lip_sigma: f64,
    profile: &DalangProfile,
) -> Result<f64> {
    Ok(log_malliavin_bound(eps, horizon, k, t, s, x, z, sigma0, lip_sigma, profile)?.exp())
}

#[cfg(test)]
mod tests {
    #[test]
    fn axis_integral_matches_quadrature() {
        use super::*;
        for f in [
            CovarianceMeasure::exponential(2, 1.0, 1.5).unwrap(),
            CovarianceMeasure::uniform_box(2, 1.0, 0.25).unwrap(),
            CovarianceMeasure::gaussian(2, 1.0, 0.5).unwrap(),
        ] {
            for tau in [1e-4, 0.01, 1.0, 50.0] {
                let g = |z: f64| f.fourier_factor(z) * (-tau * z * z).exp();
                let breaks: Vec<f64> = (1..=40).map(|j| j as f64 * PI / 0.25).collect();
                let opts = QuadOptions::with_rel_tol(1e-12);
                let q = 2.0
                    * (quad::integrate_with_breaks(g, 0.0, 160.0 * PI, &breaks, opts).value
                        + quad::integrate_to_infinity(g, 160.0 * PI, opts).value);
                let c = f.axis_integral(tau);
                assert!((q - c).abs() < 1e-6 * c, "{f:?} tau={tau}: {q} vs {c}");
            }
        }
    }

    use super::*;
    use approx::assert_relative_eq;

    fn dirac1() -> DalangProfile {
        DalangProfile::new(CovarianceMeasure::dirac(1, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn fourier_examples() {
        let d = CovarianceMeasure::dirac(1, 1.0).unwrap();
        assert_eq!(d.fourier(&[7.3]), 1.0);
        let g = CovarianceMeasure::gaussian(1, 1.0, 1.0).unwrap();
        assert_eq!(g.fourier(&[0.0]), 1.0);
        assert_relative_eq!(g.fourier(&[1.0]), (-0.5f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn fourier_bounded_by_mass_and_nonnegative() {
        let kinds = [
            CovarianceMeasure::gaussian(2, 1.5, 0.7).unwrap(),
            CovarianceMeasure::uniform_box(2, 1.5, 0.3).unwrap(),
            CovarianceMeasure::exponential(2, 1.5, 2.0).unwrap(),
        ];
        for f in kinds {
            for i in 0..200 {
                let z = [0.37 * i as f64 - 20.0, 0.11 * i as f64];
                let v = f.fourier(&z);
                assert!(v >= 0.0 && v <= f.mass + 1e-15, "{:?} {z:?} {v}", f.kind);
                assert_eq!(v, f.fourier(&[-z[0], -z[1]]));
            }
        }
    }

    #[test]
    fn dirac_rejected_in_two_dimensions() {
        let f = CovarianceMeasure::dirac(2, 1.0).unwrap();
        assert!(matches!(DalangProfile::new(f), Err(Error::DalangViolation { .. })));
    }

    #[test]
    fn upsilon_dirac_closed_form() {
        let p = dirac1();
        assert_relative_eq!(p.upsilon(0.5).unwrap(), 1.0, max_relative = 1e-10);
        assert_relative_eq!(p.upsilon(2.0).unwrap(), 0.5, max_relative = 1e-10);
        assert!(p.upsilon(1e6).unwrap() < p.upsilon(1.0).unwrap());
    }

    #[test]
    fn lambda_examples() {
        let p = dirac1();
        assert_relative_eq!(p.lambda_of(1.0).unwrap(), 0.5, max_relative = 1e-9);
        assert_relative_eq!(p.lambda_of(0.5).unwrap(), 2.0, max_relative = 1e-9);
        let u = p.upsilon(3.7).unwrap();
        assert!((p.lambda_of(u).unwrap() - 3.7).abs() < 1e-8);
    }

    #[test]
    fn lambda_zero_when_above_upsilon_floor() {
        // Υ(0+) is finite for a Gaussian covariance in d = 3.
        let p = DalangProfile::new(CovarianceMeasure::gaussian(3, 1.0, 1.0).unwrap()).unwrap();
        let floor = p.upsilon(LAMBDA_MIN).unwrap();
        assert!(floor.is_finite());
        assert_eq!(p.lambda_of(2.0 * floor).unwrap(), 0.0);
        let a = 0.5 * floor;
        let lam = p.lambda_of(a).unwrap();
        assert_relative_eq!(p.upsilon(lam).unwrap(), a, max_relative = 1e-8);
    }

    #[test]
    fn heat_kernel_values() {
        assert_relative_eq!(heat_kernel(1.0, &[0.0]), 1.0 / (2.0 * PI).sqrt(), max_relative = 1e-15);
        let total = quad::integrate(|x| heat_kernel(0.3, &[x]), -20.0, 20.0, QuadOptions::default());
        assert!((total.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn moment_constant_examples() {
        let (a, sa) = moment_constants(0.5, 1.0, 1.0, 1.0, 1).unwrap();
        assert_relative_eq!(a, 45.254_833_995_939_04, max_relative = 1e-12);
        assert_relative_eq!(sa, 0.25 / 2f64.powf(3.5), max_relative = 1e-12);
        assert_relative_eq!(sa, 0.022_097_086_912_079_61, max_relative = 1e-12);
        let (_, near_one) = moment_constants(1.0 - 1e-6, 1.0, 1.0, 1.0, 1).unwrap();
        assert!(near_one < 1e-12);
        assert!(moment_constants(1.0, 1.0, 1.0, 1.0, 1).is_err());
        assert!(moment_constants(0.0, 1.0, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn moment_bound_white_noise_example() {
        // Λ(a(1/2)/2) = Λ(2^{-6.5}) = 2^{12} for f = δ₀, so the bound is
        // A(1/2)√2 · e^{8192} = 64 e^{8192}.
        let p = dirac1();
        let params = MomentBoundParams {
            eps: 0.5,
            k: 2.0,
            n: 1.0,
            horizon: 1.0,
            sigma0: 1.0,
            lip_sigma: 1.0,
            lip_g: 1.0,
            psi_norm: 1.0,
        };
        let lb = log_moment_bound(&params, &p).unwrap();
        assert!((lb - (64f64.ln() + 8192.0)).abs() < 1e-5, "{lb}");
        assert!(moment_bound(&params, &p).unwrap().is_infinite());
        let zero = MomentBoundParams { lip_g: 0.0, ..params };
        assert_eq!(moment_bound(&zero, &p).unwrap(), 0.0);
        let doubled = MomentBoundParams { n: 2.0, ..params };
        let ratio = log_moment_bound(&doubled, &p).unwrap() - lb;
        assert!((ratio - (-0.5 * 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn tail_bound_example() {
        let p = dirac1();
        let f = p.measure;
        let tp = TailBoundParams::new(0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, &f).unwrap();
        let ell = tp.scale * 4f64.exp();
        let v = tail_bound(ell, &tp, &p).unwrap();
        let expected = (-tp.small_a * 0.5 * 4.0 / (2.0 * 0.5f64.sqrt())).exp();
        assert_relative_eq!(v, expected, max_relative = 1e-9);
        assert!((v - 0.9692).abs() < 1e-4);
        assert_eq!(tail_bound(0.5 * tp.scale, &tp, &p).unwrap(), 1.0);
        assert_eq!(tail_bound(tp.scale, &tp, &p).unwrap(), 1.0);
        let mut prev = 1.0;
        for i in 1..40 {
            let v = tail_bound(tp.scale * (1.0 + 0.5 * i as f64).exp(), &tp, &p).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn malliavin_bound_properties() {
        let p = dirac1();
        let near = malliavin_bound(0.5, 1.0, 2.0, 1.0, 0.5, &[0.0], &[0.0], 1.0, 1.0, &p).unwrap();
        let far = malliavin_bound(0.5, 1.0, 2.0, 1.0, 0.5, &[0.0], &[200.0], 1.0, 1.0, &p).unwrap();
        assert!(near.is_infinite());
        assert_eq!(far, 0.0);
        let lb = log_malliavin_bound(0.5, 1.0, 2.0, 1.0, 0.5, &[0.0], &[0.0], 1.0, 1.0, &p).unwrap();
        let expected = 8f64.ln() + 8192.0 - 1.5 * 0.5f64.ln() + heat_kernel(0.5, &[0.0]).ln();
        assert!((lb - expected).abs() < 1e-5);
        let lb2 = log_malliavin_bound(0.5, 1.0, 2.0, 1.0, 0.5, &[0.0], &[0.0], 2.0, 0.0, &p).unwrap();
        // σ₀∨Lipσ doubles: linear prefactor, but a(ε) shrinks by 4 which moves Λ.
        assert!(lb2 > lb + 2f64.ln());
        assert!(log_malliavin_bound(0.5, 1.0, 2.0, 1.0, 1.0, &[0.0], &[0.0], 1.0, 1.0, &p).is_err());
    }

    #[test]
    fn lul_constant_dirac() {
        let f = CovarianceMeasure::dirac(1, 1.0).unwrap();
        assert_relative_eq!(f.lul_constant(), 2.0 * 2.0 / (3.0 * 2.0 * PI), max_relative = 1e-12);
    }

    #[test]
    fn serde_record_round_trip() {
        let f = CovarianceMeasure::gaussian(2, 1.5, 0.5).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"kind":"gaussian","params":{"scale":0.5},"dimension":2,"mass":1.5}"#);
        let back: CovarianceMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        let dirac: CovarianceMeasure =
            toml::from_str("kind = \"dirac_at_zero\"\ndimension = 1\nmass = 2.0\n").unwrap();
        assert_eq!(dirac, CovarianceMeasure::dirac(1, 2.0).unwrap());
    }
}
