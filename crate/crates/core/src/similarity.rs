//! Similarity reductions of `P_t = f(P)^k P_xx` and `P_t = (f(P) P_x)_x`.
//!
//! Two families of invariant solutions are supported:
//!
//! * generic `f`: `ω = (x + α)/(t + β)^{1/2}`, `P = s(ω)`;
//! * power law `f = a (P + b)^m`: `ω = (x + μ/σ)/τ^λ` with `τ = t + ν/ρ` and
//!   `λ = σ/ρ`, and `P = τ^γ s(ω) − b`.
//!
//! Balancing powers of `τ` in the pointwise equation with coefficient
//! `A (P + b)^M` gives `γ = (2λ − 1)/M` and the reduced equation
//! `γ s − λ ω s′ = A s^M s″`. [`ExponentConvention::Printed`] keeps the
//! alternative `γ = 2λ/M − 1` for comparison; the two agree only at `M = 1`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{FieldHistory, SpaceTimeGrid};
use crate::interp::HermiteCurve;
use crate::ode::{integrate_to_points, OdeOptions};
use crate::solvers::DiffusivityLaw;

/// Local tolerance of the reduced-ODE integrator.
pub const ODE_TOLERANCE: f64 = 1e-10;
/// Coefficients at or below this are treated as degenerate.
pub const DEGENERACY_FLOOR: f64 = 1e-8;
const SHOOTING_MAX_ITER: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducedForm {
    /// From `P_t = C(P) P_xx`: `2 C(s) s″ + ω s′ = 0` (generic family).
    Pointwise,
    /// From `P_t = (f(P) P_x)_x`: `2 f s″ + 2 f′ (s′)² + ω s′ = 0`.
    Flux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentConvention {
    /// `γ = (2σ/ρ − 1)/M`, which makes the functional form an exact reduction.
    Derived,
    /// `γ = 2σ/(Mρ) − 1`.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Generic { alpha: f64, beta: f64 },
    PowerLaw { mu: f64, nu: f64, sigma: f64, rho: f64, exponent: ExponentConvention },
}

#[derive(Debug, Clone)]
pub struct SimilarityProblem {
    pub family: Family,
    pub law: DiffusivityLaw,
    /// Power of `f` in the pointwise equation; ignored by the flux form.
    pub k: u8,
    pub form: ReducedForm,
}

impl SimilarityProblem {
    pub fn generic(alpha: f64, beta: f64, law: DiffusivityLaw, k: u8, form: ReducedForm) -> Result<Self> {
        Self { family: Family::Generic { alpha, beta }, law, k, form }.validated()
    }

    pub fn power_law(mu: f64, nu: f64, sigma: f64, rho: f64, law: DiffusivityLaw, k: u8, form: ReducedForm) -> Result<Self> {
        Self { family: Family::PowerLaw { mu, nu, sigma, rho, exponent: ExponentConvention::Derived }, law, k, form }.validated()
    }

    pub fn with_exponent(mut self, convention: ExponentConvention) -> Self {
        if let Family::PowerLaw { exponent, .. } = &mut self.family {
            *exponent = convention;
        }
        self
    }

    fn validated(self) -> Result<Self> {
        if !(1..=2).contains(&self.k) {
            return Err(Error::Parameter(format!("k must be 1 or 2, got {}", self.k)));
        }
        match self.family {
            Family::Generic { alpha, beta } => {
                if !alpha.is_finite() || !beta.is_finite() {
                    return Err(Error::Parameter("alpha and beta must be finite".into()));
                }
            }
            Family::PowerLaw { mu, nu, sigma, rho, .. } => {
                if rho == 0.0 || sigma == 0.0 || !(mu / sigma).is_finite() || !(nu / rho).is_finite() || !(sigma / rho).is_finite() {
                    return Err(Error::Parameter(format!(
                        "power-law family needs finite mu/sigma, nu/rho and sigma/rho with rho, sigma != 0 (sigma = {sigma}, rho = {rho})"
                    )));
                }
                let (_, _, m) = self.power_law_constants()?;
                if m == 0.0 {
                    return Err(Error::Parameter("power-law family needs a non-zero exponent".into()));
                }
            }
        }
        Ok(self)
    }

    /// `(A, b, M)` with coefficient `A (P + b)^M`: the pointwise coefficient
    /// `f^k` or, in flux form, `f` itself.
    fn power_law_constants(&self) -> Result<(f64, f64, f64)> {
        match &self.law {
            DiffusivityLaw::PowerLaw { a, b, m } => Ok(match self.form {
                ReducedForm::Pointwise => (a.powi(self.k as i32), *b, m * self.k as f64),
                ReducedForm::Flux => (*a, *b, *m),
            }),
            other => Err(Error::Parameter(format!("power-law family needs a power-law diffusivity, got {other:?}"))),
        }
    }

    /// `λ = σ/ρ` (1/2 for the generic family).
    pub fn lambda(&self) -> f64 {
        match self.family {
            Family::Generic { .. } => 0.5,
            Family::PowerLaw { sigma, rho, .. } => sigma / rho,
        }
    }

    /// Time exponent `γ` of the functional form (0 for the generic family).
    pub fn gamma(&self) -> Result<f64> {
        match self.family {
            Family::Generic { .. } => Ok(0.0),
            Family::PowerLaw { exponent, .. } => {
                let (_, _, m) = self.power_law_constants()?;
                let lambda = self.lambda();
                Ok(match exponent {
                    ExponentConvention::Derived => (2.0 * lambda - 1.0) / m,
                    ExponentConvention::Printed => 2.0 * lambda / m - 1.0,
                })
            }
        }
    }

    fn tau(&self, t: f64) -> Result<f64> {
        let tau = match self.family {
            Family::Generic { beta, .. } => t + beta,
            Family::PowerLaw { nu, rho, .. } => t + nu / rho,
        };
        if tau <= 0.0 {
            return Err(Error::Domain(format!("similarity variable undefined: shifted time {tau} <= 0 at t = {t}")));
        }
        Ok(tau)
    }

    fn shift(&self) -> f64 {
        match self.family {
            Family::Generic { alpha, .. } => alpha,
            Family::PowerLaw { mu, sigma, .. } => mu / sigma,
        }
    }

    /// `s″` from `(ω, s, s′)`.
    fn second_derivative(&self, omega: f64, s: f64, ds: f64) -> Result<f64> {
        let degenerate = |value: f64| Error::Degeneracy { omega, value };
        match self.family {
            Family::Generic { .. } => match self.form {
                ReducedForm::Pointwise => {
                    let c = self.law.coefficient(s, self.k).map_err(|_| degenerate(f64::NAN))?;
                    if c.is_nan() || c <= DEGENERACY_FLOOR {
                        return Err(degenerate(c));
                    }
                    Ok(-omega * ds / (2.0 * c))
                }
                ReducedForm::Flux => {
                    let f = self.law.eval(s).map_err(|_| degenerate(f64::NAN))?;
                    if f.is_nan() || f <= DEGENERACY_FLOOR {
                        return Err(degenerate(f));
                    }
                    let fp = self.law.derivative(s)?;
                    Ok(-(omega * ds + 2.0 * fp * ds * ds) / (2.0 * f))
                }
            },
            Family::PowerLaw { .. } => {
                let (a, _, m) = self.power_law_constants()?;
                let gamma = self.gamma()?;
                let lambda = self.lambda();
                if s <= 0.0 && m.fract() != 0.0 {
                    return Err(degenerate(s));
                }
                let sm = powf(s, m);
                let coef = a * sm;
                if coef.is_nan() || coef <= DEGENERACY_FLOOR {
                    return Err(degenerate(coef));
                }
                let lhs = gamma * s - lambda * omega * ds;
                Ok(match self.form {
                    ReducedForm::Pointwise => lhs / coef,
                    ReducedForm::Flux => (lhs / a - m * powf(s, m - 1.0) * ds * ds) / sm,
                })
            }
        }
    }
}

fn powf(x: f64, m: f64) -> f64 {
    if m.fract() == 0.0 && m.abs() < 64.0 {
        x.powi(m as i32)
    } else {
        x.powf(m)
    }
}

/// Similarity variable `ω(x, t)` of the problem's family.
pub fn similarity_variable(prob: &SimilarityProblem, x: f64, t: f64) -> Result<f64> {
    let tau = prob.tau(t)?;
    Ok((x + prob.shift()) / tau.powf(prob.lambda()))
}

/// Initial data for the reduced ODE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryData {
    pub omega0: f64,
    pub s: f64,
    pub ds: f64,
}

/// `s(ω)` and `s′(ω)` on a strictly increasing mesh.
#[derive(Debug, Clone, Serialize)]
pub struct OdeSolution {
    pub omega: Vec<f64>,
    pub s: Vec<f64>,
    pub ds: Vec<f64>,
    pub boundary: BoundaryData,
}

impl OdeSolution {
    /// Cubic Hermite value and slope at `ω`.
    pub fn value(&self, omega: f64) -> Result<(f64, f64)> {
        HermiteCurve::new(self.omega.clone(), self.s.clone(), self.ds.clone())?.eval(omega)
    }

    fn curve(&self) -> Result<HermiteCurve> {
        HermiteCurve::new(self.omega.clone(), self.s.clone(), self.ds.clone())
    }

    /// Two-column CSV `omega,s`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega,s")?;
        for (o, s) in self.omega.iter().zip(&self.s) {
            writeln!(w, "{o},{s}")?;
        }
        Ok(())
    }

    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        if self.omega != other.omega {
            return Err(Error::Dimension("solutions live on different meshes".into()));
        }
        Ok(self.s.iter().zip(&other.s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// Integrate the reduced ODE from `boundary` across `mesh` (in both
/// directions from `ω₀`) with local tolerance [`ODE_TOLERANCE`].
pub fn integrate_reduced_ode(prob: &SimilarityProblem, boundary: BoundaryData, mesh: &[f64]) -> Result<OdeSolution> {
    integrate_with(prob, boundary, mesh, &OdeOptions::with_tolerance(ODE_TOLERANCE))
}

fn integrate_with(prob: &SimilarityProblem, boundary: BoundaryData, mesh: &[f64], opts: &OdeOptions) -> Result<OdeSolution> {
    if mesh.len() < 2 || mesh.windows(2).any(|w| w[1] <= w[0]) || mesh.iter().any(|m| !m.is_finite()) {
        return Err(Error::Parameter("omega mesh must be finite and strictly increasing with >= 2 points".into()));
    }
    if !(boundary.s.is_finite() && boundary.ds.is_finite() && boundary.omega0.is_finite()) {
        return Err(Error::Parameter("boundary data must be finite".into()));
    }
    let rhs = |omega: f64, y: &[f64], d: &mut [f64]| -> Result<()> {
        d[0] = y[1];
        d[1] = prob.second_derivative(omega, y[0], y[1])?;
        Ok(())
    };
    let y0 = [boundary.s, boundary.ds];
    let split = mesh.partition_point(|m| *m < boundary.omega0);
    let backward: Vec<f64> = mesh[..split].iter().rev().cloned().collect();
    let forward = &mesh[split..];
    let mut s = vec![0.0; mesh.len()];
    let mut ds = vec![0.0; mesh.len()];
    if !backward.is_empty() {
        let out = integrate_to_points(&rhs, boundary.omega0, &y0, &backward, opts)?;
        for (k, y) in out.iter().enumerate() {
            s[split - 1 - k] = y[0];
            ds[split - 1 - k] = y[1];
        }
    }
    if !forward.is_empty() {
        let out = integrate_to_points(&rhs, boundary.omega0, &y0, forward, opts)?;
        for (k, y) in out.iter().enumerate() {
            s[split + k] = y[0];
            ds[split + k] = y[1];
        }
    }
    if s.iter().chain(&ds).any(|v| !v.is_finite()) {
        return Err(Error::Convergence("reduced ODE produced non-finite values".into()));
    }
    Ok(OdeSolution { omega: mesh.to_vec(), s, ds, boundary })
}

/// Fixed-step classical Runge–Kutta integration of the same reduced ODE,
/// `substeps` steps per mesh interval. An independent reference for the
/// adaptive integrator.
pub fn integrate_reduced_ode_fixed(prob: &SimilarityProblem, boundary: BoundaryData, mesh: &[f64], substeps: usize) -> Result<OdeSolution> {
    if mesh.first() != Some(&boundary.omega0) {
        return Err(Error::Parameter("fixed-step reference needs omega0 at the first mesh point".into()));
    }
    let f = |o: f64, y: [f64; 2]| -> Result<[f64; 2]> { Ok([y[1], prob.second_derivative(o, y[0], y[1])?]) };
    let mut y = [boundary.s, boundary.ds];
    let mut s = vec![y[0]];
    let mut ds = vec![y[1]];
    for w in mesh.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for k in 0..substeps {
            let o = w[0] + k as f64 * h;
            let k1 = f(o, y)?;
            let k2 = f(o + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]])?;
            let k3 = f(o + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]])?;
            let k4 = f(o + h, [y[0] + h * k3[0], y[1] + h * k3[1]])?;
            for d in 0..2 {
                y[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
            }
        }
        s.push(y[0]);
        ds.push(y[1]);
    }
    Ok(OdeSolution { omega: mesh.to_vec(), s, ds, boundary })
}

/// Two-point problem: find `s′(ω₀)` so that `s(ω₁) = s1`, by secant
/// iteration from `slope_guess`.
pub fn shoot(prob: &SimilarityProblem, omega0: f64, s0: f64, target: (f64, f64), slope_guess: f64, mesh: &[f64]) -> Result<OdeSolution> {
    let (omega1, s1) = target;
    let opts = OdeOptions::with_tolerance(ODE_TOLERANCE);
    let miss = |slope: f64| -> Result<f64> {
        let sol = integrate_with(prob, BoundaryData { omega0, s: s0, ds: slope }, &[omega0.min(omega1), omega0.max(omega1)], &opts)?;
        let end = if omega1 >= omega0 { sol.s[1] } else { sol.s[0] };
        Ok(end - s1)
    };
    let mut a = slope_guess;
    let mut b = if slope_guess == 0.0 { 0.1 } else { 1.1 * slope_guess };
    let mut fa = miss(a)?;
    let mut fb = miss(b)?;
    for _ in 0..SHOOTING_MAX_ITER {
        if fb.abs() < 1e-11 * s1.abs().max(1.0) {
            return integrate_reduced_ode(prob, BoundaryData { omega0, s: s0, ds: b }, mesh);
        }
        if fb == fa {
            break;
        }
        let c = b - fb * (b - a) / (fb - fa);
        if !c.is_finite() {
            break;
        }
        a = b;
        fa = fb;
        b = c;
        fb = match miss(b) {
            Ok(v) => v,
            // overshoot into a degenerate region: step back halfway
            Err(Error::Degeneracy { .. }) | Err(Error::Convergence(_)) => {
                b = 0.5 * (a + b);
                miss(b)?
            }
            Err(e) => return Err(e),
        };
    }
    Err(Error::Convergence(format!("shooting for s({omega1}) = {s1} did not converge in {SHOOTING_MAX_ITER} iterations")))
}

/// Mesh of `n` points covering the image of `grid` under `ω` with 10%
/// margin on each side.
pub fn omega_mesh_for(prob: &SimilarityProblem, grid: &SpaceTimeGrid, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Parameter("mesh needs at least two points".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..grid.nt() {
        for x in [grid.x_min(), grid.x_max()] {
            let w = similarity_variable(prob, x, grid.t(k))?;
            lo = lo.min(w);
            hi = hi.max(w);
        }
    }
    let margin = 0.1 * (hi - lo).max(1e-12);
    let (lo, hi) = (lo - margin, hi + margin);
    Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
}

/// Evaluate the functional form on `grid`: `s(ω)` for the generic family,
/// `τ^γ s(ω) − b` for the power law.
pub fn assemble_pde_solution(prob: &SimilarityProblem, ode: &OdeSolution, grid: &SpaceTimeGrid) -> Result<FieldHistory> {
    let curve = ode.curve()?;
    let gamma = prob.gamma()?;
    let b = match prob.family {
        Family::Generic { .. } => 0.0,
        Family::PowerLaw { .. } => prob.power_law_constants()?.1,
    };
    let mut out = FieldHistory::real(*grid, 1)?;
    for n in 0..grid.nt() {
        let t = grid.t(n);
        let tau = prob.tau(t)?;
        let pre = if gamma == 0.0 { 1.0 } else { tau.powf(gamma) };
        for i in 0..grid.nx() {
            let omega = similarity_variable(prob, grid.x(i), t)?;
            let (s, _) = curve
                .eval(omega)
                .map_err(|_| Error::Domain(format!("omega = {omega} at (x, t) = ({}, {t}) is outside the ODE mesh", grid.x(i))))?;
            out.set(0, n, i, pre * s - b);
        }
    }
    Ok(out)
}

/// Named similarity set-ups.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub problem: SimilarityProblem,
    pub boundary: BoundaryData,
}

pub const PRESET_NAMES: [&str; 4] = ["erf", "power-law-k2", "porous-m4", "standard-m-4/3"];

pub fn preset(name: &str) -> Result<Preset> {
    let p = match name {
        "erf" => Preset {
            name: "erf",
            description: "linear diffusion, s = erf(omega/2)",
            problem: SimilarityProblem::generic(0.0, 0.0, DiffusivityLaw::Constant(1.0), 1, ReducedForm::Pointwise)?,
            boundary: BoundaryData { omega0: 0.0, s: 0.0, ds: 1.0 / std::f64::consts::PI.sqrt() },
        },
        "power-law-k2" => Preset {
            name: "power-law-k2",
            description: "P_t = (P + 1/2)^2 P_xx, sigma/rho = 1/2, tau = t + 1, decaying front",
            problem: SimilarityProblem::power_law(
                0.0,
                2.0,
                1.0,
                2.0,
                DiffusivityLaw::PowerLaw { a: 1.0, b: 0.5, m: 1.0 },
                2,
                ReducedForm::Pointwise,
            )?,
            boundary: BoundaryData { omega0: 0.0, s: 1.0, ds: -0.3 },
        },
        "porous-m4" => Preset {
            name: "porous-m4",
            description: "pointwise equation with coefficient exponent m = 4",
            problem: SimilarityProblem::power_law(
                0.0,
                1.0,
                1.0,
                2.0,
                DiffusivityLaw::PowerLaw { a: 1.0, b: 0.0, m: 4.0 },
                1,
                ReducedForm::Pointwise,
            )?,
            boundary: BoundaryData { omega0: 0.0, s: 1.0, ds: -0.2 },
        },
        "standard-m-4/3" => Preset {
            name: "standard-m-4/3",
            description: "flux-form equation with exponent m = -4/3, paired with porous-m4",
            problem: SimilarityProblem::power_law(
                0.0,
                1.0,
                1.0,
                2.0,
                DiffusivityLaw::PowerLaw { a: 1.0, b: 0.0, m: -4.0 / 3.0 },
                1,
                ReducedForm::Flux,
            )?,
            boundary: BoundaryData { omega0: 0.0, s: 1.0, ds: -0.2 },
        },
        other => return Err(Error::Parameter(format!("unknown similarity preset {other:?}; known: {}", PRESET_NAMES.join(", ")))),
    };
    Ok(p)
}
