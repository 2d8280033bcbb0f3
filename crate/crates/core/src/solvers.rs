//! Explicit finite-difference solvers for the equations generated by the
//! master equation, and the residual oracle used to check any candidate
//! field against them.
//!
//! Schemes by family:
//!
//! * first-order two-speed systems (two-speed, nonlinear Dirac system,
//!   Maxwell potentials in characteristic form): upwind transport along each
//!   characteristic with Courant number `ν = v dt/dx ≤ 1`, and explicit Heun
//!   (trapezoidal predictor-corrector) integration of the coupling terms.
//!   At `ν = 1` transport is an exact one-cell shift and the scheme is
//!   second order; below that it is first order.
//! * second-order-in-time equations (telegrapher, nonlinear telegrapher):
//!   centred leapfrog. First-derivative terms in time are centred as well,
//!   which makes the update a pointwise division rather than a linear solve.
//! * parabolic equations: forward time, centred space, with the diffusivity
//!   evaluated at the current level.
//! * the 1+1 Dirac equation (`ħ = 1`): Strang splitting of the mass term
//!   (an exact `exp(−i θ σx)` rotation) and exact characteristic shifts,
//!   which is unitary and therefore requires `c dt = dx`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, FieldHistory, ScalarKind, SpaceTimeGrid};

/// Parabolic stability bound on `max f(P)^k dt/dx^2`.
pub const PARABOLIC_LIMIT: f64 = 0.5;
/// Mid-run tolerance factor applied to [`PARABOLIC_LIMIT`].
pub const PARABOLIC_RECHECK_FACTOR: f64 = 2.0;
/// A run is flagged near-degenerate when `min f / max f` drops below this.
pub const DEGENERACY_RATIO: f64 = 1e-6;

const COURANT_SLACK: f64 = 1e-12;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Returns `(f(P), f'(P))`.
pub type LawFn = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

/// The diffusivity `f(P)` in `P_t = f(P)^k P_xx` and `P_t = (f(P) P_x)_x`.
#[derive(Clone)]
pub enum DiffusivityLaw {
    Constant(f64),
    /// `f(P) = a (P + b)^m`.
    PowerLaw {
        a: f64,
        b: f64,
        m: f64,
    },
    Tabulated(LawFn),
}

impl fmt::Debug for DiffusivityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(d) => write!(f, "Constant({d})"),
            Self::PowerLaw { a, b, m } => write!(f, "PowerLaw {{ a: {a}, b: {b}, m: {m} }}"),
            Self::Tabulated(_) => write!(f, "Tabulated(..)"),
        }
    }
}

impl DiffusivityLaw {
    fn check_base(&self, p: f64) -> Result<()> {
        if let Self::PowerLaw { b, m, .. } = self {
            if m.fract() != 0.0 && p + b <= 0.0 {
                return Err(Error::Domain(format!("power law with non-integer m = {m} needs P + b > 0, got P = {p}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, p: f64) -> Result<f64> {
        self.check_base(p)?;
        Ok(match self {
            Self::Constant(d) => *d,
            Self::PowerLaw { a, b, m } => a * powf(p + b, *m),
            Self::Tabulated(g) => g(p).0,
        })
    }

    pub fn derivative(&self, p: f64) -> Result<f64> {
        self.check_base(p)?;
        Ok(match self {
            Self::Constant(_) => 0.0,
            Self::PowerLaw { a, b, m } => {
                if *m == 0.0 {
                    0.0
                } else {
                    a * m * powf(p + b, m - 1.0)
                }
            }
            Self::Tabulated(g) => g(p).1,
        })
    }

    /// `f(P)^k`.
    pub fn coefficient(&self, p: f64, k: u8) -> Result<f64> {
        Ok(self.eval(p)?.powi(k as i32))
    }

    /// `f(P)^k` written as a power law `A (P + b)^M`, when it is one.
    pub fn coefficient_power_law(&self, k: u8) -> Option<(f64, f64, f64)> {
        match self {
            Self::Constant(d) => Some((d.powi(k as i32), 0.0, 0.0)),
            Self::PowerLaw { a, b, m } => Some((a.powi(k as i32), *b, m * k as f64)),
            Self::Tabulated(_) => None,
        }
    }
}

/// `x^m` that stays exact for integer exponents and negative bases.
fn powf(x: f64, m: f64) -> f64 {
    if m.fract() == 0.0 && m.abs() < 64.0 {
        x.powi(m as i32)
    } else {
        x.powf(m)
    }
}

/// Which right-hand side of the nonlinear telegrapher's equation to use:
///
/// ```text
/// P_tt − v² P_xx = −P³ + β P P_t + v P P_x + a² P
/// ```
///
/// `Printed` has `β = 1`. `Derived` has `β = −3`, the value obtained by
/// eliminating `P−` from the nonlinear Dirac system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TelegrapherForm {
    Printed,
    Derived,
}

impl TelegrapherForm {
    pub fn beta(self) -> f64 {
        match self {
            Self::Printed => 1.0,
            Self::Derived => -3.0,
        }
    }
}

/// Source `a(x, t)` of the Maxwell potentials, with its partial derivatives.
#[derive(Clone)]
pub struct MaxwellSource {
    pub label: String,
    value: SpaceTimeFn,
    d_dx: SpaceTimeFn,
    d_dt: SpaceTimeFn,
}

impl fmt::Debug for MaxwellSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MaxwellSource({})", self.label)
    }
}

impl MaxwellSource {
    pub fn custom(label: &str, value: SpaceTimeFn, d_dx: SpaceTimeFn, d_dt: SpaceTimeFn) -> Self {
        Self { label: label.to_string(), value, d_dx, d_dt }
    }

    pub fn zero() -> Self {
        let z: SpaceTimeFn = Arc::new(|_, _| 0.0);
        Self::custom("zero", z.clone(), z.clone(), z)
    }

    /// `amp sin(k (x − w t))`.
    pub fn traveling_sine(amp: f64, k: f64, w: f64) -> Self {
        Self::custom(
            &format!("{amp} sin({k}(x - {w} t))"),
            Arc::new(move |x, t| amp * (k * (x - w * t)).sin()),
            Arc::new(move |x, t| amp * k * (k * (x - w * t)).cos()),
            Arc::new(move |x, t| -amp * k * w * (k * (x - w * t)).cos()),
        )
    }

    /// `amp exp(−(x − x0)²/(2 s²)) cos(ω t)`.
    pub fn gaussian_pulse(amp: f64, x0: f64, s: f64, omega: f64) -> Self {
        let g = move |x: f64| amp * (-(x - x0).powi(2) / (2.0 * s * s)).exp();
        Self::custom(
            &format!("{amp} exp(-(x-{x0})^2/(2 {s}^2)) cos({omega} t)"),
            Arc::new(move |x, t| g(x) * (omega * t).cos()),
            Arc::new(move |x, t| -g(x) * (x - x0) / (s * s) * (omega * t).cos()),
            Arc::new(move |x, t| -g(x) * omega * (omega * t).sin()),
        )
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        (self.value)(x, t)
    }
    pub fn d_dx(&self, x: f64, t: f64) -> f64 {
        (self.d_dx)(x, t)
    }
    pub fn d_dt(&self, x: f64, t: f64) -> f64 {
        (self.d_dt)(x, t)
    }
}

#[derive(Debug, Clone)]
pub enum PdeKind {
    /// `∂P±/∂t = −a(P± − P∓) ∓ v ∂P±/∂x`; components `(P+, P−)`.
    TwoSpeed {
        v: f64,
        a: f64,
    },
    /// `P_tt − v² P_xx = −2a P_t`.
    Telegrapher {
        v: f64,
        a: f64,
    },
    /// `i ∂Ψ/∂t = m c² σx Ψ − i c σz ∂Ψ/∂x`; complex two-component field.
    Dirac {
        m: f64,
        c: f64,
    },
    /// `P_t = D P_xx`.
    Diffusion {
        d: f64,
    },
    /// `A_t = −c Φ_x + a`, `Φ_t = −c A_x`; components `(A, Φ)`.
    MaxwellPotentials {
        c: f64,
        source: MaxwellSource,
    },
    /// `P_t = f(P)^k P_xx`.
    NonlinearDiffusion {
        law: DiffusivityLaw,
        k: u8,
    },
    /// `P_t = (f(P) P_x)_x`.
    ConservativeDiffusion {
        law: DiffusivityLaw,
    },
    /// `P+_t = −P+² − v P+_x + a P−`, `P−_t = −P+ P− + a P+ + v P−_x`.
    NonlinearDiracSystem {
        v: f64,
        a: f64,
    },
    NonlinearTelegrapher {
        v: f64,
        a: f64,
        form: TelegrapherForm,
    },
}

impl PdeKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TwoSpeed { .. } => "two_speed_system",
            Self::Telegrapher { .. } => "telegrapher",
            Self::Dirac { .. } => "dirac",
            Self::Diffusion { .. } => "diffusion",
            Self::MaxwellPotentials { .. } => "maxwell_potentials",
            Self::NonlinearDiffusion { .. } => "nonlinear_diffusion",
            Self::ConservativeDiffusion { .. } => "conservative_diffusion",
            Self::NonlinearDiracSystem { .. } => "nonlinear_dirac_system",
            Self::NonlinearTelegrapher { .. } => "nonlinear_telegrapher",
        }
    }

    pub fn components(&self) -> usize {
        match self {
            Self::TwoSpeed { .. } | Self::Dirac { .. } | Self::MaxwellPotentials { .. } | Self::NonlinearDiracSystem { .. } => 2,
            _ => 1,
        }
    }

    pub fn scalar_kind(&self) -> ScalarKind {
        if matches!(self, Self::Dirac { .. }) {
            ScalarKind::Complex
        } else {
            ScalarKind::Real
        }
    }

    pub fn is_second_order_in_time(&self) -> bool {
        matches!(self, Self::Telegrapher { .. } | Self::NonlinearTelegrapher { .. })
    }

    fn validate(&self) -> Result<()> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        let bad = |msg: String| Err(Error::Parameter(msg));
        match self {
            Self::TwoSpeed { v, a }
            | Self::Telegrapher { v, a }
            | Self::NonlinearDiracSystem { v, a }
            | Self::NonlinearTelegrapher { v, a, .. } => {
                if !finite(&[*v, *a]) || *v < 0.0 {
                    return bad(format!("{}: need finite v >= 0 and finite a (v = {v}, a = {a})", self.name()));
                }
            }
            Self::Dirac { m, c } => {
                if !finite(&[*m, *c]) || *c <= 0.0 {
                    return bad(format!("dirac: need finite m and c > 0 (m = {m}, c = {c})"));
                }
            }
            Self::Diffusion { d } => {
                if !d.is_finite() || *d <= 0.0 {
                    return bad(format!("diffusion: need D > 0, got {d}"));
                }
            }
            Self::MaxwellPotentials { c, .. } => {
                if !c.is_finite() || *c <= 0.0 {
                    return bad(format!("maxwell: need c > 0, got {c}"));
                }
            }
            Self::NonlinearDiffusion { law, k } => {
                if !(1..=2).contains(k) {
                    return bad(format!("nonlinear diffusion: k must be 1 or 2, got {k}"));
                }
                validate_law(law)?;
            }
            Self::ConservativeDiffusion { law } => validate_law(law)?,
        }
        Ok(())
    }
}

fn validate_law(law: &DiffusivityLaw) -> Result<()> {
    match law {
        DiffusivityLaw::Constant(d) if !d.is_finite() || *d <= 0.0 => {
            Err(Error::Parameter(format!("constant diffusivity must be positive, got {d}")))
        }
        DiffusivityLaw::PowerLaw { a, b, m } if !(a.is_finite() && b.is_finite() && m.is_finite()) => {
            Err(Error::Parameter("power-law parameters must be finite".into()))
        }
        _ => Ok(()),
    }
}

/// One-dimensional initial profile, sampled on the grid nodes.
#[derive(Clone)]
pub enum Profile {
    Zero,
    Constant(f64),
    /// `mass / (sqrt(2π) width) exp(−(x − center)² / (2 width²))`.
    Gaussian {
        center: f64,
        width: f64,
        mass: f64,
    },
    /// `mass / dx` on the node nearest to `x0`.
    Delta {
        x0: f64,
        mass: f64,
    },
    Custom(ScalarFn),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Gaussian { center, width, mass } => write!(f, "Gaussian {{ center: {center}, width: {width}, mass: {mass} }}"),
            Self::Delta { x0, mass } => write!(f, "Delta {{ x0: {x0}, mass: {mass} }}"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Profile {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    pub fn sample(&self, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
        let xs = grid.xs();
        let out: Vec<f64> = match self {
            Self::Zero => vec![0.0; xs.len()],
            Self::Constant(c) => vec![*c; xs.len()],
            Self::Gaussian { center, width, mass } => {
                if *width <= 0.0 {
                    return Err(Error::Parameter(format!("gaussian width must be positive, got {width}")));
                }
                let norm = mass / ((2.0 * PI).sqrt() * width);
                xs.iter().map(|x| norm * (-(x - center).powi(2) / (2.0 * width * width)).exp()).collect()
            }
            Self::Delta { x0, mass } => {
                let s = ((x0 - grid.x_min()) / grid.dx()).round();
                if s < 0.0 || s as usize >= grid.nx() {
                    return Err(Error::Domain(format!("delta location {x0} outside the grid")));
                }
                let mut v = vec![0.0; xs.len()];
                v[s as usize] = mass / grid.dx();
                v
            }
            Self::Custom(f) => xs.iter().map(|x| f(*x)).collect(),
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("initial data must be finite".into()));
        }
        Ok(out)
    }
}

/// Initial data for [`solve`]: one profile per component, imaginary parts for
/// complex equations, and an initial time derivative for second-order
/// equations (zero when absent).
#[derive(Debug, Clone)]
pub struct InitialData {
    pub values: Vec<Profile>,
    pub imag: Option<Vec<Profile>>,
    pub velocity: Option<Vec<Profile>>,
}

impl InitialData {
    pub fn scalar(p: Profile) -> Self {
        Self { values: vec![p], imag: None, velocity: None }
    }

    pub fn pair(a: Profile, b: Profile) -> Self {
        Self { values: vec![a, b], imag: None, velocity: None }
    }

    pub fn with_velocity(mut self, v: Profile) -> Self {
        self.velocity = Some(vec![v]);
        self
    }

    pub fn with_imag(mut self, im: Vec<Profile>) -> Self {
        self.imag = Some(im);
        self
    }

    /// Initial level taken from level `n` of an existing field.
    pub fn from_level(field: &FieldHistory, n: usize) -> Self {
        let g = *field.grid();
        let values = (0..field.components())
            .map(|c| {
                let data = field.slice(c, n).to_vec();
                let (x_min, dx) = (g.x_min(), g.dx());
                Profile::custom(move |x| data[((x - x_min) / dx).round() as usize])
            })
            .collect();
        Self { values, imag: None, velocity: None }
    }
}

/// Run diagnostics reported alongside a solution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub steps: usize,
    /// Courant number `v dt / dx` for hyperbolic kinds.
    pub courant: Option<f64>,
    /// Largest `f(P)^k dt/dx^2` seen during a parabolic run.
    pub max_parabolic_number: Option<f64>,
    /// Set when `min f / max f` fell below [`DEGENERACY_RATIO`].
    pub near_degenerate: bool,
    /// Largest relative change of `sum P dx` (parabolic) or of the discrete
    /// norm (Dirac) from its initial value.
    pub conservation_drift: Option<f64>,
}

pub fn solve(kind: &PdeKind, init: &InitialData, grid: &SpaceTimeGrid, bc: &BoundaryCondition) -> Result<FieldHistory> {
    Ok(solve_with_diagnostics(kind, init, grid, bc)?.0)
}

pub fn solve_with_diagnostics(
    kind: &PdeKind,
    init: &InitialData,
    grid: &SpaceTimeGrid,
    bc: &BoundaryCondition,
) -> Result<(FieldHistory, SolveDiagnostics)> {
    kind.validate()?;
    bc.validate()?;
    if init.values.len() != kind.components() {
        return Err(Error::Dimension(format!("{} needs {} initial profile(s), got {}", kind.name(), kind.components(), init.values.len())));
    }
    match kind {
        PdeKind::TwoSpeed { v, a } => {
            let (v, a) = (*v, *a);
            solve_characteristic(v, a, init, grid, bc, move |_, _, p, m| (-a * (p - m), -a * (m - p)))
        }
        PdeKind::NonlinearDiracSystem { v, a } => {
            let (v, a) = (*v, *a);
            solve_characteristic(v, a, init, grid, bc, move |_, _, p, m| (-p * p + a * m, -p * m + a * p))
        }
        PdeKind::MaxwellPotentials { c, source } => {
            let src = source.clone();
            let a0 = init.values[0].sample(grid)?;
            let f0 = init.values[1].sample(grid)?;
            let plus: Vec<f64> = a0.iter().zip(&f0).map(|(a, f)| a + f).collect();
            let minus: Vec<f64> = a0.iter().zip(&f0).map(|(a, f)| a - f).collect();
            let chars = InitialData::pair(Profile::custom(lookup(grid, plus)), Profile::custom(lookup(grid, minus)));
            let (pm, diag) = solve_characteristic(*c, 0.0, &chars, grid, bc, move |x, t, _, _| {
                let s = src.value(x, t);
                (s, s)
            })?;
            let mut out = FieldHistory::real(*grid, 2)?;
            for n in 0..grid.nt() {
                for i in 0..grid.nx() {
                    let (p, m) = (pm.get(0, n, i), pm.get(1, n, i));
                    out.set(0, n, i, 0.5 * (p + m));
                    out.set(1, n, i, 0.5 * (p - m));
                }
            }
            Ok((out, diag))
        }
        PdeKind::Telegrapher { v, a } => {
            let (v, a) = (*v, *a);
            solve_leapfrog(v, init, grid, bc, LeapfrogTerms { beta_p: 0.0, damping: 2.0 * a, rhs: Box::new(|_, _, _| 0.0) })
        }
        PdeKind::NonlinearTelegrapher { v, a, form } => {
            let (v, a) = (*v, *a);
            solve_leapfrog(
                v,
                init,
                grid,
                bc,
                LeapfrogTerms { beta_p: form.beta(), damping: 0.0, rhs: Box::new(move |p, px, _| -p * p * p + v * p * px + a * a * p) },
            )
        }
        PdeKind::Diffusion { d } => solve_parabolic(&Parabolic::Pointwise(DiffusivityLaw::Constant(*d), 1), init, grid, bc),
        PdeKind::NonlinearDiffusion { law, k } => solve_parabolic(&Parabolic::Pointwise(law.clone(), *k), init, grid, bc),
        PdeKind::ConservativeDiffusion { law } => solve_parabolic(&Parabolic::Flux(law.clone()), init, grid, bc),
        PdeKind::Dirac { m, c } => solve_dirac(*m, *c, init, grid, bc),
    }
}

fn lookup(grid: &SpaceTimeGrid, data: Vec<f64>) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    let (x_min, dx) = (grid.x_min(), grid.dx());
    move |x| data[((x - x_min) / dx).round() as usize]
}

fn check_level(level: &[f64], step: usize, what: &str) -> Result<()> {
    if let Some(i) = level.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence { step, detail: format!("non-finite {what} at node {i}") });
    }
    Ok(())
}

fn courant(v: f64, grid: &SpaceTimeGrid) -> Result<f64> {
    let nu = v * grid.dt() / grid.dx();
    if nu > 1.0 + COURANT_SLACK {
        return Err(Error::Configuration(format!("Courant number v dt/dx = {nu} exceeds 1")));
    }
    Ok(nu.min(1.0))
}

/// Upwind transport of one level with Courant number `nu` in direction
/// `dir` (+1 right, −1 left).
fn transport(u: &[f64], nu: f64, dir: isize, bc: &BoundaryCondition, out: &mut [f64]) {
    let nx = u.len();
    for i in 0..nx {
        match bc.resolve(i as isize - dir, nx) {
            Some(up) => out[i] = if nu == 1.0 { u[up] } else { (1.0 - nu) * u[i] + nu * u[up] },
            None => out[i] = u[i],
        }
    }
}

fn solve_characteristic<F>(
    v: f64,
    a: f64,
    init: &InitialData,
    grid: &SpaceTimeGrid,
    bc: &BoundaryCondition,
    rhs: F,
) -> Result<(FieldHistory, SolveDiagnostics)>
where
    F: Fn(f64, f64, f64, f64) -> (f64, f64),
{
    let nu = courant(v, grid)?;
    if a.abs() * grid.dt() > 1.0 {
        return Err(Error::Configuration(format!("coupling a dt = {} exceeds 1", a.abs() * grid.dt())));
    }
    let (nx, dt) = (grid.nx(), grid.dt());
    let mut out = FieldHistory::real(*grid, 2)?;
    for c in 0..2 {
        out.slice_mut(c, 0).copy_from_slice(&init.values[c].sample(grid)?);
    }
    let xs = grid.xs();
    let mut k1 = [vec![0.0; nx], vec![0.0; nx]];
    let mut k2 = [vec![0.0; nx], vec![0.0; nx]];
    let mut tmp = vec![0.0; nx];
    let mut pred = [vec![0.0; nx], vec![0.0; nx]];
    let mut next = [vec![0.0; nx], vec![0.0; nx]];
    let dirs = [1isize, -1isize];
    for n in 0..grid.nt() - 1 {
        let (t, t1) = (grid.t(n), grid.t(n + 1));
        let cur = [out.slice(0, n).to_vec(), out.slice(1, n).to_vec()];
        for i in 0..nx {
            let (f0, f1) = rhs(xs[i], t, cur[0][i], cur[1][i]);
            k1[0][i] = f0;
            k1[1][i] = f1;
        }
        for c in 0..2 {
            for i in 0..nx {
                tmp[i] = cur[c][i] + dt * k1[c][i];
            }
            transport(&tmp, nu, dirs[c], bc, &mut pred[c]);
            bc.apply(&mut pred[c], n + 1);
        }
        for i in 0..nx {
            let (f0, f1) = rhs(xs[i], t1, pred[0][i], pred[1][i]);
            k2[0][i] = f0;
            k2[1][i] = f1;
        }
        for c in 0..2 {
            for i in 0..nx {
                tmp[i] = cur[c][i] + 0.5 * dt * k1[c][i];
            }
            transport(&tmp, nu, dirs[c], bc, &mut next[c]);
            for i in 0..nx {
                next[c][i] += 0.5 * dt * k2[c][i];
            }
            bc.apply(&mut next[c], n + 1);
            check_level(&next[c], n + 1, "density")?;
            out.slice_mut(c, n + 1).copy_from_slice(&next[c]);
        }
    }
    let diag = SolveDiagnostics { steps: grid.nt() - 1, courant: Some(nu), ..Default::default() };
    Ok((out, diag))
}

/// Pieces of `P_tt − v² P_xx = rhs(P, P_x, x) + beta_p P P_t − damping P_t`.
struct LeapfrogTerms {
    beta_p: f64,
    damping: f64,
    rhs: Box<dyn Fn(f64, f64, f64) -> f64>,
}

fn solve_leapfrog(
    v: f64,
    init: &InitialData,
    grid: &SpaceTimeGrid,
    bc: &BoundaryCondition,
    terms: LeapfrogTerms,
) -> Result<(FieldHistory, SolveDiagnostics)> {
    let nu = courant(v, grid)?;
    let (nx, dx, dt) = (grid.nx(), grid.dx(), grid.dt());
    let mut out = FieldHistory::real(*grid, 1)?;
    let p0 = init.values[0].sample(grid)?;
    let vel = match &init.velocity {
        Some(v) if !v.is_empty() => v[0].sample(grid)?,
        _ => vec![0.0; nx],
    };
    out.slice_mut(0, 0).copy_from_slice(&p0);
    let xs = grid.xs();
    let neighbours = |i: usize| -> Option<(usize, usize)> { Some((bc.resolve(i as isize - 1, nx)?, bc.resolve(i as isize + 1, nx)?)) };
    // Taylor start: P1 = P0 + dt V + dt²/2 P_tt(0)
    let mut level = p0.clone();
    for i in 0..nx {
        if let Some((l, r)) = neighbours(i) {
            let pxx = (p0[l] - 2.0 * p0[i] + p0[r]) / (dx * dx);
            let px = (p0[r] - p0[l]) / (2.0 * dx);
            let ptt = v * v * pxx + (terms.rhs)(p0[i], px, xs[i]) + (terms.beta_p * p0[i] - terms.damping) * vel[i];
            level[i] = p0[i] + dt * vel[i] + 0.5 * dt * dt * ptt;
        }
    }
    bc.apply(&mut level, 1);
    check_level(&level, 1, "field")?;
    out.slice_mut(0, 1).copy_from_slice(&level);

    for n in 1..grid.nt() - 1 {
        let prev = out.slice(0, n - 1).to_vec();
        let cur = out.slice(0, n).to_vec();
        let mut next = cur.clone();
        for i in 0..nx {
            let Some((l, r)) = neighbours(i) else { continue };
            let lap = cur[l] - 2.0 * cur[i] + cur[r];
            let px = (cur[r] - cur[l]) / (2.0 * dx);
            // centred P_t = (P^{n+1} − P^{n−1}) / (2 dt)
            let g = 0.5 * dt * (terms.beta_p * cur[i] - terms.damping);
            let denom = 1.0 - g;
            if denom.abs() < 1e-3 {
                return Err(Error::Divergence { step: n + 1, detail: format!("singular centred update at node {i}") });
            }
            let explicit = 2.0 * cur[i] - prev[i] - g * prev[i] + nu * nu * lap + dt * dt * (terms.rhs)(cur[i], px, xs[i]);
            next[i] = explicit / denom;
        }
        bc.apply(&mut next, n + 1);
        check_level(&next, n + 1, "field")?;
        out.slice_mut(0, n + 1).copy_from_slice(&next);
    }
    let diag = SolveDiagnostics { steps: grid.nt() - 1, courant: Some(nu), ..Default::default() };
    Ok((out, diag))
}

enum Parabolic {
    /// `P_t = f(P)^k P_xx`
    Pointwise(DiffusivityLaw, u8),
    /// `P_t = (f(P) P_x)_x`
    Flux(DiffusivityLaw),
}

impl Parabolic {
    fn coefficients(&self, p: &[f64], step: usize) -> Result<Vec<f64>> {
        let coef = |pi: f64| match self {
            Parabolic::Pointwise(law, k) => law.coefficient(pi, *k),
            Parabolic::Flux(law) => law.eval(pi),
        };
        let mut out = Vec::with_capacity(p.len());
        for (i, pi) in p.iter().enumerate() {
            let c = coef(*pi)?;
            if !c.is_finite() || c < 0.0 {
                return Err(Error::Domain(format!("parabolicity lost at step {step}, node {i}: diffusivity {c} at P = {pi}")));
            }
            out.push(c);
        }
        Ok(out)
    }
}

/// `max(coef) dt/dx^2`, with the diffusivity floored at `eps ||P||`.
fn parabolic_number(coef: &[f64], p: &[f64], grid: &SpaceTimeGrid) -> f64 {
    let sup = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = f64::EPSILON * sup;
    let cmax = coef.iter().fold(floor, |m, c| m.max(*c));
    cmax * grid.dt() / (grid.dx() * grid.dx())
}

fn solve_parabolic(
    eq: &Parabolic,
    init: &InitialData,
    grid: &SpaceTimeGrid,
    bc: &BoundaryCondition,
) -> Result<(FieldHistory, SolveDiagnostics)> {
    let (nx, dx, dt) = (grid.nx(), grid.dx(), grid.dt());
    let p0 = init.values[0].sample(grid)?;
    let coef0 = eq.coefficients(&p0, 0)?;
    let r0 = parabolic_number(&coef0, &p0, grid);
    if r0 > PARABOLIC_LIMIT {
        return Err(Error::Configuration(format!("max f(P)^k dt/dx^2 = {r0} exceeds {PARABOLIC_LIMIT} on the initial data")));
    }
    let mut out = FieldHistory::real(*grid, 1)?;
    out.slice_mut(0, 0).copy_from_slice(&p0);
    let mass0: f64 = p0.iter().sum::<f64>() * dx;
    let mut diag = SolveDiagnostics { steps: grid.nt() - 1, max_parabolic_number: Some(r0), ..Default::default() };
    let mut drift: f64 = 0.0;
    let inv_dx2 = 1.0 / (dx * dx);
    for n in 0..grid.nt() - 1 {
        let cur = out.slice(0, n).to_vec();
        let coef = if n == 0 { coef0.clone() } else { eq.coefficients(&cur, n)? };
        let r = parabolic_number(&coef, &cur, grid);
        diag.max_parabolic_number = Some(diag.max_parabolic_number.unwrap_or(0.0).max(r));
        if r > PARABOLIC_RECHECK_FACTOR * PARABOLIC_LIMIT {
            return Err(Error::Divergence {
                step: n,
                detail: format!("parabolic number {r} exceeded {PARABOLIC_RECHECK_FACTOR} x {PARABOLIC_LIMIT}"),
            });
        }
        let cmax = coef.iter().fold(0.0f64, |m, c| m.max(*c));
        let cmin = coef.iter().fold(f64::INFINITY, |m, c| m.min(*c));
        if cmax > 0.0 && cmin < DEGENERACY_RATIO * cmax {
            diag.near_degenerate = true;
        }
        let mut next = cur.clone();
        for i in 0..nx {
            let (Some(l), Some(rr)) = (bc.resolve(i as isize - 1, nx), bc.resolve(i as isize + 1, nx)) else {
                continue;
            };
            next[i] = match eq {
                Parabolic::Pointwise(..) => cur[i] + dt * coef[i] * ((cur[l] - 2.0 * cur[i] + cur[rr]) * inv_dx2),
                Parabolic::Flux(_) => {
                    let right = 0.5 * (coef[i] + coef[rr]) * (cur[rr] - cur[i]);
                    let left = 0.5 * (coef[l] + coef[i]) * (cur[i] - cur[l]);
                    cur[i] + dt * (right - left) * inv_dx2
                }
            };
        }
        bc.apply(&mut next, n + 1);
        check_level(&next, n + 1, "density")?;
        let mass: f64 = next.iter().sum::<f64>() * dx;
        if mass0 != 0.0 {
            drift = drift.max(((mass - mass0) / mass0).abs());
        }
        out.slice_mut(0, n + 1).copy_from_slice(&next);
    }
    diag.conservation_drift = Some(drift);
    Ok((out, diag))
}

/// Discrete norm `sum (|Ψ+|² + |Ψ−|²) dx` at level `n` of a complex field.
pub fn dirac_norm(field: &FieldHistory, n: usize) -> f64 {
    let dx = field.grid().dx();
    (0..field.components())
        .map(|c| {
            let re = field.slice(c, n);
            let im = field.imag_slice(c, n).unwrap_or(&[]);
            re.iter().zip(im).map(|(a, b)| a * a + b * b).sum::<f64>()
        })
        .sum::<f64>()
        * dx
}

/// `ψ ← exp(−i θ σx) ψ` pointwise.
fn mass_rotation(theta: f64, re: &mut [Vec<f64>; 2], im: &mut [Vec<f64>; 2]) {
    let (c, s) = (theta.cos(), theta.sin());
    for i in 0..re[0].len() {
        let (a_re, a_im, b_re, b_im) = (re[0][i], im[0][i], re[1][i], im[1][i]);
        // (c − i s σx): upper = c a − i s b, lower = c b − i s a
        re[0][i] = c * a_re + s * b_im;
        im[0][i] = c * a_im - s * b_re;
        re[1][i] = c * b_re + s * a_im;
        im[1][i] = c * b_im - s * a_re;
    }
}

fn solve_dirac(
    m: f64,
    c: f64,
    init: &InitialData,
    grid: &SpaceTimeGrid,
    bc: &BoundaryCondition,
) -> Result<(FieldHistory, SolveDiagnostics)> {
    let nu = c * grid.dt() / grid.dx();
    if (nu - 1.0).abs() > 1e-9 {
        return Err(Error::Configuration(format!("the unitary Dirac scheme needs c dt/dx = 1, got {nu}")));
    }
    if *bc != BoundaryCondition::Periodic {
        return Err(Error::Configuration("the Dirac solver supports periodic boundaries only".into()));
    }
    let nx = grid.nx();
    let mut out = FieldHistory::zeros(*grid, 2, ScalarKind::Complex)?;
    let mut re = [init.values[0].sample(grid)?, init.values[1].sample(grid)?];
    let mut im = match &init.imag {
        Some(p) if p.len() == 2 => [p[0].sample(grid)?, p[1].sample(grid)?],
        Some(_) => return Err(Error::Dimension("dirac needs two imaginary profiles".into())),
        None => [vec![0.0; nx], vec![0.0; nx]],
    };
    let store = |out: &mut FieldHistory, n: usize, re: &[Vec<f64>; 2], im: &[Vec<f64>; 2]| {
        for comp in 0..2 {
            out.slice_mut(comp, n).copy_from_slice(&re[comp]);
            out.imag_slice_mut(comp, n).unwrap().copy_from_slice(&im[comp]);
        }
    };
    store(&mut out, 0, &re, &im);
    let norm0 = dirac_norm(&out, 0);
    let half = 0.5 * m * c * c * grid.dt();
    let mut drift: f64 = 0.0;
    for n in 0..grid.nt() - 1 {
        mass_rotation(half, &mut re, &mut im);
        re[0].rotate_right(1);
        im[0].rotate_right(1);
        re[1].rotate_left(1);
        im[1].rotate_left(1);
        mass_rotation(half, &mut re, &mut im);
        for comp in 0..2 {
            check_level(&re[comp], n + 1, "spinor")?;
            check_level(&im[comp], n + 1, "spinor")?;
        }
        store(&mut out, n + 1, &re, &im);
        if norm0 > 0.0 {
            drift = drift.max(((dirac_norm(&out, n + 1) - norm0) / norm0).abs());
        }
    }
    let diag = SolveDiagnostics { steps: grid.nt() - 1, courant: Some(nu), conservation_drift: Some(drift), ..Default::default() };
    Ok((out, diag))
}

/// Centred-difference access to a field on interior nodes.
struct Stencil<'a> {
    f: &'a FieldHistory,
    dx: f64,
    dt: f64,
}

impl Stencil<'_> {
    fn u(&self, c: usize, n: usize, i: usize) -> f64 {
        self.f.get(c, n, i)
    }
    fn ui(&self, c: usize, n: usize, i: usize) -> f64 {
        self.f.imag_slice(c, n).map_or(0.0, |s| s[i])
    }
    fn dt1(&self, c: usize, n: usize, i: usize) -> f64 {
        (self.u(c, n + 1, i) - self.u(c, n - 1, i)) / (2.0 * self.dt)
    }
    fn dt2(&self, c: usize, n: usize, i: usize) -> f64 {
        (self.u(c, n + 1, i) - 2.0 * self.u(c, n, i) + self.u(c, n - 1, i)) / (self.dt * self.dt)
    }
    fn dx1(&self, c: usize, n: usize, i: usize) -> f64 {
        (self.u(c, n, i + 1) - self.u(c, n, i - 1)) / (2.0 * self.dx)
    }
    fn dx2(&self, c: usize, n: usize, i: usize) -> f64 {
        (self.u(c, n, i + 1) - 2.0 * self.u(c, n, i) + self.u(c, n, i - 1)) / (self.dx * self.dx)
    }
    fn dt1_im(&self, c: usize, n: usize, i: usize) -> f64 {
        (self.ui(c, n + 1, i) - self.ui(c, n - 1, i)) / (2.0 * self.dt)
    }
    fn dx1_im(&self, c: usize, n: usize, i: usize) -> f64 {
        (self.ui(c, n, i + 1) - self.ui(c, n, i - 1)) / (2.0 * self.dx)
    }
}

fn check_shape(kind: &PdeKind, field: &FieldHistory) -> Result<()> {
    if field.components() != kind.components() {
        return Err(Error::Dimension(format!(
            "{} needs {} component(s), field has {}",
            kind.name(),
            kind.components(),
            field.components()
        )));
    }
    if kind.scalar_kind() == ScalarKind::Complex && !field.is_complex() {
        return Err(Error::Dimension("dirac residual needs a complex field".into()));
    }
    let g = field.grid();
    if g.nx() < 3 || g.nt() < 3 {
        return Err(Error::Dimension(format!("residual needs nx, nt >= 3, got {} x {}", g.nx(), g.nt())));
    }
    Ok(())
}

/// Pointwise residual of `kind` evaluated with centred differences on the
/// interior space-time lattice (`1 ≤ i ≤ nx−2`, `1 ≤ n ≤ nt−2`). Entries
/// outside the interior are zero. Complex kinds return a complex residual.
pub fn residual(kind: &PdeKind, field: &FieldHistory) -> Result<FieldHistory> {
    kind.validate()?;
    check_shape(kind, field)?;
    let g = *field.grid();
    let s = Stencil { f: field, dx: g.dx(), dt: g.dt() };
    let mut out = FieldHistory::zeros(g, kind.components(), kind.scalar_kind())?;
    for n in 1..g.nt() - 1 {
        let t = g.t(n);
        for i in 1..g.nx() - 1 {
            let x = g.x(i);
            match kind {
                PdeKind::TwoSpeed { v, a } => {
                    let (p, m) = (s.u(0, n, i), s.u(1, n, i));
                    out.set(0, n, i, s.dt1(0, n, i) + v * s.dx1(0, n, i) + a * (p - m));
                    out.set(1, n, i, s.dt1(1, n, i) - v * s.dx1(1, n, i) + a * (m - p));
                }
                PdeKind::NonlinearDiracSystem { v, a } => {
                    let (p, m) = (s.u(0, n, i), s.u(1, n, i));
                    out.set(0, n, i, s.dt1(0, n, i) + v * s.dx1(0, n, i) + p * p - a * m);
                    out.set(1, n, i, s.dt1(1, n, i) - v * s.dx1(1, n, i) + p * m - a * p);
                }
                PdeKind::Telegrapher { v, a } => {
                    out.set(0, n, i, s.dt2(0, n, i) - v * v * s.dx2(0, n, i) + 2.0 * a * s.dt1(0, n, i));
                }
                PdeKind::NonlinearTelegrapher { v, a, form } => {
                    let p = s.u(0, n, i);
                    let r = s.dt2(0, n, i) - v * v * s.dx2(0, n, i) + p * p * p
                        - form.beta() * p * s.dt1(0, n, i)
                        - v * p * s.dx1(0, n, i)
                        - a * a * p;
                    out.set(0, n, i, r);
                }
                PdeKind::Diffusion { d } => {
                    out.set(0, n, i, s.dt1(0, n, i) - d * s.dx2(0, n, i));
                }
                PdeKind::NonlinearDiffusion { law, k } => {
                    let coef = law.coefficient(s.u(0, n, i), *k)?;
                    out.set(0, n, i, s.dt1(0, n, i) - coef * s.dx2(0, n, i));
                }
                PdeKind::ConservativeDiffusion { law } => {
                    let (l, c, r) = (s.u(0, n, i - 1), s.u(0, n, i), s.u(0, n, i + 1));
                    let (fl, fc, fr) = (law.eval(l)?, law.eval(c)?, law.eval(r)?);
                    let flux = (0.5 * (fc + fr) * (r - c) - 0.5 * (fl + fc) * (c - l)) / (s.dx * s.dx);
                    out.set(0, n, i, s.dt1(0, n, i) - flux);
                }
                PdeKind::MaxwellPotentials { c, source } => {
                    out.set(0, n, i, s.dt1(0, n, i) + c * s.dx1(1, n, i) - source.value(x, t));
                    out.set(1, n, i, s.dt1(1, n, i) + c * s.dx1(0, n, i));
                }
                PdeKind::Dirac { m, c } => {
                    let w = m * c * c;
                    // ∂t ψ1 + c ∂x ψ1 + i w ψ2 and ∂t ψ2 − c ∂x ψ2 + i w ψ1
                    let re0 = s.dt1(0, n, i) + c * s.dx1(0, n, i) - w * s.ui(1, n, i);
                    let im0 = s.dt1_im(0, n, i) + c * s.dx1_im(0, n, i) + w * s.u(1, n, i);
                    let re1 = s.dt1(1, n, i) - c * s.dx1(1, n, i) - w * s.ui(0, n, i);
                    let im1 = s.dt1_im(1, n, i) - c * s.dx1_im(1, n, i) + w * s.u(0, n, i);
                    out.set(0, n, i, re0);
                    out.set(1, n, i, re1);
                    out.imag_slice_mut(0, n).unwrap()[i] = im0;
                    out.imag_slice_mut(1, n).unwrap()[i] = im1;
                }
            }
        }
    }
    Ok(out)
}

/// Largest absolute residual over the interior (all components, real and
/// imaginary parts).
pub fn residual_sup(kind: &PdeKind, field: &FieldHistory) -> Result<f64> {
    Ok(field_sup(&residual(kind, field)?))
}

/// Sup over every stored value of a field.
pub fn field_sup(f: &FieldHistory) -> f64 {
    let mut m: f64 = f.real_values().iter().fold(0.0, |m, v| m.max(v.abs()));
    for c in 0..f.components() {
        for n in 0..f.grid().nt() {
            if let Some(im) = f.imag_slice(c, n) {
                m = im.iter().fold(m, |m, v| m.max(v.abs()));
            }
        }
    }
    m
}

/// Leading-order local truncation estimate of the scheme `solve` uses for
/// `kind`, from finite-difference derivatives of `field` (real part).
pub fn truncation_estimate(kind: &PdeKind, field: &FieldHistory) -> Result<f64> {
    check_shape(kind, field)?;
    let g = field.grid();
    let (dx, dt) = (g.dx(), g.dt());
    let mut max_tt: f64 = 0.0;
    let mut max_xx: f64 = 0.0;
    let mut max_xxxx: f64 = 0.0;
    let mut max_tttt: f64 = 0.0;
    let mut max_coef: f64 = 0.0;
    for c in 0..field.components() {
        for n in 2..g.nt().saturating_sub(2) {
            for i in 2..g.nx() - 2 {
                let u = |dn: isize, di: isize| field.get(c, (n as isize + dn) as usize, (i as isize + di) as usize);
                max_tt = max_tt.max(((u(1, 0) - 2.0 * u(0, 0) + u(-1, 0)) / (dt * dt)).abs());
                max_xx = max_xx.max(((u(0, 1) - 2.0 * u(0, 0) + u(0, -1)) / (dx * dx)).abs());
                max_xxxx = max_xxxx.max(((u(0, 2) - 4.0 * u(0, 1) + 6.0 * u(0, 0) - 4.0 * u(0, -1) + u(0, -2)) / dx.powi(4)).abs());
                max_tttt = max_tttt.max(((u(2, 0) - 4.0 * u(1, 0) + 6.0 * u(0, 0) - 4.0 * u(-1, 0) + u(-2, 0)) / dt.powi(4)).abs());
                let coef = match kind {
                    PdeKind::Diffusion { d } => *d,
                    PdeKind::NonlinearDiffusion { law, k } => law.coefficient(u(0, 0), *k)?,
                    PdeKind::ConservativeDiffusion { law } => law.eval(u(0, 0))?,
                    _ => 0.0,
                };
                max_coef = max_coef.max(coef.abs());
            }
        }
    }
    Ok(match kind {
        PdeKind::Diffusion { .. } | PdeKind::NonlinearDiffusion { .. } | PdeKind::ConservativeDiffusion { .. } => {
            0.5 * dt * max_tt + max_coef * dx * dx / 12.0 * max_xxxx
        }
        PdeKind::Telegrapher { v, .. } | PdeKind::NonlinearTelegrapher { v, .. } => {
            dt * dt / 12.0 * max_tttt + v * v * dx * dx / 12.0 * max_xxxx
        }
        PdeKind::TwoSpeed { v, .. } | PdeKind::NonlinearDiracSystem { v, .. } => {
            let nu = v * dt / dx;
            0.5 * (1.0 - nu).max(0.0) * v * dx * max_xx + dt * dt / 6.0 * max_tt
        }
        PdeKind::MaxwellPotentials { c, .. } | PdeKind::Dirac { c, .. } => {
            let nu = c * dt / dx;
            0.5 * (1.0 - nu).max(0.0) * c * dx * max_xx + dt * dt / 6.0 * max_tt
        }
    })
}

/// Right-mover residuals of the second-order equation obtained by
/// eliminating `P−` from a two-speed system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// Sup residual of the equation as printed (telegrapher's equation for
    /// the linear system, `β = 1` for the nonlinear one).
    pub printed_form: f64,
    /// Sup residual of the independently derived iterate (`β = −3` for the
    /// nonlinear system; identical to `printed_form` for the linear one).
    pub derived_form: f64,
}

/// Evaluate the iterated second-order equation on the right movers of a
/// two-speed or nonlinear-Dirac solution.
pub fn iterate_system_check(kind: &PdeKind, field: &FieldHistory) -> Result<IterationReport> {
    check_shape(kind, field)?;
    let p_plus = field.component(0)?;
    match kind {
        PdeKind::TwoSpeed { v, a } => {
            let r = residual_sup(&PdeKind::Telegrapher { v: *v, a: *a }, &p_plus)?;
            Ok(IterationReport { printed_form: r, derived_form: r })
        }
        PdeKind::NonlinearDiracSystem { v, a } => {
            let printed = residual_sup(&PdeKind::NonlinearTelegrapher { v: *v, a: *a, form: TelegrapherForm::Printed }, &p_plus)?;
            let derived = residual_sup(&PdeKind::NonlinearTelegrapher { v: *v, a: *a, form: TelegrapherForm::Derived }, &p_plus)?;
            Ok(IterationReport { printed_form: printed, derived_form: derived })
        }
        other => Err(Error::Parameter(format!("iteration check applies to two-speed systems, not {}", other.name()))),
    }
}

/// Residual norms of the Maxwell-potential suite (sup over the interior).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxwellDiagnostics {
    /// `∂A/∂x + (1/c) ∂Φ/∂t`
    pub lorentz: f64,
    /// `∂²A/∂x² − (1/c²) ∂²A/∂t² + (4π/c) J`
    pub wave_a: f64,
    /// `∂²Φ/∂x² − (1/c²) ∂²Φ/∂t² + 4π ρ`
    pub wave_phi: f64,
    /// `∂J/∂x + ∂ρ/∂t`
    pub continuity: f64,
}

#[derive(Debug, Clone)]
pub struct MaxwellSuite {
    pub a: FieldHistory,
    pub phi: FieldHistory,
    /// `J = (1/(4π c)) ∂a/∂t`
    pub current: FieldHistory,
    /// `ρ = −(1/(4π c)) ∂a/∂x`
    pub charge: FieldHistory,
    pub diagnostics: MaxwellDiagnostics,
}

/// Evolve the potentials `(A, Φ)` driven by `source`, derive current and
/// charge densities from the source derivatives, and report the residuals
/// of the Lorentz condition, both wave equations and continuity.
pub fn solve_maxwell_suite(
    c: f64,
    source: &MaxwellSource,
    init: &InitialData,
    grid: &SpaceTimeGrid,
    bc: &BoundaryCondition,
) -> Result<MaxwellSuite> {
    let kind = PdeKind::MaxwellPotentials { c, source: source.clone() };
    let pot = solve(&kind, init, grid, bc)?;
    let a = pot.component(0)?;
    let phi = pot.component(1)?;
    let scale = 1.0 / (4.0 * PI * c);
    let current = FieldHistory::from_fn(*grid, 1, |_, x, t| scale * source.d_dt(x, t))?;
    let charge = FieldHistory::from_fn(*grid, 1, |_, x, t| -scale * source.d_dx(x, t))?;

    let (dx, dt) = (grid.dx(), grid.dt());
    let sa = Stencil { f: &a, dx, dt };
    let sp = Stencil { f: &phi, dx, dt };
    let sj = Stencil { f: &current, dx, dt };
    let sr = Stencil { f: &charge, dx, dt };
    let mut d = MaxwellDiagnostics { lorentz: 0.0, wave_a: 0.0, wave_phi: 0.0, continuity: 0.0 };
    for n in 1..grid.nt() - 1 {
        for i in 1..grid.nx() - 1 {
            d.lorentz = d.lorentz.max((sa.dx1(0, n, i) + sp.dt1(0, n, i) / c).abs());
            let wa = sa.dx2(0, n, i) - sa.dt2(0, n, i) / (c * c) + 4.0 * PI / c * current.get(0, n, i);
            d.wave_a = d.wave_a.max(wa.abs());
            let wp = sp.dx2(0, n, i) - sp.dt2(0, n, i) / (c * c) + 4.0 * PI * charge.get(0, n, i);
            d.wave_phi = d.wave_phi.max(wp.abs());
            d.continuity = d.continuity.max((sj.dx1(0, n, i) + sr.dt1(0, n, i)).abs());
        }
    }
    Ok(MaxwellSuite { a, phi, current, charge, diagnostics: d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fitted_order;

    fn gaussian_grid(dx: f64, half_width: f64, dt: f64, nt: usize) -> SpaceTimeGrid {
        let nx = (2.0 * half_width / dx).round() as usize + 1;
        SpaceTimeGrid::new(-half_width, half_width, nx, dt, nt, 0.0).unwrap()
    }

    #[test]
    fn heat_kernel_spreads_with_variance_two_d_t() {
        // sigma0 = 1, dx = sigma0/20, D t / sigma0^2 = 1
        let (d, dx) = (1.0f64, 0.05f64);
        let dt = 0.25 * dx * dx / d;
        let nt = (1.0 / dt).round() as usize + 1;
        let g = gaussian_grid(dx, 12.0, dt, nt);
        let init = InitialData::scalar(Profile::Gaussian { center: 0.0, width: 1.0, mass: 1.0 });
        let sol = solve(&PdeKind::Diffusion { d }, &init, &g, &BoundaryCondition::Periodic).unwrap();
        let t = g.t(nt - 1);
        let var = 1.0 + 2.0 * d * t;
        let err = (0..g.nx())
            .map(|i| {
                let x = g.x(i);
                let exact = (-(x * x) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
                (sol.get(0, nt - 1, i) - exact).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "sup error {err}");
    }

    #[test]
    fn uncoupled_two_speed_system_translates() {
        let dx = 0.02;
        let g = gaussian_grid(dx, 5.0, dx, 101);
        let init = InitialData::pair(Profile::Gaussian { center: -1.0, width: 0.3, mass: 1.0 }, Profile::Zero);
        let sol = solve(&PdeKind::TwoSpeed { v: 1.0, a: 0.0 }, &init, &g, &BoundaryCondition::Periodic).unwrap();
        for i in 0..g.nx() - 100 {
            assert!((sol.get(0, 100, i + 100) - sol.get(0, 0, i)).abs() < 1e-14);
        }
        assert!(sol.slice(1, 100).iter().all(|v| *v == 0.0));

        // below Courant number 1 the bump still moves at speed v, smeared
        let g = gaussian_grid(dx, 5.0, 0.5 * dx, 201);
        let sol = solve(&PdeKind::TwoSpeed { v: 1.0, a: 0.0 }, &init, &g, &BoundaryCondition::Periodic).unwrap();
        let last = sol.slice(0, 200);
        let mass: f64 = last.iter().sum::<f64>() * dx;
        let mean: f64 = last.iter().enumerate().map(|(i, p)| g.x(i) * p).sum::<f64>() * dx / mass;
        assert!((mean - 1.0).abs() < 1e-6, "mean {mean}");
        let peak = last.iter().cloned().fold(0.0, f64::max);
        assert!(peak < sol.slice(0, 0).iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn linear_profile_is_stationary_for_power_law_diffusion() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 51, 1e-5, 200, 0.0).unwrap();
        let (alpha, beta) = (0.7, 1.2);
        let law = DiffusivityLaw::PowerLaw { a: 1.0, b: 0.5, m: 1.5 };
        let init = InitialData::scalar(Profile::custom(move |x| alpha * x + beta));
        let bc = BoundaryCondition::dirichlet(beta, alpha + beta);
        let sol = solve(&PdeKind::NonlinearDiffusion { law, k: 2 }, &init, &g, &bc).unwrap();
        for i in 0..g.nx() {
            assert!((sol.get(0, 199, i) - (alpha * g.x(i) + beta)).abs() < 1e-12);
        }
    }

    #[test]
    fn stability_violations_are_configuration_errors() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 11, 0.1, 5, 0.0).unwrap();
        let init = InitialData::scalar(Profile::Constant(1.0));
        assert!(matches!(solve(&PdeKind::Diffusion { d: 1.0 }, &init, &g, &BoundaryCondition::Periodic), Err(Error::Configuration(_))));
        assert!(matches!(
            solve(&PdeKind::Telegrapher { v: 2.0, a: 0.0 }, &init, &g, &BoundaryCondition::Periodic),
            Err(Error::Configuration(_))
        ));
        let pair = InitialData::pair(Profile::Zero, Profile::Zero);
        assert!(matches!(
            solve(&PdeKind::TwoSpeed { v: 1.5, a: 0.0 }, &pair, &g, &BoundaryCondition::Periodic),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn blow_up_is_reported_with_its_step() {
        // dP/dt = -P^2 + a P- with a large negative start explodes
        let g = SpaceTimeGrid::new(0.0, 1.0, 11, 0.1, 400, 0.0).unwrap();
        let init = InitialData::pair(Profile::Constant(-50.0), Profile::Zero);
        let err = solve(&PdeKind::NonlinearDiracSystem { v: 1.0, a: 0.0 }, &init, &g, &BoundaryCondition::Periodic).unwrap_err();
        assert!(matches!(err, Error::Divergence { step, .. } if step > 0), "{err:?}");
    }

    #[test]
    fn dirac_norm_is_conserved() {
        let dx = 0.05;
        let g = gaussian_grid(dx, 10.0, dx, 400);
        let init = InitialData::pair(
            Profile::Gaussian { center: 0.0, width: 1.0, mass: 1.0 },
            Profile::Gaussian { center: 1.0, width: 0.5, mass: 0.5 },
        )
        .with_imag(vec![Profile::Zero, Profile::Gaussian { center: -1.0, width: 0.7, mass: 0.3 }]);
        let (sol, diag) = solve_with_diagnostics(&PdeKind::Dirac { m: 1.3, c: 1.0 }, &init, &g, &BoundaryCondition::Periodic).unwrap();
        let n0 = dirac_norm(&sol, 0);
        for n in 0..g.nt() {
            assert!(((dirac_norm(&sol, n) - n0) / n0).abs() < 1e-6);
        }
        assert!(diag.conservation_drift.unwrap() < 1e-12);
    }

    /// 2x2 matrix exponential by a long Taylor series with scaling and
    /// squaring, independent of the closed-form rotation in the solver.
    fn expm2(m: [[num_complex::Complex64; 2]; 2]) -> [[num_complex::Complex64; 2]; 2] {
        use num_complex::Complex64 as C;
        let mul = |a: [[C; 2]; 2], b: [[C; 2]; 2]| {
            let mut r = [[C::new(0.0, 0.0); 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
                }
            }
            r
        };
        let squarings = 10;
        let scaled = m.map(|row| row.map(|z| z / 2f64.powi(squarings)));
        let mut term = [[C::new(1.0, 0.0), C::new(0.0, 0.0)], [C::new(0.0, 0.0), C::new(1.0, 0.0)]];
        let mut sum = term;
        for k in 1..30 {
            term = mul(term, scaled).map(|row| row.map(|z| z / k as f64));
            for i in 0..2 {
                for j in 0..2 {
                    sum[i][j] += term[i][j];
                }
            }
        }
        for _ in 0..squarings {
            sum = mul(sum, sum);
        }
        sum
    }

    #[test]
    fn dirac_uniform_spinor_matches_matrix_exponential() {
        use num_complex::Complex64 as C;
        let (m, c) = (0.8, 1.0);
        let g = SpaceTimeGrid::new(0.0, 0.2, 3, 0.1, 40, 0.0).unwrap();
        let init = InitialData::pair(Profile::Constant(0.6), Profile::Constant(0.0))
            .with_imag(vec![Profile::Constant(0.0), Profile::Constant(0.8)]);
        let sol = solve(&PdeKind::Dirac { m, c }, &init, &g, &BoundaryCondition::Periodic).unwrap();
        let t = g.t(39);
        // dψ/dt = −i m c² σx ψ
        let w = m * c * c * t;
        let gen = [[C::new(0.0, 0.0), C::new(0.0, -w)], [C::new(0.0, -w), C::new(0.0, 0.0)]];
        let u = expm2(gen);
        let psi0 = [C::new(0.6, 0.0), C::new(0.0, 0.8)];
        for (comp, row) in u.iter().enumerate() {
            let exact = row[0] * psi0[0] + row[1] * psi0[1];
            for i in 0..3 {
                assert!((sol.get(comp, 39, i) - exact.re).abs() < 1e-12);
                assert!((sol.imag_slice(comp, 39).unwrap()[i] - exact.im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dirac_step_is_unitary() {
        // propagate each basis vector of a 4-site lattice one step
        let nx = 4;
        let g = SpaceTimeGrid::new(0.0, 0.3, nx, 0.1, 2, 0.0).unwrap();
        let mut cols = Vec::new();
        for k in 0..2 * nx {
            for imag in [false, true] {
                let comp = k / nx;
                let node = k % nx;
                let unit = move |c: usize| {
                    Profile::custom(move |x: f64| if c == comp && ((x / 0.1f64).round() as usize) == node { 1.0 } else { 0.0 })
                };
                let zero = vec![Profile::Zero, Profile::Zero];
                let init = if imag {
                    InitialData::pair(Profile::Zero, Profile::Zero).with_imag(vec![unit(0), unit(1)])
                } else {
                    InitialData::pair(unit(0), unit(1)).with_imag(zero)
                };
                let sol = solve(&PdeKind::Dirac { m: 2.0, c: 1.0 }, &init, &g, &BoundaryCondition::Periodic).unwrap();
                let mut col = Vec::new();
                for c in 0..2 {
                    col.extend_from_slice(sol.slice(c, 1));
                    col.extend_from_slice(sol.imag_slice(c, 1).unwrap());
                }
                cols.push(col);
            }
        }
        // as a real 16x16 map the step must be orthogonal
        for a in 0..cols.len() {
            for b in 0..cols.len() {
                let dot: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-14, "({a},{b}) = {dot}");
            }
        }
    }

    #[test]
    fn constant_field_has_zero_diffusion_residual() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 11, 0.01, 6, 0.0).unwrap();
        let f = FieldHistory::from_fn(g, 1, |_, _, _| 2.5).unwrap();
        assert_eq!(residual_sup(&PdeKind::Diffusion { d: 0.7 }, &f).unwrap(), 0.0);
    }

    #[test]
    fn heat_kernel_residual_converges_at_second_order() {
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for level in 0..3 {
            let dx = 0.1 / (1 << level) as f64;
            let dt = dx * dx;
            let nx = (8.0 / dx) as usize + 1;
            let g = SpaceTimeGrid::new(-4.0, 4.0, nx, dt, 5, 1.0).unwrap();
            let f = FieldHistory::from_fn(g, 1, |_, x, t| (-(x * x) / (4.0 * t)).exp() / (4.0 * PI * t).sqrt()).unwrap();
            hs.push(dx);
            errs.push(residual_sup(&PdeKind::Diffusion { d: 1.0 }, &f).unwrap());
        }
        let p = fitted_order(&hs, &errs);
        assert!(p > 1.8, "order {p}, {errs:?}");
    }

    #[test]
    fn solver_output_residual_is_below_truncation_estimate() {
        let dx = 0.05;
        let dt = 0.2 * dx * dx;
        let g = gaussian_grid(dx, 8.0, dt, 2000);
        let init = InitialData::scalar(Profile::Gaussian { center: 0.0, width: 1.0, mass: 1.0 });
        let kind = PdeKind::Diffusion { d: 1.0 };
        let sol = solve(&kind, &init, &g, &BoundaryCondition::Periodic).unwrap();
        let res = residual_sup(&kind, &sol).unwrap();
        let est = truncation_estimate(&kind, &sol).unwrap();
        assert!(res < 10.0 * est, "residual {res}, estimate {est}");
    }

    #[test]
    fn residual_rejects_short_histories() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 11, 0.01, 2, 0.0).unwrap();
        let f = FieldHistory::real(g, 1).unwrap();
        assert!(matches!(residual(&PdeKind::Telegrapher { v: 1.0, a: 0.0 }, &f), Err(Error::Dimension(_))));
    }

    #[test]
    fn conservative_diffusion_conserves_mass() {
        let dx = 0.05;
        let law = DiffusivityLaw::PowerLaw { a: 1.0, b: 0.2, m: 2.0 };
        let g = gaussian_grid(dx, 5.0, 0.1 * dx * dx, 1500);
        let init = InitialData::scalar(Profile::Gaussian { center: 0.3, width: 0.6, mass: 1.0 });
        let (sol, diag) = solve_with_diagnostics(&PdeKind::ConservativeDiffusion { law }, &init, &g, &BoundaryCondition::Periodic).unwrap();
        let mut prev: f64 = sol.slice(0, 0).iter().sum::<f64>() * dx;
        for n in 1..g.nt() {
            let m: f64 = sol.slice(0, n).iter().sum::<f64>() * dx;
            assert!((m - prev).abs() < 1e-10);
            prev = m;
        }
        assert!(diag.conservation_drift.unwrap() < 1e-10);
    }

    #[test]
    fn constant_law_matches_linear_diffusion() {
        let dx = 0.05;
        let g = gaussian_grid(dx, 4.0, 0.3 * dx * dx, 300);
        let init = InitialData::scalar(Profile::Gaussian { center: 0.0, width: 0.5, mass: 1.0 });
        let bc = BoundaryCondition::Periodic;
        let lin = solve(&PdeKind::Diffusion { d: 0.9 }, &init, &g, &bc).unwrap();
        let constant = solve(&PdeKind::NonlinearDiffusion { law: DiffusivityLaw::Constant(0.9), k: 1 }, &init, &g, &bc).unwrap();
        let m0 =
            solve(&PdeKind::NonlinearDiffusion { law: DiffusivityLaw::PowerLaw { a: 0.9, b: 3.0, m: 0.0 }, k: 1 }, &init, &g, &bc).unwrap();
        let squared = solve(&PdeKind::NonlinearDiffusion { law: DiffusivityLaw::Constant(0.9f64.sqrt()), k: 2 }, &init, &g, &bc).unwrap();
        for n in 0..g.nt() {
            for i in 0..g.nx() {
                let v = lin.get(0, n, i);
                assert!((constant.get(0, n, i) - v).abs() < 1e-10);
                assert!((m0.get(0, n, i) - v).abs() < 1e-10);
                assert!((squared.get(0, n, i) - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ordered_data_stays_ordered() {
        let dx = 0.05;
        let g = gaussian_grid(dx, 4.0, 0.1 * dx * dx, 800);
        let law = DiffusivityLaw::PowerLaw { a: 1.0, b: 0.5, m: 1.0 };
        let bc = BoundaryCondition::Periodic;
        let lo = InitialData::scalar(Profile::Gaussian { center: 0.0, width: 0.5, mass: 1.0 });
        let hi = InitialData::scalar(Profile::custom(|x| 0.05 + (2.0 / (2.0 * PI).sqrt()) * (-(x * x) / 0.5).exp()));
        for kind in
            [PdeKind::Diffusion { d: 1.0 }, PdeKind::ConservativeDiffusion { law: law.clone() }, PdeKind::NonlinearDiffusion { law, k: 1 }]
        {
            let a = solve(&kind, &lo, &g, &bc).unwrap();
            let b = solve(&kind, &hi, &g, &bc).unwrap();
            assert!(b.slice(0, 0).iter().zip(a.slice(0, 0)).all(|(x, y)| x >= y));
            for n in (0..g.nt()).step_by(50) {
                assert!(b.slice(0, n).iter().zip(a.slice(0, n)).all(|(x, y)| x >= y), "{} at {n}", kind.name());
            }
        }
    }

    #[test]
    fn degenerate_diffusivity_is_flagged_not_regularized() {
        let dx = 0.05;
        let g = gaussian_grid(dx, 3.0, 0.2 * dx * dx, 200);
        let law = DiffusivityLaw::PowerLaw { a: 1.0, b: 0.0, m: 1.0 };
        let init = InitialData::scalar(Profile::custom(|x: f64| (1.0 - x * x).max(0.0)));
        let (sol, diag) =
            solve_with_diagnostics(&PdeKind::NonlinearDiffusion { law, k: 1 }, &init, &g, &BoundaryCondition::Periodic).unwrap();
        assert!(diag.near_degenerate);
        // no diffusion where f vanishes: the support edge far outside stays exactly zero
        assert_eq!(sol.get(0, 199, 0), 0.0);
    }

    #[test]
    fn negative_diffusivity_is_an_error() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 11, 1e-4, 5, 0.0).unwrap();
        let law = DiffusivityLaw::PowerLaw { a: 1.0, b: 0.0, m: 1.0 };
        let init = InitialData::scalar(Profile::Constant(-0.5));
        assert!(matches!(
            solve(&PdeKind::NonlinearDiffusion { law, k: 1 }, &init, &g, &BoundaryCondition::Periodic),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn degenerate_iteration_case_has_round_off_residuals() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 21, 0.05, 10, 0.0).unwrap();
        let init = InitialData::pair(Profile::custom(|x| (3.0 * x).sin()), Profile::custom(|x| x * x));
        let kind = PdeKind::TwoSpeed { v: 0.0, a: 0.0 };
        let sol = solve(&kind, &init, &g, &BoundaryCondition::Periodic).unwrap();
        let rep = iterate_system_check(&kind, &sol).unwrap();
        assert!(rep.printed_form < 1e-12 && rep.derived_form < 1e-12);
        assert!(residual_sup(&kind, &sol).unwrap() < 1e-12);
    }

    #[test]
    fn maxwell_source_free_transport() {
        let dx = 0.02;
        let g = gaussian_grid(dx, 6.0, dx, 101);
        let init = InitialData::pair(
            Profile::Gaussian { center: 0.0, width: 0.5, mass: 1.0 },
            Profile::Gaussian { center: 0.0, width: 0.5, mass: 1.0 },
        );
        let suite = solve_maxwell_suite(1.0, &MaxwellSource::zero(), &init, &g, &BoundaryCondition::Periodic).unwrap();
        // A = Phi initially: pure right mover
        for i in 0..g.nx() - 100 {
            assert!((suite.a.get(0, 100, i + 100) - suite.a.get(0, 0, i)).abs() < 1e-14);
        }
        assert_eq!(suite.diagnostics.continuity, 0.0);
        assert!(suite.diagnostics.wave_a < 1e-2 && suite.diagnostics.lorentz < 1e-2);
    }

    #[test]
    fn traveling_sine_source_derivatives_are_consistent() {
        let s = MaxwellSource::traveling_sine(1.0, 1.0, 1.0);
        let h = 1e-6;
        let (x, t) = (0.4, 0.9);
        assert!(((s.value(x + h, t) - s.value(x - h, t)) / (2.0 * h) - s.d_dx(x, t)).abs() < 1e-8);
        assert!(((s.value(x, t + h) - s.value(x, t - h)) / (2.0 * h) - s.d_dt(x, t)).abs() < 1e-8);
        let p = MaxwellSource::gaussian_pulse(1.0, 0.3, 0.5, 2.0);
        assert!(((p.value(x + h, t) - p.value(x - h, t)) / (2.0 * h) - p.d_dx(x, t)).abs() < 1e-8);
        assert!(((p.value(x, t + h) - p.value(x, t - h)) / (2.0 * h) - p.d_dt(x, t)).abs() < 1e-8);
    }

    #[test]
    fn power_law_domain_is_enforced() {
        let law = DiffusivityLaw::PowerLaw { a: 1.0, b: 0.0, m: 0.5 };
        assert!(law.eval(-1.0).is_err());
        assert!((law.eval(4.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((law.derivative(4.0).unwrap() - 0.25).abs() < 1e-15);
        let int = DiffusivityLaw::PowerLaw { a: 2.0, b: 0.0, m: 3.0 };
        assert_eq!(int.eval(-1.0).unwrap(), -2.0);
    }
}
