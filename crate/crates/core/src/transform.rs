//! Flux (hodograph) reparametrization of diffusion solutions.
//!
//! On a time slice where `P` is strictly increasing in `x`, the gradient
//! `ψ = ∂P/∂x` can be read as a function of `(P, t)`. For `P_t = P_xx` it
//! then satisfies `ψ_t = ψ² ψ_PP`, and for `P_t = (f(P) P_x)_x` the flux
//! `ψ = f(P) P_x` satisfies `f(P) ψ_t = ψ² ψ_PP`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::FieldHistory;
use crate::interp::HermiteCurve;
use crate::solvers::DiffusivityLaw;

/// One time slice tabulated against a uniform `P`-mesh.
#[derive(Debug, Clone)]
pub struct HodographSlice {
    pub time_index: usize,
    pub t: f64,
    /// Uniform mesh in `P`.
    pub p: Vec<f64>,
    /// `x(P)` on the mesh.
    pub x: Vec<f64>,
    /// `ψ(P, t)` on the mesh.
    pub psi: Vec<f64>,
    x_of_p: HermiteCurve,
    p_of_x: HermiteCurve,
}

impl HodographSlice {
    /// `x(P)` by the monotone interpolant.
    pub fn x_at(&self, p: f64) -> Result<f64> {
        Ok(self.x_of_p.eval(p)?.0)
    }

    /// `P(x)` on the original samples.
    pub fn p_at(&self, x: f64) -> Result<f64> {
        Ok(self.p_of_x.eval(x)?.0)
    }

    /// CSV with columns `P,x,psi`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "P,x,psi")?;
        for k in 0..self.p.len() {
            writeln!(w, "{},{},{}", self.p[k], self.x[k], self.psi[k])?;
        }
        Ok(())
    }
}

/// How `ψ` is formed from the gradient.
#[derive(Debug, Clone)]
pub enum FluxWeight {
    /// `ψ = P_x`.
    Unit,
    /// `ψ = f(P) P_x`.
    Law(DiffusivityLaw),
}

/// Fourth-order centred first derivative, second order at the two nodes
/// nearest each edge.
fn gradient(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    let mut d = vec![0.0; n];
    for i in 0..n {
        d[i] = if i >= 2 && i + 2 < n {
            (u[i - 2] - 8.0 * u[i - 1] + 8.0 * u[i + 1] - u[i + 2]) / (12.0 * h)
        } else if i >= 1 && i + 1 < n {
            (u[i + 1] - u[i - 1]) / (2.0 * h)
        } else if i == 0 {
            (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
        } else {
            (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h)
        };
    }
    d
}

/// Largest `[P_lo, P_hi]` covered by the trimmed interior of every
/// requested slice, shrunk by `margin` (a fraction of its width).
pub fn common_p_range(sol: &FieldHistory, time_indices: &[usize], margin: f64) -> Result<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for &n in time_indices {
        if n >= sol.grid().nt() {
            return Err(Error::Dimension(format!("time index {n} out of range")));
        }
        let row = sol.slice(0, n);
        let inner = &row[2..row.len() - 2];
        lo = lo.max(inner.iter().cloned().fold(f64::INFINITY, f64::min));
        hi = hi.min(inner.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Reparametrization {
            slice: time_indices.first().copied().unwrap_or(0),
            detail: "slices share no P range".into(),
        });
    }
    let w = hi - lo;
    Ok((lo + margin * w, hi - margin * w))
}

/// Build `ψ(P, t)` on the slices `time_indices`, tabulated on `n_p` uniform
/// points spanning `p_range`.
pub fn build_psi(
    sol: &FieldHistory,
    time_indices: &[usize],
    p_range: (f64, f64),
    n_p: usize,
    weight: &FluxWeight,
) -> Result<Vec<HodographSlice>> {
    if sol.components() != 1 || sol.is_complex() {
        return Err(Error::Dimension("hodograph needs a real scalar field".into()));
    }
    if n_p < 3 || p_range.1.partial_cmp(&p_range.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Parameter("P mesh needs at least 3 points and p_hi > p_lo".into()));
    }
    let mesh: Vec<f64> = (0..n_p).map(|k| p_range.0 + (p_range.1 - p_range.0) * k as f64 / (n_p - 1) as f64).collect();
    time_indices.par_iter().map(|&n| build_slice(sol, n, &mesh, weight)).collect()
}

fn build_slice(sol: &FieldHistory, n: usize, mesh: &[f64], weight: &FluxWeight) -> Result<HodographSlice> {
    let g = sol.grid();
    if n >= g.nt() {
        return Err(Error::Dimension(format!("time index {n} out of range")));
    }
    let rejected = |detail: String| Error::Reparametrization { slice: n, detail };
    let p = sol.slice(0, n);
    let xs = g.xs();
    let px = gradient(p, g.dx());
    if let Some(i) = (0..p.len() - 1).find(|&i| p[i + 1] <= p[i]) {
        return Err(rejected(format!("P is not strictly increasing between x = {} and x = {}", xs[i], xs[i + 1])));
    }
    let psi_nodes: Vec<f64> = match weight {
        FluxWeight::Unit => px.clone(),
        FluxWeight::Law(law) => p.iter().zip(&px).map(|(pi, d)| law.eval(*pi).map(|f| f * d)).collect::<Result<_>>()?,
    };
    if let Some(i) = psi_nodes.iter().position(|v| *v <= 0.0) {
        return Err(rejected(format!("psi = {} <= 0 at x = {}", psi_nodes[i], xs[i])));
    }
    // trim two nodes per side where the gradient is lower order
    let keep = 2..p.len() - 2;
    let pk = p[keep.clone()].to_vec();
    let xk = xs[keep.clone()].to_vec();
    let psik = psi_nodes[keep.clone()].to_vec();
    // dψ/dP = ψ_x / P_x
    let psi_x = gradient(&psi_nodes, g.dx());
    let dpsi_dp: Vec<f64> = keep.clone().map(|i| psi_x[i] / px[i]).collect();
    let dx_dp: Vec<f64> = keep.clone().map(|i| 1.0 / px[i]).collect();
    let x_of_p = HermiteCurve::monotone(pk.clone(), xk.clone(), dx_dp)?;
    let psi_of_p = HermiteCurve::new(pk.clone(), psik, dpsi_dp)?;
    let p_of_x = HermiteCurve::monotone(xk, pk, keep.map(|i| px[i]).collect())?;
    let (lo, hi) = x_of_p.range();
    if mesh[0] < lo || mesh[mesh.len() - 1] > hi {
        return Err(rejected(format!("P mesh [{}, {}] exceeds the slice range [{lo}, {hi}]", mesh[0], mesh[mesh.len() - 1])));
    }
    let mut x = Vec::with_capacity(mesh.len());
    let mut psi = Vec::with_capacity(mesh.len());
    for &pm in mesh {
        x.push(x_of_p.eval(pm)?.0);
        psi.push(psi_of_p.eval(pm)?.0);
    }
    Ok(HodographSlice { time_index: n, t: g.t(n), p: mesh.to_vec(), x, psi, x_of_p, p_of_x })
}

/// Interior sup of `w(P) ψ_t − ψ² ψ_PP` over consecutive slices on a
/// common mesh, with `w = 1` or `w = f(P)`, centred in `t` and `P`.
pub fn verify_dual_equation(slices: &[HodographSlice], weight: &FluxWeight) -> Result<f64> {
    if slices.len() < 3 {
        return Err(Error::Dimension(format!("need at least 3 slices, got {}", slices.len())));
    }
    let mesh = &slices[0].p;
    if slices.iter().any(|s| s.p != *mesh) {
        return Err(Error::Dimension("slices are tabulated on different P meshes".into()));
    }
    let dts: Vec<f64> = slices.windows(2).map(|w| w[1].t - w[0].t).collect();
    if dts.iter().any(|d| (d - dts[0]).abs() > 1e-9 * dts[0].abs() || *d <= 0.0) {
        return Err(Error::Dimension("slices must be consecutive with a uniform positive time step".into()));
    }
    let dt = dts[0];
    let dp = mesh[1] - mesh[0];
    let mut sup: f64 = 0.0;
    for k in 1..slices.len() - 1 {
        let (prev, cur, next) = (&slices[k - 1].psi, &slices[k].psi, &slices[k + 1].psi);
        for j in 1..mesh.len() - 1 {
            let w = match weight {
                FluxWeight::Unit => 1.0,
                FluxWeight::Law(law) => law.eval(mesh[j])?,
            };
            let psi_t = (next[j] - prev[j]) / (2.0 * dt);
            let psi_pp = (cur[j + 1] - 2.0 * cur[j] + cur[j - 1]) / (dp * dp);
            sup = sup.max((w * psi_t - cur[j] * cur[j] * psi_pp).abs());
        }
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeGrid;

    #[test]
    fn unit_gradient_gives_unit_psi() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 41, 0.1, 3, 0.0).unwrap();
        let f = FieldHistory::from_fn(g, 1, |_, x, _| x).unwrap();
        let slices = build_psi(&f, &[0, 1, 2], (-0.8, 0.8), 17, &FluxWeight::Unit).unwrap();
        for s in &slices {
            assert!(s.psi.iter().all(|v| (v - 1.0).abs() < 1e-12));
            for (p, x) in s.p.iter().zip(&s.x) {
                assert!((p - x).abs() < 1e-12);
            }
        }
        assert!(verify_dual_equation(&slices, &FluxWeight::Unit).unwrap() < 1e-10);
    }

    #[test]
    fn non_monotone_slice_is_rejected() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 41, 0.1, 3, 0.0).unwrap();
        let f = FieldHistory::from_fn(g, 1, |_, x, t| if t > 0.15 { -x } else { x }).unwrap();
        let err = build_psi(&f, &[0, 2], (-0.5, 0.5), 11, &FluxWeight::Unit).unwrap_err();
        assert!(matches!(err, Error::Reparametrization { slice: 2, .. }), "{err:?}");
    }

    #[test]
    fn mesh_mismatch_is_a_dimension_error() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 41, 0.1, 3, 0.0).unwrap();
        let f = FieldHistory::from_fn(g, 1, |_, x, _| x).unwrap();
        let mut a = build_psi(&f, &[0, 1], (-0.5, 0.5), 11, &FluxWeight::Unit).unwrap();
        a.extend(build_psi(&f, &[2], (-0.4, 0.5), 11, &FluxWeight::Unit).unwrap());
        assert!(matches!(verify_dual_equation(&a, &FluxWeight::Unit), Err(Error::Dimension(_))));
    }

    #[test]
    fn round_trip_through_reparametrization() {
        let g = SpaceTimeGrid::new(-2.0, 2.0, 401, 0.1, 2, 1.0).unwrap();
        let f = FieldHistory::from_fn(g, 1, |_, x, _| x.tanh() + 0.1 * x).unwrap();
        let s = &build_psi(&f, &[0], (-1.0, 1.0), 21, &FluxWeight::Unit).unwrap()[0];
        for k in 0..=100 {
            let x = -1.5 + 0.03 * k as f64;
            let back = s.x_at(s.p_at(x).unwrap()).unwrap();
            assert!((back - x).abs() < 1e-8, "{x} -> {back}");
        }
    }

    fn erf_heat(nx: usize, nt: usize, dt: f64) -> FieldHistory {
        let g = SpaceTimeGrid::new(-3.0, 3.0, nx, dt, nt, 1.0).unwrap();
        FieldHistory::from_fn(g, 1, |_, x, t| libm::erf(x / (2.0 * t.sqrt()))).unwrap()
    }

    #[test]
    fn erf_slice_matches_gaussian_gradient() {
        let f = erf_heat(601, 3, 0.01);
        let s = &build_psi(&f, &[1], (-0.8, 0.8), 41, &FluxWeight::Unit).unwrap()[0];
        for k in 0..s.p.len() {
            let exact = (-s.x[k] * s.x[k] / (4.0 * s.t)).exp() / (std::f64::consts::PI * s.t).sqrt();
            assert!((s.psi[k] - exact).abs() < 1e-4, "{} vs {exact}", s.psi[k]);
        }
    }

    #[test]
    fn dual_residual_shrinks_under_refinement() {
        let mut errs = Vec::new();
        let hs = [0.02f64, 0.01, 0.005];
        for h in hs {
            let nx = (6.0 / (h * 0.25)).round() as usize + 1;
            let f = erf_heat(nx, 5, h);
            let slices = build_psi(&f, &[0, 1, 2, 3, 4], (-0.6, 0.6), (1.2 / h).round() as usize + 1, &FluxWeight::Unit).unwrap();
            errs.push(verify_dual_equation(&slices, &FluxWeight::Unit).unwrap());
        }
        let p = crate::grid::fitted_order(&hs, &errs);
        assert!(p > 1.7, "order {p} from {errs:?}");
    }

    #[test]
    fn advected_profile_is_not_a_dual_solution() {
        let g = SpaceTimeGrid::new(-3.0, 3.0, 1201, 0.01, 5, 0.0).unwrap();
        let f = FieldHistory::from_fn(g, 1, |_, x, t| libm::erf((x - 0.5 * t) / 1.5)).unwrap();
        let slices = build_psi(&f, &[0, 1, 2, 3, 4], (-0.6, 0.6), 61, &FluxWeight::Unit).unwrap();
        assert!(verify_dual_equation(&slices, &FluxWeight::Unit).unwrap() > 1e-2);
    }
}
