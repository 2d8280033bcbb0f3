//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when an outcome differs from what is expected of it.
//!
//! Criterion 8 contains one case whose failure is predicted by analysis
//! (the hyperbolic rotation is not a symmetry of the nonlinear telegrapher
//! equation). It is reported as FAIL, and the target only accepts that
//! outcome if the failure has the predicted signature.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use walklab::grid::{fitted_order, grid_norm, l1_norm, DirichletValues, NormKind};
use walklab::similarity::{
    assemble_pde_solution, integrate_reduced_ode, omega_mesh_for, preset, BoundaryData, ReducedForm, SimilarityProblem, ODE_TOLERANCE,
};
use walklab::solvers::{
    dirac_norm, iterate_system_check, residual_sup, solve, solve_maxwell_suite, DiffusivityLaw, InitialData, MaxwellSource, PdeKind,
    Profile, TelegrapherForm,
};
use walklab::stochastic::{simulate_walkers, DirectionInit, WalkerEnsemble};
use walklab::symmetry::{
    builtin_algebra, closed_form, flow, heat_algebra, invariance_residual, invariance_residual_with, nonlinear_telegrapher_algebra,
    power_law_algebra, rat, verify_algebra, GroupElement, InvarianceFit, MapOrder, Rational, SymmetryGenerator, Verdict, BUILTIN_ALGEBRAS,
};
use walklab::transform::{build_psi, verify_dual_equation, FluxWeight};
use walklab::{BoundaryCondition, FieldHistory, SpaceTimeGrid};

struct Outcome {
    pass: bool,
    /// Whether the result is the one the analysis predicts.
    as_predicted: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, as_predicted: pass, detail }
}

type Check = Result<Outcome, walklab::Error>;

struct Criterion {
    id: u32,
    name: &'static str,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "walkers converge to the diffusion kernel", run: c01_diffusion_limit },
        Criterion { id: 2, name: "walkers match the telegrapher solution", run: c02_telegrapher_limit },
        Criterion { id: 3, name: "two-speed output satisfies the telegrapher equation", run: c03_iteration_identity },
        Criterion { id: 4, name: "Maxwell potentials: Lorentz and continuity", run: c04_maxwell },
        Criterion { id: 5, name: "commutator tables and Jacobi identity", run: c05_commutators },
        Criterion { id: 6, name: "group flows match closed forms", run: c06_flows },
        Criterion { id: 7, name: "heat group maps solutions to solutions", run: c07_solution_maps },
        Criterion { id: 8, name: "infinitesimal invariance, nonlinear equations", run: c08_invariance },
        Criterion { id: 9, name: "similarity reduction", run: c09_similarity },
        Criterion { id: 10, name: "power-law similarity solution vs direct solve", run: c10_power_law_form },
        Criterion { id: 11, name: "hodograph equation", run: c11_hodograph },
        Criterion { id: 12, name: "conservation", run: c12_conservation },
        Criterion { id: 13, name: "CLI determinism", run: c13_determinism },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let o = (c.run)().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && o.as_predicted { " (predicted)" } else { "" };
        println!("{status}{note} [{:02}] {} ({secs:.1} s): {}", c.id, c.name, o.detail);
        if !o.as_predicted {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criterion outcome(s) differ from expectation");
        std::process::exit(1);
    }
}

fn gaussian(x: f64, var: f64) -> f64 {
    (-(x * x) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Walker start positions on grid nodes whose histogram follows `density`
/// (stratified inverse-CDF placement, no randomness).
fn stratified_positions(grid: &SpaceTimeGrid, density: &[f64], n: usize) -> Vec<f64> {
    let total: f64 = density.iter().sum();
    let mut cdf = Vec::with_capacity(density.len());
    let mut acc = 0.0;
    for d in density {
        acc += d / total;
        cdf.push(acc);
    }
    (0..n)
        .map(|k| {
            let u = (k as f64 + 0.5) / n as f64;
            grid.x(cdf.partition_point(|c| *c < u).min(grid.nx() - 1))
        })
        .collect()
}

fn c01_diffusion_limit() -> Check {
    // step h = v dt, a dt = 1/2, D = h^2 / (2 dt); bins of width 2h
    let (h, steps, n_walkers) = (0.05, 400usize, 100_000usize);
    let dt = h;
    let a = 1.0 / (2.0 * dt);
    let d = h * h / (2.0 * dt);
    let grid = SpaceTimeGrid::new(-8.0, 8.0, 161, dt, steps + 1, 0.0)?;
    let t = grid.t(steps);
    let var = 2.0 * d * t;
    let exact: Vec<f64> = grid.xs().iter().map(|x| gaussian(*x, var)).collect();
    let mut errs = Vec::new();
    for seed in 1..=5u64 {
        let ens = WalkerEnsemble::point_source(n_walkers, 0.0, 1.0, a, seed, DirectionInit::Alternating)?;
        let est = simulate_walkers(&ens, &grid, &[steps])?;
        let diff: Vec<f64> = est.total(0).iter().zip(&exact).map(|(p, q)| p - q).collect();
        errs.push(l1_norm(&diff, grid.dx())?);
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    Ok(outcome(mean < 5e-2, format!("mean L1 {mean:.3e} over 5 seeds (tol 5e-2), D t / dx^2 = {:.0}", d * t / (grid.dx() * grid.dx()))))
}

fn c02_telegrapher_limit() -> Check {
    let (v, a, t_end, dx) = (1.0, 1.0, 2.0f64, 0.05f64);
    let dt = dx / v;
    let steps = (t_end / dt).round() as usize;
    let grid = SpaceTimeGrid::new(-6.0, 6.0, 241, dt, steps + 1, 0.0)?;
    let p0 = Profile::Gaussian { center: 0.0, width: 0.5, mass: 1.0 };
    let density = p0.sample(&grid)?;
    let positions = stratified_positions(&grid, &density, 100_000);
    let directions: Vec<i8> = (0..positions.len()).map(|k| if k % 2 == 0 { 1 } else { -1 }).collect();
    // start from the binned walker density so both sides share initial data
    let mut start = vec![0.0; grid.nx()];
    for x in &positions {
        start[((x - grid.x_min()) / dx).round() as usize] += 1.0 / (positions.len() as f64 * dx);
    }
    let ens = WalkerEnsemble::new(positions, directions, v, a, 7)?;
    let est = simulate_walkers(&ens, &grid, &[steps])?;
    let mut start_field = FieldHistory::real(grid, 1)?;
    start_field.slice_mut(0, 0).copy_from_slice(&start);
    let init = InitialData::from_level(&start_field, 0);
    let pde = solve(&PdeKind::Telegrapher { v, a }, &init, &grid, &BoundaryCondition::Periodic)?;
    let diff: Vec<f64> = est.total(0).iter().zip(pde.slice(0, steps)).map(|(p, q)| p - q).collect();
    let err = l1_norm(&diff, dx)?;
    Ok(outcome(err < 5e-2, format!("L1 {err:.3e} at t = {t_end} with 1e5 walkers (tol 5e-2)")))
}

fn c03_iteration_identity() -> Check {
    let kind = PdeKind::TwoSpeed { v: 1.0, a: 1.0 };
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for dx in [0.04f64, 0.02, 0.01] {
        let nt = (1.0 / dx) as usize + 1;
        let grid = SpaceTimeGrid::new(-6.0, 6.0, (12.0 / dx).round() as usize + 1, dx, nt, 0.0)?;
        let init = InitialData::pair(
            Profile::Gaussian { center: -0.5, width: 0.6, mass: 1.0 },
            Profile::Gaussian { center: 0.5, width: 0.8, mass: 0.5 },
        );
        let sol = solve(&kind, &init, &grid, &BoundaryCondition::Periodic)?;
        hs.push(dx);
        errs.push(iterate_system_check(&kind, &sol)?.printed_form);
    }
    let p = fitted_order(&hs, &errs);
    Ok(outcome(p >= 1.7, format!("residuals {} fitted order {p:.2} (need >= 1.7)", fmt_list(&errs))))
}

/// Converges at order >= 1.7, or is already at round-off on every level.
fn converges(hs: &[f64], errs: &[f64]) -> (bool, f64) {
    let p = fitted_order(hs, errs);
    (p >= 1.7 || errs.iter().all(|e| *e <= 1e-12), p)
}

fn c04_maxwell() -> Check {
    let source = MaxwellSource::gaussian_pulse(1.0, 0.0, 0.7, 2.0);
    let mut hs = Vec::new();
    let (mut lorentz, mut continuity, mut wave) = (Vec::new(), Vec::new(), Vec::new());
    for dx in [0.04f64, 0.02, 0.01] {
        // Courant number 1: characteristic transport is exact there
        let dt = dx;
        let grid = SpaceTimeGrid::new(-6.0, 6.0, (12.0 / dx).round() as usize + 1, dt, (1.0 / dt) as usize + 1, 0.0)?;
        let init = InitialData::pair(Profile::Gaussian { center: 0.0, width: 0.8, mass: 1.0 }, Profile::Zero);
        let suite = solve_maxwell_suite(1.0, &source, &init, &grid, &BoundaryCondition::Periodic)?;
        hs.push(dx);
        lorentz.push(suite.diagnostics.lorentz);
        continuity.push(suite.diagnostics.continuity);
        wave.push(suite.diagnostics.wave_a.max(suite.diagnostics.wave_phi));
    }
    let (ok_l, pl) = converges(&hs, &lorentz);
    let (ok_c, pc) = converges(&hs, &continuity);
    let pw = fitted_order(&hs, &wave);
    Ok(outcome(
        ok_l && ok_c,
        format!(
            "Lorentz {} order {pl:.2}; continuity {} order {pc:.2} (need >= 1.7 or round-off); wave equations {} order {pw:.2}",
            fmt_list(&lorentz),
            fmt_list(&continuity),
            fmt_list(&wave)
        ),
    ))
}

fn c05_commutators() -> Check {
    let start = Instant::now();
    let mut params: BTreeMap<String, Rational> = BTreeMap::new();
    params.insert("m".into(), rat(4, 3));
    params.insert("b".into(), rat(1, 2));
    params.insert("v".into(), rat(3, 2));
    params.insert("a".into(), rat(2, 5));
    let mut ok = true;
    let mut parts = Vec::new();
    for name in BUILTIN_ALGEBRAS {
        let table = builtin_algebra(name, &params)?;
        let rep = verify_algebra(&table);
        ok &= rep.all_pass && rep.jacobi_failures.is_empty();
        parts.push(format!("{name} {}/{} pairs, {} triples", rep.pairs_passed, rep.pairs.len(), rep.jacobi_triples));
    }
    // the damped-boost relation [v1, v4] = v2 - a v3
    let tel = builtin_algebra("telegrapher", &params)?;
    let c = walklab::symmetry::commutator(&tel.generators[0], &tel.generators[3])?;
    let want = tel.generators[1].add(&tel.generators[2].scale(&-rat(2, 5)));
    ok &= c.same_field(&want);
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    Ok(outcome(ok, format!("{}; [v1,v4] = v2 - a v3: {}; {secs:.3} s", parts.join("; "), c.same_field(&want))))
}

fn c06_flows() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let heat = heat_algebra();
    let (m, b) = (1.5, 0.5);
    let power = power_law_algebra(&rat(3, 2), &rat(1, 2))?;
    let mut worst: f64 = 0.0;
    let mut worst_group: f64 = 0.0;
    for _ in 0..100 {
        let pt = [rng.gen_range(-2.0..2.0), rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)];
        let eps = rng.gen_range(-0.5..0.5);
        for (k, g) in heat.generators.iter().enumerate() {
            let got = flow(&GroupElement::new(g.clone(), eps), pt)?;
            worst = worst.max(dist(got, closed_form::heat(k + 1, eps, pt)?));
        }
        for (k, g) in power.generators.iter().enumerate() {
            let got = flow(&GroupElement::new(g.clone(), eps), pt)?;
            worst = worst.max(dist(got, closed_form::power_law(k + 1, eps, m, b, pt)?));
        }
        let e2 = rng.gen_range(-0.5..0.5);
        for g in heat.generators.iter().chain(&power.generators) {
            let once = flow(&GroupElement::new(g.clone(), eps + e2), pt)?;
            let twice = flow(&GroupElement::new(g.clone(), e2), flow(&GroupElement::new(g.clone(), eps), pt)?)?;
            worst_group = worst_group.max(dist(once, twice));
        }
    }
    Ok(outcome(
        worst <= 1e-12 && worst_group <= 1e-10,
        format!("max closed-form deviation {worst:.2e} (tol 1e-12), group law {worst_group:.2e} (tol 1e-10), 100 points"),
    ))
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
}

fn c07_solution_maps() -> Check {
    let dx = 0.05;
    let dt = 0.2 * dx * dx;
    let grid = SpaceTimeGrid::new(-8.0, 8.0, 321, dt, (1.0 / dt).round() as usize + 1, 1.0)?;
    let init = InitialData::scalar(Profile::Gaussian { center: 0.0, width: 2f64.sqrt(), mass: 1.0 });
    let kind = PdeKind::Diffusion { d: 1.0 };
    let sol = solve(&kind, &init, &grid, &BoundaryCondition::Periodic)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for g in &heat_algebra().generators {
        let fit = invariance_residual(&kind, &sol, g, &[0.1, 0.2])?;
        ok &= fit.max_ratio <= 2.0;
        parts.push(format!("{} ratio {:.3}", g.label, fit.max_ratio));
    }
    Ok(outcome(ok, format!("{} (tol 2)", parts.join(", "))))
}

const EPSILONS: [f64; 3] = [0.02, 0.01, 0.005];

fn control() -> SymmetryGenerator {
    SymmetryGenerator::parse("t*d/dx", "t", "0", "0", &BTreeMap::new()).expect("static generator")
}

/// A generator passes if its first-order map keeps the residual at the
/// untransformed level (translations, whose first-order map is exact) or
/// the baseline-subtracted residual grows at order >= 1.8.
fn symmetry_ok(fit: &InvarianceFit) -> bool {
    fit.fitted_order >= 1.8 || fit.verdict == Verdict::Exact
}

fn describe(fit: &InvarianceFit) -> String {
    let label = fit.generator.split(':').next().unwrap_or("");
    format!("{label} p={:.2} ratio={:.2}", fit.fitted_order, fit.max_ratio)
}

fn c08_invariance() -> Check {
    // power-law diffusion with k = 2 on an accurate similarity solution
    let law = DiffusivityLaw::PowerLaw { a: 1.0, b: 0.5, m: 1.5 };
    let prob = SimilarityProblem::power_law(0.0, 2.0, 1.0, 2.0, law.clone(), 2, ReducedForm::Pointwise)?;
    let grid = SpaceTimeGrid::new(-3.0, 3.0, 601, 0.01, 51, 0.0)?;
    let mesh = omega_mesh_for(&prob, &grid, 6001)?;
    let ode = integrate_reduced_ode(&prob, BoundaryData { omega0: 0.0, s: 1.0, ds: -0.3 }, &mesh)?;
    let sol = assemble_pde_solution(&prob, &ode, &grid)?;
    let kind = PdeKind::NonlinearDiffusion { law, k: 2 };
    // full coefficient (P + b)^(k m)
    let table = power_law_algebra(&rat(3, 1), &rat(1, 2))?;
    let mut power_ok = true;
    let mut parts = Vec::new();
    for g in &table.generators {
        let fit = invariance_residual_with(&kind, &sol, g, &EPSILONS, MapOrder::FirstOrder)?;
        power_ok &= symmetry_ok(&fit);
        parts.push(describe(&fit));
    }
    let ctrl = invariance_residual_with(&kind, &sol, &control(), &EPSILONS, MapOrder::FirstOrder)?;
    let power_ctrl_ok = ctrl.fitted_order <= 1.2;
    parts.push(format!("control {}", describe(&ctrl)));
    let power_line = format!("power law [{}]", parts.join(", "));

    // nonlinear telegrapher, both the printed and the derived form
    let mut telegraph_translations_ok = true;
    let mut boost_orders = Vec::new();
    let mut telegraph_ctrl_ok = true;
    let mut tparts = Vec::new();
    for form in [TelegrapherForm::Printed, TelegrapherForm::Derived] {
        let kind = PdeKind::NonlinearTelegrapher { v: 1.0, a: 0.5, form };
        let dx = 0.01;
        let grid = SpaceTimeGrid::new(-4.0, 4.0, 801, 0.5 * dx, 201, 0.0)?;
        let init = InitialData::scalar(Profile::Gaussian { center: 0.0, width: 0.7, mass: 0.5 }).with_velocity(Profile::Zero);
        let sol = solve(&kind, &init, &grid, &BoundaryCondition::Periodic)?;
        let table = nonlinear_telegrapher_algebra(&rat(1, 1))?;
        let mut fits = Vec::new();
        for g in &table.generators {
            fits.push(invariance_residual_with(&kind, &sol, g, &EPSILONS, MapOrder::FirstOrder)?);
        }
        telegraph_translations_ok &= symmetry_ok(&fits[0]) && symmetry_ok(&fits[1]);
        boost_orders.push(fits[2].fitted_order);
        let ctrl = invariance_residual_with(&kind, &sol, &control(), &EPSILONS, MapOrder::FirstOrder)?;
        telegraph_ctrl_ok &= ctrl.fitted_order <= 1.2;
        tparts.push(format!("{form:?} [{}, control {}]", fits.iter().map(describe).collect::<Vec<_>>().join(", "), describe(&ctrl)));
    }
    let boost_ok = boost_orders.iter().all(|p| *p >= 1.8);
    let pass = power_ok && power_ctrl_ok && telegraph_translations_ok && telegraph_ctrl_ok && boost_ok;
    let detail = format!("{power_line}; telegrapher {}", tparts.join("; "));
    // predicted: everything holds except the rotation on the nonlinear
    // telegrapher, whose residual grows linearly in epsilon
    let predicted = power_ok && power_ctrl_ok && telegraph_translations_ok && telegraph_ctrl_ok && boost_orders.iter().all(|p| *p <= 1.2);
    if predicted {
        return Ok(Outcome {
            pass,
            as_predicted: true,
            detail: format!("{detail}; rotation v3 is not a symmetry of the nonlinear telegrapher equation"),
        });
    }
    Ok(Outcome { pass, as_predicted: false, detail })
}

fn c09_similarity() -> Check {
    // (a) linear reduced ODE reproduces erf
    let erf = preset("erf")?;
    let mesh: Vec<f64> = (0..=160).map(|k| -8.0 + 0.1 * k as f64).collect();
    let ode = integrate_reduced_ode(&erf.problem, erf.boundary, &mesh)?;
    let erf_err = ode.omega.iter().zip(&ode.s).map(|(w, s)| (s - libm::erf(w / 2.0)).abs()).fold(0.0, f64::max);

    // (b) assembled field solves the diffusion equation at the residual order
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for dx in [0.04f64, 0.02, 0.01] {
        let grid = SpaceTimeGrid::new(-4.0, 4.0, (8.0 / dx).round() as usize + 1, dx, 21, 1.0)?;
        let mesh = omega_mesh_for(&erf.problem, &grid, 4001)?;
        let ode = integrate_reduced_ode(&erf.problem, erf.boundary, &mesh)?;
        let field = assemble_pde_solution(&erf.problem, &ode, &grid)?;
        hs.push(dx);
        errs.push(residual_sup(&PdeKind::Diffusion { d: 1.0 }, &field)?);
    }
    let p = fitted_order(&hs, &errs);

    // (c) pointwise and flux reductions differ for f(s) = s
    let law = DiffusivityLaw::PowerLaw { a: 1.0, b: 0.0, m: 1.0 };
    let bd = BoundaryData { omega0: 0.0, s: 1.0, ds: -0.3 };
    let mesh: Vec<f64> = (0..=80).map(|k| -2.0 + 0.05 * k as f64).collect();
    let pw = integrate_reduced_ode(&SimilarityProblem::generic(0.0, 0.0, law.clone(), 1, ReducedForm::Pointwise)?, bd, &mesh)?;
    let fl = integrate_reduced_ode(&SimilarityProblem::generic(0.0, 0.0, law, 1, ReducedForm::Flux)?, bd, &mesh)?;
    let gap = pw.sup_distance(&fl)?;

    let pass = erf_err < 1e-8 && p >= 1.7 && gap > 10.0 * ODE_TOLERANCE;
    Ok(outcome(
        pass,
        format!(
            "erf deviation {erf_err:.2e} (tol 1e-8); residuals {} order {p:.2} (need >= 1.7); pointwise vs flux gap {gap:.2e} (need > {:.0e})",
            fmt_list(&errs),
            10.0 * ODE_TOLERANCE
        ),
    ))
}

fn c10_power_law_form() -> Check {
    let pre = preset("power-law-k2")?;
    let dx = 0.01;
    let (half, t_end) = (6.0f64, 0.2f64);
    let dt = 1.5e-5f64;
    let nt = (t_end / dt).round() as usize + 1;
    let grid = SpaceTimeGrid::new(-half, half, (2.0 * half / dx).round() as usize + 1, dt, nt, 0.0)?;
    let mesh = omega_mesh_for(&pre.problem, &grid, 8001)?;
    let ode = integrate_reduced_ode(&pre.problem, pre.boundary, &mesh)?;
    let exact = assemble_pde_solution(&pre.problem, &ode, &grid)?;
    let nx = grid.nx();
    let left: Vec<f64> = (0..nt).map(|n| exact.get(0, n, 0)).collect();
    let right: Vec<f64> = (0..nt).map(|n| exact.get(0, n, nx - 1)).collect();
    let bc = BoundaryCondition::Dirichlet(DirichletValues::Series { left, right });
    let kind = PdeKind::NonlinearDiffusion { law: pre.problem.law.clone(), k: 2 };
    let sol = solve(&kind, &InitialData::from_level(&exact, 0), &grid, &bc)?;
    let diff: Vec<f64> = sol.slice(0, nt - 1).iter().zip(exact.slice(0, nt - 1)).map(|(a, b)| a - b).collect();
    let l2 = grid_norm(&diff, NormKind::L2, dx)?;
    let moved: Vec<f64> = exact.slice(0, nt - 1).iter().zip(exact.slice(0, 0)).map(|(a, b)| a - b).collect();
    let change = grid_norm(&moved, NormKind::L2, dx)?;
    Ok(outcome(
        l2 < 5e-3,
        format!(
            "final-time L2 discrepancy {l2:.3e} at dx = {dx}, t = {t_end} (tol 5e-3); L2 change of the solution over the run {change:.3e}"
        ),
    ))
}

fn erf_heat(dx: f64, dt: f64, t0: f64, nt: usize, advect: bool) -> walklab::Result<FieldHistory> {
    let grid = SpaceTimeGrid::new(-3.0, 3.0, (6.0 / dx).round() as usize + 1, dt, nt, t0)?;
    FieldHistory::from_fn(grid, 1, |_, x, t| if advect { libm::erf((x - 0.5 * t) / 1.5) } else { libm::erf(x / (2.0 * t.sqrt())) })
}

fn c11_hodograph() -> Check {
    let hs = [0.02f64, 0.01, 0.005];
    let mut heat = Vec::new();
    let mut advected = Vec::new();
    for h in hs {
        let np = (1.2 / h).round() as usize + 1;
        let f = erf_heat(0.25 * h, h, 1.0, 5, false)?;
        let slices = build_psi(&f, &[0, 1, 2, 3, 4], (-0.6, 0.6), np, &FluxWeight::Unit)?;
        heat.push(verify_dual_equation(&slices, &FluxWeight::Unit)?);
        let g = erf_heat(0.25 * h, h, 0.0, 5, true)?;
        let slices = build_psi(&g, &[0, 1, 2, 3, 4], (-0.6, 0.6), np, &FluxWeight::Unit)?;
        advected.push(verify_dual_equation(&slices, &FluxWeight::Unit)?);
    }
    let p = fitted_order(&hs, &heat);
    let q = fitted_order(&hs, &advected);
    let control_stalls = q.abs() < 0.5 && advected.iter().all(|r| *r > 1e-2);
    Ok(outcome(
        p >= 1.7 && control_stalls,
        format!("erf residuals {} order {p:.2} (need >= 1.7); advected control {} order {q:.2}", fmt_list(&heat), fmt_list(&advected)),
    ))
}

fn c12_conservation() -> Check {
    let dx = 0.02;
    let dt = 0.2 * dx * dx / 1.7f64.powi(2);
    let grid = SpaceTimeGrid::new(-3.0, 3.0, 301, dt, 2001, 0.0)?;
    let law = DiffusivityLaw::PowerLaw { a: 1.0, b: 0.2, m: 2.0 };
    let init = InitialData::scalar(Profile::custom(|x| 0.3 + (-(x * x) * 2.0).exp()));
    let sol = solve(&PdeKind::ConservativeDiffusion { law }, &init, &grid, &BoundaryCondition::Periodic)?;
    let mass = |n: usize| sol.slice(0, n).iter().sum::<f64>() * dx;
    let drift = (1..grid.nt()).map(|n| (mass(n) - mass(n - 1)).abs()).fold(0.0, f64::max);

    let dx = 0.05;
    let grid = SpaceTimeGrid::new(-10.0, 10.0, 401, dx, 400, 0.0)?;
    let init = InitialData::pair(
        Profile::Gaussian { center: 0.0, width: 1.0, mass: 1.0 },
        Profile::Gaussian { center: 1.0, width: 0.5, mass: 0.5 },
    )
    .with_imag(vec![Profile::Zero, Profile::Gaussian { center: -1.0, width: 0.7, mass: 0.3 }]);
    let dirac = solve(&PdeKind::Dirac { m: 1.3, c: 1.0 }, &init, &grid, &BoundaryCondition::Periodic)?;
    let n0 = dirac_norm(&dirac, 0);
    let norm_drift = (0..grid.nt()).map(|n| ((dirac_norm(&dirac, n) - n0) / n0).abs()).fold(0.0, f64::max);
    Ok(outcome(
        drift < 1e-10 && norm_drift < 1e-6,
        format!("mass drift per step {drift:.2e} (tol 1e-10); Dirac relative norm drift {norm_drift:.2e} (tol 1e-6)"),
    ))
}

fn c13_determinism() -> Check {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("determinism.cfg");
    std::fs::write(
        &config,
        "scenario = simulate\nvariant = linear\nspeed = 1\nflip_rate = 1\nx_min = -4\nx_max = 4\nnx = 161\ndt = 0.05\nnt = 41\nwalkers = 20000\nseeds = 3\ninitial = gaussian 0 0.5 1\n",
    )?;
    let run = |out: &Path| -> walklab::Result<()> {
        let status = Command::new(env!("CARGO_BIN_EXE_walklab"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(["--jobs", "2"])
            .output()?;
        // exit 1 only reports failed accuracy checks; the artifacts are complete
        if !matches!(status.status.code(), Some(0 | 1)) {
            return Err(walklab::Error::Configuration(String::from_utf8_lossy(&status.stderr).into_owned()));
        }
        Ok(())
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a)?;
    run(&b)?;
    fn csvs(root: &Path, d: &Path, v: &mut Vec<(String, Vec<u8>)>) -> walklab::Result<()> {
        for e in std::fs::read_dir(d)? {
            let p = e?.path();
            if p.is_dir() {
                csvs(root, &p, v)?;
            } else if p.extension().is_some_and(|x| x == "csv") {
                v.push((p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&p)?));
            }
        }
        Ok(())
    }
    let collect = |d: &Path| -> walklab::Result<Vec<(String, Vec<u8>)>> {
        let mut v = Vec::new();
        csvs(d, d, &mut v)?;
        v.sort();
        Ok(v)
    };
    let (ca, cb) = (collect(&a)?, collect(&b)?);
    let same = !ca.is_empty() && ca == cb;
    Ok(outcome(same, format!("{} CSV file(s), byte-identical across two runs: {same}", ca.len())))
}

fn fmt_list(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", "))
}
