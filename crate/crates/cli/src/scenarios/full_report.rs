//! Consolidated study of the diffusion family on fixed grids: walkers
//! against the explicit diffusion solver, the heat algebra and its action
//! on solutions, the erf similarity solution and its hodograph.

use std::io::Write;

use rayon::prelude::*;
use walklab::grid::fitted_order;
use walklab::similarity::{assemble_pde_solution, integrate_reduced_ode, omega_mesh_for, preset};
use walklab::solvers::{residual_sup, solve, InitialData, PdeKind, Profile};
use walklab::stochastic::{density_residual_vs_pde, simulate_walkers, WalkerEnsemble};
use walklab::symmetry::{heat_algebra, invariance_residual, verify_algebra, EXACT_RATIO};
use walklab::transform::{build_psi, verify_dual_equation, FluxWeight};
use walklab::{BoundaryCondition, FieldHistory, SpaceTimeGrid};

use super::{fmt_list, stratified_positions, Ctx};
use crate::config::ExperimentConfig;
use crate::manifest::Relation;
use crate::CliError;

const MC_TOLERANCE: f64 = 5e-2;
const MIN_ORDER: f64 = 1.7;

pub struct FullReportPlan {
    walkers: usize,
    seeds: Vec<u64>,
    epsilons: Vec<f64>,
    ode_points: usize,
}

pub fn plan(cfg: &ExperimentConfig) -> Result<FullReportPlan, CliError> {
    let base: u64 = cfg.get("seed", Some(1))?;
    let n = cfg.count("seeds", Some(3), 1)?;
    let epsilons = cfg.list("epsilons", &[0.1, 0.2])?;
    if epsilons.contains(&0.0) || epsilons.len() < 2 {
        return Err(cfg.error("epsilons", "need at least two non-zero values"));
    }
    Ok(FullReportPlan {
        walkers: cfg.count("walkers", Some(100_000), 1)?,
        seeds: (0..n as u64).map(|k| base + k).collect(),
        epsilons,
        ode_points: cfg.count("ode_points", Some(4001), 2)?,
    })
}

impl FullReportPlan {
    pub fn execute(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        self.walkers_vs_diffusion(ctx)?;
        self.heat_symmetries(ctx)?;
        self.similarity(ctx)?;
        self.hodograph(ctx)
    }

    /// Unit steps with flip probability 1/2 have `D = dx²/(2 dt)`.
    fn walkers_vs_diffusion(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        let (dx, dt, steps) = (0.05, 0.05, 200usize);
        let walk = SpaceTimeGrid::new(-6.0, 6.0, 241, dt, steps + 1, 0.0)?;
        let d = dx * dx / (2.0 * dt);
        let pde_grid = SpaceTimeGrid::new(-6.0, 6.0, 241, dt / 4.0, 4 * steps + 1, 0.0)?;
        let p0 = Profile::Gaussian { center: 0.0, width: 0.5, mass: 1.0 };
        let positions = stratified_positions(&walk, &p0.sample(&walk)?, self.walkers);
        let mut start = FieldHistory::real(walk.with_nt(2)?, 1)?;
        for x in &positions {
            let i = ((x - walk.x_min()) / dx).round() as usize;
            let v = start.get(0, 0, i) + 1.0 / (self.walkers as f64 * dx);
            start.set(0, 0, i, v);
        }
        let pde = solve(&PdeKind::Diffusion { d }, &InitialData::from_level(&start, 0), &pde_grid, &BoundaryCondition::Periodic)?;
        let directions: Vec<i8> = (0..self.walkers).map(|k| if k % 2 == 0 { 1 } else { -1 }).collect();
        let errs: Vec<f64> = self
            .seeds
            .par_iter()
            .map(|&s| {
                let ens = WalkerEnsemble::new(positions.clone(), directions.clone(), dx / dt, 0.5 / dt, s)?;
                density_residual_vs_pde(&simulate_walkers(&ens, &walk, &[steps])?, &pde)
            })
            .collect::<walklab::Result<_>>()?;
        for (s, e) in self.seeds.iter().zip(&errs) {
            ctx.check(
                format!("walkers_vs_diffusion_l1_seed_{s}"),
                *e,
                Relation::AtMost,
                MC_TOLERANCE,
                format!("{} walkers, t = {}", self.walkers, walk.t_end()),
            );
        }
        ctx.norm("walkers_vs_diffusion_l1_mean", errs.iter().sum::<f64>() / errs.len() as f64);
        ctx.csv("walkers_vs_diffusion.csv", |buf| {
            writeln!(buf, "seed,l1")?;
            for (s, e) in self.seeds.iter().zip(&errs) {
                writeln!(buf, "{s},{e}")?;
            }
            Ok(())
        })
    }

    fn heat_symmetries(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        let table = heat_algebra();
        let report = verify_algebra(&table);
        ctx.check("heat_bracket_pairs", report.pairs_passed as f64, Relation::Equal, report.pairs.len() as f64, "exact commutators");
        ctx.check("heat_jacobi_failures", report.jacobi_failures.len() as f64, Relation::Equal, 0.0, "");

        let dx = 0.05;
        let dt = 0.2 * dx * dx;
        let grid = SpaceTimeGrid::new(-8.0, 8.0, 321, dt, (1.0 / dt).round() as usize + 1, 1.0)?;
        let init = InitialData::scalar(Profile::Gaussian { center: 0.0, width: 2f64.sqrt(), mass: 1.0 });
        let kind = PdeKind::Diffusion { d: 1.0 };
        let sol = solve(&kind, &init, &grid, &BoundaryCondition::Periodic)?;
        let fits = table
            .generators
            .par_iter()
            .map(|g| invariance_residual(&kind, &sol, g, &self.epsilons))
            .collect::<walklab::Result<Vec<_>>>()?;
        for (g, fit) in table.generators.iter().zip(&fits) {
            ctx.check(
                format!("heat_solution_map_{}", g.label),
                fit.max_ratio,
                Relation::AtMost,
                EXACT_RATIO,
                format!("residual ratio after exp(eps {}) for eps {}", g.label, fmt_list(&self.epsilons)),
            );
        }
        ctx.json("heat_algebra.json", &report)?;
        ctx.json("heat_invariance.json", &fits)
    }

    fn similarity(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        let erf = preset("erf")?;
        let results = [0.04f64, 0.02, 0.01]
            .par_iter()
            .map(|&dx| {
                let grid = SpaceTimeGrid::new(-4.0, 4.0, (8.0 / dx).round() as usize + 1, dx, 21, 1.0)?;
                let mesh = omega_mesh_for(&erf.problem, &grid, self.ode_points)?;
                let ode = integrate_reduced_ode(&erf.problem, erf.boundary, &mesh)?;
                let field = assemble_pde_solution(&erf.problem, &ode, &grid)?;
                Ok((dx, residual_sup(&PdeKind::Diffusion { d: 1.0 }, &field)?, ode))
            })
            .collect::<walklab::Result<Vec<_>>>()?;
        let hs: Vec<f64> = results.iter().map(|r| r.0).collect();
        let errs: Vec<f64> = results.iter().map(|r| r.1).collect();
        let p = fitted_order(&hs, &errs);
        ctx.order("erf_similarity_residual", p);
        ctx.check("erf_similarity_order", p, Relation::AtLeast, MIN_ORDER, format!("residuals {}", fmt_list(&errs)));
        ctx.csv("erf_profile.csv", |buf| results[0].2.write_csv(buf))
    }

    fn hodograph(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        let hs = [0.02f64, 0.01, 0.005];
        let errs = hs
            .par_iter()
            .map(|&h| {
                let grid = SpaceTimeGrid::new(-3.0, 3.0, (6.0 / (0.25 * h)).round() as usize + 1, h, 5, 1.0)?;
                let f = FieldHistory::from_fn(grid, 1, |_, x, t| libm::erf(x / (2.0 * t.sqrt())))?;
                let np = (1.2 / h).round() as usize + 1;
                let slices = build_psi(&f, &[0, 1, 2, 3, 4], (-0.6, 0.6), np, &FluxWeight::Unit)?;
                verify_dual_equation(&slices, &FluxWeight::Unit)
            })
            .collect::<walklab::Result<Vec<f64>>>()?;
        let p = fitted_order(&hs, &errs);
        ctx.order("erf_hodograph_residual", p);
        ctx.check("erf_hodograph_order", p, Relation::AtLeast, MIN_ORDER, format!("residuals {}", fmt_list(&errs)));
        Ok(())
    }
}
