//! Similarity solutions from the reduced ODE.

use walklab::grid::{grid_norm, DirichletValues, NormKind};
use walklab::similarity::{assemble_pde_solution, integrate_reduced_ode, omega_mesh_for, preset, Preset, ReducedForm, PRESET_NAMES};
use walklab::solvers::{residual_sup, solve, truncation_estimate, InitialData, PdeKind};
use walklab::{BoundaryCondition, SpaceTimeGrid};

use super::{write_field, Ctx};
use crate::config::ExperimentConfig;
use crate::manifest::Relation;
use crate::CliError;

pub struct SimilarityPlan {
    preset: Preset,
    grid: SpaceTimeGrid,
    ode_points: usize,
    compare_solve: bool,
    tolerance: f64,
    solve_tolerance: f64,
}

pub fn plan(cfg: &ExperimentConfig) -> Result<SimilarityPlan, CliError> {
    let name = cfg.choice("preset", &PRESET_NAMES, None)?;
    let preset = preset(name).map_err(|e| cfg.error("preset", e))?;
    if cfg.has("bc") {
        return Err(cfg.error("bc", "boundary values come from the similarity solution"));
    }
    let compare_solve = cfg.flag("compare_solve", false)?;
    if !compare_solve && cfg.has("solve_tolerance") {
        return Err(cfg.error("solve_tolerance", "only used with compare_solve = yes"));
    }
    Ok(SimilarityPlan {
        preset,
        grid: cfg.grid()?,
        ode_points: cfg.count("ode_points", Some(4001), 2)?,
        compare_solve,
        tolerance: cfg.positive("tolerance", Some(1e-3))?,
        solve_tolerance: cfg.positive("solve_tolerance", Some(5e-3))?,
    })
}

/// The PDE whose solutions the preset's reduced ODE describes.
pub(crate) fn governing_equation(p: &Preset) -> PdeKind {
    let law = p.problem.law.clone();
    match p.problem.form {
        ReducedForm::Pointwise => PdeKind::NonlinearDiffusion { law, k: p.problem.k },
        ReducedForm::Flux => PdeKind::ConservativeDiffusion { law },
    }
}

impl SimilarityPlan {
    pub fn execute(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        let prob = &self.preset.problem;
        let mesh = omega_mesh_for(prob, &self.grid, self.ode_points)?;
        let ode = integrate_reduced_ode(prob, self.preset.boundary, &mesh)?;
        let field = assemble_pde_solution(prob, &ode, &self.grid)?;
        let kind = governing_equation(&self.preset);
        let res = residual_sup(&kind, &field)?;
        ctx.norm("truncation_estimate", truncation_estimate(&kind, &field)?);
        ctx.check("assembled_residual", res, Relation::AtMost, self.tolerance, format!("{} on the {} grid", kind.name(), self.preset.name));
        ctx.csv("profile.csv", |buf| ode.write_csv(buf))?;
        ctx.csv("field.csv", |buf| write_field(&field, buf))?;

        if self.compare_solve {
            let (nx, nt) = (self.grid.nx(), self.grid.nt());
            let left = (0..nt).map(|n| field.get(0, n, 0)).collect();
            let right = (0..nt).map(|n| field.get(0, n, nx - 1)).collect();
            let bc = BoundaryCondition::Dirichlet(DirichletValues::Series { left, right });
            let sol = solve(&kind, &InitialData::from_level(&field, 0), &self.grid, &bc)?;
            let dx = self.grid.dx();
            let diff: Vec<f64> = sol.slice(0, nt - 1).iter().zip(field.slice(0, nt - 1)).map(|(a, b)| a - b).collect();
            let l2 = grid_norm(&diff, NormKind::L2, dx)?;
            let moved: Vec<f64> = field.slice(0, nt - 1).iter().zip(field.slice(0, 0)).map(|(a, b)| a - b).collect();
            ctx.norm("solution_change_l2", grid_norm(&moved, NormKind::L2, dx)?);
            ctx.check("direct_solve_l2", l2, Relation::AtMost, self.solve_tolerance, format!("final time t = {}", self.grid.t_end()));
            ctx.csv("direct_solve.csv", |buf| write_field(&sol, buf))?;
        }
        Ok(())
    }
}
