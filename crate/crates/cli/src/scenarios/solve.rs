//! Direct solves, optionally repeated on refined grids.

use rayon::prelude::*;
use walklab::solvers::{
    iterate_system_check, residual_sup, solve_maxwell_suite, solve_with_diagnostics, InitialData, MaxwellDiagnostics, PdeKind, Profile,
};
use walklab::{BoundaryCondition, FieldHistory, SpaceTimeGrid};

use super::{fmt_list, order_or_round_off, refine_grid, write_field, Ctx};
use crate::config::ExperimentConfig;
use crate::manifest::Relation;
use crate::CliError;

/// Relative mass drift allowed for conservative schemes on closed domains.
const MASS_DRIFT: f64 = 1e-10;
/// Relative drift of the discrete Dirac norm.
const NORM_DRIFT: f64 = 1e-6;
const MAX_LEVELS: usize = 6;

pub struct SolvePlan {
    kind: PdeKind,
    init: InitialData,
    grid: SpaceTimeGrid,
    bc: BoundaryCondition,
    levels: usize,
    min_order: f64,
    tolerance: Option<f64>,
}

pub fn plan(cfg: &ExperimentConfig) -> Result<SolvePlan, CliError> {
    let kind = cfg.equation()?;
    let grid = cfg.grid()?;
    let bc = cfg.boundary()?;
    let init = initial_data(cfg, &kind)?;
    let levels = cfg.count("refine", Some(1), 1)?;
    if levels > MAX_LEVELS {
        return Err(cfg.error("refine", format!("at most {MAX_LEVELS} levels")));
    }
    let min_order = cfg.positive("min_order", Some(1.7))?;
    let tolerance = if cfg.has("tolerance") { Some(cfg.positive("tolerance", None)?) } else { None };
    Ok(SolvePlan { kind, init, grid, bc, levels, min_order, tolerance })
}

/// Initial data for `kind` from `initial`, `initial2`, the imaginary parts
/// and `velocity`; keys that `kind` does not use are rejected.
pub(crate) fn initial_data(cfg: &ExperimentConfig, kind: &PdeKind) -> Result<InitialData, CliError> {
    let mut values = vec![cfg.profile("initial", None)?];
    if kind.components() == 2 {
        values.push(cfg.profile("initial2", None)?);
    } else if cfg.has("initial2") {
        return Err(cfg.error("initial2", format!("{} has one component", kind.name())));
    }
    let imag = if matches!(kind, PdeKind::Dirac { .. }) {
        Some(vec![cfg.profile("initial_imag", Some("zero"))?, cfg.profile("initial2_imag", Some("zero"))?])
    } else {
        for key in ["initial_imag", "initial2_imag"] {
            if cfg.has(key) {
                return Err(cfg.error(key, format!("{} is real", kind.name())));
            }
        }
        None
    };
    let velocity = if cfg.has("velocity") {
        if !kind.is_second_order_in_time() {
            return Err(cfg.error("velocity", format!("{} is first order in time", kind.name())));
        }
        Some(vec![cfg.profile("velocity", None)?])
    } else {
        None
    };
    if values.iter().chain(velocity.iter().flatten()).any(|p| matches!(p, Profile::Delta { .. })) && kind.is_second_order_in_time() {
        return Err(cfg.error("initial", "a delta cannot start a second-order equation"));
    }
    Ok(InitialData { values, imag, velocity })
}

fn is_parabolic(kind: &PdeKind) -> bool {
    matches!(kind, PdeKind::Diffusion { .. } | PdeKind::NonlinearDiffusion { .. } | PdeKind::ConservativeDiffusion { .. })
}

/// Quantities measured on one grid.
struct Level {
    dx: f64,
    /// `(name, value, judged)`: judged metrics are required to converge.
    metrics: Vec<(&'static str, f64, bool)>,
    drift: Option<f64>,
    field: Option<FieldHistory>,
    maxwell: Option<(FieldHistory, FieldHistory)>,
}

impl SolvePlan {
    fn run_level(&self, k: usize) -> walklab::Result<Level> {
        let factor = if is_parabolic(&self.kind) { 4 } else { 2 };
        let grid = refine_grid(&self.grid, k as u32, factor)?;
        let keep = k == 0;
        if let PdeKind::MaxwellPotentials { c, source } = &self.kind {
            let suite = solve_maxwell_suite(*c, source, &self.init, &grid, &self.bc)?;
            let MaxwellDiagnostics { lorentz, wave_a, wave_phi, continuity } = suite.diagnostics;
            return Ok(Level {
                dx: grid.dx(),
                metrics: vec![
                    ("lorentz", lorentz, true),
                    ("continuity", continuity, true),
                    ("wave_a", wave_a, false),
                    ("wave_phi", wave_phi, false),
                ],
                drift: None,
                field: None,
                maxwell: keep.then_some((suite.a, suite.phi)),
            });
        }
        let (field, diag) = solve_with_diagnostics(&self.kind, &self.init, &grid, &self.bc)?;
        let metrics = match &self.kind {
            PdeKind::TwoSpeed { .. } => {
                let r = iterate_system_check(&self.kind, &field)?;
                vec![("iterated_telegrapher", r.printed_form, true), ("residual", residual_sup(&self.kind, &field)?, false)]
            }
            PdeKind::NonlinearDiracSystem { .. } => {
                let r = iterate_system_check(&self.kind, &field)?;
                vec![
                    ("iterated_telegrapher_derived", r.derived_form, true),
                    ("iterated_telegrapher_printed", r.printed_form, false),
                    ("residual", residual_sup(&self.kind, &field)?, false),
                ]
            }
            _ => vec![("residual", residual_sup(&self.kind, &field)?, true)],
        };
        Ok(Level { dx: grid.dx(), metrics, drift: diag.conservation_drift, field: keep.then_some(field), maxwell: None })
    }

    pub fn execute(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        let mut levels: Vec<Level> = (0..self.levels).into_par_iter().map(|k| self.run_level(k)).collect::<walklab::Result<_>>()?;
        let hs: Vec<f64> = levels.iter().map(|l| l.dx).collect();
        let names: Vec<(&'static str, bool)> = levels[0].metrics.iter().map(|(n, _, j)| (*n, *j)).collect();
        for (m, (name, judged)) in names.iter().enumerate() {
            let errs: Vec<f64> = levels.iter().map(|l| l.metrics[m].1).collect();
            for (k, e) in errs.iter().enumerate() {
                ctx.norm(format!("{name}_level_{k}"), *e);
            }
            if self.levels >= 2 {
                let (order, ok, floor) = order_or_round_off(&hs, &errs, self.min_order);
                ctx.order(*name, order);
                if *judged {
                    let detail = if floor {
                        format!("residuals {} at round-off", fmt_list(&errs))
                    } else {
                        format!("residuals {} over dx {}", fmt_list(&errs), fmt_list(&hs))
                    };
                    ctx.verdict(format!("{name}_order"), ok, order, Relation::AtLeast, self.min_order, detail);
                }
            }
            if let (Some(tol), true) = (self.tolerance, *judged) {
                let finest = *errs.last().expect("at least one level");
                ctx.check(format!("{name}_finest"), finest, Relation::AtMost, tol, format!("dx = {}", hs[hs.len() - 1]));
            }
        }
        let closed = matches!(self.bc, BoundaryCondition::Periodic);
        for (k, l) in levels.iter().enumerate() {
            if let Some(d) = l.drift {
                ctx.norm(format!("conservation_drift_level_{k}"), d);
            }
        }
        let worst = levels.iter().filter_map(|l| l.drift).fold(0.0f64, f64::max);
        match &self.kind {
            PdeKind::Diffusion { .. } | PdeKind::ConservativeDiffusion { .. } if closed => {
                ctx.check("mass_drift", worst, Relation::AtMost, MASS_DRIFT, "relative change of the total mass");
            }
            PdeKind::Dirac { .. } => {
                ctx.check("norm_drift", worst, Relation::AtMost, NORM_DRIFT, "relative change of the discrete norm");
            }
            _ => {}
        }
        let first = levels.swap_remove(0);
        if let Some(f) = first.field {
            ctx.csv("solution.csv", |buf| write_field(&f, buf))?;
        }
        if let Some((a, phi)) = first.maxwell {
            ctx.csv("potential_a.csv", |buf| write_field(&a, buf))?;
            ctx.csv("potential_phi.csv", |buf| write_field(&phi, buf))?;
        }
        Ok(())
    }
}
