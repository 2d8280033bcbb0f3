//! Flux/hodograph reparametrization `ψ(P, t)` and its dual equation.

use rayon::prelude::*;
use walklab::solvers::{solve, DiffusivityLaw, InitialData, PdeKind, Profile};
use walklab::transform::{build_psi, common_p_range, verify_dual_equation, FluxWeight, HodographSlice};
use walklab::{BoundaryCondition, FieldHistory, SpaceTimeGrid};

use super::{fmt_list, order_or_round_off, refine_grid, Ctx};
use crate::config::{profile_value, ExperimentConfig};
use crate::manifest::Relation;
use crate::CliError;

const MAX_LEVELS: usize = 5;

enum Source {
    /// `erf(x / (2 sqrt t))`, an exact solution of `P_t = P_xx`.
    Erf,
    /// `initial(x − speed t)`: transported, not diffused.
    Advected { profile: Profile, speed: f64 },
    /// Direct solve of `P_t = (f(P) P_x)_x`.
    Conservative { law: DiffusivityLaw, init: InitialData, bc: BoundaryCondition },
}

pub struct HodographPlan {
    source: Source,
    grid: SpaceTimeGrid,
    slices: usize,
    slice_start: usize,
    p_range: Option<(f64, f64)>,
    p_points: usize,
    levels: usize,
    min_order: f64,
    tolerance: f64,
}

pub fn plan(cfg: &ExperimentConfig) -> Result<HodographPlan, CliError> {
    let grid = cfg.grid()?;
    let name = cfg.choice("source", &["erf", "advected", "conservative"], None)?;
    let only = |keys: &[&str], used_by: &str| -> Result<(), CliError> {
        match keys.iter().find(|k| cfg.has(k)) {
            Some(k) => Err(cfg.error(k, format!("only used by source = {used_by}"))),
            None => Ok(()),
        }
    };
    let source = match name {
        "erf" => {
            only(&["initial", "speed"], "advected")?;
            only(&["law", "bc"], "conservative")?;
            if grid.t0() <= 0.0 {
                return Err(cfg.error("t0", "the erf solution needs t0 > 0"));
            }
            Source::Erf
        }
        "advected" => {
            only(&["law", "bc"], "conservative")?;
            let profile = cfg.profile("initial", Some("erf 0 1.5"))?;
            if profile_value(&profile, 0.0).is_none() {
                return Err(cfg.error("initial", "a delta cannot be advected"));
            }
            Source::Advected { profile, speed: cfg.finite("speed", Some(0.5))? }
        }
        _ => {
            only(&["speed"], "advected")?;
            let law = cfg.law("law", None)?;
            let init = InitialData::scalar(cfg.profile("initial", None)?);
            Source::Conservative { law, init, bc: cfg.boundary()? }
        }
    };
    let slices = cfg.count("slices", Some(5), 3)?;
    let slice_start = cfg.count("slice_start", Some(0), 0)?;
    if slice_start + slices > grid.nt() {
        return Err(cfg.error("slices", format!("slices {slice_start}..{} exceed nt = {}", slice_start + slices, grid.nt())));
    }
    let p_range = match (cfg.has("p_min"), cfg.has("p_max")) {
        (false, false) => None,
        (true, true) => {
            let (lo, hi) = (cfg.finite("p_min", None)?, cfg.finite("p_max", None)?);
            if hi <= lo {
                return Err(cfg.error("p_max", "must exceed p_min"));
            }
            Some((lo, hi))
        }
        (true, false) => return Err(cfg.error("p_min", "give p_min and p_max together")),
        (false, true) => return Err(cfg.error("p_max", "give p_min and p_max together")),
    };
    let levels = cfg.count("refine", Some(1), 1)?;
    if levels > MAX_LEVELS {
        return Err(cfg.error("refine", format!("at most {MAX_LEVELS} levels")));
    }
    Ok(HodographPlan {
        source,
        grid,
        slices,
        slice_start,
        p_range,
        p_points: cfg.count("p_points", Some(201), 3)?,
        levels,
        min_order: cfg.positive("min_order", Some(1.7))?,
        tolerance: cfg.positive("tolerance", Some(1e-2))?,
    })
}

impl HodographPlan {
    /// Explicit diffusion solves need `dt ∝ dx²`; the closed-form sources
    /// refine `dt` with `dx`.
    fn time_factor(&self) -> usize {
        match self.source {
            Source::Conservative { .. } => 4,
            _ => 2,
        }
    }

    fn weight(&self) -> FluxWeight {
        match &self.source {
            Source::Conservative { law, .. } => FluxWeight::Law(law.clone()),
            _ => FluxWeight::Unit,
        }
    }

    fn field(&self, grid: &SpaceTimeGrid) -> walklab::Result<FieldHistory> {
        match &self.source {
            Source::Erf => FieldHistory::from_fn(*grid, 1, |_, x, t| libm::erf(x / (2.0 * t.sqrt()))),
            Source::Advected { profile, speed } => {
                FieldHistory::from_fn(*grid, 1, |_, x, t| profile_value(profile, x - speed * t).expect("validated profile"))
            }
            Source::Conservative { law, init, bc } => solve(&PdeKind::ConservativeDiffusion { law: law.clone() }, init, grid, bc),
        }
    }

    fn indices(&self, level: usize) -> Vec<usize> {
        let f = self.time_factor().pow(level as u32);
        (0..self.slices).map(|k| self.slice_start * f + k).collect()
    }

    fn run_level(&self, level: usize, p_range: (f64, f64)) -> walklab::Result<(f64, f64, Option<Vec<HodographSlice>>)> {
        let grid = refine_grid(&self.grid, level as u32, self.time_factor())?;
        let field = self.field(&grid)?;
        let weight = self.weight();
        let n_p = (self.p_points - 1) * 2usize.pow(level as u32) + 1;
        let slices = build_psi(&field, &self.indices(level), p_range, n_p, &weight)?;
        let res = verify_dual_equation(&slices, &weight)?;
        Ok((grid.dx(), res, (level == 0).then_some(slices)))
    }

    pub fn execute(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        let p_range = match self.p_range {
            Some(r) => r,
            None => common_p_range(&self.field(&self.grid)?, &self.indices(0), 0.05)?,
        };
        ctx.norm("p_min", p_range.0);
        ctx.norm("p_max", p_range.1);
        let mut results: Vec<(f64, f64, Option<Vec<HodographSlice>>)> =
            (0..self.levels).into_par_iter().map(|k| self.run_level(k, p_range)).collect::<walklab::Result<_>>()?;
        let hs: Vec<f64> = results.iter().map(|r| r.0).collect();
        let errs: Vec<f64> = results.iter().map(|r| r.1).collect();
        for (k, e) in errs.iter().enumerate() {
            ctx.norm(format!("dual_residual_level_{k}"), *e);
        }
        let finest = *errs.last().expect("at least one level");
        ctx.check("dual_residual", finest, Relation::AtMost, self.tolerance, format!("dx = {}", hs[hs.len() - 1]));
        if self.levels >= 2 {
            let (order, ok, _) = order_or_round_off(&hs, &errs, self.min_order);
            ctx.order("dual_residual", order);
            ctx.verdict("dual_residual_order", ok, order, Relation::AtLeast, self.min_order, format!("residuals {}", fmt_list(&errs)));
        }
        let slices = results.swap_remove(0).2.expect("level 0 keeps its slices");
        for s in &slices {
            ctx.csv(&format!("slice_{:05}.csv", s.time_index), |buf| s.write_csv(buf))?;
        }
        Ok(())
    }
}
