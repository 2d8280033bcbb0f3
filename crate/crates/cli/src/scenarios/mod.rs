//! Scenario planning and execution.
//!
//! Planning reads and validates the whole configuration before anything is
//! written, so a bad value never leaves artifacts behind. Execution records
//! checks, norms, fitted orders and artifacts in a [`Ctx`].

mod full_report;
mod hodograph;
mod similarity;
mod simulate;
mod solve;
mod symmetry;

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use walklab::grid::fitted_order;
use walklab::{FieldHistory, SpaceTimeGrid};

use crate::config::{ExperimentConfig, Scenario};
use crate::manifest::{finite, Artifact, Check, Relation, RunDir, TOOL, VERSION};
use crate::CliError;

/// Residuals at or below this are treated as round-off.
pub const ROUND_OFF: f64 = 1e-12;

/// Field CSVs are thinned in time beyond this many values.
const MAX_CSV_VALUES: usize = 2_000_000;

pub struct Ctx<'a> {
    run: &'a RunDir,
    config_hash: String,
    pub checks: Vec<Check>,
    pub norms: BTreeMap<String, Option<f64>>,
    pub orders: BTreeMap<String, Option<f64>>,
    pub artifacts: Vec<Artifact>,
}

impl<'a> Ctx<'a> {
    pub fn new(run: &'a RunDir, config_hash: &str) -> Self {
        Self {
            run,
            config_hash: config_hash.to_string(),
            checks: Vec::new(),
            norms: BTreeMap::new(),
            orders: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    /// Record `value relation threshold` as a check and return whether it holds.
    pub fn check(&mut self, name: impl Into<String>, value: f64, relation: Relation, threshold: f64, detail: impl Into<String>) -> bool {
        let pass = relation.holds(value, threshold);
        self.verdict(name, pass, value, relation, threshold, detail)
    }

    /// Record a check whose outcome is decided by the caller.
    pub fn verdict(
        &mut self,
        name: impl Into<String>,
        pass: bool,
        value: f64,
        relation: Relation,
        threshold: f64,
        detail: impl Into<String>,
    ) -> bool {
        self.checks.push(Check { name: name.into(), pass, value: finite(value), relation, threshold, detail: detail.into() });
        pass
    }

    pub fn norm(&mut self, name: impl Into<String>, v: f64) {
        self.norms.insert(name.into(), finite(v));
    }

    pub fn order(&mut self, name: impl Into<String>, v: f64) {
        self.orders.insert(name.into(), finite(v));
    }

    /// Write a CSV artifact. The first line records the tool version and
    /// the configuration hash.
    pub fn csv(&mut self, file: &str, body: impl FnOnce(&mut Vec<u8>) -> walklab::Result<()>) -> walklab::Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "# {TOOL} {VERSION} config-sha256 {}", self.config_hash)?;
        body(&mut buf)?;
        self.artifacts.push(self.run.write(file, &buf)?);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, file: &str, data: &T) -> walklab::Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'d, T> {
            tool: &'static str,
            version: &'static str,
            config_sha256: &'d str,
            data: &'d T,
        }
        let w = Wrapped { tool: TOOL, version: VERSION, config_sha256: &self.config_hash, data };
        let mut text = serde_json::to_string_pretty(&w).map_err(std::io::Error::other)?;
        text.push('\n');
        self.artifacts.push(self.run.write(file, text.as_bytes())?);
        Ok(())
    }
}

pub enum Plan {
    Simulate(simulate::SimulatePlan),
    Solve(solve::SolvePlan),
    SymmetryCheck(symmetry::SymmetryPlan),
    Similarity(similarity::SimilarityPlan),
    Hodograph(hodograph::HodographPlan),
    FullReport(full_report::FullReportPlan),
}

pub fn plan(cfg: &ExperimentConfig) -> Result<Plan, CliError> {
    Ok(match cfg.scenario {
        Scenario::Simulate => Plan::Simulate(simulate::plan(cfg)?),
        Scenario::Solve => Plan::Solve(solve::plan(cfg)?),
        Scenario::SymmetryCheck => Plan::SymmetryCheck(symmetry::plan(cfg)?),
        Scenario::Similarity => Plan::Similarity(similarity::plan(cfg)?),
        Scenario::Hodograph => Plan::Hodograph(hodograph::plan(cfg)?),
        Scenario::FullReport => Plan::FullReport(full_report::plan(cfg)?),
    })
}

impl Plan {
    pub fn execute(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        match self {
            Plan::Simulate(p) => p.execute(ctx),
            Plan::Solve(p) => p.execute(ctx),
            Plan::SymmetryCheck(p) => p.execute(ctx),
            Plan::Similarity(p) => p.execute(ctx),
            Plan::Hodograph(p) => p.execute(ctx),
            Plan::FullReport(p) => p.execute(ctx),
        }
    }
}

/// Grid refined `level` times: `dx` halves each time and `dt` is divided by
/// `time_factor`, keeping the spatial extent and the final time.
pub(crate) fn refine_grid(g: &SpaceTimeGrid, level: u32, time_factor: usize) -> walklab::Result<SpaceTimeGrid> {
    let s = 2usize.pow(level);
    let f = time_factor.pow(level);
    SpaceTimeGrid::new(g.x_min(), g.x_max(), (g.nx() - 1) * s + 1, g.dt() / f as f64, (g.nt() - 1) * f + 1, g.t0())
}

/// Fitted order of `errs` against `hs`, and whether it meets `min_order`
/// or every residual is already at round-off.
pub(crate) fn order_or_round_off(hs: &[f64], errs: &[f64], min_order: f64) -> (f64, bool, bool) {
    let order = fitted_order(hs, errs);
    let floor = errs.iter().all(|e| *e <= ROUND_OFF);
    (order, order >= min_order || floor, floor)
}

pub(crate) fn fmt_list(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "))
}

/// Field CSV in the `t,x,component,value` layout, keeping every `k`-th
/// time level (and the last) when the field is large.
pub(crate) fn write_field(field: &FieldHistory, w: &mut Vec<u8>) -> walklab::Result<()> {
    let g = field.grid();
    let per_level = g.nx() * field.components() * if field.is_complex() { 2 } else { 1 };
    let stride = (g.nt() * per_level).div_ceil(MAX_CSV_VALUES).max(1);
    writeln!(w, "t,x,component,value")?;
    let mut levels: Vec<usize> = (0..g.nt()).step_by(stride).collect();
    if levels.last() != Some(&(g.nt() - 1)) {
        levels.push(g.nt() - 1);
    }
    for n in levels {
        let t = g.t(n);
        for c in 0..field.components() {
            match field.imag_slice(c, n) {
                None => {
                    for (i, v) in field.slice(c, n).iter().enumerate() {
                        writeln!(w, "{},{},{},{}", t, g.x(i), c, v)?;
                    }
                }
                Some(im) => {
                    for (i, v) in field.slice(c, n).iter().enumerate() {
                        writeln!(w, "{},{},{}:re,{}", t, g.x(i), c, v)?;
                    }
                    for (i, v) in im.iter().enumerate() {
                        writeln!(w, "{},{},{}:im,{}", t, g.x(i), c, v)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Walker start positions on grid nodes whose histogram follows `density`
/// (stratified inverse-CDF placement, no randomness).
pub(crate) fn stratified_positions(grid: &SpaceTimeGrid, density: &[f64], n: usize) -> Vec<f64> {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refinement_keeps_extent_and_final_time() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 21, 0.01, 11, 0.5).unwrap();
        let r = refine_grid(&g, 2, 4).unwrap();
        assert_eq!((r.nx(), r.nt()), (81, 161));
        assert!((r.t_end() - g.t_end()).abs() < 1e-12);
        assert!((r.dx() - g.dx() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn large_fields_are_thinned_but_keep_the_last_level() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 1001, 0.1, 3001, 0.0).unwrap();
        let f = FieldHistory::real(g, 1).unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = text.lines().count() - 1;
        assert!(rows <= MAX_CSV_VALUES + 1001, "{rows}");
        assert!(text.lines().last().unwrap().starts_with("300,"));
    }

    #[test]
    fn stratified_positions_follow_the_density() {
        let g = SpaceTimeGrid::new(0.0, 3.0, 4, 1.0, 2, 0.0).unwrap();
        let pos = stratified_positions(&g, &[0.0, 1.0, 3.0, 0.0], 8);
        assert_eq!(pos, vec![1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
