//! Exact commutator tables and, optionally, numerical invariance of a
//! solved equation under each generator.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use walklab::solvers::{solve, InitialData, PdeKind};
use walklab::symmetry::{
    builtin_algebra, invariance_residual_with, parse_algebra, parse_rational, verify_algebra, AlgebraTable, InvarianceFit, MapOrder,
    SymmetryGenerator, Verdict, BUILTIN_ALGEBRAS, EXACT_RATIO, NON_SYMMETRY_ORDER, SYMMETRY_ORDER,
};
use walklab::{BoundaryCondition, SpaceTimeGrid};

use super::Ctx;
use crate::config::ExperimentConfig;
use crate::manifest::Relation;
use crate::CliError;

const INVARIANCE_KEYS: [&str; 16] = [
    "d",
    "law",
    "k",
    "form",
    "initial",
    "velocity",
    "epsilons",
    "map_order",
    "control",
    "expect_nonsymmetric",
    "x_min",
    "x_max",
    "nx",
    "dt",
    "nt",
    "bc",
];
const CONTROL_LABEL: &str = "control";

struct Invariance {
    kind: PdeKind,
    init: InitialData,
    grid: SpaceTimeGrid,
    bc: BoundaryCondition,
    epsilons: Vec<f64>,
    order: MapOrder,
    control: bool,
    expect_nonsymmetric: BTreeSet<String>,
}

pub struct SymmetryPlan {
    table: AlgebraTable,
    invariance: Option<Invariance>,
}

pub fn plan(cfg: &ExperimentConfig) -> Result<SymmetryPlan, CliError> {
    let table = match (cfg.raw("algebra"), cfg.raw("algebra_file")) {
        (Some(_), Some(_)) => return Err(cfg.error("algebra_file", "give either `algebra` or `algebra_file`, not both")),
        (None, None) => return Err(cfg.error("algebra", format!("required; one of {}", BUILTIN_ALGEBRAS.join(", ")))),
        (Some(name), None) => {
            let mut params = BTreeMap::new();
            for key in ["m", "b", "v", "a"] {
                if let Some(v) = cfg.raw(key) {
                    params.insert(key.to_string(), parse_rational(v).map_err(|e| cfg.error(key, e))?);
                }
            }
            builtin_algebra(name, &params).map_err(|e| cfg.error("algebra", e))?
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| cfg.error("algebra_file", format!("cannot read {path}: {e}")))?;
            parse_algebra(&text).map_err(|e| match e {
                walklab::Error::Parse { line, message } => CliError::Config(format!("{path}:{line}: {message}")),
                other => cfg.error("algebra_file", other),
            })?
        }
    };

    let invariance = if cfg.has("equation") {
        let kind = cfg.equation()?;
        if kind.components() != 1 || matches!(kind, PdeKind::Dirac { .. }) {
            return Err(cfg.error("equation", "invariance checks need a real scalar equation"));
        }
        let init = super::solve::initial_data(cfg, &kind)?;
        let epsilons = cfg.list("epsilons", &[0.02, 0.01, 0.005])?;
        if epsilons.len() < 2 || epsilons.contains(&0.0) {
            return Err(cfg.error("epsilons", "need at least two non-zero values"));
        }
        let order = match cfg.choice("map_order", &["exact", "first-order"], Some("exact"))? {
            "first-order" => MapOrder::FirstOrder,
            _ => MapOrder::Exact,
        };
        let labels: BTreeSet<String> = table.generators.iter().map(|g| g.label.clone()).collect();
        let expect_nonsymmetric: BTreeSet<String> = cfg
            .raw("expect_nonsymmetric")
            .map(|v| v.split([',', ' ']).filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default();
        if let Some(bad) = expect_nonsymmetric.iter().find(|l| !labels.contains(*l)) {
            return Err(cfg.error("expect_nonsymmetric", format!("no generator labelled {bad:?} in {}", table.name)));
        }
        Some(Invariance {
            kind,
            init,
            grid: cfg.grid()?,
            bc: cfg.boundary()?,
            epsilons,
            order,
            control: cfg.flag("control", false)?,
            expect_nonsymmetric,
        })
    } else {
        if let Some(k) = INVARIANCE_KEYS.iter().find(|k| cfg.has(k)) {
            return Err(cfg.error(k, "only used together with `equation`"));
        }
        None
    };
    Ok(SymmetryPlan { table, invariance })
}

/// `t ∂x`, a vector field that is not a symmetry of the equations here.
fn control_generator() -> SymmetryGenerator {
    SymmetryGenerator::parse(CONTROL_LABEL, "t", "0", "0", &BTreeMap::new()).expect("static generator")
}

impl SymmetryPlan {
    pub fn execute(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        let report = verify_algebra(&self.table);
        let total = report.pairs.len();
        let failing: Vec<String> = report.pairs.iter().filter(|p| !p.pass).map(|p| format!("[{}, {}]", p.left, p.right)).collect();
        ctx.check(
            "bracket_pairs",
            report.pairs_passed as f64,
            Relation::Equal,
            total as f64,
            format!("{}/{} pairs of {} match{}", report.pairs_passed, total, report.algebra, describe_failures(&failing)),
        );
        ctx.check(
            "jacobi_failures",
            report.jacobi_failures.len() as f64,
            Relation::Equal,
            0.0,
            format!("{} triples checked{}", report.jacobi_triples, describe_failures(&report.jacobi_failures)),
        );
        ctx.json("algebra.json", &report)?;
        if let Some(inv) = &self.invariance {
            self.run_invariance(inv, ctx)?;
        }
        Ok(())
    }

    fn run_invariance(&self, inv: &Invariance, ctx: &mut Ctx) -> walklab::Result<()> {
        let sol = solve(&inv.kind, &inv.init, &inv.grid, &inv.bc)?;
        let mut gens: Vec<SymmetryGenerator> = self.table.generators.clone();
        if inv.control {
            gens.push(control_generator());
        }
        let fits: Vec<walklab::Result<InvarianceFit>> =
            gens.par_iter().map(|g| invariance_residual_with(&inv.kind, &sol, g, &inv.epsilons, inv.order)).collect();
        let mut rows = Vec::new();
        for (g, fit) in gens.iter().zip(fits) {
            let expect_symmetry = g.label != CONTROL_LABEL && !inv.expect_nonsymmetric.contains(&g.label);
            let name = format!("invariance_{}", g.label);
            let fit = match fit {
                Ok(f) => f,
                Err(e) => {
                    ctx.verdict(name, false, f64::NAN, Relation::AtLeast, SYMMETRY_ORDER, format!("{}: {e}", g.label));
                    continue;
                }
            };
            ctx.order(&name, fit.fitted_order);
            ctx.norm(format!("{name}_max_ratio"), fit.max_ratio);
            let detail =
                format!("{} verdict {:?}, ratio {:.3}, excess {}", fit.generator, fit.verdict, fit.max_ratio, super::fmt_list(&fit.excess));
            if expect_symmetry {
                ctx.verdict(
                    name,
                    fit.is_symmetry(),
                    fit.fitted_order,
                    Relation::AtLeast,
                    SYMMETRY_ORDER,
                    format!("{detail} (or ratio <= {EXACT_RATIO})"),
                );
            } else {
                ctx.verdict(name, fit.verdict == Verdict::NotSymmetric, fit.fitted_order, Relation::AtMost, NON_SYMMETRY_ORDER, detail);
            }
            for (k, e) in fit.epsilons.iter().enumerate() {
                rows.push((g.label.clone(), *e, fit.residuals[k], fit.excess[k]));
            }
        }
        ctx.csv("invariance.csv", |buf| {
            writeln!(buf, "generator,epsilon,residual,excess")?;
            for (label, e, r, x) in &rows {
                writeln!(buf, "{label},{e},{r},{x}")?;
            }
            Ok(())
        })
    }
}

fn describe_failures(items: &[String]) -> String {
    if items.is_empty() {
        String::new()
    } else {
        format!("; failing: {}", items.join(", "))
    }
}
