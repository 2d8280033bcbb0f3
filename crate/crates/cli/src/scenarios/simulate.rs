//! Walker ensembles and lattice recurrences.

use rayon::prelude::*;
use walklab::grid::l1_norm;
use walklab::solvers::{solve, InitialData, PdeKind, Profile};
use walklab::stochastic::{lattice_iterate, simulate_walkers, DensityEstimate, MasterEquationVariant, WalkerEnsemble};
use walklab::{BoundaryCondition, FieldHistory, SpaceTimeGrid};

use super::{stratified_positions, write_field, Ctx};
use crate::config::ExperimentConfig;
use crate::manifest::Relation;
use crate::CliError;

const VARIANTS: [&str; 5] = ["linear", "nonlinear-first-term", "symmetric-diffusion", "p-weighted-space", "p-weighted-spacetime"];
const WALKER_KEYS: [&str; 5] = ["walkers", "seeds", "speed", "directions", "compare"];
/// Mass drift allowed for probability-conserving recurrences.
const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Compare {
    Lattice,
    Telegrapher,
    None,
}

struct Walkers {
    seeds: Vec<u64>,
    speed: f64,
    flip_rate: f64,
    positions: Vec<f64>,
    directions: Vec<i8>,
    compare: Compare,
}

pub struct SimulatePlan {
    grid: SpaceTimeGrid,
    bc: BoundaryCondition,
    variant: MasterEquationVariant,
    walkers: Option<Walkers>,
    density: Vec<f64>,
    tolerance: f64,
}

pub fn plan(cfg: &ExperimentConfig) -> Result<SimulatePlan, CliError> {
    let grid = cfg.grid()?;
    let bc = cfg.boundary()?;
    let name = cfg.choice("variant", &VARIANTS, Some("linear"))?;
    let tolerance = cfg.positive("tolerance", Some(5e-2))?;
    let profile = cfg.profile("initial", Some("delta 0 1"))?;
    let keyed = |key: &str, msg: &str| cfg.error(key, msg);
    let density = match &profile {
        Profile::Delta { x0, mass } => {
            if *x0 < grid.x_min() || *x0 > grid.x_max() || *mass <= 0.0 {
                return Err(keyed("initial", "delta must lie on the grid and carry positive mass"));
            }
            Profile::Delta { x0: *x0, mass: 1.0 }.sample(&grid).map_err(|e| keyed("initial", &e.to_string()))?
        }
        p => p.sample(&grid).map_err(|e| keyed("initial", &e.to_string()))?,
    };
    if density.iter().any(|d| *d < 0.0) || density.iter().sum::<f64>() <= 0.0 {
        return Err(keyed("initial", "initial density must be nonnegative with positive mass"));
    }

    if name != "linear" {
        if let Some(k) = WALKER_KEYS.iter().find(|k| cfg.has(k)) {
            return Err(keyed(k, "only used by variant linear"));
        }
    }
    let flip_rate = |required: bool| -> Result<f64, CliError> {
        if !required {
            if cfg.has("flip_rate") {
                return Err(keyed("flip_rate", &format!("not used by variant {name}")));
            }
            return Ok(0.0);
        }
        let a = cfg.finite("flip_rate", None)?;
        if a < 0.0 {
            return Err(keyed("flip_rate", "must be nonnegative"));
        }
        let q = a * grid.dt();
        if q > 0.5 {
            return Err(keyed("flip_rate", &format!("flip probability flip_rate*dt = {q} exceeds 0.5")));
        }
        Ok(a)
    };
    let variant = match name {
        "linear" => MasterEquationVariant::Linear { flip_rate: flip_rate(true)? },
        "nonlinear-first-term" => MasterEquationVariant::NonlinearFirstTerm { flip_rate: flip_rate(true)? },
        "symmetric-diffusion" => {
            flip_rate(false)?;
            MasterEquationVariant::SymmetricDiffusion
        }
        "p-weighted-space" => {
            flip_rate(false)?;
            MasterEquationVariant::PWeightedSpace
        }
        _ => {
            flip_rate(false)?;
            MasterEquationVariant::PWeightedSpacetime
        }
    };

    let walkers = if let MasterEquationVariant::Linear { flip_rate } = variant {
        if !matches!(bc, BoundaryCondition::Periodic) {
            return Err(keyed("bc", "walkers live on a periodic domain; use bc = periodic"));
        }
        let n = cfg.count("walkers", Some(10_000), 1)?;
        let n_seeds = cfg.count("seeds", Some(1), 1)?;
        let base: u64 = cfg.get("seed", Some(1))?;
        let speed = cfg.positive("speed", Some(grid.dx() / grid.dt()))?;
        let compare = match cfg.choice("compare", &["lattice", "telegrapher", "none"], Some("lattice"))? {
            "lattice" => Compare::Lattice,
            "telegrapher" => Compare::Telegrapher,
            _ => Compare::None,
        };
        if compare == Compare::Lattice && (speed * grid.dt() - grid.dx()).abs() > 1e-9 * grid.dx() {
            return Err(keyed("speed", "the lattice comparison needs speed*dt equal to dx"));
        }
        let positions = match profile {
            Profile::Delta { x0, .. } => vec![grid.x(((x0 - grid.x_min()) / grid.dx()).round() as usize); n],
            _ => stratified_positions(&grid, &density, n),
        };
        let directions = match cfg.choice("directions", &["alternating", "right", "left"], Some("alternating"))? {
            "right" => vec![1; n],
            "left" => vec![-1; n],
            _ => (0..n).map(|k| if k % 2 == 0 { 1 } else { -1 }).collect(),
        };
        let seeds = (0..n_seeds as u64).map(|k| base + k).collect();
        Some(Walkers { seeds, speed, flip_rate, positions, directions, compare })
    } else {
        None
    };
    Ok(SimulatePlan { grid, bc, variant, walkers, density, tolerance })
}

fn node(grid: &SpaceTimeGrid, x: f64) -> usize {
    let s = ((x - grid.x_min()) / grid.dx() + 0.5).floor() as i64;
    s.rem_euclid(grid.nx() as i64) as usize
}

fn mass(v: &[f64], dx: f64) -> f64 {
    v.iter().sum::<f64>() * dx
}

impl SimulatePlan {
    pub fn execute(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        match &self.walkers {
            Some(w) => self.run_walkers(w, ctx),
            None => self.run_lattice(ctx),
        }
    }

    fn run_walkers(&self, w: &Walkers, ctx: &mut Ctx) -> walklab::Result<()> {
        let g = &self.grid;
        let last = g.nt() - 1;
        let estimates: Vec<DensityEstimate> = w
            .seeds
            .par_iter()
            .map(|&s| {
                let ens = WalkerEnsemble::new(w.positions.clone(), w.directions.clone(), w.speed, w.flip_rate, s)?;
                simulate_walkers(&ens, g, &[last])
            })
            .collect::<walklab::Result<_>>()?;

        // the walkers' own start histogram, split by direction
        let mut start = FieldHistory::real(g.with_nt(2)?, 2)?;
        let weight = 1.0 / (w.positions.len() as f64 * g.dx());
        for (x, d) in w.positions.iter().zip(&w.directions) {
            let c = if *d > 0 { 0 } else { 1 };
            let i = node(g, *x);
            let v = start.get(c, 0, i) + weight;
            start.set(c, 0, i, v);
        }
        let reference = match w.compare {
            Compare::Lattice => {
                let lat = lattice_iterate(&self.variant, &start, last, &self.bc)?;
                let drift = (mass(&lat.total(last), g.dx()) - mass(&lat.total(0), g.dx())).abs();
                ctx.check("lattice_mass_drift", drift, Relation::AtMost, MASS_TOLERANCE, "probability lost by the exact recurrence");
                ctx.csv("lattice.csv", |buf| write_field(&lat, buf))?;
                Some(lat.total(last))
            }
            Compare::Telegrapher => {
                let mut total = FieldHistory::real(g.with_nt(2)?, 1)?;
                total.slice_mut(0, 0).copy_from_slice(&start.total(0));
                let kind = PdeKind::Telegrapher { v: w.speed, a: w.flip_rate };
                let pde = solve(&kind, &InitialData::from_level(&total, 0), g, &self.bc)?;
                ctx.csv("telegrapher.csv", |buf| write_field(&pde, buf))?;
                Some(pde.slice(0, last).to_vec())
            }
            Compare::None => None,
        };
        let label = match w.compare {
            Compare::Lattice => "lattice",
            _ => "telegrapher",
        };
        let mut errs = Vec::new();
        for (est, seed) in estimates.iter().zip(&w.seeds) {
            ctx.norm(format!("walker_mass_seed_{seed}"), est.mass(0));
            if let Some(r) = &reference {
                let diff: Vec<f64> = est.total(0).iter().zip(r).map(|(a, b)| a - b).collect();
                let e = l1_norm(&diff, g.dx())?;
                errs.push(e);
                ctx.check(format!("walkers_vs_{label}_l1_seed_{seed}"), e, Relation::AtMost, self.tolerance, format!("t = {}", g.t(last)));
            }
            ctx.csv(&format!("density_seed_{seed}.csv"), |buf| est.write_csv(buf))?;
        }
        if !errs.is_empty() {
            ctx.norm(format!("walkers_vs_{label}_l1_mean"), errs.iter().sum::<f64>() / errs.len() as f64);
        }
        Ok(())
    }

    fn run_lattice(&self, ctx: &mut Ctx) -> walklab::Result<()> {
        let g = &self.grid;
        let comps = self.variant.components();
        let mut start = FieldHistory::real(g.with_nt(2)?, comps)?;
        for c in 0..comps {
            let share: Vec<f64> = self.density.iter().map(|d| d / comps as f64).collect();
            start.slice_mut(c, 0).copy_from_slice(&share);
        }
        let last = g.nt() - 1;
        let lat = lattice_iterate(&self.variant, &start, last, &self.bc)?;
        let m0 = mass(&lat.total(0), g.dx());
        let drift = (mass(&lat.total(last), g.dx()) - m0).abs() / m0;
        ctx.norm("relative_mass_change", drift);
        ctx.norm("final_sup", lat.total(last).iter().fold(0.0f64, |m, v| m.max(v.abs())));
        if matches!(self.variant, MasterEquationVariant::SymmetricDiffusion) && matches!(self.bc, BoundaryCondition::Periodic) {
            ctx.check("lattice_mass_drift", drift, Relation::AtMost, MASS_TOLERANCE, "symmetric recurrence conserves probability");
        }
        ctx.csv("lattice.csv", |buf| write_field(&lat, buf))
    }
}
