//! Persistent random walkers and exact lattice iteration of the two-speed
//! master equation and its variants.
//!
//! A walker moves a distance `v*dt` in its current direction each step and
//! then reverses direction with probability `a*dt` (a Bernoulli trial per
//! step rather than exponential waiting times, so the finite-`dt` bias is
//! `O(dt)`). This is the discrete process whose expected right/left-mover
//! densities obey
//!
//! ```text
//! P±(x, t+dt) = P±(x ∓ dx, t)(1 − a dt) + P∓(x ± dx, t) a dt
//! ```
//!
//! Random numbers come from ChaCha8 (`rand_chacha`) keyed by
//! `seed_from_u64(seed)`, with one stream per walker selected by
//! `set_stream(walker_index)`. Every walker therefore has the same
//! trajectory no matter how the ensemble is partitioned across threads.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{interpolate_level, l1_norm, BoundaryCondition, FieldHistory, SpaceTimeGrid};

/// Walkers simulated per parallel work item.
const CHUNK: usize = 2048;

/// How the initial directions of a point source are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionInit {
    Right,
    Left,
    /// Even-indexed walkers start right, odd-indexed start left.
    Alternating,
}

#[derive(Debug, Clone)]
pub struct WalkerEnsemble {
    positions: Vec<f64>,
    directions: Vec<i8>,
    speed: f64,
    flip_rate: f64,
    seed: u64,
}

impl WalkerEnsemble {
    pub fn new(positions: Vec<f64>, directions: Vec<i8>, speed: f64, flip_rate: f64, seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Parameter("ensemble needs at least one walker".into()));
        }
        if positions.len() != directions.len() {
            return Err(Error::Parameter("positions and directions differ in length".into()));
        }
        if directions.iter().any(|d| *d != 1 && *d != -1) {
            return Err(Error::Parameter("directions must be +1 or -1".into()));
        }
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(Error::Parameter(format!("speed {speed} must be finite and nonnegative")));
        }
        if !(flip_rate.is_finite() && flip_rate >= 0.0) {
            return Err(Error::Parameter(format!("flip rate {flip_rate} must be finite and nonnegative")));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("walker positions must be finite".into()));
        }
        Ok(Self { positions, directions, speed, flip_rate, seed })
    }

    /// `n` walkers starting at `x0`.
    pub fn point_source(n: usize, x0: f64, speed: f64, flip_rate: f64, seed: u64, init: DirectionInit) -> Result<Self> {
        let directions = (0..n)
            .map(|k| match init {
                DirectionInit::Right => 1,
                DirectionInit::Left => -1,
                DirectionInit::Alternating => {
                    if k % 2 == 0 {
                        1
                    } else {
                        -1
                    }
                }
            })
            .collect();
        Self::new(vec![x0; n], directions, speed, flip_rate, seed)
    }

    pub fn n_walkers(&self) -> usize {
        self.positions.len()
    }
    pub fn speed(&self) -> f64 {
        self.speed
    }
    pub fn flip_rate(&self) -> f64 {
        self.flip_rate
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Empirical right- and left-mover densities at the recorded time levels.
///
/// Bins are centred on the grid nodes and have width `dx`; positions are
/// wrapped onto the periodic domain of period `nx*dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    grid: SpaceTimeGrid,
    record_times: Vec<usize>,
    p_plus: Vec<Vec<f64>>,
    p_minus: Vec<Vec<f64>>,
    n_walkers: usize,
}

impl DensityEstimate {
    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }
    pub fn record_times(&self) -> &[usize] {
        &self.record_times
    }
    pub fn bin_width(&self) -> f64 {
        self.grid.dx()
    }
    pub fn n_walkers(&self) -> usize {
        self.n_walkers
    }
    pub fn p_plus(&self, k: usize) -> &[f64] {
        &self.p_plus[k]
    }
    pub fn p_minus(&self, k: usize) -> &[f64] {
        &self.p_minus[k]
    }

    pub fn total(&self, k: usize) -> Vec<f64> {
        self.p_plus[k].iter().zip(&self.p_minus[k]).map(|(a, b)| a + b).collect()
    }

    /// Histogram mass `sum (P+ + P-) dx` at record `k`.
    pub fn mass(&self, k: usize) -> f64 {
        self.total(k).iter().sum::<f64>() * self.grid.dx()
    }

    /// CSV in the field format (`t,x,component,value`), component 0 being
    /// the right movers and 1 the left movers.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,component,value")?;
        for (k, &n) in self.record_times.iter().enumerate() {
            let t = self.grid.t(n);
            for (c, dens) in [&self.p_plus[k], &self.p_minus[k]].into_iter().enumerate() {
                for (i, v) in dens.iter().enumerate() {
                    writeln!(w, "{},{},{},{}", t, self.grid.x(i), c, v)?;
                }
            }
        }
        Ok(())
    }
}

fn bin_index(x: f64, grid: &SpaceTimeGrid) -> usize {
    let s = ((x - grid.x_min()) / grid.dx() + 0.5).floor() as i64;
    s.rem_euclid(grid.nx() as i64) as usize
}

fn validate_walk(ensemble: &WalkerEnsemble, grid: &SpaceTimeGrid) -> Result<f64> {
    let p = ensemble.flip_rate * grid.dt();
    if p > 1.0 {
        return Err(Error::Parameter(format!("flip probability a*dt = {p} exceeds 1")));
    }
    if p > 0.5 {
        return Err(Error::Parameter(format!("flip probability a*dt = {p} exceeds 0.5")));
    }
    Ok(p)
}

/// Histogram counts for walkers `range`, laid out as
/// `[record][direction][bin]`.
fn simulate_range(
    ensemble: &WalkerEnsemble,
    grid: &SpaceTimeGrid,
    records: &[usize],
    flip_p: f64,
    range: std::ops::Range<usize>,
) -> Vec<u64> {
    let nx = grid.nx();
    let mut counts = vec![0u64; records.len() * 2 * nx];
    let step = ensemble.speed * grid.dt();
    let last = records.last().copied().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(ensemble.seed);
    for w in range {
        rng.set_stream(w as u64);
        rng.set_word_pos(0);
        let x0 = ensemble.positions[w];
        let mut dir = ensemble.directions[w];
        let mut net: i64 = 0;
        let mut next = 0;
        for n in 0..=last {
            if n > 0 {
                net += dir as i64;
                if rng.gen::<f64>() < flip_p {
                    dir = -dir;
                }
            }
            if records[next] == n {
                let x = x0 + step * net as f64;
                let d = usize::from(dir < 0);
                counts[(next * 2 + d) * nx + bin_index(x, grid)] += 1;
                next += 1;
                if next == records.len() {
                    break;
                }
            }
        }
    }
    counts
}

fn counts_to_estimate(counts: Vec<u64>, grid: &SpaceTimeGrid, records: Vec<usize>, n_walkers: usize) -> DensityEstimate {
    let nx = grid.nx();
    let norm = 1.0 / (n_walkers as f64 * grid.dx());
    let mut p_plus = Vec::with_capacity(records.len());
    let mut p_minus = Vec::with_capacity(records.len());
    for k in 0..records.len() {
        let block = |d: usize| counts[(k * 2 + d) * nx..(k * 2 + d + 1) * nx].iter().map(|c| *c as f64 * norm).collect();
        p_plus.push(block(0));
        p_minus.push(block(1));
    }
    DensityEstimate { grid: *grid, record_times: records, p_plus, p_minus, n_walkers }
}

fn normalized_records(grid: &SpaceTimeGrid, record_times: &[usize]) -> Result<Vec<usize>> {
    if record_times.is_empty() {
        return Err(Error::Parameter("no record times requested".into()));
    }
    let mut records = record_times.to_vec();
    records.sort_unstable();
    records.dedup();
    if *records.last().unwrap() >= grid.nt() {
        return Err(Error::Dimension(format!("record time index beyond nt = {}", grid.nt())));
    }
    Ok(records)
}

/// Run the walkers on `grid` and histogram them at `record_times` (time
/// level indices). Work is spread over the rayon pool.
pub fn simulate_walkers(ensemble: &WalkerEnsemble, grid: &SpaceTimeGrid, record_times: &[usize]) -> Result<DensityEstimate> {
    let flip_p = validate_walk(ensemble, grid)?;
    let records = normalized_records(grid, record_times)?;
    let n = ensemble.n_walkers();
    let size = records.len() * 2 * grid.nx();
    let counts = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| simulate_range(ensemble, grid, &records, flip_p, c * CHUNK..((c + 1) * CHUNK).min(n)))
        .reduce(
            || vec![0u64; size],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(counts_to_estimate(counts, grid, records, n))
}

/// Sequential run split into `partitions` contiguous blocks whose
/// histograms are merged afterwards.
pub fn simulate_walkers_partitioned(
    ensemble: &WalkerEnsemble,
    grid: &SpaceTimeGrid,
    record_times: &[usize],
    partitions: usize,
) -> Result<DensityEstimate> {
    let flip_p = validate_walk(ensemble, grid)?;
    let records = normalized_records(grid, record_times)?;
    let n = ensemble.n_walkers();
    let parts = partitions.clamp(1, n);
    let mut total = vec![0u64; records.len() * 2 * grid.nx()];
    for p in 0..parts {
        let range = p * n / parts..(p + 1) * n / parts;
        let c = simulate_range(ensemble, grid, &records, flip_p, range);
        total.iter_mut().zip(c).for_each(|(x, y)| *x += y);
    }
    Ok(counts_to_estimate(total, grid, records, n))
}

/// Source term `a(x, t)` of the modified master equation.
pub type SourceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Recurrence advanced by [`lattice_iterate`]. The space step is one grid
/// cell and the time step is the grid `dt`.
#[derive(Clone)]
pub enum MasterEquationVariant {
    /// `P±(x,t+dt) = P±(x∓dx,t)(1 − a dt) + P∓(x±dx,t) a dt`.
    Linear { flip_rate: f64 },
    /// `P±(x,t+dt) = P±(x∓dx,t) + a(x,t) dt`.
    Source(SourceFn),
    /// Persistence factor `1 − P+ dt` in place of `1 − a dt`, with `P+`
    /// taken at the same shifted point as the transported density.
    NonlinearFirstTerm { flip_rate: f64 },
    /// Scalar `P(x,t+dt) = ½P(x−dx,t) + ½P(x+dx,t)`.
    SymmetricDiffusion,
    /// Scalar symmetric step with the jump length scaled to `P(x,t) dx`.
    PWeightedSpace,
    /// Jump length `P dx` and waiting time `P dt`. The lattice keeps a fixed
    /// `dt`, so the increment accumulated over the state-dependent waiting
    /// time is rescaled by `1/P`.
    PWeightedSpacetime,
}

impl fmt::Debug for MasterEquationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { flip_rate } => write!(f, "Linear {{ flip_rate: {flip_rate} }}"),
            Self::Source(_) => write!(f, "Source(..)"),
            Self::NonlinearFirstTerm { flip_rate } => write!(f, "NonlinearFirstTerm {{ flip_rate: {flip_rate} }}"),
            Self::SymmetricDiffusion => write!(f, "SymmetricDiffusion"),
            Self::PWeightedSpace => write!(f, "PWeightedSpace"),
            Self::PWeightedSpacetime => write!(f, "PWeightedSpacetime"),
        }
    }
}

impl MasterEquationVariant {
    pub fn components(&self) -> usize {
        match self {
            Self::Linear { .. } | Self::Source(_) | Self::NonlinearFirstTerm { .. } => 2,
            _ => 1,
        }
    }

    fn is_probability(&self) -> bool {
        !matches!(self, Self::Source(_))
    }
}

/// Iterate the chosen recurrence `steps` times from the first level of
/// `initial`. The returned field has `steps + 1` levels.
pub fn lattice_iterate(
    variant: &MasterEquationVariant,
    initial: &FieldHistory,
    steps: usize,
    bc: &BoundaryCondition,
) -> Result<FieldHistory> {
    bc.validate()?;
    let comps = variant.components();
    if initial.components() != comps {
        return Err(Error::Dimension(format!("{variant:?} needs {comps} component(s), initial data has {}", initial.components())));
    }
    if steps == 0 {
        return Err(Error::Parameter("steps must be positive".into()));
    }
    if variant.is_probability() && (0..comps).any(|c| initial.slice(c, 0).iter().any(|v| *v < 0.0)) {
        return Err(Error::Parameter("probability densities must be nonnegative".into()));
    }
    let grid = initial.grid().with_nt(steps + 1)?;
    let (nx, dx, dt) = (grid.nx(), grid.dx(), grid.dt());
    if let MasterEquationVariant::Linear { flip_rate } | MasterEquationVariant::NonlinearFirstTerm { flip_rate } = variant {
        let q = flip_rate * dt;
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Parameter(format!("flip probability a*dt = {q} must lie in [0, 1]")));
        }
    }
    let mut out = FieldHistory::real(grid, comps)?;
    for c in 0..comps {
        out.slice_mut(c, 0).copy_from_slice(initial.slice(c, 0));
    }
    let interior = if bc.is_dirichlet() { 1..nx - 1 } else { 0..nx };
    let at = |i: usize, off: isize| bc.resolve(i as isize + off, nx);

    for n in 0..steps {
        let t = grid.t(n);
        let cur: Vec<Vec<f64>> = (0..comps).map(|c| out.slice(c, n).to_vec()).collect();
        let mut next: Vec<Vec<f64>> = cur.clone();
        match variant {
            MasterEquationVariant::Linear { flip_rate } => {
                let q = flip_rate * dt;
                for i in interior.clone() {
                    let (l, r) = (at(i, -1).unwrap(), at(i, 1).unwrap());
                    next[0][i] = cur[0][l] * (1.0 - q) + cur[1][r] * q;
                    next[1][i] = cur[1][r] * (1.0 - q) + cur[0][l] * q;
                }
            }
            MasterEquationVariant::NonlinearFirstTerm { flip_rate } => {
                let q = flip_rate * dt;
                for i in interior.clone() {
                    let (l, r) = (at(i, -1).unwrap(), at(i, 1).unwrap());
                    next[0][i] = cur[0][l] * (1.0 - cur[0][l] * dt) + cur[1][r] * q;
                    next[1][i] = cur[1][r] * (1.0 - cur[0][r] * dt) + cur[0][l] * q;
                }
            }
            MasterEquationVariant::Source(a) => {
                for i in interior.clone() {
                    let (l, r) = (at(i, -1).unwrap(), at(i, 1).unwrap());
                    let s = a(grid.x(i), t) * dt;
                    next[0][i] = cur[0][l] + s;
                    next[1][i] = cur[1][r] + s;
                }
            }
            MasterEquationVariant::SymmetricDiffusion => {
                for i in interior.clone() {
                    let (l, r) = (at(i, -1).unwrap(), at(i, 1).unwrap());
                    next[0][i] = 0.5 * cur[0][l] + 0.5 * cur[0][r];
                }
            }
            MasterEquationVariant::PWeightedSpace | MasterEquationVariant::PWeightedSpacetime => {
                let p = &cur[0];
                for i in interior.clone() {
                    let x = grid.x(i);
                    let shift = p[i] * dx;
                    let left = interpolate_level(p, grid.x_min(), dx, x - shift, bc)?;
                    let right = interpolate_level(p, grid.x_min(), dx, x + shift, bc)?;
                    let avg = 0.5 * (left + right);
                    next[0][i] = match variant {
                        MasterEquationVariant::PWeightedSpace => avg,
                        _ if p[i].abs() > f64::MIN_POSITIVE => p[i] + (avg - p[i]) / p[i],
                        _ => p[i],
                    };
                }
            }
        }
        for (c, level) in next.iter_mut().enumerate() {
            bc.apply(level, n + 1);
            if level.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: n + 1, detail: format!("non-finite value in component {c}") });
            }
            out.slice_mut(c, n + 1).copy_from_slice(level);
        }
    }
    Ok(out)
}

/// L1 distance between the total empirical density at its final record and
/// the PDE solution (summed over its components) at the same time.
pub fn density_residual_vs_pde(estimate: &DensityEstimate, pde_solution: &FieldHistory) -> Result<f64> {
    let g = estimate.grid();
    if !g.same_space(pde_solution.grid()) {
        return Err(Error::Dimension("estimate and PDE solution live on different spatial lattices".into()));
    }
    let k = estimate.record_times().len() - 1;
    let t = g.t(estimate.record_times()[k]);
    let n = pde_solution.grid().time_index(t).ok_or_else(|| Error::Dimension(format!("PDE solution has no time level at t = {t}")))?;
    let diff: Vec<f64> = estimate.total(k).iter().zip(pde_solution.total(n)).map(|(a, b)| a - b).collect();
    l1_norm(&diff, g.dx())
}
