//! Uniform 1+1 space-time lattices, lattice fields and the stencils shared
//! by every other module.
//!
//! Nodes sit at `x(i) = x_min + i*dx` for `i in 0..nx` and
//! `t(n) = t0 + n*dt` for `n in 0..nt`. With periodic boundaries the
//! neighbour of node `nx-1` is node `0`, so the period is `nx*dx`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance, in units of the lattice spacing, for snapping queries onto
/// nodes and for the hull test.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    x_min: f64,
    x_max: f64,
    nx: usize,
    dx: f64,
    dt: f64,
    nt: usize,
    t0: f64,
}

impl SpaceTimeGrid {
    pub fn new(x_min: f64, x_max: f64, nx: usize, dt: f64, nt: usize, t0: f64) -> Result<Self> {
        if nx < 3 {
            return Err(Error::Dimension(format!("nx = {nx}, need at least 3")));
        }
        if nt < 2 {
            return Err(Error::Dimension(format!("nt = {nt}, need at least 2")));
        }
        if !(x_min.is_finite() && x_max.is_finite() && t0.is_finite() && dt.is_finite()) {
            return Err(Error::Parameter("grid parameters must be finite".into()));
        }
        if x_max <= x_min {
            return Err(Error::Parameter(format!("x_max ({x_max}) must exceed x_min ({x_min})")));
        }
        if dt <= 0.0 {
            return Err(Error::Parameter(format!("dt = {dt} must be positive")));
        }
        let dx = (x_max - x_min) / (nx - 1) as f64;
        Ok(Self { x_min, x_max, nx, dx, dt, nt, t0 })
    }

    /// Grid with prescribed spacing `dx` starting at `x_min`.
    pub fn with_spacing(x_min: f64, dx: f64, nx: usize, dt: f64, nt: usize, t0: f64) -> Result<Self> {
        if dx <= 0.0 || !dx.is_finite() {
            return Err(Error::Parameter(format!("dx = {dx} must be positive")));
        }
        let mut g = Self::new(x_min, x_min + dx * (nx.max(2) - 1) as f64, nx, dt, nt, t0)?;
        g.dx = dx;
        Ok(g)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn t(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.nt - 1)
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nt).map(|n| self.t(n)).collect()
    }

    /// Same spatial lattice with a different number of time levels.
    pub fn with_nt(&self, nt: usize) -> Result<Self> {
        if nt < 2 {
            return Err(Error::Dimension(format!("nt = {nt}, need at least 2")));
        }
        Ok(Self { nt, ..*self })
    }

    /// Sub-lattice of nodes `i0..=i1` by `n0..=n1`.
    pub fn sub_grid(&self, i0: usize, i1: usize, n0: usize, n1: usize) -> Result<Self> {
        if i1 >= self.nx || n1 >= self.nt || i1 < i0 + 2 || n1 < n0 + 1 {
            return Err(Error::Dimension(format!("invalid sub-grid [{i0}, {i1}] x [{n0}, {n1}] of {}x{}", self.nx, self.nt)));
        }
        Ok(Self { x_min: self.x(i0), x_max: self.x(i1), nx: i1 - i0 + 1, dx: self.dx, dt: self.dt, nt: n1 - n0 + 1, t0: self.t(n0) })
    }

    /// True when `(x, t)` lies in the closed rectangle spanned by the nodes.
    pub fn contains(&self, x: f64, t: f64) -> bool {
        let sx = (x - self.x_min) / self.dx;
        let st = (t - self.t0) / self.dt;
        sx >= -SNAP && sx <= (self.nx - 1) as f64 + SNAP && st >= -SNAP && st <= (self.nt - 1) as f64 + SNAP
    }

    /// Spatial lattices agree (origin, spacing and size).
    pub fn same_space(&self, other: &Self) -> bool {
        self.nx == other.nx && (self.x_min - other.x_min).abs() <= SNAP * self.dx && (self.dx - other.dx).abs() <= 1e-12 * self.dx
    }

    /// Index of the time level at `t`, if `t` falls on one.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let s = (t - self.t0) / self.dt;
        let n = s.round();
        if (s - n).abs() <= 1e-6 && n >= 0.0 && (n as usize) < self.nt {
            Some(n as usize)
        } else {
            None
        }
    }
}

/// Prescribed boundary values for a Dirichlet problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DirichletValues {
    Constant {
        left: f64,
        right: f64,
    },
    /// One `(left, right)` pair per time level.
    Series {
        left: Vec<f64>,
        right: Vec<f64>,
    },
}

impl DirichletValues {
    pub fn at(&self, n: usize) -> (f64, f64) {
        match self {
            DirichletValues::Constant { left, right } => (*left, *right),
            DirichletValues::Series { left, right } => {
                let k = n.min(left.len().saturating_sub(1));
                (left[k], right[k])
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            DirichletValues::Constant { left, right } => left.is_finite() && right.is_finite(),
            DirichletValues::Series { left, right } => {
                !left.is_empty() && left.len() == right.len() && left.iter().chain(right).all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter("dirichlet values must be finite and non-empty".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum BoundaryCondition {
    #[default]
    Periodic,
    Dirichlet(DirichletValues),
    /// Zero-gradient mirror: the ghost value at `-1` equals node `1`.
    Reflecting,
}

impl BoundaryCondition {
    pub fn dirichlet(left: f64, right: f64) -> Self {
        BoundaryCondition::Dirichlet(DirichletValues::Constant { left, right })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BoundaryCondition::Dirichlet(v) => v.validate(),
            _ => Ok(()),
        }
    }

    /// Resolve a possibly out-of-range neighbour index. Returns `None` when
    /// the index leaves the domain under a Dirichlet condition.
    pub fn resolve(&self, i: isize, nx: usize) -> Option<usize> {
        let n = nx as isize;
        match self {
            BoundaryCondition::Periodic => Some(i.rem_euclid(n) as usize),
            BoundaryCondition::Reflecting => {
                let period = 2 * (n - 1);
                let mut j = i.rem_euclid(period);
                if j >= n {
                    j = period - j;
                }
                Some(j as usize)
            }
            BoundaryCondition::Dirichlet(_) => (0..n).contains(&i).then_some(i as usize),
        }
    }

    /// Pin boundary nodes of a freshly computed level.
    pub fn apply(&self, level: &mut [f64], n: usize) {
        if let BoundaryCondition::Dirichlet(v) = self {
            let (l, r) = v.at(n);
            level[0] = l;
            let last = level.len() - 1;
            level[last] = r;
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, BoundaryCondition::Dirichlet(_))
    }
}

/// Scalar type of a [`FieldHistory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarKind {
    Real,
    Complex,
}

/// A lattice function of `(x, t)` with one or two components.
///
/// Values are stored component-major, then time, then space. Complex fields
/// keep real and imaginary parts in separate buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldHistory {
    grid: SpaceTimeGrid,
    components: usize,
    re: Vec<f64>,
    im: Option<Vec<f64>>,
}

impl FieldHistory {
    pub fn zeros(grid: SpaceTimeGrid, components: usize, kind: ScalarKind) -> Result<Self> {
        if !(1..=2).contains(&components) {
            return Err(Error::Dimension(format!("components = {components}, must be 1 or 2")));
        }
        let len = components * grid.nt() * grid.nx();
        Ok(Self { grid, components, re: vec![0.0; len], im: (kind == ScalarKind::Complex).then(|| vec![0.0; len]) })
    }

    pub fn real(grid: SpaceTimeGrid, components: usize) -> Result<Self> {
        Self::zeros(grid, components, ScalarKind::Real)
    }

    /// Sample a real function `f(component, x, t)` on every node.
    pub fn from_fn(grid: SpaceTimeGrid, components: usize, f: impl Fn(usize, f64, f64) -> f64) -> Result<Self> {
        let mut field = Self::real(grid, components)?;
        for c in 0..components {
            for n in 0..grid.nt() {
                let t = grid.t(n);
                for (i, v) in field.slice_mut(c, n).iter_mut().enumerate() {
                    *v = f(c, grid.x(i), t);
                }
            }
        }
        Ok(field)
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn kind(&self) -> ScalarKind {
        if self.im.is_some() {
            ScalarKind::Complex
        } else {
            ScalarKind::Real
        }
    }

    pub fn is_complex(&self) -> bool {
        self.im.is_some()
    }

    fn offset(&self, c: usize, n: usize) -> usize {
        (c * self.grid.nt() + n) * self.grid.nx()
    }

    pub fn get(&self, c: usize, n: usize, i: usize) -> f64 {
        self.re[self.offset(c, n) + i]
    }

    pub fn set(&mut self, c: usize, n: usize, i: usize, value: f64) {
        let o = self.offset(c, n);
        self.re[o + i] = value;
    }

    /// Real part of component `c` at time level `n`.
    pub fn slice(&self, c: usize, n: usize) -> &[f64] {
        let o = self.offset(c, n);
        &self.re[o..o + self.grid.nx()]
    }

    pub fn slice_mut(&mut self, c: usize, n: usize) -> &mut [f64] {
        let o = self.offset(c, n);
        let nx = self.grid.nx();
        &mut self.re[o..o + nx]
    }

    /// Imaginary part of component `c` at level `n` (complex fields only).
    pub fn imag_slice(&self, c: usize, n: usize) -> Option<&[f64]> {
        let o = self.offset(c, n);
        let nx = self.grid.nx();
        self.im.as_ref().map(|im| &im[o..o + nx])
    }

    pub fn imag_slice_mut(&mut self, c: usize, n: usize) -> Option<&mut [f64]> {
        let o = self.offset(c, n);
        let nx = self.grid.nx();
        self.im.as_mut().map(|im| &mut im[o..o + nx])
    }

    pub fn all_finite(&self) -> bool {
        self.re.iter().all(|v| v.is_finite()) && self.im.as_ref().is_none_or(|im| im.iter().all(|v| v.is_finite()))
    }

    pub fn real_values(&self) -> &[f64] {
        &self.re
    }

    /// Single-component copy of component `c`.
    pub fn component(&self, c: usize) -> Result<Self> {
        if c >= self.components {
            return Err(Error::Dimension(format!("component {c} out of range")));
        }
        let block = self.grid.nt() * self.grid.nx();
        let range = c * block..(c + 1) * block;
        Ok(Self { grid: self.grid, components: 1, re: self.re[range.clone()].to_vec(), im: self.im.as_ref().map(|im| im[range].to_vec()) })
    }

    /// Restriction to the nodes `i0..=i1` by `n0..=n1`.
    pub fn restrict(&self, i0: usize, i1: usize, n0: usize, n1: usize) -> Result<Self> {
        let grid = self.grid.sub_grid(i0, i1, n0, n1)?;
        let mut out = Self::zeros(grid, self.components, self.kind())?;
        for c in 0..self.components {
            for n in n0..=n1 {
                out.slice_mut(c, n - n0).copy_from_slice(&self.slice(c, n)[i0..=i1]);
                if let (Some(src), Some(dst)) = (self.imag_slice(c, n), out.imag_slice_mut(c, n - n0)) {
                    dst.copy_from_slice(&src[i0..=i1]);
                }
            }
        }
        Ok(out)
    }

    /// Sum of the components at level `n`.
    pub fn total(&self, n: usize) -> Vec<f64> {
        let mut acc = self.slice(0, n).to_vec();
        for c in 1..self.components {
            for (a, v) in acc.iter_mut().zip(self.slice(c, n)) {
                *a += v;
            }
        }
        acc
    }

    /// Bicubic value of the real part of component `c` at `(x, t)`.
    pub fn interpolate(&self, c: usize, x: f64, t: f64) -> Result<f64> {
        interpolate(self, c, x, t)
    }

    /// CSV with header `t,x,component,value`. Complex components are
    /// emitted as `<c>:re` and `<c>:im` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,component,value")?;
        for n in 0..self.grid.nt() {
            let t = self.grid.t(n);
            for c in 0..self.components {
                match self.imag_slice(c, n) {
                    None => {
                        for (i, v) in self.slice(c, n).iter().enumerate() {
                            writeln!(w, "{},{},{},{}", t, self.grid.x(i), c, v)?;
                        }
                    }
                    Some(im) => {
                        for (i, v) in self.slice(c, n).iter().enumerate() {
                            writeln!(w, "{},{},{}:re,{}", t, self.grid.x(i), c, v)?;
                        }
                        for (i, v) in im.iter().enumerate() {
                            writeln!(w, "{},{},{}:im,{}", t, self.grid.x(i), c, v)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Little-endian binary dump: a 64-byte header followed by the values in
    /// (component, time, space) order, complex values as `re, im` pairs.
    ///
    /// Header layout: magic `WLFH`, version `u8`, components `u8`, kind `u8`
    /// (0 real, 1 complex), reserved `u8`, `nx: u32`, `nt: u32`, then
    /// `x_min, x_max, dt, t0, dx` as `f64`, zero padding to 64 bytes.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = [0u8; BINARY_HEADER_LEN];
        header[0..4].copy_from_slice(BINARY_MAGIC);
        header[4] = BINARY_VERSION;
        header[5] = self.components as u8;
        header[6] = u8::from(self.is_complex());
        header[8..12].copy_from_slice(&(self.grid.nx() as u32).to_le_bytes());
        header[12..16].copy_from_slice(&(self.grid.nt() as u32).to_le_bytes());
        let g = &self.grid;
        for (k, v) in [g.x_min(), g.x_max(), g.dt(), g.t0(), g.dx()].iter().enumerate() {
            header[16 + 8 * k..24 + 8 * k].copy_from_slice(&v.to_le_bytes());
        }
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.re.len() * 16);
        match &self.im {
            None => self.re.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
            Some(im) => {
                for (r, i) in self.re.iter().zip(im) {
                    buf.extend_from_slice(&r.to_le_bytes());
                    buf.extend_from_slice(&i.to_le_bytes());
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; BINARY_HEADER_LEN];
        r.read_exact(&mut header)?;
        if &header[0..4] != BINARY_MAGIC {
            return Err(Error::Parse { line: 0, message: "bad magic in field dump".into() });
        }
        if header[4] != BINARY_VERSION {
            return Err(Error::Parse { line: 0, message: format!("unsupported dump version {}", header[4]) });
        }
        let components = header[5] as usize;
        let kind = if header[6] == 1 { ScalarKind::Complex } else { ScalarKind::Real };
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let (nx, nt) = (u32_at(8), u32_at(12));
        let grid = SpaceTimeGrid::with_spacing(f64_at(16), f64_at(48), nx, f64_at(32), nt, f64_at(40))?;
        let mut field = Self::zeros(grid, components, kind)?;
        let per_value = if kind == ScalarKind::Complex { 16 } else { 8 };
        let mut buf = vec![0u8; field.re.len() * per_value];
        r.read_exact(&mut buf)?;
        let mut chunks = buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        match field.im.as_mut() {
            None => field.re.iter_mut().for_each(|v| *v = chunks.next().unwrap()),
            Some(im) => {
                for (re, imv) in field.re.iter_mut().zip(im.iter_mut()) {
                    *re = chunks.next().unwrap();
                    *imv = chunks.next().unwrap();
                }
            }
        }
        Ok(field)
    }
}

const BINARY_MAGIC: &[u8; 4] = b"WLFH";
const BINARY_VERSION: u8 = 1;
pub const BINARY_HEADER_LEN: usize = 64;

/// Second derivative by the central stencil `(f[i-1] - 2 f[i] + f[i+1]) / dx^2`.
///
/// Boundary nodes use the wrapped or mirrored neighbour for periodic and
/// reflecting conditions; under Dirichlet conditions they are pinned and
/// the returned value there is zero.
pub fn second_space_derivative(f: &[f64], dx: f64, bc: &BoundaryCondition) -> Result<Vec<f64>> {
    let nx = f.len();
    if nx < 3 {
        return Err(Error::Dimension(format!("need at least 3 points, got {nx}")));
    }
    let inv = 1.0 / (dx * dx);
    let mut out = vec![0.0; nx];
    for i in 1..nx - 1 {
        out[i] = (f[i - 1] - 2.0 * f[i] + f[i + 1]) * inv;
    }
    if !bc.is_dirichlet() {
        for i in [0, nx - 1] {
            let l = f[bc.resolve(i as isize - 1, nx).unwrap()];
            let r = f[bc.resolve(i as isize + 1, nx).unwrap()];
            out[i] = (l - 2.0 * f[i] + r) * inv;
        }
    }
    Ok(out)
}

/// Lagrange weights for the (up to) 4-node stencil around fractional index
/// `s` on `n` nodes. Returns the first node and the weights.
fn lagrange_stencil(s: f64, n: usize) -> (usize, Vec<f64>) {
    let width = n.min(4);
    let s = if (s - s.round()).abs() < SNAP { s.round() } else { s };
    let j0 = if width < 4 { 0 } else { (s.floor() as isize - 1).clamp(0, (n - 4) as isize) as usize };
    let weights = (0..width)
        .map(|j| {
            let xj = (j0 + j) as f64;
            (0..width)
                .filter(|&k| k != j)
                .map(|k| {
                    let xk = (j0 + k) as f64;
                    (s - xk) / (xj - xk)
                })
                .product()
        })
        .collect();
    (j0, weights)
}

/// Bicubic (cubic in `x` by cubic in `t`) Lagrange interpolation of the real
/// part of component `c`. Exact at nodes and for polynomials of degree three
/// in each variable.
pub fn interpolate(field: &FieldHistory, c: usize, x: f64, t: f64) -> Result<f64> {
    let g = field.grid();
    if c >= field.components() {
        return Err(Error::Dimension(format!("component {c} out of range")));
    }
    if !g.contains(x, t) {
        return Err(Error::Domain(format!("({x}, {t}) outside [{}, {}] x [{}, {}]", g.x_min(), g.x_max(), g.t0(), g.t_end())));
    }
    let sx = ((x - g.x_min()) / g.dx()).clamp(0.0, (g.nx() - 1) as f64);
    let st = ((t - g.t0()) / g.dt()).clamp(0.0, (g.nt() - 1) as f64);
    let (i0, wx) = lagrange_stencil(sx, g.nx());
    let (n0, wt) = lagrange_stencil(st, g.nt());
    let mut acc = 0.0;
    for (a, wta) in wt.iter().enumerate() {
        if *wta == 0.0 {
            continue;
        }
        let row = field.slice(c, n0 + a);
        let inner: f64 = wx.iter().enumerate().map(|(b, w)| w * row[i0 + b]).sum();
        acc += wta * inner;
    }
    Ok(acc)
}

/// Cubic interpolation of a single lattice level at `x`, honouring the
/// boundary condition: periodic wraps, reflecting mirrors, Dirichlet
/// rejects points outside the domain.
pub fn interpolate_level(values: &[f64], x_min: f64, dx: f64, x: f64, bc: &BoundaryCondition) -> Result<f64> {
    let nx = values.len();
    let s = (x - x_min) / dx;
    let s = if (s - s.round()).abs() < SNAP { s.round() } else { s };
    match bc {
        BoundaryCondition::Dirichlet(_) => {
            if s < -SNAP || s > (nx - 1) as f64 + SNAP {
                return Err(Error::Boundary(format!("x = {x} outside [{x_min}, {}]", x_min + dx * (nx - 1) as f64)));
            }
            let (j0, w) = lagrange_stencil(s.clamp(0.0, (nx - 1) as f64), nx);
            Ok(w.iter().enumerate().map(|(k, wk)| wk * values[j0 + k]).sum())
        }
        _ => {
            let base = s.floor();
            let frac = s - base;
            let base = base as isize;
            // nodes base-1 .. base+2, local coordinate frac + 1
            let local = frac + 1.0;
            let mut acc = 0.0;
            for j in 0..4 {
                let w: f64 = (0..4).filter(|&k| k != j).map(|k| (local - k as f64) / (j as f64 - k as f64)).product();
                if w != 0.0 {
                    let idx = bc.resolve(base - 1 + j as isize, nx).unwrap();
                    acc += w * values[idx];
                }
            }
            Ok(acc)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    Sup,
    L2,
}

/// Trapezoidal quadrature weight of node `i` among `n`.
fn trapezoid_weight(i: usize, n: usize) -> f64 {
    if n == 1 {
        1.0
    } else if i == 0 || i == n - 1 {
        0.5
    } else {
        1.0
    }
}

/// Sup norm, or the discrete L2 norm `sqrt(sum f^2 dx)` with trapezoidal
/// end weights.
pub fn grid_norm(f: &[f64], which: NormKind, dx: f64) -> Result<f64> {
    if f.is_empty() {
        return Err(Error::Dimension("norm of an empty array".into()));
    }
    Ok(match which {
        NormKind::Sup => f.iter().fold(0.0, |m, v| m.max(v.abs())),
        NormKind::L2 => {
            let n = f.len();
            let s: f64 = f.iter().enumerate().map(|(i, v)| trapezoid_weight(i, n) * v * v).sum();
            (s * dx).sqrt()
        }
    })
}

/// Discrete L1 norm `sum |f| dx` with trapezoidal end weights.
pub fn l1_norm(f: &[f64], dx: f64) -> Result<f64> {
    if f.is_empty() {
        return Err(Error::Dimension("norm of an empty array".into()));
    }
    let n = f.len();
    Ok(f.iter().enumerate().map(|(i, v)| trapezoid_weight(i, n) * v.abs()).sum::<f64>() * dx)
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn fitted_order(hs: &[f64], errs: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = hs.iter().zip(errs).filter(|(h, e)| **h > 0.0 && **e > 0.0).map(|(h, e)| (h.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: usize, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(0.0, 1.0, nx, 0.01, nt, 0.0).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_sizes() {
        assert!(matches!(SpaceTimeGrid::new(0.0, 1.0, 2, 0.1, 5, 0.0), Err(Error::Dimension(_))));
        assert!(matches!(SpaceTimeGrid::new(0.0, 1.0, 5, 0.1, 1, 0.0), Err(Error::Dimension(_))));
        assert!(matches!(SpaceTimeGrid::new(0.0, 1.0, 5, -0.1, 3, 0.0), Err(Error::Parameter(_))));
        let g = grid(11, 3);
        assert!((g.dx() - 0.1).abs() < 1e-15);
        assert!((g.x(10) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn second_derivative_of_constant_is_zero() {
        let f = vec![3.5; 20];
        for bc in [BoundaryCondition::Periodic, BoundaryCondition::Reflecting, BoundaryCondition::dirichlet(3.5, 3.5)] {
            let d = second_space_derivative(&f, 0.1, &bc).unwrap();
            assert!(d.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn second_derivative_exact_on_quadratics() {
        let dx = 0.125;
        let f: Vec<f64> = (0..17).map(|i| (i as f64 * dx).powi(2)).collect();
        let d = second_space_derivative(&f, dx, &BoundaryCondition::dirichlet(0.0, 4.0)).unwrap();
        for v in &d[1..16] {
            assert_eq!(*v, 2.0);
        }
    }

    #[test]
    fn second_derivative_of_sine() {
        let dx = 0.01;
        let xs: Vec<f64> = (0..629).map(|i| i as f64 * dx).collect();
        let f: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let d = second_space_derivative(&f, dx, &BoundaryCondition::Reflecting).unwrap();
        let err = (1..628).map(|i| (d[i] + xs[i].sin()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn second_derivative_needs_three_points() {
        assert!(matches!(second_space_derivative(&[1.0, 2.0], 0.1, &BoundaryCondition::Periodic), Err(Error::Dimension(_))));
    }

    #[test]
    fn stencil_converges_at_second_order() {
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for level in 0..4 {
            let nx = 20 * (1 << level);
            let dx = std::f64::consts::TAU / nx as f64;
            let f: Vec<f64> = (0..nx).map(|i| (i as f64 * dx).sin().exp()).collect();
            let d = second_space_derivative(&f, dx, &BoundaryCondition::Periodic).unwrap();
            let err = (0..nx)
                .map(|i| {
                    let x = i as f64 * dx;
                    let exact = x.sin().exp() * (x.cos().powi(2) - x.sin());
                    (d[i] - exact).abs()
                })
                .fold(0.0, f64::max);
            hs.push(dx);
            errs.push(err);
        }
        let p = fitted_order(&hs, &errs);
        assert!((1.9..=2.1).contains(&p), "order {p}");
    }

    #[test]
    fn interpolation_is_exact_at_nodes() {
        let g = grid(21, 9);
        let f = FieldHistory::from_fn(g, 1, |_, x, t| (3.0 * x).sin() + t * t * 7.0 + x.exp()).unwrap();
        for n in 0..9 {
            for i in 0..21 {
                assert_eq!(f.interpolate(0, g.x(i), g.t(n)).unwrap(), f.get(0, n, i));
            }
        }
    }

    #[test]
    fn interpolation_reproduces_bicubics() {
        let g = SpaceTimeGrid::new(-1.0, 2.0, 13, 0.1, 11, 0.5).unwrap();
        let p = |x: f64, t: f64| (1.0 + x - 2.0 * x * x + 0.5 * x.powi(3)) * (2.0 - t + 0.3 * t * t - 0.7 * t.powi(3));
        let f = FieldHistory::from_fn(g, 1, |_, x, t| p(x, t)).unwrap();
        for &(x, t) in &[(-0.93, 0.51), (0.37, 0.88), (1.99, 1.49), (0.0, 1.0), (1.234, 0.6789)] {
            let v = f.interpolate(0, x, t).unwrap();
            let exact = p(x, t);
            assert!((v - exact).abs() <= 1e-10 * exact.abs().max(1.0), "{v} vs {exact}");
        }
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let g = grid(11, 6);
        let f = FieldHistory::from_fn(g, 1, |_, x, t| 2.0 * x - 3.0 * t + 1.0).unwrap();
        let v = f.interpolate(0, 0.4321, 0.0333).unwrap();
        assert!((v - (2.0 * 0.4321 - 3.0 * 0.0333 + 1.0)).abs() < 1e-13);
    }

    #[test]
    fn interpolation_of_smooth_field_is_accurate() {
        let g = SpaceTimeGrid::new(0.0, 2.0, 201, 0.01, 101, 0.0).unwrap();
        let f = FieldHistory::from_fn(g, 1, |_, x, t| x.sin() * (-t).exp()).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..50 {
            let x = 0.013 + 0.0391 * k as f64;
            let t = 0.004 + 0.0197 * k as f64;
            worst = worst.max((f.interpolate(0, x, t).unwrap() - x.sin() * (-t).exp()).abs());
        }
        assert!(worst < 1e-6, "worst = {worst}");
    }

    #[test]
    fn interpolation_outside_hull_is_a_domain_error() {
        let g = grid(11, 6);
        let f = FieldHistory::real(g, 1).unwrap();
        assert!(matches!(f.interpolate(0, 1.2, 0.01), Err(Error::Domain(_))));
        assert!(matches!(f.interpolate(0, 0.5, -0.01), Err(Error::Domain(_))));
    }

    #[test]
    fn level_interpolation_wraps_and_mirrors() {
        let nx = 32;
        let dx = 1.0 / nx as f64;
        let vals: Vec<f64> = (0..nx).map(|i| (std::f64::consts::TAU * i as f64 * dx).cos()).collect();
        let v = interpolate_level(&vals, 0.0, dx, 1.0 - 0.5 * dx, &BoundaryCondition::Periodic).unwrap();
        assert!((v - (std::f64::consts::TAU * (1.0 - 0.5 * dx)).cos()).abs() < 1e-4);
        let w = interpolate_level(&vals, 0.0, dx, 3.0 * dx, &BoundaryCondition::Periodic).unwrap();
        assert_eq!(w, vals[3]);
        let bc = BoundaryCondition::dirichlet(0.0, 0.0);
        assert!(matches!(interpolate_level(&vals, 0.0, dx, -0.1, &bc), Err(Error::Boundary(_))));
    }

    #[test]
    fn norms() {
        assert_eq!(grid_norm(&[0.0; 5], NormKind::Sup, 0.1).unwrap(), 0.0);
        assert_eq!(grid_norm(&[0.0; 5], NormKind::L2, 0.1).unwrap(), 0.0);
        assert_eq!(grid_norm(&[3.0], NormKind::Sup, 0.1).unwrap(), 3.0);
        let nx = 101;
        let ones = vec![1.0; nx];
        let l2 = grid_norm(&ones, NormKind::L2, 1.0 / (nx - 1) as f64).unwrap();
        assert!((l2 - 1.0).abs() < 1e-12);
        assert!(matches!(grid_norm(&[], NormKind::Sup, 0.1), Err(Error::Dimension(_))));
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 5, 0.25, 3, 0.5).unwrap();
        let f = FieldHistory::from_fn(g, 2, |c, x, t| c as f64 + x * t).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), BINARY_HEADER_LEN + 2 * 3 * 5 * 8);
        let back = FieldHistory::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, f);

        let mut csv = Vec::new();
        f.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x,component,value"));
        assert_eq!(lines.count(), 2 * 3 * 5);
    }

    #[test]
    fn complex_binary_round_trip() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 4, 0.5, 2, 0.0).unwrap();
        let mut f = FieldHistory::zeros(g, 2, ScalarKind::Complex).unwrap();
        f.imag_slice_mut(1, 1).unwrap()[2] = -4.5;
        f.set(0, 0, 3, 1.25);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(FieldHistory::read_binary(buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn reflecting_resolution_mirrors_indices() {
        let bc = BoundaryCondition::Reflecting;
        assert_eq!(bc.resolve(-1, 5), Some(1));
        assert_eq!(bc.resolve(5, 5), Some(3));
        assert_eq!(BoundaryCondition::Periodic.resolve(-1, 5), Some(4));
        assert_eq!(BoundaryCondition::dirichlet(0.0, 0.0).resolve(-1, 5), None);
    }
}
