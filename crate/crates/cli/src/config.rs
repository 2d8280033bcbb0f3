//! Flat `key = value` experiment configuration.
//!
//! One entry per line; `#` starts a comment; blank lines are ignored. Keys
//! are checked against the schema of the selected scenario, so a misspelt
//! or irrelevant key is an error that names its line. Any key can be
//! overridden from the environment as `WALKLAB_<KEY>` (upper case).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use walklab::grid::DirichletValues;
use walklab::solvers::{DiffusivityLaw, MaxwellSource, PdeKind, Profile, TelegrapherForm};
use walklab::BoundaryCondition;

use crate::CliError;

pub const ENV_PREFIX: &str = "WALKLAB_";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Env(String),
    Flag(&'static str),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Env(var) => write!(f, "environment variable {var}"),
            Origin::Flag(flag) => write!(f, "flag {flag}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub value: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Simulate,
    Solve,
    SymmetryCheck,
    Similarity,
    Hodograph,
    FullReport,
}

impl Scenario {
    pub const ALL: [Scenario; 6] =
        [Scenario::Simulate, Scenario::Solve, Scenario::SymmetryCheck, Scenario::Similarity, Scenario::Hodograph, Scenario::FullReport];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Simulate => "simulate",
            Scenario::Solve => "solve",
            Scenario::SymmetryCheck => "symmetry-check",
            Scenario::Similarity => "similarity",
            Scenario::Hodograph => "hodograph",
            Scenario::FullReport => "full-report",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Scenario::Simulate => &["variant", "walkers", "seeds", "speed", "flip_rate", "initial", "directions", "tolerance", "compare"],
            Scenario::Solve => &[
                "equation",
                "v",
                "a",
                "mass",
                "c",
                "d",
                "law",
                "k",
                "form",
                "source",
                "initial",
                "initial2",
                "initial_imag",
                "initial2_imag",
                "velocity",
                "refine",
                "min_order",
                "tolerance",
            ],
            Scenario::SymmetryCheck => &[
                "algebra",
                "algebra_file",
                "m",
                "b",
                "v",
                "a",
                "equation",
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
            ],
            Scenario::Similarity => &["preset", "ode_points", "compare_solve", "tolerance", "solve_tolerance"],
            Scenario::Hodograph => &[
                "source",
                "law",
                "initial",
                "speed",
                "p_min",
                "p_max",
                "p_points",
                "slices",
                "slice_start",
                "refine",
                "min_order",
                "tolerance",
            ],
            Scenario::FullReport => &["walkers", "seeds", "epsilons", "ode_points"],
        }
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}; expected one of {}", Scenario::ALL.map(|s| s.name()).join(", ")))
    }
}

/// Keys accepted by every scenario.
const COMMON_KEYS: &[&str] = &["scenario", "name", "seed"];
/// Keys describing the space-time grid; every scenario but the full report
/// takes them.
const GRID_KEYS: &[&str] = &["x_min", "x_max", "nx", "dt", "nt", "t0", "bc"];

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Where the text came from, used in diagnostics.
    pub source: String,
    pub scenario: Scenario,
    entries: BTreeMap<String, Entry>,
}

impl ExperimentConfig {
    /// Parse and validate `text`. `env` supplies overrides (normally the
    /// process environment); `seed` is the `--seed` flag.
    pub fn parse(source: &str, text: &str, env: &[(String, String)], seed: Option<u64>) -> Result<Self, CliError> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Config(format!("{source}:{line}: {msg}"));
            let (key, value) = content.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
                return Err(err(format!("invalid key {key:?}; keys are lower-case letters, digits and underscores")));
            }
            if value.is_empty() {
                return Err(err(format!("key `{key}` has an empty value")));
            }
            if let Some(prev) = entries.get(key) {
                return Err(err(format!("duplicate key `{key}` (first set on {})", prev.origin)));
            }
            entries.insert(key.to_string(), Entry { value: value.to_string(), origin: Origin::Line(line) });
        }
        for (var, value) in env {
            if let Some(key) = var.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                entries.insert(key, Entry { value: value.trim().to_string(), origin: Origin::Env(var.clone()) });
            }
        }
        if let Some(s) = seed {
            entries.insert("seed".into(), Entry { value: s.to_string(), origin: Origin::Flag("--seed") });
        }
        let scenario_entry =
            entries.get("scenario").ok_or_else(|| CliError::Config(format!("{source}: missing required key `scenario`")))?;
        let scenario: Scenario =
            scenario_entry.value.parse().map_err(|m: String| CliError::Config(format!("{source}: {}: {m}", scenario_entry.origin)))?;
        for (key, entry) in &entries {
            let grid_key = GRID_KEYS.contains(&key.as_str()) && scenario != Scenario::FullReport;
            if !COMMON_KEYS.contains(&key.as_str()) && !grid_key && !scenario.keys().contains(&key.as_str()) {
                return Err(CliError::Config(format!("{source}: {}: unknown key `{key}` for scenario {}", entry.origin, scenario.name())));
            }
        }
        Ok(Self { source: source.to_string(), scenario, entries })
    }

    pub fn load(path: &Path, env: &[(String, String)], seed: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: cannot read: {e}", path.display())))?;
        Self::parse(&path.display().to_string(), &text, env, seed)
    }

    /// Effective configuration in canonical order.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, e)| format!("{k} = {}\n", e.value)).collect()
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn values(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect()
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Diagnostic anchored at the line (or override) that set `key`.
    pub fn error(&self, key: &str, msg: impl fmt::Display) -> CliError {
        match self.entries.get(key) {
            Some(e) => CliError::Config(format!("{}: {}: `{key}`: {msg}", self.source, e.origin)),
            None => CliError::Config(format!("{}: `{key}`: {msg}", self.source)),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.raw(key).ok_or_else(|| self.error(key, format!("required by scenario {}", self.scenario.name())))
    }

    /// Parse `key` with `FromStr`, falling back to `default` when absent.
    pub fn get<T: FromStr>(&self, key: &str, default: Option<T>) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            Some(v) => v.parse().map_err(|e| self.error(key, format!("cannot parse {v:?}: {e}"))),
            None => default.ok_or_else(|| self.error(key, format!("required by scenario {}", self.scenario.name()))),
        }
    }

    pub fn positive(&self, key: &str, default: Option<f64>) -> Result<f64, CliError> {
        let v: f64 = self.get(key, default)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(self.error(key, format!("must be a positive number, got {v}")));
        }
        Ok(v)
    }

    pub fn finite(&self, key: &str, default: Option<f64>) -> Result<f64, CliError> {
        let v: f64 = self.get(key, default)?;
        if !v.is_finite() {
            return Err(self.error(key, format!("must be finite, got {v}")));
        }
        Ok(v)
    }

    pub fn count(&self, key: &str, default: Option<usize>, min: usize) -> Result<usize, CliError> {
        let v: usize = self.get(key, default)?;
        if v < min {
            return Err(self.error(key, format!("must be at least {min}, got {v}")));
        }
        Ok(v)
    }

    pub fn flag(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some("yes" | "true" | "on") => Ok(true),
            Some("no" | "false" | "off") => Ok(false),
            Some(v) => Err(self.error(key, format!("expected yes/no, got {v:?}"))),
        }
    }

    /// Comma- or space-separated list of numbers.
    pub fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => {
                let items: Result<Vec<f64>, _> = v.split([',', ' ']).filter(|s| !s.is_empty()).map(str::parse).collect();
                let items = items.map_err(|e| self.error(key, format!("cannot parse list {v:?}: {e}")))?;
                if items.is_empty() || items.iter().any(|x| !x.is_finite()) {
                    return Err(self.error(key, "list must hold finite numbers"));
                }
                Ok(items)
            }
        }
    }

    /// One of `choices`, or `default` when absent.
    pub fn choice<'a>(&'a self, key: &str, choices: &[&str], default: Option<&'a str>) -> Result<&'a str, CliError> {
        let v = match self.raw(key) {
            Some(v) => v,
            None => default.ok_or_else(|| self.error(key, format!("required by scenario {}", self.scenario.name())))?,
        };
        if !choices.contains(&v) {
            return Err(self.error(key, format!("expected one of {}, got {v:?}", choices.join(", "))));
        }
        Ok(v)
    }

    pub fn profile(&self, key: &str, default: Option<&str>) -> Result<Profile, CliError> {
        let text = match self.raw(key) {
            Some(v) => v,
            None => default.ok_or_else(|| self.error(key, format!("required by scenario {}", self.scenario.name())))?,
        };
        parse_profile(text).map_err(|m| self.error(key, m))
    }

    pub fn law(&self, key: &str, default: Option<&str>) -> Result<DiffusivityLaw, CliError> {
        let text = match self.raw(key) {
            Some(v) => v,
            None => default.ok_or_else(|| self.error(key, format!("required by scenario {}", self.scenario.name())))?,
        };
        parse_law(text).map_err(|m| self.error(key, m))
    }

    pub fn boundary(&self) -> Result<BoundaryCondition, CliError> {
        let text = self.raw("bc").unwrap_or("periodic");
        let words: Vec<&str> = text.split_whitespace().collect();
        match words.as_slice() {
            ["periodic"] => Ok(BoundaryCondition::Periodic),
            ["reflecting"] => Ok(BoundaryCondition::Reflecting),
            ["dirichlet", l, r] => {
                let (l, r) = (l.parse::<f64>(), r.parse::<f64>());
                match (l, r) {
                    (Ok(left), Ok(right)) => Ok(BoundaryCondition::Dirichlet(DirichletValues::Constant { left, right })),
                    _ => Err(self.error("bc", "dirichlet needs two numbers")),
                }
            }
            _ => Err(self.error("bc", format!("expected periodic, reflecting or `dirichlet LEFT RIGHT`, got {text:?}"))),
        }
    }

    pub fn grid(&self) -> Result<walklab::SpaceTimeGrid, CliError> {
        let x_min = self.finite("x_min", None)?;
        let x_max = self.finite("x_max", None)?;
        let nx = self.count("nx", None, 3)?;
        let dt = self.positive("dt", None)?;
        let nt = self.count("nt", None, 2)?;
        let t0 = self.finite("t0", Some(0.0))?;
        walklab::SpaceTimeGrid::new(x_min, x_max, nx, dt, nt, t0).map_err(|e| self.error("nx", e))
    }

    /// Equation selected by `equation` and its parameters.
    pub fn equation(&self) -> Result<PdeKind, CliError> {
        let name = self.choice("equation", &EQUATIONS, None)?;
        let v = || self.finite("v", Some(1.0));
        let a = || self.finite("a", Some(1.0));
        Ok(match name {
            "two-speed" => PdeKind::TwoSpeed { v: v()?, a: a()? },
            "telegrapher" => PdeKind::Telegrapher { v: v()?, a: a()? },
            "dirac" => PdeKind::Dirac { m: self.finite("mass", Some(1.0))?, c: self.positive("c", Some(1.0))? },
            "diffusion" => PdeKind::Diffusion { d: self.positive("d", Some(1.0))? },
            "maxwell" => PdeKind::MaxwellPotentials { c: self.positive("c", Some(1.0))?, source: self.source()? },
            "nonlinear-diffusion" => PdeKind::NonlinearDiffusion { law: self.law("law", None)?, k: self.get("k", Some(1u8))? },
            "conservative-diffusion" => PdeKind::ConservativeDiffusion { law: self.law("law", None)? },
            "nonlinear-dirac" => PdeKind::NonlinearDiracSystem { v: v()?, a: a()? },
            "nonlinear-telegrapher" => {
                let form = match self.choice("form", &["printed", "derived"], Some("derived"))? {
                    "printed" => TelegrapherForm::Printed,
                    _ => TelegrapherForm::Derived,
                };
                PdeKind::NonlinearTelegrapher { v: v()?, a: a()?, form }
            }
            _ => unreachable!("choice() validated the name"),
        })
    }

    fn source(&self) -> Result<MaxwellSource, CliError> {
        let text = self.raw("source").unwrap_or("zero");
        let words: Vec<&str> = text.split_whitespace().collect();
        let nums = |w: &[&str]| -> Result<Vec<f64>, CliError> {
            w.iter().map(|s| s.parse::<f64>().map_err(|e| self.error("source", format!("{s:?}: {e}")))).collect()
        };
        match words.as_slice() {
            ["zero"] => Ok(MaxwellSource::zero()),
            ["sine", rest @ ..] if rest.len() == 3 => {
                let n = nums(rest)?;
                Ok(MaxwellSource::traveling_sine(n[0], n[1], n[2]))
            }
            ["pulse", rest @ ..] if rest.len() == 4 => {
                let n = nums(rest)?;
                Ok(MaxwellSource::gaussian_pulse(n[0], n[1], n[2], n[3]))
            }
            _ => Err(self.error("source", "expected `zero`, `sine AMP K OMEGA` or `pulse AMP X0 WIDTH OMEGA`")),
        }
    }
}

pub const EQUATIONS: [&str; 9] = [
    "two-speed",
    "telegrapher",
    "dirac",
    "diffusion",
    "maxwell",
    "nonlinear-diffusion",
    "conservative-diffusion",
    "nonlinear-dirac",
    "nonlinear-telegrapher",
];

/// `TERM [+ TERM ...]` where a term is `zero`, `constant C`,
/// `gaussian CENTER WIDTH MASS`, `delta X0 MASS`, `linear A B` (`A + B x`)
/// or `erf CENTER WIDTH` (`erf((x − CENTER)/WIDTH)`).
pub fn parse_profile(text: &str) -> Result<Profile, String> {
    let mut terms = Vec::new();
    for term in text.split('+') {
        let words: Vec<&str> = term.split_whitespace().collect();
        let (head, rest) = words.split_first().ok_or_else(|| format!("empty term in profile {text:?}"))?;
        let nums: Vec<f64> = rest.iter().map(|s| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"))).collect::<Result<_, _>>()?;
        let arity = |n: usize| {
            if nums.len() == n && nums.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(format!("`{head}` takes {n} finite number(s), got {:?}", rest))
            }
        };
        let p = match *head {
            "zero" => {
                arity(0)?;
                Profile::Zero
            }
            "constant" => {
                arity(1)?;
                Profile::Constant(nums[0])
            }
            "gaussian" => {
                arity(3)?;
                if nums[1] <= 0.0 {
                    return Err(format!("gaussian width must be positive, got {}", nums[1]));
                }
                Profile::Gaussian { center: nums[0], width: nums[1], mass: nums[2] }
            }
            "delta" => {
                arity(2)?;
                Profile::Delta { x0: nums[0], mass: nums[1] }
            }
            "linear" => {
                arity(2)?;
                let (a, b) = (nums[0], nums[1]);
                Profile::custom(move |x| a + b * x)
            }
            "erf" => {
                arity(2)?;
                if nums[1] <= 0.0 {
                    return Err(format!("erf width must be positive, got {}", nums[1]));
                }
                let (c, w) = (nums[0], nums[1]);
                Profile::custom(move |x| libm::erf((x - c) / w))
            }
            other => return Err(format!("unknown profile term {other:?}; expected zero, constant, gaussian, delta, linear or erf")),
        };
        terms.push(p);
    }
    if terms.len() == 1 {
        return Ok(terms.pop().expect("one term"));
    }
    if terms.iter().any(|t| matches!(t, Profile::Delta { .. })) {
        return Err("a delta cannot be combined with other terms".into());
    }
    Ok(Profile::Custom(std::sync::Arc::new(move |x| terms.iter().map(|t| profile_value(t, x).unwrap_or(0.0)).sum())))
}

/// Value of a profile at `x`; `None` for a delta.
pub fn profile_value(p: &Profile, x: f64) -> Option<f64> {
    Some(match p {
        Profile::Zero => 0.0,
        Profile::Constant(c) => *c,
        Profile::Gaussian { center, width, mass } => {
            mass / ((2.0 * std::f64::consts::PI).sqrt() * width) * (-(x - center).powi(2) / (2.0 * width * width)).exp()
        }
        Profile::Custom(f) => f(x),
        Profile::Delta { .. } => return None,
    })
}

/// `constant D` or `power A B M` for `A (P + B)^M`.
pub fn parse_law(text: &str) -> Result<DiffusivityLaw, String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let nums = |w: &[&str]| -> Result<Vec<f64>, String> { w.iter().map(|s| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"))).collect() };
    match words.as_slice() {
        ["constant", d] => Ok(DiffusivityLaw::Constant(nums(&[d])?[0])),
        ["power", rest @ ..] if rest.len() == 3 => {
            let n = nums(rest)?;
            Ok(DiffusivityLaw::PowerLaw { a: n[0], b: n[1], m: n[2] })
        }
        _ => Err(format!("expected `constant D` or `power A B M`, got {text:?}")),
    }
}
