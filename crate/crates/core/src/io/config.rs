//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Every key is optional. `serialize` writes every key in a fixed order, so
//! parse → serialize → parse is the identity.
//!
//! | key | default | values |
//! |---|---|---|
//! | `dim` | 2 | 2 or 3 |
//! | `shape` | 32 per axis (16 in 3D) | comma-separated cell counts |
//! | `extent` | 1 per axis | comma-separated side lengths |
//! | `bc` | `box` | `box`, `periodic` |
//! | `alpha` | 0.5 | ≥ 0 |
//! | `c_s` | 1 | > 0 |
//! | `kappa` | 1 | convection strength |
//! | `epsilon` | 0 | Yosida parameter ≥ 0 |
//! | `sensitivity` | `scalar` | `scalar`, `diagonal`, `rotational` |
//! | `sensitivity_scales` | 1,1,1 | diagonal entries, \|s\| ≤ 1 |
//! | `sensitivity_angle` | 0 | rotation angle (radians) |
//! | `sensitivity_axis` | 0,0,1 | rotation axis (3D) |
//! | `phi` | `zero` | `zero`, `gravity`, `linear_x`, `cosine` |
//! | `phi_strength` | 1 | potential amplitude |
//! | `cutoff_margin` | 0 | boundary cutoff margin in [0, 0.5) |
//! | `energy_a`, `energy_b` | 1, 1 | energy weights |
//! | `preset` | `gaussian_blobs` | `gaussian_blobs`, `random_smooth`, `homogeneous` |
//! | `homogeneous_n`, `homogeneous_m`, `homogeneous_c` | 1, 0.5, 0 | uniform values |
//! | `advection` | `upwind1` | `upwind1`, `central2` |
//! | `dt_safety` | 0.4 | in (0, 1] |
//! | `clip_negatives` | `false` | `true`, `false` |
//! | `T` | 1 | final time ≥ 0 |
//! | `dt` | `auto` | `auto` or a fixed step |
//! | `dt_max` | `none` | `none` or a cap on automatic steps |
//! | `seed` | 0 | seed for `random_smooth` |
//! | `snapshot_every` | 10 | steps between snapshots |
//! | `output_dir` | `out` | run directory |
//! | `solver` | `auto` | `auto`, `spectral_periodic`, `spectral_neumann`, `cg` |
//! | `tol` | 1e-10 | solver tolerance |
//! | `max_iter` | 10000 | solver iteration cap |

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::diagnostics::EnergyCoeffs;
use crate::fluid::{PoissonMethod, PoissonSolver};
use crate::grid::{BcMode, Grid};
use crate::model::{ModelError, ModelParams, PotentialPreset, Preset, SensitivityKind};
use crate::stepper::{Advection, RunControl, StepScheme};

#[derive(Clone, Debug, Error, PartialEq)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhiKind {
    Zero,
    Gravity,
    LinearX,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetKind {
    GaussianBlobs,
    RandomSmooth,
    Homogeneous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub shape: Vec<usize>,
    pub extent: Vec<f64>,
    pub bc: BcMode,
    pub alpha: f64,
    pub c_s: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub sensitivity: SensitivityKind,
    pub phi: PhiKind,
    pub phi_strength: f64,
    pub cutoff_margin: f64,
    pub energy: EnergyCoeffs,
    pub preset: PresetKind,
    pub homogeneous: [f64; 3],
    pub advection: Advection,
    pub dt_safety: f64,
    pub clip_negatives: bool,
    pub run_t: f64,
    pub dt: Option<f64>,
    pub dt_max: Option<f64>,
    pub seed: u64,
    pub snapshot_every: usize,
    pub output_dir: PathBuf,
    /// `None` picks the spectral method matching `bc`.
    pub solver: Option<PoissonMethod>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 2,
            shape: vec![32, 32],
            extent: vec![1.0, 1.0],
            bc: BcMode::Box,
            alpha: 0.5,
            c_s: 1.0,
            kappa: 1.0,
            epsilon: 0.0,
            sensitivity: SensitivityKind::ScalarDecay,
            phi: PhiKind::Zero,
            phi_strength: 1.0,
            cutoff_margin: 0.0,
            energy: EnergyCoeffs::default(),
            preset: PresetKind::GaussianBlobs,
            homogeneous: [1.0, 0.5, 0.0],
            advection: Advection::Upwind1,
            dt_safety: 0.4,
            clip_negatives: false,
            run_t: 1.0,
            dt: None,
            dt_max: None,
            seed: 0,
            snapshot_every: 10,
            output_dir: PathBuf::from("out"),
            solver: None,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

const KEYS: [&str; 36] = [
    "dim",
    "shape",
    "extent",
    "bc",
    "alpha",
    "c_s",
    "kappa",
    "epsilon",
    "sensitivity",
    "sensitivity_scales",
    "sensitivity_angle",
    "sensitivity_axis",
    "phi",
    "phi_strength",
    "cutoff_margin",
    "energy_a",
    "energy_b",
    "preset",
    "homogeneous_n",
    "homogeneous_m",
    "homogeneous_c",
    "advection",
    "dt_safety",
    "clip_negatives",
    "T",
    "dt",
    "dt_max",
    "seed",
    "snapshot_every",
    "output_dir",
    "solver",
    "tol",
    "max_iter",
    // accepted aliases
    "run_T",
    "method",
    "solver_tol",
];

fn canonical(key: &str) -> &str {
    match key {
        "run_T" => "T",
        "method" => "solver",
        "solver_tol" => "tol",
        k => k,
    }
}

/// A decimal number or a fraction `a/b` (so `alpha = 1/12` is exact).
pub fn num(v: &str) -> Result<f64, String> {
    let bad = || format!("expected a number, got {v:?}");
    let x: f64 = match v.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => v.parse().map_err(|_| bad())?,
    };
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("expected a finite number, got {v:?}"))
    }
}

fn int<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    v.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(f).collect()
}

fn triple(v: &str) -> Result<[f64; 3], String> {
    let l = list(v, num)?;
    match l.len() {
        2 => Ok([l[0], l[1], 0.0]),
        3 => Ok([l[0], l[1], l[2]]),
        k => Err(format!("expected 2 or 3 numbers, got {k}")),
    }
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn choice<T: Copy>(v: &str, options: &[(&str, T)]) -> Result<T, String> {
    options.iter().find(|(k, _)| *k == v).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(k, _)| *k).collect();
        format!("expected one of {}, got {v:?}", names.join(", "))
    })
}

fn opt_num(v: &str, none: &str) -> Result<Option<f64>, String> {
    if v == none {
        Ok(None)
    } else {
        num(v).map(Some)
    }
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Default)]
struct SensitivityParts {
    kind: Option<&'static str>,
    scales: Option<[f64; 3]>,
    angle: Option<f64>,
    axis: Option<[f64; 3]>,
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut lines: HashMap<&'static str, usize> = HashMap::new();
    let mut sens = SensitivityParts::default();
    let mut shape_set = false;
    let mut extent_set = false;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let err = |message: String| ConfigError { line: Some(lineno), message };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        let key = KEYS
            .iter()
            .find(|k| **k == key)
            .map(|k| canonical(k))
            .ok_or_else(|| err(format!("unknown key {key:?}")))?;
        let key: &'static str = KEYS.iter().find(|k| **k == key).unwrap();
        if lines.insert(key, lineno).is_some() {
            return Err(err(format!("duplicate key {key:?}")));
        }
        let wrap = |r: Result<(), String>| r.map_err(|m| err(format!("{key}: {m}")));
        wrap((|| {
            match key {
                "dim" => cfg.dim = int(value)?,
                "shape" => {
                    cfg.shape = list(value, int)?;
                    shape_set = true;
                }
                "extent" => {
                    cfg.extent = list(value, num)?;
                    extent_set = true;
                }
                "bc" => cfg.bc = choice(value, &[("box", BcMode::Box), ("periodic", BcMode::Periodic)])?,
                "alpha" => cfg.alpha = num(value)?,
                "c_s" => cfg.c_s = num(value)?,
                "kappa" => cfg.kappa = num(value)?,
                "epsilon" => cfg.epsilon = num(value)?,
                "sensitivity" => {
                    sens.kind = Some(choice(
                        value,
                        &[("scalar", "scalar"), ("diagonal", "diagonal"), ("rotational", "rotational")],
                    )?)
                }
                "sensitivity_scales" => sens.scales = Some(triple(value)?),
                "sensitivity_angle" => sens.angle = Some(num(value)?),
                "sensitivity_axis" => sens.axis = Some(triple(value)?),
                "phi" => {
                    cfg.phi = choice(
                        value,
                        &[
                            ("zero", PhiKind::Zero),
                            ("gravity", PhiKind::Gravity),
                            ("linear_x", PhiKind::LinearX),
                            ("cosine", PhiKind::Cosine),
                        ],
                    )?
                }
                "phi_strength" => cfg.phi_strength = num(value)?,
                "cutoff_margin" => cfg.cutoff_margin = num(value)?,
                "energy_a" => cfg.energy.a = num(value)?,
                "energy_b" => cfg.energy.b = num(value)?,
                "preset" => {
                    cfg.preset = choice(
                        value,
                        &[
                            ("gaussian_blobs", PresetKind::GaussianBlobs),
                            ("random_smooth", PresetKind::RandomSmooth),
                            ("homogeneous", PresetKind::Homogeneous),
                        ],
                    )?
                }
                "homogeneous_n" => cfg.homogeneous[0] = num(value)?,
                "homogeneous_m" => cfg.homogeneous[1] = num(value)?,
                "homogeneous_c" => cfg.homogeneous[2] = num(value)?,
                "advection" => {
                    cfg.advection =
                        choice(value, &[("upwind1", Advection::Upwind1), ("central2", Advection::Central2)])?
                }
                "dt_safety" => cfg.dt_safety = num(value)?,
                "clip_negatives" => cfg.clip_negatives = boolean(value)?,
                "T" => cfg.run_t = num(value)?,
                "dt" => cfg.dt = opt_num(value, "auto")?,
                "dt_max" => cfg.dt_max = opt_num(value, "none")?,
                "seed" => cfg.seed = int(value)?,
                "snapshot_every" => cfg.snapshot_every = int(value)?,
                "output_dir" => {
                    if value.is_empty() {
                        return Err("must not be empty".into());
                    }
                    cfg.output_dir = PathBuf::from(value)
                }
                "solver" => {
                    cfg.solver = choice(
                        value,
                        &[
                            ("auto", None),
                            ("spectral_periodic", Some(PoissonMethod::SpectralPeriodic)),
                            ("spectral_neumann", Some(PoissonMethod::SpectralNeumann)),
                            ("cg", Some(PoissonMethod::ConjugateGradientNeumann)),
                        ],
                    )?
                }
                "tol" => cfg.tol = num(value)?,
                "max_iter" => cfg.max_iter = int(value)?,
                _ => unreachable!("key table and match arms agree"),
            }
            Ok(())
        })())?;
    }
    if !shape_set {
        cfg.shape = vec![if cfg.dim == 3 { 16 } else { 32 }; cfg.dim];
    }
    if !extent_set {
        cfg.extent = vec![1.0; cfg.dim];
    }
    cfg.sensitivity = match sens.kind.unwrap_or("scalar") {
        "diagonal" => SensitivityKind::DiagonalDecay { scales: sens.scales.unwrap_or([1.0; 3]) },
        "rotational" => SensitivityKind::RotationalDecay {
            angle: sens.angle.unwrap_or(0.0),
            axis: sens.axis.unwrap_or([0.0, 0.0, 1.0]),
        },
        _ => SensitivityKind::ScalarDecay,
    };
    validate(&cfg, &lines)?;
    Ok(cfg)
}

/// Replaces individual keys of an existing configuration with `key=value`
/// strings, then revalidates.
pub fn apply_overrides(cfg: &RunConfig, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    if overrides.is_empty() {
        return Ok(cfg.clone());
    }
    let key_of = |line: &str| line.split_once('=').map(|(k, _)| canonical(k.trim()).to_string());
    let mut replaced = Vec::new();
    for o in overrides {
        let k =
            key_of(o).ok_or_else(|| ConfigError { line: None, message: format!("override {o:?} is not key=value") })?;
        if replaced.contains(&k) {
            return Err(ConfigError { line: None, message: format!("key {k:?} overridden twice") });
        }
        replaced.push(k);
    }
    let mut text: String = cfg
        .serialize()
        .lines()
        .filter(|l| key_of(l).is_none_or(|k| !replaced.contains(&k)))
        .map(|l| format!("{l}\n"))
        .collect();
    let first_override = text.lines().count() + 1;
    for o in overrides {
        text.push_str(o);
        text.push('\n');
    }
    parse_config(&text).map_err(|e| match e.line {
        Some(l) if l >= first_override => {
            ConfigError { line: None, message: format!("override {:?}: {}", overrides[l - first_override], e.message) }
        }
        _ => ConfigError { line: None, message: e.message },
    })
}

fn validate(cfg: &RunConfig, lines: &HashMap<&'static str, usize>) -> Result<(), ConfigError> {
    let at =
        |keys: &[&str], message: String| ConfigError { line: keys.iter().find_map(|k| lines.get(k).copied()), message };
    let grid = cfg.grid().map_err(|e| at(&["shape", "extent", "dim"], e))?;
    let params = cfg.params(grid);
    params.validate().map_err(|e| {
        let key: &[&str] = match e {
            ModelError::Alpha(_) => &["alpha"],
            ModelError::SensitivityConstant(_) => &["c_s"],
            ModelError::Epsilon(_) => &["epsilon"],
            ModelError::CutoffMargin(_) => &["cutoff_margin"],
            ModelError::FinalTime(_) => &["T"],
            ModelError::Kappa(_) => &["kappa"],
            ModelError::Potential => &["phi_strength", "phi"],
            ModelError::DiagonalScale(_) => &["sensitivity_scales"],
            ModelError::RotationAxis => &["sensitivity_axis", "sensitivity_angle"],
            _ => &[],
        };
        at(key, e.to_string())
    })?;
    cfg.scheme().validate().map_err(|e| at(&["dt_safety"], e.to_string()))?;
    if let Some(d) = cfg.dt {
        if !(d > 0.0) {
            return Err(at(&["dt"], format!("dt must be > 0, got {d}")));
        }
    }
    if let Some(d) = cfg.dt_max {
        if !(d > 0.0) {
            return Err(at(&["dt_max"], format!("dt_max must be > 0, got {d}")));
        }
    }
    if cfg.snapshot_every == 0 {
        return Err(at(&["snapshot_every"], "snapshot_every must be >= 1".into()));
    }
    if cfg.homogeneous.iter().any(|v| *v < 0.0) {
        return Err(at(&["homogeneous_n", "homogeneous_m", "homogeneous_c"], "homogeneous values must be >= 0".into()));
    }
    cfg.solver(grid).map_err(|e| at(&["solver", "tol", "max_iter", "bc"], e.to_string()))?;
    Ok(())
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid, String> {
        if self.shape.len() != self.dim || self.extent.len() != self.dim {
            return Err(format!(
                "shape and extent need {} entries, got {} and {}",
                self.dim,
                self.shape.len(),
                self.extent.len()
            ));
        }
        Grid::new(self.dim, &self.shape, &self.extent, self.bc).map_err(|e| e.to_string())
    }

    pub fn potential(&self) -> PotentialPreset {
        let strength = self.phi_strength;
        match self.phi {
            PhiKind::Zero => PotentialPreset::Zero,
            PhiKind::Gravity => PotentialPreset::Gravity { strength },
            PhiKind::LinearX => PotentialPreset::LinearX { strength },
            PhiKind::Cosine => PotentialPreset::Cosine { strength },
        }
    }

    pub fn params(&self, grid: Grid) -> ModelParams {
        ModelParams {
            alpha: self.alpha,
            c_s: self.c_s,
            kappa: self.kappa,
            epsilon: self.epsilon,
            sensitivity: self.sensitivity,
            phi: self.potential().sample(grid),
            run_t: self.run_t,
            cutoff_margin: self.cutoff_margin,
        }
    }

    pub fn scheme(&self) -> StepScheme {
        StepScheme { advection: self.advection, dt_safety: self.dt_safety, clip_negatives: self.clip_negatives }
    }

    pub fn initial_preset(&self) -> Preset {
        let [n0, m0, c0] = self.homogeneous;
        match self.preset {
            PresetKind::GaussianBlobs => Preset::GaussianBlobs,
            PresetKind::RandomSmooth => Preset::RandomSmooth { seed: self.seed },
            PresetKind::Homogeneous => Preset::HomogeneousPair { n0, m0, c0 },
        }
    }

    pub fn method(&self) -> PoissonMethod {
        self.solver.unwrap_or(PoissonMethod::spectral_for(self.bc))
    }

    pub fn solver(&self, grid: Grid) -> Result<PoissonSolver, crate::fluid::FluidError> {
        PoissonSolver::new(grid, self.method(), self.tol, self.max_iter)
    }

    pub fn control(&self) -> RunControl {
        RunControl { dt: self.dt, dt_max: self.dt_max, snapshot_every: self.snapshot_every, coeffs: self.energy }
    }

    /// Every key in canonical order.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dim", self.dim.to_string());
        kv("shape", fmt_list(&self.shape));
        kv("extent", fmt_list(&self.extent));
        kv("bc", self.bc.name().to_string());
        kv("alpha", self.alpha.to_string());
        kv("c_s", self.c_s.to_string());
        kv("kappa", self.kappa.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("sensitivity", self.sensitivity.name().to_string());
        match self.sensitivity {
            SensitivityKind::ScalarDecay => {}
            SensitivityKind::DiagonalDecay { scales } => kv("sensitivity_scales", fmt_list(&scales)),
            SensitivityKind::RotationalDecay { angle, axis } => {
                kv("sensitivity_angle", angle.to_string());
                kv("sensitivity_axis", fmt_list(&axis));
            }
        }
        let phi = match self.phi {
            PhiKind::Zero => "zero",
            PhiKind::Gravity => "gravity",
            PhiKind::LinearX => "linear_x",
            PhiKind::Cosine => "cosine",
        };
        kv("phi", phi.to_string());
        kv("phi_strength", self.phi_strength.to_string());
        kv("cutoff_margin", self.cutoff_margin.to_string());
        kv("energy_a", self.energy.a.to_string());
        kv("energy_b", self.energy.b.to_string());
        let preset = match self.preset {
            PresetKind::GaussianBlobs => "gaussian_blobs",
            PresetKind::RandomSmooth => "random_smooth",
            PresetKind::Homogeneous => "homogeneous",
        };
        kv("preset", preset.to_string());
        kv("homogeneous_n", self.homogeneous[0].to_string());
        kv("homogeneous_m", self.homogeneous[1].to_string());
        kv("homogeneous_c", self.homogeneous[2].to_string());
        kv("advection", self.advection.name().to_string());
        kv("dt_safety", self.dt_safety.to_string());
        kv("clip_negatives", self.clip_negatives.to_string());
        kv("T", self.run_t.to_string());
        kv("dt", self.dt.map_or("auto".into(), |d| d.to_string()));
        kv("dt_max", self.dt_max.map_or("none".into(), |d| d.to_string()));
        kv("seed", self.seed.to_string());
        kv("snapshot_every", self.snapshot_every.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("solver", self.solver.map_or("auto", |m| m.name()).to_string());
        kv("tol", self.tol.to_string());
        kv("max_iter", self.max_iter.to_string());
        s
    }
}
