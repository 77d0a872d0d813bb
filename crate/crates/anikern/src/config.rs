//! Experiment configuration: one JSON document per invocation, validated in
//! full before anything is computed or written.

use std::path::{Path, PathBuf};

use anikern_core::aniso::Symbol;
use anikern_core::grid::AnisoGrid;
use anikern_core::kernel::{frequency_box, FloatMode, DEFAULT_THRESHOLD};
use anikern_core::operator::CoefficientField;
use serde::{Deserialize, Serialize};

use crate::checks::Check;
use crate::formats::{read_json, CoefficientSpec, GridSpec, SymbolSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub symbol: Option<SymbolSpec>,
    #[serde(default)]
    pub symbol_file: Option<PathBuf>,
    #[serde(default)]
    pub coefficients: Option<CoefficientSpec>,
    #[serde(default)]
    pub coefficients_file: Option<PathBuf>,
    pub grid: GridSpec,
    /// Frequency-grid intervals per axis; derived from the Nyquist limit when absent.
    #[serde(default)]
    pub freq_counts: Option<Vec<usize>>,
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub lambdas: Vec<Vec<f64>>,
    #[serde(default)]
    pub kappa: Option<u32>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub checks: Vec<String>,
    /// Box on which the twist is the identity, as two opposite corners.
    #[serde(default)]
    pub anchors: Option<(Vec<f64>, Vec<f64>)>,
    #[serde(default)]
    pub twist_order: Option<u32>,
    /// Shift `C` making `Q + C` comparable with the reference form.
    #[serde(default)]
    pub shift: Option<f64>,
    #[serde(default)]
    pub family_size: Option<usize>,
}

/// One validation problem, tied to the offending field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Issue {
    pub field: String,
    pub message: String,
}

fn issue(field: &str, message: impl Into<String>) -> Issue {
    Issue { field: field.into(), message: message.into() }
}

/// A configuration that passed every check, with its built objects.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub symbol: Symbol,
    pub grid: AnisoGrid,
    pub coefficients: Option<CoefficientField>,
    pub freq_counts: Vec<usize>,
    pub checks: Vec<Check>,
    pub float_mode: FloatMode,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub dim: usize,
    pub m: Vec<u32>,
    pub mu: String,
    pub kappa: u32,
    pub symbol_hash: String,
    pub freq_counts: Vec<usize>,
    /// Per time: whether the frequency grid satisfies the Nyquist limit on every axis.
    pub nyquist: Vec<(f64, bool)>,
    pub checks: Vec<String>,
    pub has_coefficients: bool,
}

impl Experiment {
    pub fn diagnostics(&self) -> Diagnostics {
        let w = self.symbol.weights();
        let nyquist = self
            .config
            .times
            .iter()
            .map(|&t| (t, nyquist_ok(&self.symbol, &self.grid, &self.freq_counts, t)))
            .collect();
        Diagnostics {
            dim: w.dim(),
            m: w.as_slice().to_vec(),
            mu: w.homogeneous_order().to_string(),
            kappa: w.kappa(),
            symbol_hash: self.symbol.digest(),
            freq_counts: self.freq_counts.clone(),
            nyquist,
            checks: self.checks.iter().map(|c| c.name().to_string()).collect(),
            has_coefficients: self.coefficients.is_some(),
        }
    }
}

fn nyquist_ok(s: &Symbol, grid: &AnisoGrid, counts: &[usize], t: f64) -> bool {
    match frequency_box(s, t, DEFAULT_THRESHOLD) {
        Ok(l) => (0..grid.dim()).all(|k| 2.0 * l[k] / counts[k] as f64 <= std::f64::consts::PI / grid.radii()[k]),
        Err(_) => false,
    }
}

/// Smallest power of two (at least 64) meeting the Nyquist limit at the smallest time.
fn derived_freq_counts(s: &Symbol, grid: &AnisoGrid, times: &[f64]) -> Vec<usize> {
    let t_min = times.iter().copied().fold(1.0f64, f64::min);
    let l = frequency_box(s, t_min, DEFAULT_THRESHOLD).unwrap_or_else(|_| vec![1.0; grid.dim()]);
    (0..grid.dim())
        .map(|k| {
            let need = 2.0 * l[k] * grid.radii()[k] / std::f64::consts::PI;
            (need.ceil() as usize).max(64).next_power_of_two()
        })
        .collect()
}

pub fn float_mode_from_env() -> Result<FloatMode, Issue> {
    match std::env::var("ANIKERN_FLOAT_MODE") {
        Err(_) => Ok(FloatMode::Strict),
        Ok(v) => FloatMode::parse(&v).ok_or_else(|| issue("ANIKERN_FLOAT_MODE", format!("expected strict or fast, got {v:?}"))),
    }
}

/// Overrides taken from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Checks implied by the subcommand, replacing the config list.
    pub checks: Option<Vec<Check>>,
}

/// Parses and validates `path`. Never touches the filesystem beyond reading
/// the config and the files it references.
pub fn load(path: &Path, overrides: &Overrides) -> Result<Experiment, Vec<Issue>> {
    let config: ExperimentConfig = read_json(path).map_err(|e| vec![issue("config", e.to_string())])?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    validate(config, &base, overrides)
}

pub fn validate(mut config: ExperimentConfig, base: &Path, overrides: &Overrides) -> Result<Experiment, Vec<Issue>> {
    let mut issues = Vec::new();
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    let float_mode = float_mode_from_env().unwrap_or_else(|i| {
        issues.push(i);
        FloatMode::Strict
    });

    let grid = match config.grid.build() {
        Ok(g) => Some(g),
        Err(e) => {
            let msg = if config.grid.counts.iter().any(|c| c % 2 == 1) { "counts must be even".to_string() } else { e.to_string() };
            issues.push(issue("grid", msg));
            None
        }
    };

    let coeff_spec = match (&config.coefficients, &config.coefficients_file) {
        (Some(_), Some(_)) => {
            issues.push(issue("coefficients", "give either coefficients or coefficients_file"));
            None
        }
        (Some(c), None) => Some((c.clone(), base.to_path_buf())),
        (None, Some(p)) => {
            let p = base.join(p);
            match read_json::<CoefficientSpec>(&p) {
                Ok(c) => Some((c, p.parent().unwrap_or(Path::new(".")).to_path_buf())),
                Err(e) => {
                    issues.push(issue("coefficients_file", e.to_string()));
                    None
                }
            }
        }
        (None, None) => None,
    };
    if let Some((spec, dir)) = &coeff_spec {
        for p in spec.blob_paths(dir) {
            if !p.is_file() {
                issues.push(issue("coefficients", format!("missing coefficient file {}", p.display())));
            }
        }
    }
    let coefficients = match (&coeff_spec, &grid) {
        (Some((spec, dir)), Some(g)) if issues.is_empty() => match spec.build(g, dir) {
            Ok(f) => Some(f),
            Err(e) => {
                issues.push(issue("coefficients", e.to_string()));
                None
            }
        },
        _ => None,
    };

    let symbol_spec = match (&config.symbol, &config.symbol_file) {
        (Some(_), Some(_)) => {
            issues.push(issue("symbol", "give either symbol or symbol_file"));
            None
        }
        (Some(s), None) => Some(s.clone()),
        (None, Some(p)) => match read_json::<SymbolSpec>(&base.join(p)) {
            Ok(s) => Some(s),
            Err(e) => {
                issues.push(issue("symbol_file", e.to_string()));
                None
            }
        },
        (None, None) => None,
    };
    let symbol = match (symbol_spec, &coeff_spec) {
        (Some(s), _) => match s.build() {
            Ok(s) => Some(s),
            Err(e) => {
                issues.push(issue("symbol", e.to_string()));
                None
            }
        },
        (None, Some((c, _))) => match c.reference() {
            Ok(r) => Some(r.symbol().clone()),
            Err(e) => {
                issues.push(issue("coefficients.reference", e.to_string()));
                None
            }
        },
        (None, None) => {
            if coeff_spec.is_none() && issues.iter().all(|i| !i.field.starts_with("coefficients")) {
                issues.push(issue("symbol", "a symbol or a coefficient field is required"));
            }
            None
        }
    };

    if let (Some(s), Some(g)) = (&symbol, &grid) {
        if s.dim() != g.dim() {
            issues.push(issue("grid", format!("grid dimension {} differs from the symbol dimension {}", g.dim(), s.dim())));
        }
    }
    if let (Some(s), Some(c)) = (&symbol, &coefficients) {
        if s.weights() != c.weights() {
            issues.push(issue("symbol", "symbol weights differ from the coefficient weights"));
        }
    }
    for (i, t) in config.times.iter().enumerate() {
        if !(t.is_finite() && *t > 0.0) {
            issues.push(issue(&format!("times[{i}]"), format!("time must be positive, got {t}")));
        }
    }
    if let Some(s) = &symbol {
        for (i, l) in config.lambdas.iter().enumerate() {
            if l.len() != s.dim() {
                issues.push(issue(&format!("lambdas[{i}]"), format!("expected {} components", s.dim())));
            }
        }
        if let Some(k) = config.kappa {
            if k != s.weights().kappa() {
                issues.push(issue("kappa", format!("kappa for these weights is {}, got {k}", s.weights().kappa())));
            }
        }
    }
    let freq_counts = match (&config.freq_counts, &symbol, &grid) {
        (Some(f), Some(s), _) if f.len() != s.dim() || f.iter().any(|&n| n < 4) => {
            issues.push(issue("freq_counts", "one count of at least 4 per axis required"));
            vec![]
        }
        (Some(f), _, _) => f.clone(),
        (None, Some(s), Some(g)) if s.dim() == g.dim() => derived_freq_counts(s, g, &config.times),
        _ => vec![],
    };

    let requested = overrides.checks.clone().map(Ok).unwrap_or_else(|| {
        config
            .checks
            .iter()
            .map(|name| Check::from_name(name).ok_or_else(|| issue("checks", format!("unknown check {name:?}"))))
            .collect::<Result<Vec<_>, _>>()
    });
    let checks = match requested {
        Ok(c) => c,
        Err(i) => {
            issues.push(i);
            vec![]
        }
    };
    for c in &checks {
        if c.needs_coefficients() && coeff_spec.is_none() {
            issues.push(issue("checks", format!("{} needs a coefficient field", c.name())));
        }
        if c.needs_times() && config.times.is_empty() {
            issues.push(issue("times", format!("{} needs at least one time", c.name())));
        }
        if c.needs_lambdas() && config.lambdas.is_empty() {
            issues.push(issue("lambdas", format!("{} needs at least one covector", c.name())));
        }
    }

    if !issues.is_empty() {
        return Err(issues);
    }
    let output_dir =
        overrides.out.clone().or_else(|| config.output_dir.as_ref().map(|p| base.join(p))).unwrap_or_else(|| PathBuf::from("out"));
    Ok(Experiment {
        symbol: symbol.expect("validated"),
        grid: grid.expect("validated"),
        coefficients,
        freq_counts,
        checks,
        float_mode,
        output_dir,
        config,
    })
}
