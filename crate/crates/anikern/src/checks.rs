//! Registered checks, their dependency order and the runner that executes
//! them and writes one JSON report per check.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anikern_core::aniso::check_positive_definite;
use anikern_core::estimator::{
    bump_family, check_twisted_form_lower, check_twisted_sg_norm, fit_offdiagonal_bound, gn_check, nash_constant,
    samples_from_column, samples_from_field, ultracontractivity_slope, verify_hypothesis1, verify_hypothesis2,
    verify_hypothesis3, BoundFitOptions, HypothesisReport, SweepOptions,
};
use anikern_core::grid::AnisoGrid;
use anikern_core::kernel::{check_mass, check_scaling_identity_with, kernel_cc_with, norm_profile, KernelField, DEFAULT_THRESHOLD};
use anikern_core::legendre::{check_lf_homogeneity, lf_grid, LegendreSolver, LfOptions};
use anikern_core::operator::{
    assemble, assemble_reference, default_twist_order, make_twist, DiscreteOperator, PrincipalCoefficients, TwistMap,
    DENSE_LIMIT,
};
use anikern_core::rng::SeededRng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Experiment;
use crate::formats::{self, GridSpec};

/// Declaration order is execution order: kernels before fits, the first
/// hypothesis before anything twisted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Check {
    PositiveDefinite,
    Homogeneity,
    LfOracle,
    LfHomogeneity,
    Kernel,
    ScalingIdentity,
    Mass,
    NormSlopes,
    BoundFit,
    ExportOperator,
    Hypothesis1,
    Hypothesis2,
    TwistedSgNorm,
    TwistedFormLower,
    Hypothesis3,
    KernelColumnFit,
    Nash,
}

pub const ALL_CHECKS: [Check; 17] = [
    Check::PositiveDefinite,
    Check::Homogeneity,
    Check::LfOracle,
    Check::LfHomogeneity,
    Check::Kernel,
    Check::ScalingIdentity,
    Check::Mass,
    Check::NormSlopes,
    Check::BoundFit,
    Check::ExportOperator,
    Check::Hypothesis1,
    Check::Hypothesis2,
    Check::TwistedSgNorm,
    Check::TwistedFormLower,
    Check::Hypothesis3,
    Check::KernelColumnFit,
    Check::Nash,
];

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::PositiveDefinite => "positive_definite",
            Check::Homogeneity => "homogeneity",
            Check::LfOracle => "lf_oracle",
            Check::LfHomogeneity => "lf_homogeneity",
            Check::Kernel => "kernel",
            Check::ScalingIdentity => "scaling_identity",
            Check::Mass => "mass",
            Check::NormSlopes => "norm_slopes",
            Check::BoundFit => "bound_fit",
            Check::ExportOperator => "export_operator",
            Check::Hypothesis1 => "hypothesis1",
            Check::Hypothesis2 => "hypothesis2",
            Check::TwistedSgNorm => "twisted_sg_norm",
            Check::TwistedFormLower => "twisted_form_lower",
            Check::Hypothesis3 => "hypothesis3",
            Check::KernelColumnFit => "kernel_column_fit",
            Check::Nash => "nash",
        }
    }

    pub fn from_name(name: &str) -> Option<Check> {
        ALL_CHECKS.iter().copied().find(|c| c.name() == name)
    }

    pub fn dependencies(&self) -> &'static [Check] {
        match self {
            Check::Hypothesis2 | Check::Hypothesis3 => &[Check::Hypothesis1],
            Check::TwistedSgNorm | Check::TwistedFormLower => &[Check::Hypothesis2],
            _ => &[],
        }
    }

    pub fn needs_coefficients(&self) -> bool {
        matches!(
            self,
            Check::ExportOperator
                | Check::Hypothesis1
                | Check::Hypothesis2
                | Check::TwistedSgNorm
                | Check::TwistedFormLower
                | Check::Hypothesis3
                | Check::KernelColumnFit
        )
    }

    pub fn needs_times(&self) -> bool {
        matches!(
            self,
            Check::Kernel
                | Check::ScalingIdentity
                | Check::Mass
                | Check::NormSlopes
                | Check::BoundFit
                | Check::TwistedSgNorm
                | Check::KernelColumnFit
        )
    }

    pub fn needs_lambdas(&self) -> bool {
        matches!(self, Check::Hypothesis2 | Check::TwistedSgNorm | Check::TwistedFormLower | Check::Hypothesis3)
    }
}

/// Requested checks plus their dependencies, in execution order.
pub fn plan(requested: &[Check]) -> Vec<Check> {
    let mut set = BTreeSet::new();
    let mut stack: Vec<Check> = requested.to_vec();
    while let Some(c) = stack.pop() {
        if set.insert(c) {
            stack.extend_from_slice(c.dependencies());
        }
    }
    set.into_iter().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Error,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub check: &'static str,
    pub status: Status,
    pub seed: u64,
    pub symbol_hash: String,
    pub grid: GridSpec,
    pub values: Value,
    pub artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub symbol_hash: String,
    pub float_mode: &'static str,
    pub passed: bool,
    pub checks: Vec<(String, Status)>,
}

#[derive(Debug, thiserror::Error)]
enum CheckError {
    #[error(transparent)]
    Core(#[from] anikern_core::Error),
    #[error(transparent)]
    Format(#[from] formats::FormatError),
    #[error("{0}")]
    Other(String),
}

type CheckResult = Result<(bool, Value), CheckError>;

struct Context<'a> {
    exp: &'a Experiment,
    out: PathBuf,
    kernels: Option<Vec<KernelField>>,
    operators: Option<(DiscreteOperator, DiscreteOperator)>,
    twist: Option<TwistMap>,
    h2: Option<HypothesisReport>,
    artifacts: Vec<String>,
}

impl<'a> Context<'a> {
    fn write_name(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn kernels(&mut self) -> Result<&[KernelField], CheckError> {
        if self.kernels.is_none() {
            let e = self.exp;
            let ks = e
                .config
                .times
                .par_iter()
                .map(|&t| kernel_cc_with(&e.symbol, t, &e.grid, &e.freq_counts, DEFAULT_THRESHOLD, e.float_mode))
                .collect::<anikern_core::Result<Vec<_>>>()?;
            self.kernels = Some(ks);
        }
        Ok(self.kernels.as_deref().unwrap_or(&[]))
    }

    fn reference(&self) -> Result<PrincipalCoefficients, CheckError> {
        if let Some(c) = &self.exp.coefficients {
            return Ok(c.reference().clone());
        }
        let s = &self.exp.symbol;
        let coeffs = s
            .separable_coefficients()
            .ok_or_else(|| CheckError::Other("a coefficient field is needed for a non-separable symbol".into()))?;
        Ok(PrincipalCoefficients::separable(s.weights().clone(), &coeffs)?)
    }

    /// `(H + shift, Lambda)` on the experiment grid.
    fn operators(&mut self) -> Result<(DiscreteOperator, DiscreteOperator), CheckError> {
        if self.operators.is_none() {
            let field = self.exp.coefficients.as_ref().ok_or_else(|| CheckError::Other("no coefficient field".into()))?;
            let hd = assemble(field)?.shifted(self.exp.config.shift.unwrap_or(0.0));
            let ld = assemble_reference(field.reference(), field.grid())?;
            self.operators = Some((hd, ld));
        }
        Ok(self.operators.clone().expect("just set"))
    }

    fn twist(&mut self) -> Result<TwistMap, CheckError> {
        if self.twist.is_none() {
            let e = self.exp;
            let w = e.symbol.weights();
            let (lo, hi) = e.config.anchors.clone().unwrap_or_else(|| {
                (e.grid.radii().iter().map(|r| -0.25 * r).collect(), e.grid.radii().iter().map(|r| 0.25 * r).collect())
            });
            let order = e.config.twist_order.unwrap_or_else(|| default_twist_order(w));
            self.twist = Some(make_twist((&lo, &hi), &e.grid, w, order)?);
        }
        Ok(self.twist.clone().expect("just set"))
    }

    fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            family_size: self.exp.config.family_size.unwrap_or(32),
            seed: self.exp.config.seed,
            ..Default::default()
        }
    }
}

fn hypothesis_values(r: &HypothesisReport) -> Value {
    json!({
        "hypothesis": r.which.as_str(),
        "constants": r.constants,
        "samples": r.samples,
        "worst_case": r.worst_case,
        "stable": r.stable,
        "per_lambda": r.per_lambda.iter().map(|d| json!({
            "lambda": d.lambda, "r_lambda": d.r_lambda, "family_half": d.family_half,
            "family_full": d.family_full, "refined": d.refined,
        })).collect::<Vec<_>>(),
        "skipped_lambdas": r.skipped_lambdas,
    })
}

fn run_check(ctx: &mut Context, check: Check) -> CheckResult {
    let e = ctx.exp;
    let s = &e.symbol;
    let seed = e.config.seed;
    match check {
        Check::PositiveDefinite => {
            let r = check_positive_definite(s, 10_000 * s.dim())?;
            Ok((r.accepted(), json!({ "min_value": r.min_value, "argmin": r.argmin })))
        }
        Check::Homogeneity => {
            let mut rng = SeededRng::derived(seed, 1);
            let samples: Vec<(f64, Vec<f64>)> = (0..1000)
                .map(|_| (10f64.powf(rng.range(-2.0, 2.0)), (0..s.dim()).map(|_| rng.normal()).collect()))
                .collect();
            let dev = anikern_core::aniso::check_homogeneity(s, &samples)?;
            Ok((dev <= 1e-12, json!({ "deviation": dev, "samples": samples.len() })))
        }
        Check::LfOracle => {
            let field = lf_grid(s, &e.grid, LfOptions::default())?;
            let path = ctx.write_name("lf.csv");
            formats::write_lf_csv(&path, &field)?;
            let grid_only = field.results.iter().filter(|r| r.status.as_str() == "grid_only").count();
            match s.separable_coefficients() {
                Some(c) => {
                    let m = s.weights().as_slice();
                    let closed = |x: &[f64]| -> f64 {
                        x.iter()
                            .zip(m.iter().zip(&c))
                            .map(|(xk, (&mk, ck))| {
                                let p = 2.0 * mk as f64;
                                (1.0 - 1.0 / p) * xk.abs().powf(p / (p - 1.0)) * (p * ck).powf(-1.0 / (p - 1.0))
                            })
                            .sum()
                    };
                    let err = e.grid.nodes().iter().zip(field.values()).map(|(x, v)| (v - closed(x)).abs()).fold(0.0, f64::max);
                    Ok((err <= 1e-6, json!({ "oracle": "closed_form", "max_error": err, "grid_only": grid_only })))
                }
                None => {
                    let mut rng = SeededRng::derived(seed, 2);
                    let nodes = e.grid.nodes();
                    let vals = field.values();
                    let mut slack = f64::INFINITY;
                    for _ in 0..1000 {
                        let j = rng.index(nodes.len());
                        let xi: Vec<f64> = (0..s.dim()).map(|_| 3.0 * rng.normal()).collect();
                        let dot: f64 = nodes[j].iter().zip(&xi).map(|(a, b)| a * b).sum();
                        slack = slack.min(s.real_part(&xi) + vals[j] - dot);
                    }
                    Ok((slack >= -1e-9, json!({ "oracle": "fenchel_young", "min_slack": slack, "grid_only": grid_only })))
                }
            }
        }
        Check::LfHomogeneity => {
            let mut rng = SeededRng::derived(seed, 3);
            let samples: Vec<(f64, Vec<f64>)> = (0..100)
                .map(|_| (10f64.powf(rng.range(-1.0, 1.0)), (0..s.dim()).map(|_| 2.0 * rng.normal()).collect()))
                .collect();
            let dev = check_lf_homogeneity(s, &samples, LfOptions::default())?;
            Ok((dev <= 1e-8, json!({ "deviation": dev })))
        }
        Check::Kernel => {
            let even_real = s.is_even() && s.real_part_only();
            let ks: Vec<KernelField> = ctx.kernels()?.to_vec();
            let mut ratios = Vec::new();
            for (i, k) in ks.iter().enumerate() {
                let csv = ctx.write_name(&format!("kernel_{i}.csv"));
                formats::write_kernel_csv(&csv, k)?;
                let bin = ctx.write_name(&format!("kernel_{i}.bin"));
                formats::write_kernel_cache(&bin, k)?;
                ratios.push(k.imaginary_ratio());
            }
            let ok = !even_real || ratios.iter().all(|&r| r <= 1e-10);
            Ok((ok, json!({ "times": e.config.times, "imaginary_ratio": ratios, "peaks": ks.iter().map(|k| k.peak()).collect::<Vec<_>>() })))
        }
        Check::ScalingIdentity => {
            let devs = e
                .config
                .times
                .par_iter()
                .map(|&t| check_scaling_identity_with(s, t, &e.grid, &e.freq_counts, e.float_mode).map(|d| (t, d)))
                .collect::<anikern_core::Result<Vec<_>>>()?;
            let path = ctx.write_name("scaling_identity.csv");
            formats::write_pairs_csv(&path, ["t", "deviation"], &devs)?;
            let worst = devs.iter().map(|d| d.1).fold(0.0, f64::max);
            Ok((worst <= 1e-7, json!({ "max_deviation": worst })))
        }
        Check::Mass => {
            let reports: Vec<_> = ctx.kernels()?.iter().map(check_mass).collect();
            let ok = reports.iter().all(|r| !r.support_covered || r.deviation <= 1e-8);
            Ok((
                ok,
                json!({
                    "deviation": reports.iter().map(|r| r.deviation).collect::<Vec<_>>(),
                    "support_covered": reports.iter().map(|r| r.support_covered).collect::<Vec<_>>(),
                }),
            ))
        }
        Check::NormSlopes => {
            let l2 = ultracontractivity_slope(s, &e.config.times, &e.grid, &e.freq_counts)?;
            let l1 = norm_profile(s, 1.0, &e.config.times, &e.grid, &e.freq_counts)?;
            let path = ctx.write_name("norm_slopes.csv");
            formats::write_pairs_csv(&path, ["t", "l2_norm"], &l2.norms)?;
            let ok = l2.relative_error() <= 0.02 && l1.slope.abs() <= 0.005;
            Ok((ok, json!({ "l2_slope": l2.slope, "expected": l2.expected, "stderr": l2.stderr, "l1_slope": l1.slope })))
        }
        Check::BoundFit => {
            let samples: Vec<_> = ctx.kernels()?.iter().flat_map(|k| samples_from_field(k, 1e-12)).collect();
            let solver = LegendreSolver::new(s, LfOptions::default())?;
            let fit = fit_offdiagonal_bound(&samples, s.weights().mu_f64(), |u| Ok(solver.eval(u)?.value), BoundFitOptions::default())?;
            let path = ctx.write_name("bound_fit_margins.csv");
            formats::write_margins_csv(&path, &fit)?;
            Ok((
                fit.min_margin >= 0.0,
                json!({ "C": fit.c, "M": fit.m, "m_bounded": fit.m_bounded, "n_points": fit.n_points,
                        "n_dropped": fit.n_dropped, "min_margin": fit.min_margin, "include_mt": false }),
            ))
        }
        Check::ExportOperator => {
            let (hd, ld) = ctx.operators()?;
            let p = ctx.write_name("operator.mtx");
            formats::write_matrix_market(&p, hd.matrix())?;
            let p = ctx.write_name("reference.mtx");
            formats::write_matrix_market(&p, ld.matrix())?;
            Ok((true, json!({ "unknowns": hd.size() })))
        }
        Check::Hypothesis1 => {
            let (hd, ld) = ctx.operators()?;
            let r = verify_hypothesis1(&hd, &ld, 0.0)?;
            Ok((r.accepted, hypothesis_values(&r)))
        }
        Check::Hypothesis2 => {
            let (hd, ld) = ctx.operators()?;
            let tm = ctx.twist()?;
            let reference = ctx.reference()?;
            let r = verify_hypothesis2(&hd, &ld, reference.symbol(), &e.config.lambdas, &tm, ctx.sweep_options())?;
            let v = hypothesis_values(&r);
            let ok = r.accepted;
            ctx.h2 = Some(r);
            Ok((ok, v))
        }
        Check::TwistedSgNorm | Check::TwistedFormLower => {
            let m = ctx
                .h2
                .as_ref()
                .and_then(|r| r.constant("M"))
                .ok_or_else(|| CheckError::Other("hypothesis2 did not produce M".into()))?;
            let (hd, _) = ctx.operators()?;
            let tm = ctx.twist()?;
            let reference = ctx.reference()?;
            let mut rows = Vec::new();
            let mut ok = true;
            for lam in &e.config.lambdas {
                let tw = hd.twist(&tm.with_lambda(lam)?)?;
                let r_lambda = reference.symbol().real_part(lam);
                if check == Check::TwistedSgNorm {
                    let r = check_twisted_sg_norm(&tw, m, r_lambda, &e.config.times)?;
                    ok &= r.accepted();
                    rows.push(json!({ "lambda": lam, "slacks": r.slacks, "min_slack": r.min_slack }));
                } else {
                    let r = check_twisted_form_lower(&tw, m, r_lambda)?;
                    ok &= r.ratio <= 1.0 + 1e-9;
                    rows.push(json!({ "lambda": lam, "ratio": r.ratio, "min_hermitian_eig": r.min_hermitian_eig }));
                }
            }
            Ok((ok, json!({ "M": m, "per_lambda": rows })))
        }
        Check::Hypothesis3 => {
            let (hd, ld) = ctx.operators()?;
            let tm = ctx.twist()?;
            let reference = ctx.reference()?;
            let kappa = e.config.kappa.unwrap_or_else(|| s.weights().kappa());
            let r = verify_hypothesis3(&hd, &ld, kappa, reference.symbol(), &e.config.lambdas, &tm, ctx.sweep_options())?;
            Ok((r.accepted, hypothesis_values(&r)))
        }
        Check::KernelColumnFit => {
            let (hd, _) = ctx.operators()?;
            let y = vec![0.0; e.grid.dim()];
            let cols = e.config.times.par_iter().map(|&t| hd.kernel_column(t, &y).map(|c| (t, c))).collect::<anikern_core::Result<Vec<_>>>()?;
            let samples: Vec<_> = cols.iter().flat_map(|(t, c)| samples_from_column(&e.grid, *t, &y, c, 1e-12)).collect();
            let reference = ctx.reference()?;
            let solver = LegendreSolver::new(reference.symbol(), LfOptions::default())?;
            let fit = fit_offdiagonal_bound(
                &samples,
                s.weights().mu_f64(),
                |u| Ok(solver.eval(u)?.value),
                BoundFitOptions { include_mt: true, ..Default::default() },
            )?;
            let path = ctx.write_name("kernel_column_fit_margins.csv");
            formats::write_margins_csv(&path, &fit)?;
            Ok((
                fit.min_margin >= 0.0,
                json!({ "C": fit.c, "M": fit.m, "m_bounded": fit.m_bounded, "n_points": fit.n_points,
                        "min_margin": fit.min_margin, "include_mt": true }),
            ))
        }
        Check::Nash => {
            let reference = ctx.reference()?;
            let mu = s.weights().mu_f64();
            let grid = &e.grid;
            let doubled: Vec<usize> = grid.counts().iter().map(|c| 2 * c).collect();
            let interior: usize = doubled.iter().map(|c| c - 1).product();
            let other = if interior <= DENSE_LIMIT {
                AnisoGrid::new(grid.radii().to_vec(), doubled)?
            } else {
                AnisoGrid::new(grid.radii().to_vec(), grid.counts().iter().map(|c| (c / 2).max(4) & !1).collect())?
            };
            let la = assemble_reference(&reference, grid)?;
            let lb = assemble_reference(&reference, &other)?;
            let max_m = s.weights().as_slice().iter().copied().max().unwrap_or(1);
            let family = bump_family(grid.radii(), e.config.family_size.unwrap_or(16), 2 * max_m + 1, seed);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
            let na = nash_constant(&la, mu, &family)?.constant;
            let nb = nash_constant(&lb, mu, &family)?.constant;
            let mut ok = rel(na, nb) <= 0.05;
            let mut values = json!({ "nash": [na, nb], "refinement_grid": GridSpec::from_grid(&other) });
            if mu < 1.0 {
                let ga = gn_check(&la, mu, &family)?.constant;
                let gb = gn_check(&lb, mu, &family)?.constant;
                ok &= rel(ga, gb) <= 0.05;
                values["gn"] = json!([ga, gb]);
            }
            Ok((ok, values))
        }
    }
}

fn write_report(out: &Path, report: &CheckReport) -> Result<(), formats::FormatError> {
    formats::write_json(&out.join(format!("{}.json", report.check)), report)
}

/// Runs the experiment's checks in dependency order; returns the summary,
/// also written as `summary.json`.
pub fn run(exp: &Experiment) -> Result<Summary, formats::FormatError> {
    let out = exp.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|source| formats::FormatError::Io { path: out.clone(), source })?;
    let mut ctx =
        Context { exp, out: out.clone(), kernels: None, operators: None, twist: None, h2: None, artifacts: Vec::new() };
    let mut statuses: Vec<(Check, Status)> = Vec::new();
    for check in plan(&exp.checks) {
        let blocked = check
            .dependencies()
            .iter()
            .any(|d| statuses.iter().any(|(c, s)| c == d && matches!(s, Status::Error | Status::Skipped)));
        ctx.artifacts.clear();
        let (status, values, message) = if blocked {
            (Status::Skipped, Value::Null, Some("a dependency did not complete".to_string()))
        } else {
            match run_check(&mut ctx, check) {
                Ok((true, v)) => (Status::Pass, v, None),
                Ok((false, v)) => (Status::Fail, v, None),
                Err(e) => (Status::Error, Value::Null, Some(e.to_string())),
            }
        };
        let report = CheckReport {
            check: check.name(),
            status,
            seed: exp.config.seed,
            symbol_hash: exp.symbol.digest(),
            grid: GridSpec::from_grid(&exp.grid),
            values,
            artifacts: ctx.artifacts.clone(),
            message,
        };
        write_report(&out, &report)?;
        statuses.push((check, status));
    }
    let summary = Summary {
        seed: exp.config.seed,
        symbol_hash: exp.symbol.digest(),
        float_mode: match exp.float_mode {
            anikern_core::kernel::FloatMode::Strict => "strict",
            anikern_core::kernel::FloatMode::Fast => "fast",
        },
        passed: statuses.iter().all(|(_, s)| *s == Status::Pass),
        checks: statuses.iter().map(|(c, s)| (c.name().to_string(), *s)).collect(),
    };
    formats::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_adds_dependencies_in_order() {
        assert_eq!(
            plan(&[Check::TwistedSgNorm, Check::BoundFit]),
            vec![Check::BoundFit, Check::Hypothesis1, Check::Hypothesis2, Check::TwistedSgNorm]
        );
    }

    #[test]
    fn names_roundtrip() {
        for c in ALL_CHECKS {
            assert_eq!(Check::from_name(c.name()), Some(c));
        }
    }
}
