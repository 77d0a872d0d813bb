//! Empirical verification of the form hypotheses and kernel inequalities, fits
//! of the off-diagonal bound constants, and empirical exponents.
//!
//! Every constant reported here depends on the grid and on the sampled
//! functions; a finite sweep can falsify a uniform bound but never prove it.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;

use crate::aniso::{DilationExponents, Symbol};
use crate::error::{Error, Result};
use crate::grid::AnisoGrid;
use crate::kernel::{norm_profile, KernelField};
use crate::linalg::{hermitian_eigen, hermitian_part, hermitian_pencil, max_singular_value, CMatrix, CVector};
use crate::operator::{DiscreteOperator, TwistMap};
use crate::optim::{golden_maximize, linear_fit};
use crate::rng::SeededRng;

// ---------------------------------------------------------------------------
// off-diagonal bound fit

/// One sampled kernel magnitude `|K(t, x, y)|`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub abs_k: f64,
}

impl KernelSample {
    pub fn is_diagonal(&self) -> bool {
        self.x == self.y
    }
}

/// Samples `(t, x, 0, |K(t, x)|)` from a translation-invariant kernel field.
pub fn samples_from_field(k: &KernelField, relative_floor: f64) -> Vec<KernelSample> {
    let cutoff = relative_floor * k.peak();
    let d = k.grid.dim();
    (0..k.values.len())
        .filter(|&j| k.values[j].norm() > cutoff)
        .map(|j| KernelSample { t: k.t, x: k.grid.node(j), y: vec![0.0; d], abs_k: k.values[j].norm() })
        .collect()
}

/// Samples `(t, x_i, y, |K(t, x_i, y)|)` from a kernel column on the interior nodes.
pub fn samples_from_column(grid: &AnisoGrid, t: f64, y: &[f64], column: &CVector, relative_floor: f64) -> Vec<KernelSample> {
    let peak = column.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let y_idx = grid.interior_index_of(y).ok();
    let mut out = Vec::new();
    for (i, v) in column.iter().enumerate() {
        if v.norm() > relative_floor * peak {
            // the exact node keeps the diagonal sample bitwise diagonal
            let x = if Some(i) == y_idx { y.to_vec() } else { grid.interior_node(i) };
            out.push(KernelSample { t, x, y: y.to_vec(), abs_k: v.norm() });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundFitOptions {
    pub include_mt: bool,
    /// Samples with `|K|` at or below this are dropped.
    pub floor: f64,
    /// Reported `M` when no sample bounds it from above.
    pub m_max: f64,
}

impl Default for BoundFitOptions {
    fn default() -> Self {
        Self { include_mt: false, floor: 1e-300, m_max: 1e6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMargin {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub abs_k: f64,
    pub log_bound: f64,
    /// `log bound - log |K|`.
    pub margin: f64,
}

/// Constants of `|K(t, x, y)| <= C t^{-mu} exp(-t M R^#((x - y)/t) [+ M t])`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundFit {
    pub c: f64,
    pub m: f64,
    /// False when no sample limits `M` from above and `m_max` was reported.
    pub m_bounded: bool,
    /// Feasible interval of `M` at the fitted `C`.
    pub m_interval: (f64, f64),
    pub n_points: usize,
    pub n_dropped: usize,
    pub min_margin: f64,
    pub includes_mt: bool,
    pub mu: f64,
    pub margins: Vec<SampleMargin>,
}

impl BoundFit {
    /// `log` of the fitted bound at one sample.
    pub fn log_bound(&self, sample: &KernelSample, lf_value: f64) -> f64 {
        let mut e = -sample.t * self.m * lf_value;
        if self.includes_mt {
            e += self.m * sample.t;
        }
        self.c.ln() - self.mu * sample.t.ln() + e
    }

    /// Smallest margin of the fitted bound over other samples.
    pub fn holdout_margin<F>(&self, samples: &[KernelSample], mut lf: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        let mut worst = f64::INFINITY;
        for s in samples.iter().filter(|s| s.abs_k > 0.0) {
            let u: Vec<f64> = s.x.iter().zip(&s.y).map(|(a, b)| (a - b) / s.t).collect();
            worst = worst.min(self.log_bound(s, lf(&u)?) - s.abs_k.ln());
        }
        Ok(worst)
    }
}

/// Fixes `C` from the diagonal, `C = (1 + 1e-6) sup t^mu |K(t, x, x)|`, then
/// returns the largest `M` for which every retained sample satisfies the bound.
///
/// Each sample gives the linear constraint `g <= M c` with
/// `g = log|K| - log C + mu log t` and `c = -t R^#((x - y)/t) [+ t]`, so the
/// feasible set is an interval computed exactly.
pub fn fit_offdiagonal_bound<F>(samples: &[KernelSample], mu: f64, mut lf: F, opts: BoundFitOptions) -> Result<BoundFit>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no kernel samples".into()));
    }
    let kept: Vec<&KernelSample> = samples.iter().filter(|s| s.abs_k > opts.floor).collect();
    let n_dropped = samples.len() - kept.len();
    let c0 = kept
        .iter()
        .filter(|s| s.is_diagonal())
        .map(|s| s.t.powf(mu) * s.abs_k)
        .fold(f64::NEG_INFINITY, f64::max);
    if !c0.is_finite() {
        return Err(Error::InvalidArgument("at least one diagonal sample above the floor is required".into()));
    }
    let c = c0 * (1.0 + 1e-6);
    let log_c = c.ln();
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    let mut rows = Vec::with_capacity(kept.len());
    for s in &kept {
        if !(s.t > 0.0) {
            return Err(Error::NonPositive { name: "t", value: s.t });
        }
        let u: Vec<f64> = s.x.iter().zip(&s.y).map(|(a, b)| (a - b) / s.t).collect();
        let lf_value = lf(&u)?;
        let g = s.abs_k.ln() - log_c + mu * s.t.ln();
        let coef = -s.t * lf_value + if opts.include_mt { s.t } else { 0.0 };
        if coef > 0.0 {
            lo = lo.max(g / coef);
        } else if coef < 0.0 {
            hi = hi.min(g / coef);
        } else if g > 0.0 {
            return Err(Error::Infeasible(format!("sample at t={} exceeds the prefactor with no decay term", s.t)));
        }
        rows.push((lf_value, g, coef));
    }
    if hi < lo || hi < 0.0 {
        return Err(Error::Infeasible(format!("feasible interval for M is empty ([{lo:e}, {hi:e}])")));
    }
    let (m, bounded) = if hi.is_finite() {
        let shaded = hi * (1.0 - 1e-9);
        (if shaded >= lo { shaded } else { hi }, true)
    } else {
        (opts.m_max.max(lo), false)
    };
    if m > opts.m_max && bounded && lo > opts.m_max {
        return Err(Error::Infeasible(format!("required M = {lo:e} above the cap {:e}", opts.m_max)));
    }
    let mut margins = Vec::with_capacity(rows.len());
    let mut min_margin = f64::INFINITY;
    for (s, (lf_value, g, coef)) in kept.iter().zip(rows) {
        let margin = m * coef - g;
        min_margin = min_margin.min(margin);
        margins.push(SampleMargin {
            t: s.t,
            x: s.x.clone(),
            y: s.y.clone(),
            abs_k: s.abs_k,
            log_bound: s.abs_k.ln() + margin,
            margin,
        });
        let _ = lf_value;
    }
    Ok(BoundFit {
        c,
        m,
        m_bounded: bounded,
        m_interval: (lo, hi),
        n_points: kept.len(),
        n_dropped,
        min_margin,
        includes_mt: opts.include_mt,
        mu,
        margins,
    })
}

// ---------------------------------------------------------------------------
// test families

/// A continuous test function, sampled on whatever grid an estimate needs.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    /// `sum c_j prod_k sin(j_k pi (x_k + r_k) / (2 r_k))`, vanishing on the box boundary.
    Modes { radii: Vec<f64>, terms: Vec<(Vec<u32>, Complex64)> },
    /// `a prod_k (1 - ((x_k - c_k)/w_k)^2)_+^p`.
    Bump { center: Vec<f64>, half_width: Vec<f64>, power: u32, amplitude: Complex64 },
    /// `f(t^F x)`.
    Dilated { base: Box<TestFunction>, exponents: DilationExponents, t: f64 },
    /// `c f`.
    Scaled { base: Box<TestFunction>, factor: Complex64 },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        match self {
            TestFunction::Modes { radii, terms } => {
                if x.iter().zip(radii).any(|(xk, r)| xk.abs() > *r) {
                    return Complex64::new(0.0, 0.0);
                }
                terms
                    .iter()
                    .map(|(modes, c)| {
                        let v: f64 = modes
                            .iter()
                            .zip(x.iter().zip(radii))
                            .map(|(&j, (xk, r))| (j as f64 * core::f64::consts::PI * (xk + r) / (2.0 * r)).sin())
                            .product();
                        c * v
                    })
                    .sum()
            }
            TestFunction::Bump { center, half_width, power, amplitude } => {
                let mut v = 1.0;
                for ((xk, ck), wk) in x.iter().zip(center).zip(half_width) {
                    let u = (xk - ck) / wk;
                    if u.abs() >= 1.0 {
                        return Complex64::new(0.0, 0.0);
                    }
                    v *= (1.0 - u * u).powi(*power as i32);
                }
                amplitude * v
            }
            TestFunction::Dilated { base, exponents, t } => {
                let y: Vec<f64> = x.iter().zip(&exponents.e).map(|(xk, e)| t.powf(*e) * xk).collect();
                base.eval(&y)
            }
            TestFunction::Scaled { base, factor } => base.eval(x) * factor,
        }
    }

    /// Values at the interior nodes of `grid`.
    pub fn sample_interior(&self, grid: &AnisoGrid) -> CVector {
        CVector::from_iterator(grid.interior_len(), (0..grid.interior_len()).map(|j| self.eval(&grid.interior_node(j))))
    }

    pub fn dilated(&self, exponents: &DilationExponents, t: f64) -> Self {
        TestFunction::Dilated { base: Box::new(self.clone()), exponents: exponents.clone(), t }
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        TestFunction::Scaled { base: Box::new(self.clone()), factor }
    }
}

/// Random combinations of the lowest `max_mode` sine modes per axis.
pub fn band_limited_family(radii: &[f64], n: usize, max_mode: u32, seed: u64) -> Vec<TestFunction> {
    let d = radii.len();
    (0..n)
        .map(|i| {
            let mut rng = SeededRng::derived(seed, 2 * i as u64);
            let n_terms = 1 + rng.index(6);
            let terms = (0..n_terms)
                .map(|_| {
                    let modes: Vec<u32> = (0..d).map(|_| 1 + rng.index(max_mode as usize) as u32).collect();
                    (modes, Complex64::new(rng.normal(), rng.normal()))
                })
                .collect();
            TestFunction::Modes { radii: radii.to_vec(), terms }
        })
        .collect()
}

/// Random bumps supported inside the box.
pub fn bump_family(radii: &[f64], n: usize, power: u32, seed: u64) -> Vec<TestFunction> {
    (0..n)
        .map(|i| {
            let mut rng = SeededRng::derived(seed, 2 * i as u64 + 1);
            let mut center = Vec::with_capacity(radii.len());
            let mut half_width = Vec::with_capacity(radii.len());
            for &r in radii {
                let c = rng.range(-0.5 * r, 0.5 * r);
                let room = r - c.abs();
                center.push(c);
                half_width.push(rng.range(0.3, 0.9) * room);
            }
            TestFunction::Bump { center, half_width, power, amplitude: Complex64::new(rng.normal(), rng.normal()) }
        })
        .collect()
}

/// Half band-limited, half bumps of power `2 max m_k + 1`.
pub fn standard_family(radii: &[f64], n: usize, max_mode: u32, max_weight: u32, seed: u64) -> Vec<TestFunction> {
    let mut out = Vec::with_capacity(n);
    let modes = band_limited_family(radii, n.div_ceil(2), max_mode, seed);
    let bumps = bump_family(radii, n / 2, 2 * max_weight + 1, seed);
    for i in 0..n {
        if i % 2 == 0 {
            out.push(modes[i / 2].clone());
        } else {
            out.push(bumps[i / 2].clone());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// hypotheses

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hypothesis {
    FormComparison,
    TwistedFormPerturbation,
    PowerFormControl,
}

impl Hypothesis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Hypothesis::FormComparison => "H1",
            Hypothesis::TwistedFormPerturbation => "H2",
            Hypothesis::PowerFormControl => "H3",
        }
    }
}

/// Per-covector detail of a twisted sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaDetail {
    pub lambda: Vec<f64>,
    pub r_lambda: f64,
    /// Estimate from the first half of the family.
    pub family_half: f64,
    /// Estimate from the full family.
    pub family_full: f64,
    /// Estimate from worst-case refinement.
    pub refined: f64,
}

impl LambdaDetail {
    pub fn value(&self) -> f64 {
        self.family_full.max(self.refined)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub which: Hypothesis,
    pub constants: BTreeMap<String, f64>,
    pub samples: usize,
    /// Index of the covector (or family member) realising the worst case.
    pub worst_case: Option<usize>,
    pub accepted: bool,
    pub stable: bool,
    pub per_lambda: Vec<LambdaDetail>,
    pub skipped_lambdas: Vec<Vec<f64>>,
}

impl HypothesisReport {
    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }
}

fn same_grid(a: &DiscreteOperator, b: &DiscreteOperator) -> Result<()> {
    if a.grid() != b.grid() || a.size() != b.size() {
        Err(Error::GridMismatch)
    } else {
        Ok(())
    }
}

/// Extreme generalised Rayleigh quotients of `H + shift` against `Lambda`
/// (`c_low`) and against `Lambda + I` (`C_high`, at least 1).
pub fn verify_hypothesis1(hd: &DiscreteOperator, ld: &DiscreteOperator, shift: f64) -> Result<HypothesisReport> {
    same_grid(hd, ld)?;
    let n = hd.size();
    let (c_low, c_high) = if shift == 0.0 && hd.matrix() == ld.matrix() {
        (1.0, 1.0)
    } else {
        let a = hd.matrix() + CMatrix::identity(n, n) * Complex64::new(shift, 0.0);
        let low = hermitian_pencil(&a, ld.matrix(), 1e-12)?;
        let b = ld.matrix() + CMatrix::identity(n, n);
        let high = hermitian_pencil(&a, &b, 1e-12)?;
        (low.values[0], high.values.last().copied().unwrap_or(1.0).max(1.0))
    };
    let mut constants = BTreeMap::new();
    constants.insert("c_low".to_string(), c_low);
    constants.insert("C_high".to_string(), c_high);
    constants.insert("shift".to_string(), shift);
    Ok(HypothesisReport {
        which: Hypothesis::FormComparison,
        constants,
        samples: n,
        worst_case: None,
        accepted: c_low >= 0.5 - 1e-9,
        stable: true,
        per_lambda: vec![],
        skipped_lambdas: vec![],
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    /// Size of the full random family; stability compares it with its first half.
    pub family_size: usize,
    pub seed: u64,
    pub max_mode: u32,
    /// Worst-case refinement beyond the random family.
    pub refine: bool,
    pub theta_grid: usize,
    pub refine_iterations: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { family_size: 32, seed: 0, max_mode: 8, refine: true, theta_grid: 32, refine_iterations: 3 }
    }
}

fn rayleigh(a: &CMatrix, f: &CVector) -> Complex64 {
    let af = a * f;
    f.iter().zip(af.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn family_vectors(grid: &AnisoGrid, opts: &SweepOptions, max_weight: u32) -> Vec<CVector> {
    standard_family(grid.radii(), opts.family_size, opts.max_mode, max_weight, opts.seed)
        .iter()
        .map(|f| f.sample_interior(grid))
        .filter(|v| v.norm() > 0.0)
        .collect()
}

/// `sup_f (|<B f, f>| - <H f, f>/4) / |f|^2 = max_theta lambda_max(Herm(e^{i theta} B) - H/4)`.
fn numerical_range_excess(b: &CMatrix, h_quarter: &CMatrix, theta_grid: usize) -> f64 {
    let top = |theta: f64| -> f64 {
        let rot = b * Complex64::new(theta.cos(), theta.sin());
        let m = hermitian_part(&rot) - h_quarter;
        m.symmetric_eigenvalues().iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v))
    };
    let mut best = (0.0, f64::NEG_INFINITY);
    let step = core::f64::consts::TAU / theta_grid as f64;
    for i in 0..theta_grid {
        let th = i as f64 * step;
        let v = top(th);
        if v > best.1 {
            best = (th, v);
        }
    }
    let (_, refined) = golden_maximize(top, best.0 - step, best.0 + step, 24);
    refined.max(best.1)
}

/// Empirical `M` of `|Q_tw(f) - Q(f)| <= (Q(f) + M (1 + R(lambda)) |f|^2) / 4`.
pub fn verify_hypothesis2(
    hd: &DiscreteOperator,
    ld: &DiscreteOperator,
    reference: &Symbol,
    lambdas: &[Vec<f64>],
    builder: &TwistMap,
    opts: SweepOptions,
) -> Result<HypothesisReport> {
    same_grid(hd, ld)?;
    let grid = hd.grid();
    let max_weight = hd.weights().as_slice().iter().copied().max().unwrap_or(1);
    let family = family_vectors(grid, &opts, max_weight);
    let half = family.len().div_ceil(2);
    let h_quarter = hd.matrix() * Complex64::new(0.25, 0.0);
    let mut per_lambda = Vec::new();
    let mut skipped = Vec::new();
    for lambda in lambdas {
        let tm = builder.with_lambda(lambda)?;
        let tw = match hd.twist(&tm) {
            Ok(op) => op,
            Err(Error::TwistOverflow { .. }) => {
                skipped.push(lambda.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        let r_lambda = reference.real_part(lambda);
        let b = tw.matrix() - hd.matrix();
        let scale = 4.0 / (1.0 + r_lambda);
        let ratio = |f: &CVector| -> f64 {
            let q = rayleigh(hd.matrix(), f).re;
            let diff = rayleigh(&b, f).norm();
            scale * (diff - 0.25 * q).max(0.0) / f.norm_squared()
        };
        let vals: Vec<f64> = family.iter().map(ratio).collect();
        let family_half = vals[..half].iter().fold(0.0f64, |a, v| a.max(*v));
        let family_full = vals.iter().fold(0.0f64, |a, v| a.max(*v));
        let refined =
            if opts.refine { scale * numerical_range_excess(&b, &h_quarter, opts.theta_grid).max(0.0) } else { 0.0 };
        per_lambda.push(LambdaDetail { lambda: lambda.clone(), r_lambda, family_half, family_full, refined });
    }
    let m_half = per_lambda.iter().map(|d| d.family_half.max(d.refined)).fold(0.0, f64::max);
    let m_full = per_lambda.iter().map(|d| d.value()).fold(0.0, f64::max);
    let worst = per_lambda
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.value().partial_cmp(&b.1.value()).unwrap_or(core::cmp::Ordering::Equal))
        .map(|(i, _)| i);
    let stable = (m_full - m_half).abs() <= 0.1 * m_full || m_full == 0.0;
    let mut constants = BTreeMap::new();
    constants.insert("M".to_string(), m_full);
    constants.insert("M_half_family".to_string(), m_half);
    Ok(HypothesisReport {
        which: Hypothesis::TwistedFormPerturbation,
        constants,
        samples: family.len(),
        worst_case: worst,
        accepted: m_full.is_finite() && stable,
        stable,
        per_lambda,
        skipped_lambdas: skipped,
    })
}

/// Empirical `C` of `Q_{Lambda^kappa}(f) <= C (|<H_tw^kappa f, f>| + (1 + R(lambda))^kappa |f|^2)`.
pub fn verify_hypothesis3(
    hd: &DiscreteOperator,
    ld: &DiscreteOperator,
    kappa: u32,
    reference: &Symbol,
    lambdas: &[Vec<f64>],
    builder: &TwistMap,
    opts: SweepOptions,
) -> Result<HypothesisReport> {
    same_grid(hd, ld)?;
    let expected = hd.weights().kappa();
    if kappa != expected {
        return Err(Error::InvalidArgument(format!("kappa must be {expected} for these weights, got {kappa}")));
    }
    let grid = hd.grid();
    let max_weight = hd.weights().as_slice().iter().copied().max().unwrap_or(1);
    let family = family_vectors(grid, &opts, max_weight);
    let half = family.len().div_ceil(2);
    let a = ld.power(kappa)?;
    let hk = hd.power(kappa)?;
    let n = hd.size();
    let mut per_lambda = Vec::new();
    let mut skipped = Vec::new();
    for lambda in lambdas {
        let tm = builder.with_lambda(lambda)?;
        let tw = match hk.twist(&tm) {
            Ok(op) => op,
            Err(Error::TwistOverflow { .. }) => {
                skipped.push(lambda.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        let r_lambda = reference.real_part(lambda);
        let c = (1.0 + r_lambda).powi(kappa as i32);
        let t = tw.matrix();
        let ratio = |f: &CVector| -> f64 {
            rayleigh(a.matrix(), f).re / (rayleigh(t, f).norm() + c * f.norm_squared())
        };
        let vals: Vec<f64> = family.iter().map(ratio).collect();
        let family_half = vals[..half].iter().fold(0.0f64, |x, v| x.max(*v));
        let family_full = vals.iter().fold(0.0f64, |x, v| x.max(*v));
        let mut refined = 0.0f64;
        if opts.refine {
            let best_idx = (0..vals.len()).max_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap_or(core::cmp::Ordering::Equal));
            let mut thetas = vec![0.0];
            if let Some(i) = best_idx {
                thetas.push(rayleigh(t, &family[i]).arg());
            }
            for mut theta in thetas {
                for _ in 0..opts.refine_iterations {
                    let rot = t * Complex64::new(theta.cos(), -theta.sin());
                    let denom = hermitian_part(&rot) + CMatrix::identity(n, n) * Complex64::new(c, 0.0);
                    if hermitian_eigen(&denom).values[0] <= 0.0 {
                        break;
                    }
                    let pencil = hermitian_pencil(a.matrix(), &denom, 1e-12)?;
                    let top = pencil.vectors.column(pencil.vectors.ncols() - 1).into_owned();
                    refined = refined.max(ratio(&top));
                    theta = rayleigh(t, &top).arg();
                }
            }
        }
        per_lambda.push(LambdaDetail { lambda: lambda.clone(), r_lambda, family_half, family_full, refined });
    }
    let c_half = per_lambda.iter().map(|d| d.family_half.max(d.refined)).fold(0.0, f64::max);
    let c_full = per_lambda.iter().map(|d| d.value()).fold(0.0, f64::max);
    let worst = per_lambda
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.value().partial_cmp(&b.1.value()).unwrap_or(core::cmp::Ordering::Equal))
        .map(|(i, _)| i);
    let stable = (c_full - c_half).abs() <= 0.1 * c_full;
    let mut constants = BTreeMap::new();
    constants.insert("C".to_string(), c_full);
    constants.insert("C_half_family".to_string(), c_half);
    constants.insert("kappa".to_string(), kappa as f64);
    Ok(HypothesisReport {
        which: Hypothesis::PowerFormControl,
        constants,
        samples: family.len(),
        worst_case: worst,
        accepted: c_full.is_finite() && c_full > 0.0 && stable,
        stable,
        per_lambda,
        skipped_lambdas: skipped,
    })
}

/// For `kappa = 1` the first two hypotheses imply the third with
/// `C <= 4 max(1, M/4) / (3 c_low)`.
pub fn kappa_one_bound(c_low: f64, m: f64) -> f64 {
    4.0 * (m / 4.0).max(1.0) / (3.0 * c_low)
}

// ---------------------------------------------------------------------------
// twisted semigroup checks

#[derive(Clone, Debug, PartialEq)]
pub struct SemigroupNormReport {
    /// `(t, M (1 + R) t / 4 - log sigma_max(t))`.
    pub slacks: Vec<(f64, f64)>,
    pub min_slack: f64,
}

impl SemigroupNormReport {
    pub fn accepted(&self) -> bool {
        self.min_slack >= -1e-9
    }
}

/// Compares `|e^{-t H_tw}|_{2->2}` against `exp(M (1 + R(lambda)) t / 4)`.
pub fn check_twisted_sg_norm(tw: &DiscreteOperator, m: f64, r_lambda: f64, times: &[f64]) -> Result<SemigroupNormReport> {
    let mut slacks = Vec::with_capacity(times.len());
    for &t in times {
        let s = tw.semigroup(t)?;
        let sigma = max_singular_value(&s);
        slacks.push((t, m * (1.0 + r_lambda) * t / 4.0 - sigma.ln()));
    }
    let min_slack = slacks.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    Ok(SemigroupNormReport { slacks, min_slack })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FormLowerReport {
    pub min_hermitian_eig: f64,
    /// `-lambda_min(Herm H_tw) / ((M/4)(1 + R(lambda)))`; at most 1 when the bound holds.
    pub ratio: f64,
}

/// `2 Re <H_tw f, f> >= -(M/2)(1 + R(lambda)) |f|^2`, via the Hermitian part.
pub fn check_twisted_form_lower(tw: &DiscreteOperator, m: f64, r_lambda: f64) -> Result<FormLowerReport> {
    let herm = hermitian_part(tw.matrix());
    let lmin = herm.symmetric_eigenvalues().iter().fold(f64::INFINITY, |a, v| a.min(*v));
    let bound = 0.25 * m * (1.0 + r_lambda);
    let ratio = if bound > 0.0 {
        (-lmin).max(0.0) / bound
    } else if lmin >= -1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(FormLowerReport { min_hermitian_eig: lmin, ratio })
}

// ---------------------------------------------------------------------------
// Nash and Gagliardo-Nirenberg type ratios

#[derive(Clone, Debug, PartialEq)]
pub struct RatioReport {
    pub constant: f64,
    pub worst_index: usize,
    /// `None` where `Q(f) = 0` excluded the function.
    pub ratios: Vec<Option<f64>>,
}

fn norms(grid: &AnisoGrid, f: &CVector) -> (f64, f64, f64) {
    let vol = grid.volume_element();
    let l1 = f.iter().map(|v| v.norm()).sum::<f64>() * vol;
    let l2 = (f.iter().map(|v| v.norm_sqr()).sum::<f64>() * vol).sqrt();
    let linf = f.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    (l1, l2, linf)
}

fn ratio_report<F>(ld: &DiscreteOperator, family: &[TestFunction], mut ratio: F) -> Result<RatioReport>
where
    F: FnMut(f64, (f64, f64, f64)) -> f64,
{
    if family.is_empty() {
        return Err(Error::InvalidArgument("empty test family".into()));
    }
    let grid = ld.grid();
    let mut ratios = Vec::with_capacity(family.len());
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, f) in family.iter().enumerate() {
        let v = f.sample_interior(grid);
        let q = ld.quadratic_form(&v)?.re;
        let n = norms(grid, &v);
        if !(q > 0.0) || n.0 == 0.0 {
            ratios.push(None);
            continue;
        }
        let r = ratio(q, n);
        if r > best.1 {
            best = (i, r);
        }
        ratios.push(Some(r));
    }
    if !best.1.is_finite() {
        return Err(Error::InvalidArgument("every test function has a vanishing form".into()));
    }
    Ok(RatioReport { constant: best.1, worst_index: best.0, ratios })
}

/// `max |f|_2^{1 + 1/mu} / (Q(f)^{1/2} |f|_1^{1/mu})` over the family.
pub fn nash_constant(ld: &DiscreteOperator, mu: f64, family: &[TestFunction]) -> Result<RatioReport> {
    if !(mu > 0.0) {
        return Err(Error::NonPositive { name: "mu", value: mu });
    }
    ratio_report(ld, family, |q, (l1, l2, _)| l2.powf(1.0 + 1.0 / mu) / (q.sqrt() * l1.powf(1.0 / mu)))
}

/// `max |f|_inf / (Q(f)^{mu/2} |f|_2^{1 - mu})`; requires `mu < 1`.
pub fn gn_check(ld: &DiscreteOperator, mu: f64, family: &[TestFunction]) -> Result<RatioReport> {
    if !(mu < 1.0) {
        return Err(Error::InvalidArgument(format!("GN analogue requires mu < 1, got {mu}")));
    }
    ratio_report(ld, family, |q, (_, l2, linf)| linf / (q.powf(0.5 * mu) * l2.powf(1.0 - mu)))
}

// ---------------------------------------------------------------------------
// exponents

#[derive(Clone, Debug, PartialEq)]
pub struct SlopeReport {
    pub slope: f64,
    pub expected: f64,
    pub stderr: f64,
    /// Slopes fitted on the first and second half of the times.
    pub half_slopes: (f64, f64),
    pub norms: Vec<(f64, f64)>,
}

impl SlopeReport {
    pub fn relative_error(&self) -> f64 {
        ((self.slope - self.expected) / self.expected).abs()
    }
}

/// Log-log slope of `|K(t, .)|_2` in `t`, expected `-mu/2`.
pub fn ultracontractivity_slope(s: &Symbol, times: &[f64], grid: &AnisoGrid, freq_counts: &[usize]) -> Result<SlopeReport> {
    if times.len() < 4 {
        return Err(Error::InvalidArgument("need at least four times".into()));
    }
    let (lo, hi) = times.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &t| (a.min(t), b.max(t)));
    if hi / lo < 10.0 - 1e-12 {
        return Err(Error::InvalidArgument("times must span at least one decade".into()));
    }
    let profile = norm_profile(s, 2.0, times, grid, freq_counts)?;
    let xs: Vec<f64> = profile.points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = profile.points.iter().map(|p| p.1.ln()).collect();
    let (slope, _, stderr) = linear_fit(&xs, &ys);
    let h = xs.len() / 2;
    let (s1, _, _) = linear_fit(&xs[..h.max(2)], &ys[..h.max(2)]);
    let (s2, _, _) = linear_fit(&xs[h.min(xs.len() - 2)..], &ys[h.min(xs.len() - 2)..]);
    Ok(SlopeReport {
        slope,
        expected: -0.5 * s.weights().mu_f64(),
        stderr,
        half_slopes: (s1, s2),
        norms: profile.points,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolderReport {
    pub alpha: f64,
    pub stderr: f64,
    /// `(lag, max increment)`.
    pub increments: Vec<(f64, f64)>,
    /// Lower floor `(1 - mu)/2` of the exponent.
    pub floor: f64,
}

impl HolderReport {
    pub fn accepted(&self) -> bool {
        self.alpha >= self.floor - 0.1
    }
}

/// Regresses `log max |K(x + delta e_k) - K(x)|` on `log delta` for lags
/// `delta = 2^j h_k`, `x` within `window` nodes of `center`.
pub fn holder_exponent(
    values: &CVector,
    grid: &AnisoGrid,
    center: &[f64],
    mu: f64,
    window: usize,
    n_lags: usize,
) -> Result<HolderReport> {
    if !(mu < 1.0) {
        return Err(Error::InvalidArgument(format!("Holder floor requires mu < 1, got {mu}")));
    }
    if values.len() != grid.interior_len() {
        return Err(Error::DimensionMismatch { expected: grid.interior_len(), got: values.len() });
    }
    let c_idx = grid.locate(center).ok_or_else(|| Error::NodeOutsideGrid(format!("{center:?}")))?;
    let d = grid.dim();
    let mut increments = Vec::with_capacity(n_lags);
    for j in 0..n_lags {
        let lag = 1usize << j;
        let mut worst = 0.0f64;
        let mut delta = 0.0;
        for k in 0..d {
            delta = (lag as f64) * grid.spacing(k);
            for i in 0..grid.interior_len() {
                let idx = grid.interior_multi_index(i);
                if (0..d).any(|q| idx[q].abs_diff(c_idx[q]) > window) {
                    continue;
                }
                let mut shifted = idx.clone();
                shifted[k] += lag;
                if let Some(s) = grid.interior_flat(&shifted) {
                    worst = worst.max((values[s] - values[i]).norm());
                }
            }
        }
        if worst > 0.0 {
            increments.push((delta, worst));
        }
    }
    if increments.len() < 2 {
        return Err(Error::InvalidArgument("not enough non-zero increments".into()));
    }
    let xs: Vec<f64> = increments.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = increments.iter().map(|p| p.1.ln()).collect();
    let (alpha, _, stderr) = linear_fit(&xs, &ys);
    Ok(HolderReport { alpha, stderr, increments, floor: 0.5 * (1.0 - mu) })
}
