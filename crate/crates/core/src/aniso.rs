//! Multi-index arithmetic, weighted degrees, anisotropic dilations and
//! positive-homogeneous symbols.
//!
//! Coordinates are those of a semi-elliptic basis: a weight vector `m`
//! fixes the diagonal exponent `E = diag(1/(2 m_k))`, the dilation
//! `t^E x = (t^{1/(2 m_1)} x_1, ..., t^{1/(2 m_d)} x_d)` and the
//! homogeneous order `mu = |1 : 2m| = sum_k 1/(2 m_k)`. A symbol
//! `P(xi) = sum a_beta xi^beta` is admissible when every monomial has
//! weighted degree `|beta : m| = 2`, so that `t P(xi) = P(t^E xi)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;
use num_rational::Ratio;
#[allow(unused_imports)]
use num_traits::{Float, Zero};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::{compass_maximize, CompassOptions};
use crate::rng::SeededRng;

/// Exact rational used for weighted degrees and homogeneous orders.
pub type Rational = Ratio<i64>;

/// The anisotropy `m` of a semi-elliptic operator.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WeightVector {
    m: Vec<u32>,
}

impl WeightVector {
    pub fn new(m: Vec<u32>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::InvalidWeights("dimension must be at least 1".into()));
        }
        if let Some(k) = m.iter().position(|&mk| mk == 0) {
            return Err(Error::InvalidWeights(format!("m_{} must be a positive integer", k + 1)));
        }
        Ok(Self { m })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.m
    }

    /// `mu = sum_k 1/(2 m_k)`, exact.
    pub fn homogeneous_order(&self) -> Rational {
        self.m
            .iter()
            .fold(Rational::zero(), |acc, &mk| acc + Rational::new(1, 2 * mk as i64))
    }

    /// Exponents `1/(2 m_k)` of the diagonal dilation group.
    pub fn dilation_exponents(&self) -> Vec<Rational> {
        self.m.iter().map(|&mk| Rational::new(1, 2 * mk as i64)).collect()
    }

    pub fn exponents(&self) -> DilationExponents {
        DilationExponents {
            e: self.m.iter().map(|&mk| 1.0 / (2.0 * mk as f64)).collect(),
        }
    }

    /// Exponents `1 - 1/(2 m_k)` of the group under which the
    /// Legendre-Fenchel transform of the symbol is homogeneous.
    pub fn conjugate_exponents(&self) -> DilationExponents {
        DilationExponents {
            e: self.m.iter().map(|&mk| 1.0 - 1.0 / (2.0 * mk as f64)).collect(),
        }
    }

    /// `kappa = min { n : mu / n < 1 }`.
    pub fn kappa(&self) -> u32 {
        let mu = self.homogeneous_order();
        (mu.floor().to_integer() + 1) as u32
    }

    pub fn mu_f64(&self) -> f64 {
        let mu = self.homogeneous_order();
        *mu.numer() as f64 / *mu.denom() as f64
    }

    /// Every multi-index `alpha` with `|alpha : m| = 1` (the principal indices).
    pub fn principal_indices(&self) -> Vec<MultiIndex> {
        self.indices_with_degree_at_most(Rational::from_integer(1))
            .into_iter()
            .filter(|a| weighted_degree(a, self).map(|d| d == Rational::from_integer(1)).unwrap_or(false))
            .collect()
    }

    /// Every multi-index `alpha` with `|alpha : m| <= bound`.
    pub fn indices_with_degree_at_most(&self, bound: Rational) -> Vec<MultiIndex> {
        let d = self.dim();
        let caps: Vec<u32> = self
            .m
            .iter()
            .map(|&mk| (bound * Rational::from_integer(mk as i64)).floor().to_integer().max(0) as u32)
            .collect();
        let mut out = Vec::new();
        let mut cur = vec![0u32; d];
        loop {
            let idx = MultiIndex::new(cur.clone());
            if weighted_degree(&idx, self).map(|deg| deg <= bound).unwrap_or(false) {
                out.push(idx);
            }
            let mut k = d;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                if cur[k] < caps[k] {
                    cur[k] += 1;
                    for c in cur.iter_mut().skip(k + 1) {
                        *c = 0;
                    }
                    break;
                }
            }
        }
    }
}

/// A multi-index `beta = (beta_1, ..., beta_d)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        Self(entries)
    }

    pub fn zero(d: usize) -> Self {
        Self(vec![0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    pub fn add(&self, other: &MultiIndex) -> Result<MultiIndex> {
        check_dim(self.dim(), other.dim())?;
        Ok(MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    /// `xi^beta` for real `xi`.
    pub fn monomial(&self, xi: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(xi)
            .fold(1.0, |acc, (&b, &x)| if b == 0 { acc } else { acc * x.powi(b as i32) })
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{b}")?;
        }
        write!(f, ")")
    }
}

/// Exponents of a diagonal one-parameter group `t^F`.
#[derive(Clone, Debug, PartialEq)]
pub struct DilationExponents {
    pub e: Vec<f64>,
}

impl DilationExponents {
    pub fn new(e: Vec<f64>) -> Result<Self> {
        if e.is_empty() || e.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("dilation exponents must be positive".into()));
        }
        Ok(Self { e })
    }

    pub fn dim(&self) -> usize {
        self.e.len()
    }

    pub fn trace(&self) -> f64 {
        self.e.iter().sum()
    }

    /// `t^F x`, componentwise `t^{e_k} x_k`.
    pub fn apply(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if !(t > 0.0) {
            return Err(Error::NonPositive { name: "t", value: t });
        }
        check_dim(self.dim(), x.len())?;
        Ok(self.e.iter().zip(x).map(|(&e, &xk)| t.powf(e) * xk).collect())
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// `|beta : m| = sum_k beta_k / m_k`, exact.
pub fn weighted_degree(beta: &MultiIndex, m: &WeightVector) -> Result<Rational> {
    check_dim(m.dim(), beta.dim())?;
    Ok(beta
        .0
        .iter()
        .zip(m.as_slice())
        .fold(Rational::zero(), |acc, (&b, &mk)| acc + Rational::new(b as i64, mk as i64)))
}

/// `mu = |1 : 2m|`.
pub fn homogeneous_order(m: &WeightVector) -> Rational {
    m.homogeneous_order()
}

/// `t^E x` with `(t^E x)_k = t^{1/(2 m_k)} x_k`.
pub fn dilate(m: &WeightVector, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    m.exponents().apply(t, x)
}

/// One monomial `a_beta xi^beta` of a symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub beta: MultiIndex,
    pub coeff: Complex64,
}

impl Term {
    pub fn real(beta: Vec<u32>, coeff: f64) -> Self {
        Self { beta: MultiIndex::new(beta), coeff: Complex64::new(coeff, 0.0) }
    }
}

/// A positive-homogeneous polynomial symbol `P(xi) = sum a_beta xi^beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Symbol {
    weights: WeightVector,
    terms: Vec<Term>,
    real_part_only: bool,
}

impl Symbol {
    /// Builds a symbol after checking dimensions and `|beta : m| = 2` for
    /// every term. Repeated multi-indices are merged and zero terms dropped.
    pub fn new(weights: WeightVector, terms: Vec<Term>) -> Result<Self> {
        let two = Rational::from_integer(2);
        let mut merged: Vec<Term> = Vec::with_capacity(terms.len());
        for term in terms {
            let degree = weighted_degree(&term.beta, &weights)?;
            if degree != two {
                return Err(Error::NotHomogeneous { beta: format!("{}", term.beta), degree: format!("{degree}") });
            }
            match merged.iter_mut().find(|t| t.beta == term.beta) {
                Some(existing) => existing.coeff += term.coeff,
                None => merged.push(term),
            }
        }
        merged.retain(|t| t.coeff != Complex64::new(0.0, 0.0));
        merged.sort_by(|a, b| a.beta.cmp(&b.beta));
        let real_part_only = merged.iter().all(|t| t.coeff.im == 0.0);
        Ok(Self { weights, terms: merged, real_part_only })
    }

    /// As [`Symbol::new`], additionally rejecting symbols whose real part is
    /// not positive on a `n_sphere_samples` sample of the unit sphere.
    pub fn new_strict(weights: WeightVector, terms: Vec<Term>, n_sphere_samples: usize) -> Result<Self> {
        let s = Self::new(weights, terms)?;
        let report = check_positive_definite(&s, n_sphere_samples)?;
        if !(report.min_value > 0.0) {
            return Err(Error::NotPositiveDefinite { min_value: report.min_value });
        }
        Ok(s)
    }

    /// Convenience constructor for real coefficients.
    pub fn from_real(m: &[u32], terms: &[(&[u32], f64)]) -> Result<Self> {
        let weights = WeightVector::new(m.to_vec())?;
        Self::new(weights, terms.iter().map(|(b, c)| Term::real(b.to_vec(), *c)).collect())
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.weights.dim()
    }

    /// True when all coefficients are real (symmetric operator).
    pub fn real_part_only(&self) -> bool {
        self.real_part_only
    }

    /// `P(xi)`.
    pub fn eval(&self, xi: &[f64]) -> Complex64 {
        self.terms.iter().map(|t| t.coeff * t.beta.monomial(xi)).sum()
    }

    /// `R(xi) = Re P(xi)`.
    pub fn real_part(&self, xi: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.coeff.re * t.beta.monomial(xi)).sum()
    }

    /// Gradient of `R` written into `out`.
    pub fn real_gradient(&self, xi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for t in &self.terms {
            if t.coeff.re == 0.0 {
                continue;
            }
            for k in 0..xi.len() {
                let bk = t.beta.0[k];
                if bk == 0 {
                    continue;
                }
                let mut p = t.coeff.re * bk as f64;
                for (j, &x) in xi.iter().enumerate() {
                    let e = if j == k { bk - 1 } else { t.beta.0[j] };
                    if e > 0 {
                        p *= x.powi(e as i32);
                    }
                }
                out[k] += p;
            }
        }
    }

    /// Hessian of `R` as a row-major `d x d` array.
    pub fn real_hessian(&self, xi: &[f64], out: &mut [f64]) {
        let d = xi.len();
        out.iter_mut().for_each(|h| *h = 0.0);
        let mut exps = vec![0u32; d];
        for t in &self.terms {
            if t.coeff.re == 0.0 {
                continue;
            }
            for k in 0..d {
                for l in k..d {
                    exps.copy_from_slice(&t.beta.0);
                    let mut c = t.coeff.re;
                    if exps[k] == 0 {
                        continue;
                    }
                    c *= exps[k] as f64;
                    exps[k] -= 1;
                    if exps[l] == 0 {
                        continue;
                    }
                    c *= exps[l] as f64;
                    exps[l] -= 1;
                    let v = exps
                        .iter()
                        .zip(xi)
                        .fold(c, |acc, (&e, &x)| if e == 0 { acc } else { acc * x.powi(e as i32) });
                    out[k * d + l] += v;
                    if l != k {
                        out[l * d + k] += v;
                    }
                }
            }
        }
    }

    /// `P(-xi) = P(xi)`: every monomial has even total order.
    pub fn is_even(&self) -> bool {
        self.terms.iter().all(|t| t.beta.order() % 2 == 0)
    }

    /// The symbol `c P`.
    pub fn scaled(&self, c: f64) -> Symbol {
        let terms = self.terms.iter().map(|t| Term { beta: t.beta.clone(), coeff: t.coeff * c }).collect();
        Symbol::new(self.weights.clone(), terms).expect("scaling preserves homogeneity")
    }

    /// When `R = sum_k c_k xi_k^{2 m_k}` with real `c_k > 0`, returns the `c_k`.
    pub fn separable_coefficients(&self) -> Option<Vec<f64>> {
        let d = self.dim();
        let mut c = vec![0.0; d];
        for t in &self.terms {
            let nz: Vec<usize> = (0..d).filter(|&k| t.beta.0[k] != 0).collect();
            if nz.len() != 1 || t.coeff.im != 0.0 {
                return None;
            }
            c[nz[0]] += t.coeff.re;
        }
        if c.iter().all(|&ck| ck > 0.0) {
            Some(c)
        } else {
            None
        }
    }

    /// SHA-256 over a canonical encoding of `m` and the terms.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for &mk in self.weights.as_slice() {
            h.update(mk.to_le_bytes());
        }
        h.update([0xff]);
        for t in &self.terms {
            for &b in &t.beta.0 {
                h.update(b.to_le_bytes());
            }
            h.update(t.coeff.re.to_le_bytes());
            h.update(t.coeff.im.to_le_bytes());
        }
        let out = h.finalize();
        let mut s = String::with_capacity(64);
        for byte in out.iter() {
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }
}

/// `P(xi)`.
pub fn eval_symbol(s: &Symbol, xi: &[f64]) -> Result<Complex64> {
    check_dim(s.dim(), xi.len())?;
    Ok(s.eval(xi))
}

/// Max over samples of `|t P(xi) - P(t^E xi)| / (|t P(xi)| + floor)`.
pub fn check_homogeneity(s: &Symbol, samples: &[(f64, Vec<f64>)]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (t, xi) in samples {
        let lhs = s.eval(xi) * *t;
        let rhs = s.eval(&dilate(s.weights(), *t, xi)?);
        let dev = (lhs - rhs).norm() / (lhs.norm() + f64::MIN_POSITIVE);
        worst = worst.max(dev);
    }
    Ok(worst)
}

/// Quasi-uniform points on the Euclidean unit sphere of `R^d`, always
/// including the `2d` signed coordinate axes.
pub fn sphere_points(d: usize, n: usize) -> Vec<Vec<f64>> {
    let mut pts = Vec::with_capacity(n + 2 * d);
    match d {
        0 => return pts,
        1 => {}
        2 => {
            for j in 0..n {
                let th = core::f64::consts::TAU * j as f64 / n as f64;
                pts.push(vec![th.cos(), th.sin()]);
            }
        }
        3 => {
            let golden = core::f64::consts::PI * (3.0 - 5.0.sqrt());
            for j in 0..n {
                let z = 1.0 - 2.0 * (j as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let th = golden * j as f64;
                pts.push(vec![r * th.cos(), r * th.sin(), z]);
            }
        }
        _ => {
            let mut rng = SeededRng::new(0x5eed_5fe7e);
            for _ in 0..n {
                let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                pts.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
    }
    for k in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[k] = sign;
            pts.push(e);
        }
    }
    pts
}

fn project_to_sphere(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// Indices of the `k` best entries of `vals` (largest first).
fn top_k(vals: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(core::cmp::Ordering::Equal));
    idx.truncate(k);
    idx
}

/// Sampled-then-refined extremum of `f` over the unit sphere.
pub(crate) fn sphere_extremum<F: FnMut(&[f64]) -> f64>(
    d: usize,
    n_samples: usize,
    maximize: bool,
    mut f: F,
) -> (f64, Vec<f64>) {
    let pts = sphere_points(d, n_samples);
    let sign = if maximize { 1.0 } else { -1.0 };
    let vals: Vec<f64> = pts.iter().map(|p| sign * f(p)).collect();
    let mut best = (f64::NEG_INFINITY, pts[0].clone());
    let step = if d == 1 { 0.0 } else { 2.0 / (n_samples as f64).powf(1.0 / (d as f64 - 1.0).max(1.0)) };
    for i in top_k(&vals, 4) {
        let (x, fx) = if d == 1 {
            (pts[i].clone(), vals[i])
        } else {
            compass_maximize(
                |p| sign * f(p),
                &pts[i],
                CompassOptions { step, min_step: 1e-10, max_evals: 4000 },
                project_to_sphere,
            )
        };
        if fx > best.0 {
            best = (fx, x);
        }
    }
    (sign * best.0, best.1)
}

/// Result of sampling the real part of a symbol on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct PositiveDefiniteReport {
    pub min_value: f64,
    pub argmin: Vec<f64>,
}

impl PositiveDefiniteReport {
    pub fn accepted(&self) -> bool {
        self.min_value > 0.0
    }
}

/// Minimum of `R` over a quasi-uniform sample of the unit sphere, polished by
/// local search. Positivity there certifies (probabilistically) that `R` is
/// positive-definite, since homogeneity carries the sphere to every ray.
pub fn check_positive_definite(s: &Symbol, n_sphere_samples: usize) -> Result<PositiveDefiniteReport> {
    let d = s.dim();
    if n_sphere_samples < 2 * d {
        return Err(Error::InvalidArgument(format!("need at least {} sphere samples, got {n_sphere_samples}", 2 * d)));
    }
    let (min_value, argmin) = sphere_extremum(d, n_sphere_samples, false, |p| s.real_part(p));
    Ok(PositiveDefiniteReport { min_value, argmin })
}

/// Extremal ratios of two positive-homogeneous functions on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparabilityReport {
    pub constant_c: f64,
    pub constant_upper: f64,
    pub witness_points: Vec<Vec<f64>>,
    /// Largest change of `Q/R` at the witnesses under `x -> s^F x`,
    /// `s in {1/2, 2}`; zero when both functions share the group `t^F`.
    pub homogeneity_defect: f64,
}

/// `c = min Q/R`, `C = max Q/R` over the unit sphere. When `Q` and `R` are
/// homogeneous under the same contracting group `t^F`, every `x != 0` is
/// `s^F w` for a unique sphere point `w`, so `c R <= Q <= C R` globally.
pub fn comparability_constants<Q, R>(
    mut q: Q,
    mut r: R,
    exponents: &DilationExponents,
    n_samples: usize,
) -> Result<ComparabilityReport>
where
    Q: FnMut(&[f64]) -> f64,
    R: FnMut(&[f64]) -> f64,
{
    let d = exponents.dim();
    if n_samples < 2 * d {
        return Err(Error::InvalidArgument(format!("need at least {} samples", 2 * d)));
    }
    for p in sphere_points(d, n_samples) {
        let rv = r(&p);
        if !(rv > 0.0) {
            return Err(Error::NotPositiveDefinite { min_value: rv });
        }
    }
    let mut ratio = |p: &[f64]| q(p) / r(p);
    let (c_low, wmin) = sphere_extremum(d, n_samples, false, &mut ratio);
    let (c_high, wmax) = sphere_extremum(d, n_samples, true, &mut ratio);
    let mut defect: f64 = 0.0;
    for w in [&wmin, &wmax] {
        let base = ratio(w);
        for s in [0.5, 2.0] {
            let y = exponents.apply(s, w)?;
            defect = defect.max((ratio(&y) - base).abs() / base.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(ComparabilityReport {
        constant_c: c_low,
        constant_upper: c_high,
        witness_points: vec![wmin, wmax],
        homogeneity_defect: defect,
    })
}

/// Outcome of the majorant search.
#[derive(Clone, Debug, PartialEq)]
pub struct MajorantReport {
    /// `M_eps = max(1, sup_xi (|xi^alpha| - eps R(xi)^kappa))`.
    pub m_eps: f64,
    pub sup_value: f64,
    pub argmax: Vec<f64>,
    pub doublings: usize,
}

/// Smallest admissible `M_eps >= 1` with `|xi^alpha| <= eps R(xi)^kappa + M_eps`.
///
/// The supremum is searched on anisotropic boxes `[-t^{e_k}, t^{e_k}]`,
/// starting at `t = 2` and doubling `t` until the running supremum moves by
/// less than `1e-9` (relative) over two consecutive doublings; the best grid
/// points are then polished by local search.
pub fn scaling_majorant(alpha: &MultiIndex, s: &Symbol, epsilon: f64, kappa: u32) -> Result<MajorantReport> {
    let m = s.weights();
    let degree = weighted_degree(alpha, m)? / Rational::from_integer(2);
    if degree >= Rational::from_integer(kappa as i64) {
        return Err(Error::MajorantDegree { degree: format!("{degree}"), kappa });
    }
    if !(epsilon > 0.0) {
        return Err(Error::NonPositive { name: "epsilon", value: epsilon });
    }
    let d = s.dim();
    let objective = |xi: &[f64]| alpha.monomial(xi).abs() - epsilon * s.real_part(xi).powi(kappa as i32);
    let per_axis: usize = match d {
        1 => 201,
        2 => 41,
        3 => 21,
        _ => 9,
    };
    let exps = m.exponents();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_pt = vec![0.0; d];
    let mut t = 2.0;
    let mut stable_rounds = 0;
    let mut doublings = 0;
    let mut prev = f64::NEG_INFINITY;
    let mut xi = vec![0.0; d];
    loop {
        let radii: Vec<f64> = exps.e.iter().map(|&e| t.powf(e)).collect();
        let total = per_axis.pow(d as u32);
        for flat in 0..total {
            let mut rem = flat;
            for k in (0..d).rev() {
                let i = rem % per_axis;
                rem /= per_axis;
                xi[k] = radii[k] * (-1.0 + 2.0 * i as f64 / (per_axis - 1) as f64);
            }
            let v = objective(&xi);
            if v > best_val {
                best_val = v;
                best_pt.copy_from_slice(&xi);
            }
        }
        let change = (best_val - prev).abs();
        if prev.is_finite() && change <= 1e-9 * best_val.abs().max(1.0) {
            stable_rounds += 1;
        } else {
            stable_rounds = 0;
        }
        if stable_rounds >= 2 {
            break;
        }
        prev = best_val;
        t *= 2.0;
        doublings += 1;
        if doublings > 80 {
            return Err(Error::NoConvergence("majorant supremum did not stabilise".into()));
        }
    }
    let step = exps.e.iter().map(|&e| 2.0 * t.powf(e) / (per_axis - 1) as f64).fold(f64::INFINITY, f64::min);
    let (x, v) = compass_maximize(objective, &best_pt, CompassOptions { step, min_step: 1e-12, max_evals: 50_000 }, |_| {});
    if v > best_val {
        best_val = v;
        best_pt = x;
    }
    Ok(MajorantReport { m_eps: best_val.max(1.0), sup_value: best_val, argmax: best_pt, doublings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(m: &[u32]) -> WeightVector {
        WeightVector::new(m.to_vec()).unwrap()
    }

    fn example() -> Symbol {
        Symbol::from_real(&[1, 2], &[(&[2, 0], 1.0), (&[0, 4], 1.0)]).unwrap()
    }

    #[test]
    fn weighted_degree_examples() {
        let m = w(&[1, 2]);
        assert_eq!(weighted_degree(&MultiIndex::new(vec![2, 0]), &m).unwrap(), Rational::from_integer(2));
        assert_eq!(weighted_degree(&MultiIndex::new(vec![0, 4]), &m).unwrap(), Rational::from_integer(2));
        assert_eq!(weighted_degree(&MultiIndex::zero(2), &m).unwrap(), Rational::zero());
        assert!(matches!(
            weighted_degree(&MultiIndex::new(vec![1]), &m),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn homogeneous_order_examples() {
        assert_eq!(homogeneous_order(&w(&[1, 2])), Rational::new(3, 4));
        assert_eq!(homogeneous_order(&w(&[1, 1, 1])), Rational::new(3, 2));
        assert_eq!(homogeneous_order(&w(&[2])), Rational::new(1, 4));
        assert_eq!(w(&[1, 2]).kappa(), 1);
        assert_eq!(w(&[1, 1]).kappa(), 2);
        assert_eq!(w(&[1, 1, 1]).kappa(), 2);
    }

    #[test]
    fn weights_reject_zero_and_empty() {
        assert!(WeightVector::new(vec![]).is_err());
        assert!(WeightVector::new(vec![1, 0]).is_err());
    }

    #[test]
    fn dilate_examples() {
        let m = w(&[1, 2]);
        let y = dilate(&m, 16.0, &[1.0, 1.0]).unwrap();
        assert!((y[0] - 4.0).abs() < 1e-14 && (y[1] - 2.0).abs() < 1e-14);
        assert_eq!(dilate(&m, 1.0, &[0.3, -2.0]).unwrap(), vec![0.3, -2.0]);
        assert!((dilate(&w(&[1]), 4.0, &[3.0]).unwrap()[0] - 6.0).abs() < 1e-14);
        assert!(matches!(dilate(&m, 0.0, &[1.0, 1.0]), Err(Error::NonPositive { .. })));
        assert!(dilate(&m, -1.0, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn eval_examples() {
        let s = example();
        assert_eq!(eval_symbol(&s, &[1.0, 1.0]).unwrap(), Complex64::new(2.0, 0.0));
        assert_eq!(eval_symbol(&s, &[0.0, 0.0]).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(eval_symbol(&s, &[2.0, 1.0]).unwrap(), Complex64::new(5.0, 0.0));
    }

    #[test]
    fn symbol_rejects_wrong_degree() {
        assert!(matches!(
            Symbol::from_real(&[1, 2], &[(&[2, 0], 1.0), (&[0, 2], 1.0)]),
            Err(Error::NotHomogeneous { .. })
        ));
    }

    #[test]
    fn homogeneity_examples() {
        let s = example();
        assert_eq!(check_homogeneity(&s, &[(1.0, vec![0.7, -1.3])]).unwrap(), 0.0);
        let dev = check_homogeneity(&s, &[(3.7, vec![0.7, -1.3]), (0.01, vec![5.0, 2.0])]).unwrap();
        assert!(dev < 1e-14);
        let sq = Symbol::from_real(&[1], &[(&[2], 1.0)]).unwrap();
        assert!(check_homogeneity(&sq, &[(4.0, vec![1.0])]).unwrap() < 1e-15);
    }

    #[test]
    fn positive_definite_examples() {
        let s = example();
        // dense 1-D parameter sweep over the circle as the oracle
        let mut sweep = f64::INFINITY;
        for j in 0..200_000 {
            let th = core::f64::consts::TAU * j as f64 / 200_000.0;
            sweep = sweep.min(s.real_part(&[th.cos(), th.sin()]));
        }
        let rep = check_positive_definite(&s, 720).unwrap();
        assert!((rep.min_value - sweep).abs() < 1e-9, "{} vs {}", rep.min_value, sweep);
        assert!((rep.min_value - 0.75).abs() < 1e-9);

        let bad = Symbol::from_real(&[1, 1], &[(&[2, 0], 1.0), (&[0, 2], -1.0)]).unwrap();
        let rep = check_positive_definite(&bad, 100).unwrap();
        assert!(rep.min_value < 0.0 && !rep.accepted());
        assert!(Symbol::new_strict(w(&[1, 1]), bad.terms().to_vec(), 100).is_err());

        let sq = Symbol::from_real(&[1], &[(&[2], 1.0)]).unwrap();
        let rep = check_positive_definite(&sq, 2).unwrap();
        assert_eq!(rep.min_value, 1.0);
        assert!(check_positive_definite(&sq, 1).is_err());
    }

    #[test]
    fn comparability_examples() {
        let s = example();
        let exps = s.weights().exponents();
        let rep = comparability_constants(|p| s.real_part(p), |p| s.real_part(p), &exps, 200).unwrap();
        assert_eq!((rep.constant_c, rep.constant_upper), (1.0, 1.0));
        let rep = comparability_constants(|p| 2.0 * s.real_part(p), |p| s.real_part(p), &exps, 200).unwrap();
        assert_eq!((rep.constant_c, rep.constant_upper), (2.0, 2.0));
        assert!(rep.homogeneity_defect < 1e-12);
        let err = comparability_constants(|p| p[0], |p| p[0], &exps, 200);
        assert!(matches!(err, Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn majorant_examples() {
        let s = example();
        let rep = scaling_majorant(&MultiIndex::new(vec![1, 0]), &s, 1.0, 1).unwrap();
        // sup_u (|u| - u^2) = 1/4
        assert!((rep.sup_value - 0.25).abs() < 1e-9);
        assert_eq!(rep.m_eps, 1.0);
        let rep = scaling_majorant(&MultiIndex::zero(2), &s, 1.0, 1).unwrap();
        assert_eq!(rep.m_eps, 1.0);
        // sup_u (|u| - u^4/10) at u^3 = 5/2, value (3/4) u
        let rep = scaling_majorant(&MultiIndex::new(vec![0, 1]), &s, 0.1, 1).unwrap();
        let oracle = 0.75 * 2.5f64.powf(1.0 / 3.0);
        assert!((rep.m_eps - oracle).abs() < 1e-9, "{} vs {}", rep.m_eps, oracle);
        assert!(matches!(
            scaling_majorant(&MultiIndex::new(vec![2, 0]), &s, 1.0, 1),
            Err(Error::MajorantDegree { .. })
        ));
    }

    #[test]
    fn principal_indices_enumeration() {
        let p = w(&[1, 2]).principal_indices();
        assert_eq!(p, vec![MultiIndex::new(vec![0, 2]), MultiIndex::new(vec![1, 0])]);
        let all = w(&[1, 2]).indices_with_degree_at_most(Rational::from_integer(1));
        assert_eq!(all.len(), 4); // 0, (0,1), (0,2), (1,0)
    }

    #[test]
    fn digest_is_stable_and_discriminating() {
        let a = example();
        assert_eq!(a.digest(), example().digest());
        assert_ne!(a.digest(), a.scaled(2.0).digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let s = Symbol::from_real(&[1, 2], &[(&[2, 0], 1.0), (&[1, 2], 0.5), (&[0, 4], 2.0)]).unwrap();
        let x = [0.4, -0.9];
        let mut g = [0.0; 2];
        let mut h = [0.0; 4];
        s.real_gradient(&x, &mut g);
        s.real_hessian(&x, &mut h);
        let eps = 1e-5;
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += eps;
            xm[k] -= eps;
            let fd = (s.real_part(&xp) - s.real_part(&xm)) / (2.0 * eps);
            assert!((fd - g[k]).abs() < 1e-8);
            let mut gp = [0.0; 2];
            let mut gm = [0.0; 2];
            s.real_gradient(&xp, &mut gp);
            s.real_gradient(&xm, &mut gm);
            for l in 0..2 {
                assert!(((gp[l] - gm[l]) / (2.0 * eps) - h[l * 2 + k]).abs() < 1e-7);
            }
        }
    }
}
