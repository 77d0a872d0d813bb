//! Divergence-form operators `H = sum D^beta { a_{alpha beta}(x) D^alpha }` on a
//! Dirichlet box, their reference operators, semigroups, twists, powers and
//! anisotropic rescalings.
//!
//! `D = -i d/dx`. A difference `delta^p` along one axis is the binomial stencil
//! `sum_j (-1)^{p-j} C(p, j) f(i + j - floor(p/2))`, so `p = 1` is a forward
//! difference and `p = 2` the centred second difference. Unknowns are the
//! interior nodes; `f` is extended by zero, and `D^alpha f` lives on the
//! lattice of every point it can be non-zero. The matrix is then
//! `sum (D^beta)^* diag(a_{alpha beta}) D^alpha`, so its form is exactly the
//! discrete sum `sum_x a (D^alpha f) conj(D^beta f) prod h_k`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;
use once_cell::race::OnceBox;

use crate::aniso::{check_positive_definite, weighted_degree, MultiIndex, Rational, Symbol, Term, WeightVector};
use crate::error::{Error, Result};
use crate::grid::AnisoGrid;
use crate::linalg::{expm, hermitian_eigen, hermitian_pencil, spectral_apply, CMatrix, CVector, HermitianEigen};

/// Largest number of unknowns handled by the dense path.
pub const DENSE_LIMIT: usize = 4096;

/// Largest admissible `max |lambda(phi(x))|` before `e^{lambda(phi)}` is rejected.
pub const TWIST_GUARD: f64 = 300.0;

/// Lower comparability factor required of the principal coefficients.
pub const PRINCIPAL_LOWER: f64 = 0.75;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Constant Hermitian principal coefficients `A_{alpha beta}`, indexed by the
/// multi-indices with `|alpha : m| = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalCoefficients {
    weights: WeightVector,
    indices: Vec<MultiIndex>,
    matrix: CMatrix,
    symbol: Symbol,
}

impl PrincipalCoefficients {
    /// Entries not listed are zero. Rejects non-principal indices, a
    /// non-Hermitian matrix and symbols that fail the positivity sweep.
    pub fn new(weights: WeightVector, entries: &[(MultiIndex, MultiIndex, Complex64)]) -> Result<Self> {
        let indices = weights.principal_indices();
        let p = indices.len();
        let mut matrix = CMatrix::zeros(p, p);
        for (alpha, beta, v) in entries {
            let i = position(&indices, alpha)?;
            let j = position(&indices, beta)?;
            matrix[(i, j)] += *v;
        }
        for i in 0..p {
            for j in 0..p {
                if (matrix[(i, j)] - matrix[(j, i)].conj()).norm() > 1e-14 * (1.0 + matrix[(i, j)].norm()) {
                    return Err(Error::CoefficientCondition {
                        condition: "hermitian pairing",
                        detail: format!("A[{}][{}] != conj(A[{}][{}])", indices[i], indices[j], indices[j], indices[i]),
                    });
                }
            }
        }
        let mut terms = Vec::new();
        for i in 0..p {
            for j in 0..p {
                if matrix[(i, j)] != ZERO {
                    terms.push(Term { beta: indices[i].add(&indices[j])?, coeff: matrix[(i, j)] });
                }
            }
        }
        let symbol = Symbol::new(weights.clone(), terms)?;
        let report = check_positive_definite(&symbol, 10_000 * weights.dim())?;
        if !report.accepted() {
            return Err(Error::NotPositiveDefinite { min_value: report.min_value });
        }
        Ok(Self { weights, indices, matrix, symbol })
    }

    /// `sum_k c_k D_k^{2 m_k}`: diagonal entries on the pure indices `m_k e_k`.
    pub fn separable(weights: WeightVector, coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() != weights.dim() {
            return Err(Error::DimensionMismatch { expected: weights.dim(), got: coeffs.len() });
        }
        let d = weights.dim();
        let entries: Vec<_> = (0..d)
            .map(|k| {
                let mut e = vec![0u32; d];
                e[k] = weights.as_slice()[k];
                let idx = MultiIndex::new(e);
                (idx.clone(), idx, Complex64::new(coeffs[k], 0.0))
            })
            .collect();
        Self::new(weights, &entries)
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// `P(xi) = sum A_{alpha beta} xi^{alpha + beta}`.
    pub fn symbol(&self) -> &Symbol {
        &self.symbol
    }

    pub fn entries(&self) -> Vec<(MultiIndex, MultiIndex, Complex64)> {
        let mut out = Vec::new();
        for (i, a) in self.indices.iter().enumerate() {
            for (j, b) in self.indices.iter().enumerate() {
                if self.matrix[(i, j)] != ZERO {
                    out.push((a.clone(), b.clone(), self.matrix[(i, j)]));
                }
            }
        }
        out
    }
}

fn position(indices: &[MultiIndex], idx: &MultiIndex) -> Result<usize> {
    indices
        .iter()
        .position(|i| i == idx)
        .ok_or_else(|| Error::InvalidArgument(format!("{idx} is not a principal multi-index")))
}

/// One coefficient `a_{alpha beta}` sampled at every grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientPair {
    pub alpha: MultiIndex,
    pub beta: MultiIndex,
    pub values: Vec<Complex64>,
}

/// Variable coefficients of a divergence-form operator together with the
/// constant reference coefficients they are compared against.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    weights: WeightVector,
    grid: AnisoGrid,
    reference: PrincipalCoefficients,
    pairs: Vec<CoefficientPair>,
    gamma: f64,
    upper_constant: f64,
}

impl CoefficientField {
    /// Validates degrees, Hermitian pairing and the node-wise principal
    /// comparability `(3/4) A <= a(x) <= C A`.
    pub fn new(grid: AnisoGrid, reference: PrincipalCoefficients, pairs: Vec<CoefficientPair>) -> Result<Self> {
        let weights = reference.weights().clone();
        if grid.dim() != weights.dim() {
            return Err(Error::DimensionMismatch { expected: weights.dim(), got: grid.dim() });
        }
        let one = Rational::from_integer(1);
        let mut merged: Vec<CoefficientPair> = Vec::new();
        for pair in pairs {
            if weighted_degree(&pair.alpha, &weights)? > one || weighted_degree(&pair.beta, &weights)? > one {
                return Err(Error::CoefficientCondition {
                    condition: "degree",
                    detail: format!("pair ({}, {}) exceeds weighted degree 1", pair.alpha, pair.beta),
                });
            }
            if pair.values.len() != grid.len() {
                return Err(Error::DimensionMismatch { expected: grid.len(), got: pair.values.len() });
            }
            if pair.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::CoefficientCondition { condition: "boundedness", detail: "non-finite value".into() });
            }
            match merged.iter_mut().find(|p| p.alpha == pair.alpha && p.beta == pair.beta) {
                Some(p) => p.values.iter_mut().zip(&pair.values).for_each(|(a, b)| *a += b),
                None => merged.push(pair),
            }
        }
        for p in &merged {
            let partner = merged.iter().find(|q| q.alpha == p.beta && q.beta == p.alpha);
            let ok = match partner {
                Some(q) => p.values.iter().zip(&q.values).all(|(a, b)| (a - b.conj()).norm() <= 1e-14 * (1.0 + a.norm())),
                None => p.values.iter().all(|v| v.norm() == 0.0),
            };
            if !ok {
                return Err(Error::CoefficientCondition {
                    condition: "hermitian pairing",
                    detail: format!("a[{}][{}] is not the conjugate of a[{}][{}]", p.alpha, p.beta, p.beta, p.alpha),
                });
            }
        }
        let gamma = merged.iter().flat_map(|p| p.values.iter()).fold(0.0f64, |a, v| a.max(v.norm()));
        let mut field = Self { weights, grid, reference, pairs: merged, gamma, upper_constant: 0.0 };
        field.upper_constant = field.certify_principal()?;
        Ok(field)
    }

    /// Coefficients equal to the reference everywhere (`Lambda` itself).
    pub fn constant(grid: AnisoGrid, reference: PrincipalCoefficients) -> Result<Self> {
        CoefficientFieldBuilder::new(grid, reference).principal_scaled(|_| 1.0).build()
    }

    fn principal_block(&self, node: usize) -> CMatrix {
        let idx = self.reference.indices();
        let p = idx.len();
        let mut m = CMatrix::zeros(p, p);
        for pair in &self.pairs {
            if let (Ok(i), Ok(j)) = (position(idx, &pair.alpha), position(idx, &pair.beta)) {
                m[(i, j)] += pair.values[node];
            }
        }
        m
    }

    /// Checks `a(x) - (3/4) A >= 0` at every node and returns
    /// `C = max_x max eig of the pencil (a(x), A)`.
    fn certify_principal(&self) -> Result<f64> {
        let a = self.reference.matrix();
        let scale = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let lower_shift = a * Complex64::new(PRINCIPAL_LOWER, 0.0);
        let mut upper = 0.0f64;
        let mut last: Option<CMatrix> = None;
        for node in 0..self.grid.len() {
            let block = self.principal_block(node);
            if last.as_ref() == Some(&block) {
                continue;
            }
            let gap = hermitian_eigen(&(&block - &lower_shift)).values[0];
            if gap < -1e-12 * scale {
                return Err(Error::CoefficientCondition {
                    condition: "principal lower bound",
                    detail: format!("node {:?}: min eig of a(x) - (3/4)A = {gap:e}", self.grid.node(node)),
                });
            }
            let pencil = hermitian_pencil(&block, a, 1e-12)?;
            upper = upper.max(*pencil.values.last().unwrap_or(&0.0));
            last = Some(block);
        }
        Ok(upper)
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn grid(&self) -> &AnisoGrid {
        &self.grid
    }

    pub fn reference(&self) -> &PrincipalCoefficients {
        &self.reference
    }

    pub fn pairs(&self) -> &[CoefficientPair] {
        &self.pairs
    }

    /// `max |a_{alpha beta}(x)|`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Upper comparability constant `C` of `a(x) <= C A`.
    pub fn upper_constant(&self) -> f64 {
        self.upper_constant
    }

    pub fn is_principal_only(&self) -> bool {
        let one = Rational::from_integer(1);
        self.pairs.iter().all(|p| {
            p.values.iter().all(|v| v.norm() == 0.0)
                || (weighted_degree(&p.alpha, &self.weights).ok() == Some(one)
                    && weighted_degree(&p.beta, &self.weights).ok() == Some(one))
        })
    }

    /// Principal block equals the reference at every node.
    pub fn principal_is_constant(&self) -> bool {
        let a = self.reference.matrix();
        (0..self.grid.len()).all(|n| (self.principal_block(n) - a).iter().all(|v| v.norm() <= 1e-14 * (1.0 + v.norm())))
    }
}

/// Incremental construction of a [`CoefficientField`] from functions of `x`.
pub struct CoefficientFieldBuilder {
    grid: AnisoGrid,
    reference: PrincipalCoefficients,
    pairs: Vec<CoefficientPair>,
}

impl CoefficientFieldBuilder {
    pub fn new(grid: AnisoGrid, reference: PrincipalCoefficients) -> Self {
        Self { grid, reference, pairs: Vec::new() }
    }

    fn sample<F: Fn(&[f64]) -> Complex64>(&self, f: F) -> Vec<Complex64> {
        (0..self.grid.len()).map(|j| f(&self.grid.node(j))).collect()
    }

    /// Principal coefficients `a_{alpha beta}(x) = f(x) A_{alpha beta}`.
    pub fn principal_scaled<F: Fn(&[f64]) -> f64>(mut self, f: F) -> Self {
        let scale = self.sample(|x| Complex64::new(f(x), 0.0));
        for (alpha, beta, v) in self.reference.entries() {
            let values = scale.iter().map(|s| s * v).collect();
            self.pairs.push(CoefficientPair { alpha, beta, values });
        }
        self
    }

    /// Adds `a_{alpha beta} = f` and, when `alpha != beta`, the partner
    /// `a_{beta alpha} = conj f`. For `alpha == beta`, `f` must be real.
    pub fn pair<F: Fn(&[f64]) -> Complex64>(mut self, alpha: MultiIndex, beta: MultiIndex, f: F) -> Self {
        let values = self.sample(f);
        if alpha != beta {
            let conj = values.iter().map(|v| v.conj()).collect();
            self.pairs.push(CoefficientPair { alpha: beta.clone(), beta: alpha.clone(), values: conj });
        }
        self.pairs.push(CoefficientPair { alpha, beta, values });
        self
    }

    pub fn build(self) -> Result<CoefficientField> {
        CoefficientField::new(self.grid, self.reference, self.pairs)
    }
}

/// Where an operator came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Plain,
    Reference,
    Custom,
    Twisted { lambda: Vec<f64> },
    Power(u32),
    Rescaled(f64),
}

/// Dense matrix discretising an operator on the interior nodes of a grid.
pub struct DiscreteOperator {
    matrix: CMatrix,
    grid: AnisoGrid,
    weights: WeightVector,
    hermitian: bool,
    provenance: Vec<Provenance>,
    eigen: OnceBox<HermitianEigen>,
}

impl Clone for DiscreteOperator {
    fn clone(&self) -> Self {
        let eigen = OnceBox::new();
        if let Some(e) = self.eigen.get() {
            let _ = eigen.set(Box::new(e.clone()));
        }
        Self {
            matrix: self.matrix.clone(),
            grid: self.grid.clone(),
            weights: self.weights.clone(),
            hermitian: self.hermitian,
            provenance: self.provenance.clone(),
            eigen,
        }
    }
}

impl core::fmt::Debug for DiscreteOperator {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("DiscreteOperator")
            .field("size", &self.matrix.nrows())
            .field("grid", &self.grid)
            .field("hermitian", &self.hermitian)
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl DiscreteOperator {
    /// Wraps a matrix acting on the interior unknowns of `grid`.
    pub fn from_matrix(matrix: CMatrix, grid: AnisoGrid, weights: WeightVector, hermitian: bool) -> Result<Self> {
        let n = grid.interior_len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: matrix.nrows() });
        }
        Ok(Self { matrix, grid, weights, hermitian, provenance: vec![Provenance::Custom], eigen: OnceBox::new() })
    }

    fn derived(&self, matrix: CMatrix, hermitian: bool, step: Provenance) -> Self {
        let mut provenance = self.provenance.clone();
        provenance.push(step);
        Self { matrix, grid: self.grid.clone(), weights: self.weights.clone(), hermitian, provenance, eigen: OnceBox::new() }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn grid(&self) -> &AnisoGrid {
        &self.grid
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// Cached spectral decomposition; only for Hermitian operators.
    pub fn eigen(&self) -> Result<&HermitianEigen> {
        if !self.hermitian {
            return Err(Error::Unsupported("a Hermitian operator".into()));
        }
        Ok(self.eigen.get_or_init(|| Box::new(hermitian_eigen(&self.matrix))))
    }

    /// `max(0, -lambda_min)`: the shift making the operator positive semidefinite.
    pub fn psd_shift(&self) -> Result<f64> {
        Ok((-self.eigen()?.values[0]).max(0.0))
    }

    /// `c H`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.derived(&self.matrix * Complex64::new(c, 0.0), self.hermitian, Provenance::Custom);
        out.provenance.pop();
        out
    }

    /// `H + c I`.
    pub fn shifted(&self, c: f64) -> Self {
        let n = self.size();
        let m = &self.matrix + CMatrix::identity(n, n) * Complex64::new(c, 0.0);
        let mut out = self.derived(m, self.hermitian, Provenance::Custom);
        out.provenance.pop();
        out
    }

    /// `<H f, f> = prod h_k sum_i (H f)_i conj(f_i)`.
    pub fn quadratic_form(&self, f: &CVector) -> Result<Complex64> {
        if f.len() != self.size() {
            return Err(Error::DimensionMismatch { expected: self.size(), got: f.len() });
        }
        Ok(crate::linalg::weighted_form(&self.matrix, f, f, self.grid.volume_element()))
    }

    /// `|f|^2 = prod h_k sum |f_i|^2`.
    pub fn norm_sq(&self, f: &CVector) -> f64 {
        f.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.volume_element()
    }

    /// `e^{-t H}`: spectral for Hermitian operators, Pade otherwise.
    pub fn semigroup(&self, t: f64) -> Result<CMatrix> {
        if !(t > 0.0) {
            return Err(Error::NonPositive { name: "t", value: t });
        }
        if self.hermitian {
            let eig = self.eigen()?;
            Ok(spectral_apply(eig, |l| Complex64::new((-t * l).exp(), 0.0)))
        } else {
            Ok(expm(&(&self.matrix * Complex64::new(-t, 0.0))))
        }
    }

    /// `K_H(t, ., y) = (e^{-t H} e_y) / prod h_k` for the interior node `y`.
    pub fn kernel_column(&self, t: f64, y: &[f64]) -> Result<CVector> {
        if !(t > 0.0) {
            return Err(Error::NonPositive { name: "t", value: t });
        }
        let col = self.grid.interior_index_of(y)?;
        let vol = self.grid.volume_element();
        if self.hermitian {
            let eig = self.eigen()?;
            let n = self.size();
            let coeffs: Vec<Complex64> =
                (0..n).map(|c| eig.vectors[(col, c)].conj() * (-t * eig.values[c]).exp()).collect();
            let v = &eig.vectors * CVector::from_vec(coeffs);
            Ok(v / Complex64::new(vol, 0.0))
        } else {
            let s = self.semigroup(t)?;
            Ok(s.column(col).into_owned() / Complex64::new(vol, 0.0))
        }
    }

    /// `e^{lambda(phi)} H e^{-lambda(phi)}` for the map `tm`.
    pub fn twist(&self, tm: &TwistMap) -> Result<Self> {
        let exps = tm.interior_exponents(&self.grid)?;
        let n = self.size();
        let mut m = self.matrix.clone();
        for c in 0..n {
            for r in 0..n {
                m[(r, c)] *= (exps[r] - exps[c]).exp();
            }
        }
        let is_identity = tm.lambda.iter().all(|&l| l == 0.0);
        Ok(self.derived(m, self.hermitian && is_identity, Provenance::Twisted { lambda: tm.lambda.clone() }))
    }

    /// `H^kappa`.
    pub fn power(&self, kappa: u32) -> Result<Self> {
        if kappa == 0 {
            return Err(Error::InvalidArgument("power must be at least 1".into()));
        }
        let mut m = self.matrix.clone();
        for _ in 1..kappa {
            m = &m * &self.matrix;
        }
        if self.hermitian {
            m = crate::linalg::hermitian_part(&m);
        }
        Ok(self.derived(m, self.hermitian, Provenance::Power(kappa)))
    }
}

/// Stencil of `delta^p`: offsets and binomial weights.
fn difference_stencil(p: u32) -> Vec<(i64, f64)> {
    let shift = (p / 2) as i64;
    let mut binom = 1.0;
    let mut out = Vec::with_capacity(p as usize + 1);
    for j in 0..=p {
        let sign = if (p - j) % 2 == 0 { 1.0 } else { -1.0 };
        out.push((j as i64 - shift, sign * binom));
        binom = binom * (p - j) as f64 / (j + 1) as f64;
    }
    out
}

/// Per-axis extended lattice `[1 - ceil(P/2), count - 1 + floor(P/2)]`, `P = m_k`.
struct Lattice {
    lo: Vec<i64>,
    len: Vec<usize>,
}

impl Lattice {
    fn new(grid: &AnisoGrid, weights: &WeightVector) -> Self {
        let mut lo = Vec::new();
        let mut len = Vec::new();
        for k in 0..grid.dim() {
            let p = weights.as_slice()[k] as i64;
            let a = 1 - (p + 1) / 2;
            let b = grid.counts()[k] as i64 - 1 + p / 2;
            lo.push(a);
            len.push((b - a + 1) as usize);
        }
        Self { lo, len }
    }

    fn total(&self) -> usize {
        self.len.iter().product()
    }

    fn point(&self, mut flat: usize) -> Vec<i64> {
        let d = self.len.len();
        let mut p = vec![0i64; d];
        for k in (0..d).rev() {
            p[k] = self.lo[k] + (flat % self.len[k]) as i64;
            flat /= self.len[k];
        }
        p
    }
}

/// Sparse rows of `D^alpha`: for each lattice point the (unknown, weight) pairs.
fn derivative_rows(grid: &AnisoGrid, lattice: &Lattice, alpha: &MultiIndex) -> Vec<Vec<(usize, Complex64)>> {
    let d = grid.dim();
    let stencils: Vec<Vec<(i64, f64)>> = alpha.0.iter().map(|&p| difference_stencil(p)).collect();
    let mut scale = 1.0;
    for k in 0..d {
        scale /= grid.spacing(k).powi(alpha.0[k] as i32);
    }
    // (-i)^{|alpha|}
    let phase = match alpha.order() % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    } * scale;
    let mut rows = Vec::with_capacity(lattice.total());
    let mut idx = vec![0usize; d];
    for flat in 0..lattice.total() {
        let p = lattice.point(flat);
        let mut row = Vec::new();
        let counts: Vec<usize> = stencils.iter().map(|s| s.len()).collect();
        let combos: usize = counts.iter().product();
        'combo: for c in 0..combos {
            let mut rem = c;
            let mut w = 1.0;
            for k in (0..d).rev() {
                let (off, wk) = stencils[k][rem % counts[k]];
                rem /= counts[k];
                let i = p[k] + off;
                if i < 1 || i >= grid.counts()[k] as i64 {
                    continue 'combo;
                }
                idx[k] = i as usize;
                w *= wk;
            }
            if let Some(u) = grid.interior_flat(&idx) {
                row.push((u, phase * w));
            }
        }
        rows.push(row);
    }
    rows
}

/// Offset of the centre of the `delta^p` stencil from its lattice point.
fn stencil_centre(p: u32) -> f64 {
    if p % 2 == 1 {
        0.5
    } else {
        0.0
    }
}

/// Values of one coefficient pair at every lattice point, taken at the common
/// centre of the two stencils by multilinear interpolation between nodes
/// (clamped into the box).
fn pair_values_on_lattice(grid: &AnisoGrid, lattice: &Lattice, pair: &CoefficientPair) -> Vec<Complex64> {
    let d = grid.dim();
    let offset: Vec<f64> =
        (0..d).map(|k| 0.5 * (stencil_centre(pair.alpha.0[k]) + stencil_centre(pair.beta.0[k]))).collect();
    let corners = 1usize << d;
    let mut idx = vec![0usize; d];
    (0..lattice.total())
        .map(|l| {
            let p = lattice.point(l);
            let mut acc = ZERO;
            for c in 0..corners {
                let mut w = 1.0;
                for k in 0..d {
                    let up = (c >> k) & 1 == 1;
                    let wk = if up { offset[k] } else { 1.0 - offset[k] };
                    let i = p[k] + up as i64;
                    idx[k] = i.clamp(0, grid.counts()[k] as i64) as usize;
                    w *= wk;
                }
                if w != 0.0 {
                    acc += pair.values[grid.flat_index(&idx)] * w;
                }
            }
            acc
        })
        .collect()
}

/// `H = sum (D^beta)^* diag(a_{alpha beta}) D^alpha`.
pub fn assemble(coeffs: &CoefficientField) -> Result<DiscreteOperator> {
    let mut op = assemble_matrix(coeffs)?;
    op.provenance = vec![Provenance::Plain];
    Ok(op)
}

fn assemble_matrix(coeffs: &CoefficientField) -> Result<DiscreteOperator> {
    let grid = coeffs.grid();
    let n = grid.interior_len();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { unknowns: n, limit: DENSE_LIMIT });
    }
    let lattice = Lattice::new(grid, coeffs.weights());
    let mut cache: Vec<(MultiIndex, Vec<Vec<(usize, Complex64)>>)> = Vec::new();
    let mut rows_for = |alpha: &MultiIndex| -> usize {
        if let Some(i) = cache.iter().position(|(a, _)| a == alpha) {
            return i;
        }
        cache.push((alpha.clone(), derivative_rows(grid, &lattice, alpha)));
        cache.len() - 1
    };
    let plan: Vec<(usize, usize, usize)> = coeffs
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| (i, rows_for(&p.alpha), rows_for(&p.beta)))
        .collect();
    let mut m = CMatrix::zeros(n, n);
    for (pi, ai, bi) in plan {
        let pair = &coeffs.pairs()[pi];
        let rows_a = &cache[ai].1;
        let rows_b = &cache[bi].1;
        let values = pair_values_on_lattice(grid, &lattice, pair);
        for l in 0..lattice.total() {
            let a = values[l];
            if a == ZERO {
                continue;
            }
            for &(cb, wb) in &rows_b[l] {
                let left = wb.conj() * a;
                for &(ca, wa) in &rows_a[l] {
                    m[(cb, ca)] += left * wa;
                }
            }
        }
    }
    Ok(DiscreteOperator {
        matrix: m,
        grid: grid.clone(),
        weights: coeffs.weights().clone(),
        hermitian: true,
        provenance: vec![],
        eigen: OnceBox::new(),
    })
}

/// The constant-coefficient operator `Lambda = sum A_{alpha beta} D^{alpha + beta}`.
pub fn assemble_reference(reference: &PrincipalCoefficients, grid: &AnisoGrid) -> Result<DiscreteOperator> {
    let field = CoefficientField::constant(grid.clone(), reference.clone())?;
    let mut op = assemble_matrix(&field)?;
    op.provenance = vec![Provenance::Reference];
    Ok(op)
}

/// `sum_{alpha beta} sum_x a(x) (D^alpha f)(x) conj((D^beta f)(x)) prod h_k`,
/// evaluated from derivative vectors without forming the matrix.
pub fn quadratic_form_direct(coeffs: &CoefficientField, f: &CVector) -> Result<Complex64> {
    let grid = coeffs.grid();
    if f.len() != grid.interior_len() {
        return Err(Error::DimensionMismatch { expected: grid.interior_len(), got: f.len() });
    }
    let lattice = Lattice::new(grid, coeffs.weights());
    let apply = |alpha: &MultiIndex| -> Vec<Complex64> {
        derivative_rows(grid, &lattice, alpha)
            .iter()
            .map(|row| row.iter().map(|&(u, w)| w * f[u]).sum())
            .collect()
    };
    let mut acc = ZERO;
    for pair in coeffs.pairs() {
        let da = apply(&pair.alpha);
        let db = apply(&pair.beta);
        let values = pair_values_on_lattice(grid, &lattice, pair);
        for l in 0..lattice.total() {
            acc += values[l] * da[l] * db[l].conj();
        }
    }
    Ok(acc * grid.volume_element())
}

/// Coefficients of the rescaled operator `H_s`: the same node values on the
/// grid with radii `s^{e_k} r_k`, i.e. `a_s(x') = a(s^{-E} x')`.
pub fn rescale(coeffs: &CoefficientField, s: f64) -> Result<CoefficientField> {
    if !(s > 0.0) {
        return Err(Error::NonPositive { name: "s", value: s });
    }
    if !coeffs.is_principal_only() {
        return Err(Error::Unsupported("principal-only coefficients for rescaling".into()));
    }
    let grid = coeffs.grid().dilated(&coeffs.weights().exponents(), s)?;
    let mut out = CoefficientField::new(grid, coeffs.reference().clone(), coeffs.pairs().to_vec())?;
    out.upper_constant = coeffs.upper_constant;
    Ok(out)
}

/// [`assemble`] applied to [`rescale`], tagged with the scale.
pub fn assemble_rescaled(coeffs: &CoefficientField, s: f64) -> Result<DiscreteOperator> {
    let mut op = assemble_matrix(&rescale(coeffs, s)?)?;
    op.provenance = vec![Provenance::Plain, Provenance::Rescaled(s)];
    Ok(op)
}

/// A polynomial in monomial coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq)]
struct Poly(Vec<f64>);

impl Poly {
    fn eval(&self, u: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    fn derivative(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect())
    }

    fn antiderivative(&self) -> Poly {
        let mut out = vec![0.0];
        out.extend(self.0.iter().enumerate().map(|(k, c)| c / (k + 1) as f64));
        Poly(out)
    }
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Smoothstep of order `n`: `S(0) = 0`, `S(1) = 1`, derivatives `1..n` vanish at both ends.
fn smoothstep(n: u32) -> Poly {
    let n = n as u64;
    let mut c = vec![0.0; (2 * n + 2) as usize];
    for k in 0..=n {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        c[(n + 1 + k) as usize] = sign * binomial(n + k, k) * binomial(2 * n + 1, n - k);
    }
    Poly(c)
}

fn sup_on_unit(p: &Poly) -> f64 {
    let samples = 20_000;
    (0..=samples).map(|i| p.eval(i as f64 / samples as f64).abs()).fold(0.0, f64::max)
}

/// One axis of a twist: the identity on `[lo, hi]`, blending to constants
/// over a transition of width `width` on either side.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisCutoff {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
    /// `g(u) = u - int_0^u S` and its derivatives, `g^{(j)}` at index `j`.
    profile: Vec<Poly>,
}

impl AxisCutoff {
    /// Cutoff whose derivatives of orders `1..=order` are bounded by 1.
    pub fn new(lo: f64, hi: f64, order: u32) -> Self {
        let s = smoothstep(order);
        let mut g = s.antiderivative();
        g.0.iter_mut().for_each(|c| *c = -*c);
        if g.0.len() < 2 {
            g.0.resize(2, 0.0);
        }
        g.0[1] += 1.0;
        let mut profile = vec![g];
        for _ in 0..=order {
            let next = profile.last().expect("non-empty").derivative();
            profile.push(next);
        }
        // |psi^{(j)}| = w^{1-j} |S^{(j-1)}|, so w >= sup|S^{(k)}|^{1/k} for k = 1..order-1
        let mut width: f64 = 1.0;
        let mut sk = s.derivative();
        for k in 1..order {
            width = width.max(sup_on_unit(&sk).powf(1.0 / k as f64) * (1.0 + 1e-6));
            sk = sk.derivative();
        }
        Self { lo, hi, width, profile }
    }

    pub fn identity() -> Self {
        Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY, width: 1.0, profile: vec![] }
    }

    /// `psi^{(j)}(x)`; `j = 0` is the value.
    pub fn derivative(&self, j: usize, x: f64) -> f64 {
        if x >= self.lo && x <= self.hi {
            return match j {
                0 => x,
                1 => 1.0,
                _ => 0.0,
            };
        }
        let w = self.width;
        let (u, right) = if x > self.hi { ((x - self.hi) / w, true) } else { ((self.lo - x) / w, false) };
        let u = u.min(1.0);
        let saturated = u >= 1.0;
        if j == 0 {
            let g = self.profile[0].eval(u);
            return if right { self.hi + w * g } else { self.lo - w * g };
        }
        if saturated || j >= self.profile.len() {
            return 0.0;
        }
        let gj = self.profile[j].eval(u) * w.powi(1 - j as i32);
        if right || j % 2 == 1 {
            gj
        } else {
            -gj
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }
}

/// Twist `phi(x) = (psi_1(x_1), ..., psi_d(x_d))` paired with a covector `lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistMap {
    pub psi: Vec<AxisCutoff>,
    pub lambda: Vec<f64>,
    pub anchors: (Vec<f64>, Vec<f64>),
    pub order: u32,
    /// `sup |psi_j|` over the grid box, per axis.
    pub sup_psi: Vec<f64>,
    /// `max_j sup_x |psi^{(j)}|` for `j = 1..order` found by the certification sweep.
    pub certified_max_derivative: f64,
}

impl TwistMap {
    /// `phi = id`, `lambda = 0`.
    pub fn identity(d: usize) -> Self {
        Self {
            psi: vec![AxisCutoff::identity(); d],
            lambda: vec![0.0; d],
            anchors: (vec![0.0; d], vec![0.0; d]),
            order: 0,
            sup_psi: vec![f64::INFINITY; d],
            certified_max_derivative: 1.0,
        }
    }

    pub fn with_lambda(&self, lambda: &[f64]) -> Result<Self> {
        if lambda.len() != self.psi.len() {
            return Err(Error::DimensionMismatch { expected: self.psi.len(), got: lambda.len() });
        }
        let mut out = self.clone();
        out.lambda = lambda.to_vec();
        Ok(out)
    }

    pub fn phi(&self, x: &[f64]) -> Vec<f64> {
        self.psi.iter().zip(x).map(|(p, &xk)| p.value(xk)).collect()
    }

    /// `lambda(phi(x))`.
    pub fn exponent(&self, x: &[f64]) -> f64 {
        self.phi(x).iter().zip(&self.lambda).map(|(p, l)| p * l).sum()
    }

    /// `lambda(phi)` at every interior node, after the overflow guard.
    pub fn interior_exponents(&self, grid: &AnisoGrid) -> Result<Vec<f64>> {
        if grid.dim() != self.psi.len() {
            return Err(Error::DimensionMismatch { expected: self.psi.len(), got: grid.dim() });
        }
        let mut out = Vec::with_capacity(grid.interior_len());
        let mut worst = 0.0f64;
        let mut phi_l1 = 0.0f64;
        for j in 0..grid.interior_len() {
            let x = grid.interior_node(j);
            let phi = self.phi(&x);
            phi_l1 = phi_l1.max(phi.iter().map(|v| v.abs()).sum());
            let e: f64 = phi.iter().zip(&self.lambda).map(|(p, l)| p * l).sum();
            worst = worst.max(e.abs());
            out.push(e);
        }
        if worst > TWIST_GUARD {
            return Err(Error::TwistOverflow { max_exponent: worst, guard: TWIST_GUARD, advisory: TWIST_GUARD / phi_l1 });
        }
        Ok(out)
    }
}

/// Smallest admissible certified order: `max_k 2 m_k`.
pub fn minimal_twist_order(m: &WeightVector) -> u32 {
    m.as_slice().iter().map(|mk| 2 * mk).max().unwrap_or(2)
}

/// `2 kappa max_k m_k`, enough for derivatives of `H^kappa`.
pub fn default_twist_order(m: &WeightVector) -> u32 {
    2 * m.kappa() * m.as_slice().iter().copied().max().unwrap_or(1)
}

/// Builds `phi` equal to the identity on the box spanned by the anchors, with
/// derivatives `1..=l` certified bounded by 1 on a dense sweep of the grid box.
pub fn make_twist(anchors: (&[f64], &[f64]), grid: &AnisoGrid, m: &WeightVector, l: u32) -> Result<TwistMap> {
    let d = grid.dim();
    let (x, y) = anchors;
    if x.len() != d || y.len() != d || m.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len().min(y.len()) });
    }
    if l < minimal_twist_order(m) {
        return Err(Error::InvalidArgument(format!("twist order {l} below {}", minimal_twist_order(m))));
    }
    let mut psi = Vec::with_capacity(d);
    let mut sup_psi = Vec::with_capacity(d);
    let mut certified = 0.0f64;
    for k in 0..d {
        let r = grid.radii()[k];
        if x[k].abs() > r || y[k].abs() > r {
            return Err(Error::NodeOutsideGrid(format!("anchor coordinate {} on axis {k}", x[k].max(y[k]))));
        }
        let c = AxisCutoff::new(x[k].min(y[k]), x[k].max(y[k]), l);
        if c.lo - 0.5 * c.width < -r || c.hi + 0.5 * c.width > r {
            return Err(Error::AnchorsTooCloseToBoundary { axis: k, width: c.width });
        }
        let samples = 40_000;
        let mut sup = 0.0f64;
        for i in 0..=samples {
            let u = -r + 2.0 * r * i as f64 / samples as f64;
            sup = sup.max(c.value(u).abs());
            for j in 1..=l as usize {
                let v = c.derivative(j, u).abs();
                if v > 1.0 + 1e-9 {
                    return Err(Error::CutoffCertification { order: j, value: v });
                }
                certified = certified.max(v);
            }
        }
        sup_psi.push(sup);
        psi.push(c);
    }
    Ok(TwistMap { psi, lambda: vec![0.0; d], anchors: (x.to_vec(), y.to_vec()), order: l, sup_psi, certified_max_derivative: certified })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(m: &[u32]) -> WeightVector {
        WeightVector::new(m.to_vec()).unwrap()
    }

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.norm()))
    }

    #[test]
    fn stencils() {
        assert_eq!(difference_stencil(1), vec![(0, -1.0), (1, 1.0)]);
        assert_eq!(difference_stencil(2), vec![(-1, 1.0), (0, -2.0), (1, 1.0)]);
        assert_eq!(difference_stencil(4), vec![(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)]);
    }

    #[test]
    fn laplacian_is_tridiagonal() {
        let grid = AnisoGrid::cube(1, 1.0, 8).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1]), &[1.0]).unwrap();
        let op = assemble_reference(&a, &grid).unwrap();
        let h2 = grid.spacing(0).powi(2);
        for i in 0..7usize {
            for j in 0..7 {
                let want = if i == j { 2.0 } else if i.abs_diff(j) == 1 { -1.0 } else { 0.0 } / h2;
                assert!((op.matrix()[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn bilaplacian_is_pentadiagonal() {
        let grid = AnisoGrid::cube(1, 1.0, 10).unwrap();
        let a = PrincipalCoefficients::separable(w(&[2]), &[1.0]).unwrap();
        let op = assemble_reference(&a, &grid).unwrap();
        let h4 = grid.spacing(0).powi(4);
        let stencil = [1.0, -4.0, 6.0, -4.0, 1.0];
        for i in 0..9usize {
            for j in 0..9usize {
                let off = j as i64 - i as i64;
                let want = if off.abs() <= 2 { stencil[(off + 2) as usize] / h4 } else { 0.0 };
                assert!((op.matrix()[(i, j)].re - want).abs() < 1e-9 * (1.0 / h4), "{i} {j}");
            }
        }
    }

    #[test]
    fn constant_field_matches_reference_exactly() {
        let grid = AnisoGrid::new(vec![2.0, 2.0], vec![8, 6]).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1, 2]), &[1.0, 1.0]).unwrap();
        let field = CoefficientField::constant(grid.clone(), a.clone()).unwrap();
        assert_eq!(assemble(&field).unwrap().matrix(), assemble_reference(&a, &grid).unwrap().matrix());
    }

    #[test]
    fn separable_operator_is_kronecker_sum() {
        let grid = AnisoGrid::new(vec![2.0, 1.5], vec![8, 6]).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1, 2]), &[1.0, 1.0]).unwrap();
        let op = assemble_reference(&a, &grid).unwrap();
        let g1 = AnisoGrid::cube(1, 2.0, 8).unwrap();
        let g2 = AnisoGrid::cube(1, 1.5, 6).unwrap();
        let l1 = assemble_reference(&PrincipalCoefficients::separable(w(&[1]), &[1.0]).unwrap(), &g1).unwrap();
        let l2 = assemble_reference(&PrincipalCoefficients::separable(w(&[2]), &[1.0]).unwrap(), &g2).unwrap();
        let i1 = CMatrix::identity(7, 7);
        let i2 = CMatrix::identity(5, 5);
        let kron = l1.matrix().kronecker(&i2) + i1.kronecker(l2.matrix());
        assert!(max_abs(&(kron - op.matrix())) < 1e-9);
    }

    #[test]
    fn dirichlet_spectrum() {
        let grid = AnisoGrid::cube(1, 1.0, 16).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1]), &[1.0]).unwrap();
        let op = assemble_reference(&a, &grid).unwrap();
        let h = grid.spacing(0);
        let ell = 2.0;
        let eig = op.eigen().unwrap();
        for (k, v) in eig.values.iter().enumerate() {
            let want = (2.0 - 2.0 * ((k + 1) as f64 * core::f64::consts::PI * h / ell).cos()) / (h * h);
            assert!((v - want).abs() < 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn zero_reference_rejected() {
        assert!(PrincipalCoefficients::separable(w(&[1]), &[0.0]).is_err());
    }

    #[test]
    fn principal_lower_bound_enforced() {
        let grid = AnisoGrid::cube(1, 1.0, 8).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1]), &[1.0]).unwrap();
        let bad = CoefficientFieldBuilder::new(grid.clone(), a.clone()).principal_scaled(|x| if x[0] > 0.0 { 0.5 } else { 1.0 });
        assert!(matches!(bad.build(), Err(Error::CoefficientCondition { .. })));
        let good = CoefficientFieldBuilder::new(grid, a).principal_scaled(|x| if x[0] > 0.0 { 0.75 } else { 2.0 });
        let f = good.build().unwrap();
        assert!((f.upper_constant() - 2.0).abs() < 1e-12);
        assert_eq!(f.gamma(), 2.0);
    }

    #[test]
    fn hermitian_pairing_enforced() {
        let grid = AnisoGrid::cube(1, 1.0, 8).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1]), &[1.0]).unwrap();
        let n = grid.len();
        let pairs = vec![
            CoefficientPair { alpha: MultiIndex::new(vec![1]), beta: MultiIndex::new(vec![1]), values: vec![Complex64::new(1.0, 0.0); n] },
            CoefficientPair { alpha: MultiIndex::new(vec![1]), beta: MultiIndex::new(vec![0]), values: vec![Complex64::new(0.3, 0.1); n] },
        ];
        assert!(matches!(CoefficientField::new(grid, a, pairs), Err(Error::CoefficientCondition { .. })));
    }

    fn mixed_field() -> CoefficientField {
        let grid = AnisoGrid::new(vec![1.0, 1.0], vec![6, 8]).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1, 1]), &[1.0, 1.0]).unwrap();
        CoefficientFieldBuilder::new(grid, a)
            .principal_scaled(|x| 1.0 + 0.3 * (x[0] * 2.0).sin().powi(2))
            .pair(MultiIndex::new(vec![1, 0]), MultiIndex::new(vec![0, 0]), |x| Complex64::new(0.2 * x[1], 0.1 * x[0]))
            .pair(MultiIndex::new(vec![0, 0]), MultiIndex::new(vec![0, 0]), |x| Complex64::new(0.5 + x[0] * x[1], 0.0))
            .build()
            .unwrap()
    }

    fn test_vector(n: usize) -> CVector {
        CVector::from_fn(n, |i, _| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
    }

    #[test]
    fn form_matches_direct_sum() {
        let field = mixed_field();
        let op = assemble(&field).unwrap();
        assert!(crate::linalg::hermitian_defect(op.matrix()) < 1e-12);
        let f = test_vector(op.size());
        let a = op.quadratic_form(&f).unwrap();
        let b = quadratic_form_direct(&field, &f).unwrap();
        assert!((a - b).norm() < 1e-10 * a.norm());
        assert!(a.im.abs() < 1e-10 * a.norm());
    }

    #[test]
    fn semigroup_identities() {
        let op = assemble(&mixed_field()).unwrap();
        let n = op.size();
        let small = op.semigroup(1e-8).unwrap();
        assert!(max_abs(&(small - CMatrix::identity(n, n))) < 1e-5);
        let a = op.semigroup(0.3).unwrap();
        let b = op.semigroup(0.2).unwrap();
        let c = op.semigroup(0.5).unwrap();
        assert!(max_abs(&(&a * &b - &c)) < 1e-10);
    }

    #[test]
    fn twist_similarity() {
        let field = mixed_field();
        let op = assemble(&field).unwrap();
        let tm = make_twist((&[-0.2, 0.1], &[0.1, -0.1]), field.grid(), field.weights(), 2);
        // the box is too small for the certified transition
        assert!(matches!(tm, Err(Error::AnchorsTooCloseToBoundary { .. })));
        let grid = AnisoGrid::new(vec![4.0, 4.0], vec![8, 8]).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1, 1]), &[1.0, 1.0]).unwrap();
        let field = CoefficientFieldBuilder::new(grid.clone(), a).principal_scaled(|x| 1.0 + 0.2 * x[0].cos()).build().unwrap();
        let op2 = assemble(&field).unwrap();
        let tm = make_twist((&[-0.5, 0.0], &[0.5, 1.0]), &grid, field.weights(), 2).unwrap().with_lambda(&[0.7, -0.4]).unwrap();
        let tw = op2.twist(&tm).unwrap();
        assert!(!tw.is_hermitian());
        let mut ev: Vec<f64> = nalgebra::DMatrix::from_fn(tw.size(), tw.size(), |r, c| tw.matrix()[(r, c)].re)
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ev.iter().zip(&op2.eigen().unwrap().values) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
        let zero = op2.twist(&tm.with_lambda(&[0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(zero.matrix(), op2.matrix());
        // two-sided form: <H_tw f, f> = Q(e^{-lambda phi} f, e^{lambda phi} f)
        let f = test_vector(tw.size());
        let exps = tm.interior_exponents(&grid).unwrap();
        let fm = CVector::from_fn(f.len(), |i, _| f[i] * (-exps[i]).exp());
        let fp = CVector::from_fn(f.len(), |i, _| f[i] * exps[i].exp());
        let lhs = tw.quadratic_form(&f).unwrap();
        let rhs = crate::linalg::weighted_form(op2.matrix(), &fm, &fp, grid.volume_element());
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
        let _ = op;
    }

    #[test]
    fn power_and_twist_commute() {
        let grid = AnisoGrid::new(vec![4.0], vec![16]).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1]), &[1.0]).unwrap();
        let op = assemble_reference(&a, &grid).unwrap();
        let tm = make_twist((&[-0.5], &[0.5]), &grid, &w(&[1]), 2).unwrap().with_lambda(&[0.8]).unwrap();
        let a1 = op.power(2).unwrap().twist(&tm).unwrap();
        let a2 = op.twist(&tm).unwrap().power(2).unwrap();
        assert!(max_abs(&(a1.matrix() - a2.matrix())) < 1e-10 * max_abs(a1.matrix()));
        assert_eq!(op.power(1).unwrap().matrix(), op.matrix());
        let sq = op.power(2).unwrap();
        for (a, b) in sq.eigen().unwrap().values.iter().zip(&op.eigen().unwrap().values) {
            assert!((a - b * b).abs() < 1e-9 * a.abs());
        }
    }

    #[test]
    fn twist_overflow_guard() {
        let grid = AnisoGrid::new(vec![4.0], vec![16]).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1]), &[1.0]).unwrap();
        let op = assemble_reference(&a, &grid).unwrap();
        let tm = make_twist((&[-0.5], &[0.5]), &grid, &w(&[1]), 2).unwrap().with_lambda(&[1000.0]).unwrap();
        match op.twist(&tm) {
            Err(Error::TwistOverflow { advisory, .. }) => {
                let ok = tm.with_lambda(&[advisory * 0.999]).unwrap();
                assert!(op.twist(&ok).is_ok());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cutoff_certified_and_anchored() {
        let m = w(&[1, 2]);
        let grid = AnisoGrid::new(vec![10.0, 10.0], vec![8, 8]).unwrap();
        for l in [4, 6] {
            let tm = make_twist((&[0.0, 1.0], &[1.5, 1.0]), &grid, &m, l).unwrap();
            assert!(tm.certified_max_derivative <= 1.0 + 1e-9);
            let px = tm.phi(&[0.0, 1.0]);
            let py = tm.phi(&[1.5, 1.0]);
            assert_eq!((px[0] - py[0], px[1] - py[1]), (-1.5, 0.0));
            // finite differences reproduce the analytic first two derivatives
            let c = &tm.psi[0];
            let h = 1e-4;
            for i in 0..200 {
                let x = -6.0 + 0.06 * i as f64;
                let fd1 = (c.value(x + h) - c.value(x - h)) / (2.0 * h);
                let fd2 = (c.value(x + h) - 2.0 * c.value(x) + c.value(x - h)) / (h * h);
                assert!((fd1 - c.derivative(1, x)).abs() < 1e-6);
                assert!((fd2 - c.derivative(2, x)).abs() < 1e-4);
            }
        }
        assert!(make_twist((&[0.0, 0.0], &[0.0, 0.0]), &grid, &m, 2).is_err());
    }

    #[test]
    fn rescaled_kernel_relation() {
        let grid = AnisoGrid::new(vec![3.0], vec![24]).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1]), &[1.0]).unwrap();
        let field = CoefficientFieldBuilder::new(grid.clone(), a).principal_scaled(|x| 1.0 + 0.5 * (x[0] > 0.4) as u8 as f64).build().unwrap();
        let op = assemble(&field).unwrap();
        let s = 4.0;
        let ops = assemble_rescaled(&field, s).unwrap();
        let t = 0.3;
        let y = [0.5];
        let k = op.kernel_column(t, &y).unwrap();
        let ks = ops.kernel_column(s * t, &[s.sqrt() * 0.5]).unwrap();
        let mu = 0.5;
        for i in 0..k.len() {
            assert!((k[i] - ks[i] * s.powf(mu)).norm() < 1e-10 * k.camax().max(1e-300));
        }
    }

    #[test]
    fn kernel_column_symmetry() {
        let op = assemble(&mixed_field()).unwrap();
        let g = op.grid();
        let y0 = g.interior_node(3);
        let y1 = g.interior_node(17);
        let k0 = op.kernel_column(0.2, &y0).unwrap();
        let k1 = op.kernel_column(0.2, &y1).unwrap();
        assert!((k0[17] - k1[3].conj()).norm() < 1e-12 * k0.camax());
        assert!(matches!(op.kernel_column(0.2, &[1.0, 0.0]), Err(Error::NodeOutsideGrid(_))));
    }

    #[test]
    fn too_large_rejected() {
        let grid = AnisoGrid::new(vec![1.0, 1.0], vec![70, 70]).unwrap();
        let a = PrincipalCoefficients::separable(w(&[1, 1]), &[1.0, 1.0]).unwrap();
        assert!(matches!(assemble_reference(&a, &grid), Err(Error::TooLarge { .. })));
    }
}
