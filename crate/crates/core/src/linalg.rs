//! Dense complex linear algebra on top of nalgebra: Hermitian spectra,
//! Hermitian pencils and the matrix exponential.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are orthonormal eigenvectors matching `values`.
    pub vectors: CMatrix,
}

pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// `max |a - a^*| / max(|a|, tiny)`.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let norm = a.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let diff = (a - a.adjoint()).iter().fold(0.0f64, |m, v| m.max(v.norm()));
    diff / norm.max(f64::MIN_POSITIVE)
}

pub fn hermitian_eigen(a: &CMatrix) -> HermitianEigen {
    let eig = nalgebra::SymmetricEigen::new(hermitian_part(a));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap_or(core::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    HermitianEigen { values, vectors }
}

/// `V diag(f(lambda)) V^*`.
pub fn spectral_apply<F: Fn(f64) -> Complex64>(eig: &HermitianEigen, f: F) -> CMatrix {
    let n = eig.values.len();
    let mut scaled = eig.vectors.clone();
    for c in 0..n {
        let w = f(eig.values[c]);
        for r in 0..n {
            scaled[(r, c)] *= w;
        }
    }
    scaled * eig.vectors.adjoint()
}

/// Eigenvalues (ascending) and `b`-orthonormal eigenvectors of the Hermitian
/// pencil `a v = lambda b v`, with `b` Hermitian positive semidefinite. The
/// pencil is restricted to the range of `b` (eigenvalues above
/// `rel_tol * max eig b`).
pub fn hermitian_pencil(a: &CMatrix, b: &CMatrix, rel_tol: f64) -> Result<HermitianEigen> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch { expected: b.nrows(), got: a.nrows() });
    }
    let eb = hermitian_eigen(b);
    let top = eb.values.iter().fold(0.0f64, |m, v| m.max(*v));
    if !(top > 0.0) {
        return Err(Error::NotPositiveDefinite { min_value: top });
    }
    let keep: Vec<usize> = (0..eb.values.len()).filter(|&i| eb.values[i] > rel_tol * top).collect();
    let n = a.nrows();
    let w = CMatrix::from_fn(n, keep.len(), |r, c| eb.vectors[(r, keep[c])] / eb.values[keep[c]].sqrt());
    let reduced = w.adjoint() * a * &w;
    let e = hermitian_eigen(&reduced);
    Ok(HermitianEigen { values: e.values, vectors: w * e.vectors })
}

pub fn max_singular_value(a: &CMatrix) -> f64 {
    a.clone().singular_values().iter().fold(0.0f64, |m, v| m.max(*v))
}

fn one_norm(a: &CMatrix) -> f64 {
    (0..a.ncols()).map(|c| a.column(c).iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
}

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371_920_351_148_152;

/// `e^a` by degree-13 Pade approximation with scaling and squaring.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * Complex64::new(2f64.powi(-s), 0.0);
    let b = |k: usize| Complex64::new(PADE13[k], 0.0);
    let id = CMatrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9)) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8)) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Pade denominator is invertible after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// `<a f, g>` with weight `w`: `w sum_i (a f)_i conj(g_i)`.
pub fn weighted_form(a: &CMatrix, f: &CVector, g: &CVector, w: f64) -> Complex64 {
    let af = a * f;
    af.iter().zip(g.iter()).map(|(x, y)| x * y.conj()).sum::<Complex64>() * w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn expm_of_diagonal_and_rotation() {
        let a = CMatrix::from_diagonal(&CVector::from_vec(alloc::vec![c(0.5), c(-3.0), Complex64::new(0.0, 2.0)]));
        let e = expm(&a);
        assert!((e[(0, 0)] - c(0.5f64.exp())).norm() < 1e-14);
        assert!((e[(1, 1)] - c((-3.0f64).exp())).norm() < 1e-15);
        assert!((e[(2, 2)] - Complex64::new(0.0, 2.0).exp()).norm() < 1e-14);
        // large norm exercises squaring: exp of [[0, w], [-w, 0]] is a rotation
        let w = 40.0;
        let r = CMatrix::from_row_slice(2, 2, &[c(0.0), c(w), c(-w), c(0.0)]);
        let e = expm(&r);
        assert!((e[(0, 0)] - c(w.cos())).norm() < 1e-11);
        assert!((e[(0, 1)] - c(w.sin())).norm() < 1e-11);
    }

    #[test]
    fn expm_matches_spectral_for_hermitian() {
        let a = CMatrix::from_fn(6, 6, |i, j| {
            let v = 1.0 / (1.0 + (i as f64 - j as f64).abs());
            if i <= j {
                Complex64::new(v, 0.1 * (j as f64 - i as f64))
            } else {
                Complex64::new(v, -0.1 * (i as f64 - j as f64))
            }
        });
        let eig = hermitian_eigen(&a);
        let spec = spectral_apply(&eig, |l| c((-2.0 * l).exp()));
        let pade = expm(&(a * c(-2.0)));
        assert!((spec - pade).iter().fold(0.0f64, |m, v| m.max(v.norm())) < 1e-13);
    }

    #[test]
    fn pencil_scalar_multiple() {
        let b = CMatrix::from_fn(4, 4, |i, j| if i == j { c(2.0) } else if i.abs_diff(j) == 1 { c(-1.0) } else { c(0.0) });
        let a = &b * c(3.0);
        let e = hermitian_pencil(&a, &b, 1e-12).unwrap();
        for v in e.values {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pencil_drops_kernel() {
        // b has a one-dimensional kernel spanned by (1, 1)
        let b = CMatrix::from_row_slice(2, 2, &[c(1.0), c(-1.0), c(-1.0), c(1.0)]);
        let a = CMatrix::identity(2, 2);
        let e = hermitian_pencil(&a, &b, 1e-12).unwrap();
        assert_eq!(e.values.len(), 1);
        assert!((e.values[0] - 0.5).abs() < 1e-14);
    }
}
