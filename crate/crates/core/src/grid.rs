//! Node-centred anisotropic tensor grids on boxes `prod_k [-r_k, r_k]`.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;

use crate::aniso::DilationExponents;
use crate::error::{Error, Result};

/// Tensor grid with `counts_k + 1` nodes `x_i = -r_k + i h_k`, `h_k = 2 r_k / counts_k`.
///
/// Counts are even, so the origin is always a node. Flat indices are row-major
/// with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct AnisoGrid {
    radii: Vec<f64>,
    counts: Vec<usize>,
}

impl AnisoGrid {
    pub fn new(radii: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if radii.is_empty() || radii.len() != counts.len() {
            return Err(Error::InvalidGrid(format!("{} radii for {} counts", radii.len(), counts.len())));
        }
        if let Some(r) = radii.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidGrid(format!("radius {r} must be positive and finite")));
        }
        if let Some(c) = counts.iter().find(|&&c| c % 2 != 0) {
            return Err(Error::InvalidGrid(format!("counts must be even, got {c}")));
        }
        if let Some(c) = counts.iter().find(|&&c| c < 4) {
            return Err(Error::InvalidGrid(format!("counts must be at least 4, got {c}")));
        }
        Ok(Self { radii, counts })
    }

    /// The same box in every direction: `[-r, r]^d` with `count` cells per axis.
    pub fn cube(d: usize, r: f64, count: usize) -> Result<Self> {
        Self::new(alloc::vec![r; d], alloc::vec![count; d])
    }

    pub fn dim(&self) -> usize {
        self.radii.len()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self, k: usize) -> f64 {
        2.0 * self.radii[k] / self.counts[k] as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.spacing(k)).collect()
    }

    /// `prod_k h_k`.
    pub fn volume_element(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    pub fn axis_len(&self, k: usize) -> usize {
        self.counts[k] + 1
    }

    pub fn axis_node(&self, k: usize, i: usize) -> f64 {
        // symmetric formula keeps x_{n/2} = 0 exactly and x_{n-i} = -x_i
        let n = self.counts[k] as f64;
        self.radii[k] * (2.0 * i as f64 - n) / n
    }

    pub fn axis_nodes(&self, k: usize) -> Vec<f64> {
        (0..self.axis_len(k)).map(|i| self.axis_node(k, i)).collect()
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        (0..self.dim()).map(|k| self.axis_len(k)).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let d = self.dim();
        let mut idx = alloc::vec![0; d];
        for k in (0..d).rev() {
            let n = self.axis_len(k);
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().enumerate().fold(0, |acc, (k, &i)| acc * self.axis_len(k) + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let idx = self.multi_index(flat);
        idx.iter().enumerate().map(|(k, &i)| self.axis_node(k, i)).collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|j| self.node(j)).collect()
    }

    pub fn origin_index(&self) -> usize {
        let idx: Vec<usize> = self.counts.iter().map(|c| c / 2).collect();
        self.flat_index(&idx)
    }

    /// Per-axis index of the node at `x`, if `x` is a node up to `1e-9 h`.
    pub fn locate(&self, x: &[f64]) -> Option<Vec<usize>> {
        if x.len() != self.dim() {
            return None;
        }
        let mut idx = Vec::with_capacity(x.len());
        for (k, &xk) in x.iter().enumerate() {
            let h = self.spacing(k);
            let u = (xk + self.radii[k]) / h;
            let i = u.round();
            if (u - i).abs() > 1e-9 || i < 0.0 || i > self.counts[k] as f64 {
                return None;
            }
            idx.push(i as usize);
        }
        Some(idx)
    }

    /// Number of Dirichlet unknowns (nodes strictly inside the box).
    pub fn interior_len(&self) -> usize {
        self.counts.iter().map(|c| c - 1).product()
    }

    pub fn interior_axis_len(&self, k: usize) -> usize {
        self.counts[k] - 1
    }

    /// Grid multi-index of interior unknown `flat` (interior indices run `1..count`).
    pub fn interior_multi_index(&self, mut flat: usize) -> Vec<usize> {
        let d = self.dim();
        let mut idx = alloc::vec![0; d];
        for k in (0..d).rev() {
            let n = self.interior_axis_len(k);
            idx[k] = flat % n + 1;
            flat /= n;
        }
        idx
    }

    /// Interior unknown index of a grid multi-index, `None` on the boundary.
    pub fn interior_flat(&self, idx: &[usize]) -> Option<usize> {
        let mut acc = 0;
        for (k, &i) in idx.iter().enumerate() {
            if i == 0 || i >= self.counts[k] {
                return None;
            }
            acc = acc * self.interior_axis_len(k) + (i - 1);
        }
        Some(acc)
    }

    pub fn interior_node(&self, flat: usize) -> Vec<f64> {
        let idx = self.interior_multi_index(flat);
        idx.iter().enumerate().map(|(k, &i)| self.axis_node(k, i)).collect()
    }

    pub fn interior_nodes(&self) -> Vec<Vec<f64>> {
        (0..self.interior_len()).map(|j| self.interior_node(j)).collect()
    }

    /// Interior unknown index of the node at `x`.
    pub fn interior_index_of(&self, x: &[f64]) -> Result<usize> {
        self.locate(x)
            .and_then(|idx| self.interior_flat(&idx))
            .ok_or_else(|| Error::NodeOutsideGrid(format!("{x:?}")))
    }

    /// The grid with radii `s^{e_k} r_k` and the same counts; node `i` maps
    /// to `s^F x_i`.
    pub fn dilated(&self, exponents: &DilationExponents, s: f64) -> Result<Self> {
        if exponents.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: exponents.dim() });
        }
        if !(s > 0.0) {
            return Err(Error::NonPositive { name: "s", value: s });
        }
        let radii = self.radii.iter().zip(&exponents.e).map(|(r, e)| r * s.powf(*e)).collect();
        Self::new(radii, self.counts.clone())
    }

    /// Trapezoid weights along axis `k` (boundary nodes halved), times `h_k`.
    pub fn trapezoid_weight(&self, k: usize, i: usize) -> f64 {
        let h = self.spacing(k);
        if i == 0 || i == self.counts[k] {
            0.5 * h
        } else {
            h
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_layout() {
        let g = AnisoGrid::new(alloc::vec![4.0, 2.0], alloc::vec![32, 8]).unwrap();
        assert_eq!(g.len(), 33 * 9);
        assert_eq!(g.node(g.origin_index()), alloc::vec![0.0, 0.0]);
        assert_eq!(g.node(0), alloc::vec![-4.0, -2.0]);
        assert_eq!(g.node(g.len() - 1), alloc::vec![4.0, 2.0]);
        assert_eq!(g.spacing(0), 0.25);
        for j in [0, 17, 100, g.len() - 1] {
            assert_eq!(g.flat_index(&g.multi_index(j)), j);
        }
        assert_eq!(g.interior_len(), 31 * 7);
        let j = g.interior_index_of(&[0.0, 0.0]).unwrap();
        assert_eq!(g.interior_node(j), alloc::vec![0.0, 0.0]);
        assert!(g.interior_index_of(&[4.0, 0.0]).is_err());
        assert!(g.interior_index_of(&[0.1, 0.0]).is_err());
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(AnisoGrid::new(alloc::vec![1.0], alloc::vec![5]).is_err());
        assert!(AnisoGrid::new(alloc::vec![1.0], alloc::vec![2]).is_err());
        assert!(AnisoGrid::new(alloc::vec![0.0], alloc::vec![4]).is_err());
        assert!(AnisoGrid::new(alloc::vec![1.0, 1.0], alloc::vec![4]).is_err());
    }

    #[test]
    fn symmetric_nodes() {
        let g = AnisoGrid::new(alloc::vec![3.7], alloc::vec![14]).unwrap();
        for i in 0..=14 {
            assert_eq!(g.axis_node(0, i), -g.axis_node(0, 14 - i));
        }
    }

    #[test]
    fn dilation_scales_nodes() {
        let g = AnisoGrid::new(alloc::vec![1.0, 1.0], alloc::vec![4, 4]).unwrap();
        let e = DilationExponents::new(alloc::vec![0.5, 0.25]).unwrap();
        let h = g.dilated(&e, 16.0).unwrap();
        assert_eq!(h.radii(), &[4.0, 2.0]);
        assert_eq!(h.node(0), alloc::vec![-4.0, -2.0]);
    }
}
