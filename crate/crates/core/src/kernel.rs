//! Constant-coefficient heat kernels `K(t, x) = (2 pi)^{-d} int e^{-i xi.x} e^{-t P(xi)} d xi`
//! by truncated trapezoid quadrature on a frequency box.
//!
//! The frequency sum is evaluated as a separable tensor contraction directly
//! at the spatial grid nodes, one axis at a time.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;

use crate::aniso::Symbol;
use crate::error::{Error, Result};
use crate::grid::AnisoGrid;
use crate::legendre::unit_box_boundary_min;

/// Default truncation level: `e^{-40}` is below double precision.
pub const DEFAULT_THRESHOLD: f64 = 40.0;

/// How the complex exponentials of the contraction are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FloatMode {
    /// One `sin_cos` per matrix entry.
    #[default]
    Strict,
    /// Phase recurrence along each frequency row; faster, rounding differs in the last bits.
    Fast,
}

impl FloatMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "strict" => Some(FloatMode::Strict),
            "fast" => Some(FloatMode::Fast),
            _ => None,
        }
    }
}

/// Radii `L_k` with `t R >= threshold` on the boundary of `prod [-L_k, L_k]`.
///
/// With `B = min R` over the boundary of the unit box, homogeneity gives
/// `min t R = t s B` on the boundary of `s^E [-1, 1]^d`, so `s = threshold / (t B)`.
pub fn frequency_box(s: &Symbol, t: f64, threshold: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::NonPositive { name: "t", value: t });
    }
    if !(threshold > 0.0) {
        return Err(Error::NonPositive { name: "threshold", value: threshold });
    }
    let b = unit_box_boundary_min(s);
    if !(b > 0.0) {
        return Err(Error::NotPositiveDefinite { min_value: b });
    }
    let scale = threshold / (t * b);
    Ok(s.weights().exponents().e.iter().map(|e| scale.powf(*e)).collect())
}

/// Sampled heat kernel at time `t` on the nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelField {
    pub grid: AnisoGrid,
    pub t: f64,
    pub values: Vec<Complex64>,
    pub symbol_hash: String,
    pub freq_radii: Vec<f64>,
    pub freq_counts: Vec<usize>,
}

impl KernelField {
    pub fn abs(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.norm()))
    }

    pub fn peak_index(&self) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, v) in self.values.iter().enumerate() {
            if v.norm() > best.1 {
                best = (i, v.norm());
            }
        }
        best.0
    }

    pub fn value_at(&self, x: &[f64]) -> Option<Complex64> {
        self.grid.locate(x).map(|idx| self.values[self.grid.flat_index(&idx)])
    }

    /// `max |Im K| / max |K|`.
    pub fn imaginary_ratio(&self) -> f64 {
        let im = self.values.iter().fold(0.0f64, |a, v| a.max(v.im.abs()));
        im / self.peak()
    }

    /// `max |K| over boundary nodes / max |K|`.
    pub fn boundary_ratio(&self) -> f64 {
        let d = self.grid.dim();
        let mut worst = 0.0f64;
        for (j, v) in self.values.iter().enumerate() {
            let idx = self.grid.multi_index(j);
            if (0..d).any(|k| idx[k] == 0 || idx[k] == self.grid.counts()[k]) {
                worst = worst.max(v.norm());
            }
        }
        worst / self.peak()
    }

    /// Trapezoid integral over the grid box.
    pub fn integral(&self) -> Complex64 {
        let d = self.grid.dim();
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, v) in self.values.iter().enumerate() {
            let idx = self.grid.multi_index(j);
            let w: f64 = (0..d).map(|k| self.grid.trapezoid_weight(k, idx[k])).product();
            acc += v * w;
        }
        acc
    }

    /// Discrete `L^s` norm with node weight `prod h_k`; `s = inf` gives the max.
    pub fn lp_norm(&self, s: f64) -> f64 {
        if s.is_infinite() {
            return self.peak();
        }
        let vol = self.grid.volume_element();
        let sum: f64 = self.values.iter().map(|v| v.norm().powf(s)).sum();
        (sum * vol).powf(1.0 / s)
    }
}

/// Builds the `n_out x n_freq` matrix `w_j (2 pi)^{-1} e^{-i xi_j x_i}`.
fn phase_matrix(nodes: &[f64], freq: &[f64], weights: &[f64], mode: FloatMode) -> Vec<Complex64> {
    let nf = freq.len();
    let mut out = vec![Complex64::new(0.0, 0.0); nodes.len() * nf];
    let norm = 1.0 / core::f64::consts::TAU;
    for (i, &x) in nodes.iter().enumerate() {
        let row = &mut out[i * nf..(i + 1) * nf];
        match mode {
            FloatMode::Strict => {
                for j in 0..nf {
                    let (s, c) = (freq[j] * x).sin_cos();
                    row[j] = Complex64::new(c, -s) * (weights[j] * norm);
                }
            }
            FloatMode::Fast => {
                let step = if nf > 1 { freq[1] - freq[0] } else { 0.0 };
                let (s0, c0) = (freq[0] * x).sin_cos();
                let (s1, c1) = (step * x).sin_cos();
                let rot = Complex64::new(c1, -s1);
                let mut ph = Complex64::new(c0, -s0);
                for j in 0..nf {
                    // re-anchor periodically to bound recurrence drift
                    if j % 64 == 0 && j > 0 {
                        let (s, c) = (freq[j] * x).sin_cos();
                        ph = Complex64::new(c, -s);
                    }
                    row[j] = ph * (weights[j] * norm);
                    ph *= rot;
                }
            }
        }
    }
    out
}

/// Contracts axis `axis` of a row-major tensor of shape `shape` with the
/// `m x shape[axis]` matrix `mat`, returning the new tensor.
fn contract_axis(data: &[Complex64], shape: &[usize], axis: usize, mat: &[Complex64], m: usize) -> Vec<Complex64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = vec![Complex64::new(0.0, 0.0); outer * m * inner];
    for o in 0..outer {
        for i in 0..m {
            let dst = &mut out[(o * m + i) * inner..(o * m + i + 1) * inner];
            for j in 0..n {
                let e = mat[i * n + j];
                let src = &data[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (dv, sv) in dst.iter_mut().zip(src) {
                    *dv += e * sv;
                }
            }
        }
    }
    out
}

/// Heat kernel on grid nodes with frequency boxes from [`frequency_box`] at
/// the default threshold.
pub fn kernel_cc(s: &Symbol, t: f64, grid: &AnisoGrid, freq_counts: &[usize]) -> Result<KernelField> {
    kernel_cc_with(s, t, grid, freq_counts, DEFAULT_THRESHOLD, FloatMode::Strict)
}

pub fn kernel_cc_with(
    s: &Symbol,
    t: f64,
    grid: &AnisoGrid,
    freq_counts: &[usize],
    threshold: f64,
    mode: FloatMode,
) -> Result<KernelField> {
    let d = s.dim();
    if grid.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: grid.dim() });
    }
    if freq_counts.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: freq_counts.len() });
    }
    if let Some(&c) = freq_counts.iter().find(|&&c| c < 2) {
        return Err(Error::InvalidArgument(alloc::format!("frequency count {c} below 2")));
    }
    let radii = frequency_box(s, t, threshold)?;
    let mut freq_axes = Vec::with_capacity(d);
    let mut weights = Vec::with_capacity(d);
    for k in 0..d {
        let n = freq_counts[k];
        let dxi = 2.0 * radii[k] / n as f64;
        let limit = core::f64::consts::PI / grid.radii()[k];
        if dxi > limit {
            return Err(Error::Nyquist { axis: k, spacing: dxi, limit });
        }
        freq_axes.push((0..=n).map(|j| radii[k] * (2.0 * j as f64 - n as f64) / n as f64).collect::<Vec<f64>>());
        weights.push((0..=n).map(|j| if j == 0 || j == n { 0.5 * dxi } else { dxi }).collect::<Vec<f64>>());
    }
    let mut shape: Vec<usize> = freq_counts.iter().map(|c| c + 1).collect();
    let total: usize = shape.iter().product();
    let mut data = Vec::with_capacity(total);
    let mut xi = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        for k in (0..d).rev() {
            xi[k] = freq_axes[k][rem % shape[k]];
            rem /= shape[k];
        }
        data.push((-s.eval(&xi) * t).exp());
    }
    for k in 0..d {
        let nodes = grid.axis_nodes(k);
        let mat = phase_matrix(&nodes, &freq_axes[k], &weights[k], mode);
        data = contract_axis(&data, &shape, k, &mat, nodes.len());
        shape[k] = nodes.len();
    }
    Ok(KernelField {
        grid: grid.clone(),
        t,
        values: data,
        symbol_hash: s.digest(),
        freq_radii: radii,
        freq_counts: freq_counts.to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassReport {
    /// `|int K - 1|`.
    pub deviation: f64,
    /// Boundary values are below `1e-12` of the peak.
    pub support_covered: bool,
}

pub fn check_mass(k: &KernelField) -> MassReport {
    MassReport {
        deviation: (k.integral() - Complex64::new(1.0, 0.0)).norm(),
        support_covered: k.boundary_ratio() < 1e-12,
    }
}

/// Max relative deviation between `K(t, x)` and `t^{-mu} K(1, t^{-E} x)` over
/// nodes with `|K| > 1e-6` of the peak. The right side is computed on the grid
/// with radii `t^{-e_k} r_k`, whose nodes are exactly `t^{-E} x`.
pub fn check_scaling_identity(s: &Symbol, t: f64, grid: &AnisoGrid, freq_counts: &[usize]) -> Result<f64> {
    check_scaling_identity_with(s, t, grid, freq_counts, FloatMode::Strict)
}

pub fn check_scaling_identity_with(
    s: &Symbol,
    t: f64,
    grid: &AnisoGrid,
    freq_counts: &[usize],
    mode: FloatMode,
) -> Result<f64> {
    let lhs = kernel_cc_with(s, t, grid, freq_counts, DEFAULT_THRESHOLD, mode)?;
    let shrunk = grid.dilated(&s.weights().exponents(), 1.0 / t)?;
    let rhs = kernel_cc_with(s, 1.0, &shrunk, freq_counts, DEFAULT_THRESHOLD, mode)?;
    let factor = t.powf(-s.weights().mu_f64());
    let cutoff = 1e-6 * lhs.peak();
    let mut worst = 0.0f64;
    for (a, b) in lhs.values.iter().zip(&rhs.values) {
        if a.norm() > cutoff {
            worst = worst.max((a - b * factor).norm() / a.norm());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormProfile {
    pub exponent: f64,
    pub points: Vec<(f64, f64)>,
    /// Least-squares slope of `log |K(t)|_s` against `log t`.
    pub slope: f64,
    /// `-mu (1 - 1/s)`.
    pub expected_slope: f64,
}

/// `|K(t, .)|_s` on a fixed grid for each time.
pub fn norm_profile(
    s: &Symbol,
    exponent: f64,
    times: &[f64],
    grid: &AnisoGrid,
    freq_counts: &[usize],
) -> Result<NormProfile> {
    if !(exponent >= 1.0) {
        return Err(Error::InvalidArgument(alloc::format!("norm exponent {exponent} below 1")));
    }
    if times.len() < 2 {
        return Err(Error::InvalidArgument("need at least two times".into()));
    }
    let mut points = Vec::with_capacity(times.len());
    for &t in times {
        let k = kernel_cc(s, t, grid, freq_counts)?;
        points.push((t, k.lp_norm(exponent)));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, _, _) = crate::optim::linear_fit(&xs, &ys);
    let inv = if exponent.is_infinite() { 0.0 } else { 1.0 / exponent };
    Ok(NormProfile { exponent, points, slope, expected_slope: -s.weights().mu_f64() * (1.0 - inv) })
}
