//! Legendre-Fenchel transform `R^#(x) = sup_xi { x.xi - R(xi) }` of the real
//! part of a symbol.
//!
//! `R` need not be convex, so each evaluation scans a coarse anisotropic grid
//! over a box that provably contains every maximiser, then polishes the best
//! grid-local maxima with damped Newton steps.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
use num_traits::Float;

use crate::aniso::{DilationExponents, Symbol};
use crate::error::{Error, Result};
use crate::grid::AnisoGrid;
use crate::optim::{compass_maximize, CompassOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LfOptions {
    /// Dilation parameter of the search box; `None` derives it from `x`.
    pub coarse_grid_radius_t: Option<f64>,
    pub n_starts: usize,
    /// Convergence threshold on `|grad|_inf / max(1, |x|_inf)`.
    pub tol: f64,
    /// Coarse grid nodes per axis (odd, so `xi = 0` is sampled); `0` picks by dimension.
    pub nodes_per_axis: usize,
    pub max_iter: usize,
}

impl Default for LfOptions {
    fn default() -> Self {
        Self { coarse_grid_radius_t: None, n_starts: 8, tol: 1e-10, nodes_per_axis: 0, max_iter: 200 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfStatus {
    Converged,
    GridOnly,
}

impl LfStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            LfStatus::Converged => "converged",
            LfStatus::GridOnly => "grid_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LfResult {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub status: LfStatus,
    pub iterations: usize,
}

/// Reusable evaluator: validates the symbol once and caches the minimum of
/// `R` over the boundary of the unit box, which sizes every search box.
#[derive(Clone, Debug)]
pub struct LegendreSolver {
    symbol: Symbol,
    exponents: DilationExponents,
    boundary_min: f64,
    opts: LfOptions,
}

impl LegendreSolver {
    pub fn new(symbol: &Symbol, opts: LfOptions) -> Result<Self> {
        if !(opts.tol > 0.0) {
            return Err(Error::NonPositive { name: "tol", value: opts.tol });
        }
        if opts.n_starts == 0 {
            return Err(Error::InvalidArgument("n_starts must be at least 1".into()));
        }
        let boundary_min = unit_box_boundary_min(symbol);
        if !(boundary_min > 0.0) {
            return Err(Error::NotPositiveDefinite { min_value: boundary_min });
        }
        Ok(Self { symbol: symbol.clone(), exponents: symbol.weights().exponents(), boundary_min, opts })
    }

    pub fn symbol(&self) -> &Symbol {
        &self.symbol
    }

    /// Smallest `t` with `t B >= 2 sum_k |x_k| t^{e_k}`, `B = min R` on the
    /// unit-box boundary. For every larger `t` the objective is negative on
    /// the boundary of `t^E [-1, 1]^d`, so maximisers lie inside that box.
    pub fn search_radius_t(&self, x: &[f64]) -> f64 {
        let lhs_ok = |t: f64| {
            let rhs: f64 = x.iter().zip(&self.exponents.e).map(|(xk, e)| 2.0 * xk.abs() * t.powf(*e)).sum();
            t * self.boundary_min >= rhs
        };
        let mut hi = 1.0;
        while !lhs_ok(hi) {
            hi *= 2.0;
        }
        let mut lo = hi / 2.0;
        if lhs_ok(lo) {
            // condition already met below 1; shrink, but keep the box non-degenerate
            while lo > 1e-12 && lhs_ok(lo) {
                lo /= 2.0;
            }
            hi = lo * 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if lhs_ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn objective(&self, x: &[f64], xi: &[f64]) -> f64 {
        x.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() - self.symbol.real_part(xi)
    }

    pub fn eval(&self, x: &[f64]) -> Result<LfResult> {
        self.eval_with_start(x, None)
    }

    /// As [`eval`](Self::eval), additionally refining from `warm` (typically
    /// the maximiser at a neighbouring node).
    pub fn eval_with_start(&self, x: &[f64], warm: Option<&[f64]>) -> Result<LfResult> {
        let d = self.symbol.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        if x.iter().all(|&v| v == 0.0) {
            return Ok(LfResult { value: 0.0, argmax: vec![0.0; d], status: LfStatus::Converged, iterations: 0 });
        }
        let t = self.opts.coarse_grid_radius_t.unwrap_or_else(|| self.search_radius_t(x));
        let radii: Vec<f64> = self.exponents.e.iter().map(|e| t.powf(*e)).collect();
        let n = match self.opts.nodes_per_axis {
            0 => match d {
                1 => 401,
                2 => 41,
                3 => 15,
                _ => 7,
            },
            k => k | 1,
        };
        let starts = self.coarse_starts(x, &radii, n);
        let mut candidates: Vec<Vec<f64>> = starts;
        if let Some(w) = warm {
            candidates.push(w.to_vec());
        }
        let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut best: Option<LfResult> = None;
        let mut total_iters = 0;
        for start in candidates {
            let (xi, val, iters, conv) = self.newton(x, &start, scale)?;
            total_iters += iters;
            let better = match &best {
                None => true,
                Some(b) => val > b.value,
            };
            if better {
                let status = if conv { LfStatus::Converged } else { LfStatus::GridOnly };
                best = Some(LfResult { value: val, argmax: xi, status, iterations: 0 });
            }
        }
        let mut out = best.expect("at least one start");
        out.iterations = total_iters;
        if out.value < 0.0 {
            out = LfResult { value: 0.0, argmax: vec![0.0; d], status: out.status, iterations: total_iters };
        }
        Ok(out)
    }

    /// Best grid-local maxima of the objective on the coarse grid.
    fn coarse_starts(&self, x: &[f64], radii: &[f64], n: usize) -> Vec<Vec<f64>> {
        let d = x.len();
        let total = n.pow(d as u32);
        let node = |flat: usize, out: &mut [f64]| {
            let mut rem = flat;
            for k in (0..d).rev() {
                let i = rem % n;
                rem /= n;
                out[k] = radii[k] * (2.0 * i as f64 - (n - 1) as f64) / (n - 1) as f64;
            }
        };
        let mut vals = vec![0.0; total];
        let mut xi = vec![0.0; d];
        for (flat, v) in vals.iter_mut().enumerate() {
            node(flat, &mut xi);
            *v = self.objective(x, &xi);
        }
        let mut locals: Vec<usize> = Vec::new();
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * n;
        }
        for flat in 0..total {
            let v = vals[flat];
            let mut is_local = true;
            for k in 0..d {
                let i = (flat / strides[k]) % n;
                if i > 0 && vals[flat - strides[k]] > v {
                    is_local = false;
                    break;
                }
                if i + 1 < n && vals[flat + strides[k]] > v {
                    is_local = false;
                    break;
                }
            }
            if is_local {
                locals.push(flat);
            }
        }
        locals.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(core::cmp::Ordering::Equal));
        locals.truncate(self.opts.n_starts);
        locals
            .into_iter()
            .map(|flat| {
                let mut p = vec![0.0; d];
                node(flat, &mut p);
                p
            })
            .collect()
    }

    /// Levenberg-damped Newton ascent with Armijo backtracking.
    fn newton(&self, x: &[f64], start: &[f64], scale: f64) -> Result<(Vec<f64>, f64, usize, bool)> {
        let d = x.len();
        let mut xi = start.to_vec();
        let mut fx = self.objective(x, &xi);
        let mut grad_r = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let mut trial = vec![0.0; d];
        for iter in 0..self.opts.max_iter {
            self.symbol.real_gradient(&xi, &mut grad_r);
            let g: Vec<f64> = x.iter().zip(&grad_r).map(|(a, b)| a - b).collect();
            let gnorm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if gnorm <= self.opts.tol * scale {
                return Ok((xi, fx, iter, true));
            }
            self.symbol.real_hessian(&xi, &mut hess);
            let step = damped_newton_step(&hess, &g, d);
            let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-14 {
                for k in 0..d {
                    trial[k] = xi[k] + alpha * step[k];
                }
                let ft = self.objective(x, &trial);
                if ft >= fx + 1e-4 * alpha * slope {
                    xi.copy_from_slice(&trial);
                    fx = ft;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !fx.is_finite() || xi.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
                return Err(Error::Divergence);
            }
            if !accepted {
                // the step is below rounding; judge convergence by the gradient
                let conv = gnorm <= 1e3 * self.opts.tol * scale;
                return Ok((xi, fx, iter, conv));
            }
        }
        self.symbol.real_gradient(&xi, &mut grad_r);
        let gnorm = x.iter().zip(&grad_r).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        Ok((xi, fx, self.opts.max_iter, gnorm <= self.opts.tol * scale))
    }
}

/// Solves `(hess_R + mu I) step = g`, raising `mu` until the matrix is
/// positive-definite, so `step` is an ascent direction for `x.xi - R`.
fn damped_newton_step(hess: &[f64], g: &[f64], d: usize) -> Vec<f64> {
    let h = DMatrix::from_row_slice(d, d, hess);
    let norm = hess.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let gnorm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut mu = 0.0;
    for _ in 0..80 {
        let mut m = h.clone();
        for k in 0..d {
            m[(k, k)] += mu;
        }
        if let Some(ch) = m.cholesky() {
            let rhs = nalgebra::DVector::from_column_slice(g);
            return ch.solve(&rhs).iter().copied().collect();
        }
        mu = if mu == 0.0 { 1e-10 * (norm + gnorm).max(1e-300) } else { mu * 10.0 };
    }
    g.to_vec()
}

/// Minimum of `R` over the boundary of `[-1, 1]^d`, sampled face by face and
/// polished by local search on the face.
pub fn unit_box_boundary_min(s: &Symbol) -> f64 {
    let d = s.dim();
    let mut best = f64::INFINITY;
    let per_face: usize = match d {
        1 => 1,
        2 => 2001,
        3 => 101,
        _ => 11,
    };
    let mut p = vec![0.0; d];
    for k in 0..d {
        for sign in [-1.0, 1.0] {
            let mut face_best = (f64::INFINITY, vec![0.0; d]);
            let others: Vec<usize> = (0..d).filter(|&j| j != k).collect();
            let total = if d == 1 { 1 } else { per_face.pow(others.len() as u32) };
            for flat in 0..total {
                let mut rem = flat;
                p[k] = sign;
                for &j in others.iter().rev() {
                    let i = rem % per_face;
                    rem /= per_face;
                    p[j] = -1.0 + 2.0 * i as f64 / (per_face - 1) as f64;
                }
                let v = s.real_part(&p);
                if v < face_best.0 {
                    face_best = (v, p.clone());
                }
            }
            let mut v = face_best.0;
            if d > 1 {
                let project = |q: &mut [f64]| {
                    q[k] = sign;
                    for j in 0..q.len() {
                        q[j] = q[j].clamp(-1.0, 1.0);
                    }
                };
                let step = 2.0 / (per_face - 1) as f64;
                let (_, fv) = compass_maximize(
                    |q| -s.real_part(q),
                    &face_best.1,
                    CompassOptions { step, min_step: 1e-12, max_evals: 5000 },
                    project,
                );
                v = v.min(-fv);
            }
            best = best.min(v);
        }
    }
    best
}

/// `R^#(x)` at a single point.
pub fn lf_point(s: &Symbol, x: &[f64], opts: LfOptions) -> Result<LfResult> {
    LegendreSolver::new(s, opts)?.eval(x)
}

/// `R^#` at arbitrary points, chaining each maximiser into the next as a warm start.
pub fn lf_points(s: &Symbol, points: &[Vec<f64>], opts: LfOptions) -> Result<Vec<LfResult>> {
    let solver = LegendreSolver::new(s, opts)?;
    let mut out: Vec<LfResult> = Vec::with_capacity(points.len());
    for p in points {
        let warm = out.last().map(|r| r.argmax.clone());
        out.push(solver.eval_with_start(p, warm.as_deref())?);
    }
    Ok(out)
}

/// `R^#` sampled on every node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LfField {
    pub grid: AnisoGrid,
    pub results: Vec<LfResult>,
}

impl LfField {
    pub fn values(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.value).collect()
    }
}

pub fn lf_grid(s: &Symbol, grid: &AnisoGrid, opts: LfOptions) -> Result<LfField> {
    if grid.dim() != s.dim() {
        return Err(Error::DimensionMismatch { expected: s.dim(), got: grid.dim() });
    }
    let results = lf_points(s, &grid.nodes(), opts)?;
    Ok(LfField { grid: grid.clone(), results })
}

/// Max over samples of `|t R^#(x) - R^#(t^{I-E} x)| / (|t R^#(x)| + floor)`.
pub fn check_lf_homogeneity(s: &Symbol, samples: &[(f64, Vec<f64>)], opts: LfOptions) -> Result<f64> {
    let solver = LegendreSolver::new(s, opts)?;
    let conj = s.weights().conjugate_exponents();
    let mut worst: f64 = 0.0;
    for (t, x) in samples {
        let lhs = t * solver.eval(x)?.value;
        let rhs = solver.eval(&conj.apply(*t, x)?)?.value;
        worst = worst.max((lhs - rhs).abs() / (lhs.abs() + f64::MIN_POSITIVE));
    }
    Ok(worst)
}
