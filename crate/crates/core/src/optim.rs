//! Derivative-free local refinement used to polish sampled extrema.

use alloc::vec::Vec;

#[derive(Clone, Copy, Debug)]
pub struct CompassOptions {
    pub step: f64,
    pub min_step: f64,
    pub max_evals: usize,
}

impl Default for CompassOptions {
    fn default() -> Self {
        Self { step: 1e-2, min_step: 1e-11, max_evals: 20_000 }
    }
}

/// Compass (coordinate pattern) search for a local maximum of `f`.
///
/// `project` is applied to every trial point, which lets callers keep the
/// iterate on a constraint set such as the unit sphere or a box face.
/// Works on non-smooth objectives like `|xi^alpha| - eps R(xi)^kappa`.
pub fn compass_maximize<F, P>(mut f: F, x0: &[f64], opts: CompassOptions, mut project: P) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
    P: FnMut(&mut [f64]),
{
    let mut x = x0.to_vec();
    project(&mut x);
    let mut fx = f(&x);
    let mut step = opts.step;
    let mut evals = 1usize;
    let mut trial = x.clone();
    while step >= opts.min_step && evals < opts.max_evals {
        let mut improved = false;
        for k in 0..x.len() {
            for sign in [1.0, -1.0] {
                trial.copy_from_slice(&x);
                trial[k] += sign * step;
                project(&mut trial);
                let ft = f(&trial);
                evals += 1;
                if ft > fx {
                    fx = ft;
                    x.copy_from_slice(&trial);
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
pub fn golden_maximize<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let ratio = 0.618_033_988_749_894_8;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..iters {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        }
    }
    if fa > fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

/// Ordinary least-squares slope and its standard error.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    #[allow(unused_imports)] // inherent f64 methods shadow these when std is linked
    use num_traits::Float;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let stderr = if xs.len() > 2 { (resid / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, intercept, stderr)
}
