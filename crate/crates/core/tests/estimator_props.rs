use std::sync::LazyLock;

use anikern_core::aniso::{Symbol, WeightVector};
use anikern_core::estimator::{
    check_twisted_sg_norm, fit_offdiagonal_bound, samples_from_field, verify_hypothesis1, verify_hypothesis2,
    BoundFitOptions, KernelSample, SweepOptions,
};
use anikern_core::grid::AnisoGrid;
use anikern_core::kernel::kernel_cc;
use anikern_core::legendre::{LegendreSolver, LfOptions};
use anikern_core::operator::{assemble, assemble_reference, make_twist, CoefficientFieldBuilder, PrincipalCoefficients};
use proptest::prelude::*;

fn section_symbol() -> Symbol {
    Symbol::from_real(&[1, 2], &[(&[2, 0], 1.0), (&[0, 4], 1.0)]).unwrap()
}

static SOLVER: LazyLock<LegendreSolver> =
    LazyLock::new(|| LegendreSolver::new(&section_symbol(), LfOptions::default()).unwrap());

fn kernel_samples(times: &[f64]) -> Vec<KernelSample> {
    let grid = AnisoGrid::cube(2, 8.0, 48).unwrap();
    let mut out = Vec::new();
    for &t in times {
        let k = kernel_cc(&section_symbol(), t, &grid, &[256, 128]).unwrap();
        out.extend(samples_from_field(&k, 1e-10));
    }
    out
}

static TRAINING: LazyLock<Vec<KernelSample>> = LazyLock::new(|| kernel_samples(&[0.5, 1.0, 2.0]));

fn lf(u: &[f64]) -> anikern_core::Result<f64> {
    Ok(SOLVER.eval(u)?.value)
}

#[test]
fn margins_on_training_and_holdout() {
    let fit = fit_offdiagonal_bound(&TRAINING, 0.75, lf, BoundFitOptions::default()).unwrap();
    assert!(fit.min_margin >= 0.0);
    assert!(fit.margins.iter().all(|m| m.margin >= 0.0));
    let holdout = kernel_samples(&[0.7, 1.5]);
    let worst = fit.holdout_margin(&holdout, lf).unwrap();
    assert!(worst >= -1e-6, "held-out margin {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // the fitted M is the largest feasible one, so extra constraints can only lower it
    #[test]
    fn adding_samples_never_raises_m(keep in prop::collection::vec(any::<bool>(), 64), extra in 1usize..200) {
        let diag: Vec<KernelSample> = TRAINING.iter().filter(|s| s.is_diagonal()).cloned().collect();
        let off: Vec<KernelSample> = TRAINING.iter().filter(|s| !s.is_diagonal()).cloned().collect();
        let stride = off.len() / 64;
        let mut base = diag.clone();
        base.extend(off.iter().step_by(stride).zip(&keep).filter(|(_, k)| **k).map(|(s, _)| s.clone()));
        let mut more = base.clone();
        more.extend(off.iter().skip(1).step_by(off.len() / extra).cloned());
        let a = fit_offdiagonal_bound(&base, 0.75, lf, BoundFitOptions::default()).unwrap();
        let b = fit_offdiagonal_bound(&more, 0.75, lf, BoundFitOptions::default()).unwrap();
        prop_assert!(b.m <= a.m);
    }

    #[test]
    fn normalization_covariance(log_c in -5.0f64..5.0) {
        let c = 10f64.powf(log_c);
        let scaled: Vec<KernelSample> = TRAINING.iter().map(|s| KernelSample { abs_k: s.abs_k * c, ..s.clone() }).collect();
        let a = fit_offdiagonal_bound(&TRAINING, 0.75, lf, BoundFitOptions::default()).unwrap();
        let b = fit_offdiagonal_bound(&scaled, 0.75, lf, BoundFitOptions { floor: 1e-300 * c, ..Default::default() }).unwrap();
        prop_assert!((b.c - c * a.c).abs() <= 1e-12 * c * a.c);
        prop_assert!((b.m - a.m).abs() <= 1e-9 * a.m);
    }
}

#[test]
fn hypothesis1_identity_is_exact() {
    let w = WeightVector::new(vec![1, 2]).unwrap();
    let a = PrincipalCoefficients::separable(w, &[1.0, 1.0]).unwrap();
    let ld = assemble_reference(&a, &AnisoGrid::cube(2, 2.0, 8).unwrap()).unwrap();
    let r = verify_hypothesis1(&ld, &ld, 0.0).unwrap();
    assert_eq!(r.constant("c_low"), Some(1.0));
    assert_eq!(r.constant("C_high"), Some(1.0));
}

#[test]
fn sg_slack_has_no_missed_sign_change() {
    let grid = AnisoGrid::cube(1, 4.0, 64).unwrap();
    let w = WeightVector::new(vec![1]).unwrap();
    let a = PrincipalCoefficients::separable(w.clone(), &[1.0]).unwrap();
    let field = CoefficientFieldBuilder::new(grid.clone(), a.clone())
        .principal_scaled(|x| if x[0] < 0.0 { 0.75 } else { 1.5 })
        .build()
        .unwrap();
    let hd = assemble(&field).unwrap();
    let ld = assemble_reference(&a, &grid).unwrap();
    let tm = make_twist((&[-1.0], &[1.0]), &grid, &w, 2).unwrap();
    let lam = vec![1.5];
    let h2 = verify_hypothesis2(&hd, &ld, a.symbol(), &[lam.clone()], &tm, SweepOptions::default()).unwrap();
    let m = h2.constant("M").unwrap();
    let tw = hd.twist(&tm.with_lambda(&lam).unwrap()).unwrap();
    let coarse: Vec<f64> = (1..=10).map(|i| 0.1 * i as f64).collect();
    let fine: Vec<f64> = (20..=200).map(|i| 0.005 * i as f64).collect();
    let rc = check_twisted_sg_norm(&tw, m, a.symbol().real_part(&lam), &coarse).unwrap();
    let rf = check_twisted_sg_norm(&tw, m, a.symbol().real_part(&lam), &fine).unwrap();
    let sign = |s: f64| if s >= -1e-9 { 1 } else { -1 };
    for pair in rc.slacks.windows(2) {
        let inner: Vec<i32> =
            rf.slacks.iter().filter(|(t, _)| *t >= pair[0].0 && *t <= pair[1].0).map(|(_, s)| sign(*s)).collect();
        if sign(pair[0].1) == sign(pair[1].1) {
            assert!(inner.iter().all(|&s| s == sign(pair[0].1)), "sign change inside [{}, {}]", pair[0].0, pair[1].0);
        }
    }
    assert!(rf.accepted());
}
