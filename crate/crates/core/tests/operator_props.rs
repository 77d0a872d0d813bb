use anikern_core::aniso::{MultiIndex, WeightVector};
use anikern_core::grid::AnisoGrid;
use anikern_core::linalg::{hermitian_defect, CVector};
use anikern_core::operator::{
    assemble, quadratic_form_direct, CoefficientField, CoefficientFieldBuilder, PrincipalCoefficients, TwistMap,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn field_2d(amp: f64, drift: f64, phase: f64) -> CoefficientField {
    let grid = AnisoGrid::new(vec![2.0, 2.0], vec![8, 8]).unwrap();
    let w = WeightVector::new(vec![1, 2]).unwrap();
    let a = PrincipalCoefficients::separable(w, &[1.0, 0.5]).unwrap();
    CoefficientFieldBuilder::new(grid, a)
        .principal_scaled(move |x| 1.0 + amp * (x[0] + phase).sin().powi(2) * x[1].cos().abs())
        .pair(MultiIndex::new(vec![1, 0]), MultiIndex::new(vec![0, 1]), move |x| {
            Complex64::new(0.1 * amp * x[1].cos(), 0.05 * (x[0] - phase).sin())
        })
        .pair(MultiIndex::new(vec![0, 1]), MultiIndex::zero(2), move |x| Complex64::new(drift * x[0].sin(), drift))
        .pair(MultiIndex::zero(2), MultiIndex::zero(2), move |x| Complex64::new(drift * x[1] * x[1], 0.0))
        .build()
        .unwrap()
}

fn vector(n: usize) -> impl Strategy<Value = CVector> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
        .prop_map(|v| CVector::from_iterator(v.len(), v.into_iter().map(|(a, b)| Complex64::new(a, b))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn assembled_is_hermitian(amp in 0.0f64..0.5, drift in -0.5f64..0.5, phase in 0.0f64..3.0) {
        let h = assemble(&field_2d(amp, drift, phase)).unwrap();
        prop_assert!(hermitian_defect(h.matrix()) <= 1e-12);
    }

    #[test]
    fn form_matches_direct_sum(amp in 0.0f64..0.5, drift in -0.5f64..0.5, f in vector(49)) {
        let field = field_2d(amp, drift, 0.3);
        let h = assemble(&field).unwrap();
        let q = h.quadratic_form(&f).unwrap();
        let direct = quadratic_form_direct(&field, &f).unwrap();
        prop_assert!((q - direct).norm() <= 1e-10 * direct.norm().max(1.0));
    }

    #[test]
    fn twist_preserves_spectrum(lx in -1.5f64..1.5, ly in -1.5f64..1.5) {
        let field = field_2d(0.3, 0.2, 0.0);
        let h = assemble(&field).unwrap();
        let tm = TwistMap::identity(2);
        let tw = h.twist(&tm.with_lambda(&[lx, ly]).unwrap()).unwrap();
        let mut a: Vec<Complex64> = h.eigen().unwrap().values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut b: Vec<Complex64> = tw.matrix().clone().schur().eigenvalues().unwrap().iter().copied().collect();
        let key = |z: &Complex64| (z.re * 1e6).round() as i64;
        a.sort_by_key(key);
        b.sort_by_key(key);
        let scale = a.iter().fold(1.0f64, |m, z| m.max(z.norm()));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).norm() <= 1e-8 * scale, "{x} vs {y}");
        }
    }
}

#[test]
fn kernel_column_converges_second_order() {
    let w = WeightVector::new(vec![1]).unwrap();
    let a = PrincipalCoefficients::separable(w, &[1.0]).unwrap();
    let mut values = Vec::new();
    for count in [32, 64, 128] {
        let grid = AnisoGrid::cube(1, 4.0, count).unwrap();
        let field = CoefficientFieldBuilder::new(grid.clone(), a.clone())
            .principal_scaled(|x| 1.1 + 0.3 * x[0].sin())
            .pair(MultiIndex::zero(1), MultiIndex::zero(1), |x| Complex64::new(0.2 * x[0].cos(), 0.0))
            .build()
            .unwrap();
        let col = assemble(&field).unwrap().kernel_column(0.5, &[0.0]).unwrap();
        values.push(col[grid.interior_index_of(&[1.0]).unwrap()]);
    }
    let (d1, d2) = ((values[1] - values[0]).norm(), (values[2] - values[1]).norm());
    let order = (d1 / d2).log2();
    assert!(order > 1.8, "observed order {order:.3} ({d1:e}, {d2:e})");
}
