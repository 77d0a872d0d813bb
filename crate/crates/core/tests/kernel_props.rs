use anikern_core::aniso::Symbol;
use anikern_core::grid::AnisoGrid;
use anikern_core::kernel::{check_mass, check_scaling_identity, kernel_cc, norm_profile};

fn symbols() -> Vec<(Symbol, AnisoGrid, Vec<usize>)> {
    vec![
        (Symbol::from_real(&[1], &[(&[2], 1.0)]).unwrap(), AnisoGrid::cube(1, 12.0, 96).unwrap(), vec![256]),
        (Symbol::from_real(&[2], &[(&[4], 1.0)]).unwrap(), AnisoGrid::cube(1, 12.0, 96).unwrap(), vec![256]),
        (
            Symbol::from_real(&[1, 2], &[(&[2, 0], 1.0), (&[0, 4], 1.0)]).unwrap(),
            AnisoGrid::new(vec![8.0, 8.0], vec![48, 48]).unwrap(),
            vec![256, 128],
        ),
        (
            Symbol::from_real(&[2, 2], &[(&[4, 0], 1.0), (&[2, 2], 1.0), (&[0, 4], 1.0)]).unwrap(),
            AnisoGrid::cube(2, 8.0, 48).unwrap(),
            vec![128, 128],
        ),
    ]
}

#[test]
fn scaling_identity_on_examples() {
    for (s, grid, freq) in symbols() {
        for t in [0.25, 0.5, 2.0, 4.0] {
            let dev = check_scaling_identity(&s, t, &grid, &freq).unwrap();
            assert!(dev <= 1e-7, "symbol {} t={t}: {dev:e}", s.digest());
        }
    }
}

#[test]
fn real_for_even_real_symbols() {
    for (s, grid, freq) in symbols() {
        assert!(s.is_even() && s.real_part_only());
        let k = kernel_cc(&s, 1.0, &grid, &freq).unwrap();
        assert!(k.imaginary_ratio() <= 1e-10, "{}", k.imaginary_ratio());
    }
}

#[test]
fn unit_mass_when_covered() {
    let s = Symbol::from_real(&[1, 2], &[(&[2, 0], 1.0), (&[0, 4], 1.0)]).unwrap();
    let grid = AnisoGrid::new(vec![16.0, 16.0], vec![96, 96]).unwrap();
    for t in [0.5, 1.0, 2.0] {
        let k = kernel_cc(&s, t, &grid, &[256, 128]).unwrap();
        let m = check_mass(&k);
        if m.support_covered {
            assert!(m.deviation <= 1e-8, "t={t}: {:e}", m.deviation);
        }
    }
    let s = Symbol::from_real(&[1], &[(&[2], 1.0)]).unwrap();
    let k = kernel_cc(&s, 1.0, &AnisoGrid::cube(1, 20.0, 200).unwrap(), &[256]).unwrap();
    let m = check_mass(&k);
    assert!(m.support_covered && m.deviation <= 1e-8);
}

#[test]
fn norm_slopes_for_three_exponents() {
    let times = [0.5, 1.0, 2.0, 5.0];
    let cases = [
        (Symbol::from_real(&[1], &[(&[2], 1.0)]).unwrap(), AnisoGrid::cube(1, 40.0, 400).unwrap(), vec![512]),
        (Symbol::from_real(&[2], &[(&[4], 1.0)]).unwrap(), AnisoGrid::cube(1, 30.0, 400).unwrap(), vec![512]),
    ];
    for (s, grid, freq) in cases {
        for exponent in [1.0, 2.0, f64::INFINITY] {
            let p = norm_profile(&s, exponent, &times, &grid, &freq).unwrap();
            let tol = 0.02 * p.expected_slope.abs().max(0.25);
            assert!((p.slope - p.expected_slope).abs() <= tol, "s={exponent}: {} vs {}", p.slope, p.expected_slope);
        }
    }
}
