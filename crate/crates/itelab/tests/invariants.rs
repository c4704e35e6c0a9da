use itelab::conditions::{check_complementing, check_hypothesis, Hypothesis, HypothesisParams};
use itelab::diagnostics::{weighted_norm, NormKind, WeightedNorms};
use itelab::geometry::{pt, pushforward, CoefficientSet, Diffeomorphism, Domain, MatrixField, ScalarField};
use itelab::halfspace::mode_coefficients;
use itelab::mesh::build_mesh;
use itelab::solver::FieldPair;
use itelab::spectral::recover_ite;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn spd2() -> impl Strategy<Value = DMatrix<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.05..2.0f64).prop_map(|(a, b, c, d, s)| {
        let m = DMatrix::from_row_slice(2, 2, &[a, b, c, d]);
        &m * m.transpose() + DMatrix::identity(2, 2) * s
    })
}

fn spd3() -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0..1.0f64, 9), 0.05..2.0f64).prop_map(|(v, s)| {
        let m = DMatrix::from_row_slice(3, 3, &v);
        &m * m.transpose() + DMatrix::identity(3, 3) * s
    })
}

fn unit2() -> impl Strategy<Value = DVector<f64>> {
    (0.0..std::f64::consts::TAU).prop_map(|t| DVector::from_vec(vec![t.cos(), t.sin()]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn complementing_in_the_plane_is_a_determinant_test(a1 in spd2(), a2 in spd2(), e in unit2()) {
        let c = check_complementing(&a1, &a2, &e).unwrap();
        let gap = a1.determinant() - a2.determinant();
        prop_assert!((c.margin - gap).abs() <= 1e-9 * (1.0 + gap.abs()));
        if gap.abs() > 1e-8 {
            prop_assert!(c.holds);
        }
    }

    #[test]
    fn complementing_is_swap_antisymmetric(a1 in spd3(), a2 in spd3(), v in prop::collection::vec(-1.0..1.0f64, 3)) {
        let e = DVector::from_vec(v);
        prop_assume!(e.norm() > 1e-3);
        let e = e.normalize();
        let ab = check_complementing(&a1, &a2, &e).unwrap();
        let ba = check_complementing(&a2, &a1, &e).unwrap();
        prop_assert_eq!(ab.holds, ba.holds);
        prop_assert!((ab.margin + ba.margin).abs() <= 1e-12 * (1.0 + ab.margin.abs()));
    }

    #[test]
    fn mode_exponent_decays(a in spd2(), s in 0.1..5.0f64, lam in 1e-2..1e4f64, xi in -20.0..20.0f64) {
        let side = mode_coefficients(&a, s, lam, &[xi]);
        prop_assert!(side.eta.re < 0.0);
        prop_assert!(side.sqrt_delta.re > 0.0);
        let z = side.eta * side.eta * side.a + 2.0 * C64::new(0.0, side.b) * side.eta - side.c - C64::new(0.0, lam * s);
        prop_assert!(z.norm() <= 1e-8 * (1.0 + side.delta.norm()), "characteristic residual {}", z.norm());
    }

    #[test]
    fn recovery_inverts_the_shift_map(re in -1e3..1e3f64, im in -1e3..1e3f64, g in 1.0..500.0f64, imag_shift in any::<bool>()) {
        let gamma0 = if imag_shift { C64::new(0.0, g) } else { C64::new(g, 0.0) };
        let lam = C64::new(re, im);
        prop_assume!((lam - gamma0).norm() > 1e-3);
        let (back, dropped) = recover_ite(&[1.0 / (lam - gamma0)], gamma0);
        prop_assert_eq!(dropped, 0);
        prop_assert!((back[0] - lam).norm() <= 1e-9 * (1.0 + lam.norm()));
    }

    #[test]
    fn pushforward_by_identity_is_trivial(a in spd2(), s in 0.1..5.0f64, x in -0.6..0.6f64, y in -0.6..0.6f64) {
        let m = nalgebra::Matrix2::new(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
        let (pa, ps) = pushforward(&Diffeomorphism::identity(), &MatrixField::constant(m, 10.0), &ScalarField::constant(s)).unwrap();
        let p = pt(x, y);
        prop_assert!((pa.eval(&p) - m).norm() <= 1e-12 * m.norm());
        prop_assert!((ps.eval(&p) - s).abs() <= 1e-12 * s);
    }

    #[test]
    fn radial_pushforward_conserves_sigma_mass(b in 0.05..0.6f64) {
        let f = Diffeomorphism::radial(move |r| 1.0 + b * (r * r - 1.0), move |r| 1.0 + b * (3.0 * r * r - 1.0)).on_domain(Domain::UnitDisk);
        let (_, ps) = pushforward(&f, &MatrixField::scaled_identity(1.0), &ScalarField::constant(1.0)).unwrap();
        // ∫ F⁎Σ dy = ∫ Σ dx on the disk; midpoint rule in polar coordinates.
        let n = 400;
        let mut total = 0.0;
        for i in 0..n {
            let r = (i as f64 + 0.5) / n as f64;
            total += ps.eval(&pt(r, 0.0)) * 2.0 * std::f64::consts::PI * r / n as f64;
        }
        prop_assert!((total - std::f64::consts::PI).abs() <= 1e-3);
    }
}

fn random_pair(n: usize, seed: u64) -> FieldPair {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v = || (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect::<Vec<_>>();
    let u1 = v();
    let u2 = v();
    FieldPair::new(u1, u2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weighted_norms_are_norms(seed in 0u64..1000, re in -3.0..3.0f64, im in -3.0..3.0f64, which in 0usize..4) {
        let m = build_mesh(&Domain::UnitSquare, 6).unwrap();
        let cs = CoefficientSet::contrast(2.0, 1.0, 2.0, 1.0);
        let kind = [NormKind::HOmega, NormKind::Hhat1, NormKind::Hhat0, NormKind::L2DGamma(1.0)][which];
        let spec = WeightedNorms::new(kind, 0.3, 1.0).unwrap();
        let x = random_pair(m.n_vertices(), seed);
        let y = random_pair(m.n_vertices(), seed + 7);
        let c = C64::new(re, im);
        let nx = weighted_norm(&m, &cs, &x, &spec).unwrap();
        let ny = weighted_norm(&m, &cs, &y, &spec).unwrap();
        let ncx = weighted_norm(&m, &cs, &x.scaled(c), &spec).unwrap();
        prop_assert!((ncx - c.norm() * nx).abs() <= 1e-10 * (1.0 + ncx));
        let nxy = weighted_norm(&m, &cs, &x.lin(C64::new(1.0, 0.0), &y, C64::new(1.0, 0.0)), &spec).unwrap();
        prop_assert!(nxy <= nx + ny + 1e-10);
    }

    #[test]
    fn best_c_scales_with_the_gap(gap in 0.1..4.0f64, scale in 1.0..5.0f64) {
        let p = HypothesisParams::new(0.0, 0.2, 200);
        let small = check_hypothesis(&CoefficientSet::contrast(1.0 + gap, 1.0, 1.0, 1.0), &Domain::UnitSquare, Hypothesis::Thm1, p).unwrap();
        let large = check_hypothesis(&CoefficientSet::contrast(1.0 + scale * gap, 1.0, 1.0, 1.0), &Domain::UnitSquare, Hypothesis::Thm1, p).unwrap();
        prop_assert!(small.holds && large.holds);
        prop_assert!(large.best_c >= small.best_c - 1e-12);
    }
}
