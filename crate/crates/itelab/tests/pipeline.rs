use itelab::assembly::{assemble_nodal, build_dofmap};
use itelab::conditions::{check_hypothesis, check_with_pushforward, Hypothesis, HypothesisParams};
use itelab::geometry::{pt, pushforward, CoefficientSet, Diffeomorphism, Domain, Mat2, MatrixField, ScalarField};
use itelab::mesh::build_mesh;
use itelab::oracle::{disk_eigenfunction, find_disk_tes, DiskMedia};
use itelab::solver::FieldPair;
use itelab::spectral::{OperatorT, TKind};
use num_complex::Complex64 as C64;

#[test]
fn oracle_eigenpair_is_an_eigenvector_of_t1() {
    let media = DiskMedia::new(1.0, 1.0, 4.0, 1.0);
    let te = find_disk_tes(&media, 60.0, 6).unwrap()[0];
    let m = build_mesh(&Domain::UnitDisk, 24).unwrap();
    let dm = build_dofmap(&m);
    let cs = CoefficientSet::contrast(1.0, 1.0, 4.0, 1.0);
    let gamma0 = C64::new(50.0, 0.0);
    let op = OperatorT::build(&m, &dm, &cs, TKind::T1, gamma0, 0.0).unwrap();
    let (u1, u2): (Vec<C64>, Vec<C64>) = m
        .vertices
        .iter()
        .map(|p| {
            let (a, b) = disk_eigenfunction(&media, te.m, te.lam, p.x, p.y);
            (C64::new(a, 0.0), C64::new(b, 0.0))
        })
        .unzip();
    let u = FieldPair::new(u1, u2);
    let tu = op.apply_t(&u).unwrap();
    let mu = 1.0 / (C64::new(-te.lam, 0.0) - gamma0);
    let mass = assemble_nodal(&m, &CoefficientSet::identity()).mass;
    let l2 = |v: &FieldPair| (mass.form(&v.u1, &v.u1).re + mass.form(&v.u2, &v.u2).re).sqrt();
    let diff = tu.lin(C64::new(1.0, 0.0), &u, -mu);
    let rel = l2(&diff) / (l2(&u) * mu.norm());
    assert!(rel <= 0.05, "relative eigen-relation defect {rel:.3e}");
}

/// `A₁ = F^*(2I)` for the radial map with `b = 0.9`, so that `A₁ − I` changes sign.
fn pulled_back_media() -> (CoefficientSet, Diffeomorphism) {
    let b = 0.9;
    let f = Diffeomorphism::radial(move |r| 1.0 + b * (r * r - 1.0), move |r| 1.0 + b * (3.0 * r * r - 1.0)).on_domain(Domain::UnitDisk);
    let f2 = f.clone();
    let a1 = MatrixField::new(
        move |x: &itelab::geometry::Point| {
            let j = f2.jacobian(x);
            let ji = j.try_inverse().unwrap();
            ji * Mat2::identity() * 2.0 * ji.transpose() * j.determinant()
        },
        50.0,
    );
    let cs = CoefficientSet::new(a1, MatrixField::scaled_identity(1.0), ScalarField::constant(5.0), ScalarField::constant(1.0));
    (cs, f)
}

#[test]
fn pushforward_restores_the_gap_condition() {
    let (cs, f) = pulled_back_media();
    let p = HypothesisParams::new(0.0, 0.99, 2000);
    let before = check_hypothesis(&cs, &Domain::UnitDisk, Hypothesis::Thm1, p).unwrap();
    assert!(!before.holds);
    assert!(!before.witnesses.is_empty());
    let after = check_with_pushforward(&cs, &Domain::UnitDisk, &f, Hypothesis::Thm1, p).unwrap();
    assert!(after.holds, "{:?}", after.witnesses);
    assert!((after.best_c - 1.0).abs() < 1e-6, "best_c {}", after.best_c);
}

#[test]
fn pushforward_matches_the_jacobian_formula_pointwise() {
    let (cs, f) = pulled_back_media();
    let (pa, ps) = pushforward(&f, &cs.a1, &cs.s1).unwrap();
    for y in [pt(0.1, 0.2), pt(-0.5, 0.3), pt(0.0, -0.8)] {
        assert!((pa.eval(&y) - Mat2::identity() * 2.0).norm() < 1e-8);
        let x = f.inverse(&y).unwrap();
        assert!((ps.eval(&y) - 5.0 / f.jacobian(&x).determinant()).abs() < 1e-12);
    }
}

#[test]
fn rejects_maps_that_move_the_boundary() {
    let f = Diffeomorphism::radial(|_| 1.1, |_| 1.1);
    assert!(f.validate(&Domain::UnitDisk, 64).is_err());
}

fn first_real(m: &itelab::mesh::Mesh, cs: &CoefficientSet) -> f64 {
    let dm = build_dofmap(m);
    let op = OperatorT::build(m, &dm, cs, TKind::T1, C64::new(50.0, 0.0), 0.0).unwrap();
    let res = itelab::spectral::arnoldi_eigs(&op, m.h_max, 16, 1e-10, 300).unwrap();
    res.lambda_ite
        .iter()
        .filter(|l| l.norm() > 1e-3 && l.im.abs() <= 1e-6 * l.norm() && l.re < 0.0)
        .map(|l| -l.re)
        .min_by(f64::total_cmp)
        .expect("a real eigenvalue")
}

#[test]
fn field_one_pushforward_keeps_the_first_eigenvalue() {
    let exact = find_disk_tes(&DiskMedia::new(2.0, 1.0, 4.0, 1.0), 80.0, 6).unwrap()[0].lam;
    let b = 0.3;
    let f = Diffeomorphism::radial(move |r| 1.0 + b * (r * r - 1.0), move |r| 1.0 + b * (3.0 * r * r - 1.0)).on_domain(Domain::UnitDisk);
    let (pa, ps) = pushforward(&f, &MatrixField::scaled_identity(2.0), &ScalarField::constant(4.0)).unwrap();
    let plain = CoefficientSet::contrast(2.0, 1.0, 4.0, 1.0);
    let pushed = CoefficientSet::new(pa, MatrixField::scaled_identity(1.0), ps, ScalarField::constant(1.0));
    let m = build_mesh(&Domain::UnitDisk, 24).unwrap();
    let (a, p) = (first_real(&m, &plain), first_real(&m, &pushed));
    assert!((a - exact).abs() / exact < 0.03, "plain {a} vs oracle {exact}");
    assert!((a - p).abs() / a < 0.02, "plain {a} vs pushed {p}");
}
