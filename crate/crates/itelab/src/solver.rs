//! Sparse LU factorization, checked solves and the limiting-absorption sweep.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat};
use num_complex::Complex64 as C64;

use crate::assembly::{assemble_nodal, assemble_rhs, system_from_nodal, BlockSystem, DofMap, SourceData, Variant};
use crate::diagnostics::{weighted_norm, NormKind, WeightedNorms};
use crate::error::{invalid, Error, Result};
use crate::geometry::CoefficientSet;
use crate::mesh::{fmt_g17, Mesh};
use crate::sparse::{norm2, Csr};

pub const SOLVE_TOL: f64 = 1e-10;
pub const SINGULAR_RCOND: f64 = 1e-14;
pub const DEFAULT_SCHEDULE: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];

#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair {
    pub u1: Vec<C64>,
    pub u2: Vec<C64>,
    pub w: Vec<C64>,
}

impl FieldPair {
    pub fn new(u1: Vec<C64>, u2: Vec<C64>) -> Self {
        let w = u1.iter().zip(&u2).map(|(a, b)| a - b).collect();
        Self { u1, u2, w }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.u1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u1.is_empty()
    }

    pub fn lin(&self, a: C64, other: &FieldPair, b: C64) -> FieldPair {
        let f = |x: &[C64], y: &[C64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect::<Vec<_>>();
        FieldPair::new(f(&self.u1, &other.u1), f(&self.u2, &other.u2))
    }

    pub fn scaled(&self, a: C64) -> FieldPair {
        FieldPair::new(self.u1.iter().map(|v| a * v).collect(), self.u2.iter().map(|v| a * v).collect())
    }
}

pub struct Factorization {
    lu: Lu<usize, C64>,
    matrix: Csr<C64>,
    pub n: usize,
    pub norm1: f64,
    pub cond_estimate: f64,
    pub factor_time_ms: f64,
    pub dofmap: Option<DofMap>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Factorization(n={}, cond≈{:.3e})", self.n, self.cond_estimate)
    }
}

fn to_faer(a: &Csr<C64>) -> Result<SparseColMat<usize, C64>> {
    let trip: Vec<Triplet<usize, usize, C64>> =
        a.triplets().into_iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    SparseColMat::try_new_from_triplets(a.n_rows, a.n_cols, &trip)
        .map_err(|e| Error::Validation(format!("sparse matrix construction failed: {e:?}")))
}

fn col(x: &[C64]) -> Mat<C64> {
    Mat::from_fn(x.len(), 1, |i, _| x[i])
}

fn uncol(m: &Mat<C64>) -> Vec<C64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

fn norm1_vec(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm()).sum()
}

impl Factorization {
    fn raw_solve(&self, b: &[C64]) -> Vec<C64> {
        let mut m = col(b);
        self.lu.solve_in_place_with_conj(Conj::No, m.as_mut());
        uncol(&m)
    }

    fn raw_solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        let mut m = col(b);
        self.lu.solve_transpose_in_place_with_conj(Conj::Yes, m.as_mut());
        uncol(&m)
    }

    /// Hager–Higham estimate of ‖A⁻¹‖₁.
    fn inverse_norm_estimate(&self) -> f64 {
        let n = self.n;
        let mut x = vec![C64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        let mut last_j = usize::MAX;
        for iter in 0..5 {
            let y = self.raw_solve(&x);
            if y.iter().any(|v| !v.is_finite()) {
                return f64::INFINITY;
            }
            let ny = norm1_vec(&y);
            if iter > 0 && ny <= est {
                break;
            }
            est = ny;
            let xi: Vec<C64> = y.iter().map(|v| if v.norm() > 0.0 { v / v.norm() } else { C64::new(1.0, 0.0) }).collect();
            let z = self.raw_solve_adjoint(&xi);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(k, v)| (k, v.norm()))
                .fold((0, -1.0), |acc, it| if it.1 > acc.1 { it } else { acc });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if iter > 0 && (zmax <= ztx || j == last_j) {
                break;
            }
            last_j = j;
            x = vec![C64::new(0.0, 0.0); n];
            x[j] = C64::new(1.0, 0.0);
        }
        let alt: Vec<C64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                C64::new(s * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
            })
            .collect();
        let y = self.raw_solve(&alt);
        if y.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        est.max(2.0 * norm1_vec(&y) / (3.0 * n as f64))
    }

    pub fn residual(&self, x: &[C64], b: &[C64]) -> f64 {
        let ax = self.matrix.mul_vec(x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let nb = norm2(b);
        if nb == 0.0 {
            norm2(&r)
        } else {
            norm2(&r) / nb
        }
    }

    /// Solve with one step of iterative refinement and a residual gate.
    pub fn solve_vec(&self, b: &[C64]) -> Result<Vec<C64>> {
        if b.len() != self.n {
            return invalid(format!("rhs length {} differs from system size {}", b.len(), self.n));
        }
        if b.iter().all(|v| *v == C64::new(0.0, 0.0)) {
            return Ok(vec![C64::new(0.0, 0.0); self.n]);
        }
        let mut x = self.raw_solve(b);
        let ax = self.matrix.mul_vec(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        if norm2(&r) > 1e-15 * norm2(b) {
            let dx = self.raw_solve(&r);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
        }
        let res = self.residual(&x, b);
        if !(res <= SOLVE_TOL) {
            return Err(Error::Accuracy { residual: res, tol: SOLVE_TOL });
        }
        Ok(x)
    }
}

/// Sparse LU with partial pivoting; singular when the reciprocal condition estimate drops below 1e-14.
pub fn factorize_matrix(a: &Csr<C64>) -> Result<Factorization> {
    if a.n_rows != a.n_cols || a.n_rows == 0 {
        return invalid("factorization needs a nonempty square matrix");
    }
    let t0 = Instant::now();
    let fm = to_faer(a)?;
    let norm1 = a.norm1();
    let singular = |cond: f64| Error::Singular { pivot: if cond.is_finite() { norm1 / cond } else { 0.0 }, cond };
    let lu = fm.sp_lu().map_err(|_| singular(f64::INFINITY))?;
    let mut f = Factorization {
        lu,
        matrix: a.clone(),
        n: a.n_rows,
        norm1,
        cond_estimate: f64::INFINITY,
        factor_time_ms: 0.0,
        dofmap: None,
    };
    let cond = norm1 * f.inverse_norm_estimate();
    f.factor_time_ms = t0.elapsed().as_secs_f64() * 1e3;
    if !(cond.is_finite() && cond * SINGULAR_RCOND < 1.0) {
        return Err(singular(cond));
    }
    f.cond_estimate = cond;
    Ok(f)
}

pub fn factorize(sys: &BlockSystem) -> Result<Factorization> {
    let mut f = factorize_matrix(&sys.matrix)?;
    f.dofmap = Some(sys.dofmap.clone());
    Ok(f)
}

pub fn solve(f: &Factorization, rhs: &[C64]) -> Result<FieldPair> {
    let Some(dm) = &f.dofmap else {
        return invalid("factorization carries no DOF layout");
    };
    let x = f.solve_vec(rhs)?;
    let (u1, u2) = dm.unpack(&x);
    Ok(FieldPair::new(u1, u2))
}

#[derive(Clone, Debug)]
pub struct AbsorptionSweep {
    pub deltas: Vec<f64>,
    pub solutions: Vec<FieldPair>,
    pub h_norms: Vec<f64>,
    pub h_norm_diffs: Vec<f64>,
    pub residuals: Vec<f64>,
    pub factor_times_ms: Vec<f64>,
    pub extrapolated: FieldPair,
    pub converged: bool,
}

impl AbsorptionSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta,h_norm,h_norm_diff,residual,factor_time_ms\n");
        for i in 0..self.deltas.len() {
            let diff = if i == 0 { String::new() } else { fmt_g17(self.h_norm_diffs[i - 1]) };
            let _ = writeln!(
                s,
                "{},{},{},{},{:.3}",
                fmt_g17(self.deltas[i]),
                fmt_g17(self.h_norms[i]),
                diff,
                fmt_g17(self.residuals[i]),
                self.factor_times_ms[i]
            );
        }
        s
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SweepParams {
    pub variant: Variant,
    pub tau: f64,
}

/// Solves at each δ of the (strictly decreasing) schedule and extrapolates linearly to δ = 0.
pub fn limiting_absorption(
    m: &Mesh,
    dm: &DofMap,
    cs: &CoefficientSet,
    gamma0: C64,
    data: &SourceData,
    schedule: &[f64],
    params: SweepParams,
) -> Result<AbsorptionSweep> {
    if schedule.len() < 2 {
        return invalid("schedule needs at least two deltas");
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) || schedule.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
        return invalid("schedule must be strictly decreasing inside (0, 1)");
    }
    let nodal = Arc::new(assemble_nodal(m, cs));
    let hspec = WeightedNorms { which: NormKind::HOmega, tau: params.tau, beta1: 1.0 };
    let mut out = AbsorptionSweep {
        deltas: schedule.to_vec(),
        solutions: Vec::new(),
        h_norms: Vec::new(),
        h_norm_diffs: Vec::new(),
        residuals: Vec::new(),
        factor_times_ms: Vec::new(),
        extrapolated: FieldPair::zeros(m.n_vertices()),
        converged: false,
    };
    let zero_data = data.g1.iter().chain(&data.g2).all(|v| v.norm() == 0.0)
        && data.h.as_ref().is_none_or(|h| h.iter().all(|v| v.norm() == 0.0))
        && data.big_g1.as_ref().is_none_or(|g| g.iter().all(|v| v[0].norm() == 0.0 && v[1].norm() == 0.0));
    let mut rising = 0;
    for (k, &delta) in schedule.iter().enumerate() {
        let sys = system_from_nodal(nodal.clone(), dm, gamma0, delta, params.variant)?;
        if zero_data {
            out.solutions.push(FieldPair::zeros(m.n_vertices()));
            out.h_norms.push(0.0);
            out.residuals.push(0.0);
            out.factor_times_ms.push(0.0);
            if k > 0 {
                out.h_norm_diffs.push(0.0);
            }
            continue;
        }
        let f = factorize(&sys)?;
        let b = assemble_rhs(m, dm, &sys, data)?;
        let x = f.solve_vec(&b)?;
        out.residuals.push(f.residual(&x, &b));
        out.factor_times_ms.push(f.factor_time_ms);
        let (u1, u2) = dm.unpack(&x);
        let v = FieldPair::new(u1, u2);
        out.h_norms.push(weighted_norm(m, cs, &v, &hspec)?);
        if let Some(prev) = out.solutions.last() {
            let diff = v.lin(C64::new(1.0, 0.0), prev, C64::new(-1.0, 0.0));
            let d = weighted_norm(m, cs, &diff, &hspec)?;
            if let Some(&last) = out.h_norm_diffs.last() {
                rising = if d > last { rising + 1 } else { 0 };
            }
            out.h_norm_diffs.push(d);
            if rising >= 2 {
                return Err(Error::SweepDivergence { diffs: out.h_norm_diffs.clone() });
            }
        }
        out.solutions.push(v);
    }
    let n = schedule.len();
    let (d1, d2) = (schedule[n - 2], schedule[n - 1]);
    let (v1, v2) = (&out.solutions[n - 2], &out.solutions[n - 1]);
    // Linear model v(δ) = v(0) + δ v′ through the two smallest δ.
    let c2 = d1 / (d1 - d2);
    let c1 = -d2 / (d1 - d2);
    out.extrapolated = v2.lin(C64::new(c2, 0.0), v1, C64::new(c1, 0.0));
    let last_norm = *out.h_norms.last().unwrap();
    out.converged = zero_data || *out.h_norm_diffs.last().unwrap() <= 1e-6 * last_norm;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_system, build_dofmap};
    use crate::geometry::Domain;
    use crate::mesh::build_mesh;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn one_by_one_system() {
        let a = Csr::from_triplets(1, 1, &[(0, 0, c(0.0, 2.0))]);
        let f = factorize_matrix(&a).unwrap();
        let x = f.solve_vec(&[c(0.0, 2.0)]).unwrap();
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn singular_two_by_two() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, c(1.0, 0.0)), (0, 1, c(1.0, 0.0)), (1, 0, c(1.0, 0.0)), (1, 1, c(1.0, 0.0))]);
        assert!(matches!(factorize_matrix(&a), Err(Error::Singular { .. })));
    }

    #[test]
    fn condition_estimate_of_diagonal() {
        let a = Csr::from_triplets(3, 3, &[(0, 0, c(1.0, 0.0)), (1, 1, c(10.0, 0.0)), (2, 2, c(0.0, 0.01))]);
        let f = factorize_matrix(&a).unwrap();
        assert!((f.cond_estimate - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn coercive_system_factorizes_and_zero_rhs() {
        let m = build_mesh(&Domain::UnitSquare, 8).unwrap();
        let dm = build_dofmap(&m);
        let cs = CoefficientSet::identity();
        let sys = assemble_system(&m, &dm, &cs, c(50.0, 0.0), 0.1, Variant::Sys1RealShift).unwrap();
        let f = factorize(&sys).unwrap();
        let v = solve(&f, &vec![c(0.0, 0.0); dm.total]).unwrap();
        assert!(v.u1.iter().chain(&v.u2).all(|z| z.norm() == 0.0));
    }

    #[test]
    fn linearity_and_determinism() {
        let m = build_mesh(&Domain::UnitDisk, 5).unwrap();
        let dm = build_dofmap(&m);
        let cs = CoefficientSet::contrast(2.0, 1.0, 2.0, 1.0);
        let sys = assemble_system(&m, &dm, &cs, c(20.0, 0.0), 0.01, Variant::Sys1RealShift).unwrap();
        let f = factorize(&sys).unwrap();
        let b1: Vec<C64> = (0..dm.total).map(|i| c((i as f64).sin(), 0.3)).collect();
        let b2: Vec<C64> = (0..dm.total).map(|i| c(1.0, (i as f64 * 0.7).cos())).collect();
        let (a, b) = (c(0.5, -1.0), c(2.0, 0.25));
        let x1 = f.solve_vec(&b1).unwrap();
        let x2 = f.solve_vec(&b2).unwrap();
        let mix: Vec<C64> = b1.iter().zip(&b2).map(|(p, q)| a * p + b * q).collect();
        let xm = f.solve_vec(&mix).unwrap();
        let comb: Vec<C64> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
        let err: Vec<C64> = xm.iter().zip(&comb).map(|(p, q)| p - q).collect();
        assert!(norm2(&err) <= 1e-10 * norm2(&xm));
        assert_eq!(f.solve_vec(&b1).unwrap(), x1);
    }

    #[test]
    fn zero_rhs_sweep_converges_immediately() {
        let m = build_mesh(&Domain::UnitSquare, 4).unwrap();
        let dm = build_dofmap(&m);
        let cs = CoefficientSet::contrast(2.0, 1.0, 2.0, 1.0);
        let s = limiting_absorption(
            &m,
            &dm,
            &cs,
            c(100.0, 0.0),
            &SourceData::zero(m.n_vertices()),
            &DEFAULT_SCHEDULE,
            SweepParams { variant: Variant::Sys1RealShift, tau: 0.2 },
        )
        .unwrap();
        assert!(s.converged);
        assert!(s.extrapolated.u1.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn bad_schedule_rejected() {
        let m = build_mesh(&Domain::UnitSquare, 2).unwrap();
        let dm = build_dofmap(&m);
        let cs = CoefficientSet::identity();
        let p = SweepParams { variant: Variant::Sys1RealShift, tau: 0.2 };
        let d = SourceData::zero(m.n_vertices());
        assert!(limiting_absorption(&m, &dm, &cs, c(1.0, 0.0), &d, &[1e-2, 1e-1], p).is_err());
        assert!(limiting_absorption(&m, &dm, &cs, c(1.0, 0.0), &d, &[1e-2], p).is_err());
    }
}
