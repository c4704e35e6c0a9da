//! Solve-then-multiply operators T, restarted Arnoldi, and eigenvalue recovery.

use std::fmt::Write as _;
use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::{assemble_nodal, system_from_nodal, DofMap, NodalMatrices, Variant};
use crate::error::{invalid, Error, Result};
use crate::geometry::{CoefficientSet, Domain};
use crate::mesh::{build_mesh, fmt_g17, Mesh};
use crate::solver::{factorize, Factorization, FieldPair};
use crate::sparse::Csr;

pub const DEFAULT_SEED: u64 = 0x17E;

/// Default real shift `25/h_max` clamped to `[50, 2000]`.
pub fn default_lambda0(h_max: f64) -> f64 {
    (25.0 / h_max).clamp(50.0, 2000.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum TKind {
    T1,
    T2,
    T3 { lambda: C64 },
    T4,
}

impl TKind {
    pub fn variant(self) -> Variant {
        match self {
            TKind::T1 => Variant::Sys1RealShift,
            TKind::T2 => Variant::Sys2ImagShift,
            TKind::T3 { .. } => Variant::Sys3Thm2,
            TKind::T4 => Variant::Sys4Thm4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TKind::T1 => "T1",
            TKind::T2 => "T2",
            TKind::T3 { .. } => "T3",
            TKind::T4 => "T4",
        }
    }
}

/// Linear map on a Hilbert space of coefficient vectors.
pub trait KrylovOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>>;
    /// Inner product, conjugate-linear in the first slot.
    fn inner(&self, x: &[C64], y: &[C64]) -> C64;
    fn norm(&self, x: &[C64]) -> f64 {
        self.inner(x, x).re.max(0.0).sqrt()
    }
}

pub struct OperatorT {
    pub kind: TKind,
    pub gamma0: C64,
    pub delta: f64,
    pub factorization: Arc<Factorization>,
    pub nodal: Arc<NodalMatrices>,
    pub dofmap: DofMap,
    gram: Csr<f64>,
}

impl std::fmt::Debug for OperatorT {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "OperatorT({:?}, γ₀={}, δ={})", self.kind, self.gamma0, self.delta)
    }
}

fn gram_matrix(dm: &DofMap, mass: &Csr<f64>) -> Csr<f64> {
    let mut trip = Vec::with_capacity(2 * mass.nnz());
    for i in 0..mass.n_rows {
        for (j, v) in mass.row(i) {
            trip.push((dm.field1[i], dm.field1[j], v));
            trip.push((dm.field2[i], dm.field2[j], v));
        }
    }
    Csr::from_triplets(dm.total, dm.total, &trip)
}

impl OperatorT {
    /// Assembles and factors the shifted system behind `T`.
    pub fn build(m: &Mesh, dm: &DofMap, cs: &CoefficientSet, kind: TKind, gamma0: C64, delta: f64) -> Result<Self> {
        let nodal = Arc::new(assemble_nodal(m, cs));
        Self::from_nodal(nodal, dm, kind, gamma0, delta)
    }

    pub fn from_nodal(nodal: Arc<NodalMatrices>, dm: &DofMap, kind: TKind, gamma0: C64, delta: f64) -> Result<Self> {
        if let TKind::T3 { lambda } = kind {
            if lambda.norm() == 0.0 {
                return invalid("T3 needs a nonzero spectral parameter");
            }
        }
        let sys = system_from_nodal(nodal.clone(), dm, gamma0, delta, kind.variant())?;
        let factorization = Arc::new(factorize(&sys)?);
        let gram = gram_matrix(dm, &nodal.mass);
        Ok(Self { kind, gamma0, delta, factorization, nodal, dofmap: dm.clone(), gram })
    }

    /// Same factorization with a different T3 parameter.
    pub fn with_kind(&self, kind: TKind) -> Result<Self> {
        if std::mem::discriminant(&kind) != std::mem::discriminant(&self.kind) {
            return invalid("with_kind may only change the T3 parameter");
        }
        if let TKind::T3 { lambda } = kind {
            if lambda.norm() == 0.0 {
                return invalid("T3 needs a nonzero spectral parameter");
            }
        }
        Ok(Self {
            kind,
            gamma0: self.gamma0,
            delta: self.delta,
            factorization: self.factorization.clone(),
            nodal: self.nodal.clone(),
            dofmap: self.dofmap.clone(),
            gram: self.gram.clone(),
        })
    }

    /// Load moments `(field 1, field 2)` of the right-hand side generated by `f`.
    pub fn rhs_moments(&self, f: &FieldPair) -> (Vec<C64>, Vec<C64>) {
        let n = &*self.nodal;
        let s2f2 = n.mass_sigma2.mul_vec(&f.u2);
        match self.kind {
            TKind::T3 { lambda } => {
                let diff: Vec<C64> = f.u1.iter().zip(&f.u2).map(|(a, b)| a - b).collect();
                let s1d = n.mass_sigma1.mul_vec(&diff);
                let k1 = n.stiffness1.mul_vec(&f.u2);
                let k2 = n.stiffness2.mul_vec(&f.u2);
                let li = 1.0 / lambda;
                let m1 = (0..f.len()).map(|v| -(s1d[v] + s2f2[v]) + li * (k1[v] - k2[v])).collect();
                (m1, s2f2)
            }
            _ => {
                let s1f1 = n.mass_sigma1.mul_vec(&f.u1);
                (s1f1.into_iter().map(|z| -z).collect(), s2f2)
            }
        }
    }

    pub fn apply_t(&self, f: &FieldPair) -> Result<FieldPair> {
        if f.len() != self.dofmap.n_vertices {
            return invalid("field pair does not live on the operator's mesh");
        }
        let (m1, m2) = self.rhs_moments(f);
        let b = self.dofmap.scatter(&m1, &m2);
        let x = self.factorization.solve_vec(&b)?;
        let (u1, u2) = self.dofmap.unpack(&x);
        Ok(FieldPair::new(u1, u2))
    }

    pub fn pair(&self, x: &[C64]) -> FieldPair {
        let (u1, u2) = self.dofmap.unpack(x);
        FieldPair::new(u1, u2)
    }
}

pub fn apply_t(op: &OperatorT, f: &FieldPair) -> Result<FieldPair> {
    op.apply_t(f)
}

impl KrylovOp for OperatorT {
    fn dim(&self) -> usize {
        self.dofmap.total
    }

    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        let (u1, u2) = self.dofmap.unpack(x);
        let y = self.apply_t(&FieldPair::new(u1, u2))?;
        Ok(self.dofmap.pack(&y.u1, &y.u2))
    }

    fn inner(&self, x: &[C64], y: &[C64]) -> C64 {
        self.gram.form(y, x)
    }
}

#[derive(Clone, Debug)]
pub struct ArnoldiOutput {
    pub values: Vec<C64>,
    pub vectors: Vec<Vec<C64>>,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub restarts: usize,
}

fn dense_eig(h: &Mat<C64>) -> Result<(Vec<C64>, Mat<C64>)> {
    let e = h.eigen().map_err(|e| Error::NonConvergence(format!("dense eigensolver failed: {e:?}")))?;
    let s = e.S().column_vector();
    let vals = (0..h.nrows()).map(|i| s[i]).collect();
    Ok((vals, e.U().to_owned()))
}

fn order_by_modulus(vals: &[C64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| {
        vals[b]
            .norm()
            .total_cmp(&vals[a].norm())
            .then(vals[b].re.total_cmp(&vals[a].re))
            .then(vals[b].im.total_cmp(&vals[a].im))
    });
    idx
}

fn combine_basis(v: &[Vec<C64>], coef: impl Fn(usize) -> C64, n: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n];
    for (r, vr) in v.iter().enumerate() {
        let c = coef(r);
        if c != C64::new(0.0, 0.0) {
            for (o, x) in out.iter_mut().zip(vr) {
                *o += c * x;
            }
        }
    }
    out
}

/// Restarted Arnoldi (Krylov–Schur style) for the `k` largest-modulus eigenvalues.
pub fn arnoldi(op: &dyn KrylovOp, k: usize, tol: f64, max_iter: usize, seed: u64) -> Result<ArnoldiOutput> {
    let n = op.dim();
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if k > n {
        return invalid(format!("k = {k} exceeds the dimension {n}"));
    }
    let mmax = (2 * k + 10).max(k + 15).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v0: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let nv0 = op.norm(&v0);
    if nv0 == 0.0 {
        return invalid("start vector has zero norm in the operator inner product");
    }
    v0.iter_mut().for_each(|z| *z /= nv0);
    let mut basis = vec![v0];
    let mut g = Mat::<C64>::zeros(mmax + 1, mmax);
    let mut restarts = 0;
    loop {
        let mut m = mmax;
        let mut breakdown = false;
        let start = basis.len() - 1;
        for j in start..mmax {
            let mut w = op.apply(&basis[j])?;
            let scale = op.norm(&w);
            for _ in 0..2 {
                for i in 0..=j {
                    let h = op.inner(&basis[i], &w);
                    g[(i, j)] += h;
                    for (a, b) in w.iter_mut().zip(&basis[i]) {
                        *a -= h * b;
                    }
                }
            }
            let beta = op.norm(&w);
            if !(beta > 1e-14 * scale) || beta < 1e-300 {
                m = j + 1;
                breakdown = true;
                break;
            }
            g[(j + 1, j)] = C64::new(beta, 0.0);
            w.iter_mut().for_each(|z| *z /= beta);
            basis.push(w);
        }
        let h = Mat::<C64>::from_fn(m, m, |i, j| g[(i, j)]);
        let (vals, y) = dense_eig(&h)?;
        let brow: Vec<C64> = (0..m).map(|c| if breakdown { C64::new(0.0, 0.0) } else { g[(m, c)] }).collect();
        let ritz_res = |i: usize| {
            let mut s = C64::new(0.0, 0.0);
            let mut nrm = 0.0;
            for c in 0..m {
                s += brow[c] * y[(c, i)];
                nrm += y[(c, i)].norm_sqr();
            }
            s.norm() / nrm.sqrt()
        };
        let order = order_by_modulus(&vals);
        let kk = k.min(m);
        let done = breakdown || m <= k || order[..kk].iter().all(|&i| ritz_res(i) <= tol);
        if done || restarts >= max_iter {
            let mut values = Vec::with_capacity(kk);
            let mut vectors = Vec::with_capacity(kk);
            let mut residuals = Vec::with_capacity(kk);
            for &i in &order[..kk] {
                let mut x = combine_basis(&basis[..m], |r| y[(r, i)], n);
                let nx = op.norm(&x);
                x.iter_mut().for_each(|z| *z /= nx);
                let tx = op.apply(&x)?;
                let r: Vec<C64> = tx.iter().zip(&x).map(|(a, b)| a - vals[i] * b).collect();
                values.push(vals[i]);
                residuals.push(op.norm(&r));
                vectors.push(x);
            }
            let converged = residuals.iter().all(|&r| r <= tol);
            return Ok(ArnoldiOutput { values, vectors, residuals, converged, restarts });
        }
        restarts += 1;
        // Keep an orthonormal basis of the wanted Ritz vectors plus a buffer.
        let p = (k + (m - k) / 2).clamp(k, m - 1);
        let mut q: Vec<Vec<C64>> = Vec::with_capacity(p);
        for &i in &order[..p] {
            let mut col: Vec<C64> = (0..m).map(|r| y[(r, i)]).collect();
            for _ in 0..2 {
                for qc in &q {
                    let d: C64 = qc.iter().zip(&col).map(|(a, b)| a.conj() * b).sum();
                    for (a, b) in col.iter_mut().zip(qc) {
                        *a -= d * b;
                    }
                }
            }
            let nc = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if nc < 1e-12 {
                continue;
            }
            col.iter_mut().for_each(|z| *z /= nc);
            q.push(col);
        }
        let p = q.len();
        let residual_vec = basis[m].clone();
        let mut new_basis: Vec<Vec<C64>> = (0..p).map(|c| combine_basis(&basis[..m], |r| q[c][r], n)).collect();
        new_basis.push(residual_vec);
        let mut g_new = Mat::<C64>::zeros(mmax + 1, mmax);
        for a in 0..p {
            for b in 0..p {
                let mut s = C64::new(0.0, 0.0);
                for r in 0..m {
                    if q[a][r] == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut hq = C64::new(0.0, 0.0);
                    for c in 0..m {
                        hq += h[(r, c)] * q[b][c];
                    }
                    s += q[a][r].conj() * hq;
                }
                g_new[(a, b)] = s;
            }
            let mut bq = C64::new(0.0, 0.0);
            for c in 0..m {
                bq += brow[c] * q[a][c];
            }
            g_new[(p, a)] = bq;
        }
        basis = new_basis;
        g = g_new;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralResult {
    pub operator: &'static str,
    pub gamma0: C64,
    pub delta: f64,
    pub mu: Vec<C64>,
    pub lambda_ite: Vec<C64>,
    pub residuals: Vec<f64>,
    pub h_max: f64,
    pub k_requested: usize,
    pub converged: bool,
    pub restarts: usize,
    #[serde(skip)]
    pub vectors: Vec<FieldPair>,
}

impl SpectralResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("re_mu,im_mu,re_lambda,im_lambda,residual\n");
        for i in 0..self.mu.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                fmt_g17(self.mu[i].re),
                fmt_g17(self.mu[i].im),
                fmt_g17(self.lambda_ite[i].re),
                fmt_g17(self.lambda_ite[i].im),
                fmt_g17(self.residuals[i])
            );
        }
        s
    }
}

/// Largest-modulus eigenvalues of `T` and the eigenvalues `γ₀ + 1/μ` they encode.
pub fn arnoldi_eigs(op: &OperatorT, h_max: f64, k: usize, tol: f64, max_iter: usize) -> Result<SpectralResult> {
    arnoldi_eigs_seeded(op, h_max, k, tol, max_iter, DEFAULT_SEED)
}

pub fn arnoldi_eigs_seeded(op: &OperatorT, h_max: f64, k: usize, tol: f64, max_iter: usize, seed: u64) -> Result<SpectralResult> {
    if 4 * k > op.dim() {
        return invalid(format!("k = {k} exceeds a quarter of the {} unknowns", op.dim()));
    }
    let out = arnoldi(op, k, tol, max_iter, seed)?;
    let lambda_ite = out.values.iter().map(|&mu| op.gamma0 + 1.0 / mu).collect();
    Ok(SpectralResult {
        operator: op.kind.name(),
        gamma0: op.gamma0,
        delta: op.delta,
        mu: out.values,
        lambda_ite,
        residuals: out.residuals,
        h_max,
        k_requested: k,
        converged: out.converged,
        restarts: out.restarts,
        vectors: out.vectors.iter().map(|x| op.pair(x)).collect(),
    })
}

/// `λ = γ₀ + 1/μ` sorted by modulus; zero entries carry no eigenvalue and are dropped.
pub fn recover_ite(mu: &[C64], gamma0: C64) -> (Vec<C64>, usize) {
    let mut dropped = 0;
    let mut out: Vec<C64> = mu
        .iter()
        .filter_map(|&m| {
            if m.norm() == 0.0 {
                dropped += 1;
                None
            } else {
                Some(gamma0 + 1.0 / m)
            }
        })
        .collect();
    out.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.re.total_cmp(&b.re)).then(a.im.total_cmp(&b.im)));
    (out, dropped)
}

/// Recovered eigenvalues that are real within `rel_tol`, sorted by modulus.
pub fn real_eigenvalues(lambda: &[C64], rel_tol: f64) -> Vec<f64> {
    let mut r: Vec<f64> = lambda.iter().filter(|l| l.im.abs() <= rel_tol * l.norm()).map(|l| l.re).collect();
    r.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    r
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPoint {
    pub lambda: C64,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<C64>,
}

/// Iterates `λ ← λ₀ + 1/μ₁(T₃,λ)` on a prepared T3 operator.
pub fn t3_fixed_point(op: &OperatorT, h_max: f64, lambda_init: C64, tol: f64, max_outer: usize, k: usize, arnoldi_tol: f64) -> Result<FixedPoint> {
    if !matches!(op.kind, TKind::T3 { .. }) {
        return invalid("t3_fixed_point needs a T3 operator");
    }
    if (lambda_init - op.gamma0).norm() <= 1e-14 * op.gamma0.norm() {
        return invalid("lambda_init must differ from the shift");
    }
    let mut history = vec![lambda_init];
    let mut current = lambda_init;
    let mut updates = 0;
    let mut prev: Option<C64> = None;
    for _ in 0..max_outer {
        let t = op.with_kind(TKind::T3 { lambda: current })?;
        let res = arnoldi_eigs(&t, h_max, k, arnoldi_tol, 200)?;
        let mu1 = res.mu[0];
        let next = op.gamma0 + 1.0 / mu1;
        history.push(next);
        if (next - current).norm() <= tol * current.norm() {
            return Ok(FixedPoint { lambda: next, converged: true, iterations: updates.max(1), history });
        }
        if let Some(p) = prev {
            if (next - p).norm() <= tol * next.norm() {
                return Err(Error::NonConvergence(format!("period-2 cycle between {p} and {current}")));
            }
        }
        updates += 1;
        prev = Some(current);
        current = next;
    }
    Ok(FixedPoint { lambda: current, converged: false, iterations: updates, history })
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscretenessRow {
    pub n: usize,
    pub h_max: f64,
    pub dofs: usize,
    /// `None` when the shifted system is singular: every Ritz value is unbounded.
    pub count: Option<usize>,
    pub saturated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscretenessTable {
    pub eps: f64,
    pub rows: Vec<DiscretenessRow>,
    pub deltas: Vec<Option<i64>>,
}

impl DiscretenessTable {
    pub fn stable_within(&self, tol: i64) -> bool {
        self.deltas.iter().all(|d| matches!(d, Some(x) if x.abs() <= tol))
    }

    /// Singular systems or counts growing by more than `tol` per refinement.
    pub fn explodes(&self, tol: i64) -> bool {
        self.rows.iter().any(|r| r.count.is_none() || r.saturated) || self.deltas.iter().any(|d| matches!(d, Some(x) if *x > tol))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DiscretenessParams {
    pub kind: TKind,
    pub gamma0: C64,
    pub delta: f64,
    pub k: usize,
    pub tol: f64,
}

/// Counts Ritz values with `|μ| ≥ eps` on successively finer meshes.
pub fn discreteness_diagnostic(cs: &CoefficientSet, dom: &Domain, resolutions: &[usize], eps: f64, p: DiscretenessParams) -> Result<DiscretenessTable> {
    if resolutions.len() < 2 {
        return invalid("need at least two resolutions");
    }
    let mut rows = Vec::new();
    for &n in resolutions {
        let m = build_mesh(dom, n)?;
        let dm = crate::assembly::build_dofmap(&m);
        let row = match OperatorT::build(&m, &dm, cs, p.kind, p.gamma0, p.delta) {
            Err(Error::Singular { .. }) => DiscretenessRow { n, h_max: m.h_max, dofs: dm.total, count: None, saturated: false },
            Err(e) => return Err(e),
            Ok(op) => {
                let k = p.k.min(dm.total / 4).max(1);
                let res = arnoldi_eigs(&op, m.h_max, k, p.tol, 300)?;
                let count = res.mu.iter().filter(|mu| mu.norm() >= eps).count();
                DiscretenessRow { n, h_max: m.h_max, dofs: dm.total, count: Some(count), saturated: count == k }
            }
        };
        rows.push(row);
    }
    let deltas = rows
        .windows(2)
        .map(|w| match (w[0].count, w[1].count) {
            (Some(a), Some(b)) => Some(b as i64 - a as i64),
            _ => None,
        })
        .collect();
    Ok(DiscretenessTable { eps, rows, deltas })
}
