//! Weighted norms, energy identities, decay and multiplier checks, Hardy ratio.

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::assembly::{assemble_nodal, assemble_rhs, form_coefficients, BlockSystem, SourceData, Variant};
use crate::error::{invalid, Error, Result};
use crate::geometry::{CoefficientSet, MatrixField, Point, ScalarField};
use crate::mesh::Mesh;
use crate::solver::{factorize_matrix, FieldPair};
use crate::sparse::{Csr, norm2};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind {
    HOmega,
    Hhat1,
    Hhat0,
    L2DGamma(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedNorms {
    pub which: NormKind,
    pub tau: f64,
    pub beta1: f64,
}

impl WeightedNorms {
    pub fn new(which: NormKind, tau: f64, beta1: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return invalid("tau must be positive");
        }
        if !(beta1 > 0.0 && beta1 < 2.0) {
            return invalid("beta1 must lie in (0, 2)");
        }
        Ok(Self { which, tau, beta1 })
    }
}

/// Quadrature nodes of a triangle: `(point, weight, barycentric coordinates)`.
pub(crate) fn quad_nodes(m: &Mesh, t: usize, singular: bool) -> Vec<(Point, f64, [f64; 3])> {
    let area = m.area(t);
    if singular && m.touches_boundary(t) {
        return vec![(m.barycenter(t), area, [1.0 / 3.0; 3])];
    }
    let q = m.midpoints(t);
    vec![
        (q[0], area / 3.0, [0.5, 0.5, 0.0]),
        (q[1], area / 3.0, [0.0, 0.5, 0.5]),
        (q[2], area / 3.0, [0.5, 0.0, 0.5]),
    ]
}

fn interp(u: &[C64], tri: &[usize; 3], bary: &[f64; 3]) -> C64 {
    u[tri[0]] * bary[0] + u[tri[1]] * bary[1] + u[tri[2]] * bary[2]
}

pub(crate) fn grad(m: &Mesh, t: usize, u: &[C64]) -> [C64; 2] {
    let g = m.gradients(t);
    let tri = m.triangles[t];
    let mut out = [C64::new(0.0, 0.0); 2];
    for k in 0..3 {
        out[0] += u[tri[k]] * g[k].x;
        out[1] += u[tri[k]] * g[k].y;
    }
    out
}

fn gnorm2(g: &[C64; 2]) -> f64 {
    g[0].norm_sqr() + g[1].norm_sqr()
}

fn dist(m: &Mesh, p: &Point) -> f64 {
    m.domain.dist_to_boundary(p)
}

/// `∫ d_Γ^s |u|²` for a nodal scalar.
pub fn weighted_l2_sq(m: &Mesh, u: &[C64], s: f64) -> f64 {
    let mut acc = 0.0;
    for t in 0..m.triangles.len() {
        for (p, w, b) in quad_nodes(m, t, s < 0.0) {
            let d = dist(m, &p);
            let wt = if s == 0.0 { 1.0 } else { d.powf(s) };
            acc += w * wt * interp(u, &m.triangles[t], &b).norm_sqr();
        }
    }
    acc
}

/// Norm of a nodal pair in the selected weighted space.
pub fn weighted_norm(m: &Mesh, cs: &CoefficientSet, v: &FieldPair, spec: &WeightedNorms) -> Result<f64> {
    if v.len() != m.n_vertices() {
        return invalid("field pair does not live on this mesh");
    }
    let tau = spec.tau;
    let b1 = spec.beta1;
    let mut acc = 0.0;
    for t in 0..m.triangles.len() {
        let tri = m.triangles[t];
        let gw = grad(m, t, &v.w);
        let g1 = grad(m, t, &v.u1);
        let g2 = grad(m, t, &v.u2);
        let singular = matches!(spec.which, NormKind::Hhat0) || matches!(spec.which, NormKind::L2DGamma(s) if s < 0.0);
        for (p, w, b) in quad_nodes(m, t, singular) {
            let d = dist(m, &p);
            let in_band = d < tau;
            let u1 = interp(&v.u1, &tri, &b);
            let u2 = interp(&v.u2, &tri, &b);
            let uu = u1.norm_sqr() + u2.norm_sqr();
            let val = match spec.which {
                NormKind::HOmega => {
                    let mut s = gnorm2(&gw) + uu;
                    if in_band {
                        let c = cs.values(&p);
                        let da = c.a1 - c.a2;
                        for g in [&g1, &g2] {
                            let re = nalgebra::Vector2::new(g[0].re, g[1].re);
                            let im = nalgebra::Vector2::new(g[0].im, g[1].im);
                            s += re.dot(&(da * re)) + im.dot(&(da * im));
                        }
                    } else {
                        s += gnorm2(&g1) + gnorm2(&g2);
                    }
                    s
                }
                NormKind::Hhat1 => {
                    let mut s = gnorm2(&gw) + d.powf(b1 + 2.0) * gnorm2(&g2);
                    if in_band {
                        let c = cs.values(&p);
                        s += (c.s1 - c.s2) * uu;
                    } else {
                        s += uu;
                    }
                    s
                }
                NormKind::Hhat0 => {
                    let mut s = d.powf(-b1) * (u1 - u2).norm_sqr() + d.powf(b1) * uu;
                    if !in_band {
                        s += gnorm2(&g2);
                    }
                    s
                }
                NormKind::L2DGamma(sw) => {
                    let wt = if sw == 0.0 { 1.0 } else { d.powf(sw) };
                    wt * uu
                }
            };
            acc += w * val;
        }
    }
    if !acc.is_finite() {
        return Err(Error::Validation("weighted norm overflowed".into()));
    }
    Ok(acc.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum IdentityKind {
    #[serde(rename = "real_shift")]
    RealShift,
    #[serde(rename = "imag_shift")]
    ImagShift,
    #[serde(rename = "divG")]
    DivG,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IdentityResiduals {
    pub r1: f64,
    pub r2: f64,
    pub m_value: f64,
    pub n_value: f64,
    pub variant: IdentityKind,
}

fn rel(lhs: C64, rhs: C64, terms: &[C64]) -> f64 {
    let scale = terms.iter().map(|z| z.norm()).fold(lhs.norm().max(rhs.norm()), f64::max);
    if scale <= 1e-300 {
        0.0
    } else {
        (lhs - rhs).norm() / scale
    }
}

/// L² and H¹ norms of the boundary trace, exact for piecewise-linear data.
fn boundary_norms(m: &Mesh, u: &[C64]) -> (f64, f64) {
    let mut l2 = 0.0;
    let mut semi = 0.0;
    for e in &m.boundary_edges {
        let len = (m.vertices[e.i] - m.vertices[e.j]).norm();
        let (a, b) = (u[e.i], u[e.j]);
        l2 += len / 3.0 * (a.norm_sqr() + b.norm_sqr() + (a * b.conj()).re);
        semi += (b - a).norm_sqr() / len;
    }
    (l2.sqrt(), (l2 + semi).sqrt())
}

/// Interpolation norm `‖u‖_{L²(Γ)}^{1/2} ‖u‖_{H¹(Γ)}^{1/2}`.
pub fn boundary_half_norm(m: &Mesh, u: &[C64]) -> f64 {
    let (l2, h1) = boundary_norms(m, u);
    (l2 * h1).sqrt()
}

/// Dual of the interpolation norm, `‖h‖_{L²}^{3/2} / ‖h‖_{H¹}^{1/2}`; exact on single Fourier modes.
pub fn boundary_minus_half_norm(m: &Mesh, h: &[C64]) -> f64 {
    let (l2, h1) = boundary_norms(m, h);
    if h1 == 0.0 {
        0.0
    } else {
        l2 * (l2 / h1).sqrt()
    }
}

fn l2(mass: &Csr<f64>, u: &[C64]) -> f64 {
    mass.form(u, u).re.max(0.0).sqrt()
}

/// `M(v, g, h) = ‖v‖‖g‖ + ‖h‖_{H^{-1/2}(Γ)} ‖v‖_{H^{1/2}(Γ)}`.
pub fn m_functional(m: &Mesh, mass: &Csr<f64>, v: &FieldPair, data: &SourceData) -> f64 {
    let nv = (l2(mass, &v.u1).powi(2) + l2(mass, &v.u2).powi(2)).sqrt();
    let ng = (l2(mass, &data.g1).powi(2) + l2(mass, &data.g2).powi(2)).sqrt();
    let hb = data.h.as_ref().map_or(0.0, |h| boundary_minus_half_norm(m, h) * boundary_half_norm(m, &v.u2));
    nv * ng + hb
}

/// `N(v, g, G₁) = ∫ |g||w| + |g₁ − g₂||v| + |G₁||∇v₂|`.
pub fn n_functional(m: &Mesh, v: &FieldPair, data: &SourceData) -> f64 {
    let mut acc = 0.0;
    for t in 0..m.triangles.len() {
        let tri = m.triangles[t];
        let gv2 = gnorm2(&grad(m, t, &v.u2)).sqrt();
        let gg = data.big_g1.as_ref().map_or(0.0, |g| gnorm2(&g[t]).sqrt());
        for (_, w, b) in quad_nodes(m, t, false) {
            let g1 = interp(&data.g1, &tri, &b);
            let g2 = interp(&data.g2, &tri, &b);
            let u1 = interp(&v.u1, &tri, &b);
            let u2 = interp(&v.u2, &tri, &b);
            let gabs = (g1.norm_sqr() + g2.norm_sqr()).sqrt();
            let vabs = (u1.norm_sqr() + u2.norm_sqr()).sqrt();
            acc += w * (gabs * (u1 - u2).norm() + (g1 - g2).norm() * vabs + gg * gv2);
        }
    }
    acc
}

/// Residuals of the two energy identities obtained by testing the Galerkin equations with
/// `(w, w)`, `(0, w)` and `(v₂, v₂)`. The regularization is moved to the load side, so the
/// identities hold for every δ up to the solver residual.
pub fn energy_identity_residuals(m: &Mesh, sys: &BlockSystem, v: &FieldPair, data: &SourceData) -> Result<IdentityResiduals> {
    let dm = &sys.dofmap;
    if v.len() != m.n_vertices() || dm.n_vertices != m.n_vertices() || sys.mass_blocks.mass.n_rows != m.n_vertices() {
        return invalid("field pair, system and mesh disagree");
    }
    if dm.boundary_vertices.iter().any(|&b| v.w[b].norm() > 1e-12 * (1.0 + v.u1[b].norm())) {
        return invalid("w = u1 - u2 does not vanish on the boundary");
    }
    let kind = if data.big_g1.is_some() {
        IdentityKind::DivG
    } else if sys.variant.real_shift() {
        IdentityKind::RealShift
    } else {
        IdentityKind::ImagShift
    };
    let nm = &*sys.mass_blocks;
    let fc = sys.coefficients;
    let f0 = form_coefficients(sys.variant, sys.gamma0, 0.0)?;
    let gamma = f0.sigma1;
    let b = assemble_rhs(m, dm, sys, data)?;
    let zero = vec![C64::new(0.0, 0.0); m.n_vertices()];
    let (v1, v2, w) = (&v.u1[..], &v.u2[..], &v.w[..]);
    let reg = |p1: &[C64], p2: &[C64]| {
        (fc.grad1 - f0.grad1) * nm.stiffness1.form(v1, p1)
            + (fc.sigma1 - f0.sigma1) * nm.mass_sigma1.form(v1, p1)
            + (fc.mass1 - f0.mass1) * nm.mass.form(v1, p1)
            - (fc.grad2 - f0.grad2) * nm.stiffness2.form(v2, p2)
            - (fc.sigma2 - f0.sigma2) * nm.mass_sigma2.form(v2, p2)
            - (fc.mass2 - f0.mass2) * nm.mass.form(v2, p2)
    };
    let ell = |p1: &[C64], p2: &[C64]| {
        let phi = dm.pack(p1, p2);
        let bp: C64 = phi.iter().zip(&b).map(|(p, q)| p.conj() * q).sum();
        bp - reg(p1, p2)
    };
    let s1 = |x: &[C64], y: &[C64]| nm.stiffness1.form(x, y);
    let s2 = |x: &[C64], y: &[C64]| nm.stiffness2.form(x, y);
    let ms1 = |x: &[C64], y: &[C64]| nm.mass_sigma1.form(x, y);
    let ms2 = |x: &[C64], y: &[C64]| nm.mass_sigma2.form(x, y);

    let l_ww = ell(w, w);
    let t = [s1(w, w), gamma * ms1(w, w), l_ww, s2(v2, w), s1(v2, w), gamma * ms2(v2, w), gamma * ms1(v2, w)];
    let lhs1 = t[0] + t[1];
    let rhs1 = l_ww + (t[3] - t[4]) + (t[5] - t[6]);
    let r1 = rel(lhs1, rhs1, &t);

    let l_0w = ell(&zero, w);
    let l_vv = ell(v2, v2).conj();
    let u = [
        s1(v2, w),
        s2(v2, w),
        s1(v2, v2),
        s2(v2, v2),
        gamma.conj() * ms1(v2, v2),
        gamma.conj() * ms2(v2, v2),
        l_0w,
        l_vv,
        gamma * ms2(v2, w),
        gamma.conj() * ms1(v2, w),
    ];
    let lhs2 = (u[0] - u[1]) + (u[2] - u[3]) + (u[4] - u[5]);
    let rhs2 = l_0w + l_vv + u[8] - u[9];
    let r2 = rel(lhs2, rhs2, &u);
    Ok(IdentityResiduals {
        r1,
        r2,
        m_value: m_functional(m, &nm.mass, v, data),
        n_value: n_functional(m, v, data),
        variant: kind,
    })
}

/// Single-field coefficient pair `(A, Σ)`.
#[derive(Clone, Debug)]
pub struct SingleField {
    pub a: MatrixField,
    pub s: ScalarField,
}

impl SingleField {
    pub fn isotropic(a: f64, s: f64) -> Self {
        Self { a: MatrixField::scaled_identity(a), s: ScalarField::constant(s) }
    }

    fn as_set(&self) -> CoefficientSet {
        CoefficientSet::new(self.a.clone(), self.a.clone(), self.s.clone(), self.s.clone())
    }
}

/// Nodal operator `S + shift·MΣ` of `−div(A∇u) + shift Σ u` and the plain mass matrix.
fn single_field_matrices(m: &Mesh, sf: &SingleField, shift: C64) -> (Csr<C64>, Csr<f64>) {
    let nm = assemble_nodal(m, &sf.as_set());
    let mut k = nm.stiffness1.map(|v| C64::new(v, 0.0));
    for (o, s) in k.values.iter_mut().zip(&nm.mass_sigma1.values) {
        *o += shift * s;
    }
    (k, nm.mass)
}

/// Solves `div(A∇u) − shift Σ u = f` with Dirichlet data on Γ by eliminating boundary rows.
pub fn single_field_solve(m: &Mesh, sf: &SingleField, shift: C64, f: &[C64], dirichlet: &[C64]) -> Result<Vec<C64>> {
    let nv = m.n_vertices();
    if f.len() != nv || dirichlet.len() != nv {
        return invalid("nodal data length mismatch");
    }
    let (k, mass) = single_field_matrices(m, sf, shift);
    let interior: Vec<usize> = (0..nv).filter(|&v| !m.is_boundary[v]).collect();
    let mut index = vec![usize::MAX; nv];
    for (i, &v) in interior.iter().enumerate() {
        index[v] = i;
    }
    let mf = mass.mul_vec(f);
    let mut trip = Vec::new();
    let mut rhs = vec![C64::new(0.0, 0.0); interior.len()];
    for (i, &v) in interior.iter().enumerate() {
        rhs[i] = -mf[v];
        for (j, val) in k.row(v) {
            if m.is_boundary[j] {
                rhs[i] -= val * dirichlet[j];
            } else {
                trip.push((i, index[j], val));
            }
        }
    }
    let mut u: Vec<C64> = (0..nv).map(|v| if m.is_boundary[v] { dirichlet[v] } else { C64::new(0.0, 0.0) }).collect();
    if interior.is_empty() {
        return Ok(u);
    }
    let a = Csr::from_triplets(interior.len(), interior.len(), &trip);
    let x = factorize_matrix(&a)?.solve_vec(&rhs)?;
    for (i, &v) in interior.iter().enumerate() {
        u[v] = x[i];
    }
    Ok(u)
}

/// Relative interior residual of the discrete single-field equation.
pub fn single_field_residual(m: &Mesh, sf: &SingleField, shift: C64, u: &[C64], f: &[C64]) -> f64 {
    let (k, mass) = single_field_matrices(m, sf, shift);
    let ku = k.mul_vec(u);
    let mf = mass.mul_vec(f);
    let mut r = 0.0;
    let mut s = 0.0;
    for v in 0..m.n_vertices() {
        if !m.is_boundary[v] {
            r += (ku[v] + mf[v]).norm_sqr();
            s += ku[v].norm_sqr().max(mf[v].norm_sqr());
        }
    }
    if s == 0.0 {
        0.0
    } else {
        (r / s).sqrt()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub lambdas: Vec<f64>,
    pub ratios: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub r_squared: f64,
    pub underflow: bool,
    pub imaginary: bool,
}

/// Least-squares line `y = a + b x`; returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (a, b, r2)
}

/// `‖u‖_{H¹(Ω∖Ω_s)} / ‖u‖_{L²(Ω_s)}`.
pub fn interior_ratio(m: &Mesh, u: &[C64], s: f64) -> f64 {
    let mut inner = 0.0;
    let mut band = 0.0;
    for t in 0..m.triangles.len() {
        let g = gnorm2(&grad(m, t, u));
        for (p, w, b) in quad_nodes(m, t, false) {
            let val = interp(u, &m.triangles[t], &b).norm_sqr();
            if dist(m, &p) >= s {
                inner += w * (val + g);
            } else {
                band += w * val;
            }
        }
    }
    if band == 0.0 {
        return f64::INFINITY;
    }
    (inner / band).sqrt()
}

/// Fits `log ratio = log c₁ − c₂ √λ` for the boundary-driven single-field problem.
pub fn verify_decay(m: &Mesh, sf: &SingleField, lam_grid: &[f64], s: f64, imaginary: bool) -> Result<DecayReport> {
    if lam_grid.len() < 4 {
        return invalid("decay fit needs at least four lambda values");
    }
    let (lo, hi) = lam_grid.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &l| (a.min(l), b.max(l)));
    if !(lo > 0.0 && hi / lo >= 8.0 - 1e-9) {
        return invalid("lambda grid must span a factor of at least 8");
    }
    if !(s > 0.0 && s < m.domain.inradius()) {
        return invalid("band width s must lie in (0, inradius)");
    }
    let nv = m.n_vertices();
    let ones = vec![C64::new(1.0, 0.0); nv];
    let zero = vec![C64::new(0.0, 0.0); nv];
    let mut ratios = Vec::new();
    let mut underflow = false;
    for &lam in lam_grid {
        let shift = if imaginary { C64::new(0.0, lam) } else { C64::new(lam, 0.0) };
        let u = single_field_solve(m, sf, shift, &zero, &ones)?;
        let mut r = interior_ratio(m, &u, s);
        if !(r >= 1e-300) {
            r = 1e-300;
            underflow = true;
        }
        ratios.push(r);
    }
    let x: Vec<f64> = lam_grid.iter().map(|l| l.sqrt()).collect();
    let y: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    let (a, b, r2) = linear_fit(&x, &y);
    Ok(DecayReport { lambdas: lam_grid.to_vec(), ratios, c1: a.exp(), c2: -b, r_squared: r2, underflow, imaginary })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MultiplierReport {
    pub lhs1: f64,
    pub rhs1: f64,
    pub lhs2: f64,
    pub rhs2: f64,
}

/// Both sides of the two weighted multiplier inequalities (constants set to one).
pub fn verify_multiplier(m: &Mesh, sf: &SingleField, u: &[C64], f: &[C64], lam: f64, alpha: f64, imaginary: bool) -> Result<MultiplierReport> {
    if u.len() != m.n_vertices() || f.len() != m.n_vertices() {
        return invalid("nodal data length mismatch");
    }
    if alpha < 0.0 {
        return invalid("alpha must be nonnegative");
    }
    let shift = if imaginary { C64::new(0.0, lam) } else { C64::new(lam, 0.0) };
    let res = single_field_residual(m, sf, shift, u, f);
    if res > 1e-8 {
        return invalid(format!("u does not solve the equation (relative residual {res:.3e})"));
    }
    let mut r = MultiplierReport { lhs1: 0.0, rhs1: 0.0, lhs2: 0.0, rhs2: 0.0 };
    for t in 0..m.triangles.len() {
        let g = gnorm2(&grad(m, t, u));
        for (p, w, b) in quad_nodes(m, t, false) {
            let d = dist(m, &p);
            let da = if alpha == 0.0 { 1.0 } else { d.powf(alpha) };
            let da2 = d.powf(alpha + 2.0);
            let uu = interp(u, &m.triangles[t], &b).norm_sqr();
            r.lhs1 += w * lam * da2 * uu;
            r.rhs1 += w * da * g;
            r.lhs2 += w * da2 * g;
            r.rhs2 += w * lam * da * uu;
        }
    }
    let mass = assemble_nodal(m, &CoefficientSet::identity()).mass;
    let ff = mass.form(f, f).re.max(0.0);
    r.rhs1 += ff;
    r.rhs2 += ff;
    Ok(r)
}

/// `∫ d_Γ^{-2}|w|² / ∫ |∇w|²` for `w` vanishing on Γ.
pub fn hardy_ratio(m: &Mesh, w: &[C64]) -> Result<f64> {
    if w.len() != m.n_vertices() {
        return invalid("nodal data length mismatch");
    }
    let scale = norm2(w);
    if (0..m.n_vertices()).any(|v| m.is_boundary[v] && w[v].norm() > 1e-14 * scale.max(1e-300)) {
        return invalid("hardy_ratio needs w = 0 on the boundary");
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let num = weighted_l2_sq(m, w, -2.0);
    let den: f64 = (0..m.triangles.len()).map(|t| m.area(t) * gnorm2(&grad(m, t, w))).sum();
    Ok(num / den)
}

pub fn variant_identity_kind(v: Variant) -> IdentityKind {
    if v.real_shift() {
        IdentityKind::RealShift
    } else {
        IdentityKind::ImagShift
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_system, build_dofmap};
    use crate::geometry::{pt, Domain};
    use crate::mesh::build_mesh;
    use crate::solver::{factorize, solve};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn constant_pair_h_norm() {
        let m = build_mesh(&Domain::UnitSquare, 8).unwrap();
        let cs = CoefficientSet::contrast(2.0, 1.0, 1.0, 1.0);
        let v = FieldPair::new(vec![c(1.0); m.n_vertices()], vec![c(1.0); m.n_vertices()]);
        let spec = WeightedNorms::new(NormKind::HOmega, 0.2, 1.0).unwrap();
        let n = weighted_norm(&m, &cs, &v, &spec).unwrap();
        // Both components contribute their L² mass.
        assert!((n * n - 2.0).abs() < 1e-12);
    }

    #[test]
    fn s_zero_is_plain_l2() {
        let m = build_mesh(&Domain::UnitDisk, 4).unwrap();
        let u: Vec<C64> = m.vertices.iter().map(|p| C64::new(p.x, p.y * p.y)).collect();
        let mass = assemble_nodal(&m, &CoefficientSet::identity()).mass;
        let direct = mass.form(&u, &u).re;
        assert!((weighted_l2_sq(&m, &u, 0.0) - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn distance_weighted_disk_integral() {
        let m = build_mesh(&Domain::UnitDisk, 16).unwrap();
        let u = vec![c(1.0); m.n_vertices()];
        let val = weighted_l2_sq(&m, &u, 1.0);
        assert!((val - std::f64::consts::PI / 3.0).abs() <= 2.0 * m.h_max);
    }

    #[test]
    fn zero_solution_has_zero_residuals() {
        let m = build_mesh(&Domain::UnitSquare, 4).unwrap();
        let dm = build_dofmap(&m);
        let cs = CoefficientSet::contrast(2.0, 1.0, 2.0, 1.0);
        let sys = assemble_system(&m, &dm, &cs, c(10.0), 0.1, Variant::Sys1RealShift).unwrap();
        let r = energy_identity_residuals(&m, &sys, &FieldPair::zeros(m.n_vertices()), &SourceData::zero(m.n_vertices())).unwrap();
        assert_eq!((r.r1, r.r2, r.m_value, r.n_value), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn identities_hold_on_a_solve_and_fail_on_noise() {
        let m = build_mesh(&Domain::UnitSquare, 8).unwrap();
        let dm = build_dofmap(&m);
        let cs = CoefficientSet::contrast(2.0, 1.0, 2.0, 1.0);
        let sys = assemble_system(&m, &dm, &cs, c(100.0), 0.01, Variant::Sys1RealShift).unwrap();
        let mut data = SourceData::from_fns(&m, |p| c(p.x + 1.0), |p| C64::new(p.y, 0.5));
        data.h = Some(m.vertices.iter().map(|p| c((3.0 * p.x).cos())).collect());
        let f = factorize(&sys).unwrap();
        let v = solve(&f, &assemble_rhs(&m, &dm, &sys, &data).unwrap()).unwrap();
        let r = energy_identity_residuals(&m, &sys, &v, &data).unwrap();
        assert!(r.r1 <= 1e-8 && r.r2 <= 1e-8, "{r:?}");
        assert!(r.m_value > 0.0 && r.n_value > 0.0);
        let x: Vec<C64> = (0..dm.total).map(|i| C64::new((i as f64 * 1.3).sin(), (i as f64 * 0.4).cos())).collect();
        let (u1, u2) = dm.unpack(&x);
        let r = energy_identity_residuals(&m, &sys, &FieldPair::new(u1, u2), &data).unwrap();
        assert!(r.r1 >= 1e-3 && r.r2 >= 1e-3, "{r:?}");
    }

    #[test]
    fn hardy_ratio_of_sine_and_scaling() {
        let m = build_mesh(&Domain::UnitSquare, 32).unwrap();
        let pi = std::f64::consts::PI;
        let w: Vec<C64> = m.vertices.iter().map(|p| c((pi * p.x).sin() * (pi * p.y).sin())).collect();
        let r = hardy_ratio(&m, &w).unwrap();
        assert!(r > 0.0 && r <= 10.0);
        let w3: Vec<C64> = w.iter().map(|z| z * C64::new(-3.0, 2.0)).collect();
        assert!((hardy_ratio(&m, &w3).unwrap() - r).abs() < 1e-12 * r);
        assert_eq!(hardy_ratio(&m, &vec![c(0.0); m.n_vertices()]).unwrap(), 0.0);
    }

    #[test]
    fn hardy_ratio_agrees_with_weighted_norm_for_a_bump() {
        let m = build_mesh(&Domain::UnitSquare, 16).unwrap();
        let w: Vec<C64> = m
            .vertices
            .iter()
            .map(|p| {
                let r2 = (p - pt(0.5, 0.5)).norm_squared();
                c(if r2 < 0.09 { (0.09 - r2).powi(2) } else { 0.0 })
            })
            .collect();
        let spec = WeightedNorms { which: NormKind::L2DGamma(-2.0), tau: 0.1, beta1: 1.0 };
        let half = FieldPair::new(w.clone(), vec![c(0.0); m.n_vertices()]);
        let num = weighted_norm(&m, &CoefficientSet::identity(), &half, &spec).unwrap().powi(2);
        let den: f64 = (0..m.triangles.len()).map(|t| m.area(t) * gnorm2(&grad(&m, t, &w))).sum();
        assert!((hardy_ratio(&m, &w).unwrap() - num / den).abs() < 1e-12 * (num / den));
    }

    #[test]
    fn multiplier_zero_case() {
        let m = build_mesh(&Domain::UnitSquare, 4).unwrap();
        let z = vec![c(0.0); m.n_vertices()];
        let r = verify_multiplier(&m, &SingleField::isotropic(1.0, 1.0), &z, &z, 100.0, 1.0, false).unwrap();
        assert_eq!(r, MultiplierReport { lhs1: 0.0, rhs1: 0.0, lhs2: 0.0, rhs2: 0.0 });
    }

    #[test]
    fn multiplier_rejects_non_solution() {
        let m = build_mesh(&Domain::UnitSquare, 4).unwrap();
        let u: Vec<C64> = m.vertices.iter().map(|p| c(p.x)).collect();
        let z = vec![c(0.0); m.n_vertices()];
        assert!(verify_multiplier(&m, &SingleField::isotropic(1.0, 1.0), &u, &z, 100.0, 1.0, false).is_err());
    }

    #[test]
    fn decay_ratio_grows_as_band_shrinks() {
        let m = build_mesh(&Domain::UnitSquare, 32).unwrap();
        let nv = m.n_vertices();
        let u = single_field_solve(&m, &SingleField::isotropic(1.0, 1.0), c(200.0), &vec![c(0.0); nv], &vec![c(1.0); nv]).unwrap();
        let r: Vec<f64> = [0.3, 0.2, 0.1, 0.05].iter().map(|&s| interior_ratio(&m, &u, s)).collect();
        assert!(r.windows(2).all(|p| p[1] > p[0]), "{r:?}");
    }

    #[test]
    fn linear_fit_exact_line() {
        let (a, b, r2) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((a - 1.0).abs() < 1e-14 && (b - 2.0).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
    }
}
