//! Exact Fourier-mode solution of the constant-coefficient half-space transmission problem.
//!
//! The lateral variable lives on a periodic lattice, so the Fourier transform becomes a DFT.
//! Only the reduced problem with a jump `v₁ − v₂ = φ` and zero flux jump is solved.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::assembly::{assemble_system, build_dofmap_aliased, Variant};
use crate::conditions::check_complementing;
use crate::diagnostics::linear_fit;
use crate::error::{invalid, Error, Result};
use crate::geometry::{pt, CoefficientSet, Domain, Point};
use crate::mesh::{fmt_g17, BoundaryEdge, Mesh};
use crate::solver::factorize;

#[derive(Clone, Debug)]
pub struct HalfSpaceProblem {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub s1: f64,
    pub s2: f64,
    pub lam: f64,
    /// Samples of `φ` on the lattice, row-major for `d = 3`.
    pub phi: Vec<C64>,
    pub lattice_n: usize,
    pub period: f64,
    /// Truncation depth; `None` picks one from the slowest decay rate.
    pub depth: Option<f64>,
    pub nt: usize,
}

fn is_spd(a: &DMatrix<f64>) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= 1e-12 * a.amax().max(1.0) && a.clone().symmetric_eigenvalues().min() > 0.0
}

impl HalfSpaceProblem {
    pub fn dim(&self) -> usize {
        self.a1.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if !(d == 2 || d == 3) || self.a2.nrows() != d {
            return invalid("half-space problems are supported for d = 2 and d = 3");
        }
        if !is_spd(&self.a1) || !is_spd(&self.a2) {
            return invalid("A1 and A2 must be symmetric positive definite");
        }
        if !(self.s1 > 0.0 && self.s2 > 0.0) {
            return invalid("Sigma values must be positive");
        }
        if !(self.lam >= 1.0) {
            return invalid("lambda must be at least 1");
        }
        if !self.lattice_n.is_power_of_two() {
            return invalid("lattice size must be a power of two");
        }
        if self.phi.len() != self.lattice_n.pow(d as u32 - 1) {
            return invalid("phi must be sampled on the full lattice");
        }
        if !(self.period > 0.0) {
            return invalid("lattice period must be positive");
        }
        Ok(())
    }

    /// Complementing condition at `e_d` and the scalar contrast `a₁Σ₁ ≠ a₂Σ₂`.
    pub fn conditions_hold(&self) -> Result<(bool, bool)> {
        let d = self.dim();
        let e = DVector::from_fn(d, |i, _| if i == d - 1 { 1.0 } else { 0.0 });
        let c2 = check_complementing(&self.a1, &self.a2, &e)?.holds;
        let c3 = (self.a1[(d - 1, d - 1)] * self.s1 - self.a2[(d - 1, d - 1)] * self.s2).abs() > 1e-10;
        Ok((c2, c3))
    }

    pub fn with_lambda(&self, lam: f64) -> Self {
        Self { lam, ..self.clone() }
    }

    /// Lateral frequency of lattice bin `k`.
    pub fn frequency(&self, k: usize) -> f64 {
        let n = self.lattice_n as i64;
        let ks = if (k as i64) < n / 2 { k as i64 } else { k as i64 - n };
        2.0 * std::f64::consts::PI * ks as f64 / self.period
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeSide {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub delta: C64,
    pub sqrt_delta: C64,
    pub eta: C64,
}

/// Per-side mode quantities for a lateral frequency `xi` of length `d − 1`.
pub fn mode_coefficients(a: &DMatrix<f64>, s: f64, lam: f64, xi: &[f64]) -> ModeSide {
    let d = a.nrows();
    let av = a[(d - 1, d - 1)];
    let b: f64 = (0..d - 1).map(|k| a[(d - 1, k)] * xi[k]).sum();
    let mut c = 0.0;
    for k in 0..d - 1 {
        for l in 0..d - 1 {
            c += a[(k, l)] * xi[k] * xi[l];
        }
    }
    let delta = C64::new(-b * b + av * c, av * lam * s);
    let mut sq = delta.sqrt();
    if sq.re < 0.0 {
        sq = -sq;
    }
    let eta = (C64::new(0.0, -b) - sq) / av;
    ModeSide { a: av, b, c, delta, sqrt_delta: sq, eta }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeData {
    pub xi: Vec<f64>,
    pub side1: ModeSide,
    pub side2: ModeSide,
    pub phi_hat: C64,
    pub alpha1: C64,
    pub alpha2: C64,
}

impl ModeData {
    /// Flux jump `⟨iA₁ξ + η₁A₁e_d, e_d⟩α₁ − ⟨iA₂ξ + η₂A₂e_d, e_d⟩α₂`.
    pub fn flux_jump(&self) -> C64 {
        let f = |s: &ModeSide, al: C64| (C64::new(0.0, s.b) + s.eta * s.a) * al;
        f(&self.side1, self.alpha1) - f(&self.side2, self.alpha2)
    }
}

#[derive(Clone, Debug)]
pub struct HalfSpaceSolution {
    pub modes: Vec<ModeData>,
    pub depth: f64,
    pub tail_bound: f64,
    pub t: Vec<f64>,
    /// `v_j[m][n]`: value at depth `t[m]` and lattice point `n`.
    pub v1: Vec<Vec<C64>>,
    pub v2: Vec<Vec<C64>>,
    pub period: f64,
    pub dim: usize,
}

fn fft_lattice(data: &mut [C64], n: usize, d: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    if d == 2 {
        plan.process(data);
    } else {
        for row in data.chunks_mut(n) {
            plan.process(row);
        }
        let mut col = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = data[i * n + j];
            }
            plan.process(&mut col);
            for i in 0..n {
                data[i * n + j] = col[i];
            }
        }
    }
}

/// Per-mode data with `α₁ = φ̂√Δ₂/(√Δ₂ − √Δ₁)` and `α₂ = α₁ − φ̂`; `φ̂` is normalized so that
/// `φ(x) = Σ φ̂_k e^{iξ_k·x}`.
pub fn compute_modes(p: &HalfSpaceProblem) -> Result<Vec<ModeData>> {
    p.validate()?;
    let n = p.lattice_n;
    let d = p.dim();
    let total = p.phi.len();
    let mut hat = p.phi.clone();
    fft_lattice(&mut hat, n, d, false);
    let scale = 1.0 / total as f64;
    let mut modes = Vec::with_capacity(total);
    for idx in 0..total {
        let xi: Vec<f64> = if d == 2 { vec![p.frequency(idx)] } else { vec![p.frequency(idx / n), p.frequency(idx % n)] };
        let s1 = mode_coefficients(&p.a1, p.s1, p.lam, &xi);
        let s2 = mode_coefficients(&p.a2, p.s2, p.lam, &xi);
        let den = s2.sqrt_delta - s1.sqrt_delta;
        if den.norm() < 1e-12 * (s1.sqrt_delta.norm() + s2.sqrt_delta.norm()) {
            let (c2, c3) = p.conditions_hold()?;
            let which = match (c2, c3) {
                (false, false) => "complementing condition and a1*S1 != a2*S2 both fail",
                (false, true) => "complementing condition fails",
                (true, false) => "a1*S1 != a2*S2 fails",
                (true, true) => "denominator vanishes",
            };
            return Err(Error::DegenerateMode { xi, condition: which.to_string() });
        }
        let phi_hat = hat[idx] * scale;
        let alpha1 = phi_hat * s2.sqrt_delta / den;
        let alpha2 = alpha1 - phi_hat;
        modes.push(ModeData { xi, side1: s1, side2: s2, phi_hat, alpha1, alpha2 });
    }
    Ok(modes)
}

pub fn solve_halfspace(p: &HalfSpaceProblem) -> Result<HalfSpaceSolution> {
    let modes = compute_modes(p)?;
    let slowest = modes
        .iter()
        .flat_map(|m| [m.side1.eta.re, m.side2.eta.re])
        .fold(f64::NEG_INFINITY, f64::max);
    let depth = p.depth.unwrap_or(12.0 * 10f64.ln() / slowest.abs());
    let tail_bound = modes
        .iter()
        .filter(|m| m.phi_hat.norm() > 0.0)
        .flat_map(|m| [(m.side1.eta * depth).exp().norm(), (m.side2.eta * depth).exp().norm()])
        .fold(0.0, f64::max);
    let nt = p.nt.max(2);
    let t: Vec<f64> = (0..nt).map(|i| depth * i as f64 / (nt - 1) as f64).collect();
    let d = p.dim();
    let synth = |tt: f64, side: usize| {
        let mut buf: Vec<C64> = modes
            .iter()
            .map(|m| if side == 1 { m.alpha1 * (m.side1.eta * tt).exp() } else { m.alpha2 * (m.side2.eta * tt).exp() })
            .collect();
        fft_lattice(&mut buf, p.lattice_n, d, true);
        buf
    };
    let v1 = t.iter().map(|&tt| synth(tt, 1)).collect();
    let v2 = t.iter().map(|&tt| synth(tt, 2)).collect();
    Ok(HalfSpaceSolution { modes, depth, tail_bound, t, v1, v2, period: p.period, dim: d })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HalfSpaceNorms {
    pub l2: f64,
    pub h1: f64,
    pub phi_l2: f64,
    pub phi_half: f64,
}

/// Exact norms over the half-space (per mode `∫₀^∞ |e^{ηt}|² dt = 1/(2|Re η|)`).
pub fn mode_norms(modes: &[ModeData], period: f64, dim: usize) -> HalfSpaceNorms {
    let meas = period.powi(dim as i32 - 1);
    let mut l2 = 0.0;
    let mut grad = 0.0;
    let mut pl2 = 0.0;
    let mut ph = 0.0;
    for m in modes {
        let xi2: f64 = m.xi.iter().map(|x| x * x).sum();
        for (s, al) in [(&m.side1, m.alpha1), (&m.side2, m.alpha2)] {
            let w = al.norm_sqr() / (2.0 * s.eta.re.abs());
            l2 += w;
            grad += w * (xi2 + s.eta.norm_sqr());
        }
        pl2 += m.phi_hat.norm_sqr();
        ph += (1.0 + xi2).sqrt() * m.phi_hat.norm_sqr();
    }
    HalfSpaceNorms { l2: (meas * l2).sqrt(), h1: (meas * (l2 + grad)).sqrt(), phi_l2: (meas * pl2).sqrt(), phi_half: (meas * ph).sqrt() }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub lambdas: Vec<f64>,
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    pub bound_ratio: Vec<f64>,
    pub slope: f64,
    pub r_squared: f64,
    pub ratio_spread: f64,
    pub sup_ratio: f64,
    pub c_check: f64,
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,l2_norm,h1_norm,bound_ratio\n");
        for i in 0..self.lambdas.len() {
            let _ = writeln!(s, "{},{},{},{}", fmt_g17(self.lambdas[i]), fmt_g17(self.l2[i]), fmt_g17(self.h1[i]), fmt_g17(self.bound_ratio[i]));
        }
        s
    }
}

/// Fits the L² decay rate in λ and tracks the ratio of both sides of the key estimate.
pub fn verify_halfspace_estimate(template: &HalfSpaceProblem, lam_grid: &[f64]) -> Result<ScalingReport> {
    let (lo, hi) = lam_grid.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &l| (a.min(l), b.max(l)));
    if lam_grid.len() < 2 || !(hi / lo >= 1e3 * (1.0 - 1e-12)) {
        return invalid("lambda grid must span at least three decades");
    }
    let mut r = ScalingReport {
        lambdas: lam_grid.to_vec(),
        l2: vec![],
        h1: vec![],
        bound_ratio: vec![],
        slope: 0.0,
        r_squared: 0.0,
        ratio_spread: 0.0,
        sup_ratio: 0.0,
        c_check: 0.0,
    };
    for &lam in lam_grid {
        let p = template.with_lambda(lam);
        let modes = compute_modes(&p)?;
        let n = mode_norms(&modes, p.period, p.dim());
        for m in &modes {
            let c = m.side2.sqrt_delta.norm() / (m.side2.sqrt_delta - m.side1.sqrt_delta).norm();
            r.c_check = r.c_check.max(c);
        }
        r.l2.push(n.l2);
        r.h1.push(n.h1);
        r.bound_ratio.push((n.h1 + lam.sqrt() * n.l2) / (n.phi_half + lam.powf(0.25) * n.phi_l2));
    }
    let x: Vec<f64> = lam_grid.iter().map(|l| l.ln()).collect();
    let y: Vec<f64> = r.l2.iter().map(|v| v.ln()).collect();
    let (_, slope, r2) = linear_fit(&x, &y);
    r.slope = slope;
    r.r_squared = r2;
    let (mn, mx) = r.bound_ratio.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    r.ratio_spread = mx / mn;
    r.sup_ratio = mx;
    Ok(r)
}

pub fn modes_csv(modes: &[ModeData]) -> String {
    let d1 = modes.first().map_or(1, |m| m.xi.len());
    let mut s = String::new();
    for k in 0..d1 {
        let _ = write!(s, "xi{},", k + 1);
    }
    s.push_str("re_eta1,im_eta1,re_eta2,im_eta2,abs_alpha1\n");
    for m in modes {
        for x in &m.xi {
            let _ = write!(s, "{},", fmt_g17(*x));
        }
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_g17(m.side1.eta.re),
            fmt_g17(m.side1.eta.im),
            fmt_g17(m.side2.eta.re),
            fmt_g17(m.side2.eta.im),
            fmt_g17(m.alpha1.norm())
        );
    }
    s
}

/// Structured mesh of `[0, width] × [0, height]`, periodic in `x`; returns the alias map
/// identifying the right column with the left one. Only the top and bottom are boundary.
pub fn periodic_strip_mesh(nx: usize, ny: usize, width: f64, height: f64) -> Result<(Mesh, Vec<usize>)> {
    if nx < 2 || ny < 1 {
        return invalid("strip needs nx >= 2 and ny >= 1");
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(pt(width * i as f64 / nx as f64, height * j as f64 / ny as f64));
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mut boundary_edges = Vec::new();
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge { i: id(i, 0), j: id(i + 1, 0), normal: pt(0.0, -1.0) });
        boundary_edges.push(BoundaryEdge { i: id(i + 1, ny), j: id(i, ny), normal: pt(0.0, 1.0) });
    }
    let is_boundary: Vec<bool> = (0..vertices.len()).map(|v| v / (nx + 1) == 0 || v / (nx + 1) == ny).collect();
    let d_gamma = vertices.iter().map(|p: &Point| p.y.min(height - p.y).max(0.0)).collect();
    let domain = Domain::Polygon(vec![pt(0.0, 0.0), pt(width, 0.0), pt(width, height), pt(0.0, height)]);
    let mut m = Mesh { vertices, triangles, boundary_edges, is_boundary, d_gamma, h_max: 0.0, domain };
    m.h_max = (width / nx as f64).hypot(height / ny as f64);
    let alias = (0..m.n_vertices()).map(|v| if v % (nx + 1) == nx { v - nx } else { v }).collect();
    Ok((m, alias))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StripReport {
    pub lam: f64,
    pub h: f64,
    pub dofs: usize,
    pub l2_error: f64,
    pub l2_exact: f64,
    pub relative_error: f64,
}

/// FEM solution of the imaginary-shift system (δ = 0) on a periodic strip with the jump
/// `v₁ − v₂ = e^{iξx}` on the bottom, compared with the exact mode solution.
pub fn strip_cross_check(a1: f64, a2: f64, s1: f64, s2: f64, lam: f64, h: f64, height: f64) -> Result<StripReport> {
    let width = 1.0;
    let xi = 2.0 * std::f64::consts::PI / width;
    let nx = (width / h).round() as usize;
    let ny = (height / h).round() as usize;
    let (m, alias) = periodic_strip_mesh(nx, ny, width, height)?;
    let dm = build_dofmap_aliased(&m, &alias)?;
    let cs = CoefficientSet::contrast(a1, a2, s1, s2);
    let sys = assemble_system(&m, &dm, &cs, C64::new(0.0, lam), 0.0, Variant::Sys4Thm4)?;
    let jump = |p: &Point| C64::new(0.0, xi * p.x).exp();
    // Lift the jump into field 1 on the bottom row; the remainder lives in X.
    let lift: Vec<C64> = m.vertices.iter().map(|p| if p.y == 0.0 { jump(p) } else { C64::new(0.0, 0.0) }).collect();
    let k1l = sys.k1.mul_vec(&lift);
    let f1: Vec<C64> = k1l.iter().map(|z| -z).collect();
    let b = dm.scatter(&f1, &vec![C64::new(0.0, 0.0); m.n_vertices()]);
    let f = factorize(&sys)?;
    let x = f.solve_vec(&b)?;
    let (mut u1, u2) = dm.unpack(&x);
    for (u, l) in u1.iter_mut().zip(&lift) {
        *u += l;
    }
    let diag = |a: f64| DMatrix::from_diagonal_element(2, 2, a);
    let md1 = mode_coefficients(&diag(a1), s1, lam, &[xi]);
    let md2 = mode_coefficients(&diag(a2), s2, lam, &[xi]);
    let alpha1 = md2.sqrt_delta / (md2.sqrt_delta - md1.sqrt_delta);
    let alpha2 = alpha1 - 1.0;
    let exact = |p: &Point, side: usize| {
        let (al, eta) = if side == 1 { (alpha1, md1.eta) } else { (alpha2, md2.eta) };
        al * jump(p) * (eta * p.y).exp()
    };
    let mut err = 0.0;
    let mut ex = 0.0;
    for t in 0..m.triangles.len() {
        let tri = m.triangles[t];
        let q = m.midpoints(t);
        let w = m.area(t) / 3.0;
        let pairs = [(0, 1), (1, 2), (2, 0)];
        for (k, &(a, bb)) in pairs.iter().enumerate() {
            let v1 = (u1[tri[a]] + u1[tri[bb]]) * 0.5;
            let v2 = (u2[tri[a]] + u2[tri[bb]]) * 0.5;
            let e1 = exact(&q[k], 1);
            let e2 = exact(&q[k], 2);
            err += w * ((v1 - e1).norm_sqr() + (v2 - e2).norm_sqr());
            ex += w * (e1.norm_sqr() + e2.norm_sqr());
        }
    }
    Ok(StripReport { lam, h, dofs: dm.total, l2_error: err.sqrt(), l2_exact: ex.sqrt(), relative_error: (err / ex).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(phi: Vec<C64>) -> HalfSpaceProblem {
        HalfSpaceProblem {
            a1: DMatrix::from_diagonal_element(2, 2, 2.0),
            a2: DMatrix::identity(2, 2),
            s1: 1.0,
            s2: 1.0,
            lam: 10.0,
            lattice_n: phi.len(),
            phi,
            period: 2.0 * std::f64::consts::PI,
            depth: None,
            nt: 16,
        }
    }

    fn lattice(n: usize, f: impl Fn(f64) -> C64) -> Vec<C64> {
        (0..n).map(|i| f(2.0 * std::f64::consts::PI * i as f64 / n as f64)).collect()
    }

    #[test]
    fn identity_zero_frequency_mode() {
        let m = mode_coefficients(&DMatrix::identity(2, 2), 1.0, 1.0, &[0.0]);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!((m.a, m.b, m.c), (1.0, 0.0, 0.0));
        assert!((m.delta - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((m.sqrt_delta - C64::new(r, r)).norm() < 1e-15);
        assert!((m.eta + C64::new(r, r)).norm() < 1e-15);
    }

    #[test]
    fn three_dimensional_delta() {
        let m = mode_coefficients(&DMatrix::from_diagonal_element(3, 3, 2.0), 1.0, 1.0, &[1.0, 0.0]);
        assert_eq!((m.a, m.b, m.c), (2.0, 0.0, 2.0));
        assert!((m.delta - C64::new(4.0, 2.0)).norm() < 1e-14);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let sol = solve_halfspace(&template(vec![C64::new(0.0, 0.0); 64])).unwrap();
        assert!(sol.v1.iter().chain(&sol.v2).flatten().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn single_mode_and_transmission_residuals() {
        let p = template(lattice(64, |x| C64::new(0.0, 3.0 * x).exp()));
        let sol = solve_halfspace(&p).unwrap();
        let nz: Vec<&ModeData> = sol.modes.iter().filter(|m| m.phi_hat.norm() > 1e-12).collect();
        assert_eq!(nz.len(), 1);
        assert!((nz[0].xi[0] - 3.0).abs() < 1e-12);
        let md = mode_coefficients(&p.a1, 1.0, p.lam, &[3.0]);
        assert!((nz[0].side1.eta - md.eta).norm() < 1e-14);
        // v₁ at depth t[3] is α₁ e^{iξx} e^{η₁ t}.
        let t = sol.t[3];
        for (n, z) in sol.v1[3].iter().enumerate() {
            let x = 2.0 * std::f64::consts::PI * n as f64 / 64.0;
            let e = nz[0].alpha1 * C64::new(0.0, 3.0 * x).exp() * (md.eta * t).exp();
            assert!((z - e).norm() < 1e-12);
        }
        let phin = p.phi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let jump = sol.v1[0].iter().zip(&sol.v2[0]).zip(&p.phi).map(|((a, b), f)| (a - b - f).norm()).fold(0.0, f64::max);
        assert!(jump <= 1e-12 * phin);
        for m in &sol.modes {
            assert!(m.flux_jump().norm() <= 1e-12 * (1.0 + m.alpha1.norm()));
        }
    }

    #[test]
    fn pde_residual_per_mode() {
        for &xi in &[0.0, 1.0, 7.0, 50.0] {
            let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
            let m = mode_coefficients(&a, 1.7, 40.0, &[xi]);
            let r = m.eta * m.eta * m.a + C64::new(0.0, 2.0 * m.b) * m.eta - C64::new(m.c, 40.0 * 1.7);
            assert!(r.norm() <= 1e-12 * (m.c + 68.0 + m.a * m.eta.norm_sqr()));
            assert!(m.sqrt_delta.re > 0.0 && m.eta.re < 0.0);
        }
    }

    #[test]
    fn doubling_lambda_on_single_mode() {
        let p = template(lattice(32, |x| C64::new(0.0, x).exp()));
        let n1 = mode_norms(&compute_modes(&p).unwrap(), p.period, 2);
        let p2 = p.with_lambda(20.0);
        let n2 = mode_norms(&compute_modes(&p2).unwrap(), p.period, 2);
        let closed = |lam: f64| {
            let d = &DMatrix::from_diagonal_element(2, 2, 2.0);
            let m1 = mode_coefficients(d, 1.0, lam, &[1.0]);
            let m2 = mode_coefficients(&DMatrix::identity(2, 2), 1.0, lam, &[1.0]);
            let a1 = m2.sqrt_delta / (m2.sqrt_delta - m1.sqrt_delta);
            let a2 = a1 - 1.0;
            a1.norm_sqr() / (2.0 * m1.eta.re.abs()) + a2.norm_sqr() / (2.0 * m2.eta.re.abs())
        };
        let ratio = n2.l2.powi(2) / n1.l2.powi(2);
        assert!((ratio - closed(20.0) / closed(10.0)).abs() < 1e-10 * ratio);
    }

    #[test]
    fn identical_media_degenerate() {
        let mut p = template(lattice(16, |x| C64::new(x.cos(), 0.0)));
        p.a1 = DMatrix::identity(2, 2);
        assert!(matches!(solve_halfspace(&p), Err(Error::DegenerateMode { .. })));
        let grid: Vec<f64> = (0..5).map(|i| 10f64.powi(i)).collect();
        assert!(verify_halfspace_estimate(&p, &grid).is_err());
    }

    #[test]
    fn rejects_bad_lattice_and_lambda() {
        let p = template(vec![C64::new(0.0, 0.0); 12]);
        assert!(compute_modes(&p).is_err());
        let mut p = template(vec![C64::new(0.0, 0.0); 16]);
        p.lam = 0.5;
        assert!(compute_modes(&p).is_err());
    }

    #[test]
    fn strip_mesh_layout() {
        let (m, alias) = periodic_strip_mesh(4, 3, 1.0, 1.0).unwrap();
        let dm = build_dofmap_aliased(&m, &alias).unwrap();
        assert_eq!(dm.n_boundary, 8);
        assert_eq!(dm.n_interior, 8);
        assert!((m.total_area() - 1.0).abs() < 1e-14);
    }
}
