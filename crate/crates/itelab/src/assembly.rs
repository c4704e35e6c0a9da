//! Discrete constrained space X and the block system of the regularized form.

use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{CoefficientSet, Mat2, Point};
use crate::mesh::{fmt_g17, Mesh};
use crate::sparse::Csr;

/// Global layout: field-1 interior block, field-2 interior block, shared boundary block.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    pub n_vertices: usize,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub total: usize,
    pub field1: Vec<usize>,
    pub field2: Vec<usize>,
    pub interior_vertices: Vec<usize>,
    pub boundary_vertices: Vec<usize>,
}

pub fn build_dofmap(m: &Mesh) -> DofMap {
    let alias: Vec<usize> = (0..m.n_vertices()).collect();
    build_dofmap_aliased(m, &alias).expect("identity alias is valid")
}

/// DOF layout where vertex `v` shares the unknowns of `alias[v]` (periodic identification).
pub fn build_dofmap_aliased(m: &Mesh, alias: &[usize]) -> Result<DofMap> {
    let nv = m.n_vertices();
    if alias.len() != nv {
        return invalid("alias length differs from vertex count");
    }
    for (v, &r) in alias.iter().enumerate() {
        if alias[r] != r || m.is_boundary[v] != m.is_boundary[r] {
            return invalid(format!("alias of vertex {v} is not a consistent representative"));
        }
    }
    let reps: Vec<usize> = (0..nv).filter(|&v| alias[v] == v).collect();
    let interior: Vec<usize> = reps.iter().copied().filter(|&v| !m.is_boundary[v]).collect();
    let boundary: Vec<usize> = reps.iter().copied().filter(|&v| m.is_boundary[v]).collect();
    let ni = interior.len();
    let nb = boundary.len();
    let mut f1 = vec![usize::MAX; nv];
    let mut f2 = vec![usize::MAX; nv];
    for (k, &v) in interior.iter().enumerate() {
        f1[v] = k;
        f2[v] = ni + k;
    }
    for (k, &v) in boundary.iter().enumerate() {
        f1[v] = 2 * ni + k;
        f2[v] = 2 * ni + k;
    }
    for v in 0..nv {
        f1[v] = f1[alias[v]];
        f2[v] = f2[alias[v]];
    }
    Ok(DofMap {
        n_vertices: nv,
        n_interior: ni,
        n_boundary: nb,
        total: 2 * ni + nb,
        field1: f1,
        field2: f2,
        interior_vertices: interior,
        boundary_vertices: boundary,
    })
}

impl DofMap {
    /// Nodal fields `(u₁, u₂)` of a global coefficient vector.
    pub fn unpack(&self, x: &[C64]) -> (Vec<C64>, Vec<C64>) {
        assert_eq!(x.len(), self.total);
        let u1 = self.field1.iter().map(|&i| x[i]).collect();
        let u2 = self.field2.iter().map(|&i| x[i]).collect();
        (u1, u2)
    }

    /// Global vector of a nodal pair in X (boundary values are taken from `u1`).
    pub fn pack(&self, u1: &[C64], u2: &[C64]) -> Vec<C64> {
        let mut x = vec![C64::new(0.0, 0.0); self.total];
        for v in 0..self.n_vertices {
            x[self.field2[v]] = u2[v];
        }
        for v in 0..self.n_vertices {
            x[self.field1[v]] = u1[v];
        }
        x
    }

    /// Transpose of the prolongation: per-vertex test moments summed into global rows.
    pub fn scatter(&self, field1_moments: &[C64], field2_moments: &[C64]) -> Vec<C64> {
        let mut b = vec![C64::new(0.0, 0.0); self.total];
        for v in 0..self.n_vertices {
            b[self.field1[v]] += field1_moments[v];
            b[self.field2[v]] += field2_moments[v];
        }
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Variant {
    #[serde(rename = "sys1_real_shift")]
    Sys1RealShift,
    #[serde(rename = "sys2_imag_shift")]
    Sys2ImagShift,
    #[serde(rename = "sys3_thm2")]
    Sys3Thm2,
    #[serde(rename = "sys4_thm4")]
    Sys4Thm4,
}

impl Variant {
    pub fn real_shift(self) -> bool {
        matches!(self, Variant::Sys1RealShift | Variant::Sys3Thm2)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "sys1" | "sys1_real_shift" | "T1" | "t1" => Ok(Variant::Sys1RealShift),
            "sys2" | "sys2_imag_shift" | "T2" | "t2" => Ok(Variant::Sys2ImagShift),
            "sys3" | "sys3_thm2" | "T3" | "t3" => Ok(Variant::Sys3Thm2),
            "sys4" | "sys4_thm4" | "T4" | "t4" => Ok(Variant::Sys4Thm4),
            other => invalid(format!("unknown system variant `{other}`")),
        }
    }
}

/// Per-field nodal matrices over all vertices.
#[derive(Clone, Debug)]
pub struct NodalMatrices {
    pub stiffness1: Csr<f64>,
    pub stiffness2: Csr<f64>,
    pub mass_sigma1: Csr<f64>,
    pub mass_sigma2: Csr<f64>,
    pub mass: Csr<f64>,
}

const PHI_AT_MID: [[f64; 3]; 3] = [[0.5, 0.0, 0.5], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5]];

pub fn element_matrices(area: f64, grads: &[Point; 3], a_bar: &Mat2, sigma_q: &[f64; 3]) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let mut s = [[0.0; 3]; 3];
    let mut mm = [[0.0; 3]; 3];
    for i in 0..3 {
        let ag = a_bar * grads[i];
        for j in 0..3 {
            s[j][i] = area * grads[j].dot(&ag);
            let mut acc = 0.0;
            for q in 0..3 {
                acc += sigma_q[q] * PHI_AT_MID[i][q] * PHI_AT_MID[j][q];
            }
            mm[i][j] = area / 3.0 * acc;
        }
    }
    (s, mm)
}

#[derive(Clone, Copy)]
struct Local {
    tri: [usize; 3],
    s1: [[f64; 3]; 3],
    s2: [[f64; 3]; 3],
    m1: [[f64; 3]; 3],
    m2: [[f64; 3]; 3],
    m0: [[f64; 3]; 3],
}

/// Quadrature-averaged coefficient matrices per triangle.
pub fn triangle_coefficients(m: &Mesh, cs: &CoefficientSet, t: usize) -> (Mat2, Mat2, [f64; 3], [f64; 3]) {
    let q = m.midpoints(t);
    let mut a1 = Mat2::zeros();
    let mut a2 = Mat2::zeros();
    let mut s1 = [0.0; 3];
    let mut s2 = [0.0; 3];
    for k in 0..3 {
        let v = cs.values(&q[k]);
        a1 += v.a1 / 3.0;
        a2 += v.a2 / 3.0;
        s1[k] = v.s1;
        s2[k] = v.s2;
    }
    (a1, a2, s1, s2)
}

pub fn assemble_nodal(m: &Mesh, cs: &CoefficientSet) -> NodalMatrices {
    let locals: Vec<Local> = (0..m.triangles.len())
        .into_par_iter()
        .map(|t| {
            let area = m.area(t);
            let g = m.gradients(t);
            let (a1, a2, s1, s2) = triangle_coefficients(m, cs, t);
            let (k1, mm1) = element_matrices(area, &g, &a1, &s1);
            let (k2, mm2) = element_matrices(area, &g, &a2, &s2);
            let (_, m0) = element_matrices(area, &g, &Mat2::zeros(), &[1.0; 3]);
            Local { tri: m.triangles[t], s1: k1, s2: k2, m1: mm1, m2: mm2, m0 }
        })
        .collect();
    let n = m.n_vertices();
    let build = |pick: &dyn Fn(&Local) -> [[f64; 3]; 3]| {
        let mut trip = Vec::with_capacity(9 * locals.len());
        for l in &locals {
            let e = pick(l);
            for i in 0..3 {
                for j in 0..3 {
                    trip.push((l.tri[i], l.tri[j], e[i][j]));
                }
            }
        }
        Csr::from_triplets(n, n, &trip)
    };
    NodalMatrices {
        stiffness1: build(&|l| l.s1),
        stiffness2: build(&|l| l.s2),
        mass_sigma1: build(&|l| l.m1),
        mass_sigma2: build(&|l| l.m2),
        mass: build(&|l| l.m0),
    }
}

/// Coefficients of `a = g₁S₁ + σ₁MΣ₁ + m₁M − [g₂S₂ + σ₂MΣ₂ + m₂M]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FormCoefficients {
    pub grad1: C64,
    pub sigma1: C64,
    pub mass1: C64,
    pub grad2: C64,
    pub sigma2: C64,
    pub mass2: C64,
}

pub fn form_coefficients(variant: Variant, gamma0: C64, delta: f64) -> Result<FormCoefficients> {
    if !(0.0..1.0).contains(&delta) {
        return invalid(format!("delta = {delta} outside [0, 1)"));
    }
    let scale = gamma0.norm();
    let c = |re: f64, im: f64| C64::new(re, im);
    let one = c(1.0, 0.0);
    let zero = c(0.0, 0.0);
    if variant.real_shift() {
        if !(gamma0.re > 0.0 && gamma0.im.abs() <= 1e-14 * scale) {
            return invalid(format!("{variant:?} needs a real positive shift, got {gamma0}"));
        }
    } else if !(gamma0.im > 0.0 && gamma0.re.abs() <= 1e-14 * scale) {
        return invalid(format!("{variant:?} needs a purely imaginary shift i·λ₀ with λ₀ > 0, got {gamma0}"));
    }
    let l0 = if variant.real_shift() { c(gamma0.re, 0.0) } else { c(0.0, gamma0.im) };
    Ok(match variant {
        Variant::Sys1RealShift => FormCoefficients {
            grad1: c(1.0, delta),
            sigma1: l0,
            mass1: c(0.0, delta),
            grad2: c(1.0, -delta),
            sigma2: l0,
            mass2: c(0.0, -delta),
        },
        Variant::Sys2ImagShift | Variant::Sys4Thm4 => FormCoefficients {
            grad1: c(1.0 + delta, 0.0),
            sigma1: l0,
            mass1: zero,
            grad2: one,
            sigma2: l0,
            mass2: zero,
        },
        Variant::Sys3Thm2 => FormCoefficients {
            grad1: c(1.0 + delta, 0.0),
            sigma1: l0 * (1.0 + delta),
            mass1: zero,
            grad2: one,
            sigma2: l0,
            mass2: zero,
        },
    })
}

fn combine_same_pattern(parts: &[(C64, &Csr<f64>)]) -> Csr<C64> {
    let base = parts[0].1;
    let mut out = base.map(|_| C64::new(0.0, 0.0));
    for (c, a) in parts {
        debug_assert_eq!(a.col_idx, base.col_idx);
        for (o, v) in out.values.iter_mut().zip(&a.values) {
            *o += c * v;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub matrix: Csr<C64>,
    pub variant: Variant,
    pub gamma0: C64,
    pub delta: f64,
    pub coefficients: FormCoefficients,
    /// Nodal field blocks `K₁`, `K₂` with `matrix = P₁ᵀK₁P₁ − P₂ᵀK₂P₂`.
    pub k1: Csr<C64>,
    pub k2: Csr<C64>,
    pub mass_blocks: Arc<NodalMatrices>,
    pub dofmap: DofMap,
}

pub fn system_from_nodal(
    nodal: Arc<NodalMatrices>,
    dm: &DofMap,
    gamma0: C64,
    delta: f64,
    variant: Variant,
) -> Result<BlockSystem> {
    let fc = form_coefficients(variant, gamma0, delta)?;
    let n = &*nodal;
    let k1 = combine_same_pattern(&[(fc.grad1, &n.stiffness1), (fc.sigma1, &n.mass_sigma1), (fc.mass1, &n.mass)]);
    let k2 = combine_same_pattern(&[(fc.grad2, &n.stiffness2), (fc.sigma2, &n.mass_sigma2), (fc.mass2, &n.mass)]);
    let mut trip = Vec::with_capacity(2 * k1.nnz());
    for i in 0..k1.n_rows {
        for (j, v) in k1.row(i) {
            trip.push((dm.field1[i], dm.field1[j], v));
        }
        for (j, v) in k2.row(i) {
            trip.push((dm.field2[i], dm.field2[j], -v));
        }
    }
    let matrix = Csr::from_triplets(dm.total, dm.total, &trip);
    Ok(BlockSystem { matrix, variant, gamma0, delta, coefficients: fc, k1, k2, mass_blocks: nodal, dofmap: dm.clone() })
}

pub fn assemble_system(
    m: &Mesh,
    dm: &DofMap,
    cs: &CoefficientSet,
    gamma0: C64,
    delta: f64,
    variant: Variant,
) -> Result<BlockSystem> {
    form_coefficients(variant, gamma0, delta)?;
    if dm.n_vertices != m.n_vertices() {
        return invalid("dofmap does not belong to this mesh");
    }
    system_from_nodal(Arc::new(assemble_nodal(m, cs)), dm, gamma0, delta, variant)
}

impl BlockSystem {
    /// `a(v, φ)` for nodal pairs, sesquilinear in `φ`.
    pub fn form(&self, v: (&[C64], &[C64]), phi: (&[C64], &[C64])) -> C64 {
        self.k1.form(v.0, phi.0) - self.k2.form(v.1, phi.1)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.matrix.n_rows {
            for (j, v) in self.matrix.row(i) {
                worst = worst.max((v - self.matrix.get(j, i)).norm());
            }
        }
        worst
    }

    /// Coordinate listing `row col re im`, 0-based.
    pub fn export_coordinate(&self) -> String {
        let mut s = String::new();
        for (i, j, v) in self.matrix.triplets() {
            let _ = writeln!(s, "{i} {j} {} {}", fmt_g17(v.re), fmt_g17(v.im));
        }
        s
    }
}

/// Right-hand side data: nodal `g₁`, `g₂`, boundary flux `h`, piecewise-constant `G₁`.
#[derive(Clone, Debug, Default)]
pub struct SourceData {
    pub g1: Vec<C64>,
    pub g2: Vec<C64>,
    pub h: Option<Vec<C64>>,
    pub big_g1: Option<Vec<[C64; 2]>>,
    /// When set, `G₁` must vanish on triangles meeting the band `d_Γ < tau`.
    pub support_band: Option<f64>,
}

impl SourceData {
    pub fn zero(nv: usize) -> Self {
        Self { g1: vec![C64::new(0.0, 0.0); nv], g2: vec![C64::new(0.0, 0.0); nv], ..Default::default() }
    }

    pub fn from_fns(m: &Mesh, g1: impl Fn(&Point) -> C64, g2: impl Fn(&Point) -> C64) -> Self {
        Self {
            g1: m.vertices.iter().map(&g1).collect(),
            g2: m.vertices.iter().map(&g2).collect(),
            ..Default::default()
        }
    }
}

/// Per-vertex moments `(∫g₁ψ, ∫g₂ψ, ∫_Γ hψ, ∫G₁·∇ψ)`.
pub struct Moments {
    pub g1: Vec<C64>,
    pub g2: Vec<C64>,
    pub h: Vec<C64>,
    pub div: Vec<C64>,
}

pub fn boundary_lumped(m: &Mesh, h: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); m.n_vertices()];
    for e in &m.boundary_edges {
        let len = (m.vertices[e.i] - m.vertices[e.j]).norm();
        out[e.i] += h[e.i] * (0.5 * len);
        out[e.j] += h[e.j] * (0.5 * len);
    }
    out
}

pub fn source_moments(m: &Mesh, mass: &Csr<f64>, data: &SourceData) -> Result<Moments> {
    let nv = m.n_vertices();
    if data.g1.len() != nv || data.g2.len() != nv {
        return invalid("load vectors must be nodal on the mesh");
    }
    let zero = C64::new(0.0, 0.0);
    let h = match &data.h {
        Some(h) => {
            if h.len() != nv {
                return invalid("boundary data must be nodal on the mesh");
            }
            boundary_lumped(m, h)
        }
        None => vec![zero; nv],
    };
    let mut div = vec![zero; nv];
    if let Some(gv) = &data.big_g1 {
        if gv.len() != m.triangles.len() {
            return invalid("G1 must be given per triangle");
        }
        for (t, g) in gv.iter().enumerate() {
            if let Some(tau) = data.support_band {
                let near = m.triangles[t].iter().any(|&v| m.d_gamma[v] < tau);
                if near && (g[0].norm() > 0.0 || g[1].norm() > 0.0) {
                    return Err(Error::Support(format!("G1 nonzero on triangle {t} inside the band d < {tau}")));
                }
            }
            let area = m.area(t);
            let grads = m.gradients(t);
            for (k, &v) in m.triangles[t].iter().enumerate() {
                div[v] += (g[0] * grads[k].x + g[1] * grads[k].y) * area;
            }
        }
    }
    Ok(Moments { g1: mass.mul_vec(&data.g1), g2: mass.mul_vec(&data.g2), h, div })
}

/// `b(φ) = ∫ −g₁φ̄₁ + g₂φ̄₂ + ∫_Γ h φ̄ + ∫ G₁·∇φ̄₁` as a global vector.
pub fn assemble_rhs(m: &Mesh, dm: &DofMap, sys: &BlockSystem, data: &SourceData) -> Result<Vec<C64>> {
    if data.big_g1.is_some() && sys.variant != Variant::Sys3Thm2 {
        return invalid("div(G1) loads are defined for the sys3 variant only");
    }
    let mo = source_moments(m, &sys.mass_blocks.mass, data)?;
    Ok(rhs_from_moments(dm, &mo))
}

pub fn rhs_from_moments(dm: &DofMap, mo: &Moments) -> Vec<C64> {
    let f1: Vec<C64> = mo.g1.iter().zip(&mo.div).map(|(g, d)| -g + d).collect();
    let f2: Vec<C64> = mo.g2.iter().zip(&mo.h).map(|(g, h)| g + h).collect();
    dm.scatter(&f1, &f2)
}
