//! Domains, coefficient fields, boundary distance and change of variables.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

use crate::error::{invalid, Error, Result};

pub type Point = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

pub fn pt(x: f64, y: f64) -> Point {
    Point::new(x, y)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    UnitDisk,
    UnitSquare,
    Annulus { r_inner: f64 },
    Polygon(Vec<Point>),
}

fn segment_distance(x: &Point, a: &Point, b: &Point) -> (f64, Point) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((x - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let p = a + ab * t;
    ((x - p).norm(), p)
}

fn segments_cross(p1: &Point, p2: &Point, q1: &Point, q2: &Point) -> bool {
    let orient = |a: &Point, b: &Point, c: &Point| (b - a).perp(&(c - a));
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].perp(&poly[(i + 1) % n])).sum::<f64>() / 2.0
}

/// Element `index` of the van der Corput sequence in `base`.
pub fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

impl Domain {
    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        let d = Domain::Polygon(vertices);
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::UnitDisk | Domain::UnitSquare => Ok(()),
            Domain::Annulus { r_inner } => {
                if !(*r_inner > 0.0 && *r_inner < 1.0) {
                    return invalid(format!("annulus inner radius {r_inner} not in (0,1)"));
                }
                Ok(())
            }
            Domain::Polygon(v) => {
                let n = v.len();
                if n < 3 {
                    return invalid("polygon needs at least 3 vertices");
                }
                if signed_area(v) <= 0.0 {
                    return invalid("polygon vertices must be positively oriented");
                }
                for i in 0..n {
                    for j in (i + 1)..n {
                        let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                        if adjacent {
                            continue;
                        }
                        if segments_cross(&v[i], &v[(i + 1) % n], &v[j], &v[(j + 1) % n]) {
                            return invalid(format!("polygon edges {i} and {j} intersect"));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn is_simply_connected(&self) -> bool {
        !matches!(self, Domain::Annulus { .. })
    }

    pub fn name(&self) -> String {
        match self {
            Domain::UnitDisk => "unit_disk".into(),
            Domain::UnitSquare => "unit_square".into(),
            Domain::Annulus { r_inner } => format!("annulus({r_inner})"),
            Domain::Polygon(v) => format!("polygon({} vertices)", v.len()),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Domain::UnitDisk => PI,
            Domain::UnitSquare => 1.0,
            Domain::Annulus { r_inner } => PI * (1.0 - r_inner * r_inner),
            Domain::Polygon(v) => signed_area(v),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::UnitDisk | Domain::Annulus { .. } => 2.0,
            Domain::UnitSquare => 2f64.sqrt(),
            Domain::Polygon(v) => {
                let mut d: f64 = 0.0;
                for a in v {
                    for b in v {
                        d = d.max((a - b).norm());
                    }
                }
                d
            }
        }
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        match self {
            Domain::UnitDisk | Domain::Annulus { .. } => (pt(-1.0, -1.0), pt(1.0, 1.0)),
            Domain::UnitSquare => (pt(0.0, 0.0), pt(1.0, 1.0)),
            Domain::Polygon(v) => {
                let mut lo = v[0];
                let mut hi = v[0];
                for p in v {
                    lo = lo.inf(p);
                    hi = hi.sup(p);
                }
                (lo, hi)
            }
        }
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        match self {
            Domain::UnitDisk => x.norm() <= 1.0 + tol,
            Domain::UnitSquare => {
                x.x >= -tol && x.x <= 1.0 + tol && x.y >= -tol && x.y <= 1.0 + tol
            }
            Domain::Annulus { r_inner } => {
                let r = x.norm();
                r >= r_inner - tol && r <= 1.0 + tol
            }
            Domain::Polygon(v) => {
                let n = v.len();
                let mut inside = false;
                for i in 0..n {
                    let (a, b) = (v[i], v[(i + 1) % n]);
                    if (a.y > x.y) != (b.y > x.y) {
                        let xc = a.x + (x.y - a.y) / (b.y - a.y) * (b.x - a.x);
                        if x.x < xc {
                            inside = !inside;
                        }
                    }
                }
                inside || self.polyline_distance(x).0 <= tol
            }
        }
    }

    fn polyline_distance(&self, x: &Point) -> (f64, Point, usize) {
        let Domain::Polygon(v) = self else { unreachable!() };
        let n = v.len();
        let mut best = (f64::INFINITY, *x, 0);
        for i in 0..n {
            let (d, p) = segment_distance(x, &v[i], &v[(i + 1) % n]);
            if d < best.0 {
                best = (d, p, i);
            }
        }
        best
    }

    /// Distance to the boundary for points of the closure; tiny negatives clamp to 0.
    pub fn dist_to_boundary(&self, x: &Point) -> f64 {
        let d = match self {
            Domain::UnitDisk => 1.0 - x.norm(),
            Domain::UnitSquare => x.x.min(1.0 - x.x).min(x.y).min(1.0 - x.y),
            Domain::Annulus { r_inner } => {
                let r = x.norm();
                (1.0 - r).min(r - r_inner)
            }
            Domain::Polygon(_) => self.polyline_distance(x).0,
        };
        d.max(0.0)
    }

    /// Outward unit normal at a boundary point; `None` at polygon or square corners.
    pub fn outward_normal(&self, x: &Point) -> Option<Point> {
        const CORNER: f64 = 1e-9;
        match self {
            Domain::UnitDisk => Some(x / x.norm()),
            Domain::Annulus { r_inner } => {
                let r = x.norm();
                if r > 0.5 * (1.0 + r_inner) { Some(x / r) } else { Some(-x / r) }
            }
            Domain::UnitSquare => {
                let sides = [
                    (x.x, pt(-1.0, 0.0)),
                    (1.0 - x.x, pt(1.0, 0.0)),
                    (x.y, pt(0.0, -1.0)),
                    (1.0 - x.y, pt(0.0, 1.0)),
                ];
                let near: Vec<_> = sides.iter().filter(|s| s.0.abs() <= CORNER).collect();
                match near.len() {
                    1 => Some(near[0].1),
                    0 => sides
                        .iter()
                        .min_by(|a, b| a.0.total_cmp(&b.0))
                        .map(|s| s.1),
                    _ => None,
                }
            }
            Domain::Polygon(v) => {
                let n = v.len();
                let (_, p, i) = self.polyline_distance(x);
                let (a, b) = (v[i], v[(i + 1) % n]);
                if (p - a).norm() <= CORNER || (p - b).norm() <= CORNER {
                    return None;
                }
                let t = (b - a).normalize();
                Some(pt(t.y, -t.x))
            }
        }
    }

    pub fn project_to_boundary(&self, x: &Point) -> Point {
        match self {
            Domain::UnitDisk => x / x.norm(),
            Domain::Annulus { r_inner } => {
                let r = x.norm();
                if r > 0.5 * (1.0 + r_inner) { x / r } else { x * (r_inner / r) }
            }
            Domain::UnitSquare => {
                let c = pt(x.x.clamp(0.0, 1.0), x.y.clamp(0.0, 1.0));
                let d = [c.x, 1.0 - c.x, c.y, 1.0 - c.y];
                let k = (0..4).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
                match k {
                    0 => pt(0.0, c.y),
                    1 => pt(1.0, c.y),
                    2 => pt(c.x, 0.0),
                    _ => pt(c.x, 1.0),
                }
            }
            Domain::Polygon(_) => self.polyline_distance(x).1,
        }
    }

    /// `n` boundary points, each with its outward normal where defined.
    pub fn boundary_samples(&self, n: usize) -> Vec<(Point, Option<Point>)> {
        let along = |poly: &[Point], n: usize| -> Vec<Point> {
            let m = poly.len();
            let lens: Vec<f64> = (0..m).map(|i| (poly[(i + 1) % m] - poly[i]).norm()).collect();
            let total: f64 = lens.iter().sum();
            (0..n)
                .map(|k| {
                    let mut s = total * k as f64 / n as f64;
                    let mut i = 0;
                    while i + 1 < m && s > lens[i] {
                        s -= lens[i];
                        i += 1;
                    }
                    poly[i] + (poly[(i + 1) % m] - poly[i]) * (s / lens[i])
                })
                .collect()
        };
        let pts: Vec<Point> = match self {
            Domain::UnitDisk => (0..n)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / n as f64;
                    pt(t.cos(), t.sin())
                })
                .collect(),
            Domain::Annulus { r_inner } => {
                let n_out = n.div_ceil(2);
                let n_in = n - n_out;
                let mut v: Vec<Point> = (0..n_out)
                    .map(|k| {
                        let t = 2.0 * PI * k as f64 / n_out as f64;
                        pt(t.cos(), t.sin())
                    })
                    .collect();
                v.extend((0..n_in).map(|k| {
                    let t = 2.0 * PI * (k as f64 + 0.5) / n_in as f64;
                    pt(r_inner * t.cos(), r_inner * t.sin())
                }));
                v
            }
            Domain::UnitSquare => {
                along(&[pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0)], n)
            }
            Domain::Polygon(v) => along(v, n),
        };
        pts.into_iter().map(|p| (p, self.outward_normal(&p))).collect()
    }

    /// Deterministic quasi-random points strictly inside the domain.
    pub fn interior_samples(&self, n: usize) -> Vec<Point> {
        let (lo, hi) = self.bounding_box();
        let mut out = Vec::with_capacity(n);
        let mut i = 1usize;
        while out.len() < n && i < 1000 * (n + 10) {
            let p = pt(
                lo.x + (hi.x - lo.x) * halton(i, 2),
                lo.y + (hi.y - lo.y) * halton(i, 3),
            );
            i += 1;
            if self.contains(&p, 0.0) && self.dist_to_boundary(&p) > 0.0 {
                out.push(p);
            }
        }
        out
    }

    /// Largest boundary distance (inscribed radius).
    pub fn inradius(&self) -> f64 {
        match self {
            Domain::UnitDisk => 1.0,
            Domain::UnitSquare => 0.5,
            Domain::Annulus { r_inner } => 0.5 * (1.0 - r_inner),
            Domain::Polygon(_) => self
                .interior_samples(4096)
                .iter()
                .map(|p| self.dist_to_boundary(p))
                .fold(0.0, f64::max),
        }
    }
}

pub fn dist_to_boundary(dom: &Domain, x: &Point) -> f64 {
    dom.dist_to_boundary(x)
}

type MatFn = dyn Fn(&Point) -> Mat2 + Send + Sync;
type ScalFn = dyn Fn(&Point) -> f64 + Send + Sync;

/// Symmetric-matrix-valued coefficient evaluated pointwise.
#[derive(Clone)]
pub struct MatrixField {
    eval: Arc<MatFn>,
    pub lambda_bound: f64,
}

impl MatrixField {
    pub fn new(f: impl Fn(&Point) -> Mat2 + Send + Sync + 'static, lambda_bound: f64) -> Self {
        Self { eval: Arc::new(f), lambda_bound }
    }

    pub fn constant(m: Mat2, lambda_bound: f64) -> Self {
        Self::new(move |_| m, lambda_bound)
    }

    pub fn scaled_identity(a: f64) -> Self {
        Self::constant(Mat2::identity() * a, a.max(1.0 / a).max(1.0))
    }

    #[inline]
    pub fn eval(&self, x: &Point) -> Mat2 {
        (self.eval)(x)
    }
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MatrixField(Λ={})", self.lambda_bound)
    }
}

#[derive(Clone)]
pub struct ScalarField {
    eval: Arc<ScalFn>,
    pub lambda_bound: f64,
}

impl ScalarField {
    pub fn new(f: impl Fn(&Point) -> f64 + Send + Sync + 'static, lambda_bound: f64) -> Self {
        Self { eval: Arc::new(f), lambda_bound }
    }

    pub fn constant(s: f64) -> Self {
        Self::new(move |_| s, s.max(1.0 / s).max(1.0))
    }

    #[inline]
    pub fn eval(&self, x: &Point) -> f64 {
        (self.eval)(x)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField(Λ={})", self.lambda_bound)
    }
}

#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub a1: MatrixField,
    pub a2: MatrixField,
    pub s1: ScalarField,
    pub s2: ScalarField,
    pub lambda_bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoeffValues {
    pub a1: Mat2,
    pub a2: Mat2,
    pub s1: f64,
    pub s2: f64,
}

fn bound_of(values: &[f64]) -> f64 {
    values.iter().fold(1.0f64, |acc, &v| acc.max(v).max(1.0 / v))
}

impl CoefficientSet {
    pub fn new(a1: MatrixField, a2: MatrixField, s1: ScalarField, s2: ScalarField) -> Self {
        let lambda_bound = a1
            .lambda_bound
            .max(a2.lambda_bound)
            .max(s1.lambda_bound)
            .max(s2.lambda_bound);
        Self { a1, a2, s1, s2, lambda_bound }
    }

    pub fn identity() -> Self {
        Self::contrast(1.0, 1.0, 1.0, 1.0)
    }

    /// Isotropic constant media `A_j = a_j I`, `Σ_j = s_j`.
    pub fn contrast(a1: f64, a2: f64, s1: f64, s2: f64) -> Self {
        let mut cs = Self::new(
            MatrixField::scaled_identity(a1),
            MatrixField::scaled_identity(a2),
            ScalarField::constant(s1),
            ScalarField::constant(s2),
        );
        cs.lambda_bound = bound_of(&[a1, a2, s1, s2]);
        cs
    }

    /// `A₂ = I`, `A₁ = (1 + c d_Γ^α) I`, `Σ₁ = Σ₂ = 1`.
    pub fn graded_alpha(dom: &Domain, c: f64, alpha: f64) -> Result<Self> {
        let r = dom.inradius();
        let top = 1.0 + c * r.powf(alpha);
        if top <= 0.0 || 1.0 + c.min(0.0) * r.powf(alpha) <= 0.0 {
            return invalid("graded_alpha: A1 loses positivity");
        }
        let d = dom.clone();
        let a1 = MatrixField::new(
            move |x| Mat2::identity() * (1.0 + c * d.dist_to_boundary(x).powf(alpha)),
            bound_of(&[top, 1.0]),
        );
        Ok(Self::new(a1, MatrixField::scaled_identity(1.0), ScalarField::constant(1.0), ScalarField::constant(1.0)))
    }

    /// `A₁ = A₂ = I`, `Σ₂ = 1`, `Σ₁ = 1 + c d_Γ^β`.
    pub fn thm2_case(dom: &Domain, c: f64, beta: f64) -> Result<Self> {
        let r = dom.inradius();
        let top = 1.0 + c * r.powf(beta);
        if top <= 0.0 {
            return invalid("thm2_case: Σ1 loses positivity");
        }
        let d = dom.clone();
        let s1 = ScalarField::new(
            move |x| 1.0 + c * d.dist_to_boundary(x).powf(beta),
            bound_of(&[top, 1.0]),
        );
        Ok(Self::new(
            MatrixField::scaled_identity(1.0),
            MatrixField::scaled_identity(1.0),
            s1,
            ScalarField::constant(1.0),
        ))
    }

    /// Parses `identity`, `contrast(a1,a2,s1,s2)`, `graded_alpha(c,alpha)` or `thm2_case(c,beta)`.
    pub fn from_preset(text: &str, dom: &Domain) -> Result<Self> {
        let t = text.trim();
        let (name, args) = match t.find('(') {
            Some(i) => {
                if !t.ends_with(')') {
                    return invalid(format!("malformed preset `{t}`"));
                }
                let inner = &t[i + 1..t.len() - 1];
                let args: std::result::Result<Vec<f64>, _> =
                    inner.split(',').map(|s| s.trim().parse::<f64>()).collect();
                let args = args.map_err(|_| Error::Validation(format!("bad preset arguments in `{t}`")))?;
                (&t[..i], args)
            }
            None => (t, Vec::new()),
        };
        let want = |n: usize| -> Result<()> {
            if args.len() != n {
                return invalid(format!("preset `{name}` expects {n} arguments"));
            }
            Ok(())
        };
        match name.trim() {
            "identity" => {
                want(0)?;
                Ok(Self::identity())
            }
            "contrast" => {
                want(4)?;
                if args.iter().any(|&v| v <= 0.0) {
                    return invalid("contrast arguments must be positive");
                }
                Ok(Self::contrast(args[0], args[1], args[2], args[3]))
            }
            "graded_alpha" => {
                want(2)?;
                Self::graded_alpha(dom, args[0], args[1])
            }
            "thm2_case" => {
                want(2)?;
                Self::thm2_case(dom, args[0], args[1])
            }
            other => invalid(format!("unknown coefficient preset `{other}`")),
        }
    }

    #[inline]
    pub fn values(&self, x: &Point) -> CoeffValues {
        CoeffValues {
            a1: self.a1.eval(x),
            a2: self.a2.eval(x),
            s1: self.s1.eval(x),
            s2: self.s2.eval(x),
        }
    }

    /// Samples the ellipticity invariants with the shared bound Λ.
    pub fn verify_ellipticity(&self, dom: &Domain, samples: usize) -> Result<()> {
        let lam = self.lambda_bound;
        let slack = 1e-12 * lam;
        for x in dom.interior_samples(samples) {
            let v = self.values(&x);
            for (name, a) in [("A1", v.a1), ("A2", v.a2)] {
                check_symmetric(&a)?;
                let e = SymmetricEigen::new(a).eigenvalues;
                if e.min() < 1.0 / lam - slack || e.max() > lam + slack {
                    return invalid(format!(
                        "{name} eigenvalues [{}, {}] outside [1/Λ, Λ] at ({}, {})",
                        e.min(),
                        e.max(),
                        x.x,
                        x.y
                    ));
                }
            }
            for (name, s) in [("Σ1", v.s1), ("Σ2", v.s2)] {
                if s < 1.0 / lam - slack || s > lam + slack {
                    return invalid(format!("{name} = {s} outside [1/Λ, Λ] at ({}, {})", x.x, x.y));
                }
            }
        }
        Ok(())
    }
}

pub fn check_symmetric(a: &Mat2) -> Result<()> {
    let scale = a.norm().max(f64::MIN_POSITIVE);
    if (a - a.transpose()).norm() > 1e-12 * scale {
        return invalid("coefficient matrix not symmetric");
    }
    Ok(())
}

/// Returns `(A₁(x), A₂(x), Σ₁(x), Σ₂(x))` for `x` in the closure of `dom`.
pub fn eval_coefficients(cs: &CoefficientSet, dom: &Domain, x: &Point) -> Result<CoeffValues> {
    if !dom.contains(x, 1e-12) {
        return Err(Error::DomainViolation { x: x.x, y: x.y });
    }
    Ok(cs.values(x))
}

type MapFn = dyn Fn(&Point) -> Point + Send + Sync;

#[derive(Clone)]
pub struct Diffeomorphism {
    map: Arc<MapFn>,
    jacobian: Arc<MatFn>,
    pub boundary_fixed_tol: f64,
    pub domain: Option<Domain>,
}

impl fmt::Debug for Diffeomorphism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Diffeomorphism(tol={})", self.boundary_fixed_tol)
    }
}

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

impl Diffeomorphism {
    pub fn new(
        map: impl Fn(&Point) -> Point + Send + Sync + 'static,
        jacobian: impl Fn(&Point) -> Mat2 + Send + Sync + 'static,
    ) -> Self {
        Self { map: Arc::new(map), jacobian: Arc::new(jacobian), boundary_fixed_tol: 1e-10, domain: None }
    }

    pub fn identity() -> Self {
        Self::new(|x| *x, |_| Mat2::identity())
    }

    pub fn on_domain(mut self, dom: Domain) -> Self {
        self.domain = Some(dom);
        self
    }

    /// Radial map `x ↦ ρ(|x|) x/|x|` with `rho_over_r(r) = ρ(r)/r` and `drho(r) = ρ'(r)`.
    pub fn radial(
        rho_over_r: impl Fn(f64) -> f64 + Send + Sync + 'static,
        drho: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let q = Arc::new(rho_over_r);
        let dq = Arc::new(drho);
        let q2 = q.clone();
        Self::new(
            move |x| x * q(x.norm()),
            move |x| {
                let r = x.norm();
                let s = q2(r);
                if r < 1e-300 {
                    return Mat2::identity() * s;
                }
                let e = x / r;
                Mat2::identity() * s + e * e.transpose() * (dq(r) - s)
            },
        )
    }

    #[inline]
    pub fn apply(&self, x: &Point) -> Point {
        (self.map)(x)
    }

    #[inline]
    pub fn jacobian(&self, x: &Point) -> Mat2 {
        (self.jacobian)(x)
    }

    /// Damped Newton solve of `F(x) = y` started from `x = y`.
    pub fn inverse(&self, y: &Point) -> Result<Point> {
        let mut x = *y;
        let mut r = self.apply(&x) - y;
        let scale = 1.0 + y.norm();
        for _ in 0..NEWTON_MAX_ITER {
            let rn = r.norm();
            if rn <= NEWTON_TOL * scale {
                return Ok(x);
            }
            let j = self.jacobian(&x);
            let Some(ji) = j.try_inverse() else { break };
            let step = ji * r;
            let mut t = 1.0;
            loop {
                let xn = x - step * t;
                let rnew = self.apply(&xn) - y;
                if rnew.norm() < rn || t < 1e-4 {
                    x = xn;
                    r = rnew;
                    break;
                }
                t *= 0.5;
            }
        }
        if r.norm() <= NEWTON_TOL * scale {
            return Ok(x);
        }
        Err(Error::Inversion { x: y.x, y: y.y, iterations: NEWTON_MAX_ITER })
    }

    fn validation_points(&self) -> Vec<Point> {
        match &self.domain {
            Some(d) => d.interior_samples(256),
            None => (1..=256).map(|i| pt(2.0 * halton(i, 2) - 1.0, 2.0 * halton(i, 3) - 1.0)).collect(),
        }
    }

    /// Samples `det DF > 0` inside and `F(x) = x` on the boundary of `dom`.
    pub fn validate(&self, dom: &Domain, samples: usize) -> Result<()> {
        for x in dom.interior_samples(samples) {
            let det = self.jacobian(&x).determinant();
            if !(det > 0.0) {
                return Err(Error::InvalidDiffeomorphism(format!("det DF = {det} at ({}, {})", x.x, x.y)));
            }
        }
        for (x, _) in dom.boundary_samples(samples.max(16)) {
            let moved = (self.apply(&x) - x).norm();
            if moved > self.boundary_fixed_tol {
                return Err(Error::InvalidDiffeomorphism(format!(
                    "boundary point ({}, {}) moved by {moved:.3e}",
                    x.x, x.y
                )));
            }
        }
        Ok(())
    }
}

/// Change of variables `y = F(x)`: `F⁎A = DF A DFᵀ / det DF`, `F⁎Σ = Σ / det DF`.
pub fn pushforward(f: &Diffeomorphism, a: &MatrixField, s: &ScalarField) -> Result<(MatrixField, ScalarField)> {
    let mut lam_a = a.lambda_bound;
    let mut lam_s = s.lambda_bound;
    for x in f.validation_points() {
        let j = f.jacobian(&x);
        let det = j.determinant();
        if !(det > 0.0) {
            return Err(Error::InvalidDiffeomorphism(format!("det DF = {det} at ({}, {})", x.x, x.y)));
        }
        let y = f.apply(&x);
        f.inverse(&y)?;
        let pa = j * a.eval(&x) * j.transpose() / det;
        let e = SymmetricEigen::new(pa).eigenvalues;
        lam_a = lam_a.max(e.max()).max(1.0 / e.min());
        let ps = s.eval(&x) / det;
        lam_s = lam_s.max(ps).max(1.0 / ps);
    }
    let (fa, aa) = (f.clone(), a.clone());
    let pa = MatrixField::new(
        move |y| match fa.inverse(y) {
            Ok(x) => {
                let j = fa.jacobian(&x);
                let m = j * aa.eval(&x) * j.transpose() / j.determinant();
                (m + m.transpose()) * 0.5
            }
            Err(_) => Mat2::repeat(f64::NAN),
        },
        lam_a,
    );
    let (fs, ss) = (f.clone(), s.clone());
    let ps = ScalarField::new(
        move |y| match fs.inverse(y) {
            Ok(x) => ss.eval(&x) / fs.jacobian(&x).determinant(),
            Err(_) => f64::NAN,
        },
        lam_s,
    );
    Ok((pa, ps))
}
