//! Conforming P1 triangulations with an analytic boundary-distance field.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::geometry::{pt, signed_area, Domain, Point};

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub i: usize,
    pub j: usize,
    pub normal: Point,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub is_boundary: Vec<bool>,
    pub d_gamma: Vec<f64>,
    pub h_max: f64,
    pub domain: Domain,
}

pub const MIN_ANGLE_DEG: f64 = 20.0;
const SMOOTHING_PASSES: usize = 5;

fn tri_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * (b - a).perp(&(c - a))
}

impl Mesh {
    /// Assembles the derived fields (boundary edges, flags, distances, h_max).
    pub fn from_triangles(domain: Domain, vertices: Vec<Point>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        for t in triangles.iter_mut() {
            if tri_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
        }
        let mut count: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let e = count.entry(key).or_insert((0, a, b));
                e.0 += 1;
            }
        }
        let mut boundary_edges = Vec::new();
        let mut is_boundary = vec![false; vertices.len()];
        let mut keys: Vec<_> = count.iter().filter(|(_, v)| v.0 == 1).map(|(k, v)| (*k, v.1, v.2)).collect();
        keys.sort();
        for (_, a, b) in keys {
            let d = vertices[b] - vertices[a];
            let normal = pt(d.y, -d.x) / d.norm();
            is_boundary[a] = true;
            is_boundary[b] = true;
            boundary_edges.push(BoundaryEdge { i: a, j: b, normal });
        }
        let d_gamma = vertices
            .iter()
            .zip(&is_boundary)
            .map(|(p, &b)| if b { 0.0 } else { domain.dist_to_boundary(p) })
            .collect();
        let mut m = Mesh { vertices, triangles, boundary_edges, is_boundary, d_gamma, h_max: 0.0, domain };
        m.h_max = m.compute_h_max();
        m.check()?;
        Ok(m)
    }

    fn compute_h_max(&self) -> f64 {
        let mut h: f64 = 0.0;
        for t in &self.triangles {
            for k in 0..3 {
                h = h.max((self.vertices[t[k]] - self.vertices[t[(k + 1) % 3]]).norm());
            }
        }
        h
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        tri_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Gradients of the three barycentric basis functions on triangle `t`.
    pub fn gradients(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let two_area = (pb - pa).perp(&(pc - pa));
        let g = |p: Point, q: Point| pt(p.y - q.y, q.x - p.x) / two_area;
        [g(pb, pc), g(pc, pa), g(pa, pb)]
    }

    /// Edge midpoints `m01, m12, m20` (the quadrature nodes).
    pub fn midpoints(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [(pa + pb) * 0.5, (pb + pc) * 0.5, (pc + pa) * 0.5]
    }

    pub fn barycenter(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    pub fn touches_boundary(&self, t: usize) -> bool {
        self.triangles[t].iter().any(|&v| self.is_boundary[v])
    }

    pub fn edge_count(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    pub fn min_angle_deg(&self) -> f64 {
        let mut m = 180.0f64;
        for t in &self.triangles {
            for k in 0..3 {
                let p = self.vertices[t[k]];
                let u = self.vertices[t[(k + 1) % 3]] - p;
                let v = self.vertices[t[(k + 2) % 3]] - p;
                let ang = (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos();
                m = m.min(ang.to_degrees());
            }
        }
        m
    }

    /// Structural invariants: orientation, conformity, closed boundary loops, distance field.
    pub fn check(&self) -> Result<()> {
        for (k, t) in self.triangles.iter().enumerate() {
            if self.area(k) <= 1e-14 {
                return invalid(format!("triangle {k} {t:?} degenerate or negatively oriented"));
            }
        }
        let mut uses: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        if uses.values().any(|&u| u > 2) {
            return invalid("non-conforming mesh: edge shared by more than two triangles");
        }
        let mut deg = vec![0usize; self.vertices.len()];
        for e in &self.boundary_edges {
            deg[e.i] += 1;
            deg[e.j] += 1;
        }
        if deg.iter().zip(&self.is_boundary).any(|(&d, &b)| b && d != 2) {
            return invalid("boundary edges do not form closed loops");
        }
        for (v, (&d, &b)) in self.d_gamma.iter().zip(&self.is_boundary).enumerate() {
            if (b && d != 0.0) || (!b && d <= 0.0) {
                return invalid(format!("distance field invalid at vertex {v}"));
            }
        }
        Ok(())
    }

    fn gate_quality(self) -> Result<Self> {
        let a = self.min_angle_deg();
        if a < MIN_ANGLE_DEG {
            return Err(Error::MeshQuality { min_angle_deg: a });
        }
        Ok(self)
    }

    /// Uniform red refinement; boundary midpoints are projected onto curved boundaries.
    pub fn refine(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let boundary_pairs: std::collections::HashSet<(usize, usize)> =
            self.boundary_edges.iter().map(|e| (e.i.min(e.j), e.i.max(e.j))).collect();
        let curved = matches!(self.domain, Domain::UnitDisk | Domain::Annulus { .. });
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut get_mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let mut p = (vertices[a] + vertices[b]) * 0.5;
                if curved && boundary_pairs.contains(&key) {
                    p = self.domain.project_to_boundary(&p);
                }
                vertices.push(p);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = get_mid(a, b, &mut vertices);
            let bc = get_mid(b, c, &mut vertices);
            let ca = get_mid(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Mesh::from_triangles(self.domain.clone(), vertices, triangles)
            .expect("red refinement preserves mesh validity")
    }

    pub fn refine_times(&self, k: usize) -> Mesh {
        let mut m = self.clone();
        for _ in 0..k {
            m = m.refine();
        }
        m
    }

    pub fn write_ascii(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.vertices.len(), self.triangles.len(), self.boundary_edges.len());
        for (v, p) in self.vertices.iter().enumerate() {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                fmt_g17(p.x),
                fmt_g17(p.y),
                fmt_g17(self.d_gamma[v]),
                self.is_boundary[v] as u8
            );
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.boundary_edges {
            let _ = writeln!(s, "{} {} {} {}", e.i, e.j, fmt_g17(e.normal.x), fmt_g17(e.normal.y));
        }
        s
    }

    pub fn read_ascii(text: &str, domain: Domain) -> Result<Mesh> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |what: &str| Error::Parse(format!("mesh file: {what}"));
        let head: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing header"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad header")))
            .collect::<Result<_>>()?;
        if head.len() != 3 {
            return Err(bad("header needs `nv nt nbe`"));
        }
        let (nv, nt, nb) = (head[0], head[1], head[2]);
        let mut vertices = Vec::with_capacity(nv);
        let mut d_gamma = Vec::with_capacity(nv);
        let mut is_boundary = Vec::with_capacity(nv);
        for _ in 0..nv {
            let f: Vec<&str> = lines.next().ok_or_else(|| bad("truncated vertices"))?.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad("vertex line needs `x y d_gamma is_boundary`"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            vertices.push(pt(num(f[0])?, num(f[1])?));
            d_gamma.push(num(f[2])?);
            is_boundary.push(f[3] == "1");
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let f: Vec<usize> = lines
                .next()
                .ok_or_else(|| bad("truncated triangles"))?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad index")))
                .collect::<Result<_>>()?;
            if f.len() != 3 || f.iter().any(|&i| i >= nv) {
                return Err(bad("triangle line needs three valid indices"));
            }
            triangles.push([f[0], f[1], f[2]]);
        }
        let mut boundary_edges = Vec::with_capacity(nb);
        for _ in 0..nb {
            let f: Vec<&str> = lines.next().ok_or_else(|| bad("truncated edges"))?.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad("edge line needs `i j nx ny`"));
            }
            let idx = |s: &str| s.parse::<usize>().map_err(|_| bad("bad index"));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            boundary_edges.push(BoundaryEdge { i: idx(f[0])?, j: idx(f[1])?, normal: pt(num(f[2])?, num(f[3])?) });
        }
        let mut m = Mesh { vertices, triangles, boundary_edges, is_boundary, d_gamma, h_max: 0.0, domain };
        m.h_max = m.compute_h_max();
        m.check()?;
        Ok(m)
    }
}

/// C-style `%.17g` rendering.
pub fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.16e}", x);
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        strip(&format!("{:.*}", decimals, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", strip(mant), sign, exp.abs())
    }
}

fn laplacian_smooth(vertices: &mut [Point], triangles: &[[usize; 3]], fixed: &[bool], passes: usize) {
    let n = vertices.len();
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if !nbrs[a].contains(&b) {
                nbrs[a].push(b);
            }
            if !nbrs[b].contains(&a) {
                nbrs[b].push(a);
            }
        }
    }
    for _ in 0..passes {
        let old = vertices.to_vec();
        for v in 0..n {
            if fixed[v] || nbrs[v].is_empty() {
                continue;
            }
            let s: Point = nbrs[v].iter().map(|&u| old[u]).sum();
            vertices[v] = s / nbrs[v].len() as f64;
        }
    }
}

fn square_mesh(n: usize) -> (Vec<Point>, Vec<[usize; 3]>) {
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut v = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            v.push(pt(i as f64 / n as f64, j as f64 / n as f64));
        }
    }
    let mut t = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            t.push([a, b, c]);
            t.push([a, c, d]);
        }
    }
    (v, t)
}

/// Concentric rings `k = 0..n` with `6k` vertices each; boundary is a `6n`-gon.
fn disk_mesh(n: usize) -> (Vec<Point>, Vec<[usize; 3]>, Vec<bool>) {
    let start = |k: usize| if k == 0 { 0 } else { 1 + 3 * k * (k - 1) };
    let mut v = vec![pt(0.0, 0.0)];
    for k in 1..=n {
        let r = k as f64 / n as f64;
        for j in 0..6 * k {
            let th = 2.0 * PI * j as f64 / (6 * k) as f64;
            v.push(pt(r * th.cos(), r * th.sin()));
        }
    }
    let id = |k: usize, j: usize| if k == 0 { 0 } else { start(k) + j % (6 * k) };
    let mut t = Vec::with_capacity(6 * n * n);
    for k in 0..n {
        for s in 0..6 {
            let inner = |i: usize| id(k, s * k + i);
            let outer = |i: usize| id(k + 1, s * (k + 1) + i);
            for i in 0..=k {
                t.push([inner(i), outer(i), outer(i + 1)]);
            }
            for i in 0..k {
                t.push([inner(i), outer(i + 1), inner(i + 1)]);
            }
        }
    }
    let fixed = (0..v.len()).map(|i| i >= start(n)).collect();
    (v, t, fixed)
}

fn annulus_mesh(r_in: f64, n: usize) -> (Vec<Point>, Vec<[usize; 3]>, Vec<bool>) {
    let dr = (1.0 - r_in) / n as f64;
    let m = ((PI * (1.0 + r_in) / dr).ceil() as usize).max(6);
    let mut v = Vec::with_capacity((n + 1) * m);
    let mut fixed = Vec::with_capacity((n + 1) * m);
    for k in 0..=n {
        let r = r_in + k as f64 * dr;
        for j in 0..m {
            let th = 2.0 * PI * (j as f64 + 0.5 * (k % 2) as f64) / m as f64;
            v.push(pt(r * th.cos(), r * th.sin()));
            fixed.push(k == 0 || k == n);
        }
    }
    let id = |k: usize, j: usize| k * m + j % m;
    let mut t = Vec::with_capacity(2 * n * m);
    for k in 0..n {
        for j in 0..m {
            if k % 2 == 0 {
                t.push([id(k, j), id(k, j + 1), id(k + 1, j)]);
                t.push([id(k, j + 1), id(k + 1, j + 1), id(k + 1, j)]);
            } else {
                t.push([id(k, j), id(k + 1, j + 1), id(k + 1, j)]);
                t.push([id(k, j), id(k, j + 1), id(k + 1, j + 1)]);
            }
        }
    }
    (v, t, fixed)
}

fn polygon_fan(poly: &[Point]) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let n = poly.len();
    let c: Point = poly.iter().sum::<Point>() / n as f64;
    for i in 0..n {
        if tri_area(&c, &poly[i], &poly[(i + 1) % n]) <= 0.0 {
            return invalid("polygon meshing requires star-shape about the vertex centroid");
        }
    }
    let mut v = poly.to_vec();
    v.push(c);
    let t = (0..n).map(|i| [n, i, (i + 1) % n]).collect();
    Ok((v, t))
}

/// Builds the mesh of `dom` at resolution `n` and enforces the minimum-angle gate.
pub fn build_mesh(dom: &Domain, n: usize) -> Result<Mesh> {
    if n == 0 {
        return invalid("mesh resolution must be at least 1");
    }
    dom.validate()?;
    let m = match dom {
        Domain::UnitSquare => {
            let (v, t) = square_mesh(n);
            Mesh::from_triangles(dom.clone(), v, t)?
        }
        Domain::UnitDisk => {
            let (mut v, t, fixed) = disk_mesh(n);
            laplacian_smooth(&mut v, &t, &fixed, SMOOTHING_PASSES);
            Mesh::from_triangles(dom.clone(), v, t)?
        }
        Domain::Annulus { r_inner } => {
            let (mut v, t, fixed) = annulus_mesh(*r_inner, n);
            laplacian_smooth(&mut v, &t, &fixed, SMOOTHING_PASSES);
            Mesh::from_triangles(dom.clone(), v, t)?
        }
        Domain::Polygon(poly) => {
            let (v, t) = polygon_fan(poly)?;
            if signed_area(poly) <= 0.0 {
                return invalid("polygon orientation");
            }
            let base = Mesh::from_triangles(dom.clone(), v, t)?;
            let levels = (n as f64).log2().ceil() as usize;
            base.refine_times(levels)
        }
    };
    m.gate_quality()
}
