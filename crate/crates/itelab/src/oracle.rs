//! Semi-analytic transmission eigenvalues of the unit disk with constant isotropic media.
//!
//! Convention: the oracle reports `λ = k²` for `div(a∇u) + λΣu = 0`; the spectral pipeline
//! works with `div(A∇u) − λΣu = 0`, so its real eigenvalues are the negatives of these.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::mesh::fmt_g17;

/// Bessel function of the first kind `J_m(x)` for integer `m ≥ 0` and real `x`.
pub fn bessel_j(m: u32, x: f64) -> f64 {
    let sign = if x < 0.0 && m % 2 == 1 { -1.0 } else { 1.0 };
    let x = x.abs();
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    sign * if x < 2.0 || x * x < 0.1 * (m as f64 + 1.0) { series(m, x) } else { miller(m, x).0 }
}

/// `J_m′(x)`.
pub fn bessel_jp(m: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if m == 1 { 0.5 } else { 0.0 };
    }
    if m == 0 {
        return -bessel_j(1, x);
    }
    0.5 * (bessel_j(m - 1, x) - bessel_j(m + 1, x))
}

fn series(m: u32, x: f64) -> f64 {
    let h = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=m {
        term *= h / k as f64;
    }
    let mut sum = term;
    let q = -h * h;
    for k in 1..200 {
        term *= q / (k as f64 * (k + m) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Backward recurrence normalized by `J₀ + 2 Σ J_{2k} = 1`; returns `(J_m, J_{m+1})`.
fn miller(m: u32, x: f64) -> (f64, f64) {
    let top = (m as f64).max(x);
    let mut n = (top + 20.0 + 10.0 * top.sqrt()) as usize + 2;
    if n % 2 == 1 {
        n += 1;
    }
    let mut jp1 = 0.0;
    let mut j = 1e-300;
    let mut norm = 0.0;
    let (mut jm, mut jm1) = (0.0, 0.0);
    for k in (1..=n).rev() {
        // j = J_k, jp1 = J_{k+1} (unnormalized).
        if k == m as usize {
            jm = j;
            jm1 = jp1;
        }
        if k % 2 == 0 {
            norm += 2.0 * j;
        }
        let jm_1 = 2.0 * k as f64 / x * j - jp1;
        jp1 = j;
        j = jm_1;
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
            jm *= 1e-250;
            jm1 *= 1e-250;
        }
    }
    if m == 0 {
        jm = j;
        jm1 = jp1;
    }
    norm += j;
    (jm / norm, jm1 / norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiskMedia {
    pub a1: f64,
    pub a2: f64,
    pub s1: f64,
    pub s2: f64,
}

impl DiskMedia {
    pub fn new(a1: f64, a2: f64, s1: f64, s2: f64) -> Self {
        Self { a1, a2, s1, s2 }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.a1, self.a2, self.s1, self.s2];
        if v.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return invalid("disk media must be positive");
        }
        if (self.a1 * self.s1 - self.a2 * self.s2).abs() <= 1e-12 * (self.a1 * self.s1).max(self.a2 * self.s2) {
            return invalid("degenerate disk media: a1*s1 = a2*s2");
        }
        Ok(())
    }

    pub fn wavenumbers(&self, lam: f64) -> (f64, f64) {
        ((lam * self.s1 / self.a1).sqrt(), (lam * self.s2 / self.a2).sqrt())
    }
}

/// Matching determinant of `u₁ = u₂`, `a₁∂_r u₁ = a₂∂_r u₂` at `r = 1` for angular order `m`.
pub fn disk_dispersion(media: &DiskMedia, m: u32, lam: f64) -> f64 {
    let (k1, k2) = media.wavenumbers(lam);
    -media.a2 * k2 * bessel_j(m, k1) * bessel_jp(m, k2) + media.a1 * k1 * bessel_j(m, k2) * bessel_jp(m, k1)
}

/// Radial eigenfunction pair `(J_m(k₂)J_m(k₁r), J_m(k₁)J_m(k₂r))·cos(mθ)` at `(x, y)`.
pub fn disk_eigenfunction(media: &DiskMedia, m: u32, lam: f64, x: f64, y: f64) -> (f64, f64) {
    let (k1, k2) = media.wavenumbers(lam);
    let r = x.hypot(y);
    let ang = (m as f64 * y.atan2(x)).cos();
    (bessel_j(m, k2) * bessel_j(m, k1 * r) * ang, bessel_j(m, k1) * bessel_j(m, k2 * r) * ang)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiskTe {
    pub lam: f64,
    pub m: u32,
    pub multiplicity_hint: u32,
    pub k1: f64,
    pub k2: f64,
}

fn polish(media: &DiskMedia, m: u32, mut a: f64, mut b: f64) -> f64 {
    let f = |l: f64| disk_dispersion(media, m, l);
    let mut fa = f(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fa < 0.0) == (fm < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
        if (b - a) <= 1e-13 * b {
            break;
        }
    }
    0.5 * (a + b)
}

fn scan(media: &DiskMedia, lam_max: f64, m_max: u32, dt: f64) -> Vec<DiskTe> {
    let tmax = lam_max.sqrt();
    let steps = (tmax / dt).ceil() as usize;
    let mut out = Vec::new();
    for m in 0..=m_max {
        let mut prev_t = 0.0;
        let mut prev_f: Option<f64> = None;
        for i in 1..=steps {
            let t = (i as f64 * dt).min(tmax);
            let fv = disk_dispersion(media, m, t * t);
            if let Some(pf) = prev_f {
                if pf != 0.0 && fv != 0.0 && (pf < 0.0) != (fv < 0.0) {
                    let lam = polish(media, m, prev_t * prev_t, t * t);
                    let (k1, k2) = media.wavenumbers(lam);
                    out.push(DiskTe { lam, m, multiplicity_hint: if m == 0 { 1 } else { 2 }, k1, k2 });
                }
            }
            prev_t = t;
            prev_f = Some(fv);
        }
    }
    out.sort_by(|a, b| a.lam.total_cmp(&b.lam).then(a.m.cmp(&b.m)));
    out
}

/// Real transmission eigenvalues in `(0, lam_max]` for angular orders `0..=m_max`.
pub fn find_disk_tes(media: &DiskMedia, lam_max: f64, m_max: u32) -> Result<Vec<DiskTe>> {
    media.validate()?;
    if !(lam_max > 0.0) {
        return invalid("lam_max must be positive");
    }
    // Grid uniform in √λ; a Bessel half-period in k is about π, keep 40 samples per period.
    let kscale = (media.s1 / media.a1).max(media.s2 / media.a2).sqrt();
    let mut dt = std::f64::consts::PI / (40.0 * kscale);
    let mut roots = scan(media, lam_max, m_max, dt);
    for _ in 0..3 {
        dt *= 0.5;
        let finer = scan(media, lam_max, m_max, dt);
        if finer.len() == roots.len() {
            return Ok(finer);
        }
        roots = finer;
    }
    Err(Error::NonConvergence(format!("disk root count unstable under grid halving ({} roots)", roots.len())))
}

pub fn tes_csv(tes: &[DiskTe]) -> String {
    let mut s = String::from("lambda,m,k1,k2\n");
    for t in tes {
        let _ = writeln!(s, "{},{},{},{}", fmt_g17(t.lam), t.m, fmt_g17(t.k1), fmt_g17(t.k2));
    }
    s
}
