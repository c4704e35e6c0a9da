//! Sampled checks of the discreteness hypotheses on a coefficient set.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::geometry::{pt, pushforward, CoefficientSet, Diffeomorphism, Domain, Mat2, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Hypothesis {
    #[serde(rename = "thm1")]
    Thm1,
    #[serde(rename = "thm2")]
    Thm2,
    #[serde(rename = "thm3")]
    Thm3,
    #[serde(rename = "thm4")]
    Thm4,
    #[serde(rename = "pro_A1A2")]
    ProA1A2,
}

impl Hypothesis {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "thm1" => Self::Thm1,
            "thm2" => Self::Thm2,
            "thm3" => Self::Thm3,
            "thm4" => Self::Thm4,
            "pro_A1A2" | "pro_a1a2" => Self::ProA1A2,
            other => return invalid(format!("unknown hypothesis `{other}`")),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HypothesisParams {
    pub alpha_or_beta: f64,
    pub tau: f64,
    pub sample_count: usize,
    /// `holds` requires `best_c > slack`.
    pub slack: f64,
}

impl HypothesisParams {
    pub fn new(alpha_or_beta: f64, tau: f64, sample_count: usize) -> Self {
        Self { alpha_or_beta, tau, sample_count, slack: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub x: f64,
    pub y: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub hypothesis: Hypothesis,
    pub holds: bool,
    pub best_c: f64,
    pub alpha_or_beta: f64,
    pub tau: f64,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    #[serde(rename = "Lambda2")]
    pub lambda2: Option<f64>,
    pub witnesses: Vec<Witness>,
    pub samples: usize,
    pub projected_samples: usize,
    pub skipped_corners: usize,
    pub sigma_integral: Option<f64>,
    pub notes: Vec<String>,
}

impl HypothesisReport {
    fn empty(hypothesis: Hypothesis, alpha_or_beta: f64, tau: f64) -> Self {
        Self {
            hypothesis,
            holds: false,
            best_c: 0.0,
            alpha_or_beta,
            tau,
            k: None,
            lambda2: None,
            witnesses: vec![],
            samples: 0,
            projected_samples: 0,
            skipped_corners: 0,
            sigma_integral: None,
            notes: vec![],
        }
    }

    fn witness(&mut self, p: &Point, reason: impl Into<String>) {
        const MAX_WITNESSES: usize = 64;
        if self.witnesses.len() < MAX_WITNESSES {
            self.witnesses.push(Witness { x: p.x, y: p.y, reason: reason.into() });
        }
    }
}

const WITNESS_TOL: f64 = 1e-12;
const PROJECTION_STEP: f64 = 1e-9;

fn lambda_min(m: &Mat2) -> f64 {
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min()
}

/// Quasi-random points with `d_Γ < tau` (all of Ω when `tau` is infinite), plus the number of
/// samples that had to be moved off the boundary.
fn band_samples(dom: &Domain, tau: f64, count: usize) -> (Vec<(Point, f64)>, usize) {
    let center = {
        let (lo, hi) = dom.bounding_box();
        (lo + hi) * 0.5
    };
    let mut n = count.max(16) * 2;
    loop {
        let mut projected = 0;
        let mut out = Vec::with_capacity(count);
        for p in dom.interior_samples(n) {
            let mut q = p;
            let mut d = dom.dist_to_boundary(&q);
            if d <= 0.0 {
                let dir = (center - q).try_normalize(0.0).unwrap_or(pt(1.0, 0.0));
                q += dir * PROJECTION_STEP;
                d = dom.dist_to_boundary(&q);
                projected += 1;
            }
            if d < tau {
                out.push((q, d));
            }
        }
        if out.len() >= count || n >= 1 << 20 {
            return (out, projected);
        }
        n *= 2;
    }
}

pub fn check_hypothesis(cs: &CoefficientSet, dom: &Domain, hyp: Hypothesis, p: HypothesisParams) -> Result<HypothesisReport> {
    if !(p.tau > 0.0) {
        return invalid("tau must be positive");
    }
    if p.sample_count < 100 {
        return invalid("sample_count must be at least 100");
    }
    if !(0.0..2.0).contains(&p.alpha_or_beta) {
        return invalid("alpha/beta must lie in [0, 2)");
    }
    if hyp == Hypothesis::Thm4 {
        return check_thm4(cs, dom, p.sample_count);
    }
    let mut r = HypothesisReport::empty(hyp, p.alpha_or_beta, p.tau);
    let tau = if hyp == Hypothesis::ProA1A2 { f64::INFINITY } else { p.tau };
    let (samples, projected) = band_samples(dom, tau, p.sample_count);
    r.samples = samples.len();
    r.projected_samples = projected;
    if samples.is_empty() {
        return invalid("no samples fall inside the boundary band");
    }
    let mut best = f64::INFINITY;
    let mut ok = true;
    for (x, d) in &samples {
        let v = cs.values(x);
        let w = d.powf(p.alpha_or_beta);
        match hyp {
            Hypothesis::Thm1 | Hypothesis::Thm3 | Hypothesis::ProA1A2 => {
                let lm = lambda_min(&(v.a1 - v.a2));
                best = best.min(lm / w);
                if lm <= 0.0 {
                    ok = false;
                    r.witness(x, format!("lambda_min(A1 - A2) = {lm:.3e}"));
                }
                if hyp == Hypothesis::Thm1 && v.s1 - v.s2 < -WITNESS_TOL {
                    ok = false;
                    r.witness(x, format!("S1 - S2 = {:.3e}", v.s1 - v.s2));
                }
            }
            Hypothesis::Thm2 => {
                let gap = (v.a1 - v.a2).norm();
                if gap > 1e-10 {
                    ok = false;
                    r.witness(x, format!("|A1 - A2| = {gap:.3e}"));
                }
                let ds = v.s1 - v.s2;
                best = best.min(ds / w);
                if ds <= 0.0 {
                    ok = false;
                    r.witness(x, format!("S1 - S2 = {ds:.3e}"));
                }
            }
            Hypothesis::Thm4 => unreachable!(),
        }
    }
    if hyp == Hypothesis::Thm3 {
        let s2: Vec<f64> = dom.interior_samples(p.sample_count).iter().map(|x| cs.values(x).s2).collect();
        let k = s2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let kmin = s2.iter().copied().fold(f64::INFINITY, f64::min);
        r.k = Some(k);
        r.lambda2 = Some(kmin / k);
        r.notes.push("K is reported, not certified against the threshold K(Lambda2)".into());
    }
    if hyp == Hypothesis::ProA1A2 {
        let mean = samples.iter().map(|(x, _)| {
            let v = cs.values(x);
            v.s1 - v.s2
        });
        let integral = dom.area() * mean.sum::<f64>() / samples.len() as f64;
        r.sigma_integral = Some(integral);
        if integral.abs() <= 1e-8 * dom.area() {
            ok = false;
            r.notes.push(format!("integral of S1 - S2 = {integral:.3e} is numerically zero"));
        }
    }
    r.best_c = best.max(0.0);
    r.holds = ok && r.best_c > p.slack && r.witnesses.is_empty();
    if projected > 0 {
        r.notes.push(format!("{projected} samples projected inward by {PROJECTION_STEP:e}"));
    }
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Complementing {
    pub holds: bool,
    /// Smallest eigenvalue magnitude of `M₁ − M₂`, signed by the common sign (0 when indefinite).
    pub margin: f64,
}

pub const COMPLEMENTING_TOL: f64 = 1e-10;

fn validate_spd(a: &DMatrix<f64>, name: &str) -> Result<()> {
    if !a.is_square() {
        return invalid(format!("{name} is not square"));
    }
    if (a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
        return invalid(format!("{name} is not symmetric"));
    }
    if !(a.clone().symmetric_eigenvalues().min() > 0.0) {
        return invalid(format!("{name} is not positive definite"));
    }
    Ok(())
}

/// Orthonormal basis of `e^⊥` from the Householder reflection sending `e` to a coordinate axis.
pub fn orthogonal_complement(e: &DVector<f64>) -> DMatrix<f64> {
    let d = e.len();
    let k = e.iamax();
    let s = if e[k] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = e.clone();
    w[k] += s;
    let w = w.normalize();
    let h = DMatrix::identity(d, d) - &w * w.transpose() * 2.0;
    let cols: Vec<usize> = (0..d).filter(|&c| c != k).collect();
    h.select_columns(&cols)
}

pub fn check_complementing(a1: &DMatrix<f64>, a2: &DMatrix<f64>, e: &DVector<f64>) -> Result<Complementing> {
    validate_spd(a1, "A1")?;
    validate_spd(a2, "A2")?;
    if a1.shape() != a2.shape() || e.len() != a1.nrows() {
        return invalid("dimension mismatch");
    }
    if (e.norm() - 1.0).abs() > 1e-10 {
        return invalid("e must be a unit vector");
    }
    let p = orthogonal_complement(e);
    let m = |a: &DMatrix<f64>| {
        let ae = a * e;
        let pae = p.transpose() * &ae;
        p.transpose() * a * &p * e.dot(&ae) - &pae * pae.transpose()
    };
    let diff = m(a1) - m(a2);
    let diff = (&diff + diff.transpose()) * 0.5;
    let eig = diff.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let margin = if lo > 0.0 {
        lo
    } else if hi < 0.0 {
        hi
    } else {
        0.0
    };
    Ok(Complementing { holds: margin.abs() > COMPLEMENTING_TOL, margin })
}

fn to_dmatrix(m: &Mat2) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]])
}

pub fn check_thm4(cs: &CoefficientSet, dom: &Domain, boundary_samples: usize) -> Result<HypothesisReport> {
    if boundary_samples < 64 {
        return invalid("boundary_samples must be at least 64");
    }
    let mut r = HypothesisReport::empty(Hypothesis::Thm4, 0.0, 0.0);
    let mut best = f64::INFINITY;
    for (x, nu) in dom.boundary_samples(boundary_samples) {
        let Some(nu) = nu else {
            r.skipped_corners += 1;
            continue;
        };
        r.samples += 1;
        let v = cs.values(&x);
        let e = DVector::from_vec(vec![nu.x, nu.y]);
        let c = check_complementing(&to_dmatrix(&v.a1), &to_dmatrix(&v.a2), &e)?;
        let contrast = (v.a1 * nu).dot(&nu) * v.s1 - (v.a2 * nu).dot(&nu) * v.s2;
        if !c.holds {
            r.witness(&x, format!("complementing condition fails (margin {:.3e})", c.margin));
        }
        if contrast.abs() <= 1e-10 {
            r.witness(&x, format!("<A1 nu,nu> S1 - <A2 nu,nu> S2 = {contrast:.3e}"));
        }
        best = best.min(c.margin.abs()).min(contrast.abs());
    }
    if r.samples == 0 {
        return invalid("no boundary sample has a defined normal");
    }
    if r.skipped_corners > 0 {
        r.notes.push(format!("{} corner samples skipped", r.skipped_corners));
    }
    r.best_c = best;
    r.holds = r.witnesses.is_empty() && best > 0.0;
    if !r.holds {
        r.best_c = 0.0;
    }
    Ok(r)
}

/// Replaces `(A₁, Σ₁)` by their pushforward under `f` and runs `check_hypothesis`.
pub fn check_with_pushforward(
    cs: &CoefficientSet,
    dom: &Domain,
    f: &Diffeomorphism,
    hyp: Hypothesis,
    p: HypothesisParams,
) -> Result<HypothesisReport> {
    f.validate(dom, 256)?;
    let (a1, s1) = pushforward(f, &cs.a1, &cs.s1)?;
    let pushed = CoefficientSet::new(a1, cs.a2.clone(), s1, cs.s2.clone());
    check_hypothesis(&pushed, dom, hyp, p)
}
