//! Config parsing and command dispatch for the `itelab` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::assembly::{assemble_rhs, assemble_system, build_dofmap, SourceData, Variant};
use crate::conditions::{check_complementing, check_hypothesis, Hypothesis, HypothesisParams};
use crate::diagnostics::{energy_identity_residuals, verify_decay, SingleField};
use crate::error::{Error, Result};
use crate::geometry::{pt, CoefficientSet, Domain};
use crate::halfspace::{compute_modes, modes_csv, verify_halfspace_estimate, HalfSpaceProblem};
use crate::mesh::{build_mesh, fmt_g17, Mesh};
use crate::oracle::{find_disk_tes, tes_csv, DiskMedia};
use crate::solver::{factorize, limiting_absorption, solve, FieldPair, SweepParams, DEFAULT_SCHEDULE};
use crate::spectral::{arnoldi_eigs_seeded, default_lambda0, t3_fixed_point, OperatorT, TKind, DEFAULT_SEED};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Check,
    Solve,
    Eigs,
    HalfSpace,
    Decay,
    Oracle,
    Verify,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_IO: i32 = 1;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub domain: Domain,
    pub mesh_n: usize,
    pub refine: usize,
    pub preset: String,

    pub hypothesis: Hypothesis,
    pub alpha: f64,
    pub beta: f64,
    /// `None` means `0.2 · diam Ω`.
    pub tau: Option<f64>,
    pub slack: f64,
    pub samples: usize,

    /// `None` means the mesh-dependent default shift.
    pub lambda0: Option<f64>,
    pub deltas: Vec<f64>,
    pub variant: Variant,
    pub identity_tol: f64,

    pub operator: String,
    pub k: usize,
    pub spectral_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub spectral_delta: f64,
    pub t3_lambda: f64,

    pub hs_a1: f64,
    pub hs_a2: f64,
    pub hs_s1: f64,
    pub hs_s2: f64,
    pub lattice_n: usize,
    pub period: f64,
    pub hs_mode: i64,
    pub lam_min: f64,
    pub lam_max: f64,
    pub lam_count: usize,

    pub decay_lambdas: Vec<f64>,
    pub decay_band: f64,
    pub decay_imaginary: bool,

    pub oracle_media: [f64; 4],
    pub oracle_lam_max: f64,
    pub oracle_m_max: u32,

    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: Domain::UnitDisk,
            mesh_n: 16,
            refine: 0,
            preset: "contrast(2,1,2,1)".into(),
            hypothesis: Hypothesis::Thm1,
            alpha: 0.0,
            beta: 0.0,
            tau: None,
            slack: 0.0,
            samples: 1000,
            lambda0: None,
            deltas: DEFAULT_SCHEDULE.to_vec(),
            variant: Variant::Sys1RealShift,
            identity_tol: 1e-8,
            operator: "T1".into(),
            k: 6,
            spectral_tol: 1e-10,
            max_iter: 300,
            seed: DEFAULT_SEED,
            spectral_delta: 0.0,
            t3_lambda: 20.0,
            hs_a1: 2.0,
            hs_a2: 1.0,
            hs_s1: 1.0,
            hs_s2: 1.0,
            lattice_n: 256,
            period: 4.0 * std::f64::consts::TAU,
            hs_mode: 1,
            lam_min: 1.0,
            lam_max: 1e4,
            lam_count: 9,
            decay_lambdas: vec![100.0, 200.0, 400.0, 800.0],
            decay_band: 0.25,
            decay_imaginary: false,
            oracle_media: [1.0, 1.0, 4.0, 1.0],
            oracle_lam_max: 60.0,
            oracle_m_max: 6,
            out_dir: PathBuf::from("out"),
        }
    }
}

pub fn parse_domain(s: &str) -> Result<Domain> {
    let t = s.trim();
    if t == "unit_disk" {
        return Ok(Domain::UnitDisk);
    }
    if t == "unit_square" {
        return Ok(Domain::UnitSquare);
    }
    let inner = |prefix: &str| t.strip_prefix(prefix).and_then(|r| r.strip_suffix(')'));
    if let Some(r) = inner("annulus(") {
        let r_inner: f64 = r.trim().parse().map_err(|_| Error::Parse(format!("bad annulus radius `{r}`")))?;
        let d = Domain::Annulus { r_inner };
        d.validate()?;
        return Ok(d);
    }
    if let Some(body) = inner("polygon(") {
        let mut v = Vec::new();
        for pair in body.split(';') {
            let xy: Vec<f64> = pair
                .split_whitespace()
                .map(|w| w.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse(format!("bad polygon vertex `{pair}`")))?;
            if xy.len() != 2 {
                return Err(Error::Parse(format!("polygon vertex `{pair}` needs two coordinates")));
            }
            v.push(pt(xy[0], xy[1]));
        }
        return Domain::polygon(v);
    }
    Err(Error::Parse(format!("unknown domain `{t}`")))
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|w| w.trim().parse::<f64>().map_err(|_| format!("`{}` is not a number", w.trim()))).collect()
}

fn parse_num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.trim().parse::<T>().map_err(|_| format!("cannot parse `{}`", s.trim()))
}

fn parse_auto(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.trim() == "auto" {
        Ok(None)
    } else {
        parse_num(s).map(Some)
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        o => Err(format!("`{o}` is not a boolean")),
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let e = |r: Result<()>| r.map_err(|e| e.to_string());
        match key {
            "domain.domain" | "domain.shape" => self.domain = parse_domain(value).map_err(|e| e.to_string())?,
            "domain.mesh_n" => self.mesh_n = parse_num(value)?,
            "domain.refine" => self.refine = parse_num(value)?,
            "coefficients.preset" => {
                e(CoefficientSet::from_preset(value, &self.domain).map(|_| ()))?;
                self.preset = value.trim().to_string();
            }
            "hypothesis.name" => self.hypothesis = Hypothesis::parse(value).map_err(|e| e.to_string())?,
            "hypothesis.alpha" => self.alpha = parse_num(value)?,
            "hypothesis.beta" => self.beta = parse_num(value)?,
            "hypothesis.tau" => self.tau = parse_auto(value)?,
            "hypothesis.slack" => self.slack = parse_num(value)?,
            "hypothesis.samples" => self.samples = parse_num(value)?,
            "solver.lambda0" => self.lambda0 = parse_auto(value)?,
            "solver.deltas" => self.deltas = parse_list(value)?,
            "solver.variant" => self.variant = Variant::parse(value).map_err(|e| e.to_string())?,
            "solver.identity_tol" => self.identity_tol = parse_num(value)?,
            "spectral.operator" => {
                let v = value.trim();
                if !matches!(v, "T1" | "T2" | "T3" | "T4") {
                    return Err(format!("unknown operator `{v}`"));
                }
                self.operator = v.to_string();
            }
            "spectral.k" => self.k = parse_num(value)?,
            "spectral.tol" => self.spectral_tol = parse_num(value)?,
            "spectral.max_iter" => self.max_iter = parse_num(value)?,
            "spectral.seed" => self.seed = parse_num(value)?,
            "spectral.delta" => self.spectral_delta = parse_num(value)?,
            "spectral.t3_lambda" => self.t3_lambda = parse_num(value)?,
            "halfspace.a1" => self.hs_a1 = parse_num(value)?,
            "halfspace.a2" => self.hs_a2 = parse_num(value)?,
            "halfspace.s1" => self.hs_s1 = parse_num(value)?,
            "halfspace.s2" => self.hs_s2 = parse_num(value)?,
            "halfspace.lattice_n" => self.lattice_n = parse_num(value)?,
            "halfspace.period" => self.period = parse_num(value)?,
            "halfspace.mode" => self.hs_mode = parse_num(value)?,
            "halfspace.lam_min" => self.lam_min = parse_num(value)?,
            "halfspace.lam_max" => self.lam_max = parse_num(value)?,
            "halfspace.lam_count" => self.lam_count = parse_num(value)?,
            "decay.lambdas" => self.decay_lambdas = parse_list(value)?,
            "decay.band" => self.decay_band = parse_num(value)?,
            "decay.imaginary" => self.decay_imaginary = parse_bool(value)?,
            "oracle.media" => {
                let v = parse_list(value)?;
                if v.len() != 4 {
                    return Err("oracle.media needs four values a1,a2,s1,s2".into());
                }
                self.oracle_media = [v[0], v[1], v[2], v[3]];
            }
            "oracle.lam_max" => self.oracle_lam_max = parse_num(value)?,
            "oracle.m_max" => self.oracle_m_max = parse_num(value)?,
            "output.dir" => self.out_dir = PathBuf::from(value.trim()),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn tau_value(&self) -> f64 {
        self.tau.unwrap_or(0.2 * self.domain.diameter())
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        CoefficientSet::from_preset(&self.preset, &self.domain)
    }

    pub fn kind(&self) -> TKind {
        match self.operator.as_str() {
            "T2" => TKind::T2,
            "T3" => TKind::T3 { lambda: C64::new(self.t3_lambda, 0.0) },
            "T4" => TKind::T4,
            _ => TKind::T1,
        }
    }

    /// Effective configuration in the same `key = value` syntax.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| fmt_g17(*x)).collect::<Vec<_>>().join(",");
        let auto = |v: Option<f64>| v.map_or("auto".to_string(), fmt_g17);
        let domain = match &self.domain {
            Domain::Polygon(v) => {
                format!("polygon({})", v.iter().map(|p| format!("{} {}", fmt_g17(p.x), fmt_g17(p.y))).collect::<Vec<_>>().join("; "))
            }
            d => d.name(),
        };
        let hyp = serde_json::to_value(self.hypothesis).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let variant = serde_json::to_value(self.variant).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let mut s = String::new();
        let _ = writeln!(s, "[domain]\ndomain = {domain}\nmesh_n = {}\nrefine = {}\n", self.mesh_n, self.refine);
        let _ = writeln!(s, "[coefficients]\npreset = {}\n", self.preset);
        let _ = writeln!(
            s,
            "[hypothesis]\nname = {hyp}\nalpha = {}\nbeta = {}\ntau = {}\nslack = {}\nsamples = {}\n",
            fmt_g17(self.alpha),
            fmt_g17(self.beta),
            auto(self.tau),
            fmt_g17(self.slack),
            self.samples
        );
        let _ = writeln!(
            s,
            "[solver]\nlambda0 = {}\ndeltas = {}\nvariant = {variant}\nidentity_tol = {}\n",
            auto(self.lambda0),
            list(&self.deltas),
            fmt_g17(self.identity_tol)
        );
        let _ = writeln!(
            s,
            "[spectral]\noperator = {}\nk = {}\ntol = {}\nmax_iter = {}\nseed = {}\ndelta = {}\nt3_lambda = {}\n",
            self.operator,
            self.k,
            fmt_g17(self.spectral_tol),
            self.max_iter,
            self.seed,
            fmt_g17(self.spectral_delta),
            fmt_g17(self.t3_lambda)
        );
        let _ = writeln!(
            s,
            "[halfspace]\na1 = {}\na2 = {}\ns1 = {}\ns2 = {}\nlattice_n = {}\nperiod = {}\nmode = {}\nlam_min = {}\nlam_max = {}\nlam_count = {}\n",
            fmt_g17(self.hs_a1),
            fmt_g17(self.hs_a2),
            fmt_g17(self.hs_s1),
            fmt_g17(self.hs_s2),
            self.lattice_n,
            fmt_g17(self.period),
            self.hs_mode,
            fmt_g17(self.lam_min),
            fmt_g17(self.lam_max),
            self.lam_count
        );
        let _ = writeln!(
            s,
            "[decay]\nlambdas = {}\nband = {}\nimaginary = {}\n",
            list(&self.decay_lambdas),
            fmt_g17(self.decay_band),
            self.decay_imaginary
        );
        let _ = writeln!(
            s,
            "[oracle]\nmedia = {}\nlam_max = {}\nm_max = {}\n",
            list(&self.oracle_media),
            fmt_g17(self.oracle_lam_max),
            self.oracle_m_max
        );
        let _ = writeln!(s, "[output]\ndir = {}", self.out_dir.display());
        s
    }
}

/// Parses `key = value` lines with `#` comments and `[section]` headers. A key may also be
/// written fully qualified as `section.key`.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut section = String::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Config { line: no + 1, msg };
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let k = k.trim();
        let full = if k.contains('.') || section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        cfg.set(&full, v).map_err(err)?;
    }
    Ok(cfg)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Singular { .. } | Error::Accuracy { .. } | Error::SweepDivergence { .. } | Error::NonConvergence(_) | Error::Inversion { .. } => {
            EXIT_NUMERICAL
        }
        Error::Io(_) | Error::Json(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    quiet: bool,
}

impl Ctx<'_> {
    fn write(&self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.cfg.out_dir.join(name), contents)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(name, &s)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn mesh(&self) -> Result<Mesh> {
        Ok(build_mesh(&self.cfg.domain, self.cfg.mesh_n)?.refine_times(self.cfg.refine))
    }
}

fn shift_for(real: bool, lambda0: f64) -> C64 {
    if real {
        C64::new(lambda0, 0.0)
    } else {
        C64::new(0.0, lambda0)
    }
}

fn mesh_meta(m: &Mesh) -> serde_json::Value {
    json!({ "domain": m.domain.name(), "vertices": m.n_vertices(), "triangles": m.triangles.len(), "h_max": m.h_max })
}

/// Runs one command and maps the outcome to a process exit code.
pub fn run_command(cmd: Command, cfg: &RunConfig, quiet: bool) -> i32 {
    let ctx = Ctx { cfg, quiet };
    let res = fs::create_dir_all(&cfg.out_dir)
        .map_err(Error::from)
        .and_then(|_| ctx.write("effective_config.txt", &cfg.to_text()))
        .and_then(|_| match cmd {
            Command::Check => run_check(&ctx),
            Command::Solve => run_solve(&ctx),
            Command::Eigs => run_eigs(&ctx),
            Command::HalfSpace => run_halfspace(&ctx),
            Command::Decay => run_decay(&ctx),
            Command::Oracle => run_oracle(&ctx),
            Command::Verify => run_verify(&ctx),
        });
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run_check(ctx: &Ctx) -> Result<i32> {
    let cfg = ctx.cfg;
    let cs = cfg.coefficients()?;
    let ab = if cfg.hypothesis == Hypothesis::Thm2 { cfg.beta } else { cfg.alpha };
    let mut p = HypothesisParams::new(ab, cfg.tau_value(), cfg.samples);
    p.slack = cfg.slack;
    let r = check_hypothesis(&cs, &cfg.domain, cfg.hypothesis, p)?;
    ctx.write_json("check.json", &r)?;
    ctx.say(format!("{:?}: holds = {}, best_c = {}", r.hypothesis, r.holds, fmt_g17(r.best_c)));
    Ok(if r.holds { EXIT_OK } else { EXIT_HYPOTHESIS })
}

fn unit_source(m: &Mesh) -> SourceData {
    SourceData::from_fns(m, |_| C64::new(1.0, 0.0), |_| C64::new(0.0, 0.0))
}

fn run_solve(ctx: &Ctx) -> Result<i32> {
    let cfg = ctx.cfg;
    let m = ctx.mesh()?;
    let dm = build_dofmap(&m);
    let cs = cfg.coefficients()?;
    let l0 = cfg.lambda0.unwrap_or(default_lambda0(m.h_max));
    let gamma0 = shift_for(cfg.variant.real_shift(), l0);
    let data = unit_source(&m);
    let sweep = limiting_absorption(&m, &dm, &cs, gamma0, &data, &cfg.deltas, SweepParams { variant: cfg.variant, tau: cfg.tau_value() })?;
    ctx.write("solve.csv", &sweep.to_csv())?;
    let last = *cfg.deltas.last().expect("validated schedule");
    let sys = assemble_system(&m, &dm, &cs, gamma0, last, cfg.variant)?;
    let ids = energy_identity_residuals(&m, &sys, sweep.solutions.last().expect("one solve per delta"), &data)?;
    ctx.write_json(
        "solve.json",
        &json!({
            "mesh": mesh_meta(&m),
            "dofs": dm.total,
            "variant": cfg.variant,
            "gamma0": gamma0,
            "h_norms": sweep.h_norms,
            "h_norm_diffs": sweep.h_norm_diffs,
            "converged": sweep.converged,
            "identities": ids,
        }),
    )?;
    ctx.say(format!("solved {} deltas, identity residuals {:.3e} / {:.3e}", sweep.deltas.len(), ids.r1, ids.r2));
    Ok(EXIT_OK)
}

fn run_eigs(ctx: &Ctx) -> Result<i32> {
    let cfg = ctx.cfg;
    let m = ctx.mesh()?;
    let dm = build_dofmap(&m);
    let cs = cfg.coefficients()?;
    let kind = cfg.kind();
    let l0 = cfg.lambda0.unwrap_or(default_lambda0(m.h_max));
    let gamma0 = shift_for(kind.variant().real_shift(), l0);
    let op = OperatorT::build(&m, &dm, &cs, kind, gamma0, cfg.spectral_delta)?;
    let mut fixed = None;
    let op = if let TKind::T3 { lambda } = kind {
        let fp = t3_fixed_point(&op, m.h_max, lambda, 1e-8, 30, cfg.k, cfg.spectral_tol)?;
        let next = op.with_kind(TKind::T3 { lambda: fp.lambda })?;
        fixed = Some(fp);
        next
    } else {
        op
    };
    let res = arnoldi_eigs_seeded(&op, m.h_max, cfg.k, cfg.spectral_tol, cfg.max_iter, cfg.seed)?;
    ctx.write("eigs.csv", &res.to_csv())?;
    ctx.write_json("eigs.json", &json!({ "mesh": mesh_meta(&m), "dofs": dm.total, "result": res, "fixed_point": fixed }))?;
    ctx.say(format!("{} Ritz values, converged = {}", res.mu.len(), res.converged));
    Ok(if res.converged { EXIT_OK } else { EXIT_NUMERICAL })
}

/// Half-space problem described by the config, with `φ = cos(mode · 2πx/L)`.
pub fn halfspace_problem(cfg: &RunConfig) -> HalfSpaceProblem {
    let n = cfg.lattice_n;
    let w = std::f64::consts::TAU * cfg.hs_mode as f64 / cfg.period;
    let phi = (0..n).map(|i| C64::new((w * cfg.period * i as f64 / n as f64).cos(), 0.0)).collect();
    HalfSpaceProblem {
        a1: DMatrix::from_diagonal_element(2, 2, cfg.hs_a1),
        a2: DMatrix::from_diagonal_element(2, 2, cfg.hs_a2),
        s1: cfg.hs_s1,
        s2: cfg.hs_s2,
        lam: cfg.lam_min,
        phi,
        lattice_n: n,
        period: cfg.period,
        depth: None,
        nt: 32,
    }
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    (0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).collect()
}

fn run_halfspace(ctx: &Ctx) -> Result<i32> {
    let cfg = ctx.cfg;
    let p = halfspace_problem(cfg);
    let grid = log_grid(cfg.lam_min, cfg.lam_max, cfg.lam_count);
    let rep = verify_halfspace_estimate(&p, &grid)?;
    ctx.write("halfspace.csv", &rep.to_csv())?;
    ctx.write("halfspace_modes.csv", &modes_csv(&compute_modes(&p)?))?;
    ctx.write_json("halfspace.json", &rep)?;
    ctx.say(format!("L2 slope {:.4}, bound ratio spread {:.3}", rep.slope, rep.ratio_spread));
    Ok(EXIT_OK)
}

fn run_decay(ctx: &Ctx) -> Result<i32> {
    let cfg = ctx.cfg;
    let m = ctx.mesh()?;
    let rep = verify_decay(&m, &SingleField::isotropic(1.0, 1.0), &cfg.decay_lambdas, cfg.decay_band, cfg.decay_imaginary)?;
    let mut csv = String::from("lambda,ratio\n");
    for (l, r) in rep.lambdas.iter().zip(&rep.ratios) {
        let _ = writeln!(csv, "{},{}", fmt_g17(*l), fmt_g17(*r));
    }
    ctx.write("decay.csv", &csv)?;
    ctx.write_json("decay.json", &rep)?;
    ctx.say(format!("c2 = {:.4}, R^2 = {:.4}", rep.c2, rep.r_squared));
    Ok(EXIT_OK)
}

fn run_oracle(ctx: &Ctx) -> Result<i32> {
    let cfg = ctx.cfg;
    let [a1, a2, s1, s2] = cfg.oracle_media;
    let tes = find_disk_tes(&DiskMedia::new(a1, a2, s1, s2), cfg.oracle_lam_max, cfg.oracle_m_max)?;
    ctx.write("oracle.csv", &tes_csv(&tes))?;
    ctx.say(format!("{} disk eigenvalues below {}", tes.len(), cfg.oracle_lam_max));
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct VerifyCheck {
    name: &'static str,
    value: f64,
    tolerance: f64,
    pass: bool,
}

fn random_spd(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(2, 2) * 0.1
}

fn run_verify(ctx: &Ctx) -> Result<i32> {
    let cfg = ctx.cfg;
    let mut checks = Vec::new();
    let mut push = |name, value: f64, tolerance, pass| checks.push(VerifyCheck { name, value, tolerance, pass });

    let m = ctx.mesh()?;
    let dm = build_dofmap(&m);
    let cs = cfg.coefficients()?;
    let l0 = cfg.lambda0.unwrap_or(default_lambda0(m.h_max));
    let gamma0 = shift_for(cfg.variant.real_shift(), l0);
    let delta = *cfg.deltas.last().unwrap_or(&1e-3);
    let sys = assemble_system(&m, &dm, &cs, gamma0, delta, cfg.variant)?;
    let data = unit_source(&m);
    let b = assemble_rhs(&m, &dm, &sys, &data)?;
    let v = solve(&factorize(&sys)?, &b)?;
    let ids = energy_identity_residuals(&m, &sys, &v, &data)?;
    let worst = ids.r1.max(ids.r2);
    push("energy_identities", worst, cfg.identity_tol, worst <= cfg.identity_tol);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise: Vec<C64> = (0..dm.total).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let (n1, n2) = dm.unpack(&noise);
    let nid = energy_identity_residuals(&m, &sys, &FieldPair::new(n1, n2), &data)?;
    let lowest = nid.r1.max(nid.r2);
    push("identity_negative_control", lowest, 1e-3, lowest >= 1e-3);

    let hp = halfspace_problem(cfg);
    let hs = verify_halfspace_estimate(&hp, &log_grid(cfg.lam_min, cfg.lam_max, cfg.lam_count))?;
    push("halfspace_slope", hs.slope, 0.05, (-0.30..=-0.20).contains(&hs.slope));
    push("halfspace_ratio_spread", hs.ratio_spread, 10.0, hs.ratio_spread <= 10.0);

    let square = build_mesh(&Domain::UnitSquare, cfg.mesh_n)?.refine_times(cfg.refine);
    let dec = verify_decay(&square, &SingleField::isotropic(1.0, 1.0), &cfg.decay_lambdas, cfg.decay_band, cfg.decay_imaginary)?;
    push("decay_rate", dec.c2, 0.0, dec.c2 > 0.0);
    push("decay_fit", dec.r_squared, 0.95, dec.r_squared >= 0.95);

    let mut agree = 0usize;
    const PAIRS: usize = 200;
    for _ in 0..PAIRS {
        let a1 = random_spd(&mut rng);
        let a2 = random_spd(&mut rng);
        let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let e = DVector::from_vec(vec![t.cos(), t.sin()]);
        let c = check_complementing(&a1, &a2, &e)?;
        if c.holds == ((a1.determinant() - a2.determinant()).abs() > 1e-10) {
            agree += 1;
        }
    }
    push("complementing_det_agreement", agree as f64 / PAIRS as f64, 1.0, agree == PAIRS);

    let [a1, a2, s1, s2] = cfg.oracle_media;
    let tes = find_disk_tes(&DiskMedia::new(a1, a2, s1, s2), cfg.oracle_lam_max, cfg.oracle_m_max)?;
    push("oracle_roots_found", tes.len() as f64, 1.0, !tes.is_empty());

    let pass = checks.iter().all(|c| c.pass);
    ctx.write_json("verify.json", &json!({ "mesh": mesh_meta(&m), "checks": checks, "pass": pass }))?;
    for c in &checks {
        ctx.say(format!("{} {} = {}", if c.pass { "PASS" } else { "FAIL" }, c.name, fmt_g17(c.value)));
    }
    Ok(if pass { EXIT_OK } else { EXIT_NUMERICAL })
}

/// Reads a config file, or returns the defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => parse_config(&fs::read_to_string(p)?),
        None => Ok(RunConfig::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.k, 6);
        assert_eq!(c.mesh_n, 16);
        assert!(c.tau.is_none());
    }

    #[test]
    fn qualified_and_sectioned_keys() {
        let c = parse_config("spectral.k = 8\n").unwrap();
        assert_eq!(c.k, 8);
        assert_eq!(c.spectral_tol, 1e-10);
        let c = parse_config("# comment\n[spectral]\nk = 3 # trailing\n[domain]\ndomain = unit_square\n").unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.domain, Domain::UnitSquare);
    }

    #[test]
    fn errors_name_the_line() {
        match parse_config("\nspectral.k = eight\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_config("[spectral]\nbogus = 1"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(parse_config("no equals sign"), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn echo_round_trips() {
        let c = parse_config("[solver]\nlambda0 = 75\ndeltas = 0.1, 0.01\n[domain]\ndomain = polygon(0 0; 1 0; 0 1)\n").unwrap();
        let again = parse_config(&c.to_text()).unwrap();
        assert_eq!(again.to_text(), c.to_text());
        assert_eq!(again.lambda0, Some(75.0));
        assert_eq!(again.deltas, vec![0.1, 0.01]);
    }

    #[test]
    fn domain_parser() {
        assert_eq!(parse_domain("annulus(0.5)").unwrap(), Domain::Annulus { r_inner: 0.5 });
        assert!(parse_domain("torus").is_err());
        assert!(parse_domain("polygon(0 0; 1)").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Validation("x".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::NonConvergence("x".into())), EXIT_NUMERICAL);
    }
}
