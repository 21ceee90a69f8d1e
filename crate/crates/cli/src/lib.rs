//! Scenario runner behind the `bimatrix` binary. Each subcommand reads a
//! JSON config, runs its checks and returns a report plus data files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use bimatrix::asymptotics::{asymptotic_error_sweep, mu_at};
use bimatrix::band::{build_q_p, heisenberg_residual, string_equation_residual, BandOperator};
use bimatrix::biortho::{build_family, heine_check, BiorthogonalFamily};
use bimatrix::cd::{cd_identity_residual, cd_matrices, correlation_density};
use bimatrix::curve::{solve_genus0_curve, RationalSpectralCurve};
use bimatrix::diffsys::{duality_residual, spectral_curve_finite_n, trace_identity_residual};
use bimatrix::group::{hciz_value, mixed_resolvent_finite, mixed_resolvent_oracle_n1, morozov_generating, DiagonalPair};
use bimatrix::loops::{
    connected_two_point_moment, finite_n_moments, free_energy, resolvent_subleading_at_x, richardson_inverse_square,
    subleading_moment, subleading_pole_structure,
};
use bimatrix::poly::C64;
use bimatrix::quadrature::{direct_density_oracle, rule_on};
use bimatrix::sampler::{histogram, metropolis_sampler};
use bimatrix::{validate_model, Error, ModelSpec, Precision, Real, Result, ValidatedModel};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Orthogonalize,
    Operators,
    Kernels,
    Densities,
    Diffsys,
    Curve,
    Mixed,
    GroupIntegrals,
    Loop,
    Asymptotics,
    Crossval,
}

impl Command {
    pub const ALL: [Command; 11] = [
        Command::Orthogonalize,
        Command::Operators,
        Command::Kernels,
        Command::Densities,
        Command::Diffsys,
        Command::Curve,
        Command::Mixed,
        Command::GroupIntegrals,
        Command::Loop,
        Command::Asymptotics,
        Command::Crossval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Orthogonalize => "orthogonalize",
            Command::Operators => "operators",
            Command::Kernels => "kernels",
            Command::Densities => "densities",
            Command::Diffsys => "diffsys",
            Command::Curve => "curve",
            Command::Mixed => "mixed",
            Command::GroupIntegrals => "group-integrals",
            Command::Loop => "loop",
            Command::Asymptotics => "asymptotics",
            Command::Crossval => "crossval",
        }
    }
}

fn d_size() -> usize {
    24
}
fn d_ladder() -> Vec<usize> {
    vec![8, 12, 16]
}
fn d_seed() -> u64 {
    1
}
fn d_samples() -> usize {
    1_000_000
}
fn d_grid() -> Vec<f64> {
    (0..20).map(|i| -2.0 + 4.0 * i as f64 / 19.0).collect()
}
fn d_points() -> Vec<[f64; 4]> {
    vec![
        [2.0, 1.0, 1.5, -1.0],
        [0.3, 1.2, -0.5, 1.0],
        [-1.0, -1.5, 0.7, 1.1],
        [0.0, 2.0, 0.0, 2.0],
        [1.5, -1.0, -1.2, -1.3],
    ]
}
fn d_asym_x() -> Vec<f64> {
    vec![2.5, 4.0]
}
fn d_asym_k() -> Vec<usize> {
    vec![0, 1]
}
fn d_mc_n() -> Vec<usize> {
    vec![2, 3]
}
fn d_pairs_per_n() -> usize {
    5
}

/// One scenario. Everything except `model` has a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    /// Truncation M of the families and operators.
    #[serde(default = "d_size")]
    pub size: usize,
    #[serde(default = "d_ladder")]
    pub n_ladder: Vec<usize>,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Metropolis proposals or Haar samples.
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_grid")]
    pub grid: Vec<f64>,
    /// Complex (x, y) as [Re x, Im x, Re y, Im y].
    #[serde(default = "d_points")]
    pub points: Vec<[f64; 4]>,
    #[serde(default = "d_asym_x")]
    pub asym_x: Vec<f64>,
    #[serde(default = "d_asym_k")]
    pub asym_k: Vec<usize>,
    /// Matrix sizes for the group integrals.
    #[serde(default = "d_mc_n")]
    pub mc_n: Vec<usize>,
    #[serde(default = "d_pairs_per_n")]
    pub pairs_per_n: usize,
    /// Overrides of the default tolerance of any check, by name.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

impl ScenarioConfig {
    pub fn new(model: ModelSpec) -> Self {
        serde_json::from_value(json!({ "model": model })).expect("defaults")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(s).map_err(|e| Error::ConfigInvalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.n_ladder.is_empty() {
            return bad("n_ladder is empty".into());
        }
        if self.n_ladder.contains(&0) {
            return bad("n_ladder entries must be positive".into());
        }
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        if self.grid.is_empty() || self.points.is_empty() {
            return bad("grid and points must be non-empty".into());
        }
        if let Some((k, v)) = self.tolerances.iter().find(|(_, v)| !(**v > 0.0)) {
            return bad(format!("tolerance {k} = {v} is not positive"));
        }
        validate_model(&self.model)?;
        Ok(())
    }

    fn model_n(&self, n: usize) -> Result<ValidatedModel> {
        validate_model(&self.model.with_n(n))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub model: ModelSpec,
    pub precision: Precision,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub data: Value,
}

impl Report {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Report plus data files keyed by file name.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub report: Report,
    pub files: BTreeMap<String, String>,
}

impl Bundle {
    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n"
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report_json())?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    checks: Vec<Check>,
    files: BTreeMap<String, String>,
}

impl<'a> Ctx<'a> {
    fn tol(&self, name: &str, default: f64) -> f64 {
        let base = name.split('[').next().unwrap_or(name);
        self.cfg.tolerances.get(name).or_else(|| self.cfg.tolerances.get(base)).copied().unwrap_or(default)
    }

    fn below(&mut self, name: String, value: f64, default: f64) {
        let upper = self.tol(&name, default);
        let pass = value.is_finite() && value <= upper;
        self.checks.push(Check { name, value, lower: None, upper, pass });
    }

    fn within(&mut self, name: String, value: f64, lower: f64, upper: f64) {
        let pass = value.is_finite() && value >= lower && value <= upper;
        self.checks.push(Check { name, value, lower: Some(lower), upper, pass });
    }

    fn file(&mut self, name: &str, body: String) {
        self.files.insert(name.to_string(), body);
    }
}

pub fn run_scenario(cmd: Command, cfg: &ScenarioConfig) -> Result<Bundle> {
    cfg.validate()?;
    let precision = Precision::from_env()?;
    let mut ctx = Ctx { cfg, checks: Vec::new(), files: BTreeMap::new() };
    let data = match cmd {
        Command::Orthogonalize => orthogonalize(&mut ctx, precision)?,
        Command::Operators => operators(&mut ctx, precision)?,
        Command::Kernels => kernels(&mut ctx, precision)?,
        Command::Densities => densities(&mut ctx, precision)?,
        Command::Diffsys => diffsys(&mut ctx, precision)?,
        Command::Curve => curve(&mut ctx)?,
        Command::Mixed => mixed(&mut ctx, precision)?,
        Command::GroupIntegrals => group_integrals(&mut ctx)?,
        Command::Loop => loop_engine(&mut ctx, precision)?,
        Command::Asymptotics => asymptotics(&mut ctx)?,
        Command::Crossval => crossval(&mut ctx, precision)?,
    };
    let passed = ctx.checks.iter().all(|c| c.pass);
    let report = Report { command: cmd.name().into(), model: cfg.model.clone(), precision, passed, checks: ctx.checks, data };
    Ok(Bundle { report, files: ctx.files })
}

fn family(m: &ValidatedModel, size: usize, precision: Precision) -> Result<BiorthogonalFamily> {
    build_family(m, size, precision)
}

fn operators_for(m: &ValidatedModel, size: usize, precision: Precision) -> Result<(BiorthogonalFamily, BandOperator, BandOperator)> {
    let f = family(m, size, precision)?;
    let (q, p) = build_q_p(&f)?;
    Ok((f, q, p))
}

fn need_size(cfg: &ScenarioConfig, n: usize, pad: usize) -> Result<()> {
    if cfg.size < n + pad {
        return Err(Error::ConfigInvalid(format!("size {} too small for N = {n} (need >= {})", cfg.size, n + pad)));
    }
    Ok(())
}

fn orthogonalize(ctx: &mut Ctx, precision: Precision) -> Result<Value> {
    let cfg = ctx.cfg;
    let mut out = Vec::new();
    for (i, &n) in cfg.n_ladder.iter().enumerate() {
        let m = cfg.model_n(n)?;
        let f = family(&m, cfg.size, precision)?;
        ctx.below(format!("orthogonality[N={n}]"), f.orth_residual, 1e-8);
        let mut heine = Vec::new();
        if i == 0 {
            let pts: Vec<f64> = cfg.grid.iter().copied().step_by((cfg.grid.len() / 5).max(1)).take(5).collect();
            for k in 0..=2 {
                let r = heine_check(&f, k, &pts)?;
                ctx.below(format!("heine[N={n},n={k}]"), r, 1e-6);
                heine.push(r);
            }
        }
        ctx.file(&format!("family_N{n}.csv"), f.to_csv());
        let h: Vec<f64> = (0..f.size()).map(|k| f.h(k).to_f64()).collect();
        out.push(json!({ "N": n, "orth_residual": f.orth_residual, "quadrature_error": f.quadrature_error, "h": h, "heine": heine }));
    }
    Ok(json!({ "families": out }))
}

fn operators(ctx: &mut Ctx, precision: Precision) -> Result<Value> {
    let cfg = ctx.cfg;
    let mut out = Vec::new();
    for &n in &cfg.n_ladder {
        let m = cfg.model_n(n)?;
        let (_, q, p) = operators_for(&m, cfg.size, precision)?;
        let leak = q.leakage().max(p.leakage());
        let s = string_equation_residual(&q, &p, &m)?;
        let h = heisenberg_residual(&q, &p, &m)?;
        ctx.below(format!("band_leakage[N={n}]"), leak, 1e-8);
        ctx.below(format!("string_equation[N={n}]"), s.max, 1e-8);
        ctx.below(format!("heisenberg[N={n}]"), h.max, 1e-8);
        ctx.file(&format!("Q_N{n}.csv"), q.to_csv());
        ctx.file(&format!("P_N{n}.csv"), p.to_csv());
        out.push(json!({ "N": n, "leakage": leak, "string_equation": s, "heisenberg": h }));
    }
    Ok(json!({ "operators": out }))
}

fn kernels(ctx: &mut Ctx, precision: Precision) -> Result<Value> {
    let cfg = ctx.cfg;
    let mut out = Vec::new();
    for &n in &cfg.n_ladder {
        need_size(cfg, n, 4)?;
        let m = cfg.model_n(n)?;
        let (f, q, _) = operators_for(&m, cfg.size, precision)?;
        let cd = cd_identity_residual(&f, &q, n, &cfg.grid, &cfg.grid)?;
        ctx.below(format!("cd_identity[N={n}]"), cd, 1e-6);
        let mut dens = Value::Null;
        if n <= 2 {
            let g = &cfg.grid;
            let mut worst: f64 = 0.0;
            let cases: Vec<(usize, usize, Vec<Vec<f64>>)> = vec![
                (1, 0, g.iter().step_by(4).map(|&x| vec![x]).collect()),
                (0, 1, g.iter().step_by(4).map(|&y| vec![y]).collect()),
                (1, 1, g.iter().step_by(4).zip(g.iter().rev().step_by(4)).map(|(&x, &y)| vec![x, y]).collect()),
            ];
            for (r, s, pts) in cases {
                let k = correlation_density(&f, r, s, &pts)?;
                let o = direct_density_oracle(&m, r, s, &pts)?;
                worst = k.iter().zip(&o).fold(worst, |w, (a, b)| w.max((a - b).abs()));
            }
            ctx.below(format!("density_vs_brute_force[N={n}]"), worst, 1e-6);
            dens = json!(worst);
        }
        out.push(json!({ "N": n, "cd_identity": cd, "density_vs_brute_force": dens }));
    }
    Ok(json!({ "kernels": out }))
}

/// Histogram edges covering the large-N support (or [-3, 3]) with margin.
fn density_edges(curve: Option<&RationalSpectralCurve>, bins: usize) -> Vec<f64> {
    let (lo, hi) = curve.and_then(|c| c.cut().ok()).unwrap_or((-2.0, 2.0));
    let w = hi - lo;
    let (a, b) = (lo - 0.3 * w, hi + 0.3 * w);
    (0..=bins).map(|i| a + (b - a) * i as f64 / bins as f64).collect()
}

fn densities(ctx: &mut Ctx, precision: Precision) -> Result<Value> {
    let cfg = ctx.cfg;
    let n = cfg.model.n;
    let m = cfg.model_n(n)?;
    let curve = solve_genus0_curve(&m).ok();
    let swapped = m.swapped();
    let curve_y = solve_genus0_curve(&swapped).ok();
    let f = family(&m, (n + 8).max(cfg.size.min(n + 16)), precision)?;
    let out = metropolis_sampler(&m, cfg.samples, cfg.seed)?;
    let bins = 12;
    let batches = 50;
    let per_batch = (out.samples.len() / batches) as f64;
    let mut sides = Vec::new();
    let mut dat = String::from("# x kernel mc large_n\n");
    let mut csv = String::from("side,x_lo,x_hi,kernel,mc,mc_sigma,large_n,z\n");
    for side in 0..2 {
        let c = if side == 0 { curve.as_ref() } else { curve_y.as_ref() };
        let edges = density_edges(c, bins);
        let h = histogram(&out, n, side, &edges, batches);
        let mut zmax: f64 = 0.0;
        let mut sparse = 0;
        for i in 0..bins {
            let (a, b) = (edges[i], edges[i + 1]);
            let (t, w) = rule_on::<f64>(a, b, 8);
            let pts: Vec<Vec<f64>> = t.iter().map(|&v| vec![v]).collect();
            let (r, s) = if side == 0 { (1, 0) } else { (0, 1) };
            let d = correlation_density(&f, r, s, &pts)?;
            let kernel = d.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / (b - a);
            let mid = 0.5 * (a + b);
            let large_n = c.map_or(f64::NAN, |c| c.equilibrium_density(mid).unwrap_or(0.0));
            let z = if h.sigma[i] > 0.0 { (h.density[i] - kernel) / h.sigma[i] } else { 0.0 };
            // batch-means errors need a few expected counts per batch
            if kernel * (b - a) * n as f64 * per_batch >= 5.0 {
                zmax = zmax.max(z.abs());
            } else {
                sparse += 1;
            }
            let _ = writeln!(csv, "{side},{a},{b},{kernel:e},{:e},{:e},{large_n:e},{z}", h.density[i], h.sigma[i]);
            if side == 0 {
                let _ = writeln!(dat, "{mid} {kernel:e} {:e} {large_n:e}", h.density[i]);
            }
        }
        let label = if side == 0 { "x" } else { "y" };
        ctx.below(format!("mc_vs_kernel_max_z[{label}]"), zmax, 3.0);
        sides.push(json!({ "side": label, "max_z": zmax, "sparse_bins_skipped": sparse }));
    }
    ctx.file("density.csv", csv);
    ctx.file("density_overlay.dat", dat);
    Ok(json!({ "N": n, "sampler": out.diagnostics, "sides": sides }))
}

fn diffsys(ctx: &mut Ctx, precision: Precision) -> Result<Value> {
    let cfg = ctx.cfg;
    let large = solve_genus0_curve(&cfg.model_n(cfg.model.n)?).ok().and_then(|c| c.large_n_polynomial().ok());
    let mut out = Vec::new();
    let mut dat = String::from("# N i j E_n[i][j] -E_large[i][j]\n");
    let mut distances = Vec::new();
    for &n in &cfg.n_ladder {
        need_size(cfg, n, 8)?;
        let m = cfg.model_n(n)?;
        let (_, q, p) = operators_for(&m, cfg.size, precision)?;
        let fs = spectral_curve_finite_n(&q, &p, &m, n)?;
        let (a, _) = cd_matrices(&q, &p, n)?;
        let xs = [-1.3, -0.4, 0.25, 0.9, 1.7];
        let dual = duality_residual(&fs.d1.folding, &fs.d1_dual, &a, &xs);
        let trace = trace_identity_residual(&fs.d1_dual, &m, &xs);
        ctx.below(format!("d1_constructions[N={n}]"), fs.d1.discrepancy, 1e-6);
        ctx.below(format!("d2_constructions[N={n}]"), fs.d2.discrepancy, 1e-6);
        ctx.below(format!("duality[N={n}]"), dual, 1e-6);
        ctx.below(format!("curve_mismatch[N={n}]"), fs.curve_mismatch, 1e-6);
        ctx.below(format!("trace_identity[N={n}]"), trace, 1e-8);
        let e = &fs.curves[0];
        let mut dist = Value::Null;
        if let Some(el) = &large {
            let mut d: f64 = 0.0;
            for (i, row) in e.coeffs.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let w = -el.coeffs.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0);
                    d = d.max((v - w).abs());
                    let _ = writeln!(dat, "{n} {i} {j} {v:e} {w:e}");
                }
            }
            distances.push(d);
            dist = json!(d);
        }
        out.push(json!({ "N": n, "d1_discrepancy": fs.d1.discrepancy, "d2_discrepancy": fs.d2.discrepancy, "duality": dual,
            "curve_mismatch": fs.curve_mismatch, "trace_identity": trace, "curve": e.coeffs, "distance_to_large_n": dist }));
    }
    if distances.len() == cfg.n_ladder.len() && distances.len() > 1 {
        let worst = distances.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        ctx.below("curve_convergence_ratio".into(), worst, 1.0);
    }
    ctx.file("curve_coefficients.dat", dat);
    Ok(json!({ "systems": out, "large_n_curve": large.map(|e| e.coeffs) }))
}

fn curve(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let m = cfg.model_n(cfg.model.n)?;
    let c = solve_genus0_curve(&m)?;
    ctx.below("curve_residual".into(), c.residual, 1e-12);
    let (lo, hi) = c.cut()?;
    let probes: Vec<f64> = [1.5, 2.5, 4.0].iter().map(|s| s * (hi - lo) / 2.0 + hi).collect();
    let zs: Vec<C64> = probes.iter().map(|&x| c.physical_z_of_x(C64::new(x, 0.0))).collect::<Result<_>>()?;
    let fe = free_energy(&c, &zs.iter().map(|z| z.re).collect::<Vec<_>>());
    let spread = fe.d_t_probes.iter().fold(0.0f64, |s, v| s.max((v - fe.d_t).abs()));
    ctx.below("free_energy_probe_spread".into(), spread, 1e-8);
    if (m.t() - 1.0).abs() < 1e-14 {
        let mus: Vec<f64> = zs.iter().map(|&z| mu_at(&c, z).map(|v| v.re)).collect::<Result<_>>()?;
        let s = mus.iter().fold(0.0f64, |s, v| s.max((v - mus[0]).abs()));
        ctx.below("mu_probe_spread".into(), s, 1e-8);
    }
    let mut csv = String::from("k,a_k,b_k\n");
    for k in 0..c.a.len().max(c.b.len()) {
        let _ = writeln!(csv, "{k},{:e},{:e}", c.a.get(k).copied().unwrap_or(0.0), c.b.get(k).copied().unwrap_or(0.0));
    }
    ctx.file("curve.csv", csv);
    let moments: Vec<f64> = (0..=6).map(|k| c.leading_moment(k)).collect();
    Ok(json!({ "gamma": c.gamma, "gamma_tilde": c.gamma_tilde, "a": c.a, "b": c.b, "cut": [lo, hi],
        "branch_points": c.branch_points.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "moments": moments, "free_energy": fe, "moduli": c.moduli(), "large_n_polynomial": c.large_n_polynomial()?.coeffs }))
}

fn mixed(ctx: &mut Ctx, precision: Precision) -> Result<Value> {
    let cfg = ctx.cfg;
    let pts: Vec<(C64, C64)> = cfg.points.iter().map(|p| (C64::new(p[0], p[1]), C64::new(p[2], p[3]))).collect();
    let m1 = cfg.model_n(1)?;
    let (_, q1, p1) = operators_for(&m1, 44, precision)?;
    let mut oracle = Vec::new();
    for (i, &(x, y)) in pts.iter().enumerate() {
        let got = mixed_resolvent_finite(&q1, &p1, 1, m1.t(), x, y, 42)?;
        let want = mixed_resolvent_oracle_n1(&m1, x, y)?;
        let d = (got.value - want).norm();
        ctx.below(format!("n1_oracle[{i}]"), d, 1e-5);
        oracle.push(json!({ "x": [x.re, x.im], "y": [y.re, y.im], "det_formula": [got.value.re, got.value.im], "oracle": [want.re, want.im] }));
    }
    let m = cfg.model_n(cfg.model.n)?;
    let c = solve_genus0_curve(&m)?;
    let mut csv = String::from("point,N,re,im,deviation\n");
    let mut fits = Vec::new();
    for (i, &(x, y)) in pts.iter().enumerate() {
        let lim = c.mixed_resolvent_large_n(x, y)?;
        let mut devs = Vec::new();
        for &n in &cfg.n_ladder {
            let mn = cfg.model_n(n)?;
            let (_, q, p) = operators_for(&mn, n + 24, precision)?;
            let v = mixed_resolvent_finite(&q, &p, n, mn.t(), x, y, n + 22)?.value;
            let d = (v - lim).norm();
            let _ = writeln!(csv, "{i},{n},{:e},{:e},{d:e}", v.re, v.im);
            devs.push(d);
        }
        if cfg.n_ladder.len() > 1 {
            let alpha = bimatrix::asymptotics::decay_exponent(&cfg.n_ladder, &devs);
            ctx.within(format!("large_n_exponent[{i}]"), alpha, 1.5, 2.5);
            fits.push(json!({ "point": i, "large_n": [lim.re, lim.im], "deviations": devs, "exponent": alpha }));
        }
    }
    ctx.file("mixed.csv", csv);
    Ok(json!({ "n1_oracle": oracle, "large_n": fits }))
}

fn random_pairs(n: usize, count: usize, seed: u64) -> Result<Vec<DiagonalPair>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut out = Vec::new();
    while out.len() < count {
        let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let gap = |v: &[f64]| v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if gap(&a) > 0.1 && gap(&b) > 0.1 {
            out.push(DiagonalPair::new(a, b)?);
        }
    }
    Ok(out)
}

fn group_integrals(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let mut out = Vec::new();
    let mut csv = String::from("N,pair,formula,mc_mean,mc_err,ratio,ratio_err\n");
    for &n in &cfg.mc_n {
        let pairs = random_pairs(n, cfg.pairs_per_n, cfg.seed)?;
        let mut reps = Vec::new();
        for (i, pair) in pairs.iter().enumerate() {
            let r = hciz_value(pair, cfg.samples, cfg.seed + 1000 * n as u64 + i as u64)?;
            let _ = writeln!(csv, "{n},{i},{:e},{:e},{:e},{},{:e}", r.formula, r.mc_mean, r.mc_err, r.ratio, r.ratio_err);
            reps.push(r);
        }
        let wsum: f64 = reps.iter().map(|r| r.ratio_err.powi(-2)).sum();
        let mean = reps.iter().map(|r| r.ratio / r.ratio_err.powi(2)).sum::<f64>() / wsum;
        let z = reps.iter().map(|r| ((r.ratio - mean) / r.ratio_err).abs()).fold(0.0, f64::max);
        ctx.below(format!("hciz_ratio_spread_z[N={n}]"), z, 3.0);
        let mut moro = Vec::new();
        for (i, pair) in pairs.iter().take(2).enumerate() {
            let (x, y) = (2.5, -2.2);
            let r = morozov_generating(pair, x, y, cfg.samples, cfg.seed + 5000 * n as u64 + i as u64)?;
            ctx.below(format!("morozov_z[N={n},pair={i}]"), ((r.formula - r.mc_mean) / r.mc_err).abs(), 3.0);
            moro.push(r);
        }
        out.push(json!({ "N": n, "pairs": pairs.iter().map(|p| json!({"a": p.a, "b": p.b})).collect::<Vec<_>>(),
            "hciz": reps, "ratio_mean": mean, "morozov": moro }));
    }
    ctx.file("hciz.csv", csv);
    Ok(json!({ "group_integrals": out }))
}

fn is_gaussian(spec: &ModelSpec) -> bool {
    let g = ModelSpec::gaussian(spec.n);
    spec.v1 == g.v1 && spec.v2 == g.v2 && spec.t == 1.0
}

fn loop_engine(ctx: &mut Ctx, precision: Precision) -> Result<Value> {
    let cfg = ctx.cfg;
    let m = cfg.model_n(cfg.model.n)?;
    let c = solve_genus0_curve(&m)?;
    let kmax = 6;
    let sub: Vec<f64> = (0..=kmax).map(|k| subleading_moment(&c, k)).collect::<Result<_>>()?;
    let lead: Vec<f64> = (0..=kmax).map(|k| c.leading_moment(k)).collect();
    let poles = subleading_pole_structure(&c, 0.25 * branch_spacing(&c), 6)?;
    let (mut residue, mut excess): (f64, f64) = (0.0, 0.0);
    for p in &poles {
        let top = p[3].norm();
        residue = residue.max(p[0].norm() / top);
        excess = excess.max(p[4].norm().max(p[5].norm()) / top);
    }
    ctx.below("subleading_residue_rel".into(), residue, 1e-8);
    ctx.below("subleading_pole_order_excess_rel".into(), excess, 1e-8);
    let two = connected_two_point_moment(&c, 2, 2);
    let (lo, hi) = c.cut()?;
    let fe = free_energy(&c, &[c.physical_z_of_x(C64::new(hi + 0.5 * (hi - lo), 0.0))?.re]);
    let mut anchors = Value::Null;
    if is_gaussian(&cfg.model) {
        let edge = 2.0 * (2.0f64 / 3.0).sqrt();
        ctx.below("g0_cut_edge_error".into(), (lo + edge).abs().max((hi - edge).abs()), 1e-10);
        ctx.below("g0_t2_error".into(), (lead[2] - 2.0 / 3.0).abs(), 1e-12);
        ctx.below("g0_t4_subleading_error".into(), (sub[4] - 4.0 / 9.0).abs(), 1e-8);
        ctx.below("g0_two_point_error".into(), (two - 8.0 / 9.0).abs(), 1e-12);
        let cc = 1.5f64;
        let mut fin = Vec::new();
        for n in [4usize, 8] {
            let mn = cfg.model_n(n)?;
            let (_, q, _) = operators_for(&mn, n + 8, precision)?;
            let mo = finite_n_moments(&q, n, 4)?;
            let nf = n as f64;
            let exact = nf * 2.0 / (cc * cc) + 1.0 / (nf * cc * cc);
            ctx.below(format!("g0_finite_moment4_rel[N={n}]"), ((mo[4] - exact) / exact).abs(), 1e-10);
            let coeff = nf * nf * (mo[4] / nf - lead[4]);
            ctx.below(format!("g0_finite_subleading_error[N={n}]"), (coeff - sub[4]).abs(), 1e-8);
            fin.push(json!({ "N": n, "tr_m4": mo[4], "exact": exact, "subleading_coefficient": coeff }));
        }
        anchors = json!({ "finite_n": fin });
    }
    let mut csv = String::from("k,leading,subleading\n");
    for k in 0..=kmax {
        let _ = writeln!(csv, "{k},{:e},{:e}", lead[k], sub[k]);
    }
    ctx.file("moments.csv", csv);
    let mut dat = String::from("# x Re W1^(1)(x+i) Im W1^(1)(x+i)\n");
    for i in 0..=16 {
        let x = C64::new(lo - 1.0 + (hi - lo + 2.0) * i as f64 / 16.0, 1.0);
        let w = resolvent_subleading_at_x(&c, x)?;
        let _ = writeln!(dat, "{} {:e} {:e}", x.re, w.re, w.im);
    }
    ctx.file("w1_subleading.dat", dat);
    Ok(json!({ "leading_moments": lead, "subleading_moments": sub, "two_point_22": two, "free_energy": fe,
        "pole_residue_rel": residue, "pole_excess_rel": excess, "gaussian_anchors": anchors }))
}

fn branch_spacing(c: &RationalSpectralCurve) -> f64 {
    let mut d = f64::INFINITY;
    let pts: Vec<C64> = c.branch_points.iter().chain(&c.y_branch_points).copied().chain([C64::new(0.0, 0.0)]).collect();
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            d = d.min((a - b).norm());
        }
    }
    d.min(1.0)
}

fn asymptotics(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let m = cfg.model_n(cfg.model.n)?;
    let c = solve_genus0_curve(&m)?;
    let sweep = asymptotic_error_sweep(&m, &c, &cfg.n_ladder, &cfg.asym_k, &cfg.asym_x)?;
    if cfg.n_ladder.len() > 1 {
        for &(k, x, alpha) in &sweep.exponents {
            ctx.within(format!("decay_exponent[k={k},x={x}]"), alpha, 0.7, 1.3);
        }
    }
    for &k in &cfg.asym_k {
        for &x in &cfg.asym_x {
            let errs: Vec<f64> = sweep.rows.iter().filter(|r| r.k == k && r.x == x).map(|r| r.rel_err).collect();
            let worst = errs.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
            ctx.below(format!("error_growth[k={k},x={x}]"), worst, 1.1);
        }
    }
    let hdev = sweep.rows.iter().map(|r| (r.h_ratio - 1.0).abs()).fold(0.0, f64::max);
    ctx.below("norm_prediction_deviation".into(), hdev, 0.1);
    ctx.file("error_sweep.csv", sweep.to_csv());
    let mut dat = String::from("# N x k psi_exact psi_asym rel_err\n");
    for r in &sweep.rows {
        let _ = writeln!(dat, "{} {} {} {:e} {:e} {:e}", r.n, r.x, r.k, r.psi_exact, r.psi_asym, r.rel_err);
    }
    ctx.file("error_sweep.dat", dat);
    Ok(serde_json::to_value(&sweep).expect("sweep serializes"))
}

fn crossval(ctx: &mut Ctx, precision: Precision) -> Result<Value> {
    let cfg = ctx.cfg;
    let m = cfg.model_n(cfg.model.n)?;
    let c = solve_genus0_curve(&m)?;
    if cfg.n_ladder.len() != 3 {
        return Err(Error::ConfigInvalid("crossval needs exactly three N values".into()));
    }
    let kmax = 4;
    let mut vals = vec![[0.0; 3]; kmax + 1];
    let mut csv = String::from("N,k,moment_over_N\n");
    for (i, &n) in cfg.n_ladder.iter().enumerate() {
        let mn = cfg.model_n(n)?;
        let (_, q, _) = operators_for(&mn, n + 8, precision)?;
        let mo = finite_n_moments(&q, n, kmax)?;
        for k in 0..=kmax {
            vals[k][i] = mo[k] / n as f64;
            let _ = writeln!(csv, "{n},{k},{:e}", vals[k][i]);
        }
    }
    let ns = [cfg.n_ladder[0], cfg.n_ladder[1], cfg.n_ladder[2]];
    let mut rows = Vec::new();
    for k in 1..=kmax {
        let (lim, b, c4) = richardson_inverse_square(&ns, &vals[k]);
        let lead = c.leading_moment(k);
        let sub = subleading_moment(&c, k)?;
        ctx.below(format!("limit_error[k={k}]"), (lim - lead).abs(), 1e-6);
        if sub.abs() > 1e-8 {
            ctx.below(format!("subleading_rel_error[k={k}]"), ((b - sub) / sub).abs(), 0.05);
        } else {
            ctx.below(format!("subleading_abs_error[k={k}]"), (b - sub).abs(), 1e-10);
        }
        rows.push(json!({ "k": k, "limit": lim, "leading": lead, "inv_n2_coefficient": b, "inv_n4_coefficient": c4, "subleading": sub }));
    }
    ctx.file("crossval.csv", csv);
    Ok(json!({ "N": ns, "moments": rows }))
}

/// Runs a subcommand on a config file and writes the bundle to `out`.
/// Returns the process exit code: 0 if every check passed, 1 otherwise.
pub fn run_cli(cmd: Command, config: &Path, out: &Path) -> std::result::Result<i32, String> {
    let text = std::fs::read_to_string(config).map_err(|e| format!("reading {}: {e}", config.display()))?;
    let cfg = ScenarioConfig::from_json(&text).map_err(|e| format!("{}: {e}", e.code()))?;
    let bundle = run_scenario(cmd, &cfg).map_err(|e| format!("{}: {e}", e.code()))?;
    bundle.write(out).map_err(|e| format!("writing {}: {e}", out.display()))?;
    for c in &bundle.report.checks {
        println!("{} {} = {:e}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value);
    }
    Ok(if bundle.report.passed { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ladder_is_rejected() {
        let mut cfg = ScenarioConfig::new(ModelSpec::gaussian(4));
        cfg.n_ladder.clear();
        assert_eq!(run_scenario(Command::Crossval, &cfg).unwrap_err().code(), "ConfigInvalid");
        cfg.n_ladder = vec![4];
        cfg.tolerances.insert("x".into(), -1.0);
        assert_eq!(cfg.validate().unwrap_err().code(), "ConfigInvalid");
        assert!(ScenarioConfig::from_json(r#"{"model": {"v1": [0, 2], "v2": [0, 2], "T": 1, "N": 2}, "bogus": 1}"#).is_err());
    }

    #[test]
    fn config_round_trip() {
        let cfg = ScenarioConfig::new(ModelSpec::quartic_v1(0.025, 8));
        let s = serde_json::to_string(&cfg).unwrap();
        let back = ScenarioConfig::from_json(&s).unwrap();
        assert_eq!(back.n_ladder, vec![8, 12, 16]);
        assert_eq!(back.model, cfg.model);
    }
}
