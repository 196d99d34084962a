mod config;
mod output;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use nullcurve::appendix::{path_certificates, run_appendix, sub_seed, CertificateOutcome, Fault, SuiteOptions};
use nullcurve::construction::{
    initial_horosphere, key_lemma_pass, main_iteration_with, plane_distance_survey, IterationParams, PassOptions, StageReport,
};
use nullcurve::deformation::{deform, DeformationParams, Policy};
use nullcurve::grid::PolarGrid;
use nullcurve::integrator::{grid_solve, GridSolveOptions, Path as LinePath, Target};
use nullcurve::labyrinth::Labyrinth;
use nullcurve::transforms::{
    choose_translation, project_c2, project_desitter, project_h3, project_maxface, pushforward_null_check, Direction,
    NullCheckOptions,
};
use nullcurve::weierstrass::WData;
use nullcurve::Complex64;

use config::{ConfigError, RunConfig};
use output::{write_atomic, write_json, DiagnosticsRecord, JsonLines, Timings};

const NULL_TOL: f64 = 1e-7;
const BASEPOINT_TOL: f64 = 1e-8;

#[derive(Parser, Debug)]
#[command(name = "nullcurve", version, about = "Bounded null curves in C^3 and SL(2,C): drivers and artifact export")]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (else $NULLCURVE_OUT, else ./nullcurve-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run the ODE certificates on the integrations a pass performs.
    #[arg(long, global = true)]
    verify: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the labyrinth for N and write its summary and a sample cloud.
    Labyrinth(LabyrinthArgs),
    /// One deformation step on horosphere data.
    Deform(DeformArgs),
    /// One Key-Lemma pass on horosphere data.
    Keylemma(KeyLemmaArgs),
    /// The outer iteration from the horosphere.
    Construct(ConstructArgs),
    /// Randomized certificates for the matrix and ODE estimates.
    VerifyAppendix(VerifyArgs),
    /// Null-preservation check of T in one or both directions.
    Transform(TransformArgs),
    /// Export a projection of an integrated null curve as OBJ/JSON/CSV.
    ExportMesh(ExportArgs),
}

#[derive(Args, Debug)]
struct LabyrinthArgs {
    #[arg(long)]
    n: Option<u32>,
    /// Restrict the sample cloud to sector j.
    #[arg(long)]
    j: Option<u32>,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long)]
    emit_svg: bool,
}

#[derive(Args, Debug)]
struct DeformArgs {
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    j: Option<u32>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    degree_cap: Option<usize>,
    /// Required amplification min|φ̃|/min|φ| on ω_j.
    #[arg(long)]
    amplification: Option<f64>,
    /// Fail instead of taking the best rotation when the range is unreachable.
    #[arg(long)]
    strict_range: bool,
}

#[derive(Args, Debug)]
struct KeyLemmaArgs {
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    radial: Option<usize>,
    #[arg(long)]
    angular: Option<usize>,
    #[arg(long)]
    degree_cap: Option<usize>,
    /// Plane-distance samples per sector on ∂D_g.
    #[arg(long, default_value_t = 0)]
    survey: usize,
}

#[derive(Args, Debug)]
struct ConstructArgs {
    #[arg(long)]
    n_max: Option<u32>,
    #[arg(long)]
    k0: Option<u32>,
    /// N per stage; the last entry repeats.
    #[arg(long, value_delimiter = ',')]
    n_schedule: Option<Vec<u32>>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    radial: Option<usize>,
    #[arg(long)]
    angular: Option<usize>,
    #[arg(long)]
    degree_cap: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    DropSqrt2,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    ode_samples: usize,
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DirectionArg {
    C3ToSl2,
    Sl2ToC3,
    Both,
}

#[derive(Args, Debug)]
struct TransformArgs {
    #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
    direction: DirectionArg,
    /// W-data JSON; random data from the seed when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    radial: Option<usize>,
    #[arg(long)]
    angular: Option<usize>,
    /// Third-coordinate translation applied before T.
    #[arg(long, default_value_t = 3.0)]
    x3_offset: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MeshTarget {
    H3,
    Maxface,
    Desitter,
    C2,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long, value_enum)]
    target: MeshTarget,
    /// W-data JSON; horosphere data with constant c when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    radial: Option<usize>,
    #[arg(long)]
    angular: Option<usize>,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
enum Failure {
    Certificate(String),
    Config(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Certificate(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numeric(format!("i/o: {e}"))
    }
}

fn numeric(context: &str) -> impl Fn(&dyn std::fmt::Display) -> Failure + '_ {
    move |e| Failure::Numeric(format!("{context}: {e}"))
}

type Outcome = Result<(), Failure>;

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    timings: Timings,
}

impl Ctx {
    fn dir(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish(&self, dir: &Path) -> Outcome {
        write_json(&dir.join("timings.json"), &self.timings)?;
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Certificate(m) => ("certificate failure", m),
                Failure::Config(m) => ("config error", m),
                Failure::Numeric(m) => ("numeric failure", m),
            };
            eprintln!("nullcurve: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let global = RunConfig { seed: cli.seed, out_dir: cli.out.clone(), verify: cli.verify.then_some(true), ..RunConfig::default() };
    let flags = match &cli.command {
        Command::Labyrinth(a) => RunConfig { n: a.n, j: a.j, ..global },
        Command::Deform(a) => RunConfig { n: a.n, j: a.j, eps: a.eps, c: a.c, degree_cap: a.degree_cap, ..global },
        Command::Keylemma(a) => RunConfig {
            n: a.n,
            eps: a.eps,
            s: a.s,
            c: a.c,
            radial: a.radial,
            angular: a.angular,
            degree_cap: a.degree_cap,
            ..global
        },
        Command::Construct(a) => RunConfig {
            n_max: a.n_max,
            k0: a.k0,
            n_schedule: a.n_schedule.clone(),
            c: a.c,
            eps: a.eps,
            s: a.s,
            radial: a.radial,
            angular: a.angular,
            degree_cap: a.degree_cap,
            ..global
        },
        Command::VerifyAppendix(_) => global,
        Command::Transform(a) => RunConfig { radial: a.radial, angular: a.angular, ..global },
        Command::ExportMesh(a) => RunConfig { c: a.c, radial: a.radial, angular: a.angular, ..global },
    };
    let cfg = flags.over(file);
    cfg.validate()?;
    let out = cfg.out_root();
    let mut ctx = Ctx { cfg, out, timings: Timings::default() };
    match cli.command {
        Command::Labyrinth(a) => cmd_labyrinth(&mut ctx, &a),
        Command::Deform(a) => cmd_deform(&mut ctx, &a),
        Command::Keylemma(a) => cmd_keylemma(&mut ctx, &a),
        Command::Construct(_) => cmd_construct(&mut ctx),
        Command::VerifyAppendix(a) => cmd_verify_appendix(&mut ctx, &a),
        Command::Transform(a) => cmd_transform(&mut ctx, &a),
        Command::ExportMesh(a) => cmd_export_mesh(&mut ctx, &a),
    }
}

fn grid_of(cfg: &RunConfig, radial: usize, angular: usize) -> PolarGrid {
    PolarGrid::new(cfg.radial.unwrap_or(radial), cfg.angular.unwrap_or(angular))
}

fn load_wdata(path: &Path) -> Result<WData, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    WData::from_json(&text).map_err(|e| Failure::Config(format!("bad W-data in {}: {e}", path.display())))
}

#[derive(Serialize)]
struct LabyrinthSummary {
    n: u32,
    bands: u32,
    components: usize,
    delta: String,
    corridor_width: String,
    zeta_modulus: String,
    inner_radius: String,
    sector_components: Vec<usize>,
    coverage: bool,
}

fn cmd_labyrinth(ctx: &mut Ctx, a: &LabyrinthArgs) -> Outcome {
    let n = ctx.cfg.n.unwrap_or(8);
    let t = Instant::now();
    let lab = Labyrinth::build(n).map_err(|e| numeric("labyrinth")(&e))?;
    let coverage = lab.audit_coverage().is_ok();
    let summary = LabyrinthSummary {
        n,
        bands: lab.bands(),
        components: lab.components().count(),
        delta: lab.delta_exact().to_string(),
        corridor_width: lab.corridor_width_exact().to_string(),
        zeta_modulus: lab.zeta_modulus_exact().to_string(),
        inner_radius: lab.radii_exact().last().map(|r| r.to_string()).unwrap_or_default(),
        sector_components: (1..=2 * n).map(|j| lab.sector_components(j).len()).collect(),
        coverage,
    };
    let dir = ctx.dir(&format!("labyrinth-N{n}"));
    write_json(&dir.join("summary.json"), &summary)?;

    let sectors: Vec<u32> = match ctx.cfg.j {
        Some(j) => vec![j],
        None => (1..=2 * n).collect(),
    };
    let mut csv = String::from("j,x,y\n");
    for j in sectors {
        let sector = lab.sector(j).map_err(|e| Failure::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(ctx.cfg.seed(), &format!("labyrinth-{n}-{j}")));
        let per = (a.samples / (2 * n as usize)).max(1);
        let count = if ctx.cfg.j.is_some() { a.samples } else { per };
        for z in sector.sample_varpi(&mut rng, count) {
            let _ = writeln!(csv, "{j},{:.17e},{:.17e}", z.re, z.im);
        }
    }
    write_atomic(&dir.join("samples.csv"), csv.as_bytes())?;
    if a.emit_svg {
        write_atomic(&dir.join("labyrinth.svg"), lab.to_svg(ctx.cfg.j).as_bytes())?;
    }
    ctx.timings.record("labyrinth", t);
    ctx.finish(&dir)?;
    println!("labyrinth N={n}: {} components, coverage {}", summary.components, if coverage { "ok" } else { "FAILED" });
    if !coverage {
        return Err(Failure::Certificate("some component of Ω is not claimed by any ω_j".into()));
    }
    Ok(())
}

fn cmd_deform(ctx: &mut Ctx, a: &DeformArgs) -> Outcome {
    let cfg = &ctx.cfg;
    let (n, j, eps, c) = (cfg.n.unwrap_or(8), cfg.j.unwrap_or(1), cfg.eps.unwrap_or(0.1), cfg.c.unwrap_or(0.2));
    let mut params = DeformationParams::new(n, j, eps);
    params.seed = cfg.seed();
    params.degree_cap = cfg.degree_cap.unwrap_or(params.degree_cap);
    params.amplification = a.amplification;
    params.fit_policy = Policy::BestEffort;
    if a.strict_range {
        params.range_policy = Policy::Strict;
    }
    params.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let lab = Labyrinth::build(n).map_err(|e| Failure::Config(e.to_string()))?;
    let h = initial_horosphere(c).map_err(|e| Failure::Config(e.to_string()))?;
    let t = Instant::now();
    let res = deform(&h.wdata, &params, &lab).map_err(|e| numeric("deform")(&e))?;
    ctx.timings.record("deform", t);
    let report = res.report();
    let mut rec = DiagnosticsRecord::new("deform", 0, params.seed);
    rec.n = Some(n);
    rec.achieved.closeness = Some(report.closeness_met);
    rec.achieved.amplification = Some(report.amplification_met);
    rec.achieved.orthogonality_residual = Some(report.orthogonality_residual);
    rec.fitted.c = Some(report.fitted_c);
    let dir = ctx.dir(&format!("deform-N{n}-j{j}"));
    write_json(&dir.join("report.json"), &report)?;
    write_json(&dir.join("record.json"), &rec)?;
    write_atomic(&dir.join("wdata.json"), res.wdata.to_json().as_bytes())?;
    ctx.finish(&dir)?;
    println!(
        "deform N={n} j={j}: sup off {:.3e} (target {:.3e}), amplification {:.3e} (target {:.3e}), |u3| {:.4}, orthogonality {:.1e}",
        report.sup_off, report.closeness_target, report.amplification, report.amplification_target, report.u3_abs, report.orthogonality_residual
    );
    let mut unmet = Vec::new();
    if !report.closeness_met {
        unmet.push("closeness (a)");
    }
    if !report.amplification_met {
        unmet.push("amplification (b)");
    }
    if unmet.is_empty() {
        Ok(())
    } else {
        Err(Failure::Certificate(format!("unmet: {}", unmet.join(", "))))
    }
}

fn pass_options(cfg: &RunConfig) -> PassOptions {
    let mut opts = PassOptions { seed: cfg.seed(), ..PassOptions::default() };
    if cfg.radial.is_some() || cfg.angular.is_some() {
        opts.radius_grid = grid_of(cfg, opts.radius_grid.radial, opts.radius_grid.angular);
    }
    if let Some(d) = cfg.degree_cap {
        opts.degree_cap = d;
    }
    opts
}

fn print_certificates(list: &[CertificateOutcome]) {
    for o in list {
        println!("  {:<40} {} worst {:.3e} limit {:.1e}", o.name, if o.passed { "PASS" } else { "FAIL" }, o.worst, o.limit);
    }
}

fn cmd_keylemma(ctx: &mut Ctx, a: &KeyLemmaArgs) -> Outcome {
    let cfg = ctx.cfg.clone();
    let (n, eps, s, c) = (cfg.n.unwrap_or(8), cfg.eps.unwrap_or(0.05), cfg.s.unwrap_or(0.1), cfg.c.unwrap_or(0.2));
    let lab = Labyrinth::build(n).map_err(|e| Failure::Config(e.to_string()))?;
    let h = initial_horosphere(c).map_err(|e| Failure::Config(e.to_string()))?;
    let opts = pass_options(&cfg);
    let t = Instant::now();
    let pass = key_lemma_pass(&h.wdata, eps, s, n, &lab, &opts).map_err(|e| numeric("key-lemma pass")(&e))?;
    ctx.timings.record("pass", t);
    let d = &pass.diagnostics;
    let consts = pass.constants();
    let mut rec = DiagnosticsRecord::new("keylemma", 1, cfg.seed());
    rec.n = Some(n);
    rec.radius = Some(d.radius_after);
    rec.sup_norm = Some(d.sup_norm_after);
    rec.achieved.closeness = Some(d.closeness_met_all);
    rec.achieved.amplification = Some(d.amplification_met_all);
    rec.achieved.orthogonality_residual =
        Some(pass.states.iter().filter_map(|st| st.deformation.as_ref()).map(|r| r.orthogonality_residual).fold(0.0, f64::max));
    rec.fitted.b = Some(consts.b);
    rec.fitted.c = Some(consts.c);
    rec.fitted.c1 = Some(consts.c1);
    let dir = ctx.dir(&format!("keylemma-N{n}"));
    if a.survey > 0 {
        let t = Instant::now();
        let (rows, c4) = plane_distance_survey(&pass, a.survey, cfg.seed()).map_err(|e| numeric("plane survey")(&e))?;
        ctx.timings.record("plane survey", t);
        rec.fitted.c4 = Some(c4);
        let mut csv = String::from("j,re_p,im_p,distance,distance_tilde,theta,sine_law_residual,fitted_c4\n");
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.j, r.p.re, r.p.im, r.distance, r.distance_tilde, r.theta, r.sine_law_residual, r.fitted_c4
            );
        }
        write_atomic(&dir.join("plane.csv"), csv.as_bytes())?;
    }
    let mut certs = Vec::new();
    if cfg.verify == Some(true) {
        let t = Instant::now();
        let mut prev = &pass.initial;
        for st in &pass.states {
            let path = LinePath::segment(Complex64::new(0.0, 0.0), st.zeta).map_err(|e| numeric("verify")(&e))?;
            let mut got = path_certificates(&format!("sector {}", st.j), prev, &st.wdata, &path).map_err(|e| numeric("verify")(&e))?;
            certs.append(&mut got);
            prev = &st.wdata;
        }
        ctx.timings.record("verify", t);
        write_json(&dir.join("certificates.json"), &certs)?;
    }
    write_json(&dir.join("diagnostics.json"), d)?;
    write_json(&dir.join("constants.json"), &consts)?;
    write_json(&dir.join("record.json"), &rec)?;
    ctx.finish(&dir)?;
    println!(
        "keylemma N={n}: radius {:.9} -> {:.9} (target {:.4}), factor {:.9}, slack {:.3e}, basepoint residual {:.1e}",
        d.radius_before, d.radius_after, d.radius_target, d.factor, d.slack, d.max_basepoint_residual
    );
    print_certificates(&certs);
    if !(d.max_basepoint_residual < BASEPOINT_TOL) {
        return Err(Failure::Certificate(format!("B_2N(0) differs from id by {:.3e}", d.max_basepoint_residual)));
    }
    if !(d.radius_after > d.radius_before) {
        return Err(Failure::Certificate("geodesic radius did not increase".into()));
    }
    if !d.factor.is_finite() {
        return Err(Failure::Certificate("sup-norm factor is not finite".into()));
    }
    if let Some(f) = certs.iter().find(|c| !c.passed) {
        return Err(Failure::Certificate(format!("{} exceeded its limit", f.name)));
    }
    Ok(())
}

fn cmd_construct(ctx: &mut Ctx) -> Outcome {
    let cfg = ctx.cfg.clone();
    let mut params = IterationParams::from_horosphere(
        cfg.c.unwrap_or(0.2),
        cfg.k0.unwrap_or(8),
        cfg.n_schedule.clone().unwrap_or_else(|| vec![cfg.n.unwrap_or(8)]),
        cfg.n_max.unwrap_or(1),
    )
    .map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(e) = cfg.eps {
        params.eps = e;
    }
    if let Some(s) = cfg.s {
        params.s = s;
    }
    params.pass = pass_options(&cfg);
    params.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let dir = ctx.dir("construct");
    write_json(&dir.join("params.json"), &params)?;
    let mut stages_out = JsonLines::create(&dir.join("stages.jsonl"))?;
    let mut records_out = JsonLines::create(&dir.join("records.jsonl"))?;
    let mut io_error = None;
    let mut over_budget = Vec::new();
    let seed = cfg.seed();
    let t = Instant::now();
    let result = main_iteration_with(&params, |r: &StageReport| {
        let mut rec = DiagnosticsRecord::new("construct", r.stage, seed);
        rec.n = (r.big_n > 0).then_some(r.big_n);
        rec.radius = Some(r.radius);
        rec.sup_norm = Some(r.sup_norm);
        rec.budget = Some(r.budget);
        if let Some(p) = &r.pass {
            rec.achieved.closeness = Some(p.closeness_met_all);
            rec.achieved.amplification = Some(p.amplification_met_all);
            rec.achieved.orthogonality_residual = Some(p.max_conjugation_residual);
            rec.fitted.b = Some(p.fitted_b);
        }
        if r.headroom < 0.0 {
            over_budget.push(r.stage);
        }
        info!("stage {} written", r.stage);
        if let Err(e) = stages_out.append(r).and_then(|_| records_out.append(&rec)) {
            io_error.get_or_insert(e);
        }
    });
    ctx.timings.record("iteration", t);
    if let Some(e) = io_error {
        return Err(e.into());
    }
    let stages = result.map_err(|e| numeric("construct")(&e))?;
    stages_out.finish()?;
    records_out.finish()?;
    ctx.finish(&dir)?;
    for s in &stages {
        let r = &s.report;
        println!("stage {}: N={} radius {:.9} sup {:.9} budget {:.6}", r.stage, r.big_n, r.radius, r.sup_norm, r.budget);
    }
    if !over_budget.is_empty() {
        return Err(Failure::Certificate(format!("sup-norm budget exceeded at stages {over_budget:?}")));
    }
    Ok(())
}

fn cmd_verify_appendix(ctx: &mut Ctx, a: &VerifyArgs) -> Outcome {
    let opts = SuiteOptions {
        seed: ctx.cfg.seed(),
        matrix_samples: a.samples,
        ode_samples: a.ode_samples,
        fault: a.inject_fault.map(|FaultArg::DropSqrt2| Fault::DropSqrt2),
    };
    let t = Instant::now();
    let report = run_appendix(&opts).map_err(|e| numeric("appendix suite")(&e))?;
    ctx.timings.record("suite", t);
    let dir = ctx.dir("verify-appendix");
    write_json(&dir.join("report.json"), &report)?;
    ctx.finish(&dir)?;
    println!("appendix certificates (seed {}):", opts.seed);
    print_certificates(&report.outcomes);
    match report.first_failure() {
        None => Ok(()),
        Some(f) => Err(Failure::Certificate(format!("{}: worst {:.6e} > limit {:.1e}", f.name, f.worst, f.limit))),
    }
}

fn cmd_transform(ctx: &mut Ctx, a: &TransformArgs) -> Outcome {
    let cfg = &ctx.cfg;
    let w = match &a.data {
        Some(p) => load_wdata(p)?,
        None => WData::random(&mut ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed(), "transform"))),
    };
    let grid = grid_of(cfg, 8, 16);
    let dirs: Vec<Direction> = match a.direction {
        DirectionArg::C3ToSl2 => vec![Direction::C3ToSl2],
        DirectionArg::Sl2ToC3 => vec![Direction::Sl2ToC3],
        DirectionArg::Both => vec![Direction::C3ToSl2, Direction::Sl2ToC3],
    };
    let t = Instant::now();
    let mut reports = Vec::new();
    for d in dirs {
        let mut opts = NullCheckOptions { offset: [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(a.x3_offset, 0.0)], ..NullCheckOptions::default() };
        if d == Direction::Sl2ToC3 {
            let field = grid_solve(&w, &grid, Target::Sl2, &nullcurve::algebra::Sl2::identity(), &GridSolveOptions { loop_tol: f64::INFINITY, ..GridSolveOptions::default() })
                .map_err(|e| numeric("grid solve")(&e))?;
            opts.translate = choose_translation(&field).map_err(|e| numeric("translation")(&e))?.0;
        }
        reports.push(pushforward_null_check(&w, d, &grid, &opts).map_err(|e| numeric("null check")(&e))?);
    }
    ctx.timings.record("null check", t);
    let dir = ctx.dir("transform");
    write_json(&dir.join("report.json"), &reports)?;
    ctx.finish(&dir)?;
    for r in &reports {
        println!(
            "{:?}: residual {:.3e} over {} nodes ({} masked), metric ratio [{:.4}, {:.4}]",
            r.direction, r.max_residual, r.checked, r.masked, r.metric_ratio.0, r.metric_ratio.1
        );
    }
    match reports.iter().find(|r| !(r.max_residual < NULL_TOL)) {
        None => Ok(()),
        Some(r) => Err(Failure::Certificate(format!("{:?} null residual {:.3e} ≥ {NULL_TOL:e}", r.direction, r.max_residual))),
    }
}

fn cmd_export_mesh(ctx: &mut Ctx, a: &ExportArgs) -> Outcome {
    let cfg = &ctx.cfg;
    let w = match &a.data {
        Some(p) => load_wdata(p)?,
        None => initial_horosphere(cfg.c.unwrap_or(0.2)).map_err(|e| Failure::Config(e.to_string()))?.wdata,
    };
    let grid = grid_of(cfg, 32, 64);
    let target = match a.target {
        MeshTarget::H3 | MeshTarget::Desitter => Target::Sl2,
        MeshTarget::Maxface | MeshTarget::C2 => Target::C3,
    };
    let t = Instant::now();
    let field = grid_solve(&w, &grid, target, &nullcurve::algebra::Sl2::identity(), &GridSolveOptions::default())
        .map_err(|e| numeric("grid solve")(&e))?;
    let mesh = match a.target {
        MeshTarget::H3 => project_h3(&field),
        MeshTarget::Maxface => project_maxface(&field, &w),
        MeshTarget::Desitter => project_desitter(&field, &w),
        MeshTarget::C2 => project_c2(&field, &w),
    }
    .map_err(|e| numeric("projection")(&e))?;
    mesh.validate().map_err(|e| numeric("mesh")(&e))?;
    ctx.timings.record("export", t);
    let name = format!("{:?}", a.target).to_lowercase();
    let dir = ctx.dir(&format!("mesh-{name}"));
    write_atomic(&dir.join("mesh.obj"), mesh.to_obj().as_bytes())?;
    write_json(&dir.join("mesh.json"), &mesh.sidecar())?;
    write_atomic(&dir.join("mesh.csv"), mesh.to_csv().as_bytes())?;
    ctx.finish(&dir)?;
    println!("{name}: {} vertices, {} faces, {} singular", mesh.vertices.len(), mesh.faces.len(), mesh.singular_indices().len());
    for (k, v) in &mesh.certificates {
        println!("  {k} = {v:.6e}");
    }
    Ok(())
}
