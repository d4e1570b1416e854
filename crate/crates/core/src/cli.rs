//! Command implementations behind the `lipcert` binary.
//!
//! Every command writes a machine-readable report (JSON or CSV) either to
//! standard output or to `--output`. Reports carry a `schema` tag so that
//! downstream tooling can detect format changes.
//!
//! Exit codes: `0` success, `1` usage, `2` bad input data, `3` solver or
//! validation failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lmi::{estimate_lipschitz_hybrid, EstimateOptions, LipschitzCertificate};
use crate::lure::{assemble_lure_with, lure_forward, resolve_kind, RealizationKind};
use crate::model::{load_network, ConvLayerSpec, Kernel2D, NetworkSpec};
use crate::realization::{
    full_region, reachable_subspace, realize_conv, realize_conv_compact, simulate,
};
use crate::sdpsolve::validate::{validate_certificate, ValidationReport};
use crate::sdpsolve::{SolverOptions, SolverReport};
use crate::signal2d::{conv_forward, conv_stack_forward, embed_image, hinf_grid, toeplitz_norm};

pub const REPORT_SCHEMA: &str = "lipcert.report/1";
pub const BENCH_SCHEMA: &str = "lipcert.bench/1";
pub const SIMULATE_SCHEMA: &str = "lipcert.simulate/1";
pub const REALIZE_SCHEMA: &str = "lipcert.realize/1";
pub const CHECK_SCHEMA: &str = "lipcert.check/1";

#[derive(Debug, Parser)]
#[command(
    name = "lipcert",
    version,
    about = "Lipschitz certificates for convolutional networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Upper-bound the Lipschitz constant of a model.
    Lipschitz(LipschitzArgs),
    /// Compare methods on random single-layer kernels.
    BenchRandom(BenchArgs),
    /// Check the state-space simulation against direct convolution.
    Simulate(SimulateArgs),
    /// Dump the Roesser realization of one layer.
    Realize(RealizeArgs),
    /// Validate a stored certificate against a model.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RoesserSdp,
    Toeplitz,
    HinfGrid,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::RoesserSdp => "roesser-sdp",
            Method::Toeplitz => "toeplitz",
            Method::HinfGrid => "hinf-grid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RealizationArg {
    Auto,
    Redundant,
    Compact,
}

impl From<RealizationArg> for RealizationKind {
    fn from(r: RealizationArg) -> Self {
        match r {
            RealizationArg::Auto => RealizationKind::Auto,
            RealizationArg::Redundant => RealizationKind::Redundant,
            RealizationArg::Compact => RealizationKind::Compact,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Gap and feasibility tolerance of the SDP solver.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Realization used for the conv stack.
    #[arg(long, value_enum, default_value = "auto")]
    pub realization: RealizationArg,
    /// Restrict storage functions to the reachable subspace.
    #[arg(long, overrides_with = "no_project", default_value_t = true)]
    pub project: bool,
    #[arg(long = "no-project")]
    pub no_project: bool,
    /// Random trajectory pairs used by validation.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

impl SolverArgs {
    fn options(&self) -> Result<EstimateOptions> {
        let mut solver = SolverOptions::from_env()?;
        if let Some(t) = self.tol {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Usage(format!("--tol must be positive, got {t}")));
            }
            solver.gap_tol = t;
            solver.feas_tol = t;
        }
        Ok(EstimateOptions {
            realization: self.realization.into(),
            project: self.project && !self.no_project,
            solver,
            ..Default::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct LipschitzArgs {
    /// Model file (JSON).
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "roesser-sdp")]
    pub method: Method,
    /// Input side length for the Toeplitz baseline (defaults to each layer's input size).
    #[arg(long)]
    pub d1: Option<usize>,
    /// Frequency grid size for the H-infinity baseline.
    #[arg(long, default_value_t = 64)]
    pub grid_n: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value = "json")]
    pub out: OutFormat,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also save the certificate (roesser-sdp only).
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Kernel side length (odd, centered).
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input sizes for the Toeplitz baseline.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30")]
    pub d1_list: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub grid_n: usize,
    /// Validation trials per SDP certificate.
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// CSV output path (standard output if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub realization: RealizationArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RealizeArgs {
    pub model: PathBuf,
    /// 1-based conv layer index.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    #[arg(long, value_enum, default_value = "redundant")]
    pub realization: RealizationArg,
    /// Write the realization matrices here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub model: PathBuf,
    pub certificate: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command; returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("lipcert: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, writing human-readable lines and stdout reports to `out`.
pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Lipschitz(a) => cmd_lipschitz(&a, out),
        Command::BenchRandom(a) => cmd_bench_random(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Realize(a) => cmd_realize(&a, out),
        Command::Check(a) => cmd_check(&a, out),
    }
}

fn emit(out: &mut dyn Write, path: Option<&Path>, body: &str, summary: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, body).map_err(|e| Error::io_at(p, e))?;
            writeln!(out, "{summary}")?;
        }
        None => writeln!(out, "{}", body.trim_end())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub schema: &'static str,
    pub model: String,
    pub method: Method,
    /// Upper bound for `roesser-sdp`; baseline value otherwise.
    pub value: f64,
    pub per_layer: Vec<f64>,
    pub dense_norms: Vec<f64>,
    pub time_s: f64,
    pub d1: Option<usize>,
    pub grid_n: Option<usize>,
    pub realization: Option<String>,
    pub projected: Option<bool>,
    pub hybrid: bool,
    pub q_c_eigenvalues: Vec<f64>,
    pub solver: Option<SolverReport>,
    pub validation: Option<ValidationReport>,
    pub seed: u64,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Side length of the input of each conv layer.
fn layer_input_sides(spec: &NetworkSpec) -> Vec<usize> {
    let mut d = spec.input_height.max(spec.input_width);
    spec.conv_layers
        .iter()
        .map(|l| {
            let here = d;
            d = d.saturating_sub(l.kernel.span());
            here
        })
        .collect()
}

pub fn cmd_lipschitz(a: &LipschitzArgs, out: &mut dyn Write) -> Result<()> {
    let spec = load_network(&a.model)?;
    let start = Instant::now();
    let dense_norms: Vec<f64> = spec
        .dense_layers
        .iter()
        .map(|d| spectral_norm(&d.weight))
        .collect();
    let dense_prod: f64 = dense_norms.iter().product();
    let mut report = LipschitzReport {
        schema: REPORT_SCHEMA,
        model: a.model.display().to_string(),
        method: a.method,
        value: f64::NAN,
        per_layer: vec![],
        dense_norms,
        time_s: 0.0,
        d1: None,
        grid_n: None,
        realization: None,
        projected: None,
        hybrid: spec.is_hybrid(),
        q_c_eigenvalues: vec![],
        solver: None,
        validation: None,
        seed: a.seed,
    };
    let mut cert: Option<LipschitzCertificate> = None;
    match a.method {
        Method::Toeplitz => {
            let sides = layer_input_sides(&spec);
            report.per_layer = spec
                .conv_layers
                .iter()
                .zip(&sides)
                .map(|(l, &d)| toeplitz_norm(l, a.d1.unwrap_or(d)))
                .collect::<Result<_>>()?;
            report.d1 = a.d1;
            report.value = report.per_layer.iter().product::<f64>() * dense_prod;
        }
        Method::HinfGrid => {
            if a.grid_n < 2 {
                return Err(Error::Usage("--grid-n must be at least 2".into()));
            }
            report.per_layer = spec
                .conv_layers
                .iter()
                .map(|l| hinf_grid(l, a.grid_n))
                .collect();
            report.grid_n = Some(a.grid_n);
            report.value = report.per_layer.iter().product::<f64>() * dense_prod;
        }
        Method::RoesserSdp => {
            let opts = a.solver.options()?;
            let c = estimate_lipschitz_hybrid(&spec, &opts)?;
            let v = validate_certificate(&spec, &c, a.solver.trials, a.seed)?;
            report.value = c.gamma;
            report.realization = Some(c.realization.clone());
            report.projected = Some(opts.project);
            report.q_c_eigenvalues = c.q_c_eigenvalues.clone();
            report.solver = Some(c.report.clone());
            report.validation = Some(v);
            cert = Some(c);
        }
    }
    report.time_s = start.elapsed().as_secs_f64();
    if let (Some(c), Some(path)) = (&cert, &a.certificate) {
        c.save(path)?;
    }
    let body = match a.out {
        OutFormat::Json => to_json(&report),
        OutFormat::Csv => lipschitz_csv(&report)?,
    };
    let verdict = match &report.validation {
        Some(v) if v.passed => "validated",
        Some(_) => "VALIDATION FAILED",
        None => "baseline (not a certificate)",
    };
    let summary = format!(
        "{}: {} = {:.6} ({verdict}, {:.2}s)",
        report.model,
        a.method.name(),
        report.value,
        report.time_s
    );
    emit(out, a.output.as_deref(), &body, &summary)?;
    match report.validation {
        Some(v) if !v.passed => v.into_result().map(|_| ()),
        _ => Ok(()),
    }
}

fn lipschitz_csv(r: &LipschitzReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "schema",
        "model",
        "method",
        "value",
        "time_s",
        "validated",
        "solver_status",
    ])
    .map_err(csv_err)?;
    w.write_record([
        r.schema.to_string(),
        r.model.clone(),
        r.method.name().to_string(),
        format!("{:.12e}", r.value),
        format!("{:.6}", r.time_s),
        r.validation
            .as_ref()
            .map_or("", |v| if v.passed { "true" } else { "false" })
            .to_string(),
        r.solver
            .as_ref()
            .map_or(String::new(), |s| s.status.to_string()),
    ])
    .map_err(csv_err)?;
    finish_csv(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Standard-normal kernel of side `size` centered on the origin.
pub fn random_kernel(rng: &mut ChaCha8Rng, size: usize, channels: usize) -> Result<ConvLayerSpec> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::Usage(format!(
            "--kernel must be odd and positive, got {size}"
        )));
    }
    let r = (size - 1) / 2;
    Ok(ConvLayerSpec::unbiased(Kernel2D::random(
        rng, channels, channels, r, r,
    )))
}

#[derive(Debug, Clone, Default)]
struct BenchRow {
    sdp: Option<(f64, f64)>,
    hinf: (f64, f64),
    toeplitz: Vec<Option<(f64, f64)>>,
    error: Option<String>,
}

fn bench_instance(
    layer: &ConvLayerSpec,
    a: &BenchArgs,
    opts: &EstimateOptions,
    seed: u64,
) -> BenchRow {
    let mut row = BenchRow::default();
    let t = Instant::now();
    let h = hinf_grid(layer, a.grid_n);
    row.hinf = (h, t.elapsed().as_secs_f64());
    row.toeplitz = a
        .d1_list
        .iter()
        .map(|&d| {
            let t = Instant::now();
            toeplitz_norm(layer, d)
                .ok()
                .map(|v| (v, t.elapsed().as_secs_f64()))
        })
        .collect();
    let t = Instant::now();
    let res = crate::lmi::estimate_lipschitz_layer(layer, opts).and_then(|c| {
        let spec = crate::lmi::single_layer_network(layer)?;
        validate_certificate(&spec, &c, a.trials, seed)?.into_result()?;
        Ok(c.gamma)
    });
    match res {
        Ok(g) => row.sdp = Some((g, t.elapsed().as_secs_f64())),
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

pub fn cmd_bench_random(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    if a.instances == 0 {
        return Err(Error::Usage("--instances must be positive".into()));
    }
    if a.d1_list.contains(&0) {
        return Err(Error::Usage("--d1-list entries must be positive".into()));
    }
    if a.grid_n < 2 {
        return Err(Error::Usage("--grid-n must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let layers: Vec<ConvLayerSpec> = (0..a.instances)
        .map(|_| random_kernel(&mut rng, a.kernel, a.channels))
        .collect::<Result<_>>()?;
    let mut opts = EstimateOptions {
        solver: SolverOptions::from_env()?,
        ..Default::default()
    };
    if let Some(t) = a.tol {
        opts.solver.gap_tol = t;
        opts.solver.feas_tol = t;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("--jobs: {e}")))?;
    let rows: Vec<BenchRow> = pool.install(|| {
        layers
            .par_iter()
            .enumerate()
            .map(|(k, l)| bench_instance(l, a, &opts, a.seed.wrapping_add(k as u64)))
            .collect()
    });

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "schema".to_string(),
        "instance".into(),
        "roesser_sdp".into(),
        "roesser_sdp_time_s".into(),
        "hinf_grid".into(),
        "hinf_grid_time_s".into(),
    ];
    for d in &a.d1_list {
        header.push(format!("toeplitz_d{d}"));
        header.push(format!("toeplitz_d{d}_time_s"));
    }
    header.push("error".into());
    w.write_record(&header).map_err(csv_err)?;
    let fmt = |v: Option<(f64, f64)>| match v {
        Some((x, t)) => (format!("{x:.10e}"), format!("{t:.6}")),
        None => (String::new(), String::new()),
    };
    for (k, r) in rows.iter().enumerate() {
        let mut rec = vec![BENCH_SCHEMA.to_string(), k.to_string()];
        let (v, t) = fmt(r.sdp);
        rec.extend([v, t]);
        let (v, t) = fmt(Some(r.hinf));
        rec.extend([v, t]);
        for tp in &r.toeplitz {
            let (v, t) = fmt(*tp);
            rec.extend([v, t]);
        }
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    // Summary row: means over the instances that produced a value.
    let mean = |vals: Vec<(f64, f64)>| -> Option<(f64, f64)> {
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        Some((
            vals.iter().map(|v| v.0).sum::<f64>() / n,
            vals.iter().map(|v| v.1).sum::<f64>() / n,
        ))
    };
    let mut rec = vec![BENCH_SCHEMA.to_string(), "mean".to_string()];
    let (v, t) = fmt(mean(rows.iter().filter_map(|r| r.sdp).collect()));
    rec.extend([v, t]);
    let (v, t) = fmt(mean(rows.iter().map(|r| r.hinf).collect()));
    rec.extend([v, t]);
    for j in 0..a.d1_list.len() {
        let (v, t) = fmt(mean(rows.iter().filter_map(|r| r.toeplitz[j]).collect()));
        rec.extend([v, t]);
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    rec.push(if failed > 0 {
        format!("{failed} failed")
    } else {
        String::new()
    });
    w.write_record(&rec).map_err(csv_err)?;
    let body = finish_csv(w)?;
    let summary = format!("bench-random: {} instances, {} failed", a.instances, failed);
    emit(out, a.out.as_deref(), body.trim_end(), &summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub schema: &'static str,
    pub model: String,
    pub realization: String,
    /// Per conv layer: max |simulate(realization) - conv_forward| on a random input.
    pub layer_max_abs_diff: Vec<f64>,
    /// Max |Lur'e simulation - conv stack| on a random image.
    pub stack_max_abs_diff: f64,
    pub max_abs_diff: f64,
    pub seed: u64,
}

/// Differences above this are reported as a failure.
pub const SIMULATE_TOL: f64 = 1e-10;

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let spec = load_network(&a.model)?;
    let report = simulate_report(
        &spec,
        a.realization.into(),
        a.seed,
        a.model.display().to_string(),
    )?;
    let summary = format!("{}: max |diff| = {:.3e}", report.model, report.max_abs_diff);
    emit(out, a.output.as_deref(), &to_json(&report), &summary)?;
    if !(report.max_abs_diff <= SIMULATE_TOL) {
        return Err(Error::Validation(format!(
            "simulation differs from direct convolution by {:.3e}",
            report.max_abs_diff
        )));
    }
    Ok(())
}

pub fn simulate_report(
    spec: &NetworkSpec,
    kind: RealizationKind,
    seed: u64,
    model: String,
) -> Result<SimulateReport> {
    let kind = resolve_kind(&spec.conv_layers, kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer_diffs = Vec::new();
    let sides = layer_input_sides(spec);
    for (l, &d) in spec.conv_layers.iter().zip(&sides) {
        let sys = match kind {
            RealizationKind::Compact => realize_conv_compact(l),
            _ => realize_conv(l),
        };
        let img = Array3::from_shape_fn((d, d, l.c_in()), |_| rng.sample::<f64, _>(StandardNormal));
        let u = embed_image(&img);
        let y = simulate(&sys, &u, full_region(l, &u))?;
        layer_diffs.push(y.max_abs_diff(&conv_forward(l, &u, true)?));
    }
    let img = Array3::from_shape_fn(
        (spec.input_height, spec.input_width, spec.input_channels),
        |_| rng.sample::<f64, _>(StandardNormal),
    );
    let mut sys = assemble_lure_with(&spec.conv_layers, kind)?;
    if spec.is_hybrid() {
        sys = sys.with_output_activation();
    }
    let u = embed_image(&img);
    let tr = lure_forward(&sys, &spec.activation, &u, sys.frame_for(&u))?;
    let stack_diff = tr.y.max_abs_diff(&conv_stack_forward(spec, &img)?);
    let max = layer_diffs.iter().fold(stack_diff, |m, v| m.max(*v));
    Ok(SimulateReport {
        schema: SIMULATE_SCHEMA,
        model,
        realization: kind.to_string(),
        layer_max_abs_diff: layer_diffs,
        stack_max_abs_diff: stack_diff,
        max_abs_diff: max,
        seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RealizeReport {
    pub schema: &'static str,
    pub model: String,
    pub layer: usize,
    pub realization: String,
    pub n1: usize,
    pub n2: usize,
    pub reachable_dim: usize,
    pub matrices: Option<PathBuf>,
}

pub fn cmd_realize(a: &RealizeArgs, out: &mut dyn Write) -> Result<()> {
    let spec = load_network(&a.model)?;
    let n = spec.conv_layers.len();
    if a.layer == 0 || a.layer > n {
        return Err(Error::Usage(format!(
            "--layer must be in 1..={n}, got {}",
            a.layer
        )));
    }
    let layer = &spec.conv_layers[a.layer - 1];
    let kind = match RealizationKind::from(a.realization) {
        RealizationKind::Auto => resolve_kind(std::slice::from_ref(layer), RealizationKind::Auto),
        k => k,
    };
    let sys = match kind {
        RealizationKind::Compact => realize_conv_compact(layer),
        _ => realize_conv(layer),
    };
    if let Some(p) = &a.output {
        std::fs::write(p, sys.to_json())?;
    }
    let report = RealizeReport {
        schema: REALIZE_SCHEMA,
        model: a.model.display().to_string(),
        layer: a.layer,
        realization: kind.to_string(),
        n1: sys.n1(),
        n2: sys.n2(),
        reachable_dim: reachable_subspace(&sys).ncols(),
        matrices: a.output.clone(),
    };
    writeln!(out, "{}", to_json(&report))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub schema: &'static str,
    pub model: String,
    pub certificate: String,
    pub validation: ValidationReport,
}

pub fn cmd_check(a: &CheckArgs, out: &mut dyn Write) -> Result<()> {
    let spec = load_network(&a.model)?;
    let cert = LipschitzCertificate::load(&a.certificate)?;
    let v = validate_certificate(&spec, &cert, a.trials, a.seed)?;
    let report = CheckReport {
        schema: CHECK_SCHEMA,
        model: a.model.display().to_string(),
        certificate: a.certificate.display().to_string(),
        validation: v.clone(),
    };
    let summary = format!(
        "{}: gamma = {:.6} {}",
        report.certificate,
        v.gamma,
        if v.passed { "valid" } else { "INVALID" }
    );
    emit(out, a.output.as_deref(), &to_json(&report), &summary)?;
    v.into_result().map(|_| ())
}
