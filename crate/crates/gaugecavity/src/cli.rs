//! Command-line driver. Each subcommand reads one config file, writes one
//! CSV (or text report), and maps failures onto a stable exit-code
//! contract: 0 success, 1 config error, 2 numerical failure, 3 validation
//! failure. Output files are written atomically so a crashed run never
//! leaves a truncated CSV behind.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};
use crate::field::FftCache;
use crate::gauge::{self, GaugeError};
use crate::model::{self, ModelKind, ModelSpec};
use crate::observables;
use crate::propagator::Propagator;
use crate::validate;
use crate::C64;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Parser)]
#[command(
    name = "gaugecavity",
    version,
    about = "Synthetic gauge structure of a two-mode cavity: surfaces, wave packets, Wilson loops"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Tabulate the adiabatic potential surfaces over a momentum lattice
    Surfaces(CommonArgs),
    /// Propagate the configured initial state and record observables
    Evolve(EvolveArgs),
    /// Parallel-transport the adiabatic frame around a loop; report the holonomy
    Wilson(CommonArgs),
    /// Run the built-in correctness suite against its own references
    Validate(ValidateArgs),
    /// Print derived model quantities without running anything
    Info(CommonArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// Config file (`key = value` lines, `#` comments)
    #[arg(long)]
    pub config: PathBuf,
    /// Write output here instead of standard output (atomic rename)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cap the worker thread count
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Report populations without renormalizing by the decaying norm
    #[arg(long)]
    pub raw_populations: bool,
}

#[derive(Args)]
pub struct ValidateArgs {
    /// Config for the knob-sensitive checks; built-in reference when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

enum CmdError {
    Config(String),
    Numerical(String),
    Validation { failed: usize },
}

impl CmdError {
    fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => EXIT_CONFIG,
            CmdError::Numerical(_) => EXIT_NUMERICAL,
            CmdError::Validation { .. } => EXIT_VALIDATION,
        }
    }

    fn message(&self) -> String {
        match self {
            CmdError::Config(m) | CmdError::Numerical(m) => m.clone(),
            CmdError::Validation { failed } => format!("{failed} validation check(s) failed"),
        }
    }
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e.to_string())
    }
}

impl From<GaugeError> for CmdError {
    fn from(e: GaugeError) -> Self {
        match e {
            // Shape problems in the loop description are config mistakes;
            // hitting a degeneracy is a property of the model's surfaces.
            GaugeError::InvalidLoop { .. } => CmdError::Config(e.to_string()),
            _ => CmdError::Numerical(e.to_string()),
        }
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Surfaces(a) => with_threads(a.threads, || cmd_surfaces(&a)),
        Command::Evolve(a) => with_threads(a.common.threads, || cmd_evolve(&a)),
        Command::Wilson(a) => with_threads(a.threads, || cmd_wilson(&a)),
        Command::Validate(a) => with_threads(a.threads, || cmd_validate(&a)),
        Command::Info(a) => with_threads(a.threads, || cmd_info(&a)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn with_threads(cap: Option<usize>, f: impl FnOnce() -> Result<(), CmdError>) -> Result<(), CmdError> {
    if let Some(n) = cap {
        if n == 0 {
            return Err(CmdError::Config("--threads must be at least 1".into()));
        }
        // Ignore a second initialization: the pool is process-global and the
        // cap only bounds parallelism, never results.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    f()
}

// ---------------------------------------------------------------------------
// Output plumbing.
// ---------------------------------------------------------------------------

fn provenance(cfg: &RunConfig) -> String {
    format!("# config_sha256 = {}\n", cfg.sha256_hex())
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), CmdError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| {
        CmdError::Config(format!("cannot write {}: {e}", path.display()))
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(contents.as_bytes()).map_err(io_err)?;
    tmp.persist(path)
        .map_err(|e| CmdError::Config(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str) -> Result<(), CmdError> {
    match out {
        Some(path) => write_atomic(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

/// CSV field quoting for free-form text (notes may contain commas).
fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn fmt_complex(z: C64) -> String {
    format!("{:+.6e}{:+.6e}i", z.re, z.im)
}

// ---------------------------------------------------------------------------
// surfaces
// ---------------------------------------------------------------------------

fn cmd_surfaces(args: &CommonArgs) -> Result<(), CmdError> {
    let cfg = RunConfig::load(&args.config)?;
    let spec = cfg.model_spec()?;
    let (npts, extent) = cfg.surfaces_lattice()?;
    let dim = spec.internal_dim();

    let mut csv = provenance(&cfg);
    csv.push_str("p1,p2,v1,v2");
    if dim == 3 {
        csv.push_str(",v3");
    }
    csv.push('\n');
    let coord = |i: usize| {
        if npts == 1 { 0.0 } else { -extent + 2.0 * extent * i as f64 / (npts - 1) as f64 }
    };
    for i in 0..npts {
        let p1 = coord(i);
        for j in 0..npts {
            let p2 = coord(j);
            let v = spec.adiabatic_surfaces(p1, p2);
            let _ = write!(csv, "{p1},{p2}");
            for vk in &v {
                let _ = write!(csv, ",{vk}");
            }
            csv.push('\n');
        }
    }
    emit(args.out.as_deref(), &csv)?;

    let summary = model_summary(&spec);
    if args.out.is_some() {
        print!("{summary}");
    } else {
        // Keep standard output machine-readable when the CSV goes there.
        eprint!("{summary}");
    }
    Ok(())
}

/// Shared lower-surface / intersection summary used by `surfaces` and `info`.
fn model_summary(spec: &ModelSpec) -> String {
    let mut s = String::new();
    let rep = model::sombrero_analysis(spec);
    let _ = writeln!(
        s,
        "lower surface minimum: {}",
        if rep.present {
            format!("off-origin at r = {:.6} (depth {:.6})", rep.r_min, rep.depth)
        } else {
            "at the origin".into()
        }
    );
    let _ = writeln!(
        s,
        "  coupling threshold sqrt(omega*splitting/2) = {:.6} rad/ns (matches the minimizer)",
        rep.g_threshold
    );
    let _ = writeln!(
        s,
        "  coupling threshold sqrt(omega*splitting)   = {:.6} rad/ns (variant, factor sqrt(2) higher)",
        rep.g_threshold_alt
    );
    match model::classify_intersection(spec) {
        Ok(report) => {
            let _ = writeln!(
                s,
                "surface intersection: {:?} at ({:.6}, {:.6})",
                report.kind, report.location.0, report.location.1
            );
            for fit in &report.pairs {
                let _ = writeln!(
                    s,
                    "  pair {}-{}: gap(s) ~ {:.3e} + {:.3e} s + {:.3e} s^2 at ({:.4}, {:.4}) -> {:?}",
                    fit.lower,
                    fit.lower + 1,
                    fit.c[0],
                    fit.c[1],
                    fit.c[2],
                    fit.location.0,
                    fit.location.1,
                    fit.kind
                );
            }
        }
        Err(e) => {
            let _ = writeln!(s, "surface intersection: not classified ({e})");
        }
    }
    s
}

// ---------------------------------------------------------------------------
// evolve
// ---------------------------------------------------------------------------

fn cmd_evolve(args: &EvolveArgs) -> Result<(), CmdError> {
    let cfg = RunConfig::load(&args.common.config)?;
    let spec = cfg.model_spec()?;
    let grid = cfg.grid(&spec)?;
    let mut psi = cfg.initial_state(&spec)?;
    let (dt, steps, every) = cfg.schedule()?;
    let prop = Propagator::new(&spec, grid, dt)
        .map_err(|e| CmdError::Config(e.to_string()))?;

    let fft = FftCache::new(grid.n());
    let renorm = !args.raw_populations;
    let n_modes = grid.n_modes();
    let dim = spec.internal_dim();

    let mut csv = provenance(&cfg);
    csv.push_str("t_ns,norm2");
    for c in 1..=dim {
        let _ = write!(csv, ",p{c}");
    }
    csv.push_str(",W,x1,p1q");
    if n_modes == 2 {
        csv.push_str(",x2,p2q");
    }
    csv.push('\n');

    let mut measure_err: Option<String> = None;
    prop.evolve(&mut psi, steps, every, |_, t, f| {
        if measure_err.is_some() {
            return;
        }
        match observables::measure(f, &fft, renorm) {
            Ok(obs) => {
                let _ = write!(csv, "{t},{}", obs.norm2);
                for p in &obs.p {
                    let _ = write!(csv, ",{p}");
                }
                let _ = write!(csv, ",{}", obs.w);
                for k in 0..n_modes {
                    let _ = write!(csv, ",{},{}", obs.x_mean[k], obs.p_mean[k]);
                }
                csv.push('\n');
            }
            Err(e) => measure_err = Some(e.to_string()),
        }
    })
    .map_err(|e| CmdError::Numerical(e.to_string()))?;
    if let Some(e) = measure_err {
        return Err(CmdError::Numerical(e));
    }
    emit(args.common.out.as_deref(), &csv)
}

// ---------------------------------------------------------------------------
// wilson
// ---------------------------------------------------------------------------

fn cmd_wilson(args: &CommonArgs) -> Result<(), CmdError> {
    let cfg = RunConfig::load(&args.config)?;
    let spec = cfg.model_spec()?;
    let loop_spec = cfg.loop_spec(&spec)?;
    let result = gauge::wilson_loop(&spec, &loop_spec)?;

    let mut csv = provenance(&cfg);
    let _ = writeln!(csv, "# segments_requested = {}", loop_spec.n_segments);
    let _ = writeln!(csv, "# segments_used = {}", result.discretization);
    let _ = writeln!(csv, "# convergence_estimate = {:e}", result.convergence_estimate);
    let _ = writeln!(
        csv,
        "# unitarity_defect = {:e}",
        gauge::unitarity_defect(&result.holonomy)
    );
    csv.push_str("band_i,band_j,re,im\n");
    for (i, &bi) in loop_spec.bands.iter().enumerate() {
        for (j, &bj) in loop_spec.bands.iter().enumerate() {
            let u = result.holonomy[(i, j)];
            let _ = writeln!(csv, "{bi},{bj},{},{}", u.re, u.im);
        }
    }
    emit(args.out.as_deref(), &csv)
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn cmd_validate(args: &ValidateArgs) -> Result<(), CmdError> {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::parse(validate::REFERENCE_CONFIG)?,
    };
    let reports = validate::run_all(&cfg)?;

    let mut csv = provenance(&cfg);
    csv.push_str("check,status,metric,threshold,note\n");
    for r in &reports {
        let _ = writeln!(
            csv,
            "{},{},{:.3e},{:.3e},{}",
            r.name,
            if r.passed { "pass" } else { "fail" },
            r.metric,
            r.threshold,
            csv_quote(&r.note)
        );
    }
    emit(args.out.as_deref(), &csv)?;

    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        for r in reports.iter().filter(|r| !r.passed) {
            eprintln!(
                "validate: {} failed: metric {:.3e} vs threshold {:.3e} {}",
                r.name, r.metric, r.threshold, r.note
            );
        }
        return Err(CmdError::Validation { failed });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// info
// ---------------------------------------------------------------------------

fn cmd_info(args: &CommonArgs) -> Result<(), CmdError> {
    let cfg = RunConfig::load(&args.config)?;
    let spec = cfg.model_spec()?;
    let mut s = String::new();

    let kind = match spec.kind {
        ModelKind::Rabi => "rabi",
        ModelKind::BimodalRabi => "bimodal_rabi",
        ModelKind::BimodalLambda => "bimodal_lambda",
    };
    let _ = writeln!(
        s,
        "model: {kind} ({} mode(s), {} internal levels)",
        spec.n_modes(),
        spec.internal_dim()
    );
    let rate = |name: &str, v: f64| {
        format!("{name} = {v:.6} rad/ns ({:.6} GHz)", v / std::f64::consts::TAU)
    };
    let _ = writeln!(s, "{}", rate("omega", spec.omega));
    match spec.kind {
        ModelKind::BimodalLambda => {
            for (i, e) in spec.levels.iter().enumerate() {
                let _ = writeln!(s, "{}", rate(&format!("e{}", i + 1), *e));
            }
        }
        _ => {
            let _ = writeln!(s, "{}", rate("splitting", spec.splitting));
        }
    }
    let _ = writeln!(s, "{}", rate("g", spec.g));
    let _ = writeln!(s, "{}", rate("kappa", spec.kappa));
    let _ = writeln!(s, "{}", rate("gamma", spec.gamma));

    let period = std::f64::consts::TAU / spec.omega;
    let _ = writeln!(s, "orbit period 2*pi/omega = {period:.4} ns");
    let _ = writeln!(s, "six orbit periods = {:.4} ns", 6.0 * period);

    let _ = writeln!(s, "is_abelian = {}", model::is_abelian(&spec));
    let com = model::gauge_commutator(&spec);
    let _ = writeln!(s, "[A1, A2] (zero matrix when single-mode):");
    for i in 0..spec.internal_dim() {
        let row: Vec<String> = (0..spec.internal_dim())
            .map(|j| fmt_complex(com.at(i, j)))
            .collect();
        let _ = writeln!(s, "  [{}]", row.join(", "));
    }

    s.push_str(&model_summary(&spec));

    if let Ok((dt, steps, every)) = cfg.schedule() {
        let _ = writeln!(
            s,
            "schedule: dt = {dt} ns, {steps} steps to t = {} ns, snapshot every {every} steps",
            dt * steps as f64
        );
    }
    emit(args.out.as_deref(), &s)
}
