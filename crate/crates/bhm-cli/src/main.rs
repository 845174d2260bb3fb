use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use bhm_cli::band::{bootstrap_band, eval_points, make_transform, restore_sigma, EvalPoint};
use bhm_cli::formats::{self, fmt_real};
use bhm_core::accum::{Domain, SampleAccumulator};
use bhm_core::errors::{
    covariance_band, evolution_error, ErrorBand, EvolutionTrace, DEFAULT_GRID_POINTS,
};
use bhm_core::hierarchy::build;
use bhm_core::splinefit::{adaptive_fit, eval, FitConfig, FitDiagnostics, SplineModel};
use bhm_core::testbed::{builtin, sample};
use bhm_core::transforms::{MonotoneMap, TransformKind};
use bhm_core::zerocheck::{check_zero, Consistency, ZeroVerdict};

/// Data consistent with zero: collect more samples before fitting.
const EXIT_ZERO: u8 = 2;
/// No threshold accepted the fit; a best-effort model was still written.
const EXIT_UNACCEPTED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "bhm",
    version,
    about = "Reconstruct a smooth function from noisy sampled integrals"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a built-in distribution into a histogram file
    Sample(SampleArgs),
    /// Pool two or more histogram files into one
    Merge(MergeArgs),
    /// Fit a spline to a histogram (diagnostics on stderr)
    Fit(FitArgs),
    /// Evaluate a fitted spline with an error band, as TSV
    Eval(EvalArgs),
    /// Test a histogram for consistency with the zero function
    CheckZero(CheckZeroArgs),
    /// Produce an error-band file for a fitted spline (alias of eval)
    Errors(EvalArgs),
    /// Compare a fitted spline against a built-in truth, as TSV
    Compare(CompareArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransformArg {
    None,
    Arctan,
    Exp,
}

impl From<TransformArg> for TransformKind {
    fn from(t: TransformArg) -> TransformKind {
        match t {
            TransformArg::None => TransformKind::Identity,
            TransformArg::Arctan => TransformKind::Arctan,
            TransformArg::Exp => TransformKind::Exp,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Cov,
    Bootstrap,
    Evolution,
}

#[derive(Args)]
struct SampleArgs {
    /// Built-in distribution name
    #[arg(long)]
    dist: String,
    /// Number of recorded samples
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Histogram resolution: 2^k elementary bins
    #[arg(long, default_value_t = 10)]
    k: u32,
    /// Map the sampling domain before binning
    #[arg(long, value_enum, default_value_t = TransformArg::None)]
    transform: TransformArg,
    /// Weight power p: record in y with weight x^p
    #[arg(long, default_value_t = 0.0)]
    weight_power: f64,
    /// Output path (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    /// Input histograms (at least two)
    #[arg(num_args = 2.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Input histogram
    #[arg(long)]
    hist: PathBuf,
    /// Polynomial order of the spline pieces
    #[arg(long, default_value_t = 3)]
    order: u32,
    /// Acceptance-threshold sweep start
    #[arg(long, default_value_t = 2.0)]
    t_min: f64,
    /// Acceptance-threshold sweep end
    #[arg(long, default_value_t = 4.0)]
    t_max: f64,
    /// Minimum bin occupancy for usable statistics
    #[arg(long, default_value_t = 10)]
    min_count: u64,
    /// Skip the smoothness constraint on accepted multi-piece fits
    #[arg(long)]
    no_jump_constraint: bool,
    /// Fit even when the data is consistent with zero
    #[arg(long)]
    allow_zero: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckZeroArgs {
    /// Input histogram
    #[arg(long)]
    hist: PathBuf,
    #[arg(long, default_value_t = 10)]
    min_count: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Fitted spline (defaults to the last --snapshots entry)
    #[arg(long, required_unless_present = "snapshots")]
    spline: Option<PathBuf>,
    /// Number of grid points
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid: usize,
    /// Evaluate on [x-lo, x-hi] instead of the whole fitted range
    #[arg(long, requires = "x_hi")]
    x_lo: Option<f64>,
    #[arg(long, requires = "x_lo")]
    x_hi: Option<f64>,
    /// Error-band method
    #[arg(long = "errors", value_enum, default_value_t = MethodArg::Cov)]
    method: MethodArg,
    /// Partial histograms (bootstrap band)
    #[arg(long, num_args = 1..)]
    parts: Vec<PathBuf>,
    /// Bootstrap replicas
    #[arg(long, default_value_t = 100)]
    m_tilde: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bootstrap worker threads (falls back to BHM_THREADS, then all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Spline snapshots at k·delta samples, oldest first (evolution band)
    #[arg(long, num_args = 1..)]
    snapshots: Vec<PathBuf>,
    /// Samples between snapshots (evolution band)
    #[arg(long)]
    delta: Option<u64>,
    /// Increments before this snapshot index are discarded (evolution band)
    #[arg(long, default_value_t = 1)]
    k0: usize,
    /// Histogram occupancy floor for bootstrap refits
    #[arg(long, default_value_t = 10)]
    min_count: u64,
    /// Report in original coordinates of this transform
    #[arg(long, value_enum, default_value_t = TransformArg::None)]
    transform: TransformArg,
    #[arg(long, default_value_t = 0.0)]
    weight_power: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Built-in distribution to compare against
    #[arg(long)]
    dist: String,
    #[command(flatten)]
    eval: EvalArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("bhm: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Sample(a) => run_sample(a),
        Cmd::Merge(a) => run_merge(a),
        Cmd::Fit(a) => run_fit(a),
        Cmd::Eval(a) | Cmd::Errors(a) => run_eval(a, None),
        Cmd::CheckZero(a) => run_check_zero(a),
        Cmd::Compare(a) => run_eval(a.eval, Some(a.dist)),
    }
}

fn write_out<F>(path: Option<&Path>, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(file);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn run_sample(args: SampleArgs) -> Result<u8> {
    let dist = builtin(&args.dist)?;
    let transform = make_transform(args.transform.into(), args.weight_power)?;
    let (x_lo, x_hi) = dist.domain();
    let (lo, hi) = match &transform {
        Some(t) => (t.kind.y_of(x_lo), t.kind.y_of(x_hi)),
        None => (x_lo, x_hi),
    };
    if !lo.is_finite() || !hi.is_finite() {
        bail!("domain [{x_lo}, {x_hi}] is unbounded; sample with --transform arctan or exp");
    }
    let mut acc = SampleAccumulator::new(Domain::new(lo, hi)?, args.k, None)?;
    sample(&dist, args.n, args.seed, &mut acc, transform.as_ref())?;
    write_out(args.out.as_deref(), |w| formats::write_hist(w, &acc))?;
    Ok(0)
}

fn run_merge(args: MergeArgs) -> Result<u8> {
    let mut acc: Option<SampleAccumulator> = None;
    for path in &args.inputs {
        let next = formats::read_hist_file(path)
            .with_context(|| format!("reading {}", path.display()))?;
        acc = Some(match acc {
            None => next,
            Some(a) => a
                .merge(&next)
                .with_context(|| format!("merging {}", path.display()))?,
        });
    }
    write_out(args.out.as_deref(), |w| formats::write_hist(w, &acc.unwrap()))?;
    Ok(0)
}

fn print_zero_table(w: &mut dyn Write, v: &ZeroVerdict) -> io::Result<()> {
    match v.verdict {
        Consistency::CertainlyInconsistent => {
            let c = v.triggered_condition.expect("inconsistent verdict names a condition");
            writeln!(w, "verdict: certainly inconsistent with zero (condition {c})")?;
        }
        Consistency::ConsistentWithZero => {
            writeln!(w, "verdict: consistent with zero")?;
        }
    }
    writeln!(w, "{:>5} {:>7} {:>12} {:>12}", "level", "usable", "excess", "fresh")?;
    let cell = |v: Option<f64>| match v {
        Some(e) => format!("{e:>12.4}"),
        None => format!("{:>12}", "-"),
    };
    for l in &v.per_level {
        writeln!(w, "{:>5} {:>7} {} {}", l.level, l.usable, cell(l.excess), cell(l.fresh))?;
    }
    Ok(())
}

fn run_check_zero(args: CheckZeroArgs) -> Result<u8> {
    let acc = formats::read_hist_file(&args.hist)?;
    let h = build(&acc, args.min_count)?;
    let verdict = check_zero(&h);
    let stdout = io::stdout();
    print_zero_table(&mut stdout.lock(), &verdict)?;
    Ok(match verdict.verdict {
        Consistency::CertainlyInconsistent => 0,
        Consistency::ConsistentWithZero => EXIT_ZERO,
    })
}

fn print_fit_diagnostics(w: &mut dyn Write, diag: &FitDiagnostics) -> io::Result<()> {
    writeln!(
        w,
        "fit: {} at T = {} with {} piece(s), lambda = {:.6e}, objective = {:.6e}",
        if diag.accepted { "accepted" } else { "NOT accepted" },
        diag.accepted_threshold,
        diag.pieces,
        diag.constraint_lambda,
        diag.objective,
    )?;
    writeln!(w, "{:>5} {:>7} {:>14}", "level", "usable", "chi2/n")?;
    for l in &diag.per_level {
        writeln!(w, "{:>5} {:>7} {:>14.6}", l.level, l.usable, l.chi2_over_n)?;
    }
    Ok(())
}

fn run_fit(args: FitArgs) -> Result<u8> {
    let acc = formats::read_hist_file(&args.hist)
        .with_context(|| format!("reading {}", args.hist.display()))?;
    let h = build(&acc, args.min_count)?;

    let verdict = check_zero(&h);
    if verdict.verdict == Consistency::ConsistentWithZero && !args.allow_zero {
        let stderr = io::stderr();
        let mut err = stderr.lock();
        writeln!(err, "fit: data is consistent with zero; collect more samples or pass --allow-zero")?;
        print_zero_table(&mut err, &verdict)?;
        return Ok(EXIT_ZERO);
    }

    let cfg = FitConfig {
        order: args.order,
        t_min: args.t_min,
        t_max: args.t_max,
        min_count: args.min_count,
        jump_constraint: !args.no_jump_constraint,
        ..FitConfig::default()
    };
    let (model, diag) = adaptive_fit(&h, &cfg, &[])?;
    print_fit_diagnostics(&mut io::stderr().lock(), &diag)?;
    write_out(args.out.as_deref(), |w| formats::write_spline(w, &model, &diag))?;
    Ok(if diag.accepted { 0 } else { EXIT_UNACCEPTED })
}

fn resolve_threads(flag: Option<usize>) -> Option<usize> {
    flag.filter(|&t| t > 0)
        .or_else(|| std::env::var("BHM_THREADS").ok().and_then(|s| s.parse().ok()))
}

fn evolution_band(args: &EvalArgs, ys: &[f64]) -> Result<ErrorBand> {
    let delta = args.delta.ok_or_else(|| anyhow!("--errors evolution needs --delta"))?;
    if args.snapshots.is_empty() {
        bail!("--errors evolution needs --snapshots, oldest first");
    }
    let mut trace = EvolutionTrace::new(delta, args.k0, ys.to_vec())?;
    for path in &args.snapshots {
        let (snap, _) = formats::read_spline_file(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut values = Vec::with_capacity(ys.len());
        for &y in ys {
            values.push(eval(&snap, y)?);
        }
        trace.push_snapshot(values)?;
    }
    Ok(evolution_error(&trace)?)
}

fn compute_band(
    args: &EvalArgs,
    model: &SplineModel,
    points: &[EvalPoint],
) -> Result<ErrorBand> {
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    match args.method {
        MethodArg::Cov => Ok(covariance_band(model, &ys)?),
        MethodArg::Bootstrap => {
            if args.parts.is_empty() {
                bail!("--errors bootstrap needs --parts with the partial histograms");
            }
            let mut parts = Vec::with_capacity(args.parts.len());
            for path in &args.parts {
                parts.push(
                    formats::read_hist_file(path)
                        .with_context(|| format!("reading {}", path.display()))?,
                );
            }
            let cfg = FitConfig {
                order: model.order,
                min_count: args.min_count,
                ..FitConfig::default()
            };
            bootstrap_band(
                &parts,
                &model.breakpoints,
                &cfg,
                &[],
                args.m_tilde,
                &ys,
                args.seed,
                resolve_threads(args.threads),
            )
        }
        MethodArg::Evolution => evolution_band(args, &ys),
    }
}

/// `eval` and `compare` share everything but the value column: f̃(x) for
/// eval, Z·f̃(x) − f_true(x) when a truth distribution is named. Sampled
/// data only determines f up to its absolute normalization, so compare
/// rescales the reconstruction by the truth's known ∫|f| before differencing.
fn run_eval(args: EvalArgs, truth: Option<String>) -> Result<u8> {
    let spline_path = match (&args.spline, args.snapshots.last()) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p.clone(),
        (None, None) => bail!("--spline or --snapshots required"),
    };
    let (model, _) = formats::read_spline_file(&spline_path)
        .with_context(|| format!("reading {}", spline_path.display()))?;
    let transform = make_transform(args.transform.into(), args.weight_power)?;
    let x_range = match (args.x_lo, args.x_hi) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        _ => None,
    };
    let points = eval_points(&model, transform.as_ref(), x_range, args.grid)?;
    let band = compute_band(&args, &model, &points)?;
    let sigma = restore_sigma(&points, &band)?;

    let truth_f = match &truth {
        Some(name) => Some(builtin(name)?),
        None => None,
    };
    let norm = truth_f.as_ref().map_or(1.0, |d| d.abs_norm());
    let header = if truth.is_some() { "# x\tdiff\tsigma\tmethod" } else { "# x\tvalue\tsigma\tmethod" };
    let method = band.method;
    write_out(args.out.as_deref(), |w| {
        writeln!(w, "{header}")?;
        for (pt, s) in points.iter().zip(&sigma) {
            let mut value = norm * eval(&model, pt.y).map_err(io::Error::other)? / pt.weight;
            if let Some(d) = &truth_f {
                value -= d.f(pt.x);
            }
            writeln!(w, "{}\t{}\t{}\t{method}", fmt_real(pt.x), fmt_real(value), fmt_real(norm * s))?;
        }
        Ok(())
    })?;
    Ok(0)
}
