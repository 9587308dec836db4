//! Command line driver: every operation of the library as a subcommand,
//! reading ensemble description files and emitting CSV.
//!
//! Exit codes: 0 success, 1 failed verdict (`check`), 2 computation guard
//! refusal or an all-skipped experiment, 64 usage problems (bad flags,
//! missing or malformed description file).

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use combsum::ensemble::{bernstein_report, MatrixEnsemble};
use combsum::specfile::{self, CheckerboardSpec, EnsembleKind, EnsembleSpec, FourCycleSpec, RademacherSpec};
use combsum::{exact, mc, stats, tilt, Error};

use output::{fmt, fnv1a, text_field, Csv};

#[derive(Parser)]
#[command(name = "combsum", version, about = "Moments, exact laws, saddlepoint tilting, and Monte Carlo tails for sums over random permutations")]
struct Cli {
    /// Worker threads for parallel sampling (default: all cores).
    #[arg(long, global = true, env = "COMBSUM_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArg {
    /// Ensemble description file (TOML).
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Args)]
struct OutArg {
    /// Write CSV here (atomically); default is standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Axis {
    /// Evaluate at z = t.
    Real,
    /// Evaluate at z = i t.
    Imag,
}

#[derive(Subcommand)]
enum Command {
    /// Print the ensemble's moment functionals as one CSV row.
    Moments {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Verify the factorial moment-growth bound; prints PASS or FAIL.
    Check {
        #[command(flatten)]
        spec: SpecArg,
        /// Constant to verify in the bound.
        #[arg(long = "D")]
        d: f64,
        /// Largest moment order checked.
        #[arg(long = "K", default_value_t = 20)]
        k: u32,
    },
    /// Enumerate the exact law of the normalized sum as (value, prob) rows.
    Exact {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Evaluate the moment generating function on a grid of points.
    Mgf {
        #[command(flatten)]
        spec: SpecArg,
        /// Grid start.
        #[arg(long, allow_hyphen_values = true)]
        lo: f64,
        /// Grid end.
        #[arg(long, allow_hyphen_values = true)]
        hi: f64,
        /// Number of grid points.
        #[arg(long, default_value_t = 9)]
        steps: usize,
        /// Which axis the grid runs along.
        #[arg(long, value_enum, default_value_t = Axis::Real)]
        axis: Axis,
        #[command(flatten)]
        out: OutArg,
    },
    /// Solve the tilt equation on a grid of targets.
    Saddlepoint {
        #[command(flatten)]
        spec: SpecArg,
        /// Smallest target.
        #[arg(long)]
        u_lo: f64,
        /// Largest target.
        #[arg(long)]
        u_hi: f64,
        /// Number of grid points.
        #[arg(long, default_value_t = 9)]
        steps: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Estimate a tail probability by direct simulation.
    Simulate {
        #[command(flatten)]
        spec: SpecArg,
        /// Tail target on the normalized scale.
        #[arg(long, allow_hyphen_values = true)]
        u: f64,
        /// Sample count (at least 10000).
        #[arg(long, default_value_t = 1_000_000)]
        n_samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Estimate a tail probability by tilted importance sampling.
    Is {
        #[command(flatten)]
        spec: SpecArg,
        /// Tail target on the normalized scale.
        #[arg(long)]
        u: f64,
        /// Kept Markov chain samples.
        #[arg(long, default_value_t = 65_536)]
        n_samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the automatically solved tilt parameter.
        #[arg(long)]
        tilt: Option<f64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Tail-to-normal ratios across a family of sizes.
    Ratio {
        #[command(flatten)]
        spec: SpecArg,
        /// Sizes to instantiate, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        /// Fixed tail target for every size.
        #[arg(long, conflicts_with = "zone_frac")]
        u: Option<f64>,
        /// Target as a fraction of each size's admissible zone edge.
        #[arg(long)]
        zone_frac: Option<f64>,
        /// Samples per size.
        #[arg(long, default_value_t = 1_000_000)]
        n_samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Estimate even where the target leaves the admissible zone.
        #[arg(long)]
        no_zone_guard: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Kolmogorov distance to the normal across a family of sizes.
    Esseen {
        #[command(flatten)]
        spec: SpecArg,
        /// Sizes to instantiate, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        /// Samples per size.
        #[arg(long, default_value_t = 1_000_000)]
        n_samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
}

/// What went wrong, mapped to the exit-code contract.
enum Failure {
    /// Bad invocation or an unreadable/invalid description file: exit 64.
    Usage(String),
    /// A library guard refused the computation: exit 2.
    Guard(Error),
    /// Output could not be written: exit 2.
    Io(std::io::Error),
}

impl Failure {
    fn report(self) -> ExitCode {
        match self {
            Failure::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(64)
            }
            Failure::Guard(err) => {
                let msg = err.to_string().replace('"', "'");
                eprintln!("error kind={} msg=\"{msg}\"", guard_tag(&err));
                ExitCode::from(2)
            }
            Failure::Io(err) => {
                eprintln!("error kind=io msg=\"{err}\"");
                ExitCode::from(2)
            }
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Io(err)
    }
}

fn guard_tag(err: &Error) -> &'static str {
    match err {
        Error::InvalidParameter(_) => "invalid-parameter",
        Error::MomentRange { .. } => "moment-range",
        Error::MgfDomain { .. } => "mgf-domain",
        Error::Centering { .. } => "centering",
        Error::DegenerateEnsemble => "degenerate-ensemble",
        Error::SizeGuard { .. } => "size-guard",
        Error::NotEnumerable(_) => "not-enumerable",
        Error::ZoneExceeded { .. } => "zone-exceeded",
        Error::NumericalDegeneracy(_) => "numerical-degeneracy",
        Error::Spec(_) => "spec",
    }
}

fn guard<T>(result: combsum::Result<T>) -> Result<T, Failure> {
    result.map_err(Failure::Guard)
}

fn load_spec(path: &Path) -> Result<EnsembleSpec, Failure> {
    specfile::from_path(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn load_ensemble(path: &Path) -> Result<MatrixEnsemble, Failure> {
    load_spec(path)?.build().map_err(|e| Failure::Usage(e.to_string()))
}

/// Instantiates the described construction at size `n`. Parametric kinds
/// (checkerboard, rademacher, four_cycle) resize; fixed grids only admit
/// their own size.
fn family_member(spec: &EnsembleSpec, n: usize) -> combsum::Result<MatrixEnsemble> {
    let resized = match &spec.ensemble {
        EnsembleKind::Checkerboard(s) => {
            EnsembleKind::Checkerboard(CheckerboardSpec { n, ..s.clone() })
        }
        EnsembleKind::Rademacher(s) => EnsembleKind::Rademacher(RademacherSpec { n, ..s.clone() }),
        EnsembleKind::FourCycle(s) => EnsembleKind::FourCycle(FourCycleSpec { n, ..s.clone() }),
        _ => {
            let e = spec.build()?;
            if e.n() != n {
                return Err(Error::InvalidParameter(format!(
                    "this ensemble kind has fixed size {}, cannot instantiate n = {n}",
                    e.n()
                )));
            }
            return Ok(e);
        }
    };
    EnsembleSpec { schema: spec.schema, ensemble: resized }.build()
}

fn grid(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>, Failure> {
    if steps == 0 {
        return Err(Failure::Usage("steps must be at least 1".into()));
    }
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Failure::Usage(format!("bad grid [{lo}, {hi}]")));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    let width = (hi - lo) / (steps - 1) as f64;
    Ok((0..steps).map(|k| lo + width * k as f64).collect())
}

fn config_line(seed: u64, description: &str) -> String {
    format!("seed={seed} config=fnv1a:{:016x}", fnv1a(description.as_bytes()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    if let Some(workers) = cli.workers {
        if workers == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(64);
        }
        if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("error kind=workers msg=\"{err}\"");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(failure) => failure.report(),
    }
}

fn run(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Moments { spec, out } => run_moments(&spec.spec, out.out),
        Command::Check { spec, d, k } => run_check(&spec.spec, d, k),
        Command::Exact { spec, out } => run_exact(&spec.spec, out.out),
        Command::Mgf { spec, lo, hi, steps, axis, out } => {
            run_mgf(&spec.spec, lo, hi, steps, axis, out.out)
        }
        Command::Saddlepoint { spec, u_lo, u_hi, steps, out } => {
            run_saddlepoint(&spec.spec, u_lo, u_hi, steps, out.out)
        }
        Command::Simulate { spec, u, n_samples, seed, out } => {
            run_simulate(&spec.spec, u, n_samples, seed, out.out)
        }
        Command::Is { spec, u, n_samples, seed, tilt, out } => {
            run_is(&spec.spec, u, n_samples, seed, tilt, out.out)
        }
        Command::Ratio { spec, n_list, u, zone_frac, n_samples, seed, no_zone_guard, out } => {
            run_ratio(&spec.spec, &n_list, u, zone_frac, n_samples, seed, no_zone_guard, out.out)
        }
        Command::Esseen { spec, n_list, n_samples, seed, out } => {
            run_esseen(&spec.spec, &n_list, n_samples, seed, out.out)
        }
    }
}

fn run_moments(spec: &Path, out: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let e = load_ensemble(spec)?;
    let s = guard(stats::moment_summary(&e))?;
    let mut csv = Csv::new(out);
    csv.row([
        "n",
        "norming",
        "variance",
        "scaled_mean_max",
        "row_energy_max",
        "col_energy_max",
        "third_moment_sum",
        "gamma",
    ]);
    csv.row([
        s.n.to_string(),
        fmt(s.norming),
        fmt(s.variance),
        fmt(s.scaled_mean_max),
        fmt(s.row_energy_max),
        fmt(s.col_energy_max),
        fmt(s.third_moment_sum),
        fmt(s.gamma),
    ]);
    csv.finish()?;
    eprintln!(
        "n={} norming={} variance={} gamma={}",
        s.n,
        fmt(s.norming),
        fmt(s.variance),
        fmt(s.gamma)
    );
    Ok(ExitCode::SUCCESS)
}

fn run_check(spec: &Path, d: f64, k: u32) -> Result<ExitCode, Failure> {
    let e = load_ensemble(spec)?;
    let report = guard(bernstein_report(&e, d, k))?;
    eprintln!(
        "D={d} K={k} scale_bound={} max_ratio={} minimal_D={}",
        fmt(e.scale_bound()),
        fmt(report.max_ratio),
        fmt(report.minimal_d)
    );
    if report.pass {
        println!("bernstein: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        if let Some(w) = &report.worst {
            eprintln!(
                "worst cell ({}, {}): order k={} against s={} gives ratio {}",
                w.row,
                w.col,
                w.k,
                w.s,
                fmt(w.ratio)
            );
        }
        println!("bernstein: FAIL");
        Ok(ExitCode::from(1))
    }
}

fn run_exact(spec: &Path, out: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let e = load_ensemble(spec)?;
    let law = guard(exact::enumerate_law(&e))?;
    let mut csv = Csv::new(out);
    csv.row(["value", "prob"]);
    for &(value, prob) in law.atoms() {
        csv.row([fmt(value), fmt(prob)]);
    }
    csv.finish()?;
    eprintln!(
        "{} atoms, mean={} variance={}",
        law.atoms().len(),
        fmt(law.mean()),
        fmt(law.variance())
    );
    Ok(ExitCode::SUCCESS)
}

fn run_mgf(
    spec: &Path,
    lo: f64,
    hi: f64,
    steps: usize,
    axis: Axis,
    out: Option<PathBuf>,
) -> Result<ExitCode, Failure> {
    let e = load_ensemble(spec)?;
    let points = grid(lo, hi, steps)?;
    let mut csv = Csv::new(out);
    csv.comment(match axis {
        Axis::Real => "axis=real (z = t)",
        Axis::Imag => "axis=imag (z = i t)",
    });
    csv.row(["t", "re_phi", "im_phi"]);
    for &t in &points {
        let z = match axis {
            Axis::Real => Complex64::new(t, 0.0),
            Axis::Imag => Complex64::new(0.0, t),
        };
        let phi = guard(exact::mgf_exact(&e, z))?;
        csv.row([fmt(t), fmt(phi.re), fmt(phi.im)]);
    }
    csv.finish()?;
    eprintln!("{} grid points", points.len());
    Ok(ExitCode::SUCCESS)
}

fn run_saddlepoint(
    spec: &Path,
    u_lo: f64,
    u_hi: f64,
    steps: usize,
    out: Option<PathBuf>,
) -> Result<ExitCode, Failure> {
    let e = load_ensemble(spec)?;
    let targets = grid(u_lo, u_hi, steps)?;
    let mut csv = Csv::new(out);
    csv.row([
        "u",
        "h",
        "log_mgf",
        "m",
        "sigma2",
        "tail_approx",
        "gauss_tail",
        "ratio",
    ]);
    for &u in &targets {
        let sol = guard(tilt::solve_saddlepoint(&e, u))?;
        let state = guard(tilt::tilted_state(&e, sol.h))?;
        csv.row([
            fmt(sol.u),
            fmt(sol.h),
            fmt(sol.log_mgf),
            fmt(state.mean),
            fmt(sol.tilted_variance),
            fmt(sol.tail_approx),
            fmt(sol.gauss_tail),
            fmt(sol.tail_approx / sol.gauss_tail),
        ]);
    }
    csv.finish()?;
    eprintln!("{} targets solved", targets.len());
    Ok(ExitCode::SUCCESS)
}

fn run_simulate(
    spec: &Path,
    u: f64,
    n_samples: u64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<ExitCode, Failure> {
    let e = load_ensemble(spec)?;
    let est = guard(mc::naive_tail(&e, u, n_samples, seed))?;
    let mut csv = Csv::new(out);
    let spec_text = std::fs::read_to_string(spec)?;
    csv.comment(&config_line(
        seed,
        &format!("simulate u={} n_samples={n_samples} seed={seed} spec={spec_text}", fmt(u)),
    ));
    csv.row(["u", "p_hat", "std_err", "n_samples", "method", "below_resolution"]);
    csv.row([
        fmt(u),
        fmt(est.p_hat),
        fmt(est.std_err),
        est.n_samples.to_string(),
        est.method.tag().to_string(),
        est.below_resolution.to_string(),
    ]);
    csv.finish()?;
    eprintln!(
        "p_hat={} std_err={} ({} samples)",
        fmt(est.p_hat),
        fmt(est.std_err),
        est.n_samples
    );
    Ok(ExitCode::SUCCESS)
}

fn run_is(
    spec: &Path,
    u: f64,
    n_samples: u64,
    seed: u64,
    tilt_override: Option<f64>,
    out: Option<PathBuf>,
) -> Result<ExitCode, Failure> {
    let e = load_ensemble(spec)?;
    let mut cfg = guard(mc::TiltedChainConfig::auto(&e, u, n_samples, seed))?;
    if let Some(h) = tilt_override {
        cfg.h = h;
    }
    let est = guard(mc::tilted_is_tail(&e, u, &cfg))?;
    let mut csv = Csv::new(out);
    let spec_text = std::fs::read_to_string(spec)?;
    csv.comment(&config_line(
        seed,
        &format!(
            "is u={} n_samples={n_samples} seed={seed} h={} burn_in={} thin={} n_batches={} batch_size={} spec={spec_text}",
            fmt(u),
            fmt(cfg.h),
            cfg.burn_in,
            cfg.thin,
            cfg.n_batches,
            cfg.batch_size
        ),
    ));
    csv.row([
        "u",
        "p_hat",
        "std_err",
        "n_samples",
        "method",
        "self_normalized",
        "h",
        "burn_in",
        "thin",
        "n_batches",
        "batch_size",
    ]);
    csv.row([
        fmt(u),
        fmt(est.p_hat),
        fmt(est.std_err),
        est.n_samples.to_string(),
        est.method.tag().to_string(),
        est.self_normalized.to_string(),
        fmt(cfg.h),
        cfg.burn_in.to_string(),
        cfg.thin.to_string(),
        cfg.n_batches.to_string(),
        cfg.batch_size.to_string(),
    ]);
    csv.finish()?;
    eprintln!(
        "p_hat={} std_err={} (h={}, {} kept samples{})",
        fmt(est.p_hat),
        fmt(est.std_err),
        fmt(cfg.h),
        est.n_samples,
        if est.self_normalized { ", self-normalized" } else { "" }
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn run_ratio(
    spec: &Path,
    n_list: &[usize],
    u: Option<f64>,
    zone_frac: Option<f64>,
    n_samples: u64,
    seed: u64,
    no_zone_guard: bool,
    out: Option<PathBuf>,
) -> Result<ExitCode, Failure> {
    let parsed = load_spec(spec)?;
    let rule = match (u, zone_frac) {
        (Some(u), None) => mc::URule::Fixed(u),
        (None, Some(f)) => mc::URule::ZoneFraction(f),
        _ => return Err(Failure::Usage("pass exactly one of --u or --zone-frac".into())),
    };
    let rows = mc::ratio_experiment(
        |n| family_member(&parsed, n),
        n_list,
        rule,
        n_samples,
        seed,
        !no_zone_guard,
    );

    let mut csv = Csv::new(out);
    let spec_text = std::fs::read_to_string(spec)?;
    csv.comment(&config_line(
        seed,
        &format!(
            "ratio n_list={n_list:?} rule={rule:?} n_samples={n_samples} seed={seed} zone_guard={} spec={spec_text}",
            !no_zone_guard
        ),
    ));
    csv.row([
        "n",
        "u",
        "gamma",
        "method",
        "p_hat",
        "std_err",
        "n_samples",
        "gauss_tail",
        "ratio",
        "note",
    ]);
    let mut estimated = 0usize;
    for row in &rows {
        match &row.outcome {
            mc::RowOutcome::Estimated { estimate, gauss_tail, ratio } => {
                estimated += 1;
                csv.row([
                    row.n.to_string(),
                    fmt(row.u),
                    fmt(row.gamma),
                    estimate.method.tag().to_string(),
                    fmt(estimate.p_hat),
                    fmt(estimate.std_err),
                    estimate.n_samples.to_string(),
                    fmt(*gauss_tail),
                    fmt(*ratio),
                    String::new(),
                ]);
                eprintln!(
                    "n={}: ratio={} (p_hat={}, method={})",
                    row.n,
                    fmt(*ratio),
                    fmt(estimate.p_hat),
                    estimate.method.tag()
                );
            }
            mc::RowOutcome::Skipped { reason } => {
                csv.row([
                    row.n.to_string(),
                    fmt(row.u),
                    fmt(row.gamma),
                    "skip".to_string(),
                    fmt(f64::NAN),
                    fmt(f64::NAN),
                    "0".to_string(),
                    fmt(f64::NAN),
                    fmt(f64::NAN),
                    text_field(reason),
                ]);
                eprintln!("n={}: skipped: {reason}", row.n);
            }
        }
    }
    csv.finish()?;
    if estimated == 0 {
        // Nothing was estimated; signal "guard skips only" to scripts.
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_esseen(
    spec: &Path,
    n_list: &[usize],
    n_samples: u64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<ExitCode, Failure> {
    let parsed = load_spec(spec)?;
    let report = guard(mc::esseen_decay(|n| family_member(&parsed, n), n_list, n_samples, seed))?;
    let mut csv = Csv::new(out);
    let spec_text = std::fs::read_to_string(spec)?;
    csv.comment(&config_line(
        seed,
        &format!("esseen n_list={n_list:?} n_samples={n_samples} seed={seed} spec={spec_text}"),
    ));
    csv.comment(&format!("fitted_c={}", fmt(report.fitted_c)));
    csv.row(["n", "ks", "gamma_over_root_n"]);
    for row in &report.rows {
        csv.row([row.n.to_string(), fmt(row.ks), fmt(row.gamma_over_root_n)]);
    }
    csv.finish()?;
    eprintln!("fitted_c={}", fmt(report.fitted_c));
    Ok(ExitCode::SUCCESS)
}
