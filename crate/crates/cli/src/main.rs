use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use metabias::dataset::{bundled, parse_csv, EffectPolicy, MetaDataset};
use metabias::funnel::{render_funnel, FunnelMode, FunnelSpec};
use metabias::numkit::{norm_cdf, t_two_sided_p};
use metabias::registry::{ci_bundle, fit_full_mle, RegistryConfig};
use metabias::remeta::{
    ci_knapp_hartung, ci_normal, egger_test, fit_random_effects, macaskill_test, z_for, ReMethod,
};
use metabias::report::{summary_json, summary_tsv, ReportRow, ReportTable, Scale};
use metabias::sensitivity::{run_grid, GridConfig};
use metabias::simlab::{parse_scenario_config, run_scenario, ScenarioConfig, Selection};
use metabias::Error;

const EXIT_INPUT: u8 = 2;
const EXIT_CONVERGENCE: u8 = 3;
const THREADS_VAR: &str = "META_BIAS_THREADS";

/// Publication-bias analysis with Copas selection models and trial-registry
/// sample sizes.
#[derive(Parser)]
#[command(name = "metabias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyse a dataset and print a result table.
    Fit(FitArgs),
    /// Run a simulation scenario and print per-method summaries.
    Simulate(SimulateArgs),
    /// Draw a funnel plot as SVG.
    Funnel(FunnelArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Study CSV file.
    #[arg(long, conflicts_with = "bundled", required_unless_present = "bundled")]
    data: Option<PathBuf>,
    /// Use a bundled dataset instead of a file (tiotropium, clopidogrel).
    #[arg(long)]
    bundled: Option<String>,
    /// Trust the yi/sei columns over 2x2 counts when both are present.
    #[arg(long)]
    prefer_explicit: bool,
}

impl DataArgs {
    fn load(&self) -> Result<MetaDataset, Error> {
        let policy = if self.prefer_explicit {
            EffectPolicy::PreferExplicit
        } else {
            EffectPolicy::PreferCounts
        };
        match (&self.data, &self.bundled) {
            (Some(path), _) => {
                let file = fs::File::open(path).map_err(|e| {
                    io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display()))
                })?;
                parse_csv(file, policy)
            }
            (None, Some(name)) => bundled(name, policy)
                .ok_or_else(|| Error::Domain(format!("no bundled dataset named {name:?}"))),
            (None, None) => Err(Error::Domain("no dataset given".into())),
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum FitMethod {
    Reml,
    Knha,
    Copas,
    Mle,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Or,
    Log,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "all")]
    method: FitMethod,
    /// Confidence level of every interval.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value = "tsv")]
    format: Format,
    #[arg(long, value_enum, default_value = "or")]
    scale: ScaleArg,
    /// Write the table here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// key = value scenario file; flags given alongside override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    /// Publication probability at n = 20.
    #[arg(long, requires = "p500", conflicts_with_all = ["alpha0", "alpha1"])]
    p20: Option<f64>,
    /// Publication probability at n = 500.
    #[arg(long, requires = "p20")]
    p500: Option<f64>,
    #[arg(long, allow_negative_numbers = true, requires = "alpha1")]
    alpha0: Option<f64>,
    #[arg(long, allow_negative_numbers = true, requires = "alpha0")]
    alpha1: Option<f64>,
    /// Studies per meta-analysis, published and unpublished.
    #[arg(long)]
    total: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    level: Option<f64>,
    /// Skip the Copas comparator, the slowest method.
    #[arg(long)]
    no_copas: bool,
    #[arg(long, value_enum, default_value = "tsv")]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Modified,
}

#[derive(Args)]
struct FunnelArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "standard")]
    mode: ModeArg,
    /// SVG output path.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 480)]
    height: u32,
}

/// A failure with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonConvergence { .. } | Error::NotConverged(_) => EXIT_CONVERGENCE,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Funnel(args) => cmd_funnel(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn z_p(estimate: f64, se: f64) -> Option<f64> {
    norm_cdf(-(estimate / se).abs()).ok().map(|p| 2.0 * p)
}

fn t_p(estimate: f64, se: f64, df: usize) -> Option<f64> {
    t_two_sided_p(estimate / se, df as f64).ok()
}

fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    let ds = args.data.load()?;
    let violations = ds.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations).into());
    }
    let level = args.level;
    z_for(level)?;
    let scale = match args.scale {
        ScaleArg::Or => Scale::Or,
        ScaleArg::Log => Scale::Log,
    };
    let wants = |m: FitMethod| args.method == m || args.method == FitMethod::All;
    let mut table = ReportTable::new(scale);
    // Convergence problems are collected so that the rest of the table is
    // still written before exiting with the convergence status.
    let mut convergence: Vec<String> = Vec::new();
    let published = format!("published only (N = {})", ds.n_published());

    let re = fit_random_effects(&ds, ReMethod::Reml)?;
    if wants(FitMethod::Reml) {
        let p = z_p(re.theta_hat, re.se_theta);
        table.push(ReportRow::estimate(
            scale,
            &published,
            "REML",
            re.theta_hat,
            Some(ci_normal(&re, level)?),
            p,
        ))?;
    }
    let knha = ci_knapp_hartung(&ds, &re, level)?;
    if wants(FitMethod::Knha) {
        let p = t_p(re.theta_hat, knha.se_hk, re.k - 1);
        table.push(ReportRow::estimate(
            scale,
            &published,
            "REML.KnHa",
            re.theta_hat,
            Some((knha.lower, knha.upper)),
            p,
        ))?;
    }
    if wants(FitMethod::Reml) {
        table.push(ReportRow::test(
            "funnel asymmetry",
            "Egger",
            egger_test(&ds)?.p_value,
        ))?;
        match macaskill_test(&ds) {
            Ok(t) => table.push(ReportRow::test("funnel asymmetry", "Macaskill", t.p_value))?,
            Err(e) => eprintln!("note: Macaskill test skipped: {e}"),
        }
    }

    if wants(FitMethod::Copas) {
        match run_grid(&ds, &GridConfig::default()) {
            Ok(curve) => {
                let z = z_for(level)?;
                for point in curve.points.iter().filter(|p| p.converged) {
                    let p = point.se_theta.and_then(|se| z_p(point.theta_hat, se));
                    let row = ReportRow::estimate(
                        scale,
                        "sensitivity grid",
                        "Copas",
                        point.theta_hat,
                        point.ci(z),
                        p,
                    );
                    table.push(row.with_expected_m(point.expected_m))?;
                }
                if let Some(point) = curve.selected_point() {
                    let description = if curve.fallback {
                        "largest M (no point passed the fit screen)"
                    } else {
                        "selected by goodness of fit"
                    };
                    let p = point.se_theta.and_then(|se| z_p(point.theta_hat, se));
                    let row = ReportRow::estimate(
                        scale,
                        description,
                        "Copas",
                        point.theta_hat,
                        point.ci(z),
                        p,
                    );
                    table.push(row.with_expected_m(point.expected_m))?;
                }
            }
            Err(e @ (Error::NonConvergence { .. } | Error::NotConverged(_))) => {
                convergence.push(format!("Copas: {e}"))
            }
            Err(e) => return Err(e.into()),
        }
    }

    if wants(FitMethod::Mle) {
        let fit = fit_full_mle(&ds, &RegistryConfig::default())?;
        if fit.converged {
            let bundle = ci_bundle(&fit, knha.se_hk, level)?;
            let se = fit.se_theta.unwrap_or(f64::NAN);
            let description = format!(
                "with registry (N = {}, M = {})",
                fit.n_published, fit.n_unpublished
            );
            let m = fit.n_unpublished as f64;
            let rows = [
                ("MLE(N)", bundle.normal, z_p(fit.theta, se)),
                ("MLE(T)", bundle.t, t_p(fit.theta, se, bundle.df_used)),
                (
                    "MLE(SE#)",
                    bundle.se_sharp,
                    t_p(fit.theta, bundle.se_used_sharp, bundle.df_used),
                ),
            ];
            for (method, ci, p) in rows {
                table.push(
                    ReportRow::estimate(scale, &description, method, fit.theta, Some(ci), p)
                        .with_expected_m(m),
                )?;
            }
        } else {
            convergence.push(format!("registry MLE: {}", fit.diagnostics.join("; ")));
        }
    }

    let text = match args.format {
        Format::Tsv => table.to_tsv(),
        Format::Json => table.to_json()? + "\n",
    };
    emit(args.output.as_deref(), &text)?;
    if convergence.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_CONVERGENCE,
            message: convergence.join("\n"),
        })
    }
}

fn scenario_from(args: &SimulateArgs) -> Result<ScenarioConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => parse_scenario_config(&fs::read_to_string(path)?)?,
        None => ScenarioConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = args.$flag {
                config.$field = v;
            }
        )*};
    }
    set!(theta => theta, tau => tau, rho => rho, total => total_studies, reps => replications, seed => seed, level => ci_level);
    if let (Some(p20), Some(p500)) = (args.p20, args.p500) {
        config.selection = Selection::Anchors { p20, p500 };
    }
    if let (Some(alpha0), Some(alpha1)) = (args.alpha0, args.alpha1) {
        config.selection = Selection::Alphas { alpha0, alpha1 };
    }
    if args.no_copas {
        config.copas = false;
    }
    config.validate()?;
    Ok(config)
}

fn thread_pool() -> Result<Option<rayon::ThreadPool>, Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(None);
    };
    let threads: usize = match raw.trim().parse() {
        Ok(n) if n >= 1 => n,
        _ => {
            return Err(Error::Domain(format!(
                "{THREADS_VAR} must be a positive integer, got {raw:?}"
            ))
            .into())
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure {
            code: EXIT_INPUT,
            message: e.to_string(),
        })?;
    Ok(Some(pool))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let config = scenario_from(args)?;
    let summary = match thread_pool()? {
        Some(pool) => pool.install(|| run_scenario(&config))?,
        None => run_scenario(&config)?,
    };
    let text = match args.format {
        Format::Tsv => summary_tsv(&summary),
        Format::Json => summary_json(&config, &summary)?,
    };
    emit(args.output.as_deref(), &text)
}

fn cmd_funnel(args: &FunnelArgs) -> Result<(), Failure> {
    let ds = args.data.load()?;
    let mode = match args.mode {
        ModeArg::Standard => FunnelMode::Standard,
        ModeArg::Modified => FunnelMode::Modified,
    };
    let svg = render_funnel(
        &ds,
        &FunnelSpec {
            mode,
            width: args.width,
            height: args.height,
        },
    )?;
    fs::write(&args.output, svg)?;
    Ok(())
}
