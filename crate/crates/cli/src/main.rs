use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relu_forge::certifier::{certify, SamplerConfig};
use relu_forge::constructors::BuildLimits;
use relu_forge::pipeline::{
    build, builtin_family_with, catalog, parse_spec, reference_eval, run_scaling, BuildOptions, FamilyParams,
    FunctionSpec,
};
use relu_forge::{Error, Network, Norm};

/// Build, evaluate and certify ReLU networks for compositional functions.
#[derive(Parser, Debug)]
#[command(name = "relu-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compile a spec or built-in family into a network and certify it.
    Build(BuildArgs),
    /// Evaluate a network file at one point.
    Eval(EvalArgs),
    /// Certify an existing network file against a spec or family.
    Certify(CertifyArgs),
    /// Build and certify a family over a range of dimensions and accuracies.
    Scale(ScaleArgs),
    /// List the built-in families.
    Catalog,
}

#[derive(Args, Debug)]
struct TargetArgs {
    /// Spec document (JSON).
    #[arg(long, conflicts_with = "family", required_unless_present = "family")]
    spec: Option<PathBuf>,
    /// Built-in family name.
    #[arg(long, requires = "d")]
    family: Option<String>,
    /// Family dimension parameter.
    #[arg(long)]
    d: Option<usize>,
    /// Family scale parameter a.
    #[arg(long)]
    a: Option<f64>,
    /// Family constant c.
    #[arg(long)]
    c: Option<u32>,
}

#[derive(Args, Debug)]
struct SamplingArgs {
    /// Uniform sample points for the sup-error estimate.
    #[arg(long)]
    samples: Option<usize>,
    /// Point pairs for the Lipschitz estimates.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl SamplingArgs {
    fn config(&self, default_samples: usize, default_pairs: usize) -> SamplerConfig {
        SamplerConfig {
            samples: self.samples.unwrap_or(default_samples),
            pairs: self.pairs.unwrap_or(default_pairs),
            seed: self.seed,
            ..SamplerConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Target accuracy in (0, 1].
    #[arg(long, value_parser = parse_eps)]
    eps: f64,
    /// Output network file.
    #[arg(long)]
    out: PathBuf,
    /// Output report file; defaults to the network path with extension
    /// `report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Maximum maximum-convolution grid points per stage.
    #[arg(long)]
    max_grid: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Network file.
    #[arg(long)]
    net: PathBuf,
    /// Comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    point: String,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    /// Network file.
    #[arg(long)]
    net: PathBuf,
    #[command(flatten)]
    target: TargetArgs,
    /// Accuracy the network must meet.
    #[arg(long, value_parser = parse_eps)]
    eps: f64,
    /// Norm for the error, defaulting to the spec's norm.
    #[arg(long)]
    norm: Option<String>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args, Debug)]
struct ScaleArgs {
    /// Built-in family name.
    #[arg(long)]
    family: String,
    /// Dimension range `lo:hi`, inclusive.
    #[arg(long, value_parser = parse_dims)]
    dims: DimRange,
    /// Comma-separated accuracies in (0, 1].
    #[arg(long, value_parser = parse_eps_list)]
    eps: EpsList,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    /// Output JSON file with fitted exponents; defaults to the CSV path with
    /// extension `json`.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Family scale parameter a.
    #[arg(long)]
    a: Option<f64>,
    /// Family constant c.
    #[arg(long)]
    c: Option<u32>,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Maximum maximum-convolution grid points per stage.
    #[arg(long)]
    max_grid: Option<usize>,
}

#[derive(Clone, Debug)]
struct DimRange(Vec<usize>);

#[derive(Clone, Debug)]
struct EpsList(Vec<f64>);

fn parse_eps(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("accuracy must lie in (0, 1], got {v}"))
    }
}

fn parse_eps_list(s: &str) -> Result<EpsList, String> {
    let v = s.split(',').map(parse_eps).collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err("at least one accuracy is required".into());
    }
    Ok(EpsList(v))
}

fn parse_dims(s: &str) -> Result<DimRange, String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad lower bound in `{s}`"))?;
    let hi: usize = hi.trim().parse().map_err(|_| format!("bad upper bound in `{s}`"))?;
    if lo > hi {
        return Err(format!("empty range `{s}`"));
    }
    Ok(DimRange((lo..=hi).collect()))
}

/// Failure of a command, carrying its exit code.
enum Failure {
    Input(String),
    Certification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ResourceLimit(_) => Failure::Certification(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// `%.17g` formatting.
fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..17).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip(mantissa), exp.abs())
    } else {
        strip(&format!("{x:.*}", (16 - exp) as usize))
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn target_spec(t: &TargetArgs) -> Result<FunctionSpec, Failure> {
    if let Some(path) = &t.spec {
        let text =
            String::from_utf8(read(path)?).map_err(|_| Failure::Input(format!("{} is not UTF-8", path.display())))?;
        return parse_spec(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())));
    }
    let family = t.family.as_deref().expect("clap requires --spec or --family");
    let d = t.d.expect("clap requires --d with --family");
    let params = FamilyParams { a: t.a, c: t.c };
    Ok(builtin_family_with(family, d, &params)?)
}

fn limits(max_grid: Option<usize>) -> BuildLimits {
    max_grid.map_or_else(BuildLimits::default, |m| BuildLimits { max_grid_points: m })
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn cmd_build(args: &BuildArgs) -> CmdResult {
    let spec = target_spec(&args.target)?;
    let opts = BuildOptions {
        sampler: args.sampling.config(100_000, 10_000),
        limits: limits(args.max_grid),
        certify: true,
    };
    let result = build(&spec, args.eps, &opts)?;
    write(&args.out, &result.network.to_json())?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| with_extension(&args.out, "report.json"));
    let mut report = serde_json::to_string_pretty(&result).expect("report serializes");
    report.push('\n');
    write(&report_path, report.as_bytes())?;
    let sup = result.report.as_ref().map_or(f64::NAN, |r| r.sup_error_estimate);
    eprintln!(
        "{} parameters, {} stages, sampled sup error {} (target {})",
        result.param_count,
        result.stages.len(),
        fmt_g17(sup),
        fmt_g17(args.eps)
    );
    if result.certified {
        Ok(())
    } else {
        Err(Failure::Certification(format!(
            "certification failed: sampled sup error {} exceeds {}",
            fmt_g17(sup),
            fmt_g17(args.eps)
        )))
    }
}

fn load_net(path: &Path) -> Result<Network, Failure> {
    Network::from_json(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let net = load_net(&args.net)?;
    let point = args
        .point
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Input(format!("`{s}` is not a number")))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let y = net.evaluate(&point)?;
    let out: Vec<String> = y.iter().map(|&v| fmt_g17(v)).collect();
    println!("{}", out.join(","));
    Ok(())
}

fn cmd_certify(args: &CertifyArgs) -> CmdResult {
    let net = load_net(&args.net)?;
    let spec = target_spec(&args.target)?;
    let norm: Norm = match &args.norm {
        Some(s) => s.parse()?,
        None => spec.norm,
    };
    let oracle = |x: &[f64]| reference_eval(&spec, x);
    let report = certify(
        &net,
        &oracle,
        &spec.domain(),
        norm,
        &args.sampling.config(100_000, 10_000),
    )?;
    let mut json = report.to_json();
    json.push('\n');
    match &args.out {
        Some(path) => write(path, json.as_bytes())?,
        None => print!("{json}"),
    }
    if report.sup_error_estimate <= args.eps {
        Ok(())
    } else {
        Err(Failure::Certification(format!(
            "certification failed: sampled sup error {} exceeds {}",
            fmt_g17(report.sup_error_estimate),
            fmt_g17(args.eps)
        )))
    }
}

fn cmd_scale(args: &ScaleArgs) -> CmdResult {
    let opts = BuildOptions {
        sampler: args.sampling.config(2000, 0),
        limits: limits(args.max_grid),
        certify: true,
    };
    let params = FamilyParams { a: args.a, c: args.c };
    let report = run_scaling(&args.family, &args.dims.0, &args.eps.0, &params, &opts)?;
    write(&args.out, report.to_csv().as_bytes())?;
    let json_path = args.json.clone().unwrap_or_else(|| with_extension(&args.out, "json"));
    let mut json = report.to_json();
    json.push('\n');
    write(&json_path, json.as_bytes())?;
    let failed: Vec<String> = report
        .rows
        .iter()
        .filter(|r| !r.certified)
        .map(|r| {
            let why = r.error.clone().unwrap_or_else(|| "sup error above target".into());
            format!("d={} eps={}: {why}", r.d, fmt_g17(r.eps))
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Certification(format!(
            "{} of {} cells not certified:\n  {}",
            failed.len(),
            report.rows.len(),
            failed.join("\n  ")
        )))
    }
}

fn cmd_catalog() -> CmdResult {
    for f in catalog() {
        let mode = match f.mode {
            relu_forge::pipeline::Mode::Theorem1 => "theorem1",
            relu_forge::pipeline::Mode::Theorem2 => "theorem2",
        };
        println!("{}\texample {}\t{}\t{}", f.name, f.example, mode, f.summary);
    }
    Ok(())
}

fn configure_threads() -> CmdResult {
    let Ok(value) = std::env::var("RELU_FORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Input(format!("RELU_FORGE_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Input(format!("cannot configure threads: {e}")))
}

fn run(cli: &Cli) -> CmdResult {
    configure_threads()?;
    match &cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Scale(a) => cmd_scale(a),
        Command::Catalog => cmd_catalog(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Certification(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
