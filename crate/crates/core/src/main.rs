use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use log::{info, warn};
use serde::de::DeserializeOwned;

use bayes_ext::report::{self, RunManifest, VERSION};
use bayes_ext::risk::{self, CircleTrialConfig, SpikedTrialConfig};
use bayes_ext::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "bayes-ext", version = VERSION, about = "Kullback-Leibler risk experiments for Bayes extended estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Paired risk of the MLE plugin, extended plugin and Bayesian predictive on the Fisher circle.
    CircleRisk(CircleArgs),
    /// Paired risk of the three predictives in the spiked covariance model over a λ grid.
    SpikedRisk(SpikedArgs),
    /// Compare the asymptotic expansion of the posterior mean of η with exact circle values.
    VerifyExpansion(ExpansionArgs),
    /// Time mixture and extended-plugin evaluation.
    BenchmarkEval(BenchArgs),
}

#[derive(Args, Debug)]
struct CircleArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// True angle ω.
    #[arg(long, allow_negative_numbers = true)]
    omega: Option<f64>,
    /// JSON file with any of the above fields; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "circle_risk.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SpikedArgs {
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated spike strengths.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    y_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "spiked_risk.csv")]
    out: PathBuf,
    /// Also write a risk-versus-λ line chart.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExpansionArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [50usize, 100, 200, 400])]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long, default_value = "verify_expansion.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 80)]
    l: usize,
    #[arg(long, default_value_t = 2000)]
    draws: usize,
    #[arg(long, default_value_t = 1000)]
    points: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "benchmark_eval.csv")]
    out: PathBuf,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Argument(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Argument(format!("{}: {e}", p.display())))
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

struct Outcome {
    config: serde_json::Value,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
    warnings: Vec<String>,
}

fn circle_risk(args: &CircleArgs) -> Result<Outcome> {
    let mut cfg: CircleTrialConfig = load_config(args.config.as_deref())?;
    set(&mut cfg.n, args.n);
    set(&mut cfg.sigma2, args.sigma2);
    set(&mut cfg.trials, args.trials);
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.omega_true, args.omega);
    cfg.validate()?;
    info!("circle risk: n = {}, σ² = {}, {} trials", cfg.n, cfg.sigma2, cfg.trials);
    let est = risk::run_circle_risk(&cfg)?;
    report::circle_table(&est, |p| cfg.leading_constant(p)).write(&args.out)?;
    for r in &est.risks {
        println!("{:<20} risk {:.6e} ± {:.1e}", r.predictive, r.mean, r.stderr);
    }
    let mut warnings = est.warnings.clone();
    if est.resampled > 0 {
        warnings.push(format!("{} degenerate datasets (x̄ = 0) redrawn", est.resampled));
    }
    Ok(Outcome {
        config: serde_json::to_value(risk::TrialConfig::Circle(cfg.clone()))?,
        seed: Some(cfg.seed),
        outputs: vec![args.out.clone()],
        warnings,
    })
}

fn spiked_risk(args: &SpikedArgs) -> Result<Outcome> {
    let mut cfg: SpikedTrialConfig = load_config(args.config.as_deref())?;
    set(&mut cfg.l, args.l);
    set(&mut cfg.n, args.n);
    set(&mut cfg.lambda_grid, args.lambda_grid.clone());
    set(&mut cfg.trials, args.trials);
    if args.draws.is_some() {
        cfg.draws = args.draws;
    }
    if args.burn_in.is_some() {
        cfg.burn_in = args.burn_in;
    }
    set(&mut cfg.y_samples, args.y_samples);
    set(&mut cfg.seed, args.seed);
    cfg.validate()?;
    info!("spiked risk: l = {}, n = {}, {} trials per λ", cfg.l, cfg.n, cfg.trials);
    let results = risk::run_spiked_risk(&cfg)?;
    report::spiked_table(&results).write(&args.out)?;
    let mut outputs = vec![args.out.clone()];
    if let Some(svg) = &args.svg {
        let title = format!("KL risk, l = {}, n = {}", cfg.l, cfg.n);
        std::fs::write(svg, report::spiked_chart(&results, &title))?;
        outputs.push(svg.clone());
    }
    for (lambda, est) in &results {
        let line: Vec<String> = est
            .risks
            .iter()
            .map(|r| format!("{} {:.4e}", r.predictive, r.mean))
            .collect();
        println!("λ = {lambda}: {}", line.join(", "));
    }
    let warnings = results.iter().flat_map(|(_, e)| e.warnings.iter().cloned()).collect();
    Ok(Outcome {
        config: serde_json::to_value(risk::TrialConfig::Spiked(cfg.clone()))?,
        seed: Some(cfg.seed),
        outputs,
        warnings,
    })
}

fn verify_expansion(args: &ExpansionArgs) -> Result<Outcome> {
    let rows = risk::verify_expansions(&args.n_list, args.r)?;
    report::expansion_table(&rows).write(&args.out)?;
    for r in &rows {
        println!(
            "n = {:<5} n·gap = {:.3e}  orthogonality residual = {:.1e}",
            r.n, r.expansion_gap_times_n, r.orthogonality_residual
        );
    }
    Ok(Outcome {
        config: serde_json::json!({ "n_list": args.n_list, "r": args.r }),
        seed: None,
        outputs: vec![args.out.clone()],
        warnings: vec![],
    })
}

fn benchmark_eval(args: &BenchArgs) -> Result<Outcome> {
    let rep = risk::benchmark_eval(args.l, args.draws, args.points, args.seed)?;
    report::timing_table(&rep).write(&args.out)?;
    println!(
        "mixture {:.3e} s, extended plugin {:.3e} s: time ratio {:.1}, size ratio {:.1}",
        rep.mixture_seconds,
        rep.extended_seconds,
        rep.time_ratio(),
        rep.size_ratio()
    );
    Ok(Outcome {
        config: serde_json::json!({ "l": args.l, "draws": args.draws, "points": args.points }),
        seed: Some(args.seed),
        outputs: vec![args.out.clone()],
        warnings: vec![],
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap uses exit code 2 for usage errors, 0 for --help/--version
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let start = Instant::now();
    let (name, out, result) = match &cli.command {
        Command::CircleRisk(a) => ("circle-risk", &a.out, circle_risk(a)),
        Command::SpikedRisk(a) => ("spiked-risk", &a.out, spiked_risk(a)),
        Command::VerifyExpansion(a) => ("verify-expansion", &a.out, verify_expansion(a)),
        Command::BenchmarkEval(a) => ("benchmark-eval", &a.out, benchmark_eval(a)),
    };
    match result {
        Ok(outcome) => {
            for w in &outcome.warnings {
                warn!("{w}");
            }
            let manifest = RunManifest {
                subcommand: name.into(),
                config: outcome.config,
                seed: outcome.seed,
                version: VERSION.into(),
                wall_seconds: start.elapsed().as_secs_f64(),
                outputs: outcome.outputs,
                warnings: outcome.warnings,
            };
            let path = RunManifest::path_for(out);
            if let Err(e) = manifest.write(&path) {
                eprintln!("error: could not write {}: {e}", path.display());
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(Error::Argument(msg)) => {
            eprintln!("error: {msg}\n");
            let mut cmd = Cli::command();
            cmd.build();
            let sub = cmd.find_subcommand_mut(name).expect("subcommand exists");
            eprintln!("{}", sub.render_usage());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
