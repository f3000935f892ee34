use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use svlmm::bench::{run_matrix, write_report, BenchConfig, Method, ReportPaths};
use svlmm::model::{ModelParams, Param};

#[derive(Parser)]
#[command(name = "svlmm", version, about = "Swaption pricing and calibration under a shifted stochastic-volatility LIBOR market model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct MarketArgs {
    /// Discount curve CSV (`maturity_years,discount`).
    #[arg(long)]
    curve: PathBuf,
    /// Swaption quotes CSV.
    #[arg(long)]
    quotes: PathBuf,
    /// Factor loadings CSV, one row per forward rate.
    #[arg(long)]
    betas: PathBuf,
    /// JSON config; keys mirror the benchmark config fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate from random starts with each selected method and write reports.
    Calibrate {
        #[command(flatten)]
        market: MarketArgs,
        /// Method to run; repeat for several. Defaults to the config list.
        #[arg(long = "method")]
        methods: Vec<Method>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory for report.json, summary.csv, runs.csv, boxplot.csv.
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
    /// Print model prices of every quote at the given parameters.
    Price {
        #[command(flatten)]
        market: MarketArgs,
        /// Parameters as a JSON object or a path to one.
        #[arg(long)]
        theta: String,
    },
    /// Compare analytic price gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        market: MarketArgs,
        #[arg(long)]
        theta: String,
        /// Relative bump size.
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        /// Tolerance on the relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

fn load_config(market: &MarketArgs) -> Result<BenchConfig> {
    let mut cfg = match &market.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            BenchConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => BenchConfig::default(),
    };
    cfg.curve = Some(market.curve.clone());
    cfg.quotes = Some(market.quotes.clone());
    cfg.betas = Some(market.betas.clone());
    Ok(cfg)
}

fn load_theta(arg: &str) -> Result<ModelParams> {
    let text = if Path::new(arg).is_file() {
        fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?
    } else {
        arg.to_string()
    };
    let theta: ModelParams = serde_json::from_str(&text).context("parsing parameters")?;
    theta.validate()?;
    Ok(theta)
}

fn calibrate(
    market: MarketArgs,
    methods: Vec<Method>,
    starts: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: PathBuf,
) -> Result<()> {
    let mut cfg = load_config(&market)?;
    if !methods.is_empty() {
        cfg.methods = methods;
    }
    cfg.n_starts = starts.unwrap_or(cfg.n_starts);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.threads = threads.or(cfg.threads);
    let report = run_matrix(&cfg)?;
    write_report(&report, &ReportPaths::in_dir(&out))?;
    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}",
        "method", "median F", "max F", "obj calls", "grad calls", "cpu s", "feller%"
    );
    for s in &report.summaries {
        let q = s.f_quantiles.unwrap_or([f64::NAN; 5]);
        println!(
            "{:<12} {:>10.3e} {:>10.3e} {:>10.1} {:>10.1} {:>10.3} {:>8.1}",
            s.method.as_str(),
            q[2],
            q[4],
            s.mean_obj_calls,
            s.mean_grad_calls,
            s.mean_cpu_time_s,
            s.feller_violation_pct
        );
    }
    println!("reports written to {}", out.display());
    Ok(())
}

fn price(market: MarketArgs, theta: &str) -> Result<()> {
    let cfg = load_config(&market)?;
    let theta = load_theta(theta)?;
    let problem = cfg.load_problem()?;
    let prices = problem.model_prices(&theta)?;
    println!("maturity,tenor,strike,market_price,model_price");
    let grid = problem.groups();
    for (q, p) in problem.quotes().iter().zip(prices) {
        let geom = &grid.iter().find(|g| g.geom.m == q.m && g.geom.n == q.n).expect("quote group").geom;
        println!(
            "{},{},{},{},{}",
            geom.maturity(),
            geom.dates[geom.dates.len() - 1] - geom.maturity(),
            q.strike,
            q.price,
            p
        );
    }
    Ok(())
}

fn gradcheck(market: MarketArgs, theta: &str, step: f64, tol: f64) -> Result<bool> {
    let cfg = load_config(&market)?;
    let theta = load_theta(theta)?;
    let problem = cfg.load_problem()?;
    let analytic = problem.prices_and_gradients(&theta)?;
    let mut worst = [0.0f64; 8];
    for p in Param::ALL {
        let x = theta.get(p);
        let h = step * x.abs().max(1.0);
        let up = problem.model_prices(&theta.with(p, x + h))?;
        let down = problem.model_prices(&theta.with(p, x - h))?;
        for (i, a) in analytic.iter().enumerate() {
            let fd = (up[i] - down[i]) / (2.0 * h);
            let g = a.grad[p.index()];
            let err = (g - fd).abs();
            let rel = if err < 1e-10 { 0.0 } else { err / g.abs().max(fd.abs()) };
            worst[p.index()] = worst[p.index()].max(rel);
        }
    }
    let mut ok = true;
    for p in Param::ALL {
        let e = worst[p.index()];
        let pass = e < tol;
        ok &= pass;
        println!("{:<8} max rel error {:.3e} {}", p.name(), e, if pass { "ok" } else { "FAIL" });
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate {
            market,
            methods,
            starts,
            seed,
            threads,
            out,
        } => calibrate(market, methods, starts, seed, threads, out).map(|_| true),
        Command::Price { market, theta } => price(market, &theta).map(|_| true),
        Command::Gradcheck {
            market,
            theta,
            step,
            tol,
        } => gradcheck(market, &theta, step, tol),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
