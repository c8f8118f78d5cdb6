//! Command line front end: dataset generation, initial-guess training,
//! single discovery runs, mixing-factor tuning, noise-sweep experiments and
//! limit-noise calibration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use pdedisc::datasets::{self, EquationId};
use pdedisc::evolution::Mode;
use pdedisc::field::Field;
use pdedisc::harness::{
    calibrate_limit_magnitude, discover, prepare_context, result_json, run_experiment,
    ExperimentConfig,
};
use pdedisc::knowledge::{tune_mixing_factor, GuessSource, InitialGuess, MixingFactor};
use pdedisc::symnet::generate_initial_guess;
use pdedisc::ProblemConfig;

#[derive(Parser)]
#[command(name = "pdedisc", about = "Evolutionary discovery of PDEs from gridded data", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the symbolic network and write an initial guess JSON.
    Guess(GuessArgs),
    /// Run one discovery and write the ranked result JSON.
    Discover(DiscoverArgs),
    /// Sweep the mixing factor against the ideal distribution.
    TuneMf(TuneMfArgs),
    /// Multi-run noise-sweep experiment with records and summary CSVs.
    Experiment(ExperimentArgs),
    /// Find the limit noise magnitude of the classical algorithm.
    Calibrate(CalibrateArgs),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate a built-in benchmark dataset as CSV plus metadata.
    Gen(DatasetGenArgs),
}

#[derive(Args)]
struct ConfigOpts {
    /// Equation id: viscous-burgers | kdv | wave | inviscid-burgers.
    #[arg(long)]
    equation: Option<String>,
    /// TOML config file with `key = value` overrides (may carry `equation`).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigOpts {
    fn resolve(&self) -> anyhow::Result<ProblemConfig> {
        let text = match &self.config {
            Some(path) => Some(
                std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?,
            ),
            None => None,
        };
        let equation: EquationId = match (&self.equation, &text) {
            (Some(eq), _) => eq.parse()?,
            (None, Some(t)) => {
                let value: toml_equation::EquationOnly = toml_equation::parse(t)?;
                match value.equation {
                    Some(eq) => eq.parse()?,
                    None => bail!("config file has no `equation` key; pass --equation"),
                }
            }
            (None, None) => bail!("pass --equation or a --config file with an `equation` key"),
        };
        let mut config = ProblemConfig::defaults(equation);
        if let Some(t) = &text {
            config.apply_overrides(t)?;
        }
        Ok(config)
    }
}

/// Minimal TOML probe for the `equation` key, without pulling the full
/// overrides schema into the CLI.
mod toml_equation {
    pub struct EquationOnly {
        pub equation: Option<String>,
    }

    pub fn parse(text: &str) -> anyhow::Result<EquationOnly> {
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("equation") {
                let rest = rest.trim_start();
                if let Some(value) = rest.strip_prefix('=') {
                    let value = value.trim().trim_matches('"').trim_matches('\'');
                    return Ok(EquationOnly { equation: Some(value.to_string()) });
                }
            }
        }
        Ok(EquationOnly { equation: None })
    }
}

#[derive(Args)]
struct DatasetGenArgs {
    /// Equation id to generate.
    #[arg(long)]
    equation: String,
    /// Output directory (values.csv, meta.json, groundtruth.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GuessArgs {
    /// Directory with values.csv and meta.json.
    #[arg(long)]
    data: PathBuf,
    /// Output guess JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Master seed for the training runs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigOpts,
}

#[derive(Args)]
struct DiscoverArgs {
    /// Directory with values.csv and meta.json.
    #[arg(long)]
    data: PathBuf,
    /// classical | modified.
    #[arg(long, default_value = "classical")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mixing factor for modified mode: a number in [1, 5] or `auto`.
    #[arg(long, default_value = "2.4")]
    mf: String,
    /// Pre-computed guess JSON (modified mode); omitted = train internally.
    #[arg(long)]
    guess_file: Option<PathBuf>,
    /// Smooth the data before differentiation (Savitzky–Golay window from
    /// the config) — intended for noisy inputs.
    #[arg(long, default_value_t = false)]
    denoise: bool,
    /// Output result JSON path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigOpts,
}

#[derive(Args)]
struct TuneMfArgs {
    /// Guess JSON produced by `guess` (or authored manually).
    #[arg(long)]
    guess: PathBuf,
    /// Config file defining the term space (caps, t_max, equation).
    #[arg(long)]
    space_config: PathBuf,
    /// Expected number of true-equation terms; defaults to the config's
    /// maximum term count.
    #[arg(long)]
    k_expected: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    equation: String,
    /// Runs per (mode, mf, noise) cell.
    #[arg(long, default_value_t = 50)]
    runs: usize,
    /// Comma-separated noise percentages of the limit magnitude.
    #[arg(long, default_value = "0,25,50,75,100")]
    noise: String,
    /// Comma-separated mixing factors (numbers or `auto`).
    #[arg(long, default_value = "2.4")]
    mf: String,
    /// Comma-separated modes to run.
    #[arg(long, default_value = "classical,modified")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = library default).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory for records.csv, summary.csv and result JSONs.
    #[arg(long)]
    out: PathBuf,
    /// Skip writing per-run result JSONs.
    #[arg(long, default_value_t = false)]
    no_results: bool,
    /// Config file with overrides (e.g. a calibrated limit_magnitude).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    equation: String,
    /// Runs per probed magnitude.
    #[arg(long, default_value_t = 50)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the full effective config (including the calibrated
    /// limit_magnitude) to this TOML file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_data_dir(dir: &Path) -> anyhow::Result<Field> {
    let values = dir.join("values.csv");
    let meta = dir.join("meta.json");
    Ok(datasets::load_csv(&values, &meta)?)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Dataset(DatasetCommand::Gen(args)) => dataset_gen(args),
        Command::Guess(args) => guess(args),
        Command::Discover(args) => run_discover(args),
        Command::TuneMf(args) => tune_mf(args),
        Command::Experiment(args) => experiment(args),
        Command::Calibrate(args) => calibrate(args),
    }
}

fn dataset_gen(args: DatasetGenArgs) -> anyhow::Result<()> {
    let id: EquationId = args.equation.parse()?;
    let (field, truth) = datasets::generate(id)?;
    std::fs::create_dir_all(&args.out)?;
    datasets::save_csv(&field, &args.out.join("values.csv"), &args.out.join("meta.json"))?;
    std::fs::write(
        args.out.join("groundtruth.json"),
        serde_json::to_string_pretty(&truth)?,
    )?;
    println!(
        "wrote {} dataset ({} x {}) to {}",
        id,
        field.grid().shape()[0],
        field.grid().shape()[1],
        args.out.display()
    );
    Ok(())
}

fn guess(args: GuessArgs) -> anyhow::Result<()> {
    let config = args.config.resolve()?;
    let field = load_data_dir(&args.data)?;
    let (ctx, _space) = prepare_context(&field, &config, false)?;
    let spec = config.guess_spec(args.seed);
    let (guess, lhs) = generate_initial_guess(&ctx, ctx.pool(), &spec)?;
    std::fs::write(&args.out, guess.to_json()?)?;
    println!("balance term: {lhs}; {} guess terms -> {}", guess.len(), args.out.display());
    Ok(())
}

fn run_discover(args: DiscoverArgs) -> anyhow::Result<()> {
    let config = args.config.resolve()?;
    let mode: Mode = args.mode.parse()?;
    let field = load_data_dir(&args.data)?;
    let (ctx, space) = prepare_context(&field, &config, args.denoise)?;

    let guess = match (mode, &args.guess_file) {
        (Mode::Modified, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading guess {}", path.display()))?;
            Some(InitialGuess::from_json(&text, GuessSource::File)?)
        }
        (Mode::Modified, None) => {
            let spec = config.guess_spec(args.seed);
            match generate_initial_guess(&ctx, ctx.pool(), &spec) {
                Ok((g, lhs)) => {
                    eprintln!("trained initial guess with balance term {lhs}");
                    Some(g)
                }
                Err(e) => {
                    eprintln!("warning: guess generation failed ({e}); falling back to classical mode");
                    None
                }
            }
        }
        (Mode::Classical, _) => None,
    };
    let effective_mode = if mode == Mode::Modified && guess.is_none() {
        Mode::Classical
    } else {
        mode
    };

    let mf = match args.mf.as_str() {
        "auto" => match &guess {
            Some(g) => tune_mixing_factor(g, &space, ctx.pool(), config.n_terms_max, 3.25)?.mf,
            None => MixingFactor::DEFAULT,
        },
        other => MixingFactor::new(other.parse::<f64>().context("parsing --mf")?)?,
    };

    let discovery = discover(&ctx, &space, &config, effective_mode, mf, args.seed, guess.as_ref())?;
    let json = result_json(&discovery, effective_mode, args.seed);
    std::fs::write(&args.out, serde_json::to_string_pretty(&json)?)?;
    let best = discovery.population.first();
    println!(
        "best fitness {:.4e} -> {}",
        best.and_then(|c| c.fitness).unwrap_or(0.0),
        args.out.display()
    );
    Ok(())
}

fn tune_mf(args: TuneMfArgs) -> anyhow::Result<()> {
    let opts = ConfigOpts { equation: None, config: Some(args.space_config.clone()) };
    let config = opts.resolve()?;
    let pool = pdedisc::tokens::build_token_pool(&config.pool_config())?;
    let space = pdedisc::tokens::enumerate_term_space(&pool, config.t_max)?;
    let text = std::fs::read_to_string(&args.guess)
        .with_context(|| format!("reading guess {}", args.guess.display()))?;
    let guess = InitialGuess::from_json(&text, GuessSource::File)?;
    let k = args.k_expected.unwrap_or(config.n_terms_max);
    let tuned = tune_mixing_factor(&guess, &space, &pool, k, 3.25)?;
    println!("chosen_mf,{}", tuned.mf.value());
    println!("mf,kl_divergence");
    for (mf, kl) in &tuned.curve {
        println!("{mf},{kl:.9e}");
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} '{s}': {e}")))
        .collect()
}

fn experiment(args: ExperimentArgs) -> anyhow::Result<()> {
    let equation: EquationId = args.equation.parse()?;
    let mut problem = ProblemConfig::defaults(equation);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        problem.apply_overrides(&text)?;
    }
    let mut cfg = ExperimentConfig::new(equation, problem);
    cfg.runs = args.runs;
    cfg.noise_pcts = parse_list(&args.noise, "noise percentage")?;
    cfg.mfs = parse_list(&args.mf, "mixing factor")?;
    cfg.modes = parse_list(&args.mode, "mode")?;
    cfg.master_seed = args.seed;
    cfg.workers = args.workers;
    cfg.collect_results = !args.no_results;

    let output = run_experiment(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("records.csv"), output.records_csv())?;
    std::fs::write(args.out.join("summary.csv"), &output.summary_csv)?;
    for (seed, json) in &output.results_json {
        std::fs::write(
            args.out.join(format!("result-{seed}.json")),
            serde_json::to_string_pretty(json)?,
        )?;
    }
    println!(
        "limit magnitude {:.6e}; {} records -> {}",
        output.limit_magnitude,
        output.records.len(),
        args.out.display()
    );
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let equation: EquationId = args.equation.parse()?;
    let mut problem = ProblemConfig::defaults(equation);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        problem.apply_overrides(&text)?;
    }
    let (field, truth) = datasets::generate(equation)?;
    let limit = calibrate_limit_magnitude(&field, &truth, &problem, args.runs, args.seed)?;
    problem.limit_magnitude = Some(limit);
    println!("limit_magnitude = {limit:.6e}");
    if let Some(path) = &args.out {
        std::fs::write(path, problem.to_toml())?;
        println!("config -> {}", path.display());
    }
    Ok(())
}
