//! Metrics, the multi-run experiment protocol, noise-limit calibration and
//! result persistence.
//!
//! A run is successful when some final-population chromosome matches the
//! ground-truth structure after moving every term to one side; among the
//! matching candidates the minimum coefficient MAE is reported. All
//! randomness derives from the master seed per (mode, mf, noise, run) cell,
//! so sweeps are reproducible and order-independent.

use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::json;

use crate::config::ProblemConfig;
use crate::datasets::{generate, EquationId, GroundTruth};
use crate::error::{Error, Result};
use crate::evolution::{render_equation, Engine, Mode};
use crate::exec;
use crate::field::{add_noise, smooth, Field};
use crate::knowledge::{InitialGuess, MixingFactor};
use crate::numerics::derive_seed;
use crate::symnet::generate_initial_guess;
use crate::tokens::{enumerate_term_space, build_token_pool, Chromosome, EvalContext, TermSpace, TokenPool};

/// Presence cutoff for structural comparison.
pub const PRESENCE_THRESHOLD: f64 = 1e-6;

/// One-side structure of a fitted chromosome: the target term at −1 plus
/// every kept term, keyed by sorted factor labels.
pub fn chromosome_one_side(chromosome: &Chromosome, pool: &TokenPool) -> Option<Vec<(Vec<String>, f64)>> {
    let target = chromosome.target_index?;
    let mut out = Vec::new();
    for (i, term) in chromosome.terms.iter().enumerate() {
        if i == target {
            out.push((term.labels(pool), -1.0));
        } else if chromosome.kept[i] {
            out.push((term.labels(pool), chromosome.coefficients[i]));
        }
    }
    Some(out)
}

/// Mean absolute coefficient error against the ground truth, gated on exact
/// structural agreement. The found equation is renormalized so the truth's
/// balance term carries −1, which makes the comparison target-agnostic.
pub fn coefficient_mae(chromosome: &Chromosome, pool: &TokenPool, truth: &GroundTruth) -> Option<f64> {
    let one_side = chromosome_one_side(chromosome, pool)?;
    let lhs_key = vec![truth.lhs.clone()];
    let lhs_coef = one_side.iter().find(|(k, _)| *k == lhs_key).map(|(_, c)| *c)?;
    if lhs_coef.abs() < PRESENCE_THRESHOLD {
        return None;
    }
    let scale = -1.0 / lhs_coef;
    let found: BTreeMap<Vec<String>, f64> = one_side
        .into_iter()
        .filter(|(k, _)| *k != lhs_key)
        .map(|(k, c)| (k, c * scale))
        .collect();
    if found.len() != truth.terms.len() {
        return None;
    }
    let mut total = 0.0;
    for (key, c_true) in &truth.terms {
        let c_found = found.get(key)?;
        total += (c_found - c_true).abs();
    }
    Some(total / truth.terms.len() as f64)
}

/// Structural Hamming distance between full one-side structures (balance
/// term included on both sides): terms to add plus terms to remove,
/// presence meaning |coefficient| ≥ `threshold`.
pub fn shd_terms(found: &[(Vec<String>, f64)], truth: &GroundTruth, threshold: f64) -> usize {
    let present: Vec<&Vec<String>> =
        found.iter().filter(|(_, c)| c.abs() >= threshold).map(|(k, _)| k).collect();
    let truth_side = truth.one_side();
    let truth_keys: Vec<&Vec<String>> = truth_side.iter().map(|(k, _)| k).collect();
    let extra = present.iter().filter(|k| !truth_keys.contains(k)).count();
    let missing = truth_keys.iter().filter(|k| !present.contains(k)).count();
    extra + missing
}

pub fn shd_of_chromosome(chromosome: &Chromosome, pool: &TokenPool, truth: &GroundTruth) -> Option<usize> {
    let one_side = chromosome_one_side(chromosome, pool)?;
    Some(shd_terms(&one_side, truth, PRESENCE_THRESHOLD))
}

pub fn shd_of_guess(guess: &InitialGuess, truth: &GroundTruth) -> usize {
    let found: Vec<(Vec<String>, f64)> = guess.entries().map(|(k, v)| (k.clone(), v)).collect();
    shd_terms(&found, truth, PRESENCE_THRESHOLD)
}

/// Output of one discovery run.
pub struct Discovery {
    pub population: Vec<Chromosome>,
    pub pool: TokenPool,
    pub wall_seconds: f64,
}

/// Prepares the evaluation context for a (possibly noisy) field: optional
/// Savitzky–Golay denoising followed by token precomputation.
pub fn prepare_context(field: &Field, config: &ProblemConfig, denoise: bool) -> Result<(EvalContext, TermSpace)> {
    let pool = build_token_pool(&config.pool_config())?;
    let working = if denoise && config.smooth_window > 1 {
        smooth(field, config.smooth_window, config.smooth_degree)?
    } else {
        field.clone()
    };
    let ctx = EvalContext::new(&working, &pool)?;
    let space = enumerate_term_space(&pool, config.t_max)?;
    Ok((ctx, space))
}

/// Runs one full discovery on prepared data.
pub fn discover(
    ctx: &EvalContext,
    space: &TermSpace,
    config: &ProblemConfig,
    mode: Mode,
    mf: MixingFactor,
    seed: u64,
    guess: Option<&InitialGuess>,
) -> Result<Discovery> {
    let mut evo = config.evolution_config(mode, seed)?;
    evo.mf = mf;
    let engine = Engine::new(ctx, space, evo, config.fit_params(), guess)?;
    let start = Instant::now();
    let population = engine.evolve()?;
    Ok(Discovery {
        population,
        pool: ctx.pool().clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Serializes a ranked population as the result JSON document.
pub fn result_json(discovery: &Discovery, mode: Mode, seed: u64) -> serde_json::Value {
    let pool = &discovery.pool;
    let equations: Vec<serde_json::Value> = discovery
        .population
        .iter()
        .map(|c| {
            let terms: Vec<serde_json::Value> = c
                .terms
                .iter()
                .enumerate()
                .filter(|(i, _)| c.kept[*i])
                .map(|(i, t)| {
                    json!({
                        "factors": t.labels(pool),
                        "coefficient": c.coefficients[i],
                    })
                })
                .collect();
            json!({
                "fitness": c.fitness.unwrap_or(0.0),
                "target": c.target_index.map(|i| c.terms[i].labels(pool)),
                "terms": terms,
            })
        })
        .collect();
    json!({
        "mode": match mode { Mode::Classical => "classical", Mode::Modified => "modified" },
        "seed": seed,
        "wall_seconds": discovery.wall_seconds,
        "equations": equations,
    })
}

/// Mixing-factor request for a sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MfChoice {
    Fixed(f64),
    /// Tuned per noise level from the guess via the KL sweep.
    Auto,
}

impl std::str::FromStr for MfChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(MfChoice::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("mixing factor '{s}' is neither a number nor 'auto'")))?;
        MixingFactor::new(v)?;
        Ok(MfChoice::Fixed(v))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub equation: EquationId,
    pub runs: usize,
    pub modes: Vec<Mode>,
    pub mfs: Vec<MfChoice>,
    pub noise_pcts: Vec<u32>,
    pub master_seed: u64,
    pub workers: usize,
    /// Collect a full result JSON per run (population, coefficients).
    pub collect_results: bool,
    pub problem: ProblemConfig,
}

impl ExperimentConfig {
    pub fn new(equation: EquationId, problem: ProblemConfig) -> Self {
        ExperimentConfig {
            equation,
            runs: 50,
            modes: vec![Mode::Classical, Mode::Modified],
            mfs: vec![MfChoice::Fixed(2.4)],
            noise_pcts: vec![0, 25, 50, 75, 100],
            master_seed: 0,
            workers: 0,
            collect_results: false,
            problem,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.modes.is_empty() || self.noise_pcts.is_empty() {
            return Err(Error::Config("empty mode or noise list".into()));
        }
        Ok(())
    }
}

/// One row of `records.csv`.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub mode: Mode,
    pub mf: Option<f64>,
    pub noise_level_pct: u32,
    pub success: bool,
    pub mae: Option<f64>,
    pub shd: usize,
    pub runtime_s: f64,
    pub best_equation: String,
}

impl RunRecord {
    pub const CSV_HEADER: &'static str =
        "seed,mode,mf,noise_level_pct,success,mae,shd,runtime_s,best_equation";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3},{}",
            self.seed,
            match self.mode {
                Mode::Classical => "classical",
                Mode::Modified => "modified",
            },
            self.mf.map(|v| format!("{v}")).unwrap_or_default(),
            self.noise_level_pct,
            self.success,
            self.mae.map(|v| format!("{v:.6e}")).unwrap_or_default(),
            self.shd,
            self.runtime_s,
            self.best_equation,
        )
    }
}

/// Everything a finished sweep produces.
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub summary_csv: String,
    pub limit_magnitude: f64,
    /// Wall seconds spent producing the guess, per noise level (modified
    /// mode only; reported separately from per-run times).
    pub guess_seconds: Vec<(u32, f64)>,
    pub results_json: Vec<(u64, serde_json::Value)>,
}

impl ExperimentOutput {
    pub fn records_csv(&self) -> String {
        let mut out = String::from(RunRecord::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_csv_row());
            out.push('\n');
        }
        out
    }
}

fn evaluate_population(
    discovery: &Discovery,
    truth: &GroundTruth,
) -> (bool, Option<f64>, usize, String) {
    let pool = &discovery.pool;
    let mut best_mae: Option<f64> = None;
    let mut min_shd = usize::MAX;
    for c in &discovery.population {
        if let Some(mae) = coefficient_mae(c, pool, truth) {
            best_mae = Some(best_mae.map_or(mae, |m: f64| m.min(mae)));
        }
        if let Some(shd) = shd_of_chromosome(c, pool, truth) {
            min_shd = min_shd.min(shd);
        }
    }
    let best_equation = discovery
        .population
        .first()
        .map(|c| render_equation(c, pool))
        .unwrap_or_default();
    (best_mae.is_some(), best_mae, min_shd, best_equation)
}

/// Noise magnitude for a percentage of the limit.
fn magnitude_for(pct: u32, limit: f64) -> f64 {
    limit * pct as f64 / 100.0
}

/// One classical run used by the calibration search.
fn classical_run_succeeds(
    field: &Field,
    truth: &GroundTruth,
    config: &ProblemConfig,
    magnitude: f64,
    seed: u64,
) -> bool {
    let run = || -> Result<bool> {
        let noised = add_noise(field, magnitude, derive_seed(seed, &[7]))?;
        let (ctx, space) = prepare_context(&noised, config, magnitude > 0.0)?;
        let discovery = discover(&ctx, &space, config, Mode::Classical, MixingFactor::DEFAULT, seed, None)?;
        let (success, _, _, _) = evaluate_population(&discovery, truth);
        Ok(success)
    };
    run().unwrap_or(false)
}

/// Smallest noise magnitude at which the classical algorithm succeeds in
/// none of `runs` seeded attempts: factor-of-2 bracketing from 0.01 within
/// [1e-6, 10], then 10 bisection steps.
pub fn calibrate_limit_magnitude(
    field: &Field,
    truth: &GroundTruth,
    config: &ProblemConfig,
    runs: usize,
    master_seed: u64,
) -> Result<f64> {
    let success_count = |magnitude: f64| -> usize {
        let seeds: Vec<u64> =
            (0..runs).map(|r| derive_seed(master_seed, &[40, r as u64])).collect();
        exec::map_indexed(runs, |r| {
            classical_run_succeeds(field, truth, config, magnitude, seeds[r]) as usize
        })
        .into_iter()
        .sum()
    };

    let mut magnitude = 0.01f64;
    let (mut lo, mut hi);
    if success_count(magnitude) == 0 {
        // Shrink until some run succeeds.
        loop {
            let next = magnitude / 2.0;
            if next < 1e-6 {
                return Err(Error::Calibration(format!(
                    "classical mode never succeeds even at magnitude {next:.2e}"
                )));
            }
            if success_count(next) > 0 {
                lo = next;
                hi = magnitude;
                break;
            }
            magnitude = next;
        }
    } else {
        // Grow until every run fails.
        loop {
            let next = magnitude * 2.0;
            if next > 10.0 {
                return Err(Error::Calibration(
                    "classical mode keeps succeeding up to magnitude 10".into(),
                ));
            }
            if success_count(next) == 0 {
                lo = magnitude;
                hi = next;
                break;
            }
            magnitude = next;
        }
    }
    for _ in 0..10 {
        let mid = 0.5 * (lo + hi);
        if success_count(mid) == 0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Runs the full (mode × mf × noise × run) sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (field, truth) = generate(cfg.equation)?;
    exec::with_workers(cfg.workers, || run_experiment_inner(cfg, &field, &truth))
}

fn run_experiment_inner(
    cfg: &ExperimentConfig,
    field: &Field,
    truth: &GroundTruth,
) -> Result<ExperimentOutput> {
    let needs_noise = cfg.noise_pcts.iter().any(|&p| p > 0);
    let limit = match cfg.problem.limit_magnitude {
        Some(l) => l,
        None if needs_noise => {
            calibrate_limit_magnitude(field, truth, &cfg.problem, cfg.runs, cfg.master_seed)?
        }
        None => 0.0,
    };

    // Guess and tuned mixing factors, once per noise level (modified mode).
    let wants_modified = cfg.modes.contains(&Mode::Modified);
    let wants_auto = cfg.mfs.contains(&MfChoice::Auto);
    let mut guesses: BTreeMap<u32, InitialGuess> = BTreeMap::new();
    let mut tuned: BTreeMap<u32, f64> = BTreeMap::new();
    let mut guess_seconds = Vec::new();
    if wants_modified {
        for &pct in &cfg.noise_pcts {
            let start = Instant::now();
            let magnitude = magnitude_for(pct, limit);
            let noised = add_noise(field, magnitude, derive_seed(cfg.master_seed, &[100, pct as u64]))?;
            let (ctx, space) = prepare_context(&noised, &cfg.problem, magnitude > 0.0)?;
            let spec = cfg.problem.guess_spec(derive_seed(cfg.master_seed, &[101, pct as u64]));
            match generate_initial_guess(&ctx, ctx.pool(), &spec) {
                Ok((guess, _lhs)) => {
                    if wants_auto {
                        let t = crate::knowledge::tune_mixing_factor(
                            &guess,
                            &space,
                            ctx.pool(),
                            cfg.problem.n_terms_max,
                            3.25,
                        )?;
                        tuned.insert(pct, t.mf.value());
                    }
                    guesses.insert(pct, guess);
                }
                Err(e) => {
                    // Fall back to an empty guess: the distribution becomes
                    // uniform and the modified runs degrade to classical
                    // behavior rather than aborting the sweep.
                    eprintln!("guess generation failed at {pct}% noise: {e}");
                    guesses.insert(pct, InitialGuess::empty(crate::knowledge::GuessSource::Symnet));
                    tuned.insert(pct, 2.4);
                }
            }
            guess_seconds.push((pct, start.elapsed().as_secs_f64()));
        }
    }

    // Cell grid in deterministic order.
    struct Job {
        mode: Mode,
        mf: Option<f64>,
        pct: u32,
        seed: u64,
    }
    let mut jobs: Vec<Job> = Vec::new();
    for (mode_idx, &mode) in cfg.modes.iter().enumerate() {
        let mf_list: Vec<Option<f64>> = match mode {
            Mode::Classical => vec![None],
            Mode::Modified => cfg
                .mfs
                .iter()
                .map(|c| match c {
                    MfChoice::Fixed(v) => Some(*v),
                    MfChoice::Auto => None, // resolved per noise level below
                })
                .collect(),
        };
        for (mf_idx, &mf) in mf_list.iter().enumerate() {
            for &pct in &cfg.noise_pcts {
                for run in 0..cfg.runs {
                    let seed = derive_seed(
                        cfg.master_seed,
                        &[mode_idx as u64, mf_idx as u64, pct as u64, run as u64],
                    );
                    let mf = match (mode, mf) {
                        (Mode::Classical, _) => None,
                        (Mode::Modified, Some(v)) => Some(v),
                        (Mode::Modified, None) => Some(*tuned.get(&pct).unwrap_or(&2.4)),
                    };
                    jobs.push(Job { mode, mf, pct, seed });
                }
            }
        }
    }

    let outcomes: Vec<(RunRecord, Option<(u64, serde_json::Value)>)> =
        exec::map_indexed(jobs.len(), |j| {
            let job = &jobs[j];
            let magnitude = magnitude_for(job.pct, limit);
            let outcome = (|| -> Result<(RunRecord, Option<(u64, serde_json::Value)>)> {
                let noised = add_noise(field, magnitude, derive_seed(job.seed, &[7]))?;
                let (ctx, space) = prepare_context(&noised, &cfg.problem, magnitude > 0.0)?;
                let guess = match job.mode {
                    Mode::Modified => guesses.get(&job.pct),
                    Mode::Classical => None,
                };
                let mf = job.mf.map(MixingFactor::new).transpose()?.unwrap_or_default();
                let discovery = discover(&ctx, &space, &cfg.problem, job.mode, mf, job.seed, guess)?;
                let (success, mae, shd, best_equation) = evaluate_population(&discovery, truth);
                let result = cfg
                    .collect_results
                    .then(|| (job.seed, result_json(&discovery, job.mode, job.seed)));
                Ok((
                    RunRecord {
                        seed: job.seed,
                        mode: job.mode,
                        mf: job.mf,
                        noise_level_pct: job.pct,
                        success,
                        mae,
                        shd,
                        runtime_s: discovery.wall_seconds,
                        best_equation,
                    },
                    result,
                ))
            })();
            outcome.unwrap_or_else(|e| {
                (
                    RunRecord {
                        seed: job.seed,
                        mode: job.mode,
                        mf: job.mf,
                        noise_level_pct: job.pct,
                        success: false,
                        mae: None,
                        shd: usize::MAX,
                        runtime_s: 0.0,
                        best_equation: format!("<run failed: {e}>"),
                    },
                    None,
                )
            })
        });

    let mut records = Vec::with_capacity(outcomes.len());
    let mut results_json = Vec::new();
    for (record, result) in outcomes {
        records.push(record);
        if let Some(r) = result {
            results_json.push(r);
        }
    }
    let summary_csv = summarize(cfg, &records, &guess_seconds);
    Ok(ExperimentOutput {
        records,
        summary_csv,
        limit_magnitude: limit,
        guess_seconds,
        results_json,
    })
}

/// Wide summary table: one row per (metric, mode, mf), one column per noise
/// level; success counts, mean MAE of successful runs, and the
/// modified−classical success delta per noise level.
fn summarize(cfg: &ExperimentConfig, records: &[RunRecord], guess_seconds: &[(u32, f64)]) -> String {
    let mut out = String::from("metric,mode,mf");
    for &pct in &cfg.noise_pcts {
        out.push_str(&format!(",noise_{pct}"));
    }
    out.push('\n');

    let cell_records = |mode: Mode, mf: Option<f64>, pct: u32| -> Vec<&RunRecord> {
        records
            .iter()
            .filter(|r| r.mode == mode && r.noise_level_pct == pct && (mode == Mode::Classical || r.mf == mf))
            .collect()
    };
    let mf_values = |mode: Mode| -> Vec<Option<f64>> {
        match mode {
            Mode::Classical => vec![None],
            Mode::Modified => {
                let mut seen = Vec::new();
                for r in records.iter().filter(|r| r.mode == Mode::Modified) {
                    if !seen.contains(&r.mf) {
                        seen.push(r.mf);
                    }
                }
                seen
            }
        }
    };

    let mode_name = |m: Mode| match m {
        Mode::Classical => "classical",
        Mode::Modified => "modified",
    };
    let mf_name = |mf: Option<f64>| mf.map(|v| format!("{v}")).unwrap_or_default();

    for &mode in &cfg.modes {
        for mf in mf_values(mode) {
            out.push_str(&format!("success_count,{},{}", mode_name(mode), mf_name(mf)));
            for &pct in &cfg.noise_pcts {
                let n = cell_records(mode, mf, pct).iter().filter(|r| r.success).count();
                out.push_str(&format!(",{n}"));
            }
            out.push('\n');
        }
    }
    for &mode in &cfg.modes {
        for mf in mf_values(mode) {
            out.push_str(&format!("mean_mae,{},{}", mode_name(mode), mf_name(mf)));
            for &pct in &cfg.noise_pcts {
                let maes: Vec<f64> =
                    cell_records(mode, mf, pct).iter().filter_map(|r| r.mae).collect();
                if maes.is_empty() {
                    out.push(',');
                } else {
                    out.push_str(&format!(",{:.6e}", crate::numerics::mean(&maes)));
                }
            }
            out.push('\n');
        }
    }
    if cfg.modes.contains(&Mode::Modified) && cfg.modes.contains(&Mode::Classical) {
        for mf in mf_values(Mode::Modified) {
            out.push_str(&format!("success_delta,modified,{}", mf_name(mf)));
            for &pct in &cfg.noise_pcts {
                let m = cell_records(Mode::Modified, mf, pct).iter().filter(|r| r.success).count()
                    as i64;
                let c = cell_records(Mode::Classical, None, pct)
                    .iter()
                    .filter(|r| r.success)
                    .count() as i64;
                out.push_str(&format!(",{}", m - c));
            }
            out.push('\n');
        }
    }
    for (pct, secs) in guess_seconds {
        out.push_str(&format!("guess_seconds,modified,,{pct}:{secs:.3}\n"));
    }
    out
}
