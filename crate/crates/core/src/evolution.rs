//! Population management and the evolutionary operators, in both the
//! classical (uniform) and modified (importance-weighted) flavors.
//!
//! Randomness is split per task from the master seed, so populations evolve
//! identically whatever the thread count. Within a generation each offspring
//! pair owns one RNG stream: crossover, mutation, target selection and
//! fitting all draw from it in a fixed code order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::knowledge::{build_individual_distribution, ImportanceDistribution, InitialGuess, MixingFactor};
use crate::numerics::derive_seed;
use crate::sparsity::{apply_fit, fit_chromosome, select_target, FitParams};
use crate::tokens::{Chromosome, EvalContext, Term, TermSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Classical,
    Modified,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Mode::Classical),
            "modified" => Ok(Mode::Modified),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub epochs: usize,
    /// Upper bound on the number of terms per candidate equation.
    pub n_terms_max: usize,
    /// Upper bound on the number of token factors per term.
    pub t_max: usize,
    pub crossover_rate: f64,
    pub mutation_term_rate: f64,
    pub mutation_token_rate: f64,
    pub mode: Mode,
    pub seed: u64,
    pub mf: MixingFactor,
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("population size must be at least 2".into()));
        }
        if self.n_terms_max < 2 {
            return Err(Error::Config("n_terms_max must be at least 2".into()));
        }
        for (name, rate) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_term_rate", self.mutation_term_rate),
            ("mutation_token_rate", self.mutation_token_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

const RESAMPLE_ATTEMPTS: usize = 10;

fn replace_term(parent: &Chromosome, slot: usize, incoming: Term) -> Chromosome {
    let mut terms = parent.terms.clone();
    terms[slot] = incoming;
    let mut child = Chromosome::new(terms).expect("replacement kept terms distinct");
    child.restricted = parent.restricted.clone();
    child
}

/// Checks whether dropping `slot` from the parent makes `incoming` legal.
fn incoming_is_legal(parent: &Chromosome, slot: usize, incoming: &Term) -> bool {
    if parent.restricted.contains(incoming.key()) {
        return false;
    }
    parent.terms.iter().enumerate().all(|(i, t)| i == slot || t != incoming)
}

/// Classical crossover: one uniformly chosen term index in each parent is
/// swapped. A rule-violating incoming term is resampled uniformly from the
/// space; if that fails the offspring is a copy of its parent.
pub fn crossover_classical<R: Rng>(
    a: &Chromosome,
    b: &Chromosome,
    space: &TermSpace,
    rng: &mut R,
) -> (Chromosome, Chromosome) {
    let ia = rng.random_range(0..a.len());
    let ib = rng.random_range(0..b.len());
    let from_a = a.terms[ia].clone();
    let from_b = b.terms[ib].clone();
    let child_a = make_child(a, ia, from_b, space, rng);
    let child_b = make_child(b, ib, from_a, space, rng);
    (child_a, child_b)
}

fn make_child<R: Rng>(
    parent: &Chromosome,
    slot: usize,
    incoming: Term,
    space: &TermSpace,
    rng: &mut R,
) -> Chromosome {
    let mut incoming = incoming;
    if !incoming_is_legal(parent, slot, &incoming) {
        let mut replaced = false;
        for _ in 0..RESAMPLE_ATTEMPTS {
            let cand = space.term(rng.random_range(0..space.len())).clone();
            if incoming_is_legal(parent, slot, &cand) {
                incoming = cand;
                replaced = true;
                break;
            }
        }
        if !replaced {
            return parent.clone();
        }
    }
    let mut child = replace_term(parent, slot, incoming);
    child.mark_dirty();
    child
}

/// Modified crossover: the term donated from each parent is sampled with
/// probability proportional to the receiving side's importance weights
/// (zero total weight degrades to the uniform classical choice).
pub fn crossover_modified<R: Rng>(
    a: &Chromosome,
    b: &Chromosome,
    dist_a: &ImportanceDistribution,
    dist_b: &ImportanceDistribution,
    space: &TermSpace,
    rng: &mut R,
) -> (Chromosome, Chromosome) {
    let ia = weighted_donor_index(a, dist_b, rng);
    let ib = weighted_donor_index(b, dist_a, rng);
    let from_a = a.terms[ia].clone();
    let from_b = b.terms[ib].clone();
    let child_a = make_child(a, ia, from_b, space, rng);
    let child_b = make_child(b, ib, from_a, space, rng);
    (child_a, child_b)
}

/// Index of the donated term of `donor`, weighted by the receiver's
/// importance of each donor term.
fn weighted_donor_index<R: Rng>(
    donor: &Chromosome,
    receiver_dist: &ImportanceDistribution,
    rng: &mut R,
) -> usize {
    let weights: Vec<f64> = donor
        .terms
        .iter()
        .map(|t| receiver_dist.probability_of(t))
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..donor.len());
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    donor.len() - 1
}

/// Builds a fresh random term: length uniform in 1..=t_max, tokens uniform
/// from the pool, retried until the single-occurrence rule holds.
fn random_term<R: Rng>(ctx: &EvalContext, t_max: usize, rng: &mut R) -> Term {
    let pool = ctx.pool();
    loop {
        let len = rng.random_range(1..=t_max);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..pool.len())).collect();
        if let Ok(term) = Term::new(pool, ids) {
            return term;
        }
    }
}

/// Structure-level mutation. Token exchange hits a uniformly chosen term
/// (replacement token uniform in classical mode, drawn from the importance
/// marginals in modified mode); term exchange replaces a uniformly chosen
/// non-target term with a freshly generated one (token-wise uniform in
/// classical mode, a direct importance draw in modified mode).
pub fn mutate_structure<R: Rng>(
    chromosome: &Chromosome,
    ctx: &EvalContext,
    _space: &TermSpace,
    dist: Option<&ImportanceDistribution>,
    cfg: &EvolutionConfig,
    rng: &mut R,
) -> Chromosome {
    let pool = ctx.pool();
    let mut current = chromosome.clone();
    let mut changed = false;

    if rng.random::<f64>() < cfg.mutation_token_rate && !current.is_empty() {
        let slot = rng.random_range(0..current.len());
        'attempts: for _ in 0..RESAMPLE_ATTEMPTS {
            let term = &current.terms[slot];
            let pos = rng.random_range(0..term.len());
            let replacement = match dist {
                Some(d) => d.sample_token(rng).unwrap_or_else(|_| rng.random_range(0..pool.len())),
                None => rng.random_range(0..pool.len()),
            };
            let mut ids = term.factors().to_vec();
            ids[pos] = replacement;
            if let Ok(cand) = Term::new(pool, ids) {
                if incoming_is_legal(&current, slot, &cand) {
                    current = replace_term(&current, slot, cand);
                    changed = true;
                    break 'attempts;
                }
            }
        }
    }

    if rng.random::<f64>() < cfg.mutation_term_rate && current.len() > 1 {
        let target = current.target_index;
        let candidates: Vec<usize> = (0..current.len()).filter(|&i| Some(i) != target).collect();
        if !candidates.is_empty() {
            let slot = candidates[rng.random_range(0..candidates.len())];
            for _ in 0..RESAMPLE_ATTEMPTS {
                let cand = match dist {
                    Some(d) => match d.sample_term(rng) {
                        Ok(t) => t.clone(),
                        Err(_) => random_term(ctx, cfg.t_max, rng),
                    },
                    None => random_term(ctx, cfg.t_max, rng),
                };
                if incoming_is_legal(&current, slot, &cand) {
                    current = replace_term(&current, slot, cand);
                    changed = true;
                    break;
                }
            }
        }
    }

    if changed {
        current.mark_dirty();
    }
    current
}

/// One discovery engine bound to an evaluation context and term space.
pub struct Engine<'a> {
    ctx: &'a EvalContext,
    space: &'a TermSpace,
    cfg: EvolutionConfig,
    fit: FitParams,
    guess: Option<&'a InitialGuess>,
}

impl<'a> Engine<'a> {
    pub fn new(
        ctx: &'a EvalContext,
        space: &'a TermSpace,
        cfg: EvolutionConfig,
        fit: FitParams,
        guess: Option<&'a InitialGuess>,
    ) -> Result<Self> {
        cfg.validate()?;
        if space.len() < cfg.n_terms_max {
            return Err(Error::Config(format!(
                "term space of {} cannot fill individuals with up to {} terms",
                space.len(),
                cfg.n_terms_max
            )));
        }
        if cfg.mode == Mode::Modified && guess.is_none() {
            return Err(Error::Config("modified mode requires an initial guess".into()));
        }
        Ok(Engine { ctx, space, cfg, fit, guess })
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.cfg
    }

    /// Selects a target and fits; fit failures degrade to fitness 0 so the
    /// individual is removed by selection pressure rather than aborting.
    fn fit_individual<R: Rng>(&self, chromosome: &mut Chromosome, rng: &mut R) {
        match select_target(chromosome, rng) {
            Ok(idx) => chromosome.target_index = Some(idx),
            Err(_) => {
                chromosome.fitness = Some(0.0);
                return;
            }
        }
        match fit_chromosome(chromosome, self.ctx, &self.fit) {
            Ok(fit) => apply_fit(chromosome, &fit),
            Err(_) => chromosome.fitness = Some(0.0),
        }
    }

    /// Importance distribution for one individual (modified mode only).
    fn individual_distribution(&self, chromosome: &Chromosome) -> Option<ImportanceDistribution> {
        let guess = self.guess?;
        match build_individual_distribution(guess, self.space, self.ctx.pool(), chromosome, self.cfg.mf) {
            Ok(d) => Some(d),
            // No admissible candidates: degrade to uniform behavior.
            Err(_) => None,
        }
    }

    fn sample_initial_terms<R: Rng>(&self, rng: &mut R) -> Vec<Term> {
        let n_terms = rng.random_range(2..=self.cfg.n_terms_max);
        let dist = match self.cfg.mode {
            Mode::Modified => {
                let empty = Chromosome::new(vec![]).expect("empty chromosome");
                self.individual_distribution(&empty)
            }
            Mode::Classical => None,
        };
        let mut terms: Vec<Term> = Vec::with_capacity(n_terms);
        let mut guard = 0;
        while terms.len() < n_terms && guard < 1000 {
            guard += 1;
            let cand = match &dist {
                Some(d) => d
                    .sample_term(rng)
                    .map(|t| t.clone())
                    .unwrap_or_else(|_| self.space.term(rng.random_range(0..self.space.len())).clone()),
                None => self.space.term(rng.random_range(0..self.space.len())).clone(),
            };
            if terms.iter().all(|t| t != &cand) {
                terms.push(cand);
            }
        }
        terms
    }

    /// Fitted initial population, one RNG stream per individual.
    pub fn init_population(&self) -> Result<Vec<Chromosome>> {
        let n = self.cfg.population_size;
        let seeds: Vec<u64> = (0..n).map(|i| derive_seed(self.cfg.seed, &[0, i as u64])).collect();
        let pop = exec::map_indexed(n, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
            let terms = self.sample_initial_terms(&mut rng);
            let mut chrom = Chromosome::new(terms).expect("initial terms distinct");
            self.fit_individual(&mut chrom, &mut rng);
            chrom
        });
        Ok(pop)
    }

    /// Binary tournament by fitness.
    fn tournament<R: Rng>(&self, pop: &[Chromosome], rng: &mut R) -> usize {
        let i = rng.random_range(0..pop.len());
        let j = rng.random_range(0..pop.len());
        let fi = pop[i].fitness.unwrap_or(0.0);
        let fj = pop[j].fitness.unwrap_or(0.0);
        if fi >= fj {
            i
        } else {
            j
        }
    }

    /// Runs the evolutionary loop and returns the final population sorted by
    /// fitness, best first.
    pub fn evolve(&self) -> Result<Vec<Chromosome>> {
        let mut pop = self.init_population()?;
        for gen in 0..self.cfg.epochs {
            pop = self.step(gen as u64, pop)?;
        }
        pop.sort_by(|a, b| {
            b.fitness
                .unwrap_or(0.0)
                .partial_cmp(&a.fitness.unwrap_or(0.0))
                .expect("finite fitness")
        });
        Ok(pop)
    }

    fn step(&self, gen: u64, pop: Vec<Chromosome>) -> Result<Vec<Chromosome>> {
        let n = pop.len();
        let elite_idx = argmax_fitness(&pop);
        let elite = pop[elite_idx].clone();

        // Sequential phase: parent selection and crossover coin flips, so
        // the schedule is independent of worker threads.
        let mut sel_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[1, gen]));
        let n_pairs = n / 2;
        let mut plans: Vec<(usize, usize, bool, u64)> = Vec::with_capacity(n_pairs);
        for p in 0..n_pairs {
            let pa = self.tournament(&pop, &mut sel_rng);
            let pb = self.tournament(&pop, &mut sel_rng);
            let cross = sel_rng.random::<f64>() < self.cfg.crossover_rate;
            plans.push((pa, pb, cross, derive_seed(self.cfg.seed, &[2, gen, p as u64])));
        }
        let leftover: Option<(usize, u64)> = (n % 2 == 1).then(|| {
            (
                self.tournament(&pop, &mut sel_rng),
                derive_seed(self.cfg.seed, &[3, gen]),
            )
        });

        // Parallel phase: each pair evolves on its own RNG stream.
        let pop_ref = &pop;
        let mut offspring: Vec<Chromosome> = exec::map_indexed(n_pairs, |p| {
            let (pa, pb, cross, seed) = plans[p];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = &pop_ref[pa];
            let b = &pop_ref[pb];
            let (mut ca, mut cb) = if cross {
                match self.cfg.mode {
                    Mode::Classical => crossover_classical(a, b, self.space, &mut rng),
                    Mode::Modified => {
                        let da = self.individual_distribution(a);
                        let db = self.individual_distribution(b);
                        match (da, db) {
                            (Some(da), Some(db)) => {
                                crossover_modified(a, b, &da, &db, self.space, &mut rng)
                            }
                            _ => crossover_classical(a, b, self.space, &mut rng),
                        }
                    }
                }
            } else {
                (a.clone(), b.clone())
            };
            let mut out = Vec::with_capacity(2);
            for child in [&mut ca, &mut cb] {
                if child.fitness.is_none() {
                    self.fit_individual(child, &mut rng);
                }
                let dist = match self.cfg.mode {
                    Mode::Modified => self.individual_distribution(child),
                    Mode::Classical => None,
                };
                let mut mutated =
                    mutate_structure(child, self.ctx, self.space, dist.as_ref(), &self.cfg, &mut rng);
                if mutated.fitness.is_none() {
                    self.fit_individual(&mut mutated, &mut rng);
                }
                out.push(mutated);
            }
            out
        })
        .into_iter()
        .flatten()
        .collect();

        if let Some((pi, seed)) = leftover {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let child = &pop[pi];
            let dist = match self.cfg.mode {
                Mode::Modified => self.individual_distribution(child),
                Mode::Classical => None,
            };
            let mut mutated =
                mutate_structure(child, self.ctx, self.space, dist.as_ref(), &self.cfg, &mut rng);
            if mutated.fitness.is_none() {
                self.fit_individual(&mut mutated, &mut rng);
            }
            offspring.push(mutated);
        }

        // Elitism: the best individual always survives.
        let best_off = argmax_fitness(&offspring);
        if offspring[best_off].fitness.unwrap_or(0.0) < elite.fitness.unwrap_or(0.0) {
            let worst = argmin_fitness(&offspring);
            offspring[worst] = elite;
        }
        Ok(offspring)
    }
}

fn argmax_fitness(pop: &[Chromosome]) -> usize {
    pop.iter()
        .enumerate()
        .max_by(|a, b| {
            a.1.fitness
                .unwrap_or(0.0)
                .partial_cmp(&b.1.fitness.unwrap_or(0.0))
                .expect("finite fitness")
        })
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn argmin_fitness(pop: &[Chromosome]) -> usize {
    pop.iter()
        .enumerate()
        .min_by(|a, b| {
            a.1.fitness
                .unwrap_or(0.0)
                .partial_cmp(&b.1.fitness.unwrap_or(0.0))
                .expect("finite fitness")
        })
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Renders a fitted chromosome as a readable equation string, target on the
/// left.
pub fn render_equation(chromosome: &Chromosome, pool: &crate::tokens::TokenPool) -> String {
    let target = chromosome.target_index;
    let lhs = target
        .map(|i| chromosome.terms[i].render(pool))
        .unwrap_or_else(|| "<unfitted>".into());
    let mut rhs = String::new();
    for (i, term) in chromosome.terms.iter().enumerate() {
        if Some(i) == target || !chromosome.kept[i] {
            continue;
        }
        let c = chromosome.coefficients[i];
        if !rhs.is_empty() {
            rhs.push_str(if c >= 0.0 { " + " } else { " - " });
            rhs.push_str(&format!("{:.6}·{}", c.abs(), term.render(pool)));
        } else {
            rhs.push_str(&format!("{:.6}·{}", c, term.render(pool)));
        }
    }
    if rhs.is_empty() {
        rhs.push('0');
    }
    format!("{lhs} = {rhs}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{build_uniform_grid, Field};
    use crate::knowledge::{smooth_and_normalize, GuessSource};
    use crate::tokens::{build_token_pool, enumerate_term_space, violates_rules, PoolConfig};
    use std::sync::Arc;

    fn advection_setup() -> (EvalContext, TermSpace) {
        // u = x / (1 + t) solves u_t = −u·u_x exactly.
        let grid = Arc::new(build_uniform_grid(&[(0.0, 1.0), (0.5, 1.5)], &[41, 41]).unwrap());
        let field = Field::from_fn(grid, "u", |c| c[1] / (1.0 + c[0])).unwrap();
        let pool = build_token_pool(&PoolConfig::new(vec![1, 2])).unwrap();
        let ctx = EvalContext::new(&field, &pool).unwrap();
        let space = enumerate_term_space(&pool, 2).unwrap();
        (ctx, space)
    }

    fn config(mode: Mode, seed: u64) -> EvolutionConfig {
        EvolutionConfig {
            population_size: 6,
            epochs: 4,
            n_terms_max: 3,
            t_max: 2,
            crossover_rate: 0.8,
            mutation_term_rate: 0.3,
            mutation_token_rate: 0.3,
            mode,
            seed,
            mf: MixingFactor::DEFAULT,
        }
    }

    #[test]
    fn init_population_is_valid_and_deterministic() {
        let (ctx, space) = advection_setup();
        let engine = Engine::new(&ctx, &space, config(Mode::Classical, 7), FitParams::default(), None)
            .unwrap();
        let pop = engine.init_population().unwrap();
        assert_eq!(pop.len(), 6);
        for c in &pop {
            assert!(c.len() >= 2 && c.len() <= 3);
            c.check_invariants().unwrap();
            assert!(c.fitness.is_some());
            for (i, t) in c.terms.iter().enumerate() {
                let mut others = c.clone();
                others.terms.remove(i);
                others.coefficients.remove(i);
                others.kept.remove(i);
                assert!(!violates_rules(t, &others) || others.contains_term(t) == false);
            }
        }
        let pop2 = engine.init_population().unwrap();
        for (a, b) in pop.iter().zip(&pop2) {
            assert_eq!(a.terms, b.terms);
            assert_eq!(a.fitness, b.fitness);
        }
    }

    #[test]
    fn crossover_of_identical_parents_returns_parents() {
        let (ctx, space) = advection_setup();
        drop((ctx, space));
        // Space restricted to exactly the shared terms: every swap violates
        // the duplicate rule and resampling cannot find a legal term, so the
        // offspring are parent copies.
        let pool = build_token_pool(&PoolConfig::new(vec![1, 2])).unwrap();
        let full = enumerate_term_space(&pool, 2).unwrap();
        let terms = full.terms()[..3].to_vec();
        let shared = crate::tokens::term_space_from_terms(terms.clone());
        let mut a = Chromosome::new(terms.clone()).unwrap();
        let mut b = Chromosome::new(terms).unwrap();
        a.fitness = Some(1.0);
        b.fitness = Some(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ca, cb) = crossover_classical(&a, &b, &shared, &mut rng);
        assert_eq!(ca.terms, a.terms);
        assert_eq!(cb.terms, b.terms);
    }

    #[test]
    fn crossover_donor_index_is_uniform() {
        let (ctx, space) = advection_setup();
        drop(ctx);
        let terms_a = space.terms()[..3].to_vec();
        let terms_b = space.terms()[5..8].to_vec();
        let mut a = Chromosome::new(terms_a.clone()).unwrap();
        let mut b = Chromosome::new(terms_b).unwrap();
        a.fitness = Some(1.0);
        b.fitness = Some(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 3];
        for _ in 0..1000 {
            let (_, cb) = crossover_classical(&a, &b, &space, &mut rng);
            // The b-child receives one of a's terms; find which one.
            for (i, t) in terms_a.iter().enumerate() {
                if cb.contains_term(t) {
                    counts[i] += 1;
                }
            }
        }
        // 1000 trials, p = 1/3: 3σ ≈ 3·√(1000·(1/3)(2/3)) ≈ 45.
        let expected = 1000.0 / 3.0;
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() < 45.0,
                "index {i} selected {c} times (expected ≈ {expected})"
            );
        }
    }

    #[test]
    fn modified_crossover_follows_receiver_weights() {
        let (ctx, space) = advection_setup();
        drop(ctx);
        let terms_a = space.terms()[..3].to_vec();
        let terms_b = space.terms()[5..8].to_vec();
        let mut a = Chromosome::new(terms_a.clone()).unwrap();
        let mut b = Chromosome::new(terms_b.clone()).unwrap();
        a.fitness = Some(1.0);
        b.fitness = Some(1.0);

        // dist_b puts all weight on one of a's terms: that term is always
        // donated to b.
        let db = smooth_and_normalize(
            vec![terms_a[1].clone()],
            &[1.0],
            MixingFactor::new(5.0).unwrap(),
        )
        .unwrap();
        let da = crate::knowledge::ImportanceDistribution::uniform(terms_a.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (_, cb) = crossover_modified(&a, &b, &da, &db, &space, &mut rng);
            assert!(cb.contains_term(&terms_a[1]));
        }

        // Weighted donation frequencies match (0.7, 0.2, 0.1) within 3σ.
        let db = crate::knowledge::ImportanceDistribution::from_parts(
            terms_a.clone(),
            vec![0.7, 0.2, 0.1],
        );
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            let (_, cb) = crossover_modified(&a, &b, &da, &db, &space, &mut rng);
            for (i, t) in terms_a.iter().enumerate() {
                if cb.contains_term(t) {
                    counts[i] += 1;
                }
            }
        }
        for (i, (&c, &p)) in counts.iter().zip(&[0.7, 0.2, 0.1]).enumerate() {
            let expected = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "weight {i}: {c} vs {expected} ± {sigma}"
            );
        }
    }

    #[test]
    fn mutation_with_zero_rates_is_identity() {
        let (ctx, space) = advection_setup();
        let mut cfg = config(Mode::Classical, 5);
        cfg.mutation_term_rate = 0.0;
        cfg.mutation_token_rate = 0.0;
        let engine = Engine::new(&ctx, &space, cfg.clone(), FitParams::default(), None).unwrap();
        let mut pop = engine.init_population().unwrap();
        let original = pop[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mutated = mutate_structure(&mut pop[0], &ctx, &space, None, &cfg, &mut rng);
        assert_eq!(mutated.terms, original.terms);
        assert_eq!(mutated.fitness, original.fitness);
    }

    #[test]
    fn modified_term_mutation_follows_distribution() {
        let (ctx, space) = advection_setup();
        let cfg = {
            let mut c = config(Mode::Modified, 5);
            c.mutation_term_rate = 1.0;
            c.mutation_token_rate = 0.0;
            c
        };
        let pool = ctx.pool();
        let uxx = pool.find("d^2u/dx^2").unwrap();
        let target_term = Term::new(pool, vec![uxx]).unwrap();
        // Distribution concentrated on {u_xx}; the alternative {du/dx} does
        // not collide with the chromosome, so no rule-resampling kicks in.
        let ux = pool.find("du/dx").unwrap();
        let alt_term = Term::new(pool, vec![ux]).unwrap();
        let dist = crate::knowledge::ImportanceDistribution::from_parts(
            vec![target_term.clone(), alt_term],
            vec![0.95, 0.05],
        );
        let ut = pool.find("du/dt").unwrap();
        let u = pool.find("u").unwrap();
        let mut base = Chromosome::new(vec![
            Term::new(pool, vec![ut]).unwrap(),
            Term::new(pool, vec![u]).unwrap(),
        ])
        .unwrap();
        base.target_index = Some(0);
        base.fitness = Some(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut hits = 0usize;
        let n = 1000;
        for _ in 0..n {
            let m = mutate_structure(&base, &ctx, &space, Some(&dist), &cfg, &mut rng);
            m.check_invariants().unwrap();
            if m.contains_term(&target_term) {
                hits += 1;
            }
        }
        // p = 0.95; 3σ ≈ 3·√(1000·0.95·0.05) ≈ 21.
        assert!(
            (hits as f64 - 950.0).abs() < 21.0,
            "{hits} mutations contained u_xx (expected ≈ 950)"
        );
    }

    #[test]
    fn evolve_zero_epochs_returns_fitted_initial_population() {
        let (ctx, space) = advection_setup();
        let mut cfg = config(Mode::Classical, 9);
        cfg.epochs = 0;
        let engine = Engine::new(&ctx, &space, cfg, FitParams::default(), None).unwrap();
        let pop = engine.evolve().unwrap();
        assert_eq!(pop.len(), 6);
        assert!(pop.iter().all(|c| c.fitness.is_some()));
        // Sorted descending.
        for w in pop.windows(2) {
            assert!(w[0].fitness.unwrap() >= w[1].fitness.unwrap());
        }
    }

    #[test]
    fn evolve_is_seed_deterministic() {
        let (ctx, space) = advection_setup();
        let engine =
            Engine::new(&ctx, &space, config(Mode::Classical, 42), FitParams::default(), None).unwrap();
        let a = engine.evolve().unwrap();
        let b = engine.evolve().unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.terms, y.terms);
            assert_eq!(x.fitness, y.fitness);
            assert_eq!(x.coefficients, y.coefficients);
        }
    }

    #[test]
    fn elitism_keeps_max_fitness_non_decreasing() {
        let (ctx, space) = advection_setup();
        let engine =
            Engine::new(&ctx, &space, config(Mode::Classical, 3), FitParams::default(), None).unwrap();
        let mut pop = engine.init_population().unwrap();
        let mut best = pop[argmax_fitness(&pop)].fitness.unwrap();
        for gen in 0..6 {
            pop = engine.step(gen, pop).unwrap();
            for c in &pop {
                c.check_invariants().unwrap();
                assert!(c.len() <= 3);
            }
            let now = pop[argmax_fitness(&pop)].fitness.unwrap();
            assert!(now >= best - 1e-12, "fitness dropped: {now} < {best}");
            best = now;
        }
    }

    #[test]
    fn evolve_discovers_exact_advection_structure() {
        // The exact-data smoke test: u_t = −u·u_x must be found by a small
        // classical run in a majority of seeds.
        let (ctx, space) = advection_setup();
        let pool = ctx.pool();
        let ut = Term::new(pool, vec![pool.find("du/dt").unwrap()]).unwrap();
        let uux = Term::new(
            pool,
            vec![pool.find("u").unwrap(), pool.find("du/dx").unwrap()],
        )
        .unwrap();
        let mut wins = 0;
        for seed in 0..5u64 {
            let mut cfg = config(Mode::Classical, seed);
            cfg.epochs = 6;
            cfg.population_size = 8;
            let engine = Engine::new(&ctx, &space, cfg, FitParams::default(), None).unwrap();
            let pop = engine.evolve().unwrap();
            let hit = pop.iter().any(|c| {
                let kept: Vec<&Term> = c
                    .terms
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| c.kept[*i])
                    .map(|(_, t)| t)
                    .collect();
                kept.len() == 2 && kept.contains(&&ut) && kept.contains(&&uux)
            });
            if hit {
                wins += 1;
            }
        }
        assert!(wins >= 3, "structure found in only {wins}/5 runs");
    }

    #[test]
    fn modified_mode_requires_guess() {
        let (ctx, space) = advection_setup();
        assert!(
            Engine::new(&ctx, &space, config(Mode::Modified, 1), FitParams::default(), None).is_err()
        );
        let guess = InitialGuess::empty(GuessSource::Manual);
        let engine =
            Engine::new(&ctx, &space, config(Mode::Modified, 1), FitParams::default(), Some(&guess))
                .unwrap();
        let pop = engine.evolve().unwrap();
        assert!(!pop.is_empty());
    }
}
