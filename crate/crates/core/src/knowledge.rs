//! Term-importance distributions: mapping an initial guess onto the term
//! space, per-individual restriction, ratio-capped smoothing, KL-based
//! mixing-factor tuning and categorical sampling.
//!
//! The smoothing step mixes the coefficient vector with its average so that
//! the max/min ratio of the result equals the mixing factor exactly whenever
//! the input ratio exceeded it, preserving the relative order of entries.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokens::{Chromosome, Term, TermSpace, TokenId, TokenPool};

/// Where an initial guess came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuessSource {
    Symnet,
    Manual,
    File,
}

/// Coefficient map over polynomial terms, keyed by sorted token-label
/// multisets. An empty key is a constant term.
#[derive(Debug, Clone)]
pub struct InitialGuess {
    entries: BTreeMap<Vec<String>, f64>,
    pub source: GuessSource,
    /// Balance-term label when the guess came out of a training run.
    pub lhs: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GuessEntryJson {
    factors: Vec<String>,
    coefficient: f64,
}

impl InitialGuess {
    pub fn new(entries: impl IntoIterator<Item = (Vec<String>, f64)>, source: GuessSource) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (mut labels, coef) in entries {
            if !coef.is_finite() {
                return Err(Error::Numeric(format!("non-finite guess coefficient for {labels:?}")));
            }
            labels.sort();
            *map.entry(labels).or_insert(0.0) += coef;
        }
        Ok(InitialGuess { entries: map, source, lhs: None })
    }

    pub fn empty(source: GuessSource) -> Self {
        InitialGuess { entries: BTreeMap::new(), source, lhs: None }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<String>, f64)> {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn coefficient(&self, labels: &[String]) -> Option<f64> {
        self.entries.get(labels).copied()
    }

    /// Terms whose coefficient magnitude reaches `threshold`.
    pub fn present_terms(&self, threshold: f64) -> Vec<Vec<String>> {
        self.entries
            .iter()
            .filter(|(_, &c)| c.abs() >= threshold)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<GuessEntryJson> = self
            .entries
            .iter()
            .map(|(k, &v)| GuessEntryJson { factors: k.clone(), coefficient: v })
            .collect();
        Ok(serde_json::to_string_pretty(&rows)?)
    }

    pub fn from_json(text: &str, source: GuessSource) -> Result<Self> {
        let rows: Vec<GuessEntryJson> = serde_json::from_str(text)?;
        InitialGuess::new(rows.into_iter().map(|r| (r.factors, r.coefficient)), source)
    }
}

/// Trust knob capping the max/min ratio of smoothed weights; valid range
/// [1.0, 5.0], default 2.4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingFactor(f64);

impl MixingFactor {
    pub const DEFAULT: MixingFactor = MixingFactor(2.4);

    pub fn new(value: f64) -> Result<Self> {
        if !(1.0..=5.0).contains(&value) {
            return Err(Error::Config(format!("mixing factor {value} outside [1.0, 5.0]")));
        }
        Ok(MixingFactor(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl Default for MixingFactor {
    fn default() -> Self {
        MixingFactor::DEFAULT
    }
}

/// Probability weights over a (sub-)term-space.
#[derive(Debug, Clone)]
pub struct ImportanceDistribution {
    support: Vec<Term>,
    probabilities: Vec<f64>,
    smoothed: bool,
    mf: f64,
}

impl ImportanceDistribution {
    pub fn support(&self) -> &[Term] {
        &self.support
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Whether the ratio-capping branch fired.
    pub fn smoothed(&self) -> bool {
        self.smoothed
    }

    pub fn mixing_factor(&self) -> f64 {
        self.mf
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Builds a distribution from explicit probabilities (e.g. an expertly
    /// chosen preference vector). Probabilities must be non-negative and sum
    /// to 1 within 1e-9.
    pub fn from_parts(support: Vec<Term>, probabilities: Vec<f64>) -> Self {
        assert_eq!(support.len(), probabilities.len());
        assert!(probabilities.iter().all(|&p| p >= 0.0));
        let sum: f64 = probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "probabilities sum to {sum}");
        ImportanceDistribution { support, probabilities, smoothed: false, mf: 1.0 }
    }

    /// Uniform distribution over the given terms.
    pub fn uniform(support: Vec<Term>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::NoCandidates("uniform distribution over empty support".into()));
        }
        let n = support.len();
        Ok(ImportanceDistribution {
            support,
            probabilities: vec![1.0 / n as f64; n],
            smoothed: false,
            mf: 1.0,
        })
    }

    /// Probability of a term, by canonical equality; 0 when absent.
    pub fn probability_of(&self, term: &Term) -> f64 {
        self.support
            .iter()
            .position(|t| t == term)
            .map(|i| self.probabilities[i])
            .unwrap_or(0.0)
    }

    /// Categorical draw by inverse CDF on one uniform variate.
    pub fn sample_term<R: Rng>(&self, rng: &mut R) -> Result<&Term> {
        if self.support.is_empty() {
            return Err(Error::NoCandidates("sampling from empty support".into()));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (term, &p) in self.support.iter().zip(&self.probabilities) {
            acc += p;
            if u < acc {
                return Ok(term);
            }
        }
        Ok(self.support.last().expect("non-empty support"))
    }

    /// Marginal token weights: the summed probability of the terms
    /// containing each token, renormalized.
    pub fn token_marginals(&self) -> Vec<(TokenId, f64)> {
        let mut acc: BTreeMap<TokenId, f64> = BTreeMap::new();
        for (term, &p) in self.support.iter().zip(&self.probabilities) {
            let mut seen: Vec<TokenId> = term.factors().to_vec();
            seen.dedup();
            for id in seen {
                *acc.entry(id).or_insert(0.0) += p;
            }
        }
        let total: f64 = acc.values().sum();
        if total <= 0.0 {
            return acc.into_iter().map(|(id, _)| (id, 0.0)).collect();
        }
        acc.into_iter().map(|(id, w)| (id, w / total)).collect()
    }

    /// Categorical token draw from the marginals.
    pub fn sample_token<R: Rng>(&self, rng: &mut R) -> Result<TokenId> {
        let marginals = self.token_marginals();
        if marginals.is_empty() {
            return Err(Error::NoCandidates("sampling token from empty support".into()));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(id, p) in &marginals {
            acc += p;
            if u < acc {
                return Ok(id);
            }
        }
        Ok(marginals.last().expect("non-empty marginals").0)
    }
}

/// Ratio-capped smoothing of a positive coefficient vector. Returns the
/// pre-normalization smoothed values and whether the capping branch fired.
///
/// When `max/min > mf` the vector is mixed with its average:
/// `min_max_f = mf·min − max`, `smooth_f = min_max_f / (min_max_f − (mf−1)·mean)`,
/// `smoothed = (1 − smooth_f)·coefs + smooth_f·mean`, which makes the output
/// ratio exactly `mf` while preserving relative order.
pub fn smoothed_coefficients(coefs: &[f64], mf: MixingFactor) -> Result<(Vec<f64>, bool)> {
    if coefs.is_empty() {
        return Err(Error::NoCandidates("empty coefficient vector".into()));
    }
    if coefs.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
        return Err(Error::Numeric("smoothing requires strictly positive finite coefficients".into()));
    }
    let abs: Vec<f64> = coefs.iter().map(|c| c.abs()).collect();
    let max = abs.iter().cloned().fold(f64::MIN, f64::max);
    let min = abs.iter().cloned().fold(f64::MAX, f64::min);
    let mf_v = mf.value();
    if max / min > mf_v {
        let mean = abs.iter().sum::<f64>() / abs.len() as f64;
        let min_max_f = mf_v * min - max;
        let smooth_f = min_max_f / (min_max_f - (mf_v - 1.0) * mean);
        let smoothed: Vec<f64> = abs.iter().map(|&c| (1.0 - smooth_f) * c + smooth_f * mean).collect();
        Ok((smoothed, true))
    } else {
        Ok((abs, false))
    }
}

/// Smoothing followed by normalization into a distribution over `support`.
pub fn smooth_and_normalize(support: Vec<Term>, coefs: &[f64], mf: MixingFactor) -> Result<ImportanceDistribution> {
    if support.len() != coefs.len() {
        return Err(Error::Config(format!(
            "support length {} does not match coefficient length {}",
            support.len(),
            coefs.len()
        )));
    }
    let (smoothed, fired) = smoothed_coefficients(coefs, mf)?;
    let total: f64 = smoothed.iter().sum();
    let probabilities: Vec<f64> = smoothed.iter().map(|v| v / total).collect();
    Ok(ImportanceDistribution { support, probabilities, smoothed: fired, mf: mf.value() })
}

/// Floor applied to space terms the guess does not mention, relative to the
/// largest mapped weight. Keeps every term obtainable.
const UNMATCHED_FLOOR: f64 = 1e-8;

/// Maps the guess onto a term space: per space term, the summed |coefficient|
/// of matching guess entries; unmatched terms get a small positive floor.
pub fn map_guess_to_space(guess: &InitialGuess, space: &TermSpace, pool: &TokenPool) -> Vec<f64> {
    let mut weights: Vec<f64> = space
        .terms()
        .iter()
        .map(|term| {
            let labels = term.labels(pool);
            guess
                .entries()
                .filter(|(k, _)| **k == labels)
                .map(|(_, c)| c.abs())
                .sum()
        })
        .collect();
    let max = weights.iter().cloned().fold(0.0f64, f64::max);
    let floor = UNMATCHED_FLOOR * if max > 0.0 { max } else { 1.0 };
    for w in &mut weights {
        if *w < floor {
            *w = floor;
        }
    }
    weights
}

/// Removes the individual's own terms (and its restricted set) from the
/// space, slicing the weights accordingly.
pub fn restrict_for_individual(
    weights: &[f64],
    space: &TermSpace,
    chromosome: &Chromosome,
) -> Result<(Vec<Term>, Vec<f64>)> {
    if weights.len() != space.len() {
        return Err(Error::Config("weights not aligned with space".into()));
    }
    let mut sub_terms = Vec::new();
    let mut sub_weights = Vec::new();
    for (term, &w) in space.terms().iter().zip(weights) {
        if chromosome.contains_term(term) || chromosome.restricted.contains(term.key()) {
            continue;
        }
        sub_terms.push(term.clone());
        sub_weights.push(w);
    }
    if sub_terms.is_empty() {
        return Err(Error::NoCandidates(
            "individual already holds every admissible term".into(),
        ));
    }
    Ok((sub_terms, sub_weights))
}

/// Full per-individual pipeline: map → restrict → smooth-and-normalize.
pub fn build_individual_distribution(
    guess: &InitialGuess,
    space: &TermSpace,
    pool: &TokenPool,
    chromosome: &Chromosome,
    mf: MixingFactor,
) -> Result<ImportanceDistribution> {
    let weights = map_guess_to_space(guess, space, pool);
    let (sub_terms, sub_weights) = restrict_for_individual(&weights, space, chromosome)?;
    smooth_and_normalize(sub_terms, &sub_weights, mf)
}

/// `D_KL(P ‖ Q)` for strictly positive q.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

/// Result of the mixing-factor sweep.
#[derive(Debug, Clone)]
pub struct TunedMixingFactor {
    pub mf: MixingFactor,
    /// (mf, |KL|) over the candidate grid.
    pub curve: Vec<(f64, f64)>,
}

/// Candidate grid {1.0, 1.1, …, 5.0}.
pub fn mf_candidate_grid() -> Vec<f64> {
    (10..=50).map(|i| i as f64 / 10.0).collect()
}

/// Picks the mixing factor whose smoothed distribution is KL-closest to an
/// ideal distribution putting `ideal_weight` on the `k_expected` largest
/// mapped-weight terms and 1 on the rest.
///
/// Degenerate (all-equal) mapped weights return the 2.4 default.
pub fn tune_mixing_factor(
    guess: &InitialGuess,
    space: &TermSpace,
    pool: &TokenPool,
    k_expected: usize,
    ideal_weight: f64,
) -> Result<TunedMixingFactor> {
    if k_expected < 1 {
        return Err(Error::Config("k_expected must be at least 1".into()));
    }
    if ideal_weight <= 0.0 {
        return Err(Error::Config("ideal weight must be positive".into()));
    }
    let weights = map_guess_to_space(guess, space, pool);
    let max = weights.iter().cloned().fold(f64::MIN, f64::max);
    let min = weights.iter().cloned().fold(f64::MAX, f64::min);
    if max / min < 1.0 + 1e-12 {
        return Ok(TunedMixingFactor { mf: MixingFactor::DEFAULT, curve: Vec::new() });
    }
    // Ideal P: top-k terms by mapped weight get `ideal_weight`, rest get 1.
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).expect("finite").then(a.cmp(&b)));
    let mut ideal = vec![1.0; weights.len()];
    for &i in order.iter().take(k_expected) {
        ideal[i] = ideal_weight;
    }
    let total: f64 = ideal.iter().sum();
    for v in &mut ideal {
        *v /= total;
    }

    let mut curve = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for mf_v in mf_candidate_grid() {
        let mf = MixingFactor::new(mf_v)?;
        let (smoothed, _) = smoothed_coefficients(&weights, mf)?;
        let sum: f64 = smoothed.iter().sum();
        let q: Vec<f64> = smoothed.iter().map(|v| v / sum).collect();
        let kl = kl_divergence(&ideal, &q).abs();
        curve.push((mf_v, kl));
        if best.map(|(_, b)| kl < b).unwrap_or(true) {
            best = Some((mf_v, kl));
        }
    }
    let (mf_v, _) = best.expect("non-empty candidate grid");
    Ok(TunedMixingFactor { mf: MixingFactor::new(mf_v)?, curve })
}
