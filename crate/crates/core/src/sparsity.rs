//! Coefficient fitting and fitness evaluation for a chromosome.
//!
//! A randomly selected target term is regressed on the remaining terms with
//! LASSO (coordinate descent on standardized columns), small coefficients
//! are pruned, the survivors are refitted by ordinary least squares to
//! remove shrinkage bias, and the fitness is the reciprocal of the residual
//! RMS over the interior grid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{least_squares, rms};
use crate::tokens::{Chromosome, EvalContext, Term, TokenKind};

/// Fitting hyperparameters with the crate defaults.
#[derive(Debug, Clone)]
pub struct FitParams {
    /// L1 penalty applied after column standardization.
    pub lambda: f64,
    /// Minimum absolute coefficient below which a term is removed.
    pub prune_threshold: f64,
    /// Fitness cap guarding the exact-fit division.
    pub f_max: f64,
    /// Duality-gap tolerance for coordinate descent, relative to ‖y‖².
    /// The contract requires 1e-6; the default is far tighter so fitted
    /// coefficients agree with direct solves to ~1e-5.
    pub cd_tolerance: f64,
    /// Coordinate-descent sweep budget.
    pub max_sweeps: usize,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            lambda: 1e-3,
            prune_threshold: 1e-2,
            f_max: 1e12,
            cd_tolerance: 1e-12,
            max_sweeps: 10_000,
        }
    }
}

/// Outcome of fitting one chromosome. All vectors align with the
/// chromosome's term list; the target slot carries coefficient −1.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub kept: Vec<bool>,
    pub residual_norm: f64,
    pub fitness: f64,
    /// Trig frequencies chosen by the discrete search, per term.
    pub trig_params: Vec<Option<Vec<f64>>>,
}

/// Uniformly selects the target (balance) term index.
pub fn select_target<R: Rng>(chromosome: &Chromosome, rng: &mut R) -> Result<usize> {
    if chromosome.len() < 2 {
        return Err(Error::Structure(
            "target selection needs at least two terms".into(),
        ));
    }
    Ok(rng.random_range(0..chromosome.len()))
}

/// Soft-thresholding operator.
fn soft(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// LASSO `argmin ½‖y − Xc‖² + λ‖c‖₁` by cyclic coordinate descent.
///
/// Columns are standardized internally (zero mean, unit L2 norm); the target
/// is centered. Returned coefficients are on the original column scale.
/// Converges when the duality gap drops below `tol · ‖y_centered‖²`.
pub fn lasso_fit(features: &[Vec<f64>], target: &[f64], lambda: f64, params: &FitParams) -> Result<Vec<f64>> {
    if lambda <= 0.0 {
        return Err(Error::Config(format!("lasso lambda {lambda} must be positive")));
    }
    let n = target.len();
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite target entry".into()));
    }
    for (j, col) in features.iter().enumerate() {
        if col.len() != n {
            return Err(Error::Config(format!("feature column {j} length mismatch")));
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry in feature column {j}")));
        }
    }
    let p = features.len();
    if p == 0 || n == 0 {
        return Ok(vec![0.0; p]);
    }

    // Standardize: centered, unit-norm columns; centered target.
    let y_mean = target.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = target.iter().map(|v| v - y_mean).collect();
    let y_norm2: f64 = y.iter().map(|v| v * v).sum();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut scales = vec![0.0f64; p];
    for (j, col) in features.iter().enumerate() {
        let m = col.iter().sum::<f64>() / n as f64;
        let centered: Vec<f64> = col.iter().map(|v| v - m).collect();
        let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
        scales[j] = norm;
        if norm > 1e-12 {
            cols.push(centered.iter().map(|v| v / norm).collect());
        } else {
            // Constant column: carries no signal once centered.
            cols.push(vec![0.0; n]);
        }
    }

    let mut c = vec![0.0f64; p];
    let mut resid = y.clone();
    let gap_tol = params.cd_tolerance * y_norm2.max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _sweep in 0..params.max_sweeps {
        for j in 0..p {
            if scales[j] <= 1e-12 {
                continue;
            }
            let old = c[j];
            // Unit-norm column: the exact coordinate minimizer is one
            // soft-threshold step.
            let corr: f64 = cols[j].iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() + old;
            let new = soft(corr, lambda);
            if new != old {
                let delta = new - old;
                for (r, x) in resid.iter_mut().zip(&cols[j]) {
                    *r -= delta * x;
                }
                c[j] = new;
            }
        }
        // Duality gap: θ = r / max(1, ‖Xᵀr‖∞ / λ) is dual feasible.
        let mut xtr_inf = 0.0f64;
        for (j, col) in cols.iter().enumerate() {
            if scales[j] <= 1e-12 {
                continue;
            }
            let v: f64 = col.iter().zip(&resid).map(|(x, r)| x * r).sum();
            xtr_inf = xtr_inf.max(v.abs());
        }
        let scale = (xtr_inf / lambda).max(1.0);
        let r_norm2: f64 = resid.iter().map(|r| r * r).sum();
        let l1: f64 = c.iter().map(|v| v.abs()).sum();
        let primal = 0.5 * r_norm2 + lambda * l1;
        let dual_dist: f64 = y
            .iter()
            .zip(&resid)
            .map(|(yi, ri)| {
                let d = yi - ri / scale;
                d * d
            })
            .sum();
        let dual = 0.5 * y_norm2 - 0.5 * dual_dist;
        if primal - dual <= gap_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "coordinate descent did not reach gap tolerance in {} sweeps",
            params.max_sweeps
        )));
    }
    Ok(c
        .iter()
        .zip(&scales)
        .map(|(&cj, &s)| if s > 1e-12 { cj / s } else { 0.0 })
        .collect())
}

fn trig_candidate_combos(candidates: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in candidates {
        let mut next = Vec::with_capacity(combos.len() * axis.len());
        for combo in &combos {
            for &v in axis {
                let mut c = combo.clone();
                c.push(v);
                next.push(c);
            }
        }
        combos = next;
    }
    combos
}

struct InnerFit {
    coefficients: Vec<f64>,
    kept: Vec<bool>,
    residual_norm: f64,
    fitness: f64,
}

/// LASSO + prune + OLS-refit on fully resolved terms.
fn fit_resolved(terms: &[Term], target: usize, ctx: &EvalContext, params: &FitParams) -> Result<InnerFit> {
    let n_terms = terms.len();
    let y = ctx.interior_column(&terms[target])?;
    let feature_slots: Vec<usize> = (0..n_terms).filter(|&j| j != target).collect();
    let columns: Vec<std::sync::Arc<Vec<f64>>> = feature_slots
        .iter()
        .map(|&j| ctx.interior_column(&terms[j]))
        .collect::<Result<_>>()?;
    let col_refs: Vec<Vec<f64>> = columns.iter().map(|c| c.as_ref().clone()).collect();
    let lasso = lasso_fit(&col_refs, &y, params.lambda, params)?;

    // Prune, refit by OLS, and re-prune until stable. The refit removes the
    // LASSO shrinkage bias; iterating keeps every kept coefficient above the
    // threshold.
    let mut active: Vec<usize> = (0..feature_slots.len())
        .filter(|&k| lasso[k].abs() >= params.prune_threshold)
        .collect();
    let mut coef_active: Vec<f64>;
    loop {
        if active.is_empty() {
            let mut kept = vec![false; n_terms];
            kept[target] = true;
            let mut coefficients = vec![0.0; n_terms];
            coefficients[target] = -1.0;
            return Ok(InnerFit { coefficients, kept, residual_norm: rms(&y), fitness: 0.0 });
        }
        let cols_active: Vec<Vec<f64>> = active.iter().map(|&k| col_refs[k].clone()).collect();
        match least_squares(&cols_active, &y) {
            Ok(c) => {
                coef_active = c;
                let worst = coef_active
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.abs() < params.prune_threshold)
                    .min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite"))
                    .map(|(i, _)| i);
                match worst {
                    Some(i) => {
                        active.remove(i);
                    }
                    None => break,
                }
            }
            Err(_) => {
                // Collinear survivors: drop the last active column and retry.
                active.pop();
            }
        }
    }

    let mut residual: Vec<f64> = y.as_ref().clone();
    for (pos, &k) in active.iter().enumerate() {
        let c = coef_active[pos];
        for (r, x) in residual.iter_mut().zip(&col_refs[k]) {
            *r -= c * x;
        }
    }
    let residual_norm = rms(&residual);
    let fitness = if residual_norm > 1.0 / params.f_max {
        (1.0 / residual_norm).min(params.f_max)
    } else {
        params.f_max
    };

    let mut coefficients = vec![0.0; n_terms];
    let mut kept = vec![false; n_terms];
    coefficients[target] = -1.0;
    kept[target] = true;
    for (pos, &k) in active.iter().enumerate() {
        let slot = feature_slots[k];
        coefficients[slot] = coef_active[pos];
        kept[slot] = true;
    }
    Ok(InnerFit { coefficients, kept, residual_norm, fitness })
}

/// Fits a chromosome whose target has been selected. Terms holding a trig
/// token with unresolved frequencies are optimized by a discrete search over
/// the candidate grid, one term at a time, keeping the best-fitness combo.
pub fn fit_chromosome(chromosome: &Chromosome, ctx: &EvalContext, params: &FitParams) -> Result<FitResult> {
    let target = chromosome
        .target_index
        .ok_or_else(|| Error::Structure("fit requires a selected target".into()))?;
    if chromosome.len() < 2 {
        return Err(Error::Structure("fit requires at least two terms".into()));
    }
    let mut terms: Vec<Term> = chromosome.terms.clone();

    for slot in 0..terms.len() {
        let trig_id = terms[slot].trig_factor(ctx.pool());
        let Some(id) = trig_id else { continue };
        if terms[slot].trig_params().is_some() {
            continue;
        }
        let TokenKind::Trig { candidates } = ctx.pool().token(id).kind() else {
            continue;
        };
        let combos = trig_candidate_combos(candidates);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for combo in combos {
            let mut trial = terms.clone();
            trial[slot] = trial[slot].clone().with_trig_params(combo.clone());
            let fit = fit_resolved(&trial, target, ctx, params)?;
            if best.as_ref().map(|(f, _)| fit.fitness > *f).unwrap_or(true) {
                best = Some((fit.fitness, combo));
            }
        }
        let (_, combo) = best.expect("at least one trig candidate combo");
        terms[slot] = terms[slot].clone().with_trig_params(combo);
    }

    let inner = fit_resolved(&terms, target, ctx, params)?;
    Ok(FitResult {
        coefficients: inner.coefficients,
        kept: inner.kept,
        residual_norm: inner.residual_norm,
        fitness: inner.fitness,
        trig_params: terms.iter().map(|t| t.trig_params().map(|p| p.to_vec())).collect(),
    })
}

/// Writes a fit back into the chromosome.
pub fn apply_fit(chromosome: &mut Chromosome, fit: &FitResult) {
    chromosome.coefficients = fit.coefficients.clone();
    chromosome.kept = fit.kept.clone();
    chromosome.fitness = Some(fit.fitness);
    for (term, params) in chromosome.terms.iter_mut().zip(&fit.trig_params) {
        if let Some(p) = params {
            *term = term.clone().with_trig_params(p.clone());
        }
    }
}
