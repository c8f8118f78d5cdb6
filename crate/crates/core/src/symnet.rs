//! Initial-guess generation with a symbolic polynomial network.
//!
//! Each hidden layer appends the product of two affine combinations of the
//! running feature vector, so a k-layer network represents polynomials of
//! total degree k + 1 over its inputs. The network is trained per candidate
//! balance term by full-batch gradient descent with momentum on a data term
//! plus a Huber regularizer, and the trained weights are expanded into an
//! exact coefficient map over token-label monomials.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::knowledge::{GuessSource, InitialGuess};
use crate::numerics::derive_seed;
use crate::tokens::{EvalContext, TokenId, TokenPool};

/// Regularization weights tried per candidate balance term.
pub const LAMBDA_CANDIDATES: [f64; 2] = [1e-3, 1e-7];

#[derive(Debug, Clone)]
pub struct TrainSpec {
    /// Huber regularization weight; one of [`LAMBDA_CANDIDATES`] in the
    /// full guess pipeline.
    pub lambda: f64,
    /// Huber threshold.
    pub huber_s: f64,
    pub hidden_layers: usize,
    pub max_iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            lambda: 1e-3,
            huber_s: 1e-3,
            hidden_layers: 2,
            max_iters: 5000,
            learning_rate: 1e-2,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Network dimensions plus the flat parameter vector. Layer i multiplies an
/// affine map over the first `n_inputs + i` features by an affine map over
/// the raw inputs, which raises the representable degree by exactly one per
/// layer (k layers ⇒ degree k + 1). The readout is affine over all features.
#[derive(Debug, Clone)]
pub struct SymNetModel {
    input_labels: Vec<String>,
    n_inputs: usize,
    hidden_layers: usize,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    /// Width of the first map (current feature count).
    width: usize,
    /// Width of the second map (inputs only).
    in_width: usize,
}

impl SymNetModel {
    pub fn new(input_labels: Vec<String>, hidden_layers: usize) -> Self {
        let n = input_labels.len();
        let n_params = Self::param_count(n, hidden_layers);
        SymNetModel { input_labels, n_inputs: n, hidden_layers, params: vec![0.0; n_params] }
    }

    pub fn param_count(n_inputs: usize, hidden_layers: usize) -> usize {
        let mut total = 0;
        for i in 0..hidden_layers {
            total += (n_inputs + i) + 1 + n_inputs + 1;
        }
        total + (n_inputs + hidden_layers) + 1
    }

    pub fn input_labels(&self) -> &[String] {
        &self.input_labels
    }

    pub fn hidden_layers(&self) -> usize {
        self.hidden_layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offsets(&self, layer: usize) -> LayerOffsets {
        let n = self.n_inputs;
        let mut off = 0;
        for i in 0..layer {
            off += (n + i) + 1 + n + 1;
        }
        let width = n + layer;
        LayerOffsets {
            w1: off,
            b1: off + width,
            w2: off + width + 1,
            b2: off + width + 1 + n,
            width,
            in_width: n,
        }
    }

    fn readout_offset(&self) -> usize {
        let n = self.n_inputs;
        let mut off = 0;
        for i in 0..self.hidden_layers {
            off += (n + i) + 1 + n + 1;
        }
        off
    }

    /// Forward pass for one sample; optionally records the feature vector
    /// and per-layer (f, g) products for backpropagation.
    fn forward_into(&self, x: &[f64], v: &mut Vec<f64>, fg: Option<&mut Vec<(f64, f64)>>) -> f64 {
        debug_assert_eq!(x.len(), self.n_inputs);
        v.clear();
        v.extend_from_slice(x);
        let mut fg_store = fg;
        for layer in 0..self.hidden_layers {
            let off = self.layer_offsets(layer);
            let mut f = self.params[off.b1];
            for j in 0..off.width {
                f += self.params[off.w1 + j] * v[j];
            }
            let mut g = self.params[off.b2];
            for j in 0..off.in_width {
                g += self.params[off.w2 + j] * v[j];
            }
            if let Some(store) = fg_store.as_deref_mut() {
                store.push((f, g));
            }
            v.push(f * g);
        }
        let ro = self.readout_offset();
        let mut y = self.params[ro + v.len()];
        for (j, &vj) in v.iter().enumerate() {
            y += self.params[ro + j] * vj;
        }
        y
    }

    /// Network output for one sample (inputs in network coordinates).
    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut v = Vec::with_capacity(self.n_inputs + self.hidden_layers);
        self.forward_into(x, &mut v, None)
    }

    /// Accumulates the gradient of `weight · (output − target)²`… more
    /// precisely of `dy_scale · output` where `dy_scale` is the upstream
    /// derivative, into `grad`. Returns the output.
    fn backward_into(
        &self,
        x: &[f64],
        dy_scale: f64,
        grad: &mut [f64],
        v: &mut Vec<f64>,
        fg: &mut Vec<(f64, f64)>,
        dv: &mut Vec<f64>,
    ) -> f64 {
        fg.clear();
        let y = self.forward_into(x, v, Some(fg));
        dv.clear();
        dv.resize(v.len(), 0.0);
        let ro = self.readout_offset();
        for (j, &vj) in v.iter().enumerate() {
            grad[ro + j] += dy_scale * vj;
            dv[j] = dy_scale * self.params[ro + j];
        }
        grad[ro + v.len()] += dy_scale;
        for layer in (0..self.hidden_layers).rev() {
            let off = self.layer_offsets(layer);
            let slot = self.n_inputs + layer;
            let dh = dv[slot];
            let (f, g) = fg[layer];
            let df = dh * g;
            let dg = dh * f;
            for j in 0..off.width {
                grad[off.w1 + j] += df * v[j];
                dv[j] += df * self.params[off.w1 + j];
            }
            for j in 0..off.in_width {
                grad[off.w2 + j] += dg * v[j];
                dv[j] += dg * self.params[off.w2 + j];
            }
            grad[off.b1] += df;
            grad[off.b2] += dg;
        }
        y
    }
}

/// Huber penalty `l1^s`: quadratic inside ±s, absolute outside, C¹ at the
/// knot.
pub fn huber(w: f64, s: f64) -> f64 {
    if w.abs() > s {
        w.abs() - s / 2.0
    } else {
        w * w / (2.0 * s)
    }
}

fn huber_grad(w: f64, s: f64) -> f64 {
    if w.abs() > s {
        w.signum()
    } else {
        w / s
    }
}

/// Mean/deviation standardizer for one variable.
#[derive(Debug, Clone, Copy)]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    fn fit(values: &[f64]) -> Standardizer {
        let mean = crate::numerics::mean(values);
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        let scale = var.sqrt();
        Standardizer { mean, scale: if scale > 1e-300 { scale } else { 1.0 } }
    }

    /// Fits a set of columns jointly: a column whose deviation is vanishing
    /// relative to the largest column is left unscaled, so that extraction
    /// never amplifies numerically-dead features.
    fn fit_columns(columns: &[Vec<f64>]) -> Vec<Standardizer> {
        let mut stats: Vec<Standardizer> = columns.iter().map(|c| Standardizer::fit(c)).collect();
        let ref_scale = stats.iter().map(|s| s.scale).fold(0.0f64, f64::max);
        for s in &mut stats {
            if s.scale < 1e-9 * ref_scale {
                s.scale = 1.0;
            }
        }
        stats
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }
}

/// A trained network together with the input/target standardizers and the
/// losses reached (total loss in standardized units, data term in original
/// units).
#[derive(Debug, Clone)]
pub struct TrainedSymNet {
    pub model: SymNetModel,
    pub input_stats: Vec<Standardizer>,
    pub target_stats: Standardizer,
    /// Total loss `L_data + λ·L_reg` in standardized target units.
    pub loss: f64,
    /// Mean squared data error in original target units.
    pub data_loss: f64,
}

impl TrainedSymNet {
    /// Network prediction in original units for one original-units sample.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let std_x: Vec<f64> = x.iter().zip(&self.input_stats).map(|(&v, s)| s.apply(v)).collect();
        self.target_stats.mean + self.target_stats.scale * self.model.forward(&std_x)
    }
}

/// Total loss and gradient over the full batch (standardized units).
fn loss_and_grad(
    model: &SymNetModel,
    inputs_std: &[Vec<f64>],
    target_std: &[f64],
    spec: &TrainSpec,
    grad: &mut [f64],
) -> f64 {
    let n_samples = target_std.len();
    for g in grad.iter_mut() {
        *g = 0.0;
    }
    let mut v = Vec::new();
    let mut fg = Vec::new();
    let mut dv = Vec::new();
    let mut x = vec![0.0; inputs_std.len()];
    let mut data = 0.0;
    // First pass accumulates residuals; the gradient scale 2(y−t)/N is known
    // per sample, so one combined pass suffices.
    for s in 0..n_samples {
        for (j, col) in inputs_std.iter().enumerate() {
            x[j] = col[s];
        }
        // Forward once to get the residual, then backward with the scale.
        let y = model.forward(&x);
        let r = y - target_std[s];
        data += r * r;
        let dy = 2.0 * r / n_samples as f64;
        model.backward_into(&x, dy, grad, &mut v, &mut fg, &mut dv);
    }
    data /= n_samples as f64;
    let mut reg = 0.0;
    for (g, &w) in grad.iter_mut().zip(model.params()) {
        reg += huber(w, spec.huber_s);
        *g += spec.lambda * huber_grad(w, spec.huber_s);
    }
    data + spec.lambda * reg
}

/// Trains a network on token columns (original units). Inputs and target are
/// standardized internally; gradient descent with momentum, deterministic
/// for a fixed seed, restarting with a halved learning rate on divergence.
pub fn train(
    input_labels: Vec<String>,
    inputs: &[Vec<f64>],
    target: &[f64],
    spec: &TrainSpec,
) -> Result<TrainedSymNet> {
    if inputs.is_empty() {
        return Err(Error::Training("no input tokens".into()));
    }
    let n_samples = target.len();
    if n_samples == 0 || inputs.iter().any(|c| c.len() != n_samples) {
        return Err(Error::Training("input/target sample mismatch".into()));
    }
    let input_stats = Standardizer::fit_columns(inputs);
    let target_stats = Standardizer::fit(target);
    let inputs_std: Vec<Vec<f64>> = inputs
        .iter()
        .zip(&input_stats)
        .map(|(col, st)| col.iter().map(|&v| st.apply(v)).collect())
        .collect();
    let target_std: Vec<f64> = target.iter().map(|&v| target_stats.apply(v)).collect();

    let n = inputs.len();
    let mut lr = spec.learning_rate;
    for _restart in 0..=3 {
        let mut model = SymNetModel::new(input_labels.clone(), spec.hidden_layers);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for p in model.params_mut() {
            *p = rng.random_range(-0.3..0.3);
        }
        let n_params = model.params().len();
        let mut grad = vec![0.0; n_params];
        let mut velocity = vec![0.0; n_params];
        let mut best_params = model.params().to_vec();
        let mut best_loss = f64::INFINITY;
        let mut diverged = false;
        for _iter in 0..spec.max_iters {
            let loss = loss_and_grad(&model, &inputs_std, &target_std, spec, &mut grad);
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            if loss < best_loss {
                best_loss = loss;
                best_params.copy_from_slice(model.params());
            }
            for ((p, vel), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *vel = spec.momentum * *vel - lr * g;
                *p += *vel;
            }
        }
        if diverged {
            lr /= 2.0;
            continue;
        }
        // Final candidate may beat the running best.
        let final_loss = loss_and_grad(&model, &inputs_std, &target_std, spec, &mut grad);
        if final_loss.is_finite() && final_loss < best_loss {
            best_loss = final_loss;
            best_params.copy_from_slice(model.params());
        }
        let mut best_model = SymNetModel::new(input_labels, spec.hidden_layers);
        best_model.params_mut().copy_from_slice(&best_params);
        // Data term of the retained parameters, reported in original units.
        let mut data = 0.0;
        let mut x = vec![0.0; n];
        for s in 0..n_samples {
            for (j, col) in inputs_std.iter().enumerate() {
                x[j] = col[s];
            }
            let r = best_model.forward(&x) - target_std[s];
            data += r * r;
        }
        data /= n_samples as f64;
        return Ok(TrainedSymNet {
            model: best_model,
            input_stats,
            target_stats,
            loss: best_loss,
            data_loss: data * target_stats.scale * target_stats.scale,
        });
    }
    Err(Error::Training("gradient descent diverged after 3 learning-rate restarts".into()))
}

/// Sparse polynomial over input indices: sorted index multiset → coefficient.
type Poly = BTreeMap<Vec<usize>, f64>;

fn poly_add_scaled(acc: &mut Poly, other: &Poly, scale: f64) {
    if scale == 0.0 {
        return;
    }
    for (k, &c) in other {
        *acc.entry(k.clone()).or_insert(0.0) += scale * c;
    }
}

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ka, &ca) in a {
        for (kb, &cb) in b {
            let mut key = ka.clone();
            key.extend_from_slice(kb);
            key.sort_unstable();
            *out.entry(key).or_insert(0.0) += ca * cb;
        }
    }
    out
}

/// Exact polynomial expansion of a trained network in original input units:
/// a coefficient map over token-label monomials (the empty monomial is a
/// constant). Terms below `threshold` in magnitude are dropped.
pub fn extract_symbolic(net: &TrainedSymNet, threshold: f64) -> Result<InitialGuess> {
    let model = &net.model;
    let n = model.n_inputs;
    // Features as polynomials over *original* inputs: the standardized
    // variable is (x_j − μ_j)/σ_j, itself affine in x_j.
    let mut features: Vec<Poly> = Vec::with_capacity(n + model.hidden_layers);
    for (j, st) in net.input_stats.iter().enumerate() {
        let mut p = Poly::new();
        p.insert(vec![j], 1.0 / st.scale);
        p.insert(Vec::new(), -st.mean / st.scale);
        features.push(p);
    }
    for layer in 0..model.hidden_layers {
        let off = model.layer_offsets(layer);
        let mut f = Poly::new();
        let mut g = Poly::new();
        f.insert(Vec::new(), model.params[off.b1]);
        g.insert(Vec::new(), model.params[off.b2]);
        for j in 0..off.width {
            poly_add_scaled(&mut f, &features[j], model.params[off.w1 + j]);
        }
        for j in 0..off.in_width {
            poly_add_scaled(&mut g, &features[j], model.params[off.w2 + j]);
        }
        features.push(poly_mul(&f, &g));
    }
    let ro = model.readout_offset();
    let mut out = Poly::new();
    for (j, feature) in features.iter().enumerate() {
        poly_add_scaled(&mut out, feature, model.params[ro + j] * net.target_stats.scale);
    }
    *out.entry(Vec::new()).or_insert(0.0) +=
        model.params[ro + features.len()] * net.target_stats.scale + net.target_stats.mean;

    let entries: Vec<(Vec<String>, f64)> = out
        .into_iter()
        .filter(|(_, c)| c.abs() >= threshold)
        .map(|(idx, c)| {
            let labels: Vec<String> = idx.iter().map(|&j| model.input_labels[j].clone()).collect();
            (labels, c)
        })
        .collect();
    let mut guess = InitialGuess::new(entries, GuessSource::Symnet)?;
    guess.lhs = None;
    Ok(guess)
}

/// Coefficient-magnitude cutoff used when reporting extracted terms.
pub const EXTRACT_THRESHOLD: f64 = 1e-6;

/// Settings for the full guess pipeline.
#[derive(Debug, Clone)]
pub struct GuessSpec {
    pub train: TrainSpec,
    /// Highest time-derivative order tried as the balance term.
    pub max_lhs_order: usize,
    pub extract_threshold: f64,
}

impl Default for GuessSpec {
    fn default() -> Self {
        GuessSpec { train: TrainSpec::default(), max_lhs_order: 1, extract_threshold: EXTRACT_THRESHOLD }
    }
}

/// Trains one network per (candidate balance term, λ) pair, picks the pair
/// with the minimal total loss and returns its symbolic extraction with the
/// balance term added at coefficient −1, plus the chosen balance label.
pub fn generate_initial_guess(
    ctx: &EvalContext,
    pool: &TokenPool,
    spec: &GuessSpec,
) -> Result<(InitialGuess, String)> {
    let candidates: Vec<TokenId> = pool.time_derivative_ids(spec.max_lhs_order);
    if candidates.is_empty() {
        return Err(Error::GuessGeneration(
            "no time-derivative tokens available as balance candidates".into(),
        ));
    }
    let interior = ctx.interior();

    let mut jobs: Vec<(TokenId, f64)> = Vec::new();
    for &cand in &candidates {
        for &lambda in &LAMBDA_CANDIDATES {
            jobs.push((cand, lambda));
        }
    }
    let results: Vec<Result<(TokenId, TrainedSymNet)>> = exec::map_indexed(jobs.len(), |j| {
        let (cand, lambda) = jobs[j];
        let target_field = ctx.token_field(cand, None)?;
        let target: Vec<f64> = interior.iter().map(|&i| target_field.values()[i]).collect();
        let mut labels = Vec::new();
        let mut columns = Vec::new();
        for id in 0..pool.len() {
            if id == cand {
                continue;
            }
            let f = ctx.token_field(id, None)?;
            labels.push(pool.token(id).label().to_string());
            columns.push(interior.iter().map(|&i| f.values()[i]).collect::<Vec<f64>>());
        }
        let mut train_spec = spec.train.clone();
        train_spec.lambda = lambda;
        train_spec.seed = derive_seed(spec.train.seed, &[cand as u64, lambda.to_bits()]);
        let net = train(labels, &columns, &target, &train_spec)?;
        Ok((cand, net))
    });

    let mut best: Option<(TokenId, TrainedSymNet)> = None;
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok((cand, net)) => {
                if best.as_ref().map(|(_, b)| net.loss < b.loss).unwrap_or(true) {
                    best = Some((cand, net));
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    let (cand, net) = best.ok_or_else(|| {
        Error::GuessGeneration(format!("every candidate failed training: {}", failures.join("; ")))
    })?;
    let lhs_label = pool.token(cand).label().to_string();
    let mut guess = extract_symbolic(&net, spec.extract_threshold)?;
    let mut entries: Vec<(Vec<String>, f64)> = guess.entries().map(|(k, v)| (k.clone(), v)).collect();
    entries.push((vec![lhs_label.clone()], -1.0));
    guess = InitialGuess::new(entries, GuessSource::Symnet)?;
    guess.lhs = Some(lhs_label.clone());
    Ok((guess, lhs_label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{build_uniform_grid, Field};
    use crate::tokens::{build_token_pool, PoolConfig};
    use std::sync::Arc;

    fn model_with_random_params(n: usize, k: usize, seed: u64) -> SymNetModel {
        let labels: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let mut m = SymNetModel::new(labels, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in m.params_mut() {
            *p = rng.random_range(-0.8..0.8);
        }
        m
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = SymNetModel::new(vec!["a".into(), "b".into()], 1);
        assert_eq!(m.forward(&[0.3, -0.7]), 0.0);
        assert_eq!(m.forward(&[5.0, 2.0]), 0.0);
    }

    #[test]
    fn constructed_product_network_computes_u_times_ux() {
        // One hidden layer wired to multiply input 0 by input 1, readout
        // selecting the product feature.
        let mut m = SymNetModel::new(vec!["u".into(), "du/dx".into()], 1);
        let off = m.layer_offsets(0);
        let ro = m.readout_offset();
        m.params_mut()[off.w1] = 1.0; // f = u
        m.params_mut()[off.w2 + 1] = 1.0; // g = u_x
        m.params_mut()[ro + 2] = 1.0; // readout = product feature
        for (a, b) in [(0.5, 2.0), (-1.5, 3.0), (2.0, -0.25)] {
            assert!((m.forward(&[a, b]) - a * b).abs() < 1e-15);
        }
    }

    #[test]
    fn degree_bound_is_layers_plus_one() {
        // A k-layer network must expand to monomials of degree ≤ k+1, and a
        // generic network reaches that bound.
        for k in 1..=2usize {
            let m = model_with_random_params(2, k, 40 + k as u64);
            let net = TrainedSymNet {
                model: m,
                input_stats: vec![Standardizer { mean: 0.0, scale: 1.0 }; 2],
                target_stats: Standardizer { mean: 0.0, scale: 1.0 },
                loss: 0.0,
                data_loss: 0.0,
            };
            let guess = extract_symbolic(&net, 0.0).unwrap();
            let max_deg = guess.entries().map(|(k, _)| k.len()).max().unwrap();
            assert!(max_deg <= k + 1, "degree {max_deg} exceeds {}", k + 1);
            assert_eq!(max_deg, k + 1, "generic network should reach the bound");
        }
    }

    #[test]
    fn huber_is_c1_at_the_knot() {
        // Both branch formulas evaluated exactly at the knot w = ±s agree in
        // value and slope.
        let s = 1e-3;
        for sign in [-1.0f64, 1.0] {
            let w = sign * s;
            let quadratic = w * w / (2.0 * s);
            let linear = w.abs() - s / 2.0;
            assert!((quadratic - linear).abs() < 1e-12);
            let quad_slope = w / s;
            let lin_slope = w.signum();
            assert!((quad_slope - lin_slope).abs() < 1e-12);
        }
        assert_eq!(huber(2e-3, 1e-3), 2e-3 - 5e-4);
        assert_eq!(huber(5e-4, 1e-3), 2.5e-7 / (2e-3));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let n = rng.random_range(2..4);
            let k = rng.random_range(1..3);
            let model = model_with_random_params(n, k, 100 + trial);
            let n_samples = 12;
            let inputs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n_samples).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let target: Vec<f64> = (0..n_samples).map(|_| rng.random_range(-1.0..1.0)).collect();
            let spec = TrainSpec { lambda: 1e-3, ..TrainSpec::default() };
            let mut grad = vec![0.0; model.params().len()];
            let base_loss = loss_and_grad(&model, &inputs, &target, &spec, &mut grad);
            assert!(base_loss.is_finite());
            for p_idx in 0..model.params().len() {
                let h = 1e-6 * model.params()[p_idx].abs().max(1.0);
                let mut plus = model.clone();
                plus.params_mut()[p_idx] += h;
                let mut minus = model.clone();
                minus.params_mut()[p_idx] -= h;
                let mut scratch = vec![0.0; grad.len()];
                let lp = loss_and_grad(&plus, &inputs, &target, &spec, &mut scratch);
                let lm = loss_and_grad(&minus, &inputs, &target, &spec, &mut scratch);
                let numeric = (lp - lm) / (2.0 * h);
                let denom = grad[p_idx].abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (grad[p_idx] - numeric).abs() / denom < 1e-5,
                    "trial {trial} param {p_idx}: analytic {} vs numeric {numeric}",
                    grad[p_idx]
                );
            }
        }
    }

    #[test]
    fn extraction_agrees_with_forward_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = model_with_random_params(3, 2, 77);
        let net = TrainedSymNet {
            model,
            input_stats: vec![
                Standardizer { mean: 0.4, scale: 1.7 },
                Standardizer { mean: -2.0, scale: 0.3 },
                Standardizer { mean: 0.0, scale: 5.0 },
            ],
            target_stats: Standardizer { mean: 1.2, scale: 8.0 },
            loss: 0.0,
            data_loss: 0.0,
        };
        let guess = extract_symbolic(&net, 0.0).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let via_net = net.predict(&x);
            let mut via_poly = 0.0;
            for (key, c) in guess.entries() {
                let mut prod = c;
                for label in key {
                    let idx: usize = label[1..].parse().unwrap();
                    prod *= x[idx];
                }
                via_poly += prod;
            }
            let denom = via_net.abs().max(1.0);
            assert!(
                (via_net - via_poly).abs() / denom < 1e-10,
                "net {via_net} vs poly {via_poly}"
            );
        }
    }

    #[test]
    fn training_fits_exact_advection_relation() {
        // Analytic fields with u_t = −u·u_x exactly: data loss must collapse
        // far below the target scale.
        let grid = Arc::new(build_uniform_grid(&[(0.0, 1.0), (0.5, 1.5)], &[31, 31]).unwrap());
        let u = Field::from_fn(grid.clone(), "u", |c| c[1] / (1.0 + c[0])).unwrap();
        let ux = Field::from_fn(grid.clone(), "ux", |c| 1.0 / (1.0 + c[0])).unwrap();
        let uxx = Field::from_fn(grid.clone(), "uxx", |_| 0.0).unwrap();
        let ut = Field::from_fn(grid, "ut", |c| -c[1] / ((1.0 + c[0]) * (1.0 + c[0]))).unwrap();
        let inputs = vec![u.values().to_vec(), ux.values().to_vec(), uxx.values().to_vec()];
        let labels = vec!["u".to_string(), "du/dx".to_string(), "d^2u/dx^2".to_string()];
        let spec = TrainSpec { hidden_layers: 1, seed: 5, ..TrainSpec::default() };
        let net = train(labels, &inputs, ut.values(), &spec).unwrap();
        let ut_ms = crate::numerics::rms(ut.values()).powi(2);
        assert!(
            net.data_loss < 1e-4 * ut_ms,
            "data loss {} vs budget {}",
            net.data_loss,
            1e-4 * ut_ms
        );
        // λ = 0 edge: the loss is the pure data term.
        let spec0 = TrainSpec { lambda: 0.0, hidden_layers: 1, seed: 5, max_iters: 50, ..TrainSpec::default() };
        let u2 = Field::from_fn(
            Arc::new(build_uniform_grid(&[(0.0, 1.0)], &[40]).unwrap()),
            "x",
            |c| c[0],
        )
        .unwrap();
        let net0 = train(vec!["x".into()], &[u2.values().to_vec()], u2.values(), &spec0).unwrap();
        let std_ms = {
            let st = Standardizer::fit(u2.values());
            let mut acc = 0.0;
            for &v in u2.values() {
                let r = net0.model.forward(&[st.apply(v)]) - st.apply(v);
                acc += r * r;
            }
            acc / u2.values().len() as f64
        };
        assert!((net0.loss - std_ms).abs() < 1e-12, "loss {} vs data {}", net0.loss, std_ms);
    }

    #[test]
    fn guess_pipeline_recovers_advection_terms() {
        let grid = Arc::new(build_uniform_grid(&[(0.0, 1.0), (0.5, 1.5)], &[31, 31]).unwrap());
        let field = Field::from_fn(grid, "u", |c| c[1] / (1.0 + c[0])).unwrap();
        let pool = build_token_pool(&PoolConfig::new(vec![1, 2])).unwrap();
        let ctx = EvalContext::new(&field, &pool).unwrap();
        let spec = GuessSpec {
            train: TrainSpec { seed: 11, ..TrainSpec::default() },
            ..GuessSpec::default()
        };
        let (guess, lhs) = generate_initial_guess(&ctx, &pool, &spec).unwrap();
        assert_eq!(lhs, "du/dt");
        assert_eq!(guess.coefficient(&["du/dt".to_string()]), Some(-1.0));
        // The dominant non-balance term is u·u_x with weight near 1.
        let mut ranked: Vec<(Vec<String>, f64)> = guess
            .entries()
            .filter(|(k, _)| k.as_slice() != ["du/dt".to_string()])
            .map(|(k, v)| (k.clone(), v))
            .collect();
        ranked.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
        assert_eq!(
            ranked[0].0,
            vec!["du/dx".to_string(), "u".to_string()],
            "top term is {:?} ({})",
            ranked[0].0,
            ranked[0].1
        );
        assert!((ranked[0].1 + 1.0).abs() < 0.05, "coefficient {}", ranked[0].1);
    }
}
