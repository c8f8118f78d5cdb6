//! Token families, term products, the candidate-equation chromosome and the
//! canonical enumeration of the admissible term space.
//!
//! A token is an elementary grid-evaluable function: the observable `u`, a
//! pure partial derivative of it, or a parametrized trigonometric forcing.
//! A term is a multiset of tokens (a pointwise product); a chromosome is a
//! set of terms with fitted coefficients and one target term.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::field::{
    stencil_half_width, DerivativeCache, DerivativeSpec, Field, Grid,
};

pub type TokenId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenFamily {
    /// The observable u itself.
    Observable,
    /// Pure per-axis partial derivatives with fixed orders.
    Derivative,
    /// cos(a·t)·sin(b·x) with optimizable frequencies a, b.
    Trig,
}

#[derive(Debug, Clone)]
pub enum TokenKind {
    Observable,
    Derivative(DerivativeSpec),
    /// Candidate frequencies per axis; the concrete value is resolved by
    /// discrete search during coefficient fitting.
    Trig { candidates: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
pub struct Token {
    label: String,
    kind: TokenKind,
}

impl Token {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn family(&self) -> TokenFamily {
        match self.kind {
            TokenKind::Observable => TokenFamily::Observable,
            TokenKind::Derivative(_) => TokenFamily::Derivative,
            TokenKind::Trig { .. } => TokenFamily::Trig,
        }
    }

    pub fn kind(&self) -> &TokenKind {
        &self.kind
    }

    /// Token parameters: derivative orders (fixed) or trig frequencies
    /// (defaulting to the first candidate of each axis).
    pub fn params(&self) -> Vec<f64> {
        match &self.kind {
            TokenKind::Observable => Vec::new(),
            TokenKind::Derivative(spec) => spec.orders().iter().map(|&o| o as f64).collect(),
            TokenKind::Trig { candidates } => candidates.iter().map(|c| c[0]).collect(),
        }
    }

    pub fn optimizable_mask(&self) -> Vec<bool> {
        match &self.kind {
            TokenKind::Observable => Vec::new(),
            TokenKind::Derivative(spec) => vec![false; spec.orders().len()],
            TokenKind::Trig { candidates } => vec![true; candidates.len()],
        }
    }

    /// Whether the family admits at most one token per term.
    pub fn single_occurrence(&self) -> bool {
        matches!(self.kind, TokenKind::Trig { .. })
    }
}

fn axis_name(axis: usize) -> &'static str {
    const NAMES: [&str; 4] = ["t", "x", "y", "z"];
    NAMES[axis]
}

fn derivative_label(orders: &[usize]) -> String {
    let total: usize = orders.iter().sum();
    let mut denom = String::new();
    for (axis, &o) in orders.iter().enumerate() {
        match o {
            0 => {}
            1 => denom.push_str(&format!("d{}", axis_name(axis))),
            _ => denom.push_str(&format!("d{}^{}", axis_name(axis), o)),
        }
    }
    if total == 1 {
        format!("du/{denom}")
    } else {
        format!("d^{total}u/{denom}")
    }
}

/// Settings for [`build_token_pool`].
#[derive(Debug, Clone)]
pub struct PoolConfig {
    /// Maximum derivative order per axis, time axis first (Table defaults:
    /// e.g. (1, 2) for viscous Burgers).
    pub deriv_caps: Vec<usize>,
    /// Candidate trig frequencies per axis; `None` disables the family.
    pub trig_freqs: Option<Vec<Vec<f64>>>,
}

impl PoolConfig {
    pub fn new(deriv_caps: Vec<usize>) -> Self {
        PoolConfig { deriv_caps, trig_freqs: None }
    }
}

#[derive(Debug, Clone)]
pub struct TokenPool {
    tokens: Vec<Token>,
    n_axes: usize,
}

/// Builds the token pool: `u`, every pure per-axis derivative up to the
/// configured caps, and (if enabled) the trigonometric forcing token.
pub fn build_token_pool(config: &PoolConfig) -> Result<TokenPool> {
    if config.deriv_caps.is_empty() {
        return Err(Error::Config("token pool needs at least one axis".into()));
    }
    let n_axes = config.deriv_caps.len();
    let mut tokens = vec![Token { label: "u".into(), kind: TokenKind::Observable }];
    for (axis, &cap) in config.deriv_caps.iter().enumerate() {
        for order in 1..=cap {
            let mut orders = vec![0usize; n_axes];
            orders[axis] = order;
            let spec = DerivativeSpec::new(orders.clone())?;
            tokens.push(Token { label: derivative_label(&orders), kind: TokenKind::Derivative(spec) });
        }
    }
    if let Some(freqs) = &config.trig_freqs {
        if freqs.len() != n_axes {
            return Err(Error::Config("trig frequency axes do not match derivative caps".into()));
        }
        if freqs.iter().any(|f| f.is_empty()) {
            return Err(Error::Config("empty trig frequency candidate list".into()));
        }
        if n_axes != 2 {
            return Err(Error::Config("trig tokens are defined for 2-D (t, x) grids".into()));
        }
        tokens.push(Token {
            label: "cos(a·t)·sin(b·x)".into(),
            kind: TokenKind::Trig { candidates: freqs.clone() },
        });
    }
    Ok(TokenPool { tokens, n_axes })
}

impl TokenPool {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &Token {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn n_axes(&self) -> usize {
        self.n_axes
    }

    pub fn find(&self, label: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t.label == label)
    }

    /// Ids of time-derivative tokens up to `max_order`, ascending order.
    pub fn time_derivative_ids(&self, max_order: usize) -> Vec<TokenId> {
        (1..=max_order)
            .filter_map(|o| {
                self.tokens.iter().position(|t| match &t.kind {
                    TokenKind::Derivative(spec) => {
                        spec.orders()[0] == o && spec.orders().iter().skip(1).all(|&v| v == 0)
                    }
                    _ => false,
                })
            })
            .collect()
    }

    /// Per-axis interior margin: half-width of the widest stencil any pool
    /// token needs on that axis.
    pub fn interior_margins(&self) -> Vec<usize> {
        let mut margins = vec![0usize; self.n_axes];
        for t in &self.tokens {
            if let TokenKind::Derivative(spec) = &t.kind {
                for (axis, &o) in spec.orders().iter().enumerate() {
                    margins[axis] = margins[axis].max(stencil_half_width(o));
                }
            }
        }
        margins
    }
}

/// Product of tokens; canonical form keeps factors sorted by label so that
/// commutatively equal terms compare equal.
#[derive(Debug, Clone)]
pub struct Term {
    factors: Vec<TokenId>,
    /// Resolved trig frequencies for the (at most one) trig factor.
    trig_params: Option<Vec<f64>>,
}

impl PartialEq for Term {
    fn eq(&self, other: &Self) -> bool {
        self.factors == other.factors
    }
}
impl Eq for Term {}

impl std::hash::Hash for Term {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.factors.hash(state);
    }
}

impl Term {
    pub fn new(pool: &TokenPool, mut factors: Vec<TokenId>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Structure("term needs at least one factor".into()));
        }
        factors.sort_by(|&a, &b| pool.token(a).label().cmp(pool.token(b).label()).then(a.cmp(&b)));
        let single: Vec<_> = factors.iter().filter(|&&id| pool.token(id).single_occurrence()).collect();
        if single.len() > 1 {
            return Err(Error::Structure(
                "single-occurrence family token appears more than once in a term".into(),
            ));
        }
        Ok(Term { factors, trig_params: None })
    }

    pub fn with_trig_params(mut self, params: Vec<f64>) -> Self {
        self.trig_params = Some(params);
        self
    }

    pub fn factors(&self) -> &[TokenId] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn trig_params(&self) -> Option<&[f64]> {
        self.trig_params.as_deref()
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.factors.contains(&token)
    }

    /// Id of the trig factor, if the term has one.
    pub fn trig_factor(&self, pool: &TokenPool) -> Option<TokenId> {
        self.factors.iter().copied().find(|&id| matches!(pool.token(id).kind(), TokenKind::Trig { .. }))
    }

    /// Canonical key: the sorted factor ids.
    pub fn key(&self) -> &[TokenId] {
        &self.factors
    }

    /// Sorted factor labels; the cross-pool canonical identity used when
    /// matching guesses against a term space.
    pub fn labels(&self, pool: &TokenPool) -> Vec<String> {
        self.factors.iter().map(|&id| pool.token(id).label().to_string()).collect()
    }

    pub fn render(&self, pool: &TokenPool) -> String {
        self.labels(pool).join("·")
    }
}

/// Candidate equation: a set of distinct terms, per-term coefficients, a
/// target (balance) term with coefficient −1, and a fitness value.
#[derive(Debug, Clone)]
pub struct Chromosome {
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    pub kept: Vec<bool>,
    pub target_index: Option<usize>,
    pub fitness: Option<f64>,
    pub restricted: BTreeSet<Vec<TokenId>>,
}

impl Chromosome {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        for i in 0..terms.len() {
            for j in i + 1..terms.len() {
                if terms[i] == terms[j] {
                    return Err(Error::Structure(format!(
                        "duplicate term at positions {i} and {j}"
                    )));
                }
            }
        }
        let n = terms.len();
        Ok(Chromosome {
            terms,
            coefficients: vec![0.0; n],
            kept: vec![false; n],
            target_index: None,
            fitness: None,
            restricted: BTreeSet::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains_term(&self, term: &Term) -> bool {
        self.terms.iter().any(|t| t == term)
    }

    /// Structural invariants: pairwise-distinct terms, aligned metadata.
    pub fn check_invariants(&self) -> Result<()> {
        if self.coefficients.len() != self.terms.len() || self.kept.len() != self.terms.len() {
            return Err(Error::Structure("metadata length mismatch".into()));
        }
        for i in 0..self.terms.len() {
            for j in i + 1..self.terms.len() {
                if self.terms[i] == self.terms[j] {
                    return Err(Error::Structure("duplicate terms".into()));
                }
            }
        }
        if let Some(f) = self.fitness {
            if f < 0.0 {
                return Err(Error::Structure("negative fitness".into()));
            }
        }
        Ok(())
    }

    /// Invalidates fitted state after a structural edit.
    pub fn mark_dirty(&mut self) {
        self.fitness = None;
        self.target_index = None;
        for c in &mut self.coefficients {
            *c = 0.0;
        }
        for k in &mut self.kept {
            *k = false;
        }
    }
}

/// `true` iff `candidate` duplicates an existing term of the chromosome or
/// is in its restricted set — the "0 = 0" avoidance rules.
pub fn violates_rules(candidate: &Term, chromosome: &Chromosome) -> bool {
    chromosome.contains_term(candidate) || chromosome.restricted.contains(candidate.key())
}

/// Canonical enumeration of all admissible terms for a pool and `t_max`.
#[derive(Debug, Clone)]
pub struct TermSpace {
    terms: Vec<Term>,
    index: HashMap<Vec<TokenId>, usize>,
}

impl TermSpace {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn term(&self, i: usize) -> &Term {
        &self.terms[i]
    }

    pub fn position(&self, term: &Term) -> Option<usize> {
        self.index.get(term.key()).copied()
    }
}

/// Builds a space over an explicit term list (e.g. an expert-curated
/// support), keeping the given order and dropping duplicates.
pub fn term_space_from_terms(terms: Vec<Term>) -> TermSpace {
    let mut unique: Vec<Term> = Vec::with_capacity(terms.len());
    for t in terms {
        if unique.iter().all(|u| u != &t) {
            unique.push(t);
        }
    }
    let index = unique
        .iter()
        .enumerate()
        .map(|(i, t)| (t.key().to_vec(), i))
        .collect();
    TermSpace { terms: unique, index }
}

/// All multisets of pool tokens of size 1..=t_max minus rule-violating
/// combinations, ordered by (size, then lexicographic factor labels).
pub fn enumerate_term_space(pool: &TokenPool, t_max: usize) -> Result<TermSpace> {
    if t_max < 1 {
        return Err(Error::Config("t_max must be at least 1".into()));
    }
    let n = pool.len();
    let mut terms: Vec<Term> = Vec::new();
    // Multisets in non-decreasing id order; the single-occurrence rule is the
    // only generation filter.
    let mut stack: Vec<TokenId> = Vec::new();
    fn recurse(
        pool: &TokenPool,
        t_max: usize,
        n: usize,
        start: TokenId,
        stack: &mut Vec<TokenId>,
        out: &mut Vec<Term>,
    ) {
        if !stack.is_empty() {
            if let Ok(term) = Term::new(pool, stack.clone()) {
                out.push(term);
            }
        }
        if stack.len() == t_max {
            return;
        }
        for id in start..n {
            stack.push(id);
            recurse(pool, t_max, n, id, stack, out);
            stack.pop();
        }
    }
    recurse(pool, t_max, n, 0, &mut stack, &mut terms);
    terms.sort_by(|a, b| {
        a.len()
            .cmp(&b.len())
            .then_with(|| a.labels(pool).cmp(&b.labels(pool)))
    });
    let index = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.key().to_vec(), i))
        .collect();
    Ok(TermSpace { terms, index })
}

/// Pre-computed token value fields and memoized term columns for one
/// observation field. Shared read-only across evolutionary workers.
pub struct EvalContext {
    pool: TokenPool,
    grid: Arc<Grid>,
    derivatives: DerivativeCache,
    token_fields: Vec<Option<Arc<Field>>>,
    trig_cache: RwLock<HashMap<(TokenId, Vec<u64>), Arc<Field>>>,
    term_cache: RwLock<HashMap<(Vec<TokenId>, Vec<u64>), Arc<Vec<f64>>>>,
    margins: Vec<usize>,
    interior: Vec<usize>,
}

impl EvalContext {
    /// Evaluates every non-trig pool token on the field's grid up front.
    pub fn new(field: &Field, pool: &TokenPool) -> Result<Self> {
        if pool.n_axes() != field.grid().ndim() {
            return Err(Error::Config(format!(
                "pool has {} axes, field grid has {}",
                pool.n_axes(),
                field.grid().ndim()
            )));
        }
        let grid = field.grid().clone();
        let derivatives = DerivativeCache::new(field.clone());
        let mut token_fields = Vec::with_capacity(pool.len());
        for token in pool.tokens() {
            let evaluated = match token.kind() {
                TokenKind::Observable => {
                    Some(derivatives.get(&DerivativeSpec::new(vec![0; pool.n_axes()])?)?)
                }
                TokenKind::Derivative(spec) => Some(derivatives.get(spec)?),
                TokenKind::Trig { .. } => None,
            };
            token_fields.push(evaluated);
        }
        let margins = pool.interior_margins();
        let interior = interior_indices(&grid, &margins);
        Ok(EvalContext {
            pool: pool.clone(),
            grid,
            derivatives,
            token_fields,
            trig_cache: RwLock::new(HashMap::new()),
            term_cache: RwLock::new(HashMap::new()),
            margins,
            interior,
        })
    }

    pub fn pool(&self) -> &TokenPool {
        &self.pool
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn base_field(&self) -> &Field {
        self.derivatives.base()
    }

    pub fn margins(&self) -> &[usize] {
        &self.margins
    }

    /// Flat indices of the interior region (one stencil width inside every
    /// boundary), the sample set used for fitting.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    fn trig_field(&self, id: TokenId, params: &[f64]) -> Result<Arc<Field>> {
        let key = (id, params.iter().map(|p| p.to_bits()).collect::<Vec<_>>());
        if let Some(hit) = self.trig_cache.read().expect("trig cache").get(&key) {
            return Ok(hit.clone());
        }
        let (a, b) = (params[0], params[1]);
        let field = Arc::new(Field::from_fn(self.grid.clone(), "trig", |c| {
            (a * c[0]).cos() * (b * c[1]).sin()
        })?);
        let mut guard = self.trig_cache.write().expect("trig cache");
        Ok(guard.entry(key).or_insert(field).clone())
    }

    /// Grid values of a single token. Trig tokens take the term-resolved
    /// params when given, otherwise the family defaults.
    pub fn token_field(&self, id: TokenId, trig_params: Option<&[f64]>) -> Result<Arc<Field>> {
        match self.pool.token(id).kind() {
            TokenKind::Trig { candidates } => {
                let default: Vec<f64> = candidates.iter().map(|c| c[0]).collect();
                let params = trig_params.unwrap_or(&default);
                self.trig_field(id, params)
            }
            _ => Ok(self.token_fields[id].clone().expect("precomputed token field")),
        }
    }

    /// Pointwise product of the factor evaluations over the full grid.
    pub fn evaluate_term(&self, term: &Term) -> Result<Field> {
        let mut values = vec![1.0; self.grid.len()];
        for &id in term.factors() {
            let f = self.token_field(id, term.trig_params())?;
            for (v, x) in values.iter_mut().zip(f.values()) {
                *v *= x;
            }
        }
        Field::new(self.grid.clone(), values, term.render(&self.pool))
    }

    /// Interior samples of a term, memoized by (factors, trig params).
    pub fn interior_column(&self, term: &Term) -> Result<Arc<Vec<f64>>> {
        let key = (
            term.key().to_vec(),
            term.trig_params()
                .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .unwrap_or_default(),
        );
        if let Some(hit) = self.term_cache.read().expect("term cache").get(&key) {
            return Ok(hit.clone());
        }
        let full = self.evaluate_term(term)?;
        let column: Vec<f64> = self.interior.iter().map(|&i| full.values()[i]).collect();
        let column = Arc::new(column);
        let mut guard = self.term_cache.write().expect("term cache");
        Ok(guard.entry(key).or_insert(column).clone())
    }
}

fn interior_indices(grid: &Grid, margins: &[usize]) -> Vec<usize> {
    let shape = grid.shape();
    let strides = grid.strides();
    let total = grid.len();
    let mut out = Vec::new();
    'outer: for flat in 0..total {
        for k in 0..shape.len() {
            let idx = (flat / strides[k]) % shape[k];
            if idx < margins[k] || idx + margins[k] >= shape[k] {
                continue 'outer;
            }
        }
        out.push(flat);
    }
    out
}
