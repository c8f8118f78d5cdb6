//! Grids, observation fields, numerical differentiation and the noise model.
//!
//! A [`Grid`] is a regular product of per-axis coordinate arrays with the
//! time axis first. A [`Field`] stores one scalar observable on a grid in
//! row-major order. Derivatives are estimated with second-order central
//! finite differences in the interior and second-order one-sided stencils at
//! the boundaries; a [`DerivativeCache`] memoizes them per derivative spec.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::fd_weights;

/// Highest derivative order the stencil machinery supports per axis.
pub const MAX_DERIVATIVE_ORDER: usize = 4;

/// Regular grid: per-axis strictly increasing, uniformly spaced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
    spacing: Vec<f64>,
    shape: Vec<usize>,
}

impl Grid {
    /// Builds a grid from explicit axes, validating uniform spacing.
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        let mut spacing = Vec::with_capacity(axes.len());
        let mut shape = Vec::with_capacity(axes.len());
        for (k, axis) in axes.iter().enumerate() {
            if axis.len() < 2 {
                return Err(Error::Config(format!("axis {k} has fewer than 2 points")));
            }
            let h = axis[1] - axis[0];
            if h <= 0.0 {
                return Err(Error::Config(format!("axis {k} is not increasing")));
            }
            for w in axis.windows(2) {
                let step = w[1] - w[0];
                if step <= 0.0 {
                    return Err(Error::Config(format!("axis {k} is not strictly increasing")));
                }
                if (step - h).abs() > 1e-12 * h.abs().max(1.0) {
                    return Err(Error::Config(format!("axis {k} spacing is not uniform")));
                }
            }
            spacing.push(h);
            shape.push(axis.len());
        }
        Ok(Grid { axes, spacing, shape })
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for k in (0..self.shape.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.shape[k + 1];
        }
        s
    }

    /// Per-axis (lo, hi) bounds.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.axes
            .iter()
            .map(|a| (a[0], *a.last().expect("non-empty axis")))
            .collect()
    }
}

/// Builds a uniform grid with `shape[k]` equally spaced points on
/// `bounds[k]`, endpoints included.
pub fn build_uniform_grid(bounds: &[(f64, f64)], shape: &[usize]) -> Result<Grid> {
    if bounds.len() != shape.len() {
        return Err(Error::Config("bounds/shape dimensionality mismatch".into()));
    }
    let mut axes = Vec::with_capacity(bounds.len());
    for (k, (&(lo, hi), &n)) in bounds.iter().zip(shape).enumerate() {
        if n < 2 {
            return Err(Error::Config(format!("axis {k}: need at least 2 points, got {n}")));
        }
        if lo >= hi {
            return Err(Error::Config(format!("axis {k}: inverted bounds ({lo}, {hi})")));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let axis: Vec<f64> = (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + h * i as f64 })
            .collect();
        axes.push(axis);
    }
    Grid::new(axes)
}

/// Scalar observable on a grid, row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
    name: String,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, name: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at flat index {i}")));
        }
        Ok(Field { grid, values, name: name.into() })
    }

    /// Evaluates `f` on every grid point; coordinates are passed axis-first.
    pub fn from_fn(grid: Arc<Grid>, name: impl Into<String>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let shape = grid.shape().to_vec();
        let strides = grid.strides();
        let mut values = vec![0.0; grid.len()];
        let mut coord = vec![0.0; shape.len()];
        for (flat, v) in values.iter_mut().enumerate() {
            for k in 0..shape.len() {
                let idx = (flat / strides[k]) % shape[k];
                coord[k] = grid.axis(k)[idx];
            }
            *v = f(&coord);
        }
        Field::new(grid, values, name)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        let strides = self.grid.strides();
        let flat: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.values[flat]
    }
}

/// Per-axis derivative orders, e.g. `(1, 0)` is one time derivative.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DerivativeSpec {
    orders: Vec<usize>,
}

impl DerivativeSpec {
    pub fn new(orders: Vec<usize>) -> Result<Self> {
        if orders.iter().any(|&o| o > MAX_DERIVATIVE_ORDER) {
            return Err(Error::UnsupportedOrder(format!(
                "orders {orders:?} exceed the supported maximum {MAX_DERIVATIVE_ORDER}"
            )));
        }
        Ok(DerivativeSpec { orders })
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn total_order(&self) -> usize {
        self.orders.iter().sum()
    }

    pub fn is_identity(&self) -> bool {
        self.orders.iter().all(|&o| o == 0)
    }
}

/// Half-width of the centered interior stencil for a derivative order.
/// Points closer than this to an edge are evaluated with one-sided stencils.
pub fn stencil_half_width(order: usize) -> usize {
    order.div_ceil(2)
}

fn differentiate_axis(values: &[f64], grid: &Grid, axis: usize, order: usize) -> Result<Vec<f64>> {
    if order == 0 {
        return Ok(values.to_vec());
    }
    if order > MAX_DERIVATIVE_ORDER {
        return Err(Error::UnsupportedOrder(format!(
            "order {order} exceeds the supported maximum {MAX_DERIVATIVE_ORDER}"
        )));
    }
    let len = grid.shape()[axis];
    let h = grid.spacing()[axis];
    let half = stencil_half_width(order);
    let center_w = 2 * half + 1;
    let edge_w = order + 2;
    let need = center_w.max(edge_w);
    if len < need {
        return Err(Error::UnsupportedOrder(format!(
            "axis {axis} has {len} points, stencil for order {order} needs {need}"
        )));
    }
    // Stencil table: (window start, weights) per line position. The centered
    // interior weights are shared; edge positions each get their own
    // one-sided rule, all second-order accurate.
    let center_nodes: Vec<f64> = (0..center_w).map(|j| j as f64 * h).collect();
    let center = fd_weights(&center_nodes, half as f64 * h, order);
    let edge_nodes: Vec<f64> = (0..edge_w).map(|j| j as f64 * h).collect();
    let mut table: Vec<(usize, std::borrow::Cow<[f64]>)> = Vec::with_capacity(len);
    for p in 0..len {
        if p < half {
            let w = fd_weights(&edge_nodes, p as f64 * h, order);
            table.push((0, w.into()));
        } else if p + half >= len {
            let offset = len - edge_w;
            let w = fd_weights(&edge_nodes, (p - offset) as f64 * h, order);
            table.push((offset, w.into()));
        } else {
            table.push((p - half, std::borrow::Cow::Borrowed(&center)));
        }
    }
    let strides = grid.strides();
    let stride = strides[axis];
    let total = grid.len();
    let mut out = vec![0.0; total];
    let mut line = vec![0.0; len];
    for base in 0..total {
        // `base` is a lane start iff its axis index is zero.
        if (base / stride) % len != 0 {
            continue;
        }
        for (j, slot) in line.iter_mut().enumerate() {
            *slot = values[base + j * stride];
        }
        for (p, (start, w)) in table.iter().enumerate() {
            let mut acc = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                acc += wj * line[start + j];
            }
            out[base + p * stride] = acc;
        }
    }
    Ok(out)
}

/// Estimates the partial derivative of `f` given per-axis orders. Axes are
/// processed in sequence, each with a direct stencil of its own order.
pub fn differentiate(f: &Field, spec: &DerivativeSpec) -> Result<Field> {
    if spec.orders().len() != f.grid().ndim() {
        return Err(Error::Config(format!(
            "derivative spec has {} axes, grid has {}",
            spec.orders().len(),
            f.grid().ndim()
        )));
    }
    if spec.is_identity() {
        return Ok(f.clone());
    }
    let grid = f.grid().clone();
    let mut values = f.values().to_vec();
    for (axis, &order) in spec.orders().iter().enumerate() {
        if order > 0 {
            values = differentiate_axis(&values, &grid, axis, order)?;
        }
    }
    let name = format!("D{:?} {}", spec.orders(), f.name());
    Field::new(grid, values, name)
}

/// Memoized derivatives of one base field. Concurrent reads are allowed and
/// return the same values as sequential evaluation.
pub struct DerivativeCache {
    base: Field,
    cache: RwLock<HashMap<DerivativeSpec, Arc<Field>>>,
}

impl DerivativeCache {
    pub fn new(base: Field) -> Self {
        DerivativeCache { base, cache: RwLock::new(HashMap::new()) }
    }

    pub fn base(&self) -> &Field {
        &self.base
    }

    pub fn get(&self, spec: &DerivativeSpec) -> Result<Arc<Field>> {
        if let Some(hit) = self.cache.read().expect("cache poisoned").get(spec) {
            return Ok(hit.clone());
        }
        let computed = Arc::new(differentiate(&self.base, spec)?);
        let mut guard = self.cache.write().expect("cache poisoned");
        Ok(guard.entry(spec.clone()).or_insert(computed).clone())
    }
}

/// Savitzky–Golay smoothing: per-axis local polynomial least squares applied
/// sequentially over axes. `window == 1` is the identity.
pub fn smooth(f: &Field, window: usize, degree: usize) -> Result<Field> {
    if window <= 1 {
        return Ok(f.clone());
    }
    if window % 2 == 0 {
        return Err(Error::Config(format!("smoothing window {window} must be odd")));
    }
    if window < degree + 2 {
        return Err(Error::Config(format!(
            "smoothing window {window} must be at least degree + 2 = {}",
            degree + 2
        )));
    }
    let grid = f.grid().clone();
    let mut values = f.values().to_vec();
    for axis in 0..grid.ndim() {
        values = smooth_axis(&values, &grid, axis, window, degree)?;
    }
    Field::new(grid, values, f.name().to_string())
}

fn sg_weights(window: usize, degree: usize, eval_at: usize) -> Vec<f64> {
    // Least-squares polynomial fit over the window, evaluated at `eval_at`.
    // With coordinates centered on the evaluation point the fitted value is
    // the constant coefficient, so the weights are A (AᵀA)⁻¹ e₀ rows.
    let p = degree + 1;
    let design: Vec<Vec<f64>> = (0..window)
        .map(|j| {
            let xi = j as f64 - eval_at as f64;
            (0..p).map(|k| xi.powi(k as i32)).collect()
        })
        .collect();
    let mut gram = vec![0.0; p * p];
    for row in &design {
        for a in 0..p {
            for b in 0..p {
                gram[a * p + b] += row[a] * row[b];
            }
        }
    }
    let mut e0 = vec![0.0; p];
    e0[0] = 1.0;
    let z = crate::numerics::solve_dense(&mut gram, &mut e0, p).expect("SG normal equations");
    design.iter().map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum()).collect()
}

fn smooth_axis(values: &[f64], grid: &Grid, axis: usize, window: usize, degree: usize) -> Result<Vec<f64>> {
    let len = grid.shape()[axis];
    if window > len {
        return Err(Error::Config(format!(
            "smoothing window {window} larger than axis length {len}"
        )));
    }
    let half = window / 2;
    let center = sg_weights(window, degree, half);
    let mut table: Vec<(usize, Vec<f64>)> = Vec::with_capacity(len);
    for p in 0..len {
        if p < half {
            table.push((0, sg_weights(window, degree, p)));
        } else if p + half >= len {
            let offset = len - window;
            table.push((offset, sg_weights(window, degree, p - offset)));
        } else {
            table.push((p - half, center.clone()));
        }
    }
    let stride = grid.strides()[axis];
    let total = grid.len();
    let mut out = vec![0.0; total];
    let mut line = vec![0.0; len];
    for base in 0..total {
        if (base / stride) % len != 0 {
            continue;
        }
        for (j, slot) in line.iter_mut().enumerate() {
            *slot = values[base + j * stride];
        }
        for (p, (start, w)) in table.iter().enumerate() {
            let mut acc = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                acc += wj * line[start + j];
            }
            out[base + p * stride] = acc;
        }
    }
    Ok(out)
}

/// Adds multiplicative-scale Gaussian noise: each sample `u` becomes
/// `u + ε` with `ε ~ N(0, (magnitude·|u|)²)`. Deterministic for a fixed seed.
pub fn add_noise(f: &Field, magnitude: f64, seed: u64) -> Result<Field> {
    if magnitude < 0.0 {
        return Err(Error::Config(format!("noise magnitude {magnitude} is negative")));
    }
    if magnitude == 0.0 {
        return Ok(f.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = f
        .values()
        .iter()
        .map(|&u| {
            let z: f64 = rng.sample(StandardNormal);
            u + magnitude * u.abs() * z
        })
        .collect();
    Field::new(f.grid().clone(), values, f.name().to_string())
}

pub mod csv {
    //! Field persistence: a CSV of values (rows = time index ascending,
    //! columns = first spatial index ascending) plus a JSON sidecar with
    //! `bounds`, `shape` and `name`.

    use std::path::Path;
    use std::sync::Arc;

    use serde::{Deserialize, Serialize};

    use super::{build_uniform_grid, Field};
    use crate::error::{Error, Result};

    #[derive(Debug, Serialize, Deserialize)]
    struct Meta {
        bounds: Vec<(f64, f64)>,
        shape: Vec<usize>,
        name: String,
    }

    pub fn save_field(f: &Field, values_path: &Path, meta_path: &Path) -> Result<()> {
        let shape = f.grid().shape();
        if shape.len() != 2 {
            return Err(Error::Config("field CSV supports 2-D (t, x) fields only".into()));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let mut out = String::with_capacity(rows * cols * 25);
        for r in 0..rows {
            for c in 0..cols {
                if c > 0 {
                    out.push(',');
                }
                // 17 significant digits: round-trips f64 exactly.
                out.push_str(&format!("{:.16e}", f.values()[r * cols + c]));
            }
            out.push('\n');
        }
        std::fs::write(values_path, out)?;
        let meta = Meta {
            bounds: f.grid().bounds(),
            shape: shape.to_vec(),
            name: f.name().to_string(),
        };
        std::fs::write(meta_path, serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load_field(values_path: &Path, meta_path: &Path) -> Result<Field> {
        let meta_text = std::fs::read_to_string(meta_path)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", meta_path.display())))?;
        let meta: Meta = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", meta_path.display())))?;
        if meta.shape.len() != 2 {
            return Err(Error::Ingestion(format!(
                "metadata shape {:?} is not 2-D",
                meta.shape
            )));
        }
        let text = std::fs::read_to_string(values_path)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", values_path.display())))?;
        let mut values = Vec::with_capacity(meta.shape.iter().product());
        let mut n_rows = 0usize;
        for (r, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            n_rows += 1;
            let mut n_cols = 0usize;
            for (c, cell) in line.split(',').enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::Ingestion(format!("non-numeric cell at row {}, column {}", r + 1, c + 1))
                })?;
                values.push(v);
                n_cols += 1;
            }
            if n_cols != meta.shape[1] {
                return Err(Error::Ingestion(format!(
                    "row {} has {} columns, metadata says {}",
                    r + 1,
                    n_cols,
                    meta.shape[1]
                )));
            }
        }
        if n_rows != meta.shape[0] {
            return Err(Error::Ingestion(format!(
                "CSV has {} rows, metadata says {}",
                n_rows,
                meta.shape[0]
            )));
        }
        let grid = build_uniform_grid(&meta.bounds, &meta.shape)?;
        Field::new(Arc::new(grid), values, meta.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d(lo: f64, hi: f64, n: usize) -> Arc<Grid> {
        Arc::new(build_uniform_grid(&[(lo, hi)], &[n]).unwrap())
    }

    fn grid_2d() -> Arc<Grid> {
        Arc::new(build_uniform_grid(&[(0.0, 1.0), (0.0, 2.0)], &[21, 31]).unwrap())
    }

    #[test]
    fn uniform_grid_spacings_match_benchmarks() {
        let g = build_uniform_grid(&[(0.0, 1.0), (0.0, 1.0)], &[101, 101]).unwrap();
        assert!((g.spacing()[0] - 0.01).abs() < 1e-15);
        assert!((g.spacing()[1] - 0.01).abs() < 1e-15);

        let g = build_uniform_grid(&[(-8.0, 8.0), (0.0, 10.0)], &[256, 101]).unwrap();
        assert!((g.spacing()[0] - 16.0 / 255.0).abs() < 1e-15);
        assert!((g.spacing()[1] - 0.1).abs() < 1e-15);

        let g = build_uniform_grid(&[(0.0, 1.0)], &[2]).unwrap();
        assert_eq!(g.axis(0), &[0.0, 1.0]);
    }

    #[test]
    fn uniform_grid_rejects_bad_bounds() {
        assert!(build_uniform_grid(&[(1.0, 0.0)], &[10]).is_err());
        assert!(build_uniform_grid(&[(0.0, 1.0)], &[0]).is_err());
    }

    #[test]
    fn derivative_exact_for_quadratics() {
        let g = grid_1d(0.0, 1.0, 51);
        let f = Field::from_fn(g, "u", |c| c[0] * c[0]).unwrap();
        let d = differentiate(&f, &DerivativeSpec::new(vec![1]).unwrap()).unwrap();
        let max_err = d
            .values()
            .iter()
            .zip(d.grid().axis(0))
            .map(|(v, x)| (v - 2.0 * x).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-10, "max error {max_err}");
    }

    #[test]
    fn second_derivative_of_sine() {
        let g = grid_1d(0.0, 1.0, 101);
        let f = Field::from_fn(g, "u", |c| c[0].sin()).unwrap();
        let d = differentiate(&f, &DerivativeSpec::new(vec![2]).unwrap()).unwrap();
        let max_err = d
            .values()
            .iter()
            .zip(d.grid().axis(0))
            .map(|(v, x)| (v + x.sin()).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-3, "max error {max_err}");
    }

    #[test]
    fn zeroth_derivative_is_identity() {
        let g = grid_2d();
        let f = Field::from_fn(g, "u", |c| c[0] + 2.0 * c[1]).unwrap();
        let d = differentiate(&f, &DerivativeSpec::new(vec![0, 0]).unwrap()).unwrap();
        assert_eq!(d.values(), f.values());
    }

    #[test]
    fn differentiation_is_linear() {
        let g = grid_2d();
        let f = Field::from_fn(g.clone(), "f", |c| (c[0] * 3.0).sin() * c[1]).unwrap();
        let h = Field::from_fn(g.clone(), "h", |c| c[0] * c[1] * c[1]).unwrap();
        let combo = Field::new(
            g,
            f.values()
                .iter()
                .zip(h.values())
                .map(|(a, b)| 2.5 * a - 1.5 * b)
                .collect(),
            "combo",
        )
        .unwrap();
        let spec = DerivativeSpec::new(vec![1, 1]).unwrap();
        let df = differentiate(&f, &spec).unwrap();
        let dh = differentiate(&h, &spec).unwrap();
        let dcombo = differentiate(&combo, &spec).unwrap();
        for ((a, b), c) in df.values().iter().zip(dh.values()).zip(dcombo.values()) {
            assert!((2.5 * a - 1.5 * b - c).abs() < 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn mixed_partials_commute_on_polynomials() {
        let g = grid_2d();
        let f = Field::from_fn(g, "u", |c| c[0].powi(2) * c[1].powi(2) + 3.0 * c[0] * c[1]).unwrap();
        let a = differentiate(
            &differentiate(&f, &DerivativeSpec::new(vec![1, 0]).unwrap()).unwrap(),
            &DerivativeSpec::new(vec![0, 1]).unwrap(),
        )
        .unwrap();
        let b = differentiate(
            &differentiate(&f, &DerivativeSpec::new(vec![0, 1]).unwrap()).unwrap(),
            &DerivativeSpec::new(vec![1, 0]).unwrap(),
        )
        .unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn unsupported_order_errors() {
        assert!(DerivativeSpec::new(vec![5]).is_err());
        let g = grid_1d(0.0, 1.0, 4);
        let f = Field::from_fn(g, "u", |c| c[0]).unwrap();
        // Order 3 needs 5 points.
        assert!(differentiate(&f, &DerivativeSpec::new(vec![3]).unwrap()).is_err());
    }

    #[test]
    fn derivative_cache_returns_identical_results() {
        let g = grid_2d();
        let f = Field::from_fn(g, "u", |c| (c[0] + c[1]).sin()).unwrap();
        let cache = DerivativeCache::new(f.clone());
        let spec = DerivativeSpec::new(vec![0, 2]).unwrap();
        let direct = differentiate(&f, &spec).unwrap();
        let first = cache.get(&spec).unwrap();
        let second = cache.get(&spec).unwrap();
        assert_eq!(first.values(), direct.values());
        assert!(Arc::ptr_eq(&first, &second));
    }

    #[test]
    fn smoothing_reproduces_cubics() {
        let g = grid_1d(0.0, 1.0, 41);
        let f = Field::from_fn(g, "u", |c| 2.0 * c[0].powi(3) - c[0] + 0.5).unwrap();
        let s = smooth(&f, 5, 3).unwrap();
        for (a, b) in f.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn smoothing_window_one_is_identity() {
        let g = grid_1d(0.0, 1.0, 11);
        let f = Field::from_fn(g, "u", |c| c[0].exp()).unwrap();
        let s = smooth(&f, 1, 3).unwrap();
        assert_eq!(f.values(), s.values());
    }

    #[test]
    fn smoothing_rejects_bad_windows() {
        let g = grid_1d(0.0, 1.0, 11);
        let f = Field::from_fn(g, "u", |c| c[0]).unwrap();
        assert!(smooth(&f, 4, 2).is_err());
        assert!(smooth(&f, 13, 2).is_err());
        assert!(smooth(&f, 3, 3).is_err());
    }

    #[test]
    fn smoothing_reduces_noise_rms() {
        // Monte-Carlo over 100 seeds: SG(9, 3) must beat the raw noisy field.
        let g = grid_1d(0.0, 6.28, 201);
        let clean = Field::from_fn(g, "u", |c| c[0].sin()).unwrap();
        let mut improved = 0;
        for seed in 0..100u64 {
            let noisy = add_noise(&clean, 0.05, seed).unwrap();
            let smoothed = smooth(&noisy, 9, 3).unwrap();
            let rms = |f: &Field| {
                crate::numerics::rms(
                    &f.values()
                        .iter()
                        .zip(clean.values())
                        .map(|(a, b)| a - b)
                        .collect::<Vec<_>>(),
                )
            };
            if rms(&smoothed) < rms(&noisy) {
                improved += 1;
            }
        }
        assert!(improved >= 95, "smoothing improved only {improved}/100 runs");
    }

    #[test]
    fn noise_zero_magnitude_is_identity() {
        let g = grid_1d(0.0, 1.0, 32);
        let f = Field::from_fn(g, "u", |c| c[0] + 1.0).unwrap();
        let n = add_noise(&f, 0.0, 7).unwrap();
        assert_eq!(f.values(), n.values());
    }

    #[test]
    fn noise_leaves_zero_samples_unchanged() {
        let g = grid_1d(0.0, 1.0, 32);
        let f = Field::new(g, vec![0.0; 32], "u").unwrap();
        let n = add_noise(&f, 0.1, 3).unwrap();
        assert_eq!(n.values(), f.values());
    }

    #[test]
    fn noise_std_matches_definition() {
        // u ≡ 10, magnitude 0.1: deviations are N(0, 1).
        let g = Arc::new(build_uniform_grid(&[(0.0, 1.0), (0.0, 1.0)], &[100, 100]).unwrap());
        let f = Field::new(g, vec![10.0; 10_000], "u").unwrap();
        let n = add_noise(&f, 0.1, 11).unwrap();
        let dev: Vec<f64> = n.values().iter().map(|v| v - 10.0).collect();
        let sd = crate::numerics::std_dev(&dev);
        assert!((0.97..=1.03).contains(&sd), "std {sd}");
    }

    #[test]
    fn noise_is_seed_deterministic_and_seeds_independent() {
        let g = grid_1d(0.0, 1.0, 10_000);
        let f = Field::new(g, vec![1.0; 10_000], "u").unwrap();
        let a = add_noise(&f, 0.1, 5).unwrap();
        let b = add_noise(&f, 0.1, 5).unwrap();
        assert_eq!(a.values(), b.values());
        let c = add_noise(&f, 0.1, 6).unwrap();
        let da: Vec<f64> = a.values().iter().map(|v| v - 1.0).collect();
        let dc: Vec<f64> = c.values().iter().map(|v| v - 1.0).collect();
        let (sa, sc) = (crate::numerics::std_dev(&da), crate::numerics::std_dev(&dc));
        let cov: f64 = da.iter().zip(&dc).map(|(x, y)| x * y).sum::<f64>() / (da.len() - 1) as f64;
        let corr = cov / (sa * sc);
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }

    #[test]
    fn negative_noise_magnitude_is_rejected() {
        let g = grid_1d(0.0, 1.0, 8);
        let f = Field::from_fn(g, "u", |c| c[0]).unwrap();
        assert!(add_noise(&f, -0.1, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Arc::new(build_uniform_grid(&[(0.0, 2.0), (-1.0, 1.0)], &[5, 7]).unwrap());
        let f = Field::from_fn(g, "trip", |c| (c[0] * 1.7).sin() * (c[1] * 0.3).cos() / 3.0).unwrap();
        let vp = dir.path().join("values.csv");
        let mp = dir.path().join("meta.json");
        csv::save_field(&f, &vp, &mp).unwrap();
        let back = csv::load_field(&vp, &mp).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.name(), "trip");
        assert_eq!(back.grid().shape(), f.grid().shape());
    }

    #[test]
    fn csv_shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let vp = dir.path().join("values.csv");
        let mp = dir.path().join("meta.json");
        std::fs::write(&vp, "1.0,2.0\n3.0,4.0\n5.0,6.0\n").unwrap();
        std::fs::write(&mp, r#"{"bounds": [[0.0,1.0],[0.0,1.0]], "shape": [4,2], "name": "u"}"#).unwrap();
        let err = csv::load_field(&vp, &mp).unwrap_err();
        assert!(matches!(err, Error::Ingestion(_)), "{err}");

        std::fs::write(&vp, "1.0,2.0\n3.0,oops\n5.0,6.0\n").unwrap();
        std::fs::write(&mp, r#"{"bounds": [[0.0,1.0],[0.0,1.0]], "shape": [3,2], "name": "u"}"#).unwrap();
        let err = csv::load_field(&vp, &mp).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("column 2"), "{msg}");
    }
}
