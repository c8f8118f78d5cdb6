//! Built-in generators for the benchmark problems and CSV ingestion.
//!
//! All generators are deterministic and return the field together with the
//! ground-truth equation in one-side form: the balance (lhs) term carries
//! coefficient −1 by convention, so e.g. viscous Burgers
//! `u_t + u u_x − 0.1 u_xx = 0` is stored as lhs `du/dt` with terms
//! `{u·u_x: −1.0, u_xx: +0.1}`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::field::{build_uniform_grid, csv, Field};
use crate::numerics::gauss_hermite;

/// Identifier of a built-in benchmark problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquationId {
    ViscousBurgers,
    Kdv,
    Wave,
    InviscidBurgers,
}

impl EquationId {
    pub const ALL: [EquationId; 4] = [
        EquationId::ViscousBurgers,
        EquationId::Kdv,
        EquationId::Wave,
        EquationId::InviscidBurgers,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EquationId::ViscousBurgers => "viscous-burgers",
            EquationId::Kdv => "kdv",
            EquationId::Wave => "wave",
            EquationId::InviscidBurgers => "inviscid-burgers",
        }
    }
}

impl std::str::FromStr for EquationId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viscous-burgers" => Ok(EquationId::ViscousBurgers),
            "kdv" => Ok(EquationId::Kdv),
            "wave" => Ok(EquationId::Wave),
            "inviscid-burgers" => Ok(EquationId::InviscidBurgers),
            other => Err(Error::Config(format!(
                "unknown equation id '{other}' (expected viscous-burgers|kdv|wave|inviscid-burgers)"
            ))),
        }
    }
}

impl std::fmt::Display for EquationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Reference equation in one-side form. Term identities are sorted token
/// label multisets; the lhs coefficient is −1 by convention and not stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Label of the balance term (always a single token here).
    pub lhs: String,
    /// (sorted label multiset, coefficient) of every right-hand term.
    pub terms: Vec<(Vec<String>, f64)>,
}

impl GroundTruth {
    fn new(lhs: &str, terms: Vec<(Vec<&str>, f64)>) -> Self {
        let mut out = Vec::with_capacity(terms.len());
        for (labels, c) in terms {
            let mut ls: Vec<String> = labels.into_iter().map(String::from).collect();
            ls.sort();
            out.push((ls, c));
        }
        GroundTruth { lhs: lhs.into(), terms: out }
    }

    /// Full one-side structure including the lhs term with coefficient −1.
    pub fn one_side(&self) -> Vec<(Vec<String>, f64)> {
        let mut all = vec![(vec![self.lhs.clone()], -1.0)];
        all.extend(self.terms.iter().cloned());
        all
    }
}

/// Dispatches to the matching generator.
pub fn generate(id: EquationId) -> Result<(Field, GroundTruth)> {
    match id {
        EquationId::ViscousBurgers => gen_viscous_burgers(),
        EquationId::Kdv => gen_kdv_soliton(),
        EquationId::Wave => gen_wave(),
        EquationId::InviscidBurgers => gen_inviscid_burgers(),
    }
}

/// Viscous Burgers `u_t + u u_x = 0.1 u_xx` on [0,10]×[−8,8], 101×256,
/// from the Cole–Hopf closed form with a unit Gaussian initial hump.
pub fn gen_viscous_burgers() -> Result<(Field, GroundTruth)> {
    let nu = 0.1;
    let grid = Arc::new(build_uniform_grid(&[(0.0, 10.0), (-8.0, 8.0)], &[101, 256])?);
    let (nodes, weights) = gauss_hermite(96);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    // φ₀(y) = exp(−F(y)/(2ν)) with F(y) = ∫₀^y e^{−s²} ds = (√π/2)·erf(y).
    let phi0 = |y: f64| (-(sqrt_pi / 2.0) * libm::erf(y) / (2.0 * nu)).exp();
    let n_t = grid.shape()[0];
    let n_x = grid.shape()[1];
    let t_axis = grid.axis(0).to_vec();
    let x_axis = grid.axis(1).to_vec();
    let rows = exec::map_indexed(n_t, |it| {
        let t = t_axis[it];
        let mut row = vec![0.0f64; n_x];
        for (ix, slot) in row.iter_mut().enumerate() {
            let x = x_axis[ix];
            if t == 0.0 {
                *slot = (-x * x).exp();
            } else {
                let scale = 2.0 * (nu * t).sqrt();
                let mut num = 0.0;
                let mut den = 0.0;
                for (&z, &w) in nodes.iter().zip(&weights) {
                    let p = w * phi0(x - scale * z);
                    num += p * z;
                    den += p;
                }
                *slot = 2.0 * (nu / t).sqrt() * num / den;
            }
        }
        row
    });
    let values: Vec<f64> = rows.into_concat();
    let field = Field::new(grid, values, "u")?;
    let truth = GroundTruth::new(
        "du/dt",
        vec![(vec!["u", "du/dx"], -1.0), (vec!["d^2u/dx^2"], 0.1)],
    );
    Ok((field, truth))
}

/// KdV `u_t + 6 u u_x + u_xxx = 0` on [0,20]×[−30,30], 201×512: the analytic
/// soliton `u = (c/2)·sech²(√c/2·(x − c t − x₀))` with c = 1, x₀ = −15.
pub fn gen_kdv_soliton() -> Result<(Field, GroundTruth)> {
    let c = 1.0f64;
    let x0 = -15.0;
    let k = c.sqrt() / 2.0;
    let grid = Arc::new(build_uniform_grid(&[(0.0, 20.0), (-30.0, 30.0)], &[201, 512])?);
    let field = Field::from_fn(grid, "u", |coord| {
        let (t, x) = (coord[0], coord[1]);
        let s = 1.0 / (k * (x - c * t - x0)).cosh();
        c / 2.0 * s * s
    })?;
    let truth = GroundTruth::new(
        "du/dt",
        vec![(vec!["u", "du/dx"], -6.0), (vec!["d^3u/dx^3"], -1.0)],
    );
    Ok((field, truth))
}

/// Mollification scale (in x units) applied to the wave initial data.
const WAVE_MOLLIFIER_SIGMA: f64 = 0.04;

/// Initial profile of the wave problem.
fn wave_ic(x: f64) -> f64 {
    let s = (x * (x - 1.0) / 10.0).sin();
    1e4 * s * s
}

fn wave_ic_velocity(x: f64) -> f64 {
    let s = (x * (x - 1.0) / 10.0).sin();
    1e3 * s * s
}

/// Gaussian low-pass over the odd periodic extension of a line sampled on
/// [0, 1]. Odd symmetry keeps the endpoints exactly zero, and convolution
/// commutes with the wave operator, so a solution stays a solution.
fn mollify_odd(line: &[f64], sigma_cells: f64) -> Vec<f64> {
    let n = line.len();
    let period = 2 * (n - 1);
    let radius = (4.0 * sigma_cells).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for k in -radius..=radius {
        kernel.push((-0.5 * (k as f64 / sigma_cells).powi(2)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    let sample = |j: isize| -> f64 {
        // Odd extension with period 2(n−1): reflect with sign flip.
        let mut m = j.rem_euclid(period as isize) as usize;
        if m >= n {
            m = period - m;
            -line[m]
        } else {
            line[m]
        }
    };
    (0..n as isize)
        .map(|j| {
            let mut acc = 0.0;
            for (idx, k) in (-radius..=radius).enumerate() {
                acc += kernel[idx] * sample(j + k);
            }
            acc / norm
        })
        .collect()
}

/// Wave equation `u_tt = (1/25) u_xx` on [0,1]², 101×101, via an explicit
/// leapfrog solver on an 8× refined grid, down-sampled to the output grid.
///
/// The stated initial data is second-order incompatible with the fixed
/// boundaries (its curvature does not vanish at the corners), which would
/// put a curvature discontinuity on the characteristics from (0,0) and
/// (1,0). The initial profiles are therefore mollified by an odd-symmetric
/// Gaussian before time stepping; boundary zeros remain exact and the
/// output is an exact solution of the equation for the mollified data.
pub fn gen_wave() -> Result<(Field, GroundTruth)> {
    let refine = 8usize;
    let n_coarse = 101usize;
    let n_fine = (n_coarse - 1) * refine + 1;
    let dx = 1.0 / (n_fine - 1) as f64;
    let dt = dx;
    let c2 = 1.0 / 25.0;
    let lam2 = c2 * dt * dt / (dx * dx);
    if lam2.sqrt() > 0.5 {
        return Err(Error::Numeric(format!("CFL number {} exceeds 0.5", lam2.sqrt())));
    }
    let sigma_cells = WAVE_MOLLIFIER_SIGMA / dx;
    let xs: Vec<f64> = (0..n_fine).map(|j| j as f64 * dx).collect();
    let ic: Vec<f64> = xs.iter().map(|&x| wave_ic(x)).collect();
    let velocity_raw: Vec<f64> = xs.iter().map(|&x| wave_ic_velocity(x)).collect();
    let mut prev = mollify_odd(&ic, sigma_cells);
    let mut velocity = mollify_odd(&velocity_raw, sigma_cells);
    // Odd filtering leaves the endpoints zero up to rounding; pin them.
    prev[0] = 0.0;
    prev[n_fine - 1] = 0.0;
    velocity[0] = 0.0;
    velocity[n_fine - 1] = 0.0;
    // Second-order accurate first step using the initial velocity.
    let mut curr = vec![0.0f64; n_fine];
    for j in 1..n_fine - 1 {
        curr[j] = prev[j]
            + dt * velocity[j]
            + 0.5 * lam2 * (prev[j + 1] - 2.0 * prev[j] + prev[j - 1]);
    }
    let mut coarse = Vec::with_capacity(n_coarse * n_coarse);
    let sample = |row: &[f64], out: &mut Vec<f64>| {
        for j in (0..n_fine).step_by(refine) {
            out.push(row[j]);
        }
    };
    sample(&prev, &mut coarse);
    let mut next = vec![0.0f64; n_fine];
    for step in 1..n_fine {
        if step % refine == 0 {
            sample(&curr, &mut coarse);
        }
        if step == n_fine - 1 {
            break;
        }
        for j in 1..n_fine - 1 {
            next[j] = 2.0 * curr[j] - prev[j] + lam2 * (curr[j + 1] - 2.0 * curr[j] + curr[j - 1]);
        }
        next[0] = 0.0;
        next[n_fine - 1] = 0.0;
        std::mem::swap(&mut prev, &mut curr);
        std::mem::swap(&mut curr, &mut next);
    }
    let grid = Arc::new(build_uniform_grid(&[(0.0, 1.0), (0.0, 1.0)], &[n_coarse, n_coarse])?);
    let field = Field::new(grid, coarse, "u")?;
    let truth = GroundTruth::new("d^2u/dt^2", vec![(vec!["d^2u/dx^2"], 1.0 / 25.0)]);
    Ok((field, truth))
}

fn inviscid_profile(x: f64) -> f64 {
    500.0 * (1.0 - (x / 500.0).tanh())
}

fn inviscid_profile_slope(x: f64) -> f64 {
    let c = (x / 500.0).cosh();
    -1.0 / (c * c)
}

/// Inviscid Burgers `u_t + u u_x = 0` on a pre-shock window
/// [0,0.2]×[−2000,2000], 101×101: the characteristics solution
/// `u = f(x − u t)` for `f(x) = 500·(1 − tanh(x/500))`, solved pointwise by
/// damped Newton iteration.
pub fn gen_inviscid_burgers() -> Result<(Field, GroundTruth)> {
    let grid = Arc::new(build_uniform_grid(&[(0.0, 0.2), (-2000.0, 2000.0)], &[101, 101])?);
    let n_t = grid.shape()[0];
    let n_x = grid.shape()[1];
    let t_axis = grid.axis(0).to_vec();
    let x_axis = grid.axis(1).to_vec();
    let rows: Vec<Result<Vec<f64>>> = exec::map_indexed(n_t, |it| {
        let t = t_axis[it];
        let mut row = vec![0.0f64; n_x];
        for (ix, slot) in row.iter_mut().enumerate() {
            let x = x_axis[ix];
            let mut u = inviscid_profile(x);
            let mut residual = u - inviscid_profile(x - u * t);
            let mut ok = false;
            for _ in 0..100 {
                if residual.abs() < 1e-11 {
                    ok = true;
                    break;
                }
                let slope = 1.0 + t * inviscid_profile_slope(x - u * t);
                let mut step = residual / slope;
                // Damping: halve the step until the residual shrinks.
                for _ in 0..40 {
                    let cand = u - step;
                    let r = cand - inviscid_profile(x - cand * t);
                    if r.abs() <= residual.abs() {
                        u = cand;
                        residual = r;
                        break;
                    }
                    step *= 0.5;
                }
            }
            if !ok && residual.abs() >= 1e-11 {
                return Err(Error::Generation(format!(
                    "Newton did not converge at (t={t}, x={x}); window is past the shock"
                )));
            }
            *slot = u;
        }
        Ok(row)
    });
    let mut values = Vec::with_capacity(n_t * n_x);
    for row in rows {
        values.extend(row?);
    }
    let field = Field::new(grid, values, "u")?;
    let truth = GroundTruth::new("du/dt", vec![(vec!["u", "du/dx"], -1.0)]);
    Ok((field, truth))
}

/// Loads a field from a values CSV plus its JSON metadata sidecar.
pub fn load_csv(path_values: &Path, path_meta: &Path) -> Result<Field> {
    csv::load_field(path_values, path_meta)
}

/// Writes a field as values CSV plus JSON metadata sidecar.
pub fn save_csv(field: &Field, path_values: &Path, path_meta: &Path) -> Result<()> {
    csv::save_field(field, path_values, path_meta)
}

trait Concat {
    fn into_concat(self) -> Vec<f64>;
}

impl Concat for Vec<Vec<f64>> {
    fn into_concat(self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.iter().map(Vec::len).sum());
        for row in self {
            out.extend(row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn viscous_burgers_shape_and_bounds() {
        let (f, truth) = gen_viscous_burgers().unwrap();
        assert_eq!(f.grid().shape(), &[101, 256]);
        // Parabolic maximum principle: |u| stays below the initial amplitude.
        let max = f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1.0 + 1e-9, "max {max}");
        assert!(f.values().iter().all(|v| v.is_finite()));
        assert_eq!(truth.lhs, "du/dt");
        // t = 0 row is the Gaussian hump.
        for (ix, &x) in f.grid().axis(1).iter().enumerate() {
            assert!((f.values()[ix] - (-x * x).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn viscous_burgers_quadrature_matches_simpson_oracle() {
        // Independent check of the Cole–Hopf evaluation: brute-force Simpson
        // integration in the original y variable vs the Gauss–Hermite rule.
        let nu = 0.1f64;
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let phi0 = |y: f64| (-(sqrt_pi / 2.0) * libm::erf(y) / (2.0 * nu)).exp();
        let gh = |n: usize, x: f64, t: f64| {
            let (nodes, weights) = gauss_hermite(n);
            let scale = 2.0 * (nu * t).sqrt();
            let (mut num, mut den) = (0.0, 0.0);
            for (&z, &w) in nodes.iter().zip(&weights) {
                let p = w * phi0(x - scale * z);
                num += p * z;
                den += p;
            }
            2.0 * (nu / t).sqrt() * num / den
        };
        let simpson = |x: f64, t: f64| {
            // u = ∫ ((x−y)/t) K φ₀ dy / ∫ K φ₀ dy, K the heat kernel.
            let width = (4.0 * nu * t).sqrt();
            let lo = x - 14.0 * width;
            let hi = x + 14.0 * width;
            let n = 20_000usize;
            let h = (hi - lo) / n as f64;
            let integrand = |y: f64| {
                let k = (-(x - y) * (x - y) / (4.0 * nu * t)).exp();
                let p = k * phi0(y);
                (p * (x - y) / t, p)
            };
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..=n {
                let y = lo + h * i as f64;
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let (a, b) = integrand(y);
                num += w * a;
                den += w * b;
            }
            num / den
        };
        for &(x, t) in &[(0.5, 0.1), (1.5, 1.0), (3.0, 5.0), (-2.0, 10.0)] {
            let a = gh(96, x, t);
            let b = simpson(x, t);
            assert!((a - b).abs() < 1e-7, "GH disagrees with Simpson at ({x},{t}): {a} vs {b}");
        }
    }

    #[test]
    fn kdv_shape_and_peak() {
        let (f, truth) = gen_kdv_soliton().unwrap();
        assert_eq!(f.grid().shape(), &[201, 512]);
        assert_eq!(truth.terms.len(), 2);
        // Peak tracks x = c t + x₀ with height c/2.
        let n_x = 512;
        for &it in &[0usize, 50, 100, 200] {
            let t = f.grid().axis(0)[it];
            let row = &f.values()[it * n_x..(it + 1) * n_x];
            let (ix_max, max) = row
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            let x_peak = f.grid().axis(1)[ix_max];
            let dx = f.grid().spacing()[1];
            assert!((x_peak - (t - 15.0)).abs() <= dx, "peak at {x_peak}, expected {}", t - 15.0);
            assert!((max - 0.5).abs() < 1e-3, "peak height {max}");
        }
    }

    #[test]
    fn wave_boundary_and_initial_conditions() {
        let (f, truth) = gen_wave().unwrap();
        assert_eq!(f.grid().shape(), &[101, 101]);
        assert_eq!(truth.lhs, "d^2u/dt^2");
        let n = 101;
        for it in 0..n {
            assert_eq!(f.values()[it * n], 0.0, "u(0, t) != 0 at row {it}");
            assert_eq!(f.values()[it * n + n - 1], 0.0, "u(1, t) != 0 at row {it}");
        }
        // The t=0 row reproduces the stated profile up to the mollification
        // scale (the raw data is boundary-incompatible at second order).
        let amplitude = f.values()[..n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (ix, &x) in f.grid().axis(1).iter().enumerate() {
            let expect = wave_ic(x);
            assert!(
                (f.values()[ix] - expect).abs() < 0.03 * amplitude,
                "IC mismatch at x={x}: {} vs {expect}",
                f.values()[ix]
            );
        }
    }

    #[test]
    fn inviscid_burgers_t0_row_and_implicit_relation() {
        let (f, _) = gen_inviscid_burgers().unwrap();
        assert_eq!(f.grid().shape(), &[101, 101]);
        for (ix, &x) in f.grid().axis(1).iter().enumerate() {
            assert_eq!(f.values()[ix], inviscid_profile(x), "t=0 row at x={x}");
        }
        // Newton residual oracle at every grid point.
        let n_x = 101;
        for it in 0..101 {
            let t = f.grid().axis(0)[it];
            for ix in 0..n_x {
                let x = f.grid().axis(1)[ix];
                let u = f.values()[it * n_x + ix];
                assert!(
                    (u - inviscid_profile(x - u * t)).abs() < 1e-10,
                    "implicit relation violated at ({t}, {x})"
                );
            }
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let (a, _) = gen_inviscid_burgers().unwrap();
        let (b, _) = gen_inviscid_burgers().unwrap();
        assert_eq!(a.values(), b.values());
        let (a, _) = gen_viscous_burgers().unwrap();
        let (b, _) = gen_viscous_burgers().unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn equation_id_round_trip() {
        for id in EquationId::ALL {
            let parsed: EquationId = id.name().parse().unwrap();
            assert_eq!(parsed, id);
        }
        assert!("heat".parse::<EquationId>().is_err());
    }
}
