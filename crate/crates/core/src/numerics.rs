//! Small numeric kernels shared across the crate: finite-difference weights,
//! Gauss–Hermite quadrature, dense least-squares solves and seed derivation.

use crate::error::{Error, Result};

/// Finite-difference weights on arbitrary nodes (Fornberg's recurrence).
///
/// Returns the weights `w` such that `sum_i w[i] * f(nodes[i])` approximates
/// the `order`-th derivative of `f` at `x0`, exact for polynomials of degree
/// `nodes.len() - 1`.
pub fn fd_weights(nodes: &[f64], x0: f64, order: usize) -> Vec<f64> {
    let n = nodes.len();
    assert!(n > order, "stencil needs more nodes than the derivative order");
    let m = order;
    // c[k][i]: weight of node i for the k-th derivative.
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c.swap_remove(m)
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for
/// `∫ f(z) e^{-z²} dz` over the real line.
///
/// Roots are found by Newton iteration on the orthonormal Hermite recurrence;
/// weights are the Christoffel numbers `1 / Σ_{k<n} h_k(x)²`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    // The Newton seeds below are reliable into the low hundreds; the crate
    // itself never needs more than ~160 nodes.
    assert!((2..=200).contains(&n), "gauss_hermite supports 2..=200 nodes");
    // Orthonormal Hermite value and derivative at x.
    let eval = |x: f64| -> (f64, f64) {
        let mut hkm1 = 0.0f64;
        let mut hk = 1.0 / std::f64::consts::PI.powf(0.25);
        for k in 0..n {
            let kf = k as f64;
            let hkp1 = x * (2.0 / (kf + 1.0)).sqrt() * hk - (kf / (kf + 1.0)).sqrt() * hkm1;
            hkm1 = hk;
            hk = hkp1;
        }
        let dh = (2.0 * n as f64).sqrt() * hkm1;
        (hk, dh)
    };
    let mut roots = Vec::with_capacity(n);
    let mut z = 0.0f64;
    for i in 0..(n + 1) / 2 {
        // Initial guesses from Numerical Recipes' gauher.
        z = match i {
            0 => ((2 * n + 1) as f64).sqrt() - 1.85575 * ((2 * n + 1) as f64).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * roots[0],
            3 => 1.91 * z - 0.91 * roots[1],
            _ => 2.0 * z - roots[i - 2],
        };
        for _ in 0..100 {
            let (h, dh) = eval(z);
            let dz = h / dh;
            z -= dz;
            if dz.abs() < 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        roots.push(z);
    }
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &r in roots.iter() {
        if r > 1e-14 {
            nodes.push(-r);
        }
    }
    if n % 2 == 1 {
        nodes.push(0.0);
    }
    for &r in roots.iter().rev() {
        if r > 1e-14 {
            nodes.push(r);
        }
    }
    for &x in &nodes {
        let mut hkm1 = 0.0f64;
        let mut hk = 1.0 / std::f64::consts::PI.powf(0.25);
        let mut sum = hk * hk;
        for k in 0..n - 1 {
            let kf = k as f64;
            let hkp1 = x * (2.0 / (kf + 1.0)).sqrt() * hk - (kf / (kf + 1.0)).sqrt() * hkm1;
            hkm1 = hk;
            hk = hkp1;
            sum += hk * hk;
        }
        weights.push(1.0 / sum);
    }
    (nodes, weights)
}

/// Solves the square system `a · x = b` in place by Gaussian elimination with
/// partial pivoting. `a` is row-major `n × n`.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < 1e-300 {
            return Err(Error::Numeric("singular matrix in dense solve".into()));
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / d;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * x[k];
        }
        x[col] = acc / a[col * n + col];
    }
    Ok(x)
}

/// Ordinary least squares `argmin ‖y - X c‖₂` via normal equations.
/// `x` is column-major: `x[j]` is the j-th column, all of length `y.len()`.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let p = x.len();
    if p == 0 {
        return Ok(Vec::new());
    }
    let n = y.len();
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for j in 0..p {
        assert_eq!(x[j].len(), n);
        for k in j..p {
            let mut s = 0.0;
            for i in 0..n {
                s += x[j][i] * x[k][i];
            }
            gram[j * p + k] = s;
            gram[k * p + j] = s;
        }
        let mut s = 0.0;
        for i in 0..n {
            s += x[j][i] * y[i];
        }
        rhs[j] = s;
    }
    solve_dense(&mut gram, &mut rhs, p)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Root mean square of a sample vector.
pub fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Deterministic, platform-independent seed mixing (splitmix64 over the
/// master seed and a list of tags). Used to hand every parallel task its own
/// RNG stream so results do not depend on scheduling.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master ^ 0x9e37_79b9_7f4a_7c15;
    let mut mix = |v: u64| {
        state = state.wrapping_add(v).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    };
    for &t in tags {
        mix(t);
    }
    mix(0x5bf0_3635);
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_weights_first_derivative_central() {
        let w = fd_weights(&[-1.0, 0.0, 1.0], 0.0, 1);
        assert!((w[0] + 0.5).abs() < 1e-14);
        assert!(w[1].abs() < 1e-14);
        assert!((w[2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn fd_weights_one_sided_second_order() {
        // Forward 3-point first derivative: (-3f0 + 4f1 - f2) / 2.
        let w = fd_weights(&[0.0, 1.0, 2.0], 0.0, 1);
        assert!((w[0] + 1.5).abs() < 1e-13);
        assert!((w[1] - 2.0).abs() < 1e-13);
        assert!((w[2] + 0.5).abs() < 1e-13);
    }

    #[test]
    fn fd_weights_exact_for_polynomials() {
        // 5-node stencil differentiates degree-4 polynomials exactly.
        let nodes = [0.0, 0.7, 1.1, 2.3, 3.1];
        for order in 1..=3usize {
            let w = fd_weights(&nodes, 1.1, order);
            let f = |x: f64| 2.0 * x.powi(4) - x.powi(3) + 0.5 * x * x - 3.0;
            let exact = match order {
                1 => 8.0 * 1.1f64.powi(3) - 3.0 * 1.1f64.powi(2) + 1.1,
                2 => 24.0 * 1.1f64.powi(2) - 6.0 * 1.1 + 1.0,
                _ => 48.0 * 1.1 - 6.0,
            };
            let approx: f64 = nodes.iter().zip(&w).map(|(&x, &wi)| wi * f(x)).sum();
            assert!(
                (approx - exact).abs() < 1e-9 * exact.abs().max(1.0),
                "order {order}: {approx} vs {exact}"
            );
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        let pi = std::f64::consts::PI;
        for &n in &[8usize, 32, 96, 160] {
            let (x, w) = gauss_hermite(n);
            assert_eq!(x.len(), n);
            assert!(x.windows(2).all(|p| p[0] < p[1]), "nodes not ascending for n={n}");
            let m0: f64 = w.iter().sum();
            let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
            let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
            assert!((m0 - pi.sqrt()).abs() < 1e-12, "n={n} m0={m0}");
            assert!((m2 - pi.sqrt() / 2.0).abs() < 1e-12);
            assert!((m4 - 0.75 * pi.sqrt()).abs() < 1e-11);
        }
    }

    #[test]
    fn gauss_hermite_smooth_integrand() {
        // ∫ e^{-z²} cos(2z) dz = √π e^{-1}
        let (x, w) = gauss_hermite(64);
        let got: f64 = x.iter().zip(&w).map(|(x, w)| w * (2.0 * x).cos()).sum();
        let exact = std::f64::consts::PI.sqrt() * (-1.0f64).exp();
        assert!((got - exact).abs() < 1e-13);
    }

    #[test]
    fn least_squares_recovers_coefficients() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 10.0).collect();
        let cols = vec![
            xs.iter().map(|_| 1.0).collect::<Vec<_>>(),
            xs.clone(),
            xs.iter().map(|x| x * x).collect::<Vec<_>>(),
        ];
        let y: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x + 0.5 * x * x).collect();
        let c = least_squares(&cols, &y).unwrap();
        assert!((c[0] - 3.0).abs() < 1e-10);
        assert!((c[1] + 2.0).abs() < 1e-10);
        assert!((c[2] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn derive_seed_is_stable_and_spread() {
        let a = derive_seed(42, &[1, 2, 3]);
        let b = derive_seed(42, &[1, 2, 3]);
        let c = derive_seed(42, &[1, 2, 4]);
        let d = derive_seed(43, &[1, 2, 3]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
