//! Gauss-Laguerre rules for `∫_0^∞ e^{-u} f(u) du`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Largest supported node count.
pub const MAX_NODES: usize = 256;

/// Nodes and weights of an `n`-point Gauss-Laguerre rule.
///
/// `scaled_weights[i] = weights[i] e^{nodes[i]}` integrates an integrand that
/// does not carry the `e^{-u}` factor itself.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub scaled_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_i f(u_i) ≈ ∫_0^∞ e^{-u} f(u) du`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * f(u))
            .sum()
    }
}

/// `(L_n(x), L_{n-1}(x))` by the three-term recurrence.
fn laguerre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 1.0;
    let mut cur = 1.0 - x;
    if n == 0 {
        return (prev, 0.0);
    }
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 - x) * cur - k * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Builds the rule from the Jacobi matrix eigenvalues, then polishes each node
/// with Newton steps on `L_n` and takes weights from
/// `w_i = 1/(u_i L_n'(u_i)²)`, evaluated in log space.
pub fn quad_rule(n: usize) -> Result<QuadratureRule> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::Validation(format!(
            "quadrature node count must be in 1..={MAX_NODES}, got {n}"
        )));
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0 * i as f64 + 1.0
        } else if i + 1 == j {
            j as f64
        } else if j + 1 == i {
            i as f64
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    let nf = n as f64;
    let mut weights = Vec::with_capacity(n);
    let mut scaled = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let (ln, lm1) = laguerre_pair(n, *x);
            let dl = nf * (ln - lm1) / *x;
            let step = ln / dl;
            *x -= step;
            if step.abs() <= 4.0 * f64::EPSILON * x.abs() {
                break;
            }
        }
        let (ln, lm1) = laguerre_pair(n, *x);
        let dl = nf * (ln - lm1) / *x;
        let log_w = -(x.ln() + 2.0 * dl.abs().ln());
        weights.push(log_w.exp());
        scaled.push((log_w + *x).exp());
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        scaled_weights: scaled,
    })
}
