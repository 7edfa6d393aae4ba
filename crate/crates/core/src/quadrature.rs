//! Gauss–Hermite rules for the standard normal weight `exp(-x²/2)/√(2π)`.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of the `n`-point probabilists' Gauss–Hermite rule.
///
/// Weights sum to one, so `Σ w_i g(x_i)` approximates `E[g(Z)]` for
/// `Z ~ N(0, 1)`; the rule is exact for polynomials of degree `< 2n`.
/// Nodes come out sorted and exactly symmetric.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    // Golub–Welsch start: Jacobi matrix of the monic recurrence.
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Newton polish on the orthonormal recurrence, then weights from
    // w_i = 1 / (n p_{n-1}(x_i)^2).
    let mut weights = vec![0.0; n];
    for (x, w) in nodes.iter_mut().zip(weights.iter_mut()) {
        for _ in 0..3 {
            let (pn, pn1) = orthonormal_hermite(n, *x);
            *x -= pn / ((n as f64).sqrt() * pn1);
        }
        let (_, pn1) = orthonormal_hermite(n, *x);
        *w = 1.0 / (n as f64 * pn1 * pn1);
    }

    // Enforce exact symmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    (nodes, weights)
}

/// Returns `(p_n(x), p_{n-1}(x))` with `p_k = He_k / √(k!)`.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}
