//! Gaussian quadrature rules.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights for E f(Z), Z standard normal.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Orthonormal probabilists' Hermite values p_0..p_{n} at x.
fn hermite_orthonormal(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = x;
    }
    for k in 1..n {
        p[k + 1] = (x * p[k] - (k as f64).sqrt() * p[k - 1]) / ((k + 1) as f64).sqrt();
    }
    p
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            jac[(k - 1, k)] = b;
            jac[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jac);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let p = hermite_orthonormal(n, *x);
                let dp = (n as f64).sqrt() * p[n - 1];
                if dp != 0.0 {
                    *x -= p[n] / dp;
                }
            }
            let p = hermite_orthonormal(n, *x);
            let s: f64 = p[..n].iter().map(|v| v * v).sum();
            weights.push(1.0 / s);
        }
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        // enforce exact symmetry
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -x;
            nodes[j] = x;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }
}

/// Gauss–Legendre rule on [−1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let kf = k as f64;
            let b = kf / (4.0 * kf * kf - 1.0).sqrt();
            jac[(k - 1, k)] = b;
            jac[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jac);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Self { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
        r * self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(c + r * x)).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let gh = GaussHermite::new(64);
        assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((gh.expect(|z| z * z) - 1.0).abs() < 1e-12);
        assert!((gh.expect(|z| z.powi(4)) - 3.0).abs() < 1e-11);
        assert!((gh.expect(|z| z.powi(6)) - 15.0).abs() < 1e-10);
        // E cosh(x + aZ) = cosh(x) e^{a²/2}
        let (x, a) = (0.7, 1.3f64);
        assert!((gh.expect(|z| (x + a * z).cosh()) - x.cosh() * (a * a / 2.0).exp()).abs() < 1e-10);
    }

    #[test]
    fn legendre_polynomials() {
        let gl = GaussLegendre::new(20);
        assert!((gl.integrate(0.0, 1.0, |x| x.powi(5)) - 1.0 / 6.0).abs() < 1e-14);
        assert!((gl.integrate(0.0, 2.0, |x| x.exp()) - (2f64.exp() - 1.0)).abs() < 1e-12);
    }
}
