//! Spectral gaps of reversible kernels through the symmetrized generator
//! L = I − D^{1/2} Q D^{−1/2}, whose null vector is √π.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::ChainKernel;
use crate::error::{Error, Result};

/// Largest dimension handled by dense diagonalization.
pub const DENSE_MAX: usize = 512;
pub const ITERATIVE_TOL: f64 = 1e-8;

pub trait SymOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64], out: &mut [f64]);
    /// Unit null vector.
    fn null_vector(&self) -> Vec<f64>;
}

/// Symmetrized generator of a reversible kernel in CSR form. Off-diagonal
/// entries are −√(π_x/π_y) Q(x,y); the diagonal is the escape rate Σ_{y≠x} Q(x,y).
#[derive(Clone, Debug)]
pub struct SymGenerator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    off: Vec<f64>,
    diag: Vec<f64>,
    sqrt_pi: Vec<f64>,
}

impl SymGenerator {
    pub fn from_kernel(k: &ChainKernel) -> Self {
        let n = k.n_states;
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut off = Vec::new();
        let mut diag = vec![0.0; n];
        for x in 0..n {
            for (y, q) in k.row(x) {
                if y == x {
                    continue;
                }
                diag[x] += q;
                col_idx.push(y);
                off.push(-q * (0.5 * (k.log_weight[x] - k.log_weight[y])).exp());
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, off, diag, sqrt_pi: k.sqrt_pi() }
    }

    #[inline]
    fn row_apply(&self, x: usize, v: &[f64]) -> f64 {
        let mut acc = self.diag[x] * v[x];
        for p in self.row_ptr[x]..self.row_ptr[x + 1] {
            acc += self.off[p] * v[self.col_idx[p]];
        }
        acc
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for x in 0..self.n {
            m[(x, x)] = self.diag[x];
            for p in self.row_ptr[x]..self.row_ptr[x + 1] {
                m[(x, self.col_idx[p])] = self.off[p];
            }
        }
        m
    }
}

impl SymOperator for SymGenerator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(x, o)| *o = self.row_apply(x, v));
    }

    fn null_vector(&self) -> Vec<f64> {
        self.sqrt_pi.clone()
    }
}

/// ½(L⊗I + I⊗L) applied without materializing the product space.
pub struct ReplicatedGenerator<'a> {
    pub single: &'a SymGenerator,
}

impl SymOperator for ReplicatedGenerator<'_> {
    fn dim(&self) -> usize {
        self.single.n * self.single.n
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let m = self.single.n;
        let l = self.single;
        out.par_chunks_mut(m).enumerate().for_each(|(x1, row)| {
            let vrow = &v[x1 * m..(x1 + 1) * m];
            for (x2, o) in row.iter_mut().enumerate() {
                *o = 0.5 * l.row_apply(x2, vrow);
            }
            let d = 0.5 * l.diag[x1];
            for (o, &vv) in row.iter_mut().zip(vrow) {
                *o += d * vv;
            }
            for p in l.row_ptr[x1]..l.row_ptr[x1 + 1] {
                let c = 0.5 * l.off[p];
                let y = l.col_idx[p];
                for (o, &vv) in row.iter_mut().zip(&v[y * m..(y + 1) * m]) {
                    *o += c * vv;
                }
            }
        });
    }

    fn null_vector(&self) -> Vec<f64> {
        let s = &self.single.sqrt_pi;
        let mut out = Vec::with_capacity(s.len() * s.len());
        for &a in s {
            out.extend(s.iter().map(|b| a * b));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigenMethod {
    Dense,
    Lanczos,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapResult {
    pub gap: f64,
    /// ‖Lv − gap·v‖ for the returned unit vector.
    pub residual: f64,
    pub method: EigenMethod,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual(op: &dyn SymOperator, v: &[f64], theta: f64) -> f64 {
    let mut w = vec![0.0; v.len()];
    op.apply(v, &mut w);
    w.iter().zip(v).map(|(a, b)| (a - theta * b).powi(2)).sum::<f64>().sqrt()
}

fn dense_gap(op: &dyn SymOperator, dense: Option<DMatrix<f64>>) -> Result<GapResult> {
    let n = op.dim();
    let mut m = match dense {
        Some(m) => m,
        None => {
            let mut m = DMatrix::zeros(n, n);
            let mut e = vec![0.0; n];
            let mut col = vec![0.0; n];
            for j in 0..n {
                e[j] = 1.0;
                op.apply(&e, &mut col);
                e[j] = 0.0;
                for i in 0..n {
                    m[(i, j)] = col[i];
                }
            }
            m
        }
    };
    // push the null direction to the top of the spectrum
    let u = op.null_vector();
    let shift = 2.0 + m.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += shift * u[i] * u[j];
        }
    }
    let eig = SymmetricEigen::new(m);
    let (k, &gap) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .ok_or_else(|| Error::Degenerate("empty operator".into()))?;
    let v: Vec<f64> = eig.eigenvectors.column(k).iter().cloned().collect();
    Ok(GapResult { gap, residual: residual(op, &v, gap), method: EigenMethod::Dense, iterations: 0 })
}

/// Lanczos with full reorthogonalization on the complement of the null
/// vector, restarted from the current Ritz vector.
fn lanczos_gap(op: &dyn SymOperator, tol: f64, seed: u64) -> Result<GapResult> {
    let n = op.dim();
    let u = op.null_vector();
    let max_basis = 300.min(n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut total = 0;
    let mut best = (f64::INFINITY, f64::INFINITY);
    for _restart in 0..20 {
        let c = dot(&start, &u);
        start.iter_mut().zip(&u).for_each(|(s, a)| *s -= c * a);
        let nrm = dot(&start, &start).sqrt();
        start.iter_mut().for_each(|s| *s /= nrm);
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = vec![0.0; n];
        let mut ritz: Option<(f64, Vec<f64>)> = None;
        for j in 0..max_basis {
            op.apply(&basis[j], &mut w);
            total += 1;
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            for _ in 0..2 {
                let c = dot(&w, &u);
                w.iter_mut().zip(&u).for_each(|(x, y)| *x -= c * y);
                let coefs: Vec<f64> = basis.par_iter().map(|b| dot(&w, b)).collect();
                for (b, c) in basis.iter().zip(coefs) {
                    w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = dot(&w, &w).sqrt();
            let last = j + 1 == max_basis || b < 1e-13;
            if (j + 1) % 20 == 0 || last {
                let k = alpha.len();
                let t = DMatrix::from_fn(k, k, |r, c| {
                    if r == c {
                        alpha[r]
                    } else if r + 1 == c {
                        beta[r]
                    } else if c + 1 == r {
                        beta[c]
                    } else {
                        0.0
                    }
                });
                let eig = SymmetricEigen::new(t);
                let (i, &theta) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap();
                let s = eig.eigenvectors.column(i);
                let bound = b * s[k - 1].abs();
                if bound < tol || last {
                    let mut y = vec![0.0; n];
                    for (bv, &si) in basis.iter().zip(s.iter()) {
                        y.iter_mut().zip(bv).for_each(|(a, v)| *a += si * v);
                    }
                    let ny = dot(&y, &y).sqrt();
                    y.iter_mut().for_each(|a| *a /= ny);
                    ritz = Some((theta, y));
                    if bound < tol || b < 1e-13 {
                        break;
                    }
                }
            }
            if last {
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let (theta, y) = ritz.expect("Ritz pair computed at the end of each cycle");
        let r = residual(op, &y, theta);
        if r < best.1 {
            best = (theta, r);
        }
        if r < tol {
            return Ok(GapResult { gap: theta, residual: r, method: EigenMethod::Lanczos, iterations: total });
        }
        start = y;
    }
    if best.1 < 100.0 * tol {
        return Ok(GapResult { gap: best.0, residual: best.1, method: EigenMethod::Lanczos, iterations: total });
    }
    Err(Error::NoConvergence(format!("Lanczos residual {:.3e} after {total} matvecs", best.1)))
}

/// Smallest nonzero eigenvalue of a symmetric generator: dense up to
/// DENSE_MAX, Lanczos above.
pub fn smallest_nonzero(op: &dyn SymOperator, seed: u64) -> Result<GapResult> {
    if op.dim() < 2 {
        return Err(Error::Degenerate("operator has no nontrivial spectrum".into()));
    }
    if op.dim() <= DENSE_MAX {
        dense_gap(op, None)
    } else {
        lanczos_gap(op, ITERATIVE_TOL * 1e-2, seed)
    }
}

/// λ₁ of I − Q for a materialized reversible kernel.
pub fn spectral_gap(k: &ChainKernel) -> Result<GapResult> {
    let g = SymGenerator::from_kernel(k);
    if g.dim() <= DENSE_MAX {
        let d = g.to_dense();
        dense_gap(&g, Some(d))
    } else {
        smallest_nonzero(&g, 0)
    }
}

/// Λ₁ of the replicated chain through the Kronecker-sum operator.
pub fn replicated_gap(k: &ChainKernel) -> Result<GapResult> {
    if k.replicated {
        return Err(Error::Domain("pass the single-chain kernel".into()));
    }
    let g = SymGenerator::from_kernel(k);
    smallest_nonzero(&ReplicatedGenerator { single: &g }, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::kernel::{build_metropolis, build_replicated};
    use crate::model::{sample_hamiltonian, HamiltonianTable, MixtureSpec};

    #[test]
    fn srw_gap() {
        for n in [3, 4, 6] {
            let k = build_metropolis(&HamiltonianTable::zeros(n), false).unwrap();
            assert!((spectral_gap(&k).unwrap().gap - 2.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn two_state_chain() {
        let mut t = HamiltonianTable::zeros(1);
        t.values = vec![0.7, -0.7];
        let k = build_metropolis(&t, false).unwrap();
        // eigenvalues of Q are 1 and 1 − Q01 − Q10
        let expect = k.entry(0, 1) + k.entry(1, 0);
        assert!((spectral_gap(&k).unwrap().gap - expect).abs() < 1e-14);
    }

    #[test]
    fn replicated_operator_matches_materialized() {
        let spec = MixtureSpec::sk(1.2, 0.1).unwrap();
        let t = sample_hamiltonian(&spec, 4, 9).unwrap();
        let k = build_metropolis(&t, false).unwrap();
        let r = build_replicated(&k).unwrap();
        let g = SymGenerator::from_kernel(&k);
        let op = ReplicatedGenerator { single: &g };
        let gr = SymGenerator::from_kernel(&r);
        let v: Vec<f64> = (0..256).map(|i| ((i * 37 % 101) as f64).sin()).collect();
        let (mut a, mut b) = (vec![0.0; 256], vec![0.0; 256]);
        op.apply(&v, &mut a);
        gr.apply(&v, &mut b);
        for i in 0..256 {
            assert!((a[i] - b[i]).abs() < 1e-13);
        }
        let lam = spectral_gap(&k).unwrap().gap;
        assert!((replicated_gap(&k).unwrap().gap - lam / 2.0).abs() < 1e-10);
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let spec = MixtureSpec::sk(0.8, 0.0).unwrap();
        let t = sample_hamiltonian(&spec, 10, 2).unwrap();
        let k = build_metropolis(&t, false).unwrap();
        let g = SymGenerator::from_kernel(&k);
        let d = dense_gap(&g, Some(g.to_dense())).unwrap();
        let l = lanczos_gap(&g, 1e-10, 5).unwrap();
        assert!((d.gap - l.gap).abs() < 1e-9, "{} vs {}", d.gap, l.gap);
    }
}
