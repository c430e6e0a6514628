//! Metropolis kernels on the hypercube and their replicated versions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HamiltonianTable;

pub const N_MAX_SINGLE: usize = 20;
pub const N_MAX_REPLICATED: usize = 10;

/// Sparse row-stochastic matrix in CSR form with stationary weights kept as
/// unnormalized logs, so ratios π(y)/π(x) never underflow.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainKernel {
    pub n_spins: usize,
    pub n_states: usize,
    pub replicated: bool,
    pub lazy: bool,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
    /// log π up to an additive constant.
    pub log_weight: Vec<f64>,
}

impl ChainKernel {
    pub fn row(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[x], self.row_ptr[x + 1]);
        self.col_idx[a..b].iter().cloned().zip(self.vals[a..b].iter().cloned())
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.row(x).find(|&(c, _)| c == y).map_or(0.0, |(_, v)| v)
    }

    /// Normalized stationary vector.
    pub fn pi(&self) -> Vec<f64> {
        let mx = self.log_weight.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weight.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    /// Unit vector √π, the null vector of the symmetrized generator.
    pub fn sqrt_pi(&self) -> Vec<f64> {
        let mx = self.log_weight.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weight.iter().map(|l| (0.5 * (l - mx)).exp()).collect();
        let s = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.into_iter().map(|v| v / s).collect()
    }

    /// Checks row sums, signs, detailed balance and nearest-neighbor support.
    pub fn check(&self, tol: f64) -> Result<()> {
        for x in 0..self.n_states {
            let mut s = 0.0;
            for (y, q) in self.row(x) {
                if q < 0.0 {
                    return Err(Error::Invariant(format!("negative entry Q({x},{y}) = {q}")));
                }
                if y != x {
                    if (x ^ y).count_ones() != 1 {
                        return Err(Error::Invariant(format!("Q({x},{y}) > 0 off the Hamming edges")));
                    }
                    let back = self.entry(y, x);
                    let lhs = q;
                    let rhs = back * (self.log_weight[y] - self.log_weight[x]).exp();
                    if (lhs - rhs).abs() > tol * lhs.abs().max(rhs.abs()) {
                        return Err(Error::Invariant(format!("detailed balance fails on ({x},{y})")));
                    }
                }
                s += q;
            }
            if (s - 1.0).abs() > tol {
                return Err(Error::Invariant(format!("row {x} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Sparse triplets, one `row,col,value` line per stored entry.
    pub fn to_triplets(&self) -> String {
        let mut s = String::from("row,col,value\n");
        for x in 0..self.n_states {
            for (y, q) in self.row(x) {
                s.push_str(&format!("{x},{y},{q:.17e}\n"));
            }
        }
        s
    }
}

/// Q(σ,σ′) = (1/N) min(1, e^{−(H(σ′)−H(σ))}) on Hamming neighbors.
pub fn build_metropolis(table: &HamiltonianTable, lazy: bool) -> Result<ChainKernel> {
    let n = table.n_spins;
    if n == 0 || n > N_MAX_SINGLE {
        return Err(Error::TooLarge(format!("single-chain kernel needs 1 <= N <= {N_MAX_SINGLE}, got {n}")));
    }
    let size = 1usize << n;
    let h = &table.values;
    let mut row_ptr = Vec::with_capacity(size + 1);
    let mut col_idx = Vec::with_capacity(size * (n + 1));
    let mut vals = Vec::with_capacity(size * (n + 1));
    row_ptr.push(0);
    let inv_n = 1.0 / n as f64;
    let scale = if lazy { 0.5 } else { 1.0 };
    for x in 0..size {
        let mut off = 0.0;
        let start = col_idx.len();
        col_idx.push(x);
        vals.push(0.0);
        for i in 0..n {
            let y = x ^ (1 << i);
            let q = scale * inv_n * (-(h[y] - h[x])).exp().min(1.0);
            col_idx.push(y);
            vals.push(q);
            off += q;
        }
        vals[start] = 1.0 - off;
        row_ptr.push(col_idx.len());
    }
    Ok(ChainKernel {
        n_spins: n,
        n_states: size,
        replicated: false,
        lazy,
        row_ptr,
        col_idx,
        vals,
        log_weight: h.iter().map(|v| -v).collect(),
    })
}

/// Q_r = ½(Q⊗I + I⊗Q) on pairs indexed x1·2^N + x2.
pub fn build_replicated(k: &ChainKernel) -> Result<ChainKernel> {
    if k.replicated {
        return Err(Error::Domain("kernel is already replicated".into()));
    }
    if k.n_spins > N_MAX_REPLICATED {
        return Err(Error::TooLarge(format!("replicated kernel needs N <= {N_MAX_REPLICATED}, got {}", k.n_spins)));
    }
    let m = k.n_states;
    let size = m * m;
    let mut row_ptr = Vec::with_capacity(size + 1);
    let mut col_idx = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    let n = k.n_spins;
    for x1 in 0..m {
        for x2 in 0..m {
            let me = x1 * m + x2;
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * n + 1);
            let mut diag = 0.0;
            for (y1, q) in k.row(x1) {
                if y1 == x1 {
                    diag += 0.5 * q;
                } else {
                    entries.push((y1 * m + x2, 0.5 * q));
                }
            }
            for (y2, q) in k.row(x2) {
                if y2 == x2 {
                    diag += 0.5 * q;
                } else {
                    entries.push((x1 * m + y2, 0.5 * q));
                }
            }
            entries.push((me, diag));
            entries.sort_by_key(|e| e.0);
            for (c, v) in entries {
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
    }
    let mut log_weight = Vec::with_capacity(size);
    for x1 in 0..m {
        for x2 in 0..m {
            log_weight.push(k.log_weight[x1] + k.log_weight[x2]);
        }
    }
    Ok(ChainKernel { n_spins: n, n_states: size, replicated: true, lazy: k.lazy, row_ptr, col_idx, vals, log_weight })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_table(n: usize, seed: u64) -> HamiltonianTable {
        let spec = crate::model::MixtureSpec::sk(1.0, 0.2).unwrap();
        crate::model::sample_hamiltonian(&spec, n, seed).unwrap()
    }

    #[test]
    fn kernels_are_reversible() {
        let t = random_table(4, 3);
        let k = build_metropolis(&t, false).unwrap();
        k.check(1e-12).unwrap();
        let r = build_replicated(&k).unwrap();
        r.check(1e-12).unwrap();
        assert_eq!(r.n_states, 256);
    }

    #[test]
    fn triplet_export_counts() {
        let k = build_metropolis(&HamiltonianTable::zeros(3), false).unwrap();
        assert_eq!(k.to_triplets().lines().count(), 1 + 8 * 4);
    }
}
