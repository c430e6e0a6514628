//! Overlap distribution 𝒬_N = π⊗π(R₁₂ ∈ ·) on the grid {−1, −1+2/N, …, 1}.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fwht, sample_hamiltonian, HamiltonianTable, MixtureSpec};

pub const N_MAX_EXACT: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistogramMode {
    Exact,
    Mcmc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OverlapHistogram {
    pub n_spins: usize,
    /// Ascending support, support[k] = −1 + 2k/N.
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub mode: HistogramMode,
}

impl OverlapHistogram {
    /// Mass at Hamming distance d, i.e. overlap 1 − 2d/N.
    pub fn at_distance(&self, d: usize) -> f64 {
        self.probs[self.n_spins - d]
    }

    /// 𝒬(R₁₂ ∈ (a, b)).
    pub fn mass_open(&self, a: f64, b: f64) -> f64 {
        self.support.iter().zip(&self.probs).filter(|(r, _)| **r > a && **r < b).map(|(_, p)| p).sum()
    }

    pub fn total_variation(&self, other: &Self) -> Result<f64> {
        if self.n_spins != other.n_spins {
            return Err(Error::Domain("histograms on different grids".into()));
        }
        Ok(0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    /// `q,prob[,stderr]` rows with a header.
    pub fn to_delimited_text(&self) -> String {
        let mut s = String::from(if self.stderr.is_some() { "q,prob,stderr\n" } else { "q,prob\n" });
        for k in 0..self.support.len() {
            match &self.stderr {
                Some(e) => s.push_str(&format!("{:.6},{:.12e},{:.6e}\n", self.support[k], self.probs[k], e[k])),
                None => s.push_str(&format!("{:.6},{:.12e}\n", self.support[k], self.probs[k])),
            }
        }
        s
    }
}

pub fn overlap_support(n: usize) -> Vec<f64> {
    (0..=n).map(|k| -1.0 + 2.0 * k as f64 / n as f64).collect()
}

/// Gibbs weights normalized with a max shift.
pub fn gibbs(table: &HamiltonianTable) -> Vec<f64> {
    let (_, min) = table.max_min();
    let w: Vec<f64> = table.values.iter().map(|h| (-(h - min)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Exact 𝒬_N from the autocorrelation c(z) = Σ_x π(x)π(x⊕z), grouped by |z|.
pub fn overlap_distribution(table: &HamiltonianTable) -> Result<OverlapHistogram> {
    let n = table.n_spins;
    if n == 0 || n > N_MAX_EXACT {
        return Err(Error::TooLarge(format!("exact overlap distribution needs 1 <= N <= {N_MAX_EXACT}")));
    }
    let mut a = gibbs(table);
    fwht(&mut a);
    a.iter_mut().for_each(|v| *v *= *v);
    fwht(&mut a);
    let size = a.len() as f64;
    let mut by_dist = vec![0.0; n + 1];
    for (z, c) in a.iter().enumerate() {
        by_dist[z.count_ones() as usize] += (c / size).max(0.0);
    }
    let probs: Vec<f64> = (0..=n).map(|k| by_dist[n - k]).collect();
    Ok(OverlapHistogram { n_spins: n, support: overlap_support(n), probs, stderr: None, mode: HistogramMode::Exact })
}

/// binom(N,k)/2^N at overlap −1 + 2k/N.
pub fn binomial_overlap(n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    let mut c = 1.0;
    for (k, slot) in p.iter_mut().enumerate() {
        *slot = c;
        c = c * (n - k) as f64 / (k + 1) as f64;
    }
    let s: f64 = p.iter().sum();
    p.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DisorderAverage {
    pub n_spins: usize,
    pub support: Vec<f64>,
    pub mean: Vec<f64>,
    pub spread: Vec<f64>,
    pub n_samples: usize,
}

/// E over disorder of the exact 𝒬_N, with the across-seed standard deviation.
pub fn disorder_average(spec: &MixtureSpec, n: usize, seeds: &[u64]) -> Result<DisorderAverage> {
    if seeds.is_empty() {
        return Err(Error::Domain("no disorder seeds".into()));
    }
    let hists: Vec<Vec<f64>> =
        seeds.iter().map(|&s| sample_hamiltonian(spec, n, s).and_then(|t| overlap_distribution(&t)).map(|h| h.probs)).collect::<Result<_>>()?;
    let m = seeds.len() as f64;
    let mean: Vec<f64> = (0..=n).map(|k| hists.iter().map(|h| h[k]).sum::<f64>() / m).collect();
    let spread = (0..=n)
        .map(|k| (hists.iter().map(|h| (h[k] - mean[k]).powi(2)).sum::<f64>() / (m - 1.0).max(1.0)).sqrt())
        .collect();
    Ok(DisorderAverage { n_spins: n, support: overlap_support(n), mean, spread, n_samples: seeds.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::overlap;

    #[test]
    fn flat_is_binomial() {
        let h = overlap_distribution(&HamiltonianTable::zeros(7)).unwrap();
        let b = binomial_overlap(7);
        for k in 0..=7 {
            assert!((h.probs[k] - b[k]).abs() < 1e-14);
        }
        assert!((b[3] - 35.0 / 128.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_small() {
        let spec = MixtureSpec::new(vec![(2, 1.0), (3, 0.5)], 0.3).unwrap();
        for n in [2, 3] {
            let t = sample_hamiltonian(&spec, n, 17).unwrap();
            let pi = gibbs(&t);
            let mut p = vec![0.0; n + 1];
            for x in 0..1 << n {
                for y in 0..1 << n {
                    let r = overlap(n, x, y);
                    let k = ((r + 1.0) * n as f64 / 2.0).round() as usize;
                    p[k] += pi[x] * pi[y];
                }
            }
            let h = overlap_distribution(&t).unwrap();
            for k in 0..=n {
                assert!((h.probs[k] - p[k]).abs() < 1e-14);
            }
            assert!((h.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
