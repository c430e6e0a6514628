//! Parallel tempering with two independent replicas per temperature; the
//! overlap between the two target-temperature replicas is histogrammed.
//! Single-site updates are heat-bath: Metropolis at zero energy change
//! always flips, which locks the parity of the replica distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::overlap::{overlap_support, HistogramMode, OverlapHistogram};
use crate::error::{Error, Result};
use crate::model::{HamiltonianTable, Multilinear};

pub const N_MAX_MCMC: usize = 200;

#[derive(Clone, Copy, Debug)]
pub enum Landscape<'a> {
    Table(&'a HamiltonianTable),
    Poly(&'a Multilinear),
}

impl Landscape<'_> {
    pub fn n_spins(&self) -> usize {
        match self {
            Landscape::Table(t) => t.n_spins,
            Landscape::Poly(m) => m.n_spins,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McmcOptions {
    pub n_sweeps: u64,
    pub burn_in: u64,
    /// Inverse-temperature multipliers ending at 1; geometric from `s_min`
    /// with `n_temps` rungs when absent.
    pub ladder: Option<Vec<f64>>,
    pub n_temps: usize,
    pub s_min: f64,
    pub n_batches: usize,
    pub seed: u64,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self { n_sweeps: 100_000, burn_in: 1000, ladder: None, n_temps: 8, s_min: 0.2, n_batches: 20, seed: 0 }
    }
}

impl McmcOptions {
    pub fn resolved_ladder(&self) -> Result<Vec<f64>> {
        let l = match &self.ladder {
            Some(l) => l.clone(),
            None if self.n_temps <= 1 => vec![1.0],
            None => {
                let r = self.s_min.ln() / (self.n_temps - 1) as f64;
                (0..self.n_temps).map(|i| ((self.n_temps - 1 - i) as f64 * r).exp()).collect()
            }
        };
        if l.is_empty() || (l[l.len() - 1] - 1.0).abs() > 1e-12 || l.windows(2).any(|w| !(w[0] < w[1])) || l[0] <= 0.0 {
            return Err(Error::Domain("ladder must be positive, strictly increasing and end at 1".into()));
        }
        Ok(l)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McmcResult {
    pub histogram: OverlapHistogram,
    pub batch_probs: Vec<Vec<f64>>,
    pub ladder: Vec<f64>,
    /// Swap acceptance between rungs i and i+1.
    pub swap_acceptance: Vec<f64>,
    /// Some swap acceptance below 5%.
    pub poorly_mixing: bool,
    pub n_sweeps: u64,
}

struct Walker {
    spins: Vec<i8>,
    idx: usize,
    energy: f64,
    s: f64,
    rng: ChaCha8Rng,
}

impl Walker {
    fn new(land: Landscape, s: f64, seed: u64, stream: u64) -> Self {
        let n = land.n_spins();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let spins: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let idx = spins.iter().enumerate().filter(|(_, &v)| v == 1).fold(0usize, |a, (i, _)| a | (1 << i.min(63)));
        let energy = match land {
            Landscape::Table(t) => t.values[idx],
            Landscape::Poly(m) => m.energy(&spins),
        };
        Self { spins, idx, energy, s, rng }
    }

    fn sweep(&mut self, land: Landscape) {
        let n = self.spins.len();
        for _ in 0..n {
            let i = self.rng.random_range(0..n);
            let delta = match land {
                Landscape::Table(t) => t.values[self.idx ^ (1 << i)] - t.values[self.idx],
                Landscape::Poly(m) => m.flip_delta(&self.spins, i),
            };
            if self.rng.random::<f64>() * (1.0 + (self.s * delta).exp()) < 1.0 {
                self.spins[i] = -self.spins[i];
                if n < 64 {
                    self.idx ^= 1 << i;
                }
                self.energy += delta;
            }
        }
    }
}

/// Overlap histogram estimate with batch standard errors.
pub fn mcmc_overlap(land: Landscape, opts: &McmcOptions) -> Result<McmcResult> {
    let n = land.n_spins();
    if n == 0 || n > N_MAX_MCMC {
        return Err(Error::TooLarge(format!("MCMC needs 1 <= N <= {N_MAX_MCMC}")));
    }
    if opts.n_sweeps == 0 || opts.n_batches == 0 {
        return Err(Error::Domain("need at least one sweep and one batch".into()));
    }
    let ladder = opts.resolved_ladder()?;
    let nt = ladder.len();
    // walkers [replica a rungs..., replica b rungs...]
    let mut walkers: Vec<Walker> =
        (0..2 * nt).map(|c| Walker::new(land, ladder[c % nt], opts.seed, c as u64 + 1)).collect();
    let mut swap_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    swap_rng.set_stream(0);
    let mut tried = vec![0u64; nt.saturating_sub(1)];
    let mut accepted = vec![0u64; nt.saturating_sub(1)];
    let per_batch = opts.n_sweeps.div_ceil(opts.n_batches as u64);
    let mut batch_counts = vec![vec![0u64; n + 1]; opts.n_batches];
    let parallel = n >= 32 && walkers.len() > 1;
    for step in 0..opts.burn_in + opts.n_sweeps {
        if parallel {
            walkers.par_iter_mut().for_each(|w| w.sweep(land));
        } else {
            walkers.iter_mut().for_each(|w| w.sweep(land));
        }
        for rep in 0..2 {
            for t in 0..nt.saturating_sub(1) {
                let (i, j) = (rep * nt + t, rep * nt + t + 1);
                let arg = (walkers[i].s - walkers[j].s) * (walkers[i].energy - walkers[j].energy);
                tried[t] += 1;
                if arg >= 0.0 || swap_rng.random::<f64>() < arg.exp() {
                    accepted[t] += 1;
                    let (si, sj) = (walkers[i].s, walkers[j].s);
                    walkers.swap(i, j);
                    walkers[i].s = si;
                    walkers[j].s = sj;
                }
            }
        }
        if step >= opts.burn_in {
            let k = (step - opts.burn_in) / per_batch;
            let (a, b) = (&walkers[nt - 1].spins, &walkers[2 * nt - 1].spins);
            let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
            // overlap −1 + 2·agree/N sits at index `agree`
            batch_counts[k as usize][agree] += 1;
        }
    }
    let batch_probs: Vec<Vec<f64>> = batch_counts
        .iter()
        .filter(|c| c.iter().sum::<u64>() > 0)
        .map(|c| {
            let s = c.iter().sum::<u64>() as f64;
            c.iter().map(|&v| v as f64 / s).collect()
        })
        .collect();
    let nb = batch_probs.len() as f64;
    let total: Vec<u64> = (0..=n).map(|k| batch_counts.iter().map(|c| c[k]).sum()).collect();
    let ts = total.iter().sum::<u64>() as f64;
    let probs: Vec<f64> = total.iter().map(|&v| v as f64 / ts).collect();
    let stderr = (0..=n)
        .map(|k| {
            let m = batch_probs.iter().map(|b| b[k]).sum::<f64>() / nb;
            (batch_probs.iter().map(|b| (b[k] - m).powi(2)).sum::<f64>() / (nb - 1.0).max(1.0) / nb).sqrt()
        })
        .collect();
    let swap_acceptance: Vec<f64> = tried.iter().zip(&accepted).map(|(&t, &a)| a as f64 / t.max(1) as f64).collect();
    Ok(McmcResult {
        histogram: OverlapHistogram { n_spins: n, support: overlap_support(n), probs, stderr: Some(stderr), mode: HistogramMode::Mcmc },
        poorly_mixing: swap_acceptance.iter().any(|&a| a < 0.05),
        batch_probs,
        ladder,
        swap_acceptance,
        n_sweeps: opts.n_sweeps,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmpiricalRate {
    pub q: f64,
    /// −(1/N) log 𝒬̂(|R₁₂ − q| ≤ ε); +∞ if the window was never visited.
    pub rate: f64,
    pub stderr: f64,
}

/// Empirical rate on a q grid with delta-method errors from the batches.
pub fn empirical_rate(res: &McmcResult, q_grid: &[f64], epsilon: f64) -> Vec<EmpiricalRate> {
    let h = &res.histogram;
    let n = h.n_spins as f64;
    let in_win = |q: f64| -> Vec<bool> { h.support.iter().map(|r| (r - q).abs() <= epsilon + 1e-12).collect() };
    q_grid
        .iter()
        .map(|&q| {
            let w = in_win(q);
            let mass = |p: &[f64]| p.iter().zip(&w).filter(|(_, &b)| b).map(|(v, _)| v).sum::<f64>();
            let p = mass(&h.probs);
            let bm: Vec<f64> = res.batch_probs.iter().map(|b| mass(b)).collect();
            let nb = bm.len() as f64;
            let mean = bm.iter().sum::<f64>() / nb;
            let se = (bm.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nb - 1.0).max(1.0) / nb).sqrt();
            if p > 0.0 {
                EmpiricalRate { q, rate: -p.ln() / n, stderr: se / (n * p) }
            } else {
                EmpiricalRate { q, rate: f64::INFINITY, stderr: f64::INFINITY }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::overlap::binomial_overlap;

    #[test]
    fn ladder_is_geometric() {
        let o = McmcOptions { n_temps: 3, s_min: 0.25, ..Default::default() };
        let l = o.resolved_ladder().unwrap();
        assert!((l[0] - 0.25).abs() < 1e-14 && (l[1] - 0.5).abs() < 1e-14 && l[2] == 1.0);
    }

    #[test]
    fn flat_overlap_is_binomial() {
        let t = HamiltonianTable::zeros(6);
        let o = McmcOptions { n_sweeps: 40_000, burn_in: 100, n_temps: 1, seed: 4, ..Default::default() };
        let r = mcmc_overlap(Landscape::Table(&t), &o).unwrap();
        let b = binomial_overlap(6);
        let se = r.histogram.stderr.as_ref().unwrap();
        for k in 0..=6 {
            assert!((r.histogram.probs[k] - b[k]).abs() < 4.0 * se[k] + 1e-3);
        }
    }
}
