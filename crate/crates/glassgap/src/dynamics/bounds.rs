//! Upper bounds on replicated gaps from overlap barriers, the coercive lower
//! bound on the single-chain gap, and the per-instance spectral report.

use serde::{Deserialize, Serialize};

use super::difficulty::{overlap_difficulty, DifficultyReport, LOG4};
use super::kernel::{build_metropolis, ChainKernel};
use super::overlap::{overlap_distribution, OverlapHistogram};
use super::spectral::{replicated_gap, spectral_gap, EigenMethod};
use crate::error::{Error, Result};
use crate::model::HamiltonianTable;

/// 2(K·D/ε)² e^{−𝒟}/(1 − 4e^{−𝒟}); `None` unless ε > 2KD and 𝒟 > log 4.
pub fn difficulty_bound(k_lip: f64, d_max: f64, epsilon: f64, difficulty: f64) -> Option<f64> {
    if !(epsilon > 2.0 * k_lip * d_max) || !(difficulty > LOG4) {
        return None;
    }
    let e = (-difficulty).exp();
    Some(2.0 * (k_lip * d_max / epsilon).powi(2) * e / (1.0 - 4.0 * e))
}

/// Probability flux of the replicated chain from Hamming distance d to d+1
/// between the two replicas, d = 0..N−1.
pub fn level_fluxes(k: &ChainKernel) -> Result<Vec<f64>> {
    if k.replicated {
        return Err(Error::Domain("pass the single-chain kernel".into()));
    }
    let n = k.n_spins;
    let m = k.n_states;
    let pi = k.pi();
    let mut up = vec![vec![0.0; n]; m];
    for (x, row) in up.iter_mut().enumerate() {
        for (y, q) in k.row(x) {
            if y != x {
                row[(x ^ y).trailing_zeros() as usize] = q;
            }
        }
    }
    let mut flux = vec![0.0; n];
    for x1 in 0..m {
        for x2 in 0..m {
            let z = x1 ^ x2;
            let d = z.count_ones() as usize;
            if d == n {
                continue;
            }
            let mut rate = 0.0;
            for i in 0..n {
                if (z >> i) & 1 == 0 {
                    rate += 0.5 * (up[x1][i] + up[x2][i]);
                }
            }
            flux[d] += pi[x1] * pi[x2] * rate;
        }
    }
    Ok(flux)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestFunctionBound {
    /// A = {replica distance ≤ threshold}.
    pub threshold: usize,
    /// Hamming radius of the ramp.
    pub radius: usize,
    /// Conductance-lemma value D²/(2r²)·ν(B)/(ν(A)ν(A_r^c) − 4ν(B)²).
    pub lemma: Option<f64>,
    /// Exact Rayleigh quotient of the ramp function.
    pub rayleigh: f64,
}

/// Ramp test functions ψ of the replica distance: the conductance lemma
/// value and the exact Rayleigh quotient, for every threshold and radius.
pub fn test_function_bounds(hist: &OverlapHistogram, flux: &[f64]) -> Vec<TestFunctionBound> {
    let n = hist.n_spins;
    let p: Vec<f64> = (0..=n).map(|d| hist.at_distance(d)).collect();
    let mut out = Vec::new();
    for t in 0..n {
        for r in 1..=(n - t) {
            let nu_a: f64 = p[..=t].iter().sum();
            let far = t + r + 1;
            let nu_far: f64 = if far <= n { p[far..].iter().sum() } else { 0.0 };
            let nu_b: f64 = p[t..=far.min(n)].iter().sum();
            let den = nu_a * nu_far - 4.0 * nu_b * nu_b;
            let lemma = (den > 0.0).then(|| nu_b / (2.0 * (r * r) as f64 * den));
            let psi: Vec<f64> = (0..=n)
                .map(|d| {
                    if d <= t {
                        -(1.0 - nu_a)
                    } else {
                        -(1.0 - nu_a) + ((d - t) as f64 / r as f64).min(1.0)
                    }
                })
                .collect();
            let mean: f64 = psi.iter().zip(&p).map(|(a, b)| a * b).sum();
            let var: f64 = psi.iter().zip(&p).map(|(a, b)| b * (a - mean).powi(2)).sum();
            let dir: f64 = (0..n).map(|d| flux[d] * (psi[d + 1] - psi[d]).powi(2)).sum();
            let rayleigh = if var > 0.0 { dir / var } else { f64::INFINITY };
            out.push(TestFunctionBound { threshold: t, radius: r, lemma, rayleigh });
        }
    }
    out
}

/// A_N e^{−2 osc H}·(2/N) with A_N = e^{−osc H}, halved for the lazy chain.
pub fn coercive_lower_bound(table: &HamiltonianTable, lazy: bool) -> f64 {
    let (max, min) = table.max_min();
    let osc = max - min;
    let b = (-3.0 * osc).exp() * 2.0 / table.n_spins as f64;
    if lazy {
        0.5 * b
    } else {
        b
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Difficulty window; defaults to just above 2K = 4/N.
    pub epsilon: Option<f64>,
    pub replicated: bool,
    pub lazy: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { epsilon: None, replicated: true, lazy: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub n_spins: usize,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda1_residual: f64,
    pub lambda1_method: EigenMethod,
    /// Replicated gap Λ₁.
    pub big_lambda1: Option<f64>,
    pub big_lambda1_residual: Option<f64>,
    /// |Λ₁ − λ₁/2|.
    pub identity_error: Option<f64>,
    pub difficulty: DifficultyReport,
    pub cheeger_bound: Option<f64>,
    /// Best applicable conductance-lemma value over ramp test functions.
    pub testfn_bound: Option<f64>,
    /// Smallest Rayleigh quotient over the same ramps.
    pub rayleigh_bound: f64,
    pub coercive_lower: f64,
    pub log_gap_per_spin: f64,
}

impl SpectralReport {
    /// Inequalities that fail, with slack for eigensolver error.
    pub fn violations(&self) -> Vec<String> {
        let slack = |v: f64| 1e-9 * v.abs() + 1e-12;
        let mut out = Vec::new();
        if !(self.lambda1 > 0.0 && self.lambda1 <= 2.0 + 1e-12) {
            out.push(format!("lambda1 = {} outside (0,2]", self.lambda1));
        }
        if self.coercive_lower > self.lambda1 + slack(self.lambda1) {
            out.push(format!("coercive lower {} > lambda1 {}", self.coercive_lower, self.lambda1));
        }
        if let Some(big) = self.big_lambda1 {
            for (name, b) in [("cheeger", self.cheeger_bound), ("testfn", self.testfn_bound), ("rayleigh", Some(self.rayleigh_bound))] {
                if let Some(b) = b {
                    if b < big - slack(big) {
                        out.push(format!("{name} bound {b} < Lambda1 {big}"));
                    }
                }
            }
        }
        out
    }

    pub const CSV_HEADER: &'static str =
        "n,seed,lambda1,Lambda1,identity_error,difficulty,cheeger_bound,testfn_bound,rayleigh_bound,coercive_lower,log_gap_per_spin";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::from("NA"), |x| format!("{x:.12e}"));
        format!(
            "{},{},{:.12e},{},{},{:.6},{},{},{:.12e},{:.12e},{:.8}",
            self.n_spins,
            self.seed,
            self.lambda1,
            opt(self.big_lambda1),
            opt(self.identity_error),
            self.difficulty.difficulty,
            opt(self.cheeger_bound),
            opt(self.testfn_bound),
            self.rayleigh_bound,
            self.coercive_lower,
            self.log_gap_per_spin
        )
    }
}

/// Exact single and replicated gaps together with every bound.
pub fn exact_gap_report(table: &HamiltonianTable, opts: &ReportOptions) -> Result<SpectralReport> {
    let n = table.n_spins;
    let k = build_metropolis(table, opts.lazy)?;
    let single = spectral_gap(&k)?;
    let hist = overlap_distribution(table)?;
    let k_lip = 2.0 / n as f64;
    let eps = opts.epsilon.unwrap_or(2.0 * k_lip * (1.0 + 1e-9));
    let diff = overlap_difficulty(&hist, eps)?;
    let scale = if opts.lazy { 0.5 } else { 1.0 };
    let cheeger = difficulty_bound(k_lip, 1.0, eps, diff.difficulty).map(|b| scale * b);
    let flux = level_fluxes(&k)?;
    let tf = test_function_bounds(&hist, &flux);
    let testfn = tf.iter().filter_map(|t| t.lemma).map(|v| scale * v).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.min(v))));
    let rayleigh = tf.iter().map(|t| t.rayleigh).fold(f64::INFINITY, f64::min);
    let (big, big_res) = if opts.replicated {
        let r = replicated_gap(&k)?;
        (Some(r.gap), Some(r.residual))
    } else {
        (None, None)
    };
    Ok(SpectralReport {
        n_spins: n,
        seed: table.seed,
        lambda1: single.gap,
        lambda1_residual: single.residual,
        lambda1_method: single.method,
        big_lambda1: big,
        big_lambda1_residual: big_res,
        identity_error: big.map(|b| (b - 0.5 * single.gap).abs()),
        difficulty: diff,
        cheeger_bound: cheeger,
        testfn_bound: testfn,
        rayleigh_bound: rayleigh,
        coercive_lower: coercive_lower_bound(table, opts.lazy),
        log_gap_per_spin: single.gap.ln() / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_edge_cases() {
        assert!(difficulty_bound(0.1, 1.0, 0.5, LOG4).is_none());
        assert!(difficulty_bound(0.3, 1.0, 0.5, 5.0).is_none());
        let a = difficulty_bound(0.1, 1.0, 0.5, 3.0).unwrap();
        let b = difficulty_bound(0.1, 1.0, 0.5, 4.0).unwrap();
        assert!(b < a);
    }

    #[test]
    fn flat_landscape_report() {
        let r = exact_gap_report(&HamiltonianTable::zeros(4), &ReportOptions::default()).unwrap();
        assert!((r.lambda1 - 0.5).abs() < 1e-12);
        assert!((r.big_lambda1.unwrap() - 0.25).abs() < 1e-12);
        assert!((r.coercive_lower - 0.5).abs() < 1e-15);
        assert!(r.violations().is_empty());
    }
}
