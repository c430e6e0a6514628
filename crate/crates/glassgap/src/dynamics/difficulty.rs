//! ε-landscape difficulty of a statistic with a discrete law.

use serde::{Deserialize, Serialize};

use super::overlap::OverlapHistogram;
use crate::error::{Error, Result};

pub const LOG4: f64 = std::f64::consts::LN_2 * 2.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DifficultyReport {
    pub statistic: String,
    pub epsilon: f64,
    pub lipschitz_constant: f64,
    /// (E, S(E, ε)) on a grid of spacing ε/4; −∞ marks an empty window.
    pub s_grid: Vec<(f64, f64)>,
    pub best_triple: Option<(f64, f64, f64)>,
    pub phi_value: f64,
    /// 𝒟_ε(f), −∞ when no admissible triple has finite outer windows.
    pub difficulty: f64,
}

impl DifficultyReport {
    /// Free energy barrier in the sense 𝒟 > log 4.
    pub fn is_difficult(&self) -> bool {
        self.difficulty > LOG4
    }
}

/// Φ = S₁ + S₃ − S₂.
pub fn phi(s1: f64, s2: f64, s3: f64) -> f64 {
    s1 + s3 - s2
}

/// Maximizes Φ over E-grid triples with ε < ¼ min(E₂−E₁, E₃−E₂).
pub fn difficulty(values: &[f64], probs: &[f64], epsilon: f64, lipschitz: f64, statistic: &str) -> Result<DifficultyReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain("epsilon must be positive".into()));
    }
    if values.len() != probs.len() || values.is_empty() {
        return Err(Error::Domain("values and probabilities must match and be nonempty".into()));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - epsilon;
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + epsilon;
    let step = epsilon / 4.0;
    let n = ((hi - lo) / step).ceil() as usize + 1;
    let s_grid: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let e = lo + i as f64 * step;
            let m: f64 = values.iter().zip(probs).filter(|(v, _)| (**v - e).abs() < epsilon).map(|(_, p)| p).sum();
            (e, if m > 0.0 { m.ln() } else { f64::NEG_INFINITY })
        })
        .collect();
    // separation > 4ε is more than 16 grid steps
    const SEP: usize = 17;
    let s: Vec<f64> = s_grid.iter().map(|p| p.1).collect();
    let mut prefix = vec![(f64::NEG_INFINITY, 0usize); n];
    for i in 0..n {
        prefix[i] = if i == 0 || s[i] > prefix[i - 1].0 { (s[i], i) } else { prefix[i - 1] };
    }
    let mut suffix = vec![(f64::NEG_INFINITY, n - 1); n];
    for i in (0..n).rev() {
        suffix[i] = if i == n - 1 || s[i] > suffix[i + 1].0 { (s[i], i) } else { suffix[i + 1] };
    }
    let mut best = f64::NEG_INFINITY;
    let mut triple = None;
    for j in SEP..n.saturating_sub(SEP) {
        let (s1, i) = prefix[j - SEP];
        let (s3, k) = suffix[j + SEP];
        if !s1.is_finite() || !s3.is_finite() || !s[j].is_finite() {
            continue;
        }
        let v = phi(s1, s[j], s3);
        if v > best {
            best = v;
            triple = Some((s_grid[i].0, s_grid[j].0, s_grid[k].0));
        }
    }
    Ok(DifficultyReport {
        statistic: statistic.to_string(),
        epsilon,
        lipschitz_constant: lipschitz,
        s_grid,
        best_triple: triple,
        phi_value: best,
        difficulty: best,
    })
}

/// Difficulty of R₁₂ under π⊗π; one spin flip moves R₁₂ by 2/N.
pub fn overlap_difficulty(h: &OverlapHistogram, epsilon: f64) -> Result<DifficultyReport> {
    difficulty(&h.support, &h.probs, epsilon, 2.0 / h.n_spins as f64, "overlap")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_arithmetic() {
        let v = phi(0.4f64.ln(), 0.01f64.ln(), 0.4f64.ln());
        assert!((v - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn double_peak_is_difficult() {
        let values = [-1.0, 0.0, 1.0];
        let probs = [0.4, 0.01, 0.4];
        let r = difficulty(&values, &[probs[0], probs[1], probs[2]], 0.2, 0.1, "x").unwrap();
        assert!((r.difficulty - 16f64.ln()).abs() < 1e-12);
        assert!(r.is_difficult());
        let (e1, e2, e3) = r.best_triple.unwrap();
        assert!(0.2 < 0.25 * (e2 - e1).min(e3 - e2));
    }
}
