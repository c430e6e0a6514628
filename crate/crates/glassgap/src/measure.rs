use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A probability measure on [0, 1] with finitely many atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    atoms: Vec<f64>,
    masses: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != masses.len() {
            return Err(Error::InvalidMeasure("atoms and masses must be non-empty and of equal length".into()));
        }
        for w in atoms.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidMeasure("atoms must be strictly ascending".into()));
            }
        }
        if atoms.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
            return Err(Error::InvalidMeasure("atoms must lie in [0,1]".into()));
        }
        if masses.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMeasure("masses must be positive".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { atoms, masses })
    }

    pub fn dirac(q: f64) -> Result<Self> {
        Self::new(vec![q], vec![1.0])
    }

    /// Builds a measure from unsorted, possibly coincident atoms with
    /// non-negative weights; atoms closer than `merge_tol` are merged
    /// (mass-weighted position) and zero weights dropped.
    pub fn from_unsorted(points: &[(f64, f64)], merge_tol: f64) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.1 > 0.0)
            .map(|&(q, w)| (q.clamp(0.0, 1.0), w))
            .collect();
        if pts.is_empty() {
            return Err(Error::InvalidMeasure("no positive mass".into()));
        }
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let total: f64 = pts.iter().map(|p| p.1).sum();
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (q, w) in pts {
            if let Some(last) = merged.last_mut() {
                if q - last.0 <= merge_tol {
                    let nw = last.1 + w;
                    let nq = if last.0 == 0.0 { 0.0 } else { (last.0 * last.1 + q * w) / nw };
                    *last = (nq, nw);
                    continue;
                }
            }
            merged.push((q, w));
        }
        let atoms: Vec<f64> = merged.iter().map(|p| p.0).collect();
        let mut masses: Vec<f64> = merged.iter().map(|p| p.1 / total).collect();
        let s: f64 = masses.iter().sum();
        let last = masses.len() - 1;
        masses[last] += 1.0 - s;
        Self::new(atoms, masses)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// m(s) = μ([0, s]).
    pub fn cdf(&self, s: f64) -> f64 {
        self.atoms.iter().zip(&self.masses).filter(|(q, _)| **q <= s).map(|(_, w)| w).sum::<f64>().min(1.0)
    }

    /// Largest atom.
    pub fn q_max(&self) -> f64 {
        *self.atoms.last().unwrap()
    }

    /// Second-largest mass (zero for a single atom).
    pub fn second_mass(&self) -> f64 {
        let mut m = self.masses.clone();
        m.sort_by(|a, b| b.partial_cmp(a).unwrap());
        m.get(1).copied().unwrap_or(0.0)
    }

    pub fn step_cdf(&self) -> StepCdf {
        StepCdf::from_measure(self)
    }

    /// ∫₀¹ |m₁ − m₂|.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        let mut knots: Vec<f64> = self.atoms.iter().chain(other.atoms.iter()).cloned().collect();
        knots.push(0.0);
        knots.push(1.0);
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup();
        knots.windows(2).map(|w| (w[1] - w[0]) * (self.cdf(w[0]) - other.cdf(w[0])).abs()).sum()
    }
}

/// A right-continuous step function on [0, 1): value `values[j]` on
/// [knots[j], knots[j+1]). Used for CDFs and their rescalings.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCdf {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepCdf {
    pub fn from_measure(mu: &AtomicMeasure) -> Self {
        let mut knots = vec![0.0];
        for &q in mu.atoms() {
            if q > 0.0 && q < 1.0 {
                knots.push(q);
            }
        }
        knots.push(1.0);
        let values = knots[..knots.len() - 1].iter().map(|&a| mu.cdf(a)).collect();
        Self { knots, values }
    }

    /// The CDF scaled by ½ below `q` (the two-replica tilt), unchanged above.
    pub fn tilted(mu: &AtomicMeasure, q: f64) -> Self {
        let base = Self::from_measure(mu).with_knot(q);
        let values = base
            .knots
            .iter()
            .zip(&base.values)
            .map(|(&a, &v)| if a < q { 0.5 * v } else { v })
            .collect();
        Self { knots: base.knots, values }
    }

    /// Inserts a breakpoint without changing the function.
    pub fn with_knot(&self, t: f64) -> Self {
        if t <= 0.0 || t >= 1.0 || self.knots.iter().any(|&k| k == t) {
            return self.clone();
        }
        let j = self.piece_index(t);
        let mut knots = self.knots.clone();
        let mut values = self.values.clone();
        knots.insert(j + 1, t);
        values.insert(j + 1, values[j]);
        Self { knots, values }
    }

    /// Index j with knots[j] ≤ t < knots[j+1] (last piece for t ≥ 1).
    pub fn piece_index(&self, t: f64) -> usize {
        let n = self.values.len();
        for j in 0..n {
            if t < self.knots[j + 1] {
                return j;
            }
        }
        n - 1
    }

    pub fn value(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 1.0;
        }
        self.values[self.piece_index(t)]
    }

    /// Pieces (a, b, m) intersected with [lo, hi].
    pub fn pieces_between(&self, lo: f64, hi: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for j in 0..self.values.len() {
            let a = self.knots[j].max(lo);
            let b = self.knots[j + 1].min(hi);
            if b > a {
                out.push((a, b, self.values[j]));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(AtomicMeasure::new(vec![0.5, 0.2], vec![0.5, 0.5]).is_err());
        assert!(AtomicMeasure::new(vec![0.2], vec![0.9]).is_err());
        assert!(AtomicMeasure::new(vec![1.2], vec![1.0]).is_err());
        assert!(AtomicMeasure::new(vec![0.2, 0.5], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn cdf_and_pieces() {
        let mu = AtomicMeasure::new(vec![0.0, 0.5], vec![0.3, 0.7]).unwrap();
        assert_eq!(mu.cdf(0.0), 0.3);
        assert_eq!(mu.cdf(0.49), 0.3);
        assert_eq!(mu.cdf(0.5), 1.0);
        let s = mu.step_cdf();
        assert_eq!(s.knots, vec![0.0, 0.5, 1.0]);
        assert_eq!(s.values, vec![0.3, 1.0]);
        let t = StepCdf::tilted(&mu, 0.25);
        assert_eq!(t.knots, vec![0.0, 0.25, 0.5, 1.0]);
        assert_eq!(t.values, vec![0.15, 0.3, 1.0]);
    }

    #[test]
    fn merge() {
        let mu = AtomicMeasure::from_unsorted(&[(0.5, 1.0), (0.50005, 1.0), (0.1, 2.0)], 1e-4).unwrap();
        assert_eq!(mu.len(), 2);
        assert!((mu.masses()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distance() {
        let a = AtomicMeasure::dirac(0.0).unwrap();
        let b = AtomicMeasure::dirac(1.0).unwrap();
        assert!((a.l1_distance(&b) - 1.0).abs() < 1e-12);
    }
}
