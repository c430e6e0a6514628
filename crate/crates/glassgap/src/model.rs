//! Mixed p-spin models: the mixture ξ(t) = Σ c_p t^p with external field h,
//! and finite-N Gaussian Hamiltonians with covariance N·ξ(R₁₂).
//!
//! Configurations are indexed by integers; bit i set means σ_i = +1 and
//! bit i clear means σ_i = −1. The deterministic part of every sampled
//! Hamiltonian is −h·Σσ_i, so the Gibbs weight e^{−H} favours spins aligned
//! with h.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest |t| accepted by [`MixtureSpec::eval_xi`].
pub const XI_DOMAIN: f64 = 1.5;
/// Largest N for which a full 2^N table is built.
pub const N_MAX_TABLE: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// (p, c_p) pairs with c_p = β_p².
    pub terms: Vec<(u32, f64)>,
    pub h: f64,
    /// Inverse temperature when ξ = β²ξ₀.
    pub beta: Option<f64>,
    /// Base mixture ξ₀ when ξ = β²ξ₀.
    pub xi0_terms: Option<Vec<(u32, f64)>>,
}

fn check_terms(terms: &[(u32, f64)]) -> Result<()> {
    let mut seen = Vec::new();
    for &(p, c) in terms {
        if p == 0 {
            return Err(Error::InvalidModel("exponent p must be >= 1".into()));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidModel(format!("coefficient for p={p} must be finite and >= 0")));
        }
        if seen.contains(&p) {
            return Err(Error::InvalidModel(format!("exponent p={p} listed twice")));
        }
        seen.push(p);
    }
    Ok(())
}

impl MixtureSpec {
    pub fn new(terms: Vec<(u32, f64)>, h: f64) -> Result<Self> {
        check_terms(&terms)?;
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::InvalidModel("external field h must be finite and >= 0".into()));
        }
        Ok(Self { terms, h, beta: None, xi0_terms: None })
    }

    /// ξ = β²ξ₀.
    pub fn scaled(beta: f64, xi0_terms: Vec<(u32, f64)>, h: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidModel("beta must be finite and > 0".into()));
        }
        check_terms(&xi0_terms)?;
        let terms = xi0_terms.iter().map(|&(p, c)| (p, beta * beta * c)).collect();
        let mut spec = Self::new(terms, h)?;
        spec.beta = Some(beta);
        spec.xi0_terms = Some(xi0_terms);
        Ok(spec)
    }

    /// SK model ξ = β²t².
    pub fn sk(beta: f64, h: f64) -> Result<Self> {
        Self::scaled(beta, vec![(2, 1.0)], h)
    }

    /// Pure p-spin ξ = β²t^p.
    pub fn pure(p: u32, beta: f64, h: f64) -> Result<Self> {
        Self::scaled(beta, vec![(p, 1.0)], h)
    }

    /// Same base mixture at a different β.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        let xi0 = self
            .xi0_terms
            .clone()
            .ok_or_else(|| Error::InvalidModel("spec has no beta decomposition".into()))?;
        Self::scaled(beta, xi0, self.h)
    }

    pub fn validate(&self) -> Result<()> {
        check_terms(&self.terms)?;
        if !(self.h >= 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidModel("external field h must be finite and >= 0".into()));
        }
        if let (Some(b), Some(x0)) = (self.beta, &self.xi0_terms) {
            check_terms(x0)?;
            for &(p, c) in x0 {
                let full = self.terms.iter().find(|t| t.0 == p).map(|t| t.1).unwrap_or(0.0);
                if (full - b * b * c).abs() > 1e-12 * (1.0 + full.abs()) {
                    return Err(Error::InvalidModel(format!("terms disagree with beta^2 * xi0 at p={p}")));
                }
            }
        }
        Ok(())
    }

    pub fn max_p(&self) -> u32 {
        self.terms.iter().filter(|t| t.1 > 0.0).map(|t| t.0).max().unwrap_or(0)
    }

    pub fn is_even(&self) -> bool {
        self.terms.iter().all(|&(p, c)| c == 0.0 || p % 2 == 0)
    }

    #[inline]
    pub fn xi(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(p, c)| c * t.powi(p as i32)).sum()
    }

    #[inline]
    pub fn dxi(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(p, c)| c * p as f64 * t.powi(p as i32 - 1)).sum()
    }

    #[inline]
    pub fn ddxi(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.0 >= 2)
            .map(|&(p, c)| c * (p * (p - 1)) as f64 * t.powi(p as i32 - 2))
            .sum()
    }

    #[inline]
    fn dddxi(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.0 >= 3)
            .map(|&(p, c)| c * (p * (p - 1) * (p - 2)) as f64 * t.powi(p as i32 - 3))
            .sum()
    }

    /// Checked evaluation of ξ, ξ′ or ξ″.
    pub fn eval_xi(&self, t: f64, order: u32) -> Result<f64> {
        if !t.is_finite() || t.abs() > XI_DOMAIN {
            return Err(Error::Domain(format!("t = {t} outside [-{XI_DOMAIN}, {XI_DOMAIN}]")));
        }
        match order {
            0 => Ok(self.xi(t)),
            1 => Ok(self.dxi(t)),
            2 => Ok(self.ddxi(t)),
            _ => Err(Error::Domain(format!("derivative order {order} not in {{0,1,2}}"))),
        }
    }

    /// ξ₀ when a β decomposition is present.
    pub fn xi0(&self, t: f64) -> Option<f64> {
        self.xi0_terms
            .as_ref()
            .map(|x0| x0.iter().map(|&(p, c)| c * t.powi(p as i32)).sum())
    }

    /// ξ″ ≥ 0 on [−1, 1]. On [0, 1] this is automatic; on [−1, 0] the minimum
    /// of ξ″ is taken over the endpoints and the roots of ξ‴.
    pub fn is_convex(&self) -> bool {
        let mut candidates = vec![-1.0, 0.0];
        let n = 4096;
        let mut prev = self.dddxi(-1.0);
        for i in 1..=n {
            let t = -1.0 + i as f64 / n as f64;
            let cur = self.dddxi(t);
            if cur == 0.0 {
                candidates.push(t);
            } else if prev.signum() != cur.signum() && prev != 0.0 {
                let (mut a, mut b) = (t - 1.0 / n as f64, t);
                for _ in 0..80 {
                    let mid = 0.5 * (a + b);
                    if self.dddxi(mid).signum() == self.dddxi(a).signum() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                candidates.push(0.5 * (a + b));
            }
            prev = cur;
        }
        let scale = 1.0 + self.ddxi(1.0).abs();
        candidates.iter().all(|&t| self.ddxi(t) >= -1e-12 * scale)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HamiltonianTable {
    pub n_spins: usize,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl HamiltonianTable {
    pub fn zeros(n_spins: usize) -> Self {
        Self { n_spins, values: vec![0.0; 1 << n_spins], seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn spin(x: usize, i: usize) -> f64 {
        if (x >> i) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn spins(&self, x: usize) -> Vec<i8> {
        (0..self.n_spins).map(|i| Self::spin(x, i) as i8).collect()
    }

    pub fn max_min(&self) -> (f64, f64) {
        let max = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        (max, min)
    }
}

/// Overlap R₁₂ of two configurations given as indices.
#[inline]
pub fn overlap(n: usize, x: usize, y: usize) -> f64 {
    let d = ((x ^ y).count_ones()) as f64;
    1.0 - 2.0 * d / n as f64
}

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

fn krawtchouk(n: usize, k: usize, d: usize) -> f64 {
    (0..=k)
        .map(|j| {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            s * binom(d, j) * binom(n - d, k - j)
        })
        .sum()
}

/// Variance v_k of each Walsh coefficient of order k such that
/// Σ_{|S|=k} v_k χ_S(σ)χ_S(σ′) = N·ξ(R₁₂).
pub fn walsh_variances(spec: &MixtureSpec, n: usize) -> Vec<f64> {
    let f: Vec<f64> = (0..=n).map(|d| n as f64 * spec.xi(1.0 - 2.0 * d as f64 / n as f64)).collect();
    let total = 2f64.powi(n as i32);
    let scale = f.iter().map(|v| v.abs()).fold(0.0, f64::max);
    (0..=n)
        .map(|k| {
            let s: f64 = (0..=n).map(|d| binom(n, d) * f[d] * krawtchouk(n, k, d)).sum();
            let v = s / (total * binom(n, k));
            if v < 0.0 && v > -1e-9 * (1.0 + scale) {
                0.0
            } else {
                v
            }
        })
        .collect()
}

/// In-place fast Walsh–Hadamard transform (unnormalized).
pub fn fwht(a: &mut [f64]) {
    let n = a.len();
    let mut len = 1;
    while len < n {
        for i in (0..n).step_by(2 * len) {
            for j in i..i + len {
                let (u, v) = (a[j], a[j + len]);
                a[j] = u + v;
                a[j + len] = u - v;
            }
        }
        len <<= 1;
    }
}

/// One realization of the Hamiltonian on all 2^N configurations.
pub fn sample_hamiltonian(spec: &MixtureSpec, n: usize, seed: u64) -> Result<HamiltonianTable> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Domain("N must be >= 1".into()));
    }
    if n > N_MAX_TABLE {
        return Err(Error::TooLarge(format!("N = {n} exceeds table limit {N_MAX_TABLE}")));
    }
    let v = walsh_variances(spec, n);
    if let Some(k) = v.iter().position(|&x| x < 0.0) {
        return Err(Error::InvalidModel(format!("covariance not positive at Walsh order {k}")));
    }
    let sd: Vec<f64> = v.iter().map(|x| x.sqrt()).collect();
    let size = 1usize << n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = vec![0.0; size];
    for (s, slot) in a.iter_mut().enumerate() {
        let k = s.count_ones() as usize;
        let z: f64 = rng.sample(StandardNormal);
        // χ_S(σ) = (−1)^{|S|}(−1)^{|S∩x|} under the bit convention
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *slot = sign * sd[k] * z;
    }
    fwht(&mut a);
    if spec.h != 0.0 {
        for (x, val) in a.iter_mut().enumerate() {
            let m = 2.0 * x.count_ones() as f64 - n as f64;
            *val -= spec.h * m;
        }
    }
    Ok(HamiltonianTable { n_spins: n, values: a, seed })
}

#[derive(Clone, Debug)]
pub struct TensorTerm {
    pub p: u32,
    pub scale: f64,
    pub data: Vec<f64>,
}

/// Non-symmetrized i.i.d. Gaussian coupling tensors.
#[derive(Clone, Debug)]
pub struct CouplingTensors {
    pub n_spins: usize,
    pub h: f64,
    pub terms: Vec<TensorTerm>,
    pub seed: u64,
}

const TENSOR_MAX_ENTRIES: usize = 50_000_000;

impl CouplingTensors {
    pub fn sample(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for &(p, c) in &spec.terms {
            if c == 0.0 {
                continue;
            }
            let len = (n as f64).powi(p as i32);
            if len > TENSOR_MAX_ENTRIES as f64 {
                return Err(Error::TooLarge(format!("N^{p} coupling entries exceed limit")));
            }
            let data = (0..len as usize).map(|_| rng.sample(StandardNormal)).collect();
            let scale = c.sqrt() * (n as f64).powf((1.0 - p as f64) / 2.0);
            terms.push(TensorTerm { p, scale, data });
        }
        Ok(Self { n_spins: n, h: spec.h, terms, seed })
    }

    /// H(σ) = Σ_p scale_p Σ g_{i₁…i_p} σ_{i₁}⋯σ_{i_p} − hΣσ_i.
    pub fn energy(&self, sigma: &[i8]) -> f64 {
        let n = self.n_spins;
        let mut total = 0.0;
        let mut buf = Vec::new();
        for term in &self.terms {
            buf.clear();
            buf.extend_from_slice(&term.data);
            let mut len = buf.len();
            while len > 1 {
                let next = len / n;
                for j in 0..next {
                    let row = &buf[j * n..(j + 1) * n];
                    let s: f64 = row.iter().zip(sigma).map(|(g, &s)| g * s as f64).sum();
                    buf[j] = s;
                }
                len = next;
            }
            total += term.scale * buf[0];
        }
        let m: f64 = sigma.iter().map(|&s| s as f64).sum();
        total - self.h * m
    }

    pub fn to_table(&self) -> Result<HamiltonianTable> {
        if self.n_spins > N_MAX_TABLE {
            return Err(Error::TooLarge(format!("N = {} exceeds table limit", self.n_spins)));
        }
        let form = self.multilinear();
        let size = 1usize << self.n_spins;
        let mut sigma = vec![0i8; self.n_spins];
        let values = (0..size)
            .map(|x| {
                for (i, s) in sigma.iter_mut().enumerate() {
                    *s = HamiltonianTable::spin(x, i) as i8;
                }
                form.energy(&sigma)
            })
            .collect();
        Ok(HamiltonianTable { n_spins: self.n_spins, values, seed: self.seed })
    }

    /// Reduce to a multilinear polynomial using σ_i² = 1.
    pub fn multilinear(&self) -> Multilinear {
        let n = self.n_spins;
        let mut acc: BTreeMap<Vec<u16>, f64> = BTreeMap::new();
        let mut idx = Vec::new();
        for term in &self.terms {
            let p = term.p as usize;
            for (flat, g) in term.data.iter().enumerate() {
                idx.clear();
                let mut r = flat;
                for _ in 0..p {
                    idx.push((r % n) as u16);
                    r /= n;
                }
                idx.sort_unstable();
                let mut odd = Vec::with_capacity(p);
                let mut i = 0;
                while i < idx.len() {
                    let mut j = i;
                    while j < idx.len() && idx[j] == idx[i] {
                        j += 1;
                    }
                    if (j - i) % 2 == 1 {
                        odd.push(idx[i]);
                    }
                    i = j;
                }
                *acc.entry(odd).or_insert(0.0) += term.scale * g;
            }
        }
        for i in 0..n {
            *acc.entry(vec![i as u16]).or_insert(0.0) -= self.h;
        }
        Multilinear::from_map(n, acc)
    }
}

/// H(σ) = c₀ + Σ_S a_S Π_{i∈S} σ_i with per-site incidence lists for O(deg)
/// single-flip energy differences.
#[derive(Clone, Debug)]
pub struct Multilinear {
    pub n_spins: usize,
    pub constant: f64,
    pub sets: Vec<Vec<u16>>,
    pub coeffs: Vec<f64>,
    site_terms: Vec<Vec<usize>>,
}

impl Multilinear {
    pub fn from_map(n: usize, map: BTreeMap<Vec<u16>, f64>) -> Self {
        let mut constant = 0.0;
        let mut sets = Vec::new();
        let mut coeffs = Vec::new();
        for (s, a) in map {
            if s.is_empty() {
                constant += a;
            } else if a != 0.0 {
                sets.push(s);
                coeffs.push(a);
            }
        }
        let mut site_terms = vec![Vec::new(); n];
        for (t, s) in sets.iter().enumerate() {
            for &i in s {
                site_terms[i as usize].push(t);
            }
        }
        Self { n_spins: n, constant, sets, coeffs, site_terms }
    }

    pub fn energy(&self, sigma: &[i8]) -> f64 {
        let mut e = self.constant;
        for (s, a) in self.sets.iter().zip(&self.coeffs) {
            let mut prod = 1i8;
            for &i in s {
                prod *= sigma[i as usize];
            }
            e += a * prod as f64;
        }
        e
    }

    /// H(σ with spin i flipped) − H(σ).
    #[inline]
    pub fn flip_delta(&self, sigma: &[i8], i: usize) -> f64 {
        let mut acc = 0.0;
        for &t in &self.site_terms[i] {
            let mut prod = 1i8;
            for &j in &self.sets[t] {
                prod *= sigma[j as usize];
            }
            acc += self.coeffs[t] * prod as f64;
        }
        -2.0 * acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplePath {
    Table,
    Tensors,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub n_spins: usize,
    pub n_samples: usize,
    pub max_abs_deviation: f64,
    /// Largest |deviation| / standard error over pairs with nonzero error.
    pub max_z: f64,
    /// Standard error at the pair achieving the largest deviation.
    pub stderr_at_max: f64,
    pub pass: bool,
}

/// Empirical covariance over independent realizations against N·ξ(R₁₂),
/// on every unordered pair of configurations. Pass at 4 standard errors.
pub fn covariance_check(
    spec: &MixtureSpec,
    n: usize,
    n_samples: usize,
    seed: u64,
    path: SamplePath,
) -> Result<CovarianceReport> {
    if n > 6 {
        return Err(Error::TooLarge("covariance check enumerates pairs only for N <= 6".into()));
    }
    if n_samples < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let size = 1usize << n;
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let s: u64 = seeder.random();
        let table = match path {
            SamplePath::Table => sample_hamiltonian(spec, n, s)?,
            SamplePath::Tensors => CouplingTensors::sample(spec, n, s)?.to_table()?,
        };
        samples.push(table.values);
    }
    let ns = n_samples as f64;
    let means: Vec<f64> = (0..size).map(|x| samples.iter().map(|v| v[x]).sum::<f64>() / ns).collect();
    let mut report = CovarianceReport {
        n_spins: n,
        n_samples,
        max_abs_deviation: 0.0,
        max_z: 0.0,
        stderr_at_max: 0.0,
        pass: true,
    };
    for x in 0..size {
        for y in x..size {
            let target = n as f64 * spec.xi(overlap(n, x, y));
            let prods: Vec<f64> = samples.iter().map(|v| (v[x] - means[x]) * (v[y] - means[y])).collect();
            let c = prods.iter().sum::<f64>() / (ns - 1.0);
            let mp = prods.iter().sum::<f64>() / ns;
            let var = prods.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / (ns - 1.0);
            let se = (var / ns).sqrt();
            let dev = (c - target).abs();
            if dev > report.max_abs_deviation {
                report.max_abs_deviation = dev;
                report.stderr_at_max = se;
            }
            if se > 0.0 {
                report.max_z = report.max_z.max(dev / se);
            }
            if dev > 4.0 * se + 1e-12 * (1.0 + target.abs()) {
                report.pass = false;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xi_values() {
        let s = MixtureSpec::new(vec![(2, 1.0)], 0.0).unwrap();
        assert_eq!(s.eval_xi(0.5, 0).unwrap(), 0.25);
        assert_eq!(s.eval_xi(1.0, 1).unwrap(), 2.0);
        let s = MixtureSpec::new(vec![(2, 1.0), (4, 1.0)], 0.0).unwrap();
        assert_eq!(s.eval_xi(1.0, 2).unwrap(), 14.0);
        assert!(s.eval_xi(2.0, 0).is_err());
        assert!(s.eval_xi(0.5, 3).is_err());
    }

    #[test]
    fn convexity() {
        assert!(MixtureSpec::new(vec![(2, 1.0)], 0.0).unwrap().is_convex());
        assert!(!MixtureSpec::new(vec![(3, 1.0)], 0.0).unwrap().is_convex());
        assert!(MixtureSpec::new(vec![(2, 1.0), (3, 0.01)], 0.0).unwrap().is_convex());
    }

    #[test]
    fn rejects_bad_terms() {
        assert!(MixtureSpec::new(vec![(2, -1.0)], 0.0).is_err());
        assert!(MixtureSpec::new(vec![(2, 1.0), (2, 0.5)], 0.0).is_err());
        assert!(MixtureSpec::new(vec![(0, 1.0)], 0.0).is_err());
    }

    #[test]
    fn zero_model_table() {
        let s = MixtureSpec::new(vec![], 0.0).unwrap();
        let t = sample_hamiltonian(&s, 3, 7).unwrap();
        assert!(t.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn walsh_variances_sk() {
        let s = MixtureSpec::new(vec![(2, 1.0)], 0.0).unwrap();
        let v = walsh_variances(&s, 6);
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v[2] - 2.0 / 6.0).abs() < 1e-12);
        for k in [1, 3, 4, 5, 6] {
            assert!(v[k].abs() < 1e-12);
        }
    }

    #[test]
    fn field_term_sign() {
        let s = MixtureSpec::new(vec![], 0.5).unwrap();
        let t = sample_hamiltonian(&s, 3, 1).unwrap();
        assert!((t.values[7] + 1.5).abs() < 1e-12);
        assert!((t.values[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn tensor_energy_matches_multilinear() {
        let s = MixtureSpec::new(vec![(2, 1.0), (3, 0.5)], 0.2).unwrap();
        let c = CouplingTensors::sample(&s, 4, 3).unwrap();
        let form = c.multilinear();
        for x in 0..16 {
            let sig: Vec<i8> = (0..4).map(|i| HamiltonianTable::spin(x, i) as i8).collect();
            assert!((c.energy(&sig) - form.energy(&sig)).abs() < 1e-10);
            for i in 0..4 {
                let mut f = sig.clone();
                f[i] = -f[i];
                let d = form.energy(&f) - form.energy(&sig);
                assert!((form.flip_delta(&sig, i) - d).abs() < 1e-10);
            }
        }
    }
}
