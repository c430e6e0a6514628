//! Spherical statics in closed form. For an atomic measure with CDF m the
//! functions ψ(t) = ∫_t¹ ξ″m and φ(s) = ∫_s¹ m are piecewise explicit, and on
//! a constancy interval c − ψ(t) = α + m ξ′(t), so every integral of
//! ξ″/(c − ψ)^p has an elementary antiderivative.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gt2d::{certify, RateCurve, RateOptions};
use crate::ising_statics::correction_term;
use crate::measure::{AtomicMeasure, StepCdf};
use crate::model::MixtureSpec;
use crate::numerics::optim::{golden_section, nelder_mead, NelderMeadOptions};
use crate::numerics::quad::GaussLegendre;

/// Largest atom location used by the optimizer.
const Q_CAP: f64 = 0.999;

/// ψ at each knot of the step CDF (ψ(1) = 0).
fn psi_knots(spec: &MixtureSpec, cdf: &StepCdf) -> Vec<f64> {
    let n = cdf.knots.len();
    let mut psi = vec![0.0; n];
    for j in (0..n - 1).rev() {
        psi[j] = psi[j + 1] + cdf.values[j] * (spec.dxi(cdf.knots[j + 1]) - spec.dxi(cdf.knots[j]));
    }
    psi
}

/// ψ_ν(t) = ∫_t¹ ξ″(s) m(s) ds.
pub fn psi(spec: &MixtureSpec, nu: &AtomicMeasure, t: f64) -> f64 {
    let cdf = nu.step_cdf();
    let pk = psi_knots(spec, &cdf);
    if t >= 1.0 {
        return 0.0;
    }
    let j = cdf.piece_index(t);
    pk[j + 1] + cdf.values[j] * (spec.dxi(cdf.knots[j + 1]) - spec.dxi(t))
}

/// φ_ν(s) = ∫_s¹ m(u) du.
pub fn phi_cs(nu: &AtomicMeasure, s: f64) -> f64 {
    let cdf = nu.step_cdf();
    if s >= 1.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (a, b, m) in cdf.pieces_between(s, 1.0) {
        acc += m * (b - a);
    }
    acc
}

/// ∫_lo^hi ξ″/(c − ψ)^p for p ∈ {1, 2}; +∞ if c − ψ vanishes on the range.
fn int_inv_pow(spec: &MixtureSpec, cdf: &StepCdf, pk: &[f64], c: f64, lo: f64, hi: f64, p: u32) -> f64 {
    let mut acc = 0.0;
    for j in 0..cdf.values.len() {
        let a = cdf.knots[j].max(lo);
        let b = cdf.knots[j + 1].min(hi);
        if b <= a {
            continue;
        }
        let m = cdf.values[j];
        let top = cdf.knots[j + 1];
        let alpha = c - pk[j + 1] - m * spec.dxi(top);
        let (da, db) = (spec.dxi(a), spec.dxi(b));
        let ca = alpha + m * da;
        let cb = alpha + m * db;
        if !(ca > 0.0) || !(cb > 0.0) {
            return f64::INFINITY;
        }
        let delta = db - da;
        acc += match p {
            1 => {
                if m == 0.0 {
                    delta / ca
                } else {
                    (m * delta / ca).ln_1p() / m
                }
            }
            _ => delta / (ca * cb),
        };
    }
    acc
}

/// Crisanti–Sommers functional
/// ½(∫ξ″φ + ∫(1/φ − 1/(1−s)) ds + h²φ(0)).
pub fn cs_functional(spec: &MixtureSpec, nu: &AtomicMeasure) -> Result<f64> {
    let cdf = nu.step_cdf();
    let n = cdf.knots.len();
    let mut phi = vec![0.0; n];
    for j in (0..n - 1).rev() {
        phi[j] = phi[j + 1] + cdf.values[j] * (cdf.knots[j + 1] - cdf.knots[j]);
    }
    let anti = |s: f64| s * spec.dxi(s) - spec.xi(s);
    let (mut i1, mut i2) = (0.0, 0.0);
    for j in 0..n - 1 {
        let (a, b, m) = (cdf.knots[j], cdf.knots[j + 1], cdf.values[j]);
        let pb = phi[j + 1];
        i1 += (pb + m * b) * (spec.dxi(b) - spec.dxi(a)) - m * (anti(b) - anti(a));
        if b == 1.0 {
            if (m - 1.0).abs() <= 1e-12 {
                continue;
            }
            if m == 0.0 {
                return Err(Error::Degenerate("phi vanishes before s = 1".into()));
            }
            return Ok(f64::INFINITY);
        }
        let inv = if m == 0.0 { (b - a) / pb } else { (m * (b - a) / pb).ln_1p() / m };
        i2 += inv - ((1.0 - a) / (1.0 - b)).ln();
    }
    Ok(0.5 * (i1 + i2 + spec.h * spec.h * phi[0]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalAnsatz {
    pub nu: AtomicMeasure,
    pub b: f64,
}

/// Spherical Parisi functional, normalized so that it equals the
/// Crisanti–Sommers value at the joint minimizer:
/// ½[h²/(b−ψ(0)) + ∫ξ″/(b−ψ) + b − 1 − log b − ∫tξ″m]. +∞ when inadmissible.
pub fn sph_parisi(spec: &MixtureSpec, ansatz: &SphericalAnsatz) -> f64 {
    let b = ansatz.b;
    let cdf = ansatz.nu.step_cdf();
    let pk = psi_knots(spec, &cdf);
    let gap0 = b - pk[0];
    if !(b >= 1.0) || !(gap0 > 0.0) {
        return f64::INFINITY;
    }
    let integral = int_inv_pow(spec, &cdf, &pk, b, 0.0, 1.0, 1);
    let l = 2.0 * correction_term(spec, &ansatz.nu);
    0.5 * (spec.h * spec.h / gap0 + integral + b - 1.0 - b.ln() - l)
}

/// Λ_R(q) = 1/φ(q)² − ξ″(q).
pub fn replicon_sph(spec: &MixtureSpec, nu: &AtomicMeasure, q: f64) -> Result<f64> {
    let p = phi_cs(nu, q);
    if !(p > 0.0) {
        return Err(Error::Degenerate(format!("phi vanishes at q = {q}")));
    }
    Ok(1.0 / (p * p) - spec.ddxi(q))
}

/// b from the stationarity relation b = ξ′(1) − ξ′(q_EA) + 1/(1 − q_EA).
pub fn b_from_qea(spec: &MixtureSpec, q_ea: f64) -> f64 {
    spec.dxi(1.0) - spec.dxi(q_ea) + 1.0 / (1.0 - q_ea)
}

/// Inner minimization over b on [max(1, ψ(0)) + 1e−9, ξ′(1) + 2 + 1/(1 − q_EA)].
pub fn optimal_b(spec: &MixtureSpec, nu: &AtomicMeasure) -> (f64, f64) {
    let lo = psi(spec, nu, 0.0).max(1.0) + 1e-9;
    let hi = spec.dxi(1.0) + 2.0 + 1.0 / (1.0 - nu.q_max().min(Q_CAP));
    golden_section(|b| sph_parisi(spec, &SphericalAnsatz { nu: nu.clone(), b }), lo, hi.max(lo + 1.0), 1e-13, 300)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SphericalOptions {
    pub n_starts: usize,
    pub merge_tol: f64,
    pub seed: u64,
    pub max_evals: usize,
    /// Masses below this are dropped before polishing.
    pub prune_mass: f64,
}

impl Default for SphericalOptions {
    fn default() -> Self {
        Self { n_starts: 8, merge_tol: 1e-4, seed: 0, max_evals: 3000, prune_mass: 1e-7 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GDiagnostic {
    pub grid_min: f64,
    pub grid_argmin: f64,
    pub atom_values: Vec<f64>,
    /// max over atoms of G(q_i) − min over the grid and atoms.
    pub excess: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SphericalOptReport {
    pub minimizer: AtomicMeasure,
    pub b: f64,
    pub k_used: usize,
    pub cs_value: f64,
    pub ps_value: f64,
    pub q_residuals: Vec<f64>,
    pub b_residual: f64,
    pub phi_psi_residuals: Vec<f64>,
    /// b − ψ(0) and b − 1.
    pub margins: (f64, f64),
    /// (q_i, Λ_R(q_i)).
    pub replicons: Vec<(f64, f64)>,
    pub g_diagnostic: GDiagnostic,
    pub is_atom: bool,
    pub converged: bool,
    pub start_values: Vec<f64>,
}

fn decode(x: &[f64], k: usize, merge_tol: f64) -> AtomicMeasure {
    let mut logits = vec![0.0; k];
    logits[..k - 1].copy_from_slice(&x[k..2 * k - 1]);
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    let pts: Vec<(f64, f64)> = (0..k).map(|i| (x[i].clamp(0.0, Q_CAP), e[i] / s)).collect();
    AtomicMeasure::from_unsorted(&pts, merge_tol).expect("softmax masses are positive")
}

/// Residual of the stationarity relation q = ∫₀^q ξ″/(b−ψ)² + h²/(b−ψ(0))².
pub fn q_residual(spec: &MixtureSpec, nu: &AtomicMeasure, b: f64, q: f64) -> f64 {
    let cdf = nu.step_cdf();
    let pk = psi_knots(spec, &cdf);
    let g0 = b - pk[0];
    int_inv_pow(spec, &cdf, &pk, b, 0.0, q, 2) + spec.h * spec.h / (g0 * g0) - q
}

/// G(t) = ∫_t¹ ξ″(s) R(s) ds with R(s) = h²/(b−ψ(0))² + ∫₀^s ξ″/(b−ψ)² − s,
/// tabulated on a uniform grid with the atoms inserted.
pub fn g_diagnostic(spec: &MixtureSpec, nu: &AtomicMeasure, b: f64, n_grid: usize) -> GDiagnostic {
    let cdf = nu.step_cdf();
    let pk = psi_knots(spec, &cdf);
    let g0 = b - pk[0];
    let h2 = spec.h * spec.h / (g0 * g0);
    let r = |s: f64| h2 + int_inv_pow(spec, &cdf, &pk, b, 0.0, s, 2) - s;
    let mut ts: Vec<f64> = (0..=n_grid).map(|i| i as f64 / n_grid as f64).collect();
    ts.extend(nu.atoms().iter().cloned());
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    let gl = GaussLegendre::new(8);
    let mut g = vec![0.0; ts.len()];
    for i in (0..ts.len() - 1).rev() {
        g[i] = g[i + 1] + gl.integrate(ts[i], ts[i + 1], |s| spec.ddxi(s) * r(s));
    }
    let (mut gmin, mut arg) = (f64::INFINITY, 0.0);
    for (i, &v) in g.iter().enumerate() {
        if v < gmin {
            gmin = v;
            arg = ts[i];
        }
    }
    let atom_values: Vec<f64> = nu.atoms().iter().map(|q| g[ts.iter().position(|t| t == q).unwrap()]).collect();
    let excess = atom_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - gmin;
    GDiagnostic { grid_min: gmin, grid_argmin: arg, atom_values, excess }
}

/// Evaluates every optimality diagnostic of (ν, b).
pub fn spherical_report(spec: &MixtureSpec, nu: &AtomicMeasure, b: f64) -> Result<SphericalOptReport> {
    let ansatz = SphericalAnsatz { nu: nu.clone(), b };
    let ps_value = sph_parisi(spec, &ansatz);
    let cs_value = cs_functional(spec, nu)?;
    let psi0 = psi(spec, nu, 0.0);
    let q_residuals = nu.atoms().iter().map(|&q| q_residual(spec, nu, b, q)).collect();
    let phi_psi_residuals = nu.atoms().iter().map(|&q| phi_cs(nu, q) - 1.0 / (b - psi(spec, nu, q))).collect();
    let replicons = nu.atoms().iter().map(|&q| replicon_sph(spec, nu, q).map(|r| (q, r))).collect::<Result<_>>()?;
    Ok(SphericalOptReport {
        minimizer: nu.clone(),
        b,
        k_used: nu.len(),
        cs_value,
        ps_value,
        q_residuals,
        b_residual: b - b_from_qea(spec, nu.q_max()),
        phi_psi_residuals,
        margins: (b - psi0, b - 1.0),
        replicons,
        g_diagnostic: g_diagnostic(spec, nu, b, 2000),
        is_atom: nu.second_mass() < 1e-3,
        converged: true,
        start_values: vec![],
    })
}

/// Free coordinates for the Newton polish: atoms not pinned at 0, k−1 mass
/// logits relative to the last atom, and b.
struct Polish {
    pinned_zero: bool,
    k: usize,
}

impl Polish {
    fn encode(&self, nu: &AtomicMeasure, b: f64) -> Vec<f64> {
        let mut x: Vec<f64> = nu.atoms().iter().skip(self.pinned_zero as usize).cloned().collect();
        let last = nu.masses()[self.k - 1].ln();
        x.extend(nu.masses()[..self.k - 1].iter().map(|w| w.ln() - last));
        x.push(b);
        x
    }

    fn decode(&self, x: &[f64]) -> Option<(AtomicMeasure, f64)> {
        let fa = self.k - self.pinned_zero as usize;
        let mut atoms = if self.pinned_zero { vec![0.0] } else { vec![] };
        atoms.extend_from_slice(&x[..fa]);
        let mut logits = x[fa..fa + self.k - 1].to_vec();
        logits.push(0.0);
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        let mut masses: Vec<f64> = e.iter().map(|v| v / s).collect();
        let tot: f64 = masses.iter().sum();
        let k = masses.len();
        masses[k - 1] += 1.0 - tot;
        AtomicMeasure::new(atoms, masses).ok().map(|m| (m, x[x.len() - 1]))
    }
}

fn newton_polish(spec: &MixtureSpec, nu: &AtomicMeasure, b: f64) -> (AtomicMeasure, f64, bool) {
    let k = nu.len();
    let pol = Polish { pinned_zero: spec.h == 0.0 && nu.atoms()[0] == 0.0, k };
    let f = |x: &[f64]| -> f64 {
        match pol.decode(x) {
            Some((m, b)) if m.q_max() < 1.0 => sph_parisi(spec, &SphericalAnsatz { nu: m, b }),
            _ => f64::INFINITY,
        }
    };
    let mut x = pol.encode(nu, b);
    let n = x.len();
    let grad = |x: &[f64]| -> DVector<f64> {
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let hstep = 1e-6 * (1.0 + x[i].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += hstep;
            xm[i] -= hstep;
            g[i] = (f(&xp) - f(&xm)) / (2.0 * hstep);
        }
        g
    };
    let mut val = f(&x);
    let mut converged = false;
    for _ in 0..60 {
        let g = grad(&x);
        if !g.iter().all(|v| v.is_finite()) {
            break;
        }
        if g.norm() < 1e-11 {
            converged = true;
            break;
        }
        let mut hm = DMatrix::zeros(n, n);
        for j in 0..n {
            let hstep = 1e-4 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += hstep;
            xm[j] -= hstep;
            let col = (grad(&xp) - grad(&xm)) / (2.0 * hstep);
            hm.set_column(j, &col);
        }
        let hs = (&hm + hm.transpose()) * 0.5;
        let mut damping = 0.0;
        let mut improved = false;
        for _ in 0..12 {
            let mut a = hs.clone();
            for i in 0..n {
                a[(i, i)] += damping;
            }
            if let Some(ch) = a.cholesky() {
                let step = ch.solve(&(-&g));
                let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let vn = f(&xn);
                if vn <= val + 1e-15 && grad(&xn).norm() < g.norm() {
                    x = xn;
                    val = vn;
                    improved = true;
                    break;
                }
            }
            damping = if damping == 0.0 { 1e-8 * (1.0 + hs.norm()) } else { damping * 10.0 };
        }
        if !improved {
            break;
        }
    }
    let (m, b) = pol.decode(&x).unwrap();
    (m, b, converged)
}

/// Newton on the stationarity system: q-residuals at free atoms and
/// φ(q_i)(b − ψ(q_i)) − 1 at every atom.
fn stationarity_refine(spec: &MixtureSpec, nu: &AtomicMeasure, b: f64) -> (AtomicMeasure, f64) {
    let k = nu.len();
    let pol = Polish { pinned_zero: spec.h == 0.0 && nu.atoms()[0] == 0.0, k };
    let resid = |x: &[f64]| -> Option<DVector<f64>> {
        let (m, b) = pol.decode(x)?;
        if m.q_max() >= 1.0 || m.atoms()[0] < 0.0 || m.len() != k {
            return None;
        }
        let mut r = Vec::with_capacity(x.len());
        for &q in m.atoms().iter().skip(pol.pinned_zero as usize) {
            r.push(q_residual(spec, &m, b, q));
        }
        for &q in m.atoms() {
            r.push(phi_cs(&m, q) * (b - psi(spec, &m, q)) - 1.0);
        }
        r.iter().all(|v| v.is_finite()).then(|| DVector::from_vec(r))
    };
    let p0 = sph_parisi(spec, &SphericalAnsatz { nu: nu.clone(), b });
    let mut x = pol.encode(nu, b);
    let n = x.len();
    let Some(mut r) = resid(&x) else { return (nu.clone(), b) };
    for _ in 0..30 {
        if r.norm() < 1e-14 {
            break;
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let hs = 1e-7 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += hs;
            xm[j] -= hs;
            match (resid(&xp), resid(&xm)) {
                (Some(a), Some(c)) => jac.set_column(j, &((a - c) / (2.0 * hs))),
                _ => return pol.decode(&x).unwrap(),
            }
        }
        let Some(step) = jac.lu().solve(&(-&r)) else { break };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-4 {
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            if let Some(rn) = resid(&xn) {
                if rn.norm() < r.norm() {
                    x = xn;
                    r = rn;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let (m, bn) = pol.decode(&x).unwrap();
    if sph_parisi(spec, &SphericalAnsatz { nu: m.clone(), b: bn }) <= p0 + 1e-10 {
        (m, bn)
    } else {
        (nu.clone(), b)
    }
}

/// Joint minimization of the spherical Parisi functional over k-atomic
/// measures and b.
pub fn minimize_spherical(spec: &MixtureSpec, k: usize, opts: &SphericalOptions) -> Result<SphericalOptReport> {
    spec.validate()?;
    if k == 0 {
        return Err(Error::Domain("k must be >= 1".into()));
    }
    let objective = |nu: &AtomicMeasure| optimal_b(spec, nu).1;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = Vec::new();
    let mut x0 = vec![0.0; 2 * k - 1];
    for (i, v) in x0.iter_mut().take(k).enumerate() {
        *v = i as f64 / k as f64 * 0.8;
    }
    starts.push(x0);
    while starts.len() < opts.n_starts.max(1) {
        let mut x = vec![0.0; 2 * k - 1];
        for v in x.iter_mut().take(k) {
            *v = rng.random::<f64>() * Q_CAP;
        }
        for v in x.iter_mut().skip(k) {
            *v = rng.random::<f64>() * 4.0 - 2.0;
        }
        starts.push(x);
    }
    let nm = NelderMeadOptions { initial_step: 0.15, ftol: 1e-14, xtol: 1e-10, max_evals: opts.max_evals };
    let f = |x: &[f64]| {
        let wall: f64 = x[..k].iter().map(|&q| (q.max(Q_CAP) - Q_CAP).powi(2) + q.min(0.0).powi(2)).sum();
        objective(&decode(x, k, opts.merge_tol)) + wall
    };
    let mut results = Vec::new();
    for x0 in &starts {
        let a = nelder_mead(f, x0, &nm);
        let b = nelder_mead(f, &a.x, &NelderMeadOptions { initial_step: 0.05, ..nm });
        results.push(if b.value <= a.value { b } else { a });
    }
    let start_values: Vec<f64> = results.iter().map(|r| r.value).collect();
    let best = results.iter().min_by(|a, b| a.value.partial_cmp(&b.value).unwrap()).unwrap();
    let raw = decode(&best.x, k, opts.merge_tol);
    // drop negligible atoms; with h = 0 atoms at the origin are exact
    let pts: Vec<(f64, f64)> = raw
        .atoms()
        .iter()
        .zip(raw.masses())
        .filter(|(_, &w)| w >= opts.prune_mass)
        .map(|(&q, &w)| (if spec.h == 0.0 && q < 1e-4 { 0.0 } else { q }, w))
        .collect();
    let nu = AtomicMeasure::from_unsorted(&pts, opts.merge_tol)?;
    let (b0, _) = optimal_b(spec, &nu);
    let (nu, b, converged) = newton_polish(spec, &nu, b0);
    let (nu, b) = stationarity_refine(spec, &nu, b);
    let mut report = spherical_report(spec, &nu, b)?;
    let worst = report.q_residuals.iter().chain(&report.phi_psi_residuals).fold(report.b_residual.abs(), |a, r| a.max(r.abs()));
    report.k_used = k;
    report.converged = converged || worst < 1e-9;
    report.start_values = start_values;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomCriterion {
    pub is_atom: bool,
    pub max_g: f64,
    pub argmax: f64,
}

/// With h = 0 the minimizer is a single atom iff
/// g(s) = ξ(s) + log(1 − s) + s < 0 on (0, 1).
pub fn atom_criterion(spec: &MixtureSpec) -> Result<AtomCriterion> {
    if spec.h != 0.0 {
        return Err(Error::Precondition("the single-atom criterion needs h = 0".into()));
    }
    let g = |s: f64| spec.xi(s) + (-s).ln_1p() + s;
    let n = 4000;
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
    for i in 1..n {
        let s = i as f64 / n as f64;
        let v = g(s);
        if v > best {
            best = v;
            arg = s;
        }
    }
    let h = 1.0 / n as f64;
    let (s, v) = golden_section(|s| -g(s), (arg - h).max(1e-12), (arg + h).min(1.0 - 1e-12), 1e-14, 200);
    let (argmax, max_g) = if -v > best { (s, -v) } else { (arg, best) };
    Ok(AtomCriterion { is_atom: max_g < 0.0, max_g, argmax })
}

/// Smallest β at which the single-atom criterion fails for ξ = β²ξ₀, by
/// bisection on [lo, hi].
pub fn atom_transition_beta(spec: &MixtureSpec, lo: f64, hi: f64) -> Result<f64> {
    let at = |b: f64| -> Result<bool> { Ok(atom_criterion(&spec.with_beta(b)?)?.is_atom) };
    if !at(lo)? || at(hi)? {
        return Err(Error::Precondition("criterion does not change over the bracket".into()));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > 1e-10 {
        let mid = 0.5 * (a + b);
        if at(mid)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// 𝒫(λ, q) in closed form:
/// log(b²/(b²−λ²)) + ∫₀^q ξ″/(b−λ−ψ) + ½∫_q¹ ξ″[1/(b−λ−ψ) + 1/(b+λ−ψ)]
/// − λq + b − 1 − log b − ∫tξ″μ + h²/(b−λ−ψ(0)).
pub fn gt_value_sph(spec: &MixtureSpec, mu: &AtomicMeasure, b: f64, lambda: f64, q: f64) -> Result<f64> {
    let cdf = mu.step_cdf();
    let pk = psi_knots(spec, &cdf);
    if !(b - pk[0] - lambda.abs() > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} outside the admissible window")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("q = {q} outside [0,1]")));
    }
    let t1 = -(-(lambda * lambda) / (b * b)).ln_1p();
    let t2 = int_inv_pow(spec, &cdf, &pk, b - lambda, 0.0, q, 1);
    let t3 = 0.5 * (int_inv_pow(spec, &cdf, &pk, b - lambda, q, 1.0, 1) + int_inv_pow(spec, &cdf, &pk, b + lambda, q, 1.0, 1));
    let l = 2.0 * correction_term(spec, mu);
    Ok(t1 + t2 + t3 - lambda * q + b - 1.0 - b.ln() - l + spec.h * spec.h / (b - lambda - pk[0]))
}

/// ∂_λ𝒫(λ, q) in closed form.
pub fn gt_dlambda_sph(spec: &MixtureSpec, mu: &AtomicMeasure, b: f64, lambda: f64, q: f64) -> Result<f64> {
    let cdf = mu.step_cdf();
    let pk = psi_knots(spec, &cdf);
    if !(b - pk[0] - lambda.abs() > 0.0) {
        return Err(Error::Domain(format!("lambda = {lambda} outside the admissible window")));
    }
    let t1 = 2.0 * lambda / (b * b - lambda * lambda);
    let t2 = int_inv_pow(spec, &cdf, &pk, b - lambda, 0.0, q, 2);
    let t3 = 0.5 * (int_inv_pow(spec, &cdf, &pk, b - lambda, q, 1.0, 2) - int_inv_pow(spec, &cdf, &pk, b + lambda, q, 1.0, 2));
    let g = b - lambda - pk[0];
    Ok(t1 + t2 + t3 - q + spec.h * spec.h / (g * g))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SphBarrier {
    pub q_star: f64,
    pub q: f64,
    pub lambda: f64,
    pub value: f64,
    /// 𝒫(0, q*) = 2P_S(μ, b).
    pub baseline: f64,
    pub gap: f64,
    /// Rate C in λ₁ ≲ e^{−CN}.
    pub rate: f64,
    pub eigenpair: Option<(f64, (f64, f64))>,
}

/// Closed-form analogue of the Ising barrier search.
pub fn barrier_search_sph(
    spec: &MixtureSpec,
    report: &SphericalOptReport,
    q_star: f64,
    offsets: &[f64],
) -> Result<Option<SphBarrier>> {
    let mu = &report.minimizer;
    let b = report.b;
    if !mu.atoms().iter().any(|&a| (a - q_star).abs() < 1e-12) {
        return Err(Error::Precondition(format!("q* = {q_star} is not an atom of the measure")));
    }
    let r = replicon_sph(spec, mu, q_star)?;
    if !(r > 0.0) {
        return Err(Error::Precondition(format!("replicon at q* is {r}, not positive")));
    }
    let window = b - psi(spec, mu, 0.0);
    let lmax = 0.9 * window;
    let baseline = gt_value_sph(spec, mu, b, 0.0, q_star)?;
    let dl = 1e-4;
    let a_star = (gt_dlambda_sph(spec, mu, b, dl, q_star)? - gt_dlambda_sph(spec, mu, b, -dl, q_star)?) / (2.0 * dl);
    let b_star = spec.ddxi(q_star) / (b - psi(spec, mu, q_star)).powi(2) - 1.0;
    let eig = crate::gt2d::hessian_eigenpair(a_star, b_star);
    let mut offs: Vec<f64> = offsets.iter().flat_map(|&o| [o, -o]).collect();
    offs.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    let mut best: Option<SphBarrier> = None;
    for off in offs {
        let q = q_star + off;
        if !(0.0..=1.0).contains(&q) {
            continue;
        }
        let d1 = gt_dlambda_sph(spec, mu, b, 0.0, q)?;
        let d2 = (gt_dlambda_sph(spec, mu, b, dl, q)? - gt_dlambda_sph(spec, mu, b, -dl, q)?) / (2.0 * dl);
        let guess = if d2 > 0.0 { -d1 / d2 } else { -d1.signum() * 0.01 };
        let guess = guess.clamp(-lmax, lmax);
        let (lo, hi) = if guess >= 0.0 { (0.0, (3.0 * guess).min(lmax)) } else { ((3.0 * guess).max(-lmax), 0.0) };
        let (lam, val) = golden_section(
            |l| gt_value_sph(spec, mu, b, l, q).unwrap_or(f64::INFINITY),
            lo,
            hi,
            1e-12,
            200,
        );
        let gap = baseline - val;
        if gap > 0.0 && lam != 0.0 && best.as_ref().is_none_or(|bb| gap > bb.gap) {
            best = Some(SphBarrier { q_star, q, lambda: lam, value: val, baseline, gap, rate: gap, eigenpair: eig });
        }
        if best.is_some() {
            break;
        }
    }
    Ok(best)
}

/// Closed-form rate curve I_lb(q) = 2P_S − min_λ 𝒫(λ, q), λ over 90% of the
/// admissible window; negative q mirrored when h = 0 and ξ is even.
pub fn rate_curve_sph(spec: &MixtureSpec, report: &SphericalOptReport, q_grid: &[f64], opts: &RateOptions) -> Result<RateCurve> {
    if !spec.is_convex() {
        return Err(Error::Precondition(
            "the two-replica bound requires xi convex on [-1,1]; this mixture is not".into(),
        ));
    }
    if q_grid.iter().any(|&q| !(-1.0..=1.0).contains(&q)) {
        return Err(Error::Domain("q grid must lie in [-1,1]".into()));
    }
    let (mu, b) = (&report.minimizer, report.b);
    let symmetric = spec.h == 0.0 && spec.is_even();
    let lmax = 0.9 * (b - psi(spec, mu, 0.0));
    let baseline = gt_value_sph(spec, mu, b, 0.0, 0.0)?;
    let nl = opts.n_lambda.max(3);
    let eval_q = |q: f64| -> (f64, f64) {
        let f = |l: f64| gt_value_sph(spec, mu, b, l, q).unwrap_or(f64::INFINITY);
        let ls: Vec<f64> = (0..nl).map(|i| -lmax + 2.0 * lmax * i as f64 / (nl - 1) as f64).collect();
        let bi = (0..nl).min_by(|&i, &j| f(ls[i]).partial_cmp(&f(ls[j])).unwrap()).unwrap();
        let (l, v) = golden_section(f, ls[bi.saturating_sub(1)], ls[(bi + 1).min(nl - 1)], 1e-12, 200);
        ((baseline - v.min(baseline)).max(0.0), l)
    };
    let mut i_lb = Vec::with_capacity(q_grid.len());
    let mut lambda_star = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        let (i, l) = if q >= 0.0 {
            eval_q(q)
        } else if symmetric {
            let (i, l) = eval_q(-q);
            (i, -l)
        } else {
            (0.0, 0.0)
        };
        i_lb.push(i);
        lambda_star.push(l);
    }
    let mut zeros: Vec<f64> =
        mu.atoms().iter().zip(mu.masses()).filter(|(_, &w)| w >= opts.zero_mass_min).map(|(&a, _)| a).collect();
    if symmetric {
        let neg: Vec<f64> = zeros.iter().filter(|&&z| z > 0.0).map(|z| -z).collect();
        zeros.extend(neg);
    }
    zeros.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let is_zero = q_grid.iter().map(|q| zeros.iter().any(|z| (z - q).abs() < 1e-12)).collect();
    let (h_cal, certificate) = certify(q_grid, &i_lb, &zeros);
    Ok(RateCurve {
        q_grid: q_grid.to_vec(),
        i_lb,
        lambda_star,
        is_zero,
        zeros,
        baseline,
        h_cal,
        gfeb: h_cal > opts.gfeb_tol,
        certificate,
    })
}

/// (K/ε)² e^{−𝒟}/(1 − 4e^{−𝒟}); `None` unless 𝒟 > log 4.
pub fn manifold_gap_bound(k_lip: f64, eps: f64, difficulty: f64) -> Option<f64> {
    let e = (-difficulty).exp();
    if 4.0 * e >= 1.0 {
        return None;
    }
    Some((k_lip / eps).powi(2) * e / (1.0 - 4.0 * e))
}

/// e^{−2 osc U}·λ₁(M) with λ₁(M) = 1 − 1/N.
pub fn poincare_lower_bound_manifold(osc_u: f64, n: usize) -> f64 {
    (-2.0 * osc_u).exp() * (1.0 - 1.0 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cs_delta0() {
        let spec = MixtureSpec::sk(0.7, 0.0).unwrap();
        let nu = AtomicMeasure::dirac(0.0).unwrap();
        assert!((cs_functional(&spec, &nu).unwrap() - 0.49 / 2.0).abs() < 1e-14);
        let spec_h = MixtureSpec::sk(0.7, 0.3).unwrap();
        let nq = AtomicMeasure::dirac(0.4).unwrap();
        let d = cs_functional(&spec_h, &nq).unwrap() - cs_functional(&spec, &nq).unwrap();
        assert!((d - 0.5 * 0.09 * 0.6).abs() < 1e-14);
    }

    #[test]
    fn rs_b_and_consistency() {
        let spec = MixtureSpec::sk(0.5, 0.0).unwrap();
        let nu = AtomicMeasure::dirac(0.0).unwrap();
        let (b, v) = optimal_b(&spec, &nu);
        assert!((b - 1.5).abs() < 1e-6);
        assert!((v - cs_functional(&spec, &nu).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_integrals_match_quadrature() {
        let spec = MixtureSpec::new(vec![(2, 0.5), (4, 1.5)], 0.0).unwrap();
        let nu = AtomicMeasure::new(vec![0.1, 0.5, 0.8], vec![0.2, 0.3, 0.5]).unwrap();
        let cdf = nu.step_cdf();
        let pk = psi_knots(&spec, &cdf);
        let c = pk[0] + 0.7;
        let gl = GaussLegendre::new(64);
        for &(lo, hi) in &[(0.0, 1.0), (0.05, 0.6), (0.3, 0.95)] {
            let mut q1 = 0.0;
            let mut q2 = 0.0;
            let mut cuts: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
            cuts.extend(nu.atoms().iter().filter(|&&a| a > lo && a < hi));
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                q1 += gl.integrate(a, b, |t| spec.ddxi(t) / (c - psi(&spec, &nu, t)));
                q2 += gl.integrate(a, b, |t| spec.ddxi(t) / (c - psi(&spec, &nu, t)).powi(2));
            }
            assert!((int_inv_pow(&spec, &cdf, &pk, c, lo, hi, 1) - q1).abs() < 1e-11);
            assert!((int_inv_pow(&spec, &cdf, &pk, c, lo, hi, 2) - q2).abs() < 1e-11);
        }
    }

    #[test]
    fn replicon_limits() {
        let spec = MixtureSpec::sk(0.8, 0.0).unwrap();
        let nu = AtomicMeasure::dirac(0.0).unwrap();
        assert!((replicon_sph(&spec, &nu, 0.0).unwrap() - (1.0 - 2.0 * 0.64)).abs() < 1e-14);
    }

    #[test]
    fn manifold_formulas() {
        assert!(manifold_gap_bound(1.0, 0.1, 1.0).is_none());
        let v = manifold_gap_bound(0.1, 0.05, 5.0).unwrap();
        let e = (-5.0f64).exp();
        assert!((v - 4.0 * e / (1.0 - 4.0 * e)).abs() < 1e-15);
        assert!((poincare_lower_bound_manifold(0.0, 10) - 0.9).abs() < 1e-15);
    }
}
