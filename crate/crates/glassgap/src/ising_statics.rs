//! The Ising Parisi functional P_I(ν) = φ_ν(0, h) − ½∫₀¹ ξ″(s) s m(s) ds over
//! atomic measures, its k-atomic minimization and the replicon diagnostics
//! at the minimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::AtomicMeasure;
use crate::model::MixtureSpec;
use crate::numerics::grid::{Extrap, UniformGrid};
use crate::numerics::optim::{golden_section, nelder_mead, NelderMeadOptions};
use crate::parisi_pde::{
    default_half_width, local_field_stats, log_cosh, replicon, solve_recursion, Engine1d, GridParams,
    LocalFieldMethod,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParisiValue {
    pub value: f64,
    pub phi0: f64,
    pub correction: f64,
}

/// ½∫₀¹ ξ″(s)·s·m(s) ds, exact on each constancy interval through the
/// antiderivative sξ′(s) − ξ(s).
pub fn correction_term(spec: &MixtureSpec, nu: &AtomicMeasure) -> f64 {
    let anti = |s: f64| s * spec.dxi(s) - spec.xi(s);
    let cdf = nu.step_cdf();
    let mut acc = 0.0;
    for j in 0..cdf.values.len() {
        acc += cdf.values[j] * (anti(cdf.knots[j + 1]) - anti(cdf.knots[j]));
    }
    0.5 * acc
}

/// Reusable φ(0, h) evaluator: keeps the grid and quadrature across calls.
pub struct Evaluator {
    spec: MixtureSpec,
    eng: Engine1d,
}

impl Evaluator {
    pub fn new(spec: &MixtureSpec, params: &GridParams) -> Result<Self> {
        spec.validate()?;
        if params.quad_order < 32 {
            return Err(Error::Domain("quadrature order must be >= 32".into()));
        }
        let l = params.half_width.unwrap_or_else(|| default_half_width(spec));
        if l < 8.0 + spec.h {
            return Err(Error::GridTooSmall(format!("half-width {l} below 8 + |h|")));
        }
        let grid = UniformGrid::symmetric(l, params.n_x);
        Ok(Self { spec: spec.clone(), eng: Engine1d::new(grid, params.quad_order) })
    }

    pub fn phi0(&self, nu: &AtomicMeasure) -> f64 {
        let spec = &self.spec;
        let cdf = nu.step_cdf();
        let ex = Extrap::abs(1.0);
        let mut phi: Vec<f64> = self.eng.grid.points().iter().map(|&x| log_cosh(x)).collect();
        for j in (1..cdf.values.len()).rev() {
            let (a, b, m) = (cdf.knots[j], cdf.knots[j + 1], cdf.values[j]);
            let s = (spec.dxi(b) - spec.dxi(a)).max(0.0).sqrt();
            phi = self.eng.step(&phi, ex, s, m, &[]).0;
        }
        let s = (spec.dxi(cdf.knots[1]) - spec.dxi(0.0)).max(0.0).sqrt();
        self.eng.point(&phi, ex, s, cdf.values[0], spec.h, &[]).0
    }

    pub fn value(&self, nu: &AtomicMeasure) -> ParisiValue {
        let phi0 = self.phi0(nu);
        let correction = correction_term(&self.spec, nu);
        ParisiValue { value: phi0 - correction, phi0, correction }
    }
}

pub fn parisi_functional(spec: &MixtureSpec, nu: &AtomicMeasure, params: &GridParams) -> Result<ParisiValue> {
    let sol = solve_recursion(spec, nu, params)?;
    let phi0 = sol.phi0_at_h();
    let correction = correction_term(spec, nu);
    Ok(ParisiValue { value: phi0 - correction, phi0, correction })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KrsbOptions {
    pub n_starts: usize,
    pub merge_tol: f64,
    pub gprev_tol: f64,
    pub seed: u64,
    /// Grid used inside the search; the reported value uses `final_grid`.
    pub search_grid: GridParams,
    pub final_grid: GridParams,
    pub max_evals: usize,
}

impl Default for KrsbOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            merge_tol: 1e-4,
            gprev_tol: 1e-3,
            seed: 0,
            search_grid: GridParams { n_x: 1024, quad_order: 64, ..GridParams::default() },
            final_grid: GridParams::default(),
            max_evals: 1500,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomDiagnostic {
    pub q: f64,
    pub mass: f64,
    pub replicon: f64,
    pub e_phix_sq: f64,
    pub fixed_point_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseReport {
    pub minimizer: AtomicMeasure,
    pub k_used: usize,
    pub free_energy: f64,
    pub atoms: Vec<AtomDiagnostic>,
    /// Best single-atom value min_q P_I(δ_q) and its location.
    pub best_single_atom: (f64, f64),
    /// Final values reached by the individual starts (search grid).
    pub start_values: Vec<f64>,
    pub converged: bool,
    pub is_atom: bool,
    pub grsb: bool,
    pub gprev: bool,
}

impl PhaseReport {
    /// (β, F, k_eff, atoms, masses, replicons, flags) as one delimited row.
    pub fn table_row(&self, beta: f64) -> String {
        let join = |v: Vec<f64>| v.iter().map(|x| format!("{x:.8}")).collect::<Vec<_>>().join(";");
        format!(
            "{beta},{:.12},{},{},{},{},{}",
            self.free_energy,
            self.minimizer.len(),
            join(self.atoms.iter().map(|a| a.q).collect()),
            join(self.atoms.iter().map(|a| a.mass).collect()),
            join(self.atoms.iter().map(|a| a.replicon).collect()),
            format!("is_atom={};grsb={};gprev={}", self.is_atom, self.grsb, self.gprev)
        )
    }

    pub const TABLE_HEADER: &'static str = "beta,free_energy,k_eff,atoms,masses,replicons,flags";
}

/// Unconstrained parameters → k-atomic measure: atoms clamped to [0,1] and
/// sorted, masses by softmax of k−1 logits (the last fixed to 0).
fn decode(x: &[f64], k: usize, merge_tol: f64) -> AtomicMeasure {
    let mut logits = vec![0.0; k];
    logits[..k - 1].copy_from_slice(&x[k..2 * k - 1]);
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    let pts: Vec<(f64, f64)> = (0..k).map(|i| (x[i].clamp(0.0, 1.0), e[i] / s)).collect();
    AtomicMeasure::from_unsorted(&pts, merge_tol).expect("softmax masses are positive")
}

pub fn minimize_krsb(spec: &MixtureSpec, k: usize, opts: &KrsbOptions) -> Result<PhaseReport> {
    if k == 0 {
        return Err(Error::Domain("k must be >= 1".into()));
    }
    let ev = Evaluator::new(spec, &opts.search_grid)?;
    let single = |q: f64| ev.value(&AtomicMeasure::dirac(q).unwrap()).value;

    // 1-atom scan
    let n_scan = 41;
    let mut best = (0.0, f64::INFINITY);
    for i in 0..n_scan {
        let q = i as f64 / (n_scan - 1) as f64;
        let v = single(q);
        if v < best.1 {
            best = (q, v);
        }
    }
    let step = 1.0 / (n_scan - 1) as f64;
    let (qa, va) = golden_section(single, (best.0 - step).max(0.0), (best.0 + step).min(1.0), 1e-7, 200);
    let single_best = if va < best.1 { (qa, va) } else { best };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = Vec::with_capacity(opts.n_starts.max(1));
    // start 0 spreads the atoms around the best single atom
    let mut x0 = vec![0.0; 2 * k - 1];
    for i in 0..k {
        x0[i] = (single_best.0 + 0.1 * (i as f64 - (k as f64 - 1.0) / 2.0)).clamp(0.0, 1.0);
    }
    starts.push(x0);
    while starts.len() < opts.n_starts.max(1) {
        let mut x = vec![0.0; 2 * k - 1];
        for v in x.iter_mut().take(k) {
            *v = rng.random::<f64>();
        }
        for v in x.iter_mut().skip(k) {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        starts.push(x);
    }
    let nm = NelderMeadOptions { initial_step: 0.15, ftol: 1e-12, xtol: 1e-8, max_evals: opts.max_evals };
    let results: Vec<_> = starts
        .par_iter()
        .map(|x0| {
            let f = |x: &[f64]| {
                // soft walls keep the raw atoms near [0,1]
                let wall: f64 = x[..k].iter().map(|&q| (q.max(1.0) - 1.0).powi(2) + q.min(0.0).powi(2)).sum();
                ev.value(&decode(x, k, opts.merge_tol)).value + wall
            };
            let first = nelder_mead(f, x0, &nm);
            // one restart from the end point
            let again = nelder_mead(f, &first.x, &NelderMeadOptions { initial_step: 0.05, ..nm });
            if again.value <= first.value { again } else { first }
        })
        .collect();
    let start_values: Vec<f64> = results.iter().map(|r| r.value).collect();
    let best_run = results
        .iter()
        .min_by(|a, b| a.value.partial_cmp(&b.value).unwrap())
        .unwrap();
    let mut minimizer = decode(&best_run.x, k, opts.merge_tol);
    if best_run.value > single_best.1 {
        minimizer = AtomicMeasure::dirac(single_best.0)?;
    }
    let converged = results.iter().all(|r| r.converged);
    let minimizer = polish_atoms(spec, &ev, prune(&minimizer, 1e-4), &opts.search_grid)?;
    let mut report = diagnose(spec, &minimizer, &opts.final_grid, opts.gprev_tol)?;
    report.k_used = k;
    report.start_values = start_values;
    report.converged = converged;
    report.best_single_atom = (single_best.0, ev.value(&AtomicMeasure::dirac(single_best.0)?).value);
    Ok(report)
}

fn prune(nu: &AtomicMeasure, min_mass: f64) -> AtomicMeasure {
    let pts: Vec<(f64, f64)> = nu
        .atoms()
        .iter()
        .zip(nu.masses())
        .filter(|(_, &w)| w >= min_mass)
        .map(|(&q, &w)| (q, w))
        .collect();
    AtomicMeasure::from_unsorted(&pts, 0.0).unwrap_or_else(|_| nu.clone())
}

/// Fixed-point sweeps q_i ← E(∂ₓφ)²(q_i, X_{q_i}) with masses held fixed,
/// accepted while the functional does not increase.
fn polish_atoms(spec: &MixtureSpec, ev: &Evaluator, nu: AtomicMeasure, params: &GridParams) -> Result<AtomicMeasure> {
    let mut cur = nu;
    let mut val = ev.value(&cur).value;
    for _ in 0..40 {
        let sol = solve_recursion(spec, &cur, params)?;
        let mut next = Vec::with_capacity(cur.len());
        for &q in cur.atoms() {
            next.push(local_field_stats(&sol, q, LocalFieldMethod::DensityQuadrature, 0, 0)?.e_phix_sq.clamp(0.0, 1.0));
        }
        if next.windows(2).any(|w| w[0] >= w[1]) {
            break;
        }
        let shift = next.iter().zip(cur.atoms()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let cand = match AtomicMeasure::new(next, cur.masses().to_vec()) {
            Ok(c) => c,
            Err(_) => break,
        };
        let v = ev.value(&cand).value;
        if v > val + 1e-10 {
            break;
        }
        cur = cand;
        val = v;
        if shift < 1e-10 {
            break;
        }
    }
    Ok(cur)
}

/// Replicon and fixed-point diagnostics of a given measure.
pub fn diagnose(spec: &MixtureSpec, nu: &AtomicMeasure, params: &GridParams, gprev_tol: f64) -> Result<PhaseReport> {
    let sol = solve_recursion(spec, nu, params)?;
    let free_energy = sol.phi0_at_h() - correction_term(spec, nu);
    let mut atoms = Vec::new();
    for (&q, &w) in nu.atoms().iter().zip(nu.masses()) {
        let st = local_field_stats(&sol, q, LocalFieldMethod::DensityQuadrature, 0, 0)?;
        atoms.push(AtomDiagnostic {
            q,
            mass: w,
            replicon: replicon(spec, q, &st)?,
            e_phix_sq: st.e_phix_sq,
            fixed_point_residual: (st.e_phix_sq - q).abs(),
        });
    }
    let is_atom = nu.second_mass() < 1e-3;
    let mut report = PhaseReport {
        minimizer: nu.clone(),
        k_used: nu.len(),
        free_energy,
        atoms,
        best_single_atom: (f64::NAN, f64::NAN),
        start_values: vec![],
        converged: true,
        is_atom,
        grsb: !is_atom,
        gprev: false,
    };
    report.gprev = check_gprev_tol(&report, gprev_tol).0;
    Ok(report)
}

fn check_gprev_tol(report: &PhaseReport, tol: f64) -> (bool, Option<f64>) {
    report
        .atoms
        .iter()
        .filter(|a| a.mass >= 1e-3)
        .find(|a| a.replicon > tol)
        .map(|a| (true, Some(a.q)))
        .unwrap_or((false, None))
}

/// GPREV with the default tolerance 1e−3; returns a witness atom.
pub fn check_gprev(report: &PhaseReport) -> (bool, Option<f64>) {
    check_gprev_tol(report, 1e-3)
}

/// F′(β) = β Σ w_i (ξ₀(1) − ξ₀(q_i)).
pub fn free_energy_beta_derivative(spec: &MixtureSpec, nu: &AtomicMeasure) -> Result<f64> {
    let beta = spec.beta.ok_or_else(|| Error::InvalidModel("spec has no beta decomposition".into()))?;
    let one = spec.xi0(1.0).unwrap();
    Ok(beta * nu.atoms().iter().zip(nu.masses()).map(|(&q, &w)| w * (one - spec.xi0(q).unwrap())).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta0_closed_form() {
        let spec = MixtureSpec::new(vec![(2, 0.7), (3, 0.2)], 0.4).unwrap();
        let nu = AtomicMeasure::dirac(0.0).unwrap();
        let v = parisi_functional(&spec, &nu, &GridParams::default()).unwrap();
        assert!((v.value - (log_cosh(0.4) + spec.xi(1.0) / 2.0)).abs() < 1e-8);
        assert_eq!(v.value, v.phi0 - v.correction);
    }

    #[test]
    fn beta_derivative_arithmetic() {
        let spec = MixtureSpec::sk(1.0, 0.0).unwrap();
        let nu = AtomicMeasure::new(vec![0.0, 0.5], vec![0.5, 0.5]).unwrap();
        assert!((free_energy_beta_derivative(&spec, &nu).unwrap() - 0.875).abs() < 1e-15);
        let plain = MixtureSpec::new(vec![(2, 1.0)], 0.0).unwrap();
        assert!(free_energy_beta_derivative(&plain, &nu).is_err());
    }

    #[test]
    fn evaluator_matches_full_solve() {
        let spec = MixtureSpec::sk(1.2, 0.2).unwrap();
        let nu = AtomicMeasure::new(vec![0.1, 0.6], vec![0.3, 0.7]).unwrap();
        let p = GridParams::default();
        let a = Evaluator::new(&spec, &p).unwrap().value(&nu).value;
        let b = parisi_functional(&spec, &nu, &p).unwrap().value;
        assert!((a - b).abs() < 1e-9, "{a} {b}");
    }
}
