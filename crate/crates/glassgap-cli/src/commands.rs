use std::path::PathBuf;

use glassgap::dynamics::{
    build_metropolis, empirical_rate, exact_gap_report, mcmc_overlap, overlap_distribution, Landscape, McmcOptions,
    ReportOptions, SpectralReport,
};
use glassgap::model::{sample_hamiltonian, CouplingTensors};
use glassgap::spherical::{atom_criterion, atom_transition_beta};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Kind, PhaseScanConfig, RunConfig};
use crate::failure::Failure;
use crate::statics::Static;

/// Collects output files under one directory.
pub struct Output {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl Output {
    pub fn new(dir: PathBuf) -> Result<Self, Failure> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        std::fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }
}

/// Summary for the manifest plus the failure that sets the exit code, if any.
pub struct Outcome {
    pub summary: Value,
    pub failure: Option<Failure>,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn sci(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.10e}"))
}

/// Keeps the most severe failure seen.
fn worst(a: Option<Failure>, b: Option<Failure>) -> Option<Failure> {
    match (a, b) {
        (None, b) => b,
        (a, None) => a,
        (Some(a), Some(b)) => Some(if b.exit_code() > a.exit_code() { b } else { a }),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseScanRow {
    pub beta: f64,
    pub free_energy: Option<f64>,
    pub k_eff: Option<usize>,
    pub grsb: Option<bool>,
    pub gprev: Option<bool>,
    pub is_atom: Option<bool>,
    pub converged: Option<bool>,
    pub barrier_gap: Option<f64>,
    pub h_cal: Option<f64>,
    pub gfeb: Option<bool>,
    pub status: String,
}

impl PhaseScanRow {
    pub const HEADER: &'static str = "beta,free_energy,k_eff,grsb,gprev,is_atom,converged,barrier_gap,h_cal,gfeb,status";

    fn empty(beta: f64) -> Self {
        Self {
            beta,
            free_energy: None,
            k_eff: None,
            grsb: None,
            gprev: None,
            is_atom: None,
            converged: None,
            barrier_gap: None,
            h_cal: None,
            gfeb: None,
            status: String::new(),
        }
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.beta,
            sci(self.free_energy),
            opt(self.k_eff),
            opt(self.grsb),
            opt(self.gprev),
            opt(self.is_atom),
            opt(self.converged),
            sci(self.barrier_gap),
            sci(self.h_cal),
            opt(self.gfeb),
            self.status.replace(',', ";")
        )
    }
}

fn scan_point(cfg: &RunConfig, ps: &PhaseScanConfig, beta: f64, q_grid: &[f64], extras: bool) -> (PhaseScanRow, Option<Failure>) {
    let mut row = PhaseScanRow::empty(beta);
    let st = match Static::solve(&cfg.model, &cfg.numerics, beta) {
        Ok(s) => s,
        Err(e) => {
            row.status = format!("error: {e}");
            return (row, Some(e));
        }
    };
    row.free_energy = Some(st.free_energy());
    row.k_eff = Some(st.measure().len());
    row.is_atom = Some(st.is_atom());
    row.grsb = Some(!st.is_atom());
    row.gprev = Some(st.gprev(cfg.numerics.gprev_tol));
    row.converged = Some(st.converged());
    let mut fail = None;
    if extras && ps.barrier {
        match st.barrier(&cfg.numerics, &cfg.barrier.clone().unwrap_or_default()) {
            Ok(b) => row.barrier_gap = b.map(|b| b.gap),
            Err(e) => fail = Some(e),
        }
    }
    if ps.gfeb && fail.is_none() {
        match st.rate_curve(&cfg.numerics, q_grid) {
            Ok(rc) => {
                row.h_cal = Some(rc.h_cal);
                row.gfeb = Some(rc.gfeb);
            }
            Err(e) => fail = Some(e),
        }
    }
    row.status = match (&fail, st.converged()) {
        (Some(e), _) => format!("error: {e}"),
        (None, true) => "ok".into(),
        (None, false) => "not_converged".into(),
    };
    if fail.is_none() && !st.converged() {
        fail = Some(Failure::Numerical(format!("minimizer at beta = {beta} did not converge")));
    }
    (row, fail)
}

#[derive(Clone, Debug, Serialize)]
pub struct Transition {
    pub flag: String,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub value_lo: bool,
    pub value_hi: bool,
    pub points: Vec<(f64, bool)>,
}

/// Bisects a boolean flag between two β values with different verdicts.
fn bisect_flag(
    flag: &str,
    (mut lo, mut hi): (f64, f64),
    (vlo, vhi): (bool, bool),
    steps: usize,
    eval: impl Fn(f64) -> Option<bool>,
) -> Transition {
    let mut points = Vec::new();
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        match eval(mid) {
            Some(v) => {
                points.push((mid, v));
                if v == vlo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            None => break,
        }
    }
    Transition { flag: flag.into(), beta_lo: lo, beta_hi: hi, value_lo: vlo, value_hi: vhi, points }
}

pub fn phase_scan(cfg: &RunConfig, out: &mut Output) -> Result<Outcome, Failure> {
    let ps = cfg.phase_scan.clone().unwrap_or_default();
    if ps.betas.windows(2).any(|w| !(w[0] < w[1])) || ps.betas.iter().any(|b| !(*b > 0.0)) {
        return Err(Failure::Config("phase_scan.betas must be positive and strictly ascending".into()));
    }
    let q_grid = if ps.gfeb { ps.q_grid.points()? } else { Vec::new() };
    let results: Vec<(PhaseScanRow, Option<Failure>)> =
        ps.betas.par_iter().map(|&b| scan_point(cfg, &ps, b, &q_grid, true)).collect();
    let rows: Vec<PhaseScanRow> = results.iter().map(|r| r.0.clone()).collect();
    let mut failure = results.into_iter().fold(None, |a, (_, f)| worst(a, f));

    let mut csv = String::from(PhaseScanRow::HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    out.write("phase_scan.csv", &csv)?;

    let atom_flags: Vec<(f64, bool)> = rows.iter().filter_map(|r| r.is_atom.map(|v| (r.beta, v))).collect();
    let gfeb_flags: Vec<(f64, bool)> = rows.iter().filter_map(|r| r.gfeb.map(|v| (r.beta, v))).collect();
    let flips = |f: &[(f64, bool)]| f.windows(2).filter(|w| w[0].1 != w[1].1).count();

    let mut transitions = Vec::new();
    for w in atom_flags.windows(2).filter(|w| w[0].1 != w[1].1) {
        let eval = |b: f64| Static::solve(&cfg.model, &cfg.numerics, b).ok().filter(|s| s.converged()).map(|s| s.is_atom());
        transitions.push(bisect_flag("single_atom", (w[0].0, w[1].0), (w[0].1, w[1].1), ps.refine_steps, eval));
    }
    for w in gfeb_flags.windows(2).filter(|w| w[0].1 != w[1].1) {
        let eval = |b: f64| {
            let s = Static::solve(&cfg.model, &cfg.numerics, b).ok()?;
            s.rate_curve(&cfg.numerics, &q_grid).ok().map(|rc| rc.gfeb)
        };
        transitions.push(bisect_flag("gfeb", (w[0].0, w[1].0), (w[0].1, w[1].1), ps.refine_steps, eval));
    }

    let points = |flag: &str, base: &[(f64, bool)]| -> Vec<(f64, bool)> {
        let mut p = base.to_vec();
        for t in transitions.iter().filter(|t| t.flag == flag) {
            p.extend(t.points.iter().cloned());
        }
        p
    };
    let beta_s = points("single_atom", &atom_flags).iter().filter(|p| p.1).map(|p| p.0).fold(None, |a: Option<f64>, b| Some(a.map_or(b, |a| a.max(b))));
    let beta_gfeb = points("gfeb", &gfeb_flags).iter().filter(|p| p.1).map(|p| p.0).fold(None, |a: Option<f64>, b| Some(a.map_or(b, |a| a.min(b))));
    if let (Some(s), Some(g)) = (beta_s, beta_gfeb) {
        if g < s {
            failure = worst(
                failure,
                Some(Failure::Invariant(format!("certified GFEB at beta = {g} below the largest single-atom beta {s}"))),
            );
        }
    }

    let mut criterion = Value::Null;
    if cfg.model.kind == Kind::Spherical && cfg.model.h == 0.0 && !ps.betas.is_empty() {
        let spec = cfg.model.spec_at(ps.betas[0])?;
        let verdicts: Vec<bool> =
            ps.betas.iter().map(|&b| Ok(atom_criterion(&spec.with_beta(b)?)?.is_atom)).collect::<Result<_, glassgap::Error>>()?;
        let agree = rows.iter().zip(&verdicts).filter(|(r, v)| r.is_atom == Some(**v)).count();
        let (lo, hi) = (ps.betas[0], ps.betas[ps.betas.len() - 1]);
        let beta_c = if verdicts[0] && !verdicts[verdicts.len() - 1] { Some(atom_transition_beta(&spec, lo, hi)?) } else { None };
        criterion = json!({ "transition_beta": beta_c, "agree": agree, "total": rows.len() });
    }

    let mut tcsv = String::from("flag,beta_lo,beta_hi,value_lo,value_hi\n");
    for t in &transitions {
        tcsv.push_str(&format!("{},{},{},{},{}\n", t.flag, t.beta_lo, t.beta_hi, t.value_lo, t.value_hi));
    }
    out.write("transitions.csv", &tcsv)?;

    Ok(Outcome {
        summary: json!({
            "rows": rows.len(),
            "beta_s_estimate": beta_s,
            "beta_gfeb_estimate": beta_gfeb,
            "single_atom_flips": flips(&atom_flags),
            "gfeb_flips": flips(&gfeb_flags),
            "transitions": transitions,
            "atom_criterion": criterion,
        }),
        failure,
    })
}

pub fn barrier(cfg: &RunConfig, out: &mut Output) -> Result<Outcome, Failure> {
    let bc = cfg.barrier.clone().unwrap_or_default();
    let st = Static::solve(&cfg.model, &cfg.numerics, cfg.model.beta)?;
    let found = st.barrier(&cfg.numerics, &bc)?;
    let result = json!({
        "beta": cfg.model.beta,
        "free_energy": st.free_energy(),
        "atoms": st.atoms(),
        "converged": st.converged(),
        "barrier": found,
    });
    out.write_json("barrier.json", &result)?;
    let failure = (!st.converged()).then(|| Failure::Numerical("minimizer did not converge".into()));
    Ok(Outcome { summary: json!({ "found": found.is_some(), "gap": found.as_ref().map(|b| b.gap) }), failure })
}

pub fn rate_curve(cfg: &RunConfig, out: &mut Output) -> Result<Outcome, Failure> {
    let rc_cfg = cfg.rate_curve.clone().unwrap_or_default();
    let q_grid = rc_cfg.q_grid.points()?;
    let st = Static::solve(&cfg.model, &cfg.numerics, cfg.model.beta)?;
    let rc = st.rate_curve(&cfg.numerics, &q_grid)?;

    let mut overlay = None;
    let mut overlay_summary = Value::Null;
    if let Some(ov) = &rc_cfg.overlay {
        if cfg.model.kind != Kind::Ising {
            return Err(Failure::Config("the MCMC overlay needs an Ising model".into()));
        }
        let spec = cfg.model.spec()?;
        let poly = CouplingTensors::sample(&spec, ov.n, cfg.numerics.seed)?.multilinear();
        let opts = McmcOptions {
            n_sweeps: ov.sweeps,
            burn_in: ov.burn_in,
            ladder: None,
            n_temps: ov.n_temps,
            s_min: ov.s_min,
            n_batches: ov.n_batches,
            seed: cfg.numerics.seed.wrapping_add(1),
        };
        let res = mcmc_overlap(Landscape::Poly(&poly), &opts)?;
        let eps = ov.epsilon.unwrap_or(1.0 / ov.n as f64);
        overlay_summary = json!({ "n": ov.n, "epsilon": eps, "swap_acceptance": res.swap_acceptance, "poorly_mixing": res.poorly_mixing });
        overlay = Some(empirical_rate(&res, &q_grid, eps));
    }

    let mut csv = String::from("q,i_lb,lambda_star,is_zero");
    if overlay.is_some() {
        csv.push_str(",mcmc_rate,mcmc_stderr");
    }
    csv.push('\n');
    for i in 0..q_grid.len() {
        csv.push_str(&format!("{},{:.12e},{:.8},{}", rc.q_grid[i], rc.i_lb[i], rc.lambda_star[i], rc.is_zero[i]));
        if let Some(o) = &overlay {
            csv.push_str(&format!(",{:.8e},{:.8e}", o[i].rate, o[i].stderr));
        }
        csv.push('\n');
    }
    out.write("rate_curve.csv", &csv)?;
    let cert = json!({
        "gfeb": rc.gfeb,
        "h_cal": rc.h_cal,
        "predicted_log_gap_rate": -rc.h_cal,
        "certificate": rc.certificate,
        "zeros": rc.zeros,
        "baseline": rc.baseline,
        "atoms": st.atoms(),
    });
    out.write_json("certificate.json", &cert)?;

    let mut beta_gfeb = Value::Null;
    if let Some((lo, hi)) = rc_cfg.beta_bracket {
        if !(0.0 < lo && lo < hi) {
            return Err(Failure::Config("rate_curve.beta_bracket needs 0 < lo < hi".into()));
        }
        let eval = |b: f64| -> Result<bool, Failure> { Static::solve(&cfg.model, &cfg.numerics, b)?.rate_curve(&cfg.numerics, &q_grid).map(|r| r.gfeb) };
        let (vlo, vhi) = (eval(lo)?, eval(hi)?);
        beta_gfeb = if vlo {
            json!({ "beta_gfeb_at_most": lo })
        } else if !vhi {
            json!({ "beta_gfeb_above": hi })
        } else {
            let t = bisect_flag("gfeb", (lo, hi), (false, true), rc_cfg.bisect_steps, |b| eval(b).ok());
            json!({ "beta_lo": t.beta_lo, "beta_hi": t.beta_hi, "beta_gfeb_estimate": t.beta_hi })
        };
    }
    let failure = (!st.converged()).then(|| Failure::Numerical("minimizer did not converge".into()));
    Ok(Outcome {
        summary: json!({
            "gfeb": rc.gfeb,
            "h_cal": rc.h_cal,
            "predicted_log_gap_rate": -rc.h_cal,
            "overlay": overlay_summary,
            "bisection": beta_gfeb,
        }),
        failure,
    })
}

pub fn exact_gap(cfg: &RunConfig, out: &mut Output) -> Result<Outcome, Failure> {
    let eg = cfg.exact_gap.clone().unwrap_or_default();
    if cfg.model.kind != Kind::Ising {
        return Err(Failure::Config("exact_gap needs an Ising model".into()));
    }
    let betas = eg.betas.clone().unwrap_or_else(|| vec![cfg.model.beta]);
    let opts = ReportOptions { epsilon: eg.epsilon, replicated: eg.replicated, lazy: eg.lazy };
    let pairs: Vec<(f64, u64)> =
        betas.iter().flat_map(|&b| (0..eg.seeds as u64).map(move |s| (b, s))).map(|(b, s)| (b, cfg.numerics.seed + s)).collect();
    let run = |&(beta, seed): &(f64, u64)| -> Result<(SpectralReport, Option<String>), Failure> {
        let table = sample_hamiltonian(&cfg.model.spec_at(beta)?, eg.n, seed)?;
        let k = build_metropolis(&table, eg.lazy)?;
        k.check(1e-12)?;
        let triplets = eg.export_kernels.then(|| k.to_triplets());
        Ok((exact_gap_report(&table, &opts)?, triplets))
    };
    let reports: Vec<(SpectralReport, Option<String>)> = pairs.par_iter().map(run).collect::<Result<_, _>>()?;

    let mut csv = format!("beta,{},violations\n", SpectralReport::CSV_HEADER);
    let mut violations = Vec::new();
    for ((beta, _), (r, trip)) in pairs.iter().zip(&reports) {
        let v = r.violations();
        csv.push_str(&format!("{beta},{},{}\n", r.csv_row(), v.len()));
        violations.extend(v.into_iter().map(|m| format!("beta={beta} seed={}: {m}", r.seed)));
        if let Some(t) = trip {
            out.write(&format!("kernel_beta{beta}_seed{}.txt", r.seed), t)?;
        }
    }
    out.write("exact_gap.csv", &csv)?;

    let aggregate: Vec<Value> = betas
        .iter()
        .map(|&b| {
            let v: Vec<f64> = pairs.iter().zip(&reports).filter(|(p, _)| p.0 == b).map(|(_, r)| r.0.log_gap_per_spin).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0)).sqrt();
            let difficult = pairs.iter().zip(&reports).filter(|(p, r)| p.0 == b && r.0.difficulty.is_difficult()).count();
            json!({ "beta": b, "mean_log_gap_per_spin": m, "spread": sd, "difficult_instances": difficult, "instances": v.len() })
        })
        .collect();
    let n = eg.n as f64;
    let failure = (!violations.is_empty()).then(|| Failure::Invariant(format!("{} bound violations: {}", violations.len(), violations.join("; "))));
    Ok(Outcome {
        summary: json!({
            "instances": reports.len(),
            "aggregate": aggregate,
            "srw_log_gap_per_spin": (2.0 / n).ln() / n,
            "max_identity_error": reports.iter().filter_map(|r| r.0.identity_error).fold(0.0, f64::max),
            "violations": violations,
        }),
        failure,
    })
}

pub fn mcmc(cfg: &RunConfig, out: &mut Output) -> Result<Outcome, Failure> {
    let mc = cfg.mcmc.clone().unwrap_or_default();
    if cfg.model.kind != Kind::Ising {
        return Err(Failure::Config("mcmc needs an Ising model".into()));
    }
    let spec = cfg.model.spec()?;
    let tensors = CouplingTensors::sample(&spec, mc.n, cfg.numerics.seed)?;
    let poly = tensors.multilinear();
    let opts = McmcOptions {
        n_sweeps: mc.sweeps,
        burn_in: mc.burn_in,
        ladder: None,
        n_temps: mc.n_temps,
        s_min: mc.s_min,
        n_batches: mc.n_batches,
        seed: cfg.numerics.seed.wrapping_add(1),
    };
    let res = mcmc_overlap(Landscape::Poly(&poly), &opts)?;
    let exact = if mc.compare_exact && mc.n <= glassgap::dynamics::overlap::N_MAX_EXACT {
        Some(overlap_distribution(&tensors.to_table()?)?)
    } else {
        None
    };
    let h = &res.histogram;
    let se = h.stderr.clone().unwrap_or_default();
    let mut csv = String::from(if exact.is_some() { "q,prob,stderr,exact\n" } else { "q,prob,stderr\n" });
    for k in 0..h.support.len() {
        csv.push_str(&format!("{:.6},{:.12e},{:.6e}", h.support[k], h.probs[k], se[k]));
        if let Some(e) = &exact {
            csv.push_str(&format!(",{:.12e}", e.probs[k]));
        }
        csv.push('\n');
    }
    out.write("mcmc_hist.csv", &csv)?;
    let tv = exact.as_ref().map(|e| h.total_variation(e)).transpose()?;
    Ok(Outcome {
        summary: json!({
            "n": mc.n,
            "total_variation": tv,
            "swap_acceptance": res.swap_acceptance,
            "ladder": res.ladder,
            "poorly_mixing": res.poorly_mixing,
            "mcmc_seed": opts.seed,
        }),
        failure: None,
    })
}
