//! Static solve shared by the commands: the k-RSB (or spherical) minimizer
//! at one β, plus barrier searches and rate curves built on it.

use glassgap::gt2d::{barrier_search, rate_curve, Gt2d, RateCurve};
use glassgap::ising_statics::{minimize_krsb, PhaseReport};
use glassgap::measure::AtomicMeasure;
use glassgap::model::MixtureSpec;
use glassgap::spherical::{barrier_search_sph, minimize_spherical, rate_curve_sph, SphericalOptReport};
use serde::Serialize;

use crate::config::{BarrierConfig, Kind, ModelConfig, Numerics};
use crate::failure::Failure;

pub enum Solved {
    Ising(PhaseReport),
    Spherical(SphericalOptReport),
}

#[derive(Clone, Debug, Serialize)]
pub struct AtomSummary {
    pub q: f64,
    pub mass: f64,
    pub replicon: f64,
}

pub struct Static {
    pub spec: MixtureSpec,
    pub solved: Solved,
}

#[derive(Clone, Debug, Serialize)]
pub struct BarrierFound {
    pub q_star: f64,
    pub q: f64,
    pub lambda: f64,
    pub value: f64,
    pub baseline: f64,
    pub gap: f64,
}

impl Static {
    pub fn solve(model: &ModelConfig, num: &Numerics, beta: f64) -> Result<Self, Failure> {
        let spec = model.spec_at(beta)?;
        let solved = match model.kind {
            Kind::Ising => Solved::Ising(minimize_krsb(&spec, num.k, &num.krsb())?),
            Kind::Spherical => Solved::Spherical(minimize_spherical(&spec, num.k, &num.spherical())?),
        };
        Ok(Self { spec, solved })
    }

    pub fn measure(&self) -> &AtomicMeasure {
        match &self.solved {
            Solved::Ising(r) => &r.minimizer,
            Solved::Spherical(r) => &r.minimizer,
        }
    }

    pub fn free_energy(&self) -> f64 {
        match &self.solved {
            Solved::Ising(r) => r.free_energy,
            Solved::Spherical(r) => r.cs_value,
        }
    }

    pub fn is_atom(&self) -> bool {
        match &self.solved {
            Solved::Ising(r) => r.is_atom,
            Solved::Spherical(r) => r.is_atom,
        }
    }

    pub fn converged(&self) -> bool {
        match &self.solved {
            Solved::Ising(r) => r.converged,
            Solved::Spherical(r) => r.converged,
        }
    }

    pub fn atoms(&self) -> Vec<AtomSummary> {
        match &self.solved {
            Solved::Ising(r) => r.atoms.iter().map(|a| AtomSummary { q: a.q, mass: a.mass, replicon: a.replicon }).collect(),
            Solved::Spherical(r) => r
                .replicons
                .iter()
                .zip(r.minimizer.masses())
                .map(|(&(q, l), &w)| AtomSummary { q, mass: w, replicon: l })
                .collect(),
        }
    }

    pub fn gprev(&self, tol: f64) -> bool {
        match &self.solved {
            Solved::Ising(r) => r.gprev,
            Solved::Spherical(_) => self.atoms().iter().any(|a| a.mass >= 1e-3 && a.replicon > tol),
        }
    }

    /// Candidate q* in order: the configured one, else atoms by decreasing
    /// replicon.
    fn candidates(&self, q_star: Option<f64>) -> Result<Vec<f64>, Failure> {
        let atoms = self.atoms();
        if let Some(q) = q_star {
            return match atoms.iter().find(|a| (a.q - q).abs() < 1e-6) {
                Some(a) => Ok(vec![a.q]),
                None => Err(Failure::Config(format!("q_star = {q} is not an atom of the minimizer"))),
            };
        }
        let mut a: Vec<&AtomSummary> = atoms.iter().filter(|a| a.mass >= 1e-3).collect();
        a.sort_by(|x, y| y.replicon.partial_cmp(&x.replicon).unwrap_or(std::cmp::Ordering::Equal));
        Ok(a.into_iter().map(|a| a.q).collect())
    }

    pub fn barrier(&self, num: &Numerics, cfg: &BarrierConfig) -> Result<Option<BarrierFound>, Failure> {
        match &self.solved {
            Solved::Ising(r) => {
                let gt = Gt2d::new(&self.spec, &r.minimizer, &num.gt())?;
                for q_star in self.candidates(cfg.q_star)? {
                    if let Some(b) = barrier_search(&gt, q_star, &cfg.options())?.found {
                        return Ok(Some(BarrierFound { q_star, q: b.q, lambda: b.lambda, value: b.value, baseline: b.baseline, gap: b.gap }));
                    }
                }
                Ok(None)
            }
            Solved::Spherical(r) => {
                for q_star in self.candidates(cfg.q_star)? {
                    if r.replicons.iter().any(|&(q, l)| q == q_star && !(l > 0.0)) {
                        continue;
                    }
                    if let Some(b) = barrier_search_sph(&self.spec, r, q_star, &cfg.offsets)? {
                        return Ok(Some(BarrierFound { q_star, q: b.q, lambda: b.lambda, value: b.value, baseline: b.baseline, gap: b.gap }));
                    }
                }
                Ok(None)
            }
        }
    }

    pub fn rate_curve(&self, num: &Numerics, q_grid: &[f64]) -> Result<RateCurve, Failure> {
        if !self.spec.is_convex() {
            return Err(Failure::Config("the two-replica bound requires xi convex on [-1,1]".into()));
        }
        Ok(match &self.solved {
            Solved::Ising(r) => rate_curve(&Gt2d::new(&self.spec, &r.minimizer, &num.gt())?, q_grid, &num.rate())?,
            Solved::Spherical(r) => rate_curve_sph(&self.spec, r, q_grid, &num.rate())?,
        })
    }
}
