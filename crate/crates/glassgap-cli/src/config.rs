use std::path::Path;

use glassgap::gt2d::{BarrierOptions, Gt2dParams, RateOptions};
use glassgap::ising_statics::KrsbOptions;
use glassgap::model::MixtureSpec;
use glassgap::parisi_pde::GridParams;
use glassgap::spherical::SphericalOptions;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Ising,
    Spherical,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: Kind,
    /// Base mixture ξ₀ as (p, c_p) pairs; ξ = β²ξ₀.
    pub xi0: Vec<(u32, f64)>,
    pub beta: f64,
    #[serde(default)]
    pub h: f64,
}

impl ModelConfig {
    /// β = 0 maps to the empty mixture, which keeps only the field term.
    pub fn spec_at(&self, beta: f64) -> Result<MixtureSpec, Failure> {
        let spec = if beta == 0.0 { MixtureSpec::new(vec![], self.h) } else { MixtureSpec::scaled(beta, self.xi0.clone(), self.h) };
        spec.map_err(|e| Failure::Config(format!("model: {e}")))
    }

    pub fn spec(&self) -> Result<MixtureSpec, Failure> {
        self.spec_at(self.beta)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub seed: u64,
    pub threads: Option<usize>,
    pub k: usize,
    pub n_starts: usize,
    pub max_evals: usize,
    pub search_n_x: usize,
    pub search_quad_order: usize,
    pub n_x: usize,
    pub quad_order: usize,
    pub gprev_tol: f64,
    pub gt_n_x: usize,
    pub gt_quad_order: usize,
    pub n_lambda: usize,
    pub lambda_window: f64,
    pub gfeb_tol: f64,
    pub zero_mass_min: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        let k = KrsbOptions::default();
        let g = Gt2dParams::default();
        let r = RateOptions::default();
        Self {
            seed: 0,
            threads: None,
            k: 2,
            n_starts: k.n_starts,
            max_evals: k.max_evals,
            search_n_x: k.search_grid.n_x,
            search_quad_order: k.search_grid.quad_order,
            n_x: k.final_grid.n_x,
            quad_order: k.final_grid.quad_order,
            gprev_tol: k.gprev_tol,
            gt_n_x: g.n_x,
            gt_quad_order: g.quad_order,
            n_lambda: r.n_lambda,
            lambda_window: r.lambda_window,
            gfeb_tol: r.gfeb_tol,
            zero_mass_min: r.zero_mass_min,
        }
    }
}

impl Numerics {
    pub fn krsb(&self) -> KrsbOptions {
        KrsbOptions {
            n_starts: self.n_starts,
            gprev_tol: self.gprev_tol,
            seed: self.seed,
            search_grid: GridParams { n_x: self.search_n_x, quad_order: self.search_quad_order, ..GridParams::default() },
            final_grid: GridParams { n_x: self.n_x, quad_order: self.quad_order, ..GridParams::default() },
            max_evals: self.max_evals,
            ..KrsbOptions::default()
        }
    }

    pub fn spherical(&self) -> SphericalOptions {
        SphericalOptions { n_starts: self.n_starts, seed: self.seed, ..SphericalOptions::default() }
    }

    pub fn gt(&self) -> Gt2dParams {
        Gt2dParams { n_x: self.gt_n_x, half_width: None, quad_order: self.gt_quad_order }
    }

    pub fn rate(&self) -> RateOptions {
        RateOptions {
            n_lambda: self.n_lambda,
            lambda_window: self.lambda_window,
            gfeb_tol: self.gfeb_tol,
            zero_mass_min: self.zero_mass_min,
            ..RateOptions::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QGrid {
    pub q_min: f64,
    pub q_max: f64,
    pub n_q: usize,
}

impl Default for QGrid {
    fn default() -> Self {
        Self { q_min: -1.0, q_max: 1.0, n_q: 41 }
    }
}

impl QGrid {
    pub fn points(&self) -> Result<Vec<f64>, Failure> {
        if !(-1.0..=1.0).contains(&self.q_min) || !(-1.0..=1.0).contains(&self.q_max) || !(self.q_min < self.q_max) || self.n_q < 2 {
            return Err(Failure::Config("q grid needs -1 <= q_min < q_max <= 1 and n_q >= 2".into()));
        }
        let step = (self.q_max - self.q_min) / (self.n_q - 1) as f64;
        // round to 12 digits so that atoms at 0 land exactly on the grid
        Ok((0..self.n_q).map(|i| ((self.q_min + i as f64 * step) * 1e12).round() / 1e12).collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseScanConfig {
    /// Ascending inverse temperatures.
    pub betas: Vec<f64>,
    pub barrier: bool,
    pub gfeb: bool,
    pub refine_steps: usize,
    pub q_grid: QGrid,
}

impl Default for PhaseScanConfig {
    fn default() -> Self {
        Self { betas: Vec::new(), barrier: false, gfeb: false, refine_steps: 6, q_grid: QGrid::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierConfig {
    /// Atom to search around; every atom is tried when absent.
    pub q_star: Option<f64>,
    pub offsets: Vec<f64>,
    pub dlambda: f64,
    pub lambda_max: f64,
    pub max_evals: usize,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        let b = BarrierOptions::default();
        Self { q_star: None, offsets: b.offsets, dlambda: b.dlambda, lambda_max: b.lambda_max, max_evals: b.max_evals }
    }
}

impl BarrierConfig {
    pub fn options(&self) -> BarrierOptions {
        BarrierOptions { offsets: self.offsets.clone(), dlambda: self.dlambda, lambda_max: self.lambda_max, max_evals: self.max_evals }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlayConfig {
    pub n: usize,
    pub sweeps: u64,
    pub burn_in: u64,
    pub n_temps: usize,
    pub s_min: f64,
    pub n_batches: usize,
    /// Half-width of the closed overlap window; defaults to 1/N.
    pub epsilon: Option<f64>,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self { n: 60, sweeps: 100_000, burn_in: 2000, n_temps: 12, s_min: 0.3, n_batches: 20, epsilon: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateCurveConfig {
    pub q_grid: QGrid,
    pub overlay: Option<OverlayConfig>,
    /// Bisect the GFEB verdict in β over this bracket.
    pub beta_bracket: Option<(f64, f64)>,
    pub bisect_steps: usize,
}

impl Default for RateCurveConfig {
    fn default() -> Self {
        Self { q_grid: QGrid::default(), overlay: None, beta_bracket: None, bisect_steps: 6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExactGapConfig {
    pub n: usize,
    /// Disorder seeds are seed, seed+1, …
    pub seeds: usize,
    /// Defaults to the model β.
    pub betas: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub lazy: bool,
    pub replicated: bool,
    pub export_kernels: bool,
}

impl Default for ExactGapConfig {
    fn default() -> Self {
        Self { n: 8, seeds: 16, betas: None, epsilon: None, lazy: false, replicated: true, export_kernels: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub n: usize,
    pub sweeps: u64,
    pub burn_in: u64,
    pub n_temps: usize,
    pub s_min: f64,
    pub n_batches: usize,
    pub compare_exact: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { n: 10, sweeps: 1_000_000, burn_in: 1000, n_temps: 4, s_min: 0.4, n_batches: 20, compare_exact: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_scan: Option<PhaseScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_curve: Option<RateCurveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_gap: Option<ExactGapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcmc: Option<McmcConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Failure::Config(format!("config: {e}")))?;
        cfg.model.spec()?;
        if cfg.numerics.k == 0 {
            return Err(Failure::Config("numerics.k must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
