//! Exact finite-N reversible dynamics on the hypercube and an MCMC estimator
//! for moderate N.

pub mod bounds;
pub mod difficulty;
pub mod kernel;
pub mod mcmc;
pub mod overlap;
pub mod spectral;

pub use bounds::{coercive_lower_bound, difficulty_bound, exact_gap_report, ReportOptions, SpectralReport};
pub use difficulty::{difficulty, overlap_difficulty, DifficultyReport};
pub use kernel::{build_metropolis, build_replicated, ChainKernel};
pub use mcmc::{empirical_rate, mcmc_overlap, Landscape, McmcOptions, McmcResult};
pub use overlap::{overlap_distribution, OverlapHistogram};
pub use spectral::{replicated_gap, spectral_gap, GapResult};
