pub mod dynamics;
pub mod error;
pub mod gt2d;
pub mod measure;
pub mod model;
pub mod numerics;
pub mod ising_statics;
pub mod parisi_pde;
pub mod spherical;

pub use error::{Error, Result};
