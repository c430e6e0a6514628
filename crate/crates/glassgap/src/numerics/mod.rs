pub mod grid;
pub mod optim;
pub mod quad;
pub mod tridiag;
