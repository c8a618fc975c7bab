pub mod cli;
pub mod error;
pub mod experiments;
pub mod quadrature;
pub mod rng;
pub mod kernels;
pub mod moments;
pub mod numeric;
pub mod spectral;
pub mod tree_sim;
pub mod variance;
