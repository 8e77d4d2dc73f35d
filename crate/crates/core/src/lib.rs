pub mod cli;
pub mod empirical;
pub mod error;
pub mod grid;
pub mod inference;
pub mod limitfield;
pub mod mc;
pub mod models;
pub mod normal;
pub mod resample;
pub mod rng;
