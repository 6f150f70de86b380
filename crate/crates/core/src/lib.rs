pub mod error;
pub mod kernel;
pub mod lattice;
pub mod rates;
pub mod rng;
pub mod stats;
pub mod engine;
pub mod oracle;
pub mod coupling;
pub mod analysis;
pub mod survival;
