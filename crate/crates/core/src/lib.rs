pub mod error;
pub mod operators;
pub mod rng;
pub mod schedule;
pub mod prior;
pub mod likelihood;
pub mod sampler;
pub mod io;
pub mod oracle;
pub mod metrics;
pub mod verify;
