pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod activation;
pub mod calib;
pub mod cheyette;
pub mod graph;
pub mod sampling;
pub mod script;
pub mod sim;
pub mod surrogate;
