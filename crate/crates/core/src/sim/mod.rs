//! Euler–Maruyama simulation of validated scripts.
//!
//! A script is unrolled over the time grid into a single [`Graph`]. Running
//! it evaluates the graph in chunks of paths; samplewise payoff derivatives
//! with respect to external parameters come from one reverse sweep per payoff.
//!
//! Path `p` draws its normals from `ChaCha8Rng::seed_from_u64(seed)` switched
//! to stream `p`, in step-major, Brownian-minor order. Output is therefore
//! independent of chunking and batch size.

mod compile;
mod grid;
mod output;
mod run;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, NodeId};

pub use grid::{GridSpec, TimeGrid};
pub use output::SimOutput;

/// Host-provided value of an external script symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Scalar(f64),
    /// One value per path; used to sample parameters across a batch.
    PerPath(Vec<f64>),
    /// Piecewise constant in time: `pieces[k]` applies on
    /// `[breaks[k-1], breaks[k])`, with the last piece open-ended. Pieces are
    /// exposed to `diff_wrt` as `name@k`.
    Piecewise {
        breaks: Vec<f64>,
        pieces: Vec<Binding>,
    },
}

impl Binding {
    fn piece_at(breaks: &[f64], t: f64) -> usize {
        // Small tolerance so a step starting exactly on a break uses the new piece.
        breaks.iter().filter(|&&b| b <= t + 1e-12).count()
    }
}

pub type Bindings = BTreeMap<String, Binding>;

pub fn piece_name(name: &str, k: usize) -> String {
    format!("{name}@{k}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub batch_size: usize,
    pub seed: u64,
    pub grid: GridSpec,
    /// External parameters (or `name@k` pieces) receiving samplewise derivatives.
    pub diff_wrt: Vec<String>,
    /// Paths per evaluation chunk.
    pub chunk_size: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            batch_size: 1 << 14,
            seed: 0,
            grid: GridSpec::default(),
            diff_wrt: Vec::new(),
            chunk_size: 256,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unbound parameter `{0}`")]
    Unbound(String),
    #[error("parameter `{0}` sets an observation time and must be a plain scalar")]
    TimeSymbolNotScalar(String),
    #[error("cannot differentiate with respect to `{0}`")]
    BadDiffWrt(String),
    #[error("observation time {time} is not on the grid (nearest {nearest})")]
    Snap { time: f64, nearest: f64 },
    #[error("{0}")]
    Grid(String),
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("parameter `{name}` has {got} per-path values, expected {expected}")]
    PerPathLength { name: String, got: usize, expected: usize },
    #[error("binding for `{0}` changed shape since compilation")]
    BindingShape(String),
    #[error("correlation matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("correlation matrix is not positive definite at step {step}")]
    Cholesky { step: usize },
    #[error("non-finite payoff `{payoff}` on path {path}")]
    NonFinitePayoff { payoff: String, path: usize },
    #[error("non-finite value on path {path} at step {step} (node {node})")]
    NonFinite { path: usize, step: usize, node: NodeId },
    #[error("{0}")]
    Eval(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Where each external parameter lives among the graph inputs.
#[derive(Debug, Clone)]
struct ParamInput {
    /// Binding name, or `name@k` for a piece.
    name: String,
    slot: usize,
    per_path: bool,
}

/// A compiled simulator: the unrolled graph plus its input layout.
#[derive(Debug, Clone)]
pub struct Simulator {
    graph: Graph,
    grid: TimeGrid,
    payoff_names: Vec<String>,
    payoff_nodes: Vec<NodeId>,
    params: Vec<ParamInput>,
    /// `noise_slots[step][brownian]`
    noise_slots: Vec<Vec<usize>>,
    brownians: Vec<String>,
    diff_wrt: Vec<String>,
    diff_slots: Vec<usize>,
    time_values: BTreeMap<String, f64>,
}

impl Simulator {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn payoff_names(&self) -> &[String] {
        &self.payoff_names
    }

    pub fn brownians(&self) -> &[String] {
        &self.brownians
    }

    pub fn diff_wrt(&self) -> &[String] {
        &self.diff_wrt
    }
}

/// Compiles and runs in one call.
pub fn simulate(script: &crate::script::ValidatedScript, bindings: &Bindings, config: &SimConfig) -> Result<SimOutput, SimError> {
    Simulator::compile(script, bindings, config)?.run(bindings, config)
}
