use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::compile::CHOLESKY_BIT;
use super::*;
use crate::graph::GraphError;

/// Values for one parameter input across the whole batch.
enum Source<'b> {
    Scalar(f64),
    PerPath(&'b [f64]),
}

enum Noise<'b> {
    Seeded(u64),
    /// `[path][step][brownian]`
    Given(&'b [f64]),
}

struct Chunk {
    y: Vec<f64>,
    dy: Vec<f64>,
}

impl Simulator {
    fn resolve<'b>(&self, bindings: &'b Bindings, batch: usize) -> Result<Vec<Source<'b>>, SimError> {
        for (name, v) in &self.time_values {
            if bindings.get(name) != Some(&Binding::Scalar(*v)) {
                return Err(SimError::BindingShape(name.clone()));
            }
        }
        self.params
            .iter()
            .map(|p| {
                let binding = match p.name.split_once('@') {
                    Some((base, k)) => match bindings.get(base) {
                        Some(Binding::Piecewise { pieces, .. }) => k.parse::<usize>().ok().and_then(|k| pieces.get(k)),
                        Some(_) => return Err(SimError::BindingShape(base.to_string())),
                        None => None,
                    },
                    None => bindings.get(&p.name),
                }
                .ok_or_else(|| SimError::Unbound(p.name.clone()))?;
                match (binding, p.per_path) {
                    (Binding::Scalar(v), false) => Ok(Source::Scalar(*v)),
                    (Binding::PerPath(v), true) => {
                        if v.len() != batch {
                            return Err(SimError::PerPathLength {
                                name: p.name.clone(),
                                got: v.len(),
                                expected: batch,
                            });
                        }
                        Ok(Source::PerPath(v))
                    }
                    _ => Err(SimError::BindingShape(p.name.clone())),
                }
            })
            .collect()
    }

    /// Runs `config.batch_size` paths with per-path seeded normals.
    pub fn run(&self, bindings: &Bindings, config: &SimConfig) -> Result<SimOutput, SimError> {
        self.run_inner(
            bindings,
            config.batch_size,
            config.chunk_size,
            Noise::Seeded(config.seed),
            config.seed,
        )
    }

    /// Runs with caller-supplied standard normals laid out `[path][step][brownian]`.
    pub fn run_with_normals(&self, bindings: &Bindings, normals: &[f64], batch: usize) -> Result<SimOutput, SimError> {
        let per_path = self.grid.n_steps() * self.brownians.len();
        if normals.len() != batch * per_path {
            return Err(SimError::Eval(format!(
                "expected {} normals, got {}",
                batch * per_path,
                normals.len()
            )));
        }
        self.run_inner(bindings, batch, 256, Noise::Given(normals), 0)
    }

    fn run_inner(&self, bindings: &Bindings, batch: usize, chunk_size: usize, noise: Noise, seed: u64) -> Result<SimOutput, SimError> {
        if batch == 0 {
            return Err(SimError::EmptyBatch);
        }
        let sources = self.resolve(bindings, batch)?;
        let chunk_size = chunk_size.max(1);
        let n_chunks = batch.div_ceil(chunk_size);
        let chunks: Vec<Chunk> = (0..n_chunks)
            .into_par_iter()
            .map(|ci| {
                let start = ci * chunk_size;
                let width = chunk_size.min(batch - start);
                self.eval_chunk(start, width, &sources, &noise)
            })
            .collect::<Result<_, _>>()?;

        let mut y = Vec::with_capacity(batch * self.payoff_nodes.len());
        let mut dy = Vec::with_capacity(batch * self.payoff_nodes.len() * self.diff_slots.len());
        for c in chunks {
            y.extend_from_slice(&c.y);
            dy.extend_from_slice(&c.dy);
        }
        Ok(SimOutput {
            payoff_names: self.payoff_names.clone(),
            diff_wrt: self.diff_wrt.clone(),
            n_paths: batch,
            y,
            dy,
            seed,
            grid: self.grid.times().to_vec(),
            bindings: bindings.clone(),
        })
    }

    fn eval_chunk(&self, start: usize, width: usize, sources: &[Source], noise: &Noise) -> Result<Chunk, SimError> {
        let steps = self.grid.n_steps();
        let m = self.brownians.len();
        let per_path = steps * m;

        // [step][brownian][lane], so every noise input is one contiguous slice.
        let mut buf = vec![0.0; per_path * width];
        match noise {
            Noise::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for lane in 0..width {
                    rng.set_stream((start + lane) as u64);
                    rng.set_word_pos(0);
                    for k in 0..per_path {
                        buf[k * width + lane] = rng.sample(StandardNormal);
                    }
                }
            }
            Noise::Given(all) => {
                for lane in 0..width {
                    let src = &all[(start + lane) * per_path..(start + lane + 1) * per_path];
                    for (k, &z) in src.iter().enumerate() {
                        buf[k * width + lane] = z;
                    }
                }
            }
        }

        let scalars: Vec<f64> = sources
            .iter()
            .map(|s| match s {
                Source::Scalar(v) => *v,
                Source::PerPath(_) => 0.0,
            })
            .collect();
        let mut slots: Vec<&[f64]> = vec![&[]; self.graph.inputs().len()];
        for ((p, s), v) in self.params.iter().zip(sources).zip(&scalars) {
            slots[p.slot] = match s {
                Source::Scalar(_) => std::slice::from_ref(v),
                Source::PerPath(all) => &all[start..start + width],
            };
        }
        for (step, row) in self.noise_slots.iter().enumerate() {
            for (j, &slot) in row.iter().enumerate() {
                let k = step * m + j;
                slots[slot] = &buf[k * width..(k + 1) * width];
            }
        }

        let tape = self.graph.eval_slots(&slots).map_err(|e| self.map_error(e, start))?;
        let np = self.payoff_nodes.len();
        let nd = self.diff_slots.len();
        let mut y = vec![0.0; width * np];
        let mut dy = vec![0.0; width * np * nd];
        let pick = |v: &[f64], lane: usize| if v.len() == 1 { v[0] } else { v[lane] };
        for (p, &node) in self.payoff_nodes.iter().enumerate() {
            let vals = tape.value(node);
            for lane in 0..width {
                y[lane * np + p] = pick(vals, lane);
            }
            if nd > 0 {
                let grads = self.graph.grad_slots(&tape, node, &self.diff_slots)?;
                for (d, gr) in grads.iter().enumerate() {
                    for lane in 0..width {
                        dy[(lane * np + p) * nd + d] = pick(gr, lane);
                    }
                }
            }
        }
        if let Some(i) = dy.iter().position(|v| !v.is_finite()) {
            let lane = i / (np * nd);
            let p = (i / nd) % np;
            return Err(SimError::NonFinitePayoff {
                payoff: format!("d{}", self.payoff_names[p]),
                path: start + lane,
            });
        }
        Ok(Chunk { y, dy })
    }

    fn map_error(&self, e: GraphError, start: usize) -> SimError {
        match e {
            GraphError::NonFinite { node, lane } => {
                let tag = self.graph.node(node).tag;
                if tag & CHOLESKY_BIT != 0 {
                    SimError::Cholesky {
                        step: (tag & !CHOLESKY_BIT) as usize,
                    }
                } else if let Some(p) = self.payoff_nodes.iter().position(|&n| n == node) {
                    SimError::NonFinitePayoff {
                        payoff: self.payoff_names[p].clone(),
                        path: start + lane,
                    }
                } else {
                    SimError::NonFinite {
                        path: start + lane,
                        step: tag as usize,
                        node,
                    }
                }
            }
            other => SimError::Graph(other),
        }
    }
}
