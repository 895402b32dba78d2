use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, Grads, LossKind};
use super::mlp::Mlp;
use super::scaler::Scaler;
use super::{Surrogate, SurrogateMeta};
use crate::activation::Activation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    /// One weight per penalized pair; `None` means `1 / n_pairs` each.
    pub lambda: Option<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine_decay: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![32; 4],
            activation: Activation::Softplus,
            loss: LossKind::Dml,
            lambda: None,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            cosine_decay: true,
            batch_size: 256,
            epochs: 200,
            seed: 0,
        }
    }
}

/// Training samples in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    /// `(n, n_in)`
    pub x: Array2<f64>,
    /// `(n, n_out)`
    pub y: Array2<f64>,
    /// `(n, n_out, n_in)`
    pub dy: Option<Array3<f64>>,
}

impl TrainingData {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn n_in(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.y.ncols()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no training samples")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("derivative loss requested but no derivatives supplied")]
    MissingDerivatives,
    #[error("derivative pair ({0}, {1}) out of range")]
    BadPair(usize, usize),
    #[error("negative or non-finite regularization weight")]
    BadLambda,
    #[error("loss diverged in epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        /// The network before the offending step.
        last: Box<Surrogate>,
    },
}

struct Adam {
    m: Grads,
    v: Grads,
    t: i32,
}

impl Adam {
    fn new(net: &Mlp) -> Adam {
        Adam {
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, g: &Grads, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.epsilon);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let params = net
            .weights
            .iter_mut()
            .flat_map(|w| w.iter_mut())
            .chain(net.biases.iter_mut().flat_map(|b| b.iter_mut()));
        let ms = self
            .m
            .w
            .iter_mut()
            .flat_map(|w| w.iter_mut())
            .chain(self.m.b.iter_mut().flat_map(|b| b.iter_mut()));
        let vs = self
            .v
            .w
            .iter_mut()
            .flat_map(|w| w.iter_mut())
            .chain(self.v.b.iter_mut().flat_map(|b| b.iter_mut()));
        let gs = g.w.iter().flat_map(|w| w.iter()).chain(g.b.iter().flat_map(|b| b.iter()));
        for (((p, m), v), &gr) in params.zip(ms).zip(vs).zip(gs) {
            *m = b1 * *m + (1.0 - b1) * gr;
            *v = b2 * *v + (1.0 - b2) * gr * gr;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

fn validate(data: &TrainingData, cfg: &TrainConfig) -> Result<(Vec<(usize, usize)>, Vec<f64>), TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    if data.y.nrows() != data.len() {
        return Err(TrainError::Shape(format!("{} inputs but {} outputs", data.len(), data.y.nrows())));
    }
    let pairs = cfg.loss.pairs(data.n_out(), data.n_in());
    if let Some(&(o, j)) = pairs.iter().find(|&&(o, j)| o >= data.n_out() || j >= data.n_in()) {
        return Err(TrainError::BadPair(o, j));
    }
    if !pairs.is_empty() {
        match &data.dy {
            None => return Err(TrainError::MissingDerivatives),
            Some(dy) if dy.shape() != [data.len(), data.n_out(), data.n_in()] => {
                return Err(TrainError::Shape(format!(
                    "derivatives have shape {:?}, expected {:?}",
                    dy.shape(),
                    [data.len(), data.n_out(), data.n_in()]
                )))
            }
            _ => {}
        }
    }
    let lambdas = match &cfg.lambda {
        Some(l) if l.len() != pairs.len() => return Err(TrainError::Shape(format!("{} lambdas for {} pairs", l.len(), pairs.len()))),
        Some(l) => l.clone(),
        None => vec![1.0 / pairs.len().max(1) as f64; pairs.len()],
    };
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(TrainError::BadLambda);
    }
    Ok((pairs, lambdas))
}

/// Fits the scaler, initializes from `cfg.seed`, and runs minibatch Adam for
/// a fixed number of epochs.
pub fn train(data: &TrainingData, cfg: &TrainConfig) -> Result<Surrogate, TrainError> {
    let (pairs, lambdas) = validate(data, cfg)?;
    let scaler = Scaler::fit(data.x.view(), data.y.view());
    let xs = scaler.scale_x(data.x.view());
    let ys = scaler.scale_y(data.y.view());
    let dys = if pairs.is_empty() {
        None
    } else {
        data.dy.as_ref().map(|d| scaler.scale_dy(d.view()))
    };

    let mut sizes = vec![data.n_in()];
    sizes.extend(&cfg.hidden);
    sizes.push(data.n_out());
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Mlp::glorot(&sizes, cfg.activation, &mut init_rng);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let n = data.len();
    let batch = cfg.batch_size.clamp(1, n);
    let per_epoch = n.div_ceil(batch);
    let total = (per_epoch * cfg.epochs).max(1) as f64;
    let mut adam = Adam::new(&net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    let snapshot = |net: &Mlp, history: &[f64]| Surrogate {
        net: net.clone(),
        scaler: scaler.clone(),
        meta: SurrogateMeta {
            seed: cfg.seed,
            n_samples: n,
            loss: cfg.loss.clone(),
            loss_history: history.to_vec(),
        },
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(batch).enumerate() {
            let xb = xs.select(Axis(0), idx);
            let yb = ys.select(Axis(0), idx);
            let dyb = dys.as_ref().map(|d| d.select(Axis(0), idx));
            let (loss, grads) = loss_and_grad(&net, xb.view(), yb.view(), dyb.as_ref().map(|d| d.view()), &pairs, &lambdas);
            let grads_finite =
                grads.w.iter().all(|w| w.iter().all(|v| v.is_finite())) && grads.b.iter().all(|b| b.iter().all(|v| v.is_finite()));
            if !loss.is_finite() || !grads_finite {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: b,
                    last: Box::new(snapshot(&net, &history)),
                });
            }
            let lr = if cfg.cosine_decay {
                0.5 * cfg.learning_rate * (1.0 + (std::f64::consts::PI * step as f64 / total).cos())
            } else {
                cfg.learning_rate
            };
            adam.step(&mut net, &grads, lr, cfg);
            step += 1;
            epoch_loss += loss;
        }
        history.push(epoch_loss / per_epoch as f64);
    }
    Ok(snapshot(&net, &history))
}

/// Trains one surrogate per seed, in parallel and independently.
pub fn train_seeds(data: &TrainingData, cfg: &TrainConfig, seeds: &[u64]) -> Vec<Result<Surrogate, TrainError>> {
    seeds
        .par_iter()
        .map(|&seed| train(data, &TrainConfig { seed, ..cfg.clone() }))
        .collect()
}
