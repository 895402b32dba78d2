//! Feedforward surrogates with twin-network derivatives, trained under value,
//! differential, or partial differential least squares.

mod io;
pub mod loss;
pub mod mlp;
pub mod scaler;
pub mod train;

use ndarray::{Array2, ArrayView2};

pub use io::{load, save, FORMAT_VERSION};
pub use loss::LossKind;
pub use mlp::Mlp;
pub use scaler::Scaler;
pub use train::{train, train_seeds, TrainConfig, TrainError, TrainingData};

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateMeta {
    pub seed: u64,
    pub n_samples: usize,
    pub loss: LossKind,
    /// Mean minibatch loss per epoch, in scaled units.
    pub loss_history: Vec<f64>,
}

/// A trained network together with the scaling it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub net: Mlp,
    pub scaler: Scaler,
    pub meta: SurrogateMeta,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnsembleError {
    #[error("empty ensemble")]
    Empty,
    #[error("ensemble members disagree on input/output dimensions")]
    Dimensions,
}

impl Surrogate {
    pub fn n_in(&self) -> usize {
        self.net.n_in()
    }

    pub fn n_out(&self) -> usize {
        self.net.n_out()
    }

    /// Predictions in original units; `x` is `(batch, n_in)`.
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let ys = self.net.forward(self.scaler.scale_x(x).view());
        self.scaler.unscale_y(ys.view())
    }

    /// Predictions and input gradients in original units; `grads[o]` is
    /// `(batch, n_in)`.
    pub fn predict_grad(&self, x: ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let (ys, gs) = self.net.twin_forward(self.scaler.scale_x(x).view());
        let grads = gs.iter().enumerate().map(|(o, g)| self.scaler.unscale_grad(o, g.view())).collect();
        (self.scaler.unscale_y(ys.view()), grads)
    }
}

fn check_members(members: &[Surrogate]) -> Result<(), EnsembleError> {
    let first = members.first().ok_or(EnsembleError::Empty)?;
    if members.iter().any(|m| m.n_in() != first.n_in() || m.n_out() != first.n_out()) {
        return Err(EnsembleError::Dimensions);
    }
    Ok(())
}

/// Arithmetic mean of member predictions.
pub fn ensemble_predict(members: &[Surrogate], x: ArrayView2<f64>) -> Result<Array2<f64>, EnsembleError> {
    check_members(members)?;
    let mut sum = members[0].predict(x);
    for m in &members[1..] {
        sum += &m.predict(x);
    }
    Ok(sum / members.len() as f64)
}

/// Arithmetic mean of member predictions and of member gradients.
pub fn ensemble_predict_grad(members: &[Surrogate], x: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<Array2<f64>>), EnsembleError> {
    check_members(members)?;
    let (mut y, mut g) = members[0].predict_grad(x);
    for m in &members[1..] {
        let (ym, gm) = m.predict_grad(x);
        y += &ym;
        for (a, b) in g.iter_mut().zip(&gm) {
            *a += b;
        }
    }
    let n = members.len() as f64;
    Ok((y / n, g.into_iter().map(|a| a / n).collect()))
}
