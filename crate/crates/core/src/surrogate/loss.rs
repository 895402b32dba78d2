//! Value and derivative-regularized least-squares losses with exact
//! parameter gradients.
//!
//! The derivative penalty differentiates through the twin network, so its
//! parameter gradient needs the second derivative of the activation.

use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;

/// Which derivative terms enter the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Values only.
    Vml,
    /// Every (output, input) derivative.
    Dml,
    /// Only the listed (output, input) derivatives.
    Pdml { pairs: Vec<(usize, usize)> },
}

impl LossKind {
    /// The (output, input) pairs penalized for a network of the given shape.
    pub fn pairs(&self, n_out: usize, n_in: usize) -> Vec<(usize, usize)> {
        match self {
            LossKind::Vml => Vec::new(),
            LossKind::Dml => (0..n_out).flat_map(|o| (0..n_in).map(move |j| (o, j))).collect(),
            LossKind::Pdml { pairs } => pairs.clone(),
        }
    }
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Grads {
    pub fn zeros_like(m: &Mlp) -> Grads {
        Grads {
            w: m.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            b: m.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }
}

/// Mean over the batch of `|N(x) - y|² + Σ λ_k (∂N_o/∂x_j - dy[o, j])²`
/// over `pairs[k] = (o, j)`, and its gradient.
///
/// `dy` has shape `(batch, n_out, n_in)` and may be `None` when `pairs` is
/// empty.
pub fn loss_and_grad(
    m: &Mlp,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    dy: Option<ArrayView3<f64>>,
    pairs: &[(usize, usize)],
    lambdas: &[f64],
) -> (f64, Grads) {
    assert_eq!(pairs.len(), lambdas.len());
    assert!(pairs.is_empty() || dy.is_some(), "derivative loss needs dy");
    let batch = x.nrows() as f64;
    let n_layers = m.n_layers();
    let act = m.activation;
    let t = m.trace(x);

    let resid = &t.z[n_layers] - &y;
    let mut loss = resid.iter().map(|r| r * r).sum::<f64>() / batch;

    let mut grads = Grads::zeros_like(m);
    let mut zbar: Vec<Array2<f64>> = t.z.iter().map(|z| Array2::zeros(z.raw_dim())).collect();
    zbar[n_layers] = resid.mapv(|r| 2.0 * r / batch);

    let mut outputs: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    outputs.sort_unstable();
    outputs.dedup();
    let d1: Vec<Array2<f64>> = t.z.iter().map(|z| z.mapv(|v| act.d1(v))).collect();
    for o in outputs {
        let g = m.twin_seeds(&t, o);
        let dy = dy.unwrap();
        let mut gbar = Array2::<f64>::zeros(g[0].raw_dim());
        for (&(po, j), &lam) in pairs.iter().zip(lambdas) {
            if po != o || lam == 0.0 {
                continue;
            }
            let diff = &g[0].column(j) - &dy.index_axis(Axis(1), o).column(j);
            loss += lam * diff.iter().map(|d| d * d).sum::<f64>() / batch;
            gbar.column_mut(j).scaled_add(2.0 * lam / batch, &diff);
        }
        // Reverse of the twin recursion g_{l-1} = (g_l W_l) ∘ ρ'(z_{l-1}).
        for l in 1..=n_layers {
            let w = &m.weights[l - 1];
            let hbar = if l >= 2 {
                let h = g[l].dot(w);
                let d2 = t.z[l - 1].mapv(|v| act.d2(v));
                zbar[l - 1] = &zbar[l - 1] + &(&gbar * &h * &d2);
                &gbar * &d1[l - 1]
            } else {
                gbar.clone()
            };
            grads.w[l - 1] = &grads.w[l - 1] + &g[l].t().dot(&hbar);
            gbar = hbar.dot(&w.t());
        }
    }

    // Standard backpropagation through the forward pass.
    for l in (1..=n_layers).rev() {
        grads.w[l - 1] = &grads.w[l - 1] + &zbar[l].t().dot(&t.a[l - 1]);
        grads.b[l - 1] = &grads.b[l - 1] + &zbar[l].sum_axis(Axis(0));
        if l >= 2 {
            let abar = zbar[l].dot(&m.weights[l - 1]);
            zbar[l - 1] = &zbar[l - 1] + &(abar * &d1[l - 1]);
        }
    }
    (loss, grads)
}
