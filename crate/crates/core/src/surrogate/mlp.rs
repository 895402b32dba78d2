use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::activation::Activation;
use crate::graph::{Graph, NodeId, Shape};

/// Fully connected network `z_l = W_l ρ(z_{l-1}) + b_l` with identity on the
/// input and output layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    /// `weights[l]` has shape `(sizes[l+1], sizes[l])`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Forward intermediates for one batch.
pub(crate) struct Trace {
    /// Pre-activations `z_0 = x, z_1, ..., z_L`, each `(batch, width)`.
    pub z: Vec<Array2<f64>>,
    /// Layer inputs `a_0 = x, a_l = ρ(z_l)` for hidden layers.
    pub a: Vec<Array2<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Mlp {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..limit)));
            biases.push(Array1::zeros(fan_out));
        }
        Mlp {
            sizes: sizes.to_vec(),
            activation,
            weights,
            biases,
        }
    }

    pub fn n_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn check_input(&self, x: &ArrayView2<f64>) {
        assert_eq!(
            x.ncols(),
            self.n_in(),
            "input has {} columns, network expects {}",
            x.ncols(),
            self.n_in()
        );
    }

    pub(crate) fn trace(&self, x: ArrayView2<f64>) -> Trace {
        self.check_input(&x);
        let mut z = vec![x.to_owned()];
        let mut a = vec![x.to_owned()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let zl = a[l].dot(&w.t()) + b;
            if l + 1 < self.n_layers() {
                let act = self.activation;
                a.push(zl.mapv(|v| act.value(v)));
            }
            z.push(zl);
        }
        Trace { z, a }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.trace(x).z.pop().unwrap()
    }

    /// Backward recursion for output `o`, returning the per-layer seeds
    /// `g_L, ..., g_0` (index = layer) with `g_0 = dy_o/dx`.
    pub(crate) fn twin_seeds(&self, t: &Trace, o: usize) -> Vec<Array2<f64>> {
        let batch = t.z[0].nrows();
        let l_max = self.n_layers();
        let mut g = vec![Array2::zeros((0, 0)); l_max + 1];
        let mut top = Array2::zeros((batch, self.n_out()));
        top.column_mut(o).fill(1.0);
        g[l_max] = top;
        for l in (1..=l_max).rev() {
            let h = g[l].dot(&self.weights[l - 1]);
            g[l - 1] = if l - 1 >= 1 {
                let act = self.activation;
                h * &t.z[l - 1].mapv(|v| act.d1(v))
            } else {
                h
            };
        }
        g
    }

    /// Values and input gradients; `grads[o]` is `(batch, n_in)`.
    pub fn twin_forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let t = self.trace(x);
        let grads = (0..self.n_out()).map(|o| self.twin_seeds(&t, o).swap_remove(0)).collect();
        (t.z.last().unwrap().clone(), grads)
    }

    /// The same network as a graph over batch inputs `x0..x{n_in-1}`, one
    /// output node per network output.
    pub fn to_graph(&self) -> (Graph, Vec<NodeId>) {
        let mut g = Graph::new();
        let mut layer: Vec<NodeId> = (0..self.n_in()).map(|i| g.input(format!("x{i}"), Shape::Batch)).collect();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next = Vec::with_capacity(w.nrows());
            for (row, bias) in w.axis_iter(Axis(0)).zip(b) {
                let z = g.affine(&layer, row.as_slice().unwrap(), *bias);
                next.push(if l + 1 < self.n_layers() {
                    g.activation(self.activation, z)
                } else {
                    z
                });
            }
            layer = next;
        }
        for &o in &layer {
            g.mark_output(o);
        }
        (g, layer)
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }
}
