use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};

/// Per-column standardization of inputs and outputs.
///
/// Derivatives scale by the chain rule: `dy_s = dy · x_scale / y_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub x_shift: Array1<f64>,
    pub x_scale: Array1<f64>,
    pub y_shift: Array1<f64>,
    pub y_scale: Array1<f64>,
}

fn column_stats(a: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = a.nrows() as f64;
    let mean = a.sum_axis(Axis(0)) / n;
    let mut scale = Array1::zeros(a.ncols());
    for (j, col) in a.axis_iter(Axis(1)).enumerate() {
        let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        // Constant columns keep unit scale.
        scale[j] = if sd > 1e-12 * mean[j].abs().max(1.0) { sd } else { 1.0 };
    }
    (mean, scale)
}

impl Scaler {
    pub fn identity(n_in: usize, n_out: usize) -> Scaler {
        Scaler {
            x_shift: Array1::zeros(n_in),
            x_scale: Array1::ones(n_in),
            y_shift: Array1::zeros(n_out),
            y_scale: Array1::ones(n_out),
        }
    }

    /// Mean and population standard deviation of each column.
    pub fn fit(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Scaler {
        assert!(x.nrows() > 0, "cannot fit a scaler on no samples");
        let (x_shift, x_scale) = column_stats(x);
        let (y_shift, y_scale) = column_stats(y);
        Scaler {
            x_shift,
            x_scale,
            y_shift,
            y_scale,
        }
    }

    pub fn n_in(&self) -> usize {
        self.x_shift.len()
    }

    pub fn n_out(&self) -> usize {
        self.y_shift.len()
    }

    pub fn scale_x(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.x_shift) / &self.x_scale
    }

    pub fn unscale_x(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        &xs * &self.x_scale + &self.x_shift
    }

    pub fn scale_y(&self, y: ArrayView2<f64>) -> Array2<f64> {
        (&y - &self.y_shift) / &self.y_scale
    }

    pub fn unscale_y(&self, ys: ArrayView2<f64>) -> Array2<f64> {
        &ys * &self.y_scale + &self.y_shift
    }

    /// `(batch, n_out, n_in)` derivatives into scaled units.
    pub fn scale_dy(&self, dy: ArrayView3<f64>) -> Array3<f64> {
        let mut out = dy.to_owned();
        for ((_, o, j), v) in out.indexed_iter_mut() {
            *v *= self.x_scale[j] / self.y_scale[o];
        }
        out
    }

    /// Gradient of output `o` in scaled units back to original units.
    pub fn unscale_grad(&self, o: usize, gs: ArrayView2<f64>) -> Array2<f64> {
        let factor: Array1<f64> = self.x_scale.mapv(|s| self.y_scale[o] / s);
        &gs * &factor
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn standardizes_columns() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let y = array![[10.0], [20.0]];
        let s = Scaler::fit(x.view(), y.view());
        assert_eq!(s.scale_x(x.view()), array![[-1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(s.x_scale, array![1.0, 1.0]);
        assert_eq!(s.y_scale, array![5.0]);
        assert_eq!(s.scale_y(y.view()), array![[-1.0], [1.0]]);
    }

    #[test]
    fn derivative_scaling_follows_chain_rule() {
        let s = Scaler {
            x_shift: array![0.0, 1.0],
            x_scale: array![2.0, 0.5],
            y_shift: array![3.0],
            y_scale: array![4.0],
        };
        let dy = Array3::from_shape_vec((1, 1, 2), vec![8.0, 8.0]).unwrap();
        let ds = s.scale_dy(dy.view());
        assert_eq!(ds.as_slice().unwrap(), &[4.0, 1.0]);
        let back = s.unscale_grad(0, ds.index_axis(Axis(1), 0));
        assert_eq!(back, array![[8.0, 8.0]]);
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 2..20),
            ys in proptest::collection::vec(-50f64..50.0, 2..20),
        ) {
            let n = rows.len().min(ys.len());
            let x = Array2::from_shape_fn((n, 3), |(i, j)| rows[i][j]);
            let y = Array2::from_shape_fn((n, 1), |(i, _)| ys[i]);
            let s = Scaler::fit(x.view(), y.view());
            prop_assert!(s.x_scale.iter().chain(&s.y_scale).all(|&v| v > 0.0));
            let xr = s.unscale_x(s.scale_x(x.view()).view());
            let yr = s.unscale_y(s.scale_y(y.view()).view());
            // Relative to the largest magnitude in play, since the shift is subtracted.
            let mag = x.iter().chain(&y).fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in xr.iter().zip(&x).chain(yr.iter().zip(&y)) {
                prop_assert!((a - b).abs() <= 1e-12 * mag);
            }
        }
    }
}
