use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::CalibError;
use crate::cheyette::{self, CheyetteParams, CurveSet};
use crate::sim::{piece_name, simulate, Binding, GridSpec, SimConfig};
use crate::surrogate::TrainingData;

/// A model or contract parameter that can vary per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Input {
    A,
    B,
    Eta,
    Strike,
}

impl Input {
    pub fn name(self) -> &'static str {
        match self {
            Input::A => "a",
            Input::B => "b",
            Input::Eta => "eta",
            Input::Strike => "strike",
        }
    }

    fn script_name(self) -> &'static str {
        match self {
            Input::A => "volaterm",
            Input::B => "volbterm",
            Input::Eta => "volofvar",
            Input::Strike => "khat",
        }
    }
}

/// Model parameters `(a, b, η)` on one interval of a piecewise schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    /// Right end of the interval.
    pub end: f64,
    pub theta: [f64; 3],
}

/// Caplet pricing under the Cheyette-SV script for one reset date, with the
/// model parameters of earlier intervals frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct CapletProblem {
    /// Fixed parameters; `a`, `b` and `eta` are defaults for coordinates that
    /// are not sampled.
    pub model: CheyetteParams,
    pub curves: CurveSet,
    pub tenor: f64,
    /// Strike used when the strike is not an input.
    pub strike: f64,
    pub grid: GridSpec,
    pub chunk_size: usize,
    pub frozen: Vec<Piece>,
}

impl CapletProblem {
    pub fn new(model: CheyetteParams, curves: CurveSet) -> CapletProblem {
        CapletProblem {
            model,
            curves,
            tenor: 0.25,
            strike: 0.022,
            grid: GridSpec::StepsPerYear(64.0),
            chunk_size: 256,
            frozen: Vec::new(),
        }
    }

    /// Places `current` after the frozen pieces of model parameter `k`.
    fn schedule(&self, k: usize, current: Binding) -> Binding {
        if self.frozen.is_empty() {
            return current;
        }
        let mut pieces: Vec<Binding> = self.frozen.iter().map(|p| Binding::Scalar(p.theta[k])).collect();
        pieces.push(current);
        Binding::Piecewise {
            breaks: self.frozen.iter().map(|p| p.end).collect(),
            pieces,
        }
    }

    fn diff_name(&self, input: Input) -> String {
        if input == Input::Strike || self.frozen.is_empty() {
            input.script_name().to_string()
        } else {
            piece_name(input.script_name(), self.frozen.len())
        }
    }

    fn check_reset(&self, t1: f64) -> Result<(), CalibError> {
        match self.frozen.last() {
            Some(p) if t1 <= p.end => Err(CalibError::Config(format!(
                "reset {t1} must be after the last frozen interval end {}",
                p.end
            ))),
            _ => Ok(()),
        }
    }

    fn sim_config(&self, batch: usize, seed: u64, diff_wrt: Vec<String>) -> SimConfig {
        SimConfig {
            batch_size: batch,
            seed,
            grid: self.grid.clone(),
            diff_wrt,
            chunk_size: self.chunk_size,
        }
    }

    /// One path per row of `x`, whose columns are `inputs`. Returns the
    /// payoffs and their pathwise derivatives with respect to the inputs.
    pub fn training_data(&self, t1: f64, inputs: &[Input], x: &Array2<f64>, seed: u64) -> Result<TrainingData, CalibError> {
        self.check_reset(t1)?;
        if x.ncols() != inputs.len() {
            return Err(CalibError::Config(format!(
                "{} input columns for {} inputs",
                x.ncols(),
                inputs.len()
            )));
        }
        let n = x.nrows();
        let delta = self.tenor;
        let script = cheyette::compile_caplet_script(1);
        let mut b = cheyette::caplet_bindings(&self.model, t1, self.tenor, &[self.strike], &self.curves)?;
        let column = |inp: Input| inputs.iter().position(|&i| i == inp).map(|j| x.column(j).to_vec());
        let defaults = [self.model.a, self.model.b, self.model.eta];
        for (k, inp) in [Input::A, Input::B, Input::Eta].into_iter().enumerate() {
            let current = match column(inp) {
                Some(v) => Binding::PerPath(v),
                None => Binding::Scalar(defaults[k]),
            };
            b.insert(inp.script_name().to_string(), self.schedule(k, current));
        }
        if let Some(strikes) = column(Input::Strike) {
            b.insert(
                "khat".into(),
                Binding::PerPath(strikes.iter().map(|&k| cheyette::khat(k, delta)).collect()),
            );
        }
        let diff_wrt = inputs.iter().map(|&i| self.diff_name(i)).collect();
        let out = simulate(&script, &b, &self.sim_config(n, seed, diff_wrt))?;
        let y = Array2::from_shape_fn((n, 1), |(p, _)| out.y(p, 0));
        let dy = Array3::from_shape_fn((n, 1, inputs.len()), |(p, _, j)| {
            let chain = if inputs[j] == Input::Strike { delta } else { 1.0 };
            out.dy(p, 0, j) * chain
        });
        Ok(TrainingData {
            x: x.clone(),
            y,
            dy: Some(dy),
        })
    }

    /// Monte Carlo prices and standard errors at `strikes` on common paths,
    /// with `theta = (a, b, η)` on the current interval.
    pub fn mc_prices(&self, t1: f64, theta: [f64; 3], strikes: &[f64], paths: usize, seed: u64) -> Result<Vec<(f64, f64)>, CalibError> {
        self.check_reset(t1)?;
        if strikes.is_empty() {
            return Err(CalibError::Config("no strikes".into()));
        }
        let script = cheyette::compile_caplet_script(strikes.len());
        let mut b = cheyette::caplet_bindings(&self.model, t1, self.tenor, strikes, &self.curves)?;
        for (k, inp) in [Input::A, Input::B, Input::Eta].into_iter().enumerate() {
            b.insert(inp.script_name().to_string(), self.schedule(k, Binding::Scalar(theta[k])));
        }
        let out = simulate(&script, &b, &self.sim_config(paths, seed, Vec::new()))?;
        Ok((0..strikes.len()).map(|k| out.price(k)).collect())
    }

    /// Model parameters on the current interval as a full parameter set.
    pub fn with_theta(&self, theta: [f64; 3]) -> CheyetteParams {
        CheyetteParams {
            a: theta[0],
            b: theta[1],
            eta: theta[2],
            ..self.model
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem() -> CapletProblem {
        let model = CheyetteParams {
            kappa: 0.03,
            theta: 0.2,
            eta: 0.54224,
            a: -0.15873,
            b: 0.00788,
            delta: 0.25,
        };
        CapletProblem {
            grid: GridSpec::StepsPerYear(16.0),
            ..CapletProblem::new(model, CurveSet::desk_default(10.0))
        }
    }

    #[test]
    fn strike_derivative_includes_accrual() {
        let p = problem();
        let x = Array2::from_shape_fn((64, 1), |(i, _)| 0.01 + 0.0005 * i as f64);
        let d = p.training_data(1.0, &[Input::Strike], &x, 3).unwrap();
        let dy = d.dy.unwrap();
        // In the money the payoff is p_F e^X - 1 - Kδ, so dY/dK = -δ.
        for i in 0..64 {
            if d.y[[i, 0]] > 0.0 {
                assert!((dy[[i, 0, 0]] + 0.25).abs() < 1e-12);
            } else {
                assert_eq!(dy[[i, 0, 0]], 0.0);
            }
        }
    }

    #[test]
    fn fixed_inputs_match_mc_prices() {
        // Every row at the same parameters reproduces the common-path price.
        let p = problem();
        let theta = [-0.1, 0.009, 0.5];
        let x = Array2::from_shape_fn((2000, 4), |(_, j)| [theta[0], theta[1], theta[2], 0.02][j]);
        let d = p
            .training_data(1.0, &[Input::A, Input::B, Input::Eta, Input::Strike], &x, 5)
            .unwrap();
        let mc = p.mc_prices(1.0, theta, &[0.02], 2000, 5).unwrap();
        let mean = d.y.mean().unwrap();
        assert!((mean - mc[0].0).abs() < 1e-15 * mean.abs().max(1.0) * 10.0);
    }

    #[test]
    fn frozen_pieces_change_later_prices() {
        let mut p = problem();
        p.frozen = vec![Piece {
            end: 1.0,
            theta: [-0.15873, 0.00788, 0.54224],
        }];
        let base = p.mc_prices(2.0, [-0.1, 0.008, 0.5], &[0.022], 4000, 1).unwrap()[0].0;
        p.frozen[0].theta[1] = 0.012;
        let bumped = p.mc_prices(2.0, [-0.1, 0.008, 0.5], &[0.022], 4000, 1).unwrap()[0].0;
        assert!(bumped > base);
        assert!(p.mc_prices(1.0, [0.0; 3], &[0.02], 10, 1).is_err());
    }

    #[test]
    fn piecewise_derivatives_target_current_interval() {
        let mut p = problem();
        p.frozen = vec![Piece {
            end: 1.0,
            theta: [-0.15873, 0.00788, 0.54224],
        }];
        let x = Array2::from_shape_fn((256, 1), |(i, _)| 0.006 + 1e-5 * i as f64);
        let d = p.training_data(2.0, &[Input::B], &x, 2).unwrap();
        // Central finite difference of the mean payoff in b on common paths.
        let h = 1e-6;
        let mean_at = |db: f64| {
            let xs = x.mapv(|v| v + db);
            p.training_data(2.0, &[Input::B], &xs, 2).unwrap().y.mean().unwrap()
        };
        let fd = (mean_at(h) - mean_at(-h)) / (2.0 * h);
        let ad = d.dy.unwrap().mean().unwrap();
        assert!((fd - ad).abs() < 1e-4 * ad.abs(), "{fd} vs {ad}");
    }
}
