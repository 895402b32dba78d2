use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::icde::{icde_minimize, IcdeConfig};
use super::problem::{CapletProblem, Input, Piece};
use super::{metrics, CalibError, CalibTargets, Metrics};
use crate::sampling::{fit_adaptive_density, sample_adaptive, sample_uniform, Mode, ParamDomain, ParamRange};
use crate::surrogate::{ensemble_predict, train, Surrogate, TrainConfig, TrainingData};

const INPUTS: [Input; 4] = [Input::A, Input::B, Input::Eta, Input::Strike];

/// Seed of sub-stream `stream` of `seed`.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Independent seeds for each source of randomness in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStreams {
    pub sampling: u64,
    pub simulation: u64,
    /// Weight initialization and minibatch shuffling.
    pub training: u64,
    pub optimizer: u64,
}

impl SeedStreams {
    pub fn derive(master: u64) -> SeedStreams {
        SeedStreams {
            sampling: stream_seed(master, 0),
            simulation: stream_seed(master, 1),
            training: stream_seed(master, 2),
            optimizer: stream_seed(master, 3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    /// Training samples per replication, pilot included when reused.
    pub n_samples: usize,
    /// Share of the budget spent on the uniform pilot that fits the density of `b`.
    pub pilot_fraction: f64,
    /// Keep the pilot samples in the training set.
    pub reuse_pilot: bool,
    /// Sample `b` adaptively; otherwise every coordinate is uniform.
    pub adaptive: bool,
    pub n_bins: usize,
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
    pub eta_range: (f64, f64),
    pub strike_range: (f64, f64),
    pub train: TrainConfig,
    pub icde: IcdeConfig,
    /// Paths of the MC reference used for the metrics.
    pub reference_paths: usize,
    /// Shared by every replication so that metrics are comparable across seeds.
    pub reference_seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            n_samples: 1 << 15,
            pilot_fraction: 0.25,
            reuse_pilot: true,
            adaptive: true,
            n_bins: 16,
            a_range: (-0.16, 0.1),
            b_range: (0.008, 0.067),
            eta_range: (0.1, 1.0),
            strike_range: (0.01, 0.04),
            train: TrainConfig::default(),
            icde: IcdeConfig::default(),
            reference_paths: 1 << 20,
            reference_seed: 1,
        }
    }
}

impl CalibConfig {
    /// Sampling domain over `(a, b, η, K)`.
    pub fn domain(&self) -> Result<ParamDomain, CalibError> {
        let b_mode = if self.adaptive { Mode::Adaptive } else { Mode::Uniform };
        let p = |name: &str, (lo, hi): (f64, f64), mode| ParamRange {
            name: name.into(),
            lo,
            hi,
            mode,
        };
        Ok(ParamDomain::new(vec![
            p("a", self.a_range, Mode::Uniform),
            p("b", self.b_range, b_mode),
            p("eta", self.eta_range, Mode::Uniform),
            p("strike", self.strike_range, Mode::Uniform),
        ])?)
    }

    fn validate(&self) -> Result<(), CalibError> {
        let bad = |m: &str| Err(CalibError::Config(m.into()));
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        if self.adaptive && !(self.pilot_fraction > 0.0 && self.pilot_fraction < 1.0) {
            return bad("pilot_fraction must lie in (0, 1)");
        }
        if self.reference_paths < 2 {
            return bad("reference_paths must be at least 2");
        }
        if self.eta_range.0 < 0.0 {
            return bad("eta range must be non-negative");
        }
        self.domain().map(|_| ())
    }
}

/// One optimized parameter set with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    /// `(a, b, η)` on the calibrated interval.
    pub theta: [f64; 3],
    pub objective: f64,
    /// Best objective per optimizer generation.
    pub trace: Vec<f64>,
    pub surrogate_prices: Vec<f64>,
    /// MC reference price and standard error per strike.
    pub mc: Vec<(f64, f64)>,
    pub metrics: Metrics,
    /// Fewer targets than parameters.
    pub underdetermined: bool,
}

/// Result of one full replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedFit {
    pub seed: u64,
    pub streams: SeedStreams,
    pub surrogate: Surrogate,
    pub fit: Fit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub result: Result<SeedFit, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Robust {
    BestSeed,
    /// Average the networks of the `m` best seeds and optimize again.
    Ensemble(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalResult {
    pub t1: f64,
    pub runs: Vec<SeedRun>,
    pub chosen: Fit,
    /// Seeds whose surrogates produced `chosen`, best first.
    pub members: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibResult {
    pub seeds: Vec<u64>,
    pub intervals: Vec<IntervalResult>,
    /// Set when an interval failed; `intervals` then holds the earlier ones.
    pub failure: Option<String>,
}

impl CalibResult {
    /// The calibrated piecewise schedule.
    pub fn pieces(&self) -> Vec<Piece> {
        self.intervals
            .iter()
            .map(|i| Piece {
                end: i.t1,
                theta: i.chosen.theta,
            })
            .collect()
    }
}

fn training_set(problem: &CapletProblem, t1: f64, cfg: &CalibConfig, seeds: &SeedStreams) -> Result<TrainingData, CalibError> {
    let domain = cfg.domain()?;
    let n = cfg.n_samples;
    if !cfg.adaptive {
        let x = sample_uniform(&domain, n, seeds.sampling);
        return problem.training_data(t1, &INPUTS, &x, seeds.simulation);
    }
    let n_pilot = ((n as f64 * cfg.pilot_fraction).round() as usize).clamp(1, n - 1);
    let mut flat = domain.clone();
    for p in &mut flat.params {
        p.mode = Mode::Uniform;
    }
    let x_pilot = sample_uniform(&flat, n_pilot, seeds.sampling);
    let pilot = problem.training_data(t1, &INPUTS, &x_pilot, seeds.simulation)?;
    let density = fit_adaptive_density(
        "b",
        cfg.b_range.0,
        cfg.b_range.1,
        &x_pilot.column(1).to_vec(),
        &pilot.y.column(0).to_vec(),
        cfg.n_bins,
    )?;
    let n_main = if cfg.reuse_pilot { n - n_pilot } else { n };
    let densities = BTreeMap::from([("b".to_string(), density)]);
    let x_main = sample_adaptive(&domain, &densities, n_main, stream_seed(seeds.sampling, 1))?;
    let main = problem.training_data(t1, &INPUTS, &x_main, stream_seed(seeds.simulation, 1))?;
    if !cfg.reuse_pilot {
        return Ok(main);
    }
    let join = |a: &Array2<f64>, b: &Array2<f64>| concatenate(Axis(0), &[a.view(), b.view()]).expect("matching widths");
    let dy = match (&pilot.dy, &main.dy) {
        (Some(a), Some(b)) => Some(concatenate(Axis(0), &[a.view(), b.view()]).expect("matching shapes")),
        _ => None,
    };
    Ok(TrainingData {
        x: join(&pilot.x, &main.x),
        y: join(&pilot.y, &main.y),
        dy,
    })
}

/// Optimizes `(a, b, η)` against `targets` through `predict` and evaluates
/// the result against the MC reference.
fn fit_surrogate<P>(
    problem: &CapletProblem,
    targets: &CalibTargets,
    cfg: &CalibConfig,
    predict: P,
    optimizer_seed: u64,
) -> Result<Fit, CalibError>
where
    P: Fn(ArrayView2<f64>) -> Array2<f64> + Sync,
{
    let n = targets.len();
    let inputs = |theta: &[f64]| Array2::from_shape_fn((n, 4), |(k, j)| if j < 3 { theta[j] } else { targets.strikes[k] });
    let objective = |theta: &[f64]| {
        let p = predict(inputs(theta).view());
        (0..n)
            .map(|k| targets.weight(k) * (p[[k, 0]] - targets.prices[k]).powi(2))
            .sum::<f64>()
    };
    let icde = IcdeConfig {
        seed: optimizer_seed,
        ..cfg.icde.clone()
    };
    let best = icde_minimize(objective, &[cfg.a_range, cfg.b_range, cfg.eta_range], &[], &icde)?;
    let theta = [best.x[0], best.x[1], best.x[2]];
    let surrogate_prices = predict(inputs(&theta).view()).column(0).to_vec();
    let mc = problem.mc_prices(targets.t1, theta, &targets.strikes, cfg.reference_paths, cfg.reference_seed)?;
    let mc_prices: Vec<f64> = mc.iter().map(|p| p.0).collect();
    Ok(Fit {
        theta,
        objective: best.f,
        trace: best.trace,
        metrics: metrics(&surrogate_prices, &mc_prices, &targets.prices)?,
        surrogate_prices,
        mc,
        underdetermined: targets.underdetermined(),
    })
}

/// Sample, simulate, train and optimize for one reset date with the
/// problem's frozen intervals held fixed.
pub fn calibrate_single_maturity(
    problem: &CapletProblem,
    targets: &CalibTargets,
    cfg: &CalibConfig,
    seed: u64,
) -> Result<SeedFit, CalibError> {
    targets.validate()?;
    cfg.validate()?;
    let streams = SeedStreams::derive(seed);
    let data = training_set(problem, targets.t1, cfg, &streams)?;
    let train_cfg = TrainConfig {
        seed: streams.training,
        ..cfg.train.clone()
    };
    let surrogate = train(&data, &train_cfg)?;
    let fit = fit_surrogate(problem, targets, cfg, |x| surrogate.predict(x), streams.optimizer)?;
    Ok(SeedFit {
        seed,
        streams,
        surrogate,
        fit,
    })
}

/// Picks the replication with the least max error, or averages the
/// surrogates of the `m` best and optimizes against the ensemble with the best
/// replication's optimizer seed. `problem` must carry the same frozen prefix
/// the runs were made with.
pub fn select_robust(
    problem: &CapletProblem,
    targets: &CalibTargets,
    cfg: &CalibConfig,
    runs: &[SeedRun],
    mode: Robust,
) -> Result<(Fit, Vec<u64>), CalibError> {
    let mut ranked: Vec<&SeedFit> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    if ranked.is_empty() {
        return Err(CalibError::AllSeedsFailed {
            t1: targets.t1,
            messages: runs.iter().filter_map(|r| r.result.as_ref().err().cloned()).collect(),
        });
    }
    // Stable, so ties keep seed order.
    ranked.sort_by(|a, b| a.fit.metrics.max_error.total_cmp(&b.fit.metrics.max_error));
    match mode {
        Robust::BestSeed => Ok((ranked[0].fit.clone(), vec![ranked[0].seed])),
        Robust::Ensemble(m) => {
            if ranked.len() < m {
                return Err(CalibError::Config(format!(
                    "ensemble of {m} needs {m} successful seeds, got {}",
                    ranked.len()
                )));
            }
            let members: Vec<Surrogate> = ranked[..m].iter().map(|s| s.surrogate.clone()).collect();
            let fit = fit_surrogate(
                problem,
                targets,
                cfg,
                |x| ensemble_predict(&members, x).expect("members share dimensions"),
                ranked[0].streams.optimizer,
            )?;
            Ok((fit, ranked[..m].iter().map(|s| s.seed).collect()))
        }
    }
}

/// Bootstrapped calibration over increasing reset dates. At each date every
/// seed runs a full replication from the same frozen prefix; the selected
/// parameters are frozen before moving to the next date.
pub fn robust_calibrate(
    problem: &CapletProblem,
    targets: &[CalibTargets],
    cfg: &CalibConfig,
    seeds: &[u64],
    mode: Robust,
) -> Result<CalibResult, CalibError> {
    if seeds.is_empty() {
        return Err(CalibError::Config("need at least one seed".into()));
    }
    if let Robust::Ensemble(m) = mode {
        if m == 0 || m > seeds.len() {
            return Err(CalibError::Config(format!("ensemble of {m} from {} seeds", seeds.len())));
        }
    }
    if targets.is_empty() {
        return Err(CalibError::Targets("no maturities".into()));
    }
    let mut last = problem.frozen.last().map_or(0.0, |p| p.end);
    for t in targets {
        t.validate()?;
        if t.t1 <= last {
            return Err(CalibError::Targets(format!("reset dates must increase, {} after {last}", t.t1)));
        }
        last = t.t1;
    }
    cfg.validate()?;

    let mut p = problem.clone();
    let mut out = CalibResult {
        seeds: seeds.to_vec(),
        intervals: Vec::new(),
        failure: None,
    };
    for t in targets {
        let runs: Vec<SeedRun> = seeds
            .par_iter()
            .map(|&seed| SeedRun {
                seed,
                result: calibrate_single_maturity(&p, t, cfg, seed).map_err(|e| e.to_string()),
            })
            .collect();
        match select_robust(&p, t, cfg, &runs, mode) {
            Ok((chosen, members)) => {
                p.frozen.push(Piece {
                    end: t.t1,
                    theta: chosen.theta,
                });
                out.intervals.push(IntervalResult {
                    t1: t.t1,
                    runs,
                    chosen,
                    members,
                });
            }
            Err(e) => {
                out.failure = Some(format!("reset {}: {e}", t.t1));
                break;
            }
        }
    }
    Ok(out)
}

/// Single-seed bootstrap.
pub fn calibrate_bootstrap(
    problem: &CapletProblem,
    targets: &[CalibTargets],
    cfg: &CalibConfig,
    seed: u64,
) -> Result<CalibResult, CalibError> {
    robust_calibrate(problem, targets, cfg, &[seed], Robust::BestSeed)
}

/// MC prices of a known piecewise schedule, one target set per reset date.
pub fn synthetic_targets(
    problem: &CapletProblem,
    ladder: &[(f64, [f64; 3])],
    strikes: &[f64],
    paths: usize,
    seed: u64,
) -> Result<Vec<CalibTargets>, CalibError> {
    let mut p = problem.clone();
    let mut out = Vec::with_capacity(ladder.len());
    for &(t1, theta) in ladder {
        let mc = p.mc_prices(t1, theta, strikes, paths, seed)?;
        out.push(CalibTargets {
            t1,
            strikes: strikes.to_vec(),
            prices: mc.iter().map(|m| m.0).collect(),
            std_errors: Some(mc.iter().map(|m| m.1).collect()),
            weights: None,
        });
        p.frozen.push(Piece { end: t1, theta });
    }
    Ok(out)
}
