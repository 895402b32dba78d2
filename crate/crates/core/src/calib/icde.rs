//! Constrained differential evolution with a mix of mutation strategies and
//! breeder-GA style mutation.
//!
//! Constraints follow the feasibility rules: a feasible point beats any
//! infeasible one, two feasible points compare by objective, two infeasible
//! points by total violation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Rand1,
    Rand2,
    CurrentToRand1,
    CurrentToBest1,
}

pub const ALL_STRATEGIES: [Strategy; 4] = [Strategy::Rand1, Strategy::Rand2, Strategy::CurrentToRand1, Strategy::CurrentToBest1];

/// Settings of the breeder-GA mutation applied on top of a trial vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IbgaConfig {
    /// Probability that a trial vector also receives the mutation.
    pub rate: f64,
    /// Mutation range as a fraction of the box width.
    pub range: f64,
    /// Number of terms `α_k 2^{-k}` in the step size.
    pub precision: u32,
}

impl Default for IbgaConfig {
    fn default() -> Self {
        IbgaConfig {
            rate: 0.1,
            range: 0.1,
            precision: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcdeConfig {
    pub population: usize,
    pub generations: usize,
    pub strategies: Vec<Strategy>,
    /// Differential weight.
    pub f: f64,
    /// Binomial crossover rate.
    pub cr: f64,
    pub ibga: IbgaConfig,
    pub seed: u64,
}

impl Default for IcdeConfig {
    fn default() -> Self {
        IcdeConfig {
            population: 40,
            generations: 150,
            strategies: ALL_STRATEGIES.to_vec(),
            f: 0.7,
            cr: 0.9,
            ibga: IbgaConfig::default(),
            seed: 0,
        }
    }
}

/// `g(x) <= 0` or `|h(x)| <= tol`.
pub enum Constraint<'a> {
    Inequality(Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>),
    Equality(Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>, f64),
}

impl Constraint<'_> {
    fn violation(&self, x: &[f64]) -> f64 {
        match self {
            Constraint::Inequality(g) => g(x).max(0.0),
            Constraint::Equality(h, tol) => (h(x).abs() - tol).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IcdeError {
    #[error("population must be at least 4, got {0}")]
    Population(usize),
    #[error("search box coordinate {0} needs finite lo < hi")]
    Box(usize),
    #[error("no mutation strategies configured")]
    NoStrategies,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcdeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub violation: f64,
    pub feasible: bool,
    /// Objective of the best member after each generation (initial
    /// population first). Infinite until a feasible point exists.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Clone)]
struct Member {
    x: Vec<f64>,
    f: f64,
    v: f64,
}

/// Feasibility-rule ordering: true if `a` is at least as good as `b`.
fn not_worse(a: &Member, b: &Member) -> bool {
    match (a.v == 0.0, b.v == 0.0) {
        (true, true) => !(a.f > b.f) || b.f.is_nan(),
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.v <= b.v,
    }
}

fn better(a: &Member, b: &Member) -> bool {
    not_worse(a, b) && !not_worse(b, a)
}

/// Reflects `v` back into `[lo, hi]`.
fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if !v.is_finite() {
        return lo + 0.5 * w;
    }
    if v < lo || v > hi {
        // Fold the real line onto the box with period 2w.
        let r = (v - lo).rem_euclid(2.0 * w);
        v = if r <= w { lo + r } else { hi - (r - w) };
    }
    v.clamp(lo, hi)
}

fn distinct(rng: &mut ChaCha8Rng, n: usize, exclude: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let r = rng.gen_range(0..n);
        if r != exclude && !out.contains(&r) {
            out.push(r);
        }
    }
    out
}

/// Minimizes `f` over the box `bounds` subject to `constraints`. Objective
/// values that are NaN are treated as `+∞`.
pub fn icde_minimize<F>(f: F, bounds: &[(f64, f64)], constraints: &[Constraint], cfg: &IcdeConfig) -> Result<IcdeResult, IcdeError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let np = cfg.population;
    if np < 4 {
        return Err(IcdeError::Population(np));
    }
    if let Some(j) = bounds.iter().position(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
        return Err(IcdeError::Box(j));
    }
    if cfg.strategies.is_empty() {
        return Err(IcdeError::NoStrategies);
    }
    let dim = bounds.len();
    let evaluate = |xs: Vec<Vec<f64>>| -> Vec<Member> {
        xs.into_par_iter()
            .map(|x| {
                let fx = f(&x);
                let v = constraints.iter().map(|c| c.violation(&x)).sum();
                Member {
                    f: if fx.is_nan() { f64::INFINITY } else { fx },
                    v,
                    x,
                }
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init: Vec<Vec<f64>> = (0..np)
        .map(|_| bounds.iter().map(|&(lo, hi)| lo + rng.gen::<f64>() * (hi - lo)).collect())
        .collect();
    let mut pop = evaluate(init);
    let mut evaluations = np;
    let best_of = |pop: &[Member]| -> usize {
        let mut b = 0;
        for i in 1..pop.len() {
            if better(&pop[i], &pop[b]) {
                b = i;
            }
        }
        b
    };
    let trace_value = |m: &Member| if m.v == 0.0 { m.f } else { f64::INFINITY };
    let mut best = best_of(&pop);
    let mut trace = vec![trace_value(&pop[best])];

    for _ in 0..cfg.generations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let strategy = cfg.strategies[rng.gen_range(0..cfg.strategies.len())];
                let xi = &pop[i].x;
                let mut t = xi.clone();
                let j_rand = rng.gen_range(0..dim);
                match strategy {
                    Strategy::CurrentToRand1 => {
                        let r = distinct(&mut rng, np, i, 3);
                        let k: f64 = rng.gen();
                        for j in 0..dim {
                            t[j] = xi[j] + k * (pop[r[0]].x[j] - xi[j]) + cfg.f * (pop[r[1]].x[j] - pop[r[2]].x[j]);
                        }
                    }
                    _ => {
                        let r = distinct(&mut rng, np, i, if strategy == Strategy::Rand2 { 5 } else { 3 });
                        for j in 0..dim {
                            let cross = j == j_rand || rng.gen::<f64>() < cfg.cr;
                            if !cross {
                                continue;
                            }
                            let d = |a: usize, b: usize| pop[a].x[j] - pop[b].x[j];
                            t[j] = match strategy {
                                Strategy::Rand1 => pop[r[0]].x[j] + cfg.f * d(r[1], r[2]),
                                Strategy::Rand2 => pop[r[0]].x[j] + cfg.f * (d(r[1], r[2]) + d(r[3], r[4])),
                                Strategy::CurrentToBest1 => xi[j] + cfg.f * (pop[best].x[j] - xi[j]) + cfg.f * d(r[0], r[1]),
                                Strategy::CurrentToRand1 => unreachable!(),
                            };
                        }
                    }
                }
                if rng.gen::<f64>() < cfg.ibga.rate {
                    for (j, &(lo, hi)) in bounds.iter().enumerate() {
                        if rng.gen_range(0..dim) != 0 {
                            continue;
                        }
                        let m = cfg.ibga.precision.max(1);
                        let step: f64 = (0..m).filter(|_| rng.gen_range(0..m) == 0).map(|k| 0.5f64.powi(k as i32)).sum();
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        t[j] += sign * cfg.ibga.range * (hi - lo) * step;
                    }
                }
                for (v, &(lo, hi)) in t.iter_mut().zip(bounds) {
                    *v = reflect(*v, lo, hi);
                }
                t
            })
            .collect();
        let evaluated = evaluate(trials);
        evaluations += np;
        for (i, trial) in evaluated.into_iter().enumerate() {
            if not_worse(&trial, &pop[i]) {
                pop[i] = trial;
            }
        }
        best = best_of(&pop);
        trace.push(trace_value(&pop[best]));
    }

    let b = &pop[best];
    Ok(IcdeResult {
        x: b.x.clone(),
        f: b.f,
        violation: b.v,
        feasible: b.v == 0.0,
        trace,
        evaluations,
    })
}
