//! Uniform and magnitude-adaptive sampling of parameter vectors.
//!
//! An adaptive coordinate is drawn with density roughly proportional to the
//! reciprocal of the payoff magnitude at that coordinate, estimated from a
//! uniform pilot run, so that low-magnitude regions get more samples.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Uniform,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub mode: Mode,
}

impl ParamRange {
    pub fn uniform(name: &str, lo: f64, hi: f64) -> ParamRange {
        ParamRange {
            name: name.to_string(),
            lo,
            hi,
            mode: Mode::Uniform,
        }
    }

    pub fn adaptive(name: &str, lo: f64, hi: f64) -> ParamRange {
        ParamRange {
            mode: Mode::Adaptive,
            ..ParamRange::uniform(name, lo, hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamDomain {
    pub params: Vec<ParamRange>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("parameter {0}: interval must satisfy lo < hi with finite bounds")]
    BadInterval(String),
    #[error("parameter {0} appears twice")]
    Duplicate(String),
    #[error("empty domain")]
    EmptyDomain,
    #[error("no adaptive density fitted for {0}")]
    MissingDensity(String),
    #[error("bin {bin} of {name} has no samples; use fewer bins")]
    EmptyBin { name: String, bin: usize },
    #[error("need at least {needed} samples for {bins} bins, got {got}")]
    TooFewSamples { needed: usize, bins: usize, got: usize },
    #[error("all payoff magnitudes are zero")]
    ZeroMagnitude,
    #[error("parameter and payoff columns differ in length")]
    Length,
}

impl ParamDomain {
    pub fn new(params: Vec<ParamRange>) -> Result<ParamDomain, SamplingError> {
        if params.is_empty() {
            return Err(SamplingError::EmptyDomain);
        }
        for (i, p) in params.iter().enumerate() {
            if !(p.lo.is_finite() && p.hi.is_finite() && p.lo < p.hi) {
                return Err(SamplingError::BadInterval(p.name.clone()));
            }
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(SamplingError::Duplicate(p.name.clone()));
            }
        }
        Ok(ParamDomain { params })
    }

    pub fn dims(&self) -> usize {
        self.params.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }
}

fn uniforms(n: usize, dims: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, dims), || rng.gen::<f64>())
}

/// `n × dims` i.i.d. uniform draws, row-major from one seeded stream.
pub fn sample_uniform(domain: &ParamDomain, n: usize, seed: u64) -> Array2<f64> {
    let mut x = uniforms(n, domain.dims(), seed);
    for (j, p) in domain.params.iter().enumerate() {
        x.column_mut(j).mapv_inplace(|u| p.lo + u * (p.hi - p.lo));
    }
    x
}

/// Adaptive coordinates through their inverse CDFs, the rest as in
/// [`sample_uniform`]; the underlying uniforms are the same for a given seed.
pub fn sample_adaptive(
    domain: &ParamDomain,
    densities: &BTreeMap<String, AdaptiveDensity>,
    n: usize,
    seed: u64,
) -> Result<Array2<f64>, SamplingError> {
    let mut x = uniforms(n, domain.dims(), seed);
    for (j, p) in domain.params.iter().enumerate() {
        match p.mode {
            Mode::Uniform => x.column_mut(j).mapv_inplace(|u| p.lo + u * (p.hi - p.lo)),
            Mode::Adaptive => {
                let d = densities
                    .get(&p.name)
                    .ok_or_else(|| SamplingError::MissingDensity(p.name.clone()))?;
                x.column_mut(j).mapv_inplace(|u| d.inverse_cdf(u));
            }
        }
    }
    Ok(x)
}

/// Natural cubic spline through `(xs, ys)`, linear beyond the end knots.
#[derive(Debug, Clone, PartialEq)]
struct Spline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl Spline {
    fn natural(xs: &[f64], ys: &[f64]) -> Spline {
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            for i in 0..k {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
            }
            for i in 1..k {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * h[i];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
            }
        }
        Spline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        }
    }

    fn segment_slope(&self, i: usize, at_right: bool) -> f64 {
        let h = self.xs[i + 1] - self.xs[i];
        let base = (self.ys[i + 1] - self.ys[i]) / h;
        if at_right {
            base + h * (self.m[i] + 2.0 * self.m[i + 1]) / 6.0
        } else {
            base - h * (2.0 * self.m[i] + self.m[i + 1]) / 6.0
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 {
            return self.ys[0];
        }
        if x <= self.xs[0] {
            return self.ys[0] + (x - self.xs[0]) * self.segment_slope(0, false);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + (x - self.xs[n - 1]) * self.segment_slope(n - 2, true);
        }
        let i = self.xs.partition_point(|&k| k <= x).saturating_sub(1).min(n - 2);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i] + b * self.ys[i + 1] + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

const TABLE_CELLS: usize = 4096;
const FLOOR_FRACTION: f64 = 1e-3;

/// Piecewise-linear density on `[lo, hi]` tabulated from a spline of
/// reciprocal bin-mean magnitudes, with its exact CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveDensity {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// Bin centers and the fitted reciprocal magnitudes there.
    pub knots: Vec<f64>,
    pub knot_values: Vec<f64>,
    /// Integral of the unnormalized table.
    pub normalization: f64,
    grid: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
}

/// Bins `param` into `n_bins` equal cells and fits a density proportional to
/// `1 / mean|y|` per bin.
pub fn fit_adaptive_density(
    name: &str,
    lo: f64,
    hi: f64,
    param: &[f64],
    y: &[f64],
    n_bins: usize,
) -> Result<AdaptiveDensity, SamplingError> {
    if param.len() != y.len() {
        return Err(SamplingError::Length);
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(SamplingError::BadInterval(name.to_string()));
    }
    let n_bins = n_bins.max(1);
    if param.len() < 10 * n_bins {
        return Err(SamplingError::TooFewSamples {
            needed: 10 * n_bins,
            bins: n_bins,
            got: param.len(),
        });
    }
    let width = (hi - lo) / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&b, &v) in param.iter().zip(y) {
        let k = (((b - lo) / width).floor().max(0.0) as usize).min(n_bins - 1);
        sums[k] += v.abs();
        counts[k] += 1;
    }
    if let Some(bin) = counts.iter().position(|&c| c == 0) {
        return Err(SamplingError::EmptyBin {
            name: name.to_string(),
            bin,
        });
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let top = means.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(SamplingError::ZeroMagnitude);
    }
    // Zero-magnitude bins get the largest weight any nonzero bin could have.
    let smallest = means.iter().cloned().filter(|&m| m > 0.0).fold(f64::INFINITY, f64::min);
    let knots: Vec<f64> = (0..n_bins).map(|k| lo + (k as f64 + 0.5) * width).collect();
    let knot_values: Vec<f64> = means.iter().map(|&m| 1.0 / m.max(smallest)).collect();
    let spline = Spline::natural(&knots, &knot_values);

    let grid: Vec<f64> = (0..=TABLE_CELLS).map(|i| lo + (hi - lo) * i as f64 / TABLE_CELLS as f64).collect();
    let raw: Vec<f64> = grid.iter().map(|&b| spline.eval(b)).collect();
    let floor = FLOOR_FRACTION * raw.iter().cloned().fold(0.0, f64::max);
    let raw: Vec<f64> = raw.into_iter().map(|v| v.max(floor)).collect();
    let mut cdf = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (raw[i - 1] + raw[i]) * (grid[i] - grid[i - 1]);
    }
    let normalization = cdf[TABLE_CELLS];
    let pdf = raw.iter().map(|v| v / normalization).collect();
    let cdf = cdf.iter().map(|v| v / normalization).collect();
    Ok(AdaptiveDensity {
        name: name.to_string(),
        lo,
        hi,
        knots,
        knot_values,
        normalization,
        grid,
        pdf,
        cdf,
    })
}

impl AdaptiveDensity {
    fn cell(&self, b: f64) -> usize {
        let h = (self.hi - self.lo) / TABLE_CELLS as f64;
        (((b - self.lo) / h).floor().max(0.0) as usize).min(TABLE_CELLS - 1)
    }

    /// Density at `b`; zero outside the interval.
    pub fn pdf(&self, b: f64) -> f64 {
        if !(self.lo..=self.hi).contains(&b) {
            return 0.0;
        }
        let i = self.cell(b);
        let t = (b - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.pdf[i] + t * (self.pdf[i + 1] - self.pdf[i])
    }

    pub fn cdf(&self, b: f64) -> f64 {
        if b <= self.lo {
            return 0.0;
        }
        if b >= self.hi {
            return 1.0;
        }
        let i = self.cell(b);
        let d = b - self.grid[i];
        self.cdf[i] + d * (self.pdf[i] + 0.5 * d * (self.pdf[i + 1] - self.pdf[i]) / (self.grid[i + 1] - self.grid[i]))
    }

    /// Integral of the density over its interval.
    pub fn total_mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.pdf.windows(2))
            .map(|(g, p)| 0.5 * (p[0] + p[1]) * (g[1] - g[0]))
            .sum()
    }

    /// Solves `cdf(b) = u` exactly within the linear cell.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c <= u).saturating_sub(1).min(TABLE_CELLS - 1);
        let h = self.grid[i + 1] - self.grid[i];
        let (p0, p1) = (self.pdf[i], self.pdf[i + 1]);
        let r = u - self.cdf[i];
        let slope = (p1 - p0) / h;
        // r = p0 d + slope d² / 2, stable root.
        let d = if slope.abs() < 1e-300 {
            r / p0
        } else {
            2.0 * r / (p0 + (p0 * p0 + 2.0 * slope * r).max(0.0).sqrt())
        };
        (self.grid[i] + d.clamp(0.0, h)).clamp(self.lo, self.hi)
    }
}

/// Fits densities for every adaptive coordinate from pilot samples `x` and
/// payoff magnitudes `y`.
pub fn fit_domain(
    domain: &ParamDomain,
    x: &Array2<f64>,
    y: &[f64],
    n_bins: usize,
) -> Result<BTreeMap<String, AdaptiveDensity>, SamplingError> {
    domain
        .params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.mode == Mode::Adaptive)
        .map(|(j, p)| {
            let col = x.column(j).to_vec();
            Ok((p.name.clone(), fit_adaptive_density(&p.name, p.lo, p.hi, &col, y, n_bins)?))
        })
        .collect()
}
