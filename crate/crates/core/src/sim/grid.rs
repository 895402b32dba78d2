use serde::{Deserialize, Serialize};

use super::SimError;

/// How the simulation grid is laid out before observation times are merged in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// Uniform steps of at most `1/n` years.
    StepsPerYear(f64),
    /// A fixed number of uniform steps up to the last observation.
    Steps(usize),
    /// Exactly these times; observations must lie on them.
    Explicit(Vec<f64>),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::StepsPerYear(64.0)
    }
}

/// Strictly increasing simulation times starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, SimError> {
        if times.first() != Some(&0.0) {
            return Err(SimError::Grid("grid must start at 0".into()));
        }
        if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) || !times.iter().all(|t| t.is_finite()) {
            return Err(SimError::Grid("grid times must be finite and strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    /// Builds a grid covering every observation time exactly.
    pub fn build(spec: &GridSpec, observations: &[f64]) -> Result<Self, SimError> {
        if let Some(bad) = observations.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(SimError::Grid(format!("invalid observation time {bad}")));
        }
        let horizon = observations.iter().cloned().fold(0.0, f64::max);
        if let GridSpec::Explicit(times) = spec {
            let grid = TimeGrid::new(times.clone())?;
            for &t in observations {
                grid.snap(t)?;
            }
            return Ok(grid);
        }
        if horizon <= 0.0 {
            return Err(SimError::Grid("the last observation time must be positive".into()));
        }
        let n = match spec {
            GridSpec::StepsPerYear(per_year) => {
                if !(*per_year > 0.0) {
                    return Err(SimError::Grid("steps per year must be positive".into()));
                }
                ((horizon * per_year) - 1e-9).ceil().max(1.0) as usize
            }
            GridSpec::Steps(n) => {
                if *n == 0 {
                    return Err(SimError::Grid("number of steps must be positive".into()));
                }
                *n
            }
            GridSpec::Explicit(_) => unreachable!(),
        };
        let tol = 1e-9 * horizon;
        let mut times: Vec<f64> = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        for &t in observations {
            if times.iter().all(|g| (g - t).abs() > tol) {
                times.push(t);
            }
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        TimeGrid::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, step: usize) -> f64 {
        self.times[step + 1] - self.times[step]
    }

    pub fn span(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Index of the grid time nearest `t`, if within 1e-9 of the grid span.
    pub fn snap(&self, t: f64) -> Result<usize, SimError> {
        let (idx, dist) = self
            .times
            .iter()
            .enumerate()
            .map(|(i, g)| (i, (g - t).abs()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if dist > 1e-9 * self.span() {
            return Err(SimError::Snap {
                time: t,
                nearest: self.times[idx],
            });
        }
        Ok(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_observation_times() {
        let g = TimeGrid::build(&GridSpec::Steps(4), &[1.0, 0.3]).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.3, 0.5, 0.75, 1.0]);
        assert_eq!(g.snap(0.3).unwrap(), 2);
    }

    #[test]
    fn steps_per_year_rounds_up() {
        let g = TimeGrid::build(&GridSpec::StepsPerYear(4.0), &[1.1]).unwrap();
        assert_eq!(g.n_steps(), 5);
        let g = TimeGrid::build(&GridSpec::StepsPerYear(64.0), &[1.0]).unwrap();
        assert_eq!(g.n_steps(), 64);
    }

    #[test]
    fn snapping_tolerance() {
        let g = TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(g.snap(0.5 + 1e-12).unwrap(), 1);
        assert!(matches!(g.snap(0.51), Err(SimError::Snap { .. })));
        assert!(TimeGrid::build(&GridSpec::Explicit(vec![0.0, 1.0]), &[0.4]).is_err());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::build(&GridSpec::Steps(0), &[1.0]).is_err());
    }
}
