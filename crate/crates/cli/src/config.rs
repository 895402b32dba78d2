//! Engine configuration file (TOML). Relative paths resolve against the
//! directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pdml_core::calib::CalibConfig;
use pdml_core::cheyette::{CheyetteParams, Curve, CurveSet};
use pdml_core::sampling::ParamRange;
use pdml_core::sim::{Binding, GridSpec};
use pdml_core::surrogate::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Master seed.
    #[serde(default)]
    pub seed: u64,
    /// Excluded from the config hash and manifest.
    #[serde(default = "default_output", skip_serializing)]
    pub output: PathBuf,
    pub model: ModelConfig,
    /// Values of external script symbols.
    #[serde(default)]
    pub bindings: BTreeMap<String, BindingValue>,
    #[serde(default)]
    pub cheyette: Option<CheyetteSection>,
    /// Parameters varied per sample by `train`, bound per path.
    #[serde(default)]
    pub domain: Vec<ParamRange>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub calib: CalibSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// One of the bundled scripts, by name.
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub script: Option<PathBuf>,
}

/// A scalar, one value per path, or piecewise-constant values in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BindingValue {
    Scalar(f64),
    PerPath(Vec<f64>),
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
}

impl BindingValue {
    pub fn to_binding(&self) -> Binding {
        match self {
            BindingValue::Scalar(v) => Binding::Scalar(*v),
            BindingValue::PerPath(v) => Binding::PerPath(v.clone()),
            BindingValue::Piecewise { breaks, values } => Binding::Piecewise {
                breaks: breaks.clone(),
                pieces: values.iter().map(|&v| Binding::Scalar(v)).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheyetteSection {
    pub kappa: f64,
    pub theta: f64,
    pub eta: f64,
    pub a: f64,
    pub b: f64,
    /// Benchmark forward tenor.
    pub delta: f64,
    pub t1: f64,
    pub tenor: f64,
    pub strike: f64,
    /// CSV `time,df`; flat desk curves when absent.
    pub discount_curve: Option<PathBuf>,
    pub forecast_curve: Option<PathBuf>,
}

impl Default for CheyetteSection {
    fn default() -> Self {
        CheyetteSection {
            kappa: 0.03,
            theta: 0.2,
            eta: 0.54224,
            a: -0.15873,
            b: 0.00788,
            delta: 0.25,
            t1: 1.0,
            tenor: 0.25,
            strike: 0.022,
            discount_curve: None,
            forecast_curve: None,
        }
    }
}

impl CheyetteSection {
    pub fn params(&self) -> CheyetteParams {
        CheyetteParams {
            kappa: self.kappa,
            theta: self.theta,
            eta: self.eta,
            a: self.a,
            b: self.b,
            delta: self.delta,
        }
    }

    pub fn curves(&self, base: &Path, horizon: f64) -> Result<CurveSet, CliError> {
        let mut set = CurveSet::desk_default(horizon);
        if let Some(p) = &self.discount_curve {
            set.discount = read_curve(&base.join(p))?;
        }
        if let Some(p) = &self.forecast_curve {
            set.forecast = read_curve(&base.join(p))?;
        }
        Ok(set)
    }
}

#[derive(Debug, Deserialize)]
struct CurveRow {
    time: f64,
    df: f64,
}

pub fn read_curve(path: &Path) -> Result<Curve, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut pillars = Vec::new();
    for row in rdr.deserialize::<CurveRow>() {
        let r = row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        pillars.push((r.time, r.df));
    }
    Curve::new(&pillars).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub batch_size: usize,
    pub chunk_size: usize,
    pub grid: GridSpec,
    pub diff_wrt: Vec<String>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            batch_size: 1 << 14,
            chunk_size: 256,
            grid: GridSpec::default(),
            diff_wrt: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    /// Training samples generated by `train`.
    pub n_samples: usize,
    /// Share of `n_samples` spent on the uniform pilot when the domain has
    /// adaptive coordinates; the pilot is kept in the training set.
    pub pilot_fraction: f64,
    pub n_bins: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            n_samples: 1 << 14,
            pilot_fraction: 0.25,
            n_bins: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RobustMode {
    None,
    BestSeed,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibSection {
    /// CSV `maturity,strike,price[,se][,weight]`.
    pub targets: Option<PathBuf>,
    pub robust: RobustMode,
    /// Replication seeds; the master seed alone when empty.
    pub seeds: Vec<u64>,
    pub ensemble_size: usize,
    #[serde(flatten)]
    pub config: CalibConfig,
}

impl Default for CalibSection {
    fn default() -> Self {
        CalibSection {
            targets: None,
            robust: RobustMode::None,
            seeds: Vec::new(),
            ensemble_size: 3,
            config: CalibConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<(EngineConfig, PathBuf), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: EngineConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    /// Script source and whether it is the Cheyette caplet.
    pub fn script_source(&self, base: &Path) -> Result<(String, bool), CliError> {
        match (&self.model.builtin, &self.model.script) {
            (Some(name), None) => pdml_core::script::corpus::ALL
                .iter()
                .find(|(n, _)| n == name)
                .map(|(n, s)| (s.to_string(), *n == "cheyette_sv_caplet"))
                .ok_or_else(|| {
                    let names: Vec<&str> = pdml_core::script::corpus::ALL.iter().map(|(n, _)| *n).collect();
                    CliError::Config(format!("unknown builtin model {name}; choose one of {}", names.join(", ")))
                }),
            (None, Some(p)) => {
                let path = base.join(p);
                std::fs::read_to_string(&path)
                    .map(|s| (s, false))
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
            _ => Err(CliError::Config("model needs exactly one of `builtin` or `script`".into())),
        }
    }

    /// Stable SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}
