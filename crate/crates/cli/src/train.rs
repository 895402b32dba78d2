use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Array3, Axis};
use pdml_core::calib::{stream_seed, CapletProblem, Input, SeedStreams};
use pdml_core::sampling::{fit_domain, sample_adaptive, sample_uniform, Mode, ParamDomain};
use pdml_core::sim::{self, Binding, SimConfig};
use pdml_core::surrogate::{self, LossKind, Surrogate, TrainConfig, TrainError, TrainingData};

use crate::config::EngineConfig;
use crate::data::{self, Samples};
use crate::simulate::{load_model, sim_error};
use crate::{load_config, manifest, CliError, Common, LossArg};

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub loss: Option<LossArg>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub data: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

fn cheyette_input(name: &str) -> Option<Input> {
    [Input::A, Input::B, Input::Eta, Input::Strike]
        .into_iter()
        .find(|i| i.name() == name)
}

/// Simulates one path per row of `x`.
fn simulate_rows(cfg: &EngineConfig, base: &Path, domain: &ParamDomain, x: &Array2<f64>, seed: u64) -> Result<Samples, CliError> {
    let names = domain.names();
    if cfg.script_source(base)?.1 {
        let c = cfg.cheyette.clone().unwrap_or_default();
        let inputs: Vec<Input> = names
            .iter()
            .map(|n| cheyette_input(n).ok_or_else(|| CliError::Config(format!("`{n}` is not a Cheyette input (a, b, eta, strike)"))))
            .collect::<Result<_, _>>()?;
        let mut problem = CapletProblem::new(c.params(), c.curves(base, c.t1 + c.tenor + 1.0)?);
        problem.tenor = c.tenor;
        problem.strike = c.strike;
        problem.grid = cfg.sim.grid.clone();
        problem.chunk_size = cfg.sim.chunk_size;
        let data = problem
            .training_data(c.t1, &inputs, x, seed)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        return Ok(Samples {
            inputs: names,
            outputs: vec!["caplet".into()],
            data,
        });
    }
    let mut model = load_model(cfg, base, &names)?;
    for (j, n) in names.iter().enumerate() {
        model.bindings.insert(n.clone(), Binding::PerPath(x.column(j).to_vec()));
    }
    let sc = SimConfig {
        batch_size: x.nrows(),
        seed,
        grid: cfg.sim.grid.clone(),
        diff_wrt: names.clone(),
        chunk_size: cfg.sim.chunk_size,
    };
    let out = sim::simulate(&model.script, &model.bindings, &sc).map_err(sim_error)?;
    let (n, p, d) = (out.n_paths, out.n_payoffs(), out.n_params());
    Ok(Samples {
        inputs: names,
        outputs: out.payoff_names.clone(),
        data: TrainingData {
            x: x.clone(),
            y: Array2::from_shape_vec((n, p), out.y).expect("payoff layout"),
            dy: Some(Array3::from_shape_vec((n, p, d), out.dy).expect("derivative layout")),
        },
    })
}

/// Samples the domain and simulates: a uniform pilot first when some
/// coordinate is adaptive, whose payoffs shape the density of the rest.
fn generate(cfg: &EngineConfig, base: &Path, streams: &SeedStreams) -> Result<Samples, CliError> {
    if cfg.domain.is_empty() {
        return Err(CliError::Config("`domain` is empty; give parameter ranges or --data".into()));
    }
    let domain = ParamDomain::new(cfg.domain.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let n = cfg.sampling.n_samples;
    if n == 0 {
        return Err(CliError::Config("n_samples must be at least 1".into()));
    }
    if domain.params.iter().all(|p| p.mode == Mode::Uniform) || n < 2 {
        let x = sample_uniform(&domain, n, streams.sampling);
        return simulate_rows(cfg, base, &domain, &x, streams.simulation);
    }
    let n_pilot = ((n as f64 * cfg.sampling.pilot_fraction).round() as usize).clamp(1, n - 1);
    let mut flat = domain.clone();
    flat.params.iter_mut().for_each(|p| p.mode = Mode::Uniform);
    let x_pilot = sample_uniform(&flat, n_pilot, streams.sampling);
    let pilot = simulate_rows(cfg, base, &domain, &x_pilot, streams.simulation)?;
    let densities = fit_domain(&domain, &x_pilot, &pilot.data.y.column(0).to_vec(), cfg.sampling.n_bins)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let x_main = sample_adaptive(&domain, &densities, n - n_pilot, stream_seed(streams.sampling, 1))
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let main = simulate_rows(cfg, base, &domain, &x_main, stream_seed(streams.simulation, 1))?;
    let (a, b) = (&pilot.data, &main.data);
    let dy = match (&a.dy, &b.dy) {
        (Some(p), Some(m)) => Some(concatenate(Axis(0), &[p.view(), m.view()]).expect("matching shapes")),
        _ => None,
    };
    Ok(Samples {
        data: TrainingData {
            x: concatenate(Axis(0), &[a.x.view(), b.x.view()]).expect("matching widths"),
            y: concatenate(Axis(0), &[a.y.view(), b.y.view()]).expect("matching widths"),
            dy,
        },
        ..pilot
    })
}

/// Applies the command-line loss settings for a network of the given shape.
fn train_config(cfg: &TrainConfig, o: &Overrides, n_out: usize, n_in: usize) -> TrainConfig {
    let mut t = cfg.clone();
    if let Some(e) = o.epochs {
        t.epochs = e;
    }
    match o.loss {
        Some(LossArg::Vml) => t.loss = LossKind::Vml,
        Some(LossArg::Dml) => t.loss = LossKind::Dml,
        Some(LossArg::Pdml) if !matches!(t.loss, LossKind::Pdml { .. }) => {
            t.loss = LossKind::Pdml {
                pairs: LossKind::Dml.pairs(n_out, n_in),
            }
        }
        _ => {}
    }
    if let Some(l) = o.lambda {
        t.lambda = Some(vec![l; t.loss.pairs(n_out, n_in).len()]);
    }
    t
}

fn write_history(path: &Path, s: &Surrogate) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,loss")?;
    for (e, l) in s.meta.loss_history.iter().enumerate() {
        writeln!(w, "{},{l:e}", e + 1)?;
    }
    w.flush()?;
    Ok(())
}

fn write_comparison(path: &Path, s: &Surrogate, inputs: &[String], r: &data::Reference) -> Result<(f64, f64), CliError> {
    if r.x.ncols() != s.n_in() {
        return Err(CliError::Config("reference inputs do not match the surrogate".into()));
    }
    let pred = s.predict(r.x.view());
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{},reference,reference_se,surrogate,error", inputs.join(","))?;
    let mut sq = 0.0;
    let mut worst_se = 0.0f64;
    for i in 0..r.price.len() {
        let row: Vec<String> = r.x.row(i).iter().map(f64::to_string).collect();
        let se = r.se.as_ref().map(|s| s[i]);
        let err = pred[[i, 0]] - r.price[i];
        sq += err * err;
        if let Some(se) = se.filter(|&s| s > 0.0) {
            worst_se = worst_se.max(err.abs() / se);
        }
        let se_text = se.map_or(String::new(), |s| format!("{s:e}"));
        writeln!(w, "{},{:e},{se_text},{:e},{err:e}", row.join(","), r.price[i], pred[[i, 0]])?;
    }
    w.flush()?;
    Ok(((sq / r.price.len().max(1) as f64).sqrt(), worst_se))
}

pub fn run(common: &Common, o: &Overrides) -> Result<(), CliError> {
    let (cfg, base) = load_config(common)?;
    let streams = SeedStreams::derive(cfg.seed);
    std::fs::create_dir_all(&cfg.output)?;
    let mut outputs = vec!["surrogate.pdmlnet", "loss_history.csv"];
    let samples = match &o.data {
        Some(p) => data::read_samples(p)?,
        None => {
            let s = generate(&cfg, &base, &streams)?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(cfg.output.join("training_data.csv"))?);
            data::write_samples(&s, &mut w)?;
            w.flush()?;
            outputs.push("training_data.csv");
            s
        }
    };
    let tc = TrainConfig {
        seed: streams.training,
        ..train_config(&cfg.train, o, samples.data.n_out(), samples.data.n_in())
    };
    let surrogate = match surrogate::train(&samples.data, &tc) {
        Ok(s) => s,
        Err(TrainError::Diverged { epoch, batch, last }) => {
            write_history(&cfg.output.join("loss_history.csv"), &last)?;
            return Err(CliError::Numeric(format!(
                "training diverged in epoch {epoch}, batch {batch}; partial loss history written"
            )));
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(cfg.output.join("surrogate.pdmlnet"))?);
    surrogate::save(&surrogate, &mut w)?;
    w.flush()?;
    write_history(&cfg.output.join("loss_history.csv"), &surrogate)?;
    if let Some(l) = surrogate.meta.loss_history.last() {
        println!("trained on {} samples, final loss {l:.4e}", samples.data.len());
    }
    if let Some(p) = &o.reference {
        let r = data::read_reference(p, &samples.inputs)?;
        let (rmse, worst) = write_comparison(&cfg.output.join("comparison.csv"), &surrogate, &samples.inputs, &r)?;
        println!("reference rmse {rmse:.4e}, worst {worst:.2} standard errors");
        outputs.push("comparison.csv");
    }

    let mut overrides = BTreeMap::new();
    if let Some(l) = o.loss {
        overrides.insert("loss", format!("{l:?}").to_lowercase());
    }
    if let Some(l) = o.lambda {
        overrides.insert("lambda", l.to_string());
    }
    if let Some(e) = o.epochs {
        overrides.insert("epochs", e.to_string());
    }
    if let Some(p) = &o.data {
        overrides.insert("data", format!("sha256:{}", manifest::sha256_file(p)?));
    }
    if let Some(p) = &o.reference {
        overrides.insert("reference", format!("sha256:{}", manifest::sha256_file(p)?));
    }
    manifest::write(&cfg, "train", vec![cfg.seed], overrides, &outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_overrides() {
        let base = TrainConfig::default();
        let o = Overrides {
            loss: Some(LossArg::Pdml),
            lambda: Some(0.0),
            ..Default::default()
        };
        let t = train_config(&base, &o, 1, 3);
        assert_eq!(
            t.loss,
            LossKind::Pdml {
                pairs: vec![(0, 0), (0, 1), (0, 2)]
            }
        );
        assert_eq!(t.lambda, Some(vec![0.0; 3]));
        let t = train_config(
            &base,
            &Overrides {
                loss: Some(LossArg::Vml),
                epochs: Some(7),
                ..Default::default()
            },
            1,
            3,
        );
        assert_eq!((t.loss, t.epochs, t.lambda), (LossKind::Vml, 7, None));
        let pdml = TrainConfig {
            loss: LossKind::Pdml { pairs: vec![(0, 1)] },
            ..base
        };
        let t = train_config(
            &pdml,
            &Overrides {
                loss: Some(LossArg::Pdml),
                lambda: Some(2.0),
                ..Default::default()
            },
            1,
            3,
        );
        assert_eq!(t.lambda, Some(vec![2.0]));
    }
}
