use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use pdml_core::calib::{self, CalibError, CapletProblem, Robust};

use crate::config::RobustMode;
use crate::{data, load_config, manifest, CliError, Common};

fn calib_error(e: CalibError) -> CliError {
    match e {
        CalibError::Config(_) | CalibError::Targets(_) => CliError::Config(e.to_string()),
        CalibError::Model(_) | CalibError::Sampling(_) => CliError::Validation(e.to_string()),
        _ => CliError::Numeric(e.to_string()),
    }
}

fn write_file(path: PathBuf, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn run(
    common: &Common,
    targets: Option<PathBuf>,
    robust: Option<RobustMode>,
    seeds: Option<Vec<u64>>,
    ensemble_size: Option<usize>,
) -> Result<(), CliError> {
    let (mut cfg, base) = load_config(common)?;
    if !cfg.script_source(&base)?.1 {
        return Err(CliError::Config("calibration needs model.builtin = \"cheyette_sv_caplet\"".into()));
    }
    let targets_path = match targets {
        Some(p) => p,
        None => base.join(
            cfg.calib
                .targets
                .as_ref()
                .ok_or_else(|| CliError::Config("no targets file (--targets or calib.targets)".into()))?,
        ),
    };
    if let Some(r) = robust {
        cfg.calib.robust = r;
    }
    if let Some(s) = seeds {
        cfg.calib.seeds = s;
    }
    if let Some(m) = ensemble_size {
        cfg.calib.ensemble_size = m;
    }
    if cfg.calib.seeds.is_empty() {
        cfg.calib.seeds = vec![cfg.seed];
    }
    let mode = match cfg.calib.robust {
        RobustMode::None if cfg.calib.seeds.len() > 1 => {
            return Err(CliError::Config("several seeds need --robust best-seed or ensemble".into()))
        }
        RobustMode::None | RobustMode::BestSeed => Robust::BestSeed,
        RobustMode::Ensemble => Robust::Ensemble(cfg.calib.ensemble_size),
    };
    let targets = data::read_targets(&targets_path)?;

    let c = cfg.cheyette.clone().unwrap_or_default();
    let horizon = targets.last().map_or(c.t1, |t| t.t1) + c.tenor + 1.0;
    let mut problem = CapletProblem::new(c.params(), c.curves(&base, horizon)?);
    problem.tenor = c.tenor;
    problem.strike = c.strike;
    problem.grid = cfg.sim.grid.clone();
    problem.chunk_size = cfg.sim.chunk_size;

    let result = calib::robust_calibrate(&problem, &targets, &cfg.calib.config, &cfg.calib.seeds, mode).map_err(calib_error)?;

    std::fs::create_dir_all(&cfg.output)?;
    write_file(cfg.output.join("metrics.csv"), |w| calib::write_metrics_csv(&result, w))?;
    write_file(cfg.output.join("params.csv"), |w| calib::write_params_csv(&result, w))?;
    write_file(cfg.output.join("prices.csv"), |w| calib::write_prices_csv(&result, &targets, w))?;
    for iv in &result.intervals {
        let [a, b, eta] = iv.chosen.theta;
        println!(
            "T={}: a={a:.6} b={b:.6} eta={eta:.6} max_error={:.3e}{}",
            iv.t1,
            iv.chosen.metrics.max_error,
            if iv.chosen.underdetermined { " (underdetermined)" } else { "" }
        );
    }

    let mut overrides = BTreeMap::new();
    overrides.insert("targets", format!("sha256:{}", manifest::sha256_file(&targets_path)?));
    manifest::write(
        &cfg,
        "calibrate",
        result.seeds.clone(),
        overrides,
        &["metrics.csv", "params.csv", "prices.csv"],
    )?;
    match result.failure {
        Some(f) => Err(CliError::Numeric(format!("calibration stopped: {f}; earlier maturities written"))),
        None => Ok(()),
    }
}
