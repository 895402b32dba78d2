use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use pdml_core::cheyette;
use pdml_core::script::{self, ValidatedScript};
use pdml_core::sim::{self, Bindings, SimConfig, SimError};

use crate::config::EngineConfig;
use crate::{load_config, manifest, CliError, Common};

/// A validated script with its configured bindings.
pub struct Model {
    pub script: ValidatedScript,
    pub bindings: Bindings,
    pub cheyette: bool,
}

pub fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::NonFinite { .. } | SimError::NonFinitePayoff { .. } | SimError::Cholesky { .. } | SimError::NotPositiveDefinite => {
            CliError::Numeric(e.to_string())
        }
        _ => CliError::Validation(e.to_string()),
    }
}

/// Parses and validates the configured script. `extra` names symbols the
/// caller binds itself (sampled parameters), in addition to `[bindings]`.
pub fn load_model(cfg: &EngineConfig, base: &Path, extra: &[String]) -> Result<Model, CliError> {
    let (source, is_cheyette) = cfg.script_source(base)?;
    if is_cheyette {
        let c = cfg.cheyette.clone().unwrap_or_default();
        let curves = c.curves(base, c.t1 + c.tenor + 1.0)?;
        let mut bindings =
            cheyette::caplet_bindings(&c.params(), c.t1, c.tenor, &[c.strike], &curves).map_err(|e| CliError::Validation(e.to_string()))?;
        for (k, v) in &cfg.bindings {
            if !cheyette::EXTERNALS.contains(&k.as_str()) {
                return Err(CliError::Validation(format!(
                    "`{k}` is not a parameter of the Cheyette caplet script"
                )));
            }
            bindings.insert(k.clone(), v.to_binding());
        }
        return Ok(Model {
            script: cheyette::compile_caplet_script(1),
            bindings,
            cheyette: true,
        });
    }
    let file = cfg
        .model
        .script
        .as_ref()
        .map_or_else(|| cfg.model.builtin.clone().unwrap_or_default(), |p| p.display().to_string());
    let ast = script::parse_source(&source).map_err(|d| CliError::Validation(d.render(&file)))?;
    let externals: BTreeSet<String> = cfg.bindings.keys().cloned().chain(extra.iter().cloned()).collect();
    let script = script::validate(&ast, &externals)
        .map_err(|ds| CliError::Validation(ds.iter().map(|d| d.render(&file)).collect::<Vec<_>>().join("\n")))?;
    Ok(Model {
        script,
        bindings: cfg.bindings.iter().map(|(k, v)| (k.clone(), v.to_binding())).collect(),
        cheyette: false,
    })
}

pub fn run(common: &Common, batch: Option<usize>) -> Result<(), CliError> {
    let (mut cfg, base) = load_config(common)?;
    if let Some(b) = batch {
        cfg.sim.batch_size = b;
    }
    if cfg.sim.batch_size == 0 {
        return Err(CliError::Config("batch size must be at least 1".into()));
    }
    let model = load_model(&cfg, &base, &[])?;
    let sc = SimConfig {
        batch_size: cfg.sim.batch_size,
        seed: cfg.seed,
        grid: cfg.sim.grid.clone(),
        diff_wrt: cfg.sim.diff_wrt.clone(),
        chunk_size: cfg.sim.chunk_size,
    };
    let out = sim::simulate(&model.script, &model.bindings, &sc).map_err(sim_error)?;

    std::fs::create_dir_all(&cfg.output)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(cfg.output.join("sim.csv"))?);
    out.write_csv(&mut w)?;
    w.flush()?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(cfg.output.join("sim.bin"))?);
    out.write_binary(&mut w)?;
    w.flush()?;

    let mut w = std::io::BufWriter::new(std::fs::File::create(cfg.output.join("prices.csv"))?);
    write!(w, "payoff,price,se")?;
    for d in &out.diff_wrt {
        write!(w, ",d_{d},d_{d}_se")?;
    }
    writeln!(w)?;
    for (p, name) in out.payoff_names.iter().enumerate() {
        let (price, se) = out.price(p);
        write!(w, "{name},{price:e},{se:e}")?;
        for j in 0..out.n_params() {
            let (d, dse) = out.dy_mean(p, j);
            write!(w, ",{d:e},{dse:e}")?;
        }
        writeln!(w)?;
        println!("{name}: {price:.8} ± {se:.2e} ({} paths)", out.n_paths);
    }
    w.flush()?;

    let mut overrides = BTreeMap::new();
    if let Some(b) = batch {
        overrides.insert("batch", b.to_string());
    }
    manifest::write(&cfg, "simulate", vec![cfg.seed], overrides, &["sim.csv", "sim.bin", "prices.csv"])
}
