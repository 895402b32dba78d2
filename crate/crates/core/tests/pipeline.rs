//! End-to-end paths through the library: script to simulation to surrogate.

use std::collections::BTreeSet;

use ndarray::{Array2, Array3};
use pdml_core::cheyette::{self, CheyetteParams, CurveSet};
use pdml_core::sampling::{sample_uniform, ParamDomain, ParamRange};
use pdml_core::script::{self, corpus};
use pdml_core::sim::{self, Binding, Bindings, GridSpec, SimConfig};
use pdml_core::surrogate::{self, LossKind, TrainConfig, TrainingData};
use statrs::distribution::{ContinuousCDF, Normal};

fn scalars(pairs: &[(&str, f64)]) -> Bindings {
    pairs.iter().map(|(k, v)| (k.to_string(), Binding::Scalar(*v))).collect()
}

fn heston_bindings() -> Bindings {
    scalars(&[
        ("shortrate", 0.02),
        ("kappa", 1.5),
        ("longtermvariance", 0.04),
        ("volofvol", 0.5),
        ("rho", -0.7),
        ("initiallogspot", 100f64.ln()),
        ("initialspot", 100.0),
        ("initialvariance", 0.04),
        ("maturity", 1.0),
        ("strike", 100.0),
        ("asianstrike", 100.0),
        ("barrier", 130.0),
    ])
}

#[test]
fn corpus_scripts_pretty_print_stably_and_simulate() {
    let curves = CurveSet::desk_default(10.0);
    let model = CheyetteParams {
        kappa: 0.03,
        theta: 0.2,
        eta: 0.54224,
        a: -0.15873,
        b: 0.00788,
        delta: 0.25,
    };
    for (name, src) in corpus::ALL {
        let ast = script::parse_source(src).unwrap();
        let printed = script::pretty_print(&ast);
        let again = script::parse_source(&printed).unwrap_or_else(|d| panic!("{name}: {d}\n{printed}"));
        assert_eq!(script::pretty_print(&again), printed, "{name}");

        let mut bindings = if *name == "cheyette_sv_caplet" {
            cheyette::caplet_bindings(&model, 1.0, 0.25, &[0.022], &curves).unwrap()
        } else {
            heston_bindings()
        };
        let used = script::validate::free_symbols(&ast);
        bindings.retain(|k, _| used.contains_key(k));
        let externals: BTreeSet<String> = bindings.keys().cloned().collect();
        let validated = script::validate(&ast, &externals).unwrap_or_else(|d| panic!("{name}: {d:?}"));
        let cfg = SimConfig {
            batch_size: 512,
            seed: 1,
            grid: GridSpec::StepsPerYear(16.0),
            ..SimConfig::default()
        };
        let out = sim::simulate(&validated, &bindings, &cfg).unwrap();
        assert!(out.n_payoffs() >= 1);
        for p in 0..out.n_payoffs() {
            let (price, se) = out.price(p);
            assert!(price.is_finite() && price >= 0.0 && se.is_finite(), "{name} payoff {p}");
        }
    }
}

/// Black–Scholes call with the left-point average of the Euler-stepped
/// mean-reverting variance, which is what the scheme integrates.
fn bs_with_reverting_variance(s0: f64, k: f64, r: f64, v0: f64, theta: f64, kappa: f64, t: f64, steps: usize) -> f64 {
    let dt = t / steps as f64;
    let mut v = v0;
    let mut sum = 0.0;
    for _ in 0..steps {
        sum += v;
        v += kappa * (theta - v) * dt;
    }
    let avg = sum / steps as f64;
    let sd = (avg * t).sqrt();
    let n = Normal::new(0.0, 1.0).unwrap();
    let d1 = ((s0 / k).ln() + r * t + 0.5 * sd * sd) / sd;
    s0 * n.cdf(d1) - k * (-r * t).exp() * n.cdf(d1 - sd)
}

#[test]
fn parametric_heston_surrogate_learns_the_pricing_function() {
    // Zero vol-of-vol keeps the variance deterministic, so prices are closed form.
    let ext = [
        "shortrate",
        "kappa",
        "longtermvariance",
        "volofvol",
        "rho",
        "initiallogspot",
        "initialvariance",
        "strike",
        "maturity",
    ];
    let ast = script::parse_source(corpus::HESTON_LOG_EULER).unwrap();
    let s = script::validate(&ast, &ext.iter().map(|e| e.to_string()).collect()).unwrap();
    let domain = ParamDomain::new(vec![
        ParamRange::uniform("strike", 80.0, 120.0),
        ParamRange::uniform("initialvariance", 0.01, 0.09),
    ])
    .unwrap();
    let n = 32768;
    let x = sample_uniform(&domain, n, 3);
    let mut b = heston_bindings();
    b.insert("volofvol".into(), Binding::Scalar(0.0));
    b.insert("strike".into(), Binding::PerPath(x.column(0).to_vec()));
    b.insert("initialvariance".into(), Binding::PerPath(x.column(1).to_vec()));
    let cfg = SimConfig {
        batch_size: n,
        seed: 4,
        grid: GridSpec::StepsPerYear(32.0),
        diff_wrt: vec!["strike".into(), "initialvariance".into()],
        ..SimConfig::default()
    };
    let out = sim::simulate(&s, &b, &cfg).unwrap();
    let data = TrainingData {
        x: x.clone(),
        y: Array2::from_shape_vec((n, 1), out.y.clone()).unwrap(),
        dy: Some(Array3::from_shape_vec((n, 1, 2), out.dy.clone()).unwrap()),
    };
    let tc = TrainConfig {
        hidden: vec![32, 32],
        loss: LossKind::Dml,
        learning_rate: 1e-2,
        epochs: 30,
        seed: 5,
        ..TrainConfig::default()
    };
    let net = surrogate::train(&data, &tc).unwrap();

    let probes = sample_uniform(&domain, 64, 6);
    let pred = net.predict(probes.view());
    let mut sq = 0.0;
    for i in 0..64 {
        let exact = bs_with_reverting_variance(100.0, probes[[i, 0]], 0.02, probes[[i, 1]], 0.04, 1.5, 1.0, 32);
        sq += (pred[[i, 0]] - exact).powi(2);
    }
    // Single-path labels have a spread near 10; a smooth fit on 32768 of them
    // leaves an error of order 0.1 to 0.2.
    let rmse = (sq / 64.0).sqrt();
    assert!(rmse < 0.25, "rmse {rmse}");
}

#[test]
fn surrogate_survives_save_and_load() {
    let x = Array2::from_shape_fn((256, 2), |(i, j)| ((i * 7 + j * 3) % 17) as f64 / 17.0);
    let y = Array2::from_shape_fn((256, 1), |(i, _)| x[[i, 0]] * x[[i, 0]] + x[[i, 1]]);
    let dy = Array3::from_shape_fn((256, 1, 2), |(i, _, j)| if j == 0 { 2.0 * x[[i, 0]] } else { 1.0 });
    let data = TrainingData {
        x: x.clone(),
        y,
        dy: Some(dy),
    };
    let tc = TrainConfig {
        hidden: vec![8],
        loss: LossKind::Pdml { pairs: vec![(0, 0)] },
        epochs: 3,
        ..TrainConfig::default()
    };
    let net = surrogate::train(&data, &tc).unwrap();
    let mut buf = Vec::new();
    surrogate::save(&net, &mut buf).unwrap();
    let back = surrogate::load(&mut buf.as_slice()).unwrap();
    assert_eq!(back, net);
    assert_eq!(back.predict(x.view()), net.predict(x.view()));
    assert!(surrogate::load(&mut &buf[..buf.len() - 1]).is_err());
}
