//! One-factor Cheyette model with benchmark-rate volatility and CIR
//! stochastic variance: curves, two-curve caplet coefficients, the pricing
//! script, and a closed form for the deterministic-volatility case.

use std::collections::BTreeSet;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::script::{self, ValidatedScript};
use crate::sim::{Binding, Bindings};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheyetteError {
    #[error("invalid curve: {0}")]
    Curve(String),
    #[error("time {t} is beyond the last curve pillar {last}")]
    BeyondCurve { t: f64, last: f64 },
    #[error("invalid caplet: {0}")]
    Caplet(String),
    #[error("invalid model parameters: {0}")]
    Params(String),
    #[error("closed form needs a = 0 and eta = 0")]
    NotDeterministic,
}

/// `e^{-κδ}`
pub fn h(delta: f64, kappa: f64) -> f64 {
    (-kappa * delta).exp()
}

/// `(1 - e^{-κδ}) / κ`, equal to `δ` at `κ = 0`.
pub fn g(delta: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        delta
    } else {
        -(-kappa * delta).exp_m1() / kappa
    }
}

/// Discount curve with log-linear interpolation of discount factors.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    times: Vec<f64>,
    log_dfs: Vec<f64>,
}

impl Curve {
    /// Pillars `(time, df)`; a `(0, 1)` pillar is prepended when missing.
    pub fn new(pillars: &[(f64, f64)]) -> Result<Curve, CheyetteError> {
        let mut pts = pillars.to_vec();
        if pts.first().map_or(true, |p| p.0 > 0.0) {
            pts.insert(0, (0.0, 1.0));
        }
        if pts[0] != (0.0, 1.0) {
            return Err(CheyetteError::Curve("discount factor at time 0 must be 1".into()));
        }
        if pts.len() < 2 {
            return Err(CheyetteError::Curve("need at least one pillar after time 0".into()));
        }
        if pts.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(CheyetteError::Curve("pillar times must be strictly increasing".into()));
        }
        if pts.iter().any(|p| !(p.1 > 0.0 && p.1.is_finite())) {
            return Err(CheyetteError::Curve("discount factors must be positive".into()));
        }
        Ok(Curve {
            times: pts.iter().map(|p| p.0).collect(),
            log_dfs: pts.iter().map(|p| p.1.ln()).collect(),
        })
    }

    /// Flat continuously compounded `rate` out to `horizon`.
    pub fn flat(rate: f64, horizon: f64) -> Curve {
        Curve::new(&[(horizon, (-rate * horizon).exp())]).expect("valid flat curve")
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn pillar_times(&self) -> &[f64] {
        &self.times
    }

    fn segment(&self, t: f64) -> Result<usize, CheyetteError> {
        if !(0.0..=self.last_time() * (1.0 + 1e-12)).contains(&t) {
            return Err(CheyetteError::BeyondCurve { t, last: self.last_time() });
        }
        Ok(self.times.partition_point(|&p| p <= t).clamp(1, self.times.len() - 1) - 1)
    }

    /// `P(0, t)`
    pub fn df(&self, t: f64) -> Result<f64, CheyetteError> {
        let i = self.segment(t)?;
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        Ok((self.log_dfs[i] + w * (self.log_dfs[i + 1] - self.log_dfs[i])).exp())
    }

    /// Instantaneous forward `f(0, t)`, constant between pillars and
    /// right-continuous at them.
    pub fn forward(&self, t: f64) -> Result<f64, CheyetteError> {
        let i = self.segment(t)?;
        Ok(-(self.log_dfs[i + 1] - self.log_dfs[i]) / (self.times[i + 1] - self.times[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub discount: Curve,
    pub forecast: Curve,
}

impl CurveSet {
    /// Flat 2% discount and 2.2% forecast curves.
    pub fn desk_default(horizon: f64) -> CurveSet {
        CurveSet {
            discount: Curve::flat(0.02, horizon),
            forecast: Curve::flat(0.022, horizon),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheyetteParams {
    pub kappa: f64,
    /// Mean reversion of the stochastic variance.
    pub theta: f64,
    /// Volatility of variance.
    pub eta: f64,
    /// Local volatility `a·f(t, t+δ) + b`.
    pub a: f64,
    pub b: f64,
    /// Benchmark tenor.
    pub delta: f64,
}

impl CheyetteParams {
    pub fn validate(&self) -> Result<(), CheyetteError> {
        let bad = |m: &str| Err(CheyetteError::Params(m.to_string()));
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if !(self.eta >= 0.0 && self.theta >= 0.0) {
            return bad("eta and theta must be nonnegative");
        }
        if !(self.delta > 0.0) {
            return bad("benchmark tenor must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapletSpec {
    /// Reset time.
    pub t1: f64,
    /// Payment time.
    pub t2: f64,
    pub strike: f64,
    pub notional: f64,
}

impl CapletSpec {
    pub fn new(t1: f64, tenor: f64, strike: f64) -> CapletSpec {
        CapletSpec {
            t1,
            t2: t1 + tenor,
            strike,
            notional: 1.0,
        }
    }

    /// Accrual fraction, shared by caplet, forecast and discount conventions.
    pub fn delta(&self) -> f64 {
        self.t2 - self.t1
    }

    fn validate(&self) -> Result<(), CheyetteError> {
        if !(self.t1 > 0.0 && self.t2 > self.t1) {
            return Err(CheyetteError::Caplet("need 0 < t1 < t2".into()));
        }
        Ok(())
    }
}

/// Coefficients of the one-curve payoff `N (p_F e^{c_x x + c_y y} - K̂)⁺`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapletCoeffs {
    pub pf: f64,
    pub cx: f64,
    pub cy: f64,
    pub khat: f64,
}

pub fn khat(strike: f64, delta: f64) -> f64 {
    1.0 + strike * delta
}

pub fn caplet_coeffs(spec: &CapletSpec, curves: &CurveSet, kappa: f64) -> Result<CapletCoeffs, CheyetteError> {
    spec.validate()?;
    let pf = curves.forecast.df(spec.t1)? / curves.forecast.df(spec.t2)?;
    curves.discount.df(spec.t2)?;
    let cx = g(spec.delta(), kappa);
    Ok(CapletCoeffs {
        pf,
        cx,
        cy: 0.5 * cx * cx,
        khat: khat(spec.strike, spec.delta()),
    })
}

/// `P(t, T)` given the state `(x_t, y_t)`.
pub fn discount_factor(t: f64, maturity: f64, x: f64, y: f64, curve: &Curve, kappa: f64) -> Result<f64, CheyetteError> {
    if maturity < t {
        return Err(CheyetteError::Caplet(format!("maturity {maturity} before {t}")));
    }
    let gt = g(maturity - t, kappa);
    Ok(curve.df(maturity)? / curve.df(t)? * (-gt * x - 0.5 * gt * gt * y).exp())
}

/// Benchmark forward `f(t, t+δ)` rebuilt from the state.
pub fn benchmark_forward(t: f64, x: f64, y: f64, curve: &Curve, params: &CheyetteParams) -> Result<f64, CheyetteError> {
    let (hd, gd) = (h(params.delta, params.kappa), g(params.delta, params.kappa));
    Ok(curve.forward(t + params.delta)? + hd * (x + y * gd))
}

/// Script externals other than the strike terms.
pub const EXTERNALS: &[&str] = &[
    "mr",
    "vartheta",
    "volofvar",
    "measT",
    "hkd",
    "gkd",
    "volaterm",
    "volbterm",
    "initfwd",
    "pf",
    "cx",
    "cy",
    "fixingtime",
    "maturity",
];

/// Name of the adjusted-strike external for strike `k` of `n`.
pub fn khat_name(k: usize, n: usize) -> String {
    if n == 1 {
        "khat".to_string()
    } else {
        format!("khat{k}")
    }
}

/// Name of the payoff for strike `k` of `n`.
pub fn payoff_name(k: usize, n: usize) -> String {
    if n == 1 {
        "caplet".to_string()
    } else {
        format!("caplet{k}")
    }
}

/// The caplet script; with more than one strike the payoff section prices
/// every strike on the same paths.
pub fn caplet_script(n_strikes: usize) -> String {
    let base = script::corpus::CHEYETTE_SV_CAPLET;
    if n_strikes == 1 {
        return base.to_string();
    }
    let cut = base.find("# payoff").expect("corpus script has a payoff section");
    let mut out = base[..cut].to_string();
    out.push_str("# payoff\n");
    for k in 0..n_strikes {
        out.push_str(&format!(
            "maturity: {} pays positivepart(pf*exp(cx*ratex[fixingtime]+cy*ratey[fixingtime])-{}) nodiscount\n",
            payoff_name(k, n_strikes),
            khat_name(k, n_strikes)
        ));
    }
    out
}

pub fn externals(n_strikes: usize) -> BTreeSet<String> {
    EXTERNALS
        .iter()
        .map(|s| s.to_string())
        .chain((0..n_strikes).map(|k| khat_name(k, n_strikes)))
        .collect()
}

/// Parses and validates [`caplet_script`].
pub fn compile_caplet_script(n_strikes: usize) -> ValidatedScript {
    let ast = script::parse_source(&caplet_script(n_strikes)).expect("caplet script parses");
    script::validate(&ast, &externals(n_strikes)).expect("caplet script validates")
}

/// `f(0, t+δ)` as a function of simulation time, piecewise constant with
/// breaks where `t+δ` crosses a forecast pillar.
pub fn initfwd_binding(curve: &Curve, delta: f64, horizon: f64) -> Result<Binding, CheyetteError> {
    let breaks: Vec<f64> = curve
        .pillar_times()
        .iter()
        .map(|&p| p - delta)
        .filter(|&b| b > 0.0 && b < horizon)
        .collect();
    let mut pieces = Vec::with_capacity(breaks.len() + 1);
    for start in std::iter::once(0.0).chain(breaks.iter().copied()) {
        pieces.push(Binding::Scalar(curve.forward(start + delta)?));
    }
    Ok(if breaks.is_empty() {
        pieces.pop().unwrap()
    } else {
        Binding::Piecewise { breaks, pieces }
    })
}

/// Scalar bindings for pricing `strikes` at reset `t1` and payment
/// `t1 + tenor` under the payment-date forward measure.
pub fn caplet_bindings(
    params: &CheyetteParams,
    t1: f64,
    tenor: f64,
    strikes: &[f64],
    curves: &CurveSet,
) -> Result<Bindings, CheyetteError> {
    params.validate()?;
    let spec = CapletSpec::new(t1, tenor, strikes.first().copied().unwrap_or(0.0));
    let c = caplet_coeffs(&spec, curves, params.kappa)?;
    let mut b: Bindings = [
        ("mr", params.kappa),
        ("vartheta", params.theta),
        ("volofvar", params.eta),
        ("measT", spec.t2),
        ("hkd", h(params.delta, params.kappa)),
        ("gkd", g(params.delta, params.kappa)),
        ("volaterm", params.a),
        ("volbterm", params.b),
        ("pf", c.pf),
        ("cx", c.cx),
        ("cy", c.cy),
        ("fixingtime", t1),
        ("maturity", t1),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), Binding::Scalar(v)))
    .collect();
    b.insert("initfwd".into(), initfwd_binding(&curves.forecast, params.delta, t1)?);
    for (k, &strike) in strikes.iter().enumerate() {
        b.insert(khat_name(k, strikes.len()), Binding::Scalar(khat(strike, spec.delta())));
    }
    Ok(b)
}

/// Undiscounted caplet price when `a = 0` and `η = 0`, so that the local
/// volatility is the constant `σ = b` and the variance stays at one.
///
/// Under the payment-date measure `x(T₁)` is Gaussian with variance
/// `V = σ²(1 - e^{-2κT₁}) / 2κ`, which also equals the deterministic
/// `y(T₁)`, and mean `A - B` with
/// `A = σ²(1 - e^{-κT₁})² / 2κ²` from the `y` drift and
/// `B = σ²/κ [(1 - e^{-κT₁})/κ - (e^{-κ(T₂-T₁)} - e^{-κ(T₂+T₁)}) / 2κ]`
/// from the measure change. The payoff is then a Black call on
/// `p_F e^{X}` with `X ~ N(c_x (A - B) + c_y V, c_x² V)`.
pub fn deterministic_vol_caplet_oracle(params: &CheyetteParams, spec: &CapletSpec, curves: &CurveSet) -> Result<f64, CheyetteError> {
    if params.a != 0.0 || params.eta != 0.0 {
        return Err(CheyetteError::NotDeterministic);
    }
    params.validate()?;
    let c = caplet_coeffs(spec, curves, params.kappa)?;
    let (k, s2, t, t2) = (params.kappa, params.b * params.b, spec.t1, spec.t2);
    let v = s2 * -(-2.0 * k * t).exp_m1() / (2.0 * k);
    let one_minus = -(-k * t).exp_m1();
    let a = s2 * one_minus * one_minus / (2.0 * k * k);
    let bterm = s2 / k * (one_minus / k - ((-k * (t2 - t)).exp() - (-k * (t2 + t)).exp()) / (2.0 * k));
    let mu = c.cx * (a - bterm) + c.cy * v;
    let sd = c.cx * v.sqrt();
    let fwd = c.pf * (mu + 0.5 * sd * sd).exp();
    let price = if sd == 0.0 {
        (fwd - c.khat).max(0.0)
    } else {
        let n = Normal::new(0.0, 1.0).unwrap();
        let d1 = ((fwd / c.khat).ln() + 0.5 * sd * sd) / sd;
        fwd * n.cdf(d1) - c.khat * n.cdf(d1 - sd)
    };
    Ok(spec.notional * price)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, GridSpec, SimConfig};

    fn params(a: f64, b: f64, eta: f64) -> CheyetteParams {
        CheyetteParams {
            kappa: 0.03,
            theta: 0.2,
            eta,
            a,
            b,
            delta: 0.25,
        }
    }

    #[test]
    fn h_and_g_values() {
        assert!((h(0.25, 0.03) - 0.99252805).abs() < 5e-9);
        assert!((g(0.25, 0.03) - 0.24906484).abs() < 5e-9);
        assert_eq!(g(0.25, 0.0), 0.25);
        assert!((g(0.25, 1e-12) - 0.25).abs() < 1e-12);
        assert_eq!((h(0.0, 0.03), g(0.0, 0.03)), (1.0, 0.0));
    }

    #[test]
    fn caplet_coefficients() {
        let curves = CurveSet {
            discount: Curve::flat(0.02, 10.0),
            forecast: Curve::flat(0.02, 10.0),
        };
        let c = caplet_coeffs(&CapletSpec::new(1.0, 0.25, 0.02), &curves, 0.03).unwrap();
        assert!((c.khat - 1.005).abs() < 1e-15);
        assert!((c.pf - 1.00501252).abs() < 5e-9);
        assert!((c.cx - 0.24906484).abs() < 5e-9);
        assert!((c.cy - 0.03101665).abs() < 5e-9);
        assert!(matches!(
            caplet_coeffs(&CapletSpec::new(9.9, 0.25, 0.02), &curves, 0.03),
            Err(CheyetteError::BeyondCurve { .. })
        ));
    }

    #[test]
    fn curve_interpolation() {
        let c = Curve::new(&[(1.0, 0.98), (2.0, 0.95)]).unwrap();
        assert_eq!(c.df(0.0).unwrap(), 1.0);
        assert!((c.df(1.5).unwrap() - (0.98f64 * 0.95).sqrt()).abs() < 1e-15);
        assert!((c.forward(1.2).unwrap() - (0.98f64 / 0.95).ln()).abs() < 1e-15);
        assert!((c.forward(0.3).unwrap() + 0.98f64.ln()).abs() < 1e-15);
        assert!(Curve::new(&[(1.0, 0.9), (1.0, 0.8)]).is_err());
        assert!(Curve::new(&[(1.0, -0.9)]).is_err());
        assert!(Curve::new(&[(0.0, 0.9), (1.0, 0.8)]).is_err());
    }

    #[test]
    fn discount_factor_identities() {
        let c = Curve::new(&[(1.0, 0.98), (3.0, 0.93)]).unwrap();
        let ratio = c.df(2.5).unwrap() / c.df(0.5).unwrap();
        assert_eq!(discount_factor(0.5, 2.5, 0.0, 0.0, &c, 0.03).unwrap(), ratio);
        assert_eq!(discount_factor(1.7, 1.7, 0.01, 0.002, &c, 0.03).unwrap(), 1.0);
        assert_eq!(discount_factor(0.0, 2.0, 0.0, 0.0, &c, 0.03).unwrap(), c.df(2.0).unwrap());
    }

    #[test]
    fn forward_reconstruction_at_time_zero() {
        let c = Curve::new(&[(0.1, 0.999), (1.0, 0.98), (3.0, 0.93)]).unwrap();
        let p = params(-0.15873, 0.00788, 0.54224);
        assert_eq!(benchmark_forward(0.0, 0.0, 0.0, &c, &p).unwrap(), c.forward(0.25).unwrap());
    }

    #[test]
    fn initfwd_breaks_follow_pillars() {
        let c = Curve::new(&[(0.5, 0.99), (1.0, 0.98), (3.0, 0.93)]).unwrap();
        match initfwd_binding(&c, 0.25, 2.0).unwrap() {
            Binding::Piecewise { breaks, pieces } => {
                assert_eq!(breaks, vec![0.25, 0.75]);
                assert_eq!(pieces[0], Binding::Scalar(c.forward(0.25).unwrap()));
                assert_eq!(pieces[2], Binding::Scalar(c.forward(1.0).unwrap()));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            initfwd_binding(&Curve::flat(0.02, 5.0), 0.25, 1.0).unwrap(),
            Binding::Scalar(_)
        ));
    }

    #[test]
    fn emitted_script_matches_reference_payoff() {
        let s = compile_caplet_script(1);
        let payoff = script::pretty::expr_to_string(&s.ast.payoffs[0].payoff);
        assert_eq!(
            payoff.replace(' ', ""),
            "positivepart(pf*exp(cx*ratex[fixingtime]+cy*ratey[fixingtime])-khat)"
        );
        let multi = compile_caplet_script(3);
        assert_eq!(multi.ast.payoffs.len(), 3);
        assert_eq!(multi.ast.payoffs[2].name, "caplet2");
    }

    fn run(p: &CheyetteParams, t1: f64, strikes: &[f64], paths: usize, seed: u64) -> crate::sim::SimOutput {
        let s = compile_caplet_script(strikes.len());
        let b = caplet_bindings(p, t1, 0.25, strikes, &CurveSet::desk_default(10.0)).unwrap();
        let cfg = SimConfig {
            batch_size: paths,
            seed,
            grid: GridSpec::StepsPerYear(64.0),
            ..SimConfig::default()
        };
        simulate(&s, &b, &cfg).unwrap()
    }

    #[test]
    fn zero_vol_of_var_freezes_variance() {
        let text = caplet_script(1) + "0.5: v1 pays ratevariance nodiscount\nmaturity: v2 pays ratevariance nodiscount\n";
        let ast = script::parse_source(&text).unwrap();
        let s = script::validate(&ast, &externals(1)).unwrap();
        let b = caplet_bindings(&params(-0.15873, 0.00788, 0.0), 1.0, 0.25, &[0.02], &CurveSet::desk_default(5.0)).unwrap();
        let cfg = SimConfig {
            batch_size: 500,
            grid: GridSpec::StepsPerYear(16.0),
            ..SimConfig::default()
        };
        let out = simulate(&s, &b, &cfg).unwrap();
        for name in ["v1", "v2"] {
            let p = out.payoff_index(name).unwrap();
            assert!(out.y_column(p).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn oracle_zero_vol_is_intrinsic() {
        let curves = CurveSet::desk_default(5.0);
        for strike in [0.01, 0.022, 0.04] {
            let spec = CapletSpec::new(1.0, 0.25, strike);
            let c = caplet_coeffs(&spec, &curves, 0.03).unwrap();
            let price = deterministic_vol_caplet_oracle(&params(0.0, 0.0, 0.0), &spec, &curves).unwrap();
            assert_eq!(price, (c.pf - c.khat).max(0.0));
        }
        assert_eq!(
            deterministic_vol_caplet_oracle(&params(0.1, 0.01, 0.0), &CapletSpec::new(1.0, 0.25, 0.02), &curves),
            Err(CheyetteError::NotDeterministic)
        );
    }

    #[test]
    fn oracle_increases_with_vol() {
        let curves = CurveSet::desk_default(5.0);
        let spec = CapletSpec::new(2.0, 0.25, 0.025);
        let prices: Vec<f64> = (0..20)
            .map(|i| deterministic_vol_caplet_oracle(&params(0.0, 0.001 * (i + 1) as f64, 0.0), &spec, &curves).unwrap())
            .collect();
        assert!(prices.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn oracle_forward_is_martingale() {
        // At zero strike the price is E[p_F e^X], which must equal p_F.
        let curves = CurveSet::desk_default(5.0);
        let spec = CapletSpec {
            strike: -4.0,
            ..CapletSpec::new(1.5, 0.25, 0.0)
        };
        let p = params(0.0, 0.012, 0.0);
        let c = caplet_coeffs(&spec, &curves, p.kappa).unwrap();
        let price = deterministic_vol_caplet_oracle(&p, &spec, &curves).unwrap();
        assert!((price - (c.pf - c.khat)).abs() < 1e-14);
    }

    #[test]
    fn monte_carlo_matches_oracle() {
        let p = params(0.0, 0.00788, 0.0);
        let strikes = [0.015, 0.022, 0.03];
        let out = run(&p, 1.0, &strikes, 1 << 16, 11);
        let curves = CurveSet::desk_default(10.0);
        for (k, &strike) in strikes.iter().enumerate() {
            let (mc, se) = out.price(k);
            let exact = deterministic_vol_caplet_oracle(&p, &CapletSpec::new(1.0, 0.25, strike), &curves).unwrap();
            assert!((mc - exact).abs() < 3.0 * se, "K={strike}: {mc} vs {exact} (se {se})");
        }
    }

    #[test]
    fn prices_monotone_and_bounded_in_strike() {
        let p = params(-0.15873, 0.00788, 0.54224);
        let strikes: Vec<f64> = (0..7).map(|i| 0.01 + 0.005 * i as f64).chain([-1.0 / 0.25]).collect();
        let out = run(&p, 1.0, &strikes, 4096, 12);
        let prices: Vec<f64> = (0..strikes.len()).map(|k| out.price(k).0).collect();
        assert!(prices[..7].windows(2).all(|w| w[1] <= w[0]));
        // Strike -4 gives K̂ = 0, so that payoff is the forward value itself.
        let forward = prices[7];
        assert!(prices[..7].iter().all(|&v| (0.0..=forward).contains(&v)));
    }
}
