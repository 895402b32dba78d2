//! CSV reports of a calibration run.

use std::io::{self, Write};

use super::pipeline::CalibResult;

/// Per-seed metrics with one row per (maturity, metric) and one column per
/// seed, followed by the selected result.
pub fn write_metrics_csv(r: &CalibResult, w: &mut impl Write) -> io::Result<()> {
    write!(w, "maturity,metric")?;
    for s in &r.seeds {
        write!(w, ",seed:{s}")?;
    }
    writeln!(w, ",chosen")?;
    for iv in &r.intervals {
        for (name, pick) in [("pdml_fit_error", 0usize), ("model_error", 1), ("max_error", 2)] {
            let value = |m: &super::Metrics| [m.pdml_fit_error, m.model_error, m.max_error][pick];
            write!(w, "{},{name}", iv.t1)?;
            for run in &iv.runs {
                match &run.result {
                    Ok(s) => write!(w, ",{:e}", value(&s.fit.metrics))?,
                    Err(_) => write!(w, ",")?,
                }
            }
            writeln!(w, ",{:e}", value(&iv.chosen.metrics))?;
        }
    }
    Ok(())
}

/// Selected `(a, b, η)` per interval and the seeds behind them.
pub fn write_params_csv(r: &CalibResult, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "maturity,a,b,eta,members,objective,underdetermined")?;
    for iv in &r.intervals {
        let [a, b, eta] = iv.chosen.theta;
        let members: Vec<String> = iv.members.iter().map(u64::to_string).collect();
        writeln!(
            w,
            "{},{a},{b},{eta},{},{:e},{}",
            iv.t1,
            members.join(" "),
            iv.chosen.objective,
            iv.chosen.underdetermined
        )?;
    }
    Ok(())
}

/// Surrogate and MC prices of the selected parameters next to the targets.
pub fn write_prices_csv(r: &CalibResult, targets: &[super::CalibTargets], w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "maturity,strike,target,target_se,surrogate,mc,mc_se")?;
    for (iv, t) in r.intervals.iter().zip(targets) {
        for k in 0..t.len() {
            let se = t.std_errors.as_ref().map_or(String::new(), |s| s[k].to_string());
            let (mc, mc_se) = iv.chosen.mc[k];
            writeln!(
                w,
                "{},{},{},{se},{},{mc},{mc_se}",
                iv.t1, t.strikes[k], t.prices[k], iv.chosen.surrogate_prices[k]
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{Fit, IntervalResult, Metrics, SeedRun};

    fn fit(e: f64) -> Fit {
        Fit {
            theta: [-0.1, 0.01, 0.5],
            objective: e,
            trace: vec![e],
            surrogate_prices: vec![1e-3],
            mc: vec![(1.1e-3, 1e-6)],
            metrics: Metrics {
                pdml_fit_error: e,
                model_error: 2.0 * e,
                max_error: 2.0 * e,
            },
            underdetermined: true,
        }
    }

    #[test]
    fn metrics_table_layout() {
        let r = CalibResult {
            seeds: vec![3, 4],
            intervals: vec![IntervalResult {
                t1: 1.0,
                runs: vec![
                    SeedRun {
                        seed: 3,
                        result: Err("diverged".into()),
                    },
                    SeedRun {
                        seed: 4,
                        result: Err("diverged".into()),
                    },
                ],
                chosen: fit(1e-11),
                members: vec![4],
            }],
            failure: None,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "maturity,metric,seed:3,seed:4,chosen");
        assert_eq!(lines[1], "1,pdml_fit_error,,,1e-11");
        assert_eq!(lines[3], "1,max_error,,,2e-11");
        assert_eq!(lines.len(), 4);

        let mut buf = Vec::new();
        write_params_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "1,-0.1,0.01,0.5,4,1e-11,true");
    }
}
