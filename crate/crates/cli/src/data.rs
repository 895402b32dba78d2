//! CSV formats for training samples, calibration targets and reference prices.
//!
//! Training samples: one row per sample with `x:<input>` columns, `y` and
//! optionally `dy:<input>`. With several outputs the value columns are
//! `y:<output>` and `dy:<output>:<input>`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use pdml_core::calib::CalibTargets;
use pdml_core::surrogate::TrainingData;

use crate::CliError;

fn cfg_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {msg}", path.display()))
}

/// Header and numeric rows of a CSV file.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| cfg_err(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| cfg_err(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| cfg_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| {
                let s = s.trim();
                if s.is_empty() {
                    Ok(f64::NAN)
                } else {
                    s.parse::<f64>()
                        .map_err(|_| cfg_err(path, format!("row {}: `{s}` is not a number", i + 2)))
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub data: TrainingData,
}

pub fn read_samples(path: &Path) -> Result<Samples, CliError> {
    let (header, rows) = read_table(path)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let inputs: Vec<String> = header.iter().filter_map(|h| h.strip_prefix("x:").map(str::to_string)).collect();
    if inputs.is_empty() {
        return Err(cfg_err(path, "no `x:<name>` columns"));
    }
    let outputs: Vec<String> = if col("y").is_some() {
        vec![String::new()]
    } else {
        header.iter().filter_map(|h| h.strip_prefix("y:").map(str::to_string)).collect()
    };
    if outputs.is_empty() {
        return Err(cfg_err(path, "no `y` column"));
    }
    let y_name = |o: &str| if o.is_empty() { "y".to_string() } else { format!("y:{o}") };
    let dy_name = |o: &str, i: &str| if o.is_empty() { format!("dy:{i}") } else { format!("dy:{o}:{i}") };
    let n = rows.len();
    let x_cols: Vec<usize> = inputs.iter().map(|i| col(&format!("x:{i}")).unwrap()).collect();
    let y_cols: Vec<usize> = outputs
        .iter()
        .map(|o| col(&y_name(o)).ok_or_else(|| cfg_err(path, format!("missing {}", y_name(o)))))
        .collect::<Result<_, _>>()?;
    let dy_cols: Vec<Vec<Option<usize>>> = outputs
        .iter()
        .map(|o| inputs.iter().map(|i| col(&dy_name(o, i))).collect())
        .collect();
    let any_dy = dy_cols.iter().flatten().any(Option::is_some);
    if any_dy && dy_cols.iter().flatten().any(Option::is_none) {
        return Err(cfg_err(path, "derivative columns must cover every output and input"));
    }
    let x = Array2::from_shape_fn((n, inputs.len()), |(r, j)| rows[r][x_cols[j]]);
    let y = Array2::from_shape_fn((n, outputs.len()), |(r, o)| rows[r][y_cols[o]]);
    let dy = any_dy.then(|| Array3::from_shape_fn((n, outputs.len(), inputs.len()), |(r, o, j)| rows[r][dy_cols[o][j].unwrap()]));
    if x.iter().chain(y.iter()).chain(dy.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(cfg_err(path, "empty or non-finite values"));
    }
    Ok(Samples {
        inputs,
        outputs,
        data: TrainingData { x, y, dy },
    })
}

pub fn write_samples(s: &Samples, w: &mut impl Write) -> std::io::Result<()> {
    let single = s.outputs.len() == 1;
    let mut header: Vec<String> = s.inputs.iter().map(|i| format!("x:{i}")).collect();
    for o in &s.outputs {
        header.push(if single { "y".into() } else { format!("y:{o}") });
    }
    if s.data.dy.is_some() {
        for o in &s.outputs {
            for i in &s.inputs {
                header.push(if single { format!("dy:{i}") } else { format!("dy:{o}:{i}") });
            }
        }
    }
    writeln!(w, "{}", header.join(","))?;
    let d = &s.data;
    for r in 0..d.len() {
        let mut row: Vec<String> = d.x.row(r).iter().chain(d.y.row(r).iter()).map(f64::to_string).collect();
        if let Some(dy) = &d.dy {
            row.extend(dy.index_axis(ndarray::Axis(0), r).iter().map(f64::to_string));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Calibration targets grouped by maturity, in increasing order.
pub fn read_targets(path: &Path) -> Result<Vec<CalibTargets>, CliError> {
    let (header, rows) = read_table(path)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| cfg_err(path, format!("missing `{name}` column")));
    let (m, k, p) = (need("maturity")?, need("strike")?, need("price")?);
    let (se, wt) = (col("se"), col("weight"));
    let mut groups: BTreeMap<u64, Vec<&Vec<f64>>> = BTreeMap::new();
    for row in &rows {
        let t = row[m];
        if !(t.is_finite() && t > 0.0) {
            return Err(cfg_err(path, format!("bad maturity {t}")));
        }
        groups.entry(t.to_bits()).or_default().push(row);
    }
    if groups.is_empty() {
        return Err(cfg_err(path, "no targets"));
    }
    // Positive floats order the same as their bit patterns.
    Ok(groups
        .into_values()
        .map(|rows| {
            let mut t = CalibTargets::new(rows[0][m], rows.iter().map(|r| r[k]).collect(), rows.iter().map(|r| r[p]).collect());
            t.std_errors = se.map(|c| rows.iter().map(|r| r[c]).collect());
            t.weights = wt.map(|c| rows.iter().map(|r| r[c]).collect());
            t
        })
        .collect())
}

/// Reference prices at given inputs: input columns named as the surrogate
/// inputs, `price`, and optionally `se`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x: Array2<f64>,
    pub price: Vec<f64>,
    pub se: Option<Vec<f64>>,
}

pub fn read_reference(path: &Path, inputs: &[String]) -> Result<Reference, CliError> {
    let (header, rows) = read_table(path)?;
    let col = |name: &str| header.iter().position(|h| h == name || h.strip_prefix("x:") == Some(name));
    let cols: Vec<usize> = inputs
        .iter()
        .map(|i| col(i).ok_or_else(|| cfg_err(path, format!("missing input column `{i}`"))))
        .collect::<Result<_, _>>()?;
    let p = col("price").ok_or_else(|| cfg_err(path, "missing `price` column"))?;
    Ok(Reference {
        x: Array2::from_shape_fn((rows.len(), cols.len()), |(r, j)| rows[r][cols[j]]),
        price: rows.iter().map(|r| r[p]).collect(),
        se: col("se").map(|c| rows.iter().map(|r| r[c]).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn samples_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.csv", "x:a,x:b,y,dy:a,dy:b\n1,2,3,4,5\n0.5,0.25,1e-3,0,-1\n");
        let s = read_samples(&p).unwrap();
        assert_eq!(s.inputs, ["a", "b"]);
        assert_eq!(s.data.x[[1, 1]], 0.25);
        assert_eq!(s.data.dy.as_ref().unwrap()[[0, 0, 1]], 5.0);
        let mut buf = Vec::new();
        write_samples(&s, &mut buf).unwrap();
        let q = write(&dir, "t.csv", std::str::from_utf8(&buf).unwrap());
        assert_eq!(read_samples(&q).unwrap(), s);
    }

    #[test]
    fn samples_without_derivatives_and_partial_derivatives() {
        let dir = tempfile::tempdir().unwrap();
        let s = read_samples(&write(&dir, "s.csv", "x:a,y\n1,2\n")).unwrap();
        assert!(s.data.dy.is_none());
        assert!(read_samples(&write(&dir, "t.csv", "x:a,x:b,y,dy:a\n1,2,3,4\n")).is_err());
        assert!(read_samples(&write(&dir, "u.csv", "x:a,y\n1,\n")).is_err());
    }

    #[test]
    fn targets_grouped_by_maturity() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "t.csv",
            "maturity,strike,price,se\n2,0.02,0.1,0.01\n1,0.02,0.2,0.02\n1,0.03,0.15,0.03\n",
        );
        let t = read_targets(&p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].t1, 1.0);
        assert_eq!(t[0].strikes, [0.02, 0.03]);
        assert_eq!(t[0].std_errors.as_deref(), Some(&[0.02, 0.03][..]));
        assert!(t[0].weights.is_none());
        assert!(read_targets(&write(&dir, "u.csv", "maturity,price\n1,2\n")).is_err());
    }

    #[test]
    fn reference_columns_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.csv", "price,b,x:a\n1.5,2,3\n");
        let r = read_reference(&p, &["a".into(), "b".into()]).unwrap();
        assert_eq!(r.x.row(0).to_vec(), [3.0, 2.0]);
        assert_eq!(r.price, [1.5]);
        assert!(r.se.is_none());
    }
}
