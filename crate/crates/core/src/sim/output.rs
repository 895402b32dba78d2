use std::io::{self, Read, Write};

use super::Bindings;

/// Payoff samples and samplewise derivatives of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub payoff_names: Vec<String>,
    pub diff_wrt: Vec<String>,
    pub n_paths: usize,
    /// `[path][payoff]`
    pub y: Vec<f64>,
    /// `[path][payoff][param]`
    pub dy: Vec<f64>,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub bindings: Bindings,
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

const MAGIC: &[u8; 8] = b"PDMLSIM\0";
const VERSION: u32 = 1;

impl SimOutput {
    pub fn n_payoffs(&self) -> usize {
        self.payoff_names.len()
    }

    pub fn n_params(&self) -> usize {
        self.diff_wrt.len()
    }

    pub fn payoff_index(&self, name: &str) -> Option<usize> {
        self.payoff_names.iter().position(|p| p == name)
    }

    pub fn y(&self, path: usize, payoff: usize) -> f64 {
        self.y[path * self.n_payoffs() + payoff]
    }

    pub fn dy(&self, path: usize, payoff: usize, param: usize) -> f64 {
        self.dy[(path * self.n_payoffs() + payoff) * self.n_params() + param]
    }

    pub fn y_column(&self, payoff: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.y(p, payoff)).collect()
    }

    pub fn dy_column(&self, payoff: usize, param: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.dy(p, payoff, param)).collect()
    }

    /// Monte Carlo price estimate and its standard error.
    pub fn price(&self, payoff: usize) -> (f64, f64) {
        mean_and_se((0..self.n_paths).map(|p| self.y(p, payoff)))
    }

    pub fn dy_mean(&self, payoff: usize, param: usize) -> (f64, f64) {
        mean_and_se((0..self.n_paths).map(|p| self.dy(p, payoff, param)))
    }

    /// `path,payoff,y,d_<param>...`, one row per path and payoff.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        write!(w, "path,payoff,y")?;
        for d in &self.diff_wrt {
            write!(w, ",d_{d}")?;
        }
        writeln!(w)?;
        for path in 0..self.n_paths {
            for (p, name) in self.payoff_names.iter().enumerate() {
                write!(w, "{path},{name},{:e}", self.y(path, p))?;
                for d in 0..self.n_params() {
                    write!(w, ",{:e}", self.dy(path, p, d))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Binary layout, all integers and floats little-endian:
    ///
    /// ```text
    /// magic    8 bytes "PDMLSIM\0"
    /// version  u32
    /// n_paths, n_payoffs, n_params   u64 each
    /// names    n_payoffs + n_params strings, each u32 length + UTF-8 bytes
    /// seed     u64
    /// y        n_paths·n_payoffs f64, path-major
    /// dy       n_paths·n_payoffs·n_params f64, path-major then payoff
    /// ```
    pub fn write_binary(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for n in [self.n_paths, self.n_payoffs(), self.n_params()] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for s in self.payoff_names.iter().chain(&self.diff_wrt) {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        for v in self.y.iter().chain(&self.dy) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the payload written by [`write_binary`](Self::write_binary).
    /// Grid and bindings are not stored and come back empty.
    pub fn read_binary(r: &mut impl Read) -> io::Result<SimOutput> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a simulation dump"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(bad(&format!("unsupported dump version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut b8)?;
            *d = u64::from_le_bytes(b8) as usize;
        }
        let [n_paths, n_payoffs, n_params] = dims;
        let mut names = Vec::new();
        for _ in 0..n_payoffs + n_params {
            r.read_exact(&mut b4)?;
            let mut s = vec![0u8; u32::from_le_bytes(b4) as usize];
            r.read_exact(&mut s)?;
            names.push(String::from_utf8(s).map_err(|_| bad("invalid name"))?);
        }
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let mut read_f64s = |n: usize| -> io::Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    r.read_exact(&mut b8)?;
                    Ok(f64::from_le_bytes(b8))
                })
                .collect()
        };
        let y = read_f64s(n_paths * n_payoffs)?;
        let dy = read_f64s(n_paths * n_payoffs * n_params)?;
        let diff_wrt = names.split_off(n_payoffs);
        Ok(SimOutput {
            payoff_names: names,
            diff_wrt,
            n_paths,
            y,
            dy,
            seed,
            grid: Vec::new(),
            bindings: Bindings::new(),
        })
    }
}
