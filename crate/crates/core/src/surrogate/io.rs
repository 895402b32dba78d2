//! Binary surrogate files. All integers and floats are little-endian:
//!
//! ```text
//! magic       8 bytes "PDMLNET\0"
//! version     u32
//! n_sizes     u32, then sizes as u64
//! activation  u32 length + UTF-8 name
//! loss        u8 (0 vml, 1 dml, 2 pdml), for pdml u64 count + (u64, u64) pairs
//! seed, n_samples   u64
//! history     u64 count + f64s
//! scaler      x_shift, x_scale (n_in f64 each), y_shift, y_scale (n_out f64 each)
//! per layer   weights row-major (out × in) f64, then biases f64
//! ```

use std::io::{self, Read, Write};

use ndarray::{Array1, Array2};

use super::{LossKind, Mlp, Scaler, Surrogate, SurrogateMeta};
use crate::activation::Activation;

const MAGIC: &[u8; 8] = b"PDMLNET\0";
pub const FORMAT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<'a>(w: &mut impl Write, vs: impl IntoIterator<Item = &'a f64>) -> io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save(s: &Surrogate, w: &mut impl Write) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(s.net.sizes.len() as u32).to_le_bytes())?;
    for &n in &s.net.sizes {
        put_u64(w, n as u64)?;
    }
    let name = s.net.activation.name();
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    match &s.meta.loss {
        LossKind::Vml => w.write_all(&[0])?,
        LossKind::Dml => w.write_all(&[1])?,
        LossKind::Pdml { pairs } => {
            w.write_all(&[2])?;
            put_u64(w, pairs.len() as u64)?;
            for &(o, j) in pairs {
                put_u64(w, o as u64)?;
                put_u64(w, j as u64)?;
            }
        }
    }
    put_u64(w, s.meta.seed)?;
    put_u64(w, s.meta.n_samples as u64)?;
    put_u64(w, s.meta.loss_history.len() as u64)?;
    put_f64s(w, &s.meta.loss_history)?;
    for a in [&s.scaler.x_shift, &s.scaler.x_scale, &s.scaler.y_shift, &s.scaler.y_scale] {
        put_f64s(w, a)?;
    }
    for (wl, bl) in s.net.weights.iter().zip(&s.net.biases) {
        put_f64s(w, wl)?;
        put_f64s(w, bl)?;
    }
    Ok(())
}

struct Reader<'r, R> {
    r: &'r mut R,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b)?;
        Ok(b)
    }

    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> io::Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?)).map_err(|_| bad("length overflow"))
    }

    fn f64s(&mut self, n: usize) -> io::Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
}

pub fn load(r: &mut impl Read) -> io::Result<Surrogate> {
    let mut rd = Reader { r };
    if &rd.bytes::<8>()? != MAGIC {
        return Err(bad("not a surrogate file"));
    }
    let version = rd.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("surrogate format version {version}, expected {FORMAT_VERSION}")));
    }
    let n_sizes = rd.u32()? as usize;
    if n_sizes < 2 {
        return Err(bad("network needs at least two layers"));
    }
    let sizes = (0..n_sizes).map(|_| rd.usize()).collect::<io::Result<Vec<_>>>()?;
    let name_len = rd.u32()? as usize;
    let mut name = vec![0u8; name_len];
    rd.r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| bad("activation name is not UTF-8"))?;
    let activation = Activation::from_name(&name).ok_or_else(|| bad(format!("unknown activation {name}")))?;
    let loss = match rd.bytes::<1>()?[0] {
        0 => LossKind::Vml,
        1 => LossKind::Dml,
        2 => {
            let n = rd.usize()?;
            let pairs = (0..n).map(|_| Ok((rd.usize()?, rd.usize()?))).collect::<io::Result<Vec<_>>>()?;
            LossKind::Pdml { pairs }
        }
        t => return Err(bad(format!("unknown loss tag {t}"))),
    };
    let seed = u64::from_le_bytes(rd.bytes()?);
    let n_samples = rd.usize()?;
    let n_hist = rd.usize()?;
    let loss_history = rd.f64s(n_hist)?;
    let (n_in, n_out) = (sizes[0], sizes[n_sizes - 1]);
    let scaler = Scaler {
        x_shift: Array1::from(rd.f64s(n_in)?),
        x_scale: Array1::from(rd.f64s(n_in)?),
        y_shift: Array1::from(rd.f64s(n_out)?),
        y_scale: Array1::from(rd.f64s(n_out)?),
    };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in sizes.windows(2) {
        let data = rd.f64s(w[0] * w[1])?;
        weights.push(Array2::from_shape_vec((w[1], w[0]), data).map_err(|e| bad(e.to_string()))?);
        biases.push(Array1::from(rd.f64s(w[1])?));
    }
    Ok(Surrogate {
        net: Mlp {
            sizes,
            activation,
            weights,
            biases,
        },
        scaler,
        meta: SurrogateMeta {
            seed,
            n_samples,
            loss,
            loss_history,
        },
    })
}
