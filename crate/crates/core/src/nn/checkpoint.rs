//! Binary parameter checkpoints.
//!
//! Layout (all integers `u32` little-endian, all reals `f64` little-endian):
//!
//! ```text
//! magic "CFNN" | version | network count
//! per network:
//!   name length | name (utf-8)
//!   width count | widths...
//!   activation codes (u8, one per layer) | dropout rates (one per layer)
//!   per layer: weights (row-major, in x out) then bias (out)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpSpec, Tensor};

const MAGIC: &[u8; 4] = b"CFNN";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_networks(nets: &[(&str, &Mlp)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, nets.len() as u32);
    for (name, mlp) in nets {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        let spec = mlp.spec();
        put_u32(&mut out, spec.widths.len() as u32);
        for &w in &spec.widths {
            put_u32(&mut out, w as u32);
        }
        out.extend(spec.activations.iter().map(|a| a.code()));
        for &r in &spec.dropout {
            put_f64(&mut out, r);
        }
        for p in mlp.params() {
            for &v in p.values() {
                put_f64(&mut out, v);
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Config(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_networks(buf: &[u8]) -> Result<Vec<(String, Mlp)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Config("not a network checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Config(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|e| Error::Config(format!("checkpoint name: {e}")))?;
        let nw = r.u32()? as usize;
        let widths = (0..nw).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
        let layers = nw.saturating_sub(1);
        let activations = r
            .take(layers)?
            .iter()
            .map(|&c| Activation::from_code(c))
            .collect::<Result<Vec<_>>>()?;
        let dropout = (0..layers).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let spec = MlpSpec::new(widths, activations, dropout)?;
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|[rows, cols]| {
                let vals = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Tensor::new(rows, cols, vals)
            })
            .collect::<Result<Vec<_>>>()?;
        nets.push((name, Mlp::from_params(spec, params)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Config("trailing bytes after checkpoint".into()));
    }
    Ok(nets)
}

pub fn save_networks(path: &Path, nets: &[(&str, &Mlp)]) -> Result<()> {
    let bytes = encode_networks(nets);
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn load_networks(path: &Path) -> Result<Vec<(String, Mlp)>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_networks(&buf)
}

/// Removes the network called `name` from a decoded list.
pub fn take_network(nets: &mut Vec<(String, Mlp)>, name: &str) -> Result<Mlp> {
    let idx = nets
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Config(format!("checkpoint has no network named '{name}'")))?;
    Ok(nets.remove(idx).1)
}
