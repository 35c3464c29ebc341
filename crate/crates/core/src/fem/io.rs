//! Series persistence.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "HTSERIES"
//! version    u32      1
//! id_len     u32      byte length of mesh_id
//! mesh_id    id_len bytes, UTF-8
//! n_nodes    u64
//! n_frames   u64
//! dt, t_init, t_dirichlet, rho_cp, k0, beta, T0   7 x f64
//! data       n_frames * n_nodes x f64, frame-major
//! ```

use std::fmt::Write as _;
use std::io::{Read, Write};

use super::{Material, SimulationSeries};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HTSERIES";
const VERSION: u32 = 1;

pub fn write_series_binary<W: Write>(series: &SimulationSeries, mut out: W) -> Result<()> {
    let n_nodes = series.n_nodes();
    if series.frames.iter().any(|f| f.len() != n_nodes) {
        return Err(Error::Shape("frames of unequal length".into()));
    }
    let mut buf = Vec::with_capacity(128 + 8 * n_nodes * series.n_frames());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(series.mesh_id.len() as u32).to_le_bytes());
    buf.extend_from_slice(series.mesh_id.as_bytes());
    buf.extend_from_slice(&(n_nodes as u64).to_le_bytes());
    buf.extend_from_slice(&(series.n_frames() as u64).to_le_bytes());
    let m = &series.material;
    for v in [
        series.dt,
        series.t_init,
        series.t_dirichlet,
        m.rho_cp,
        m.k0,
        m.beta,
        m.t0,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for frame in &series.frames {
        for v in frame {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "series truncated at byte {} (wanted {n} more)",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_series_binary<R: Read>(mut input: R) -> Result<SimulationSeries> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(8)? != MAGIC {
        return Err(Error::Format("not a simulation series file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported series version {version}"
        )));
    }
    let id_len = c.u32()? as usize;
    let mesh_id = String::from_utf8(c.take(id_len)?.to_vec())
        .map_err(|e| Error::Format(format!("mesh id is not UTF-8: {e}")))?;
    let n_nodes = c.u64()? as usize;
    let n_frames = c.u64()? as usize;
    let dt = c.f64()?;
    let t_init = c.f64()?;
    let t_dirichlet = c.f64()?;
    let material = Material {
        rho_cp: c.f64()?,
        k0: c.f64()?,
        beta: c.f64()?,
        t0: c.f64()?,
    };
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut f = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            f.push(c.f64()?);
        }
        frames.push(f);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after series data",
            bytes.len() - c.pos
        )));
    }
    Ok(SimulationSeries {
        mesh_id,
        frames,
        dt,
        t_init,
        t_dirichlet,
        material,
    })
}

/// One row per frame: `frame,time,T0,...,T{n-1}`.
pub fn series_to_csv(series: &SimulationSeries) -> String {
    let mut s = String::from("frame,time");
    for i in 0..series.n_nodes() {
        write!(s, ",T{i}").unwrap();
    }
    s.push('\n');
    for (k, frame) in series.frames.iter().enumerate() {
        write!(s, "{k},{:?}", k as f64 * series.dt).unwrap();
        for v in frame {
            write!(s, ",{v:?}").unwrap();
        }
        s.push('\n');
    }
    s
}
