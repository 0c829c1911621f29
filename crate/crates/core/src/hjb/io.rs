//! Serialization of value fields: long-format CSV and a binary cache.

use std::io::Write;

use sha2::{Digest, Sha256};

use super::{Grid, ValueField};
use crate::error::{Error, Result};
use crate::model::ModelSpec;

const MAGIC: &[u8; 8] = b"LQVFLD01";

/// Hex digest identifying a `(model, grid)` pair, used as the cache key.
pub fn cache_key(spec: &ModelSpec, grid: &Grid) -> String {
    // Debug output of f64 round-trips exactly, so equal inputs hash equally.
    let digest = Sha256::digest(format!("{spec:?}|{grid:?}").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ValueField {
    /// Writes `t,w,pi,V,nu_star,C` rows for every `layer_stride`-th time
    /// layer; the first and last layers are always included.
    pub fn write_csv<W: Write>(&self, writer: W, layer_stride: usize) -> Result<()> {
        let stride = layer_stride.max(1);
        let nt = self.nt();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "w", "pi", "V", "nu_star", "C"])?;
        for n in 0..=nt {
            if n % stride != 0 && n != nt {
                continue;
            }
            for i in 0..self.ws.len() {
                for j in 0..self.pis.len() {
                    let k = self.index(n, i, j);
                    w.write_record([
                        self.times[n].to_string(),
                        self.ws[i].to_string(),
                        self.pis[j].to_string(),
                        self.v[k].to_string(),
                        self.nu_star[k].to_string(),
                        self.cost[k].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * (3 * self.v.len() + self.times.len() + self.ws.len()));
        out.extend_from_slice(MAGIC);
        for n in [self.times.len(), self.ws.len(), self.pis.len(), self.steps] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.dt.to_le_bytes());
        out.extend_from_slice(&self.min_center_weight.to_le_bytes());
        for arr in [&self.times, &self.ws, &self.pis, &self.v, &self.nu_star, &self.cost] {
            for x in arr.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Parse("value field cache is truncated or corrupt".into());
        if bytes.len() < 56 || &bytes[..8] != MAGIC {
            return Err(bad());
        }
        let mut pos = 8;
        let mut word = || -> Result<[u8; 8]> {
            let b: [u8; 8] = bytes.get(pos..pos + 8).ok_or_else(bad)?.try_into().unwrap();
            pos += 8;
            Ok(b)
        };
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = usize::try_from(u64::from_le_bytes(word()?)).map_err(|_| bad())?;
        }
        let dt = f64::from_le_bytes(word()?);
        let min_center_weight = f64::from_le_bytes(word()?);
        let [nt1, nw1, np, steps] = dims;
        let cells = nt1.checked_mul(nw1).and_then(|x| x.checked_mul(np)).ok_or_else(bad)?;
        if bytes.len() != 56 + 8 * (nt1 + nw1 + np + 3 * cells) {
            return Err(bad());
        }
        let mut read = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| word().map(f64::from_le_bytes)).collect() };
        Ok(Self {
            times: read(nt1)?,
            ws: read(nw1)?,
            pis: read(np)?,
            v: read(cells)?,
            nu_star: read(cells)?,
            cost: read(cells)?,
            dt,
            steps,
            min_center_weight,
        })
    }
}
