//! Checkpoint file format.
//!
//! Layout: magic "WFCK", u32 config-JSON length, the JSON blob, u32 entry
//! count, per entry (u16 name length, name bytes, u8 rank, u32 dims...,
//! u64 offset in elements), u64 total element count, then the parameter
//! data as little-endian f64. All integers little-endian.

use std::fs;
use std::path::Path;

use crate::attention::NinParams;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::filterbank::FilterbankParams;
use crate::model::{FlatParams, ModelParams, ParamEntry};

const MAGIC: &[u8; 4] = b"WFCK";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: FlatParams,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated while reading {what}"
            )));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let s = self.take(2, what)?;
        Ok(u16::from_le_bytes([s[0], s[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let s = self.take(4, what)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let s = self.take(8, what)?;
        Ok(u64::from_le_bytes(s.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(config: TrainConfig, params: FlatParams) -> Self {
        Checkpoint { config, params }
    }

    /// Typed view of the stored parameters.
    pub fn unpack(&self) -> Result<(FilterbankParams, NinParams, ModelParams)> {
        self.params.unpack(self.config.k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg_json = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Format(format!("config serialization: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg_json);
        out.extend_from_slice(&(self.params.entries.len() as u32).to_le_bytes());
        for e in &self.params.entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&(e.offset as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.data.len() as u64).to_le_bytes());
        for &v in &self.params.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        let mut r = Reader { buf: &buf, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:02x?}, expected \"WFCK\"",
                &magic
            )));
        }
        let cfg_len = r.u32("config length")? as usize;
        let cfg_bytes = r.take(cfg_len, "config blob")?;
        let config: TrainConfig = serde_json::from_slice(cfg_bytes)
            .map_err(|e| Error::Format(format!("checkpoint config JSON: {e}")))?;
        config.validate()?;

        let n_entries = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(n_entries);
        for i in 0..n_entries {
            let name_len = r.u16("entry name length")? as usize;
            let name_bytes = r.take(name_len, "entry name")?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| Error::Format(format!("entry {i} name is not UTF-8")))?
                .to_string();
            let rank = r.take(1, "entry rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("entry dim")? as usize);
            }
            let offset = r.u64("entry offset")? as usize;
            entries.push(ParamEntry {
                name,
                shape,
                offset,
            });
        }
        let data_len = r.u64("data length")? as usize;
        let data_bytes = r.take(data_len * 8, "parameter data")?;
        let data: Vec<f64> = data_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        for e in &entries {
            if e.offset + e.len() > data.len() {
                return Err(Error::Format(format!(
                    "entry '{}' spans past the parameter data ({} + {} > {})",
                    e.name,
                    e.offset,
                    e.len(),
                    data.len()
                )));
            }
        }
        let ckpt = Checkpoint {
            config,
            params: FlatParams { data, entries },
        };
        // A checkpoint that cannot produce typed parameters is corrupt.
        ckpt.unpack()?;
        Ok(ckpt)
    }
}
