//! 16-bit PCM mono WAV reading and writing.
//!
//! Only the subset this crate produces and consumes is supported; anything
//! else is rejected with a message naming the offending header field rather
//! than being decoded on a best-effort basis.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

fn read_u16(b: &[u8], off: usize, what: &str) -> Result<u16> {
    let s = b
        .get(off..off + 2)
        .ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))?;
    Ok(u16::from_le_bytes([s[0], s[1]]))
}

fn read_u32(b: &[u8], off: usize, what: &str) -> Result<u32> {
    let s = b
        .get(off..off + 4)
        .ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))?;
    Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

/// Read a mono 16-bit PCM WAV file. Samples are scaled to `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let bytes = fs::read(path)?;
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(Error::Format("missing RIFF tag".into()));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(Error::Format("missing WAVE tag".into()));
    }

    let mut sample_rate: Option<u32> = None;
    let mut data: Option<&[u8]> = None;
    let mut off = 12;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = read_u32(&bytes, off + 4, "chunk size")? as usize;
        let body_off = off + 8;
        if body_off + size > bytes.len() {
            return Err(Error::Format(format!(
                "chunk '{}' claims {} bytes past end of file",
                String::from_utf8_lossy(id),
                size
            )));
        }
        match id {
            b"fmt " => {
                let audio_format = read_u16(&bytes, body_off, "audio_format")?;
                if audio_format != 1 {
                    return Err(Error::Format(format!(
                        "audio_format is {audio_format}, only PCM (1) is supported"
                    )));
                }
                let channels = read_u16(&bytes, body_off + 2, "num_channels")?;
                if channels != 1 {
                    return Err(Error::Format(format!(
                        "num_channels is {channels}, only mono is supported"
                    )));
                }
                let bits = read_u16(&bytes, body_off + 14, "bits_per_sample")?;
                if bits != 16 {
                    return Err(Error::Format(format!(
                        "bits_per_sample is {bits}, only 16 is supported"
                    )));
                }
                sample_rate = Some(read_u32(&bytes, body_off + 4, "sample_rate")?);
            }
            b"data" => data = Some(&bytes[body_off..body_off + size]),
            _ => {} // skip unknown chunks (LIST, fact, ...)
        }
        // Chunks are word-aligned.
        off = body_off + size + (size & 1);
    }

    let sample_rate = sample_rate.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::Format("data chunk has odd byte length".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok((samples, sample_rate))
}

/// Write a mono 16-bit PCM WAV file. Samples are clamped to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0)
            .round()
            .clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}
