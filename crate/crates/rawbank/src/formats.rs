//! On-disk formats for features, μ vectors, and training metrics.
//!
//! Feature matrices travel as "WFB1": magic, u32 band count, u32 frame
//! count, then band-major little-endian f32 samples. CSV and PGM
//! emissions exist for plotting and quick visual inspection.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::trainer::EpochMetrics;

const WFB1_MAGIC: &[u8; 4] = b"WFB1";

pub fn write_wfb1(path: &Path, feat: &Mat) -> Result<()> {
    let (f, t) = (feat.rows(), feat.cols());
    if f > u32::MAX as usize || t > u32::MAX as usize {
        return Err(Error::Argument(format!(
            "feature matrix {f}x{t} exceeds the u32 header"
        )));
    }
    let mut buf = Vec::with_capacity(12 + 4 * f * t);
    buf.extend_from_slice(WFB1_MAGIC);
    buf.extend_from_slice(&(f as u32).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    for &v in feat.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_wfb1(path: &Path) -> Result<Mat> {
    let buf = fs::read(path)?;
    if buf.len() < 12 {
        return Err(Error::Format(format!(
            "{}: truncated before the feature header",
            path.display()
        )));
    }
    if &buf[0..4] != WFB1_MAGIC {
        return Err(Error::Format(format!(
            "{}: missing WFB1 magic",
            path.display()
        )));
    }
    let f = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let need = 12 + 4 * f * t;
    if buf.len() != need {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, header promises {need}",
            path.display(),
            buf.len()
        )));
    }
    let mut data = Vec::with_capacity(f * t);
    for chunk in buf[12..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    Ok(Mat::from_vec(f, t, data))
}

/// One CSV row per band.
pub fn write_feature_csv(path: &Path, feat: &Mat) -> Result<()> {
    let mut out = String::new();
    for i in 0..feat.rows() {
        let row: Vec<String> = feat.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// 8-bit binary PGM, min-max scaled over the whole file; a constant
/// matrix renders black. Row 0 (band 0) is the top image row.
pub fn write_pgm(path: &Path, feat: &Mat) -> Result<()> {
    let (h, w) = (feat.rows(), feat.cols());
    let lo = feat
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = feat
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in feat.as_slice() {
        let g = if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        };
        buf.push(g);
    }
    fs::write(path, buf)?;
    Ok(())
}

/// μ vector: one normalized frequency per line.
pub fn write_mu_csv(path: &Path, mu: &[f64]) -> Result<()> {
    let mut out = String::new();
    for v in mu {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mu_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut mu = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| {
            Error::Format(format!(
                "{}: line {} is not a number: '{line}'",
                path.display(),
                i + 1
            ))
        })?;
        mu.push(v);
    }
    if mu.is_empty() {
        return Err(Error::Format(format!("{}: no values", path.display())));
    }
    Ok(mu)
}

/// One JSON object per epoch.
pub fn write_metrics_jsonl(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m).expect("metrics serialization"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Scalar columns only, for plotting.
pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{}\n",
            m.epoch, m.train_loss, m.train_acc, m.val_acc
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wfb1_round_trips_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wfb");
        let feat = Mat::from_fn(3, 5, |i, j| (i * 5 + j) as f64 * 0.37 - 2.0);
        write_wfb1(&p, &feat).unwrap();
        let back = read_wfb1(&p).unwrap();
        assert_eq!((back.rows(), back.cols()), (3, 5));
        for (a, b) in feat.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() <= a.abs() * 1e-6 + 1e-7);
        }
    }

    #[test]
    fn wfb1_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wfb");
        fs::write(&p, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(read_wfb1(&p).unwrap_err().to_string().contains("magic"));
        let mut ok = Vec::new();
        ok.extend_from_slice(b"WFB1");
        ok.extend_from_slice(&2u32.to_le_bytes());
        ok.extend_from_slice(&2u32.to_le_bytes());
        ok.extend_from_slice(&[0u8; 7]);
        fs::write(&p, ok).unwrap();
        assert!(read_wfb1(&p).is_err());
    }

    #[test]
    fn pgm_header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        let feat = Mat::from_vec(2, 2, vec![0.0, 1.0, 0.5, 0.25]);
        write_pgm(&p, &feat).unwrap();
        let buf = fs::read(&p).unwrap();
        assert!(buf.starts_with(b"P5\n2 2\n255\n"));
        let px = &buf[buf.len() - 4..];
        assert_eq!(px, &[0, 255, 128, 64]);

        let flat = Mat::from_vec(1, 3, vec![7.0, 7.0, 7.0]);
        write_pgm(&p, &flat).unwrap();
        let buf = fs::read(&p).unwrap();
        assert_eq!(&buf[buf.len() - 3..], &[0, 0, 0]);
    }

    #[test]
    fn mu_csv_round_trip_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mu.csv");
        let mu = vec![0.00375, 0.1234567891234, 0.475];
        write_mu_csv(&p, &mu).unwrap();
        assert_eq!(read_mu_csv(&p).unwrap(), mu);

        fs::write(&p, "0.1\nnot-a-number\n").unwrap();
        let err = read_mu_csv(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "got: {err}");
    }

    #[test]
    fn metrics_files_have_one_row_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = vec![
            EpochMetrics {
                epoch: 1,
                train_loss: 2.0,
                train_acc: 0.25,
                val_acc: 0.2,
                mu: vec![0.1, 0.2],
                attention_mean: vec![0.5, 0.5],
            },
            EpochMetrics {
                epoch: 2,
                train_loss: 1.5,
                train_acc: 0.5,
                val_acc: 0.4,
                mu: vec![0.11, 0.21],
                attention_mean: vec![0.6, 0.4],
            },
        ];
        let j = dir.path().join("m.jsonl");
        let c = dir.path().join("m.csv");
        write_metrics_jsonl(&j, &metrics).unwrap();
        write_metrics_csv(&c, &metrics).unwrap();
        let jtext = fs::read_to_string(&j).unwrap();
        assert_eq!(jtext.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(jtext.lines().next().unwrap()).unwrap();
        assert_eq!(first["epoch"], 1);
        assert_eq!(first["mu"].as_array().unwrap().len(), 2);
        let ctext = fs::read_to_string(&c).unwrap();
        assert_eq!(ctext.lines().count(), 3);
        assert!(ctext.starts_with("epoch,train_loss,train_acc,val_acc\n"));
    }

    proptest::proptest! {
        #[test]
        fn wfb1_round_trips_any_shape(
            rows in 1usize..6,
            cols in 1usize..9,
            seed in 0u64..1024,
        ) {
            let mut state = seed | 1;
            let mut next = || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state as f64 / u64::MAX as f64 - 0.5) * 200.0
            };
            let m = Mat::from_fn(rows, cols, |_, _| next());
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("f.wfb");
            write_wfb1(&p, &m).unwrap();
            let back = read_wfb1(&p).unwrap();
            proptest::prop_assert_eq!((back.rows(), back.cols()), (rows, cols));
            for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
                proptest::prop_assert!((a - b).abs() <= a.abs() * 1e-6 + 1e-6);
            }
        }
    }
}
