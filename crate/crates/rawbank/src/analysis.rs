//! Diagnostics over trained checkpoints: learned center frequencies
//! against the mel reference, attention-versus-energy profiles, and
//! staged feature extraction for inspection.

use serde::Serialize;

use crate::attention;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::filterbank;
use crate::mat::Mat;
use crate::signal::{self, Utterance};
use crate::trainer::{self, window_plan};

/// One band of the center-frequency comparison, all in Hz.
#[derive(Debug, Clone, Serialize)]
pub struct FilterRow {
    pub rank: usize,
    pub learned_hz: f64,
    pub mel_reference_hz: f64,
}

/// Learned μ sorted ascending next to a fresh mel initialization of the
/// same geometry.
pub fn analyze_filters(ckpt: &Checkpoint) -> Result<Vec<FilterRow>> {
    let cfg = &ckpt.config;
    let (fb, _, _) = ckpt.unpack()?;
    let mut learned = fb.mu.clone();
    learned.sort_by(f64::total_cmp);
    let reference = filterbank::mel_init(cfg.f, cfg.sample_rate, cfg.mu_min, cfg.mu_max, cfg.k)?;
    let sr = cfg.sample_rate as f64;
    Ok(learned
        .iter()
        .zip(&reference.mu)
        .enumerate()
        .map(|(rank, (&l, &m))| FilterRow {
            rank,
            learned_hz: l * sr,
            mel_reference_hz: m * sr,
        })
        .collect())
}

pub fn filter_report_csv(rows: &[FilterRow]) -> String {
    let mut out = String::from("rank,learned_mu_sorted_Hz,mel_reference_Hz\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.rank, r.learned_hz, r.mel_reference_hz
        ));
    }
    out
}

/// Attention/energy diagnostics for one utterance.
#[derive(Debug, Clone, Serialize)]
pub struct AttentionProfile {
    pub utt_id: String,
    /// Mean attention weight per band over the analyzed windows, scaled
    /// to unit Euclidean norm.
    pub attention_norm: Vec<f64>,
    /// Mean log sub-band energy per band over frames and windows, filter
    /// gain divided out, scaled to unit Euclidean norm. Without the gain
    /// compensation the kernel norm (∝ 1/μ) dominates the column and the
    /// profile reflects the filterbank, not the utterance.
    pub energy_norm: Vec<f64>,
    pub pearson: f64,
    pub spearman: f64,
    /// Raw attention weights, one row per analyzed window.
    pub window_weights: Vec<Vec<f64>>,
}

/// Per-utterance mean attention weights against mean sub-band energies.
/// `windows_limit` subsamples each utterance's windows (0 = all).
pub fn analyze_attention(
    ckpt: &Checkpoint,
    utts: &[Utterance],
    windows_limit: usize,
) -> Result<Vec<AttentionProfile>> {
    if utts.is_empty() {
        return Err(Error::Argument("no utterances to analyze".into()));
    }
    let cfg = &ckpt.config;
    let (fb, nin, head) = ckpt.unpack()?;
    let log_gain: Vec<f64> = fb
        .mu
        .iter()
        .map(|&m| {
            let w = filterbank::make_kernel(m, fb.k)?;
            Ok(w.iter().map(|v| v * v).sum::<f64>().ln())
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(utts.len());
    for u in utts {
        if u.sample_rate != cfg.sample_rate {
            return Err(Error::Argument(format!(
                "utterance {} has sample rate {}, checkpoint expects {}",
                u.id, u.sample_rate, cfg.sample_rate
            )));
        }
        let total = trainer::n_windows(u.samples.len(), cfg);
        if total == 0 {
            return Err(Error::Degenerate(format!(
                "utterance {} is shorter than one context window",
                u.id
            )));
        }
        let picks = window_plan(total, windows_limit);
        let mut att_mean = vec![0.0; cfg.f];
        let mut energy_mean = vec![0.0; cfg.f];
        let mut window_weights = Vec::with_capacity(picks.len());
        let w_scale = 1.0 / picks.len() as f64;
        for &b in &picks {
            let block = trainer::make_window(u, cfg, b)?;
            let fwd = trainer::window_forward(&block, &fb, &nin, &head, cfg, &u.id)?;
            for i in 0..cfg.f {
                att_mean[i] += w_scale * fwd.att.w[i];
                let row = fwd.x.x.row(i);
                energy_mean[i] += w_scale * row.iter().sum::<f64>() / row.len() as f64;
            }
            window_weights.push(fwd.att.w);
        }
        for i in 0..cfg.f {
            energy_mean[i] -= log_gain[i];
        }
        unit_normalize(&mut att_mean);
        unit_normalize(&mut energy_mean);
        let pearson = pearson(&att_mean, &energy_mean);
        let spearman = spearman(&att_mean, &energy_mean);
        out.push(AttentionProfile {
            utt_id: u.id.clone(),
            attention_norm: att_mean,
            energy_norm: energy_mean,
            pearson,
            spearman,
            window_weights,
        });
    }
    Ok(out)
}

pub fn attention_profile_csv(p: &AttentionProfile) -> String {
    let mut out = String::from("band,attention_norm,energy_norm\n");
    for (i, (a, e)) in p.attention_norm.iter().zip(&p.energy_norm).enumerate() {
        out.push_str(&format!("{i},{a},{e}\n"));
    }
    out
}

/// One row per analyzed window, f columns.
pub fn weights_dump_csv(profiles: &[AttentionProfile]) -> String {
    let mut out = String::new();
    for p in profiles {
        for w in &p.window_weights {
            let row: Vec<String> = w.iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

fn unit_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Pearson correlation; 0 when either argument is constant (no linear
/// association is measurable, and NaN would poison downstream CSV).
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    // A constant vector has no direction; rounding in the mean would
    // otherwise turn it into a spurious ±1.
    if a.iter().all(|&x| x == a[0]) || b.iter().all(|&y| y == b[0]) {
        return 0.0;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut p = 0;
    while p < idx.len() {
        let mut q = p;
        while q + 1 < idx.len() && v[idx[q + 1]] == v[idx[p]] {
            q += 1;
        }
        let shared = (p + q) as f64 / 2.0 + 1.0;
        for &i in &idx[p..=q] {
            r[i] = shared;
        }
        p = q + 1;
    }
    r
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// The emittable stages of the front-end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Log sub-band energies, f×t per window.
    X,
    /// Attention-weighted energies, f×t per window.
    Y,
    /// Soft-normalized and center-pruned, f×t_keep per window.
    Z,
    /// Log mel filterbank baseline, f×T over the whole utterance.
    Mel,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "x" => Ok(Stage::X),
            "y" => Ok(Stage::Y),
            "z" => Ok(Stage::Z),
            "mel" => Ok(Stage::Mel),
            other => Err(Error::Argument(format!(
                "unknown stage '{other}', expected x|y|z|mel"
            ))),
        }
    }
}

/// Emit one stage of the front-end for a whole utterance. Window stages
/// (x, y, z) are concatenated window by window along the time axis; mel
/// ignores the windowing and covers every 25 ms frame.
pub fn extract_features(ckpt: &Checkpoint, u: &Utterance, stage: Stage) -> Result<Mat> {
    let cfg = &ckpt.config;
    if stage == Stage::Mel {
        return signal::mel_filterbank_features(u, cfg.f);
    }
    if u.sample_rate != cfg.sample_rate {
        return Err(Error::Argument(format!(
            "utterance {} has sample rate {}, checkpoint expects {}",
            u.id, u.sample_rate, cfg.sample_rate
        )));
    }
    let (fb, nin, _) = ckpt.unpack()?;
    let blocks = signal::frame_signal(u, cfg.s, cfg.t, cfg.shift)?;
    if blocks.is_empty() {
        return Err(Error::Degenerate(format!(
            "utterance {} is shorter than one context window",
            u.id
        )));
    }
    let per_window = match stage {
        Stage::X | Stage::Y => cfg.t,
        Stage::Z => cfg.t_keep,
        Stage::Mel => unreachable!(),
    };
    let mut out = Mat::zeros(cfg.f, blocks.len() * per_window);
    for (bi, block) in blocks.iter().enumerate() {
        let mut x = filterbank::filterbank_forward(block, &fb)?;
        x.source = format!("{}#{bi}", u.id);
        let m = match stage {
            Stage::X => x.x,
            Stage::Y => {
                let w = if cfg.uniform_attention {
                    vec![1.0 / cfg.f as f64; cfg.f]
                } else {
                    attention::nin_forward(&x, &nin)?
                };
                attention::apply_attention(&x, &w)?
            }
            Stage::Z => {
                let w = if cfg.uniform_attention {
                    vec![1.0 / cfg.f as f64; cfg.f]
                } else {
                    attention::nin_forward(&x, &nin)?
                };
                let y = attention::apply_attention(&x, &w)?;
                let z = attention::soft_attention_norm(&y, cfg.c)?;
                attention::prune_center(&z, cfg.t_keep)?
            }
            Stage::Mel => unreachable!(),
        };
        for i in 0..cfg.f {
            out.row_mut(i)[bi * per_window..(bi + 1) * per_window].copy_from_slice(m.row(i));
        }
    }
    Ok(out)
}
