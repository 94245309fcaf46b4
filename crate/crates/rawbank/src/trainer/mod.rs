//! End-to-end training: labeled utterances are cut into context windows,
//! every window flows through filterbank, attention, and classifier head,
//! and Adam updates the packed parameter vector from hand-derived
//! gradients. Also hosts whole-utterance evaluation by majority vote.

pub mod synth;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::attention::{self, AttentionOutput, NinParams};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::filterbank::{self, FeatureBlock, FilterbankParams};
use crate::mat::{self, Mat};
use crate::model::{self, FlatParams, ModelParams, OptState};
use crate::seeds::derive_seed;
use crate::signal::{FrameBlock, Utterance};
use crate::trainer::synth::{Dataset, Split};

/// Number of complete context windows a signal of `n` samples yields.
pub fn n_windows(n: usize, cfg: &TrainConfig) -> usize {
    if n < cfg.s {
        return 0;
    }
    let frames = (n - cfg.s) / cfg.shift + 1;
    frames.saturating_sub(cfg.t - 1)
}

/// Build window `block` (samples `[block·shift, block·shift + span)`)
/// without materializing the rest.
pub fn make_window(u: &Utterance, cfg: &TrainConfig, block: usize) -> Result<FrameBlock> {
    let total = n_windows(u.samples.len(), cfg);
    if block >= total {
        return Err(Error::Argument(format!(
            "window {block} out of range: {} samples yield {total} windows",
            u.samples.len()
        )));
    }
    let mut data = Mat::zeros(cfg.t, cfg.s);
    for j in 0..cfg.t {
        let start = (block + j) * cfg.shift;
        data.row_mut(j)
            .copy_from_slice(&u.samples[start..start + cfg.s]);
    }
    FrameBlock::from_frames(data, cfg.shift)
}

/// Up to `limit` evenly spaced window indices out of `total` (`limit` 0
/// means all). Midpoint spacing keeps the picks distinct and symmetric.
pub fn window_plan(total: usize, limit: usize) -> Vec<usize> {
    if limit == 0 || limit >= total {
        return (0..total).collect();
    }
    (0..limit)
        .map(|i| (2 * i + 1) * total / (2 * limit))
        .collect()
}

/// Everything the forward pass produces for one window.
#[derive(Debug, Clone)]
pub struct WindowForward {
    pub x: FeatureBlock,
    pub att: AttentionOutput,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn window_forward(
    block: &FrameBlock,
    fb: &FilterbankParams,
    nin: &NinParams,
    head: &ModelParams,
    cfg: &TrainConfig,
    source: &str,
) -> Result<WindowForward> {
    let (mut x, _) = filterbank::forward_with_cache(block, fb)?;
    x.source = source.into();
    let att = if cfg.uniform_attention {
        attention::attention_forward_uniform(&x, cfg.c, cfg.t_keep)?
    } else {
        attention::attention_forward(&x, nin, cfg.c, cfg.t_keep)?
    };
    let logits = model::head_forward(&att.z, head)?;
    let probs = mat::softmax(&logits);
    Ok(WindowForward {
        x,
        att,
        logits,
        probs,
    })
}

/// Loss and parameter gradients for one labeled window.
pub(crate) struct WindowGrads {
    pub loss: f64,
    pub correct: bool,
    pub d_mu: Vec<f64>,
    pub d_nin: NinParams,
    pub d_head: ModelParams,
}

pub(crate) fn window_grads(
    block: &FrameBlock,
    fb: &FilterbankParams,
    nin: &NinParams,
    head: &ModelParams,
    cfg: &TrainConfig,
    target: usize,
) -> Result<WindowGrads> {
    let (x, cache) = filterbank::forward_with_cache(block, fb)?;
    let att = if cfg.uniform_attention {
        attention::attention_forward_uniform(&x, cfg.c, cfg.t_keep)?
    } else {
        attention::attention_forward(&x, nin, cfg.c, cfg.t_keep)?
    };
    let logits = model::head_forward(&att.z, head)?;
    let (loss, dlogits) = model::cross_entropy(&logits, target)?;
    let correct = argmax(&logits) == target;

    let (dz, d_head) = model::head_backward(&att.z, head, &dlogits)?;
    let (d_x, d_nin) = if cfg.uniform_attention {
        let d_x = attention::attention_backward_uniform(&x, cfg.c, cfg.t_keep, &dz)?;
        (d_x, NinParams::zeros(fb.f(), cfg.t, cfg.h))
    } else {
        let g = attention::attention_backward(&x, nin, cfg.c, cfg.t_keep, &dz)?;
        (g.d_x, g.d_nin)
    };
    let d_mu = filterbank::backward_from_cache(block, fb, &cache, &d_x)?;
    Ok(WindowGrads {
        loss,
        correct,
        d_mu,
        d_nin,
        d_head,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Per-epoch training diagnostics, serialized one JSON object per line.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Center-frequency snapshot after the epoch, cycles/sample.
    pub mu: Vec<f64>,
    /// Attention weights averaged over the validation windows.
    pub attention_mean: Vec<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    /// Train utterances actually used, per class, after label subsetting.
    pub train_counts: Vec<usize>,
}

/// One (utterance, window) pair in the training schedule.
type WindowRef = (usize, usize);

fn plan_split(
    ds: &Dataset,
    cfg: &TrainConfig,
    split: Split,
    limit: usize,
) -> Result<Vec<WindowRef>> {
    let mut out = Vec::new();
    for i in ds.indices(split) {
        let u = &ds.utts[i];
        let total = n_windows(u.utt.samples.len(), cfg);
        if total == 0 {
            return Err(Error::Degenerate(format!(
                "utterance {} ({} samples) is shorter than one context window ({} samples)",
                u.utt.id,
                u.utt.samples.len(),
                cfg.s + (cfg.t - 1) * cfg.shift
            )));
        }
        out.extend(window_plan(total, limit).into_iter().map(|b| (i, b)));
    }
    Ok(out)
}

fn check_dataset(ds: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if ds.n_classes < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 classes, got {}",
            ds.n_classes
        )));
    }
    if ds.sample_rate != cfg.sample_rate {
        return Err(Error::Argument(format!(
            "dataset sample rate {} does not match configured {}",
            ds.sample_rate, cfg.sample_rate
        )));
    }
    if ds.indices(Split::Train).is_empty() || ds.indices(Split::Val).is_empty() {
        return Err(Error::Argument(
            "dataset needs both train and val utterances".into(),
        ));
    }
    Ok(())
}

/// Train from scratch on the dataset's train split.
///
/// `mu_init` overrides the default mel-spaced center frequencies; values
/// must already lie inside the configured clamp range. The label fraction,
/// μ freezing, and the uniform-attention ablation all come from `cfg`.
pub fn train(cfg: &TrainConfig, ds: &Dataset, mu_init: Option<&[f64]>) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(ds, cfg)?;
    let ds = synth::subset_labels(ds, cfg.label_fraction, derive_seed(cfg.seed, 0x5ab, 0, 0))?;

    let fb = match mu_init {
        Some(mu) => {
            if mu.len() != cfg.f {
                return Err(Error::Argument(format!(
                    "mu init has {} values, config wants f={}",
                    mu.len(),
                    cfg.f
                )));
            }
            for (i, &m) in mu.iter().enumerate() {
                if !(m >= cfg.mu_min && m <= cfg.mu_max) {
                    return Err(Error::Domain(format!(
                        "mu init [{i}] = {m} outside the clamp range [{}, {}]",
                        cfg.mu_min, cfg.mu_max
                    )));
                }
            }
            FilterbankParams::new(mu.to_vec(), cfg.k)?
        }
        None => filterbank::mel_init(cfg.f, cfg.sample_rate, cfg.mu_min, cfg.mu_max, cfg.k)?,
    };
    let mut init_rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, 0x17, 0, 0));
    let nin = NinParams::init(cfg.f, cfg.t, cfg.h, &mut init_rng);
    let head = ModelParams::init(
        cfg.f * cfg.t_keep,
        &cfg.head_widths,
        ds.n_classes,
        &mut init_rng,
    );

    let mut flat = FlatParams::pack(&fb, &nin, &head);
    let mu_range = flat.mu_range()?;
    let mut opt = OptState::new(flat.data.len(), cfg.lr);

    let train_windows = plan_split(&ds, cfg, Split::Train, cfg.windows_per_utt)?;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order = train_windows.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, 0xe9, epoch as u64, 0));
        for j in (1..order.len()).rev() {
            order.swap(j, rng.gen_range(0..=j));
        }

        let mut loss_sum = 0.0;
        let mut n_correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (fb, nin, head) = flat.unpack(cfg.k)?;
            let scale = 1.0 / batch.len() as f64;
            let mut g_mu = vec![0.0; cfg.f];
            let mut g_nin = NinParams::zeros(cfg.f, cfg.t, cfg.h);
            let mut g_head = head.zeros_like();
            for &(ui, block) in batch {
                let u = &ds.utts[ui];
                let w = make_window(&u.utt, cfg, block)?;
                let g = window_grads(&w, &fb, &nin, &head, cfg, u.class)?;
                if !g.loss.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss at epoch {epoch}, utterance {}, window {block}",
                        u.utt.id
                    )));
                }
                loss_sum += g.loss;
                n_correct += g.correct as usize;
                mat::axpy(scale, &g.d_mu, &mut g_mu);
                g_nin.add_scaled(&g.d_nin, scale);
                g_head.add_scaled(&g.d_head, scale);
            }
            let mut grads =
                FlatParams::pack(&FilterbankParams { mu: g_mu, k: cfg.k }, &g_nin, &g_head);
            if cfg.freeze_mu {
                for g in &mut grads.data[mu_range.clone()] {
                    *g = 0.0;
                }
            }
            model::adam_step(
                &mut flat.data,
                &grads.data,
                &mut opt,
                Some((mu_range.clone(), cfg.mu_min, cfg.mu_max)),
            )?;
        }

        // Quick validation on the same per-utterance window budget, also
        // collecting the mean attention weights for the diagnostics row.
        let (fb, nin, head) = flat.unpack(cfg.k)?;
        let val_windows = plan_split(&ds, cfg, Split::Val, cfg.windows_per_utt)?;
        let mut votes: Vec<Vec<usize>> = vec![vec![0; ds.n_classes]; ds.utts.len()];
        let mut att_mean = vec![0.0; cfg.f];
        for &(ui, block) in &val_windows {
            let u = &ds.utts[ui];
            let w = make_window(&u.utt, cfg, block)?;
            let out = window_forward(&w, &fb, &nin, &head, cfg, &u.utt.id)?;
            votes[ui][argmax(&out.probs)] += 1;
            mat::axpy(1.0 / val_windows.len() as f64, &out.att.w, &mut att_mean);
        }
        let mut val_correct = 0usize;
        let val_utts = ds.indices(Split::Val);
        for &ui in &val_utts {
            if argmax_votes(&votes[ui]) == ds.utts[ui].class {
                val_correct += 1;
            }
        }

        metrics.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train_windows.len() as f64,
            train_acc: n_correct as f64 / train_windows.len() as f64,
            val_acc: val_correct as f64 / val_utts.len() as f64,
            mu: flat.data[mu_range.clone()].to_vec(),
            attention_mean: att_mean,
        });
    }

    let mut train_counts = vec![0usize; ds.n_classes];
    for &ui in &ds.indices(Split::Train) {
        train_counts[ds.utts[ui].class] += 1;
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(cfg.clone(), flat),
        metrics,
        train_counts,
    })
}

/// Vote counts to a prediction; ties go to the lowest class index.
fn argmax_votes(votes: &[usize]) -> usize {
    let mut best = 0;
    for i in 1..votes.len() {
        if votes[i] > votes[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n_utts: usize,
    pub n_windows: usize,
    /// Fraction of windows classified correctly.
    pub window_acc: f64,
    /// Fraction of utterances whose window majority vote is correct.
    pub utt_acc: f64,
    /// confusion[true][predicted], by utterance vote.
    pub confusion: Vec<Vec<usize>>,
}

/// Whole-utterance evaluation of a trained checkpoint. `windows_limit`
/// subsamples each utterance's windows (0 = use all).
pub fn evaluate(
    ckpt: &Checkpoint,
    ds: &Dataset,
    split: Split,
    windows_limit: usize,
) -> Result<EvalReport> {
    let cfg = &ckpt.config;
    check_dataset(ds, cfg)?;
    let (fb, nin, head) = ckpt.unpack()?;
    if head.n_classes() != ds.n_classes {
        return Err(Error::Argument(format!(
            "checkpoint head has {} classes, dataset has {}",
            head.n_classes(),
            ds.n_classes
        )));
    }
    let windows = plan_split(ds, cfg, split, windows_limit)?;

    let mut votes: Vec<Vec<usize>> = vec![vec![0; ds.n_classes]; ds.utts.len()];
    let mut window_correct = 0usize;
    for &(ui, block) in &windows {
        let u = &ds.utts[ui];
        let w = make_window(&u.utt, cfg, block)?;
        let out = window_forward(&w, &fb, &nin, &head, cfg, &u.utt.id)?;
        let pred = argmax(&out.probs);
        votes[ui][pred] += 1;
        window_correct += (pred == u.class) as usize;
    }

    let utts = ds.indices(split);
    let mut confusion = vec![vec![0usize; ds.n_classes]; ds.n_classes];
    let mut utt_correct = 0usize;
    for &ui in &utts {
        let pred = argmax_votes(&votes[ui]);
        confusion[ds.utts[ui].class][pred] += 1;
        utt_correct += (pred == ds.utts[ui].class) as usize;
    }
    Ok(EvalReport {
        n_utts: utts.len(),
        n_windows: windows.len(),
        window_acc: window_correct as f64 / windows.len() as f64,
        utt_acc: utt_correct as f64 / utts.len() as f64,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::desk_scale();
        cfg.f = 8;
        cfg.k = 33;
        cfg.s = 200;
        cfg.t = 9;
        cfg.t_keep = 5;
        cfg.shift = 100;
        cfg.h = 16;
        cfg.head_widths = vec![24];
        cfg.epochs = 2;
        cfg.batch_size = 8;
        cfg.windows_per_utt = 2;
        cfg
    }

    fn tiny_dataset(seed: u64) -> Dataset {
        let task = synth::SynthTask::band_id(3, 16000, Some(20.0), 2400, seed);
        synth::generate_dataset(&task, 5).unwrap()
    }

    #[test]
    fn window_count_matches_frame_signal() {
        let cfg = tiny_cfg();
        let u = Utterance::new(vec![0.0; 3000], 16000, "u");
        let blocks = crate::signal::frame_signal(&u, cfg.s, cfg.t, cfg.shift).unwrap();
        assert_eq!(blocks.len(), n_windows(3000, &cfg));
        assert!(n_windows(cfg.s - 1, &cfg) == 0);
        // Exactly one complete window.
        let span = cfg.s + (cfg.t - 1) * cfg.shift;
        assert_eq!(n_windows(span, &cfg), 1);
        assert_eq!(n_windows(span + cfg.shift - 1, &cfg), 1);
    }

    #[test]
    fn make_window_matches_frame_signal() {
        let cfg = tiny_cfg();
        let samples: Vec<f64> = (0..2600)
            .map(|i| ((i * 37) % 113) as f64 / 113.0 - 0.5)
            .collect();
        let u = Utterance::new(samples, 16000, "u");
        let blocks = crate::signal::frame_signal(&u, cfg.s, cfg.t, cfg.shift).unwrap();
        for (b, want) in blocks.iter().enumerate() {
            let got = make_window(&u, &cfg, b).unwrap();
            for j in 0..cfg.t {
                assert_eq!(got.frame(j), want.frame(j), "block {b} frame {j}");
            }
        }
        assert!(make_window(&u, &cfg, blocks.len()).is_err());
    }

    #[test]
    fn window_plan_is_even_and_exhaustive() {
        assert_eq!(window_plan(5, 0), vec![0, 1, 2, 3, 4]);
        assert_eq!(window_plan(3, 7), vec![0, 1, 2]);
        assert_eq!(window_plan(100, 2), vec![25, 75]);
        let picks = window_plan(78, 4);
        assert_eq!(picks.len(), 4);
        assert!(picks.windows(2).all(|p| p[0] < p[1]));
        assert!(
            picks[0] >= 4 && *picks.last().unwrap() <= 73,
            "picks hug the edges: {picks:?}"
        );
    }

    #[test]
    fn training_is_deterministic_and_loss_decreases() {
        let cfg = tiny_cfg();
        let ds = tiny_dataset(11);
        let a = train(&cfg, &ds, None).unwrap();
        let b = train(&cfg, &ds, None).unwrap();
        assert_eq!(a.checkpoint.params.data, b.checkpoint.params.data);
        assert_eq!(a.metrics.len(), 2);
        let first = a.metrics.first().unwrap().train_loss;
        let last = a.metrics.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        // μ stayed inside the clamp range.
        for m in &a.metrics.last().unwrap().mu {
            assert!(*m >= cfg.mu_min && *m <= cfg.mu_max);
        }
    }

    #[test]
    fn freeze_mu_pins_filters() {
        let mut cfg = tiny_cfg();
        cfg.freeze_mu = true;
        cfg.epochs = 1;
        let ds = tiny_dataset(12);
        let out = train(&cfg, &ds, None).unwrap();
        let init =
            filterbank::mel_init(cfg.f, cfg.sample_rate, cfg.mu_min, cfg.mu_max, cfg.k).unwrap();
        let trained = &out.metrics.last().unwrap().mu;
        for (a, b) in init.mu.iter().zip(trained) {
            assert_eq!(a, b, "frozen mu moved");
        }
    }

    #[test]
    fn mu_init_override_is_respected_and_validated() {
        let mut cfg = tiny_cfg();
        cfg.freeze_mu = true;
        cfg.epochs = 1;
        let ds = tiny_dataset(13);
        let mu: Vec<f64> = (0..cfg.f).map(|i| 0.05 + 0.04 * i as f64).collect();
        let out = train(&cfg, &ds, Some(&mu)).unwrap();
        assert_eq!(out.metrics.last().unwrap().mu, mu);

        let bad = vec![0.6; cfg.f];
        assert!(train(&cfg, &ds, Some(&bad)).is_err());
        assert!(train(&cfg, &ds, Some(&mu[..3])).is_err());
    }

    #[test]
    fn uniform_attention_reports_uniform_weights() {
        let mut cfg = tiny_cfg();
        cfg.uniform_attention = true;
        cfg.epochs = 1;
        let ds = tiny_dataset(14);
        let out = train(&cfg, &ds, None).unwrap();
        let att = &out.metrics.last().unwrap().attention_mean;
        for &w in att {
            assert!((w - 1.0 / cfg.f as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_covers_all_windows_and_votes() {
        let cfg = tiny_cfg();
        let ds = tiny_dataset(15);
        let out = train(&cfg, &ds, None).unwrap();
        let rep = evaluate(&out.checkpoint, &ds, Split::Val, 0).unwrap();
        assert_eq!(rep.n_utts, 3);
        let total: usize = rep.confusion.iter().flatten().sum();
        assert_eq!(total, rep.n_utts);
        // 2400 samples, 200/100 frames, t=9: 23 - 8 = 15 windows per utt.
        assert_eq!(rep.n_windows, 15 * 3);
        assert!(rep.utt_acc >= 0.0 && rep.utt_acc <= 1.0);
    }

    #[test]
    fn too_short_utterance_is_reported_by_id() {
        let cfg = tiny_cfg();
        let mut ds = tiny_dataset(16);
        ds.utts[2].utt.samples.truncate(300);
        let err = train(&cfg, &ds, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&ds.utts[2].utt.id), "got: {msg}");
    }

    #[test]
    fn sample_rate_mismatch_is_rejected() {
        let mut cfg = tiny_cfg();
        cfg.sample_rate = 8000;
        let ds = tiny_dataset(17);
        assert!(train(&cfg, &ds, None).is_err());
    }
}
