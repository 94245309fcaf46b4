//! Synthetic labeled datasets: each class is a recipe of band-limited
//! components realized as amplitude-modulated tone clusters, plus
//! broadband noise at a target SNR.
//!
//! The modulation matters: the front-end removes each band's mean over the
//! context window, so a class is only learnable from how its band energy
//! moves across frames, not from a stationary energy profile. The slow AM
//! gives every in-class band that temporal structure while noise-only
//! bands stay near-stationary, which is exactly the contrast the soft
//! normalization gates on.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{derive_seed, fnv1a64};
use crate::signal::Utterance;
use crate::wav;

/// Tones per band-limited component; dense enough to read as a noise-like
/// band in a spectrogram, sparse enough to stay cheap.
const TONES_PER_COMPONENT: usize = 12;
/// Tones used to realize the optional high-band colored-noise floor.
const TONES_HIGH_BAND: usize = 40;
/// Target RMS of the clean class signal before noise is added.
const SIGNAL_RMS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BandComponent {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRecipe {
    pub components: Vec<BandComponent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecipe {
    /// Broadband white-noise SNR in dB relative to the class signal.
    /// `None` disables noise (the SNR → ∞ case).
    pub snr_db: Option<f64>,
    /// Optional stationary colored-noise band (realized as a dense tone
    /// cluster).
    pub high_band: Option<BandComponent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub classes: Vec<ClassRecipe>,
    pub noise: NoiseRecipe,
    pub sample_rate: u32,
    pub utt_samples: usize,
    pub seed: u64,
    /// Range of per-utterance amplitude-modulation rates applied to the
    /// class components, in Hz. `None` leaves components stationary,
    /// which makes classes invisible to the mean-removing front-end; keep
    /// it on for anything meant to be learned.
    pub am_rate_hz: Option<(f64, f64)>,
}

impl SynthTask {
    /// The band-ID task: `n` classes on disjoint 400 Hz-wide bands spread
    /// evenly from 500 Hz to 90% of Nyquist, with 5–12 Hz amplitude
    /// modulation. Spreading over the whole usable spectrum keeps the
    /// high filters from degenerating into pure noise collectors.
    pub fn band_id(
        n_classes: usize,
        sample_rate: u32,
        snr_db: Option<f64>,
        utt_samples: usize,
        seed: u64,
    ) -> Self {
        let hi_center = 0.45 * sample_rate as f64;
        let step = if n_classes > 1 {
            (hi_center - 500.0) / (n_classes - 1) as f64
        } else {
            0.0
        };
        let classes = (0..n_classes)
            .map(|c| ClassRecipe {
                components: vec![BandComponent {
                    center_hz: 500.0 + step * c as f64,
                    bandwidth_hz: 400.0,
                    amplitude: 1.0,
                }],
            })
            .collect();
        SynthTask {
            classes,
            noise: NoiseRecipe {
                snr_db,
                high_band: None,
            },
            sample_rate,
            utt_samples,
            seed,
            am_rate_hz: Some((5.0, 12.0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Synth("task has no classes".into()));
        }
        if self.sample_rate == 0 || self.utt_samples == 0 {
            return Err(Error::Synth(
                "sample_rate and utterance length must be positive".into(),
            ));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let all = self
            .classes
            .iter()
            .flat_map(|c| &c.components)
            .chain(self.noise.high_band.as_ref());
        for comp in all {
            if comp.center_hz + comp.bandwidth_hz / 2.0 >= nyquist {
                return Err(Error::Synth(format!(
                    "component at {} Hz ± {} Hz crosses the Nyquist frequency {nyquist} Hz",
                    comp.center_hz,
                    comp.bandwidth_hz / 2.0
                )));
            }
            if comp.amplitude < 0.0 {
                return Err(Error::Synth(format!(
                    "negative component amplitude {}",
                    comp.amplitude
                )));
            }
        }
        if let Some(snr) = self.noise.snr_db {
            if !snr.is_finite() {
                return Err(Error::Synth(format!(
                    "SNR {snr} dB is not finite; omit the noise term to disable it"
                )));
            }
        }
        if let Some((lo, hi)) = self.am_rate_hz {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Synth(format!("bad AM rate range ({lo}, {hi}) Hz")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Format(format!(
                "unknown split '{other}', expected train|val"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledUtterance {
    pub utt: Utterance,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub utts: Vec<LabeledUtterance>,
    pub n_classes: usize,
    pub sample_rate: u32,
}

impl Dataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.utts.len())
            .filter(|&i| self.utts[i].split == split)
            .collect()
    }

    pub fn count(&self, split: Split, class: usize) -> usize {
        self.utts
            .iter()
            .filter(|u| u.split == split && u.class == class)
            .count()
    }
}

fn synth_utterance(task: &SynthTask, class: usize, rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
    let n = task.utt_samples;
    let sr = task.sample_rate as f64;
    let mut sig = vec![0.0; n];
    for comp in &task.classes[class].components {
        add_tone_cluster(&mut sig, comp, TONES_PER_COMPONENT, sr, rng);
    }
    if let Some((lo, hi)) = task.am_rate_hz {
        let fm = rng.gen_range(lo..=hi);
        let phase = rng.gen_range(0.0..TAU);
        for (i, v) in sig.iter_mut().enumerate() {
            let env = 0.5 * (1.0 + (TAU * fm * i as f64 / sr + phase).sin());
            *v *= env;
        }
    }
    let power: f64 = sig.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if power == 0.0 {
        if task.noise.snr_db.is_some() {
            return Err(Error::Synth(
                "unreachable SNR: the class signal recipe has zero energy".into(),
            ));
        }
    } else {
        let scale = SIGNAL_RMS / power.sqrt();
        for v in sig.iter_mut() {
            *v *= scale;
        }
    }

    if let Some(hb) = &task.noise.high_band {
        add_tone_cluster(&mut sig, hb, TONES_HIGH_BAND, sr, rng);
    }
    if let Some(snr_db) = task.noise.snr_db {
        let p_sig = SIGNAL_RMS * SIGNAL_RMS;
        let sd = (p_sig * 10f64.powf(-snr_db / 10.0)).sqrt();
        for v in sig.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += sd * g;
        }
    }

    // Guard against clipping in the 16-bit container; scaling the whole
    // mix preserves the SNR.
    let peak = sig.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak > 0.99 {
        let s = 0.99 / peak;
        for v in sig.iter_mut() {
            *v *= s;
        }
    }
    Ok(sig)
}

fn add_tone_cluster(
    sig: &mut [f64],
    comp: &BandComponent,
    n_tones: usize,
    sr: f64,
    rng: &mut ChaCha20Rng,
) {
    let lo = comp.center_hz - comp.bandwidth_hz / 2.0;
    let hi = comp.center_hz + comp.bandwidth_hz / 2.0;
    let amp = comp.amplitude / n_tones as f64;
    for _ in 0..n_tones {
        let freq = rng.gen_range(lo..=hi);
        let phase = rng.gen_range(0.0..TAU);
        let step = TAU * freq / sr;
        for (i, v) in sig.iter_mut().enumerate() {
            *v += amp * (step * i as f64 + phase).sin();
        }
    }
}

/// Deterministic dataset realization: every utterance draws from its own
/// seeded stream (so generation order cannot matter), and train/val
/// assignment orders each class's ids by hash and sends the first 80% to
/// train.
pub fn generate_dataset(task: &SynthTask, n_per_class: usize) -> Result<Dataset> {
    task.validate()?;
    if n_per_class < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 utterances per class for a train/val split, got {n_per_class}"
        )));
    }
    let n_classes = task.classes.len();
    let n_train = (((n_per_class as f64) * 0.8).round() as usize).clamp(1, n_per_class - 1);

    let mut utts = Vec::with_capacity(n_classes * n_per_class);
    for class in 0..n_classes {
        // Hash-ordered split assignment, stable under reseeding.
        let ids: Vec<String> = (0..n_per_class)
            .map(|i| format!("c{class:02}_u{i:04}"))
            .collect();
        let mut order: Vec<usize> = (0..n_per_class).collect();
        order.sort_by_key(|&i| (fnv1a64(ids[i].as_bytes()), i));
        let train_set: BTreeSet<usize> = order[..n_train].iter().copied().collect();

        for i in 0..n_per_class {
            let mut rng =
                ChaCha20Rng::seed_from_u64(derive_seed(task.seed, 0x5e_ed, class as u64, i as u64));
            let samples = synth_utterance(task, class, &mut rng)?;
            utts.push(LabeledUtterance {
                utt: Utterance::new(samples, task.sample_rate, ids[i].clone()),
                class,
                split: if train_set.contains(&i) {
                    Split::Train
                } else {
                    Split::Val
                },
            });
        }
    }
    Ok(Dataset {
        utts,
        n_classes,
        sample_rate: task.sample_rate,
    })
}

/// Class-stratified reduction of the training labels; validation is left
/// untouched and the unlabeled remainder is discarded. Selected
/// utterances keep their original order, so fraction 1.0 is the identity.
pub fn subset_labels(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "label fraction {fraction} must be in (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(ds.clone());
    }
    let mut keep: BTreeSet<usize> = ds.indices(Split::Val).into_iter().collect();
    for class in 0..ds.n_classes {
        let members: Vec<usize> = ds
            .indices(Split::Train)
            .into_iter()
            .filter(|&i| ds.utts[i].class == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        let count = ((members.len() as f64) * fraction).round() as usize;
        if count == 0 {
            return Err(Error::Argument(format!(
                "label fraction {fraction} leaves class {class} with no training utterances"
            )));
        }
        let mut order = members.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 0xf4ac, class as u64, 0));
        // Fisher-Yates; rand's shuffle would also do but this keeps the
        // exact draw sequence pinned in-crate.
        for j in (1..order.len()).rev() {
            let pick = rng.gen_range(0..=j);
            order.swap(j, pick);
        }
        keep.extend(order[..count].iter().copied());
    }
    let utts = ds
        .utts
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, u)| u.clone())
        .collect();
    Ok(Dataset {
        utts,
        n_classes: ds.n_classes,
        sample_rate: ds.sample_rate,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    path: String,
    class: usize,
    split: String,
}

/// Write WAVs plus a JSON-lines manifest; returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir)?;
    let mut manifest = String::new();
    for u in &ds.utts {
        let rel = format!("wav/{}.wav", u.utt.id);
        wav::write_wav(&dir.join(&rel), &u.utt.samples, u.utt.sample_rate)?;
        let row = ManifestRow {
            id: u.utt.id.clone(),
            path: rel,
            class: u.class,
            split: u.split.as_str().into(),
        };
        manifest.push_str(&serde_json::to_string(&row).expect("manifest row serialization"));
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, manifest)?;
    Ok(path)
}

/// Load a dataset back from its manifest; WAV paths are resolved relative
/// to the manifest's directory.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let text = fs::read_to_string(manifest)?;
    let mut utts = Vec::new();
    let mut n_classes = 0;
    let mut sample_rate = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("manifest line {}: {e}", lineno + 1)))?;
        let (samples, rate) = wav::read_wav(&base.join(&row.path))?;
        match sample_rate {
            None => sample_rate = Some(rate),
            Some(r) if r != rate => {
                return Err(Error::Format(format!(
                    "manifest mixes sample rates ({r} and {rate}); resampling is unsupported"
                )))
            }
            _ => {}
        }
        n_classes = n_classes.max(row.class + 1);
        utts.push(LabeledUtterance {
            utt: Utterance::new(samples, rate, row.id),
            class: row.class,
            split: Split::parse(&row.split)?,
        });
    }
    if utts.is_empty() {
        return Err(Error::Format("manifest contains no utterances".into()));
    }
    Ok(Dataset {
        utts,
        n_classes,
        sample_rate: sample_rate.unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::mel_filterbank_features;

    fn small_task(snr_db: Option<f64>) -> SynthTask {
        SynthTask::band_id(4, 16000, snr_db, 3200, 7)
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small_task(Some(10.0)), 6).unwrap();
        let b = generate_dataset(&small_task(Some(10.0)), 6).unwrap();
        assert_eq!(a.utts.len(), b.utts.len());
        for (x, y) in a.utts.iter().zip(&b.utts) {
            assert_eq!(x.utt.samples, y.utt.samples, "utterance {}", x.utt.id);
            assert_eq!(x.split, y.split);
        }
    }

    #[test]
    fn split_is_stratified_80_20() {
        let ds = generate_dataset(&small_task(Some(10.0)), 10).unwrap();
        for class in 0..4 {
            assert_eq!(ds.count(Split::Train, class), 8);
            assert_eq!(ds.count(Split::Val, class), 2);
        }
    }

    #[test]
    fn clean_tone_class_dominates_its_mel_band() {
        // Noise off: the class band should hold the energy argmax of the
        // mel profile in every generated utterance.
        let task = small_task(None);
        let ds = generate_dataset(&task, 3).unwrap();
        let f = 40;
        for u in &ds.utts {
            let feat = mel_filterbank_features(&u.utt, f).unwrap();
            // Mean log energy per band.
            let profile: Vec<f64> = (0..f)
                .map(|b| feat.row(b).iter().sum::<f64>() / feat.cols() as f64)
                .collect();
            let best = (0..f)
                .max_by(|&a, &b| profile[a].total_cmp(&profile[b]))
                .unwrap();
            let comp = &task.classes[u.class].components[0];
            let centers = crate::signal::mel_band_centers(f, task.sample_rate);
            let got_hz = centers[best];
            assert!(
                (got_hz - comp.center_hz).abs() <= comp.bandwidth_hz,
                "utt {}: peak at {got_hz:.0} Hz, class band {:.0} Hz",
                u.utt.id,
                comp.center_hz
            );
        }
    }

    #[test]
    fn noisy_band_id_profiles_peak_in_class_band() {
        let task = small_task(Some(10.0));
        let ds = generate_dataset(&task, 6).unwrap();
        let f = 40;
        let centers = crate::signal::mel_band_centers(f, task.sample_rate);
        for class in 0..task.classes.len() {
            // Per-class mean profile over all its utterances.
            let mut profile = vec![0.0; f];
            let mut n = 0;
            for u in ds.utts.iter().filter(|u| u.class == class) {
                let feat = mel_filterbank_features(&u.utt, f).unwrap();
                for b in 0..f {
                    profile[b] += feat.row(b).iter().sum::<f64>() / feat.cols() as f64;
                }
                n += 1;
            }
            for v in profile.iter_mut() {
                *v /= n as f64;
            }
            let best = (0..f)
                .max_by(|&a, &b| profile[a].total_cmp(&profile[b]))
                .unwrap();
            let comp = &task.classes[class].components[0];
            assert!(
                (centers[best] - comp.center_hz).abs() <= comp.bandwidth_hz,
                "class {class}: mean profile peaks at {:.0} Hz",
                centers[best]
            );
        }
    }

    #[test]
    fn zero_energy_recipe_with_noise_is_rejected() {
        let mut task = small_task(Some(10.0));
        task.classes[0].components[0].amplitude = 0.0;
        let err = generate_dataset(&task, 2).unwrap_err();
        assert!(err.to_string().contains("zero energy"), "got: {err}");
    }

    #[test]
    fn nyquist_violations_are_rejected() {
        let mut task = small_task(None);
        task.classes[0].components[0].center_hz = 7990.0;
        assert!(generate_dataset(&task, 2).is_err());
    }

    #[test]
    fn subset_is_stratified_and_deterministic() {
        let ds = generate_dataset(&small_task(Some(10.0)), 10).unwrap();
        let half = subset_labels(&ds, 0.5, 3).unwrap();
        for class in 0..4 {
            assert_eq!(half.count(Split::Train, class), 4);
            assert_eq!(half.count(Split::Val, class), 2);
        }
        let again = subset_labels(&ds, 0.5, 3).unwrap();
        let ids = |d: &Dataset| d.utts.iter().map(|u| u.utt.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&half), ids(&again));

        let full = subset_labels(&ds, 1.0, 3).unwrap();
        assert_eq!(ids(&full), ids(&ds));

        assert!(subset_labels(&ds, 0.01, 3).is_err());
    }

    #[test]
    fn dataset_round_trips_through_manifest() {
        let ds = generate_dataset(&small_task(Some(10.0)), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&manifest).unwrap();
        assert_eq!(back.utts.len(), ds.utts.len());
        assert_eq!(back.n_classes, 4);
        assert_eq!(back.sample_rate, 16000);
        for (a, b) in ds.utts.iter().zip(&back.utts) {
            assert_eq!(a.utt.id, b.utt.id);
            assert_eq!(a.class, b.class);
            assert_eq!(a.split, b.split);
            assert_eq!(a.utt.samples.len(), b.utt.samples.len());
            for (x, y) in a.utt.samples.iter().zip(&b.utt.samples) {
                assert!((x - y).abs() <= 1.0 / 32768.0 + 1e-12);
            }
        }
    }
}
