//! Audio ingestion, context-window framing, mel baseline features, and
//! running-window CMVN.

use std::path::Path;

use crate::dsp;
use crate::error::{Error, Result};
use crate::mat::{self, Mat};
use crate::wav;

/// Log floor applied wherever a log of energy is taken.
pub const LOG_FLOOR: f64 = 1e-10;

/// Frame period of the mel/CMVN feature path, in seconds (10 ms hop).
pub const FRAME_PERIOD_S: f64 = 0.010;

/// Frame length of the mel feature path, in seconds (25 ms window).
pub const FRAME_LEN_S: f64 = 0.025;

#[derive(Debug, Clone)]
pub struct Utterance {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub id: String,
}

impl Utterance {
    pub fn new(samples: Vec<f64>, sample_rate: u32, id: impl Into<String>) -> Self {
        Utterance {
            samples,
            sample_rate,
            id: id.into(),
        }
    }
}

/// A context window of `t` frames, each `s` samples long.
///
/// Frames are stored frame-major (row `j` is frame `j`), so each frame is a
/// contiguous slice for the convolution path. `t` is odd, giving the window
/// a well-defined center frame.
#[derive(Debug, Clone)]
pub struct FrameBlock {
    data: Mat, // t rows of s samples
    frame_shift: usize,
    center_index: usize,
}

impl FrameBlock {
    #[inline]
    pub fn s(&self) -> usize {
        self.data.cols()
    }

    #[inline]
    pub fn t(&self) -> usize {
        self.data.rows()
    }

    #[inline]
    pub fn frame_shift(&self) -> usize {
        self.frame_shift
    }

    #[inline]
    pub fn center_index(&self) -> usize {
        self.center_index
    }

    /// Samples of frame `j` (column `j` of the logical `s×t` matrix).
    #[inline]
    pub fn frame(&self, j: usize) -> &[f64] {
        self.data.row(j)
    }

    /// Total span in samples: `s + (t-1)·shift`.
    pub fn span(&self) -> usize {
        self.s() + (self.t() - 1) * self.frame_shift
    }

    /// Build a block directly from frame rows. Intended for tests and for
    /// synthetic inputs; `frame_signal` is the normal constructor.
    pub fn from_frames(data: Mat, frame_shift: usize) -> Result<Self> {
        let t = data.rows();
        if t == 0 || data.cols() == 0 {
            return Err(Error::Argument("frame block must be non-empty".into()));
        }
        if t % 2 == 0 {
            return Err(Error::Argument(format!("context length t={t} must be odd")));
        }
        Ok(FrameBlock {
            data,
            frame_shift,
            center_index: (t - 1) / 2,
        })
    }
}

pub fn load_wav(path: &Path) -> Result<Utterance> {
    let (samples, sample_rate) = wav::read_wav(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".into());
    Ok(Utterance {
        samples,
        sample_rate,
        id,
    })
}

/// Slice an utterance into overlapping context windows.
///
/// Frame `p` covers samples `[p·shift, p·shift + s)`; one block is emitted
/// per run of `t` consecutive complete frames, so consecutive blocks
/// overlap by `t-1` frames. Partial windows at the edges are dropped, and
/// an utterance shorter than one full window yields an empty sequence.
pub fn frame_signal(u: &Utterance, s: usize, t: usize, shift: usize) -> Result<Vec<FrameBlock>> {
    if s == 0 || t == 0 || shift == 0 {
        return Err(Error::Argument("s, t, and shift must be positive".into()));
    }
    if t % 2 == 0 {
        return Err(Error::Argument(format!("context length t={t} must be odd")));
    }
    let n = u.samples.len();
    if n < s {
        return Ok(Vec::new());
    }
    let total_frames = (n - s) / shift + 1;
    if total_frames < t {
        return Ok(Vec::new());
    }
    let n_blocks = total_frames - t + 1;
    let mut blocks = Vec::with_capacity(n_blocks);
    for p in 0..n_blocks {
        let mut data = Mat::zeros(t, s);
        for j in 0..t {
            let start = (p + j) * shift;
            data.row_mut(j)
                .copy_from_slice(&u.samples[start..start + s]);
        }
        blocks.push(FrameBlock {
            data,
            frame_shift: shift,
            center_index: (t - 1) / 2,
        });
    }
    Ok(blocks)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Peak frequencies (Hz) of the `f` triangular mel filters used by
/// [`mel_filterbank_features`]: equally spaced on the mel scale over
/// (0, Nyquist).
pub fn mel_band_centers(f: usize, sample_rate: u32) -> Vec<f64> {
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=f)
        .map(|i| mel_to_hz(mel_max * i as f64 / (f + 1) as f64))
        .collect()
}

/// Log mel filterbank energies: 25 ms Hamming frames at 10 ms hop,
/// magnitude-squared DFT, `f` triangular filters spanning 0 to Nyquist,
/// natural log with floor [`LOG_FLOOR`]. Returns an `f×T` matrix.
pub fn mel_filterbank_features(u: &Utterance, f: usize) -> Result<Mat> {
    if f < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 mel bands, got {f}"
        )));
    }
    if u.sample_rate == 0 {
        return Err(Error::Argument("sample_rate must be positive".into()));
    }
    let sr = u.sample_rate as f64;
    let win_len = (FRAME_LEN_S * sr).round() as usize;
    let hop = (FRAME_PERIOD_S * sr).round() as usize;
    let nfft = dsp::next_pow2(win_len);
    let n_bins = nfft / 2 + 1;

    // Triangular filters with peaks equally spaced on the mel scale.
    let mel_max = hz_to_mel(sr / 2.0);
    let pts: Vec<f64> = (0..f + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (f + 1) as f64))
        .collect();
    let hz_per_bin = sr / nfft as f64;
    let mut filters = Mat::zeros(f, n_bins);
    for b in 0..f {
        let (lo, mid, hi) = (pts[b], pts[b + 1], pts[b + 2]);
        for bin in 0..n_bins {
            let hz = bin as f64 * hz_per_bin;
            let w = if hz <= lo || hz >= hi {
                0.0
            } else if hz <= mid {
                (hz - lo) / (mid - lo)
            } else {
                (hi - hz) / (hi - mid)
            };
            *filters.at_mut(b, bin) = w;
        }
    }

    let n = u.samples.len();
    let n_frames = if n < win_len {
        0
    } else {
        (n - win_len) / hop + 1
    };
    let window = dsp::hamming(win_len);
    let mut out = Mat::zeros(f, n_frames);
    let mut frame = vec![0.0; win_len];
    for j in 0..n_frames {
        let start = j * hop;
        for (d, (&x, &w)) in frame
            .iter_mut()
            .zip(u.samples[start..start + win_len].iter().zip(&window))
        {
            *d = x * w;
        }
        let p = dsp::power_spectrum(&frame, nfft);
        for b in 0..f {
            let e = mat::dot(filters.row(b), &p);
            *out.at_mut(b, j) = (e + LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Per-coefficient mean/variance normalization over a centered running
/// window of the given duration (rows are assumed to advance at the 10 ms
/// feature hop). The window is clipped at the utterance edges, so a short
/// input degenerates to global CMVN. Std-dev is floored at 1e-8.
pub fn cmvn_running(feat: &Mat, window_secs: f64) -> Mat {
    let t = feat.cols();
    let mut out = Mat::zeros(feat.rows(), t);
    if t == 0 {
        return out;
    }
    let w = ((window_secs / FRAME_PERIOD_S).round() as usize).max(1);
    let half = w / 2;
    for i in 0..feat.rows() {
        let row = feat.row(i);
        // Prefix sums make each window O(1).
        let mut s = vec![0.0; t + 1];
        let mut q = vec![0.0; t + 1];
        for (j, &x) in row.iter().enumerate() {
            s[j + 1] = s[j] + x;
            q[j + 1] = q[j] + x * x;
        }
        for j in 0..t {
            let lo = j.saturating_sub(half);
            let hi = (j + half + 1).min(t);
            let n = (hi - lo) as f64;
            let m = (s[hi] - s[lo]) / n;
            let var = ((q[hi] - q[lo]) / n - m * m).max(0.0);
            let sd = var.sqrt().max(1e-8);
            *out.at_mut(i, j) = (row[j] - m) / sd;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_utt(n: usize) -> Utterance {
        Utterance::new(
            (0..n).map(|i| (i % 997) as f64 / 1000.0 - 0.45).collect(),
            16000,
            "ramp",
        )
    }

    #[test]
    fn default_block_spans_16400_samples() {
        let u = ramp_utt(16400);
        let blocks = frame_signal(&u, 400, 101, 160).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].span(), 16400);
        assert_eq!(blocks[0].center_index(), 50);
    }

    #[test]
    fn one_extra_shift_gives_second_overlapping_block() {
        let u = ramp_utt(16400 + 160);
        let blocks = frame_signal(&u, 400, 101, 160).unwrap();
        assert_eq!(blocks.len(), 2);
        // Overlap: frame j of block 1 is frame j+1 of block 0.
        for j in 0..100 {
            assert_eq!(blocks[0].frame(j + 1), blocks[1].frame(j));
        }
    }

    #[test]
    fn frames_are_exact_input_slices() {
        let u = ramp_utt(5000);
        let (s, t, shift) = (400, 5, 160);
        let blocks = frame_signal(&u, s, t, shift).unwrap();
        assert!(!blocks.is_empty());
        for (p, b) in blocks.iter().enumerate() {
            for j in 0..t {
                let start = (p + j) * shift;
                assert_eq!(
                    b.frame(j),
                    &u.samples[start..start + s],
                    "block {p} frame {j}"
                );
            }
        }
    }

    #[test]
    fn short_input_yields_empty_sequence_and_even_t_errors() {
        let u = ramp_utt(300);
        assert!(frame_signal(&u, 400, 101, 160).unwrap().is_empty());
        let u2 = ramp_utt(20000);
        assert!(frame_signal(&u2, 400, 100, 160).is_err());
    }

    #[test]
    fn silence_mel_features_sit_on_log_floor() {
        let u = Utterance::new(vec![0.0; 8000], 16000, "silence");
        let m = mel_filterbank_features(&u, 10).unwrap();
        assert!(m.cols() > 0);
        let floor = LOG_FLOOR.ln();
        for &v in m.as_slice() {
            assert!((v - floor).abs() < 1e-12);
        }
    }

    #[test]
    fn mel_features_are_shift_covariant() {
        let u = ramp_utt(8000);
        let a = mel_filterbank_features(&u, 12).unwrap();
        let mut delayed = vec![0.0; 160];
        delayed.extend_from_slice(&u.samples);
        let b = mel_filterbank_features(&Utterance::new(delayed, 16000, "d"), 12).unwrap();
        assert_eq!(b.cols(), a.cols() + 1);
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                assert_eq!(a.at(i, j), b.at(i, j + 1), "band {i} frame {j}");
            }
        }
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 700.0, 4000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
        // Fixed point of the scale definition: 1000 Hz ≈ 1000 mel.
        assert!((hz_to_mel(1000.0) - 999.98).abs() < 0.1);
    }

    #[test]
    fn cmvn_constant_row_maps_to_zero() {
        let feat = Mat::from_fn(3, 50, |i, _| i as f64 * 2.0 + 1.0);
        let z = cmvn_running(&feat, 1.0);
        for &v in z.as_slice() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn cmvn_short_input_equals_global() {
        let feat = Mat::from_fn(2, 30, |i, j| (i as f64 + 1.0) * (j as f64).sin());
        let z = cmvn_running(&feat, 1.0); // 100-frame window ≫ 30 frames
        for i in 0..2 {
            let row = feat.row(i);
            let m = crate::mat::mean(row);
            let sd = crate::mat::pop_variance(row).sqrt();
            for j in 0..30 {
                assert!((z.at(i, j) - (row[j] - m) / sd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cmvn_ramp_centers_vanish_away_from_edges() {
        // On a linear ramp the centered window mean equals the center value,
        // so normalized interior frames are exactly zero.
        let feat = Mat::from_fn(1, 200, |_, j| (j + 1) as f64);
        let z = cmvn_running(&feat, 1.0); // 100 frames -> half-width 50
        for j in 50..150 {
            assert!(z.at(0, j).abs() < 1e-9, "frame {j}: {}", z.at(0, j));
        }
        // Edge frames see a clipped, asymmetric window and do not vanish.
        assert!(z.at(0, 0).abs() > 1e-3);
    }

    #[test]
    fn cmvn_window_stats_are_normalized() {
        let feat = Mat::from_fn(2, 120, |i, j| ((i * 31 + j * 7) % 13) as f64 - 6.0);
        let w = 100usize;
        let half = w / 2;
        let _ = cmvn_running(&feat, 1.0);
        for i in 0..feat.rows() {
            let row = feat.row(i);
            for j in 0..feat.cols() {
                let lo = j.saturating_sub(half);
                let hi = (j + half + 1).min(feat.cols());
                let win = &row[lo..hi];
                let sd = crate::mat::pop_variance(win).sqrt();
                if sd <= 1e-6 {
                    continue;
                }
                let m = crate::mat::mean(win);
                let norm: Vec<f64> = win.iter().map(|&x| (x - m) / sd).collect();
                assert!(crate::mat::mean(&norm).abs() < 1e-10);
                assert!((crate::mat::pop_variance(&norm).sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }
}
