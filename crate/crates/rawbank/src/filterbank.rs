//! Parametric cosine-modulated Gaussian kernels, their analytic gradients,
//! and the conv→square→pool→log pass producing the f×t feature block.
//!
//! Each sub-band kernel is `w_i(n) = cos(2πμ_i n) · exp(−n²μ_i²/2)` with
//! `n` an integer tap index in samples and `μ_i` the center frequency in
//! cycles per sample. The Gaussian width is tied to the center frequency
//! (σ = 1/μ samples), so `mu` is the only learnable vector.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::mat::{axpy, dot, Mat};
use crate::signal::{hz_to_mel, mel_to_hz, FrameBlock, LOG_FLOOR};

/// Lower clamp for center frequencies (60 Hz at 16 kHz).
pub const MU_MIN: f64 = 0.00375;
/// Upper clamp for center frequencies (7600 Hz at 16 kHz).
pub const MU_MAX: f64 = 0.475;

/// The learnable filterbank: center frequencies plus the shared tap count.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankParams {
    /// Center frequencies in cycles/sample, one per sub-band. Order is the
    /// band order of the feature rows; values may cross during training.
    pub mu: Vec<f64>,
    /// Taps per kernel; odd so n=0 sits on a tap.
    pub k: usize,
}

impl FilterbankParams {
    pub fn new(mu: Vec<f64>, k: usize) -> Result<Self> {
        let p = FilterbankParams { mu, k };
        p.validate()?;
        Ok(p)
    }

    #[inline]
    pub fn f(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() {
            return Err(Error::Argument("filterbank needs at least one band".into()));
        }
        if self.k % 2 == 0 || self.k == 0 {
            return Err(Error::Argument(format!(
                "kernel length k={} must be odd",
                self.k
            )));
        }
        for (i, &m) in self.mu.iter().enumerate() {
            if !(m > 0.0 && m < 0.5) || !m.is_finite() {
                return Err(Error::Domain(format!(
                    "mu[{i}] = {m} outside the open interval (0, 0.5) cycles/sample"
                )));
            }
        }
        Ok(())
    }
}

/// Log sub-band energies for one context window: `f` bands × `t` frames.
#[derive(Debug, Clone)]
pub struct FeatureBlock {
    pub x: Mat,
    /// Caller-assigned origin label (utterance id / window index).
    pub source: String,
}

fn check_kernel_args(mu: f64, k: usize) -> Result<()> {
    if !(mu > 0.0 && mu < 0.5) || !mu.is_finite() {
        return Err(Error::Domain(format!(
            "center frequency {mu} outside the open interval (0, 0.5) cycles/sample"
        )));
    }
    if k % 2 == 0 || k == 0 {
        return Err(Error::Argument(format!("kernel length k={k} must be odd")));
    }
    Ok(())
}

/// Kernel taps at integer n ∈ {−(k−1)/2, …, +(k−1)/2}. No normalization;
/// downstream log and normalization absorb scale. The tap array is built
/// by mirroring the n ≥ 0 half, so it is palindromic bit-for-bit.
pub fn make_kernel(mu: f64, k: usize) -> Result<Vec<f64>> {
    check_kernel_args(mu, k)?;
    let c = (k - 1) / 2;
    let mut w = vec![0.0; k];
    for n in 0..=c {
        let nf = n as f64;
        let v = (TAU * mu * nf).cos() * (-0.5 * nf * nf * mu * mu).exp();
        w[c + n] = v;
        w[c - n] = v;
    }
    Ok(w)
}

/// Analytic d w(n)/d μ:
/// `−2πn·sin(2πμn)·exp(−n²μ²/2) − n²μ·cos(2πμn)·exp(−n²μ²/2)`.
/// Even in n (both terms), so it is mirrored like the kernel itself.
pub fn kernel_grad_mu(mu: f64, k: usize) -> Result<Vec<f64>> {
    check_kernel_args(mu, k)?;
    let c = (k - 1) / 2;
    let mut g = vec![0.0; k];
    for n in 0..=c {
        let nf = n as f64;
        let env = (-0.5 * nf * nf * mu * mu).exp();
        let v =
            -TAU * nf * (TAU * mu * nf).sin() * env - nf * nf * mu * (TAU * mu * nf).cos() * env;
        g[c + n] = v;
        g[c - n] = v;
    }
    Ok(g)
}

/// Center frequencies equally spaced on the mel scale between `mu_min` and
/// `mu_max` (spacing done in Hz via the sample rate, stored back in
/// cycles/sample). Stands in for unsupervised pretraining of μ; an external
/// μ-vector can be supplied instead where a pretrained init exists.
pub fn mel_init(
    f: usize,
    sample_rate: u32,
    mu_min: f64,
    mu_max: f64,
    k: usize,
) -> Result<FilterbankParams> {
    if f < 2 {
        return Err(Error::Argument(format!("mel init needs f >= 2, got {f}")));
    }
    if sample_rate == 0 {
        return Err(Error::Argument("sample_rate must be positive".into()));
    }
    check_kernel_args(mu_min, k)?;
    check_kernel_args(mu_max, k)?;
    if mu_min >= mu_max {
        return Err(Error::Domain(format!(
            "mu_min {mu_min} must be below mu_max {mu_max}"
        )));
    }
    let sr = sample_rate as f64;
    let lo = hz_to_mel(mu_min * sr);
    let hi = hz_to_mel(mu_max * sr);
    let mu = (0..f)
        .map(|i| {
            let mel = lo + (hi - lo) * i as f64 / (f - 1) as f64;
            // The Hz round trip can land a whisker outside the bounds;
            // endpoints must hit them exactly (the optimizer clamps to
            // the same range and must not move a frozen bank).
            (mel_to_hz(mel) / sr).clamp(mu_min, mu_max)
        })
        .collect();
    FilterbankParams::new(mu, k)
}

/// Intermediate products of one forward pass, kept so the backward pass
/// does not redo the convolution.
pub(crate) struct ConvCache {
    /// Folded frame samples, `[j][n][m]`: frame × half-tap index × output.
    folded: Vec<f64>,
    /// Convolution outputs, `[j][i][m]`: frame × band × output.
    conv: Vec<f64>,
    /// Mean squared conv output per band and frame (pre-log).
    pool: Mat,
    m_out: usize,
}

/// Forward pass retaining the cache needed by
/// [`backward_from_cache`]. The public entry points wrap this.
pub(crate) fn forward_with_cache(
    frames: &FrameBlock,
    params: &FilterbankParams,
) -> Result<(FeatureBlock, ConvCache)> {
    params.validate()?;
    let (s, t, k, f) = (frames.s(), frames.t(), params.k, params.f());
    if s < k {
        return Err(Error::Argument(format!(
            "frame length s={s} shorter than kernel length k={k}"
        )));
    }
    let c = (k - 1) / 2;
    let m_out = s - k + 1;

    // Half-kernels: index n holds the tap at ±n. Because every kernel is
    // palindromic, folding the frame once per frame position lets all f
    // bands share the same folded sums, halving the multiply count.
    let mut half = Mat::zeros(f, c + 1);
    for (i, &mu) in params.mu.iter().enumerate() {
        for n in 0..=c {
            let nf = n as f64;
            half.row_mut(i)[n] = (TAU * mu * nf).cos() * (-0.5 * nf * nf * mu * mu).exp();
        }
    }

    let mut folded = vec![0.0; t * (c + 1) * m_out];
    let mut conv = vec![0.0; t * f * m_out];
    let mut pool = Mat::zeros(f, t);
    let mut x = Mat::zeros(f, t);
    for j in 0..t {
        let fr = frames.frame(j);
        let fold_j = &mut folded[j * (c + 1) * m_out..(j + 1) * (c + 1) * m_out];
        fold_j[..m_out].copy_from_slice(&fr[c..c + m_out]);
        for n in 1..=c {
            let dst = &mut fold_j[n * m_out..(n + 1) * m_out];
            let lo = &fr[c - n..c - n + m_out];
            let hi = &fr[c + n..c + n + m_out];
            for ((d, &a), &b) in dst.iter_mut().zip(lo).zip(hi) {
                *d = a + b;
            }
        }
        let fold_j = &folded[j * (c + 1) * m_out..(j + 1) * (c + 1) * m_out];
        for i in 0..f {
            let hk = half.row(i);
            let cv = &mut conv[(j * f + i) * m_out..(j * f + i + 1) * m_out];
            for (d, &src) in cv.iter_mut().zip(&fold_j[..m_out]) {
                *d = hk[0] * src;
            }
            for n in 1..=c {
                axpy(hk[n], &fold_j[n * m_out..(n + 1) * m_out], cv);
            }
            let energy: f64 = cv.iter().map(|v| v * v).sum();
            let p = energy / m_out as f64;
            *pool.at_mut(i, j) = p;
            *x.at_mut(i, j) = (p + LOG_FLOOR).ln();
        }
    }
    let block = FeatureBlock {
        x,
        source: String::new(),
    };
    Ok((
        block,
        ConvCache {
            folded,
            conv,
            pool,
            m_out,
        },
    ))
}

/// Gradient w.r.t. μ given the upstream gradient on the log features.
/// Chains through log, mean pooling, the square, the convolution taps, and
/// finally [`kernel_grad_mu`]. Input-sample gradients are not produced
/// (this is the first layer).
pub(crate) fn backward_from_cache(
    frames: &FrameBlock,
    params: &FilterbankParams,
    cache: &ConvCache,
    upstream: &Mat,
) -> Result<Vec<f64>> {
    let (t, k, f) = (frames.t(), params.k, params.f());
    if upstream.rows() != f || upstream.cols() != t {
        return Err(Error::Argument(format!(
            "upstream gradient is {}x{}, expected {f}x{t}",
            upstream.rows(),
            upstream.cols()
        )));
    }
    let c = (k - 1) / 2;
    let m_out = cache.m_out;

    // d loss / d half-tap, accumulated over frames. The fold already merged
    // taps ±n, and the μ-derivative is even in n, so half-taps carry the
    // whole chain.
    let mut dhalf = Mat::zeros(f, c + 1);
    for j in 0..t {
        let fold_j = &cache.folded[j * (c + 1) * m_out..(j + 1) * (c + 1) * m_out];
        for i in 0..f {
            let u = upstream.at(i, j);
            if u == 0.0 {
                continue;
            }
            let a = 2.0 * u / ((cache.pool.at(i, j) + LOG_FLOOR) * m_out as f64);
            let cv = &cache.conv[(j * f + i) * m_out..(j * f + i + 1) * m_out];
            let dh = dhalf.row_mut(i);
            for n in 0..=c {
                dh[n] += a * dot(cv, &fold_j[n * m_out..(n + 1) * m_out]);
            }
        }
    }

    let mut dmu = vec![0.0; f];
    for (i, &mu) in params.mu.iter().enumerate() {
        let g = kernel_grad_mu(mu, k)?;
        // Half-gradient: entry n of g at offset c+n.
        dmu[i] = dhalf
            .row(i)
            .iter()
            .enumerate()
            .map(|(n, &dh)| dh * g[c + n])
            .sum();
    }
    Ok(dmu)
}

/// Per band i and frame j: valid-mode convolution of kernel i with the
/// frame's s samples (s−k+1 outputs), squared, mean-pooled, then
/// `ln(mean + ε)`.
pub fn filterbank_forward(frames: &FrameBlock, params: &FilterbankParams) -> Result<FeatureBlock> {
    Ok(forward_with_cache(frames, params)?.0)
}

/// Exact reverse-mode gradient of `⟨upstream, filterbank_forward⟩` w.r.t. μ.
pub fn filterbank_backward(
    frames: &FrameBlock,
    params: &FilterbankParams,
    upstream: &Mat,
) -> Result<Vec<f64>> {
    let (_, cache) = forward_with_cache(frames, params)?;
    backward_from_cache(frames, params, &cache, upstream)
}
