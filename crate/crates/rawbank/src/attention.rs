//! Soft self-attention over sub-bands: a small network-in-network turns
//! each f×t feature block into one weight vector on the simplex, the block
//! is reweighted, soft-normalized per band, and pruned to its center
//! frames. Includes the full reverse-mode pass.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filterbank::FeatureBlock;
use crate::mat::{self, Mat};

/// Weight-generator parameters: one hidden ReLU layer over the flattened
/// block, then a softmax output of width f.
#[derive(Debug, Clone, PartialEq)]
pub struct NinParams {
    pub w1: Mat, // h × (f·t)
    pub b1: Vec<f64>,
    pub w2: Mat, // f × h
    pub b2: Vec<f64>,
}

impl NinParams {
    pub fn zeros(f: usize, t: usize, h: usize) -> Self {
        NinParams {
            w1: Mat::zeros(h, f * t),
            b1: vec![0.0; h],
            w2: Mat::zeros(f, h),
            b2: vec![0.0; f],
        }
    }

    /// He-normal hidden weights, zeroed output layer, zero biases: every
    /// input maps to the exactly uniform weight vector at initialization.
    /// The feature inputs are raw log energies, far from zero mean, so a
    /// random output layer would start the softmax saturated on one band.
    pub fn init(f: usize, t: usize, h: usize, rng: &mut impl Rng) -> Self {
        let mut p = NinParams::zeros(f, t, h);
        let sd = (2.0 / (f * t) as f64).sqrt();
        for v in p.w1.as_mut_slice() {
            let g: f64 = rng.sample(StandardNormal);
            *v = sd * g;
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn check_against(&self, x: &Mat) -> Result<()> {
        let (f, t, h) = (x.rows(), x.cols(), self.hidden());
        if self.w1.rows() != h
            || self.w1.cols() != f * t
            || self.w2.rows() != f
            || self.w2.cols() != h
            || self.b2.len() != f
        {
            return Err(Error::Argument(format!(
                "attention parameter shapes (w1 {}x{}, w2 {}x{}) do not match a {f}x{t} block with hidden width {h}",
                self.w1.rows(),
                self.w1.cols(),
                self.w2.rows(),
                self.w2.cols()
            )));
        }
        Ok(())
    }

    /// out += a · other, entry-wise over all four tensors.
    pub(crate) fn add_scaled(&mut self, other: &NinParams, a: f64) {
        mat::axpy(a, other.w1.as_slice(), self.w1.as_mut_slice());
        mat::axpy(a, &other.b1, &mut self.b1);
        mat::axpy(a, other.w2.as_slice(), self.w2.as_mut_slice());
        mat::axpy(a, &other.b2, &mut self.b2);
    }
}

/// Everything one attention pass produces: the weight vector, the weighted
/// block, the normalized-and-pruned block, and the per-band statistics the
/// normalization used (cached for the backward pass).
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// Attention weights; non-negative, summing to 1.
    pub w: Vec<f64>,
    /// w_i · x[i][j], full f×t.
    pub y: Mat,
    /// Soft-normalized and center-pruned, f×t_keep.
    pub z: Mat,
    /// Per-band mean of y over frames.
    pub m: Vec<f64>,
    /// Per-band population std-dev of y over frames.
    pub sigma: Vec<f64>,
}

/// Gradients produced by [`attention_backward`]: the input block receives
/// gradient both directly through y and through the weight generator.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub d_x: Mat,
    pub d_nin: NinParams,
}

/// `w = softmax(W2 · relu(W1 · vec(x) + b1) + b2)` with `vec` flattening
/// the block row-major (band-major).
pub fn nin_forward(x: &FeatureBlock, p: &NinParams) -> Result<Vec<f64>> {
    p.check_against(&x.x)?;
    let (_, _, w) = nin_forward_cached(&x.x, p);
    Ok(w)
}

/// Forward pass keeping the hidden pre-activation and activation.
fn nin_forward_cached(x: &Mat, p: &NinParams) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut a1 = p.w1.matvec(x.as_slice());
    for (a, b) in a1.iter_mut().zip(&p.b1) {
        *a += b;
    }
    let h1: Vec<f64> = a1.iter().map(|&v| v.max(0.0)).collect();
    let mut logits = p.w2.matvec(&h1);
    for (a, b) in logits.iter_mut().zip(&p.b2) {
        *a += b;
    }
    (a1, h1, mat::softmax(&logits))
}

/// `y[i][j] = w_i · x[i][j]`. The weights must already be on the simplex.
pub fn apply_attention(x: &FeatureBlock, w: &[f64]) -> Result<Mat> {
    if w.len() != x.x.rows() {
        return Err(Error::Argument(format!(
            "weight vector length {} does not match {} bands",
            w.len(),
            x.x.rows()
        )));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Argument(format!(
            "attention weights sum to {sum}, expected 1"
        )));
    }
    let mut y = x.x.clone();
    for i in 0..y.rows() {
        let wi = w[i];
        for v in y.row_mut(i) {
            *v *= wi;
        }
    }
    Ok(y)
}

fn norm_with_stats(y: &Mat, c: f64) -> Result<(Mat, Vec<f64>, Vec<f64>)> {
    if !(c >= 0.0) {
        return Err(Error::Domain(format!(
            "relevance constant c={c} must be non-negative"
        )));
    }
    if y.cols() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 frames to normalize, got {}",
            y.cols()
        )));
    }
    let mut z = Mat::zeros(y.rows(), y.cols());
    let mut means = Vec::with_capacity(y.rows());
    let mut sigmas = Vec::with_capacity(y.rows());
    for i in 0..y.rows() {
        let row = y.row(i);
        let m = mat::mean(row);
        let var = mat::pop_variance(row);
        let d = (var + c).sqrt();
        if d == 0.0 {
            return Err(Error::Degenerate(format!(
                "band {i} is constant over frames and c = 0; nothing to normalize by"
            )));
        }
        for (o, &v) in z.row_mut(i).iter_mut().zip(row) {
            *o = (v - m) / d;
        }
        means.push(m);
        sigmas.push(var.sqrt());
    }
    Ok((z, means, sigmas))
}

/// Per band: `z[i][j] = (y[i][j] − m_i) / √(σ_i² + c)` with m_i the sample
/// mean over the window's frames and σ_i the population (1/t) std-dev.
/// The constant c soft-gates the variance: near-constant bands stay near
/// zero instead of being amplified to unit variance.
pub fn soft_attention_norm(y: &Mat, c: f64) -> Result<Mat> {
    Ok(norm_with_stats(y, c)?.0)
}

/// Keep the center `t_keep` columns: `[(t−t_keep)/2, (t+t_keep)/2)`.
pub fn prune_center(z: &Mat, t_keep: usize) -> Result<Mat> {
    let t = z.cols();
    if t_keep > t || t_keep % 2 == 0 || t % 2 == 0 || t_keep == 0 {
        return Err(Error::Argument(format!(
            "cannot prune {t} frames to {t_keep}: both must be odd and t_keep <= t"
        )));
    }
    let j0 = (t - t_keep) / 2;
    Ok(Mat::from_fn(z.rows(), t_keep, |i, j| z.at(i, j0 + j)))
}

/// Full attention pass: weight generation, reweighting, soft
/// normalization over all t frames, then center pruning. Normalization
/// happens before pruning; the statistics deliberately see all t frames.
pub fn attention_forward(
    x: &FeatureBlock,
    p: &NinParams,
    c: f64,
    t_keep: usize,
) -> Result<AttentionOutput> {
    p.check_against(&x.x)?;
    let (_, _, w) = nin_forward_cached(&x.x, p);
    finish_forward(x, w, c, t_keep)
}

/// Ablation path: fixed uniform weights, no weight generator.
pub fn attention_forward_uniform(
    x: &FeatureBlock,
    c: f64,
    t_keep: usize,
) -> Result<AttentionOutput> {
    let f = x.x.rows();
    finish_forward(x, vec![1.0 / f as f64; f], c, t_keep)
}

fn finish_forward(x: &FeatureBlock, w: Vec<f64>, c: f64, t_keep: usize) -> Result<AttentionOutput> {
    let y = apply_attention(x, &w)?;
    let (z_full, m, sigma) = norm_with_stats(&y, c)?;
    let z = prune_center(&z_full, t_keep)?;
    Ok(AttentionOutput { w, y, z, m, sigma })
}

/// Gradient of the normalization + pruning given `upstream` on the pruned
/// z. Returns d loss / d y (full f×t).
fn norm_prune_backward(
    y: &Mat,
    m: &[f64],
    sigma: &[f64],
    c: f64,
    t_keep: usize,
    upstream: &Mat,
) -> Mat {
    let (f, t) = (y.rows(), y.cols());
    let j0 = (t - t_keep) / 2;
    let mut dy = Mat::zeros(f, t);
    for i in 0..f {
        let d = (sigma[i] * sigma[i] + c).sqrt();
        // Scatter the pruned upstream back to full width.
        let mut dz = vec![0.0; t];
        for j in 0..t_keep {
            dz[j0 + j] = upstream.at(i, j);
        }
        let s1 = mat::mean(&dz);
        let yc: Vec<f64> = y.row(i).iter().map(|&v| v - m[i]).collect();
        let s2 = mat::dot(&dz, &yc);
        let scale = s2 / (t as f64 * d * d * d);
        for j in 0..t {
            *dy.at_mut(i, j) = (dz[j] - s1) / d - yc[j] * scale;
        }
    }
    dy
}

/// Exact reverse-mode gradients of `⟨upstream, attention z⟩` through
/// pruning, normalization (including the mean/variance dependence on y),
/// the elementwise product, the softmax, and both dense layers. Forward
/// intermediates are recomputed here; they are cheap next to the
/// convolution stage.
pub fn attention_backward(
    x: &FeatureBlock,
    p: &NinParams,
    c: f64,
    t_keep: usize,
    upstream: &Mat,
) -> Result<AttentionGrads> {
    p.check_against(&x.x)?;
    let (f, t) = (x.x.rows(), x.x.cols());
    if upstream.rows() != f || upstream.cols() != t_keep {
        return Err(Error::Argument(format!(
            "upstream gradient is {}x{}, expected {f}x{t_keep}",
            upstream.rows(),
            upstream.cols()
        )));
    }
    let (a1, h1, w) = nin_forward_cached(&x.x, p);
    let out = finish_forward(x, w.clone(), c, t_keep)?;
    let dy = norm_prune_backward(&out.y, &out.m, &out.sigma, c, t_keep, upstream);

    // y = w_i · x: gradient splits into the direct input path and the
    // weight path that re-enters through the softmax.
    let mut d_x = Mat::zeros(f, t);
    let mut dw = vec![0.0; f];
    for i in 0..f {
        let mut acc = 0.0;
        for j in 0..t {
            *d_x.at_mut(i, j) = dy.at(i, j) * w[i];
            acc += dy.at(i, j) * x.x.at(i, j);
        }
        dw[i] = acc;
    }

    // Softmax backward: dlogit_i = w_i (dw_i − Σ_k dw_k w_k).
    let inner = mat::dot(&dw, &w);
    let dlogits: Vec<f64> = (0..f).map(|i| w[i] * (dw[i] - inner)).collect();

    let mut d_nin = NinParams::zeros(f, t, p.hidden());
    d_nin.w2.add_outer(&dlogits, &h1);
    d_nin.b2.copy_from_slice(&dlogits);
    let dh1 = p.w2.matvec_t(&dlogits);
    let da1: Vec<f64> = dh1
        .iter()
        .zip(&a1)
        .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
        .collect();
    d_nin.w1.add_outer(&da1, x.x.as_slice());
    d_nin.b1.copy_from_slice(&da1);
    let dv = p.w1.matvec_t(&da1);
    mat::axpy(1.0, &dv, d_x.as_mut_slice());

    Ok(AttentionGrads { d_x, d_nin })
}

/// Backward pass for the uniform-weight ablation: only the direct input
/// path exists, scaled by the fixed 1/f.
pub fn attention_backward_uniform(
    x: &FeatureBlock,
    c: f64,
    t_keep: usize,
    upstream: &Mat,
) -> Result<Mat> {
    let f = x.x.rows();
    let out = attention_forward_uniform(x, c, t_keep)?;
    if upstream.rows() != f || upstream.cols() != t_keep {
        return Err(Error::Argument(format!(
            "upstream gradient is {}x{}, expected {f}x{t_keep}",
            upstream.rows(),
            upstream.cols()
        )));
    }
    let dy = norm_prune_backward(&out.y, &out.m, &out.sigma, c, t_keep, upstream);
    let mut d_x = dy;
    let inv_f = 1.0 / f as f64;
    for v in d_x.as_mut_slice() {
        *v *= inv_f;
    }
    Ok(d_x)
}
