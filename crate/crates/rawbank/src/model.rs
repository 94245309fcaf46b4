//! Dense classifier head, cross-entropy loss, Adam, and the flattened
//! parameter vector that ties filterbank, attention, and head together for
//! the optimizer and the checkpoint format.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::attention::NinParams;
use crate::error::{Error, Result};
use crate::filterbank::FilterbankParams;
use crate::mat::{self, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Mat, // out × in
    pub b: Vec<f64>,
}

/// Head over the flattened f×t_keep block: dense+ReLU hidden layers, then
/// a linear layer producing class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<DenseLayer>,
}

fn he_layer(rng: &mut impl Rng, out: usize, inp: usize) -> DenseLayer {
    let sd = (2.0 / inp as f64).sqrt();
    let w = Mat::from_fn(out, inp, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        g * sd
    });
    DenseLayer {
        w,
        b: vec![0.0; out],
    }
}

impl ModelParams {
    /// He-initialized stack `in_dim -> hidden... -> n_classes`.
    pub fn init(in_dim: usize, hidden: &[usize], n_classes: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &hw in hidden {
            layers.push(he_layer(rng, hw, prev));
            prev = hw;
        }
        layers.push(he_layer(rng, n_classes, prev));
        ModelParams { layers }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    w: Mat::zeros(l.w.rows(), l.w.cols()),
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.w.cols()).unwrap_or(0)
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map(|l| l.w.rows()).unwrap_or(0)
    }

    pub(crate) fn add_scaled(&mut self, other: &ModelParams, a: f64) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            mat::axpy(a, src.w.as_slice(), dst.w.as_mut_slice());
            mat::axpy(a, &src.b, &mut dst.b);
        }
    }

    fn check_composition(&self, in_dim: usize) -> Result<()> {
        let mut prev = in_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.cols() != prev || l.b.len() != l.w.rows() {
                return Err(Error::Argument(format!(
                    "head layer {i} is {}x{} with bias {}, expected input width {prev}",
                    l.w.rows(),
                    l.w.cols(),
                    l.b.len()
                )));
            }
            prev = l.w.rows();
        }
        if self.layers.is_empty() {
            return Err(Error::Argument("head has no layers".into()));
        }
        Ok(())
    }
}

/// Flatten z row-major and run the dense stack; hidden layers ReLU, final
/// layer linear.
pub fn head_forward(z: &Mat, m: &ModelParams) -> Result<Vec<f64>> {
    m.check_composition(z.rows() * z.cols())?;
    let mut v = z.as_slice().to_vec();
    let last = m.layers.len() - 1;
    for (i, l) in m.layers.iter().enumerate() {
        let mut a = l.w.matvec(&v);
        for (x, b) in a.iter_mut().zip(&l.b) {
            *x += b;
        }
        if i < last {
            for x in a.iter_mut() {
                *x = x.max(0.0);
            }
        }
        v = a;
    }
    Ok(v)
}

/// Reverse-mode pass for the head: returns the gradient on z and
/// parameter gradients shaped like the model.
pub fn head_backward(z: &Mat, m: &ModelParams, dlogits: &[f64]) -> Result<(Mat, ModelParams)> {
    m.check_composition(z.rows() * z.cols())?;
    if dlogits.len() != m.n_classes() {
        return Err(Error::Argument(format!(
            "dlogits length {} does not match {} classes",
            dlogits.len(),
            m.n_classes()
        )));
    }
    // Forward again, retaining inputs and pre-activations per layer.
    let last = m.layers.len() - 1;
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(m.layers.len());
    let mut preacts: Vec<Vec<f64>> = Vec::with_capacity(m.layers.len());
    let mut v = z.as_slice().to_vec();
    for (i, l) in m.layers.iter().enumerate() {
        inputs.push(v.clone());
        let mut a = l.w.matvec(&v);
        for (x, b) in a.iter_mut().zip(&l.b) {
            *x += b;
        }
        preacts.push(a.clone());
        if i < last {
            for x in a.iter_mut() {
                *x = x.max(0.0);
            }
        }
        v = a;
    }

    let mut grads = m.zeros_like();
    let mut d = dlogits.to_vec();
    for i in (0..m.layers.len()).rev() {
        if i < last {
            for (g, &a) in d.iter_mut().zip(&preacts[i]) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        grads.layers[i].w.add_outer(&d, &inputs[i]);
        grads.layers[i].b.copy_from_slice(&d);
        d = m.layers[i].w.matvec_t(&d);
    }
    let dz = Mat::from_vec(z.rows(), z.cols(), d);
    Ok((dz, grads))
}

/// `−log softmax(logits)[target]` with max-subtraction, plus the logit
/// gradient `softmax − onehot`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::Argument(format!(
            "target class {target} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let log_sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let loss = log_sum - (logits[target] - max);
    let mut grad = mat::softmax(logits);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Adam accumulators over one flattened parameter vector.
#[derive(Debug, Clone)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    pub fn new(len: usize, lr: f64) -> Self {
        OptState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update with bias correction. `clamp` optionally pins a
/// sub-range of the vector (the μ region) into `[lo, hi]` after the step.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    st: &mut OptState,
    clamp: Option<(Range<usize>, f64, f64)>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != st.m.len() {
        return Err(Error::Argument(format!(
            "parameter/gradient/state lengths disagree: {} / {} / {}",
            params.len(),
            grads.len(),
            st.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged(format!(
            "non-finite gradient at parameter index {i} on step {}",
            st.step + 1
        )));
    }
    st.step += 1;
    let b1c = 1.0 - st.beta1.powi(st.step as i32);
    let b2c = 1.0 - st.beta2.powi(st.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
        let mhat = st.m[i] / b1c;
        let vhat = st.v[i] / b2c;
        params[i] -= st.lr * mhat / (vhat.sqrt() + st.eps);
    }
    if let Some((range, lo, hi)) = clamp {
        for p in &mut params[range] {
            *p = p.clamp(lo, hi);
        }
    }
    Ok(())
}

/// One named tensor inside a [`FlatParams`] vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable parameters in one contiguous vector with a manifest, in
/// the fixed order μ, NIN (w1, b1, w2, b2), head layers. The optimizer
/// walks the vector; the checkpoint format serializes it as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    pub data: Vec<f64>,
    pub entries: Vec<ParamEntry>,
}

impl FlatParams {
    pub fn pack(fb: &FilterbankParams, nin: &NinParams, head: &ModelParams) -> FlatParams {
        let mut data = Vec::new();
        let mut entries = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>, values: &[f64], data: &mut Vec<f64>| {
            entries.push(ParamEntry {
                name: name.into(),
                shape,
                offset: data.len(),
            });
            data.extend_from_slice(values);
        };
        push("mu", vec![fb.mu.len()], &fb.mu, &mut data);
        push(
            "nin.w1",
            vec![nin.w1.rows(), nin.w1.cols()],
            nin.w1.as_slice(),
            &mut data,
        );
        push("nin.b1", vec![nin.b1.len()], &nin.b1, &mut data);
        push(
            "nin.w2",
            vec![nin.w2.rows(), nin.w2.cols()],
            nin.w2.as_slice(),
            &mut data,
        );
        push("nin.b2", vec![nin.b2.len()], &nin.b2, &mut data);
        for (i, l) in head.layers.iter().enumerate() {
            push(
                &format!("head.{i}.w"),
                vec![l.w.rows(), l.w.cols()],
                l.w.as_slice(),
                &mut data,
            );
            push(&format!("head.{i}.b"), vec![l.b.len()], &l.b, &mut data);
        }
        FlatParams { data, entries }
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn tensor(&self, name: &str) -> Result<(&ParamEntry, &[f64])> {
        let e = self.entry(name).ok_or_else(|| {
            Error::Format(format!("parameter manifest is missing entry '{name}'"))
        })?;
        let end = e.offset + e.len();
        if end > self.data.len() {
            return Err(Error::Format(format!(
                "entry '{name}' spans {}..{end} beyond data length {}",
                e.offset,
                self.data.len()
            )));
        }
        Ok((e, &self.data[e.offset..end]))
    }

    /// Range of the μ entries inside `data` (for optimizer clamping and
    /// gradient freezing).
    pub fn mu_range(&self) -> Result<Range<usize>> {
        let (e, _) = self.tensor("mu")?;
        Ok(e.offset..e.offset + e.len())
    }

    /// Rebuild the typed parameter structs. `k` comes from the config; all
    /// other dimensions are read from the manifest shapes.
    pub fn unpack(&self, k: usize) -> Result<(FilterbankParams, NinParams, ModelParams)> {
        let (_, mu) = self.tensor("mu")?;
        let fb = FilterbankParams::new(mu.to_vec(), k)?;

        let (e_w1, w1) = self.tensor("nin.w1")?;
        let (_, b1) = self.tensor("nin.b1")?;
        let (e_w2, w2) = self.tensor("nin.w2")?;
        let (_, b2) = self.tensor("nin.b2")?;
        if e_w1.shape.len() != 2 || e_w2.shape.len() != 2 {
            return Err(Error::Format("nin weight entries must be rank 2".into()));
        }
        let nin = NinParams {
            w1: Mat::from_vec(e_w1.shape[0], e_w1.shape[1], w1.to_vec()),
            b1: b1.to_vec(),
            w2: Mat::from_vec(e_w2.shape[0], e_w2.shape[1], w2.to_vec()),
            b2: b2.to_vec(),
        };

        let mut layers = Vec::new();
        for i in 0.. {
            let name_w = format!("head.{i}.w");
            if self.entry(&name_w).is_none() {
                break;
            }
            let (e_w, w) = self.tensor(&name_w)?;
            let (_, b) = self.tensor(&format!("head.{i}.b"))?;
            if e_w.shape.len() != 2 {
                return Err(Error::Format(format!("entry '{name_w}' must be rank 2")));
            }
            layers.push(DenseLayer {
                w: Mat::from_vec(e_w.shape[0], e_w.shape[1], w.to_vec()),
                b: b.to_vec(),
            });
        }
        if layers.is_empty() {
            return Err(Error::Format(
                "parameter manifest has no head layers".into(),
            ));
        }
        Ok((fb, nin, ModelParams { layers }))
    }
}
