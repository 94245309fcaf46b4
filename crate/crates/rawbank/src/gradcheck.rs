//! Central-difference verification of every hand-written gradient path,
//! block by block and end to end. The checker can also corrupt one
//! analytic gradient on purpose, which is how its own sensitivity is
//! tested.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::attention::{self, NinParams};
use crate::config::TrainConfig;
use crate::error::Result;
use crate::filterbank::{self, FeatureBlock, FilterbankParams};
use crate::mat::Mat;
use crate::model::{self, FlatParams, ModelParams};
use crate::seeds::derive_seed;
use crate::signal::FrameBlock;
use crate::trainer;

/// Finite-difference step.
const FD_STEP: f64 = 1e-6;
/// A block passes when every entry's relative error stays below this.
pub const PASS_TOL: f64 = 1e-4;

/// The independently checked gradient paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    FilterbankMu,
    AttentionNin,
    AttentionInput,
    Head,
    Pipeline,
}

#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: &'static str,
    pub n_checked: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub blocks: Vec<BlockReport>,
    pub pass: bool,
}

fn rel_err(a: f64, n: f64) -> f64 {
    // The floor keeps near-zero pairs from dividing noise by noise.
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Compare one analytic gradient vector against central differences of
/// `loss` along each coordinate of `params`.
fn check_entries(
    params: &mut [f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<(usize, f64)> {
    assert_eq!(params.len(), analytic.len());
    let mut max_err = 0.0f64;
    for i in 0..params.len() {
        let saved = params[i];
        params[i] = saved + FD_STEP;
        let up = loss(params)?;
        params[i] = saved - FD_STEP;
        let down = loss(params)?;
        params[i] = saved;
        let numeric = (up - down) / (2.0 * FD_STEP);
        max_err = max_err.max(rel_err(analytic[i], numeric));
    }
    Ok((params.len(), max_err))
}

struct Instance {
    cfg: TrainConfig,
    frames: FrameBlock,
    fb: FilterbankParams,
    nin: NinParams,
    head: ModelParams,
    /// Fixed random upstream gradient, f×t (truncated to f×t_keep where
    /// the pruned block is the output).
    upstream: Mat,
    target: usize,
}

fn build_instance(seed: u64) -> Instance {
    let mut cfg = TrainConfig::desk_scale();
    cfg.f = 4;
    cfg.k = 9;
    cfg.s = 48;
    cfg.t = 5;
    cfg.t_keep = 3;
    cfg.shift = 16;
    cfg.h = 6;
    cfg.head_widths = vec![10];
    let n_classes = 3;

    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 0x6c, 0, 0));
    let data = Mat::from_fn(cfg.t, cfg.s, |_, _| rng.gen_range(-0.5..0.5));
    let frames = FrameBlock::from_frames(data, cfg.shift).expect("odd t");
    let mu: Vec<f64> = (0..cfg.f)
        .map(|i| 0.06 + 0.09 * i as f64 + rng.gen_range(-0.01..0.01))
        .collect();
    let fb = FilterbankParams::new(mu, cfg.k).expect("mu in range");
    let mut nin = NinParams::init(cfg.f, cfg.t, cfg.h, &mut rng);
    // Generic-position parameters: the training init zeroes the output
    // layer, which would zero the hidden-layer gradients and make that
    // part of the check vacuous.
    for v in nin.w2.as_mut_slice() {
        *v = 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    for v in nin.b1.iter_mut() {
        *v = 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    for v in nin.b2.iter_mut() {
        *v = 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    let head = ModelParams::init(cfg.f * cfg.t_keep, &cfg.head_widths, n_classes, &mut rng);
    let upstream = Mat::from_fn(cfg.f, cfg.t, |_, _| rng.gen_range(-1.0..1.0));
    let target = rng.gen_range(0..n_classes);
    Instance {
        cfg,
        frames,
        fb,
        nin,
        head,
        upstream,
        target,
    }
}

fn feature_block(x: Mat) -> FeatureBlock {
    FeatureBlock {
        x,
        source: "gradcheck".into(),
    }
}

fn corrupt(grads: &mut [f64]) {
    // 1% relative plus an absolute floor: visible against both large and
    // vanishing true gradients.
    grads[0] = grads[0] * 1.01 + 1e-3;
}

/// Run all blocks; `sabotage` injects a deliberate error into the named
/// block's analytic gradient so a healthy checker must report a failure
/// there. Pass `None` for a normal run.
pub fn run_corrupted(seed: u64, sabotage: Option<Block>) -> Result<GradReport> {
    let inst = build_instance(seed);
    let cfg = &inst.cfg;
    let mut blocks = Vec::new();

    // Filterbank: loss = <upstream, log band energies>, gradient in μ.
    {
        let mut analytic = filterbank::filterbank_backward(&inst.frames, &inst.fb, &inst.upstream)?;
        if sabotage == Some(Block::FilterbankMu) {
            corrupt(&mut analytic);
        }
        let mut mu = inst.fb.mu.clone();
        let (n, err) = check_entries(&mut mu, &analytic, |m| {
            let p = FilterbankParams::new(m.to_vec(), cfg.k)?;
            let out = filterbank::filterbank_forward(&inst.frames, &p)?;
            Ok(dot_all(out.x.as_slice(), inst.upstream.as_slice()))
        })?;
        blocks.push(report("filterbank_mu", n, err));
    }

    // Attention, weight-generator parameters: loss = <upstream', z>.
    let x0 = filterbank::filterbank_forward(&inst.frames, &inst.fb)?;
    let up_keep = Mat::from_fn(cfg.f, cfg.t_keep, |i, j| inst.upstream.at(i, j));
    {
        let grads = attention::attention_backward(&x0, &inst.nin, cfg.c, cfg.t_keep, &up_keep)?;
        let mut flat_nin = pack_nin(&grads.d_nin);
        if sabotage == Some(Block::AttentionNin) {
            corrupt(&mut flat_nin);
        }
        let mut params = pack_nin(&inst.nin);
        let (n, err) = check_entries(&mut params, &flat_nin, |p| {
            let nin = unpack_nin(p, cfg.f, cfg.t, cfg.h);
            let out = attention::attention_forward(&x0, &nin, cfg.c, cfg.t_keep)?;
            Ok(dot_all(out.z.as_slice(), up_keep.as_slice()))
        })?;
        blocks.push(report("attention_nin", n, err));
    }

    // Attention, input features: same loss, gradient in x.
    {
        let grads = attention::attention_backward(&x0, &inst.nin, cfg.c, cfg.t_keep, &up_keep)?;
        let mut analytic = grads.d_x.as_slice().to_vec();
        if sabotage == Some(Block::AttentionInput) {
            corrupt(&mut analytic);
        }
        let mut x = x0.x.as_slice().to_vec();
        let (n, err) = check_entries(&mut x, &analytic, |v| {
            let xb = feature_block(Mat::from_vec(cfg.f, cfg.t, v.to_vec()));
            let out = attention::attention_forward(&xb, &inst.nin, cfg.c, cfg.t_keep)?;
            Ok(dot_all(out.z.as_slice(), up_keep.as_slice()))
        })?;
        blocks.push(report("attention_input", n, err));
    }

    // Head: real cross-entropy loss, gradients in both weights and input.
    {
        let att = attention::attention_forward(&x0, &inst.nin, cfg.c, cfg.t_keep)?;
        let logits = model::head_forward(&att.z, &inst.head)?;
        let (_, dlogits) = model::cross_entropy(&logits, inst.target)?;
        let (dz, dhead) = model::head_backward(&att.z, &inst.head, &dlogits)?;

        let mut analytic = pack_head(&dhead);
        analytic.extend_from_slice(dz.as_slice());
        if sabotage == Some(Block::Head) {
            corrupt(&mut analytic);
        }
        let mut params = pack_head(&inst.head);
        params.extend_from_slice(att.z.as_slice());
        let shapes: Vec<(usize, usize)> = inst
            .head
            .layers
            .iter()
            .map(|l| (l.w.rows(), l.w.cols()))
            .collect();
        let (n, err) = check_entries(&mut params, &analytic, |p| {
            let (head, rest) = unpack_head(p, &shapes);
            let z = Mat::from_vec(cfg.f, cfg.t_keep, rest.to_vec());
            let logits = model::head_forward(&z, &head)?;
            Ok(model::cross_entropy(&logits, inst.target)?.0)
        })?;
        blocks.push(report("head", n, err));
    }

    // Whole pipeline: training loss as a function of the packed parameter
    // vector, every coordinate.
    {
        let g = trainer::window_grads(
            &inst.frames,
            &inst.fb,
            &inst.nin,
            &inst.head,
            cfg,
            inst.target,
        )?;
        let mut analytic = FlatParams::pack(
            &FilterbankParams {
                mu: g.d_mu,
                k: cfg.k,
            },
            &g.d_nin,
            &g.d_head,
        )
        .data;
        if sabotage == Some(Block::Pipeline) {
            corrupt(&mut analytic);
        }
        let flat = FlatParams::pack(&inst.fb, &inst.nin, &inst.head);
        let entries = flat.entries.clone();
        let mut params = flat.data.clone();
        let (n, err) = check_entries(&mut params, &analytic, |p| {
            let flat = FlatParams {
                data: p.to_vec(),
                entries: entries.clone(),
            };
            let (fb, nin, head) = flat.unpack(cfg.k)?;
            let g = trainer::window_grads(&inst.frames, &fb, &nin, &head, cfg, inst.target)?;
            Ok(g.loss)
        })?;
        blocks.push(report("pipeline", n, err));
    }

    let pass = blocks.iter().all(|b| b.pass);
    Ok(GradReport { blocks, pass })
}

/// Normal run: every analytic gradient against central differences.
pub fn run(seed: u64) -> Result<GradReport> {
    run_corrupted(seed, None)
}

fn report(name: &'static str, n_checked: usize, max_rel_err: f64) -> BlockReport {
    BlockReport {
        name,
        n_checked,
        max_rel_err,
        pass: max_rel_err < PASS_TOL,
    }
}

fn dot_all(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pack_nin(p: &NinParams) -> Vec<f64> {
    let mut v = p.w1.as_slice().to_vec();
    v.extend_from_slice(&p.b1);
    v.extend_from_slice(p.w2.as_slice());
    v.extend_from_slice(&p.b2);
    v
}

fn unpack_nin(v: &[f64], f: usize, t: usize, h: usize) -> NinParams {
    let (w1, rest) = v.split_at(h * f * t);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(f * h);
    NinParams {
        w1: Mat::from_vec(h, f * t, w1.to_vec()),
        b1: b1.to_vec(),
        w2: Mat::from_vec(f, h, w2.to_vec()),
        b2: b2.to_vec(),
    }
}

fn pack_head(m: &ModelParams) -> Vec<f64> {
    let mut v = Vec::new();
    for l in &m.layers {
        v.extend_from_slice(l.w.as_slice());
        v.extend_from_slice(&l.b);
    }
    v
}

fn unpack_head<'a>(v: &'a [f64], shapes: &[(usize, usize)]) -> (ModelParams, &'a [f64]) {
    let mut rest = v;
    let mut layers = Vec::with_capacity(shapes.len());
    for &(r, c) in shapes {
        let (w, tail) = rest.split_at(r * c);
        let (b, tail) = tail.split_at(r);
        layers.push(crate::model::DenseLayer {
            w: Mat::from_vec(r, c, w.to_vec()),
            b: b.to_vec(),
        });
        rest = tail;
    }
    (ModelParams { layers }, rest)
}
