//! Batched forward and backward passes through the whole network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layers::{
    bn_affine, bn_backward, bn_normalize, relu_pool, relu_pool_backward, BnPass, Conv, Dense,
    BN_MOMENTUM,
};
use super::*;
use crate::error::Result;
use crate::matrix::Matrix;

/// Probability clip used by the loss.
pub(crate) const P_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; dropout when a mask source is given.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// Layers whose backward pass can be faulted in a gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv1,
    Bn1,
    Pool1,
    Conv2,
    Bn2,
    Pool2,
    Fc1,
    Fc2,
    Output,
}

impl Layer {
    pub const ALL: [Layer; 9] = [
        Layer::Conv1,
        Layer::Bn1,
        Layer::Pool1,
        Layer::Conv2,
        Layer::Bn2,
        Layer::Pool2,
        Layer::Fc1,
        Layer::Fc2,
        Layer::Output,
    ];
}

pub(crate) struct Geometry {
    conv1: Conv,
    conv2: Conv,
    fc1: Dense,
    fc2: Dense,
    out: Dense,
    pool: usize,
}

impl Geometry {
    pub fn new(c: &TdnnConfig) -> Self {
        Self {
            conv1: Conv {
                spec: c.conv1,
                c_in: c.input_width,
                frames: c.input_frames,
            },
            conv2: Conv {
                spec: c.conv2,
                c_in: c.conv1.filters,
                frames: c.frames_after_pool1(),
            },
            fc1: Dense { n_out: c.fc1_units },
            fc2: Dense { n_out: c.fc2_units },
            out: Dense { n_out: 1 },
            pool: c.pool_size,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SampleCache<T> {
    xhat1: Vec<T>,
    y1: Vec<T>,
    arg1: Vec<u8>,
    h1: Vec<T>,
    xhat2: Vec<T>,
    y2: Vec<T>,
    arg2: Vec<u8>,
    h2: Vec<T>,
    a3: Vec<T>,
    h3: Vec<T>,
    a4: Vec<T>,
    h4: Vec<T>,
}

pub(crate) struct Pass<T> {
    samples: Vec<SampleCache<T>>,
    pub bn: [BnPass<T>; 2],
    /// Inverted-dropout multipliers per site, empty when dropout is off.
    masks: [Vec<Vec<T>>; 4],
    pub probs: Vec<T>,
}

impl<T: Scalar> Pass<T> {
    /// Every discrete choice the pass made: ReLU signs, pool winners and
    /// whether the probability was clipped. Finite differences are only
    /// meaningful while this stays fixed.
    pub fn signature(&self) -> Vec<u8> {
        let lo: T = cast(P_CLIP);
        let hi: T = cast(1.0 - P_CLIP);
        let mut sig = Vec::new();
        for s in &self.samples {
            for v in [&s.y1, &s.y2, &s.a3, &s.a4] {
                sig.extend(v.iter().map(|&x| u8::from(x > T::zero())));
            }
            sig.extend_from_slice(&s.arg1);
            sig.extend_from_slice(&s.arg2);
        }
        sig.extend(
            self.probs
                .iter()
                .map(|&p| u8::from(p < lo) + 2 * u8::from(p > hi)),
        );
        sig
    }
}

fn dropout_masks<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, len: usize, rate: f64) -> Vec<Vec<T>> {
    let keep = 1.0 - rate;
    let scale: T = cast(1.0 / keep);
    (0..n)
        .map(|_| {
            (0..len)
                .map(|_| {
                    if rng.gen::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
        .collect()
}

fn apply_mask<T: Scalar>(v: &mut [T], mask: Option<&Vec<T>>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).for_each(|(x, &k)| *x = *x * k);
    }
}

fn relu<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| x.max(T::zero())).collect()
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Runs the batch through the network. In train mode batch norm uses the
/// batch's statistics, and `dropout` (if given) draws the masks.
pub(crate) fn forward_pass<T: Scalar>(
    model: &TdnnModel<T>,
    xs: &[&[T]],
    mode: Mode,
    dropout: Option<&mut ChaCha8Rng>,
) -> Pass<T> {
    let cfg = &model.config;
    let g = Geometry::new(cfg);
    let p = &model.params;
    let n = xs.len();
    let (f1, f2) = (cfg.conv1.filters, cfg.conv2.filters);
    let rate = cfg.dropout_rate;
    let masks: [Vec<Vec<T>>; 4] = match dropout {
        Some(rng) if mode == Mode::Train && rate > 0.0 => [
            dropout_masks(rng, n, cfg.frames_after_pool1() * f1, rate),
            dropout_masks(rng, n, cfg.flatten_width(), rate),
            dropout_masks(rng, n, cfg.fc1_units, rate),
            dropout_masks(rng, n, cfg.fc2_units, rate),
        ],
        _ => Default::default(),
    };
    let running =
        |i: usize| (mode == Mode::Eval).then(|| (&model.bn[i].mean[..], &model.bn[i].var[..]));

    let mut z1: Vec<Vec<T>> = xs
        .par_iter()
        .map(|x| g.conv1.forward(x, &p[CONV1_W], &p[CONV1_B]))
        .collect();
    let bn1 = bn_normalize(&mut z1, f1, running(0));
    let mut samples: Vec<SampleCache<T>> = z1
        .into_par_iter()
        .enumerate()
        .map(|(i, xhat1)| {
            let y1 = bn_affine(&xhat1, &p[BN1_G], &p[BN1_B]);
            let (mut h1, arg1) = relu_pool(&y1, f1, g.pool);
            apply_mask(&mut h1, masks[0].get(i));
            SampleCache {
                xhat1,
                y1,
                arg1,
                h1,
                ..Default::default()
            }
        })
        .collect();

    let mut z2: Vec<Vec<T>> = samples
        .par_iter()
        .map(|s| g.conv2.forward(&s.h1, &p[CONV2_W], &p[CONV2_B]))
        .collect();
    let bn2 = bn_normalize(&mut z2, f2, running(1));
    let logits: Vec<T> = samples
        .par_iter_mut()
        .zip(z2)
        .enumerate()
        .map(|(i, (s, xhat2))| {
            let y2 = bn_affine(&xhat2, &p[BN2_G], &p[BN2_B]);
            let (mut h2, arg2) = relu_pool(&y2, f2, g.pool);
            apply_mask(&mut h2, masks[1].get(i));
            let a3 = g.fc1.forward(&h2, &p[FC1_W], &p[FC1_B]);
            let mut h3 = relu(&a3);
            apply_mask(&mut h3, masks[2].get(i));
            let a4 = g.fc2.forward(&h3, &p[FC2_W], &p[FC2_B]);
            let mut h4 = relu(&a4);
            apply_mask(&mut h4, masks[3].get(i));
            let logit = g.out.forward(&h4, &p[OUT_W], &p[OUT_B])[0];
            (s.xhat2, s.y2, s.arg2, s.h2) = (xhat2, y2, arg2, h2);
            (s.a3, s.h3, s.a4, s.h4) = (a3, h3, a4, h4);
            logit
        })
        .collect();

    Pass {
        samples,
        bn: [bn1, bn2],
        masks,
        probs: logits.into_iter().map(sigmoid).collect(),
    }
}

/// Folds a train-mode pass's batch statistics into the running averages.
pub(crate) fn update_running_stats<T: Scalar>(
    model: &mut TdnnModel<T>,
    pass: &Pass<T>,
    batch: usize,
) {
    let c = &model.config;
    let counts = [batch * c.input_frames, batch * c.frames_after_pool1()];
    let mom: T = cast(BN_MOMENTUM);
    for ((stats, bp), count) in model.bn.iter_mut().zip(&pass.bn).zip(counts) {
        let unbias: T = cast(count as f64 / (count.max(2) - 1) as f64);
        for (m, &b) in stats.mean.iter_mut().zip(&bp.mean) {
            *m = (T::one() - mom) * *m + mom * b;
        }
        for (v, &b) in stats.var.iter_mut().zip(&bp.var) {
            *v = (T::one() - mom) * *v + mom * b * unbias;
        }
    }
}

fn add_fault<T: Scalar>(v: &mut [T], delta: T) {
    v.iter_mut().for_each(|x| *x = *x + delta);
}

/// Gradients of `sum_n dlogits[n] * logit_n` with respect to every
/// parameter, in declaration order. A `fault` adds a constant to the
/// gradients a layer's backward pass produces.
pub(crate) fn backward_pass<T: Scalar>(
    model: &TdnnModel<T>,
    xs: &[&[T]],
    pass: &Pass<T>,
    dlogits: &[T],
    fault: Option<(Layer, T)>,
) -> Vec<Vec<T>> {
    let cfg = &model.config;
    let g = Geometry::new(cfg);
    let p = &model.params;
    let (f1, f2) = (cfg.conv1.filters, cfg.conv2.filters);
    let mut grads: Vec<Vec<T>> = p.iter().map(|t| vec![T::zero(); t.len()]).collect();
    let ss = &pass.samples;
    let faulty = |layer: Layer| fault.filter(|f| f.0 == layer).map(|f| f.1);
    let fault_params = |grads: &mut Vec<Vec<T>>, layer: Layer, idx: &[usize]| {
        if let Some(d) = faulty(layer) {
            idx.iter().for_each(|&i| add_fault(&mut grads[i], d));
        }
    };
    let fault_input = |v: &mut [Vec<T>], layer: Layer| {
        if let Some(d) = faulty(layer) {
            v.iter_mut().for_each(|x| add_fault(x, d));
        }
    };

    // output unit
    let dl: Vec<Vec<T>> = dlogits.iter().map(|&d| vec![d]).collect();
    let h4: Vec<&[T]> = ss.iter().map(|s| &s.h4[..]).collect();
    let dl_ref: Vec<&[T]> = dl.iter().map(|d| &d[..]).collect();
    let (gw, gb) = two_mut(&mut grads, OUT_W, OUT_B);
    g.out.weight_grad(&h4, &dl_ref, gw, gb);
    fault_params(&mut grads, Layer::Output, &[OUT_W, OUT_B]);
    let mut dh4: Vec<Vec<T>> = dl
        .iter()
        .map(|d| g.out.backward_input(d, &p[OUT_W]))
        .collect();
    fault_input(&mut dh4, Layer::Output);

    // fc2
    let da4: Vec<Vec<T>> = dh4
        .into_iter()
        .enumerate()
        .map(|(i, d)| relu_grad(d, &ss[i].a4, pass.masks[3].get(i)))
        .collect();
    let h3: Vec<&[T]> = ss.iter().map(|s| &s.h3[..]).collect();
    let da4_ref: Vec<&[T]> = da4.iter().map(|d| &d[..]).collect();
    let (gw, gb) = two_mut(&mut grads, FC2_W, FC2_B);
    g.fc2.weight_grad(&h3, &da4_ref, gw, gb);
    fault_params(&mut grads, Layer::Fc2, &[FC2_W, FC2_B]);
    let mut dh3: Vec<Vec<T>> = da4
        .par_iter()
        .map(|d| g.fc2.backward_input(d, &p[FC2_W]))
        .collect();
    fault_input(&mut dh3, Layer::Fc2);

    // fc1
    let da3: Vec<Vec<T>> = dh3
        .into_iter()
        .enumerate()
        .map(|(i, d)| relu_grad(d, &ss[i].a3, pass.masks[2].get(i)))
        .collect();
    let h2: Vec<&[T]> = ss.iter().map(|s| &s.h2[..]).collect();
    let da3_ref: Vec<&[T]> = da3.iter().map(|d| &d[..]).collect();
    let (gw, gb) = two_mut(&mut grads, FC1_W, FC1_B);
    g.fc1.weight_grad(&h2, &da3_ref, gw, gb);
    fault_params(&mut grads, Layer::Fc1, &[FC1_W, FC1_B]);
    let mut dh2: Vec<Vec<T>> = da3
        .par_iter()
        .map(|d| g.fc1.backward_input(d, &p[FC1_W]))
        .collect();
    fault_input(&mut dh2, Layer::Fc1);

    // pool2 + relu
    let mut dy2: Vec<Vec<T>> = dh2
        .into_par_iter()
        .enumerate()
        .map(|(i, mut d)| {
            apply_mask(&mut d, pass.masks[1].get(i));
            relu_pool_backward(&d, &ss[i].y2, &ss[i].arg2, f2, g.pool)
        })
        .collect();
    fault_input(&mut dy2, Layer::Pool2);

    // bn2
    let xhat2: Vec<Vec<T>> = ss.iter().map(|s| s.xhat2.clone()).collect();
    let (gg, gb) = two_mut(&mut grads, BN2_G, BN2_B);
    bn_backward(&mut dy2, &xhat2, &p[BN2_G], &pass.bn[1], gg, gb);
    fault_params(&mut grads, Layer::Bn2, &[BN2_G, BN2_B]);
    fault_input(&mut dy2, Layer::Bn2);

    // conv2
    let h1: Vec<&[T]> = ss.iter().map(|s| &s.h1[..]).collect();
    let dz2: Vec<&[T]> = dy2.iter().map(|d| &d[..]).collect();
    let (gw, gb) = two_mut(&mut grads, CONV2_W, CONV2_B);
    g.conv2.weight_grad(&h1, &dz2, gw, gb);
    fault_params(&mut grads, Layer::Conv2, &[CONV2_W, CONV2_B]);
    let mut dh1: Vec<Vec<T>> = dy2
        .par_iter()
        .map(|d| g.conv2.backward_input(d, &p[CONV2_W]))
        .collect();
    fault_input(&mut dh1, Layer::Conv2);

    // pool1 + relu
    let mut dy1: Vec<Vec<T>> = dh1
        .into_par_iter()
        .enumerate()
        .map(|(i, mut d)| {
            apply_mask(&mut d, pass.masks[0].get(i));
            relu_pool_backward(&d, &ss[i].y1, &ss[i].arg1, f1, g.pool)
        })
        .collect();
    fault_input(&mut dy1, Layer::Pool1);

    // bn1
    let xhat1: Vec<Vec<T>> = ss.iter().map(|s| s.xhat1.clone()).collect();
    let (gg, gb) = two_mut(&mut grads, BN1_G, BN1_B);
    bn_backward(&mut dy1, &xhat1, &p[BN1_G], &pass.bn[0], gg, gb);
    fault_params(&mut grads, Layer::Bn1, &[BN1_G, BN1_B]);

    // conv1
    let dz1: Vec<&[T]> = dy1.iter().map(|d| &d[..]).collect();
    let (gw, gb) = two_mut(&mut grads, CONV1_W, CONV1_B);
    g.conv1.weight_grad(xs, &dz1, gw, gb);
    fault_params(&mut grads, Layer::Conv1, &[CONV1_W, CONV1_B]);

    grads
}

fn relu_grad<T: Scalar>(mut d: Vec<T>, pre: &[T], mask: Option<&Vec<T>>) -> Vec<T> {
    apply_mask(&mut d, mask);
    d.iter_mut().zip(pre).for_each(|(g, &a)| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
    d
}

/// Mutable access to a weight tensor and the bias right after it.
fn two_mut<T>(v: &mut [Vec<T>], w: usize, b: usize) -> (&mut [T], &mut [T]) {
    debug_assert_eq!(b, w + 1);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[w], &mut hi[0])
}

/// Weighted mean binary cross-entropy on clipped probabilities and its
/// derivative with respect to each logit. The derivative is zero where the
/// clip is active, matching the clipped loss exactly.
pub(crate) fn bce_and_grad<T: Scalar>(
    probs: &[T],
    labels: &[bool],
    weights: Option<&[T]>,
) -> (T, Vec<T>) {
    let lo: T = cast(P_CLIP);
    let hi: T = cast(1.0 - P_CLIP);
    let n: T = cast(probs.len() as f64);
    let mut total = T::zero();
    let grads = probs
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&p, &y))| {
            let w = weights.map_or(T::one(), |w| w[i]);
            let pc = p.max(lo).min(hi);
            let y_t = if y { T::one() } else { T::zero() };
            let term = if y { -pc.ln() } else { -(T::one() - pc).ln() };
            total = total + w * term;
            if p < lo || p > hi {
                T::zero()
            } else {
                w * (p - y_t) / n
            }
        })
        .collect();
    (total / n, grads)
}

/// Mean binary cross-entropy (probabilities clipped to `[1e-7, 1 - 1e-7]`)
/// plus `l2_lambda` times the sum of squared weights.
pub fn loss<T: Scalar>(probs: &[T], labels: &[bool], model: &TdnnModel<T>, l2_lambda: f64) -> f64 {
    let (bce, _) = bce_and_grad(probs, labels, None);
    bce.to_f64().unwrap() + l2_lambda * model.weight_norm_sq().to_f64().unwrap()
}

/// Probabilities for a batch. Train mode uses batch statistics and dropout
/// masks drawn from a generator seeded with the model's seed.
pub fn forward<T: Scalar>(model: &TdnnModel<T>, xs: &[Matrix<T>], mode: Mode) -> Result<Vec<T>> {
    for x in xs {
        model.check_input(x)?;
    }
    let refs: Vec<&[T]> = xs.iter().map(Matrix::as_slice).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    Ok(forward_pass(model, &refs, mode, Some(&mut rng)).probs)
}
