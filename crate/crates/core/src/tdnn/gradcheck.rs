use super::net::{backward_pass, bce_and_grad, forward_pass, Layer, Mode};
use super::*;
use crate::error::Result;
use crate::matrix::Matrix;

/// Denominators below this are treated as this. Central differences carry
/// roundoff of about `1e-16 |L| / epsilon` (~1e-11 here), which would
/// otherwise dominate parameters whose true gradient is exactly zero, such
/// as a conv bias feeding batch norm in train mode.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic| + |numeric|, floor)`.
    pub max_rel_error: f64,
    pub worst_param: &'static str,
    pub worst_index: usize,
    /// Largest relative error per parameter tensor.
    pub per_param: Vec<(&'static str, f64)>,
    pub checked: usize,
    /// Coordinates whose perturbation flipped a ReLU or a pool winner.
    pub skipped: usize,
}

fn objective(model: &TdnnModel<f64>, xs: &[&[f64]], labels: &[bool], mode: Mode) -> (f64, Vec<u8>) {
    let pass = forward_pass(model, xs, mode, None);
    let (bce, _) = bce_and_grad(&pass.probs, labels, None);
    (
        bce + model.config.l2_lambda * model.weight_norm_sq(),
        pass.signature(),
    )
}

/// Compares backprop against central differences for every parameter of
/// `model`. Dropout is off; `mode` picks batch or running BN statistics.
pub fn gradient_check(
    model: &TdnnModel<f64>,
    xs: &[Matrix<f64>],
    labels: &[bool],
    epsilon: f64,
    mode: Mode,
) -> Result<GradCheckReport> {
    gradient_check_with_fault(model, xs, labels, epsilon, mode, None)
}

/// [`gradient_check`] with a constant `delta` added to every gradient the
/// named layer's backward pass emits.
pub fn gradient_check_with_fault(
    model: &TdnnModel<f64>,
    xs: &[Matrix<f64>],
    labels: &[bool],
    epsilon: f64,
    mode: Mode,
    fault: Option<(Layer, f64)>,
) -> Result<GradCheckReport> {
    for x in xs {
        model.check_input(x)?;
    }
    if xs.len() != labels.len() || xs.is_empty() {
        return Err(Error::Shape(format!(
            "{} inputs for {} labels",
            xs.len(),
            labels.len()
        )));
    }
    let refs: Vec<&[f64]> = xs.iter().map(Matrix::as_slice).collect();
    let pass = forward_pass(model, &refs, mode, None);
    let (_, dl) = bce_and_grad(&pass.probs, labels, None);
    let mut analytic = backward_pass(model, &refs, &pass, &dl, fault);
    let lambda = model.config.l2_lambda;
    for ((g, p), (_, _, is_weight)) in analytic
        .iter_mut()
        .zip(&model.params)
        .zip(model.config.param_shapes())
    {
        if is_weight {
            g.iter_mut()
                .zip(p)
                .for_each(|(g, &w)| *g += 2.0 * lambda * w);
        }
    }
    let base_sig = pass.signature();

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: "",
        worst_index: 0,
        per_param: Vec::new(),
        checked: 0,
        skipped: 0,
    };
    for (t, (name, len, _)) in model.config.param_shapes().into_iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..len {
            let orig = model.params[t][i];
            probe.params[t][i] = orig + epsilon;
            let (up, sig_up) = objective(&probe, &refs, labels, mode);
            probe.params[t][i] = orig - epsilon;
            let (down, sig_down) = objective(&probe, &refs, labels, mode);
            probe.params[t][i] = orig;
            if sig_up != base_sig || sig_down != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[t][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            worst = worst.max(rel);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name;
                report.worst_index = i;
            }
        }
        report.per_param.push((name, worst));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> (TdnnModel<f64>, Vec<Matrix<f64>>, Vec<bool>) {
        let cfg = TdnnConfig {
            conv1: ConvSpec {
                filters: 3,
                kernel: 3,
                dilation: 2,
            },
            conv2: ConvSpec {
                filters: 4,
                kernel: 3,
                dilation: 1,
            },
            fc1_units: 5,
            fc2_units: 3,
            input_width: 4,
            input_frames: 8,
            l2_lambda: 1e-2,
            ..TdnnConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = TdnnModel::<f64>::init(&cfg, seed).unwrap();
        for p in m.params.iter_mut() {
            p.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        for s in m.bn.iter_mut() {
            s.mean
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.2..0.2));
            s.var.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        }
        let xs = (0..3)
            .map(|_| Matrix::from_vec(8, 4, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        (m, xs, vec![true, false, true])
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for seed in 0..3 {
            let (m, xs, y) = tiny(seed);
            for mode in [Mode::Eval, Mode::Train] {
                let r = gradient_check(&m, &xs, &y, 1e-5, mode).unwrap();
                assert!(r.max_rel_error < 1e-6, "{mode:?} {r:?}");
                assert!(r.checked > r.skipped);
            }
        }
    }

    #[test]
    fn corrupted_layer_is_caught() {
        let (m, xs, y) = tiny(11);
        for layer in Layer::ALL {
            let r = gradient_check_with_fault(&m, &xs, &y, 1e-5, Mode::Train, Some((layer, 1e-3)))
                .unwrap();
            assert!(r.max_rel_error > 1e-4, "{layer:?} {r:?}");
        }
    }
}
