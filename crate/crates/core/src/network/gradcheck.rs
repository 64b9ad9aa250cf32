//! Finite-difference verification of the backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{loss_and_grad, Mode, Network, Real};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameters compared.
    pub checked: usize,
    /// Draws skipped because a perturbation crossed a ReLU or pooling switch.
    pub skipped: usize,
}

/// Compares the analytic gradient of `net` against central differences of
/// the loss computed in double precision on the same parameters.
///
/// Parameters are drawn round-robin over every weight and bias array so each
/// layer is covered. The error of one parameter is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-7)`.
pub fn gradient_check<T: Real>(
    net: &Network<T>,
    input: &[f64],
    true_class: usize,
    epsilon: f64,
    count: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let to_t: Vec<T> = input.iter().map(|&v| T::of(v)).collect();
    let (probs, cache) = net.forward_raw(to_t, Mode::Eval, 0)?;
    let (_, d_logits) = loss_and_grad(&probs, true_class);
    let grads = net.backward(&cache, &d_logits)?;

    let mut oracle: Network<f64> = net.cast();
    let base = oracle.forward_raw(input.to_vec(), Mode::Eval, 0)?.1;
    let base_sig = base.kink_signature(&oracle);

    // (layer, is_bias) for every parameter array.
    let arrays: Vec<(usize, bool)> = net
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_some())
        .flat_map(|(i, _)| [(i, false), (i, true)])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut attempts = 0;
    while report.checked < count && attempts < count * 20 {
        let (layer, is_bias) = arrays[attempts % arrays.len()];
        attempts += 1;
        let len = {
            let p = oracle.params()[layer].as_ref().unwrap();
            if is_bias { p.bias.len() } else { p.weight.len() }
        };
        let idx = rng.random_range(0..len);
        let analytic = {
            let g = grads.params[layer].as_ref().unwrap();
            if is_bias { g.bias[idx] } else { g.weight[idx] }
        }
        .as_f64();

        let plus = perturbed_loss(&mut oracle, (layer, is_bias, idx), epsilon, input, true_class)?;
        let minus = perturbed_loss(&mut oracle, (layer, is_bias, idx), -epsilon, input, true_class)?;
        if plus.1 != base_sig || minus.1 != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * epsilon);
        let denom = analytic.abs().max(numeric.abs()).max(1e-7);
        report.max_rel_error = report.max_rel_error.max((analytic - numeric).abs() / denom);
        report.checked += 1;
    }
    Ok(report)
}

fn perturbed_loss(
    net: &mut Network<f64>,
    (layer, is_bias, idx): (usize, bool, usize),
    delta: f64,
    input: &[f64],
    true_class: usize,
) -> Result<(f64, Vec<u32>)> {
    let p = net.params_mut()[layer].as_mut().unwrap();
    let slot = if is_bias { &mut p.bias[idx] } else { &mut p.weight[idx] };
    let orig = *slot;
    *slot = orig + delta;
    let out = net.forward_raw(input.to_vec(), Mode::Eval, 0);
    let p = net.params_mut()[layer].as_mut().unwrap();
    *(if is_bias { &mut p.bias[idx] } else { &mut p.weight[idx] }) = orig;
    let (probs, cache) = out?;
    let loss = -probs[true_class].max(1e-300).ln();
    Ok((loss, cache.kink_signature(net)))
}
