//! Central finite-difference verification of the analytic backward pass.

use super::element::Element;
use super::layers::softmax_cross_entropy;
use super::model::{model_backward, model_forward, ModelConfig, ModelParams};
use super::NnError;
use crate::numerics::{shuffle, Prng, Tensor};
use serde::Serialize;

/// Coordinates checked per parameter tensor (all smooth ones when fewer).
pub const COORDS_PER_TENSOR: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckPrecision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamError {
    /// Index among the parametric layers.
    pub layer: usize,
    pub tensor: &'static str,
    pub checked: usize,
    /// Coordinates passed over because `p ± ε` changed a ReLU mask or a
    /// pooling route even at `ε/100`; the loss has no derivative there.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub precision: CheckPrecision,
    pub epsilon: f64,
    pub per_param: Vec<ParamError>,
    pub global_max: f64,
}

/// Uniform `[0, 1)` pixels and uniform labels for a gradient check. The
/// stream is decorrelated from [`he_init`](super::he_init) under the same
/// seed.
pub fn random_batch(n: usize, num_classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = Prng::new(seed ^ 0x6A09_E667_F3BC_C909);
    let [c, h, w] = super::INPUT_SHAPE;
    let data = (0..n * c * h * w).map(|_| rng.next_f64() as f32).collect();
    let labels = (0..n).map(|_| (rng.next_u64() % num_classes as u64) as usize).collect();
    (Tensor::from_vec(&[n, c, h, w], data).expect("sized"), labels)
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn coord_mut<'a>(p: &'a mut ModelParams<f64>, layer: usize, which: &str, i: usize) -> &'a mut f64 {
    let l = &mut p.layers[layer];
    let t = if which == "weights" { &mut l.weights } else { &mut l.bias };
    &mut t.data_mut()[i]
}

fn loss_and_pattern(
    config: &ModelConfig,
    params: &ModelParams<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
) -> Result<(f64, Vec<u64>), NnError> {
    let (logits, cache) = model_forward(config, params, batch)?;
    Ok((softmax_cross_entropy(&logits, labels)?.loss, cache.activation_pattern(config)))
}

fn analytic_grads<T: Element>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    batch: &Tensor<T>,
    labels: &[usize],
) -> Result<ModelParams<f64>, NnError> {
    let (logits, cache) = model_forward(config, params, batch)?;
    let xent = softmax_cross_entropy(&logits, labels)?;
    Ok(model_backward(config, params, cache, xent.grad_logits)?.cast::<f64>())
}

/// Step multipliers tried in turn until `p ± ε` stays on one linear piece.
const SHRINK: [f64; 3] = [1.0, 0.1, 0.01];

/// Central differences in `f64` against `analytic`, up to
/// [`COORDS_PER_TENSOR`] smooth coordinates per tensor in seeded random order.
fn compare(
    config: &ModelConfig,
    analytic: &ModelParams<f64>,
    mut params: ModelParams<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    epsilon: f64,
    seed: u64,
) -> Result<(Vec<ParamError>, f64), NnError> {
    let (_, base_pattern) = loss_and_pattern(config, &params, batch, labels)?;
    let mut rng = Prng::new(seed);
    let mut report = Vec::new();
    let mut global = 0.0f64;
    for layer in 0..params.layers.len() {
        for which in ["weights", "bias"] {
            let a = match which {
                "weights" => analytic.layers[layer].weights.data(),
                _ => analytic.layers[layer].bias.data(),
            };
            let order = shuffle((0..a.len()).collect::<Vec<_>>(), rng.next_u64());
            let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
            for i in order {
                if checked == COORDS_PER_TENSOR {
                    break;
                }
                let orig = *coord_mut(&mut params, layer, which, i);
                let mut numeric = None;
                for shrink in SHRINK {
                    let plus = orig + epsilon * shrink;
                    let minus = orig - epsilon * shrink;
                    *coord_mut(&mut params, layer, which, i) = plus;
                    let (l_plus, pat_plus) = loss_and_pattern(config, &params, batch, labels)?;
                    *coord_mut(&mut params, layer, which, i) = minus;
                    let (l_minus, pat_minus) = loss_and_pattern(config, &params, batch, labels)?;
                    *coord_mut(&mut params, layer, which, i) = orig;
                    if pat_plus == base_pattern && pat_minus == base_pattern {
                        numeric = Some((l_plus - l_minus) / (plus - minus));
                        break;
                    }
                }
                let Some(numeric) = numeric else {
                    skipped += 1;
                    continue;
                };
                worst = worst.max(relative_error(a[i], numeric));
                checked += 1;
            }
            global = global.max(worst);
            report.push(ParamError {
                layer,
                tensor: which,
                checked,
                skipped,
                max_rel_error: worst,
            });
        }
    }
    Ok((report, global))
}

/// Compare analytic gradients of the mean cross-entropy on `(batch, labels)`
/// with central differences.
///
/// The differences are always taken in `f64` on an exact copy of the
/// parameters and inputs. `precision` selects which analytic gradients are
/// under test: the engine's own `f32` backward pass, or the same code
/// instantiated at `f64`.
pub fn grad_check(
    config: &ModelConfig,
    params: &ModelParams,
    batch: &Tensor,
    labels: &[usize],
    epsilon: f64,
    precision: CheckPrecision,
) -> Result<GradCheckReport, NnError> {
    const COORD_SEED: u64 = 0x5EED;
    let params64 = params.cast::<f64>();
    let batch64 = batch.cast::<f64>();
    let analytic = match precision {
        CheckPrecision::F32 => analytic_grads(config, params, batch, labels)?,
        CheckPrecision::F64 => analytic_grads(config, &params64, &batch64, labels)?,
    };
    let (per_param, global_max) = compare(config, &analytic, params64, &batch64, labels, epsilon, COORD_SEED)?;
    Ok(GradCheckReport {
        precision,
        epsilon,
        per_param,
        global_max,
    })
}
