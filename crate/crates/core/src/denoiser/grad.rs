//! Exact backpropagation of the batch mean-squared residual loss.

use super::{cast, conv, DenoiserModel, PatchPair, Scalar};
use crate::error::{Error, Result};

/// Loss gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &DenoiserModel<T>) -> Self {
        Gradients {
            weights: model
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.weights.len()])
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.bias.len()])
                .collect(),
        }
    }

    /// Flattened in [`DenoiserModel::params`] order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Network-range training example: normalized input and target residual.
pub(crate) struct Example<T> {
    pub input: Vec<T>,
    pub target: Vec<T>,
}

pub(crate) fn to_example<T: Scalar>(model: &DenoiserModel<T>, pair: &PatchPair) -> Example<T> {
    let inv = 1.0 / model.scale_db;
    Example {
        input: model.normalize_input(&pair.noisy),
        target: pair
            .noisy
            .as_slice()
            .iter()
            .zip(pair.clean.as_slice())
            .map(|(n, c)| cast((n - c) * inv))
            .collect(),
    }
}

/// Mean squared error (network units) of the batch, without gradients.
pub(crate) fn batch_loss<T: Scalar>(
    model: &DenoiserModel<T>,
    batch: &[&Example<T>],
    side: usize,
) -> f64 {
    let mut total = 0.0;
    for ex in batch {
        let out = model.run(ex.input.clone(), side, side, None);
        total += out
            .iter()
            .zip(&ex.target)
            .map(|(o, t)| {
                let d = (*o - *t).to_f64().unwrap();
                d * d
            })
            .sum::<f64>();
    }
    total / (batch.len() * side * side) as f64
}

/// Loss and accumulated gradients over a batch of examples.
pub(crate) fn batch_gradients<T: Scalar>(
    model: &DenoiserModel<T>,
    batch: &[&Example<T>],
    side: usize,
    grads: &mut Gradients<T>,
) -> f64 {
    let hw = side * side;
    let scale: T = cast(2.0 / (batch.len() * hw) as f64);
    let mut total = 0.0;
    for ex in batch {
        let mut acts = Vec::with_capacity(model.depth());
        let out = model.run(ex.input.clone(), side, side, Some(&mut acts));
        let mut g: Vec<T> = out
            .iter()
            .zip(&ex.target)
            .map(|(&o, &t)| {
                let d = o - t;
                total += d.to_f64().unwrap().powi(2);
                d * scale
            })
            .collect();
        for l in (0..model.depth()).rev() {
            let layer = &model.layers[l];
            let x = &acts[l];
            if l > 0 {
                let mut dx = vec![T::zero(); layer.in_ch * hw];
                conv::backward(
                    x,
                    layer.in_ch,
                    &layer.weights,
                    &g,
                    layer.out_ch,
                    side,
                    side,
                    &mut grads.weights[l],
                    &mut grads.biases[l],
                    Some(&mut dx),
                );
                for (d, &a) in dx.iter_mut().zip(x) {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                }
                g = dx;
            } else {
                conv::backward(
                    x,
                    layer.in_ch,
                    &layer.weights,
                    &g,
                    layer.out_ch,
                    side,
                    side,
                    &mut grads.weights[l],
                    &mut grads.biases[l],
                    None,
                );
            }
        }
    }
    total / (batch.len() * hw) as f64
}

/// Loss (mean squared residual error in network units) and its exact
/// gradient with respect to every weight and bias.
pub fn gradients<T: Scalar>(
    model: &DenoiserModel<T>,
    batch: &[PatchPair],
) -> Result<(f64, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let side = model.arch.patch_side;
    for p in batch {
        if p.noisy.shape() != (side, side) || p.clean.shape() != (side, side) {
            return Err(Error::ShapeMismatch(format!(
                "batch patches must be {side}x{side}"
            )));
        }
    }
    let examples: Vec<Example<T>> = batch.iter().map(|p| to_example(model, p)).collect();
    let refs: Vec<&Example<T>> = examples.iter().collect();
    let mut grads = Gradients::zeros_like(model);
    let loss = batch_gradients(model, &refs, side, &mut grads);
    Ok((loss, grads))
}
