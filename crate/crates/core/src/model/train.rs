//! Plain SGD training for the tiny dense networks, and the fine-tuning
//! attack that retrains ciphertext-initialized weights.
//!
//! Weights are stored as f32 (the container format), but every forward and
//! backward pass runs in f64; each SGD step rounds back to f32. That keeps
//! gradients checkable against finite differences and runs deterministically
//! for a fixed seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use super::{evaluate, Activation, Dataset, EvalReport, EncryptedModel, Layer, Matrix, ModelWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// Train a dense ReLU network (softmax head) from scratch with per-sample
/// SGD and cross-entropy loss. `arch` lists layer widths from input to
/// output and must chain with the dataset.
pub fn train_tiny(ds: &Dataset, arch: &[usize], cfg: &TrainConfig) -> Result<ModelWeights> {
    if arch.len() < 2 {
        return Err(Error::parameter("arch needs at least input and output"));
    }
    if arch[0] != ds.dims() {
        return Err(Error::parameter(format!(
            "arch input {} vs dataset width {}",
            arch[0],
            ds.dims()
        )));
    }
    if *arch.last().unwrap() != ds.classes() {
        return Err(Error::parameter(format!(
            "arch output {} vs {} classes",
            arch.last().unwrap(),
            ds.classes()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let layers = arch
        .windows(2)
        .enumerate()
        .map(|(j, dims)| {
            let (cols, rows) = (dims[0], dims[1]);
            let scale = (2.0 / cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| (scale * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();
            Layer {
                name: format!("dense{}", j + 1),
                weights: Matrix::from_vec(rows, cols, data).expect("sized above"),
                bias: vec![0.0; rows],
                activation: if j + 2 == arch.len() {
                    Activation::Softmax
                } else {
                    Activation::Relu
                },
            }
        })
        .collect();
    let mut model = ModelWeights::new(layers)?;
    sgd(&mut model, ds, cfg.epochs, cfg.lr, &mut rng)?;
    Ok(model)
}

/// Per-sample SGD over shuffled epochs.
pub fn sgd(
    model: &mut ModelWeights,
    ds: &Dataset,
    epochs: usize,
    lr: f64,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    if ds.rows() == 0 {
        return Err(Error::parameter("empty dataset"));
    }
    if ds.dims() != model.input_dim() || ds.classes() != model.output_dim() {
        return Err(Error::parameter("dataset does not match model shape"));
    }
    let mut order: Vec<usize> = (0..ds.rows()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for &row in &order {
            let grads = sample_grads(model, ds.feature_row(row), ds.label(row) as usize)?;
            apply_grads(model, &grads, lr);
        }
    }
    Ok(())
}

pub struct LayerGrads {
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

/// Cross-entropy loss of one sample, computed in f64.
pub fn sample_loss(model: &ModelWeights, x: &[f32], label: usize) -> Result<f64> {
    let probs = model.forward(x)?;
    if label >= probs.len() {
        return Err(Error::parameter("label out of range"));
    }
    Ok(-(probs[label].max(1e-300)).ln())
}

/// Backpropagated gradients of the cross-entropy loss for one sample.
/// Requires a softmax output head; hidden layers may be ReLU or linear.
pub fn sample_grads(
    model: &ModelWeights,
    x: &[f32],
    label: usize,
) -> Result<Vec<LayerGrads>> {
    let n_layers = model.layers.len();
    if model.layers[n_layers - 1].activation != Activation::Softmax {
        return Err(Error::parameter("training needs a softmax output layer"));
    }

    // Forward with caches.
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    activations.push(x.iter().map(|&v| v as f64).collect());
    let mut pre_acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    for layer in &model.layers {
        if matches!(layer.activation, Activation::Softmax)
            && !std::ptr::eq(layer, model.layers.last().unwrap())
        {
            return Err(Error::parameter("softmax is only supported at the output"));
        }
        let input = activations.last().unwrap();
        let rows = layer.weights.rows();
        let cols = layer.weights.cols();
        let mut z = Vec::with_capacity(rows);
        for r in 0..rows {
            let wrow = &layer.weights.data()[r * cols..(r + 1) * cols];
            let mut acc = layer.bias[r] as f64;
            for (w, xv) in wrow.iter().zip(input) {
                acc += *w as f64 * xv;
            }
            z.push(acc);
        }
        pre_acts.push(z.clone());
        let mut a = z;
        layer.activation.apply(&mut a);
        activations.push(a);
    }

    let probs = activations.last().unwrap();
    if label >= probs.len() {
        return Err(Error::parameter("label out of range"));
    }

    // Backward: softmax + cross-entropy gives delta = p - onehot.
    let mut delta: Vec<f64> = probs.clone();
    delta[label] -= 1.0;

    let mut grads: Vec<LayerGrads> = Vec::with_capacity(n_layers);
    for j in (0..n_layers).rev() {
        let layer = &model.layers[j];
        let rows = layer.weights.rows();
        let cols = layer.weights.cols();
        let input = &activations[j];
        let mut d_weights = vec![0.0f64; rows * cols];
        for (dw_row, &d) in d_weights.chunks_mut(cols).zip(&delta) {
            for (dw, x) in dw_row.iter_mut().zip(input) {
                *dw = d * x;
            }
        }
        let d_bias = delta.clone();
        if j > 0 {
            let mut prev = vec![0.0f64; cols];
            for (wrow, &d) in layer.weights.data().chunks(cols).zip(&delta) {
                for (p, w) in prev.iter_mut().zip(wrow) {
                    *p += *w as f64 * d;
                }
            }
            match model.layers[j - 1].activation {
                Activation::Relu => {
                    for (p, z) in prev.iter_mut().zip(&pre_acts[j - 1]) {
                        if *z <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
                Activation::None => {}
                Activation::Softmax => unreachable!("checked in the forward pass"),
            }
            delta = prev;
        }
        grads.push(LayerGrads { d_weights, d_bias });
    }
    grads.reverse();
    Ok(grads)
}

fn apply_grads(model: &mut ModelWeights, grads: &[LayerGrads], lr: f64) {
    for (layer, g) in model.layers.iter_mut().zip(grads) {
        for (w, dw) in layer.weights.data_mut().iter_mut().zip(&g.d_weights) {
            *w = (*w as f64 - lr * dw) as f32;
        }
        for (b, db) in layer.bias.iter_mut().zip(&g.d_bias) {
            *b = (*b as f64 - lr * db) as f32;
        }
    }
}

/// Fine-tuning attack: take the ciphertext values as initial weights (no
/// key involved), retrain on a stolen fraction of the training rows, and
/// report accuracy on the holdout. Non-finite initial values (exact-mode
/// bit patterns) are zeroed, as any attacker loading them into a training
/// framework would have to.
pub fn finetune_attack(
    em: &EncryptedModel,
    fraction: f64,
    train_ds: &Dataset,
    eval_ds: &Dataset,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<EvalReport> {
    let stolen = train_ds.subset_fraction(fraction, seed)?;
    let mut model = em.as_plain_view();
    for layer in &mut model.layers {
        for w in layer.weights.data_mut() {
            if !w.is_finite() {
                *w = 0.0;
            }
        }
        for b in &mut layer.bias {
            if !b.is_finite() {
                *b = 0.0;
            }
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    sgd(&mut model, &stolen, epochs, lr, &mut rng)?;
    let mut report = evaluate(&model, eval_ds)?;
    report.config = format!(
        "finetune fraction={fraction} epochs={epochs} lr={lr} enc_layers={}",
        em.encrypted_layer_count()
    );
    Ok(report)
}
