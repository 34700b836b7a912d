//! Weight containers, a tiny dense-network inference engine with
//! decrypt-on-load execution, dataset handling and the training/attack
//! harness.

mod dataset;
mod format;
mod train;

pub use dataset::{load_csv, synth_blobs, Dataset};
pub use format::{encrypted_from_bytes, encrypted_to_bytes, model_from_bytes, model_to_bytes};
pub use train::{finetune_attack, sample_grads, sample_loss, sgd, train_tiny, LayerGrads, TrainConfig};

use crate::chaos::SecretKey;
use crate::cipher::{self, CipherConfig, LayerBias, LayerCiphertext};
use crate::error::{Error, Result};

/// Dense row-major f32 matrix, `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::parameter(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }

    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::None => {}
            Activation::Relu => {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Softmax => {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in z.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }
}

/// One dense layer: `out = f(W x + b)` with `W` of shape `L_j x L_{j-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub weights: Matrix,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

/// Ordered dense layers; adjacent shapes chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub layers: Vec<Layer>,
}

impl ModelWeights {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let model = ModelWeights { layers };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::parameter("model has no layers"));
        }
        for (j, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.rows() {
                return Err(Error::parameter(format!(
                    "layer {j}: bias of {} for {} rows",
                    layer.bias.len(),
                    layer.weights.rows()
                )));
            }
            if j > 0 && layer.weights.cols() != self.layers[j - 1].weights.rows() {
                return Err(Error::parameter(format!(
                    "layer {j}: input width {} does not chain with previous output {}",
                    layer.weights.cols(),
                    self.layers[j - 1].weights.rows()
                )));
            }
            if layer.weights.data().iter().any(|v| !v.is_finite())
                || layer.bias.iter().any(|v| !v.is_finite())
            {
                return Err(Error::parameter(format!("layer {j}: non-finite values")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.rows()).unwrap_or(0)
    }

    /// Forward pass; arithmetic in f64 so softmax normalizes to 1e-9.
    pub fn forward(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::parameter(format!(
                "input of {} for model expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut act: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        for layer in &self.layers {
            act = layer_forward(
                layer.weights.data(),
                layer.weights.rows(),
                layer.weights.cols(),
                &layer.bias,
                layer.activation,
                &act,
            );
        }
        Ok(act)
    }
}

fn layer_forward<W, B>(
    weights: &[W],
    rows: usize,
    cols: usize,
    bias: &[B],
    activation: Activation,
    x: &[f64],
) -> Vec<f64>
where
    W: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    let mut z = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &weights[r * cols..(r + 1) * cols];
        let mut acc: f64 = bias[r].into();
        for (w, xv) in row.iter().zip(x) {
            acc += (*w).into() * xv;
        }
        z.push(acc);
    }
    activation.apply(&mut z);
    z
}

/// Which layers an encryption pass covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSelection {
    All,
    /// The first `k` layers.
    FirstK(usize),
    /// A single layer by index.
    Only(usize),
}

impl LayerSelection {
    pub fn covers(self, index: usize) -> bool {
        match self {
            LayerSelection::All => true,
            LayerSelection::FirstK(k) => index < k,
            LayerSelection::Only(i) => index == i,
        }
    }
}

/// A layer of an encrypted container: either ciphertext or a passthrough
/// plaintext layer (partial-layer encryption is how the layer-count
/// experiments run).
#[derive(Debug, Clone, PartialEq)]
pub enum EncLayerBody {
    Plain { weights: Matrix, bias: Vec<f32> },
    Encrypted(LayerCiphertext),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncLayer {
    pub name: String,
    pub activation: Activation,
    pub body: EncLayerBody,
}

/// Encrypted model container: per-layer ciphertext, the cipher config it
/// was produced under, and the identifier of the challenge whose response
/// keyed it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedModel {
    pub cfg: CipherConfig,
    pub challenge_id: [u8; 16],
    pub layers: Vec<EncLayer>,
}

impl EncryptedModel {
    pub fn encrypted_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.body, EncLayerBody::Encrypted(_)))
            .count()
    }

    pub fn input_dim(&self) -> usize {
        match &self.layers[0].body {
            EncLayerBody::Plain { weights, .. } => weights.cols(),
            EncLayerBody::Encrypted(ct) => ct.cols,
        }
    }

    /// Decrypt-on-load forward pass: each encrypted layer is decrypted just
    /// in time, used, and dropped before the next layer loads.
    pub fn forward(&self, key: Option<&SecretKey>, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::parameter(format!(
                "input of {} for model expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut act: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        for layer in &self.layers {
            match &layer.body {
                EncLayerBody::Plain { weights, bias } => {
                    act = layer_forward(
                        weights.data(),
                        weights.rows(),
                        weights.cols(),
                        bias,
                        layer.activation,
                        &act,
                    );
                }
                EncLayerBody::Encrypted(ct) => {
                    let key = key.ok_or_else(|| {
                        Error::parameter("encrypted model requires a key for inference")
                    })?;
                    let plain = cipher::decrypt_layer(ct, key, &self.cfg)?;
                    act = layer_forward(
                        &plain.weights,
                        plain.rows,
                        plain.cols,
                        &plain.bias,
                        layer.activation,
                        &act,
                    );
                    // `plain` drops here: the decrypted layer never outlives
                    // its use.
                }
            }
        }
        Ok(act)
    }

    /// The adversary's view: ciphertext values reinterpreted as weights.
    /// Never validated — exact-mode bit patterns may be non-finite.
    pub fn as_plain_view(&self) -> ModelWeights {
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let (weights, bias) = match &layer.body {
                    EncLayerBody::Plain { weights, bias } => (weights.clone(), bias.clone()),
                    EncLayerBody::Encrypted(ct) => {
                        let weights = Matrix {
                            rows: ct.rows,
                            cols: ct.cols,
                            data: ct.weights.as_plain_f32(),
                        };
                        let bias = match &ct.bias {
                            LayerBias::Plain(b) => b.clone(),
                            LayerBias::Encrypted(enc) => enc.as_plain_f32(),
                        };
                        (weights, bias)
                    }
                };
                Layer {
                    name: layer.name.clone(),
                    weights,
                    bias,
                    activation: layer.activation,
                }
            })
            .collect();
        ModelWeights { layers }
    }
}

/// Encrypt the selected layers of a model.
pub fn encrypt_model(
    model: &ModelWeights,
    key: &SecretKey,
    cfg: &CipherConfig,
    selection: LayerSelection,
    challenge_id: [u8; 16],
) -> Result<EncryptedModel> {
    model.validate()?;
    cfg.validate()?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (j, layer) in model.layers.iter().enumerate() {
        let body = if selection.covers(j) {
            EncLayerBody::Encrypted(cipher::encrypt_layer(
                &layer.weights,
                &layer.bias,
                key,
                cfg,
                j,
            )?)
        } else {
            EncLayerBody::Plain {
                weights: layer.weights.clone(),
                bias: layer.bias.clone(),
            }
        };
        layers.push(EncLayer {
            name: layer.name.clone(),
            activation: layer.activation,
            body,
        });
    }
    Ok(EncryptedModel {
        cfg: *cfg,
        challenge_id,
        layers,
    })
}

/// Decrypt a whole container back to plaintext weights.
pub fn decrypt_model(em: &EncryptedModel, key: &SecretKey) -> Result<ModelWeights> {
    let mut layers = Vec::with_capacity(em.layers.len());
    for layer in &em.layers {
        let (weights, bias) = match &layer.body {
            EncLayerBody::Plain { weights, bias } => (weights.clone(), bias.clone()),
            EncLayerBody::Encrypted(ct) => {
                let plain = cipher::decrypt_layer(ct, key, &em.cfg)?;
                let weights = Matrix::from_vec(
                    plain.rows,
                    plain.cols,
                    plain.weights.iter().map(|&v| v as f32).collect(),
                )?;
                (weights, plain.bias.iter().map(|&v| v as f32).collect())
            }
        };
        layers.push(Layer {
            name: layer.name.clone(),
            weights,
            bias,
            activation: layer.activation,
        });
    }
    Ok(ModelWeights { layers })
}

/// Evaluation result: accuracy, per-class tallies and the configuration the
/// run echoes for harness scripting.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `(correct, total)` per class label.
    pub per_class: Vec<(usize, usize)>,
    pub config: String,
}

impl EvalReport {
    /// Line-oriented `key=value` text.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("accuracy={}\n", self.accuracy));
        out.push_str(&format!("classes={}\n", self.per_class.len()));
        for (label, (correct, total)) in self.per_class.iter().enumerate() {
            out.push_str(&format!("class_{label}={correct}/{total}\n"));
        }
        out.push_str(&format!("config={}\n", self.config));
        out
    }
}

/// Index of the largest logit; non-finite logits never win, an all-NaN
/// vector deterministically maps to class 0.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

fn evaluate_with<F>(mut forward: F, ds: &Dataset, config: String) -> Result<EvalReport>
where
    F: FnMut(&[f32]) -> Result<Vec<f64>>,
{
    if ds.rows() == 0 {
        return Err(Error::parameter("empty dataset"));
    }
    let mut per_class = vec![(0usize, 0usize); ds.classes()];
    let mut correct = 0usize;
    for i in 0..ds.rows() {
        let logits = forward(ds.feature_row(i))?;
        let label = ds.label(i) as usize;
        per_class[label].1 += 1;
        if argmax(&logits) == label {
            per_class[label].0 += 1;
            correct += 1;
        }
    }
    Ok(EvalReport {
        accuracy: correct as f64 / ds.rows() as f64,
        per_class,
        config,
    })
}

/// Argmax-prediction accuracy of a plaintext model over a dataset.
pub fn evaluate(model: &ModelWeights, ds: &Dataset) -> Result<EvalReport> {
    if model.input_dim() != ds.dims() {
        return Err(Error::parameter("dataset width does not match model"));
    }
    evaluate_with(|x| model.forward(x), ds, "plain".to_string())
}

/// Accuracy of an encrypted container: with a key, decrypt-on-load
/// inference; without one, the adversary's ciphertext-as-weights view.
pub fn evaluate_encrypted(
    em: &EncryptedModel,
    key: Option<&SecretKey>,
    ds: &Dataset,
) -> Result<EvalReport> {
    if em.input_dim() != ds.dims() {
        return Err(Error::parameter("dataset width does not match model"));
    }
    match key {
        Some(key) => evaluate_with(
            |x| em.forward(Some(key), x),
            ds,
            format!("encrypted+key np={} nd={} mode={}", em.cfg.n_p, em.cfg.n_d, em.cfg.mode),
        ),
        None => {
            let view = em.as_plain_view();
            evaluate_with(
                |x| view.forward(x),
                ds,
                format!("encrypted np={} nd={} mode={}", em.cfg.n_p, em.cfg.n_d, em.cfg.mode),
            )
        }
    }
}
