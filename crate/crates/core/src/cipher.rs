//! Permute-diffusion encryption of per-layer weight tensors.
//!
//! Each layer is flattened row-major, then transformed by `n_d` outer
//! rounds of `n_p` permutation rounds followed by one diffusion round.
//! Every permutation consumes a fresh logistic-keystream segment of the
//! layer's length (the stream continues across rounds rather than being
//! reused, so each round applies a distinct permutation); each diffusion
//! round consumes a fresh NCA segment. Decryption regenerates the whole
//! schedule forward and applies it in reverse.
//!
//! Two value domains are supported. `Float` works on f64 copies of the
//! weights: diffusion adds or subtracts the keystream value, so inversion
//! carries IEEE rounding on the order of 1e-15 per round. `Exact` works on
//! the raw 32-bit patterns of the f32 weights with modular keystream
//! addition, so decrypt(encrypt(w)) is bit-identical; the deployment
//! protocol uses this mode.

use crate::chaos::{self, LogisticParams, NcaParams, SecretKey};
use crate::error::{Error, Result};
use crate::model::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Float,
    Exact,
}

impl Mode {
    pub fn tag(self) -> u8 {
        match self {
            Mode::Float => 0,
            Mode::Exact => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Mode::Float),
            1 => Some(Mode::Exact),
            _ => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Float => "float",
            Mode::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CipherConfig {
    /// Permutation rounds per outer round.
    pub n_p: u16,
    /// Outer (permute-then-diffuse) rounds.
    pub n_d: u16,
    pub mode: Mode,
    /// Chaos warm-up iterations per layer and stream.
    pub t_pre: u32,
    /// Encrypt bias vectors along with the weights (off by default; biases
    /// pass through in the clear).
    pub encrypt_biases: bool,
}

impl Default for CipherConfig {
    fn default() -> Self {
        CipherConfig {
            n_p: 3,
            n_d: 2,
            mode: Mode::Float,
            t_pre: chaos::DEFAULT_T_PRE,
            encrypt_biases: false,
        }
    }
}

impl CipherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_p < 1 || self.n_d < 1 {
            return Err(Error::parameter("n_p and n_d must be >= 1"));
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
}

/// Ciphertext element vector, in the value domain of the cipher mode.
#[derive(Debug, Clone, PartialEq)]
pub enum EncVec {
    Float(Vec<f64>),
    Exact(Vec<u32>),
}

impl EncVec {
    pub fn len(&self) -> usize {
        match self {
            EncVec::Float(v) => v.len(),
            EncVec::Exact(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> Mode {
        match self {
            EncVec::Float(_) => Mode::Float,
            EncVec::Exact(_) => Mode::Exact,
        }
    }

    /// The adversary's view: ciphertext elements reinterpreted as weights.
    pub fn as_plain_f32(&self) -> Vec<f32> {
        match self {
            EncVec::Float(v) => v.iter().map(|&x| x as f32).collect(),
            EncVec::Exact(v) => v.iter().map(|&u| f32::from_bits(u)).collect(),
        }
    }
}

/// Bias vector of an encrypted layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerBias {
    Plain(Vec<f32>),
    Encrypted(EncVec),
}

impl LayerBias {
    pub fn len(&self) -> usize {
        match self {
            LayerBias::Plain(v) => v.len(),
            LayerBias::Encrypted(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One encrypted layer: flat ciphertext values plus the original shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCiphertext {
    pub layer_index: usize,
    pub rows: usize,
    pub cols: usize,
    pub weights: EncVec,
    pub bias: LayerBias,
}

/// Plaintext recovered from a layer; weights stay in f64 so the
/// decrypt-on-load inference path keeps full precision.
#[derive(Debug, Clone)]
pub struct DecryptedLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Row-major linearization of a weight matrix.
pub fn flatten(w: &Matrix) -> Vec<f32> {
    w.data().to_vec()
}

/// Inverse of [`flatten`]: rebuild a matrix from a flat vector.
pub fn reshape(values: &[f32], rows: usize, cols: usize) -> Result<Matrix> {
    Matrix::from_vec(rows, cols, values.to_vec())
}

/// `out[t] = v[perm[t]]`.
pub fn permute_round<T: Copy>(v: &[T], perm: &[usize]) -> Result<Vec<T>> {
    if v.len() != perm.len() {
        return Err(Error::parameter(format!(
            "permutation of {} over {} elements",
            perm.len(),
            v.len()
        )));
    }
    Ok(perm.iter().map(|&i| v[i]).collect())
}

/// Inverse of [`permute_round`]: `out[perm[t]] = v[t]`.
pub fn inverse_permute_round<T: Copy + Default>(v: &[T], perm: &[usize]) -> Result<Vec<T>> {
    if v.len() != perm.len() {
        return Err(Error::parameter(format!(
            "permutation of {} over {} elements",
            perm.len(),
            v.len()
        )));
    }
    let mut out = vec![T::default(); v.len()];
    for (t, &i) in perm.iter().enumerate() {
        out[i] = v[t];
    }
    Ok(out)
}

/// Float diffusion: add the keystream value where it is below 0.5,
/// subtract it otherwise.
pub fn diffuse(v: &[f64], stream: &[f64]) -> Result<Vec<f64>> {
    if v.len() != stream.len() {
        return Err(Error::parameter("diffusion keystream length mismatch"));
    }
    Ok(v.iter()
        .zip(stream)
        .map(|(&x, &s)| if s < 0.5 { x + s } else { x - s })
        .collect())
}

/// Inverse of [`diffuse`].
pub fn undiffuse(v: &[f64], stream: &[f64]) -> Result<Vec<f64>> {
    if v.len() != stream.len() {
        return Err(Error::parameter("diffusion keystream length mismatch"));
    }
    Ok(v.iter()
        .zip(stream)
        .map(|(&x, &s)| if s < 0.5 { x - s } else { x + s })
        .collect())
}

fn stream_to_u32(s: f64) -> u32 {
    // Floor to 32 fractional bits, wrapping s = 1.0 to 0.
    ((s * 4_294_967_296.0) as u64) as u32
}

/// Exact diffusion over 32-bit patterns: modular add/subtract of the
/// keystream scaled to 32 fractional bits. Exactly invertible.
pub fn diffuse_exact(v: &[u32], stream: &[f64]) -> Result<Vec<u32>> {
    if v.len() != stream.len() {
        return Err(Error::parameter("diffusion keystream length mismatch"));
    }
    Ok(v.iter()
        .zip(stream)
        .map(|(&x, &s)| {
            let d = stream_to_u32(s);
            if s < 0.5 {
                x.wrapping_add(d)
            } else {
                x.wrapping_sub(d)
            }
        })
        .collect())
}

/// Inverse of [`diffuse_exact`].
pub fn undiffuse_exact(v: &[u32], stream: &[f64]) -> Result<Vec<u32>> {
    if v.len() != stream.len() {
        return Err(Error::parameter("diffusion keystream length mismatch"));
    }
    Ok(v.iter()
        .zip(stream)
        .map(|(&x, &s)| {
            let d = stream_to_u32(s);
            if s < 0.5 {
                x.wrapping_sub(d)
            } else {
                x.wrapping_add(d)
            }
        })
        .collect())
}

/// Permutations (`n_d * n_p`) and diffusion segments (`n_d`) of one layer's
/// schedule, in consumption order.
pub(crate) type Schedule = (Vec<Vec<usize>>, Vec<Vec<f64>>);

/// The full keystream schedule for one layer of `len` elements. Both
/// encrypt and decrypt derive the schedule identically.
pub(crate) fn keystream_schedule(
    key: &SecretKey,
    cfg: &CipherConfig,
    len: usize,
) -> Result<Schedule> {
    cfg.validate()?;
    if len == 0 {
        return Err(Error::parameter("cannot cipher an empty layer"));
    }
    let lp = LogisticParams::derive(key.permute_half(), chaos::DEFAULT_B_P)?;
    let np = NcaParams::derive(key.diffuse_half(), chaos::DEFAULT_B_D)?;
    let mut log_stream = lp.stream();
    let mut nca_stream = np.stream();
    log_stream.warmup(cfg.t_pre);
    nca_stream.warmup(cfg.t_pre)?;

    let mut perms = Vec::with_capacity(cfg.n_d as usize * cfg.n_p as usize);
    let mut diffs = Vec::with_capacity(cfg.n_d as usize);
    for _ in 0..cfg.n_d {
        for _ in 0..cfg.n_p {
            perms.push(chaos::permutation_from_sequence(&log_stream.segment(len)));
        }
        diffs.push(nca_stream.segment(len)?);
    }
    Ok((perms, diffs))
}

fn forward_f64(mut buf: Vec<f64>, cfg: &CipherConfig, perms: &[Vec<usize>], diffs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let np = cfg.n_p as usize;
    for d in 0..cfg.n_d as usize {
        for p in 0..np {
            buf = permute_round(&buf, &perms[d * np + p])?;
        }
        buf = diffuse(&buf, &diffs[d])?;
    }
    Ok(buf)
}

fn inverse_f64(mut buf: Vec<f64>, cfg: &CipherConfig, perms: &[Vec<usize>], diffs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let np = cfg.n_p as usize;
    for d in (0..cfg.n_d as usize).rev() {
        buf = undiffuse(&buf, &diffs[d])?;
        for p in (0..np).rev() {
            buf = inverse_permute_round(&buf, &perms[d * np + p])?;
        }
    }
    Ok(buf)
}

fn forward_u32(mut buf: Vec<u32>, cfg: &CipherConfig, perms: &[Vec<usize>], diffs: &[Vec<f64>]) -> Result<Vec<u32>> {
    let np = cfg.n_p as usize;
    for d in 0..cfg.n_d as usize {
        for p in 0..np {
            buf = permute_round(&buf, &perms[d * np + p])?;
        }
        buf = diffuse_exact(&buf, &diffs[d])?;
    }
    Ok(buf)
}

fn inverse_u32(mut buf: Vec<u32>, cfg: &CipherConfig, perms: &[Vec<usize>], diffs: &[Vec<f64>]) -> Result<Vec<u32>> {
    let np = cfg.n_p as usize;
    for d in (0..cfg.n_d as usize).rev() {
        buf = undiffuse_exact(&buf, &diffs[d])?;
        for p in (0..np).rev() {
            buf = inverse_permute_round(&buf, &perms[d * np + p])?;
        }
    }
    Ok(buf)
}

/// Encrypt one layer. Deterministic in (key, cfg, shape); the layer index
/// is carried as metadata only — every layer restarts its keystreams after
/// the warm-up.
pub fn encrypt_layer(
    weights: &Matrix,
    bias: &[f32],
    key: &SecretKey,
    cfg: &CipherConfig,
    layer_index: usize,
) -> Result<LayerCiphertext> {
    cfg.validate()?;
    let flat = flatten(weights);
    let total = flat.len() + if cfg.encrypt_biases { bias.len() } else { 0 };
    let (perms, diffs) = keystream_schedule(key, cfg, total)?;

    let n_weights = flat.len();
    let (enc_weights, enc_bias) = match cfg.mode {
        Mode::Float => {
            let mut buf: Vec<f64> = flat.iter().map(|&x| x as f64).collect();
            if cfg.encrypt_biases {
                buf.extend(bias.iter().map(|&x| x as f64));
            }
            let out = forward_f64(buf, cfg, &perms, &diffs)?;
            let (w, b) = out.split_at(n_weights);
            (
                EncVec::Float(w.to_vec()),
                if cfg.encrypt_biases {
                    LayerBias::Encrypted(EncVec::Float(b.to_vec()))
                } else {
                    LayerBias::Plain(bias.to_vec())
                },
            )
        }
        Mode::Exact => {
            let mut buf: Vec<u32> = flat.iter().map(|x| x.to_bits()).collect();
            if cfg.encrypt_biases {
                buf.extend(bias.iter().map(|x| x.to_bits()));
            }
            let out = forward_u32(buf, cfg, &perms, &diffs)?;
            let (w, b) = out.split_at(n_weights);
            (
                EncVec::Exact(w.to_vec()),
                if cfg.encrypt_biases {
                    LayerBias::Encrypted(EncVec::Exact(b.to_vec()))
                } else {
                    LayerBias::Plain(bias.to_vec())
                },
            )
        }
    };

    Ok(LayerCiphertext {
        layer_index,
        rows: weights.rows(),
        cols: weights.cols(),
        weights: enc_weights,
        bias: enc_bias,
    })
}

/// Decrypt one layer; `cfg` must be the configuration the layer was
/// encrypted under (the container carries it).
pub fn decrypt_layer(
    ct: &LayerCiphertext,
    key: &SecretKey,
    cfg: &CipherConfig,
) -> Result<DecryptedLayer> {
    cfg.validate()?;
    if ct.weights.len() != ct.rows * ct.cols {
        return Err(Error::format(
            "layer-ciphertext",
            0,
            format!(
                "{} values for a {}x{} layer",
                ct.weights.len(),
                ct.rows,
                ct.cols
            ),
        ));
    }
    if ct.weights.mode() != cfg.mode {
        return Err(Error::format(
            "layer-ciphertext",
            0,
            format!("ciphertext is {} but config says {}", ct.weights.mode(), cfg.mode),
        ));
    }
    let bias_encrypted = matches!(ct.bias, LayerBias::Encrypted(_));
    if bias_encrypted != cfg.encrypt_biases {
        return Err(Error::format(
            "layer-ciphertext",
            0,
            "bias encryption flag does not match config",
        ));
    }

    let n_weights = ct.weights.len();
    let total = n_weights + if bias_encrypted { ct.bias.len() } else { 0 };
    let (perms, diffs) = keystream_schedule(key, cfg, total)?;

    match (&ct.weights, &ct.bias) {
        (EncVec::Float(w), bias) => {
            let mut buf = w.clone();
            if let LayerBias::Encrypted(EncVec::Float(b)) = bias {
                buf.extend_from_slice(b);
            }
            let out = inverse_f64(buf, cfg, &perms, &diffs)?;
            let (wout, bout) = out.split_at(n_weights);
            let bias_out = match bias {
                LayerBias::Plain(b) => b.iter().map(|&x| x as f64).collect(),
                LayerBias::Encrypted(_) => bout.to_vec(),
            };
            Ok(DecryptedLayer {
                rows: ct.rows,
                cols: ct.cols,
                weights: wout.to_vec(),
                bias: bias_out,
            })
        }
        (EncVec::Exact(w), bias) => {
            let mut buf = w.clone();
            if let LayerBias::Encrypted(EncVec::Exact(b)) = bias {
                buf.extend_from_slice(b);
            }
            let out = inverse_u32(buf, cfg, &perms, &diffs)?;
            let (wout, bout) = out.split_at(n_weights);
            let to_f64 = |u: &u32| f32::from_bits(*u) as f64;
            let bias_out = match bias {
                LayerBias::Plain(b) => b.iter().map(|&x| x as f64).collect(),
                LayerBias::Encrypted(_) => bout.iter().map(to_f64).collect(),
            };
            Ok(DecryptedLayer {
                rows: ct.rows,
                cols: ct.cols,
                weights: wout.iter().map(to_f64).collect(),
                bias: bias_out,
            })
        }
    }
}
