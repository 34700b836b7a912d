//! Binary weight containers.
//!
//! Plaintext (`PDWM`): magic, version u8, layer count u16 LE; per layer:
//! name (u16 LE length + UTF-8), activation tag u8, rows u32 LE, cols
//! u32 LE, weights f32 LE row-major, bias f32 LE.
//!
//! Encrypted (`PDWE`): magic, version u8, mode u8, n_p u16 LE, n_d u16 LE,
//! t_pre u32 LE, challenge id (16 bytes), layer count u16 LE; per layer a
//! block in the same field layout, prefixed by an encryption flag byte
//! (0 plain passthrough, 1 encrypted weights, 2 encrypted weights + bias).
//! Ciphertext value width follows the mode: f64 LE in float mode (so the
//! container round-trips the cipher's working precision bit-exactly),
//! u32 LE in exact mode; plaintext fields stay f32 LE.

use std::fs;
use std::path::Path;

use super::{Activation, EncLayer, EncLayerBody, EncryptedModel, Layer, Matrix, ModelWeights};
use crate::cipher::{CipherConfig, EncVec, LayerBias, LayerCiphertext, Mode};
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"PDWM";
const ENCRYPTED_MAGIC: &[u8; 4] = b"PDWE";
const FORMAT_VERSION: u8 = 1;

/// Guard against absurd dimensions in corrupt files.
const MAX_ELEMENTS: usize = 1 << 24;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(section, self.pos as u64, "truncated"));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u16le(&mut self, section: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32le(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, section: &'static str) -> Result<Vec<f32>> {
        let raw = self.take(4 * n, section)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&mut self, n: usize, section: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(8 * n, section)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&mut self, n: usize, section: &'static str) -> Result<Vec<u32>> {
        let raw = self.take(4 * n, section)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u16le("layer-name")? as usize;
        let raw = self.take(len, "layer-name")?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::format("layer-name", self.pos as u64, "invalid UTF-8"))
    }

    fn dims(&mut self) -> Result<(usize, usize)> {
        let rows = self.u32le("layer-shape")? as usize;
        let cols = self.u32le("layer-shape")? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > MAX_ELEMENTS {
            return Err(Error::format(
                "layer-shape",
                self.pos as u64,
                format!("implausible shape {rows}x{cols}"),
            ));
        }
        Ok((rows, cols))
    }

    fn activation(&mut self) -> Result<Activation> {
        let tag = self.u8("activation")?;
        Activation::from_tag(tag)
            .ok_or_else(|| Error::format("activation", self.pos as u64 - 1, format!("tag {tag}")))
    }

    fn finish(self, what: &'static str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                what,
                self.pos as u64,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn push_name(buf: &mut Vec<u8>, name: &str) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn model_to_bytes(model: &ModelWeights) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.push(FORMAT_VERSION);
    buf.extend_from_slice(&(model.layers.len() as u16).to_le_bytes());
    for layer in &model.layers {
        push_name(&mut buf, &layer.name);
        buf.push(layer.activation.tag());
        buf.extend_from_slice(&(layer.weights.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.weights.cols() as u32).to_le_bytes());
        push_f32s(&mut buf, layer.weights.data());
        push_f32s(&mut buf, &layer.bias);
    }
    buf
}

pub fn model_from_bytes(buf: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader::new(buf);
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::format("magic", 0, "expected PDWM"));
    }
    let version = r.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format("version", 4, format!("unsupported {version}")));
    }
    let count = r.u16le("layer-count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.name()?;
        let activation = r.activation()?;
        let (rows, cols) = r.dims()?;
        let weights = Matrix::from_vec(rows, cols, r.f32s(rows * cols, "weights")?)?;
        let bias = r.f32s(rows, "bias")?;
        layers.push(Layer {
            name,
            weights,
            bias,
            activation,
        });
    }
    r.finish("model")?;
    let model = ModelWeights { layers };
    model.validate()?;
    Ok(model)
}

impl ModelWeights {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, model_to_bytes(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        model_from_bytes(&fs::read(path)?)
    }
}

fn layer_enc_flag(layer: &EncLayer) -> u8 {
    match &layer.body {
        EncLayerBody::Plain { .. } => 0,
        EncLayerBody::Encrypted(ct) => match ct.bias {
            LayerBias::Plain(_) => 1,
            LayerBias::Encrypted(_) => 2,
        },
    }
}

pub fn encrypted_to_bytes(em: &EncryptedModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(ENCRYPTED_MAGIC);
    buf.push(FORMAT_VERSION);
    buf.push(em.cfg.mode.tag());
    buf.extend_from_slice(&em.cfg.n_p.to_le_bytes());
    buf.extend_from_slice(&em.cfg.n_d.to_le_bytes());
    buf.extend_from_slice(&em.cfg.t_pre.to_le_bytes());
    buf.extend_from_slice(&em.challenge_id);
    buf.extend_from_slice(&(em.layers.len() as u16).to_le_bytes());
    for layer in &em.layers {
        buf.push(layer_enc_flag(layer));
        push_name(&mut buf, &layer.name);
        buf.push(layer.activation.tag());
        match &layer.body {
            EncLayerBody::Plain { weights, bias } => {
                buf.extend_from_slice(&(weights.rows() as u32).to_le_bytes());
                buf.extend_from_slice(&(weights.cols() as u32).to_le_bytes());
                push_f32s(&mut buf, weights.data());
                push_f32s(&mut buf, bias);
            }
            EncLayerBody::Encrypted(ct) => {
                buf.extend_from_slice(&(ct.rows as u32).to_le_bytes());
                buf.extend_from_slice(&(ct.cols as u32).to_le_bytes());
                push_enc_vec(&mut buf, &ct.weights);
                match &ct.bias {
                    LayerBias::Plain(b) => push_f32s(&mut buf, b),
                    LayerBias::Encrypted(enc) => push_enc_vec(&mut buf, enc),
                }
            }
        }
    }
    buf
}

fn push_enc_vec(buf: &mut Vec<u8>, values: &EncVec) {
    match values {
        EncVec::Float(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        EncVec::Exact(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

fn read_enc_vec(r: &mut Reader, mode: Mode, n: usize, section: &'static str) -> Result<EncVec> {
    Ok(match mode {
        Mode::Float => EncVec::Float(r.f64s(n, section)?),
        Mode::Exact => EncVec::Exact(r.u32s(n, section)?),
    })
}

pub fn encrypted_from_bytes(buf: &[u8]) -> Result<EncryptedModel> {
    let mut r = Reader::new(buf);
    if r.take(4, "magic")? != ENCRYPTED_MAGIC {
        return Err(Error::format("magic", 0, "expected PDWE"));
    }
    let version = r.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format("version", 4, format!("unsupported {version}")));
    }
    let mode_tag = r.u8("mode")?;
    let mode = Mode::from_tag(mode_tag)
        .ok_or_else(|| Error::format("mode", 5, format!("unknown mode {mode_tag}")))?;
    let n_p = r.u16le("config")?;
    let n_d = r.u16le("config")?;
    let t_pre = r.u32le("config")?;
    let challenge_id: [u8; 16] = r.take(16, "challenge-id")?.try_into().unwrap();
    let count = r.u16le("layer-count")? as usize;

    let mut layers = Vec::with_capacity(count);
    let mut encrypt_biases = false;
    for index in 0..count {
        let flag = r.u8("layer-flag")?;
        let name = r.name()?;
        let activation = r.activation()?;
        let (rows, cols) = r.dims()?;
        let body = match flag {
            0 => EncLayerBody::Plain {
                weights: Matrix::from_vec(rows, cols, r.f32s(rows * cols, "weights")?)?,
                bias: r.f32s(rows, "bias")?,
            },
            1 | 2 => {
                let weights = read_enc_vec(&mut r, mode, rows * cols, "weights")?;
                let bias = if flag == 2 {
                    encrypt_biases = true;
                    LayerBias::Encrypted(read_enc_vec(&mut r, mode, rows, "bias")?)
                } else {
                    LayerBias::Plain(r.f32s(rows, "bias")?)
                };
                EncLayerBody::Encrypted(LayerCiphertext {
                    layer_index: index,
                    rows,
                    cols,
                    weights,
                    bias,
                })
            }
            other => {
                return Err(Error::format(
                    "layer-flag",
                    r.pos as u64 - 1,
                    format!("unknown flag {other}"),
                ))
            }
        };
        layers.push(EncLayer {
            name,
            activation,
            body,
        });
    }
    r.finish("encrypted-model")?;

    if n_p < 1 || n_d < 1 {
        return Err(Error::format("config", 6, "n_p and n_d must be >= 1"));
    }
    if layers.is_empty() {
        return Err(Error::format("layer-count", 0, "container has no layers"));
    }
    // Layer shapes must chain like the plaintext schema they encrypt.
    for j in 1..layers.len() {
        let cols = match &layers[j].body {
            EncLayerBody::Plain { weights, .. } => weights.cols(),
            EncLayerBody::Encrypted(ct) => ct.cols,
        };
        let prev_rows = match &layers[j - 1].body {
            EncLayerBody::Plain { weights, .. } => weights.rows(),
            EncLayerBody::Encrypted(ct) => ct.rows,
        };
        if cols != prev_rows {
            return Err(Error::format(
                "layer-shape",
                0,
                format!("layer {j} width {cols} does not chain with {prev_rows}"),
            ));
        }
    }
    Ok(EncryptedModel {
        cfg: CipherConfig {
            n_p,
            n_d,
            mode,
            t_pre,
            encrypt_biases,
        },
        challenge_id,
        layers,
    })
}

impl EncryptedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, encrypted_to_bytes(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        encrypted_from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::SecretKey;
    use crate::model::{encrypt_model, LayerSelection};

    fn sample_model() -> ModelWeights {
        crate::model::tests::toy_model(99, &[4, 6, 3])
    }

    #[test]
    fn model_bytes_round_trip() {
        let model = sample_model();
        let bytes = model_to_bytes(&model);
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(model_to_bytes(&back), bytes);
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pdwm");
        let model = sample_model();
        model.save(&path).unwrap();
        assert_eq!(ModelWeights::load(&path).unwrap(), model);
    }

    #[test]
    fn truncation_names_the_failing_section() {
        let bytes = model_to_bytes(&sample_model());
        // Cut inside the first layer's weights.
        let cut = 4 + 1 + 2 + 2 + 6 + 1 + 8 + 10;
        match model_from_bytes(&bytes[..cut]) {
            Err(Error::Format { section, .. }) => assert_eq!(section, "weights"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_is_rejected_without_partial_load() {
        let mut bytes = model_to_bytes(&sample_model());
        bytes[4] = 9;
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(Error::Format { section: "version", .. })
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = model_to_bytes(&sample_model());
        bytes[0] = b'X';
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(Error::Format { section: "magic", .. })
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = model_to_bytes(&sample_model());
        bytes.push(0);
        assert!(model_from_bytes(&bytes).is_err());
    }

    #[test]
    fn encrypted_bytes_round_trip_all_modes() {
        let model = sample_model();
        let key = SecretKey::from_seed(5, 384).unwrap();
        for mode in [Mode::Float, Mode::Exact] {
            for encrypt_biases in [false, true] {
                let cfg = CipherConfig {
                    mode,
                    encrypt_biases,
                    t_pre: 50,
                    ..CipherConfig::default()
                };
                // Partial selection exercises plain passthrough blocks too.
                let em =
                    encrypt_model(&model, &key, &cfg, LayerSelection::FirstK(1), [3; 16]).unwrap();
                let bytes = encrypted_to_bytes(&em);
                let back = encrypted_from_bytes(&bytes).unwrap();
                assert_eq!(back, em);
                assert_eq!(encrypted_to_bytes(&back), bytes);
            }
        }
    }

    #[test]
    fn encrypted_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pdwe");
        let model = sample_model();
        let key = SecretKey::from_seed(6, 384).unwrap();
        let cfg = CipherConfig {
            t_pre: 50,
            ..CipherConfig::default()
        };
        let em = encrypt_model(&model, &key, &cfg, LayerSelection::All, [1; 16]).unwrap();
        em.save(&path).unwrap();
        assert_eq!(EncryptedModel::load(&path).unwrap(), em);
    }
}
