//! Device-bound model protection toolkit.
//!
//! The pipeline: a simulated delay-PUF ([`puf`]) gives each device a unique,
//! noisy challenge→response map; a convolutional-code fuzzy extractor
//! ([`ecc`]) turns noisy responses back into the enrolled bits; the stable
//! response seeds chaos maps ([`chaos`]) whose keystreams drive a
//! permute-diffusion cipher over network weights ([`cipher`]); weight
//! containers, a tiny dense-network engine and the attack harness live in
//! [`model`]; [`protocol`] runs registration and the mutually-authenticated
//! deployment handshake that delivers encrypted models to devices.

pub mod bits;
pub mod chaos;
pub mod cipher;
pub mod ecc;
pub mod error;
pub mod model;
pub mod protocol;
pub mod puf;

pub use chaos::SecretKey;
pub use cipher::{CipherConfig, Mode};
pub use ecc::{ConvCodeSpec, FuzzyExtractor, HelperData, InterleaverSpec, Scheme};
pub use error::{Error, Result};
pub use model::{Dataset, EncryptedModel, EvalReport, ModelWeights};
pub use puf::{Challenge, DeviceId, PufDevice, Response};
