//! Registration and deployment protocol.
//!
//! Registration runs over a trusted channel: the device identifies itself,
//! answers a batch of challenges with clean (noise-suppressed) responses,
//! and stores the challenge/helper-data pairs the provider derives. The
//! provider keeps the challenge-response pairs in its database.
//!
//! Deployment is mutually authenticated over an untrusted framed transport.
//! The device sends its id and a fresh nonce; the provider answers with an
//! unused challenge, the enrolled response blinded by an expanded provider
//! nonce, and a hash binding its knowledge of the response to the device
//! nonce. The device regenerates the response through its PUF and the fuzzy
//! extractor, checks the provider's hash, and proves itself with a hash over
//! the recovered nonce mask. Only then does the provider encrypt the model
//! under the response and ship it; the device decrypts with the same
//! regenerated key. No key material is ever persisted on the device — the
//! response lives only in session memory.

mod codec;
mod device;
mod net;
mod provider;
mod store;

pub use codec::{FrameDecoder, FrameType, RegKind, WireFrame, MAX_FRAME};
pub use device::{DeviceAgent, DeviceSession, EnrollmentRead};
pub use net::{read_frame, run_device_deployment, serve_sessions, write_frame};
pub use provider::{Provider, ProviderSession};
pub use store::{CrpRecord, CrpStore, DeviceStore};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Protocol phases, in order. Transitions only move forward (or to
/// `Failed`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Challenged,
    Authenticated,
    Delivered,
    Failed,
}

/// `hash(a || b)` with the first operand length-prefixed (u32 LE) so the
/// operand boundary is unambiguous.
pub fn hash_concat(a: &[u8], b: &[u8]) -> [u8; 32] {
    let digest = Sha256::new()
        .chain_update((a.len() as u32).to_le_bytes())
        .chain_update(a)
        .chain_update(b)
        .finalize();
    digest.into()
}

/// Expand a 128-bit nonce to `nbits` mask bits (counter-mode hashing), so
/// the blinded response masks every response bit.
pub fn expand_mask(nonce: &[u8; 16], nbits: usize) -> Vec<bool> {
    let mut bytes = Vec::with_capacity(nbits.div_ceil(8));
    let mut counter = 0u32;
    while bytes.len() * 8 < nbits {
        let block = Sha256::new()
            .chain_update(b"nonce-mask")
            .chain_update(nonce)
            .chain_update(counter.to_le_bytes())
            .finalize();
        bytes.extend_from_slice(&block);
        counter += 1;
    }
    crate::bits::bytes_to_bits(&bytes, nbits)
}

/// Run the five-step registration over a direct (trusted) channel.
pub fn register<R: Rng + ?Sized>(
    provider: &mut Provider,
    device: &mut DeviceAgent,
    z: usize,
    read: EnrollmentRead,
    rng: &mut R,
) -> Result<()> {
    provider.begin_registration(device.id())?;
    let challenges = provider.issue_challenges(device.id(), z, rng)?;
    let responses = device.respond_all(&challenges, read, rng);
    let pairs = provider.complete_registration(device.id(), &challenges, &responses, rng)?;
    device.adopt_helpers(pairs);
    Ok(())
}
