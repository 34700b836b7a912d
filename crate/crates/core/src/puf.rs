//! Statistical simulation of a population of delay-based PUFs.
//!
//! The physical circuit is abstracted to its contract: per bit of the
//! response, a latent standard-normal value is derived by keyed expansion of
//! `(device_secret, challenge, bit index)`; the emitted bit is the sign of
//! `latent + noise`, with fresh Gaussian noise per evaluation. Distinct
//! secrets give statistically independent devices, zero noise gives exact
//! reproducibility, and the flip probability under noise has a closed
//! analytic form used for calibration.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bits;
use crate::error::{Error, Result};

/// Challenge width in bits. The delay-chain configuration is opaque; any
/// 128-bit pattern is a valid challenge.
pub const CHALLENGE_BITS: usize = 128;

/// Default response width; equals the fuzzy extractor's framed length so a
/// whole response enrolls as one frame.
pub const DEFAULT_RESPONSE_BITS: usize = 384;

const DEVICE_MAGIC: &[u8; 4] = b"PUFD";
const DEVICE_VERSION: u8 = 1;

/// Opaque 128-bit device identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeviceId(pub [u8; 16]);

impl DeviceId {
    pub fn to_hex(self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A PUF challenge: fixed-width bit pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Challenge {
    bits: Vec<bool>,
}

impl Challenge {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.len() != CHALLENGE_BITS {
            return Err(Error::parameter(format!(
                "challenge must be {CHALLENGE_BITS} bits, got {}",
                bits.len()
            )));
        }
        Ok(Challenge { bits })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Challenge {
            bits: bits::random_bits(rng, CHALLENGE_BITS),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        bits::bits_to_bytes(&self.bits)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != CHALLENGE_BITS / 8 {
            return Err(Error::parameter(format!(
                "challenge must be {} bytes, got {}",
                CHALLENGE_BITS / 8,
                bytes.len()
            )));
        }
        Ok(Challenge {
            bits: bits::bytes_to_bits(bytes, CHALLENGE_BITS),
        })
    }

    /// 16-byte identifier binding ciphertext containers to the challenge
    /// whose response keyed them.
    pub fn id(&self) -> [u8; 16] {
        let digest = Sha256::new()
            .chain_update(b"challenge-id")
            .chain_update(self.to_bytes())
            .finalize();
        let mut id = [0u8; 16];
        id.copy_from_slice(&digest[..16]);
        id
    }
}

/// A PUF response: `response_len` bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    bits: Vec<bool>,
}

impl Response {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Response { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        bits::bits_to_bytes(&self.bits)
    }
}

/// Simulated device. Immutable after construction; evaluation noise comes
/// from the caller's RNG so the device itself is shareable across threads.
#[derive(Debug, Clone)]
pub struct PufDevice {
    device_id: DeviceId,
    device_secret: [u8; 32],
    noise_sigma: f64,
    response_len: usize,
}

impl PufDevice {
    /// Build a device from its fabrication secret. The same secret always
    /// yields the same device; the identifier is derived from the secret.
    pub fn new(device_secret: [u8; 32], noise_sigma: f64, response_len: usize) -> Result<Self> {
        if !noise_sigma.is_finite() || noise_sigma < 0.0 {
            return Err(Error::parameter(format!(
                "noise_sigma must be >= 0, got {noise_sigma}"
            )));
        }
        if response_len == 0 {
            return Err(Error::parameter("response_len must be >= 1"));
        }
        let digest = Sha256::new()
            .chain_update(b"device-id")
            .chain_update(device_secret)
            .finalize();
        let mut id = [0u8; 16];
        id.copy_from_slice(&digest[..16]);
        Ok(PufDevice {
            device_id: DeviceId(id),
            device_secret,
            noise_sigma,
            response_len,
        })
    }

    /// Convenience constructor: secret expanded from a 64-bit seed.
    pub fn from_seed(seed: u64, noise_sigma: f64, response_len: usize) -> Result<Self> {
        let digest = Sha256::new()
            .chain_update(b"device-secret")
            .chain_update(seed.to_le_bytes())
            .finalize();
        let mut secret = [0u8; 32];
        secret.copy_from_slice(&digest);
        Self::new(secret, noise_sigma, response_len)
    }

    pub fn id(&self) -> DeviceId {
        self.device_id
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn response_len(&self) -> usize {
        self.response_len
    }

    /// Deterministic standard-normal latent for one response bit.
    fn latent(&self, challenge_bytes: &[u8], index: u32) -> f64 {
        let digest = Sha256::new()
            .chain_update(b"latent")
            .chain_update(self.device_secret)
            .chain_update(challenge_bytes)
            .chain_update(index.to_le_bytes())
            .finalize();
        let word = u64::from_le_bytes(digest[..8].try_into().unwrap());
        // 53-bit uniform, offset half a step so it never hits 0 or 1.
        let uniform = ((word >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        Normal::new(0.0, 1.0).unwrap().inverse_cdf(uniform)
    }

    /// Evaluate the PUF on a challenge with fresh per-bit noise.
    pub fn evaluate<R: Rng + ?Sized>(&self, challenge: &Challenge, rng: &mut R) -> Response {
        let chal = challenge.to_bytes();
        let bits = (0..self.response_len as u32)
            .map(|j| {
                let eta: f64 = if self.noise_sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    self.noise_sigma * z
                } else {
                    0.0
                };
                self.latent(&chal, j) + eta >= 0.0
            })
            .collect();
        Response { bits }
    }

    /// The noiseless reference response (what enrollment records).
    pub fn reference_response(&self, challenge: &Challenge) -> Response {
        let chal = challenge.to_bytes();
        let bits = (0..self.response_len as u32)
            .map(|j| self.latent(&chal, j) >= 0.0)
            .collect();
        Response { bits }
    }

    /// Noisy enrollment read: bitwise majority over `reads` evaluations.
    pub fn majority_response<R: Rng + ?Sized>(
        &self,
        challenge: &Challenge,
        reads: usize,
        rng: &mut R,
    ) -> Response {
        let mut ones = vec![0usize; self.response_len];
        for _ in 0..reads {
            for (count, &bit) in ones.iter_mut().zip(self.evaluate(challenge, rng).bits()) {
                *count += bit as usize;
            }
        }
        Response {
            bits: ones.iter().map(|&c| 2 * c > reads).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(4 + 1 + 16 + 32 + 8 + 4);
        buf.extend_from_slice(DEVICE_MAGIC);
        buf.push(DEVICE_VERSION);
        buf.extend_from_slice(&self.device_id.0);
        buf.extend_from_slice(&self.device_secret);
        buf.extend_from_slice(&self.noise_sigma.to_le_bytes());
        buf.extend_from_slice(&(self.response_len as u32).to_le_bytes());
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = fs::File::open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        if buf.len() < 4 || &buf[..4] != DEVICE_MAGIC {
            return Err(Error::format("magic", 0, "expected PUFD"));
        }
        if buf.len() < 5 {
            return Err(Error::format("version", 4, "truncated"));
        }
        if buf[4] != DEVICE_VERSION {
            return Err(Error::format(
                "version",
                4,
                format!("unsupported version {}", buf[4]),
            ));
        }
        if buf.len() < 4 + 1 + 16 + 32 + 8 + 4 {
            return Err(Error::format("body", buf.len() as u64, "truncated"));
        }
        let mut id = [0u8; 16];
        id.copy_from_slice(&buf[5..21]);
        let mut secret = [0u8; 32];
        secret.copy_from_slice(&buf[21..53]);
        let sigma = f64::from_le_bytes(buf[53..61].try_into().unwrap());
        let len = u32::from_le_bytes(buf[61..65].try_into().unwrap()) as usize;
        let mut device = Self::new(secret, sigma, len)?;
        device.device_id = DeviceId(id);
        Ok(device)
    }
}

/// Analytic per-bit flip probability for a device with latent ~ N(0,1) and
/// evaluation noise sigma: the bit flips when the noise crosses the latent's
/// sign, which for the bivariate pair (L, L + eta) gives
/// `p = 1/2 - asin(1 / sqrt(1 + sigma^2)) / pi`.
pub fn flip_probability(sigma: f64) -> f64 {
    0.5 - (1.0 / (1.0 + sigma * sigma).sqrt()).asin() / std::f64::consts::PI
}

/// Find the noise level whose expected bit-flip probability equals
/// `target_ber`, by bisection on [`flip_probability`]. Accurate to 1e-3 in
/// probability (much better in practice).
pub fn calibrate_sigma(target_ber: f64) -> Result<f64> {
    if !(target_ber > 0.0 && target_ber < 0.5) {
        return Err(Error::parameter(format!(
            "target BER must lie strictly in (0, 0.5), got {target_ber}"
        )));
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while flip_probability(hi) < target_ber {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::parameter("target BER too close to 0.5"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if flip_probability(mid) < target_ber {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
