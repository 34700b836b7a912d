//! Fuzzy extractor: regenerate the enrolled PUF response from a noisy
//! re-evaluation using the convolutional code and interleaver.
//!
//! Two helper-data schemes exist. `CodeOffset` (default) masks a fresh
//! random codeword with the response, so the helper data reveals nothing
//! about the response on its own. `PaperLiteral` stores the interleaved
//! codeword of the response prefix directly; it is kept for fidelity with
//! designs that publish the coder output as helper data and is insecure —
//! the "key" is recoverable from the helper data alone.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::bits;
use crate::ecc::{ConvCodeSpec, InterleaverSpec};
use crate::error::{Error, Result};
use crate::puf::Response;

const HELPER_MAGIC: &[u8; 4] = b"PFHD";
const HELPER_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    CodeOffset,
    PaperLiteral,
}

impl Scheme {
    fn tag(self) -> u8 {
        match self {
            Scheme::CodeOffset => 0,
            Scheme::PaperLiteral => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Scheme::CodeOffset),
            1 => Some(Scheme::PaperLiteral),
            _ => None,
        }
    }
}

/// Public helper value enabling correction of a noisy response. Same length
/// as the response frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelperData {
    bits: Vec<bool>,
    scheme: Scheme,
}

impl HelperData {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(HELPER_MAGIC);
        buf.push(HELPER_VERSION);
        buf.push(self.scheme.tag());
        buf.extend_from_slice(&(self.bits.len() as u32).to_le_bytes());
        buf.extend_from_slice(&bits::bits_to_bytes(&self.bits));
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != HELPER_MAGIC {
            return Err(Error::format("magic", 0, "expected PFHD"));
        }
        if buf.len() < 10 {
            return Err(Error::format("header", buf.len() as u64, "truncated"));
        }
        if buf[4] != HELPER_VERSION {
            return Err(Error::format(
                "version",
                4,
                format!("unsupported version {}", buf[4]),
            ));
        }
        let scheme = Scheme::from_tag(buf[5])
            .ok_or_else(|| Error::format("scheme", 5, format!("unknown tag {}", buf[5])))?;
        let len = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
        let payload = &buf[10..];
        if payload.len() < len.div_ceil(8) {
            return Err(Error::format("payload", 10, "truncated bit payload"));
        }
        Ok(HelperData {
            bits: bits::bytes_to_bits(payload, len),
            scheme,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Code + interleaver + frame geometry.
///
/// A frame of `frame_len` bits holds the interleaved codeword of
/// `info_len` information bits, zero-padded at the tail to the fixed length;
/// `info_len` is the largest value whose coded-and-interleaved length fits.
#[derive(Debug, Clone)]
pub struct FuzzyExtractor {
    code: ConvCodeSpec,
    il: InterleaverSpec,
    frame_len: usize,
    info_len: usize,
}

impl FuzzyExtractor {
    pub fn new(code: ConvCodeSpec, il: InterleaverSpec, frame_len: usize) -> Result<Self> {
        let flush = il.flush_len();
        let l = code.n_out();
        let m = code.memory();
        if frame_len <= flush {
            return Err(Error::parameter(format!(
                "frame of {frame_len} bits cannot hold the {flush}-bit interleaver flush"
            )));
        }
        let steps = (frame_len - flush) / l;
        if steps <= m {
            return Err(Error::parameter(format!(
                "frame of {frame_len} bits leaves no information capacity"
            )));
        }
        Ok(FuzzyExtractor {
            code,
            il,
            frame_len,
            info_len: steps - m,
        })
    }

    /// Default geometry: (1,3,3) code, S=8/Q=4 interleaver, 384-bit frames
    /// (50 information bits).
    pub fn default_384() -> Self {
        Self::new(
            ConvCodeSpec::default_code(),
            InterleaverSpec::default_spec(),
            384,
        )
        .expect("default extractor geometry is valid")
    }

    pub fn code(&self) -> &ConvCodeSpec {
        &self.code
    }

    pub fn interleaver(&self) -> &InterleaverSpec {
        &self.il
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn info_len(&self) -> usize {
        self.info_len
    }

    /// Interleaved-codeword length before tail padding.
    fn natural_len(&self) -> usize {
        self.code.n_out() * (self.info_len + self.code.memory()) + self.il.flush_len()
    }

    /// Encode info bits into a padded frame.
    pub fn encode_frame(&self, info: &[bool]) -> Result<Vec<bool>> {
        if info.len() != self.info_len {
            return Err(Error::parameter(format!(
                "expected {} information bits, got {}",
                self.info_len,
                info.len()
            )));
        }
        let mut frame = self.il.interleave(&self.code.encode(info)?);
        frame.resize(self.frame_len, false);
        Ok(frame)
    }

    /// Viterbi-decode a (possibly corrupted) frame back to info bits.
    pub fn decode_frame(&self, frame: &[bool]) -> Result<Vec<bool>> {
        if frame.len() != self.frame_len {
            return Err(Error::parameter(format!(
                "expected a {}-bit frame, got {}",
                self.frame_len,
                frame.len()
            )));
        }
        let coded = self.il.deinterleave(&frame[..self.natural_len()]);
        self.code.decode(&coded)
    }

    /// Enrollment: derive helper data for a response.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        response: &Response,
        scheme: Scheme,
        rng: &mut R,
    ) -> Result<HelperData> {
        if response.len() != self.frame_len {
            return Err(Error::parameter(format!(
                "response is {} bits, frame is {}",
                response.len(),
                self.frame_len
            )));
        }
        let bits = match scheme {
            Scheme::CodeOffset => {
                let seed = bits::random_bits(rng, self.info_len);
                bits::xor(&self.encode_frame(&seed)?, response.bits())
            }
            Scheme::PaperLiteral => self.encode_frame(&response.bits()[..self.info_len])?,
        };
        Ok(HelperData { bits, scheme })
    }

    /// Reproduction: correct a noisy response using stored helper data.
    ///
    /// Uncorrectable error patterns are not detected here — the result is
    /// simply a wrong response, which the deployment protocol catches via
    /// its hash check.
    pub fn reproduce(&self, noisy: &Response, helper: &HelperData) -> Result<Response> {
        if noisy.len() != self.frame_len || helper.bits.len() != self.frame_len {
            return Err(Error::parameter("response/helper length mismatch"));
        }
        let bits = match helper.scheme {
            Scheme::CodeOffset => {
                let offset = bits::xor(&helper.bits, noisy.bits());
                let seed = self.decode_frame(&offset)?;
                bits::xor(&helper.bits, &self.encode_frame(&seed)?)
            }
            Scheme::PaperLiteral => {
                let info = self.decode_frame(&helper.bits)?;
                self.encode_frame(&info)?
            }
        };
        Ok(Response::from_bits(bits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puf::{Challenge, PufDevice};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn noisy_copy<R: Rng>(r: &Response, ber: f64, rng: &mut R) -> Response {
        Response::from_bits(
            r.bits()
                .iter()
                .map(|&b| if rng.gen::<f64>() < ber { !b } else { b })
                .collect(),
        )
    }

    #[test]
    fn default_geometry() {
        let fe = FuzzyExtractor::default_384();
        assert_eq!(fe.frame_len(), 384);
        assert_eq!(fe.info_len(), 50);
        assert_eq!(fe.natural_len(), 383);
    }

    #[test]
    fn code_offset_helper_xors_to_a_codeword() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let fe = FuzzyExtractor::default_384();
        let response = Response::from_bits(crate::bits::random_bits(&mut rng, 384));
        let hd = fe.generate(&response, Scheme::CodeOffset, &mut rng).unwrap();
        let codeword = crate::bits::xor(hd.bits(), response.bits());
        // Valid frame: decoding then re-encoding reproduces it exactly.
        let info = fe.decode_frame(&codeword).unwrap();
        assert_eq!(fe.encode_frame(&info).unwrap(), codeword);
    }

    #[test]
    fn helper_generations_use_fresh_seeds() {
        let mut rng = ChaCha12Rng::seed_from_u64(32);
        let fe = FuzzyExtractor::default_384();
        let response = Response::from_bits(crate::bits::random_bits(&mut rng, 384));
        let hd1 = fe.generate(&response, Scheme::CodeOffset, &mut rng).unwrap();
        let hd2 = fe.generate(&response, Scheme::CodeOffset, &mut rng).unwrap();
        assert_ne!(hd1.bits(), hd2.bits());
    }

    #[test]
    fn rejects_length_mismatch() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let fe = FuzzyExtractor::default_384();
        let short = Response::from_bits(crate::bits::random_bits(&mut rng, 100));
        assert!(fe.generate(&short, Scheme::CodeOffset, &mut rng).is_err());
    }

    #[test]
    fn noiseless_reproduction_is_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(34);
        let fe = FuzzyExtractor::default_384();
        for scheme in [Scheme::CodeOffset, Scheme::PaperLiteral] {
            let response = Response::from_bits(crate::bits::random_bits(&mut rng, 384));
            let hd = fe.generate(&response, scheme, &mut rng).unwrap();
            let reproduced = fe.reproduce(&response, &hd).unwrap();
            match scheme {
                Scheme::CodeOffset => assert_eq!(reproduced, response),
                // The literal scheme's stable value is the helper frame
                // itself (that is what makes it leaky).
                Scheme::PaperLiteral => assert_eq!(reproduced.bits(), hd.bits()),
            }
        }
    }

    #[test]
    fn corrects_r_isolated_flips_exhaustively() {
        // Small geometry so single and double flips can be swept in full.
        let fe = FuzzyExtractor::new(
            ConvCodeSpec::default_code(),
            InterleaverSpec::new(2, 1).unwrap(),
            40,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(35);
        let response = Response::from_bits(crate::bits::random_bits(&mut rng, 40));
        let hd = fe.generate(&response, Scheme::CodeOffset, &mut rng).unwrap();
        for i in 0..40 {
            for j in i..40 {
                let mut bits = response.bits().to_vec();
                bits[i] = !bits[i];
                if j != i {
                    bits[j] = !bits[j];
                }
                let reproduced = fe.reproduce(&Response::from_bits(bits), &hd).unwrap();
                assert_eq!(reproduced, response, "flips at {i},{j}");
            }
        }
    }

    #[test]
    fn monte_carlo_reproduction_at_one_percent_ber() {
        let mut rng = ChaCha12Rng::seed_from_u64(36);
        let fe = FuzzyExtractor::default_384();
        let device = PufDevice::from_seed(77, 0.0, 384).unwrap();
        let challenge = Challenge::random(&mut rng);
        let enrolled = device.reference_response(&challenge);
        let hd = fe.generate(&enrolled, Scheme::CodeOffset, &mut rng).unwrap();
        let trials = 1000;
        let mut ok = 0;
        for _ in 0..trials {
            let noisy = noisy_copy(&enrolled, 0.01, &mut rng);
            if fe.reproduce(&noisy, &hd).unwrap() == enrolled {
                ok += 1;
            }
        }
        let rate = ok as f64 / trials as f64;
        println!("fe reproduction success at 1% BER: {rate}");
        assert!(rate >= 0.99, "success rate {rate}");
    }

    #[test]
    fn helper_file_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let fe = FuzzyExtractor::default_384();
        let response = Response::from_bits(crate::bits::random_bits(&mut rng, 384));
        let hd = fe.generate(&response, Scheme::CodeOffset, &mut rng).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("helper.pfhd");
        hd.save(&path).unwrap();
        assert_eq!(HelperData::load(&path).unwrap(), hd);

        let bytes = hd.to_bytes();
        assert!(HelperData::from_bytes(&bytes[..8]).is_err());
        let mut bad = bytes.clone();
        bad[5] = 9;
        assert!(matches!(
            HelperData::from_bytes(&bad),
            Err(Error::Format { section: "scheme", .. })
        ));
    }

    #[test]
    fn rejects_impossible_geometry() {
        // Frame smaller than the interleaver flush.
        assert!(FuzzyExtractor::new(
            ConvCodeSpec::default_code(),
            InterleaverSpec::default_spec(),
            200,
        )
        .is_err());
    }
}
