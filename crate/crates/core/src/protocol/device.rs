//! Device side: enrollment reads and the deployment session.

use rand::Rng;

use super::codec::{FrameType, RegKind, WireFrame};
use super::store::DeviceStore;
use super::{hash_concat, Phase};
use crate::chaos::SecretKey;
use crate::ecc::{FuzzyExtractor, HelperData};
use crate::error::{Error, Result};
use crate::model::{self, ModelWeights};
use crate::puf::{Challenge, DeviceId, PufDevice, Response};

/// How enrollment reads the PUF: an ideal noise-suppressed read, or a
/// bitwise majority over repeated noisy evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnrollmentRead {
    Ideal,
    Majority(usize),
}

/// Deployment session state on the device. The corrected response lives
/// here and only here; it is dropped with the session and never persisted.
#[derive(Debug)]
pub struct DeviceSession {
    pub phase: Phase,
    nonce: [u8; 16],
    challenge: Option<Challenge>,
    response: Option<Response>,
}

/// A local device: its PUF, the fuzzy-extractor geometry, and the
/// challenge/helper pairs from registration.
pub struct DeviceAgent {
    puf: PufDevice,
    fe: FuzzyExtractor,
    store: DeviceStore,
}

impl DeviceAgent {
    pub fn new(puf: PufDevice, fe: FuzzyExtractor) -> Result<Self> {
        if puf.response_len() != fe.frame_len() {
            return Err(Error::parameter(format!(
                "PUF response of {} bits vs extractor frame of {}",
                puf.response_len(),
                fe.frame_len()
            )));
        }
        let store = DeviceStore::new(puf.id());
        Ok(DeviceAgent { puf, fe, store })
    }

    pub fn id(&self) -> DeviceId {
        self.puf.id()
    }

    pub fn puf(&self) -> &PufDevice {
        &self.puf
    }

    pub fn store(&self) -> &DeviceStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut DeviceStore {
        &mut self.store
    }

    /// Registration step 3: answer the provider's challenges.
    pub fn respond_all<R: Rng + ?Sized>(
        &self,
        challenges: &[Challenge],
        read: EnrollmentRead,
        rng: &mut R,
    ) -> Vec<Response> {
        challenges
            .iter()
            .map(|c| match read {
                EnrollmentRead::Ideal => self.puf.reference_response(c),
                EnrollmentRead::Majority(reads) => self.puf.majority_response(c, reads, rng),
            })
            .collect()
    }

    /// Registration step 5: keep the challenge/helper pairs.
    pub fn adopt_helpers(&mut self, pairs: Vec<(Challenge, HelperData)>) {
        for (challenge, helper) in pairs {
            self.store.add(challenge, helper);
        }
    }

    // --- Framed registration client ----------------------------------------

    pub fn reg_hello(&self, z: usize) -> WireFrame {
        WireFrame::new(
            FrameType::Reg,
            vec![
                vec![RegKind::Hello as u8],
                self.id().0.to_vec(),
                (z as u32).to_le_bytes().to_vec(),
            ],
        )
    }

    /// Answer a `Challenges` frame with a `Responses` frame.
    pub fn reg_respond<R: Rng + ?Sized>(
        &self,
        challenges_frame: &WireFrame,
        read: EnrollmentRead,
        rng: &mut R,
    ) -> Result<WireFrame> {
        expect_reg(challenges_frame, RegKind::Challenges)?;
        let challenges: Vec<Challenge> = challenges_frame.fields[1..]
            .iter()
            .map(|f| Challenge::from_bytes(f))
            .collect::<Result<_>>()?;
        let responses = self.respond_all(&challenges, read, rng);
        let mut fields = vec![vec![RegKind::Responses as u8], self.id().0.to_vec()];
        fields.extend(responses.iter().map(|r| r.to_bytes()));
        Ok(WireFrame::new(FrameType::Reg, fields))
    }

    /// Store the pairs from a `Helpers` frame.
    pub fn reg_finish(&mut self, helpers_frame: &WireFrame) -> Result<()> {
        expect_reg(helpers_frame, RegKind::Helpers)?;
        let body = &helpers_frame.fields[1..];
        if !body.len().is_multiple_of(2) {
            return Err(Error::Protocol("odd helper field count".into()));
        }
        for pair in body.chunks_exact(2) {
            let challenge = Challenge::from_bytes(&pair[0])?;
            let helper = HelperData::from_bytes(&pair[1])?;
            self.store.add(challenge, helper);
        }
        Ok(())
    }

    // --- Deployment ---------------------------------------------------------

    /// Step 1: request a model with a fresh nonce.
    pub fn request<R: Rng + ?Sized>(&self, rng: &mut R) -> (DeviceSession, WireFrame) {
        let mut nonce = [0u8; 16];
        rng.fill(&mut nonce);
        let frame = WireFrame::new(
            FrameType::Md1,
            vec![self.id().0.to_vec(), nonce.to_vec()],
        );
        (
            DeviceSession {
                phase: Phase::Challenged,
                nonce,
                challenge: None,
                response: None,
            },
            frame,
        )
    }

    /// Step 3: regenerate the response, authenticate the provider, reply
    /// with the device-side hash. A hash mismatch can mean a wrong provider,
    /// a cloned device, or noise beyond the extractor's correction power.
    pub fn verify_and_reply<R: Rng + ?Sized>(
        &self,
        session: &mut DeviceSession,
        m2: &WireFrame,
        rng: &mut R,
    ) -> Result<WireFrame> {
        if session.phase != Phase::Challenged {
            return Err(Error::Protocol("session is not awaiting a challenge".into()));
        }
        if m2.frame_type == FrameType::Error {
            session.phase = Phase::Failed;
            return Err(Error::Protocol(format!(
                "provider refused: {}",
                m2.error_code().unwrap_or_default()
            )));
        }
        if m2.frame_type != FrameType::Mp1 {
            session.phase = Phase::Failed;
            return Err(Error::Protocol("expected M_p1".into()));
        }
        let challenge = Challenge::from_bytes(m2.field(0)?)?;
        let blinded = crate::bits::bytes_to_bits(m2.field(1)?, self.puf.response_len());
        let provider_hash = m2.field(2)?;

        // Missing helper data is a local error; no frame is sent.
        let helper = self.store.helper_for(&challenge).ok_or_else(|| {
            Error::Protocol("no helper data stored for the received challenge".into())
        })?;

        let noisy = self.puf.evaluate(&challenge, rng);
        let corrected = self.fe.reproduce(&noisy, helper)?;

        let expected = hash_concat(&session.nonce, &corrected.to_bytes());
        if provider_hash != expected {
            session.phase = Phase::Failed;
            return Err(Error::Auth(
                "provider hash mismatch (wrong provider, wrong device, or uncorrectable noise)"
                    .into(),
            ));
        }

        // Recover the provider's nonce mask and prove knowledge of R.
        let np_mask = crate::bits::xor(&blinded, corrected.bits());
        let reply_hash = hash_concat(
            &crate::bits::bits_to_bytes(&np_mask),
            &corrected.to_bytes(),
        );
        session.challenge = Some(challenge);
        session.response = Some(corrected);
        session.phase = Phase::Authenticated;
        Ok(WireFrame::new(FrameType::Md2, vec![reply_hash.to_vec()]))
    }

    /// Step 5: decrypt the delivered container with the session response.
    pub fn receive_model(
        &self,
        session: &mut DeviceSession,
        m4: &WireFrame,
    ) -> Result<ModelWeights> {
        if session.phase != Phase::Authenticated {
            return Err(Error::Protocol("session is not authenticated".into()));
        }
        if m4.frame_type == FrameType::Error {
            session.phase = Phase::Failed;
            return Err(Error::Protocol(format!(
                "provider refused delivery: {}",
                m4.error_code().unwrap_or_default()
            )));
        }
        if m4.frame_type != FrameType::Mp2 {
            session.phase = Phase::Failed;
            return Err(Error::Protocol("expected M_p2".into()));
        }
        let em = model::encrypted_from_bytes(m4.field(0)?)?;
        let challenge = session.challenge.as_ref().expect("authenticated session");
        if em.challenge_id != challenge.id() {
            session.phase = Phase::Failed;
            return Err(Error::format(
                "challenge-id",
                0,
                "container bound to a different challenge",
            ));
        }
        let response = session.response.as_ref().expect("authenticated session");
        let key = SecretKey::from_response(response)?;
        let model = model::decrypt_model(&em, &key)?;
        session.phase = Phase::Delivered;
        Ok(model)
    }
}

fn expect_reg(frame: &WireFrame, kind: RegKind) -> Result<()> {
    if frame.frame_type == FrameType::Error {
        return Err(Error::Protocol(format!(
            "registration refused: {}",
            frame.error_code().unwrap_or_default()
        )));
    }
    if frame.frame_type != FrameType::Reg
        || frame.field(0)?.first().copied().and_then(RegKind::from_byte) != Some(kind)
    {
        return Err(Error::Protocol(format!("expected {kind:?} frame")));
    }
    Ok(())
}
