//! Provider side of registration and deployment.

use std::collections::HashMap;

use rand::Rng;

use super::codec::{FrameType, RegKind, WireFrame};
use super::store::{CrpRecord, CrpStore};
use super::{expand_mask, hash_concat, Phase};
use crate::chaos::SecretKey;
use crate::cipher::CipherConfig;
use crate::ecc::{FuzzyExtractor, HelperData, Scheme};
use crate::error::{Error, Result};
use crate::model::{self, ModelWeights};
use crate::puf::{Challenge, DeviceId, Response};

#[derive(Debug, Clone, Copy)]
pub struct Subscription {
    pub paid: bool,
}

/// Deployment session state on the provider, one per connection.
#[derive(Debug)]
pub struct ProviderSession {
    pub device_id: DeviceId,
    pub phase: Phase,
    nonce_device: Vec<u8>,
    np_mask: Vec<bool>,
    crp_index: usize,
}

impl ProviderSession {
    /// The device nonce this session answered (audit surface).
    pub fn device_nonce(&self) -> &[u8] {
        &self.nonce_device
    }

    pub fn crp_index(&self) -> usize {
        self.crp_index
    }
}

/// Model provider: subscriber registry, CRP database and the helper-data
/// scheme it enrolls with.
pub struct Provider {
    fe: FuzzyExtractor,
    scheme: Scheme,
    store: CrpStore,
    subscribers: HashMap<DeviceId, Subscription>,
    pending_reg: HashMap<DeviceId, Vec<Challenge>>,
}

impl Provider {
    pub fn new(fe: FuzzyExtractor) -> Self {
        Provider {
            fe,
            scheme: Scheme::CodeOffset,
            store: CrpStore::new(),
            subscribers: HashMap::new(),
            pending_reg: HashMap::new(),
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn fe(&self) -> &FuzzyExtractor {
        &self.fe
    }

    pub fn store(&self) -> &CrpStore {
        &self.store
    }

    pub fn set_paid(&mut self, device: DeviceId, paid: bool) {
        if let Some(sub) = self.subscribers.get_mut(&device) {
            sub.paid = paid;
        }
    }

    // --- Registration -----------------------------------------------------

    /// Step 1: a device announces itself. Duplicate ids are rejected.
    pub fn begin_registration(&mut self, device: DeviceId) -> Result<()> {
        if self.subscribers.contains_key(&device) {
            return Err(Error::Enrollment(format!(
                "device {} already registered",
                device.to_hex()
            )));
        }
        self.subscribers.insert(device, Subscription { paid: true });
        Ok(())
    }

    /// Step 2: issue `z` fresh challenges.
    pub fn issue_challenges<R: Rng + ?Sized>(
        &mut self,
        device: DeviceId,
        z: usize,
        rng: &mut R,
    ) -> Result<Vec<Challenge>> {
        if z < 1 {
            return Err(Error::parameter("z must be >= 1"));
        }
        if !self.subscribers.contains_key(&device) {
            return Err(Error::Enrollment("device not in registration".into()));
        }
        let challenges: Vec<Challenge> = (0..z).map(|_| Challenge::random(rng)).collect();
        self.pending_reg.insert(device, challenges.clone());
        Ok(challenges)
    }

    /// Steps 4-5: store CRPs, derive helper data, hand back the pairs the
    /// device keeps.
    pub fn complete_registration<R: Rng + ?Sized>(
        &mut self,
        device: DeviceId,
        challenges: &[Challenge],
        responses: &[Response],
        rng: &mut R,
    ) -> Result<Vec<(Challenge, HelperData)>> {
        let issued = self
            .pending_reg
            .remove(&device)
            .ok_or_else(|| Error::Enrollment("no challenges pending for device".into()))?;
        if issued != challenges || challenges.len() != responses.len() {
            return Err(Error::Enrollment(
                "registration reply does not match the issued challenges".into(),
            ));
        }
        let mut pairs = Vec::with_capacity(challenges.len());
        for (challenge, response) in challenges.iter().zip(responses) {
            let helper = self.fe.generate(response, self.scheme, rng)?;
            self.store.add(CrpRecord {
                device_id: device,
                challenge: challenge.clone(),
                response: response.clone(),
                helper: helper.clone(),
                used: false,
            });
            pairs.push((challenge.clone(), helper));
        }
        Ok(pairs)
    }

    /// Framed registration endpoint (secure transport assumed).
    pub fn handle_reg<R: Rng + ?Sized>(&mut self, frame: &WireFrame, rng: &mut R) -> WireFrame {
        match self.handle_reg_inner(frame, rng) {
            Ok(reply) => reply,
            Err(e) => WireFrame::error("reg-failed", &e.to_string()),
        }
    }

    fn handle_reg_inner<R: Rng + ?Sized>(
        &mut self,
        frame: &WireFrame,
        rng: &mut R,
    ) -> Result<WireFrame> {
        if frame.frame_type != FrameType::Reg {
            return Err(Error::Protocol("expected a registration frame".into()));
        }
        let kind = frame
            .field(0)?
            .first()
            .copied()
            .and_then(RegKind::from_byte)
            .ok_or_else(|| Error::Protocol("bad registration subtype".into()))?;
        match kind {
            RegKind::Hello => {
                let id = DeviceId(field_array(frame, 1)?);
                let z = u32::from_le_bytes(
                    frame
                        .field(2)?
                        .try_into()
                        .map_err(|_| Error::Protocol("bad z field".into()))?,
                ) as usize;
                self.begin_registration(id)?;
                let challenges = self.issue_challenges(id, z, rng)?;
                let mut fields = vec![vec![RegKind::Challenges as u8]];
                fields.extend(challenges.iter().map(|c| c.to_bytes()));
                Ok(WireFrame::new(FrameType::Reg, fields))
            }
            RegKind::Responses => {
                let id = DeviceId(field_array(frame, 1)?);
                let issued = self
                    .pending_reg
                    .get(&id)
                    .cloned()
                    .ok_or_else(|| Error::Enrollment("no challenges pending".into()))?;
                let responses: Vec<Response> = frame.fields[2..]
                    .iter()
                    .map(|f| {
                        Response::from_bits(crate::bits::bytes_to_bits(
                            f,
                            self.fe.frame_len().min(f.len() * 8),
                        ))
                    })
                    .collect();
                let pairs = self.complete_registration(id, &issued, &responses, rng)?;
                let mut fields = vec![vec![RegKind::Helpers as u8]];
                for (challenge, helper) in &pairs {
                    fields.push(challenge.to_bytes());
                    fields.push(helper.to_bytes());
                }
                Ok(WireFrame::new(FrameType::Reg, fields))
            }
            other => Err(Error::Protocol(format!(
                "unexpected registration subtype {other:?} at provider"
            ))),
        }
    }

    // --- Deployment --------------------------------------------------------

    /// Handle `M_d1`, producing `M_p1` and a session, or an error frame.
    pub fn handle_request<R: Rng + ?Sized>(
        &mut self,
        m1: &WireFrame,
        rng: &mut R,
    ) -> (Option<ProviderSession>, WireFrame) {
        match self.handle_request_inner(m1, rng) {
            Ok((session, reply)) => (Some(session), reply),
            Err(code) => (None, WireFrame::error(code, "deployment refused")),
        }
    }

    fn handle_request_inner<R: Rng + ?Sized>(
        &mut self,
        m1: &WireFrame,
        rng: &mut R,
    ) -> std::result::Result<(ProviderSession, WireFrame), &'static str> {
        if m1.frame_type != FrameType::Md1 {
            return Err("bad-frame");
        }
        let id = DeviceId(match m1.field(0).ok().and_then(|f| f.try_into().ok()) {
            Some(a) => a,
            None => return Err("bad-frame"),
        });
        let nonce_device = match m1.field(1) {
            Ok(n) if n.len() == 16 => n.to_vec(),
            _ => return Err("bad-frame"),
        };
        match self.subscribers.get(&id) {
            Some(sub) if sub.paid => {}
            _ => return Err("unsubscribed"),
        }
        // Select-and-mark is one step: concurrent sessions can never share
        // a record, and a consumed challenge is never reissued.
        let crp_index = match self.store.take_unused(id, rng) {
            Some(i) => i,
            None => return Err("no-crp"),
        };
        let record = self.store.get(crp_index);

        let mut np = [0u8; 16];
        rng.fill(&mut np);
        let np_mask = expand_mask(&np, record.response.len());
        let blinded = crate::bits::xor(record.response.bits(), &np_mask);
        let provider_hash = hash_concat(&nonce_device, &record.response.to_bytes());

        let reply = WireFrame::new(
            FrameType::Mp1,
            vec![
                record.challenge.to_bytes(),
                crate::bits::bits_to_bytes(&blinded),
                provider_hash.to_vec(),
            ],
        );
        Ok((
            ProviderSession {
                device_id: id,
                phase: Phase::Challenged,
                nonce_device,
                np_mask,
                crp_index,
            },
            reply,
        ))
    }

    /// Handle `M_d2`: authenticate the device and, on success, deliver the
    /// model encrypted under the session response.
    pub fn deliver(
        &mut self,
        session: &mut ProviderSession,
        m3: &WireFrame,
        model: &ModelWeights,
        cfg: &CipherConfig,
    ) -> WireFrame {
        if session.phase != Phase::Challenged {
            session.phase = Phase::Failed;
            return WireFrame::error("bad-state", "no pending challenge");
        }
        if m3.frame_type != FrameType::Md2 {
            session.phase = Phase::Failed;
            return WireFrame::error("bad-frame", "expected M_d2");
        }
        let record = self.store.get(session.crp_index);
        let expected = hash_concat(
            &crate::bits::bits_to_bytes(&session.np_mask),
            &record.response.to_bytes(),
        );
        if m3.field(0).map(|h| h != expected).unwrap_or(true) {
            session.phase = Phase::Failed;
            return WireFrame::error("device-auth-failed", "hash mismatch");
        }
        if let Err(e) = model.validate() {
            session.phase = Phase::Failed;
            return WireFrame::error("bad-model", &e.to_string());
        }
        let key = match SecretKey::from_response(&record.response) {
            Ok(k) => k,
            Err(e) => {
                session.phase = Phase::Failed;
                return WireFrame::error("bad-key", &e.to_string());
            }
        };
        let challenge_id = record.challenge.id();
        match model::encrypt_model(model, &key, cfg, model::LayerSelection::All, challenge_id) {
            Ok(em) => {
                session.phase = Phase::Delivered;
                WireFrame::new(FrameType::Mp2, vec![crate::model::encrypted_to_bytes(&em)])
            }
            Err(e) => {
                session.phase = Phase::Failed;
                WireFrame::error("encrypt-failed", &e.to_string())
            }
        }
    }
}

fn field_array<const N: usize>(frame: &WireFrame, index: usize) -> Result<[u8; N]> {
    frame
        .field(index)?
        .try_into()
        .map_err(|_| Error::Protocol(format!("field {index} has the wrong width")))
}
