//! Persistence for the provider's CRP database ("PFDB") and the device's
//! challenge/helper store ("PFDV"). Records are length-prefixed so the
//! database file can be appended to.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::ecc::HelperData;
use crate::error::{Error, Result};
use crate::puf::{Challenge, DeviceId, Response};

const DB_MAGIC: &[u8; 4] = b"PFDB";
const DEVICE_MAGIC: &[u8; 4] = b"PFDV";
const STORE_VERSION: u8 = 1;

/// One enrollment record held by the provider. `used` flips when a
/// deployment session consumes the challenge; consumed records are never
/// reissued.
#[derive(Debug, Clone, PartialEq)]
pub struct CrpRecord {
    pub device_id: DeviceId,
    pub challenge: Challenge,
    pub response: Response,
    pub helper: HelperData,
    pub used: bool,
}

/// Provider-side CRP database.
#[derive(Debug, Default, Clone)]
pub struct CrpStore {
    records: Vec<CrpRecord>,
}

impl CrpStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, record: CrpRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CrpRecord] {
        &self.records
    }

    pub fn get(&self, index: usize) -> &CrpRecord {
        &self.records[index]
    }

    pub fn unused_count(&self, device: DeviceId) -> usize {
        self.records
            .iter()
            .filter(|r| r.device_id == device && !r.used)
            .count()
    }

    /// Select a random unused record for the device and mark it used in the
    /// same step, so concurrent sessions can never pick the same one.
    pub fn take_unused<R: Rng + ?Sized>(
        &mut self,
        device: DeviceId,
        rng: &mut R,
    ) -> Option<usize> {
        let candidates: Vec<usize> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.device_id == device && !r.used)
            .map(|(i, _)| i)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let pick = candidates[rng.gen_range(0..candidates.len())];
        self.records[pick].used = true;
        Some(pick)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(DB_MAGIC);
        buf.push(STORE_VERSION);
        buf.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for record in &self.records {
            let mut body = Vec::new();
            body.extend_from_slice(&record.device_id.0);
            push_block(&mut body, &record.challenge.to_bytes());
            push_block(&mut body, &response_block(&record.response));
            push_block(&mut body, &record.helper.to_bytes());
            body.push(record.used as u8);
            push_block(&mut buf, &body);
        }
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut pos = 0;
        expect_magic(buf, DB_MAGIC, "PFDB")?;
        pos += 4;
        if buf.get(pos) != Some(&STORE_VERSION) {
            return Err(Error::format("version", pos as u64, "unsupported"));
        }
        pos += 1;
        let count = read_u32(buf, &mut pos, "record-count")? as usize;
        let mut store = CrpStore::new();
        for _ in 0..count {
            let body = read_block(buf, &mut pos, "record")?;
            let mut p = 0;
            let id: [u8; 16] = body
                .get(..16)
                .ok_or_else(|| Error::format("record", p as u64, "truncated id"))?
                .try_into()
                .unwrap();
            p += 16;
            let challenge = Challenge::from_bytes(read_block(body, &mut p, "challenge")?)
                .map_err(|e| Error::format("challenge", p as u64, e.to_string()))?;
            let response = response_from_block(read_block(body, &mut p, "response")?)?;
            let helper = HelperData::from_bytes(read_block(body, &mut p, "helper")?)?;
            let used = *body
                .get(p)
                .ok_or_else(|| Error::format("record", p as u64, "truncated used flag"))?
                != 0;
            store.add(CrpRecord {
                device_id: DeviceId(id),
                challenge,
                response,
                helper,
                used,
            });
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Device-side store: the challenge/helper pairs received at registration.
/// Holds no response or key material.
#[derive(Debug, Clone)]
pub struct DeviceStore {
    pub device_id: DeviceId,
    entries: Vec<(Challenge, HelperData)>,
}

impl DeviceStore {
    pub fn new(device_id: DeviceId) -> Self {
        DeviceStore {
            device_id,
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, challenge: Challenge, helper: HelperData) {
        self.entries.push((challenge, helper));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Challenge, HelperData)] {
        &self.entries
    }

    /// The store is keyed by challenge value.
    pub fn helper_for(&self, challenge: &Challenge) -> Option<&HelperData> {
        self.entries
            .iter()
            .find(|(c, _)| c == challenge)
            .map(|(_, h)| h)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(DEVICE_MAGIC);
        buf.push(STORE_VERSION);
        buf.extend_from_slice(&self.device_id.0);
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (challenge, helper) in &self.entries {
            push_block(&mut buf, &challenge.to_bytes());
            push_block(&mut buf, &helper.to_bytes());
        }
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        expect_magic(buf, DEVICE_MAGIC, "PFDV")?;
        let mut pos = 4;
        if buf.get(pos) != Some(&STORE_VERSION) {
            return Err(Error::format("version", pos as u64, "unsupported"));
        }
        pos += 1;
        let id: [u8; 16] = buf
            .get(pos..pos + 16)
            .ok_or_else(|| Error::format("device-id", pos as u64, "truncated"))?
            .try_into()
            .unwrap();
        pos += 16;
        let count = read_u32(buf, &mut pos, "entry-count")? as usize;
        let mut store = DeviceStore::new(DeviceId(id));
        for _ in 0..count {
            let challenge = Challenge::from_bytes(read_block(buf, &mut pos, "challenge")?)
                .map_err(|e| Error::format("challenge", pos as u64, e.to_string()))?;
            let helper = HelperData::from_bytes(read_block(buf, &mut pos, "helper")?)?;
            store.add(challenge, helper);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn response_block(response: &Response) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(response.len() as u32).to_le_bytes());
    out.extend_from_slice(&response.to_bytes());
    out
}

fn response_from_block(block: &[u8]) -> Result<Response> {
    if block.len() < 4 {
        return Err(Error::format("response", 0, "truncated"));
    }
    let nbits = u32::from_le_bytes(block[..4].try_into().unwrap()) as usize;
    if block.len() < 4 + nbits.div_ceil(8) {
        return Err(Error::format("response", 4, "truncated payload"));
    }
    Ok(Response::from_bits(crate::bits::bytes_to_bits(
        &block[4..],
        nbits,
    )))
}

fn expect_magic(buf: &[u8], magic: &[u8; 4], name: &'static str) -> Result<()> {
    if buf.len() < 4 || &buf[..4] != magic {
        return Err(Error::format("magic", 0, format!("expected {name}")));
    }
    Ok(())
}

fn push_block(buf: &mut Vec<u8>, block: &[u8]) {
    buf.extend_from_slice(&(block.len() as u32).to_le_bytes());
    buf.extend_from_slice(block);
}

fn read_u32(buf: &[u8], pos: &mut usize, section: &'static str) -> Result<u32> {
    let raw = buf
        .get(*pos..*pos + 4)
        .ok_or_else(|| Error::format(section, *pos as u64, "truncated"))?;
    *pos += 4;
    Ok(u32::from_le_bytes(raw.try_into().unwrap()))
}

fn read_block<'a>(buf: &'a [u8], pos: &mut usize, section: &'static str) -> Result<&'a [u8]> {
    let len = read_u32(buf, pos, section)? as usize;
    let block = buf
        .get(*pos..*pos + len)
        .ok_or_else(|| Error::format(section, *pos as u64, "truncated block"))?;
    *pos += len;
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecc::{FuzzyExtractor, Scheme};
    use crate::puf::PufDevice;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn sample_record(seed: u64, rng: &mut ChaCha12Rng) -> CrpRecord {
        let device = PufDevice::from_seed(seed, 0.0, 384).unwrap();
        let challenge = Challenge::random(rng);
        let response = device.reference_response(&challenge);
        let fe = FuzzyExtractor::default_384();
        let helper = fe.generate(&response, Scheme::CodeOffset, rng).unwrap();
        CrpRecord {
            device_id: device.id(),
            challenge,
            response,
            helper,
            used: false,
        }
    }

    #[test]
    fn crp_store_round_trips() {
        let mut rng = ChaCha12Rng::seed_from_u64(81);
        let mut store = CrpStore::new();
        for seed in 0..3 {
            store.add(sample_record(seed, &mut rng));
        }
        store.records[1].used = true;
        let bytes = store.to_bytes();
        let back = CrpStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.records(), store.records());
        assert!(CrpStore::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn take_unused_is_single_use() {
        let mut rng = ChaCha12Rng::seed_from_u64(82);
        let mut store = CrpStore::new();
        for _ in 0..5 {
            store.add(sample_record(7, &mut rng));
        }
        let device = store.get(0).device_id;
        let mut taken = Vec::new();
        while let Some(idx) = store.take_unused(device, &mut rng) {
            taken.push(idx);
        }
        taken.sort_unstable();
        assert_eq!(taken, vec![0, 1, 2, 3, 4]);
        assert_eq!(store.unused_count(device), 0);
    }

    #[test]
    fn device_store_round_trips_and_looks_up_by_challenge() {
        let mut rng = ChaCha12Rng::seed_from_u64(83);
        let record = sample_record(9, &mut rng);
        let mut store = DeviceStore::new(record.device_id);
        store.add(record.challenge.clone(), record.helper.clone());

        let back = DeviceStore::from_bytes(&store.to_bytes()).unwrap();
        assert_eq!(back.device_id, store.device_id);
        assert_eq!(back.helper_for(&record.challenge), Some(&record.helper));
        let other = Challenge::random(&mut rng);
        assert_eq!(back.helper_for(&other), None);
    }
}
