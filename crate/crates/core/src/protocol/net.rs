//! Blocking framed transport over any `Read`/`Write` pair, and the small
//! session drivers the demo and tests use over loopback TCP.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::codec::{FrameDecoder, WireFrame};
use super::device::DeviceAgent;
use super::provider::Provider;
use crate::cipher::CipherConfig;
use crate::error::{Error, Result};
use crate::model::ModelWeights;

pub fn write_frame<W: Write>(w: &mut W, frame: &WireFrame) -> Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

/// Blocking read of exactly one frame.
pub fn read_frame<R: Read>(r: &mut R) -> Result<WireFrame> {
    let mut decoder = FrameDecoder::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(Error::Protocol("connection closed mid-frame".into()));
        }
        if let Some(frame) = decoder.push(&byte)?.pop() {
            return Ok(frame);
        }
    }
}

/// Serve `sessions` deployment sessions, one thread per connection, then
/// return. The provider is shared behind a mutex: challenge selection and
/// its used-flag update happen under the lock.
pub fn serve_sessions(
    listener: TcpListener,
    provider: Arc<Mutex<Provider>>,
    model: Arc<ModelWeights>,
    cfg: CipherConfig,
    sessions: usize,
    rng_seed: u64,
) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let mut handles = Vec::new();
        for i in 0..sessions {
            let Ok((stream, _)) = listener.accept() else {
                break;
            };
            let provider = Arc::clone(&provider);
            let model = Arc::clone(&model);
            handles.push(thread::spawn(move || {
                let mut rng = ChaCha20Rng::seed_from_u64(rng_seed ^ (i as u64) << 32);
                let _ = serve_one(stream, &provider, &model, &cfg, &mut rng);
            }));
        }
        for h in handles {
            let _ = h.join();
        }
    })
}

fn serve_one(
    mut stream: std::net::TcpStream,
    provider: &Mutex<Provider>,
    model: &ModelWeights,
    cfg: &CipherConfig,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let m1 = read_frame(&mut stream)?;
    let (session, reply) = provider.lock().unwrap().handle_request(&m1, rng);
    write_frame(&mut stream, &reply)?;
    let Some(mut session) = session else {
        return Ok(()); // refused; error frame already sent
    };
    let m3 = read_frame(&mut stream)?;
    let m4 = provider
        .lock()
        .unwrap()
        .deliver(&mut session, &m3, model, cfg);
    write_frame(&mut stream, &m4)?;
    Ok(())
}

/// Drive one deployment from the device side over a connected stream.
pub fn run_device_deployment<S: Read + Write, R: rand::Rng + ?Sized>(
    stream: &mut S,
    device: &DeviceAgent,
    rng: &mut R,
) -> Result<ModelWeights> {
    let (mut session, m1) = device.request(rng);
    write_frame(stream, &m1)?;
    let m2 = read_frame(stream)?;
    let m3 = device.verify_and_reply(&mut session, &m2, rng)?;
    write_frame(stream, &m3)?;
    let m4 = read_frame(stream)?;
    device.receive_model(&mut session, &m4)
}
