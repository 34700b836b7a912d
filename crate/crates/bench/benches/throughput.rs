//! Hot-path throughput: PUF response generation, the coding pipeline behind
//! key regeneration, and per-layer ciphering.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use pufbind::chaos::{LogisticParams, SecretKey};
use pufbind::cipher::{self, CipherConfig, Mode};
use pufbind::ecc::{ConvCodeSpec, FuzzyExtractor, Scheme};
use pufbind::model::Matrix;
use pufbind::puf::{Challenge, PufDevice, Response};

fn bench_puf(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let device = PufDevice::from_seed(1, 0.02, 384).unwrap();
    let challenge = Challenge::random(&mut rng);
    c.bench_function("puf_evaluate_384", |b| {
        b.iter(|| black_box(device.evaluate(black_box(&challenge), &mut rng)))
    });
}

fn bench_code(c: &mut Criterion) {
    let code = ConvCodeSpec::default_code();
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let info: Vec<bool> = (0..50).map(|_| rng.gen()).collect();
    let coded = code.encode(&info).unwrap();
    c.bench_function("conv_encode_50", |b| {
        b.iter(|| black_box(code.encode(black_box(&info)).unwrap()))
    });
    c.bench_function("viterbi_decode_50", |b| {
        b.iter(|| black_box(code.decode(black_box(&coded)).unwrap()))
    });
}

fn bench_fuzzy(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let fe = FuzzyExtractor::default_384();
    let enrolled = Response::from_bits(pufbind::bits::random_bits(&mut rng, 384));
    let helper = fe.generate(&enrolled, Scheme::CodeOffset, &mut rng).unwrap();
    let noisy = Response::from_bits(
        enrolled
            .bits()
            .iter()
            .map(|&b| if rng.gen::<f64>() < 0.01 { !b } else { b })
            .collect(),
    );
    c.bench_function("fe_reproduce_384_1pct", |b| {
        b.iter(|| black_box(fe.reproduce(black_box(&noisy), &helper).unwrap()))
    });
}

fn bench_cipher(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let key = SecretKey::from_seed(4, 384).unwrap();
    let weights = Matrix::from_vec(
        64,
        64,
        (0..64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    for mode in [Mode::Float, Mode::Exact] {
        let cfg = CipherConfig {
            t_pre: 1000,
            ..CipherConfig::default()
        }
        .with_mode(mode);
        let ct = cipher::encrypt_layer(&weights, &[], &key, &cfg, 0).unwrap();
        c.bench_function(&format!("encrypt_layer_64x64_{mode}"), |b| {
            b.iter(|| black_box(cipher::encrypt_layer(&weights, &[], &key, &cfg, 0).unwrap()))
        });
        c.bench_function(&format!("decrypt_layer_64x64_{mode}"), |b| {
            b.iter(|| black_box(cipher::decrypt_layer(&ct, &key, &cfg).unwrap()))
        });
    }
}

fn bench_keystream(c: &mut Criterion) {
    let key = SecretKey::from_seed(5, 384).unwrap();
    let params = LogisticParams::derive(key.permute_half(), 16).unwrap();
    c.bench_function("logistic_segment_4096", |b| {
        b.iter(|| {
            let mut stream = params.stream();
            stream.warmup(1000);
            black_box(stream.segment(4096))
        })
    });
}

criterion_group!(
    benches,
    bench_puf,
    bench_code,
    bench_fuzzy,
    bench_cipher,
    bench_keystream
);
criterion_main!(benches);
