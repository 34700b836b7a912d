//! `pufbind` — device-bound model encryption toolkit.
//!
//! Subcommands cover the pieces end to end: simulated PUF devices and their
//! statistics, the convolutional code behind the fuzzy extractor, model
//! training/encryption/evaluation over the binary container formats, the
//! fine-tuning attack sweeps, and a full registration-plus-deployment demo
//! over loopback TCP.
//!
//! Exit codes: 0 success, 1 protocol/crypto failure, 2 usage/format error.

use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use pufbind::cipher::{CipherConfig, Mode};
use pufbind::ecc::{ConvCodeSpec, FuzzyExtractor, InterleaverSpec};
use pufbind::model::{
    encrypt_model, evaluate, evaluate_encrypted, finetune_attack, load_csv, synth_blobs,
    train_tiny, Dataset, EncryptedModel, LayerSelection, ModelWeights, TrainConfig,
};
use pufbind::protocol::{
    read_frame, register, serve_sessions, write_frame, DeviceAgent, EnrollmentRead, Provider,
};
use pufbind::puf::{calibrate_sigma, Challenge, PufDevice, DEFAULT_RESPONSE_BITS};
use pufbind::SecretKey;

#[derive(Parser)]
#[command(name = "pufbind", version, about = "PUF-bound model encryption toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulated PUF devices: create device files, measure statistics.
    Puf {
        #[command(subcommand)]
        command: PufCmd,
    },
    /// Convolutional code: free distance and round-trip experiments.
    Code {
        #[command(subcommand)]
        command: CodeCmd,
    },
    /// Train, encrypt, decrypt, evaluate and run models.
    Model {
        #[command(subcommand)]
        command: ModelCmd,
    },
    /// Adversarial experiments against encrypted models.
    Attack {
        #[command(subcommand)]
        command: AttackCmd,
    },
    /// Full pipeline: enroll, register, deploy over loopback, decrypt, eval.
    Demo(DemoArgs),
}

#[derive(Subcommand)]
enum PufCmd {
    /// Create a device file.
    New {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Evaluation noise level; exclusive with --ber.
        #[arg(long, conflicts_with = "ber")]
        sigma: Option<f64>,
        /// Target bit-error rate; sigma is calibrated from it.
        #[arg(long)]
        ber: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_RESPONSE_BITS)]
        bits: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Population statistics: uniqueness, bias, reliability.
    Stats {
        #[arg(long, default_value_t = 100)]
        devices: usize,
        #[arg(long, default_value_t = 8)]
        challenges: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also measure reliability at this calibrated BER.
        #[arg(long)]
        ber: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_RESPONSE_BITS)]
        bits: usize,
    },
}

#[derive(Subcommand)]
enum CodeCmd {
    /// Report the free distance and correction capability.
    Dfree {
        /// Octal generator words, MSB = g_0.
        #[arg(long, value_delimiter = ',', default_values_t = vec!["13".to_string(), "15".to_string(), "17".to_string()])]
        generators: Vec<String>,
        #[arg(long, default_value_t = 3)]
        memory: usize,
    },
    /// Encode/corrupt/decode trials.
    Roundtrip {
        /// Number of flipped bits per trial.
        #[arg(long)]
        errors: usize,
        /// Flip a contiguous burst instead of isolated positions.
        #[arg(long)]
        burst: bool,
        /// Apply errors to the bare codeword without interleaving.
        #[arg(long)]
        no_interleave: bool,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Information bits per trial.
        #[arg(long, default_value_t = 50)]
        info_bits: usize,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CSV dataset (label,features...); otherwise synthetic blobs are used.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dims: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    /// Seed of the synthetic dataset (independent of --seed).
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    /// Rows per class held out of training.
    #[arg(long, default_value_t = 50)]
    holdout: usize,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, Dataset)> {
        let ds = match &self.csv {
            Some(path) => load_csv(path, self.classes)?,
            None => synth_blobs(self.classes, self.dims, self.per_class, self.data_seed)?,
        };
        let per_class = ds.rows() / ds.classes();
        let train = per_class.saturating_sub(self.holdout).max(1);
        Ok(ds.split_per_class(train)?)
    }
}

#[derive(Args, Clone)]
struct CipherArgs {
    #[arg(long, default_value_t = 3)]
    np: u16,
    #[arg(long, default_value_t = 2)]
    nd: u16,
    #[arg(long, value_enum, default_value_t = ModeArg::Float)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1000)]
    tpre: u32,
    /// Key material is derived from this seed (experiment harness; the demo
    /// derives keys from the PUF instead).
    #[arg(long, default_value_t = 7)]
    key_seed: u64,
}

impl CipherArgs {
    fn config(&self) -> CipherConfig {
        CipherConfig {
            n_p: self.np,
            n_d: self.nd,
            mode: self.mode.into(),
            t_pre: self.tpre,
            encrypt_biases: false,
        }
    }

    fn key(&self) -> Result<SecretKey> {
        Ok(SecretKey::from_seed(self.key_seed, DEFAULT_RESPONSE_BITS)?)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Float,
    Exact,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Float => Mode::Float,
            ModeArg::Exact => Mode::Exact,
        }
    }
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Train a tiny dense network on blobs or CSV data.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Hidden layer widths.
        #[arg(long, value_delimiter = ',', default_values_t = vec![32usize, 16])]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.005)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encrypt a weight file into a ciphertext container.
    Encrypt {
        #[arg(long)]
        model: PathBuf,
        /// How many leading layers to encrypt ("all" or a count).
        #[arg(long, default_value = "all")]
        layers: String,
        #[command(flatten)]
        cipher: CipherArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decrypt a container back to plaintext weights.
    Decrypt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 7)]
        key_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a plaintext or encrypted model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Decrypt-on-load with this key; without it an encrypted model is
        /// evaluated as the adversary sees it.
        #[arg(long)]
        key_seed: Option<u64>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run one input vector through a model.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated feature values.
        #[arg(long)]
        input: String,
        #[arg(long)]
        key_seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum AttackCmd {
    /// Fine-tuning attack sweeps; emits CSV (layers_encrypted,fraction,accuracy).
    Finetune {
        /// Plaintext model to encrypt and attack.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cipher: CipherArgs,
        #[arg(long, alias = "fraction", value_delimiter = ',', default_values_t = vec![0.01, 0.02, 0.04, 0.06, 0.08, 0.10])]
        fractions: Vec<f64>,
        /// Sweep encrypted-layer counts 1..=N (default: the model depth).
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.005)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DemoArgs {
    /// Connect a clone with foreign silicon claiming the enrolled identity.
    #[arg(long)]
    impostor: bool,
    /// Device bit-error rate during deployment.
    #[arg(long, default_value_t = 0.01)]
    ber: f64,
    #[arg(long, default_value_t = 3)]
    np: u16,
    #[arg(long, default_value_t = 2)]
    nd: u16,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Challenges enrolled per device.
    #[arg(long, default_value_t = 16)]
    z: usize,
    /// Persist the provider CRP database here.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Persist the device challenge/helper store here.
    #[arg(long)]
    device: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// 1 for protocol/crypto failures, 2 for usage and format problems.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<pufbind::Error>() {
        Some(pufbind::Error::Auth(_))
        | Some(pufbind::Error::Protocol(_))
        | Some(pufbind::Error::Range(_)) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Puf { command } => run_puf(command),
        Command::Code { command } => run_code(command),
        Command::Model { command } => run_model(command),
        Command::Attack { command } => run_attack(command),
        Command::Demo(args) => run_demo(args),
    }
}

fn run_puf(cmd: PufCmd) -> Result<()> {
    match cmd {
        PufCmd::New {
            seed,
            sigma,
            ber,
            bits,
            out,
        } => {
            let sigma = match (sigma, ber) {
                (Some(s), _) => s,
                (None, Some(b)) => calibrate_sigma(b)?,
                (None, None) => 0.0,
            };
            let device = PufDevice::from_seed(seed, sigma, bits)?;
            device.save(&out)?;
            println!("device {} (sigma={sigma:.6}, bits={bits}) -> {}", device.id().to_hex(), out.display());
            Ok(())
        }
        PufCmd::Stats {
            devices,
            challenges,
            seed,
            ber,
            bits,
        } => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let challenge_set: Vec<Challenge> =
                (0..challenges).map(|_| Challenge::random(&mut rng)).collect();
            let pop: Vec<PufDevice> = (0..devices)
                .map(|i| PufDevice::from_seed(seed.wrapping_add(i as u64), 0.0, bits))
                .collect::<pufbind::Result<_>>()?;

            let mut inter = 0.0;
            let mut pairs = 0usize;
            for c in &challenge_set {
                let responses: Vec<_> = pop.iter().map(|d| d.reference_response(c)).collect();
                for i in 0..responses.len() {
                    for j in i + 1..responses.len() {
                        inter +=
                            pufbind::bits::frac_hamming(responses[i].bits(), responses[j].bits());
                        pairs += 1;
                    }
                }
            }
            println!("devices={devices} challenges={challenges} bits={bits}");
            println!("inter_device_hd_mean={:.4}", inter / pairs as f64);

            if let Some(target) = ber {
                let sigma = calibrate_sigma(target)?;
                let probe = PufDevice::from_seed(seed, sigma, bits)?;
                let mut flips = 0usize;
                let mut total = 0usize;
                for c in &challenge_set {
                    let reference = probe.reference_response(c);
                    for _ in 0..200 {
                        flips += pufbind::bits::hamming(
                            reference.bits(),
                            probe.evaluate(c, &mut rng).bits(),
                        );
                        total += bits;
                    }
                }
                println!("target_ber={target} calibrated_sigma={sigma:.6}");
                println!("measured_ber={:.5}", flips as f64 / total as f64);
            }
            Ok(())
        }
    }
}

fn parse_code(generators: &[String], memory: usize) -> Result<ConvCodeSpec> {
    let words: Vec<u32> = generators
        .iter()
        .map(|g| u32::from_str_radix(g, 8).with_context(|| format!("bad octal generator {g}")))
        .collect::<Result<_>>()?;
    Ok(ConvCodeSpec::from_octal(&words, memory)?)
}

fn run_code(cmd: CodeCmd) -> Result<()> {
    match cmd {
        CodeCmd::Dfree { generators, memory } => {
            let code = parse_code(&generators, memory)?;
            let (d_free, r) = code.free_distance();
            println!(
                "code (1,{},{}) generators {:?} (octal)",
                code.n_out(),
                code.memory(),
                generators
            );
            println!("d_free={d_free} r={r} catastrophic={}", code.is_catastrophic());
            Ok(())
        }
        CodeCmd::Roundtrip {
            errors,
            burst,
            no_interleave,
            trials,
            seed,
            info_bits,
        } => {
            let code = ConvCodeSpec::default_code();
            let il = InterleaverSpec::default_spec();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut ok = 0usize;
            for _ in 0..trials {
                let info = pufbind::bits::random_bits(&mut rng, info_bits);
                let mut frame = if no_interleave {
                    code.encode(&info)?
                } else {
                    il.interleave(&code.encode(&info)?)
                };
                if errors > 0 {
                    if burst {
                        let start = rng.gen_range(0..frame.len().saturating_sub(errors).max(1));
                        for bit in frame.iter_mut().skip(start).take(errors) {
                            *bit = !*bit;
                        }
                    } else {
                        let mut positions: Vec<usize> = (0..frame.len()).collect();
                        for k in 0..errors.min(frame.len()) {
                            let pick = rng.gen_range(k..positions.len());
                            positions.swap(k, pick);
                            frame[positions[k]] = !frame[positions[k]];
                        }
                    }
                }
                let coded = if no_interleave {
                    frame
                } else {
                    il.deinterleave(&frame)
                };
                if code.decode(&coded)? == info {
                    ok += 1;
                }
            }
            println!(
                "trials={trials} errors={errors} burst={burst} interleave={} info_bits={info_bits}",
                !no_interleave
            );
            println!("success={ok} failure={} rate={:.4}", trials - ok, ok as f64 / trials as f64);
            Ok(())
        }
    }
}

fn parse_selection(spec: &str, depth: usize) -> Result<LayerSelection> {
    if spec == "all" {
        return Ok(LayerSelection::All);
    }
    if let Some(idx) = spec.strip_prefix("only:") {
        let idx: usize = idx.parse().context("bad --layers only:<index>")?;
        if idx >= depth {
            bail!("layer index {idx} out of range for {depth} layers");
        }
        return Ok(LayerSelection::Only(idx));
    }
    let k: usize = spec.parse().context("--layers must be 'all', a count, or 'only:<index>'")?;
    if k > depth {
        bail!("cannot encrypt {k} of {depth} layers");
    }
    Ok(LayerSelection::FirstK(k))
}

fn run_model(cmd: ModelCmd) -> Result<()> {
    match cmd {
        ModelCmd::Train {
            data,
            hidden,
            epochs,
            lr,
            seed,
            out,
        } => {
            let (train, eval) = data.load()?;
            let mut arch = vec![train.dims()];
            arch.extend(&hidden);
            arch.push(train.classes());
            let model = train_tiny(&train, &arch, &TrainConfig { epochs, lr, seed })?;
            let report = evaluate(&model, &eval)?;
            model.save(&out)?;
            print!("{}", report.to_kv_text());
            println!("model={}", out.display());
            Ok(())
        }
        ModelCmd::Encrypt {
            model,
            layers,
            cipher,
            out,
        } => {
            let plain = ModelWeights::load(&model)?;
            let selection = parse_selection(&layers, plain.layers.len())?;
            let em = encrypt_model(&plain, &cipher.key()?, &cipher.config(), selection, [0; 16])?;
            em.save(&out)?;
            println!(
                "encrypted {} of {} layers (np={} nd={} mode={}) -> {}",
                em.encrypted_layer_count(),
                em.layers.len(),
                cipher.np,
                cipher.nd,
                cipher.config().mode,
                out.display()
            );
            Ok(())
        }
        ModelCmd::Decrypt {
            model,
            key_seed,
            out,
        } => {
            let em = EncryptedModel::load(&model)?;
            let key = SecretKey::from_seed(key_seed, DEFAULT_RESPONSE_BITS)?;
            let plain = pufbind::model::decrypt_model(&em, &key)?;
            plain.save(&out)?;
            println!("decrypted {} layers -> {}", plain.layers.len(), out.display());
            Ok(())
        }
        ModelCmd::Eval {
            model,
            key_seed,
            data,
        } => {
            let (_, eval) = data.load()?;
            let bytes = std::fs::read(&model)?;
            let report = match bytes.first() {
                Some(b'P') if bytes.starts_with(b"PDWE") => {
                    let em = pufbind::model::encrypted_from_bytes(&bytes)?;
                    let key = key_seed
                        .map(|s| SecretKey::from_seed(s, DEFAULT_RESPONSE_BITS))
                        .transpose()?;
                    evaluate_encrypted(&em, key.as_ref(), &eval)?
                }
                _ => {
                    let plain = pufbind::model::model_from_bytes(&bytes)?;
                    evaluate(&plain, &eval)?
                }
            };
            print!("{}", report.to_kv_text());
            Ok(())
        }
        ModelCmd::Infer {
            model,
            input,
            key_seed,
        } => {
            let x: Vec<f32> = input
                .split(',')
                .map(|v| v.trim().parse::<f32>().context("bad --input value"))
                .collect::<Result<_>>()?;
            let bytes = std::fs::read(&model)?;
            let logits = if bytes.starts_with(b"PDWE") {
                let em = pufbind::model::encrypted_from_bytes(&bytes)?;
                let key = key_seed
                    .map(|s| SecretKey::from_seed(s, DEFAULT_RESPONSE_BITS))
                    .transpose()?;
                match key {
                    Some(k) => em.forward(Some(&k), &x)?,
                    None => bail!(pufbind::Error::parameter(
                        "encrypted model needs --key-seed for inference"
                    )),
                }
            } else {
                pufbind::model::model_from_bytes(&bytes)?.forward(&x)?
            };
            println!(
                "logits={}",
                logits
                    .iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(",")
            );
            println!("argmax={}", pufbind::model::argmax(&logits));
            Ok(())
        }
    }
}

fn run_attack(cmd: AttackCmd) -> Result<()> {
    let AttackCmd::Finetune {
        model,
        data,
        cipher,
        fractions,
        layers,
        epochs,
        lr,
        seed,
        out,
    } = cmd;
    let plain = ModelWeights::load(&model)?;
    let (train, eval) = data.load()?;
    let depth = layers.unwrap_or(plain.layers.len()).min(plain.layers.len());
    let key = cipher.key()?;
    let cfg = cipher.config();

    let mut csv = String::from("layers_encrypted,fraction,accuracy\n");
    for k in 1..=depth {
        let em = encrypt_model(&plain, &key, &cfg, LayerSelection::FirstK(k), [0; 16])?;
        for &fraction in &fractions {
            let report = finetune_attack(&em, fraction, &train, &eval, epochs, lr, seed)?;
            csv.push_str(&format!("{k},{fraction},{}\n", report.accuracy));
        }
    }
    match out {
        Some(path) => {
            std::fs::write(&path, &csv)?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_demo(args: DemoArgs) -> Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    let fe = FuzzyExtractor::default_384();
    let cfg = CipherConfig {
        n_p: args.np,
        n_d: args.nd,
        mode: args.mode.into(),
        t_pre: 1000,
        encrypt_biases: false,
    };

    // Enroll an honest device.
    let sigma = calibrate_sigma(args.ber.clamp(1e-6, 0.499))?;
    let honest_puf = PufDevice::from_seed(args.seed.wrapping_add(1), sigma, fe.frame_len())?;
    let mut device = DeviceAgent::new(honest_puf, fe.clone())?;
    let mut provider = Provider::new(fe.clone());
    register(&mut provider, &mut device, args.z, EnrollmentRead::Ideal, &mut rng)?;
    println!("demo: registered device {} with z={} challenges", device.id().to_hex(), args.z);
    if let Some(path) = &args.device {
        device.store().save(path)?;
        println!("demo: device store -> {}", path.display());
    }

    // Train the model the provider will sell.
    let ds = synth_blobs(4, 16, 80, args.seed.wrapping_add(2))?;
    let (train, eval) = ds.split_per_class(60)?;
    let model = train_tiny(
        &train,
        &[16, 24, 4],
        &TrainConfig {
            epochs: 12,
            lr: 0.01,
            seed: args.seed,
        },
    )?;
    let provider_acc = evaluate(&model, &eval)?.accuracy;
    println!("demo: provider model accuracy {provider_acc:.3}");

    // Serve one deployment session over loopback.
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let provider = Arc::new(Mutex::new(provider));
    let handle = serve_sessions(
        listener,
        Arc::clone(&provider),
        Arc::new(model.clone()),
        cfg,
        1,
        args.seed ^ 0x5e55,
    );

    let outcome = if args.impostor {
        // Foreign silicon, stolen helper store, claimed identity.
        let impostor_puf = PufDevice::from_seed(args.seed.wrapping_add(666), 0.0, fe.frame_len())?;
        let mut impostor = DeviceAgent::new(impostor_puf, fe.clone())?;
        for (c, h) in device.store().entries() {
            impostor.store_mut().add(c.clone(), h.clone());
        }
        let mut stream = TcpStream::connect(addr)?;
        let (mut session, mut m1) = impostor.request(&mut rng);
        m1.fields[0] = device.id().0.to_vec();
        write_frame(&mut stream, &m1)?;
        let m2 = read_frame(&mut stream)?;
        impostor
            .verify_and_reply(&mut session, &m2, &mut rng)
            .map(|_| unreachable!("impostor cannot pass the response check"))
    } else {
        let mut stream = TcpStream::connect(addr)?;
        pufbind::protocol::run_device_deployment(&mut stream, &device, &mut rng)
    };
    handle.join().ok();

    if let Some(path) = &args.db {
        provider.lock().unwrap().store().save(path)?;
        println!("demo: provider database -> {}", path.display());
    }

    match outcome {
        Ok(delivered) => {
            let device_acc = evaluate(&delivered, &eval)?.accuracy;
            println!("demo: model delivered; device-side accuracy {device_acc:.3}");
            let gap = (device_acc - provider_acc).abs();
            if gap > 1e-6 {
                bail!(pufbind::Error::Protocol(format!(
                    "delivered model diverges from provider model (gap {gap})"
                )));
            }
            println!("demo: PASS");
            Ok(())
        }
        Err(e) => {
            println!("demo: auth-failed ({e})");
            println!("demo: FAIL");
            Err(e.into())
        }
    }
}
