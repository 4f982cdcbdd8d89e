//! Command-line driver for the visual dialog GAN: dataset synthesis,
//! generator/discriminator pretraining, adversarial training, retrieval
//! evaluation, and transcript sampling with attention weights.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or config), 2 runtime
//! error (missing files, corrupt checkpoints, training failures).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vdgan_core::adversarial::{
    pretrain_discriminator, pretrain_generator, train_adversarial, write_jsonl, GanOptimizers,
};
use vdgan_core::checkpoint;
use vdgan_core::critic::Critic;
use vdgan_core::data::{
    corpus_tokens, encode_records, load_raw_dataset, save_dataset, Dataset, FeatureMap,
    JsonDataset,
};
use vdgan_core::discriminator::Discriminator;
use vdgan_core::encoders::make_round_inputs;
use vdgan_core::eval::{compute_metrics, evaluate_split, write_report_csv};
use vdgan_core::generator::{DecodeMode, Generator};
use vdgan_core::mix_seed;
use vdgan_core::optim::Adam;
use vdgan_core::scene::synthesize_raw;
use vdgan_core::{Error, Result, RunConfig, Vocabulary};

#[derive(Parser)]
#[command(
    name = "vdgan",
    version,
    about = "Adversarially trained visual dialog generation at desk scale"
)]
struct Cli {
    /// Config file with key = value lines (defaults apply when omitted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set d=32 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic dialog datasets (train + validation) with features
    SynthData {
        #[arg(long)]
        out_dir: PathBuf,
        /// Training records (default: config synth_count)
        #[arg(long)]
        count: Option<usize>,
        /// Validation records (default: config synth_val_count)
        #[arg(long)]
        val_count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// MLE-pretrain the generator on a training split
    PretrainGen {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Pretrain the discriminator against a frozen generator checkpoint
    PretrainDis {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Adversarial REINFORCE training from pretrained checkpoints
    TrainGan {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        dis: PathBuf,
        #[arg(long)]
        out_gen: PathBuf,
        #[arg(long)]
        out_dis: PathBuf,
        #[arg(long)]
        out_critic: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Retrieval evaluation: rank 100 candidates per round, write a CSV report
    Eval {
        /// Split to evaluate
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Training split used to rebuild the vocabulary
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "coatt-gan")]
        model_name: String,
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Print a dialog transcript with generated answers and attention weights
    Sample {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        gen: PathBuf,
        /// Record index (default 0)
        #[arg(long, default_value_t = 0)]
        record: usize,
        /// Single round to sample; all ten when omitted
        #[arg(long)]
        round: Option<usize>,
        #[arg(long, value_enum, default_value_t = SampleMode::Greedy)]
        mode: SampleMode,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleMode {
    Greedy,
    Sample,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VDGAN_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}

fn load_config(config: &Option<PathBuf>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn require_path(flag: Option<PathBuf>, from_config: &str, what: &str) -> Result<PathBuf> {
    match flag {
        Some(p) => Ok(p),
        None if !from_config.is_empty() => Ok(PathBuf::from(from_config)),
        None => Err(Error::BadConfigValue {
            key: what.to_string(),
            msg: "no path given (flag or config key)".into(),
        }),
    }
}

/// Load a split, building the vocabulary from `vocab_source` (the training
/// split) and encoding records with it.
fn load_split(
    cfg: &RunConfig,
    data: &Path,
    features: &Path,
    vocab_source: &Path,
) -> Result<(Dataset, Vocabulary)> {
    let limits = cfg.truncation();
    let vocab_raw = load_raw_dataset(vocab_source, limits)?;
    let vocab = Vocabulary::build(corpus_tokens(&vocab_raw), cfg.min_count)?;
    let raw = if vocab_source == data {
        vocab_raw
    } else {
        load_raw_dataset(data, limits)?
    };
    let records = encode_records(&raw, &vocab);
    let feature_map = FeatureMap::load(features)?;
    let dataset = Dataset::new(records, feature_map)?;
    info!(
        "loaded {} records ({} rounds), vocabulary of {} tokens",
        dataset.records.len(),
        dataset.num_rounds(),
        vocab.len()
    );
    Ok((dataset, vocab))
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config, &cli.overrides)?;
    match cli.command {
        Command::SynthData {
            out_dir,
            count,
            val_count,
            seed,
        } => synth_data(&cfg, &out_dir, count, val_count, seed),
        Command::PretrainGen {
            train,
            features,
            out,
            log,
            epochs,
        } => pretrain_gen_cmd(&cfg, train, features, &out, log, epochs),
        Command::PretrainDis {
            train,
            features,
            gen,
            out,
            log,
            epochs,
        } => pretrain_dis_cmd(&cfg, train, features, &gen, &out, log, epochs),
        Command::TrainGan {
            train,
            features,
            gen,
            dis,
            out_gen,
            out_dis,
            out_critic,
            log,
            iters,
        } => train_gan_cmd(
            &cfg, train, features, &gen, &dis, &out_gen, &out_dis, out_critic, log, iters,
        ),
        Command::Eval {
            data,
            features,
            train_data,
            gen,
            out,
            model_name,
            split,
        } => eval_cmd(&cfg, data, features, train_data, &gen, &out, &model_name, &split),
        Command::Sample {
            data,
            features,
            train_data,
            gen,
            record,
            round,
            mode,
            seed,
        } => sample_cmd(&cfg, data, features, train_data, &gen, record, round, mode, seed),
    }
}

fn synth_data(
    cfg: &RunConfig,
    out_dir: &Path,
    count: Option<usize>,
    val_count: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let count = count.unwrap_or(cfg.synth_count);
    let val_count = val_count.unwrap_or(cfg.synth_val_count);
    let seed = seed.unwrap_or(cfg.seed);
    let scene_cfg = cfg.scene_config();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;

    for (name, n, salt, prefix) in [
        ("train", count, 0u64, "train-"),
        ("val", val_count, 0x7A1, "val-"),
    ] {
        let (records, features, _) =
            synthesize_raw(n, mix_seed(seed, salt), &scene_cfg, prefix)?;
        let json_path = out_dir.join(format!("{name}.json"));
        save_dataset(&json_path, &JsonDataset { records })?;
        announce(&json_path);
        let feat_path = out_dir.join(format!("{name}.features"));
        features.save(&feat_path)?;
        announce(&feat_path);
    }
    Ok(())
}

fn pretrain_gen_cmd(
    cfg: &RunConfig,
    train: Option<PathBuf>,
    features: Option<PathBuf>,
    out: &Path,
    log: Option<PathBuf>,
    epochs: Option<usize>,
) -> Result<()> {
    let train = require_path(train, &cfg.train_data, "train_data")?;
    let features = require_path(features, &cfg.train_features, "train_features")?;
    let (data, vocab) = load_split(cfg, &train, &features, &train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let gen = Generator::new(cfg.encoder_dims(vocab.len()), &mut rng);
    let mut opt = Adam::new(cfg.lr_start);
    let epochs = epochs.unwrap_or(cfg.pretrain_gen_epochs);
    info!("pretraining generator: {epochs} epochs");
    let records = pretrain_generator(&gen, &data, cfg, epochs, &mut opt)?;
    for r in &records {
        info!(
            "epoch {}: mle_loss {:.4}",
            r.epoch,
            r.mle_loss.unwrap_or(f64::NAN)
        );
    }
    checkpoint::save(out, &gen.parameters())?;
    announce(out);
    if let Some(log_path) = log {
        write_jsonl(&log_path, &records)?;
        announce(&log_path);
    }
    Ok(())
}

fn pretrain_dis_cmd(
    cfg: &RunConfig,
    train: Option<PathBuf>,
    features: Option<PathBuf>,
    gen_ckpt: &Path,
    out: &Path,
    log: Option<PathBuf>,
    epochs: Option<usize>,
) -> Result<()> {
    let train = require_path(train, &cfg.train_data, "train_data")?;
    let features = require_path(features, &cfg.train_features, "train_features")?;
    let (data, vocab) = load_split(cfg, &train, &features, &train)?;
    let dims = cfg.encoder_dims(vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let gen = Generator::new(dims, &mut rng);
    checkpoint::load_into(gen_ckpt, &gen.parameters())?;
    let mut dis_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));
    let dis = Discriminator::new(dims, &mut dis_rng);
    let mut opt = Adam::new(cfg.lr_start);
    let epochs = epochs.unwrap_or(cfg.pretrain_dis_epochs);
    info!("pretraining discriminator: {epochs} epochs");
    let records = pretrain_discriminator(&gen, &dis, &data, cfg, epochs, &mut opt)?;
    for r in &records {
        info!(
            "epoch {}: dis_loss {:.4} accuracy {:.3}",
            r.epoch,
            r.dis_loss.unwrap_or(f64::NAN),
            r.dis_accuracy.unwrap_or(f64::NAN)
        );
    }
    checkpoint::save(out, &dis.parameters())?;
    announce(out);
    if let Some(log_path) = log {
        write_jsonl(&log_path, &records)?;
        announce(&log_path);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_gan_cmd(
    cfg: &RunConfig,
    train: Option<PathBuf>,
    features: Option<PathBuf>,
    gen_ckpt: &Path,
    dis_ckpt: &Path,
    out_gen: &Path,
    out_dis: &Path,
    out_critic: Option<PathBuf>,
    log: Option<PathBuf>,
    iters: Option<usize>,
) -> Result<()> {
    let train = require_path(train, &cfg.train_data, "train_data")?;
    let features = require_path(features, &cfg.train_features, "train_features")?;
    let (data, vocab) = load_split(cfg, &train, &features, &train)?;
    let dims = cfg.encoder_dims(vocab.len());
    let mut gen_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let gen = Generator::new(dims, &mut gen_rng);
    checkpoint::load_into(gen_ckpt, &gen.parameters())?;
    let mut dis_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));
    let dis = Discriminator::new(dims, &mut dis_rng);
    checkpoint::load_into(dis_ckpt, &dis.parameters())?;
    let mut critic_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3));
    let critic = Critic::new(dims, &mut critic_rng);

    let iters = iters.unwrap_or(cfg.gan_iters);
    let mut opts = GanOptimizers::from_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 4));
    info!("adversarial training: {iters} iterations");
    let records = train_adversarial(&gen, &dis, &critic, &data, cfg, iters, &mut opts, &mut rng)?;
    if let Some(last) = records.last() {
        info!(
            "final iteration: gen_obj {:.4} mean_reward {:.3}",
            last.gen_obj, last.mean_reward
        );
    }
    checkpoint::save(out_gen, &gen.parameters())?;
    announce(out_gen);
    checkpoint::save(out_dis, &dis.parameters())?;
    announce(out_dis);
    if let Some(critic_path) = out_critic {
        checkpoint::save(&critic_path, &critic.parameters())?;
        announce(&critic_path);
    }
    if let Some(log_path) = log {
        write_jsonl(&log_path, &records)?;
        announce(&log_path);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    cfg: &RunConfig,
    data: Option<PathBuf>,
    features: Option<PathBuf>,
    train_data: Option<PathBuf>,
    gen_ckpt: &Path,
    out: &Path,
    model_name: &str,
    split: &str,
) -> Result<()> {
    let data = require_path(data, &cfg.val_data, "val_data")?;
    let features = require_path(features, &cfg.val_features, "val_features")?;
    let train_data = require_path(train_data, &cfg.train_data, "train_data")?;
    let (dataset, vocab) = load_split(cfg, &data, &features, &train_data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let gen = Generator::new(cfg.encoder_dims(vocab.len()), &mut rng);
    checkpoint::load_into(gen_ckpt, &gen.parameters())?;
    let outcomes = evaluate_split(&gen, &dataset, cfg.worker_threads(), cfg.length_normalized)?;
    let report = compute_metrics(&outcomes)?;
    println!(
        "{model_name} on {split}: MRR {:.4}  R@1 {:.4}  R@5 {:.4}  R@10 {:.4}  Mean {:.2}  ({} rounds)",
        report.mrr, report.r_at_1, report.r_at_5, report.r_at_10, report.mean_rank, report.rounds
    );
    write_report_csv(out, model_name, split, &report)?;
    announce(out);
    Ok(())
}

fn format_weights(weights: &[f64]) -> String {
    let parts: Vec<String> = weights.iter().map(|w| format!("{w:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

#[allow(clippy::too_many_arguments)]
fn sample_cmd(
    cfg: &RunConfig,
    data: Option<PathBuf>,
    features: Option<PathBuf>,
    train_data: Option<PathBuf>,
    gen_ckpt: &Path,
    record: usize,
    round: Option<usize>,
    mode: SampleMode,
    seed: Option<u64>,
) -> Result<()> {
    let data = require_path(data, &cfg.val_data, "val_data")?;
    let features = require_path(features, &cfg.val_features, "val_features")?;
    let train_data = require_path(train_data, &cfg.train_data, "train_data")?;
    let (dataset, vocab) = load_split(cfg, &data, &features, &train_data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let gen = Generator::new(cfg.encoder_dims(vocab.len()), &mut rng);
    checkpoint::load_into(gen_ckpt, &gen.parameters())?;

    let rec = dataset
        .records
        .get(record)
        .ok_or_else(|| Error::InvalidArgument {
            op: "sample",
            msg: format!("record {record} out of range"),
        })?;
    let rounds: Vec<usize> = match round {
        Some(t) => vec![t],
        None => (0..rec.rounds.len()).collect(),
    };
    let decode_mode = match mode {
        SampleMode::Greedy => DecodeMode::Greedy,
        SampleMode::Sample => DecodeMode::Sample,
    };
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(mix_seed(cfg.seed, 5)));

    println!("image {}", rec.image_id);
    println!("caption: {}", vocab.decode_words(&rec.caption).join(" "));
    for t in rounds {
        let inputs = make_round_inputs(rec, &dataset.features, t)?;
        let ctx = gen.encode(&inputs)?;
        let response = gen.decode(&ctx, decode_mode, &mut sample_rng, cfg.k_max)?;
        let dialog_round = &rec.rounds[t];
        println!("round {t}");
        println!(
            "  question:  {}",
            vocab.decode_words(&dialog_round.question).join(" ")
        );
        println!(
            "  human:     {}",
            vocab.decode_words(&dialog_round.answer).join(" ")
        );
        println!(
            "  generated: {}",
            vocab.decode_words(response.content()).join(" ")
        );
        let names = ["image-pass-1", "history", "question", "image-pass-2"];
        for (name, alpha) in names.iter().zip(&ctx.alphas) {
            println!("  attention {name:13} {}", format_weights(&alpha.to_vec()));
        }
    }
    Ok(())
}
