//! Run configuration: a flat key=value file with typed defaults, unknown
//! keys rejected. CLI flags override file values; file values override
//! defaults.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::TruncationLimits;
use crate::encoders::EncoderDims;
use crate::error::{Error, Result};
use crate::scene::SceneConfig;

/// How rewards enter the policy gradient: one sequence-level reward for
/// every token, or Monte Carlo intermediate rewards per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    Global,
    Intermediate,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    // dimensions (0 for h / h_lstm means "same as d")
    pub d: usize,
    pub h: usize,
    pub d_img: usize,
    pub d_emb: usize,
    pub h_lstm: usize,

    // text
    pub min_count: usize,
    pub k_max: usize,
    pub max_caption: usize,
    pub max_question: usize,
    pub max_answer: usize,

    // training
    pub mc_rollouts: usize,
    pub mode: RewardMode,
    pub teacher_forcing: bool,
    pub dis_update_period: usize,
    pub dis_batch: usize,
    pub mle_batch: usize,
    pub clip_norm: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub gan_lr: f64,
    pub critic_lr: f64,
    pub pretrain_gen_epochs: usize,
    pub pretrain_dis_epochs: usize,
    pub gan_iters: usize,
    /// Examples drawn per pretraining epoch; 0 means the full split.
    pub epoch_examples: usize,
    pub seed: u64,
    /// Worker threads; 0 resolves to the machine's available parallelism.
    pub threads: usize,
    /// Rank candidates by length-normalized log-likelihood instead of sums.
    pub length_normalized: bool,

    // synthetic task
    pub scene_grid: usize,
    pub scene_min_objects: usize,
    pub scene_max_objects: usize,
    pub scene_noise: f64,
    pub synth_count: usize,
    pub synth_val_count: usize,

    // paths (normally supplied as CLI flags)
    pub train_data: String,
    pub train_features: String,
    pub val_data: String,
    pub val_features: String,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 64,
            h: 0,
            d_img: 32,
            d_emb: 64,
            h_lstm: 0,
            min_count: 5,
            k_max: 20,
            max_caption: 40,
            max_question: 20,
            max_answer: 20,
            mc_rollouts: 5,
            mode: RewardMode::Intermediate,
            teacher_forcing: true,
            dis_update_period: 20,
            dis_batch: 8,
            mle_batch: 8,
            clip_norm: 5.0,
            lr_start: 1e-3,
            lr_end: 1e-5,
            gan_lr: 1e-4,
            critic_lr: 1e-3,
            pretrain_gen_epochs: 30,
            pretrain_dis_epochs: 30,
            gan_iters: 400,
            epoch_examples: 0,
            seed: 42,
            threads: 0,
            length_normalized: false,
            scene_grid: 4,
            scene_min_objects: 4,
            scene_max_objects: 7,
            scene_noise: 0.05,
            synth_count: 2000,
            synth_val_count: 200,
            train_data: String::new(),
            train_features: String::new(),
            val_data: String::new(),
            val_features: String::new(),
            out_dir: String::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::BadConfigValue {
        key: key.to_string(),
        msg: format!("cannot parse {value:?}"),
    })
}

impl RunConfig {
    /// Set one key from its text value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse(key, value)?,
            "h" => self.h = parse(key, value)?,
            "d_img" => self.d_img = parse(key, value)?,
            "d_emb" => self.d_emb = parse(key, value)?,
            "h_lstm" => self.h_lstm = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "k_max" => self.k_max = parse(key, value)?,
            "max_caption" => self.max_caption = parse(key, value)?,
            "max_question" => self.max_question = parse(key, value)?,
            "max_answer" => self.max_answer = parse(key, value)?,
            "mc_rollouts" => self.mc_rollouts = parse(key, value)?,
            "mode" => {
                self.mode = match value.trim() {
                    "global" => RewardMode::Global,
                    "intermediate" => RewardMode::Intermediate,
                    other => {
                        return Err(Error::BadConfigValue {
                            key: key.to_string(),
                            msg: format!("{other:?} is not global|intermediate"),
                        })
                    }
                }
            }
            "teacher_forcing" => self.teacher_forcing = parse(key, value)?,
            "dis_update_period" => self.dis_update_period = parse(key, value)?,
            "dis_batch" => self.dis_batch = parse(key, value)?,
            "mle_batch" => self.mle_batch = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "lr_start" => self.lr_start = parse(key, value)?,
            "lr_end" => self.lr_end = parse(key, value)?,
            "gan_lr" => self.gan_lr = parse(key, value)?,
            "critic_lr" => self.critic_lr = parse(key, value)?,
            "pretrain_gen_epochs" => self.pretrain_gen_epochs = parse(key, value)?,
            "pretrain_dis_epochs" => self.pretrain_dis_epochs = parse(key, value)?,
            "gan_iters" => self.gan_iters = parse(key, value)?,
            "epoch_examples" => self.epoch_examples = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "length_normalized" => self.length_normalized = parse(key, value)?,
            "scene_grid" => self.scene_grid = parse(key, value)?,
            "scene_min_objects" => self.scene_min_objects = parse(key, value)?,
            "scene_max_objects" => self.scene_max_objects = parse(key, value)?,
            "scene_noise" => self.scene_noise = parse(key, value)?,
            "synth_count" => self.synth_count = parse(key, value)?,
            "synth_val_count" => self.synth_val_count = parse(key, value)?,
            "train_data" => self.train_data = value.trim().to_string(),
            "train_features" => self.train_features = value.trim().to_string(),
            "val_data" => self.val_data = value.trim().to_string(),
            "val_features" => self.val_features = value.trim().to_string(),
            "out_dir" => self.out_dir = value.trim().to_string(),
            _ => return Err(Error::UnknownConfigKey(key.to_string())),
        }
        Ok(())
    }

    /// Parse a config file: `key = value` lines, `#` comments, blank lines.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::BadConfigValue {
                    key: line.to_string(),
                    msg: "expected key = value".into(),
                });
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Apply `key=value` override strings (CLI `--set` flags).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let Some((key, value)) = item.split_once('=') else {
                return Err(Error::BadConfigValue {
                    key: item.clone(),
                    msg: "expected key=value".into(),
                });
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Attention hidden size (defaults to d).
    pub fn attention_h(&self) -> usize {
        if self.h == 0 {
            self.d
        } else {
            self.h
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Error::BadConfigValue {
            key: key.to_string(),
            msg: msg.to_string(),
        };
        if self.d == 0 || self.d_emb == 0 || self.d_img == 0 {
            return Err(bad("d", "dimensions must be positive"));
        }
        if self.h_lstm != 0 && self.h_lstm != self.d {
            // The three feature sequences must share the guidance dimension.
            return Err(bad("h_lstm", "must equal d (or 0 to inherit it)"));
        }
        if self.mc_rollouts == 0 {
            return Err(bad("mc_rollouts", "must be at least 1"));
        }
        if self.k_max == 0 {
            return Err(bad("k_max", "must be at least 1"));
        }
        if self.dis_update_period == 0 {
            return Err(bad("dis_update_period", "must be at least 1"));
        }
        if self.mle_batch == 0 || self.dis_batch == 0 {
            return Err(bad("mle_batch", "batch sizes must be at least 1"));
        }
        if self.lr_start <= 0.0 || self.lr_end <= 0.0 {
            return Err(bad("lr_start", "learning rates must be positive"));
        }
        if self.scene_min_objects < 2 || self.scene_min_objects > self.scene_max_objects {
            return Err(bad("scene_min_objects", "need 2 <= min <= max"));
        }
        Ok(())
    }

    pub fn encoder_dims(&self, vocab: usize) -> EncoderDims {
        EncoderDims {
            d: self.d,
            h: self.attention_h(),
            d_img: self.d_img,
            d_emb: self.d_emb,
            vocab,
        }
    }

    pub fn truncation(&self) -> TruncationLimits {
        TruncationLimits {
            caption: self.max_caption,
            question: self.max_question,
            answer: self.max_answer,
        }
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            grid: self.scene_grid,
            d_img: self.d_img,
            min_objects: self.scene_min_objects,
            max_objects: self.scene_max_objects,
            noise: self.scene_noise,
        }
    }

    pub fn worker_threads(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        }
    }

    /// Geometric decay from lr_start to lr_end across pretraining epochs.
    pub fn pretrain_lr(&self, epoch: usize, total_epochs: usize) -> f64 {
        if total_epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (total_epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }

    /// Canonical key=value rendering of all settings.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            RewardMode::Global => "global",
            RewardMode::Intermediate => "intermediate",
        };
        let _ = write!(
            s,
            "d = {}\nh = {}\nd_img = {}\nd_emb = {}\nh_lstm = {}\n\
             min_count = {}\nk_max = {}\nmax_caption = {}\nmax_question = {}\nmax_answer = {}\n\
             mc_rollouts = {}\nmode = {}\nteacher_forcing = {}\ndis_update_period = {}\n\
             dis_batch = {}\nmle_batch = {}\nclip_norm = {}\nlr_start = {}\nlr_end = {}\n\
             gan_lr = {}\ncritic_lr = {}\npretrain_gen_epochs = {}\npretrain_dis_epochs = {}\n\
             gan_iters = {}\nepoch_examples = {}\nseed = {}\nthreads = {}\nlength_normalized = {}\n\
             scene_grid = {}\nscene_min_objects = {}\nscene_max_objects = {}\nscene_noise = {}\n\
             synth_count = {}\nsynth_val_count = {}\n",
            self.d,
            self.h,
            self.d_img,
            self.d_emb,
            self.h_lstm,
            self.min_count,
            self.k_max,
            self.max_caption,
            self.max_question,
            self.max_answer,
            self.mc_rollouts,
            mode,
            self.teacher_forcing,
            self.dis_update_period,
            self.dis_batch,
            self.mle_batch,
            self.clip_norm,
            self.lr_start,
            self.lr_end,
            self.gan_lr,
            self.critic_lr,
            self.pretrain_gen_epochs,
            self.pretrain_dis_epochs,
            self.gan_iters,
            self.epoch_examples,
            self.seed,
            self.threads,
            self.length_normalized,
            self.scene_grid,
            self.scene_min_objects,
            self.scene_max_objects,
            self.scene_noise,
            self.synth_count,
            self.synth_val_count,
        );
        s
    }
}
