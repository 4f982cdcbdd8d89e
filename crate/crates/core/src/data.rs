//! Dialog dataset loading, validation, and region-feature files.
//!
//! Dataset JSON schema:
//! `{"records": [{"image_id", "caption", "dialog": [{"question", "answer",
//! "answer_options": [str x100], "gt_index"} x10]}]}`
//!
//! Feature file layout: magic `"CGFV"`, version (u32), image count (u64),
//! then per image: id length (u16), id bytes, N (u32), d (u32), N*d
//! little-endian f32 values.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{self, write_atomic};
use crate::error::{Error, Result};
use crate::text::{preprocess_text, Vocabulary};

pub const ROUNDS_PER_DIALOG: usize = 10;
pub const CANDIDATES_PER_ROUND: usize = 100;

/// Maximum token counts for captions, questions, and answers.
#[derive(Debug, Clone, Copy)]
pub struct TruncationLimits {
    pub caption: usize,
    pub question: usize,
    pub answer: usize,
}

impl Default for TruncationLimits {
    fn default() -> Self {
        TruncationLimits {
            caption: 40,
            question: 20,
            answer: 20,
        }
    }
}

// ---------------------------------------------------------------------------
// On-disk JSON schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonDataset {
    pub records: Vec<JsonRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonRecord {
    pub image_id: String,
    pub caption: String,
    pub dialog: Vec<JsonRound>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonRound {
    pub question: String,
    pub answer: String,
    pub answer_options: Vec<String>,
    pub gt_index: usize,
}

// ---------------------------------------------------------------------------
// Tokenized records
// ---------------------------------------------------------------------------

/// One dialog round as preprocessed token text.
#[derive(Debug, Clone)]
pub struct RawRound {
    pub question: Vec<String>,
    pub answer: Vec<String>,
    pub candidates: Vec<Vec<String>>,
    pub gt_index: usize,
}

/// One record as preprocessed token text (pre-vocabulary).
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub image_id: String,
    pub caption: Vec<String>,
    pub rounds: Vec<RawRound>,
}

/// A full dialog as raw token text; alias used at API boundaries.
pub type RawDialog = RawRecord;

/// One dialog round as vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogRound {
    pub question: Vec<usize>,
    pub answer: Vec<usize>,
    pub candidates: Vec<Vec<usize>>,
    pub gt_index: usize,
}

/// One image's dialog: caption plus exactly ten QA rounds with candidate lists.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogRecord {
    pub image_id: String,
    pub caption: Vec<usize>,
    pub rounds: Vec<DialogRound>,
}

fn truncated(mut tokens: Vec<String>, limit: usize) -> Vec<String> {
    tokens.truncate(limit);
    tokens
}

/// Preprocess and validate one JSON record against all record invariants.
pub fn tokenize_record(
    index: usize,
    rec: &JsonRecord,
    limits: TruncationLimits,
) -> Result<RawRecord> {
    let bad = |msg: String| Error::BadRecord { index, msg };
    if rec.dialog.len() != ROUNDS_PER_DIALOG {
        return Err(bad(format!(
            "expected {ROUNDS_PER_DIALOG} rounds, found {}",
            rec.dialog.len()
        )));
    }
    let caption = truncated(preprocess_text(&rec.caption), limits.caption);
    if caption.is_empty() {
        return Err(bad("empty caption".into()));
    }
    let mut rounds = Vec::with_capacity(ROUNDS_PER_DIALOG);
    for (r, round) in rec.dialog.iter().enumerate() {
        if round.answer_options.len() != CANDIDATES_PER_ROUND {
            return Err(bad(format!(
                "round {r}: expected {CANDIDATES_PER_ROUND} candidates, found {}",
                round.answer_options.len()
            )));
        }
        if round.gt_index >= CANDIDATES_PER_ROUND {
            return Err(bad(format!(
                "round {r}: gt_index {} out of range",
                round.gt_index
            )));
        }
        let question = truncated(preprocess_text(&round.question), limits.question);
        let answer = truncated(preprocess_text(&round.answer), limits.answer);
        if question.is_empty() {
            return Err(bad(format!("round {r}: empty question")));
        }
        if answer.is_empty() {
            return Err(bad(format!("round {r}: empty answer")));
        }
        let mut candidates = Vec::with_capacity(CANDIDATES_PER_ROUND);
        for (c, opt) in round.answer_options.iter().enumerate() {
            let tokens = truncated(preprocess_text(opt), limits.answer);
            if tokens.is_empty() {
                return Err(bad(format!("round {r}: candidate {c} is empty")));
            }
            candidates.push(tokens);
        }
        if candidates[round.gt_index] != answer {
            return Err(bad(format!(
                "round {r}: candidate at gt_index does not match the human answer"
            )));
        }
        rounds.push(RawRound {
            question,
            answer,
            candidates,
            gt_index: round.gt_index,
        });
    }
    Ok(RawRecord {
        image_id: rec.image_id.clone(),
        caption,
        rounds,
    })
}

/// Parse a dataset JSON file into preprocessed token records.
pub fn load_raw_dataset(path: &Path, limits: TruncationLimits) -> Result<Vec<RawRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let json: JsonDataset = serde_json::from_reader(BufReader::new(file))?;
    json.records
        .iter()
        .enumerate()
        .map(|(i, r)| tokenize_record(i, r, limits))
        .collect()
}

pub fn save_dataset(path: &Path, dataset: &JsonDataset) -> Result<()> {
    let bytes = serde_json::to_vec(dataset)?;
    write_atomic(path, &bytes)
}

/// Map token records to vocabulary ids (out-of-vocabulary tokens become UNK).
pub fn encode_records(raw: &[RawRecord], vocab: &Vocabulary) -> Vec<DialogRecord> {
    raw.iter()
        .map(|rec| DialogRecord {
            image_id: rec.image_id.clone(),
            caption: vocab.encode(&rec.caption),
            rounds: rec
                .rounds
                .iter()
                .map(|r| DialogRound {
                    question: vocab.encode(&r.question),
                    answer: vocab.encode(&r.answer),
                    candidates: r.candidates.iter().map(|c| vocab.encode(c)).collect(),
                    gt_index: r.gt_index,
                })
                .collect(),
        })
        .collect()
}

/// Iterator over every utterance of a raw corpus, for vocabulary building.
pub fn corpus_tokens(records: &[RawRecord]) -> impl Iterator<Item = impl Iterator<Item = &String>> {
    records.iter().flat_map(|rec| {
        std::iter::once(rec.caption.iter()).chain(rec.rounds.iter().flat_map(|r| {
            std::iter::once(r.question.iter()).chain(std::iter::once(r.answer.iter()))
        }))
    })
}

// ---------------------------------------------------------------------------
// Region features
// ---------------------------------------------------------------------------

pub const FEATURE_MAGIC: &[u8; 4] = b"CGFV";
pub const FEATURE_VERSION: u32 = 1;

/// Spatial region features for one image: `n` regions of dimension `d`.
#[derive(Debug, Clone)]
pub struct RegionFeatures {
    pub n: usize,
    pub d: usize,
    /// Row-major `n * d` values (f32-quantized, stored as f64).
    pub data: Vec<f64>,
}

/// Image-id keyed feature lookup preserving insertion order.
#[derive(Debug, Clone, Default)]
pub struct FeatureMap {
    order: Vec<String>,
    map: HashMap<String, RegionFeatures>,
}

impl FeatureMap {
    pub fn new() -> FeatureMap {
        FeatureMap::default()
    }

    pub fn insert(&mut self, id: String, features: RegionFeatures) {
        if !self.map.contains_key(&id) {
            self.order.push(id.clone());
        }
        self.map.insert(id, features);
    }

    pub fn get(&self, id: &str) -> Option<&RegionFeatures> {
        self.map.get(id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RegionFeatures)> {
        self.order.iter().map(move |id| (id, &self.map[id]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(FEATURE_MAGIC);
        binio::write_u32(&mut buf, FEATURE_VERSION).expect("vec write");
        binio::write_u64(&mut buf, self.order.len() as u64).expect("vec write");
        for (id, feat) in self.iter() {
            binio::write_u16(&mut buf, id.len() as u16).expect("vec write");
            buf.extend_from_slice(id.as_bytes());
            binio::write_u32(&mut buf, feat.n as u32).expect("vec write");
            binio::write_u32(&mut buf, feat.d as u32).expect("vec write");
            for &v in &feat.data {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<FeatureMap> {
        let corrupt = |msg: &str| Error::CorruptFile {
            path: path.display().to_string(),
            msg: msg.to_string(),
        };
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        binio::read_exact(&mut r, &mut magic).map_err(|_| corrupt("missing magic"))?;
        if &magic != FEATURE_MAGIC {
            return Err(corrupt("bad magic, not a feature file"));
        }
        let version = binio::read_u32(&mut r).map_err(|_| corrupt("missing version"))?;
        if version != FEATURE_VERSION {
            return Err(corrupt("unsupported version"));
        }
        let count = binio::read_u64(&mut r).map_err(|_| corrupt("missing count"))?;
        let mut out = FeatureMap::new();
        for _ in 0..count {
            let id_len = binio::read_u16(&mut r).map_err(|_| corrupt("truncated id"))? as usize;
            let mut id_bytes = vec![0u8; id_len];
            binio::read_exact(&mut r, &mut id_bytes).map_err(|_| corrupt("truncated id"))?;
            let id = String::from_utf8(id_bytes).map_err(|_| corrupt("id is not UTF-8"))?;
            let n = binio::read_u32(&mut r).map_err(|_| corrupt("truncated header"))? as usize;
            let d = binio::read_u32(&mut r).map_err(|_| corrupt("truncated header"))? as usize;
            let mut payload = vec![0u8; n * d * 4];
            r.read_exact(&mut payload)
                .map_err(|_| corrupt("truncated payload"))?;
            let data: Vec<f64> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect();
            if !data.iter().all(|v| v.is_finite()) {
                return Err(corrupt("non-finite feature values"));
            }
            out.insert(id, RegionFeatures { n, d, data });
        }
        Ok(out)
    }
}

/// Records plus their image features, validated for coverage.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<DialogRecord>,
    pub features: FeatureMap,
}

impl Dataset {
    pub fn new(records: Vec<DialogRecord>, features: FeatureMap) -> Result<Dataset> {
        for (i, rec) in records.iter().enumerate() {
            if features.get(&rec.image_id).is_none() {
                return Err(Error::BadRecord {
                    index: i,
                    msg: format!("no features for image {}", rec.image_id),
                });
            }
        }
        Ok(Dataset { records, features })
    }

    pub fn num_rounds(&self) -> usize {
        self.records.len() * ROUNDS_PER_DIALOG
    }
}
