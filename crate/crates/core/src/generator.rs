//! The response generator: a dialog encoder feeding a decoder LSTM that
//! defines the policy over answer token sequences.
//!
//! The fused feature F conditions the decoder through tanh-projected initial
//! hidden and cell states. The first step never emits END, so answers are
//! always non-empty. Candidate scoring uses summed log-likelihood (a
//! length-normalized variant exists behind a config switch).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::coattention::EncoderContext;
use crate::encoders::{DialogEncoder, EncoderDims, RoundInputs};
use crate::error::{Error, Result};
use crate::lstm::{Linear, LstmParams};
use crate::ops;
use crate::optim::{clip_global_norm, Adam};
use crate::tape::Tape;
use crate::tensor::{zero_grads, Tensor};
use crate::text::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// A decoded answer: token ids, their log-probabilities under the policy,
/// and whether decoding stopped at END (in which case END is the last token).
#[derive(Debug, Clone)]
pub struct Response {
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub terminated: bool,
}

impl Response {
    /// Tokens without a trailing END marker.
    pub fn content(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&last) if self.terminated && !self.tokens.is_empty() => {
                let _ = last;
                &self.tokens[..self.tokens.len() - 1]
            }
            _ => &self.tokens,
        }
    }
}

pub struct Generator {
    pub dims: EncoderDims,
    pub start_id: usize,
    pub end_id: usize,
    pub encoder: DialogEncoder,
    pub dec_lstm: LstmParams,
    pub init_h: Linear,
    pub init_c: Linear,
    pub out: Linear,
}

impl Generator {
    pub fn new(dims: EncoderDims, rng: &mut ChaCha8Rng) -> Generator {
        Self::with_ids(dims, Vocabulary::START, Vocabulary::END, rng)
    }

    /// Constructor with explicit START/END ids; an END at or beyond the
    /// vocabulary size is unreachable, which the enumeration toys use to
    /// force fixed-length sequences.
    pub fn with_ids(
        dims: EncoderDims,
        start_id: usize,
        end_id: usize,
        rng: &mut ChaCha8Rng,
    ) -> Generator {
        assert!(start_id < dims.vocab, "start id must be embeddable");
        Generator {
            dims,
            start_id,
            end_id,
            encoder: DialogEncoder::new("gen.enc", dims, rng),
            dec_lstm: LstmParams::new("gen.dec_lstm", dims.d_emb, dims.d, rng),
            init_h: Linear::new("gen.init_h", dims.d, dims.d, rng),
            init_c: Linear::new("gen.init_c", dims.d, dims.d, rng),
            out: Linear::new("gen.out", dims.d, dims.vocab, rng),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut out = self.encoder.parameters();
        out.extend(self.dec_lstm.parameters());
        out.extend(self.init_h.parameters());
        out.extend(self.init_c.parameters());
        out.extend(self.out.parameters());
        out
    }

    pub fn encode(&self, inputs: &RoundInputs) -> Result<EncoderContext> {
        self.encoder.encode_context(inputs)
    }

    fn decoder_init(&self, ctx: &EncoderContext) -> Result<(Tensor, Tensor)> {
        let h = ops::tanh(&self.init_h.forward(&ctx.f)?)?;
        let c = ops::tanh(&self.init_c.forward(&ctx.f)?)?;
        Ok((h, c))
    }

    /// Output distribution for one decoder step. END is masked out of the
    /// first step so the policy never produces an empty answer.
    fn step_probs(&self, h: &Tensor, step: usize) -> Result<Tensor> {
        let logits = self.out.forward(h)?;
        let logits = if step == 0 && self.end_id < self.dims.vocab && self.dims.vocab > 1 {
            let keep: Vec<bool> = (0..self.dims.vocab).map(|i| i != self.end_id).collect();
            ops::masked_fill(&logits, &keep, -1e30)?
        } else {
            logits
        };
        ops::softmax_last(&logits)
    }

    /// Generate an answer by greedy argmax or by sampling from the policy.
    pub fn decode(
        &self,
        ctx: &EncoderContext,
        mode: DecodeMode,
        rng: &mut ChaCha8Rng,
        k_max: usize,
    ) -> Result<Response> {
        let (mut h, mut c) = self.decoder_init(ctx)?;
        let mut prev = self.start_id;
        let mut tokens = Vec::new();
        let mut log_probs = Vec::new();
        let mut terminated = false;
        for k in 0..k_max {
            let x = ops::lookup_row(&self.encoder.embedding, prev)?;
            let (h2, c2) = self.dec_lstm.step(&x, &h, &c)?;
            h = h2;
            c = c2;
            let probs = self.step_probs(&h, k)?;
            let pd = probs.to_vec();
            let tok = match mode {
                DecodeMode::Greedy => argmax(&pd),
                DecodeMode::Sample => sample_categorical(&pd, rng),
            };
            tokens.push(tok);
            log_probs.push(pd[tok].ln());
            prev = tok;
            if tok == self.end_id {
                terminated = true;
                break;
            }
        }
        Ok(Response {
            tokens,
            log_probs,
            terminated,
        })
    }

    /// Complete a partial sample: replay `prefix` teacher-forced, then sample
    /// to END or `k_max` total tokens. A prefix already ending in END is
    /// returned unchanged.
    pub fn continue_decode(
        &self,
        ctx: &EncoderContext,
        prefix: &[usize],
        rng: &mut ChaCha8Rng,
        k_max: usize,
    ) -> Result<Vec<usize>> {
        if prefix.last() == Some(&self.end_id) || prefix.len() >= k_max {
            return Ok(prefix.to_vec());
        }
        let (mut h, mut c) = self.decoder_init(ctx)?;
        let mut prev = self.start_id;
        for &t in prefix {
            let x = ops::lookup_row(&self.encoder.embedding, prev)?;
            let (h2, c2) = self.dec_lstm.step(&x, &h, &c)?;
            h = h2;
            c = c2;
            prev = t;
        }
        let mut tokens = prefix.to_vec();
        for k in prefix.len()..k_max {
            let x = ops::lookup_row(&self.encoder.embedding, prev)?;
            let (h2, c2) = self.dec_lstm.step(&x, &h, &c)?;
            h = h2;
            c = c2;
            let probs = self.step_probs(&h, k)?;
            let tok = sample_categorical(&probs.to_vec(), rng);
            tokens.push(tok);
            prev = tok;
            if tok == self.end_id {
                break;
            }
        }
        Ok(tokens)
    }

    /// Teacher-forced per-step distributions `[K, vocab]` for a target
    /// sequence (the step-k input is the previous target token).
    pub fn teacher_forced_probs(
        &self,
        ctx: &EncoderContext,
        targets: &[usize],
    ) -> Result<Tensor> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument {
                op: "teacher-forced",
                msg: "empty target sequence".into(),
            });
        }
        let (mut h, mut c) = self.decoder_init(ctx)?;
        let mut prev = self.start_id;
        let mut rows = Vec::with_capacity(targets.len());
        for (k, &t) in targets.iter().enumerate() {
            let x = ops::lookup_row(&self.encoder.embedding, prev)?;
            let (h2, c2) = self.dec_lstm.step(&x, &h, &c)?;
            h = h2;
            c = c2;
            rows.push(self.step_probs(&h, k)?);
            prev = t;
        }
        ops::stack_rows(&rows)
    }

    /// Targets for training/scoring: the answer plus END, when END exists.
    pub fn targets_for(&self, answer: &[usize]) -> Vec<usize> {
        let mut t = answer.to_vec();
        if self.end_id < self.dims.vocab {
            t.push(self.end_id);
        }
        t
    }

    /// Sum over answer tokens (END included) of log p(token | context, prefix).
    pub fn sequence_log_likelihood(&self, ctx: &EncoderContext, answer: &[usize]) -> Result<f64> {
        if answer.is_empty() {
            return Err(Error::InvalidArgument {
                op: "log-likelihood",
                msg: "empty answer".into(),
            });
        }
        let targets = self.targets_for(answer);
        let probs = self.teacher_forced_probs(ctx, &targets)?;
        let pd = probs.to_vec();
        let vocab = self.dims.vocab;
        let mut total = 0.0;
        for (k, &t) in targets.iter().enumerate() {
            total += pd[k * vocab + t].ln();
        }
        Ok(total)
    }

    /// Summed-NLL loss node for one example under the active tape. Returns
    /// the node and the number of target tokens.
    pub fn mle_loss_node(
        &self,
        inputs: &RoundInputs,
        answer: &[usize],
    ) -> Result<(Tensor, usize)> {
        if answer.is_empty() {
            return Err(Error::InvalidArgument {
                op: "mle",
                msg: "empty answer".into(),
            });
        }
        let ctx = self.encode(inputs)?;
        let targets = self.targets_for(answer);
        let probs = self.teacher_forced_probs(&ctx, &targets)?;
        let nll = ops::nll_weighted(&probs, &targets, &vec![1.0; targets.len()])?;
        Ok((nll, targets.len()))
    }

    /// One optimizer step on mean token-level cross-entropy with teacher
    /// forcing. Returns the pre-step loss.
    pub fn mle_update(
        &self,
        batch: &[(RoundInputs, Vec<usize>)],
        opt: &mut Adam,
        clip_norm: f64,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument {
                op: "mle",
                msg: "empty batch".into(),
            });
        }
        let params = self.parameters();
        zero_grads(&params);
        let tape = Tape::new();
        let loss = {
            let _guard = tape.activate();
            let mut total: Option<Tensor> = None;
            let mut tokens = 0usize;
            for (inputs, answer) in batch {
                let (nll, k) = self.mle_loss_node(inputs, answer)?;
                tokens += k;
                total = Some(match total {
                    Some(t) => ops::add(&t, &nll)?,
                    None => nll,
                });
            }
            ops::scalar_mul(&total.expect("non-empty batch"), 1.0 / tokens as f64)?
        };
        let value = loss.item();
        tape.backward(&loss)?;
        clip_global_norm(&params, clip_norm)?;
        opt.step(&params)?;
        zero_grads(&params);
        Ok(value)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}
