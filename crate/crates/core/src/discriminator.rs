//! Binary classifier over {v~, u~, Q, A}: given the generator's attention
//! memories for a round, how likely is the answer human-written?
//!
//! The question and answer are joined with the reserved END id as separator
//! and encoded by the discriminator's own pair LSTM (its embedding table is
//! separate from the generator's, so rewards cannot be gamed through shared
//! embeddings). Attention memories enter as constants: discriminator
//! training never propagates into the generator.

use rand_chacha::ChaCha8Rng;

use crate::encoders::{embed_tokens, EncoderDims};
use crate::error::{Error, Result};
use crate::lstm::{lstm_encode, uniform_init, Linear, LstmParams};
use crate::ops;
use crate::optim::{clip_global_norm, Adam};
use crate::tape::Tape;
use crate::tensor::{zero_grads, Tensor};
use crate::text::Vocabulary;

/// Probability that a dialog is human-generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardValue(f64);

impl RewardValue {
    pub fn new(r: f64) -> Result<RewardValue> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidArgument {
                op: "reward",
                msg: format!("reward {r} outside [0, 1]"),
            });
        }
        Ok(RewardValue(r))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// One (memories, question, answer) tuple for discriminator training.
#[derive(Debug, Clone)]
pub struct DialogExample {
    pub v_tilde: Tensor,
    pub u_tilde: Tensor,
    pub question: Vec<usize>,
    pub answer: Vec<usize>,
}

pub struct Discriminator {
    pub dims: EncoderDims,
    pub sep_id: usize,
    pub embedding: Tensor,
    pub pair_lstm: LstmParams,
    pub fuse_w: Tensor,
    pub head: Linear,
}

impl Discriminator {
    pub fn new(dims: EncoderDims, rng: &mut ChaCha8Rng) -> Discriminator {
        Self::with_separator(dims, Vocabulary::END, rng)
    }

    pub fn with_separator(
        dims: EncoderDims,
        sep_id: usize,
        rng: &mut ChaCha8Rng,
    ) -> Discriminator {
        let embedding = Tensor::param(
            "dis.embedding",
            uniform_init(rng, dims.vocab * dims.d_emb, 0.1),
            &[dims.vocab, dims.d_emb],
        )
        .expect("finite init");
        let scale = 1.0 / ((3 * dims.d) as f64).sqrt();
        Discriminator {
            dims,
            sep_id,
            embedding,
            pair_lstm: LstmParams::new("dis.pair_lstm", dims.d_emb, dims.d, rng),
            fuse_w: Tensor::param(
                "dis.fuse_w",
                uniform_init(rng, 3 * dims.d * dims.d, scale),
                &[3 * dims.d, dims.d],
            )
            .expect("finite init"),
            head: Linear::new("dis.head", dims.d, 2, rng),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut out = vec![self.embedding.clone()];
        out.extend(self.pair_lstm.parameters());
        out.push(self.fuse_w.clone());
        out.extend(self.head.parameters());
        out
    }

    /// Answer content as seen by the classifier: a trailing END terminator
    /// is stripped so positives (human answers, no END) and negatives
    /// (sampled answers) cannot be separated by the marker alone.
    fn answer_content<'a>(&self, answer: &'a [usize]) -> &'a [usize] {
        match answer.split_last() {
            Some((&last, rest)) if last == self.sep_id => rest,
            _ => answer,
        }
    }

    /// Class probabilities `[human, machine]`.
    pub fn forward(
        &self,
        v_tilde: &Tensor,
        u_tilde: &Tensor,
        question: &[usize],
        answer: &[usize],
    ) -> Result<Tensor> {
        let content = self.answer_content(answer);
        if content.is_empty() {
            return Err(Error::InvalidArgument {
                op: "discriminate",
                msg: "empty answer".into(),
            });
        }
        for t in [v_tilde, u_tilde] {
            if t.shape() != vec![self.dims.d] {
                return Err(Error::InvalidArgument {
                    op: "discriminate",
                    msg: format!("memory shape {:?}, expected [{}]", t.shape(), self.dims.d),
                });
            }
        }
        let mut seq = question.to_vec();
        seq.push(self.sep_id);
        seq.extend_from_slice(content);
        let emb = embed_tokens(&self.embedding, &seq)?;
        let mask = crate::encoders::token_mask(&seq, self.dims.vocab);
        let u_qa = lstm_encode(&self.pair_lstm, &emb, &mask)?.final_state;

        // memories are constants here: no gradient may reach the generator
        let v = v_tilde.detach();
        let u = u_tilde.detach();
        let cat = ops::concat_last(&ops::concat_last(&v, &u)?, &u_qa)?;
        let fused = ops::tanh(&ops::matmul(&cat, &self.fuse_w)?)?;
        let logits = self.head.forward(&fused)?;
        ops::softmax_last(&logits)
    }

    /// Probability the dialog is human-generated.
    pub fn discriminate(
        &self,
        v_tilde: &Tensor,
        u_tilde: &Tensor,
        question: &[usize],
        answer: &[usize],
    ) -> Result<RewardValue> {
        let probs = self.forward(v_tilde, u_tilde, question, answer)?;
        RewardValue::new(probs.to_vec()[0])
    }

    /// Binary cross-entropy node for one labeled example.
    fn loss_node(&self, example: &DialogExample, human: bool) -> Result<Tensor> {
        let probs = self.forward(
            &example.v_tilde,
            &example.u_tilde,
            &example.question,
            &example.answer,
        )?;
        let class = if human { 0 } else { 1 };
        ops::cross_entropy(&probs, &[class], &[true])
    }

    /// One optimizer step on mean binary cross-entropy over human positives
    /// and machine negatives. Returns the pre-step loss.
    pub fn update(
        &self,
        positives: &[DialogExample],
        negatives: &[DialogExample],
        opt: &mut Adam,
        clip_norm: f64,
    ) -> Result<f64> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::InvalidArgument {
                op: "discriminator-update",
                msg: "positives and negatives must both be non-empty".into(),
            });
        }
        let params = self.parameters();
        zero_grads(&params);
        let tape = Tape::new();
        let loss = {
            let _guard = tape.activate();
            let mut total: Option<Tensor> = None;
            for (examples, human) in [(positives, true), (negatives, false)] {
                for ex in examples {
                    let l = self.loss_node(ex, human)?;
                    total = Some(match total {
                        Some(t) => ops::add(&t, &l)?,
                        None => l,
                    });
                }
            }
            let n = (positives.len() + negatives.len()) as f64;
            ops::scalar_mul(&total.expect("non-empty"), 1.0 / n)?
        };
        let value = loss.item();
        tape.backward(&loss)?;
        clip_global_norm(&params, clip_norm)?;
        opt.step(&params)?;
        zero_grads(&params);
        Ok(value)
    }

    /// Classification accuracy at threshold 0.5.
    pub fn accuracy(
        &self,
        positives: &[DialogExample],
        negatives: &[DialogExample],
    ) -> Result<f64> {
        let mut correct = 0usize;
        for ex in positives {
            let r = self.discriminate(&ex.v_tilde, &ex.u_tilde, &ex.question, &ex.answer)?;
            if r.value() > 0.5 {
                correct += 1;
            }
        }
        for ex in negatives {
            let r = self.discriminate(&ex.v_tilde, &ex.u_tilde, &ex.question, &ex.answer)?;
            if r.value() < 0.5 {
                correct += 1;
            }
        }
        Ok(correct as f64 / (positives.len() + negatives.len()) as f64)
    }
}
