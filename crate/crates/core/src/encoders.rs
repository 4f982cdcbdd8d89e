//! Token embedding, question/history LSTM encoders, and image projection:
//! everything that turns one dialog round into the V, U, Q feature
//! sequences the co-attention chain consumes.
//!
//! The embedding table is shared across question, history, and decoder
//! within one model; the question and history LSTMs are separate parameter
//! sets. PAD tokens are masked out wherever they appear, so padding never
//! changes any returned feature.

use rand_chacha::ChaCha8Rng;

use crate::coattention::{sequential_encode, CoAttentionParams, EncoderContext};
use crate::data::{DialogRecord, FeatureMap, RegionFeatures};
use crate::error::{Error, Result};
use crate::lstm::{lstm_encode, uniform_init, Linear, LstmParams};
use crate::ops;
use crate::tensor::Tensor;
use crate::text::Vocabulary;

/// Row i of the returned matrix is the embedding-table row for `ids[i]`.
pub fn embed_tokens(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    ops::lookup_rows(table, ids)
}

/// Model dimensions shared by every encoder instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderDims {
    /// Guidance/feature dimension (also the LSTM hidden size).
    pub d: usize,
    /// Attention hidden size.
    pub h: usize,
    /// Raw image region feature dimension.
    pub d_img: usize,
    /// Token embedding dimension.
    pub d_emb: usize,
    pub vocab: usize,
}

/// The raw inputs of one dialog round: image regions, the history
/// utterances up to (not including) this round, and the question.
#[derive(Debug, Clone)]
pub struct RoundInputs {
    pub image: RegionFeatures,
    /// Utterance token ids; row 0 is the caption, then one QA pair per round.
    pub history: Vec<Vec<usize>>,
    pub question: Vec<usize>,
}

/// Assemble the inputs for round `t` of a record: history is the caption
/// plus rounds `0..t` only, so the current round's answer cannot leak in.
pub fn make_round_inputs(
    record: &DialogRecord,
    features: &FeatureMap,
    t: usize,
) -> Result<RoundInputs> {
    if t >= record.rounds.len() {
        return Err(Error::InvalidArgument {
            op: "round-inputs",
            msg: format!("round {t} out of range"),
        });
    }
    let image = features
        .get(&record.image_id)
        .ok_or_else(|| Error::InvalidArgument {
            op: "round-inputs",
            msg: format!("no features for image {}", record.image_id),
        })?
        .clone();
    let mut history = Vec::with_capacity(t + 1);
    history.push(record.caption.clone());
    for round in &record.rounds[..t] {
        let mut pair = round.question.clone();
        pair.extend_from_slice(&round.answer);
        history.push(pair);
    }
    debug_assert_eq!(history.len(), t + 1);
    let question = record.rounds[t].question.clone();
    Ok(RoundInputs {
        image,
        history,
        question,
    })
}

/// Projected image regions `[N, d]`.
pub struct ImageEncoding {
    pub v: Tensor,
}

/// Utterance-level history matrix `[T+1, d]`; row t is the final LSTM state
/// over utterance t's tokens (row 0 = caption).
pub struct HistoryEncoding {
    pub u: Tensor,
}

/// Per-step question hidden states `[L, d]` plus the final state.
pub struct QuestionEncoding {
    pub q: Tensor,
    pub q_final: Tensor,
    pub mask: Vec<bool>,
}

/// Keep flags for a token sequence: PAD positions are masked out. A
/// single-symbol vocabulary has no distinct padding token, so nothing is
/// masked there.
pub(crate) fn token_mask(ids: &[usize], vocab: usize) -> Vec<bool> {
    if vocab <= Vocabulary::PAD + 1 {
        return vec![true; ids.len()];
    }
    ids.iter().map(|&id| id != Vocabulary::PAD).collect()
}

/// One full encoder parameter set: embedding, two LSTMs, image projection,
/// and the four-step co-attention chain. The generator and the critic each
/// own a disjoint instance.
#[derive(Debug, Clone)]
pub struct DialogEncoder {
    pub dims: EncoderDims,
    pub embedding: Tensor,
    pub question_lstm: LstmParams,
    pub history_lstm: LstmParams,
    pub img_proj: Linear,
    pub coattn: CoAttentionParams,
}

impl DialogEncoder {
    pub fn new(prefix: &str, dims: EncoderDims, rng: &mut ChaCha8Rng) -> DialogEncoder {
        let embedding = Tensor::param(
            &format!("{prefix}.embedding"),
            uniform_init(rng, dims.vocab * dims.d_emb, 0.1),
            &[dims.vocab, dims.d_emb],
        )
        .expect("finite init");
        DialogEncoder {
            dims,
            embedding,
            question_lstm: LstmParams::new(&format!("{prefix}.q_lstm"), dims.d_emb, dims.d, rng),
            history_lstm: LstmParams::new(&format!("{prefix}.h_lstm"), dims.d_emb, dims.d, rng),
            img_proj: Linear::new(&format!("{prefix}.img_proj"), dims.d_img, dims.d, rng),
            coattn: CoAttentionParams::new(&format!("{prefix}.coattn"), dims.d, dims.h, rng),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut out = vec![self.embedding.clone()];
        out.extend(self.question_lstm.parameters());
        out.extend(self.history_lstm.parameters());
        out.extend(self.img_proj.parameters());
        out.extend(self.coattn.parameters());
        out
    }

    /// Final history-LSTM state over one utterance's tokens.
    pub fn encode_utterance(&self, ids: &[usize]) -> Result<Tensor> {
        let emb = embed_tokens(&self.embedding, ids)?;
        Ok(lstm_encode(&self.history_lstm, &emb, &token_mask(ids, self.dims.vocab))?.final_state)
    }

    pub fn encode_image(&self, image: &RegionFeatures) -> Result<ImageEncoding> {
        if image.d != self.dims.d_img {
            return Err(Error::InvalidArgument {
                op: "encode-image",
                msg: format!("feature dim {} != d_img {}", image.d, self.dims.d_img),
            });
        }
        let raw = Tensor::new(image.data.clone(), &[image.n, image.d])?;
        Ok(ImageEncoding {
            v: self.img_proj.forward(&raw)?,
        })
    }

    pub fn encode_question(&self, ids: &[usize]) -> Result<QuestionEncoding> {
        let emb = embed_tokens(&self.embedding, ids)?;
        let mask = token_mask(ids, self.dims.vocab);
        let enc = lstm_encode(&self.question_lstm, &emb, &mask)?;
        Ok(QuestionEncoding {
            q: ops::stack_rows(&enc.hiddens)?,
            q_final: enc.final_state,
            mask,
        })
    }

    /// Encode V, U, Q for one round.
    pub fn encode_features(
        &self,
        inputs: &RoundInputs,
    ) -> Result<(ImageEncoding, HistoryEncoding, QuestionEncoding)> {
        let rows: Vec<Tensor> = inputs
            .history
            .iter()
            .map(|utt| self.encode_utterance(utt))
            .collect::<Result<_>>()?;
        self.encode_features_with_history_rows(inputs, &rows)
    }

    /// Like [`encode_features`](Self::encode_features) but with precomputed
    /// utterance encodings — evaluation reuses one encoding per utterance
    /// across all ten rounds of a record.
    pub fn encode_features_with_history_rows(
        &self,
        inputs: &RoundInputs,
        history_rows: &[Tensor],
    ) -> Result<(ImageEncoding, HistoryEncoding, QuestionEncoding)> {
        let image = self.encode_image(&inputs.image)?;
        let history = HistoryEncoding {
            u: ops::stack_rows(history_rows)?,
        };
        let question = self.encode_question(&inputs.question)?;
        Ok((image, history, question))
    }

    /// Run the full co-attention chain for one round.
    pub fn encode_context(&self, inputs: &RoundInputs) -> Result<EncoderContext> {
        let rows: Vec<Tensor> = inputs
            .history
            .iter()
            .map(|utt| self.encode_utterance(utt))
            .collect::<Result<_>>()?;
        self.encode_context_with_history_rows(inputs, &rows)
    }

    pub fn encode_context_with_history_rows(
        &self,
        inputs: &RoundInputs,
        history_rows: &[Tensor],
    ) -> Result<EncoderContext> {
        let (image, history, question) =
            self.encode_features_with_history_rows(inputs, history_rows)?;
        let n = image.v.shape()[0];
        let t1 = history_rows.len();
        sequential_encode(
            &image.v,
            &vec![true; n],
            &history.u,
            &vec![true; t1],
            &question.q,
            &question.mask,
            &question.q_final,
            &self.coattn,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::scene::{synthesize_dataset, SceneConfig};
    use rand::SeedableRng;

    fn dims(vocab: usize) -> EncoderDims {
        EncoderDims {
            d: 4,
            h: 4,
            d_img: 12,
            d_emb: 3,
            vocab,
        }
    }

    fn tiny_dataset() -> (Vec<DialogRecord>, FeatureMap, Vocabulary) {
        let cfg = SceneConfig {
            d_img: 12,
            ..SceneConfig::default()
        };
        synthesize_dataset(3, 5, &cfg, "t", 1).unwrap()
    }

    #[test]
    fn history_grows_with_round_and_never_leaks() {
        let (records, features, _) = tiny_dataset();
        let r0 = make_round_inputs(&records[0], &features, 0).unwrap();
        assert_eq!(r0.history.len(), 1);
        let r3 = make_round_inputs(&records[0], &features, 3).unwrap();
        assert_eq!(r3.history.len(), 4);
        assert!(make_round_inputs(&records[0], &features, 10).is_err());
    }

    #[test]
    fn embedding_rows_match_ids() {
        let table = Tensor::new(vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1], &[3, 2]).unwrap();
        let m = embed_tokens(&table, &[2, 2, 0]).unwrap();
        assert_eq!(m.shape(), vec![3, 2]);
        let d = m.to_vec();
        assert_eq!(&d[0..2], &[2.0, 2.1]);
        assert_eq!(&d[2..4], &[2.0, 2.1]);
        assert_eq!(&d[4..6], &[0.0, 0.1]);
        assert!(embed_tokens(&table, &[3]).is_err());
    }

    #[test]
    fn encoded_shapes_share_the_guidance_dimension() {
        let (records, features, vocab) = tiny_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = DialogEncoder::new("t", dims(vocab.len()), &mut rng);
        let inputs = make_round_inputs(&records[0], &features, 2).unwrap();
        let (v, u, q) = enc.encode_features(&inputs).unwrap();
        assert_eq!(v.v.shape(), vec![16, 4]);
        assert_eq!(u.u.shape(), vec![3, 4]);
        assert_eq!(q.q.shape()[1], 4);
        assert_eq!(q.q_final.shape(), vec![4]);
    }

    #[test]
    fn pad_tokens_change_nothing() {
        let (records, features, vocab) = tiny_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = DialogEncoder::new("t", dims(vocab.len()), &mut rng);
        let inputs = make_round_inputs(&records[0], &features, 1).unwrap();
        let base = enc.encode_context(&inputs).unwrap();

        let mut padded = inputs.clone();
        padded.question.push(Vocabulary::PAD);
        padded.question.push(Vocabulary::PAD);
        padded.history[0].push(Vocabulary::PAD);
        let with_pad = enc.encode_context(&padded).unwrap();

        assert_eq!(base.f.to_vec(), with_pad.f.to_vec());
        assert_eq!(base.v_tilde.to_vec(), with_pad.v_tilde.to_vec());
        assert_eq!(base.u_tilde.to_vec(), with_pad.u_tilde.to_vec());
    }

    #[test]
    fn same_inputs_same_encoding() {
        let (records, features, vocab) = tiny_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = DialogEncoder::new("t", dims(vocab.len()), &mut rng);
        let inputs = make_round_inputs(&records[1], &features, 4).unwrap();
        let a = enc.encode_context(&inputs).unwrap();
        let b = enc.encode_context(&inputs).unwrap();
        assert_eq!(a.f.to_vec(), b.f.to_vec());
    }

    #[test]
    fn loss_gradient_touches_only_used_embedding_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = dims(6);
        let enc = DialogEncoder::new("t", d, &mut rng);
        let err = grad_check(
            |_| {
                let emb = embed_tokens(&enc.embedding, &[2])?;
                ops::sum(&ops::tanh(&emb)?)
            },
            &[enc.embedding.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");

        // direct check of row isolation
        let tape = crate::tape::Tape::new();
        let loss = {
            let _g = tape.activate();
            let emb = embed_tokens(&enc.embedding, &[2]).unwrap();
            ops::sum(&ops::tanh(&emb).unwrap()).unwrap()
        };
        tape.backward(&loss).unwrap();
        let grad = enc.embedding.grad().unwrap();
        for (i, g) in grad.chunks(d.d_emb).enumerate() {
            let nonzero = g.iter().any(|&x| x != 0.0);
            assert_eq!(nonzero, i == 2, "row {i}");
        }
    }
}
