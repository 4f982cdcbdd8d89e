//! Retrieval evaluation: rank the 100 candidates of every round by the
//! generator's log-likelihood and report MRR, recall@k, and mean rank.
//! Rounds are always evaluated with the ground-truth dialog history.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::write_atomic;
use crate::data::{Dataset, CANDIDATES_PER_ROUND, ROUNDS_PER_DIALOG};
use crate::encoders::{make_round_inputs, RoundInputs};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::parallel::{parallel_chunks, restore, snapshot};
use crate::tensor::Tensor;

/// Rank of the human response for one round (1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOutcome {
    pub record: usize,
    pub round: usize,
    pub rank: usize,
}

/// Aggregate retrieval metrics over a split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mrr: f64,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub mean_rank: f64,
    pub rounds: usize,
}

/// Rank candidate answers by score, descending; ties broken by ascending
/// candidate index. Returns the 1-based rank of `gt_index`.
pub fn rank_of(scores: &[f64], gt_index: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.iter().position(|&i| i == gt_index).expect("gt in list") + 1
}

/// Score all 100 candidates of one round under the generator and rank the
/// human answer.
pub fn rank_candidates(
    gen: &Generator,
    ctx: &crate::coattention::EncoderContext,
    candidates: &[Vec<usize>],
    gt_index: usize,
    length_normalized: bool,
) -> Result<usize> {
    if candidates.len() != CANDIDATES_PER_ROUND {
        return Err(Error::InvalidArgument {
            op: "rank-candidates",
            msg: format!("expected {CANDIDATES_PER_ROUND} candidates, got {}", candidates.len()),
        });
    }
    if gt_index >= candidates.len() {
        return Err(Error::InvalidArgument {
            op: "rank-candidates",
            msg: format!("gt_index {gt_index} out of range"),
        });
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let ll = gen.sequence_log_likelihood(ctx, cand)?;
        let score = if length_normalized {
            ll / cand.len() as f64
        } else {
            ll
        };
        scores.push(score);
    }
    Ok(rank_of(&scores, gt_index))
}

/// MRR, recall@{1,5,10}, and mean rank over per-round outcomes.
pub fn compute_metrics(outcomes: &[RankOutcome]) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument {
            op: "metrics",
            msg: "no outcomes".into(),
        });
    }
    let n = outcomes.len() as f64;
    let recall = |k: usize| outcomes.iter().filter(|o| o.rank <= k).count() as f64 / n;
    Ok(EvalReport {
        mrr: outcomes.iter().map(|o| 1.0 / o.rank as f64).sum::<f64>() / n,
        r_at_1: recall(1),
        r_at_5: recall(5),
        r_at_10: recall(10),
        mean_rank: outcomes.iter().map(|o| o.rank as f64).sum::<f64>() / n,
        rounds: outcomes.len(),
    })
}

/// Evaluate every round of every record with ground-truth history.
/// Records are scored in parallel by generator replicas; utterance
/// encodings are computed once per record and shared across its rounds.
pub fn evaluate_split(
    gen: &Generator,
    data: &Dataset,
    threads: usize,
    length_normalized: bool,
) -> Result<Vec<RankOutcome>> {
    let params = gen.parameters();
    let snap = snapshot(&params);
    let dims = gen.dims;
    let (start_id, end_id) = (gen.start_id, gen.end_id);
    let indices: Vec<usize> = (0..data.records.len()).collect();

    let chunk_results = parallel_chunks(&indices, threads, |_, chunk| -> Result<Vec<RankOutcome>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let replica = Generator::with_ids(dims, start_id, end_id, &mut rng);
        restore(&replica.parameters(), &snap)?;
        let mut outcomes = Vec::with_capacity(chunk.len() * ROUNDS_PER_DIALOG);
        for &rec_idx in chunk {
            let record = &data.records[rec_idx];
            // Utterance encodings are answer-history of later rounds; encode
            // each of the 11 rows once.
            let mut rows: Vec<Tensor> = Vec::with_capacity(ROUNDS_PER_DIALOG + 1);
            rows.push(replica.encoder.encode_utterance(&record.caption)?);
            for round in &record.rounds {
                let mut pair = round.question.clone();
                pair.extend_from_slice(&round.answer);
                rows.push(replica.encoder.encode_utterance(&pair)?);
            }
            for t in 0..record.rounds.len() {
                let inputs: RoundInputs = make_round_inputs(record, &data.features, t)?;
                let ctx = replica
                    .encoder
                    .encode_context_with_history_rows(&inputs, &rows[..t + 1])?;
                let round = &record.rounds[t];
                let rank = rank_candidates(
                    &replica,
                    &ctx,
                    &round.candidates,
                    round.gt_index,
                    length_normalized,
                )?;
                outcomes.push(RankOutcome {
                    record: rec_idx,
                    round: t,
                    rank,
                });
            }
        }
        Ok(outcomes)
    });

    let mut outcomes = Vec::with_capacity(data.num_rounds());
    for chunk in chunk_results {
        outcomes.extend(chunk?);
    }
    Ok(outcomes)
}

/// CSV line for a report; the header matches the documented interface.
pub const REPORT_CSV_HEADER: &str = "model,split,mrr,r1,r5,r10,mean_rank,rounds";

pub fn report_csv(model: &str, split: &str, report: &EvalReport) -> String {
    format!(
        "{REPORT_CSV_HEADER}\n{model},{split},{:.6},{:.6},{:.6},{:.6},{:.4},{}\n",
        report.mrr, report.r_at_1, report.r_at_5, report.r_at_10, report.mean_rank, report.rounds
    )
}

pub fn write_report_csv(path: &Path, model: &str, split: &str, report: &EvalReport) -> Result<()> {
    write_atomic(path, report_csv(model, split, report).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn outcomes(ranks: &[usize]) -> Vec<RankOutcome> {
        ranks
            .iter()
            .enumerate()
            .map(|(i, &rank)| RankOutcome {
                record: 0,
                round: i,
                rank,
            })
            .collect()
    }

    #[test]
    fn mrr_of_1_2_4() {
        let report = compute_metrics(&outcomes(&[1, 2, 4])).unwrap();
        assert!((report.mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
        assert!((report.mrr - 0.5833333333).abs() < 1e-9);
    }

    #[test]
    fn recall_and_mean_rank_arithmetic() {
        let report = compute_metrics(&outcomes(&[1, 6, 5, 11])).unwrap();
        assert_eq!(report.r_at_5, 0.5);
        assert_eq!(report.r_at_10, 0.75);
        assert!((report.mean_rank - 5.75).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranks() {
        let report = compute_metrics(&outcomes(&[1, 1, 1])).unwrap();
        assert_eq!(report.mrr, 1.0);
        assert_eq!(report.r_at_1, 1.0);
        assert_eq!(report.mean_rank, 1.0);
    }

    #[test]
    fn empty_outcomes_rejected() {
        assert!(compute_metrics(&[]).is_err());
    }

    #[test]
    fn tie_break_by_ascending_index() {
        let scores = vec![0.5; 100];
        assert_eq!(rank_of(&scores, 0), 1);
        assert_eq!(rank_of(&scores, 99), 100);
        assert_eq!(rank_of(&scores, 42), 43);
    }

    #[test]
    fn rank_matches_brute_force_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = 100;
            let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 8.0).round()).collect();
            let gt = rng.random_range(0..n);
            // independent reference: strictly-greater count plus earlier ties
            let reference = 1
                + scores.iter().filter(|&&s| s > scores[gt]).count()
                + scores[..gt].iter().filter(|&&s| s == scores[gt]).count();
            assert_eq!(rank_of(&scores, gt), reference);
        }
    }

    proptest::proptest! {
        #[test]
        fn metric_invariants(ranks in proptest::collection::vec(1usize..=100, 1..60)) {
            let report = compute_metrics(&outcomes(&ranks)).unwrap();
            proptest::prop_assert!(report.r_at_1 <= report.r_at_5);
            proptest::prop_assert!(report.r_at_5 <= report.r_at_10);
            proptest::prop_assert!(report.mean_rank >= 1.0);
            proptest::prop_assert!(report.mrr > 0.0 && report.mrr <= 1.0);
            // Jensen: mrr * mean_rank >= 1
            proptest::prop_assert!(report.mrr * report.mean_rank >= 1.0 - 1e-12);
        }
    }
}
