//! Sequential co-attention: each feature sequence (image regions, history
//! utterances, question words) is attended while guided by summaries of the
//! other two, in a fixed four-step chain, and the three attended vectors are
//! fused into the final feature the decoder conditions on.
//!
//! One attention step over rows x_i of X with guidances g1, g2:
//!   H_i    = tanh(W_x x_i + W_g1 g1 + W_g2 g2)
//!   alpha  = softmax_i(w' H_i)        (masked items forced to zero weight)
//!   x~     = sum_i alpha_i x_i

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lstm::uniform_init;
use crate::ops;
use crate::tensor::Tensor;

/// Score used to bury masked attention logits; far below any reachable
/// tanh-bounded score, so their softmax weight underflows to exactly zero.
const MASKED_SCORE: f64 = -1e30;

/// Weights of one attention step: three guidance projections and the score
/// vector. The four steps of the chain hold independent instances.
#[derive(Debug, Clone)]
pub struct CoAttentionStepParams {
    pub w_x: Tensor,
    pub w_g1: Tensor,
    pub w_g2: Tensor,
    pub w: Tensor,
}

impl CoAttentionStepParams {
    pub fn new(prefix: &str, d: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        let mat = |rng: &mut ChaCha8Rng, name: &str| {
            Tensor::param(
                &format!("{prefix}.{name}"),
                uniform_init(rng, d * h, scale),
                &[d, h],
            )
            .expect("finite init")
        };
        CoAttentionStepParams {
            w_x: mat(rng, "w_x"),
            w_g1: mat(rng, "w_g1"),
            w_g2: mat(rng, "w_g2"),
            w: Tensor::param(
                &format!("{prefix}.w"),
                uniform_init(rng, h, 1.0 / (h as f64).sqrt()),
                &[h],
            )
            .expect("finite init"),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![
            self.w_x.clone(),
            self.w_g1.clone(),
            self.w_g2.clone(),
            self.w.clone(),
        ]
    }
}

/// Attention weights over the input rows and the attended summary vector.
#[derive(Debug, Clone)]
pub struct AttentionResult {
    pub weights: Tensor,
    pub attended: Tensor,
}

/// One co-attention step over `x: [M, d]` guided by two d-vectors.
/// A guidance may be the zero vector (the chain's first step has only one).
pub fn co_atten(
    x: &Tensor,
    g1: &Tensor,
    g2: &Tensor,
    mask: &[bool],
    params: &CoAttentionStepParams,
) -> Result<AttentionResult> {
    let shape = x.shape();
    let [m, _d] = shape.as_slice() else {
        return Err(Error::InvalidArgument {
            op: "co-atten",
            msg: format!("expected [M, d] inputs, got {shape:?}"),
        });
    };
    if mask.len() != *m {
        return Err(Error::InvalidArgument {
            op: "co-atten",
            msg: format!("mask length {} != {m} rows", mask.len()),
        });
    }
    if !mask.iter().any(|&k| k) {
        return Err(Error::InvalidArgument {
            op: "co-atten",
            msg: "all rows masked".into(),
        });
    }
    let guidance = ops::add(&ops::matmul(g1, &params.w_g1)?, &ops::matmul(g2, &params.w_g2)?)?;
    let hidden = ops::tanh(&ops::broadcast_add(&ops::matmul(x, &params.w_x)?, &guidance)?)?;
    let scores = ops::matmul(&hidden, &params.w)?;
    let masked = ops::masked_fill(&scores, mask, MASKED_SCORE)?;
    let weights = ops::softmax_last(&masked)?;
    let attended = ops::matmul(&weights, x)?;
    Ok(AttentionResult { weights, attended })
}

/// Parameters of the full encoder chain: four independent attention steps
/// plus the fusion matrix.
#[derive(Debug, Clone)]
pub struct CoAttentionParams {
    pub steps: [CoAttentionStepParams; 4],
    pub w_eg: Tensor,
}

impl CoAttentionParams {
    pub fn new(prefix: &str, d: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        let steps = [
            CoAttentionStepParams::new(&format!("{prefix}.step1"), d, h, rng),
            CoAttentionStepParams::new(&format!("{prefix}.step2"), d, h, rng),
            CoAttentionStepParams::new(&format!("{prefix}.step3"), d, h, rng),
            CoAttentionStepParams::new(&format!("{prefix}.step4"), d, h, rng),
        ];
        let scale = 1.0 / ((3 * d) as f64).sqrt();
        CoAttentionParams {
            steps,
            w_eg: Tensor::param(
                &format!("{prefix}.w_eg"),
                uniform_init(rng, 3 * d * d, scale),
                &[3 * d, d],
            )
            .expect("finite init"),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for s in &self.steps {
            out.extend(s.parameters());
        }
        out.push(self.w_eg.clone());
        out
    }
}

/// Output of the encoder chain: the three attended features, the fused
/// feature F, and the four per-step attention weight vectors (the "reasons"
/// kept for the discriminator and for transcript output).
#[derive(Debug, Clone)]
pub struct EncoderContext {
    pub v_tilde: Tensor,
    pub u_tilde: Tensor,
    pub q_tilde: Tensor,
    pub f: Tensor,
    /// Order: image pass 1, history, question, image pass 2.
    pub alphas: [Tensor; 4],
}

/// Fuse the attended features: `F = tanh(W_eg [v~; u~; q~])`.
pub fn fuse(v_tilde: &Tensor, u_tilde: &Tensor, q_tilde: &Tensor, w_eg: &Tensor) -> Result<Tensor> {
    let cat = ops::concat_last(&ops::concat_last(v_tilde, u_tilde)?, q_tilde)?;
    ops::tanh(&ops::matmul(&cat, w_eg)?)
}

/// The four-step chain: question attends the image, the weighted image and
/// question attend the history, those guide the question attention, and a
/// second image pass closes the circle.
#[allow(clippy::too_many_arguments)]
pub fn sequential_encode(
    v: &Tensor,
    v_mask: &[bool],
    u: &Tensor,
    u_mask: &[bool],
    q: &Tensor,
    q_mask: &[bool],
    q_init: &Tensor,
    params: &CoAttentionParams,
) -> Result<EncoderContext> {
    let zero = Tensor::zeros(&q_init.shape());
    let pass1 = co_atten(v, q_init, &zero, v_mask, &params.steps[0])?;
    let hist = co_atten(u, &pass1.attended, q_init, u_mask, &params.steps[1])?;
    let ques = co_atten(q, &hist.attended, &pass1.attended, q_mask, &params.steps[2])?;
    let pass2 = co_atten(v, &ques.attended, &hist.attended, v_mask, &params.steps[3])?;
    let f = fuse(&pass2.attended, &hist.attended, &ques.attended, &params.w_eg)?;
    Ok(EncoderContext {
        v_tilde: pass2.attended,
        u_tilde: hist.attended,
        q_tilde: ques.attended,
        f,
        alphas: [pass1.weights, hist.weights, ques.weights, pass2.weights],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng(seed);
        let n: usize = shape.iter().product();
        Tensor::new(uniform_init(&mut r, n, 1.0), shape).unwrap()
    }

    #[test]
    fn singleton_row_gets_weight_one() {
        let params = CoAttentionStepParams::new("t", 3, 3, &mut rng(1));
        let x = random_tensor(&[1, 3], 2);
        let g = Tensor::zeros(&[3]);
        let res = co_atten(&x, &g, &g, &[true], &params).unwrap();
        assert_eq!(res.weights.to_vec(), vec![1.0]);
        assert_eq!(res.attended.to_vec(), x.to_vec());
    }

    #[test]
    fn zero_parameters_give_uniform_weights() {
        let params = CoAttentionStepParams {
            w_x: Tensor::new(vec![0.0; 12], &[3, 4]).unwrap(),
            w_g1: Tensor::new(vec![0.0; 12], &[3, 4]).unwrap(),
            w_g2: Tensor::new(vec![0.0; 12], &[3, 4]).unwrap(),
            w: Tensor::new(vec![0.0; 4], &[4]).unwrap(),
        };
        let x = random_tensor(&[5, 3], 3);
        let g = random_tensor(&[3], 4);
        let res = co_atten(&x, &g, &g, &[true; 5], &params).unwrap();
        for w in res.weights.to_vec() {
            assert!((w - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_hand_evaluated_two_row_case() {
        // d = h = 2, W_x = I, guidance weights zero, w = (1, 0),
        // x1 = (1, 0), x2 = (0, 0):
        // scores = (tanh 1, 0); alpha = softmax(scores); x~ = alpha_1 * x1.
        let params = CoAttentionStepParams {
            w_x: Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap(),
            w_g1: Tensor::new(vec![0.0; 4], &[2, 2]).unwrap(),
            w_g2: Tensor::new(vec![0.0; 4], &[2, 2]).unwrap(),
            w: Tensor::new(vec![1.0, 0.0], &[2]).unwrap(),
        };
        let x = Tensor::new(vec![1.0, 0.0, 0.0, 0.0], &[2, 2]).unwrap();
        let g = Tensor::zeros(&[2]);
        let res = co_atten(&x, &g, &g, &[true, true], &params).unwrap();

        // independent evaluation with raw arithmetic
        let s1 = 1.0f64.tanh();
        let e1 = s1.exp();
        let a1 = e1 / (e1 + 1.0);
        let weights = res.weights.to_vec();
        assert!((weights[0] - a1).abs() < 1e-12);
        assert!((a1 - 0.682).abs() < 1e-3);
        let attended = res.attended.to_vec();
        assert!((attended[0] - a1).abs() < 1e-12);
        assert_eq!(attended[1], 0.0);
    }

    #[test]
    fn weights_form_simplex_and_hull_membership_holds() {
        for seed in 0..20 {
            let params = CoAttentionStepParams::new("t", 4, 3, &mut rng(seed));
            let x = random_tensor(&[6, 4], seed + 100);
            let g1 = random_tensor(&[4], seed + 200);
            let g2 = random_tensor(&[4], seed + 300);
            let mask = [true, true, false, true, true, false];
            let res = co_atten(&x, &g1, &g2, &mask, &params).unwrap();
            let w = res.weights.to_vec();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&v| v >= 0.0));
            assert_eq!(w[2], 0.0);
            assert_eq!(w[5], 0.0);

            // attended vector lies in the convex hull of unmasked rows
            let xd = x.to_vec();
            let att = res.attended.to_vec();
            for j in 0..4 {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for (i, &keep) in mask.iter().enumerate() {
                    if keep {
                        lo = lo.min(xd[i * 4 + j]);
                        hi = hi.max(xd[i * 4 + j]);
                    }
                }
                assert!(att[j] >= lo - 1e-12 && att[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let params = CoAttentionStepParams::new("t", 3, 3, &mut rng(9));
        let x = random_tensor(&[4, 3], 10);
        let g1 = random_tensor(&[3], 11);
        let g2 = random_tensor(&[3], 12);
        let mask = [true, true, true, false];
        let base = co_atten(&x, &g1, &g2, &mask, &params).unwrap();

        let perm = [2usize, 0, 3, 1];
        let xd = x.to_vec();
        let mut pd = vec![0.0; 12];
        let mut pmask = [false; 4];
        for (new_i, &old_i) in perm.iter().enumerate() {
            pd[new_i * 3..new_i * 3 + 3].copy_from_slice(&xd[old_i * 3..old_i * 3 + 3]);
            pmask[new_i] = mask[old_i];
        }
        let px = Tensor::new(pd, &[4, 3]).unwrap();
        let permuted = co_atten(&px, &g1, &g2, &pmask, &params).unwrap();

        let bw = base.weights.to_vec();
        let pw = permuted.weights.to_vec();
        for (new_i, &old_i) in perm.iter().enumerate() {
            assert!((pw[new_i] - bw[old_i]).abs() < 1e-12);
        }
        for (a, b) in base.attended.to_vec().iter().zip(permuted.attended.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn all_masked_rejected() {
        let params = CoAttentionStepParams::new("t", 2, 2, &mut rng(1));
        let x = random_tensor(&[2, 2], 2);
        let g = Tensor::zeros(&[2]);
        assert!(co_atten(&x, &g, &g, &[false, false], &params).is_err());
    }

    #[test]
    fn fuse_is_zero_for_zero_weights_and_bounded() {
        let v = random_tensor(&[3], 1);
        let u = random_tensor(&[3], 2);
        let q = random_tensor(&[3], 3);
        let zero = Tensor::new(vec![0.0; 27], &[9, 3]).unwrap();
        assert_eq!(fuse(&v, &u, &q, &zero).unwrap().to_vec(), vec![0.0; 3]);

        let w = random_tensor(&[9, 3], 4);
        let f = fuse(&v, &u, &q, &w).unwrap();
        assert!(f.to_vec().iter().all(|x| x.abs() < 1.0));

        // independent evaluation of the fusion formula
        let cat: Vec<f64> = [v.to_vec(), u.to_vec(), q.to_vec()].concat();
        let wd = w.to_vec();
        let expected: Vec<f64> = (0..3)
            .map(|j| (0..9).map(|i| cat[i] * wd[i * 3 + j]).sum::<f64>().tanh())
            .collect();
        for (a, b) in f.to_vec().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn history_of_one_row_attends_only_the_caption() {
        let params = CoAttentionParams::new("t", 3, 3, &mut rng(20));
        let v = random_tensor(&[4, 3], 21);
        let u = random_tensor(&[1, 3], 22);
        let q = random_tensor(&[2, 3], 23);
        let q_init = random_tensor(&[3], 24);
        let ctx = sequential_encode(
            &v,
            &[true; 4],
            &u,
            &[true],
            &q,
            &[true; 2],
            &q_init,
            &params,
        )
        .unwrap();
        assert_eq!(ctx.alphas[1].to_vec(), vec![1.0]);
        assert_eq!(ctx.u_tilde.to_vec(), u.to_vec());
    }

    #[test]
    fn full_chain_passes_gradient_check() {
        let params = CoAttentionParams::new("t", 3, 3, &mut rng(30));
        let head = random_tensor(&[3], 31);
        let v = random_tensor(&[3, 3], 32);
        let u = random_tensor(&[2, 3], 33);
        let q = random_tensor(&[2, 3], 34);
        let q_init = random_tensor(&[3], 35);
        let point = params.parameters();
        let err = grad_check(
            |_| {
                let ctx = sequential_encode(
                    &v,
                    &[true; 3],
                    &u,
                    &[true; 2],
                    &q,
                    &[true; 2],
                    &q_init,
                    &params,
                )?;
                crate::ops::sum(&crate::ops::mul(&ctx.f, &head)?)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn deterministic_given_inputs() {
        let params = CoAttentionParams::new("t", 3, 3, &mut rng(40));
        let v = random_tensor(&[4, 3], 41);
        let u = random_tensor(&[2, 3], 42);
        let q = random_tensor(&[3, 3], 43);
        let q_init = random_tensor(&[3], 44);
        let run = || {
            sequential_encode(
                &v,
                &[true; 4],
                &u,
                &[true; 2],
                &q,
                &[true; 3],
                &q_init,
                &params,
            )
            .unwrap()
            .f
            .to_vec()
        };
        assert_eq!(run(), run());
    }

    proptest::proptest! {
        #[test]
        fn simplex_property(seed in 0u64..500) {
            let mut r = rng(seed);
            let m = 1 + (r.random::<u64>() % 7) as usize;
            let params = CoAttentionStepParams::new("t", 3, 2, &mut r);
            let x = {
                let n = m * 3;
                Tensor::new(uniform_init(&mut r, n, 2.0), &[m, 3]).unwrap()
            };
            let g1 = Tensor::new(uniform_init(&mut r, 3, 2.0), &[3]).unwrap();
            let g2 = Tensor::new(uniform_init(&mut r, 3, 2.0), &[3]).unwrap();
            let mut mask: Vec<bool> = (0..m).map(|_| r.random::<f64>() < 0.7).collect();
            if !mask.iter().any(|&k| k) {
                mask[0] = true;
            }
            let res = co_atten(&x, &g1, &g2, &mask, &params).unwrap();
            let w = res.weights.to_vec();
            proptest::prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (i, &keep) in mask.iter().enumerate() {
                proptest::prop_assert!(w[i] >= 0.0);
                if !keep {
                    proptest::prop_assert_eq!(w[i], 0.0);
                }
            }
        }
    }
}
