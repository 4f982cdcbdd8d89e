//! Learned baseline: an independent encoder replica with a scalar head that
//! estimates the expected reward of a context, trained by squared error
//! against observed rewards. Its parameters are disjoint from the generator.

use rand_chacha::ChaCha8Rng;

use crate::encoders::{DialogEncoder, EncoderDims, RoundInputs};
use crate::error::Result;
use crate::lstm::Linear;
use crate::ops;
use crate::optim::{clip_global_norm, Adam};
use crate::tape::Tape;
use crate::tensor::{zero_grads, Tensor};

pub struct Critic {
    pub encoder: DialogEncoder,
    pub head: Linear,
}

impl Critic {
    pub fn new(dims: EncoderDims, rng: &mut ChaCha8Rng) -> Critic {
        Critic {
            encoder: DialogEncoder::new("critic.enc", dims, rng),
            // zero head: the initial baseline is exactly 0
            head: Linear::zeros("critic.head", dims.d, 1),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut out = self.encoder.parameters();
        out.extend(self.head.parameters());
        out
    }

    /// Baseline node `[1]` under the active tape.
    pub fn value_node(&self, inputs: &RoundInputs) -> Result<Tensor> {
        let ctx = self.encoder.encode_context(inputs)?;
        self.head.forward(&ctx.f)
    }

    /// Baseline estimate for a context.
    pub fn value(&self, inputs: &RoundInputs) -> Result<f64> {
        Ok(self.value_node(inputs)?.item())
    }
}

/// One squared-error step of the critic against an observed reward.
/// Returns the pre-update baseline and the pre-update loss.
pub fn critic_step(
    critic: &Critic,
    inputs: &RoundInputs,
    reward: f64,
    opt: &mut Adam,
    clip_norm: f64,
) -> Result<(f64, f64)> {
    let params = critic.parameters();
    zero_grads(&params);
    let tape = Tape::new();
    let (b, loss) = {
        let _guard = tape.activate();
        let b_node = critic.value_node(inputs)?;
        let target = Tensor::scalar(reward);
        let loss = ops::mse(&b_node, &target)?;
        (b_node.item(), loss)
    };
    let loss_value = loss.item();
    tape.backward(&loss)?;
    clip_global_norm(&params, clip_norm)?;
    opt.step(&params)?;
    zero_grads(&params);
    Ok((b, loss_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RegionFeatures;
    use rand::SeedableRng;

    fn dims() -> EncoderDims {
        EncoderDims {
            d: 4,
            h: 4,
            d_img: 6,
            d_emb: 3,
            vocab: 8,
        }
    }

    fn inputs() -> RoundInputs {
        RoundInputs {
            image: RegionFeatures {
                n: 2,
                d: 6,
                data: (0..12).map(|i| (i as f64 * 0.3).cos() * 0.4).collect(),
            },
            history: vec![vec![4, 5]],
            question: vec![6, 7],
        }
    }

    #[test]
    fn zero_initialized_head_predicts_zero() {
        let critic = Critic::new(dims(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(critic.value(&inputs()).unwrap(), 0.0);
    }

    #[test]
    fn exact_prediction_means_zero_loss_and_zero_gradient() {
        let critic = Critic::new(dims(), &mut ChaCha8Rng::seed_from_u64(2));
        let b0 = critic.value(&inputs()).unwrap();
        let mut opt = Adam::new(1e-3);
        let before: Vec<Vec<f64>> = critic.parameters().iter().map(|p| p.to_vec()).collect();
        let (b, loss) = critic_step(&critic, &inputs(), b0, &mut opt, 5.0).unwrap();
        assert_eq!(b, b0);
        assert_eq!(loss, 0.0);
        // zero gradient: Adam with zero grad leaves parameters unchanged
        let after: Vec<Vec<f64>> = critic.parameters().iter().map(|p| p.to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn converges_to_constant_reward() {
        let critic = Critic::new(dims(), &mut ChaCha8Rng::seed_from_u64(3));
        let mut opt = Adam::new(0.02);
        let target = 0.73;
        let mut b = 0.0;
        for _ in 0..500 {
            let (bv, _) = critic_step(&critic, &inputs(), target, &mut opt, 5.0).unwrap();
            b = bv;
        }
        assert!((b - target).abs() < 0.05, "baseline {b} vs {target}");
    }
}
