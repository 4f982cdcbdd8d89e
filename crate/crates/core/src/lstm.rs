//! Single-layer LSTM cell and masked sequence encoding, plus the shared
//! linear-layer and initialization helpers the model modules build on.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| (2.0 * rng.random::<f64>() - 1.0) * scale).collect()
}

/// Affine map `y = x W + b` with `W: [input, output]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(prefix: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Linear {
        let scale = 1.0 / (input as f64).sqrt();
        Linear {
            w: Tensor::param(
                &format!("{prefix}.w"),
                uniform_init(rng, input * output, scale),
                &[input, output],
            )
            .expect("finite init"),
            b: Tensor::param(&format!("{prefix}.b"), vec![0.0; output], &[output])
                .expect("finite init"),
        }
    }

    /// All-zero weights; used for value heads that must start at zero output.
    pub fn zeros(prefix: &str, input: usize, output: usize) -> Linear {
        Linear {
            w: Tensor::param(&format!("{prefix}.w"), vec![0.0; input * output], &[input, output])
                .expect("finite init"),
            b: Tensor::param(&format!("{prefix}.b"), vec![0.0; output], &[output])
                .expect("finite init"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = ops::matmul(x, &self.w)?;
        match y.rank() {
            1 => ops::add(&y, &self.b),
            _ => ops::broadcast_add(&y, &self.b),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![self.w.clone(), self.b.clone()]
    }
}

/// Weights of a single-layer LSTM: per-gate input and recurrent matrices
/// plus biases. The forget-gate bias starts at 1.0.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_i: Tensor,
    u_i: Tensor,
    b_i: Tensor,
    w_f: Tensor,
    u_f: Tensor,
    b_f: Tensor,
    w_g: Tensor,
    u_g: Tensor,
    b_g: Tensor,
    w_o: Tensor,
    u_o: Tensor,
    b_o: Tensor,
}

impl LstmParams {
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        let mat = |rng: &mut ChaCha8Rng, name: &str, rows: usize| {
            Tensor::param(
                &format!("{prefix}.{name}"),
                uniform_init(rng, rows * hidden_dim, scale),
                &[rows, hidden_dim],
            )
            .expect("finite init")
        };
        let bias = |name: &str, value: f64| {
            Tensor::param(
                &format!("{prefix}.{name}"),
                vec![value; hidden_dim],
                &[hidden_dim],
            )
            .expect("finite init")
        };
        LstmParams {
            input_dim,
            hidden_dim,
            w_i: mat(rng, "w_i", input_dim),
            u_i: mat(rng, "u_i", hidden_dim),
            b_i: bias("b_i", 0.0),
            w_f: mat(rng, "w_f", input_dim),
            u_f: mat(rng, "u_f", hidden_dim),
            b_f: bias("b_f", 1.0),
            w_g: mat(rng, "w_g", input_dim),
            u_g: mat(rng, "u_g", hidden_dim),
            b_g: bias("b_g", 0.0),
            w_o: mat(rng, "w_o", input_dim),
            u_o: mat(rng, "u_o", hidden_dim),
            b_o: bias("b_o", 0.0),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![
            self.w_i.clone(),
            self.u_i.clone(),
            self.b_i.clone(),
            self.w_f.clone(),
            self.u_f.clone(),
            self.b_f.clone(),
            self.w_g.clone(),
            self.u_g.clone(),
            self.b_g.clone(),
            self.w_o.clone(),
            self.u_o.clone(),
            self.b_o.clone(),
        ]
    }

    pub fn zero_state(&self) -> (Tensor, Tensor) {
        (
            Tensor::zeros(&[self.hidden_dim]),
            Tensor::zeros(&[self.hidden_dim]),
        )
    }

    fn gate(&self, x: &Tensor, h: &Tensor, w: &Tensor, u: &Tensor, b: &Tensor) -> Result<Tensor> {
        let xs = ops::matmul(x, w)?;
        let hs = ops::matmul(h, u)?;
        ops::add(&ops::add(&xs, &hs)?, b)
    }

    /// One LSTM step on an input vector `[input_dim]`.
    pub fn step(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let i = ops::sigmoid(&self.gate(x, h, &self.w_i, &self.u_i, &self.b_i)?)?;
        let f = ops::sigmoid(&self.gate(x, h, &self.w_f, &self.u_f, &self.b_f)?)?;
        let g = ops::tanh(&self.gate(x, h, &self.w_g, &self.u_g, &self.b_g)?)?;
        let o = ops::sigmoid(&self.gate(x, h, &self.w_o, &self.u_o, &self.b_o)?)?;
        let c_next = ops::add(&ops::mul(&f, c)?, &ops::mul(&i, &g)?)?;
        let h_next = ops::mul(&o, &ops::tanh(&c_next)?)?;
        Ok((h_next, c_next))
    }
}

/// Per-step hidden states and the final (last unmasked) state.
pub struct LstmEncoding {
    pub hiddens: Vec<Tensor>,
    pub final_state: Tensor,
}

/// Run an LSTM over embedded inputs `[L, input_dim]`. Masked steps carry the
/// previous state through unchanged, so trailing padding cannot alter any
/// returned value.
pub fn lstm_encode(params: &LstmParams, inputs: &Tensor, mask: &[bool]) -> Result<LstmEncoding> {
    let shape = inputs.shape();
    let [len, dim] = shape.as_slice() else {
        return Err(Error::InvalidArgument {
            op: "lstm-encode",
            msg: format!("expected [L, input_dim], got {shape:?}"),
        });
    };
    if *dim != params.input_dim {
        return Err(Error::InvalidArgument {
            op: "lstm-encode",
            msg: format!("input dim {} != {}", dim, params.input_dim),
        });
    }
    if mask.len() != *len {
        return Err(Error::InvalidArgument {
            op: "lstm-encode",
            msg: format!("mask length {} != {len}", mask.len()),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument {
            op: "lstm-encode",
            msg: "all steps masked".into(),
        });
    }
    let (mut h, mut c) = params.zero_state();
    let mut hiddens = Vec::with_capacity(*len);
    let mut final_state = h.clone();
    for k in 0..*len {
        if mask[k] {
            let x = ops::row(inputs, k)?;
            let (h2, c2) = params.step(&x, &h, &c)?;
            h = h2;
            c = c2;
            final_state = h.clone();
        }
        hiddens.push(h.clone());
    }
    Ok(LstmEncoding {
        hiddens,
        final_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::ops;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn embed(rows: usize, dim: usize, seed: u64) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(uniform_init(&mut r, rows * dim, 0.8), &[rows, dim]).unwrap()
    }

    #[test]
    fn length_one_final_state_equals_step_one() {
        let lstm = LstmParams::new("t", 3, 4, &mut rng());
        let x = embed(1, 3, 1);
        let enc = lstm_encode(&lstm, &x, &[true]).unwrap();
        assert_eq!(enc.hiddens.len(), 1);
        assert_eq!(enc.hiddens[0].to_vec(), enc.final_state.to_vec());
    }

    #[test]
    fn padding_does_not_change_final_state() {
        let lstm = LstmParams::new("t", 3, 4, &mut rng());
        let x = embed(2, 3, 2);
        let short = lstm_encode(&lstm, &x, &[true, true]).unwrap();

        let mut padded_data = x.to_vec();
        padded_data.extend_from_slice(&[9.0, 9.0, 9.0, -9.0, -9.0, -9.0]);
        let padded = Tensor::new(padded_data, &[4, 3]).unwrap();
        let long = lstm_encode(&lstm, &padded, &[true, true, false, false]).unwrap();

        assert_eq!(short.final_state.to_vec(), long.final_state.to_vec());
    }

    #[test]
    fn all_masked_rejected() {
        let lstm = LstmParams::new("t", 3, 4, &mut rng());
        let x = embed(2, 3, 3);
        assert!(lstm_encode(&lstm, &x, &[false, false]).is_err());
    }

    #[test]
    fn three_step_lstm_passes_gradient_check() {
        let lstm = LstmParams::new("t", 2, 3, &mut rng());
        let x = Tensor::param("x", embed(3, 2, 4).to_vec(), &[3, 2]).unwrap();
        let mut point = vec![x.clone()];
        point.extend(lstm.parameters());
        let err = grad_check(
            |_| {
                let enc = lstm_encode(&lstm, &x, &[true, true, true])?;
                ops::sum(&ops::tanh(&enc.final_state)?)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn linear_zeros_head_outputs_zero() {
        let head = Linear::zeros("h", 4, 1);
        let x = Tensor::new(vec![0.3, -0.7, 1.1, 0.2], &[4]).unwrap();
        assert_eq!(head.forward(&x).unwrap().to_vec(), vec![0.0]);
    }
}
