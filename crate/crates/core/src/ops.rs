//! Differentiable tensor operations.
//!
//! Every op validates input shapes, computes its output as a fresh tensor
//! (no views, no aliasing), rejects non-finite results, and — when any input
//! requires gradients and a tape is active — records a backward closure.
//!
//! Shape conventions: vectors are `[n]`, matrices are row-major `[rows, cols]`.
//! Masks are *keep* flags: `true` marks a live element, `false` a padded one.

use crate::error::{Error, Result};
use crate::tape::record;
use crate::tensor::Tensor;

fn finish(
    op: &'static str,
    inputs: &[&Tensor],
    data: Vec<f64>,
    shape: Vec<usize>,
    backward: Box<dyn Fn(&[f64])>,
) -> Result<Tensor> {
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(op));
    }
    let out = Tensor::from_parts(data, shape, false, None);
    record(inputs, &out, backward);
    Ok(out)
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.shape(),
        rhs: rhs.shape(),
    }
}

/// Elementwise sum of two tensors of identical shape.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", a, b));
    }
    let data: Vec<f64> = {
        let (ad, bd) = (a.data(), b.data());
        ad.iter().zip(bd.iter()).map(|(x, y)| x + y).collect()
    };
    let (ac, bc) = (a.clone(), b.clone());
    finish(
        "add",
        &[a, b],
        data,
        a.shape(),
        Box::new(move |g| {
            if ac.requires_grad() {
                ac.accumulate_grad(g);
            }
            if bc.requires_grad() {
                bc.accumulate_grad(g);
            }
        }),
    )
}

/// Add a vector `[c]` to every row of a matrix `[r, c]`.
pub fn broadcast_add(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (ms, vs) = (m.shape(), v.shape());
    if ms.len() != 2 || vs.len() != 1 || ms[1] != vs[0] {
        return Err(shape_err("broadcast-add", m, v));
    }
    let (rows, cols) = (ms[0], ms[1]);
    let data: Vec<f64> = {
        let (md, vd) = (m.data(), v.data());
        (0..rows * cols).map(|i| md[i] + vd[i % cols]).collect()
    };
    let (mc, vc) = (m.clone(), v.clone());
    finish(
        "broadcast-add",
        &[m, v],
        data,
        ms,
        Box::new(move |g| {
            if mc.requires_grad() {
                mc.accumulate_grad(g);
            }
            if vc.requires_grad() {
                let mut gv = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        gv[c] += g[r * cols + c];
                    }
                }
                vc.accumulate_grad(&gv);
            }
        }),
    )
}

/// Elementwise (Hadamard) product of two tensors of identical shape.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("mul", a, b));
    }
    let data: Vec<f64> = {
        let (ad, bd) = (a.data(), b.data());
        ad.iter().zip(bd.iter()).map(|(x, y)| x * y).collect()
    };
    let (ac, bc) = (a.clone(), b.clone());
    finish(
        "mul",
        &[a, b],
        data,
        a.shape(),
        Box::new(move |g| {
            if ac.requires_grad() {
                let contrib: Vec<f64> = {
                    let bd = bc.data();
                    g.iter().zip(bd.iter()).map(|(gi, bi)| gi * bi).collect()
                };
                ac.accumulate_grad(&contrib);
            }
            if bc.requires_grad() {
                let contrib: Vec<f64> = {
                    let ad = ac.data();
                    g.iter().zip(ad.iter()).map(|(gi, ai)| gi * ai).collect()
                };
                bc.accumulate_grad(&contrib);
            }
        }),
    )
}

/// Multiply every element by a constant.
pub fn scalar_mul(a: &Tensor, c: f64) -> Result<Tensor> {
    if !c.is_finite() {
        return Err(Error::NonFinite("scalar-mul"));
    }
    let data: Vec<f64> = a.data().iter().map(|x| x * c).collect();
    let ac = a.clone();
    finish(
        "scalar-mul",
        &[a],
        data,
        a.shape(),
        Box::new(move |g| {
            let contrib: Vec<f64> = g.iter().map(|gi| gi * c).collect();
            ac.accumulate_grad(&contrib);
        }),
    )
}

/// Matrix product with 1-D promotion:
/// `[m,k]·[k,n] -> [m,n]`, `[k]·[k,n] -> [n]`, `[m,k]·[k] -> [m]`, `[k]·[k] -> [1]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ashape, bshape) = (a.shape(), b.shape());
    let (m, k1) = match ashape.as_slice() {
        [k] => (1, *k),
        [m, k] => (*m, *k),
        _ => return Err(shape_err("matmul", a, b)),
    };
    let (k2, n) = match bshape.as_slice() {
        [k] => (*k, 1),
        [k, n] => (*k, *n),
        _ => return Err(shape_err("matmul", a, b)),
    };
    if k1 != k2 {
        return Err(shape_err("matmul", a, b));
    }
    let k = k1;
    let mut out = vec![0.0; m * n];
    {
        let (ad, bd) = (a.data(), b.data());
        for i in 0..m {
            for p in 0..k {
                let aip = ad[i * k + p];
                let brow = &bd[p * n..p * n + n];
                let crow = &mut out[i * n..i * n + n];
                for j in 0..n {
                    crow[j] += aip * brow[j];
                }
            }
        }
    }
    let out_shape = match (ashape.len(), bshape.len()) {
        (1, 1) => vec![1],
        (1, 2) => vec![n],
        (2, 1) => vec![m],
        _ => vec![m, n],
    };
    let (ac, bc) = (a.clone(), b.clone());
    finish(
        "matmul",
        &[a, b],
        out,
        out_shape,
        Box::new(move |g| {
            if ac.requires_grad() {
                // dA = g · B^T
                let contrib: Vec<f64> = {
                    let bd = bc.data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..i * n + n];
                        for p in 0..k {
                            let brow = &bd[p * n..p * n + n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    da
                };
                ac.accumulate_grad(&contrib);
            }
            if bc.requires_grad() {
                // dB = A^T · g
                let contrib: Vec<f64> = {
                    let ad = ac.data();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..i * n + n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            let drow = &mut db[p * n..p * n + n];
                            for j in 0..n {
                                drow[j] += aip * grow[j];
                            }
                        }
                    }
                    db
                };
                bc.accumulate_grad(&contrib);
            }
        }),
    )
}

/// Elementwise hyperbolic tangent.
pub fn tanh(a: &Tensor) -> Result<Tensor> {
    let data: Vec<f64> = a.data().iter().map(|x| x.tanh()).collect();
    let saved = data.clone();
    let ac = a.clone();
    finish(
        "tanh",
        &[a],
        data,
        a.shape(),
        Box::new(move |g| {
            let contrib: Vec<f64> = g
                .iter()
                .zip(saved.iter())
                .map(|(gi, yi)| gi * (1.0 - yi * yi))
                .collect();
            ac.accumulate_grad(&contrib);
        }),
    )
}

/// Elementwise logistic sigmoid.
pub fn sigmoid(a: &Tensor) -> Result<Tensor> {
    let data: Vec<f64> = a.data().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
    let saved = data.clone();
    let ac = a.clone();
    finish(
        "sigmoid",
        &[a],
        data,
        a.shape(),
        Box::new(move |g| {
            let contrib: Vec<f64> = g
                .iter()
                .zip(saved.iter())
                .map(|(gi, yi)| gi * yi * (1.0 - yi))
                .collect();
            ac.accumulate_grad(&contrib);
        }),
    )
}

/// Elementwise exponential.
pub fn exp(a: &Tensor) -> Result<Tensor> {
    let data: Vec<f64> = a.data().iter().map(|x| x.exp()).collect();
    let saved = data.clone();
    let ac = a.clone();
    finish(
        "exp",
        &[a],
        data,
        a.shape(),
        Box::new(move |g| {
            let contrib: Vec<f64> = g
                .iter()
                .zip(saved.iter())
                .map(|(gi, yi)| gi * yi)
                .collect();
            ac.accumulate_grad(&contrib);
        }),
    )
}

fn softmax_rows(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &data[r * cols..r * cols + cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[r * cols..r * cols + cols];
        let mut sum = 0.0;
        for (o, x) in orow.iter_mut().zip(row) {
            *o = (x - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Softmax over the last axis: each row of a matrix (or the whole vector)
/// becomes a probability distribution.
pub fn softmax_last(a: &Tensor) -> Result<Tensor> {
    let shape = a.shape();
    let (rows, cols) = match shape.as_slice() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => {
            return Err(Error::InvalidArgument {
                op: "softmax",
                msg: format!("expected rank 1 or 2, got {shape:?}"),
            })
        }
    };
    if cols == 0 {
        return Err(Error::InvalidArgument {
            op: "softmax",
            msg: "empty axis".into(),
        });
    }
    let data = softmax_rows(&a.data(), rows, cols);
    let saved = data.clone();
    let ac = a.clone();
    finish(
        "softmax",
        &[a],
        data,
        shape,
        Box::new(move |g| {
            let mut contrib = vec![0.0; rows * cols];
            for r in 0..rows {
                let y = &saved[r * cols..r * cols + cols];
                let grow = &g[r * cols..r * cols + cols];
                let dot: f64 = grow.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                let crow = &mut contrib[r * cols..r * cols + cols];
                for j in 0..cols {
                    crow[j] = y[j] * (grow[j] - dot);
                }
            }
            ac.accumulate_grad(&contrib);
        }),
    )
}

/// Concatenate along the last axis: two vectors, or two matrices with the
/// same number of rows.
pub fn concat_last(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ashape, bshape) = (a.shape(), b.shape());
    match (ashape.as_slice(), bshape.as_slice()) {
        ([n1], [n2]) => {
            let mut data = a.to_vec();
            data.extend_from_slice(&b.data());
            let (n1, n2) = (*n1, *n2);
            let (ac, bc) = (a.clone(), b.clone());
            finish(
                "concat",
                &[a, b],
                data,
                vec![n1 + n2],
                Box::new(move |g| {
                    if ac.requires_grad() {
                        ac.accumulate_grad(&g[..n1]);
                    }
                    if bc.requires_grad() {
                        bc.accumulate_grad(&g[n1..n1 + n2]);
                    }
                }),
            )
        }
        ([r1, c1], [r2, c2]) if r1 == r2 => {
            let (rows, c1, c2) = (*r1, *c1, *c2);
            let cols = c1 + c2;
            let mut data = vec![0.0; rows * cols];
            {
                let (ad, bd) = (a.data(), b.data());
                for r in 0..rows {
                    data[r * cols..r * cols + c1].copy_from_slice(&ad[r * c1..r * c1 + c1]);
                    data[r * cols + c1..r * cols + cols]
                        .copy_from_slice(&bd[r * c2..r * c2 + c2]);
                }
            }
            let (ac, bc) = (a.clone(), b.clone());
            finish(
                "concat",
                &[a, b],
                data,
                vec![rows, cols],
                Box::new(move |g| {
                    if ac.requires_grad() {
                        let mut ga = vec![0.0; rows * c1];
                        for r in 0..rows {
                            ga[r * c1..r * c1 + c1]
                                .copy_from_slice(&g[r * cols..r * cols + c1]);
                        }
                        ac.accumulate_grad(&ga);
                    }
                    if bc.requires_grad() {
                        let mut gb = vec![0.0; rows * c2];
                        for r in 0..rows {
                            gb[r * c2..r * c2 + c2]
                                .copy_from_slice(&g[r * cols + c1..r * cols + cols]);
                        }
                        bc.accumulate_grad(&gb);
                    }
                }),
            )
        }
        _ => Err(shape_err("concat", a, b)),
    }
}

/// Stack vectors of identical length into a matrix, one row each.
pub fn stack_rows(rows: &[Tensor]) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument {
            op: "stack-rows",
            msg: "no rows".into(),
        });
    }
    let cols = rows[0].numel();
    for t in rows {
        if t.rank() != 1 || t.numel() != cols {
            return Err(Error::InvalidArgument {
                op: "stack-rows",
                msg: format!("expected vectors of length {cols}, got {:?}", t.shape()),
            });
        }
    }
    let mut data = Vec::with_capacity(rows.len() * cols);
    for t in rows {
        data.extend_from_slice(&t.data());
    }
    let saved: Vec<Tensor> = rows.to_vec();
    let refs: Vec<&Tensor> = rows.iter().collect();
    finish(
        "stack-rows",
        &refs,
        data,
        vec![rows.len(), cols],
        Box::new(move |g| {
            for (i, t) in saved.iter().enumerate() {
                if t.requires_grad() {
                    t.accumulate_grad(&g[i * cols..i * cols + cols]);
                }
            }
        }),
    )
}

/// Extract row `i` of a matrix as a vector.
pub fn row(m: &Tensor, i: usize) -> Result<Tensor> {
    let shape = m.shape();
    let [rows, cols] = shape.as_slice() else {
        return Err(Error::InvalidArgument {
            op: "row",
            msg: format!("expected a matrix, got {shape:?}"),
        });
    };
    let (rows, cols) = (*rows, *cols);
    if i >= rows {
        return Err(Error::InvalidArgument {
            op: "row",
            msg: format!("row {i} out of range for {rows} rows"),
        });
    }
    let data = m.data()[i * cols..i * cols + cols].to_vec();
    let mc = m.clone();
    finish(
        "row",
        &[m],
        data,
        vec![cols],
        Box::new(move |g| {
            let mut gm = vec![0.0; rows * cols];
            gm[i * cols..i * cols + cols].copy_from_slice(g);
            mc.accumulate_grad(&gm);
        }),
    )
}

/// Embedding lookup: rows of `table` selected by `ids`, stacked into `[L, d]`.
pub fn lookup_rows(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let shape = table.shape();
    let [vocab, d] = shape.as_slice() else {
        return Err(Error::InvalidArgument {
            op: "row-lookup",
            msg: format!("table must be a matrix, got {shape:?}"),
        });
    };
    let (vocab, d) = (*vocab, *d);
    if ids.is_empty() {
        return Err(Error::InvalidArgument {
            op: "row-lookup",
            msg: "no ids".into(),
        });
    }
    for &id in ids {
        if id >= vocab {
            return Err(Error::InvalidArgument {
                op: "row-lookup",
                msg: format!("id {id} out of range for vocabulary of {vocab}"),
            });
        }
    }
    let mut data = Vec::with_capacity(ids.len() * d);
    {
        let td = table.data();
        for &id in ids {
            data.extend_from_slice(&td[id * d..id * d + d]);
        }
    }
    let tc = table.clone();
    let ids_saved = ids.to_vec();
    let l = ids.len();
    finish(
        "row-lookup",
        &[table],
        data,
        vec![l, d],
        Box::new(move |g| {
            let mut gt = vec![0.0; vocab * d];
            for (i, &id) in ids_saved.iter().enumerate() {
                let dst = &mut gt[id * d..id * d + d];
                let src = &g[i * d..i * d + d];
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
            tc.accumulate_grad(&gt);
        }),
    )
}

/// Embedding lookup of a single id as a vector `[d]`.
pub fn lookup_row(table: &Tensor, id: usize) -> Result<Tensor> {
    let m = lookup_rows(table, &[id])?;
    row(&m, 0)
}

/// Replace elements whose keep flag is `false` with `fill`; gradients flow
/// only through kept elements.
pub fn masked_fill(a: &Tensor, keep: &[bool], fill: f64) -> Result<Tensor> {
    if keep.len() != a.numel() {
        return Err(Error::InvalidArgument {
            op: "masked-fill",
            msg: format!("mask length {} != {} elements", keep.len(), a.numel()),
        });
    }
    if !fill.is_finite() {
        return Err(Error::NonFinite("masked-fill"));
    }
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(keep)
        .map(|(x, &k)| if k { *x } else { fill })
        .collect();
    let ac = a.clone();
    let keep_saved = keep.to_vec();
    finish(
        "masked-fill",
        &[a],
        data,
        a.shape(),
        Box::new(move |g| {
            let contrib: Vec<f64> = g
                .iter()
                .zip(&keep_saved)
                .map(|(gi, &k)| if k { *gi } else { 0.0 })
                .collect();
            ac.accumulate_grad(&contrib);
        }),
    )
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum(a: &Tensor) -> Result<Tensor> {
    let total: f64 = a.data().iter().sum();
    let n = a.numel();
    let ac = a.clone();
    finish(
        "sum",
        &[a],
        vec![total],
        vec![1],
        Box::new(move |g| {
            ac.accumulate_grad(&vec![g[0]; n]);
        }),
    )
}

fn probs_matrix(op: &'static str, probs: &Tensor) -> Result<(usize, usize)> {
    let shape = probs.shape();
    match shape.as_slice() {
        [n] => Ok((1, *n)),
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::InvalidArgument {
            op,
            msg: format!("expected rank 1 or 2 probabilities, got {shape:?}"),
        }),
    }
}

/// Cross-entropy of probability rows against target indices: the mean of
/// `-log p[i, target_i]` over rows whose keep flag is `true`.
pub fn cross_entropy(probs: &Tensor, targets: &[usize], keep: &[bool]) -> Result<Tensor> {
    let (rows, cols) = probs_matrix("cross-entropy", probs)?;
    if targets.len() != rows || keep.len() != rows {
        return Err(Error::InvalidArgument {
            op: "cross-entropy",
            msg: format!(
                "{} targets / {} mask flags for {} rows",
                targets.len(),
                keep.len(),
                rows
            ),
        });
    }
    let count = keep.iter().filter(|&&k| k).count();
    if count == 0 {
        return Err(Error::InvalidArgument {
            op: "cross-entropy",
            msg: "all rows masked".into(),
        });
    }
    let mut total = 0.0;
    {
        let pd = probs.data();
        for i in 0..rows {
            if !keep[i] {
                continue;
            }
            let t = targets[i];
            if t >= cols {
                return Err(Error::InvalidArgument {
                    op: "cross-entropy",
                    msg: format!("target {t} out of range for {cols} classes"),
                });
            }
            let p = pd[i * cols + t];
            if p <= 0.0 {
                return Err(Error::NonFinite("cross-entropy"));
            }
            total -= p.ln();
        }
    }
    let loss = total / count as f64;
    let pc = probs.clone();
    let targets_saved = targets.to_vec();
    let keep_saved = keep.to_vec();
    finish(
        "cross-entropy",
        &[probs],
        vec![loss],
        vec![1],
        Box::new(move |g| {
            let contrib: Vec<f64> = {
                let pd = pc.data();
                let mut c = vec![0.0; rows * cols];
                for i in 0..rows {
                    if !keep_saved[i] {
                        continue;
                    }
                    let t = targets_saved[i];
                    c[i * cols + t] = -g[0] / (count as f64 * pd[i * cols + t]);
                }
                c
            };
            pc.accumulate_grad(&contrib);
        }),
    )
}

/// Weighted negative log-likelihood: `sum_i -w_i * log p[i, target_i]`.
///
/// With unit weights this is the summed sequence log-likelihood (negated);
/// with advantage weights it is the REINFORCE surrogate loss.
pub fn nll_weighted(probs: &Tensor, targets: &[usize], weights: &[f64]) -> Result<Tensor> {
    let (rows, cols) = probs_matrix("nll", probs)?;
    if targets.len() != rows || weights.len() != rows {
        return Err(Error::InvalidArgument {
            op: "nll",
            msg: format!(
                "{} targets / {} weights for {} rows",
                targets.len(),
                weights.len(),
                rows
            ),
        });
    }
    let mut total = 0.0;
    {
        let pd = probs.data();
        for i in 0..rows {
            let t = targets[i];
            if t >= cols {
                return Err(Error::InvalidArgument {
                    op: "nll",
                    msg: format!("target {t} out of range for {cols} classes"),
                });
            }
            let p = pd[i * cols + t];
            if p <= 0.0 {
                return Err(Error::NonFinite("nll"));
            }
            total -= weights[i] * p.ln();
        }
    }
    let pc = probs.clone();
    let targets_saved = targets.to_vec();
    let weights_saved = weights.to_vec();
    finish(
        "nll",
        &[probs],
        vec![total],
        vec![1],
        Box::new(move |g| {
            let contrib: Vec<f64> = {
                let pd = pc.data();
                let mut c = vec![0.0; rows * cols];
                for i in 0..rows {
                    let t = targets_saved[i];
                    c[i * cols + t] = -g[0] * weights_saved[i] / pd[i * cols + t];
                }
                c
            };
            pc.accumulate_grad(&contrib);
        }),
    )
}

/// Mean squared error between two tensors of identical shape
/// (mean over elements; for single elements this is the squared error).
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("mse", a, b));
    }
    let n = a.numel() as f64;
    let loss: f64 = {
        let (ad, bd) = (a.data(), b.data());
        ad.iter()
            .zip(bd.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n
    };
    let (ac, bc) = (a.clone(), b.clone());
    finish(
        "mse",
        &[a, b],
        vec![loss],
        vec![1],
        Box::new(move |g| {
            let diff: Vec<f64> = {
                let (ad, bd) = (ac.data(), bc.data());
                ad.iter()
                    .zip(bd.iter())
                    .map(|(x, y)| 2.0 * (x - y) / n * g[0])
                    .collect()
            };
            if ac.requires_grad() {
                ac.accumulate_grad(&diff);
            }
            if bc.requires_grad() {
                let neg: Vec<f64> = diff.iter().map(|d| -d).collect();
                bc.accumulate_grad(&neg);
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn tanh_at_origin_is_zero() {
        let x = Tensor::new(vec![0.0], &[1]).unwrap();
        assert_eq!(tanh(&x).unwrap().to_vec(), vec![0.0]);
    }

    #[test]
    fn softmax_of_equal_scores_is_uniform() {
        let x = Tensor::new(vec![0.0, 0.0, 0.0], &[3]).unwrap();
        let y = softmax_last(&x).unwrap();
        assert_close(&y.to_vec(), &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn matmul_of_ones() {
        let a = Tensor::new(vec![1.0; 6], &[2, 3]).unwrap();
        let b = Tensor::new(vec![1.0; 6], &[3, 2]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), vec![2, 2]);
        assert_close(&c.to_vec(), &[3.0; 4], 1e-15);
    }

    #[test]
    fn matmul_shape_mismatch_names_op_and_shapes() {
        let a = Tensor::new(vec![1.0; 6], &[2, 3]).unwrap();
        let b = Tensor::new(vec![1.0; 4], &[2, 2]).unwrap();
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[2, 2]"));
    }

    #[test]
    fn matmul_vector_promotions() {
        let v = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let m = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        assert_eq!(matmul(&v, &m).unwrap().shape(), vec![2]);
        assert_eq!(matmul(&m, &v).unwrap().shape(), vec![2]);
        let dot = matmul(&v, &v).unwrap();
        assert_eq!(dot.shape(), vec![1]);
        assert_eq!(dot.item(), 5.0);
    }

    #[test]
    fn backward_through_tanh_at_origin() {
        let tape = Tape::new();
        let x = Tensor::param("x", vec![0.0], &[1]).unwrap();
        let loss = {
            let _g = tape.activate();
            sum(&tanh(&x).unwrap()).unwrap()
        };
        tape.backward(&loss).unwrap();
        assert_close(&x.grad().unwrap(), &[1.0], 1e-15);
    }

    #[test]
    fn backward_mse_against_zero() {
        let tape = Tape::new();
        let w = Tensor::param("w", vec![3.0], &[1]).unwrap();
        let zero = Tensor::scalar(0.0);
        let loss = {
            let _g = tape.activate();
            mse(&w, &zero).unwrap()
        };
        assert_eq!(loss.item(), 9.0);
        tape.backward(&loss).unwrap();
        // mean over the single element: d/dw (w - 0)^2 = 2w = 6
        assert_close(&w.grad().unwrap(), &[6.0], 1e-15);
    }

    #[test]
    fn softmax_cross_entropy_grad_is_probs_minus_onehot() {
        let tape = Tape::new();
        let z = Tensor::param("z", vec![0.3, -1.2, 0.8], &[3]).unwrap();
        let loss = {
            let _g = tape.activate();
            let p = softmax_last(&z).unwrap();
            cross_entropy(&p, &[2], &[true]).unwrap()
        };
        tape.backward(&loss).unwrap();
        let p = softmax_rows(&z.to_vec(), 1, 3);
        let expected = [p[0], p[1], p[2] - 1.0];
        assert_close(&z.grad().unwrap(), &expected, 1e-12);
    }

    #[test]
    fn diamond_graph_accumulates() {
        // loss = sum(x*x + x) -> dloss/dx = 2x + 1
        let tape = Tape::new();
        let x = Tensor::param("x", vec![0.7], &[1]).unwrap();
        let loss = {
            let _g = tape.activate();
            let sq = mul(&x, &x).unwrap();
            sum(&add(&sq, &x).unwrap()).unwrap()
        };
        tape.backward(&loss).unwrap();
        assert_close(&x.grad().unwrap(), &[2.0 * 0.7 + 1.0], 1e-12);
    }

    #[test]
    fn masked_fill_zeroes_gradient_on_filled() {
        let tape = Tape::new();
        let x = Tensor::param("x", vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let loss = {
            let _g = tape.activate();
            sum(&masked_fill(&x, &[true, false, true], -5.0).unwrap()).unwrap()
        };
        tape.backward(&loss).unwrap();
        assert_close(&x.grad().unwrap(), &[1.0, 0.0, 1.0], 1e-15);
    }

    #[test]
    fn lookup_grad_touches_only_used_rows() {
        let tape = Tape::new();
        let table = Tensor::param("emb", vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[3, 2]).unwrap();
        let loss = {
            let _g = tape.activate();
            sum(&lookup_rows(&table, &[2]).unwrap()).unwrap()
        };
        tape.backward(&loss).unwrap();
        assert_close(&table.grad().unwrap(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0], 1e-15);
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let x = Tensor::new(vec![0.3, -0.4, 0.9], &[3]).unwrap();
            let w = Tensor::new(vec![0.7, 0.1, -0.2, 0.5, 0.05, -0.9], &[3, 2]).unwrap();
            let y = tanh(&matmul(&x, &w).unwrap()).unwrap();
            softmax_last(&y).unwrap().to_vec()
        };
        assert_eq!(run(), run());
    }
}
