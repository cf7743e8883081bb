//! Tape-based reverse-mode differentiation over coarse layer ops.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Lower/upper clamp applied to logistic outputs.
pub const PROB_EPS: f64 = 1e-7;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node in one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running statistics owned by a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<F> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
}

enum Op<F> {
    Leaf,
    Embedding {
        table: usize,
        indices: Vec<u8>,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        width: usize,
    },
    Relu {
        x: usize,
    },
    MaskedPool {
        x: usize,
        mask: Vec<bool>,
        /// Per-sample divisor; 1 for sum pooling.
        scale: Vec<F>,
    },
    Concat {
        parts: Vec<usize>,
    },
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    SparseDense {
        rows: Vec<Vec<(u32, F)>>,
        w: usize,
        b: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        mode: Mode,
    },
    Sigmoid {
        x: usize,
    },
    Bce {
        p: usize,
        target: Vec<F>,
    },
    WeightedSum {
        x: usize,
        coeffs: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records a forward pass so that [`Graph::backward`] can replay it in reverse.
pub struct Graph<F> {
    id: u64,
    nodes: Vec<Node<F>>,
}

/// Gradients of a scalar loss with respect to every node that requires them.
pub struct Gradients<F> {
    graph: u64,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get_mut(v.index).and_then(|g| g.take())
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: impl Into<String>) -> NnError {
    NnError::Shape(msg.into())
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn idx(&self, v: Var) -> Result<usize, NnError> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(NnError::Detached);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[self.idx(v).expect("variable from another graph")].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Looks up rows of `table: [rows, dim]` for a `[batch, time]` index grid.
    pub fn embedding(&mut self, table: Var, indices: &[u8], batch: usize, time: usize) -> Result<Var, NnError> {
        let ti = self.idx(table)?;
        let t = &self.nodes[ti].value;
        if t.shape().len() != 2 {
            return Err(shape_err("embedding table must be 2-D"));
        }
        if indices.len() != batch * time {
            return Err(shape_err(format!(
                "{} indices for a {}x{} grid",
                indices.len(),
                batch,
                time
            )));
        }
        let (rows, dim) = (t.dim(0), t.dim(1));
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            let i = i as usize;
            if i >= rows {
                return Err(NnError::IndexOutOfRange { index: i, rows });
            }
            out.extend_from_slice(&t.data()[i * dim..(i + 1) * dim]);
        }
        let value = Tensor::new(vec![batch, time, dim], out)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table: ti,
                indices: indices.to_vec(),
            },
            &[ti],
        ))
    }

    /// Valid convolution of `x: [batch, time, c_in]` with `w: [width, c_in, c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (xs, ws, bs) = (
            self.nodes[xi].value.shape(),
            self.nodes[wi].value.shape(),
            self.nodes[bi].value.shape(),
        );
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] || bs != [ws[2]] {
            return Err(shape_err(format!("conv1d: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (batch, time, c_in) = (xs[0], xs[1], xs[2]);
        let (width, c_out) = (ws[0], ws[2]);
        if time < width {
            return Err(NnError::TooShort { len: time, width });
        }
        let out = kernels::conv1d_forward_batch(
            self.nodes[xi].value.data(),
            batch,
            time,
            c_in,
            self.nodes[wi].value.data(),
            width,
            c_out,
            self.nodes[bi].value.data(),
        );
        let value = Tensor::new(vec![batch, time + 1 - width, c_out], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                x: xi,
                w: wi,
                b: bi,
                width,
            },
            &[xi, wi, bi],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        let xi = self.idx(x)?;
        let src = &self.nodes[xi].value;
        let data = src.data().iter().map(|v| v.max(F::zero())).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Relu { x: xi }, &[xi]))
    }

    fn masked_pool(&mut self, x: Var, mask: &[bool], mean: bool) -> Result<Var, NnError> {
        let xi = self.idx(x)?;
        let xs = self.nodes[xi].value.shape().to_vec();
        if xs.len() != 3 || mask.len() != xs[0] * xs[1] {
            return Err(shape_err(format!("pool: x {:?}, mask {}", xs, mask.len())));
        }
        let (batch, time, ch) = (xs[0], xs[1], xs[2]);
        let mut out = vec![F::zero(); batch * ch];
        let mut scale = Vec::with_capacity(batch);
        let data = self.nodes[xi].value.data();
        for b in 0..batch {
            let m = &mask[b * time..(b + 1) * time];
            let count = m.iter().filter(|v| **v).count();
            if count == 0 {
                return Err(NnError::EmptyPoolingWindow);
            }
            let o = &mut out[b * ch..(b + 1) * ch];
            kernels::masked_column_sum(&data[b * time * ch..(b + 1) * time * ch], ch, m, o);
            let s = if mean {
                F::one() / F::from_usize(count).unwrap()
            } else {
                F::one()
            };
            if mean {
                o.iter_mut().for_each(|v| *v *= s);
            }
            scale.push(s);
        }
        let value = Tensor::new(vec![batch, ch], out)?;
        Ok(self.push(
            value,
            Op::MaskedPool {
                x: xi,
                mask: mask.to_vec(),
                scale,
            },
            &[xi],
        ))
    }

    /// Sum over the time axis of valid positions: `[batch, time, c] -> [batch, c]`.
    pub fn masked_sum(&mut self, x: Var, mask: &[bool]) -> Result<Var, NnError> {
        self.masked_pool(x, mask, false)
    }

    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var, NnError> {
        self.masked_pool(x, mask, true)
    }

    /// Concatenates `[batch, c_i]` tensors along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let idx: Vec<usize> = parts.iter().map(|p| self.idx(*p)).collect::<Result<_, _>>()?;
        let first = idx.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let batch = self.nodes[*first].value.dim(0);
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            if s.len() != 2 || s[0] != batch {
                return Err(shape_err(format!("concat part {s:?}")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for (&i, &w) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[i].value.data()[b * w..(b + 1) * w]);
            }
        }
        let value = Tensor::new(vec![batch, total], out)?;
        Ok(self.push(value, Op::Concat { parts: idx.clone() }, &idx))
    }

    /// Affine map `x: [batch, d_in]`, `w: [d_in, d_out]`, `b: [d_out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (xs, ws, bs) = (
            self.nodes[xi].value.shape(),
            self.nodes[wi].value.shape(),
            self.nodes[bi].value.shape(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(shape_err(format!("dense: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (rows, d_in, d_out) = (xs[0], xs[1], ws[1]);
        let out = kernels::dense_forward(
            self.nodes[xi].value.data(),
            rows,
            d_in,
            self.nodes[wi].value.data(),
            d_out,
            self.nodes[bi].value.data(),
        );
        let value = Tensor::new(vec![rows, d_out], out)?;
        Ok(self.push(value, Op::Dense { x: xi, w: wi, b: bi }, &[xi, wi, bi]))
    }

    /// Affine map over sparse `(column, value)` rows.
    pub fn sparse_dense(&mut self, rows: Vec<Vec<(u32, F)>>, w: Var, b: Var) -> Result<Var, NnError> {
        let (wi, bi) = (self.idx(w)?, self.idx(b)?);
        let ws = self.nodes[wi].value.shape();
        if ws.len() != 2 || self.nodes[bi].value.shape() != [ws[1]] {
            return Err(shape_err(format!("sparse_dense: w {ws:?}")));
        }
        let (d_in, d_out) = (ws[0], ws[1]);
        let wd = self.nodes[wi].value.data();
        let bd = self.nodes[bi].value.data();
        let mut out = Vec::with_capacity(rows.len() * d_out);
        for row in &rows {
            let start = out.len();
            out.extend_from_slice(bd);
            let o = &mut out[start..];
            for &(c, v) in row {
                let c = c as usize;
                if c >= d_in {
                    return Err(NnError::IndexOutOfRange { index: c, rows: d_in });
                }
                for (ov, wv) in o.iter_mut().zip(&wd[c * d_out..(c + 1) * d_out]) {
                    *ov += v * *wv;
                }
            }
        }
        let value = Tensor::new(vec![rows.len(), d_out], out)?;
        Ok(self.push(value, Op::SparseDense { rows, w: wi, b: bi }, &[wi, bi]))
    }

    /// Batch normalization over `[batch, features]`. Train mode uses batch
    /// statistics and updates `stats`; infer mode normalizes by `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<F>,
        mode: Mode,
    ) -> Result<Var, NnError> {
        let (xi, gi, bi) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        if xs.len() != 2 {
            return Err(shape_err("batch norm expects [batch, features]"));
        }
        let (rows, d) = (xs[0], xs[1]);
        if self.nodes[gi].value.shape() != [d]
            || self.nodes[bi].value.shape() != [d]
            || stats.mean.shape() != [d]
            || stats.var.shape() != [d]
        {
            return Err(shape_err("batch norm parameter shapes"));
        }
        let eps = F::from_f64_lossy(BN_EPS);
        let xd = self.nodes[xi].value.data();
        let (mean, var) = match mode {
            Mode::Train => {
                if rows < 2 {
                    return Err(NnError::BatchTooSmall);
                }
                let n = F::from_usize(rows).unwrap();
                let mut mean = vec![F::zero(); d];
                for r in 0..rows {
                    for j in 0..d {
                        mean[j] += xd[r * d + j];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![F::zero(); d];
                for r in 0..rows {
                    for j in 0..d {
                        let c = xd[r * d + j] - mean[j];
                        var[j] += c * c;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                let mom = F::from_f64_lossy(BN_MOMENTUM);
                let unbias = n / (n - F::one());
                for j in 0..d {
                    let rm = &mut stats.mean.data_mut()[j];
                    *rm = (F::one() - mom) * *rm + mom * mean[j];
                    let rv = &mut stats.var.data_mut()[j];
                    *rv = (F::one() - mom) * *rv + mom * var[j] * unbias;
                }
                (mean, var)
            }
            Mode::Infer => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
        };
        let inv_std: Vec<F> = var.iter().map(|v| F::one() / (*v + eps).sqrt()).collect();
        let g = self.nodes[gi].value.data();
        let be = self.nodes[bi].value.data();
        let mut xhat = vec![F::zero(); rows * d];
        let mut out = vec![F::zero(); rows * d];
        for r in 0..rows {
            for j in 0..d {
                let h = (xd[r * d + j] - mean[j]) * inv_std[j];
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + be[j];
            }
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
                mode,
            },
            &[xi, gi, bi],
        ))
    }

    /// Logistic function clamped to `(PROB_EPS, 1 - PROB_EPS)`.
    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NnError> {
        let xi = self.idx(x)?;
        let eps = F::from_f64_lossy(PROB_EPS);
        let src = &self.nodes[xi].value;
        let data = src.data().iter().map(|v| kernels::sigmoid(*v, eps)).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Sigmoid { x: xi }, &[xi]))
    }

    /// Mean binary cross-entropy between probabilities `p` and binary `target`.
    pub fn bce(&mut self, p: Var, target: &Tensor<F>) -> Result<Var, NnError> {
        let pi = self.idx(p)?;
        let pv = &self.nodes[pi].value;
        if pv.shape() != target.shape() {
            return Err(shape_err(format!(
                "bce: p {:?} vs target {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        let loss = bce_value(pv.data(), target.data());
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p: pi,
                target: target.data().to_vec(),
            },
            &[pi],
        ))
    }

    /// `sum(x * coeffs)`; a generic scalar head, mostly for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, coeffs: &[F]) -> Result<Var, NnError> {
        let xi = self.idx(x)?;
        let xv = &self.nodes[xi].value;
        if xv.len() != coeffs.len() {
            return Err(shape_err("weighted_sum coefficient count"));
        }
        let s = xv.data().iter().zip(coeffs).map(|(a, b)| *a * *b).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x: xi,
                coeffs: coeffs.to_vec(),
            },
            &[xi],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, NnError> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(shape_err("backward needs a scalar loss"));
        }
        if !self.nodes[li].requires_grad {
            return Err(NnError::Detached);
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor::scalar(F::one()));

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let acc = |target: usize, t: Tensor<F>, grads: &mut Vec<Option<Tensor<F>>>| {
                if !self.nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Embedding { table, indices } => {
                    let tv = &self.nodes[*table].value;
                    let dim = tv.dim(1);
                    let mut dt = Tensor::zeros(tv.shape().to_vec());
                    let gd = g.data();
                    let dd = dt.data_mut();
                    for (p, &ix) in indices.iter().enumerate() {
                        let ix = ix as usize;
                        for k in 0..dim {
                            dd[ix * dim + k] += gd[p * dim + k];
                        }
                    }
                    acc(*table, dt, &mut grads);
                }
                Op::Conv1d { x, w, b, width } => {
                    let xs = self.nodes[*x].value.shape();
                    let c_out = self.nodes[*w].value.dim(2);
                    let (dx, dw, db) = kernels::conv1d_backward_batch(
                        self.nodes[*x].value.data(),
                        xs[0],
                        xs[1],
                        xs[2],
                        self.nodes[*w].value.data(),
                        *width,
                        c_out,
                        g.data(),
                    );
                    acc(*x, Tensor::new(xs.to_vec(), dx)?, &mut grads);
                    acc(*w, Tensor::new(self.nodes[*w].value.shape().to_vec(), dw)?, &mut grads);
                    acc(*b, Tensor::new(vec![c_out], db)?, &mut grads);
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[*x].value;
                    let data = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(a, gv)| if *a > F::zero() { *gv } else { F::zero() })
                        .collect();
                    acc(*x, Tensor::new(xv.shape().to_vec(), data)?, &mut grads);
                }
                Op::MaskedPool { x, mask, scale } => {
                    let xs = self.nodes[*x].value.shape();
                    let (batch, time, ch) = (xs[0], xs[1], xs[2]);
                    let mut dx = vec![F::zero(); batch * time * ch];
                    let gd = g.data();
                    for b in 0..batch {
                        for t in 0..time {
                            if mask[b * time + t] {
                                let o = (b * time + t) * ch;
                                for c in 0..ch {
                                    dx[o + c] = gd[b * ch + c] * scale[b];
                                }
                            }
                        }
                    }
                    acc(*x, Tensor::new(xs.to_vec(), dx)?, &mut grads);
                }
                Op::Concat { parts } => {
                    let batch = g.dim(0);
                    let total = g.dim(1);
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.dim(1);
                        let mut d = Vec::with_capacity(batch * w);
                        for b in 0..batch {
                            d.extend_from_slice(&g.data()[b * total + offset..b * total + offset + w]);
                        }
                        acc(p, Tensor::new(vec![batch, w], d)?, &mut grads);
                        offset += w;
                    }
                }
                Op::Dense { x, w, b } => {
                    let xs = self.nodes[*x].value.shape();
                    let d_out = self.nodes[*w].value.dim(1);
                    let (dx, dw, db) = kernels::dense_backward(
                        self.nodes[*x].value.data(),
                        xs[0],
                        xs[1],
                        self.nodes[*w].value.data(),
                        d_out,
                        g.data(),
                    );
                    acc(*x, Tensor::new(xs.to_vec(), dx)?, &mut grads);
                    acc(*w, Tensor::new(vec![xs[1], d_out], dw)?, &mut grads);
                    acc(*b, Tensor::new(vec![d_out], db)?, &mut grads);
                }
                Op::SparseDense { rows, w, b } => {
                    let ws = self.nodes[*w].value.shape().to_vec();
                    let d_out = ws[1];
                    let mut dw = Tensor::zeros(ws);
                    let mut db = vec![F::zero(); d_out];
                    let gd = g.data();
                    for (r, row) in rows.iter().enumerate() {
                        let gr = &gd[r * d_out..(r + 1) * d_out];
                        for (dbv, gv) in db.iter_mut().zip(gr) {
                            *dbv += *gv;
                        }
                        let dwd = dw.data_mut();
                        for &(c, v) in row {
                            let c = c as usize;
                            for (k, gv) in gr.iter().enumerate() {
                                dwd[c * d_out + k] += v * *gv;
                            }
                        }
                    }
                    acc(*w, dw, &mut grads);
                    acc(*b, Tensor::new(vec![d_out], db)?, &mut grads);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    mode,
                } => {
                    let xs = self.nodes[*x].value.shape();
                    let (rows, d) = (xs[0], xs[1]);
                    let gd = g.data();
                    let gam = self.nodes[*gamma].value.data();
                    let mut dgamma = vec![F::zero(); d];
                    let mut dbeta = vec![F::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dgamma[j] += gd[r * d + j] * xhat[r * d + j];
                            dbeta[j] += gd[r * d + j];
                        }
                    }
                    let mut dx = vec![F::zero(); rows * d];
                    match mode {
                        Mode::Train => {
                            let n = F::from_usize(rows).unwrap();
                            for r in 0..rows {
                                for j in 0..d {
                                    let k = r * d + j;
                                    dx[k] = gam[j] * inv_std[j] / n * (n * gd[k] - dbeta[j] - xhat[k] * dgamma[j]);
                                }
                            }
                        }
                        Mode::Infer => {
                            for r in 0..rows {
                                for j in 0..d {
                                    let k = r * d + j;
                                    dx[k] = gd[k] * gam[j] * inv_std[j];
                                }
                            }
                        }
                    }
                    acc(*x, Tensor::new(xs.to_vec(), dx)?, &mut grads);
                    acc(*gamma, Tensor::new(vec![d], dgamma)?, &mut grads);
                    acc(*beta, Tensor::new(vec![d], dbeta)?, &mut grads);
                }
                Op::Sigmoid { x } => {
                    let p = &node.value;
                    let data = p
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(pv, gv)| *gv * *pv * (F::one() - *pv))
                        .collect();
                    acc(*x, Tensor::new(p.shape().to_vec(), data)?, &mut grads);
                }
                Op::Bce { p, target } => {
                    let pv = &self.nodes[*p].value;
                    let n = F::from_usize(pv.len()).unwrap();
                    let scale = g.data()[0] / n;
                    let data = pv
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(pp, y)| scale * (*pp - *y) / (*pp * (F::one() - *pp)))
                        .collect();
                    acc(*p, Tensor::new(pv.shape().to_vec(), data)?, &mut grads);
                }
                Op::WeightedSum { x, coeffs } => {
                    let s = g.data()[0];
                    let xv = &self.nodes[*x].value;
                    let data = coeffs.iter().map(|c| *c * s).collect();
                    acc(*x, Tensor::new(xv.shape().to_vec(), data)?, &mut grads);
                }
            }
        }
        Ok(Gradients { graph: self.id, grads })
    }
}

/// Mean of `-[y ln p + (1 - y) ln(1 - p)]`.
pub fn bce_value<F: Scalar>(p: &[F], y: &[F]) -> F {
    let n = F::from_usize(p.len().max(1)).unwrap();
    let total: F = p
        .iter()
        .zip(y)
        .map(|(pp, yy)| -(*yy * pp.ln() + (F::one() - *yy) * (F::one() - *pp).ln()))
        .sum();
    total / n
}
