use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// Probabilities are floored at this value before taking logs, so a
/// confidently wrong prediction yields a large finite loss instead of -inf.
pub const LOG_CLAMP: f64 = 1e-12;

/// Wengert list for reverse-mode differentiation.
///
/// Every operation executes eagerly and records one node holding handles to
/// its operands, its output, and whatever the backward rule needs. `backward`
/// replays the list once in reverse, accumulating gradients into every tensor
/// reachable from the loss. A tape is single-writer; run independent
/// evaluations on independent tapes.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

enum Node {
    Matmul { a: Tensor, b: Tensor, out: Tensor },
    MatVec { w: Tensor, x: Tensor, out: Tensor },
    Add { a: Tensor, b: Tensor, out: Tensor },
    Sub { a: Tensor, b: Tensor, out: Tensor },
    Hadamard { a: Tensor, b: Tensor, out: Tensor },
    Scale { x: Tensor, k: f64, out: Tensor },
    Tanh { x: Tensor, out: Tensor },
    Sigmoid { x: Tensor, out: Tensor },
    Softmax { x: Tensor, out: Tensor },
    Maxout { x: Tensor, winners: Vec<usize>, out: Tensor },
    CrossEntropy { p: Tensor, target: usize, out: Tensor },
    Row { m: Tensor, index: usize, out: Tensor },
    Concat { parts: Vec<Tensor>, out: Tensor },
    Dot { a: Tensor, b: Tensor, out: Tensor },
    WeightedSum { weights: Tensor, rows: Vec<Tensor>, out: Tensor },
    Sum { x: Tensor, out: Tensor },
}

fn dim_err(op: &str, detail: String) -> Error {
    Error::Dimension(format!("{op}: {detail}"))
}

fn require_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(
            op,
            format!("operand shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn require_vector(op: &str, t: &Tensor) -> Result<()> {
    if t.rank() != 1 {
        return Err(dim_err(op, format!("expected a vector, got shape {:?}", t.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn record(&self, node: Node) {
        self.nodes.borrow_mut().push(node);
    }

    fn finish(&self, node: Node, out: &Tensor, op: &str) -> Tensor {
        debug_assert!(out.all_finite(), "{op} produced a non-finite value");
        let out = out.clone();
        self.record(node);
        out
    }

    /// Matrix product `a[m,k] * b[k,n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a
            .dims2()
            .ok_or_else(|| dim_err("matmul", format!("lhs shape {:?} is not a matrix", a.shape())))?;
        let (k2, n) = b
            .dims2()
            .ok_or_else(|| dim_err("matmul", format!("rhs shape {:?} is not a matrix", b.shape())))?;
        if k != k2 {
            return Err(dim_err(
                "matmul",
                format!("inner dimensions disagree: {:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let av = a.values();
        let bv = b.values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aip * bv[p * n + j];
                }
            }
        }
        drop(av);
        drop(bv);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.finish(
            Node::Matmul { a: a.clone(), b: b.clone(), out: out.clone() },
            &out,
            "matmul",
        ))
    }

    /// Matrix-vector product `w[m,n] * x[n]`.
    pub fn matvec(&self, w: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (m, n) = w
            .dims2()
            .ok_or_else(|| dim_err("matvec", format!("lhs shape {:?} is not a matrix", w.shape())))?;
        require_vector("matvec", x)?;
        if x.len() != n {
            return Err(dim_err(
                "matvec",
                format!("matrix shape {:?} against vector of length {}", w.shape(), x.len()),
            ));
        }
        let wv = w.values();
        let xv = x.values();
        let out: Vec<f64> = (0..m)
            .map(|i| {
                let row = &wv[i * n..(i + 1) * n];
                row.iter().zip(xv.iter()).map(|(a, b)| a * b).sum()
            })
            .collect();
        drop(wv);
        drop(xv);
        let out = Tensor::vector(out);
        Ok(self.finish(
            Node::MatVec { w: w.clone(), x: x.clone(), out: out.clone() },
            &out,
            "matvec",
        ))
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y)?;
        Ok(self.finish(Node::Add { a: a.clone(), b: b.clone(), out: out.clone() }, &out, "add"))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y)?;
        Ok(self.finish(Node::Sub { a: a.clone(), b: b.clone(), out: out.clone() }, &out, "sub"))
    }

    /// Elementwise product.
    pub fn hadamard(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_same_shape("hadamard", a, b)?;
        let out = self.zip(a, b, |x, y| x * y)?;
        Ok(self.finish(
            Node::Hadamard { a: a.clone(), b: b.clone(), out: out.clone() },
            &out,
            "hadamard",
        ))
    }

    fn zip(&self, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let av = a.values();
        let bv = b.values();
        let vals: Vec<f64> = av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect();
        drop(av);
        drop(bv);
        Tensor::new(a.shape().to_vec(), vals)
    }

    /// Multiply every element by the constant `k`.
    pub fn scale(&self, x: &Tensor, k: f64) -> Result<Tensor> {
        let vals: Vec<f64> = x.values().iter().map(|v| v * k).collect();
        let out = Tensor::new(x.shape().to_vec(), vals)?;
        Ok(self.finish(Node::Scale { x: x.clone(), k, out: out.clone() }, &out, "scale"))
    }

    pub fn tanh(&self, x: &Tensor) -> Result<Tensor> {
        let vals: Vec<f64> = x.values().iter().map(|v| v.tanh()).collect();
        let out = Tensor::new(x.shape().to_vec(), vals)?;
        Ok(self.finish(Node::Tanh { x: x.clone(), out: out.clone() }, &out, "tanh"))
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        let vals: Vec<f64> = x.values().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let out = Tensor::new(x.shape().to_vec(), vals)?;
        Ok(self.finish(Node::Sigmoid { x: x.clone(), out: out.clone() }, &out, "sigmoid"))
    }

    /// Numerically stable softmax over a vector: the maximum is subtracted
    /// before exponentiation, so uniformly huge inputs do not overflow.
    pub fn softmax(&self, x: &Tensor) -> Result<Tensor> {
        require_vector("softmax", x)?;
        if x.is_empty() {
            return Err(dim_err("softmax", "input vector is empty".to_string()));
        }
        let xv = x.values();
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|v| (v - max).exp()).collect();
        drop(xv);
        let total: f64 = exps.iter().sum();
        let out = Tensor::vector(exps.into_iter().map(|e| e / total).collect());
        Ok(self.finish(Node::Softmax { x: x.clone(), out: out.clone() }, &out, "softmax"))
    }

    /// Pairwise max over adjacent elements: `out[i] = max(x[2i], x[2i+1])`.
    /// Ties route gradient to the lower index.
    pub fn maxout(&self, x: &Tensor) -> Result<Tensor> {
        require_vector("maxout", x)?;
        if x.len() % 2 != 0 {
            return Err(dim_err(
                "maxout",
                format!("input length {} is odd; need pairs", x.len()),
            ));
        }
        let xv = x.values();
        let mut vals = Vec::with_capacity(x.len() / 2);
        let mut winners = Vec::with_capacity(x.len() / 2);
        for i in 0..x.len() / 2 {
            let (lo, hi) = (xv[2 * i], xv[2 * i + 1]);
            if lo >= hi {
                vals.push(lo);
                winners.push(2 * i);
            } else {
                vals.push(hi);
                winners.push(2 * i + 1);
            }
        }
        drop(xv);
        let out = Tensor::vector(vals);
        Ok(self.finish(
            Node::Maxout { x: x.clone(), winners, out: out.clone() },
            &out,
            "maxout",
        ))
    }

    /// Negative log-likelihood of `target` under the distribution `p`,
    /// with `p[target]` floored at [`LOG_CLAMP`].
    pub fn cross_entropy(&self, p: &Tensor, target: usize) -> Result<Tensor> {
        require_vector("cross_entropy", p)?;
        if target >= p.len() {
            return Err(Error::Index(format!(
                "cross_entropy target {target} with distribution of size {}",
                p.len()
            )));
        }
        debug_assert!(
            (p.values().iter().sum::<f64>() - 1.0).abs() < 1e-6,
            "cross_entropy input is not a distribution"
        );
        let pt = p.get(target);
        let out = Tensor::scalar(-(pt.max(LOG_CLAMP).ln()));
        Ok(self.finish(
            Node::CrossEntropy { p: p.clone(), target, out: out.clone() },
            &out,
            "cross_entropy",
        ))
    }

    /// Extract row `index` of a matrix as a vector (embedding lookup).
    pub fn row(&self, m: &Tensor, index: usize) -> Result<Tensor> {
        let (rows, cols) = m
            .dims2()
            .ok_or_else(|| dim_err("row", format!("shape {:?} is not a matrix", m.shape())))?;
        if index >= rows {
            return Err(Error::Index(format!(
                "row {index} of a matrix with {rows} rows"
            )));
        }
        let out = Tensor::vector(m.values()[index * cols..(index + 1) * cols].to_vec());
        Ok(self.finish(
            Node::Row { m: m.clone(), index, out: out.clone() },
            &out,
            "row",
        ))
    }

    /// Concatenate vectors end to end.
    pub fn concat(&self, parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(dim_err("concat", "no parts given".to_string()));
        }
        let mut vals = Vec::new();
        for p in parts {
            require_vector("concat", p)?;
            vals.extend_from_slice(&p.values());
        }
        let out = Tensor::vector(vals);
        Ok(self.finish(
            Node::Concat { parts: parts.to_vec(), out: out.clone() },
            &out,
            "concat",
        ))
    }

    /// Inner product of two equal-length vectors, as a scalar tensor.
    pub fn dot(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_vector("dot", a)?;
        require_vector("dot", b)?;
        require_same_shape("dot", a, b)?;
        let v = a.values().iter().zip(b.values().iter()).map(|(x, y)| x * y).sum();
        let out = Tensor::scalar(v);
        Ok(self.finish(
            Node::Dot { a: a.clone(), b: b.clone(), out: out.clone() },
            &out,
            "dot",
        ))
    }

    /// Weighted sum of equal-length vectors: `out = sum_i weights[i] * rows[i]`.
    pub fn weighted_sum(&self, weights: &Tensor, rows: &[Tensor]) -> Result<Tensor> {
        require_vector("weighted_sum", weights)?;
        if weights.len() != rows.len() {
            return Err(dim_err(
                "weighted_sum",
                format!("{} weights against {} rows", weights.len(), rows.len()),
            ));
        }
        if rows.is_empty() {
            return Err(dim_err("weighted_sum", "no rows given".to_string()));
        }
        let d = rows[0].len();
        for r in rows {
            require_vector("weighted_sum", r)?;
            if r.len() != d {
                return Err(dim_err(
                    "weighted_sum",
                    format!("row lengths differ: {} vs {}", d, r.len()),
                ));
            }
        }
        let wv = weights.values();
        let mut vals = vec![0.0; d];
        for (wi, r) in wv.iter().zip(rows) {
            for (o, v) in vals.iter_mut().zip(r.values().iter()) {
                *o += wi * v;
            }
        }
        drop(wv);
        let out = Tensor::vector(vals);
        Ok(self.finish(
            Node::WeightedSum { weights: weights.clone(), rows: rows.to_vec(), out: out.clone() },
            &out,
            "weighted_sum",
        ))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self, x: &Tensor) -> Result<Tensor> {
        let out = Tensor::scalar(x.values().iter().sum());
        Ok(self.finish(Node::Sum { x: x.clone(), out: out.clone() }, &out, "sum"))
    }

    /// Zero the gradient of every tensor recorded on this tape (operands and
    /// outputs alike), so a second backward reproduces the first exactly.
    pub fn zero_all_grads(&self) {
        for node in self.nodes.borrow().iter() {
            node.for_each_tensor(&mut |t| t.zero_grad());
        }
    }

    /// Reverse pass. Seeds `d loss / d loss = 1` and visits every recorded
    /// node exactly once in reverse order, adding each contribution into the
    /// operands' gradient accumulators. Leaves with already-accumulated
    /// gradients (e.g. parameters mid-batch) keep accumulating.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        loss.accumulate_grad(&[1.0]);
        for node in self.nodes.borrow().iter().rev() {
            node.backprop();
        }
        Ok(())
    }
}

impl Node {
    fn for_each_tensor(&self, f: &mut impl FnMut(&Tensor)) {
        match self {
            Node::Matmul { a, b, out }
            | Node::Add { a, b, out }
            | Node::Sub { a, b, out }
            | Node::Hadamard { a, b, out }
            | Node::Dot { a, b, out } => {
                f(a);
                f(b);
                f(out);
            }
            Node::MatVec { w: a, x: b, out } => {
                f(a);
                f(b);
                f(out);
            }
            Node::Scale { x, out, .. }
            | Node::Tanh { x, out }
            | Node::Sigmoid { x, out }
            | Node::Softmax { x, out }
            | Node::Maxout { x, out, .. }
            | Node::Sum { x, out } => {
                f(x);
                f(out);
            }
            Node::CrossEntropy { p, out, .. } => {
                f(p);
                f(out);
            }
            Node::Row { m, out, .. } => {
                f(m);
                f(out);
            }
            Node::Concat { parts, out } => {
                parts.iter().for_each(&mut *f);
                f(out);
            }
            Node::WeightedSum { weights, rows, out } => {
                f(weights);
                rows.iter().for_each(&mut *f);
                f(out);
            }
        }
    }

    fn backprop(&self) {
        // A node whose output never received gradient is off the loss path.
        match self {
            Node::Matmul { a, b, out } => {
                let Some(g) = out.grad() else { return };
                let (m, k) = a.dims2().unwrap();
                let n = out.dims2().unwrap().1;
                {
                    let bv = b.values();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    drop(bv);
                    a.accumulate_grad(&da);
                }
                {
                    let av = a.values();
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for i in 0..m {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    drop(av);
                    b.accumulate_grad(&db);
                }
            }
            Node::MatVec { w, x, out } => {
                let Some(g) = out.grad() else { return };
                let (m, n) = w.dims2().unwrap();
                {
                    let xv = x.values();
                    let mut dw = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            dw[i * n + j] = g[i] * xv[j];
                        }
                    }
                    drop(xv);
                    w.accumulate_grad(&dw);
                }
                {
                    let wv = w.values();
                    let mut dx = vec![0.0; n];
                    for i in 0..m {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            dx[j] += wv[i * n + j] * gi;
                        }
                    }
                    drop(wv);
                    x.accumulate_grad(&dx);
                }
            }
            Node::Add { a, b, out } => {
                let Some(g) = out.grad() else { return };
                a.accumulate_grad(&g);
                b.accumulate_grad(&g);
            }
            Node::Sub { a, b, out } => {
                let Some(g) = out.grad() else { return };
                a.accumulate_grad(&g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                b.accumulate_grad(&neg);
            }
            Node::Hadamard { a, b, out } => {
                let Some(g) = out.grad() else { return };
                let da: Vec<f64> = g.iter().zip(b.values().iter()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = g.iter().zip(a.values().iter()).map(|(g, x)| g * x).collect();
                a.accumulate_grad(&da);
                b.accumulate_grad(&db);
            }
            Node::Scale { x, k, out } => {
                let Some(g) = out.grad() else { return };
                let dx: Vec<f64> = g.iter().map(|v| v * k).collect();
                x.accumulate_grad(&dx);
            }
            Node::Tanh { x, out } => {
                let Some(g) = out.grad() else { return };
                let dx: Vec<f64> = g
                    .iter()
                    .zip(out.values().iter())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                x.accumulate_grad(&dx);
            }
            Node::Sigmoid { x, out } => {
                let Some(g) = out.grad() else { return };
                let dx: Vec<f64> = g
                    .iter()
                    .zip(out.values().iter())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                x.accumulate_grad(&dx);
            }
            Node::Softmax { x, out } => {
                let Some(g) = out.grad() else { return };
                let y = out.values();
                let inner: f64 = g.iter().zip(y.iter()).map(|(g, y)| g * y).sum();
                let dx: Vec<f64> = g.iter().zip(y.iter()).map(|(g, y)| y * (g - inner)).collect();
                drop(y);
                x.accumulate_grad(&dx);
            }
            Node::Maxout { x, winners, out } => {
                let Some(g) = out.grad() else { return };
                let mut dx = vec![0.0; x.len()];
                for (gi, &w) in g.iter().zip(winners) {
                    dx[w] += gi;
                }
                x.accumulate_grad(&dx);
            }
            Node::CrossEntropy { p, target, out } => {
                let Some(g) = out.grad() else { return };
                let pt = p.get(*target);
                // In the clamped region the forward value is constant in p.
                if pt >= LOG_CLAMP {
                    let mut dp = vec![0.0; p.len()];
                    dp[*target] = -g[0] / pt;
                    p.accumulate_grad(&dp);
                }
            }
            Node::Row { m, index, out } => {
                let Some(g) = out.grad() else { return };
                let cols = m.dims2().unwrap().1;
                m.accumulate_grad_range(index * cols, &g);
            }
            Node::Concat { parts, out } => {
                let Some(g) = out.grad() else { return };
                let mut start = 0;
                for p in parts {
                    p.accumulate_grad(&g[start..start + p.len()]);
                    start += p.len();
                }
            }
            Node::Dot { a, b, out } => {
                let Some(g) = out.grad() else { return };
                let s = g[0];
                let da: Vec<f64> = b.values().iter().map(|v| s * v).collect();
                let db: Vec<f64> = a.values().iter().map(|v| s * v).collect();
                a.accumulate_grad(&da);
                b.accumulate_grad(&db);
            }
            Node::WeightedSum { weights, rows, out } => {
                let Some(g) = out.grad() else { return };
                let wv = weights.to_vec();
                let mut dw = vec![0.0; rows.len()];
                for (i, r) in rows.iter().enumerate() {
                    dw[i] = g.iter().zip(r.values().iter()).map(|(g, v)| g * v).sum();
                    let dr: Vec<f64> = g.iter().map(|g| g * wv[i]).collect();
                    r.accumulate_grad(&dr);
                }
                weights.accumulate_grad(&dw);
            }
            Node::Sum { x, out } => {
                let Some(g) = out.grad() else { return };
                let dx = vec![g[0]; x.len()];
                x.accumulate_grad(&dx);
            }
        }
    }
}
