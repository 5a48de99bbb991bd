use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-feature statistics of the batch seen by a training-mode batchnorm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Training { eps: f64 },
    /// Normalize with externally tracked running statistics.
    Inference {
        mean: &'a [f64],
        var: &'a [f64],
        eps: f64,
    },
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Dropout(Var, Vec<f64>),
    BatchNorm {
        x: Var,
        beta: Var,
        gamma: Option<Var>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    SquaredNormRows(Var),
    NormRows(Var),
    DivRows(Var, Var),
    ZeroDiagonal(Var),
    Diagonal(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records primitive applications in topological order; every op appends a
/// node whose inputs are already on the tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        }),
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// C (+)= A·B for row/column-strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover every element addressed by the given dims
    // and strides (checked above), and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf with a gradient accumulator.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a differentiable leaf; zeros if no backward
    /// pass has reached it, `None` for constants and interior nodes.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        let data = node
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.numel()]);
        Some(Tensor {
            shape: node.value.shape().to_vec(),
            data,
        })
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn unary(
        &mut self,
        op_name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let xv = self.value(x);
        let data: Vec<f64> = xv.data().iter().map(|&v| f(v)).collect();
        check_finite(op_name, &data)?;
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data,
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, op, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        check_finite(op_name, &data)?;
        let value = Tensor {
            shape: av.shape().to_vec(),
            data,
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.value(a))?;
        let (k2, n) = matrix_dims("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        check_finite("matmul", &out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            Op::MatMul(a, b),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = matrix_dims("transpose", self.value(a))?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor {
                shape: vec![n, m],
                data: out,
            },
            Op::Transpose(a),
            rg,
        ))
    }

    /// Adds a length-`d` bias to every row of an `[n, d]` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, d) = matrix_dims("add_bias", self.value(x))?;
        if self.value(b).numel() != d {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: vec![n, d],
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d) {
            add_into(row, bias);
        }
        check_finite("add_bias", &out)?;
        let rg = self.rg(&[x, b]);
        Ok(self.push(
            Tensor {
                shape: vec![n, d],
                data: out,
            },
            Op::AddBias(x, b),
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "sigmoid",
            x,
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    /// Natural logarithm; non-positive inputs are a non-finite error.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::NonFinite { op: "ln" });
        }
        self.unary("ln", x, f64::ln, Op::Ln(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary("clamp", x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Inverted dropout: kept units are divided by the keep probability so
    /// inference needs no rescaling. Identity when `rate == 0` or not training.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let xv = self.value(x);
        let data: Vec<f64> = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data,
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Dropout(x, mask), rg))
    }

    /// Feature-wise batch normalization of an `[n, d]` matrix followed by
    /// the shift `beta` and, when given, the scale `gamma`. Training mode
    /// also returns the batch statistics so callers can track running
    /// averages.
    pub fn batchnorm(
        &mut self,
        x: Var,
        beta: Var,
        gamma: Option<Var>,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (n, d) = matrix_dims("batchnorm", self.value(x))?;
        let mut affine = vec![beta];
        affine.extend(gamma);
        for &p in &affine {
            if self.value(p).numel() != d {
                return Err(Error::ShapeMismatch {
                    op: "batchnorm",
                    lhs: vec![n, d],
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let xs = self.value(x).data();
        let (mean, var, eps, batch_stats) = match mode {
            BatchNormMode::Training { eps } => {
                let mut mean = vec![0.0; d];
                for row in xs.chunks(d) {
                    add_into(&mut mean, row);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for row in xs.chunks(d) {
                    for j in 0..d {
                        let c = row[j] - mean[j];
                        var[j] += c * c;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var, eps, true)
            }
            BatchNormMode::Inference { mean, var, eps } => {
                if mean.len() != d || var.len() != d {
                    return Err(Error::ShapeMismatch {
                        op: "batchnorm",
                        lhs: vec![n, d],
                        rhs: vec![mean.len(), var.len()],
                    });
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        if eps <= 0.0 {
            return Err(Error::invalid("batchnorm eps must be positive"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * d];
        for (i, row) in xs.chunks(d).enumerate() {
            for j in 0..d {
                xhat[i * d + j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let b = self.value(beta).data();
        let g = gamma.map(|g| self.value(g).data());
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let scale = g.map_or(1.0, |g| g[j]);
                out[i * d + j] = scale * xhat[i * d + j] + b[j];
            }
        }
        check_finite("batchnorm", &out)?;
        let mut inputs = vec![x];
        inputs.extend(&affine);
        let rg = self.rg(&inputs);
        let stats = batch_stats.then(|| BatchStats {
            mean: mean.clone(),
            var: var.clone(),
        });
        let v = self.push(
            Tensor {
                shape: vec![n, d],
                data: out,
            },
            Op::BatchNorm {
                x,
                beta,
                gamma,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// Per-row sum of squares of an `[n, d]` matrix, giving shape `[n]`.
    pub fn squared_l2_rowwise(&mut self, x: Var) -> Result<Var> {
        let (n, d) = matrix_dims("squared_l2_rowwise", self.value(x))?;
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        check_finite("squared_l2_rowwise", &data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![n],
                data,
            },
            Op::SquaredNormRows(x),
            rg,
        ))
    }

    /// Per-row Euclidean norm of an `[n, d]` matrix, giving shape `[n]`.
    /// The subgradient at a zero row is taken to be zero.
    pub fn euclidean_norm_rowwise(&mut self, x: Var) -> Result<Var> {
        let (n, d) = matrix_dims("euclidean_norm_rowwise", self.value(x))?;
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        check_finite("euclidean_norm_rowwise", &data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![n],
                data,
            },
            Op::NormRows(x),
            rg,
        ))
    }

    /// Divides row `i` of an `[n, d]` matrix by element `i` of a length-`n`
    /// vector.
    pub fn div_rows(&mut self, x: Var, v: Var) -> Result<Var> {
        let (n, d) = matrix_dims("div_rows", self.value(x))?;
        if self.value(v).numel() != n {
            return Err(Error::ShapeMismatch {
                op: "div_rows",
                lhs: vec![n, d],
                rhs: self.value(v).shape().to_vec(),
            });
        }
        let den = self.value(v).data();
        let mut out = self.value(x).data().to_vec();
        for (row, &s) in out.chunks_mut(d).zip(den) {
            row.iter_mut().for_each(|e| *e /= s);
        }
        check_finite("div_rows", &out)?;
        let rg = self.rg(&[x, v]);
        Ok(self.push(
            Tensor {
                shape: vec![n, d],
                data: out,
            },
            Op::DivRows(x, v),
            rg,
        ))
    }

    /// Zeroes the diagonal of a square matrix.
    pub fn zero_diagonal(&mut self, x: Var) -> Result<Var> {
        let (n, d) = matrix_dims("zero_diagonal", self.value(x))?;
        if n != d {
            return Err(Error::ShapeMismatch {
                op: "zero_diagonal",
                lhs: vec![n, d],
                rhs: vec![d, n],
            });
        }
        let mut out = self.value(x).data().to_vec();
        for i in 0..n {
            out[i * n + i] = 0.0;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![n, n],
                data: out,
            },
            Op::ZeroDiagonal(x),
            rg,
        ))
    }

    /// Main diagonal of a square matrix, shape `[n]`.
    pub fn diagonal(&mut self, x: Var) -> Result<Var> {
        let (n, d) = matrix_dims("diagonal", self.value(x))?;
        if n != d {
            return Err(Error::ShapeMismatch {
                op: "diagonal",
                lhs: vec![n, d],
                rhs: vec![d, n],
            });
        }
        let src = self.value(x).data();
        let data: Vec<f64> = (0..n).map(|i| src[i * n + i]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![n],
                data,
            },
            Op::Diagonal(x),
            rg,
        ))
    }

    /// Row-wise log-softmax of an `[n, c]` matrix.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (n, c) = matrix_dims("log_softmax", self.value(x))?;
        let mut out = Vec::with_capacity(n * c);
        for row in self.value(x).data().chunks(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        check_finite("log_softmax", &out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![n, c],
                data: out,
            },
            Op::LogSoftmax(x),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        check_finite("sum", &[s])?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        check_finite("mean", &[s])?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Stacks tensors along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let tail = self.value(*first).shape().get(1..).unwrap_or(&[]).to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().is_empty() || t.shape()[1..] != tail[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = self.rg(parts);
        Ok(self.push(Tensor { shape, data }, Op::Concat(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reverse pass from a scalar `loss`, accumulating d(loss)/d(leaf) into
    /// every differentiable leaf. Calling it twice without
    /// [`Graph::zero_grad`] sums the two gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        if !self.requires_grad(loss) {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let target = &nodes[v.0];
                if target.requires_grad {
                    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; target.value.numel()]);
                    f(buf);
                }
            };
            let val = |v: Var| nodes[v.0].value.data();
            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        leaf_grads.push((i, g));
                    }
                }
                &Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                    let n = nodes[b.0].value.cols();
                    // dA = G·Bᵀ
                    acc(a, &mut |da| {
                        gemm(
                            m,
                            n,
                            k,
                            &g,
                            (n as isize, 1),
                            val(b),
                            (1, n as isize),
                            da,
                            true,
                        )
                    });
                    // dB = Aᵀ·G
                    acc(b, &mut |db| {
                        gemm(
                            k,
                            m,
                            n,
                            val(a),
                            (1, k as isize),
                            &g,
                            (n as isize, 1),
                            db,
                            true,
                        )
                    });
                }
                &Op::Transpose(a) => {
                    let (m, n) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                    acc(a, &mut |da| {
                        for i in 0..m {
                            for j in 0..n {
                                da[i * n + j] += g[j * m + i];
                            }
                        }
                    });
                }
                &Op::AddBias(x, b) => {
                    let d = nodes[b.0].value.numel();
                    acc(x, &mut |dx| add_into(dx, &g));
                    acc(b, &mut |db| {
                        for row in g.chunks(d) {
                            add_into(db, row);
                        }
                    });
                }
                &Op::Add(a, b) => {
                    acc(a, &mut |da| add_into(da, &g));
                    acc(b, &mut |db| add_into(db, &g));
                }
                &Op::Sub(a, b) => {
                    acc(a, &mut |da| add_into(da, &g));
                    acc(b, &mut |db| db.iter_mut().zip(&g).for_each(|(d, s)| *d -= s));
                }
                &Op::Mul(a, b) => {
                    acc(a, &mut |da| {
                        for ((d, gi), bi) in da.iter_mut().zip(&g).zip(val(b)) {
                            *d += gi * bi;
                        }
                    });
                    acc(b, &mut |db| {
                        for ((d, gi), ai) in db.iter_mut().zip(&g).zip(val(a)) {
                            *d += gi * ai;
                        }
                    });
                }
                &Op::Div(a, b) => {
                    acc(a, &mut |da| {
                        for ((d, gi), bi) in da.iter_mut().zip(&g).zip(val(b)) {
                            *d += gi / bi;
                        }
                    });
                    acc(b, &mut |db| {
                        for ((d, gi), (ai, bi)) in db.iter_mut().zip(&g).zip(val(a).iter().zip(val(b))) {
                            *d -= gi * ai / (bi * bi);
                        }
                    });
                }
                &Op::Scale(a, c) => {
                    acc(a, &mut |da| da.iter_mut().zip(&g).for_each(|(d, s)| *d += c * s));
                }
                &Op::AddScalar(a) | &Op::Reshape(a) => acc(a, &mut |da| add_into(da, &g)),
                &Op::Relu(a) => acc(a, &mut |da| {
                    for ((d, gi), x) in da.iter_mut().zip(&g).zip(val(a)) {
                        if *x > 0.0 {
                            *d += gi;
                        }
                    }
                }),
                &Op::Tanh(a) => acc(a, &mut |da| {
                    for ((d, gi), y) in da.iter_mut().zip(&g).zip(node.value.data()) {
                        *d += gi * (1.0 - y * y);
                    }
                }),
                &Op::Sigmoid(a) => acc(a, &mut |da| {
                    for ((d, gi), y) in da.iter_mut().zip(&g).zip(node.value.data()) {
                        *d += gi * y * (1.0 - y);
                    }
                }),
                &Op::Ln(a) => acc(a, &mut |da| {
                    for ((d, gi), x) in da.iter_mut().zip(&g).zip(val(a)) {
                        *d += gi / x;
                    }
                }),
                &Op::Clamp(a, lo, hi) => acc(a, &mut |da| {
                    for ((d, gi), x) in da.iter_mut().zip(&g).zip(val(a)) {
                        if *x > lo && *x < hi {
                            *d += gi;
                        }
                    }
                }),
                Op::Dropout(a, mask) => acc(*a, &mut |da| {
                    for ((d, gi), m) in da.iter_mut().zip(&g).zip(mask) {
                        *d += gi * m;
                    }
                }),
                Op::BatchNorm {
                    x,
                    beta,
                    gamma,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let d = inv_std.len();
                    let n = g.len() / d;
                    let gam = gamma.map(|v| val(v));
                    acc(*beta, &mut |db| {
                        for row in g.chunks(d) {
                            add_into(db, row);
                        }
                    });
                    if let Some(gv) = *gamma {
                        acc(gv, &mut |dg| {
                            for (grow, xrow) in g.chunks(d).zip(xhat.chunks(d)) {
                                for j in 0..d {
                                    dg[j] += grow[j] * xrow[j];
                                }
                            }
                        });
                    }
                    acc(*x, &mut |dx| {
                        let scale = |j: usize| gam.map_or(1.0, |gm| gm[j]);
                        if *batch_stats {
                            let mut s1 = vec![0.0; d];
                            let mut s2 = vec![0.0; d];
                            for i in 0..n {
                                for j in 0..d {
                                    let dxh = g[i * d + j] * scale(j);
                                    s1[j] += dxh;
                                    s2[j] += dxh * xhat[i * d + j];
                                }
                            }
                            let nf = n as f64;
                            for i in 0..n {
                                for j in 0..d {
                                    let k = i * d + j;
                                    let dxh = g[k] * scale(j);
                                    dx[k] += inv_std[j] / nf * (nf * dxh - s1[j] - xhat[k] * s2[j]);
                                }
                            }
                        } else {
                            for i in 0..n {
                                for j in 0..d {
                                    dx[i * d + j] += g[i * d + j] * scale(j) * inv_std[j];
                                }
                            }
                        }
                    });
                }
                &Op::SquaredNormRows(a) => {
                    let d = nodes[a.0].value.cols();
                    acc(a, &mut |da| {
                        for ((drow, xrow), gi) in da.chunks_mut(d).zip(val(a).chunks(d)).zip(&g) {
                            for (dv, xv) in drow.iter_mut().zip(xrow) {
                                *dv += 2.0 * gi * xv;
                            }
                        }
                    });
                }
                &Op::NormRows(a) => {
                    let d = nodes[a.0].value.cols();
                    let norms = node.value.data();
                    acc(a, &mut |da| {
                        for (i, (drow, xrow)) in da.chunks_mut(d).zip(val(a).chunks(d)).enumerate() {
                            if norms[i] > 0.0 {
                                let s = g[i] / norms[i];
                                for (dv, xv) in drow.iter_mut().zip(xrow) {
                                    *dv += s * xv;
                                }
                            }
                        }
                    });
                }
                &Op::DivRows(x, v) => {
                    let d = nodes[x.0].value.cols();
                    let den = val(v);
                    acc(x, &mut |dx| {
                        for ((drow, grow), s) in dx.chunks_mut(d).zip(g.chunks(d)).zip(den) {
                            for (dv, gv) in drow.iter_mut().zip(grow) {
                                *dv += gv / s;
                            }
                        }
                    });
                    acc(v, &mut |dv| {
                        for (i, (grow, xrow)) in g.chunks(d).zip(val(x).chunks(d)).enumerate() {
                            let dot: f64 = grow.iter().zip(xrow).map(|(a, b)| a * b).sum();
                            dv[i] -= dot / (den[i] * den[i]);
                        }
                    });
                }
                &Op::ZeroDiagonal(a) => {
                    let n = node.value.rows();
                    acc(a, &mut |da| {
                        for (k, (dv, gv)) in da.iter_mut().zip(&g).enumerate() {
                            if k / n != k % n {
                                *dv += gv;
                            }
                        }
                    });
                }
                &Op::Diagonal(a) => {
                    let n = g.len();
                    acc(a, &mut |da| {
                        for i in 0..n {
                            da[i * n + i] += g[i];
                        }
                    });
                }
                &Op::LogSoftmax(a) => {
                    let c = node.value.cols();
                    acc(a, &mut |da| {
                        for ((drow, grow), yrow) in
                            da.chunks_mut(c).zip(g.chunks(c)).zip(node.value.data().chunks(c))
                        {
                            let gs: f64 = grow.iter().sum();
                            for ((dv, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                                *dv += gv - y.exp() * gs;
                            }
                        }
                    });
                }
                &Op::Sum(a) => acc(a, &mut |da| da.iter_mut().for_each(|d| *d += g[0])),
                &Op::Mean(a) => {
                    let n = nodes[a.0].value.numel() as f64;
                    acc(a, &mut |da| da.iter_mut().for_each(|d| *d += g[0] / n));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p.0].value.numel();
                        acc(p, &mut |dp| add_into(dp, &g[offset..offset + len]));
                        offset += len;
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            check_finite("backward", &g)?;
            match &mut self.nodes[i].grad {
                Some(existing) => add_into(existing, &g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}
