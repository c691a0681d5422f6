use super::kernels;
use super::{PerSampleGrads, Tensor};
use crate::error::shape_err;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Relu(Var),
    AvgPool {
        input: Var,
        size: usize,
    },
    Reshape(Var),
    /// Per-row cross-entropy, output `[B]`.
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Add(Var, Var),
    Scale(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in execution order for reverse-mode replay.
///
/// Nodes are appended as operations run, so their order is already a
/// topological order of the computation graph.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Option<Var>]) -> bool {
        vars.iter().flatten().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let rg = self.needs(&[Some(input), Some(kernel), bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = kernels::linear_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let rg = self.needs(&[Some(input), Some(weight), bias]);
        Ok(self.push(out, Op::Linear { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect());
        let rg = self.needs(&[Some(input)]);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn avgpool2d(&mut self, input: Var, size: usize) -> Result<Var> {
        let out = kernels::avgpool_forward(self.value(input), size)?;
        let rg = self.needs(&[Some(input)]);
        Ok(self.push(out, Op::AvgPool { input, size }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        let rg = self.needs(&[Some(input)]);
        Ok(self.push(out, Op::Reshape(input), rg))
    }

    /// `[B, ...]` to `[B, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        let batch = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(input, vec![batch, rest])
    }

    /// Per-example losses `[B]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let losses = kernels::cross_entropy_rows(self.value(logits), labels)?;
        let rg = self.needs(&[Some(logits)]);
        Ok(self.push(
            Tensor::from_parts(vec![losses.len()], losses),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Batch-averaged cross-entropy.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let per = self.cross_entropy(logits, labels)?;
        Ok(self.mean(per))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().sum();
        let rg = self.needs(&[Some(input)]);
        self.push(Tensor::scalar(total), Op::Sum(input), rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        let rg = self.needs(&[Some(input)]);
        self.push(Tensor::scalar(m), Op::Mean(input), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let out = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect(),
        );
        let rg = self.needs(&[Some(a), Some(b)]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v * factor).collect());
        let rg = self.needs(&[Some(input)]);
        self.push(out, Op::Scale(input, factor), rg)
    }

    /// Gradients of a scalar `root` with respect to every recorded node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let value = self.value(root);
        if value.len() != 1 {
            return Err(Error::InvalidRoot(format!(
                "backward needs a scalar root, got shape {:?}",
                value.shape()
            )));
        }
        self.backward_seeded(root, Tensor::from_parts(value.shape().to_vec(), vec![1.0]))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `root`) back through the tape.
    pub fn backward_seeded(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::InvalidRoot(format!("node {} not on this tape", root.0)));
        }
        if seed.shape() != self.value(root).shape() {
            return Err(shape_err(format!(
                "seed shape {:?} does not match root {:?}",
                seed.shape(),
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed.into_data());
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
                .collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let cg = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *stride,
                    *padding,
                    wants(*input),
                    wants(*kernel),
                    bias.is_some_and(wants),
                )?;
                accumulate(grads, *input, cg.input);
                accumulate(grads, *kernel, cg.kernel);
                if let Some(b) = bias {
                    accumulate(grads, *b, cg.bias);
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (batch, features, out) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                if wants(*input) {
                    let mut dx = vec![0.0; batch * features];
                    kernels::gemm(batch, out, features, g, (out, 1), w.data(), (features, 1), 0.0, &mut dx);
                    accumulate(grads, *input, Some(dx));
                }
                if wants(*weight) {
                    let mut dw = vec![0.0; out * features];
                    kernels::gemm(out, batch, features, g, (1, out), x.data(), (features, 1), 0.0, &mut dw);
                    accumulate(grads, *weight, Some(dw));
                }
                if let Some(b) = bias.filter(|b| wants(*b)) {
                    let mut db = vec![0.0; out];
                    for row in g.chunks(out) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    accumulate(grads, b, Some(db));
                }
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                let d = g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                accumulate(grads, *input, Some(d));
            }
            Op::AvgPool { input, size } => {
                let d = kernels::avgpool_backward(self.value(*input).shape(), *size, g);
                accumulate(grads, *input, Some(d));
            }
            Op::Reshape(input) => accumulate(grads, *input, Some(g.to_vec())),
            Op::CrossEntropy { logits, labels } => {
                let z = self.value(*logits);
                let classes = z.shape()[1];
                let mut d = vec![0.0; z.len()];
                for (i, (row, drow)) in z.data().chunks(classes).zip(d.chunks_mut(classes)).enumerate() {
                    kernels::softmax_row(row, drow);
                    drow[labels[i]] -= 1.0;
                    drow.iter_mut().for_each(|v| *v *= g[i]);
                }
                accumulate(grads, *logits, Some(d));
            }
            Op::Sum(input) => {
                let n = self.value(*input).len();
                accumulate(grads, *input, Some(vec![g[0]; n]));
            }
            Op::Mean(input) => {
                let n = self.value(*input).len();
                accumulate(grads, *input, Some(vec![g[0] / n as f64; n]));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, Some(g.to_vec()));
                accumulate(grads, *b, Some(g.to_vec()));
            }
            Op::Scale(input, factor) => {
                accumulate(grads, *input, Some(g.iter().map(|v| v * factor).collect()));
            }
        }
        Ok(())
    }

    /// One gradient row per example: row `i` is the gradient of `losses[i]` alone
    /// with respect to `params`, flattened in the order given.
    ///
    /// `losses` must be a `[B]` vector of per-example losses. Each row replays the
    /// full backward pass, so this costs `B` backward passes.
    pub fn per_sample_backward(&self, losses: Var, params: &[Var]) -> Result<PerSampleGrads> {
        let shape = self.value(losses).shape();
        let [batch] = *shape else {
            return Err(shape_err(format!("per-example losses must be [B], got {shape:?}")));
        };
        let dim = params.iter().map(|p| self.value(*p).len()).sum();
        let mut out = PerSampleGrads::with_capacity(batch, dim);
        for i in 0..batch {
            let mut seed = vec![0.0; batch];
            seed[i] = 1.0;
            let grads = self.backward_seeded(losses, Tensor::from_parts(vec![batch], seed))?;
            out.push_row(&grads.flatten(params, self))?;
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, delta: Option<Vec<f64>>) {
    let Some(delta) = delta else { return };
    match &mut grads[var.0] {
        Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
        slot => *slot = Some(delta),
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` if the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, with zeros where the root does not depend on it.
    pub fn wrt(&self, var: Var, tape: &Tape) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()))
    }

    /// Concatenated gradients of `params`.
    pub fn flatten(&self, params: &[Var], tape: &Tape) -> Vec<f64> {
        let mut out = Vec::new();
        for &p in params {
            match self.get(p) {
                Some(t) => out.extend_from_slice(t.data()),
                None => out.extend(std::iter::repeat_n(0.0, tape.value(p).len())),
            }
        }
        out
    }
}
