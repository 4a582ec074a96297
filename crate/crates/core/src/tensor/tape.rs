use super::kernels::{self, ConvDims};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The supported operation set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    MulScalar,
    Matmul,
    Conv2d,
    Relu,
    Silu,
    Mean,
    Sum,
    Mse,
    BroadcastAddChannelwise,
}

#[derive(Clone, Debug)]
enum Op {
    /// Trainable leaf or constant; nothing to propagate into.
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    MulScalar(Var, f32),
    Matmul(Var, Var),
    Conv2d(Var, Var),
    Relu(Var),
    Silu(Var),
    Mean(Var),
    Sum(Var),
    Mse(Var, Var),
    BroadcastAdd(Var, Var),
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::MulScalar(..) => OpKind::MulScalar,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Conv2d(..) => OpKind::Conv2d,
            Op::Relu(..) => OpKind::Relu,
            Op::Silu(..) => OpKind::Silu,
            Op::Mean(..) => OpKind::Mean,
            Op::Sum(..) => OpKind::Sum,
            Op::Mse(..) => OpKind::Mse,
            Op::BroadcastAdd(..) => OpKind::BroadcastAddChannelwise,
        })
    }

    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Matmul(a, b) | Op::Conv2d(a, b) => vec![a, b],
            Op::Mse(a, b) | Op::BroadcastAdd(a, b) => vec![a, b],
            Op::MulScalar(a, _) | Op::Relu(a) | Op::Silu(a) | Op::Mean(a) | Op::Sum(a) => vec![a],
        }
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records executed operations in execution (hence topological) order.
///
/// A node only keeps its parent links when at least one input requires a
/// gradient; everything else is stored as a constant.
#[derive(Default)]
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

    /// A trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// The recorded operation, or `None` for leaves and constants.
    pub fn op_kind(&self, v: Var) -> Option<OpKind> {
        self.nodes[v.0].op.kind()
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f32>, op: Op) -> Result<Var> {
        if !all_finite(&data) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = op.parents().iter().any(|&p| self.requires_grad(p));
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(self.push(Tensor::from_parts(shape, data), requires_grad, op))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                shapes: vec![sa.to_vec(), sb.to_vec()],
            });
        }
        Ok(())
    }

    /// Dispatches by kind. `scalar` is only read by `MulScalar`.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var], scalar: f32) -> Result<Var> {
        let arity = match kind {
            OpKind::MulScalar | OpKind::Relu | OpKind::Silu | OpKind::Mean | OpKind::Sum => 1,
            _ => 2,
        };
        if inputs.len() != arity {
            return Err(TensorError::ShapeMismatch {
                op: "apply",
                shapes: inputs.iter().map(|&v| self.value(v).shape().to_vec()).collect(),
            });
        }
        match kind {
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::MulScalar => self.mul_scalar(inputs[0], scalar),
            OpKind::Matmul => self.matmul(inputs[0], inputs[1]),
            OpKind::Conv2d => self.conv2d(inputs[0], inputs[1]),
            OpKind::Relu => self.relu(inputs[0]),
            OpKind::Silu => self.silu(inputs[0]),
            OpKind::Mean => self.mean(inputs[0]),
            OpKind::Sum => self.sum(inputs[0]),
            OpKind::Mse => self.mse(inputs[0], inputs[1]),
            OpKind::BroadcastAddChannelwise => self.broadcast_add_channelwise(inputs[0], inputs[1]),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        self.record("add", shape, data, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let shape = self.value(a).shape().to_vec();
        self.record("sub", shape, data, Op::Sub(a, b))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x * s).collect();
        let shape = t.shape().to_vec();
        self.record("mul_scalar", shape, data, Op::MulScalar(a, s))
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                shapes: vec![sa.to_vec(), sb.to_vec()],
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        self.record("matmul", vec![m, n], out, Op::Matmul(a, b))
    }

    fn conv_dims(&self, x: Var, w: Var) -> Result<ConvDims> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        let ok = sx.len() == 4 && sw.len() == 4 && sw[1] == sx[1] && sw[2] == sw[3] && sw[2] % 2 == 1;
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                shapes: vec![sx.to_vec(), sw.to_vec()],
            });
        }
        Ok(ConvDims {
            n: sx[0],
            cin: sx[1],
            cout: sw[0],
            h: sx[2],
            w: sx[3],
            k: sw[2],
        })
    }

    /// Stride-1 convolution with zero "same" padding.
    /// Input `[N, Cin, H, W]`, weight `[Cout, Cin, k, k]` with odd `k`.
    pub fn conv2d(&mut self, x: Var, weight: Var) -> Result<Var> {
        let d = self.conv_dims(x, weight)?;
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(weight).data(), &d);
        self.record("conv2d", vec![d.n, d.cout, d.h, d.w], out, Op::Conv2d(x, weight))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.record("relu", shape, data, Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x * kernels::sigmoid(x)).collect();
        let shape = t.shape().to_vec();
        self.record("silu", shape, data, Op::Silu(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().map(|&x| x as f64).sum();
        self.record("sum", vec![], vec![s as f32], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s: f64 = t.data().iter().map(|&x| x as f64).sum();
        let m = if t.is_empty() { 0.0 } else { s / t.len() as f64 };
        self.record("mean", vec![], vec![m as f32], Op::Mean(a))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum();
        let m = if ta.is_empty() { 0.0 } else { s / ta.len() as f64 };
        self.record("mse", vec![], vec![m as f32], Op::Mse(a, b))
    }

    /// Adds `bias` over the trailing (spatial) dimensions of `x = [N, C, ...]`.
    /// `bias` is either `[C]` (shared) or `[N, C]` (per sample).
    pub fn broadcast_add_channelwise(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        let ok = sx.len() >= 2 && ((sb.len() == 1 && sb[0] == sx[1]) || (sb.len() == 2 && sb == &sx[..2]));
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_add_channelwise",
                shapes: vec![sx.to_vec(), sb.to_vec()],
            });
        }
        let (n, c) = (sx[0], sx[1]);
        let inner: usize = sx[2..].iter().product();
        let per_sample = sb.len() == 2;
        let bd = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..n {
            for ch in 0..c {
                let b = if per_sample { bd[i * c + ch] } else { bd[ch] };
                for v in &mut out[(i * c + ch) * inner..(i * c + ch + 1) * inner] {
                    *v += b;
                }
            }
        }
        let shape = sx.to_vec();
        self.record("broadcast_add_channelwise", shape, out, Op::BroadcastAdd(x, bias))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    ///
    /// Every trainable leaf gets an entry; leaves the loss does not depend
    /// on receive an exact zero gradient.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar { shape: loss_shape });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }

        let mut out = Vec::new();
        for (i, node) in self.nodes.into_iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let shape = node.value.shape().to_vec();
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
                out.push((Var(i), Tensor::from_parts(shape, data)));
            }
        }
        Ok(Gradients { entries: out })
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) -> Result<()> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, a, wants(a), || g.to_vec());
                accumulate(grads, b, wants(b), || g.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, a, wants(a), || g.to_vec());
                accumulate(grads, b, wants(b), || g.iter().map(|v| -v).collect());
            }
            Op::MulScalar(a, s) => {
                accumulate(grads, a, wants(a), || g.iter().map(|v| v * s).collect());
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                accumulate(grads, a, wants(a), || {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g, false, self.value(b).data(), true, 0.0, &mut ga);
                    ga
                });
                accumulate(grads, b, wants(b), || {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, self.value(a).data(), true, g, false, 0.0, &mut gb);
                    gb
                });
            }
            Op::Conv2d(x, w) => {
                let d = self.conv_dims(x, w)?;
                let (gx, gw) =
                    kernels::conv2d_backward(self.value(x).data(), self.value(w).data(), g, &d, wants(x), wants(w));
                if let Some(gx) = gx {
                    accumulate(grads, x, true, || gx);
                }
                if let Some(gw) = gw {
                    accumulate(grads, w, true, || gw);
                }
            }
            Op::Relu(a) => {
                let xs = self.value(a).data();
                accumulate(grads, a, wants(a), || {
                    xs.iter()
                        .zip(g)
                        .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                        .collect()
                });
            }
            Op::Silu(a) => {
                let xs = self.value(a).data();
                accumulate(grads, a, wants(a), || {
                    xs.iter()
                        .zip(g)
                        .map(|(&x, &gv)| {
                            let s = kernels::sigmoid(x);
                            gv * s * (1.0 + x * (1.0 - s))
                        })
                        .collect()
                });
            }
            Op::Sum(a) => {
                let n = self.value(a).len();
                accumulate(grads, a, wants(a), || vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(a).len();
                accumulate(grads, a, wants(a), || vec![(g[0] as f64 / n as f64) as f32; n]);
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(a).data(), self.value(b).data());
                let scale = 2.0 * g[0] as f64 / ta.len() as f64;
                let diff: Vec<f32> = ta
                    .iter()
                    .zip(tb)
                    .map(|(&x, &y)| ((x as f64 - y as f64) * scale) as f32)
                    .collect();
                if wants(b) {
                    let neg: Vec<f32> = diff.iter().map(|v| -v).collect();
                    accumulate(grads, b, true, || neg);
                }
                accumulate(grads, a, wants(a), || diff);
            }
            Op::BroadcastAdd(x, bias) => {
                accumulate(grads, x, wants(x), || g.to_vec());
                if wants(bias) {
                    let sx = self.value(x).shape();
                    let (n, c) = (sx[0], sx[1]);
                    let inner: usize = sx[2..].iter().product();
                    let per_sample = self.value(bias).shape().len() == 2;
                    let mut gb = vec![0.0f64; if per_sample { n * c } else { c }];
                    for i in 0..n {
                        for ch in 0..c {
                            let s: f64 = g[(i * c + ch) * inner..(i * c + ch + 1) * inner]
                                .iter()
                                .map(|&v| v as f64)
                                .sum();
                            gb[if per_sample { i * c + ch } else { ch }] += s;
                        }
                    }
                    accumulate(grads, bias, true, || gb.into_iter().map(|v| v as f32).collect());
                }
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, wanted: bool, make: impl FnOnce() -> Vec<f32>) {
    if !wanted {
        return;
    }
    let g = make();
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Non-short-circuiting within a chunk so the scan vectorizes.
pub(crate) fn all_finite(data: &[f32]) -> bool {
    data.chunks(1024)
        .all(|c| c.iter().fold(true, |ok, v| ok & v.is_finite()))
}

/// Gradients of the loss with respect to every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    entries: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.entries
            .binary_search_by_key(&v, |(k, _)| *k)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    /// Removes and returns the gradient for `v`.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        let i = self.entries.binary_search_by_key(&v, |(k, _)| *k).ok()?;
        Some(std::mem::replace(&mut self.entries[i].1, Tensor::scalar(0.0)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_is_elementwise() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
        // constants are not linked
        assert_eq!(tape.op_kind(c), None);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let vals = [0.5, -1.0, 2.0, 3.0, 0.25, -4.0, 1.5, 7.0, -0.75];
        let a = tape.constant(t(&[3, 3], &vals));
        let c = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(c).data(), &vals);
    }

    #[test]
    fn conv_of_ones_counts_overlap() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, k).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[4], 9.0);
        assert_eq!(v[0], 4.0);
        assert_eq!(v[1], 6.0);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
        assert!(err.to_string().contains("[2, 3]"));
        let c = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1., -2., 3., 0.5, 9., -1.]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn mse_against_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[2.0]));
        let z = tape.constant(t(&[1], &[0.0]));
        let l = tape.mse(x, z).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 4.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn disconnected_leaf_gets_exact_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let unused = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let l = tape.mean(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let y = tape.mul_scalar(x, 3.0).unwrap();
        let sg = tape.detach(y);
        assert!(!tape.requires_grad(sg));
        let both = tape.add(x, sg).unwrap();
        let l = tape.sum(both).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        // l = sum(x + x) -> dl/dx = 2
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let y = tape.add(x, x).unwrap();
        let l = tape.sum(y).unwrap();
        assert_eq!(tape.parents(y), vec![x, x]);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn broadcast_add_both_bias_forms() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2, 1, 2]));
        let shared = tape.leaf(t(&[2], &[1.0, 2.0]));
        let per = tape.leaf(t(&[2, 2], &[10.0, 20.0, 30.0, 40.0]));
        let y = tape.broadcast_add_channelwise(x, shared).unwrap();
        let z = tape.broadcast_add_channelwise(y, per).unwrap();
        assert_eq!(tape.value(z).data(), &[11., 11., 22., 22., 31., 31., 42., 42.]);
        let l = tape.sum(z).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(shared).unwrap().data(), &[4.0, 4.0]);
        assert_eq!(g.get(per).unwrap().data(), &[2.0; 4]);
    }
}
