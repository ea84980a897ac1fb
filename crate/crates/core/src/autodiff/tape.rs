//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Tensors are two-dimensional (rows x cols), stored row-major in 64-bit
//! floats, and live in an arena owned by the [`Tape`]. Operations push a new
//! node holding the forward value plus the parent links needed for the
//! reverse sweep. Batched shapes are expressed by stacking groups along the
//! row axis, which keeps every kernel a contiguous loop.

use crate::error::{Error, Result};

/// Handle to a tensor node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// Grouped matrix product: `a` is (g*m x k); `b` is (g*k x n), or
    /// (g*n x k) when `trans_b`. Output is (g*m x n).
    Matmul {
        a: TensorId,
        b: TensorId,
        groups: usize,
        trans_b: bool,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Sub {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    /// Elementwise `x * mul + add`; only `mul` matters to backward.
    Affine {
        x: TensorId,
        mul: f64,
    },
    /// Broadcast-add a (1 x cols) vector to every row.
    AddRowVec {
        x: TensorId,
        v: TensorId,
    },
    SoftmaxRows {
        x: TensorId,
    },
    /// Caches the normalized activations and inverse std from the forward
    /// pass; the backward formulas reuse both.
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu {
        x: TensorId,
    },
    Relu {
        x: TensorId,
    },
    SumAll {
        x: TensorId,
    },
    MeanAll {
        x: TensorId,
    },
    /// Same data, new extents (row-major order preserved).
    Reshape {
        x: TensorId,
    },
    /// Stack `reps` copies of `x` along the row axis.
    TileRows {
        x: TensorId,
        reps: usize,
    },
    /// (g*T x H*hd) -> (g*H*T x hd): split head columns into row groups.
    ToHeads {
        x: TensorId,
        groups: usize,
        heads: usize,
    },
    /// Inverse of `ToHeads`.
    FromHeads {
        x: TensorId,
        groups: usize,
        heads: usize,
    },
    /// Blend each row toward its own mean: (1-alpha)*x + alpha*rowmean(x).
    SmoothRows {
        x: TensorId,
        alpha: f64,
    },
    /// Kernel-3 zero-padded convolution over each row, mean-pooled over
    /// positions: out[r,c] = bias[c] + sum_j kernel[j,c] * s_j[r] / P where
    /// s_j is the tap-shifted row sum.
    ConvEmbed {
        x: TensorId,
        kernel: TensorId,
        bias: TensorId,
    },
    /// Slice each row of x (g x L) into strided windows: out row (g,t) is
    /// x[g, t*stride .. t*stride+patch], rows t grouped under their source
    /// row. Out-of-range reads (padded final window) are zeros.
    Patchify {
        x: TensorId,
        patch: usize,
        stride: usize,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Arena of tensor nodes in topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Gradient buffer, present on `requires_grad` nodes after [`Tape::backward`].
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Move gradients out of the tape for the given nodes.
    pub fn take_grads(&mut self, ids: &[TensorId]) -> Vec<Option<Vec<f64>>> {
        ids.iter().map(|id| self.grads[id.0].take()).collect()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            rows,
            cols,
            data,
            requires_grad,
            op,
        });
        self.grads.push(None);
        TensorId(self.nodes.len() - 1)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input node.
    pub fn leaf(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Result<TensorId> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArg(format!(
                "leaf: {} values cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(self.push(rows, cols, data, false, Op::Leaf))
    }

    /// Trainable input node: participates in backward.
    pub fn param(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Result<TensorId> {
        let id = self.leaf(data, rows, cols)?;
        self.nodes[id.0].requires_grad = true;
        Ok(id)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bmm(a, b, 1, false)
    }

    /// Grouped matrix product; see [`Op::Matmul`] for the layout contract.
    pub fn bmm(&mut self, a: TensorId, b: TensorId, groups: usize, trans_b: bool) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: vec![ar, ac],
            rhs: vec![br, bc],
        };
        if groups == 0 || ar % groups != 0 {
            return Err(mismatch());
        }
        let m = ar / groups;
        let k = ac;
        let n = if trans_b {
            if br % groups != 0 || bc != k {
                return Err(mismatch());
            }
            br / groups
        } else {
            if br != groups * k {
                return Err(mismatch());
            }
            bc
        };
        let mut out = vec![0.0; groups * m * n];
        {
            let pa = &self.nodes[a.0].data;
            let pb = &self.nodes[b.0].data;
            for g in 0..groups {
                let ag = &pa[g * m * k..(g + 1) * m * k];
                let og = &mut out[g * m * n..(g + 1) * m * n];
                if trans_b {
                    let bt = transpose(&pb[g * n * k..(g + 1) * n * k], n, k);
                    matmul_acc(og, ag, &bt, m, k, n);
                } else {
                    matmul_acc(og, ag, &pb[g * k * n..(g + 1) * k * n], m, k, n);
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(groups * m, n, out, rg, Op::Matmul { a, b, groups, trans_b }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let data = self.elementwise("add", a, b, |x, y| x + y)?;
        let rg = self.requires(a) || self.requires(b);
        let (r, c) = self.shape(a);
        Ok(self.push(r, c, data, rg, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let data = self.elementwise("sub", a, b, |x, y| x - y)?;
        let rg = self.requires(a) || self.requires(b);
        let (r, c) = self.shape(a);
        Ok(self.push(r, c, data, rg, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let data = self.elementwise("mul", a, b, |x, y| x * y)?;
        let rg = self.requires(a) || self.requires(b);
        let (r, c) = self.shape(a);
        Ok(self.push(r, c, data, rg, Op::Mul { a, b }))
    }

    fn elementwise(
        &self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![ar, ac],
                rhs: vec![br, bc],
            });
        }
        let pa = &self.nodes[a.0].data;
        let pb = &self.nodes[b.0].data;
        Ok(pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn affine(&mut self, x: TensorId, mul: f64, add: f64) -> TensorId {
        let (r, c) = self.shape(x);
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| v * mul + add).collect();
        let rg = self.requires(x);
        self.push(r, c, data, rg, Op::Affine { x, mul })
    }

    pub fn add_row_vec(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(x);
        let (vr, vc) = self.shape(v);
        if vr != 1 || vc != c {
            return Err(Error::ShapeMismatch {
                op: "add_row_vec",
                lhs: vec![r, c],
                rhs: vec![vr, vc],
            });
        }
        let mut data = self.nodes[x.0].data.clone();
        let pv = &self.nodes[v.0].data;
        for row in data.chunks_exact_mut(c) {
            for (d, &b) in row.iter_mut().zip(pv) {
                *d += b;
            }
        }
        let rg = self.requires(x) || self.requires(v);
        Ok(self.push(r, c, data, rg, Op::AddRowVec { x, v }))
    }

    /// Row-wise softmax with max-subtraction. Rejects non-finite inputs.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(x);
        if c == 0 {
            return Err(Error::InvalidArg("softmax_rows: empty rows".into()));
        }
        let px = &self.nodes[x.0].data;
        if !px.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("softmax_rows input"));
        }
        let mut data = vec![0.0; r * c];
        for (orow, xrow) in data.chunks_exact_mut(c).zip(px.chunks_exact(c)) {
            let max = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in orow.iter_mut().zip(xrow) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.requires(x);
        Ok(self.push(r, c, data, rg, Op::SoftmaxRows { x }))
    }

    /// Per-row standardization with affine gain/bias, epsilon inside the sqrt.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> Result<TensorId> {
        let (r, c) = self.shape(x);
        for (id, name) in [(gain, "gain"), (bias, "bias")] {
            let (vr, vc) = self.shape(id);
            if vr != 1 || vc != c {
                return Err(Error::ShapeMismatch {
                    op: if name == "gain" { "layer_norm gain" } else { "layer_norm bias" },
                    lhs: vec![r, c],
                    rhs: vec![vr, vc],
                });
            }
        }
        let px = &self.nodes[x.0].data;
        let pg = &self.nodes[gain.0].data;
        let pb = &self.nodes[bias.0].data;
        let mut data = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let xrow = &px[i * c..(i + 1) * c];
            let mean = xrow.iter().sum::<f64>() / c as f64;
            let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (xrow[j] - mean) * inv;
                xhat[i * c + j] = h;
                data[i * c + j] = pg[j] * h + pb[j];
            }
        }
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        Ok(self.push(r, c, data, rg, Op::LayerNorm { x, gain, bias, xhat, inv_std }))
    }

    /// Tanh-approximation GELU, elementwise.
    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| gelu_scalar(v)).collect();
        let rg = self.requires(x);
        self.push(r, c, data, rg, Op::Gelu { x })
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| v.max(0.0)).collect();
        let rg = self.requires(x);
        self.push(r, c, data, rg, Op::Relu { x })
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s = self.nodes[x.0].data.iter().sum();
        let rg = self.requires(x);
        self.push(1, 1, vec![s], rg, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.nodes[x.0].data.len();
        let s: f64 = self.nodes[x.0].data.iter().sum();
        let rg = self.requires(x);
        self.push(1, 1, vec![s / n as f64], rg, Op::MeanAll { x })
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }

    pub fn reshape(&mut self, x: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        let (r, c) = self.shape(x);
        if r * c != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: vec![r, c],
                rhs: vec![rows, cols],
            });
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.requires(x);
        Ok(self.push(rows, cols, data, rg, Op::Reshape { x }))
    }

    pub fn tile_rows(&mut self, x: TensorId, reps: usize) -> TensorId {
        let (r, c) = self.shape(x);
        let mut data = Vec::with_capacity(reps * r * c);
        for _ in 0..reps {
            data.extend_from_slice(&self.nodes[x.0].data);
        }
        let rg = self.requires(x);
        self.push(reps * r, c, data, rg, Op::TileRows { x, reps })
    }

    pub fn to_heads(&mut self, x: TensorId, groups: usize, heads: usize) -> Result<TensorId> {
        let (r, c) = self.shape(x);
        if groups == 0 || heads == 0 || r % groups != 0 || c % heads != 0 {
            return Err(Error::ShapeMismatch {
                op: "to_heads",
                lhs: vec![r, c],
                rhs: vec![groups, heads],
            });
        }
        let tokens = r / groups;
        let hd = c / heads;
        let px = &self.nodes[x.0].data;
        let mut data = vec![0.0; r * c];
        for g in 0..groups {
            for h in 0..heads {
                for t in 0..tokens {
                    let src = (g * tokens + t) * c + h * hd;
                    let dst = ((g * heads + h) * tokens + t) * hd;
                    data[dst..dst + hd].copy_from_slice(&px[src..src + hd]);
                }
            }
        }
        let rg = self.requires(x);
        Ok(self.push(groups * heads * tokens, hd, data, rg, Op::ToHeads { x, groups, heads }))
    }

    pub fn from_heads(&mut self, x: TensorId, groups: usize, heads: usize) -> Result<TensorId> {
        let (r, hd) = self.shape(x);
        if groups == 0 || heads == 0 || r % (groups * heads) != 0 {
            return Err(Error::ShapeMismatch {
                op: "from_heads",
                lhs: vec![r, hd],
                rhs: vec![groups, heads],
            });
        }
        let tokens = r / (groups * heads);
        let c = heads * hd;
        let px = &self.nodes[x.0].data;
        let mut data = vec![0.0; r * hd];
        for g in 0..groups {
            for h in 0..heads {
                for t in 0..tokens {
                    let src = ((g * heads + h) * tokens + t) * hd;
                    let dst = (g * tokens + t) * c + h * hd;
                    data[dst..dst + hd].copy_from_slice(&px[src..src + hd]);
                }
            }
        }
        let rg = self.requires(x);
        Ok(self.push(groups * tokens, c, data, rg, Op::FromHeads { x, groups, heads }))
    }

    /// `(1-alpha)*x + alpha*rowmean(x)` broadcast back over each row.
    pub fn smooth_rows(&mut self, x: TensorId, alpha: f64) -> Result<TensorId> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArg(format!("smooth_rows: alpha {alpha} outside [0,1]")));
        }
        let (r, c) = self.shape(x);
        let px = &self.nodes[x.0].data;
        let mut data = vec![0.0; r * c];
        for (orow, xrow) in data.chunks_exact_mut(c).zip(px.chunks_exact(c)) {
            let mean = xrow.iter().sum::<f64>() / c as f64;
            for (o, &v) in orow.iter_mut().zip(xrow) {
                *o = (1.0 - alpha) * v + alpha * mean;
            }
        }
        let rg = self.requires(x);
        Ok(self.push(r, c, data, rg, Op::SmoothRows { x, alpha }))
    }

    /// See [`Op::ConvEmbed`]. `x`: (R x P), `kernel`: (3 x d), `bias`: (1 x d).
    pub fn conv_embed(&mut self, x: TensorId, kernel: TensorId, bias: TensorId) -> Result<TensorId> {
        let (r, p) = self.shape(x);
        let (kr, d) = self.shape(kernel);
        let (br, bc) = self.shape(bias);
        if kr != 3 || br != 1 || bc != d {
            return Err(Error::ShapeMismatch {
                op: "conv_embed",
                lhs: vec![kr, d],
                rhs: vec![br, bc],
            });
        }
        let px = &self.nodes[x.0].data;
        let pk = &self.nodes[kernel.0].data;
        let pb = &self.nodes[bias.0].data;
        let inv_p = 1.0 / p as f64;
        let mut data = vec![0.0; r * d];
        for i in 0..r {
            let xrow = &px[i * p..(i + 1) * p];
            let s1: f64 = xrow.iter().sum();
            let s0 = s1 - xrow[p - 1];
            let s2 = s1 - xrow[0];
            let orow = &mut data[i * d..(i + 1) * d];
            for c in 0..d {
                orow[c] = pb[c] + (s0 * pk[c] + s1 * pk[d + c] + s2 * pk[2 * d + c]) * inv_p;
            }
        }
        let rg = self.requires(x) || self.requires(kernel) || self.requires(bias);
        Ok(self.push(r, d, data, rg, Op::ConvEmbed { x, kernel, bias }))
    }

    /// Cut every row of `x` (g x L) into windows of `patch` steps taken every
    /// `stride` steps, producing (g*T x patch). Without `pad` the trailing
    /// remainder is dropped; with it one extra zero-padded window covers it.
    pub fn patchify(&mut self, x: TensorId, patch: usize, stride: usize, pad: bool) -> Result<TensorId> {
        let (g, l) = self.shape(x);
        if patch == 0 || stride == 0 || patch > l {
            return Err(Error::InvalidArg(format!(
                "patchify: patch {patch} / stride {stride} invalid for row length {l}"
            )));
        }
        let mut t = (l - patch) / stride + 1;
        if pad && (l - patch) % stride != 0 {
            t += 1;
        }
        let px = &self.nodes[x.0].data;
        let mut data = vec![0.0; g * t * patch];
        for gi in 0..g {
            let xrow = &px[gi * l..(gi + 1) * l];
            for ti in 0..t {
                let start = ti * stride;
                let take = patch.min(l - start);
                let dst = (gi * t + ti) * patch;
                data[dst..dst + take].copy_from_slice(&xrow[start..start + take]);
            }
        }
        let rg = self.requires(x);
        Ok(self.push(g * t, patch, data, rg, Op::Patchify { x, patch, stride }))
    }

    /// Reverse sweep from a scalar loss. Accumulates gradients into every
    /// `requires_grad` ancestor; intermediate gradients are consumed as the
    /// sweep passes them.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::InvalidArg(format!(
                "backward: loss must be scalar, got {r}x{c}"
            )));
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
        }
        Ok(())
    }

    fn accum(&mut self, id: TensorId, f: impl FnOnce(&mut [f64], &Tape)) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let numel = self.nodes[id.0].data.len();
        let mut buf = self.grads[id.0].take().unwrap_or_else(|| vec![0.0; numel]);
        f(&mut buf, self);
        self.grads[id.0] = Some(buf);
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // The enum is small and ops read only earlier nodes, so matching on a
        // snapshot of the op fields keeps the borrows simple.
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Matmul { a, b, groups, trans_b } => {
                let m = self.nodes[i].rows / groups;
                let n = self.nodes[i].cols;
                let k = self.nodes[a.0].cols;
                self.accum(a, |da, t| {
                    let pb = &t.nodes[b.0].data;
                    for gi in 0..groups {
                        let dg = &g[gi * m * n..(gi + 1) * m * n];
                        let dag = &mut da[gi * m * k..(gi + 1) * m * k];
                        if trans_b {
                            // dA = dC * B
                            matmul_acc(dag, dg, &pb[gi * n * k..(gi + 1) * n * k], m, n, k);
                        } else {
                            let bt = transpose(&pb[gi * k * n..(gi + 1) * k * n], k, n);
                            matmul_acc(dag, dg, &bt, m, n, k);
                        }
                    }
                });
                self.accum(b, |db, t| {
                    let pa = &t.nodes[a.0].data;
                    for gi in 0..groups {
                        let dg = &g[gi * m * n..(gi + 1) * m * n];
                        let ag = &pa[gi * m * k..(gi + 1) * m * k];
                        if trans_b {
                            // dB = dC^T * A, accumulated row-by-row
                            let dbg = &mut db[gi * n * k..(gi + 1) * n * k];
                            for r in 0..m {
                                let arow = &ag[r * k..(r + 1) * k];
                                let grow = &dg[r * n..(r + 1) * n];
                                for j in 0..n {
                                    let w = grow[j];
                                    if w != 0.0 {
                                        let brow = &mut dbg[j * k..(j + 1) * k];
                                        for (o, &v) in brow.iter_mut().zip(arow) {
                                            *o += w * v;
                                        }
                                    }
                                }
                            }
                        } else {
                            // dB = A^T * dC, accumulated row-by-row
                            let dbg = &mut db[gi * k * n..(gi + 1) * k * n];
                            for r in 0..m {
                                let arow = &ag[r * k..(r + 1) * k];
                                let grow = &dg[r * n..(r + 1) * n];
                                for (p, &w) in arow.iter().enumerate() {
                                    if w != 0.0 {
                                        let brow = &mut dbg[p * n..(p + 1) * n];
                                        for (o, &v) in brow.iter_mut().zip(grow) {
                                            *o += w * v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            &Op::Add { a, b } => {
                self.accum(a, |da, _| add_into(da, g));
                self.accum(b, |db, _| add_into(db, g));
            }
            &Op::Sub { a, b } => {
                self.accum(a, |da, _| add_into(da, g));
                self.accum(b, |db, _| {
                    for (o, &v) in db.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            &Op::Mul { a, b } => {
                self.accum(a, |da, t| {
                    for ((o, &v), &w) in da.iter_mut().zip(g).zip(&t.nodes[b.0].data) {
                        *o += v * w;
                    }
                });
                self.accum(b, |db, t| {
                    for ((o, &v), &w) in db.iter_mut().zip(g).zip(&t.nodes[a.0].data) {
                        *o += v * w;
                    }
                });
            }
            &Op::Affine { x, mul } => {
                self.accum(x, |dx, _| {
                    for (o, &v) in dx.iter_mut().zip(g) {
                        *o += v * mul;
                    }
                });
            }
            &Op::AddRowVec { x, v } => {
                let c = self.nodes[i].cols;
                self.accum(x, |dx, _| add_into(dx, g));
                self.accum(v, |dv, _| {
                    for grow in g.chunks_exact(c) {
                        add_into(dv, grow);
                    }
                });
            }
            &Op::SoftmaxRows { x } => {
                let c = self.nodes[i].cols;
                let y = &self.nodes[i].data;
                let mut dx_full = vec![0.0; y.len()];
                for ((dxrow, yrow), grow) in dx_full
                    .chunks_exact_mut(c)
                    .zip(y.chunks_exact(c))
                    .zip(g.chunks_exact(c))
                {
                    let dot: f64 = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        dxrow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accum(x, |dx, _| add_into(dx, &dx_full));
            }
            Op::LayerNorm { x, gain, bias, .. } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let c = self.nodes[i].cols;
                let (xhat, inv_std) = match &self.nodes[i].op {
                    Op::LayerNorm { xhat, inv_std, .. } => (xhat.clone(), inv_std.clone()),
                    _ => unreachable!(),
                };
                self.accum(gain, |dg, _| {
                    for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                });
                self.accum(bias, |db, _| {
                    for grow in g.chunks_exact(c) {
                        add_into(db, grow);
                    }
                });
                self.accum(x, |dx, t| {
                    let pg = &t.nodes[gain.0].data;
                    for (r, (grow, hrow)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let a = grow[j] * pg[j];
                            m1 += a;
                            m2 += a * hrow[j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        let inv = inv_std[r];
                        let dxrow = &mut dx[r * c..(r + 1) * c];
                        for j in 0..c {
                            let a = grow[j] * pg[j];
                            dxrow[j] += inv * (a - m1 - hrow[j] * m2);
                        }
                    }
                });
            }
            &Op::Gelu { x } => {
                self.accum(x, |dx, t| {
                    for ((o, &v), &xi) in dx.iter_mut().zip(g).zip(&t.nodes[x.0].data) {
                        *o += v * gelu_grad_scalar(xi);
                    }
                });
            }
            &Op::Relu { x } => {
                self.accum(x, |dx, t| {
                    for ((o, &v), &xi) in dx.iter_mut().zip(g).zip(&t.nodes[x.0].data) {
                        if xi > 0.0 {
                            *o += v;
                        }
                    }
                });
            }
            &Op::SumAll { x } => {
                let gv = g[0];
                self.accum(x, |dx, _| {
                    for o in dx.iter_mut() {
                        *o += gv;
                    }
                });
            }
            &Op::MeanAll { x } => {
                let n = self.nodes[x.0].data.len();
                let gv = g[0] / n as f64;
                self.accum(x, |dx, _| {
                    for o in dx.iter_mut() {
                        *o += gv;
                    }
                });
            }
            &Op::Reshape { x } => {
                self.accum(x, |dx, _| add_into(dx, g));
            }
            &Op::TileRows { x, reps } => {
                let numel = self.nodes[x.0].data.len();
                self.accum(x, |dx, _| {
                    for rep in 0..reps {
                        add_into(dx, &g[rep * numel..(rep + 1) * numel]);
                    }
                });
            }
            &Op::ToHeads { x, groups, heads } => {
                let c = self.nodes[x.0].cols;
                let tokens = self.nodes[x.0].rows / groups;
                let hd = c / heads;
                self.accum(x, |dx, _| {
                    for gi in 0..groups {
                        for h in 0..heads {
                            for t in 0..tokens {
                                let dst = (gi * tokens + t) * c + h * hd;
                                let src = ((gi * heads + h) * tokens + t) * hd;
                                for j in 0..hd {
                                    dx[dst + j] += g[src + j];
                                }
                            }
                        }
                    }
                });
            }
            &Op::FromHeads { x, groups, heads } => {
                let hd = self.nodes[x.0].cols;
                let tokens = self.nodes[x.0].rows / (groups * heads);
                let c = heads * hd;
                self.accum(x, |dx, _| {
                    for gi in 0..groups {
                        for h in 0..heads {
                            for t in 0..tokens {
                                let dst = ((gi * heads + h) * tokens + t) * hd;
                                let src = (gi * tokens + t) * c + h * hd;
                                for j in 0..hd {
                                    dx[dst + j] += g[src + j];
                                }
                            }
                        }
                    }
                });
            }
            &Op::SmoothRows { x, alpha } => {
                let c = self.nodes[i].cols;
                self.accum(x, |dx, _| {
                    for (dxrow, grow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                        let mean = grow.iter().sum::<f64>() / c as f64;
                        for (o, &v) in dxrow.iter_mut().zip(grow) {
                            *o += (1.0 - alpha) * v + alpha * mean;
                        }
                    }
                });
            }
            &Op::ConvEmbed { x, kernel, bias } => {
                let p = self.nodes[x.0].cols;
                let d = self.nodes[i].cols;
                let rows = self.nodes[x.0].rows;
                let inv_p = 1.0 / p as f64;
                self.accum(kernel, |dk, t| {
                    let px = &t.nodes[x.0].data;
                    for r in 0..rows {
                        let xrow = &px[r * p..(r + 1) * p];
                        let s1: f64 = xrow.iter().sum();
                        let s0 = s1 - xrow[p - 1];
                        let s2 = s1 - xrow[0];
                        let grow = &g[r * d..(r + 1) * d];
                        for c in 0..d {
                            let gv = grow[c] * inv_p;
                            dk[c] += s0 * gv;
                            dk[d + c] += s1 * gv;
                            dk[2 * d + c] += s2 * gv;
                        }
                    }
                });
                self.accum(bias, |db, _| {
                    for grow in g.chunks_exact(d) {
                        add_into(db, grow);
                    }
                });
                self.accum(x, |dx, t| {
                    let pk = &t.nodes[kernel.0].data;
                    for r in 0..rows {
                        let grow = &g[r * d..(r + 1) * d];
                        let mut g0 = 0.0;
                        let mut g1 = 0.0;
                        let mut g2 = 0.0;
                        for c in 0..d {
                            g0 += grow[c] * pk[c];
                            g1 += grow[c] * pk[d + c];
                            g2 += grow[c] * pk[2 * d + c];
                        }
                        let dxrow = &mut dx[r * p..(r + 1) * p];
                        for q in 0..p {
                            let mut v = g1;
                            if q + 1 < p {
                                v += g0;
                            }
                            if q >= 1 {
                                v += g2;
                            }
                            dxrow[q] += v * inv_p;
                        }
                    }
                });
            }
            &Op::Patchify { x, patch, stride } => {
                let (gr, l) = (self.nodes[x.0].rows, self.nodes[x.0].cols);
                let t = self.nodes[i].rows / gr;
                self.accum(x, |dx, _| {
                    for gi in 0..gr {
                        let dxrow = &mut dx[gi * l..(gi + 1) * l];
                        for ti in 0..t {
                            let start = ti * stride;
                            let take = patch.min(l - start);
                            let grow = &g[(gi * t + ti) * patch..(gi * t + ti) * patch + take];
                            for (o, &v) in dxrow[start..start + take].iter_mut().zip(grow) {
                                *o += v;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

/// `c += a * b` for row-major (m x k) * (k x n); the i-k-j order keeps the
/// inner loop a contiguous multiply-add with no reductions, so results do not
/// depend on vector width.
fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in crow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
