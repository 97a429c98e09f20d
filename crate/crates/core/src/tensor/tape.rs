use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{col2im_add, im2col, ConvGeom};
use super::{dims2, dims4, Real, Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::ZERO; channels],
            var: vec![T::ONE; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and fold them into the running
    /// statistics by exponential moving average.
    Train { momentum: f64 },
    /// Normalize with the running statistics.
    Eval,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        geom: ConvGeom,
        filters: usize,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        input: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    GlobalAvgPool {
        input: usize,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: Option<usize>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum {
        input: usize,
    },
    Gather {
        input: usize,
        index: Vec<usize>,
    },
    Scale {
        input: usize,
        factor: T,
    },
}

/// Accumulator for input `idx`, zero-initialized on first touch.
fn slot<T: Real>(grads: &mut [Option<Vec<T>>], idx: usize, len: usize) -> &mut Vec<T> {
    grads[idx].get_or_insert_with(|| vec![T::ZERO; len])
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records operations in execution order so that [`Tape::backward`] can walk
/// them in reverse.
///
/// Values live on the tape and are addressed through [`Var`] handles. After a
/// backward pass every tracked value (leaf or intermediate) carries its
/// gradient, which is what Grad-CAM reads off intermediate activations.
pub struct Tape<T: Real = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        Ok(&self.nodes[self.index(v)?])
    }

    /// # Panics
    /// If `v` was produced by a different tape.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).expect("value: foreign var").value
    }

    /// Gradient accumulated by the last backward pass, if `v` is tracked and
    /// was reached.
    ///
    /// # Panics
    /// If `v` was produced by a different tape.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.value(v).grad()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, tracked: bool, op: Op<T>, name: &'static str) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let value = Tensor {
            shape,
            data,
            requires_grad: tracked,
            grad: None,
        };
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Records an input. Gradients are kept for it iff the tensor has
    /// `requires_grad` set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let tracked = t.requires_grad;
        self.push(t.shape, t.data, tracked, Op::Leaf, "leaf")
            .expect("tensor invariants guarantee finite data")
    }

    fn tracked(&self, idx: usize) -> bool {
        self.nodes[idx].value.requires_grad
    }

    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (xi, ki) = (self.index(input)?, self.index(kernel)?);
        let bi = bias.map(|b| self.index(b)).transpose()?;
        let [n, c, h, w] = dims4(self.nodes[xi].value.shape(), "conv2d")?;
        let [f, kc, kh, kw] = dims4(self.nodes[ki].value.shape(), "conv2d")?;
        let err = |detail: String| TensorError::Shape { op: "conv2d", detail };
        if kc != c {
            return Err(err(format!("input has {c} channels, kernel expects {kc}")));
        }
        if stride == 0 {
            return Err(err("stride must be at least 1".into()));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(err(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        if let Some(bi) = bi {
            if self.nodes[bi].value.shape() != [f] {
                return Err(err(format!(
                    "bias shape {:?}, expected [{f}]",
                    self.nodes[bi].value.shape()
                )));
            }
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let x = self.nodes[xi].value.data();
        let k = self.nodes[ki].value.data();
        let mut out = vec![T::ZERO; n * f * cols];
        let mut col = vec![T::ZERO; rows * cols];
        for s in 0..n {
            im2col(&x[s * c * h * w..(s + 1) * c * h * w], &geom, &mut col);
            let dst = &mut out[s * f * cols..(s + 1) * f * cols];
            T::gemm(f, rows, cols, k, (rows, 1), &col, (cols, 1), dst, false);
            if let Some(bi) = bi {
                let b = self.nodes[bi].value.data();
                for (plane, &bv) in dst.chunks_mut(cols).zip(b) {
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let tracked = self.tracked(xi) || self.tracked(ki) || bi.is_some_and(|b| self.tracked(b));
        self.push(
            vec![n, f, geom.out_h, geom.out_w],
            out,
            tracked,
            Op::Conv2d {
                input: xi,
                kernel: ki,
                bias: bi,
                geom,
                filters: f,
            },
            "conv2d",
        )
    }

    /// Per-channel batch normalization over `N, H, W`.
    ///
    /// In train mode the returned [`RunningStats`] are the updated running
    /// statistics (`running ← (1−m)·running + m·batch`, unbiased variance);
    /// the caller decides whether to commit them. Eval mode returns `None`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats<T>,
        mode: BatchNormMode,
        eps: f64,
    ) -> Result<(Var, Option<RunningStats<T>>)> {
        let (xi, gi, bi) = (self.index(x)?, self.index(gamma)?, self.index(beta)?);
        let [n, c, h, w] = dims4(self.nodes[xi].value.shape(), "batch_norm")?;
        for (idx, what) in [(gi, "gamma"), (bi, "beta")] {
            if self.nodes[idx].value.shape() != [c] {
                return Err(TensorError::Shape {
                    op: "batch_norm",
                    detail: format!("{what} shape {:?}, expected [{c}]", self.nodes[idx].value.shape()),
                });
            }
        }
        if running.channels() != c || running.var.len() != c {
            return Err(TensorError::Shape {
                op: "batch_norm",
                detail: format!("running stats for {} channels, input has {c}", running.channels()),
            });
        }
        let hw = h * w;
        let count = n * hw;
        let xd = self.nodes[xi].value.data();
        let eps_t = T::from_f64(eps);
        let (mean, inv_std, updated) = match mode {
            BatchNormMode::Train { momentum } => {
                if count < 2 {
                    return Err(TensorError::DegenerateBatch(count));
                }
                let mut mean = vec![T::ZERO; c];
                let mut var = vec![T::ZERO; c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for s_i in 0..n {
                        let base = (s_i * c + ch) * hw;
                        s += xd[base..base + hw].iter().map(|v| v.to_f64()).sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut ss = 0.0f64;
                    for s_i in 0..n {
                        let base = (s_i * c + ch) * hw;
                        ss += xd[base..base + hw]
                            .iter()
                            .map(|v| {
                                let d = v.to_f64() - m;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    mean[ch] = T::from_f64(m);
                    var[ch] = T::from_f64(ss / count as f64);
                }
                let mom = T::from_f64(momentum);
                let unbias = T::from_f64(count as f64 / (count - 1) as f64);
                let updated = RunningStats {
                    mean: running
                        .mean
                        .iter()
                        .zip(&mean)
                        .map(|(&r, &b)| (T::ONE - mom) * r + mom * b)
                        .collect(),
                    var: running
                        .var
                        .iter()
                        .zip(&var)
                        .map(|(&r, &b)| (T::ONE - mom) * r + mom * b * unbias)
                        .collect(),
                };
                let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
                (mean, inv_std, Some(updated))
            }
            BatchNormMode::Eval => (
                running.mean.clone(),
                running.var.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect(),
                None,
            ),
        };
        let g = self.nodes[gi].value.data();
        let b = self.nodes[bi].value.data();
        let mut out = vec![T::ZERO; xd.len()];
        for s_i in 0..n {
            for ch in 0..c {
                let base = (s_i * c + ch) * hw;
                let (m, is, gg, bb) = (mean[ch], inv_std[ch], g[ch], b[ch]);
                for (o, &v) in out[base..base + hw].iter_mut().zip(&xd[base..base + hw]) {
                    *o = gg * (v - m) * is + bb;
                }
            }
        }
        let tracked = self.tracked(xi) || self.tracked(gi) || self.tracked(bi);
        let var = self.push(
            vec![n, c, h, w],
            out,
            tracked,
            Op::BatchNorm {
                input: xi,
                gamma: gi,
                beta: bi,
                mean,
                inv_std,
                batch_stats: updated.is_some(),
            },
            "batch_norm",
        )?;
        Ok((var, updated))
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let v = &self.nodes[xi].value;
        let out = v.data().iter().map(|&a| if a > T::ZERO { a } else { T::ZERO }).collect();
        let shape = v.shape().to_vec();
        let tracked = self.tracked(xi);
        self.push(shape, out, tracked, Op::Relu { input: xi }, "relu")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if av.shape() != bv.shape() {
            return Err(TensorError::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
            });
        }
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let shape = av.shape().to_vec();
        let tracked = self.tracked(ai) || self.tracked(bi);
        self.push(shape, out, tracked, Op::Add { a: ai, b: bi }, "add")
    }

    /// `[N, C, H, W] → [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let [n, c, h, w] = dims4(self.nodes[xi].value.shape(), "global_avg_pool")?;
        let hw = h * w;
        let scale = T::ONE / T::from_usize(hw);
        let out = self.nodes[xi]
            .value
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * scale)
            .collect();
        let tracked = self.tracked(xi);
        self.push(vec![n, c], out, tracked, Op::GlobalAvgPool { input: xi }, "global_avg_pool")
    }

    /// `x · weightᵀ + bias` for `x: [N, D]`, `weight: [K, D]`, `bias: [K]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.index(x)?, self.index(weight)?);
        let bi = bias.map(|b| self.index(b)).transpose()?;
        let [n, d] = dims2(self.nodes[xi].value.shape(), "linear")?;
        let [k, wd] = dims2(self.nodes[wi].value.shape(), "linear")?;
        if wd != d {
            return Err(TensorError::Shape {
                op: "linear",
                detail: format!("input width {d}, weight expects {wd}"),
            });
        }
        if let Some(bi) = bi {
            if self.nodes[bi].value.shape() != [k] {
                return Err(TensorError::Shape {
                    op: "linear",
                    detail: format!("bias shape {:?}, expected [{k}]", self.nodes[bi].value.shape()),
                });
            }
        }
        let mut out = vec![T::ZERO; n * k];
        T::gemm(
            n,
            d,
            k,
            self.nodes[xi].value.data(),
            (d, 1),
            self.nodes[wi].value.data(),
            (1, d),
            &mut out,
            false,
        );
        if let Some(bi) = bi {
            let b = self.nodes[bi].value.data();
            for row in out.chunks_mut(k) {
                row.iter_mut().zip(b).for_each(|(o, &bv)| *o += bv);
            }
        }
        let tracked = self.tracked(xi) || self.tracked(wi) || bi.is_some_and(|b| self.tracked(b));
        self.push(
            vec![n, k],
            out,
            tracked,
            Op::Linear {
                input: xi,
                weight: wi,
                bias: bi,
            },
            "linear",
        )
    }

    /// Batch-mean of `−log softmax(logits)[label]`, max-subtracted.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let li = self.index(logits)?;
        let [n, k] = dims2(self.nodes[li].value.shape(), "softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(TensorError::Shape {
                op: "softmax_cross_entropy",
                detail: format!("{n} rows but {} labels", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::LabelOutOfRange { label: bad, classes: k });
        }
        let data = self.nodes[li].value.data();
        let mut probs = Vec::with_capacity(n * k);
        let mut total = 0.0f64;
        for (row, &label) in data.chunks(k).zip(labels) {
            let m = row.iter().copied().fold(row[0], T::max);
            let shifted: Vec<f64> = row.iter().map(|&v| (v - m).to_f64()).collect();
            let z: f64 = shifted.iter().map(|s| s.exp()).sum();
            let lse = z.ln();
            total += lse - shifted[label];
            probs.extend(shifted.iter().map(|s| T::from_f64((s - lse).exp())));
        }
        let loss = T::from_f64(total / n as f64);
        let tracked = self.tracked(li);
        self.push(
            vec![1],
            vec![loss],
            tracked,
            Op::SoftmaxCrossEntropy {
                logits: li,
                labels: labels.to_vec(),
                probs,
            },
            "softmax_cross_entropy",
        )
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let s = self.nodes[xi].value.data().iter().copied().sum();
        let tracked = self.tracked(xi);
        self.push(vec![1], vec![s], tracked, Op::Sum { input: xi }, "sum")
    }

    /// `out[i] = x[index[i]]` over flat indices, reshaped to `shape`.
    ///
    /// Covers pure rearrangements (space-to-depth) as well as element picks.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let xi = self.index(x)?;
        let src = self.nodes[xi].value.data();
        if shape.iter().product::<usize>() != index.len() || shape.contains(&0) {
            return Err(TensorError::Shape {
                op: "gather",
                detail: format!("{} indices for shape {shape:?}", index.len()),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(TensorError::Invalid(format!(
                "gather index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let out = index.iter().map(|&i| src[i]).collect();
        let tracked = self.tracked(xi);
        self.push(shape.to_vec(), out, tracked, Op::Gather { input: xi, index }, "gather")
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let xi = self.index(x)?;
        let v = &self.nodes[xi].value;
        let out = v.data().iter().map(|&a| a * factor).collect();
        let shape = v.shape().to_vec();
        let tracked = self.tracked(xi);
        self.push(shape, out, tracked, Op::Scale { input: xi, factor }, "scale")
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients of tracked values accumulate (`+=`) across fan-out and
    /// across repeated calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.index(loss)?;
        let shape = self.nodes[li].value.shape();
        if self.nodes[li].value.numel() != 1 {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(li + 1, || None);
        grads[li] = Some(vec![T::ONE]);
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        macro_rules! acc {
            ($idx:expr) => {{
                let idx = $idx;
                slot(grads, idx, self.nodes[idx].value.numel())
            }};
        }
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                filters,
            } => {
                let (input, kernel, f) = (*input, *kernel, *filters);
                let x = self.nodes[input].value.data();
                let k = self.nodes[kernel].value.data();
                let n = self.nodes[i].value.shape()[0];
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let in_size = geom.channels * geom.height * geom.width;
                let mut col = vec![T::ZERO; rows * cols];
                if self.tracked(kernel) {
                    let dk = acc!(kernel);
                    for s in 0..n {
                        im2col(&x[s * in_size..(s + 1) * in_size], geom, &mut col);
                        let go = &g[s * f * cols..(s + 1) * f * cols];
                        T::gemm(f, cols, rows, go, (cols, 1), &col, (1, cols), dk, true);
                    }
                }
                if self.tracked(input) {
                    let dx = acc!(input);
                    for s in 0..n {
                        let go = &g[s * f * cols..(s + 1) * f * cols];
                        T::gemm(rows, f, cols, k, (1, rows), go, (cols, 1), &mut col, false);
                        col2im_add(&col, geom, &mut dx[s * in_size..(s + 1) * in_size]);
                    }
                }
                if let Some(b) = *bias {
                    if self.tracked(b) {
                        let db = acc!(b);
                        for s in 0..n {
                            for (ch, plane) in g[s * f * cols..(s + 1) * f * cols].chunks(cols).enumerate() {
                                db[ch] += plane.iter().copied().sum::<T>();
                            }
                        }
                    }
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let (input, gamma, beta) = (*input, *gamma, *beta);
                let shape = self.nodes[input].value.shape();
                let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let x = self.nodes[input].value.data();
                let gm = self.nodes[gamma].value.data();
                let count = T::from_usize(n * hw);
                // per-channel Σdy and Σdy·x̂
                let mut sum_dy = vec![T::ZERO; c];
                let mut sum_dy_xhat = vec![T::ZERO; c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        let (m, is) = (mean[ch], inv_std[ch]);
                        for (&dy, &xv) in g[base..base + hw].iter().zip(&x[base..base + hw]) {
                            sum_dy[ch] += dy;
                            sum_dy_xhat[ch] += dy * (xv - m) * is;
                        }
                    }
                }
                if self.tracked(gamma) {
                    let dg = acc!(gamma);
                    dg.iter_mut().zip(&sum_dy_xhat).for_each(|(a, &b)| *a += b);
                }
                if self.tracked(beta) {
                    let db = acc!(beta);
                    db.iter_mut().zip(&sum_dy).for_each(|(a, &b)| *a += b);
                }
                if self.tracked(input) {
                    let dx = acc!(input);
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            let (m, is, gg) = (mean[ch], inv_std[ch], gm[ch]);
                            let dst = &mut dx[base..base + hw];
                            if *batch_stats {
                                let (sd, sdx) = (sum_dy[ch] / count, sum_dy_xhat[ch] / count);
                                for ((d, &dy), &xv) in dst.iter_mut().zip(&g[base..base + hw]).zip(&x[base..base + hw]) {
                                    let xhat = (xv - m) * is;
                                    *d += gg * is * (dy - sd - xhat * sdx);
                                }
                            } else {
                                for (d, &dy) in dst.iter_mut().zip(&g[base..base + hw]) {
                                    *d += gg * is * dy;
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu { input } => {
                let input = *input;
                if self.tracked(input) {
                    let x = self.nodes[input].value.data();
                    let dx = acc!(input);
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(x) {
                        if xv > T::ZERO {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for idx in [*a, *b] {
                    if self.tracked(idx) {
                        let d = acc!(idx);
                        d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                    }
                }
            }
            Op::GlobalAvgPool { input } => {
                let input = *input;
                if self.tracked(input) {
                    let shape = self.nodes[input].value.shape();
                    let hw = shape[2] * shape[3];
                    let scale = T::ONE / T::from_usize(hw);
                    let dx = acc!(input);
                    for (plane, &gv) in dx.chunks_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|d| *d += gv * scale);
                    }
                }
            }
            Op::Linear { input, weight, bias } => {
                let (input, weight) = (*input, *weight);
                let [n, d] = [self.nodes[input].value.shape()[0], self.nodes[input].value.shape()[1]];
                let k = self.nodes[weight].value.shape()[0];
                if self.tracked(input) {
                    let w = self.nodes[weight].value.data();
                    let dx = acc!(input);
                    T::gemm(n, k, d, g, (k, 1), w, (d, 1), dx, true);
                }
                if self.tracked(weight) {
                    let x = self.nodes[input].value.data();
                    let dw = acc!(weight);
                    T::gemm(k, n, d, g, (1, k), x, (d, 1), dw, true);
                }
                if let Some(b) = *bias {
                    if self.tracked(b) {
                        let db = acc!(b);
                        for row in g.chunks(k) {
                            db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let logits = *logits;
                if self.tracked(logits) {
                    let k = self.nodes[logits].value.shape()[1];
                    let scale = g[0] / T::from_usize(labels.len());
                    let dl = acc!(logits);
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == label { T::ONE } else { T::ZERO };
                            dl[r * k + j] += (probs[r * k + j] - onehot) * scale;
                        }
                    }
                }
            }
            Op::Sum { input } => {
                let input = *input;
                if self.tracked(input) {
                    let dx = acc!(input);
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Gather { input, index } => {
                let input = *input;
                if self.tracked(input) {
                    let dx = acc!(input);
                    for (&src, &gv) in index.iter().zip(g) {
                        dx[src] += gv;
                    }
                }
            }
            Op::Scale { input, factor } => {
                let input = *input;
                if self.tracked(input) {
                    let dx = acc!(input);
                    dx.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * *factor);
                }
            }
        }
    }
}
