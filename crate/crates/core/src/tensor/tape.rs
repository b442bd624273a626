use super::kernels::{col2im_add, gemm, im2col, MatRef, Window};
use super::{Axis, ParamTensor, Scalar, Shape, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf { slot: Option<usize> },
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, pad: usize },
    TransposedConv2d { input: Var, weight: Var, bias: Var, stride: usize, pad: usize },
    MaxPool2x2 { input: Var, argmax: Vec<u32> },
    Prelu { input: Var, slope: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mse { pred: Var, label: Var },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward pass so that [`Tape::backward`] can replay it in
/// reverse.
///
/// Trainable parameters enter through [`Tape::param`] with a slot index into
/// the parameter slice later handed to `backward`; their gradients are
/// accumulated into that slice. Plain inputs enter through [`Tape::input`];
/// if they require gradients, those accumulate on the tape and are read with
/// [`Tape::grad`].
#[derive(Debug, Default)]
pub struct Tape<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    leaf_grads: Vec<Option<Vec<S>>>,
}

fn dim_check(op: &'static str, axis: Axis, expected: usize, got: usize) -> Result<(), TensorError> {
    if expected != got {
        return Err(TensorError::Dimension {
            op,
            axis,
            expected,
            got,
        });
    }
    Ok(())
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<(), TensorError> {
    dim_check(op, Axis::Batch, a.n, b.n)?;
    dim_check(op, Axis::Channel, a.c, b.c)?;
    dim_check(op, Axis::Height, a.h, b.h)?;
    dim_check(op, Axis::Width, a.w, b.w)
}

/// Validates a square kernel `weight` of layout `(d0, d1, k, k)`; returns `k`.
fn kernel_size(op: &'static str, w: Shape) -> Result<usize, TensorError> {
    dim_check(op, Axis::KernelWidth, w.h, w.w)?;
    if w.h == 0 {
        return Err(TensorError::Argument {
            op,
            reason: "kernel size must be positive".into(),
        });
    }
    Ok(w.h)
}

fn bias_check(op: &'static str, b: Shape, channels: usize) -> Result<(), TensorError> {
    if b.numel() != channels {
        return Err(TensorError::Dimension {
            op,
            axis: Axis::Channel,
            expected: channels,
            got: b.numel(),
        });
    }
    Ok(())
}

/// Per-channel sum over batch and spatial positions, reduced in f64.
fn channel_sums<S: Scalar>(g: &[S], shape: Shape) -> Vec<S> {
    let plane = shape.plane();
    (0..shape.c)
        .map(|c| {
            let mut acc = 0.0f64;
            for n in 0..shape.n {
                let base = (n * shape.c + c) * plane;
                acc += g[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            S::from_f64(acc)
        })
        .collect()
}

fn add_into<S: Scalar>(dst: &mut Option<Vec<S>>, src: &[S]) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a = *a + *b;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<S>, TensorError> {
        self.nodes.get(v.0).ok_or(TensorError::NotOnTape(v.0))
    }

    fn shape_of(&self, v: Var) -> Result<Shape, TensorError> {
        Ok(self.node(v)?.value.shape())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a non-parameter input. Its gradient is tracked iff the tensor
    /// was marked with [`Tensor::with_grad`].
    pub fn input(&mut self, mut t: Tensor<S>) -> Var {
        let rg = t.requires_grad();
        t.clear_grad();
        self.push(t, Op::Leaf { slot: None }, rg)
    }

    /// Records a trainable parameter bound to `slot` of the slice later
    /// passed to [`Tape::backward`].
    pub fn param(&mut self, p: &ParamTensor<S>, slot: usize) -> Var {
        let mut value = p.tensor.clone();
        value.clear_grad();
        self.push(value, Op::Leaf { slot: Some(slot) }, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor<S>, TensorError> {
        Ok(&self.node(v)?.value)
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Argmax positions (flat offsets into the pooled input) of a max-pool
    /// output.
    pub fn pool_indices(&self, v: Var) -> Option<&[u32]> {
        match &self.nodes.get(v.0)?.op {
            Op::MaxPool2x2 { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Zero-padded 2-D cross-correlation. `weight` is `(C_out, C_in, k, k)`,
    /// `bias` holds `C_out` values.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        const OP: &str = "conv2d";
        let xs = self.shape_of(input)?;
        let ws = self.shape_of(weight)?;
        let bs = self.shape_of(bias)?;
        let k = kernel_size(OP, ws)?;
        dim_check(OP, Axis::Channel, ws.c, xs.c)?;
        bias_check(OP, bs, ws.n)?;
        if stride == 0 {
            return Err(TensorError::Argument {
                op: OP,
                reason: "stride must be positive".into(),
            });
        }
        if xs.h + 2 * pad < k {
            return Err(TensorError::Dimension { op: OP, axis: Axis::Height, expected: k, got: xs.h + 2 * pad });
        }
        if xs.w + 2 * pad < k {
            return Err(TensorError::Dimension { op: OP, axis: Axis::Width, expected: k, got: xs.w + 2 * pad });
        }
        let win = Window {
            channels: xs.c,
            h: xs.h,
            w: xs.w,
            k,
            stride,
            pad,
            out_h: (xs.h + 2 * pad - k) / stride + 1,
            out_w: (xs.w + 2 * pad - k) / stride + 1,
        };
        let out_shape = Shape::new(xs.n, ws.n, win.out_h, win.out_w);
        let mut out = vec![S::zero(); out_shape.numel()];
        let mut col = vec![S::zero(); win.rows() * win.cols()];
        {
            let x = self.value(input).data();
            let w = self.value(weight).data();
            let b = self.value(bias).data();
            let wmat = MatRef::new(w, ws.n, win.rows());
            let plane = win.cols();
            for n in 0..xs.n {
                let dst = &mut out[n * out_shape.item()..(n + 1) * out_shape.item()];
                for (co, bv) in b.iter().enumerate() {
                    dst[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v = *bv);
                }
                im2col(&x[n * xs.item()..(n + 1) * xs.item()], &win, &mut col);
                gemm(wmat, MatRef::new(&col, win.rows(), win.cols()), dst, true);
            }
        }
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Transposed convolution (the adjoint of [`Tape::conv2d`] in its input).
    /// `weight` is `(C_in, C_out, k, k)`; output size is
    /// `(H - 1) * stride - 2 * pad + k`.
    pub fn transposed_conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        const OP: &str = "transposed_conv2d";
        let xs = self.shape_of(input)?;
        let ws = self.shape_of(weight)?;
        let bs = self.shape_of(bias)?;
        let k = kernel_size(OP, ws)?;
        dim_check(OP, Axis::Channel, ws.n, xs.c)?;
        bias_check(OP, bs, ws.c)?;
        if stride == 0 {
            return Err(TensorError::Argument {
                op: OP,
                reason: "stride must be positive".into(),
            });
        }
        let full_h = (xs.h.max(1) - 1) * stride + k;
        let full_w = (xs.w.max(1) - 1) * stride + k;
        if xs.h == 0 || full_h <= 2 * pad {
            return Err(TensorError::Dimension { op: OP, axis: Axis::Height, expected: 2 * pad + 1, got: full_h });
        }
        if xs.w == 0 || full_w <= 2 * pad {
            return Err(TensorError::Dimension { op: OP, axis: Axis::Width, expected: 2 * pad + 1, got: full_w });
        }
        let (oh, ow) = (full_h - 2 * pad, full_w - 2 * pad);
        // The output plays the role of the conv input in the adjoint pair.
        let win = Window {
            channels: ws.c,
            h: oh,
            w: ow,
            k,
            stride,
            pad,
            out_h: xs.h,
            out_w: xs.w,
        };
        let out_shape = Shape::new(xs.n, ws.c, oh, ow);
        let mut out = vec![S::zero(); out_shape.numel()];
        let mut col = vec![S::zero(); win.rows() * win.cols()];
        {
            let x = self.value(input).data();
            let w = self.value(weight).data();
            let b = self.value(bias).data();
            // W viewed as (C_in, C_out*k*k); we need its transpose.
            let wt = MatRef::new(w, ws.n, win.rows()).t();
            let plane = out_shape.plane();
            for n in 0..xs.n {
                let xm = MatRef::new(&x[n * xs.item()..(n + 1) * xs.item()], xs.c, xs.plane());
                gemm(wt, xm, &mut col, false);
                let dst = &mut out[n * out_shape.item()..(n + 1) * out_shape.item()];
                for (co, bv) in b.iter().enumerate() {
                    dst[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v = *bv);
                }
                col2im_add(&col, &win, dst);
            }
        }
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(
            value,
            Op::TransposedConv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// 2x2 max-pooling with stride 2. Ties resolve to the first element in
    /// row-major order within the window.
    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var, TensorError> {
        const OP: &str = "maxpool2x2";
        let xs = self.shape_of(input)?;
        if xs.h % 2 != 0 {
            return Err(TensorError::Dimension { op: OP, axis: Axis::Height, expected: xs.h + 1, got: xs.h });
        }
        if xs.w % 2 != 0 {
            return Err(TensorError::Dimension { op: OP, axis: Axis::Width, expected: xs.w + 1, got: xs.w });
        }
        let out_shape = Shape::new(xs.n, xs.c, xs.h / 2, xs.w / 2);
        let mut out = Vec::with_capacity(out_shape.numel());
        let mut argmax = Vec::with_capacity(out_shape.numel());
        let x = self.value(input).data();
        for nc in 0..xs.n * xs.c {
            let base = nc * xs.plane();
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let o00 = base + 2 * oy * xs.w + 2 * ox;
                    let mut best = o00;
                    for cand in [o00 + 1, o00 + xs.w, o00 + xs.w + 1] {
                        if x[cand] > x[best] {
                            best = cand;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.needs(input);
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(value, Op::MaxPool2x2 { input, argmax }, rg))
    }

    /// `x` where `x >= 0`, else `slope[c] * x`.
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var, TensorError> {
        const OP: &str = "prelu";
        let xs = self.shape_of(input)?;
        let ss = self.shape_of(slope)?;
        if ss.numel() != xs.c {
            return Err(TensorError::Dimension {
                op: OP,
                axis: Axis::Channel,
                expected: xs.c,
                got: ss.numel(),
            });
        }
        let x = self.value(input).data();
        let a = self.value(slope).data();
        let plane = xs.plane();
        let mut out = Vec::with_capacity(x.len());
        for (i, chunk) in x.chunks(plane.max(1)).enumerate() {
            let s = a[i % xs.c];
            out.extend(chunk.iter().map(|&v| if v >= S::zero() { v } else { s * v }));
        }
        let rg = self.needs(input) || self.needs(slope);
        let value = Tensor::from_vec(xs, out)?;
        Ok(self.push(value, Op::Prelu { input, slope }, rg))
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        const OP: &str = "concat_channels";
        let sa = self.shape_of(a)?;
        let sb = self.shape_of(b)?;
        dim_check(OP, Axis::Batch, sa.n, sb.n)?;
        dim_check(OP, Axis::Height, sa.h, sb.h)?;
        dim_check(OP, Axis::Width, sa.w, sb.w)?;
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let mut out = Vec::with_capacity(out_shape.numel());
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for n in 0..sa.n {
            out.extend_from_slice(&da[n * sa.item()..(n + 1) * sa.item()]);
            out.extend_from_slice(&db[n * sb.item()..(n + 1) * sb.item()]);
        }
        let rg = self.needs(a) || self.needs(b);
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape_of(a)?;
        same_shape("add", sa, self.shape_of(b)?)?;
        let out: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        let value = Tensor::from_vec(sa, out)?;
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Mean of squared differences over all elements, as a `(1,1,1,1)`
    /// tensor. The sum is reduced in f64.
    pub fn mse_loss(&mut self, pred: Var, label: Var) -> Result<Var, TensorError> {
        let sp = self.shape_of(pred)?;
        same_shape("mse_loss", sp, self.shape_of(label)?)?;
        if sp.numel() == 0 {
            return Err(TensorError::Argument {
                op: "mse_loss",
                reason: "empty tensors".into(),
            });
        }
        let sum: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(label).data())
            .map(|(p, l)| {
                let d = p.as_f64() - l.as_f64();
                d * d
            })
            .sum();
        let loss = sum / sp.numel() as f64;
        let rg = self.needs(pred) || self.needs(label);
        Ok(self.push(Tensor::scalar(S::from_f64(loss)), Op::Mse { pred, label }, rg))
    }

    /// Propagates d(loss)/d(·) back through the tape. Parameter gradients are
    /// added to `params[slot].tensor`; input-leaf gradients accumulate on the
    /// tape. Calling twice without zeroing doubles every gradient.
    pub fn backward(&mut self, loss: Var, params: &mut [ParamTensor<S>]) -> Result<(), TensorError> {
        let ls = self.shape_of(loss)?;
        if ls.numel() != 1 {
            return Err(TensorError::NotScalar(ls));
        }
        for node in &self.nodes[..=loss.0] {
            if let Op::Leaf { slot: Some(slot) } = node.op {
                if slot >= params.len() {
                    return Err(TensorError::ParamSlot {
                        slot,
                        len: params.len(),
                    });
                }
            }
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Leaf { slot: Some(slot) } => params[*slot].tensor.accumulate_grad(&g),
                Op::Leaf { slot: None } => add_into(&mut self.leaf_grads[idx], &g),
                op => self.backward_op(op, idx, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn backward_op(&self, op: &Op, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let out_shape = self.nodes[idx].value.shape();
        match *op {
            Op::Leaf { .. } => unreachable!(),
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let xs = self.value(input).shape();
                let ws = self.value(weight).shape();
                let win = Window {
                    channels: xs.c,
                    h: xs.h,
                    w: xs.w,
                    k: ws.h,
                    stride,
                    pad,
                    out_h: out_shape.h,
                    out_w: out_shape.w,
                };
                let x = self.value(input).data();
                let w = self.value(weight).data();
                let mut col = vec![S::zero(); win.rows() * win.cols()];
                let mut dw = self.needs(weight).then(|| vec![S::zero(); ws.numel()]);
                let mut dx = self.needs(input).then(|| vec![S::zero(); xs.numel()]);
                for n in 0..xs.n {
                    let gn = MatRef::new(&g[n * out_shape.item()..(n + 1) * out_shape.item()], ws.n, win.cols());
                    if let Some(dw) = dw.as_mut() {
                        im2col(&x[n * xs.item()..(n + 1) * xs.item()], &win, &mut col);
                        gemm(gn, MatRef::new(&col, win.rows(), win.cols()).t(), dw, true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(MatRef::new(w, ws.n, win.rows()).t(), gn, &mut col, false);
                        col2im_add(&col, &win, &mut dx[n * xs.item()..(n + 1) * xs.item()]);
                    }
                }
                if let Some(dw) = dw {
                    add_into(&mut grads[weight.0], &dw);
                }
                if let Some(dx) = dx {
                    add_into(&mut grads[input.0], &dx);
                }
                if self.needs(bias) {
                    add_into(&mut grads[bias.0], &channel_sums(g, out_shape));
                }
            }
            Op::TransposedConv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let xs = self.value(input).shape();
                let ws = self.value(weight).shape();
                let win = Window {
                    channels: ws.c,
                    h: out_shape.h,
                    w: out_shape.w,
                    k: ws.h,
                    stride,
                    pad,
                    out_h: xs.h,
                    out_w: xs.w,
                };
                let x = self.value(input).data();
                let w = self.value(weight).data();
                let mut col = vec![S::zero(); win.rows() * win.cols()];
                let mut dw = self.needs(weight).then(|| vec![S::zero(); ws.numel()]);
                let mut dx = self.needs(input).then(|| vec![S::zero(); xs.numel()]);
                for n in 0..xs.n {
                    if dw.is_none() && dx.is_none() {
                        break;
                    }
                    im2col(&g[n * out_shape.item()..(n + 1) * out_shape.item()], &win, &mut col);
                    let cm = MatRef::new(&col, win.rows(), win.cols());
                    if let Some(dw) = dw.as_mut() {
                        let xm = MatRef::new(&x[n * xs.item()..(n + 1) * xs.item()], xs.c, xs.plane());
                        gemm(xm, cm.t(), dw, true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(
                            MatRef::new(w, ws.n, win.rows()),
                            cm,
                            &mut dx[n * xs.item()..(n + 1) * xs.item()],
                            true,
                        );
                    }
                }
                if let Some(dw) = dw {
                    add_into(&mut grads[weight.0], &dw);
                }
                if let Some(dx) = dx {
                    add_into(&mut grads[input.0], &dx);
                }
                if self.needs(bias) {
                    add_into(&mut grads[bias.0], &channel_sums(g, out_shape));
                }
            }
            Op::MaxPool2x2 { input, ref argmax } => {
                if self.needs(input) {
                    let mut dx = vec![S::zero(); self.value(input).len()];
                    for (gv, &src) in g.iter().zip(argmax) {
                        let d = &mut dx[src as usize];
                        *d = *d + *gv;
                    }
                    add_into(&mut grads[input.0], &dx);
                }
            }
            Op::Prelu { input, slope } => {
                let x = self.value(input).data();
                let a = self.value(slope).data();
                let plane = out_shape.plane().max(1);
                let c = out_shape.c;
                if self.needs(input) {
                    let dx: Vec<S> = x
                        .iter()
                        .zip(g)
                        .enumerate()
                        .map(|(i, (&xv, &gv))| if xv >= S::zero() { gv } else { a[(i / plane) % c] * gv })
                        .collect();
                    add_into(&mut grads[input.0], &dx);
                }
                if self.needs(slope) {
                    let mut da = vec![0.0f64; c];
                    for (i, (&xv, &gv)) in x.iter().zip(g).enumerate() {
                        if xv < S::zero() {
                            da[(i / plane) % c] += (xv * gv).as_f64();
                        }
                    }
                    let da: Vec<S> = da.into_iter().map(S::from_f64).collect();
                    add_into(&mut grads[slope.0], &da);
                }
            }
            Op::Concat { a, b } => {
                let sa = self.value(a).shape();
                let sb = self.value(b).shape();
                let mut ga = Vec::with_capacity(sa.numel());
                let mut gb = Vec::with_capacity(sb.numel());
                for n in 0..sa.n {
                    let base = n * out_shape.item();
                    ga.extend_from_slice(&g[base..base + sa.item()]);
                    gb.extend_from_slice(&g[base + sa.item()..base + out_shape.item()]);
                }
                if self.needs(a) {
                    add_into(&mut grads[a.0], &ga);
                }
                if self.needs(b) {
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Add { a, b } => {
                if self.needs(a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.needs(b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Mse { pred, label } => {
                let p = self.value(pred).data();
                let l = self.value(label).data();
                let scale = 2.0 * g[0].as_f64() / p.len() as f64;
                let dp: Vec<S> = p
                    .iter()
                    .zip(l)
                    .map(|(pv, lv)| S::from_f64(scale * (pv.as_f64() - lv.as_f64())))
                    .collect();
                if self.needs(label) {
                    let dl: Vec<S> = dp.iter().map(|v| -*v).collect();
                    add_into(&mut grads[label.0], &dl);
                }
                if self.needs(pred) {
                    add_into(&mut grads[pred.0], &dp);
                }
            }
        }
    }
}
