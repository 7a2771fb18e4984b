use super::tape::{accumulate, Node, Tape, Var};
use super::{check_shape, Real, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(super) enum Unary<R> {
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(R),
    Elu(R),
    Scale(R),
    Shift(R),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Reduce {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug)]
pub(super) enum MatMulKind {
    /// `[rows, k] x [k, n]`, with any leading dims of the lhs folded into `rows`.
    Shared { rows: usize, k: usize, n: usize },
    /// `[batch, m, k] x [batch, m, n]` with matching leading dims.
    Batched { batch: usize, m: usize, k: usize, n: usize },
}

/// Geometry of a 3D convolution over `[batch, channels, time, height, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) struct Conv3dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_size: [usize; 3],
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub out_size: [usize; 3],
}

impl Conv3dGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn out_positions(&self) -> usize {
        self.out_size.iter().product()
    }

    fn in_volume(&self) -> usize {
        self.in_channels * self.in_size.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }
}

pub(super) enum Op<R> {
    Leaf,
    Unary { input: usize, kind: Unary<R> },
    Binary { kind: Binary, a: usize, b: usize, a_map: Option<Vec<usize>>, b_map: Option<Vec<usize>> },
    MatMul { a: usize, b: usize, kind: MatMulKind },
    /// `cols` caches the forward im2col patches (per batch item) when the
    /// weight needs a gradient.
    Conv3d { input: usize, weight: usize, geom: Conv3dGeometry, cols: Option<Vec<R>> },
    Slice { input: usize, axis: usize, start: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Reshape { input: usize },
    Permute { input: usize, perm: Vec<usize> },
    Reduce { input: usize, kind: Reduce, axis: Option<usize> },
    Max { input: usize, argmax: Vec<usize> },
    Softmax { input: usize, axis: usize },
    LogSoftmax { input: usize, axis: usize },
    L2Norm { input: usize, axis: usize },
}

/// `(outer, dim, inner)` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(TensorError::shape(op, format!("cannot broadcast {:?} with {:?}", a, b))),
        };
    }
    Ok(out)
}

/// For each element of `out`, the flat offset of the element of `input`
/// that broadcasts onto it. `None` when the shapes are identical.
fn broadcast_map(input: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if input == out {
        return None;
    }
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..input.len()).rev() {
        let od = d + rank - input.len();
        strides[od] = if input[d] == 1 { 0 } else { s };
        s *= input[d];
    }
    let n: usize = out.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    Some(map)
}

#[inline]
fn at(map: &Option<Vec<usize>>, o: usize) -> usize {
    match map {
        Some(m) => m[o],
        None => o,
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::shape(op, format!("axis {} out of range for shape {:?}", axis, shape)));
    }
    Ok(())
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// `out[o] = input[map[o]]` for a permutation of axes.
fn permute_map(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = row_major_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n: usize = shape.iter().product();
    let rank = shape.len();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

const COL_CACHE_LIMIT: usize = 1 << 22;

fn im2col<R: Real>(x: &[R], g: &Conv3dGeometry, col: &mut [R]) {
    let [t, h, w] = g.in_size;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [ot, oh, ow] = g.out_size;
    let p = g.out_positions();
    for ci in 0..g.in_channels {
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = ((ci * kt + dt) * kh + dh) * kw + dw;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for a in 0..ot {
                        let it = (a * st + dt) as isize - pt as isize;
                        for b in 0..oh {
                            let ih = (b * sh + dh) as isize - ph as isize;
                            let base = (a * oh + b) * ow;
                            if it < 0 || it >= t as isize || ih < 0 || ih >= h as isize {
                                dst[base..base + ow].iter_mut().for_each(|v| *v = R::zero());
                                continue;
                            }
                            let src = ((ci * t + it as usize) * h + ih as usize) * w;
                            for c in 0..ow {
                                let iw = (c * sw + dw) as isize - pw as isize;
                                dst[base + c] = if iw < 0 || iw >= w as isize { R::zero() } else { x[src + iw as usize] };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<R: Real>(col: &[R], g: &Conv3dGeometry, dx: &mut [R]) {
    let [t, h, w] = g.in_size;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [ot, oh, ow] = g.out_size;
    let p = g.out_positions();
    for ci in 0..g.in_channels {
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = ((ci * kt + dt) * kh + dh) * kw + dw;
                    let src = &col[row * p..(row + 1) * p];
                    for a in 0..ot {
                        let it = (a * st + dt) as isize - pt as isize;
                        if it < 0 || it >= t as isize {
                            continue;
                        }
                        for b in 0..oh {
                            let ih = (b * sh + dh) as isize - ph as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let base = (a * oh + b) * ow;
                            let dst = ((ci * t + it as usize) * h + ih as usize) * w;
                            for c in 0..ow {
                                let iw = (c * sw + dw) as isize - pw as isize;
                                if iw >= 0 && iw < w as isize {
                                    dx[dst + iw as usize] = dx[dst + iw as usize] + src[base + c];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<R: Real> Tape<R> {
    fn record(&mut self, op_name: &'static str, value: Vec<R>, shape: Vec<usize>, op: Op<R>, inputs: &[usize]) -> Result<Var> {
        self.finite_guard(op_name, &value)?;
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push_node(Node { value, shape, op, needs_grad }))
    }

    fn unary(&mut self, name: &'static str, x: Var, kind: Unary<R>) -> Result<Var> {
        let node = self.node(x)?;
        let zero = R::zero();
        let one = R::one();
        let value: Vec<R> = match kind {
            Unary::Exp => node.value.iter().map(|v| v.exp()).collect(),
            Unary::Log => {
                if let Some(bad) = node.value.iter().find(|v| !(**v > zero)) {
                    return Err(TensorError::domain("log", format!("input {} is not positive", bad)));
                }
                node.value.iter().map(|v| v.ln()).collect()
            }
            Unary::Tanh => node.value.iter().map(|v| v.tanh()).collect(),
            Unary::Sigmoid => node.value.iter().map(|&v| sigmoid(v)).collect(),
            Unary::Relu => node.value.iter().map(|&v| if v > zero { v } else { zero }).collect(),
            Unary::LeakyRelu(a) => node.value.iter().map(|&v| if v > zero { v } else { a * v }).collect(),
            Unary::Elu(a) => node.value.iter().map(|&v| if v > zero { v } else { a * (v.exp() - one) }).collect(),
            Unary::Scale(c) => node.value.iter().map(|&v| v * c).collect(),
            Unary::Shift(c) => node.value.iter().map(|&v| v + c).collect(),
        };
        let shape = node.shape.clone();
        self.record(name, value, shape, Op::Unary { input: x.idx, kind }, &[x.idx])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, Unary::Exp)
    }

    /// Natural log; non-positive inputs are a domain error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, Unary::Log)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: R) -> Result<Var> {
        self.unary("leaky_relu", x, Unary::LeakyRelu(slope))
    }

    pub fn elu(&mut self, x: Var, alpha: R) -> Result<Var> {
        self.unary("elu", x, Unary::Elu(alpha))
    }

    pub fn scale(&mut self, x: Var, c: R) -> Result<Var> {
        self.unary("scale", x, Unary::Scale(c))
    }

    pub fn shift(&mut self, x: Var, c: R) -> Result<Var> {
        self.unary("shift", x, Unary::Shift(c))
    }

    fn binary(&mut self, name: &'static str, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        let shape = broadcast_shape(name, &na.shape, &nb.shape)?;
        let a_map = broadcast_map(&na.shape, &shape);
        let b_map = broadcast_map(&nb.shape, &shape);
        let n: usize = shape.iter().product();
        let (va, vb) = (&na.value, &nb.value);
        let mut value = Vec::with_capacity(n);
        for o in 0..n {
            let (x, y) = (va[at(&a_map, o)], vb[at(&b_map, o)]);
            value.push(match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => {
                    if y == R::zero() {
                        return Err(TensorError::domain("div", "division by zero"));
                    }
                    x / y
                }
            });
        }
        self.record(name, value, shape, Op::Binary { kind, a: a.idx, b: b.idx, a_map, b_map }, &[a.idx, b.idx])
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", Binary::Mul, a, b)
    }

    /// Elementwise quotient; a zero divisor is a domain error.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", Binary::Div, a, b)
    }

    /// Matrix product. A rank-2 rhs is shared across all leading dims of the
    /// lhs; otherwise both operands must agree on their leading dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        let (sa, sb) = (&na.shape, &nb.shape);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TensorError::shape("matmul", format!("operands must be at least rank 2, got {:?} and {:?}", sa, sb)));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(TensorError::shape("matmul", format!("inner dimensions differ: {:?} x {:?}", sa, sb)));
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let (kind, value) = if sb.len() == 2 {
            let rows = na.value.len() / k;
            let mut out = vec![R::zero(); rows * n];
            R::gemm(rows, k, n, R::one(), &na.value, (k as isize, 1), &nb.value, (n as isize, 1), R::zero(), &mut out, (n as isize, 1));
            (MatMulKind::Shared { rows, k, n }, out)
        } else {
            if sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(TensorError::shape("matmul", format!("batch dimensions differ: {:?} x {:?}", sa, sb)));
            }
            let batch: usize = sa[..sa.len() - 2].iter().product();
            let mut out = vec![R::zero(); batch * m * n];
            for i in 0..batch {
                R::gemm(
                    m,
                    k,
                    n,
                    R::one(),
                    &na.value[i * m * k..(i + 1) * m * k],
                    (k as isize, 1),
                    &nb.value[i * k * n..(i + 1) * k * n],
                    (n as isize, 1),
                    R::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                    (n as isize, 1),
                );
            }
            (MatMulKind::Batched { batch, m, k, n }, out)
        };
        self.record("matmul", value, shape, Op::MatMul { a: a.idx, b: b.idx, kind }, &[a.idx, b.idx])
    }

    /// 3D convolution without bias. `input` is `[B, Cin, T, H, W]`, `weight`
    /// is `[Cout, Cin, kT, kH, kW]`.
    pub fn conv3d(&mut self, input: Var, weight: Var, stride: [usize; 3], padding: [usize; 3]) -> Result<Var> {
        let (ni, nw) = (self.node(input)?, self.node(weight)?);
        let (si, sw) = (&ni.shape, &nw.shape);
        if si.len() != 5 || sw.len() != 5 {
            return Err(TensorError::shape("conv3d", format!("expected rank-5 input and weight, got {:?} and {:?}", si, sw)));
        }
        if si[1] != sw[1] {
            return Err(TensorError::shape("conv3d", format!("input has {} channels, weight expects {}", si[1], sw[1])));
        }
        if stride.contains(&0) {
            return Err(TensorError::shape("conv3d", "stride must be positive"));
        }
        let mut out_size = [0; 3];
        for d in 0..3 {
            let span = si[2 + d] + 2 * padding[d];
            if span < sw[2 + d] {
                return Err(TensorError::shape("conv3d", format!("kernel {:?} larger than padded input {:?}", &sw[2..], &si[2..])));
            }
            out_size[d] = (span - sw[2 + d]) / stride[d] + 1;
        }
        let geom = Conv3dGeometry {
            batch: si[0],
            in_channels: si[1],
            in_size: [si[2], si[3], si[4]],
            out_channels: sw[0],
            kernel: [sw[2], sw[3], sw[4]],
            stride,
            padding,
            out_size,
        };
        let (kdim, p, vol) = (geom.patch_len(), geom.out_positions(), geom.in_volume());
        let cout = geom.out_channels;
        let mut out = vec![R::zero(); geom.batch * cout * p];
        // Large patch buffers cost more in page faults than recomputing them.
        let keep = nw.needs_grad && !geom.is_pointwise() && geom.batch * kdim * p <= COL_CACHE_LIMIT;
        let mut cols = if keep { vec![R::zero(); geom.batch * kdim * p] } else { Vec::new() };
        let mut col = if geom.is_pointwise() || keep { Vec::new() } else { vec![R::zero(); kdim * p] };
        for b in 0..geom.batch {
            let x = &ni.value[b * vol..(b + 1) * vol];
            let patches: &[R] = if geom.is_pointwise() {
                x
            } else if keep {
                let c = &mut cols[b * kdim * p..(b + 1) * kdim * p];
                im2col(x, &geom, c);
                c
            } else {
                im2col(x, &geom, &mut col);
                &col
            };
            R::gemm(
                cout,
                kdim,
                p,
                R::one(),
                &nw.value,
                (kdim as isize, 1),
                patches,
                (p as isize, 1),
                R::zero(),
                &mut out[b * cout * p..(b + 1) * cout * p],
                (p as isize, 1),
            );
        }
        let shape = vec![geom.batch, cout, out_size[0], out_size[1], out_size[2]];
        let cols = keep.then_some(cols);
        self.record("conv3d", out, shape, Op::Conv3d { input: input.idx, weight: weight.idx, geom, cols }, &[input.idx, weight.idx])
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let node = self.node(x)?;
        check_axis("slice", &node.shape, axis)?;
        if len == 0 || start + len > node.shape[axis] {
            return Err(TensorError::shape(
                "slice",
                format!("range {}..{} out of bounds for axis {} of {:?}", start, start + len, axis, node.shape),
            ));
        }
        let (outer, dim, inner) = split_axis(&node.shape, axis);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            value.extend_from_slice(&node.value[base..base + len * inner]);
        }
        let mut shape = node.shape.clone();
        shape[axis] = len;
        self.record("slice", value, shape, Op::Slice { input: x.idx, axis, start }, &[x.idx])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
        let base_shape = self.node(first)?.shape.clone();
        check_axis("concat", &base_shape, axis)?;
        let mut total = 0;
        for &v in xs {
            let s = &self.node(v)?.shape;
            let compatible = s.len() == base_shape.len()
                && s.iter().zip(&base_shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::shape("concat", format!("{:?} incompatible with {:?} along axis {}", s, base_shape, axis)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = &self.nodes[v.idx];
                let chunk = n.shape[axis] * inner;
                value.extend_from_slice(&n.value[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let inputs: Vec<usize> = xs.iter().map(|v| v.idx).collect();
        self.record("concat", value, shape, Op::Concat { inputs: inputs.clone(), axis }, &inputs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let node = self.node(x)?;
        check_shape(shape)?;
        if shape.iter().product::<usize>() != node.value.len() {
            return Err(TensorError::shape("reshape", format!("cannot reshape {:?} into {:?}", node.shape, shape)));
        }
        let value = node.value.clone();
        self.record("reshape", value, shape.to_vec(), Op::Reshape { input: x.idx }, &[x.idx])
    }

    /// General axis permutation: output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let node = self.node(x)?;
        let rank = node.shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::shape("permute", format!("{:?} is not a permutation of rank {}", perm, rank)));
        }
        let map = permute_map(&node.shape, perm);
        let value = map.iter().map(|&i| node.value[i]).collect();
        let shape = perm.iter().map(|&p| node.shape[p]).collect();
        self.record("permute", value, shape, Op::Permute { input: x.idx, perm: perm.to_vec() }, &[x.idx])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.node(x)?.shape.len();
        if rank < 2 {
            return Err(TensorError::shape("transpose", "needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    fn reduce(&mut self, name: &'static str, x: Var, kind: Reduce, axis: Option<usize>, keepdim: bool) -> Result<Var> {
        let node = self.node(x)?;
        let (value, shape) = match axis {
            None => {
                let s: R = node.value.iter().copied().sum();
                let v = if kind == Reduce::Mean { s / R::from_usize(node.value.len()).unwrap() } else { s };
                (vec![v], vec![1])
            }
            Some(axis) => {
                check_axis(name, &node.shape, axis)?;
                let (outer, dim, inner) = split_axis(&node.shape, axis);
                let mut out = vec![R::zero(); outer * inner];
                for o in 0..outer {
                    for d in 0..dim {
                        let src = &node.value[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                        for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc = *acc + v;
                        }
                    }
                }
                if kind == Reduce::Mean {
                    let div = R::from_usize(dim).unwrap();
                    out.iter_mut().for_each(|v| *v = *v / div);
                }
                (out, reduced_shape(&node.shape, axis, keepdim))
            }
        };
        self.record(name, value, shape, Op::Reduce { input: x.idx, kind, axis }, &[x.idx])
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce("sum", x, Reduce::Sum, None, false)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.reduce("sum", x, Reduce::Sum, Some(axis), keepdim)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce("mean", x, Reduce::Mean, None, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.reduce("mean", x, Reduce::Mean, Some(axis), keepdim)
    }

    /// Maximum along `axis`; the gradient flows to the first maximal entry.
    pub fn max_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let node = self.node(x)?;
        check_axis("max", &node.shape, axis)?;
        let (outer, dim, inner) = split_axis(&node.shape, axis);
        let mut value = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * dim) * inner + i;
                for d in 1..dim {
                    let idx = (o * dim + d) * inner + i;
                    if node.value[idx] > node.value[best] {
                        best = idx;
                    }
                }
                value.push(node.value[best]);
                argmax.push(best);
            }
        }
        let shape = reduced_shape(&node.shape, axis, keepdim);
        self.record("max", value, shape, Op::Max { input: x.idx, argmax }, &[x.idx])
    }

    fn softmax_like(&mut self, x: Var, axis: usize, log: bool) -> Result<Var> {
        let name = if log { "log_softmax" } else { "softmax" };
        let node = self.node(x)?;
        check_axis(name, &node.shape, axis)?;
        let (outer, dim, inner) = split_axis(&node.shape, axis);
        let mut value = vec![R::zero(); node.value.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |d: usize| (o * dim + d) * inner + i;
                let m = (0..dim).map(|d| node.value[idx(d)]).fold(R::neg_infinity(), R::max);
                let z: R = (0..dim).map(|d| (node.value[idx(d)] - m).exp()).sum();
                for d in 0..dim {
                    let shifted = node.value[idx(d)] - m;
                    value[idx(d)] = if log { shifted - z.ln() } else { shifted.exp() / z };
                }
            }
        }
        let shape = node.shape.clone();
        let op = if log { Op::LogSoftmax { input: x.idx, axis } } else { Op::Softmax { input: x.idx, axis } };
        self.record(name, value, shape, op, &[x.idx])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_like(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_like(x, axis, true)
    }

    /// Euclidean norm along `axis`.
    pub fn l2_norm(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let node = self.node(x)?;
        check_axis("l2_norm", &node.shape, axis)?;
        let (outer, dim, inner) = split_axis(&node.shape, axis);
        let mut value = vec![R::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let s: R = (0..dim).map(|d| node.value[(o * dim + d) * inner + i].powi(2)).sum();
                value[o * inner + i] = s.sqrt();
            }
        }
        let shape = reduced_shape(&node.shape, axis, keepdim);
        self.record("l2_norm", value, shape, Op::L2Norm { input: x.idx, axis }, &[x.idx])
    }

    pub(super) fn backprop_node(&self, i: usize, g: &[R], grads: &mut [Option<Vec<R>>]) {
        let node = &self.nodes[i];
        let needs = |j: usize| self.nodes[j].needs_grad;
        let len = |j: usize| self.nodes[j].value.len();
        let zero = R::zero();
        let one = R::one();
        match &node.op {
            Op::Leaf => {}
            Op::Unary { input, kind } => {
                if !needs(*input) {
                    return;
                }
                let x = &self.nodes[*input].value;
                let y = &node.value;
                let dx = accumulate(grads, *input, len(*input));
                for k in 0..g.len() {
                    let d = match *kind {
                        Unary::Exp => g[k] * y[k],
                        Unary::Log => g[k] / x[k],
                        Unary::Tanh => g[k] * (one - y[k] * y[k]),
                        Unary::Sigmoid => g[k] * y[k] * (one - y[k]),
                        Unary::Relu => if x[k] > zero { g[k] } else { zero },
                        Unary::LeakyRelu(a) => if x[k] > zero { g[k] } else { a * g[k] },
                        Unary::Elu(a) => if x[k] > zero { g[k] } else { g[k] * (y[k] + a) },
                        Unary::Scale(c) => g[k] * c,
                        Unary::Shift(_) => g[k],
                    };
                    dx[k] = dx[k] + d;
                }
            }
            Op::Binary { kind, a, b, a_map, b_map } => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if needs(*a) {
                    let da = accumulate(grads, *a, len(*a));
                    for o in 0..g.len() {
                        let ia = at(a_map, o);
                        let d = match kind {
                            Binary::Add | Binary::Sub => g[o],
                            Binary::Mul => g[o] * vb[at(b_map, o)],
                            Binary::Div => g[o] / vb[at(b_map, o)],
                        };
                        da[ia] = da[ia] + d;
                    }
                }
                if needs(*b) {
                    let db = accumulate(grads, *b, len(*b));
                    for o in 0..g.len() {
                        let ib = at(b_map, o);
                        let d = match kind {
                            Binary::Add => g[o],
                            Binary::Sub => -g[o],
                            Binary::Mul => g[o] * va[at(a_map, o)],
                            Binary::Div => -g[o] * va[at(a_map, o)] / (vb[ib] * vb[ib]),
                        };
                        db[ib] = db[ib] + d;
                    }
                }
            }
            Op::MatMul { a, b, kind } => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                match *kind {
                    MatMulKind::Shared { rows, k, n } => {
                        if needs(*a) {
                            let da = accumulate(grads, *a, len(*a));
                            R::gemm(rows, n, k, one, g, (n as isize, 1), vb, (1, n as isize), one, da, (k as isize, 1));
                        }
                        if needs(*b) {
                            let db = accumulate(grads, *b, len(*b));
                            R::gemm(k, rows, n, one, va, (1, k as isize), g, (n as isize, 1), one, db, (n as isize, 1));
                        }
                    }
                    MatMulKind::Batched { batch, m, k, n } => {
                        if needs(*a) {
                            let da = accumulate(grads, *a, len(*a));
                            for i in 0..batch {
                                R::gemm(
                                    m,
                                    n,
                                    k,
                                    one,
                                    &g[i * m * n..(i + 1) * m * n],
                                    (n as isize, 1),
                                    &vb[i * k * n..(i + 1) * k * n],
                                    (1, n as isize),
                                    one,
                                    &mut da[i * m * k..(i + 1) * m * k],
                                    (k as isize, 1),
                                );
                            }
                        }
                        if needs(*b) {
                            let db = accumulate(grads, *b, len(*b));
                            for i in 0..batch {
                                R::gemm(
                                    k,
                                    m,
                                    n,
                                    one,
                                    &va[i * m * k..(i + 1) * m * k],
                                    (1, k as isize),
                                    &g[i * m * n..(i + 1) * m * n],
                                    (n as isize, 1),
                                    one,
                                    &mut db[i * k * n..(i + 1) * k * n],
                                    (n as isize, 1),
                                );
                            }
                        }
                    }
                }
            }
            Op::Conv3d { input, weight, geom, cols } => {
                let (kdim, p, vol) = (geom.patch_len(), geom.out_positions(), geom.in_volume());
                let cout = geom.out_channels;
                let x = &self.nodes[*input].value;
                let w = &self.nodes[*weight].value;
                let pointwise = geom.is_pointwise();
                let mut col = if pointwise { Vec::new() } else { vec![zero; kdim * p] };
                if needs(*weight) {
                    let dw = accumulate(grads, *weight, len(*weight));
                    for b in 0..geom.batch {
                        let xb = &x[b * vol..(b + 1) * vol];
                        let patches: &[R] = if pointwise {
                            xb
                        } else if let Some(c) = cols {
                            &c[b * kdim * p..(b + 1) * kdim * p]
                        } else {
                            im2col(xb, geom, &mut col);
                            &col
                        };
                        R::gemm(cout, p, kdim, one, &g[b * cout * p..(b + 1) * cout * p], (p as isize, 1), patches, (1, p as isize), one, dw, (kdim as isize, 1));
                    }
                }
                if needs(*input) {
                    let dx = accumulate(grads, *input, len(*input));
                    for b in 0..geom.batch {
                        let gb = &g[b * cout * p..(b + 1) * cout * p];
                        if pointwise {
                            R::gemm(kdim, cout, p, one, w, (1, kdim as isize), gb, (p as isize, 1), one, &mut dx[b * vol..(b + 1) * vol], (p as isize, 1));
                        } else {
                            R::gemm(kdim, cout, p, one, w, (1, kdim as isize), gb, (p as isize, 1), zero, &mut col, (p as isize, 1));
                            col2im(&col, geom, &mut dx[b * vol..(b + 1) * vol]);
                        }
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                if !needs(*input) {
                    return;
                }
                let in_shape = &self.nodes[*input].shape;
                let (outer, dim, inner) = split_axis(in_shape, *axis);
                let n = node.shape[*axis];
                let dx = accumulate(grads, *input, len(*input));
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    for (d, &v) in dx[base..base + n * inner].iter_mut().zip(&g[o * n * inner..(o + 1) * n * inner]) {
                        *d = *d + v;
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &j in inputs {
                    let n = self.nodes[j].shape[*axis];
                    if needs(j) {
                        let dx = accumulate(grads, j, len(j));
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            for (d, &v) in dx[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src) {
                                *d = *d + v;
                            }
                        }
                    }
                    offset += n;
                }
            }
            Op::Reshape { input } => {
                if needs(*input) {
                    let dx = accumulate(grads, *input, len(*input));
                    dx.iter_mut().zip(g).for_each(|(d, &v)| *d = *d + v);
                }
            }
            Op::Permute { input, perm } => {
                if needs(*input) {
                    let map = permute_map(&self.nodes[*input].shape, perm);
                    let dx = accumulate(grads, *input, len(*input));
                    for (o, &src) in map.iter().enumerate() {
                        dx[src] = dx[src] + g[o];
                    }
                }
            }
            Op::Reduce { input, kind, axis } => {
                if !needs(*input) {
                    return;
                }
                let in_shape = self.nodes[*input].shape.clone();
                let dx = accumulate(grads, *input, len(*input));
                match axis {
                    None => {
                        let scale = if *kind == Reduce::Mean { one / R::from_usize(dx.len()).unwrap() } else { one };
                        dx.iter_mut().for_each(|d| *d = *d + g[0] * scale);
                    }
                    Some(axis) => {
                        let (outer, dim, inner) = split_axis(&in_shape, *axis);
                        let scale = if *kind == Reduce::Mean { one / R::from_usize(dim).unwrap() } else { one };
                        for o in 0..outer {
                            for d in 0..dim {
                                let dst = &mut dx[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                                for (v, &gv) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                    *v = *v + gv * scale;
                                }
                            }
                        }
                    }
                }
            }
            Op::Max { input, argmax } => {
                if needs(*input) {
                    let dx = accumulate(grads, *input, len(*input));
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] = dx[src] + g[o];
                    }
                }
            }
            Op::Softmax { input, axis } | Op::LogSoftmax { input, axis } => {
                if !needs(*input) {
                    return;
                }
                let log = matches!(node.op, Op::LogSoftmax { .. });
                let (outer, dim, inner) = split_axis(&node.shape, *axis);
                let y = &node.value;
                let dx = accumulate(grads, *input, len(*input));
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |d: usize| (o * dim + d) * inner + i;
                        if log {
                            let gs: R = (0..dim).map(|d| g[idx(d)]).sum();
                            for d in 0..dim {
                                dx[idx(d)] = dx[idx(d)] + g[idx(d)] - y[idx(d)].exp() * gs;
                            }
                        } else {
                            let dot: R = (0..dim).map(|d| g[idx(d)] * y[idx(d)]).sum();
                            for d in 0..dim {
                                dx[idx(d)] = dx[idx(d)] + y[idx(d)] * (g[idx(d)] - dot);
                            }
                        }
                    }
                }
            }
            Op::L2Norm { input, axis } => {
                if !needs(*input) {
                    return;
                }
                let x = &self.nodes[*input].value;
                let (outer, dim, inner) = split_axis(&self.nodes[*input].shape, *axis);
                let y = &node.value;
                let dx = accumulate(grads, *input, len(*input));
                for o in 0..outer {
                    for i in 0..inner {
                        let norm = y[o * inner + i];
                        if norm == zero {
                            continue;
                        }
                        let gn = g[o * inner + i] / norm;
                        for d in 0..dim {
                            let idx = (o * dim + d) * inner + i;
                            dx[idx] = dx[idx] + gn * x[idx];
                        }
                    }
                }
            }
        }
    }
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut out = shape.to_vec();
    if keepdim || shape.len() == 1 {
        out[axis] = 1;
    } else {
        out.remove(axis);
    }
    out
}

#[inline]
pub(crate) fn sigmoid<R: Real>(v: R) -> R {
    if v >= R::zero() {
        R::one() / (R::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (R::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use super::*;

    fn leaf(t: &mut Tape<f64>, shape: &[usize], data: &[f64]) -> Var {
        t.variable(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_elementwise() {
        let mut t = Tape::new();
        let a = leaf(&mut t, &[2], &[1.0, 2.0]);
        let b = leaf(&mut t, &[2], &[3.0, 4.0]);
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let a = leaf(&mut t, &[2], &[0.0, 0.0]);
        let s = t.softmax(a, 0).unwrap();
        assert_eq!(t.value(s).unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut t = Tape::new();
        let eye = t.constant(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let x: Vec<f64> = (0..12).map(|v| v as f64 * 0.3 - 1.0).collect();
        let xv = leaf(&mut t, &[3, 4], &x);
        let y = t.matmul(eye, xv).unwrap();
        assert_eq!(t.value(y).unwrap(), &x[..]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[3], &[1.0, 2.0, 3.0]);
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1], &[0.0]);
        let y = t.tanh(x).unwrap();
        let loss = t.sum(y).unwrap();
        assert_eq!(t.backward(loss).unwrap().get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1], &[2.0]);
        let loss = t.sum(x).unwrap();
        t.backward(loss).unwrap();
        assert!(matches!(t.backward(loss), Err(TensorError::Contract(_))));
        assert!(t.exp(x).is_err());
        t.reset();
        assert!(t.value(x).is_err(), "stale vars are rejected after reset");
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2], &[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn domain_and_shape_errors() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2], &[1.0, 0.0]);
        assert!(matches!(t.log(x), Err(TensorError::Domain { .. })));
        let y = leaf(&mut t, &[3], &[1.0, 1.0, 1.0]);
        assert!(matches!(t.add(x, y), Err(TensorError::Shape { .. })));
        let z = t.scalar(0.0);
        assert!(matches!(t.div(y, z), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn broadcast_bias_add_and_reduce_grad() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2, 3], &[0.0; 6]);
        let b = leaf(&mut t, &[3], &[1.0, 2.0, 3.0]);
        let y = t.add(x, b).unwrap();
        assert_eq!(t.value(y).unwrap(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let loss = t.sum(y).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(b).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn permute_and_slice_concat() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let xt = t.transpose(x).unwrap();
        assert_eq!(t.shape(xt).unwrap(), &[3, 2]);
        assert_eq!(t.value(xt).unwrap(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let s = t.slice(x, 1, 1, 2).unwrap();
        assert_eq!(t.value(s).unwrap(), &[1.0, 2.0, 4.0, 5.0]);
        let c = t.concat(&[s, x], 1).unwrap();
        assert_eq!(t.shape(c).unwrap(), &[2, 5]);
        assert_eq!(t.value(c).unwrap(), &[1.0, 2.0, 0.0, 1.0, 2.0, 4.0, 5.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn conv3d_pointwise_matches_channel_mix() {
        let mut t = Tape::new();
        let x = Tensor::from_fn(&[1, 2, 1, 2, 2], |i| i as f64);
        let xv = t.leaf(&x);
        let w = t.constant(&[1, 2, 1, 1, 1], vec![1.0, 10.0]).unwrap();
        let y = t.conv3d(xv, w, [1, 1, 1], [0, 0, 0]).unwrap();
        assert_eq!(t.value(y).unwrap(), &[40.0, 51.0, 62.0, 73.0]);
    }

    #[test]
    fn conv3d_box_filter_with_padding() {
        let mut t = Tape::new();
        let x = t.constant(&[1, 1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let w = t.constant(&[1, 1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = t.conv3d(x, w, [1, 1, 1], [0, 1, 1]).unwrap();
        assert_eq!(t.value(y).unwrap(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
        let y2 = t.conv3d(x, w, [1, 2, 2], [0, 1, 1]).unwrap();
        assert_eq!(t.shape(y2).unwrap(), &[1, 1, 1, 2, 2]);
        assert_eq!(t.value(y2).unwrap(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn max_and_l2_norm_values() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2, 2], &[3.0, -4.0, 1.0, 5.0]);
        let m = t.max_axis(x, 1, false).unwrap();
        assert_eq!(t.value(m).unwrap(), &[3.0, 5.0]);
        let n = t.l2_norm(x, 0, false).unwrap();
        assert!((t.value(n).unwrap()[0] - 10f64.sqrt()).abs() < 1e-12);
    }
}
