//! Differentiable primitives.
//!
//! Broadcasting is limited to adding a rank-1 bias onto the last axis; any
//! other shape disagreement is an [`Error::Shape`] naming the primitive.

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let x = self.to_vec();
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let yc = y.clone();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(x.iter().zip(&yc))
                    .map(|(g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        self.unary(
            "relu",
            |x| x.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Elementwise |x| with subgradient 0 at 0.
    pub fn abs(&self) -> Tensor {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary("scale", move |x| c * x, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// `self + rhs`, where `rhs` has the same shape or is a bias vector
    /// matching the last axis.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls == rs {
            let y: Vec<f64> = self.data().iter().zip(rhs.data().iter()).map(|(a, b)| a + b).collect();
            return Ok(Tensor::from_op(
                "add",
                ls.to_vec(),
                y,
                vec![self.clone(), rhs.clone()],
                Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
            ));
        }
        let bias = rs.len() == 1 && !ls.is_empty() && ls[ls.len() - 1] == rs[0];
        if !bias {
            return Err(Error::shape("add", ls, rs));
        }
        let f = rs[0];
        let b = rhs.to_vec();
        let y: Vec<f64> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, a)| a + b[i % f])
            .collect();
        Ok(Tensor::from_op(
            "add_bias",
            ls.to_vec(),
            y,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, needs| {
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; f];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % f] += v;
                    }
                    gb
                });
                vec![Some(g.to_vec()), gb]
            }),
        ))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape("sub", self.shape(), rhs.shape()));
        }
        let y: Vec<f64> = self.data().iter().zip(rhs.data().iter()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            y,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        ))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape("mul", self.shape(), rhs.shape()));
        }
        let a = self.to_vec();
        let b = rhs.to_vec();
        let y: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            y,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| g.iter().zip(&b).map(|(g, b)| g * b).collect());
                let gb = needs[1].then(|| g.iter().zip(&a).map(|(g, a)| g * a).collect());
                vec![ga, gb]
            }),
        ))
    }

    /// Multiplies every element by the value of a one-element tensor `s`.
    pub fn scale_by(&self, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(Error::shape("scale_by", self.shape(), s.shape()));
        }
        let c = s.item();
        let x = self.to_vec();
        let y: Vec<f64> = x.iter().map(|v| v * c).collect();
        Ok(Tensor::from_op(
            "scale_by",
            self.shape().to_vec(),
            y,
            vec![self.clone(), s.clone()],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| g.iter().map(|g| g * c).collect());
                let gs = needs[1].then(|| vec![g.iter().zip(&x).map(|(g, x)| g * x).sum()]);
                vec![gx, gs]
            }),
        ))
    }

    /// Scales row `i` of an `n × F` matrix by `col[i]`; `col` is `[n]` or `[n, 1]`.
    pub fn scale_rows(&self, col: &Tensor) -> Result<Tensor> {
        let s = self.shape();
        let ok = s.len() == 2
            && col.numel() == s[0]
            && (col.rank() == 1 || (col.rank() == 2 && col.shape()[1] == 1));
        if !ok {
            return Err(Error::shape("scale_rows", s, col.shape()));
        }
        let (n, f) = (s[0], s[1]);
        let x = self.to_vec();
        let c = col.to_vec();
        let mut y = x.clone();
        for i in 0..n {
            for v in &mut y[i * f..(i + 1) * f] {
                *v *= c[i];
            }
        }
        Ok(Tensor::from_op(
            "scale_rows",
            s.to_vec(),
            y,
            vec![self.clone(), col.clone()],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = g.to_vec();
                    for i in 0..n {
                        for v in &mut gx[i * f..(i + 1) * f] {
                            *v *= c[i];
                        }
                    }
                    gx
                });
                let gc = needs[1].then(|| {
                    (0..n)
                        .map(|i| (0..f).map(|j| g[i * f + j] * x[i * f + j]).sum())
                        .collect()
                });
                vec![gx, gc]
            }),
        ))
    }

    /// 2-D matrix product.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(Error::shape("matmul", ls, rs));
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let a = self.to_vec();
        let b = rhs.to_vec();
        let y = matmul_raw(&a, &b, m, k, n);
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            y,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, needs| {
                // dA = G·Bᵀ, dB = Aᵀ·G
                let ga = needs[0].then(|| {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &b[p * n..(p + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = a[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Applies a shared `n × n` matrix to every `n × F` slice of a
    /// `[B, n, F]` tensor: `out[b] = S · x[b]`.
    pub fn propagate(s: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (ss, xs) = (s.shape(), x.shape());
        if ss.len() != 2 || ss[0] != ss[1] || xs.len() != 3 || xs[1] != ss[0] {
            return Err(Error::shape("propagate", ss, xs));
        }
        let (batch, n, f) = (xs[0], xs[1], xs[2]);
        let sm = s.to_vec();
        let xv = x.to_vec();
        let mut y = vec![0.0; batch * n * f];
        for b in 0..batch {
            let xb = &xv[b * n * f..(b + 1) * n * f];
            let yb = &mut y[b * n * f..(b + 1) * n * f];
            for i in 0..n {
                for j in 0..n {
                    let w = sm[i * n + j];
                    if w == 0.0 {
                        continue;
                    }
                    for (o, v) in yb[i * f..(i + 1) * f].iter_mut().zip(&xb[j * f..(j + 1) * f]) {
                        *o += w * v;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            "propagate",
            xs.to_vec(),
            y,
            vec![s.clone(), x.clone()],
            Box::new(move |g, needs| {
                let gs = needs[0].then(|| {
                    let mut gs = vec![0.0; n * n];
                    for b in 0..batch {
                        let off = b * n * f;
                        for i in 0..n {
                            for j in 0..n {
                                gs[i * n + j] += (0..f)
                                    .map(|c| g[off + i * f + c] * xv[off + j * f + c])
                                    .sum::<f64>();
                            }
                        }
                    }
                    gs
                });
                let gx = needs[1].then(|| {
                    let mut gx = vec![0.0; batch * n * f];
                    for b in 0..batch {
                        let off = b * n * f;
                        for i in 0..n {
                            for j in 0..n {
                                let w = sm[i * n + j];
                                if w == 0.0 {
                                    continue;
                                }
                                for c in 0..f {
                                    gx[off + j * f + c] += w * g[off + i * f + c];
                                }
                            }
                        }
                    }
                    gx
                });
                vec![gs, gx]
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::invalid("transpose", format!("needs rank 2, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let x = self.data();
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                y[j * m + i] = x[i * n + j];
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            "transpose",
            vec![n, m],
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = g[j * m + i];
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    pub fn sum_all(&self) -> Tensor {
        let n = self.numel();
        let s = self.data().iter().sum();
        Tensor::from_op(
            "sum_all",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::invalid("mean_all", "empty tensor"));
        }
        Ok(self.sum_all().scale(1.0 / n as f64))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("sum_axis", self.shape(), axis)?;
        let (outer, dim, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let base = (o * dim + d) * inner;
                for i in 0..inner {
                    y[o * inner + i] += x[base + i];
                }
            }
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(
            "sum_axis",
            shape,
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * dim * inner];
                for o in 0..outer {
                    for d in 0..dim {
                        let base = (o * dim + d) * inner;
                        gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("mean_axis", self.shape(), axis)?;
        let dim = self.shape()[axis];
        if dim == 0 {
            return Err(Error::invalid("mean_axis", "empty axis"));
        }
        Ok(self.sum_axis(axis)?.scale(1.0 / dim as f64))
    }

    /// Maximum over `axis` (removed). Ties go to the lowest index. Returns
    /// the values and the flat argmax positions along `axis`.
    pub fn max_axis(&self, axis: usize) -> Result<(Tensor, Vec<usize>)> {
        check_axis("max_axis", self.shape(), axis)?;
        let (outer, dim, inner) = axis_split(self.shape(), axis);
        if dim == 0 {
            return Err(Error::invalid("max_axis", "empty axis"));
        }
        let x = self.data();
        let mut y = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let base = (o * dim + d) * inner;
                for i in 0..inner {
                    let v = x[base + i];
                    let k = o * inner + i;
                    if d == 0 || v > y[k] {
                        y[k] = v;
                        arg[k] = d;
                    }
                }
            }
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        let argc = arg.clone();
        let out = Tensor::from_op(
            "max_axis",
            shape,
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * dim * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let k = o * inner + i;
                        gx[(o * dim + argc[k]) * inner + i] += g[k];
                    }
                }
                vec![Some(gx)]
            }),
        );
        Ok((out, arg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let s = self.shape();
        let Some(&f) = s.last() else {
            return Err(Error::invalid("softmax", "rank-0 input"));
        };
        if f == 0 {
            return Err(Error::invalid("softmax", "empty last axis"));
        }
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for (xr, yr) in x.chunks(f).zip(y.chunks_mut(f)) {
            let m = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, v) in yr.iter_mut().zip(xr) {
                *o = (v - m).exp();
                z += *o;
            }
            yr.iter_mut().for_each(|o| *o /= z);
        }
        drop(x);
        let yc = y.clone();
        Ok(Tensor::from_op(
            "softmax",
            s.to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), or) in g.chunks(f).zip(yc.chunks(f)).zip(gx.chunks_mut(f)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in or.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let s = self.shape();
        let Some(&f) = s.last() else {
            return Err(Error::invalid("log_softmax", "rank-0 input"));
        };
        if f == 0 {
            return Err(Error::invalid("log_softmax", "empty last axis"));
        }
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for (xr, yr) in x.chunks(f).zip(y.chunks_mut(f)) {
            let m = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + xr.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for (o, v) in yr.iter_mut().zip(xr) {
                *o = v - lse;
            }
        }
        drop(x);
        let yc = y.clone();
        Ok(Tensor::from_op(
            "log_softmax",
            s.to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), or) in g.chunks(f).zip(yc.chunks(f)).zip(gx.chunks_mut(f)) {
                    let total: f64 = gr.iter().sum();
                    for ((o, gv), yv) in or.iter_mut().zip(gr).zip(yr) {
                        *o = gv - yv.exp() * total;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("concat", "no inputs"));
        };
        let base = first.shape();
        check_axis("concat", base, axis)?;
        for p in &parts[1..] {
            let ps = p.shape();
            let ok = ps.len() == base.len()
                && ps.iter().zip(base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", base, ps));
            }
        }
        let (outer, _, inner) = axis_split(base, axis);
        let dims: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = dims.iter().sum();
        let mut y = Vec::with_capacity(outer * total * inner);
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (d, data) in dims.iter().zip(&datas) {
                y.extend_from_slice(&data[o * d * inner..(o + 1) * d * inner]);
            }
        }
        drop(datas);
        let mut shape = base.to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            "concat",
            shape,
            y,
            parts.to_vec(),
            Box::new(move |g, needs| {
                let mut out: Vec<Option<Vec<f64>>> = dims
                    .iter()
                    .zip(needs)
                    .map(|(d, &need)| need.then(|| Vec::with_capacity(outer * d * inner)))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (d, slot) in dims.iter().zip(out.iter_mut()) {
                        let len = d * inner;
                        if let Some(v) = slot {
                            v.extend_from_slice(&g[pos..pos + len]);
                        }
                        pos += len;
                    }
                }
                out
            }),
        ))
    }

    /// Selects slices along axis 0. Indices may repeat; their gradients add.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.is_empty() {
            return Err(Error::invalid("gather_rows", "rank-0 input"));
        }
        let rows = s[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(
                "gather_rows",
                format!("index {bad} out of range for {rows} rows"),
            ));
        }
        let width: usize = s[1..].iter().product();
        let x = self.data();
        let mut y = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            y.extend_from_slice(&x[i * width..(i + 1) * width]);
        }
        drop(x);
        let mut shape = s.to_vec();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            "gather_rows",
            shape,
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; rows * width];
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in gx[i * width..(i + 1) * width]
                        .iter_mut()
                        .zip(&g[k * width..(k + 1) * width])
                    {
                        *o += v;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("narrow", self.shape(), axis)?;
        let (outer, dim, inner) = axis_split(self.shape(), axis);
        if start + len > dim {
            return Err(Error::invalid(
                "narrow",
                format!("range {start}..{} exceeds extent {dim}", start + len),
            ));
        }
        let x = self.data();
        let mut y = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = (o * dim + start) * inner;
            y.extend_from_slice(&x[b..b + len * inner]);
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            "narrow",
            shape,
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * dim * inner];
                for o in 0..outer {
                    let b = (o * dim + start) * inner;
                    gx[b..b + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// For a `[B, C]` matrix, picks `x[b, idx[b]]` into a `[B]` vector.
    pub fn pick(&self, idx: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || s[0] != idx.len() {
            return Err(Error::shape("pick", s, &[idx.len()]));
        }
        let (b, c) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::invalid("pick", format!("index {bad} out of range for {c} columns")));
        }
        let x = self.data();
        let y: Vec<f64> = idx.iter().enumerate().map(|(r, &k)| x[r * c + k]).collect();
        drop(x);
        let idx = idx.to_vec();
        Ok(Tensor::from_op(
            "pick",
            vec![b],
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; b * c];
                for (r, &k) in idx.iter().enumerate() {
                    gx[r * c + k] = g[r];
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Scales each last-axis row to unit L2 norm; all-zero rows stay zero.
    pub fn normalize_rows(&self) -> Result<Tensor> {
        let s = self.shape();
        let Some(&f) = s.last() else {
            return Err(Error::invalid("normalize_rows", "rank-0 input"));
        };
        let x = self.to_vec();
        let mut y = vec![0.0; x.len()];
        let mut norms = Vec::with_capacity(x.len() / f.max(1));
        if f > 0 {
            for (xr, yr) in x.chunks(f).zip(y.chunks_mut(f)) {
                let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                norms.push(n);
                if n > 0.0 {
                    for (o, v) in yr.iter_mut().zip(xr) {
                        *o = v / n;
                    }
                }
            }
        }
        let yc = y.clone();
        Ok(Tensor::from_op(
            "normalize_rows",
            s.to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                if f > 0 {
                    for (r, n) in norms.iter().enumerate() {
                        if *n == 0.0 {
                            continue;
                        }
                        let gr = &g[r * f..(r + 1) * f];
                        let yr = &yc[r * f..(r + 1) * f];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for c in 0..f {
                            gx[r * f + c] = (gr[c] - yr[c] * dot) / n;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Grouped 1-D convolution without padding.
    ///
    /// `x: [N, C_in, L]`, `weight: [C_out, C_in / groups, K]`, `bias: [C_out]`.
    /// Output length is `(L − K) / stride + 1`.
    pub fn conv1d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        groups: usize,
    ) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 3 || groups == 0 || stride == 0 {
            return Err(Error::shape("conv1d", xs, ws));
        }
        let (n, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, cin_g, k) = (ws[0], ws[1], ws[2]);
        if cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g || k == 0 {
            return Err(Error::shape("conv1d", xs, ws));
        }
        if len < k {
            return Err(Error::invalid(
                "conv1d",
                format!("signal length {len} shorter than kernel {k}"),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shape("conv1d", ws, b.shape()));
            }
        }
        let lout = (len - k) / stride + 1;
        let cout_g = cout / groups;
        let xv = self.to_vec();
        let wv = weight.to_vec();
        let bv = bias.map(Tensor::to_vec);
        let mut y = vec![0.0; n * cout * lout];
        for b in 0..n {
            for oc in 0..cout {
                let grp = oc / cout_g;
                let base_bias = bv.as_ref().map_or(0.0, |bv| bv[oc]);
                for t in 0..lout {
                    let mut acc = base_bias;
                    for ic in 0..cin_g {
                        let xc = grp * cin_g + ic;
                        let xrow = &xv[(b * cin + xc) * len + t * stride..];
                        let wrow = &wv[(oc * cin_g + ic) * k..(oc * cin_g + ic + 1) * k];
                        acc += wrow.iter().zip(xrow).map(|(w, x)| w * x).sum::<f64>();
                    }
                    y[(b * cout + oc) * lout + t] = acc;
                }
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        Ok(Tensor::from_op(
            "conv1d",
            vec![n, cout, lout],
            y,
            parents,
            Box::new(move |g, needs| {
                let mut gx = needs[0].then(|| vec![0.0; n * cin * len]);
                let mut gw = needs[1].then(|| vec![0.0; cout * cin_g * k]);
                let gb = (has_bias && needs[2]).then(|| {
                    let mut gb = vec![0.0; cout];
                    for b in 0..n {
                        for oc in 0..cout {
                            gb[oc] += g[(b * cout + oc) * lout..(b * cout + oc + 1) * lout]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                    gb
                });
                for b in 0..n {
                    for oc in 0..cout {
                        let grp = oc / cout_g;
                        for t in 0..lout {
                            let go = g[(b * cout + oc) * lout + t];
                            if go == 0.0 {
                                continue;
                            }
                            for ic in 0..cin_g {
                                let xc = grp * cin_g + ic;
                                let xoff = (b * cin + xc) * len + t * stride;
                                let woff = (oc * cin_g + ic) * k;
                                if let Some(gx) = gx.as_mut() {
                                    for j in 0..k {
                                        gx[xoff + j] += go * wv[woff + j];
                                    }
                                }
                                if let Some(gw) = gw.as_mut() {
                                    for j in 0..k {
                                        gw[woff + j] += go * xv[xoff + j];
                                    }
                                }
                            }
                        }
                    }
                }
                let mut out = vec![gx, gw];
                if has_bias {
                    out.push(gb);
                }
                out
            }),
        ))
    }

    /// Training-mode batch normalization of `[N, C]` or `[N, C, L]` inputs,
    /// per channel `C` over the batch (and length) axes. Returns the output
    /// together with the batch mean and biased variance per channel.
    pub fn batch_norm_train(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
    ) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let (n, c, l) = bn_dims(self.shape(), gamma, beta)?;
        let m = (n * l) as f64;
        if n * l == 0 {
            return Err(Error::invalid("batch_norm", "empty batch"));
        }
        let x = self.to_vec();
        let gv = gamma.to_vec();
        let bv = beta.to_vec();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let row = &x[(b * c + ch) * l..(b * c + ch + 1) * l];
                mean[ch] += row.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for b in 0..n {
            for ch in 0..c {
                let row = &x[(b * c + ch) * l..(b * c + ch + 1) * l];
                var[ch] += row.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                for t in 0..l {
                    let i = (b * c + ch) * l + t;
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    y[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let out = Tensor::from_op(
            "batch_norm",
            self.shape().to_vec(),
            y,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, needs| {
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        for t in 0..l {
                            let i = (b * c + ch) * l + t;
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                let gx = needs[0].then(|| {
                    let mut gx = vec![0.0; g.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let k = gv[ch] * inv_std[ch] / m;
                            for t in 0..l {
                                let i = (b * c + ch) * l + t;
                                gx[i] = k * (m * g[i] - sum_g[ch] - xhat[i] * sum_gx[ch]);
                            }
                        }
                    }
                    gx
                });
                vec![gx, Some(sum_gx), Some(sum_g)]
            }),
        );
        Ok((out, mean, var))
    }

    /// Eval-mode batch normalization with fixed statistics: a per-channel affine map.
    pub fn batch_norm_eval(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Tensor> {
        let (n, c, l) = bn_dims(self.shape(), gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm", self.shape(), &[running_mean.len()]));
        }
        let x = self.to_vec();
        let gv = gamma.to_vec();
        let bv = beta.to_vec();
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let rm = running_mean.to_vec();
        let mut y = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                for t in 0..l {
                    let i = (b * c + ch) * l + t;
                    y[i] = gv[ch] * (x[i] - rm[ch]) * inv_std[ch] + bv[ch];
                }
            }
        }
        Ok(Tensor::from_op(
            "batch_norm_eval",
            self.shape().to_vec(),
            y,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        for t in 0..l {
                            let i = (b * c + ch) * l + t;
                            gx[i] = g[i] * gv[ch] * inv_std[ch];
                            gg[ch] += g[i] * (x[i] - rm[ch]) * inv_std[ch];
                            gb[ch] += g[i];
                        }
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        ))
    }
}

fn bn_dims(shape: &[usize], gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, c, l) = match shape {
        [n, c] => (*n, *c, 1),
        [n, c, l] => (*n, *c, *l),
        _ => return Err(Error::invalid("batch_norm", format!("needs rank 2 or 3, got {shape:?}"))),
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("batch_norm", shape, gamma.shape()));
    }
    Ok((n, c, l))
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; m * n];
    for i in 0..m {
        let yrow = &mut y[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in yrow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    y
}

/// Parameters of a standard four-gate LSTM cell. Gate columns are ordered
/// input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmWeights {
    /// `[I, 4H]`
    pub w_ih: Tensor,
    /// `[H, 4H]`
    pub w_hh: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape()[0]
    }
}

/// One LSTM step on a `[B, I]` input with `[B, H]` state; returns `(h', c')`.
pub fn lstm_cell(x: &Tensor, h: &Tensor, c: &Tensor, w: &LstmWeights) -> Result<(Tensor, Tensor)> {
    let hs = w.hidden_size();
    if w.w_hh.shape() != [hs, 4 * hs] || w.bias.shape() != [4 * hs] {
        return Err(Error::shape("lstm_cell", w.w_hh.shape(), w.bias.shape()));
    }
    if h.shape() != c.shape() || h.rank() != 2 || h.shape()[1] != hs {
        return Err(Error::shape("lstm_cell", h.shape(), c.shape()));
    }
    let gates = x.matmul(&w.w_ih)?.add(&h.matmul(&w.w_hh)?)?.add(&w.bias)?;
    let i = gates.narrow(1, 0, hs)?.sigmoid();
    let f = gates.narrow(1, hs, hs)?.sigmoid();
    let g = gates.narrow(1, 2 * hs, hs)?.tanh();
    let o = gates.narrow(1, 3 * hs, hs)?.sigmoid();
    let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
    let h_next = o.mul(&c_next.tanh())?;
    Ok((h_next, c_next))
}
