//! Differentiable tensor ops. Most ops treat a tensor as `rows × cols`
//! where `cols` is the trailing dimension.

use super::real::{lit, Real};
use super::tensor::Tensor;
use super::NumError;

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), NumError> {
    if a.shape() != b.shape() {
        return Err(NumError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    fn map_unary(
        &self,
        name: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        let y = out.clone();
        Tensor::from_op(out, self.shape().to_vec(), name, vec![self.clone()], move |g| {
            let gx = g
                .iter()
                .zip(x.data())
                .zip(&y)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        same_shape("add", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), "add", vec![self.clone(), other.clone()], |g| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        same_shape("sub", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Ok(Tensor::from_op(out, self.shape().to_vec(), "sub", vec![self.clone(), other.clone()], |g| {
            vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        same_shape("mul", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(out, self.shape().to_vec(), "mul", vec![self.clone(), other.clone()], move |g| {
            let ga = a.requires_grad().then(|| g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect());
            let gb = b.requires_grad().then(|| g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect());
            vec![ga, gb]
        }))
    }

    /// Adds a `[cols]` vector to every row.
    pub fn add_row(&self, bias: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        let c = self.cols();
        if bias.numel() != c {
            return Err(NumError::shape("add_row", format!("bias {:?} vs cols {c}", bias.shape())));
        }
        let b = bias.data();
        let out = rowwise(self.data(), c, |_, row, o| o.iter_mut().zip(row).zip(b).for_each(|((o, &x), &b)| *o = x + b));
        Ok(Tensor::from_op(out, self.shape().to_vec(), "add_row", vec![self.clone(), bias.clone()], move |g| {
            let mut gb = vec![T::zero(); c];
            for row in g.chunks(c) {
                gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
            vec![Some(g.to_vec()), Some(gb)]
        }))
    }

    /// Multiplies every row elementwise by a `[cols]` vector.
    pub fn mul_row(&self, gain: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        let c = self.cols();
        if gain.numel() != c {
            return Err(NumError::shape("mul_row", format!("gain {:?} vs cols {c}", gain.shape())));
        }
        let w = gain.data();
        let out = rowwise(self.data(), c, |_, row, o| o.iter_mut().zip(row).zip(w).for_each(|((o, &x), &w)| *o = x * w));
        let (x, w) = (self.clone(), gain.clone());
        Ok(Tensor::from_op(out, self.shape().to_vec(), "mul_row", vec![self.clone(), gain.clone()], move |g| {
            let gx = x.requires_grad().then(|| {
                let w = w.data();
                rowwise(g, c, |_, row, o| o.iter_mut().zip(row).zip(w).for_each(|((o, &g), &w)| *o = g * w))
            });
            let gw = w.requires_grad().then(|| {
                let mut gw = vec![T::zero(); c];
                for (grow, xrow) in g.chunks(c).zip(x.data().chunks(c)) {
                    for j in 0..c {
                        gw[j] += grow[j] * xrow[j];
                    }
                }
                gw
            });
            vec![gx, gw]
        }))
    }

    /// Multiplies row `r` by the constant `factors[r]`.
    pub fn scale_rows(&self, factors: &[T]) -> Result<Tensor<T>, NumError> {
        let c = self.cols();
        if factors.len() != self.rows() {
            return Err(NumError::shape(
                "scale_rows",
                format!("{} factors for {} rows", factors.len(), self.rows()),
            ));
        }
        let f = factors.to_vec();
        let out = rowwise(self.data(), c, |r, row, o| o.iter_mut().zip(row).for_each(|(o, &x)| *o = x * f[r]));
        Ok(Tensor::from_op(out, self.shape().to_vec(), "scale_rows", vec![self.clone()], move |g| {
            vec![Some(rowwise(g, c, |r, row, o| o.iter_mut().zip(row).for_each(|(o, &v)| *o = v * f[r])))]
        }))
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x * s).collect();
        Tensor::from_op(out, self.shape().to_vec(), "scale", vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|&v| v * s).collect())]
        })
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x + s).collect();
        Tensor::from_op(out, self.shape().to_vec(), "add_scalar", vec![self.clone()], |g| vec![Some(g.to_vec())])
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    pub fn relu(&self) -> Tensor<T> {
        self.map_unary("relu", |x| x.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.map_unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.map_unary("sigmoid", |x| T::one() / (T::one() + (-x).exp()), |_, y| y * (T::one() - y))
    }

    pub fn exp(&self) -> Tensor<T> {
        self.map_unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.map_unary("sqrt", |x| x.sqrt(), |_, y| lit::<T>(0.5) / y)
    }

    pub fn square(&self) -> Tensor<T> {
        self.map_unary("square", |x| x * x, |x, _| x + x)
    }

    /// `|x|` with subgradient 0 at the kink.
    pub fn abs(&self) -> Tensor<T> {
        self.map_unary("abs", |x| x.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>, NumError> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(NumError::shape("reshape", format!("{:?} -> {shape:?}", self.shape())));
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), "reshape", vec![self.clone()], |g| vec![Some(g.to_vec())]))
    }

    /// Collapses to `[rows, cols]`.
    pub fn as_2d(&self) -> Result<Tensor<T>, NumError> {
        if self.rank() == 2 {
            return Ok(self.clone());
        }
        self.reshape(&[self.rows(), self.cols()])
    }

    /// `[M,K] · [K,N] → [M,N]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        self.matmul_impl(rhs, false)
    }

    /// `[M,K] · [N,K]ᵀ → [M,N]`.
    pub fn matmul_t(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        self.matmul_impl(rhs, true)
    }

    fn matmul_impl(&self, rhs: &Tensor<T>, rhs_transposed: bool) -> Result<Tensor<T>, NumError> {
        if self.rank() != 2 || rhs.rank() != 2 {
            return Err(NumError::shape("matmul", format!("{:?} · {:?}: rank-2 required", self.shape(), rhs.shape())));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = if rhs_transposed { (rhs.shape()[1], rhs.shape()[0]) } else { (rhs.shape()[0], rhs.shape()[1]) };
        if k != k2 {
            return Err(NumError::shape(
                "matmul",
                format!("inner dims differ: {:?} · {:?}{}", self.shape(), rhs.shape(), if rhs_transposed { "ᵀ" } else { "" }),
            ));
        }
        // rhs as a K×N operand.
        let bs = if rhs_transposed { (1, k as isize) } else { (n as isize, 1) };
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(), (k as isize, 1), rhs.data(), bs, T::zero(), &mut out);
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(out, vec![m, n], "matmul", vec![self.clone(), rhs.clone()], move |g| {
            // dA = G · Bᵀ  (M×N · N×K)
            let ga = a.requires_grad().then(|| {
                let mut ga = vec![T::zero(); m * k];
                let bt = if rhs_transposed { (k as isize, 1) } else { (1, n as isize) };
                T::gemm(m, n, k, g, (n as isize, 1), b.data(), bt, T::zero(), &mut ga);
                ga
            });
            let gb = b.requires_grad().then(|| {
                if rhs_transposed {
                    // dB (N×K) = Gᵀ · A
                    let mut gb = vec![T::zero(); n * k];
                    T::gemm(n, m, k, g, (1, n as isize), a.data(), (k as isize, 1), T::zero(), &mut gb);
                    gb
                } else {
                    // dB (K×N) = Aᵀ · G
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(k, m, n, a.data(), (1, k as isize), g, (n as isize, 1), T::zero(), &mut gb);
                    gb
                }
            });
            vec![ga, gb]
        }))
    }

    pub fn transpose(&self) -> Result<Tensor<T>, NumError> {
        if self.rank() != 2 {
            return Err(NumError::shape("transpose", format!("{:?}: rank-2 required", self.shape())));
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data()[i * n + j];
            }
        }
        Ok(Tensor::from_op(out, vec![n, m], "transpose", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); m * n];
            for i in 0..m {
                for j in 0..n {
                    gx[i * n + j] = g[j * m + i];
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Softmax over the trailing dimension.
    pub fn softmax(&self) -> Tensor<T> {
        let c = self.cols();
        let mut out = self.to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let y = out.clone();
        Tensor::from_op(out, self.shape().to_vec(), "softmax", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for ((gx, g), y) in gx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                let dot: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
                for j in 0..c {
                    gx[j] = y[j] * (g[j] - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Log-softmax over the trailing dimension.
    pub fn log_softmax(&self) -> Tensor<T> {
        let c = self.cols();
        let mut out = self.to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let y = out.clone();
        Tensor::from_op(out, self.shape().to_vec(), "log_softmax", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for ((gx, g), y) in gx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                let total: T = g.iter().copied().sum();
                for j in 0..c {
                    gx[j] = g[j] - y[j].exp() * total;
                }
            }
            vec![Some(gx)]
        })
    }

    /// Per-row normalization to zero mean and unit variance, before any affine.
    /// A constant row maps to zeros.
    pub fn layer_norm(&self, eps: T) -> Tensor<T> {
        let c = self.cols();
        let n = lit::<T>(c as f64);
        let mut out = self.to_vec();
        let mut inv_std = Vec::with_capacity(self.rows());
        for row in out.chunks_mut(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let y = out.clone();
        Tensor::from_op(out, self.shape().to_vec(), "layer_norm", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for (r, ((gx, g), y)) in gx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)).enumerate() {
                let mean_g = g.iter().copied().sum::<T>() / n;
                let mean_gy = g.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / n;
                for j in 0..c {
                    gx[j] = inv_std[r] * (g[j] - mean_g - y[j] * mean_gy);
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], vec![1], "sum", vec![self.clone()], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum().scale(T::one() / lit(n as f64))
    }

    /// Sums rows: `[rows, cols] → [cols]`.
    pub fn sum_rows(&self) -> Tensor<T> {
        let c = self.cols();
        let r = self.rows();
        let mut out = vec![T::zero(); c];
        for row in self.data().chunks(c) {
            out.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        Tensor::from_op(out, vec![c], "sum_rows", vec![self.clone()], move |g| {
            let mut gx = Vec::with_capacity(r * c);
            for _ in 0..r {
                gx.extend_from_slice(g);
            }
            vec![Some(gx)]
        })
    }

    /// Sums each row: `[rows, cols] → [rows]`.
    pub fn sum_cols(&self) -> Tensor<T> {
        let c = self.cols();
        let out: Vec<T> = self.data().chunks(c).map(|row| row.iter().copied().sum()).collect();
        let r = out.len();
        Tensor::from_op(out, vec![r], "sum_cols", vec![self.clone()], move |g| {
            vec![Some(g.iter().flat_map(|&v| std::iter::repeat(v).take(c)).collect())]
        })
    }

    /// Max over consecutive groups of `group` rows: `[G·group, C] → [G, C]`.
    /// Ties route the gradient to the first maximal row.
    pub fn group_max(&self, group: usize) -> Result<Tensor<T>, NumError> {
        let (r, c) = (self.rows(), self.cols());
        if group == 0 || r % group != 0 {
            return Err(NumError::shape("group_max", format!("{r} rows not divisible into groups of {group}")));
        }
        let groups = r / group;
        let x = self.data();
        let mut out = vec![T::zero(); groups * c];
        let mut arg = vec![0usize; groups * c];
        for gi in 0..groups {
            for j in 0..c {
                let mut best = gi * group;
                for row in gi * group + 1..(gi + 1) * group {
                    if x[row * c + j] > x[best * c + j] {
                        best = row;
                    }
                }
                out[gi * c + j] = x[best * c + j];
                arg[gi * c + j] = best;
            }
        }
        Ok(Tensor::from_op(out, vec![groups, c], "group_max", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); r * c];
            for (idx, &row) in arg.iter().enumerate() {
                gx[row * c + idx % c] += g[idx];
            }
            vec![Some(gx)]
        }))
    }

    /// Mean over consecutive groups of `group` rows.
    pub fn group_mean(&self, group: usize) -> Result<Tensor<T>, NumError> {
        let (r, c) = (self.rows(), self.cols());
        if group == 0 || r % group != 0 {
            return Err(NumError::shape("group_mean", format!("{r} rows not divisible into groups of {group}")));
        }
        let groups = r / group;
        let inv = T::one() / lit(group as f64);
        let mut out = vec![T::zero(); groups * c];
        for (row_i, row) in self.data().chunks(c).enumerate() {
            let o = &mut out[(row_i / group) * c..(row_i / group + 1) * c];
            o.iter_mut().zip(row).for_each(|(a, &v)| *a += v * inv);
        }
        Ok(Tensor::from_op(out, vec![groups, c], "group_mean", vec![self.clone()], move |g| {
            let mut gx = Vec::with_capacity(r * c);
            for row_i in 0..r {
                let gi = row_i / group;
                gx.extend(g[gi * c..(gi + 1) * c].iter().map(|&v| v * inv));
            }
            vec![Some(gx)]
        }))
    }

    /// Row gather: output row `i` is input row `idx[i]`, or zeros for `None`.
    pub fn gather_rows(&self, idx: &[Option<usize>]) -> Result<Tensor<T>, NumError> {
        let (r, c) = (self.rows(), self.cols());
        if let Some(bad) = idx.iter().flatten().find(|&&i| i >= r) {
            return Err(NumError::shape("gather_rows", format!("row {bad} out of {r}")));
        }
        if idx.is_empty() {
            return Err(NumError::shape("gather_rows", "empty index list".into()));
        }
        let x = self.data();
        let mut out = vec![T::zero(); idx.len() * c];
        for (o, i) in out.chunks_mut(c).zip(idx) {
            if let Some(i) = *i {
                o.copy_from_slice(&x[i * c..(i + 1) * c]);
            }
        }
        let idx = idx.to_vec();
        Ok(Tensor::from_op(out, vec![idx.len(), c], "gather_rows", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); r * c];
            for (grow, i) in g.chunks(c).zip(&idx) {
                if let Some(i) = *i {
                    gx[i * c..(i + 1) * c].iter_mut().zip(grow).for_each(|(a, &v)| *a += v);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Row scatter-add: input row `i` is added into output row `idx[i]`;
    /// rows with `None` are dropped.
    pub fn scatter_rows(&self, idx: &[Option<usize>], n_out: usize) -> Result<Tensor<T>, NumError> {
        let (r, c) = (self.rows(), self.cols());
        if idx.len() != r {
            return Err(NumError::shape("scatter_rows", format!("{} indices for {r} rows", idx.len())));
        }
        if let Some(bad) = idx.iter().flatten().find(|&&i| i >= n_out) {
            return Err(NumError::shape("scatter_rows", format!("target row {bad} out of {n_out}")));
        }
        let mut out = vec![T::zero(); n_out * c];
        for (row, i) in self.data().chunks(c).zip(idx) {
            if let Some(i) = *i {
                out[i * c..(i + 1) * c].iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
        }
        let idx = idx.to_vec();
        Ok(Tensor::from_op(out, vec![n_out, c], "scatter_rows", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); r * c];
            for (grow, i) in gx.chunks_mut(c).zip(&idx) {
                if let Some(i) = *i {
                    grow.copy_from_slice(&g[i * c..(i + 1) * c]);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Picks one column per row: `out[r] = x[r, idx[r]]`.
    pub fn pick(&self, idx: &[usize]) -> Result<Tensor<T>, NumError> {
        let (r, c) = (self.rows(), self.cols());
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(NumError::shape("pick", format!("{} indices into {r}×{c}", idx.len())));
        }
        let out = idx.iter().enumerate().map(|(i, &j)| self.data()[i * c + j]).collect();
        let idx = idx.to_vec();
        Ok(Tensor::from_op(out, vec![r], "pick", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); r * c];
            for (i, &j) in idx.iter().enumerate() {
                gx[i * c + j] = g[i];
            }
            vec![Some(gx)]
        }))
    }

    /// Column range `[start, end)` of every row.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor<T>, NumError> {
        let c = self.cols();
        if start >= end || end > c {
            return Err(NumError::shape("slice_cols", format!("{start}..{end} of {c} cols")));
        }
        let w = end - start;
        let out = self.data().chunks(c).flat_map(|row| row[start..end].iter().copied()).collect();
        let r = self.rows();
        Ok(Tensor::from_op(out, vec![r, w], "slice_cols", vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); r * c];
            for (grow, orow) in gx.chunks_mut(c).zip(g.chunks(w)) {
                grow[start..end].copy_from_slice(orow);
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenates along the trailing dimension; all parts share a row count.
    pub fn concat_cols(parts: &[&Tensor<T>]) -> Result<Tensor<T>, NumError> {
        let Some(first) = parts.first() else {
            return Err(NumError::shape("concat_cols", "no inputs".into()));
        };
        let r = first.rows();
        if let Some(p) = parts.iter().find(|p| p.rows() != r) {
            return Err(NumError::shape("concat_cols", format!("{} rows vs {r}", p.rows())));
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        let inputs: Vec<Tensor<T>> = parts.iter().map(|&p| p.clone()).collect();
        let flags: Vec<bool> = inputs.iter().map(|p| p.requires_grad()).collect();
        Ok(Tensor::from_op(out, vec![r, total], "concat_cols", inputs, move |g| {
            let mut offset = 0;
            widths
                .iter()
                .zip(&flags)
                .map(|(&w, &needed)| {
                    let s = offset;
                    offset += w;
                    needed.then(|| g.chunks(total).flat_map(|row| row[s..s + w].iter().copied()).collect())
                })
                .collect()
        }))
    }

    /// Stacks along the leading dimension; all parts share `cols`.
    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Tensor<T>, NumError> {
        let Some(first) = parts.first() else {
            return Err(NumError::shape("concat_rows", "no inputs".into()));
        };
        let c = first.cols();
        if let Some(p) = parts.iter().find(|p| p.cols() != c) {
            return Err(NumError::shape("concat_rows", format!("{} cols vs {c}", p.cols())));
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        let out: Vec<T> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
        let rows = out.len() / c;
        let inputs: Vec<Tensor<T>> = parts.iter().map(|&p| p.clone()).collect();
        Ok(Tensor::from_op(out, vec![rows, c], "concat_rows", inputs, move |g| {
            let mut offset = 0;
            sizes
                .iter()
                .map(|&n| {
                    let s = offset;
                    offset += n;
                    Some(g[s..s + n].to_vec())
                })
                .collect()
        }))
    }

    /// Multiplies by a fixed 0/(1/(1-p)) mask.
    pub fn dropout(&self, p: f64, rng: &mut impl rand::Rng) -> Tensor<T> {
        if p <= 0.0 {
            return self.clone();
        }
        let keep = lit::<T>(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel()).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let out = self.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        Tensor::from_op(out, self.shape().to_vec(), "dropout", vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]
        })
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Fills a fresh buffer row by row: `f(row_index, input_row, output_row)`.
fn rowwise<T: Real>(data: &[T], cols: usize, mut f: impl FnMut(usize, &[T], &mut [T])) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    if cols > 0 {
        data.chunks(cols).zip(out.chunks_mut(cols)).enumerate().for_each(|(r, (row, o))| f(r, row, o));
    }
    out
}
