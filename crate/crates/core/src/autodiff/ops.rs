use std::sync::Arc;

use super::{Tape, Tensor, Var};
use crate::error::AutodiffError;
use crate::repr::{basis_blocks, irrep_dim, Block2, FeatureType, KernelKind, KernelLayout};
use crate::scalar::Scalar;

fn shape_err(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

/// Padded basis matrices for every distinct (n_in, n_out) pair of a layout,
/// per row (or once, for self kernels).
struct BasisTable<T> {
    pair_of_block: Vec<usize>,
    pairs: usize,
    per_row: bool,
    values: Vec<[Block2<T>; 4]>,
}

impl<T: Scalar> BasisTable<T> {
    fn new(layout: &KernelLayout, thetas: Option<&[T]>) -> Self {
        let mut pair_ids: Vec<(u32, u32)> = Vec::new();
        let pair_of_block = layout
            .blocks()
            .iter()
            .map(|b| match pair_ids.iter().position(|&p| p == (b.n_in, b.n_out)) {
                Some(i) => i,
                None => {
                    pair_ids.push((b.n_in, b.n_out));
                    pair_ids.len() - 1
                }
            })
            .collect();
        let kind = layout.kind();
        let zero = [[[T::zero(); 2]; 2]; 4];
        let (per_row, values) = match (kind, thetas) {
            (KernelKind::Neighbor, Some(th)) => {
                let mut v = vec![zero; th.len() * pair_ids.len()];
                for (r, &t) in th.iter().enumerate() {
                    for (k, &(ni, no)) in pair_ids.iter().enumerate() {
                        basis_blocks(ni, no, kind, t, &mut v[r * pair_ids.len() + k]);
                    }
                }
                (true, v)
            }
            _ => {
                let mut v = vec![zero; pair_ids.len()];
                for (k, &(ni, no)) in pair_ids.iter().enumerate() {
                    basis_blocks(ni, no, kind, T::zero(), &mut v[k]);
                }
                (false, v)
            }
        };
        BasisTable {
            pair_of_block,
            pairs: pair_ids.len(),
            per_row,
            values,
        }
    }

    #[inline]
    fn get(&self, row: usize, block: usize) -> &[Block2<T>; 4] {
        let p = self.pair_of_block[block];
        if self.per_row {
            &self.values[row * self.pairs + p]
        } else {
            &self.values[p]
        }
    }
}

#[inline]
fn combine<T: Scalar>(basis: &[Block2<T>; 4], coef: &[T]) -> Block2<T> {
    let mut m = [[T::zero(); 2]; 2];
    for (c, b) in coef.iter().zip(basis) {
        m[0][0] += *c * b[0][0];
        m[0][1] += *c * b[0][1];
        m[1][0] += *c * b[1][0];
        m[1][1] += *c * b[1][1];
    }
    m
}

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{op}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "add")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.rows, x.cols, data);
        Ok(self.push(out, &[a, b], move |_, g, gr| {
            for v in [a, b] {
                if let Some(d) = gr.get_mut(v) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
            }
        }))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "mul_elem")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.rows, x.cols, data);
        Ok(self.push(out, &[a, b], move |n, g, gr| {
            let (x, y) = (&n[a.0].value.data, &n[b.0].value.data);
            if let Some(d) = gr.get_mut(a) {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i];
                }
            }
            if let Some(d) = gr.get_mut(b) {
                for i in 0..d.len() {
                    d[i] += g[i] * x[i];
                }
            }
        }))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.rows, x.cols, x.data.iter().map(|&v| v * c).collect());
        self.push(out, &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * c);
            }
        })
    }

    /// Elementwise product with a constant mask of the same shape.
    pub fn mul_const(&mut self, a: Var, mask: Vec<T>) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if mask.len() != x.data.len() {
            return Err(shape_err(format!("mul_const: mask {} vs {}", mask.len(), x.data.len())));
        }
        let out = Tensor::new(x.rows, x.cols, x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect());
        Ok(self.push(out, &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                for i in 0..d.len() {
                    d[i] += g[i] * mask[i];
                }
            }
        }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols != y.rows {
            return Err(shape_err(format!("matmul: {:?} x {:?}", x.shape(), y.shape())));
        }
        let (m, k, n) = (x.rows, x.cols, y.cols);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let o = &mut out[i * n..(i + 1) * n];
            for l in 0..k {
                let xv = x.data[i * k + l];
                if xv == T::zero() {
                    continue;
                }
                let yr = &y.data[l * n..(l + 1) * n];
                o.iter_mut().zip(yr).for_each(|(o, &yv)| *o += xv * yv);
            }
        }
        let out = Tensor::new(m, n, out);
        Ok(self.push(out, &[a, b], move |nodes, g, gr| {
            let (x, y) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
            if let Some(d) = gr.get_mut(a) {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for l in 0..k {
                        let yr = &y[l * n..(l + 1) * n];
                        let mut s = T::zero();
                        for j in 0..n {
                            s += gi[j] * yr[j];
                        }
                        d[i * k + l] += s;
                    }
                }
            }
            if let Some(d) = gr.get_mut(b) {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for l in 0..k {
                        let xv = x[i * k + l];
                        let dr = &mut d[l * n..(l + 1) * n];
                        dr.iter_mut().zip(gi).for_each(|(d, &g)| *d += xv * g);
                    }
                }
            }
        }))
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows != 1 || b.cols != x.cols {
            return Err(shape_err(format!("add_row_bias: {:?} + {:?}", x.shape(), b.shape())));
        }
        let n = x.cols;
        let data = x.data.iter().enumerate().map(|(i, &v)| v + b.data[i % n]).collect();
        let out = Tensor::new(x.rows, n, data);
        Ok(self.push(out, &[a, bias], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = gr.get_mut(bias) {
                for (i, &gv) in g.iter().enumerate() {
                    d[i % n] += gv;
                }
            }
        }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.rows, x.cols, x.data.iter().map(|&v| v.max(T::zero())).collect());
        self.push(out, &[a], move |nodes, g, gr| {
            let x = &nodes[a.0].value.data;
            if let Some(d) = gr.get_mut(a) {
                for i in 0..d.len() {
                    if x[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            }
        })
    }

    /// Column means, 1×n.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.shape();
        let inv = T::one() / T::of(m as f64);
        let mut out = vec![T::zero(); n];
        for r in 0..m {
            out.iter_mut().zip(x.row(r)).for_each(|(o, &v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(Tensor::new(1, n, out), &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                for (i, d) in d.iter_mut().enumerate() {
                    *d += g[i % n] * inv;
                }
            }
        })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data.iter().fold(T::zero(), |s, &v| s + v);
        self.push(Tensor::scalar(s), &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        })
    }

    /// Σ w ⊙ a for a constant weight array, 1×1.
    pub fn dot_const(&mut self, a: Var, w: Vec<T>) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if w.len() != x.data.len() {
            return Err(shape_err(format!("dot_const: {} weights for {} values", w.len(), x.data.len())));
        }
        let s = x.data.iter().zip(&w).fold(T::zero(), |s, (&v, &c)| s + v * c);
        Ok(self.push(Tensor::scalar(s), &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                d.iter_mut().zip(&w).for_each(|(d, &c)| *d += g[0] * c);
            }
        }))
    }

    /// Mean over rows of -log softmax(row)[target].
    pub fn nll_loss(&mut self, logits: Var, targets: &[usize]) -> Result<Var, AutodiffError> {
        let x = self.value(logits);
        let (m, k) = x.shape();
        if targets.len() != m {
            return Err(shape_err(format!("nll_loss: {} targets for {m} rows", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(AutodiffError::InvalidTarget { target: t, classes: k });
        }
        let mut probs = vec![T::zero(); m * k];
        let mut loss = T::zero();
        for r in 0..m {
            let row = x.row(r);
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let z = row.iter().fold(T::zero(), |s, &v| s + (v - mx).exp());
            let lz = z.ln() + mx;
            loss += lz - row[targets[r]];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lz).exp();
            }
        }
        let inv = T::one() / T::of(m as f64);
        let targets = targets.to_vec();
        Ok(self.push(Tensor::scalar(loss * inv), &[logits], move |_, g, gr| {
            if let Some(d) = gr.get_mut(logits) {
                let s = g[0] * inv;
                for r in 0..m {
                    for j in 0..k {
                        d[r * k + j] += s * probs[r * k + j];
                    }
                    d[r * k + targets[r]] -= s;
                }
            }
        }))
    }

    /// Rows `idx[i]` of `a`, stacked.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let n = x.cols;
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows) {
            return Err(shape_err(format!("gather_rows: index {bad} >= {}", x.rows)));
        }
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx.iter() {
            out.extend_from_slice(x.row(i));
        }
        let out = Tensor::new(idx.len(), n, out);
        Ok(self.push(out, &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                for (r, &i) in idx.iter().enumerate() {
                    let dr = &mut d[i * n..(i + 1) * n];
                    dr.iter_mut().zip(&g[r * n..(r + 1) * n]).for_each(|(d, &g)| *d += g);
                }
            }
        }))
    }

    /// out[idx[r]] += a[r], with `rows` output rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, rows: usize) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let n = x.cols;
        if idx.len() != x.rows {
            return Err(shape_err(format!("scatter_add_rows: {} indices for {} rows", idx.len(), x.rows)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err(format!("scatter_add_rows: index {bad} >= {rows}")));
        }
        let mut out = vec![T::zero(); rows * n];
        for (r, &i) in idx.iter().enumerate() {
            out[i * n..(i + 1) * n].iter_mut().zip(x.row(r)).for_each(|(o, &v)| *o += v);
        }
        let out = Tensor::new(rows, n, out);
        Ok(self.push(out, &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                for (r, &i) in idx.iter().enumerate() {
                    let dr = &mut d[r * n..(r + 1) * n];
                    dr.iter_mut().zip(&g[i * n..(i + 1) * n]).for_each(|(d, &g)| *d += g);
                }
            }
        }))
    }

    /// Row r ↦ ρ(angles[r]) row r, for rows of type `ftype`.
    pub fn rep_rotate(&mut self, a: Var, ftype: &FeatureType, angles: Arc<[T]>) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if x.cols != ftype.dim() || angles.len() != x.rows {
            return Err(shape_err(format!(
                "rep_rotate: {:?} with type dim {} and {} angles",
                x.shape(),
                ftype.dim(),
                angles.len()
            )));
        }
        let comps: Arc<[(u32, usize)]> = ftype
            .orders()
            .iter()
            .zip(ftype.offsets())
            .filter(|(&n, _)| n > 0)
            .map(|(&n, &o)| (n, o))
            .collect();
        let n = x.cols;
        let max_order = ftype.max_order() as usize;
        let mut out = x.data.clone();
        // sin/cos of k·angle per row, k = 1..=max_order
        let mut trig = vec![(T::zero(), T::one()); angles.len() * max_order];
        for (r, &t) in angles.iter().enumerate() {
            for k in 0..max_order {
                trig[r * max_order + k] = (T::of((k + 1) as f64) * t).sin_cos();
            }
        }
        for r in 0..x.rows {
            let row = &mut out[r * n..(r + 1) * n];
            for &(ord, o) in comps.iter() {
                let (s, c) = trig[r * max_order + ord as usize - 1];
                let (p, q) = (row[o], row[o + 1]);
                row[o] = c * p - s * q;
                row[o + 1] = s * p + c * q;
            }
        }
        let out = Tensor::new(x.rows, n, out);
        Ok(self.push(out, &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                for r in 0..angles.len() {
                    for &(ord, o) in comps.iter() {
                        let (s, c) = trig[r * max_order + ord as usize - 1];
                        let (gp, gq) = (g[r * n + o], g[r * n + o + 1]);
                        // transpose of the rotation; identity part already added
                        d[r * n + o] += c * gp + s * gq - gp;
                        d[r * n + o + 1] += -s * gp + c * gq - gq;
                    }
                }
            }
        }))
    }

    /// Row r ↦ K(θ_r) row r with K assembled from `coef` under `layout`.
    /// Self kernels ignore `thetas`.
    pub fn kernel_apply(
        &mut self,
        x: Var,
        coef: Var,
        layout: Arc<KernelLayout>,
        thetas: Option<Arc<[T]>>,
    ) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let cv = self.value(coef);
        let (rows, cin) = xv.shape();
        let cout = layout.out_type().dim();
        if cin != layout.in_type().dim() {
            return Err(shape_err(format!("kernel_apply: input width {cin}, kernel expects {}", layout.in_type().dim())));
        }
        if cv.data.len() != layout.coef_count() {
            return Err(shape_err(format!(
                "kernel_apply: {} coefficients, layout has {}",
                cv.data.len(),
                layout.coef_count()
            )));
        }
        if layout.kind() == KernelKind::Neighbor {
            match &thetas {
                Some(t) if t.len() == rows => {}
                _ => return Err(shape_err("kernel_apply: neighbor kernel needs one angle per row".into())),
            }
        }
        let table = Arc::new(BasisTable::new(&layout, thetas.as_deref()));
        let mut out = vec![T::zero(); rows * cout];
        // rows outer keeps one row of input, output and basis in cache
        let shared: Vec<Block2<T>> = if table.per_row {
            Vec::new()
        } else {
            layout
                .blocks()
                .iter()
                .enumerate()
                .map(|(bi, b)| combine(table.get(0, bi), &cv.data[b.coef_offset..b.coef_offset + b.basis_len]))
                .collect()
        };
        for r in 0..rows {
            let xr = &xv.data[r * cin..(r + 1) * cin];
            let yr = &mut out[r * cout..(r + 1) * cout];
            for (bi, b) in layout.blocks().iter().enumerate() {
                let m = if table.per_row {
                    combine(table.get(r, bi), &cv.data[b.coef_offset..b.coef_offset + b.basis_len])
                } else {
                    shared[bi]
                };
                let xi = &xr[b.in_offset..];
                let yo = &mut yr[b.out_offset..];
                match (irrep_dim(b.n_out), irrep_dim(b.n_in)) {
                    (1, 1) => yo[0] += m[0][0] * xi[0],
                    (1, 2) => yo[0] += m[0][0] * xi[0] + m[0][1] * xi[1],
                    (2, 1) => {
                        yo[0] += m[0][0] * xi[0];
                        yo[1] += m[1][0] * xi[0];
                    }
                    _ => {
                        yo[0] += m[0][0] * xi[0] + m[0][1] * xi[1];
                        yo[1] += m[1][0] * xi[0] + m[1][1] * xi[1];
                    }
                }
            }
        }
        let out = Tensor::new(rows, cout, out);
        Ok(self.push(out, &[x, coef], move |nodes, g, gr| {
            let xv = &nodes[x.0].value.data;
            let cv = &nodes[coef.0].value.data;
            if let Some(dx) = gr.get_mut(x) {
                let shared: Vec<Block2<T>> = if table.per_row {
                    Vec::new()
                } else {
                    layout
                        .blocks()
                        .iter()
                        .enumerate()
                        .map(|(bi, b)| combine(table.get(0, bi), &cv[b.coef_offset..b.coef_offset + b.basis_len]))
                        .collect()
                };
                for r in 0..rows {
                    let gr_row = &g[r * cout..(r + 1) * cout];
                    let dr = &mut dx[r * cin..(r + 1) * cin];
                    for (bi, b) in layout.blocks().iter().enumerate() {
                        let m = if table.per_row {
                            combine(table.get(r, bi), &cv[b.coef_offset..b.coef_offset + b.basis_len])
                        } else {
                            shared[bi]
                        };
                        let (dout, din) = (irrep_dim(b.n_out), irrep_dim(b.n_in));
                        let go = &gr_row[b.out_offset..];
                        let di = &mut dr[b.in_offset..];
                        for j in 0..din {
                            let mut s = T::zero();
                            for i in 0..dout {
                                s += m[i][j] * go[i];
                            }
                            di[j] += s;
                        }
                    }
                }
            }
            if let Some(dc) = gr.get_mut(coef) {
                let blocks = layout.blocks();
                if !table.per_row {
                    // Σ_r g xᵀ per block first, then project on the fixed basis
                    let mut outer = vec![[[T::zero(); 2]; 2]; blocks.len()];
                    for r in 0..rows {
                        let go_row = &g[r * cout..(r + 1) * cout];
                        let x_row = &xv[r * cin..(r + 1) * cin];
                        for (b, o) in blocks.iter().zip(outer.iter_mut()) {
                            let go = &go_row[b.out_offset..];
                            let xi = &x_row[b.in_offset..];
                            for i in 0..irrep_dim(b.n_out) {
                                for j in 0..irrep_dim(b.n_in) {
                                    o[i][j] += go[i] * xi[j];
                                }
                            }
                        }
                    }
                    for (bi, (b, o)) in blocks.iter().zip(&outer).enumerate() {
                        let basis = table.get(0, bi);
                        for k in 0..b.basis_len {
                            let mut s = T::zero();
                            for i in 0..irrep_dim(b.n_out) {
                                for j in 0..irrep_dim(b.n_in) {
                                    s += o[i][j] * basis[k][i][j];
                                }
                            }
                            dc[b.coef_offset + k] += s;
                        }
                    }
                } else {
                    for r in 0..rows {
                        let go_row = &g[r * cout..(r + 1) * cout];
                        let x_row = &xv[r * cin..(r + 1) * cin];
                        for (bi, b) in blocks.iter().enumerate() {
                            let (dout, din) = (irrep_dim(b.n_out), irrep_dim(b.n_in));
                            let go = &go_row[b.out_offset..];
                            let xi = &x_row[b.in_offset..];
                            let basis = table.get(r, bi);
                            for k in 0..b.basis_len {
                                let mut s = T::zero();
                                for i in 0..dout {
                                    for j in 0..din {
                                        s += go[i] * basis[k][i][j] * xi[j];
                                    }
                                }
                                dc[b.coef_offset + k] += s;
                            }
                        }
                    }
                }
            }
        }))
    }

    /// Row-wise inner products, rows×1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "row_dot")?;
        let (x, y) = (self.value(a), self.value(b));
        let (m, n) = x.shape();
        let out: Vec<T> = (0..m)
            .map(|r| x.row(r).iter().zip(y.row(r)).fold(T::zero(), |s, (&p, &q)| s + p * q))
            .collect();
        Ok(self.push(Tensor::new(m, 1, out), &[a, b], move |nodes, g, gr| {
            let (x, y) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
            if let Some(d) = gr.get_mut(a) {
                for r in 0..m {
                    for j in 0..n {
                        d[r * n + j] += g[r] * y[r * n + j];
                    }
                }
            }
            if let Some(d) = gr.get_mut(b) {
                for r in 0..m {
                    for j in 0..n {
                        d[r * n + j] += g[r] * x[r * n + j];
                    }
                }
            }
        }))
    }

    /// Row r of `a` times s[r], with `s` a rows×1 variable.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let (x, sv) = (self.value(a), self.value(s));
        let (m, n) = x.shape();
        if sv.shape() != (m, 1) {
            return Err(shape_err(format!("row_scale: {:?} by {:?}", x.shape(), sv.shape())));
        }
        let data = x.data.iter().enumerate().map(|(i, &v)| v * sv.data[i / n]).collect();
        Ok(self.push(Tensor::new(m, n, data), &[a, s], move |nodes, g, gr| {
            let (x, sv) = (&nodes[a.0].value.data, &nodes[s.0].value.data);
            if let Some(d) = gr.get_mut(a) {
                for i in 0..m * n {
                    d[i] += g[i] * sv[i / n];
                }
            }
            if let Some(d) = gr.get_mut(s) {
                for r in 0..m {
                    let mut acc = T::zero();
                    for j in 0..n {
                        acc += g[r * n + j] * x[r * n + j];
                    }
                    d[r] += acc;
                }
            }
        }))
    }

    /// Row r of `a` times the constant s[r].
    pub fn row_scale_const(&mut self, a: Var, s: Arc<[T]>) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let (m, n) = x.shape();
        if s.len() != m {
            return Err(shape_err(format!("row_scale_const: {} factors for {m} rows", s.len())));
        }
        let data = x.data.iter().enumerate().map(|(i, &v)| v * s[i / n]).collect();
        Ok(self.push(Tensor::new(m, n, data), &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                for i in 0..m * n {
                    d[i] += g[i] * s[i / n];
                }
            }
        }))
    }

    /// Softmax of a column vector within groups: rows with equal `groups[r]`
    /// are normalized together.
    pub fn segment_softmax(&mut self, a: Var, groups: Arc<[usize]>, group_count: usize) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if x.cols != 1 || groups.len() != x.rows {
            return Err(shape_err(format!("segment_softmax: {:?} with {} group ids", x.shape(), groups.len())));
        }
        if let Some(&bad) = groups.iter().find(|&&k| k >= group_count) {
            return Err(shape_err(format!("segment_softmax: group {bad} >= {group_count}")));
        }
        let mut mx = vec![T::neg_infinity(); group_count];
        for (r, &k) in groups.iter().enumerate() {
            mx[k] = mx[k].max(x.data[r]);
        }
        let mut z = vec![T::zero(); group_count];
        let mut out: Vec<T> = groups
            .iter()
            .enumerate()
            .map(|(r, &k)| {
                let e = (x.data[r] - mx[k]).exp();
                z[k] += e;
                e
            })
            .collect();
        for (r, &k) in groups.iter().enumerate() {
            out[r] /= z[k];
        }
        let rows = x.rows;
        let out = Tensor::new(rows, 1, out);
        let me = self.len();
        Ok(self.push(out, &[a], move |nodes, g, gr| {
            let s = &nodes[me].value.data;
            if let Some(d) = gr.get_mut(a) {
                let mut dot = vec![T::zero(); group_count];
                for (r, &k) in groups.iter().enumerate() {
                    dot[k] += s[r] * g[r];
                }
                for (r, &k) in groups.iter().enumerate() {
                    d[r] += s[r] * (g[r] - dot[k]);
                }
            }
        }))
    }

    /// Angular bias: ρ0 channels get +b, ρn channels are rotated by ρn(b).
    /// `bias` holds one angle per component of `ftype`.
    pub fn angular_bias(&mut self, a: Var, bias: Var, ftype: &FeatureType) -> Result<Var, AutodiffError> {
        let (x, b) = (self.value(a), self.value(bias));
        let (m, n) = x.shape();
        if n != ftype.dim() || b.data.len() != ftype.component_count() {
            return Err(shape_err(format!(
                "angular_bias: {:?} with {} biases for type {}",
                x.shape(),
                b.data.len(),
                ftype
            )));
        }
        let comps: Arc<[(u32, usize)]> = ftype.orders().iter().copied().zip(ftype.offsets().iter().copied()).collect();
        let trig: Arc<[(T, T)]> = comps
            .iter()
            .zip(&b.data)
            .map(|(&(ord, _), &bv)| (T::of(ord as f64) * bv).sin_cos())
            .collect();
        let mut out = x.data.clone();
        for r in 0..m {
            let row = &mut out[r * n..(r + 1) * n];
            for (k, &(ord, o)) in comps.iter().enumerate() {
                if ord == 0 {
                    row[o] += b.data[k];
                } else {
                    let (s, c) = trig[k];
                    let (p, q) = (row[o], row[o + 1]);
                    row[o] = c * p - s * q;
                    row[o + 1] = s * p + c * q;
                }
            }
        }
        Ok(self.push(Tensor::new(m, n, out), &[a, bias], move |nodes, g, gr| {
            let x = &nodes[a.0].value.data;
            if let Some(d) = gr.get_mut(a) {
                for r in 0..m {
                    for (k, &(ord, o)) in comps.iter().enumerate() {
                        let i = r * n + o;
                        if ord == 0 {
                            d[i] += g[i];
                        } else {
                            let (s, c) = trig[k];
                            d[i] += c * g[i] + s * g[i + 1];
                            d[i + 1] += -s * g[i] + c * g[i + 1];
                        }
                    }
                }
            }
            if let Some(db) = gr.get_mut(bias) {
                for (k, &(ord, o)) in comps.iter().enumerate() {
                    let mut acc = T::zero();
                    if ord == 0 {
                        for r in 0..m {
                            acc += g[r * n + o];
                        }
                    } else {
                        // d/db ρn(b) x = n ρn(b) J x with J = [[0,-1],[1,0]]
                        let (s, c) = trig[k];
                        let nn = T::of(ord as f64);
                        for r in 0..m {
                            let i = r * n + o;
                            let (p, q) = (x[i], x[i + 1]);
                            let dp = -s * p - c * q;
                            let dq = c * p - s * q;
                            acc += nn * (g[i] * dp + g[i + 1] * dq);
                        }
                    }
                    db[k] += acc;
                }
            }
        }))
    }

    /// ReLU on ρ0 channels; ρn channels f ↦ f σ(‖f‖ + c)/(‖f‖ + 1e-6) with
    /// one learnable `c` per ρn component (in order).
    pub fn gated_norm(&mut self, a: Var, gate: Var, ftype: &FeatureType) -> Result<Var, AutodiffError> {
        let (x, c) = (self.value(a), self.value(gate));
        let (m, n) = x.shape();
        let vec_comps: Arc<[usize]> = ftype
            .orders()
            .iter()
            .zip(ftype.offsets())
            .filter(|(&ord, _)| ord > 0)
            .map(|(_, &o)| o)
            .collect();
        let scalar_cols: Arc<[usize]> = ftype
            .orders()
            .iter()
            .zip(ftype.offsets())
            .filter(|(&ord, _)| ord == 0)
            .map(|(_, &o)| o)
            .collect();
        if n != ftype.dim() || c.data.len() != vec_comps.len() {
            return Err(shape_err(format!(
                "gated_norm: {:?} with {} gates for type {}",
                x.shape(),
                c.data.len(),
                ftype
            )));
        }
        let eps = T::of(1e-6);
        let sigmoid = |t: T| T::one() / (T::one() + (-t).exp());
        let mut out = x.data.clone();
        for r in 0..m {
            let row = &mut out[r * n..(r + 1) * n];
            for &o in scalar_cols.iter() {
                row[o] = row[o].max(T::zero());
            }
            for (k, &o) in vec_comps.iter().enumerate() {
                let norm = (row[o] * row[o] + row[o + 1] * row[o + 1]).sqrt();
                let h = sigmoid(norm + c.data[k]) / (norm + eps);
                row[o] *= h;
                row[o + 1] *= h;
            }
        }
        Ok(self.push(Tensor::new(m, n, out), &[a, gate], move |nodes, g, gr| {
            let x = &nodes[a.0].value.data;
            let c = &nodes[gate.0].value.data;
            let mut dc_acc = vec![T::zero(); vec_comps.len()];
            let want_x = gr.get_mut(a).is_some();
            for r in 0..m {
                for (k, &o) in vec_comps.iter().enumerate() {
                    let i = r * n + o;
                    let (p, q) = (x[i], x[i + 1]);
                    let norm = (p * p + q * q).sqrt();
                    let sg = sigmoid(norm + c[k]);
                    let ds = sg * (T::one() - sg);
                    let inv = T::one() / (norm + eps);
                    let h = sg * inv;
                    let (gp, gq) = (g[i], g[i + 1]);
                    dc_acc[k] += (gp * p + gq * q) * ds * inv;
                    if want_x {
                        let (mut dp, mut dq) = (h * gp, h * gq);
                        if norm > T::zero() {
                            let hp = ds * inv - sg * inv * inv;
                            let proj = (gp * p + gq * q) * hp / norm;
                            dp += proj * p;
                            dq += proj * q;
                        }
                        let d = gr.get_mut(a).expect("checked above");
                        d[i] += dp;
                        d[i + 1] += dq;
                    }
                }
            }
            if let Some(d) = gr.get_mut(a) {
                for r in 0..m {
                    for &o in scalar_cols.iter() {
                        let i = r * n + o;
                        if x[i] > T::zero() {
                            d[i] += g[i];
                        }
                    }
                }
            }
            if let Some(dc) = gr.get_mut(gate) {
                dc.iter_mut().zip(&dc_acc).for_each(|(d, &v)| *d += v);
            }
        }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let (m, n) = x.shape();
        if start + len > n {
            return Err(shape_err(format!("slice_cols: {start}+{len} > {n}")));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&x.row(r)[start..start + len]);
        }
        Ok(self.push(Tensor::new(m, len, out), &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                for r in 0..m {
                    for j in 0..len {
                        d[r * n + start + j] += g[r * len + j];
                    }
                }
            }
        }))
    }

    /// Output column j is input column `cols[j]`.
    pub fn gather_cols(&mut self, a: Var, cols: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let (m, n) = x.shape();
        if let Some(&c) = cols.iter().find(|&&c| c >= n) {
            return Err(shape_err(format!("gather_cols: column {c} >= {n}")));
        }
        let w = cols.len();
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            let row = x.row(r);
            out.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(self.push(Tensor::new(m, w, out), &[a], move |_, g, gr| {
            if let Some(d) = gr.get_mut(a) {
                for r in 0..m {
                    for (j, &c) in cols.iter().enumerate() {
                        d[r * n + c] += g[r * w + j];
                    }
                }
            }
        }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let m = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        if parts.iter().any(|&p| self.shape(p).0 != m) {
            return Err(shape_err("concat_cols: row counts differ".into()));
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let owned = parts.to_vec();
        Ok(self.push(Tensor::new(m, n, out), parts, move |_, g, gr| {
            let mut start = 0;
            for (&p, &w) in owned.iter().zip(&widths) {
                if let Some(d) = gr.get_mut(p) {
                    for r in 0..m {
                        for j in 0..w {
                            d[r * w + j] += g[r * n + start + j];
                        }
                    }
                }
                start += w;
            }
        }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let n = self.shape(parts[0]).1;
        if parts.iter().any(|&p| self.shape(p).1 != n) {
            return Err(shape_err("concat_rows: column counts differ".into()));
        }
        let mut out = Vec::new();
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            lens.push(v.data.len());
            out.extend_from_slice(&v.data);
        }
        let m = out.len() / n.max(1);
        let owned = parts.to_vec();
        Ok(self.push(Tensor::new(m, n, out), parts, move |_, g, gr| {
            let mut start = 0;
            for (&p, &len) in owned.iter().zip(&lens) {
                if let Some(d) = gr.get_mut(p) {
                    d.iter_mut().zip(&g[start..start + len]).for_each(|(d, &g)| *d += g);
                }
                start += len;
            }
        }))
    }
}
