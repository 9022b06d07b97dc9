//! The gradient tape: values, recorded operations and reverse-mode
//! accumulation. Shape violations in tape ops are programming errors and
//! panic; user-facing validation happens in the layer wrappers.

use ndarray::{s, Array2};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// x [T,D] + row [1,D]
    AddRowBroadcast(Var, Var),
    /// x [T,D] * row [1,D]
    MulRowBroadcast(Var, Var),
    /// elementwise product with a constant mask of the same shape
    MulConst(Var, Array2<f64>),
    /// per-column affine with constants: y = x * scale[c] + shift[c];
    /// backward only needs the scale
    ColAffineConst(Var, Vec<f64>),
    /// y = a * x + b; backward only needs a
    ScalarAffine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    /// sum of all elements -> [1,1]
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    /// row gather from a table
    Gather(Var, Vec<usize>),
    /// same-padded 1-D convolution over rows: x [T, Cin], w [k*Cin, Cout]
    Conv1dSame { x: Var, w: Var, k: usize },
    /// max(x[t], x[t+1]) per column, same length; keeps argmax rows
    MaxPool2(Var, Vec<usize>),
    /// column-wise batch normalization to zero mean / unit variance using
    /// batch statistics; value is x_hat, inv_std saved for backward
    BatchNormTrain { x: Var, inv_std: Vec<f64> },
    ReverseRows(Var),
    Reshape(Var),
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records operations in execution order; backward traverses them in
/// reverse, adding into each parent's gradient.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            va.ncols(),
            vb.nrows(),
            "matmul: [{},{}] x [{},{}]",
            va.nrows(),
            va.ncols(),
            vb.nrows(),
            vb.ncols()
        );
        let value = va.dot(vb);
        let rg = self.req(a) || self.req(b);
        self.push(value, rg, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = same_shape("add", &self.nodes[a.0].value, &self.nodes[b.0].value);
        let rg = self.req(a) || self.req(b);
        self.push(value.0 + value.1, rg, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = same_shape("sub", &self.nodes[a.0].value, &self.nodes[b.0].value);
        let rg = self.req(a) || self.req(b);
        self.push(value.0 - value.1, rg, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = same_shape("mul", &self.nodes[a.0].value, &self.nodes[b.0].value);
        let rg = self.req(a) || self.req(b);
        self.push(value.0 * value.1, rg, Op::Mul(a, b))
    }

    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Var {
        let (vx, vr) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
        assert_eq!(vr.nrows(), 1, "add_row_broadcast: row must be [1,D]");
        assert_eq!(vx.ncols(), vr.ncols(), "add_row_broadcast: width mismatch");
        let value = vx + vr;
        let rg = self.req(x) || self.req(row);
        self.push(value, rg, Op::AddRowBroadcast(x, row))
    }

    pub fn mul_row_broadcast(&mut self, x: Var, row: Var) -> Var {
        let (vx, vr) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
        assert_eq!(vr.nrows(), 1, "mul_row_broadcast: row must be [1,D]");
        assert_eq!(vx.ncols(), vr.ncols(), "mul_row_broadcast: width mismatch");
        let value = vx * vr;
        let rg = self.req(x) || self.req(row);
        self.push(value, rg, Op::MulRowBroadcast(x, row))
    }

    pub fn mul_const(&mut self, x: Var, mask: Array2<f64>) -> Var {
        let vx = &self.nodes[x.0].value;
        assert_eq!(vx.dim(), mask.dim(), "mul_const: shape mismatch");
        let value = vx * &mask;
        let rg = self.req(x);
        self.push(value, rg, Op::MulConst(x, mask))
    }

    pub fn col_affine_const(&mut self, x: Var, scale: Vec<f64>, shift: Vec<f64>) -> Var {
        let vx = &self.nodes[x.0].value;
        assert_eq!(vx.ncols(), scale.len());
        assert_eq!(vx.ncols(), shift.len());
        let mut value = vx.clone();
        for mut row in value.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * scale[c] + shift[c];
            }
        }
        let rg = self.req(x);
        self.push(value, rg, Op::ColAffineConst(x, scale))
    }

    pub fn scalar_affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| a * v + b);
        let rg = self.req(x);
        self.push(value, rg, Op::ScalarAffine(x, a))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v.max(0.0));
        let rg = self.req(x);
        self.push(value, rg, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.req(x);
        self.push(value, rg, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(f64::tanh);
        let rg = self.req(x);
        self.push(value, rg, Op::Tanh(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(f64::abs);
        let rg = self.req(x);
        self.push(value, rg, Op::Abs(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.nodes[x.0].value.sum());
        let rg = self.req(x);
        self.push(value, rg, Op::Sum(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.nrows();
        let total: usize = parts.iter().map(|v| self.nodes[v.0].value.ncols()).sum();
        let mut value = Array2::zeros((rows, total));
        let mut at = 0;
        for v in parts {
            let pv = &self.nodes[v.0].value;
            assert_eq!(pv.nrows(), rows, "concat_cols: row mismatch");
            value.slice_mut(s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        let rg = parts.iter().any(|&v| self.req(v));
        self.push(value, rg, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0].0].value.ncols();
        let total: usize = parts.iter().map(|v| self.nodes[v.0].value.nrows()).sum();
        let mut value = Array2::zeros((total, cols));
        let mut at = 0;
        for v in parts {
            let pv = &self.nodes[v.0].value;
            assert_eq!(pv.ncols(), cols, "concat_rows: col mismatch");
            value.slice_mut(s![at..at + pv.nrows(), ..]).assign(pv);
            at += pv.nrows();
        }
        let rg = parts.iter().any(|&v| self.req(v));
        self.push(value, rg, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let vx = &self.nodes[x.0].value;
        assert!(start < end && end <= vx.nrows(), "slice_rows out of range");
        let value = vx.slice(s![start..end, ..]).to_owned();
        let rg = self.req(x);
        self.push(value, rg, Op::SliceRows(x, start, end))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let vx = &self.nodes[x.0].value;
        assert!(start < end && end <= vx.ncols(), "slice_cols out of range");
        let value = vx.slice(s![.., start..end]).to_owned();
        let rg = self.req(x);
        self.push(value, rg, Op::SliceCols(x, start, end))
    }

    /// Row gather: `out[i] = table[ids[i]]`; backward scatter-adds.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let vt = &self.nodes[table.0].value;
        let mut value = Array2::zeros((ids.len(), vt.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < vt.nrows(), "gather: id {id} out of range");
            value.row_mut(i).assign(&vt.row(id));
        }
        let rg = self.req(table);
        self.push(value, rg, Op::Gather(table, ids.to_vec()))
    }

    /// Same-padded 1-D convolution along rows. `w` is `[k * Cin, Cout]`
    /// with row index `tap * Cin + channel`.
    pub fn conv1d_same(&mut self, x: Var, w: Var, k: usize) -> Var {
        let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        assert!(k >= 1);
        assert_eq!(vw.nrows(), k * vx.ncols(), "conv1d: kernel rows");
        let cols = im2col(vx, k);
        let value = cols.dot(vw);
        let rg = self.req(x) || self.req(w);
        self.push(value, rg, Op::Conv1dSame { x, w, k })
    }

    /// `out[t] = max(x[t], x[t+1])` per column; the final row is passed
    /// through unchanged.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let (t_len, d) = vx.dim();
        let mut value = Array2::zeros((t_len, d));
        let mut argmax = vec![0usize; t_len * d];
        for t in 0..t_len {
            for c in 0..d {
                let here = vx[(t, c)];
                let next = if t + 1 < t_len { vx[(t + 1, c)] } else { f64::NEG_INFINITY };
                // ties go to the earlier row
                if here >= next {
                    value[(t, c)] = here;
                    argmax[t * d + c] = t;
                } else {
                    value[(t, c)] = next;
                    argmax[t * d + c] = t + 1;
                }
            }
        }
        let rg = self.req(x);
        self.push(value, rg, Op::MaxPool2(x, argmax))
    }

    /// Column-wise standardization by batch statistics (biased variance).
    pub fn batch_norm_train(&mut self, x: Var, eps: f64) -> Var {
        let vx = &self.nodes[x.0].value;
        let (t_len, d) = vx.dim();
        let n = t_len as f64;
        let mut value = Array2::zeros((t_len, d));
        let mut inv_std = vec![0.0f64; d];
        for c in 0..d {
            let mean = vx.column(c).sum() / n;
            let var = vx.column(c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[c] = istd;
            for t in 0..t_len {
                value[(t, c)] = (vx[(t, c)] - mean) * istd;
            }
        }
        let rg = self.req(x);
        self.push(value, rg, Op::BatchNormTrain { x, inv_std })
    }

    /// Batch statistics of a var's current value: per-column (mean, biased
    /// variance). Used for running-average updates.
    pub fn column_stats(&self, x: Var) -> (Vec<f64>, Vec<f64>) {
        let vx = &self.nodes[x.0].value;
        let n = vx.nrows() as f64;
        let mut means = Vec::with_capacity(vx.ncols());
        let mut vars = Vec::with_capacity(vx.ncols());
        for c in 0..vx.ncols() {
            let mean = vx.column(c).sum() / n;
            let var = vx.column(c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means.push(mean);
            vars.push(var);
        }
        (means, vars)
    }

    pub fn reverse_rows(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let value = vx.slice(s![..;-1, ..]).to_owned();
        let rg = self.req(x);
        self.push(value, rg, Op::ReverseRows(x))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let vx = &self.nodes[x.0].value;
        assert_eq!(vx.len(), rows * cols, "reshape: element count");
        let value = Array2::from_shape_vec((rows, cols), vx.iter().copied().collect()).unwrap();
        let rg = self.req(x);
        self.push(value, rg, Op::Reshape(x))
    }

    fn add_grad(&mut self, v: Var, delta: &Array2<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => *g += delta,
            None => node.grad = Some(delta.clone()),
        }
    }

    /// Reverse pass from a scalar `[1,1]` loss. Gradients accumulate
    /// additively; leaves keep theirs for extraction.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.nodes[loss.0].value.dim(), (1, 1), "loss must be [1,1]");
        self.nodes[loss.0].grad = Some(Array2::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = self.nodes[i].grad.take() else {
                continue;
            };
            self.step_backward(i, &gy);
            self.nodes[i].grad = Some(gy);
        }
    }

    fn step_backward(&mut self, i: usize, gy: &Array2<f64>) {
        // Ops are matched by value; parents are strictly earlier nodes.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = gy.dot(&self.nodes[b.0].value.t());
                let gb = self.nodes[a.0].value.t().dot(gy);
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.add_grad(a, gy);
                self.add_grad(b, gy);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.add_grad(a, gy);
                let neg = gy.mapv(|v| -v);
                self.add_grad(b, &neg);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = gy * &self.nodes[b.0].value;
                let gb = gy * &self.nodes[a.0].value;
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            Op::AddRowBroadcast(x, row) => {
                let (x, row) = (*x, *row);
                self.add_grad(x, gy);
                let mut grow = Array2::zeros((1, gy.ncols()));
                for r in gy.rows() {
                    for (c, v) in r.iter().enumerate() {
                        grow[(0, c)] += v;
                    }
                }
                self.add_grad(row, &grow);
            }
            Op::MulRowBroadcast(x, row) => {
                let (x, row) = (*x, *row);
                let vrow = self.nodes[row.0].value.clone();
                let vx = self.nodes[x.0].value.clone();
                let gx = gy * &vrow;
                let mut grow = Array2::zeros((1, gy.ncols()));
                for (gr, xr) in gy.rows().into_iter().zip(vx.rows()) {
                    for c in 0..gy.ncols() {
                        grow[(0, c)] += gr[c] * xr[c];
                    }
                }
                self.add_grad(x, &gx);
                self.add_grad(row, &grow);
            }
            Op::MulConst(x, mask) => {
                let x = *x;
                let gx = gy * mask;
                self.add_grad(x, &gx);
            }
            Op::ColAffineConst(x, scale) => {
                let x = *x;
                let mut gx = gy.clone();
                for mut row in gx.rows_mut() {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v *= scale[c];
                    }
                }
                self.add_grad(x, &gx);
            }
            Op::ScalarAffine(x, a) => {
                let (x, a) = (*x, *a);
                let gx = gy.mapv(|v| v * a);
                self.add_grad(x, &gx);
            }
            Op::Relu(x) => {
                let x = *x;
                let gx = gy * &self.nodes[x.0].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                self.add_grad(x, &gx);
            }
            Op::Sigmoid(x) => {
                let x = *x;
                let y = &self.nodes[i].value;
                let gx = gy * &y.mapv(|v| v * (1.0 - v));
                self.add_grad(x, &gx);
            }
            Op::Tanh(x) => {
                let x = *x;
                let y = &self.nodes[i].value;
                let gx = gy * &y.mapv(|v| 1.0 - v * v);
                self.add_grad(x, &gx);
            }
            Op::Abs(x) => {
                let x = *x;
                let gx = gy * &self.nodes[x.0].value.mapv(f64::signum);
                self.add_grad(x, &gx);
            }
            Op::Sum(x) => {
                let x = *x;
                let g = gy[(0, 0)];
                let gx = Array2::from_elem(self.nodes[x.0].value.dim(), g);
                self.add_grad(x, &gx);
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let mut at = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.ncols();
                    let gp = gy.slice(s![.., at..at + w]).to_owned();
                    self.add_grad(p, &gp);
                    at += w;
                }
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut at = 0;
                for p in parts {
                    let h = self.nodes[p.0].value.nrows();
                    let gp = gy.slice(s![at..at + h, ..]).to_owned();
                    self.add_grad(p, &gp);
                    at += h;
                }
            }
            Op::SliceRows(x, start, end) => {
                let (x, start, end) = (*x, *start, *end);
                let mut gx = Array2::zeros(self.nodes[x.0].value.dim());
                gx.slice_mut(s![start..end, ..]).assign(gy);
                self.add_grad(x, &gx);
            }
            Op::SliceCols(x, start, end) => {
                let (x, start, end) = (*x, *start, *end);
                let mut gx = Array2::zeros(self.nodes[x.0].value.dim());
                gx.slice_mut(s![.., start..end]).assign(gy);
                self.add_grad(x, &gx);
            }
            Op::Gather(table, ids) => {
                let (table, ids) = (*table, ids.clone());
                let mut gt = Array2::zeros(self.nodes[table.0].value.dim());
                for (i_row, &id) in ids.iter().enumerate() {
                    for c in 0..gy.ncols() {
                        gt[(id, c)] += gy[(i_row, c)];
                    }
                }
                self.add_grad(table, &gt);
            }
            Op::Conv1dSame { x, w, k } => {
                let (x, w, k) = (*x, *w, *k);
                let vx = self.nodes[x.0].value.clone();
                let vw = self.nodes[w.0].value.clone();
                let cols = im2col(&vx, k);
                let gw = cols.t().dot(gy);
                let gcols = gy.dot(&vw.t());
                let gx = col2im(&gcols, vx.dim(), k);
                self.add_grad(x, &gx);
                self.add_grad(w, &gw);
            }
            Op::MaxPool2(x, argmax) => {
                let (x, argmax) = (*x, argmax.clone());
                let d = gy.ncols();
                let mut gx = Array2::zeros(self.nodes[x.0].value.dim());
                for t in 0..gy.nrows() {
                    for c in 0..d {
                        gx[(argmax[t * d + c], c)] += gy[(t, c)];
                    }
                }
                self.add_grad(x, &gx);
            }
            Op::BatchNormTrain { x, inv_std } => {
                let (x, inv_std) = (*x, inv_std.clone());
                let x_hat = self.nodes[i].value.clone();
                let (t_len, d) = x_hat.dim();
                let n = t_len as f64;
                let mut gx = Array2::zeros((t_len, d));
                for c in 0..d {
                    let mut mean_g = 0.0;
                    let mut mean_gx = 0.0;
                    for t in 0..t_len {
                        mean_g += gy[(t, c)];
                        mean_gx += gy[(t, c)] * x_hat[(t, c)];
                    }
                    mean_g /= n;
                    mean_gx /= n;
                    for t in 0..t_len {
                        gx[(t, c)] =
                            inv_std[c] * (gy[(t, c)] - mean_g - x_hat[(t, c)] * mean_gx);
                    }
                }
                self.add_grad(x, &gx);
            }
            Op::ReverseRows(x) => {
                let x = *x;
                let gx = gy.slice(s![..;-1, ..]).to_owned();
                self.add_grad(x, &gx);
            }
            Op::Reshape(x) => {
                let x = *x;
                let dim = self.nodes[x.0].value.dim();
                let gx = Array2::from_shape_vec(dim, gy.iter().copied().collect()).unwrap();
                self.add_grad(x, &gx);
            }
        }
    }
}

/// Unfold rows into sliding windows of length `k` (zero padded), row index
/// layout `tap * Cin + channel`.
fn im2col(x: &Array2<f64>, k: usize) -> Array2<f64> {
    let (t_len, cin) = x.dim();
    let pad_l = (k - 1) / 2;
    let mut cols = Array2::zeros((t_len, k * cin));
    for t in 0..t_len {
        for tap in 0..k {
            let src = t as isize - pad_l as isize + tap as isize;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let src = src as usize;
            for c in 0..cin {
                cols[(t, tap * cin + c)] = x[(src, c)];
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter window gradients back onto the signal.
fn col2im(gcols: &Array2<f64>, dim: (usize, usize), k: usize) -> Array2<f64> {
    let (t_len, cin) = dim;
    let pad_l = (k - 1) / 2;
    let mut gx = Array2::zeros(dim);
    for t in 0..t_len {
        for tap in 0..k {
            let src = t as isize - pad_l as isize + tap as isize;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let src = src as usize;
            for c in 0..cin {
                gx[(src, c)] += gcols[(t, tap * cin + c)];
            }
        }
    }
    gx
}

fn same_shape<'a>(
    op: &'static str,
    a: &'a Array2<f64>,
    b: &'a Array2<f64>,
) -> (&'a Array2<f64>, &'a Array2<f64>) {
    assert_eq!(a.dim(), b.dim(), "{op}: shape mismatch");
    (a, b)
}
