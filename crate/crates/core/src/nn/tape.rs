//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records one forward pass. Parameters live in a shared
//! [`ParamStore`] and are referenced by id, so several tapes can read the
//! same store while each produces its own [`Grads`].

use ndarray::{s, Array2, Axis};

use super::params::{Grads, ParamId, ParamStore};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Silu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    CausalSoftmax { x: Var, scale: f64 },
    Gather { table: Var, rows: Vec<usize> },
    ScatterAddRows { base: Var, src: Var, rows: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Mat },
    SumSquares { x: Var, scale: f64 },
    SumAbs { x: Var, scale: f64 },
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const LN_EPS: f64 = 1e-5;

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-param node without value"),
        }
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, value: Option<Mat>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(None, Op::Param(id))
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(Some(m), Op::Const)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(Some(out), Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(Some(out), Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(Some(out), Op::Add(a, b))
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(Some(out), Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(Some(out), Op::Mul(a, b))
    }

    /// Multiplies every row of `a` elementwise by a `1 x m` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) * self.value(row);
        self.push(Some(out), Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(Some(out), Op::Scale(a, k))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(Some(out), Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(Some(out), Op::Silu(a))
    }

    /// Per-row normalization to zero mean, unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / cols;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / cols;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        self.push(Some(out), Op::LayerNorm { x: a, inv_std })
    }

    /// Row softmax of `scale * a` with entries above the diagonal masked out.
    pub fn causal_softmax(&mut self, a: Var, scale: f64) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(x.raw_dim());
        for (i, (src, mut dst)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let visible = (i + 1).min(src.len());
            let max = src.iter().take(visible).fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
            let mut z = 0.0;
            for j in 0..visible {
                let e = (src[j] * scale - max).exp();
                dst[j] = e;
                z += e;
            }
            for j in 0..visible {
                dst[j] /= z;
            }
        }
        self.push(Some(out), Op::CausalSoftmax { x: a, scale })
    }

    /// Selects rows of `table`, one output row per index.
    pub fn gather(&mut self, table: Var, rows: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros((rows.len(), t.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).assign(&t.row(r));
        }
        self.push(Some(out), Op::Gather { table, rows })
    }

    /// `out = base; out[rows[k]] += src[k]`.
    pub fn scatter_add_rows(&mut self, base: Var, src: Var, rows: Vec<usize>) -> Var {
        let mut out = self.value(base).clone();
        let s = self.value(src);
        for (k, &r) in rows.iter().enumerate() {
            let mut row = out.row_mut(r);
            row += &s.row(k);
        }
        self.push(Some(out), Op::ScatterAddRows { base, src, rows })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Some(out), Op::SliceCols { x: a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row count mismatch");
        self.push(Some(out), Op::ConcatCols(parts.to_vec()))
    }

    /// Weighted sum of negative log-likelihoods: `Σ_i w_i · −ln softmax(logits_i)[t_i]`.
    /// Rows with zero weight are skipped entirely.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len());
        assert_eq!(x.nrows(), weights.len());
        let mut probs = Mat::zeros(x.raw_dim());
        let mut total = 0.0;
        for (i, row) in x.rows().into_iter().enumerate() {
            if weights[i] == 0.0 {
                continue;
            }
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + z.ln();
            total += weights[i] * (log_z - row[targets[i]]);
            for (p, &v) in probs.row_mut(i).iter_mut().zip(row.iter()) {
                *p = (v - log_z).exp();
            }
        }
        self.push(Some(Mat::from_elem((1, 1), total)), Op::CrossEntropy { logits, targets, weights, probs })
    }

    /// `scale · Σ x²`
    pub fn sum_squares(&mut self, a: Var, scale: f64) -> Var {
        let total = self.value(a).iter().map(|v| v * v).sum::<f64>() * scale;
        self.push(Some(Mat::from_elem((1, 1), total)), Op::SumSquares { x: a, scale })
    }

    /// `scale · Σ |x|`
    pub fn sum_abs(&mut self, a: Var, scale: f64) -> Var {
        let total = self.value(a).iter().map(|v| v.abs()).sum::<f64>() * scale;
        self.push(Some(Mat::from_elem((1, 1), total)), Op::SumAbs { x: a, scale })
    }

    /// Back-propagates from a scalar node, returning parameter gradients.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads = Grads::zeros_like(self.params);
        self.backward_into(root, 1.0, &mut grads);
        grads
    }

    /// Back-propagates `seed · d(root)` and accumulates into `grads`.
    pub fn backward_into(&self, root: Var, seed: f64, grads: &mut Grads) {
        let mut adj: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Mat::from_elem(self.value(root).raw_dim(), seed));

        fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut adj[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *row, gr);
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MulRow(a, row) => {
                    let ga = &g * self.value(*row);
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *row, gr);
                }
                Op::Scale(a, k) => acc(&mut adj, *a, g * *k),
                Op::Gelu(a) => {
                    let mut ga = self.value(*a).mapv(gelu_grad);
                    ga *= &g;
                    acc(&mut adj, *a, ga);
                }
                Op::Silu(a) => {
                    let mut ga = self.value(*a).mapv(|x| {
                        let s = sigmoid(x);
                        s * (1.0 + x * (1.0 - s))
                    });
                    ga *= &g;
                    acc(&mut adj, *a, ga);
                }
                Op::LayerNorm { x, inv_std } => {
                    // y = (x - mean) * is ; dx = is * (g - mean(g) - y * mean(g * y))
                    let y = self.nodes[idx].value.as_ref().unwrap();
                    let cols = y.ncols() as f64;
                    let mut gx = Mat::zeros(y.raw_dim());
                    for i in 0..y.nrows() {
                        let gr = g.row(i);
                        let yr = y.row(i);
                        let mg = gr.sum() / cols;
                        let mgy = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
                        for j in 0..y.ncols() {
                            gx[[i, j]] = inv_std[i] * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::CausalSoftmax { x, scale } => {
                    let p = self.nodes[idx].value.as_ref().unwrap();
                    let mut gx = Mat::zeros(p.raw_dim());
                    for i in 0..p.nrows() {
                        let visible = (i + 1).min(p.ncols());
                        let dot: f64 = (0..visible).map(|j| p[[i, j]] * g[[i, j]]).sum();
                        for j in 0..visible {
                            gx[[i, j]] = scale * p[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Gather { table, rows } => {
                    let t = self.value(*table);
                    let mut gt = Mat::zeros(t.raw_dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut row = gt.row_mut(r);
                        row += &g.row(k);
                    }
                    acc(&mut adj, *table, gt);
                }
                Op::ScatterAddRows { base, src, rows } => {
                    let mut gs = Mat::zeros(self.value(*src).raw_dim());
                    for (k, &r) in rows.iter().enumerate() {
                        gs.row_mut(k).assign(&g.row(r));
                    }
                    acc(&mut adj, *src, gs);
                    acc(&mut adj, *base, g);
                }
                Op::SliceCols { x, start } => {
                    let mut gx = Mat::zeros(self.value(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut adj, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut adj, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::CrossEntropy { logits, targets, weights, probs } => {
                    let seed = g[[0, 0]];
                    let mut gl = Mat::zeros(probs.raw_dim());
                    for i in 0..probs.nrows() {
                        if weights[i] == 0.0 {
                            continue;
                        }
                        let w = weights[i] * seed;
                        for j in 0..probs.ncols() {
                            gl[[i, j]] = w * probs[[i, j]];
                        }
                        gl[[i, targets[i]]] -= w;
                    }
                    acc(&mut adj, *logits, gl);
                }
                Op::SumSquares { x, scale } => {
                    let k = 2.0 * scale * g[[0, 0]];
                    acc(&mut adj, *x, self.value(*x) * k);
                }
                Op::SumAbs { x, scale } => {
                    let k = scale * g[[0, 0]];
                    acc(&mut adj, *x, self.value(*x).mapv(|v| k * v.signum()));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(store: &mut ParamStore, id: ParamId, f: &dyn Fn(&ParamStore) -> f64) -> Mat {
        let eps = 1e-6;
        let shape = store.get(id).raw_dim();
        let mut out = Mat::zeros(shape);
        for idx in ndarray::indices(shape) {
            let orig = store.get(id)[idx];
            store.get_mut(id)[idx] = orig + eps;
            let hi = f(store);
            store.get_mut(id)[idx] = orig - eps;
            let lo = f(store);
            store.get_mut(id)[idx] = orig;
            out[idx] = (hi - lo) / (2.0 * eps);
        }
        out
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut store = ParamStore::default();
        let w = store.add("w", array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.7]]);
        let b = store.add("b", array![[0.05, -0.1, 0.2]]);
        let table = store.add("table", array![[0.2, -0.3], [0.6, 0.1], [-0.4, 0.9]]);

        let f = |s: &ParamStore| -> (f64, Grads) {
            let mut t = Tape::new(s);
            let tab = t.param(table);
            let x = t.gather(tab, vec![2, 0, 1, 2]);
            let wv = t.param(w);
            let bv = t.param(b);
            let h = t.matmul(x, wv);
            let h = t.add_row(h, bv);
            let h = t.layer_norm(h);
            let h = t.gelu(h);
            let att = t.matmul_nt(h, h);
            let p = t.causal_softmax(att, 0.7);
            let mixed = t.matmul(p, h);
            let left = t.slice_cols(mixed, 0, 2);
            let extra = t.silu(left);
            let cat = t.concat_cols(&[mixed, extra]);
            let small = t.slice_cols(cat, 1, 3);
            let loss = t.cross_entropy(small, vec![0, 2, 1, 1], vec![1.0, 0.0, 0.5, 2.0]);
            let reg = t.sum_squares(bv, 0.3);
            let total = t.add(loss, reg);
            (t.scalar(total), t.backward(total))
        };

        let (_, grads) = f(&store);
        for id in [w, b, table] {
            let num = numeric_grad(&mut store, id, &|s| f(s).0);
            let ana = grads.get(id);
            for (a, n) in ana.iter().zip(num.iter()) {
                assert!((a - n).abs() < 1e-7, "param {}: analytic {a} numeric {n}", store.name(id));
            }
        }
    }

    #[test]
    fn causal_softmax_ignores_future_columns() {
        let store = ParamStore::default();
        let mut t = Tape::new(&store);
        let x = t.constant(array![[1.0, 50.0], [0.0, 0.0]]);
        let p = t.causal_softmax(x, 1.0);
        let v = t.value(p);
        assert_eq!(v[[0, 0]], 1.0);
        assert_eq!(v[[0, 1]], 0.0);
        assert!((v[[1, 0]] - 0.5).abs() < 1e-15);
    }
}
