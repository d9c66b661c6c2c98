//! Tensor-level reverse-mode automatic differentiation.
//!
//! Operations are recorded on a per-sample [`Graph`]; each node stores its
//! value and a backward function that scatters the output gradient into its
//! parents. Backward functions read parent values straight out of the node
//! store, so recording captures no tensor copies; inference uses the same
//! forward kernels with recording disabled.

use crate::error::{Error, Result};
use crate::numerics::kernels;
use crate::scalar::Real;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::cell::{Cell, RefCell};

pub type VarId = usize;

/// Backward signature: (all nodes, own value, own gradient, gradient buf).
type BackFn<F> = Box<dyn Fn(&[Node<F>], &Tensor<F>, &Tensor<F>, &mut GradBuf<F>)>;

pub struct Node<F> {
    value: Tensor<F>,
    back: Option<BackFn<F>>,
}

impl<F> Node<F> {
    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }
}

/// Gradient accumulator indexed by `VarId`.
pub struct GradBuf<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> GradBuf<F> {
    pub fn accum(&mut self, id: VarId, delta: Tensor<F>) {
        match &mut self.grads[id] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    pub fn get(&self, id: VarId) -> Option<&Tensor<F>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: VarId) -> Option<Tensor<F>> {
        self.grads[id].take()
    }
}

pub struct Graph<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
    recording: Cell<bool>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn back_fn<F: Real>(
    f: impl Fn(&[Node<F>], &Tensor<F>, &Tensor<F>, &mut GradBuf<F>) + 'static,
) -> BackFn<F> {
    Box::new(f)
}

macro_rules! record {
    ($self:ident, $($body:tt)*) => {
        if $self.recording.get() {
            Some(back_fn($($body)*))
        } else {
            None
        }
    };
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    /// Forward-only graph: identical arithmetic, no backward functions.
    pub fn inference() -> Self {
        let g = Self::new();
        g.recording.set(false);
        g
    }

    pub fn is_recording(&self) -> bool {
        self.recording.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<F>, back: Option<BackFn<F>>) -> VarId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, back });
        nodes.len() - 1
    }

    /// Runs `f` with a borrow of the node values.
    fn with_nodes<R>(&self, f: impl FnOnce(&[Node<F>]) -> R) -> R {
        f(&self.nodes.borrow())
    }

    pub fn value(&self, id: VarId) -> Tensor<F> {
        self.nodes.borrow()[id].value.clone()
    }

    pub fn shape(&self, id: VarId) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    pub fn scalar(&self, id: VarId) -> F {
        let nodes = self.nodes.borrow();
        let v = &nodes[id].value;
        assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        v.data()[0]
    }

    /// Reverse pass from a scalar root. Returns gradients for every node
    /// that participates; leaves are read out by id.
    pub fn backward(&self, root: VarId) -> GradBuf<F> {
        assert!(
            self.recording.get(),
            "backward() requires a recording graph"
        );
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root].value.len(), 1, "backward root must be scalar");
        let mut buf = GradBuf {
            grads: (0..nodes.len()).map(|_| None).collect(),
        };
        buf.grads[root] = Some(Tensor::new(
            nodes[root].value.shape().to_vec(),
            vec![F::one()],
        ));
        for id in (0..=root).rev() {
            let Some(grad) = buf.take(id) else { continue };
            if let Some(back) = &nodes[id].back {
                back(&nodes, &nodes[id].value, &grad, &mut buf);
            }
            // leaves keep their gradient readable after the pass
            buf.grads[id] = Some(grad);
        }
        buf
    }

    // ---- leaves ------------------------------------------------------

    pub fn leaf(&self, t: Tensor<F>) -> VarId {
        self.push(t, None)
    }

    pub fn constant(&self, t: Tensor<F>) -> VarId {
        self.push(t, None)
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&self, a: VarId, b: VarId) -> VarId {
        let out = self.with_nodes(|n| n[a].value.add(&n[b].value));
        let back = record!(self, move |_n, _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            buf.accum(a, g.clone());
            buf.accum(b, g.clone());
        });
        self.push(out, back)
    }

    pub fn sub(&self, a: VarId, b: VarId) -> VarId {
        let out = self.with_nodes(|n| {
            let va = &n[a].value;
            let vb = &n[b].value;
            assert!(va.same_shape(vb), "sub: shape mismatch");
            Tensor::new(
                va.shape().to_vec(),
                va.data()
                    .iter()
                    .zip(vb.data())
                    .map(|(&x, &y)| x - y)
                    .collect(),
            )
        });
        let back = record!(self, move |_n, _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            buf.accum(a, g.clone());
            buf.accum(b, g.scale(F::one().neg()));
        });
        self.push(out, back)
    }

    pub fn scale(&self, a: VarId, s: F) -> VarId {
        let out = self.with_nodes(|n| n[a].value.scale(s));
        let back = record!(self, move |_n, _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            buf.accum(a, g.scale(s));
        });
        self.push(out, back)
    }

    pub fn mul(&self, a: VarId, b: VarId) -> VarId {
        let out = self.with_nodes(|n| {
            let va = &n[a].value;
            let vb = &n[b].value;
            assert!(va.same_shape(vb), "mul: shape mismatch");
            Tensor::new(
                va.shape().to_vec(),
                va.data()
                    .iter()
                    .zip(vb.data())
                    .map(|(&x, &y)| x * y)
                    .collect(),
            )
        });
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let va = &n[a].value;
            let vb = &n[b].value;
            let da = Tensor::new(
                g.shape().to_vec(),
                g.data().iter().zip(vb.data()).map(|(&gv, &y)| gv * y).collect(),
            );
            let db = Tensor::new(
                g.shape().to_vec(),
                g.data().iter().zip(va.data()).map(|(&gv, &x)| gv * x).collect(),
            );
            buf.accum(a, da);
            buf.accum(b, db);
        });
        self.push(out, back)
    }

    pub fn gelu(&self, a: VarId) -> VarId {
        let out = self.with_nodes(|n| {
            Tensor::new(n[a].value.shape().to_vec(), kernels::gelu(n[a].value.data()))
        });
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let va = &n[a].value;
            let da = Tensor::new(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(va.data())
                    .map(|(&gv, &x)| gv * kernels::gelu_grad_scalar(x))
                    .collect(),
            );
            buf.accum(a, da);
        });
        self.push(out, back)
    }

    /// Inverted dropout; draws the keep mask at forward time. Callers apply
    /// this only in train mode.
    pub fn dropout(&self, a: VarId, rate: f64, rng: &RefCell<ChaCha8Rng>) -> VarId {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate}");
        if rate == 0.0 {
            return a;
        }
        let keep_scale = F::from_f64(1.0 / (1.0 - rate));
        let (out, mask_t) = self.with_nodes(|n| {
            let va = &n[a].value;
            let mask: Vec<F> = {
                let mut r = rng.borrow_mut();
                (0..va.len())
                    .map(|_| {
                        if r.gen::<f64>() < rate {
                            F::zero()
                        } else {
                            keep_scale
                        }
                    })
                    .collect()
            };
            let mask_t = Tensor::new(va.shape().to_vec(), mask);
            let out = Tensor::new(
                va.shape().to_vec(),
                va.data()
                    .iter()
                    .zip(mask_t.data())
                    .map(|(&x, &m)| x * m)
                    .collect(),
            );
            (out, mask_t)
        });
        let back = record!(self, move |_n, _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let da = Tensor::new(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(mask_t.data())
                    .map(|(&gv, &m)| gv * m)
                    .collect(),
            );
            buf.accum(a, da);
        });
        self.push(out, back)
    }

    // ---- matrix ------------------------------------------------------

    /// `A[m,k] @ B[k,n]`.
    pub fn matmul(&self, a: VarId, b: VarId) -> VarId {
        let out = self.with_nodes(|n| mm_nn(&n[a].value, &n[b].value));
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            buf.accum(a, mm_nt(g, &n[b].value));
            buf.accum(b, mm_tn(&n[a].value, g));
        });
        self.push(out, back)
    }

    /// `A[m,k] @ B[n,k]^T`, the projection form for `[out,in]` weights.
    pub fn matmul_nt(&self, a: VarId, b: VarId) -> VarId {
        let out = self.with_nodes(|n| mm_nt(&n[a].value, &n[b].value));
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            buf.accum(a, mm_nn(g, &n[b].value));
            buf.accum(b, mm_tn(g, &n[a].value));
        });
        self.push(out, back)
    }

    pub fn add_bias_rows(&self, x: VarId, bias: VarId) -> VarId {
        let out = self.with_nodes(|n| {
            let vx = &n[x].value;
            let vb = &n[bias].value;
            assert_eq!(vx.cols(), vb.len(), "add_bias_rows: width mismatch");
            let cols = vx.cols();
            let mut data = vx.data().to_vec();
            for r in 0..vx.rows() {
                for c in 0..cols {
                    data[r * cols + c] = data[r * cols + c] + vb.data()[c];
                }
            }
            Tensor::new(vx.shape().to_vec(), data)
        });
        let back = record!(self, move |_n, _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            buf.accum(x, g.clone());
            let cols = g.cols();
            let mut db = vec![F::zero(); cols];
            for r in 0..g.rows() {
                for c in 0..cols {
                    db[c] = db[c] + g.data()[r * cols + c];
                }
            }
            buf.accum(bias, Tensor::vector(db));
        });
        self.push(out, back)
    }

    // ---- shape -------------------------------------------------------

    pub fn reshape(&self, a: VarId, shape: Vec<usize>) -> VarId {
        let out = self.with_nodes(|n| {
            let va = &n[a].value;
            assert_eq!(
                shape.iter().product::<usize>(),
                va.len(),
                "reshape: element count mismatch"
            );
            Tensor::new(shape.clone(), va.data().to_vec())
        });
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let old_shape = n[a].value.shape().to_vec();
            buf.accum(a, Tensor::new(old_shape, g.data().to_vec()));
        });
        self.push(out, back)
    }

    pub fn slice_cols(&self, a: VarId, lo: usize, hi: usize) -> VarId {
        let out = self.with_nodes(|n| {
            let va = &n[a].value;
            let (rows, cols) = (va.rows(), va.cols());
            assert!(lo < hi && hi <= cols, "slice_cols out of range");
            let w = hi - lo;
            let mut data = Vec::with_capacity(rows * w);
            for r in 0..rows {
                data.extend_from_slice(&va.row(r)[lo..hi]);
            }
            Tensor::matrix(rows, w, data)
        });
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let (rows, cols) = (n[a].value.rows(), n[a].value.cols());
            let w = hi - lo;
            let mut da = Tensor::zeros(vec![rows, cols]);
            for r in 0..rows {
                for c in 0..w {
                    da.data_mut()[r * cols + lo + c] = g.data()[r * w + c];
                }
            }
            buf.accum(a, da);
        });
        self.push(out, back)
    }

    pub fn concat_cols(&self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let parts_own = parts.to_vec();
        let out = self.with_nodes(|n| {
            let rows = n[parts_own[0]].value.rows();
            let total: usize = parts_own.iter().map(|&p| n[p].value.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &p in &parts_own {
                    data.extend_from_slice(n[p].value.row(r));
                }
            }
            Tensor::matrix(rows, total, data)
        });
        let parts_back = parts.to_vec();
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let rows = g.rows();
            let mut lo = 0usize;
            for &p in &parts_back {
                let w = n[p].value.cols();
                let mut dp = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    dp.extend_from_slice(&g.row(r)[lo..lo + w]);
                }
                buf.accum(p, Tensor::matrix(rows, w, dp));
                lo += w;
            }
        });
        self.push(out, back)
    }

    pub fn concat_rows(&self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let parts_own = parts.to_vec();
        let out = self.with_nodes(|n| {
            let cols = n[parts_own[0]].value.cols();
            let total: usize = parts_own.iter().map(|&p| n[p].value.rows()).sum();
            let mut data = Vec::with_capacity(total * cols);
            for &p in &parts_own {
                assert_eq!(n[p].value.cols(), cols, "concat_rows: width mismatch");
                data.extend_from_slice(n[p].value.data());
            }
            Tensor::matrix(total, cols, data)
        });
        let parts_back = parts.to_vec();
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let cols = g.cols();
            let mut lo = 0usize;
            for &p in &parts_back {
                let rc = n[p].value.rows();
                let slice = &g.data()[lo * cols..(lo + rc) * cols];
                buf.accum(p, Tensor::matrix(rc, cols, slice.to_vec()));
                lo += rc;
            }
        });
        self.push(out, back)
    }

    /// Extracts row `r` as a rank-1 vector.
    pub fn row(&self, a: VarId, r: usize) -> VarId {
        let out = self.with_nodes(|n| {
            let va = &n[a].value;
            assert!(r < va.rows(), "row index out of range");
            Tensor::vector(va.row(r).to_vec())
        });
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let (rows, cols) = (n[a].value.rows(), n[a].value.cols());
            let mut da = Tensor::zeros(vec![rows, cols]);
            da.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.data());
            buf.accum(a, da);
        });
        self.push(out, back)
    }

    // ---- normalization / position ------------------------------------

    /// Row-wise layer norm sharing gain/bias across rows.
    pub fn layer_norm_rows(&self, x: VarId, gain: VarId, bias: VarId, eps: F) -> VarId {
        let out = self.with_nodes(|n| {
            let vx = &n[x].value;
            let (rows, cols) = (vx.rows(), vx.cols());
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                data.extend(
                    kernels::layer_norm(vx.row(r), n[gain].value.data(), n[bias].value.data(), eps)
                        .expect("layer_norm_rows: width mismatch"),
                );
            }
            Tensor::new(vx.shape().to_vec(), data)
        });
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let vx = &n[x].value;
            let vg = &n[gain].value;
            let (rows, cols) = (vx.rows(), vx.cols());
            let nn = F::from_f64(cols as f64);
            let mut dx = Tensor::zeros(vec![rows, cols]);
            let mut dgain = vec![F::zero(); cols];
            let mut dbias = vec![F::zero(); cols];
            for r in 0..rows {
                let xr = vx.row(r);
                let gr = g.row(r);
                let mean = xr.iter().copied().sum::<F>() / nn;
                let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nn;
                let inv = (var + eps).sqrt().recip();
                let xhat: Vec<F> = xr.iter().map(|&v| (v - mean) * inv).collect();
                let dy_gain: Vec<F> = gr
                    .iter()
                    .zip(vg.data())
                    .map(|(&gv, &ga)| gv * ga)
                    .collect();
                let m1 = dy_gain.iter().copied().sum::<F>() / nn;
                let m2 = dy_gain
                    .iter()
                    .zip(&xhat)
                    .map(|(&d, &xh)| d * xh)
                    .sum::<F>()
                    / nn;
                for c in 0..cols {
                    dgain[c] = dgain[c] + gr[c] * xhat[c];
                    dbias[c] = dbias[c] + gr[c];
                    dx.data_mut()[r * cols + c] = (dy_gain[c] - m1 - xhat[c] * m2) * inv;
                }
            }
            buf.accum(x, dx);
            buf.accum(gain, Tensor::vector(dgain));
            buf.accum(bias, Tensor::vector(dbias));
        });
        self.push(out, back)
    }

    /// Rotate-half rotary position encoding applied per head. Row `i` of `x`
    /// sits at absolute position `start_pos + i`; positions continue
    /// monotonically through prefix, latent steps and answer tokens.
    pub fn rope_rows(&self, x: VarId, start_pos: usize, n_heads: usize, base: f64) -> VarId {
        let out = self.with_nodes(|n| {
            let vx = &n[x].value;
            let (rows, cols) = (vx.rows(), vx.cols());
            assert_eq!(cols % n_heads, 0, "rope: width not divisible by heads");
            let hd = cols / n_heads;
            assert_eq!(hd % 2, 0, "rope: head dim must be even");
            let half = hd / 2;
            let mut out = vx.clone();
            for r in 0..rows {
                let pos = start_pos + r;
                for h in 0..n_heads {
                    let off = r * cols + h * hd;
                    for j in 0..half {
                        let (c, s) = rope_angle::<F>(pos, j, hd, base);
                        let xi = vx.data()[off + j];
                        let xj = vx.data()[off + half + j];
                        out.data_mut()[off + j] = xi * c - xj * s;
                        out.data_mut()[off + half + j] = xi * s + xj * c;
                    }
                }
            }
            out
        });
        let back = record!(self, move |_n, _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let (rows, cols) = (g.rows(), g.cols());
            let hd = cols / n_heads;
            let half = hd / 2;
            let mut dx = g.clone();
            for r in 0..rows {
                let pos = start_pos + r;
                for h in 0..n_heads {
                    let off = r * cols + h * hd;
                    for j in 0..half {
                        let (c, s) = rope_angle::<F>(pos, j, hd, base);
                        let gi = g.data()[off + j];
                        let gj = g.data()[off + half + j];
                        dx.data_mut()[off + j] = gi * c + gj * s;
                        dx.data_mut()[off + half + j] = gj * c - gi * s;
                    }
                }
            }
            buf.accum(x, dx);
        });
        self.push(out, back)
    }

    /// Softmax over each row's visible prefix. Row `i` (a new position on
    /// top of `visible_base` cached columns) sees columns
    /// `0 .. visible_base + i + 1`; the rest get probability zero.
    pub fn causal_softmax(&self, scores: VarId, visible_base: usize) -> VarId {
        let out = self.with_nodes(|n| {
            let vs = &n[scores].value;
            let (rows, cols) = (vs.rows(), vs.cols());
            let mut probs = Tensor::zeros(vec![rows, cols]);
            for r in 0..rows {
                let visible = (visible_base + r + 1).min(cols);
                let row = &vs.row(r)[..visible];
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                let exps: Vec<F> = row.iter().map(|&v| (v - max).exp()).collect();
                let denom: F = exps.iter().copied().sum();
                for c in 0..visible {
                    probs.data_mut()[r * cols + c] = exps[c] / denom;
                }
            }
            probs
        });
        // own value = probabilities, no extra captures needed
        let back = record!(self, move |_n, own: &Tensor<F>, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let (rows, cols) = (own.rows(), own.cols());
            let mut ds = Tensor::zeros(vec![rows, cols]);
            for r in 0..rows {
                let visible = (visible_base + r + 1).min(cols);
                let p = &own.row(r)[..visible];
                let gr = &g.row(r)[..visible];
                let inner: F = gr.iter().zip(p).map(|(&gv, &pv)| gv * pv).sum();
                for c in 0..visible {
                    ds.data_mut()[r * cols + c] = p[c] * (gr[c] - inner);
                }
            }
            buf.accum(scores, ds);
        });
        self.push(out, back)
    }

    // ---- embeddings / losses ------------------------------------------

    pub fn embed_rows(&self, table: VarId, ids: &[usize]) -> VarId {
        let ids_own = ids.to_vec();
        let out = self.with_nodes(|n| {
            let vt = &n[table].value;
            let (vocab, dim) = (vt.rows(), vt.cols());
            let mut data = Vec::with_capacity(ids_own.len() * dim);
            for &tok in &ids_own {
                assert!(tok < vocab, "embed: token {tok} outside vocab {vocab}");
                data.extend_from_slice(vt.row(tok));
            }
            Tensor::matrix(ids_own.len(), dim, data)
        });
        let ids_back = ids.to_vec();
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let (vocab, dim) = (n[table].value.rows(), n[table].value.cols());
            let mut dt = Tensor::zeros(vec![vocab, dim]);
            for (r, &tok) in ids_back.iter().enumerate() {
                for c in 0..dim {
                    dt.data_mut()[tok * dim + c] =
                        dt.data()[tok * dim + c] + g.data()[r * dim + c];
                }
            }
            buf.accum(table, dt);
        });
        self.push(out, back)
    }

    /// Mean masked next-token cross-entropy over logit rows.
    pub fn cross_entropy_rows(
        &self,
        logits: VarId,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<VarId> {
        let loss = self.with_nodes(|n| {
            let vl = &n[logits].value;
            let (rows, vocab) = (vl.rows(), vl.cols());
            if targets.len() != rows || mask.len() != rows {
                return Err(Error::Shape(format!(
                    "cross_entropy_rows: {} logit rows, {} targets, {} mask entries",
                    rows,
                    targets.len(),
                    mask.len()
                )));
            }
            kernels::cross_entropy(vl.data(), vocab, targets, mask)
        })?;
        let count = mask.iter().filter(|&&m| m).count();
        let targets = targets.to_vec();
        let mask = mask.to_vec();
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let vl = &n[logits].value;
            let (rows, vocab) = (vl.rows(), vl.cols());
            let gs = g.data()[0] / F::from_f64(count as f64);
            let mut dl = Tensor::zeros(vec![rows, vocab]);
            for r in 0..rows {
                if !mask[r] {
                    continue;
                }
                let lsm = kernels::log_softmax_row(vl.row(r));
                for c in 0..vocab {
                    let p = lsm[c].exp();
                    let y = if c == targets[r] { F::one() } else { F::zero() };
                    dl.data_mut()[r * vocab + c] = (p - y) * gs;
                }
            }
            buf.accum(logits, dl);
        });
        Ok(self.push(Tensor::vector(vec![loss]), back))
    }

    /// Mean absolute difference against a constant target.
    pub fn l1_to_const(&self, pred: VarId, target: &Tensor<F>) -> Result<VarId> {
        let loss = self.with_nodes(|n| kernels::l1_loss(n[pred].value.data(), target.data()))?;
        let target = target.clone();
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let vp = &n[pred].value;
            let nn = F::from_f64(vp.len() as f64);
            let gs = g.data()[0] / nn;
            let dp = Tensor::new(
                vp.shape().to_vec(),
                vp.data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        if p > t {
                            gs
                        } else if p < t {
                            gs.neg()
                        } else {
                            F::zero()
                        }
                    })
                    .collect(),
            );
            buf.accum(pred, dp);
        });
        Ok(self.push(Tensor::vector(vec![loss]), back))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_elems(&self, a: VarId) -> VarId {
        let out = self.with_nodes(|n| Tensor::vector(vec![n[a].value.data().iter().copied().sum()]));
        let back = record!(self, move |n: &[Node<F>], _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            let va = &n[a].value;
            let gs = g.data()[0];
            buf.accum(a, Tensor::new(va.shape().to_vec(), vec![gs; va.len()]));
        });
        self.push(out, back)
    }

    /// `sum_i coef_i * scalar_i`, used to combine loss terms.
    pub fn weighted_sum(&self, terms: &[(F, VarId)]) -> VarId {
        let total = self.with_nodes(|n| {
            let mut total = F::zero();
            for &(c, id) in terms {
                assert_eq!(n[id].value.len(), 1, "weighted_sum over non-scalars");
                total = total + c * n[id].value.data()[0];
            }
            total
        });
        let terms = terms.to_vec();
        let back = record!(self, move |_n, _v, g: &Tensor<F>, buf: &mut GradBuf<F>| {
            for &(c, id) in &terms {
                buf.accum(id, Tensor::vector(vec![g.data()[0] * c]));
            }
        });
        self.push(Tensor::vector(vec![total]), back)
    }
}

#[inline]
fn rope_angle<F: Real>(pos: usize, j: usize, hd: usize, base: f64) -> (F, F) {
    let theta = pos as f64 / base.powf(2.0 * j as f64 / hd as f64);
    (F::from_f64(theta.cos()), F::from_f64(theta.sin()))
}

// ---- plain matmul kernels (forward + backward internals) ---------------

pub fn mm_nn<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    assert_eq!(k, k2, "mm_nn: inner dims {k} vs {k2}");
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let ar = a.row(i);
        let or = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in ar.iter().enumerate() {
            let br = b.row(kk);
            for (o, &bv) in or.iter_mut().zip(br) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

pub fn mm_nt<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    assert_eq!(k, k2, "mm_nt: inner dims {k} vs {k2}");
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            out.push(dot4(ar, b.row(j)));
        }
    }
    Tensor::matrix(m, n, out)
}

/// Dot product with four fixed-order accumulators so the reduction
/// vectorizes; the summation order is static, keeping results bitwise
/// reproducible run to run.
#[inline]
fn dot4<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut tail = F::zero();
    for i in chunks * 4..a.len() {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

pub fn mm_tn<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k) = (a.rows(), a.cols());
    let (m2, n) = (b.rows(), b.cols());
    assert_eq!(m, m2, "mm_tn: outer dims {m} vs {m2}");
    let mut out = vec![F::zero(); k * n];
    for i in 0..m {
        let ar = a.row(i);
        let br = b.row(i);
        for (kk, &av) in ar.iter().enumerate() {
            let or = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in or.iter_mut().zip(br) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::matrix(k, n, out)
}
