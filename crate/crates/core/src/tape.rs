//! Tape-based reverse-mode automatic differentiation.
//!
//! Every primitive is a method on [`Tape`]: it validates shapes, computes the
//! forward value (64-bit accumulation inside reductions), verifies the output
//! is finite, and — when any input requires a gradient — records a backward
//! rule. [`Tape::backward`] replays the rules in exact reverse order and
//! returns a [`GradStore`] keyed by tensor id. A tape can be consumed by
//! `backward` exactly once; a second call is a hard error.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mathx;
use crate::tensor::{check_finite, Tensor};

/// Accumulated gradients of one backward pass, keyed by tensor id.
#[derive(Debug, Default)]
pub struct GradStore {
    grads: BTreeMap<u64, Vec<f32>>,
}

impl GradStore {
    pub fn get(&self, t: &Tensor) -> Option<&[f32]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn get_by_id(&self, id: u64) -> Option<&[f32]> {
        self.grads.get(&id).map(|v| v.as_slice())
    }

    fn slot(&mut self, id: u64, len: usize) -> &mut [f32] {
        self.grads.entry(id).or_insert_with(|| vec![0.0; len])
    }

    fn remove(&mut self, id: u64) -> Option<Vec<f32>> {
        self.grads.remove(&id)
    }

    /// Insert a raw gradient buffer, bypassing the tape. Exists for gradient
    /// injection in tests of downstream consumers.
    #[doc(hidden)]
    pub fn insert_raw(&mut self, id: u64, grad: Vec<f32>) {
        self.grads.insert(id, grad);
    }
}

struct Node {
    out_id: u64,
    backward: Box<dyn Fn(&[f32], &mut GradStore)>,
}

/// Records primitive applications for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

fn any_grad(inputs: &[&Tensor]) -> bool {
    inputs.iter().any(|t| t.requires_grad())
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn record<F>(&self, out: &Tensor, backward: F)
    where
        F: Fn(&[f32], &mut GradStore) + 'static,
    {
        self.nodes.borrow_mut().push(Node {
            out_id: out.id(),
            backward: Box::new(backward),
        });
    }

    fn finish(&self, op: &'static str, shape: Vec<usize>, data: Vec<f32>, track: bool) -> Result<Tensor> {
        check_finite(op, &data)?;
        Ok(Tensor::from_op(shape, data, track))
    }

    /// Populate gradients for everything reachable from a scalar loss.
    pub fn backward(&self, loss: &Tensor) -> Result<GradStore> {
        if self.consumed.get() {
            return Err(Error::Tape(
                "backward already ran on this tape; build a new tape per step".into(),
            ));
        }
        if !loss.is_scalar() {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        if !nodes.iter().any(|n| n.out_id == loss.id()) {
            return Err(Error::Tape("loss is detached from this tape".into()));
        }
        self.consumed.set(true);
        let mut store = GradStore::default();
        store.slot(loss.id(), 1)[0] = 1.0;
        for node in nodes.iter().rev() {
            // Reverse topological order: by the time the producer is visited,
            // the output's gradient is complete, so it can be taken out.
            if let Some(grad_out) = store.remove(node.out_id) {
                (node.backward)(&grad_out, &mut store);
            }
        }
        Ok(store)
    }

    // ---- elementwise ----

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let data: Vec<f32> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let track = any_grad(&[a, b]);
        let out = self.finish("add", a.shape().to_vec(), data, track)?;
        if track {
            let (ia, ib) = (a.clone(), b.clone());
            self.record(&out, move |g, store| {
                if ia.requires_grad() {
                    let s = store.slot(ia.id(), ia.len());
                    for (d, &gv) in s.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if ib.requires_grad() {
                    let s = store.slot(ib.id(), ib.len());
                    for (d, &gv) in s.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let neg = self.scale(b, -1.0)?;
        self.add(a, &neg)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let data: Vec<f32> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let track = any_grad(&[a, b]);
        let out = self.finish("mul", a.shape().to_vec(), data, track)?;
        if track {
            let (ia, ib) = (a.clone(), b.clone());
            self.record(&out, move |g, store| {
                if ia.requires_grad() {
                    let s = store.slot(ia.id(), ia.len());
                    for i in 0..g.len() {
                        s[i] += g[i] * ib.data()[i];
                    }
                }
                if ib.requires_grad() {
                    let s = store.slot(ib.id(), ib.len());
                    for i in 0..g.len() {
                        s[i] += g[i] * ia.data()[i];
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn scale(&self, a: &Tensor, c: f32) -> Result<Tensor> {
        let data: Vec<f32> = a.data().iter().map(|x| x * c).collect();
        let track = a.requires_grad();
        let out = self.finish("scale", a.shape().to_vec(), data, track)?;
        if track {
            let ia = a.clone();
            self.record(&out, move |g, store| {
                let s = store.slot(ia.id(), ia.len());
                for i in 0..g.len() {
                    s[i] += g[i] * c;
                }
            });
        }
        Ok(out)
    }

    /// `x: [N, D]` plus a per-column bias of length `D`.
    pub fn add_bias(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2("add_bias")?;
        if bias.len() != d {
            return Err(Error::shape(
                "add_bias",
                format!("x {:?} vs bias {:?}", x.shape(), bias.shape()),
            ));
        }
        let mut data = x.data().to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] += bias.data()[c];
            }
        }
        let track = any_grad(&[x, bias]);
        let out = self.finish("add_bias", x.shape().to_vec(), data, track)?;
        if track {
            let (ix, ib) = (x.clone(), bias.clone());
            self.record(&out, move |g, store| {
                if ix.requires_grad() {
                    let s = store.slot(ix.id(), ix.len());
                    for i in 0..g.len() {
                        s[i] += g[i];
                    }
                }
                if ib.requires_grad() {
                    let s = store.slot(ib.id(), ib.len());
                    for r in 0..n {
                        for c in 0..d {
                            s[c] += g[r * d + c];
                        }
                    }
                }
            });
        }
        Ok(out)
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.dims2("matmul")?;
        let (k2, n) = b.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims disagree: {:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let data = mm(a.data(), b.data(), m, k, n);
        let track = any_grad(&[a, b]);
        let out = self.finish("matmul", vec![m, n], data, track)?;
        if track {
            let (ia, ib) = (a.clone(), b.clone());
            self.record(&out, move |g, store| {
                if ia.requires_grad() {
                    // dA = dC · Bᵀ
                    let da = mm_nt(g, ib.data(), m, n, k);
                    let s = store.slot(ia.id(), ia.len());
                    for i in 0..s.len() {
                        s[i] += da[i];
                    }
                }
                if ib.requires_grad() {
                    // dB = Aᵀ · dC
                    let db = mm_tn(ia.data(), g, m, k, n);
                    let s = store.slot(ib.id(), ib.len());
                    for i in 0..s.len() {
                        s[i] += db[i];
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn transpose(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = x.dims2("transpose")?;
        let mut data = vec![0.0f32; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = x.data()[i * c + j];
            }
        }
        let track = x.requires_grad();
        let out = self.finish("transpose", vec![c, r], data, track)?;
        if track {
            let ix = x.clone();
            self.record(&out, move |g, store| {
                let s = store.slot(ix.id(), ix.len());
                for i in 0..r {
                    for j in 0..c {
                        s[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Ok(out)
    }

    // ---- reductions / normalization ----

    /// Numerically-stabilized softmax over the last dimension.
    pub fn softmax_lastdim(&self, x: &Tensor) -> Result<Tensor> {
        let d = *x.shape().last().ok_or_else(|| {
            Error::shape("softmax_lastdim", "rank-0 input".to_string())
        })?;
        if d == 0 {
            return Err(Error::shape("softmax_lastdim", "empty last dimension".to_string()));
        }
        let rows = x.len() / d;
        let mut data = vec![0.0f32; x.len()];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for (o, &v) in data[r * d..(r + 1) * d].iter_mut().zip(row) {
                let e = mathx::expf(v - max);
                *o = e;
                sum += e as f64;
            }
            let inv = (1.0 / sum) as f32;
            for o in &mut data[r * d..(r + 1) * d] {
                *o *= inv;
            }
        }
        let track = x.requires_grad();
        let out = self.finish("softmax_lastdim", x.shape().to_vec(), data, track)?;
        if track {
            let ix = x.clone();
            let iy = out.clone();
            self.record(&out, move |g, store| {
                let y = iy.data();
                let s = store.slot(ix.id(), ix.len());
                for r in 0..rows {
                    let o = r * d;
                    let mut dot = 0.0f64;
                    for j in 0..d {
                        dot += (g[o + j] * y[o + j]) as f64;
                    }
                    for j in 0..d {
                        s[o + j] += y[o + j] * (g[o + j] - dot as f32);
                    }
                }
            });
        }
        Ok(out)
    }

    /// Layer normalization over the last dimension with affine gain/bias.
    pub fn layer_norm(&self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<Tensor> {
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm", "rank-0 input".to_string()))?;
        if d == 0 {
            return Err(Error::shape("layer_norm", "empty normalization axis".to_string()));
        }
        if gain.len() != d || bias.len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gain {:?} / bias {:?} must match last dim {}",
                    gain.shape(),
                    bias.shape(),
                    d
                ),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let rows = x.len() / d;
        let mut data = vec![0.0f32; x.len()];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let (mean, inv_std) = row_stats(row, eps);
            for j in 0..d {
                let xh = (row[j] - mean) * inv_std;
                data[r * d + j] = gain.data()[j] * xh + bias.data()[j];
            }
        }
        let track = any_grad(&[x, gain, bias]);
        let out = self.finish("layer_norm", x.shape().to_vec(), data, track)?;
        if track {
            let (ix, ig, ib) = (x.clone(), gain.clone(), bias.clone());
            self.record(&out, move |g, store| {
                let nd = d as f32;
                let mut dx = vec![0.0f32; ix.len()];
                let mut dgain = vec![0.0f32; d];
                let mut dbias = vec![0.0f32; d];
                for r in 0..rows {
                    let row = &ix.data()[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let (mean, inv_std) = row_stats(row, eps);
                    let mut dvar = 0.0f64;
                    let mut dmean = 0.0f64;
                    for j in 0..d {
                        let dxh = grow[j] * ig.data()[j];
                        let cent = row[j] - mean;
                        dvar += (dxh * cent) as f64 * (-0.5 * inv_std * inv_std * inv_std) as f64;
                        dmean += (dxh * -inv_std) as f64;
                        dgain[j] += grow[j] * cent * inv_std;
                        dbias[j] += grow[j];
                    }
                    for j in 0..d {
                        let dxh = grow[j] * ig.data()[j];
                        let cent = row[j] - mean;
                        dx[r * d + j] = dxh * inv_std
                            + (dvar as f32) * 2.0 * cent / nd
                            + (dmean as f32) / nd;
                    }
                }
                if ix.requires_grad() {
                    let s = store.slot(ix.id(), ix.len());
                    for i in 0..dx.len() {
                        s[i] += dx[i];
                    }
                }
                if ig.requires_grad() {
                    let s = store.slot(ig.id(), ig.len());
                    for j in 0..d {
                        s[j] += dgain[j];
                    }
                }
                if ib.requires_grad() {
                    let s = store.slot(ib.id(), ib.len());
                    for j in 0..d {
                        s[j] += dbias[j];
                    }
                }
            });
        }
        Ok(out)
    }

    // ---- activations ----

    pub fn relu(&self, x: &Tensor) -> Result<Tensor> {
        let data: Vec<f32> = x.data().iter().map(|&v| v.max(0.0)).collect();
        let track = x.requires_grad();
        let out = self.finish("relu", x.shape().to_vec(), data, track)?;
        if track {
            let ix = x.clone();
            self.record(&out, move |g, store| {
                let s = store.slot(ix.id(), ix.len());
                for i in 0..g.len() {
                    if ix.data()[i] > 0.0 {
                        s[i] += g[i];
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn gelu(&self, x: &Tensor) -> Result<Tensor> {
        let data: Vec<f32> = x.data().iter().map(|&v| gelu_fwd(v)).collect();
        let track = x.requires_grad();
        let out = self.finish("gelu", x.shape().to_vec(), data, track)?;
        if track {
            let ix = x.clone();
            self.record(&out, move |g, store| {
                let s = store.slot(ix.id(), ix.len());
                for i in 0..g.len() {
                    s[i] += g[i] * gelu_grad(ix.data()[i]);
                }
            });
        }
        Ok(out)
    }

    /// Inverted dropout with a caller-supplied seeded stream; the identity in
    /// evaluation mode (callers simply skip the op there).
    pub fn dropout(&self, x: &Tensor, rate: f32, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mask: Vec<f32> = (0..x.len())
            .map(|_| if rng.gen::<f32>() < keep { scale } else { 0.0 })
            .collect();
        let data: Vec<f32> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let track = x.requires_grad();
        let out = self.finish("dropout", x.shape().to_vec(), data, track)?;
        if track {
            let ix = x.clone();
            self.record(&out, move |g, store| {
                let s = store.slot(ix.id(), ix.len());
                for i in 0..g.len() {
                    s[i] += g[i] * mask[i];
                }
            });
        }
        Ok(out)
    }

    // ---- gather / concat / slice ----

    /// Row lookup: `table: [V, D]`, `ids` index rows; output `[ids.len(), D]`.
    pub fn embedding(&self, table: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let (v, d) = table.dims2("embedding")?;
        if ids.is_empty() {
            return Err(Error::shape("embedding", "empty id list".to_string()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape(
                "embedding",
                format!("id {bad} out of range for vocabulary of {v}"),
            ));
        }
        let n = ids.len();
        let mut data = vec![0.0f32; n * d];
        for (r, &id) in ids.iter().enumerate() {
            data[r * d..(r + 1) * d].copy_from_slice(&table.data()[id * d..(id + 1) * d]);
        }
        let track = table.requires_grad();
        let out = self.finish("embedding", vec![n, d], data, track)?;
        if track {
            let it = table.clone();
            let ids = ids.to_vec();
            self.record(&out, move |g, store| {
                let s = store.slot(it.id(), it.len());
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        s[id * d + j] += g[r * d + j];
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs".to_string()));
        }
        let (_, d) = parts[0].dims2("concat_rows")?;
        let mut rows = 0;
        for p in parts {
            let (r, c) = p.dims2("concat_rows")?;
            if c != d {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column mismatch: {} vs {}", d, c),
                ));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * d);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let track = parts.iter().any(|t| t.requires_grad());
        let out = self.finish("concat_rows", vec![rows, d], data, track)?;
        if track {
            let owned: Vec<Tensor> = parts.iter().map(|t| (*t).clone()).collect();
            self.record(&out, move |g, store| {
                let mut off = 0;
                for p in &owned {
                    let len = p.len();
                    if p.requires_grad() {
                        let s = store.slot(p.id(), len);
                        for i in 0..len {
                            s[i] += g[off + i];
                        }
                    }
                    off += len;
                }
            });
        }
        Ok(out)
    }

    pub fn slice_rows(&self, x: &Tensor, r0: usize, r1: usize) -> Result<Tensor> {
        let (n, d) = x.dims2("slice_rows")?;
        if r0 >= r1 || r1 > n {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {r0}..{r1} of {n}"),
            ));
        }
        let data = x.data()[r0 * d..r1 * d].to_vec();
        let track = x.requires_grad();
        let out = self.finish("slice_rows", vec![r1 - r0, d], data, track)?;
        if track {
            let ix = x.clone();
            self.record(&out, move |g, store| {
                let s = store.slot(ix.id(), ix.len());
                for i in 0..g.len() {
                    s[r0 * d + i] += g[i];
                }
            });
        }
        Ok(out)
    }

    pub fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs".to_string()));
        }
        let (n, _) = parts[0].dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for p in parts {
            let (r, c) = p.dims2("concat_cols")?;
            if r != n {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row mismatch: {} vs {}", n, r),
                ));
            }
            widths.push(c);
            total += c;
        }
        let mut data = vec![0.0f32; n * total];
        for r in 0..n {
            let mut off = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                data[r * total + off..r * total + off + w]
                    .copy_from_slice(&p.data()[r * w..(r + 1) * w]);
                off += w;
            }
        }
        let track = parts.iter().any(|t| t.requires_grad());
        let out = self.finish("concat_cols", vec![n, total], data, track)?;
        if track {
            let owned: Vec<Tensor> = parts.iter().map(|t| (*t).clone()).collect();
            let widths = widths.clone();
            self.record(&out, move |g, store| {
                for r in 0..n {
                    let mut off = 0;
                    for (p, &w) in owned.iter().zip(&widths) {
                        if p.requires_grad() {
                            let s = store.slot(p.id(), p.len());
                            for j in 0..w {
                                s[r * w + j] += g[r * total + off + j];
                            }
                        }
                        off += w;
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn slice_cols(&self, x: &Tensor, c0: usize, c1: usize) -> Result<Tensor> {
        let (n, d) = x.dims2("slice_cols")?;
        if c0 >= c1 || c1 > d {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {c0}..{c1} of {d}"),
            ));
        }
        let w = c1 - c0;
        let mut data = vec![0.0f32; n * w];
        for r in 0..n {
            data[r * w..(r + 1) * w].copy_from_slice(&x.data()[r * d + c0..r * d + c1]);
        }
        let track = x.requires_grad();
        let out = self.finish("slice_cols", vec![n, w], data, track)?;
        if track {
            let ix = x.clone();
            self.record(&out, move |g, store| {
                let s = store.slot(ix.id(), ix.len());
                for r in 0..n {
                    for j in 0..w {
                        s[r * d + c0 + j] += g[r * w + j];
                    }
                }
            });
        }
        Ok(out)
    }

    /// Column-wise mean over rows: `[N, D] -> [1, D]`.
    pub fn mean_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2("mean_rows")?;
        let mut acc = vec![0.0f64; d];
        for r in 0..n {
            for j in 0..d {
                acc[j] += x.data()[r * d + j] as f64;
            }
        }
        let data: Vec<f32> = acc.iter().map(|&v| (v / n as f64) as f32).collect();
        let track = x.requires_grad();
        let out = self.finish("mean_rows", vec![1, d], data, track)?;
        if track {
            let ix = x.clone();
            self.record(&out, move |g, store| {
                let s = store.slot(ix.id(), ix.len());
                let inv = 1.0 / n as f32;
                for r in 0..n {
                    for j in 0..d {
                        s[r * d + j] += g[j] * inv;
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn sum_all(&self, x: &Tensor) -> Result<Tensor> {
        let mut acc = 0.0f64;
        for &v in x.data() {
            acc += v as f64;
        }
        let track = x.requires_grad();
        let out = self.finish("sum_all", vec![1], vec![acc as f32], track)?;
        if track {
            let ix = x.clone();
            self.record(&out, move |g, store| {
                let s = store.slot(ix.id(), ix.len());
                for v in s.iter_mut() {
                    *v += g[0];
                }
            });
        }
        Ok(out)
    }

    /// Mean binary cross-entropy between raw logits and {0,1} targets,
    /// computed in the stable logit form.
    pub fn bce_with_logits(&self, logits: &Tensor, targets: &[f32]) -> Result<Tensor> {
        if logits.len() != targets.len() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} logits vs {} targets", logits.len(), targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Contract(format!("label {bad} outside {{0, 1}}")));
        }
        let n = logits.len();
        let mut acc = 0.0f64;
        for (&z, &y) in logits.data().iter().zip(targets) {
            // max(z, 0) - z*y + ln(1 + exp(-|z|))
            let term = z.max(0.0) - z * y + mathx::lnf(1.0 + mathx::expf(-z.abs()));
            acc += term as f64;
        }
        let loss = (acc / n as f64) as f32;
        let track = logits.requires_grad();
        let out = self.finish("bce_with_logits", vec![1], vec![loss], track)?;
        if track {
            let iz = logits.clone();
            let y = targets.to_vec();
            self.record(&out, move |g, store| {
                let s = store.slot(iz.id(), iz.len());
                let inv = g[0] / n as f32;
                for i in 0..n {
                    s[i] += (mathx::sigmoidf(iz.data()[i]) - y[i]) * inv;
                }
            });
        }
        Ok(out)
    }
}

// ---- kernels ----

fn mm(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..k {
            let av = a[i * k + l] as f64;
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                acc[j] += av * brow[j] as f64;
            }
        }
        for j in 0..n {
            out[i * n + j] = acc[j] as f32;
        }
    }
    out
}

/// `a [m×n] · bᵀ` where `b` is `[k×n]`; result `[m×k]`.
fn mm_nt(a: &[f32], b: &[f32], m: usize, n: usize, k: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for l in 0..k {
            let brow = &b[l * n..(l + 1) * n];
            let mut acc = 0.0f64;
            for j in 0..n {
                acc += arow[j] as f64 * brow[j] as f64;
            }
            out[i * k + l] = acc as f32;
        }
    }
    out
}

/// `aᵀ · b` where `a` is `[m×k]` and `b` is `[m×n]`; result `[k×n]`.
fn mm_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f64; k * n];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l] as f64;
            if av == 0.0 {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            for j in 0..n {
                out[l * n + j] += av * brow[j] as f64;
            }
        }
    }
    out.iter().map(|&v| v as f32).collect()
}

fn row_stats(row: &[f32], eps: f32) -> (f32, f32) {
    let d = row.len() as f64;
    let mut mean = 0.0f64;
    for &v in row {
        mean += v as f64;
    }
    mean /= d;
    let mut var = 0.0f64;
    for &v in row {
        let c = v as f64 - mean;
        var += c * c;
    }
    var /= d;
    (mean as f32, (1.0 / mathx::sqrt(var + eps as f64)) as f32)
}

fn gelu_fwd(x: f32) -> f32 {
    const S: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + mathx::tanhf(S * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f32) -> f32 {
    const S: f32 = 0.797_884_6;
    let u = S * (x + 0.044715 * x * x * x);
    let t = mathx::tanhf(u);
    let du = S * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
