//! Parameter layout and the forward/backward pass of the causal transformer.
//!
//! Every matrix is row-major `[in x out]`, so a linear map is `y = x W`.
//! Activations are `[T x D]` row-major for a sequence of length `T`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Number of answer logits: mild, severe, survive, death.
pub const N_ANSWER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Backbone,
    Prefix,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub prefix_k: Option<Tensor>,
    pub prefix_v: Option<Tensor>,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub max_len: usize,
    pub d: usize,
    pub heads: usize,
    pub ffn: usize,
    pub layers: usize,
    /// Prefix positions per layer; 0 when the model has no prefix.
    pub prefix: usize,
}

impl Dims {
    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub dims: Dims,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Tensor,
    pub lnf_b: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
    pub total: usize,
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, rows: usize, cols: usize) -> Tensor {
        let t = Tensor {
            offset: self.0,
            rows,
            cols,
        };
        self.0 += rows * cols;
        t
    }
}

impl Layout {
    pub fn new(dims: Dims) -> Self {
        let (d, f) = (dims.d, dims.ffn);
        let mut a = Alloc(0);
        let tok_emb = a.take(dims.vocab, d);
        let pos_emb = a.take(dims.max_len, d);
        let layers = (0..dims.layers)
            .map(|_| LayerParams {
                ln1_g: a.take(1, d),
                ln1_b: a.take(1, d),
                wq: a.take(d, d),
                wk: a.take(d, d),
                wv: a.take(d, d),
                wo: a.take(d, d),
                prefix_k: (dims.prefix > 0).then(|| a.take(dims.prefix, d)),
                prefix_v: (dims.prefix > 0).then(|| a.take(dims.prefix, d)),
                ln2_g: a.take(1, d),
                ln2_b: a.take(1, d),
                w1: a.take(d, f),
                b1: a.take(1, f),
                w2: a.take(f, d),
                b2: a.take(1, d),
            })
            .collect();
        let lnf_g = a.take(1, d);
        let lnf_b = a.take(1, d);
        let w_out = a.take(d, N_ANSWER);
        let b_out = a.take(1, N_ANSWER);
        Layout {
            dims,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            total: a.0,
        }
    }

    /// Every tensor with a stable name and its group, in storage order.
    pub fn named(&self) -> Vec<(String, Tensor, Group)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb, Group::Backbone),
            ("pos_emb".to_string(), self.pos_emb, Group::Backbone),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let mut push = |name: &str, t: Tensor, g: Group| out.push((format!("layer{i}.{name}"), t, g));
            push("ln1_g", l.ln1_g, Group::Backbone);
            push("ln1_b", l.ln1_b, Group::Backbone);
            push("wq", l.wq, Group::Backbone);
            push("wk", l.wk, Group::Backbone);
            push("wv", l.wv, Group::Backbone);
            push("wo", l.wo, Group::Backbone);
            if let (Some(k), Some(v)) = (l.prefix_k, l.prefix_v) {
                push("prefix_k", k, Group::Prefix);
                push("prefix_v", v, Group::Prefix);
            }
            push("ln2_g", l.ln2_g, Group::Backbone);
            push("ln2_b", l.ln2_b, Group::Backbone);
            push("w1", l.w1, Group::Backbone);
            push("b1", l.b1, Group::Backbone);
            push("w2", l.w2, Group::Backbone);
            push("b2", l.b2, Group::Backbone);
        }
        out.push(("lnf_g".to_string(), self.lnf_g, Group::Backbone));
        out.push(("lnf_b".to_string(), self.lnf_b, Group::Backbone));
        out.push(("w_out".to_string(), self.w_out, Group::Head));
        out.push(("b_out".to_string(), self.b_out, Group::Head));
        out
    }

    /// Per-parameter flag: belongs to one of `groups`.
    pub fn mask(&self, groups: &[Group]) -> Vec<bool> {
        let mut m = vec![false; self.total];
        for (_, t, g) in self.named() {
            if groups.contains(&g) {
                m[t.range()].iter_mut().for_each(|b| *b = true);
            }
        }
        m
    }

    /// Matrices and embeddings; norms and biases are excluded.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.total];
        for (_, t, _) in self.named() {
            if t.rows > 1 {
                m[t.range()].iter_mut().for_each(|b| *b = true);
            }
        }
        m
    }

    pub fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        let small = Normal::new(0.0, 0.02).unwrap();
        for (name, t, _) in self.named() {
            let slot = &mut p[t.range()];
            let short = name.rsplit('.').next().unwrap();
            match short {
                "ln1_g" | "ln2_g" | "lnf_g" => slot.fill(1.0),
                "ln1_b" | "ln2_b" | "lnf_b" | "b1" | "b2" | "b_out" => {}
                "tok_emb" | "pos_emb" | "prefix_k" | "prefix_v" => {
                    slot.iter_mut().for_each(|v| *v = small.sample(rng));
                }
                _ => {
                    let wide = Normal::new(0.0, 1.0 / (t.rows as f64).sqrt()).unwrap();
                    slot.iter_mut().for_each(|v| *v = wide.sample(rng));
                }
            }
        }
        p
    }
}

/// `y[t x o] = x[t x i] w[i x o]`.
fn matmul(x: &[f64], w: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let t = x.len() / n_in;
    let mut y = vec![0.0; t * n_out];
    for r in 0..t {
        let yr = &mut y[r * n_out..(r + 1) * n_out];
        for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (yo, wo) in yr.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                *yo += xi * wo;
            }
        }
    }
    y
}

fn add_bias(y: &mut [f64], b: &[f64]) {
    for row in y.chunks_mut(b.len()) {
        row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
    }
}

/// Accumulates `dw += x^T dy` and returns `dx = dy w^T`.
fn matmul_backward(x: &[f64], w: &[f64], dy: &[f64], n_in: usize, n_out: usize, dw: &mut [f64]) -> Vec<f64> {
    let t = x.len() / n_in;
    let mut dx = vec![0.0; t * n_in];
    for r in 0..t {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        if dyr.iter().all(|&v| v == 0.0) {
            continue;
        }
        for i in 0..n_in {
            let xi = x[r * n_in + i];
            let wrow = &w[i * n_out..(i + 1) * n_out];
            let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
            let mut acc = 0.0;
            for o in 0..n_out {
                dwrow[o] += xi * dyr[o];
                acc += dyr[o] * wrow[o];
            }
            dx[r * n_in + i] = acc;
        }
    }
    dx
}

fn bias_backward(dy: &[f64], db: &mut [f64]) {
    for row in dy.chunks(db.len()) {
        db.iter_mut().zip(row).for_each(|(g, v)| *g += v);
    }
}

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> (Vec<f64>, NormCache) {
    let d = g.len();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = Vec::with_capacity(x.len() / d);
    for (r, row) in x.chunks(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(rs);
        for i in 0..d {
            let h = (row[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = h * g[i] + b[i];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward(dy: &[f64], c: &NormCache, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let d = g.len();
    let mut dx = vec![0.0; dy.len()];
    for (r, dyr) in dy.chunks(d).enumerate() {
        let xh = &c.xhat[r * d..(r + 1) * d];
        let mut mean_dh = 0.0;
        let mut mean_dh_xh = 0.0;
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            let dh = dyr[i] * g[i];
            mean_dh += dh;
            mean_dh_xh += dh * xh[i];
        }
        mean_dh /= d as f64;
        mean_dh_xh /= d as f64;
        for i in 0..d {
            let dh = dyr[i] * g[i];
            dx[r * d + i] = c.rstd[r] * (dh - mean_dh - xh[i] * mean_dh_xh);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Inverted-dropout mask, or `None` when dropout is off.
fn dropout_mask(len: usize, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng.filter(|_| p > 0.0)?;
    let keep = 1.0 / (1.0 - p);
    Some((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

struct LayerCache {
    n1: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[heads][T][P + T]` attention probabilities; masked entries are 0.
    att: Vec<f64>,
    width: usize,
    o: Vec<f64>,
    drop1: Option<Vec<f64>>,
    n2: NormCache,
    b: Vec<f64>,
    h1: Vec<f64>,
    g: Vec<f64>,
    drop2: Option<Vec<f64>>,
}

pub struct Cache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    nf: NormCache,
    f: Vec<f64>,
    /// `[T x 4]` answer logits at every position.
    pub logits: Vec<f64>,
}

impl Cache {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn logits_at(&self, t: usize) -> &[f64] {
        &self.logits[t * N_ANSWER..(t + 1) * N_ANSWER]
    }

    /// Attention probabilities of `layer`, `head` at query position `t`,
    /// prefix slots first.
    pub fn attention_row(&self, layer: usize, head: usize, t: usize) -> &[f64] {
        let lc = &self.layers[layer];
        let start = (head * self.ids.len() + t) * lc.width;
        &lc.att[start..start + lc.width]
    }
}

/// Attention over prefix slots then positions `0..=t`.
fn attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    pk: Option<&[f64]>,
    pv: Option<&[f64]>,
    dims: &Dims,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (d, dh, p) = (dims.d, dims.head_dim(), dims.prefix);
    let w = p + n;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut att = vec![0.0; dims.heads * n * w];
    let mut o = vec![0.0; n * d];
    let key = |j: usize| -> &[f64] {
        if j < p {
            &pk.unwrap()[j * d..(j + 1) * d]
        } else {
            &k[(j - p) * d..(j - p + 1) * d]
        }
    };
    let val = |j: usize| -> &[f64] {
        if j < p {
            &pv.unwrap()[j * d..(j + 1) * d]
        } else {
            &v[(j - p) * d..(j - p + 1) * d]
        }
    };
    for h in 0..dims.heads {
        let hs = h * dh..(h + 1) * dh;
        for t in 0..n {
            let qt = &q[t * d..(t + 1) * d][hs.clone()];
            let row = &mut att[(h * n + t) * w..(h * n + t + 1) * w];
            let visible = p + t + 1;
            let mut max = f64::NEG_INFINITY;
            for (j, s) in row.iter_mut().enumerate().take(visible) {
                *s = qt.iter().zip(&key(j)[hs.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale;
                max = max.max(*s);
            }
            let mut z = 0.0;
            for s in row.iter_mut().take(visible) {
                *s = (*s - max).exp();
                z += *s;
            }
            let ot = &mut o[t * d..(t + 1) * d][hs.clone()];
            for (j, s) in row.iter_mut().enumerate().take(visible) {
                *s /= z;
                for (oi, vi) in ot.iter_mut().zip(&val(j)[hs.clone()]) {
                    *oi += *s * vi;
                }
            }
        }
    }
    (att, o)
}

/// Runs the network on `ids`. With `dropout = Some((p, rng))` residual
/// branches are dropped as in training.
pub fn forward(params: &[f64], layout: &Layout, ids: &[u32], mut dropout: Option<(f64, &mut ChaCha8Rng)>) -> Cache {
    let dims = &layout.dims;
    let (d, n) = (dims.d, ids.len());
    let tok = &params[layout.tok_emb.range()];
    let pos = &params[layout.pos_emb.range()];
    let mut x = vec![0.0; n * d];
    for (t, &id) in ids.iter().enumerate() {
        let id = id as usize;
        for i in 0..d {
            x[t * d + i] = tok[id * d + i] + pos[t * d + i];
        }
    }
    let mut layers = Vec::with_capacity(layout.layers.len());
    for lp in &layout.layers {
        let pr = |t: Tensor| &params[t.range()];
        let (a, n1) = layer_norm(&x, pr(lp.ln1_g), pr(lp.ln1_b));
        let q = matmul(&a, pr(lp.wq), d, d);
        let k = matmul(&a, pr(lp.wk), d, d);
        let v = matmul(&a, pr(lp.wv), d, d);
        let (att, o) = attention(&q, &k, &v, lp.prefix_k.map(pr), lp.prefix_v.map(pr), dims, n);
        let mut branch = matmul(&o, pr(lp.wo), d, d);
        let drop1 = match dropout.as_mut() {
            Some((p, rng)) => dropout_mask(branch.len(), *p, Some(rng)),
            None => None,
        };
        apply_mask(&mut branch, &drop1);
        x.iter_mut().zip(&branch).for_each(|(xi, bi)| *xi += bi);
        let (b, n2) = layer_norm(&x, pr(lp.ln2_g), pr(lp.ln2_b));
        let mut h1 = matmul(&b, pr(lp.w1), d, dims.ffn);
        add_bias(&mut h1, pr(lp.b1));
        let g: Vec<f64> = h1.iter().map(|&v| gelu(v)).collect();
        let mut branch = matmul(&g, pr(lp.w2), dims.ffn, d);
        add_bias(&mut branch, pr(lp.b2));
        let drop2 = match dropout.as_mut() {
            Some((p, rng)) => dropout_mask(branch.len(), *p, Some(rng)),
            None => None,
        };
        apply_mask(&mut branch, &drop2);
        x.iter_mut().zip(&branch).for_each(|(xi, bi)| *xi += bi);
        layers.push(LayerCache {
            n1,
            a,
            q,
            k,
            v,
            att,
            width: dims.prefix + n,
            o,
            drop1,
            n2,
            b,
            h1,
            g,
            drop2,
        });
    }
    let (f, nf) = layer_norm(&x, &params[layout.lnf_g.range()], &params[layout.lnf_b.range()]);
    let mut logits = matmul(&f, &params[layout.w_out.range()], d, N_ANSWER);
    add_bias(&mut logits, &params[layout.b_out.range()]);
    Cache {
        ids: ids.to_vec(),
        layers,
        nf,
        f,
        logits,
    }
}

/// Accumulates into `grad` the gradient of `sum(dlogits * logits)`.
pub fn backward(params: &[f64], layout: &Layout, cache: &Cache, dlogits: &[f64], grad: &mut [f64]) {
    let dims = &layout.dims;
    let (d, n, dh, p) = (dims.d, cache.len(), dims.head_dim(), dims.prefix);
    let w = p + n;
    let scale = 1.0 / (dh as f64).sqrt();

    bias_backward(dlogits, &mut grad[layout.b_out.range()]);
    let df = matmul_backward(&cache.f, &params[layout.w_out.range()], dlogits, d, N_ANSWER, &mut grad[layout.w_out.range()]);
    let (dg, db) = two_mut(grad, layout.lnf_g, layout.lnf_b);
    let mut dx = layer_norm_backward(&df, &cache.nf, &params[layout.lnf_g.range()], dg, db);

    for (lp, lc) in layout.layers.iter().zip(&cache.layers).rev() {
        // Feed-forward branch.
        let mut dbranch = dx.clone();
        apply_mask(&mut dbranch, &lc.drop2);
        bias_backward(&dbranch, &mut grad[lp.b2.range()]);
        let dgel = matmul_backward(&lc.g, &params[lp.w2.range()], &dbranch, dims.ffn, d, &mut grad[lp.w2.range()]);
        let dh1: Vec<f64> = dgel.iter().zip(&lc.h1).map(|(g, &h)| g * gelu_grad(h)).collect();
        bias_backward(&dh1, &mut grad[lp.b1.range()]);
        let dbn = matmul_backward(&lc.b, &params[lp.w1.range()], &dh1, d, dims.ffn, &mut grad[lp.w1.range()]);
        let (dg, db) = two_mut(grad, lp.ln2_g, lp.ln2_b);
        let dn2 = layer_norm_backward(&dbn, &lc.n2, &params[lp.ln2_g.range()], dg, db);
        dx.iter_mut().zip(&dn2).for_each(|(a, b)| *a += b);

        // Attention branch.
        let mut dbranch = dx.clone();
        apply_mask(&mut dbranch, &lc.drop1);
        let d_o = matmul_backward(&lc.o, &params[lp.wo.range()], &dbranch, d, d, &mut grad[lp.wo.range()]);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dpk = vec![0.0; p * d];
        let mut dpv = vec![0.0; p * d];
        let pk = lp.prefix_k.map(|t| &params[t.range()]);
        let pv = lp.prefix_v.map(|t| &params[t.range()]);
        let mut datt = vec![0.0; w];
        for h in 0..dims.heads {
            let hs = h * dh..(h + 1) * dh;
            for t in 0..n {
                let row = &lc.att[(h * n + t) * w..(h * n + t + 1) * w];
                let dot = &d_o[t * d..(t + 1) * d][hs.clone()];
                let visible = p + t + 1;
                let mut s = 0.0;
                for j in 0..visible {
                    let (vj, dvj) = if j < p {
                        (&pv.unwrap()[j * d..(j + 1) * d], &mut dpv[j * d..(j + 1) * d])
                    } else {
                        let r = (j - p) * d..(j - p + 1) * d;
                        (&lc.v[r.clone()], &mut dv[r])
                    };
                    let mut acc = 0.0;
                    for (c, (&vv, dvv)) in vj[hs.clone()].iter().zip(&mut dvj[hs.clone()]).enumerate() {
                        acc += dot[c] * vv;
                        *dvv += row[j] * dot[c];
                    }
                    datt[j] = acc;
                    s += row[j] * acc;
                }
                let qt = &lc.q[t * d..(t + 1) * d];
                for j in 0..visible {
                    let ds = row[j] * (datt[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let (kj, dkj) = if j < p {
                        (&pk.unwrap()[j * d..(j + 1) * d], &mut dpk[j * d..(j + 1) * d])
                    } else {
                        let r = (j - p) * d..(j - p + 1) * d;
                        (&lc.k[r.clone()], &mut dk[r])
                    };
                    for c in hs.clone() {
                        dq[t * d + c] += ds * kj[c];
                        dkj[c] += ds * qt[c];
                    }
                }
            }
        }
        if let (Some(tk), Some(tv)) = (lp.prefix_k, lp.prefix_v) {
            grad[tk.range()].iter_mut().zip(&dpk).for_each(|(g, v)| *g += v);
            grad[tv.range()].iter_mut().zip(&dpv).for_each(|(g, v)| *g += v);
        }
        let mut da = matmul_backward(&lc.a, &params[lp.wq.range()], &dq, d, d, &mut grad[lp.wq.range()]);
        let dak = matmul_backward(&lc.a, &params[lp.wk.range()], &dk, d, d, &mut grad[lp.wk.range()]);
        let dav = matmul_backward(&lc.a, &params[lp.wv.range()], &dv, d, d, &mut grad[lp.wv.range()]);
        for i in 0..da.len() {
            da[i] += dak[i] + dav[i];
        }
        let (dg, db) = two_mut(grad, lp.ln1_g, lp.ln1_b);
        let dn1 = layer_norm_backward(&da, &lc.n1, &params[lp.ln1_g.range()], dg, db);
        dx.iter_mut().zip(&dn1).for_each(|(a, b)| *a += b);
    }

    for (t, &id) in cache.ids.iter().enumerate() {
        let dxt = &dx[t * d..(t + 1) * d];
        let te = layout.tok_emb.offset + id as usize * d;
        grad[te..te + d].iter_mut().zip(dxt).for_each(|(g, v)| *g += v);
        let pe = layout.pos_emb.offset + t * d;
        grad[pe..pe + d].iter_mut().zip(dxt).for_each(|(g, v)| *g += v);
    }
}

/// Disjoint mutable views of two tensors, `a` stored before `b`.
fn two_mut(grad: &mut [f64], a: Tensor, b: Tensor) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.offset + a.len() <= b.offset);
    let (lo, hi) = grad.split_at_mut(b.offset);
    (&mut lo[a.range()], &mut hi[..b.len()])
}

/// Softmax with `-inf` entries receiving probability 0.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Cross-entropy of a two-way softmax and its logit gradient.
pub fn binary_ce(l0: f64, l1: f64, target: usize) -> (f64, [f64; 2]) {
    let p = softmax(&[l0, l1]);
    let max = l0.max(l1);
    let lse = max + ((l0 - max).exp() + (l1 - max).exp()).ln();
    let loss = lse - if target == 0 { l0 } else { l1 };
    let mut g = [p[0], p[1]];
    g[target] -= 1.0;
    (loss, g)
}
