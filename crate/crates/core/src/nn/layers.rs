//! Layers with hand-written backward passes. Every layer works on one sample
//! at a time, laid out as `[time, channels]`.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A differentiable map on `[time, channels]` matrices.
pub trait Layer {
    type Cache;

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Self::Cache);

    /// Returns the input gradient and parameter gradients in `params()` order.
    fn backward(&self, cache: &Self::Cache, dy: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array2<f64>>);

    fn params(&self) -> Vec<&Array2<f64>>;

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Fan-in scaled uniform initialisation, `U(-sqrt(3/fan_in), sqrt(3/fan_in))`.
pub fn lecun_uniform<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let limit = (3.0 / fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn relu_backward(pre: &Array2<f64>, dy: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut d = dy.to_owned();
    d.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    d
}

fn bias_grad(dy: ArrayView2<'_, f64>) -> Array2<f64> {
    dy.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Affine map `y = x W + b` applied row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            w: lecun_uniform(inputs, outputs, inputs, rng),
            b: Array2::zeros((1, outputs)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }
}

impl Layer for Dense {
    type Cache = Array2<f64>;

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        assert_eq!(x.ncols(), self.inputs(), "dense input width");
        (x.dot(&self.w) + &self.b, x.to_owned())
    }

    fn backward(&self, x: &Array2<f64>, dy: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        (dy.dot(&self.w.t()), vec![x.t().dot(&dy), bias_grad(dy)])
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// 1-D convolution over time with "same" padding (`(k-1)/2` zeros on the
/// left, the rest on the right). Weights are stored im2col style as
/// `[(kernel * in_channels), filters]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub l2_lambda: f64,
}

impl Conv1d {
    pub fn new<R: Rng>(in_channels: usize, filters: usize, kernel_size: usize, l2_lambda: f64, rng: &mut R) -> Self {
        let fan_in = kernel_size * in_channels;
        Self {
            w: lecun_uniform(fan_in, filters, fan_in, rng),
            b: Array2::zeros((1, filters)),
            kernel_size,
            in_channels,
            l2_lambda,
        }
    }

    pub fn filters(&self) -> usize {
        self.w.ncols()
    }

    fn pad_left(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    fn im2col(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (t_len, c) = x.dim();
        let pl = self.pad_left() as isize;
        let mut cols = Array2::zeros((t_len, self.kernel_size * c));
        for t in 0..t_len {
            for j in 0..self.kernel_size {
                let src = t as isize - pl + j as isize;
                if src >= 0 && (src as usize) < t_len {
                    cols.slice_mut(s![t, j * c..(j + 1) * c]).assign(&x.row(src as usize));
                }
            }
        }
        cols
    }

    /// `(λ/2) ||W||²`.
    pub fn l2_penalty(&self) -> f64 {
        0.5 * self.l2_lambda * self.w.iter().map(|v| v * v).sum::<f64>()
    }
}

impl Layer for Conv1d {
    type Cache = Array2<f64>;

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        assert_eq!(x.ncols(), self.in_channels, "conv input channels");
        let cols = self.im2col(x);
        (cols.dot(&self.w) + &self.b, cols)
    }

    fn backward(&self, cols: &Array2<f64>, dy: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let t_len = cols.nrows();
        let c = self.in_channels;
        let pl = self.pad_left() as isize;
        let dcols = dy.dot(&self.w.t());
        let mut dx = Array2::zeros((t_len, c));
        for t in 0..t_len {
            for j in 0..self.kernel_size {
                let src = t as isize - pl + j as isize;
                if src >= 0 && (src as usize) < t_len {
                    let mut row = dx.row_mut(src as usize);
                    row += &dcols.slice(s![t, j * c..(j + 1) * c]);
                }
            }
        }
        (dx, vec![cols.t().dot(&dy), bias_grad(dy)])
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Non-overlapping max pooling over time. Size 1 is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxPool1d {
    pub size: usize,
}

impl MaxPool1d {
    pub fn output_len(&self, t_len: usize) -> usize {
        t_len / self.size
    }
}

pub struct PoolCache {
    argmax: Array2<usize>,
    input_len: usize,
}

impl Layer for MaxPool1d {
    type Cache = PoolCache;

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, PoolCache) {
        let (t_len, c) = x.dim();
        let out_len = self.output_len(t_len);
        let mut y = Array2::zeros((out_len, c));
        let mut argmax = Array2::zeros((out_len, c));
        for o in 0..out_len {
            for ch in 0..c {
                let mut best = o * self.size;
                for t in best + 1..(o + 1) * self.size {
                    if x[[t, ch]] > x[[best, ch]] {
                        best = t;
                    }
                }
                y[[o, ch]] = x[[best, ch]];
                argmax[[o, ch]] = best;
            }
        }
        (y, PoolCache { argmax, input_len: t_len })
    }

    fn backward(&self, cache: &PoolCache, dy: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut dx = Array2::zeros((cache.input_len, dy.ncols()));
        for ((o, ch), &t) in cache.argmax.indexed_iter() {
            dx[[t, ch]] += dy[[o, ch]];
        }
        (dx, Vec::new())
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        Vec::new()
    }
}

/// Convolution followed by ReLU, with an optional skip path added before the
/// activation: identity when widths match, a 1x1 projection otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvUnit {
    pub conv: Conv1d,
    pub projection: Option<Dense>,
    pub residual: bool,
}

pub struct ConvUnitCache {
    conv: Array2<f64>,
    projection: Option<Array2<f64>>,
    pre: Array2<f64>,
}

impl ConvUnit {
    pub fn new<R: Rng>(
        in_channels: usize,
        filters: usize,
        kernel_size: usize,
        l2_lambda: f64,
        residual: bool,
        rng: &mut R,
    ) -> Self {
        let conv = Conv1d::new(in_channels, filters, kernel_size, l2_lambda, rng);
        let projection = (residual && in_channels != filters).then(|| Dense::new(in_channels, filters, rng));
        Self { conv, projection, residual }
    }

    pub fn projection_param_count(&self) -> usize {
        self.projection.as_ref().map_or(0, |p| p.param_count())
    }
}

impl Layer for ConvUnit {
    type Cache = ConvUnitCache;

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, ConvUnitCache) {
        let (mut pre, conv) = self.conv.forward(x);
        let mut projection = None;
        if self.residual {
            match &self.projection {
                Some(p) => {
                    let (skip, c) = p.forward(x);
                    pre += &skip;
                    projection = Some(c);
                }
                None => pre += &x,
            }
        }
        (relu(&pre), ConvUnitCache { conv, projection, pre })
    }

    fn backward(&self, cache: &ConvUnitCache, dy: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let da = relu_backward(&cache.pre, dy);
        let (mut dx, mut grads) = self.conv.backward(&cache.conv, da.view());
        if self.residual {
            match (&self.projection, &cache.projection) {
                (Some(p), Some(c)) => {
                    let (dxs, gs) = p.backward(c, da.view());
                    dx += &dxs;
                    grads.extend(gs);
                }
                _ => dx += &da,
            }
        }
        (dx, grads)
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = self.conv.params();
        if let Some(proj) = &self.projection {
            p.extend(proj.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = self.conv.params_mut();
        if let Some(proj) = &mut self.projection {
            p.extend(proj.params_mut());
        }
        p
    }
}

/// Scaled dot-product attention with `heads` heads of width `key_dim`,
/// tokens being time steps. The output projection maps back to the input
/// width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub key_dim: usize,
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
}

pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Post-softmax weights per head, `[time, time]`.
    pub weights: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(model_dim: usize, heads: usize, key_dim: usize, rng: &mut R) -> Self {
        let inner = heads * key_dim;
        Self {
            heads,
            key_dim,
            wq: lecun_uniform(model_dim, inner, model_dim, rng),
            bq: Array2::zeros((1, inner)),
            wk: lecun_uniform(model_dim, inner, model_dim, rng),
            bk: Array2::zeros((1, inner)),
            wv: lecun_uniform(model_dim, inner, model_dim, rng),
            bv: Array2::zeros((1, inner)),
            wo: lecun_uniform(inner, model_dim, inner, rng),
            bo: Array2::zeros((1, model_dim)),
        }
    }

    pub fn model_dim(&self) -> usize {
        self.wq.nrows()
    }
}

impl Layer for MultiHeadAttention {
    type Cache = AttentionCache;

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, AttentionCache) {
        assert_eq!(x.ncols(), self.model_dim(), "attention input width");
        let q = x.dot(&self.wq) + &self.bq;
        let k = x.dot(&self.wk) + &self.bk;
        let v = x.dot(&self.wv) + &self.bv;
        let scale = 1.0 / (self.key_dim as f64).sqrt();
        let mut concat = Array2::zeros((x.nrows(), self.heads * self.key_dim));
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * self.key_dim..(h + 1) * self.key_dim];
            let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut a);
            concat.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            weights.push(a);
        }
        let y = concat.dot(&self.wo) + &self.bo;
        (y, AttentionCache { x: x.to_owned(), q, k, v, weights, concat })
    }

    fn backward(&self, c: &AttentionCache, dy: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let scale = 1.0 / (self.key_dim as f64).sqrt();
        let dwo = c.concat.t().dot(&dy);
        let dbo = bias_grad(dy);
        let dconcat = dy.dot(&self.wo.t());
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for (h, a) in c.weights.iter().enumerate() {
            let cols = s![.., h * self.key_dim..(h + 1) * self.key_dim];
            let doh = dconcat.slice(cols);
            let da = doh.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&doh));
            let mut ds = &da * a;
            let row_dot = ds.sum_axis(Axis(1)).insert_axis(Axis(1));
            ds -= &(a * &row_dot);
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let dx = dq.dot(&self.wq.t()) + dk.dot(&self.wk.t()) + dv.dot(&self.wv.t());
        let grads = vec![
            c.x.t().dot(&dq),
            bias_grad(dq.view()),
            c.x.t().dot(&dk),
            bias_grad(dk.view()),
            c.x.t().dot(&dv),
            bias_grad(dv.view()),
            dwo,
            dbo,
        ];
        (dx, grads)
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]
    }
}

/// Attention with an optional residual add, `y = x + mha(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionUnit {
    pub mha: MultiHeadAttention,
    pub residual: bool,
}

impl Layer for AttentionUnit {
    type Cache = AttentionCache;

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, AttentionCache) {
        let (mut y, c) = self.mha.forward(x);
        if self.residual {
            y += &x;
        }
        (y, c)
    }

    fn backward(&self, c: &AttentionCache, dy: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let (mut dx, g) = self.mha.backward(c, dy);
        if self.residual {
            dx += &dy;
        }
        (dx, g)
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        self.mha.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.mha.params_mut()
    }
}

/// Stateless LSTM returning the full hidden sequence. One weight matrix
/// `[(inputs + units), 4 * units]` acts on `[x_t, h_{t-1}]`; its column
/// blocks are the candidate `g` and the input, forget and output gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub units: usize,
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

pub struct LstmCache {
    /// `[x_t, h_{t-1}]` per step.
    z: Array2<f64>,
    /// Activated `g, i, f, o` per step.
    pub gates: Array2<f64>,
    cell: Array2<f64>,
    cell_tanh: Array2<f64>,
}

impl Lstm {
    pub fn new<R: Rng>(inputs: usize, units: usize, rng: &mut R) -> Self {
        let fan_in = inputs + units;
        let mut b = Array2::zeros((1, 4 * units));
        b.slice_mut(s![0, 2 * units..3 * units]).fill(1.0);
        Self {
            units,
            w: lecun_uniform(fan_in, 4 * units, fan_in, rng),
            b,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows() - self.units
    }
}

impl Layer for Lstm {
    type Cache = LstmCache;

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, LstmCache) {
        assert_eq!(x.ncols(), self.inputs(), "lstm input width");
        let (t_len, n_in) = x.dim();
        let u = self.units;
        let mut z = Array2::zeros((t_len, n_in + u));
        let mut gates = Array2::zeros((t_len, 4 * u));
        let mut cell = Array2::zeros((t_len, u));
        let mut cell_tanh = Array2::zeros((t_len, u));
        let mut h = Array2::zeros((t_len, u));
        for t in 0..t_len {
            z.slice_mut(s![t, ..n_in]).assign(&x.row(t));
            if t > 0 {
                let prev = h.row(t - 1).to_owned();
                z.slice_mut(s![t, n_in..]).assign(&prev);
            }
            let pre = z.slice(s![t..t + 1, ..]).dot(&self.w) + &self.b;
            for j in 0..4 * u {
                let v = pre[[0, j]];
                gates[[t, j]] = if j < u { v.tanh() } else { sigmoid(v) };
            }
            for j in 0..u {
                let prev_cell = if t > 0 { cell[[t - 1, j]] } else { 0.0 };
                let c = gates[[t, j]] * gates[[t, u + j]] + prev_cell * gates[[t, 2 * u + j]];
                cell[[t, j]] = c;
                cell_tanh[[t, j]] = c.tanh();
                h[[t, j]] = gates[[t, 3 * u + j]] * cell_tanh[[t, j]];
            }
        }
        (h, LstmCache { z, gates, cell, cell_tanh })
    }

    fn backward(&self, c: &LstmCache, dy: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let (t_len, _) = dy.dim();
        let u = self.units;
        let n_in = self.inputs();
        let mut dw = Array2::zeros(self.w.raw_dim());
        let mut db = Array2::zeros(self.b.raw_dim());
        let mut dx = Array2::zeros((t_len, n_in));
        let mut dh_next = Array2::<f64>::zeros((1, u));
        let mut dc_next = Array2::<f64>::zeros((1, u));
        let mut dpre = Array2::zeros((1, 4 * u));
        for t in (0..t_len).rev() {
            for j in 0..u {
                let g = c.gates[[t, j]];
                let i = c.gates[[t, u + j]];
                let f = c.gates[[t, 2 * u + j]];
                let o = c.gates[[t, 3 * u + j]];
                let th = c.cell_tanh[[t, j]];
                let prev_cell = if t > 0 { c.cell[[t - 1, j]] } else { 0.0 };
                let dh = dy[[t, j]] + dh_next[[0, j]];
                let dc = dh * o * (1.0 - th * th) + dc_next[[0, j]];
                dpre[[0, j]] = dc * i * (1.0 - g * g);
                dpre[[0, u + j]] = dc * g * i * (1.0 - i);
                dpre[[0, 2 * u + j]] = dc * prev_cell * f * (1.0 - f);
                dpre[[0, 3 * u + j]] = dh * th * o * (1.0 - o);
                dc_next[[0, j]] = dc * f;
            }
            let zt = c.z.slice(s![t..t + 1, ..]);
            dw += &zt.t().dot(&dpre);
            db += &dpre;
            let dz = dpre.dot(&self.w.t());
            dx.row_mut(t).assign(&dz.slice(s![0, ..n_in]));
            dh_next.assign(&dz.slice(s![.., n_in..]));
        }
        (dx, vec![dw, db])
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }
}
