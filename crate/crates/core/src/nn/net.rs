//! The four-block network: residual CNN + attention, residual LSTM +
//! attention, a dense block producing the logit vector, and a scalar head
//! used only while training the network.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    relu, AttentionCache, AttentionUnit, ConvUnit, ConvUnitCache, Dense, Layer, Lstm, LstmCache, MaxPool1d,
    MultiHeadAttention, PoolCache,
};
use crate::error::{Error, Result};

/// Named hyperparameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Xjtu,
    Pronostia,
    Toy,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Xjtu => "xjtu",
            Profile::Pronostia => "pronostia",
            Profile::Toy => "toy",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xjtu" => Ok(Profile::Xjtu),
            "pronostia" => Ok(Profile::Pronostia),
            "toy" => Ok(Profile::Toy),
            other => Err(Error::param(format!("unknown profile {other:?} (xjtu, pronostia, toy)"))),
        }
    }
}

/// Ablation variants. CARL drops the forest, CRLE the attention layers,
/// CALE the residual connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Carle,
    Carl,
    Crle,
    Cale,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Carle, Variant::Carl, Variant::Crle, Variant::Cale];

    pub fn use_mha(self) -> bool {
        self != Variant::Crle
    }

    pub fn use_residual(self) -> bool {
        self != Variant::Cale
    }

    pub fn use_forest(self) -> bool {
        self != Variant::Carl
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Carle => "CARLE",
            Variant::Carl => "CARL",
            Variant::Crle => "CRLE",
            Variant::Cale => "CALE",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "carle" => Ok(Variant::Carle),
            "carl" => Ok(Variant::Carl),
            "crle" => Ok(Variant::Crle),
            "cale" => Ok(Variant::Cale),
            other => Err(Error::param(format!("unknown variant {other:?} (carle, carl, crle, cale)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub profile: Profile,
    /// Features per time step, `7 * sensors`.
    pub input_width: usize,
    /// Windows per input sequence.
    pub seq_len: usize,
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pool_size: usize,
    pub heads: usize,
    pub key_dim: usize,
    pub lstm_units: Vec<usize>,
    pub dense_units: Vec<usize>,
    pub l2_lambda: f64,
    pub use_mha: bool,
    pub use_residual: bool,
    /// Extra skip from the CNN block output into the LSTM block output.
    pub cross_block_residual: bool,
}

impl NetConfig {
    pub fn from_profile(profile: Profile, input_width: usize, seq_len: usize) -> Self {
        let (filters, heads, key_dim, lstm_units, dense_units) = match profile {
            Profile::Xjtu => (vec![256, 256, 128, 64], 8, 64, vec![64, 64], vec![128, 64, 32]),
            Profile::Pronostia => (vec![64, 64, 32, 32], 8, 64, vec![64, 64], vec![64, 48, 32]),
            Profile::Toy => (vec![16, 16, 8, 8], 2, 8, vec![16, 16], vec![32, 16, 8]),
        };
        Self {
            profile,
            input_width,
            seq_len,
            filters,
            kernels: vec![3, 3, 2, 2],
            pool_size: 1,
            heads,
            key_dim,
            lstm_units,
            dense_units,
            l2_lambda: 0.005,
            use_mha: true,
            use_residual: true,
            cross_block_residual: false,
        }
    }

    /// Smallest configuration exercising every path, for gradient checks.
    pub fn tiny(input_width: usize, seq_len: usize) -> Self {
        Self {
            filters: vec![2, 2, 2, 2],
            kernels: vec![3, 3, 2, 2],
            heads: 2,
            key_dim: 2,
            lstm_units: vec![4, 4],
            dense_units: vec![5, 3],
            ..Self::from_profile(Profile::Toy, input_width, seq_len)
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.use_mha = variant.use_mha();
        self.use_residual = variant.use_residual();
        self
    }

    pub fn logit_width(&self) -> usize {
        *self.dense_units.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: &[usize]| {
            if v.is_empty() || v.contains(&0) {
                Err(Error::param(format!("{name} must be a non-empty list of positive counts")))
            } else {
                Ok(())
            }
        };
        positive("filters", &self.filters)?;
        positive("kernels", &self.kernels)?;
        positive("lstm_units", &self.lstm_units)?;
        positive("dense_units", &self.dense_units)?;
        if self.filters.len() != self.kernels.len() {
            return Err(Error::param(format!(
                "{} filter counts but {} kernel sizes",
                self.filters.len(),
                self.kernels.len()
            )));
        }
        if self.input_width == 0 || self.seq_len == 0 {
            return Err(Error::param("input_width and seq_len must be positive"));
        }
        if self.pool_size == 0 || self.seq_len / self.pool_size == 0 {
            return Err(Error::param(format!(
                "pool size {} must lie in 1..={}",
                self.pool_size, self.seq_len
            )));
        }
        if self.use_mha && (self.heads == 0 || self.key_dim == 0) {
            return Err(Error::param("attention heads and key_dim must be positive"));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::param(format!("l2_lambda must be non-negative, got {}", self.l2_lambda)));
        }
        Ok(())
    }
}

/// Logit rows and scalar predictions for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub logits: Array2<f64>,
    pub predictions: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarleNet {
    config: NetConfig,
    conv: Vec<ConvUnit>,
    pool: MaxPool1d,
    cnn_attention: Option<AttentionUnit>,
    lstm: Vec<Lstm>,
    lstm_projection: Option<Dense>,
    cross_projection: Option<Dense>,
    rnn_attention: Option<AttentionUnit>,
    dense: Vec<Dense>,
    head: Dense,
}

struct SampleCache {
    conv: Vec<ConvUnitCache>,
    pool: PoolCache,
    cnn_attention: Option<AttentionCache>,
    lstm: Vec<LstmCache>,
    lstm_projection: Option<Array2<f64>>,
    cross_projection: Option<Array2<f64>>,
    rnn_attention: Option<AttentionCache>,
    rnn_shape: (usize, usize),
    dense: Vec<(Array2<f64>, Array2<f64>)>,
    head: Array2<f64>,
}

impl CarleNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let residual = config.use_residual;
        let mut width = config.input_width;
        let mut conv = Vec::with_capacity(config.filters.len());
        for (&f, &k) in config.filters.iter().zip(&config.kernels) {
            conv.push(ConvUnit::new(width, f, k, config.l2_lambda, residual, &mut rng));
            width = f;
        }
        let cnn_width = width;
        let attention = |dim: usize, rng: &mut ChaCha8Rng| {
            config.use_mha.then(|| AttentionUnit {
                mha: MultiHeadAttention::new(dim, config.heads, config.key_dim, rng),
                residual,
            })
        };
        let cnn_attention = attention(cnn_width, &mut rng);
        let mut lstm = Vec::with_capacity(config.lstm_units.len());
        for &u in &config.lstm_units {
            lstm.push(Lstm::new(width, u, &mut rng));
            width = u;
        }
        let skip_source = if config.lstm_units.len() >= 2 { config.lstm_units[0] } else { cnn_width };
        let projection = |from: usize, rng: &mut ChaCha8Rng| (from != width).then(|| Dense::new(from, width, rng));
        let lstm_projection = if residual { projection(skip_source, &mut rng) } else { None };
        let cross_projection = if residual && config.cross_block_residual {
            projection(cnn_width, &mut rng)
        } else {
            None
        };
        let rnn_attention = attention(width, &mut rng);
        let mut flat = (config.seq_len / config.pool_size) * width;
        let mut dense = Vec::with_capacity(config.dense_units.len());
        for &u in &config.dense_units {
            dense.push(Dense::new(flat, u, &mut rng));
            flat = u;
        }
        let head = Dense::new(flat, 1, &mut rng);
        Ok(Self {
            pool: MaxPool1d { size: config.pool_size },
            config,
            conv,
            cnn_attention,
            lstm,
            lstm_projection,
            cross_projection,
            rnn_attention,
            dense,
            head,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Dense {
        &mut self.head
    }

    pub fn conv_units_mut(&mut self) -> &mut [ConvUnit] {
        &mut self.conv
    }

    fn segments(&self) -> Vec<Vec<&Array2<f64>>> {
        let mut out: Vec<Vec<&Array2<f64>>> = self.conv.iter().map(|c| c.params()).collect();
        out.push(self.cnn_attention.iter().flat_map(|a| a.params()).collect());
        out.extend(self.lstm.iter().map(|l| l.params()));
        out.push(self.lstm_projection.iter().flat_map(|p| p.params()).collect());
        out.push(self.cross_projection.iter().flat_map(|p| p.params()).collect());
        out.push(self.rnn_attention.iter().flat_map(|a| a.params()).collect());
        out.extend(self.dense.iter().map(|d| d.params()));
        out.push(self.head.params());
        out
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.segments().into_iter().flatten().collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        for c in &mut self.conv {
            out.extend(c.params_mut());
        }
        if let Some(a) = &mut self.cnn_attention {
            out.extend(a.params_mut());
        }
        for l in &mut self.lstm {
            out.extend(l.params_mut());
        }
        if let Some(p) = &mut self.lstm_projection {
            out.extend(p.params_mut());
        }
        if let Some(p) = &mut self.cross_projection {
            out.extend(p.params_mut());
        }
        if let Some(a) = &mut self.rnn_attention {
            out.extend(a.params_mut());
        }
        for d in &mut self.dense {
            out.extend(d.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn attention_param_count(&self) -> usize {
        [&self.cnn_attention, &self.rnn_attention]
            .iter()
            .filter_map(|a| a.as_ref())
            .map(|a| a.param_count())
            .sum()
    }

    /// Parameters that exist only because of residual connections.
    pub fn residual_param_count(&self) -> usize {
        let conv: usize = self.conv.iter().map(|c| c.projection_param_count()).sum();
        conv + [&self.lstm_projection, &self.cross_projection]
            .iter()
            .filter_map(|p| p.as_ref())
            .map(|p| p.param_count())
            .sum::<usize>()
    }

    pub fn weights(&self) -> Vec<Array2<f64>> {
        self.params().into_iter().cloned().collect()
    }

    pub fn set_weights(&mut self, weights: &[Array2<f64>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != weights.len() {
            return Err(Error::shape("weight tensor count", params.len(), weights.len()));
        }
        for (i, (p, w)) in params.iter_mut().zip(weights).enumerate() {
            if p.dim() != w.dim() {
                return Err(Error::shape(format!("weight tensor {i}"), format!("{:?}", p.dim()), format!("{:?}", w.dim())));
            }
            p.assign(w);
        }
        Ok(())
    }

    /// Total `(λ/2)||W||²` over the convolution kernels.
    pub fn l2_penalty(&self) -> f64 {
        self.conv.iter().map(|c| c.conv.l2_penalty()).sum()
    }

    fn check_input(&self, x: &ArrayView3<'_, f64>) -> Result<()> {
        let (_, t, f) = x.dim();
        if t != self.config.seq_len || f != self.config.input_width {
            return Err(Error::shape(
                "network input [batch, time, features]",
                format!("[_, {}, {}]", self.config.seq_len, self.config.input_width),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    fn forward_sample(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, f64, SampleCache) {
        let mut h = x.to_owned();
        let mut conv = Vec::with_capacity(self.conv.len());
        for unit in &self.conv {
            let (y, c) = unit.forward(h.view());
            conv.push(c);
            h = y;
        }
        let (pooled, pool) = self.pool.forward(h.view());
        h = pooled;
        let cnn_attention = self.cnn_attention.as_ref().map(|a| {
            let (y, c) = a.forward(h.view());
            h = y;
            c
        });
        let cnn_out = h.clone();
        let mut lstm = Vec::with_capacity(self.lstm.len());
        let mut skip_source = cnn_out.clone();
        for (i, layer) in self.lstm.iter().enumerate() {
            let (y, c) = layer.forward(h.view());
            lstm.push(c);
            h = y;
            if i == 0 && self.lstm.len() >= 2 {
                skip_source = h.clone();
            }
        }
        let mut lstm_projection = None;
        let mut cross_projection = None;
        if self.config.use_residual {
            match &self.lstm_projection {
                Some(p) => {
                    let (y, c) = p.forward(skip_source.view());
                    h += &y;
                    lstm_projection = Some(c);
                }
                None => h += &skip_source,
            }
            if self.config.cross_block_residual {
                match &self.cross_projection {
                    Some(p) => {
                        let (y, c) = p.forward(cnn_out.view());
                        h += &y;
                        cross_projection = Some(c);
                    }
                    None => h += &cnn_out,
                }
            }
        }
        let rnn_attention = self.rnn_attention.as_ref().map(|a| {
            let (y, c) = a.forward(h.view());
            h = y;
            c
        });
        let rnn_shape = h.dim();
        let mut z = h.into_shape_with_order((1, rnn_shape.0 * rnn_shape.1)).expect("contiguous");
        let mut dense = Vec::with_capacity(self.dense.len());
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate() {
            let (pre, c) = layer.forward(z.view());
            z = if i < last { relu(&pre) } else { pre.clone() };
            dense.push((c, pre));
        }
        let (p, head) = self.head.forward(z.view());
        let cache = SampleCache {
            conv,
            pool,
            cnn_attention,
            lstm,
            lstm_projection,
            cross_projection,
            rnn_attention,
            rnn_shape,
            dense,
            head,
        };
        (z, p[[0, 0]], cache)
    }

    /// Parameter gradients for one sample given `d loss / d prediction`, in
    /// `params()` order.
    fn backward_sample(&self, c: &SampleCache, dpred: f64) -> Vec<Array2<f64>> {
        let dp = Array2::from_elem((1, 1), dpred);
        let (mut dz, g_head) = self.head.backward(&c.head, dp.view());
        let mut g_dense = vec![Vec::new(); self.dense.len()];
        let last = self.dense.len() - 1;
        for i in (0..self.dense.len()).rev() {
            let (input, pre) = &c.dense[i];
            if i < last {
                dz.zip_mut_with(pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let (dx, g) = self.dense[i].backward(input, dz.view());
            g_dense[i] = g;
            dz = dx;
        }
        let mut dh = dz.into_shape_with_order(c.rnn_shape).expect("contiguous");
        let mut g_rnn_att = Vec::new();
        if let (Some(a), Some(ac)) = (&self.rnn_attention, &c.rnn_attention) {
            let (dx, g) = a.backward(ac, dh.view());
            g_rnn_att = g;
            dh = dx;
        }
        let mut g_lstm_proj = Vec::new();
        let mut g_cross = Vec::new();
        let mut d_skip_source = None;
        let mut d_cnn_out = None;
        if self.config.use_residual {
            d_skip_source = Some(match (&self.lstm_projection, &c.lstm_projection) {
                (Some(p), Some(pc)) => {
                    let (dx, g) = p.backward(pc, dh.view());
                    g_lstm_proj = g;
                    dx
                }
                _ => dh.clone(),
            });
            if self.config.cross_block_residual {
                d_cnn_out = Some(match (&self.cross_projection, &c.cross_projection) {
                    (Some(p), Some(pc)) => {
                        let (dx, g) = p.backward(pc, dh.view());
                        g_cross = g;
                        dx
                    }
                    _ => dh.clone(),
                });
            }
        }
        let deep = self.lstm.len() >= 2;
        let mut g_lstm = vec![Vec::new(); self.lstm.len()];
        for i in (0..self.lstm.len()).rev() {
            let (dx, g) = self.lstm[i].backward(&c.lstm[i], dh.view());
            g_lstm[i] = g;
            dh = dx;
            if deep && i == 1 {
                // dh is now the gradient w.r.t. the first layer's output.
                if let Some(ds) = d_skip_source.take() {
                    dh += &ds;
                }
            }
        }
        if let Some(ds) = d_skip_source {
            dh += &ds;
        }
        if let Some(dc) = d_cnn_out {
            dh += &dc;
        }
        let mut g_cnn_att = Vec::new();
        if let (Some(a), Some(ac)) = (&self.cnn_attention, &c.cnn_attention) {
            let (dx, g) = a.backward(ac, dh.view());
            g_cnn_att = g;
            dh = dx;
        }
        let (dx, _) = self.pool.backward(&c.pool, dh.view());
        dh = dx;
        let mut g_conv = vec![Vec::new(); self.conv.len()];
        for i in (0..self.conv.len()).rev() {
            let (dx, g) = self.conv[i].backward(&c.conv[i], dh.view());
            g_conv[i] = g;
            dh = dx;
        }

        let mut grads = Vec::new();
        grads.extend(g_conv.into_iter().flatten());
        grads.extend(g_cnn_att);
        grads.extend(g_lstm.into_iter().flatten());
        grads.extend(g_lstm_proj);
        grads.extend(g_cross);
        grads.extend(g_rnn_att);
        grads.extend(g_dense.into_iter().flatten());
        grads.extend(g_head);
        grads
    }

    pub fn forward(&self, x: ArrayView3<'_, f64>) -> Result<NetOutput> {
        self.check_input(&x)?;
        let b = x.len_of(Axis(0));
        let mut logits = Array2::zeros((b, self.config.logit_width()));
        let mut predictions = Array1::zeros(b);
        for (i, sample) in x.outer_iter().enumerate() {
            let (z, p, _) = self.forward_sample(sample);
            logits.row_mut(i).assign(&z.row(0));
            predictions[i] = p;
        }
        Ok(NetOutput { logits, predictions })
    }

    /// Logit vectors, one row per input sequence.
    pub fn logits(&self, x: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.logits)
    }

    pub fn predict(&self, x: ArrayView3<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x)?.predictions)
    }

    /// `Σ ½(ŷ - y)² + L2`.
    pub fn loss(&self, x: ArrayView3<'_, f64>, y: &[f64]) -> Result<f64> {
        let p = self.predict(x)?;
        if p.len() != y.len() {
            return Err(Error::shape("targets", p.len(), y.len()));
        }
        let data: f64 = p.iter().zip(y).map(|(p, y)| 0.5 * (p - y).powi(2)).sum();
        Ok(data + self.l2_penalty())
    }

    /// Loss `data_scale * Σ ½(ŷ - y)² + L2` and its gradient for every
    /// parameter. The data term is a plain sum over the batch.
    pub fn loss_and_grads(&self, x: ArrayView3<'_, f64>, y: &[f64], data_scale: f64) -> Result<(f64, Vec<Array2<f64>>)> {
        self.check_input(&x)?;
        if x.len_of(Axis(0)) != y.len() {
            return Err(Error::shape("targets", x.len_of(Axis(0)), y.len()));
        }
        let mut grads: Vec<Array2<f64>> = self.params().iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let mut data = 0.0;
        for (sample, &target) in x.outer_iter().zip(y) {
            let (_, p, cache) = self.forward_sample(sample);
            let err = p - target;
            data += 0.5 * err * err;
            for (acc, g) in grads.iter_mut().zip(self.backward_sample(&cache, data_scale * err)) {
                *acc += &g;
            }
        }
        let mut offset = 0;
        for unit in &self.conv {
            grads[offset].scaled_add(unit.conv.l2_lambda, &unit.conv.w);
            offset += unit.params().len();
        }
        Ok((data_scale * data + self.l2_penalty(), grads))
    }
}
