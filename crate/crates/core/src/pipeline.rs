//! Two-phase CARLE model: the network is trained on windowed feature
//! sequences, then a forest is fitted on its logit vectors. Also holds the
//! feature scaler, seed derivation and the checkpoint container.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{Forest, ForestConfig};
use crate::metrics::MetricReport;
use crate::nn::{self, CarleNet, EpochRecord, NetConfig, Profile, RmsProp, TrainConfig, TrainReport, Variant};

/// Independent seed for a named subsystem (`"init"`, `"shuffle"`,
/// `"bootstrap"`, `"noise"`, ...), so one root seed drives everything.
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// How raw feature rows are standardised before entering the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// One z-score fitted on all training rows.
    Global,
    /// Each recording is first centred on the mean of its first `fraction`
    /// of windows (its healthy baseline), then scaled by the training spread.
    Baseline { fraction: f64 },
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Baseline { fraction: 0.2 }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Normalization::Baseline { fraction } if !(fraction > 0.0 && fraction <= 1.0) => Err(Error::param(
                format!("baseline fraction must lie in (0, 1], got {fraction}"),
            )),
            _ => Ok(()),
        }
    }

    /// Applies the per-recording part of the normalization.
    pub fn recenter(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        match *self {
            Normalization::Global => features.to_owned(),
            Normalization::Baseline { fraction } => {
                let n = ((features.nrows() as f64 * fraction).ceil() as usize).clamp(1, features.nrows().max(1));
                let base = features.slice(s![..n, ..]).mean_axis(Axis(0)).expect("non-empty");
                &features - &base
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    /// Column z-score; constant columns get unit spread.
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::input("cannot fit a scaler on zero rows"));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Ok(Self { mean: mean.to_vec(), std: std.to_vec() })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.width() {
            return Err(Error::shape("feature width", self.width(), x.ncols()));
        }
        let mut out = x.to_owned();
        for (mut col, (m, s)) in out.columns_mut().into_iter().zip(self.mean.iter().zip(&self.std)) {
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

/// Sequences of `seq_len` consecutive rows ending at each row. Rows before
/// the start repeat the first row.
pub fn build_sequences(features: ArrayView2<'_, f64>, seq_len: usize) -> Array3<f64> {
    let (n, w) = features.dim();
    let mut out = Array3::zeros((n, seq_len, w));
    for i in 0..n {
        for t in 0..seq_len {
            let src = (i + t + 1).saturating_sub(seq_len);
            out.slice_mut(s![i, t, ..]).assign(&features.row(src));
        }
    }
    out
}

/// Feature rows of one run-to-failure recording with their RUL labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
}

impl Recording {
    pub fn new(features: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape("labels per feature row", features.nrows(), labels.len()));
        }
        if features.nrows() == 0 {
            return Err(Error::input("recording has no windows"));
        }
        Ok(Self { features, labels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub profile: Profile,
    pub variant: Variant,
    pub seq_len: usize,
    pub cross_block_residual: bool,
    pub normalization: Normalization,
    pub train: TrainConfig,
    pub forest: ForestConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Toy,
            variant: Variant::Carle,
            seq_len: 8,
            cross_block_residual: false,
            normalization: Normalization::default(),
            train: TrainConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn net_config(&self, input_width: usize) -> NetConfig {
        let mut c = NetConfig::from_profile(self.profile, input_width, self.seq_len).with_variant(self.variant);
        c.cross_block_residual = self.cross_block_residual;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::param("seq_len must be positive"));
        }
        self.normalization.validate()?;
        self.train.validate()?;
        self.forest.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarleModel {
    pub variant: Variant,
    pub seq_len: usize,
    pub normalization: Normalization,
    pub clamp_unit: bool,
    pub scaler: FeatureScaler,
    pub net: CarleNet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest: Option<Forest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub training: TrainReport,
    /// Scalar-head fit on the training set after phase 1.
    pub head_train: MetricReport,
    /// Forest fit on the training set after phase 2.
    pub forest_train: Option<MetricReport>,
}

fn stack_sequences(recordings: &[Recording], norm: Normalization, scaler: &FeatureScaler, seq_len: usize) -> Result<(Array3<f64>, Vec<f64>)> {
    let mut parts = Vec::with_capacity(recordings.len());
    let mut labels = Vec::new();
    for r in recordings {
        let x = scaler.transform(norm.recenter(r.features.view()).view())?;
        parts.push(build_sequences(x.view(), seq_len));
        labels.extend_from_slice(&r.labels);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::input(format!("stacking recordings: {e}")))?;
    Ok((x, labels))
}

fn clamp(values: impl IntoIterator<Item = f64>, on: bool) -> Vec<f64> {
    values.into_iter().map(|v| if on { v.clamp(0.0, 1.0) } else { v }).collect()
}

impl CarleModel {
    /// Phase 1 trains the network, phase 2 fits the forest on its logits
    /// (skipped for the forest-free variant).
    pub fn fit(
        train: &[Recording],
        validation: Option<&[Recording]>,
        cfg: &ModelConfig,
        seed: u64,
    ) -> Result<(Self, FitReport)> {
        cfg.validate()?;
        let first = train.first().ok_or_else(|| Error::input("no training recordings"))?;
        let width = first.features.ncols();
        if let Some(bad) = train.iter().chain(validation.unwrap_or(&[])).find(|r| r.features.ncols() != width) {
            return Err(Error::shape("feature width across recordings", width, bad.features.ncols()));
        }
        let centred: Vec<Array2<f64>> = train.iter().map(|r| cfg.normalization.recenter(r.features.view())).collect();
        let views: Vec<_> = centred.iter().map(|c| c.view()).collect();
        let all = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::input(e.to_string()))?;
        let scaler = FeatureScaler::fit(all.view())?;

        let (x, y) = stack_sequences(train, cfg.normalization, &scaler, cfg.seq_len)?;
        let val = validation
            .map(|v| stack_sequences(v, cfg.normalization, &scaler, cfg.seq_len))
            .transpose()?;

        let mut net = CarleNet::new(cfg.net_config(width), derive_seed(seed, "init"))?;
        let train_cfg = TrainConfig { seed: derive_seed(seed, "shuffle"), ..cfg.train.clone() };
        let training = nn::train(
            &mut net,
            x.view(),
            &y,
            val.as_ref().map(|(vx, vy)| (vx.view(), vy.as_slice())),
            &train_cfg,
        )?;
        let out = net.forward(x.view())?;
        let head = clamp(out.predictions.iter().copied(), cfg.forest.clamp_unit);
        let head_train = MetricReport::compute(&y, &head)?;

        let mut forest_train = None;
        let forest = if cfg.variant.use_forest() {
            let f = Forest::fit(out.logits.view(), &y, &cfg.forest, derive_seed(seed, "bootstrap"))?;
            forest_train = Some(MetricReport::compute(&y, &f.predict(out.logits.view())?)?);
            Some(f)
        } else {
            None
        };
        let model = Self {
            variant: cfg.variant,
            seq_len: cfg.seq_len,
            normalization: cfg.normalization,
            clamp_unit: cfg.forest.clamp_unit,
            scaler,
            net,
            forest,
        };
        Ok((model, FitReport { training, head_train, forest_train }))
    }

    pub fn input_width(&self) -> usize {
        self.scaler.width()
    }

    /// Network input sequences for the feature rows of one recording.
    pub fn prepare(&self, features: ArrayView2<'_, f64>) -> Result<Array3<f64>> {
        if features.nrows() == 0 {
            return Err(Error::input("recording has no windows"));
        }
        if features.ncols() != self.input_width() {
            return Err(Error::shape("feature width", self.input_width(), features.ncols()));
        }
        let x = self.scaler.transform(self.normalization.recenter(features).view())?;
        Ok(build_sequences(x.view(), self.seq_len))
    }

    pub fn logits(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.net.logits(self.prepare(features)?.view())
    }

    /// Forest prediction on logit rows, or the scalar head when there is no
    /// forest.
    pub fn predict_from_logits(&self, logits: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        match &self.forest {
            Some(f) => f.predict(logits),
            None => {
                let head = self.net.head();
                let p = logits.dot(&head.w) + &head.b;
                Ok(clamp(p.column(0).iter().copied(), self.clamp_unit))
            }
        }
    }

    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.predict_from_logits(self.logits(features)?.view())
    }
}

pub const CHECKPOINT_FORMAT: &str = "carle-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container for a trained model and its training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub profile: Profile,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub model: CarleModel,
    pub optimizer: RmsProp,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn new(model: CarleModel, training: &TrainReport, config_hash: Option<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            profile: model.net.config().profile,
            variant: model.variant,
            config_hash,
            model,
            optimizer: training.optimizer.clone(),
            history: training.history.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => {
                return Err(Error::input(format!(
                    "{} is not a checkpoint (format {other:?})",
                    path.display()
                )))
            }
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::input(format!(
                "unsupported checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"
            )));
        }
        Ok(serde_json::from_value(value)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn recording(n: usize, shift: f64, seed: u64) -> Recording {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / (n - 1) as f64).collect();
        let features = Array2::from_shape_fn((n, 7), |(i, j)| {
            let life = 1.0 - labels[i];
            shift + (j as f64 + 1.0) * life * life + 0.02 * rng.random_range(-1.0..1.0)
        });
        Recording::new(features, labels).unwrap()
    }

    fn quick_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            seq_len: 4,
            train: TrainConfig { max_epochs: 40, batch_size: 8, learning_rate: 3e-3, ..Default::default() },
            forest: ForestConfig { n_trees: 20, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn derived_seeds_differ_per_stream_and_root() {
        let a = derive_seed(7, "init");
        assert_eq!(a, derive_seed(7, "init"));
        assert_ne!(a, derive_seed(7, "shuffle"));
        assert_ne!(a, derive_seed(8, "init"));
    }

    #[test]
    fn sequences_pad_with_the_first_row() {
        let f = array![[1.0], [2.0], [3.0]];
        let s = build_sequences(f.view(), 3);
        assert_eq!(s.slice(s![0, .., 0]).to_vec(), vec![1.0, 1.0, 1.0]);
        assert_eq!(s.slice(s![1, .., 0]).to_vec(), vec![1.0, 1.0, 2.0]);
        assert_eq!(s.slice(s![2, .., 0]).to_vec(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn scaler_standardises_columns() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let sc = FeatureScaler::fit(x.view()).unwrap();
        let z = sc.transform(x.view()).unwrap();
        assert_eq!(z, array![[-1.0, 0.0], [1.0, 0.0]]);
        assert!(sc.transform(array![[1.0]].view()).is_err());
    }

    #[test]
    fn baseline_recentring_removes_offsets() {
        let norm = Normalization::Baseline { fraction: 0.5 };
        let a = recording(10, 0.0, 1);
        let b = Recording { features: &a.features + 3.0, labels: a.labels.clone() };
        let ca = norm.recenter(a.features.view());
        let cb = norm.recenter(b.features.view());
        assert!(ca.iter().zip(&cb).all(|(u, v)| (u - v).abs() < 1e-12));
    }

    #[test]
    fn forest_free_variant_has_no_forest() {
        let data = [recording(30, 0.0, 2)];
        let (carl, report) = CarleModel::fit(&data, None, &quick_config(Variant::Carl), 1).unwrap();
        assert!(carl.forest.is_none());
        assert!(report.forest_train.is_none());
        let (carle, report) = CarleModel::fit(&data, None, &quick_config(Variant::Carle), 1).unwrap();
        assert_eq!(carle.forest.as_ref().unwrap().trees().len(), 20);
        let f = report.forest_train.unwrap();
        assert!(f.rmse <= report.head_train.rmse, "{f:?} vs {:?}", report.head_train);
    }

    #[test]
    fn predictions_are_deterministic_and_in_range() {
        let data = [recording(30, 0.0, 3), recording(30, 0.1, 4)];
        let cfg = quick_config(Variant::Carle);
        let (a, _) = CarleModel::fit(&data, None, &cfg, 9).unwrap();
        let (b, _) = CarleModel::fit(&data, None, &cfg, 9).unwrap();
        assert_eq!(a, b);
        let p = a.predict(data[0].features.view()).unwrap();
        assert_eq!(p.len(), 30);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = [recording(20, 0.0, 5)];
        for variant in [Variant::Carle, Variant::Carl] {
            let (model, report) = CarleModel::fit(&data, None, &quick_config(variant), 3).unwrap();
            let ck = Checkpoint::new(model, &report.training, Some("abc".into()));
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.json");
            ck.save(&path).unwrap();
            let raw: serde_json::Value = serde_json::from_reader(File::open(&path).unwrap()).unwrap();
            assert_eq!(raw["model"].get("forest").is_some(), variant.use_forest());
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back, ck);
            let x = data[0].features.view();
            assert_eq!(back.model.predict(x).unwrap(), ck.model.predict(x).unwrap());
        }
    }

    #[test]
    fn checkpoint_rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        std::fs::write(&path, r#"{"format":"other","version":1}"#).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Input(_))));
        std::fs::write(&path, r#"{"format":"carle-checkpoint","version":99}"#).unwrap();
        assert!(Checkpoint::load(&path).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn mismatched_widths_are_rejected() {
        let a = recording(10, 0.0, 1);
        let b = Recording::new(Array2::zeros((10, 14)), a.labels.clone()).unwrap();
        assert!(matches!(
            CarleModel::fit(&[a, b], None, &quick_config(Variant::Carle), 1),
            Err(Error::Shape { .. })
        ));
        assert!(Recording::new(Array2::zeros((3, 7)), vec![1.0]).is_err());
    }
}
