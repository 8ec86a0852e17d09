use std::io::Write;
use std::path::Path;

use carle_core::adapt::{coral_fit, pca_fit, CoralTransform, PcaModel};
use carle_core::labels::write_labels_csv;
use carle_core::pipeline::{derive_seed, FitReport};
use carle_core::signal::{inject_noise, snr_sweep, synth_run_to_failure};
use carle_core::{CarleModel, Checkpoint, MetricReport, NoiseKind, Variant};
use log::info;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde_json::{json, Value};

use crate::args::{CrossDomainArgs, EvalArgs, ExtractArgs, PredictArgs, SnrArgs, SynthArgs, TrainArgs};
use crate::config::ExperimentConfig;
use crate::data::{self, Dataset};
use crate::error::{CliError, Result};
use crate::output::{create, hash_comment, write_history, write_json, write_predictions, write_with};

/// Predictions and metrics for one recording.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub name: String,
    pub window_index: Vec<usize>,
    pub y_true: Vec<f64>,
    pub y_pred: Vec<f64>,
    pub report: MetricReport,
}

impl Evaluation {
    fn new(set: &Dataset, y_pred: Vec<f64>) -> Result<Self> {
        Ok(Self {
            name: set.name.clone(),
            window_index: set.window_index.clone(),
            y_true: set.labels().to_vec(),
            report: MetricReport::compute(set.labels(), &y_pred)?,
            y_pred,
        })
    }
}

/// Metrics over every window of every recording.
pub fn pooled(evals: &[Evaluation]) -> Result<MetricReport> {
    let y: Vec<f64> = evals.iter().flat_map(|e| e.y_true.iter().copied()).collect();
    let p: Vec<f64> = evals.iter().flat_map(|e| e.y_pred.iter().copied()).collect();
    Ok(MetricReport::compute(&y, &p)?)
}

pub fn evaluate(model: &CarleModel, sets: &[Dataset]) -> Result<Vec<Evaluation>> {
    sets.iter()
        .map(|s| Evaluation::new(s, model.predict(s.recording.features.view())?))
        .collect()
}

fn report_json(r: Option<&MetricReport>) -> Value {
    r.map_or(Value::Null, MetricReport::to_json)
}

fn per_recording(evals: &[Evaluation]) -> Value {
    Value::Array(
        evals
            .iter()
            .map(|e| json!({ "name": e.name, "report": e.report.to_json() }))
            .collect(),
    )
}

fn write_prediction_files(dir: &Path, split: &str, hash: &str, evals: &[Evaluation]) -> Result<()> {
    for (k, e) in evals.iter().enumerate() {
        let path = dir.join("predictions").join(format!("{split}_{k}_{}.csv", e.name));
        write_predictions(&path, hash, &e.window_index, &e.y_true, &e.y_pred)?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        carle_core::Error::Io(io) => CliError::io(path, io),
        other => CliError::usage(format!("{}: {other}", path.display())),
    })
}

fn resolved(cfg: ExperimentConfig) -> Result<(ExperimentConfig, String)> {
    cfg.validate()?;
    let hash = cfg.hash();
    info!("config hash {hash}");
    Ok((cfg, hash))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(d) = args.duration {
        cfg.synth.duration_s = d;
    }
    if let Some(c) = args.channels {
        cfg.synth.channels = c;
    }
    let (cfg, hash) = resolved(cfg)?;
    let (signal, meta) = synth_run_to_failure(&cfg.synth, cfg.seed)?;
    let mut w = create(&args.out)?;
    writeln!(w, "# {}", hash_comment(&hash)).map_err(|e| CliError::io(&args.out, e))?;
    signal.write_csv(&mut w)?;
    w.flush().map_err(|e| CliError::io(&args.out, e))?;
    let mut meta = serde_json::to_value(&meta).expect("metadata serializes");
    meta["config_hash"] = json!(hash);
    write_json(&args.out.with_extension("meta.json"), &meta)?;
    println!(
        "wrote {} ({} samples x {} channels at {} Hz)",
        args.out.display(),
        signal.len(),
        signal.channel_count(),
        signal.sample_rate_hz()
    );
    Ok(())
}

pub fn extract(args: &ExtractArgs) -> Result<()> {
    let (cfg, hash) = resolved(args.common.resolve()?)?;
    let signal = data::read_signal(&args.input, cfg.data.sample_rate_hz)?;
    let (fm, total) = data::featurize(&signal, &cfg)?;
    let comment = hash_comment(&hash);
    fm.write_csv(create(&args.out)?, Some(&comment))?;
    if let Some(p) = &args.labels_out {
        let y = data::labels_for(&fm.window_index, total, None, &cfg)?;
        write_labels_csv(create(p)?, &y, Some(&comment))?;
    }
    println!("wrote {} ({} windows, {} features)", args.out.display(), fm.rows(), fm.width());
    Ok(())
}

/// Everything `train` produces for one configuration.
pub struct TrainOutcome {
    pub model: CarleModel,
    pub fit: FitReport,
    pub train: Vec<Evaluation>,
    pub validation: Vec<Evaluation>,
    pub test: Vec<Evaluation>,
}

pub struct Splits {
    pub train: Vec<Dataset>,
    pub validation: Vec<Dataset>,
    pub test: Vec<Dataset>,
}

impl Splits {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        if cfg.data.train.is_empty() {
            return Err(CliError::usage("no training data: pass --train or set data.train"));
        }
        Ok(Self {
            train: data::load_all(&cfg.data.train, cfg)?,
            validation: data::load_all(&cfg.data.validation, cfg)?,
            test: data::load_all(&cfg.data.test, cfg)?,
        })
    }
}

pub fn fit_and_evaluate(cfg: &ExperimentConfig, splits: &Splits) -> Result<TrainOutcome> {
    let val = data::recordings(&splits.validation);
    let (model, fit) = CarleModel::fit(
        &data::recordings(&splits.train),
        (!val.is_empty()).then_some(val.as_slice()),
        &cfg.model,
        cfg.seed,
    )?;
    Ok(TrainOutcome {
        train: evaluate(&model, &splits.train)?,
        validation: evaluate(&model, &splits.validation)?,
        test: evaluate(&model, &splits.test)?,
        model,
        fit,
    })
}

pub fn metrics_json(cfg: &ExperimentConfig, hash: &str, o: &TrainOutcome) -> Result<Value> {
    let opt_pooled = |e: &[Evaluation]| -> Result<Value> {
        Ok(if e.is_empty() { Value::Null } else { pooled(e)?.to_json() })
    };
    let t = &o.fit.training;
    Ok(json!({
        "config_hash": hash,
        "profile": cfg.model.profile.to_string(),
        "variant": cfg.model.variant.name(),
        "seed": cfg.seed,
        "param_count": o.model.net.param_count(),
        "epochs_run": t.history.len(),
        "best_epoch": t.best_epoch,
        "best_loss": t.best_loss,
        "stopped_early": t.stopped_early,
        "head_train": o.fit.head_train.to_json(),
        "forest_train": report_json(o.fit.forest_train.as_ref()),
        "train": opt_pooled(&o.train)?,
        "validation": opt_pooled(&o.validation)?,
        "test": opt_pooled(&o.test)?,
        "recordings": {
            "train": per_recording(&o.train),
            "validation": per_recording(&o.validation),
            "test": per_recording(&o.test),
        },
    }))
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let (cfg, hash) = resolved(args.resolve()?)?;
    let splits = Splits::load(&cfg)?;
    info!("training {} on {} recordings", cfg.model.variant.name(), splits.train.len());
    let o = fit_and_evaluate(&cfg, &splits)?;
    let dir = &args.out;

    write_json(&dir.join("metrics.json"), &metrics_json(&cfg, &hash, &o)?)?;
    write_history(&dir.join("history.csv"), &hash, &o.fit.training.history)?;
    for (split, evals) in [("train", &o.train), ("validation", &o.validation), ("test", &o.test)] {
        write_prediction_files(dir, split, &hash, evals)?;
    }
    let forest_path = dir.join("forest.json");
    match &o.model.forest {
        Some(f) => write_json(&forest_path, &json!({ "config_hash": hash, "forest": f }))?,
        None => {
            if forest_path.exists() {
                std::fs::remove_file(&forest_path).map_err(|e| CliError::io(&forest_path, e))?;
            }
        }
    }
    let ckpt = Checkpoint::new(o.model, &o.fit.training, Some(hash.clone()));
    ckpt.save(&dir.join("checkpoint.json"))?;

    let headline = o.test.is_empty().then_some(&o.train).unwrap_or(&o.test);
    let r = pooled(headline)?;
    println!(
        "{} {}: mae {:.4} rmse {:.4} score {:.4} ({} windows); artifacts in {}",
        cfg.model.variant.name(),
        if o.test.is_empty() { "train" } else { "test" },
        r.mae,
        r.rmse,
        r.score,
        r.n,
        dir.display()
    );
    Ok(())
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let (cfg, hash) = resolved(args.common.resolve()?)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let sets = data::load_all(&args.inputs()?, &cfg)?;
    let evals = evaluate(&ckpt.model, &sets)?;
    write_prediction_files(&args.out, "input", &hash, &evals)?;
    let all = pooled(&evals)?;
    write_json(
        &args.out.join("metrics.json"),
        &json!({
            "config_hash": hash,
            "checkpoint_config_hash": ckpt.config_hash,
            "variant": ckpt.variant.name(),
            "all": all.to_json(),
            "recordings": per_recording(&evals),
        }),
    )?;
    println!("mae {:.4} rmse {:.4} score {:.4} ({} windows)", all.mae, all.rmse, all.score, all.n);
    Ok(())
}

pub fn ablate(args: &TrainArgs) -> Result<()> {
    let (cfg, hash) = resolved(args.resolve()?)?;
    let splits = Splits::load(&cfg)?;
    let held_out = !splits.test.is_empty();
    let mut rows = Vec::new();
    let mut variants = Vec::new();
    for v in Variant::ALL {
        let mut c = cfg.clone();
        c.model.variant = v;
        info!("ablation: training {}", v.name());
        let o = fit_and_evaluate(&c, &splits)?;
        let evals = if held_out { &o.test } else { &o.train };
        for e in evals {
            rows.push((e.name.clone(), v, e.report));
        }
        rows.push(("all".to_string(), v, pooled(evals)?));
        let net = &o.model.net;
        variants.push(json!({
            "variant": v.name(),
            "param_count": net.param_count(),
            "attention_param_count": net.attention_param_count(),
            "residual_param_count": net.residual_param_count(),
            "has_forest": o.model.forest.is_some(),
        }));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));

    let csv_path = args.out.join("ablation.csv");
    write_with(&csv_path, |w| {
        writeln!(w, "# {}", hash_comment(&hash))?;
        writeln!(w, "condition,variant,mae,rmse,score")?;
        for (cond, v, r) in &rows {
            writeln!(w, "{cond},{},{},{},{}", v.name(), r.mae, r.rmse, r.score)?;
        }
        Ok(())
    })?;
    let table: Vec<Value> = rows
        .iter()
        .map(|(cond, v, r)| json!({ "condition": cond, "variant": v.name(), "report": r.to_json() }))
        .collect();
    write_json(
        &args.out.join("ablation.json"),
        &json!({
            "config_hash": hash,
            "evaluated_on": if held_out { "test" } else { "train" },
            "variants": variants,
            "table": table,
        }),
    )?;
    println!("{:<16} {:<6} {:>8} {:>8} {:>10}", "condition", "model", "MAE", "RMSE", "Score");
    for (cond, v, r) in &rows {
        println!("{cond:<16} {:<6} {:>8.4} {:>8.4} {:>10.4}", v.name(), r.mae, r.rmse, r.score);
    }
    Ok(())
}

fn noise_name(kind: &NoiseKind) -> &'static str {
    match kind {
        NoiseKind::Gaussian { .. } => "gaussian",
        NoiseKind::SaltPepper { .. } => "salt_pepper",
    }
}

pub fn noise(args: &EvalArgs) -> Result<()> {
    let (cfg, hash) = resolved(args.common.resolve()?)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let sources = args.inputs()?;
    let mut signals = Vec::with_capacity(sources.len());
    for s in &sources {
        if data::is_feature_csv(&s.path)? {
            return Err(CliError::usage(format!(
                "{}: noise injection needs a raw-signal CSV, not features",
                s.path.display()
            )));
        }
        signals.push(data::read_signal(&s.path, cfg.data.sample_rate_hz)?);
    }
    let noise_root = derive_seed(cfg.seed, "noise");
    let conditions = std::iter::once(None).chain(cfg.noise.conditions.iter().map(Some));

    let mut entries = Vec::new();
    let mut clean_mae = None;
    println!("{:<12} {:>8} {:>8} {:>10}", "condition", "MAE", "RMSE", "Score");
    for (c, kind) in conditions.enumerate() {
        let mut evals = Vec::with_capacity(signals.len());
        for (k, (src, signal)) in sources.iter().zip(&signals).enumerate() {
            let input = match kind {
                Some(kind) => inject_noise(signal, *kind, derive_seed(noise_root, &format!("{c}/{k}")))?,
                None => signal.clone(),
            };
            let (fm, total) = data::featurize(&input, &cfg)?;
            let set = data::from_features(src.name(), fm, total, src.labels.as_deref(), &cfg)?;
            evals.push(Evaluation::new(&set, ckpt.model.predict(set.recording.features.view())?)?);
        }
        let r = pooled(&evals)?;
        let clean = *clean_mae.get_or_insert(r.mae);
        let name = kind.map_or("clean", noise_name);
        println!("{name:<12} {:>8.4} {:>8.4} {:>10.4}", r.mae, r.rmse, r.score);
        entries.push(json!({
            "condition": name,
            "noise": kind.map_or(Value::Null, |k| serde_json::to_value(k).expect("noise serializes")),
            "report": r.to_json(),
            "mae_change": r.mae - clean,
            "recordings": per_recording(&evals),
        }));
    }
    write_json(
        &args.out.join("noise.json"),
        &json!({
            "config_hash": hash,
            "checkpoint_config_hash": ckpt.config_hash,
            "seed": cfg.seed,
            "conditions": entries,
        }),
    )
}

/// Maps rows of the target domain onto the source domain's statistics:
/// standardize by the source, optionally project onto the source's top
/// principal components, CORAL there, and undo the standardization. The
/// complement of the PCA subspace is left unchanged.
pub struct Aligner {
    mean: Array1<f64>,
    scale: Array1<f64>,
    pca: Option<PcaModel>,
    coral: CoralTransform,
}

fn stack(parts: &[Array2<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| CliError::usage(format!("stacking rows: {e}")))
}

impl Aligner {
    pub fn fit(source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, pca_components: Option<usize>, ridge: f64) -> Result<Self> {
        if source.ncols() != target.ncols() {
            return Err(carle_core::Error::Shape {
                context: "source/target width".into(),
                expected: source.ncols().to_string(),
                actual: target.ncols().to_string(),
            }
            .into());
        }
        let mean = source.mean_axis(Axis(0)).ok_or_else(|| CliError::usage("empty source domain"))?;
        let scale = source.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        let zs = (&source - &mean) / &scale;
        let zt = (&target - &mean) / &scale;
        let pca = pca_components.map(|k| pca_fit(zs.view(), k)).transpose()?;
        let (ps, pt) = match &pca {
            Some(p) => (p.transform(zs.view())?, p.transform(zt.view())?),
            None => (zs, zt),
        };
        let coral = coral_fit(pt.view(), ps.view(), ridge)?;
        Ok(Self { mean, scale, pca, coral })
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let z = (&x - &self.mean) / &self.scale;
        let aligned = match &self.pca {
            Some(p) => {
                let proj = p.transform(z.view())?;
                let moved = self.coral.apply(proj.view())?;
                &z + &(p.inverse_transform(moved.view())? - p.inverse_transform(proj.view())?)
            }
            None => self.coral.apply(z.view())?,
        };
        Ok(aligned * &self.scale + &self.mean)
    }
}

pub fn crossdomain(args: &CrossDomainArgs) -> Result<()> {
    let (cfg, sources, targets) = args.resolve()?;
    let (cfg, hash) = resolved(cfg)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = &ckpt.model;
    let source = data::load_all(&sources, &cfg)?;
    let target = data::load_all(&targets, &cfg)?;
    let cd = &cfg.crossdomain;

    let unaligned = evaluate(model, &target)?;
    let aligned: Vec<Evaluation> = if cd.logit_space {
        let sl: Vec<Array2<f64>> = source.iter().map(|s| model.logits(s.recording.features.view())).collect::<carle_core::Result<_>>()?;
        let tl: Vec<Array2<f64>> = target.iter().map(|s| model.logits(s.recording.features.view())).collect::<carle_core::Result<_>>()?;
        let a = Aligner::fit(stack(&sl)?.view(), stack(&tl)?.view(), cd.pca_components, cd.ridge)?;
        target
            .iter()
            .zip(&tl)
            .map(|(s, l)| Evaluation::new(s, model.predict_from_logits(a.apply(l.view())?.view())?))
            .collect::<Result<_>>()?
    } else {
        // Statistics are taken after the model's per-recording recentering,
        // which otherwise leaves between-recording offsets in the covariance.
        let recenter = |s: &Dataset| model.normalization.recenter(s.recording.features.view());
        let sf: Vec<Array2<f64>> = source.iter().map(recenter).collect();
        let tf: Vec<Array2<f64>> = target.iter().map(recenter).collect();
        let a = Aligner::fit(stack(&sf)?.view(), stack(&tf)?.view(), cd.pca_components, cd.ridge)?;
        target
            .iter()
            .zip(&tf)
            .map(|(s, f)| Evaluation::new(s, model.predict(a.apply(f.view())?.view())?))
            .collect::<Result<_>>()?
    };
    let (ru, ra) = (pooled(&unaligned)?, pooled(&aligned)?);
    write_prediction_files(&args.out, "unaligned", &hash, &unaligned)?;
    write_prediction_files(&args.out, "aligned", &hash, &aligned)?;
    write_json(
        &args.out.join("crossdomain.json"),
        &json!({
            "config_hash": hash,
            "checkpoint_config_hash": ckpt.config_hash,
            "space": if cd.logit_space { "logits" } else { "features" },
            "pca_components": cd.pca_components,
            "ridge": cd.ridge,
            "rows": [
                { "condition": "without_coral", "report": ru.to_json(), "recordings": per_recording(&unaligned) },
                { "condition": "with_coral", "report": ra.to_json(), "recordings": per_recording(&aligned) },
            ],
        }),
    )?;
    println!("{:<14} {:>8} {:>8} {:>10}", "condition", "MAE", "RMSE", "Score");
    for (name, r) in [("without CORAL", ru), ("with CORAL", ra)] {
        println!("{name:<14} {:>8.4} {:>8.4} {:>10.4}", r.mae, r.rmse, r.score);
    }
    Ok(())
}

pub fn snr(args: &SnrArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if !args.sigmas.is_empty() {
        cfg.snr.sigmas = args.sigmas.clone();
    }
    let (cfg, hash) = resolved(cfg)?;
    let signal = match &args.input {
        Some(p) => data::read_signal(p, cfg.data.sample_rate_hz)?,
        None => synth_run_to_failure(&cfg.synth, cfg.seed)?.0,
    };
    let curve = snr_sweep(&signal, &cfg.snr.sigmas, cfg.snr.cap_db)?;
    write_with(&args.out, |w| {
        writeln!(w, "# {}", hash_comment(&hash))?;
        writeln!(w, "sigma,snr_db")?;
        for (s, db) in &curve {
            writeln!(w, "{s},{db}")?;
        }
        Ok(())
    })?;
    for (s, db) in &curve {
        println!("sigma {s:>6.3}  snr {db:>8.3} dB");
    }
    Ok(())
}
