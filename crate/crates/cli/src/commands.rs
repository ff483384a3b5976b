use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fsgcd_core::data::{generate_split, load_features, make_synthetic, save_features, DatasetSplit, FeatureSet};
use fsgcd_core::encoder::{encode_batch, EncoderParams};
use fsgcd_core::eval::{kmeans, EvalOptions, EvalSet, KMeansConfig};
use fsgcd_core::trainer::{evaluate_checkpoint, train as run_training, LogRecord, ViewSource};
use fsgcd_core::{Error, Metrics, Result};
use ndarray::Axis;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::{Common, EvalArgs, ExportArgs, SplitArgs, TrainArgs};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn push<T: ToString>(kv: &mut Vec<(String, String)>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        kv.push((key.to_string(), v.to_string()));
    }
}

fn push_path(kv: &mut Vec<(String, String)>, key: &str, value: &Option<PathBuf>) {
    push(kv, key, value.as_ref().map(|p| p.display().to_string()));
}

fn resolve(common: &Common, mut flags: Vec<(String, String)>) -> Result<ExperimentConfig> {
    push(&mut flags, "seed", common.seed);
    push(&mut flags, "c_l", common.c_l);
    push(&mut flags, "p_l", common.p_l);
    for item in &common.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got {item:?}")))?;
        flags.push((k.to_string(), v.to_string()));
    }
    ExperimentConfig::resolve(common.config.as_deref(), common.preset.as_deref(), &flags)
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("no {what} given (flag --{what} or config key)")))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_split(path: &Path, features: &FeatureSet) -> Result<DatasetSplit> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let split: DatasetSplit = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    split.validate(features)?;
    Ok(split)
}

fn load_checkpoint(path: &Path, features: &FeatureSet) -> Result<EncoderParams> {
    let params = EncoderParams::load(path)?;
    if params.input_dim() != features.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            actual: features.dim(),
            context: format!("feature dimension vs checkpoint {}", path.display()),
        });
    }
    Ok(params)
}

pub fn split(args: SplitArgs) -> Result<()> {
    let mut flags = Vec::new();
    push_path(&mut flags, "features", &args.features);
    let cfg = resolve(&args.common, flags)?;
    let features = load_features(require(&cfg.features, "features")?)?;
    let (c_l, p_l) = cfg.ratios()?;
    let split = generate_split(&features, c_l, p_l, cfg.seed)?;
    write_json(&args.out, &split)?;
    log::info!(
        "{} known of {} classes, {} labeled samples",
        split.known_classes.len(),
        split.class_count,
        split.labeled_ids.len()
    );
    Ok(())
}

fn obtain_features(cfg: &ExperimentConfig, out_dir: &Path) -> Result<FeatureSet> {
    if let Some(path) = &cfg.features {
        return load_features(path);
    }
    let synthetic = cfg.synthetic.as_ref().ok_or_else(|| {
        Error::InvalidConfig("no --features given and no synthetic data configured".into())
    })?;
    let features = make_synthetic(synthetic)?;
    save_features(&features, out_dir.join("features.fsgf"))?;
    Ok(features)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut flags = Vec::new();
    push_path(&mut flags, "features", &args.features);
    push_path(&mut flags, "split", &args.split);
    push_path(&mut flags, "views", &args.views);
    push_path(&mut flags, "frozen_block", &args.frozen_block);
    push(&mut flags, "stage1_epochs", args.stage1_epochs);
    push(&mut flags, "stage2_epochs", args.stage2_epochs);
    push(&mut flags, "lr", args.lr);
    push(&mut flags, "batch_size", args.batch_size);
    push(&mut flags, "eval_every", args.eval_every);
    push(&mut flags, "hidden_dim", args.hidden_dim);
    push(&mut flags, "embed_dim", args.embed_dim);
    push(&mut flags, "components", args.components.clone());
    let cfg = resolve(&args.common, flags)?;

    let out = &args.out_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let features = obtain_features(&cfg, out)?;
    let split = match &cfg.split {
        Some(path) => load_split(path, &features)?,
        None => {
            let (c_l, p_l) = cfg.ratios()?;
            let split = generate_split(&features, c_l, p_l, cfg.seed)?;
            write_json(&out.join("split.json"), &split)?;
            split
        }
    };
    let views = cfg.views.as_deref().map(load_features).transpose()?;
    let views = views.as_ref().map_or(ViewSource::Augment, ViewSource::Paired);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = EncoderParams::init(cfg.encoder_config(features.dim()), &mut rng)?;
    if let Some(path) = &cfg.frozen_block {
        params.load_frozen_block(path)?;
    }
    log::info!("training {} trainable parameters", params.trainable_count());
    let outcome = run_training(&features, &split, params, &cfg.train_config(), views)?;

    let metrics_path = out.join("metrics.jsonl");
    let file = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    let mut w = BufWriter::new(file);
    let mut line = |v: serde_json::Value| writeln!(w, "{v}").map_err(io_err(&metrics_path));
    line(json!({ "type": "config", "config": cfg }))?;
    for r in outcome.log.records() {
        if matches!(r, LogRecord::Eval { .. }) {
            line(serde_json::to_value(r).map_err(|e| Error::Format(e.to_string()))?)?;
        }
    }
    let last: Option<&Metrics> = outcome.log.metrics().last();
    let summary = json!({
        "type": "final",
        "metrics": last,
        "best": outcome.best.as_ref().map(|b| &b.metrics),
    });
    line(summary.clone())?;
    w.flush().map_err(io_err(&metrics_path))?;

    let log_path = out.join("train_log.jsonl");
    let file = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    let mut w = BufWriter::new(file);
    outcome.log.write_jsonl(&mut w).map_err(io_err(&log_path))?;
    w.flush().map_err(io_err(&log_path))?;

    outcome.params.save(out.join("final.fsgp"))?;
    if let Some(best) = &outcome.best {
        best.params.save(out.join("best.fsgp"))?;
    }
    println!("{summary}");
    Ok(())
}

fn eval_options(cfg: &ExperimentConfig, all: bool, k: Option<usize>) -> EvalOptions {
    let mut opts = cfg.train_config().eval_options();
    if all {
        opts.set = EvalSet::All;
    }
    opts.k = k;
    opts
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut flags = Vec::new();
    push_path(&mut flags, "features", &args.features);
    push_path(&mut flags, "split", &args.split);
    let cfg = resolve(&args.common, flags)?;
    let features = load_features(require(&cfg.features, "features")?)?;
    let split = load_split(require(&cfg.split, "split")?, &features)?;
    let params = load_checkpoint(&args.checkpoint, &features)?;
    if let Some(k) = args.k.filter(|&k| k != features.class_count()) {
        log::warn!(
            "k = {k} differs from the class count {}; accuracy uses a padded contingency table",
            features.class_count()
        );
    }
    let metrics = evaluate_checkpoint(&features, &split, &params, &eval_options(&cfg, args.all, args.k))?;
    println!("{}", serde_json::to_string(&metrics).map_err(|e| Error::Format(e.to_string()))?);
    Ok(())
}

pub fn export(args: ExportArgs) -> Result<()> {
    let mut flags = Vec::new();
    push_path(&mut flags, "features", &args.features);
    push_path(&mut flags, "split", &args.split);
    let cfg = resolve(&args.common, flags)?;
    let features = load_features(require(&cfg.features, "features")?)?;
    let params = load_checkpoint(&args.checkpoint, &features)?.quantized();
    let ids: Vec<usize> = if args.all {
        (0..features.len()).collect()
    } else {
        let split = load_split(require(&cfg.split, "split")?, &features)?;
        split.unlabeled_ids
    };
    let x = features.features().select(Axis(0), &ids);
    let emb = encode_batch(x.view(), &params)?;
    let opts = eval_options(&cfg, args.all, None);
    let mut km = KMeansConfig::new(features.class_count(), opts.seed);
    km.restarts = opts.restarts;
    let clusters = kmeans(emb.view(), &km)?;

    let out = &args.out;
    let file = fs::File::create(out).map_err(io_err(out))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("id");
    for j in 0..emb.ncols() {
        header.push_str(&format!(",e{j}"));
    }
    header.push_str(",label,cluster");
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for (r, &id) in ids.iter().enumerate() {
            write!(w, "{id}")?;
            for v in emb.row(r) {
                write!(w, ",{v}")?;
            }
            let label = features.label(id).map_or(String::new(), |l| l.to_string());
            writeln!(w, ",{label},{}", clusters.assignment[r])?;
        }
        w.flush()
    };
    write().map_err(io_err(out))
}
