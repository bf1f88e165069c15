//! The five subcommands. Each writes its artifacts under the configured
//! directories and returns whether its verification (if any) passed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thyme_core::checkpoint;
use thyme_core::dataio::{parse_annotations, split_dataset, write_annotations, AnnotationRecord, InteractivityType, PredicateVocab};
use thyme_core::features::{load_precomputed, write_precomputed};
use thyme_core::metrics::EvalReport;
use thyme_core::model::{check_model_gradients, evaluate_batch, predictions_jsonl, train, Batch, Model, VideoData};
use thyme_core::synth::{synth_dataset, synth_video_exact, synth_vocab, Scenario, SyntheticVideo};
use thyme_core::temporal::AttentionKind;
use thyme_core::{Error, ParamStore, Result};

use crate::config::RunConfig;

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const FEATURES_DIR: &str = "features";
pub const CHECKPOINT_FILE: &str = "checkpoint.thym";
pub const VOCAB_FILE: &str = "vocab.json";
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_H: f64 = 1e-5;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub struct Dataset {
    pub videos: Vec<VideoData>,
    pub vocab: PredicateVocab,
}

pub fn write_dataset(dir: &Path, videos: &[SyntheticVideo], vocab: &PredicateVocab) -> Result<()> {
    let features = dir.join(FEATURES_DIR);
    create_dir(&features)?;
    let records: Vec<AnnotationRecord> = videos.iter().flat_map(|v| v.annotations.iter().cloned()).collect();
    write_annotations(&dir.join(ANNOTATIONS_FILE), &records, vocab)?;
    for v in videos {
        write_precomputed(&features.join(format!("{}.jsonl", v.features.video)), &v.features)?;
    }
    Ok(())
}

/// Reads `annotations.jsonl` and one feature file per annotated video.
pub fn load_dataset(dir: &Path, d0: usize) -> Result<Dataset> {
    let (records, vocab) = parse_annotations(&dir.join(ANNOTATIONS_FILE))?;
    let mut order: Vec<String> = Vec::new();
    let mut by_video: BTreeMap<String, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        if !by_video.contains_key(&r.video) {
            order.push(r.video.clone());
        }
        by_video.entry(r.video.clone()).or_default().push(r);
    }
    let videos = order
        .into_iter()
        .map(|id| {
            let features = load_precomputed(&dir.join(FEATURES_DIR).join(format!("{id}.jsonl")), d0)?;
            Ok(VideoData {
                features,
                annotations: by_video.remove(&id).unwrap_or_default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if videos.is_empty() {
        return Err(Error::EmptyInput(format!("{} holds no annotated frames", dir.display())));
    }
    Ok(Dataset { videos, vocab })
}

pub fn synth(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let videos = synth_dataset(cfg.seed, cfg.videos, cfg.frames, cfg.max_objects, cfg.d0)?;
    write_dataset(dir, &videos, &synth_vocab())?;
    let frames: usize = videos.iter().map(|v| v.features.frames.len()).sum();
    let objects: usize = videos
        .iter()
        .flat_map(|v| &v.features.frames)
        .map(|f| f.len())
        .sum();
    Ok(format!(
        "wrote {} videos, {frames} frames, {objects} object instances to {}\n",
        videos.len(),
        dir.display()
    ))
}

fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String> {
    let data = load_dataset(&cfg.data, cfg.d0)?;
    let batch = Batch::new(&data.videos, &data.vocab)?;
    let mut store = ParamStore::new(cfg.seed);
    let model = Model::new(cfg.model(), data.vocab.clone(), &mut store)?;
    let losses = train(&model, &mut store, &batch, cfg.steps, cfg.lr, |step, loss| {
        if step % 50 == 0 || step == cfg.steps {
            eprintln!("step {step:>5}  loss {loss:.6}");
        }
    })?;
    create_dir(&cfg.out)?;
    checkpoint::save(&cfg.out.join(CHECKPOINT_FILE), store.params())?;
    write_file(&cfg.out.join("loss.csv"), loss_csv(&losses))?;
    write_file(
        &cfg.out.join(VOCAB_FILE),
        serde_json::to_string_pretty(&data.vocab).expect("vocab serializes"),
    )?;
    write_file(&cfg.out.join("config.json"), cfg.to_json())?;
    let (first, last) = (losses[0], *losses.last().expect("≥1 loss"));
    Ok(format!(
        "trained {} steps on {} videos: loss {first:.6} -> {last:.6} ({:.2}% of initial)\n",
        cfg.steps,
        data.videos.len(),
        100.0 * last / first
    ))
}

fn check_vocab(checkpoint: &Path, data: &PredicateVocab) -> Result<()> {
    let Some(dir) = checkpoint.parent() else { return Ok(()) };
    let path = dir.join(VOCAB_FILE);
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let saved: PredicateVocab = serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
        line: e.line(),
        message: e.to_string(),
    })?;
    for ty in InteractivityType::ALL {
        if saved.names(ty) != data.names(ty) {
            return Err(Error::VocabMismatch(format!(
                "{ty} predicates differ: checkpoint {:?}, data {:?}",
                saved.names(ty),
                data.names(ty)
            )));
        }
    }
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<(String, EvalReport)> {
    let ckpt = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE));
    let data = load_dataset(&cfg.data, cfg.d0)?;
    check_vocab(&ckpt, &data.vocab)?;
    let saved = checkpoint::load(&ckpt)?;
    let mut store = ParamStore::new(cfg.seed);
    let model = Model::new(cfg.model(), data.vocab.clone(), &mut store)?;
    store.load_from(&saved)?;
    let batch = Batch::new(&data.videos, &data.vocab)?;
    let k = cfg.ks.iter().copied().max().expect("validated non-empty");
    let preds = model.predict(&store, &batch, k)?;
    let report = evaluate_batch(&batch, &preds, &data.vocab, &cfg.ks);
    create_dir(&cfg.out)?;
    write_file(
        &cfg.out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    let table = report.to_table();
    write_file(&cfg.out.join("report.txt"), &table)?;
    write_file(&cfg.out.join("predictions.jsonl"), predictions_jsonl(&preds, &data.vocab))?;
    Ok((table, report))
}

/// Gradient check on a two-frame, three-object video with a two-level
/// hierarchy, at `gradcheck_width` so every entry can be probed quickly.
pub fn gradcheck_cmd(cfg: &RunConfig, corrupt: f64) -> Result<(String, bool)> {
    let width = cfg.gradcheck_width;
    let model_cfg = RunConfig {
        d0: width,
        d_a: Some(width),
        head_width: width,
        levels: 2,
        factor: 1.0,
        ..cfg.clone()
    }
    .model();
    let video = synth_video_exact(cfg.seed, 2, 3, width, Scenario::Chase)?;
    let vocab = synth_vocab();
    let batch = Batch::new(
        &[VideoData {
            features: video.features,
            annotations: video.annotations,
        }],
        &vocab,
    )?;
    let mut store = ParamStore::new(cfg.seed);
    let model = Model::new(model_cfg, vocab, &mut store)?;
    let checks = check_model_gradients(&model, &store, &batch, GRADCHECK_H, corrupt)?;
    let mut out = format!("{:<28} {:>12} {:>12} {:>12}  status\n", "parameter", "shape", "max rel err", "max |grad|");
    let mut worst = 0.0f64;
    for c in &checks {
        worst = worst.max(c.max_rel_err);
        let shape = c.shape.iter().map(ToString::to_string).collect::<Vec<_>>().join("x");
        let ok = c.max_rel_err <= GRADCHECK_TOLERANCE;
        let _ = writeln!(
            out,
            "{:<28} {:>12} {:>12.3e} {:>12.3e}  {}",
            c.name,
            shape,
            c.max_rel_err,
            c.max_abs_grad,
            if ok { "ok" } else { "FAIL" }
        );
    }
    let passed = worst <= GRADCHECK_TOLERANCE;
    let _ = writeln!(
        out,
        "{} parameter tensors checked, max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e}): {}",
        checks.len(),
        if passed { "PASS" } else { "FAIL" }
    );
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("gradcheck.txt"), &out)?;
    Ok((out, passed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Factor,
    Mechanism,
    Window,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Factor => "factor",
            Axis::Mechanism => "mechanism",
            Axis::Window => "window",
        }
    }

    /// Row labels and the configuration of each run.
    pub fn settings(self, base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Axis::Factor => [("1/4", 0.25), ("1/2", 0.5), ("3/4", 0.75), ("Full", 1.0)]
                .into_iter()
                .map(|(l, v)| (l, with(&|c| c.factor = v)))
                .collect(),
            Axis::Mechanism => [
                ("Standard Attention", AttentionKind::Standard),
                ("Cyclic Attention", AttentionKind::Cyclic),
            ]
            .into_iter()
            .map(|(l, v)| (l, with(&|c| c.attention = v)))
            .collect(),
            Axis::Window => [("1/2", 0.5), ("3/4", 0.75), ("Full", 1.0)]
                .into_iter()
                .map(|(l, v)| (l, with(&|c| c.window = v)))
                .collect(),
        }
    }

    fn header(self) -> &'static str {
        match self {
            Axis::Factor => "Factor",
            Axis::Mechanism => "Mechanism",
            Axis::Window => "Window Size",
        }
    }
}

pub const ABLATION_K: usize = 20;

/// Trains and evaluates one run per axis value on a synthetic split.
pub fn ablate_cmd(cfg: &RunConfig, axis: Axis) -> Result<String> {
    let videos = synth_dataset(cfg.seed, cfg.videos, cfg.frames, cfg.max_objects, cfg.d0)?;
    let vocab = synth_vocab();
    let records: Vec<AnnotationRecord> = videos.iter().flat_map(|v| v.annotations.iter().cloned()).collect();
    let split = split_dataset(&records, cfg.seed, cfg.split)?;
    let pick = |ids: &[String]| -> Vec<VideoData> {
        videos
            .iter()
            .filter(|v| ids.contains(&v.features.video))
            .map(|v| VideoData {
                features: v.features.clone(),
                annotations: v.annotations.clone(),
            })
            .collect()
    };
    let train_set = pick(&split.train);
    let (eval_set, eval_name) = if split.test.is_empty() {
        (train_set.clone(), "training")
    } else {
        (pick(&split.test), "held-out")
    };
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("ablation split leaves no training videos".into()));
    }
    let train_batch = Batch::new(&train_set, &vocab)?;
    let eval_batch = Batch::new(&eval_set, &vocab)?;

    let mut out = format!(
        "# {} ablation: trained on {} videos, evaluated on {} {eval_name} videos, {} SGD steps\n",
        axis.name(),
        train_set.len(),
        eval_set.len(),
        cfg.steps
    );
    let _ = writeln!(out, "{:<20} {:<20} {:>8} {:>8}", axis.header(), "Interactivity Type", "R@20", "mR@20");
    for (label, run) in axis.settings(cfg) {
        run.validate()?;
        let mut store = ParamStore::new(run.seed);
        let model = Model::new(run.model(), vocab.clone(), &mut store)?;
        train(&model, &mut store, &train_batch, run.steps, run.lr, |_, _| {})?;
        let preds = model.predict(&store, &eval_batch, ABLATION_K)?;
        let report = evaluate_batch(&eval_batch, &preds, &vocab, &[ABLATION_K]);
        for (i, ty) in InteractivityType::ALL.iter().enumerate() {
            let Some(r) = report.get(*ty, ABLATION_K) else { continue };
            let _ = writeln!(
                out,
                "{:<20} {:<20} {:>8.2} {:>8.2}",
                if i == 0 { label } else { "" },
                ty.title(),
                r.recall,
                r.mean_recall
            );
        }
        eprintln!("ablate {}: {label} done", axis.name());
    }
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join(format!("ablation_{}.txt", axis.name())), &out)?;
    Ok(out)
}
