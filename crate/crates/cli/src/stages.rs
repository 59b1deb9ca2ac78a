//! Implementations of the pipeline subcommands. Each stage acquires an
//! output-directory lock, echoes its configuration, and writes
//! deterministic artifacts so reruns are byte-identical.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use sacropipe_core::eval::{
    cam_full_frame, compare_scored, crop_manifest, evaluate_manifest,
    load_classifier, score_manifest, segment_manifest,
};
use sacropipe_core::explain::{save_heatmap_raw, save_overlay_png, HeatMap};
use sacropipe_core::gray::GrayImage;
use sacropipe_core::labels::split_dataset;
use sacropipe_core::phantom::{generate_corpus, synth_followup, CorpusConfig};
use sacropipe_core::stats::{optimal_cutoff, progression_ratios, EvalReport, PredictionRecord};
use sacropipe_core::train::{
    config_hash, train_classifier, train_segmentation, ClfTrainConfig, SegTrainConfig, Variant,
};
use sacropipe_core::{Error, FollowUpManifest, Manifest, Result};

use crate::args::*;
use crate::svg::roc_svg;
use crate::util::{load_toml_config, read_json, write_config_echo, write_json, RunGuard};

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowupSim {
    pub progression_rate: f64,
    pub high_risk_boost: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    #[serde(flatten)]
    pub corpus: CorpusConfig,
    /// Also write train/val split manifests when set.
    pub val_fraction: Option<f64>,
    /// Also simulate a follow-up manifest when set.
    pub followup: Option<FollowupSim>,
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    let mut cfg: GenerateConfig = load_toml_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.corpus.seed = seed;
    }
    write_config_echo(
        &a.out,
        "generate",
        cfg.corpus.seed,
        serde_json::to_value(&cfg)?,
        json!({}),
    )?;
    let manifest = generate_corpus(&cfg.corpus, &a.out)?;
    if let Some(f) = cfg.val_fraction {
        let (train, val) = split_dataset(&manifest, f, cfg.corpus.seed)?;
        train.save(&a.out.join("train.json"))?;
        val.save(&a.out.join("val.json"))?;
        println!(
            "generate: {} samples ({} train / {} val) in {}",
            manifest.len(),
            train.len(),
            val.len(),
            a.out.display()
        );
    } else {
        println!("generate: {} samples in {}", manifest.len(), a.out.display());
    }
    if let Some(fu) = &cfg.followup {
        let manifest_fu =
            synth_followup(&manifest, fu.progression_rate, fu.high_risk_boost, cfg.corpus.seed)?;
        manifest_fu.save(&a.out.join("followup.json"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train-seg / train-clf
// ---------------------------------------------------------------------------

pub fn train_seg(a: &TrainSegArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    let cfg: SegTrainConfig = load_toml_config(a.config.as_deref())?;
    write_config_echo(
        &a.out,
        "train-seg",
        a.seed,
        serde_json::to_value(&cfg)?,
        json!({"train": a.train, "val": a.val}),
    )?;
    let out = train_segmentation(&a.train, &a.val, &cfg, a.seed, &a.out)?;
    println!(
        "train-seg: best val dice {:.4} at epoch {} -> {}",
        out.best_metric,
        out.best_epoch,
        out.checkpoint.display()
    );
    Ok(())
}

pub fn train_clf(a: &TrainClfArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    let cfg: ClfTrainConfig = load_toml_config(a.config.as_deref())?;
    write_config_echo(
        &a.out,
        "train-clf",
        a.seed,
        serde_json::to_value(&cfg)?,
        json!({"train": a.train, "val": a.val, "variant": a.variant.to_string()}),
    )?;
    for variant in a.variant.expand() {
        let out = train_classifier(&a.train, &a.val, &cfg, variant, a.seed, &a.out)?;
        println!(
            "train-clf[{}]: best val MCC {:.4} at epoch {} -> {}",
            variant,
            out.best_metric,
            out.best_epoch,
            out.checkpoint.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// segment / crop
// ---------------------------------------------------------------------------

pub fn segment(a: &SegmentArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    write_config_echo(
        &a.out,
        "segment",
        0,
        json!({"use_ground_truth": a.use_ground_truth}),
        json!({"manifest": a.manifest, "checkpoint": a.checkpoint}),
    )?;
    let m = segment_manifest(
        &a.manifest,
        a.checkpoint.as_deref(),
        a.use_ground_truth,
        &a.out,
    )?;
    let out_manifest = a.out.join("manifest.json");
    m.save(&out_manifest)?;
    println!(
        "segment: {} masks ({}) -> {}",
        m.len(),
        if a.use_ground_truth { "ground truth" } else { "model" },
        out_manifest.display()
    );
    Ok(())
}

pub fn crop(a: &CropArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    write_config_echo(
        &a.out,
        "crop",
        0,
        json!({"fallback_full": a.fallback_full}),
        json!({"manifest": a.manifest}),
    )?;
    let outcome = crop_manifest(&a.manifest, a.fallback_full, &a.out)?;
    let out_manifest = a.out.join("manifest.json");
    outcome.manifest.save(&out_manifest)?;
    write_json(
        &a.out.join("crop_summary.json"),
        &json!({
            "n": outcome.manifest.len(),
            "fallbacks": outcome.fallbacks,
        }),
    )?;
    println!(
        "crop: {} crops ({} full-image fallbacks) -> {}",
        outcome.manifest.len(),
        outcome.fallbacks.len(),
        out_manifest.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate-cutoff / evaluate / compare
// ---------------------------------------------------------------------------

/// Calibration artifact consumed by `evaluate` and `compare`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutoffFile {
    pub variant: Variant,
    pub cutoff: f64,
    pub n: usize,
    pub checkpoint_config_hash: String,
}

pub fn calibrate_cutoff(a: &CalibrateArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    write_config_echo(
        &a.out,
        "calibrate-cutoff",
        0,
        json!({"variant": a.variant.as_str()}),
        json!({"manifest": a.manifest, "checkpoint": a.checkpoint}),
    )?;
    let mut model = load_classifier(&a.checkpoint)?;
    let set = score_manifest(&a.manifest, &mut model, a.variant)?;
    let cutoff = optimal_cutoff(&set)?;
    let file = CutoffFile {
        variant: a.variant,
        cutoff,
        n: set.len(),
        checkpoint_config_hash: config_hash(&model.cfg),
    };
    let path = a.out.join(format!("cutoff_{}.json", a.variant.as_str()));
    write_json(&path, &file)?;
    println!(
        "calibrate-cutoff[{}]: tau = {:.6} on {} samples -> {}",
        a.variant,
        cutoff,
        set.len(),
        path.display()
    );
    Ok(())
}

fn load_cutoff(path: &Path, variant: Variant) -> Result<CutoffFile> {
    let file: CutoffFile = read_json(path)?;
    if file.variant != variant {
        return Err(Error::Config(format!(
            "cutoff file {} was calibrated for the {} variant, not {}",
            path.display(),
            file.variant,
            variant
        )));
    }
    Ok(file)
}

fn write_eval_artifacts(
    out: &Path,
    variant: Variant,
    report: &EvalReport,
    predictions: &[PredictionRecord],
) -> Result<()> {
    write_json(&out.join(format!("eval_{}.json", variant.as_str())), report)?;
    write_json(
        &out.join(format!("predictions_{}.json", variant.as_str())),
        &predictions,
    )?;
    let mut roc = String::from("threshold,fpr,tpr\n");
    for p in &report.roc_points {
        roc.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    let roc_path = out.join(format!("roc_{}.csv", variant.as_str()));
    fs::write(&roc_path, roc).map_err(|e| Error::io(&roc_path, e))?;
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    write_config_echo(
        &a.out,
        "evaluate",
        a.seed,
        json!({
            "variant": a.variant.as_str(),
            "dataset": a.dataset,
            "bootstrap": a.bootstrap,
        }),
        json!({
            "manifest": a.manifest,
            "checkpoint": a.checkpoint,
            "cutoff_file": a.cutoff_file,
        }),
    )?;
    let cutoff = load_cutoff(&a.cutoff_file, a.variant)?;
    let mut model = load_classifier(&a.checkpoint)?;
    let set = score_manifest(&a.manifest, &mut model, a.variant)?;
    let report = evaluate_manifest(
        &a.dataset,
        &a.manifest,
        &mut model,
        a.variant,
        cutoff.cutoff,
        a.bootstrap,
        a.seed,
    )?;
    let predictions: Vec<PredictionRecord> = set
        .entries
        .iter()
        .map(|e| {
            PredictionRecord::from_probability(e.sample_id.clone(), e.probability, cutoff.cutoff)
        })
        .collect();
    write_eval_artifacts(&a.out, a.variant, &report, &predictions)?;
    println!(
        "evaluate[{}]: n={} auc={:.4} [{:.4}, {:.4}] balacc={:.4} at tau={:.4}",
        a.variant,
        report.n,
        report.auc.value,
        report.auc.ci_lo,
        report.auc.ci_hi,
        report.balanced_accuracy.value,
        cutoff.cutoff
    );
    Ok(())
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    write_config_echo(
        &a.out,
        "compare",
        0,
        json!({"dataset": a.dataset}),
        json!({
            "manifest": a.manifest,
            "standard_checkpoint": a.standard_checkpoint,
            "anatomy_checkpoint": a.anatomy_checkpoint,
            "standard_cutoff_file": a.standard_cutoff_file,
            "anatomy_cutoff_file": a.anatomy_cutoff_file,
        }),
    )?;
    let mut standard = load_classifier(&a.standard_checkpoint)?;
    let mut anatomy = load_classifier(&a.anatomy_checkpoint)?;
    // comparability: the variants differ only in their input image
    // (full radiograph vs SIJ crop); the training configs must match.
    let (ha, hb) = (config_hash(&standard.cfg), config_hash(&anatomy.cfg));
    if ha != hb {
        return Err(Error::Config(format!(
            "variants are not comparable: training configs differ ({} vs {}); \
             retrain with identical hyperparameters",
            &ha[..12],
            &hb[..12]
        )));
    }
    let cut_std = load_cutoff(&a.standard_cutoff_file, Variant::Standard)?;
    let cut_ana = load_cutoff(&a.anatomy_cutoff_file, Variant::AnatomyAware)?;
    let set_std = score_manifest(&a.manifest, &mut standard, Variant::Standard)?;
    let set_ana = score_manifest(&a.manifest, &mut anatomy, Variant::AnatomyAware)?;
    let report = compare_scored(&a.dataset, &set_std, &set_ana, cut_std.cutoff, cut_ana.cutoff)?;
    write_json(&a.out.join("comparison.json"), &report)?;
    println!(
        "compare: delta-auc={:.4} delong-p={:.4} mcnemar-p={:.4} (n={})",
        report.delong.auc_b - report.delong.auc_a,
        report.delong.p,
        report.mcnemar.p,
        report.n
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// followup
// ---------------------------------------------------------------------------

pub fn followup(a: &FollowupArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    write_config_echo(
        &a.out,
        "followup",
        0,
        json!({"conf_threshold": a.conf_threshold}),
        json!({"predictions": a.predictions, "followup": a.followup}),
    )?;
    let predictions: Vec<PredictionRecord> = read_json(&a.predictions)?;
    let manifest = FollowUpManifest::load(&a.followup)?;
    // the analysis is over baseline-negative patients only
    let negatives: std::collections::HashSet<&str> = manifest
        .entries
        .iter()
        .filter(|e| e.baseline_label == 0)
        .map(|e| e.sample_id.as_str())
        .collect();
    let baseline: Vec<PredictionRecord> = predictions
        .into_iter()
        .filter(|p| negatives.contains(p.sample_id.as_str()))
        .collect();
    let ratios = progression_ratios(&baseline, &manifest, a.conf_threshold)?;
    write_json(&a.out.join("followup.json"), &ratios)?;
    match (ratios.risk_ratio, ratios.rr_ci) {
        (Some(rr), Some((lo, hi))) => println!(
            "followup: risk ratio {:.3} [{:.3}, {:.3}] ({})",
            rr, lo, hi, ratios.status
        ),
        _ => println!("followup: {}", ratios.status),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainRecord {
    pub sample_id: String,
    pub layer_id: String,
    pub overlay: PathBuf,
    pub heatmap: PathBuf,
    /// Fraction of heatmap mass inside the manifest's SIJ boxes, when
    /// the manifest carries boxes.
    pub in_box_fraction: Option<f64>,
}

pub fn explain(a: &ExplainArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    write_config_echo(
        &a.out,
        "explain",
        0,
        json!({
            "variant": a.variant.as_str(),
            "layer": a.layer,
            "target_class": a.target_class,
            "samples": a.samples,
            "max_samples": a.max_samples,
        }),
        json!({"manifest": a.manifest, "checkpoint": a.checkpoint}),
    )?;
    let manifest = Manifest::load(&a.manifest)?;
    let mut model = load_classifier(&a.checkpoint)?;
    let overlay_dir = a.out.join("overlays");
    let heatmap_dir = a.out.join("heatmaps");
    fs::create_dir_all(&overlay_dir).map_err(|e| Error::io(&overlay_dir, e))?;
    fs::create_dir_all(&heatmap_dir).map_err(|e| Error::io(&heatmap_dir, e))?;

    let wanted: Option<Vec<&str>> = a
        .samples
        .as_deref()
        .map(|s| s.split(',').map(str::trim).collect());
    let mut records = Vec::new();
    for entry in &manifest.entries {
        if let Some(w) = &wanted {
            if !w.contains(&entry.sample_id.as_str()) {
                continue;
            }
        } else if records.len() >= a.max_samples {
            break;
        }
        let (map, layer_id) = cam_full_frame(
            &a.manifest,
            entry,
            &mut model,
            a.variant,
            a.target_class,
            a.layer.as_deref(),
        )?;
        let image_abs = Manifest::resolve(&a.manifest, &entry.image_path);
        let img = GrayImage::load_png(&image_abs)?;
        let image01 = img.to_f32().mapv(|v| v / img.max_value() as f32);
        let overlay_path = overlay_dir.join(format!("{}.png", entry.sample_id));
        save_overlay_png(&image01, &map, &overlay_path)?;
        let heatmap_path = heatmap_dir.join(format!("{}.json", entry.sample_id));
        save_heatmap_raw(
            &HeatMap {
                values: map.clone(),
                target_class: a.target_class,
                layer_id: layer_id.clone(),
            },
            &heatmap_path,
        )?;
        let in_box_fraction = entry
            .sij_boxes
            .as_ref()
            .map(|b| sacropipe_core::explain::activation_in_box_fraction(&map, b))
            .transpose()?;
        records.push(ExplainRecord {
            sample_id: entry.sample_id.clone(),
            layer_id,
            overlay: overlay_path,
            heatmap: heatmap_path,
            in_box_fraction,
        });
    }
    if records.is_empty() {
        return Err(Error::Config("no samples selected for explanation".into()));
    }
    write_json(&a.out.join(format!("explain_{}.json", a.variant.as_str())), &records)?;
    println!(
        "explain[{}]: {} overlays -> {}",
        a.variant,
        records.len(),
        overlay_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn report(a: &ReportArgs) -> Result<()> {
    let _lock = RunGuard::acquire(&a.out)?;
    write_config_echo(
        &a.out,
        "report",
        0,
        json!({}),
        json!({
            "evals": a.eval,
            "comparison": a.comparison,
            "followup": a.followup,
            "overlay_dir": a.overlay_dir,
        }),
    )?;
    if a.eval.is_empty() {
        return Err(Error::Config("report needs at least one --eval file".into()));
    }
    let mut evals: Vec<(String, EvalReport)> = Vec::new();
    for path in &a.eval {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("eval")
            .to_string();
        evals.push((stem, read_json(path)?));
    }

    // metrics.csv: one row per evaluated variant
    let mut csv = String::from(
        "name,dataset,n,cutoff,auc,auc_lo,auc_hi,balanced_accuracy,balacc_lo,balacc_hi,\
         sensitivity,specificity,accuracy,mcc\n",
    );
    for (name, r) in &evals {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            name,
            r.dataset,
            r.n,
            r.cutoff,
            r.auc.value,
            r.auc.ci_lo,
            r.auc.ci_hi,
            r.balanced_accuracy.value,
            r.balanced_accuracy.ci_lo,
            r.balanced_accuracy.ci_hi,
            r.sensitivity.value,
            r.specificity.value,
            r.accuracy,
            r.mcc.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    let csv_path = a.out.join("metrics.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    // ROC SVG per eval
    for (name, r) in &evals {
        let svg = roc_svg(name, &r.roc_points, r.auc.value);
        let path = a.out.join(format!("roc_{name}.svg"));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    }

    // bundle summary
    let comparison: Option<serde_json::Value> =
        a.comparison.as_deref().map(read_json).transpose()?;
    let followup: Option<serde_json::Value> = a.followup.as_deref().map(read_json).transpose()?;
    let evals_json: HashMap<&str, &EvalReport> =
        evals.iter().map(|(n, r)| (n.as_str(), r)).collect();
    write_json(
        &a.out.join("report.json"),
        &json!({
            "evals": evals_json,
            "comparison": comparison,
            "followup": followup,
        }),
    )?;

    // copy Grad-CAM overlays into the bundle
    if let Some(dir) = &a.overlay_dir {
        let dest = a.out.join("overlays");
        fs::create_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
        let mut names: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "png").unwrap_or(false))
            .collect();
        names.sort();
        for src in names {
            let to = dest.join(src.file_name().expect("png file name"));
            fs::copy(&src, &to).map_err(|e| Error::io(&to, e))?;
        }
    }
    println!("report: bundle written to {}", a.out.display());
    Ok(())
}
