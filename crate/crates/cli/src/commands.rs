use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ppc_core::augment::circular_shift;
use ppc_core::gradcam::average_cam;
use ppc_core::manifest::Manifest;
use ppc_core::models::ModelKind;
use ppc_core::projection::{downsample_bilinear, project_scan, read_cloud_csv, write_cloud_csv, write_pano};
use ppc_core::synthetic::{generate_cloud, generate_dataset_with, DatasetConfig, RECIPE_VERSION};
use ppc_core::training::{
    cross_validate, examples_from_scans, make_folds, run_fold, shift_for_angle, Evaluation, ExperimentConfig, History,
    LabeledScan, Trained,
};
use ppc_core::Category;

use crate::dataset::{load_dataset, stems, write_dataset};
use crate::{ConvertArgs, CrossvalArgs, EvalArgs, EvalTarget, GradcamArgs, ModelArgs, RotsweepArgs, SynthArgs, TrainArgs};

/// A bad flag combination, reported as a usage error.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

fn run_manifest(command: &str) -> Manifest {
    let mut m = Manifest::new();
    m.set("command", command)
        .set("version", env!("CARGO_PKG_VERSION"))
        .set("argv", std::env::args().collect::<Vec<_>>().join(" "));
    m
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn convert(a: &ConvertArgs) -> Result<()> {
    create_dir(&a.out)?;
    for input in &a.inputs {
        let cloud = read_cloud_csv(input).with_context(|| input.display().to_string())?;
        let native = cloud.meta.points_per_rev as usize;
        let (mut depth, mut refl) = project_scan(&cloud, native).with_context(|| input.display().to_string())?;
        if (a.width, a.height) != (depth.width, depth.height) {
            depth = downsample_bilinear(&depth, a.width, a.height)?;
            refl = downsample_bilinear(&refl, a.width, a.height)?;
        }
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("scan");
        write_pano(a.out.join(format!("{stem}.depth.pano")), &depth)?;
        write_pano(a.out.join(format!("{stem}.reflectance.pano")), &refl)?;
        log::info!("{}: {} points", input.display(), cloud.points.len());
    }
    let mut m = run_manifest("convert");
    m.set("inputs", a.inputs.len())
        .set("out", a.out.display())
        .set("width", a.width)
        .set("height", a.height);
    m.save(a.out.join("convert.manifest"))?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    if a.sets < 2 {
        return usage("--sets must be at least 2");
    }
    let cfg = DatasetConfig {
        width: a.width,
        height: a.height,
        ..DatasetConfig::new(a.per_category, a.sets, a.seed)
    };
    create_dir(&a.out)?;
    let scans = generate_dataset_with(&cfg)?;
    let entries = write_dataset(&a.out, &scans)?;
    if a.clouds {
        let stems = stems(&scans);
        let mut i = 0;
        for c in Category::ALL {
            for k in 0..a.per_category {
                let (cloud, _) = generate_cloud(&cfg, c, k);
                write_cloud_csv(a.out.join(format!("{}.csv", stems[i])), &cloud)?;
                i += 1;
            }
        }
    }
    let mut m = run_manifest("synth");
    m.set("per_category", a.per_category)
        .set("sets", a.sets)
        .set("seed", a.seed)
        .set("width", a.width)
        .set("height", a.height)
        .set("recipe_version", RECIPE_VERSION)
        .set("scans", entries.len())
        .set("out", a.out.display());
    m.save(a.out.join("synth.manifest"))?;
    Ok(())
}

fn load(data: &Path) -> Result<Vec<LabeledScan>> {
    let scans = load_dataset(data)?;
    if scans.is_empty() {
        bail!("dataset {} has no scans", data.display());
    }
    Ok(scans)
}

fn experiment(model: &ModelArgs, scans: &[LabeledScan]) -> Result<ExperimentConfig> {
    model
        .experiment(scans[0].depth.height, scans[0].depth.width)
        .map_err(|msg| Usage(msg).into())
}

fn describe_experiment(m: &mut Manifest, a: &ModelArgs, cfg: &ExperimentConfig) {
    m.set("model", format!("{:?}", a.model).to_lowercase())
        .set("modality", format!("{:?}", a.modality).to_lowercase())
        .set("fusion", a.fusion.map_or("none".to_string(), |f| format!("{f:?}").to_lowercase()))
        .set("seed", a.seed)
        .set("lr", cfg.train.lr)
        .set("momentum", cfg.train.momentum)
        .set("weight_decay", cfg.train.weight_decay)
        .set("batch_size", cfg.train.batch_size)
        .set("patience", cfg.train.patience)
        .set("max_epochs", cfg.train.max_epochs)
        .set("augment_flip", cfg.augment.enable_flip)
        .set("augment_shift", cfg.augment.enable_shift)
        .set("gating_lr", cfg.gating.lr)
        .set("gating_hidden", cfg.gating_hidden);
    cfg.spec.to_manifest(m);
}

fn accuracy_csv(e: &Evaluation) -> String {
    let mut s = String::from("category,accuracy\n");
    for (c, acc) in Category::ALL.iter().zip(&e.per_class) {
        s.push_str(&format!("{c},{}\n", acc.map_or("n/a".to_string(), |v| format!("{v:.6}"))));
    }
    s.push_str(&format!("total,{:.6}\n", e.total));
    s
}

fn names() -> Vec<&'static str> {
    Category::ALL.iter().map(|c| c.name()).collect()
}

fn history_csv(histories: &[History]) -> String {
    let mut s = String::from("network,epoch,train_loss,val_loss\n");
    for (i, h) in histories.iter().enumerate() {
        for r in &h.epochs {
            s.push_str(&format!("{i},{},{:.6},{:.6}\n", r.epoch, r.train_loss, r.val_loss));
        }
    }
    s
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let scans = load(&a.data.data)?;
    let cfg = experiment(&a.model, &scans)?;
    if a.fold >= a.plan.folds {
        return usage(format!("--fold {} is out of range for --folds {}", a.fold, a.plan.folds));
    }
    let plan = make_folds(&scans, a.plan.folds)?;
    let out = &a.data.out;
    create_dir(out)?;
    let result = run_fold(&scans, &plan.folds[a.fold], a.fold, &cfg)?;
    result.trained.save(out)?;
    write(&out.join("metrics.csv"), &accuracy_csv(&result.evaluation))?;
    write(&out.join("confusion.csv"), &result.evaluation.confusion.to_csv(&names()))?;
    write(&out.join("history.csv"), &history_csv(&result.histories))?;
    let mut m = run_manifest("train");
    m.set("data", a.data.data.display())
        .set("out", out.display())
        .set("folds", a.plan.folds)
        .set("fold", a.fold);
    describe_experiment(&mut m, &a.model, &cfg);
    m.set("test_accuracy", result.evaluation.total);
    m.save(out.join("run.manifest"))?;
    println!("fold {} test accuracy {:.4}", a.fold, result.evaluation.total);
    Ok(())
}

pub fn crossval(a: &CrossvalArgs) -> Result<()> {
    let scans = load(&a.data.data)?;
    let cfg = experiment(&a.model, &scans)?;
    if a.jobs == 0 {
        return usage("--jobs must be at least 1");
    }
    let out = &a.data.out;
    create_dir(out)?;
    let result = cross_validate(&scans, a.plan.folds, &cfg, a.jobs)?;
    let mut csv = String::from("fold,accuracy");
    for n in names() {
        csv.push_str(&format!(",{n}"));
    }
    csv.push('\n');
    let cell = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    for f in &result.folds {
        csv.push_str(&format!("{},{:.6}", f.fold, f.evaluation.total));
        for v in &f.evaluation.per_class {
            csv.push_str(&format!(",{}", cell(*v)));
        }
        csv.push('\n');
        if a.save_models {
            f.trained.save(out.join(format!("fold_{}", f.fold)))?;
        }
    }
    csv.push_str(&format!("mean,{:.6}", result.fold_weighted_accuracy()));
    for v in result.mean_per_class() {
        csv.push_str(&format!(",{}", cell(v)));
    }
    csv.push('\n');
    write(&out.join("folds.csv"), &csv)?;
    write(&out.join("confusion.csv"), &result.confusion().to_csv(&names()))?;
    let mut m = run_manifest("crossval");
    m.set("data", a.data.data.display())
        .set("out", out.display())
        .set("folds", a.plan.folds)
        .set("jobs", a.jobs);
    describe_experiment(&mut m, &a.model, &cfg);
    m.set("mean_accuracy", result.fold_weighted_accuracy())
        .set("pooled_accuracy", result.scan_weighted_accuracy());
    m.save(out.join("run.manifest"))?;
    println!(
        "mean fold accuracy {:.4} (pooled {:.4})",
        result.fold_weighted_accuracy(),
        result.scan_weighted_accuracy()
    );
    Ok(())
}

/// Trained networks, the selected scans, and a manifest describing both.
fn eval_inputs(t: &EvalTarget, command: &str) -> Result<(Trained, Vec<LabeledScan>, Manifest)> {
    let trained = Trained::load(&t.model_dir).with_context(|| format!("cannot load networks from {}", t.model_dir.display()))?;
    let scans = load(&t.data.data)?;
    let scans = match t.fold {
        Some(f) if f >= t.folds => return usage(format!("--fold {f} is out of range for --folds {}", t.folds)),
        Some(f) => {
            let plan = make_folds(&scans, t.folds)?;
            plan.folds[f].test.iter().map(|&i| scans[i].clone()).collect()
        }
        None => scans,
    };
    create_dir(&t.data.out)?;
    let mut m = run_manifest(command);
    m.set("data", t.data.data.display())
        .set("model_dir", t.model_dir.display())
        .set("out", t.data.out.display())
        .set("fold", t.fold.map_or("all".to_string(), |f| f.to_string()))
        .set("folds", t.folds)
        .set("scans", scans.len());
    Ok((trained, scans, m))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (trained, scans, mut m) = eval_inputs(&a.target, "eval")?;
    let refs: Vec<&LabeledScan> = scans.iter().collect();
    let e = trained.evaluate(&refs)?;
    let out = &a.target.data.out;
    write(&out.join("metrics.csv"), &accuracy_csv(&e))?;
    write(&out.join("confusion.csv"), &e.confusion.to_csv(&names()))?;
    m.set("accuracy", e.total);
    m.save(out.join("run.manifest"))?;
    println!("accuracy {:.4} on {} scans", e.total, scans.len());
    Ok(())
}

pub fn gradcam(a: &GradcamArgs) -> Result<()> {
    let (trained, scans, mut m) = eval_inputs(&a.target, "gradcam")?;
    let Trained::Single { mode, model } = &trained else {
        return usage("gradcam needs a single-network model (not avg or adaptive fusion)");
    };
    if model.kind != ModelKind::Single {
        return usage("gradcam needs a single-stream model (not late fusion)");
    }
    let refs: Vec<&LabeledScan> = scans.iter().collect();
    let examples = examples_from_scans::<f32>(&refs, *mode);
    let out = &a.target.data.out;
    let mut written = Vec::new();
    for c in Category::ALL {
        match average_cam(model, &examples, c.index()) {
            Ok(map) => {
                write_pano(out.join(format!("{c}.cam.pano")), &map.to_panorama())?;
                fs::write(out.join(format!("{c}.pgm")), map.to_pgm())?;
                written.push(c.name());
            }
            Err(ppc_core::Error::Empty(msg)) => log::warn!("{c}: {msg}"),
            Err(e) => return Err(e.into()),
        }
    }
    m.set("classes", written.join(" "));
    m.save(out.join("run.manifest"))?;
    Ok(())
}

pub fn rotsweep(a: &RotsweepArgs) -> Result<()> {
    if !(a.step > 0.0 && a.step <= 360.0) {
        return usage("--step must be in (0, 360]");
    }
    let (trained, scans, mut m) = eval_inputs(&a.target, "rotsweep")?;
    let width = scans[0].depth.width;
    let steps = (360.0 / a.step + 1e-9).floor() as usize;
    let mut csv = String::from("angle,accuracy\n");
    for i in 0..=steps {
        let theta = i as f64 * a.step;
        let s = shift_for_angle(theta, width);
        let rotated: Vec<LabeledScan> = scans
            .iter()
            .map(|scan| {
                let (depth, reflectance) = circular_shift(&(scan.depth.clone(), scan.reflectance.clone()), s);
                LabeledScan { depth, reflectance, ..scan.clone() }
            })
            .collect();
        let e = trained.evaluate(&rotated.iter().collect::<Vec<_>>())?;
        csv.push_str(&format!("{theta},{:.6}\n", e.total));
    }
    let out = &a.target.data.out;
    write(&out.join("rotsweep.csv"), &csv)?;
    m.set("step", a.step);
    m.save(out.join("run.manifest"))?;
    Ok(())
}
