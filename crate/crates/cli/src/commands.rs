use std::path::{Path, PathBuf};

use divseg_core::backbones::{ModelSpec, NetworkSpec, Registry};
use divseg_core::checkpoint::Checkpoint;
use divseg_core::ensemble::{Ensemble, EnsembleSpec, FusionMode};
use divseg_core::metrics::evaluate_dataset;
use divseg_core::pipeline::{
    predict, train_with_progress, AugmentationSpec, Augmenter, DatasetManifest, ModelConfig,
    RunConfigFile, DEFAULT_WORKING_SIZE, IMAGE_EXTENSIONS,
};
use divseg_core::raster::{overlay, write_mask, ImageTensor, LabelMask};
use divseg_core::synthgen::{generate, SynthConfig};
use divseg_core::triunet::TriUNetSpec;
use divseg_core::{Error, Result};

use super::{Command, EnsembleArgs, EvaluateArgs, Mode, PredictArgs, SynthArgs, TrainArgs};

pub const OUT_ENV: &str = "DIVSEG_OUT";
const OVERLAY_COLOR: [f64; 3] = [0.0, 1.0, 0.2];
const OVERLAY_ALPHA: f64 = 0.45;

pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict_cmd(a),
        Command::EnsemblePredict(a) => ensemble_predict(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn synth(a: SynthArgs) -> Result<String> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::read(p)?,
        None => SynthConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $( if let Some(v) = a.$flag { cfg.$field = v; } )* };
    }
    set!(count => count, seed => seed, size => image_size, negative_fraction => negative_fraction,
         validation_fraction => validation_fraction, test_fraction => test_fraction);
    let out = a.out.unwrap_or_else(|| out_root().join("synth"));
    let m = generate(&cfg, &out)?;
    let counts: Vec<String> = divseg_core::pipeline::Split::ALL
        .iter()
        .map(|s| format!("{} {}", m.count(*s), s))
        .collect();
    Ok(format!(
        "wrote {} images ({}) to {}",
        m.entries().len(),
        counts.join(", "),
        out.display()
    ))
}

fn model_spec(model: &ModelConfig, seed: u64) -> ModelSpec {
    let template = NetworkSpec {
        arch_id: if model.arch == "triunet" {
            "unet".into()
        } else {
            model.arch.clone()
        },
        in_channels: model.in_channels,
        classes: model.classes,
        depth: model.depth,
        base_width: model.base_width,
        seed,
    };
    if model.arch == "triunet" {
        ModelSpec::TriUNet(TriUNetSpec::from_template(&template))
    } else {
        ModelSpec::Backbone(template)
    }
}

fn train(a: TrainArgs) -> Result<String> {
    let file = match &a.config {
        Some(p) => RunConfigFile::read(p)?,
        None => RunConfigFile::default(),
    };
    let flags = RunConfigFile {
        arch: a.arch.map(|x| x.id().to_string()),
        base_width: a.base_width,
        depth: a.depth,
        epochs: a.epochs,
        batch_size: a.batch_size,
        working_size: a.working_size,
        lr_initial: a.lr,
        seed: a.seed,
        augment: (!a.augment.is_empty()).then_some(a.augment),
        ..RunConfigFile::default()
    };
    let (model, cfg, augment) = file.overridden_by(flags).resolve()?;
    let augmenter = Augmenter::new(AugmentationSpec::parse(&augment)?)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let out = a.out.unwrap_or_else(|| out_root().join(&model.arch));
    let mut net = Registry::with_defaults().build(&model_spec(&model, cfg.seed))?;
    let outcome = train_with_progress(&mut net, &manifest, &cfg, &augmenter, Some(&out), |r| {
        eprintln!(
            "epoch {:>3}/{}  loss {:.4}  val iou {:.4}",
            r.epoch, cfg.epochs, r.train_loss, r.validation.iou
        )
    })?;
    let best = outcome.best();
    Ok(format!(
        "trained {} for {} epochs; best epoch {} (validation iou {:.4}) saved to {}",
        model.arch,
        cfg.epochs,
        best.epoch,
        best.validation.iou,
        outcome
            .best_dir
            .as_deref()
            .unwrap_or(Path::new("-"))
            .display()
    ))
}

/// Image files of `input` (a file or a directory), sorted by name.
fn list_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(Error::InvalidInput(format!(
            "input {} does not exist",
            input.display()
        )));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(input).map_err(|e| Error::io(input, e))? {
        let p = entry.map_err(|e| Error::io(input, e))?.path();
        let ok = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if ok && p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no images in {}",
            input.display()
        )));
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn write_outputs(
    out: &Path,
    files: &[PathBuf],
    images: &[ImageTensor],
    masks: &[LabelMask],
    with_overlay: bool,
) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let overlay_dir = out.join("overlay");
    if with_overlay {
        std::fs::create_dir_all(&overlay_dir).map_err(|e| Error::io(&overlay_dir, e))?;
    }
    for ((f, img), m) in files.iter().zip(images).zip(masks) {
        let name = format!("{}.png", stem(f));
        write_mask(m, out.join(&name))?;
        if with_overlay {
            overlay(img, m, OVERLAY_COLOR, OVERLAY_ALPHA)?.write_png(overlay_dir.join(&name))?;
        }
    }
    Ok(())
}

fn read_images(files: &[PathBuf]) -> Result<Vec<ImageTensor>> {
    files.iter().map(ImageTensor::read).collect()
}

fn predict_cmd(a: PredictArgs) -> Result<String> {
    let (mut net, ck) = Checkpoint::load(&a.checkpoint, &Registry::with_defaults())?;
    let size = a
        .working_size
        .or(ck.meta.working_size)
        .unwrap_or(DEFAULT_WORKING_SIZE);
    let files = list_inputs(&a.input)?;
    let images = read_images(&files)?;
    let masks = predict(&mut net, &images, size)?;
    let out = a.out.unwrap_or_else(|| out_root().join("predict"));
    write_outputs(&out, &files, &images, &masks, a.overlay)?;
    Ok(format!("wrote {} masks to {}", masks.len(), out.display()))
}

fn ensemble_predict(a: EnsembleArgs) -> Result<String> {
    let mut spec = match &a.manifest {
        Some(p) => EnsembleSpec::read(p)?,
        None => EnsembleSpec::new(Vec::new(), FusionMode::Soft, DEFAULT_WORKING_SIZE),
    };
    if !a.members.is_empty() {
        spec.members = a.members.clone();
    }
    if let Some(m) = a.mode {
        spec.fusion_mode = match m {
            Mode::Soft => FusionMode::Soft,
            Mode::Hard => FusionMode::Hard,
        };
    }
    let registry = Registry::with_defaults();
    let mut members = Vec::with_capacity(spec.members.len());
    let mut trained_size = None;
    for (i, path) in spec.members.iter().enumerate() {
        let (net, ck) = Checkpoint::load(path, &registry).map_err(|e| {
            Error::InvalidInput(format!("ensemble member {i} ({}): {e}", path.display()))
        })?;
        trained_size = trained_size.or(ck.meta.working_size);
        members.push(net);
    }
    if let Some(s) = a.working_size {
        spec.working_size = s;
    } else if a.manifest.is_none() {
        spec.working_size = trained_size.unwrap_or(DEFAULT_WORKING_SIZE);
    }
    let mut ensemble = Ensemble::from_networks(spec, members)?;
    let files = list_inputs(&a.input)?;
    let images = read_images(&files)?;
    let masks = images
        .iter()
        .map(|img| ensemble.predict(img))
        .collect::<Result<Vec<_>>>()?;
    let out = a.out.unwrap_or_else(|| out_root().join("ensemble"));
    write_outputs(&out, &files, &images, &masks, a.overlay)?;
    Ok(format!(
        "wrote {} masks ({} fusion of {} members) to {}",
        masks.len(),
        ensemble.spec().fusion_mode,
        ensemble.spec().members.len(),
        out.display()
    ))
}

fn evaluate(a: EvaluateArgs) -> Result<String> {
    let report = evaluate_dataset(&a.pred, &a.gt, a.classes)?;
    let mut summary = report.render_table();
    if let Some(path) = &a.report {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        report.write_json(path)?;
        let csv = path.with_extension("csv");
        report.write_csv(&csv)?;
        summary.push_str(&format!(
            "report: {}\nper-image: {}",
            path.display(),
            csv.display()
        ));
    }
    Ok(summary.trim_end().to_string())
}
