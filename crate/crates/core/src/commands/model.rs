use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{parse_kv, RunConfig, RunManifest, MASK_FILE, OVERLAY_FILE, REPORT_FILE, REPORT_KV_FILE, TRAIN_LOG_FILE};
use crate::data::{
    class_colour, load_dataset, load_rgb, resize_image_bilinear, resize_mask_nearest, resize_pair, save_mask_png,
    save_rgb_png, SegmentationSample, Split,
};
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, GradCheckOptions, GradCheckReport};
use crate::metrics::{Aggregation, ClassReport};
use crate::nn::{Module, PRNet};
use crate::train::{evaluate, predict_masks, Checkpoint, Trainer, FINAL_CHECKPOINT};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainArgs {
    /// Dataset directory; may instead come from a `data=` line in the config.
    pub data: Option<PathBuf>,
    pub config: Option<PathBuf>,
    /// Applied after the config file, in order.
    pub overrides: Vec<(String, String)>,
    /// One run per seed, each under `out/seed_<s>/`.
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub seed: u64,
    pub parameters: usize,
    pub iterations: usize,
    pub final_loss: Option<f32>,
    pub checkpoint: PathBuf,
}

fn read_config(args: &TrainArgs, cfg: &mut RunConfig) -> Result<(Option<PathBuf>, Option<PathBuf>)> {
    let (mut data, mut out) = (args.data.clone(), args.out.clone());
    if let Some(p) = &args.config {
        let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        let mut pairs = Vec::new();
        for (k, v) in parse_kv(&text)? {
            match k.as_str() {
                "command" if v != "train" => {
                    return Err(Error::Config(format!("{} is a manifest of a {v:?} run", p.display())))
                }
                "command" | "version" => {}
                "data" => {
                    data.get_or_insert_with(|| v.into());
                }
                "out" => {
                    out.get_or_insert_with(|| v.into());
                }
                _ => pairs.push((k, v)),
            }
        }
        cfg.apply_all(&pairs)?;
    }
    cfg.apply_all(&args.overrides)?;
    Ok((data, out))
}

/// Fits the model extent to the data unless it was set: the common sample
/// extent when admissible, else the default.
fn settle_extent(cfg: &mut RunConfig, set: &[SegmentationSample]) {
    if cfg.input_is_set() {
        return;
    }
    let (h, w) = (set[0].height, set[0].width);
    if set.iter().all(|s| (s.height, s.width) == (h, w)) && cfg.model.check_input(h, w).is_ok() {
        cfg.model.input_height = h;
        cfg.model.input_width = w;
    } else {
        log::warn!(
            "samples are not all one admissible extent; resizing to {}x{}",
            cfg.model.input_height,
            cfg.model.input_width
        );
    }
}

fn fit_to_model(set: Vec<SegmentationSample>, h: usize, w: usize) -> Result<Vec<SegmentationSample>> {
    set.into_iter()
        .map(|s| {
            if (s.height, s.width) == (h, w) {
                Ok(s)
            } else {
                resize_pair(&s, h, w)
            }
        })
        .collect()
}

/// Trains on the `train` split of a dataset, writing the run manifest, a
/// per-iteration log and checkpoints.
pub fn train(args: &TrainArgs) -> Result<Vec<TrainSummary>> {
    let mut cfg = RunConfig::default();
    let (data, out) = read_config(args, &mut cfg)?;
    let data = data.ok_or_else(|| Error::InvalidArgument("--data is required".into()))?;
    let out = out.ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;

    let (labels, samples) = load_dataset(&data)?;
    let set: Vec<SegmentationSample> = samples.into_iter().filter(|s| s.split == Split::Train).collect();
    if set.is_empty() {
        return Err(Error::Dataset(format!("{} has no train samples", data.display())));
    }
    if !cfg.classes_set {
        cfg.model.num_classes = labels.len();
    } else if cfg.model.num_classes != labels.len() {
        return Err(Error::Dataset(format!(
            "num_classes={} but the dataset has {} classes",
            cfg.model.num_classes,
            labels.len()
        )));
    }
    settle_extent(&mut cfg, &set);
    cfg.resolved_model().validate()?;
    let set = fit_to_model(set, cfg.model.input_height, cfg.model.input_width)?;

    if args.seeds.is_empty() {
        return Ok(vec![train_one(&cfg, &data, &out, &set)?]);
    }
    args.seeds
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.options.seed = s;
            train_one(&c, &data, &out.join(format!("seed_{s}")), &set)
        })
        .collect()
}

fn train_one(cfg: &RunConfig, data: &Path, dir: &Path, set: &[SegmentationSample]) -> Result<TrainSummary> {
    let mut manifest = RunManifest::new("train", dir).input("data", data.display());
    manifest.seed = Some(cfg.options.seed);
    manifest.config = cfg.to_kv();
    manifest.write()?;

    let model = PRNet::<f32>::new(&cfg.resolved_model())?;
    let parameters = model.num_parameters();
    let mut trainer = Trainer::new(model, cfg.options.clone())?;
    let total = trainer.max_iter(set.len());
    log::info!(
        "training {parameters} parameters on {} samples for {total} iterations into {}",
        set.len(),
        dir.display()
    );
    let mut w = BufWriter::new(fs::File::create(dir.join(TRAIN_LOG_FILE))?);
    let log = trainer.run(set, Some(dir), &mut |r| {
        writeln!(w, "{r}")?;
        if r.iter % 10 == 0 || r.iter + 1 == total {
            log::info!("{r}");
        }
        Ok(())
    })?;
    w.flush()?;
    Ok(TrainSummary {
        dir: dir.to_path_buf(),
        seed: cfg.options.seed,
        parameters,
        iterations: log.len(),
        final_loss: log.last().map(|r| r.loss),
        checkpoint: dir.join(FINAL_CHECKPOINT),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    /// `None` evaluates every sample.
    pub split: Option<Split>,
    pub aggregation: Aggregation,
    pub batch_size: usize,
    /// Where `report.txt` and `report.kv` go, if anywhere.
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn new(checkpoint: impl Into<PathBuf>, data: impl Into<PathBuf>) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            data: data.into(),
            split: None,
            aggregation: Aggregation::Dataset,
            batch_size: 4,
            out: None,
        }
    }
}

/// Per-class DSC of a checkpoint on a dataset. Samples are resized to the
/// model extent when they differ.
pub fn eval(args: &EvalArgs) -> Result<ClassReport> {
    if let Some(out) = &args.out {
        RunManifest::new("eval", out)
            .input("checkpoint", args.checkpoint.display())
            .input("data", args.data.display())
            .input("split", args.split.map_or("all", Split::name))
            .input("aggregation", args.aggregation.name())
            .input("batch_size", args.batch_size)
            .write()?;
    }
    let model = Checkpoint::load(&args.checkpoint)?.build_model()?;
    let (labels, samples) = load_dataset(&args.data)?;
    let set: Vec<SegmentationSample> = samples
        .into_iter()
        .filter(|s| args.split.is_none_or(|sp| s.split == sp))
        .collect();
    if set.is_empty() {
        return Err(Error::Dataset(format!(
            "no {} samples in {}",
            args.split.map_or("", Split::name),
            args.data.display()
        )));
    }
    let cfg = model.config();
    let set = fit_to_model(set, cfg.input_height, cfg.input_width)?;
    let report = evaluate(
        &model,
        &set,
        labels.len(),
        Some(labels.names()),
        args.aggregation,
        args.batch_size,
    )?;
    if let Some(out) = &args.out {
        fs::write(out.join(REPORT_FILE), report.to_string())?;
        fs::write(out.join(REPORT_KV_FILE), report.to_kv())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictSummary {
    pub height: usize,
    pub width: usize,
    pub mask: PathBuf,
    pub overlay: PathBuf,
    /// Pixel count per class index.
    pub class_pixels: Vec<u64>,
}

/// Segments one image. The mask has the image's own extent (the model runs
/// at its trained extent and the prediction is resized back by nearest
/// neighbour); the overlay blends class colours over the image.
pub fn predict(args: &PredictArgs) -> Result<PredictSummary> {
    RunManifest::new("predict", &args.out)
        .input("checkpoint", args.checkpoint.display())
        .input("image", args.image.display())
        .write()?;
    let model = Checkpoint::load(&args.checkpoint)?.build_model()?;
    let (h, w, image) = load_rgb(&args.image)?;
    let cfg = model.config();
    let (mh, mw) = (cfg.input_height, cfg.input_width);
    let input = if (h, w) == (mh, mw) {
        image.clone()
    } else {
        resize_image_bilinear(&image, 3, h, w, mh, mw)
    };
    let sample = SegmentationSample::new("predict", mh, mw, input, vec![0; mh * mw])?;
    let mask = predict_masks(&model, &[&sample])?;
    let mask = if (h, w) == (mh, mw) {
        mask
    } else {
        resize_mask_nearest(&mask, mh, mw, h, w)
    };

    let mut class_pixels = vec![0u64; cfg.num_classes];
    let mut overlay = image;
    for (p, &k) in mask.iter().enumerate() {
        class_pixels[k as usize] += 1;
        if k != 0 {
            let c = class_colour(k);
            for ch in 0..3 {
                let v = &mut overlay[ch * h * w + p];
                *v = 0.5 * *v + 0.5 * c[ch];
            }
        }
    }
    let mask_path = args.out.join(MASK_FILE);
    let overlay_path = args.out.join(OVERLAY_FILE);
    save_mask_png(&mask_path, h, w, &mask)?;
    save_rgb_png(&overlay_path, h, w, &overlay)?;
    Ok(PredictSummary {
        height: h,
        width: w,
        mask: mask_path,
        overlay: overlay_path,
        class_pixels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckArgs {
    pub size: usize,
    pub seed: u64,
    /// Extent of the end-to-end model check (raised to `size` and rounded up
    /// to an admissible extent).
    pub model_size: usize,
    /// Restricts the run to layers whose name contains this.
    pub only: Option<String>,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        let d = GradCheckOptions::new(8, 0);
        Self {
            size: d.size,
            seed: d.seed,
            model_size: d.model_size,
            only: None,
        }
    }
}

/// Runs the finite-difference suite; failing checks are in the report, not
/// an error.
pub fn gradcheck(args: &GradcheckArgs) -> Result<GradCheckReport> {
    let mut opts = GradCheckOptions::new(args.size, args.seed);
    opts.model_size = args.model_size;
    opts.only = args.only.clone();
    run_suite(&opts)
}
