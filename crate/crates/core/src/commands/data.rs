use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{RunManifest, CONVERT_REPORT_FILE};
use crate::data::{
    load_rgb, parse_annotation_file, rasterize, resize_pair, save_dataset, split_dataset, synth_generate, LabelMap,
    LabelPolicy, SegmentationSample, Split,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub classes: usize,
    /// Share of samples tagged `test`; 0 tags everything `train`.
    pub test_fraction: f64,
    pub out: PathBuf,
}

impl SynthArgs {
    pub fn new(count: usize, size: usize, seed: u64, out: impl Into<PathBuf>) -> Self {
        Self {
            count,
            size,
            seed,
            classes: 10,
            test_fraction: 0.0,
            out: out.into(),
        }
    }
}

fn label_map_for(classes: usize) -> Result<LabelMap> {
    let d = LabelMap::default();
    if d.len() == classes {
        Ok(d)
    } else {
        LabelMap::from_names((0..classes).map(|i| format!("class{i}")).collect())
    }
}

/// Tags a `test_fraction` share of `samples` as test, by seeded shuffle.
fn assign_splits(samples: &mut [SegmentationSample], test_fraction: f64, seed: u64) -> Result<()> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} must lie in [0, 1)"
        )));
    }
    if test_fraction == 0.0 {
        samples.iter_mut().for_each(|s| s.split = Split::Train);
        return Ok(());
    }
    let (train, _) = split_dataset((0..samples.len()).collect(), 1.0 - test_fraction, seed)?;
    for (i, s) in samples.iter_mut().enumerate() {
        s.split = if train.contains(&i) { Split::Train } else { Split::Test };
    }
    Ok(())
}

/// Generates a synthetic dataset into `args.out`.
pub fn synth(args: &SynthArgs) -> Result<Vec<SegmentationSample>> {
    if args.count == 0 {
        return Err(Error::InvalidArgument("--count must be positive".into()));
    }
    let mut manifest = RunManifest::new("synth", &args.out)
        .input("count", args.count)
        .input("size", args.size)
        .input("classes", args.classes)
        .input("test_fraction", args.test_fraction);
    manifest.seed = Some(args.seed);
    let labels = label_map_for(args.classes)?;
    let mut samples = synth_generate(args.count, args.size, args.size, args.seed, args.classes)?;
    assign_splits(&mut samples, args.test_fraction, args.seed)?;
    manifest.write()?;
    save_dataset(&args.out, &samples, &labels)?;
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertArgs {
    pub annotations: PathBuf,
    pub images: PathBuf,
    /// Defaults to the built-in ten-class map.
    pub labelmap: Option<PathBuf>,
    pub out: PathBuf,
    pub policy: LabelPolicy,
    pub seed: u64,
    pub test_fraction: f64,
    /// Square extent to resize every pair to.
    pub size: Option<usize>,
}

impl ConvertArgs {
    pub fn new(annotations: impl Into<PathBuf>, images: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            annotations: annotations.into(),
            images: images.into(),
            labelmap: None,
            out: out.into(),
            policy: LabelPolicy::Error,
            seed: 0,
            test_fraction: 0.2,
            size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvertSummary {
    pub converted: Vec<String>,
    pub rejected: Vec<(PathBuf, String)>,
    pub warnings: Vec<(PathBuf, String)>,
    pub train: usize,
    pub test: usize,
}

fn annotation_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("json")) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "no annotation files (*.json) in {}",
            dir.display()
        )));
    }
    Ok(files)
}

/// The image named by the annotation (only its file name is used, so Windows
/// or relative paths from the annotating machine still resolve), else an
/// image sharing the annotation's stem.
fn find_image(images: &Path, json: &Path, image_path: Option<&str>) -> Option<PathBuf> {
    if let Some(name) = image_path
        .and_then(|p| p.rsplit(['/', '\\']).next())
        .filter(|n| !n.is_empty())
    {
        let p = images.join(name);
        if p.is_file() {
            return Some(p);
        }
    }
    let stem = json.file_stem()?;
    ["png", "jpg", "jpeg", "PNG", "JPG", "JPEG"]
        .iter()
        .map(|ext| images.join(stem).with_extension(ext))
        .find(|p| p.is_file())
}

fn convert_one(
    json: &Path,
    args: &ConvertArgs,
    labels: &LabelMap,
    warnings: &mut Vec<(PathBuf, String)>,
) -> Result<SegmentationSample> {
    let ann = parse_annotation_file(json)?;
    let shapes = ann.resolve(labels, args.policy, json)?;
    let image_path = find_image(&args.images, json, ann.image_path.as_deref()).ok_or_else(|| Error::Annotation {
        path: json.to_path_buf(),
        detail: format!(
            "image {:?} not found in {}",
            ann.image_path.as_deref().unwrap_or(""),
            args.images.display()
        ),
    })?;
    let (h, w, image) = load_rgb(&image_path)?;
    if (h, w) != (ann.height, ann.width) {
        return Err(Error::Annotation {
            path: json.to_path_buf(),
            detail: format!(
                "annotation is {}x{} but {} is {h}x{w}",
                ann.height,
                ann.width,
                image_path.display()
            ),
        });
    }
    let (mask, raster_warnings) = rasterize(&shapes, h, w);
    for rw in raster_warnings {
        warnings.push((json.to_path_buf(), format!("shape {}: {}", rw.shape, rw.detail)));
    }
    let id = json
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let sample = SegmentationSample::new(id, h, w, image, mask)?;
    match args.size {
        Some(s) if (s, s) != (h, w) => resize_pair(&sample, s, s),
        _ => Ok(sample),
    }
}

/// Converts a directory of polygon annotations into a dataset. Every file is
/// attempted; rejects are listed in `convert_report.txt` and then reported as
/// an error naming the first one.
pub fn convert(args: &ConvertArgs) -> Result<ConvertSummary> {
    let labels = match &args.labelmap {
        Some(p) => LabelMap::load(p)?,
        None => LabelMap::default(),
    };
    let files = annotation_files(&args.annotations)?;
    let mut manifest = RunManifest::new("convert", &args.out)
        .input("annotations", args.annotations.display())
        .input("images", args.images.display())
        .input(
            "labelmap",
            args.labelmap
                .as_ref()
                .map_or_else(|| "default".to_string(), |p| p.display().to_string()),
        )
        .input(
            "policy",
            if args.policy == LabelPolicy::Skip {
                "skip"
            } else {
                "error"
            },
        )
        .input("test_fraction", args.test_fraction)
        .input(
            "size",
            args.size.map_or_else(|| "native".to_string(), |s| s.to_string()),
        );
    manifest.seed = Some(args.seed);
    manifest.write()?;

    let mut summary = ConvertSummary::default();
    let mut samples = Vec::new();
    let mut first_err = None;
    for f in &files {
        match convert_one(f, args, &labels, &mut summary.warnings) {
            Ok(s) => {
                summary.converted.push(s.id.clone());
                samples.push(s);
            }
            Err(e) => {
                log::error!("{}: {e}", f.display());
                summary.rejected.push((f.clone(), e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    if !samples.is_empty() {
        assign_splits(&mut samples, args.test_fraction, args.seed)?;
        summary.train = samples.iter().filter(|s| s.split == Split::Train).count();
        summary.test = samples.len() - summary.train;
        save_dataset(&args.out, &samples, &labels)?;
    }
    fs::write(
        args.out.join(CONVERT_REPORT_FILE),
        report_text(&files, &samples, &summary),
    )?;
    match first_err {
        None => Ok(summary),
        Some(e) if summary.rejected.len() == 1 => Err(e),
        Some(e) => Err(Error::Dataset(format!(
            "{} of {} annotation files rejected (see {CONVERT_REPORT_FILE}); first: {e}",
            summary.rejected.len(),
            files.len()
        ))),
    }
}

fn report_text(files: &[PathBuf], samples: &[SegmentationSample], summary: &ConvertSummary) -> String {
    let mut s = String::new();
    for f in files {
        let stem = f
            .file_stem()
            .map(|x| x.to_string_lossy().into_owned())
            .unwrap_or_default();
        if let Some((_, why)) = summary.rejected.iter().find(|(p, _)| p == f) {
            let _ = writeln!(s, "reject\t{}\t{why}", f.display());
        } else if let Some(smp) = samples.iter().find(|x| x.id == stem) {
            let _ = writeln!(s, "ok\t{}\t{}\t{}", f.display(), smp.id, smp.split.name());
        }
        for (_, w) in summary.warnings.iter().filter(|(p, _)| p == f) {
            let _ = writeln!(s, "warn\t{}\t{w}", f.display());
        }
    }
    let _ = writeln!(
        s,
        "# {} converted ({} train, {} test), {} rejected",
        summary.converted.len(),
        summary.train,
        summary.test,
        summary.rejected.len()
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_lookup_uses_the_file_name_only() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.png"), b"x").unwrap();
        fs::write(dir.path().join("b.jpg"), b"x").unwrap();
        let json = Path::new("/elsewhere/b.json");
        assert_eq!(
            find_image(dir.path(), json, Some("C:\\scans\\a.png")),
            Some(dir.path().join("a.png"))
        );
        assert_eq!(
            find_image(dir.path(), json, Some("missing.png")),
            Some(dir.path().join("b.jpg"))
        );
        assert_eq!(find_image(dir.path(), Path::new("c.json"), None), None);
    }

    #[test]
    fn split_assignment() {
        let mut s = synth_generate(10, 8, 8, 0, 10).unwrap();
        assign_splits(&mut s, 0.2, 1).unwrap();
        assert_eq!(s.iter().filter(|x| x.split == Split::Test).count(), 2);
        assign_splits(&mut s, 0.0, 1).unwrap();
        assert!(s.iter().all(|x| x.split == Split::Train));
        assert!(assign_splits(&mut s, 1.0, 1).is_err());
    }

    #[test]
    fn zero_count_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = synth(&SynthArgs::new(0, 16, 0, dir.path())).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }
}
