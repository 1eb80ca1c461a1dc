//! Batch preprocessing over a directory of chips.
//!
//! For every chip the pipeline extracts scattering points, fits the mixture,
//! renders the heatmap and, when the chip carries annotations, writes one
//! instance-perception target per detection head. Artifacts mirror the
//! source tree under the output directory:
//!
//! ```text
//! <stem>.points.json  <stem>.mixture.json  <stem>.heatmap.pgdh
//! <stem>.pgip_s<stride>.pgdh      (annotated chips only)
//! ```
//!
//! A chip `dir/a.pgm` is annotated by a sidecar `dir/a.json`:
//!
//! ```json
//! {"objects": [{"bbox": [x_min, y_min, x_max, y_max], "class": "A320/321"}],
//!  "split": "train"}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::container::encode;
use crate::error::{Error, Result};
use crate::heatmap::heatmap_stack_downsampled;
use crate::imaging::{augment, load_chip, synth_chip, write_pgm, AugmentConfig, ImageChip, SynthSpec};
use crate::mixture::{fit_gmm, MixtureConfig};
use crate::pgip::{pgip_target_adaptive, FocalConfig, HeadSpec, InstanceAnnotation, STRIDES};
use crate::rng::derive_seed;
use crate::scattering::{extract_points, HarrisConfig, ScatterPointSet};

/// Raster extensions picked up by [`build_manifest`].
pub const RASTER_EXTENSIONS: [&str; 2] = ["pgm", "png"];

/// Airplane categories used by the synthetic corpus. Sidecars may carry any
/// class string.
pub const AIRPLANE_CLASSES: [&str; 7] = [
    "A220", "A320/321", "A330", "ARJ21", "Boeing737", "Boeing787", "other",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn from_name(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub bbox: [f64; 4],
    #[serde(default = "default_class")]
    pub class: String,
}

fn default_class() -> String {
    "other".into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default)]
    pub objects: Vec<AnnotatedObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the manifest root.
    pub chip_path: PathBuf,
    pub annotations: Option<Vec<AnnotatedObject>>,
    pub split: Split,
}

impl ManifestEntry {
    /// Relative path with `/` separators, used as the seed key.
    pub fn key(&self) -> String {
        let parts: Vec<String> = self
            .chip_path
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        parts.join("/")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn annotated(&self) -> usize {
        self.entries.iter().filter(|e| e.annotations.is_some()).count()
    }
}

fn is_raster(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| RASTER_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |message: String| Error::MalformedSidecar {
        path: path.to_path_buf(),
        message,
    };
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    for obj in &sidecar.objects {
        let [x0, y0, x1, y1] = obj.bbox;
        if !obj.bbox.iter().all(|v| v.is_finite()) || x0 >= x1 || y0 >= y1 {
            return Err(malformed(format!("degenerate bbox {:?}", obj.bbox)));
        }
    }
    if let Some(s) = &sidecar.split {
        if Split::from_name(s).is_none() {
            return Err(malformed(format!("unknown split {s:?}")));
        }
    }
    Ok(Some(sidecar))
}

/// Recursively collects chips under `root` in lexicographic path order.
///
/// The split comes from the sidecar, else from a top-level directory named
/// `train`, `val` or `test`, else defaults to train.
pub fn build_manifest(root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut entries = Vec::new();
    for item in WalkDir::new(root).follow_links(true).sort_by_file_name() {
        let item = item.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(&path, e.into())
        })?;
        let path = item.path();
        if !item.file_type().is_file() || !is_raster(path) {
            continue;
        }
        let rel = path.strip_prefix(root).expect("walk stays under root").to_path_buf();
        let sidecar = read_sidecar(&path.with_extension("json"))?;
        let dir_split = rel
            .components()
            .next()
            .filter(|_| rel.components().count() > 1)
            .and_then(|c| c.as_os_str().to_str())
            .and_then(Split::from_name);
        let split = sidecar
            .as_ref()
            .and_then(|s| s.split.as_deref())
            .and_then(Split::from_name)
            .or(dir_split)
            .unwrap_or(Split::Train);
        entries.push(ManifestEntry {
            chip_path: rel,
            annotations: sidecar.map(|s| s.objects),
            split,
        });
    }
    entries.sort_by(|a, b| a.chip_path.cmp(&b.chip_path));
    Ok(Manifest {
        root: root.to_path_buf(),
        entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub harris: HarrisConfig,
    /// `mixture.seed` is the global seed; each chip fits with a seed derived
    /// from it and the chip's relative path.
    pub mixture: MixtureConfig,
    /// Heatmaps are rendered at `ceil(dim / heatmap_downsample)`.
    pub heatmap_downsample: usize,
    pub strides: Vec<u32>,
    pub eta: f64,
    pub focal: FocalConfig,
    pub augment: AugmentConfig,
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            harris: HarrisConfig::default(),
            mixture: MixtureConfig::default(),
            heatmap_downsample: 1,
            strides: vec![8, 16, 32],
            eta: 0.5,
            focal: FocalConfig::default(),
            augment: AugmentConfig::default(),
            workers: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.harris.validate()?;
        self.mixture.validate()?;
        self.focal.validate()?;
        if self.heatmap_downsample == 0 {
            return Err(Error::InvalidConfig("heatmap_downsample must be >= 1".into()));
        }
        if let Some(s) = self.strides.iter().find(|s| !STRIDES.contains(s)) {
            return Err(Error::InvalidConfig(format!("unsupported head stride {s}")));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidConfig(format!("eta {} outside [0, 1]", self.eta)));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Processing stage at which a chip failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Points,
    Gmm,
    Heatmap,
    Pgip,
    Write,
    Panic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChipRecord {
    pub chip: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub points: usize,
    pub singular_components: usize,
    pub heads: usize,
    /// Instances without any point on some head, as `(stride, instance)`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub empty_instances: Vec<(u32, usize)>,
    pub augmented: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub chips: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub failures_by_stage: BTreeMap<Stage, usize>,
    pub wall_time_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    /// One record per manifest entry, in manifest order.
    pub records: Vec<ChipRecord>,
    pub summary: RunSummary,
}

impl RunReport {
    /// JSON lines: the chip records followed by `{"summary": ...}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        let summary = serde_json::json!({ "summary": self.summary });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

/// Name of the report file written next to the artifacts.
pub const REPORT_FILE: &str = "report.jsonl";

fn artifact_path(out_dir: &Path, rel: &Path, suffix: &str) -> PathBuf {
    let stem = rel.file_stem().expect("raster has a file name").to_string_lossy();
    let parent = rel.parent().unwrap_or(Path::new(""));
    out_dir.join(parent).join(format!("{stem}.{suffix}"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Failure(Stage, Error);

fn at(stage: Stage) -> impl FnOnce(Error) -> Failure {
    move |e| Failure(stage, e)
}

/// Points, mixture and heatmap of one chip; `suffix` is inserted after the
/// stem.
fn structure_targets(
    chip: &ImageChip,
    cfg: &PipelineConfig,
    seed: u64,
    out_dir: &Path,
    rel: &Path,
    suffix: &str,
    record: &mut ChipRecord,
) -> std::result::Result<ScatterPointSet, Failure> {
    let points = extract_points(chip, &cfg.harris).map_err(at(Stage::Points))?;
    record.points = points.len();
    let mix_cfg = MixtureConfig {
        seed,
        ..cfg.mixture.clone()
    };
    let mixture = fit_gmm(&points, &mix_cfg).map_err(at(Stage::Gmm))?;
    record.singular_components = mixture.components.iter().filter(|c| c.singular).count();
    let stack = heatmap_stack_downsampled(&mixture, chip.height(), chip.width(), cfg.heatmap_downsample)
        .map_err(at(Stage::Heatmap))?;

    let w = |name: &str| artifact_path(out_dir, rel, &format!("{suffix}{name}"));
    write_file(&w("points.json"), points.to_json().as_bytes()).map_err(at(Stage::Write))?;
    write_file(&w("mixture.json"), mixture.to_json().as_bytes()).map_err(at(Stage::Write))?;
    write_file(&w("heatmap.pgdh"), &encode(&stack)).map_err(at(Stage::Write))?;
    Ok(points)
}

fn process_chip(
    manifest: &Manifest,
    entry: &ManifestEntry,
    cfg: &PipelineConfig,
    record: &mut ChipRecord,
) -> std::result::Result<(), Failure> {
    let out_dir = cfg.output_dir.as_path();
    let rel = entry.chip_path.as_path();
    let chip = load_chip(manifest.root.join(rel)).map_err(at(Stage::Load))?;
    let seed = derive_seed(cfg.mixture.seed, &entry.key());
    let points = structure_targets(&chip, cfg, seed, out_dir, rel, "", record)?;

    if let Some(objects) = &entry.annotations {
        let instances = objects
            .iter()
            .map(|o| InstanceAnnotation::from_scene(o.bbox, &points))
            .collect::<Result<Vec<_>>>()
            .map_err(at(Stage::Pgip))?;
        for &stride in &cfg.strides {
            let head = HeadSpec::new(stride, chip.height(), chip.width()).map_err(at(Stage::Pgip))?;
            let target = pgip_target_adaptive(&instances, &head, cfg.eta).map_err(at(Stage::Pgip))?;
            record
                .empty_instances
                .extend(target.empty_instances.iter().map(|&j| (stride, j)));
            let path = artifact_path(out_dir, rel, &format!("pgip_s{stride}.pgdh"));
            write_file(&path, &encode(&target.map.to_stack())).map_err(at(Stage::Write))?;
            record.heads += 1;
        }
    }

    for i in 0..cfg.augment.copies {
        let aug_seed = derive_seed(seed, &format!("aug{i}"));
        let variant = augment(&chip, &cfg.augment, aug_seed);
        let suffix = format!("aug{i}.");
        let mut scratch = record.clone();
        structure_targets(&variant, cfg, aug_seed, out_dir, rel, &suffix, &mut scratch)?;
        let path = artifact_path(out_dir, rel, &format!("{suffix}pgm"));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Failure(Stage::Write, Error::io(dir, e)))?;
        }
        write_pgm(&path, &variant).map_err(at(Stage::Write))?;
        record.augmented += 1;
    }
    Ok(())
}

fn run_entry(manifest: &Manifest, entry: &ManifestEntry, cfg: &PipelineConfig) -> ChipRecord {
    let mut record = ChipRecord {
        chip: entry.key(),
        ok: false,
        stage: None,
        error: None,
        points: 0,
        singular_components: 0,
        heads: 0,
        empty_instances: Vec::new(),
        augmented: 0,
    };
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| process_chip(manifest, entry, cfg, &mut record)));
    match outcome {
        Ok(Ok(())) => record.ok = true,
        Ok(Err(Failure(stage, e))) => {
            record.stage = Some(stage);
            record.error = Some(e.to_string());
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            record.stage = Some(Stage::Panic);
            record.error = Some(msg);
        }
    }
    record
}

/// Processes every manifest entry with `cfg.workers` threads and writes
/// [`REPORT_FILE`] into the output directory. Individual chip failures are
/// recorded, never propagated; only an invalid config or an unusable output
/// directory is an error.
///
/// Artifacts depend only on the manifest, the config and the global seed, so
/// any worker count yields the same bytes. The report differs between runs
/// only in `wall_time_ms`.
pub fn run_preprocess(manifest: &Manifest, cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let probe = out.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    let _ = fs::remove_file(&probe);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let records: Vec<ChipRecord> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| run_entry(manifest, entry, cfg))
            .collect()
    });

    let mut failures_by_stage = BTreeMap::new();
    for r in &records {
        if let Some(stage) = r.stage {
            *failures_by_stage.entry(stage).or_insert(0) += 1;
        }
    }
    let succeeded = records.iter().filter(|r| r.ok).count();
    let report = RunReport {
        summary: RunSummary {
            chips: records.len(),
            succeeded,
            failed: records.len() - succeeded,
            failures_by_stage,
            wall_time_ms: start.elapsed().as_millis() as u64,
        },
        records,
    };
    let path = out.join(REPORT_FILE);
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(report.to_jsonl().as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Writes `count` synthetic airplane chips `chip_0000.pgm, ...` with
/// sidecars into `dir`. Returns the chip paths.
pub fn write_synth_corpus(
    dir: impl AsRef<Path>,
    count: usize,
    seed: u64,
    height: usize,
    width: usize,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let name = format!("chip_{i:04}");
        let chip_seed = derive_seed(seed, &name);
        let spec = SynthSpec::random_airplane(height, width, chip_seed);
        let (chip, _) = synth_chip(&spec)?;
        let path = dir.join(format!("{name}.pgm"));
        write_pgm(&path, &chip)?;
        let sidecar = Sidecar {
            objects: spec
                .bbox()
                .map(|bbox| AnnotatedObject {
                    bbox,
                    class: AIRPLANE_CLASSES[(chip_seed % AIRPLANE_CLASSES.len() as u64) as usize].into(),
                })
                .into_iter()
                .collect(),
            split: None,
        };
        let side = dir.join(format!("{name}.json"));
        write_file(&side, serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}
