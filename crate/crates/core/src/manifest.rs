//! Dataset index: one entry per scene with its clean target, burst frames and
//! the parameters that produced them.
//!
//! Paths are stored relative to the manifest's directory so a dataset tree can
//! be moved or compared as a whole.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::composite::Placement;
use crate::error::Result;
use crate::io::read_json;
use crate::model::FlickerSpec;
use crate::synth::BurstSpec;
use crate::warp::ShakeParams;

pub const MANIFEST_VERSION: &str = "1.0";

/// Tag used in place of a synthetic spec for captured data.
pub const REAL_CAPTURE_TAG: &str = "real-capture";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Everything sampled while synthesizing one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    /// Source image, relative to the backgrounds directory.
    pub background: String,
    pub burst: BurstSpec,
    /// Per-frame flicker with the drawn phase.
    pub frame_specs: Vec<FlickerSpec>,
    pub shakes: Vec<ShakeParams>,
    /// Share of pixels clipped when each frame was quantized.
    pub clipped_fraction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SceneSpec {
    Synthetic(Box<SyntheticRecord>),
    RealCapture,
}

impl Serialize for SceneSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SceneSpec::Synthetic(r) => r.serialize(s),
            SceneSpec::RealCapture => s.serialize_str(REAL_CAPTURE_TAG),
        }
    }
}

impl<'de> Deserialize<'de> for SceneSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Tag(String),
            Record(Box<SyntheticRecord>),
        }
        match Repr::deserialize(d)? {
            Repr::Tag(t) if t == REAL_CAPTURE_TAG => Ok(SceneSpec::RealCapture),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!(
                "unknown spec tag {t:?}, expected {REAL_CAPTURE_TAG:?} or a synthetic record"
            ))),
            Repr::Record(r) => Ok(SceneSpec::Synthetic(r)),
        }
    }
}

/// Provenance of a composited foreground.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeRecord {
    pub foreground: String,
    pub placement: Placement,
    pub flicker_on_foreground: bool,
    /// Clean frames with the foreground pasted, one per flicker frame.
    pub clean_frames: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub scene_id: String,
    pub split: Split,
    pub clean: PathBuf,
    pub frames: Vec<PathBuf>,
    pub spec: SceneSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite: Option<CompositeRecord>,
}

/// An input that could not be turned into a scene.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedInput {
    pub path: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// Fraction of scenes assigned to training, when the manifest was generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_ratio: Option<f64>,
    pub scenes: Vec<SceneEntry>,
    #[serde(default)]
    pub skipped: Vec<SkippedInput>,
}

impl Manifest {
    pub fn new(scenes: Vec<SceneEntry>) -> Self {
        Manifest {
            version: MANIFEST_VERSION.to_string(),
            train_ratio: None,
            scenes,
            skipped: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn split_counts(&self) -> (usize, usize) {
        let train = self.scenes.iter().filter(|s| s.split == Split::Train).count();
        (train, self.scenes.len() - train)
    }
}

/// Number of training scenes for `n` scenes at `ratio`.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnsupportedVersion { found: String },
    DuplicateSceneId { scene_id: String },
    MissingPath { scene_id: String, path: PathBuf },
    UnreadableImage { scene_id: String, path: PathBuf, detail: String },
    DimensionMismatch { scene_id: String, path: PathBuf, expected: (u32, u32), found: (u32, u32) },
    FrameCount { scene_id: String, expected: usize, found: usize },
    EmptyBurst { scene_id: String },
    SplitRatio { expected_train: usize, found_train: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnsupportedVersion { found } => write!(f, "unsupported manifest version {found:?}"),
            Violation::DuplicateSceneId { scene_id } => write!(f, "duplicate scene id {scene_id}"),
            Violation::MissingPath { scene_id, path } => {
                write!(f, "{scene_id}: missing file {}", path.display())
            }
            Violation::UnreadableImage { scene_id, path, detail } => {
                write!(f, "{scene_id}: cannot read {}: {detail}", path.display())
            }
            Violation::DimensionMismatch {
                scene_id,
                path,
                expected,
                found,
            } => write!(
                f,
                "{scene_id}: {} is {}x{}, expected {}x{}",
                path.display(),
                found.0,
                found.1,
                expected.0,
                expected.1
            ),
            Violation::FrameCount {
                scene_id,
                expected,
                found,
            } => write!(f, "{scene_id}: spec describes {expected} frames, found {found}"),
            Violation::EmptyBurst { scene_id } => write!(f, "{scene_id}: no frames"),
            Violation::SplitRatio {
                expected_train,
                found_train,
            } => write!(f, "{found_train} training scenes, ratio implies {expected_train}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub scenes: usize,
    pub files_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Loads and checks a manifest file. Parse failures are errors; everything
/// else is reported as a violation.
pub fn validate_manifest(path: &Path) -> Result<ValidationReport> {
    let manifest = Manifest::load(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    Ok(validate(&manifest, root))
}

/// Checks `manifest` against the files under `root`.
pub fn validate(manifest: &Manifest, root: &Path) -> ValidationReport {
    let mut report = ValidationReport {
        scenes: manifest.scenes.len(),
        ..Default::default()
    };
    let v = &mut report.violations;
    if manifest.version != MANIFEST_VERSION {
        v.push(Violation::UnsupportedVersion {
            found: manifest.version.clone(),
        });
    }
    let mut seen = BTreeSet::new();
    let mut reported = BTreeSet::new();
    for scene in &manifest.scenes {
        if !seen.insert(scene.scene_id.as_str()) && reported.insert(scene.scene_id.as_str()) {
            v.push(Violation::DuplicateSceneId {
                scene_id: scene.scene_id.clone(),
            });
        }
    }
    for scene in &manifest.scenes {
        let id = &scene.scene_id;
        if scene.frames.is_empty() {
            v.push(Violation::EmptyBurst { scene_id: id.clone() });
        }
        if let SceneSpec::Synthetic(rec) = &scene.spec {
            let expected = rec.burst.frame_count;
            for found in [scene.frames.len(), rec.frame_specs.len(), rec.shakes.len()] {
                if found != expected {
                    v.push(Violation::FrameCount {
                        scene_id: id.clone(),
                        expected,
                        found,
                    });
                    break;
                }
            }
        }
        let mut images: Vec<&PathBuf> = vec![&scene.clean];
        images.extend(&scene.frames);
        if let Some(c) = &scene.composite {
            if c.clean_frames.len() != scene.frames.len() {
                v.push(Violation::FrameCount {
                    scene_id: id.clone(),
                    expected: scene.frames.len(),
                    found: c.clean_frames.len(),
                });
            }
            images.extend(&c.clean_frames);
        }
        let mut reference: Option<(u32, u32)> = None;
        for rel in images {
            let full = root.join(rel);
            report.files_checked += 1;
            if !full.is_file() {
                v.push(Violation::MissingPath {
                    scene_id: id.clone(),
                    path: rel.clone(),
                });
                continue;
            }
            match image::image_dimensions(&full) {
                Ok((w, h)) => match reference {
                    None => reference = Some((h, w)),
                    Some(dims) if dims != (h, w) => v.push(Violation::DimensionMismatch {
                        scene_id: id.clone(),
                        path: rel.clone(),
                        expected: dims,
                        found: (h, w),
                    }),
                    Some(_) => {}
                },
                Err(e) => v.push(Violation::UnreadableImage {
                    scene_id: id.clone(),
                    path: rel.clone(),
                    detail: e.to_string(),
                }),
            }
        }
    }
    if let Some(ratio) = manifest.train_ratio {
        let expected_train = train_count(manifest.scenes.len(), ratio);
        let (found_train, _) = manifest.split_counts();
        if expected_train != found_train {
            v.push(Violation::SplitRatio {
                expected_train,
                found_train,
            });
        }
    }
    report
}
