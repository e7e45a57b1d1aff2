//! Synthetic dataset generation from a directory of clean backgrounds.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{BitDepth, Gamma};
use crate::error::{Error, Result};
use crate::io::{read_image, write_image, write_json};
use crate::manifest::{train_count, Manifest, SceneEntry, SceneSpec, SkippedInput, Split, SyntheticRecord};
use crate::seed::RngSeed;
use crate::synth::{synth_burst, BurstSpec, FlickerSampling, ShakeRange};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_FRAMES: usize = 10;
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

// seed.derive indices; scene i uses SCENE_BASE + i
const SPLIT_STREAM: u64 = 0;
const SCENE_BASE: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub frames: usize,
    pub train_ratio: f64,
    pub sampling: FlickerSampling,
    pub shake: ShakeRange,
    /// Transfer curve of the backgrounds and of the written frames.
    pub gamma: Gamma,
    pub depth: BitDepth,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            frames: DEFAULT_FRAMES,
            train_ratio: DEFAULT_TRAIN_RATIO,
            sampling: FlickerSampling::default(),
            shake: ShakeRange::default(),
            gamma: Gamma::Srgb,
            depth: BitDepth::Sixteen,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::invalid("frames per scene must be positive"));
        }
        if !(0.0..=1.0).contains(&self.train_ratio) {
            return Err(Error::invalid(format!("train ratio {} outside [0, 1]", self.train_ratio)));
        }
        Ok(())
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Image files in `dir`, sorted by name. Hidden files are ignored.
pub fn list_backgrounds(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with('.') || !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn scene_id(index: usize, path: &Path) -> String {
    let stem: String = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:04}_{stem}")
}

/// Assigns splits by shuffling the sorted ids with `seed`; the first
/// `round(ratio · n)` become training scenes.
pub fn assign_splits(scene_ids: &[String], ratio: f64, seed: RngSeed) -> Vec<Split> {
    let mut order: Vec<usize> = (0..scene_ids.len()).collect();
    order.sort_by(|&a, &b| scene_ids[a].cmp(&scene_ids[b]));
    order.shuffle(&mut seed.derive(SPLIT_STREAM).rng());
    let n_train = train_count(scene_ids.len(), ratio);
    let mut splits = vec![Split::Test; scene_ids.len()];
    for &i in &order[..n_train] {
        splits[i] = Split::Train;
    }
    splits
}

/// Writes one burst per readable background under `out` and returns the
/// manifest, which is also written to `out/manifest.json`.
///
/// Layout: `scenes/<id>/clean.png`, `scenes/<id>/frame_NN.png` and
/// `scenes/<id>/spec.json`. Backgrounds that fail to load or are too small are
/// listed in `skipped`.
pub fn generate_dataset(backgrounds: &Path, out: &Path, config: &DatasetConfig, seed: RngSeed) -> Result<Manifest> {
    config.validate()?;
    let inputs = list_backgrounds(backgrounds)?;
    let results: Vec<std::result::Result<SceneEntry, SkippedInput>> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let rel_name = path
                .strip_prefix(backgrounds)
                .unwrap_or(path)
                .to_string_lossy()
                .into_owned();
            generate_scene(i, path, &rel_name, out, config, seed.derive(SCENE_BASE + i as u64)).map_err(|e| {
                log::warn!("skipping background {}: {e}", path.display());
                SkippedInput {
                    path: rel_name,
                    reason: e.to_string(),
                }
            })
        })
        .collect();
    let mut scenes = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(s) => scenes.push(s),
            Err(s) => skipped.push(s),
        }
    }
    if scenes.is_empty() {
        return Err(Error::invalid(format!(
            "no usable background images in {}",
            backgrounds.display()
        )));
    }
    let ids: Vec<String> = scenes.iter().map(|s| s.scene_id.clone()).collect();
    for (scene, split) in scenes.iter_mut().zip(assign_splits(&ids, config.train_ratio, seed)) {
        scene.split = split;
    }
    let mut manifest = Manifest::new(scenes);
    manifest.train_ratio = Some(config.train_ratio);
    manifest.skipped = skipped;
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn generate_scene(
    index: usize,
    path: &Path,
    rel_name: &str,
    out: &Path,
    config: &DatasetConfig,
    seed: RngSeed,
) -> Result<SceneEntry> {
    let (clean, _) = read_image(path, config.gamma)?;
    clean.ensure_pipeline_dims()?;
    let id = scene_id(index, path);
    let base = config.sampling.sample(&mut seed.stream(0), clean.height())?;
    let mut burst_spec = BurstSpec::new(config.frames, base, seed.derive(1));
    burst_spec.shake = config.shake;
    let burst = synth_burst(&clean, &burst_spec)?;

    let scene_dir = PathBuf::from("scenes").join(&id);
    let clean_rel = scene_dir.join("clean.png");
    write_image(&out.join(&clean_rel), &clean, config.depth, config.gamma)?;
    let mut frames = Vec::with_capacity(burst.frames.len());
    let mut clipped = Vec::with_capacity(burst.frames.len());
    for (i, frame) in burst.frames.iter().enumerate() {
        let rel = scene_dir.join(format!("frame_{i:02}.png"));
        clipped.push(write_image(&out.join(&rel), frame, config.depth, config.gamma)?);
        frames.push(rel);
    }
    let record = SyntheticRecord {
        background: rel_name.to_string(),
        burst: burst_spec,
        frame_specs: burst.specs,
        shakes: burst.shakes,
        clipped_fraction: clipped,
    };
    write_json(&out.join(scene_dir.join("spec.json")), &record)?;
    Ok(SceneEntry {
        scene_id: id,
        split: Split::Test,
        clean: clean_rel,
        frames,
        spec: SceneSpec::Synthetic(Box::new(record)),
        composite: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_follow_ratio_and_seed() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let a = assign_splits(&ids, 0.8, RngSeed(5));
        assert_eq!(a.iter().filter(|s| **s == Split::Train).count(), 8);
        assert_eq!(a, assign_splits(&ids, 0.8, RngSeed(5)));
        // input order does not matter, only the sorted ids
        let mut rev = ids.clone();
        rev.reverse();
        let b = assign_splits(&rev, 0.8, RngSeed(5));
        for (i, id) in ids.iter().enumerate() {
            let j = rev.iter().position(|r| r == id).unwrap();
            assert_eq!(a[i], b[j]);
        }
        let differs = (0..20).any(|s| assign_splits(&ids, 0.8, RngSeed(s)) != a);
        assert!(differs);
    }

    #[test]
    fn scene_ids_are_sanitized() {
        assert_eq!(scene_id(3, Path::new("/x/my photo.v2.png")), "0003_my_photo_v2");
    }

    #[test]
    fn rejects_bad_config() {
        let c = DatasetConfig {
            train_ratio: 1.2,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DatasetConfig {
            frames: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
