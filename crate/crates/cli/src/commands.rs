use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use flickerforge::color::{BitDepth, Gamma};
use flickerforge::composite::{composite_dynamic_pair, ForegroundClip, Placement};
use flickerforge::dataset::{generate_dataset, DatasetConfig, MANIFEST_FILE};
use flickerforge::deflicker::{deflicker_burst, FusionConfig, GainSource, Weighting};
use flickerforge::estimate::estimate_burst;
use flickerforge::io::{read_image, read_json, read_matte, write_image, write_json};
use flickerforge::manifest::{validate_manifest, CompositeRecord, Manifest, Split, SyntheticRecord};
use flickerforge::metrics::{evaluate_pair, MetricReport, MetricSummary, SsimMode};
use flickerforge::synth::{apply_flicker, synth_burst, BurstSpec, FlickerSampling, ShakeRange};
use flickerforge::{FlickerSpec, ImageBuffer, RngSeed, WaveformMode};

use crate::{
    BurstArgs, CompositeArgs, DeflickerArgs, EstimateArgs, EvaluateArgs, FlickerArgs, GenerateArgs, GlobalOpts,
    ModeArg, SsimModeArg, SynthArgs, UsageError, WeightingArg,
};

/// Below this many visible intensity cycles frequency estimates are fragile.
const MIN_VISIBLE_CYCLES: f64 = 1.5;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Fails under --no-clobber when `path` exists.
fn output<'a>(g: &GlobalOpts, path: &'a Path) -> Result<&'a Path> {
    if g.no_clobber && path.exists() {
        return Err(usage(format!("{} exists and --no-clobber is set", path.display())));
    }
    Ok(path)
}

fn read(g: &GlobalOpts, path: &Path) -> Result<(ImageBuffer, BitDepth)> {
    Ok(read_image(path, g.gamma.into())?)
}

fn write(g: &GlobalOpts, path: &Path, img: &ImageBuffer, depth: BitDepth) -> Result<()> {
    let clipped = write_image(output(g, path)?, img, depth, g.gamma.into())?;
    if clipped > 0.0 {
        log::info!("{}: {:.3}% of pixels clipped", path.display(), clipped * 100.0);
    }
    Ok(())
}

fn emit_json<T: Serialize>(g: &GlobalOpts, out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(output(g, p)?, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn mode_from_args(f: &FlickerArgs) -> Result<Option<WaveformMode>> {
    Ok(match (f.mode, f.duty) {
        (None, None) => None,
        (None, Some(_)) => return Err(usage("--duty needs --mode pwm")),
        (Some(ModeArg::Full), None) => Some(WaveformMode::FullWave),
        (Some(ModeArg::Half), None) => Some(WaveformMode::HalfWave),
        (Some(ModeArg::Full | ModeArg::Half), Some(_)) => return Err(usage("--duty only applies to --mode pwm")),
        (Some(ModeArg::Pwm), d) => Some(WaveformMode::Pwm { duty: d.unwrap_or(0.5) }),
    })
}

fn k_from_args(k: &[f64]) -> Result<[f64; 3]> {
    match *k {
        [v] => Ok([v; 3]),
        [r, g, b] => Ok([r, g, b]),
        _ => Err(usage("--k takes one value or three (R,G,B)")),
    }
}

fn spec_from_args(f: &FlickerArgs, mode: WaveformMode, phase: f64) -> Result<FlickerSpec> {
    FlickerSpec::new(mode, f.enf, f.frow, phase, k_from_args(&f.k)?).map_err(|e| usage(e.to_string()))
}

fn warn_few_cycles(nu: f64, rows: usize) {
    let cycles = nu * rows as f64;
    if cycles < MIN_VISIBLE_CYCLES {
        log::warn!(
            "only {cycles:.2} intensity cycles visible over {rows} rows; frequency estimates are unreliable, pass --nu if known"
        );
    }
}

pub fn synth(g: &GlobalOpts, a: SynthArgs) -> Result<()> {
    let mode = mode_from_args(&a.flicker)?.ok_or_else(|| usage("synth needs --mode"))?;
    let spec = spec_from_args(&a.flicker, mode, a.phase)?;
    let (clean, depth) = read(g, &a.input)?;
    let out = apply_flicker(&clean, &spec)?;
    write(g, &a.out, &out, a.depth.map_or(depth, Into::into))?;
    if let Some(p) = &a.spec_out {
        write_json(output(g, p)?, &spec)?;
    }
    Ok(())
}

pub fn burst(g: &GlobalOpts, a: BurstArgs) -> Result<()> {
    let (clean, _) = read(g, &a.input)?;
    let seed = RngSeed(a.seed);
    let base = match mode_from_args(&a.flicker)? {
        Some(mode) => spec_from_args(&a.flicker, mode, 0.0)?,
        None => FlickerSampling::default().sample(&mut seed.stream(0), clean.height())?,
    };
    let mut spec = BurstSpec::new(a.frames, base, seed.derive(1));
    spec.phases = a.phases;
    spec.shake = ShakeRange {
        rotation_deg: a.shake_rot,
        translation_px: a.shake_trans,
    };
    spec.validate(clean.height(), clean.width())
        .map_err(|e| usage(e.to_string()))?;
    warn_few_cycles(base.intensity_cycles_per_row(), clean.height());
    let burst = synth_burst(&clean, &spec)?;
    let mut clipped = Vec::with_capacity(burst.frames.len());
    for (i, frame) in burst.frames.iter().enumerate() {
        let path = a.out_dir.join(format!("frame_{i:02}.png"));
        clipped.push(write_image(output(g, &path)?, frame, a.depth.into(), g.gamma.into())?);
    }
    let record = SyntheticRecord {
        background: a.input.display().to_string(),
        burst: spec,
        frame_specs: burst.specs,
        shakes: burst.shakes,
        clipped_fraction: clipped,
    };
    write_json(output(g, &a.out_dir.join("spec.json"))?, &record)?;
    log::info!("wrote {} frames to {}", a.frames, a.out_dir.display());
    Ok(())
}

/// Per-frame specs from a burst record, a list, or a single spec.
#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Record(Box<SyntheticRecord>),
    List(Vec<FlickerSpec>),
    Single(FlickerSpec),
}

fn load_specs(path: &Path) -> Result<Vec<FlickerSpec>> {
    let specs = match read_json::<SpecFile>(path)? {
        SpecFile::Record(r) => r.frame_specs,
        SpecFile::List(l) => l,
        SpecFile::Single(s) => vec![s],
    };
    for s in &specs {
        s.validate().with_context(|| format!("{}", path.display()))?;
    }
    Ok(specs)
}

#[derive(Deserialize)]
struct ClipFrame {
    frame: PathBuf,
    alpha: PathBuf,
}

#[derive(Deserialize)]
struct ClipFile {
    frames: Vec<ClipFrame>,
    #[serde(default)]
    placement: Placement,
}

fn burst_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("frame_") && name.ends_with(".png")
        })
        .collect();
    frames.sort();
    Ok(frames)
}

pub fn composite(g: &GlobalOpts, a: CompositeArgs) -> Result<()> {
    let frame_paths = burst_frames(&a.bg_dir)?;
    if frame_paths.len() < a.frames {
        bail!(
            "{} holds {} flicker frames, {} requested",
            a.bg_dir.display(),
            frame_paths.len(),
            a.frames
        );
    }
    let bg = frame_paths[..a.frames]
        .iter()
        .map(|p| read(g, p).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let (clean, _) = read(g, &a.clean)?;

    let clip_file: ClipFile = read_json(&a.clip)?;
    let base = a.clip.parent().unwrap_or(Path::new("."));
    let mut fg = Vec::with_capacity(clip_file.frames.len());
    let mut alphas = Vec::with_capacity(clip_file.frames.len());
    for f in &clip_file.frames {
        fg.push(read(g, &base.join(&f.frame))?.0);
        alphas.push(read_matte(&base.join(&f.alpha))?);
    }
    let clip = ForegroundClip::new(fg, alphas, clip_file.placement)?;

    let specs = if a.flicker_on_fg {
        let path = a.spec.clone().unwrap_or_else(|| a.bg_dir.join("spec.json"));
        if !path.is_file() {
            return Err(usage(format!(
                "--flicker-on-fg needs per-frame specs; {} not found (use --spec)",
                path.display()
            )));
        }
        let mut s = load_specs(&path)?;
        if s.len() < a.frames {
            bail!("{} describes {} frames, {} requested", path.display(), s.len(), a.frames);
        }
        s.truncate(a.frames);
        Some(s)
    } else {
        None
    };
    let pair = composite_dynamic_pair(&bg, &clean, &clip, a.flicker_on_fg, specs.as_deref())?;
    let mut clean_frames = Vec::with_capacity(a.frames);
    for (i, (f, c)) in pair.flicker_frames.iter().zip(&pair.clean_frames).enumerate() {
        write(g, &a.out_dir.join(format!("frame_{i:02}.png")), f, a.depth.into())?;
        let clean_name = PathBuf::from(format!("clean_{i:02}.png"));
        write(g, &a.out_dir.join(&clean_name), c, a.depth.into())?;
        clean_frames.push(clean_name);
    }
    let record = CompositeRecord {
        foreground: a.clip.display().to_string(),
        placement: clip.placement,
        flicker_on_foreground: a.flicker_on_fg,
        clean_frames,
    };
    write_json(output(g, &a.out_dir.join("composite.json"))?, &record)?;
    Ok(())
}

fn read_burst(g: &GlobalOpts, paths: &[PathBuf]) -> Result<Vec<ImageBuffer>> {
    paths.iter().map(|p| read(g, p).map(|r| r.0)).collect()
}

pub fn estimate(g: &GlobalOpts, a: EstimateArgs) -> Result<()> {
    let frames = read_burst(g, &a.frames)?;
    let est = estimate_burst(&frames, a.nu)?;
    if a.nu.is_none() {
        warn_few_cycles(est.nu, frames[0].height());
    }
    log::info!("{} at {:.4e} cycles/row, residual {:.3e}", est.mode.name(), est.nu, est.residual);
    emit_json(g, a.out.as_deref(), &est)
}

pub fn deflicker(g: &GlobalOpts, a: DeflickerArgs) -> Result<()> {
    let frames = read_burst(g, &a.frames)?;
    let cfg = FusionConfig {
        weighting: match a.weighting {
            WeightingArg::Gain => Weighting::GainProportional,
            WeightingArg::Uniform => Weighting::Uniform,
            WeightingArg::InverseVariance => Weighting::InverseVariance,
        },
        ..Default::default()
    };
    let specs = a.spec.as_deref().map(load_specs).transpose()?;
    let source = match &specs {
        Some(s) => {
            if s.len() != frames.len() {
                bail!("{} specs for {} frames", s.len(), frames.len());
            }
            GainSource::Specs(s)
        }
        None if frames.len() < 2 => return Err(usage("a single frame needs --spec; blind removal needs a burst")),
        None => GainSource::Estimate { nu: a.nu },
    };
    let restored = deflicker_burst(&frames, source, &cfg)?;
    if let Some(est) = &restored.estimate {
        if a.nu.is_none() {
            warn_few_cycles(est.nu, frames[0].height());
        }
    }
    if restored.fallback_fraction > 0.0 {
        log::warn!(
            "{:.3}% of pixels had no valid frame and use the raw median",
            restored.fallback_fraction * 100.0
        );
    }
    write(g, &a.out, &restored.image, a.depth.into())?;
    if let Some(p) = &a.report {
        write_json(output(g, p)?, &restored.report())?;
    }
    Ok(())
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

pub fn evaluate(g: &GlobalOpts, a: EvaluateArgs) -> Result<()> {
    let mode = match a.ssim_mode {
        SsimModeArg::Luma => SsimMode::Luma,
        SsimModeArg::ChannelMean => SsimMode::ChannelMean,
    };
    let mut pairs: Vec<(String, PathBuf, PathBuf)> = Vec::new();
    if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        let name = pred.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        pairs.push((name, pred.clone(), gt.clone()));
    } else {
        let pred_dir = a.pred_dir.as_ref().ok_or_else(|| usage("--pred-dir or --pred is required"))?;
        if let Some(mpath) = &a.manifest {
            let m = Manifest::load(mpath)?;
            let root = mpath.parent().unwrap_or(Path::new("."));
            for s in &m.scenes {
                if a.split.is_some_and(|want| Split::from(want) != s.split) {
                    continue;
                }
                let file = format!("{}.png", s.scene_id);
                let gt = match &a.gt_dir {
                    Some(d) => d.join(&file),
                    None => root.join(&s.clean),
                };
                pairs.push((s.scene_id.clone(), pred_dir.join(&file), gt));
            }
        } else {
            let gt_dir = a.gt_dir.as_ref().ok_or_else(|| usage("--gt-dir is required without --manifest"))?;
            for name in png_names(pred_dir)? {
                pairs.push((name.clone(), pred_dir.join(&name), gt_dir.join(&name)));
            }
        }
    }
    if pairs.is_empty() {
        bail!("nothing to evaluate");
    }
    // scores are taken on the stored code values scaled to [0, 1]
    let reports = pairs
        .iter()
        .map(|(name, pred, gt)| {
            let (p, _) = read_image(pred, Gamma::Linear)?;
            let (t, _) = read_image(gt, Gamma::Linear)?;
            Ok(evaluate_pair(name.clone(), &p, &t, mode).with_context(|| name.clone())?)
        })
        .collect::<Result<Vec<MetricReport>>>()?;
    let summary = MetricSummary::from_reports(reports);
    log::info!(
        "{} images: mean PSNR {:.2} dB, mean SSIM {:.4}",
        summary.images.len(),
        summary.mean_psnr_db,
        summary.mean_ssim
    );
    emit_json(g, a.out.as_deref(), &summary)
}

pub fn generate(g: &GlobalOpts, a: GenerateArgs) -> Result<()> {
    let cfg = DatasetConfig {
        frames: a.frames,
        train_ratio: a.split,
        gamma: g.gamma.into(),
        depth: a.depth.into(),
        ..Default::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    output(g, &a.out.join(MANIFEST_FILE))?;
    let m = generate_dataset(&a.backgrounds, &a.out, &cfg, RngSeed(a.seed))?;
    for s in &m.skipped {
        log::warn!("skipped {}: {}", s.path, s.reason);
    }
    let (train, test) = m.split_counts();
    log::info!("{} scenes ({train} train / {test} test) in {}", m.scenes.len(), a.out.display());
    Ok(())
}

pub fn validate(path: &Path) -> Result<()> {
    let report = validate_manifest(path)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    if !report.is_ok() {
        bail!("{} violation(s) in {}", report.violations.len(), path.display());
    }
    Ok(())
}
