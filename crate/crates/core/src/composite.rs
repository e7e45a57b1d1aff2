//! Alpha compositing of moving foregrounds onto flickering backgrounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FlickerSpec;
use crate::raster::{ImageBuffer, Matte, CHANNELS};
use crate::warp::{resize_image_any, resize_matte};
use crate::waveform::{gain_profile, GainProfile};

/// Where a foreground lands on the background: bilinear scale, then an
/// integer offset of its top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub scale: f64,
    /// `(x, y)` in background pixels; may be negative.
    pub offset: (i64, i64),
}

impl Default for Placement {
    fn default() -> Self {
        Placement {
            scale: 1.0,
            offset: (0, 0),
        }
    }
}

impl Placement {
    /// Rounds a fractional offset to the nearest pixel.
    pub fn new(scale: f64, offset: (f64, f64)) -> Result<Self> {
        let p = Placement {
            scale,
            offset: (offset.0.round() as i64, offset.1.round() as i64),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid(format!("placement scale {} must be positive", self.scale)));
        }
        Ok(())
    }

    fn scaled_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let s = |n: usize| ((n as f64 * self.scale).round() as usize).max(1);
        (s(h), s(w))
    }
}

/// Foreground frames with their mattes.
#[derive(Clone, Debug)]
pub struct ForegroundClip {
    pub frames: Vec<ImageBuffer>,
    pub alphas: Vec<Matte>,
    pub placement: Placement,
}

impl ForegroundClip {
    pub fn new(frames: Vec<ImageBuffer>, alphas: Vec<Matte>, placement: Placement) -> Result<Self> {
        if frames.len() != alphas.len() {
            return Err(Error::invalid(format!(
                "{} foreground frames but {} mattes",
                frames.len(),
                alphas.len()
            )));
        }
        for (f, a) in frames.iter().zip(&alphas) {
            check_matte(f, a)?;
        }
        placement.validate()?;
        Ok(ForegroundClip {
            frames,
            alphas,
            placement,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn check_matte(fg: &ImageBuffer, alpha: &Matte) -> Result<()> {
    if fg.dims() != alpha.dims() {
        return Err(Error::DimensionMismatch(format!(
            "foreground {}x{} vs matte {}x{}",
            fg.height(),
            fg.width(),
            alpha.height(),
            alpha.width()
        )));
    }
    Ok(())
}

/// Foreground and matte after scaling.
struct Placed {
    fg: ImageBuffer,
    alpha: Matte,
    offset: (i64, i64),
}

fn place(fg: &ImageBuffer, alpha: &Matte, placement: &Placement) -> Result<Placed> {
    check_matte(fg, alpha)?;
    placement.validate()?;
    let (h, w) = placement.scaled_dims(fg.height(), fg.width());
    let (fg, alpha) = if (h, w) == fg.dims() {
        (fg.clone(), alpha.clone())
    } else {
        (resize_image_any(fg, h, w)?, resize_matte(alpha, h, w)?)
    };
    Ok(Placed {
        fg,
        alpha,
        offset: placement.offset,
    })
}

/// Over-operator of a placed foreground onto `bg`, optionally multiplying the
/// foreground by a per-row gain of the output image first.
fn over(placed: &Placed, bg: &ImageBuffer, fg_gain: Option<&GainProfile>) -> Result<ImageBuffer> {
    let (h, w) = bg.dims();
    let (fh, fw) = placed.fg.dims();
    let (ox, oy) = placed.offset;
    let mut out = bg.data().to_vec();
    out.par_chunks_mut(w * CHANNELS).enumerate().for_each(|(y, row)| {
        let fy = y as i64 - oy;
        if fy < 0 || fy >= fh as i64 {
            return;
        }
        let fy = fy as usize;
        let gain = fg_gain.map(|g| g.row(y));
        for x in 0..w {
            let fx = x as i64 - ox;
            if fx < 0 || fx >= fw as i64 {
                continue;
            }
            let fx = fx as usize;
            let a = placed.alpha.get(fy, fx);
            if a == 0.0 {
                continue;
            }
            for c in 0..CHANNELS {
                let mut f = placed.fg.get(fy, fx, c);
                if let Some(g) = gain {
                    f *= g[c];
                }
                let b = &mut row[x * CHANNELS + c];
                *b = if a == 1.0 { f } else { a * f + (1.0 - a) * *b };
            }
        }
    });
    ImageBuffer::from_vec(h, w, out)
}

/// `α·F + (1−α)·B` in linear light; pixels outside the placed foreground or
/// with α = 0 keep the background value exactly.
pub fn alpha_over(fg: &ImageBuffer, alpha: &Matte, bg: &ImageBuffer, placement: &Placement) -> Result<ImageBuffer> {
    over(&place(fg, alpha, placement)?, bg, None)
}

/// Aligned flickering and clean composites sharing one foreground per frame.
#[derive(Clone, Debug)]
pub struct DynamicPair {
    pub flicker_frames: Vec<ImageBuffer>,
    pub clean_frames: Vec<ImageBuffer>,
    /// Per-frame flicker provenance when known.
    pub specs: Option<Vec<FlickerSpec>>,
}

/// Composites clip frame `i` onto flickering background `i` and onto the
/// shared clean background, for every background frame.
///
/// With `flicker_on_fg`, the row gain of frame `i` also modulates the
/// foreground of the flickering composite; this needs `specs`.
pub fn composite_dynamic_pair(
    bg_flicker: &[ImageBuffer],
    bg_clean: &ImageBuffer,
    clip: &ForegroundClip,
    flicker_on_fg: bool,
    specs: Option<&[FlickerSpec]>,
) -> Result<DynamicPair> {
    let n = bg_flicker.len();
    if clip.len() < n {
        return Err(Error::NotEnoughFrames {
            needed: n,
            got: clip.len(),
        });
    }
    for bg in bg_flicker {
        if !bg.same_dims(bg_clean) {
            return Err(Error::DimensionMismatch("background frames differ from the clean background".into()));
        }
    }
    if let Some(s) = specs {
        if s.len() != n {
            return Err(Error::invalid(format!("{} specs for {n} background frames", s.len())));
        }
    }
    let gains: Option<Vec<GainProfile>> = match (flicker_on_fg, specs) {
        (false, _) => None,
        (true, None) => return Err(Error::invalid("foreground flicker needs per-frame specs")),
        (true, Some(s)) => Some(
            s.iter()
                .map(|spec| gain_profile(spec, bg_clean.height()))
                .collect::<Result<_>>()?,
        ),
    };
    let frames: Vec<(ImageBuffer, ImageBuffer)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let placed = place(&clip.frames[i], &clip.alphas[i], &clip.placement)?;
            let gain = gains.as_ref().map(|g| &g[i]);
            Ok((over(&placed, &bg_flicker[i], gain)?, over(&placed, bg_clean, None)?))
        })
        .collect::<Result<_>>()?;
    let (flicker_frames, clean_frames) = frames.into_iter().unzip();
    Ok(DynamicPair {
        flicker_frames,
        clean_frames,
        specs: specs.map(<[FlickerSpec]>::to_vec),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WaveformMode;
    use crate::synth::apply_flicker;
    use proptest::prelude::*;

    fn bg(h: usize, w: usize, shift: f64) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, |y, x| {
            let v = 0.2 + 0.1 * ((x as f64 * 0.4 + shift).sin() + (y as f64 * 0.3).cos());
            [v, 0.5 * v, 0.9 - v]
        })
        .unwrap()
    }

    fn disc(h: usize, w: usize) -> Matte {
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        let r = h.min(w) as f64 / 3.0;
        let data = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                (r + 1.0 - d).clamp(0.0, 1.0)
            })
            .collect();
        Matte::from_vec(h, w, data).unwrap()
    }

    #[test]
    fn zero_alpha_is_background() {
        let b = bg(20, 24, 0.0);
        let fg = ImageBuffer::filled(10, 10, [1.0; 3]).unwrap();
        let out = alpha_over(&fg, &Matte::filled(10, 10, 0.0).unwrap(), &b, &Placement::default()).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn unit_alpha_is_foreground() {
        let b = bg(20, 24, 0.0);
        let fg = bg(8, 6, 2.0);
        let p = Placement { scale: 1.0, offset: (5, 3) };
        let out = alpha_over(&fg, &Matte::filled(8, 6, 1.0).unwrap(), &b, &p).unwrap();
        for y in 0..20 {
            for x in 0..24 {
                let inside = (3..11).contains(&y) && (5..11).contains(&x);
                let want = if inside { fg.pixel(y - 3, x - 5) } else { b.pixel(y, x) };
                assert_eq!(out.pixel(y, x), want);
            }
        }
    }

    #[test]
    fn half_alpha_midpoint() {
        let b = ImageBuffer::filled(8, 8, [0.0; 3]).unwrap();
        let fg = ImageBuffer::filled(8, 8, [1.0; 3]).unwrap();
        let out = alpha_over(&fg, &Matte::filled(8, 8, 0.5).unwrap(), &b, &Placement::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn out_of_bounds_is_clipped_and_scaling_applies() {
        let b = bg(16, 16, 0.0);
        let fg = ImageBuffer::filled(8, 8, [0.7; 3]).unwrap();
        let p = Placement::new(2.0, (-4.4, 10.0)).unwrap();
        assert_eq!(p.offset, (-4, 10));
        let out = alpha_over(&fg, &Matte::filled(8, 8, 1.0).unwrap(), &b, &p).unwrap();
        // scaled to 16x16, covers x in [0, 12), y in [10, 16)
        assert_eq!(out.pixel(12, 3), [0.7; 3]);
        assert_eq!(out.pixel(12, 12), b.pixel(12, 12));
        assert_eq!(out.pixel(9, 3), b.pixel(9, 3));
    }

    #[test]
    fn matte_mismatch_is_error() {
        let b = bg(16, 16, 0.0);
        let fg = ImageBuffer::filled(8, 8, [0.7; 3]).unwrap();
        assert!(alpha_over(&fg, &Matte::filled(8, 7, 1.0).unwrap(), &b, &Placement::default()).is_err());
        assert!(ForegroundClip::new(vec![fg.clone()], vec![], Placement::default()).is_err());
    }

    fn clip(n: usize, alpha: Option<f64>) -> ForegroundClip {
        let frames = (0..n).map(|i| bg(12, 10, i as f64)).collect();
        let alphas = (0..n)
            .map(|_| match alpha {
                Some(a) => Matte::filled(12, 10, a).unwrap(),
                None => disc(12, 10),
            })
            .collect();
        ForegroundClip::new(frames, alphas, Placement { scale: 1.0, offset: (6, 4) }).unwrap()
    }

    fn specs(n: usize) -> Vec<FlickerSpec> {
        (0..n)
            .map(|i| FlickerSpec::new(WaveformMode::FullWave, 50.0, 4000.0, i as f64 * 0.6, [0.3, 0.2, 0.5]).unwrap())
            .collect()
    }

    #[test]
    fn transparent_clip_passes_backgrounds_through() {
        let clean = bg(32, 32, 0.0);
        let s = specs(4);
        let flicker: Vec<ImageBuffer> = s.iter().map(|sp| apply_flicker(&clean, sp).unwrap()).collect();
        let pair = composite_dynamic_pair(&flicker, &clean, &clip(4, Some(0.0)), false, Some(&s)).unwrap();
        assert_eq!(pair.flicker_frames, flicker);
        assert!(pair.clean_frames.iter().all(|c| *c == clean));
    }

    #[test]
    fn ten_frame_pairs_share_foregrounds() {
        let clean = bg(32, 32, 0.0);
        let s = specs(10);
        let flicker: Vec<ImageBuffer> = s.iter().map(|sp| apply_flicker(&clean, sp).unwrap()).collect();
        let c = clip(12, None);
        let pair = composite_dynamic_pair(&flicker, &clean, &c, false, Some(&s)).unwrap();
        assert_eq!(pair.flicker_frames.len(), 10);
        assert_eq!(pair.clean_frames.len(), 10);
        for i in 0..10 {
            for y in 0..12 {
                for x in 0..10 {
                    if c.alphas[i].get(y, x) == 1.0 {
                        assert_eq!(pair.flicker_frames[i].pixel(y + 4, x + 6), pair.clean_frames[i].pixel(y + 4, x + 6));
                    }
                }
            }
        }
    }

    #[test]
    fn short_clip_is_error() {
        let clean = bg(32, 32, 0.0);
        let flicker = vec![clean.clone(); 5];
        assert!(matches!(
            composite_dynamic_pair(&flicker, &clean, &clip(4, None), false, None),
            Err(Error::NotEnoughFrames { needed: 5, got: 4 })
        ));
        assert!(composite_dynamic_pair(&flicker[..4], &clean, &clip(4, None), true, None).is_err());
    }

    #[test]
    fn flicker_on_foreground_matches_apply_flicker() {
        let clean = bg(32, 32, 0.0);
        let s = specs(2);
        let flicker: Vec<ImageBuffer> = s.iter().map(|sp| apply_flicker(&clean, sp).unwrap()).collect();
        let fg = bg(32, 32, 5.0);
        let c = ForegroundClip::new(vec![fg.clone(); 2], vec![Matte::filled(32, 32, 1.0).unwrap(); 2], Placement::default()).unwrap();
        let pair = composite_dynamic_pair(&flicker, &clean, &c, true, Some(&s)).unwrap();
        for (out, sp) in pair.flicker_frames.iter().zip(&s) {
            let want = apply_flicker(&fg, sp).unwrap();
            assert!(out.max_abs_diff(&want).unwrap() <= 1e-9);
        }
        assert!(pair.clean_frames.iter().all(|f| *f == fg));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn over_is_convex(a in 0.0f64..=1.0, f in 0.0f64..2.0, b in 0.0f64..2.0) {
            let bgi = ImageBuffer::filled(8, 8, [b; 3]).unwrap();
            let fgi = ImageBuffer::filled(8, 8, [f; 3]).unwrap();
            let out = alpha_over(&fgi, &Matte::filled(8, 8, a).unwrap(), &bgi, &Placement::default()).unwrap();
            for &v in out.data() {
                prop_assert!(v >= f.min(b) - 1e-15 && v <= f.max(b) + 1e-15);
            }
        }
    }
}
