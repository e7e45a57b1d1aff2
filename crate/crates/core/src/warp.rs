//! Bilinear geometric resampling: handheld-shake warps and resizing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ImageBuffer, Matte, CHANNELS, MIN_PIPELINE_DIM};

/// Reflect-101 border: `-1 → 1`, `n → n-2`; the edge sample is not repeated.
#[inline]
pub(crate) fn reflect101(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as i64;
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m >= n { period - m } else { m }) as usize
}

/// Bilinear sample of channel-interleaved data at continuous `(fy, fx)`.
#[inline]
fn sample_reflect(
    data: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    fy: f64,
    fx: f64,
    out: &mut [f64],
) {
    let y0 = fy.floor();
    let x0 = fx.floor();
    let ty = fy - y0;
    let tx = fx - x0;
    let (y0, x0) = (y0 as i64, x0 as i64);
    let ya = reflect101(y0, height);
    let yb = reflect101(y0 + 1, height);
    let xa = reflect101(x0, width);
    let xb = reflect101(x0 + 1, width);
    let at = |y: usize, x: usize, c: usize| data[(y * width + x) * channels + c];
    for (c, o) in out.iter_mut().enumerate().take(channels) {
        let top = (1.0 - tx) * at(ya, xa, c) + tx * at(ya, xb, c);
        let bottom = (1.0 - tx) * at(yb, xa, c) + tx * at(yb, xb, c);
        *o = (1.0 - ty) * top + ty * bottom;
    }
}

/// Per-frame camera motion: rotation about the image centre followed by a translation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShakeParams {
    /// Counter-clockwise on screen, degrees.
    pub rotation_deg: f64,
    /// Translation in pixels, +x right, +y down.
    pub dx: f64,
    pub dy: f64,
}

impl ShakeParams {
    pub fn is_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.dx == 0.0 && self.dy == 0.0
    }
}

/// Rotates `img` about its centre by `rotation_deg`, then translates by `(dx, dy)`.
///
/// Output pixels are inverse-mapped into the source and sampled bilinearly with
/// reflect-101 borders, so no black wedges appear. Output size is unchanged.
pub fn shake_warp(img: &ImageBuffer, rotation_deg: f64, translation: (f64, f64)) -> Result<ImageBuffer> {
    let (dx, dy) = translation;
    if !(rotation_deg.is_finite() && dx.is_finite() && dy.is_finite()) {
        return Err(Error::invalid("shake parameters must be finite"));
    }
    let (h, w) = img.dims();
    if rotation_deg == 0.0 && dx == 0.0 && dy == 0.0 {
        return Ok(img.clone());
    }
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) * 0.5;
    let cy = (h as f64 - 1.0) * 0.5;
    let src = img.data();
    let mut data = vec![0.0; src.len()];
    for (y, row) in data.chunks_exact_mut(w * CHANNELS).enumerate() {
        for (x, px) in row.chunks_exact_mut(CHANNELS).enumerate() {
            // forward: p' = R (p - c) + c + t with R = [[cos, sin], [-sin, cos]]
            let u = x as f64 - dx - cx;
            let v = y as f64 - dy - cy;
            let sx = cos * u - sin * v + cx;
            let sy = sin * u + cos * v + cy;
            sample_reflect(src, h, w, CHANNELS, sy, sx, px);
        }
    }
    ImageBuffer::from_vec(h, w, data)
}

/// A resized image and how its row frequencies moved.
#[derive(Clone, Debug)]
pub struct Resized {
    pub image: ImageBuffer,
    /// Factor applied to any cycles-per-row frequency, `old_height / new_height`.
    /// Cycles per image are unchanged.
    pub row_frequency_scale: f64,
}

/// Bilinear resize with pixel-centre alignment and clamped edges.
pub fn resize(img: &ImageBuffer, new_h: usize, new_w: usize) -> Result<Resized> {
    if new_h < MIN_PIPELINE_DIM || new_w < MIN_PIPELINE_DIM {
        return Err(Error::TooSmall {
            height: new_h,
            width: new_w,
            min: MIN_PIPELINE_DIM,
        });
    }
    let data = resize_interleaved(img.data(), img.height(), img.width(), CHANNELS, new_h, new_w);
    Ok(Resized {
        image: ImageBuffer::from_vec(new_h, new_w, data)?,
        row_frequency_scale: img.height() as f64 / new_h as f64,
    })
}

pub(crate) fn resize_image_any(img: &ImageBuffer, new_h: usize, new_w: usize) -> Result<ImageBuffer> {
    let data = resize_interleaved(img.data(), img.height(), img.width(), CHANNELS, new_h, new_w);
    ImageBuffer::from_vec(new_h, new_w, data)
}

pub(crate) fn resize_matte(m: &Matte, new_h: usize, new_w: usize) -> Result<Matte> {
    let mut data = resize_interleaved(m.data(), m.height(), m.width(), 1, new_h, new_w);
    // convex weights keep values in range; clamp away rounding residue
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Matte::from_vec(new_h, new_w, data)
}

fn resize_interleaved(
    src: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    new_h: usize,
    new_w: usize,
) -> Vec<f64> {
    if (h, w) == (new_h, new_w) {
        return src.to_vec();
    }
    let axis = |n_src: usize, n_dst: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_src as f64 / n_dst as f64;
        (0..n_dst)
            .map(|i| {
                let f = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
                let i0 = f.floor() as usize;
                let i1 = (i0 + 1).min(n_src - 1);
                (i0, i1, f - i0 as f64)
            })
            .collect()
    };
    let ys = axis(h, new_h);
    let xs = axis(w, new_w);
    let mut out = Vec::with_capacity(new_h * new_w * channels);
    let at = |y: usize, x: usize, c: usize| src[(y * w + x) * channels + c];
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for c in 0..channels {
                let top = (1.0 - tx) * at(y0, x0, c) + tx * at(y0, x1, c);
                let bottom = (1.0 - tx) * at(y1, x0, c) + tx * at(y1, x1, c);
                out.push((1.0 - ty) * top + ty * bottom);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, |y, x| {
            let fy = y as f64 / h as f64;
            let fx = x as f64 / w as f64;
            [fx * fx, 0.3 + 0.5 * fy * fx, ((x * 7 + y * 3) % 11) as f64 / 11.0]
        })
        .unwrap()
    }

    #[test]
    fn reflect101_policy() {
        assert_eq!(reflect101(-1, 5), 1);
        assert_eq!(reflect101(-2, 5), 2);
        assert_eq!(reflect101(5, 5), 3);
        assert_eq!(reflect101(6, 5), 2);
        assert_eq!(reflect101(3, 5), 3);
        assert_eq!(reflect101(-9, 5), 1);
        assert_eq!(reflect101(7, 1), 0);
    }

    #[test]
    fn zero_shake_is_identity() {
        let img = pattern(32, 40);
        assert_eq!(shake_warp(&img, 0.0, (0.0, 0.0)).unwrap().max_abs_diff(&img), Some(0.0));
    }

    #[test]
    fn integer_shift_round_trip_interior() {
        let img = pattern(32, 40);
        let there = shake_warp(&img, 0.0, (3.0, 0.0)).unwrap();
        // shifted content is sampled exactly
        assert_eq!(there.pixel(10, 20), img.pixel(10, 17));
        let back = shake_warp(&there, 0.0, (-3.0, 0.0)).unwrap();
        for y in 0..32 {
            for x in 0..40 - 3 {
                for c in 0..3 {
                    assert!((back.get(y, x, c) - img.get(y, x, c)).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn rotation_90_matches_index_permutation() {
        let n = 64;
        let img = pattern(n, n);
        let rot = shake_warp(&img, 90.0, (0.0, 0.0)).unwrap();
        // counter-clockwise by 90° on screen: the source of output (y, x) is (x', y') = (n-1-y, x)
        for y in 0..n {
            for x in 0..n {
                let src = img.pixel(x, n - 1 - y);
                for c in 0..3 {
                    assert!((rot.get(y, x, c) - src[c]).abs() < 1e-9, "({y},{x})");
                }
            }
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = pattern(16, 24);
        assert_eq!(resize(&img, 16, 24).unwrap().image, img);
        let flat = ImageBuffer::filled(20, 30, [0.37, 0.5, 0.91]).unwrap();
        let r = resize(&flat, 13, 41).unwrap();
        assert!((r.row_frequency_scale - 20.0 / 13.0).abs() < 1e-15);
        for px in r.image.data().chunks(3) {
            assert!((px[0] - 0.37).abs() < 1e-9 && (px[1] - 0.5).abs() < 1e-9 && (px[2] - 0.91).abs() < 1e-9);
        }
    }

    #[test]
    fn resize_rejects_tiny() {
        assert!(resize(&pattern(16, 16), 7, 16).is_err());
    }
}
