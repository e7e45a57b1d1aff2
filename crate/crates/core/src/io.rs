//! PNG and JSON files. Every write goes to a temporary sibling first and is
//! renamed into place.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::color::{decode, encode, BitDepth, EncodedImage, Gamma};
use crate::error::{Error, Result};
use crate::raster::{ImageBuffer, Matte, CHANNELS};

/// Reads a PNG (or JPEG) as a 3-channel integer raster. Grayscale is promoted
/// to RGB and alpha is dropped.
pub fn read_encoded(path: &Path) -> Result<EncodedImage> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (depth, samples) = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            (BitDepth::Eight, img.into_rgb8().into_raw().into_iter().map(u16::from).collect())
        }
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => (BitDepth::Sixteen, img.into_rgb16().into_raw()),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{:?}", other.color()),
            })
        }
    };
    Ok(EncodedImage {
        height: h,
        width: w,
        channels: CHANNELS,
        depth,
        samples,
    })
}

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an image into linear light and reports the file's bit depth.
pub fn read_image(path: &Path, gamma: Gamma) -> Result<(ImageBuffer, BitDepth)> {
    let enc = read_encoded(path)?;
    Ok((decode(&enc, gamma)?, enc.depth))
}

/// Reads a matte from the first channel of a grayscale or colour image, or
/// from the alpha channel when there is one. No transfer curve is applied.
pub fn read_matte(path: &Path) -> Result<Matte> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = if img.color().has_alpha() {
        img.into_rgba16().pixels().map(|p| p.0[3] as f64 / u16::MAX as f64).collect()
    } else {
        img.into_luma16().into_raw().into_iter().map(|v| v as f64 / u16::MAX as f64).collect()
    };
    Matte::from_vec(h, w, data)
}

/// Writes an integer raster as PNG.
pub fn write_encoded(path: &Path, img: &EncodedImage) -> Result<()> {
    if img.channels != CHANNELS {
        return Err(Error::ChannelCount(img.channels));
    }
    let (w, h) = (img.width as u32, img.height as u32);
    let bad_len = || Error::BufferLength {
        height: img.height,
        width: img.width,
        channels: img.channels,
        found: img.samples.len(),
    };
    let dynamic = match img.depth {
        BitDepth::Eight => {
            let raw = img.samples.iter().map(|&v| v.min(255) as u8).collect();
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, raw).ok_or_else(bad_len)?)
        }
        BitDepth::Sixteen => DynamicImage::ImageRgb16(
            image::ImageBuffer::from_raw(w, h, img.samples.clone()).ok_or_else(bad_len)?,
        ),
    };
    atomic_write(path, |file| {
        let mut buf = std::io::Cursor::new(Vec::new());
        dynamic.write_to(&mut buf, ImageFormat::Png).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        file.write_all(buf.get_ref()).map_err(|e| Error::io(path, e))
    })
}

/// Encodes and writes a linear-light image; returns the clipped pixel fraction.
pub fn write_image(path: &Path, img: &ImageBuffer, depth: BitDepth, gamma: Gamma) -> Result<f64> {
    let enc = encode(img, depth, gamma);
    write_encoded(path, &enc.image)?;
    Ok(enc.clipped_fraction)
}

/// Writes a matte as a single-channel 16-bit PNG.
pub fn write_matte(path: &Path, matte: &Matte) -> Result<()> {
    let raw: Vec<u16> = matte.data().iter().map(|&a| (a * u16::MAX as f64).round() as u16).collect();
    let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(matte.width() as u32, matte.height() as u32, raw)
            .ok_or_else(|| Error::invalid("matte buffer length mismatch"))?;
    atomic_write(path, |file| {
        let mut buf = std::io::Cursor::new(Vec::new());
        DynamicImage::ImageLuma16(img)
            .write_to(&mut buf, ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?;
        file.write_all(buf.get_ref()).map_err(|e| Error::io(path, e))
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, |file| {
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

/// Runs `fill` on a temporary file next to `path`, then renames it over `path`.
pub fn atomic_write(path: &Path, fill: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    fill(tmp.as_file_mut())?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, |y, x| [x as f64 / w as f64, y as f64 / h as f64, 0.25]).unwrap()
    }

    #[test]
    fn png_round_trip_16_bit_linear() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = ramp(12, 20);
        write_image(&p, &img, BitDepth::Sixteen, Gamma::Linear).unwrap();
        let (back, depth) = read_image(&p, Gamma::Linear).unwrap();
        assert_eq!(depth, BitDepth::Sixteen);
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 65535.0 + 1e-12);
    }

    #[test]
    fn encoded_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.png");
        let enc = EncodedImage {
            height: 9,
            width: 8,
            channels: 3,
            depth: BitDepth::Eight,
            samples: (0..9 * 8 * 3).map(|i| (i * 7 % 256) as u16).collect(),
        };
        write_encoded(&p, &enc).unwrap();
        assert_eq!(read_encoded(&p).unwrap(), enc);
    }

    #[test]
    fn gray_is_promoted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let gray = image::GrayImage::from_fn(8, 8, |x, y| image::Luma([(x * 30 + y) as u8]));
        gray.save(&p).unwrap();
        let enc = read_encoded(&p).unwrap();
        assert_eq!(enc.channels, 3);
        assert_eq!(&enc.samples[3..6], &[30, 30, 30]);
        let m = read_matte(&p).unwrap();
        assert!((m.get(0, 1) - 30.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn matte_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Matte::from_vec(8, 8, (0..64).map(|i| i as f64 / 63.0).collect()).unwrap();
        write_matte(&p, &m).unwrap();
        let back = read_matte(&p).unwrap();
        for (a, b) in back.data().iter().zip(m.data()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_encoded(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/v.json");
        write_json(&p, &vec![1, 2, 3]).unwrap();
        let v: Vec<i32> = read_json(&p).unwrap();
        assert_eq!(v, [1, 2, 3]);
        assert!(fs::read_to_string(&p).unwrap().ends_with('\n'));
    }
}
