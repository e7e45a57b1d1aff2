//! sRGB transfer and integer quantization at the I/O boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ImageBuffer, CHANNELS};

/// How encoded file values relate to linear light.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gamma {
    /// File values are already linear; only integer normalization is applied.
    Linear,
    /// File values are sRGB encoded.
    #[default]
    Srgb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_code(self) -> u16 {
        match self {
            BitDepth::Eight => u8::MAX as u16,
            BitDepth::Sixteen => u16::MAX,
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}

/// Integer raster as stored in a file, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub depth: BitDepth,
    pub samples: Vec<u16>,
}

/// Result of [`encode`]: the integer raster and the share of pixels that had
/// at least one channel clamped into [0, 1].
#[derive(Clone, Debug)]
pub struct Encoded {
    pub image: EncodedImage,
    pub clipped_fraction: f64,
}

/// sRGB electro-optical transfer: encoded [0,1] → linear [0,1].
#[inline]
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse sRGB transfer: linear [0,1] → encoded [0,1].
#[inline]
pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Normalizes integer codes and applies the sRGB transfer.
pub fn srgb_decode(encoded: &EncodedImage) -> Result<ImageBuffer> {
    decode(encoded, Gamma::Srgb)
}

pub fn decode(encoded: &EncodedImage, gamma: Gamma) -> Result<ImageBuffer> {
    if encoded.channels != CHANNELS {
        return Err(Error::ChannelCount(encoded.channels));
    }
    let scale = f64::from(encoded.depth.max_code());
    let data = encoded
        .samples
        .iter()
        .map(|&code| {
            let v = f64::from(code) / scale;
            match gamma {
                Gamma::Linear => v,
                Gamma::Srgb => srgb_to_linear(v),
            }
        })
        .collect();
    ImageBuffer::from_vec(encoded.height, encoded.width, data)
}

/// Clamps to [0,1], applies the inverse sRGB transfer and quantizes.
pub fn srgb_encode(linear: &ImageBuffer, depth: BitDepth) -> Encoded {
    encode(linear, depth, Gamma::Srgb)
}

pub fn encode(linear: &ImageBuffer, depth: BitDepth, gamma: Gamma) -> Encoded {
    let scale = f64::from(depth.max_code());
    let mut clipped_pixels = 0usize;
    let mut samples = Vec::with_capacity(linear.data().len());
    for px in linear.data().chunks_exact(CHANNELS) {
        let mut clipped = false;
        for &v in px {
            let c = v.clamp(0.0, 1.0);
            clipped |= c != v;
            let e = match gamma {
                Gamma::Linear => c,
                Gamma::Srgb => linear_to_srgb(c),
            };
            samples.push((e * scale).round().clamp(0.0, scale) as u16);
        }
        clipped_pixels += usize::from(clipped);
    }
    let pixels = linear.height() * linear.width();
    Encoded {
        image: EncodedImage {
            height: linear.height(),
            width: linear.width(),
            channels: CHANNELS,
            depth,
            samples,
        },
        clipped_fraction: clipped_pixels as f64 / pixels as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_codes(depth: BitDepth, codes: &[u16]) -> EncodedImage {
        let mut samples = Vec::new();
        for &c in codes {
            samples.extend_from_slice(&[c, c, c]);
        }
        EncodedImage {
            height: 1,
            width: codes.len(),
            channels: 3,
            depth,
            samples,
        }
    }

    #[test]
    fn transfer_fixed_points() {
        assert_eq!(srgb_to_linear(0.0), 0.0);
        assert_eq!(srgb_to_linear(1.0), 1.0);
        assert_eq!(linear_to_srgb(0.0), 0.0);
        assert!((linear_to_srgb(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn transfer_midpoint() {
        let expected = ((0.5f64 + 0.055) / 1.055).powf(2.4);
        assert!((srgb_to_linear(0.5) - expected).abs() < 1e-15);
        assert!((srgb_to_linear(0.5) - 0.2140).abs() < 5e-5);
    }

    #[test]
    fn transfer_is_continuous_at_knee() {
        let below = 0.04045 / 12.92;
        let above = ((0.04045f64 + 0.055) / 1.055).powf(2.4);
        assert!((below - above).abs() < 1e-7);
    }

    #[test]
    fn rejects_non_rgb() {
        let img = EncodedImage {
            height: 2,
            width: 2,
            channels: 1,
            depth: BitDepth::Eight,
            samples: vec![0; 4],
        };
        assert!(matches!(srgb_decode(&img), Err(Error::ChannelCount(1))));
    }

    #[test]
    fn every_8bit_code_round_trips_exactly() {
        let codes: Vec<u16> = (0..=255).collect();
        let enc = gray_codes(BitDepth::Eight, &codes);
        let lin = srgb_decode(&enc).unwrap();
        let back = srgb_encode(&lin, BitDepth::Eight);
        assert_eq!(back.image.samples, enc.samples);
        assert_eq!(back.clipped_fraction, 0.0);
    }

    #[test]
    fn every_16bit_code_round_trips_exactly() {
        let codes: Vec<u16> = (0..=u16::MAX).collect();
        for gamma in [Gamma::Srgb, Gamma::Linear] {
            let enc = gray_codes(BitDepth::Sixteen, &codes);
            let lin = decode(&enc, gamma).unwrap();
            assert_eq!(encode(&lin, BitDepth::Sixteen, gamma).image.samples, enc.samples);
        }
    }

    #[test]
    fn encode_clamps_and_reports() {
        let img = ImageBuffer::from_fn(2, 2, |y, x| {
            if (y, x) == (0, 0) {
                [1.5, 0.2, 0.2]
            } else {
                [0.0, 0.0, 0.0]
            }
        })
        .unwrap();
        let enc = srgb_encode(&img, BitDepth::Eight);
        assert_eq!(enc.image.samples[0], 255);
        assert_eq!(enc.image.samples[3], 0);
        assert_eq!(enc.clipped_fraction, 0.25);
    }

    proptest::proptest! {
        // within half a code in the encoded domain; in linear light the decode
        // slope (at most 2.4/1.055 near 1) scales that bound
        #[test]
        fn linear_round_trip_within_quantization(x in 0.0f64..=1.0, sixteen in proptest::bool::ANY) {
            let (depth, max) = if sixteen { (BitDepth::Sixteen, 65535.0) } else { (BitDepth::Eight, 255.0) };
            let img = ImageBuffer::from_fn(1, 1, |_, _| [x, x, x]).unwrap();
            let back = srgb_decode(&srgb_encode(&img, depth).image).unwrap();
            let y = back.get(0, 0, 0);
            let half_code = 0.5 / max + 1e-12;
            proptest::prop_assert!((linear_to_srgb(y) - linear_to_srgb(x)).abs() <= half_code);
            proptest::prop_assert!((y - x).abs() <= 2.4 / 1.055 * half_code);
        }
    }
}
