//! IDX (MNIST container) files, PNG previews and the manifest document.
//!
//! IDX layout: two zero bytes, a dtype byte, a rank byte, one big-endian u32
//! per dimension, then row-major data, big-endian for multi-byte types.
//! Images use dtype `0x0D` (f32) for the canonical dataset and `0x08` (u8)
//! for the lossy preview export; labels are rank-1 u8.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::info;

use crate::error::{Error, Result};
use crate::model::{BinaryImage, DatasetManifest, GrayImage, MANIFEST_FORMAT_VERSION, SYNTH_SIDE};

pub const DTYPE_U8: u8 = 0x08;
pub const DTYPE_F32: u8 = 0x0D;

pub const TRAIN_IMAGES_FLOAT: &str = "train-images-idx3-float";
pub const TEST_IMAGES_FLOAT: &str = "t10k-images-idx3-float";
pub const TRAIN_IMAGES_U8: &str = "train-images-idx3-ubyte";
pub const TEST_IMAGES_U8: &str = "t10k-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";
pub const MANIFEST_FILE: &str = "manifest.json";

fn header(dtype: u8, dims: &[u32]) -> Vec<u8> {
    let mut out = vec![0, 0, dtype, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out
}

fn check_shapes(images: &[GrayImage]) -> Result<()> {
    for (i, img) in images.iter().enumerate() {
        if img.width() != SYNTH_SIDE || img.height() != SYNTH_SIDE {
            return Err(Error::Serialization(format!(
                "image {i} is {}x{}, expected {SYNTH_SIDE}x{SYNTH_SIDE}",
                img.width(),
                img.height()
            )));
        }
    }
    Ok(())
}

fn image_dims(n: usize) -> [u32; 3] {
    [n as u32, SYNTH_SIDE as u32, SYNTH_SIDE as u32]
}

pub fn encode_idx_float(images: &[GrayImage]) -> Result<Vec<u8>> {
    check_shapes(images)?;
    let mut out = header(DTYPE_F32, &image_dims(images.len()));
    out.reserve(images.len() * SYNTH_SIDE * SYNTH_SIDE * 4);
    for img in images {
        for v in img.values() {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn write_idx_float(images: &[GrayImage], path: &Path) -> Result<()> {
    write_bytes(path, &encode_idx_float(images)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

/// A decoded IDX file: dtype, dimensions and the raw big-endian payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub dtype: u8,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Serialization("missing IDX magic".into()));
    }
    let dtype = bytes[2];
    let width = match dtype {
        DTYPE_U8 | 0x09 => 1,
        0x0B => 2,
        0x0C | DTYPE_F32 => 4,
        0x0E => 8,
        other => return Err(Error::Serialization(format!("unknown IDX dtype 0x{other:02x}"))),
    };
    let rank = bytes[3] as usize;
    let data_start = 4 + 4 * rank;
    if bytes.len() < data_start {
        return Err(Error::Serialization("truncated IDX header".into()));
    }
    let dims: Vec<u32> = bytes[4..data_start]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let expected = dims.iter().map(|&d| d as usize).product::<usize>() * width;
    let payload = &bytes[data_start..];
    if payload.len() != expected {
        return Err(Error::Serialization(format!(
            "IDX payload is {} bytes, dimensions {dims:?} need {expected}",
            payload.len()
        )));
    }
    Ok(IdxFile {
        dtype,
        dims,
        payload: payload.to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxFile> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_idx(&bytes).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
}

fn expect_images(idx: &IdxFile, dtype: u8) -> Result<usize> {
    if idx.dtype != dtype || idx.dims.len() != 3 {
        return Err(Error::Serialization(format!(
            "expected rank-3 IDX of dtype 0x{dtype:02x}, found rank {} dtype 0x{:02x}",
            idx.dims.len(),
            idx.dtype
        )));
    }
    if idx.dims[1] as usize != SYNTH_SIDE || idx.dims[2] as usize != SYNTH_SIDE {
        return Err(Error::Serialization(format!("expected 32x32 images, found {:?}", &idx.dims[1..])));
    }
    Ok(idx.dims[0] as usize)
}

pub fn decode_idx_float(bytes: &[u8]) -> Result<Vec<GrayImage>> {
    let idx = parse_idx(bytes)?;
    expect_images(&idx, DTYPE_F32)?;
    let px = SYNTH_SIDE * SYNTH_SIDE;
    idx.payload
        .chunks_exact(px * 4)
        .map(|chunk| {
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_be_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            GrayImage::new(SYNTH_SIDE, SYNTH_SIDE, values)
        })
        .collect()
}

pub fn read_idx_float(path: &Path) -> Result<Vec<GrayImage>> {
    let bytes = fs::read(path)?;
    decode_idx_float(&bytes).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
}

/// Affine map of real values onto 0..=255: `round(128 + 127 v / (4 sigma))`, clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    pub sigma: f64,
}

impl Quantizer {
    pub fn for_variance(variance: f64) -> Self {
        Self {
            sigma: variance.sqrt(),
        }
    }

    /// Quantized byte and whether the value was clipped.
    pub fn quantize(&self, v: f32) -> (u8, bool) {
        let q = (128.0 + 127.0 * f64::from(v) / (4.0 * self.sigma)).round();
        if q < 0.0 {
            (0, true)
        } else if q > 255.0 {
            (255, true)
        } else {
            (q as u8, false)
        }
    }

    pub fn quantize_image(&self, image: &GrayImage) -> (Vec<u8>, usize) {
        let mut clipped = 0;
        let bytes = image
            .values()
            .iter()
            .map(|&v| {
                let (b, c) = self.quantize(v);
                clipped += usize::from(c);
                b
            })
            .collect();
        (bytes, clipped)
    }
}

impl Default for Quantizer {
    fn default() -> Self {
        Self { sigma: 32.0 }
    }
}

/// Lossy u8 export. Returns the number of clipped pixels.
pub fn encode_idx_u8(images: &[GrayImage], quantizer: &Quantizer) -> Result<(Vec<u8>, usize)> {
    check_shapes(images)?;
    let mut out = header(DTYPE_U8, &image_dims(images.len()));
    let mut clipped = 0;
    for img in images {
        let (bytes, c) = quantizer.quantize_image(img);
        out.extend_from_slice(&bytes);
        clipped += c;
    }
    Ok((out, clipped))
}

pub fn write_idx_u8(images: &[GrayImage], path: &Path, quantizer: &Quantizer) -> Result<usize> {
    let (bytes, clipped) = encode_idx_u8(images, quantizer)?;
    if clipped > 0 {
        info!("{}: clipped {clipped} pixels outside +/-4 sigma", path.display());
    }
    write_bytes(path, &bytes)?;
    Ok(clipped)
}

/// u8 images as flat 1024-byte rows.
pub fn read_idx_u8(path: &Path) -> Result<Vec<Vec<u8>>> {
    let idx = read_idx(path)?;
    expect_images(&idx, DTYPE_U8)?;
    Ok(idx
        .payload
        .chunks_exact(SYNTH_SIDE * SYNTH_SIDE)
        .map(<[u8]>::to_vec)
        .collect())
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = header(DTYPE_U8, &[labels.len() as u32]);
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_labels(labels: &[u8], path: &Path) -> Result<()> {
    write_bytes(path, &encode_idx_labels(labels))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let idx = read_idx(path)?;
    if idx.dtype != DTYPE_U8 || idx.dims.len() != 1 {
        return Err(Error::Serialization(format!("{}: not a rank-1 u8 label file", path.display())));
    }
    Ok(idx.payload)
}

fn save_luma(path: &Path, width: usize, height: usize, bytes: Vec<u8>) -> Result<()> {
    image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .expect("buffer matches dimensions")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Serialization(format!("{}: {other}", path.display())),
        })
}

/// 8-bit grayscale PNG through the same quantizer as the u8 IDX export.
pub fn write_png_preview(image: &GrayImage, path: &Path, quantizer: &Quantizer) -> Result<usize> {
    if image.width() != SYNTH_SIDE || image.height() != SYNTH_SIDE {
        return Err(Error::Serialization(format!(
            "preview expects a 32x32 image, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let (bytes, clipped) = quantizer.quantize_image(image);
    save_luma(path, image.width(), image.height(), bytes)?;
    Ok(clipped)
}

/// White foreground on black.
pub fn write_binary_png(image: &BinaryImage, path: &Path) -> Result<()> {
    let bytes = image.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    save_luma(path, image.width(), image.height(), bytes)
}

/// Source-range (0..=255) grayscale PNG.
pub fn write_gray_png(image: &GrayImage, path: &Path) -> Result<()> {
    let bytes = image.values().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    save_luma(path, image.width(), image.height(), bytes)
}

pub fn manifest_to_json(manifest: &DatasetManifest) -> Result<String> {
    serde_json::to_string_pretty(manifest).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn manifest_from_json(text: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest =
        serde_json::from_str(text).map_err(|e| Error::Serialization(format!("manifest: {e}")))?;
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(Error::Serialization(format!(
            "unsupported manifest format version {} (expected {MANIFEST_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut text = manifest_to_json(manifest)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    manifest_from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image_of(values: impl Fn(usize) -> f32) -> GrayImage {
        GrayImage::new(32, 32, (0..1024).map(values).collect()).unwrap()
    }

    #[test]
    fn one_image_float_file_size() {
        let bytes = encode_idx_float(&[image_of(|i| i as f32)]).unwrap();
        assert_eq!(bytes.len(), 4 + 12 + 4 * 1024);
        assert_eq!(&bytes[..4], &[0, 0, 0x0D, 3]);
        assert_eq!(&bytes[4..16], &[0, 0, 0, 1, 0, 0, 0, 32, 0, 0, 0, 32]);
    }

    #[test]
    fn empty_float_file() {
        let bytes = encode_idx_float(&[]).unwrap();
        assert_eq!(bytes, vec![0, 0, 0x0D, 3, 0, 0, 0, 0, 0, 0, 0, 32, 0, 0, 0, 32]);
        assert!(decode_idx_float(&bytes).unwrap().is_empty());
    }

    #[test]
    fn big_endian_golden_bytes() {
        // 1.0f32 = 0x3F800000, -2.0f32 = 0xC0000000
        let img = image_of(|i| match i {
            0 => 1.0,
            1 => -2.0,
            _ => 0.0,
        });
        let bytes = encode_idx_float(&[img]).unwrap();
        assert_eq!(&bytes[16..24], &[0x3F, 0x80, 0, 0, 0xC0, 0, 0, 0]);
        let labels = encode_idx_labels(&[7, 1]);
        assert_eq!(labels, vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 1]);
        let (u8s, _) = encode_idx_u8(&[GrayImage::filled(32, 32, 0.0).unwrap()], &Quantizer::default()).unwrap();
        assert_eq!(&u8s[..8], &[0, 0, 8, 3, 0, 0, 0, 1]);
        assert!(u8s[16..].iter().all(|&b| b == 128));
    }

    #[test]
    fn wrong_shape_rejected() {
        let img = GrayImage::filled(28, 28, 0.0).unwrap();
        assert!(matches!(encode_idx_float(std::slice::from_ref(&img)), Err(Error::Serialization(_))));
        assert!(encode_idx_u8(&[img], &Quantizer::default()).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut bytes = encode_idx_float(&[image_of(|_| 1.0)]).unwrap();
        bytes.pop();
        assert!(decode_idx_float(&bytes).is_err());
        assert!(parse_idx(&[0, 0, 0x0D]).is_err());
    }

    #[test]
    fn quantizer_values() {
        let q = Quantizer::default();
        assert_eq!(q.quantize(0.0), (128, false));
        assert_eq!(q.quantize(128.0), (255, false));
        assert_eq!(q.quantize(-128.0), (1, false));
        assert_eq!(q.quantize(-1000.0), (0, true));
        assert_eq!(q.quantize(1000.0), (255, true));
    }

    proptest! {
        #[test]
        fn float_round_trip_is_bit_exact(bits in prop::collection::vec(any::<u32>(), 1024)) {
            // arbitrary bit patterns, NaN payloads included
            let values: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let img = GrayImage::new(32, 32, values).unwrap();
            let back = decode_idx_float(&encode_idx_float(std::slice::from_ref(&img)).unwrap()).unwrap();
            let got: Vec<u32> = back[0].values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, bits);
        }
    }
}
