//! 8-bit PGM (P5) and PPM (P6) images as `[C, H, W]` tensors in `[0, 1]`.

use std::fs;
use std::io::Cursor as IoCursor;
use std::path::Path;

use bbridge_core::Tensor;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::error::{CliError, Result};
use crate::format::write_file;

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = ImageReader::new(IoCursor::new(bytes));
    reader.set_format(ImageFormat::Pnm);
    reader.decode().map_err(|e| CliError::format(path, e.to_string()))
}

/// Reads a P5 or P6 file; each 8-bit sample `v` becomes `v / 255`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let (c, w, h, raw) = match decode(path)? {
        DynamicImage::ImageLuma8(img) => (1, img.width(), img.height(), img.into_raw()),
        DynamicImage::ImageRgb8(img) => (3, img.width(), img.height(), img.into_raw()),
        other => {
            return Err(CliError::format(
                path,
                format!("expected 8-bit gray or RGB, got {:?}", other.color()),
            ));
        }
    };
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0; c * h * w];
    for (i, &v) in raw.iter().enumerate() {
        let (pixel, ch) = (i / c, i % c);
        data[ch * h * w + pixel] = f64::from(v) / 255.0;
    }
    Tensor::new(vec![c, h, w], data).map_err(CliError::from)
}

/// Reads a P5 file whose pixel values are class ids; returns `[H, W]`.
pub fn read_class_map(path: &Path) -> Result<Tensor> {
    match decode(path)? {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data = img.into_raw().into_iter().map(f64::from).collect();
            Tensor::new(vec![h, w], data).map_err(CliError::from)
        }
        other => Err(CliError::format(
            path,
            format!("class maps must be 8-bit gray, got {:?}", other.color()),
        )),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `[1, H, W]` or `[3, H, W]` tensor, clamping to `[0, 1]`.
pub fn encode_image(t: &Tensor) -> Result<Vec<u8>> {
    let shape = t.shape();
    if shape.len() != 3 || !matches!(shape[0], 1 | 3) {
        return Err(CliError::Validation(format!(
            "cannot write shape {shape:?} as an image"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut raw = vec![0u8; c * h * w];
    for (i, px) in raw.iter_mut().enumerate() {
        let (pixel, ch) = (i / c, i % c);
        *px = quantize(t.data()[ch * h * w + pixel]);
    }
    let (subtype, color) = if c == 1 {
        (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8)
    } else {
        (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)
    };
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&raw, w as u32, h as u32, color)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(out)
}

pub fn write_image(path: &Path, t: &Tensor) -> Result<()> {
    write_file(path, &encode_image(t)?)
}

/// Writes an `[H, W]` class map as P5 with pixel value = class id.
pub fn write_class_map(path: &Path, map: &Tensor) -> Result<()> {
    let shape = map.shape();
    if shape.len() != 2 {
        return Err(CliError::Validation(format!("class map must be [H, W], got {shape:?}")));
    }
    if map
        .data()
        .iter()
        .any(|&v| !(0.0..=255.0).contains(&v) || v.fract() != 0.0)
    {
        return Err(CliError::Validation("class ids must be integers in 0..=255".into()));
    }
    let raw: Vec<u8> = map.data().iter().map(|&v| v as u8).collect();
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&raw, shape[1] as u32, shape[0] as u32, ExtendedColorType::L8)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_round_trip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, b"P5\n2 1\n255\n\x00\xff").unwrap();
        let t = read_image(&p).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0]);
        let q = dir.path().join("b.pgm");
        write_image(&q, &t).unwrap();
        assert_eq!(read_image(&q).unwrap(), t);
    }

    #[test]
    fn color_is_channel_major() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        fs::write(&p, b"P6\n2 1\n255\n\xff\x00\x00\x00\x00\xff").unwrap();
        let t = read_image(&p).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let q = dir.path().join("d.ppm");
        write_image(&q, &t).unwrap();
        assert_eq!(
            fs::read(&q).unwrap()[fs::read(&q).unwrap().len() - 6..],
            *b"\xff\x00\x00\x00\x00\xff"
        );
    }

    #[test]
    fn class_maps_keep_raw_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let map = Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 1.0]).unwrap();
        write_class_map(&p, &map).unwrap();
        assert_eq!(read_class_map(&p).unwrap(), map);
        assert!(read_image(&dir.path().join("missing.pgm")).is_err());
    }
}
