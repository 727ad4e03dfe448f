//! 8-bit grayscale PNG input and output.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Result, TencaError};
use crate::image::Image;

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `image` (values clipped to `[0, 1]`) as 8-bit grayscale.
pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| TencaError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let data: Vec<u8> = image.pixels().iter().map(|&v| to_byte(v)).collect();
    enc.write_header()
        .and_then(|mut w| w.write_image_data(&data))
        .map_err(|e| TencaError::format(path, format!("png encode: {e}")))
}

/// Writes `frame − reference` mapped from `[-1, 1]` to `[0, 255]`, so an
/// unchanged pixel is mid-gray.
pub fn write_subtraction_png(path: &Path, frame: &Image, reference: &Image) -> Result<()> {
    frame.ensure_same_shape(reference)?;
    let data = frame
        .pixels()
        .iter()
        .zip(reference.pixels())
        .map(|(&f, &r)| 0.5 + 0.5 * (f - r))
        .collect();
    write_png(path, &Image::new(frame.height(), frame.width(), data)?)
}

/// Reads a grayscale (or colour, averaged) PNG into `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| TencaError::io(path, e))?;
    let bad = |e: png::DecodingError| TencaError::format(path, format!("png decode: {e}"));
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| TencaError::format(path, "png too large"))?];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let used = if matches!(info.color_type, png::ColorType::GrayscaleAlpha | png::ColorType::Rgba) {
        channels - 1
    } else {
        channels
    };
    let data = buf[..info.buffer_size()]
        .chunks_exact(channels)
        .map(|px| px[..used].iter().map(|&b| f32::from(b)).sum::<f32>() / (used as f32 * 255.0))
        .collect();
    Image::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_quantises_to_255_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(5, 7, |r, c| ((r * 7 + c) as f32 * 7.0) / 255.0);
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.dims(), (5, 7));
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn subtraction_of_equal_images_is_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let img = Image::filled(4, 4, 0.3);
        write_subtraction_png(&path, &img, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert!(back.pixels().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));
    }
}
