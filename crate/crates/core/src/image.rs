//! RGB image buffers with normalized-coordinate addressing, plus PNG/PPM I/O.

use std::io::{BufRead, Seek};
use std::path::Path;

use image::{ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// Smallest accepted side length in pixels.
pub const MIN_SIDE: usize = 8;

/// `width x height x 3` colors in `[0, 1]`, row-major, RGB interleaved.
///
/// Pixel `(col, row)` is sampled at the normalized coordinate
/// `((col + 0.5) / W, (row + 0.5) / H)`; both axes span `[0, 1]`
/// independently, so non-square images get anisotropic cells.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    /// Wraps raw interleaved RGB values, clamping them into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::Image(format!(
                "{width}x{height} is below the {MIN_SIDE}x{MIN_SIDE} minimum"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", width * height * 3),
                got: format!("{} values", data.len()),
            });
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for row in 0..height {
            for col in 0..width {
                data.extend_from_slice(&f(col, row));
            }
        }
        Self::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> [f32; 3] {
        let o = (row * self.width + col) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Pixel by flat row-major index.
    #[inline]
    pub fn get_flat(&self, index: usize) -> [f32; 3] {
        let o = index * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Normalized coordinate of a pixel center.
    #[inline]
    pub fn pixel_center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            (col as f64 + 0.5) / self.width as f64,
            (row as f64 + 0.5) / self.height as f64,
        ]
    }

    /// Content hash-friendly 8-bit quantization (`round(v * 255)`).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
    }

    /// Decodes PNG or binary PPM (P6) bytes.
    pub fn decode<R: BufRead + Seek>(reader: R) -> Result<Self> {
        let reader = ImageReader::new(reader)
            .with_guessed_format()
            .map_err(|e| Error::Image(e.to_string()))?;
        match reader.format() {
            Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
            Some(other) => return Err(Error::Image(format!("unsupported format {other:?}"))),
            None => return Err(Error::Image("unrecognized image format".into())),
        }
        let img = reader.decode().map_err(|e| Error::Image(e.to_string()))?;
        use image::ColorType as C;
        match img.color() {
            C::Rgb8 | C::L8 => {}
            C::Rgba8 | C::La8 => log::warn!("alpha channel dropped"),
            other => return Err(Error::Image(format!("unsupported pixel type {other:?}"))),
        }
        let rgb = img.to_rgb8();
        Self::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(b"P") && !bytes.starts_with(b"P6") {
            return Err(Error::Image(format!(
                "{}: only binary PPM (P6) is supported",
                path.display()
            )));
        }
        Self::decode(std::io::Cursor::new(bytes))
    }

    /// Writes an 8-bit PNG.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            ImageFormat::Png,
        )
        .map_err(|e| Error::Image(e.to_string()))
    }

    /// Writes a binary PPM (P6).
    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_rgb8());
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Nearest-neighbour resample to `width x height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<Self> {
        Self::from_fn(width, height, |c, r| {
            self.get(c * self.width / width, r * self.height / height)
        })
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Mean squared error over all channels.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient() -> ImageBuffer {
        ImageBuffer::from_fn(13, 9, |c, r| {
            [c as f32 / 12.0, r as f32 / 8.0, ((c * r) % 7) as f32 / 6.0]
        })
        .unwrap()
    }

    #[test]
    fn rejects_tiny_images() {
        assert!(ImageBuffer::constant(1, 1, [1.0; 3]).is_err());
        assert!(ImageBuffer::constant(8, 7, [1.0; 3]).is_err());
        assert!(ImageBuffer::constant(8, 8, [1.0; 3]).is_ok());
    }

    #[test]
    fn clamps_on_construction() {
        let img = ImageBuffer::constant(8, 8, [1.5, -0.2, 0.5]).unwrap();
        assert_eq!(img.get(3, 3), [1.0, 0.0, 0.5]);
    }

    #[test]
    fn scaling_endpoints() {
        let mut bytes = vec![0u8; 8 * 8 * 3];
        bytes[0] = 255;
        let img = ImageBuffer::from_rgb8(8, 8, &bytes).unwrap();
        assert_eq!(img.get(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn pixel_centers() {
        let img = gradient();
        assert_eq!(img.pixel_center(0, 0), [0.5 / 13.0, 0.5 / 9.0]);
        let [x, y] = img.pixel_center(12, 8);
        assert!(x < 1.0 && y < 1.0);
    }

    #[test]
    fn png_and_ppm_agree_and_quantization_is_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("a.png");
        let ppm = dir.path().join("a.ppm");
        let src = gradient();
        src.save(&png).unwrap();
        src.save_ppm(&ppm).unwrap();
        let a = ImageBuffer::load(&png).unwrap();
        let b = ImageBuffer::load(&ppm).unwrap();
        assert_eq!(a, b);
        a.save(&png).unwrap();
        assert_eq!(ImageBuffer::load(&png).unwrap(), a);
    }

    #[test]
    fn rejects_one_pixel_png_and_ascii_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("w.png");
        image::save_buffer(&png, &[255, 255, 255], 1, 1, image::ExtendedColorType::Rgb8).unwrap();
        assert!(matches!(ImageBuffer::load(&png), Err(Error::Image(_))));
        let p3 = dir.path().join("a.ppm");
        std::fs::write(&p3, "P3\n8 8\n255\n").unwrap();
        assert!(ImageBuffer::load(&p3).is_err());
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"\x89PNG\r\n\x1a\ngarbage").unwrap();
        assert!(ImageBuffer::load(&junk).is_err());
    }

    #[test]
    fn mse_dimension_mismatch() {
        let a = ImageBuffer::constant(8, 8, [0.0; 3]).unwrap();
        let b = ImageBuffer::constant(9, 8, [0.0; 3]).unwrap();
        assert!(matches!(mse(&a, &b), Err(Error::DimensionMismatch(..))));
    }
}
