//! 8-bit RGB image files. PNG and binary PPM are read; PNG is written.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads an 8-bit PNG or PPM as `[3,H,W]` with values `byte / 255`.
/// Grayscale and alpha images are expanded or flattened to RGB; 16-bit
/// images are rejected.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        other => {
            return Err(Error::invalid(
                "load_image",
                format!("{}: unsupported format {other:?}", path.display()),
            ))
        }
    }
    let img = reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        _ => {
            return Err(Error::invalid(
                "load_image",
                format!("{}: only 8-bit images are supported", path.display()),
            ))
        }
    };
    Ok(rgb_to_tensor(&rgb))
}

pub fn rgb_to_tensor(rgb: &RgbImage) -> Tensor {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for ch in 0..3 {
            data[(ch * h + y as usize) * w + x as usize] = px.0[ch] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("sized buffer")
}

/// Round-to-nearest quantization of a `[3,H,W]` (or `[1,3,H,W]`) image,
/// clamping to `[0,1]` first.
pub fn tensor_to_rgb(image: &Tensor) -> Result<RgbImage> {
    let (h, w) = match *image.shape() {
        [3, h, w] | [1, 3, h, w] => (h, w),
        _ => return Err(Error::shape("save_image", format!("expected [3,H,W], got {:?}", image.shape()))),
    };
    if !image.is_finite() {
        return Err(Error::NonFinite { op: "save_image" });
    }
    let d = image.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| {
            let v = d[(ch * h + y as usize) * w + x as usize].clamp(0.0, 1.0);
            (v * 255.0).round() as u8
        };
        image::Rgb([at(0), at(1), at(2)])
    }))
}

/// Writes an 8-bit RGB PNG, creating parent directories.
pub fn save_image(image: &Tensor, path: &Path) -> Result<()> {
    let rgb = tensor_to_rgb(image)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    rgb.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn byte_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 128, 0, 1, 2, 3]);
        std::fs::write(&path, bytes).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[2], 128.0 / 255.0);
        assert_eq!(t.data()[4], 0.0);
    }

    #[test]
    fn png_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Tensor::uniform(vec![3, 7, 5], 0.0, 1.0, &mut rng);
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        save_image(&img, &a).unwrap();
        save_image(&load_image(&a).unwrap(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let back = load_image(&a).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        std::fs::write(&path, b"not an image").unwrap();
        assert!(load_image(&path).is_err());
        assert!(load_image(&dir.path().join("missing.png")).is_err());
    }
}
