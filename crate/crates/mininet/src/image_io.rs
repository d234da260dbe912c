//! 8-bit RGB frames (PNG or binary PPM) and disparity outputs.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageBuffer, Luma, RgbImage};
use mininet_core::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::tensor_file::save_tensor;

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image { path: path.to_path_buf(), source }
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    Ok(image::open(path).map_err(image_err(path))?.to_rgb8())
}

/// `[3, H, W]` tensor of `raw / 255`.
pub fn rgb_to_tensor<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = T::from_f64(f64::from(px[c]) / 255.0);
        }
    }
    Tensor::new(&[3, h, w], data).expect("buffer matches shape")
}

/// Rounds `[3, H, W]` (or `[1, 3, H, W]`) values in `[0, 1]` to 8 bits.
pub fn tensor_to_rgb<T: Scalar>(t: &Tensor<T>) -> Result<RgbImage> {
    let (h, w) = match t.shape() {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        s => return Err(Error::Format(format!("expected a [3, H, W] image, got {s:?}"))),
    };
    let d = t.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|c| (d[c * h * w + i].as_f64().clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8))
    }))
}

pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    Ok(rgb_to_tensor(&read_rgb(path)?))
}

/// Loads and bilinearly resizes to `width x height` (no-op when already that size).
pub fn load_image_resized<T: Scalar>(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Tensor<T>> {
    let img = read_rgb(path)?;
    if img.width() as usize == width && img.height() as usize == height {
        return Ok(rgb_to_tensor(&img));
    }
    Ok(rgb_to_tensor(&image::imageops::resize(&img, width as u32, height as u32, FilterType::Triangle)))
}

/// Writes PNG or PPM depending on the extension.
pub fn save_image<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    tensor_to_rgb(t)?.save(path).map_err(image_err(path))
}

/// `round_half_up(d * 65535)` clamped to 16 bits.
pub fn disparity_to_gray(d: f64) -> u16 {
    (d.clamp(0.0, 1.0) * 65535.0 + 0.5).floor() as u16
}

fn plane_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [h, w] | [1, h, w] | [1, 1, h, w] => Ok((*h, *w)),
        s => Err(Error::Format(format!("expected a single disparity map, got shape {s:?}"))),
    }
}

/// Writes `{stem}.tnsr` (exact values) and `{stem}.png` (16-bit grayscale).
pub fn save_disparity<T: Scalar>(stem: impl AsRef<Path>, disparity: &Tensor<T>) -> Result<(PathBuf, PathBuf)> {
    let stem = stem.as_ref();
    let (h, w) = plane_dims(disparity.shape())?;
    let tensor_path = stem.with_extension("tnsr");
    let png_path = stem.with_extension("png");
    let d = disparity.data();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([disparity_to_gray(d[y as usize * w + x as usize].as_f64())]));
    save_tensor(&tensor_path, disparity)?;
    img.save(&png_path).map_err(image_err(&png_path))?;
    Ok((tensor_path, png_path))
}
