//! PNG/JPEG reading and writing for images, masks and heatmaps.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Luma, RgbImage};
use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::ops::{self, Interpolation};

fn open(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))
}

/// `H × W × 3` in `[0, 1]`.
pub fn rgb_from_dynamic(img: &DynamicImage) -> Array3<f64> {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
    })
}

pub fn read_rgb(path: &Path) -> Result<Array3<f64>> {
    Ok(rgb_from_dynamic(&open(path)?))
}

/// Single-channel raster with its full-scale value (255 or 65535).
pub fn read_gray(path: &Path) -> Result<(Array2<f64>, f64)> {
    let img = open(path)?;
    Ok(match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let a = Array2::from_shape_vec((h as usize, w as usize), g.into_raw().into_iter().map(f64::from).collect())
                .expect("buffer matches dimensions");
            (a, 255.0)
        }
        other => {
            let g = other.to_luma16();
            let (w, h) = g.dimensions();
            let a = Array2::from_shape_vec((h as usize, w as usize), g.into_raw().into_iter().map(f64::from).collect())
                .expect("buffer matches dimensions");
            (a, 65535.0)
        }
    })
}

pub fn resize_rgb(img: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
    if img.dim().0 == h && img.dim().1 == w {
        return img.clone();
    }
    let x = img.view().insert_axis(Axis(0)).to_owned();
    ops::resize(&x, h, w, Interpolation::Bilinear).index_axis_move(Axis(0), 0)
}

pub fn resize_map(map: &Array2<f64>, h: usize, w: usize, mode: Interpolation) -> Array2<f64> {
    if map.dim() == (h, w) {
        return map.clone();
    }
    let x = map.view().insert_axis(Axis(0)).insert_axis(Axis(3)).to_owned();
    ops::resize(&x, h, w, mode)
        .index_axis_move(Axis(0), 0)
        .index_axis_move(Axis(2), 0)
}

fn quantize(v: f64, full: f64) -> f64 {
    (v.clamp(0.0, 1.0) * full).round()
}

fn png_bytes(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// 16-bit grayscale PNG of a map with values in `[0, 1]`.
pub fn encode_gray16(map: &Array2<f64>) -> Result<Vec<u8>> {
    let (h, w) = map.dim();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([quantize(map[[y as usize, x as usize]], 65535.0) as u16])
    });
    png_bytes(&DynamicImage::ImageLuma16(buf))
}

pub fn encode_gray8(map: &Array2<f64>) -> Result<Vec<u8>> {
    let (h, w) = map.dim();
    let buf = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([quantize(map[[y as usize, x as usize]], 255.0) as u8])
    });
    png_bytes(&DynamicImage::ImageLuma8(buf))
}

pub fn encode_rgb8(img: &Array3<f64>) -> Result<Vec<u8>> {
    let (h, w, _) = img.dim();
    let buf = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([0, 1, 2].map(|c| quantize(img[[y, x, c]], 255.0) as u8))
    });
    png_bytes(&DynamicImage::ImageRgb8(buf))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Colorizes a `[0, 1]` map with a black-red-yellow-white ramp.
pub fn heat_colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [(3.0 * v).min(1.0), (3.0 * v - 1.0).clamp(0.0, 1.0), (3.0 * v - 2.0).clamp(0.0, 1.0)]
}

/// Blends a colorized heatmap over an RGB image.
pub fn overlay(img: &Array3<f64>, map: &Array2<f64>, alpha: f64) -> Array3<f64> {
    let (h, w, _) = img.dim();
    let map = resize_map(map, h, w, Interpolation::Bilinear);
    Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
        let heat = heat_colormap(map[[y, x]])[c];
        (1.0 - alpha) * img[[y, x, c]] + alpha * heat
    })
}
