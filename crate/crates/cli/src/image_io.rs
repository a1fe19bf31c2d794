//! 8-bit RGB PNG input and output.

use std::path::Path;

use anyhow::{Context, Result};
use image::RgbImage;
use shufflemixer::{Shape, Tensor4};

/// Decodes an image into a `1 x 3 x h x w` tensor with values `v / 255`.
pub fn read_rgb(path: &Path) -> Result<Tensor4<f32>> {
    let img = image::open(path)
        .with_context(|| format!("cannot read image {}", path.display()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor4::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    }))
}

/// Clamps to `[0, 1]` and rounds to the nearest 8-bit level.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, t: &Tensor4<f32>) -> Result<()> {
    anyhow::ensure!(
        t.n() == 1 && t.c() == 3,
        "expected a 1x3xHxW image, got {:?}",
        t.dims()
    );
    let img = RgbImage::from_fn(t.w() as u32, t.h() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([
            to_u8(t.at(0, 0, y, x)),
            to_u8(t.at(0, 1, y, x)),
            to_u8(t.at(0, 2, y, x)),
        ])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("cannot write image {}", path.display()))
}

/// PNG files in `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}
