//! PNG output: grayscale frames, patch mosaics and attention overlays.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use viact_core::data::Normalization;

/// Viridis sampled at nine evenly spaced stops.
const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

pub fn viridis(t: f64) -> [u8; 3] {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 * (1.0 - f) + b[c] as f64 * f).round() as u8)
}

/// Normalised intensity back to an 8-bit gray level.
pub fn gray_level(v: f32) -> u8 {
    (Normalization::default().to_unit(v).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `h×w` intensities, each pixel drawn as a `scale×scale` block. `None`
/// pixels are black.
pub fn gray_image(values: &[Option<f32>], h: usize, w: usize, scale: usize) -> RgbImage {
    let mut img = RgbImage::new((w * scale) as u32, (h * scale) as u32);
    for y in 0..h {
        for x in 0..w {
            let g = values[y * w + x].map_or(0, gray_level);
            fill(&mut img, x * scale, y * scale, scale, [g, g, g]);
        }
    }
    img
}

fn fill(img: &mut RgbImage, x0: usize, y0: usize, size: usize, color: [u8; 3]) {
    for y in y0..(y0 + size).min(img.height() as usize) {
        for x in x0..(x0 + size).min(img.width() as usize) {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

/// Filled disk at image coordinates `(cx, cy)`.
pub fn dot(img: &mut RgbImage, cx: f64, cy: f64, radius: f64, color: [u8; 3]) {
    let r = radius.ceil() as i64;
    let (x0, y0) = (cx.round() as i64, cy.round() as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (x0 + dx, y0 + dy);
            let inside = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() <= radius;
            if inside && x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
                img.put_pixel(x as u32, y as u32, Rgb(color));
            }
        }
    }
}

/// Panels side by side with a gap of `gap` white pixels.
pub fn hstack(panels: &[RgbImage], gap: u32) -> RgbImage {
    let h = panels.iter().map(|p| p.height()).max().unwrap_or(0);
    let w =
        panels.iter().map(|p| p.width()).sum::<u32>() + gap * panels.len().saturating_sub(1) as u32;
    let mut out = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let mut x0 = 0;
    for p in panels {
        for (x, y, px) in p.enumerate_pixels() {
            out.put_pixel(x0 + x, y, *px);
        }
        x0 += p.width() + gap;
    }
    out
}

/// Panels stacked vertically with a gap.
pub fn vstack(rows: &[RgbImage], gap: u32) -> RgbImage {
    let w = rows.iter().map(|p| p.width()).max().unwrap_or(0);
    let h =
        rows.iter().map(|p| p.height()).sum::<u32>() + gap * rows.len().saturating_sub(1) as u32;
    let mut out = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let mut y0 = 0;
    for p in rows {
        for (x, y, px) in p.enumerate_pixels() {
            out.put_pixel(x, y0 + y, *px);
        }
        y0 += p.height() + gap;
    }
    out
}

pub fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("writing {}", path.display()))
}
