//! PNG input and output.

use std::path::{Path, PathBuf};

use holocodec::optics::center_offset;
use holocodec::{Error, Result};
use image::{ImageBuffer, Luma};
use ndarray::{s, Array2};

fn img_err(path: &Path, e: image::ImageError) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

/// Intensity in `[0, 1]` of one color component (`channel` 0..=2), or of
/// the gray level for single-channel images.
pub fn read_intensity(path: &Path, channel: u8) -> Result<Array2<f64>> {
    let img = image::open(path).map_err(|e| img_err(path, e))?;
    let color = img.color().has_color();
    let rgb = img.to_rgb16();
    let (w, h) = rgb.dimensions();
    let c = if color { channel as usize % 3 } else { 0 };
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        rgb.get_pixel(j as u32, i as u32)[c] as f64 / 65535.0
    }))
}

/// Centered crop to `frame`.
pub fn crop_to(img: Array2<f64>, frame: (usize, usize), path: &Path) -> Result<Array2<f64>> {
    let (h, w) = img.dim();
    if h < frame.0 || w < frame.1 {
        return Err(Error::Shape(format!(
            "{} is {h}x{w}, smaller than the {}x{} frame",
            path.display(),
            frame.0,
            frame.1
        )));
    }
    let (oy, ox) = (center_offset(h, frame.0), center_offset(w, frame.1));
    Ok(img.slice(s![oy..oy + frame.0, ox..ox + frame.1]).to_owned())
}

/// 16-bit gray PNG of `values` mapped linearly from `[lo, hi]`.
pub fn write_gray16(path: &Path, values: &Array2<f64>, lo: f64, hi: f64) -> Result<()> {
    let (h, w) = values.dim();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(w as u32, h as u32, |x, y| {
        let v = ((values[[y as usize, x as usize]] - lo) / span).clamp(0.0, 1.0);
        Luma([(v * 65535.0).round() as u16])
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    buf.save(path).map_err(|e| img_err(path, e))
}

/// Phase in `(-pi, pi]` as 16-bit gray.
pub fn write_phase(path: &Path, phase: &Array2<f64>) -> Result<()> {
    let pi = std::f64::consts::PI;
    write_gray16(path, phase, -pi, pi)
}

/// Amplitude scaled by its maximum.
pub fn write_amplitude(path: &Path, amp: &Array2<f64>) -> Result<()> {
    let hi = amp.iter().copied().fold(0.0, f64::max);
    write_gray16(path, amp, 0.0, hi)
}

/// Phase values as little-endian f32 (lossless companion to the PNG).
pub fn write_raw_phase(path: &Path, phase: &Array2<f64>) -> Result<()> {
    let mut out = Vec::with_capacity(phase.len() * 4);
    for v in phase.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Sorted `*.png` files of a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Array2::from_shape_fn((5, 7), |(i, j)| (i * 7 + j) as f64 / 34.0);
        write_gray16(&p, &img, 0.0, 1.0).unwrap();
        let back = read_intensity(&p, 2).unwrap();
        assert!(img.iter().zip(back.iter()).all(|(a, b)| (a - b).abs() < 1e-4));
        assert!(crop_to(back.clone(), (6, 7), &p).is_err());
        assert_eq!(crop_to(back, (3, 3), &p).unwrap().dim(), (3, 3));
    }
}
