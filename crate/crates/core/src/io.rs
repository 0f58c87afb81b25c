//! Frame sequences as directories of 8-bit PNGs named `%06d.png`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{invalid, Error, Result};
use crate::operators::{ImageTensor, Space};

pub fn frame_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// `v` in `[0, 1]` to the nearest 8-bit code.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every value to the 8-bit grid, staying in `[0, 1]`.
pub fn quantize_image(x: &ImageTensor) -> ImageTensor {
    ImageTensor::from_fn(x.channels(), x.height(), x.width(), x.space(), |c, i, j| {
        quantize(x.get(c, i, j)) as f64 / 255.0
    })
}

/// Loads a PNG as 1 (gray) or 3 (RGB) channels in `[0, 1]`; alpha is dropped.
pub fn read_frame(path: &Path, space: Space) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(ImageTensor::from_fn(3, h as usize, w as usize, space, |c, i, j| {
            rgb.get_pixel(j as u32, i as u32)[c] as f64 / 255.0
        }))
    } else {
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Ok(ImageTensor::from_fn(1, h as usize, w as usize, space, |_, i, j| {
            gray.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
        }))
    }
}

pub fn write_frame(path: &Path, x: &ImageTensor) -> Result<()> {
    let (w, h) = (x.width() as u32, x.height() as u32);
    let result = match x.channels() {
        1 => {
            let img: GrayImage =
                ImageBuffer::from_fn(w, h, |j, i| Luma([quantize(x.get(0, i as usize, j as usize))]));
            img.save(path)
        }
        3 => {
            let img: RgbImage = ImageBuffer::from_fn(w, h, |j, i| {
                Rgb([0, 1, 2].map(|c| quantize(x.get(c, i as usize, j as usize))))
            });
            img.save(path)
        }
        c => return Err(invalid(format!("cannot write a {c}-channel frame as PNG"))),
    };
    result.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Sorted PNG paths in `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_sequence(dir: &Path, space: Space) -> Result<Vec<ImageTensor>> {
    let paths = list_frames(dir)?;
    if paths.is_empty() {
        return Err(invalid(format!("{} contains no PNG frames", dir.display())));
    }
    let frames: Vec<ImageTensor> = paths
        .iter()
        .map(|p| read_frame(p, space))
        .collect::<Result<_>>()?;
    if let Some(bad) = frames.iter().position(|f| !f.same_dims(&frames[0])) {
        return Err(invalid(format!(
            "{} differs in size from the first frame",
            paths[bad].display()
        )));
    }
    Ok(frames)
}

/// Writes `frames` as `000000.png, 000001.png, ...`.
pub fn write_sequence(dir: &Path, frames: &[ImageTensor]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, f) in frames.iter().enumerate() {
        write_frame(&dir.join(frame_name(t)), f)?;
    }
    Ok(())
}

/// Directories under `root` that directly contain PNG frames, sorted; `root`
/// itself counts when it holds frames.
pub fn find_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if !list_frames(&dir)?.is_empty() {
            out.push(dir.clone());
        }
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
