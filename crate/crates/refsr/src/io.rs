use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use refsr_core::ImageTensor;
use sha2::{Digest, Sha256};

use crate::{Failure, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Read a file; absence is reported as a missing `what`.
pub fn read(path: &Path, what: &str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::from_io(e, what, path))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read(path, "file")?))
}

/// Write `bytes` to a temporary file next to `path`, then rename it over
/// `path`. Parent directories are created.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::Builder::new().prefix(".refsr-").suffix(".tmp").tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Failure::Io(e.error))?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<ImageTensor> {
    let bytes = read(path, "image")?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(ImageTensor::from_u8(h as usize, w as usize, 3, img.as_raw())?)
}

/// 8-bit RGB PNG of a clamped, round-half-up quantized image.
pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Failure::invalid(format!("PNG output needs 3 channels, got {}", img.channels())));
    }
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(&img.to_u8(), img.width() as u32, img.height() as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Failure::invalid(format!("PNG encoding: {e}")))?;
    Ok(out)
}

pub fn save_png(path: &Path, img: &ImageTensor) -> Result<()> {
    atomic_write(path, &encode_png(img)?)
}

/// File name of frame `i` in a clip directory.
pub fn frame_name(i: usize) -> String {
    format!("{i:04}.png")
}

/// Frames of a clip directory: PNG files with all-digit stems, in numeric
/// order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::from_io(e, "clip directory", dir))?;
    let mut frames: Vec<(u64, PathBuf)> = Vec::new();
    for e in entries {
        let path = e?.path();
        if path.extension().and_then(|x| x.to_str()) != Some("png") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if !stem.is_empty() && stem.bytes().all(|b| b.is_ascii_digit()) {
            frames.push((stem.parse().map_err(|_| Failure::invalid(format!("frame number too large: {}", path.display())))?, path));
        }
    }
    if frames.is_empty() {
        return Err(Failure::missing("clip frames", format!("no numbered PNG frames in {}", dir.display())));
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

pub fn load_clip(dir: &Path) -> Result<Vec<ImageTensor>> {
    list_frames(dir)?.iter().map(|p| load_png(p)).collect()
}

/// Write `frames` as `0000.png, 0001.png, …`; returns the written paths.
pub fn save_clip(dir: &Path, frames: &[ImageTensor]) -> Result<Vec<PathBuf>> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = dir.join(frame_name(i));
            save_png(&p, f)?;
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless_in_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..5 * 7 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let img = ImageTensor::from_u8(5, 7, 3, &bytes).unwrap();
        let p = dir.path().join("a/b.png");
        save_png(&p, &img).unwrap();
        assert_eq!(load_png(&p).unwrap().to_u8(), bytes);
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn frames_sort_numerically_and_skip_other_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::zeros(2, 2, 3);
        for name in ["10.png", "9.png", "notes.png", "0011.txt"] {
            save_png(&dir.path().join(name), &img).unwrap();
        }
        let names: Vec<String> = list_frames(dir.path()).unwrap().iter().map(|p| p.file_name().unwrap().to_string_lossy().into()).collect();
        assert_eq!(names, ["9.png", "10.png"]);
        let empty = tempfile::tempdir().unwrap();
        assert_eq!(list_frames(empty.path()).unwrap_err().exit_code(), 2);
    }
}
