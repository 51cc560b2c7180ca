//! Frame directories in and out, quality metrics, checkpoints.

pub mod checkpoint;
pub mod metrics;

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::splat2d::Frame;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use metrics::{psnr, ssim, SsimMode, PSNR_CAP};

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub frames: Vec<Frame>,
    pub fps_hint: Option<f64>,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if let Some((i, _)) = frames.iter().enumerate().find(|(_, f)| !f.same_shape(first)) {
                return Err(Error::Shape(format!("frame {i} differs in size from frame 0")));
            }
        }
        Ok(Self { frames, fps_hint: None })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimensions(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.width, f.height))
    }

    /// Fitting needs at least two frames.
    pub fn require_fit(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Config(format!("need ≥ 2 frames, got {}", self.frames.len())));
        }
        Ok(())
    }
}

/// Decode one PNG or binary PPM image. Bytes map linearly to `[0, 1]`
/// (`v / 255`, or `v / 65535` for 16-bit data); alpha is dropped.
pub fn decode_frame(bytes: &[u8]) -> std::result::Result<Frame, String> {
    let format = image::guess_format(bytes).map_err(|e| e.to_string())?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(format!("unsupported image format {format:?}"));
    }
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err("empty image".into());
    }
    let data = match img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        _ => img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
    };
    Frame::from_data(w, h, data).map_err(|e| e.to_string())
}

fn is_frame_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        .unwrap_or(false)
}

/// Sort key: the first run of digits in the file stem, then the name.
fn frame_sort_key(path: &Path) -> (u64, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let digits: String = stem
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    (digits.parse().unwrap_or(u64::MAX), stem.to_string())
}

/// List the PNG/PPM files of `dir` in numeric order.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_frame_file(&path) {
            files.push(path);
        }
    }
    files.sort_by_cached_key(|p| frame_sort_key(p));
    Ok(files)
}

/// Load a directory of numerically named frames.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<VideoSequence> {
    let dir = dir.as_ref();
    let files = list_frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Ingest {
            path: dir.to_path_buf(),
            reason: "no PNG or PPM frames found".into(),
        });
    }
    let mut frames: Vec<Frame> = Vec::with_capacity(files.len());
    for path in &files {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let frame = decode_frame(&bytes).map_err(|reason| Error::Ingest {
            path: path.clone(),
            reason,
        })?;
        if let Some(first) = frames.first() {
            if !frame.same_shape(first) {
                return Err(Error::Ingest {
                    path: path.clone(),
                    reason: format!(
                        "size {}x{} differs from {}x{}",
                        frame.width, frame.height, first.width, first.height
                    ),
                });
            }
        }
        frames.push(frame);
    }
    Ok(VideoSequence { frames, fps_hint: None })
}

pub fn frame_to_rgb8(frame: &Frame) -> RgbImage {
    let raw = frame
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::from_raw(frame.width as u32, frame.height as u32, raw).expect("frame buffer size")
}

/// The frame as it reads back after an 8-bit save.
pub fn quantize_rgb8(frame: &Frame) -> Frame {
    let data = frame_to_rgb8(frame).into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Frame::from_data(frame.width, frame.height, data).expect("same shape")
}

pub fn save_png(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    frame_to_rgb8(frame)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// Write frames as `00000.png`, `00001.png`, … into `dir`.
pub fn save_frames(frames: &[Frame], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        save_png(f, dir.join(format!("{i:05}.png")))?;
    }
    Ok(())
}

/// Per-pixel `|a − b|` image.
pub fn abs_diff(a: &Frame, b: &Frame) -> Result<Frame> {
    if !a.same_shape(b) {
        return Err(Error::Shape("diff of frames with different sizes".into()));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).collect();
    Frame::from_data(a.width, a.height, data)
}
