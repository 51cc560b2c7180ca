//! Binary checkpoint format (little-endian).
//!
//! ```text
//! magic "VGSF" | version u32
//! n_components u32 | n_frames u32 | poly_degree u32 | width u32 | height u32 | n_overlays u32
//! background 3×f32 | steps u64 | seed u64 | config_len u32 | config utf-8
//! timeline weights (n_frames − 1)×f32
//! per field (mean, time_mean, log_scale, theta, log_sigma_t, poly, opacity, color):
//!     n_components × stride × f32
//! per overlay: frame u32 | count u32 | count × 10 f64
//!     (mean x, mean y, theta, s1, s2, scale, opacity, r, g, b)
//! ```
//!
//! Decoding consumes the buffer exactly; trailing bytes are an error.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::foldgauss::{ConditionedGaussian2D, SpatialCov2};
use crate::model::{Field, FrameOverlay, FrameTimeline, Model, ParamTable, TrainingMeta};

pub const MAGIC: [u8; 4] = *b"VGSF";
pub const VERSION: u32 = 1;
const OVERLAY_RECORD: usize = 10;
/// Upper bound on the polynomial degree accepted from a file.
const MAX_POLY_DEGREE: usize = 64;

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let p = &model.params;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    for v in [
        VERSION,
        p.len() as u32,
        model.n_frames() as u32,
        p.poly_degree() as u32,
        model.width as u32,
        model.height as u32,
        model.overlays.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in model.background {
        out.extend_from_slice(&(c as f32).to_le_bytes());
    }
    out.extend_from_slice(&model.meta.steps.to_le_bytes());
    out.extend_from_slice(&model.meta.seed.to_le_bytes());
    out.extend_from_slice(&(model.meta.config.len() as u32).to_le_bytes());
    out.extend_from_slice(model.meta.config.as_bytes());
    for w in &model.timeline.weights {
        out.extend_from_slice(&(*w as f32).to_le_bytes());
    }
    for f in Field::ALL {
        for v in p.field(f) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    for o in &model.overlays {
        out.extend_from_slice(&(o.frame as u32).to_le_bytes());
        out.extend_from_slice(&(o.gaussians.len() as u32).to_le_bytes());
        for g in &o.gaussians {
            let rec = [
                g.mean[0], g.mean[1], g.cov.theta, g.cov.s1, g.cov.s2, g.scale, g.opacity, g.color[0], g.color[1],
                g.color[2],
            ];
            for v in rec {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| self.corrupt(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| self.corrupt(format!("{what} size overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| self.corrupt(format!("{what} size overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Corrupt {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let n = r.u32("component count")? as usize;
    let n_frames = r.u32("frame count")? as usize;
    let degree = r.u32("poly degree")? as usize;
    let width = r.u32("width")? as usize;
    let height = r.u32("height")? as usize;
    let n_overlays = r.u32("overlay count")? as usize;
    if degree > MAX_POLY_DEGREE {
        return Err(r.corrupt(format!("poly degree {degree} too large")));
    }
    if n_frames < 2 {
        return Err(r.corrupt(format!("frame count {n_frames} < 2")));
    }
    if width == 0 || height == 0 {
        return Err(r.corrupt(format!("invalid frame size {width}x{height}")));
    }
    let bg = r.f32s(3, "background")?;
    let steps = r.u64("steps")?;
    let seed = r.u64("seed")?;
    let config_len = r.u32("config length")? as usize;
    let config_at = r.pos;
    let config = std::str::from_utf8(r.take(config_len, "config")?)
        .map_err(|e| Error::Corrupt {
            offset: config_at + e.valid_up_to(),
            reason: "config is not UTF-8".into(),
        })?
        .to_string();

    // Size check before allocating anything proportional to the counts.
    let row_floats: usize = Field::ALL.iter().map(|f| f.stride(degree)).sum();
    let needed = n
        .checked_mul(row_floats)
        .and_then(|v| v.checked_add(n_frames - 1))
        .and_then(|v| v.checked_mul(4));
    match needed {
        Some(b) if b <= r.remaining() => {}
        _ => return Err(r.corrupt("truncated component data")),
    }

    let weights_at = r.pos;
    let weights = r.f32s(n_frames - 1, "timeline")?;
    let timeline = FrameTimeline::new(weights).map_err(|e| Error::Corrupt {
        offset: weights_at,
        reason: e.to_string(),
    })?;
    let mut params = ParamTable::zeros(degree, n);
    for f in Field::ALL {
        let at = r.pos;
        let values = r.f32s(n * f.stride(degree), f.name())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt {
                offset: at,
                reason: format!("non-finite value in {}", f.name()),
            });
        }
        params.field_mut(f).copy_from_slice(&values);
    }

    let mut overlays: Vec<FrameOverlay> = Vec::new();
    for _ in 0..n_overlays {
        let at = r.pos;
        let frame = r.u32("overlay frame")? as usize;
        if frame >= n_frames || overlays.iter().any(|o| o.frame == frame) {
            return Err(Error::Corrupt {
                offset: at,
                reason: format!("invalid overlay frame {frame}"),
            });
        }
        let count = r.u32("overlay count")? as usize;
        match count.checked_mul(OVERLAY_RECORD * 8) {
            Some(b) if b <= r.remaining() => {}
            _ => return Err(r.corrupt("truncated overlay")),
        }
        let values = r.f64s(count * OVERLAY_RECORD, "overlay")?;
        let gaussians = values
            .chunks_exact(OVERLAY_RECORD)
            .map(|v| ConditionedGaussian2D {
                mean: [v[0], v[1]],
                cov: SpatialCov2::new(v[2], v[3], v[4]),
                scale: v[5],
                opacity: v[6],
                color: [v[7], v[8], v[9]],
            })
            .collect();
        overlays.push(FrameOverlay { frame, gaussians });
    }
    if r.remaining() != 0 {
        return Err(r.corrupt(format!("{} trailing bytes", r.remaining())));
    }

    Ok(Model {
        params,
        timeline,
        width,
        height,
        background: [bg[0], bg[1], bg[2]],
        overlays,
        meta: TrainingMeta { steps, seed, config },
    })
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
