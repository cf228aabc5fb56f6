use crate::error::{Error, Result};
use crate::geometry::{spread_contour, PointSequence, PointSet, SpreadConfig};

use super::Clip;

pub const TARGET_FRAME_TIME_MS: f32 = 33.33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `x / 255`, range `[0, 1]`.
    Unit,
    /// `(x / 255 - 0.5) / 0.5`, range `[-1, 1]`.
    #[default]
    Centered,
}

impl Normalization {
    pub fn apply(self, x: f32) -> f32 {
        self.from_unit(x / 255.0)
    }

    /// Maps an intensity already scaled to `[0, 1]`.
    pub fn from_unit(self, u: f32) -> f32 {
        match self {
            Normalization::Unit => u,
            Normalization::Centered => (u - 0.5) / 0.5,
        }
    }

    /// Inverse of [`Normalization::from_unit`].
    pub fn to_unit(self, v: f32) -> f32 {
        match self {
            Normalization::Unit => v,
            Normalization::Centered => v * 0.5 + 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub size: usize,
    pub clip_len: usize,
    pub frame_time_ms: f32,
    pub contour_points: usize,
    pub normalization: Normalization,
    /// Applied after resizing, so spacing is in output pixels.
    pub spread: SpreadConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            size: 224,
            clip_len: 18,
            frame_time_ms: TARGET_FRAME_TIME_MS,
            contour_points: 21,
            normalization: Normalization::Centered,
            spread: SpreadConfig::default(),
        }
    }
}

/// Raw 8-bit video with an endocardial contour per frame.
#[derive(Debug, Clone)]
pub struct RawVideo {
    pub height: usize,
    pub width: usize,
    /// 1 (gray) or 3 (interleaved RGB).
    pub channels: usize,
    pub frames: Vec<Vec<u8>>,
    pub frame_time_ms: f32,
    pub contours: Vec<PointSet>,
    pub ed_index: usize,
    pub label: u8,
    pub patient_id: String,
}

fn ingest(msg: impl Into<String>) -> Error {
    Error::Ingest(msg.into())
}

/// Fractional source indices of `len` output frames starting at `start`.
pub fn resample_times(start: usize, len: usize, source_ms: f32, target_ms: f32) -> Vec<f64> {
    let ratio = target_ms as f64 / source_ms as f64;
    (0..len).map(|m| start as f64 + m as f64 * ratio).collect()
}

fn lerp_index(s: f64) -> (usize, f64) {
    let i = s.floor();
    (i as usize, s - i)
}

/// Bilinear resize with `src = dst · (in / out)`, border-clamped.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let axis = |n: usize, scale: f64, len: usize| -> Vec<(usize, usize, f64)> {
        (0..n)
            .map(|o| {
                let s = (o as f64 * scale).clamp(0.0, (len - 1) as f64);
                let i0 = s.floor() as usize;
                (i0, (i0 + 1).min(len - 1), s - i0 as f64)
            })
            .collect()
    };
    let ys = axis(oh, sy, h);
    let xs = axis(ow, sx, w);
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] as f64 * (1.0 - fx) + r0[x1] as f64 * fx;
            let bot = r1[x0] as f64 * (1.0 - fx) + r1[x1] as f64 * fx;
            out.push((top * (1.0 - fy) + bot * fy) as f32);
        }
    }
    out
}

fn grayscale(frame: &[u8], channels: usize) -> Vec<f32> {
    match channels {
        1 => frame.iter().map(|&v| v as f32).collect(),
        _ => frame
            .chunks_exact(channels)
            .map(|c| 0.299 * c[0] as f32 + 0.587 * c[1] as f32 + 0.114 * c[2] as f32)
            .collect(),
    }
}

/// Grayscale, resample to the target frame time from the end-diastole
/// frame, resize, normalize and spread the contour.
pub fn preprocess(raw: &RawVideo, cfg: &PreprocessConfig) -> Result<Clip> {
    if raw.channels != 1 && raw.channels != 3 {
        return Err(ingest(format!(
            "unsupported channel count {}",
            raw.channels
        )));
    }
    if raw.frames.len() != raw.contours.len() {
        return Err(ingest(format!(
            "{} frames but {} contours",
            raw.frames.len(),
            raw.contours.len()
        )));
    }
    let px = raw.height * raw.width;
    if let Some(i) = raw.frames.iter().position(|f| f.len() != px * raw.channels) {
        return Err(ingest(format!("frame {i} has the wrong byte count")));
    }
    if let Some(i) = raw
        .contours
        .iter()
        .position(|c| c.len() != cfg.contour_points)
    {
        return Err(ingest(format!(
            "contour {i} has {} points, expected {}",
            raw.contours[i].len(),
            cfg.contour_points
        )));
    }
    if raw.ed_index >= raw.frames.len() {
        return Err(ingest(format!(
            "end-diastole index {} out of range",
            raw.ed_index
        )));
    }
    if !(raw.frame_time_ms > 0.0) {
        return Err(ingest("frame time must be positive"));
    }

    let times = resample_times(
        raw.ed_index,
        cfg.clip_len,
        raw.frame_time_ms,
        cfg.frame_time_ms,
    );
    let last = (raw.frames.len() - 1) as f64;
    if times.last().is_some_and(|&s| s > last + 1e-9) {
        return Err(ingest(format!(
            "clip yields fewer than {} frames at {} ms from end diastole",
            cfg.clip_len, cfg.frame_time_ms
        )));
    }

    let gray: Vec<Vec<f32>> = raw
        .frames
        .iter()
        .map(|f| grayscale(f, raw.channels))
        .collect();
    let (sx, sy) = (
        cfg.size as f32 / raw.width as f32,
        cfg.size as f32 / raw.height as f32,
    );
    let mut frames = Vec::with_capacity(cfg.clip_len * cfg.size * cfg.size);
    let mut sets = Vec::with_capacity(cfg.clip_len);
    for &s in &times {
        let (i0, f) = lerp_index(s.min(last));
        let i1 = (i0 + 1).min(raw.frames.len() - 1);
        let blended: Vec<f32> = if f == 0.0 {
            gray[i0].clone()
        } else {
            gray[i0]
                .iter()
                .zip(&gray[i1])
                .map(|(&a, &b)| (a as f64 * (1.0 - f) + b as f64 * f) as f32)
                .collect()
        };
        let resized = resize_bilinear(&blended, raw.height, raw.width, cfg.size, cfg.size);
        frames.extend(resized.into_iter().map(|v| cfg.normalization.apply(v)));

        let contour: Vec<[f32; 2]> = raw.contours[i0]
            .points()
            .iter()
            .zip(raw.contours[i1].points())
            .map(|(a, b)| {
                let x = a[0] as f64 * (1.0 - f) + b[0] as f64 * f;
                let y = a[1] as f64 * (1.0 - f) + b[1] as f64 * f;
                [x as f32 * sx, y as f32 * sy]
            })
            .collect();
        let contour = PointSet::new(contour)?;
        sets.push(spread_contour(&contour, &cfg.spread, (cfg.size, cfg.size))?);
    }
    Ok(Clip {
        height: cfg.size,
        width: cfg.size,
        frames,
        points: PointSequence::new(sets, cfg.frame_time_ms)?,
        label: raw.label,
        frame_time_ms: cfg.frame_time_ms,
        patient_id: raw.patient_id.clone(),
    })
}
