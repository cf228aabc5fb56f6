use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PointSequence, PointSet};
use crate::tensor::{Scalar, Tensor};

pub const CLIP_MAGIC: &[u8; 4] = b"VCLP";
pub const CLIP_VERSION: u32 = 1;

/// Grayscale video frames with the tracked myocardium points and a binary
/// label (1 = amyloidosis, 0 = control).
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub height: usize,
    pub width: usize,
    /// `T·H·W` intensities, row-major per frame.
    pub frames: Vec<f32>,
    pub points: PointSequence,
    pub label: u8,
    pub frame_time_ms: f32,
    pub patient_id: String,
}

impl Clip {
    pub fn num_frames(&self) -> usize {
        self.points.num_frames()
    }

    pub fn points_per_frame(&self) -> usize {
        self.points.points_per_frame()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.frames[t * n..(t + 1) * n]
    }

    /// `[T, H, W]`.
    pub fn frames_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            &[self.num_frames(), self.height, self.width],
            self.frames.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
        .expect("frame buffer matches T×H×W")
    }

    /// `[T, N, 2]`.
    pub fn points_tensor<T: Scalar>(&self) -> Tensor<T> {
        self.points.to_tensor()
    }

    /// First `len` frames and point sets.
    pub fn truncated(&self, len: usize) -> Result<Clip> {
        if len == 0 || len > self.num_frames() {
            return Err(Error::config(format!(
                "cannot take {len} frames of a {}-frame clip",
                self.num_frames()
            )));
        }
        Ok(Clip {
            frames: self.frames[..len * self.height * self.width].to_vec(),
            points: PointSequence::new(self.points.frames()[..len].to_vec(), self.frame_time_ms)?,
            ..self.clone()
        })
    }
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "clip container",
        detail: detail.into(),
    }
}

pub fn write_clip(w: &mut impl Write, clip: &Clip) -> Result<()> {
    let (t, n) = (clip.num_frames(), clip.points_per_frame());
    if clip.frames.len() != t * clip.height * clip.width {
        return Err(format_err("frame buffer does not match T×H×W"));
    }
    w.write_all(CLIP_MAGIC)?;
    for v in [
        CLIP_VERSION,
        clip.height as u32,
        clip.width as u32,
        t as u32,
        n as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&clip.frame_time_ms.to_le_bytes())?;
    w.write_all(&[clip.label])?;
    let id = clip.patient_id.as_bytes();
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id)?;
    let mut buf = Vec::with_capacity(clip.frames.len() * 4);
    for v in &clip.frames {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for frame in clip.points.frames() {
        for p in frame.points() {
            buf.extend_from_slice(&p[0].to_le_bytes());
            buf.extend_from_slice(&p[1].to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> io::Result<Vec<f32>> {
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_clip(r: &mut impl Read) -> Result<Clip> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CLIP_MAGIC {
        return Err(format_err(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != CLIP_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let (h, w, t, n) = (
        read_u32(r)? as usize,
        read_u32(r)? as usize,
        read_u32(r)? as usize,
        read_u32(r)? as usize,
    );
    let mut ft = [0u8; 4];
    r.read_exact(&mut ft)?;
    let frame_time_ms = f32::from_le_bytes(ft);
    let mut label = [0u8; 1];
    r.read_exact(&mut label)?;
    let id_len = read_u32(r)? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id)?;
    let patient_id = String::from_utf8(id).map_err(|e| format_err(e.to_string()))?;
    let frames = read_f32s(r, t * h * w)?;
    let coords = read_f32s(r, t * n * 2)?;
    let sets = coords
        .chunks_exact(n * 2)
        .map(|c| PointSet::new(c.chunks_exact(2).map(|p| [p[0], p[1]]).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Clip {
        height: h,
        width: w,
        frames,
        points: PointSequence::new(sets, frame_time_ms)?,
        label: label[0],
        frame_time_ms,
        patient_id,
    })
}

impl Clip {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_clip(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Clip> {
        read_clip(&mut BufReader::new(File::open(path)?))
    }
}
