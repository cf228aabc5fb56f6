use crate::data::Clip;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Every frame of a clip collection, addressed as `(clip, frame)`.
#[derive(Debug, Clone)]
pub struct FrameSet<'a> {
    clips: &'a [Clip],
    index: Vec<(usize, usize)>,
}

impl<'a> FrameSet<'a> {
    pub fn new(clips: &'a [Clip]) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| Error::config("no clips to draw frames from"))?;
        let dims = (first.height, first.width, first.points_per_frame());
        if let Some(c) = clips
            .iter()
            .find(|c| (c.height, c.width, c.points_per_frame()) != dims)
        {
            return Err(Error::config(format!(
                "clip {} is {}×{} with {} points, expected {dims:?}",
                c.patient_id,
                c.height,
                c.width,
                c.points_per_frame()
            )));
        }
        let index = clips
            .iter()
            .enumerate()
            .flat_map(|(c, clip)| (0..clip.num_frames()).map(move |t| (c, t)))
            .collect();
        Ok(Self { clips, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.clips[0].height, self.clips[0].width)
    }

    pub fn points_per_frame(&self) -> usize {
        self.clips[0].points_per_frame()
    }

    /// `([F, H, W], [F, N, 2])` for the given frame indices.
    pub fn batch<T: Scalar>(&self, ids: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let (h, w) = self.extent();
        let n = self.points_per_frame();
        let mut frames = Vec::with_capacity(ids.len() * h * w);
        let mut points = Vec::with_capacity(ids.len() * n * 2);
        for &i in ids {
            let (c, t) = self.index[i];
            let clip = &self.clips[c];
            frames.extend(clip.frame(t).iter().map(|&v| T::from_f64(v as f64)));
            for p in clip.points.frames()[t].points() {
                points.push(T::from_f64(p[0] as f64));
                points.push(T::from_f64(p[1] as f64));
            }
        }
        (
            Tensor::new(&[ids.len(), h, w], frames).expect("frame batch"),
            Tensor::new(&[ids.len(), n, 2], points).expect("point batch"),
        )
    }
}

/// Stacked clip tensors for the classifier.
#[derive(Debug, Clone)]
pub struct ClipBatch<T: Scalar> {
    /// `[B, T, H, W]`
    pub frames: Tensor<T>,
    /// `[B, T, N, 2]`
    pub points: Tensor<T>,
    /// `[B]`, 0 or 1.
    pub labels: Tensor<T>,
}

/// Stacks the first `frames` frames of each clip.
pub fn clip_batch<T: Scalar>(clips: &[&Clip], frames: usize) -> Result<ClipBatch<T>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::config("empty clip batch"))?;
    let (h, w, n) = (first.height, first.width, first.points_per_frame());
    let mut fr = Vec::with_capacity(clips.len() * frames * h * w);
    let mut pts = Vec::with_capacity(clips.len() * frames * n * 2);
    let mut labels = Vec::with_capacity(clips.len());
    for clip in clips {
        if (clip.height, clip.width, clip.points_per_frame()) != (h, w, n) {
            return Err(Error::config(format!(
                "clip {} does not match the batch geometry",
                clip.patient_id
            )));
        }
        if clip.num_frames() < frames {
            return Err(Error::config(format!(
                "clip {} has {} frames, need {frames}",
                clip.patient_id,
                clip.num_frames()
            )));
        }
        fr.extend(
            clip.frames[..frames * h * w]
                .iter()
                .map(|&v| T::from_f64(v as f64)),
        );
        for set in &clip.points.frames()[..frames] {
            for p in set.points() {
                pts.push(T::from_f64(p[0] as f64));
                pts.push(T::from_f64(p[1] as f64));
            }
        }
        labels.push(T::from_f64(clip.label as f64));
    }
    let b = clips.len();
    Ok(ClipBatch {
        frames: Tensor::new(&[b, frames, h, w], fr)?,
        points: Tensor::new(&[b, frames, n, 2], pts)?,
        labels: Tensor::new(&[b], labels)?,
    })
}
