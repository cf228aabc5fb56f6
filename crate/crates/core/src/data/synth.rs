//! Synthetic echo-like clips: a U-shaped myocardial band on a speckled disk.
//!
//! Controls contract uniformly along the contour. Amyloid clips keep the
//! apical motion but damp the basal displacement, and their band texture
//! carries bright sparse speckle. `signal` scales both differences; at 0 the
//! classes are drawn from the same distribution.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};

use super::{split_dataset, Clip, ManifestRecord, Normalization, Split};
use crate::error::{Error, Result};
use crate::geometry::{spread_contour, PointSequence, PointSet, SpreadConfig};
use crate::seed::derive_seed;

/// Contour indices at the two valve ends.
pub const BASAL_POINTS: [usize; 4] = [0, 1, 19, 20];
/// Contour indices around the apex.
pub const APICAL_POINTS: [usize; 3] = [9, 10, 11];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub frames: usize,
    pub frame_time_ms: f32,
    pub contour_points: usize,
    pub spread: SpreadConfig,
    /// Class separation in `[0, 1]`.
    pub signal: f64,
    /// Basal/apical displacement ratio of amyloid clips at full signal.
    pub basal_ratio: f64,
    /// Per-clip spread of the displacement ratio.
    pub ratio_jitter: f64,
    /// Peak wall displacement as a fraction of the image size.
    pub amplitude: f64,
    /// Peak brightness of the sparse band speckle.
    pub sparkle: f64,
    /// Tracking noise on emitted points, in pixels at 224.
    pub point_noise: f64,
    pub normalization: Normalization,
}

impl SynthConfig {
    pub fn new(size: usize, frames: usize) -> Self {
        let scale = size as f64 / 224.0;
        Self {
            size,
            frames,
            frame_time_ms: super::TARGET_FRAME_TIME_MS,
            contour_points: 21,
            spread: SpreadConfig {
                spacing: 6.0 * scale,
                ..SpreadConfig::default()
            },
            signal: 1.0,
            basal_ratio: 0.4,
            ratio_jitter: 0.08,
            amplitude: 0.06,
            sparkle: 0.5,
            point_noise: 0.25,
            normalization: Normalization::default(),
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::new(224, 18)
    }
}

struct Heart {
    base: Vec<[f64; 2]>,
    weights: Vec<f64>,
    toward: Vec<[f64; 2]>,
    amp: f64,
    period_ms: f64,
}

impl Heart {
    fn contour(&self, t_ms: f64) -> Vec<[f64; 2]> {
        let s = 0.5 * (1.0 - (2.0 * PI * t_ms / self.period_ms).cos());
        self.base
            .iter()
            .zip(&self.weights)
            .zip(&self.toward)
            .map(|((p, w), d)| {
                let m = self.amp * w * s;
                [p[0] + m * d[0], p[1] + m * d[1]]
            })
            .collect()
    }
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

struct Texture {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Texture {
    fn bilinear(&self, u: f64, v: f64) -> f64 {
        let x = (u * (self.cols - 1) as f64).clamp(0.0, (self.cols - 1) as f64);
        let y = (v * (self.rows - 1) as f64).clamp(0.0, (self.rows - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.cols - 1), (y0 + 1).min(self.rows - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |r: usize, c: usize| self.values[r * self.cols + c];
        (at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx) * (1.0 - fy)
            + (at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx) * fy
    }

    fn nearest(&self, u: f64, v: f64) -> f64 {
        let c = ((u * self.cols as f64) as usize).min(self.cols - 1);
        let r = ((v * self.rows as f64) as usize).min(self.rows - 1);
        self.values[r * self.cols + c]
    }
}

/// Dense polyline with arc parameter, unit tangents and outward normals.
struct Band {
    pts: Vec<[f64; 2]>,
    u: Vec<f64>,
    tangent: Vec<[f64; 2]>,
    normal: Vec<[f64; 2]>,
    step: f64,
}

const SUBDIV: usize = 8;

impl Band {
    fn new(contour: &[[f64; 2]], inside: [f64; 2]) -> Self {
        let segs = contour.len() - 1;
        let mut pts = Vec::with_capacity(segs * SUBDIV + 1);
        let mut u = Vec::with_capacity(pts.capacity());
        for i in 0..segs {
            let (a, b) = (contour[i], contour[i + 1]);
            for k in 0..SUBDIV {
                let f = k as f64 / SUBDIV as f64;
                pts.push([a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f]);
                u.push((i as f64 + f) / segs as f64);
            }
        }
        pts.push(contour[segs]);
        u.push(1.0);
        let n = pts.len();
        let mut tangent = Vec::with_capacity(n);
        let mut normal = Vec::with_capacity(n);
        let mut step: f64 = 0.0;
        for i in 0..n {
            let (a, b) = (pts[i.saturating_sub(1)], pts[(i + 1).min(n - 1)]);
            let t = unit([b[0] - a[0], b[1] - a[1]]);
            let mut nrm = [-t[1], t[0]];
            if (pts[i][0] - inside[0]) * nrm[0] + (pts[i][1] - inside[1]) * nrm[1] < 0.0 {
                nrm = [-nrm[0], -nrm[1]];
            }
            tangent.push(t);
            normal.push(nrm);
            if i > 0 {
                step = step.max((pts[i][0] - pts[i - 1][0]).hypot(pts[i][1] - pts[i - 1][1]));
            }
        }
        Self {
            pts,
            u,
            tangent,
            normal,
            step,
        }
    }

    /// `(u, signed distance)` of a pixel, `None` past the open ends.
    fn locate(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.pts.iter().enumerate() {
            let d = (x - p[0]).powi(2) + (y - p[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        let i = best.1;
        let (dx, dy) = (x - self.pts[i][0], y - self.pts[i][1]);
        let along = dx * self.tangent[i][0] + dy * self.tangent[i][1];
        if along.abs() > self.step {
            return None;
        }
        Some((self.u[i], dx * self.normal[i][0] + dy * self.normal[i][1]))
    }
}

fn render_clip(
    cfg: &SynthConfig,
    class: u8,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f32>, Vec<PointSet>)> {
    let s = cfg.size as f64;
    let np = cfg.contour_points;
    let signal = cfg.signal.clamp(0.0, 1.0);
    let gain = rng.random_range(0.8..1.2);
    let cx = s * (0.5 + rng.random_range(-0.03..0.03));
    let yb = s * (0.78 + rng.random_range(-0.02..0.02));
    let a = s * 0.17 * rng.random_range(0.9..1.1);
    let b = s * 0.52 * rng.random_range(0.9..1.1);
    let phi_max = 0.45 * PI;
    let cref = [cx, yb - 0.45 * b];

    let jitter = cfg.ratio_jitter * rng.sample::<f64, _>(StandardNormal);
    let ratio = match class {
        0 => 1.0,
        _ => 1.0 - signal * (1.0 - cfg.basal_ratio),
    } + jitter;

    let mut base = Vec::with_capacity(np);
    let mut weights = Vec::with_capacity(np);
    for i in 0..np {
        let phi = -phi_max + 2.0 * phi_max * i as f64 / (np - 1) as f64;
        base.push([cx + a * phi.sin(), yb - b * phi.cos()]);
        let apical = (0.5 * PI * phi / phi_max).cos().powi(2);
        weights.push(ratio + (1.0 - ratio) * apical);
    }
    let toward = base
        .iter()
        .map(|p| unit([cref[0] - p[0], cref[1] - p[1]]))
        .collect();
    let heart = Heart {
        base,
        weights,
        toward,
        amp: s * cfg.amplitude * rng.random_range(0.8..1.2),
        period_ms: rng.random_range(550.0..800.0),
    };

    let thickness = 0.1 * s;
    let speckle = Texture {
        rows: 12,
        cols: 128,
        values: (0..12 * 128).map(|_| rng.sample::<f64, _>(Exp1)).collect(),
    };
    // Spots about 2 px across whatever the image size, so they survive
    // desk-scale resolutions.
    let spot_p = 0.15;
    let (rows, cols) = (
        ((thickness / 2.0).round() as usize).max(2),
        ((1.3 * s / 2.0).round() as usize).max(8),
    );
    let sparkle = Texture {
        rows,
        cols,
        values: (0..rows * cols)
            .map(|_| {
                if rng.random::<f64>() < spot_p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
    };
    let sparkle_amp = cfg.sparkle
        * gain
        * if class == 0 {
            0.25
        } else {
            0.25 + 0.75 * signal
        };

    let n = cfg.size;
    let disk = ([0.5 * s, 0.45 * s], 0.52 * s);
    let background: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (x, y) = ((idx % n) as f64, (idx / n) as f64);
            let inside = (x - disk.0[0]).hypot(y - disk.0[1]) <= disk.1;
            if inside {
                0.18 * gain * (0.4 + 0.6 * rng.sample::<f64, _>(Exp1))
            } else {
                0.0
            }
        })
        .collect();

    let noise = Normal::new(0.0, 0.015).expect("valid std");
    let point_noise = Normal::new(0.0, cfg.point_noise * s / 224.0).expect("valid std");
    let mut frames = Vec::with_capacity(cfg.frames * n * n);
    let mut contours = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let contour = heart.contour(t as f64 * cfg.frame_time_ms as f64);
        let band = Band::new(&contour, cref);
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in &contour {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        let pad = thickness + 2.0;
        for (idx, &bg) in background.iter().enumerate() {
            let (x, y) = ((idx % n) as f64, (idx / n) as f64);
            let mut v = bg;
            if x >= x0 - pad && x <= x1 + pad && y >= y0 - pad && y <= y1 + pad {
                if let Some((u, d)) = band.locate(x, y) {
                    if (0.0..=thickness).contains(&d) {
                        let w = d / thickness;
                        v = gain * 0.42 * (0.55 + 0.45 * speckle.bilinear(u, w))
                            + sparkle_amp * sparkle.nearest(u, w);
                    } else if d < 0.0 {
                        v = 0.04 * gain;
                    }
                }
            }
            v += noise.sample(rng);
            frames.push(cfg.normalization.from_unit(v.clamp(0.0, 1.0) as f32));
        }
        let emitted = contour
            .iter()
            .map(|p| {
                [
                    (p[0] + point_noise.sample(rng)) as f32,
                    (p[1] + point_noise.sample(rng)) as f32,
                ]
            })
            .collect();
        let raw = PointSet::new(emitted)?;
        let spread = SpreadConfig {
            cavity: Some(cref),
            ..cfg.spread
        };
        contours.push(spread_contour(&raw, &spread, (n, n))?);
    }
    Ok((frames, contours))
}

/// `n` clips of one class (0 = control, 1 = amyloid). Clip `i` depends only
/// on `(seed, class, i)`.
pub fn synth_generate(n: usize, class: u8, seed: u64, cfg: &SynthConfig) -> Result<Vec<Clip>> {
    if class > 1 {
        return Err(Error::config(format!("class must be 0 or 1, got {class}")));
    }
    if cfg.contour_points <= APICAL_POINTS[2].max(BASAL_POINTS[3]) {
        return Err(Error::config("synthetic contours need at least 21 points"));
    }
    if cfg.size < 16 || cfg.frames == 0 {
        return Err(Error::config(
            "synthetic clips need size ≥ 16 and at least one frame",
        ));
    }
    (0..n)
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5eed, class as u64, i as u64]));
            let (frames, sets) = render_clip(cfg, class, &mut rng)?;
            Ok(Clip {
                height: cfg.size,
                width: cfg.size,
                frames,
                points: PointSequence::new(sets, cfg.frame_time_ms)?,
                label: class,
                frame_time_ms: cfg.frame_time_ms,
                patient_id: format!("syn-{seed}-{class}-{i:05}"),
            })
        })
        .collect()
}

/// Balanced synthetic cohort of `counts = [train, val, test]` clips, split
/// per patient with [`split_dataset`].
pub fn synth_dataset(
    counts: [usize; 3],
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Vec<(Clip, Split)>> {
    if counts[0] == 0 {
        return Err(Error::config("the training split needs at least one clip"));
    }
    let total: usize = counts.iter().sum();
    let mut clips = synth_generate(total - total / 2, 0, seed, cfg)?;
    clips.extend(synth_generate(total / 2, 1, seed, cfg)?);
    let records: Vec<ManifestRecord> = clips
        .iter()
        .enumerate()
        .map(|(i, c)| ManifestRecord {
            path: i.to_string(),
            label: c.label,
            patient_id: c.patient_id.clone(),
            split: Split::Train,
        })
        .collect();
    let fractions = counts.map(|n| n as f64 / total as f64);
    let assigned = split_dataset(&records, fractions, seed)?;
    let mut split = vec![Split::Train; clips.len()];
    for r in assigned {
        split[r.path.parse::<usize>().expect("index path")] = r.split;
    }
    Ok(clips.into_iter().zip(split).collect())
}

/// Mean peak displacement from frame 0 of the basal contour points over
/// that of the apical ones. Reads the first ring of each frame.
pub fn displacement_ratio(points: &PointSequence) -> f64 {
    let frames = points.frames();
    let peak = |i: usize| {
        let p0 = frames[0].points()[i];
        frames
            .iter()
            .map(|f| {
                let p = f.points()[i];
                ((p[0] - p0[0]) as f64).hypot((p[1] - p0[1]) as f64)
            })
            .fold(0.0, f64::max)
    };
    let mean = |idx: &[usize]| idx.iter().map(|&i| peak(i)).sum::<f64>() / idx.len() as f64;
    mean(&BASAL_POINTS) / mean(&APICAL_POINTS)
}
