//! Myocardium point sets, sampling grids and differentiable bilinear
//! patch extraction at non-integer coordinates.
//!
//! Coordinates are `(x, y)` with `x` the column and `y` the row; pixel
//! centres sit on integers.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// `N` points of one frame, in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<[f32; 2]>,
}

impl PointSet {
    pub fn new(points: Vec<[f32; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Geometry("point set must not be empty".into()));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::Geometry(format!("point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f32; 2]] {
        &self.points
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.points.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(sx, sy), p| {
            (sx + p[0] as f64, sy + p[1] as f64)
        });
        [sx / n, sy / n]
    }

    pub fn translated(&self, dx: f32, dy: f32) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
        }
    }

    pub fn scaled(&self, sx: f32, sy: f32) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] * sx, p[1] * sy]).collect(),
        }
    }

    /// `[N, 2]` tensor of `(x, y)` rows.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .points
            .iter()
            .flat_map(|p| [T::from_f64(p[0] as f64), T::from_f64(p[1] as f64)])
            .collect();
        Tensor::new(&[self.points.len(), 2], data).expect("N×2 by construction")
    }
}

/// Point sets tracking the myocardium through `T` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSequence {
    frames: Vec<PointSet>,
    pub frame_time_ms: f32,
}

impl PointSequence {
    pub fn new(frames: Vec<PointSet>, frame_time_ms: f32) -> Result<Self> {
        let n = frames
            .first()
            .ok_or_else(|| Error::Geometry("point sequence needs at least one frame".into()))?
            .len();
        if let Some(t) = frames.iter().position(|f| f.len() != n) {
            return Err(Error::Geometry(format!(
                "frame {t} has {} points, expected {n}",
                frames[t].len()
            )));
        }
        Ok(Self {
            frames,
            frame_time_ms,
        })
    }

    pub fn frames(&self) -> &[PointSet] {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn points_per_frame(&self) -> usize {
        self.frames[0].len()
    }

    /// `[T, N, 2]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .frames
            .iter()
            .flat_map(|f| f.to_tensor::<T>().into_vec())
            .collect();
        Tensor::new(&[self.frames.len(), self.points_per_frame(), 2], data)
            .expect("T×N×2 by construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadConfig {
    /// Distance between successive rings, in pixels.
    pub spacing: f64,
    /// Number of rings added outside the contour.
    pub rows: usize,
    /// Interior reference point; normals are oriented away from it.
    /// Defaults to the contour centroid.
    pub cavity: Option<[f64; 2]>,
}

impl Default for SpreadConfig {
    fn default() -> Self {
        Self {
            spacing: 6.0,
            rows: 3,
            cavity: None,
        }
    }
}

/// Unit outward normals of an open contour, from central-difference
/// tangents (one-sided at the endpoints).
pub fn contour_normals(contour: &PointSet, cavity: Option<[f64; 2]>) -> Result<Vec<[f64; 2]>> {
    let p: Vec<[f64; 2]> = contour
        .points()
        .iter()
        .map(|q| [q[0] as f64, q[1] as f64])
        .collect();
    let n = p.len();
    if n < 3 {
        return Err(Error::Geometry(format!(
            "contour needs at least 3 points, got {n}"
        )));
    }
    if let Some(i) = (1..n).find(|&i| p[i] == p[i - 1]) {
        return Err(Error::DegenerateContour { index: i });
    }
    let centre = cavity.unwrap_or_else(|| contour.centroid());
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (p[0], p[1]),
                _ if i == n - 1 => (p[n - 2], p[n - 1]),
                _ => (p[i - 1], p[i + 1]),
            };
            let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
            let len = tx.hypot(ty);
            if len == 0.0 {
                return Err(Error::DegenerateContour { index: i });
            }
            let mut normal = [-ty / len, tx / len];
            let away = (p[i][0] - centre[0]) * normal[0] + (p[i][1] - centre[1]) * normal[1];
            if away < 0.0 {
                normal = [-normal[0], -normal[1]];
            }
            Ok(normal)
        })
        .collect()
}

/// Adds `rows` rings of points outside an endocardial contour at
/// `spacing` intervals along the per-point outward normal.
///
/// Output order is ring-major: the contour itself, then ring 1, 2, …, each
/// in contour order. Points are clamped into the `(height, width)` frame.
pub fn spread_contour(
    contour: &PointSet,
    cfg: &SpreadConfig,
    extent: (usize, usize),
) -> Result<PointSet> {
    if !(cfg.spacing > 0.0) {
        return Err(Error::config(format!(
            "spacing must be positive, got {}",
            cfg.spacing
        )));
    }
    let normals = contour_normals(contour, cfg.cavity)?;
    let (h, w) = extent;
    let (xmax, ymax) = (w.saturating_sub(1) as f64, h.saturating_sub(1) as f64);
    let mut out = Vec::with_capacity(contour.len() * (cfg.rows + 1));
    for ring in 0..=cfg.rows {
        let d = cfg.spacing * ring as f64;
        for (p, nrm) in contour.points().iter().zip(&normals) {
            let x = (p[0] as f64 + nrm[0] * d).clamp(0.0, xmax);
            let y = (p[1] as f64 + nrm[1] * d).clamp(0.0, ymax);
            out.push([x as f32, y as f32]);
        }
    }
    PointSet::new(out)
}

/// `j×j` offsets `(u - (j-1)/2, v - (j-1)/2)`, row-major (`v` outer).
pub fn grid_offsets(j: usize) -> Vec<[f64; 2]> {
    let c = (j as f64 - 1.0) / 2.0;
    (0..j)
        .flat_map(|v| (0..j).map(move |u| [u as f64 - c, v as f64 - c]))
        .collect()
}

/// Sampling grid of `j×j` coordinates centred on `center`.
pub fn sampling_grid(center: [f64; 2], j: usize) -> Vec<[f64; 2]> {
    grid_offsets(j)
        .into_iter()
        .map(|o| [center[0] + o[0], center[1] + o[1]])
        .collect()
}

/// Interpolation cell for one axis: lower/upper index, blend weight, and
/// whether the coordinate was inside the clamp range (zero slope outside).
#[derive(Clone, Copy)]
struct Cell1 {
    lo: usize,
    hi: usize,
    t: f64,
    inside: bool,
}

fn cell(coord: f64, extent: usize) -> Cell1 {
    let max = (extent - 1) as f64;
    let c = coord.clamp(0.0, max);
    let lo = (c.floor() as usize).min(extent - 1);
    Cell1 {
        lo,
        hi: (lo + 1).min(extent - 1),
        t: c - lo as f64,
        inside: (0.0..=max).contains(&coord),
    }
}

/// Border-clamped bilinear value of a row-major `h×w` frame at `(x, y)`.
pub fn sample_bilinear<T: Scalar>(frame: &[T], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let (cx, cy) = (cell(x, w), cell(y, h));
    let f = |r: usize, c: usize| frame[r * w + c].as_f64();
    let top = (1.0 - cx.t) * f(cy.lo, cx.lo) + cx.t * f(cy.lo, cx.hi);
    let bot = (1.0 - cx.t) * f(cy.hi, cx.lo) + cx.t * f(cy.hi, cx.hi);
    (1.0 - cy.t) * top + cy.t * bot
}

/// A `j×j` patch of intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub values: Vec<f32>,
}

/// Non-differentiable patch extraction for rendering and data checks.
pub fn extract_patch(frame: &[f32], h: usize, w: usize, center: [f64; 2], j: usize) -> Patch {
    let values = sampling_grid(center, j)
        .into_iter()
        .map(|[x, y]| sample_bilinear(frame, h, w, x, y) as f32)
        .collect();
    Patch { size: j, values }
}

/// Bilinear sampling of `frames: [F, H, W]` at `coords: [F, P, 2]`,
/// giving `[F, P]`. Differentiable with respect to both intensities and
/// coordinates.
pub fn bilinear_sample<'t, T: Scalar>(
    frames: Var<'t, T>,
    coords: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (fv, cv) = (frames.value(), coords.value());
    let (fs, cs) = (fv.shape().to_vec(), cv.shape().to_vec());
    if fs.len() != 3 || cs.len() != 3 || cs[2] != 2 || cs[0] != fs[0] || fs[1] == 0 || fs[2] == 0 {
        return Err(Error::shape("bilinear_sample", &fs, &cs));
    }
    let (nf, h, w, np) = (fs[0], fs[1], fs[2], cs[1]);
    let mut out = Vec::with_capacity(nf * np);
    for f in 0..nf {
        let frame = &fv.data()[f * h * w..(f + 1) * h * w];
        for c in cv.data()[f * np * 2..(f + 1) * np * 2].chunks_exact(2) {
            out.push(T::from_f64(sample_bilinear(
                frame,
                h,
                w,
                c[0].as_f64(),
                c[1].as_f64(),
            )));
        }
    }
    let value = Tensor::new(&[nf, np], out)?;
    let tape = frames.tape();
    Ok(tape.op(value, &[frames, coords], move |g, need| {
        let mut gframe = need[0].then(|| vec![T::zero(); fv.numel()]);
        let mut gcoord = need[1].then(|| vec![T::zero(); cv.numel()]);
        for f in 0..nf {
            let frame = &fv.data()[f * h * w..(f + 1) * h * w];
            let px = |r: usize, c: usize| frame[r * w + c].as_f64();
            for p in 0..np {
                let k = f * np + p;
                let gv = g.data()[k].as_f64();
                if gv == 0.0 {
                    continue;
                }
                let (x, y) = (cv.data()[2 * k].as_f64(), cv.data()[2 * k + 1].as_f64());
                let (cx, cy) = (cell(x, w), cell(y, h));
                if let Some(gf) = gframe.as_mut() {
                    let base = f * h * w;
                    let mut acc = |r: usize, c: usize, wgt: f64| {
                        let slot = &mut gf[base + r * w + c];
                        *slot = *slot + T::from_f64(gv * wgt);
                    };
                    acc(cy.lo, cx.lo, (1.0 - cy.t) * (1.0 - cx.t));
                    acc(cy.lo, cx.hi, (1.0 - cy.t) * cx.t);
                    acc(cy.hi, cx.lo, cy.t * (1.0 - cx.t));
                    acc(cy.hi, cx.hi, cy.t * cx.t);
                }
                if let Some(gc) = gcoord.as_mut() {
                    let (f00, f01) = (px(cy.lo, cx.lo), px(cy.lo, cx.hi));
                    let (f10, f11) = (px(cy.hi, cx.lo), px(cy.hi, cx.hi));
                    if cx.inside {
                        let dx = (1.0 - cy.t) * (f01 - f00) + cy.t * (f11 - f10);
                        gc[2 * k] = gc[2 * k] + T::from_f64(gv * dx);
                    }
                    if cy.inside {
                        let dy = (1.0 - cx.t) * (f10 - f00) + cx.t * (f11 - f01);
                        gc[2 * k + 1] = gc[2 * k + 1] + T::from_f64(gv * dy);
                    }
                }
            }
        }
        vec![gframe, gcoord]
    }))
}

/// Expands centres `[F, N, 2]` into sampling-grid coordinates
/// `[F, N·j·j, 2]`. The backward pass sums over each grid.
pub fn expand_to_grid<'t, T: Scalar>(centers: Var<'t, T>, j: usize) -> Result<Var<'t, T>> {
    let cv = centers.value();
    let s = cv.shape().to_vec();
    if s.len() != 3 || s[2] != 2 || j == 0 {
        return Err(Error::shape("expand_to_grid", &s, &[j]));
    }
    let offsets = grid_offsets(j);
    let jj = offsets.len();
    let mut out = Vec::with_capacity(cv.numel() * jj);
    for c in cv.data().chunks_exact(2) {
        for o in &offsets {
            out.push(c[0] + T::from_f64(o[0]));
            out.push(c[1] + T::from_f64(o[1]));
        }
    }
    let value = Tensor::new(&[s[0], s[1] * jj, 2], out)?;
    Ok(centers.tape().op(value, &[centers], move |g, _| {
        let gc = g
            .data()
            .chunks_exact(2 * jj)
            .flat_map(|grid| {
                let (mut gx, mut gy) = (T::zero(), T::zero());
                for xy in grid.chunks_exact(2) {
                    gx = gx + xy[0];
                    gy = gy + xy[1];
                }
                [gx, gy]
            })
            .collect();
        vec![Some(gc)]
    }))
}

/// Patches `[F, N, j·j]` centred on `centers: [F, N, 2]` in
/// `frames: [F, H, W]`.
pub fn sample_patches<'t, T: Scalar>(
    frames: Var<'t, T>,
    centers: Var<'t, T>,
    j: usize,
) -> Result<Var<'t, T>> {
    let s = centers.shape();
    let grid = expand_to_grid(centers, j)?;
    bilinear_sample(frames, grid)?.reshape(&[s[0], s[1], j * j])
}
