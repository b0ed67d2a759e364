//! Moving-object detection by occlusion accumulation.
//!
//! Every frame the previous depth map is warped into the current view and
//! compared with the current depth. A positive difference means something
//! moved in front of what was seen before (occlusion), a negative one that
//! previously hidden background reappeared. The differences are accumulated
//! along the camera motion into a per-pixel map `A`; pixels where `A` exceeds
//! the depth-dependent noise band `α·Z²` are moving objects.
//!
//! The per-frame pipeline is, in order: depth compensation, occlusion map,
//! accumulation, prediction on the newly discovered area, truncation, and
//! background masking. All passes except the prediction frontier loop are
//! row-parallel.
//!
//! All motions are current-to-previous transforms (see [`crate::geometry`]).
//! Depth differences are taken in the previous camera frame: the current
//! measurement is transformed into the previous view before subtracting, so
//! a static scene yields zero difference under any camera motion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    project, unproject, warp_with_depth, CameraIntrinsics, Pixel, RigidTransform, Warped,
};
use crate::image::{sample_bilinear, DepthImage, Image, IntensityImage, Mask};
use crate::labeling::{label_components, neighbors, Connectivity};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionParams {
    /// Quadratic noise coefficient of the detection threshold `α·Z²` (1/m).
    pub alpha: f64,
    /// Quadratic coefficient of the reappearance threshold `β·Z²` (1/m).
    pub beta: f64,
    /// Object components smaller than this are dropped from the mask.
    pub min_component_px: usize,
    /// Width of the image border where no object is labeled.
    pub border_margin_px: usize,
    pub connectivity: Connectivity,
    /// Predict `A` on pixels entering the view instead of leaving them at 0.
    pub predict_new_area: bool,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        OcclusionParams {
            alpha: 0.02,
            beta: 0.02,
            min_component_px: 200,
            border_margin_px: 0,
            connectivity: Connectivity::Four,
            predict_new_area: true,
        }
    }
}

impl OcclusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Detection threshold τ_α at depth `z`.
    #[inline]
    pub fn tau_alpha(&self, z: f64) -> f64 {
        self.alpha * z * z
    }

    /// Reappearance threshold τ_β at depth `z`.
    #[inline]
    pub fn tau_beta(&self, z: f64) -> f64 {
        self.beta * z * z
    }
}

/// Per-pixel depth differences between the warped previous frame and the
/// current frame, plus the pixels whose warp leaves the image.
#[derive(Debug, Clone)]
pub struct OcclusionMap {
    /// ΔZ in meters; NaN where it cannot be computed.
    pub dz: Image<f64>,
    /// Newly discovered area Ω̃: valid-depth pixels warping outside Ω.
    pub new_area: Mask,
}

impl OcclusionMap {
    /// ΔZ with invalid entries read as 0.
    #[inline]
    pub fn dz_or_zero(&self, x: usize, y: usize) -> f64 {
        let d = *self.dz.get(x, y);
        if d.is_nan() {
            0.0
        } else {
            d
        }
    }
}

fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Computes ΔZ(u) = Z_prev(w(u)) − z_prev(u), where `z_prev(u)` is the
/// current measurement expressed in the previous camera frame.
pub fn occlusion_map(
    prev_depth: &DepthImage,
    cur_depth: &DepthImage,
    motion: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<OcclusionMap> {
    let dims = k.dims();
    check_dims(dims, prev_depth.dims())?;
    check_dims(dims, cur_depth.dims())?;
    let (w, h) = dims;
    let rows = par::map_rows(h, |y| {
        let mut dz = Vec::with_capacity(w);
        let mut fresh = Vec::with_capacity(w);
        for x in 0..w {
            let u = Pixel::new(x as f64, y as f64);
            let (d, n) = match warp_with_depth(u, cur_depth.get(x, y), motion, k) {
                Warped::Inside { pixel, point } => match prev_depth.sample(pixel) {
                    Some(zp) => (zp - point.z, false),
                    None => (f64::NAN, false),
                },
                Warped::OutOfFrame => (f64::NAN, true),
                Warped::InvalidDepth => (f64::NAN, false),
            };
            dz.push(d);
            fresh.push(n);
        }
        (dz, fresh)
    });
    let (mut dz, mut fresh) = (Vec::with_capacity(w * h), Vec::with_capacity(w * h));
    for (d, n) in rows {
        dz.extend(d);
        fresh.extend(n);
    }
    Ok(OcclusionMap {
        dz: Image::from_vec(w, h, dz)?,
        new_area: Image::from_vec(w, h, fresh)?,
    })
}

/// A(u) = ΔZ(u) + Ã_prev(w(u)).
///
/// Ã_prev is sampled bilinearly and reads 0 outside Ω. Invalid ΔZ counts as
/// 0. Pixels without current depth cannot be warped and carry Ã_prev(u).
pub fn accumulate(
    prev_truncated: &Image<f64>,
    occ: &OcclusionMap,
    cur_depth: &DepthImage,
    motion: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<Image<f64>> {
    let dims = k.dims();
    check_dims(dims, prev_truncated.dims())?;
    check_dims(dims, occ.dz.dims())?;
    check_dims(dims, cur_depth.dims())?;
    let (w, h) = dims;
    let mut out = Image::filled(w, h, 0.0);
    par::for_each_row(out.data_mut(), w, |y, row| {
        for (x, a) in row.iter_mut().enumerate() {
            let u = Pixel::new(x as f64, y as f64);
            let carried = match warp_with_depth(u, cur_depth.get(x, y), motion, k) {
                Warped::Inside { pixel, .. } => {
                    sample_bilinear(prev_truncated, pixel).unwrap_or(0.0)
                }
                Warped::OutOfFrame => 0.0,
                Warped::InvalidDepth => *prev_truncated.get(x, y),
            };
            *a = occ.dz_or_zero(x, y) + carried;
        }
    });
    Ok(out)
}

/// Truncation: zero where A ≤ τ_α (noise and negative drift) or where
/// ΔZ ≤ −τ_β (background reappearance).
pub fn truncate(
    accumulation: &Image<f64>,
    dz: &Image<f64>,
    cur_depth: &DepthImage,
    params: &OcclusionParams,
) -> Result<Image<f64>> {
    let dims = accumulation.dims();
    check_dims(dims, dz.dims())?;
    check_dims(dims, cur_depth.dims())?;
    Ok(Image::from_fn(dims.0, dims.1, |x, y| {
        let a = *accumulation.get(x, y);
        let z = cur_depth.get(x, y);
        let d = *dz.get(x, y);
        if a <= params.tau_alpha(z) || (!d.is_nan() && d <= -params.tau_beta(z)) {
            0.0
        } else {
            a
        }
    }))
}

/// Background flags straight from the threshold: `true` (B = 1) where
/// A ≤ τ_α.
pub fn threshold_background(
    accumulation: &Image<f64>,
    cur_depth: &DepthImage,
    params: &OcclusionParams,
) -> Result<Mask> {
    let dims = accumulation.dims();
    check_dims(dims, cur_depth.dims())?;
    Ok(Image::from_fn(dims.0, dims.1, |x, y| {
        *accumulation.get(x, y) <= params.tau_alpha(cur_depth.get(x, y))
    }))
}

/// Background map B (`true` = background) after dropping object components
/// smaller than `min_component_px` and clearing the border margin. The object
/// mask is its inverse.
pub fn background_mask(
    accumulation: &Image<f64>,
    cur_depth: &DepthImage,
    params: &OcclusionParams,
) -> Result<Mask> {
    let raw = threshold_background(accumulation, cur_depth, params)?;
    Ok(suppress(&raw, params))
}

fn suppress(background: &Mask, params: &OcclusionParams) -> Mask {
    let (w, h) = background.dims();
    let objects = background.inverted();
    let comps = label_components(&objects, params.connectivity);
    let m = params.border_margin_px;
    Image::from_fn(w, h, |x, y| {
        let l = *comps.labels.get(x, y);
        let in_border = x < m || y < m || x + m >= w || y + m >= h;
        l == 0 || comps.areas[l as usize] < params.min_component_px || in_border
    })
}

/// Fills unmeasured current depth from the previous depth map.
///
/// The previous depth is forward-warped into the current view (nearest pixel,
/// closest surface wins) and only pixels with `Z_cur = 0` receive a value;
/// measured pixels are never modified. `motion` maps current-frame points to
/// the previous frame.
pub fn compensate_depth(
    cur_depth: &DepthImage,
    prev_depth: &DepthImage,
    motion: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<DepthImage> {
    let dims = k.dims();
    check_dims(dims, cur_depth.dims())?;
    check_dims(dims, prev_depth.dims())?;
    if cur_depth.valid_count() == dims.0 * dims.1 {
        return Ok(cur_depth.clone());
    }
    let (w, h) = dims;
    if motion.is_identity() {
        return Ok(DepthImage::from_fn(w, h, |x, y| {
            let z = cur_depth.get(x, y);
            if z > 0.0 {
                z
            } else {
                prev_depth.get(x, y)
            }
        }));
    }
    let to_cur = motion.inverse();
    let splats = par::map_rows(h, |y| {
        (0..w)
            .filter_map(|x| {
                let p = unproject(Pixel::new(x as f64, y as f64), prev_depth.get(x, y), k).ok()?;
                let q = to_cur.transform_point(&p);
                let px = project(&q, k).ok()?;
                let (cx, cy) = (px.x.round(), px.y.round());
                if cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
                    return None;
                }
                Some((cy as usize * w + cx as usize, q.z))
            })
            .collect::<Vec<_>>()
    });
    let mut predicted = vec![f64::INFINITY; w * h];
    for (i, z) in splats.into_iter().flatten() {
        if z < predicted[i] {
            predicted[i] = z;
        }
    }
    Ok(DepthImage::from_fn(w, h, |x, y| {
        let z = cur_depth.get(x, y);
        if z > 0.0 {
            z
        } else {
            predicted[y * w + x]
        }
    }))
}

/// Outcome of [`predict_new_area`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PredictionStats {
    pub assigned: usize,
    pub unreachable: usize,
    pub sweeps: usize,
    /// Pixels reset because their predicted object had no detected neighbor.
    pub removed: usize,
}

/// Predicts `A` on the newly discovered area Ω̃.
///
/// Breadth-first sweeps from the known region: each Ω̃ pixel with at least one
/// known 4-neighbor `δu` gets the mean of `A(δu) + Z(ũ) − Z(δu)` over those
/// neighbors, using only values known before the sweep. Pixels without depth
/// keep `A = 0` and never act as known neighbors. Finally, predicted object
/// components that do not touch an object detected outside Ω̃ are reset to 0.
pub fn predict_new_area(
    accumulation: &mut Image<f64>,
    cur_depth: &DepthImage,
    new_area: &Mask,
    params: &OcclusionParams,
) -> Result<PredictionStats> {
    let dims = accumulation.dims();
    check_dims(dims, cur_depth.dims())?;
    check_dims(dims, new_area.dims())?;
    let (w, h) = dims;
    let mut stats = PredictionStats::default();

    // known: A is defined and the pixel has depth to difference against
    let mut known: Vec<bool> = (0..w * h)
        .map(|i| !new_area.data()[i] && cur_depth.data()[i] > 0.0)
        .collect();
    let mut pending: Vec<usize> = Vec::new();
    for i in 0..w * h {
        if new_area.data()[i] {
            accumulation.data_mut()[i] = 0.0;
            if cur_depth.data()[i] > 0.0 {
                pending.push(i);
            } else {
                stats.unreachable += 1;
            }
        }
    }
    let predicted_px = pending.clone();

    while !pending.is_empty() {
        let a = &*accumulation;
        let kn = &known;
        let values: Vec<Option<f64>> = par::map_indices(pending.len(), |j| {
            let i = pending[j];
            let (x, y) = (i % w, i / w);
            let z = cur_depth.data()[i];
            let (sum, n) = neighbors(x, y, w, h, Connectivity::Four)
                .filter(|&(nx, ny)| kn[ny * w + nx])
                .fold((0.0, 0usize), |(s, n), (nx, ny)| {
                    (s + a.get(nx, ny) + z - cur_depth.get(nx, ny), n + 1)
                });
            (n > 0).then(|| sum / n as f64)
        });
        let mut next = Vec::with_capacity(pending.len());
        let mut solved = Vec::with_capacity(pending.len());
        for (&i, v) in pending.iter().zip(values) {
            match v {
                Some(v) => {
                    accumulation.data_mut()[i] = v;
                    solved.push(i);
                }
                None => next.push(i),
            }
        }
        if solved.is_empty() {
            stats.unreachable += next.len();
            break;
        }
        for &i in &solved {
            known[i] = true;
        }
        stats.assigned += solved.len();
        stats.sweeps += 1;
        pending = next;
    }

    // Drop predicted objects with no detected object next to them.
    let mut positive = Image::filled(w, h, false);
    for &i in &predicted_px {
        let z = cur_depth.data()[i];
        if accumulation.data()[i] > params.tau_alpha(z) {
            positive.data_mut()[i] = true;
        }
    }
    if positive.count() == 0 {
        return Ok(stats);
    }
    let comps = label_components(&positive, params.connectivity);
    let mut anchored = vec![false; comps.areas.len()];
    for &i in &predicted_px {
        let l = *comps.labels.get(i % w, i / w) as usize;
        if l == 0 || anchored[l] {
            continue;
        }
        let touches = neighbors(i % w, i / w, w, h, params.connectivity).any(|(nx, ny)| {
            let j = ny * w + nx;
            !new_area.data()[j]
                && *accumulation.get(nx, ny) > params.tau_alpha(cur_depth.get(nx, ny))
        });
        if touches {
            anchored[l] = true;
        }
    }
    for &i in &predicted_px {
        let l = *comps.labels.get(i % w, i / w) as usize;
        if l != 0 && !anchored[l] {
            accumulation.data_mut()[i] = 0.0;
            stats.removed += 1;
        }
    }
    Ok(stats)
}

/// Detection state carried from one frame to the next.
#[derive(Debug, Clone)]
pub struct AccumulationState {
    accumulation: Image<f64>,
    background: Mask,
    depth: DepthImage,
    intensity: IntensityImage,
    frame_index: usize,
}

/// Per-frame result of [`AccumulationState::step`].
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Moving-object mask (`true` = object) after component suppression.
    pub object_mask: Mask,
    pub new_area_px: usize,
    pub prediction: PredictionStats,
    pub compensated_px: usize,
}

impl AccumulationState {
    /// State after the first frame: A ≡ 0, B ≡ 1.
    pub fn new(intensity: IntensityImage, depth: DepthImage) -> Result<Self> {
        check_dims(intensity.dims(), depth.dims())?;
        let (w, h) = depth.dims();
        Ok(AccumulationState {
            accumulation: Image::filled(w, h, 0.0),
            background: Image::filled(w, h, true),
            depth,
            intensity,
            frame_index: 0,
        })
    }

    /// Truncated accumulation map Ã.
    pub fn accumulation(&self) -> &Image<f64> {
        &self.accumulation
    }

    /// B from the threshold alone (`true` = background); this is the mask used
    /// to gate odometry.
    pub fn background(&self) -> &Mask {
        &self.background
    }

    /// Compensated depth of the latest frame.
    pub fn depth(&self) -> &DepthImage {
        &self.depth
    }

    pub fn intensity(&self) -> &IntensityImage {
        &self.intensity
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    /// Object mask of the latest frame.
    pub fn object_mask(&self, params: &OcclusionParams) -> Mask {
        suppress(&self.background, params).inverted()
    }

    /// Advances by one frame. `motion` maps current-frame points into the
    /// previous frame.
    pub fn step(
        &mut self,
        intensity: IntensityImage,
        depth: DepthImage,
        motion: &RigidTransform,
        k: &CameraIntrinsics,
        params: &OcclusionParams,
    ) -> Result<StepOutput> {
        params.validate()?;
        check_dims(k.dims(), depth.dims())?;
        check_dims(k.dims(), intensity.dims())?;
        check_dims(k.dims(), self.dims())?;

        let before = depth.valid_count();
        let depth = compensate_depth(&depth, &self.depth, motion, k)?;
        let compensated_px = depth.valid_count() - before;
        let occ = occlusion_map(&self.depth, &depth, motion, k)?;
        let mut acc = accumulate(&self.accumulation, &occ, &depth, motion, k)?;
        let prediction = if params.predict_new_area {
            predict_new_area(&mut acc, &depth, &occ.new_area, params)?
        } else {
            PredictionStats::default()
        };
        let truncated = truncate(&acc, &occ.dz, &depth, params)?;
        let background = threshold_background(&truncated, &depth, params)?;
        let object_mask = suppress(&background, params).inverted();

        self.accumulation = truncated;
        self.background = background;
        self.depth = depth;
        self.intensity = intensity;
        self.frame_index += 1;
        Ok(StepOutput {
            object_mask,
            new_area_px: occ.new_area.count(),
            prediction,
            compensated_px,
        })
    }
}
