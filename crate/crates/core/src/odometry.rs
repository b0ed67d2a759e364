//! Dense RGB-D visual odometry with bi-square weights.
//!
//! For every current-frame pixel `u` with depth, the point is moved into the
//! previous frame by the candidate motion `T` and compared there:
//!
//! ```text
//! ΔI(u) = I_prev(w(u)) − I_cur(u)
//! ΔZ(u) = Z_prev(w(u)) − [T·π⁻¹(u, Z_cur(u))]_z
//! cost  = Σ B(w(u)) · (ρ_kI(ΔI) + γ·ρ_kZ(ΔZ))
//! ```
//!
//! `B` is the background map of the previous frame (nearest-neighbor lookup
//! at the warped location), so pixels landing on detected objects do not
//! contribute at all. The cost is minimized coarse-to-fine with
//! Levenberg-Marquardt on IRLS normal equations. Updates are applied on the
//! left, `T ← exp(δ)·T`, and the Jacobian is taken with respect to `δ`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    hat, warp_with_depth, CameraIntrinsics, Pixel, RigidTransform, Twist, Warped,
};
use crate::image::{downsample_any, DepthImage, Image, IntensityImage, Mask, Pyramid};
use crate::par;

/// Fewer contributing pixels than this cannot constrain 6 DOF.
pub const MIN_CONTRIBUTING_PIXELS: usize = 6;

/// Initial guess for each frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStart {
    Zero,
    /// Reuse the previous inter-frame motion.
    #[default]
    ConstantVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DvoParams {
    /// Bi-square threshold for intensity residuals.
    pub k_intensity: f64,
    /// Bi-square threshold for depth residuals (m).
    pub k_depth: f64,
    /// Weight of the depth term.
    pub gamma: f64,
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    pub lm_lambda_init: f64,
    pub lm_lambda_up: f64,
    pub lm_lambda_down: f64,
    /// Stop once the update norm falls below this.
    pub convergence_eps: f64,
    pub warm_start: WarmStart,
    /// Treat a pixel whose depth residual exceeds `k_depth` as an outlier in
    /// the intensity term too. A moving surface in front of the background
    /// fails the depth test first, while its texture can still fall inside
    /// the intensity threshold and drag the estimate along with it.
    pub joint_outliers: bool,
    /// Drop pixels whose warped depth cell spreads by more than this fraction
    /// of its nearest corner. `None` keeps them.
    pub depth_edge_ratio: Option<f64>,
}

impl Default for DvoParams {
    fn default() -> Self {
        DvoParams {
            k_intensity: 48.0 / 255.0,
            k_depth: 0.5,
            gamma: 0.001,
            pyramid_levels: 4,
            max_iterations: 50,
            lm_lambda_init: 1e-4,
            lm_lambda_up: 10.0,
            lm_lambda_down: 0.5,
            convergence_eps: 1e-6,
            warm_start: WarmStart::ConstantVelocity,
            joint_outliers: true,
            depth_edge_ratio: Some(0.1),
        }
    }
}

impl DvoParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.k_intensity > 0.0 && self.k_depth > 0.0) {
            return bad("bi-square thresholds must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        if self.pyramid_levels == 0 {
            return bad("at least one pyramid level is required");
        }
        if self.depth_edge_ratio.is_some_and(|r| !(r >= 0.0)) {
            return bad("depth edge ratio must be non-negative");
        }
        if !(self.lm_lambda_init > 0.0
            && self.lm_lambda_up > 1.0
            && self.lm_lambda_down > 0.0
            && self.lm_lambda_down < 1.0)
        {
            return bad("invalid Levenberg-Marquardt damping schedule");
        }
        Ok(())
    }
}

/// Bi-square (Tukey) loss: `k²/6·(1 − (1 − (e/k)²)³)` inside the threshold,
/// `k²/6` beyond it.
#[inline]
pub fn bisquare_rho(e: f64, k: f64) -> f64 {
    let c = k * k / 6.0;
    if e.abs() > k {
        return c;
    }
    let s = 1.0 - (e / k) * (e / k);
    c * (1.0 - s * s * s)
}

/// IRLS weight `ψ(e)/e = (1 − (e/k)²)²`, zero beyond the threshold.
#[inline]
pub fn bisquare_weight(e: f64, k: f64) -> f64 {
    if e.abs() > k {
        return 0.0;
    }
    let s = 1.0 - (e / k) * (e / k);
    s * s
}

/// Influence function `dρ/de = e · weight(e)`.
#[inline]
pub fn bisquare_psi(e: f64, k: f64) -> f64 {
    e * bisquare_weight(e, k)
}

/// Borrowed intensity/depth pair.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub intensity: &'a IntensityImage,
    pub depth: &'a DepthImage,
}

impl<'a> Frame<'a> {
    pub fn new(intensity: &'a IntensityImage, depth: &'a DepthImage) -> Self {
        Frame { intensity, depth }
    }

    fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }
}

/// Residuals and weights of one evaluation. Non-contributing pixels hold NaN
/// residuals and zero weights.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub photometric: Image<f64>,
    pub geometric: Image<f64>,
    pub photometric_weight: Image<f64>,
    pub geometric_weight: Image<f64>,
    pub cost: f64,
    pub contributing: usize,
}

/// One pixel's residuals and their Jacobians with respect to a left
/// perturbation of the motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedPixel {
    pub x: usize,
    pub y: usize,
    pub photometric: f64,
    pub geometric: f64,
    pub photometric_jacobian: [f64; 6],
    pub geometric_jacobian: [f64; 6],
}

struct Problem<'a> {
    prev: Frame<'a>,
    cur: Frame<'a>,
    background: Option<&'a Mask>,
    k: CameraIntrinsics,
    edge_ratio: Option<f64>,
}

impl Problem<'_> {
    #[inline]
    fn pixel(
        &self,
        motion: &RigidTransform,
        x: usize,
        y: usize,
        jacobian: bool,
        gate: Option<&[bool]>,
    ) -> Option<LinearizedPixel> {
        let k = &self.k;
        if let Some(g) = gate {
            if !g[y * k.width + x] {
                return None;
            }
        }
        let z = self.cur.depth.get(x, y);
        if z <= 0.0 {
            return None;
        }
        let p = Vector3::new(
            (x as f64 - k.cx) * z / k.fx,
            (y as f64 - k.cy) * z / k.fy,
            z,
        );
        let q = motion.transform_point(&p);
        if q.z <= 0.0 {
            return None;
        }
        let px = Pixel::new(k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy);
        if !k.contains(px) {
            return None;
        }
        if gate.is_none() && !self.in_background(px) {
            return None;
        }
        let si = self.prev.intensity.sample_with_gradient(px)?;
        let sz = match self.edge_ratio {
            Some(r) => self.prev.depth.sample_surface(px, r)?,
            None => self.prev.depth.sample_with_gradient(px)?,
        };
        let mut out = LinearizedPixel {
            x,
            y,
            photometric: si.value - self.cur.intensity.get(x, y),
            geometric: sz.value - q.z,
            photometric_jacobian: [0.0; 6],
            geometric_jacobian: [0.0; 6],
        };
        if jacobian {
            // d(pixel)/dq
            let iz = 1.0 / q.z;
            let jpi = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * q.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * q.y * iz * iz,
            );
            // dq/dδ = [I | −[q]×]
            let mut dq = nalgebra::Matrix3x6::zeros();
            dq.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&Matrix3::identity());
            dq.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(&q)));
            let dpix = jpi * dq;
            for c in 0..6 {
                out.photometric_jacobian[c] = si.dx * dpix[(0, c)] + si.dy * dpix[(1, c)];
                out.geometric_jacobian[c] =
                    sz.dx * dpix[(0, c)] + sz.dy * dpix[(1, c)] - dq[(2, c)];
            }
        }
        Some(out)
    }
}

impl Problem<'_> {
    /// True when the bilinear cell at `px` and the ring of pixels around it are
    /// all background.
    #[inline]
    fn in_background(&self, px: Pixel) -> bool {
        self.background.is_none_or(|bg| {
            let (w, h) = (bg.width() as i64, bg.height() as i64);
            let (x0, y0) = (px.x.floor() as i64, px.y.floor() as i64);
            (y0 - 1..=y0 + 2).all(|y| {
                (x0 - 1..=x0 + 2)
                    .all(|x| *bg.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize))
            })
        })
    }

    /// B at the warped location of every current pixel, evaluated at `motion`.
    fn gate(&self, motion: &RigidTransform) -> Option<Vec<bool>> {
        self.background?;
        let k = &self.k;
        let (w, h) = self.cur.dims();
        let rows = par::map_rows(h, |y| {
            (0..w)
                .map(|x| {
                    match warp_with_depth(
                        Pixel::new(x as f64, y as f64),
                        self.cur.depth.get(x, y),
                        motion,
                        k,
                    ) {
                        Warped::Inside { pixel, .. } => self.in_background(pixel),
                        _ => false,
                    }
                })
                .collect::<Vec<_>>()
        });
        Some(rows.into_iter().flatten().collect())
    }
}

/// IRLS weights and cost contribution of one pixel.
struct RobustTerms {
    photometric_weight: f64,
    geometric_weight: f64,
    cost: f64,
}

impl RobustTerms {
    #[inline]
    fn new(ri: f64, rz: f64, params: &DvoParams) -> Self {
        if params.joint_outliers && rz.abs() > params.k_depth {
            return RobustTerms {
                photometric_weight: 0.0,
                geometric_weight: 0.0,
                cost: bisquare_rho(f64::INFINITY, params.k_intensity)
                    + params.gamma * bisquare_rho(f64::INFINITY, params.k_depth),
            };
        }
        RobustTerms {
            photometric_weight: bisquare_weight(ri, params.k_intensity),
            geometric_weight: bisquare_weight(rz, params.k_depth),
            cost: bisquare_rho(ri, params.k_intensity)
                + params.gamma * bisquare_rho(rz, params.k_depth),
        }
    }
}

/// Weighted normal equations for one linearization point.
#[derive(Debug, Clone, Copy)]
struct System {
    hessian: Matrix6<f64>,
    gradient: Vector6<f64>,
    cost: f64,
    count: usize,
}

impl System {
    fn zero() -> Self {
        System {
            hessian: Matrix6::zeros(),
            gradient: Vector6::zeros(),
            cost: 0.0,
            count: 0,
        }
    }

    fn add(&mut self, o: &System) {
        self.hessian += o.hessian;
        self.gradient += o.gradient;
        self.cost += o.cost;
        self.count += o.count;
    }
}

fn build_system(
    problem: &Problem,
    motion: &RigidTransform,
    gate: Option<&[bool]>,
    params: &DvoParams,
) -> System {
    let (w, h) = problem.cur.dims();
    let rows = par::map_rows(h, |y| {
        let mut s = System::zero();
        for x in 0..w {
            let Some(px) = problem.pixel(motion, x, y, true, gate) else {
                continue;
            };
            let ji = Vector6::from_column_slice(&px.photometric_jacobian);
            let jz = Vector6::from_column_slice(&px.geometric_jacobian);
            let t = RobustTerms::new(px.photometric, px.geometric, params);
            let wz = params.gamma * t.geometric_weight;
            s.hessian += ji * ji.transpose() * t.photometric_weight + jz * jz.transpose() * wz;
            s.gradient += ji * (t.photometric_weight * px.photometric) + jz * (wz * px.geometric);
            s.cost += t.cost;
            s.count += 1;
        }
        s
    });
    let mut total = System::zero();
    for r in &rows {
        total.add(r);
    }
    total
}

fn check_frames(
    prev: &Frame,
    cur: &Frame,
    background: Option<&Mask>,
    k: &CameraIntrinsics,
) -> Result<()> {
    let dims = k.dims();
    for d in [
        prev.intensity.dims(),
        prev.depth.dims(),
        cur.intensity.dims(),
        cur.depth.dims(),
    ]
    .into_iter()
    .chain(background.map(|b| b.dims()))
    {
        if d != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: d,
            });
        }
    }
    Ok(())
}

/// Evaluates residuals, weights and cost at `motion`. `background` marks
/// usable pixels of the previous frame; `None` means all of them.
pub fn residuals(
    prev: Frame,
    cur: Frame,
    motion: &RigidTransform,
    background: Option<&Mask>,
    k: &CameraIntrinsics,
    params: &DvoParams,
) -> Result<ResidualReport> {
    check_frames(&prev, &cur, background, k)?;
    let problem = Problem {
        prev,
        cur,
        background,
        k: *k,
        edge_ratio: params.depth_edge_ratio,
    };
    let (w, h) = k.dims();
    let rows = par::map_rows(h, |y| {
        (0..w)
            .map(|x| {
                problem.pixel(motion, x, y, false, None).map(|p| {
                    let t = RobustTerms::new(p.photometric, p.geometric, params);
                    (
                        p.photometric,
                        p.geometric,
                        t.photometric_weight,
                        t.geometric_weight,
                        t.cost,
                    )
                })
            })
            .collect::<Vec<_>>()
    });
    let n = w * h;
    let (mut ri, mut rz, mut wi, mut wz) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut cost = 0.0;
    let mut contributing = 0;
    for px in rows.into_iter().flatten() {
        match px {
            Some((a, b, c, d, e)) => {
                cost += e;
                contributing += 1;
                ri.push(a);
                rz.push(b);
                wi.push(c);
                wz.push(d);
            }
            None => {
                ri.push(f64::NAN);
                rz.push(f64::NAN);
                wi.push(0.0);
                wz.push(0.0);
            }
        }
    }
    if contributing < MIN_CONTRIBUTING_PIXELS {
        return Err(Error::DegenerateResiduals {
            pixels: contributing,
            last: motion.log().unwrap_or_default(),
        });
    }
    if !cost.is_finite() {
        return Err(Error::NumericalFailure(format!("cost is {cost}")));
    }
    Ok(ResidualReport {
        photometric: Image::from_vec(w, h, ri)?,
        geometric: Image::from_vec(w, h, rz)?,
        photometric_weight: Image::from_vec(w, h, wi)?,
        geometric_weight: Image::from_vec(w, h, wz)?,
        cost,
        contributing,
    })
}

/// Residuals with their analytic Jacobians for every contributing pixel, in
/// raster order.
pub fn linearize(
    prev: Frame,
    cur: Frame,
    motion: &RigidTransform,
    background: Option<&Mask>,
    k: &CameraIntrinsics,
    params: &DvoParams,
) -> Result<Vec<LinearizedPixel>> {
    check_frames(&prev, &cur, background, k)?;
    let problem = Problem {
        prev,
        cur,
        background,
        k: *k,
        edge_ratio: params.depth_edge_ratio,
    };
    let (w, h) = k.dims();
    let rows = par::map_rows(h, |y| {
        (0..w)
            .filter_map(|x| problem.pixel(motion, x, y, true, None))
            .collect::<Vec<_>>()
    });
    Ok(rows.into_iter().flatten().collect())
}

/// Result of [`estimate_pose`].
#[derive(Debug, Clone)]
pub struct PoseEstimate {
    /// Estimated current-to-previous motion.
    pub twist: Twist,
    pub motion: RigidTransform,
    /// Residuals at the solution, full resolution.
    pub report: ResidualReport,
    /// `(level, cost)` after the initial evaluation and each accepted step.
    pub cost_history: Vec<(usize, f64)>,
    pub iterations: usize,
}

/// Coarse-to-fine Levenberg-Marquardt estimate of the current-to-previous
/// motion, starting from `init`.
pub fn estimate_pose(
    prev: Frame,
    cur: Frame,
    background: Option<&Mask>,
    init: &Twist,
    params: &DvoParams,
    k: &CameraIntrinsics,
) -> Result<PoseEstimate> {
    params.validate()?;
    if !init.is_finite() {
        return Err(Error::NumericalFailure(
            "initial twist is not finite".into(),
        ));
    }
    check_frames(&prev, &cur, background, k)?;

    let prev_pyr = Pyramid::build(prev.intensity, prev.depth, params.pyramid_levels);
    let cur_pyr = Pyramid::build(cur.intensity, cur.depth, params.pyramid_levels);
    let levels = prev_pyr.len().min(cur_pyr.len());
    let mut masks: Vec<Mask> = Vec::new();
    if let Some(bg) = background {
        let mut objects = bg.inverted();
        masks.push(bg.clone());
        for _ in 1..levels {
            objects = downsample_any(&objects);
            masks.push(objects.inverted());
        }
    }

    let mut motion = init.exp();
    let mut history = Vec::new();
    let mut iterations = 0;
    for level in (0..levels).rev() {
        let problem = Problem {
            prev: Frame::new(&prev_pyr.levels[level].0, &prev_pyr.levels[level].1),
            cur: Frame::new(&cur_pyr.levels[level].0, &cur_pyr.levels[level].1),
            background: masks.get(level),
            k: k.at_level(level),
            edge_ratio: params.depth_edge_ratio,
        };
        // The gate B(w(u, ξ)) is held at the accepted estimate while a step is
        // tried, so both costs are sums over the same pixels. Otherwise a step
        // can lower the cost just by moving outliers behind the mask.
        let mut gate = problem.gate(&motion);
        let mut system = build_system(&problem, &motion, gate.as_deref(), params);
        if system.count < MIN_CONTRIBUTING_PIXELS {
            if level == 0 {
                return Err(Error::DegenerateResiduals {
                    pixels: system.count,
                    last: motion.log().unwrap_or_default(),
                });
            }
            continue;
        }
        if !system.cost.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "cost is {} at level {level}",
                system.cost
            )));
        }
        history.push((level, system.cost));
        let mut lambda = params.lm_lambda_init;
        for _ in 0..params.max_iterations {
            iterations += 1;
            let mut damped = system.hessian;
            for i in 0..6 {
                damped[(i, i)] += lambda * system.hessian[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-system.gradient))) else {
                lambda *= params.lm_lambda_up;
                continue;
            };
            if !step.iter().all(|v| v.is_finite()) {
                return Err(Error::NumericalFailure("non-finite update".into()));
            }
            let candidate = Twist::from_vector(&step).exp() * motion;
            let trial = build_system(&problem, &candidate, gate.as_deref(), params);
            if trial.count >= MIN_CONTRIBUTING_PIXELS && trial.cost < system.cost {
                motion = candidate;
                system = trial;
                if problem.background.is_some() {
                    gate = problem.gate(&motion);
                    system = build_system(&problem, &motion, gate.as_deref(), params);
                }
                lambda *= params.lm_lambda_down;
                history.push((level, system.cost));
            } else {
                lambda *= params.lm_lambda_up;
            }
            if step.norm() < params.convergence_eps {
                break;
            }
        }
    }

    let report = residuals(prev, cur, &motion, background, k, params)?;
    let twist = motion.log()?;
    Ok(PoseEstimate {
        twist,
        motion,
        report,
        cost_history: history,
        iterations,
    })
}
