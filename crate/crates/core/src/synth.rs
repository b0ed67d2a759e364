//! Deterministic ray-cast RGB-D scenes with exact ground truth.
//!
//! Scenes are built from planes, boxes and spheres. Each pixel casts one ray
//! through its center and keeps the nearest hit; depth is the z component of
//! the hit point in the camera frame, intensity a procedural value-noise
//! texture evaluated in the body's own coordinates, so a surface point has the
//! same intensity from every viewpoint. There is no shading.

use std::path::Path as FsPath;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    interpolate, timestamp_name, write_depth_png, write_intensity_png, write_intrinsics,
    write_mask_png, write_text, write_trajectory, Trajectory, DEFAULT_DEPTH_SCALE,
};
use crate::error::{Error, Result};
use crate::geometry::{exp_se3, CameraIntrinsics, RigidTransform, Twist};
use crate::image::{DepthImage, Image, IntensityImage, Mask};
use crate::par;

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// The local z = 0 plane, optionally limited to |x| ≤ hx, |y| ≤ hy.
    Plane {
        half_extent: Option<[f64; 2]>,
    },
    /// Axis-aligned in body coordinates, centered on the origin.
    Cuboid {
        half_extent: [f64; 3],
    },
    Sphere {
        radius: f64,
    },
}

impl Shape {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Plane { half_extent } => half_extent.is_none_or(|h| h.iter().all(|&v| v > 0.0)),
            Shape::Cuboid { half_extent } => half_extent.iter().all(|&v| v > 0.0),
            Shape::Sphere { radius } => *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("non-positive extent in {self:?}")))
        }
    }

    /// Nearest positive ray parameter for a ray given in body coordinates.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Plane { half_extent } => {
                if d.z.abs() < 1e-15 {
                    return None;
                }
                let t = -o.z / d.z;
                if t <= HIT_EPS {
                    return None;
                }
                if let Some([hx, hy]) = half_extent {
                    let p = o + d * t;
                    if p.x.abs() > hx || p.y.abs() > hy {
                        return None;
                    }
                }
                Some(t)
            }
            Shape::Cuboid { half_extent } => {
                let (mut near, mut far) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    let h = half_extent[i];
                    if d[i].abs() < 1e-15 {
                        if o[i].abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let a = (-h - o[i]) / d[i];
                    let b = (h - o[i]) / d[i];
                    near = near.max(a.min(b));
                    far = far.min(a.max(b));
                }
                (near <= far && near > HIT_EPS).then_some(near)
            }
            Shape::Sphere { radius } => {
                let a = d.norm_squared();
                let b = o.dot(d);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / a;
                (t > HIT_EPS).then_some(t)
            }
        }
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Shape::Plane { .. } => false,
            Shape::Cuboid { half_extent } => (0..3).all(|i| p[i].abs() < half_extent[i]),
            Shape::Sphere { radius } => p.norm() < radius,
        }
    }
}

/// Multi-octave value noise. `cells` are lattice spacings in meters, coarse
/// to fine; octave weights are 0.5, 0.3 and 0.2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    pub cells: [f64; 3],
}

impl Texture {
    pub fn new(seed: u64, cells: [f64; 3]) -> Self {
        Texture { seed, cells }
    }

    /// Intensity in [0.1, 0.9].
    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        const WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];
        let mut v = 0.0;
        for (o, (&cell, &w)) in self.cells.iter().zip(&WEIGHTS).enumerate() {
            v += w * value_noise(&(p / cell), self.seed.wrapping_add(o as u64 * 0x9E37_79B9));
        }
        0.1 + 0.8 * v
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(i as u64 ^ splitmix(j as u64 ^ splitmix(k as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

// quintic fade keeps the texture C2 so image gradients are smooth
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(p: &Vector3<f64>, seed: u64) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let (i, j, k) = (base.x as i64, base.y as i64, base.z as i64);
    let (u, v, w) = (fade(f.x), fade(f.y), fade(f.z));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c = |di, dj, dk| lattice(seed, i + di, j + dj, k + dk);
    let x00 = lerp(c(0, 0, 0), c(1, 0, 0), u);
    let x10 = lerp(c(0, 1, 0), c(1, 1, 0), u);
    let x01 = lerp(c(0, 0, 1), c(1, 0, 1), u);
    let x11 = lerp(c(0, 1, 1), c(1, 1, 1), u);
    lerp(lerp(x00, x10, v), lerp(x01, x11, v), w)
}

/// Piecewise pose path over (fractional) frame indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    /// Keyframes `(frame, pose)` with strictly increasing frames. Poses are
    /// held constant before the first and after the last key; in between,
    /// translation is linear and rotation spherical-linear.
    Keys(Vec<(f64, RigidTransform)>),
    /// Pose relative to the camera: world-from-body = camera(f) · offset(f).
    Camera(Box<Path>),
}

impl Path {
    pub fn fixed(pose: RigidTransform) -> Self {
        Path::Keys(vec![(0.0, pose)])
    }

    pub fn keys(keys: Vec<(f64, RigidTransform)>) -> Self {
        Path::Keys(keys)
    }

    /// Straight line between two translations with identity rotation.
    pub fn linear(f0: f64, from: [f64; 3], f1: f64, to: [f64; 3]) -> Self {
        Path::Keys(vec![
            (f0, RigidTransform::from_translation(from.into())),
            (f1, RigidTransform::from_translation(to.into())),
        ])
    }

    fn validate(&self) -> Result<()> {
        match self {
            Path::Keys(keys) => {
                if keys.is_empty() {
                    return Err(Error::Config("path without keyframes".into()));
                }
                if keys.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::Config(
                        "path keyframes must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            Path::Camera(inner) => match **inner {
                Path::Camera(_) => Err(Error::Config("nested camera-relative path".into())),
                _ => inner.validate(),
            },
        }
    }

    fn keyed(keys: &[(f64, RigidTransform)], f: f64) -> RigidTransform {
        let first = &keys[0];
        if f <= first.0 {
            return first.1;
        }
        for w in keys.windows(2) {
            if f <= w[1].0 {
                return interpolate(&w[0].1, &w[1].1, (f - w[0].0) / (w[1].0 - w[0].0));
            }
        }
        keys[keys.len() - 1].1
    }

    /// World-from-body pose at frame `f`; `camera` resolves camera-relative paths.
    pub fn at(&self, f: f64, camera: &Path) -> RigidTransform {
        match self {
            Path::Keys(keys) => Self::keyed(keys, f),
            Path::Camera(offset) => camera.at(f, camera) * offset.at(f, camera),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub shape: Shape,
    pub path: Path,
    pub texture: Texture,
    /// Counted in the ground-truth object mask.
    pub moving: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthNoise {
    /// σ = coeff·Z² (1/m).
    pub coeff: f64,
    /// Probability that a pixel reads as invalid.
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub frames: usize,
    pub fps: f64,
    /// World-from-camera.
    pub camera: Path,
    pub bodies: Vec<Body>,
    pub noise: Option<DepthNoise>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.frames == 0 {
            return Err(Error::Config("scene has no frames".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if matches!(self.camera, Path::Camera(_)) {
            return Err(Error::Config(
                "camera path cannot be camera-relative".into(),
            ));
        }
        self.camera.validate()?;
        for b in &self.bodies {
            b.shape.validate()?;
            b.path.validate()?;
        }
        if let Some(n) = self.noise {
            if !(n.coeff >= 0.0) || !(0.0..=1.0).contains(&n.dropout) {
                return Err(Error::Config(format!("invalid depth noise {n:?}")));
            }
        }
        Ok(())
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    pub fn camera_pose(&self, frame: usize) -> RigidTransform {
        self.camera.at(frame as f64, &self.camera)
    }

    pub fn body_pose(&self, body: usize, frame: usize) -> RigidTransform {
        self.bodies[body].path.at(frame as f64, &self.camera)
    }

    /// World-from-camera ground truth for every frame.
    pub fn trajectory(&self) -> Trajectory {
        let poses = (0..self.frames)
            .map(|i| (self.timestamp(i), self.camera_pose(i)))
            .collect();
        Trajectory::from_poses(poses).expect("frame timestamps increase")
    }
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub timestamp: f64,
    pub intensity: IntensityImage,
    pub depth: DepthImage,
    /// Pixels whose nearest hit is a moving body.
    pub mask: Mask,
    /// World-from-camera.
    pub pose: RigidTransform,
}

#[derive(Clone, Copy)]
struct Hit {
    depth: f64,
    intensity: f64,
    moving: bool,
}

pub fn render(spec: &SceneSpec) -> Result<Vec<SynthFrame>> {
    spec.validate()?;
    let frames = par::map_indices(spec.frames, |i| render_frame(spec, i));
    frames.into_iter().collect()
}

pub fn render_frame(spec: &SceneSpec, frame: usize) -> Result<SynthFrame> {
    let k = &spec.intrinsics;
    let cam = spec.camera_pose(frame);
    let bodies: Vec<(RigidTransform, &Body)> = spec
        .bodies
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let inv = spec.body_pose(i, frame).inverse();
            if b.shape.contains(&inv.transform_point(&cam.translation)) {
                return Err(Error::DegenerateViewpoint { object: i, frame });
            }
            Ok((inv, b))
        })
        .collect::<Result<_>>()?;

    let (w, h) = k.dims();
    let rows = par::map_rows(h, |y| {
        (0..w)
            .map(|x| {
                // unit z in the camera frame, so the ray parameter is the depth
                let dir_cam = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                let dir = cam.rotation * dir_cam;
                let mut best: Option<(f64, usize, Vector3<f64>)> = None;
                for (i, (inv, b)) in bodies.iter().enumerate() {
                    let o = inv.transform_point(&cam.translation);
                    let d = inv.rotation * dir;
                    if let Some(t) = b.shape.intersect(&o, &d) {
                        if best.is_none_or(|(bt, _, _)| t < bt) {
                            best = Some((t, i, o + d * t));
                        }
                    }
                }
                best.map(|(t, i, p)| Hit {
                    depth: t,
                    intensity: bodies[i].1.texture.sample(&p),
                    moving: bodies[i].1.moving,
                })
            })
            .collect::<Vec<_>>()
    });
    let hits: Vec<Option<Hit>> = rows.into_iter().flatten().collect();

    let mut depth: Vec<f64> = hits
        .iter()
        .map(|hit| hit.map_or(0.0, |hit| hit.depth))
        .collect();
    if let Some(noise) = spec.noise {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(spec.seed ^ splitmix(frame as u64)));
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for z in depth.iter_mut() {
            let drop = rng.gen::<f64>() < noise.dropout;
            let e: f64 = unit.sample(&mut rng);
            if *z > 0.0 {
                *z = if drop {
                    0.0
                } else {
                    (*z + e * noise.coeff * *z * *z).max(0.0)
                };
            }
        }
    }
    Ok(SynthFrame {
        timestamp: spec.timestamp(frame),
        intensity: IntensityImage::new(
            w,
            h,
            hits.iter()
                .map(|hit| hit.map_or(0.0, |hit| hit.intensity))
                .collect(),
        )?,
        depth: DepthImage::new(w, h, depth)?,
        mask: Image::from_vec(
            w,
            h,
            hits.iter()
                .map(|hit| hit.is_some_and(|hit| hit.moving))
                .collect(),
        )?,
        pose: cam,
    })
}

/// Writes frames in TUM layout: rgb/, depth/, masks/, rgb.txt, depth.txt,
/// groundtruth.txt and intrinsics.txt.
pub fn export_tum(spec: &SceneSpec, frames: &[SynthFrame], root: &FsPath) -> Result<()> {
    let mut rgb = String::from("# color images\n# timestamp filename\n");
    let mut depth = String::from("# depth maps\n# timestamp filename\n");
    for f in frames {
        let name = format!("{}.png", timestamp_name(f.timestamp));
        write_intensity_png(&root.join("rgb").join(&name), &f.intensity)?;
        write_depth_png(
            &root.join("depth").join(&name),
            &f.depth,
            DEFAULT_DEPTH_SCALE,
        )?;
        write_mask_png(&root.join("masks").join(&name), &f.mask)?;
        let ts = timestamp_name(f.timestamp);
        rgb.push_str(&format!("{ts} rgb/{name}\n"));
        depth.push_str(&format!("{ts} depth/{name}\n"));
    }
    write_text(&root.join("rgb.txt"), &rgb)?;
    write_text(&root.join("depth.txt"), &depth)?;
    let traj = Trajectory::from_poses(frames.iter().map(|f| (f.timestamp, f.pose)).collect())?;
    write_trajectory(&traj, &root.join("groundtruth.txt"))?;
    write_intrinsics(&root.join("intrinsics.txt"), &spec.intrinsics)
}

pub const SUITE_NAMES: [&str; 5] = [
    "static_box",
    "dominant_object",
    "construct",
    "dynamic_pan",
    "toss",
];

/// Default acceptance resolution.
pub const SUITE_WIDTH: usize = 320;
pub const SUITE_HEIGHT: usize = 240;

/// The standard scenes at 320×240.
pub fn standard_suites() -> Vec<SceneSpec> {
    standard_suites_at(SUITE_WIDTH, SUITE_HEIGHT)
}

pub fn standard_suites_at(width: usize, height: usize) -> Vec<SceneSpec> {
    SUITE_NAMES
        .iter()
        .map(|n| suite(n, width, height).expect("known suite"))
        .collect()
}

fn yaw(angle: f64) -> RigidTransform {
    exp_se3(&Twist::from_array([0.0, 0.0, 0.0, 0.0, angle, 0.0]))
}

fn at(x: f64, y: f64, z: f64) -> RigidTransform {
    RigidTransform::from_translation(Vector3::new(x, y, z))
}

/// Scene by name, with the camera model scaled to `width × height`.
pub fn suite(name: &str, width: usize, height: usize) -> Option<SceneSpec> {
    let k = CameraIntrinsics::kinect_scaled(width, height);
    // texture lattices are sized in pixels at the surface's working depth
    let tex = |seed: u64, depth: f64| {
        let px = depth / k.fx;
        Texture::new(seed, [28.0 * px, 11.0 * px, 5.0 * px])
    };
    let wall = |z: f64| Body {
        shape: Shape::Plane { half_extent: None },
        path: Path::fixed(at(0.0, 0.0, z)),
        texture: tex(1, z),
        moving: false,
    };
    let noise = Some(DepthNoise {
        coeff: 0.0015,
        dropout: 0.005,
    });
    let mut spec = SceneSpec {
        name: name.to_string(),
        intrinsics: k,
        frames: 60,
        fps: 30.0,
        camera: Path::fixed(RigidTransform::identity()),
        bodies: vec![wall(3.0)],
        noise,
        seed: 7,
    };
    match name {
        "static_box" => {
            // enters from the left, so the first frame has no object
            spec.bodies.push(Body {
                shape: Shape::Cuboid {
                    half_extent: [0.3, 0.3, 0.2],
                },
                path: Path::linear(0.0, [-2.4, 0.1, 2.0], 59.0, [0.9, -0.1, 2.0]),
                texture: tex(2, 1.8),
                moving: true,
            });
        }
        "dominant_object" => {
            // a board close to the camera slides in from the right until it
            // covers most of the view, then keeps moving vertically
            spec.frames = 75;
            spec.camera = Path::linear(0.0, [0.0, 0.0, 0.0], 74.0, [0.3, 0.0, 0.15]);
            spec.bodies.push(Body {
                shape: Shape::Plane {
                    half_extent: Some([1.0, 1.6]),
                },
                path: Path::keys(vec![
                    (0.0, at(1.85, 0.0, 1.2)),
                    (40.0, at(0.95, 0.0, 1.2)),
                    (74.0, at(0.95, -0.75, 1.2)),
                ]),
                texture: tex(3, 1.2),
                moving: true,
            });
        }
        "construct" => {
            // enters, parks in the middle, then leaves to the right
            spec.frames = 75;
            spec.noise = noise;
            spec.bodies.push(Body {
                shape: Shape::Cuboid {
                    half_extent: [0.3, 0.35, 0.2],
                },
                path: Path::keys(vec![
                    (0.0, at(-2.3, 0.0, 2.0)),
                    (20.0, at(-0.2, 0.0, 2.0)),
                    (40.0, at(-0.2, 0.0, 2.0)),
                    (62.0, at(2.3, 0.0, 2.0)),
                ]),
                texture: tex(4, 1.8),
                moving: true,
            });
        }
        "dynamic_pan" => {
            // a board in the lower half enters while the camera rests, then
            // stays fixed in the view while the camera pans towards it, so its
            // right part keeps entering through the newly discovered area
            spec.frames = 70;
            spec.camera = Path::keys(vec![
                (0.0, RigidTransform::identity()),
                (25.0, RigidTransform::identity()),
                (69.0, yaw(0.38)),
            ]);
            spec.bodies.push(Body {
                shape: Shape::Plane {
                    half_extent: Some([1.0, 0.8]),
                },
                path: Path::Camera(Box::new(Path::keys(vec![
                    (0.0, at(2.05, 0.85, 1.5)),
                    (22.0, at(1.25, 0.85, 1.5)),
                ]))),
                texture: tex(5, 1.5),
                moving: true,
            });
        }
        "toss" => {
            // two balls on crossing arcs at different depths
            spec.frames = 45;
            let arc = |from: f64, to: f64, z: f64| {
                Path::keys(
                    (0..=8)
                        .map(|i| {
                            let s = i as f64 / 8.0;
                            let x = from + (to - from) * s;
                            let y = 0.35 - 1.2 * s * (1.0 - s);
                            (s * 44.0, at(x, y, z))
                        })
                        .collect(),
                )
            };
            for (i, (from, to, z)) in [(-1.25, 1.25, 1.4), (1.45, -1.45, 1.7)]
                .into_iter()
                .enumerate()
            {
                spec.bodies.push(Body {
                    shape: Shape::Sphere { radius: 0.15 },
                    path: arc(from, to, z),
                    texture: tex(6 + i as u64, z - 0.15),
                    moving: true,
                });
            }
        }
        _ => return None,
    }
    Some(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_sequence, read_depth_png, read_mask_png, read_trajectory};
    use crate::geometry::{unproject, warp_with_depth, Pixel, Warped};

    fn plane_scene(z: f64, camera: Path) -> SceneSpec {
        SceneSpec {
            name: "plane".into(),
            intrinsics: CameraIntrinsics::kinect_scaled(64, 48),
            frames: 1,
            fps: 30.0,
            camera,
            bodies: vec![Body {
                shape: Shape::Plane { half_extent: None },
                path: Path::fixed(at(0.0, 0.0, z)),
                texture: Texture::new(1, [0.3, 0.12, 0.05]),
                moving: false,
            }],
            noise: None,
            seed: 0,
        }
    }

    #[test]
    fn fronto_parallel_plane() {
        let f = render(&plane_scene(2.0, Path::fixed(RigidTransform::identity()))).unwrap();
        assert!(f[0].depth.data().iter().all(|&z| z == 2.0));
        assert_eq!(f[0].mask.count(), 0);
        let f = render(&plane_scene(2.0, Path::fixed(at(0.0, 0.0, 0.1)))).unwrap();
        assert!(f[0].depth.data().iter().all(|&z| (z - 1.9).abs() < 1e-12));
    }

    #[test]
    fn box_in_front_of_plane() {
        let mut spec = plane_scene(2.0, Path::fixed(RigidTransform::identity()));
        let k = spec.intrinsics;
        // front face at 1.5 m spanning exactly 40×40 pixel centers
        let (x0, y0) = (10.0, 4.0);
        let half = 19.5 * 1.5 / k.fx;
        let cx = (x0 + 19.5 - k.cx) * 1.5 / k.fx;
        let cy = (y0 + 19.5 - k.cy) * 1.5 / k.fy;
        let half_y = 19.5 * 1.5 / k.fy;
        let mut bodies = spec.bodies.clone();
        bodies.push(Body {
            shape: Shape::Cuboid {
                half_extent: [half + 1e-9, half_y + 1e-9, 0.05],
            },
            path: Path::fixed(at(cx, cy, 1.55)),
            texture: Texture::new(9, [0.3, 0.12, 0.05]),
            moving: true,
        });
        let empty = render(&spec).unwrap().remove(0);
        spec.bodies = bodies;
        let full = render(&spec).unwrap().remove(0);
        let expected = Image::from_fn(64, 48, |x, y| (10..50).contains(&x) && (4..44).contains(&y));
        assert_eq!(full.mask, expected);
        // newly covered pixels occlude by 0.5 m
        let occ = crate::occlusion::occlusion_map(
            &empty.depth,
            &full.depth,
            &RigidTransform::identity(),
            &k,
        )
        .unwrap();
        for y in 0..48 {
            for x in 0..64 {
                let want = if *expected.get(x, y) { 0.5 } else { 0.0 };
                assert!((occ.dz.get(x, y) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depth_is_analytic_nearest_hit() {
        // tilted plane: n·p = d in camera frame, so z = d / (n·ray)
        let tilt = exp_se3(&Twist::from_array([0.0, 0.0, 0.0, 0.3, -0.2, 0.0]));
        let mut spec = plane_scene(2.0, Path::fixed(RigidTransform::identity()));
        spec.bodies[0].path = Path::fixed(RigidTransform::new(
            tilt.rotation,
            Vector3::new(0.1, 0.0, 2.5),
        ));
        let f = render(&spec).unwrap().remove(0);
        let k = spec.intrinsics;
        let n = tilt.rotation.column(2).into_owned();
        let d = n.dot(&Vector3::new(0.1, 0.0, 2.5));
        for y in 0..48 {
            for x in 0..64 {
                let ray = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                assert!((f.depth.get(x, y) - d / n.dot(&ray)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn texture_is_view_independent() {
        // a surface point seen from two poses has the same intensity
        let mut spec = plane_scene(2.0, Path::linear(0.0, [0.0; 3], 1.0, [0.05, -0.02, 0.1]));
        spec.frames = 2;
        let f = render(&spec).unwrap();
        let k = spec.intrinsics;
        let motion = f[0].pose.inverse() * f[1].pose;
        let mut checked = 0;
        for y in 0..48 {
            for x in 0..64 {
                let u = Pixel::new(x as f64, y as f64);
                if let Warped::Inside { pixel, .. } =
                    warp_with_depth(u, f[1].depth.get(x, y), &motion, &k)
                {
                    let (px, py) = (pixel.x.round(), pixel.y.round());
                    if (pixel.x - px).abs() < 1e-9 && (pixel.y - py).abs() < 1e-9 {
                        assert!(
                            (f[0].intensity.get(px as usize, py as usize)
                                - f[1].intensity.get(x, y))
                            .abs()
                                < 1e-9
                        );
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
        // and through the renderer itself: the world point behind pixel (20, 20)
        let p = f[1].pose.transform_point(
            &unproject(Pixel::new(20.0, 20.0), f[1].depth.get(20, 20), &k).unwrap(),
        );
        let local = p - Vector3::new(0.0, 0.0, 2.0);
        assert!((spec.bodies[0].texture.sample(&local) - f[1].intensity.get(20, 20)).abs() < 1e-12);
    }

    #[test]
    fn camera_inside_object_is_rejected() {
        let mut spec = plane_scene(2.0, Path::fixed(RigidTransform::identity()));
        spec.bodies.push(Body {
            shape: Shape::Sphere { radius: 0.5 },
            path: Path::fixed(at(0.1, 0.0, 0.0)),
            texture: Texture::new(3, [0.3, 0.12, 0.05]),
            moving: true,
        });
        assert!(matches!(
            render(&spec),
            Err(Error::DegenerateViewpoint {
                object: 1,
                frame: 0
            })
        ));
    }

    #[test]
    fn render_is_deterministic() {
        let spec = suite("toss", 64, 48).unwrap();
        let a = render(&spec).unwrap();
        let b = render(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.depth.data(), y.depth.data());
            assert_eq!(x.intensity.data(), y.intensity.data());
            assert_eq!(x.mask, y.mask);
        }
    }

    #[test]
    fn suite_catalog() {
        let suites = standard_suites_at(80, 60);
        assert_eq!(suites.len(), SUITE_NAMES.len());
        for s in &suites {
            s.validate().unwrap();
        }
        let first = render_frame(&suite("static_box", 80, 60).unwrap(), 0).unwrap();
        assert_eq!(first.mask.count(), 0);
        assert!(suite("nope", 80, 60).is_none());
    }

    #[test]
    fn dominant_object_covers_most_pixels() {
        let spec = suite("dominant_object", 80, 60).unwrap();
        let peak = (0..spec.frames)
            .map(|i| render_frame(&spec, i).unwrap().mask.count())
            .max()
            .unwrap();
        assert!(peak as f64 > 0.5 * 80.0 * 60.0, "peak coverage {peak}");
    }

    #[test]
    fn panning_discovers_new_area() {
        let spec = suite("dynamic_pan", 80, 60).unwrap();
        let k = spec.intrinsics;
        let (a, b) = (
            render_frame(&spec, 40).unwrap(),
            render_frame(&spec, 41).unwrap(),
        );
        let motion = a.pose.inverse() * b.pose;
        let fresh = (0..60)
            .flat_map(|y| (0..80).map(move |x| (x, y)))
            .filter(|&(x, y)| {
                matches!(
                    warp_with_depth(
                        Pixel::new(x as f64, y as f64),
                        b.depth.get(x, y),
                        &motion,
                        &k
                    ),
                    Warped::OutOfFrame
                )
            })
            .count();
        assert!(fresh > 0);
    }

    #[test]
    fn tum_export_round_trip() {
        let mut spec = suite("static_box", 64, 48).unwrap();
        spec.frames = 3;
        let frames = render(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_tum(&spec, &frames, dir.path()).unwrap();
        let seq = load_sequence(dir.path(), 0.02).unwrap();
        assert_eq!(seq.frames.len(), 3);
        let d = read_depth_png(&seq.frames[2].depth_path, DEFAULT_DEPTH_SCALE).unwrap();
        for (a, b) in d.data().iter().zip(frames[2].depth.data()) {
            assert!((a - b).abs() <= 0.5 / DEFAULT_DEPTH_SCALE + 1e-12);
        }
        let m = read_mask_png(
            &dir.path()
                .join("masks")
                .join(format!("{}.png", timestamp_name(frames[2].timestamp))),
        )
        .unwrap();
        assert_eq!(m, frames[2].mask);
        let gt = read_trajectory(&dir.path().join("groundtruth.txt")).unwrap();
        assert_eq!(gt.len(), 3);
    }

    #[test]
    fn noise_is_seeded() {
        let mut spec = suite("static_box", 64, 48).unwrap();
        spec.frames = 2;
        let a = render(&spec).unwrap();
        spec.seed += 1;
        let b = render(&spec).unwrap();
        assert_ne!(a[1].depth.data(), b[1].depth.data());
        assert_eq!(a[1].intensity.data(), b[1].intensity.data());
    }
}
