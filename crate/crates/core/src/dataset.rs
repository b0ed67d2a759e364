//! TUM RGB-D layout: index files, depth/color/mask PNGs and trajectories.
//!
//! A sequence directory contains `rgb.txt` and `depth.txt` ("timestamp
//! relative/path" lines, `#` comments) and optionally `groundtruth.txt`
//! ("timestamp tx ty tz qx qy qz qw"). Depth PNGs are 16-bit single channel
//! with `depth_scale` counts per meter; 0 means no measurement. Trajectories
//! are world-from-camera.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::image::{to_gray, DepthImage, Image, IntensityImage, Mask, LUMA_WEIGHTS};

/// TUM depth encoding.
pub const DEFAULT_DEPTH_SCALE: f64 = 5000.0;
pub const DEFAULT_ASSOC_TOLERANCE: f64 = 0.02;

/// One associated color/depth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    /// Color timestamp in seconds.
    pub timestamp: f64,
    pub depth_timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
    pub gt_pose: Option<RigidTransform>,
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub root: PathBuf,
    pub frames: Vec<FrameRecord>,
    pub dropped_rgb: usize,
    pub dropped_depth: usize,
    pub groundtruth: Option<Trajectory>,
}

/// Timestamped world-from-camera poses, strictly increasing in time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<(f64, RigidTransform)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_poses(poses: Vec<(f64, RigidTransform)>) -> Result<Self> {
        let mut t = Trajectory::new();
        for (ts, p) in poses {
            t.push(ts, p)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, timestamp: f64, pose: RigidTransform) -> Result<()> {
        if !timestamp.is_finite() {
            return Err(Error::Config(format!("non-finite timestamp {timestamp}")));
        }
        if let Some(&(last, _)) = self.poses.last() {
            if timestamp <= last {
                return Err(Error::Config(format!(
                    "timestamps must increase strictly: {timestamp} after {last}"
                )));
            }
        }
        self.poses.push((timestamp, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[(f64, RigidTransform)] {
        &self.poses
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.poses.iter().map(|p| p.0).collect()
    }

    pub fn get(&self, i: usize) -> Option<&(f64, RigidTransform)> {
        self.poses.get(i)
    }

    /// Interpolated pose at `t`: linear in translation, slerp in rotation.
    /// Fails when the nearest sample is more than `max_gap` away.
    pub fn pose_at(&self, t: f64, max_gap: f64) -> Result<RigidTransform> {
        pose_lookup(self, t, max_gap)
    }
}

pub fn pose_lookup(traj: &Trajectory, t: f64, max_gap: f64) -> Result<RigidTransform> {
    let poses = &traj.poses;
    if poses.is_empty() {
        return Err(Error::NoPoseCoverage { t });
    }
    let idx = poses.partition_point(|p| p.0 < t);
    let nearest_gap = |i: usize| (poses[i].0 - t).abs();
    if idx < poses.len() && poses[idx].0 == t {
        return Ok(poses[idx].1);
    }
    if idx == 0 || idx == poses.len() {
        let i = if idx == 0 { 0 } else { poses.len() - 1 };
        if nearest_gap(i) <= max_gap {
            return Ok(poses[i].1);
        }
        return Err(Error::NoPoseCoverage { t });
    }
    let (t0, a) = poses[idx - 1];
    let (t1, b) = poses[idx];
    if nearest_gap(idx - 1).min(nearest_gap(idx)) > max_gap {
        return Err(Error::NoPoseCoverage { t });
    }
    let s = (t - t0) / (t1 - t0);
    Ok(interpolate(&a, &b, s))
}

pub fn interpolate(a: &RigidTransform, b: &RigidTransform, s: f64) -> RigidTransform {
    let qa = rotation_quaternion(a);
    let qb = rotation_quaternion(b);
    let q = qa.try_slerp(&qb, s, 1e-12).unwrap_or(qa);
    RigidTransform::new(
        *q.to_rotation_matrix().matrix(),
        a.translation + (b.translation - a.translation) * s,
    )
}

fn rotation_quaternion(t: &RigidTransform) -> UnitQuaternion<f64> {
    let q = t.quaternion();
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads a "timestamp path" index file.
pub fn read_index(path: &Path) -> Result<Vec<(f64, String)>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (line, l) in content_lines(&text) {
        let mut it = l.split_whitespace();
        let parse_err = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m.to_string(),
        };
        let ts: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("expected a timestamp"))?;
        let file = it.next().ok_or_else(|| parse_err("expected a file name"))?;
        out.push((ts, file.to_string()));
    }
    Ok(out)
}

/// Greedy nearest-timestamp matching: candidate pairs within `tolerance` are
/// taken in order of increasing time difference, each entry used at most
/// once. Returned pairs are sorted by the index into `a`.
pub fn associate(a: &[f64], b: &[f64], tolerance: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        // b is usually sorted, but do not rely on it
        for (j, &tb) in b.iter().enumerate() {
            let d = (ta - tb).abs();
            if d <= tolerance {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort();
    pairs
}

/// Loads and associates a TUM-layout sequence.
pub fn load_sequence(root: &Path, assoc_tolerance: f64) -> Result<Sequence> {
    let rgb = read_index(&root.join("rgb.txt"))?;
    let depth = read_index(&root.join("depth.txt"))?;
    let ta: Vec<f64> = rgb.iter().map(|r| r.0).collect();
    let tb: Vec<f64> = depth.iter().map(|r| r.0).collect();
    let pairs = associate(&ta, &tb, assoc_tolerance);
    if pairs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let gt_path = root.join("groundtruth.txt");
    let groundtruth = if gt_path.exists() {
        Some(read_trajectory(&gt_path)?)
    } else {
        None
    };
    let mut frames: Vec<FrameRecord> = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        if let Some(last) = frames.last() {
            if rgb[i].0 <= last.timestamp {
                return Err(Error::Config(format!(
                    "rgb timestamps not increasing at {}",
                    rgb[i].0
                )));
            }
        }
        let gt_pose = groundtruth
            .as_ref()
            .and_then(|g| pose_lookup(g, rgb[i].0, assoc_tolerance).ok());
        frames.push(FrameRecord {
            timestamp: rgb[i].0,
            depth_timestamp: depth[j].0,
            rgb_path: root.join(&rgb[i].1),
            depth_path: root.join(&depth[j].1),
            gt_pose,
        });
    }
    let dropped_rgb = rgb.len() - pairs.len();
    let dropped_depth = depth.len() - pairs.len();
    if dropped_rgb + dropped_depth > 0 {
        log::warn!(
            "{}: dropped {dropped_rgb} color and {dropped_depth} depth entries without a partner",
            root.display()
        );
    }
    Ok(Sequence {
        root: root.to_path_buf(),
        frames,
        dropped_rgb,
        dropped_depth,
        groundtruth,
    })
}

#[inline]
pub fn depth_from_count(count: u16, depth_scale: f64) -> f64 {
    count as f64 / depth_scale
}

#[inline]
pub fn depth_to_count(depth: f64, depth_scale: f64) -> u16 {
    if !(depth > 0.0) {
        return 0;
    }
    (depth * depth_scale).round().clamp(0.0, 65535.0) as u16
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::format(path, e.to_string()))
}

fn save_image(img: impl Into<image::DynamicImage>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.into()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Reads a 16-bit single-channel depth PNG.
pub fn read_depth_png(path: &Path, depth_scale: f64) -> Result<DepthImage> {
    let img = open_image(path)?;
    let image::DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::format(
            path,
            format!(
                "expected 16-bit single-channel depth, found {:?}",
                img.color()
            ),
        ));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let data = buf
        .into_raw()
        .into_iter()
        .map(|c| depth_from_count(c, depth_scale))
        .collect();
    DepthImage::new(w, h, data)
}

pub fn write_depth_png(path: &Path, depth: &DepthImage, depth_scale: f64) -> Result<()> {
    let raw: Vec<u16> = depth
        .data()
        .iter()
        .map(|&z| depth_to_count(z, depth_scale))
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        depth.width() as u32,
        depth.height() as u32,
        raw,
    )
    .expect("buffer size matches dimensions");
    save_image(buf, path)
}

/// Reads an 8-bit color PNG, normalized to `[0, 1]`.
pub fn read_rgb_png(path: &Path) -> Result<Image<[f64; 3]>> {
    let img = open_image(path)?;
    if img.color().bytes_per_pixel() / img.color().channel_count() as u8 != 1 {
        return Err(Error::format(
            path,
            format!("expected 8-bit color, found {:?}", img.color()),
        ));
    }
    let buf = img.to_rgb8();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let data = buf
        .pixels()
        .map(|p| {
            [
                p[0] as f64 / 255.0,
                p[1] as f64 / 255.0,
                p[2] as f64 / 255.0,
            ]
        })
        .collect();
    Image::from_vec(w, h, data)
}

pub fn read_intensity_png(path: &Path) -> Result<IntensityImage> {
    Ok(to_gray(&read_rgb_png(path)?, LUMA_WEIGHTS))
}

/// Writes a gray image as 8-bit RGB.
pub fn write_intensity_png(path: &Path, img: &IntensityImage) -> Result<()> {
    let raw: Vec<u8> = img
        .data()
        .iter()
        .flat_map(|&v| {
            let c = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            [c, c, c]
        })
        .collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer size matches dimensions");
    save_image(buf, path)
}

/// Writes a mask as 8-bit gray: 255 for set pixels, 0 otherwise.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let raw: Vec<u8> = mask
        .data()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer size matches dimensions");
    save_image(buf, path)
}

/// Reads an 8-bit mask; any nonzero value is set.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = open_image(path)?;
    let buf = match img {
        image::DynamicImage::ImageLuma8(b) => b,
        other => {
            return Err(Error::format(
                path,
                format!(
                    "expected 8-bit single-channel mask, found {:?}",
                    other.color()
                ),
            ))
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    Image::from_vec(w, h, buf.into_raw().into_iter().map(|v| v != 0).collect())
}

/// File name used for per-frame outputs.
pub fn timestamp_name(timestamp: f64) -> String {
    format!("{timestamp:.6}")
}

/// Lists `<timestamp>.png` files in a directory, sorted by time.
pub fn list_timestamped_pngs(dir: &Path) -> Result<Vec<(f64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(ts) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<f64>().ok())
        {
            out.push((ts, path));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Reads a TUM trajectory. Quaternions are normalized; inputs whose norm is
/// off by more than 1e-3 are rejected.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = read_to_string(path)?;
    let mut traj = Trajectory::new();
    for (line, l) in content_lines(&text) {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(e.to_string()))?;
        if vals.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", vals.len())));
        }
        let q = [vals[4], vals[5], vals[6], vals[7]];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= 1e-3) {
            return Err(err(format!("quaternion norm {norm} is not 1")));
        }
        let q = q.map(|v| v / norm);
        let pose = RigidTransform::from_quaternion(Vector3::new(vals[1], vals[2], vals[3]), q);
        traj.push(vals[0], pose).map_err(|e| err(e.to_string()))?;
    }
    Ok(traj)
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in traj.poses() {
        let q = p.quaternion();
        let v = p.translation;
        s.push_str(&format!(
            "{t:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}\n",
            v.x, v.y, v.z, q[0], q[1], q[2], q[3]
        ));
    }
    s
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_text(path, &format_trajectory(traj))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads intrinsics from a one-line "fx fy cx cy width height" file.
pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = read_to_string(path)?;
    let (line, l) = content_lines(&text).next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty intrinsics file".into(),
    })?;
    let f: Vec<&str> = l.split_whitespace().collect();
    let err = |m: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: m,
    };
    if f.len() != 6 {
        return Err(err(format!(
            "expected 'fx fy cx cy width height', found {} fields",
            f.len()
        )));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| err(e.to_string()));
    let int = |s: &str| s.parse::<usize>().map_err(|e| err(e.to_string()));
    CameraIntrinsics::new(
        num(f[0])?,
        num(f[1])?,
        num(f[2])?,
        num(f[3])?,
        int(f[4])?,
        int(f[5])?,
    )
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    write_text(
        path,
        &format!(
            "# fx fy cx cy width height\n{} {} {} {} {} {}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        ),
    )
}
