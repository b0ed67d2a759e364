//! Dense image buffers, bilinear sampling and pyramids.

use crate::error::{Error, Result};
use crate::geometry::Pixel;
use crate::par;

/// Row-major 2-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Binary per-pixel map.
pub type Mask = Image<bool>;

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Image<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                actual: (data.len(), 1),
            });
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T + Sync + Send) -> Self
    where
        T: Send,
    {
        let rows = par::map_rows(height, |y| (0..width).map(|x| f(x, y)).collect::<Vec<_>>());
        Image {
            width,
            height,
            data: rows.into_iter().flatten().collect(),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: self.dims(),
            });
        }
        Ok(())
    }

    pub fn map<U: Send>(&self, f: impl Fn(&T) -> U + Sync + Send) -> Image<U>
    where
        T: Sync,
    {
        Image::from_fn(self.width, self.height, |x, y| f(self.get(x, y)))
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn inverted(&self) -> Mask {
        self.map(|b| !b)
    }
}

/// Bilinear cell for a continuous location: top-left corner and fractional
/// offsets. `None` outside the hull of pixel centers.
#[inline]
fn bilinear_cell(width: usize, height: usize, p: Pixel) -> Option<(usize, usize, f64, f64)> {
    if !(p.x >= 0.0 && p.y >= 0.0) {
        return None;
    }
    let (xmax, ymax) = ((width as f64) - 1.0, (height as f64) - 1.0);
    if !(p.x <= xmax && p.y <= ymax) {
        return None;
    }
    let x0 = (p.x.floor() as usize).min(width.saturating_sub(2));
    let y0 = (p.y.floor() as usize).min(height.saturating_sub(2));
    Some((x0, y0, p.x - x0 as f64, p.y - y0 as f64))
}

/// Value and gradient of a bilinear interpolant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Bilinear sampling over a scalar grid where `valid` rejects samples.
///
/// Only neighbors with nonzero interpolation weight are required to be valid,
/// so integer coordinates reproduce stored values exactly.
#[inline]
fn sample_weighted(img: &Image<f64>, p: Pixel, valid: impl Fn(f64) -> bool) -> Option<f64> {
    let (x0, y0, ax, ay) = bilinear_cell(img.width, img.height, p)?;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let corners = [
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x1, y0, ax * (1.0 - ay)),
        (x0, y1, (1.0 - ax) * ay),
        (x1, y1, ax * ay),
    ];
    let mut acc = 0.0;
    for (x, y, w) in corners {
        if w == 0.0 {
            continue;
        }
        let v = *img.get(x, y);
        if !valid(v) {
            return None;
        }
        acc += w * v;
    }
    Some(acc)
}

/// Bilinear sample with the exact gradient of the interpolant. All four cell
/// corners must be valid.
#[inline]
fn sample_cell(img: &Image<f64>, p: Pixel, valid: impl Fn(f64) -> bool) -> Option<Sample> {
    let (x0, y0, ax, ay) = bilinear_cell(img.width, img.height, p)?;
    if img.width < 2 || img.height < 2 {
        return None;
    }
    let i00 = *img.get(x0, y0);
    let i10 = *img.get(x0 + 1, y0);
    let i01 = *img.get(x0, y0 + 1);
    let i11 = *img.get(x0 + 1, y0 + 1);
    if !(valid(i00) && valid(i10) && valid(i01) && valid(i11)) {
        return None;
    }
    let top = i00 + ax * (i10 - i00);
    let bottom = i01 + ax * (i11 - i01);
    Some(Sample {
        value: top + ay * (bottom - top),
        dx: (1.0 - ay) * (i10 - i00) + ay * (i11 - i01),
        dy: bottom - top,
    })
}

/// Depth map in meters; 0 marks an unmeasured pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage(Image<f64>);

/// Invalid-depth sentinel.
pub const INVALID_DEPTH: f64 = 0.0;

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Config(format!(
                "depth value {bad} is not a finite non-negative number"
            )));
        }
        Ok(DepthImage(Image::from_vec(width, height, data)?))
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        DepthImage(Image::filled(width, height, depth))
    }

    /// Builds from a closure; non-finite or negative values become invalid.
    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f64 + Sync + Send,
    ) -> Self {
        DepthImage(Image::from_fn(width, height, |x, y| {
            let z = f(x, y);
            if z.is_finite() && z > 0.0 {
                z
            } else {
                INVALID_DEPTH
            }
        }))
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        *self.0.get(x, y)
    }

    /// Stores `z`; anything that is not a positive finite number becomes invalid.
    pub fn set(&mut self, x: usize, y: usize, z: f64) {
        let z = if z.is_finite() && z > 0.0 {
            z
        } else {
            INVALID_DEPTH
        };
        self.0.set(x, y, z);
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.0.data.iter().filter(|&&z| z > 0.0).count()
    }

    pub fn as_image(&self) -> &Image<f64> {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    /// Bilinear depth; invalid outside Ω or when a contributing neighbor is
    /// unmeasured.
    #[inline]
    pub fn sample(&self, p: Pixel) -> Option<f64> {
        sample_weighted(&self.0, p, |z| z > 0.0)
    }

    /// Bilinear depth with gradient; requires all four cell corners valid.
    #[inline]
    pub fn sample_with_gradient(&self, p: Pixel) -> Option<Sample> {
        sample_cell(&self.0, p, |z| z > 0.0)
    }

    /// As [`sample_with_gradient`](Self::sample_with_gradient), and also
    /// invalid when the cell's corners spread by more than `max_ratio` times
    /// the nearest one, i.e. when the cell straddles a depth discontinuity.
    #[inline]
    pub fn sample_surface(&self, p: Pixel, max_ratio: f64) -> Option<Sample> {
        let s = self.sample_with_gradient(p)?;
        let (x0, y0, _, _) = bilinear_cell(self.0.width, self.0.height, p)?;
        let c = [
            self.get(x0, y0),
            self.get(x0 + 1, y0),
            self.get(x0, y0 + 1),
            self.get(x0 + 1, y0 + 1),
        ];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(0.0, f64::max);
        (hi - lo <= max_ratio * lo).then_some(s)
    }
}

/// Gray image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage(Image<f64>);

impl IntensityImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(IntensityImage(Image::from_vec(width, height, data)?))
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        IntensityImage(Image::filled(width, height, value.clamp(0.0, 1.0)))
    }

    /// Builds from a closure, clamping into `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f64 + Sync + Send,
    ) -> Self {
        IntensityImage(Image::from_fn(width, height, |x, y| {
            f(x, y).clamp(0.0, 1.0)
        }))
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        *self.0.get(x, y)
    }

    pub fn as_image(&self) -> &Image<f64> {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    #[inline]
    pub fn sample(&self, p: Pixel) -> Option<f64> {
        sample_weighted(&self.0, p, |_| true)
    }

    #[inline]
    pub fn sample_with_gradient(&self, p: Pixel) -> Option<Sample> {
        sample_cell(&self.0, p, |_| true)
    }
}

/// Bilinear sample of an arbitrary scalar grid (NaN entries are invalid).
pub fn sample_bilinear(img: &Image<f64>, p: Pixel) -> Option<f64> {
    sample_weighted(img, p, |v| !v.is_nan())
}

/// Luminance weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Weighted channel sum of a normalized RGB image, clamped into `[0, 1]`.
pub fn to_gray(rgb: &Image<[f64; 3]>, weights: [f64; 3]) -> IntensityImage {
    IntensityImage::from_fn(rgb.width, rgb.height, |x, y| {
        let c = rgb.get(x, y);
        c[0] * weights[0] + c[1] * weights[1] + c[2] * weights[2]
    })
}

/// Halves an intensity/depth pair by 2×2 block averaging. Depth averages only
/// valid samples; a block without any stays invalid. Odd trailing rows and
/// columns form partial blocks.
pub fn downsample(intensity: &IntensityImage, depth: &DepthImage) -> (IntensityImage, DepthImage) {
    let (w, h) = intensity.dims();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let block = move |x: usize, y: usize| {
        let xs = 2 * x..(2 * x + 2).min(w);
        let ys = 2 * y..(2 * y + 2).min(h);
        ys.flat_map(move |yy| xs.clone().map(move |xx| (xx, yy)))
    };
    let gray = IntensityImage::from_fn(nw, nh, |x, y| {
        let (sum, n) = block(x, y).fold((0.0, 0usize), |(s, n), (xx, yy)| {
            (s + intensity.get(xx, yy), n + 1)
        });
        sum / n as f64
    });
    let depth = DepthImage::from_fn(nw, nh, |x, y| {
        let (sum, n) = block(x, y)
            .map(|(xx, yy)| depth.get(xx, yy))
            .filter(|&z| z > 0.0)
            .fold((0.0, 0usize), |(s, n), z| (s + z, n + 1));
        if n == 0 {
            INVALID_DEPTH
        } else {
            sum / n as f64
        }
    });
    (gray, depth)
}

/// Halves a binary mask; a coarse pixel is set if any pixel of its block is set.
pub fn downsample_any(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    Image::from_fn(w.div_ceil(2), h.div_ceil(2), |x, y| {
        (2 * y..(2 * y + 2).min(h))
            .any(|yy| (2 * x..(2 * x + 2).min(w)).any(|xx| *mask.get(xx, yy)))
    })
}

/// Coarse-to-fine image pyramid; level 0 is full resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<(IntensityImage, DepthImage)>,
}

impl Pyramid {
    /// Builds up to `levels` levels, stopping early once a level would drop
    /// below 2 pixels in either dimension.
    pub fn build(intensity: &IntensityImage, depth: &DepthImage, levels: usize) -> Self {
        let mut out = vec![(intensity.clone(), depth.clone())];
        while out.len() < levels.max(1) {
            let (i, d) = out.last().unwrap();
            if i.width() < 2 || i.height() < 2 {
                break;
            }
            out.push(downsample(i, d));
        }
        Pyramid { levels: out }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}
