//! Connected-component labeling of binary masks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::image::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Neighbors of `(x, y)` inside a `width × height` grid.
#[inline]
pub(crate) fn neighbors(
    x: usize,
    y: usize,
    width: usize,
    height: usize,
    conn: Connectivity,
) -> impl Iterator<Item = (usize, usize)> {
    conn.offsets().iter().filter_map(move |&(dx, dy)| {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height)
            .then_some((nx as usize, ny as usize))
    })
}

/// Component labels: 0 for unset pixels, `1..=count` otherwise, numbered in
/// raster order of each component's first pixel.
#[derive(Debug, Clone)]
pub struct Labels {
    pub labels: Image<u32>,
    /// Pixel count per label; index 0 is unused.
    pub areas: Vec<usize>,
}

impl Labels {
    pub fn count(&self) -> usize {
        self.areas.len() - 1
    }
}

pub fn label_components(mask: &Mask, conn: Connectivity) -> Labels {
    let (w, h) = mask.dims();
    let mut labels = Image::filled(w, h, 0u32);
    let mut areas = vec![0usize];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x, y) || *labels.get(x, y) != 0 {
                continue;
            }
            let id = areas.len() as u32;
            let mut area = 0;
            labels.set(x, y, id);
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                area += 1;
                for (nx, ny) in neighbors(cx, cy, w, h, conn) {
                    if *mask.get(nx, ny) && *labels.get(nx, ny) == 0 {
                        labels.set(nx, ny, id);
                        queue.push_back((nx, ny));
                    }
                }
            }
            areas.push(area);
        }
    }
    Labels { labels, areas }
}

/// Clears every component smaller than `min_area` pixels.
pub fn remove_small_components(mask: &Mask, min_area: usize, conn: Connectivity) -> Mask {
    if min_area == 0 {
        return mask.clone();
    }
    let comps = label_components(mask, conn);
    comps
        .labels
        .map(|&l| l != 0 && comps.areas[l as usize] >= min_area)
}
