//! SLIC superpixels: grid-seeded local k-means in CIELAB + position space,
//! followed by connectivity enforcement.
//!
//! The procedure:
//!
//! 1. convert sRGB to CIELAB (D65);
//! 2. lay a `gr x gc` grid of seeds with `gr * gc ≈ K` and near-square cells;
//! 3. move each seed to the lowest-gradient pixel of its 3x3 neighbourhood,
//!    if that is strictly lower than at the seed itself;
//! 4. for each iteration, assign every pixel inside a seed's `2S x 2S`
//!    window to the seed minimizing
//!    `D² = d_lab² + (d_xy / S)² m²`, then move seeds to their members' mean;
//! 5. split disconnected clusters and absorb fragments smaller than a quarter
//!    of the nominal superpixel area into their largest neighbour.
//!
//! Ties always resolve toward the lower seed index, so the output is a pure
//! function of the image and parameters.

use image::RgbImage;
use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use crate::error::{Error, Result};
use crate::partition::{neighbors4, relabel_first_appearance, split_components, SuperpixelMap};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SlicParams {
    /// Desired number of superpixels `K`.
    pub target_count: usize,
    /// Spatial weight `m`.
    pub compactness: f64,
    pub iterations: usize,
}

impl SlicParams {
    pub fn new(target_count: usize) -> Self {
        Self { target_count, ..Self::default() }
    }

    pub fn with_compactness(mut self, compactness: f64) -> Self {
        self.compactness = compactness;
        self
    }

    fn check(&self, pixels: usize) -> Result<()> {
        if self.target_count == 0 {
            return Err(Error::invalid("slic target_count must be positive"));
        }
        if self.target_count > pixels {
            return Err(Error::invalid(format!(
                "slic target_count {} exceeds pixel count {pixels}",
                self.target_count
            )));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(Error::invalid("slic compactness must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("slic iterations must be positive"));
        }
        Ok(())
    }
}

impl Default for SlicParams {
    fn default() -> Self {
        Self { target_count: 100, compactness: 10.0, iterations: 10 }
    }
}

/// sRGB (8-bit) to CIELAB under D65.
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    fn linear(c: u8) -> f64 {
        let c = f64::from(c) / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }
    let (r, g, b) = (linear(rgb[0]), linear(rgb[1]), linear(rgb[2]));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (f(x / 0.950_47), f(y), f(z / 1.088_83));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Seed grid `(rows, cols)` whose product is closest to `k` with the most
/// square cells. Ties prefer more columns.
pub(crate) fn grid_shape(rows: usize, cols: usize, k: usize) -> (usize, usize) {
    let mut best = (1, 1);
    let mut best_cost = f64::INFINITY;
    for gr in 1..=k.min(rows) {
        let gc = ((k as f64 / gr as f64).round() as usize).clamp(1, cols);
        let count_err = ((gr * gc) as f64 / k as f64).ln().abs();
        let aspect_err = ((rows as f64 / gr as f64) / (cols as f64 / gc as f64)).ln().abs();
        let cost = count_err + aspect_err;
        if cost < best_cost - 1e-12 {
            best = (gr, gc);
            best_cost = cost;
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
struct Seed {
    lab: [f64; 3],
    row: f64,
    col: f64,
}

/// Segments an RGB image into superpixels.
pub fn slic_segment(image: &RgbImage, params: &SlicParams) -> Result<SuperpixelMap> {
    let (cols, rows) = (image.width() as usize, image.height() as usize);
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("slic on an empty image"));
    }
    params.check(rows * cols)?;

    let lab: Vec<[f64; 3]> = image.pixels().map(|p| rgb_to_lab(p.0)).collect();
    let k = params.target_count;
    let step = ((rows * cols) as f64 / k as f64).sqrt();
    let (gr, gc) = grid_shape(rows, cols, k);
    let (cell_h, cell_w) = (rows as f64 / gr as f64, cols as f64 / gc as f64);

    let gradient = |r: usize, c: usize| -> f64 {
        let at = |rr: usize, cc: usize| lab[rr * cols + cc];
        let (up, down) = (at(r.saturating_sub(1), c), at((r + 1).min(rows - 1), c));
        let (left, right) = (at(r, c.saturating_sub(1)), at(r, (c + 1).min(cols - 1)));
        (0..3).map(|i| (down[i] - up[i]).powi(2) + (right[i] - left[i]).powi(2)).sum()
    };

    let mut seeds = Vec::with_capacity(gr * gc);
    for i in 0..gr {
        for j in 0..gc {
            let (mut row, mut col) = ((i as f64 + 0.5) * cell_h - 0.5, (j as f64 + 0.5) * cell_w - 0.5);
            let (r0, c0) = ((row.round() as usize).min(rows - 1), (col.round() as usize).min(cols - 1));
            let (mut best_r, mut best_c, mut best_g) = (r0, c0, gradient(r0, c0));
            for rr in r0.saturating_sub(1)..=(r0 + 1).min(rows - 1) {
                for cc in c0.saturating_sub(1)..=(c0 + 1).min(cols - 1) {
                    let g = gradient(rr, cc);
                    if g < best_g {
                        (best_r, best_c, best_g) = (rr, cc, g);
                    }
                }
            }
            if (best_r, best_c) != (r0, c0) {
                (row, col) = (best_r as f64, best_c as f64);
            }
            seeds.push(Seed { lab: lab[best_r * cols + best_c], row, col });
        }
    }

    // Every pixel starts in its grid cell so pixels outside all search
    // windows still carry a label.
    let mut labels: Vec<u32> = (0..rows * cols)
        .map(|p| {
            let (r, c) = (p / cols, p % cols);
            let i = ((r as f64 / cell_h) as usize).min(gr - 1);
            let j = ((c as f64 / cell_w) as usize).min(gc - 1);
            (i * gc + j) as u32
        })
        .collect();
    let mut dist = vec![f64::INFINITY; rows * cols];
    let spatial = (params.compactness / step).powi(2);

    for _ in 0..params.iterations {
        dist.fill(f64::INFINITY);
        for (si, seed) in seeds.iter().enumerate() {
            let r_lo = (seed.row - step).ceil().max(0.0) as usize;
            let r_hi = ((seed.row + step).floor() as isize).min(rows as isize - 1);
            let c_lo = (seed.col - step).ceil().max(0.0) as usize;
            let c_hi = ((seed.col + step).floor() as isize).min(cols as isize - 1);
            if r_hi < 0 || c_hi < 0 {
                continue;
            }
            for r in r_lo..=r_hi as usize {
                let dy = r as f64 - seed.row;
                for c in c_lo..=c_hi as usize {
                    let p = r * cols + c;
                    let px = lab[p];
                    let dc =
                        (px[0] - seed.lab[0]).powi(2) + (px[1] - seed.lab[1]).powi(2) + (px[2] - seed.lab[2]).powi(2);
                    let dx = c as f64 - seed.col;
                    let d = dc + (dy * dy + dx * dx) * spatial;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = si as u32;
                    }
                }
            }
        }

        let mut sums = vec![[0.0f64; 6]; seeds.len()];
        for (p, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            let px = lab[p];
            s[0] += px[0];
            s[1] += px[1];
            s[2] += px[2];
            s[3] += (p / cols) as f64;
            s[4] += (p % cols) as f64;
            s[5] += 1.0;
        }
        for (seed, s) in seeds.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                let n = s[5];
                *seed = Seed { lab: [s[0] / n, s[1] / n, s[2] / n], row: s[3] / n, col: s[4] / n };
            }
        }
    }

    let nominal_area = (rows * cols) as f64 / k as f64;
    let min_size = (nominal_area / 4.0).ceil() as usize;
    let (comp, ncomp) = split_components(rows, cols, &labels);
    merge_small_regions(rows, cols, &comp, ncomp, min_size, k.div_ceil(2), 2 * k, 4.0 * step)
}

/// Turns arbitrary raw ids into a valid partition: every 4-connected
/// component becomes its own region, components with fewer than `min_size`
/// pixels are absorbed into their largest adjacent region (ties to the region
/// appearing first in raster order), and ids are renumbered in raster order of
/// first appearance.
pub fn enforce_connectivity(rows: usize, cols: usize, raw: &[u32], min_size: usize) -> Result<SuperpixelMap> {
    if raw.len() != rows * cols {
        return Err(Error::shape(format!("raw id map has {} entries for a {rows}x{cols} image", raw.len())));
    }
    let (comp, ncomp) = split_components(rows, cols, raw);

    merge_small_regions(rows, cols, &comp, ncomp, min_size, 1, usize::MAX, f64::INFINITY)
}

/// Repeatedly merges the smallest region (ties to the lowest index) into its
/// largest neighbour (ties to the lowest index). A region is merged while it
/// is below `min_size` and more than `min_count` regions remain, or while more
/// than `max_count` remain. A merge is skipped if the joined bounding box
/// would exceed `max_extent` on either side. `comp` holds 4-connected
/// component indices in raster order, so every merge keeps regions connected.
#[allow(clippy::too_many_arguments)]
fn merge_small_regions(
    rows: usize,
    cols: usize,
    comp: &[u32],
    ncomp: usize,
    min_size: usize,
    min_count: usize,
    max_count: usize,
    max_extent: f64,
) -> Result<SuperpixelMap> {
    let mut size = vec![0usize; ncomp];
    // inclusive (row_min, row_max, col_min, col_max)
    let mut bbox = vec![(usize::MAX, 0, usize::MAX, 0); ncomp];
    for (p, &c) in comp.iter().enumerate() {
        let c = c as usize;
        let (r, col) = (p / cols, p % cols);
        size[c] += 1;
        let b = &mut bbox[c];
        *b = (b.0.min(r), b.1.max(r), b.2.min(col), b.3.max(col));
    }
    let union_box = |a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)| {
        (a.0.min(b.0), a.1.max(b.1), a.2.min(b.2), a.3.max(b.3))
    };
    let fits = |b: (usize, usize, usize, usize)| {
        ((b.1 - b.0 + 1) as f64) <= max_extent && ((b.3 - b.2 + 1) as f64) <= max_extent
    };
    let mut adjacent = vec![BTreeSet::new(); ncomp];
    for p in 0..comp.len() {
        for q in neighbors4(rows, cols, p) {
            let (a, b) = (comp[p] as usize, comp[q] as usize);
            if a != b {
                adjacent[a].insert(b);
            }
        }
    }

    let mut alive = vec![true; ncomp];
    let mut into: Vec<usize> = (0..ncomp).collect();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..ncomp).map(|c| Reverse((size[c], c))).collect();
    let mut count = ncomp;
    while let Some(Reverse((s, small))) = heap.pop() {
        if !alive[small] || s != size[small] {
            continue;
        }
        if !(count > max_count || (s < min_size && count > min_count)) {
            break;
        }
        // Regions only grow, so a region with no admissible neighbour now
        // never gets one later.
        let Some(big) = adjacent[small]
            .iter()
            .copied()
            .filter(|&j| fits(union_box(bbox[small], bbox[j])))
            .max_by_key(|&j| (size[j], Reverse(j)))
        else {
            continue;
        };
        alive[small] = false;
        into[small] = big;
        size[big] += s;
        bbox[big] = union_box(bbox[big], bbox[small]);
        count -= 1;
        for j in std::mem::take(&mut adjacent[small]) {
            adjacent[j].remove(&small);
            if j != big {
                adjacent[j].insert(big);
                adjacent[big].insert(j);
            }
        }
        heap.push(Reverse((size[big], big)));
    }

    let resolve = |mut c: usize| {
        while into[c] != c {
            c = into[c];
        }
        c as u32
    };
    let merged: Vec<u32> = comp.iter().map(|&c| resolve(c as usize)).collect();
    let (ids, count) = relabel_first_appearance(&merged);
    SuperpixelMap::new(rows, cols, ids, count)
}

/// Clips every superpixel to the inside and outside of `mask`, splitting
/// regions the mask cuts into pieces, and renumbers in raster order.
pub fn intersect_with_mask(sp: &SuperpixelMap, mask: &[bool]) -> Result<SuperpixelMap> {
    if mask.len() != sp.ids().len() {
        return Err(Error::shape(format!("mask has {} pixels, superpixel map has {}", mask.len(), sp.ids().len())));
    }
    let raw: Vec<u32> = sp.ids().iter().zip(mask).map(|(&id, &m)| id * 2 + u32::from(m)).collect();
    let (ids, count) = split_components(sp.rows(), sp.cols(), &raw);
    SuperpixelMap::new(sp.rows(), sp.cols(), ids, count)
}
