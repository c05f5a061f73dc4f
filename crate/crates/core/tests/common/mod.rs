//! Independent oracles and random generators shared by the integration
//! suites. Nothing here calls the code it checks.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashSet;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spcrf::crf::{CrfModel, PairwiseTerm};
use spcrf::{InstanceSet, LabelMap, Matrix, SuperpixelMap, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Either uniform noise or a few flat-coloured rectangles with mild noise.
pub fn random_image(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RgbImage {
    if rng.random_bool(0.5) {
        return RgbImage::from_fn(cols as u32, rows as u32, |_, _| Rgb(rng.random()));
    }
    let mut img = RgbImage::from_pixel(cols as u32, rows as u32, Rgb(rng.random()));
    for _ in 0..rng.random_range(1..5) {
        let color: [u8; 3] = rng.random();
        let (r0, c0) = (rng.random_range(0..rows), rng.random_range(0..cols));
        let (r1, c1) = (rng.random_range(r0..rows) + 1, rng.random_range(c0..cols) + 1);
        for r in r0..r1 {
            for c in c0..c1 {
                img.put_pixel(c as u32, r as u32, Rgb(color));
            }
        }
    }
    for px in img.pixels_mut() {
        for v in px.0.iter_mut() {
            *v = (i32::from(*v) + rng.random_range(-8..=8)).clamp(0, 255) as u8;
        }
    }
    img
}

/// Random ids renumbered so every id below the count is used.
pub fn random_partition(rng: &mut ChaCha8Rng, rows: usize, cols: usize, max_ids: u32) -> SuperpixelMap {
    let raw: Vec<u32> = (0..rows * cols).map(|_| rng.random_range(0..max_ids)).collect();
    let mut map = std::collections::HashMap::new();
    let ids: Vec<u32> = raw
        .iter()
        .map(|&r| {
            let next = map.len() as u32;
            *map.entry(r).or_insert(next)
        })
        .collect();
    SuperpixelMap::new(rows, cols, ids, map.len()).unwrap()
}

/// Per-pixel average over the feature cell whose centre `(j + 0.5) s` is
/// nearest the pixel centre, found by scanning every cell. Returns
/// `(means, centroids, sizes)`.
pub fn pool_oracle(features: &Tensor, sp: &SuperpixelMap, stride: f64) -> (Vec<Vec<f64>>, Vec<[f64; 2]>, Vec<usize>) {
    let (k, frows, fcols) = features.shape();
    let n = sp.count();
    let mut sums = vec![vec![0.0; k]; n];
    let mut pos = vec![[0.0; 2]; n];
    let mut sizes = vec![0usize; n];
    for r in 0..sp.rows() {
        for c in 0..sp.cols() {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut best = (f64::INFINITY, 0, 0);
            for fr in 0..frows {
                for fc in 0..fcols {
                    let (cy, cx) = ((fr as f64 + 0.5) * stride, (fc as f64 + 0.5) * stride);
                    let d = (cy - y).powi(2) + (cx - x).powi(2);
                    if d < best.0 {
                        best = (d, fr, fc);
                    }
                }
            }
            let id = sp.get(r, c) as usize;
            for ch in 0..k {
                sums[id][ch] += f64::from(features.get(ch, best.1, best.2));
            }
            pos[id][0] += r as f64;
            pos[id][1] += c as f64;
            sizes[id] += 1;
        }
    }
    for i in 0..n {
        let s = sizes[i] as f64;
        sums[i].iter_mut().for_each(|v| *v /= s);
        pos[i] = [pos[i][0] / s, pos[i][1] / s];
    }
    (sums, pos, sizes)
}

/// Random CRF with unaries in `[0, 4)` and, optionally, one or two terms on
/// random edge subsets with kernels in `[0, 3)`.
pub fn random_crf(rng: &mut ChaCha8Rng, n: usize, labels: usize, pairwise: bool) -> CrfModel {
    let unary = Matrix::new(n, labels, (0..n * labels).map(|_| rng.random_range(0.0..4.0)).collect()).unwrap();
    let mut terms = Vec::new();
    let term_count = if pairwise { rng.random_range(1..=2) } else { 0 };
    for _ in 0..term_count {
        let density = rng.random_range(0.2..1.0);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(density) {
                    edges.push((i, j, rng.random_range(0.0..3.0)));
                }
            }
        }
        terms.push(PairwiseTerm { edges });
    }
    CrfModel::new(unary, terms).unwrap()
}

/// Same energy as the model, re-derived term by term.
pub fn energy_oracle(model: &CrfModel, v: &[u32]) -> f64 {
    let mut e = 0.0;
    for (i, &l) in v.iter().enumerate() {
        e += model.unary().get(i, l as usize);
    }
    for term in model.terms() {
        for &(i, j, k) in &term.edges {
            if v[i] != v[j] {
                e += k;
            }
        }
    }
    e
}

/// Minimum energy by recursive enumeration.
pub fn exhaustive_min_energy(model: &CrfModel) -> f64 {
    fn go(model: &CrfModel, v: &mut Vec<u32>, best: &mut f64) {
        if v.len() == model.num_variables() {
            *best = best.min(energy_oracle(model, v));
            return;
        }
        for l in 0..model.num_labels() as u32 {
            v.push(l);
            go(model, v, best);
            v.pop();
        }
    }
    let mut best = f64::INFINITY;
    go(model, &mut Vec::new(), &mut best);
    best
}

/// Path-compressing disjoint sets for cycle checks.
pub struct Dsu(Vec<usize>);

impl Dsu {
    pub fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }

    pub fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let root = self.find(self.0[x]);
            self.0[x] = root;
        }
        self.0[x]
    }

    /// False when `a` and `b` were already connected.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Symmetric similarity matrix with entries `m / denom`, diagonal 1.
pub fn dyadic_similarity(rng: &mut ChaCha8Rng, n: usize, denom: u32) -> Matrix {
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        s.set(i, i, 1.0);
        for j in i + 1..n {
            let v = f64::from(rng.random_range(0..=denom)) / f64::from(denom);
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

/// Minimum total dissimilarity `Σ (1 − s)` over all spanning trees, by
/// enumerating every `(n − 1)`-subset of the complete graph's edges.
pub fn min_spanning_tree_weight(s: &Matrix) -> f64 {
    let n = s.rows();
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let need = n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(need);
    fn go(start: usize, edges: &[(usize, usize)], need: usize, chosen: &mut Vec<usize>, s: &Matrix, best: &mut f64) {
        if chosen.len() == need {
            let mut dsu = Dsu::new(s.rows());
            if chosen.iter().all(|&e| dsu.union(edges[e].0, edges[e].1)) {
                let w: f64 = chosen.iter().map(|&e| 1.0 - s.get(edges[e].0, edges[e].1)).sum();
                *best = best.min(w);
            }
            return;
        }
        for e in start..edges.len() {
            chosen.push(e);
            go(e + 1, edges, need, chosen, s, best);
            chosen.pop();
        }
    }
    go(0, &edges, need, &mut chosen, s, &mut best);
    best
}

fn pixel_set(labels: &LabelMap, class: u32) -> HashSet<usize> {
    labels.labels().iter().enumerate().filter(|(_, &l)| l == class).map(|(p, _)| p).collect()
}

/// Per-class IoU by set intersection and union; `None` when the class is in
/// neither map.
pub fn miou_oracle(pred: &LabelMap, gt: &LabelMap, num_labels: usize) -> (Vec<Option<f64>>, f64) {
    let per: Vec<Option<f64>> = (0..num_labels as u32)
        .map(|c| {
            let (a, b) = (pixel_set(pred, c), pixel_set(gt, c));
            let union = a.union(&b).count();
            (union > 0).then(|| a.intersection(&b).count() as f64 / union as f64)
        })
        .collect();
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    (per, mean)
}

pub fn accuracy_oracle(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let same: HashSet<usize> = (0..pred.labels().len()).filter(|&p| pred.labels()[p] == gt.labels()[p]).collect();
    same.len() as f64 / pred.labels().len() as f64
}

fn mask_set(mask: &[bool]) -> HashSet<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(p, _)| p).collect()
}

fn set_iou(a: &HashSet<usize>, b: &HashSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// AP per ground-truth class: greedy matching by descending score (stable),
/// then `(1 / G) Σ_{true positives at rank r} max_{r' ≥ r} precision(r')`.
pub fn ap_oracle(pred: &InstanceSet, gt: &InstanceSet, threshold: f64) -> (Vec<(u32, f64)>, Option<f64>) {
    let mut classes: Vec<u32> = gt.instances().iter().map(|g| g.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut out = Vec::new();
    for class in classes {
        let gts: Vec<HashSet<usize>> =
            gt.instances().iter().filter(|g| g.class == class).map(|g| mask_set(&g.mask)).collect();
        let mut order: Vec<usize> =
            (0..pred.instances().len()).filter(|&i| pred.instances()[i].class == class).collect();
        order.sort_by(|&a, &b| pred.instances()[b].score.partial_cmp(&pred.instances()[a].score).unwrap());
        let mut used = vec![false; gts.len()];
        let mut hits = Vec::new();
        for i in order {
            let m = mask_set(&pred.instances()[i].mask);
            let mut best: Option<(usize, f64)> = None;
            for (g, set) in gts.iter().enumerate() {
                if used[g] {
                    continue;
                }
                let iou = set_iou(&m, set);
                match best {
                    Some((_, b)) if b >= iou => {}
                    _ => best = Some((g, iou)),
                }
            }
            let hit = matches!(best, Some((_, iou)) if iou >= threshold);
            if let (true, Some((g, _))) = (hit, best) {
                used[g] = true;
            }
            hits.push(hit);
        }
        let precision: Vec<f64> =
            (0..hits.len()).map(|r| hits[..=r].iter().filter(|&&h| h).count() as f64 / (r + 1) as f64).collect();
        let mut ap = 0.0;
        for r in 0..hits.len() {
            if hits[r] {
                ap += precision[r..].iter().cloned().fold(0.0, f64::max);
            }
        }
        out.push((class, ap / gts.len() as f64));
    }
    let mean = (!out.is_empty()).then(|| out.iter().map(|(_, a)| a).sum::<f64>() / out.len() as f64);
    (out, mean)
}

/// Random instance set on an `rows x cols` image; masks are never empty.
pub fn random_instances(rng: &mut ChaCha8Rng, rows: usize, cols: usize, count: usize, classes: u32) -> InstanceSet {
    let n = rows * cols;
    let instances = (0..count)
        .map(|_| {
            let density = rng.random_range(0.1..0.6);
            let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
            let forced = rng.random_range(0..n);
            mask[forced] = true;
            spcrf::Instance { mask, class: rng.random_range(0..classes), score: rng.random_range(0.0..1.0) }
        })
        .collect();
    InstanceSet::new(rows, cols, instances).unwrap()
}

/// Central difference of `f` at `x` in coordinate `i`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[i] += h;
    down[i] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

/// Relative error with a floor on the denominator so near-zero gradients
/// compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Fraction of ground-truth boundary pixels that have a superpixel boundary
/// pixel within Chebyshev distance `tol`. Boundary pixels are those with a
/// 4-neighbour of a different id.
pub fn boundary_recall(gt: &[u32], sp: &[u32], rows: usize, cols: usize, tol: usize) -> f64 {
    let boundary = |ids: &[u32]| -> Vec<bool> {
        (0..rows * cols)
            .map(|p| {
                let (r, c) = (p / cols, p % cols);
                let mut nb = Vec::new();
                if r > 0 {
                    nb.push(p - cols);
                }
                if r + 1 < rows {
                    nb.push(p + cols);
                }
                if c > 0 {
                    nb.push(p - 1);
                }
                if c + 1 < cols {
                    nb.push(p + 1);
                }
                nb.iter().any(|&q| ids[q] != ids[p])
            })
            .collect()
    };
    let (gb, sb) = (boundary(gt), boundary(sp));
    let mut total = 0;
    let mut hit = 0;
    for p in (0..rows * cols).filter(|&p| gb[p]) {
        total += 1;
        let (r, c) = (p / cols, p % cols);
        let found = (r.saturating_sub(tol)..=(r + tol).min(rows - 1))
            .any(|rr| (c.saturating_sub(tol)..=(c + tol).min(cols - 1)).any(|cc| sb[rr * cols + cc]));
        hit += usize::from(found);
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// Two-colour image split by a random line, with the colours at least
/// `min_contrast` apart in some channel. Returns the image and the side of
/// each pixel.
pub fn half_plane(rng: &mut ChaCha8Rng, rows: usize, cols: usize, min_contrast: u8) -> (RgbImage, Vec<u32>) {
    let a: [u8; 3] = rng.random();
    let b = loop {
        let b: [u8; 3] = rng.random();
        if a.iter().zip(&b).any(|(x, y)| x.abs_diff(*y) >= min_contrast) {
            break b;
        }
    };
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (ny, nx) = (angle.sin(), angle.cos());
    let (cy, cx) = (rng.random_range(0.3..0.7) * rows as f64, rng.random_range(0.3..0.7) * cols as f64);
    let side: Vec<u32> = (0..rows * cols)
        .map(|p| {
            let (y, x) = ((p / cols) as f64 + 0.5 - cy, (p % cols) as f64 + 0.5 - cx);
            u32::from(y * ny + x * nx >= 0.0)
        })
        .collect();
    let img = RgbImage::from_fn(cols as u32, rows as u32, |x, y| {
        Rgb(if side[y as usize * cols + x as usize] == 1 { b } else { a })
    });
    (img, side)
}
