//! Superpixel pooling of feature maps.
//!
//! A feature map may be coarser than the image. Cell `(a, b)` of a map with
//! stride `s` is centred at `((a + 0.5) s, (b + 0.5) s)` in continuous image
//! coordinates, and pixel `(r, c)` is centred at `(r + 0.5, c + 0.5)`. Each
//! pixel reads the cell whose centre is nearest; a pixel equidistant from two
//! centres reads the lower-indexed cell. A superpixel's pooled vector is the
//! mean of what its pixels read, so a cell shared by several pixels is counted
//! once per pixel.

use crate::error::{Error, Result};
use crate::partition::SuperpixelMap;
use crate::types::{Matrix, SuperpixelFeatures, Tensor};

/// Placement of feature cells relative to image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptiveFieldGrid {
    stride: f64,
}

impl ReceptiveFieldGrid {
    pub fn new(stride: f64) -> Result<Self> {
        if !(stride.is_finite() && stride >= 1.0) {
            return Err(Error::invalid(format!("receptive-field stride {stride} must be >= 1")));
        }
        Ok(Self { stride })
    }

    /// Stride 1: one cell per pixel.
    pub fn identity() -> Self {
        Self { stride: 1.0 }
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    /// Feature-map shape `(ceil(rows / s), ceil(cols / s))` covering an image.
    pub fn cells_for(&self, rows: usize, cols: usize) -> (usize, usize) {
        ((rows as f64 / self.stride).ceil() as usize, (cols as f64 / self.stride).ceil() as usize)
    }

    /// Nearest cell along one axis for pixel index `p`.
    pub fn cell_of(&self, p: usize, cells: usize) -> usize {
        let x = (p as f64 + 0.5) / self.stride;
        // ceil - 1 sends exact midpoints to the lower cell
        let j = (x.ceil() as usize).saturating_sub(1);
        j.min(cells.saturating_sub(1))
    }
}

/// Average-pools `features` (`K x M' x N'`) over the superpixels of `sp`
/// (`M x N`).
pub fn pool_superpixels(
    features: &Tensor,
    sp: &SuperpixelMap,
    grid: &ReceptiveFieldGrid,
) -> Result<SuperpixelFeatures> {
    let (rows, cols) = (sp.rows(), sp.cols());
    let (k, frows, fcols) = features.shape();
    let expected = grid.cells_for(rows, cols);
    if (frows, fcols) != expected {
        return Err(Error::shape(format!(
            "feature map is {frows}x{fcols} but a {rows}x{cols} image at stride {} needs {}x{}",
            grid.stride(),
            expected.0,
            expected.1
        )));
    }
    let n = sp.count();
    let sizes = sp.sizes();
    if let Some(&bad) = sp.ids().iter().find(|&&id| id as usize >= n) {
        return Err(Error::OutOfRange(format!("superpixel id {bad} >= count {n}")));
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("superpixel {empty} is empty")));
    }

    let row_cell: Vec<usize> = (0..rows).map(|r| grid.cell_of(r, frows)).collect();
    let col_cell: Vec<usize> = (0..cols).map(|c| grid.cell_of(c, fcols)).collect();

    let mut sums = Matrix::zeros(n, k);
    let mut pos = vec![[0.0f64; 2]; n];
    for (r, &fr) in row_cell.iter().enumerate() {
        for (c, &fc) in col_cell.iter().enumerate() {
            let id = sp.get(r, c) as usize;
            let cell = fr * fcols + fc;
            let acc = sums.row_mut(id);
            for (ch, a) in acc.iter_mut().enumerate() {
                *a += f64::from(features.channel(ch)[cell]);
            }
            pos[id][0] += r as f64;
            pos[id][1] += c as f64;
        }
    }
    for (i, &size) in sizes.iter().enumerate() {
        let inv = 1.0 / size as f64;
        sums.row_mut(i).iter_mut().for_each(|v| *v *= inv);
        pos[i][0] *= inv;
        pos[i][1] *= inv;
    }

    Ok(SuperpixelFeatures { rows, cols, features: sums, positions: pos, sizes })
}

/// Unweighted mean of the pooled vectors (each superpixel counts once,
/// regardless of its size).
pub fn global_average(spf: &SuperpixelFeatures) -> Result<Vec<f64>> {
    let n = spf.count();
    if n == 0 {
        return Err(Error::invalid("global average over zero superpixels"));
    }
    let mut mean = vec![0.0; spf.dim()];
    for row in spf.features.iter_rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    Ok(mean)
}

/// Superpixel-pooled class activation map: elementwise maximum of per-scale
/// `superpixels x classes` score matrices.
pub fn sp_cam(per_scale: &[Matrix]) -> Result<Matrix> {
    let (first, rest) = per_scale.split_first().ok_or_else(|| Error::invalid("sp_cam needs at least one scale"))?;
    let mut out = first.clone();
    for (s, m) in rest.iter().enumerate() {
        if (m.rows(), m.cols()) != (first.rows(), first.cols()) {
            return Err(Error::shape(format!(
                "scale {} is {}x{}, scale 0 is {}x{}",
                s + 1,
                m.rows(),
                m.cols(),
                first.rows(),
                first.cols()
            )));
        }
        for r in 0..m.rows() {
            for (o, &v) in out.row_mut(r).iter_mut().zip(m.row(r)) {
                *o = o.max(v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(k: usize, r: usize, c: usize, v: &[f32]) -> Tensor {
        Tensor::new(k, r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn two_superpixel_means() {
        let f = t(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let sp = SuperpixelMap::new(2, 2, vec![0, 0, 1, 1], 2).unwrap();
        let spf = pool_superpixels(&f, &sp, &ReceptiveFieldGrid::identity()).unwrap();
        assert_eq!(spf.feature(0), &[1.5]);
        assert_eq!(spf.feature(1), &[3.5]);
        assert_eq!(spf.positions, vec![[0.0, 0.5], [1.0, 0.5]]);
        assert_eq!(spf.sizes, vec![2, 2]);
        assert_eq!(global_average(&spf).unwrap(), vec![2.5]);
    }

    #[test]
    fn constant_map_pools_to_constant() {
        let f = Tensor::filled(2, 2, 3, 0.25).unwrap();
        let sp = SuperpixelMap::new(4, 6, (0..24).map(|p| (p % 6 / 2) as u32).collect(), 3).unwrap();
        let spf = pool_superpixels(&f, &sp, &ReceptiveFieldGrid::new(2.0).unwrap()).unwrap();
        for i in 0..3 {
            assert_eq!(spf.feature(i), &[0.25, 0.25]);
        }
    }

    #[test]
    fn single_superpixel_is_global_mean() {
        let f = t(1, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let sp = SuperpixelMap::new(2, 3, vec![0; 6], 1).unwrap();
        let spf = pool_superpixels(&f, &sp, &ReceptiveFieldGrid::identity()).unwrap();
        assert_eq!(spf.feature(0), &[3.5]);
        assert_eq!(global_average(&spf).unwrap(), vec![3.5]);
    }

    #[test]
    fn one_id_per_pixel_is_identity() {
        let vals: Vec<f32> = (0..12).map(|v| v as f32 * 0.5).collect();
        let f = t(2, 2, 3, &vals);
        let sp = SuperpixelMap::new(2, 3, (0..6).collect(), 6).unwrap();
        let spf = pool_superpixels(&f, &sp, &ReceptiveFieldGrid::identity()).unwrap();
        for p in 0..6 {
            assert_eq!(spf.feature(p), &[f64::from(vals[p]), f64::from(vals[6 + p])]);
        }
    }

    #[test]
    fn nearest_cell_ties_go_low() {
        // stride 3: centres at 1.5, 4.5; pixel 1 is centred at 1.5 (cell 0),
        // pixel 2 at 2.5 (cell 0), pixel 3 at 3.5 (cell 1)
        let g = ReceptiveFieldGrid::new(3.0).unwrap();
        assert_eq!((0..5).map(|p| g.cell_of(p, 2)).collect::<Vec<_>>(), vec![0, 0, 0, 1, 1]);
        // stride 1.25: pixel 2 centred at 2.5 is equidistant from 1.875 and 3.125
        let g = ReceptiveFieldGrid::new(1.25).unwrap();
        assert_eq!(g.cell_of(2, 4), 1);
    }

    #[test]
    fn rejects_inconsistent_grid_and_bad_stride() {
        let f = t(1, 2, 2, &[1.0; 4]);
        let sp = SuperpixelMap::new(4, 4, vec![0; 16], 1).unwrap();
        assert!(pool_superpixels(&f, &sp, &ReceptiveFieldGrid::identity()).is_err());
        assert!(pool_superpixels(&f, &sp, &ReceptiveFieldGrid::new(2.0).unwrap()).is_ok());
        assert!(ReceptiveFieldGrid::new(0.5).is_err());
    }

    #[test]
    fn rejects_empty_superpixel() {
        let f = t(1, 1, 2, &[1.0, 2.0]);
        let sp = SuperpixelMap::new(1, 2, vec![0, 2], 3).unwrap();
        assert!(pool_superpixels(&f, &sp, &ReceptiveFieldGrid::identity()).is_err());
    }

    #[test]
    fn sp_cam_max() {
        let a = Matrix::new(1, 1, vec![0.2]).unwrap();
        let b = Matrix::new(1, 1, vec![0.7]).unwrap();
        assert_eq!(sp_cam(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(sp_cam(&[a.clone(), b]).unwrap().data(), &[0.7]);
        assert!(sp_cam(&[]).is_err());
        assert!(sp_cam(&[a, Matrix::zeros(2, 1)]).is_err());
    }
}
