//! Numeric containers shared by every stage of the refinement pipeline.
//!
//! Stored tensors hold `f32`; everything computed from them is carried in
//! `f64` and only narrowed again when written out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rank-3 real array laid out channel-major, then row, then column.
///
/// Rank-2 data is represented with a single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(channels: usize, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let expected = channels
            .checked_mul(rows)
            .and_then(|n| n.checked_mul(cols))
            .ok_or_else(|| Error::invalid("tensor dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "tensor {channels}x{rows}x{cols} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite tensor value at flat index {pos}")));
        }
        Ok(Self { channels, rows, cols, data })
    }

    /// Narrows `f64` values to storage precision.
    pub fn from_f64(channels: usize, rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(channels, rows, cols, data.iter().map(|&v| v as f32).collect())
    }

    pub fn filled(channels: usize, rows: usize, cols: usize, value: f32) -> Result<Self> {
        Self::new(channels, rows, cols, vec![value; channels * rows * cols])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(channels, rows, cols)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.rows + row) * self.cols + col]
    }

    /// The plane of one channel, row-major.
    pub fn channel(&self, channel: usize) -> &[f32] {
        let plane = self.rows * self.cols;
        &self.data[channel * plane..(channel + 1) * plane]
    }
}

/// Dense row-major `f64` matrix used for per-superpixel tables
/// (unaries, beliefs, class scores, similarities).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = Error;

    fn try_from(m: MatrixRepr) -> Result<Self> {
        Matrix::new(m.rows, m.cols, m.data)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!("matrix {rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged matrix rows"));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

/// Pooled per-superpixel descriptors: one feature vector, centroid and pixel
/// count per superpixel, plus the image shape they were pooled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpixelFeatures {
    /// Image rows.
    pub rows: usize,
    /// Image columns.
    pub cols: usize,
    /// `count x dim` pooled features.
    pub features: Matrix,
    /// Centroids as `[row, col]` in pixel units.
    pub positions: Vec<[f64; 2]>,
    pub sizes: Vec<usize>,
}

impl SuperpixelFeatures {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Consistency of the per-superpixel tables, for deserialized values.
    pub fn check(&self) -> Result<()> {
        let n = self.features.rows();
        if self.positions.len() != n || self.sizes.len() != n {
            return Err(Error::shape(format!(
                "{n} feature rows, {} positions, {} sizes",
                self.positions.len(),
                self.sizes.len()
            )));
        }
        if self.sizes.contains(&0) {
            return Err(Error::invalid("superpixel with zero pixels"));
        }
        if self.sizes.iter().sum::<usize>() != self.rows * self.cols {
            return Err(Error::invalid("superpixel sizes do not cover the image"));
        }
        let finite = self.features.data().iter().chain(self.positions.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("non-finite pooled value"));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        ((self.rows * self.rows + self.cols * self.cols) as f64).sqrt()
    }
}

/// Per-pixel labeling with a declared label count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    rows: usize,
    cols: usize,
    num_labels: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(rows: usize, cols: usize, num_labels: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::shape(format!(
                "label map {rows}x{cols} needs {} labels, got {}",
                rows * cols,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_labels) {
            return Err(Error::OutOfRange(format!("label {bad} >= label count {num_labels}")));
        }
        Ok(Self { rows, cols, num_labels, labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.cols + col]
    }

    /// Same labels under a larger declared label count.
    pub fn with_num_labels(mut self, num_labels: usize) -> Result<Self> {
        if num_labels < self.num_labels && self.labels.iter().any(|&l| l as usize >= num_labels) {
            return Err(Error::OutOfRange(format!("label map uses labels >= {num_labels}")));
        }
        self.num_labels = num_labels;
        Ok(self)
    }
}

/// One detected or annotated object region.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Row-major binary mask over the image.
    pub mask: Vec<bool>,
    pub class: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    rows: usize,
    cols: usize,
    instances: Vec<Instance>,
}

impl InstanceSet {
    pub fn new(rows: usize, cols: usize, instances: Vec<Instance>) -> Result<Self> {
        for (idx, inst) in instances.iter().enumerate() {
            if inst.mask.len() != rows * cols {
                return Err(Error::shape(format!(
                    "instance {idx} mask has {} pixels, image has {}",
                    inst.mask.len(),
                    rows * cols
                )));
            }
            if !inst.mask.iter().any(|&b| b) {
                return Err(Error::invalid(format!("instance {idx} has an empty mask")));
            }
            if !(0.0..=1.0).contains(&inst.score) {
                return Err(Error::invalid(format!("instance {idx} score {} outside [0, 1]", inst.score)));
            }
        }
        Ok(Self { rows, cols, instances })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}
