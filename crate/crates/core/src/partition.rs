//! Superpixel maps and the checks that make them a valid pooling layout.
//!
//! A valid map is a total partition of the image into `count` non-empty,
//! 4-connected regions with ids `0..count`.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    rows: usize,
    cols: usize,
    ids: Vec<u32>,
    count: usize,
}

impl SuperpixelMap {
    /// Wraps raw ids. Only the length is checked here; use
    /// [`validate_partition`] or [`SuperpixelMap::validated`] for the rest.
    pub fn new(rows: usize, cols: usize, ids: Vec<u32>, count: usize) -> Result<Self> {
        if ids.len() != rows * cols {
            return Err(Error::shape(format!(
                "superpixel map {rows}x{cols} needs {} ids, got {}",
                rows * cols,
                ids.len()
            )));
        }
        Ok(Self { rows, cols, ids, count })
    }

    /// Like [`SuperpixelMap::new`] but rejects maps that are not valid partitions.
    pub fn validated(rows: usize, cols: usize, ids: Vec<u32>, count: usize) -> Result<Self> {
        let sp = Self::new(rows, cols, ids, count)?;
        let report = validate_partition(&sp);
        match report.issues.first() {
            None => Ok(sp),
            Some(issue) => Err(Error::invalid(format!("invalid superpixel map: {issue}"))),
        }
    }

    /// Declares the count as `max id + 1`.
    pub fn from_ids(rows: usize, cols: usize, ids: Vec<u32>) -> Result<Self> {
        let count = ids.iter().max().map_or(0, |&m| m as usize + 1);
        Self::new(rows, cols, ids, count)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.cols + col]
    }

    /// Pixel count per id. Ids outside `0..count` are ignored.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count];
        for &id in &self.ids {
            if let Some(s) = sizes.get_mut(id as usize) {
                *s += 1;
            }
        }
        sizes
    }

    /// Renumbers ids to `0..n` in order of first appearance (raster order).
    /// Regions are not split; see [`split_components`] for that.
    pub fn relabel(&self) -> SuperpixelMap {
        let (ids, count) = relabel_first_appearance(&self.ids);
        SuperpixelMap { rows: self.rows, cols: self.cols, ids, count }
    }

    /// Inclusive bounding box `(row_min, row_max, col_min, col_max)` per id.
    pub fn bounding_boxes(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut boxes = vec![(usize::MAX, 0, usize::MAX, 0); self.count];
        for (idx, &id) in self.ids.iter().enumerate() {
            if let Some(b) = boxes.get_mut(id as usize) {
                let (r, c) = (idx / self.cols, idx % self.cols);
                b.0 = b.0.min(r);
                b.1 = b.1.max(r);
                b.2 = b.2.min(c);
                b.3 = b.3.max(c);
            }
        }
        boxes
    }
}

pub(crate) fn relabel_first_appearance(ids: &[u32]) -> (Vec<u32>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = ids
        .iter()
        .map(|&id| {
            let next = map.len() as u32;
            *map.entry(id).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Splits every id into its 4-connected components and numbers the
/// components `0..n` in raster order of their first pixel.
pub fn split_components(rows: usize, cols: usize, ids: &[u32]) -> (Vec<u32>, usize) {
    let mut comp = vec![u32::MAX; ids.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..ids.len() {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = ids[start];
        comp[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbors4(rows, cols, p) {
                if comp[q] == u32::MAX && ids[q] == id {
                    comp[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    (comp, next as usize)
}

/// 4-neighbors of a flat pixel index, in up, left, right, down order.
#[inline]
pub(crate) fn neighbors4(rows: usize, cols: usize, p: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (p / cols, p % cols);
    [(r > 0).then(|| p - cols), (c > 0).then(|| p - 1), (c + 1 < cols).then(|| p + 1), (r + 1 < rows).then(|| p + cols)]
        .into_iter()
        .flatten()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionIssue {
    /// A pixel carries an id `>= count`.
    IdOutOfRange { pixel: usize, id: u32 },
    /// An id in `0..count` owns no pixel.
    EmptyId(u32),
    /// An id is split into more than one 4-connected component.
    Disconnected { id: u32, components: usize },
}

impl fmt::Display for PartitionIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionIssue::IdOutOfRange { pixel, id } => {
                write!(f, "id {id} out of range at pixel {pixel}")
            }
            PartitionIssue::EmptyId(id) => write!(f, "id {id} empty"),
            PartitionIssue::Disconnected { id, components } => {
                write!(f, "id {id} disconnected ({components} components)")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionReport {
    pub valid: bool,
    /// Violations in order: the first out-of-range pixel, then empty ids,
    /// then disconnected ids, each group ascending.
    pub issues: Vec<PartitionIssue>,
}

/// Checks totality, contiguity and 4-connectivity. Never fails; problems are
/// reported as diagnostics.
pub fn validate_partition(sp: &SuperpixelMap) -> PartitionReport {
    let mut issues = Vec::new();
    let mut sizes = vec![0usize; sp.count];
    for (pixel, &id) in sp.ids.iter().enumerate() {
        match sizes.get_mut(id as usize) {
            Some(s) => *s += 1,
            None => issues.push(PartitionIssue::IdOutOfRange { pixel, id }),
        }
    }
    // first offending pixel only
    issues.truncate(1);
    for (id, &s) in sizes.iter().enumerate() {
        if s == 0 {
            issues.push(PartitionIssue::EmptyId(id as u32));
        }
    }

    let (comp, ncomp) = split_components(sp.rows, sp.cols, &sp.ids);
    let mut comp_owner = vec![u32::MAX; ncomp];
    let mut per_id = std::collections::BTreeMap::<u32, usize>::new();
    for (p, &c) in comp.iter().enumerate() {
        if comp_owner[c as usize] == u32::MAX {
            comp_owner[c as usize] = sp.ids[p];
            *per_id.entry(sp.ids[p]).or_default() += 1;
        }
    }
    for (id, components) in per_id {
        if components > 1 && (id as usize) < sp.count {
            issues.push(PartitionIssue::Disconnected { id, components });
        }
    }

    PartitionReport { valid: issues.is_empty(), issues }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: usize, cols: usize, ids: &[u32], count: usize) -> SuperpixelMap {
        SuperpixelMap::new(rows, cols, ids.to_vec(), count).unwrap()
    }

    #[test]
    fn two_by_two_halves_is_valid() {
        let r = validate_partition(&map(2, 2, &[0, 0, 1, 1], 2));
        assert!(r.valid);
        assert!(r.issues.is_empty());
    }

    #[test]
    fn gap_in_ids_is_reported() {
        let r = validate_partition(&map(2, 2, &[0, 0, 2, 2], 3));
        assert!(!r.valid);
        assert_eq!(r.issues, vec![PartitionIssue::EmptyId(1)]);
        assert_eq!(r.issues[0].to_string(), "id 1 empty");
    }

    #[test]
    fn diagonal_corners_are_disconnected() {
        #[rustfmt::skip]
        let ids = [
            0, 1, 1,
            1, 1, 1,
            1, 1, 0,
        ];
        let r = validate_partition(&map(3, 3, &ids, 2));
        assert!(!r.valid);
        assert_eq!(r.issues, vec![PartitionIssue::Disconnected { id: 0, components: 2 }]);
        assert!(r.issues[0].to_string().starts_with("id 0 disconnected"));
    }

    #[test]
    fn out_of_range_id() {
        let r = validate_partition(&map(1, 2, &[0, 4], 2));
        assert!(!r.valid);
        assert!(matches!(r.issues[0], PartitionIssue::IdOutOfRange { pixel: 1, id: 4 }));
    }

    #[test]
    fn relabel_is_first_appearance() {
        let sp = map(1, 4, &[9, 5, 5, 0], 10).relabel();
        assert_eq!(sp.ids(), &[0, 1, 1, 2]);
        assert_eq!(sp.count(), 3);
    }

    #[test]
    fn split_components_separates_same_id() {
        let (comp, n) = split_components(1, 3, &[0, 1, 0]);
        assert_eq!(n, 3);
        assert_eq!(comp, vec![0, 1, 2]);
    }
}
