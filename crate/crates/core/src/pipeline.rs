//! End-to-end refinement: superpixels, pooling, graph, CRF, evaluation.
//!
//! Each stage is also exposed on its own so the command-line tool can run
//! them in isolation. Failures are wrapped in [`StageError`] naming the stage.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::crf::{
    broadcast_labels, map_labels, mean_field_infer, total_energy, Connectivity, CrfModel, EnergyBreakdown,
    MeanFieldOptions, MeanFieldResult, PairwiseParams, TermSpec, UnaryParams,
};
use crate::error::{Error, Result};
use crate::eval::{MetricReport, DEFAULT_IOU_THRESHOLDS};
use crate::graph::{default_same_label_model, mst_topk_grouped, similarity_matrix, EdgeList, WeightKind};
use crate::partition::{validate_partition, SuperpixelMap};
use crate::pool::{pool_superpixels, ReceptiveFieldGrid};
use crate::slic::{intersect_with_mask, rgb_to_lab, slic_segment, SlicParams};
use crate::types::{LabelMap, SuperpixelFeatures, Tensor};

/// Largest tolerated deviation of a pixel's unary sum from 1.
pub const UNARY_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    /// True when the failure is a broken internal guarantee rather than bad
    /// input.
    pub fn is_internal(&self) -> bool {
        matches!(self.source, Error::Internal(_))
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// One pairwise term with spatial bandwidths relative to the image diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermConfig {
    pub w1: f64,
    pub w2: f64,
    /// `σ_α` as a fraction of the image diagonal.
    pub sigma_alpha: f64,
    /// `σ_β` in z-scored feature units.
    pub sigma_beta: f64,
    /// `σ_γ` as a fraction of the image diagonal.
    pub sigma_gamma: f64,
}

impl Default for TermConfig {
    fn default() -> Self {
        Self { w1: 1.0, w2: 1.0, sigma_alpha: 0.2, sigma_beta: 1.0, sigma_gamma: 0.05 }
    }
}

impl TermConfig {
    pub fn params(&self, diagonal: f64) -> PairwiseParams {
        PairwiseParams {
            w1: self.w1,
            w2: self.w2,
            sigma_alpha: self.sigma_alpha * diagonal,
            sigma_beta: self.sigma_beta,
            sigma_gamma: self.sigma_gamma * diagonal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GraphMode {
    /// Top-`k` edges of the similarity spanning tree.
    Sparse { k: usize },
    /// Every superpixel pair.
    Dense,
}

impl Default for GraphMode {
    fn default() -> Self {
        GraphMode::Sparse { k: crate::graph::DEFAULT_TOP_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub num_labels: usize,
    pub slic: SlicParams,
    /// Stride of the unary and feature tensors relative to the image.
    pub stride: f64,
    pub unary: UnaryParams,
    /// Term 1 compares pooled unary probabilities (or `--features`); term 2
    /// compares pooled colours (or `--features2`).
    pub terms: [TermConfig; 2],
    pub graph: GraphMode,
    pub inference: MeanFieldOptions,
    pub iou_thresholds: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            num_labels: 7,
            slic: SlicParams::default(),
            stride: 1.0,
            unary: UnaryParams::default(),
            terms: [TermConfig::default(); 2],
            graph: GraphMode::default(),
            inference: MeanFieldOptions::default(),
            iou_thresholds: DEFAULT_IOU_THRESHOLDS.to_vec(),
        }
    }
}

impl PipelineConfig {
    pub fn check(&self) -> Result<()> {
        if self.num_labels == 0 {
            return Err(Error::invalid("num_labels must be positive"));
        }
        if self.slic.target_count == 0
            || self.slic.compactness.is_nan()
            || self.slic.compactness <= 0.0
            || self.slic.iterations == 0
        {
            return Err(Error::invalid("slic needs target_count > 0, compactness > 0, iterations > 0"));
        }
        ReceptiveFieldGrid::new(self.stride)?;
        self.unary.check()?;
        for t in &self.terms {
            t.params(1.0).check()?;
        }
        if let GraphMode::Sparse { k: 0 } = self.graph {
            return Err(Error::invalid("sparse graph needs k >= 1"));
        }
        if self.inference.tol.is_nan() || self.inference.tol <= 0.0 {
            return Err(Error::invalid("inference tol must be positive"));
        }
        if let Some(t) = self.iou_thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::invalid(format!("IoU threshold {t} outside (0, 1)")));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<ReceptiveFieldGrid> {
        ReceptiveFieldGrid::new(self.stride)
    }
}

/// Checks a unary tensor against the label count and renormalizes each
/// pixel; sums off by more than [`UNARY_SUM_TOLERANCE`] are rejected.
pub fn normalize_unary(unary: &Tensor, num_labels: usize) -> Result<Tensor> {
    let (l, rows, cols) = unary.shape();
    if l != num_labels {
        return Err(Error::shape(format!("unary has {l} channels, expected {num_labels} labels")));
    }
    let plane = rows * cols;
    let data = unary.data();
    if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("unary probability {v} outside [0, 1]")));
    }
    let mut out = vec![0.0f32; data.len()];
    for p in 0..plane {
        let sum: f64 = (0..l).map(|c| f64::from(data[c * plane + p])).sum();
        if (sum - 1.0).abs() > UNARY_SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "unary at pixel ({}, {}) sums to {sum}",
                p / cols.max(1),
                p % cols.max(1)
            )));
        }
        for c in 0..l {
            out[c * plane + p] = (f64::from(data[c * plane + p]) / sum) as f32;
        }
    }
    Tensor::new(l, rows, cols, out)
}

/// Per-pixel argmax of the unary (ties to the lowest label), read through
/// the stride grid.
pub fn unary_argmax(unary: &Tensor, rows: usize, cols: usize, grid: &ReceptiveFieldGrid) -> Result<LabelMap> {
    let (l, frows, fcols) = unary.shape();
    if (frows, fcols) != grid.cells_for(rows, cols) {
        return Err(Error::shape(format!("unary is {frows}x{fcols}, image {rows}x{cols} at stride {}", grid.stride())));
    }
    let mut labels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let fr = grid.cell_of(r, frows);
        for c in 0..cols {
            let cell = fr * fcols + grid.cell_of(c, fcols);
            let mut best = 0;
            for k in 1..l {
                if unary.channel(k)[cell] > unary.channel(best)[cell] {
                    best = k;
                }
            }
            labels.push(best as u32);
        }
    }
    LabelMap::new(rows, cols, l, labels)
}

/// Image colours in CIELAB as a `3 x M x N` tensor.
pub fn lab_tensor(image: &RgbImage) -> Result<Tensor> {
    let (rows, cols) = (image.height() as usize, image.width() as usize);
    let plane = rows * cols;
    let mut data = vec![0.0f64; 3 * plane];
    for (p, px) in image.pixels().enumerate() {
        for (c, v) in rgb_to_lab(px.0).into_iter().enumerate() {
            data[c * plane + p] = v;
        }
    }
    Tensor::from_f64(3, rows, cols, &data)
}

/// Same-label similarities from the default pair classifier, reduced to the
/// top-`k` spanning-tree edges inside each group.
pub fn build_graph(pooled: &SuperpixelFeatures, groups: Option<&[u32]>, k: usize) -> Result<EdgeList> {
    let n = pooled.count();
    let zeros;
    let groups = match groups {
        Some(g) => g,
        None => {
            zeros = vec![0u32; n];
            &zeros
        }
    };
    if n < 2 {
        return EdgeList::new(n, WeightKind::Similarity, Vec::new());
    }
    let s = similarity_matrix(pooled, &default_same_label_model())?;
    mst_topk_grouped(&s, groups, k)
}

/// Inputs of the refinement stage. Feature tensors share the unary's stride.
#[derive(Debug, Clone, Copy)]
pub struct RefineInputs<'a> {
    pub unary: &'a Tensor,
    pub superpixels: &'a SuperpixelMap,
    pub features: Option<&'a Tensor>,
    pub features2: Option<&'a Tensor>,
    /// Source of term-2 colours when `features2` is absent.
    pub image: Option<&'a RgbImage>,
    /// Explicit sparse edges; overrides the configured graph mode.
    pub edges: Option<&'a EdgeList>,
    /// Superpixel groups whose graphs are built separately.
    pub groups: Option<&'a [u32]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    /// Pooled unary probabilities.
    pub pooled: SuperpixelFeatures,
    /// Sparse edges used, `None` for a dense model.
    pub edges: Option<EdgeList>,
    pub superpixel_labels: Vec<u32>,
    pub labels: LabelMap,
    pub inference: MeanFieldResult,
    pub energy: EnergyBreakdown,
}

pub fn refine(inputs: &RefineInputs<'_>, cfg: &PipelineConfig) -> Result<RefineOutput> {
    cfg.check()?;
    let grid = cfg.grid()?;
    let sp = inputs.superpixels;
    let unary = normalize_unary(inputs.unary, cfg.num_labels)?;
    let pooled = pool_superpixels(&unary, sp, &grid)?;
    let diagonal = pooled.diagonal();

    let term1 = match inputs.features {
        Some(f) => pool_superpixels(f, sp, &grid)?.features,
        None => pooled.features.clone(),
    };
    let term2 = match (inputs.features2, inputs.image) {
        (Some(f), _) => pool_superpixels(f, sp, &grid)?.features,
        (None, Some(img)) => {
            if (img.height() as usize, img.width() as usize) != (sp.rows(), sp.cols()) {
                return Err(Error::shape(format!(
                    "image is {}x{}, superpixel map {}x{}",
                    img.height(),
                    img.width(),
                    sp.rows(),
                    sp.cols()
                )));
            }
            pool_superpixels(&lab_tensor(img)?, sp, &ReceptiveFieldGrid::identity())?.features
        }
        (None, None) => pooled.features.clone(),
    };

    let edges = match (inputs.edges, cfg.graph) {
        (Some(e), _) => Some(e.clone()),
        (None, GraphMode::Sparse { k }) => {
            let graph_features = SuperpixelFeatures { features: term1.clone(), ..pooled.clone() };
            Some(build_graph(&graph_features, inputs.groups, k)?)
        }
        (None, GraphMode::Dense) => None,
    };
    let connectivity = match &edges {
        Some(e) => Connectivity::Sparse(e.clone()),
        None => Connectivity::Dense,
    };

    let psi = crate::crf::unary_energy(&pooled.features, &pooled.sizes, &cfg.unary)?;
    let specs = [
        TermSpec { features: &term1, params: cfg.terms[0].params(diagonal) },
        TermSpec { features: &term2, params: cfg.terms[1].params(diagonal) },
    ];
    let model = CrfModel::build(psi, &pooled.positions, &specs, &connectivity)?;
    let inference = mean_field_infer(&model, &cfg.inference);
    let superpixel_labels = map_labels(&inference.beliefs);
    let energy = total_energy(&model, &superpixel_labels)?;
    let labels = broadcast_labels(&superpixel_labels, sp, cfg.num_labels)?;
    Ok(RefineOutput { pooled, edges, superpixel_labels, labels, inference, energy })
}

/// Baseline and refined scores against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub baseline: MetricReport,
    pub refined: MetricReport,
    /// Refined minus baseline mean IoU.
    pub miou_gain: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineInputs<'a> {
    pub image: &'a RgbImage,
    pub unary: &'a Tensor,
    pub features: Option<&'a Tensor>,
    pub features2: Option<&'a Tensor>,
    pub ground_truth: Option<&'a LabelMap>,
    /// Object mask; superpixels are split along it and each side gets its
    /// own graph.
    pub instance_mask: Option<&'a [bool]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub superpixels: SuperpixelMap,
    pub baseline: LabelMap,
    pub refined: RefineOutput,
    pub metrics: Option<PipelineMetrics>,
}

pub fn run_pipeline(inputs: &PipelineInputs<'_>, cfg: &PipelineConfig) -> Result<PipelineOutput, StageError> {
    cfg.check().stage("config")?;
    let (rows, cols) = (inputs.image.height() as usize, inputs.image.width() as usize);

    let mut sp = slic_segment(inputs.image, &cfg.slic).stage("slic")?;
    let mut groups = None;
    if let Some(mask) = inputs.instance_mask {
        sp = intersect_with_mask(&sp, mask).stage("slic")?;
        let mut g = vec![0u32; sp.count()];
        for (&id, &m) in sp.ids().iter().zip(mask) {
            g[id as usize] = u32::from(m);
        }
        groups = Some(g);
    }
    let report = validate_partition(&sp);
    if let Some(issue) = report.issues.first() {
        return Err(Error::Internal(format!("superpixels are not a partition: {issue}"))).stage("slic");
    }

    let grid = cfg.grid().stage("pool")?;
    let baseline = unary_argmax(inputs.unary, rows, cols, &grid).stage("refine")?;
    let refine_inputs = RefineInputs {
        unary: inputs.unary,
        superpixels: &sp,
        features: inputs.features,
        features2: inputs.features2,
        image: Some(inputs.image),
        edges: None,
        groups: groups.as_deref(),
    };
    let refined = refine(&refine_inputs, cfg).stage("refine")?;

    let metrics = match inputs.ground_truth {
        None => None,
        Some(gt) => {
            let baseline_report = MetricReport::compute(&baseline, gt, cfg.num_labels).stage("eval")?;
            let refined_report = MetricReport::compute(&refined.labels, gt, cfg.num_labels).stage("eval")?;
            Some(PipelineMetrics {
                miou_gain: refined_report.mean_iou - baseline_report.mean_iou,
                baseline: baseline_report,
                refined: refined_report,
            })
        }
    };
    Ok(PipelineOutput { superpixels: sp, baseline, refined, metrics })
}
