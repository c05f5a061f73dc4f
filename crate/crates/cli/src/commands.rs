use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use spcrf::crf::{EnergyBreakdown, MeanFieldResult};
use spcrf::eval::MetricReport;
use spcrf::fixture::generate_fixture;
use spcrf::graph::{default_same_label_model, mst_topk_grouped, similarity_matrix, EdgeList, WeightKind};
use spcrf::io;
use spcrf::learn::LinearModel;
use spcrf::pipeline::{refine as refine_stage, run_pipeline, GraphMode, PipelineConfig, PipelineInputs, RefineInputs};
use spcrf::pool::{pool_superpixels, ReceptiveFieldGrid};
use spcrf::slic::{intersect_with_mask, slic_segment};
use spcrf::{validate_partition, LabelMap, SuperpixelFeatures, Tensor};

use crate::output::{CliError, Context, Outputs};
use crate::{ColorizeArgs, ConfigArgs, DemoArgs, EvalArgs, GraphArgs, PipelineArgs, PoolArgs, RefineArgs, SlicArgs};

/// Largest label count a grayscale label map can hold.
const MAX_RASTER_LABELS: usize = 65536;

fn show(path: &Path) -> String {
    path.display().to_string()
}

/// Loads the config file, if any; the flag says whether it set
/// `num_labels` explicitly.
fn load_config(args: &ConfigArgs) -> Result<(PipelineConfig, bool), CliError> {
    let Some(path) = &args.config else {
        return Ok((PipelineConfig::default(), false));
    };
    let value: Value = io::read_json(path).context(show(path))?;
    let explicit = value.get("num_labels").is_some();
    let cfg = serde_json::from_value(value).map_err(|e| CliError::precondition(format!("{}: {e}", show(path))))?;
    Ok((cfg, explicit))
}

fn resolve_config(
    args: &ConfigArgs,
    labels: Option<usize>,
    iters: Option<usize>,
    tol: Option<f64>,
    unary: &Tensor,
) -> Result<PipelineConfig, CliError> {
    let (mut cfg, explicit) = load_config(args)?;
    cfg.num_labels = match labels {
        Some(l) => l,
        None if explicit => cfg.num_labels,
        None => unary.channels(),
    };
    if let Some(i) = iters {
        cfg.inference.max_iters = i;
    }
    if let Some(t) = tol {
        cfg.inference.tol = t;
    }
    cfg.check().context("config")?;
    Ok(cfg)
}

fn read_mask(path: &Path, rows: usize, cols: usize) -> Result<Vec<bool>, CliError> {
    let m = io::read_label_map(path, MAX_RASTER_LABELS).context(show(path))?;
    if (m.rows(), m.cols()) != (rows, cols) {
        return Err(CliError::precondition(format!(
            "{}: mask is {}x{}, image is {rows}x{cols}",
            show(path),
            m.rows(),
            m.cols()
        )));
    }
    Ok(m.labels().iter().map(|&v| v != 0).collect())
}

fn optional_tensor(path: &Option<std::path::PathBuf>) -> Result<Option<Tensor>, CliError> {
    path.as_ref().map(|p| io::read_tensor(p).context(show(p))).transpose()
}

pub fn slic(a: SlicArgs) -> Result<(), CliError> {
    let (cfg, _) = load_config(&a.config)?;
    let mut params = cfg.slic;
    if let Some(k) = a.k {
        params.target_count = k;
    }
    if let Some(m) = a.compactness {
        params.compactness = m;
    }
    if let Some(i) = a.iterations {
        params.iterations = i;
    }
    let image = io::read_rgb(&a.image).context(show(&a.image))?;
    let mut sp = slic_segment(&image, &params).context("slic")?;
    if let Some(path) = &a.instance_mask {
        let mask = read_mask(path, sp.rows(), sp.cols())?;
        sp = intersect_with_mask(&sp, &mask).context("slic")?;
    }
    if let Some(issue) = validate_partition(&sp).issues.first() {
        return Err(CliError::Internal(format!("slic: superpixels are not a partition: {issue}")));
    }
    let mut out = Outputs::default();
    out.add(&a.out, io::encode_tensor(&(&sp).into()));
    out.commit()
}

pub fn pool(a: PoolArgs) -> Result<(), CliError> {
    let grid = ReceptiveFieldGrid::new(a.stride).context("pool")?;
    let features = io::read_tensor(&a.features).context(show(&a.features))?;
    let sp = io::read_superpixels(&a.superpixels).context(show(&a.superpixels))?;
    let pooled = pool_superpixels(&features, &sp, &grid).context("pool")?;
    let mut out = Outputs::default();
    out.add(&a.out, io::to_json_bytes(&pooled).context("pool")?);
    out.commit()
}

pub fn graph(a: GraphArgs) -> Result<(), CliError> {
    let pooled: SuperpixelFeatures = io::read_json(&a.pooled).context(show(&a.pooled))?;
    pooled.check().context(show(&a.pooled))?;
    let model = match &a.model {
        Some(p) => io::read_json::<LinearModel>(p).and_then(LinearModel::checked).context(show(p))?,
        None => default_same_label_model(),
    };
    let n = pooled.count();
    let groups: Vec<u32> = match &a.groups {
        Some(p) => io::read_json(p).context(show(p))?,
        None => vec![0; n],
    };
    if a.k == 0 {
        return Err(CliError::precondition("graph: k must be positive"));
    }
    let edges = if n < 2 {
        EdgeList::new(n, WeightKind::Similarity, Vec::new()).context("graph")?
    } else {
        let s = similarity_matrix(&pooled, &model).context("graph")?;
        mst_topk_grouped(&s, &groups, a.k).context("graph")?
    };
    let mut out = Outputs::default();
    out.add(&a.out, io::to_json_bytes(&edges).context("graph")?);
    out.commit()
}

#[derive(Serialize)]
struct InferenceTrace<'a> {
    superpixels: usize,
    edges: Option<usize>,
    iterations: usize,
    converged: bool,
    last_change: f64,
    initial_free_energy: f64,
    free_energy: &'a [f64],
    energy: &'a EnergyBreakdown,
}

impl<'a> InferenceTrace<'a> {
    fn new(superpixels: usize, edges: Option<&EdgeList>, r: &'a MeanFieldResult, energy: &'a EnergyBreakdown) -> Self {
        Self {
            superpixels,
            edges: edges.map(EdgeList::len),
            iterations: r.iterations,
            converged: r.converged,
            last_change: r.last_change,
            initial_free_energy: r.initial_free_energy,
            free_energy: &r.free_energy,
            energy,
        }
    }
}

pub fn refine(a: RefineArgs) -> Result<(), CliError> {
    let unary = io::read_tensor(&a.unary).context(show(&a.unary))?;
    let mut cfg = resolve_config(&a.config, a.labels, a.iters, a.tol, &unary)?;
    if a.dense {
        cfg.graph = GraphMode::Dense;
    }
    let sp = io::read_superpixels(&a.superpixels).context(show(&a.superpixels))?;
    let features = optional_tensor(&a.features)?;
    let features2 = optional_tensor(&a.features2)?;
    let image = a.image.as_ref().map(|p| io::read_rgb(p).context(show(p))).transpose()?;
    let edges = match &a.edges {
        Some(p) => {
            let e: EdgeList = io::read_json(p).context(show(p))?;
            e.check().context(show(p))?;
            Some(e)
        }
        None => None,
    };
    let inputs = RefineInputs {
        unary: &unary,
        superpixels: &sp,
        features: features.as_ref(),
        features2: features2.as_ref(),
        image: image.as_ref(),
        edges: edges.as_ref(),
        groups: None,
    };
    let r = refine_stage(&inputs, &cfg).context("refine")?;

    let mut out = Outputs::default();
    out.add(&a.out, io::label_map_bytes(&a.out, &r.labels).context("refine")?);
    if let Some(path) = &a.trace {
        let trace = InferenceTrace::new(sp.count(), r.edges.as_ref(), &r.inference, &r.energy);
        out.add(path, io::to_json_bytes(&trace).context("refine")?);
    }
    out.commit()
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    if a.labels == 0 || a.labels > MAX_RASTER_LABELS {
        return Err(CliError::precondition(format!("eval: label count must be in 1..={MAX_RASTER_LABELS}")));
    }
    let pred = io::read_label_map(&a.pred, a.labels).context(show(&a.pred))?;
    let gt = io::read_label_map(&a.gt, a.labels).context(show(&a.gt))?;
    let mut report = MetricReport::compute(&pred, &gt, a.labels).context("eval")?;
    if let (Some(pi), Some(gi)) = (&a.pred_instances, &a.gt_instances) {
        let pred_set = io::read_instances(pi).context(show(pi))?;
        let gt_set = io::read_instances(gi).context(show(gi))?;
        let thresholds = a.thresholds.unwrap_or_else(|| PipelineConfig::default().iou_thresholds);
        report = report.with_ap_r(&pred_set, &gt_set, &thresholds).context("eval")?;
    }
    let bytes = io::to_json_bytes(&report).context("eval")?;
    match &a.out {
        Some(path) => {
            let mut out = Outputs::default();
            out.add(path, bytes);
            out.commit()
        }
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

pub fn colorize(a: ColorizeArgs) -> Result<(), CliError> {
    let palette: Vec<[u8; 3]> = match &a.palette {
        Some(p) => io::read_json(p).context(show(p))?,
        None => io::default_palette(256),
    };
    let labels = io::read_label_map(&a.input, MAX_RASTER_LABELS).context(show(&a.input))?;
    let img = io::colorize(&labels, &palette).context("colorize")?;
    let mut out = Outputs::default();
    out.add(&a.out, io::rgb_bytes(&a.out, &img).context("colorize")?);
    out.commit()
}

pub fn demo(a: DemoArgs) -> Result<(), CliError> {
    if a.labels > 256 {
        return Err(CliError::precondition("demo: at most 256 labels"));
    }
    let f = generate_fixture(a.seed, a.size, a.labels, a.noise).context("demo")?;
    let dir = &a.out_dir;
    let mut out = Outputs::default();
    out.add(dir.join("image.ppm"), io::rgb_bytes(dir.join("image.ppm"), &f.image).context("demo")?);
    out.add(dir.join("gt.pgm"), io::label_map_bytes(dir.join("gt.pgm"), &f.ground_truth).context("demo")?);
    out.add(dir.join("unary.spt"), io::encode_tensor(&(&f.unary).into()));
    out.commit()
}

#[derive(Serialize)]
struct PipelineReport<'a> {
    #[serde(flatten)]
    inference: InferenceTrace<'a>,
    metrics: Option<&'a spcrf::pipeline::PipelineMetrics>,
}

pub fn pipeline(a: PipelineArgs) -> Result<(), CliError> {
    let image = io::read_rgb(&a.image).context(show(&a.image))?;
    let unary = io::read_tensor(&a.unary).context(show(&a.unary))?;
    let cfg = resolve_config(&a.config, a.labels, a.iters, a.tol, &unary)?;
    let features = optional_tensor(&a.features)?;
    let features2 = optional_tensor(&a.features2)?;
    let (rows, cols) = (image.height() as usize, image.width() as usize);
    let gt = match &a.gt {
        Some(p) => Some(io::read_label_map(p, cfg.num_labels).context(show(p))?),
        None => None,
    };
    let mask = a.instance_mask.as_ref().map(|p| read_mask(p, rows, cols)).transpose()?;

    let inputs = PipelineInputs {
        image: &image,
        unary: &unary,
        features: features.as_ref(),
        features2: features2.as_ref(),
        ground_truth: gt.as_ref(),
        instance_mask: mask.as_deref(),
    };
    let result = run_pipeline(&inputs, &cfg)?;
    let refined = &result.refined;

    let palette = io::default_palette(cfg.num_labels.min(256));
    let dir = &a.out_dir;
    let label_file = |name: &str, labels: &LabelMap| io::label_map_bytes(dir.join(name), labels).context("output");
    let mut out = Outputs::default();
    out.add(dir.join("superpixels.spt"), io::encode_tensor(&(&result.superpixels).into()));
    out.add(dir.join("baseline.pgm"), label_file("baseline.pgm", &result.baseline)?);
    out.add(dir.join("labels.pgm"), label_file("labels.pgm", &refined.labels)?);
    if cfg.num_labels <= palette.len() {
        let img = io::colorize(&refined.labels, &palette).context("output")?;
        out.add(dir.join("labels.ppm"), io::rgb_bytes(dir.join("labels.ppm"), &img).context("output")?);
    }
    let report = PipelineReport {
        inference: InferenceTrace::new(
            result.superpixels.count(),
            refined.edges.as_ref(),
            &refined.inference,
            &refined.energy,
        ),
        metrics: result.metrics.as_ref(),
    };
    out.add(dir.join("report.json"), io::to_json_bytes(&report).context("output")?);
    out.commit()
}
