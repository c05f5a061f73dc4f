//! Potts CRF over superpixel variables.
//!
//! The energy of an assignment `v` is
//!
//! ```text
//! E(v) = Σ_i ψ_i(v_i) + Σ_t Σ_{(i,j) ∈ edges_t} [v_i ≠ v_j] k_t(i, j)
//! ```
//!
//! where `ψ_i(l) = n_i · (−α_u ln(z_i(l) + ε))` is the per-pixel unary summed
//! over the `n_i` pixels of superpixel `i`, and each pairwise term `t` carries
//! a precomputed kernel value per edge:
//!
//! ```text
//! k(i, j) = w1 exp(−‖p_i − p_j‖² / 2σ_α² − ‖f_i − f_j‖² / 2σ_β²)
//!         + w2 exp(−‖p_i − p_j‖² / 2σ_γ²)
//! ```
//!
//! Inference is sequential (coordinate-wise) mean field. Each variable update
//! is the exact minimizer of the mean-field free energy in that variable's
//! beliefs, so the free energy never increases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeList;
use crate::partition::SuperpixelMap;
use crate::types::{LabelMap, Matrix};

/// Upper bound on `L^N` for [`brute_force_map`].
pub const BRUTE_FORCE_LIMIT: u64 = 1 << 20;

/// Parameters of one two-kernel pairwise term, in absolute units (pixels for
/// positions, normalized feature units for appearance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseParams {
    pub w1: f64,
    pub w2: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub sigma_gamma: f64,
}

impl PairwiseParams {
    /// Default weights with spatial scales tied to the image diagonal.
    pub fn for_diagonal(diagonal: f64) -> Self {
        Self { w1: 1.0, w2: 1.0, sigma_alpha: 0.2 * diagonal, sigma_beta: 1.0, sigma_gamma: 0.05 * diagonal }
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.w1 >= 0.0
            && self.w2 >= 0.0
            && self.w1.is_finite()
            && self.w2.is_finite()
            && [self.sigma_alpha, self.sigma_beta, self.sigma_gamma].iter().all(|s| *s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("pairwise params need w >= 0 and sigma > 0: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnaryParams {
    pub alpha_u: f64,
    pub epsilon: f64,
}

impl Default for UnaryParams {
    fn default() -> Self {
        Self { alpha_u: 1.0, epsilon: 1e-8 }
    }
}

impl UnaryParams {
    pub fn check(&self) -> Result<()> {
        if self.alpha_u > 0.0 && self.epsilon > 0.0 && self.alpha_u.is_finite() && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("unary params need alpha_u > 0 and epsilon > 0: {self:?}")))
        }
    }
}

/// Unary energies from superpixel-mean label probabilities (`N x L`) and
/// superpixel pixel counts.
pub fn unary_energy(probs: &Matrix, sizes: &[usize], params: &UnaryParams) -> Result<Matrix> {
    params.check()?;
    if sizes.len() != probs.rows() {
        return Err(Error::shape(format!("{} sizes for {} superpixels", sizes.len(), probs.rows())));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for (i, &n) in sizes.iter().enumerate() {
        for (l, &z) in probs.row(i).iter().enumerate() {
            if !(0.0..=1.0).contains(&z) {
                return Err(Error::invalid(format!("probability {z} at ({i}, {l}) outside [0, 1]")));
            }
            out.set(i, l, n as f64 * (-params.alpha_u * (z + params.epsilon).ln()));
        }
    }
    Ok(out)
}

/// Two-kernel Gaussian pairwise weight between superpixels at positions
/// `p_i`, `p_j` with features `z_i`, `z_j`.
pub fn pairwise_kernel(p_i: [f64; 2], p_j: [f64; 2], z_i: &[f64], z_j: &[f64], params: &PairwiseParams) -> f64 {
    let dp = (p_i[0] - p_j[0]).powi(2) + (p_i[1] - p_j[1]).powi(2);
    let dz: f64 = z_i.iter().zip(z_j).map(|(a, b)| (a - b) * (a - b)).sum();
    let appearance =
        params.w1 * (-dp / (2.0 * params.sigma_alpha.powi(2)) - dz / (2.0 * params.sigma_beta.powi(2))).exp();
    let smoothness = params.w2 * (-dp / (2.0 * params.sigma_gamma.powi(2))).exp();
    appearance + smoothness
}

/// Per-dimension z-score normalization of a `N x D` feature table. Constant
/// dimensions map to zero.
pub fn zscore(features: &Matrix) -> Matrix {
    let (n, d) = (features.rows(), features.cols());
    let mut out = features.clone();
    if n == 0 {
        return out;
    }
    for c in 0..d {
        let mean = (0..n).map(|r| features.get(r, c)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (features.get(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 { 1.0 / sd } else { 0.0 };
        for r in 0..n {
            out.set(r, c, (features.get(r, c) - mean) * scale);
        }
    }
    out
}

/// Kernel values of one pairwise term on its edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTerm {
    /// `(i, j, k_ij)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
}

/// Which superpixel pairs carry pairwise potentials.
#[derive(Debug, Clone, PartialEq)]
pub enum Connectivity {
    Sparse(EdgeList),
    Dense,
}

/// Inputs for one pairwise term when building a model from superpixels.
#[derive(Debug, Clone, Copy)]
pub struct TermSpec<'a> {
    /// `N x D` raw features; z-scored per dimension before use.
    pub features: &'a Matrix,
    pub params: PairwiseParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    labels: usize,
    unary: Matrix,
    terms: Vec<PairwiseTerm>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl CrfModel {
    /// Assembles a model from a unary table and precomputed pairwise terms.
    pub fn new(unary: Matrix, terms: Vec<PairwiseTerm>) -> Result<Self> {
        let (n, labels) = (unary.rows(), unary.cols());
        if labels == 0 {
            return Err(Error::invalid("CRF needs at least one label"));
        }
        if unary.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite unary energy"));
        }
        let mut neighbors = vec![Vec::new(); n];
        for (t, term) in terms.iter().enumerate() {
            let mut seen = std::collections::HashSet::new();
            for &(i, j, k) in &term.edges {
                if i >= j || j >= n {
                    return Err(Error::OutOfRange(format!("term {t} edge ({i}, {j}) with {n} variables")));
                }
                if !(k >= 0.0 && k.is_finite()) {
                    return Err(Error::invalid(format!("term {t} edge ({i}, {j}) kernel {k}")));
                }
                if !seen.insert((i, j)) {
                    return Err(Error::invalid(format!("term {t} repeats edge ({i}, {j})")));
                }
                neighbors[i].push((j, k));
                neighbors[j].push((i, k));
            }
        }
        Ok(Self { labels, unary, terms, neighbors })
    }

    /// Builds pairwise terms from superpixel positions and per-term features.
    pub fn build(
        unary: Matrix,
        positions: &[[f64; 2]],
        specs: &[TermSpec<'_>],
        connectivity: &Connectivity,
    ) -> Result<Self> {
        let n = unary.rows();
        if positions.len() != n {
            return Err(Error::shape(format!("{} positions for {n} variables", positions.len())));
        }
        let pairs: Vec<(usize, usize)> = match connectivity {
            Connectivity::Dense => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
            Connectivity::Sparse(edges) => {
                edges.check()?;
                if edges.nodes != n {
                    return Err(Error::shape(format!("edge list has {} nodes, model has {n} variables", edges.nodes)));
                }
                edges.pairs().collect()
            }
        };
        let mut terms = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.params.check()?;
            if spec.features.rows() != n {
                return Err(Error::shape(format!(
                    "term features have {} rows, model has {n} variables",
                    spec.features.rows()
                )));
            }
            let f = zscore(spec.features);
            let edges = pairs
                .iter()
                .map(|&(i, j)| (i, j, pairwise_kernel(positions[i], positions[j], f.row(i), f.row(j), &spec.params)))
                .collect();
            terms.push(PairwiseTerm { edges });
        }
        Self::new(unary, terms)
    }

    pub fn num_variables(&self) -> usize {
        self.unary.rows()
    }

    pub fn num_labels(&self) -> usize {
        self.labels
    }

    pub fn unary(&self) -> &Matrix {
        &self.unary
    }

    pub fn terms(&self) -> &[PairwiseTerm] {
        &self.terms
    }

    fn check_assignment(&self, assignment: &[u32]) -> Result<()> {
        if assignment.len() != self.num_variables() {
            return Err(Error::shape(format!(
                "assignment has {} entries, model has {} variables",
                assignment.len(),
                self.num_variables()
            )));
        }
        if let Some(&l) = assignment.iter().find(|&&l| l as usize >= self.labels) {
            return Err(Error::OutOfRange(format!("label {l} >= label count {}", self.labels)));
        }
        Ok(())
    }

    fn energy_unchecked(&self, v: &[u32]) -> f64 {
        let mut e: f64 = v.iter().enumerate().map(|(i, &l)| self.unary.get(i, l as usize)).sum();
        for term in &self.terms {
            for &(i, j, k) in &term.edges {
                if v[i] != v[j] {
                    e += k;
                }
            }
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub unary: f64,
    /// One entry per pairwise term.
    pub pairwise: Vec<f64>,
    pub total: f64,
}

pub fn total_energy(model: &CrfModel, assignment: &[u32]) -> Result<EnergyBreakdown> {
    model.check_assignment(assignment)?;
    let unary = assignment.iter().enumerate().map(|(i, &l)| model.unary.get(i, l as usize)).sum::<f64>();
    let pairwise: Vec<f64> = model
        .terms
        .iter()
        .map(|t| {
            t.edges.iter().filter(|&&(i, j, _)| assignment[i] != assignment[j]).fold(0.0, |acc, &(_, _, k)| acc + k)
        })
        .collect();
    let total = unary + pairwise.iter().sum::<f64>();
    Ok(EnergyBreakdown { unary, pairwise, total })
}

/// Factorized label distributions, one normalized row per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Beliefs(Matrix);

impl Beliefs {
    pub fn new(table: Matrix) -> Result<Self> {
        for (i, row) in table.iter_rows().enumerate() {
            if row.iter().any(|&b| !(0.0..=1.0).contains(&b)) {
                return Err(Error::invalid(format!("belief row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("belief row {i} sums to {s}")));
            }
        }
        Ok(Self(table))
    }

    pub fn table(&self) -> &Matrix {
        &self.0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

/// Writes `softmax(−energies)` into `out`.
fn softmin_into(energies: &[f64], out: &mut [f64]) {
    let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    for (o, &e) in out.iter_mut().zip(energies) {
        *o = (lo - e).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Beliefs proportional to `exp(−ψ_i)`.
pub fn init_beliefs(model: &CrfModel) -> Beliefs {
    let mut b = Matrix::zeros(model.num_variables(), model.labels);
    for i in 0..model.num_variables() {
        softmin_into(model.unary.row(i), b.row_mut(i));
    }
    Beliefs(b)
}

/// Mean-field free energy: expected energy under the factorized beliefs
/// minus their entropy.
pub fn free_energy(model: &CrfModel, beliefs: &Beliefs) -> f64 {
    let b = &beliefs.0;
    let mut f = 0.0;
    for i in 0..model.num_variables() {
        for (l, &p) in b.row(i).iter().enumerate() {
            f += p * model.unary.get(i, l);
            if p > 0.0 {
                f += p * p.ln();
            }
        }
    }
    for term in &model.terms {
        for &(i, j, k) in &term.edges {
            let agree: f64 = b.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            f += k * (1.0 - agree);
        }
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanFieldOptions {
    /// Maximum number of full sweeps.
    pub max_iters: usize,
    /// Convergence threshold on the largest belief change in a sweep.
    pub tol: f64,
}

impl Default for MeanFieldOptions {
    fn default() -> Self {
        Self { max_iters: 10, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldResult {
    pub beliefs: Beliefs,
    /// Sweeps performed.
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute belief change in the last sweep.
    pub last_change: f64,
    /// Free energy of the initial beliefs.
    pub initial_free_energy: f64,
    /// Free energy after each sweep.
    pub free_energy: Vec<f64>,
}

/// Sequential mean-field inference.
///
/// Beliefs start at `exp(−ψ_i)`; each sweep visits variables in ascending
/// order and sets
/// `b_i(l) ∝ exp(−ψ_i(l) − Σ_{(i,j)} k_ij (1 − b_j(l)))`,
/// using the freshest beliefs of the neighbours. Stops once a sweep changes no
/// belief by `tol` or more, or after `max_iters` sweeps.
pub fn mean_field_infer(model: &CrfModel, opts: &MeanFieldOptions) -> MeanFieldResult {
    let mut beliefs = init_beliefs(model).0;
    let initial_free_energy = free_energy(model, &Beliefs(beliefs.clone()));
    let labels = model.labels;
    let mut energies = vec![0.0; labels];
    let mut fresh = vec![0.0; labels];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last_change = 0.0;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let mut max_change = 0.0f64;
        for i in 0..model.num_variables() {
            energies.copy_from_slice(model.unary.row(i));
            for &(j, k) in &model.neighbors[i] {
                for (e, &bj) in energies.iter_mut().zip(beliefs.row(j)) {
                    *e += k * (1.0 - bj);
                }
            }
            softmin_into(&energies, &mut fresh);
            let row = beliefs.row_mut(i);
            for (old, &new) in row.iter_mut().zip(&fresh) {
                max_change = max_change.max((new - *old).abs());
                *old = new;
            }
        }
        iterations += 1;
        last_change = max_change;
        trace.push(free_energy(model, &Beliefs(beliefs.clone())));
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }

    MeanFieldResult {
        beliefs: Beliefs(beliefs),
        iterations,
        converged,
        last_change,
        initial_free_energy,
        free_energy: trace,
    }
}

/// Per-variable argmax, ties to the lowest label.
pub fn map_labels(beliefs: &Beliefs) -> Vec<u32> {
    beliefs
        .0
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (l, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = l;
                }
            }
            best as u32
        })
        .collect()
}

/// Paints every pixel with the label of its superpixel.
pub fn broadcast_labels(labels: &[u32], sp: &SuperpixelMap, num_labels: usize) -> Result<LabelMap> {
    if labels.len() != sp.count() {
        return Err(Error::shape(format!("{} labels for {} superpixels", labels.len(), sp.count())));
    }
    let mut pixels = Vec::with_capacity(sp.ids().len());
    for &id in sp.ids() {
        let l = labels
            .get(id as usize)
            .ok_or_else(|| Error::OutOfRange(format!("superpixel id {id} >= {}", labels.len())))?;
        pixels.push(*l);
    }
    LabelMap::new(sp.rows(), sp.cols(), num_labels, pixels)
}

/// Exact MAP by enumerating all `L^N` assignments in lexicographic order.
/// Returns the lexicographically smallest minimizer and its energy.
pub fn brute_force_map(model: &CrfModel) -> Result<(Vec<u32>, f64)> {
    let n = model.num_variables();
    let l = model.labels as u64;
    let total = (0..n).try_fold(1u64, |acc, _| acc.checked_mul(l).filter(|&t| t <= BRUTE_FORCE_LIMIT));
    if total.is_none() {
        return Err(Error::TooLarge(format!(
            "{}^{n} assignments exceed the limit of {BRUTE_FORCE_LIMIT}",
            model.labels
        )));
    }
    let mut v = vec![0u32; n];
    let mut best = v.clone();
    let mut best_e = model.energy_unchecked(&v);
    'outer: loop {
        // odometer, last variable fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                break 'outer;
            }
            pos -= 1;
            v[pos] += 1;
            if (v[pos] as usize) < model.labels {
                break;
            }
            v[pos] = 0;
        }
        let e = model.energy_unchecked(&v);
        if e < best_e {
            best_e = e;
            best.copy_from_slice(&v);
        }
    }
    Ok((best, best_e))
}
