//! Superpixel similarity graph.
//!
//! Pairs of superpixels are described by a three-component [`PairFeature`],
//! scored by a logistic same-label classifier, and the resulting similarity
//! matrix is sparsified by keeping the `k` most similar edges of its minimum
//! spanning tree under dissimilarity `1 - s`.

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{sigmoid, LinearModel};
use crate::types::{Matrix, SuperpixelFeatures};

/// Number of MST edges kept per object.
pub const DEFAULT_TOP_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Similarity,
    Dissimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Undirected edges between superpixels `0..nodes`, each stored once with
/// `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeList {
    pub nodes: usize,
    pub kind: WeightKind,
    pub edges: Vec<Edge>,
}

impl EdgeList {
    pub fn new(nodes: usize, kind: WeightKind, edges: Vec<Edge>) -> Result<Self> {
        let list = Self { nodes, kind, edges };
        list.check()?;
        Ok(list)
    }

    /// Re-validates, e.g. after deserialization.
    pub fn check(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.edges {
            if e.i >= e.j {
                return Err(Error::invalid(format!("edge ({}, {}) must have i < j", e.i, e.j)));
            }
            if e.j >= self.nodes {
                return Err(Error::OutOfRange(format!("edge ({}, {}) references a node >= {}", e.i, e.j, self.nodes)));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::invalid(format!("edge ({}, {}) weight {}", e.i, e.j, e.weight)));
            }
            if self.kind == WeightKind::Similarity && e.weight > 1.0 {
                return Err(Error::invalid(format!("similarity of edge ({}, {}) exceeds 1", e.i, e.j)));
            }
            if !seen.insert((e.i, e.j)) {
                return Err(Error::invalid(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().map(|e| (e.i, e.j))
    }

    /// Every pair `i < j` of `nodes`, weight 1.
    pub fn complete(nodes: usize) -> Self {
        let edges = (0..nodes).flat_map(|i| (i + 1..nodes).map(move |j| Edge { i, j, weight: 1.0 })).collect();
        Self { nodes, kind: WeightKind::Similarity, edges }
    }
}

/// `[‖z_i − z_j‖, ‖p_i − p_j‖ / diagonal, |n_i − n_j| / (n_i + n_j)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeature(pub [f64; 3]);

pub fn pair_features(spf: &SuperpixelFeatures, i: usize, j: usize) -> Result<PairFeature> {
    let n = spf.count();
    if i >= n || j >= n {
        return Err(Error::OutOfRange(format!("pair ({i}, {j}) with {n} superpixels")));
    }
    if i == j {
        return Err(Error::invalid(format!("pair ({i}, {j}) is not a pair")));
    }
    let feat = spf.feature(i).iter().zip(spf.feature(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let (pi, pj) = (spf.positions[i], spf.positions[j]);
    let pos = ((pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2)).sqrt() / spf.diagonal();
    let (si, sj) = (spf.sizes[i] as f64, spf.sizes[j] as f64);
    let size = (si - sj).abs() / (si + sj);
    Ok(PairFeature([feat, pos, size]))
}

/// Probability that two superpixels share a label under a single-output
/// logistic model over [`PairFeature`]s.
pub fn predict_same_label(model: &LinearModel, f: &PairFeature) -> Result<f64> {
    if model.classes() != 1 || model.dim() != 3 {
        return Err(Error::shape(format!(
            "same-label model must be 1x(3+1), got {}x({}+1)",
            model.classes(),
            model.dim()
        )));
    }
    Ok(sigmoid(model.forward(&f.0)?[0]))
}

/// A hand-set classifier that favours pairs with close features and
/// positions; used when no trained model is supplied.
pub fn default_same_label_model() -> LinearModel {
    LinearModel::new(1, 3, vec![-4.0, -8.0, -1.0, 2.0]).expect("static shape")
}

/// Dense symmetric matrix of same-label probabilities (diagonal 1).
pub fn similarity_matrix(spf: &SuperpixelFeatures, model: &LinearModel) -> Result<Matrix> {
    let n = spf.count();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        s.set(i, i, 1.0);
        for j in i + 1..n {
            let p = predict_same_label(model, &pair_features(spf, i, j)?)?;
            s.set(i, j, p);
            s.set(j, i, p);
        }
    }
    Ok(s)
}

/// `(pair feature, same label?)` for every superpixel pair, given one label
/// per superpixel. Training data for the same-label classifier.
pub fn training_pairs(spf: &SuperpixelFeatures, labels: &[u32]) -> Result<Vec<(Vec<f64>, bool)>> {
    if labels.len() != spf.count() {
        return Err(Error::shape(format!("{} labels for {} superpixels", labels.len(), spf.count())));
    }
    let n = spf.count();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((pair_features(spf, i, j)?.0.to_vec(), labels[i] == labels[j]));
        }
    }
    Ok(out)
}

fn check_similarity(similarity: &Matrix) -> Result<usize> {
    let n = similarity.rows();
    if similarity.cols() != n {
        return Err(Error::shape(format!("similarity matrix is {}x{}", n, similarity.cols())));
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (similarity.get(i, j), similarity.get(j, i));
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("similarity ({i}, {j}) = {a} outside [0, 1]")));
            }
            if (a - b).abs() > 1e-12 {
                return Err(Error::invalid(format!("similarity matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(n)
}

/// Kruskal's minimum spanning tree over dissimilarity `1 − s(i, j)` of the
/// complete graph, keeping the `min(k, n − 1)` tree edges of highest
/// similarity. Edges come out by descending similarity, ties in `(i, j)`
/// order. The diagonal is ignored.
pub fn mst_topk(similarity: &Matrix, k: usize) -> Result<EdgeList> {
    let n = check_similarity(similarity)?;
    if n < 2 {
        return Err(Error::invalid(format!("mst_topk needs at least 2 superpixels, got {n}")));
    }
    if k == 0 {
        return Err(Error::invalid("mst_topk needs k >= 1"));
    }
    let mut candidates: Vec<Edge> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| Edge { i, j, weight: similarity.get(i, j) })
        .collect();
    // descending similarity == ascending dissimilarity
    candidates.sort_by(|a, b| b.weight.total_cmp(&a.weight).then((a.i, a.j).cmp(&(b.i, b.j))));

    let keep = k.min(n - 1);
    let mut uf = UnionFind::<usize>::new(n);
    let mut tree = Vec::with_capacity(keep);
    for e in candidates {
        if uf.union(e.i, e.j) {
            // Kruskal accepts edges in output order, so the first `keep`
            // tree edges are the most similar ones.
            tree.push(e);
            if tree.len() == keep {
                break;
            }
        }
    }
    EdgeList::new(n, WeightKind::Similarity, tree)
}

/// Runs [`mst_topk`] independently inside each group of superpixels (e.g.
/// one group per object instance), so no edge crosses groups. Groups with a
/// single member contribute no edges. Output is grouped by ascending group
/// id, each group in [`mst_topk`] order.
pub fn mst_topk_grouped(similarity: &Matrix, groups: &[u32], k: usize) -> Result<EdgeList> {
    let n = check_similarity(similarity)?;
    if groups.len() != n {
        return Err(Error::shape(format!("{} group ids for {n} superpixels", groups.len())));
    }
    let mut members = std::collections::BTreeMap::<u32, Vec<usize>>::new();
    for (i, &g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    let mut edges = Vec::new();
    for idx in members.values() {
        if idx.len() < 2 {
            continue;
        }
        let mut sub = Matrix::zeros(idx.len(), idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                sub.set(a, b, similarity.get(i, j));
            }
        }
        let local = mst_topk(&sub, k)?;
        edges.extend(local.edges.iter().map(|e| Edge { i: idx[e.i], j: idx[e.j], weight: e.weight }));
    }
    EdgeList::new(n, WeightKind::Similarity, edges)
}
