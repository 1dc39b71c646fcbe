//! HDBSCAN over a pairwise distance oracle.
//!
//! Pipeline: core distances, mutual reachability, minimum spanning tree
//! (Prim), single-linkage hierarchy from the sorted MST edges, condensed
//! tree pruned at `min_cluster_size`, then excess-of-mass selection. The
//! root cluster is never selected, so a dataset with one dense blob and no
//! split yields all noise.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::embed::EmbeddingVector;

#[derive(Debug, Error, PartialEq)]
pub enum HdbscanError {
    #[error("no points to cluster")]
    Empty,
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("invalid parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Metric {
    /// Euclidean distance on unit vectors; monotone in cosine distance.
    #[default]
    #[serde(rename = "euclidean-on-normalized-vectors")]
    EuclideanNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    #[serde(default)]
    pub metric: Metric,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 3,
            min_samples: 2,
            metric: Metric::EuclideanNormalized,
        }
    }
}

impl HdbscanParams {
    pub fn new(min_cluster_size: usize, min_samples: usize) -> Self {
        Self {
            min_cluster_size,
            min_samples,
            metric: Metric::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HdbscanError> {
        if self.min_cluster_size < 2 {
            return Err(HdbscanError::Params(
                "min_cluster_size must be at least 2".into(),
            ));
        }
        if self.min_samples < 1 {
            return Err(HdbscanError::Params(
                "min_samples must be at least 1".into(),
            ));
        }
        if self.min_samples > self.min_cluster_size {
            return Err(HdbscanError::Params(
                "min_samples must not exceed min_cluster_size".into(),
            ));
        }
        Ok(())
    }
}

/// Cluster assignment of one point. Serialized as an integer, `-1` for noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Cluster(usize),
    Noise,
}

impl Label {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Noise => None,
        }
    }

    pub fn is_noise(self) -> bool {
        self == Label::Noise
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Cluster(c) => write!(f, "{c}"),
            Label::Noise => f.write_str("NOISE"),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Label::Cluster(c) => s.serialize_i64(*c as i64),
            Label::Noise => s.serialize_i64(-1),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        match v {
            -1 => Ok(Label::Noise),
            v if v >= 0 => Ok(Label::Cluster(v as usize)),
            _ => Err(serde::de::Error::custom(format!(
                "invalid cluster label {v}"
            ))),
        }
    }
}

/// Symmetric pairwise distances over `len()` points.
pub trait Distances {
    fn len(&self) -> usize;
    fn distance(&self, a: usize, b: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Euclidean distances computed on demand from point coordinates.
pub struct EuclideanPoints<'a> {
    points: Vec<&'a [f64]>,
}

impl<'a> EuclideanPoints<'a> {
    pub fn new(points: impl IntoIterator<Item = &'a [f64]>) -> Result<Self, HdbscanError> {
        let points: Vec<&[f64]> = points.into_iter().collect();
        let dim = points.first().map(|p| p.len()).ok_or(HdbscanError::Empty)?;
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(HdbscanError::DimensionMismatch {
                    index: i,
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(HdbscanError::NonFinite(i));
            }
        }
        Ok(Self { points })
    }
}

impl Distances for EuclideanPoints<'_> {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        self.points[a]
            .iter()
            .zip(self.points[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Dense precomputed distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self { n, values }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }
}

impl Distances for DistanceMatrix {
    fn len(&self) -> usize {
        self.n
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.n + b]
    }
}

pub fn hdbscan(vectors: &[EmbeddingVector], p: &HdbscanParams) -> Result<Vec<Label>, HdbscanError> {
    let points = EuclideanPoints::new(vectors.iter().map(|v| v.values()))?;
    hdbscan_with(&points, p)
}

pub fn hdbscan_points(points: &[Vec<f64>], p: &HdbscanParams) -> Result<Vec<Label>, HdbscanError> {
    let points = EuclideanPoints::new(points.iter().map(Vec::as_slice))?;
    hdbscan_with(&points, p)
}

/// Runs HDBSCAN on any distance oracle.
pub fn hdbscan_with(d: &dyn Distances, p: &HdbscanParams) -> Result<Vec<Label>, HdbscanError> {
    p.validate()?;
    let n = d.len();
    if n == 0 {
        return Err(HdbscanError::Empty);
    }
    if n < p.min_cluster_size {
        return Ok(vec![Label::Noise; n]);
    }
    let core = core_distances(d, p.min_samples);
    let mst = minimum_spanning_tree(d, &core);
    let tree = SingleLinkage::from_edges(n, mst);
    let condensed = condense(&tree, p.min_cluster_size);
    let selected = select_eom(&condensed);
    Ok(label_points(n, &condensed, &selected))
}

/// Distance to the `min_samples`-th nearest point, counting the point
/// itself as the first.
fn core_distances(d: &dyn Distances, min_samples: usize) -> Vec<f64> {
    let n = d.len();
    let k = min_samples.min(n) - 1;
    let mut row = vec![0.0; n];
    (0..n)
        .map(|i| {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = if i == j { 0.0 } else { d.distance(i, j) };
            }
            let (_, kth, _) = row.select_nth_unstable_by(k, f64::total_cmp);
            *kth
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Edge {
    a: usize,
    b: usize,
    weight: f64,
}

/// Prim's algorithm on the dense mutual-reachability graph. Ties pick the
/// lowest vertex index. Each edge joins the newly added vertex to the vertex
/// added just before it, carrying the new vertex's reachability; this is the
/// edge convention of the widely used reference implementations, which keeps
/// matching hierarchies when reachabilities tie.
fn minimum_spanning_tree(d: &dyn Distances, core: &[f64]) -> Vec<Edge> {
    let n = core.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let mrd = d.distance(current, j).max(core[current]).max(core[j]);
            if mrd < best[j] {
                best[j] = mrd;
                from[j] = current;
            }
            if next == usize::MAX || best[j] < next_w {
                next = j;
                next_w = best[j];
            }
        }
        in_tree[next] = true;
        edges.push(Edge {
            a: current.min(next),
            b: current.max(next),
            weight: next_w,
        });
        current = next;
    }
    edges.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    edges
}

/// Binary merge tree. Leaves are `0..n`; merge `k` is node `n + k`.
struct SingleLinkage {
    n: usize,
    merges: Vec<Merge>,
}

#[derive(Debug, Clone, Copy)]
struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

impl SingleLinkage {
    fn from_edges(n: usize, edges: Vec<Edge>) -> Self {
        let mut parent: Vec<usize> = (0..2 * n).collect();
        let mut size = vec![1usize; 2 * n];
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut merges = Vec::with_capacity(n.saturating_sub(1));
        for e in edges {
            let ra = find(&mut parent, e.a);
            let rb = find(&mut parent, e.b);
            let node = n + merges.len();
            let merged = size[ra] + size[rb];
            parent[ra] = node;
            parent[rb] = node;
            size[node] = merged;
            merges.push(Merge {
                left: ra,
                right: rb,
                distance: e.weight,
                size: merged,
            });
        }
        Self { n, merges }
    }

    fn root(&self) -> usize {
        self.n + self.merges.len() - 1
    }

    fn size(&self, node: usize) -> usize {
        if node < self.n {
            1
        } else {
            self.merges[node - self.n].size
        }
    }

    fn leaves(&self, node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n {
                out.push(x);
            } else {
                let m = self.merges[x - self.n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
    }
}

#[derive(Debug, Clone)]
struct CondensedCluster {
    parent: Option<usize>,
    birth: f64,
    stability: f64,
    children: Vec<usize>,
    /// Points that leave the tree directly from this cluster.
    points: Vec<usize>,
}

impl CondensedCluster {
    fn new(parent: Option<usize>, birth: f64) -> Self {
        Self {
            parent,
            birth,
            stability: 0.0,
            children: Vec::new(),
            points: Vec::new(),
        }
    }

    fn accrue(&mut self, lambda: f64, size: usize) {
        // a cluster born and dying at infinite density contributes nothing
        if lambda != self.birth {
            self.stability += (lambda - self.birth) * size as f64;
        }
    }
}

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        1.0 / distance
    } else {
        f64::INFINITY
    }
}

/// Walks the merge tree top-down. Splits where both sides reach
/// `min_cluster_size` create two child clusters; smaller sides shed their
/// points into the current cluster.
fn condense(tree: &SingleLinkage, min_cluster_size: usize) -> Vec<CondensedCluster> {
    let mut clusters = vec![CondensedCluster::new(None, 0.0)];
    let mut stack = vec![(tree.root(), 0usize)];
    let mut shed = Vec::new();
    while let Some((node, cluster)) = stack.pop() {
        let m = tree.merges[node - tree.n];
        let lambda = lambda_of(m.distance);
        let (ls, rs) = (tree.size(m.left), tree.size(m.right));
        let (left_big, right_big) = (ls >= min_cluster_size, rs >= min_cluster_size);
        if left_big && right_big {
            let mut ids = [0usize; 2];
            for (slot, size) in ids.iter_mut().zip([ls, rs]) {
                *slot = clusters.len();
                clusters.push(CondensedCluster::new(Some(cluster), lambda));
                clusters[cluster].children.push(*slot);
                clusters[cluster].accrue(lambda, size);
            }
            // right pushed first so the left subtree gets the lower ids
            stack.push((m.right, ids[1]));
            stack.push((m.left, ids[0]));
            continue;
        }
        for (child, big) in [(m.left, left_big), (m.right, right_big)] {
            if big {
                stack.push((child, cluster));
            } else {
                shed.clear();
                tree.leaves(child, &mut shed);
                for &point in &shed {
                    clusters[cluster].points.push(point);
                    clusters[cluster].accrue(lambda, 1);
                }
            }
        }
    }
    clusters
}

/// Excess-of-mass selection, bottom-up. Child ids are always greater than
/// their parent's, so reverse id order visits children first.
fn select_eom(clusters: &[CondensedCluster]) -> Vec<bool> {
    let mut selected = vec![true; clusters.len()];
    selected[0] = false;
    let mut stability: Vec<f64> = clusters.iter().map(|c| c.stability).collect();
    for id in (1..clusters.len()).rev() {
        let subtree: f64 = clusters[id].children.iter().map(|&c| stability[c]).sum();
        if subtree > stability[id] {
            selected[id] = false;
            stability[id] = subtree;
        } else {
            let mut stack = clusters[id].children.clone();
            while let Some(c) = stack.pop() {
                selected[c] = false;
                stack.extend_from_slice(&clusters[c].children);
            }
        }
    }
    selected
}

/// Each point takes the nearest selected cluster at or above the cluster it
/// left from; points with none are noise. Labels are numbered by each
/// cluster's smallest member index.
fn label_points(n: usize, clusters: &[CondensedCluster], selected: &[bool]) -> Vec<Label> {
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (id, c) in clusters.iter().enumerate() {
        let mut cur = Some(id);
        let winner = loop {
            match cur {
                Some(x) if selected[x] => break Some(x),
                Some(x) => cur = clusters[x].parent,
                None => break None,
            }
        };
        for &p in &c.points {
            owner[p] = winner;
        }
    }
    let mut first_member: Vec<(usize, usize)> = Vec::new();
    for (point, o) in owner.iter().enumerate() {
        if let Some(c) = o {
            if !first_member.iter().any(|(cid, _)| cid == c) {
                first_member.push((*c, point));
            }
        }
    }
    first_member.sort_by_key(|&(_, point)| point);
    owner
        .into_iter()
        .map(|o| match o {
            Some(c) => Label::Cluster(
                first_member
                    .iter()
                    .position(|(cid, _)| *cid == c)
                    .expect("every owner has a first member"),
            ),
            None => Label::Noise,
        })
        .collect()
}

/// Canonical form of a labelling for comparisons up to label permutation:
/// the member sets of each cluster plus the noise set.
pub fn partition(labels: &[Label]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut noise = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Label::Cluster(c) => groups.entry(*c).or_default().push(i),
            Label::Noise => noise.push(i),
        }
    }
    let mut sets: Vec<Vec<usize>> = groups.into_values().collect();
    sets.sort();
    (sets, noise)
}
