//! Ward hierarchical clustering, elbow selection, silhouette, t-SNE and
//! cluster exemplars over latent feature vectors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusteringError {
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("non-finite feature at point {point}, dimension {dim}")]
    NonFiniteFeature { point: usize, dim: usize },
    #[error("feature rows have different lengths ({0} vs {1})")]
    RaggedFeatures(usize, usize),
    #[error("invalid cluster count {k} for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("elbow selection needs a curve of at least 3 points starting at k = 1, got {0}")]
    CurveTooShort(usize),
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("{labels} labels for {points} points")]
    LabelCountMismatch { labels: usize, points: usize },
    #[error("perplexity {perplexity} too large for {n} points (need n > 3·perplexity)")]
    PerplexityTooLarge { perplexity: f64, n: usize },
    #[error("exemplar count must be at least 1")]
    InvalidM,
}

fn check_features(features: &[Vec<f64>], min_points: usize) -> Result<usize, ClusteringError> {
    if features.len() < min_points {
        return Err(ClusteringError::TooFewPoints {
            needed: min_points,
            found: features.len(),
        });
    }
    let d = features.first().map_or(0, |f| f.len());
    for (i, row) in features.iter().enumerate() {
        if row.len() != d {
            return Err(ClusteringError::RaggedFeatures(d, row.len()));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(ClusteringError::NonFiniteFeature { point: i, dim: j });
        }
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Full `n×n` matrix of squared Euclidean distances, row-major.
pub fn squared_distances(features: &[Vec<f64>]) -> Vec<f64> {
    let n = features.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(&features[i], &features[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Z-scores every feature dimension; constant dimensions become 0.
pub fn standardize(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = features.len() as f64;
    let d = features.first().map_or(0, |f| f.len());
    let mut mean = vec![0.0; d];
    for row in features {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for row in features {
        for ((s, v), m) in sd.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    features
        .iter()
        .map(|row| {
            row.iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((v, m), s)| if *s > 0.0 { (v - m) / s.sqrt() } else { 0.0 })
                .collect()
        })
        .collect()
}

/// One agglomeration step. Leaves are nodes `0..n`; merge `i` creates node
/// `n + i`. `a < b` always.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Ward distance `sqrt(2·ΔESS)`, where ΔESS is the increase in the
    /// within-cluster sum of squares caused by the merge.
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkageTree {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl LinkageTree {
    /// Leaves under `node`, ascending.
    pub fn leaves(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if v < self.n_leaves {
                out.push(v);
            } else {
                let m = self.merges[v - self.n_leaves];
                stack.push(m.a);
                stack.push(m.b);
            }
        }
        out.sort_unstable();
        out
    }

    /// Left-to-right leaf order of the dendrogram.
    pub fn leaf_order(&self) -> Vec<usize> {
        if self.merges.is_empty() {
            return (0..self.n_leaves).collect();
        }
        let mut out = Vec::with_capacity(self.n_leaves);
        let mut stack = vec![self.n_leaves + self.merges.len() - 1];
        while let Some(v) = stack.pop() {
            if v < self.n_leaves {
                out.push(v);
            } else {
                let m = self.merges[v - self.n_leaves];
                stack.push(m.b);
                stack.push(m.a);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("node_a,node_b,height,size\n");
        for m in &self.merges {
            let _ = writeln!(s, "{},{},{:.10},{}", m.a, m.b, m.height, m.size);
        }
        s
    }
}

/// Ward agglomeration using the Lance–Williams update on squared Ward
/// distances. Among equal-cost pairs the one whose clusters have the
/// lexicographically smallest (lowest leaf, lowest leaf) indices merges
/// first.
pub fn ward_linkage(features: &[Vec<f64>]) -> Result<LinkageTree, ClusteringError> {
    check_features(features, 2)?;
    Ok(ward_from_squared(&squared_distances(features), features.len()))
}

/// Ward agglomeration from a precomputed squared-distance matrix.
pub fn ward_from_squared(dist2: &[f64], n: usize) -> LinkageTree {
    assert_eq!(dist2.len(), n * n);
    // For singletons the squared Ward distance 2·ΔESS equals the squared
    // Euclidean distance.
    let mut d = dist2.to_vec();
    let mut active: Vec<bool> = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node_id: Vec<usize> = (0..n).collect();
    let mut min_leaf: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let v = d[i * n + j];
                let key = (min_leaf[i].min(min_leaf[j]), min_leaf[i].max(min_leaf[j]));
                let better = match best {
                    None => true,
                    Some((bv, bk, _, _)) => v < bv || (v == bv && key < bk),
                };
                if better {
                    best = Some((v, key, i, j));
                }
            }
        }
        let (dij, _, i, j) = best.expect("at least two active clusters");
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((ni + nk) * d[i * n + k] + (nj + nk) * d[j * n + k] - nk * dij) / (ni + nj + nk);
            let v = v.max(0.0);
            d[i * n + k] = v;
            d[k * n + i] = v;
        }
        let (a, b) = (node_id[i].min(node_id[j]), node_id[i].max(node_id[j]));
        size[i] += size[j];
        active[j] = false;
        node_id[i] = n + step;
        min_leaf[i] = min_leaf[i].min(min_leaf[j]);
        merges.push(Merge {
            a,
            b,
            height: dij.max(0.0).sqrt(),
            size: size[i],
        });
    }
    LinkageTree { n_leaves: n, merges }
}

/// Undoes the last `k − 1` merges. Labels are `1..=k`, numbered by each
/// cluster's lowest leaf index.
pub fn cut_tree(tree: &LinkageTree, k: usize) -> Result<Vec<usize>, ClusteringError> {
    let n = tree.n_leaves;
    if k == 0 || k > n {
        return Err(ClusteringError::InvalidK { k, n });
    }
    let mut parent: Vec<usize> = (0..n + tree.merges.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (i, m) in tree.merges.iter().take(n - k).enumerate() {
        let node = n + i;
        let ra = find(&mut parent, m.a);
        let rb = find(&mut parent, m.b);
        parent[ra] = node;
        parent[rb] = node;
    }
    let mut label_of_root = BTreeMap::new();
    let mut labels = vec![0; n];
    for (leaf, label) in labels.iter_mut().enumerate() {
        let r = find(&mut parent, leaf);
        let next = label_of_root.len() + 1;
        *label = *label_of_root.entry(r).or_insert(next);
    }
    Ok(labels)
}

fn centroids(features: &[Vec<f64>], labels: &[usize]) -> BTreeMap<usize, (usize, Vec<f64>)> {
    let d = features[0].len();
    let mut acc: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    for (row, &l) in features.iter().zip(labels) {
        let e = acc.entry(l).or_insert_with(|| (0, vec![0.0; d]));
        e.0 += 1;
        for (s, v) in e.1.iter_mut().zip(row) {
            *s += v;
        }
    }
    for (count, sum) in acc.values_mut() {
        let c = *count as f64;
        for s in sum.iter_mut() {
            *s /= c;
        }
    }
    acc
}

/// Between-cluster over total sum of squares for a labelling.
pub fn explained_variance(features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let all = vec![0usize; features.len()];
    let grand = &centroids(features, &all)[&0].1;
    let tss: f64 = features.iter().map(|x| sq_dist(x, grand)).sum();
    let per_cluster = centroids(features, labels);
    let bss: f64 = per_cluster
        .values()
        .map(|(count, c)| *count as f64 * sq_dist(c, grand))
        .sum();
    if tss > 0.0 {
        (bss / tss).clamp(0.0, 1.0)
    } else if per_cluster.len() == features.len() {
        1.0
    } else {
        0.0
    }
}

/// `(k, explained variance)` for `k = 1..=k_max`, clusters from
/// [`cut_tree`]. A running maximum absorbs rounding so the curve never
/// decreases.
pub fn explained_variance_curve(
    features: &[Vec<f64>],
    tree: &LinkageTree,
    k_max: usize,
) -> Result<Vec<(usize, f64)>, ClusteringError> {
    let n = tree.n_leaves;
    if features.len() != n {
        return Err(ClusteringError::LabelCountMismatch {
            labels: n,
            points: features.len(),
        });
    }
    if k_max == 0 || k_max > n {
        return Err(ClusteringError::InvalidK { k: k_max, n });
    }
    let mut out = Vec::with_capacity(k_max);
    let mut running: f64 = 0.0;
    for k in 1..=k_max {
        let labels = cut_tree(tree, k)?;
        running = running.max(explained_variance(features, &labels));
        out.push((k, running));
    }
    Ok(out)
}

/// Gains closer than this count as tied.
pub const ELBOW_TIE_EPS: f64 = 1e-12;

/// The `k` after which the marginal gain in explained variance drops the
/// most: argmax over `k` of `(f(k) − f(k−1)) − (f(k+1) − f(k))`, smallest `k`
/// on ties. The curve must list `k = 1, 2, …` consecutively.
pub fn select_k_elbow(curve: &[(usize, f64)]) -> Result<usize, ClusteringError> {
    if curve.len() < 3 || curve.iter().enumerate().any(|(i, &(k, _))| k != i + 1) {
        return Err(ClusteringError::CurveTooShort(curve.len()));
    }
    let f: Vec<f64> = curve.iter().map(|&(_, v)| v).collect();
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 2..f.len() {
        let drop = (f[k - 1] - f[k - 2]) - (f[k] - f[k - 1]);
        if drop > best.0 + ELBOW_TIE_EPS {
            best = (drop, k);
        }
    }
    Ok(best.1)
}

/// Mean silhouette with Euclidean distances; members of singleton clusters
/// score 0.
pub fn silhouette_score(features: &[Vec<f64>], labels: &[usize]) -> Result<f64, ClusteringError> {
    check_features(features, 1)?;
    if labels.len() != features.len() {
        return Err(ClusteringError::LabelCountMismatch {
            labels: labels.len(),
            points: features.len(),
        });
    }
    let d2 = squared_distances(features);
    silhouette_from_squared(&d2, labels)
}

pub fn silhouette_from_squared(dist2: &[f64], labels: &[usize]) -> Result<f64, ClusteringError> {
    let n = labels.len();
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(ClusteringError::SingleCluster);
    }
    let idx = |l: usize| ids.binary_search(&l).expect("known label");
    let mut counts = vec![0usize; ids.len()];
    for &l in labels {
        counts[idx(l)] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; ids.len()];
    for i in 0..n {
        let own = idx(labels[i]);
        if counts[own] == 1 {
            continue;
        }
        sums.fill(0.0);
        for j in 0..n {
            if j != i {
                sums[idx(labels[j])] += dist2[i * n + j].sqrt();
            }
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..ids.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

/// Row-conditional affinities whose entropy matches `log(perplexity)`,
/// found by bisection on the Gaussian precision.
fn conditional_affinities(dist2: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &dist2[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        for _ in 0..200 {
            let mut sum = 0.0;
            let mut wsum = 0.0;
            for j in 0..n {
                if j != i {
                    let e = (-(row[j] - dmin) * beta).exp();
                    sum += e;
                    wsum += (row[j] - dmin) * e;
                }
            }
            let entropy = sum.ln() + beta * wsum / sum;
            if (entropy - target).abs() < 1e-10 {
                break;
            }
            if entropy > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                let e = (-(row[j] - dmin) * beta).exp();
                p[i * n + j] = e;
                sum += e;
            }
        }
        for j in 0..n {
            p[i * n + j] /= sum;
        }
    }
    p
}

/// Exact t-SNE (no Barnes–Hut approximation) to two dimensions.
pub fn tsne_embed(features: &[Vec<f64>], config: &TsneConfig) -> Result<Vec<[f64; 2]>, ClusteringError> {
    check_features(features, 2)?;
    let n = features.len();
    if !(config.perplexity > 0.0) || n as f64 <= 3.0 * config.perplexity {
        return Err(ClusteringError::PerplexityTooLarge {
            perplexity: config.perplexity,
            n,
        });
    }
    let cond = conditional_affinities(&squared_distances(features), n, config.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut q = vec![0.0; n * n];
    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < config.exaggeration_iterations { 0.5 } else { 0.8 };
        let mut qsum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                q[i * n + j] = v;
                q[j * n + i] = v;
                qsum += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let w = q[i * n + j];
                let coeff = 4.0 * (exaggeration * p[i * n + j] - w / qsum) * w;
                grad[0] += coeff * (y[i][0] - y[j][0]);
                grad[1] += coeff * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                let same_sign = (grad[d] > 0.0) == (velocity[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                velocity[i][d] = momentum * velocity[i][d] - config.learning_rate * gains[i][d] * grad[d];
            }
        }
        for (yi, vi) in y.iter_mut().zip(&velocity) {
            yi[0] += vi[0];
            yi[1] += vi[1];
        }
        let mean = y.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
    }
    Ok(y)
}

/// Per cluster (ascending label), the indices of the `m` members closest to
/// the cluster centroid, nearest first; ties go to the lower index.
pub fn cluster_exemplars(
    labels: &[usize],
    features: &[Vec<f64>],
    m: usize,
) -> Result<Vec<(usize, Vec<usize>)>, ClusteringError> {
    if m == 0 {
        return Err(ClusteringError::InvalidM);
    }
    check_features(features, 1)?;
    if labels.len() != features.len() {
        return Err(ClusteringError::LabelCountMismatch {
            labels: labels.len(),
            points: features.len(),
        });
    }
    let cents = centroids(features, labels);
    Ok(cents
        .iter()
        .map(|(&label, (_, c))| {
            let mut members: Vec<(f64, usize)> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == label)
                .map(|(i, _)| (sq_dist(&features[i], c).sqrt(), i))
                .collect();
            members.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            (label, members.into_iter().take(m).map(|(_, i)| i).collect())
        })
        .collect())
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two labellings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labellings differ in length");
    let n = a.len() as u64;
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(n).max(1.0);
    let max = (sa + sb) / 2.0;
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
