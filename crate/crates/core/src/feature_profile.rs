//! Single-feature summaries and the cluster-label feature.
//!
//! Continuous features get location/spread statistics, discrete features get
//! frequency tables. The cluster feature is built by running HDBSCAN on a
//! Gower distance matrix over all features; it is kept only when at least two
//! clusters are found and the mean squared distance to the cluster medoids is
//! under [`ClusterConfig::sse_threshold`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::llm_gateway::{LlmClient, LlmRequest, PromptKind};
use crate::table_ingest::{Feature, FeatureKind, FeatureTable, FeatureValues};

/// Name of the synthetic cluster-label feature.
pub const CLUSTER_FEATURE: &str = "__cluster";

/// Quantile of order `p` of an ascending slice, interpolating linearly
/// between the neighbours of index `p·(n−1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

/// Summary statistics with the sample variance (divisor `n − 1`).
///
/// ```
/// use tabinsight::feature_profile::continuous_summary;
/// let s = continuous_summary(&[1.0, 2.0, 3.0, 4.0]).unwrap();
/// assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
/// assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
/// ```
pub fn continuous_summary(values: &[f64]) -> Result<ContinuousStats> {
    if values.is_empty() {
        return Err(Error::InsufficientData { required: 1, available: 0 });
    }
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / n;
    let variance =
        if values.len() < 2 { 0.0 } else { values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) };
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    Ok(ContinuousStats {
        mean,
        median: quantile_sorted(&sorted, 0.5),
        std: variance.sqrt(),
        variance,
        min,
        max,
        range: max - min,
        q1,
        q3,
        iqr: q3 - q1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteStats {
    pub n_categories: usize,
    /// `frequencies[code]` is the number of rows with that code.
    pub frequencies: Vec<usize>,
    pub proportions: Vec<f64>,
}

impl DiscreteStats {
    /// `(code, count, proportion)` by descending count, ties by ascending code.
    pub fn ranked(&self) -> Vec<(u32, usize, f64)> {
        let mut rows: Vec<(u32, usize, f64)> =
            self.frequencies.iter().zip(&self.proportions).enumerate().map(|(c, (&n, &p))| (c as u32, n, p)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        rows
    }
}

pub fn discrete_summary(feature: &Feature) -> Result<DiscreteStats> {
    let codes = feature.as_codes().ok_or_else(|| Error::InvalidInput(format!("'{}' is not discrete", feature.name)))?;
    let max_code = codes.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let n_categories = feature.n_categories().max(max_code);
    let mut frequencies = vec![0usize; n_categories];
    for &c in codes {
        frequencies[c as usize] += 1;
    }
    let n = codes.len().max(1) as f64;
    let proportions = frequencies.iter().map(|&f| f as f64 / n).collect();
    Ok(DiscreteStats { n_categories, frequencies, proportions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureStats {
    Continuous(ContinuousStats),
    Discrete(DiscreteStats),
}

pub fn summarize(feature: &Feature) -> Result<FeatureStats> {
    match &feature.values {
        FeatureValues::Continuous(v) => continuous_summary(v).map(FeatureStats::Continuous),
        FeatureValues::Discrete(_) => discrete_summary(feature).map(FeatureStats::Discrete),
    }
}

/// Dense symmetric distance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<DistanceMatrix> {
        if data.len() != n * n {
            return Err(Error::LengthMismatch { left: n * n, right: data.len() });
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> DistanceMatrix {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = f(i, j);
            }
        }
        DistanceMatrix { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(Error::InvalidInput(format!("distance matrix diagonal at {i} is non-zero")));
            }
            for j in 0..i {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if a != b || a.is_nan() || a < 0.0 {
                    return Err(Error::InvalidInput(format!("distance matrix invalid at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Gower distances: per-feature range-normalized gaps for continuous
/// features and 0/1 mismatches for discrete ones, averaged over features.
///
/// ```
/// use tabinsight::feature_profile::gower_distance_matrix;
/// use tabinsight::table_ingest::{Feature, FeatureTable};
/// let t = FeatureTable::from_features(vec![
///     Feature::continuous("x", vec![0.0, 2.0, 7.0, 10.0]),
/// ]).unwrap();
/// let d = gower_distance_matrix(&t).unwrap();
/// assert_eq!(d.get(1, 2), 0.5);
/// ```
pub fn gower_distance_matrix(table: &FeatureTable) -> Result<DistanceMatrix> {
    if table.features.is_empty() {
        return Err(Error::InvalidInput("gower distance needs at least one feature".into()));
    }
    let n = table.n_rows;
    let p = table.features.len() as f64;
    enum Col<'a> {
        Cont(&'a [f64], f64),
        Disc(&'a [u32]),
    }
    let cols: Vec<Col> = table
        .features
        .iter()
        .map(|f| match &f.values {
            FeatureValues::Continuous(v) => {
                let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
                Col::Cont(v, hi - lo)
            }
            FeatureValues::Discrete(c) => Col::Disc(c),
        })
        .collect();

    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let cols = &cols;
            (0..n).map(move |j| {
                if i == j {
                    return 0.0;
                }
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                let total: f64 = cols
                    .iter()
                    .map(|c| match c {
                        Col::Cont(v, range) => {
                            if *range > 0.0 {
                                (v[a] - v[b]).abs() / range
                            } else {
                                0.0
                            }
                        }
                        Col::Disc(v) => (v[a] != v[b]) as u8 as f64,
                    })
                    .sum();
                (total / p).min(1.0)
            })
        })
        .collect();
    Ok(DistanceMatrix { n, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    /// Upper bound on the mean squared Gower distance to cluster medoids.
    pub sse_threshold: f64,
    /// Tables with more rows skip clustering (the distance matrix is N×N).
    pub max_rows: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { min_cluster_size: 15, min_samples: 5, sse_threshold: 0.5, max_rows: 10_000 }
    }
}

/// HDBSCAN over a precomputed distance matrix.
///
/// Core distance is the distance to the `min_samples`-th nearest point
/// counting the point itself. Clusters are selected by excess of mass; the
/// root may be selected when it has no stable children, in which case only
/// points persisting to the root's last split level are labelled. Returns one
/// entry per row, `None` for noise; cluster ids are `0..k`.
pub fn hdbscan_cluster(distances: &DistanceMatrix, cfg: &ClusterConfig) -> Result<Vec<Option<usize>>> {
    if cfg.min_cluster_size < 2 {
        return Err(Error::InvalidInput("min_cluster_size must be at least 2".into()));
    }
    distances.validate()?;
    let n = distances.len();
    if n < cfg.min_cluster_size || n < 2 {
        return Ok(vec![None; n]);
    }
    let k = cfg.min_samples.clamp(1, n);
    let core: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = distances.row(i).to_vec();
            let (_, kth, _) = row.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect();
    let reach = |i: usize, j: usize| distances.get(i, j).max(core[i]).max(core[j]);

    let mst = prim_mst(n, reach);
    let linkage = single_linkage(n, mst);
    let condensed = condense_tree(&linkage, n, cfg.min_cluster_size);
    Ok(select_and_label(&condensed, n))
}

/// Prim's algorithm on the dense mutual-reachability graph, starting at row 0.
fn prim_mst(n: usize, weight: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize, f64)> {
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut source = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let w = weight(current, j);
            if w < best[j] {
                best[j] = w;
                source[j] = current;
            }
            if next == usize::MAX || best[j] < next_w {
                next = j;
                next_w = best[j];
            }
        }
        in_tree[next] = true;
        edges.push((source[next], next, next_w));
        current = next;
    }
    edges
}

/// Merge records in scipy linkage layout: node `n + i` is created by row `i`.
struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<Merge> {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    let mut size = vec![1usize; 2 * n - 1];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n - 1);
    for (next_label, (a, b, d)) in (n..).zip(edges) {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let merged = size[ra] + size[rb];
        parent[ra] = next_label;
        parent[rb] = next_label;
        size[next_label] = merged;
        merges.push(Merge { left: ra, right: rb, distance: d, size: merged });
    }
    merges
}

struct CondensedRow {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn node_size(linkage: &[Merge], n: usize, node: usize) -> usize {
    if node < n {
        1
    } else {
        linkage[node - n].size
    }
}

fn leaves_below(linkage: &[Merge], n: usize, root: usize, out: &mut Vec<usize>) {
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if node < n {
            out.push(node);
        } else {
            let m = &linkage[node - n];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
}

fn condense_tree(linkage: &[Merge], n: usize, min_cluster_size: usize) -> Vec<CondensedRow> {
    let root = 2 * n - 2;
    let mut relabel = vec![0usize; 2 * n - 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut rows = Vec::new();
    // breadth-first over internal nodes that remain part of a cluster
    let mut queue = std::collections::VecDeque::from([root]);
    let mut leaves = Vec::new();
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let m = &linkage[node - n];
        let lambda = if m.distance > 0.0 { 1.0 / m.distance } else { f64::INFINITY };
        let left_count = node_size(linkage, n, m.left);
        let right_count = node_size(linkage, n, m.right);
        let parent = relabel[node];
        let mut spill = |child: usize, rows: &mut Vec<CondensedRow>| {
            leaves.clear();
            leaves_below(linkage, n, child, &mut leaves);
            for &leaf in leaves.iter() {
                rows.push(CondensedRow { parent, child: leaf, lambda, size: 1 });
            }
        };
        match (left_count >= min_cluster_size, right_count >= min_cluster_size) {
            (true, true) => {
                for (child, count) in [(m.left, left_count), (m.right, right_count)] {
                    relabel[child] = next_label;
                    next_label += 1;
                    rows.push(CondensedRow { parent, child: relabel[child], lambda, size: count });
                    queue.push_back(child);
                }
            }
            (false, false) => {
                spill(m.left, &mut rows);
                spill(m.right, &mut rows);
            }
            (false, true) => {
                relabel[m.right] = parent;
                spill(m.left, &mut rows);
                queue.push_back(m.right);
            }
            (true, false) => {
                relabel[m.left] = parent;
                spill(m.right, &mut rows);
                queue.push_back(m.left);
            }
        }
    }
    rows
}

fn select_and_label(rows: &[CondensedRow], n: usize) -> Vec<Option<usize>> {
    let root = n;
    let max_cluster = rows.iter().map(|r| r.parent).max().unwrap_or(root);
    let n_clusters = max_cluster - root + 1;
    let idx = |c: usize| c - root;

    let mut birth = vec![0.0f64; n_clusters];
    for r in rows.iter().filter(|r| r.size > 1) {
        birth[idx(r.child)] = r.lambda;
    }
    let mut stability = vec![0.0f64; n_clusters];
    for r in rows {
        stability[idx(r.parent)] += (r.lambda - birth[idx(r.parent)]) * r.size as f64;
    }
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for r in rows.iter().filter(|r| r.size > 1) {
        children[idx(r.parent)].push(r.child);
    }

    // excess of mass, leaves first (higher labels are deeper)
    let mut is_cluster = vec![true; n_clusters];
    for c in (root..=max_cluster).rev() {
        let subtree: f64 = children[idx(c)].iter().map(|&ch| stability[idx(ch)]).sum();
        if subtree > stability[idx(c)] {
            is_cluster[idx(c)] = false;
            stability[idx(c)] = subtree;
        } else {
            let mut stack = children[idx(c)].clone();
            while let Some(s) = stack.pop() {
                is_cluster[idx(s)] = false;
                stack.extend(children[idx(s)].iter().copied());
            }
        }
    }
    let selected: Vec<usize> = (root..=max_cluster).filter(|&c| is_cluster[idx(c)]).collect();
    let label_of = |c: usize| selected.binary_search(&c).ok();

    // union every row whose child is not a selected cluster into its parent
    let mut uf: Vec<usize> = (0..=max_cluster).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    for r in rows {
        if r.size > 1 && is_cluster[idx(r.child)] {
            continue;
        }
        let a = find(&mut uf, r.parent);
        let b = find(&mut uf, r.child);
        if a != b {
            // the parent side stays representative, so every component is
            // rooted at its top-most cluster
            uf[b] = a;
        }
    }
    let mut point_lambda = vec![0.0; n];
    for r in rows.iter().filter(|r| r.size == 1) {
        point_lambda[r.child] = r.lambda;
    }
    let root_max_lambda = rows.iter().filter(|r| r.parent == root).map(|r| r.lambda).fold(f64::NEG_INFINITY, f64::max);

    (0..n)
        .map(|p| {
            let c = find(&mut uf, p);
            if c < root {
                None
            } else if c != root {
                label_of(c)
            } else if selected == [root] && point_lambda[p] >= root_max_lambda {
                Some(0)
            } else {
                None
            }
        })
        .collect()
}

/// Outcome of the cluster-feature step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ClusterOutcome {
    Appended { n_clusters: usize, n_noise: usize, quality: f64 },
    Discarded { reason: String },
}

/// Medoid per cluster: the member minimizing summed in-cluster distance,
/// ties to the lowest row index.
pub fn cluster_medoids(distances: &DistanceMatrix, labels: &[Option<usize>]) -> Vec<usize> {
    let k = labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);
    (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Some(c)).collect();
            let mut best = (f64::INFINITY, usize::MAX);
            for &i in &members {
                let total: f64 = members.iter().map(|&j| distances.get(i, j)).sum();
                if total < best.0 {
                    best = (total, i);
                }
            }
            best.1
        })
        .collect()
}

/// Mean squared distance of clustered (non-noise) points to their medoid.
pub fn cluster_quality(distances: &DistanceMatrix, labels: &[Option<usize>]) -> f64 {
    let medoids = cluster_medoids(distances, labels);
    let (sum, count) = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|c| distances.get(i, medoids[c]).powi(2)))
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    if count == 0 {
        f64::INFINITY
    } else {
        sum / count as f64
    }
}

/// Appends the `__cluster` feature when clustering is good enough.
pub fn cluster_feature(table: &FeatureTable, cfg: &ClusterConfig) -> (FeatureTable, ClusterOutcome) {
    let discard = |reason: String| {
        tracing::info!(%reason, "cluster feature discarded");
        (table.clone(), ClusterOutcome::Discarded { reason })
    };
    if table.features.is_empty() || table.n_rows < 2 {
        return discard("table too small to cluster".into());
    }
    if table.n_rows > cfg.max_rows {
        return discard(format!("{} rows exceed the clustering cap of {}", table.n_rows, cfg.max_rows));
    }
    let distances = match gower_distance_matrix(table) {
        Ok(d) => d,
        Err(e) => return discard(e.to_string()),
    };
    let labels = match hdbscan_cluster(&distances, cfg) {
        Ok(l) => l,
        Err(e) => return discard(e.to_string()),
    };
    let n_clusters = labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);
    if n_clusters < 2 {
        return discard(format!("{n_clusters} cluster(s) found"));
    }
    let quality = cluster_quality(&distances, &labels);
    if quality > cfg.sse_threshold {
        return discard(format!("clustering error {quality:.4} exceeds {}", cfg.sse_threshold));
    }
    let n_noise = labels.iter().filter(|l| l.is_none()).count();
    let codes: Vec<u32> = labels.iter().map(|l| l.unwrap_or(n_clusters) as u32).collect();
    let mut categories: Vec<String> = (0..n_clusters).map(|c| format!("cluster_{c}")).collect();
    if n_noise > 0 {
        categories.push("noise".into());
    }
    let mut out = table.clone();
    out.features.push(Feature {
        name: CLUSTER_FEATURE.to_string(),
        source_kind: FeatureKind::NonNumericCategorical,
        values: FeatureValues::Discrete(codes),
        categories,
        missing_imputed: 0,
        outliers_clipped: 0,
        description: String::new(),
        synthetic: true,
    });
    (out, ClusterOutcome::Appended { n_clusters, n_noise, quality })
}

/// Human-readable type label used in prompts and the report.
pub fn type_label(feature: &Feature) -> &'static str {
    match (feature.kind(), feature.source_kind) {
        (crate::table_ingest::ValueKind::Continuous, _) => "continuous",
        (_, FeatureKind::DiscreteNumeric) => "discrete",
        _ => "categorical",
    }
}

/// Fills every feature's description with one LLM call per feature.
/// Failed calls leave a placeholder.
pub fn describe_features(table: &mut FeatureTable, stats: &[FeatureStats], llm: &LlmClient) {
    let requests: Vec<LlmRequest> = table
        .features
        .iter()
        .zip(stats)
        .map(|(f, s)| {
            let categories: Vec<_> = f.category_mapping().into_iter().take(20).collect();
            LlmRequest::new(
                PromptKind::FeatureDescription,
                json!({
                    "dataset": table.dataset_description,
                    "feature": f.name,
                    "type": type_label(f),
                    "statistics": s,
                    "categories": categories,
                    "missing_imputed": f.missing_imputed,
                    "outliers_clipped": f.outliers_clipped,
                }),
            )
        })
        .collect();
    for (f, answer) in table.features.iter_mut().zip(llm.chat_batch(&requests)) {
        f.description = match answer {
            Ok(text) => text.trim().to_string(),
            Err(e) => {
                tracing::warn!(feature = %f.name, error = %e, "feature description failed");
                crate::llm_gateway::PLACEHOLDER_DESCRIPTION.to_string()
            }
        };
    }
}
