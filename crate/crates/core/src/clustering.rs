//! Per-class k-means, anchor selection, and IQR outlier removal.
//!
//! Under [`Metric::Cosine`] rows are L2-normalized before clustering and
//! centroids are renormalized after every update (spherical k-means), so
//! squared-Euclidean assignment orders points the same way cosine
//! similarity does. Under [`Metric::L2`] rows are used as given.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::Label;
use crate::math::{self, QuantileSpec};

pub const MAX_LLOYD_ITERATIONS: usize = 100;
pub const IQR_FENCE: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    L2,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "l2" => Ok(Metric::L2),
            other => Err(format!("unknown metric {other:?} (expected cosine or l2)")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::L2 => "l2",
        })
    }
}

impl Metric {
    /// Distance of `x` from `centroid`: `1 - cos` or Euclidean. A zero-norm
    /// member has no direction and is placed at cosine distance 1.
    pub fn distance(self, x: &[f64], centroid: &[f64]) -> f64 {
        match self {
            Metric::Cosine => 1.0 - math::cosine_similarity(x, centroid).unwrap_or(0.0),
            Metric::L2 => math::squared_distance(x, centroid).sqrt(),
        }
    }

    fn prepare(self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match self {
            Metric::Cosine => rows
                .iter()
                .map(|r| {
                    let mut v = r.clone();
                    math::normalize_in_place(&mut v);
                    v
                })
                .collect(),
            Metric::L2 => rows.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    /// Row index to cluster index.
    pub assignment: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().unwrap_or(&0.0)
    }
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = math::squared_distance(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn mean_of(rows: &[Vec<f64>], members: impl Iterator<Item = usize>, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for i in members {
        for (s, x) in sum.iter_mut().zip(&rows[i]) {
            *s += x;
        }
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

/// Mean of the members, renormalized under the cosine metric. `None` when
/// there are no members or the cosine mean has zero length.
pub fn centroid_of(rows: &[Vec<f64>], members: &[usize], metric: Metric) -> Option<Vec<f64>> {
    let dim = rows.first()?.len();
    let mut c = mean_of(rows, members.iter().copied(), dim)?;
    if metric == Metric::Cosine && !math::normalize_in_place(&mut c) {
        return None;
    }
    Some(c)
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| math::squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` past the final partial sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every remaining point coincides with a centroid
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(math::squared_distance(p, c));
        }
    }
    centroids
}

/// Lloyd iterations from k-means++ seeding. Stops when the assignment is
/// unchanged or after [`MAX_LLOYD_ITERATIONS`].
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64, metric: Metric) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if k > rows.len() {
        return Err(Error::KTooLarge { k, rows: rows.len() });
    }
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let points = metric.prepare(rows);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(&points, k, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut inertia = 0.0;
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let (j, d) = nearest(p, &centroids);
                inertia += d;
                j
            })
            .collect();
        inertia_trace.push(inertia);
        if next == assignment {
            break;
        }
        assignment = next;
        for (j, c) in centroids.iter_mut().enumerate() {
            let members = assignment.iter().enumerate().filter(|(_, &a)| a == j).map(|(i, _)| i);
            if let Some(mut m) = mean_of(&points, members, dim) {
                // an empty cluster, or a zero spherical mean, keeps its centroid
                if metric == Metric::L2 || math::normalize_in_place(&mut m) {
                    *c = m;
                }
            }
        }
    }
    Ok(KMeansResult {
        centroids,
        assignment,
        inertia_trace,
        iterations,
    })
}

/// Member closest to the centroid: highest cosine similarity, or smallest
/// Euclidean distance. Ties go to the lowest row index.
pub fn select_anchor(
    rows: &[Vec<f64>],
    members: &[usize],
    centroid: &[f64],
    metric: Metric,
) -> Result<usize> {
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(usize, f64)> = None;
    for &i in &sorted {
        let score = match metric {
            Metric::Cosine => math::cosine_similarity(&rows[i], centroid).unwrap_or(f64::NEG_INFINITY),
            Metric::L2 => -math::squared_distance(&rows[i], centroid),
        };
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyCluster)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqrOutcome {
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    pub centroid: Vec<f64>,
    pub q1: f64,
    pub q3: f64,
    pub upper_bound: f64,
    /// The fence would have removed every member, so nothing was removed.
    pub degenerate: bool,
}

/// IQR fence on member-to-centroid distances: `upper = Q3 + 1.5 (Q3 - Q1)`,
/// keep members with distance strictly below `upper`, then recompute the
/// centroid over the survivors.
pub fn iqr_filter(
    rows: &[Vec<f64>],
    members: &[usize],
    centroid: &[f64],
    metric: Metric,
) -> Result<IqrOutcome> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let distances: Vec<f64> = members.iter().map(|&i| metric.distance(&rows[i], centroid)).collect();
    let q1 = math::quantile(&distances, QuantileSpec::linear(0.25)?)?;
    let q3 = math::quantile(&distances, QuantileSpec::linear(0.75)?)?;
    let upper_bound = q3 + IQR_FENCE * (q3 - q1);
    let (mut kept, mut removed) = (Vec::new(), Vec::new());
    for (&i, &d) in members.iter().zip(&distances) {
        if d < upper_bound {
            kept.push(i);
        } else {
            removed.push(i);
        }
    }
    let degenerate = kept.is_empty();
    if degenerate {
        kept = members.to_vec();
        removed.clear();
    }
    let centroid = centroid_of(rows, &kept, metric).unwrap_or_else(|| centroid.to_vec());
    Ok(IqrOutcome {
        kept,
        removed,
        centroid,
        q1,
        q3,
        upper_bound,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub metric: Metric,
    pub k_per_class: usize,
    pub seed: u64,
    pub remove_outliers: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub label: Label,
    /// Surviving members (row indices into the clustered rows).
    pub members: Vec<usize>,
    pub removed: Vec<usize>,
    pub centroid: Vec<f64>,
    pub anchor: usize,
    pub degenerate: bool,
}

/// Class-pure clusters over a labeled row set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub metric: Metric,
    pub k_per_class: usize,
    pub clusters: Vec<Cluster>,
    /// Row index to cluster id.
    pub assignment: Vec<usize>,
    pub outlier: Vec<bool>,
}

impl ClusterModel {
    /// Clusters each label separately with `min(k_per_class, class size)`
    /// clusters. With `remove_outliers`, every cluster is IQR-filtered and
    /// its anchor is chosen against the recomputed centroid.
    pub fn build(rows: &[Vec<f64>], labels: &[Label], cfg: &ClusterConfig) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: rows.len(),
                right: labels.len(),
            });
        }
        if cfg.k_per_class == 0 {
            return Err(Error::InvalidConfig("k_per_class must be at least 1".into()));
        }
        let prepared = cfg.metric.prepare(rows);
        let mut clusters = Vec::new();
        let mut assignment = vec![usize::MAX; rows.len()];
        let mut outlier = vec![false; rows.len()];
        for label in [Label::NON_HATE, Label::HATE] {
            let idx: Vec<usize> = (0..rows.len()).filter(|&i| labels[i] == label).collect();
            if idx.is_empty() {
                continue;
            }
            let class_rows: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
            let k = cfg.k_per_class.min(idx.len());
            let km = kmeans(&class_rows, k, cfg.seed.wrapping_add(label.value() as u64), cfg.metric)?;
            for (j, centroid) in km.centroids.iter().enumerate() {
                let members: Vec<usize> = km
                    .assignment
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a == j)
                    .map(|(r, _)| idx[r])
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let cluster_id = clusters.len();
                let (kept, removed, centroid, degenerate) = if cfg.remove_outliers {
                    let out = iqr_filter(&prepared, &members, centroid, cfg.metric)?;
                    (out.kept, out.removed, out.centroid, out.degenerate)
                } else {
                    (members.clone(), Vec::new(), centroid.clone(), false)
                };
                let anchor = select_anchor(&prepared, &kept, &centroid, cfg.metric)?;
                for &m in &members {
                    assignment[m] = cluster_id;
                }
                for &r in &removed {
                    outlier[r] = true;
                }
                clusters.push(Cluster {
                    label,
                    members: kept,
                    removed,
                    centroid,
                    anchor,
                    degenerate,
                });
            }
        }
        Ok(ClusterModel {
            metric: cfg.metric,
            k_per_class: cfg.k_per_class,
            clusters,
            assignment,
            outlier,
        })
    }

    pub fn anchors(&self) -> Vec<(usize, Label)> {
        self.clusters.iter().map(|c| (c.anchor, c.label)).collect()
    }

    pub fn removed_count(&self) -> usize {
        self.outlier.iter().filter(|&&o| o).count()
    }

    /// CSV with columns `cluster_id,label,size,anchor_id,removed_count`.
    /// `size` counts members before outlier removal.
    pub fn write_report(&self, w: impl Write, id_of: impl Fn(usize) -> String) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Invariant(format!("cluster report: {e}"));
        csv.write_record(["cluster_id", "label", "size", "anchor_id", "removed_count"])
            .map_err(io)?;
        for (id, c) in self.clusters.iter().enumerate() {
            csv.write_record([
                id.to_string(),
                c.label.value().to_string(),
                (c.members.len() + c.removed.len()).to_string(),
                id_of(c.anchor),
                c.removed.len().to_string(),
            ])
            .map_err(io)?;
        }
        csv.flush().map_err(|e| Error::Invariant(format!("cluster report: {e}")))?;
        Ok(())
    }
}
