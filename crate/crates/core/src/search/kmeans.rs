use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Bounds, Dataset, GeoPoint};
use crate::error::{Error, Result};
use crate::index::{scaled_loc, write_feature, ClusterIndex, Router};
use crate::par::{self, Parallelism};

/// Weight on the embedding factor used by the spatially weighted baseline.
pub const IVF_S_ALPHA: f64 = 0.9;

/// Feature space clustered by the IVF baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureKind {
    /// L2-normalised embeddings.
    EmbeddingOnly,
    /// `[√α·emb, √(1−α)·lat̂, √(1−α)·lon̂]`, so squared distances are the
    /// α-weighted sum of the embedding and location distances.
    SpatiallyWeighted { alpha: f64 },
}

impl FeatureKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FeatureKind::SpatiallyWeighted { alpha } if !(0.0..=1.0).contains(&alpha) => {
                Err(Error::OutOfRange(format!("alpha = {alpha} must lie in [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self, d: usize) -> usize {
        match self {
            FeatureKind::EmbeddingOnly => d,
            FeatureKind::SpatiallyWeighted { .. } => d + 2,
        }
    }

    pub fn feature(&self, emb: &[f64], loc: &GeoPoint, bounds: &Bounds) -> Vec<f64> {
        let d = emb.len();
        let mut x = vec![0.0; d + 2];
        write_feature(emb, loc, bounds, &mut x);
        match *self {
            FeatureKind::EmbeddingOnly => x.truncate(d),
            FeatureKind::SpatiallyWeighted { alpha } => {
                let (we, ws) = (alpha.sqrt(), (1.0 - alpha).sqrt());
                for v in &mut x[..d] {
                    *v *= we;
                }
                let (lat, lon) = scaled_loc(loc, bounds);
                x[d] = ws * lat;
                x[d + 1] = ws * lon;
            }
        }
        x
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Centroids over a feature map; routes to the nearest centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: Vec<Vec<f64>>,
    pub kind: FeatureKind,
    pub bounds: Bounds,
    /// Embedding dimension `d`.
    pub embedding_dim: usize,
}

impl KMeansModel {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn feature(&self, emb: &[f64], loc: &GeoPoint) -> Vec<f64> {
        self.kind.feature(emb, loc, &self.bounds)
    }

    /// The `cr` nearest centroids, nearest first, ties to the lowest id.
    pub fn nearest(&self, x: &[f64], cr: usize) -> Vec<usize> {
        nearest_of(&self.centroids, x, cr)
    }
}

fn nearest_of(centroids: &[Vec<f64>], x: &[f64], cr: usize) -> Vec<usize> {
    if cr == 1 {
        return vec![argmin(centroids, x).0];
    }
    let d: Vec<f64> = centroids.iter().map(|c| sq_dist(c, x)).collect();
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|a, b| d[*a].total_cmp(&d[*b]).then(a.cmp(b)));
    idx.truncate(cr);
    idx
}

fn argmin(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d.total_cmp(&best.1) == Ordering::Less {
            best = (i, d);
        }
    }
    best
}

/// Result of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia: Vec<f64>,
}

fn plus_plus_seed(features: &[Vec<f64>], c: usize, rng: &mut ChaCha8Rng, mode: Parallelism) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut centroids = vec![features[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = par::map_slice(mode, features, |x| sq_dist(x, &centroids[0]));
    while centroids.len() < c {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let cen = features[pick].clone();
        let upd = par::map_range(mode, n, |i| d2[i].min(sq_dist(&features[i], &cen)));
        d2 = upd;
        centroids.push(cen);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. Stops after `max_iters`
/// assignment steps or once assignments stop changing. A cluster left empty
/// is moved onto the point farthest from its current centroid.
pub fn kmeans(features: &[Vec<f64>], c: usize, max_iters: usize, seed: u64, mode: Parallelism) -> Result<KMeansFit> {
    let n = features.len();
    if c == 0 {
        return Err(Error::OutOfRange("cluster count must be >= 1".into()));
    }
    if n < c {
        return Err(Error::OutOfRange(format!("k-means needs at least {c} points, got {n}")));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(features, c, &mut rng, mode);
    let mut assignments: Vec<usize> = Vec::new();
    let mut inertia = Vec::new();
    for _ in 0..max_iters.max(1) {
        let scored = par::map_slice(mode, features, |x| argmin(&centroids, x));
        let next: Vec<usize> = scored.iter().map(|s| s.0).collect();
        inertia.push(scored.iter().map(|s| s.1).sum());
        let stable = next == assignments;
        assignments = next;
        if stable {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; c];
        let mut counts = vec![0usize; c];
        for (x, &a) in features.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for k in 0..c {
            if counts[k] > 0 {
                let inv = 1.0 / counts[k] as f64;
                centroids[k] = sums[k].iter().map(|s| s * inv).collect();
            }
        }
        for k in 0..c {
            if counts[k] == 0 {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .map(|i| (i, sq_dist(&features[i], &centroids[assignments[i]])))
                    .fold(None, |best: Option<(usize, f64)>, cur| match best {
                        Some(b) if b.1 >= cur.1 => Some(b),
                        _ => Some(cur),
                    });
                if let Some((i, _)) = far {
                    taken[i] = true;
                    centroids[k] = features[i].clone();
                }
            }
        }
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        inertia,
    })
}

/// Clusters the dataset's objects with k-means in the chosen feature space
/// and returns the resulting inverted-list index.
pub fn ivf_build(
    dataset: &Dataset,
    c: usize,
    kind: FeatureKind,
    max_iters: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<ClusterIndex> {
    kind.validate()?;
    let bounds = dataset.bounds;
    let features = par::map_slice(mode, &dataset.objects, |o| kind.feature(o.emb.as_slice(), &o.loc, &bounds));
    let fit = kmeans(&features, c, max_iters, seed, mode)?;
    let model = KMeansModel {
        centroids: fit.centroids,
        kind,
        bounds,
        embedding_dim: dataset.dim(),
    };
    ClusterIndex::build(&dataset.objects, bounds, Router::KMeans(model), 1, mode)
}

/// The `cr` nearest centroids for a query under `model`'s feature map.
pub fn ivf_route(emb: &[f64], loc: &GeoPoint, model: &KMeansModel, cr: usize) -> Result<Vec<usize>> {
    Error::check_dim(model.dim(), emb.len())?;
    if cr == 0 || cr > model.num_clusters() {
        return Err(Error::OutOfRange(format!("cr = {cr} must be in [1, {}]", model.num_clusters())));
    }
    Ok(model.nearest(&model.feature(emb, loc), cr))
}
