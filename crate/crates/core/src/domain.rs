//! Domain types shared by every stage of the pipeline: locations, embeddings,
//! objects, queries, ground truth, and the dataset container.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

/// Above this many objects the exact O(n²) diameter is replaced by the
/// bounding-box diagonal.
pub const EXACT_DIAMETER_LIMIT: usize = 50_000;

/// A planar location; `lat`/`lon` are treated as Euclidean coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    /// Checks the point is finite and within geographic ranges.
    pub fn validate(&self) -> Result<()> {
        if !self.lat.is_finite() || !self.lon.is_finite() {
            return Err(Error::OutOfRange(format!("non-finite location {self}")));
        }
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::OutOfRange(format!("location {self} outside lat/lon range")));
        }
        Ok(())
    }

    pub fn euclid(&self, other: &GeoPoint) -> f64 {
        let dlat = self.lat - other.lat;
        let dlon = self.lon - other.lon;
        (dlat * dlat + dlon * dlon).sqrt()
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// A dense d-dimensional embedding with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::OutOfRange("embedding must have d >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!("non-finite embedding entry at {i}")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Inner product with a fixed four-lane accumulation order, so every caller
/// gets bitwise-identical results for the same pair.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoObject {
    pub id: u64,
    pub loc: GeoPoint,
    pub emb: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialQuery {
    pub id: u64,
    pub loc: GeoPoint,
    pub emb: Embedding,
    pub k: usize,
}

/// Min/max coordinates over a set of locations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Bounds {
    pub fn diagonal(&self) -> f64 {
        GeoPoint::new(self.lat_min, self.lon_min).euclid(&GeoPoint::new(self.lat_max, self.lon_max))
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat) && (self.lon_min..=self.lon_max).contains(&p.lon)
    }
}

/// Bounds and normalising diameter of an object set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub bounds: Bounds,
    pub dist_max: f64,
    /// `false` when `dist_max` is the bounding-box diagonal rather than the
    /// exact diameter.
    pub exact: bool,
}

/// Elementwise bounds and Euclidean diameter of `objects`.
pub fn compute_bounds_and_distmax(objects: &[GeoObject]) -> Result<Extent> {
    let locs: Vec<GeoPoint> = objects.iter().map(|o| o.loc).collect();
    extent_of_points(&locs, Parallelism::default())
}

pub(crate) fn extent_of_points(locs: &[GeoPoint], mode: Parallelism) -> Result<Extent> {
    let first = locs.first().ok_or(Error::EmptyDataset)?;
    let mut bounds = Bounds {
        lat_min: first.lat,
        lat_max: first.lat,
        lon_min: first.lon,
        lon_max: first.lon,
    };
    for p in locs {
        bounds.lat_min = bounds.lat_min.min(p.lat);
        bounds.lat_max = bounds.lat_max.max(p.lat);
        bounds.lon_min = bounds.lon_min.min(p.lon);
        bounds.lon_max = bounds.lon_max.max(p.lon);
    }
    if locs.len() > EXACT_DIAMETER_LIMIT {
        return Ok(Extent {
            bounds,
            dist_max: bounds.diagonal(),
            exact: false,
        });
    }
    let row_max = par::map_range(mode, locs.len(), |i| {
        let a = &locs[i];
        locs[i + 1..].iter().map(|b| a.euclid(b)).fold(0.0f64, f64::max)
    });
    let dist_max = row_max.into_iter().fold(0.0f64, f64::max);
    Ok(Extent {
        bounds,
        dist_max,
        exact: true,
    })
}

/// Normalised Euclidean distance, clamped to `[0, 1]`.
pub fn s_dist(a: &GeoPoint, b: &GeoPoint, dist_max: f64) -> Result<f64> {
    if !(dist_max > 0.0) {
        return Err(Error::DegenerateDiameter(dist_max));
    }
    Ok(s_dist_unchecked(a, b, dist_max))
}

/// [`s_dist`] without the diameter check; callers validate `dist_max` once.
#[inline]
pub(crate) fn s_dist_unchecked(a: &GeoPoint, b: &GeoPoint, dist_max: f64) -> f64 {
    (a.euclid(b) / dist_max).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Positive (query, object) records plus a per-query split assignment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    records: Vec<(u64, u64)>,
    positives: HashMap<u64, Vec<u64>>,
    splits: HashMap<u64, Split>,
}

impl GroundTruthSet {
    /// Builds from `(query, object, split)` records. A query's records must
    /// all carry the same split.
    pub fn from_records(records: impl IntoIterator<Item = (u64, u64, Split)>) -> Result<Self> {
        let mut gt = GroundTruthSet::default();
        for (q, o, split) in records {
            match gt.splits.get(&q) {
                Some(s) if *s != split => {
                    return Err(Error::InvalidDataset(format!(
                        "query {q} appears in both {s} and {split} splits"
                    )))
                }
                _ => {
                    gt.splits.insert(q, split);
                }
            }
            let pos = gt.positives.entry(q).or_default();
            if pos.contains(&o) {
                return Err(Error::InvalidDataset(format!("duplicate record ({q}, {o})")));
            }
            pos.push(o);
            gt.records.push((q, o));
        }
        Ok(gt)
    }

    pub fn records(&self) -> &[(u64, u64)] {
        &self.records
    }

    pub fn positives(&self, query: u64) -> &[u64] {
        self.positives.get(&query).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `s(q, o)`.
    pub fn is_positive(&self, query: u64, object: u64) -> bool {
        self.positives(query).contains(&object)
    }

    pub fn split_of(&self, query: u64) -> Option<Split> {
        self.splits.get(&query).copied()
    }
}

/// Objects, queries, ground truth, and the normalising extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub objects: Vec<GeoObject>,
    pub queries: Vec<SpatialQuery>,
    pub truth: GroundTruthSet,
    pub bounds: Bounds,
    pub dist_max: f64,
    pub dist_max_exact: bool,
    object_pos: HashMap<u64, usize>,
    query_pos: HashMap<u64, usize>,
}

impl Dataset {
    /// Validates ids, dimensions, locations, and record references, then
    /// computes the extent from the objects.
    pub fn new(objects: Vec<GeoObject>, queries: Vec<SpatialQuery>, truth: GroundTruthSet) -> Result<Self> {
        let first = objects.first().ok_or(Error::EmptyDataset)?;
        let d = first.emb.dim();
        let mut object_pos = HashMap::with_capacity(objects.len());
        for (i, o) in objects.iter().enumerate() {
            Error::check_dim(d, o.emb.dim())?;
            o.loc.validate()?;
            if object_pos.insert(o.id, i).is_some() {
                return Err(Error::DuplicateId(o.id));
            }
        }
        let mut query_pos = HashMap::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            Error::check_dim(d, q.emb.dim())?;
            q.loc.validate()?;
            if q.k == 0 {
                return Err(Error::InvalidDataset(format!("query {} has k = 0", q.id)));
            }
            if query_pos.insert(q.id, i).is_some() {
                return Err(Error::InvalidDataset(format!("duplicate query id {}", q.id)));
            }
        }
        for &(q, o) in truth.records() {
            if !query_pos.contains_key(&q) {
                return Err(Error::InvalidDataset(format!("record references unknown query {q}")));
            }
            if !object_pos.contains_key(&o) {
                return Err(Error::InvalidDataset(format!("record references unknown object {o}")));
            }
        }
        let locs: Vec<GeoPoint> = objects.iter().map(|o| o.loc).collect();
        let extent = extent_of_points(&locs, Parallelism::default())?;
        Ok(Self {
            objects,
            queries,
            truth,
            bounds: extent.bounds,
            dist_max: extent.dist_max,
            dist_max_exact: extent.exact,
            object_pos,
            query_pos,
        })
    }

    pub fn dim(&self) -> usize {
        self.objects[0].emb.dim()
    }

    pub fn object(&self, id: u64) -> Option<&GeoObject> {
        self.object_pos.get(&id).map(|&i| &self.objects[i])
    }

    pub fn object_index(&self, id: u64) -> Option<usize> {
        self.object_pos.get(&id).copied()
    }

    pub fn query(&self, id: u64) -> Option<&SpatialQuery> {
        self.query_pos.get(&id).map(|&i| &self.queries[i])
    }

    /// Queries assigned to `split`, in file order.
    pub fn queries_in(&self, split: Split) -> Vec<&SpatialQuery> {
        self.queries
            .iter()
            .filter(|q| self.truth.split_of(q.id) == Some(split))
            .collect()
    }

    /// Bounds and normalising diameter of the object set.
    pub fn extent(&self) -> Extent {
        Extent {
            bounds: self.bounds,
            dist_max: self.dist_max,
            exact: self.dist_max_exact,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obj(id: u64, lat: f64, lon: f64) -> GeoObject {
        GeoObject {
            id,
            loc: GeoPoint::new(lat, lon),
            emb: Embedding::new(vec![1.0]).unwrap(),
        }
    }

    #[test]
    fn two_point_extent() {
        let e = compute_bounds_and_distmax(&[obj(0, 0.0, 0.0), obj(1, 3.0, 4.0)]).unwrap();
        assert_eq!(
            e.bounds,
            Bounds {
                lat_min: 0.0,
                lat_max: 3.0,
                lon_min: 0.0,
                lon_max: 4.0
            }
        );
        assert_eq!(e.dist_max, 5.0);
        assert!(e.exact);
    }

    #[test]
    fn single_object_has_zero_diameter() {
        let e = compute_bounds_and_distmax(&[obj(0, 1.0, 2.0)]).unwrap();
        assert_eq!(e.dist_max, 0.0);
        let p = GeoPoint::new(1.0, 2.0);
        assert!(matches!(s_dist(&p, &p, e.dist_max), Err(Error::DegenerateDiameter(_))));
    }

    #[test]
    fn empty_objects_rejected() {
        assert!(matches!(compute_bounds_and_distmax(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn diameter_matches_pairwise_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let objs: Vec<GeoObject> = (0..100)
            .map(|i| obj(i, rng.random_range(-10.0..10.0), rng.random_range(-20.0..20.0)))
            .collect();
        let mut oracle = 0.0f64;
        let mut pairs = 0;
        for i in 0..objs.len() {
            for j in i + 1..objs.len() {
                let (a, b) = (objs[i].loc, objs[j].loc);
                oracle = oracle.max(((a.lat - b.lat).powi(2) + (a.lon - b.lon).powi(2)).sqrt());
                pairs += 1;
            }
        }
        assert_eq!(pairs, 4950);
        assert_eq!(compute_bounds_and_distmax(&objs).unwrap().dist_max, oracle);
    }

    #[test]
    fn large_sets_fall_back_to_diagonal() {
        let objs: Vec<GeoObject> = (0..EXACT_DIAMETER_LIMIT as u64 + 1)
            .map(|i| obj(i, (i % 7) as f64, (i % 13) as f64))
            .collect();
        let e = compute_bounds_and_distmax(&objs).unwrap();
        assert!(!e.exact);
        assert_eq!(e.dist_max, (36.0f64 + 144.0).sqrt());
    }

    #[test]
    fn s_dist_examples() {
        let a = GeoPoint::new(0.0, 0.0);
        assert_eq!(s_dist(&a, &a, 1.0).unwrap(), 0.0);
        assert_eq!(s_dist(&a, &GeoPoint::new(3.0, 4.0), 10.0).unwrap(), 0.5);
        assert_eq!(s_dist(&a, &GeoPoint::new(30.0, 40.0), 10.0).unwrap(), 1.0);
        assert!(s_dist(&a, &a, -1.0).is_err());
    }

    #[test]
    fn s_dist_matches_naive_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let a = GeoPoint::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let b = GeoPoint::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let naive = ((a.lat - b.lat).hypot(a.lon - b.lon) / 200.0).min(1.0);
            assert!((s_dist(&a, &b, 200.0).unwrap() - naive).abs() <= 1e-12);
        }
    }

    #[test]
    fn dot_handles_tails() {
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        let a: Vec<f64> = (1..=7).map(f64::from).collect();
        assert_eq!(dot(&a, &a), 140.0);
    }

    #[test]
    fn truth_rejects_split_conflicts() {
        let err = GroundTruthSet::from_records([(1, 2, Split::Train), (1, 3, Split::Test)]);
        assert!(err.is_err());
        let gt = GroundTruthSet::from_records([(1, 2, Split::Train), (1, 3, Split::Train)]).unwrap();
        assert!(gt.is_positive(1, 3));
        assert!(!gt.is_positive(1, 4));
        assert_eq!(gt.positives(9), &[] as &[u64]);
    }

    #[test]
    fn dataset_validates_references() {
        let objects = vec![obj(0, 0.0, 0.0), obj(1, 1.0, 1.0)];
        let q = SpatialQuery {
            id: 7,
            loc: GeoPoint::new(0.5, 0.5),
            emb: Embedding::new(vec![1.0]).unwrap(),
            k: 1,
        };
        let bad = GroundTruthSet::from_records([(7, 5, Split::Train)]).unwrap();
        assert!(Dataset::new(objects.clone(), vec![q.clone()], bad).is_err());
        let good = GroundTruthSet::from_records([(7, 1, Split::Train)]).unwrap();
        let ds = Dataset::new(objects.clone(), vec![q], good).unwrap();
        assert_eq!(ds.queries_in(Split::Train).len(), 1);
        assert_eq!(ds.object(1).unwrap().loc, GeoPoint::new(1.0, 1.0));

        let dup = vec![obj(0, 0.0, 0.0), obj(0, 1.0, 1.0)];
        assert!(matches!(
            Dataset::new(dup, vec![], GroundTruthSet::default()),
            Err(Error::DuplicateId(0))
        ));
    }

    proptest::proptest! {
        #[test]
        fn s_dist_symmetric_and_bounded(a0 in -80.0..80.0f64, a1 in -170.0..170.0f64,
                                        b0 in -80.0..80.0f64, b1 in -170.0..170.0f64,
                                        dm in 0.1..500.0f64) {
            let a = GeoPoint::new(a0, a1);
            let b = GeoPoint::new(b0, b1);
            let ab = s_dist(&a, &b, dm).unwrap();
            proptest::prop_assert_eq!(ab, s_dist(&b, &a, dm).unwrap());
            proptest::prop_assert!((0.0..=1.0).contains(&ab));
            proptest::prop_assert_eq!(ab == 0.0, a == b);
        }
    }
}
