use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::domain::{dot, s_dist_unchecked, Dataset, Embedding, GeoObject, GeoPoint, GroundTruthSet, SpatialQuery, Split};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::search::top_k;

/// Latitude/longitude box the generator places everything in.
pub const LAT_RANGE: (f64, f64) = (39.6, 40.2);
pub const LON_RANGE: (f64, f64) = (116.0, 116.8);

/// Shape of the hidden distance preference used to pick positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayKind {
    /// Three plateaus, all below SDist 0.1.
    Step,
    Exponential,
    Linear,
}

impl DecayKind {
    pub fn value(self, sdist: f64) -> f64 {
        match self {
            DecayKind::Step => {
                if sdist < 0.02 {
                    1.0
                } else if sdist < 0.05 {
                    0.6
                } else if sdist < 0.1 {
                    0.3
                } else {
                    0.0
                }
            }
            DecayKind::Exponential => (-sdist / 0.05).exp(),
            DecayKind::Linear => 1.0 - sdist,
        }
    }
}

impl fmt::Display for DecayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecayKind::Step => "step",
            DecayKind::Exponential => "exponential",
            DecayKind::Linear => "linear",
        })
    }
}

impl FromStr for DecayKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(DecayKind::Step),
            "exponential" | "exp" => Ok(DecayKind::Exponential),
            "linear" => Ok(DecayKind::Linear),
            other => Err(Error::InvalidConfig(vec![format!(
                "unknown distance decay {other:?} (expected step, exponential, linear)"
            )])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_objects: usize,
    pub n_queries: usize,
    pub d: usize,
    /// Number of planted (embedding centroid, spatial hotspot) topics.
    pub n_topics: usize,
    /// Per-coordinate standard deviation around a topic's unit centroid.
    pub topic_embedding_spread: f64,
    /// Standard deviation, in degrees, around a topic's hotspot.
    pub spatial_hotspot_spread: f64,
    /// Query perturbation relative to the object spreads; 0 puts every
    /// query exactly on its topic's centroid and hotspot.
    pub query_noise: f64,
    pub positives_per_query: usize,
    pub distance_decay: DecayKind,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_objects: 20_000,
            n_queries: 2_000,
            d: 32,
            n_topics: 10,
            topic_embedding_spread: 0.25,
            spatial_hotspot_spread: 0.02,
            query_noise: 1.0,
            positives_per_query: 10,
            distance_decay: DecayKind::Step,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n_objects == 0 {
            bad.push("n_objects must be >= 1".to_string());
        }
        if self.n_queries == 0 {
            bad.push("n_queries must be >= 1".to_string());
        }
        if self.d < 2 {
            bad.push(format!("d must be >= 2, got {}", self.d));
        }
        if self.n_topics == 0 || self.n_topics > self.n_objects.min(1000) {
            bad.push(format!(
                "n_topics must be in [1, min(n_objects, 1000)], got {}",
                self.n_topics
            ));
        }
        for (name, v) in [
            ("topic_embedding_spread", self.topic_embedding_spread),
            ("spatial_hotspot_spread", self.spatial_hotspot_spread),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.query_noise >= 0.0 && self.query_noise.is_finite()) {
            bad.push(format!("query_noise must be >= 0, got {}", self.query_noise));
        }
        if self.positives_per_query == 0 || self.positives_per_query > self.n_objects {
            bad.push(format!(
                "positives_per_query must be in [1, n_objects], got {}",
                self.positives_per_query
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }
}

/// A planted joint cluster: objects and queries of the topic scatter around
/// the unit embedding centroid and the spatial hotspot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTopic {
    pub centroid: Vec<f64>,
    pub hotspot: GeoPoint,
}

/// Topic index of every generated object and query, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicLabels {
    pub objects: Vec<usize>,
    pub queries: Vec<usize>,
}

fn unit_f32(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter()
        .map(|x| if n > 0.0 { (x / n) as f32 as f64 } else { x as f32 as f64 })
        .collect()
}

fn around(center: &GeoPoint, sd: f64, rng: &mut ChaCha8Rng) -> GeoPoint {
    let noise = |rng: &mut ChaCha8Rng| -> f64 {
        if sd > 0.0 {
            Normal::new(0.0, sd).expect("positive sd").sample(rng)
        } else {
            0.0
        }
    };
    let lat = (center.lat + noise(rng)).clamp(LAT_RANGE.0, LAT_RANGE.1);
    let lon = (center.lon + noise(rng)).clamp(LON_RANGE.0, LON_RANGE.1);
    GeoPoint::new(lat, lon)
}

fn perturbed(centroid: &[f64], sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    unit_f32(
        centroid
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(rng);
                c + sd * z
            })
            .collect(),
    )
}

/// Generates a dataset with planted topics and click-style ground truth:
/// each query's positives are the objects maximising
/// `cos(q, o) + decay(SDist(q, o))`.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let margin_lat = 0.1 * (LAT_RANGE.1 - LAT_RANGE.0);
    let margin_lon = 0.1 * (LON_RANGE.1 - LON_RANGE.0);
    let topics: Vec<PlantedTopic> = (0..cfg.n_topics)
        .map(|_| {
            let raw: Vec<f64> = (0..cfg.d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let hotspot = GeoPoint::new(
                rng.random_range(LAT_RANGE.0 + margin_lat..LAT_RANGE.1 - margin_lat),
                rng.random_range(LON_RANGE.0 + margin_lon..LON_RANGE.1 - margin_lon),
            );
            PlantedTopic {
                centroid: unit_f32(raw),
                hotspot,
            }
        })
        .collect();
    Ok(populate(cfg, &topics, &mut rng)?.0)
}

/// Like [`generate`] but with caller-supplied topics (`cfg.n_topics` is
/// ignored); also returns each entity's topic.
pub fn generate_planted(cfg: &SynthConfig, topics: &[PlantedTopic]) -> Result<(Dataset, TopicLabels)> {
    SynthConfig {
        n_topics: topics.len(),
        ..cfg.clone()
    }
    .validate()?;
    for t in topics {
        Error::check_dim(cfg.d, t.centroid.len())?;
        t.hotspot.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let topics: Vec<PlantedTopic> = topics
        .iter()
        .map(|t| PlantedTopic {
            centroid: unit_f32(t.centroid.clone()),
            hotspot: t.hotspot,
        })
        .collect();
    populate(cfg, &topics, &mut rng)
}

fn populate(cfg: &SynthConfig, topics: &[PlantedTopic], rng: &mut ChaCha8Rng) -> Result<(Dataset, TopicLabels)> {
    let n_topics = topics.len();
    let mut labels = TopicLabels {
        objects: Vec::with_capacity(cfg.n_objects),
        queries: Vec::with_capacity(cfg.n_queries),
    };
    let objects: Vec<GeoObject> = (0..cfg.n_objects)
        .map(|i| {
            let ti = rng.random_range(0..n_topics);
            labels.objects.push(ti);
            let t = &topics[ti];
            let emb = perturbed(&t.centroid, cfg.topic_embedding_spread, rng);
            GeoObject {
                id: i as u64,
                loc: around(&t.hotspot, cfg.spatial_hotspot_spread, rng),
                emb: Embedding::new(emb).expect("finite generated embedding"),
            }
        })
        .collect();
    let queries: Vec<SpatialQuery> = (0..cfg.n_queries)
        .map(|j| {
            let ti = rng.random_range(0..n_topics);
            labels.queries.push(ti);
            let t = &topics[ti];
            let emb = perturbed(&t.centroid, cfg.query_noise * cfg.topic_embedding_spread, rng);
            SpatialQuery {
                id: j as u64,
                loc: around(&t.hotspot, cfg.query_noise * cfg.spatial_hotspot_spread, rng),
                emb: Embedding::new(emb).expect("finite generated embedding"),
                k: cfg.positives_per_query,
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.n_queries).collect();
    order.shuffle(rng);
    let mut split = vec![Split::Train; cfg.n_queries];
    let n_train = (cfg.n_queries * 8).div_ceil(10);
    let n_val = (cfg.n_queries - n_train) / 2;
    for (rank, &j) in order.iter().enumerate() {
        split[j] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    // extent first, so the hidden score uses the same SDist as the models
    let probe = Dataset::new(objects, queries, GroundTruthSet::default())?;
    let dist_max = probe.dist_max;
    let positives = par::map_slice(Parallelism::default(), &probe.queries, |q| {
        top_k(
            probe.objects.iter().map(|o| {
                let cos = dot(q.emb.as_slice(), o.emb.as_slice());
                let g = cos + cfg.distance_decay.value(s_dist_unchecked(&q.loc, &o.loc, dist_max));
                (o.id, g)
            }),
            cfg.positives_per_query,
        )
    });
    let split = &split;
    let records = probe
        .queries
        .iter()
        .zip(&positives)
        .flat_map(|(q, pos)| pos.iter().map(move |s| (q.id, s.object_id, split[q.id as usize])));
    let truth = GroundTruthSet::from_records(records)?;
    let Dataset { objects, queries, .. } = probe;
    Ok((Dataset::new(objects, queries, truth)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_objects: 600,
            n_queries: 50,
            d: 8,
            n_topics: 4,
            positives_per_query: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn validation_lists_all_violations() {
        let cfg = SynthConfig {
            d: 1,
            n_topics: 0,
            topic_embedding_spread: 0.0,
            ..small()
        };
        match cfg.validate() {
            Err(Error::InvalidConfig(v)) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic_and_well_formed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.truth.records().len(), 50 * 5);
        for q in &a.queries {
            assert_eq!(a.truth.positives(q.id).len(), 5);
        }
        let counts = [Split::Train, Split::Val, Split::Test].map(|s| a.queries_in(s).len());
        assert_eq!(counts, [40, 5, 5]);
        for o in &a.objects {
            assert!(o.emb.as_slice().iter().all(|&v| v as f32 as f64 == v));
        }
    }

    #[test]
    fn single_topic_without_noise_shares_positives() {
        let cfg = SynthConfig {
            n_topics: 1,
            query_noise: 0.0,
            ..small()
        };
        let ds = generate(&cfg).unwrap();
        let first = ds.truth.positives(0).to_vec();
        let q = &ds.queries[0];
        let global = top_k(
            ds.objects.iter().map(|o| {
                let g = dot(q.emb.as_slice(), o.emb.as_slice())
                    + DecayKind::Step.value(s_dist_unchecked(&q.loc, &o.loc, ds.dist_max));
                (o.id, g)
            }),
            5,
        );
        assert_eq!(first, global.iter().map(|s| s.object_id).collect::<Vec<_>>());
        for q in &ds.queries {
            assert_eq!(ds.truth.positives(q.id), &first[..]);
        }
    }

    #[test]
    fn separated_topics_never_share_positives() {
        let mut a = vec![0.0; 8];
        a[0] = 1.0;
        let mut b = vec![0.0; 8];
        b[5] = 1.0;
        let topics = [
            PlantedTopic {
                centroid: a,
                hotspot: GeoPoint::new(39.7, 116.1),
            },
            PlantedTopic {
                centroid: b,
                hotspot: GeoPoint::new(40.1, 116.7),
            },
        ];
        let (ds, labels) = generate_planted(&small(), &topics).unwrap();
        assert!(labels.objects.contains(&0) && labels.objects.contains(&1));
        for &(q, o) in ds.truth.records() {
            assert_eq!(labels.queries[q as usize], labels.objects[o as usize], "query {q} object {o}");
        }
    }

    #[test]
    fn step_decay_concentrates_positives_nearby() {
        let ds = generate(&small()).unwrap();
        let near = ds
            .truth
            .records()
            .iter()
            .filter(|(q, o)| {
                let (q, o) = (ds.query(*q).unwrap(), ds.object(*o).unwrap());
                s_dist_unchecked(&q.loc, &o.loc, ds.dist_max) < 0.1
            })
            .count();
        assert!(near as f64 >= 0.7 * ds.truth.records().len() as f64, "{near}");
    }
}
