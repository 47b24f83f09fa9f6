//! Retrieval metrics (Recall@k, NDCG@k), the evaluation loop with latency
//! and scan-cost statistics, and effectiveness–efficiency sweeps.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::binio::atomic_write;
use crate::domain::{GroundTruthSet, SpatialQuery};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::search::SearchOutcome;

/// `|top-k ∩ positives| / |positives|`; `None` without positives.
pub fn recall_at_k(ids: &[u64], positives: &[u64], k: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let hits = ids.iter().take(k).filter(|id| positives.contains(id)).count();
    Some(hits as f64 / positives.len() as f64)
}

/// Binary-relevance NDCG with a `log2(i + 1)` discount for 1-based rank `i`.
/// `None` without positives.
pub fn ndcg_at_k(ids: &[u64], positives: &[u64], k: usize) -> Option<f64> {
    if positives.is_empty() || k == 0 {
        return None;
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ids
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| positives.contains(id))
        .map(|(i, _)| discount(i))
        .sum();
    let idcg: f64 = (0..positives.len().min(k)).map(discount).sum();
    Some(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub recall_ks: Vec<usize>,
    pub ndcg_ks: Vec<usize>,
    pub parallelism: Parallelism,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            recall_ks: vec![10, 20],
            ndcg_ks: vec![1, 5],
            parallelism: Parallelism::Sequential,
        }
    }
}

impl EvalConfig {
    pub fn depth(&self) -> usize {
        self.recall_ks.iter().chain(&self.ndcg_ks).copied().max().unwrap_or(1)
    }

    fn validate(&self) -> Result<()> {
        if self.recall_ks.iter().chain(&self.ndcg_ks).any(|&k| k == 0) {
            return Err(Error::InvalidConfig(vec!["metric cut-offs must be >= 1".into()]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: u64,
    /// Aligned with [`MetricReport::recall_ks`].
    pub recall: Vec<f64>,
    /// Aligned with [`MetricReport::ndcg_ks`].
    pub ndcg: Vec<f64>,
    pub latency_ns: u64,
    pub candidates_scanned: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub recall_ks: Vec<usize>,
    pub ndcg_ks: Vec<usize>,
    pub per_query: Vec<QueryMetrics>,
    pub mean_recall: Vec<f64>,
    pub mean_ndcg: Vec<f64>,
    pub mean_latency_ns: f64,
    pub median_latency_ns: f64,
    pub mean_candidates: f64,
    pub max_candidates: usize,
    /// Queries without positives, left out of every mean.
    pub excluded: Vec<u64>,
    /// Queries whose routed clusters were all empty.
    pub empty_routes: usize,
}

impl MetricReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_ks.iter().position(|&x| x == k).map(|i| self.mean_recall[i])
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.ndcg_ks.iter().position(|&x| x == k).map(|i| self.mean_ndcg[i])
    }

    /// Metric/value pairs in a fixed order.
    pub fn summary(&self) -> Vec<(String, f64)> {
        let mut v = Vec::new();
        for (k, m) in self.recall_ks.iter().zip(&self.mean_recall) {
            v.push((format!("recall@{k}"), *m));
        }
        for (k, m) in self.ndcg_ks.iter().zip(&self.mean_ndcg) {
            v.push((format!("ndcg@{k}"), *m));
        }
        v.push(("queries".into(), self.per_query.len() as f64));
        v.push(("excluded_queries".into(), self.excluded.len() as f64));
        v.push(("mean_latency_ns".into(), self.mean_latency_ns));
        v.push(("median_latency_ns".into(), self.median_latency_ns));
        v.push(("mean_candidates".into(), self.mean_candidates));
        v.push(("max_candidates".into(), self.max_candidates as f64));
        v
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, value) in self.summary() {
            let _ = writeln!(s, "{name:<20} {value}");
        }
        s
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "metric,value")?;
        for (name, value) in self.summary() {
            writeln!(out, "{name},{value}")?;
        }
        Ok(())
    }
}

fn median(sorted: &[u64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2] as f64,
        n => (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0,
    }
}

/// Runs `search(q, depth)` for every query with positives and aggregates
/// metrics, wall-clock latency of the search call, and scan counts.
pub fn evaluate<F>(search: F, queries: &[&SpatialQuery], truth: &GroundTruthSet, config: &EvalConfig) -> Result<MetricReport>
where
    F: Fn(&SpatialQuery, usize) -> Result<SearchOutcome> + Sync,
{
    config.validate()?;
    let depth = config.depth();
    let (kept, excluded): (Vec<&SpatialQuery>, Vec<&SpatialQuery>) =
        queries.iter().copied().partition(|q| !truth.positives(q.id).is_empty());
    let excluded: Vec<u64> = excluded.iter().map(|q| q.id).collect();
    if !excluded.is_empty() {
        warn!("{} queries without positives excluded from metrics", excluded.len());
    }
    let runs = par::map_slice(config.parallelism, &kept, |q| {
        let start = Instant::now();
        let outcome = search(q, depth)?;
        let latency_ns = start.elapsed().as_nanos() as u64;
        Ok((outcome, latency_ns))
    });
    let mut per_query = Vec::with_capacity(kept.len());
    let mut empty_routes = 0;
    for (q, run) in kept.iter().zip(runs) {
        let (outcome, latency_ns): (SearchOutcome, u64) = run?;
        let ids: Vec<u64> = outcome.results.iter().map(|s| s.object_id).collect();
        let pos = truth.positives(q.id);
        empty_routes += usize::from(outcome.empty_route);
        per_query.push(QueryMetrics {
            query_id: q.id,
            recall: config.recall_ks.iter().map(|&k| recall_at_k(&ids, pos, k).unwrap()).collect(),
            ndcg: config.ndcg_ks.iter().map(|&k| ndcg_at_k(&ids, pos, k).unwrap()).collect(),
            latency_ns,
            candidates_scanned: outcome.candidates_scanned,
        });
    }
    let n = per_query.len().max(1) as f64;
    let mean_of = |f: &dyn Fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    let mean_recall = (0..config.recall_ks.len()).map(|i| mean_of(&|m| m.recall[i])).collect();
    let mean_ndcg = (0..config.ndcg_ks.len()).map(|i| mean_of(&|m| m.ndcg[i])).collect();
    let mean_latency_ns = mean_of(&|m| m.latency_ns as f64);
    let mean_candidates = mean_of(&|m| m.candidates_scanned as f64);
    let mut lat: Vec<u64> = per_query.iter().map(|m| m.latency_ns).collect();
    lat.sort_unstable();
    Ok(MetricReport {
        recall_ks: config.recall_ks.clone(),
        ndcg_ks: config.ndcg_ks.clone(),
        max_candidates: per_query.iter().map(|m| m.candidates_scanned).max().unwrap_or(0),
        per_query,
        mean_recall,
        mean_ndcg,
        mean_latency_ns,
        median_latency_ns: median(&lat),
        mean_candidates,
        excluded,
        empty_routes,
    })
}

/// One point of an effectiveness–efficiency trade-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub system: String,
    pub param_name: String,
    pub param_value: f64,
    pub recall10: f64,
    pub recall20: f64,
    pub ndcg1: f64,
    pub ndcg5: f64,
    pub mean_latency_ns: f64,
    pub mean_candidates: f64,
}

type SearchFn<'a> = Box<dyn Fn(&SpatialQuery, usize) -> Result<SearchOutcome> + Sync + 'a>;

/// A configured system to evaluate in a sweep.
pub struct SweepPoint<'a> {
    pub system: String,
    pub param_name: String,
    pub param_value: f64,
    pub search: SearchFn<'a>,
}

impl<'a> SweepPoint<'a> {
    pub fn new(
        system: impl Into<String>,
        param_name: impl Into<String>,
        param_value: f64,
        search: impl Fn(&SpatialQuery, usize) -> Result<SearchOutcome> + Sync + 'a,
    ) -> Self {
        Self {
            system: system.into(),
            param_name: param_name.into(),
            param_value,
            search: Box::new(search),
        }
    }
}

/// Evaluates every point at Recall@{10,20} and NDCG@{1,5}.
pub fn tradeoff_sweep(
    points: &[SweepPoint<'_>],
    queries: &[&SpatialQuery],
    truth: &GroundTruthSet,
    parallelism: Parallelism,
) -> Result<Vec<TradeoffRow>> {
    let config = EvalConfig {
        recall_ks: vec![10, 20],
        ndcg_ks: vec![1, 5],
        parallelism,
    };
    points
        .iter()
        .map(|p| {
            let r = evaluate(&p.search, queries, truth, &config)?;
            Ok(TradeoffRow {
                system: p.system.clone(),
                param_name: p.param_name.clone(),
                param_value: p.param_value,
                recall10: r.mean_recall[0],
                recall20: r.mean_recall[1],
                ndcg1: r.mean_ndcg[0],
                ndcg5: r.mean_ndcg[1],
                mean_latency_ns: r.mean_latency_ns,
                mean_candidates: r.mean_candidates,
            })
        })
        .collect()
}

pub fn write_tradeoff_csv(out: impl Write, rows: &[TradeoffRow]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tradeoff_csv(input: impl Read) -> std::result::Result<Vec<TradeoffRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn write_tradeoff_file(path: &Path, rows: &[TradeoffRow]) -> Result<()> {
    atomic_write(path, |w| {
        write_tradeoff_csv(w, rows).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
    })
}

pub fn read_tradeoff_file(path: &Path) -> Result<Vec<TradeoffRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tradeoff_csv(std::io::BufReader::new(f)).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Embedding, GeoObject, GeoPoint, Split};
    use crate::search::{brute_force_outcome, ScoredObject};
    use crate::Dataset;
    use std::collections::HashSet;

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[1, 9, 8], &[1, 2], 3), Some(0.5));
        assert_eq!(recall_at_k(&[2, 5, 1], &[1, 2], 3), Some(1.0));
        assert_eq!(recall_at_k(&[2, 5, 1], &[1, 2], 2), Some(0.5));
        assert_eq!(recall_at_k(&[2], &[], 3), None);
    }

    #[test]
    fn ndcg_examples() {
        let v = ndcg_at_k(&[7, 3, 8], &[7, 8], 3).unwrap();
        let idcg = 1.0 + 1.0 / 3f64.log2();
        assert!((idcg - 1.63093).abs() < 1e-5);
        assert!((v - 1.5 / idcg).abs() < 1e-15);
        assert!((v - 0.91972).abs() < 1e-5);
        assert_eq!(ndcg_at_k(&[1, 2, 9], &[2, 1], 3), Some(1.0));
        assert_eq!(ndcg_at_k(&[4, 1], &[4], 1), Some(1.0));
        assert_eq!(ndcg_at_k(&[1, 4], &[4], 1), Some(0.0));
    }

    proptest::proptest! {
        #[test]
        fn recall_matches_set_oracle(
            ids in proptest::collection::vec(0u64..30, 0..25),
            pos in proptest::collection::btree_set(0u64..30, 1..10),
            k in 1usize..30,
        ) {
            let mut seen = HashSet::new();
            let ids: Vec<u64> = ids.into_iter().filter(|i| seen.insert(*i)).collect();
            let pos: Vec<u64> = pos.into_iter().collect();
            let top: HashSet<u64> = ids.iter().take(k).copied().collect();
            let want: HashSet<u64> = pos.iter().copied().collect();
            let oracle = top.intersection(&want).count() as f64 / want.len() as f64;
            proptest::prop_assert_eq!(recall_at_k(&ids, &pos, k), Some(oracle));
            let n = ndcg_at_k(&ids, &pos, k).unwrap();
            proptest::prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        }
    }

    /// Five objects on a line; with weight only on the spatial term the
    /// ranking is by distance from the query at the origin.
    fn toy() -> Dataset {
        let objects = (0..5)
            .map(|i| GeoObject {
                id: i,
                loc: GeoPoint::new(0.0, i as f64),
                emb: Embedding::new(vec![1.0]).unwrap(),
            })
            .collect();
        let queries = vec![
            SpatialQuery {
                id: 10,
                loc: GeoPoint::new(0.0, 0.0),
                emb: Embedding::new(vec![1.0]).unwrap(),
                k: 2,
            },
            SpatialQuery {
                id: 11,
                loc: GeoPoint::new(0.0, 4.0),
                emb: Embedding::new(vec![1.0]).unwrap(),
                k: 2,
            },
            SpatialQuery {
                id: 12,
                loc: GeoPoint::new(0.0, 2.0),
                emb: Embedding::new(vec![1.0]).unwrap(),
                k: 2,
            },
        ];
        let truth = GroundTruthSet::from_records([(10, 1, Split::Test), (10, 4, Split::Test), (11, 0, Split::Test)])
            .unwrap();
        Dataset::new(objects, queries, truth).unwrap()
    }

    #[test]
    fn brute_force_toy_hand_values() {
        use crate::relevance::{RelevanceModel, SpatialRelevance, WeightHead};
        let ds = toy();
        let m = RelevanceModel::new(SpatialRelevance::Linear, WeightHead::constant(1, [0.0, 1.0]).unwrap(), ds.dist_max)
            .unwrap();
        let cfg = EvalConfig {
            recall_ks: vec![1, 2],
            ndcg_ks: vec![1, 2],
            parallelism: Parallelism::Rayon,
        };
        let qs: Vec<&SpatialQuery> = ds.queries.iter().collect();
        let r = evaluate(|q, k| brute_force_outcome(q, &ds, &m, k), &qs, &ds.truth, &cfg).unwrap();
        // q10 ranks 0,1,2,3,4 (positives 1,4): recall@1 0, recall@2 0.5,
        // ndcg@1 0, ndcg@2 (1/log2 3)/(1 + 1/log2 3).
        // q11 ranks 4,3,2,1,0 (positive 0): everything 0.
        // q12 has no positives and is excluded.
        assert_eq!(r.excluded, vec![12]);
        assert_eq!(r.per_query.len(), 2);
        assert_eq!(r.mean_recall, vec![0.0, 0.25]);
        let l3 = 1.0 / 3f64.log2();
        assert_eq!(r.mean_ndcg[0], 0.0);
        assert!((r.mean_ndcg[1] - l3 / (1.0 + l3) / 2.0).abs() < 1e-15);
        assert_eq!(r.mean_candidates, 5.0);
        let again = evaluate(|q, k| brute_force_outcome(q, &ds, &m, k), &qs, &ds.truth, &cfg).unwrap();
        assert_eq!(again.mean_recall, r.mean_recall);
        assert_eq!(again.mean_ndcg, r.mean_ndcg);
        assert!(r.to_text().contains("recall@2"));
    }

    #[test]
    fn tradeoff_csv_round_trips() {
        let rows = vec![
            TradeoffRow {
                system: "list".into(),
                param_name: "cr".into(),
                param_value: 2.0,
                recall10: 0.1 + 0.2,
                recall20: 1.0 / 3.0,
                ndcg1: 0.0,
                ndcg5: 1.0,
                mean_latency_ns: 12345.678,
                mean_candidates: 2000.5,
            },
            TradeoffRow {
                system: "brute".into(),
                param_name: "none".into(),
                param_value: 0.0,
                recall10: 0.5,
                recall20: 0.75,
                ndcg1: 0.25,
                ndcg5: std::f64::consts::PI / 4.0,
                mean_latency_ns: 1e9,
                mean_candidates: 20000.0,
            },
        ];
        let mut buf = Vec::new();
        write_tradeoff_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "system,param_name,param_value,recall10,recall20,ndcg1,ndcg5,mean_latency_ns,mean_candidates\n"
        ));
        assert_eq!(read_tradeoff_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn sweep_produces_one_row_per_point() {
        let ds = toy();
        let qs: Vec<&SpatialQuery> = ds.queries.iter().collect();
        let fixed = |ids: Vec<u64>| {
            move |_: &SpatialQuery, _: usize| {
                Ok(SearchOutcome {
                    results: ids.iter().map(|&object_id| ScoredObject { object_id, score: 0.0 }).collect(),
                    candidates_scanned: 5,
                    empty_route: false,
                })
            }
        };
        let points = vec![
            SweepPoint::new("a", "cr", 1.0, fixed(vec![0, 1])),
            SweepPoint::new("b", "cr", 2.0, fixed(vec![4, 0, 1])),
        ];
        let rows = tradeoff_sweep(&points, &qs, &ds.truth, Parallelism::Sequential).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].recall10, (0.5 + 1.0) / 2.0);
        assert_eq!(rows[1].recall10, 1.0);
        assert_eq!(rows[1].ndcg1, 0.5);
        assert_eq!(rows[0].mean_candidates, 5.0);
    }
}
