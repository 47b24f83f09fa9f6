use std::collections::HashMap;

use log::warn;

use crate::domain::{GroundTruthSet, SpatialQuery};
use crate::error::{Error, Result};
use crate::index::ClusterIndex;

/// Precision and balance of a partition with respect to a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterQualityReport {
    /// `P(C_i)`; `None` for clusters no query was routed to.
    pub cluster_precision: Vec<Option<f64>>,
    /// Number of evaluated queries routed to each cluster.
    pub routed_queries: Vec<usize>,
    /// Query-weighted mean `P(C)`.
    pub precision: f64,
    /// `Σ|C_i|² / (Σ|C_i|)²`.
    pub imbalance: f64,
    /// `c · IF(C)`, equal to 1 for a perfectly balanced partition.
    pub normalized_imbalance: f64,
    pub sizes: Vec<usize>,
    /// Queries left out because they have no positives.
    pub excluded_queries: Vec<u64>,
}

/// `(IF, IF')` for the given cluster sizes.
pub fn imbalance(sizes: &[usize]) -> (f64, f64) {
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    if total == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let sq: f64 = sizes.iter().map(|&s| (s as f64) * (s as f64)).sum();
    let f = sq / (total * total);
    (f, f * sizes.len() as f64)
}

/// Aggregates per-query `(routed cluster, fraction of positives inside it)`
/// into a report.
pub fn quality_from_routes(sizes: Vec<usize>, routes: &[(usize, f64)], excluded: Vec<u64>) -> Result<ClusterQualityReport> {
    let c = sizes.len();
    if routes.is_empty() {
        return Err(Error::InvalidDataset("no queries with positives to evaluate clusters".into()));
    }
    let mut sum = vec![0.0; c];
    let mut count = vec![0usize; c];
    for &(ci, frac) in routes {
        if ci >= c {
            return Err(Error::OutOfRange(format!("cluster {ci} out of {c}")));
        }
        sum[ci] += frac;
        count[ci] += 1;
    }
    let cluster_precision: Vec<Option<f64>> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &k)| (k > 0).then(|| s / k as f64))
        .collect();
    let weighted: f64 = cluster_precision
        .iter()
        .zip(&count)
        .filter_map(|(p, &k)| p.map(|p| p * k as f64))
        .sum();
    let (imbalance, normalized_imbalance) = imbalance(&sizes);
    Ok(ClusterQualityReport {
        cluster_precision,
        routed_queries: count,
        precision: weighted / routes.len() as f64,
        imbalance,
        normalized_imbalance,
        sizes,
        excluded_queries: excluded,
    })
}

/// Routes each query to its single best cluster and measures which share of
/// its positives that cluster holds.
pub fn evaluate_clusters(
    index: &ClusterIndex,
    queries: &[&SpatialQuery],
    truth: &GroundTruthSet,
) -> Result<ClusterQualityReport> {
    let mut member: HashMap<u64, Vec<usize>> = HashMap::with_capacity(index.len());
    for (ci, list) in index.lists().iter().enumerate() {
        for &id in list {
            member.entry(id).or_default().push(ci);
        }
    }
    let mut routes = Vec::with_capacity(queries.len());
    let mut excluded = Vec::new();
    for q in queries {
        let pos = truth.positives(q.id);
        if pos.is_empty() {
            excluded.push(q.id);
            continue;
        }
        let ci = index.route(q.emb.as_slice(), &q.loc, 1)?[0];
        let inside = pos
            .iter()
            .filter(|id| member.get(id).is_some_and(|cs| cs.contains(&ci)))
            .count();
        routes.push((ci, inside as f64 / pos.len() as f64));
    }
    if !excluded.is_empty() {
        warn!("{} queries without positives excluded from cluster precision", excluded.len());
    }
    quality_from_routes(index.cluster_sizes(), &routes, excluded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance(&[5, 5]), (0.5, 1.0));
        assert_eq!(imbalance(&[10, 0]), (1.0, 2.0));
        let (f, n) = imbalance(&[7, 7, 7]);
        assert!((f - 1.0 / 3.0).abs() < 1e-15 && (n - 1.0).abs() < 1e-15);
    }

    #[test]
    fn precision_is_query_weighted() {
        // cluster 0: two queries (1.0, 0.5); cluster 2: one query (0.0)
        let r = quality_from_routes(vec![4, 4, 4], &[(0, 1.0), (0, 0.5), (2, 0.0)], vec![]).unwrap();
        assert_eq!(r.cluster_precision, vec![Some(0.75), None, Some(0.0)]);
        assert_eq!(r.routed_queries, vec![2, 0, 1]);
        assert_eq!(r.precision, 0.5);
        assert!(quality_from_routes(vec![1], &[], vec![]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn imbalance_lower_bound(sizes in proptest::collection::vec(0usize..50, 1..12)) {
            proptest::prop_assume!(sizes.iter().sum::<usize>() > 0);
            let (f, n) = imbalance(&sizes);
            let c = sizes.len() as f64;
            proptest::prop_assert!(f >= 1.0 / c - 1e-12);
            proptest::prop_assert!(n >= 1.0 - 1e-12);
            let equal = sizes.iter().all(|&s| s == sizes[0]);
            proptest::prop_assert_eq!(equal, (f - 1.0 / c).abs() < 1e-12);
        }
    }
}
