//! Query processing: exact brute force, routed search over a cluster index,
//! and the k-means baselines used to build IVF-style indexes.

mod kmeans;
mod topk;

use std::io::Write;
use std::path::Path;

pub use kmeans::{ivf_build, ivf_route, kmeans, FeatureKind, KMeansFit, KMeansModel, IVF_S_ALPHA};
pub use topk::{top_k, ScoredObject, TopK};

use crate::binio::atomic_write;
use crate::domain::{Dataset, SpatialQuery};
use crate::error::{Error, Result};
use crate::index::ClusterIndex;
use crate::relevance::RelevanceModel;

/// Ranked results of one query and how many objects were scored.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub results: Vec<ScoredObject>,
    pub candidates_scanned: usize,
    /// Set when every routed cluster was empty.
    pub empty_route: bool,
}

/// Exact top-`k` by the relevance score over every object.
pub fn brute_force_search(
    q: &SpatialQuery,
    dataset: &Dataset,
    model: &RelevanceModel,
    k: usize,
) -> Result<Vec<ScoredObject>> {
    let scorer = model.scorer(q)?;
    Ok(top_k(dataset.objects.iter().map(|o| (o.id, scorer.score(o))), k))
}

/// [`brute_force_search`] wrapped as a [`SearchOutcome`].
pub fn brute_force_outcome(
    q: &SpatialQuery,
    dataset: &Dataset,
    model: &RelevanceModel,
    k: usize,
) -> Result<SearchOutcome> {
    Ok(SearchOutcome {
        results: brute_force_search(q, dataset, model, k)?,
        candidates_scanned: dataset.objects.len(),
        empty_route: false,
    })
}

/// Routes `q` to `cr` clusters and ranks the union of their members.
pub fn list_search(
    q: &SpatialQuery,
    index: &ClusterIndex,
    model: &RelevanceModel,
    k: usize,
    cr: usize,
) -> Result<SearchOutcome> {
    Error::check_dim(model.dim(), index.store().dim())?;
    let clusters = index.route(q.emb.as_slice(), &q.loc, cr)?;
    let slots = index.candidate_slots(&clusters);
    let scorer = model.scorer(q)?;
    let store = index.store();
    let mut top = TopK::new(k);
    for &s in &slots {
        let s = s as usize;
        top.push(store.id(s), scorer.score_parts(store.emb(s), store.loc(s)));
    }
    Ok(SearchOutcome {
        results: top.into_sorted(),
        candidates_scanned: slots.len(),
        empty_route: slots.is_empty(),
    })
}

/// One query's results with its timing, for TSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResults {
    pub query_id: u64,
    pub outcome: SearchOutcome,
    pub elapsed_ns: u64,
}

/// Writes `query_id, rank, object_id, score, candidates_scanned, elapsed_ns`
/// rows (rank starting at 1) with a header line.
pub fn write_results_tsv(out: &mut dyn Write, results: &[QueryResults]) -> std::io::Result<()> {
    writeln!(out, "query_id\trank\tobject_id\tscore\tcandidates_scanned\telapsed_ns")?;
    for r in results {
        for (i, s) in r.outcome.results.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.query_id,
                i + 1,
                s.object_id,
                s.score,
                r.outcome.candidates_scanned,
                r.elapsed_ns
            )?;
        }
    }
    Ok(())
}

pub fn write_results_file(path: &Path, results: &[QueryResults]) -> Result<()> {
    atomic_write(path, |w| write_results_tsv(w, results).map_err(|e| Error::io(path, e)))
}
