use log::warn;

use crate::domain::{Dataset, SpatialQuery};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::relevance::RelevanceModel;
use crate::search::top_k;

/// Rank window (0-based, half-open) of pseudo-negatives taken from the
/// frozen relevance model's ordering, and how many are sampled per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoLabelConfig {
    pub neg_start: usize,
    pub neg_end: usize,
    /// Negatives sampled per query per training step.
    pub m: usize,
}

impl PseudoLabelConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut bad = Vec::new();
        if self.neg_start >= self.neg_end {
            bad.push(format!(
                "neg_start ({}) must be < neg_end ({})",
                self.neg_start, self.neg_end
            ));
        }
        if self.neg_end > n {
            bad.push(format!("neg_end ({}) must be <= object count ({n})", self.neg_end));
        }
        if self.m == 0 {
            bad.push("m must be >= 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }
}

fn window(q: &SpatialQuery, dataset: &Dataset, model: &RelevanceModel, cfg: &PseudoLabelConfig) -> Result<Vec<u64>> {
    let scorer = model.scorer(q)?;
    let positives = dataset.truth.positives(q.id);
    let ranked = top_k(
        dataset
            .objects
            .iter()
            .filter(|o| !positives.contains(&o.id))
            .map(|o| (o.id, scorer.score(o))),
        cfg.neg_end,
    );
    if ranked.len() < cfg.neg_end {
        warn!(
            "query {}: pseudo-negative window [{}, {}) truncated to {} ranked objects",
            q.id,
            cfg.neg_start,
            cfg.neg_end,
            ranked.len()
        );
    }
    Ok(ranked
        .into_iter()
        .skip(cfg.neg_start)
        .map(|s| s.object_id)
        .collect())
}

/// Objects at ranks `[neg_start, neg_end)` of the model's ordering for `q`
/// once `q`'s positives are removed.
pub fn generate_pseudo_negatives(
    q: &SpatialQuery,
    dataset: &Dataset,
    model: &RelevanceModel,
    cfg: &PseudoLabelConfig,
) -> Result<Vec<u64>> {
    cfg.validate(dataset.objects.len())?;
    window(q, dataset, model, cfg)
}

/// [`generate_pseudo_negatives`] for many queries, in input order.
pub fn generate_pseudo_pools(
    dataset: &Dataset,
    queries: &[&SpatialQuery],
    model: &RelevanceModel,
    cfg: &PseudoLabelConfig,
    mode: Parallelism,
) -> Result<Vec<Vec<u64>>> {
    cfg.validate(dataset.objects.len())?;
    par::map_slice(mode, queries, |q| window(q, dataset, model, cfg))
        .into_iter()
        .collect()
}
