use log::warn;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GradAccumulator, RelevanceModel, SpatialKind, SpatialRelevance, StepSpatialModel, WeightHead};
use crate::domain::{dot, s_dist_unchecked, Dataset, GeoObject, SpatialQuery, Split};
use crate::error::{Error, Result};
use crate::nn::Optimizer;
use crate::par::{self, Parallelism};
use crate::search::top_k;

/// Weight on cosine similarity in the hard-negative proxy scorer.
pub const MINING_ALPHA: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Hard negatives sampled per query per epoch (`b`).
    pub hard_negatives: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hard_pool_size: usize,
    pub in_batch_negatives: bool,
    /// Step count `t` of the spatial step function.
    pub steps: usize,
    pub spatial: SpatialKind,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            hard_negatives: 8,
            learning_rate: 1e-3,
            seed: 0,
            hard_pool_size: 100,
            in_batch_negatives: true,
            steps: 1000,
            spatial: SpatialKind::Step,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("hard_negatives", self.hard_negatives),
            ("hard_pool_size", self.hard_pool_size),
            ("steps", self.steps),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be >= 1"));
            }
        }
        if !(self.learning_rate > 0.0) {
            bad.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean contrastive loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub skipped_queries: Vec<u64>,
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn proxy_score(q: &SpatialQuery, q_norm: f64, o: &GeoObject, o_norm: f64, dist_max: f64) -> f64 {
    let denom = q_norm * o_norm;
    let cos = if denom > 0.0 {
        dot(q.emb.as_slice(), o.emb.as_slice()) / denom
    } else {
        0.0
    };
    MINING_ALPHA * cos + (1.0 - MINING_ALPHA) * (1.0 - s_dist_unchecked(&q.loc, &o.loc, dist_max))
}

fn mine_with_norms(q: &SpatialQuery, dataset: &Dataset, norms: &[f64], pool_size: usize) -> Vec<u64> {
    let q_norm = norm(q.emb.as_slice());
    let positives = dataset.truth.positives(q.id);
    let scored = dataset
        .objects
        .iter()
        .zip(norms)
        .filter(|(o, _)| !positives.contains(&o.id))
        .map(|(o, &n)| (o.id, proxy_score(q, q_norm, o, n, dataset.dist_max)));
    let pool: Vec<u64> = top_k(scored, pool_size).into_iter().map(|s| s.object_id).collect();
    if pool.len() < pool_size {
        warn!(
            "query {}: hard pool has {} objects, {} requested",
            q.id,
            pool.len(),
            pool_size
        );
    }
    pool
}

/// Top `pool_size` non-positive objects for `q` under the fixed-weight
/// cosine + proximity proxy.
pub fn mine_hard_negatives(q: &SpatialQuery, dataset: &Dataset, pool_size: usize) -> Result<Vec<u64>> {
    if !(dataset.dist_max > 0.0) {
        return Err(Error::DegenerateDiameter(dataset.dist_max));
    }
    let norms: Vec<f64> = dataset.objects.iter().map(|o| norm(o.emb.as_slice())).collect();
    Ok(mine_with_norms(q, dataset, &norms, pool_size))
}

/// [`mine_hard_negatives`] for many queries.
pub fn mine_hard_pools(
    dataset: &Dataset,
    queries: &[&SpatialQuery],
    pool_size: usize,
    mode: Parallelism,
) -> Result<Vec<Vec<u64>>> {
    if !(dataset.dist_max > 0.0) {
        return Err(Error::DegenerateDiameter(dataset.dist_max));
    }
    let norms = par::map_slice(mode, &dataset.objects, |o| norm(o.emb.as_slice()));
    Ok(par::map_slice(mode, queries, |q| mine_with_norms(q, dataset, &norms, pool_size)))
}

fn initial_model(dataset: &Dataset, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<RelevanceModel> {
    let spatial = match config.spatial {
        SpatialKind::Step => {
            SpatialRelevance::Step(StepSpatialModel::new(config.steps, 1.0 / (config.steps + 1) as f64)?)
        }
        SpatialKind::Linear => SpatialRelevance::ablation_scorers().0,
        SpatialKind::Exp => SpatialRelevance::ablation_scorers().1,
    };
    RelevanceModel::new(spatial, WeightHead::init(dataset.dim(), rng)?, dataset.dist_max)
}

/// Trains the head and spatial parameters with the contrastive objective
/// over hard (and optionally in-batch) negatives. The returned model is
/// frozen: parameters rounded to `f32`, prefix table built.
pub fn train_relevance(dataset: &Dataset, config: &TrainConfig) -> Result<(RelevanceModel, TrainReport)> {
    config.validate()?;
    let mut report = TrainReport::default();
    let mut queries = Vec::new();
    for q in dataset.queries_in(Split::Train) {
        if dataset.truth.positives(q.id).is_empty() {
            warn!("training query {} has no positives; skipped", q.id);
            report.skipped_queries.push(q.id);
        } else {
            queries.push(q);
        }
    }
    if queries.is_empty() {
        return Err(Error::InvalidDataset("no training queries with positives".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = initial_model(dataset, config, &mut rng)?;
    let pools = mine_hard_pools(dataset, &queries, config.hard_pool_size, config.parallelism)?;

    let n_head = model.head.net().num_params();
    let mut opt_head = Optimizer::adam(config.learning_rate, n_head)?;
    let mut opt_spatial = Optimizer::adam(config.learning_rate, model.spatial.num_params().max(1))?;
    let object = |id: u64| dataset.object(id).expect("ground truth references validated ids");

    let mut order: Vec<usize> = (0..queries.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        for batch in order.chunks(config.batch_size) {
            let sampled_pos: Vec<u64> = batch
                .iter()
                .map(|&qi| {
                    let pos = dataset.truth.positives(queries[qi].id);
                    pos[rng.random_range(0..pos.len())]
                })
                .collect();
            let mut examples = Vec::with_capacity(batch.len());
            for (bi, &qi) in batch.iter().enumerate() {
                let q = queries[qi];
                let pool = &pools[qi];
                let take = config.hard_negatives.min(pool.len());
                let mut negs: Vec<u64> = index::sample(&mut rng, pool.len(), take)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect();
                if config.in_batch_negatives {
                    for (bj, &other) in sampled_pos.iter().enumerate() {
                        if bj != bi && !dataset.truth.is_positive(q.id, other) && !negs.contains(&other) {
                            negs.push(other);
                        }
                    }
                }
                if negs.is_empty() {
                    continue;
                }
                examples.push((q, sampled_pos[bi], negs));
            }
            if examples.is_empty() {
                continue;
            }
            let scale = 1.0 / examples.len() as f64;
            let mut acc = GradAccumulator::new(&model);
            for (q, pos, negs) in &examples {
                let neg_refs: Vec<&GeoObject> = negs.iter().map(|&id| object(id)).collect();
                loss_sum += acc.add_example(&model, q.emb.as_slice(), q.loc, object(*pos), &neg_refs, scale)?;
                counted += 1;
            }
            let grads = acc.finish(&model);
            let mut params = model.params();
            let (head_p, spatial_p) = params.split_at_mut(n_head);
            opt_head.step(head_p, &grads[..n_head])?;
            if !spatial_p.is_empty() {
                opt_spatial.step(spatial_p, &grads[n_head..])?;
            }
            model.set_params(&params)?;
        }
        report.epoch_losses.push(if counted > 0 { loss_sum / counted as f64 } else { 0.0 });
    }
    model.freeze();
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Embedding, GeoPoint, GroundTruthSet};

    fn point_dataset() -> Dataset {
        // 6 objects on a line; query 0 sits on object 3 with the same embedding
        let objects: Vec<GeoObject> = (0..6)
            .map(|i| GeoObject {
                id: i,
                loc: GeoPoint::new(0.0, i as f64),
                emb: Embedding::new(if i == 3 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).unwrap(),
            })
            .collect();
        let q = SpatialQuery {
            id: 0,
            loc: GeoPoint::new(0.0, 3.0),
            emb: Embedding::new(vec![1.0, 0.0]).unwrap(),
            k: 2,
        };
        let truth = GroundTruthSet::from_records([(0, 0, Split::Train), (0, 5, Split::Train)]).unwrap();
        Dataset::new(objects, vec![q], truth).unwrap()
    }

    #[test]
    fn exhaustive_pool_returns_every_non_positive() {
        let ds = point_dataset();
        let pool = mine_hard_negatives(&ds.queries[0], &ds, 4).unwrap();
        let mut sorted = pool.clone();
        sorted.sort();
        assert_eq!(sorted, vec![1, 2, 3, 4]);
        // co-located identical object dominates
        assert_eq!(pool[0], 3);
        // asking for more than available returns everything
        assert_eq!(mine_hard_negatives(&ds.queries[0], &ds, 50).unwrap().len(), 4);
    }

    #[test]
    fn config_validation_lists_violations() {
        let cfg = TrainConfig {
            batch_size: 0,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("batch_size") && err.contains("learning_rate"));
    }

    #[test]
    fn zero_epochs_returns_frozen_initialisation() {
        let ds = point_dataset();
        let cfg = TrainConfig {
            epochs: 0,
            steps: 10,
            ..TrainConfig::default()
        };
        let (model, report) = train_relevance(&ds, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = initial_model(&ds, &cfg, &mut rng).unwrap();
        init.freeze();
        assert_eq!(model, init);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = point_dataset();
        let cfg = TrainConfig {
            epochs: 5,
            steps: 10,
            hard_negatives: 2,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let a = train_relevance(&ds, &cfg).unwrap();
        let b = train_relevance(&ds, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let seq = TrainConfig {
            parallelism: Parallelism::Sequential,
            ..cfg
        };
        assert_eq!(train_relevance(&ds, &seq).unwrap().0, a.0);
    }
}
