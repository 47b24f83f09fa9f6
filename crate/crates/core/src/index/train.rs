use log::warn;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Dataset, SpatialQuery, Split};
use crate::error::{Error, Result};
use crate::index::classifier::ClusterClassifier;
use crate::index::feature::write_feature;
use crate::index::mcl::mcl_loss_grad;
use crate::index::pseudo::{generate_pseudo_pools, PseudoLabelConfig};
use crate::nn::{softmax, softmax_backward, Optimizer};
use crate::par::{self, Parallelism};
use crate::relevance::RelevanceModel;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Used for pseudo-label generation and feature construction; the
    /// optimisation loop itself is sequential.
    pub parallelism: Parallelism,
}

impl Default for IndexTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            parallelism: Parallelism::default(),
        }
    }
}

impl IndexTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("batch_size must be >= 1".to_string());
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
pub struct IndexTrainReport {
    /// Mean MCL loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub skipped_queries: Vec<u64>,
}

/// Training queries that have positives, plus the ids of those skipped.
fn usable_queries(dataset: &Dataset) -> (Vec<&SpatialQuery>, Vec<u64>) {
    let mut keep = Vec::new();
    let mut skipped = Vec::new();
    for q in dataset.queries_in(Split::Train) {
        if dataset.truth.positives(q.id).is_empty() {
            warn!("training query {} has no positives; skipped", q.id);
            skipped.push(q.id);
        } else {
            keep.push(q);
        }
    }
    (keep, skipped)
}

/// Generates pseudo-negative pools with the frozen `rel_model`, then trains
/// `clf` with the MCL objective.
pub fn train_index(
    dataset: &Dataset,
    rel_model: &RelevanceModel,
    clf: ClusterClassifier,
    pseudo: &PseudoLabelConfig,
    config: &IndexTrainConfig,
) -> Result<(ClusterClassifier, IndexTrainReport)> {
    config.validate()?;
    pseudo.validate(dataset.objects.len())?;
    let (queries, _) = usable_queries(dataset);
    let pools = generate_pseudo_pools(dataset, &queries, rel_model, pseudo, config.parallelism)?;
    train_index_with_pools(dataset, clf, &pools, pseudo.m, config)
}

/// Trains `clf` given one pseudo-negative pool per usable training query
/// (in [`Dataset::queries_in`] order, skipping queries without positives).
pub fn train_index_with_pools(
    dataset: &Dataset,
    mut clf: ClusterClassifier,
    pools: &[Vec<u64>],
    m: usize,
    config: &IndexTrainConfig,
) -> Result<(ClusterClassifier, IndexTrainReport)> {
    config.validate()?;
    Error::check_dim(dataset.dim(), clf.dim())?;
    if m == 0 {
        return Err(Error::InvalidConfig(vec!["m must be >= 1".into()]));
    }
    let (queries, skipped) = usable_queries(dataset);
    Error::check_dim(queries.len(), pools.len())?;
    let mut report = IndexTrainReport {
        skipped_queries: skipped,
        ..Default::default()
    };
    if queries.is_empty() {
        return Err(Error::InvalidDataset("no training queries with positives".into()));
    }

    let fd = dataset.dim() + 2;
    let bounds = dataset.bounds;
    let mut obj_feats = vec![0.0; dataset.objects.len() * fd];
    par::for_each_chunk_mut(config.parallelism, &mut obj_feats, fd * 256, |start, chunk| {
        for (j, row) in chunk.chunks_mut(fd).enumerate() {
            let o = &dataset.objects[start / fd + j];
            write_feature(o.emb.as_slice(), &o.loc, &bounds, row);
        }
    });
    let q_feats: Vec<Vec<f64>> = queries
        .iter()
        .map(|q| {
            let mut x = vec![0.0; fd];
            write_feature(q.emb.as_slice(), &q.loc, &bounds, &mut x);
            x
        })
        .collect();
    let obj_feat = |id: u64| -> &[f64] {
        let i = dataset.object_index(id).expect("pools and truth reference validated ids");
        &obj_feats[i * fd..(i + 1) * fd]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::adam(config.learning_rate, clf.net().num_params())?;
    let mut order: Vec<usize> = (0..queries.len()).filter(|&i| !pools[i].is_empty()).collect();
    if order.len() < queries.len() {
        warn!("{} training queries have empty pseudo-negative pools", queries.len() - order.len());
    }
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let net = clf.net();
            let mut grads = vec![0.0; net.num_params()];
            let scale = 1.0 / batch.len() as f64;
            for &qi in batch {
                let pos = dataset.truth.positives(queries[qi].id);
                let pos_id = pos[rng.random_range(0..pos.len())];
                let pool = &pools[qi];
                let negs: Vec<u64> = index::sample(&mut rng, pool.len(), m.min(pool.len()))
                    .into_iter()
                    .map(|i| pool[i])
                    .collect();

                let mut inputs: Vec<&[f64]> = vec![&q_feats[qi], obj_feat(pos_id)];
                inputs.extend(negs.iter().map(|&id| obj_feat(id)));
                let traces = inputs
                    .iter()
                    .map(|x| net.forward_trace(x))
                    .collect::<Result<Vec<_>>>()?;
                let probs: Vec<Vec<f64>> = traces.iter().map(|t| softmax(t.output())).collect();
                let neg_probs: Vec<&[f64]> = probs[2..].iter().map(Vec::as_slice).collect();
                let g = mcl_loss_grad(&probs[0], &probs[1], &neg_probs);
                loss_sum += g.loss;

                let upstream = std::iter::once(&g.d_q).chain(std::iter::once(&g.d_pos)).chain(&g.d_negs);
                for ((trace, prob), d_prob) in traces.iter().zip(&probs).zip(upstream) {
                    let scaled: Vec<f64> = d_prob.iter().map(|v| v * scale).collect();
                    net.backward(trace, &softmax_backward(prob, &scaled), &mut grads)?;
                }
            }
            opt.step(clf.net_mut().params_mut(), &grads)?;
        }
        report
            .epoch_losses
            .push(if order.is_empty() { 0.0 } else { loss_sum / order.len() as f64 });
    }
    clf.net_mut().round_to_f32();
    Ok((clf, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Embedding, GeoObject, GeoPoint, GroundTruthSet};
    use crate::index::{evaluate_clusters, partition};
    use crate::relevance::{SpatialRelevance, WeightHead};
    use rand_distr::{Distribution, Normal};

    /// Two blobs far apart in space and orthogonal in embedding space;
    /// queries are labelled with the nearest objects of their own blob.
    pub(crate) fn two_blobs(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let centers = [(39.8, 116.2), (40.1, 116.6)];
        let dirs = [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let mut objects = Vec::new();
        for i in 0..120u64 {
            let b = (i % 2) as usize;
            objects.push(GeoObject {
                id: i,
                loc: GeoPoint::new(centers[b].0 + noise.sample(&mut rng) * 0.2, centers[b].1 + noise.sample(&mut rng) * 0.2),
                emb: Embedding::new(dirs[b].iter().map(|v| v + noise.sample(&mut rng)).collect()).unwrap(),
            });
        }
        let mut queries = Vec::new();
        let mut records = Vec::new();
        for j in 0..60u64 {
            let b = (j % 2) as usize;
            let q = SpatialQuery {
                id: 1000 + j,
                loc: GeoPoint::new(centers[b].0 + noise.sample(&mut rng) * 0.2, centers[b].1 + noise.sample(&mut rng) * 0.2),
                emb: Embedding::new(dirs[b].iter().map(|v| v + noise.sample(&mut rng)).collect()).unwrap(),
                k: 3,
            };
            let mut same: Vec<&GeoObject> = objects.iter().filter(|o| o.id % 2 == b as u64).collect();
            same.sort_by(|a, c| a.loc.euclid(&q.loc).total_cmp(&c.loc.euclid(&q.loc)));
            let split = if j < 48 { Split::Train } else { Split::Val };
            for o in &same[..3] {
                records.push((q.id, o.id, split));
            }
            queries.push(q);
        }
        Dataset::new(objects, queries, GroundTruthSet::from_records(records).unwrap()).unwrap()
    }

    fn rel(ds: &Dataset) -> RelevanceModel {
        RelevanceModel::new(SpatialRelevance::Linear, WeightHead::constant(ds.dim(), [1.0, 1.0]).unwrap(), ds.dist_max)
            .unwrap()
    }

    fn cfg(epochs: usize) -> IndexTrainConfig {
        IndexTrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 0.01,
            seed: 3,
            parallelism: Parallelism::Rayon,
        }
    }

    const PSEUDO: PseudoLabelConfig = PseudoLabelConfig {
        neg_start: 60,
        neg_end: 117,
        m: 4,
    };

    #[test]
    fn zero_epochs_leave_classifier_unchanged() {
        let ds = two_blobs(1);
        let clf = ClusterClassifier::new(4, 2, 3, 16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (out, report) = train_index(&ds, &rel(&ds), clf.clone(), &PSEUDO, &cfg(0)).unwrap();
        assert_eq!(out, clf);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn two_blobs_separate_perfectly() {
        let ds = two_blobs(1);
        let clf = ClusterClassifier::new(4, 2, 3, 16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (trained, report) = train_index(&ds, &rel(&ds), clf, &PSEUDO, &cfg(40)).unwrap();
        let l = &report.epoch_losses;
        assert!(l[3..5].iter().sum::<f64>() < l[0..2].iter().sum::<f64>(), "{l:?}");
        let idx = partition(&ds, trained, 1, Parallelism::Rayon).unwrap();
        assert!(idx.cluster_sizes().iter().all(|&s| s > 0));
        let val = ds.queries_in(Split::Val);
        let q = evaluate_clusters(&idx, &val, &ds.truth).unwrap();
        assert_eq!(q.precision, 1.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let ds = two_blobs(2);
        let make = || ClusterClassifier::new(4, 3, 3, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let a = train_index(&ds, &rel(&ds), make(), &PSEUDO, &cfg(3)).unwrap();
        let b = train_index(&ds, &rel(&ds), make(), &PSEUDO, &cfg(3)).unwrap();
        assert_eq!(a, b);
        let seq = IndexTrainConfig {
            parallelism: Parallelism::Sequential,
            ..cfg(3)
        };
        assert_eq!(train_index(&ds, &rel(&ds), make(), &PSEUDO, &seq).unwrap().0, a.0);
    }
}
