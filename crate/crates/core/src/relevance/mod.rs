//! The relevance model: textual inner product plus learned spatial relevance,
//! combined with query-dependent weights from a small head network.
//!
//! `ST(q, o) = w_t · (q.emb · o.emb) + w_s · SRel(1 - SDist(q.loc, o.loc))`
//! where `[w_t, w_s]` is the head's output for `q.emb`.

mod io;
mod spatial;
mod train;

pub use io::{read_model, read_model_file, write_model, write_model_file};
pub use spatial::{ExpSpatial, SpatialKind, SpatialRelevance, StepSpatialModel};
pub use train::{mine_hard_negatives, mine_hard_pools, train_relevance, TrainConfig, TrainReport, MINING_ALPHA};

use rand::Rng;

use crate::domain::{dot, s_dist_unchecked, GeoObject, GeoPoint, SpatialQuery};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet};

/// Textual relevance: the raw inner product of two embeddings.
pub fn trel(q_emb: &[f64], o_emb: &[f64]) -> Result<f64> {
    Error::check_dim(q_emb.len(), o_emb.len())?;
    Ok(dot(q_emb, o_emb))
}

#[cfg(test)]
thread_local! {
    static HEAD_FORWARDS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Maps a query embedding to `[textual weight, spatial weight]` with a
/// single affine layer (no output activation, weights may be negative).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHead {
    net: DenseNet,
}

impl WeightHead {
    /// Glorot-uniform weights with biases `[1, 1]`.
    pub fn init(d: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut net = DenseNet::xavier(&[d, 2], &[Activation::Identity], rng)?;
        net.bias_mut(0).copy_from_slice(&[1.0, 1.0]);
        Ok(Self { net })
    }

    /// Constant weights regardless of the query: zero matrix, bias `w`.
    pub fn constant(d: usize, w: [f64; 2]) -> Result<Self> {
        let mut net = DenseNet::zeros(&[d, 2], &[Activation::Identity])?;
        net.bias_mut(0).copy_from_slice(&w);
        Ok(Self { net })
    }

    pub fn from_net(net: DenseNet) -> Result<Self> {
        Error::check_dim(2, net.output_dim())?;
        Ok(Self { net })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn weights(&self, q_emb: &[f64]) -> Result<[f64; 2]> {
        #[cfg(test)]
        HEAD_FORWARDS.with(|c| c.set(c.get() + 1));
        let out = self.net.forward(q_emb)?;
        Ok([out[0], out[1]])
    }
}

/// Which spatial evaluation path to use when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Threshold comparisons against the current weights.
    Training,
    /// Frozen prefix-table lookup.
    Inference,
}

/// Head plus spatial scorer plus the dataset's normalising diameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceModel {
    pub spatial: SpatialRelevance,
    pub head: WeightHead,
    pub dist_max: f64,
}

impl RelevanceModel {
    pub fn new(spatial: SpatialRelevance, head: WeightHead, dist_max: f64) -> Result<Self> {
        if !(dist_max > 0.0) || !dist_max.is_finite() {
            return Err(Error::DegenerateDiameter(dist_max));
        }
        Ok(Self {
            spatial,
            head,
            dist_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    /// `s_in = 1 - SDist`, already clamped to `[0, 1]`.
    #[inline]
    pub fn s_in(&self, a: &GeoPoint, b: &GeoPoint) -> f64 {
        1.0 - s_dist_unchecked(a, b, self.dist_max)
    }

    /// Computes the query's weights once; the returned scorer evaluates
    /// candidates with one dot product and one table lookup each.
    pub fn scorer<'a>(&'a self, q: &'a SpatialQuery) -> Result<QueryScorer<'a>> {
        self.scorer_for(q.emb.as_slice(), q.loc)
    }

    pub fn scorer_for<'a>(&'a self, emb: &'a [f64], loc: GeoPoint) -> Result<QueryScorer<'a>> {
        Error::check_dim(self.dim(), emb.len())?;
        let w = self.head.weights(emb)?;
        Ok(QueryScorer {
            model: self,
            emb,
            loc,
            w,
        })
    }

    /// `ST(q, o)` for a single pair.
    pub fn st_score(&self, q: &SpatialQuery, o: &GeoObject, mode: ScoreMode) -> Result<f64> {
        Error::check_dim(self.dim(), o.emb.dim())?;
        let w = self.head.weights(q.emb.as_slice())?;
        let t = dot(q.emb.as_slice(), o.emb.as_slice());
        let s_in = self.s_in(&q.loc, &o.loc);
        let srel = match mode {
            ScoreMode::Inference => self.spatial.infer(s_in),
            ScoreMode::Training => self.spatial.train(s_in)?,
        };
        Ok(w[0] * t + w[1] * srel)
    }

    /// Head parameters followed by spatial parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.head.net.params().to_vec();
        p.extend(self.spatial.params());
        p
    }

    pub fn num_params(&self) -> usize {
        self.head.net.num_params() + self.spatial.num_params()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        Error::check_dim(self.num_params(), p.len())?;
        let h = self.head.net.num_params();
        self.head.net.params_mut().copy_from_slice(&p[..h]);
        self.spatial.set_params(&p[h..])
    }

    /// Rounds all parameters to `f32` and refreshes the prefix table, so
    /// the model equals its on-disk form.
    pub fn freeze(&mut self) {
        self.head.net.round_to_f32();
        self.spatial.round_to_f32();
    }

    /// Contrastive loss of one positive against `negatives`, in training
    /// mode.
    pub fn contrastive_loss(&self, q: &SpatialQuery, positive: &GeoObject, negatives: &[&GeoObject]) -> Result<f64> {
        Ok(self.loss_and_grad(q, positive, negatives)?.0)
    }

    /// Loss and its gradient over [`RelevanceModel::params`].
    pub fn loss_and_grad(
        &self,
        q: &SpatialQuery,
        positive: &GeoObject,
        negatives: &[&GeoObject],
    ) -> Result<(f64, Vec<f64>)> {
        let mut acc = GradAccumulator::new(self);
        let loss = acc.add_example(self, q.emb.as_slice(), q.loc, positive, negatives, 1.0)?;
        Ok((loss, acc.finish(self)))
    }
}

/// Accumulates head and spatial gradients over a batch of examples.
pub(crate) struct GradAccumulator {
    head: Vec<f64>,
    spatial: spatial::SpatialGrad,
}

impl GradAccumulator {
    pub(crate) fn new(model: &RelevanceModel) -> Self {
        Self {
            head: vec![0.0; model.head.net.num_params()],
            spatial: model.spatial.grad_buffer(),
        }
    }

    /// Adds `scale · ∇loss` for one example and returns the unscaled loss.
    pub(crate) fn add_example(
        &mut self,
        model: &RelevanceModel,
        q_emb: &[f64],
        q_loc: GeoPoint,
        positive: &GeoObject,
        negatives: &[&GeoObject],
        scale: f64,
    ) -> Result<f64> {
        if negatives.is_empty() {
            return Err(Error::OutOfRange("contrastive loss needs at least one negative".into()));
        }
        let trace = model.head.net.forward_trace(q_emb)?;
        let (wt, ws) = (trace.output()[0], trace.output()[1]);
        let mut parts = Vec::with_capacity(negatives.len() + 1);
        for o in std::iter::once(positive).chain(negatives.iter().copied()) {
            let t = trel(q_emb, o.emb.as_slice())?;
            let s_in = model.s_in(&q_loc, &o.loc);
            let srel = model.spatial.train(s_in)?;
            parts.push((t, s_in, srel));
        }
        let scores: Vec<f64> = parts.iter().map(|&(t, _, s)| wt * t + ws * s).collect();
        let (loss, dscores) = contrastive_from_scores(&scores);
        let (mut dwt, mut dws) = (0.0, 0.0);
        for (&(t, s_in, srel), &g) in parts.iter().zip(&dscores) {
            dwt += g * t;
            dws += g * srel;
            model.spatial.add_grad(s_in, scale * g * ws, &mut self.spatial);
        }
        model.head.net.backward(&trace, &[scale * dwt, scale * dws], &mut self.head)?;
        Ok(loss)
    }

    pub(crate) fn finish(self, model: &RelevanceModel) -> Vec<f64> {
        let mut g = self.head;
        g.extend(model.spatial.finish_grad(self.spatial));
        g
    }
}

/// `-log softmax(scores)[0]` and its gradient with respect to `scores`,
/// computed with max-subtraction. `scores[0]` is the positive.
pub fn contrastive_from_scores(scores: &[f64]) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (scores[0] - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(j, e)| e / sum - if j == 0 { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

/// Scores candidates for one query with precomputed weights.
#[derive(Debug, Clone, Copy)]
pub struct QueryScorer<'a> {
    model: &'a RelevanceModel,
    emb: &'a [f64],
    loc: GeoPoint,
    w: [f64; 2],
}

impl QueryScorer<'_> {
    pub fn weights(&self) -> [f64; 2] {
        self.w
    }

    #[inline]
    pub fn score_parts(&self, emb: &[f64], loc: &GeoPoint) -> f64 {
        let t = dot(self.emb, emb);
        let s = self.model.spatial.infer(self.model.s_in(&self.loc, loc));
        self.w[0] * t + self.w[1] * s
    }

    #[inline]
    pub fn score(&self, o: &GeoObject) -> f64 {
        self.score_parts(o.emb.as_slice(), &o.loc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Embedding;
    use crate::nn::{gradcheck, softplus_inv};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rand_obj(rng: &mut impl Rng, id: u64, d: usize) -> GeoObject {
        GeoObject {
            id,
            loc: GeoPoint::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
            emb: Embedding::new(rand_vec(rng, d)).unwrap(),
        }
    }

    fn rand_query(rng: &mut impl Rng, d: usize) -> SpatialQuery {
        SpatialQuery {
            id: 0,
            loc: GeoPoint::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
            emb: Embedding::new(rand_vec(rng, d)).unwrap(),
            k: 5,
        }
    }

    #[test]
    fn trel_examples() {
        assert_eq!(trel(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(trel(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert!(trel(&[1.0], &[1.0, 2.0]).is_err());
    }

    /// Double-double (Dekker/Knuth) accumulation of an inner product.
    fn dot_extended(a: &[f64], b: &[f64]) -> f64 {
        let (mut hi, mut lo) = (0.0f64, 0.0f64);
        for (x, y) in a.iter().zip(b) {
            let p = x * y;
            let p_err = x.mul_add(*y, -p);
            let s = hi + p;
            let bb = s - hi;
            let s_err = (hi - (s - bb)) + (p - bb);
            hi = s;
            lo += s_err + p_err;
        }
        hi + lo
    }

    #[test]
    fn trel_matches_extended_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in [1, 3, 8, 33, 768] {
            let a = rand_vec(&mut rng, d);
            let b = rand_vec(&mut rng, d);
            assert!((trel(&a, &b).unwrap() - dot_extended(&a, &b)).abs() <= 1e-10);
        }
    }

    fn model_with_head(d: usize, w: [f64; 2]) -> RelevanceModel {
        RelevanceModel::new(
            SpatialRelevance::Step(StepSpatialModel::new(10, 0.1).unwrap()),
            WeightHead::constant(d, w).unwrap(),
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn single_component_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = rand_query(&mut rng, 4);
        let o = rand_obj(&mut rng, 1, 4);
        let textual = model_with_head(4, [1.0, 0.0]);
        assert_eq!(
            textual.st_score(&q, &o, ScoreMode::Inference).unwrap(),
            trel(q.emb.as_slice(), o.emb.as_slice()).unwrap()
        );
        let spatial = model_with_head(4, [0.0, 1.0]);
        let s_in = spatial.s_in(&q.loc, &o.loc);
        assert_eq!(
            spatial.st_score(&q, &o, ScoreMode::Inference).unwrap(),
            spatial.spatial.infer(s_in)
        );
    }

    #[test]
    fn scorer_matches_per_pair_recomputation_with_one_head_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 6;
        let model = RelevanceModel::new(
            SpatialRelevance::Step(StepSpatialModel::new(50, 0.02).unwrap()),
            WeightHead::init(d, &mut rng).unwrap(),
            1.5,
        )
        .unwrap();
        let q = rand_query(&mut rng, d);
        let objs: Vec<GeoObject> = (0..100).map(|i| rand_obj(&mut rng, i, d)).collect();

        HEAD_FORWARDS.with(|c| c.set(0));
        let scorer = model.scorer(&q).unwrap();
        let fast: Vec<f64> = objs.iter().map(|o| scorer.score(o)).collect();
        assert_eq!(HEAD_FORWARDS.with(|c| c.get()), 1);

        let w = model.head.net().forward(q.emb.as_slice()).unwrap();
        for (o, f) in objs.iter().zip(fast) {
            let t: f64 = q.emb.as_slice().iter().zip(o.emb.as_slice()).map(|(a, b)| a * b).sum();
            let dist = ((q.loc.lat - o.loc.lat).powi(2) + (q.loc.lon - o.loc.lon).powi(2)).sqrt();
            let s_in = 1.0 - (dist / 1.5).min(1.0);
            let SpatialRelevance::Step(step) = &model.spatial else { unreachable!() };
            let naive = w[0] * t + w[1] * step.srel_train(s_in).unwrap();
            assert!((naive - f).abs() <= 1e-9);
        }
    }

    #[test]
    fn contrastive_examples() {
        let (l, _) = contrastive_from_scores(&[0.3, 0.3]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, g) = contrastive_from_scores(&[1e6, 0.0, -3.0]);
        assert!(l.abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn contrastive_matches_extended_precision_values() {
        // -log softmax(s)[0] evaluated with 50-digit arithmetic (mpmath).
        let cases: [(&[f64], f64); 3] = [
            (&[1.25, 0.5, -0.75, 2.0], 1.314986809055112),
            (&[-3.0, 4.0, 4.5], 7.9744211974590586),
            (&[40.0, -40.0, 39.5, 38.0], 0.55495691964199065),
        ];
        for (scores, expect) in cases {
            let (l, _) = contrastive_from_scores(scores);
            assert!((l - expect).abs() <= 1e-9, "{l} vs {expect}");
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 5;
        let q = rand_query(&mut rng, d);
        let pos = rand_obj(&mut rng, 1, d);
        let negs: Vec<GeoObject> = (2..8).map(|i| rand_obj(&mut rng, i, d)).collect();
        let neg_refs: Vec<&GeoObject> = negs.iter().collect();
        let raw: Vec<f64> = (0..=20).map(|_| rng.random_range(-2.0..1.0)).collect();
        let spatials = [
            SpatialRelevance::Step(StepSpatialModel::from_raw(raw).unwrap()),
            SpatialRelevance::Linear,
            SpatialRelevance::Exp(ExpSpatial {
                a: softplus_inv(1.5),
                b: softplus_inv(0.7),
            }),
        ];
        for spatial in spatials {
            let model = RelevanceModel::new(spatial, WeightHead::init(d, &mut rng).unwrap(), 1.3).unwrap();
            let report = gradcheck(model.params(), 1e-5, 1e-4, |p| {
                let mut m = model.clone();
                m.set_params(p).unwrap();
                m.loss_and_grad(&q, &pos, &neg_refs).unwrap()
            });
            assert!(report.passed, "{:?}: {report:?}", model.spatial.kind());
        }
    }

    proptest::proptest! {
        #[test]
        fn textual_shift_preserves_ranking(shift in -3.0..3.0f64, seed in 0u64..1000) {
            // Adding a constant c to every TRel adds w_t·c to every score.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            let model = RelevanceModel::new(
                SpatialRelevance::Step(StepSpatialModel::new(20, 0.05).unwrap()),
                WeightHead::init(d, &mut rng).unwrap(),
                1.5,
            ).unwrap();
            let q = rand_query(&mut rng, d);
            let scorer = model.scorer(&q).unwrap();
            let w = scorer.weights();
            let objs: Vec<GeoObject> = (0..30).map(|i| rand_obj(&mut rng, i, d)).collect();
            let mut base: Vec<(f64, u64)> = objs.iter().map(|o| (scorer.score(o), o.id)).collect();
            let mut shifted: Vec<(f64, u64)> = base.iter().map(|&(s, id)| (s + w[0] * shift, id)).collect();
            base.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            shifted.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let ids_a: Vec<u64> = base.iter().map(|x| x.1).collect();
            let ids_b: Vec<u64> = shifted.iter().map(|x| x.1).collect();
            // ordering may only differ where scores are within rounding of each other
            for (i, (a, b)) in ids_a.iter().zip(&ids_b).enumerate() {
                if a != b {
                    proptest::prop_assert!((base[i].0 - shifted[i].0 + w[0] * shift).abs() < 1e-9);
                }
            }
        }
    }
}
