//! Flat `key=value` run configuration.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use list_core::data::{DecayKind, SynthConfig};
use list_core::index::{default_hidden_width, IndexTrainConfig, PseudoLabelConfig};
use list_core::relevance::{SpatialKind, TrainConfig};
use list_core::search::IVF_S_ALPHA;
use list_core::{Parallelism, Split};
use sha2::{Digest, Sha256};

/// Every tunable of the pipeline. `None` marks values derived from the
/// dataset when a command resolves the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // generator
    pub n_objects: usize,
    pub n_queries: usize,
    pub d: usize,
    pub n_topics: usize,
    pub topic_spread: f64,
    pub spatial_spread: f64,
    pub query_noise: f64,
    pub positives: usize,
    pub decay: DecayKind,
    // relevance model
    pub t: usize,
    pub spatial: SpatialKind,
    pub b: usize,
    pub hard_pool: usize,
    pub in_batch: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    // index
    pub c: Option<usize>,
    pub l: usize,
    pub hidden: Option<usize>,
    pub neg_start: Option<usize>,
    pub neg_end: Option<usize>,
    pub m: usize,
    pub index_epochs: usize,
    pub index_lr: f64,
    pub cr_o: usize,
    // query / evaluation
    pub cr: usize,
    pub k: usize,
    pub alpha: f64,
    pub kmeans_iters: usize,
    pub split: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        let index = IndexTrainConfig::default();
        Self {
            seed: synth.seed,
            n_objects: synth.n_objects,
            n_queries: synth.n_queries,
            d: synth.d,
            n_topics: synth.n_topics,
            topic_spread: synth.topic_embedding_spread,
            spatial_spread: synth.spatial_hotspot_spread,
            query_noise: synth.query_noise,
            positives: synth.positives_per_query,
            decay: synth.distance_decay,
            t: train.steps,
            spatial: train.spatial,
            b: train.hard_negatives,
            hard_pool: train.hard_pool_size,
            in_batch: train.in_batch_negatives,
            batch_size: train.batch_size,
            epochs: train.epochs,
            lr: train.learning_rate,
            c: None,
            l: list_core::index::DEFAULT_LAYERS,
            hidden: None,
            neg_start: None,
            neg_end: None,
            m: 8,
            index_epochs: index.epochs,
            index_lr: index.learning_rate,
            cr_o: 1,
            cr: 1,
            k: 10,
            alpha: IVF_S_ALPHA,
            kmeans_iters: 50,
            split: "test".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("config key {key}: cannot parse {value:?}: {e}"))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".into(), |x| x.to_string())
}

impl RunConfig {
    /// Applies one `key=value` assignment; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "n_objects" => self.n_objects = parse(key, v)?,
            "n_queries" => self.n_queries = parse(key, v)?,
            "d" => self.d = parse(key, v)?,
            "n_topics" => self.n_topics = parse(key, v)?,
            "topic_spread" => self.topic_spread = parse(key, v)?,
            "spatial_spread" => self.spatial_spread = parse(key, v)?,
            "query_noise" => self.query_noise = parse(key, v)?,
            "positives" => self.positives = parse(key, v)?,
            "decay" => self.decay = parse(key, v)?,
            "t" => self.t = parse(key, v)?,
            "spatial" => self.spatial = parse(key, v)?,
            "b" => self.b = parse(key, v)?,
            "hard_pool" => self.hard_pool = parse(key, v)?,
            "in_batch" => self.in_batch = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "c" => self.c = parse_auto(key, v)?,
            "l" => self.l = parse(key, v)?,
            "hidden" => self.hidden = parse_auto(key, v)?,
            "neg_start" => self.neg_start = parse_auto(key, v)?,
            "neg_end" => self.neg_end = parse_auto(key, v)?,
            "m" => self.m = parse(key, v)?,
            "index_epochs" => self.index_epochs = parse(key, v)?,
            "index_lr" => self.index_lr = parse(key, v)?,
            "cr_o" => self.cr_o = parse(key, v)?,
            "cr" => self.cr = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "kmeans_iters" => self.kmeans_iters = parse(key, v)?,
            "split" => {
                if !matches!(v, "train" | "val" | "test" | "all") {
                    bail!("config key split: expected train, val, test or all, got {v:?}");
                }
                self.split = v.to_string();
            }
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Applies a `key=value` string.
    pub fn assign(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .with_context(|| format!("expected key=value, got {pair:?}"))?;
        self.set(k, v)
    }

    /// Reads a config file: one `key=value` per line, `#` comments.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("--config {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(())
    }

    /// Fills dataset-dependent defaults: `c = max(2, round(n / 10000))`,
    /// hidden width `max(64, d)`, pseudo-negative window `[2n/c, 3n/c)`
    /// capped at `[n/2, 3n/4)` so small `c` still leaves a non-empty window.
    pub fn resolve(&mut self, n: usize, d: usize) {
        let c = *self
            .c
            .get_or_insert_with(|| ((n as f64 / 10_000.0).round() as usize).max(2));
        self.hidden.get_or_insert(default_hidden_width(d));
        self.neg_start.get_or_insert((2 * n / c).min(n / 2));
        self.neg_end.get_or_insert((3 * n / c).min(3 * n / 4));
    }

    /// Ordered `(key, value)` pairs; the text form of the configuration.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("n_objects", self.n_objects.to_string()),
            ("n_queries", self.n_queries.to_string()),
            ("d", self.d.to_string()),
            ("n_topics", self.n_topics.to_string()),
            ("topic_spread", self.topic_spread.to_string()),
            ("spatial_spread", self.spatial_spread.to_string()),
            ("query_noise", self.query_noise.to_string()),
            ("positives", self.positives.to_string()),
            ("decay", self.decay.to_string()),
            ("t", self.t.to_string()),
            ("spatial", self.spatial.to_string()),
            ("b", self.b.to_string()),
            ("hard_pool", self.hard_pool.to_string()),
            ("in_batch", self.in_batch.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("c", show_auto(self.c)),
            ("l", self.l.to_string()),
            ("hidden", show_auto(self.hidden)),
            ("neg_start", show_auto(self.neg_start)),
            ("neg_end", show_auto(self.neg_end)),
            ("m", self.m.to_string()),
            ("index_epochs", self.index_epochs.to_string()),
            ("index_lr", self.index_lr.to_string()),
            ("cr_o", self.cr_o.to_string()),
            ("cr", self.cr.to_string()),
            ("k", self.k.to_string()),
            ("alpha", self.alpha.to_string()),
            ("kmeans_iters", self.kmeans_iters.to_string()),
            ("split", self.split.clone()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// SHA-256 of [`RunConfig::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_objects: self.n_objects,
            n_queries: self.n_queries,
            d: self.d,
            n_topics: self.n_topics,
            topic_embedding_spread: self.topic_spread,
            spatial_hotspot_spread: self.spatial_spread,
            query_noise: self.query_noise,
            positives_per_query: self.positives,
            distance_decay: self.decay,
            seed: self.seed,
        }
    }

    pub fn train(&self, parallelism: Parallelism) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            hard_negatives: self.b,
            learning_rate: self.lr,
            seed: self.seed,
            hard_pool_size: self.hard_pool,
            in_batch_negatives: self.in_batch,
            steps: self.t,
            spatial: self.spatial,
            parallelism,
        }
    }

    /// Requires [`RunConfig::resolve`] to have run.
    pub fn pseudo(&self) -> PseudoLabelConfig {
        PseudoLabelConfig {
            neg_start: self.neg_start.expect("resolved"),
            neg_end: self.neg_end.expect("resolved"),
            m: self.m,
        }
    }

    pub fn index_train(&self, parallelism: Parallelism) -> IndexTrainConfig {
        IndexTrainConfig {
            epochs: self.index_epochs,
            learning_rate: self.index_lr,
            seed: self.seed,
            parallelism,
            ..IndexTrainConfig::default()
        }
    }

    pub fn clusters(&self) -> usize {
        self.c.expect("resolved")
    }

    pub fn splits(&self) -> Vec<Split> {
        match self.split.as_str() {
            "train" => vec![Split::Train],
            "val" => vec![Split::Val],
            "test" => vec![Split::Test],
            _ => vec![Split::Train, Split::Val, Split::Test],
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
