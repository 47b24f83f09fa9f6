use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use list_core::binio::atomic_write;
use list_core::data::{generate, read_dataset, write_dataset};
use list_core::eval::{
    evaluate, tradeoff_sweep, write_tradeoff_file, EvalConfig, MetricReport, SweepPoint,
};
use list_core::index::{
    evaluate_clusters, partition, read_index_file, write_index_file, ClusterClassifier,
    ClusterIndex, ClusterQualityReport,
};
use list_core::nn::{read_net_file, write_net_file};
use list_core::relevance::{read_model_file, train_relevance, write_model_file, RelevanceModel};
use list_core::search::{
    brute_force_outcome, ivf_build, list_search, write_results_file, write_results_tsv,
    FeatureKind, QueryResults,
};
use list_core::{par, Dataset, Embedding, GeoPoint, Parallelism, SpatialQuery};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::meta::{dataset_fingerprint, file_fingerprint, Meta};
use crate::System;

pub struct Context {
    pub out: Option<PathBuf>,
    pub parallelism: Parallelism,
}

impl Context {
    fn out(&self) -> Result<&Path> {
        need(&self.out, "--out")
    }
}

fn need<'a>(value: &'a Option<impl AsRef<Path>>, flag: &str) -> Result<&'a Path> {
    match value {
        Some(p) => Ok(p.as_ref()),
        None => bail!("missing required flag {flag}"),
    }
}

fn need_path<'a>(value: Option<&'a Path>, flag: &str) -> Result<&'a Path> {
    let p = value.with_context(|| format!("missing required flag {flag}"))?;
    if !p.exists() {
        bail!("{flag} {}: no such file or directory", p.display());
    }
    Ok(p)
}

struct Loaded {
    ds: Dataset,
    fingerprint: String,
}

fn load_data(data: Option<&Path>) -> Result<Loaded> {
    let dir = need_path(data, "--data")?;
    let ds = read_dataset(dir).with_context(|| format!("--data {}", dir.display()))?;
    Ok(Loaded {
        fingerprint: dataset_fingerprint(dir)?,
        ds,
    })
}

struct Artifact<T> {
    value: T,
    fingerprint: String,
}

fn load_model(path: Option<&Path>, data: &Loaded) -> Result<Artifact<RelevanceModel>> {
    let path = need_path(path, "--model")?;
    let meta = Meta::read_for(path, "--model", "model")?;
    meta.require_input("dataset", &data.fingerprint, "--model")?;
    let value = read_model_file(path).with_context(|| format!("--model {}", path.display()))?;
    if value.dim() != data.ds.dim() {
        bail!(
            "--model has dimension {}, dataset has {}",
            value.dim(),
            data.ds.dim()
        );
    }
    Ok(Artifact {
        value,
        fingerprint: file_fingerprint(path)?,
    })
}

fn load_index(
    path: Option<&Path>,
    data: &Loaded,
    model: &Artifact<RelevanceModel>,
) -> Result<ClusterIndex> {
    let path = need_path(path, "--index")?;
    let meta = Meta::read_for(path, "--index", "index")?;
    meta.require_input("dataset", &data.fingerprint, "--index")?;
    meta.require_input("model", &model.fingerprint, "--index")?;
    read_index_file(path, &data.ds.objects).with_context(|| format!("--index {}", path.display()))
}

fn resolved(mut cfg: RunConfig, ds: &Dataset) -> RunConfig {
    cfg.resolve(ds.objects.len(), ds.dim());
    cfg
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, |w| {
        w.write_all(text.as_bytes())
            .map_err(|e| list_core::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
    })?;
    Ok(())
}

pub fn gen(ctx: &Context, cfg: RunConfig) -> Result<()> {
    let out = ctx.out()?;
    let ds = generate(&cfg.synth())?;
    std::fs::create_dir_all(out).with_context(|| format!("--out {}", out.display()))?;
    write_dataset(&ds, out)?;
    Meta::new("dataset", &cfg).write_for(out)?;
    println!(
        "wrote {} objects, {} queries (d = {}) to {}",
        ds.objects.len(),
        ds.queries.len(),
        ds.dim(),
        out.display()
    );
    Ok(())
}

pub fn train_model(ctx: &Context, cfg: RunConfig, data: Option<&Path>) -> Result<()> {
    let data = load_data(data)?;
    let out = ctx.out()?;
    let cfg = resolved(cfg, &data.ds);
    let (model, report) = train_relevance(&data.ds, &cfg.train(ctx.parallelism))?;
    write_model_file(out, &model)?;
    Meta::new("model", &cfg)
        .with_input("dataset", data.fingerprint.clone())
        .write_for(out)?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>3} loss {l:.6}", i + 1);
    }
    if !report.skipped_queries.is_empty() {
        println!(
            "skipped {} queries without positives",
            report.skipped_queries.len()
        );
    }
    println!("model written to {}", out.display());
    Ok(())
}

pub fn train_index(
    ctx: &Context,
    cfg: RunConfig,
    data: Option<&Path>,
    model: Option<&Path>,
) -> Result<()> {
    let data = load_data(data)?;
    let model = load_model(model, &data)?;
    let out = ctx.out()?;
    let cfg = resolved(cfg, &data.ds);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clf = ClusterClassifier::new(
        data.ds.dim(),
        cfg.clusters(),
        cfg.l,
        cfg.hidden.expect("resolved"),
        &mut rng,
    )?;
    info!("pseudo-negative window {:?}", cfg.pseudo());
    let (clf, report) = list_core::index::train_index(
        &data.ds,
        &model.value,
        clf,
        &cfg.pseudo(),
        &cfg.index_train(ctx.parallelism),
    )?;
    write_net_file(out, clf.net())?;
    Meta::new("classifier", &cfg)
        .with_input("dataset", data.fingerprint.clone())
        .with_input("model", model.fingerprint.clone())
        .write_for(out)?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>3} loss {l:.6}", i + 1);
    }
    println!(
        "classifier (c = {}) written to {}",
        cfg.clusters(),
        out.display()
    );
    Ok(())
}

pub fn build(
    ctx: &Context,
    cfg: RunConfig,
    data: Option<&Path>,
    classifier: Option<&Path>,
) -> Result<()> {
    let data = load_data(data)?;
    let path = need_path(classifier, "--classifier")?;
    let out = ctx.out()?;
    let clf_meta = Meta::read_for(path, "--classifier", "classifier")?;
    clf_meta.require_input("dataset", &data.fingerprint, "--classifier")?;
    let model_fp = clf_meta
        .inputs
        .get("model")
        .cloned()
        .context("--classifier does not record its model")?;
    let net = read_net_file(path).with_context(|| format!("--classifier {}", path.display()))?;
    let clf = ClusterClassifier::from_net(net)?;
    let cfg = resolved(cfg, &data.ds);
    let index = partition(&data.ds, clf, cfg.cr_o, ctx.parallelism)?;
    write_index_file(out, &index)?;
    Meta::new("index", &cfg)
        .with_input("dataset", data.fingerprint.clone())
        .with_input("classifier", file_fingerprint(path)?)
        .with_input("model", model_fp)
        .write_for(out)?;
    println!(
        "index over {} objects, c = {}, sizes {:?}, written to {}",
        index.len(),
        index.num_clusters(),
        index.cluster_sizes(),
        out.display()
    );
    Ok(())
}

fn parse_embedding(text: &str, d: usize) -> Result<Embedding> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("--emb: bad number {s:?}"))
        })
        .collect::<Result<_>>()?;
    if values.len() != d {
        bail!("--emb has {} values, the dataset has d = {d}", values.len());
    }
    Ok(Embedding::new(values)?)
}

pub fn query(
    ctx: &Context,
    cfg: RunConfig,
    data: Option<&Path>,
    model: Option<&Path>,
    index: Option<&Path>,
    single: Option<(f64, f64, &str)>,
) -> Result<()> {
    let data = load_data(data)?;
    let model = load_model(model, &data)?;
    let index = load_index(index, &data, &model)?;
    let cfg = resolved(cfg, &data.ds);
    let queries: Vec<SpatialQuery> = match single {
        Some((lat, lon, emb)) => {
            let loc = GeoPoint::new(lat, lon);
            loc.validate()?;
            vec![SpatialQuery {
                id: 0,
                loc,
                emb: parse_embedding(emb, data.ds.dim())?,
                k: cfg.k,
            }]
        }
        None => cfg
            .splits()
            .into_iter()
            .flat_map(|s| data.ds.queries_in(s))
            .cloned()
            .collect(),
    };
    let runs = par::map_slice(ctx.parallelism, &queries, |q| {
        let t = Instant::now();
        let outcome = list_search(q, &index, &model.value, cfg.k, cfg.cr)?;
        Ok(QueryResults {
            query_id: q.id,
            outcome,
            elapsed_ns: t.elapsed().as_nanos() as u64,
        })
    });
    let results: Vec<QueryResults> = runs.into_iter().collect::<list_core::Result<_>>()?;
    match &ctx.out {
        Some(out) => {
            write_results_file(out, &results)?;
            Meta::new("results", &cfg)
                .with_input("dataset", data.fingerprint.clone())
                .with_input("model", model.fingerprint.clone())
                .write_for(out)?;
            println!(
                "{} queries, results written to {}",
                results.len(),
                out.display()
            );
        }
        None => write_results_tsv(&mut std::io::stdout().lock(), &results)?,
    }
    Ok(())
}

fn eval_config(cfg: &RunConfig, parallelism: Parallelism) -> EvalConfig {
    let mut recall_ks = vec![10, 20, cfg.k];
    recall_ks.sort_unstable();
    recall_ks.dedup();
    EvalConfig {
        recall_ks,
        ndcg_ks: vec![1, 5],
        parallelism,
    }
}

fn quality_text(q: &ClusterQualityReport) -> String {
    format!(
        "{:<20} {}\n{:<20} {}\n{:<20} {}\n{:<20} {:?}\n",
        "precision_p_c",
        q.precision,
        "imbalance_if",
        q.imbalance,
        "imbalance_if_norm",
        q.normalized_imbalance,
        "cluster_sizes",
        q.sizes
    )
}

fn ivf_kind(system: System, cfg: &RunConfig) -> FeatureKind {
    if system == System::IvfS {
        FeatureKind::SpatiallyWeighted { alpha: cfg.alpha }
    } else {
        FeatureKind::EmbeddingOnly
    }
}

pub fn eval(
    ctx: &Context,
    cfg: RunConfig,
    system: Option<System>,
    data: Option<&Path>,
    model: Option<&Path>,
    index: Option<&Path>,
) -> Result<()> {
    let system = system.context("missing required flag --system")?;
    let data = load_data(data)?;
    let model = load_model(model, &data)?;
    let cfg = resolved(cfg, &data.ds);
    let ds = &data.ds;
    let queries: Vec<&SpatialQuery> = cfg
        .splits()
        .into_iter()
        .flat_map(|s| ds.queries_in(s))
        .collect();
    let ecfg = eval_config(&cfg, ctx.parallelism);
    let m = &model.value;
    let (report, quality): (MetricReport, Option<ClusterQualityReport>) = match system {
        System::Brute => (
            evaluate(
                |q, k| brute_force_outcome(q, ds, m, k),
                &queries,
                &ds.truth,
                &ecfg,
            )?,
            None,
        ),
        System::List | System::Ivf | System::IvfS => {
            let idx = if system == System::List {
                load_index(index, &data, &model)?
            } else {
                ivf_build(
                    ds,
                    cfg.clusters(),
                    ivf_kind(system, &cfg),
                    cfg.kmeans_iters,
                    cfg.seed,
                    ctx.parallelism,
                )?
            };
            let r = evaluate(
                |q, k| list_search(q, &idx, m, k, cfg.cr),
                &queries,
                &ds.truth,
                &ecfg,
            )?;
            (r, Some(evaluate_clusters(&idx, &queries, &ds.truth)?))
        }
    };
    let mut text = format!("{:<20} {:?}\n{:<20} {}\n", "system", system, "cr", cfg.cr);
    text.push_str(&report.to_text());
    if let Some(q) = &quality {
        text.push_str(&quality_text(q));
    }
    print!("{text}");
    if let Some(out) = &ctx.out {
        write_text(out, &text)?;
        Meta::new("report", &cfg)
            .with_input("dataset", data.fingerprint.clone())
            .with_input("model", model.fingerprint.clone())
            .write_for(out)?;
    }
    Ok(())
}

pub fn bench(
    ctx: &Context,
    cfg: RunConfig,
    data: Option<&Path>,
    model: Option<&Path>,
    index: Option<&Path>,
) -> Result<()> {
    let data = load_data(data)?;
    let model = load_model(model, &data)?;
    let out = ctx.out()?;
    let cfg = resolved(cfg, &data.ds);
    let ds = &data.ds;
    let m = &model.value;
    let list = match index {
        Some(_) => Some(load_index(index, &data, &model)?),
        None => None,
    };
    let c = cfg.clusters();
    let ivf = ivf_build(
        ds,
        c,
        FeatureKind::EmbeddingOnly,
        cfg.kmeans_iters,
        cfg.seed,
        ctx.parallelism,
    )?;
    let ivf_s = ivf_build(
        ds,
        c,
        ivf_kind(System::IvfS, &cfg),
        cfg.kmeans_iters,
        cfg.seed,
        ctx.parallelism,
    )?;
    let mut points = vec![SweepPoint::new("brute", "k", cfg.k as f64, |q, k| {
        brute_force_outcome(q, ds, m, k)
    })];
    let mut systems: Vec<(&str, &ClusterIndex)> = Vec::new();
    if let Some(l) = &list {
        systems.push(("list", l));
    }
    systems.push(("ivf", &ivf));
    systems.push(("ivf_s", &ivf_s));
    for (name, idx) in systems {
        for cr in 1..=idx.num_clusters() {
            points.push(SweepPoint::new(name, "cr", cr as f64, move |q, k| {
                list_search(q, idx, m, k, cr)
            }));
        }
    }
    let queries: Vec<&SpatialQuery> = cfg
        .splits()
        .into_iter()
        .flat_map(|s| ds.queries_in(s))
        .collect();
    let rows = tradeoff_sweep(&points, &queries, &ds.truth, ctx.parallelism)?;
    write_tradeoff_file(out, &rows)?;
    Meta::new("tradeoff", &cfg)
        .with_input("dataset", data.fingerprint.clone())
        .with_input("model", model.fingerprint.clone())
        .write_for(out)?;
    for r in &rows {
        println!(
            "{:<6} {}={:<3} recall@10 {:.4} ndcg@1 {:.4} candidates {:.0} latency {:.0}ns",
            r.system,
            r.param_name,
            r.param_value,
            r.recall10,
            r.ndcg1,
            r.mean_candidates,
            r.mean_latency_ns
        );
    }
    println!("trade-off table written to {}", out.display());
    Ok(())
}
