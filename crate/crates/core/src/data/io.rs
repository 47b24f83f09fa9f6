//! Dataset directory layout:
//!
//! * `objects.tsv`: `id, lat, lon`
//! * `queries.tsv`: `id, lat, lon, k`
//! * `records.tsv`: `query_id, object_id, split`
//! * `object_embeddings.bin`, `query_embeddings.bin`: `"LISTEMB1"`, `u32 n`,
//!   `u32 d`, then `n·d` little-endian `f32` in TSV row order.
//!
//! TSV files carry a header line.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{atomic_write, BinReader, BinWriter};
use crate::domain::{Dataset, Embedding, GeoObject, GeoPoint, GroundTruthSet, SpatialQuery, Split};
use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 8] = b"LISTEMB1";
pub const OBJECTS_TSV: &str = "objects.tsv";
pub const QUERIES_TSV: &str = "queries.tsv";
pub const RECORDS_TSV: &str = "records.tsv";
pub const OBJECT_EMB: &str = "object_embeddings.bin";
pub const QUERY_EMB: &str = "query_embeddings.bin";

/// Every file making up a dataset directory.
pub const DATASET_FILES: [&str; 5] = [OBJECTS_TSV, QUERIES_TSV, RECORDS_TSV, OBJECT_EMB, QUERY_EMB];

#[derive(Debug, Serialize, Deserialize)]
struct ObjectRow {
    id: u64,
    lat: f64,
    lon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryRow {
    id: u64,
    lat: f64,
    lon: f64,
    k: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    query_id: u64,
    object_id: u64,
    split: Split,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_tsv<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    atomic_write(path, |out| {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
        for r in rows {
            w.serialize(r).map_err(csv_err(path))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    })
}

fn read_tsv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

/// Writes an embedding matrix in the `LISTEMB1` layout.
pub fn write_embeddings(out: &mut dyn Write, path: &Path, d: usize, rows: &[&[f64]]) -> Result<()> {
    let mut w = BinWriter::new(out, path);
    w.bytes(EMB_MAGIC)?;
    w.u32(rows.len())?;
    w.u32(d)?;
    for r in rows {
        Error::check_dim(d, r.len())?;
        w.f32s(r)?;
    }
    Ok(())
}

/// Parses a `LISTEMB1` buffer, requiring exactly `expected_rows` rows.
pub fn read_embeddings(bytes: &[u8], path: &Path, expected_rows: usize) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut r = BinReader::new(bytes, path);
    r.expect_magic(EMB_MAGIC)?;
    let n_at = r.offset();
    let n = r.len("row count")?;
    let d = r.len("dimension")?;
    if d == 0 {
        return Err(r.error("dimension must be >= 1"));
    }
    let header = r.offset() as usize;
    let row_bytes = 4 * d;
    let payload = bytes.len() - header;
    if payload % row_bytes != 0 || payload / row_bytes != n {
        return Err(Error::format(
            path,
            header as u64,
            format!(
                "row-count mismatch: header declares {n} rows of dimension {d}, payload holds {} bytes ({} rows)",
                payload,
                payload as f64 / row_bytes as f64
            ),
        ));
    }
    if n != expected_rows {
        return Err(Error::format(
            path,
            n_at,
            format!("row-count mismatch: {n} embedding rows but {expected_rows} TSV rows"),
        ));
    }
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        rows.push(r.f32s(d, "embedding row")?);
    }
    r.expect_eof()?;
    Ok((d, rows))
}

fn write_embedding_file(path: &Path, d: usize, rows: &[&[f64]]) -> Result<()> {
    atomic_write(path, |out| write_embeddings(out, path, d, rows))
}

fn read_embedding_file(path: &Path, expected_rows: usize) -> Result<(usize, Vec<Vec<f64>>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(&bytes, path, expected_rows)
}

/// Writes the five dataset files into `dir`, creating it if needed.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = dataset.dim();
    write_tsv(
        &dir.join(OBJECTS_TSV),
        dataset.objects.iter().map(|o| ObjectRow {
            id: o.id,
            lat: o.loc.lat,
            lon: o.loc.lon,
        }),
    )?;
    write_tsv(
        &dir.join(QUERIES_TSV),
        dataset.queries.iter().map(|q| QueryRow {
            id: q.id,
            lat: q.loc.lat,
            lon: q.loc.lon,
            k: q.k,
        }),
    )?;
    let truth = &dataset.truth;
    write_tsv(
        &dir.join(RECORDS_TSV),
        truth.records().iter().map(|&(q, o)| RecordRow {
            query_id: q,
            object_id: o,
            split: truth.split_of(q).expect("every recorded query has a split"),
        }),
    )?;
    let obj: Vec<&[f64]> = dataset.objects.iter().map(|o| o.emb.as_slice()).collect();
    write_embedding_file(&dir.join(OBJECT_EMB), d, &obj)?;
    let qs: Vec<&[f64]> = dataset.queries.iter().map(|q| q.emb.as_slice()).collect();
    write_embedding_file(&dir.join(QUERY_EMB), d, &qs)
}

fn embedding(path: &Path, row: usize, v: Vec<f64>) -> Result<Embedding> {
    Embedding::new(v).map_err(|e| Error::InvalidDataset(format!("{}: row {row}: {e}", path.display())))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let obj_rows: Vec<ObjectRow> = read_tsv(&dir.join(OBJECTS_TSV))?;
    let q_rows: Vec<QueryRow> = read_tsv(&dir.join(QUERIES_TSV))?;
    let rec_rows: Vec<RecordRow> = read_tsv(&dir.join(RECORDS_TSV))?;
    let obj_path = dir.join(OBJECT_EMB);
    let q_path = dir.join(QUERY_EMB);
    let (d_obj, obj_embs) = read_embedding_file(&obj_path, obj_rows.len())?;
    let (d_q, q_embs) = read_embedding_file(&q_path, q_rows.len())?;
    if d_obj != d_q {
        return Err(Error::format(
            &q_path,
            12,
            format!("dimension {d_q} differs from {OBJECT_EMB} dimension {d_obj}"),
        ));
    }
    let objects = obj_rows
        .into_iter()
        .zip(obj_embs)
        .enumerate()
        .map(|(i, (r, e))| {
            Ok(GeoObject {
                id: r.id,
                loc: GeoPoint::new(r.lat, r.lon),
                emb: embedding(&obj_path, i, e)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let queries = q_rows
        .into_iter()
        .zip(q_embs)
        .enumerate()
        .map(|(i, (r, e))| {
            Ok(SpatialQuery {
                id: r.id,
                loc: GeoPoint::new(r.lat, r.lon),
                emb: embedding(&q_path, i, e)?,
                k: r.k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = GroundTruthSet::from_records(rec_rows.into_iter().map(|r| (r.query_id, r.object_id, r.split)))?;
    Dataset::new(objects, queries, truth)
}
