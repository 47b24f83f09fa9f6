//! Index file: `"LISTIDX1"`, `u32 c`, `u32 n`, `u32 cr_o`, the classifier in
//! weight-file form, `c` lists each stored as `u32` length plus `u64` ids,
//! and finally the feature bounds as four `f64` (lat min/max, lon min/max).
//!
//! Objects themselves are not stored; loading pairs the lists with the
//! dataset they were built from.

use std::io::{Read, Write};
use std::path::Path;

use crate::binio::{atomic_write, BinReader, BinWriter};
use crate::domain::{Bounds, GeoObject};
use crate::error::{Error, Result};
use crate::index::{ClusterClassifier, ClusterIndex, Router};
use crate::nn::io::{read_net_from, write_net_to};

pub const INDEX_MAGIC: &[u8; 8] = b"LISTIDX1";

fn write_to<W: Write>(w: &mut BinWriter<W>, index: &ClusterIndex) -> Result<()> {
    let Router::Learned(clf) = index.router() else {
        return Err(Error::InvalidConfig(vec!["only classifier-routed indexes can be saved".into()]));
    };
    w.bytes(INDEX_MAGIC)?;
    w.u32(index.num_clusters())?;
    w.u32(index.len())?;
    w.u32(index.multiplicity())?;
    write_net_to(w, clf.net())?;
    for list in index.lists() {
        w.u32(list.len())?;
        for &id in list {
            w.u64(id)?;
        }
    }
    let b = index.bounds();
    for v in [b.lat_min, b.lat_max, b.lon_min, b.lon_max] {
        w.f64(v)?;
    }
    Ok(())
}

fn read_from<R: Read>(r: &mut BinReader<R>, objects: &[GeoObject]) -> Result<ClusterIndex> {
    r.expect_magic(INDEX_MAGIC)?;
    let c = r.len("cluster count")?;
    let n_at = r.offset();
    let n = r.len("object count")?;
    let cr_o = r.len("partition multiplicity")?;
    if c == 0 || cr_o == 0 || cr_o > c {
        return Err(r.error(format!("invalid header: c = {c}, cr_o = {cr_o}")));
    }
    if n != objects.len() {
        return Err(r.error_at(
            n_at,
            format!("index covers {n} objects but the dataset has {}", objects.len()),
        ));
    }
    let net_at = r.offset();
    let clf = ClusterClassifier::from_net(read_net_from(r)?).map_err(|e| r.error_at(net_at, e.to_string()))?;
    if clf.num_clusters() != c {
        return Err(r.error_at(
            net_at,
            format!("classifier has {} outputs, header says {c}", clf.num_clusters()),
        ));
    }
    let mut lists = Vec::with_capacity(c);
    let mut total = 0usize;
    for i in 0..c {
        let len = r.len("list length")?;
        total += len;
        if total > n * cr_o {
            return Err(r.error(format!("list {i} overflows n * cr_o = {}", n * cr_o)));
        }
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            list.push(r.u64("object id")?);
        }
        lists.push(list);
    }
    let b = [r.f64("bounds")?, r.f64("bounds")?, r.f64("bounds")?, r.f64("bounds")?];
    let bounds = Bounds {
        lat_min: b[0],
        lat_max: b[1],
        lon_min: b[2],
        lon_max: b[3],
    };
    if !(bounds.lat_min <= bounds.lat_max && bounds.lon_min <= bounds.lon_max) {
        return Err(r.error("inverted bounds"));
    }
    let end = r.offset();
    ClusterIndex::from_lists(objects, bounds, Router::Learned(clf), cr_o, lists).map_err(|e| match e {
        Error::Format { .. } => e,
        other => r.error_at(end, format!("lists inconsistent with dataset: {other}")),
    })
}

pub fn write_index(index: &ClusterIndex) -> Result<Vec<u8>> {
    let mut w = BinWriter::new(Vec::new(), "<memory>");
    write_to(&mut w, index)?;
    Ok(w.into_inner())
}

pub fn read_index(bytes: &[u8], objects: &[GeoObject]) -> Result<ClusterIndex> {
    let mut r = BinReader::new(bytes, "<memory>");
    let idx = read_from(&mut r, objects)?;
    r.expect_eof()?;
    Ok(idx)
}

pub fn write_index_file(path: &Path, index: &ClusterIndex) -> Result<()> {
    atomic_write(path, |out| write_to(&mut BinWriter::new(out, path), index))
}

pub fn read_index_file(path: &Path, objects: &[GeoObject]) -> Result<ClusterIndex> {
    let mut r = BinReader::open(path)?;
    let idx = read_from(&mut r, objects)?;
    r.expect_eof()?;
    Ok(idx)
}
