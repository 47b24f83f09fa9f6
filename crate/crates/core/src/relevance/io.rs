//! Relevance checkpoint: the head in weight-file form, then a `u32` spatial
//! kind, the kind's section, and the `f64` normalising diameter.
//!
//! The step section is `u32 t`, `t + 1` raw weights, `t + 1` prefix values
//! (all `f32`). On load the prefix is rebuilt from the raw weights and must
//! agree with the stored one to `f32` precision.

use std::io::{Read, Write};
use std::path::Path;

use super::{ExpSpatial, RelevanceModel, SpatialKind, SpatialRelevance, StepSpatialModel, WeightHead};
use crate::binio::{atomic_write, BinReader, BinWriter};
use crate::error::Result;
use crate::nn::io::{read_net_from, write_net_to};

fn write_to<W: Write>(w: &mut BinWriter<W>, model: &RelevanceModel) -> Result<()> {
    write_net_to(w, model.head.net())?;
    w.u32(model.spatial.kind().code() as usize)?;
    match &model.spatial {
        SpatialRelevance::Step(step) => {
            w.u32(step.steps())?;
            w.f32s(step.raw())?;
            w.f32s(step.prefix())?;
        }
        SpatialRelevance::Linear => {}
        SpatialRelevance::Exp(e) => w.f32s(&[e.a, e.b])?,
    }
    w.f64(model.dist_max)
}

fn read_from<R: Read>(r: &mut BinReader<R>) -> Result<RelevanceModel> {
    let head = WeightHead::from_net(read_net_from(r)?)?;
    let code = r.u32("spatial kind")?;
    let kind = SpatialKind::from_code(code).ok_or_else(|| r.error(format!("unknown spatial kind {code}")))?;
    let spatial = match kind {
        SpatialKind::Step => {
            let t = r.len("step count")?;
            if t == 0 {
                return Err(r.error("step count must be >= 1"));
            }
            let raw = r.f32s(t + 1, "step weights")?;
            let prefix_at = r.offset();
            let stored = r.f32s(t + 1, "step prefix")?;
            let step = StepSpatialModel::from_raw(raw)?;
            for (i, (&a, &b)) in step.prefix().iter().zip(&stored).enumerate() {
                if (a - b).abs() > 1e-6 * a.abs().max(1.0) {
                    return Err(r.error_at(
                        prefix_at + 4 * i as u64,
                        format!("prefix entry {i} = {b} inconsistent with step weights ({a})"),
                    ));
                }
            }
            SpatialRelevance::Step(step)
        }
        SpatialKind::Linear => SpatialRelevance::Linear,
        SpatialKind::Exp => {
            let p = r.f32s(2, "exponential parameters")?;
            SpatialRelevance::Exp(ExpSpatial { a: p[0], b: p[1] })
        }
    };
    let dist_max = r.f64("dist_max")?;
    RelevanceModel::new(spatial, head, dist_max)
}

pub fn write_model(model: &RelevanceModel) -> Result<Vec<u8>> {
    let mut w = BinWriter::new(Vec::new(), "<memory>");
    write_to(&mut w, model)?;
    Ok(w.into_inner())
}

pub fn read_model(bytes: &[u8]) -> Result<RelevanceModel> {
    let mut r = BinReader::new(bytes, "<memory>");
    let m = read_from(&mut r)?;
    r.expect_eof()?;
    Ok(m)
}

pub fn write_model_file(path: &Path, model: &RelevanceModel) -> Result<()> {
    atomic_write(path, |out| write_to(&mut BinWriter::new(out, path), model))
}

pub fn read_model_file(path: &Path) -> Result<RelevanceModel> {
    let mut r = BinReader::open(path)?;
    let m = read_from(&mut r)?;
    r.expect_eof()?;
    Ok(m)
}
