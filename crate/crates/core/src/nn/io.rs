//! Weight file: `"LISTNN1"`, `u32` layer count, then per layer
//! `u32 input_dim, u32 output_dim, u32 activation` followed by the row-major
//! weights and the bias as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, DenseNet, LayerSpec};
use crate::binio::{atomic_write, BinReader, BinWriter};
use crate::error::Result;

pub const NET_MAGIC: &[u8; 7] = b"LISTNN1";

const MAX_LAYERS: usize = 64;

pub(crate) fn write_net_to<W: Write>(w: &mut BinWriter<W>, net: &DenseNet) -> Result<()> {
    w.bytes(NET_MAGIC)?;
    w.u32(net.num_layers())?;
    for l in 0..net.num_layers() {
        w.u32(net.dims()[l])?;
        w.u32(net.dims()[l + 1])?;
        w.u32(net.activation(l).code() as usize)?;
        w.f32s(net.weights(l))?;
        w.f32s(net.bias(l))?;
    }
    Ok(())
}

pub(crate) fn read_net_from<R: Read>(r: &mut BinReader<R>) -> Result<DenseNet> {
    r.expect_magic(NET_MAGIC)?;
    let n_layers = r.len("layer count")?;
    if n_layers == 0 || n_layers > MAX_LAYERS {
        return Err(r.error(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    let mut prev_out = None;
    for l in 0..n_layers {
        let input_dim = r.len("layer input dim")?;
        let output_dim = r.len("layer output dim")?;
        if input_dim == 0 || output_dim == 0 || input_dim.saturating_mul(output_dim) > 1 << 28 {
            return Err(r.error(format!("layer {l}: invalid dims {input_dim}x{output_dim}")));
        }
        if let Some(p) = prev_out {
            if p != input_dim {
                return Err(r.error(format!("layer {l}: input dim {input_dim} does not chain from {p}")));
            }
        }
        let code = r.u32("activation")?;
        let activation =
            Activation::from_code(code).ok_or_else(|| r.error(format!("layer {l}: unknown activation {code}")))?;
        let weights = r.f32s(input_dim * output_dim, "weights")?;
        let bias = r.f32s(output_dim, "bias")?;
        prev_out = Some(output_dim);
        layers.push(LayerSpec {
            input_dim,
            output_dim,
            activation,
            weights,
            bias,
        });
    }
    DenseNet::from_layers(layers)
}

/// Serialises `net` into an in-memory buffer.
pub fn write_net(net: &DenseNet) -> Result<Vec<u8>> {
    let mut w = BinWriter::new(Vec::new(), "<memory>");
    write_net_to(&mut w, net)?;
    Ok(w.into_inner())
}

pub fn read_net(bytes: &[u8]) -> Result<DenseNet> {
    let mut r = BinReader::new(bytes, "<memory>");
    let net = read_net_from(&mut r)?;
    r.expect_eof()?;
    Ok(net)
}

pub fn write_net_file(path: &Path, net: &DenseNet) -> Result<()> {
    atomic_write(path, |out| {
        let mut w = BinWriter::new(out, path);
        write_net_to(&mut w, net)
    })
}

pub fn read_net_file(path: &Path) -> Result<DenseNet> {
    let mut r = BinReader::open(path)?;
    let net = read_net_from(&mut r)?;
    r.expect_eof()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_net() -> DenseNet {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = DenseNet::xavier(
            &[6, 8, 3],
            &[Activation::Relu, Activation::Softplus],
            &mut rng,
        )
        .unwrap();
        net.round_to_f32();
        net
    }

    #[test]
    fn round_trip_is_lossless_for_f32_parameters() {
        let net = sample_net();
        let bytes = write_net(&net).unwrap();
        assert_eq!(&bytes[..7], b"LISTNN1");
        assert_eq!(read_net(&bytes).unwrap(), net);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        write_net_file(&p, &net).unwrap();
        assert_eq!(read_net_file(&p).unwrap(), net);
    }

    #[test]
    fn corrupted_inputs_are_named() {
        let net = sample_net();
        let mut bytes = write_net(&net).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(read_net(&bad_magic).unwrap_err().to_string().contains("bad magic"));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(read_net(truncated).unwrap_err().to_string().contains("truncated"));

        // second layer's input dim no longer chains
        let second = 7 + 4 + 12 + 4 * (6 * 8 + 8);
        bytes[second..second + 4].copy_from_slice(&5u32.to_le_bytes());
        assert!(read_net(&bytes).unwrap_err().to_string().contains("does not chain"));

        let mut trailing = write_net(&net).unwrap();
        trailing.push(0);
        assert!(read_net(&trailing).unwrap_err().to_string().contains("trailing"));
    }
}
