//! `CMMW` weight files.
//!
//! Layout (little-endian): magic `CMMW`, u32 version, u32 C/H/W, u32 layer
//! count, then per layer a u8 kind code followed by three u32 sizes and an
//! f64 (the dropout rate, zero elsewhere). Next come a u32 tensor count and
//! each tensor as a u64 length plus f64 values: every layer's parameters and
//! then its running statistics, in layer order. A u64 FNV-1a of all prior
//! bytes closes the file.

use std::path::Path;

use super::network::{Architecture, LayerSpec, Network};
use super::train::TrainConfig;
use crate::binio::{put_f64, put_u32, put_u64, sidecar_path, to_u32, Reader};
use crate::config::KeyValues;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CMMW";
const VERSION: u32 = 1;

fn encode_spec(spec: &LayerSpec) -> Result<(u8, [u32; 3], f64)> {
    Ok(match *spec {
        LayerSpec::Conv2d { filters, kh, kw } => (
            1,
            [
                to_u32(filters, "filters")?,
                to_u32(kh, "kernel")?,
                to_u32(kw, "kernel")?,
            ],
            0.0,
        ),
        LayerSpec::Norm => (2, [0; 3], 0.0),
        LayerSpec::Relu => (3, [0; 3], 0.0),
        LayerSpec::FullyConnected { units } => (4, [to_u32(units, "units")?, 0, 0], 0.0),
        LayerSpec::Dropout { p } => (5, [0; 3], p),
        LayerSpec::Flatten => (6, [0; 3], 0.0),
    })
}

fn decode_spec(code: u8, a: [u32; 3], p: f64, offset: usize) -> Result<LayerSpec> {
    let [x, y, z] = a.map(|v| v as usize);
    Ok(match code {
        1 => LayerSpec::Conv2d {
            filters: x,
            kh: y,
            kw: z,
        },
        2 => LayerSpec::Norm,
        3 => LayerSpec::Relu,
        4 => LayerSpec::FullyConnected { units: x },
        5 => LayerSpec::Dropout { p },
        6 => LayerSpec::Flatten,
        _ => return Err(Error::format(offset as u64, format!("unknown layer kind {code}"))),
    })
}

fn state_tensors(model: &Network) -> Vec<&[f64]> {
    model
        .layers()
        .iter()
        .flat_map(|l| {
            let mut t = l.params();
            t.extend(l.buffers());
            t
        })
        .collect()
}

pub(crate) fn encode_checkpoint(model: &Network) -> Result<Vec<u8>> {
    let arch = model.architecture();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    for d in arch.input {
        put_u32(&mut out, to_u32(d, "input dimension")?);
    }
    put_u32(&mut out, to_u32(arch.layers.len(), "layer count")?);
    for spec in &arch.layers {
        let (code, sizes, p) = encode_spec(spec)?;
        out.push(code);
        for s in sizes {
            put_u32(&mut out, s);
        }
        put_f64(&mut out, p);
    }
    let tensors = state_tensors(model);
    put_u32(&mut out, to_u32(tensors.len(), "tensor count")?);
    for t in tensors {
        put_u64(&mut out, t.len() as u64);
        for &v in t {
            put_f64(&mut out, v);
        }
    }
    let sum = crate::binio::fnv1a(&out);
    put_u64(&mut out, sum);
    Ok(out)
}

pub(crate) fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "not a CMMW checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let input = [
        r.u32("input")? as usize,
        r.u32("input")? as usize,
        r.u32("input")? as usize,
    ];
    let n_layers = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let at = r.pos();
        let code = r.u8("layer kind")?;
        let sizes = [r.u32("layer size")?, r.u32("layer size")?, r.u32("layer size")?];
        let p = r.f64("dropout rate")?;
        layers.push(decode_spec(code, sizes, p, at)?);
    }
    let arch_at = r.pos();
    let arch = Architecture { input, layers };
    let mut model =
        Network::new(arch, 0).map_err(|e| Error::format(arch_at as u64, format!("bad layer table: {e}")))?;

    let count = r.u32("tensor count")? as usize;
    let expected: Vec<usize> = state_tensors(&model).iter().map(|t| t.len()).collect();
    if count != expected.len() {
        return Err(Error::format(
            arch_at as u64,
            format!("{count} tensors stored, architecture needs {}", expected.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for want in expected {
        let at = r.pos();
        let len = r.u64("tensor length")? as usize;
        if len != want {
            return Err(Error::format(
                at as u64,
                format!("tensor has {len} values, expected {want}"),
            ));
        }
        let raw = r.take(len.saturating_mul(8), "tensor data")?;
        values.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<f64>>(),
        );
    }
    r.checksum()?;

    let mut it = values.into_iter();
    for layer in model.layers_mut() {
        for t in layer.params_mut() {
            *t = it.next().expect("count checked");
        }
        for t in layer.buffers_mut() {
            *t = it.next().expect("count checked");
        }
    }
    Ok(model)
}

pub fn write_checkpoint(model: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Network> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Writes the training hyper-parameters to `<path>.meta`.
pub fn write_train_config(path: &Path, cfg: &TrainConfig) -> Result<()> {
    let mut kv = KeyValues::new();
    kv.set("train.learning_rate", cfg.learning_rate);
    kv.set("train.momentum", cfg.momentum);
    kv.set("train.batch_size", cfg.batch_size);
    kv.set("train.epochs", cfg.epochs);
    kv.set("train.seed", cfg.seed);
    std::fs::write(sidecar_path(path), kv.to_text())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{CnnShape, Tensor};

    fn small() -> Network {
        let shape = CnnShape {
            filters: 3,
            kernel: (2, 2),
            conv_layers: 1,
            fc_units: 5,
            fc_layers: 1,
            dropout: 0.25,
        };
        Network::new(Architecture::cnn_mimo(2, 3, 1, &shape), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = small();
        let x = Tensor::new(vec![2, 3, 2, 3], (0..36).map(|i| (i as f64 * 0.37).sin()).collect());
        // move the running statistics away from their initial values
        let mut rng = crate::rng::seeded(1);
        m.forward(&x, crate::nn::Mode::Train, &mut rng).unwrap();
        let bytes = encode_checkpoint(&m).unwrap();
        let mut back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.architecture(), m.architecture());
        assert_eq!(state_tensors(&back), state_tensors(&m));
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&small()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_checkpoint(short), Err(Error::Format { .. })));
        let mut flipped = bytes.clone();
        let mid = bytes.len() - 20;
        flipped[mid] ^= 1;
        match decode_checkpoint(&flipped) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 8),
            other => panic!("{other:?}"),
        }
    }
}
