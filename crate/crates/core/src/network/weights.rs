//! Weight files (`.rdw`), little-endian:
//!
//! ```text
//! "RDW1" | records: u32
//! record: name_len: u32 | name (UTF-8) | rank: u32 | rank x u32 dims | product(dims) x f32
//! ```
//!
//! Each parametric layer writes two records, `<layer>.weight` and `<layer>.bias`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{LayerKind, Network, Real};
use crate::dataset::format::{element_count, Cursor};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"RDW1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Skip layers absent from the file instead of failing.
    pub allow_partial: bool,
    /// Re-initialize fully connected layers with this seed instead of loading them.
    pub reinit_fc: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    pub skipped: Vec<String>,
    pub reinitialized: Vec<String>,
}

struct Record {
    dims: Vec<usize>,
    values: Vec<f32>,
}

pub fn encode_weights<T: Real>(net: &Network<T>) -> Vec<u8> {
    let mut records = Vec::new();
    for (layer, p) in net.layers().iter().zip(net.params()) {
        if let Some(p) = p {
            records.push((format!("{}.weight", layer.name), p.weight_shape.clone(), &p.weight));
            records.push((format!("{}.bias", layer.name), vec![p.bias.len()], &p.bias));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, dims, values) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

fn decode_records(bytes: &[u8]) -> Result<BTreeMap<String, Record>> {
    let mut cur = Cursor::new(bytes);
    cur.magic(WEIGHTS_MAGIC)?;
    let count = cur.u32("record count")?;
    let mut records = BTreeMap::new();
    for _ in 0..count {
        let len = cur.u32("name length")? as usize;
        let name = String::from_utf8(cur.take(len, "record name")?.to_vec())
            .map_err(|_| Error::Truncated("record name is not UTF-8".into()))?;
        let rank = cur.u32("rank")? as usize;
        let mut dims = Vec::new();
        for _ in 0..rank {
            dims.push(cur.u32("dimension")? as u64);
        }
        let n = element_count(&dims)?;
        let payload = cur.take(n * 4, &format!("values of {name}"))?;
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.insert(
            name,
            Record {
                dims: dims.into_iter().map(|d| d as usize).collect(),
                values,
            },
        );
    }
    if cur.remaining() != 0 {
        return Err(Error::Truncated(format!("{} trailing bytes", cur.remaining())));
    }
    Ok(records)
}

pub fn save_weights<T: Real>(path: impl AsRef<Path>, net: &Network<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(net)).map_err(|e| Error::io(path, e))
}

/// Loads parameters into `net` by layer name. On error the network is untouched
/// and the error lists every offending layer.
pub fn load_weights<T: Real>(path: impl AsRef<Path>, net: &mut Network<T>, opts: LoadOptions) -> Result<LoadReport> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    apply_weights(&bytes, net, opts)
}

pub fn apply_weights<T: Real>(bytes: &[u8], net: &mut Network<T>, opts: LoadOptions) -> Result<LoadReport> {
    let records = decode_records(bytes)?;
    let mut staged = net.params().to_vec();
    let mut report = LoadReport::default();
    let mut offending = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        let Some(p) = staged[i].as_mut() else { continue };
        let is_fc = matches!(layer.kind, LayerKind::FullyConnected { .. });
        if is_fc && opts.reinit_fc.is_some() {
            report.reinitialized.push(layer.name.clone());
            continue;
        }
        let w = records.get(&format!("{}.weight", layer.name));
        let b = records.get(&format!("{}.bias", layer.name));
        match (w, b) {
            (Some(w), Some(b)) => {
                if w.dims != p.weight_shape || b.dims != [p.bias.len()] {
                    offending.push(format!(
                        "{}: file has {:?}/{:?}, network expects {:?}/[{}]",
                        layer.name,
                        w.dims,
                        b.dims,
                        p.weight_shape,
                        p.bias.len()
                    ));
                    continue;
                }
                p.weight = w.values.iter().map(|&v| T::of(v as f64)).collect();
                p.bias = b.values.iter().map(|&v| T::of(v as f64)).collect();
                report.loaded.push(layer.name.clone());
            }
            _ if opts.allow_partial => report.skipped.push(layer.name.clone()),
            _ => offending.push(format!("{}: missing from file", layer.name)),
        }
    }
    if !opts.allow_partial {
        let known: Vec<String> = net
            .layers()
            .iter()
            .filter(|l| l.is_parametric())
            .flat_map(|l| [format!("{}.weight", l.name), format!("{}.bias", l.name)])
            .collect();
        for name in records.keys().filter(|n| !known.contains(n)) {
            offending.push(format!("{name}: no such layer in network"));
        }
    }
    if !offending.is_empty() {
        return Err(Error::WeightMismatch(offending));
    }
    net.params_mut().clone_from_slice(&staged);
    if let Some(seed) = opts.reinit_fc {
        net.reinit_fully_connected(seed);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, Preset};

    fn mini(seed: u64) -> Network<f32> {
        build_network(Preset::Mini, [3, 257, 32], 6, seed).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = mini(1);
        let bytes = encode_weights(&net);
        let mut other = mini(2);
        apply_weights(&bytes, &mut other, LoadOptions::default()).unwrap();
        assert_eq!(net.params(), other.params());
        assert_eq!(encode_weights(&other), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_weights(&mini(1));
        assert_eq!(&bytes[..4], b"RDW1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 10);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 12);
        assert_eq!(&bytes[12..24], b"conv1.weight");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 4);
    }

    #[test]
    fn partial_load_reinitializes_fc() {
        let source = mini(1);
        let bytes = encode_weights(&source);
        let mut target = mini(2);
        let before = target.clone();
        let opts = LoadOptions {
            allow_partial: false,
            reinit_fc: Some(99),
        };
        let report = apply_weights(&bytes, &mut target, opts).unwrap();
        assert_eq!(report.loaded, ["conv1", "conv2", "conv3"]);
        assert_eq!(report.reinitialized, ["fc4", "fc5"]);
        for (i, layer) in target.layers().iter().enumerate() {
            match layer.kind {
                LayerKind::Conv { .. } => assert_eq!(target.params()[i], source.params()[i]),
                LayerKind::FullyConnected { .. } => {
                    assert_ne!(target.params()[i], source.params()[i]);
                    assert_ne!(target.params()[i], before.params()[i]);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn mismatched_layer_is_named() {
        let bytes = encode_weights(&mini(1));
        let mut wide = build_network::<f32>(Preset::Mini, [3, 257, 64], 6, 1).unwrap();
        let before = wide.clone();
        match apply_weights(&bytes, &mut wide, LoadOptions::default()) {
            Err(Error::WeightMismatch(list)) => {
                assert_eq!(list.len(), 1);
                assert!(list[0].starts_with("fc4"), "{list:?}");
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
        assert_eq!(wide.params(), before.params());

        let mut layers = crate::network::preset_layers(Preset::Mini, [3, 257, 32], 6);
        layers[0].kind = LayerKind::Conv {
            in_channels: 3,
            out_channels: 16,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let small_kernel = Network::<f32>::from_layers(layers, [3, 257, 32], 1).unwrap();
        let err = apply_weights(&encode_weights(&small_kernel), &mut mini(1), LoadOptions::default()).unwrap_err();
        match err {
            Error::WeightMismatch(list) => {
                assert_eq!(list.len(), 1);
                assert!(list[0].starts_with("conv1"), "{list:?}");
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_weights(&mini(1));
        let mut net = mini(1);
        let cut = bytes[..bytes.len() - 3].to_vec();
        assert!(matches!(
            apply_weights(&cut, &mut net, LoadOptions::default()),
            Err(Error::Truncated(_))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            apply_weights(&bytes, &mut net, LoadOptions::default()),
            Err(Error::BadMagic { .. })
        ));
    }
}
