//! Binary file formats.
//!
//! Tensor file (`.rdt`), little-endian:
//!
//! ```text
//! "RDT1" | channels: u32 | height: u32 | width: u32 | channels*height*width x f32
//! ```
//!
//! Values are channel-major, row-major within a channel.
//!
//! Beat-signal file (`.rbs`), little-endian:
//!
//! ```text
//! "RBS1" | samples_per_ramp: u32 | first_ramp: u8 (0 up, 1 down)
//!        | label: u8 (class index, 255 none) | reserved: u16
//!        | sample_rate: f64 | count: u64 | count x f64
//! ```

use std::fs;
use std::path::Path;

use crate::class::VehicleClass;
use crate::error::{Error, Result};
use crate::radar_model::{BeatSignal, RampPolarity};
use crate::spectrogram::RdTensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"RDT1";
pub const SIGNAL_MAGIC: &[u8; 4] = b"RBS1";

/// Upper bound on elements in one file, guards against absurd headers.
const MAX_ELEMENTS: u64 = 1 << 32;

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != expected {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub(crate) fn element_count(dims: &[u64]) -> Result<usize> {
    let n = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::DimensionOverflow(format!("dims {dims:?}")))?;
    usize::try_from(n).map_err(|_| Error::DimensionOverflow(format!("dims {dims:?}")))
}

pub fn encode_tensor(t: &RdTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<RdTensor> {
    let mut cur = Cursor::new(bytes);
    cur.magic(TENSOR_MAGIC)?;
    let c = cur.u32("channels")?;
    let h = cur.u32("height")?;
    let w = cur.u32("width")?;
    let n = element_count(&[c as u64, h as u64, w as u64])?;
    let payload = cur.take(
        n.checked_mul(4)
            .ok_or_else(|| Error::DimensionOverflow(format!("{c}x{h}x{w}")))?,
        "tensor payload",
    )?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(RdTensor {
        channels: c as usize,
        height: h as usize,
        width: w as usize,
        data,
        label: None,
    })
}

pub fn save_tensor(path: impl AsRef<Path>, t: &RdTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<RdTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn encode_signal(sig: &BeatSignal) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 8 * sig.samples.len());
    out.extend_from_slice(SIGNAL_MAGIC);
    out.extend_from_slice(&(sig.samples_per_ramp as u32).to_le_bytes());
    out.push(match sig.first_ramp {
        RampPolarity::Up => 0,
        RampPolarity::Down => 1,
    });
    out.push(sig.label.map_or(255, |c| c.index() as u8));
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&sig.sample_rate.to_le_bytes());
    out.extend_from_slice(&(sig.samples.len() as u64).to_le_bytes());
    for v in &sig.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_signal(bytes: &[u8]) -> Result<BeatSignal> {
    let mut cur = Cursor::new(bytes);
    cur.magic(SIGNAL_MAGIC)?;
    let samples_per_ramp = cur.u32("samples_per_ramp")? as usize;
    let first_ramp = match cur.u8("first_ramp")? {
        0 => RampPolarity::Up,
        1 => RampPolarity::Down,
        other => return Err(Error::Domain(format!("bad ramp polarity byte {other}"))),
    };
    let label = match cur.u8("label")? {
        255 => None,
        i => Some(
            VehicleClass::from_index(i as usize)
                .ok_or_else(|| Error::UnknownClass(format!("index {i}")))?,
        ),
    };
    cur.take(2, "reserved")?;
    let sample_rate = cur.f64("sample_rate")?;
    let count = cur.u64("count")?;
    let n = element_count(&[count])?;
    if n.saturating_mul(8) > cur.remaining() {
        return Err(Error::Truncated(format!(
            "header promises {n} samples, {} bytes left",
            cur.remaining()
        )));
    }
    let samples = cur
        .take(n * 8, "samples")?
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(BeatSignal {
        samples,
        sample_rate,
        first_ramp,
        samples_per_ramp,
        label,
    })
}

pub fn save_signal(path: impl AsRef<Path>, sig: &BeatSignal) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_signal(sig)).map_err(|e| Error::io(path, e))
}

pub fn load_signal(path: impl AsRef<Path>) -> Result<BeatSignal> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_signal(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(c: usize, h: usize, w: usize) -> RdTensor {
        let mut t = RdTensor::zeros(c, h, w);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.25 - 3.0);
        t
    }

    #[test]
    fn header_layout() {
        let bytes = encode_tensor(&tensor(3, 2, 1));
        assert_eq!(&bytes[..4], b"RDT1");
        assert_eq!(&bytes[4..16], &[3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(&bytes[16..20], &(-3.0f32).to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_tensor(&tensor(1, 1, 1));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_tensor(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_tensor(&tensor(3, 4, 5));
        assert!(matches!(
            decode_tensor(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(decode_tensor(&bytes[..10]), Err(Error::Truncated(_))));
    }

    #[test]
    fn dimension_overflow() {
        let mut bytes = b"RDT1".to_vec();
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_tensor(&bytes), Err(Error::DimensionOverflow(_))));
    }

    #[test]
    fn signal_roundtrip_and_errors() {
        let sig = BeatSignal {
            samples: (0..1024).map(|i| (i as f64).sqrt() - 7.5).collect(),
            sample_rate: 12_800.0,
            first_ramp: RampPolarity::Down,
            samples_per_ramp: 512,
            label: Some(VehicleClass::E),
        };
        let bytes = encode_signal(&sig);
        assert_eq!(decode_signal(&bytes).unwrap(), sig);
        assert!(matches!(
            decode_signal(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(decode_signal(b"RDT1...."), Err(Error::BadMagic { .. })));
    }

    proptest! {
        #[test]
        fn tensor_roundtrip_is_bit_exact(
            c in 1usize..4, h in 1usize..9, w in 1usize..9,
            seed in any::<u32>(),
        ) {
            let mut t = RdTensor::zeros(c, h, w);
            let mut x = seed;
            for v in &mut t.data {
                x = x.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
                *v = f32::from_bits(x);
            }
            let back = decode_tensor(&encode_tensor(&t)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let a: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
