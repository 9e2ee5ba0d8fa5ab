use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::raster::Mask;

pub const TRAS_MAGIC: &[u8; 4] = b"TRAS";
pub const TRAS_VERSION: u16 = 1;

/// Multi-channel float raster: planar little-endian `f32`, channel after
/// channel, each row-major, then an optional mask packed LSB-first.
#[derive(Clone, Debug, PartialEq)]
pub struct TrasRaster {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<Vec<f64>>,
    pub mask: Option<Mask>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl TrasRaster {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let n = self.width * self.height;
        if self.channels.len() > u8::MAX as usize || self.channels.iter().any(|c| c.len() != n) {
            return Err(crate::error::contract("TRAS channels must match the raster size"));
        }
        if self.width > u32::MAX as usize || self.height > u32::MAX as usize {
            return Err(crate::error::contract("TRAS dimensions exceed u32"));
        }
        let mut buf = Vec::with_capacity(16 + 4 * n * self.channels.len() + n / 8 + 1);
        buf.extend_from_slice(TRAS_MAGIC);
        buf.extend_from_slice(&TRAS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.push(self.channels.len() as u8);
        buf.push(self.mask.is_some() as u8);
        for c in &self.channels {
            for v in c {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        if let Some(m) = &self.mask {
            if m.width != self.width || m.height != self.height {
                return Err(crate::error::contract("TRAS mask size disagrees"));
            }
            let mut packed = vec![0u8; n.div_ceil(8)];
            for (i, &b) in m.bits.iter().enumerate() {
                if b {
                    packed[i / 8] |= 1 << (i % 8);
                }
            }
            buf.extend_from_slice(&packed);
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != TRAS_MAGIC {
            return Err(fmt_err("not a TRAS raster"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != TRAS_VERSION {
            return Err(fmt_err(format!("unsupported TRAS version {version}")));
        }
        let width = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let height = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
        let nc = bytes[14] as usize;
        let has_mask = match bytes[15] {
            0 => false,
            1 => true,
            f => return Err(fmt_err(format!("bad TRAS mask flag {f}"))),
        };
        let n = width.checked_mul(height).ok_or_else(|| fmt_err("TRAS dimensions overflow"))?;
        let data_len = n.checked_mul(4 * nc).ok_or_else(|| fmt_err("TRAS size overflow"))?;
        let mask_len = if has_mask { n.div_ceil(8) } else { 0 };
        if bytes.len() != 16 + data_len + mask_len {
            return Err(fmt_err(format!("TRAS payload is {} bytes, expected {}", bytes.len() - 16, data_len + mask_len)));
        }
        let data = &bytes[16..16 + data_len];
        let channels = (0..nc)
            .map(|c| {
                data[c * 4 * n..(c + 1) * 4 * n]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    .collect()
            })
            .collect();
        let mask = has_mask.then(|| {
            let packed = &bytes[16 + data_len..];
            let bits = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
            Mask { width, height, bits }
        });
        Ok(Self { width, height, channels, mask })
    }
}
