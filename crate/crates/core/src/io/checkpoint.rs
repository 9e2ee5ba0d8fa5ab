use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{ChannelMode, LookupTable, LutEntry, PositionalEncodingConfig, PsnnModel, TrainConfig};
use crate::io::write_atomic;

pub const PSNN_MAGIC: &[u8; 5] = b"PSNN1";
pub const LUT_MAGIC: &[u8; 4] = b"LUT1";

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// JSON written next to a checkpoint; carries what the binary layout does not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSidecar {
    pub channel_mode: ChannelMode,
    pub encoding: PositionalEncodingConfig,
    pub dropout_rate: f64,
    pub layer_widths: Vec<usize>,
    pub train_config: Option<TrainConfig>,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| fmt_err("file is truncated"))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as f64)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(fmt_err("trailing bytes after payload"));
        }
        Ok(())
    }
}

/// `PSNN1`, `u32` width count, `u32` widths, `f32` trainable tensors in
/// [`PsnnModel::params`] order, then running mean and variance per batchnorm layer.
pub fn psnn_to_bytes(model: &PsnnModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut b = Vec::new();
    b.extend_from_slice(PSNN_MAGIC);
    let widths = model.layer_widths();
    b.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for w in &widths {
        b.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    let mut put = |vals: &[f64]| vals.iter().for_each(|v| b.extend_from_slice(&(*v as f32).to_le_bytes()));
    for t in model.params() {
        put(t);
    }
    for bn in &model.norms {
        put(bn.running_mean.as_slice().expect("standard layout"));
        put(bn.running_var.as_slice().expect("standard layout"));
    }
    Ok(b)
}

pub fn psnn_from_bytes(bytes: &[u8], sidecar: &CheckpointSidecar) -> Result<PsnnModel> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(5)? != PSNN_MAGIC {
        return Err(fmt_err("not a PSNN1 checkpoint"));
    }
    let n = c.u32()? as usize;
    if n != 5 {
        return Err(fmt_err(format!("checkpoint lists {n} layer widths, expected 5")));
    }
    let widths = (0..n).map(|_| c.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
    if widths != sidecar.layer_widths {
        return Err(fmt_err("checkpoint widths disagree with the sidecar"));
    }
    let hidden = [widths[1], widths[2], widths[3]];
    let mut model = PsnnModel::zeros(sidecar.channel_mode, sidecar.encoding, hidden, sidecar.dropout_rate)
        .map_err(|e| fmt_err(e.to_string()))?;
    if model.layer_widths() != widths {
        return Err(fmt_err("checkpoint widths do not match the channel mode and encoding"));
    }
    for t in model.params_mut() {
        for v in t.iter_mut() {
            *v = c.f32()?;
        }
    }
    for bn in &mut model.norms {
        for v in bn.running_mean.iter_mut().chain(bn.running_var.iter_mut()) {
            *v = c.f32()?;
        }
    }
    c.finish()?;
    model.validate().map_err(|e| fmt_err(e.to_string()))?;
    Ok(model)
}

pub fn save_psnn(path: &Path, model: &PsnnModel, train_config: Option<&TrainConfig>) -> Result<()> {
    let sidecar = CheckpointSidecar {
        channel_mode: model.channel_mode,
        encoding: model.encoding,
        dropout_rate: model.dropout_rate,
        layer_widths: model.layer_widths(),
        train_config: train_config.cloned(),
    };
    write_atomic(path, &psnn_to_bytes(model)?)?;
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

pub fn load_psnn(path: &Path) -> Result<(PsnnModel, CheckpointSidecar)> {
    let sidecar: CheckpointSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)
        .map_err(|e| fmt_err(format!("checkpoint sidecar: {e}")))?;
    let model = psnn_from_bytes(&std::fs::read(path)?, &sidecar)?;
    Ok((model, sidecar))
}

/// `LUT1`, `u32` bins per channel, `u8` channel count, `u64` record count,
/// then `(u64 key, f64 gx, f64 gy, u64 count)` records in key order.
pub fn lut_to_bytes(table: &LookupTable) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(LUT_MAGIC);
    b.extend_from_slice(&(table.bins_per_channel as u32).to_le_bytes());
    b.push(table.channel_mode.channels() as u8);
    b.extend_from_slice(&(table.entries.len() as u64).to_le_bytes());
    for (k, e) in &table.entries {
        b.extend_from_slice(&k.to_le_bytes());
        b.extend_from_slice(&e.gx.to_le_bytes());
        b.extend_from_slice(&e.gy.to_le_bytes());
        b.extend_from_slice(&e.count.to_le_bytes());
    }
    b
}

pub fn lut_from_bytes(bytes: &[u8]) -> Result<LookupTable> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4)? != LUT_MAGIC {
        return Err(fmt_err("not a LUT1 table"));
    }
    let bins = c.u32()? as usize;
    let mode = match c.take(1)?[0] {
        3 => ChannelMode::RgbOnly,
        6 => ChannelMode::RgbNir,
        n => return Err(fmt_err(format!("LUT with {n} channels"))),
    };
    let mut table = LookupTable::new(bins, mode).map_err(|e| fmt_err(e.to_string()))?;
    let n = c.u64()?;
    let limit = (bins as f64).powi(mode.channels() as i32);
    for _ in 0..n {
        let key = c.u64()?;
        let (gx, gy, count) = (c.f64()?, c.f64()?, c.u64()?);
        if key as f64 >= limit || !(gx.is_finite() && gy.is_finite()) || count == 0 {
            return Err(fmt_err("invalid LUT record"));
        }
        table.entries.insert(key, LutEntry { gx, gy, count });
    }
    c.finish()?;
    Ok(table)
}

pub fn save_lut(path: &Path, table: &LookupTable) -> Result<()> {
    write_atomic(path, &lut_to_bytes(table))
}

pub fn load_lut(path: &Path) -> Result<LookupTable> {
    lut_from_bytes(&std::fs::read(path)?)
}

/// Which estimator a file holds, judged by its magic bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Psnn,
    Lut,
}

pub fn sniff_estimator(path: &Path) -> Result<EstimatorKind> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(PSNN_MAGIC) {
        Ok(EstimatorKind::Psnn)
    } else if bytes.starts_with(LUT_MAGIC) {
        Ok(EstimatorKind::Lut)
    } else {
        Err(fmt_err(format!("{} is neither a PSNN1 checkpoint nor a LUT1 table", path.display())))
    }
}
