use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::estimation::psnn::ChannelMode;
use crate::render::{CalibrationSample, TactileFrame};

pub const DEFAULT_LUT_BINS: usize = 16;

/// Which pixels of each sample populate the table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LutRegion {
    #[default]
    Contact,
    /// Every valid pixel, contact or not.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutEntry {
    pub gx: f64,
    pub gy: f64,
    pub count: u64,
}

/// Quantized intensity tuple -> running mean gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LookupTable {
    pub bins_per_channel: usize,
    pub channel_mode: ChannelMode,
    pub entries: BTreeMap<u64, LutEntry>,
}

/// `min(floor(v * bins), bins - 1)`, with negative values in bin 0.
pub fn bin_index(v: f64, bins: usize) -> usize {
    if !(v > 0.0) {
        return 0;
    }
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

impl LookupTable {
    pub fn new(bins_per_channel: usize, channel_mode: ChannelMode) -> Result<Self> {
        if bins_per_channel < 1 {
            return Err(contract("LUT needs at least one bin per channel"));
        }
        if (bins_per_channel as f64).powi(channel_mode.channels() as i32) > u64::MAX as f64 {
            return Err(contract("too many LUT bins for a 64-bit key"));
        }
        Ok(Self { bins_per_channel, channel_mode, entries: BTreeMap::new() })
    }

    /// Flattened bin key, first channel most significant.
    pub fn key(&self, intensities: &[f64]) -> Result<u64> {
        self.check_len(intensities)?;
        Ok(intensities
            .iter()
            .fold(0u64, |k, &v| k * self.bins_per_channel as u64 + bin_index(v, self.bins_per_channel) as u64))
    }

    pub fn unflatten(&self, mut key: u64) -> Vec<usize> {
        let b = self.bins_per_channel as u64;
        let mut out = vec![0; self.channel_mode.channels()];
        for slot in out.iter_mut().rev() {
            *slot = (key % b) as usize;
            key /= b;
        }
        out
    }

    fn check_len(&self, intensities: &[f64]) -> Result<()> {
        if intensities.len() != self.channel_mode.channels() {
            return Err(contract(format!(
                "LUT takes {} intensities, got {}",
                self.channel_mode.channels(),
                intensities.len()
            )));
        }
        Ok(())
    }

    pub fn insert(&mut self, intensities: &[f64], gx: f64, gy: f64) -> Result<()> {
        if !(gx.is_finite() && gy.is_finite()) {
            return Err(contract("LUT gradients must be finite"));
        }
        let key = self.key(intensities)?;
        let e = self.entries.entry(key).or_insert(LutEntry { gx: 0.0, gy: 0.0, count: 0 });
        e.count += 1;
        e.gx += (gx - e.gx) / e.count as f64;
        e.gy += (gy - e.gy) / e.count as f64;
        Ok(())
    }

    /// Exact bin, else the populated bin nearest in L1 bin distance; ties go
    /// to the lowest key.
    pub fn lookup_key(&self, key: u64) -> Result<(f64, f64)> {
        if let Some(e) = self.entries.get(&key) {
            return Ok((e.gx, e.gy));
        }
        let target = self.unflatten(key);
        let mut best: Option<(usize, &LutEntry)> = None;
        for (&k, e) in &self.entries {
            let d: usize = self.unflatten(k).iter().zip(&target).map(|(a, b)| a.abs_diff(*b)).sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, e));
            }
        }
        best.map(|(_, e)| (e.gx, e.gy)).ok_or_else(|| Error::EmptyRegion("lookup table is empty".into()))
    }
}

/// Running mean of ground-truth gradients `(-nx/nz, -ny/nz)` per intensity bin.
pub fn lut_build<'a>(
    samples: impl IntoIterator<Item = &'a CalibrationSample>,
    bins_per_channel: usize,
    channel_mode: ChannelMode,
    region: LutRegion,
) -> Result<LookupTable> {
    let mut table = LookupTable::new(bins_per_channel, channel_mode)?;
    let c = channel_mode.channels();
    let mut seen = false;
    for s in samples {
        seen = true;
        let region_mask = match region {
            LutRegion::Contact => s.contact_mask(),
            LutRegion::Valid => s.frame.mask.clone(),
        };
        for (p, _) in region_mask.bits.iter().enumerate().filter(|(_, b)| **b) {
            let [nx, ny, nz] = s.gt_normals.get(p);
            let px = s.frame.pixel(p);
            table.insert(&px[..c], -nx / nz, -ny / nz)?;
        }
    }
    if !seen {
        return Err(Error::EmptyRegion("no samples to build the lookup table from".into()));
    }
    Ok(table)
}

pub fn lut_query(table: &LookupTable, intensities: &[f64]) -> Result<(f64, f64)> {
    table.lookup_key(table.key(intensities)?)
}

/// Builds a table straight from one frame and its ground-truth normals.
pub fn lut_from_frame(
    frame: &TactileFrame,
    normals: &crate::raster::NormalMap,
    bins_per_channel: usize,
    channel_mode: ChannelMode,
) -> Result<LookupTable> {
    let mut table = LookupTable::new(bins_per_channel, channel_mode)?;
    let c = channel_mode.channels();
    for (p, _) in frame.mask.bits.iter().enumerate().filter(|(_, b)| **b) {
        let [nx, ny, nz] = normals.get(p);
        table.insert(&frame.pixel(p)[..c], -nx / nz, -ny / nz)?;
    }
    Ok(table)
}
