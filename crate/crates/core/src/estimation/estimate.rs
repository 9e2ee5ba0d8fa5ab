use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{contract, Result};
use crate::estimation::lut::LookupTable;
use crate::estimation::psnn::{normalize_or_up, ChannelMode, ForwardMode, PsnnModel};
use crate::estimation::train::{encoding_table, push_features};
use crate::raster::NormalMap;
use crate::render::TactileFrame;

/// Smallest `nz` an estimated normal may carry; steeper predictions are
/// tilted back onto this cone.
pub const MIN_ESTIMATED_NZ: f64 = 1e-3;

const INFERENCE_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug)]
pub enum Estimator<'a> {
    Psnn(&'a PsnnModel),
    Lut(&'a LookupTable),
}

impl Estimator<'_> {
    pub fn channel_mode(&self) -> ChannelMode {
        match self {
            Estimator::Psnn(m) => m.channel_mode,
            Estimator::Lut(t) => t.channel_mode,
        }
    }
}

fn camera_facing(n: [f64; 3]) -> [f64; 3] {
    if n[2] >= MIN_ESTIMATED_NZ {
        return n;
    }
    let xy = n[0].hypot(n[1]);
    if xy == 0.0 {
        return [0.0, 0.0, 1.0];
    }
    let s = (1.0 - MIN_ESTIMATED_NZ * MIN_ESTIMATED_NZ).sqrt() / xy;
    [n[0] * s, n[1] * s, MIN_ESTIMATED_NZ]
}

/// Per-pixel normals over the frame's valid mask, reading the first
/// `mode.channels()` frame channels. `mode` must be the estimator's own.
pub fn estimate_normal_map(frame: &TactileFrame, estimator: Estimator, mode: ChannelMode) -> Result<NormalMap> {
    frame.validate()?;
    estimator.channel_mode().check(mode)?;
    let mut out = NormalMap::flat(frame.mask.clone());
    let valid: Vec<usize> = frame.mask.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect();
    match estimator {
        Estimator::Psnn(model) => {
            model.validate()?;
            let enc_len = model.encoding.len();
            let enc = encoding_table(&model.encoding, frame.width, frame.height)?;
            let width = model.input_width();
            for chunk in valid.chunks(INFERENCE_CHUNK) {
                let mut inputs = Vec::with_capacity(chunk.len() * width);
                for &p in chunk {
                    push_features(frame, p, mode, &enc, enc_len, &mut inputs);
                }
                let x = Array2::from_shape_vec((chunk.len(), width), inputs).expect("chunk shape");
                let raw = model.forward_batch(&x, ForwardMode::Inference)?;
                for (row, &p) in raw.rows().into_iter().zip(chunk) {
                    out.set(p, camera_facing(normalize_or_up([row[0], row[1], row[2]])));
                }
            }
        }
        Estimator::Lut(table) => {
            if table.entries.is_empty() {
                return Err(crate::error::Error::EmptyRegion("lookup table is empty".into()));
            }
            let c = mode.channels();
            let mut cache: HashMap<u64, (f64, f64)> = HashMap::new();
            for &p in &valid {
                let key = table.key(&frame.pixel(p)[..c])?;
                let (gx, gy) = match cache.get(&key) {
                    Some(g) => *g,
                    None => {
                        let g = table.lookup_key(key)?;
                        cache.insert(key, g);
                        g
                    }
                };
                out.set(p, normalize_or_up([-gx, -gy, 1.0]));
            }
        }
    }
    if out.nx.iter().chain(&out.ny).chain(&out.nz).any(|v| !v.is_finite()) {
        return Err(contract("estimated normals are not finite"));
    }
    Ok(out)
}
