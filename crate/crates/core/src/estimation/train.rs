use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::estimation::encoding::{normalized_coords, PositionalEncodingConfig};
use crate::estimation::psnn::{
    psnn_loss_grad, ChannelMode, PsnnModel, DEFAULT_DROPOUT, DEFAULT_HIDDEN_WIDTH, HIDDEN_LAYERS,
};
use crate::render::{CalibrationDataset, CalibrationSample, Split, TactileFrame};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `learning_rate` to zero over all epochs.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => 0.5 * base * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub channel_mode: ChannelMode,
    /// Share of each batch drawn from valid non-contact pixels.
    pub background_sample_fraction: f64,
    pub hidden_width: usize,
    pub dropout_rate: f64,
    pub encoding: PositionalEncodingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4096,
            epochs: 200,
            seed: 0,
            channel_mode: ChannelMode::RgbNir,
            background_sample_fraction: 0.25,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            dropout_rate: DEFAULT_DROPOUT,
            encoding: PositionalEncodingConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(contract("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.background_sample_fraction) {
            return Err(contract("background sample fraction must lie in [0, 1]"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return Err(contract("Adam betas must lie in [0, 1) and epsilon must be positive"));
        }
        if self.batch_size < 2 {
            return Err(contract("batch size must be at least 2"));
        }
        if self.hidden_width == 0 {
            return Err(contract("hidden width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(contract("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &PsnnModel, config: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut PsnnModel, grads: &[Vec<f64>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (ti, param) in model.params_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[ti], &mut self.v[ti], &grads[ti]);
            for j in 0..param.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                param[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub contact_pixels: usize,
    pub background_pixels: usize,
}

/// Per-pixel encoding features for a `width x height` frame, row-major.
pub fn encoding_table(config: &PositionalEncodingConfig, width: usize, height: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(width * height * config.len());
    for row in 0..height {
        for col in 0..width {
            let (u, v) = normalized_coords(col, row, width, height);
            config.encode_into(u, v, &mut out)?;
        }
    }
    Ok(out)
}

/// Ground-truth unit normal of a pixel as the training target.
fn push_pixel(
    sample: &CalibrationSample,
    pixel: usize,
    mode: ChannelMode,
    enc: &[f64],
    enc_len: usize,
    inputs: &mut Vec<f64>,
    targets: &mut Vec<f64>,
) {
    push_features(&sample.frame, pixel, mode, enc, enc_len, inputs);
    targets.extend_from_slice(&sample.gt_normals.get(pixel));
}

pub(crate) fn push_features(
    frame: &TactileFrame,
    pixel: usize,
    mode: ChannelMode,
    enc: &[f64],
    enc_len: usize,
    inputs: &mut Vec<f64>,
) {
    inputs.extend(frame.channels[..mode.channels()].iter().map(|c| c[pixel]));
    inputs.extend_from_slice(&enc[pixel * enc_len..(pixel + 1) * enc_len]);
}

/// Trains a fresh model on the dataset's train split.
///
/// Each epoch visits every contact pixel once in shuffled order; every batch
/// is topped up with uniformly drawn background pixels so they make up
/// `background_sample_fraction` of it. Without contact pixels the batches are
/// background only.
pub fn psnn_train(dataset: &CalibrationDataset, config: &TrainConfig) -> Result<(PsnnModel, TrainHistory)> {
    config.validate()?;
    let samples: Vec<&CalibrationSample> = dataset.split(Split::Train).collect();
    let (w, h) = match samples.first() {
        Some(s) => (s.frame.width, s.frame.height),
        None => return Err(Error::EmptyRegion("dataset has no train samples".into())),
    };
    if samples.iter().any(|s| s.frame.width != w || s.frame.height != h) {
        return Err(contract("train frames must share dimensions"));
    }

    let mut contact: Vec<(u32, u32)> = Vec::new();
    let mut background_count = 0usize;
    let mut background_masks = Vec::with_capacity(samples.len());
    for (si, s) in samples.iter().enumerate() {
        let c = s.contact_mask();
        let bg = s.frame.mask.and_not(&c)?;
        contact.extend(c.bits.iter().enumerate().filter(|(_, b)| **b).map(|(p, _)| (si as u32, p as u32)));
        background_count += bg.count();
        background_masks.push(bg);
    }
    if contact.is_empty() && background_count == 0 {
        return Err(Error::EmptyRegion("dataset has no valid training pixels".into()));
    }

    let mode = config.channel_mode;
    let enc_len = config.encoding.len();
    let enc = encoding_table(&config.encoding, w, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = PsnnModel::new(mode, config.encoding, [config.hidden_width; HIDDEN_LAYERS], config.dropout_rate, &mut rng)?;
    let mut adam = Adam::new(&model, config);

    let f = if contact.is_empty() {
        1.0
    } else if background_count == 0 {
        0.0
    } else {
        config.background_sample_fraction
    };
    let per_batch_contact = ((config.batch_size as f64) * (1.0 - f)).round() as usize;
    let batches = if per_batch_contact == 0 || contact.is_empty() {
        background_count.div_ceil(config.batch_size).max(1)
    } else {
        contact.len().div_ceil(per_batch_contact)
    };

    let width = model.input_width();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        adam.lr = config.lr_schedule.rate(config.learning_rate, epoch, config.epochs);
        contact.shuffle(&mut rng);
        let mut total = 0.0;
        let mut counted = 0usize;
        for b in 0..batches {
            let chunk: &[(u32, u32)] = if per_batch_contact == 0 {
                &[]
            } else {
                let start = (b * per_batch_contact).min(contact.len());
                &contact[start..((b + 1) * per_batch_contact).min(contact.len())]
            };
            let n_bg = if per_batch_contact == 0 {
                config.batch_size
            } else if f >= 1.0 {
                0
            } else {
                ((chunk.len() as f64) * f / (1.0 - f)).round() as usize
            };
            let rows = chunk.len() + n_bg;
            let mut inputs = Vec::with_capacity(rows * width);
            let mut targets = Vec::with_capacity(rows * 3);
            for &(si, p) in chunk {
                push_pixel(samples[si as usize], p as usize, mode, &enc, enc_len, &mut inputs, &mut targets);
            }
            let mut drawn = 0;
            while drawn < n_bg {
                let si = rng.random_range(0..samples.len());
                let p = rng.random_range(0..w * h);
                if background_masks[si].bits[p] {
                    push_pixel(samples[si], p, mode, &enc, enc_len, &mut inputs, &mut targets);
                    drawn += 1;
                }
            }
            if rows < 2 {
                continue;
            }
            let x = Array2::from_shape_vec((rows, width), inputs).expect("batch shape");
            let t = Array2::from_shape_vec((rows, 3), targets).expect("batch shape");
            let lg = psnn_loss_grad(&model, &x, &t, &mut rng)?;
            if !lg.loss.is_finite() {
                return Err(Error::Convergence { iterations: history.len(), residual: lg.loss });
            }
            adam.step(&mut model, &lg.grads);
            model.update_running_stats(&lg.stats);
            total += lg.loss;
            counted += 1;
        }
        history.push(if counted > 0 { total / counted as f64 } else { 0.0 });
    }
    model.validate()?;
    Ok((
        model,
        TrainHistory { epoch_losses: history, contact_pixels: contact.len(), background_pixels: background_count },
    ))
}
