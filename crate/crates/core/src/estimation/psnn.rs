use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::estimation::encoding::PositionalEncodingConfig;

pub const HIDDEN_LAYERS: usize = 3;
pub const DEFAULT_HIDDEN_WIDTH: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Which frame channels an estimator consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelMode {
    #[serde(rename = "rgb")]
    RgbOnly,
    #[serde(rename = "rgbnir")]
    RgbNir,
}

impl ChannelMode {
    pub fn channels(self) -> usize {
        match self {
            ChannelMode::RgbOnly => 3,
            ChannelMode::RgbNir => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelMode::RgbOnly => "rgb",
            ChannelMode::RgbNir => "rgbnir",
        }
    }

    pub fn check(self, other: ChannelMode) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ModeMismatch(format!("estimator expects {} input, got {}", self.name(), other.name())))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`, so a batch forward is `x · weight + bias`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Array2::zeros((inputs, outputs)), bias: Array1::zeros(outputs) }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            eps: BN_EPS,
        }
    }
}

/// Per-pixel MLP: three `Dense -> BatchNorm -> ReLU -> Dropout` blocks and a
/// linear 3-vector head.
#[derive(Clone, Debug, PartialEq)]
pub struct PsnnModel {
    pub channel_mode: ChannelMode,
    pub encoding: PositionalEncodingConfig,
    pub dropout_rate: f64,
    pub hidden: Vec<Dense>,
    pub norms: Vec<BatchNorm>,
    pub output: Dense,
}

pub enum ForwardMode<'a> {
    /// Running batchnorm statistics, dropout inert.
    Inference,
    /// Batch statistics, dropout masks drawn from the stream.
    Training(&'a mut ChaCha8Rng),
}

/// Batch statistics of one training forward pass, per hidden layer.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<Array1<f64>>,
    pub var: Vec<Array1<f64>>,
    pub batch: usize,
}

struct LayerCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
    pre_relu: Array2<f64>,
    dropout: Option<Array2<f64>>,
}

struct Cache {
    layers: Vec<LayerCache>,
    last: Array2<f64>,
}

impl PsnnModel {
    /// He-initialized model; input width is channels plus encoding length.
    pub fn new(
        channel_mode: ChannelMode,
        encoding: PositionalEncodingConfig,
        hidden_widths: [usize; HIDDEN_LAYERS],
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut model = Self::zeros(channel_mode, encoding, hidden_widths, dropout_rate)?;
        let layers = model.hidden.iter_mut().chain(std::iter::once(&mut model.output));
        for (i, layer) in layers.enumerate() {
            let fan_in = layer.weight.nrows() as f64;
            let gain = if i < HIDDEN_LAYERS { 2.0 } else { 1.0 };
            let dist = Normal::new(0.0, (gain / fan_in).sqrt()).map_err(|e| contract(e.to_string()))?;
            layer.weight.iter_mut().for_each(|w| *w = dist.sample(rng));
        }
        Ok(model)
    }

    pub fn zeros(
        channel_mode: ChannelMode,
        encoding: PositionalEncodingConfig,
        hidden_widths: [usize; HIDDEN_LAYERS],
        dropout_rate: f64,
    ) -> Result<Self> {
        if hidden_widths.contains(&0) {
            return Err(contract("hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(contract("dropout rate must lie in [0, 1)"));
        }
        let mut inputs = channel_mode.channels() + encoding.len();
        let mut hidden = Vec::new();
        let mut norms = Vec::new();
        for &w in &hidden_widths {
            hidden.push(Dense::zeros(inputs, w));
            norms.push(BatchNorm::new(w));
            inputs = w;
        }
        Ok(Self { channel_mode, encoding, dropout_rate, hidden, norms, output: Dense::zeros(inputs, 3) })
    }

    pub fn input_width(&self) -> usize {
        self.channel_mode.channels() + self.encoding.len()
    }

    /// `[input, h1, h2, h3, 3]`.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.hidden.iter().map(|d| d.bias.len()));
        w.push(self.output.bias.len());
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() != HIDDEN_LAYERS || self.norms.len() != HIDDEN_LAYERS {
            return Err(contract("model must have exactly three hidden layers"));
        }
        let mut inputs = self.input_width();
        for (d, bn) in self.hidden.iter().zip(&self.norms) {
            let w = d.bias.len();
            if d.weight.dim() != (inputs, w)
                || bn.gamma.len() != w
                || bn.beta.len() != w
                || bn.running_mean.len() != w
                || bn.running_var.len() != w
            {
                return Err(contract("layer shapes do not chain"));
            }
            if bn.running_var.iter().any(|v| !(*v > 0.0)) {
                return Err(contract("batchnorm running variance must be positive"));
            }
            inputs = w;
        }
        if self.output.weight.dim() != (inputs, 3) || self.output.bias.len() != 3 {
            return Err(contract("output layer must map to 3 values"));
        }
        if self.params().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(contract("model parameters must be finite"));
        }
        Ok(())
    }

    /// Trainable tensors in declaration order: per hidden layer `W, b, gamma,
    /// beta`, then the head's `W, b`.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * HIDDEN_LAYERS + 2);
        for (d, bn) in self.hidden.iter().zip(&self.norms) {
            out.push(d.weight.as_slice().expect("standard layout"));
            out.push(d.bias.as_slice().expect("standard layout"));
            out.push(bn.gamma.as_slice().expect("standard layout"));
            out.push(bn.beta.as_slice().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice().expect("standard layout"));
        out.push(self.output.bias.as_slice().expect("standard layout"));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4 * HIDDEN_LAYERS + 2);
        for (d, bn) in self.hidden.iter_mut().zip(self.norms.iter_mut()) {
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
            out.push(bn.gamma.as_slice_mut().expect("standard layout"));
            out.push(bn.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    /// Concatenates selected intensities and the encoding into one input row.
    pub fn input_row(&self, intensities: &[f64], encoding: &[f64]) -> Result<Vec<f64>> {
        if intensities.len() != self.channel_mode.channels() {
            return Err(contract(format!(
                "model takes {} intensities, got {}",
                self.channel_mode.channels(),
                intensities.len()
            )));
        }
        if encoding.len() != self.encoding.len() {
            return Err(contract(format!("model takes {} encoding features, got {}", self.encoding.len(), encoding.len())));
        }
        Ok(intensities.iter().chain(encoding).copied().collect())
    }

    /// Raw (unnormalized) outputs for a batch of input rows.
    pub fn forward_batch(&self, inputs: &Array2<f64>, mode: ForwardMode) -> Result<Array2<f64>> {
        Ok(self.forward_cached(inputs, mode)?.0)
    }

    fn forward_cached(&self, inputs: &Array2<f64>, mode: ForwardMode) -> Result<(Array2<f64>, Option<Cache>)> {
        if inputs.ncols() != self.input_width() {
            return Err(contract(format!("input width {} != model width {}", inputs.ncols(), self.input_width())));
        }
        if inputs.nrows() == 0 {
            return Err(contract("empty batch"));
        }
        match mode {
            ForwardMode::Inference => {
                let mut x = inputs.to_owned();
                for (d, bn) in self.hidden.iter().zip(&self.norms) {
                    let a = d.forward(&x);
                    let scale = &bn.gamma / bn.running_var.mapv(|v| (v + bn.eps).sqrt());
                    let shift = &bn.beta - &bn.running_mean * &scale;
                    x = (a * &scale + &shift).mapv(relu);
                }
                Ok((self.output.forward(&x), None))
            }
            ForwardMode::Training(rng) => {
                let mut layers = Vec::with_capacity(HIDDEN_LAYERS);
                let mut x = inputs.to_owned();
                for (d, bn) in self.hidden.iter().zip(&self.norms) {
                    let a = d.forward(&x);
                    let mean = a.mean_axis(Axis(0)).expect("non-empty batch");
                    let centred = &a - &mean;
                    let var = centred.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                    let xhat = centred * &inv_std;
                    let pre_relu = &xhat * &bn.gamma + &bn.beta;
                    let mut h = pre_relu.mapv(relu);
                    let dropout = (self.dropout_rate > 0.0).then(|| {
                        let keep = 1.0 / (1.0 - self.dropout_rate);
                        let mask = Array2::from_shape_fn(h.dim(), |_| {
                            if rng.random::<f64>() < self.dropout_rate {
                                0.0
                            } else {
                                keep
                            }
                        });
                        h *= &mask;
                        mask
                    });
                    layers.push(LayerCache { input: x, xhat, inv_std, mean, var, pre_relu, dropout });
                    x = h;
                }
                let out = self.output.forward(&x);
                Ok((out, Some(Cache { layers, last: x })))
            }
        }
    }

    /// Exponential moving average of batch statistics into the running ones.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        let n = stats.batch as f64;
        let unbias = if stats.batch > 1 { n / (n - 1.0) } else { 1.0 };
        for (bn, (m, v)) in self.norms.iter_mut().zip(stats.mean.iter().zip(&stats.var)) {
            bn.running_mean = &bn.running_mean * BN_MOMENTUM + m * (1.0 - BN_MOMENTUM);
            bn.running_var = &bn.running_var * BN_MOMENTUM + v * ((1.0 - BN_MOMENTUM) * unbias);
        }
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Unit normal for one pixel; a raw output with norm below `1e-8` maps to `(0, 0, 1)`.
pub fn psnn_forward(model: &PsnnModel, intensities: &[f64], encoding: &[f64], mode: ForwardMode) -> Result<[f64; 3]> {
    let row = model.input_row(intensities, encoding)?;
    let x = Array2::from_shape_vec((1, row.len()), row).expect("row shape");
    let out = model.forward_batch(&x, mode)?;
    Ok(normalize_or_up([out[[0, 0]], out[[0, 1]], out[[0, 2]]]))
}

pub fn normalize_or_up(v: [f64; 3]) -> [f64; 3] {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(norm >= 1e-8) {
        [0.0, 0.0, 1.0]
    } else {
        [v[0] / norm, v[1] / norm, v[2] / norm]
    }
}

/// Loss and parameter gradients, tensors in [`PsnnModel::params`] order.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
    pub stats: BatchStats,
}

/// Mean over the batch of `‖raw output − target‖²`, backpropagated through
/// the head, dropout (the sampled masks), ReLU, batchnorm (batch statistics)
/// and the dense layers.
pub fn psnn_loss_grad(
    model: &PsnnModel,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<LossGrad> {
    if inputs.nrows() == 0 {
        return Err(Error::EmptyRegion("empty training batch".into()));
    }
    if targets.dim() != (inputs.nrows(), 3) {
        return Err(contract("targets must be one 3-vector per input row"));
    }
    let (out, cache) = model.forward_cached(inputs, ForwardMode::Training(rng))?;
    let cache = cache.expect("training pass caches");
    let b = inputs.nrows() as f64;
    let diff = out - targets;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / b;

    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); 4 * HIDDEN_LAYERS + 2];
    let d_out = diff * (2.0 / b);
    grads[4 * HIDDEN_LAYERS] = cache.last.t().dot(&d_out).into_raw_vec_and_offset().0;
    grads[4 * HIDDEN_LAYERS + 1] = d_out.sum_axis(Axis(0)).to_vec();
    let mut dh = d_out.dot(&model.output.weight.t());

    let mut stats = BatchStats { mean: Vec::new(), var: Vec::new(), batch: inputs.nrows() };
    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let bn = &model.norms[l];
        if let Some(mask) = &lc.dropout {
            dh *= mask;
        }
        let dy = std::mem::take(&mut dh) * &lc.pre_relu.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        grads[4 * l + 2] = (&dy * &lc.xhat).sum_axis(Axis(0)).to_vec();
        grads[4 * l + 3] = dy.sum_axis(Axis(0)).to_vec();
        let dxhat = dy * &bn.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &lc.xhat).sum_axis(Axis(0));
        let da = ((dxhat * b - &sum_dxhat) - &lc.xhat * &sum_dxhat_xhat) * &(&lc.inv_std / b);
        grads[4 * l] = lc.input.t().dot(&da).into_raw_vec_and_offset().0;
        grads[4 * l + 1] = da.sum_axis(Axis(0)).to_vec();
        if l > 0 {
            dh = da.dot(&model.hidden[l].weight.t());
        }
        stats.mean.push(lc.mean.clone());
        stats.var.push(lc.var.clone());
    }
    stats.mean.reverse();
    stats.var.reverse();
    Ok(LossGrad { loss, grads, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn tiny(rng: &mut ChaCha8Rng, dropout: f64) -> PsnnModel {
        let mut m = PsnnModel::new(ChannelMode::RgbNir, PositionalEncodingConfig::NONE, [2, 2, 2], dropout, rng).unwrap();
        // non-trivial batchnorm and bias parameters
        for (i, t) in m.params_mut().into_iter().enumerate() {
            for (j, v) in t.iter_mut().enumerate() {
                if i % 4 != 0 || i == 4 * HIDDEN_LAYERS {
                    *v += 0.3 * ((i * 7 + j * 3) as f64).sin();
                }
            }
        }
        m
    }

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, width: usize) -> (Array2<f64>, Array2<f64>) {
        let x = Array2::from_shape_fn((rows, width), |_| rng.random::<f64>());
        let t = Array2::from_shape_fn((rows, 3), |_| rng.random::<f64>() - 0.5);
        (x, t)
    }

    #[test]
    fn widths_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = PsnnModel::new(ChannelMode::RgbNir, PositionalEncodingConfig::default(), [128; 3], 0.1, &mut rng).unwrap();
        assert_eq!(m.layer_widths(), vec![24, 128, 128, 128, 3]);
        m.validate().unwrap();
        let m = PsnnModel::new(ChannelMode::RgbOnly, PositionalEncodingConfig::NONE, [4, 5, 6], 0.0, &mut rng).unwrap();
        assert_eq!(m.layer_widths(), vec![3, 4, 5, 6, 3]);
    }

    #[test]
    fn zero_model_returns_up() {
        let m = PsnnModel::zeros(ChannelMode::RgbNir, PositionalEncodingConfig::NONE, [2, 2, 2], 0.1).unwrap();
        let n = psnn_forward(&m, &[0.3, 0.1, 0.9, 0.2, 0.2, 0.5], &[], ForwardMode::Inference).unwrap();
        assert_eq!(n, [0.0, 0.0, 1.0]);
    }

    /// Hand-set weights, forward pass written out as plain scalar arithmetic.
    #[test]
    fn tiny_forward_matches_hand_computation() {
        let mut m = PsnnModel::zeros(ChannelMode::RgbNir, PositionalEncodingConfig::NONE, [2, 2, 2], 0.1).unwrap();
        m.hidden[0].weight = array![[1.0, 0.0], [0.0, 1.0], [0.5, -0.5], [0.0, 0.0], [0.2, 0.1], [-1.0, 1.0]];
        m.hidden[0].bias = array![0.1, -0.2];
        m.hidden[1].weight = array![[1.0, -1.0], [2.0, 0.5]];
        m.hidden[1].bias = array![0.0, 0.3];
        m.hidden[2].weight = array![[0.5, 1.0], [-0.25, 2.0]];
        m.hidden[2].bias = array![0.05, 0.0];
        m.norms[0].running_mean = array![0.1, 0.2];
        m.norms[0].running_var = array![4.0, 1.0];
        m.norms[0].gamma = array![2.0, 1.0];
        m.norms[0].beta = array![0.0, 0.5];
        m.norms[1].running_var = array![1.0, 0.25];
        m.norms[2].beta = array![-0.1, 0.1];
        m.output.weight = array![[1.0, 0.0, 0.5], [0.0, -1.0, 1.0]];
        m.output.bias = array![0.0, 0.0, 0.2];

        let x = [0.4, 0.6, 0.2, 0.9, 0.5, 0.1];
        let eps = BN_EPS;
        let bn = |a: f64, mean: f64, var: f64, g: f64, b: f64| ((a - mean) / (var + eps).sqrt() * g + b).max(0.0);
        // layer 1
        let a0 = 0.4 + 0.5 * 0.2 + 0.2 * 0.5 - 0.1 + 0.1;
        let a1 = 0.6 - 0.5 * 0.2 + 0.1 * 0.5 + 0.1 - 0.2;
        let h0 = bn(a0, 0.1, 4.0, 2.0, 0.0);
        let h1 = bn(a1, 0.2, 1.0, 1.0, 0.5);
        // layer 2
        let a0 = h0 + 2.0 * h1;
        let a1 = -h0 + 0.5 * h1 + 0.3;
        let (h0, h1) = (bn(a0, 0.0, 1.0, 1.0, 0.0), bn(a1, 0.0, 0.25, 1.0, 0.0));
        // layer 3
        let a0 = 0.5 * h0 - 0.25 * h1 + 0.05;
        let a1 = h0 + 2.0 * h1;
        let (h0, h1) = (bn(a0, 0.0, 1.0, 1.0, -0.1), bn(a1, 0.0, 1.0, 1.0, 0.1));
        let raw = [h0, -h1, 0.5 * h0 + h1 + 0.2];
        let expect = normalize_or_up(raw);

        let got = psnn_forward(&m, &x, &[], ForwardMode::Inference).unwrap();
        for k in 0..3 {
            assert!((got[k] - expect[k]).abs() < 1e-9, "{got:?} vs {expect:?}");
        }
    }

    #[test]
    fn outputs_are_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = PsnnModel::new(ChannelMode::RgbNir, PositionalEncodingConfig::default(), [16; 3], 0.1, &mut rng).unwrap();
        let enc_cfg = m.encoding;
        for _ in 0..1000 {
            let i: Vec<f64> = (0..6).map(|_| rng.random()).collect();
            let e = crate::estimation::positional_encoding(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), &enc_cfg)
                .unwrap();
            let n = psnn_forward(&m, &i, &e, ForwardMode::Inference).unwrap();
            assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn input_width_is_checked() {
        let m = PsnnModel::zeros(ChannelMode::RgbOnly, PositionalEncodingConfig::NONE, [2, 2, 2], 0.1).unwrap();
        assert!(matches!(
            psnn_forward(&m, &[0.1; 6], &[], ForwardMode::Inference),
            Err(Error::Contract(_))
        ));
        assert!(psnn_forward(&m, &[0.1; 3], &[0.0, 0.0], ForwardMode::Inference).is_err());
    }

    #[test]
    fn inference_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = tiny(&mut rng, 0.5);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let a = psnn_forward(&m, &x, &[], ForwardMode::Inference).unwrap();
        for _ in 0..5 {
            assert_eq!(psnn_forward(&m, &x, &[], ForwardMode::Inference).unwrap(), a);
        }
    }

    fn loss_at(model: &PsnnModel, x: &Array2<f64>, t: &Array2<f64>, seed: u64) -> f64 {
        psnn_loss_grad(model, x, t, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().loss
    }

    /// Every entry of every trainable tensor against central differences.
    #[test]
    fn gradients_match_finite_differences() {
        for (seed, dropout) in [(11u64, 0.0), (12, 0.3), (13, 0.1)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = tiny(&mut rng, dropout);
            let (x, t) = random_batch(&mut rng, 8, 6);
            let analytic = psnn_loss_grad(&model, &x, &t, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
            let h = 1e-4;
            let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
            assert_eq!(analytic.grads.iter().map(Vec::len).collect::<Vec<_>>(), shapes);
            for (ti, &len) in shapes.iter().enumerate() {
                for j in 0..len {
                    let mut plus = model.clone();
                    plus.params_mut()[ti][j] += h;
                    let mut minus = model.clone();
                    minus.params_mut()[ti][j] -= h;
                    let fd = (loss_at(&plus, &x, &t, 99) - loss_at(&minus, &x, &t, 99)) / (2.0 * h);
                    let an = analytic.grads[ti][j];
                    let err = (fd - an).abs();
                    let scale = fd.abs().max(an.abs());
                    // hidden biases feed batchnorm and have exactly zero gradient
                    assert!(
                        err <= 1e-4 * scale || err < 1e-9,
                        "seed {seed} tensor {ti} entry {j}: analytic {an} fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn loss_grad_is_deterministic_and_zero_at_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = tiny(&mut rng, 0.2);
        let (x, t) = random_batch(&mut rng, 8, 6);
        let a = psnn_loss_grad(&model, &x, &t, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = psnn_loss_grad(&model, &x, &t, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.grads, b.grads);

        let out = model.forward_batch(&x, ForwardMode::Training(&mut ChaCha8Rng::seed_from_u64(4))).unwrap();
        let z = psnn_loss_grad(&model, &x, &out, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(z.loss.abs() < 1e-12);

        let empty = Array2::zeros((0, 6));
        assert!(psnn_loss_grad(&model, &empty, &Array2::zeros((0, 3)), &mut rng).is_err());
    }

    #[test]
    fn batch_stats_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = tiny(&mut rng, 0.0);
        let (x, t) = random_batch(&mut rng, 8, 6);
        let lg = psnn_loss_grad(&model, &x, &t, &mut rng).unwrap();
        let a = model.hidden[0].forward(&x);
        let mean = a.mean_axis(Axis(0)).unwrap();
        for k in 0..2 {
            assert!((lg.stats.mean[0][k] - mean[k]).abs() < 1e-12);
            let var = a.column(k).iter().map(|v| (v - mean[k]).powi(2)).sum::<f64>() / 8.0;
            assert!((lg.stats.var[0][k] - var).abs() < 1e-9 * var.max(1.0));
        }
    }
}
