//! Fully connected noise predictor with hand-written backpropagation.
//!
//! Input features are the flattened noisy trajectory, a sinusoidal embedding
//! of the denoising step and the observation reduced to a small grayscale
//! thumbnail. Hidden layers use SiLU; the output layer is linear.

use super::sampler::{gaussian_vec, noised};
use super::{DenoiserInput, DiffusionError, ImageSpace, NoisePredictor, NoiseSchedule, Trajectory};
use crate::imgproc::ImageFrame;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    /// Trajectory length.
    pub ps: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Side of the square grayscale observation thumbnail.
    pub obs_side: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            ps: 32,
            hidden: vec![256, 256],
            embed_dim: 16,
            obs_side: 16,
        }
    }
}

impl MlpConfig {
    pub fn input_dim(&self) -> usize {
        2 * self.ps + self.embed_dim + self.obs_side * self.obs_side
    }

    pub fn output_dim(&self) -> usize {
        2 * self.ps
    }

    pub(crate) fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(&self.hidden);
        d.push(self.output_dim());
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Sinusoidal embedding of the denoising step.
pub(crate) fn step_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(1000f64).ln() * i as f64 / half.max(1) as f64).exp();
        out.push((k as f64 * freq).sin());
        out.push((k as f64 * freq).cos());
    }
    out.resize(dim, 0.0);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpDenoiser {
    pub config: MlpConfig,
    pub(crate) layers: Vec<Dense>,
}

/// Network inputs with their regression targets.
#[derive(Clone, Debug, Default)]
pub struct TrainingBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl MlpDenoiser {
    /// Random initialisation with N(0, 1/fan_in) weights and zero biases.
    pub fn new(config: MlpConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = config.layer_dims();
        let layers = dims
            .windows(2)
            .map(|d| {
                let normal = Normal::new(0.0, (1.0 / d[0] as f64).sqrt()).expect("positive std");
                Dense {
                    inputs: d[0],
                    outputs: d[1],
                    weights: (0..d[0] * d[1]).map(|_| normal.sample(&mut rng)).collect(),
                    bias: vec![0.0; d[1]],
                }
            })
            .collect();
        Self { config, layers }
    }

    pub(crate) fn from_layers(config: MlpConfig, layers: Vec<Dense>) -> Result<Self, DiffusionError> {
        let dims = config.layer_dims();
        let ok = layers.len() + 1 == dims.len()
            && layers.iter().zip(dims.windows(2)).all(|(l, d)| {
                l.inputs == d[0] && l.outputs == d[1] && l.weights.len() == d[0] * d[1] && l.bias.len() == d[1]
            });
        if !ok {
            return Err(DiffusionError::Checkpoint("layer shapes do not match the configuration".into()));
        }
        if layers.iter().any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite())) {
            return Err(DiffusionError::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self { config, layers })
    }

    pub fn observation_features(&self, observation: &ImageFrame) -> Vec<f64> {
        observation.downsample_gray(self.config.obs_side, self.config.obs_side)
    }

    /// Assemble the network input for normalised trajectory coordinates.
    pub fn features(&self, obs_features: &[f64], noisy: &[f64], step: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.config.input_dim());
        x.extend_from_slice(noisy);
        x.extend(step_embedding(step, self.config.embed_dim));
        x.extend_from_slice(obs_features);
        x
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut a = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a);
            a = if i == last { z } else { z.into_iter().map(silu).collect() };
        }
        a
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, bool, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if i < l.weights.len() {
                return (li, true, i);
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return (li, false, i);
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `i` in layer order, weights before biases.
    pub fn param(&self, i: usize) -> f64 {
        let (l, w, j) = self.locate(i);
        if w {
            self.layers[l].weights[j]
        } else {
            self.layers[l].bias[j]
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let (l, w, j) = self.locate(i);
        if w {
            self.layers[l].weights[j] = v;
        } else {
            self.layers[l].bias[j] = v;
        }
    }

    /// Index range of each layer's parameters.
    pub fn layer_param_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.layers
            .iter()
            .map(|l| {
                let r = start..start + l.param_count();
                start = r.end;
                r
            })
            .collect()
    }

    /// Mean squared error over the batch and its gradient with respect to
    /// every parameter (same order as [`Self::param`]).
    pub fn loss_and_grad(&self, batch: &TrainingBatch) -> (f64, Vec<f64>) {
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: vec![0.0; l.weights.len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        let count = batch.inputs.len().max(1) as f64;
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for (input, target) in batch.inputs.iter().zip(&batch.targets) {
            // forward, keeping pre-activations and activations
            let mut acts = vec![input.clone()];
            let mut pre = Vec::with_capacity(self.layers.len());
            for (i, layer) in self.layers.iter().enumerate() {
                let z = layer.forward(acts.last().unwrap());
                let a = if i == last { z.clone() } else { z.iter().map(|&v| silu(v)).collect() };
                pre.push(z);
                acts.push(a);
            }
            let out = acts.last().unwrap();
            let m = out.len() as f64;
            let mut delta: Vec<f64> = out
                .iter()
                .zip(target)
                .map(|(o, t)| {
                    loss += (o - t) * (o - t) / m;
                    2.0 * (o - t) / (m * count)
                })
                .collect();
            for i in (0..self.layers.len()).rev() {
                let layer = &self.layers[i];
                if i != last {
                    for (d, z) in delta.iter_mut().zip(&pre[i]) {
                        *d *= silu_grad(*z);
                    }
                }
                let a_in = &acts[i];
                let g = &mut grads[i];
                for (o, d) in delta.iter().enumerate() {
                    g.bias[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, a) in row.iter_mut().zip(a_in) {
                        *gw += d * a;
                    }
                }
                if i > 0 {
                    let mut back = vec![0.0; layer.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (b, w) in back.iter_mut().zip(row) {
                            *b += d * w;
                        }
                    }
                    delta = back;
                }
            }
        }
        let flat = grads
            .into_iter()
            .flat_map(|g| g.weights.into_iter().chain(g.bias))
            .collect();
        (loss / count, flat)
    }

    fn apply_update(&mut self, grad: &[f64], lr: f64) {
        let mut i = 0;
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w -= lr * grad[i];
                i += 1;
            }
        }
    }
}

impl NoisePredictor for MlpDenoiser {
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<Vec<f64>, DiffusionError> {
        if input.noisy.len() != self.config.ps {
            return Err(DiffusionError::Shape {
                expected: self.config.ps,
                got: input.noisy.len(),
            });
        }
        let obs = self.observation_features(input.observation);
        Ok(self.forward(&self.features(&obs, &input.noisy.flatten(), input.step)))
    }

    fn trajectory_len(&self) -> Option<usize> {
        Some(self.config.ps)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Noisy copies drawn once per dataset sample; every epoch revisits the
    /// same draws in a fresh order.
    pub draws_per_sample: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            draws_per_sample: 16,
            batch_size: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub losses: Vec<f64>,
}

/// Plain mini-batch gradient descent on the noise-prediction MSE.
/// Trajectories are in pixel coordinates of their maps.
pub fn train_denoiser(
    dataset: &[(ImageFrame, Trajectory)],
    mut model: MlpDenoiser,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(MlpDenoiser, TrainReport), DiffusionError> {
    if dataset.is_empty() {
        return Err(DiffusionError::Training("empty dataset".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(DiffusionError::Training(format!("learning rate {} must be non-negative", cfg.lr)));
    }
    if cfg.batch_size == 0 || cfg.draws_per_sample == 0 {
        return Err(DiffusionError::Training("batch size and draws must be positive".into()));
    }
    if let Some((_, t)) = dataset.iter().find(|(_, t)| t.len() != model.config.ps) {
        return Err(DiffusionError::Shape {
            expected: model.config.ps,
            got: t.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bank = TrainingBatch::default();
    for (map, traj) in dataset {
        let space = ImageSpace::of(map);
        let x0: Vec<f64> = traj
            .points
            .iter()
            .flat_map(|&p| {
                let n = space.to_normalized(p);
                [n.x, n.y]
            })
            .collect();
        let obs = model.observation_features(map);
        for _ in 0..cfg.draws_per_sample {
            let k = rng.gen_range(1..=schedule.steps());
            let eps = gaussian_vec(&mut rng, x0.len());
            let noisy = noised(&x0, &eps, k, schedule).flatten();
            bank.inputs.push(model.features(&obs, &noisy, k));
            bank.targets.push(eps);
        }
    }

    let mut order: Vec<usize> = (0..bank.inputs.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = TrainingBatch {
                inputs: chunk.iter().map(|&i| bank.inputs[i].clone()).collect(),
                targets: chunk.iter().map(|&i| bank.targets[i].clone()).collect(),
            };
            let (loss, grad) = model.loss_and_grad(&batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(DiffusionError::Diverged(epoch + 1));
            }
            total += loss * chunk.len() as f64;
            model.apply_update(&grad, cfg.lr);
        }
        report.losses.push(total / order.len() as f64);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;

    fn tiny() -> MlpDenoiser {
        MlpDenoiser::new(
            MlpConfig {
                ps: 4,
                hidden: vec![6, 5],
                embed_dim: 4,
                obs_side: 2,
            },
            3,
        )
    }

    #[test]
    fn output_shape_matches_trajectory() {
        let m = tiny();
        let obs = ImageFrame::filled(8, 8, &[10, 20, 30]).unwrap();
        let noisy = Trajectory::new(vec![Point2::new(0.1, 0.2); 4]);
        let out = m
            .predict(&DenoiserInput {
                observation: &obs,
                noisy: &noisy,
                step: 3,
                start: noisy.first(),
                goal: noisy.last(),
            })
            .unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn param_indexing_roundtrip() {
        let mut m = tiny();
        let n = m.param_count();
        assert_eq!(n, (8 + 4 + 4) * 6 + 6 + 6 * 5 + 5 + 5 * 8 + 8);
        m.set_param(n - 1, 7.5);
        assert_eq!(m.param(n - 1), 7.5);
        assert_eq!(m.layer_param_ranges().last().unwrap().end, n);
    }

    #[test]
    fn embedding_is_bounded() {
        let e = step_embedding(37, 16);
        assert_eq!(e.len(), 16);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn rejects_mismatched_dataset() {
        let m = tiny();
        let map = ImageFrame::filled(8, 8, &[255, 255, 255]).unwrap();
        let t = Trajectory::new(vec![Point2::new(0.0, 0.0); 5]);
        let r = train_denoiser(&[(map, t)], m, &NoiseSchedule::default(), &TrainConfig::default());
        assert!(matches!(r, Err(DiffusionError::Shape { .. })));
    }
}
