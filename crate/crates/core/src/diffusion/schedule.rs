use super::DiffusionError;

/// Per-step coefficients of the reverse update
/// `x[k-1] = step_scale[k] * (x[k] - noise_gain[k] * eps) + sigma[k] * z`.
///
/// Vectors are indexed by `k - 1` for steps `k = 1..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    /// Cumulative products of `1 - beta`.
    pub alpha_bars: Vec<f64>,
    /// `1 / sqrt(1 - beta_k)`.
    pub step_scale: Vec<f64>,
    /// `beta_k / sqrt(1 - alpha_bar_k)`.
    pub noise_gain: Vec<f64>,
    /// Posterior standard deviation; zero at `k = 1`.
    pub sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k - 1]
    }

    pub fn check_step(&self, k: usize) -> Result<(), DiffusionError> {
        if k == 0 || k > self.steps() {
            return Err(DiffusionError::Step {
                step: k,
                steps: self.steps(),
            });
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(50, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// Linear beta schedule from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::Schedule("need at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::Schedule(format!(
            "require 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    let step_scale = betas.iter().map(|b| 1.0 / (1.0 - b).sqrt()).collect();
    let noise_gain = betas
        .iter()
        .zip(&alpha_bars)
        .map(|(b, ab)| b / (1.0 - ab).sqrt())
        .collect();
    let sigma = (0..steps)
        .map(|i| {
            if i == 0 {
                0.0
            } else {
                let prev = alpha_bars[i - 1];
                ((1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]).sqrt()
            }
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alpha_bars,
        step_scale,
        noise_gain,
        sigma,
    })
}
