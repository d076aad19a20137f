use super::{DenoiserInput, DiffusionError, NoisePredictor, NoiseSchedule, Trajectory};

/// Perfect noise predictor for a single known target trajectory: it returns
/// the noise implied by the closed-form forward process between the target
/// and the current sample. Sampling with it reproduces the target.
#[derive(Clone, Debug)]
pub struct ReferenceDenoiser {
    target: Vec<f64>,
    schedule: NoiseSchedule,
}

impl ReferenceDenoiser {
    /// `target` is in normalised coordinates.
    pub fn new(target: Trajectory, schedule: NoiseSchedule) -> Self {
        Self {
            target: target.flatten(),
            schedule,
        }
    }
}

impl NoisePredictor for ReferenceDenoiser {
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<Vec<f64>, DiffusionError> {
        self.schedule.check_step(input.step)?;
        let xk = input.noisy.flatten();
        if xk.len() != self.target.len() {
            return Err(DiffusionError::Shape {
                expected: self.target.len() / 2,
                got: xk.len() / 2,
            });
        }
        let ab = self.schedule.alpha_bar(input.step);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(xk.iter().zip(&self.target).map(|(x, t)| (x - a * t) / b).collect())
    }

    fn trajectory_len(&self) -> Option<usize> {
        Some(self.target.len() / 2)
    }
}
