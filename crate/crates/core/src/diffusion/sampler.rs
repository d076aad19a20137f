use super::{
    AStarBackend, DiffusionError, GenerationRequest, ImageSpace, NoiseSchedule, ReferenceDenoiser, Trajectory,
    TrajectoryGenerator,
};
use crate::geometry::{resample_polyline, Point2};
use crate::imgproc::ImageFrame;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Input of a noise predictor at one denoising step. Coordinates are
/// normalised.
#[derive(Clone, Copy, Debug)]
pub struct DenoiserInput<'a> {
    pub observation: &'a ImageFrame,
    pub noisy: &'a Trajectory,
    pub step: usize,
    pub start: Point2,
    pub goal: Point2,
}

/// Estimates the noise contained in a noisy trajectory.
pub trait NoisePredictor: Send + Sync {
    /// Predicted noise, flattened `[x0, y0, x1, y1, ...]`.
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<Vec<f64>, DiffusionError>;

    /// Required trajectory length, if fixed.
    fn trajectory_len(&self) -> Option<usize> {
        None
    }
}

pub(crate) fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Closed-form `k`-step noising of a clean trajectory. Returns the noisy
/// trajectory and the unit Gaussian noise that produced it.
pub fn forward_noise(
    clean: &Trajectory,
    k: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<(Trajectory, Vec<f64>), DiffusionError> {
    schedule.check_step(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = clean.flatten();
    let noise = gaussian_vec(&mut rng, x0.len());
    Ok((noised(&x0, &noise, k, schedule), noise))
}

pub(crate) fn noised(x0: &[f64], noise: &[f64], k: usize, schedule: &NoiseSchedule) -> Trajectory {
    let ab = schedule.alpha_bar(k);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let flat: Vec<f64> = x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect();
    Trajectory::from_flat(&flat)
}

/// Invert the closed-form forward process given the noise.
pub fn predict_clean(noisy: &Trajectory, noise: &[f64], k: usize, schedule: &NoiseSchedule) -> Result<Trajectory, DiffusionError> {
    schedule.check_step(k)?;
    let xk = noisy.flatten();
    if noise.len() != xk.len() {
        return Err(DiffusionError::Shape {
            expected: xk.len(),
            got: noise.len(),
        });
    }
    let ab = schedule.alpha_bar(k);
    let flat: Vec<f64> = xk
        .iter()
        .zip(noise)
        .map(|(x, e)| (x - (1.0 - ab).sqrt() * e) / ab.sqrt())
        .collect();
    Ok(Trajectory::from_flat(&flat))
}

fn pin(x: &mut Trajectory, start: Point2, goal: Point2) {
    x.points[0] = start;
    let n = x.points.len();
    x.points[n - 1] = goal;
}

/// Reverse diffusion from unit Gaussian noise to a `ps`-point trajectory
/// between `start` and `goal` (pixel coordinates of `observation`).
pub fn sample(
    observation: &ImageFrame,
    start: Point2,
    goal: Point2,
    ps: usize,
    denoiser: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Trajectory, DiffusionError> {
    if ps < 2 {
        return Err(DiffusionError::Shape { expected: 2, got: ps });
    }
    if let Some(n) = denoiser.trajectory_len() {
        if n != ps {
            return Err(DiffusionError::Shape { expected: n, got: ps });
        }
    }
    observation.check_inside(start)?;
    observation.check_inside(goal)?;
    let space = ImageSpace::of(observation);
    let start_n = space.to_normalized(start);
    let goal_n = space.to_normalized(goal);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Trajectory::from_flat(&gaussian_vec(&mut rng, 2 * ps));
    pin(&mut x, start_n, goal_n);
    for k in (1..=schedule.steps()).rev() {
        let eps = denoiser.predict(&DenoiserInput {
            observation,
            noisy: &x,
            step: k,
            start: start_n,
            goal: goal_n,
        })?;
        if eps.len() != 2 * ps {
            return Err(DiffusionError::Shape {
                expected: 2 * ps,
                got: eps.len(),
            });
        }
        let (scale, gain, sigma) = (schedule.step_scale[k - 1], schedule.noise_gain[k - 1], schedule.sigma[k - 1]);
        let z = if sigma > 0.0 {
            gaussian_vec(&mut rng, 2 * ps)
        } else {
            vec![0.0; 2 * ps]
        };
        let flat: Vec<f64> = x
            .flatten()
            .iter()
            .zip(&eps)
            .zip(&z)
            .map(|((xk, e), n)| scale * (xk - gain * e) + sigma * n)
            .collect();
        x = Trajectory::from_flat(&flat);
        pin(&mut x, start_n, goal_n);
    }
    if !x.is_finite() {
        return Err(DiffusionError::Training("sampling produced non-finite coordinates".into()));
    }
    let mut out = Trajectory::new(x.points.iter().map(|&p| space.to_pixel(p)).collect());
    // exact endpoints in pixel space
    let n = out.len();
    out.points[0] = start;
    out.points[n - 1] = goal;
    Ok(out)
}

/// DDPM sampling with an arbitrary noise predictor.
pub struct DdpmGenerator<P> {
    pub predictor: P,
    pub schedule: NoiseSchedule,
}

impl<P: NoisePredictor> TrajectoryGenerator for DdpmGenerator<P> {
    fn generate(&self, req: &GenerationRequest<'_>, seed: u64) -> Result<Trajectory, DiffusionError> {
        sample(req.observation, req.start, req.goal, req.ps, &self.predictor, &self.schedule, seed)
    }

    fn fixed_length(&self) -> Option<usize> {
        self.predictor.trajectory_len()
    }
}

/// DDPM sampling with an exact denoiser whose target is the A* path for the
/// same request. Exercises the full reverse loop inside closed-loop runs.
pub struct GuidedReferenceGenerator {
    pub astar: AStarBackend,
    pub schedule: NoiseSchedule,
}

impl TrajectoryGenerator for GuidedReferenceGenerator {
    fn generate(&self, req: &GenerationRequest<'_>, seed: u64) -> Result<Trajectory, DiffusionError> {
        let target = self.astar.generate(req, seed)?;
        let space = ImageSpace::of(req.observation);
        let target_n = Trajectory::new(
            resample_polyline(&target.points, req.ps)
                .into_iter()
                .map(|p| space.to_normalized(p))
                .collect(),
        );
        let denoiser = ReferenceDenoiser::new(target_n, self.schedule.clone());
        sample(req.observation, req.start, req.goal, req.ps, &denoiser, &self.schedule, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;

    struct Zero;
    impl NoisePredictor for Zero {
        fn predict(&self, input: &DenoiserInput<'_>) -> Result<Vec<f64>, DiffusionError> {
            Ok(vec![0.0; 2 * input.noisy.len()])
        }
    }

    fn line(ps: usize) -> Trajectory {
        Trajectory::new((0..ps).map(|i| Point2::new(-0.8 + 1.6 * i as f64 / (ps - 1) as f64, 0.3)).collect())
    }

    #[test]
    fn tiny_beta_keeps_trajectory() {
        let s = make_schedule(1, 1e-10, 1e-10).unwrap();
        let clean = line(8);
        let (noisy, _) = forward_noise(&clean, 1, &s, 3).unwrap();
        for (a, b) in noisy.points.iter().zip(&clean.points) {
            assert!(a.dist(*b) < 1e-3);
        }
    }

    #[test]
    fn forward_noise_is_deterministic() {
        let s = NoiseSchedule::default();
        let a = forward_noise(&line(16), 20, &s, 99).unwrap();
        let b = forward_noise(&line(16), 20, &s, 99).unwrap();
        assert_eq!(a, b);
        assert!(forward_noise(&line(16), 0, &s, 1).is_err());
        assert!(forward_noise(&line(16), 51, &s, 1).is_err());
    }

    #[test]
    fn forward_noise_variance_matches_schedule() {
        let s = NoiseSchedule::default();
        let k = 30;
        let clean = line(4);
        let x0 = clean.flatten();
        let ab = s.alpha_bar(k);
        let mut acc = 0.0;
        let mut n = 0usize;
        for seed in 0..10_000u64 {
            let (noisy, _) = forward_noise(&clean, k, &s, seed).unwrap();
            for (x, c) in noisy.flatten().iter().zip(&x0) {
                let r = x - ab.sqrt() * c;
                acc += r * r;
                n += 1;
            }
        }
        let var = acc / n as f64;
        let expected = 1.0 - ab;
        assert!((var - expected).abs() / expected < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn inversion_recovers_clean() {
        let s = NoiseSchedule::default();
        let clean = line(16);
        for k in [1, 7, 50] {
            let (noisy, eps) = forward_noise(&clean, k, &s, k as u64).unwrap();
            let back = predict_clean(&noisy, &eps, k, &s).unwrap();
            for (a, b) in back.points.iter().zip(&clean.points) {
                assert!(a.dist(*b) < 1e-9);
            }
        }
    }

    #[test]
    fn endpoints_are_pinned_and_finite() {
        let obs = ImageFrame::filled(50, 40, &[200, 200, 200]).unwrap();
        let start = Point2::new(25.0, 39.0);
        let goal = Point2::new(10.5, 3.0);
        let t = sample(&obs, start, goal, 12, &Zero, &NoiseSchedule::default(), 5).unwrap();
        assert_eq!(t.first(), start);
        assert_eq!(t.last(), goal);
        assert!(t.is_finite());
        let again = sample(&obs, start, goal, 12, &Zero, &NoiseSchedule::default(), 5).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn single_step_schedule_calls_denoiser_once() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Counting(AtomicUsize);
        impl NoisePredictor for Counting {
            fn predict(&self, input: &DenoiserInput<'_>) -> Result<Vec<f64>, DiffusionError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(vec![0.0; 2 * input.noisy.len()])
            }
        }
        let obs = ImageFrame::filled(20, 20, &[0, 0, 0]).unwrap();
        let c = Counting(AtomicUsize::new(0));
        let s = make_schedule(1, 1e-4, 0.02).unwrap();
        sample(&obs, Point2::new(0.0, 0.0), Point2::new(19.0, 19.0), 8, &c, &s, 0).unwrap();
        assert_eq!(c.0.load(Ordering::SeqCst), 1);
    }
}
