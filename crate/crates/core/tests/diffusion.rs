use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use visnav_core::diffusion::*;
use visnav_core::{ImageFrame, Pixel, Point2};

/// Dijkstra over (diagonal, straight) counts. Costs compare exactly by
/// evaluating a + b·√2 with integer arithmetic on the sign of the difference.
fn dijkstra(grid: &IntensityGrid, s: Pixel, t: Pixel) -> Option<GridCost> {
    #[derive(Clone, Copy, PartialEq, Eq, Debug)]
    struct C(i64, i64); // straight, diagonal
    impl Ord for C {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            // compare a1 + b1√2 with a2 + b2√2
            let da = self.0 - o.0;
            let db = o.1 - self.1; // sign of da - db√2
            let lhs_sign = da.signum();
            let rhs_sign = db.signum();
            use std::cmp::Ordering::*;
            match (lhs_sign, rhs_sign) {
                (0, 0) => Equal,
                (l, r) if l >= 0 && r <= 0 => Greater,
                (l, r) if l <= 0 && r >= 0 => Less,
                _ => {
                    let a2 = da * da;
                    let b2 = 2 * db * db;
                    if lhs_sign > 0 {
                        a2.cmp(&b2)
                    } else {
                        b2.cmp(&a2)
                    }
                }
            }
        }
    }
    impl PartialOrd for C {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    let w = grid.width;
    let mut best: Vec<Option<C>> = vec![None; w * grid.height];
    let mut heap = BinaryHeap::new();
    best[s.y * w + s.x] = Some(C(0, 0));
    heap.push(Reverse((C(0, 0), s.y * w + s.x)));
    while let Some(Reverse((c, i))) = heap.pop() {
        if best[i] != Some(c) {
            continue;
        }
        if i == t.y * w + t.x {
            return Some(GridCost {
                straight: c.0 as u32,
                diagonal: c.1 as u32,
            });
        }
        for (nx, ny, diag) in grid.neighbours(i % w, i / w) {
            let n = if diag { C(c.0, c.1 + 1) } else { C(c.0 + 1, c.1) };
            let j = ny * w + nx;
            if best[j].map_or(true, |b| n < b) {
                best[j] = Some(n);
                heap.push(Reverse((n, j)));
            }
        }
    }
    None
}

#[test]
fn astar_matches_dijkstra_on_random_mazes() {
    for seed in 0..200u64 {
        let density = [0.1, 0.25, 0.4][seed as usize % 3];
        let m = generate_maze(60, 60, density, seed).unwrap();
        let grid = IntensityGrid::from_frame(&m.map, 255.0, 25.0);
        let a = grid_path(&grid, m.start, m.goal).expect("solvable");
        let d = dijkstra(&grid, m.start, m.goal).expect("oracle solvable");
        let (ds, dd) = (d.straight as f64, d.diagonal as f64);
        // equal lengths; with √2 irrational the counts must agree
        assert_eq!(a.cost, d, "seed {seed}: {} vs {}", a.cost.length(), ds + dd * 2f64.sqrt());
        assert_eq!(a.cells.first(), Some(&m.start));
        assert_eq!(a.cells.last(), Some(&m.goal));
    }
}

#[test]
fn generated_mazes_are_solvable() {
    for seed in 0..1000u64 {
        let m = generate_maze(100, 100, 0.3, seed).unwrap();
        let grid = IntensityGrid::from_frame(&m.map, 255.0, 25.0);
        assert!(dijkstra(&grid, m.start, m.goal).is_some(), "seed {seed}");
    }
}

fn random_target(rng: &mut ChaCha8Rng, ps: usize) -> Trajectory {
    // smooth random curve inside the normalised square
    let a = Point2::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9));
    let b = Point2::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9));
    let bend = rng.gen_range(-0.3..0.3);
    Trajectory::new(
        (0..ps)
            .map(|i| {
                let t = i as f64 / (ps - 1) as f64;
                let p = a.lerp(b, t);
                Point2::new(p.x, (p.y + bend * (std::f64::consts::PI * t).sin()).clamp(-1.0, 1.0))
            })
            .collect(),
    )
}

#[test]
fn reference_denoiser_recovers_random_targets() {
    let obs = ImageFrame::filled(64, 64, &[128, 128, 128]).unwrap();
    let space = ImageSpace::of(&obs);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let ps = [16, 32, 64][i % 3];
        let k = [10, 50, 100][(i / 3) % 3];
        let schedule = make_schedule(k, 1e-4, 0.02).unwrap();
        let target = random_target(&mut rng, ps);
        let den = ReferenceDenoiser::new(target.clone(), schedule.clone());
        let out = sample(
            &obs,
            space.to_pixel(target.first()),
            space.to_pixel(target.last()),
            ps,
            &den,
            &schedule,
            i as u64,
        )
        .unwrap();
        for (p, t) in out.points.iter().zip(&target.points) {
            assert!(space.to_normalized(*p).dist(*t) <= 0.05);
        }
    }
}

fn small_config() -> MlpConfig {
    MlpConfig {
        ps: 8,
        hidden: vec![32, 32],
        embed_dim: 8,
        obs_side: 4,
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = MlpDenoiser::new(small_config(), 2);
    let dim = small_config().input_dim();
    let batch = TrainingBatch {
        inputs: (0..4).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        targets: (0..4).map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
    };
    let (_, grad) = model.loss_and_grad(&batch);
    let h = 1e-5;
    for _ in 0..50 {
        let i = rng.gen_range(0..model.param_count());
        let orig = model.param(i);
        model.set_param(i, orig + h);
        let (lp, _) = model.loss_and_grad(&batch);
        model.set_param(i, orig - h);
        let (lm, _) = model.loss_and_grad(&batch);
        model.set_param(i, orig);
        let fd = (lp - lm) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        assert!(rel <= 1e-4, "param {i}: fd {fd} analytic {}", grad[i]);
    }
}

#[test]
fn memorizes_single_map() {
    let m = generate_maze(100, 100, 0.2, 3).unwrap();
    let sample = DatasetSample::from_maze(&m, 16).unwrap();
    let cfg = MlpConfig {
        ps: 16,
        ..MlpConfig::default()
    };
    let model = MlpDenoiser::new(cfg, 0);
    let (_, report) = train_denoiser(
        &[(sample.map, sample.trajectory)],
        model,
        &NoiseSchedule::default(),
        &TrainConfig::default(),
    )
    .unwrap();
    let first = report.losses[0];
    let last = *report.losses.last().unwrap();
    assert_eq!(report.losses.len(), 200);
    assert!(last < 0.1 * first, "first {first} last {last}");
}

#[test]
fn zero_learning_rate_leaves_model_unchanged() {
    let m = generate_maze(40, 40, 0.1, 1).unwrap();
    let s = DatasetSample::from_maze(&m, 8).unwrap();
    let model = MlpDenoiser::new(small_config(), 4);
    let cfg = TrainConfig {
        epochs: 3,
        lr: 0.0,
        draws_per_sample: 8,
        ..TrainConfig::default()
    };
    let (after, report) = train_denoiser(&[(s.map, s.trajectory)], model.clone(), &NoiseSchedule::default(), &cfg).unwrap();
    assert_eq!(after, model);
    assert!(report.losses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
}

#[test]
fn diverging_training_is_reported() {
    let m = generate_maze(40, 40, 0.1, 1).unwrap();
    let s = DatasetSample::from_maze(&m, 8).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        lr: 1e6,
        draws_per_sample: 8,
        ..TrainConfig::default()
    };
    let r = train_denoiser(&[(s.map, s.trajectory)], MlpDenoiser::new(small_config(), 4), &NoiseSchedule::default(), &cfg);
    assert!(matches!(r, Err(DiffusionError::Diverged(_))));
}

#[test]
fn trained_model_samples_with_pinned_endpoints() {
    let obs = ImageFrame::filled(100, 100, &[255, 255, 255]).unwrap();
    let gen = DdpmGenerator {
        predictor: MlpDenoiser::new(small_config(), 9),
        schedule: NoiseSchedule::default(),
    };
    let req = GenerationRequest {
        observation: &obs,
        start: Point2::new(50.0, 99.0),
        goal: Point2::new(20.0, 10.0),
        ps: 8,
        reference_intensity: 255.0,
        tau: 25.0,
    };
    let t = gen.generate(&req, 1).unwrap();
    assert_eq!(t.first(), req.start);
    assert_eq!(t.last(), req.goal);
    assert_eq!(gen.fixed_length(), Some(8));
    let wrong = GenerationRequest { ps: 9, ..req };
    assert!(matches!(gen.generate(&wrong, 1), Err(DiffusionError::Shape { .. })));
}
