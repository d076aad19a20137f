use super::astar::{grid_path, IntensityGrid};
use super::DiffusionError;
use crate::geometry::Pixel;
use crate::imgproc::ImageFrame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FLOOR: u8 = 255;
const WALL: u8 = 0;
const MAX_ROUNDS: usize = 100;

/// A binary map with a start/goal pair known to be connected.
#[derive(Clone, Debug)]
pub struct Maze {
    pub map: ImageFrame,
    pub start: Pixel,
    pub goal: Pixel,
}

/// Random rectangles of obstacles on a white floor until `density` of the
/// pixels is covered, then rejection-sampled start/goal pairs until one is
/// connected.
pub fn generate_maze(width: usize, height: usize, density: f64, seed: u64) -> Result<Maze, DiffusionError> {
    if !(0.0..=0.45).contains(&density) {
        return Err(DiffusionError::Density(density));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocked = vec![false; width * height];
    let target = (density * (width * height) as f64).round() as usize;
    let mut covered = 0;
    let max_side = (width.min(height) / 5).max(2);
    while covered < target {
        let rw = rng.gen_range(2..=max_side);
        let rh = rng.gen_range(2..=max_side);
        let x0 = rng.gen_range(0..width);
        let y0 = rng.gen_range(0..height);
        for y in y0..(y0 + rh).min(height) {
            for x in x0..(x0 + rw).min(width) {
                let i = y * width + x;
                if !blocked[i] {
                    blocked[i] = true;
                    covered += 1;
                }
            }
        }
    }
    let data = blocked
        .iter()
        .flat_map(|&b| {
            let v = if b { WALL } else { FLOOR };
            [v, v, v]
        })
        .collect();
    let map = ImageFrame::new(width, height, 3, data)?;
    let grid = IntensityGrid::from_mask(width, height, blocked.iter().map(|b| !b).collect());
    let free: Vec<Pixel> = (0..width * height)
        .filter(|&i| !blocked[i])
        .map(|i| Pixel::new(i % width, i / width))
        .collect();
    if free.len() < 2 {
        return Err(DiffusionError::Unsolvable(0));
    }
    let min_sep = 0.3 * (width.min(height) as f64);
    for _ in 0..MAX_ROUNDS {
        let start = free[rng.gen_range(0..free.len())];
        let goal = free[rng.gen_range(0..free.len())];
        let sep = ((start.x as f64 - goal.x as f64).powi(2) + (start.y as f64 - goal.y as f64).powi(2)).sqrt();
        if sep < min_sep {
            continue;
        }
        if grid_path(&grid, start, goal).is_some() {
            return Ok(Maze { map, start, goal });
        }
    }
    Err(DiffusionError::Unsolvable(MAX_ROUNDS))
}
