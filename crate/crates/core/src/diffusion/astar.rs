use super::{DiffusionError, GenerationRequest, Trajectory, TrajectoryGenerator};
use crate::geometry::{resample_polyline, Pixel, Point2};
use crate::imgproc::{polyline_violation, ImageFrame};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Pixels whose channel-mean intensity lies within `tau` of a reference.
#[derive(Clone, Debug)]
pub struct IntensityGrid {
    pub width: usize,
    pub height: usize,
    free: Vec<bool>,
}

impl IntensityGrid {
    pub fn from_frame(frame: &ImageFrame, reference: f64, tau: f64) -> Self {
        let c = frame.channels() as f64;
        let free = frame
            .data()
            .chunks_exact(frame.channels())
            .map(|p| {
                let m = p.iter().map(|&v| v as f64).sum::<f64>() / c;
                (m - reference).abs() <= tau
            })
            .collect();
        Self {
            width: frame.width(),
            height: frame.height(),
            free,
        }
    }

    pub fn from_mask(width: usize, height: usize, free: Vec<bool>) -> Self {
        assert_eq!(free.len(), width * height);
        Self { width, height, free }
    }

    #[inline]
    pub fn is_free(&self, x: usize, y: usize) -> bool {
        self.free[y * self.width + x]
    }

    /// 8-connected neighbours with their move kind. Diagonal moves need both
    /// adjacent orthogonal cells free.
    pub fn neighbours(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
        const STEPS: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        STEPS.iter().filter_map(move |&(dx, dy)| {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize {
                return None;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if !self.is_free(nx, ny) {
                return None;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && !(self.is_free(nx, y) && self.is_free(x, ny)) {
                return None;
            }
            Some((nx, ny, diagonal))
        })
    }
}

/// Path cost as a count of orthogonal and diagonal moves. Two costs are equal
/// exactly when both counts agree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl GridCost {
    pub fn length(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }
}

#[derive(Clone, Debug)]
pub struct GridPath {
    pub cells: Vec<Pixel>,
    pub cost: GridCost,
}

#[derive(Clone, Copy)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    // BinaryHeap is a max-heap: smaller f first, then larger g, then smaller index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.idx.cmp(&self.idx))
    }
}

fn octile(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
}

/// A* with the octile heuristic on an 8-connected grid.
pub fn grid_path(grid: &IntensityGrid, start: Pixel, goal: Pixel) -> Option<GridPath> {
    let (w, h) = (grid.width, grid.height);
    if start.x >= w || start.y >= h || goal.x >= w || goal.y >= h {
        return None;
    }
    if !grid.is_free(start.x, start.y) || !grid.is_free(goal.x, goal.y) {
        return None;
    }
    let n = w * h;
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let s = start.y * w + start.x;
    let t = goal.y * w + goal.x;
    let goal_xy = (goal.x, goal.y);
    g[s] = 0.0;
    let mut open = BinaryHeap::new();
    open.push(Open {
        f: octile((start.x, start.y), goal_xy),
        g: 0.0,
        idx: s,
    });
    while let Some(Open { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        if idx == t {
            break;
        }
        closed[idx] = true;
        let (x, y) = (idx % w, idx / w);
        for (nx, ny, diagonal) in grid.neighbours(x, y) {
            let j = ny * w + nx;
            if closed[j] {
                continue;
            }
            let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
            let cand = g[idx] + step;
            if cand < g[j] {
                g[j] = cand;
                parent[j] = idx;
                open.push(Open {
                    f: cand + octile((nx, ny), goal_xy),
                    g: cand,
                    idx: j,
                });
            }
        }
    }
    if !g[t].is_finite() {
        return None;
    }
    let mut cells = vec![goal];
    let mut cost = GridCost {
        straight: 0,
        diagonal: 0,
    };
    let mut cur = t;
    while cur != s {
        let p = parent[cur];
        if (p % w != cur % w) && (p / w != cur / w) {
            cost.diagonal += 1;
        } else {
            cost.straight += 1;
        }
        cur = p;
        cells.push(Pixel::new(cur % w, cur / w));
    }
    cells.reverse();
    Some(GridPath { cells, cost })
}

/// Deterministic trajectory backend: A* over pixels whose intensity lies
/// close to the requested reference intensity, resampled to the requested
/// number of equally spaced points.
///
/// The search first runs with a tightened tolerance (`tiers` are fractions of
/// the request's `tau`) so the resampled polyline keeps some slack from
/// intensity edges; the first tier whose resampled trajectory stays within
/// `tau` everywhere wins.
#[derive(Clone, Debug)]
pub struct AStarBackend {
    pub tiers: Vec<f64>,
}

impl Default for AStarBackend {
    fn default() -> Self {
        Self {
            tiers: vec![0.5, 0.75, 1.0],
        }
    }
}

impl AStarBackend {
    /// Single search at exactly the request tolerance.
    pub fn exact() -> Self {
        Self { tiers: vec![1.0] }
    }

    fn search(&self, req: &GenerationRequest<'_>, tau: f64) -> Option<Trajectory> {
        let grid = IntensityGrid::from_frame(req.observation, req.reference_intensity, tau);
        let to_px = |p: Point2| Pixel::new(p.x.round() as usize, p.y.round() as usize);
        let path = grid_path(&grid, to_px(req.start), to_px(req.goal))?;
        let mut poly: Vec<Point2> = path.cells.iter().map(|&c| c.into()).collect();
        poly[0] = req.start;
        let n = poly.len();
        poly[n - 1] = req.goal;
        Some(Trajectory::new(resample_polyline(&poly, req.ps.max(2))))
    }
}

impl TrajectoryGenerator for AStarBackend {
    fn generate(&self, req: &GenerationRequest<'_>, _seed: u64) -> Result<Trajectory, DiffusionError> {
        req.observation.check_inside(req.start)?;
        req.observation.check_inside(req.goal)?;
        let mut fallback = None;
        for &f in &self.tiers {
            if let Some(t) = self.search(req, f * req.tau) {
                if polyline_violation(req.observation, &t.points, req.reference_intensity, req.tau).is_none() {
                    return Ok(t);
                }
                fallback.get_or_insert(t);
            }
        }
        fallback.ok_or(DiffusionError::NoPath)
    }
}
