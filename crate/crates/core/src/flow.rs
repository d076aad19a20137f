//! Pyramidal Lucas–Kanade tracking of sparse points between two frames.
//!
//! Each point is tracked coarse-to-fine: the displacement found on level
//! `L` (doubled) seeds level `L - 1`. On every level the 2x2 normal
//! equations built from the spatial gradients of the previous frame are
//! solved iteratively against the bilinearly warped next frame.

use crate::geometry::Point2;
use crate::imgproc::{self, ImageFrame, ImgError};
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("pyramid needs at least one level")]
    NoLevels,
    #[error("a {width}x{height} frame is too small for {levels} pyramid levels")]
    TooSmall {
        width: usize,
        height: usize,
        levels: usize,
    },
    #[error("pyramids differ in size or level count")]
    Mismatch,
    #[error(transparent)]
    Image(#[from] ImgError),
}

/// Single-channel floating point image, intensities in 8-bit units.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    /// Unweighted mean over channels.
    pub fn from_frame(frame: &ImageFrame) -> Self {
        let c = frame.channels();
        let data = frame
            .data()
            .chunks_exact(c)
            .map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / c as f64)
            .collect();
        Self {
            width: frame.width(),
            height: frame.height(),
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with replicated borders.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let a = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let b = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        a * (1.0 - fy) + b * fy
    }

    fn to_frame(&self) -> ImageFrame {
        let data = self
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        ImageFrame::new(self.width, self.height, 1, data)
            .expect("dimensions are consistent")
            .to_rgb()
    }
}

/// Level 0 is full resolution; level `L` has dimensions `ceil(prev / 2)`.
#[derive(Clone, Debug)]
pub struct ImagePyramid {
    pub levels: Vec<GrayImage>,
}

impl ImagePyramid {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn base(&self) -> &GrayImage {
        &self.levels[0]
    }
}

/// Grayscale conversion followed by repeated `[1 4 6 4 1]/16` blur and 2x
/// decimation.
pub fn build_pyramid(frame: &ImageFrame, levels: usize) -> Result<ImagePyramid, FlowError> {
    if levels == 0 {
        return Err(FlowError::NoLevels);
    }
    let min_side = 1usize << (levels - 1);
    if frame.width() < min_side || frame.height() < min_side {
        return Err(FlowError::TooSmall {
            width: frame.width(),
            height: frame.height(),
            levels,
        });
    }
    let mut out = Vec::with_capacity(levels);
    out.push(GrayImage::from_frame(frame));
    for _ in 1..levels {
        let prev = out.last().unwrap();
        out.push(downsample(&binomial_blur(prev)));
    }
    Ok(ImagePyramid { levels: out })
}

fn binomial_blur(img: &GrayImage) -> GrayImage {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (img.width, img.height);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, weight) in K.iter().enumerate() {
                acc += weight * img.get(clamp(x as isize + k as isize - 2, w), y);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, weight) in K.iter().enumerate() {
                acc += weight * tmp[clamp(y as isize + k as isize - 2, h) * w + x];
            }
            data[y * w + x] = acc;
        }
    }
    GrayImage {
        width: w,
        height: h,
        data,
    }
}

fn downsample(img: &GrayImage) -> GrayImage {
    let w = img.width.div_ceil(2);
    let h = img.height.div_ceil(2);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(img.get(2 * x, 2 * y));
        }
    }
    GrayImage {
        width: w,
        height: h,
        data,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    /// Side of the square integration window (odd).
    pub window: usize,
    pub levels: usize,
    pub max_iterations: usize,
    /// Per-level convergence threshold on the update norm, pixels.
    pub epsilon: f64,
    /// Minimum eigenvalue of the window-averaged structure tensor, with
    /// gradients in 8-bit intensity units per pixel.
    pub min_eigenvalue: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            window: 15,
            levels: 3,
            max_iterations: 10,
            epsilon: 0.01,
            min_eigenvalue: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowVector {
    pub u: f64,
    pub v: f64,
    pub valid: bool,
    /// Mean absolute intensity difference over the window after alignment.
    pub residual: f64,
}

impl FlowVector {
    fn invalid() -> Self {
        Self {
            u: 0.0,
            v: 0.0,
            valid: false,
            residual: f64::INFINITY,
        }
    }
}

/// Track `points` from `prev` into `next`. Failures are reported per point
/// through `valid = false`.
pub fn track_points(
    prev: &ImagePyramid,
    next: &ImagePyramid,
    points: &[Point2],
    cfg: &FlowConfig,
) -> Result<Vec<FlowVector>, FlowError> {
    if prev.level_count() != next.level_count()
        || prev
            .levels
            .iter()
            .zip(&next.levels)
            .any(|(a, b)| a.width != b.width || a.height != b.height)
    {
        return Err(FlowError::Mismatch);
    }
    let levels = cfg.levels.min(prev.level_count()).max(1);
    Ok(points
        .par_iter()
        .map(|&p| track_one(prev, next, p, levels, cfg))
        .collect())
}

fn track_one(prev: &ImagePyramid, next: &ImagePyramid, p: Point2, levels: usize, cfg: &FlowConfig) -> FlowVector {
    let base = prev.base();
    if !p.is_finite() || p.x < 0.0 || p.y < 0.0 || p.x > (base.width - 1) as f64 || p.y > (base.height - 1) as f64 {
        return FlowVector::invalid();
    }
    let half = (cfg.window / 2) as isize;
    let n = cfg.window * cfg.window;
    let mut window_i = vec![0.0; n];
    let mut window_gx = vec![0.0; n];
    let mut window_gy = vec![0.0; n];
    let mut guess = Point2::default();
    let mut min_eig_base = 0.0;

    for level in (0..levels).rev() {
        let img_i = &prev.levels[level];
        let img_j = &next.levels[level];
        let scale = (1u64 << level) as f64;
        let c = p.scale(1.0 / scale);

        let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
        let mut k = 0;
        for dy in -half..=half {
            for dx in -half..=half {
                let x = c.x + dx as f64;
                let y = c.y + dy as f64;
                let gx = 0.5 * (img_i.sample(x + 1.0, y) - img_i.sample(x - 1.0, y));
                let gy = 0.5 * (img_i.sample(x, y + 1.0) - img_i.sample(x, y - 1.0));
                window_i[k] = img_i.sample(x, y);
                window_gx[k] = gx;
                window_gy[k] = gy;
                gxx += gx * gx;
                gxy += gx * gy;
                gyy += gy * gy;
                k += 1;
            }
        }
        let det = gxx * gyy - gxy * gxy;
        // smaller eigenvalue of the window-averaged tensor
        let norm = n as f64;
        let tr = (gxx + gyy) / norm;
        let dn = det / (norm * norm);
        let min_eig = 0.5 * (tr - (tr * tr - 4.0 * dn).max(0.0).sqrt());
        if level == 0 {
            min_eig_base = min_eig;
        }

        let mut nu = Point2::default();
        if min_eig >= cfg.min_eigenvalue && det > 0.0 {
            for _ in 0..cfg.max_iterations {
                let (mut bx, mut by) = (0.0, 0.0);
                let mut k = 0;
                for dy in -half..=half {
                    for dx in -half..=half {
                        let x = c.x + dx as f64 + guess.x + nu.x;
                        let y = c.y + dy as f64 + guess.y + nu.y;
                        let diff = window_i[k] - img_j.sample(x, y);
                        bx += diff * window_gx[k];
                        by += diff * window_gy[k];
                        k += 1;
                    }
                }
                let eta = Point2::new((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
                nu = nu.add(eta);
                if !nu.is_finite() {
                    return FlowVector::invalid();
                }
                if eta.norm() < cfg.epsilon {
                    break;
                }
            }
        }
        guess = if level > 0 { guess.add(nu).scale(2.0) } else { guess.add(nu) };
    }

    if min_eig_base < cfg.min_eigenvalue {
        return FlowVector::invalid();
    }
    let end = p.add(guess);
    let inside = end.x >= 0.0 && end.y >= 0.0 && end.x <= (base.width - 1) as f64 && end.y <= (base.height - 1) as f64;
    let img_j = next.base();
    let mut residual = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let a = base.sample(p.x + dx as f64, p.y + dy as f64);
            let b = img_j.sample(end.x + dx as f64, end.y + dy as f64);
            residual += (a - b).abs();
        }
    }
    residual /= n as f64;
    FlowVector {
        u: guess.x,
        v: guess.y,
        valid: inside && residual.is_finite() && guess.is_finite(),
        residual,
    }
}

/// A waypoint carried across frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackedPoint {
    pub pos: Point2,
    /// Consecutive frames without a valid flow.
    pub stale: u32,
    /// Permanently excluded from selection.
    pub dropped: bool,
}

impl TrackedPoint {
    pub fn new(pos: Point2) -> Self {
        Self {
            pos,
            stale: 0,
            dropped: false,
        }
    }

    pub fn is_live(&self) -> bool {
        !self.dropped
    }
}

/// Apply flows to waypoints. Invalid flows keep the previous position and
/// bump the stale counter; reaching `stale_limit` drops the waypoint.
pub fn update_waypoints(tracked: &[FlowVector], waypoints: &[TrackedPoint], stale_limit: u32) -> Vec<TrackedPoint> {
    assert_eq!(tracked.len(), waypoints.len(), "one flow per waypoint");
    tracked
        .iter()
        .zip(waypoints)
        .map(|(f, w)| {
            if w.dropped {
                return *w;
            }
            if f.valid {
                TrackedPoint::new(Point2::new(w.pos.x + f.u, w.pos.y + f.v))
            } else {
                let stale = w.stale + 1;
                TrackedPoint {
                    pos: w.pos,
                    stale,
                    dropped: stale >= stale_limit,
                }
            }
        })
        .collect()
}

/// Write each pyramid level with the per-level displacement of every valid
/// point drawn as a line (start in blue, end in red).
pub fn dump_flow_levels(
    pyramid: &ImagePyramid,
    points: &[Point2],
    flows: &[FlowVector],
    dir: impl AsRef<Path>,
    prefix: &str,
) -> Result<(), FlowError> {
    std::fs::create_dir_all(dir.as_ref()).map_err(ImgError::from)?;
    for (level, img) in pyramid.levels.iter().enumerate() {
        let mut frame = img.to_frame();
        let s = 1.0 / (1u64 << level) as f64;
        for (p, f) in points.iter().zip(flows) {
            if !f.valid {
                continue;
            }
            let a = p.scale(s);
            let b = Point2::new(p.x + f.u, p.y + f.v).scale(s);
            imgproc::draw::line(&mut frame, a, b, [255, 40, 40]);
            imgproc::draw::dot(&mut frame, a, [40, 40, 255]);
        }
        imgproc::write_ppm(&frame, dir.as_ref().join(format!("{prefix}_level{level}.ppm")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize, shift: (f64, f64)) -> ImageFrame {
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let xf = x as f64 - shift.0;
                let yf = y as f64 - shift.1;
                let v = 128.0 + 50.0 * (xf / 9.0).sin() * (yf / 11.0).cos() + 30.0 * ((xf + 2.0 * yf) / 17.0).sin();
                let v = v.round() as u8;
                data.extend_from_slice(&[v, v, v]);
            }
        }
        ImageFrame::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn pyramid_halves_dimensions() {
        let f = ImageFrame::filled(100, 100, &[10, 20, 30]).unwrap();
        let p = build_pyramid(&f, 3).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|l| (l.width, l.height)).collect();
        assert_eq!(dims, vec![(100, 100), (50, 50), (25, 25)]);
        let odd = ImageFrame::filled(101, 37, &[0, 0, 0]).unwrap();
        let p = build_pyramid(&odd, 3).unwrap();
        assert_eq!((p.levels[2].width, p.levels[2].height), (26, 10));
    }

    #[test]
    fn constant_frame_stays_constant() {
        let f = ImageFrame::filled(40, 30, &[90, 90, 90]).unwrap();
        let p = build_pyramid(&f, 3).unwrap();
        for l in &p.levels {
            assert!(l.data.iter().all(|&v| (v - 90.0).abs() < 1e-9));
        }
    }

    #[test]
    fn pyramid_rejects_small_frame() {
        let f = ImageFrame::filled(2, 2, &[0, 0, 0]).unwrap();
        assert!(matches!(build_pyramid(&f, 3), Err(FlowError::TooSmall { .. })));
        assert!(matches!(build_pyramid(&f, 0), Err(FlowError::NoLevels)));
    }

    #[test]
    fn recovers_horizontal_shift() {
        let a = build_pyramid(&texture(120, 100, (0.0, 0.0)), 3).unwrap();
        let b = build_pyramid(&texture(120, 100, (3.0, 0.0)), 3).unwrap();
        let pts: Vec<Point2> = (0..5).flat_map(|i| (0..4).map(move |j| Point2::new(30.0 + 14.0 * i as f64, 25.0 + 15.0 * j as f64))).collect();
        let flows = track_points(&a, &b, &pts, &FlowConfig::default()).unwrap();
        for f in flows {
            assert!(f.valid);
            assert!((f.u - 3.0).abs() < 0.25 && f.v.abs() < 0.25, "{f:?}");
        }
    }

    #[test]
    fn identical_frames_have_zero_flow() {
        let a = build_pyramid(&texture(80, 80, (0.0, 0.0)), 3).unwrap();
        let pts = [Point2::new(40.0, 40.0), Point2::new(20.5, 33.25)];
        for f in track_points(&a, &a, &pts, &FlowConfig::default()).unwrap() {
            assert!(f.valid);
            assert!(f.u.hypot(f.v) <= 1e-6);
        }
    }

    #[test]
    fn flat_region_is_untrackable() {
        let f = build_pyramid(&ImageFrame::filled(64, 64, &[77, 77, 77]).unwrap(), 3).unwrap();
        let r = track_points(&f, &f, &[Point2::new(32.0, 32.0)], &FlowConfig::default()).unwrap();
        assert!(!r[0].valid);
    }

    #[test]
    fn mismatched_pyramids_rejected() {
        let a = build_pyramid(&ImageFrame::filled(64, 64, &[0, 0, 0]).unwrap(), 3).unwrap();
        let b = build_pyramid(&ImageFrame::filled(64, 64, &[0, 0, 0]).unwrap(), 2).unwrap();
        assert!(matches!(track_points(&a, &b, &[], &FlowConfig::default()), Err(FlowError::Mismatch)));
    }

    #[test]
    fn waypoint_update_rules() {
        let wp = [TrackedPoint::new(Point2::new(50.0, 50.0))];
        let ok = FlowVector { u: 2.0, v: -1.0, valid: true, residual: 0.0 };
        let out = update_waypoints(&[ok], &wp, 5);
        assert_eq!(out[0].pos, Point2::new(52.0, 49.0));
        assert!(out[0].is_live());

        let bad = FlowVector::invalid();
        let mut cur = wp.to_vec();
        for i in 1..=5 {
            cur = update_waypoints(&[bad], &cur, 5);
            assert_eq!(cur[0].pos, Point2::new(50.0, 50.0));
            assert_eq!(cur[0].stale, i);
            assert_eq!(cur[0].is_live(), i < 5);
        }
    }

    #[test]
    fn valid_point_never_leaves_frame() {
        let a = build_pyramid(&texture(60, 60, (0.0, 0.0)), 3).unwrap();
        let b = build_pyramid(&texture(60, 60, (5.0, 0.0)), 3).unwrap();
        let pts: Vec<Point2> = (0..60).step_by(3).map(|x| Point2::new(x as f64, 30.0)).collect();
        for (p, f) in pts.iter().zip(track_points(&a, &b, &pts, &FlowConfig::default()).unwrap()) {
            if f.valid {
                assert!(p.x + f.u <= 59.0 && p.x + f.u >= 0.0);
            }
        }
    }
}
