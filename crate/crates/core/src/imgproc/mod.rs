//! Frames, regions of interest and the intensity statistics that drive local
//! goal selection.
//!
//! All intensity comparisons against a tolerance use the mean over channels
//! of a pixel, so the tolerance is a single scalar in 8-bit units.

pub mod draw;
mod ppm;

pub use ppm::{read_ppm, write_ppm};

use crate::geometry::{Pixel, Point2};
use thiserror::Error;

/// Default intensity tolerance (about 10% of the 8-bit range).
pub const DEFAULT_TAU: f64 = 25.0;
/// Default ROI margin in pixels.
pub const DEFAULT_MARGIN: usize = 5;

const MODE_BINS: usize = 8;
const MODE_BIN_WIDTH: usize = 256 / MODE_BINS;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("frame data has {got} values, expected {expected} ({width}x{height}x{channels})")]
    DataLength {
        width: usize,
        height: usize,
        channels: usize,
        expected: usize,
        got: usize,
    },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("frame must be at least 1x1")]
    Empty,
    #[error("pixel ({x}, {y}) lies outside the {width}x{height} frame")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("ROI does not fit its parent frame")]
    InvalidRoi,
    #[error("no ROI pixel lies within the intensity tolerance of the dominant intensity")]
    NoFeasiblePixel,
    #[error("malformed image file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major 8-bit raster with 1 (grayscale) or 3 (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageFrame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageFrame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, ImgError> {
        if width == 0 || height == 0 {
            return Err(ImgError::Empty);
        }
        if channels != 1 && channels != 3 {
            return Err(ImgError::Channels(channels));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImgError::DataLength {
                width,
                height,
                channels,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// A frame with every pixel set to `color` (one entry per channel).
    pub fn filled(width: usize, height: usize, color: &[u8]) -> Result<Self, ImgError> {
        let channels = color.len();
        let data = color
            .iter()
            .copied()
            .cycle()
            .take(width * height * channels)
            .collect();
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: &[u8]) {
        debug_assert_eq!(value.len(), self.channels);
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(value);
    }

    /// Mean over channels of the pixel at (x, y).
    pub fn mean_intensity(&self, x: usize, y: usize) -> f64 {
        let p = self.pixel(x, y);
        p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64
    }

    /// Bilinearly interpolated channel-mean intensity; coordinates are
    /// clamped to the frame.
    pub fn bilinear_mean(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.mean_intensity(x0, y0) * (1.0 - fx) + self.mean_intensity(x1, y0) * fx;
        let bottom = self.mean_intensity(x0, y1) * (1.0 - fx) + self.mean_intensity(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }

    pub fn check_inside(&self, p: Point2) -> Result<(), ImgError> {
        if p.is_finite() && self.contains(p) {
            Ok(())
        } else {
            Err(ImgError::OutOfBounds {
                x: p.x,
                y: p.y,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Expand a grayscale frame to three identical channels.
    pub fn to_rgb(&self) -> ImageFrame {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageFrame {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Nearest-neighbour box-averaged downsample to `w`x`h`, single channel
    /// (channel mean), values scaled to [0, 1].
    pub fn downsample_gray(&self, w: usize, h: usize) -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for oy in 0..h {
            let y0 = oy * self.height / h;
            let y1 = ((oy + 1) * self.height / h).max(y0 + 1);
            for ox in 0..w {
                let x0 = ox * self.width / w;
                let x1 = ((ox + 1) * self.width / w).max(x0 + 1);
                let mut acc = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += self.mean_intensity(x, y);
                    }
                }
                out[oy * w + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64 / 255.0;
            }
        }
        out
    }
}

/// Axis-aligned rectangle inside a parent frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub parent_width: usize,
    pub parent_height: usize,
}

impl Roi {
    pub fn new(
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        parent_width: usize,
        parent_height: usize,
    ) -> Result<Self, ImgError> {
        if width == 0 || height == 0 || x + width > parent_width || y + height > parent_height {
            return Err(ImgError::InvalidRoi);
        }
        Ok(Self {
            x,
            y,
            width,
            height,
            parent_width,
            parent_height,
        })
    }

    /// The whole frame as a ROI.
    pub fn full(frame: &ImageFrame) -> Self {
        Self {
            x: 0,
            y: 0,
            width: frame.width(),
            height: frame.height(),
            parent_width: frame.width(),
            parent_height: frame.height(),
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.x >= self.x && p.y >= self.y && p.x < self.x + self.width && p.y < self.y + self.height
    }

    /// Pixels in row-major order, in full-frame coordinates.
    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        (self.y..self.y + self.height)
            .flat_map(move |y| (self.x..self.x + self.width).map(move |x| Pixel::new(x, y)))
    }

    fn fits(&self, frame: &ImageFrame) -> bool {
        self.parent_width == frame.width()
            && self.parent_height == frame.height()
            && self.width >= 1
            && self.height >= 1
            && self.x + self.width <= frame.width()
            && self.y + self.height <= frame.height()
    }
}

/// Bounding rectangle of the two anchors, grown by `margin` and clamped to
/// the frame. Sub-pixel anchors are rounded to the nearest pixel.
pub fn extract_roi(frame: &ImageFrame, a: Point2, b: Point2, margin: usize) -> Result<Roi, ImgError> {
    frame.check_inside(a)?;
    frame.check_inside(b)?;
    let ax = a.x.round() as usize;
    let ay = a.y.round() as usize;
    let bx = b.x.round() as usize;
    let by = b.y.round() as usize;
    let x0 = ax.min(bx).saturating_sub(margin);
    let y0 = ay.min(by).saturating_sub(margin);
    let x1 = (ax.max(bx) + margin).min(frame.width() - 1);
    let y1 = (ay.max(by) + margin).min(frame.height() - 1);
    Roi::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1, frame.width(), frame.height())
}

/// Intensity statistics of a ROI.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiStats {
    /// Population standard deviation per channel.
    pub px_std: Vec<f64>,
    /// Mean over channels of `px_std / 255`.
    pub px_var: f64,
    /// Dominant intensity per channel.
    pub px_int: Vec<f64>,
    pub mean_px: Vec<f64>,
    /// Set when the prior-restricted candidate set was empty and `px_int`
    /// fell back to the unrestricted mode.
    pub prior_fallback: bool,
}

impl RoiStats {
    /// `px_int` collapsed to a scalar (mean over channels).
    pub fn px_int_mean(&self) -> f64 {
        channel_mean(&self.px_int)
    }
}

pub(crate) fn channel_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard deviation, normalised variation and dominant intensity of a ROI.
///
/// The dominant intensity is the per-channel mode over 8 bins of 32 levels,
/// reported as the mean intensity of the winning bin. When `prior` is given,
/// only pixels whose channel-mean lies within `tau` of the prior's channel
/// mean take part in the mode.
pub fn roi_stats(frame: &ImageFrame, roi: &Roi, prior: Option<&[f64]>, tau: f64) -> Result<RoiStats, ImgError> {
    if !roi.fits(frame) {
        return Err(ImgError::InvalidRoi);
    }
    let c = frame.channels();
    let n = roi.area() as u128;

    // Integer accumulation keeps the variance exact.
    let mut sum = vec![0u128; c];
    let mut sum_sq = vec![0u128; c];
    for p in roi.pixels() {
        for (ch, &v) in frame.pixel(p.x, p.y).iter().enumerate() {
            sum[ch] += v as u128;
            sum_sq[ch] += (v as u128) * (v as u128);
        }
    }
    let mean_px: Vec<f64> = sum.iter().map(|&s| s as f64 / n as f64).collect();
    let px_std: Vec<f64> = (0..c)
        .map(|ch| {
            let num = n * sum_sq[ch] - sum[ch] * sum[ch];
            (num as f64 / (n * n) as f64).sqrt()
        })
        .collect();
    let px_var = px_std.iter().map(|s| s / 255.0).sum::<f64>() / c as f64;

    let prior_mean = prior.map(channel_mean);
    let (mut counts, mut bin_sums) = histogram(frame, roi, prior_mean, tau);
    let mut prior_fallback = false;
    if prior_mean.is_some() && counts[0].iter().all(|&k| k == 0) {
        prior_fallback = true;
        (counts, bin_sums) = histogram(frame, roi, None, tau);
    }
    let px_int = (0..c)
        .map(|ch| {
            let mut best = 0;
            for b in 1..MODE_BINS {
                if counts[ch][b] > counts[ch][best] {
                    best = b;
                }
            }
            bin_sums[ch][best] as f64 / counts[ch][best] as f64
        })
        .collect();

    Ok(RoiStats {
        px_std,
        px_var,
        px_int,
        mean_px,
        prior_fallback,
    })
}

type BinCounts = Vec<[u64; MODE_BINS]>;

fn histogram(frame: &ImageFrame, roi: &Roi, prior_mean: Option<f64>, tau: f64) -> (BinCounts, BinCounts) {
    let c = frame.channels();
    let mut counts = vec![[0u64; MODE_BINS]; c];
    let mut sums = vec![[0u64; MODE_BINS]; c];
    for p in roi.pixels() {
        if let Some(pm) = prior_mean {
            if (frame.mean_intensity(p.x, p.y) - pm).abs() > tau {
                continue;
            }
        }
        for (ch, &v) in frame.pixel(p.x, p.y).iter().enumerate() {
            let b = v as usize / MODE_BIN_WIDTH;
            counts[ch][b] += 1;
            sums[ch][b] += v as u64;
        }
    }
    (counts, sums)
}

/// The ROI pixel closest to `waypoint` whose channel-mean intensity is within
/// `tau` of the dominant intensity. Ties go to the first pixel in row-major
/// order. Coordinates are full-frame.
pub fn select_goal_pixel(
    frame: &ImageFrame,
    roi: &Roi,
    stats: &RoiStats,
    waypoint: Point2,
    tau: f64,
) -> Result<Pixel, ImgError> {
    frame.check_inside(waypoint)?;
    if !roi.fits(frame) {
        return Err(ImgError::InvalidRoi);
    }
    let target = stats.px_int_mean();
    let mut best: Option<(f64, Pixel)> = None;
    for p in roi.pixels() {
        if (frame.mean_intensity(p.x, p.y) - target).abs() > tau {
            continue;
        }
        let d = Point2::from(p).dist_sq(waypoint);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, p));
        }
    }
    best.map(|(_, p)| p).ok_or(ImgError::NoFeasiblePixel)
}

/// Index of the first polyline segment containing a sample whose bilinear
/// channel-mean intensity is more than `tau` away from `reference`. Segments
/// are sampled at most 1 px apart, endpoints included.
pub fn polyline_violation(frame: &ImageFrame, points: &[Point2], reference: f64, tau: f64) -> Option<usize> {
    let ok = |p: Point2| (frame.bilinear_mean(p.x, p.y) - reference).abs() <= tau;
    if let [only] = points {
        return (!ok(*only)).then_some(0);
    }
    for (i, seg) in points.windows(2).enumerate() {
        let n = seg[0].dist(seg[1]).ceil().max(1.0) as usize;
        if (0..=n).any(|k| !ok(seg[0].lerp(seg[1], k as f64 / n as f64))) {
            return Some(i);
        }
    }
    None
}
