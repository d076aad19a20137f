//! Minimal raster annotation for debug dumps.

use super::ImageFrame;
use crate::geometry::Point2;

fn put(frame: &mut ImageFrame, x: i64, y: i64, color: [u8; 3]) {
    if x < 0 || y < 0 || x >= frame.width() as i64 || y >= frame.height() as i64 {
        return;
    }
    let c = frame.channels();
    let value: Vec<u8> = if c == 3 {
        color.to_vec()
    } else {
        vec![((color[0] as u16 + color[1] as u16 + color[2] as u16) / 3) as u8]
    };
    frame.set_pixel(x as usize, y as usize, &value);
}

pub fn line(frame: &mut ImageFrame, a: Point2, b: Point2, color: [u8; 3]) {
    let steps = a.dist(b).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let p = a.lerp(b, i as f64 / steps as f64);
        put(frame, p.x.round() as i64, p.y.round() as i64, color);
    }
}

pub fn polyline(frame: &mut ImageFrame, points: &[Point2], color: [u8; 3]) {
    for w in points.windows(2) {
        line(frame, w[0], w[1], color);
    }
}

pub fn dot(frame: &mut ImageFrame, p: Point2, color: [u8; 3]) {
    put(frame, p.x.round() as i64, p.y.round() as i64, color);
}

pub fn cross(frame: &mut ImageFrame, p: Point2, size: f64, color: [u8; 3]) {
    line(frame, Point2::new(p.x - size, p.y - size), Point2::new(p.x + size, p.y + size), color);
    line(frame, Point2::new(p.x - size, p.y + size), Point2::new(p.x + size, p.y - size), color);
}

pub fn rect(frame: &mut ImageFrame, x: usize, y: usize, w: usize, h: usize, color: [u8; 3]) {
    let x0 = x as f64;
    let y0 = y as f64;
    let x1 = (x + w - 1) as f64;
    let y1 = (y + h - 1) as f64;
    line(frame, Point2::new(x0, y0), Point2::new(x1, y0), color);
    line(frame, Point2::new(x1, y0), Point2::new(x1, y1), color);
    line(frame, Point2::new(x1, y1), Point2::new(x0, y1), color);
    line(frame, Point2::new(x0, y1), Point2::new(x0, y0), color);
}
