//! Minimal raster line charts for sweep and training-curve reports.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::font::{text_glyph, GLYPH_HEIGHT, GLYPH_WIDTH};
use crate::{Error, Result};

pub const BLACK: [u8; 3] = [0, 0, 0];
pub const BLUE: [u8; 3] = [31, 90, 200];
pub const RED: [u8; 3] = [210, 40, 40];
pub const GREEN: [u8; 3] = [30, 150, 60];
pub const GRAY: [u8; 3] = [170, 170, 170];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub color: [u8; 3],
    pub points: Vec<(f64, f64)>,
}

/// Vertical dashed line at a data x position.
#[derive(Clone, Debug)]
pub struct Marker {
    pub x: f64,
    pub label: String,
    pub color: [u8; 3],
}

#[derive(Clone, Debug)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub markers: Vec<Marker>,
    pub log2_x: bool,
    pub y_range: Option<(f64, f64)>,
    pub width: u32,
    pub height: u32,
}

const LEFT: i64 = 64;
const RIGHT: i64 = 24;
const TOP: i64 = 40;
const BOTTOM: i64 = 52;

impl LineChart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            markers: Vec::new(),
            log2_x: false,
            y_range: None,
            width: 720,
            height: 440,
        }
    }

    fn tx(&self, x: f64) -> f64 {
        if self.log2_x {
            x.max(f64::MIN_POSITIVE).log2()
        } else {
            x
        }
    }

    fn x_bounds(&self) -> (f64, f64) {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.markers.iter().map(|m| m.x))
            .map(|x| self.tx(x));
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if !lo.is_finite() {
            return (0.0, 1.0);
        }
        let pad = ((hi - lo) * 0.05).max(0.5);
        (lo - pad, hi + pad)
    }

    fn y_bounds(&self) -> (f64, f64) {
        if let Some(r) = self.y_range {
            return r;
        }
        let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
        let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
        if !lo.is_finite() {
            return (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            return (lo - 0.5, hi + 0.5);
        }
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }

    pub fn render(&self) -> RgbImage {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb([255, 255, 255]));
        let (x0, x1) = self.x_bounds();
        let (y0, y1) = self.y_bounds();
        let (pl, pr, pt, pb) = (LEFT, w - RIGHT, TOP, h - BOTTOM);
        let px = |x: f64| pl as f64 + (self.tx(x) - x0) / (x1 - x0) * (pr - pl) as f64;
        let py = |y: f64| pb as f64 - (y - y0) / (y1 - y0) * (pb - pt) as f64;

        // Grid and y ticks.
        for i in 0..=5 {
            let v = y0 + (y1 - y0) * i as f64 / 5.0;
            let yy = py(v).round() as i64;
            line(&mut img, (pl, yy), (pr, yy), GRAY, 1, None);
            let label = format_tick(v);
            text(&mut img, pl - 6 - text_width(&label, 1), yy - 3, &label, BLACK, 1);
        }
        // X ticks at the distinct data positions on log axes, evenly otherwise.
        let mut xticks: Vec<f64> = if self.log2_x {
            let mut v: Vec<f64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup();
            v
        } else {
            (0..=5).map(|i| x0 + (x1 - x0) * i as f64 / 5.0).collect()
        };
        xticks.retain(|x| x.is_finite());
        for x in xticks {
            let xx = px(x).round() as i64;
            line(&mut img, (xx, pb), (xx, pb + 4), BLACK, 1, None);
            let label = format_tick(x);
            text(&mut img, xx - text_width(&label, 1) / 2, pb + 8, &label, BLACK, 1);
        }
        line(&mut img, (pl, pt), (pl, pb), BLACK, 1, None);
        line(&mut img, (pl, pb), (pr, pb), BLACK, 1, None);

        for m in &self.markers {
            let xx = px(m.x).round() as i64;
            line(&mut img, (xx, pt), (xx, pb), m.color, 2, Some(6));
            text(&mut img, xx + 4, pt + 2, &m.label, m.color, 1);
        }
        for s in &self.series {
            let pts: Vec<(i64, i64)> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| (px(x).round() as i64, py(y).round() as i64))
                .collect();
            for pair in pts.windows(2) {
                line(&mut img, pair[0], pair[1], s.color, 2, None);
            }
            for &(x, y) in &pts {
                fill_rect(&mut img, x - 3, y - 3, 7, 7, s.color);
            }
        }

        text(&mut img, (w - text_width(&self.title, 2)) / 2, 10, &self.title, BLACK, 2);
        text(&mut img, (w - text_width(&self.x_label, 1)) / 2, h - 18, &self.x_label, BLACK, 1);
        text(&mut img, 6, pt - 14, &self.y_label, BLACK, 1);
        let mut ly = pt + 6;
        for s in &self.series {
            let lw = text_width(&s.label, 1);
            let lx = pr - lw - 24;
            fill_rect(&mut img, lx, ly, 14, 7, s.color);
            text(&mut img, lx + 18, ly, &s.label, BLACK, 1);
            ly += 12;
        }
        img
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.render()
            .save(path)
            .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
    }
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 || (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, c: [u8; 3]) {
    for yy in y..y + h {
        for xx in x..x + w {
            put(img, xx, yy, c);
        }
    }
}

/// Bresenham line; `dash` gives on/off run length in pixels.
fn line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), c: [u8; 3], thickness: i64, dash: Option<i64>) {
    let (mut x, mut y) = a;
    let (dx, dy) = ((b.0 - x).abs(), -(b.1 - y).abs());
    let (sx, sy) = (if x < b.0 { 1 } else { -1 }, if y < b.1 { 1 } else { -1 });
    let mut err = dx + dy;
    let mut n = 0i64;
    loop {
        if dash.is_none_or(|d| (n / d) % 2 == 0) {
            fill_rect(img, x - thickness / 2, y - thickness / 2, thickness, thickness, c);
        }
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
        n += 1;
    }
}

fn text_width(s: &str, scale: i64) -> i64 {
    s.chars().count() as i64 * (GLYPH_WIDTH as i64 + 1) * scale
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, c: [u8; 3], scale: i64) {
    for (i, ch) in s.chars().enumerate() {
        let Some(g) = text_glyph(ch) else { continue };
        let ox = x + i as i64 * (GLYPH_WIDTH as i64 + 1) * scale;
        for (gy, row) in g.iter().enumerate().take(GLYPH_HEIGHT) {
            for (gx, &on) in row.iter().enumerate() {
                if on {
                    fill_rect(img, ox + gx as i64 * scale, y + gy as i64 * scale, scale, scale, c);
                }
            }
        }
    }
}
