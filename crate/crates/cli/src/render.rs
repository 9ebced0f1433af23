//! Static figures: line plots, error maps, k-space previews and zoomed crops.

use std::path::Path;

use essgan::{Image, KSpaceGrid};
use image::{Rgb, RgbImage};

use crate::fail::CliResult;

/// Error maps show `|recon - truth| * ERROR_GAIN`, clipped to white.
pub const ERROR_GAIN: f32 = 5.0;
/// Crops show the central `1 / ZOOM` of each side, upscaled back.
pub const ZOOM: usize = 4;

pub fn error_map(xg: &Image<f32>, x: &Image<f32>) -> Image<f32> {
    Image::from_fn(x.height(), x.width(), |r, c| {
        ((xg.get(r, c) - x.get(r, c)).abs() * ERROR_GAIN).min(1.0)
    })
}

/// Centered `log(1 + |k|)`, scaled to its maximum.
pub fn kspace_preview(k: &KSpaceGrid<f64>) -> Image<f32> {
    let (h, w) = k.dims();
    let log = Image::from_fn(h, w, |r, c| k.get_centered(r, c).norm().ln_1p());
    let max = log.data().iter().cloned().fold(0.0, f64::max);
    log.map(|v| if max > 0.0 { (v / max) as f32 } else { 0.0 })
}

/// Central region upscaled by nearest-neighbour to the original extent.
pub fn zoom_crop(img: &Image<f32>) -> Image<f32> {
    let (h, w) = img.dims();
    let (ch, cw) = ((h / ZOOM).max(1), (w / ZOOM).max(1));
    let (r0, c0) = ((h - ch) / 2, (w - cw) / 2);
    Image::from_fn(h, w, |r, c| img.get(r0 + r * ch / h, c0 + c * cw / w))
}

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const LEFT: i64 = 110;
const RIGHT: i64 = 20;
const TOP: i64 = 20;
const BOTTOM: i64 = 40;
const INK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const REFERENCE: Rgb<u8> = Rgb([150, 150, 150]);
pub const BLUE: Rgb<u8> = Rgb([31, 90, 180]);

pub struct Series<'a> {
    pub points: &'a [(f64, f64)],
    pub color: Rgb<u8>,
}

/// A line plot with labelled extremes and an optional dashed horizontal
/// reference level.
pub fn line_plot(path: &Path, series: &[Series], reference: Option<f64>) -> CliResult<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all.filter(|p| p.0.is_finite() && p.1.is_finite()) {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    if let Some(r) = reference.filter(|r| r.is_finite()) {
        (y0, y1) = (y0.min(r), y1.max(r));
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        (x0, x1) = (x0 - 1.0, x1 + 1.0);
    }
    if y1 - y0 < 1e-12 * y0.abs().max(1.0) {
        let pad = 0.05 * y0.abs().max(1.0);
        (y0, y1) = (y0 - pad, y1 + pad);
    }
    let (pw, ph) = (WIDTH as i64 - LEFT - RIGHT, HEIGHT as i64 - TOP - BOTTOM);
    let px = |x: f64| LEFT + ((x - x0) / (x1 - x0) * pw as f64).round() as i64;
    let py = |y: f64| TOP + ph - ((y - y0) / (y1 - y0) * ph as f64).round() as i64;

    for i in 1..5 {
        let y = TOP + ph * i / 5;
        line(&mut img, (LEFT, y), (LEFT + pw, y), GRID);
    }
    if let Some(r) = reference.filter(|r| r.is_finite()) {
        let y = py(r);
        for x in (LEFT..LEFT + pw).step_by(12) {
            line(&mut img, (x, y), ((x + 6).min(LEFT + pw), y), REFERENCE);
        }
    }
    for s in series {
        let pts: Vec<(i64, i64)> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        for w in pts.windows(2) {
            for d in [0, 1] {
                line(&mut img, (w[0].0, w[0].1 + d), (w[1].0, w[1].1 + d), s.color);
            }
        }
        for &(x, y) in &pts {
            for dy in -2..=2 {
                for dx in -2..=2 {
                    put(&mut img, x + dx, y + dy, s.color);
                }
            }
        }
    }
    let (l, r, t, b) = (LEFT, LEFT + pw, TOP, TOP + ph);
    for (a, z) in [((l, t), (r, t)), ((r, t), (r, b)), ((r, b), (l, b)), ((l, b), (l, t))] {
        line(&mut img, a, z, INK);
    }
    // Enough digits to tell the two extremes apart.
    let digits = (4..=10)
        .find(|&d| number_with(y0, d) != number_with(y1, d))
        .unwrap_or(10);
    for (v, y) in [(y1, t), (y0, b)] {
        let s = number_with(v, digits);
        text(&mut img, &s, LEFT - 8 - text_width(&s), y - 5);
    }
    text(&mut img, &number(x0), l, b + 10);
    let last = number(x1);
    text(&mut img, &last, r - text_width(&last), b + 10);
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| crate::fail::Fail::Data(format!("{}: {e}", path.display())))
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Bresenham segment.
fn line(img: &mut RgbImage, (mut x, mut y): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x).abs(), -(y1 - y).abs());
    let (sx, sy) = ((x1 - x).signum(), (y1 - y).signum());
    let mut err = dx + dy;
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
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
    }
}

fn number(v: f64) -> String {
    number_with(v, 4)
}

fn number_with(v: f64, digits: usize) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        let s = format!("{v:.digits$}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.prec$e}", prec = digits.saturating_sub(2))
    }
}

const SCALE: i64 = 2;

fn text_width(s: &str) -> i64 {
    s.len() as i64 * 4 * SCALE
}

/// 3x5 glyphs, one row per entry, bit 2 is the left column.
fn glyph(ch: char) -> [u8; 5] {
    match ch {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        'e' => [7, 5, 7, 4, 7],
        _ => [0; 5],
    }
}

fn text(img: &mut RgbImage, s: &str, x: i64, y: i64) {
    for (i, ch) in s.chars().enumerate() {
        for (row, bits) in glyph(ch).iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    for sy in 0..SCALE {
                        for sx in 0..SCALE {
                            let gx = x + (i as i64 * 4 + col) * SCALE + sx;
                            put(img, gx, y + row as i64 * SCALE + sy, INK);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_use_plot_glyphs_only() {
        for v in [0.0, 0.123456, 31.5, -2.0, 1e-5, 123456.0] {
            let s = number(v);
            assert!(s.chars().all(|c| c == '0' || glyph(c) != [0; 5]), "{s}");
        }
        assert_eq!(number(31.5), "31.5");
    }

    #[test]
    fn crop_of_constant_is_constant() {
        let img = Image::filled(16, 16, 0.25f32);
        assert_eq!(zoom_crop(&img), img);
        let ramp = Image::from_fn(8, 8, |r, c| (r * 8 + c) as f32);
        assert_eq!(zoom_crop(&ramp).get(0, 0), ramp.get(3, 3));
    }

    #[test]
    fn error_map_saturates() {
        let x = Image::filled(4, 4, 0.0f32);
        let xg = Image::from_fn(4, 4, |r, _| r as f32 * 0.1);
        let e = error_map(&xg, &x);
        assert_eq!((e.get(0, 0), e.get(3, 0)), (0.0, 1.0));
        assert!((e.get(1, 0) - 0.5).abs() < 1e-6);
    }
}
