//! Loss curves rendered to a fixed-size PNG.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::metrics::{read_metrics, EpochRecord};
use crate::error::{Error, Result};

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 400;
pub const TRAIN_COLOR: Rgb<u8> = Rgb([31, 119, 180]);
pub const VAL_COLOR: Rgb<u8> = Rgb([214, 39, 40]);
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

/// Plot area: columns `LEFT..=RIGHT`, rows `TOP..=BOTTOM`.
pub const LEFT: u32 = 80;
pub const RIGHT: u32 = 620;
pub const TOP: u32 = 40;
pub const BOTTOM: u32 = 340;

/// 5x7 bitmap glyphs, one byte per row, bit 4 = leftmost column.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        'e' => [0, 0, 0x0E, 0x11, 0x1F, 0x10, 0x0E],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        _ => [0; 7],
    }
}

const SCALE: u32 = 2;
const ADVANCE: u32 = 6 * SCALE;

fn text_width(s: &str) -> u32 {
    s.chars().count() as u32 * ADVANCE
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, s: &str, color: Rgb<u8>) {
    for (k, c) in s.chars().enumerate() {
        let x0 = x + k as u32 * ADVANCE;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..5u32 {
                if bits & (0x10 >> col) != 0 {
                    for dy in 0..SCALE {
                        for dx in 0..SCALE {
                            put(img, (x0 + col * SCALE + dx) as i64, (y + row as u32 * SCALE + dy) as i64, color);
                        }
                    }
                }
            }
        }
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, color);
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

fn tick_label(v: f64) -> String {
    if v == 0.0 || (0.01..10_000.0).contains(&v.abs()) {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

/// Pixel positions of each series' points.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotLayout {
    pub y_min: f64,
    pub y_max: f64,
    pub train: Vec<(i64, i64)>,
    pub val: Vec<(i64, i64)>,
}

pub fn layout(records: &[EpochRecord]) -> Result<PlotLayout> {
    if records.is_empty() {
        return Err(Error::Format("metrics CSV has no epochs to plot".into()));
    }
    let values = records.iter().flat_map(|r| [r.train_loss, r.val_loss]);
    if values.clone().any(|v| !v.is_finite()) {
        return Err(Error::Format("metrics CSV holds non-finite losses".into()));
    }
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        let pad = (hi.abs() * 0.1).max(0.5);
        lo -= pad;
        hi += pad;
    }
    let (e0, e1) = (records[0].epoch as f64, records[records.len() - 1].epoch as f64);
    let px = |epoch: usize| -> i64 {
        if e1 > e0 {
            LEFT as i64 + ((epoch as f64 - e0) / (e1 - e0) * (RIGHT - LEFT) as f64).round() as i64
        } else {
            ((LEFT + RIGHT) / 2) as i64
        }
    };
    let py = |v: f64| -> i64 { BOTTOM as i64 - ((v - lo) / (hi - lo) * (BOTTOM - TOP) as f64).round() as i64 };
    Ok(PlotLayout {
        y_min: lo,
        y_max: hi,
        train: records.iter().map(|r| (px(r.epoch), py(r.train_loss))).collect(),
        val: records.iter().map(|r| (px(r.epoch), py(r.val_loss))).collect(),
    })
}

/// Draws train (blue) and validation (red) loss against epoch.
pub fn render_loss_curve(records: &[EpochRecord]) -> Result<RgbImage> {
    let lay = layout(records)?;
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BG);
    for k in 1..4 {
        let y = TOP + k * (BOTTOM - TOP) / 4;
        line(&mut img, (LEFT as i64, y as i64), (RIGHT as i64, y as i64), GRID);
    }
    line(&mut img, (LEFT as i64, TOP as i64), (LEFT as i64, BOTTOM as i64), INK);
    line(&mut img, (LEFT as i64, BOTTOM as i64), (RIGHT as i64, BOTTOM as i64), INK);

    let hi = tick_label(lay.y_max);
    let lo = tick_label(lay.y_min);
    draw_text(&mut img, LEFT.saturating_sub(text_width(&hi) + 6), TOP - 7, &hi, INK);
    draw_text(&mut img, LEFT.saturating_sub(text_width(&lo) + 6), BOTTOM - 7, &lo, INK);
    let first = records[0].epoch.to_string();
    let last = records[records.len() - 1].epoch.to_string();
    draw_text(&mut img, LEFT, BOTTOM + 8, &first, INK);
    draw_text(&mut img, RIGHT.saturating_sub(text_width(&last)), BOTTOM + 8, &last, INK);
    draw_text(&mut img, (LEFT + RIGHT - text_width("EPOCH")) / 2, BOTTOM + 30, "EPOCH", INK);
    draw_text(&mut img, 8, 12, "LOSS", INK);

    let legend_x = RIGHT - 120;
    for (k, (name, color)) in [("TRAIN", TRAIN_COLOR), ("VAL", VAL_COLOR)].into_iter().enumerate() {
        let y = 10 + k as u32 * 16;
        line(&mut img, (legend_x as i64, y as i64 + 7), (legend_x as i64 + 24, y as i64 + 7), color);
        draw_text(&mut img, legend_x + 32, y, name, color);
    }

    // validation first so the training curve stays on top
    for (pts, color) in [(&lay.val, VAL_COLOR), (&lay.train, TRAIN_COLOR)] {
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], color);
        }
        for &(x, y) in pts.iter() {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    put(&mut img, x + dx, y + dy, color);
                }
            }
        }
    }
    Ok(img)
}

/// Reads a metrics CSV and writes its loss curves as a PNG.
pub fn emit_loss_curve(metrics_csv: &Path, out: &Path) -> Result<()> {
    let records = read_metrics(metrics_csv)?;
    let img = render_loss_curve(&records)?;
    img.save_with_format(out, image::ImageFormat::Png)
        .map_err(|e| Error::Data(format!("writing {}: {e}", out.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(train: &[f64], val: &[f64]) -> Vec<EpochRecord> {
        train
            .iter()
            .zip(val)
            .enumerate()
            .map(|(epoch, (&t, &v))| EpochRecord {
                epoch,
                train_loss: t,
                val_loss: v,
                val_dice_mean: 0.5,
                lr: 0.001,
                wall_seconds: 1.0,
            })
            .collect()
    }

    #[test]
    fn fixed_dimensions_and_empty_input() {
        let img = render_loss_curve(&records(&[0.9, 0.5], &[1.0, 0.7])).unwrap();
        assert_eq!(img.dimensions(), (WIDTH, HEIGHT));
        let one = render_loss_curve(&records(&[0.9], &[0.9])).unwrap();
        assert_eq!(one.dimensions(), (WIDTH, HEIGHT));
        assert!(matches!(render_loss_curve(&[]), Err(Error::Format(_))));
    }

    #[test]
    fn decreasing_series_draws_a_descending_line() {
        let train = [1.0, 0.8, 0.55, 0.4, 0.3, 0.22, 0.17, 0.12];
        let val = [2.0; 8];
        let recs = records(&train, &val);
        let lay = layout(&recs).unwrap();
        assert!(lay.train.windows(2).all(|w| w[1].1 > w[0].1 && w[1].0 > w[0].0));
        let img = render_loss_curve(&recs).unwrap();
        // away from the 3x3 point markers, the highest train-coloured pixel
        // in each column never rises
        let mut prev = 0;
        let near_marker = |x: i64| lay.train.iter().any(|p| (p.0 - x).abs() <= 1);
        for x in (lay.train[0].0..=lay.train[7].0).filter(|&x| !near_marker(x)) {
            let top = (TOP..=BOTTOM)
                .find(|&y| *img.get_pixel(x as u32, y) == TRAIN_COLOR)
                .expect("curve is connected") as i64;
            assert!(top >= prev, "column {x}: {top} < {prev}");
            prev = top;
        }
        for &(x, y) in &lay.train {
            assert_eq!(*img.get_pixel(x as u32, y as u32), TRAIN_COLOR);
        }
    }
}
