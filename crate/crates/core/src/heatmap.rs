// SPDX-License-Identifier: Apache-2.0

//! PNG heatmaps of tile maps: a fixed blue-white-red palette, a colorbar
//! under the map and the map's minimum and maximum printed at its ends.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::design::TileGrid;
use crate::error::{Error, Result};

const BAR: usize = 8;
const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;
const TEXT_SCALE: usize = 2;

/// Palette position `t` in [0, 1] to RGB: blue through white to red.
pub fn palette(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let (lo, hi) = ([33.0, 102.0, 172.0], [178.0, 24.0, 43.0]);
    let white = [247.0, 247.0, 247.0];
    let (a, b, f) = if t < 0.5 { (lo, white, t * 2.0) } else { (white, hi, t * 2.0 - 1.0) };
    let mix = |i: usize| (a[i] + (b[i] - a[i]) * f).round() as u8;
    [mix(0), mix(1), mix(2)]
}

/// 3x5 bitmaps, one row per entry, high bit on the left.
fn glyph(c: char) -> [u8; GLYPH_H] {
    match c {
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
        '+' => [0, 2, 7, 2, 0],
        'e' => [0, 7, 7, 4, 7],
        _ => [0; GLYPH_H],
    }
}

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.w && y < self.h {
            let i = 3 * (y * self.w + x);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn text(&mut self, x0: usize, y0: usize, s: &str) {
        for (k, ch) in s.chars().enumerate() {
            let g = glyph(ch);
            let gx = x0 + k * (GLYPH_W + 1) * TEXT_SCALE;
            for (row, bits) in g.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits >> (GLYPH_W - 1 - col) & 1 == 1 {
                        for dy in 0..TEXT_SCALE {
                            for dx in 0..TEXT_SCALE {
                                self.put(gx + col * TEXT_SCALE + dx, y0 + row * TEXT_SCALE + dy, [0, 0, 0]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn text_width(s: &str) -> usize {
    s.chars().count() * (GLYPH_W + 1) * TEXT_SCALE
}

/// Renders `grid` with `scale` pixels per tile, row 0 at the top.
pub fn render(grid: &TileGrid, scale: usize) -> Result<(usize, usize, Vec<u8>)> {
    if scale == 0 || grid.is_empty() {
        return Err(Error::Config("heatmap needs a non-empty grid and scale >= 1".into()));
    }
    let (lo, hi) = (grid.min(), grid.max());
    let (min_s, max_s) = (format!("{lo:.3e}"), format!("{hi:.3e}"));
    let text_h = GLYPH_H * TEXT_SCALE;
    let map_w = grid.w() * scale;
    let w = map_w.max(text_width(&min_s) + text_width(&max_s) + 8);
    let h = grid.h() * scale + 2 + BAR + 2 + text_h + 2;
    let mut c = Canvas {
        w,
        h,
        rgb: vec![255; w * h * 3],
    };
    let span = hi - lo;
    let norm = |v: f64| if span > 0.0 { (v - lo) / span } else { 0.5 };
    for y in 0..grid.h() {
        for x in 0..grid.w() {
            let col = palette(norm(grid.get(x, y)));
            for dy in 0..scale {
                for dx in 0..scale {
                    c.put(x * scale + dx, y * scale + dy, col);
                }
            }
        }
    }
    let bar_y = grid.h() * scale + 2;
    for x in 0..w {
        let col = palette(x as f64 / (w - 1).max(1) as f64);
        for dy in 0..BAR {
            c.put(x, bar_y + dy, col);
        }
    }
    let text_y = bar_y + BAR + 2;
    c.text(0, text_y, &min_s);
    c.text(w - text_width(&max_s), text_y, &max_s);
    Ok((w, h, c.rgb))
}

pub fn write_heatmap_png(grid: &TileGrid, scale: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h, rgb) = render(grid, scale)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(&rgb).map_err(fail)?;
    writer.finish().map_err(fail)
}
