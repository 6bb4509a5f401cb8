//! Static PNG figures drawn straight onto a raster.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::failure::Failure;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GREY: Rgb<u8> = Rgb([200, 200, 200]);
const DARK: Rgb<u8> = Rgb([40, 40, 40]);
pub const PALETTE: [Rgb<u8>; 4] = [
    Rgb([31, 119, 180]),
    Rgb([214, 39, 40]),
    Rgb([44, 160, 44]),
    Rgb([148, 103, 189]),
];

pub struct Canvas {
    img: RgbImage,
}

impl Canvas {
    pub fn new(w: u32, h: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(w, h, WHITE),
        }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    pub fn rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb<u8>) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    pub fn frame(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb<u8>) {
        self.line(x, y, x + w, y, c);
        self.line(x + w, y, x + w, y + h, c);
        self.line(x + w, y + h, x, y + h, c);
        self.line(x, y + h, x, y, c);
    }

    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
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

    pub fn dot(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        self.rect(x - 1, y - 1, 2, 2, c);
    }

    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        self.img
            .save(path)
            .map_err(|e| Failure::compute(format!("cannot write {}: {e}", path.display())))
    }
}

/// Sequential white-to-navy color scale on [0, 1].
pub fn shade(v: f64) -> Rgb<u8> {
    let t = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([mix(255.0, 8.0), mix(255.0, 48.0), mix(255.0, 107.0)])
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Index matrix `[row][col]` as colored cells. Rows are split into blocks of
/// `row_groups` sizes and columns into blocks of `col_block`, separated by
/// white gaps.
pub fn heatmap(values: &[Vec<f64>], row_groups: &[usize], col_block: usize) -> Canvas {
    const CELL: i64 = 14;
    const GAP: i64 = 5;
    let n_cols = values.first().map_or(0, |r| r.len());
    let col_gaps = if col_block == 0 {
        0
    } else {
        (n_cols.saturating_sub(1) / col_block) as i64
    };
    let w = 2 * GAP + n_cols as i64 * CELL + col_gaps * GAP;
    let h = 2 * GAP + values.len() as i64 * CELL + row_groups.len().saturating_sub(1) as i64 * GAP;
    let mut c = Canvas::new(w as u32, h as u32);
    let mut row = 0usize;
    let mut y = GAP;
    for &size in row_groups {
        for _ in 0..size {
            let mut x = GAP;
            for (j, v) in values[row].iter().enumerate() {
                if col_block > 0 && j > 0 && j % col_block == 0 {
                    x += GAP;
                }
                c.rect(x, y, CELL - 1, CELL - 1, shade(*v));
                x += CELL;
            }
            row += 1;
            y += CELL;
        }
        y += GAP;
    }
    c
}

/// Line chart of several series sharing axes; `log_y` plots log10 of the
/// positive values.
pub fn lines(series: &[(Vec<f64>, Vec<f64>)], log_y: bool) -> Canvas {
    const W: i64 = 640;
    const H: i64 = 400;
    const M: i64 = 30;
    let tr = |y: f64| {
        if log_y {
            if y > 0.0 {
                y.log10()
            } else {
                f64::NAN
            }
        } else {
            y
        }
    };
    let (x0, x1) = range(series.iter().flat_map(|(x, _)| x.iter().copied()));
    let (y0, y1) = range(series.iter().flat_map(|(_, y)| y.iter().map(|v| tr(*v))));
    let mut c = Canvas::new(W as u32, H as u32);
    c.frame(M, M, W - 2 * M, H - 2 * M, GREY);
    let px = |x: f64| M + ((x - x0) / (x1 - x0) * (W - 2 * M) as f64).round() as i64;
    let py = |y: f64| H - M - ((y - y0) / (y1 - y0) * (H - 2 * M) as f64).round() as i64;
    for (s, (xs, ys)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let mut last: Option<(i64, i64)> = None;
        for (x, y) in xs.iter().zip(ys) {
            let v = tr(*y);
            if !v.is_finite() || !x.is_finite() {
                last = None;
                continue;
            }
            let p = (px(*x), py(v));
            if let Some(q) = last {
                c.line(q.0, q.1, p.0, p.1, color);
            }
            last = Some(p);
        }
    }
    c
}

/// Pressure-volume loops of the four chambers in a 2 x 2 grid; `loops`
/// holds `(volume, pressure)` pairs per chamber for each trajectory drawn.
pub fn pv_loops(loops: &[Vec<(Vec<f64>, Vec<f64>)>]) -> Canvas {
    const P: i64 = 300;
    const M: i64 = 20;
    let mut c = Canvas::new((2 * P) as u32, (2 * P) as u32);
    for chamber in 0..4 {
        let (ox, oy) = ((chamber % 2) as i64 * P, (chamber / 2) as i64 * P);
        let (v0, v1) = range(loops.iter().flat_map(|l| l[chamber].0.iter().copied()));
        let (p0, p1) = range(loops.iter().flat_map(|l| l[chamber].1.iter().copied()));
        c.frame(ox + M, oy + M, P - 2 * M, P - 2 * M, GREY);
        let px = |v: f64| ox + M + ((v - v0) / (v1 - v0) * (P - 2 * M) as f64).round() as i64;
        let py = |p: f64| oy + P - M - ((p - p0) / (p1 - p0) * (P - 2 * M) as f64).round() as i64;
        for (s, l) in loops.iter().enumerate() {
            let (vs, ps) = &l[chamber];
            for k in 1..vs.len() {
                c.line(
                    px(vs[k - 1]),
                    py(ps[k - 1]),
                    px(vs[k]),
                    py(ps[k]),
                    PALETTE[s % PALETTE.len()],
                );
            }
        }
    }
    c
}

/// Pairwise posterior views: histograms on the diagonal, scatter plots below
/// it, optional reference values marked in red.
pub fn corner(draws: &[Vec<f64>], reference: Option<&[f64]>) -> Canvas {
    const P: i64 = 160;
    const M: i64 = 8;
    const BINS: usize = 30;
    let d = draws.first().map_or(0, |r| r.len());
    let mut c = Canvas::new((d as i64 * P).max(1) as u32, (d as i64 * P).max(1) as u32);
    let ranges: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let (lo, hi) = range(draws.iter().map(|r| r[j]).chain(reference.map(|t| t[j])));
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        })
        .collect();
    let to_px =
        |j: usize, v: f64| ((v - ranges[j].0) / (ranges[j].1 - ranges[j].0) * (P - 2 * M) as f64).round() as i64;
    for i in 0..d {
        for j in 0..=i {
            let (ox, oy) = (j as i64 * P + M, i as i64 * P + M);
            c.frame(ox, oy, P - 2 * M, P - 2 * M, GREY);
            if i == j {
                let mut counts = [0usize; BINS];
                for r in draws {
                    let b = (to_px(j, r[j]) as f64 / (P - 2 * M) as f64 * BINS as f64) as usize;
                    counts[b.min(BINS - 1)] += 1;
                }
                let top = counts.iter().copied().max().unwrap_or(1).max(1);
                let bw = (P - 2 * M) / BINS as i64;
                for (b, &n) in counts.iter().enumerate() {
                    let h = (n as f64 / top as f64 * (P - 2 * M - 4) as f64).round() as i64;
                    c.rect(ox + b as i64 * bw, oy + P - 2 * M - h, bw.max(1) - 1, h, PALETTE[0]);
                }
                if let Some(t) = reference {
                    let x = ox + to_px(j, t[j]);
                    c.line(x, oy, x, oy + P - 2 * M, PALETTE[1]);
                }
            } else {
                for r in draws {
                    c.dot(ox + to_px(j, r[j]), oy + P - 2 * M - to_px(i, r[i]), DARK);
                }
                if let Some(t) = reference {
                    let (x, y) = (ox + to_px(j, t[j]), oy + P - 2 * M - to_px(i, t[i]));
                    c.rect(x - 2, y - 2, 5, 5, PALETTE[1]);
                }
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shade_endpoints() {
        assert_eq!(shade(0.0), WHITE);
        assert_eq!(shade(1.0), Rgb([8, 48, 107]));
        assert_eq!(shade(-3.0), WHITE);
        assert_eq!(shade(f64::NAN), WHITE);
    }

    #[test]
    fn heatmap_size_follows_groups() {
        let v = vec![vec![0.5; 16]; 5];
        let c = heatmap(&v, &[2, 3], 8);
        assert_eq!(c.img.width(), 2 * 5 + 16 * 14 + 5);
        assert_eq!(c.img.height(), 2 * 5 + 5 * 14 + 5);
    }

    #[test]
    fn degenerate_inputs_do_not_panic() {
        lines(&[(vec![0.0, 1.0], vec![0.0, 0.0])], true);
        corner(&[vec![1.0, 1.0], vec![1.0, 1.0]], Some(&[1.0, 1.0]));
        corner(&[], None);
        pv_loops(&[vec![(vec![1.0, 2.0], vec![3.0, 3.0]); 4]]);
    }
}
