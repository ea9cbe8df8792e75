//! Image grids and simple raster plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::unit_to_pixel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRID_BORDER: usize = 2;
const BORDER_RGB: [u8; 3] = [255, 255, 255];

/// Series colours, cycled.
pub const SERIES_COLORS: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Canvas { width, height, rgb: fill.repeat(width * height) }
    }

    pub fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = (y as usize * self.width + x as usize) * 3;
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3]) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    pub fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        image::save_buffer(path, &self.rgb, self.width as u32, self.height as u32, image::ColorType::Rgb8)
            .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
    }
}

/// Lays `images` (`[3, s, s]` in `[-1, 1]`) out row-major with a
/// [`GRID_BORDER`]-pixel white border around every cell.
pub fn grid_canvas(images: &[Tensor], rows: usize, cols: usize) -> Result<Canvas> {
    if rows * cols != images.len() || images.is_empty() {
        return Err(Error::Argument(format!(
            "{rows}x{cols} grid needs {} images, got {}",
            rows * cols,
            images.len()
        )));
    }
    let s = images[0].dim(1);
    if images.iter().any(|im| im.shape() != [3, s, s]) {
        return Err(Error::Argument("grid images must share one [3, s, s] shape".into()));
    }
    let b = GRID_BORDER;
    let mut canvas = Canvas::new(cols * s + (cols + 1) * b, rows * s + (rows + 1) * b, BORDER_RGB);
    for (k, im) in images.iter().enumerate() {
        let (x0, y0) = (b + (k % cols) * (s + b), b + (k / cols) * (s + b));
        for y in 0..s {
            for x in 0..s {
                let mut c = [0u8; 3];
                for (ch, v) in c.iter_mut().enumerate() {
                    *v = unit_to_pixel(im.data()[ch * s * s + y * s + x]);
                }
                canvas.put((x0 + x) as i64, (y0 + y) as i64, c);
            }
        }
    }
    Ok(canvas)
}

pub fn emit_grid(images: &[Tensor], rows: usize, cols: usize, path: &Path) -> Result<()> {
    grid_canvas(images, rows, cols)?.save(path)
}

/// Path of the legend written next to a plot.
pub fn legend_path(plot: &Path) -> PathBuf {
    let mut s = plot.as_os_str().to_os_string();
    s.push(".legend.txt");
    PathBuf::from(s)
}

/// Reads a `iteration,term,value` metrics file into per-term series.
pub fn read_metrics(path: &Path) -> Result<BTreeMap<String, Vec<(u64, f64)>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut series: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 && line.starts_with("iteration") || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Validation(format!("{}:{}: malformed metrics row {line:?}", path.display(), n + 1));
        let mut parts = line.split(',');
        let (Some(it), Some(term), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let it: u64 = it.parse().map_err(|_| bad())?;
        let v: f64 = v.parse().map_err(|_| bad())?;
        series.entry(term.to_string()).or_default().push((it, v));
    }
    Ok(series)
}

/// One line per term of a metrics CSV on a shared value axis. A legend
/// (`term r,g,b min max`) is written to [`legend_path`].
pub fn emit_metric_plot(metrics_csv: &Path, path: &Path) -> Result<()> {
    let series = read_metrics(metrics_csv)?;
    if series.is_empty() {
        return Err(Error::Argument(format!("{} has no metric rows", metrics_csv.display())));
    }
    let finite = || series.values().flatten().filter(|p| p.1.is_finite());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut first, mut last) = (u64::MAX, 0);
    for &(it, v) in finite() {
        lo = lo.min(v);
        hi = hi.max(v);
        first = first.min(it);
        last = last.max(it);
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
        first = 0;
        last = 1;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let (w, h, m) = (640i64, 400i64, 20i64);
    let mut canvas = Canvas::new(w as usize, h as usize, [255, 255, 255]);
    canvas.line((m, h - m), (w - m, h - m), [0, 0, 0]);
    canvas.line((m, m), (m, h - m), [0, 0, 0]);
    let span = (last.saturating_sub(first)).max(1) as f64;
    let px = |it: u64| m + (((it - first) as f64 / span) * (w - 2 * m) as f64).round() as i64;
    let py = |v: f64| h - m - (((v - lo) / (hi - lo)) * (h - 2 * m) as f64).round() as i64;
    let mut legend = String::new();
    for (k, (term, pts)) in series.iter().enumerate() {
        let c = SERIES_COLORS[k % SERIES_COLORS.len()];
        let mut prev = None;
        for &(it, v) in pts.iter().filter(|p| p.1.is_finite()) {
            let p = (px(it), py(v));
            if let Some(q) = prev {
                canvas.line(q, p, c);
            }
            prev = Some(p);
        }
        let (mn, mx) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
        let _ = writeln!(legend, "{term} {},{},{} {mn} {mx}", c[0], c[1], c[2]);
    }
    canvas.save(path)?;
    let lp = legend_path(path);
    fs::write(&lp, legend).map_err(|e| Error::io(&lp, e))
}

/// Bars with whiskers at `mean ± std`; the legend lists `label mean std`.
pub fn emit_bar_plot(bars: &[(String, f64, f64)], path: &Path) -> Result<()> {
    if bars.is_empty() {
        return Err(Error::Argument("nothing to plot".into()));
    }
    let top = bars.iter().map(|b| b.1 + b.2).fold(1.0, f64::max);
    let (w, h, m) = (100 * bars.len() as i64 + 40, 300i64, 20i64);
    let mut canvas = Canvas::new(w as usize, h as usize, [255, 255, 255]);
    canvas.line((m, h - m), (w - m, h - m), [0, 0, 0]);
    let py = |v: f64| h - m - ((v / top) * (h - 2 * m) as f64).round() as i64;
    let mut legend = String::new();
    for (k, (label, mean, std)) in bars.iter().enumerate() {
        let c = SERIES_COLORS[k % SERIES_COLORS.len()];
        let x0 = m + 10 + 100 * k as i64;
        canvas.fill_rect(x0, py(*mean), x0 + 60, h - m, c);
        let xc = x0 + 30;
        canvas.line((xc, py(mean - std)), (xc, py(mean + std)), [0, 0, 0]);
        canvas.line((xc - 8, py(mean + std)), (xc + 8, py(mean + std)), [0, 0, 0]);
        canvas.line((xc - 8, py(mean - std)), (xc + 8, py(mean - std)), [0, 0, 0]);
        let _ = writeln!(legend, "{label} {mean} {std}");
    }
    canvas.save(path)?;
    let lp = legend_path(path);
    fs::write(&lp, legend).map_err(|e| Error::io(&lp, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rand_tensor;

    #[test]
    fn grid_layout_arithmetic() {
        let imgs: Vec<Tensor> = (0..16).map(|i| rand_tensor(&[3, 64, 64], i)).collect();
        let c = grid_canvas(&imgs, 4, 4).unwrap();
        assert_eq!((c.width, c.height), (4 * 64 + 5 * 2, 4 * 64 + 5 * 2));
        assert!(matches!(grid_canvas(&imgs, 3, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn grid_files_are_deterministic_and_legend_lists_terms() {
        let dir = tempfile::tempdir().unwrap();
        let imgs: Vec<Tensor> = (0..4).map(|i| rand_tensor(&[3, 8, 8], i)).collect();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        emit_grid(&imgs, 2, 2, &a).unwrap();
        emit_grid(&imgs, 2, 2, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

        let csv = dir.path().join("m.csv");
        fs::write(&csv, "iteration,term,value\n0,all_1,-1.3\n0,damsm,2\n1,all_1,-1.2\n1,damsm,1.5\n").unwrap();
        let plot = dir.path().join("m.png");
        emit_metric_plot(&csv, &plot).unwrap();
        let legend = fs::read_to_string(legend_path(&plot)).unwrap();
        let terms: Vec<&str> = legend.lines().map(|l| l.split(' ').next().unwrap()).collect();
        assert_eq!(terms, vec!["all_1", "damsm"]);
    }
}
