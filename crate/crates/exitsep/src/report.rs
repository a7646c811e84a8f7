//! CSV tables and PNG line plots of a [`BenchReport`].
//!
//! `sweep.csv` has one row per threshold. `exit_by_overlap.csv` has one row
//! per (threshold, overlap bucket). Floats are written in shortest
//! round-trip form so [`parse_report`] recovers the report exactly.

use std::fs;
use std::path::Path;

use crate::audio::write_atomic;
use crate::bench::{BenchReport, BucketRow, SweepRow};
use crate::error::{Error, Result};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const BUCKET_CSV: &str = "exit_by_overlap.csv";
pub const EXIT_PNG: &str = "exit_by_overlap.png";
pub const SPEEDUP_PNG: &str = "speedup.png";

const SWEEP_HEADER: [&str; 7] = ["tau", "layers", "avg_exit_layer", "speedup", "median_ns", "mask_mse", "si_snri_db"];
const BUCKET_HEADER: [&str; 6] = ["tau", "overlap", "chunks", "avg_exit_layer", "mask_mse", "si_snri_db"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Writes both tables and both plots into `dir`.
pub fn emit_report(report: &BenchReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let sweep = csv_bytes(
        &SWEEP_HEADER,
        report.rows.iter().map(|r| {
            vec![
                r.tau.to_string(),
                report.layers.to_string(),
                r.avg_exit_layer.to_string(),
                opt(r.speedup),
                opt(r.median_ns),
                r.mask_mse.to_string(),
                r.si_snri_db.to_string(),
            ]
        }),
    );
    write_atomic(&dir.join(SWEEP_CSV), &sweep)?;
    let buckets = csv_bytes(
        &BUCKET_HEADER,
        report.rows.iter().flat_map(|r| {
            r.buckets.iter().map(move |b| {
                vec![
                    r.tau.to_string(),
                    format!("{:.1}", b.overlap as f64 / 10.0),
                    b.chunks.to_string(),
                    b.avg_exit_layer.to_string(),
                    b.mask_mse.to_string(),
                    b.si_snri_db.to_string(),
                ]
            })
        }),
    );
    write_atomic(&dir.join(BUCKET_CSV), &buckets)?;
    write_atomic(&dir.join(EXIT_PNG), &exit_plot(report)?)?;
    write_atomic(&dir.join(SPEEDUP_PNG), &speedup_plot(report)?)?;
    Ok(())
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let got = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::format(path, format!("unexpected header {:?}", got.iter().collect::<Vec<_>>())));
    }
    r.records().map(|rec| rec.map_err(|e| Error::format(path, e.to_string()))).collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec[i].parse().map_err(|_| Error::format(path, format!("bad value {:?} in column {}", &rec[i], i + 1)))
}

fn opt_field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<Option<T>> {
    if rec[i].is_empty() {
        Ok(None)
    } else {
        field(path, rec, i).map(Some)
    }
}

/// Reads back what [`emit_report`] wrote.
pub fn parse_report(dir: &Path) -> Result<BenchReport> {
    let sp = dir.join(SWEEP_CSV);
    let mut report = BenchReport::default();
    for rec in read_table(&sp, &SWEEP_HEADER)? {
        report.layers = field(&sp, &rec, 1)?;
        report.rows.push(SweepRow {
            tau: field(&sp, &rec, 0)?,
            avg_exit_layer: field(&sp, &rec, 2)?,
            speedup: opt_field(&sp, &rec, 3)?,
            median_ns: opt_field(&sp, &rec, 4)?,
            mask_mse: field(&sp, &rec, 5)?,
            si_snri_db: field(&sp, &rec, 6)?,
            buckets: Vec::new(),
        });
    }
    let bp = dir.join(BUCKET_CSV);
    for rec in read_table(&bp, &BUCKET_HEADER)? {
        let tau: f64 = field(&bp, &rec, 0)?;
        let overlap: f64 = field(&bp, &rec, 1)?;
        let row = report
            .rows
            .iter_mut()
            .find(|r| r.tau == tau)
            .ok_or_else(|| Error::format(&bp, format!("threshold {tau} missing from {SWEEP_CSV}")))?;
        row.buckets.push(BucketRow {
            overlap: (overlap * 10.0).round() as u32,
            chunks: field(&bp, &rec, 2)?,
            avg_exit_layer: field(&bp, &rec, 3)?,
            mask_mse: field(&bp, &rec, 4)?,
            si_snri_db: field(&bp, &rec, 5)?,
        });
    }
    Ok(report)
}

const W: usize = 480;
const H: usize = 320;
const MARGIN: usize = 40;
const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

/// An RGB raster with just enough drawing for line plots.
struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Canvas { px: vec![255; W * H * 3] }
    }

    fn dot(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
            let i = (y as usize * W + x as usize) * 3;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.dot(x, y, c);
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

    fn marker(&mut self, (x, y): (i64, i64), c: [u8; 3]) {
        for dx in -2..=2 {
            for dy in -2..=2 {
                self.dot(x + dx, y + dy, c);
            }
        }
    }

    fn axes(&mut self) {
        let g = [0, 0, 0];
        let (l, b) = (MARGIN as i64, (H - MARGIN) as i64);
        self.line((l, MARGIN as i64 / 2), (l, b), g);
        self.line((l, b), ((W - MARGIN / 2) as i64, b), g);
    }

    /// Maps data ranges onto the plot area.
    fn project(x: f64, y: f64, xr: (f64, f64), yr: (f64, f64)) -> (i64, i64) {
        let fx = if xr.1 > xr.0 { (x - xr.0) / (xr.1 - xr.0) } else { 0.5 };
        let fy = if yr.1 > yr.0 { (y - yr.0) / (yr.1 - yr.0) } else { 0.5 };
        let pw = (W - MARGIN - MARGIN / 2 - 10) as f64;
        let ph = (H - MARGIN - MARGIN / 2 - 10) as f64;
        ((MARGIN as f64 + 5.0 + fx * pw).round() as i64, ((H - MARGIN) as f64 - 5.0 - fy * ph).round() as i64)
    }

    fn series(&mut self, pts: &[(f64, f64)], xr: (f64, f64), yr: (f64, f64), c: [u8; 3]) {
        let p: Vec<_> = pts.iter().filter(|(_, y)| y.is_finite()).map(|&(x, y)| Self::project(x, y, xr, yr)).collect();
        for w in p.windows(2) {
            self.line(w[0], w[1], c);
        }
        for &q in &p {
            self.marker(q, c);
        }
    }

    fn png(self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, W as u32, H as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Numeric(format!("png: {e}")))?;
            w.write_image_data(&self.px).map_err(|e| Error::Numeric(format!("png: {e}")))?;
        }
        Ok(out)
    }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

/// Average exit layer against overlap, one line per threshold. The y range
/// is the full depth `1..=layers`.
fn exit_plot(report: &BenchReport) -> Result<Vec<u8>> {
    let mut c = Canvas::new();
    c.axes();
    let xr = range(report.rows.iter().flat_map(|r| r.buckets.iter().map(|b| b.overlap as f64 / 10.0)));
    let yr = (1.0, report.layers.max(2) as f64);
    for (k, r) in report.rows.iter().enumerate() {
        let pts: Vec<_> = r.buckets.iter().map(|b| (b.overlap as f64 / 10.0, b.avg_exit_layer)).collect();
        c.series(&pts, xr, yr, PALETTE[k % PALETTE.len()]);
    }
    c.png()
}

/// Speedup against threshold rank (thresholds are sorted and spaced evenly,
/// since they span decades and include 0 and ∞).
fn speedup_plot(report: &BenchReport) -> Result<Vec<u8>> {
    let mut c = Canvas::new();
    c.axes();
    let mut rows: Vec<&SweepRow> = report.rows.iter().filter(|r| r.speedup.is_some()).collect();
    rows.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    let pts: Vec<_> = rows.iter().enumerate().map(|(i, r)| (i as f64, r.speedup.unwrap_or(f64::NAN))).collect();
    let (lo, hi) = range(pts.iter().map(|p| p.1));
    let yr = (lo.min(1.0), hi.max(1.0));
    c.series(&pts, (0.0, pts.len().saturating_sub(1) as f64), yr, PALETTE[0]);
    c.png()
}
