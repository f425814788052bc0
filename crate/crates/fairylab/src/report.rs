//! Static HTML reports with rasterized charts and sample grids. Regenerating
//! from the same runs yields identical bytes (no timestamps).

use crate::error::Result;
use crate::runs::read_manifest;
use image::{Rgb, RgbImage};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

const SERIES_COLORS: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

/// One named polyline.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Minimal line chart: grid, axes, one polyline per series. Labels travel in
/// the surrounding HTML caption rather than rasterized text.
pub fn draw_line_chart(series: &[Series], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 24u32;
    let (x0, y0) = (margin, margin);
    let (x1, y1) = (width - margin, height - margin);

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for (x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xs.push(*x);
                ys.push(*y);
            }
        }
    }
    let (xmin, xmax) = bounds(&xs);
    let (ymin, ymax) = bounds(&ys);

    for k in 0..=4u32 {
        let gx = x0 + (x1 - x0) * k / 4;
        let gy = y0 + (y1 - y0) * k / 4;
        draw_line(&mut img, gx, y0, gx, y1, Rgb([235, 235, 235]));
        draw_line(&mut img, x0, gy, x1, gy, Rgb([235, 235, 235]));
    }
    draw_line(&mut img, x0, y1, x1, y1, Rgb([0, 0, 0]));
    draw_line(&mut img, x0, y0, x0, y1, Rgb([0, 0, 0]));

    let project = |x: f64, y: f64| -> (u32, u32) {
        let fx = if xmax > xmin { (x - xmin) / (xmax - xmin) } else { 0.5 };
        let fy = if ymax > ymin { (y - ymin) / (ymax - ymin) } else { 0.5 };
        (
            x0 + (fx.clamp(0.0, 1.0) * (x1 - x0) as f64) as u32,
            y1 - (fy.clamp(0.0, 1.0) * (y1 - y0) as f64) as u32,
        )
    };
    for (i, s) in series.iter().enumerate() {
        let color = Rgb(SERIES_COLORS[i % SERIES_COLORS.len()]);
        let pts: Vec<(u32, u32)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| project(x, y))
            .collect();
        for w in pts.windows(2) {
            draw_line(&mut img, w[0].0, w[0].1, w[1].0, w[1].1, color);
        }
        for &(px, py) in &pts {
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    put(&mut img, px as i32 + dx, py as i32 + dy, color);
                }
            }
        }
    }
    img
}

fn bounds(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x in v {
        lo = lo.min(*x);
        hi = hi.max(*x);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn put(img: &mut RgbImage, x: i32, y: i32, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_line(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, c: Rgb<u8>) {
    let (mut x, mut y) = (x0 as i32, y0 as i32);
    let (x1, y1) = (x1 as i32, y1 as i32);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
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

/// Compose rows of equally sized images into one grid with padding.
pub fn image_grid(rows: &[Vec<PathBuf>]) -> Result<Option<RgbImage>> {
    let mut cells: Vec<Vec<RgbImage>> = Vec::new();
    let mut cw = 0u32;
    let mut ch = 0u32;
    for row in rows {
        let mut r = Vec::new();
        for p in row {
            let img = image::open(p)?.to_rgb8();
            cw = cw.max(img.width());
            ch = ch.max(img.height());
            r.push(img);
        }
        cells.push(r);
    }
    if cells.iter().all(|r| r.is_empty()) {
        return Ok(None);
    }
    let pad = 2u32;
    let cols = cells.iter().map(|r| r.len()).max().unwrap_or(0) as u32;
    let out_w = cols * (cw + pad) + pad;
    let out_h = cells.len() as u32 * (ch + pad) + pad;
    let mut out = RgbImage::from_pixel(out_w, out_h, Rgb([255, 255, 255]));
    for (ri, row) in cells.iter().enumerate() {
        for (ci, img) in row.iter().enumerate() {
            let ox = pad + ci as u32 * (cw + pad);
            let oy = pad + ri as u32 * (ch + pad);
            for (x, y, p) in img.enumerate_pixels() {
                out.put_pixel(ox + x, oy + y, *p);
            }
        }
    }
    Ok(Some(out))
}

#[derive(Debug, Default)]
pub struct ReportSummary {
    pub figures: usize,
    pub missing: Vec<String>,
}

/// Emit `report.html` plus chart PNGs for a set of run directories. Missing
/// artifacts are listed; the report is still written for whatever exists.
pub fn emit_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<ReportSummary> {
    fs::create_dir_all(out_dir)?;
    let mut summary = ReportSummary::default();
    let mut html = String::new();
    html.push_str("<!doctype html>\n<html><head><meta charset=\"utf-8\">\n");
    html.push_str("<title>fairylab report</title>\n");
    html.push_str("<style>body{font-family:sans-serif;max-width:70em;margin:2em auto}figure{margin:1.5em 0}img{image-rendering:pixelated;border:1px solid #ccc}</style>\n");
    html.push_str("</head><body>\n<h1>fairylab report</h1>\n");

    let mut dirs: Vec<PathBuf> = run_dirs.to_vec();
    dirs.sort();
    if dirs.is_empty() {
        html.push_str("<p>No runs given.</p>\n");
    }

    for dir in &dirs {
        let manifest = match read_manifest(dir) {
            Ok(m) => m,
            Err(e) => {
                summary.missing.push(format!("{}: {e}", dir.display()));
                let _ = writeln!(
                    html,
                    "<section><h2>{}</h2><p>manifest missing: {e}</p></section>",
                    dir.display()
                );
                continue;
            }
        };
        let _ = writeln!(
            html,
            "<section><h2>{} — {}</h2>",
            manifest.subcommand,
            dir.display()
        );

        for artifact in &manifest.artifacts {
            let path = dir.join(artifact);
            if !path.exists() {
                summary.missing.push(format!("{}", path.display()));
                let _ = writeln!(html, "<p>missing artifact: {artifact}</p>");
                continue;
            }
            if artifact.ends_with("manifest.json") && artifact.contains("checkpoint") {
                // loss curve from a training manifest
                if let Ok(m) = serde_json::from_str::<crate::diffusion::TrainManifest>(
                    &fs::read_to_string(&path)?,
                ) {
                    if !m.loss_history.is_empty() {
                        let series = vec![Series {
                            label: "loss".into(),
                            points: m
                                .loss_history
                                .iter()
                                .enumerate()
                                .map(|(i, l)| (i as f64, *l))
                                .collect(),
                        }];
                        let chart = draw_line_chart(&series, 480, 280);
                        let name = format!("{}_loss.png", sanitize(dir));
                        chart.save(out_dir.join(&name))?;
                        summary.figures += 1;
                        let (lo, hi) = bounds(&m.loss_history);
                        let _ = writeln!(
                            html,
                            "<figure><img src=\"{name}\" alt=\"loss curve\">\
                             <figcaption>loss over {} steps, range [{lo:.4}, {hi:.4}] — source: {}/{artifact}</figcaption></figure>",
                            m.loss_history.len(),
                            dir.display()
                        );
                    }
                }
            } else if artifact.ends_with("ablation_mu.csv") {
                let (series, caption) = mu_series(&fs::read_to_string(&path)?);
                if !series.is_empty() {
                    let chart = draw_line_chart(&series, 480, 280);
                    let name = format!("{}_mu.png", sanitize(dir));
                    chart.save(out_dir.join(&name))?;
                    summary.figures += 1;
                    let _ = writeln!(
                        html,
                        "<figure><img src=\"{name}\" alt=\"mu ablation\">\
                         <figcaption>{caption} — source: {}/{artifact}</figcaption></figure>",
                        dir.display()
                    );
                }
            } else if artifact.ends_with(".csv") {
                let _ = writeln!(
                    html,
                    "<pre>{}</pre><p>source: {}/{artifact}</p>",
                    html_escape(&fs::read_to_string(&path)?),
                    dir.display()
                );
            } else if artifact.ends_with(".png") && artifact.contains("grid") {
                let name = format!("{}_{}", sanitize(dir), file_name(&path));
                fs::copy(&path, out_dir.join(&name))?;
                summary.figures += 1;
                let _ = writeln!(
                    html,
                    "<figure><img src=\"{name}\" alt=\"grid\">\
                     <figcaption>source: {}/{artifact}</figcaption></figure>",
                    dir.display()
                );
            }
        }
        html.push_str("</section>\n");
    }

    if !summary.missing.is_empty() {
        html.push_str("<h2>Missing artifacts</h2><ul>\n");
        let mut missing = summary.missing.clone();
        missing.sort();
        for m in &missing {
            let _ = writeln!(html, "<li>{}</li>", html_escape(m));
        }
        html.push_str("</ul>\n");
    }
    html.push_str("</body></html>\n");
    fs::write(out_dir.join("report.html"), html)?;
    Ok(summary)
}

/// Mean reconstruction error per sampler from the mu ablation table: one
/// series over mu for shifted samplers, one flat series for uniform.
fn mu_series(csv: &str) -> (Vec<Series>, String) {
    let mut shifted: Vec<(f64, f64, f64)> = Vec::new(); // mu, sum, count
    let mut uniform: (f64, f64) = (0.0, 0.0);
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            continue;
        }
        let recon: f64 = match cols[2].parse() {
            Ok(v) => v,
            Err(_) => continue,
        };
        if cols[0] == "uniform" {
            uniform.0 += recon;
            uniform.1 += 1.0;
        } else if let Ok(mu) = cols[1].parse::<f64>() {
            match shifted.iter_mut().find(|(m, _, _)| *m == mu) {
                Some(s) => {
                    s.1 += recon;
                    s.2 += 1.0;
                }
                None => shifted.push((mu, recon, 1.0)),
            }
        }
    }
    shifted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut series = Vec::new();
    if !shifted.is_empty() {
        series.push(Series {
            label: "shifted".into(),
            points: shifted.iter().map(|(m, s, c)| (*m, s / c)).collect(),
        });
    }
    if uniform.1 > 0.0 && !shifted.is_empty() {
        let u = uniform.0 / uniform.1;
        let lo = shifted.first().map(|s| s.0).unwrap_or(0.0);
        let hi = shifted.last().map(|s| s.0).unwrap_or(1.0);
        series.push(Series {
            label: "uniform".into(),
            points: vec![(lo, u), (hi, u)],
        });
    }
    let caption = "mean held-out reconstruction MSE vs mu (blue: shifted, orange: uniform baseline)".to_string();
    (series, caption)
}

fn sanitize(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().replace(['/', '.'], "_"))
        .unwrap_or_else(|| "run".into())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn empty_run_set_yields_valid_report() {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("report");
        let summary = emit_report(&[], &out).unwrap();
        assert_eq!(summary.figures, 0);
        let html = fs::read_to_string(out.join("report.html")).unwrap();
        assert!(html.contains("No runs given"));
    }

    #[test]
    fn regenerated_report_is_identical() {
        let tmp = TempDir::new().unwrap();
        let out1 = tmp.path().join("r1");
        let out2 = tmp.path().join("r2");
        // a run dir with a manifest but one missing artifact
        let run = tmp.path().join("run-x");
        fs::create_dir_all(&run).unwrap();
        crate::runs::write_manifest(
            &run,
            &crate::runs::RunManifest {
                subcommand: "style ablate".into(),
                config: crate::config::Config::default(),
                git_describe: "unknown".into(),
                wall_time_ms: 1,
                artifacts: vec!["metrics.csv".into(), "missing.csv".into()],
            },
        )
        .unwrap();
        fs::write(run.join("metrics.csv"), "variant,style_align,text_align,seed\nlora,0.5,0.2,1\n").unwrap();
        let runs = vec![run];
        emit_report(&runs, &out1).unwrap();
        emit_report(&runs, &out2).unwrap();
        let a = fs::read(out1.join("report.html")).unwrap();
        let b = fs::read(out2.join("report.html")).unwrap();
        assert_eq!(a, b);
        let html = String::from_utf8(a).unwrap();
        assert!(html.contains("missing.csv"));
    }

    #[test]
    fn chart_draws_without_panicking_on_degenerate_data() {
        let img = draw_line_chart(
            &[Series {
                label: "flat".into(),
                points: vec![(0.0, 1.0), (1.0, 1.0)],
            }],
            200,
            120,
        );
        assert_eq!(img.width(), 200);
        let empty = draw_line_chart(&[], 100, 80);
        assert_eq!(empty.height(), 80);
    }
}
