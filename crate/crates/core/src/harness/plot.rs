//! SVG path and clearance-CDF plots.

use super::metrics::pose_distances;
use super::runner::RunLog;
use super::HarnessError;
use crate::gridmap::{EmpiricalCdf, OccupancyGrid, OBSTACLE};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn color(k: usize) -> &'static str {
    COLORS[k % COLORS.len()]
}

fn label(log: &RunLog) -> String {
    format!("{} ({})", log.info.planner, log.status())
}

/// Writes the path plot to `out_path` and, when any run has poses, a
/// clearance CDF next to it (`<stem>_cdf.svg`). Returns the files written.
pub fn emit_plot(logs: &[RunLog], grid: &OccupancyGrid, out_path: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if logs.is_empty() {
        return Err(HarnessError::EmptyLog);
    }
    let mut written = vec![out_path.to_path_buf()];
    write_file(out_path, &path_svg(logs, grid))?;
    if logs.iter().any(|l| !l.poses.is_empty()) {
        let stem = out_path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
        let cdf_path = out_path.with_file_name(format!("{stem}_cdf.svg"));
        write_file(&cdf_path, &cdf_svg(logs, grid))?;
        written.push(cdf_path);
    }
    Ok(written)
}

fn write_file(path: &Path, body: &str) -> Result<(), HarnessError> {
    std::fs::write(path, body).map_err(|e| HarnessError::Unwritable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn path_svg(logs: &[RunLog], grid: &OccupancyGrid) -> String {
    let (lo, hi) = grid.extent();
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let cs = grid.cell_size();
    let mut s = String::new();
    let px_w = 1200.0_f64.min(w * 2.0);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{px_w:.0}" height="{:.0}" viewBox="0 0 {w:.2} {h:.2}">"#,
        px_w * h / w
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w:.2}" height="{h:.2}" fill="#eaf2fb"/>"##);
    // obstacle raster as one rect per horizontal run
    let _ = writeln!(s, r##"<g fill="#333333" stroke="none">"##);
    for j in 0..grid.height() {
        let mut i = 0;
        while i < grid.width() {
            if grid.get(i, j) != OBSTACLE {
                i += 1;
                continue;
            }
            let start = i;
            while i < grid.width() && grid.get(i, j) == OBSTACLE {
                i += 1;
            }
            let x = start as f64 * cs;
            let y = h - (j + 1) as f64 * cs;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{cs:.3}"/>"#,
                (i - start) as f64 * cs
            );
        }
    }
    s.push_str("</g>\n");
    let to_svg = |x: f64, y: f64| (x - lo.x, h - (y - lo.y));
    let stroke = (w.max(h) / 400.0).max(1.0);
    for (k, log) in logs.iter().enumerate() {
        let pts: Vec<String> = log
            .poses
            .iter()
            .map(|p| {
                let (x, y) = to_svg(p.x, p.y);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="run" points="{}" fill="none" stroke="{}" stroke-width="{stroke:.2}"/>"#,
            pts.join(" "),
            color(k)
        );
    }
    let r = stroke * 4.0;
    if let Some(first) = logs.first() {
        let (sx, sy) = to_svg(first.info.start.x, first.info.start.y);
        let (gx, gy) = to_svg(first.info.goal.x, first.info.goal.y);
        let _ = writeln!(s, r##"<circle class="start" cx="{sx:.2}" cy="{sy:.2}" r="{r:.2}" fill="#2ca02c"/>"##);
        let _ = writeln!(
            s,
            r##"<rect class="goal" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#ffbf00"/>"##,
            gx - r,
            gy - r,
            2.0 * r,
            2.0 * r
        );
    }
    legend(&mut s, logs, 10.0 * stroke, 10.0 * stroke, 8.0 * stroke);
    s.push_str("</svg>\n");
    s
}

fn legend(s: &mut String, logs: &[RunLog], x: f64, y: f64, line: f64) {
    let _ = writeln!(s, r#"<g class="legend" font-family="sans-serif" font-size="{:.1}">"#, line * 0.8);
    for (k, log) in logs.iter().enumerate() {
        let yy = y + (k as f64 + 1.0) * line;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="{:.1}"/><text class="legend-entry" x="{:.1}" y="{yy:.1}">{}</text>"#,
            yy - line * 0.3,
            x + line * 1.5,
            yy - line * 0.3,
            color(k),
            line * 0.2,
            x + line * 2.0,
            label(log)
        );
    }
    s.push_str("</g>\n");
}

fn cdf_svg(logs: &[RunLog], grid: &OccupancyGrid) -> String {
    let curves: Vec<Vec<(f64, f64)>> = logs
        .iter()
        .map(|l| {
            let d = pose_distances(l, grid);
            EmpiricalCdf::new(&d).map(|c| c.points().to_vec()).unwrap_or_default()
        })
        .collect();
    let x_max = curves
        .iter()
        .flatten()
        .map(|p| p.0)
        .fold(10.0_f64, f64::max)
        .ceil();
    let (w, h, m) = (640.0, 400.0, 50.0);
    let sx = |x: f64| m + x / x_max * (w - 2.0 * m);
    let sy = |p: f64| h - m - p * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">distance to nearest obstacle [m]</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">P(d ≤ x)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for tick in 0..=4 {
        let v = x_max * tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{v:.0}</text>"#,
            sx(v),
            h - m + 14.0
        );
        let p = tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{p:.2}</text>"#,
            m - 4.0,
            sy(p) + 3.0
        );
    }
    for (k, pts) in curves.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        // staircase: horizontal to each sample, then up
        let mut d = format!("M{:.2} {:.2}", sx(0.0), sy(0.0));
        let mut prev = 0.0;
        for &(x, p) in pts {
            let _ = write!(d, " H{:.2} V{:.2}", sx(x), sy(p));
            prev = p;
        }
        let _ = write!(d, " H{:.2} V{:.2}", sx(x_max), sy(prev));
        let _ = writeln!(
            s,
            r#"<path class="cdf" d="{d}" fill="none" stroke="{}" stroke-width="2"/>"#,
            color(k)
        );
    }
    legend(&mut s, logs, m + 10.0, m, 16.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::gridmap::FREE;
    use crate::harness::runner::synthetic_log;

    fn grid() -> OccupancyGrid {
        let mut g = OccupancyGrid::filled(60, 40, 3.125, Vec2::ZERO, FREE).unwrap();
        g.set(30, 20, OBSTACLE);
        g
    }

    fn log(k: usize) -> RunLog {
        let y = 20.0 + 10.0 * k as f64;
        synthetic_log(&format!("p{k}"), &[Vec2::new(10.0, y), Vec2::new(60.0, y), Vec2::new(120.0, y)])
    }

    #[test]
    fn one_polyline_per_run() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("path.svg");
        for n in [1, 3] {
            let logs: Vec<RunLog> = (0..n).map(log).collect();
            let files = emit_plot(&logs, &grid(), &out).unwrap();
            assert_eq!(files, vec![out.clone(), dir.path().join("path_cdf.svg")]);
            let svg = std::fs::read_to_string(&out).unwrap();
            assert_eq!(svg.matches(r#"class="run""#).count(), n);
            assert_eq!(svg.matches("legend-entry").count(), n);
            let cdf = std::fs::read_to_string(&files[1]).unwrap();
            assert_eq!(cdf.matches(r#"class="cdf""#).count(), n);
        }
    }

    #[test]
    fn nothing_to_plot() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_plot(&[], &grid(), &dir.path().join("p.svg")),
            Err(HarnessError::EmptyLog)
        ));
        let bad = dir.path().join("missing").join("p.svg");
        assert!(matches!(emit_plot(&[log(0)], &grid(), &bad), Err(HarnessError::Unwritable { .. })));
    }
}
