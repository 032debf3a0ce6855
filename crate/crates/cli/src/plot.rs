//! Static SVG line charts drawn from the CSV logs.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use crate::logs::{Table, TRAJECTORY_FILE};

pub const PLOT_FILES: [&str; 4] = ["tasks.svg", "contact_forces.svg", "orientation_errors.svg", "torques.svg"];

/// Points kept per series; longer series are decimated by striding.
const MAX_POINTS: usize = 1500;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 200.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 26.0;
const MARGIN_B: f64 = 34.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub ys: Vec<f64>,
    pub color: &'static str,
    pub dashed: bool,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn series(label: impl Into<String>, ys: &[f64], color: &'static str, dashed: bool) -> Series {
    Series {
        label: label.into(),
        ys: ys.to_vec(),
        color,
        dashed,
    }
}

fn finite_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| Some(acc.map_or((v, v), |(lo, hi): (f64, f64)| (lo.min(v), hi.max(v)))))
}

/// Round tick spacing giving roughly `target` intervals over `span`.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn label(v: f64, step: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    if decimals <= 6 && v.abs() < 1e5 {
        format!("{v:.decimals$}")
    } else {
        let digits = (v.abs().log10().floor() - step.log10().floor()).max(0.0) as usize;
        format!("{v:.digits$e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A grid of panels sharing the time axis `t`.
pub fn render(title: &str, t: &[f64], panels: &[Panel], columns: usize) -> String {
    let columns = columns.max(1);
    let rows = panels.len().div_ceil(columns);
    let width = columns as f64 * PANEL_W;
    let height = rows as f64 * PANEL_H + 30.0;
    let stride = t.len().div_ceil(MAX_POINTS).max(1);
    let (t0, t1) = finite_range(t.iter().copied()).unwrap_or((0.0, 1.0));
    let t1 = if t1 > t0 { t1 } else { t0 + 1.0 };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="18" font-size="14" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));

    for (k, panel) in panels.iter().enumerate() {
        let ox = (k % columns) as f64 * PANEL_W;
        let oy = 30.0 + (k / columns) as f64 * PANEL_H;
        let (x0, y0) = (ox + MARGIN_L, oy + MARGIN_T);
        let (w, h) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
        let (mut lo, mut hi) = finite_range(panel.series.iter().flat_map(|s| s.ys.iter().copied())).unwrap_or((-1.0, 1.0));
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            lo -= 0.5 * (1.0 + lo.abs()) * 1e-3;
            hi += 0.5 * (1.0 + hi.abs()) * 1e-3;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let px = |tv: f64| x0 + (tv - t0) / (t1 - t0) * w;
        let py = |v: f64| y0 + (hi - v) / (hi - lo) * h;

        let _ = writeln!(svg, r##"<rect x="{x0:.1}" y="{y0:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#444"/>"##);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + w / 2.0,
            oy + 16.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            ox + 12.0,
            y0 + h / 2.0,
            ox + 12.0,
            y0 + h / 2.0,
            escape(&panel.y_label)
        );

        let ys = tick_step(hi - lo, 4.0);
        let mut v = (lo / ys).ceil() * ys;
        while v <= hi {
            let y = py(v);
            let _ = writeln!(svg, r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, x0 + w);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 4.0, y + 4.0, label(v, ys));
            v += ys;
        }
        let xs = tick_step(t1 - t0, 5.0);
        let mut tv = (t0 / xs).ceil() * xs;
        while tv <= t1 {
            let x = px(tv);
            let _ = writeln!(svg, r##"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="#eee"/>"##, y0 + h);
            let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + h + 13.0, label(tv, xs));
            tv += xs;
        }
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">t [s]</text>"#, x0 + w / 2.0, y0 + h + 27.0);

        for (j, s) in panel.series.iter().enumerate() {
            let mut d = String::new();
            let mut pen_down = false;
            for i in (0..s.ys.len().min(t.len())).step_by(stride) {
                let (tv, yv) = (t[i], s.ys[i]);
                if !(tv.is_finite() && yv.is_finite()) {
                    pen_down = false;
                    continue;
                }
                let _ = write!(d, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, px(tv), py(yv));
                pen_down = true;
            }
            let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
            let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.2"{dash}/>"#, d.trim_end(), s.color);
            // Legend column sized from the longest label at an average glyph width.
            let longest = panel.series.iter().map(|s| s.label.chars().count()).max().unwrap_or(0);
            let ly = y0 + 10.0 + 12.0 * j as f64;
            let sx = x0 + w - 8.0 - 6.5 * longest as f64 - 18.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="1.5"{dash}/>"#,
                sx,
                ly - 3.0,
                sx + 14.0,
                ly - 3.0,
                s.color
            );
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, sx + 18.0, escape(&s.label));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

const MEASURED: &str = "#1f77b4";
const REFERENCE: &str = "#d62728";
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn tracking_panels(t: &Table, prefix: &str, title: &str) -> Result<Vec<Panel>> {
    ["x", "y", "z"]
        .iter()
        .map(|a| {
            Ok(Panel {
                title: format!("{title} {a}"),
                y_label: "m".into(),
                series: vec![
                    series("measured", t.column(&format!("{prefix}_{a}"))?, MEASURED, false),
                    series("reference", t.column(&format!("{prefix}_ref_{a}"))?, REFERENCE, true),
                ],
            })
        })
        .collect()
}

/// Writes the four figures next to the CSV files in `dir`, reading only the CSVs.
pub fn write_plots(dir: &Path) -> Result<()> {
    let traj = Table::read(&dir.join(TRAJECTORY_FILE))?;
    let time = traj.column("t")?.to_vec();

    // CoM and feet against their references, one row per axis.
    let com = tracking_panels(&traj, "com", "CoM")?;
    let left = tracking_panels(&traj, "left", "left sole")?;
    let right = tracking_panels(&traj, "right", "right sole")?;
    let mut tasks = Vec::new();
    for k in 0..3 {
        tasks.extend([com[k].clone(), left[k].clone(), right[k].clone()]);
    }

    let forces = vec![
        Panel {
            title: "left foot normal force".into(),
            y_label: "N".into(),
            series: vec![series("f_z", traj.column("left_fz")?, MEASURED, false)],
        },
        Panel {
            title: "right foot normal force".into(),
            y_label: "N".into(),
            series: vec![series("f_z", traj.column("right_fz")?, MEASURED, false)],
        },
    ];

    let errors: Vec<Panel> = [("err_root", "root"), ("err_left", "left sole"), ("err_right", "right sole")]
        .iter()
        .map(|(c, name)| {
            Ok(Panel {
                title: format!("{name} orientation error"),
                y_label: "||R Rd^T - I||".into(),
                series: vec![series(*name, traj.column(c)?, MEASURED, false)],
            })
        })
        .collect::<Result<_>>()?;

    let torque_cols: Vec<&String> = traj.header.iter().filter(|h| h.starts_with("tau_")).collect();
    let mut torques = Vec::new();
    for (side, name) in [("tau_l_", "left leg"), ("tau_r_", "right leg")] {
        let cols: Vec<&&String> = torque_cols.iter().filter(|c| c.starts_with(side)).collect();
        let series_list = cols
            .iter()
            .enumerate()
            .map(|(i, c)| Ok(series(c.trim_start_matches("tau_"), traj.column(c)?, PALETTE[i % PALETTE.len()], false)))
            .collect::<Result<Vec<_>>>()?;
        torques.push(Panel {
            title: format!("{name} joint torques"),
            y_label: "N m".into(),
            series: series_list,
        });
    }

    let figures = [
        (PLOT_FILES[0], render("Task tracking", &time, &tasks, 3)),
        (PLOT_FILES[1], render("Contact forces", &time, &forces, 2)),
        (PLOT_FILES[2], render("Orientation errors", &time, &errors, 3)),
        (PLOT_FILES[3], render("Joint torques", &time, &torques, 2)),
    ];
    for (name, svg) in figures {
        let path = dir.join(name);
        std::fs::write(&path, svg).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(tick_step(1.0, 4.0), 0.2);
        assert_eq!(tick_step(120.0, 5.0), 20.0);
        assert!((tick_step(0.0024, 4.0) - 5e-4).abs() < 1e-18);
        assert_eq!(label(0.4615, 5e-4), "0.4615");
        assert_eq!(label(0.0195, 5e-4), "0.0195");
        assert_eq!(label(2.5e-8, 5e-9), "2.5e-8");
        assert_eq!(label(40.0, 20.0), "40");
    }

    #[test]
    fn render_skips_non_finite_points_and_decimates() {
        let t: Vec<f64> = (0..10_000).map(|i| i as f64 * 1e-3).collect();
        let mut y: Vec<f64> = t.iter().map(|x| x.sin()).collect();
        // On the decimation grid (stride 7).
        y[4998] = f64::NAN;
        let svg = render(
            "demo",
            &t,
            &[Panel {
                title: "sin".into(),
                y_label: "-".into(),
                series: vec![series("a", &y, MEASURED, false)],
            }],
            1,
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let path = svg.lines().find(|l| l.starts_with("<path")).unwrap();
        assert!(!path.contains("NaN"));
        assert_eq!(path.matches('M').count(), 2);
        assert!(path.matches('L').count() <= MAX_POINTS);
    }
}
