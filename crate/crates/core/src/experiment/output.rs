//! CSV, metadata JSON and SVG writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use super::{RowRecord, RunOutcome};
use crate::error::Result;

pub const CSV_HEADER: &str = "axis,value,mc_mean,mc_stderr,theory,theory_valid,z";

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn csv(outcome: &RunOutcome) -> String {
    let axis = outcome.spec.sweep.axis.name();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &outcome.rows {
        let _ = writeln!(
            out,
            "{axis},{},{},{},{},{},{}",
            num(r.value),
            opt(r.estimate.map(|e| e.mean)),
            opt(r.estimate.map(|e| e.stderr)),
            opt(r.theory.map(|t| t.value)),
            r.theory.map(|t| t.valid.to_string()).unwrap_or_default(),
            opt(r.z),
        );
    }
    out
}

pub fn metadata(outcome: &RunOutcome) -> serde_json::Value {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let rows: Vec<_> = outcome
        .rows
        .iter()
        .map(|r: &RowRecord| {
            json!({
                "value": r.value,
                "n_reps": r.estimate.map(|e| e.n_reps),
                "row_seed": r.estimate.map(|e| e.master_seed),
                "error": r.error,
                "fit_distance": r.fit_distance,
                "theory_condition_margin": r.theory.map(|t| t.condition_margin),
            })
        })
        .collect();
    json!({
        "name": outcome.spec.name,
        "master_seed": outcome.spec.master_seed,
        "n_reps": outcome.spec.n_reps,
        "versions": {
            "icl-attn-lab": env!("CARGO_PKG_VERSION"),
            "rng": "ChaCha8 (rand_chacha 0.9), one stream per repetition",
        },
        "workers": rayon::current_num_threads(),
        "wall_time_s": outcome.wall_time_s,
        "timestamp_unix": timestamp,
        "error_bars": "1 sigma: one standard error of the mean",
        "spec": outcome.spec,
        "rows": rows,
        "gate": outcome.gate,
        "analysis": outcome.analysis,
        "warnings": outcome.warnings,
    })
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn range(xs: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = xs
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
    if lo > hi {
        return None;
    }
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        0.5 * lo.abs().max(1e-12)
    };
    Some((lo - pad, hi + pad))
}

/// MC means with 1σ bars as points, theory as a line.
pub fn svg(outcome: &RunOutcome) -> String {
    let rows = &outcome.rows;
    let theory: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.theory.filter(|t| t.valid).map(|t| (r.value, t.value)))
        .collect();
    let xr = range(rows.iter().map(|r| r.value)).unwrap_or((0.0, 1.0));
    let ys = rows
        .iter()
        .flat_map(|r| {
            r.estimate
                .map(|e| [e.mean - e.stderr, e.mean + e.stderr])
                .into_iter()
                .flatten()
        })
        .chain(theory.iter().map(|p| p.1));
    let yr = range(ys).unwrap_or((0.0, 1.0));
    let sx = |x: f64| LEFT + (x - xr.0) / (xr.1 - xr.0) * (W - LEFT - RIGHT);
    let sy = |y: f64| H - BOTTOM - (y - yr.0) / (yr.1 - yr.0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        outcome.spec.name
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(
        s,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = xr.0 + f * (xr.1 - xr.0);
        let yv = yr.0 + f * (yr.1 - yr.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.3}</text>"#,
            sx(xv),
            y0 + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.3e}</text>"#,
            x0 - 4.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        outcome.spec.sweep.axis.name()
    );
    if theory.len() > 1 {
        let pts: Vec<String> = theory
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="crimson" fill="none" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }
    for r in rows {
        if let Some(e) = r.estimate {
            let (cx, cy) = (sx(r.value), sy(e.mean));
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="steelblue"/>"#,
                sy(e.mean - e.stderr),
                sy(e.mean + e.stderr)
            );
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="steelblue"/>"#
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" fill="steelblue">MC mean ± 1σ</text>"#,
        x1 - 150.0,
        y1 + 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" fill="crimson">theory</text>"#,
        x1 - 150.0,
        y1 + 26.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn write_all(outcome: &RunOutcome, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let name = &outcome.spec.name;
    let outputs = &outcome.spec.outputs;
    let mut written = Vec::new();

    let path = out_dir.join(outputs.csv_name(name));
    fs::write(&path, csv(outcome))?;
    written.push(path);

    let path = out_dir.join(outputs.metadata_name(name));
    fs::write(&path, serde_json::to_string_pretty(&metadata(outcome))?)?;
    written.push(path);

    if outputs.plot {
        let path = out_dir.join(format!("{name}.svg"));
        fs::write(&path, svg(outcome))?;
        written.push(path);
    }
    Ok(written)
}
