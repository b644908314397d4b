//! Text artifacts: region-map CSV, SVG heatmap and the shared number format.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::sim::Classification;
use crate::sweep::RegionMap;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl OutputError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        OutputError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Plain decimal with nine significant digits, e.g. `0.0123456789` →
/// `0.0123456789`, `-1234.5` → `-1234.50000`. Never uses exponent notation.
pub fn format_sig9(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0.00000000".to_string();
    }
    let sci = format!("{:.8e}", v.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let sign = if v < 0.0 { "-" } else { "" };
    let body = if exp >= 8 {
        format!("{digits}{}", "0".repeat((exp - 8) as usize))
    } else if exp >= 0 {
        let split = exp as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
    };
    format!("{sign}{body}")
}

pub const CSV_HEADER: &str =
    "theta_a,theta_a_dot,classification,max_abs_tau_a,max_abs_zeta,t_event";

/// Region map as CSV, one row per cell in grid order (θ_a outer, θ̇_a inner).
pub fn region_csv(map: &RegionMap) -> String {
    let mut out = String::with_capacity(64 * (map.cells.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for cell in &map.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            format_sig9(cell.theta_a),
            format_sig9(cell.theta_a_dot),
            cell.status.as_str(),
            format_sig9(cell.max_abs_tau_a),
            format_sig9(cell.max_abs_zeta),
            format_sig9(cell.t_event),
        );
    }
    out
}

pub fn emit_csv(map: &RegionMap, path: &Path) -> Result<(), OutputError> {
    fs::write(path, region_csv(map)).map_err(|e| OutputError::io(path, e))
}

/// One parsed row of a region CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub theta_a: f64,
    pub theta_a_dot: f64,
    pub status: Classification,
    pub max_abs_tau_a: f64,
    pub max_abs_zeta: f64,
    pub t_event: f64,
}

pub fn parse_region_csv(text: &str) -> Result<Vec<CsvRow>, OutputError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => {
            return Err(OutputError::Parse {
                line: 1,
                reason: "missing or unexpected header".into(),
            })
        }
    }
    lines
        .map(|(i, line)| {
            let err = |reason: String| OutputError::Parse {
                line: i + 1,
                reason,
            };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(err(format!("expected 6 columns, found {}", cols.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
            Ok(CsvRow {
                theta_a: num(cols[0])?,
                theta_a_dot: num(cols[1])?,
                status: cols[2].parse().map_err(err)?,
                max_abs_tau_a: num(cols[3])?,
                max_abs_zeta: num(cols[4])?,
                t_event: num(cols[5])?,
            })
        })
        .collect()
}

/// Fill colour per outcome. Every outcome that needed or failed a step is a
/// shade of pink; only `stable` is neutral.
pub fn status_color(status: Classification) -> &'static str {
    match status {
        Classification::Stable => "#e9eef5",
        Classification::StepRecovered => "#f8c8dc",
        Classification::StepRequired => "#f06fa4",
        Classification::Fallen => "#c2185b",
        Classification::Diverged => "#6d0f36",
    }
}

pub fn is_pink(status: Classification) -> bool {
    status != Classification::Stable
}

const CELL_PX: f64 = 8.0;
const MARGIN_LEFT: f64 = 90.0;
const MARGIN_TOP: f64 = 40.0;
const LEGEND_WIDTH: f64 = 170.0;
const MARGIN_BOTTOM: f64 = 60.0;

/// Heatmap with θ_a on the horizontal axis and θ̇_a on the vertical axis
/// (increasing upwards). Cell rectangles carry `class="cell <status>"`;
/// legend swatches carry `class="legend-swatch <status>"`.
pub fn region_svg(map: &RegionMap) -> String {
    let nx = map.theta_a.count;
    let ny = map.theta_a_dot.count;
    let plot_w = nx as f64 * CELL_PX;
    let plot_h = ny as f64 * CELL_PX;
    let width = MARGIN_LEFT + plot_w + LEGEND_WIDTH;
    let height = MARGIN_TOP + plot_h + MARGIN_BOTTOM;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<title>Push-recovery region map</title>"#);
    let _ = writeln!(s, r#"<g id="cells" shape-rendering="crispEdges">"#);
    for (i, j, cell) in map.indexed_cells() {
        let x = MARGIN_LEFT + i as f64 * CELL_PX;
        let y = MARGIN_TOP + (ny - 1 - j) as f64 * CELL_PX;
        let _ = writeln!(
            s,
            r#"<rect class="cell {status}" x="{x}" y="{y}" width="{CELL_PX}" height="{CELL_PX}" fill="{fill}"><title>theta_a={ta} theta_a_dot={td} {status}</title></rect>"#,
            status = cell.status.as_str(),
            fill = status_color(cell.status),
            ta = format_sig9(cell.theta_a),
            td = format_sig9(cell.theta_a_dot),
        );
    }
    let _ = writeln!(s, "</g>");

    // axes
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    let _ = writeln!(s, r#"<g id="axes" stroke="black" fill="none">"#);
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}"/>"#
    );
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="labels" fill="black">"#);
    let _ = writeln!(
        s,
        r#"<text x="{x0}" y="{}" text-anchor="start">{}</text>"#,
        y0 + 15.0,
        format_sig9(map.theta_a.min)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        x0 + plot_w,
        y0 + 15.0,
        format_sig9(map.theta_a.max)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">theta_a (rad)</text>"#,
        x0 + plot_w / 2.0,
        y0 + 35.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        x0 - 5.0,
        y0,
        format_sig9(map.theta_a_dot.min)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        x0 - 5.0,
        MARGIN_TOP + 10.0,
        format_sig9(map.theta_a_dot.max)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{cy}" text-anchor="middle" transform="rotate(-90 20 {cy})">theta_a_dot (rad/s)</text>"#,
        cy = MARGIN_TOP + plot_h / 2.0
    );
    let _ = writeln!(s, "</g>");

    let lx = MARGIN_LEFT + plot_w + 20.0;
    let _ = writeln!(s, r#"<g id="legend">"#);
    for (k, status) in Classification::ALL.into_iter().enumerate() {
        let y = MARGIN_TOP + k as f64 * 20.0;
        let _ = writeln!(
            s,
            r#"<rect class="legend-swatch {name}" x="{lx}" y="{y}" width="12" height="12" fill="{fill}" stroke="black"/>"#,
            name = status.as_str(),
            fill = status_color(status),
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            y + 10.0,
            status.as_str()
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    s
}

pub fn emit_svg(map: &RegionMap, path: &Path) -> Result<(), OutputError> {
    fs::write(path, region_svg(map)).map_err(|e| OutputError::io(path, e))
}
