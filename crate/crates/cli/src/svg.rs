//! Minimal self-contained SVG charts: line charts and strip charts.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 44.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

pub struct Line {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

fn bounds(lines: &[Line], log_y: bool) -> (f64, f64, f64, f64) {
    let pts = lines.iter().flat_map(|l| l.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        let y = if log_y { y.max(f64::MIN_POSITIVE).log10() } else { y };
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    (x0, x1, y0, y1)
}

/// One polyline per entry, with axes, ticks and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, lines: &[Line], log_y: bool) -> String {
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    let (x0, x1, y0, y1) = bounds(lines, log_y);
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| {
        let y = if log_y { y.max(f64::MIN_POSITIVE).log10() } else { y };
        MARGIN_T + ph - (y - y0) / (y1 - y0) * ph
    };
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = f64::from(i) / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let label = if log_y { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.0}</text>"#,
            sx(xv),
            MARGIN_T + ph + 16.0
        );
        let ty = MARGIN_T + ph - f * ph;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#,
            MARGIN_L - 6.0,
            ty + 4.0
        );
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN_L}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="#ddd"/>"##,
            MARGIN_L + pw
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    for (i, line) in lines.iter().enumerate() {
        let pts: Vec<String> = line
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(i),
            pts.join(" ")
        );
        let ly = MARGIN_T + 14.0 * i as f64 + 8.0;
        let lx = MARGIN_L + pw + 10.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="3"/>"#,
            lx + 16.0,
            color(i)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            ly + 4.0,
            escape(&line.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Colored cells: `rows[r][c]` is the category of row `r` at column `c`.
/// Each panel gets its own block of rows.
pub struct Strip {
    pub name: String,
    pub rows: Vec<Vec<usize>>,
}

pub fn strip_chart(title: &str, columns: &[usize], panels: &[Strip]) -> String {
    let cell_h = 10.0;
    let gap = 28.0;
    let total_rows: usize = panels.iter().map(|p| p.rows.len()).sum();
    let height = MARGIN_T + MARGIN_B + total_rows as f64 * cell_h + gap * panels.len() as f64;
    let mut out = String::new();
    header(&mut out, WIDTH, height, title);
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let cell_w = pw / columns.len().max(1) as f64;
    let mut y = MARGIN_T;
    let mut max_cat = 0;
    for panel in panels {
        let _ = writeln!(out, r#"<text x="{MARGIN_L}" y="{:.1}">{}</text>"#, y + 12.0, escape(&panel.name));
        y += 18.0;
        for (r, row) in panel.rows.iter().enumerate() {
            for (c, &cat) in row.iter().enumerate() {
                max_cat = max_cat.max(cat);
                let _ = writeln!(
                    out,
                    r#"<rect class="cell" x="{:.2}" y="{:.1}" width="{:.2}" height="{cell_h}" fill="{}"/>"#,
                    MARGIN_L + c as f64 * cell_w,
                    y,
                    cell_w + 0.05,
                    color(cat)
                );
            }
            if r % 5 == 0 {
                let _ = writeln!(
                    out,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="9">{}</text>"#,
                    MARGIN_L - 4.0,
                    y + 8.0,
                    r + 1
                );
            }
            y += cell_h;
        }
        y += gap - 18.0;
    }
    if let (Some(first), Some(last)) = (columns.first(), columns.last()) {
        let _ = writeln!(out, r#"<text x="{MARGIN_L}" y="{:.1}">epoch {first}</text>"#, y + 12.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">epoch {last}</text>"#,
            MARGIN_L + pw,
            y + 12.0
        );
    }
    for k in 0..=max_cat {
        let ly = MARGIN_T + 14.0 * k as f64 + 8.0;
        let lx = MARGIN_L + pw + 10.0;
        let _ = writeln!(
            out,
            r#"<rect x="{lx}" y="{}" width="12" height="10" fill="{}"/><text x="{}" y="{}">meta-domain {k}</text>"#,
            ly - 5.0,
            color(k),
            lx + 18.0,
            ly + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}
