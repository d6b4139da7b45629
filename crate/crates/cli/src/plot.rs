//! Static SVG figures from CSV artifacts.
//!
//! The output depends only on the input bytes: coordinates are printed with
//! fixed precision and nothing time- or host-dependent is embedded, so
//! figures can be diffed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::CliError;

const WIDTH: f64 = 760.0;
const PANEL_HEIGHT: f64 = 250.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const PANEL_GAP: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Header and rows of one CSV file.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let mut records = reader.records();
        let header = match records.next() {
            Some(r) => r
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
                .iter()
                .map(|s| s.trim().to_string())
                .collect(),
            None => Vec::new(),
        };
        let rows = records
            .map(|r| {
                r.map(|rec| rec.iter().map(|s| s.trim().to_string()).collect())
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
            })
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    /// A file with no header line carries no schema and is treated as an
    /// empty table of any kind.
    pub fn is_blank(&self) -> bool {
        self.header.is_empty()
    }

    /// Column indices for `names`, or the list of missing columns.
    pub fn require(&self, names: &[&str]) -> Result<Vec<usize>, CliError> {
        if self.is_blank() {
            return Ok(Vec::new());
        }
        let missing: Vec<String> = names
            .iter()
            .filter(|n| !self.header.iter().any(|h| h == *n))
            .map(|n| n.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Validation(vec![format!(
                "{}: schema mismatch, missing column(s): {}",
                self.path.display(),
                missing.join(", ")
            )]));
        }
        Ok(names.iter().map(|n| self.header.iter().position(|h| h == n).expect("checked")).collect())
    }

    pub fn column(&self, idx: usize) -> Result<Vec<f64>, CliError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = r.get(idx).map(String::as_str).unwrap_or("");
                cell.parse::<f64>().map_err(|_| {
                    CliError::Validation(vec![format!(
                        "{}: row {} column `{}`: `{cell}` is not a number",
                        self.path.display(),
                        i + 2,
                        self.header[idx]
                    )])
                })
            })
            .collect()
    }

    pub fn text_column(&self, idx: usize) -> Vec<String> {
        self.rows.iter().map(|r| r.get(idx).cloned().unwrap_or_default()).collect()
    }
}

fn fmt(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tick label text with as many decimals as the step needs.
fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10()).ceil() as usize };
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s.trim_start_matches(['-', '0', '.']).is_empty() {
        s[1..].to_string()
    } else {
        s
    }
}

/// Round-number ticks covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), step)
}

fn padded_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return None;
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    Some((lo - pad, hi + pad))
}

/// One set of axes inside the figure.
struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Panel {
    fn sx(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn sy(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }
}

struct Svg {
    body: String,
    height: f64,
}

impl Svg {
    fn new(panels: usize, title: &str) -> Self {
        let height = MARGIN_TOP + panels as f64 * (PANEL_HEIGHT + PANEL_GAP);
        let mut s = Self {
            body: String::new(),
            height,
        };
        s.text(WIDTH / 2.0, 24.0, title, "middle", 16.0);
        s
    }

    fn panel(&self, index: usize, xr: (f64, f64), yr: (f64, f64)) -> Panel {
        Panel {
            x0: MARGIN_LEFT,
            y0: MARGIN_TOP + index as f64 * (PANEL_HEIGHT + PANEL_GAP),
            w: WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
            h: PANEL_HEIGHT,
            xr,
            yr,
        }
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="{}">{}</text>"#,
            fmt(x),
            fmt(y),
            fmt(size),
            escape(s)
        );
    }

    fn axes(&mut self, p: &Panel, xlabel: &str, ylabel: &str, numeric_x: bool) {
        let _ = writeln!(
            self.body,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333" stroke-width="1"/>"##,
            fmt(p.x0),
            fmt(p.y0),
            fmt(p.w),
            fmt(p.h)
        );
        let (yt, ystep) = ticks(p.yr.0, p.yr.1);
        for v in yt {
            let y = p.sy(v);
            let _ = writeln!(
                self.body,
                r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#ddd" stroke-width="0.5"/>"##,
                fmt(p.x0),
                fmt(y),
                fmt(p.x0 + p.w),
                fmt(y)
            );
            self.text(p.x0 - 6.0, y + 4.0, &tick_label(v, ystep), "end", 11.0);
        }
        if numeric_x {
            let (xt, xstep) = ticks(p.xr.0, p.xr.1);
            for v in xt {
                self.text(p.sx(v), p.y0 + p.h + 16.0, &tick_label(v, xstep), "middle", 11.0);
            }
        }
        self.text(p.x0 + p.w / 2.0, p.y0 + p.h + 34.0, xlabel, "middle", 12.0);
        let (lx, ly) = (18.0, p.y0 + p.h / 2.0);
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 {} {})">{}</text>"#,
            fmt(lx),
            fmt(ly),
            fmt(lx),
            fmt(ly),
            escape(ylabel)
        );
    }

    fn polyline(&mut self, p: &Panel, xs: &[f64], ys: &[f64], color: &str, dash: Option<&str>) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{},{}", fmt(p.sx(*x)), fmt(p.sy(*y))))
            .collect();
        if pts.is_empty() {
            return;
        }
        let dash = dash.map_or(String::new(), |d| format!(r#" stroke-dasharray="{d}""#));
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            pts.join(" ")
        );
    }

    fn hline(&mut self, p: &Panel, y: f64, label: &str) {
        let sy = p.sy(y);
        let _ = writeln!(
            self.body,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#555" stroke-width="1" stroke-dasharray="6 4"/>"##,
            fmt(p.x0),
            fmt(sy),
            fmt(p.x0 + p.w),
            fmt(sy)
        );
        self.text(p.x0 + p.w - 4.0, sy - 4.0, label, "end", 10.0);
    }

    fn band(&mut self, p: &Panel, xs: &[f64], lo: &[f64], hi: &[f64], color: &str) {
        let mut pts: Vec<String> = xs.iter().zip(hi).map(|(x, y)| format!("{},{}", fmt(p.sx(*x)), fmt(p.sy(*y)))).collect();
        pts.extend(xs.iter().zip(lo).rev().map(|(x, y)| format!("{},{}", fmt(p.sx(*x)), fmt(p.sy(*y)))));
        if pts.is_empty() {
            return;
        }
        let _ = writeln!(
            self.body,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.25" stroke="none"/>"#,
            pts.join(" ")
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, color: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="{}" stroke="#333" stroke-width="0.5"/>"##,
            fmt(x),
            fmt(y),
            fmt(w.max(0.0)),
            fmt(h.max(0.0)),
            fmt(opacity)
        );
    }

    fn segment(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, color: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="{}"/>"#,
            fmt(x1),
            fmt(y1),
            fmt(x2),
            fmt(y2),
            fmt(width)
        );
    }

    fn dot(&mut self, x: f64, y: f64, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="2" fill="none" stroke="{color}" stroke-width="0.8"/>"#,
            fmt(x),
            fmt(y)
        );
    }

    fn legend(&mut self, p: &Panel, entries: &[(String, String)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = p.y0 + 14.0 + 15.0 * i as f64;
            self.segment(p.x0 + 10.0, y - 4.0, p.x0 + 30.0, y - 4.0, color, 2.0);
            self.text(p.x0 + 36.0, y, label, "start", 11.0);
        }
    }

    fn no_data(&mut self, p: &Panel) {
        self.text(p.x0 + p.w / 2.0, p.y0 + p.h / 2.0, "no data", "middle", 14.0);
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            fmt(WIDTH),
            fmt(self.height),
            fmt(WIDTH),
            fmt(self.height),
            self.body
        )
    }
}

fn series_label(t: &Table) -> String {
    t.path.file_stem().map_or_else(|| "series".into(), |s| s.to_string_lossy().into_owned())
}

/// Per-link `cos θ` against time, one line per input rollout.
pub fn dip_profile(tables: &[Table], title: &str) -> Result<String, CliError> {
    let mut series = Vec::new();
    for t in tables {
        let idx = t.require(&["t", "cos1", "cos2"])?;
        if idx.is_empty() || t.rows.is_empty() {
            continue;
        }
        series.push((series_label(t), t.column(idx[0])?, t.column(idx[1])?, t.column(idx[2])?));
    }
    let mut svg = Svg::new(2, title);
    let xr = padded_range(series.iter().flat_map(|s| s.1.iter().copied())).unwrap_or((0.0, 1.0));
    for (k, name) in ["link 1", "link 2"].iter().enumerate() {
        let p = svg.panel(k, xr, (-1.1, 1.1));
        svg.axes(&p, "time step", &format!("cos θ ({name})"), true);
        svg.hline(&p, 1.0, "upright");
        if series.is_empty() {
            svg.no_data(&p);
            continue;
        }
        for (i, s) in series.iter().enumerate() {
            let ys = if k == 0 { &s.2 } else { &s.3 };
            svg.polyline(&p, &s.1, ys, PALETTE[i % PALETTE.len()], None);
        }
        if k == 0 {
            let entries: Vec<(String, String)> = series
                .iter()
                .enumerate()
                .map(|(i, s)| (s.0.clone(), PALETTE[i % PALETTE.len()].to_string()))
                .collect();
            svg.legend(&p, &entries);
        }
    }
    Ok(svg.finish())
}

/// Training loss and tail `cos θ` against iteration.
pub fn learning_curve(tables: &[Table], title: &str) -> Result<String, CliError> {
    let mut series = Vec::new();
    for t in tables {
        let idx = t.require(&["iteration", "loss", "mean_cos"])?;
        if idx.is_empty() || t.rows.is_empty() {
            continue;
        }
        series.push((series_label(t), t.column(idx[0])?, t.column(idx[1])?, t.column(idx[2])?));
    }
    let mut svg = Svg::new(2, title);
    let xr = padded_range(series.iter().flat_map(|s| s.1.iter().copied())).unwrap_or((0.0, 1.0));
    let loss_r = padded_range(series.iter().flat_map(|s| s.2.iter().copied())).unwrap_or((0.0, 1.0));
    let panels = [(loss_r, "loss"), ((-1.1, 1.1), "mean cos θ")];
    for (k, (yr, label)) in panels.iter().enumerate() {
        let p = svg.panel(k, xr, *yr);
        svg.axes(&p, "iteration", label, true);
        if k == 1 {
            svg.hline(&p, 1.0, "upright");
        }
        if series.is_empty() {
            svg.no_data(&p);
            continue;
        }
        for (i, s) in series.iter().enumerate() {
            let ys = if k == 0 { &s.2 } else { &s.3 };
            svg.polyline(&p, &s.1, ys, PALETTE[i % PALETTE.len()], None);
        }
        if k == 0 {
            let entries: Vec<(String, String)> = series
                .iter()
                .enumerate()
                .map(|(i, s)| (s.0.clone(), PALETTE[i % PALETTE.len()].to_string()))
                .collect();
            svg.legend(&p, &entries);
        }
    }
    Ok(svg.finish())
}

/// True state, posterior mean and the particle envelope, with the
/// estimated reward underneath.
pub fn cstr_trace(table: &Table, title: &str) -> Result<String, CliError> {
    let cols = ["t", "true_cb", "estimated_cb_mean", "particle_min", "particle_max", "estimated_reward"];
    let idx = table.require(&cols)?;
    let mut svg = Svg::new(2, title);
    if idx.is_empty() || table.rows.is_empty() {
        for (k, label) in ["c_B", "estimated reward"].iter().enumerate() {
            let p = svg.panel(k, (0.0, 1.0), (0.0, 1.0));
            svg.axes(&p, "time step", label, true);
            svg.no_data(&p);
        }
        return Ok(svg.finish());
    }
    let c: Vec<Vec<f64>> = idx.iter().map(|&i| table.column(i)).collect::<Result<_, _>>()?;
    let xr = padded_range(c[0].iter().copied()).unwrap_or((0.0, 1.0));
    let yr = padded_range(c[1..5].iter().flat_map(|v| v.iter().copied())).unwrap_or((0.0, 1.0));
    let p = svg.panel(0, xr, yr);
    svg.axes(&p, "time step", "c_B", true);
    svg.band(&p, &c[0], &c[3], &c[4], PALETTE[0]);
    svg.polyline(&p, &c[0], &c[1], "#000", None);
    svg.polyline(&p, &c[0], &c[2], PALETTE[1], Some("5 3"));
    svg.legend(
        &p,
        &[
            ("true state".into(), "#000".into()),
            ("posterior mean".into(), PALETTE[1].into()),
            ("particle range".into(), PALETTE[0].into()),
        ],
    );
    let rr = padded_range(c[5].iter().copied()).unwrap_or((0.0, 1.0));
    let p = svg.panel(1, xr, rr);
    svg.axes(&p, "time step", "estimated reward", true);
    svg.polyline(&p, &c[0], &c[5], PALETTE[2], None);
    Ok(svg.finish())
}

/// Letter values of sorted data: median, then fourths, eighths and so on,
/// stopping once a tail would hold fewer than 8 points.
pub fn letter_values(sorted: &[f64]) -> (f64, Vec<(f64, f64)>) {
    let n = sorted.len();
    let at = |depth: f64| {
        let lo = (depth.floor() as usize).clamp(1, n) - 1;
        let hi = (depth.ceil() as usize).clamp(1, n) - 1;
        let lo_v = 0.5 * (sorted[lo] + sorted[hi]);
        let hi_v = 0.5 * (sorted[n - 1 - lo] + sorted[n - 1 - hi]);
        (lo_v, hi_v)
    };
    let mut depth = (n as f64 + 1.0) / 2.0;
    let median = at(depth).0;
    let mut boxes = Vec::new();
    loop {
        depth = (depth.floor() + 1.0) / 2.0;
        if depth < 1.0 || (boxes.len() >= 1 && depth < 8.0) {
            break;
        }
        boxes.push(at(depth));
        if depth <= 1.0 {
            break;
        }
    }
    (median, boxes)
}

/// Letter-value boxes of `time_near_goal` per agent, in order of first
/// appearance; points beyond the outermost box are drawn individually.
pub fn time_near_goal(tables: &[Table], title: &str) -> Result<String, CliError> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for t in tables {
        let idx = t.require(&["agent", "time_near_goal"])?;
        if idx.is_empty() {
            continue;
        }
        let names = t.text_column(idx[0]);
        let values = t.column(idx[1])?;
        for (name, v) in names.into_iter().zip(values) {
            match groups.iter_mut().find(|g| g.0 == name) {
                Some(g) => g.1.push(v),
                None => groups.push((name, vec![v])),
            }
        }
    }
    let mut svg = Svg::new(1, title);
    let all = groups.iter().flat_map(|g| g.1.iter().copied());
    let yr = padded_range(all).unwrap_or((0.0, 1.0));
    let k = groups.len().max(1) as f64;
    let p = svg.panel(0, (0.0, k), (yr.0.min(0.0), yr.1));
    svg.axes(&p, "agent", "time steps near goal", false);
    if groups.is_empty() {
        svg.no_data(&p);
        return Ok(svg.finish());
    }
    for (i, (name, values)) in groups.iter_mut().enumerate() {
        values.sort_by(f64::total_cmp);
        let color = PALETTE[i % PALETTE.len()];
        let cx = p.sx(i as f64 + 0.5);
        let slot = p.w / k;
        let (median, boxes) = letter_values(values);
        let levels = boxes.len().max(1) as f64;
        for (level, (lo, hi)) in boxes.iter().enumerate().rev() {
            let w = 0.7 * slot * (1.0 - level as f64 / (levels + 1.0));
            let opacity = 0.8 - 0.6 * level as f64 / levels;
            svg.rect(cx - w / 2.0, p.sy(*hi), w, p.sy(*lo) - p.sy(*hi), color, opacity);
        }
        let w = 0.7 * slot;
        svg.segment(cx - w / 2.0, p.sy(median), cx + w / 2.0, p.sy(median), "#000", 2.0);
        if let Some((lo, hi)) = boxes.last() {
            for v in values.iter().filter(|v| *v < lo || *v > hi) {
                svg.dot(cx, p.sy(*v), color);
            }
        }
        svg.text(cx, p.y0 + p.h + 16.0, name, "middle", 10.0);
        svg.text(cx, p.y0 - 4.0, &format!("median {}, n={}", fmt(median), values.len()), "middle", 9.0);
    }
    Ok(svg.finish())
}

pub fn render(kind: &str, inputs: &[PathBuf], title: Option<&str>) -> Result<String, CliError> {
    let tables: Vec<Table> = inputs.iter().map(|p| Table::read(p)).collect::<Result<_, _>>()?;
    let title = title.map(str::to_string);
    match kind {
        "dip-profile" => dip_profile(&tables, title.as_deref().unwrap_or("Double pendulum: cos θ per link")),
        "learning-curve" => learning_curve(&tables, title.as_deref().unwrap_or("Training curve")),
        "cstr-trace" => {
            if tables.len() != 1 {
                return Err(CliError::Usage("cstr-trace takes exactly one --in file".into()));
            }
            cstr_trace(&tables[0], title.as_deref().unwrap_or("CSTR: state estimate and particle range"))
        }
        "time-near-goal" => time_near_goal(&tables, title.as_deref().unwrap_or("Time near goal per agent")),
        other => Err(CliError::Usage(format!(
            "unknown plot kind `{other}` (expected dip-profile, cstr-trace, time-near-goal or learning-curve)"
        ))),
    }
}

pub fn plot_command(kind: &str, inputs: &[PathBuf], out: &Path, title: Option<&str>) -> Result<String, CliError> {
    let svg = render(kind, inputs, title)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, svg)?;
    Ok(format!("wrote {}\n", out.display()))
}
