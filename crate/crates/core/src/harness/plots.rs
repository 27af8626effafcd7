use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::record::{EvolutionPoint, ExperimentRecord};
use crate::discretize::{read_alpha_log, AlphaSnapshot};
use crate::error::{Error, Result};
use crate::rl::{read_metrics_csv, MetricsRow};
use crate::searchspace::Edge;
use crate::supernet::CellRole;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Fixed-precision number for SVG attributes.
fn f(v: f64) -> String {
    format!("{v:.2}")
}

/// A minimal SVG document builder.
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{}"/>"#,
            f(x1),
            f(y1),
            f(x2),
            f(y2),
            f(width)
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        if pts.is_empty() {
            return;
        }
        let p: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{},{}", f(*x), f(*y)))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            p.join(" ")
        );
    }

    pub fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64) {
        if pts.len() < 3 {
            return;
        }
        let p: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{},{}", f(*x), f(*y)))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polygon points="{}" fill="{fill}" fill-opacity="{}" stroke="none"/>"#,
            p.join(" "),
            f(opacity)
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
            f(x),
            f(y),
            f(w.max(0.0)),
            f(h.max(0.0))
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-size="{}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            f(x),
            f(y),
            f(size),
            esc(s)
        );
    }

    pub fn finish(&self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = f(self.width),
            h = f(self.height)
        )
    }
}

/// Data-to-pixel mapping of one panel.
struct Panel {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Panel {
    fn new(x: f64, y: f64, w: f64, h: f64, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if !(lo.is_finite() && hi.is_finite()) {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self {
            x,
            y,
            w,
            h,
            x_range: widen(x_range),
            y_range: widen(y_range),
        }
    }

    fn px(&self, v: f64) -> f64 {
        self.x + (v - self.x_range.0) / (self.x_range.1 - self.x_range.0) * self.w
    }

    fn py(&self, v: f64) -> f64 {
        self.y + self.h - (v - self.y_range.0) / (self.y_range.1 - self.y_range.0) * self.h
    }

    fn axes(&self, svg: &mut Svg, title: &str) {
        svg.line(
            self.x,
            self.y + self.h,
            self.x + self.w,
            self.y + self.h,
            "black",
            1.0,
        );
        svg.line(self.x, self.y, self.x, self.y + self.h, "black", 1.0);
        svg.text(self.x + self.w / 2.0, self.y - 6.0, 11.0, "middle", title);
        for (v, anchor_y) in [
            (self.y_range.0, self.y + self.h),
            (self.y_range.1, self.y + 4.0),
        ] {
            svg.text(self.x - 4.0, anchor_y, 9.0, "end", &format!("{v:.3}"));
        }
        svg.text(
            self.x,
            self.y + self.h + 12.0,
            9.0,
            "start",
            &format!("{}", self.x_range.0),
        );
        svg.text(
            self.x + self.w,
            self.y + self.h + 12.0,
            9.0,
            "end",
            &format!("{}", self.x_range.1),
        );
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// One panel per edge with a line per op: softmax weight against step.
pub fn alpha_trajectory_svg(snapshots: &[AlphaSnapshot], role: CellRole) -> Result<String> {
    let probs: Vec<_> = snapshots
        .iter()
        .filter_map(|s| s.role(role).map(|p| (s.step, p)))
        .collect();
    let Some((_, first)) = probs.first() else {
        return Err(Error::Usage(format!(
            "no {} snapshots to plot",
            role.as_str()
        )));
    };
    let edges: Vec<Edge> = first.probs.keys().copied().collect();
    let ops = first.ops.clone();
    let cols = 4usize.min(edges.len()).max(1);
    let rows = edges.len().div_ceil(cols);
    let (pw, ph) = (200.0, 120.0);
    let legend = 24.0;
    let mut svg = Svg::new(
        cols as f64 * (pw + 60.0) + 20.0,
        rows as f64 * (ph + 50.0) + 30.0 + legend,
    );
    let x_range = range(probs.iter().map(|(s, _)| *s as f64));
    for (i, op) in ops.iter().enumerate() {
        let x = 20.0 + i as f64 * 110.0;
        svg.rect(x, 8.0, 10.0, 10.0, PALETTE[i % PALETTE.len()]);
        svg.text(x + 14.0, 17.0, 10.0, "start", op.name());
    }
    for (k, edge) in edges.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        let panel = Panel::new(
            50.0 + c as f64 * (pw + 60.0),
            legend + 30.0 + r as f64 * (ph + 50.0),
            pw,
            ph,
            x_range,
            (0.0, 1.0),
        );
        panel.axes(
            &mut svg,
            &format!("{} edge {}-{}", role.as_str(), edge.0, edge.1),
        );
        for (o, _) in ops.iter().enumerate() {
            let pts: Vec<(f64, f64)> = probs
                .iter()
                .filter_map(|(step, p)| {
                    p.probs
                        .get(edge)
                        .map(|v| (panel.px(*step as f64), panel.py(v[o])))
                })
                .collect();
            svg.polyline(&pts, PALETTE[o % PALETTE.len()]);
        }
    }
    Ok(svg.finish())
}

/// Mean return against step over runs, with a ±std band.
pub fn training_curve_svg(title: &str, runs: &[Vec<MetricsRow>]) -> String {
    let mut steps: Vec<u64> = runs.iter().flatten().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    let stats: Vec<(f64, f64, f64)> = steps
        .iter()
        .filter_map(|&s| {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|run| run.iter().find(|r| r.step == s))
                .map(|r| r.mean_return)
                .filter(|v| v.is_finite())
                .collect();
            if vals.is_empty() {
                return None;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            Some((s as f64, mean, std))
        })
        .collect();
    let mut svg = Svg::new(520.0, 320.0);
    let y_range = range(stats.iter().flat_map(|&(_, m, s)| [m - s, m + s]));
    let panel = Panel::new(
        70.0,
        40.0,
        420.0,
        230.0,
        range(stats.iter().map(|s| s.0)),
        y_range,
    );
    panel.axes(&mut svg, title);
    svg.text(280.0, 305.0, 10.0, "middle", "env steps");
    let mut band: Vec<(f64, f64)> = stats
        .iter()
        .map(|&(x, m, s)| (panel.px(x), panel.py(m + s)))
        .collect();
    band.extend(
        stats
            .iter()
            .rev()
            .map(|&(x, m, s)| (panel.px(x), panel.py(m - s))),
    );
    svg.polygon(&band, PALETTE[0], 0.2);
    let line: Vec<(f64, f64)> = stats
        .iter()
        .map(|&(x, m, _)| (panel.px(x), panel.py(m)))
        .collect();
    svg.polyline(&line, PALETTE[0]);
    svg.finish()
}

/// Bars of mean return per distinct cell in discovery order, with std whiskers.
pub fn cell_evolution_svg(points: &[EvolutionPoint]) -> String {
    let n = points.len().max(1);
    let width = 80.0 + n as f64 * 40.0;
    let mut svg = Svg::new(width.max(320.0), 300.0);
    let lo = range(points.iter().map(|p| p.score.mean - p.score.std))
        .0
        .min(0.0);
    let hi = range(points.iter().map(|p| p.score.mean + p.score.std))
        .1
        .max(0.0);
    let panel = Panel::new(
        60.0,
        40.0,
        n as f64 * 40.0,
        200.0,
        (0.0, n as f64),
        (lo, hi),
    );
    panel.axes(&mut svg, "distinct cells in discovery order");
    let zero = panel.py(0.0);
    for (i, p) in points.iter().enumerate() {
        let x = panel.px(i as f64) + 8.0;
        let top = panel.py(p.score.mean);
        svg.rect(x, top.min(zero), 24.0, (top - zero).abs(), PALETTE[0]);
        let (a, b) = (
            panel.py(p.score.mean - p.score.std),
            panel.py(p.score.mean + p.score.std),
        );
        svg.line(x + 12.0, a, x + 12.0, b, "black", 1.0);
        svg.text(x + 12.0, 258.0, 9.0, "middle", &p.step.to_string());
    }
    svg.text(
        panel.x + panel.w / 2.0,
        285.0,
        10.0,
        "middle",
        "discovery step",
    );
    svg.finish()
}

fn write(path: PathBuf, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

/// Writes every plot the record supports into `dir/plots`, plus DOT files of its
/// selected cell. Paths in the record are relative to `dir`.
pub fn emit_plots(record: &ExperimentRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut out = Vec::new();
    if let Some(log) = &record.alpha_log {
        let snaps = read_alpha_log(&dir.join(log))?;
        for role in [CellRole::Normal, CellRole::Reduction] {
            if snaps.iter().any(|s| s.role(role).is_some()) {
                let svg = alpha_trajectory_svg(&snaps, role)?;
                write(
                    plots.join(format!("alpha_{}.svg", role.as_str())),
                    &svg,
                    &mut out,
                )?;
            }
        }
    }
    let load = |runs: &[super::record::RunSummary]| -> Result<Vec<Vec<MetricsRow>>> {
        runs.iter()
            .map(|r| read_metrics_csv(&dir.join(&r.metrics_csv)))
            .collect()
    };
    if let Some(s) = &record.search {
        let svg = training_curve_svg("supernet search", &load(std::slice::from_ref(s))?);
        write(plots.join("search_curve.svg"), &svg, &mut out)?;
    }
    if let Some(e) = &record.eval {
        let svg = training_curve_svg("discrete cell evaluation", &load(&e.runs)?);
        write(plots.join("eval_curve.svg"), &svg, &mut out)?;
    }
    for a in &record.ablations {
        let svg = training_curve_svg(&a.treatment, &load(&a.runs)?);
        write(
            plots.join(format!("ablation_{}.svg", a.kind.as_str())),
            &svg,
            &mut out,
        )?;
    }
    if !record.cell_evolution.is_empty() {
        write(
            plots.join("cell_evolution.svg"),
            &cell_evolution_svg(&record.cell_evolution),
            &mut out,
        )?;
    }
    if let Some(sel) = &record.selected {
        write(
            plots.join("cell_normal.dot"),
            &sel.cell.normal.to_dot("normal"),
            &mut out,
        )?;
        if let Some(r) = &sel.cell.reduction {
            write(
                plots.join("cell_reduction.dot"),
                &r.to_dot("reduction"),
                &mut out,
            )?;
        }
    }
    Ok(out)
}
