//! SVG renders of decompositions, partitions, heat maps and curves, plus the
//! summary table of Fiedler partition results.
//!
//! All coordinates are written with a fixed number of decimals so identical
//! inputs give identical bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dualgraph::PartitionReport;
use crate::homology::HeatMapGrid;
use crate::polydecomp::{BoundingBox2D, CellComplex2D};

pub mod palette {
    pub const BACKGROUND: &str = "#ffffff";
    pub const FRAME: &str = "#333333";
    pub const VERTEX: &str = "#d62728";
    pub const EDGE: &str = "#1f4e9c";
    pub const EDGE_FAINT: &str = "#9fb3d6";
    /// Face fills, cycled by face id.
    pub const FACES: [&str; 6] = ["#eef3fb", "#f6efe4", "#eaf5ea", "#f3ecf6", "#fbf7e3", "#e8f4f4"];
    /// Dual-graph node colors for predicted class 0 and class 1.
    pub const CLASS: [&str; 2] = ["#1f77b4", "#8e44ad"];
    pub const LOSS: &str = "#e8590c";
    pub const SERIES: [&str; 5] = ["#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    /// Sequential color stops for heat maps, low to high.
    pub const HEAT: [[u8; 3]; 5] = [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ];
}

fn heat_color(x: f64) -> String {
    let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
    let stops = palette::HEAT;
    let pos = x * (stops.len() - 1) as f64;
    let i = (pos.floor() as usize).min(stops.len() - 2);
    let f = pos - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| {
            let a = f64::from(stops[i][k]);
            let b = f64::from(stops[i + 1][k]);
            (a + (b - a) * f).round() as u8
        })
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Affine map from a world rectangle to a pixel rectangle (y up).
#[derive(Debug, Clone, Copy)]
struct View {
    world: BoundingBox2D,
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl View {
    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        let w = &self.world;
        (
            self.left + (p[0] - w.x_min) / (w.x_max - w.x_min) * self.width,
            self.top + (w.y_max - p[1]) / (w.y_max - w.y_min) * self.height,
        )
    }
}

fn svg_open(out: &mut String, width: u32, height: u32) {
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    )
    .unwrap();
    writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"{}\"/>",
        palette::BACKGROUND
    )
    .unwrap();
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, size: u32, body: &str) {
    writeln!(
        out,
        "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"{size}\">{}</text>",
        escape(body)
    )
    .unwrap();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSvgOptions {
    pub width: u32,
    pub height: u32,
    /// Window to draw instead of the complex's own box.
    pub zoom: Option<BoundingBox2D>,
    pub vertex_radius: f64,
    pub show_vertices: bool,
    pub title: Option<String>,
}

impl Default for DecompositionSvgOptions {
    fn default() -> Self {
        Self {
            width: 640,
            height: 640,
            zoom: None,
            vertex_radius: 1.6,
            show_vertices: true,
            title: None,
        }
    }
}

const MARGIN: f64 = 30.0;

fn plot_view(complex: &CellComplex2D, o: &DecompositionSvgOptions) -> View {
    View {
        world: o.zoom.unwrap_or(complex.bbox),
        left: MARGIN,
        top: MARGIN,
        width: f64::from(o.width) - 2.0 * MARGIN,
        height: f64::from(o.height) - 2.0 * MARGIN,
    }
}

fn open_plot(out: &mut String, view: &View, o: &DecompositionSvgOptions) {
    svg_open(out, o.width, o.height);
    if let Some(t) = &o.title {
        text(out, f64::from(o.width) / 2.0, 20.0, "middle", 14, t);
    }
    writeln!(
        out,
        "<defs><clipPath id=\"plot\"><rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\"/></clipPath></defs>",
        view.left, view.top, view.width, view.height
    )
    .unwrap();
}

fn close_plot(out: &mut String, view: &View) {
    writeln!(
        out,
        "<rect class=\"frame\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"{}\"/>",
        view.left,
        view.top,
        view.width,
        view.height,
        palette::FRAME
    )
    .unwrap();
    out.push_str("</svg>\n");
}

fn write_faces(out: &mut String, complex: &CellComplex2D, view: &View) {
    out.push_str("<g clip-path=\"url(#plot)\">\n");
    for f in 0..complex.faces.len() {
        let pts: Vec<String> = complex
            .face_polygon(f)
            .into_iter()
            .map(|p| {
                let (x, y) = view.px(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        writeln!(
            out,
            "<polygon class=\"face\" points=\"{}\" fill=\"{}\"/>",
            pts.join(" "),
            palette::FACES[f % palette::FACES.len()]
        )
        .unwrap();
    }
}

fn write_edges(out: &mut String, complex: &CellComplex2D, view: &View, color: &str, width: f64) {
    for e in &complex.edges {
        let (x1, y1) = view.px(complex.vertices[e.endpoints[0]].pos);
        let (x2, y2) = view.px(complex.vertices[e.endpoints[1]].pos);
        writeln!(
            out,
            "<line class=\"edge\" x1=\"{x1:.3}\" y1=\"{y1:.3}\" x2=\"{x2:.3}\" y2=\"{y2:.3}\" stroke=\"{color}\" stroke-width=\"{width}\"/>"
        )
        .unwrap();
    }
}

/// Faces, edges and vertices of a decomposition, clipped to the view window.
pub fn render_decomposition_svg(complex: &CellComplex2D, o: &DecompositionSvgOptions) -> String {
    let view = plot_view(complex, o);
    let mut out = String::new();
    open_plot(&mut out, &view, o);
    write_faces(&mut out, complex, &view);
    write_edges(&mut out, complex, &view, palette::EDGE, 1.0);
    if o.show_vertices {
        for v in &complex.vertices {
            let (x, y) = view.px(v.pos);
            writeln!(
                out,
                "<circle class=\"vertex\" cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"{}\" fill=\"{}\"/>",
                o.vertex_radius,
                palette::VERTEX
            )
            .unwrap();
        }
    }
    out.push_str("</g>\n");
    close_plot(&mut out, &view);
    out
}

/// One marker per dual-graph node at its face centroid, colored by predicted class.
pub fn render_partition_svg(
    complex: &CellComplex2D,
    report: &PartitionReport,
    o: &DecompositionSvgOptions,
) -> String {
    let view = plot_view(complex, o);
    let mut out = String::new();
    open_plot(&mut out, &view, o);
    write_faces(&mut out, complex, &view);
    write_edges(&mut out, complex, &view, palette::EDGE_FAINT, 0.6);
    for (f, &s) in report.signs.iter().enumerate().take(complex.faces.len()) {
        let (x, y) = view.px(complex.face_centroid(f));
        let class = usize::from(s > 0);
        writeln!(
            out,
            "<circle class=\"node class{class}\" cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"3\" fill=\"{}\"/>",
            palette::CLASS[class]
        )
        .unwrap();
    }
    out.push_str("</g>\n");
    close_plot(&mut out, &view);
    out
}

/// Ticks for a linear axis: (value, label) pairs.
fn ticks(lo: f64, hi: f64, n: usize) -> Vec<(f64, String)> {
    (0..=n)
        .map(|i| {
            let v = lo + (hi - lo) * i as f64 / n as f64;
            (v, format_tick(v))
        })
        .collect()
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Loss values mapped for plotting: log10 when all positive, else raw.
fn loss_axis(loss: &[f64]) -> (Vec<f64>, bool) {
    let finite: Vec<f64> = loss.iter().copied().filter(|v| v.is_finite()).collect();
    if !finite.is_empty() && finite.iter().all(|&v| v > 0.0) {
        (loss.iter().map(|v| v.log10()).collect(), true)
    } else {
        (loss.to_vec(), false)
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let (lo, hi) = v
        .iter()
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartOptions {
    pub width: u32,
    pub height: u32,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl ChartOptions {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            width: 760,
            height: 480,
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
        }
    }
}

const CHART_LEFT: f64 = 70.0;
const CHART_RIGHT: f64 = 80.0;
const CHART_TOP: f64 = 40.0;
const CHART_BOTTOM: f64 = 50.0;

struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn new(o: &ChartOptions) -> Self {
        Self {
            left: CHART_LEFT,
            top: CHART_TOP,
            width: f64::from(o.width) - CHART_LEFT - CHART_RIGHT,
            height: f64::from(o.height) - CHART_TOP - CHART_BOTTOM,
        }
    }

    fn x(&self, v: f64, lo: f64, hi: f64) -> f64 {
        self.left + (v - lo) / (hi - lo) * self.width
    }

    fn y(&self, v: f64, lo: f64, hi: f64) -> f64 {
        self.top + self.height - (v - lo) / (hi - lo) * self.height
    }
}

fn chart_axes(out: &mut String, f: &Frame, o: &ChartOptions, x: (f64, f64), y: (f64, f64)) {
    text(out, f64::from(o.width) / 2.0, 22.0, "middle", 14, &o.title);
    writeln!(
        out,
        "<rect class=\"frame\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"{}\"/>",
        f.left,
        f.top,
        f.width,
        f.height,
        palette::FRAME
    )
    .unwrap();
    for (v, label) in ticks(x.0, x.1, 5) {
        text(out, f.x(v, x.0, x.1), f.top + f.height + 16.0, "middle", 10, &label);
    }
    for (v, label) in ticks(y.0, y.1, 5) {
        text(out, f.left - 6.0, f.y(v, y.0, y.1) + 3.0, "end", 10, &label);
    }
    text(out, f.left + f.width / 2.0, f64::from(o.height) - 12.0, "middle", 12, &o.x_label);
    writeln!(
        out,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        f.top + f.height / 2.0,
        f.top + f.height / 2.0,
        escape(&o.y_label)
    )
    .unwrap();
}

fn polyline(out: &mut String, class: &str, pts: &[(f64, f64)], color: &str, width: f64) {
    let s: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
    writeln!(
        out,
        "<polyline class=\"{class}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"/>",
        s.join(" ")
    )
    .unwrap();
}

/// Loss on the right-hand axis over the frame's x range.
fn loss_overlay(out: &mut String, f: &Frame, xs: &[f64], x: (f64, f64), loss: &[f64]) {
    let (ys, log) = loss_axis(loss);
    let (lo, hi) = min_max(&ys);
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(&ys)
        .filter(|(_, y)| y.is_finite())
        .map(|(&a, &b)| (f.x(a, x.0, x.1), f.y(b, lo, hi)))
        .collect();
    polyline(out, "loss", &pts, palette::LOSS, 1.8);
    for (v, _) in ticks(lo, hi, 5) {
        let label = if log { format_tick(10f64.powf(v)) } else { format_tick(v) };
        text(out, f.left + f.width + 6.0, f.y(v, lo, hi) + 3.0, "start", 10, &label);
    }
    let title = if log { "loss (log scale)" } else { "loss" };
    let cy = f.top + f.height / 2.0;
    let cx = f.left + f.width + 62.0;
    writeln!(
        out,
        "<text x=\"{cx:.2}\" y=\"{cy:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{}\" transform=\"rotate(90 {cx:.2} {cy:.2})\">{title}</text>",
        palette::LOSS
    )
    .unwrap();
}

/// One column per epoch, one row per bin, color linear from 0 to the grid maximum,
/// with the loss drawn on a secondary axis.
pub fn render_heatmap_svg(grid: &HeatMapGrid, o: &ChartOptions) -> String {
    let f = Frame::new(o);
    let mut out = String::new();
    svg_open(&mut out, o.width, o.height);
    let n = grid.epochs.len().max(1);
    let vmax = grid.max_value();
    let cw = f.width / n as f64;
    let ch = f.height / grid.bins.max(1) as f64;
    out.push_str("<g class=\"cells\" shape-rendering=\"crispEdges\">\n");
    for (e, col) in grid.values.iter().enumerate() {
        for (k, &v) in col.iter().enumerate() {
            let c = if vmax > 0.0 { heat_color(v / vmax) } else { heat_color(0.0) };
            writeln!(
                out,
                "<rect class=\"cell\" x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{c}\"/>",
                f.left + e as f64 * cw,
                f.top + f.height - (k + 1) as f64 * ch,
                cw + 0.01,
                ch + 0.01
            )
            .unwrap();
        }
    }
    out.push_str("</g>\n");
    let xs: Vec<f64> = (0..grid.epochs.len()).map(|e| e as f64 + 0.5).collect();
    loss_overlay(&mut out, &f, &xs, (0.0, n as f64), &grid.loss);
    text(&mut out, f64::from(o.width) / 2.0, 22.0, "middle", 14, &o.title);
    writeln!(
        out,
        "<rect class=\"frame\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"{}\"/>",
        f.left,
        f.top,
        f.width,
        f.height,
        palette::FRAME
    )
    .unwrap();
    let step = n.div_ceil(8).max(1);
    for (e, epoch) in grid.epochs.iter().enumerate().step_by(step) {
        text(&mut out, f.left + (e as f64 + 0.5) * cw, f.top + f.height + 16.0, "middle", 10, &epoch.to_string());
    }
    for (v, label) in ticks(0.0, 1.0, 5) {
        text(&mut out, f.left - 6.0, f.y(v, 0.0, 1.0) + 3.0, "end", 10, &label);
    }
    text(&mut out, f.left + f.width / 2.0, f64::from(o.height) - 12.0, "middle", 12, &o.x_label);
    writeln!(
        out,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        f.top + f.height / 2.0,
        f.top + f.height / 2.0,
        escape(&o.y_label)
    )
    .unwrap();
    writeln!(out, "<!-- color scale 0 to {vmax} -->").unwrap();
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart of several series, with an optional loss series on a secondary axis.
pub fn render_curves_svg(series: &[Series], loss: Option<&Series>, o: &ChartOptions) -> String {
    let f = Frame::new(o);
    let mut out = String::new();
    svg_open(&mut out, o.width, o.height);
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .chain(loss.into_iter().flat_map(|s| s.points.iter().map(|p| p.0)))
        .collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let x = min_max(&xs);
    let (ylo, yhi) = min_max(&ys);
    let y = (ylo.min(0.0), yhi);
    chart_axes(&mut out, &f, o, x, y);
    for (i, s) in series.iter().enumerate() {
        let color = palette::SERIES[i % palette::SERIES.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .map(|&(a, b)| (f.x(a, x.0, x.1), f.y(b, y.0, y.1)))
            .collect();
        polyline(&mut out, "series", &pts, color, 1.4);
        let ly = f.top + 14.0 + 14.0 * i as f64;
        writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            f.left + 8.0,
            ly - 4.0,
            f.left + 24.0,
            ly - 4.0
        )
        .unwrap();
        text(&mut out, f.left + 28.0, ly, "start", 11, &s.name);
    }
    if let Some(l) = loss {
        let lx: Vec<f64> = l.points.iter().map(|p| p.0).collect();
        let lv: Vec<f64> = l.points.iter().map(|p| p.1).collect();
        loss_overlay(&mut out, &f, &lx, x, &lv);
    }
    out.push_str("</svg>\n");
    out
}

/// One row of the Fiedler partition summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub dataset: String,
    pub architecture: String,
    pub train_loss: f64,
    pub test_loss: f64,
    pub unweighted_misclass_pct: f64,
    pub unweighted_l2: f64,
    pub weighted_misclass_pct: f64,
    pub weighted_l2: f64,
    pub seed: u64,
}

pub const SUMMARY_GROUP_HEADER: &str = ",,Loss,,Unweighted,,Weighted,";
pub const SUMMARY_HEADER: &str =
    "Dataset,Architecture,Train,Test,Missclass. (%),L2 Error,Missclass. (%),L2 Error";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Two header rows (column groups, then column names) and one row per summary.
pub fn summary_table(rows: &[ExperimentSummary]) -> String {
    let mut out = format!("{SUMMARY_GROUP_HEADER}\n{SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:.5},{:.5},{:.2},{:.2},{:.2},{:.2}",
            csv_field(&r.dataset),
            csv_field(&r.architecture),
            r.train_loss,
            r.test_loss,
            r.unweighted_misclass_pct,
            r.unweighted_l2,
            r.weighted_misclass_pct,
            r.weighted_l2
        )
        .unwrap();
    }
    out
}
