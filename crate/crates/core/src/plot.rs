//! Deterministic SVG figures: line charts with optional log axes, the
//! two-panel loss / `∫√L` layout, error-vs-width scatter with a fitted line,
//! and the density / `L_t` / `R_t` triptych.

use std::fmt::Write as _;

use crate::diagnostics::{cumulative_sqrt_loss, LossCurve, ScalingFit};
use crate::error::{Error, Result};
use crate::euler::DensityField;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 280.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 48.0;
const LEGEND_H: f64 = 18.0;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { label: label.into(), x, y }
    }

    pub fn from_curve(label: impl Into<String>, curve: &LossCurve) -> Self {
        Self::new(label, curve.times.clone(), curve.values.clone())
    }

    /// `t ↦ ∫_0^t √L`.
    pub fn sqrt_integral(label: impl Into<String>, curve: &LossCurve) -> Self {
        Self::new(label, curve.times.clone(), cumulative_sqrt_loss(curve))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

impl Axes {
    pub fn new(title: &str, x_label: &str, y_label: &str, log_x: bool, log_y: bool) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), log_x, log_y }
    }
}

/// Extra marks drawn on top of a panel's series.
#[derive(Debug, Clone, PartialEq)]
pub enum Overlay {
    /// Scatter points with optional symmetric error bars.
    Points { x: Vec<f64>, y: Vec<f64>, err: Vec<f64> },
    /// Annotation in the upper right corner.
    Note(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub axes: Axes,
    pub series: Vec<Series>,
    pub overlays: Vec<Overlay>,
}

impl Panel {
    pub fn new(axes: Axes, series: Vec<Series>) -> Self {
        Self { axes, series, overlays: Vec::new() }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.0e}")
    }
}

struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Scale {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Option<Scale> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return None;
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil().max(lo + 1.0);
        } else if hi - lo < 1e-300 {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
            lo -= pad;
            hi += pad;
        } else {
            let step = nice_step((hi - lo) / 5.0);
            lo = (lo / step).floor() * step;
            hi = (hi / step).ceil() * step;
        }
        Some(Scale { lo, hi, log })
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let span = (self.hi - self.lo) as usize;
            let stride = span.div_ceil(6).max(1);
            (0..=span).step_by(stride).map(|k| 10f64.powf(self.lo + k as f64)).collect()
        } else {
            let step = nice_step((self.hi - self.lo) / 5.0);
            let k0 = (self.lo / step).ceil() as i64;
            let k1 = (self.hi / step + 1e-9).floor() as i64;
            (k0..=k1).map(|k| k as f64 * step).collect()
        }
    }
}

fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn usable(v: f64, log: bool) -> bool {
    v.is_finite() && (!log || v > 0.0)
}

fn draw_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) -> Result<()> {
    let ax = &panel.axes;
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut pts = |x: &[f64], y: &[f64]| {
        for (&a, &b) in x.iter().zip(y) {
            if usable(a, ax.log_x) && usable(b, ax.log_y) {
                xs.push(a);
                ys.push(b);
            }
        }
    };
    for s in &panel.series {
        pts(&s.x, &s.y);
    }
    for o in &panel.overlays {
        if let Overlay::Points { x, y, .. } = o {
            pts(x, y);
        }
    }
    let empty = || Error::InsufficientData(format!("panel '{}' has no plottable points", ax.title));
    let sx = Scale::fit(xs.into_iter(), ax.log_x).ok_or_else(empty)?;
    let sy = Scale::fit(ys.into_iter(), ax.log_y).ok_or_else(empty)?;

    let (x0, y0) = (ox + MARGIN_L, oy + MARGIN_T);
    let (w, h) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let px = |v: f64| x0 + sx.unit(v) * w;
    let py = |v: f64| y0 + (1.0 - sy.unit(v)) * h;

    writeln!(out, r#"<g class="panel">"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
        num(x0 + w / 2.0),
        num(oy + 18.0),
        esc(&ax.title)
    )
    .unwrap();
    writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#000"/>"##,
        num(x0),
        num(y0),
        num(w),
        num(h)
    )
    .unwrap();
    for t in sx.ticks() {
        let x = px(t);
        writeln!(out, r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#000"/>"##, num(x), num(y0 + h), num(y0 + h + 4.0)).unwrap();
        writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#, num(x), num(y0 + h + 16.0), tick_label(t)).unwrap();
    }
    for t in sy.ticks() {
        let y = py(t);
        writeln!(out, r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#000"/>"##, num(x0 - 4.0), num(y), num(x0)).unwrap();
        writeln!(out, r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#, num(x0 - 6.0), num(y + 3.0), tick_label(t)).unwrap();
    }
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
        num(x0 + w / 2.0),
        num(y0 + h + 34.0),
        esc(&ax.x_label)
    )
    .unwrap();
    let (lx, ly) = (ox + 14.0, y0 + h / 2.0);
    writeln!(
        out,
        r#"<text x="{0}" y="{1}" text-anchor="middle" font-size="11" transform="rotate(-90 {0} {1})">{2}</text>"#,
        num(lx),
        num(ly),
        esc(&ax.y_label)
    )
    .unwrap();

    for (k, s) in panel.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        for (&a, &b) in s.x.iter().zip(&s.y) {
            if usable(a, ax.log_x) && usable(b, ax.log_y) {
                let cmd = if d.is_empty() { 'M' } else { 'L' };
                write!(d, "{cmd}{},{} ", num(px(a)), num(py(b))).unwrap();
            }
        }
        if !d.is_empty() {
            writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end()).unwrap();
        }
        let ly = y0 + 6.0 + LEGEND_H * k as f64;
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
            num(x0 + 8.0),
            num(ly + 8.0),
            esc(&s.label)
        )
        .unwrap();
    }
    for o in &panel.overlays {
        match o {
            Overlay::Points { x, y, err } => {
                for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
                    if !(usable(a, ax.log_x) && usable(b, ax.log_y)) {
                        continue;
                    }
                    if let Some(&e) = err.get(i) {
                        let (lo, hi) = (b - e, b + e);
                        if e > 0.0 && usable(lo, ax.log_y) {
                            writeln!(
                                out,
                                r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#444"/>"##,
                                num(px(a)),
                                num(py(lo)),
                                num(py(hi))
                            )
                            .unwrap();
                        }
                    }
                    writeln!(out, r##"<circle cx="{}" cy="{}" r="3" fill="#000"/>"##, num(px(a)), num(py(b))).unwrap();
                }
            }
            Overlay::Note(text) => {
                writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="end" font-size="11">{}</text>"#,
                    num(x0 + w - 6.0),
                    num(y0 + 14.0),
                    esc(text)
                )
                .unwrap();
            }
        }
    }
    writeln!(out, "</g>").unwrap();
    Ok(())
}

fn document(width: f64, height: f64, meta: &[(&str, &str)], body: &str) -> String {
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{1}" viewBox="0 0 {0} {1}" font-family="sans-serif">"#,
        num(width),
        num(height)
    )
    .unwrap();
    for (k, v) in meta {
        // "--" is not allowed inside XML comments
        writeln!(out, "<!-- {}={} -->", k.replace("--", "- -"), v.replace("--", "- -")).unwrap();
    }
    writeln!(out, r##"<rect width="100%" height="100%" fill="#fff"/>"##).unwrap();
    out.push_str(body);
    out.push_str("</svg>\n");
    out
}

/// Panels laid out left to right in one document.
pub fn panels_svg(panels: &[Panel], meta: &[(&str, &str)]) -> Result<String> {
    if panels.is_empty() || panels.iter().all(|p| p.series.is_empty() && p.overlays.is_empty()) {
        return Err(Error::InsufficientData("no curves to plot".into()));
    }
    let mut body = String::new();
    for (k, p) in panels.iter().enumerate() {
        draw_panel(&mut body, p, k as f64 * PANEL_W, 0.0)?;
    }
    Ok(document(PANEL_W * panels.len() as f64, PANEL_H, meta, &body))
}

pub fn line_chart(axes: Axes, series: Vec<Series>, meta: &[(&str, &str)]) -> Result<String> {
    panels_svg(&[Panel::new(axes, series)], meta)
}

/// Loss on log-log axes.
pub fn loss_plot(curves: &[(String, LossCurve)], meta: &[(&str, &str)]) -> Result<String> {
    let series = curves.iter().map(|(l, c)| Series::from_curve(l.clone(), c)).collect();
    line_chart(Axes::new("excess loss", "t", "L_t", true, true), series, meta)
}

/// `R_t = ∫_0^t √L` on linear axes.
pub fn r_plot(curves: &[(String, LossCurve)], meta: &[(&str, &str)]) -> Result<String> {
    let series = curves.iter().map(|(l, c)| Series::sqrt_integral(l.clone(), c)).collect();
    line_chart(Axes::new("cumulative sqrt loss", "t", "R_t", false, false), series, meta)
}

/// Loss (log-log) beside `∫√L` (log t), one path per curve in each panel.
pub fn loss_and_integral(curves: &[(String, LossCurve)], meta: &[(&str, &str)]) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::InsufficientData("no curves to plot".into()));
    }
    let left = curves.iter().map(|(l, c)| Series::from_curve(l.clone(), c)).collect();
    let right = curves.iter().map(|(l, c)| Series::sqrt_integral(l.clone(), c)).collect();
    panels_svg(
        &[
            Panel::new(Axes::new("loss", "t", "L_t", true, true), left),
            Panel::new(Axes::new("integrated sqrt loss", "t", "R_t", true, false), right),
        ],
        meta,
    )
}

/// Seed-averaged error against width with the fitted power law.
pub fn scaling_plot(
    title: &str,
    y_label: &str,
    widths: &[f64],
    means: &[f64],
    stderr: &[f64],
    fit: &ScalingFit,
    meta: &[(&str, &str)],
) -> Result<String> {
    if widths.is_empty() {
        return Err(Error::InsufficientData("no points to plot".into()));
    }
    let (lo, hi) = widths.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &w| (a.min(w), b.max(w)));
    let line = |x: f64| (fit.intercept + fit.slope * x.ln()).exp();
    let fitted = Series::new(format!("fit: slope {:.3}", fit.slope), vec![lo, hi], vec![line(lo), line(hi)]);
    let mut panel = Panel::new(Axes::new(title, "m", y_label, true, true), vec![fitted]);
    panel.overlays.push(Overlay::Points { x: widths.to_vec(), y: means.to_vec(), err: stderr.to_vec() });
    panel.overlays.push(Overlay::Note(format!(
        "slope = {:.3} ± {:.3}, r² = {:.3}",
        fit.slope, fit.slope_stderr, fit.r2
    )));
    panels_svg(&[panel], meta)
}

fn ramp(u: f64) -> String {
    // dark blue → teal → yellow
    const STOPS: [(f64, [f64; 3]); 4] =
        [(0.0, [68.0, 1.0, 84.0]), (0.33, [49.0, 104.0, 142.0]), (0.66, [53.0, 183.0, 121.0]), (1.0, [253.0, 231.0, 37.0])];
    let u = if u.is_finite() { u.clamp(0.0, 1.0) } else { 0.0 };
    let k = STOPS.iter().position(|s| s.0 >= u).unwrap_or(3).max(1);
    let (a, b) = (STOPS[k - 1], STOPS[k]);
    let f = (u - a.0) / (b.0 - a.0);
    let c: Vec<u8> = (0..3).map(|i| (a.1[i] + f * (b.1[i] - a.1[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn draw_heatmap(out: &mut String, title: &str, values: &[f64], n_lat: usize, n_lon: usize, ox: f64) {
    let (x0, y0) = (ox + MARGIN_L, MARGIN_T);
    let (w, h) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let (cw, ch) = (w / n_lon as f64, h / n_lat as f64);
    writeln!(out, r#"<g class="heatmap">"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        num(x0 + w / 2.0),
        esc(title)
    )
    .unwrap();
    for i in 0..n_lat {
        for j in 0..n_lon {
            let v = values[i * n_lon + j];
            let u = if max > 0.0 { v / max } else { 0.0 };
            writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                num(x0 + j as f64 * cw),
                num(y0 + i as f64 * ch),
                num(cw + 0.05),
                num(ch + 0.05),
                ramp(u)
            )
            .unwrap();
        }
    }
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">longitude</text>"#, num(x0 + w / 2.0), num(y0 + h + 20.0)).unwrap();
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="end" font-size="10">max {}</text>"#, num(x0 + w), num(y0 + h + 34.0), tick_label(max)).unwrap();
    writeln!(out, "</g>").unwrap();
}

/// Equirectangular density heatmap (north pole at the top).
pub fn heatmap(title: &str, densities: &[f64], n_lat: usize, n_lon: usize, meta: &[(&str, &str)]) -> Result<String> {
    if densities.is_empty() || densities.len() != n_lat * n_lon {
        return Err(Error::InsufficientData("density field is empty or has the wrong size".into()));
    }
    let mut body = String::new();
    draw_heatmap(&mut body, title, densities, n_lat, n_lon, 0.0);
    Ok(document(PANEL_W, PANEL_H, meta, &body))
}

/// Density heatmap, `L_t` (log-log) and `R_t`, side by side.
pub fn triptych(
    field: &DensityField,
    densities: &[f64],
    curve: &LossCurve,
    r_curve: &[f64],
    meta: &[(&str, &str)],
) -> Result<String> {
    if curve.is_empty() || densities.len() != field.masses.len() || r_curve.len() != curve.len() {
        return Err(Error::InsufficientData("triptych needs a density field and a nonempty curve".into()));
    }
    let mut body = String::new();
    draw_heatmap(&mut body, "final density", densities, field.n_lat, field.n_lon, 0.0);
    draw_panel(
        &mut body,
        &Panel::new(Axes::new("loss", "t", "L_t", true, true), vec![Series::from_curve("L", curve)]),
        PANEL_W,
        0.0,
    )?;
    draw_panel(
        &mut body,
        &Panel::new(
            Axes::new("integrated sqrt loss", "t", "R_t", false, false),
            vec![Series::new("R", curve.times.clone(), r_curve.to_vec())],
        ),
        2.0 * PANEL_W,
        0.0,
    )?;
    Ok(document(3.0 * PANEL_W, PANEL_H, meta, &body))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(p: f64) -> LossCurve {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.5).collect();
        let v = t.iter().map(|t| (1.0 + t).powf(-p)).collect();
        LossCurve::new(t, v).unwrap()
    }

    #[test]
    fn deterministic_and_escaped() {
        let c = vec![("a<b".to_string(), curve(1.0))];
        let a = loss_plot(&c, &[("config_hash", "abc")]).unwrap();
        let b = loss_plot(&c, &[("config_hash", "abc")]).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("a&lt;b"));
        assert!(a.contains("<!-- config_hash=abc -->"));
        assert_eq!(a.matches("<path").count(), 1);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(loss_plot(&[], &[]), Err(Error::InsufficientData(_))));
        assert!(loss_and_integral(&[], &[]).is_err());
        // nothing positive on a log axis
        let zero = LossCurve::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(loss_plot(&[("z".into(), zero)], &[]).is_err());
    }

    #[test]
    fn ticks_cover_range() {
        let s = Scale::fit([0.013, 42.0].into_iter(), true).unwrap();
        assert_eq!((s.lo, s.hi), (-2.0, 2.0));
        assert_eq!(s.ticks().len(), 5);
        let s = Scale::fit([0.0, 0.93].into_iter(), false).unwrap();
        assert_eq!((s.lo, s.hi), (0.0, 1.0));
        assert_eq!(tick_label(0.2), "0.2");
        assert_eq!(tick_label(1e-5), "1e-5");
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#440154");
        assert_eq!(ramp(1.0), "#fde725");
        assert_eq!(ramp(f64::NAN), "#440154");
    }
}
