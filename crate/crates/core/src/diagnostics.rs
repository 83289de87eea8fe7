//! Loss-curve integrals, fluctuation norms, PoC errors and power-law fits.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::DataSample;
use crate::dynamics::CoupledSnapshot;
use crate::error::{Error, Result};
use crate::kernel::weighted_sq_error;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub config_hash: String,
    pub seed: u64,
}

/// Excess loss sampled on a time grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub meta: CurveMeta,
}

impl LossCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let c = Self { times, values, meta: CurveMeta::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn with_meta(mut self, config_hash: impl Into<String>, seed: u64) -> Self {
        self.meta = CurveMeta { config_hash: config_hash.into(), seed };
        self
    }

    pub fn push(&mut self, t: f64, value: f64) {
        self.times.push(t);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_max(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::DimensionMismatch { expected: self.times.len(), got: self.values.len() });
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("loss curve times must be strictly increasing".into()));
        }
        // Tiny negative excess losses from cancellation are clamped by callers.
        if self.values.iter().any(|v| !v.is_finite() || *v < -1e-12) {
            return Err(Error::InvalidConfig("loss curve values must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Largest single-step increase relative to `L_0`.
    pub fn max_relative_increase(&self) -> f64 {
        let l0 = self.values.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
        self.values.windows(2).map(|w| (w[1] - w[0]) / l0).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every `stride`-th point plus the last one.
    pub fn thinned(&self, stride: usize) -> LossCurve {
        let stride = stride.max(1);
        let n = self.len();
        let keep: Vec<usize> = (0..n).filter(|i| i % stride == 0 || *i + 1 == n).collect();
        LossCurve {
            times: keep.iter().map(|&i| self.times[i]).collect(),
            values: keep.iter().map(|&i| self.values[i]).collect(),
            meta: self.meta.clone(),
        }
    }
}

fn sqrt_loss(v: f64) -> f64 {
    v.max(0.0).sqrt()
}

/// `R_t` at every grid point: cumulative trapezoid of `sqrt(L)`.
pub fn cumulative_sqrt_loss(curve: &LossCurve) -> Vec<f64> {
    let mut out = Vec::with_capacity(curve.len());
    let mut acc = 0.0;
    for i in 0..curve.len() {
        if i > 0 {
            let h = curve.times[i] - curve.times[i - 1];
            acc += 0.5 * h * (sqrt_loss(curve.values[i]) + sqrt_loss(curve.values[i - 1]));
        }
        out.push(acc);
    }
    out
}

/// Integrates `g(s) sqrt(L_s)` by trapezoid over `[t0, t]`, with linear
/// interpolation of the integrand at `t`. Times past the end are clamped.
fn trapezoid_weighted(curve: &LossCurve, t: f64, g: impl Fn(f64) -> f64) -> f64 {
    if curve.len() < 2 {
        return 0.0;
    }
    let t = t.min(curve.t_max());
    let mut acc = 0.0;
    for i in 1..curve.len() {
        let (t0, t1) = (curve.times[i - 1], curve.times[i]);
        if t0 >= t {
            break;
        }
        let y0 = g(t0) * sqrt_loss(curve.values[i - 1]);
        let y1full = g(t1) * sqrt_loss(curve.values[i]);
        if t1 <= t {
            acc += 0.5 * (t1 - t0) * (y0 + y1full);
        } else {
            let s = (t - t0) / (t1 - t0);
            let lt = curve.values[i - 1] + s * (curve.values[i] - curve.values[i - 1]);
            acc += 0.5 * (t - t0) * (y0 + g(t) * sqrt_loss(lt));
        }
    }
    acc
}

/// `R_t = ∫_0^t sqrt(L_s) ds`.
pub fn sqrt_loss_integral(curve: &LossCurve, t: f64) -> f64 {
    trapezoid_weighted(curve, t, |_| 1.0)
}

/// `S̃(t) = 1 + min(t, ∫ min(t, s) sqrt(L_s) ds)`, integral over the full curve.
pub fn s_tilde(curve: &LossCurve, t: f64) -> f64 {
    1.0 + t.min(trapezoid_weighted(curve, f64::INFINITY, |s| s.min(t)))
}

/// `S' = ∫ s² sqrt(L_s) ds` over the full curve.
pub fn s_prime(curve: &LossCurve) -> f64 {
    trapezoid_weighted(curve, f64::INFINITY, |s| s * s)
}

/// `S = 1 + ∫ sqrt(L_s) ds` over the full curve.
pub fn s_total(curve: &LossCurve) -> f64 {
    1.0 + sqrt_loss_integral(curve, f64::INFINITY)
}

/// `(E_i ‖Δ(i)‖^p)^{1/p}` for p = 2, 4 and the sup over rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaNorms {
    pub l2: f64,
    pub l4: f64,
    pub linf: f64,
}

pub fn delta_norms_raw(delta: &[f64], d: usize) -> DeltaNorms {
    let m = delta.len() / d.max(1);
    if m == 0 {
        return DeltaNorms { l2: 0.0, l4: 0.0, linf: 0.0 };
    }
    let (mut s2, mut s4, mut sup) = (0.0, 0.0, 0.0f64);
    for row in delta.chunks_exact(d) {
        let r2: f64 = row.iter().map(|x| x * x).sum();
        s2 += r2;
        s4 += r2 * r2;
        sup = sup.max(r2.sqrt());
    }
    let m = m as f64;
    DeltaNorms { l2: (s2 / m).sqrt(), l4: (s4 / m).sqrt().sqrt(), linf: sup }
}

pub fn delta_norms(snap: &CoupledSnapshot) -> DeltaNorms {
    delta_norms_raw(&snap.delta, snap.d())
}

/// `‖m_ρ̂ − m_ρref‖²` and its split through the coupled measure ρ̄.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PocError {
    pub total: f64,
    /// `‖m_ρ̄ − m_ρ̂‖²`.
    pub coupling: f64,
    /// `‖m_ρ̄ − m_ρref‖²`.
    pub monte_carlo: f64,
}

/// RKHS distances via their L² form on the data (the two coincide for the
/// network kernel), given network outputs of the finite system, the first-m
/// reference rows, and the full reference ensemble.
pub fn poc_error_from_outputs(data: &DataSample, f_hat: &[f64], f_bar: &[f64], f_ref: &[f64]) -> PocError {
    PocError {
        total: weighted_sq_error(data, f_hat, f_ref),
        coupling: weighted_sq_error(data, f_bar, f_hat),
        monte_carlo: weighted_sq_error(data, f_bar, f_ref),
    }
}

/// Fitted constants of `total ≤ 2 ΔᵀHΔ + c_mc log(m(1+t))/m + c_4 ‖Δ‖₄⁴`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub c_mc: f64,
    pub c_4: f64,
    /// Index where the held-out window starts.
    pub fit_end: usize,
    /// Largest `total / bound` on the held-out window.
    pub max_ratio: f64,
    pub holds: bool,
}

/// One point per snapshot: `(t, total, ΔᵀHΔ, ‖Δ‖₄)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificatePoint {
    pub t: f64,
    pub total: f64,
    pub h_quad: f64,
    pub delta_l4: f64,
}

/// Fits the two constants by nonnegative least squares on `t ≤ fit_until`,
/// inflates them until the early window is covered, and checks the rest.
pub fn certificate_check(points: &[CertificatePoint], m: usize, fit_until: f64) -> Result<CertificateCheck> {
    let fit_end = points.iter().position(|p| p.t > fit_until).unwrap_or(points.len());
    if fit_end < 2 || fit_end == points.len() {
        return Err(Error::InsufficientData("certificate check needs points on both sides of the fit window".into()));
    }
    let m_f = m as f64;
    let feat = |p: &CertificatePoint| [(m_f * (1.0 + p.t)).ln() / m_f, p.delta_l4.powi(4)];
    let target = |p: &CertificatePoint| (p.total - 2.0 * p.h_quad).max(0.0);

    let early = &points[..fit_end];
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in early {
        let [x1, x2] = feat(p);
        let y = target(p);
        a11 += x1 * x1;
        a12 += x1 * x2;
        a22 += x2 * x2;
        b1 += x1 * y;
        b2 += x2 * y;
    }
    let sse = |c: [f64; 2]| -> f64 {
        early.iter().map(|p| {
            let [x1, x2] = feat(p);
            (target(p) - c[0] * x1 - c[1] * x2).powi(2)
        }).sum()
    };
    let mut candidates = vec![[0.0, 0.0]];
    if a11 > 0.0 {
        candidates.push([(b1 / a11).max(0.0), 0.0]);
    }
    if a22 > 0.0 {
        candidates.push([0.0, (b2 / a22).max(0.0)]);
    }
    let det = a11 * a22 - a12 * a12;
    if det > 0.0 {
        let c = [(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det];
        if c[0] >= 0.0 && c[1] >= 0.0 {
            candidates.push(c);
        }
    }
    let mut c = candidates
        .into_iter()
        .min_by(|x, y| sse(*x).total_cmp(&sse(*y)))
        .unwrap_or([0.0, 0.0]);
    if c == [0.0, 0.0] {
        c = [1.0, 0.0];
    }
    let bound = |c: [f64; 2], p: &CertificatePoint| {
        let [x1, x2] = feat(p);
        2.0 * p.h_quad + c[0] * x1 + c[1] * x2
    };
    // Inflate the excess terms until every early point is covered.
    let inflate = early
        .iter()
        .map(|p| {
            let [x1, x2] = feat(p);
            let excess = c[0] * x1 + c[1] * x2;
            if excess > 0.0 { target(p) / excess } else { 0.0 }
        })
        .fold(1.0f64, f64::max);
    let c = [c[0] * inflate, c[1] * inflate];
    let max_ratio = points[fit_end..]
        .iter()
        .map(|p| p.total / bound(c, p).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(CertificateCheck { c_mc: c[0], c_4: c[1], fit_end, max_ratio, holds: max_ratio <= 1.0 })
}

/// Least-squares line through `(log_x, log_y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub log_x: Vec<f64>,
    pub log_y: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_stderr: f64,
    /// Half-open index range of the points used.
    pub window: (usize, usize),
    /// Standard error of each seed-averaged point (empty if not applicable).
    #[serde(default)]
    pub point_stderr: Vec<f64>,
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default)]
    pub super_polynomial: bool,
}

struct Line {
    slope: f64,
    intercept: f64,
    r2: f64,
    slope_stderr: f64,
}

fn line_fit(x: &[f64], y: &[f64]) -> Line {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    let slope_stderr = if x.len() > 2 && sxx > 0.0 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Line { slope, intercept, r2, slope_stderr }
}

/// Plain power-law fit `y ∝ x^slope`; requires positive inputs.
pub fn power_law_fit(x: &[f64], y: &[f64]) -> Result<ScalingFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("need at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::DomainError("power-law fit needs positive finite values".into()));
    }
    let log_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let log_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let l = line_fit(&log_x, &log_y);
    Ok(ScalingFit {
        window: (0, log_x.len()),
        log_x,
        log_y,
        slope: l.slope,
        intercept: l.intercept,
        r2: l.r2,
        slope_stderr: l.slope_stderr,
        point_stderr: Vec::new(),
        burn_in: 0.0,
        super_polynomial: false,
    })
}

/// Minimum points after burn-in for a decay fit.
pub const MIN_DECAY_POINTS: usize = 8;

/// Fits `log L ≈ c0 + slope·log(t + 1 − B)` on `t ≥ B`, choosing `B` from the
/// integer grid `{0, 1, …, burn_in_fraction·T}` by best r². Flags
/// super-polynomial decay when the late half of the window is more than 25%
/// steeper than the early half.
pub fn decay_exponent_fit(curve: &LossCurve, burn_in_fraction: f64) -> Result<ScalingFit> {
    let pts: Vec<(f64, f64)> = curve
        .times
        .iter()
        .zip(&curve.values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, *v))
        .collect();
    let b_max = (burn_in_fraction.max(0.0) * curve.t_max()).floor() as usize;
    let mut best: Option<(f64, usize, Line, Vec<f64>, Vec<f64>)> = None;
    for b in 0..=b_max {
        let b = b as f64;
        let start = pts.partition_point(|(t, _)| *t < b);
        if pts.len() - start < MIN_DECAY_POINTS {
            continue;
        }
        let lx: Vec<f64> = pts[start..].iter().map(|(t, _)| (t + 1.0 - b).ln()).collect();
        let ly: Vec<f64> = pts[start..].iter().map(|(_, v)| v.ln()).collect();
        let l = line_fit(&lx, &ly);
        if best.as_ref().is_none_or(|bst| l.r2 > bst.2.r2) {
            best = Some((b, start, l, lx, ly));
        }
    }
    let (burn_in, start, l, log_x, log_y) =
        best.ok_or_else(|| Error::InsufficientData(format!("need at least {MIN_DECAY_POINTS} positive points after burn-in")))?;
    let mid = 0.5 * (log_x[0] + log_x[log_x.len() - 1]);
    let split = log_x.partition_point(|v| *v < mid);
    let super_polynomial = if split >= 3 && log_x.len() - split >= 3 {
        let early = line_fit(&log_x[..split], &log_y[..split]).slope;
        let late = line_fit(&log_x[split..], &log_y[split..]).slope;
        early < 0.0 && late < 1.25 * early
    } else {
        false
    };
    Ok(ScalingFit {
        window: (start, start + log_x.len()),
        log_x,
        log_y,
        slope: l.slope,
        intercept: l.intercept,
        r2: l.r2,
        slope_stderr: l.slope_stderr,
        point_stderr: Vec::new(),
        burn_in,
        super_polynomial,
    })
}

pub const MIN_WIDTHS: usize = 4;
pub const MIN_SEEDS: usize = 5;

/// Seed-averages errors per width, then fits `log(mean error)` vs. `log m`.
pub fn poc_scaling_fit(errors_by_m: &[(usize, Vec<f64>)]) -> Result<ScalingFit> {
    if errors_by_m.len() < MIN_WIDTHS {
        return Err(Error::InsufficientData(format!("need at least {MIN_WIDTHS} widths")));
    }
    if errors_by_m.iter().any(|(_, e)| e.len() < MIN_SEEDS) {
        return Err(Error::InsufficientData(format!("need at least {MIN_SEEDS} seeds per width")));
    }
    let xs: Vec<f64> = errors_by_m.iter().map(|(m, _)| *m as f64).collect();
    let (means, ses): (Vec<f64>, Vec<f64>) = errors_by_m.iter().map(|(_, e)| mean_and_stderr(e)).unzip();
    let mut fit = power_law_fit(&xs, &means)?;
    fit.point_stderr = ses;
    Ok(fit)
}

pub fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One row of `curves.csv`; diagnostics that were not computed are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub t: f64,
    pub loss: f64,
    pub sqrt_loss_int: f64,
    pub delta_l2: f64,
    pub delta_linf: f64,
    pub delta_l4: f64,
    pub h_quad: f64,
    pub poc_total: f64,
    pub poc_coupling: f64,
    pub poc_mc: f64,
}

impl CurveRow {
    pub fn loss_only(t: f64, loss: f64, sqrt_loss_int: f64) -> Self {
        let nan = f64::NAN;
        Self {
            t,
            loss,
            sqrt_loss_int,
            delta_l2: nan,
            delta_linf: nan,
            delta_l4: nan,
            h_quad: nan,
            poc_total: nan,
            poc_coupling: nan,
            poc_mc: nan,
        }
    }

    fn fields(&self) -> [f64; 10] {
        [
            self.t,
            self.loss,
            self.sqrt_loss_int,
            self.delta_l2,
            self.delta_linf,
            self.delta_l4,
            self.h_quad,
            self.poc_total,
            self.poc_coupling,
            self.poc_mc,
        ]
    }
}

pub const CSV_HEADER: &str = "t,L,sqrtL_int,delta_l2,delta_linf,delta_l4,h_quad,poc_total,poc_coupling,poc_mc";

/// Writes rows preceded by `# key=value` provenance comments.
pub fn write_curves_csv<W: Write>(mut out: W, provenance: &[(&str, &str)], rows: &[CurveRow]) -> Result<()> {
    for (k, v) in provenance {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        let cells: Vec<String> = r.fields().iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Parsed `curves.csv`: provenance comments and rows.
#[derive(Debug, Clone, Default)]
pub struct CurvesFile {
    pub provenance: Vec<(String, String)>,
    pub rows: Vec<CurveRow>,
}

impl CurvesFile {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.provenance.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn loss_curve(&self) -> Result<LossCurve> {
        LossCurve::new(self.rows.iter().map(|r| r.t).collect(), self.rows.iter().map(|r| r.loss.max(0.0)).collect())
    }
}

pub fn read_curves_csv<R: BufRead>(input: R) -> Result<CurvesFile> {
    let mut file = CurvesFile::default();
    let mut seen_header = false;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                file.provenance.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        if !seen_header {
            if line != CSV_HEADER {
                return Err(Error::Format(format!("line {}: unexpected CSV header", lineno + 1)));
            }
            seen_header = true;
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != 10 {
            return Err(Error::Format(format!("line {}: expected 10 columns, got {}", lineno + 1, vals.len())));
        }
        file.rows.push(CurveRow {
            t: vals[0],
            loss: vals[1],
            sqrt_loss_int: vals[2],
            delta_l2: vals[3],
            delta_linf: vals[4],
            delta_l4: vals[5],
            h_quad: vals[6],
            poc_total: vals[7],
            poc_coupling: vals[8],
            poc_mc: vals[9],
        });
    }
    if !seen_header {
        return Err(Error::Format("missing CSV header".into()));
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_curve(t_max: f64, n: usize, f: impl Fn(f64) -> f64) -> LossCurve {
        let times: Vec<f64> = (0..=n).map(|i| t_max * i as f64 / n as f64).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        LossCurve::new(times, values).unwrap()
    }

    #[test]
    fn zero_loss_integrals() {
        let c = grid_curve(10.0, 100, |_| 0.0);
        assert_eq!(sqrt_loss_integral(&c, 10.0), 0.0);
        assert_eq!(s_tilde(&c, 5.0), 1.0);
        assert_eq!(s_prime(&c), 0.0);
    }

    #[test]
    fn power_law_integral_converges_to_one() {
        let c = grid_curve(2000.0, 200_000, |s| (1.0 + s).powi(-4));
        let r = sqrt_loss_integral(&c, 2000.0);
        assert!((r - 1.0).abs() < 1e-3, "{r}");
        // interpolated endpoint
        let half = sqrt_loss_integral(&c, 0.50005);
        assert!((half - (1.0 - 1.0 / 1.50005)).abs() < 1e-4);
        assert_eq!(cumulative_sqrt_loss(&c).last().copied().unwrap(), r);
    }

    #[test]
    fn s_prime_closed_form() {
        // ∫_0^10 s² e^{-s} ds = 2 - 122 e^{-10}
        let c = grid_curve(10.0, 100_000, |s| (-2.0 * s).exp());
        let exact = 2.0 - 122.0 * (-10.0f64).exp();
        assert!((s_prime(&c) - exact).abs() < 1e-6);
    }

    #[test]
    fn s_tilde_bounded() {
        let c = grid_curve(50.0, 500, |s| 1.0 / (1.0 + s));
        for t in [0.0, 0.5, 3.0, 20.0, 50.0] {
            let v = s_tilde(&c, t);
            assert!(v <= 1.0 + t + 1e-15 && v >= 1.0);
        }
    }

    #[test]
    fn delta_norm_examples() {
        let z = delta_norms_raw(&[0.0; 12], 3);
        assert_eq!((z.l2, z.l4, z.linf), (0.0, 0.0, 0.0));
        let mut d = vec![0.0; 12];
        d[3..6].copy_from_slice(&[1.0, 2.0, 2.0]);
        let n = delta_norms_raw(&d, 3);
        assert!((n.linf - 3.0).abs() < 1e-15);
        assert!((n.l2 - 3.0 / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn holder_chain(v in proptest::collection::vec(-5.0f64..5.0, 3..60)) {
            let d = 3;
            let v = &v[..v.len() / d * d];
            let n = delta_norms_raw(v, d);
            prop_assert!(n.l4.powi(4) <= n.l2.powi(2) * n.linf.powi(2) * (1.0 + 1e-12) + 1e-300);
            prop_assert!(n.l2 <= n.l4 * (1.0 + 1e-12) + 1e-300);
            prop_assert!(n.l4 <= n.linf * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn poc_triangle(h in proptest::collection::vec(-1.0f64..1.0, 8),
                        b in proptest::collection::vec(-1.0f64..1.0, 8),
                        r in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let data = DataSample::uniform(vec![0.0; 8], vec![0.0; 8], 1).unwrap();
            let p = poc_error_from_outputs(&data, &h, &b, &r);
            prop_assert!(p.total <= 2.0 * (p.coupling + p.monte_carlo) + 1e-12);
        }
    }

    #[test]
    fn coupling_part_zero_when_bar_equals_hat() {
        let data = DataSample::uniform(vec![0.0; 3], vec![0.0; 3], 1).unwrap();
        let p = poc_error_from_outputs(&data, &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[0.5, 2.0, 3.5]);
        assert_eq!(p.coupling, 0.0);
        assert_eq!(p.total, p.monte_carlo);
    }

    #[test]
    fn exact_power_law_decay() {
        let c = grid_curve(200.0, 2000, |t| (1.0 + t).powi(-4));
        let fit = decay_exponent_fit(&c, 0.3).unwrap();
        assert!((fit.slope + 4.0).abs() < 0.05, "{}", fit.slope);
        assert!(!fit.super_polynomial);
        assert_eq!(fit.burn_in, 0.0);
    }

    #[test]
    fn burn_in_is_found() {
        let c = grid_curve(200.0, 2000, |t| if t < 20.0 { 1.0 } else { (t - 19.0).powi(-2) });
        let fit = decay_exponent_fit(&c, 0.3).unwrap();
        assert_eq!(fit.burn_in, 20.0);
        assert!((fit.slope + 2.0).abs() < 1e-6);
    }

    #[test]
    fn exponential_flagged() {
        let c = grid_curve(60.0, 600, |t| (-t).exp());
        let fit = decay_exponent_fit(&c, 0.3).unwrap();
        assert!(fit.super_polynomial);
    }

    #[test]
    fn decay_fit_needs_points() {
        let c = grid_curve(5.0, 5, |t| 1.0 / (1.0 + t));
        assert!(matches!(decay_exponent_fit(&c, 0.3), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn synthetic_monte_carlo_rate() {
        let data: Vec<(usize, Vec<f64>)> = [64usize, 128, 256, 512, 1024]
            .iter()
            .map(|&m| (m, (0..5).map(|s| (1.0 + 0.01 * s as f64) / m as f64).collect()))
            .collect();
        let fit = poc_scaling_fit(&data).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.05);
        assert!(fit.r2 > 0.999);
        assert_eq!(fit.point_stderr.len(), 5);
        assert!(poc_scaling_fit(&data[..3]).is_err());
        let few: Vec<(usize, Vec<f64>)> = data.iter().map(|(m, e)| (*m, e[..4].to_vec())).collect();
        assert!(poc_scaling_fit(&few).is_err());
    }

    #[test]
    fn certificate_on_synthetic_data() {
        let m = 100;
        let pts: Vec<CertificatePoint> = (0..40)
            .map(|i| {
                let t = i as f64;
                let l4 = 0.01 * (1.0 + t).sqrt();
                let h = 1e-3 / (1.0 + t);
                let total = 2.0 * h + 0.5 * (m as f64 * (1.0 + t)).ln() / m as f64 + 3.0 * l4.powi(4);
                CertificatePoint { t, total: 0.9 * total, h_quad: h, delta_l4: l4 }
            })
            .collect();
        let chk = certificate_check(&pts, m, 10.0).unwrap();
        assert!(chk.holds, "{chk:?}");
        assert!(certificate_check(&pts, m, 100.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![CurveRow::loss_only(0.0, 1.5, 0.0), CurveRow { h_quad: 0.25, ..CurveRow::loss_only(0.1, 1.25, 0.12) }];
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &[("config_hash", "abc"), ("version", "0.1.0")], &rows).unwrap();
        let back = read_curves_csv(&buf[..]).unwrap();
        assert_eq!(back.get("config_hash"), Some("abc"));
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[1].h_quad, 0.25);
        assert!(back.rows[0].h_quad.is_nan());
        assert_eq!(back.loss_curve().unwrap().values, vec![1.5, 1.25]);
    }

    #[test]
    fn curve_validation() {
        assert!(LossCurve::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(LossCurve::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        let c = LossCurve::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.6]).unwrap();
        assert!((c.max_relative_increase() - 0.1).abs() < 1e-15);
    }
}
