//! Level arcs of `U_n` and the eigenvalues they carry.
//!
//! Because `U_n` increases in `y > 0`, the level set `U_n(x, y) = g_n` is,
//! over each interval of `Λ_g`, the graph of a function `y(x)`. Along it the
//! phase `θ_n(x) = -V_n(x, y(x))` increases with
//! `θ_n' = |∇U_n|² / ∂_y U_n`, and the non-real eigenvalues of `H_n^g` sit
//! exactly where `n θ_n` is a multiple of `2π`.
//!
//! Arcs end on the real axis at the exact solutions of `U_n(x, 0) = g_n`,
//! where `θ_n = π #{E_j < x} / n`. Inside an interval, tiny gaps of the
//! spectrum may lift `U_n(x, 0)` above the level; grid points there have no
//! height and are dropped, and the phase is flat across them.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::logpotential::{
    evaluate_F, evaluate_F_f, evaluate_U, evaluate_f, gradient_U, level_height, Interval, LambdaSet, LogPotentialField,
};
use crate::nha::{arc_end, gap_reaches_level, log_k, SpectrumComplex};
use crate::table::Csv;

/// Default number of grid cells per arc before refinement.
pub const DEFAULT_CELLS: usize = 1024;

/// Which residue of `n θ_n` modulo `2π` the eigenvalues sit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// `e^{i n θ_n} = 1`, the one realised by `H_n^g`.
    #[default]
    Zero,
    Pi,
}

impl Phase {
    pub fn value(self) -> f64 {
        match self {
            Phase::Zero => 0.0,
            Phase::Pi => PI,
        }
    }

    fn parity(self) -> usize {
        match self {
            Phase::Zero => 0,
            Phase::Pi => 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ArcOptions {
    /// Initial grid step; `None` splits the arc into [`DEFAULT_CELLS`].
    pub step: Option<f64>,
    /// Halve cells until consecutive phases differ by at most `π/n`.
    pub refine: bool,
    pub exec: Execution,
}

impl Default for ArcOptions {
    fn default() -> Self {
        ArcOptions { step: None, refine: true, exec: Execution::default() }
    }
}

/// An end of a level arc. `count` is `#{E_j < x}` when the end lies on the
/// real axis, where `θ_n = π count / n` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcEnd {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelArc {
    pub interval: usize,
    pub n: usize,
    pub g: f64,
    pub level: f64,
    pub step: f64,
    pub start: ArcEnd,
    pub end: ArcEnd,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_prime: Vec<f64>,
    pub min_theta_prime: f64,
    pub max_residual: f64,
    /// Grid points without a height (the level dips below the axis there).
    pub dropped: usize,
}

impl LevelArc {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// The middle half of the arc's x-range.
    pub fn central_half(&self) -> (f64, f64) {
        let w = self.end.x - self.start.x;
        (self.start.x + 0.25 * w, self.end.x - 0.25 * w)
    }

    /// Extremes of `θ_n'` over grid points in `[x0, x1]`, widened by one
    /// neighbour on each side.
    pub fn theta_prime_range(&self, x0: f64, x1: f64) -> (f64, f64) {
        let lo = self.x.partition_point(|&x| x < x0).saturating_sub(1);
        let hi = (self.x.partition_point(|&x| x <= x1) + 1).min(self.len());
        self.theta_prime[lo..hi].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)))
    }

    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["x", "y", "theta", "theta_prime"]);
        for i in 0..self.len() {
            csv.row(&[self.x[i], self.y[i], self.theta[i], self.theta_prime[i]]);
        }
        csv.finish()
    }

    /// `(x, y, θ)` of the ends and the grid, in order.
    fn nodes(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.len() + 2);
        out.push((self.start.x, self.start.y, self.start.theta));
        out.extend((0..self.len()).map(|i| (self.x[i], self.y[i], self.theta[i])));
        out.push((self.end.x, self.end.y, self.end.theta));
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    x: f64,
    y: f64,
    theta: f64,
    theta_prime: f64,
    residual: f64,
}

fn sample(field: &LogPotentialField, x: f64, level: f64) -> Option<Sample> {
    let y = level_height(field, x, level)?;
    if !(y > 0.0) {
        return None;
    }
    let theta = -evaluate_F(field, Complex64::new(x, y)).ok()?.im;
    let (gx, gy) = gradient_U(field, x, y);
    Some(Sample {
        x,
        y,
        theta,
        theta_prime: (gx * gx + gy * gy) / gy,
        residual: (evaluate_U(field, x, y) - level).abs(),
    })
}

/// `θ_n(x)` on the arc, or its flat value on the axis where the level line
/// does not pass over `x`.
fn theta_at(field: &LogPotentialField, x: f64, level: f64) -> f64 {
    match sample(field, x, level) {
        Some(s) => s.theta,
        None => PI * field.count_below(x) as f64 / field.n() as f64,
    }
}

fn axis_end(field: &LogPotentialField, x: f64) -> ArcEnd {
    let count = field.count_below(x);
    ArcEnd { x, y: 0.0, theta: PI * count as f64 / field.n() as f64, count: Some(count) }
}

fn arc_limit(field: &LogPotentialField, g: f64, level: f64, x: f64, clipped: bool, right: bool) -> Option<ArcEnd> {
    if clipped {
        if let Some(s) = sample(field, x, level) {
            return Some(ArcEnd { x, y: s.y, theta: s.theta, count: None });
        }
        // the window edge lies in a break: move inward to the next arc
        return arc_end(field.energies(), g, x, !right).map(|x| axis_end(field, x));
    }
    arc_end(field.energies(), g, x, right).map(|x| axis_end(field, x))
}

/// Traces the level line `U_n = g_n` over one interval of `Λ_g`.
pub fn trace_arc(field: &LogPotentialField, g: f64, interval: &Interval, opts: ArcOptions) -> Result<LevelArc> {
    let n = field.n();
    if n < 2 {
        return Err(Error::InvalidSize(n));
    }
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::Domain(format!("level arcs need a drift g > 0, got {g}")));
    }
    let level = log_k(n, g) / n as f64;
    let empty = Error::EmptySupport { a: interval.a, b: interval.b };
    let start = arc_limit(field, g, level, interval.a, interval.clipped_a, false).ok_or(empty.clone())?;
    let end = arc_limit(field, g, level, interval.b, interval.clipped_b, true).ok_or(empty.clone())?;
    if !(start.x < end.x) {
        return Err(empty);
    }
    let width = end.x - start.x;
    let step = opts.step.unwrap_or(width / DEFAULT_CELLS as f64);
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("grid step must be positive, got {step}")));
    }
    let cells = (width / step).ceil().max(2.0) as usize;
    let xs: Vec<f64> = (1..cells).map(|i| start.x + width * i as f64 / cells as f64).collect();
    let mut points: Vec<(f64, Option<Sample>)> =
        xs.iter().copied().zip(exec::map_slice(opts.exec, &xs, |&x| sample(field, x, level))).collect();

    if opts.refine {
        let jump = PI / n as f64;
        for _ in 0..40 {
            let mut fresh = Vec::new();
            // a dropped point sits on the axis, at its flat phase
            let phase =
                |&(x, s): &(f64, Option<Sample>)| s.map_or(PI * field.count_below(x) as f64 / n as f64, |s| s.theta);
            let mut prev = (start.x, start.theta);
            for (x, t) in points.iter().map(|p| (p.0, phase(p))).chain(std::iter::once((end.x, end.theta))) {
                let mid = 0.5 * (prev.0 + x);
                if (t - prev.1).abs() > jump && mid > prev.0 && mid < x {
                    fresh.push(mid);
                }
                prev = (x, t);
            }
            if fresh.is_empty() {
                break;
            }
            let samples = exec::map_slice(opts.exec, &fresh, |&x| sample(field, x, level));
            points.extend(fresh.into_iter().zip(samples));
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }

    let dropped = points.iter().filter(|p| p.1.is_none()).count();
    let kept: Vec<Sample> = points.into_iter().filter_map(|p| p.1).collect();
    Ok(LevelArc {
        interval: 0,
        n,
        g,
        level,
        step,
        start,
        end,
        x: kept.iter().map(|s| s.x).collect(),
        y: kept.iter().map(|s| s.y).collect(),
        theta: kept.iter().map(|s| s.theta).collect(),
        theta_prime: kept.iter().map(|s| s.theta_prime).collect(),
        min_theta_prime: kept.iter().map(|s| s.theta_prime).fold(f64::INFINITY, f64::min),
        max_residual: kept.iter().map(|s| s.residual).fold(0.0, f64::max),
        dropped,
    })
}

/// One arc per interval of `Λ_g`; intervals whose arc turns out empty at
/// this `n` are skipped.
pub fn trace_arcs(field: &LogPotentialField, lambda: &LambdaSet, opts: ArcOptions) -> Result<Vec<LevelArc>> {
    let mut arcs = Vec::new();
    for (j, interval) in lambda.intervals.iter().enumerate() {
        match trace_arc(field, lambda.g, interval, opts) {
            Ok(mut arc) => {
                arc.interval = j;
                arcs.push(arc);
            }
            Err(Error::EmptySupport { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(arcs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub z: Complex64,
    /// `n θ_n(z) = π quantum`.
    pub quantum: usize,
    /// `|F_n(z) - (g_n - i θ_n)|` at the returned point.
    pub residual: f64,
    /// Within two grid steps of an arc end.
    pub edge: bool,
}

pub fn predict_eigenvalues(arc: &LevelArc, field: &LogPotentialField, phase: Phase) -> Result<Vec<Prediction>> {
    predict_eigenvalues_with(arc, field, phase, Execution::default())
}

/// Points of the arc where `n θ_n ≡ phase (mod 2π)`.
pub fn predict_eigenvalues_with(
    arc: &LevelArc,
    field: &LogPotentialField,
    phase: Phase,
    exec: Execution,
) -> Result<Vec<Prediction>> {
    if field.n() != arc.n {
        return Err(Error::Domain(format!("arc traced at n = {}, field has n = {}", arc.n, field.n())));
    }
    let nodes = arc.nodes();
    if let Some(w) = nodes.windows(2).find(|w| !(w[1].2 > w[0].2)) {
        return Err(Error::NonMonotonePhase(w[1].0));
    }
    let n = arc.n as f64;
    let scaled = |e: &ArcEnd| e.theta * n / PI;
    let first = match arc.start.count {
        Some(c) => c + 1,
        None => scaled(&arc.start).floor() as usize + 1,
    };
    let last = match arc.end.count {
        Some(c) => c.saturating_sub(1),
        None => (scaled(&arc.end).ceil() as usize).saturating_sub(1),
    };
    // where the level line touches the axis, θ_n = π j / n holds along a
    // real segment; its ends are real eigenvalues, not points of the arc
    let quanta: Vec<usize> = exec::map_range(exec, (last + 1).saturating_sub(first), |i| {
        let j = first + i;
        (j % 2 == phase.parity() && !gap_reaches_level(field.energies(), arc.g, j)).then_some(j)
    })
    .into_iter()
    .flatten()
    .collect();
    let thetas: Vec<f64> = nodes.iter().map(|p| p.2).collect();
    let found = exec::map_slice(exec, &quanta, |&j| {
        let t = PI * j as f64 / n;
        let c = thetas.partition_point(|&th| th < t).clamp(1, nodes.len() - 1);
        let z = solve_on_arc(field, arc.level, t, nodes[c - 1], nodes[c]);
        let w = Complex64::new(arc.level, -t);
        let residual = evaluate_F(field, z).map(|f| (f - w).norm()).unwrap_or(f64::INFINITY);
        let edge = z.re - arc.start.x < 2.0 * arc.step || arc.end.x - z.re < 2.0 * arc.step;
        Prediction { z, quantum: j, residual, edge }
    });
    Ok(found)
}

/// The point of the arc with `θ_n = t` between two bracketing nodes:
/// Newton on `F_n(z) = level - i t`, falling back to bisection in `x`.
fn solve_on_arc(field: &LogPotentialField, level: f64, t: f64, a: (f64, f64, f64), b: (f64, f64, f64)) -> Complex64 {
    let s = ((t - a.2) / (b.2 - a.2)).clamp(0.0, 1.0);
    let mut z = Complex64::new(a.0 + s * (b.0 - a.0), (a.1 + s * (b.1 - a.1)).max(f64::MIN_POSITIVE));
    let w = Complex64::new(level, -t);
    let slack = b.0 - a.0;
    for _ in 0..60 {
        let Ok((f, df)) = evaluate_F_f(field, z) else { break };
        let dz = (f - w) / df;
        let next = z - dz;
        if !(next.im > 0.0) || next.re < a.0 - slack || next.re > b.0 + slack || !next.re.is_finite() {
            break;
        }
        z = next;
        if dz.norm() <= 1e-14 * z.norm().max(1.0) {
            return z;
        }
    }
    let (mut lo, mut hi) = (a.0, b.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        if theta_at(field, mid, level) < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    Complex64::new(x, level_height(field, x, level).unwrap_or(0.0))
}

/// Direct count of upper eigenvalues against the phase increment over a
/// window of the arc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub alpha: f64,
    pub beta: f64,
    pub nu_direct: usize,
    pub nu_theory: f64,
    /// `nu_direct` minus the nearest integer to `nu_theory`.
    pub kappa: i64,
}

impl CountReport {
    pub fn discrepancy(&self) -> f64 {
        self.nu_direct as f64 - self.nu_theory
    }
}

pub fn count_report(
    arc: &LevelArc,
    field: &LogPotentialField,
    direct: &SpectrumComplex,
    window: (f64, f64),
) -> Result<CountReport> {
    let (alpha, beta) = window;
    if alpha == beta && alpha.is_finite() {
        return Ok(CountReport { alpha, beta, nu_direct: 0, nu_theory: 0.0, kappa: 0 });
    }
    if !(arc.start.x < alpha && alpha < beta && beta < arc.end.x) {
        return Err(Error::Domain(format!(
            "window [{alpha}, {beta}] is not inside the arc ({}, {})",
            arc.start.x, arc.end.x
        )));
    }
    if field.n() != arc.n || direct.n() != arc.n {
        return Err(Error::Domain("arc, field and spectrum must share n".into()));
    }
    let nu_direct = direct.values().iter().filter(|z| z.im > 0.0 && z.re >= alpha && z.re < beta).count();
    let dtheta = theta_at(field, beta, arc.level) - theta_at(field, alpha, arc.level);
    let nu_theory = arc.n as f64 * dtheta / TAU;
    Ok(CountReport { alpha, beta, nu_direct, nu_theory, kappa: nu_direct as i64 - nu_theory.round() as i64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacingPair {
    pub z: Complex64,
    /// `n (z_{k+1} - z_k)`.
    pub gap: Complex64,
    /// `2π / (i f_n(z_k))`.
    pub predicted: Complex64,
    /// `|gap - predicted|`.
    pub delta: f64,
    /// `|gap - 2πi / f_n(z_k)|`, the opposite sign convention.
    pub delta_flipped: f64,
    /// `|gap - 2π / (i f(z_k))|` with `f` from a reference field.
    pub delta_reference: Option<f64>,
    /// `||gap| - 2π / |f_n(z_k)||`.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingReport {
    pub n: usize,
    pub pairs: Vec<SpacingPair>,
    pub max_delta: f64,
    pub median_delta: f64,
    pub median_prediction: f64,
    pub max_delta_flipped: f64,
    /// All real parts strictly increasing.
    pub ordered: bool,
}

impl SpacingReport {
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["re", "im", "gap_re", "gap_im", "pred_re", "pred_im", "delta_abs"]);
        for p in &self.pairs {
            csv.row(&[p.z.re, p.z.im, p.gap.re, p.gap.im, p.predicted.re, p.predicted.im, p.delta]);
        }
        csv.finish()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Gaps between consecutive upper eigenvalues (by increasing real part)
/// against `2π / (i f_n)`. Points with `Im z <= 0` are ignored.
pub fn spacing_report(
    points: &[Complex64],
    field: &LogPotentialField,
    reference: Option<&LogPotentialField>,
) -> Result<SpacingReport> {
    let n = field.n();
    let mut z: Vec<Complex64> = points.iter().copied().filter(|z| z.im > 0.0).collect();
    z.sort_by(|a, b| a.re.total_cmp(&b.re));
    let mut pairs = Vec::with_capacity(z.len().saturating_sub(1));
    let two_pi_i = Complex64::new(0.0, TAU);
    for w in z.windows(2) {
        let f = evaluate_f(field, w[0])?;
        let gap = (w[1] - w[0]) * n as f64;
        let predicted = -two_pi_i / f;
        let delta_reference = match reference {
            Some(r) => Some((gap + two_pi_i / evaluate_f(r, w[0])?).norm()),
            None => None,
        };
        pairs.push(SpacingPair {
            z: w[0],
            gap,
            predicted,
            delta: (gap - predicted).norm(),
            delta_flipped: (gap - two_pi_i / f).norm(),
            delta_reference,
            density: (gap.norm() - TAU / f.norm()).abs(),
        });
    }
    let deltas: Vec<f64> = pairs.iter().map(|p| p.delta).collect();
    Ok(SpacingReport {
        n,
        max_delta: deltas.iter().copied().fold(0.0, f64::max),
        median_delta: median(deltas),
        median_prediction: median(pairs.iter().map(|p| p.predicted.norm()).collect()),
        max_delta_flipped: pairs.iter().map(|p| p.delta_flipped).fold(0.0, f64::max),
        ordered: z.windows(2).all(|w| w[1].re > w[0].re),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{eigenvalues_hermitian, free_periodic_energies, Boundary};
    use crate::nha::{roots_from_energies, RootOptions};
    use crate::potentials::{realize, PotentialSpec, REFERENCE_SEED};
    use proptest::prelude::*;

    fn free(n: usize) -> LogPotentialField {
        LogPotentialField::from_energies(free_periodic_energies(n)).unwrap()
    }

    /// An interval reaching past the spectrum on both sides: the arc then
    /// runs between the outermost solutions of `U_n(x, 0) = g_n`.
    fn everything(field: &LogPotentialField) -> Interval {
        let (lo, hi) = (field.energies()[0], field.energies()[field.n() - 1]);
        Interval { a: lo - 100.0, b: hi + 100.0, clipped_a: false, clipped_b: false }
    }

    fn upper(z: &[Complex64]) -> Vec<Complex64> {
        z.iter().copied().filter(|z| z.im > 0.0).collect()
    }

    /// Largest distance in a nearest-neighbour matching of equal-size sets.
    fn match_error(a: &[Complex64], b: &[Complex64]) -> f64 {
        assert_eq!(a.len(), b.len());
        let mut used = vec![false; b.len()];
        let mut worst: f64 = 0.0;
        for z in a {
            let (k, d) = b
                .iter()
                .enumerate()
                .filter(|(k, _)| !used[*k])
                .map(|(k, w)| (k, (z - w).norm()))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            used[k] = true;
            worst = worst.max(d);
        }
        worst
    }

    #[test]
    fn free_arc_is_the_half_ellipse() {
        let g: f64 = 1.0;
        let n = 1_000_000;
        let field = free(n);
        let (ca, sa) = (2.0 * g.cosh(), 2.0 * g.sinh());
        let interval = Interval { a: -ca, b: ca, clipped_a: false, clipped_b: false };
        let opts = ArcOptions { step: Some(2.0 * ca / 24.0), refine: false, ..Default::default() };
        let arc = trace_arc(&field, g, &interval, opts).unwrap();
        assert!((arc.start.x + ca).abs() < 1e-3 && (arc.end.x - ca).abs() < 1e-3);
        assert_eq!(arc.start.theta, 0.0);
        assert_eq!(arc.end.theta, PI);
        for (x, y) in arc.x.iter().zip(&arc.y) {
            let want = sa * (1.0 - (x / ca).powi(2)).sqrt();
            assert!((y - want).abs() < 1e-3, "{x}: {y} vs {want}");
        }
        assert!(arc.max_residual <= 1e-10);
        assert_eq!(arc.dropped, 0);
    }

    #[test]
    fn arcs_satisfy_the_level_equation_and_phase_increases() {
        let p = realize(&PotentialSpec::two_band(REFERENCE_SEED), 300).unwrap();
        let field = LogPotentialField::new(&eigenvalues_hermitian(&p, Boundary::Periodic).unwrap());
        for g in [0.6, 1.1, 1.4] {
            let arc = trace_arc(&field, g, &everything(&field), ArcOptions::default()).unwrap();
            assert!(arc.max_residual <= 1e-10, "{}", arc.max_residual);
            assert!(arc.min_theta_prime > 0.0);
            assert!(arc.theta.windows(2).all(|w| w[1] > w[0]));
            // refinement leaves no phase jump above π/n
            // larger steps only across a stretch where the line meets the axis
            let nodes = arc.nodes();
            for w in nodes.windows(2) {
                let mid = 0.5 * (w[0].0 + w[1].0);
                assert!(w[1].2 - w[0].2 <= PI / 300.0 + 1e-12 || sample(&field, mid, arc.level).is_none());
            }
        }
    }

    #[test]
    fn phase_derivative_matches_finite_differences() {
        let field = free(512);
        let arc = trace_arc(&field, 1.0, &everything(&field), ArcOptions::default()).unwrap();
        let h = 1e-5;
        for i in (10..arc.len() - 10).step_by(37) {
            let x = arc.x[i];
            let fd = (theta_at(&field, x + h, arc.level) - theta_at(&field, x - h, arc.level)) / (2.0 * h);
            assert!((fd - arc.theta_prime[i]).abs() <= 1e-4 * fd.abs(), "{x}: {fd} vs {}", arc.theta_prime[i]);
        }
    }

    #[test]
    fn free_predictions_follow_the_closed_form() {
        let (n, g) = (64, 1.0);
        let field = free(n);
        let arc = trace_arc(&field, g, &everything(&field), ArcOptions::default()).unwrap();
        let pred = predict_eigenvalues(&arc, &field, Phase::Zero).unwrap();
        // -2cosh(g + 2πik/n), k = 0 and n/2 are real
        assert_eq!(pred.len(), n / 2 - 1);
        let exact: Vec<Complex64> = (0..n)
            .map(|k| -2.0 * Complex64::new(g, TAU * k as f64 / n as f64).cosh())
            .filter(|z| z.im > 1e-9)
            .collect();
        let z: Vec<Complex64> = pred.iter().map(|p| p.z).collect();
        assert!(match_error(&z, &exact) <= 1e-6);
        assert!(pred.windows(2).all(|w| (w[1].quantum - w[0].quantum) == 2));
        // the other residue lands halfway between
        let other: Vec<Complex64> = predict_eigenvalues(&arc, &field, Phase::Pi).unwrap().iter().map(|p| p.z).collect();
        assert_eq!(other.len(), n / 2);
        let nearest = other
            .iter()
            .map(|w| exact.iter().map(|z| (z - w).norm()).fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min);
        assert!(nearest > 0.01);
    }

    #[test]
    fn reference_field_predictions_match_direct_eigenvalues() {
        let n = 50;
        let p = realize(&PotentialSpec::two_band(REFERENCE_SEED), n).unwrap();
        let herm = eigenvalues_hermitian(&p, Boundary::Periodic).unwrap();
        let field = LogPotentialField::new(&herm);
        let direct = roots_from_energies(herm.energies(), 1.4, RootOptions::default());
        let arc = trace_arc(&field, 1.4, &everything(&field), ArcOptions::default()).unwrap();
        let pred: Vec<Complex64> =
            predict_eigenvalues(&arc, &field, Phase::Zero).unwrap().iter().map(|p| p.z).collect();
        assert!(match_error(&pred, &upper(&direct.values())) <= 1e-4);
    }

    #[test]
    fn predictions_near_the_ends_are_flagged() {
        let field = free(256);
        let arc = trace_arc(&field, 1.0, &everything(&field), ArcOptions::default()).unwrap();
        let pred = predict_eigenvalues(&arc, &field, Phase::Zero).unwrap();
        assert!(pred.first().unwrap().edge || pred[1].edge || arc.step * 2.0 < pred[0].z.re - arc.start.x);
        let mid = &pred[pred.len() / 2];
        assert!(!mid.edge);
        assert!(pred.iter().all(|p| p.residual < 1e-12));
    }

    #[test]
    fn mean_value_bounds_hold_for_real_part_gaps() {
        let (n, g) = (256, 1.0);
        let field = free(n);
        let arc = trace_arc(&field, g, &everything(&field), ArcOptions::default()).unwrap();
        let mut z = upper(&roots_from_energies(field.energies(), g, RootOptions::default()).values());
        z.sort_by(|a, b| a.re.total_cmp(&b.re));
        for w in z.windows(2) {
            let (lo, hi) = arc.theta_prime_range(w[0].re, w[1].re);
            let gap = w[1].re - w[0].re;
            assert!(gap >= TAU / (n as f64 * hi) * (1.0 - 1e-9), "{gap} vs {}", TAU / (n as f64 * hi));
            assert!(gap <= TAU / (n as f64 * lo) * (1.0 + 1e-9), "{gap} vs {}", TAU / (n as f64 * lo));
        }
    }

    #[test]
    fn counting_law_on_nested_windows() {
        let g = 1.0;
        for n in [128, 512, 2048] {
            let field = free(n);
            let arc = trace_arc(&field, g, &everything(&field), ArcOptions::default()).unwrap();
            let direct = roots_from_energies(field.energies(), g, RootOptions::default());
            for w in [0.25, 0.5, 0.75] {
                let window = (-2.0 * g.cosh() * w, 2.0 * g.cosh() * w);
                let r = count_report(&arc, &field, &direct, window).unwrap();
                assert!(r.kappa.abs() <= 1 && r.discrepancy().abs() <= 1.0, "{n} {r:?}");
            }
        }
    }

    #[test]
    fn count_report_edge_cases() {
        let field = free(32);
        let arc = trace_arc(&field, 1.0, &everything(&field), ArcOptions::default()).unwrap();
        let direct = roots_from_energies(field.energies(), 1.0, RootOptions::default());
        let r = count_report(&arc, &field, &direct, (0.3, 0.3)).unwrap();
        assert_eq!((r.nu_direct, r.nu_theory, r.kappa), (0, 0.0, 0));
        assert!(matches!(count_report(&arc, &field, &direct, (-9.0, 0.0)), Err(Error::Domain(_))));
        let json = serde_json::to_string(&count_report(&arc, &field, &direct, (-1.0, 1.0)).unwrap()).unwrap();
        assert!(json.contains("\"nu_direct\""));
    }

    #[test]
    fn spacing_at_the_top_of_the_free_arc() {
        let (n, g) = (2048, 1.0f64);
        let field = free(n);
        let z = upper(&roots_from_energies(field.energies(), g, RootOptions::default()).values());
        let report = spacing_report(&z, &field, None).unwrap();
        assert!(report.ordered);
        let top = report.pairs.iter().min_by(|a, b| a.z.re.abs().total_cmp(&b.z.re.abs())).unwrap();
        let want = 4.0 * PI * g.cosh();
        assert!((top.gap.norm() - want).abs() <= 0.02 * want, "{} vs {want}", top.gap.norm());
        // the prediction carries the sign; the opposite convention is far off
        let central: Vec<Complex64> = z.iter().copied().filter(|z| z.re.abs() < g.cosh()).collect();
        let c = spacing_report(&central, &field, Some(&free(4 * n))).unwrap();
        assert!(c.max_delta < 0.05 * c.median_prediction);
        assert!(c.max_delta_flipped > c.median_prediction);
        assert!(c.pairs.iter().all(|p| p.density < 0.05 * p.predicted.norm()));
        assert!(c.pairs.iter().all(|p| p.delta_reference.unwrap() < 0.05 * p.predicted.norm()));
    }

    #[test]
    fn short_spacing_input_gives_an_empty_report() {
        let field = free(16);
        let r = spacing_report(&[Complex64::new(0.0, 1.0)], &field, None).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.to_csv(), "re,im,gap_re,gap_im,pred_re,pred_im,delta_abs\n");
    }

    #[test]
    fn csv_layout() {
        let field = free(16);
        let arc = trace_arc(&field, 0.8, &everything(&field), ArcOptions::default()).unwrap();
        let (header, rows) = crate::table::parse(&arc.to_csv()).unwrap();
        assert_eq!(header, ["x", "y", "theta", "theta_prime"]);
        assert_eq!(rows.len(), arc.len());
        assert!(rows.iter().all(|r| r[1] > 0.0));
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let arc = trace_arc(&free(16), 0.8, &everything(&free(16)), ArcOptions::default()).unwrap();
        assert!(predict_eigenvalues(&arc, &free(18), Phase::Zero).is_err());
        let nowhere = Interval { a: 50.0, b: 60.0, clipped_a: false, clipped_b: false };
        assert!(matches!(trace_arc(&free(16), 0.8, &nowhere, ArcOptions::default()), Err(Error::EmptySupport { .. })));
    }

    #[test]
    fn clipped_intervals_end_on_the_arc() {
        let field = free(128);
        let interval = Interval { a: -1.0, b: 1.0, clipped_a: true, clipped_b: true };
        let arc = trace_arc(&field, 1.0, &interval, ArcOptions::default()).unwrap();
        assert_eq!((arc.start.x, arc.end.x), (-1.0, 1.0));
        assert!(arc.start.y > 0.0 && arc.start.count.is_none());
        let pred = predict_eigenvalues(&arc, &field, Phase::Zero).unwrap();
        let direct = upper(&roots_from_energies(field.energies(), 1.0, RootOptions::default()).values());
        let inside: Vec<Complex64> = direct.into_iter().filter(|z| z.re.abs() < 1.0).collect();
        let z: Vec<Complex64> = pred.iter().map(|p| p.z).collect();
        assert!(match_error(&z, &inside) < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn predictions_are_the_direct_eigenvalues(seed in 0u64..10_000, n in 6usize..64, g in 0.3f64..2.0) {
            let p = realize(&PotentialSpec::two_band(seed), n).unwrap();
            let herm = eigenvalues_hermitian(&p, Boundary::Periodic).unwrap();
            let field = LogPotentialField::new(&herm);
            let direct = roots_from_energies(herm.energies(), g, RootOptions::default());
            let arc = trace_arc(&field, g, &everything(&field), ArcOptions::default()).unwrap();
            let pred: Vec<Complex64> = predict_eigenvalues(&arc, &field, Phase::Zero).unwrap().iter().map(|p| p.z).collect();
            let want = upper(&direct.values());
            prop_assert_eq!(pred.len(), want.len());
            prop_assert!(match_error(&pred, &want) <= 1e-4);
        }
    }
}
