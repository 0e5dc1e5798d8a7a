//! The logarithmic potential of a real spectrum.
//!
//! For energies `E_1..E_n` and `Im z > 0`,
//! `F_n(z) = (1/n) Σ ln(E_j - z) = U_n + i V_n` with the principal branch,
//! so every term has imaginary part in `(-π, 0)`. `U_n` is extended to the
//! lower half plane by `U(x, -y) = U(x, y)`; `f_n(z) = (1/n) Σ 1/(z - E_j)`
//! is the derivative `F_n'`.
//!
//! Sums run over the energies in ascending order, so a value never depends
//! on how a grid sweep was scheduled. Instead of `n` logarithms we multiply
//! the factors `E_j - z` into a power-of-two scaled running product and keep
//! count of how often its argument wraps; one `ln` and one `atan2` finish the
//! job.

#![allow(non_snake_case)]

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::hermitian::SpectrumReal;
use crate::potentials::c2_statistic;
use crate::table::Csv;

/// Default distance from the real axis used for boundary values.
pub const BOUNDARY_DELTA: f64 = 1e-3;

/// Number of support bins across `[min E, max E]`.
pub const SUPPORT_BINS: usize = 512;

/// `F_n`, `U_n`, `V_n` and `f_n` of a fixed real spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPotentialField {
    energies: Vec<f64>,
    support: (f64, f64),
    c2: Option<f64>,
}

impl LogPotentialField {
    pub fn new(spectrum: &SpectrumReal) -> Self {
        let mut field = Self::build(spectrum.energies().to_vec());
        field.c2 = Some(c2_statistic(spectrum.potential()));
        field
    }

    /// A field from bare energies (any `n >= 1`).
    pub fn from_energies(energies: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::InvalidSize(0));
        }
        if let Some((site, &value)) = energies.iter().enumerate().find(|(_, e)| !e.is_finite()) {
            return Err(Error::NonFinite { site, value });
        }
        Ok(Self::build(energies))
    }

    fn build(mut energies: Vec<f64>) -> Self {
        energies.sort_by(f64::total_cmp);
        let support = (energies[0], energies[energies.len() - 1]);
        LogPotentialField { energies, support, c2: None }
    }

    pub fn n(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `[min E, max E]`.
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// `(1/n) Σ ln(1 + |q_k|)` of the underlying potential, when known.
    pub fn c2(&self) -> Option<f64> {
        self.c2
    }

    /// `#{E_j < x}`.
    pub fn count_below(&self, x: f64) -> usize {
        self.energies.partition_point(|&e| e < x)
    }

    fn is_atom(&self, x: f64) -> bool {
        self.energies.binary_search_by(|e| e.total_cmp(&x)).is_ok()
    }
}

// Power-of-two scaling keeps the running product inside this window.
const SCALE_HI: f64 = 1.0e90;
const SCALE_LO: f64 = 1.0e-90;
// Factors beyond this magnitude bypass the product altogether.
const HUGE: f64 = 1.0e120;

fn binary_exponent(m: f64) -> i32 {
    ((m.to_bits() >> 52) & 0x7ff) as i32 - 1023
}

fn pow2(k: i32) -> f64 {
    f64::from_bits(((1023 + k) as u64) << 52)
}

/// Principal argument in `(0, π]`.
fn upper(p: Complex64) -> bool {
    p.im > 0.0 || (p.im == 0.0 && p.re < 0.0)
}

/// `Σ ln(E_j - z)` for `Im z > 0`.
fn log_sum(energies: &[f64], z: Complex64) -> Complex64 {
    let mut p = Complex64::new(1.0, 0.0);
    let mut exp = 0i64;
    let mut turns = 0i64;
    let mut side = Complex64::new(0.0, 0.0);
    for &e in energies {
        let w = Complex64::new(e - z.re, -z.im);
        let m = w.re.abs().max(w.im.abs());
        if !(m < HUGE) {
            side += w.ln();
            continue;
        }
        let was_upper = upper(p);
        p *= w;
        // every factor turns the product clockwise by less than π
        if !was_upper && upper(p) {
            turns += 1;
        }
        let m = p.re.abs().max(p.im.abs());
        if !(SCALE_LO..=SCALE_HI).contains(&m) {
            let k = binary_exponent(m);
            p *= pow2(-k);
            exp += i64::from(k);
        }
    }
    let re = p.norm().ln() + exp as f64 * std::f64::consts::LN_2;
    let im = p.im.atan2(p.re) - 2.0 * PI * turns as f64;
    Complex64::new(re, im) + side
}

/// `(Σ ln(E_j - z), Σ 1/(E_j - z))` for `Im z > 0`.
pub(crate) fn log_sum_with_resolvent(energies: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(1.0, 0.0);
    let mut exp = 0i64;
    let mut turns = 0i64;
    let mut side = Complex64::new(0.0, 0.0);
    let mut s = Complex64::new(0.0, 0.0);
    for &e in energies {
        let w = Complex64::new(e - z.re, -z.im);
        s += w.inv();
        if !(w.re.abs().max(w.im.abs()) < HUGE) {
            side += w.ln();
            continue;
        }
        let was_upper = upper(p);
        p *= w;
        if !was_upper && upper(p) {
            turns += 1;
        }
        let m = p.re.abs().max(p.im.abs());
        if !(SCALE_LO..=SCALE_HI).contains(&m) {
            let k = binary_exponent(m);
            p *= pow2(-k);
            exp += i64::from(k);
        }
    }
    let re = p.norm().ln() + exp as f64 * std::f64::consts::LN_2;
    let im = p.im.atan2(p.re) - 2.0 * PI * turns as f64;
    (Complex64::new(re, im) + side, s)
}

/// `Σ ln|E_j - z|`, `-∞` when `z` is one of the `E_j`.
fn log_abs_sum(energies: &[f64], x: f64, y: f64) -> f64 {
    let y2 = y * y;
    let mut p = 1.0f64;
    let mut exp = 0i64;
    let mut side = 0.0;
    for &e in energies {
        let a = e - x;
        if !(a.abs() < HUGE) || !(y.abs() < HUGE) {
            side += a.hypot(y).ln();
            continue;
        }
        let t = a * a + y2;
        if t == 0.0 {
            return f64::NEG_INFINITY;
        }
        p *= t;
        if !(SCALE_LO..=SCALE_HI).contains(&p) {
            let k = binary_exponent(p);
            p *= pow2(-k);
            exp += i64::from(k);
        }
    }
    0.5 * (p.ln() + exp as f64 * std::f64::consts::LN_2) + side
}

fn check_upper(z: Complex64) -> Result<()> {
    if z.im > 0.0 && z.re.is_finite() && z.im.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("F_n needs Im z > 0, got {z}")))
    }
}

/// `F_n(z)` for `Im z > 0`; the imaginary part lies in `[-π, 0]`.
pub fn evaluate_F(field: &LogPotentialField, z: Complex64) -> Result<Complex64> {
    check_upper(z)?;
    Ok(log_sum(&field.energies, z) / field.n() as f64)
}

/// `U_n(x, y)`, symmetric in `y`. Returns `-∞` exactly at `(E_j, 0)`.
pub fn evaluate_U(field: &LogPotentialField, x: f64, y: f64) -> f64 {
    log_abs_sum(&field.energies, x, y) / field.n() as f64
}

/// `U_n(E_j + sign e^{log_t}, 0)`, with the offset handled relative to
/// `E_j` so that points closer to `E_j` than its ulp are still resolved.
pub fn evaluate_U_anchored(field: &LogPotentialField, j: usize, sign: f64, log_t: f64) -> f64 {
    let anchor = field.energies[j];
    let t = sign * log_t.exp();
    let mut side = 0.0;
    let mut p = 1.0f64;
    let mut exp = 0i64;
    for &e in &field.energies {
        let diff = e - anchor;
        if diff == 0.0 {
            side += log_t;
            continue;
        }
        let d = diff - t;
        if !(d.abs() < HUGE) {
            side += d.abs().ln();
            continue;
        }
        if d == 0.0 {
            return f64::NEG_INFINITY;
        }
        p *= d;
        let m = p.abs();
        if !(SCALE_LO..=SCALE_HI).contains(&m) {
            let k = binary_exponent(m);
            p *= pow2(-k);
            exp += i64::from(k);
        }
    }
    (p.abs().ln() + exp as f64 * std::f64::consts::LN_2 + side) / field.n() as f64
}

/// `V_n(x, y)` for `y > 0`, continued by `V(x, -y) = -V(x, y)`. On the axis
/// it returns the limit from above, `-π #{E_j < x} / n`.
pub fn evaluate_V(field: &LogPotentialField, x: f64, y: f64) -> f64 {
    if y == 0.0 {
        -PI * field.count_below(x) as f64 / field.n() as f64
    } else {
        let v = log_sum(&field.energies, Complex64::new(x, y.abs())).im / field.n() as f64;
        if y > 0.0 {
            v
        } else {
            -v
        }
    }
}

/// `f_n(z) = (1/n) Σ 1/(z - E_j)` for `Im z ≠ 0`.
pub fn evaluate_f(field: &LogPotentialField, z: Complex64) -> Result<Complex64> {
    if z.im == 0.0 || !z.im.is_finite() || !z.re.is_finite() {
        return Err(Error::Domain(format!("f_n needs Im z != 0, got {z}")));
    }
    Ok(resolvent_sum(&field.energies, z) / field.n() as f64)
}

fn resolvent_sum(energies: &[f64], z: Complex64) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for &e in energies {
        s += (z - e).inv();
    }
    s
}

/// `(F_n(z), f_n(z))` in one call.
pub fn evaluate_F_f(field: &LogPotentialField, z: Complex64) -> Result<(Complex64, Complex64)> {
    check_upper(z)?;
    let n = field.n() as f64;
    Ok((log_sum(&field.energies, z) / n, resolvent_sum(&field.energies, z) / n))
}

/// `∇U_n = (Re f_n, -Im f_n)` at a point off the axis, or on the axis away
/// from the energies.
pub fn gradient_U(field: &LogPotentialField, x: f64, y: f64) -> (f64, f64) {
    let mut gx = 0.0;
    let mut gy = 0.0;
    for &e in &field.energies {
        let a = x - e;
        let r = a * a + y * y;
        gx += a / r;
        gy += y / r;
    }
    let n = field.n() as f64;
    (gx / n, gy / n)
}

/// The height `y > 0` with `U_n(x, y) = level`, or `None` when
/// `U_n(x, 0) >= level` and the level line does not pass over `x`.
pub fn level_height(field: &LogPotentialField, x: f64, level: f64) -> Option<f64> {
    level_height_in(&field.energies, x, level)
}

pub(crate) fn level_height_in(energies: &[f64], x: f64, level: f64) -> Option<f64> {
    let n = energies.len() as f64;
    if !(log_abs_sum(energies, x, 0.0) / n < level) || !level.is_finite() {
        return None;
    }
    // In s = ln y, U is increasing and convex, and U >= s. Newton started at
    // s = level therefore descends monotonically onto the root.
    let eval = |s: f64| {
        let y = s.exp();
        let mut slope = 0.0;
        for &e in energies {
            let a = e - x;
            slope += 1.0 / (1.0 + (a / y) * (a / y));
        }
        (log_abs_sum(energies, x, y) / n - level, slope / n)
    };
    let tol = 1e-13 * level.abs().max(1.0);
    let mut s = level;
    for _ in 0..400 {
        let (v, dv) = eval(s);
        if v <= tol {
            return Some(s.exp());
        }
        let next = s - v / dv;
        if !next.is_finite() || s - next <= 4.0 * f64::EPSILON * s.abs().max(1.0) {
            return Some(s.exp());
        }
        s = next;
    }
    Some(s.exp())
}

/// `U(x, δ)`, an upper bound for the boundary value `U(x, 0)`.
pub fn boundary_U(field: &LogPotentialField, x: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(evaluate_U(field, x, delta))
}

/// `2 U(x, δ/2) - U(x, δ)`: removes the linear term in `δ`.
pub fn boundary_U_richardson(field: &LogPotentialField, x: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(2.0 * evaluate_U(field, x, 0.5 * delta) - evaluate_U(field, x, delta))
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("boundary offset must be positive, got {delta}")))
    }
}

/// Critical drifts over a window: extrema of the boundary potential on the
/// estimated support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalDrifts {
    pub g_under: f64,
    pub g_over: f64,
    pub window: (f64, f64),
}

/// Sample points of the support inside `[a, b]`: centres of the occupied
/// bins of width `(max E - min E) / 512`, clipped to the window.
pub fn support_samples(field: &LogPotentialField, a: f64, b: f64) -> Result<Vec<f64>> {
    if !(a < b) {
        return Err(Error::Domain(format!("window needs a < b, got [{a}, {b}]")));
    }
    let (lo, hi) = field.support;
    let h = (hi - lo) / SUPPORT_BINS as f64;
    if !(h > 0.0) {
        return Err(Error::Degenerate(lo));
    }
    let mut counts = vec![0usize; SUPPORT_BINS];
    for &e in &field.energies {
        let i = (((e - lo) / h) as usize).min(SUPPORT_BINS - 1);
        counts[i] += 1;
    }
    let xs: Vec<f64> = (0..SUPPORT_BINS)
        .filter(|&i| counts[i] > 0)
        .filter_map(|i| {
            let (l, r) = (lo + i as f64 * h, lo + (i + 1) as f64 * h);
            (r >= a && l <= b).then(|| (0.5 * (l + r)).clamp(a, b))
        })
        .collect();
    if xs.is_empty() {
        return Err(Error::EmptySupport { a, b });
    }
    Ok(xs)
}

/// `g_under`, `g_over` as the min and max of the Richardson boundary value
/// over [`support_samples`].
pub fn critical_drifts(field: &LogPotentialField, window: (f64, f64), delta: f64) -> Result<CriticalDrifts> {
    critical_drifts_with(field, window, delta, Execution::default())
}

pub fn critical_drifts_with(
    field: &LogPotentialField,
    window: (f64, f64),
    delta: f64,
    exec: Execution,
) -> Result<CriticalDrifts> {
    check_delta(delta)?;
    let xs = support_samples(field, window.0, window.1)?;
    if let Some(&x) = xs.iter().find(|&&x| field.is_atom(x)) {
        return Err(Error::Degenerate(x));
    }
    let values = exec::map_slice(exec, &xs, |&x| 2.0 * evaluate_U(field, x, 0.5 * delta) - evaluate_U(field, x, delta));
    let g_under = values.iter().copied().fold(f64::INFINITY, f64::min);
    let g_over = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CriticalDrifts { g_under, g_over, window })
}

/// One component `(a, b)` of `Λ_g`. A clipped end is the window edge rather
/// than a crossing of the level `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
    pub clipped_a: bool,
    pub clipped_b: bool,
}

/// `Λ_g = {x : U(x, 0) < g}` restricted to a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSet {
    pub g: f64,
    pub intervals: Vec<Interval>,
}

/// Intervals where `U(x, δ) < g` on a grid of step `h` over the window,
/// with every crossing refined by bisection to `h / 100`.
pub fn lambda_set(field: &LogPotentialField, g: f64, window: (f64, f64), h: f64) -> Result<LambdaSet> {
    lambda_set_with(field, g, window, h, BOUNDARY_DELTA, Execution::default())
}

pub fn lambda_set_with(
    field: &LogPotentialField,
    g: f64,
    window: (f64, f64),
    h: f64,
    delta: f64,
    exec: Execution,
) -> Result<LambdaSet> {
    let (a, b) = window;
    if !(g > 0.0) {
        return Err(Error::Domain(format!("drift must be positive, got {g}")));
    }
    if !(a < b) || !(h > 0.0) {
        return Err(Error::Domain(format!("need a < b and h > 0, got [{a}, {b}], h = {h}")));
    }
    check_delta(delta)?;
    let cells = ((b - a) / h).ceil().max(1.0) as usize;
    let xs: Vec<f64> = (0..=cells).map(|i| if i == cells { b } else { a + i as f64 * h }).collect();
    let inside = exec::map_slice(exec, &xs, |&x| evaluate_U(field, x, delta) < g);
    let below = |x: f64| evaluate_U(field, x, delta) < g;
    let refine = |mut out: f64, mut inn: f64| {
        while (out - inn).abs() > h / 100.0 {
            let mid = 0.5 * (out + inn);
            if below(mid) {
                inn = mid;
            } else {
                out = mid;
            }
        }
        0.5 * (out + inn)
    };
    let mut intervals = Vec::new();
    let mut i = 0;
    while i <= cells {
        if !inside[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < cells && inside[i + 1] {
            i += 1;
        }
        let (lo, clipped_a) = if start == 0 { (a, true) } else { (refine(xs[start - 1], xs[start]), false) };
        let (hi, clipped_b) = if i == cells { (b, true) } else { (refine(xs[i + 1], xs[i]), false) };
        intervals.push(Interval { a: lo, b: hi, clipped_a, clipped_b });
        i += 1;
    }
    Ok(LambdaSet { g, intervals })
}

/// Result of [`field_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldDistance {
    /// `max |F_a - F_b|` over the samples.
    pub max_abs: f64,
    /// The real `c` minimising `max |U_a - U_b - c|`.
    pub shift: f64,
    /// That minimal value.
    pub max_abs_shifted: f64,
}

/// Compares two fields on sample points with `Im z != 0`.
pub fn field_distance(a: &LogPotentialField, b: &LogPotentialField, samples: &[Complex64]) -> Result<FieldDistance> {
    field_distance_with(a, b, samples, Execution::default())
}

pub fn field_distance_with(
    a: &LogPotentialField,
    b: &LogPotentialField,
    samples: &[Complex64],
    exec: Execution,
) -> Result<FieldDistance> {
    if samples.is_empty() {
        return Err(Error::Domain("no sample points".into()));
    }
    if let Some(z) = samples.iter().find(|z| z.im == 0.0 || !z.im.is_finite()) {
        return Err(Error::Domain(format!("sample {z} lies on the real axis")));
    }
    let diffs = exec::map_slice(exec, samples, |&z| {
        // lower half plane by conjugation: F(conj z) = conj F(z)
        let w = Complex64::new(z.re, z.im.abs());
        let fa = log_sum(&a.energies, w) / a.n() as f64;
        let fb = log_sum(&b.energies, w) / b.n() as f64;
        ((fa - fb).norm(), fa.re - fb.re)
    });
    let max_abs = diffs.iter().map(|d| d.0).fold(0.0, f64::max);
    let hi = diffs.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = diffs.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
    Ok(FieldDistance { max_abs, shift: 0.5 * (hi + lo), max_abs_shifted: 0.5 * (hi - lo) })
}

/// `U` and `V` on the grid `xs × ys`, as CSV `x,y,U,V` (x varies fastest).
pub fn grid_csv(field: &LogPotentialField, xs: &[f64], ys: &[f64], exec: Execution) -> String {
    let points: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let values = exec::map_slice(exec, &points, |&(x, y)| (evaluate_U(field, x, y), evaluate_V(field, x, y)));
    let mut csv = Csv::new(&["x", "y", "U", "V"]);
    for (&(x, y), &(u, v)) in points.iter().zip(&values) {
        csv.row(&[x, y, u, v]);
    }
    csv.finish()
}
