//! The non-Hermitian operator `H_n^g`, its eigenvalues, and transfer matrices.
//!
//! `(H φ)_k = -e^{g} φ_{k+1} - e^{-g} φ_{k-1} + q_k φ_k`, periodic. With the
//! Hermitian energies `E_j` of the same potential, `z` is an eigenvalue iff
//!
//! `Q(z) := Π (E_j - z) = K := e^{ng} + e^{-ng} - 2 = (e^{ng/2} - e^{-ng/2})²`
//!
//! because the trace of the transfer matrix equals both `Q(z) + 2` and, at an
//! eigenvalue, `e^{ng} + e^{-ng}`. Everything is done in log space, so `ng`
//! far beyond the double range is fine.
//!
//! Real roots are located directly: between consecutive energies `ln|Q|` is
//! concave, so each gap holds zero or two roots, found in log-distance
//! coordinates relative to the nearest energy (roots can sit far closer to
//! an `E_j` than one ulp of `E_j`). The remaining roots come in conjugate
//! pairs; only the upper ones are iterated (Aberth, all roots updated at
//! once from the previous iterate), with the conjugates and the real roots
//! entering the correction sums.

use std::f64::consts::{LN_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::hermitian::SpectrumReal;
use crate::logpotential::{level_height_in, log_sum_with_resolvent};
use crate::potentials::Potential;
use crate::table::Csv;

/// `H_n^g` for a fixed potential.
#[derive(Debug, Clone, PartialEq)]
pub struct NhaOperator {
    potential: Potential,
    g: f64,
}

impl NhaOperator {
    pub fn new(potential: Potential, g: f64) -> Result<Self> {
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::Domain(format!("drift must be finite and >= 0, got {g}")));
        }
        Ok(NhaOperator { potential, g })
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn n(&self) -> usize {
        self.potential.len()
    }

    /// `ln K`, with `K = e^{ng} + e^{-ng} - 2`.
    pub fn log_k(&self) -> f64 {
        log_k(self.n(), self.g)
    }

    /// `g_n = (1/n) ln K = g + (2/n) ln(1 - e^{-ng})`: the level of `U_n`
    /// carrying the eigenvalues.
    pub fn level(&self) -> f64 {
        self.log_k() / self.n() as f64
    }
}

pub(crate) fn log_k(n: usize, g: f64) -> f64 {
    let ng = n as f64 * g;
    ng + 2.0 * (-(-ng).exp_m1()).ln()
}

/// Position of a real eigenvalue relative to a Hermitian energy:
/// `z = E[index] + sign e^{log_offset}`. The offset may be far below the
/// ulp of `E[index]` (or below the smallest double).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub index: usize,
    pub sign: f64,
    pub log_offset: f64,
}

impl Anchor {
    pub fn offset(&self) -> f64 {
        self.sign * self.log_offset.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub z: Complex64,
    /// `|(1/n) ln|Q(z)| - g_n|`.
    pub residual: f64,
    pub converged: bool,
    pub anchor: Option<Anchor>,
}

/// The `n` eigenvalues of `H_n^g`, sorted by `(Re, Im)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumComplex {
    eigenvalues: Vec<Eigenvalue>,
    g: f64,
    level: f64,
}

impl SpectrumComplex {
    pub fn eigenvalues(&self) -> &[Eigenvalue] {
        &self.eigenvalues
    }

    pub fn values(&self) -> Vec<Complex64> {
        self.eigenvalues.iter().map(|e| e.z).collect()
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn max_residual(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e.residual).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> usize {
        self.eigenvalues.iter().filter(|e| !e.converged).count()
    }

    /// Eigenvalues with `|Im z| > tol`.
    pub fn non_real(&self, tol: f64) -> Vec<Complex64> {
        self.eigenvalues.iter().map(|e| e.z).filter(|z| z.im.abs() > tol).collect()
    }

    /// CSV with header `re,im,residual`.
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["re", "im", "residual"]);
        for e in &self.eigenvalues {
            csv.row(&[e.z.re, e.z.im, e.residual]);
        }
        csv.finish()
    }
}

/// Knobs of the root finder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOptions {
    pub max_iterations: usize,
    pub exec: Execution,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions { max_iterations: 2000, exec: Execution::default() }
    }
}

/// All `n` eigenvalues of `H_n^g` from the Hermitian energies of the same
/// potential.
pub fn direct_spectrum(op: &NhaOperator, herm: &SpectrumReal) -> Result<SpectrumComplex> {
    direct_spectrum_with(op, herm, RootOptions::default())
}

pub fn direct_spectrum_with(op: &NhaOperator, herm: &SpectrumReal, opts: RootOptions) -> Result<SpectrumComplex> {
    if herm.n() != op.n() || herm.potential().values() != op.potential().values() {
        return Err(Error::Domain("Hermitian spectrum belongs to a different potential".into()));
    }
    if !(op.g() > 0.0) {
        return Err(Error::Domain("the direct spectrum needs g > 0".into()));
    }
    Ok(roots_from_energies(herm.energies(), op.g(), opts))
}

/// Roots of `Π(E_j - z) = e^{ng} + e^{-ng} - 2` for sorted `energies`.
pub fn roots_from_energies(energies: &[f64], g: f64, opts: RootOptions) -> SpectrumComplex {
    let n = energies.len();
    let lk = log_k(n, g);
    let solver = Solver { e: energies, lk };
    let mut roots = solver.real_roots();
    let m = (n - roots.len()) / 2;
    let upper = solver.complex_roots(m, &roots, opts);
    roots.extend(upper);
    for r in &mut roots {
        r.residual /= n as f64;
    }
    roots.sort_by(|a, b| a.z.re.total_cmp(&b.z.re).then(a.z.im.total_cmp(&b.z.im)));
    SpectrumComplex { eigenvalues: roots, g, level: lk / n as f64 }
}

/// End point on the real axis of the component of `{ln|Q(x)| < ln K}`
/// that contains `x`, or of the next one, searching left
/// (`right = false`) or right. `None` when no component lies that way.
pub(crate) fn arc_end(energies: &[f64], g: f64, x: f64, right: bool) -> Option<f64> {
    let n = energies.len();
    let solver = Solver { e: energies, lk: log_k(n, g) };
    let inside = solver.log_q_real(x, 1.0, f64::NEG_INFINITY).0 < solver.lk;
    // gap k is (E_k, E_{k+1}); -1 and n - 1 stand for the two outer regions
    let below = if right { energies.partition_point(|&e| e <= x) } else { energies.partition_point(|&e| e < x) };
    let k0 = below as isize - 1;
    let last = n as isize - 1;
    let crossing = |k: isize, pick_right: bool| -> Option<f64> {
        let k = k as usize;
        if energies[k] < energies[k + 1] {
            let c = solver.gap(k);
            c.get(if pick_right { 1 } else { 0 }).map(|r| r.z.re)
        } else {
            None
        }
    };
    let outer_left = || solver.outer(0, -1.0).map(|r| r.z.re);
    let outer_right = || solver.outer(n - 1, 1.0).map(|r| r.z.re);
    if right {
        if !inside {
            return match k0 {
                k if k == last => outer_right(),
                -1 => None,
                k => crossing(k, false).or(Some(x)),
            };
        }
        for k in k0.max(0)..last {
            if let Some(l) = crossing(k, false).filter(|&l| l > x) {
                return Some(l);
            }
        }
        outer_right()
    } else {
        if !inside {
            return match k0 {
                -1 => outer_left(),
                k if k == last => None,
                k => crossing(k, true).or(Some(x)),
            };
        }
        for k in (0..=k0.min(last - 1)).rev() {
            if let Some(r) = crossing(k, true).filter(|&r| r < x) {
                return Some(r);
            }
        }
        outer_left()
    }
}

/// Whether `ln|Q|` reaches `ln K` on `(E_{j-1}, E_j)`, the gap with exactly
/// `j` energies below it. The level line then dips to the real axis there.
pub(crate) fn gap_reaches_level(energies: &[f64], g: f64, j: usize) -> bool {
    if j == 0 || j >= energies.len() || !(energies[j - 1] < energies[j]) {
        return false;
    }
    let solver = Solver { e: energies, lk: log_k(energies.len(), g) };
    solver.gap_excess(j - 1).3 >= -solver.tangent_tol()
}

struct Solver<'a> {
    e: &'a [f64],
    lk: f64,
}

// Power-of-two window for running products.
const SCALE_HI: f64 = 1.0e90;
const SCALE_LO: f64 = 1.0e-90;
const HUGE: f64 = 1.0e120;

fn rescale(p: &mut f64, exp: &mut i64) {
    let m = p.abs();
    if !(SCALE_LO..=SCALE_HI).contains(&m) {
        let k = ((m.to_bits() >> 52) & 0x7ff) as i32 - 1023;
        *p *= f64::from_bits(((1023 - k) as u64) << 52);
        *exp += i64::from(k);
    }
}

impl Solver<'_> {
    /// `(ln|Q(x)|, d ln|Q(x)| / du)` at `x = anchor + sign e^u` (`sign = ±1`).
    /// Working with `u` keeps offsets far below the ulp of `anchor`, even
    /// below the smallest double.
    fn log_q_real(&self, anchor: f64, sign: f64, u: f64) -> (f64, f64) {
        let t = u.exp();
        let mut p = 1.0;
        let mut exp = 0i64;
        let mut side = 0.0;
        let mut slope = 0.0;
        for &e in self.e {
            let diff = e - anchor;
            if diff == 0.0 {
                side += u;
                slope += 1.0;
                continue;
            }
            // E - x = (E - anchor) - sign t
            let d = diff - sign * t;
            slope -= sign * t / d;
            if d.abs() > HUGE {
                side += d.abs().ln();
                continue;
            }
            p *= d;
            rescale(&mut p, &mut exp);
        }
        (p.abs().ln() + exp as f64 * LN_2 + side, slope)
    }

    /// Real roots, each with the nearest energy as anchor.
    fn real_roots(&self) -> Vec<Eigenvalue> {
        let n = self.e.len();
        let mut out = Vec::new();
        // left of the spectrum Q > 0 grows with the distance; on the right
        // the same holds for even n
        out.extend(self.outer(0, -1.0));
        if n.is_multiple_of(2) {
            out.extend(self.outer(n - 1, 1.0));
        }
        for j in 0..n - 1 {
            // Q > 0 on (E_j, E_{j+1}) iff an even number of energies lie below
            if (j + 1) % 2 == 0 && self.e[j] < self.e[j + 1] {
                out.extend(self.gap(j));
            }
        }
        out
    }

    fn outer(&self, index: usize, sign: f64) -> Option<Eigenvalue> {
        let mut hi = 0.0;
        while self.log_q_real(self.e[index], sign, hi).0 < self.lk && hi < 700.0 {
            hi += 4.0;
        }
        self.solve_log(index, sign, hi - 4.0, hi)
    }

    /// Peak of `ln|Q|` on `(E_j, E_{j+1})`: its location and log-offsets
    /// from both ends, and `ln|Q|` there minus `ln K`.
    fn gap_excess(&self, j: usize) -> (f64, f64, f64, f64) {
        let (a, b) = (self.e[j], self.e[j + 1]);
        let (xs, ul, ur) = if b - a > 1e-12 * a.abs().max(b.abs()).max(1.0) {
            let xs = self.gap_peak(a, b);
            (xs, (xs - a).ln(), (b - xs).ln())
        } else {
            // too narrow to resolve in x: the two neighbours dominate and
            // put the peak at the midpoint
            let half = (0.5 * (b - a)).ln();
            (a + 0.5 * (b - a), half, half)
        };
        let (peak, _) = self.log_q_real(a, 1.0, ul);
        (xs, ul, ur, peak - self.lk)
    }

    fn tangent_tol(&self) -> f64 {
        1e-13 * self.lk.abs().max(1.0)
    }

    /// Zero or two roots in `(E_j, E_{j+1})`.
    fn gap(&self, j: usize) -> Vec<Eigenvalue> {
        let (xs, ul, ur, excess) = self.gap_excess(j);
        let tangent_tol = self.tangent_tol();
        if excess < -tangent_tol {
            return Vec::new();
        }
        if excess <= tangent_tol {
            let anchor = if ul <= ur {
                Anchor { index: j, sign: 1.0, log_offset: ul }
            } else {
                Anchor { index: j + 1, sign: -1.0, log_offset: ur }
            };
            let ev = Eigenvalue {
                z: Complex64::new(xs, 0.0),
                residual: excess.abs(),
                converged: true,
                anchor: Some(anchor),
            };
            return vec![ev, ev];
        }
        let mut out = Vec::new();
        out.extend(self.solve_log(j, 1.0, ul - 64.0, ul));
        out.extend(self.solve_log(j + 1, -1.0, ur - 64.0, ur));
        out
    }

    /// Maximum of the concave `ln|Q|` on `(a, b)`: zero of its derivative.
    fn gap_peak(&self, a: f64, b: f64) -> f64 {
        let (mut lo, mut hi) = (a, b);
        let mut x = 0.5 * (a + b);
        for _ in 0..200 {
            let (mut s, mut ds) = (0.0, 0.0);
            for &e in self.e {
                let d = x - e;
                s += 1.0 / d;
                ds -= 1.0 / (d * d);
            }
            if s > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let next = x - s / ds;
            let tol = 4.0 * f64::EPSILON * x.abs().max(b - a);
            if (next - x).abs() <= tol || hi - lo <= tol {
                return next.clamp(lo, hi);
            }
            x = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        x
    }

    /// Solves `ln|Q(anchor + sign e^u)| = ln K` on `[lo, hi]`, where the
    /// left side increases with `u`, by safeguarded Newton in `u`; `lo` is
    /// widened if needed.
    fn solve_log(&self, index: usize, sign: f64, mut lo: f64, mut hi: f64) -> Option<Eigenvalue> {
        let anchor = self.e[index];
        let h = |u: f64| {
            let (l, s) = self.log_q_real(anchor, sign, u);
            (l - self.lk, s)
        };
        loop {
            let v = h(lo).0;
            if !(v > 0.0) {
                break;
            }
            if !(lo > -1e5) {
                return None;
            }
            // the slope tends to one as the offset shrinks
            hi = lo;
            lo -= v + 64.0;
        }
        // near `lo` the anchor term dominates and the slope is close to one
        let mut u = lo;
        let mut converged = false;
        for _ in 0..200 {
            let (v, dv) = h(u);
            if v > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let next = u - v / dv;
            let tol = 4.0 * f64::EPSILON * u.abs().max(1.0);
            if (next - u).abs() <= tol || hi - lo <= tol {
                u = next.clamp(lo, hi);
                converged = true;
                break;
            }
            u = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        Some(Eigenvalue {
            z: Complex64::new(anchor + sign * u.exp(), 0.0),
            residual: h(u).0.abs(),
            converged,
            anchor: Some(Anchor { index, sign, log_offset: u }),
        })
    }

    /// `(ln Q(z), Σ 1/(E_j - z))`.
    fn log_q(&self, z: Complex64) -> (Complex64, Complex64) {
        log_sum_with_resolvent(self.e, z)
    }

    /// `P'/P` for `P = Q - K`, from `ln(K/Q)`.
    fn log_derivative(&self, z: Complex64) -> (Complex64, f64) {
        let (lq, s) = self.log_q(z);
        let lr = Complex64::new(self.lk, 0.0) - lq;
        // P'/P = -S / (1 - K/Q); rewritten with Q/K when |K/Q| > 1
        let ratio = if lr.re > 0.0 {
            let inv = (-lr).exp();
            s * inv / (Complex64::new(1.0, 0.0) - inv)
        } else {
            -s / (Complex64::new(1.0, 0.0) - lr.exp())
        };
        (ratio, (lq.re - self.lk).abs())
    }

    /// Points of `{ln|Q(x)| = ln K}` on the real line, sorted. Between
    /// consecutive pairs the level line `U_n = g_n` rises into the upper
    /// half plane as a graph over `x`.
    fn level_crossings(&self) -> Vec<f64> {
        let n = self.e.len();
        let mut xs = Vec::new();
        xs.extend(self.outer(0, -1.0).map(|r| r.z.re));
        for j in 0..n - 1 {
            if self.e[j] < self.e[j + 1] {
                xs.extend(self.gap(j).into_iter().map(|r| r.z.re));
            }
        }
        xs.extend(self.outer(n - 1, 1.0).map(|r| r.z.re));
        xs.sort_by(f64::total_cmp);
        xs
    }

    /// `(y, θ)` on the upper level line over `x`, where
    /// `θ = -Σ arg(E_j - z)` increases along the line.
    fn level_point(&self, x: f64, level: f64) -> (f64, f64) {
        let y = level_height_in(self.e, x, level).unwrap_or(0.0);
        let theta: f64 = self.e.iter().map(|&e| -(-y).atan2(e - x)).sum();
        (y, theta)
    }

    /// Starting points for the `m` upper roots: each sits near the point of
    /// the level line where `θ` crosses a multiple of `2π`. Falls back to
    /// energy midpoints when the count does not come out as `m`.
    fn starting_points(&self, m: usize, real_roots: &[Eigenvalue], exec: Execution) -> Vec<Complex64> {
        let level = self.lk / self.e.len() as f64;
        let crossings = self.level_crossings();
        let mut grid = Vec::new();
        let mut targets = 0usize;
        for (arc, ends) in crossings.chunks_exact(2).enumerate() {
            let (a, b) = (ends[0], ends[1]);
            if !(a < b) {
                continue;
            }
            let (ta, tb) = (PI * self.count_below(a) as f64, PI * self.count_below(b) as f64);
            let inside = ((ta / TAU).floor() as usize + 1..).take_while(|&j| TAU * (j as f64) < tb).count();
            targets += inside;
            let cells = 2 * inside + 2;
            grid.push((a, true, arc));
            grid.extend((1..cells).map(|i| (a + (b - a) * i as f64 / cells as f64, false, arc)));
            grid.push((b, true, arc));
        }
        if targets != m {
            return self.midpoint_starts(m, real_roots, exec);
        }
        let pts = exec::map_slice(exec, &grid, |&(x, end, _)| {
            if end {
                (x, 0.0, PI * self.count_below(x) as f64)
            } else {
                let (y, t) = self.level_point(x, level);
                (x, y, t)
            }
        });
        let mut z = Vec::with_capacity(m);
        for (w, g) in pts.windows(2).zip(grid.windows(2)) {
            if g[0].2 != g[1].2 {
                continue;
            }
            let ((x0, y0, t0), (x1, y1, t1)) = (w[0], w[1]);
            let mut j = (t0 / TAU).floor() + 1.0;
            while TAU * j < t1 && z.len() < m {
                let s = ((TAU * j - t0) / (t1 - t0)).clamp(0.0, 1.0);
                let y = (y0 + s * (y1 - y0)).max(1e-8 * (x1 - x0).abs().max(1e-300));
                z.push(Complex64::new(x0 + s * (x1 - x0), y));
                j += 1.0;
            }
        }
        if z.len() != m {
            return self.midpoint_starts(m, real_roots, exec);
        }
        z
    }

    fn count_below(&self, x: f64) -> usize {
        self.e.partition_point(|&e| e < x)
    }

    /// Starting points from the energies not claimed by a real root, taken
    /// in consecutive pairs, each pair's midpoint lifted onto `U_n = g_n`.
    fn midpoint_starts(&self, m: usize, real_roots: &[Eigenvalue], exec: Execution) -> Vec<Complex64> {
        let n = self.e.len();
        let mut used = vec![false; n];
        for a in real_roots.iter().filter_map(|r| r.anchor) {
            // a tangent double root claims both neighbours
            let j = if used[a.index] {
                if a.sign > 0.0 {
                    a.index + 1
                } else {
                    a.index - 1
                }
            } else {
                a.index
            };
            used[j.min(n - 1)] = true;
        }
        let free: Vec<f64> = (0..n).filter(|&j| !used[j]).map(|j| self.e[j]).collect();
        let mids: Vec<(f64, f64)> = (0..m)
            .map(|k| match (free.get(2 * k), free.get(2 * k + 1)) {
                (Some(&a), Some(&b)) => (0.5 * (a + b), b - a),
                _ => {
                    let (lo, hi) = (self.e[0], self.e[n - 1]);
                    (lo + (hi - lo) * (k as f64 + 0.5) / m as f64, 0.0)
                }
            })
            .collect();
        let level = self.lk / n as f64;
        let mut z = exec::map_slice(exec, &mids, |&(x, width)| {
            Complex64::new(x, level_height_in(self.e, x, level).unwrap_or(width.max(1e-8)))
        });
        for k in 1..m {
            if z[k] == z[k - 1] {
                let bump = 1e-6 * z[k].im.max(1e-9);
                z[k].im += bump;
            }
        }
        z
    }

    fn complex_roots(&self, m: usize, real_roots: &[Eigenvalue], opts: RootOptions) -> Vec<Eigenvalue> {
        if m == 0 {
            return Vec::new();
        }
        let real: Vec<f64> = real_roots.iter().map(|r| r.z.re).collect();
        let mut z = self.starting_points(m, real_roots, opts.exec);
        let mut done = vec![false; m];
        let mut residual = vec![f64::INFINITY; m];
        let mut last = vec![f64::INFINITY; m];
        for _ in 0..opts.max_iterations {
            if done.iter().all(|&d| d) {
                break;
            }
            let prev = z.clone();
            let steps = exec::map_range(opts.exec, m, |i| {
                if done[i] {
                    return None;
                }
                let zi = prev[i];
                let (ratio, res) = self.log_derivative(zi);
                let mut pull = (zi - zi.conj()).inv();
                for (j, &zj) in prev.iter().enumerate() {
                    if j != i {
                        pull += (zi - zj).inv();
                    }
                    pull += (zi - zj.conj()).inv();
                }
                for &x in real.iter() {
                    pull += (zi - x).inv();
                }
                Some((ratio - pull, res))
            });
            for (i, step) in steps.into_iter().enumerate() {
                let Some((den, res)) = step else { continue };
                residual[i] = res;
                let dz = den.inv();
                if !dz.re.is_finite() || !dz.im.is_finite() {
                    continue;
                }
                let mut next = z[i] - dz;
                if next.im < 0.0 {
                    next = next.conj();
                }
                let size = dz.norm();
                let scale = next.norm().max(1.0);
                // a small step that no longer shrinks is rounding noise
                if size <= 4.0 * f64::EPSILON * scale || (size <= 1e-10 * scale && size >= last[i]) {
                    done[i] = true;
                }
                last[i] = size;
                z[i] = next;
            }
        }
        let finals = exec::map_range(opts.exec, m, |i| self.log_derivative(z[i]).1);
        (0..m)
            .flat_map(|i| {
                let ev = Eigenvalue { z: z[i], residual: finals[i], converged: done[i], anchor: None };
                [ev, Eigenvalue { z: z[i].conj(), ..ev }]
            })
            .collect()
    }
}

/// `S_n(z) = A_n … A_1`, `A_k = [[q_k - z, -1], [1, 0]]`, stored as
/// `e^{log_scale} · matrix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferProduct {
    pub matrix: [[Complex64; 2]; 2],
    pub log_scale: f64,
    pub z: Complex64,
    pub n: usize,
}

impl TransferProduct {
    /// `ln tr S_n(z)` on some branch (`-∞` real part for a zero trace).
    pub fn log_trace(&self) -> Complex64 {
        (self.matrix[0][0] + self.matrix[1][1]).ln() + self.log_scale
    }

    /// `ln det S_n(z)`, ideally `0`.
    pub fn log_det(&self) -> Complex64 {
        let [[a, b], [c, d]] = self.matrix;
        (a * d - b * c).ln() + 2.0 * self.log_scale
    }

    /// `|det S_n(z) - 1|`. Rounding limits this to about `ε e^{2 n γ}`, so
    /// it is meaningful only while `n γ` is moderate.
    pub fn det_residual(&self) -> f64 {
        (self.log_det().exp() - 1.0).norm()
    }

    /// `ln|λ_n(z)|`, `λ_n` the eigenvalue of largest modulus. Never negative:
    /// it is half the log-ratio of the two eigenvalue moduli.
    pub fn log_dominant(&self) -> f64 {
        let t = self.matrix[0][0] + self.matrix[1][1];
        let log_t = t.norm().ln() + self.log_scale;
        if log_t > 20.0 {
            // λ = T (1 + sqrt(1 - 4/T²)) / 2 with 4/T² below rounding
            return log_t;
        }
        let tr = t * self.log_scale.exp();
        let s = (tr * tr - 4.0).sqrt();
        let (p, m) = ((tr + s).norm(), (tr - s).norm());
        0.5 * (p.ln() - m.ln()).abs()
    }
}

/// The transfer product for the whole potential at `z`, rescaled every step.
pub fn transfer_product(p: &Potential, z: Complex64) -> TransferProduct {
    transfer_product_of(p.values(), z)
}

pub fn transfer_product_of(q: &[f64], z: Complex64) -> TransferProduct {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut m = [[one, zero], [zero, one]];
    let mut log_scale = 0.0;
    for (k, &qk) in q.iter().enumerate() {
        let d = qk - z;
        let top = [d * m[0][0] - m[1][0], d * m[0][1] - m[1][1]];
        m = [top, m[0]];
        if k == 0 {
            // a single step stays unscaled
            continue;
        }
        let big = m.iter().flatten().map(|x| x.re.abs().max(x.im.abs())).fold(0.0, f64::max);
        if big > 0.0 && big.is_finite() {
            let e = ((big.to_bits() >> 52) & 0x7ff) as i32 - 1023;
            let s = f64::from_bits(((1023 - e) as u64) << 52);
            for x in m.iter_mut().flatten() {
                *x *= s;
            }
            log_scale += f64::from(e) * LN_2;
        }
    }
    TransferProduct { matrix: m, log_scale, z, n: q.len() }
}

/// `|tr S_n(z) - (Π(E_j - z) + 2)| / (1 + |Π(E_j - z)|)`, in log space.
pub fn trace_identity_residual(p: &Potential, herm: &SpectrumReal, z: Complex64) -> Result<f64> {
    if herm.n() != p.len() {
        return Err(Error::Domain("Hermitian spectrum has the wrong size".into()));
    }
    let tp = transfer_product(p, z);
    let lq = Solver { e: herm.energies(), lk: 0.0 }.log_q(z).0;
    let t = tp.matrix[0][0] + tp.matrix[1][1];
    // common scale e^{c} with c >= 0 so that every term is representable
    let c = tp.log_scale.max(lq.re).max(0.0);
    let lhs = t * (tp.log_scale - c).exp();
    let rhs = (lq - c).exp() + 2.0 * (-c).exp();
    let denom = (-c).exp() + (lq.re - c).exp();
    Ok((lhs - rhs).norm() / denom)
}

/// `(1/n) ln|λ_n(z)|`, `Im z ≠ 0`.
pub fn lyapunov_estimate(p: &Potential, z: Complex64) -> Result<f64> {
    if z.im == 0.0 || !z.im.is_finite() || !z.re.is_finite() {
        return Err(Error::Domain(format!("the Lyapunov estimate needs Im z != 0, got {z}")));
    }
    Ok(transfer_product(p, z).log_dominant() / p.len() as f64)
}

/// One row of a Lyapunov sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSample {
    pub z: Complex64,
    pub gamma: f64,
    pub u_n: f64,
}

/// `γ_n(z)` next to `U_n(z)` for each sample point.
pub fn lyapunov_sweep(
    p: &Potential,
    field: &crate::logpotential::LogPotentialField,
    zs: &[Complex64],
    exec: Execution,
) -> Result<Vec<LyapunovSample>> {
    if let Some(z) = zs.iter().find(|z| z.im == 0.0) {
        return Err(Error::Domain(format!("sample {z} lies on the real axis")));
    }
    Ok(exec::map_slice(exec, zs, |&z| LyapunovSample {
        z,
        gamma: transfer_product(p, z).log_dominant() / p.len() as f64,
        u_n: crate::logpotential::evaluate_U(field, z.re, z.im),
    }))
}

/// CSV with header `re_z,im_z,gamma,U_n`.
pub fn lyapunov_csv(samples: &[LyapunovSample]) -> String {
    let mut csv = Csv::new(&["re_z", "im_z", "gamma", "U_n"]);
    for s in samples {
        csv.row(&[s.z.re, s.z.im, s.gamma, s.u_n]);
    }
    csv.finish()
}
