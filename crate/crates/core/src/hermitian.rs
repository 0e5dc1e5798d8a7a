//! The self-adjoint reference operator `H_n^0` and its eigenvalue counting function.
//!
//! `H_n^0` is the Jacobi matrix with diagonal `q_k` and off-diagonal `-1`;
//! periodic boundary conditions add the corner couplings `(1, n)` and
//! `(n, 1)`. For `n = 2` the corner and the regular coupling coincide and
//! merge into a single `-2`.
//!
//! Eigenvalues come from inertia counting. `H - E` is factored as `L D Lᵀ`
//! with site `n` kept last, so the periodic corner only creates fill in the
//! last column; by Sylvester's law the number of negative pivots is the
//! number of eigenvalues below `E`. Brackets are isolated by bisection and
//! then polished with safeguarded Newton steps on `ln |det(H - E)|`, whose
//! derivative comes out of the same recurrence. The cost is `O(n)` per count
//! and every entry enters only through `q_k - E`, so huge diagonal peaks do
//! not pollute the small eigenvalues.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::potentials::Potential;
use crate::table::Csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Dirichlet,
}

/// Sorted eigenvalues of `H_n^0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReal {
    energies: Vec<f64>,
    boundary: Boundary,
    potential: Potential,
}

impl SpectrumReal {
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn n(&self) -> usize {
        self.energies.len()
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn ids(&self) -> EmpiricalIds {
        EmpiricalIds::new(self.energies.clone())
    }

    /// CSV with header `index,E`.
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["index", "E"]);
        for (i, &e) in self.energies.iter().enumerate() {
            csv.indexed_row(i, &[e]);
        }
        csv.finish()
    }
}

/// `E_k = -2 cos(2πk/n)`, sorted: the periodic spectrum of `q ≡ 0`.
pub fn free_periodic_energies(n: usize) -> Vec<f64> {
    let mut e: Vec<f64> = (0..n).map(|k| -2.0 * (2.0 * PI * k as f64 / n as f64).cos()).collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Eigenvalues of `H_n^0` with the given boundary condition.
pub fn eigenvalues_hermitian(p: &Potential, bc: Boundary) -> Result<SpectrumReal> {
    eigenvalues_hermitian_with(p, bc, Execution::default())
}

pub fn eigenvalues_hermitian_with(p: &Potential, bc: Boundary, exec: Execution) -> Result<SpectrumReal> {
    let n = p.len();
    if n < 2 {
        return Err(Error::InvalidSize(n));
    }
    if let Some((site, &value)) = p.values().iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { site, value });
    }
    let jacobi = Jacobi::new(p.values(), bc);
    let energies = jacobi.eigenvalues(exec);
    debug_assert_eq!(energies.len(), n);
    Ok(SpectrumReal { energies, boundary: bc, potential: p.clone() })
}

/// Spectrum from already-known energies (sorted on entry).
pub fn spectrum_from_energies(mut energies: Vec<f64>, potential: Potential, boundary: Boundary) -> SpectrumReal {
    energies.sort_by(f64::total_cmp);
    SpectrumReal { energies, boundary, potential }
}

struct Jacobi<'a> {
    diag: &'a [f64],
    bc: Boundary,
    /// Pivots smaller than this (relative to `1 + |E|`) are replaced by it.
    /// A relative perturbation of this size is within the rounding of the
    /// entries and keeps the border column from overflowing.
    pivmin: f64,
}

#[derive(Clone, Copy)]
struct Inertia {
    below: usize,
    /// `d/dE ln|det(H - E)|`
    log_det_slope: f64,
}

impl<'a> Jacobi<'a> {
    fn new(diag: &'a [f64], bc: Boundary) -> Self {
        Jacobi { diag, bc, pivmin: f64::EPSILON }
    }

    fn guard(&self, d: f64, e: f64) -> f64 {
        let floor = self.pivmin * (1.0 + e.abs());
        if d.abs() < floor {
            -floor
        } else {
            d
        }
    }

    /// Inertia of `H - E` from a block `L D Lᵀ` factorization.
    ///
    /// The chain `1..m` (with `m = n - 1` for periodic, `n` for Dirichlet) is
    /// eliminated with 1×1 or 2×2 pivots (Bunch's rule for tridiagonals, with
    /// the local scale `max(|b|, |c|)`); the periodic border row `n` only
    /// collects Schur-complement updates and is closed together with the last
    /// chain row as a final 2×2 block. Block pivots keep the multipliers
    /// bounded near (multiple) eigenvalues of leading submatrices.
    fn inertia(&self, e: f64) -> Inertia {
        self.factor::<true>(e)
    }

    fn count(&self, e: f64) -> usize {
        self.factor::<false>(e).below
    }

    /// Block LDL^T of `H - E` with the last site as a border row. `SLOPE`
    /// also carries the derivative of every pivot.
    fn factor<const SLOPE: bool>(&self, e: f64) -> Inertia {
        const ALPHA: f64 = 0.618_033_988_749_894_8;
        let q = self.diag;
        let n = q.len();
        let (m, b2, bordered): (usize, f64, bool) = match (self.bc, n) {
            (Boundary::Periodic, 2) => (2, 4.0, false),
            (Boundary::Periodic, _) => (n - 1, 1.0, true),
            (Boundary::Dirichlet, _) => (n, 1.0, false),
        };
        let b = b2.sqrt();
        // initial border entry of chain row j >= 1 (b = -1 whenever bordered)
        let border0 = |j: usize| if bordered && j + 1 == m { -1.0 } else { 0.0 };

        let mut below = 0usize;
        let mut slope = 0.0;
        let (mut d, mut dd) = (q[0] - e, -1.0);
        let (mut u, mut du) = (if bordered { -1.0 } else { 0.0 }, 0.0);
        let (mut s, mut ds) = (if bordered { q[n - 1] - e } else { 0.0 }, -1.0);
        let mut k = 0;
        loop {
            if k + 1 == m {
                if bordered {
                    let (neg, sl) = self.block2(d, dd, u, du, s, ds);
                    below += neg;
                    slope += sl;
                } else {
                    let d = self.guard(d, e);
                    below += usize::from(d < 0.0);
                    slope += dd / d;
                }
                break;
            }
            let c = q[k + 1] - e;
            if d.abs() * b.max(c.abs()) >= ALPHA * b2 {
                let piv = self.guard(d, e);
                below += usize::from(piv < 0.0);
                let inv = 1.0 / piv;
                if bordered {
                    let ui = u * inv;
                    s -= u * ui;
                    if SLOPE {
                        ds -= 2.0 * ui * du - ui * ui * dd;
                        du = du * inv - u * dd * inv * inv;
                    }
                    u = border0(k + 1) + ui;
                }
                if SLOPE {
                    slope += dd * inv;
                    dd = -1.0 + b2 * dd * inv * inv;
                }
                d = c - b2 * inv;
                k += 1;
            } else {
                let (neg, sl) = self.block2(d, dd, -b, 0.0, c, -1.0);
                below += neg;
                slope += sl;
                let det = self.guard_det(d, b2, c);
                let ddet = dd * c - d;
                let det2 = det * det;
                let (w1, dw1, w2) = (u, du, border0(k + 1));
                if bordered {
                    let num = c * w1 * w1 + 2.0 * w1 * w2 + d * w2 * w2;
                    let dnum = -w1 * w1 + 2.0 * c * w1 * dw1 + 2.0 * dw1 * w2 + dd * w2 * w2;
                    s -= num / det;
                    ds -= (dnum * det - num * ddet) / det2;
                }
                if k + 2 == m {
                    if bordered {
                        let s = self.guard(s, e);
                        below += usize::from(s < 0.0);
                        slope += ds / s;
                    }
                    break;
                }
                let r = d / det;
                let dr = (dd * det - d * ddet) / det2;
                if bordered {
                    let v = (w1 + d * w2) / det;
                    let dv = ((dw1 + dd * w2) * det - (w1 + d * w2) * ddet) / det2;
                    u = border0(k + 2) + v;
                    du = dv;
                }
                d = q[k + 2] - e - b2 * r;
                dd = -1.0 - b2 * dr;
                k += 2;
            }
        }
        Inertia { below, log_det_slope: slope }
    }

    /// Keeps `det = a c - b^2` away from an exact zero without swamping tiny
    /// but meaningful values near a degenerate pair.
    fn guard_det(&self, a: f64, b2: f64, c: f64) -> f64 {
        let det = a * c - b2;
        if det == 0.0 {
            -(self.pivmin * (a * c).abs().max(b2)).max(f64::MIN_POSITIVE)
        } else {
            det
        }
    }

    /// Negative eigenvalues and `d/dE ln|det|` of `[[a, b], [b, c]]`.
    fn block2(&self, a: f64, da: f64, b: f64, db: f64, c: f64, dc: f64) -> (usize, f64) {
        let det = self.guard_det(a, b * b, c);
        let ddet = da * c + a * dc - 2.0 * b * db;
        let neg = if det < 0.0 {
            1
        } else if a + c < 0.0 {
            2
        } else {
            0
        };
        (neg, ddet / det)
    }

    fn bounds(&self) -> (f64, f64) {
        let lo = self.diag.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Gershgorin: every row has off-diagonal mass 2
        let pad = 2.0 + 1e-8 * (1.0 + lo.abs().max(hi.abs()));
        (lo - pad, hi + pad)
    }

    fn eigenvalues(&self, exec: Execution) -> Vec<f64> {
        let n = self.diag.len();
        let (lo, hi) = self.bounds();
        // Coarse cells are refined independently (and in parallel).
        let cells = (n / 16).clamp(1, 256);
        // uniform cuts plus diagonal quantiles, so that a few huge entries do
        // not squeeze the bulk of the spectrum into a single cell
        let mut sorted = self.diag.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut cuts: Vec<f64> = (1..cells)
            .flat_map(|i| {
                let t = i as f64 / cells as f64;
                [lo + (hi - lo) * t, sorted[i * n / cells]]
            })
            .filter(|&x| x > lo && x < hi)
            .collect();
        cuts.push(lo);
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let cells = cuts.len() - 1;
        let mut counts = exec::map_slice(exec, &cuts, |&x| self.count(x));
        counts[0] = 0;
        counts[cells] = n;
        for i in 1..=cells {
            counts[i] = counts[i].max(counts[i - 1]);
        }
        let found = exec::map_range(exec, cells, |i| {
            let mut out = Vec::new();
            if counts[i + 1] > counts[i] {
                self.isolate(cuts[i], cuts[i + 1], counts[i], counts[i + 1], &mut out);
            }
            out
        });
        let mut all: Vec<f64> = found.into_iter().flatten().collect();
        all.sort_by(f64::total_cmp);
        all
    }

    fn tol(lo: f64, hi: f64) -> f64 {
        4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0)
    }

    fn split(lo: f64, hi: f64) -> f64 {
        // geometric splitting for brackets spanning many orders of magnitude
        if lo >= 0.0 && hi > 1e3 * lo.max(1.0) {
            (lo.max(1.0) * hi).sqrt()
        } else if hi <= 0.0 && -lo > 1e3 * (-hi).max(1.0) {
            -((-hi).max(1.0) * -lo).sqrt()
        } else if lo < 0.0 && hi > 0.0 && hi - lo > 1e3 {
            0.0
        } else {
            0.5 * (lo + hi)
        }
    }

    /// Push every eigenvalue in `[lo, hi)`, given the counts at both ends.
    fn isolate(&self, lo: f64, hi: f64, c_lo: usize, c_hi: usize, out: &mut Vec<f64>) {
        let mut stack = vec![(lo, hi, c_lo, c_hi)];
        while let Some((lo, hi, c_lo, c_hi)) = stack.pop() {
            let m = c_hi - c_lo;
            if m == 0 {
                continue;
            }
            if m == 1 {
                out.push(self.polish(lo, hi, c_lo, 1));
                continue;
            }
            if hi - lo <= Self::tol(lo, hi) {
                out.extend(std::iter::repeat_n(0.5 * (lo + hi), m));
                continue;
            }
            if hi - lo <= 1e-6 * lo.abs().max(hi.abs()).max(1.0) {
                if let Some(x) = self.try_cluster(lo, hi, c_lo, c_hi) {
                    out.extend(std::iter::repeat_n(x, m));
                    continue;
                }
            }
            let mid = Self::split(lo, hi);
            let c_mid = self.count(mid).clamp(c_lo, c_hi);
            stack.push((mid, hi, c_mid, c_hi));
            stack.push((lo, mid, c_lo, c_mid));
        }
    }

    /// Newton with multiplicity `m` for a tight cluster; accepts it when the
    /// whole cluster sits inside a few ulps of the limit point.
    fn try_cluster(&self, lo: f64, hi: f64, c_lo: usize, c_hi: usize) -> Option<f64> {
        let m = (c_hi - c_lo) as f64;
        let mut x = 0.5 * (lo + hi);
        for _ in 0..60 {
            let slope = self.inertia(x).log_det_slope;
            let step = -m / slope;
            let next = x + step;
            if !(next > lo && next < hi) || !step.is_finite() {
                return None;
            }
            x = next;
            if step.abs() <= Self::tol(x, x) {
                let k = 16.0 * Self::tol(x, x);
                let (a, b) = (x - k, x + k);
                if self.count(a) <= c_lo && self.count(b) >= c_hi {
                    return Some(x);
                }
                return None;
            }
        }
        None
    }

    /// Safeguarded Newton for the single eigenvalue in `[lo, hi)`.
    fn polish(&self, mut lo: f64, mut hi: f64, c_lo: usize, m: usize) -> f64 {
        let mut x = Self::split(lo, hi);
        let mut checkpoint = hi - lo;
        for it in 1..=300 {
            if hi - lo <= Self::tol(lo, hi) {
                return 0.5 * (lo + hi);
            }
            let Inertia { below, log_det_slope } = self.inertia(x);
            if below > c_lo {
                hi = x;
            } else {
                lo = x;
            }
            let step = -(m as f64) / log_det_slope;
            let next = x + step;
            let newton_ok = step.is_finite() && next > lo && next < hi;
            if step.abs() <= Self::tol(x, x) {
                return next.clamp(lo, hi);
            }
            // fall back to bisection when Newton leaves the bracket or stalls
            let stalled = it % 4 == 0 && hi - lo > 0.25 * checkpoint;
            if it % 4 == 0 {
                checkpoint = hi - lo;
            }
            x = if newton_ok && !stalled { next } else { Self::split(lo, hi) };
        }
        0.5 * (lo + hi)
    }
}

/// `N_n(E) = (1/n) #{E_i < E}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalIds {
    energies: Vec<f64>,
}

impl EmpiricalIds {
    pub fn new(mut energies: Vec<f64>) -> Self {
        energies.sort_by(f64::total_cmp);
        EmpiricalIds { energies }
    }

    pub fn n(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    fn below(&self, e: f64) -> usize {
        self.energies.partition_point(|&x| x < e)
    }

    fn at_or_below(&self, e: f64) -> usize {
        self.energies.partition_point(|&x| x <= e)
    }

    /// CSV `E,N` on the given grid.
    pub fn to_csv(&self, grid: &[f64]) -> String {
        let mut csv = Csv::new(&["E", "N"]);
        for &e in grid {
            csv.row(&[e, ids_at(self, e)]);
        }
        csv.finish()
    }
}

pub fn ids_at(ids: &EmpiricalIds, e: f64) -> f64 {
    if ids.energies.is_empty() {
        return 0.0;
    }
    ids.below(e) as f64 / ids.n() as f64
}

/// `|N_n(E + σ) - N_n(E)| · |ln |σ||` for each `σ`.
pub fn log_holder_modulus(ids: &EmpiricalIds, e: f64, sigmas: &[f64]) -> Result<Vec<f64>> {
    sigmas
        .iter()
        .map(|&s| {
            if s == 0.0 || s.abs() > 0.5 || !s.is_finite() {
                return Err(Error::Domain(format!("need 0 < |sigma| <= 1/2, got {s}")));
            }
            Ok((ids_at(ids, e + s) - ids_at(ids, e)).abs() * s.abs().ln().abs())
        })
        .collect()
}

/// `N_n(B) - N_n(-B)` for each `B`.
pub fn tightness_profile(ids: &EmpiricalIds, b_list: &[f64]) -> Result<Vec<f64>> {
    b_list
        .iter()
        .map(|&b| {
            if !(b > 0.0) {
                return Err(Error::Domain(format!("need B > 0, got {b}")));
            }
            Ok(ids_at(ids, b) - ids_at(ids, -b))
        })
        .collect()
}

/// `sup_E |N_a(E) - N_b(E)|`, evaluated at and just above every eigenvalue of either.
pub fn ids_distance(a: &EmpiricalIds, b: &EmpiricalIds) -> f64 {
    let (na, nb) = (a.n().max(1) as f64, b.n().max(1) as f64);
    let mut best: f64 = 0.0;
    for &x in a.energies.iter().chain(b.energies.iter()) {
        let left = (a.below(x) as f64 / na - b.below(x) as f64 / nb).abs();
        let right = (a.at_or_below(x) as f64 / na - b.at_or_below(x) as f64 / nb).abs();
        best = best.max(left).max(right);
    }
    best
}
