//! Diagonal potentials `q_1..q_n` and their growth statistics.
//!
//! A [`PotentialSpec`] is a rule; [`realize`] turns it into a finite
//! [`Potential`]. Realization is deterministic and prefix-consistent: the
//! first `n` sites of a length-`m` realization equal the length-`n` one.
//!
//! Rare-peak amplitudes such as `e^{2^j}` do not fit in an `f64`. Peak sites
//! therefore carry their exact `ln(1 + |q|)` next to the (possibly capped)
//! matrix entry, and every logarithmic statistic reads the exact value.

use std::f64::consts::PI;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::Csv;

/// `(sqrt(5) - 1) / 2`
pub const GOLDEN_FREQUENCY: f64 = 0.618_033_988_749_894_8;

/// Seed of the reference two-band configuration used by the default
/// experiment and the regression tests.
pub const REFERENCE_SEED: u64 = 7;

fn default_frequency() -> f64 {
    GOLDEN_FREQUENCY
}

fn default_scale() -> f64 {
    1.0
}

/// Single-site law of an i.i.d. potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    /// Uniform on `[low, high)`; one draw per site.
    Uniform { low: f64, high: f64 },
    /// Uniform on `[-outer, -inner] ∪ [inner, outer]`: one draw for the sign
    /// (negative when `u < 1/2`), then one draw for the magnitude.
    SymmetricBands { inner: f64, outer: f64 },
    /// `high` with probability `p`, else `low`; one draw per site.
    Bernoulli { low: f64, high: f64, p: f64 },
}

impl Distribution {
    /// The two-band law `[-4,-3] ∪ [3,4]`.
    pub fn two_band() -> Self {
        Distribution::SymmetricBands { inner: 3.0, outer: 4.0 }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Distribution::SymmetricBands { inner, outer } => {
                inner.is_finite() && outer.is_finite() && 0.0 <= inner && inner <= outer
            }
            Distribution::Bernoulli { low, high, p } => low.is_finite() && high.is_finite() && (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Spec(format!("malformed distribution {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha20Rng) -> f64 {
        match *self {
            Distribution::Uniform { low, high } => low + (high - low) * unit(rng),
            Distribution::SymmetricBands { inner, outer } => {
                let negative = unit(rng) < 0.5;
                let m = inner + (outer - inner) * unit(rng);
                if negative {
                    -m
                } else {
                    m
                }
            }
            Distribution::Bernoulli { low, high, p } => {
                if unit(rng) < p {
                    high
                } else {
                    low
                }
            }
        }
    }
}

/// Uniform `[0, 1)` from the top 53 bits of one ChaCha20 output word.
fn unit(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Where the peaks of a sparse potential sit (1-based sites, strictly increasing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum PositionRule {
    /// `k_j = j^2`
    Squares,
    /// `k_j = 2^j`
    PowersOfTwo,
    /// An explicit list.
    Explicit { sites: Vec<usize> },
}

impl PositionRule {
    /// `k_j` for `j = 1, 2, ...` up to and including `n`.
    pub fn sites_up_to(&self, n: usize) -> Vec<usize> {
        match self {
            PositionRule::Squares => (1..).map(|j: usize| j * j).take_while(|&k| k <= n).collect(),
            PositionRule::PowersOfTwo => (1..usize::BITS - 1).map(|j| 1usize << j).take_while(|&k| k <= n).collect(),
            PositionRule::Explicit { sites } => sites.iter().copied().take_while(|&k| k <= n).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let PositionRule::Explicit { sites } = self {
            if sites.first() == Some(&0) || sites.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Spec("explicit peak sites must be >= 1 and strictly increasing".into()));
            }
        }
        Ok(())
    }
}

/// Size of the peak at `k_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum AmplitudeRule {
    /// `v_{k_j} = e^{scale * j}`
    ExpIndex {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `v_{k_j} = e^{scale * k_j}`
    ExpPosition {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    Constant {
        value: f64,
    },
}

impl AmplitudeRule {
    /// Exact `ln(1 + |v_{k_j}|)`.
    pub fn log1p_amplitude(&self, j: usize, site: usize) -> f64 {
        match *self {
            AmplitudeRule::ExpIndex { scale } => softplus(scale * j as f64),
            AmplitudeRule::ExpPosition { scale } => softplus(scale * site as f64),
            AmplitudeRule::Constant { value } => value.abs().ln_1p(),
        }
    }

    /// The amplitude as a matrix entry, capped at `f64::MAX`.
    pub fn amplitude(&self, j: usize, site: usize) -> f64 {
        match *self {
            AmplitudeRule::ExpIndex { scale } => capped_exp(scale * j as f64),
            AmplitudeRule::ExpPosition { scale } => capped_exp(scale * site as f64),
            AmplitudeRule::Constant { value } => value,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn capped_exp(x: f64) -> f64 {
    let v = x.exp();
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

/// A rule producing the diagonal values of the operator.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Constant {
        value: f64,
    },
    Iid {
        distribution: Distribution,
        seed: u64,
    },
    /// `q_k = amplitude * cos(2π frequency k + phase)`
    Quasiperiodic {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// `q_k = pattern[(k - 1) mod len]`
    Periodic {
        pattern: Vec<f64>,
    },
    /// `q_k = strength / k`
    Decaying {
        strength: f64,
    },
    SparsePeaks {
        positions: PositionRule,
        amplitudes: AmplitudeRule,
    },
    /// Elementwise `base + peaks`; `peaks` must be a sparse-peak family.
    Composite {
        base: Box<PotentialSpec>,
        peaks: Box<PotentialSpec>,
    },
}

impl PotentialSpec {
    pub fn family(&self) -> &'static str {
        match self {
            PotentialSpec::Constant { .. } => "constant",
            PotentialSpec::Iid { .. } => "iid",
            PotentialSpec::Quasiperiodic { .. } => "quasiperiodic",
            PotentialSpec::Periodic { .. } => "periodic",
            PotentialSpec::Decaying { .. } => "decaying",
            PotentialSpec::SparsePeaks { .. } => "sparse_peaks",
            PotentialSpec::Composite { .. } => "composite",
        }
    }

    /// i.i.d. samples of the two-band law `[-4,-3] ∪ [3,4]`.
    pub fn two_band(seed: u64) -> Self {
        PotentialSpec::Iid { distribution: Distribution::two_band(), seed }
    }

    /// Golden-mean quasiperiodic potential with phase 0.
    pub fn golden(amplitude: f64) -> Self {
        PotentialSpec::Quasiperiodic { amplitude, frequency: GOLDEN_FREQUENCY, phase: 0.0 }
    }

    /// Peaks `e^j` at `j^2`.
    pub fn square_peaks() -> Self {
        PotentialSpec::SparsePeaks {
            positions: PositionRule::Squares,
            amplitudes: AmplitudeRule::ExpIndex { scale: 1.0 },
        }
    }

    /// Peaks `e^{2^j}` at `2^j`.
    pub fn dyadic_peaks() -> Self {
        PotentialSpec::SparsePeaks {
            positions: PositionRule::PowersOfTwo,
            amplitudes: AmplitudeRule::ExpPosition { scale: 1.0 },
        }
    }

    pub fn with_peaks(self, peaks: PotentialSpec) -> Self {
        PotentialSpec::Composite { base: Box::new(self), peaks: Box::new(peaks) }
    }

    /// Seeds of every i.i.d. component, outermost first.
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            PotentialSpec::Iid { seed, .. } => vec![*seed],
            PotentialSpec::Composite { base, peaks } => {
                let mut s = base.seeds();
                s.extend(peaks.seeds());
                s
            }
            _ => Vec::new(),
        }
    }

    /// Replace the seed of every i.i.d. component.
    pub fn reseed(&mut self, new_seed: u64) {
        match self {
            PotentialSpec::Iid { seed, .. } => *seed = new_seed,
            PotentialSpec::Composite { base, peaks } => {
                base.reseed(new_seed);
                peaks.reseed(new_seed);
            }
            _ => {}
        }
    }

    fn sparse_rules(&self) -> Option<(&PositionRule, &AmplitudeRule)> {
        match self {
            PotentialSpec::SparsePeaks { positions, amplitudes } => Some((positions, amplitudes)),
            PotentialSpec::Composite { peaks, .. } => peaks.sparse_rules(),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Spec(format!("{name} must be finite")))
            }
        };
        match self {
            PotentialSpec::Constant { value } => finite("value", *value),
            PotentialSpec::Iid { distribution, .. } => distribution.validate(),
            PotentialSpec::Quasiperiodic { amplitude, frequency, phase } => {
                finite("amplitude", *amplitude)?;
                finite("frequency", *frequency)?;
                finite("phase", *phase)
            }
            PotentialSpec::Periodic { pattern } => {
                if pattern.is_empty() {
                    return Err(Error::Spec("periodic pattern is empty".into()));
                }
                pattern.iter().try_for_each(|&v| finite("pattern entry", v))
            }
            PotentialSpec::Decaying { strength } => finite("strength", *strength),
            PotentialSpec::SparsePeaks { positions, amplitudes } => {
                positions.validate()?;
                match *amplitudes {
                    AmplitudeRule::ExpIndex { scale } | AmplitudeRule::ExpPosition { scale } => finite("scale", scale),
                    AmplitudeRule::Constant { value } => finite("value", value),
                }
            }
            PotentialSpec::Composite { base, peaks } => {
                if !matches!(**peaks, PotentialSpec::SparsePeaks { .. }) {
                    return Err(Error::Spec("composite peaks must be a sparse_peaks family".into()));
                }
                base.validate()?;
                peaks.validate()
            }
        }
    }
}

/// A realized potential `q_1..q_n` (stored 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    values: Vec<f64>,
    /// `(0-based site, exact ln(1 + |q|))` for peak sites.
    exact_log1p: Vec<(usize, f64)>,
    spec: PotentialSpec,
}

impl Potential {
    /// A potential from explicit values (no spec attached beyond `periodic`).
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidSize(values.len()));
        }
        if let Some((site, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { site, value });
        }
        let spec = PotentialSpec::Periodic { pattern: values.clone() };
        Ok(Potential { values, exact_log1p: Vec::new(), spec })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    /// Exact `ln(1 + |q_k|)` at 0-based site `k`.
    pub fn log1p_abs(&self, k: usize) -> f64 {
        match self.exact_log1p.binary_search_by_key(&k, |&(s, _)| s) {
            Ok(i) => self.exact_log1p[i].1,
            Err(_) => self.values[k].abs().ln_1p(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// The potential shifted by a constant.
    pub fn shifted(&self, c: f64) -> Potential {
        let values = self.values.iter().map(|v| v + c).collect();
        Potential { values, exact_log1p: self.exact_log1p.clone(), spec: self.spec.clone() }
    }

    /// Single-column CSV with header `q`.
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&["q"]);
        for &v in &self.values {
            csv.row(&[v]);
        }
        csv.finish()
    }
}

/// Realize `spec` on `n` sites.
pub fn realize(spec: &PotentialSpec, n: usize) -> Result<Potential> {
    if n < 2 {
        return Err(Error::InvalidSize(n));
    }
    spec.validate()?;
    let mut exact_log1p = Vec::new();
    let values = match spec {
        PotentialSpec::Constant { value } => vec![*value; n],
        PotentialSpec::Iid { distribution, seed } => {
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            (0..n).map(|_| distribution.sample(&mut rng)).collect()
        }
        PotentialSpec::Quasiperiodic { amplitude, frequency, phase } => {
            (1..=n).map(|k| amplitude * (2.0 * PI * frequency * k as f64 + phase).cos()).collect()
        }
        PotentialSpec::Periodic { pattern } => (0..n).map(|k| pattern[k % pattern.len()]).collect(),
        PotentialSpec::Decaying { strength } => (1..=n).map(|k| strength / k as f64).collect(),
        PotentialSpec::SparsePeaks { positions, amplitudes } => {
            let mut v = vec![0.0; n];
            for (j, site) in positions.sites_up_to(n).into_iter().enumerate() {
                v[site - 1] = amplitudes.amplitude(j + 1, site);
                exact_log1p.push((site - 1, amplitudes.log1p_amplitude(j + 1, site)));
            }
            v
        }
        PotentialSpec::Composite { base, peaks } => {
            let base = realize(base, n)?;
            let peaks = realize(peaks, n)?;
            let mut v = base.values;
            for (k, p) in peaks.values.iter().enumerate() {
                let s = v[k] + p;
                v[k] = if s.is_finite() { s } else { f64::MAX.copysign(s) };
            }
            // Peak logs dominate; exact for saturated entries, otherwise recomputed.
            exact_log1p = peaks
                .exact_log1p
                .iter()
                .map(|&(k, l)| if v[k].abs() == f64::MAX { (k, l) } else { (k, v[k].abs().ln_1p()) })
                .collect();
            v
        }
    };
    Ok(Potential { values, exact_log1p, spec: spec.clone() })
}

/// `(1/n) Σ ln(1 + |q_k|)`.
pub fn c2_statistic(p: &Potential) -> f64 {
    let n = p.len();
    (0..n).map(|k| p.log1p_abs(k)).sum::<f64>() / n as f64
}

/// `(1/n) Σ_{|q_k| > B} ln(1 + |q_k|)`.
pub fn c2star_tail(p: &Potential, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!("tail threshold must be positive, got {b}")));
    }
    let n = p.len();
    let sum: f64 = (0..n).filter(|&k| p.values[k].abs() > b).map(|k| p.log1p_abs(k)).sum();
    Ok(sum / n as f64)
}

/// `s_n = (1/n) Σ_{k_j <= n} ln(1 + |v_{k_j}|)` for each `n` in `n_list`.
///
/// Accepts a sparse-peak spec or a composite (whose peak part is used).
pub fn s_n_sequence(spec: &PotentialSpec, n_list: &[usize]) -> Result<Vec<f64>> {
    let (positions, amplitudes) = spec.sparse_rules().ok_or(Error::NotSparse(spec.family()))?;
    n_list
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::InvalidSize(n));
            }
            let sum: f64 = positions
                .sites_up_to(n)
                .into_iter()
                .enumerate()
                .map(|(j, site)| amplitudes.log1p_amplitude(j + 1, site))
                .sum();
            Ok(sum / n as f64)
        })
        .collect()
}

/// `#{j : k_j <= n}` for a sparse (or composite) spec.
pub fn peak_count(spec: &PotentialSpec, n: usize) -> Result<usize> {
    let (positions, _) = spec.sparse_rules().ok_or(Error::NotSparse(spec.family()))?;
    Ok(positions.sites_up_to(n).len())
}

// ---- structured text form ------------------------------------------------

/// The `family / parameters / seed` block a spec is written as.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecBlock {
    family: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    parameters: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantParams {
    value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IidParams {
    distribution: Distribution,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuasiperiodicParams {
    amplitude: f64,
    #[serde(default = "default_frequency")]
    frequency: f64,
    #[serde(default)]
    phase: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PeriodicParams {
    pattern: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecayingParams {
    strength: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SparseParams {
    positions: PositionRule,
    amplitudes: AmplitudeRule,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompositeParams {
    base: PotentialSpec,
    peaks: PotentialSpec,
}

fn params<T: serde::de::DeserializeOwned>(family: &str, v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Spec(format!("{family}: {e}")))
}

impl TryFrom<SpecBlock> for PotentialSpec {
    type Error = Error;

    fn try_from(b: SpecBlock) -> Result<Self> {
        let f = b.family.as_str();
        if b.seed.is_some() && f != "iid" {
            return Err(Error::Spec(format!("family {f} takes no seed")));
        }
        let spec = match f {
            "constant" => {
                let p: ConstantParams = params(f, b.parameters)?;
                PotentialSpec::Constant { value: p.value }
            }
            "iid" => {
                let p: IidParams = params(f, b.parameters)?;
                let seed = b.seed.ok_or_else(|| Error::Spec("iid family requires a seed".into()))?;
                PotentialSpec::Iid { distribution: p.distribution, seed }
            }
            "quasiperiodic" => {
                let p: QuasiperiodicParams = params(f, b.parameters)?;
                PotentialSpec::Quasiperiodic { amplitude: p.amplitude, frequency: p.frequency, phase: p.phase }
            }
            "periodic" => {
                let p: PeriodicParams = params(f, b.parameters)?;
                PotentialSpec::Periodic { pattern: p.pattern }
            }
            "decaying" => {
                let p: DecayingParams = params(f, b.parameters)?;
                PotentialSpec::Decaying { strength: p.strength }
            }
            "sparse_peaks" => {
                let p: SparseParams = params(f, b.parameters)?;
                PotentialSpec::SparsePeaks { positions: p.positions, amplitudes: p.amplitudes }
            }
            "composite" => {
                let p: CompositeParams = params(f, b.parameters)?;
                PotentialSpec::Composite { base: Box::new(p.base), peaks: Box::new(p.peaks) }
            }
            other => return Err(Error::Spec(format!("unknown potential family {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<&PotentialSpec> for SpecBlock {
    fn from(s: &PotentialSpec) -> Self {
        let to = |v: serde_json::Result<serde_json::Value>| v.expect("spec parameters serialize");
        let (parameters, seed) = match s {
            PotentialSpec::Constant { value } => (to(serde_json::to_value(ConstantParams { value: *value })), None),
            PotentialSpec::Iid { distribution, seed } => {
                (to(serde_json::to_value(IidParams { distribution: distribution.clone() })), Some(*seed))
            }
            PotentialSpec::Quasiperiodic { amplitude, frequency, phase } => (
                to(serde_json::to_value(QuasiperiodicParams {
                    amplitude: *amplitude,
                    frequency: *frequency,
                    phase: *phase,
                })),
                None,
            ),
            PotentialSpec::Periodic { pattern } => {
                (to(serde_json::to_value(PeriodicParams { pattern: pattern.clone() })), None)
            }
            PotentialSpec::Decaying { strength } => {
                (to(serde_json::to_value(DecayingParams { strength: *strength })), None)
            }
            PotentialSpec::SparsePeaks { positions, amplitudes } => (
                to(serde_json::to_value(SparseParams { positions: positions.clone(), amplitudes: amplitudes.clone() })),
                None,
            ),
            PotentialSpec::Composite { base, peaks } => {
                (to(serde_json::to_value(CompositeParams { base: (**base).clone(), peaks: (**peaks).clone() })), None)
            }
        };
        SpecBlock { family: s.family().to_owned(), parameters, seed }
    }
}

impl Serialize for PotentialSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SpecBlock::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PotentialSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let block = SpecBlock::deserialize(deserializer)?;
        PotentialSpec::try_from(block).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_zero() {
        let p = realize(&PotentialSpec::Constant { value: 0.0 }, 4).unwrap();
        assert_eq!(p.values(), &[0.0; 4]);
        assert_eq!(c2_statistic(&p), 0.0);
        assert_eq!(c2star_tail(&p, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn size_and_spec_errors() {
        assert_eq!(realize(&PotentialSpec::Constant { value: 0.0 }, 1), Err(Error::InvalidSize(1)));
        let bad = PotentialSpec::Iid { distribution: Distribution::Uniform { low: 1.0, high: 0.0 }, seed: 1 };
        assert!(matches!(realize(&bad, 8), Err(Error::Spec(_))));
        let bad = PotentialSpec::Iid { distribution: Distribution::Bernoulli { low: 0.0, high: 1.0, p: 1.5 }, seed: 1 };
        assert!(matches!(realize(&bad, 8), Err(Error::Spec(_))));
    }

    #[test]
    fn square_peaks_small() {
        let p = realize(&PotentialSpec::square_peaks(), 10).unwrap();
        let e = std::f64::consts::E;
        let expected = [e, 0.0, 0.0, e * e, 0.0, 0.0, 0.0, 0.0, e * e * e, 0.0];
        for (a, b) in p.values().iter().zip(expected) {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn golden_two_sites() {
        let p = realize(&PotentialSpec::golden(1.0), 2).unwrap();
        let a = (5f64.sqrt() - 1.0) / 2.0;
        assert!((p.values()[0] - (2.0 * PI * a).cos()).abs() < 1e-15);
        assert!((p.values()[1] - (4.0 * PI * a).cos()).abs() < 1e-15);
        assert!((GOLDEN_FREQUENCY - a).abs() < 2e-16);
    }

    #[test]
    fn c2_of_e_minus_one() {
        let e1 = std::f64::consts::E - 1.0;
        let p = Potential::from_values(vec![e1, e1]).unwrap();
        assert!((c2_statistic(&p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bounded_tail_is_empty() {
        let p = realize(&PotentialSpec::two_band(3), 500).unwrap();
        assert_eq!(c2star_tail(&p, 4.5).unwrap(), 0.0);
        assert!(c2star_tail(&p, 0.0).is_err());
        assert!(c2star_tail(&p, -1.0).is_err());
    }

    #[test]
    fn two_band_support() {
        let p = realize(&PotentialSpec::two_band(11), 2000).unwrap();
        assert!(p.values().iter().all(|v| (3.0..=4.0).contains(&v.abs())));
        let neg = p.values().iter().filter(|v| **v < 0.0).count();
        assert!((900..1100).contains(&neg));
    }

    #[test]
    fn s_n_examples() {
        let s = s_n_sequence(&PotentialSpec::square_peaks(), &[1_000_000]).unwrap();
        assert!((s[0] - 0.5).abs() < 0.02, "{}", s[0]);
        let n = 1usize << 20;
        let s = s_n_sequence(&PotentialSpec::dyadic_peaks(), &[n, n - 1]).unwrap();
        assert!((s[0] - 2.0).abs() < 0.1, "{}", s[0]);
        assert!((s[1] - 1.0).abs() < 0.05, "{}", s[1]);
        assert_eq!(s_n_sequence(&PotentialSpec::golden(1.0), &[10]), Err(Error::NotSparse("quasiperiodic")));
    }

    #[test]
    fn c2_matches_s_n_for_pure_peaks() {
        let spec = PotentialSpec::square_peaks();
        let n = 1_000_000;
        let p = realize(&spec, n).unwrap();
        let s = s_n_sequence(&spec, &[n]).unwrap()[0];
        assert!((c2_statistic(&p) - s).abs() < 1e-9);
        assert!((c2_statistic(&p) - 0.5).abs() < 0.02);
    }

    #[test]
    fn dyadic_tail_concentrated() {
        let n = 1usize << 20;
        let p = realize(&PotentialSpec::dyadic_peaks(), n).unwrap();
        let c2 = c2_statistic(&p);
        let tail = c2star_tail(&p, 10.0).unwrap();
        assert!(tail <= c2);
        assert!((c2 - tail) <= 0.01 * c2, "{tail} vs {c2}");
    }

    #[test]
    fn peak_density_small() {
        let n = 1_000_000;
        for spec in [PotentialSpec::square_peaks(), PotentialSpec::dyadic_peaks()] {
            let count = peak_count(&spec, n).unwrap();
            assert!((count as f64 / n as f64) < 0.01);
        }
        assert_eq!(peak_count(&PotentialSpec::square_peaks(), 4096).unwrap(), 64);
    }

    #[test]
    fn composite_tail_vanishes_for_large_b() {
        let spec = PotentialSpec::two_band(5).with_peaks(PotentialSpec::square_peaks());
        let p = realize(&spec, 4096).unwrap();
        let tails: Vec<f64> = [1.0, 10.0, 1e3, 1e10, 1e30].iter().map(|&b| c2star_tail(&p, b).unwrap()).collect();
        assert!(tails.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*tails.last().unwrap(), 0.0);
    }

    #[test]
    fn dyadic_overflow_is_capped_with_exact_log() {
        let p = realize(&PotentialSpec::dyadic_peaks(), 2048).unwrap();
        assert_eq!(p.values()[1023], f64::MAX);
        assert_eq!(p.log1p_abs(1023), 1024.0);
        assert!(p.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn explicit_sites_validated() {
        let spec = PotentialSpec::SparsePeaks {
            positions: PositionRule::Explicit { sites: vec![3, 2] },
            amplitudes: AmplitudeRule::Constant { value: 1.0 },
        };
        assert!(realize(&spec, 8).is_err());
        let spec = PotentialSpec::Composite {
            base: Box::new(PotentialSpec::Constant { value: 0.0 }),
            peaks: Box::new(PotentialSpec::Constant { value: 1.0 }),
        };
        assert!(realize(&spec, 8).is_err());
    }

    #[test]
    fn json_block_round_trip() {
        let spec = PotentialSpec::Decaying { strength: 2.0 }.with_peaks(PotentialSpec::dyadic_peaks());
        let text = serde_json::to_string(&spec).unwrap();
        let back: PotentialSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let iid: PotentialSpec = serde_json::from_str(
            r#"{"family":"iid","seed":9,"parameters":{"distribution":{"kind":"symmetric_bands","inner":3,"outer":4}}}"#,
        )
        .unwrap();
        assert_eq!(iid, PotentialSpec::two_band(9));
        assert!(serde_json::from_str::<PotentialSpec>(
            r#"{"family":"iid","parameters":{"distribution":{"kind":"uniform","low":0,"high":1}}}"#
        )
        .is_err());
        assert!(serde_json::from_str::<PotentialSpec>(r#"{"family":"constant","parameters":{"value":0},"colour":1}"#)
            .is_err());
    }

    fn any_spec() -> impl Strategy<Value = PotentialSpec> {
        prop_oneof![
            (-5.0..5.0f64).prop_map(|value| PotentialSpec::Constant { value }),
            any::<u64>().prop_map(PotentialSpec::two_band),
            (any::<u64>(), -3.0..0.0f64, 0.0..3.0f64).prop_map(|(seed, low, w)| PotentialSpec::Iid {
                distribution: Distribution::Uniform { low, high: low + w },
                seed
            }),
            (0.1..3.0f64, 0.0..1.0f64, 0.0..6.0f64)
                .prop_map(|(amplitude, frequency, phase)| PotentialSpec::Quasiperiodic { amplitude, frequency, phase }),
            prop::collection::vec(-2.0..2.0f64, 1..5).prop_map(|pattern| PotentialSpec::Periodic { pattern }),
            (-2.0..2.0f64).prop_map(|strength| PotentialSpec::Decaying { strength }),
            any::<u64>().prop_map(|s| PotentialSpec::two_band(s).with_peaks(PotentialSpec::square_peaks())),
        ]
    }

    proptest! {
        #[test]
        fn deterministic_and_prefix_consistent(spec in any_spec(), n in 2usize..200, extra in 0usize..100) {
            let a = realize(&spec, n).unwrap();
            let b = realize(&spec, n).unwrap();
            prop_assert_eq!(&a, &b);
            let long = realize(&spec, n + extra).unwrap();
            prop_assert_eq!(&long.values()[..n], a.values());
        }

        #[test]
        fn tail_bounds(spec in any_spec(), n in 2usize..200, b1 in 0.01..10.0f64, b2 in 0.01..10.0f64) {
            let p = realize(&spec, n).unwrap();
            let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
            let c2 = c2_statistic(&p);
            let t_lo = c2star_tail(&p, lo).unwrap();
            let t_hi = c2star_tail(&p, hi).unwrap();
            prop_assert!(c2 >= 0.0);
            prop_assert!(t_hi <= t_lo && t_lo <= c2 + 1e-12);
        }

        #[test]
        fn spec_serializes(spec in any_spec()) {
            let text = serde_json::to_string(&spec).unwrap();
            let back: PotentialSpec = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, spec);
        }
    }
}
