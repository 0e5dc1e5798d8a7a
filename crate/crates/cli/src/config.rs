//! Experiment configuration, read from TOML (or from the `config` field of
//! a run manifest).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nhalab::curves::Phase;
use nhalab::potentials::PotentialSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: PotentialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_list: Option<Vec<f64>>,
    /// Real window `[a, b]`; defaults to the spectrum widened by one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Size of the reference spectrum standing in for the limit.
    #[serde(default = "default_n_ref")]
    pub n_ref: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Replaces the seed of every random part of the potential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub curves: CurvesSection,
    #[serde(default)]
    pub dos: DosSection,
    #[serde(default)]
    pub lyapunov: LyapunovSection,
}

fn default_n_ref() -> usize {
    8192
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// `--check` bound on `|U_n - g_n| / max(1, g)`.
    pub level: f64,
    /// `|Im z|` above which an eigenvalue counts as non-real.
    pub non_real: f64,
    /// Grid step for locating `Λ_g`.
    pub lambda_step: f64,
    /// Offset from the axis for boundary values.
    pub boundary_delta: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            level: 1e-6,
            non_real: 1e-3,
            lambda_step: 1e-3,
            boundary_delta: nhalab::logpotential::BOUNDARY_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvesSection {
    pub phase: Phase,
    /// Initial grid step along an arc; by default each arc gets a fixed
    /// number of cells.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl Default for CurvesSection {
    fn default() -> Self {
        CurvesSection { phase: Phase::Zero, step: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DosSection {
    pub points: usize,
    /// Energies at which the log-Hölder modulus is reported.
    pub energies: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl Default for DosSection {
    fn default() -> Self {
        DosSection { points: 401, energies: Vec::new(), sigmas: vec![1e-1, 1e-2, 1e-3, 1e-4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub re: Option<[f64; 2]>,
    pub im: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        LyapunovSection { re: None, im: [1.0, 3.0], nx: 41, ny: 11 }
    }
}

impl ExperimentConfig {
    pub fn parse_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A `.json` path is read as a run manifest and its recorded config is
    /// used; anything else is TOML.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "json") {
            #[derive(Deserialize)]
            struct Recorded {
                config: ExperimentConfig,
            }
            let r: Recorded = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            r.config.validate()?;
            return Ok(r.config);
        }
        Self::parse_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.potential.validate()?;
        if self.n.is_none() && self.n_list.is_none() {
            bail!("missing key: n or n_list");
        }
        if let Some(&n) = self.sizes().iter().find(|&&n| n < 2) {
            bail!("n must be at least 2, got {n}");
        }
        if self.n_ref < 2 {
            bail!("n_ref must be at least 2");
        }
        if let Some(g) = self.drifts().into_iter().find(|g| !(g.is_finite() && *g >= 0.0)) {
            bail!("g must be finite and non-negative, got {g}");
        }
        if let Some([a, b]) = self.window {
            if a.partial_cmp(&b) != Some(std::cmp::Ordering::Less) {
                bail!("window must have a < b, got [{a}, {b}]");
            }
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.n_list.clone().unwrap_or_else(|| self.n.into_iter().collect())
    }

    pub fn drifts(&self) -> Vec<f64> {
        self.g_list.clone().unwrap_or_else(|| self.g.into_iter().collect())
    }

    /// The potential with the configured seed applied.
    pub fn resolved_potential(&self) -> PotentialSpec {
        let mut spec = self.potential.clone();
        if let Some(seed) = self.seed {
            spec.reseed(seed);
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BAND: &str = r#"
n = 50
g_list = [0.2, 1.1, 1.4]
seed = 7

[potential]
family = "iid"
seed = 1
parameters = { distribution = { kind = "symmetric_bands", inner = 3.0, outer = 4.0 } }
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::parse_toml(TWO_BAND).unwrap();
        assert_eq!(cfg.sizes(), [50]);
        assert_eq!(cfg.drifts(), [0.2, 1.1, 1.4]);
        assert_eq!(cfg.n_ref, 8192);
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert_eq!(cfg.resolved_potential().seeds(), [7]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{TWO_BAND}\n[tolerances]\nlevel = 1e-8\nbogus = 1\n");
        assert!(ExperimentConfig::parse_toml(&text).is_err());
        assert!(ExperimentConfig::parse_toml(&TWO_BAND.replace("n = 50", "n = 50\nsize = 3")).is_err());
    }

    #[test]
    fn required_keys_are_enforced() {
        assert!(ExperimentConfig::parse_toml(&TWO_BAND.replace("n = 50", "")).is_err());
        assert!(ExperimentConfig::parse_toml("n = 4\ng = 1.0\n").is_err());
        assert!(ExperimentConfig::parse_toml(&TWO_BAND.replace("n = 50", "n = 1")).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::parse_toml(TWO_BAND).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
