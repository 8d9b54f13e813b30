//! Experiment configuration: a versioned TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algorithms::{Algorithm, DmlcParams, FidelityMode};
use crate::error::{Error, Result};
use crate::geometry::{Bounds, GridEnvironment, Point, TestDensity};
use crate::mfgp::{FitBounds, KernelParams, MfgpHyper, DEFAULT_FIT_BUDGET};

pub const SCHEMA_VERSION: u32 = 1;

const FITTED_HIGH_KERNEL: KernelParams = KernelParams {
    variance: 4.196612903816855,
    lengthscale_sq: 0.09061776185150597,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    /// Ignored by the baseline.
    pub fidelity: FidelityMode,
    pub agents: usize,
    pub iterations: usize,
    pub runs: usize,
    pub seed: u64,
    pub grid: GridSpec,
    pub density: DensitySpec,
    pub low_fidelity: LowFidelitySpec,
    pub high_fidelity: HighFidelitySpec,
    pub smlc: SmlcSpec,
    pub dmlc: DmlcParams,
    pub hyper: HyperSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub bounds: Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub low: TestDensity,
    /// Ground truth.
    pub high: TestDensity,
}

/// Low-fidelity data available before deployment: a square lattice spanning
/// the bounds edge to edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowFidelitySpec {
    pub points_per_axis: usize,
    pub noise_var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighFidelitySpec {
    pub noise_var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmlcSpec {
    /// Exponent of the learning-probability map `u ↦ u^γ`.
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperSource {
    /// Use the values below as given.
    Pinned,
    /// Fit by maximum likelihood before the batch starts.
    Fit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSpec {
    pub source: HyperSource,
    /// Noiseless training samples per fidelity level for the fit.
    pub training_samples: usize,
    /// Noise variance assumed while fitting the noiseless training data.
    pub fit_noise_var: f64,
    pub fit_budget: usize,
    pub fit_bounds: FitBounds,
    pub multi: MultiHyperSpec,
    pub single: SingleHyperSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiHyperSpec {
    pub low: KernelParams,
    pub high: KernelParams,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleHyperSpec {
    pub kernel: KernelParams,
    /// Noise assumed for every pooled observation.
    pub noise_var: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            algorithm: Algorithm::Smlc,
            fidelity: FidelityMode::Multi,
            agents: 4,
            iterations: 60,
            runs: 50,
            seed: 0,
            grid: GridSpec {
                nx: 21,
                ny: 21,
                bounds: Bounds::unit(),
            },
            density: DensitySpec {
                low: TestDensity {
                    variance: 5.0,
                    lengthscale_sq: 0.2,
                    center: Point::new(0.5, 0.5),
                },
                high: TestDensity {
                    variance: 10.0,
                    lengthscale_sq: 0.05,
                    center: Point::new(0.75, 0.75),
                },
            },
            low_fidelity: LowFidelitySpec {
                points_per_axis: 5,
                noise_var: 1.0,
            },
            high_fidelity: HighFidelitySpec { noise_var: 1.0 },
            smlc: SmlcSpec { gamma: 1.0 },
            dmlc: DmlcParams::default(),
            hyper: HyperSpec {
                source: HyperSource::Pinned,
                training_samples: 100,
                fit_noise_var: 1e-4,
                fit_budget: DEFAULT_FIT_BUDGET,
                fit_bounds: FitBounds::default(),
                // maximum-likelihood fit at seed 0 (`mfcov fit`); the
                // single-fidelity learner shares the high-level kernel
                multi: MultiHyperSpec {
                    low: KernelParams {
                        variance: 2.316229530676154,
                        lengthscale_sq: 0.36626209569493584,
                    },
                    high: FITTED_HIGH_KERNEL,
                    rho: 0.6662915230893739,
                },
                single: SingleHyperSpec {
                    kernel: FITTED_HIGH_KERNEL,
                    noise_var: 1.0,
                },
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.agents == 0 {
            return fail("agents must be at least 1".into());
        }
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if self.runs == 0 {
            return fail("runs must be at least 1".into());
        }
        self.grid_environment()?;
        for (name, d) in [("low", &self.density.low), ("high", &self.density.high)] {
            if !d.is_valid() {
                return fail(format!(
                    "density.{name} needs positive variance and lengthscale_sq"
                ));
            }
        }
        if self.low_fidelity.points_per_axis < 2 && self.low_fidelity.points_per_axis != 0 {
            return fail("low_fidelity.points_per_axis must be 0 or at least 2".into());
        }
        for (name, v) in [
            ("low_fidelity.noise_var", self.low_fidelity.noise_var),
            ("high_fidelity.noise_var", self.high_fidelity.noise_var),
            ("hyper.single.noise_var", self.hyper.single.noise_var),
            ("hyper.fit_noise_var", self.hyper.fit_noise_var),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a nonnegative number"));
            }
        }
        if !(self.smlc.gamma > 0.0 && self.smlc.gamma.is_finite()) {
            return fail("smlc.gamma must be positive".into());
        }
        self.dmlc.validate()?;
        if self.hyper.training_samples == 0 {
            return fail("hyper.training_samples must be positive".into());
        }
        self.multi_hyper().validate()?;
        self.single_hyper().validate()?;
        Ok(())
    }

    pub fn grid_environment(&self) -> Result<GridEnvironment> {
        GridEnvironment::new(self.grid.bounds, self.grid.nx, self.grid.ny)
    }

    /// Two-level hyperparameters with the sensor noise levels.
    pub fn multi_hyper(&self) -> MfgpHyper {
        MfgpHyper::two_level(
            self.hyper.multi.low,
            self.hyper.multi.high,
            self.hyper.multi.rho,
            [self.low_fidelity.noise_var, self.high_fidelity.noise_var],
        )
    }

    pub fn single_hyper(&self) -> MfgpHyper {
        MfgpHyper::single(self.hyper.single.kernel, self.hyper.single.noise_var)
    }

    /// Low-fidelity sample locations: `points_per_axis²` lattice points
    /// including the domain edges.
    pub fn low_fidelity_locations(&self) -> Vec<Point> {
        let n = self.low_fidelity.points_per_axis;
        if n == 0 {
            return Vec::new();
        }
        let b = &self.grid.bounds;
        let step_x = b.width() / (n - 1) as f64;
        let step_y = b.height() / (n - 1) as f64;
        (0..n)
            .flat_map(|j| {
                (0..n).map(move |i| {
                    Point::new(b.x_min + i as f64 * step_x, b.y_min + j as f64 * step_y)
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn shipped_config_is_the_default() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
        assert_eq!(
            ExperimentConfig::load(path).unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn lattice_spacing() {
        let pts = ExperimentConfig::default().low_fidelity_locations();
        assert_eq!(pts.len(), 25);
        for (k, p) in pts.iter().enumerate() {
            assert_eq!(*p, Point::new(0.25 * (k % 5) as f64, 0.25 * (k / 5) as f64));
        }
    }

    #[test]
    fn rejects_invalid() {
        let mut cfg = ExperimentConfig::default();
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.low_fidelity.noise_var = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.dmlc.alpha = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.schema_version = 99;
        assert!(cfg.validate().is_err());
        let text = "bogus = 1\n".to_string() + &ExperimentConfig::default().to_toml_string();
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = ExperimentConfig::default().to_toml_string() + "\nbogus = 1\n";
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }
}
