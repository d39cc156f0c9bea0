use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::domain::{FourierMode, TestFunction};
use crate::engine::Profile;
use crate::geometry::Membrane;
use crate::lattice::{RateField, TorusLattice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Rates,
    Spectrum,
    GeneratorConvergence,
    Hydro,
    Qv,
    Uniqueness,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Rates => "rates",
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::GeneratorConvergence => "generator-convergence",
            ExperimentKind::Hydro => "hydro",
            ExperimentKind::Qv => "qv",
            ExperimentKind::Uniqueness => "uniqueness",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MembraneSpec {
    /// No membrane: every rate is 1.
    None,
    Circle {
        center: Vec<f64>,
        radius: f64,
        band_width: Option<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
        band_width: Option<f64>,
    },
    Ellipse {
        center: Vec<f64>,
        semi_axes: Vec<f64>,
        band_width: Option<f64>,
    },
    Ellipsoid {
        center: Vec<f64>,
        semi_axes: Vec<f64>,
        band_width: Option<f64>,
    },
    /// `Λ = [left, right]` on the circle, `d = 1`.
    Arc {
        left: f64,
        right: f64,
        band_width: Option<f64>,
    },
}

impl MembraneSpec {
    pub fn build(&self, dim: usize) -> Result<Option<Membrane>, HarnessError> {
        let (membrane, band, expected_dim) = match self {
            MembraneSpec::None => return Ok(None),
            MembraneSpec::Circle { center, radius, band_width } => (Membrane::ball(center.clone(), *radius)?, band_width, Some(2)),
            MembraneSpec::Ball { center, radius, band_width } => (Membrane::ball(center.clone(), *radius)?, band_width, None),
            MembraneSpec::Ellipse { center, semi_axes, band_width } => {
                (Membrane::ellipsoid(center.clone(), semi_axes.clone())?, band_width, Some(2))
            }
            MembraneSpec::Ellipsoid { center, semi_axes, band_width } => {
                (Membrane::ellipsoid(center.clone(), semi_axes.clone())?, band_width, None)
            }
            MembraneSpec::Arc { left, right, band_width } => (Membrane::interval(*left, *right)?, band_width, Some(1)),
        };
        if expected_dim.is_some_and(|d| d != dim) || membrane.dim() != dim {
            return Err(HarnessError::Config(format!(
                "membrane {} lives in dimension {}, experiment has dim = {dim}",
                membrane.label(),
                membrane.dim()
            )));
        }
        Ok(Some(match band {
            Some(b) => membrane.with_band_width(*b)?,
            None => membrane,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub wave: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

fn default_eps() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctionSpec {
    Constant {
        value: f64,
    },
    Fourier {
        modes: Vec<ModeSpec>,
    },
    MembraneJump {
        lambda: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl TestFunctionSpec {
    pub fn build(&self, dim: usize, membrane: Option<&Membrane>) -> Result<TestFunction, HarnessError> {
        Ok(match self {
            TestFunctionSpec::Constant { value } => {
                TestFunction::smooth(dim, vec![FourierMode::new(vec![0; dim], *value, 0.0)])?
            }
            TestFunctionSpec::Fourier { modes } => TestFunction::smooth(
                dim,
                modes.iter().map(|m| FourierMode::new(m.wave.clone(), m.cos, m.sin)).collect(),
            )?,
            TestFunctionSpec::MembraneJump { lambda, eps } => {
                let membrane = membrane.ok_or_else(|| {
                    HarnessError::Config("test_function kind = \"membrane_jump\" needs a membrane".into())
                })?;
                TestFunction::membrane_jump(membrane, *lambda, *eps)?
            }
        })
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, TestFunctionSpec::MembraneJump { .. })
    }
}

fn default_replicas() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaSpec {
    #[serde(default = "default_replicas")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ReplicaSpec {
    fn default() -> Self {
        ReplicaSpec { count: default_replicas(), seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSpec {
    /// number of eigenpairs; all of them when omitted and `N^d ≤ 4096`
    pub eigenpairs: Option<usize>,
    /// leading eigenvectors written as field CSVs
    #[serde(default)]
    pub eigenvectors: usize,
}

fn default_trajectories() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QvSpec {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
}

impl Default for QvSpec {
    fn default() -> Self {
        QvSpec { trajectories: default_trajectories() }
    }
}

fn default_grid() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessSpec {
    /// time grid `k T / grid_points`, `k = 0..=grid_points`
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    /// uniform random initial data drawn from the seed instead of the profile
    #[serde(default)]
    pub random_initial: bool,
}

impl Default for UniquenessSpec {
    fn default() -> Self {
        UniquenessSpec { grid_points: default_grid(), random_initial: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dim: usize,
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub horizon: f64,
    pub output_dir: Option<PathBuf>,
    pub membrane: MembraneSpec,
    pub profile: Option<Profile>,
    pub test_function: Option<TestFunctionSpec>,
    #[serde(default)]
    pub replicas: ReplicaSpec,
    #[serde(default)]
    pub spectrum: SpectrumSpec,
    #[serde(default)]
    pub qv: QvSpec,
    #[serde(default)]
    pub uniqueness: UniquenessSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_toml().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if !(1..=3).contains(&self.dim) {
            return fail(format!("dim must be 1, 2 or 3, got {}", self.dim));
        }
        if self.sizes.is_empty() {
            return fail("sizes must list at least one lattice size".into());
        }
        if let Some(n) = self.sizes.iter().find(|&&n| n < 4) {
            return fail(format!("lattice sizes must be at least 4, got {n}"));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return fail(format!("horizon must be finite and non-negative, got {}", self.horizon));
        }
        let membrane = self.membrane.build(self.dim)?;
        if let Some(p) = &self.profile {
            p.validate(self.dim)?;
        }
        if let Some(tf) = &self.test_function {
            tf.build(self.dim, membrane.as_ref())?;
        }
        let need = |what: &str, present: bool| {
            if present {
                Ok(())
            } else {
                Err(HarnessError::Config(format!("kind = \"{}\" needs a [{what}] section", self.kind)))
            }
        };
        match self.kind {
            ExperimentKind::Rates | ExperimentKind::Spectrum => {}
            ExperimentKind::GeneratorConvergence => need("test_function", self.test_function.is_some())?,
            ExperimentKind::Hydro => {
                need("profile", self.profile.is_some())?;
                need("test_function", self.test_function.is_some())?;
            }
            ExperimentKind::Qv => {
                need("profile", self.profile.is_some())?;
                need("test_function", self.test_function.is_some())?;
                if !self.test_function.as_ref().is_some_and(TestFunctionSpec::is_smooth) {
                    return fail("the quadratic-variation bound needs a smooth test function".into());
                }
            }
            ExperimentKind::Uniqueness => {
                need("profile", self.profile.is_some() || self.uniqueness.random_initial)?;
                if self.uniqueness.grid_points == 0 {
                    return fail("uniqueness.grid_points must be positive".into());
                }
            }
        }
        if matches!(self.kind, ExperimentKind::Hydro | ExperimentKind::Qv) && self.replicas.count < 2 {
            return fail("replicas.count must be at least 2".into());
        }
        Ok(())
    }

    pub fn lattice(&self, side: usize) -> Result<TorusLattice, HarnessError> {
        Ok(TorusLattice::new(self.dim, side)?)
    }

    pub fn rate_field(&self, side: usize) -> Result<RateField, HarnessError> {
        let lattice = self.lattice(side)?;
        Ok(match self.membrane.build(self.dim)? {
            Some(m) => RateField::build(lattice, &m)?,
            None => RateField::homogeneous(lattice),
        })
    }

    pub fn test_function(&self) -> Result<TestFunction, HarnessError> {
        let spec = self
            .test_function
            .as_ref()
            .ok_or_else(|| HarnessError::Config("missing [test_function] section".into()))?;
        spec.build(self.dim, self.membrane.build(self.dim)?.as_ref())
    }

    pub fn membrane_label(&self) -> String {
        match self.membrane.build(self.dim) {
            Ok(Some(m)) => m.label().to_string(),
            _ => "none".into(),
        }
    }
}
