//! JSON instance format.
//!
//! ```json
//! {"space": {"grid": {"a": -6.0, "b": 6.0, "n": 201}},
//!  "mu": {"density": "gaussian", "sigma": 1.0},
//!  "cost": {"phi": "square"}}
//! ```

use crate::error::{Error, Result};
use crate::measures::ProbVector;
use crate::metric::{FiniteMetricSpace, PowerTypeCost, Profile};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceSpec {
    Grid {
        grid: GridSpec,
    },
    Points {
        points: Vec<f64>,
    },
    Dist {
        dist: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "density", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Gaussian {
        sigma: f64,
        #[serde(default)]
        mean: f64,
    },
    Uniform,
    Mixture {
        components: Vec<Component>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureSpec {
    Weights { weights: Vec<f64> },
    Density(DensitySpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    Square,
    Power,
    LinearPlusSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub phi: PhiKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate: Option<f64>,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self { phi: PhiKind::Square, p: None, truncate: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub space: SpaceSpec,
    pub mu: MeasureSpec,
    /// Second measure for transport problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<MeasureSpec>,
    #[serde(default)]
    pub cost: CostSpec,
}

/// An instance with its objects constructed and validated.
#[derive(Debug, Clone)]
pub struct Built {
    pub space: FiniteMetricSpace,
    pub mu: ProbVector,
    pub nu: Option<ProbVector>,
    pub cost: PowerTypeCost,
}

impl SpaceSpec {
    pub fn build(&self) -> Result<FiniteMetricSpace> {
        match self {
            SpaceSpec::Grid { grid } => FiniteMetricSpace::grid(grid.a, grid.b, grid.n),
            SpaceSpec::Points { points } => FiniteMetricSpace::from_points(points.clone()),
            SpaceSpec::Dist { dist } => FiniteMetricSpace::new(dist),
        }
    }
}

fn gaussian(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / sigma
}

impl MeasureSpec {
    pub fn build(&self, space: &FiniteMetricSpace) -> Result<ProbVector> {
        let density = match self {
            MeasureSpec::Weights { weights } => {
                if weights.len() != space.n() {
                    return Err(Error::DimensionMismatch { expected: space.n(), got: weights.len() });
                }
                return ProbVector::normalized(weights.clone());
            }
            MeasureSpec::Density(d) => d,
        };
        let pts = space.points().ok_or(Error::NotAGrid)?;
        let w: Vec<f64> = match density {
            DensitySpec::Gaussian { sigma, mean } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidProbability(format!("sigma must be positive, got {sigma}")));
                }
                pts.iter().map(|&x| gaussian(x, *mean, *sigma)).collect()
            }
            DensitySpec::Uniform => vec![1.0; pts.len()],
            DensitySpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidProbability("mixture has no components".into()));
                }
                for c in components {
                    if !(c.sigma > 0.0 && c.weight >= 0.0 && c.sigma.is_finite() && c.weight.is_finite()) {
                        return Err(Error::InvalidProbability(format!("bad mixture component {c:?}")));
                    }
                }
                pts.iter()
                    .map(|&x| components.iter().map(|c| c.weight * gaussian(x, c.mean, c.sigma)).sum())
                    .collect()
            }
        };
        ProbVector::normalized(w)
    }
}

impl CostSpec {
    pub fn profile(&self) -> Result<Profile> {
        match (self.phi, self.p) {
            (PhiKind::Square, None) => Ok(Profile::Square),
            (PhiKind::LinearPlusSquare, None) => Ok(Profile::LinearPlusSquare),
            (PhiKind::Power, Some(p)) => Ok(Profile::Power { p }),
            (PhiKind::Power, None) => Err(Error::InvalidProfile("power profile needs \"p\"".into())),
            (_, Some(_)) => Err(Error::InvalidProfile("\"p\" only applies to the power profile".into())),
        }
    }

    pub fn build(&self, space: &FiniteMetricSpace) -> Result<PowerTypeCost> {
        PowerTypeCost::new(space, self.profile()?, self.truncate)
    }
}

impl Instance {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("instance: {e}")))
    }

    pub fn build(&self) -> Result<Built> {
        let space = self.space.build()?;
        let mu = self.mu.build(&space)?;
        let nu = self.nu.as_ref().map(|m| m.build(&space)).transpose()?;
        let cost = self.cost.build(&space)?;
        Ok(Built { space, mu, nu, cost })
    }
}
