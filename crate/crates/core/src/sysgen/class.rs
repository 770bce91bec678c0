use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::PoleRegion;
use crate::error::SysgenError;

pub const DEFAULT_HIDDEN_SIZE: usize = 32;
pub const DEFAULT_BRANCHES: usize = 2;

/// Order bounds and pole region shared by every LTI block of a class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LtiClass {
    pub order_min: usize,
    pub order_max: usize,
    pub region: PoleRegion,
}

impl LtiClass {
    pub fn new(order_min: usize, order_max: usize, region: PoleRegion) -> Self {
        Self { order_min, order_max, region }
    }

    fn validate(&self) -> Result<(), SysgenError> {
        self.region.validate()?;
        if self.order_min < 1 || self.order_min > self.order_max {
            return Err(SysgenError::Config(format!(
                "order bounds must satisfy 1 <= order_min <= order_max, got {}..{}",
                self.order_min, self.order_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub spec: ClassSpec,
}

/// A probability distribution over systems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClassSpecRepr", into = "ClassSpecRepr")]
pub enum ClassSpec {
    Lti(LtiClass),
    WienerHammerstein { blocks: LtiClass, hidden_size: usize },
    ParallelWienerHammerstein { blocks: LtiClass, hidden_size: usize, n_branches: usize },
    Mixture(Vec<MixtureComponent>),
}

impl ClassSpec {
    pub fn lti(blocks: LtiClass) -> Self {
        Self::Lti(blocks)
    }

    pub fn wh(blocks: LtiClass, hidden_size: usize) -> Self {
        Self::WienerHammerstein { blocks, hidden_size }
    }

    pub fn pwh(blocks: LtiClass, hidden_size: usize, n_branches: usize) -> Self {
        Self::ParallelWienerHammerstein { blocks, hidden_size, n_branches }
    }

    /// Equal-probability mixture of the given classes.
    pub fn uniform_mixture(specs: Vec<ClassSpec>) -> Self {
        let w = 1.0 / specs.len() as f64;
        Self::Mixture(specs.into_iter().map(|spec| MixtureComponent { weight: w, spec }).collect())
    }

    pub fn validate(&self) -> Result<(), SysgenError> {
        match self {
            Self::Lti(blocks) => blocks.validate(),
            Self::WienerHammerstein { blocks, hidden_size } => {
                blocks.validate()?;
                if *hidden_size == 0 {
                    return Err(SysgenError::Config("hidden_size must be >= 1".into()));
                }
                Ok(())
            }
            Self::ParallelWienerHammerstein { blocks, hidden_size, n_branches } => {
                blocks.validate()?;
                if *hidden_size == 0 {
                    return Err(SysgenError::Config("hidden_size must be >= 1".into()));
                }
                if *n_branches < 2 {
                    return Err(SysgenError::Config(format!("PWH needs n_branches >= 2, got {n_branches}")));
                }
                Ok(())
            }
            Self::Mixture(components) => {
                if components.is_empty() {
                    return Err(SysgenError::Config("mixture without components".into()));
                }
                if components.iter().any(|c| !(c.weight > 0.0) || !c.weight.is_finite()) {
                    return Err(SysgenError::Config("mixture weights must be positive".into()));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(SysgenError::Config(format!("mixture weights sum to {total}, expected 1")));
                }
                components.iter().try_for_each(|c| c.spec.validate())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Lti,
    Wh,
    Pwh,
    Mixture,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ComponentRepr {
    weight: f64,
    spec: ClassSpecRepr,
}

/// Flat tagged JSON form used in configuration files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassSpecRepr {
    kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order_min: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mag_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phase_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_branches: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    components: Option<Vec<ComponentRepr>>,
}

impl ClassSpecRepr {
    fn blocks(&self, default_orders: (usize, usize)) -> Result<LtiClass, SysgenError> {
        let [mlo, mhi] = self.mag_range.unwrap_or([0.5, 0.97]);
        let [plo, phi] = self.phase_range.unwrap_or([-PI, PI]);
        let region = PoleRegion::new((mlo, mhi), (plo, phi))?;
        Ok(LtiClass {
            order_min: self.order_min.unwrap_or(default_orders.0),
            order_max: self.order_max.unwrap_or(default_orders.1),
            region,
        })
    }
}

impl TryFrom<ClassSpecRepr> for ClassSpec {
    type Error = SysgenError;

    fn try_from(r: ClassSpecRepr) -> Result<Self, Self::Error> {
        let spec = match r.kind {
            Kind::Lti => {
                if r.mag_range.is_none() || r.phase_range.is_none() {
                    return Err(SysgenError::Config("lti class needs mag_range and phase_range".into()));
                }
                ClassSpec::Lti(r.blocks((1, 10))?)
            }
            Kind::Wh => ClassSpec::WienerHammerstein {
                blocks: r.blocks((1, 5))?,
                hidden_size: r.hidden_size.unwrap_or(DEFAULT_HIDDEN_SIZE),
            },
            Kind::Pwh => ClassSpec::ParallelWienerHammerstein {
                blocks: r.blocks((1, 5))?,
                hidden_size: r.hidden_size.unwrap_or(DEFAULT_HIDDEN_SIZE),
                n_branches: r.n_branches.unwrap_or(DEFAULT_BRANCHES),
            },
            Kind::Mixture => {
                let comps = r.components.ok_or_else(|| SysgenError::Config("mixture needs components".into()))?;
                ClassSpec::Mixture(
                    comps
                        .into_iter()
                        .map(|c| Ok(MixtureComponent { weight: c.weight, spec: ClassSpec::try_from(c.spec)? }))
                        .collect::<Result<_, SysgenError>>()?,
                )
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ClassSpec> for ClassSpecRepr {
    fn from(spec: ClassSpec) -> Self {
        let empty = |kind| ClassSpecRepr {
            kind,
            order_min: None,
            order_max: None,
            mag_range: None,
            phase_range: None,
            hidden_size: None,
            n_branches: None,
            components: None,
        };
        let with_blocks = |kind, b: LtiClass| ClassSpecRepr {
            order_min: Some(b.order_min),
            order_max: Some(b.order_max),
            mag_range: Some([b.region.mag_min, b.region.mag_max]),
            phase_range: Some([b.region.phase_min, b.region.phase_max]),
            ..empty(kind)
        };
        match spec {
            ClassSpec::Lti(b) => with_blocks(Kind::Lti, b),
            ClassSpec::WienerHammerstein { blocks, hidden_size } => {
                ClassSpecRepr { hidden_size: Some(hidden_size), ..with_blocks(Kind::Wh, blocks) }
            }
            ClassSpec::ParallelWienerHammerstein { blocks, hidden_size, n_branches } => ClassSpecRepr {
                hidden_size: Some(hidden_size),
                n_branches: Some(n_branches),
                ..with_blocks(Kind::Pwh, blocks)
            },
            ClassSpec::Mixture(comps) => ClassSpecRepr {
                components: Some(
                    comps.into_iter().map(|c| ComponentRepr { weight: c.weight, spec: c.spec.into() }).collect(),
                ),
                ..empty(Kind::Mixture)
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tagged_json() {
        let json = r#"{
            "kind": "mixture",
            "components": [
                {"weight": 0.5, "spec": {"kind": "lti", "order_min": 1, "order_max": 10,
                                         "mag_range": [0.8, 0.97], "phase_range": [-1.5707963, 1.5707963]}},
                {"weight": 0.5, "spec": {"kind": "pwh", "mag_range": [0.5, 0.9], "phase_range": [0, 3.14]}}
            ]
        }"#;
        let spec: ClassSpec = serde_json::from_str(json).unwrap();
        let ClassSpec::Mixture(comps) = &spec else { panic!("expected mixture") };
        assert_eq!(comps.len(), 2);
        assert!(matches!(
            comps[1].spec,
            ClassSpec::ParallelWienerHammerstein { hidden_size: 32, n_branches: 2, blocks: LtiClass { order_max: 5, .. } }
        ));
        let back: ClassSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn rejects_bad_weights_and_orders() {
        let bad_weights = r#"{"kind": "mixture", "components": [
            {"weight": 0.7, "spec": {"kind": "wh"}}, {"weight": 0.7, "spec": {"kind": "wh"}}]}"#;
        assert!(serde_json::from_str::<ClassSpec>(bad_weights).is_err());
        let bad_orders = r#"{"kind": "wh", "order_min": 3, "order_max": 2}"#;
        assert!(serde_json::from_str::<ClassSpec>(bad_orders).is_err());
        let single_branch = r#"{"kind": "pwh", "n_branches": 1}"#;
        assert!(serde_json::from_str::<ClassSpec>(single_branch).is_err());
        let lti_without_region = r#"{"kind": "lti"}"#;
        assert!(serde_json::from_str::<ClassSpec>(lti_without_region).is_err());
    }
}
