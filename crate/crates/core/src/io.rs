//! JSON ensemble records.
//!
//! ```json
//! {"instance_id": "a", "members": [
//!   {"weight": 0.5, "type": "gaussian", "params": {"mean": [0.0], "var": [1.0]}},
//!   {"weight": 0.5, "type": "pointmass", "params": {"location": 1.0}}
//! ]}
//! ```
//!
//! Input may be a JSON array of records or a stream of records (one per line
//! or concatenated). Scalars stand for one-dimensional vectors; a scalar
//! variance is broadcast over a vector mean. Weights are optional but must be
//! given for all members or none.

use crate::distributions::{FirstOrderDist, Gaussian, SecondOrderEnsemble};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Vector {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Vector {
    fn into_vec(self) -> Vec<f64> {
        match self {
            Self::Scalar(x) => vec![x],
            Self::Vector(v) => v,
        }
    }

    fn broadcast(self, len: usize) -> Vec<f64> {
        match self {
            Self::Scalar(x) => vec![x; len],
            Self::Vector(v) => v,
        }
    }

    fn from_vec(v: &[f64]) -> Self {
        match v {
            [x] => Self::Scalar(*x),
            _ => Self::Vector(v.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub mean: Vector,
    pub var: Vector,
}

impl ComponentParams {
    fn build(self) -> Result<Gaussian> {
        let mean = self.mean.into_vec();
        let var = self.var.broadcast(mean.len());
        Gaussian::new(mean, var)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "lowercase")]
pub enum MemberParams {
    Gaussian(ComponentParams),
    Mixture {
        weights: Vec<f64>,
        components: Vec<ComponentParams>,
    },
    #[serde(rename = "pointmass")]
    PointMass {
        location: Vector,
    },
    Empirical {
        samples: Vec<Vector>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(flatten)]
    pub params: MemberParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub instance_id: String,
    pub members: Vec<MemberRecord>,
}

impl MemberParams {
    pub fn build(self) -> Result<FirstOrderDist> {
        match self {
            Self::Gaussian(c) => Ok(c.build()?.into()),
            Self::Mixture { weights, components } => FirstOrderDist::mixture(
                weights,
                components.into_iter().map(ComponentParams::build).collect::<Result<_>>()?,
            ),
            Self::PointMass { location } => FirstOrderDist::point_mass(location.into_vec()),
            Self::Empirical { samples } => {
                FirstOrderDist::empirical(samples.into_iter().map(Vector::into_vec).collect())
            }
        }
    }

    pub fn from_dist(p: &FirstOrderDist) -> Self {
        let comp = |g: &Gaussian| ComponentParams { mean: Vector::from_vec(g.mean()), var: Vector::from_vec(g.var()) };
        match p {
            FirstOrderDist::Gaussian(g) => Self::Gaussian(comp(g)),
            FirstOrderDist::Mixture(m) => {
                Self::Mixture { weights: m.weights().to_vec(), components: m.components().iter().map(comp).collect() }
            }
            FirstOrderDist::PointMass(x) => Self::PointMass { location: Vector::from_vec(x) },
            FirstOrderDist::Empirical(e) => {
                Self::Empirical { samples: e.samples().iter().map(|s| Vector::from_vec(s)).collect() }
            }
        }
    }
}

impl EnsembleRecord {
    pub fn build(self) -> Result<(String, SecondOrderEnsemble)> {
        let id = self.instance_id;
        let context = |e: Error| match e {
            Error::InvalidDistribution(m) => Error::InvalidDistribution(format!("instance `{id}`: {m}")),
            Error::InvalidEnsemble(m) => Error::InvalidEnsemble(format!("instance `{id}`: {m}")),
            other => other,
        };
        let given = self.members.iter().filter(|m| m.weight.is_some()).count();
        if given != 0 && given != self.members.len() {
            return Err(context(Error::InvalidEnsemble("weights must be given for all members or none".into())));
        }
        let weights: Vec<f64> = self.members.iter().filter_map(|m| m.weight).collect();
        let members =
            self.members.into_iter().map(|m| m.params.build()).collect::<Result<Vec<_>>>().map_err(context)?;
        let ensemble =
            if given == 0 { SecondOrderEnsemble::uniform(members) } else { SecondOrderEnsemble::new(members, weights) }
                .map_err(context)?;
        Ok((id, ensemble))
    }

    pub fn from_ensemble(instance_id: impl Into<String>, q: &SecondOrderEnsemble) -> Self {
        Self {
            instance_id: instance_id.into(),
            members: q
                .iter()
                .map(|(w, p)| MemberRecord { weight: Some(w), params: MemberParams::from_dist(p) })
                .collect(),
        }
    }
}

fn parse_records(text: &str) -> Result<Vec<EnsembleRecord>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| Error::Parse(e.to_string()));
    }
    serde_json::Deserializer::from_str(trimmed)
        .into_iter::<EnsembleRecord>()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Parse(format!("record {}: {e}", i + 1))))
        .collect()
}

/// Parses and validates ensemble records.
pub fn parse_ensembles(text: &str) -> Result<Vec<(String, SecondOrderEnsemble)>> {
    parse_records(text)?.into_iter().map(EnsembleRecord::build).collect()
}

/// Serializes ensembles as one JSON record per line.
pub fn write_ensembles<'a, I>(ensembles: I) -> Result<String>
where
    I: IntoIterator<Item = (&'a str, &'a SecondOrderEnsemble)>,
{
    let mut out = String::new();
    for (id, q) in ensembles {
        out.push_str(
            &serde_json::to_string(&EnsembleRecord::from_ensemble(id, q)).map_err(|e| Error::Parse(e.to_string()))?,
        );
        out.push('\n');
    }
    Ok(out)
}
