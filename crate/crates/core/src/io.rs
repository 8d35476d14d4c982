//! JSON documents for instances and profiles, and the canonical encoding
//! used for files and hashes.
//!
//! Canonical JSON has sorted object keys, no insignificant whitespace,
//! integers written as integers and every float in exponent notation with
//! 17 significant digits, so it round-trips bit for bit. Non-finite floats
//! become `null`, as with `serde_json`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Instance, ModelError};
use crate::refunds::{RefundScheme, RefundSchemeId};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDoc {
    pub budget: f64,
    pub valuations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectDoc {
    pub target: f64,
    pub bonus: f64,
    /// Per-project scheme override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refund: Option<RefundSchemeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_slope: Option<f64>,
}

/// On-disk form of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub agents: Vec<AgentDoc>,
    pub projects: Vec<ProjectDoc>,
    #[serde(default)]
    pub refund: RefundSchemeId,
    /// Slope of the linear-additive scheme; defaults to
    /// `min_j(ϑ_j - T_j) / max_j ϑ_j` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_slope: Option<f64>,
}

fn split(scheme: &RefundScheme<f64>) -> (RefundSchemeId, Option<f64>) {
    match *scheme {
        RefundScheme::Ppr => (RefundSchemeId::Ppr, None),
        RefundScheme::LinearAdditive { slope } => (RefundSchemeId::LinearAdditive, Some(slope)),
    }
}

impl InstanceDoc {
    pub fn from_instance(instance: &Instance<f64>) -> Self {
        let agents = instance
            .valuations()
            .iter()
            .zip(instance.budgets())
            .map(|(row, &budget)| AgentDoc {
                budget,
                valuations: row.clone(),
            })
            .collect();
        let projects = (0..instance.n_projects())
            .map(|j| {
                let (refund, linear_slope) = match instance.project_refunds() {
                    Some(schemes) => {
                        let (id, slope) = split(&schemes[j]);
                        (Some(id), slope)
                    }
                    None => (None, None),
                };
                ProjectDoc {
                    target: instance.targets()[j],
                    bonus: instance.bonuses()[j],
                    refund,
                    linear_slope,
                }
            })
            .collect();
        let (refund, linear_slope) = split(instance.refund());
        InstanceDoc {
            agents,
            projects,
            refund,
            linear_slope,
        }
    }

    pub fn into_instance(self) -> Result<Instance<f64>, ModelError> {
        let base = Instance::new(
            self.agents.iter().map(|a| a.valuations.clone()).collect(),
            self.agents.iter().map(|a| a.budget).collect(),
            self.projects.iter().map(|p| p.target).collect(),
            self.projects.iter().map(|p| p.bonus).collect(),
            RefundScheme::Ppr,
        )?;
        let shared = self.refund.resolve(&base, self.linear_slope)?;
        let instance = base.with_refund(shared)?;
        if self.projects.iter().all(|p| p.refund.is_none()) {
            return Ok(instance);
        }
        let schemes = self
            .projects
            .iter()
            .map(|p| match p.refund {
                Some(id) => id.resolve(&instance, p.linear_slope.or(self.linear_slope)),
                None => Ok(shared),
            })
            .collect::<Result<Vec<_>, _>>()?;
        instance.with_project_refunds(schemes)
    }
}

pub fn instance_from_json(text: &str) -> Result<Instance<f64>, IoError> {
    let doc: InstanceDoc = serde_json::from_str(text)?;
    Ok(doc.into_instance()?)
}

pub fn instance_to_json(instance: &Instance<f64>) -> Result<String, IoError> {
    to_canonical_json(&InstanceDoc::from_instance(instance))
}

/// Serializes `value` as canonical JSON.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String, IoError> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&value, &mut out)?;
    Ok(out)
}

fn write_value(value: &Value, out: &mut String) -> Result<(), IoError> {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_u64() {
                write!(out, "{i}").unwrap();
            } else if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else {
                let f = n.as_f64().expect("JSON number is u64, i64 or f64");
                write!(out, "{f:.16e}").unwrap();
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s)?),
        Value::Array(items) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write_value(item, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (k, key) in keys.into_iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key)?);
                out.push(':');
                write_value(&map[key], out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ContributionProfile;

    fn sample() -> Instance<f64> {
        Instance::new(
            vec![vec![0.1, 2.5], vec![3.0, 1.0 / 3.0]],
            vec![1.0, 2.0],
            vec![2.0, 1.0],
            vec![0.5, 0.25],
            RefundScheme::Ppr,
        )
        .unwrap()
    }

    #[test]
    fn floats_use_seventeen_digits() {
        assert_eq!(to_canonical_json(&0.1).unwrap(), "1.0000000000000001e-1");
        assert_eq!(to_canonical_json(&3u32).unwrap(), "3");
        assert_eq!(
            to_canonical_json(&serde_json::json!({"b": 1, "a": [true, null]})).unwrap(),
            r#"{"a":[true,null],"b":1}"#
        );
        assert_eq!(to_canonical_json(&f64::NAN).unwrap(), "null");
    }

    #[test]
    fn instance_round_trip() {
        let inst = sample();
        let text = instance_to_json(&inst).unwrap();
        assert_eq!(instance_from_json(&text).unwrap(), inst);

        let linear = inst.with_refund(RefundScheme::linear(0.3).unwrap()).unwrap();
        let text = instance_to_json(&linear).unwrap();
        assert!(text.contains(r#""refund":"linear-additive""#));
        assert_eq!(instance_from_json(&text).unwrap(), linear);

        let mixed = inst
            .clone()
            .with_project_refunds(vec![RefundScheme::Ppr, RefundScheme::linear(0.2).unwrap()])
            .unwrap();
        assert_eq!(instance_from_json(&instance_to_json(&mixed).unwrap()).unwrap(), mixed);
    }

    #[test]
    fn missing_slope_gets_default() {
        let text = r#"{"agents":[{"budget":1,"valuations":[4]}],
                       "projects":[{"target":2,"bonus":1}],
                       "refund":"linear-additive"}"#;
        let inst = instance_from_json(text).unwrap();
        assert_eq!(*inst.refund(), RefundScheme::LinearAdditive { slope: 0.5 });
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"agents":[],"projects":[],"extra":1}"#;
        assert!(matches!(instance_from_json(text), Err(IoError::Json(_))));
    }

    #[test]
    fn profile_round_trip() {
        let profile = ContributionProfile::new(vec![vec![0.25, 1e-12], vec![0.0, 7.0]]);
        let text = to_canonical_json(&profile).unwrap();
        let back: ContributionProfile<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, profile);
    }
}
