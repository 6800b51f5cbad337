//! Parameter files and `key=value` overrides.
//!
//! A parameter file is one JSON object holding the model rates and,
//! optionally, the population:
//!
//! ```json
//! {"alpha": [1, 2], "beta": [1, 1], "p": [[1, 0.5], [0.5, 1]],
//!  "n": 1000, "x": [400, 600], "y": [500, 500]}
//! ```
//!
//! Rates may be given as `{"pi": [[...]]}` instead, and the population as
//! fractions `{"x_frac": [...], "y_frac": [...]}` with an optional `n`.

use std::path::Path;

use pairsim::{ModelParams, PopulationCounts, PopulationFractions, SquareMatrix};
use serde::Deserialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    alpha: Option<Vec<f64>>,
    beta: Option<Vec<f64>>,
    p: Option<Vec<Vec<f64>>>,
    pi: Option<Vec<Vec<f64>>>,
    n: Option<u64>,
    x: Option<Vec<u64>>,
    y: Option<Vec<u64>>,
    x_frac: Option<Vec<f64>>,
    y_frac: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub enum Population {
    Counts(PopulationCounts),
    Fractions {
        fractions: PopulationFractions,
        n: Option<u64>,
    },
}

#[derive(Clone, Debug)]
pub struct Input {
    pub params: ModelParams,
    pub population: Option<Population>,
}

impl Input {
    pub fn fractions(&self) -> Result<PopulationFractions, CliError> {
        match &self.population {
            Some(Population::Counts(c)) => Ok(c.fractions()),
            Some(Population::Fractions { fractions, .. }) => Ok(fractions.clone()),
            None => Err(CliError::Validation("the parameter file has no population".into())),
        }
    }

    /// Integer population; `n` overrides the size given in the file.
    pub fn counts(&self, n: Option<u64>) -> Result<PopulationCounts, CliError> {
        match (&self.population, n) {
            (Some(Population::Counts(c)), None) => Ok(c.clone()),
            (Some(Population::Counts(c)), Some(n)) if n == c.n() => Ok(c.clone()),
            (Some(Population::Counts(c)), Some(n)) => Ok(PopulationCounts::from_fractions(&c.fractions(), n)?),
            (Some(Population::Fractions { fractions, n: file_n }), n) => {
                let n = n.or(*file_n).ok_or_else(|| {
                    CliError::Validation("population size unknown: give \"n\" in the file or --n".into())
                })?;
                Ok(PopulationCounts::from_fractions(fractions, n)?)
            }
            (None, _) => Err(CliError::Validation("the parameter file has no population".into())),
        }
    }
}

/// Reads `path` and applies `overrides` before interpretation.
pub fn load(path: &Path, overrides: &[String]) -> Result<Input, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    parse(value)
}

/// `key=value` with a dotted key (`pi.0.1=2.5`, `n=500`); the value is JSON.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override {assignment:?} is not key=value")))?;
    let new: Value = serde_json::from_str(raw)
        .map_err(|e| CliError::Validation(format!("override {key}: value {raw:?} is not JSON: {e}")))?;
    let mut slot = root;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map.entry(part.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::Validation(format!("override {key}: {part:?} is not an index")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Validation(format!("override {key}: index {idx} out of range ({len})")))?
            }
            _ => return Err(CliError::Validation(format!("override {key}: cannot descend into {part:?}"))),
        };
    }
    *slot = new;
    Ok(())
}

fn parse(value: Value) -> Result<Input, CliError> {
    let raw: RawInput =
        serde_json::from_value(value).map_err(|e| CliError::Validation(format!("parameter file: {e}")))?;
    let params = match (raw.pi, raw.alpha, raw.beta, raw.p) {
        (Some(pi), None, None, None) => ModelParams::from_pi(SquareMatrix::from_rows(&pi)?)?,
        (None, Some(alpha), Some(beta), Some(p)) => ModelParams::new(alpha, beta, SquareMatrix::from_rows(&p)?)?,
        _ => {
            return Err(CliError::Validation(
                "give either \"pi\" or all of \"alpha\", \"beta\", \"p\"".into(),
            ))
        }
    };
    let population = match (raw.x, raw.y, raw.x_frac, raw.y_frac) {
        (Some(x), Some(y), None, None) => {
            let counts = PopulationCounts::new(x, y)?;
            if let Some(n) = raw.n {
                if n != counts.n() {
                    return Err(CliError::Validation(format!(
                        "\"n\" = {n} but the counts sum to {}",
                        counts.n()
                    )));
                }
            }
            Some(Population::Counts(counts))
        }
        (None, None, Some(x), Some(y)) => Some(Population::Fractions {
            fractions: PopulationFractions::new(x, y)?,
            n: raw.n,
        }),
        (None, None, None, None) => None,
        _ => {
            return Err(CliError::Validation(
                "population needs both \"x\" and \"y\", or both \"x_frac\" and \"y_frac\"".into(),
            ))
        }
    };
    if let Some(pop) = &population {
        let k = match pop {
            Population::Counts(c) => c.k(),
            Population::Fractions { fractions, .. } => fractions.k(),
        };
        if k != params.k() {
            return Err(CliError::Validation(format!(
                "rates have k = {}, population has k = {k}",
                params.k()
            )));
        }
    }
    Ok(Input { params, population })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_walk_objects_and_arrays() {
        let mut v = json!({"pi": [[1.0, 2.0], [2.0, 1.0]], "n": 10});
        apply_override(&mut v, "pi.0.1=5").unwrap();
        apply_override(&mut v, "n=20").unwrap();
        assert_eq!(v, json!({"pi": [[1.0, 5], [2.0, 1.0]], "n": 20}));
        assert!(apply_override(&mut v, "pi.7.0=1").is_err());
        assert!(apply_override(&mut v, "n").is_err());
    }

    #[test]
    fn both_parameter_forms_parse() {
        let a = parse(json!({"alpha": [1.0, 2.0], "beta": [1.0, 2.0], "p": [[1, 1], [1, 1]]})).unwrap();
        assert_eq!(a.params.pi().to_rows(), vec![vec![2.0, 3.0], vec![3.0, 4.0]]);
        let b = parse(json!({"pi": [[2, 3], [3, 4]], "x_frac": [0.5, 0.5], "y_frac": [0.5, 0.5]})).unwrap();
        assert_eq!(b.counts(Some(10)).unwrap().x(), &[5, 5]);
        assert!(b.counts(None).is_err());
        assert!(parse(json!({"pi": [[1]], "alpha": [1]})).is_err());
        assert!(parse(json!({"pi": [[1, 1], [1, 1]], "x": [1, 2, 3], "y": [1, 2, 3]})).is_err());
        assert!(parse(json!({"pi": [[1]], "x": [3], "y": [3], "n": 4})).is_err());
    }
}
