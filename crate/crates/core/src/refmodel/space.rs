use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEntry {
    pub name: String,
    pub unit: String,
    pub lower: f64,
    pub upper: f64,
}

impl ParameterEntry {
    pub fn new(name: &str, unit: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            unit: unit.to_string(),
            lower,
            upper,
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Ordered, named, bounded parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParameterEntry>", into = "Vec<ParameterEntry>")]
pub struct ParameterSpace {
    entries: Vec<ParameterEntry>,
}

impl TryFrom<Vec<ParameterEntry>> for ParameterSpace {
    type Error = Error;

    fn try_from(entries: Vec<ParameterEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<ParameterSpace> for Vec<ParameterEntry> {
    fn from(space: ParameterSpace) -> Self {
        space.entries
    }
}

impl ParameterSpace {
    pub fn new(entries: Vec<ParameterEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if !(e.lower < e.upper) || !e.lower.is_finite() || !e.upper.is_finite() {
                return Err(Error::Config(format!(
                    "parameter {}: lower bound {} must be below upper bound {}",
                    e.name, e.lower, e.upper
                )));
            }
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::Config(format!("duplicate parameter name {}", e.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParameterEntry] {
        &self.entries
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn lower(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.upper).collect()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.entries.iter().map(ParameterEntry::midpoint).collect()
    }

    /// The named entries, in the order given.
    pub fn subset(&self, names: &[&str]) -> Result<Self> {
        let entries = names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .map(|i| self.entries[i].clone())
                    .ok_or_else(|| Error::Config(format!("unknown parameter {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.len() {
            return Err(Error::ParameterShape {
                expected: self.len(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.len()
            && self
                .entries
                .iter()
                .zip(theta)
                .all(|(e, &x)| x >= e.lower && x <= e.upper)
    }

    /// Affine map of each coordinate onto [-1, 1].
    pub fn normalize(&self, theta: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .zip(theta)
            .map(|(e, &x)| 2.0 * (x - e.lower) / e.width() - 1.0)
            .collect()
    }

    pub fn denormalize(&self, unit: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .zip(unit)
            .map(|(e, &u)| e.lower + 0.5 * (u + 1.0) * e.width())
            .collect()
    }

    /// Map a point of the unit cube [0, 1)^n into the box.
    pub fn from_unit_cube(&self, u: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .zip(u)
            .map(|(e, &x)| e.lower + x * e.width())
            .collect()
    }
}
