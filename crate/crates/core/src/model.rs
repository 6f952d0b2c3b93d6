//! Model specifications: family, structure, named parameters and box bounds.
//!
//! The JSON wire format accepted by the CLI is
//!
//! ```json
//! {"family":"ET","structure":"M1","params":{"q1":0.011,"...":0.0},
//!  "fixed":["alpha0"],"bounds":{"q3":[0.0,20.0]}}
//! ```

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Max-stable process family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "BR")]
    BrownResnick,
    #[serde(rename = "ET")]
    ExtremalT,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::BrownResnick => "BR",
            Family::ExtremalT => "ET",
        }
    }
}

/// Dependence structure of the variogram / correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structure {
    #[serde(rename = "iso")]
    Iso,
    #[serde(rename = "aniso")]
    Aniso,
    #[serde(rename = "M1")]
    M1,
    #[serde(rename = "M2")]
    M2,
    #[serde(rename = "M3")]
    M3,
    #[serde(rename = "M_BD")]
    Mbd,
    #[serde(rename = "M_HG")]
    Mhg,
}

impl Structure {
    pub fn label(self) -> &'static str {
        match self {
            Structure::Iso => "iso",
            Structure::Aniso => "aniso",
            Structure::M1 => "M1",
            Structure::M2 => "M2",
            Structure::M3 => "M3",
            Structure::Mbd => "M_BD",
            Structure::Mhg => "M_HG",
        }
    }

    /// Structure-specific parameter names, without the nugget or `nu`.
    fn base_names(self) -> &'static [&'static str] {
        match self {
            Structure::Iso => &["q", "alpha0"],
            Structure::Aniso => &["q1", "q2", "theta", "alpha0"],
            Structure::M1 => &["q1", "q2", "theta", "alpha0", "q3"],
            Structure::M2 => &["q1", "q2", "theta", "alpha0", "alpha1", "q3", "beta"],
            Structure::M3 => &["q1", "q2", "theta", "alpha0", "alpha1", "q3", "beta", "alpha"],
            Structure::Mbd => &["q1", "q2", "theta", "q3", "beta"],
            Structure::Mhg => &["a_wx", "b_wx", "a_wy", "b_wy", "a_del", "b_del", "alpha0"],
        }
    }

    /// Full ordered parameter list for a family.
    pub fn param_names(self, family: Family) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = self.base_names().to_vec();
        names.push("nug");
        if family == Family::ExtremalT {
            names.push("nu");
        }
        names
    }
}

fn default_bound(name: &str, family: Family) -> (f64, f64) {
    match name {
        "q" | "q1" | "q2" => (1e-4, 10.0),
        "theta" => (-FRAC_PI_4, FRAC_PI_4),
        "alpha0" | "alpha1" => (0.05, 2.0),
        "beta" => (0.05, 1.0),
        "alpha" => (-10.0, 1.0),
        "q3" => (0.0, 50.0),
        "nug" => match family {
            Family::BrownResnick => (0.0, 10.0),
            Family::ExtremalT => (0.0, 0.99),
        },
        "nu" => (0.1, 30.0),
        "a_wx" | "a_wy" => (-3.0, 8.0),
        "b_wx" | "b_wy" => (-8.0, 8.0),
        "a_del" | "b_del" => (-4.0, 4.0),
        _ => unreachable!("unknown parameter '{name}'"),
    }
}

fn default_value(name: &str) -> f64 {
    match name {
        "q" | "q1" | "q2" => 0.02,
        "theta" => 0.0,
        "alpha0" | "alpha1" => 1.0,
        "beta" => 0.9,
        "alpha" => 0.5,
        "q3" => 0.5,
        "nug" => 0.1,
        "nu" => 2.0,
        "a_wx" | "a_wy" => 4.0,
        "b_wx" | "b_wy" | "a_del" | "b_del" => 0.0,
        _ => unreachable!("unknown parameter '{name}'"),
    }
}

/// A dependence model: family + structure + named parameter vector with
/// per-parameter closed box bounds and an optional set of pinned parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecJson", into = "SpecJson")]
pub struct DependenceSpec {
    family: Family,
    structure: Structure,
    names: Vec<&'static str>,
    values: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    fixed: Vec<bool>,
}

impl DependenceSpec {
    /// Build a spec with every structure parameter given explicitly.
    pub fn new(family: Family, structure: Structure, params: &[(&str, f64)]) -> Result<Self> {
        let mut spec = Self::with_defaults(family, structure)?;
        let mut seen = vec![false; spec.names.len()];
        for &(name, value) in params {
            let idx = spec.index_of(name)?;
            seen[idx] = true;
            spec.values[idx] = value;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "missing parameter '{}' for structure {}",
                spec.names[i],
                structure.label()
            )));
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Build a spec with neutral default parameter values.
    pub fn with_defaults(family: Family, structure: Structure) -> Result<Self> {
        if structure == Structure::Mhg && family == Family::BrownResnick {
            return Err(Error::Validation(
                "M_HG is defined through a correlation function and is available for the extremal-t family only".into(),
            ));
        }
        let names = structure.param_names(family);
        let values = names.iter().map(|n| default_value(n)).collect();
        let (lower, upper) = names
            .iter()
            .map(|n| default_bound(n, family))
            .unzip();
        Ok(DependenceSpec {
            family,
            structure,
            fixed: vec![false; names.len()],
            names,
            values,
            lower,
            upper,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn names(&self) -> &[&'static str] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "parameter '{}' does not belong to {} {}",
                    name,
                    self.family.label(),
                    self.structure.label()
                ))
            })
    }

    pub fn value(&self, name: &str) -> Result<f64> {
        Ok(self.values[self.index_of(name)?])
    }

    pub fn bound(&self, name: &str) -> Result<(f64, f64)> {
        let i = self.index_of(name)?;
        Ok((self.lower[i], self.upper[i]))
    }

    pub fn set_value(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self.index_of(name)?;
        check_in_bound(self.names[i], value, self.lower[i], self.upper[i])?;
        self.values[i] = value;
        Ok(())
    }

    /// Override the box bound of one parameter (the value must stay inside).
    pub fn set_bound(&mut self, name: &str, lower: f64, upper: f64) -> Result<()> {
        let i = self.index_of(name)?;
        if !(lower < upper) {
            return Err(Error::Validation(format!("empty bound [{lower}, {upper}] for '{name}'")));
        }
        self.lower[i] = lower;
        self.upper[i] = upper;
        check_in_bound(self.names[i], self.values[i], lower, upper)
    }

    /// Pin parameters: they are excluded from every optimization stage.
    pub fn set_fixed(&mut self, names: &[&str]) -> Result<()> {
        for f in self.fixed.iter_mut() {
            *f = false;
        }
        for name in names {
            let i = self.index_of(name)?;
            self.fixed[i] = true;
        }
        Ok(())
    }

    pub fn is_fixed(&self, name: &str) -> Result<bool> {
        Ok(self.fixed[self.index_of(name)?])
    }

    pub fn fixed_names(&self) -> Vec<&'static str> {
        self.names
            .iter()
            .zip(&self.fixed)
            .filter_map(|(n, f)| f.then_some(*n))
            .collect()
    }

    pub fn free_names(&self) -> Vec<&'static str> {
        self.names
            .iter()
            .zip(&self.fixed)
            .filter_map(|(n, f)| (!f).then_some(*n))
            .collect()
    }

    /// Verify every parameter lies inside its bound interval.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.names.len() {
            check_in_bound(self.names[i], self.values[i], self.lower[i], self.upper[i])?;
        }
        Ok(())
    }
}

fn check_in_bound(name: &str, value: f64, lower: f64, upper: f64) -> Result<()> {
    if !value.is_finite() || value < lower || value > upper {
        return Err(Error::Bounds {
            name: name.to_string(),
            value,
            lower,
            upper,
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SpecJson {
    family: Family,
    structure: Structure,
    params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    fixed: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    bounds: BTreeMap<String, (f64, f64)>,
}

impl TryFrom<SpecJson> for DependenceSpec {
    type Error = Error;

    fn try_from(json: SpecJson) -> Result<Self> {
        let mut spec = DependenceSpec::with_defaults(json.family, json.structure)?;
        for (name, (lo, hi)) in &json.bounds {
            spec.set_bound(name, *lo, *hi)?;
        }
        let expected: Vec<&str> = spec.names.iter().copied().collect();
        for name in json.params.keys() {
            if !expected.contains(&name.as_str()) {
                return Err(Error::Validation(format!(
                    "parameter '{name}' does not belong to {} {}",
                    json.family.label(),
                    json.structure.label()
                )));
            }
        }
        for (i, name) in expected.iter().enumerate() {
            match json.params.get(*name) {
                Some(v) => spec.values[i] = *v,
                None => {
                    return Err(Error::Validation(format!(
                        "missing parameter '{name}' for structure {}",
                        json.structure.label()
                    )))
                }
            }
        }
        let fixed: Vec<&str> = json.fixed.iter().map(String::as_str).collect();
        spec.set_fixed(&fixed)?;
        spec.validate()?;
        Ok(spec)
    }
}

impl From<DependenceSpec> for SpecJson {
    fn from(spec: DependenceSpec) -> Self {
        SpecJson {
            family: spec.family,
            structure: spec.structure,
            params: spec
                .names
                .iter()
                .zip(&spec.values)
                .map(|(n, v)| (n.to_string(), *v))
                .collect(),
            fixed: spec.fixed_names().iter().map(|n| n.to_string()).collect(),
            bounds: spec
                .names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.to_string(), (spec.lower[i], spec.upper[i])))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_lists_match_structures() {
        let spec = DependenceSpec::with_defaults(Family::ExtremalT, Structure::M1).unwrap();
        assert_eq!(spec.names(), &["q1", "q2", "theta", "alpha0", "q3", "nug", "nu"]);
        let spec = DependenceSpec::with_defaults(Family::BrownResnick, Structure::Iso).unwrap();
        assert_eq!(spec.names(), &["q", "alpha0", "nug"]);
        let spec = DependenceSpec::with_defaults(Family::BrownResnick, Structure::Mbd).unwrap();
        assert_eq!(spec.names(), &["q1", "q2", "theta", "q3", "beta", "nug"]);
    }

    #[test]
    fn brown_resnick_carries_no_nu() {
        let spec = DependenceSpec::with_defaults(Family::BrownResnick, Structure::M2).unwrap();
        assert!(spec.value("nu").is_err());
    }

    #[test]
    fn mhg_requires_extremal_t() {
        assert!(DependenceSpec::with_defaults(Family::BrownResnick, Structure::Mhg).is_err());
        assert!(DependenceSpec::with_defaults(Family::ExtremalT, Structure::Mhg).is_ok());
    }

    #[test]
    fn out_of_bounds_value_rejected() {
        let mut spec = DependenceSpec::with_defaults(Family::ExtremalT, Structure::Iso).unwrap();
        assert!(matches!(spec.set_value("alpha0", 2.5), Err(Error::Bounds { .. })));
        assert!(spec.set_value("alpha0", 2.0).is_ok());
        assert!(spec.set_value("nug", -0.1).is_err());
    }

    #[test]
    fn missing_parameter_rejected() {
        let err = DependenceSpec::new(Family::BrownResnick, Structure::Iso, &[("q", 0.1)]).unwrap_err();
        assert!(err.to_string().contains("alpha0"));
    }

    #[test]
    fn json_round_trip() {
        let mut spec = DependenceSpec::new(
            Family::ExtremalT,
            Structure::M1,
            &[
                ("q1", 0.011),
                ("q2", 0.006),
                ("theta", -0.726),
                ("alpha0", 1.323),
                ("q3", 1.302),
                ("nug", 0.315),
                ("nu", 4.094),
            ],
        )
        .unwrap();
        spec.set_fixed(&["alpha0"]).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: DependenceSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        assert!(back.is_fixed("alpha0").unwrap());
    }

    #[test]
    fn json_rejects_unknown_parameter() {
        let json = r#"{"family":"BR","structure":"iso","params":{"q":0.1,"alpha0":1.0,"nug":0.0,"nu":3.0}}"#;
        assert!(serde_json::from_str::<DependenceSpec>(json).is_err());
    }
}
