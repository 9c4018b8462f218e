//! Institutional governance profiles and the coherence index derived from them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mog::WeightVector;

/// Governance variables of one institution: control maturity (1-5),
/// fraction of implemented controls, risk-indicator activation rate and
/// mean vulnerability score (0-10).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct NodeProfile {
    name: String,
    cmm: u8,
    kci: f64,
    kri: f64,
    cvss: f64,
}

#[derive(Serialize, Deserialize)]
struct RawProfile {
    name: String,
    cmm: i64,
    kci: f64,
    kri: f64,
    cvss: f64,
}

impl TryFrom<RawProfile> for NodeProfile {
    type Error = Error;

    fn try_from(r: RawProfile) -> Result<Self> {
        let cmm = u8::try_from(r.cmm)
            .map_err(|_| Error::Profile(format!("{}: cmm {} outside [1, 5]", r.name, r.cmm)))?;
        NodeProfile::new(r.name, cmm, r.kci, r.kri, r.cvss)
    }
}

impl From<NodeProfile> for RawProfile {
    fn from(p: NodeProfile) -> Self {
        RawProfile {
            name: p.name,
            cmm: p.cmm as i64,
            kci: p.kci,
            kri: p.kri,
            cvss: p.cvss,
        }
    }
}

impl NodeProfile {
    pub fn new(name: impl Into<String>, cmm: u8, kci: f64, kri: f64, cvss: f64) -> Result<Self> {
        let name = name.into();
        let bad = |what: &str| Err(Error::Profile(format!("{name}: {what}")));
        if !(1..=5).contains(&cmm) {
            return bad(&format!("cmm {cmm} outside [1, 5]"));
        }
        if !(0.0..=1.0).contains(&kci) {
            return bad(&format!("kci {kci} outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&kri) {
            return bad(&format!("kri {kri} outside [0, 1]"));
        }
        if !(0.0..=10.0).contains(&cvss) {
            return bad(&format!("cvss {cvss} outside [0, 10]"));
        }
        Ok(Self {
            name,
            cmm,
            kci,
            kri,
            cvss,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn cmm(&self) -> u8 {
        self.cmm
    }
    pub fn kci(&self) -> f64 {
        self.kci
    }
    pub fn kri(&self) -> f64 {
        self.kri
    }
    pub fn cvss(&self) -> f64 {
        self.cvss
    }

    /// The three institutions used throughout the reference experiments:
    /// financial, health and government.
    pub fn reference_nodes() -> Vec<NodeProfile> {
        vec![
            NodeProfile::new("Financial", 4, 0.82, 0.12, 3.2).unwrap(),
            NodeProfile::new("Health", 3, 0.70, 0.25, 5.1).unwrap(),
            NodeProfile::new("Government", 2, 0.55, 0.40, 6.8).unwrap(),
        ]
    }
}

/// Institutional Coherence Index: `(cmm/5) · kci · (1 − kri) · (1 − cvss/10)`.
pub fn compute_icc(profile: &NodeProfile) -> f64 {
    (profile.cmm as f64 / 5.0) * profile.kci * (1.0 - profile.kri) * (1.0 - profile.cvss / 10.0)
}

/// Proportional normalization of non-negative scores onto the simplex.
pub fn normalize_prior(iccs: &[f64]) -> Result<WeightVector> {
    if iccs.is_empty() {
        return Err(Error::DegeneratePrior("empty ICC vector".into()));
    }
    if let Some(bad) = iccs.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::DegeneratePrior(format!("entry {bad} is not a non-negative number")));
    }
    let total: f64 = iccs.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegeneratePrior("all ICC values are zero".into()));
    }
    WeightVector::new(iccs.iter().map(|v| v / total).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct IccPrior {
    pub icc: Vec<f64>,
    pub normalized: WeightVector,
}

impl IccPrior {
    pub fn from_profiles(profiles: &[NodeProfile]) -> Result<Self> {
        let icc: Vec<f64> = profiles.iter().map(compute_icc).collect();
        let normalized = normalize_prior(&icc)?;
        Ok(Self { icc, normalized })
    }
}

#[derive(Deserialize)]
struct ProfilesFile {
    node: Vec<NodeProfile>,
}

/// Reads `[[node]]` tables (`name`, `cmm`, `kci`, `kri`, `cvss`) from a TOML file.
pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<NodeProfile>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ProfilesFile = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })?;
    Ok(file.node)
}
