//! Time-series scenarios: a feeder plus load/PV profiles and controller settings.
//!
//! Profiles are piecewise constant. A controller step `t` (1-based) falls in
//! profile interval `(t - 1) / steps_per_interval`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::FeederError;
use crate::feeder::{load_feeder, ControlMode, Feeder, FeederFile};

pub const DEFAULT_V_MIN_SQ: f64 = 0.95 * 0.95;
pub const DEFAULT_V_MAX_SQ: f64 = 1.05 * 1.05;

/// Which boundary quantities are smoothed by the fixed-point update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpiTargets {
    #[default]
    Both,
    Voltage,
    Flows,
}

impl FpiTargets {
    pub fn voltage(self) -> bool {
        matches!(self, FpiTargets::Both | FpiTargets::Voltage)
    }

    pub fn flows(self) -> bool {
        matches!(self, FpiTargets::Both | FpiTargets::Flows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub feeder: Feeder,
    pub horizon: usize,
    pub step_seconds: f64,
    pub steps_per_interval: usize,
    pub load_profile: Vec<f64>,
    pub pv_profile: Vec<f64>,
    pub v_min_sq: f64,
    pub v_max_sq: f64,
    pub alpha: f64,
    pub v_root_sq: f64,
    pub fpi: FpiTargets,
}

/// Inputs that hold for one controller step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInputs {
    pub load_mult: f64,
    pub pv_mult: f64,
    pub v_root_sq: f64,
    pub v_min_sq: f64,
    pub v_max_sq: f64,
}

impl Scenario {
    /// Steady single-interval scenario with default voltage limits.
    pub fn steady(feeder: Feeder, horizon: usize, load_mult: f64, pv_mult: f64, alpha: f64) -> Self {
        Scenario {
            feeder,
            horizon,
            step_seconds: 6.0,
            steps_per_interval: horizon.max(1),
            load_profile: vec![load_mult],
            pv_profile: vec![pv_mult],
            v_min_sq: DEFAULT_V_MIN_SQ,
            v_max_sq: DEFAULT_V_MAX_SQ,
            alpha,
            v_root_sq: 1.0,
            fpi: FpiTargets::Both,
        }
    }

    pub fn validate(&self) -> Result<(), FeederError> {
        let bad = |m: &str| Err(FeederError::invalid(m.to_string()));
        if !(self.v_min_sq > 0.0 && self.v_min_sq < self.v_max_sq) {
            return bad("voltage bounds must satisfy 0 < v_min_sq < v_max_sq");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be a finite nonnegative number");
        }
        if !(self.v_root_sq > 0.0) {
            return bad("v_root_sq must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least one step");
        }
        if self.steps_per_interval == 0 {
            return bad("steps per profile interval must be at least one");
        }
        if self.load_profile.len() != self.pv_profile.len() {
            return bad("load and PV profiles differ in length");
        }
        if self.load_profile.len() < self.intervals() {
            return Err(FeederError::Profile(format!(
                "profile has {} intervals, horizon needs {}",
                self.load_profile.len(),
                self.intervals()
            )));
        }
        if self
            .load_profile
            .iter()
            .chain(&self.pv_profile)
            .any(|m| !(*m >= 0.0 && m.is_finite()))
        {
            return Err(FeederError::Profile("profile multipliers must be finite and >= 0".into()));
        }
        let pv_max = self.pv_profile.iter().take(self.intervals()).fold(0.0f64, |a, &b| a.max(b));
        for j in self.feeder.der_buses() {
            let bus = self.feeder.bus(j);
            let der = bus.der.expect("DER bus");
            if der.mode == ControlMode::Vvc && der.available_p(pv_max) > der.rating_s {
                return Err(FeederError::Profile(format!(
                    "PV multiplier {pv_max} leaves no reactive capability at bus {}",
                    bus.id
                )));
            }
        }
        Ok(())
    }

    /// Number of profile intervals touched by the horizon.
    pub fn intervals(&self) -> usize {
        self.horizon.div_ceil(self.steps_per_interval)
    }

    /// Profile interval of 1-based step `t`; step 0 (initialization) maps to interval 0.
    pub fn interval_of(&self, t: usize) -> usize {
        t.saturating_sub(1) / self.steps_per_interval
    }

    pub fn inputs(&self, t: usize) -> StepInputs {
        let k = self.interval_of(t);
        StepInputs {
            load_mult: self.load_profile[k],
            pv_mult: self.pv_profile[k],
            v_root_sq: self.v_root_sq,
            v_min_sq: self.v_min_sq,
            v_max_sq: self.v_max_sq,
        }
    }

    /// Single control mode shared by all DERs, if any.
    pub fn uniform_mode(&self) -> Option<ControlMode> {
        let mut modes = self.feeder.buses().iter().filter_map(|b| b.der.map(|d| d.mode));
        let first = modes.next()?;
        modes.all(|m| m == first).then_some(first)
    }
}

// ---------------------------------------------------------------------------
// Scenario file

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeederSource {
    Path(PathBuf),
    Inline(FeederFile),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub feeder: FeederSource,
    pub horizon: usize,
    #[serde(default = "default_step_seconds")]
    pub step_seconds: f64,
    #[serde(default = "default_interval_seconds")]
    pub profile_interval_seconds: f64,
    /// CSV with header `step,load_mult,pv_mult`, one row per profile interval.
    #[serde(default)]
    pub profile: Option<PathBuf>,
    #[serde(default)]
    pub load_profile: Option<Vec<f64>>,
    #[serde(default)]
    pub pv_profile: Option<Vec<f64>>,
    #[serde(default = "default_v_min")]
    pub v_min_sq: f64,
    #[serde(default = "default_v_max")]
    pub v_max_sq: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_v_root")]
    pub v_root_sq: f64,
    #[serde(default)]
    pub fpi: FpiTargets,
    /// Overrides the mode of every DER when present.
    #[serde(default)]
    pub mode: Option<ControlMode>,
}

fn default_step_seconds() -> f64 {
    6.0
}
fn default_interval_seconds() -> f64 {
    60.0
}
fn default_v_min() -> f64 {
    DEFAULT_V_MIN_SQ
}
fn default_v_max() -> f64 {
    DEFAULT_V_MAX_SQ
}
fn default_v_root() -> f64 {
    1.0
}

#[derive(Debug, Deserialize, Serialize, PartialEq)]
struct ProfileRow {
    step: usize,
    load_mult: f64,
    pv_mult: f64,
}

/// Reads a profile CSV (`step,load_mult,pv_mult`) into (load, pv) series.
pub fn load_profile_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>), FeederError> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| FeederError::Profile(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| FeederError::Profile(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["step", "load_mult", "pv_mult"] {
        return Err(FeederError::Profile(format!(
            "{}: expected header step,load_mult,pv_mult",
            path.display()
        )));
    }
    let (mut load, mut pv) = (Vec::new(), Vec::new());
    for (i, row) in rdr.deserialize::<ProfileRow>().enumerate() {
        let row = row.map_err(|e| FeederError::Profile(format!("{}: {e}", path.display())))?;
        if row.step != i {
            return Err(FeederError::Profile(format!(
                "{}: row {} has step {}, expected {}",
                path.display(),
                i + 1,
                row.step,
                i
            )));
        }
        load.push(row.load_mult);
        pv.push(row.pv_mult);
    }
    Ok((load, pv))
}

pub fn write_profile_csv(path: impl AsRef<Path>, load: &[f64], pv: &[f64]) -> Result<(), FeederError> {
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| FeederError::Profile(e.to_string()))?;
    for (step, (l, p)) in load.iter().zip(pv).enumerate() {
        w.serialize(ProfileRow { step, load_mult: *l, pv_mult: *p })
            .map_err(|e| FeederError::Profile(e.to_string()))?;
    }
    w.flush().map_err(|e| FeederError::Profile(e.to_string()))?;
    Ok(())
}

impl ScenarioFile {
    /// Resolves relative paths against `base_dir` and validates the result.
    pub fn into_scenario(self, base_dir: &Path) -> Result<Scenario, FeederError> {
        let mut feeder = match self.feeder {
            FeederSource::Path(p) => load_feeder(base_dir.join(p))?,
            FeederSource::Inline(f) => f.into_feeder()?,
        };
        if let Some(mode) = self.mode {
            feeder = feeder.with_mode(mode)?;
        }
        let (load_profile, pv_profile) = match (self.profile, self.load_profile, self.pv_profile) {
            (Some(p), None, None) => load_profile_csv(base_dir.join(p))?,
            (None, Some(l), Some(p)) => (l, p),
            (None, None, None) => (vec![1.0], vec![1.0]),
            _ => {
                return Err(FeederError::Profile(
                    "give either `profile` or both `load_profile` and `pv_profile`".into(),
                ))
            }
        };
        let ratio = self.profile_interval_seconds / self.step_seconds;
        if !(self.step_seconds > 0.0) || !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(FeederError::invalid(
                "profile_interval_seconds must be a positive integer multiple of step_seconds",
            ));
        }
        let scenario = Scenario {
            feeder,
            horizon: self.horizon,
            step_seconds: self.step_seconds,
            steps_per_interval: ratio.round() as usize,
            load_profile,
            pv_profile,
            v_min_sq: self.v_min_sq,
            v_max_sq: self.v_max_sq,
            alpha: self.alpha,
            v_root_sq: self.v_root_sq,
            fpi: self.fpi,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, FeederError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FeederError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: ScenarioFile = serde_json::from_str(&text)?;
    file.into_scenario(path.parent().unwrap_or(Path::new(".")))
}
