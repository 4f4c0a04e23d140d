//! Radial feeder data model and the JSON feeder file format.
//!
//! All quantities held by [`Feeder`] are per-unit on the system base declared
//! in the file. Line impedances and ampacities may be given either in ohms /
//! amperes (converted at ingestion) or directly in per-unit. Bus loads and DER
//! ratings are always per-unit.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FeederError;

/// Which smart-inverter function a DER runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlMode {
    /// Volt-Var: reactive output is the decision, active output follows irradiance.
    #[serde(rename = "VVC", alias = "vvc")]
    Vvc,
    /// Volt-Watt: active output is the decision, reactive output is zero.
    #[serde(rename = "VWC", alias = "vwc")]
    Vwc,
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlMode::Vvc => f.write_str("VVC"),
            ControlMode::Vwc => f.write_str("VWC"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerSpec {
    /// Rated real power of the PV array (pu). Available power is this times the PV multiplier.
    pub rating_p: f64,
    /// Inverter apparent-power capacity (pu).
    pub rating_s: f64,
    pub mode: ControlMode,
}

impl DerSpec {
    /// Available active power for a given irradiance multiplier.
    pub fn available_p(&self, pv_mult: f64) -> f64 {
        self.rating_p * pv_mult
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub load_p: f64,
    pub load_q: f64,
    pub der: Option<DerSpec>,
}

/// A series branch from a parent bus to one of its children.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub ampacity_sq: f64,
}

impl Line {
    pub fn z_sq(&self) -> f64 {
        self.r * self.r + self.x * self.x
    }
}

/// An immutable, validated radial network.
///
/// Buses and lines are addressed by index. Every non-root bus `j` has exactly
/// one incoming line, found with [`Feeder::line_into`].
#[derive(Clone, Debug, PartialEq)]
pub struct Feeder {
    base_mva: f64,
    base_kv: f64,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    root: usize,
    line_into: Vec<Option<usize>>,
    order: Vec<usize>,
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: String,
    pub parent: Option<String>,
    #[serde(default)]
    pub load_p: f64,
    #[serde(default)]
    pub load_q: f64,
    #[serde(default)]
    pub der: Option<DerSpec>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ohm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_ohm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ampacity_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ampacity_sq_pu: Option<f64>,
}

/// Reads and validates a feeder file.
pub fn load_feeder(path: impl AsRef<Path>) -> Result<Feeder, FeederError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FeederError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Feeder::from_json(&text)
}

/// Buses in root-to-leaf order; every bus appears after its parent.
pub fn topology_order(feeder: &Feeder) -> Vec<usize> {
    feeder.order.clone()
}

fn pick(
    line: &LineRecord,
    ohm: Option<f64>,
    pu: Option<f64>,
    what: &str,
    to_pu: f64,
) -> Result<f64, FeederError> {
    match (ohm, pu) {
        (Some(v), None) => Ok(v / to_pu),
        (None, Some(v)) => Ok(v),
        (Some(_), Some(_)) => Err(FeederError::invalid(format!(
            "line {}->{}: both {what} forms given",
            line.from, line.to
        ))),
        (None, None) => Err(FeederError::invalid(format!(
            "line {}->{}: missing {what}",
            line.from, line.to
        ))),
    }
}

impl FeederFile {
    pub fn into_feeder(self) -> Result<Feeder, FeederError> {
        if !(self.base_mva > 0.0 && self.base_kv > 0.0) {
            return Err(FeederError::invalid("base_mva and base_kv must be positive"));
        }
        // single-phase base: Z = kV^2 / MVA, I = MVA * 1000 / kV
        let z_base = self.base_kv * self.base_kv / self.base_mva;
        let i_base = self.base_mva * 1000.0 / self.base_kv;

        let mut index = HashMap::with_capacity(self.buses.len());
        for (i, b) in self.buses.iter().enumerate() {
            if index.insert(b.id.clone(), i).is_some() {
                return Err(FeederError::invalid(format!("duplicate bus id '{}'", b.id)));
            }
        }
        let lookup = |id: &str, ctx: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| FeederError::invalid(format!("{ctx} references unknown bus '{id}'")))
        };

        let mut buses = Vec::with_capacity(self.buses.len());
        for b in &self.buses {
            let parent = match &b.parent {
                Some(p) => Some(lookup(p, &format!("bus '{}'", b.id))?),
                None => None,
            };
            buses.push(Bus {
                id: b.id.clone(),
                parent,
                children: Vec::new(),
                load_p: b.load_p,
                load_q: b.load_q,
                der: b.der,
            });
        }

        let mut lines = Vec::with_capacity(self.lines.len());
        for l in &self.lines {
            let from = lookup(&l.from, &format!("line {}->{}", l.from, l.to))?;
            let to = lookup(&l.to, &format!("line {}->{}", l.from, l.to))?;
            let r = pick(l, l.r_ohm, l.r_pu, "resistance", z_base)?;
            let x = pick(l, l.x_ohm, l.x_pu, "reactance", z_base)?;
            let ampacity_sq = match (l.ampacity_a, l.ampacity_sq_pu) {
                (Some(a), None) => (a / i_base).powi(2),
                _ => pick(l, None, l.ampacity_sq_pu, "ampacity", 1.0)?,
            };
            lines.push(Line { from, to, r, x, ampacity_sq });
        }
        Feeder::new(self.base_mva, self.base_kv, buses, lines)
    }
}

impl Feeder {
    /// Builds and validates a feeder from in-memory parts. `children` lists on
    /// the buses are recomputed from the parent references.
    pub fn new(
        base_mva: f64,
        base_kv: f64,
        mut buses: Vec<Bus>,
        lines: Vec<Line>,
    ) -> Result<Feeder, FeederError> {
        let n = buses.len();
        if n == 0 {
            return Err(FeederError::invalid("feeder has no buses"));
        }
        {
            let mut seen = std::collections::HashSet::new();
            for b in &buses {
                if !seen.insert(b.id.as_str()) {
                    return Err(FeederError::invalid(format!("duplicate bus id '{}'", b.id)));
                }
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| buses[i].parent.is_none()).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(FeederError::invalid("no root bus (every bus has a parent)")),
            _ => {
                let ids: Vec<&str> = roots.iter().map(|&i| buses[i].id.as_str()).collect();
                return Err(FeederError::invalid(format!(
                    "multiple root buses: {}",
                    ids.join(", ")
                )));
            }
        };

        // Lines must form a spanning tree.
        let mut dsu: Vec<usize> = (0..n).collect();
        fn find(d: &mut [usize], mut i: usize) -> usize {
            while d[i] != i {
                d[i] = d[d[i]];
                i = d[i];
            }
            i
        }
        for l in &lines {
            if l.from >= n || l.to >= n {
                return Err(FeederError::invalid("line references a bus index out of range"));
            }
            let (a, b) = (find(&mut dsu, l.from), find(&mut dsu, l.to));
            if a == b {
                return Err(FeederError::invalid(format!(
                    "cycle detected at line {}->{}",
                    buses[l.from].id, buses[l.to].id
                )));
            }
            dsu[a] = b;
        }

        let mut line_into = vec![None; n];
        for (k, l) in lines.iter().enumerate() {
            let to = &buses[l.to];
            if to.parent != Some(l.from) {
                return Err(FeederError::invalid(format!(
                    "line {}->{} does not match the parent of bus '{}'",
                    buses[l.from].id, to.id, to.id
                )));
            }
            if line_into[l.to].replace(k).is_some() {
                return Err(FeederError::invalid(format!(
                    "bus '{}' has more than one incoming line",
                    to.id
                )));
            }
            if !(l.r >= 0.0 && l.x >= 0.0 && l.r + l.x > 0.0) || !l.r.is_finite() || !l.x.is_finite() {
                return Err(FeederError::invalid(format!(
                    "line {}->{}: nonpositive impedance (r={}, x={})",
                    buses[l.from].id, to.id, l.r, l.x
                )));
            }
            if !(l.ampacity_sq > 0.0) {
                return Err(FeederError::invalid(format!(
                    "line {}->{}: ampacity must be positive",
                    buses[l.from].id, to.id
                )));
            }
        }
        for (j, b) in buses.iter().enumerate() {
            if j != root && line_into[j].is_none() {
                return Err(FeederError::invalid(format!(
                    "orphan bus '{}': no line from its parent",
                    b.id
                )));
            }
        }

        // Parent chains must reach the root.
        for start in 0..n {
            let mut cur = start;
            let mut hops = 0;
            while let Some(p) = buses[cur].parent {
                cur = p;
                hops += 1;
                if hops > n {
                    return Err(FeederError::invalid(format!(
                        "cycle detected through bus '{}'",
                        buses[start].id
                    )));
                }
            }
        }

        let root_bus = &buses[root];
        if root_bus.der.is_some() || root_bus.load_p != 0.0 || root_bus.load_q != 0.0 {
            return Err(FeederError::invalid(format!(
                "root bus '{}' must not carry load or a DER",
                root_bus.id
            )));
        }
        for b in &buses {
            if !(b.load_p.is_finite() && b.load_q.is_finite()) {
                return Err(FeederError::invalid(format!("bus '{}': non-finite load", b.id)));
            }
            if let Some(d) = b.der {
                if !(d.rating_s > 0.0 && d.rating_s.is_finite()) {
                    return Err(FeederError::invalid(format!(
                        "DER at bus '{}': rating must be positive",
                        b.id
                    )));
                }
                if !(d.rating_p >= 0.0 && d.rating_p.is_finite()) {
                    return Err(FeederError::invalid(format!(
                        "DER at bus '{}': rated real power must be nonnegative",
                        b.id
                    )));
                }
            }
        }

        for b in buses.iter_mut() {
            b.children.clear();
        }
        for j in 0..n {
            if let Some(p) = buses[j].parent {
                buses[p].children.push(j);
            }
        }

        let mut order = Vec::with_capacity(n);
        order.push(root);
        let mut head = 0;
        while head < order.len() {
            let b = order[head];
            order.extend(buses[b].children.iter().copied());
            head += 1;
        }

        let feeder = Feeder {
            base_mva,
            base_kv,
            buses,
            lines,
            root,
            line_into,
            order,
        };
        feeder.check_der_lines()?;
        Ok(feeder)
    }

    /// The closed-form projections divide by x (Volt-Var) or r (Volt-Watt) of the DER's line.
    fn check_der_lines(&self) -> Result<(), FeederError> {
        for (j, b) in self.buses.iter().enumerate() {
            let Some(der) = b.der else { continue };
            let line = self.line(self.line_into[j].expect("non-root bus"));
            match der.mode {
                ControlMode::Vvc if line.x <= 0.0 => {
                    return Err(FeederError::invalid(format!(
                        "VVC DER at bus '{}' sits below a line with zero reactance",
                        b.id
                    )))
                }
                ControlMode::Vwc if line.r <= 0.0 => {
                    return Err(FeederError::invalid(format!(
                        "VWC DER at bus '{}' sits below a line with zero resistance",
                        b.id
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Feeder, FeederError> {
        let file: FeederFile = serde_json::from_str(text)?;
        file.into_feeder()
    }

    /// Serializes to the feeder file format using per-unit line fields.
    pub fn to_file(&self) -> FeederFile {
        FeederFile {
            base_mva: self.base_mva,
            base_kv: self.base_kv,
            buses: self
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id.clone(),
                    parent: b.parent.map(|p| self.buses[p].id.clone()),
                    load_p: b.load_p,
                    load_q: b.load_q,
                    der: b.der,
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineRecord {
                    from: self.buses[l.from].id.clone(),
                    to: self.buses[l.to].id.clone(),
                    r_pu: Some(l.r),
                    x_pu: Some(l.x),
                    ampacity_sq_pu: Some(l.ampacity_sq),
                    ..LineRecord::default()
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("feeder serializes")
    }

    /// Returns a copy with every DER switched to `mode`, revalidated.
    pub fn with_mode(&self, mode: ControlMode) -> Result<Feeder, FeederError> {
        let mut f = self.clone();
        for b in f.buses.iter_mut() {
            if let Some(d) = b.der.as_mut() {
                d.mode = mode;
            }
        }
        f.check_der_lines()?;
        Ok(f)
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn base_kv(&self) -> f64 {
        self.base_kv
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn bus(&self, j: usize) -> &Bus {
        &self.buses[j]
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line(&self, k: usize) -> &Line {
        &self.lines[k]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    /// Index of the line feeding bus `j`; `None` for the root.
    pub fn line_into(&self, j: usize) -> Option<usize> {
        self.line_into[j]
    }

    /// Root-to-leaf ordering computed at construction.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Indices of buses that host a DER, in index order.
    pub fn der_buses(&self) -> Vec<usize> {
        (0..self.buses.len())
            .filter(|&j| self.buses[j].der.is_some())
            .collect()
    }
}
