//! JSON network schema. Powers are in W / var / VA, voltages in V (nominal)
//! or per-unit (limits), branch impedances in per-unit on the system base.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    validate::validate_network, validate, Actor, ActorKind, Branch, Bus, BusKind, GridNetwork,
    HierarchySpec,
};
use crate::error::{Error, Result};
use crate::voltvar::DroopCurve;

fn default_setpoint() -> f64 {
    1.0
}

fn is_default_setpoint(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: String,
    pub layer: String,
    pub v_nominal: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub bus_kind: BusKind,
    #[serde(default = "default_setpoint", skip_serializing_if = "is_default_setpoint")]
    pub v_setpoint: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub resistance: f64,
    pub reactance: f64,
    pub s_max: f64,
    #[serde(default)]
    pub is_pcc: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorRecord {
    pub id: String,
    pub bus: String,
    pub kind: ActorKind,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub s_rated: f64,
    pub p_reference: f64,
    #[serde(default)]
    pub q_reference: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub droop: Option<DroopCurve>,
}

/// On-disk layout of a network (and optionally its controller hierarchy).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    /// System base in MVA.
    pub base_mva: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<String>,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub actors: Vec<ActorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<HierarchySpec>,
}

impl NetworkFile {
    fn into_parts(self) -> Result<(GridNetwork, Option<HierarchySpec>)> {
        if !(self.base_mva > 0.0) {
            return Err(Error::Validation(vec![format!(
                "base_mva must be positive, got {}",
                self.base_mva
            )]));
        }
        let base = self.base_mva * 1e6;
        let mut layers = self.layers;
        for bus in &self.buses {
            if !layers.contains(&bus.layer) {
                layers.push(bus.layer.clone());
            }
        }
        let buses = self
            .buses
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                layer: b.layer,
                v_nominal: b.v_nominal,
                v_min: b.v_min,
                v_max: b.v_max,
                kind: b.bus_kind,
                v_setpoint: b.v_setpoint,
            })
            .collect();
        let branches = self
            .branches
            .into_iter()
            .map(|b| Branch {
                id: b.id,
                from_bus: b.from_bus,
                to_bus: b.to_bus,
                resistance: b.resistance,
                reactance: b.reactance,
                s_max: b.s_max / base,
                is_pcc: b.is_pcc,
            })
            .collect();
        let actors = self
            .actors
            .into_iter()
            .map(|a| Actor {
                id: a.id,
                bus: a.bus,
                kind: a.kind,
                p_min: a.p_min / base,
                p_max: a.p_max / base,
                q_min: a.q_min / base,
                q_max: a.q_max / base,
                s_rated: a.s_rated / base,
                p_reference: a.p_reference / base,
                q_reference: a.q_reference / base,
                droop: a.droop,
            })
            .collect();
        Ok((GridNetwork::new(base, buses, branches, actors, layers), self.hierarchy))
    }

    pub fn from_network(network: &GridNetwork, hierarchy: Option<&HierarchySpec>) -> Self {
        let base = network.base_va;
        Self {
            base_mva: base / 1e6,
            layers: network.layers.clone(),
            buses: network
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id.clone(),
                    layer: b.layer.clone(),
                    v_nominal: b.v_nominal,
                    v_min: b.v_min,
                    v_max: b.v_max,
                    bus_kind: b.kind,
                    v_setpoint: b.v_setpoint,
                })
                .collect(),
            branches: network
                .branches
                .iter()
                .map(|b| BranchRecord {
                    id: b.id.clone(),
                    from_bus: b.from_bus.clone(),
                    to_bus: b.to_bus.clone(),
                    resistance: b.resistance,
                    reactance: b.reactance,
                    s_max: b.s_max * base,
                    is_pcc: b.is_pcc,
                })
                .collect(),
            actors: network
                .actors
                .iter()
                .map(|a| ActorRecord {
                    id: a.id.clone(),
                    bus: a.bus.clone(),
                    kind: a.kind,
                    p_min: a.p_min * base,
                    p_max: a.p_max * base,
                    q_min: a.q_min * base,
                    q_max: a.q_max * base,
                    s_rated: a.s_rated * base,
                    p_reference: a.p_reference * base,
                    q_reference: a.q_reference * base,
                    droop: a.droop,
                })
                .collect(),
            hierarchy: hierarchy.cloned(),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_file(text: &str) -> Result<NetworkFile> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses network JSON text, validating the network and (when present)
/// the embedded hierarchy.
pub fn parse_case(text: &str) -> Result<(GridNetwork, Option<HierarchySpec>)> {
    let (network, hierarchy) = parse_file(text)?.into_parts()?;
    let mut report = validate_network(&network);
    if let Some(h) = &hierarchy {
        report = validate(&network, h);
    }
    if !report.is_empty() {
        return Err(Error::Validation(report.messages()));
    }
    Ok((network, hierarchy))
}

/// Loads and validates a network file; an embedded hierarchy is ignored.
pub fn load_network(path: impl AsRef<Path>) -> Result<GridNetwork> {
    let text = read(path.as_ref())?;
    let (network, _) = parse_file(&text)?.into_parts()?;
    let report = validate_network(&network);
    if !report.is_empty() {
        return Err(Error::Validation(report.messages()));
    }
    Ok(network)
}

/// Loads a network file together with its mandatory `hierarchy` section.
pub fn load_case(path: impl AsRef<Path>) -> Result<(GridNetwork, HierarchySpec)> {
    let text = read(path.as_ref())?;
    let (network, hierarchy) = parse_case(&text)?;
    let hierarchy = hierarchy.ok_or_else(|| {
        Error::Parse(format!(
            "{} has no `hierarchy` section",
            path.as_ref().display()
        ))
    })?;
    Ok((network, hierarchy))
}

pub fn network_to_json(network: &GridNetwork, hierarchy: Option<&HierarchySpec>) -> String {
    let file = NetworkFile::from_network(network, hierarchy);
    serde_json::to_string_pretty(&file).expect("network serializes")
}
