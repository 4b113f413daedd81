//! Typed multi-layer network, actors and controller hierarchy.
//!
//! All electrical quantities are held in per-unit on the single system base
//! `base_va`. Conversion from the SI values of the scenario files happens once,
//! in [`schema`].

mod schema;
mod scope;
mod validate;

pub use schema::{load_case, load_network, network_to_json, parse_case, NetworkFile};
pub use scope::{controller_scope, ControllerScope, InputChannel};
pub use validate::{validate, validate_network, ValidationReport, Violation};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voltvar::DroopCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub layer: String,
    /// Nominal line-to-line voltage in volts.
    pub v_nominal: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub kind: BusKind,
    /// Voltage magnitude held at the slack bus (ignored for PQ buses).
    pub v_setpoint: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub resistance: f64,
    pub reactance: f64,
    pub s_max: f64,
    pub is_pcc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Controllable,
    Voltvar,
    FixedLoad,
}

/// A power injection point. Generator sign convention throughout: positive
/// P and Q are injected into the grid, loads carry negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub id: String,
    pub bus: String,
    pub kind: ActorKind,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub s_rated: f64,
    /// Available (uncurtailed) active power; the fixed injection of loads.
    pub p_reference: f64,
    /// Reactive injection of fixed loads; initial Q of controllable actors.
    pub q_reference: f64,
    pub droop: Option<DroopCurve>,
}

impl Actor {
    /// Initial set point: the reference values clipped into the actor box.
    pub fn initial_setpoint(&self) -> (f64, f64) {
        (
            self.p_reference.clamp(self.p_min, self.p_max),
            self.q_reference.clamp(self.q_min, self.q_max),
        )
    }
}

#[derive(Debug, Clone)]
pub struct GridNetwork {
    /// System base in volt-amperes.
    pub base_va: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub actors: Vec<Actor>,
    pub layers: Vec<String>,
    bus_index: HashMap<String, usize>,
    branch_index: HashMap<String, usize>,
    actor_index: HashMap<String, usize>,
}

impl PartialEq for GridNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.base_va == other.base_va
            && self.buses == other.buses
            && self.branches == other.branches
            && self.actors == other.actors
            && self.layers == other.layers
    }
}

impl GridNetwork {
    /// Assembles a network from per-unit components. Does not validate.
    pub fn new(
        base_va: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        actors: Vec<Actor>,
        layers: Vec<String>,
    ) -> Self {
        let bus_index = buses.iter().enumerate().map(|(i, b)| (b.id.clone(), i)).collect();
        let branch_index = branches
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.clone(), i))
            .collect();
        let actor_index = actors.iter().enumerate().map(|(i, a)| (a.id.clone(), i)).collect();
        Self {
            base_va,
            buses,
            branches,
            actors,
            layers,
            bus_index,
            branch_index,
            actor_index,
        }
    }

    pub fn bus_idx(&self, id: &str) -> Result<usize> {
        self.bus_index.get(id).copied().ok_or_else(|| Error::UnknownId {
            kind: "bus",
            id: id.to_string(),
        })
    }

    pub fn branch_idx(&self, id: &str) -> Result<usize> {
        self.branch_index.get(id).copied().ok_or_else(|| Error::UnknownId {
            kind: "branch",
            id: id.to_string(),
        })
    }

    pub fn actor_idx(&self, id: &str) -> Result<usize> {
        self.actor_index.get(id).copied().ok_or_else(|| Error::UnknownId {
            kind: "actor",
            id: id.to_string(),
        })
    }

    pub fn bus(&self, id: &str) -> Result<&Bus> {
        Ok(&self.buses[self.bus_idx(id)?])
    }

    pub fn branch(&self, id: &str) -> Result<&Branch> {
        Ok(&self.branches[self.branch_idx(id)?])
    }

    pub fn actor(&self, id: &str) -> Result<&Actor> {
        Ok(&self.actors[self.actor_idx(id)?])
    }

    pub fn actor_mut(&mut self, id: &str) -> Result<&mut Actor> {
        let idx = self.actor_idx(id)?;
        Ok(&mut self.actors[idx])
    }

    pub fn bus_mut(&mut self, id: &str) -> Result<&mut Bus> {
        let idx = self.bus_idx(id)?;
        Ok(&mut self.buses[idx])
    }

    pub fn slack_idx(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Slack)
    }

    /// Layer of a non-PCC branch, or `None` when its ends sit in different layers.
    pub fn branch_layer(&self, branch: &Branch) -> Option<&str> {
        let from = self.bus(&branch.from_bus).ok()?;
        let to = self.bus(&branch.to_bus).ok()?;
        (from.layer == to.layer).then_some(from.layer.as_str())
    }

    pub fn to_watts(&self, pu: f64) -> f64 {
        pu * self.base_va
    }

    pub fn to_pu(&self, si: f64) -> f64 {
        si / self.base_va
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Primary,
    Secondary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub id: String,
    pub layer: String,
    pub role: Role,
    pub alpha: f64,
    pub cycle_time: f64,
    #[serde(default)]
    pub actors: Vec<String>,
    #[serde(default)]
    pub observed_buses: Vec<String>,
    #[serde(default)]
    pub observed_branches: Vec<String>,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub pcc_branch: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub controllers: Vec<ControllerSpec>,
}

impl HierarchySpec {
    pub fn controller(&self, id: &str) -> Result<&ControllerSpec> {
        self.controllers
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::UnknownId {
                kind: "controller",
                id: id.to_string(),
            })
    }

    pub fn controller_mut(&mut self, id: &str) -> Result<&mut ControllerSpec> {
        self.controllers
            .iter_mut()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::UnknownId {
                kind: "controller",
                id: id.to_string(),
            })
    }

    /// Child controller ids, sorted.
    pub fn children_of(&self, id: &str) -> Vec<&str> {
        let mut children: Vec<&str> = self
            .controllers
            .iter()
            .filter(|c| c.parent.as_deref() == Some(id))
            .map(|c| c.id.as_str())
            .collect();
        children.sort_unstable();
        children
    }

    pub fn primary(&self) -> Option<&ControllerSpec> {
        self.controllers.iter().find(|c| c.role == Role::Primary)
    }
}
