use std::collections::BTreeSet;

use super::{GridNetwork, HierarchySpec};
use crate::error::Result;

/// One flexible input of a controller: a directly actuated actor, or the
/// PCC of a child controller acting as a synthetic actor.
#[derive(Debug, Clone, PartialEq)]
pub enum InputChannel {
    Actor { id: String, index: usize },
    ChildPcc {
        controller: String,
        branch: usize,
        /// Bus on the child side of the PCC branch.
        child_bus: usize,
        /// +1 when the measured from→to flow leaves the child layer, -1 when
        /// it enters it. Measured PCC power ≈ orientation · net child injection.
        orientation: f64,
    },
}

impl InputChannel {
    pub fn id(&self) -> &str {
        match self {
            InputChannel::Actor { id, .. } => id,
            InputChannel::ChildPcc { controller, .. } => controller,
        }
    }
}

/// Observation and actuation sets of one controller, all in canonical order
/// (sorted by id) so results do not depend on file ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerScope {
    pub controller: String,
    /// Observed buses (voltage rows).
    pub buses: Vec<usize>,
    /// Observed branches (apparent-power rows).
    pub branches: Vec<usize>,
    /// PCC branches whose signed active power is measured (own PCC and child PCCs).
    pub pcc_branches: Vec<usize>,
    /// Flexible actors F, actors and child PCCs interleaved by id.
    pub inputs: Vec<InputChannel>,
    /// Position of the controller's own PCC inside `pcc_branches`.
    pub own_pcc: Option<usize>,
}

impl ControllerScope {
    pub fn measurement_len(&self) -> usize {
        self.buses.len() + self.branches.len() + self.pcc_branches.len()
    }

    pub fn input_len(&self) -> usize {
        2 * self.inputs.len()
    }

    /// Row index of a PCC branch's active-power entry in the measurement vector.
    pub fn pcc_row(&self, branch: usize) -> Option<usize> {
        self.pcc_branches
            .iter()
            .position(|&b| b == branch)
            .map(|k| self.buses.len() + self.branches.len() + k)
    }

    pub fn own_pcc_row(&self) -> Option<usize> {
        self.own_pcc
            .map(|k| self.buses.len() + self.branches.len() + k)
    }

    pub fn input_ids(&self) -> Vec<String> {
        self.inputs.iter().map(|c| c.id().to_string()).collect()
    }

    /// Ids for each measurement row, `v:<bus>`, `s:<branch>` and `p:<branch>`.
    pub fn row_ids(&self, network: &GridNetwork) -> Vec<String> {
        let mut ids = Vec::with_capacity(self.measurement_len());
        ids.extend(self.buses.iter().map(|&b| format!("v:{}", network.buses[b].id)));
        ids.extend(self.branches.iter().map(|&b| format!("s:{}", network.branches[b].id)));
        ids.extend(
            self.pcc_branches
                .iter()
                .map(|&b| format!("p:{}", network.branches[b].id)),
        );
        ids
    }

    /// Ids for each input column, `P:<id>` then `Q:<id>`.
    pub fn column_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inputs.iter().map(|c| format!("P:{}", c.id())).collect();
        ids.extend(self.inputs.iter().map(|c| format!("Q:{}", c.id())));
        ids
    }
}

fn sorted_by_id(mut idx: Vec<usize>, id_of: impl Fn(usize) -> String) -> Vec<usize> {
    idx.sort_by_key(|&i| id_of(i));
    idx.dedup();
    idx
}

pub fn controller_scope(
    network: &GridNetwork,
    hierarchy: &HierarchySpec,
    controller_id: &str,
) -> Result<ControllerScope> {
    let spec = hierarchy.controller(controller_id)?;

    let mut bus_idx = Vec::new();
    for id in &spec.observed_buses {
        bus_idx.push(network.bus_idx(id)?);
    }
    let buses = sorted_by_id(bus_idx, |i| network.buses[i].id.clone());

    let mut branch_set = BTreeSet::new();
    for id in &spec.observed_branches {
        branch_set.insert(network.branch_idx(id)?);
    }

    let mut inputs = Vec::new();
    for id in &spec.actors {
        inputs.push(InputChannel::Actor {
            id: id.clone(),
            index: network.actor_idx(id)?,
        });
    }

    let mut pcc = Vec::new();
    let own = match &spec.pcc_branch {
        Some(id) => {
            let b = network.branch_idx(id)?;
            pcc.push(b);
            Some(b)
        }
        None => None,
    };
    for child_id in hierarchy.children_of(controller_id) {
        let child = hierarchy.controller(child_id)?;
        let Some(pcc_id) = &child.pcc_branch else {
            continue;
        };
        let b = network.branch_idx(pcc_id)?;
        let branch = &network.branches[b];
        let to_layer = &network.bus(&branch.to_bus)?.layer;
        let (child_bus, orientation) = if *to_layer == child.layer {
            (network.bus_idx(&branch.to_bus)?, -1.0)
        } else {
            (network.bus_idx(&branch.from_bus)?, 1.0)
        };
        branch_set.insert(b);
        pcc.push(b);
        inputs.push(InputChannel::ChildPcc {
            controller: child_id.to_string(),
            branch: b,
            child_bus,
            orientation,
        });
    }
    inputs.sort_by(|a, b| a.id().cmp(b.id()));
    inputs.dedup_by(|a, b| a.id() == b.id());

    if let Some(own) = own {
        branch_set.remove(&own);
        if spec.observed_branches.contains(&network.branches[own].id) {
            branch_set.insert(own);
        }
    }
    let branches = sorted_by_id(branch_set.into_iter().collect(), |i| {
        network.branches[i].id.clone()
    });
    let pcc_branches = sorted_by_id(pcc, |i| network.branches[i].id.clone());
    let own_pcc = own.and_then(|b| pcc_branches.iter().position(|&x| x == b));

    Ok(ControllerScope {
        controller: controller_id.to_string(),
        buses,
        branches,
        pcc_branches,
        inputs,
        own_pcc,
    })
}
