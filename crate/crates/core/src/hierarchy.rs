//! The controller tree: construction, downstream set-point propagation and
//! outer approximation of child flexibility.
//!
//! A child controller appears in its parent's input set as a pseudo-actor
//! whose P coordinate is the request sent to the child. Its box is the
//! child's flexibility envelope, recomputed from the current operating point
//! every time the parent fires. Requests only travel parent to child.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::grid_model::{
    controller_scope, validate, GridNetwork, HierarchySpec, InputChannel, Role,
};
use crate::ofo::{ControllerState, ObjectiveSpec};
use crate::plant::{self, Dispatch};
use crate::powerflow::PowerFlowSolution;
use crate::sensitivity::{compute_sensitivity, operating_point, SensitivityMatrix};

/// Box over-estimate of the PCC flow a child layer can reach, per-unit, in
/// the measured (from→to) direction of the PCC branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexibilityEnvelope {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl FlexibilityEnvelope {
    pub fn contains(&self, p: f64, q: f64, tol: f64) -> bool {
        p >= self.p_min - tol && p <= self.p_max + tol && q >= self.q_min - tol && q <= self.q_max + tol
    }
}

#[derive(Debug, Clone)]
pub struct ControllerNode {
    pub id: String,
    pub role: Role,
    pub state: ControllerState,
    pub parent: Option<String>,
    pub children: Vec<String>,
    /// Own PCC branch index (secondaries).
    pub pcc_branch: Option<usize>,
    pub depth: usize,
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    /// Nodes in top-down order: parents before children, siblings by id.
    pub nodes: Vec<ControllerNode>,
    index: HashMap<String, usize>,
    /// Directly actuated actors of each controller, by id.
    actors: BTreeMap<String, Vec<String>>,
}

impl Hierarchy {
    pub fn node(&self, id: &str) -> Result<&ControllerNode> {
        self.index
            .get(id)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| Error::UnknownId {
                kind: "controller",
                id: id.to_string(),
            })
    }

    pub fn node_mut(&mut self, id: &str) -> Result<&mut ControllerNode> {
        match self.index.get(id) {
            Some(&i) => Ok(&mut self.nodes[i]),
            None => Err(Error::UnknownId {
                kind: "controller",
                id: id.to_string(),
            }),
        }
    }

    pub fn root(&self) -> &ControllerNode {
        &self.nodes[0]
    }

    /// Actor ids controlled by a node and all of its descendants.
    pub fn subtree_actors(&self, id: &str) -> Result<Vec<String>> {
        let node = self.node(id)?;
        let mut out = self.actors.get(id).cloned().unwrap_or_default();
        for child in &node.children {
            out.extend(self.subtree_actors(child)?);
        }
        Ok(out)
    }

    /// Routes an external request for the PCC flow of `controller` (a child
    /// of the primary) into the primary's objective.
    pub fn set_external_request(&mut self, controller: &str, p_set: f64) -> Result<()> {
        let node = self.node(controller)?;
        let parent = node.parent.clone().ok_or_else(|| {
            Error::Precondition(format!(
                "`{controller}` is the primary; requests target a PCC below it"
            ))
        })?;
        if parent != self.root().id {
            return Err(Error::Precondition(format!(
                "requests enter through the primary; `{controller}` is not one of its children"
            )));
        }
        let root = &mut self.nodes[0];
        let j = root.state.u.position(controller).ok_or_else(|| Error::UnknownId {
            kind: "pcc input",
            id: controller.to_string(),
        })?;
        match &mut root.state.objective {
            ObjectiveSpec::PrimaryCurtailment { p_reference } => {
                p_reference[j] = p_set;
                Ok(())
            }
            ObjectiveSpec::SecondaryTracking { .. } => Err(Error::Objective(
                "primary controller carries a tracking objective".into(),
            )),
        }
    }
}

fn hierarchy_error(report: crate::grid_model::ValidationReport) -> Error {
    Error::Validation(report.messages())
}

/// Sensitivities of every controller at the operating point of `dispatch`.
pub fn compute_all_sensitivities(
    network: &GridNetwork,
    spec: &HierarchySpec,
    dispatch: &Dispatch,
    delta: f64,
) -> Result<BTreeMap<String, SensitivityMatrix>> {
    let mut out = BTreeMap::new();
    for c in &spec.controllers {
        let scope = controller_scope(network, spec, &c.id)?;
        out.insert(c.id.clone(), compute_sensitivity(network, dispatch, &scope, delta)?);
    }
    Ok(out)
}

/// Builds the controller tree at the operating point of `dispatch`.
///
/// Secondaries start with their request equal to the measured PCC flow and
/// the primary with references equal to current outputs, so an undisturbed
/// system is a fixed point.
pub fn build_hierarchy(
    network: &GridNetwork,
    spec: &HierarchySpec,
    dispatch: &Dispatch,
    sensitivities: &BTreeMap<String, SensitivityMatrix>,
) -> Result<Hierarchy> {
    let report = validate(network, spec);
    if !report.is_empty() {
        return Err(hierarchy_error(report));
    }
    let solution = plant::resolve(network, dispatch, None)?;
    let primary = spec
        .primary()
        .ok_or_else(|| Error::Validation(vec!["no primary".into()]))?;

    // Top-down breadth-first order.
    let mut order: Vec<(String, usize)> = vec![(primary.id.clone(), 0)];
    let mut head = 0;
    while head < order.len() {
        let (id, depth) = order[head].clone();
        for child in spec.children_of(&id) {
            order.push((child.to_string(), depth + 1));
        }
        head += 1;
    }
    if order.len() != spec.controllers.len() {
        return Err(Error::Validation(vec!["cyclic parent references".into()]));
    }

    let mut nodes = Vec::with_capacity(order.len());
    let mut actors = BTreeMap::new();
    for (id, depth) in order {
        let c = spec.controller(&id)?;
        let scope = controller_scope(network, spec, &id)?;
        let sens = sensitivities
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::Precondition(format!("no sensitivity matrix for `{id}`")))?;
        let u = operating_point(network, dispatch, &solution, &scope)?;
        let objective = match c.role {
            Role::Primary => {
                let p_reference = scope
                    .inputs
                    .iter()
                    .zip(&u.p)
                    .map(|(ch, &p)| match ch {
                        InputChannel::Actor { index, .. } => network.actors[*index].p_reference,
                        InputChannel::ChildPcc { .. } => p,
                    })
                    .collect();
                ObjectiveSpec::PrimaryCurtailment { p_reference }
            }
            Role::Secondary => {
                let pcc_index = scope.own_pcc_row().ok_or_else(|| {
                    Error::Precondition(format!("secondary `{id}` has no PCC measurement"))
                })?;
                let branch = scope.pcc_branches[scope.own_pcc.unwrap_or(0)];
                ObjectiveSpec::SecondaryTracking {
                    p_set: solution.branch_p[branch],
                    pcc_index,
                }
            }
        };
        let pcc_branch = match &c.pcc_branch {
            Some(b) => Some(network.branch_idx(b)?),
            None => None,
        };
        let state =
            ControllerState::new(network, scope, sens, objective, c.alpha, c.cycle_time, u)?;
        actors.insert(id.clone(), c.actors.clone());
        nodes.push(ControllerNode {
            id: id.clone(),
            role: c.role,
            state,
            parent: c.parent.clone(),
            children: spec.children_of(&id).iter().map(|s| s.to_string()).collect(),
            pcc_branch,
            depth,
        });
    }
    let index = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.clone(), i))
        .collect();
    let mut hierarchy = Hierarchy {
        nodes,
        index,
        actors,
    };
    let ids: Vec<String> = hierarchy.nodes.iter().map(|n| n.id.clone()).collect();
    for id in ids {
        refresh_child_boxes(&mut hierarchy, &id, network, dispatch, &solution)?;
    }
    Ok(hierarchy)
}

/// Outer approximation of the PCC flow reachable by the subtree of a
/// secondary controller: current flow plus the summed box headroom of all
/// actors below the PCC. Losses and grid limits are ignored.
pub fn outer_approximation(
    hierarchy: &Hierarchy,
    controller: &str,
    network: &GridNetwork,
    dispatch: &Dispatch,
    solution: &PowerFlowSolution,
) -> Result<FlexibilityEnvelope> {
    let node = hierarchy.node(controller)?;
    let Some(pcc) = node.pcc_branch else {
        return Err(Error::Precondition(format!(
            "`{controller}` is the primary and has no flexibility envelope"
        )));
    };
    let mut head = [0.0; 4]; // p_min, p_max, q_min, q_max headroom as injection
    for id in hierarchy.subtree_actors(controller)? {
        let a = network.actor(&id)?;
        let (p, q) = if dispatch.outages.contains(&id) {
            (0.0, 0.0)
        } else {
            dispatch.setpoint(network, &id)?
        };
        head[0] += a.p_min - p;
        head[1] += a.p_max - p;
        head[2] += a.q_min - q;
        head[3] += a.q_max - q;
    }
    let orientation = pcc_orientation(hierarchy, controller)?;
    let (f_p, f_q) = (solution.branch_p[pcc], solution.branch_q[pcc]);
    Ok(if orientation > 0.0 {
        FlexibilityEnvelope {
            p_min: f_p + head[0],
            p_max: f_p + head[1],
            q_min: f_q + head[2],
            q_max: f_q + head[3],
        }
    } else {
        FlexibilityEnvelope {
            p_min: f_p - head[1],
            p_max: f_p - head[0],
            q_min: f_q - head[3],
            q_max: f_q - head[2],
        }
    })
}

/// Orientation of a child's PCC as recorded in its parent's input channel.
fn pcc_orientation(hierarchy: &Hierarchy, child: &str) -> Result<f64> {
    let node = hierarchy.node(child)?;
    let parent = node.parent.as_deref().unwrap_or_default();
    hierarchy
        .node(parent)?
        .state
        .scope
        .inputs
        .iter()
        .find_map(|ch| match ch {
            InputChannel::ChildPcc {
                controller,
                orientation,
                ..
            } if controller == child => Some(*orientation),
            _ => None,
        })
        .ok_or_else(|| Error::UnknownId {
            kind: "pcc input",
            id: child.to_string(),
        })
}

/// Updates the pseudo-actor boxes of a controller's children from the
/// current operating point. The P box becomes the child's envelope; the Q
/// coordinate is pinned to the measured flow since children track P only.
pub fn refresh_child_boxes(
    hierarchy: &mut Hierarchy,
    controller: &str,
    network: &GridNetwork,
    dispatch: &Dispatch,
    solution: &PowerFlowSolution,
) -> Result<()> {
    let node = hierarchy.node(controller)?;
    let mut updates = Vec::new();
    for (j, ch) in node.state.scope.inputs.iter().enumerate() {
        if let InputChannel::ChildPcc {
            controller: child,
            branch,
            ..
        } = ch
        {
            let env = outer_approximation(hierarchy, child, network, dispatch, solution)?;
            updates.push((j, env, solution.branch_q[*branch]));
        }
    }
    let state = &mut hierarchy.node_mut(controller)?.state;
    for (j, env, q_now) in updates {
        state.input_box.p_min[j] = env.p_min;
        state.input_box.p_max[j] = env.p_max;
        state.input_box.q_min[j] = q_now;
        state.input_box.q_max[j] = q_now;
        state.u.q[j] = q_now;
    }
    Ok(())
}

/// Hands the parent's PCC pseudo-actor commands down as child requests.
/// Returns `(child id, p_set)` per child, in input order.
pub fn propagate_setpoints(hierarchy: &mut Hierarchy, parent: &str) -> Result<Vec<(String, f64)>> {
    let node = hierarchy.node(parent)?;
    let mut requests = Vec::new();
    for (j, ch) in node.state.scope.inputs.iter().enumerate() {
        if let InputChannel::ChildPcc { controller, .. } = ch {
            requests.push((controller.clone(), node.state.u.p[j]));
        }
    }
    for (child, p_set) in &requests {
        hierarchy.node_mut(child)?.state.set_request(*p_set)?;
    }
    Ok(requests)
}
