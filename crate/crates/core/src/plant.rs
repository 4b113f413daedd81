//! The physical plant: actor set points and disturbances aggregated into bus
//! injections, resolved by the AC power flow with droop inverters closed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_model::{ActorKind, GridNetwork};
use crate::powerflow::{solve_ac_power_flow, DroopSource, InjectionProfile, PowerFlowSolution};

/// Everything that determines the plant's steady state besides the network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dispatch {
    /// Commanded (P, Q) per controllable actor id, per-unit.
    pub setpoints: BTreeMap<String, (f64, f64)>,
    /// Additional injections per bus index (load steps, probe injections).
    pub extra: BTreeMap<usize, (f64, f64)>,
    /// Actors forced to zero output.
    pub outages: BTreeSet<String>,
}

impl Dispatch {
    /// All controllable actors at their initial set points.
    pub fn initial(network: &GridNetwork) -> Self {
        let setpoints = network
            .actors
            .iter()
            .filter(|a| a.kind == ActorKind::Controllable)
            .map(|a| (a.id.clone(), a.initial_setpoint()))
            .collect();
        Self {
            setpoints,
            ..Self::default()
        }
    }

    pub fn add_extra(&mut self, bus: usize, p: f64, q: f64) {
        let e = self.extra.entry(bus).or_insert((0.0, 0.0));
        e.0 += p;
        e.1 += q;
    }

    /// Set point of an actor, falling back to its initial value.
    pub fn setpoint(&self, network: &GridNetwork, actor: &str) -> Result<(f64, f64)> {
        match self.setpoints.get(actor) {
            Some(&sp) => Ok(sp),
            None => Ok(network.actor(actor)?.initial_setpoint()),
        }
    }
}

/// Set-point overrides in SI units, as read from an operating-point file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    /// Actor id → `{p, q}` in W / var.
    #[serde(default)]
    pub setpoints: BTreeMap<String, SetpointRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointRecord {
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

impl OperatingPoint {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("operating point: {e}")))
    }

    /// Dispatch with the overrides applied on top of the initial set points.
    /// Only controllable actors can be overridden; values must lie in their boxes.
    pub fn to_dispatch(&self, network: &GridNetwork) -> Result<Dispatch> {
        let mut dispatch = Dispatch::initial(network);
        let mut problems = Vec::new();
        for (id, sp) in &self.setpoints {
            let Ok(actor) = network.actor(id) else {
                problems.push(format!("operating point names unknown actor `{id}`"));
                continue;
            };
            if actor.kind != ActorKind::Controllable {
                problems.push(format!("`{id}` is not controllable"));
                continue;
            }
            let (p, q) = (network.to_pu(sp.p), network.to_pu(sp.q));
            let eps = 1e-9;
            if !(p.is_finite() && q.is_finite())
                || p < actor.p_min - eps
                || p > actor.p_max + eps
                || q < actor.q_min - eps
                || q > actor.q_max + eps
            {
                problems.push(format!("set point of `{id}` lies outside its box"));
                continue;
            }
            dispatch.setpoints.insert(id.clone(), (p, q));
        }
        if problems.is_empty() {
            Ok(dispatch)
        } else {
            Err(Error::Validation(problems))
        }
    }
}

pub fn injection_profile(network: &GridNetwork, dispatch: &Dispatch) -> Result<InjectionProfile> {
    let mut inj = InjectionProfile::zeros(network.buses.len());
    for actor in &network.actors {
        if dispatch.outages.contains(&actor.id) {
            continue;
        }
        let bus = network.bus_idx(&actor.bus)?;
        match actor.kind {
            ActorKind::Controllable => {
                let (p, q) = dispatch.setpoint(network, &actor.id)?;
                inj.p[bus] += p;
                inj.q[bus] += q;
            }
            ActorKind::FixedLoad => {
                inj.p[bus] += actor.p_reference;
                inj.q[bus] += actor.q_reference;
            }
            ActorKind::Voltvar => {
                let p = actor.p_reference;
                inj.p[bus] += p;
                if let Some(curve) = actor.droop {
                    inj.droop.push(DroopSource {
                        actor: actor.id.clone(),
                        bus,
                        curve,
                        q_available: curve.available_q(actor.s_rated, p),
                    });
                }
            }
        }
    }
    for (&bus, &(p, q)) in &dispatch.extra {
        inj.p[bus] += p;
        inj.q[bus] += q;
    }
    Ok(inj)
}

/// Resolves the plant for a dispatch. Droop inverters reach their
/// quasi-static equilibrium inside the same Newton solve.
pub fn resolve(
    network: &GridNetwork,
    dispatch: &Dispatch,
    warm_start: Option<&PowerFlowSolution>,
) -> Result<PowerFlowSolution> {
    let inj = injection_profile(network, dispatch)?;
    solve_ac_power_flow(network, &inj, warm_start)
}
