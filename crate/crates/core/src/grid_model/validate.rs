use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use super::{ActorKind, BusKind, GridNetwork, HierarchySpec, Role};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// Collected invariant violations. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    fn push(&mut self, subject: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            subject: subject.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

fn check_unique<'a>(
    report: &mut ValidationReport,
    kind: &str,
    ids: impl Iterator<Item = &'a String>,
) {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            report.push(id.clone(), format!("duplicate {kind} id"));
        }
    }
}

/// Checks the network-level invariants of buses, branches and actors.
pub fn validate_network(network: &GridNetwork) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_unique(&mut report, "bus", network.buses.iter().map(|b| &b.id));
    check_unique(&mut report, "branch", network.branches.iter().map(|b| &b.id));
    check_unique(&mut report, "actor", network.actors.iter().map(|a| &a.id));

    if !(network.base_va > 0.0) {
        report.push("network", "base power must be positive");
    }

    for bus in &network.buses {
        if !(bus.v_min < 1.0 && 1.0 < bus.v_max) {
            report.push(&bus.id, "voltage band must satisfy v_min < 1.0 < v_max");
        }
        if !(bus.v_nominal > 0.0) {
            report.push(&bus.id, "v_nominal must be positive");
        }
        if !network.layers.contains(&bus.layer) {
            report.push(&bus.id, format!("unknown layer `{}`", bus.layer));
        }
        if bus.kind == BusKind::Slack && !(bus.v_setpoint > 0.0) {
            report.push(&bus.id, "slack voltage set point must be positive");
        }
    }
    let slack_count = network
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .count();
    if slack_count != 1 {
        report.push(
            "network",
            format!("exactly one slack bus required, found {slack_count}"),
        );
    }

    for br in &network.branches {
        let from = network.bus(&br.from_bus);
        let to = network.bus(&br.to_bus);
        if from.is_err() {
            report.push(&br.id, format!("from_bus `{}` does not exist", br.from_bus));
        }
        if to.is_err() {
            report.push(&br.id, format!("to_bus `{}` does not exist", br.to_bus));
        }
        if br.from_bus == br.to_bus {
            report.push(&br.id, "from_bus equals to_bus");
        }
        if !(br.resistance >= 0.0) {
            report.push(&br.id, "resistance must be non-negative");
        }
        if br.reactance == 0.0 && !(br.resistance > 0.0) {
            report.push(&br.id, "branch has zero impedance");
        }
        if !(br.s_max > 0.0) {
            report.push(&br.id, "s_max must be positive");
        }
        if let (Ok(f), Ok(t)) = (from, to) {
            if f.layer != t.layer && !br.is_pcc {
                report.push(&br.id, "branch crosses layers but is not marked is_pcc");
            }
            if f.layer == t.layer && br.is_pcc {
                report.push(&br.id, "PCC branch must connect two different layers");
            }
        }
    }

    for actor in &network.actors {
        if network.bus(&actor.bus).is_err() {
            report.push(&actor.id, format!("bus `{}` does not exist", actor.bus));
        }
        if !(actor.p_min <= actor.p_max) {
            report.push(&actor.id, "p_min exceeds p_max");
        }
        if !(actor.q_min <= actor.q_max) {
            report.push(&actor.id, "q_min exceeds q_max");
        }
        if !(actor.s_rated >= 0.0) {
            report.push(&actor.id, "s_rated must be non-negative");
        }
        let p_bound = actor.p_min.abs().max(actor.p_max.abs());
        if actor.p_reference.abs() > p_bound * (1.0 + 1e-12) {
            report.push(&actor.id, "|p_reference| exceeds the active power box");
        }
        match (actor.kind, &actor.droop) {
            (ActorKind::Voltvar, None) => report.push(&actor.id, "voltvar actor needs a droop curve"),
            (ActorKind::Voltvar, Some(curve)) => {
                if let Err(msg) = curve.check() {
                    report.push(&actor.id, msg);
                }
                if actor.p_reference.abs() > actor.s_rated {
                    report.push(&actor.id, "voltvar active power exceeds s_rated");
                }
            }
            (_, Some(_)) => report.push(&actor.id, "droop curve only allowed on voltvar actors"),
            _ => {}
        }
    }

    if !report.is_empty() {
        return report;
    }
    if !is_connected(network) {
        report.push("network", "branch graph is not connected");
    }
    report
}

fn is_connected(network: &GridNetwork) -> bool {
    let n = network.buses.len();
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for br in &network.branches {
        if let (Ok(f), Ok(t)) = (network.bus_idx(&br.from_bus), network.bus_idx(&br.to_bus)) {
            adj[f].push(t);
            adj[t].push(f);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Validates the network together with a controller hierarchy.
pub fn validate(network: &GridNetwork, hierarchy: &HierarchySpec) -> ValidationReport {
    let mut report = validate_network(network);
    let controllers = &hierarchy.controllers;
    check_unique(&mut report, "controller", controllers.iter().map(|c| &c.id));
    let by_id: BTreeMap<&str, _> = controllers.iter().map(|c| (c.id.as_str(), c)).collect();

    for c in controllers {
        if network.actor(&c.id).is_ok() {
            report.push(&c.id, "controller id collides with an actor id");
        }
        if !(c.alpha > 0.0) {
            report.push(&c.id, "alpha must be positive");
        }
        if !(c.cycle_time > 0.0) {
            report.push(&c.id, "cycle_time must be positive");
        }
        if !network.layers.contains(&c.layer) {
            report.push(&c.id, format!("unknown layer `{}`", c.layer));
        }
    }

    let primaries: Vec<_> = controllers.iter().filter(|c| c.role == Role::Primary).collect();
    match primaries.len() {
        0 => report.push("hierarchy", "no primary controller"),
        1 => {
            let p = primaries[0];
            if p.parent.is_some() {
                report.push(&p.id, "primary controller must not have a parent");
            }
            if p.pcc_branch.is_some() {
                report.push(&p.id, "primary controller must not have a pcc branch");
            }
        }
        n => report.push("hierarchy", format!("multiple primaries ({n})")),
    }

    // Tree shape: every secondary reaches the primary through parent edges.
    for c in controllers.iter().filter(|c| c.role == Role::Secondary) {
        match &c.parent {
            None => report.push(&c.id, "secondary controller has no parent"),
            Some(p) if !by_id.contains_key(p.as_str()) => {
                report.push(&c.id, format!("parent `{p}` does not exist"))
            }
            Some(_) => {
                let mut seen = BTreeSet::new();
                let mut cur = c;
                let mut cyclic = false;
                while let Some(parent) = cur.parent.as_deref().and_then(|p| by_id.get(p)) {
                    if !seen.insert(cur.id.as_str()) {
                        cyclic = true;
                        break;
                    }
                    cur = parent;
                }
                if cyclic {
                    report.push(&c.id, "cyclic parent references");
                } else if cur.role != Role::Primary {
                    report.push(&c.id, "does not reach the primary controller");
                }
            }
        }
    }

    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for c in controllers {
        for actor_id in &c.actors {
            match network.actor(actor_id) {
                Err(_) => report.push(&c.id, format!("actor `{actor_id}` does not exist")),
                Ok(actor) => {
                    if actor.kind != ActorKind::Controllable {
                        report.push(&c.id, format!("actor `{actor_id}` is not controllable"));
                    }
                    if let Ok(bus) = network.bus(&actor.bus) {
                        if bus.layer != c.layer {
                            report.push(
                                &c.id,
                                format!("actor `{actor_id}` is outside layer `{}`", c.layer),
                            );
                        }
                    }
                }
            }
            if let Some(prev) = owner.insert(actor_id.as_str(), c.id.as_str()) {
                report.push(
                    actor_id.clone(),
                    format!("duplicate actor assignment ({prev}, {})", c.id),
                );
            }
        }
    }
    for actor in &network.actors {
        if actor.kind == ActorKind::Controllable && !owner.contains_key(actor.id.as_str()) {
            report.push(&actor.id, "controllable actor not assigned to any controller");
        }
    }

    let mut pcc_owner: BTreeMap<&str, &str> = BTreeMap::new();
    for c in controllers.iter().filter(|c| c.role == Role::Secondary) {
        let Some(pcc) = &c.pcc_branch else {
            report.push(&c.id, "secondary controller needs a pcc_branch");
            continue;
        };
        if let Some(prev) = pcc_owner.insert(pcc.as_str(), c.id.as_str()) {
            report.push(&c.id, format!("pcc branch `{pcc}` already used by `{prev}`"));
        }
        let Ok(branch) = network.branch(pcc) else {
            report.push(&c.id, format!("pcc branch `{pcc}` does not exist"));
            continue;
        };
        if !branch.is_pcc {
            report.push(&c.id, format!("branch `{pcc}` is not marked is_pcc"));
            continue;
        }
        let parent_layer = c
            .parent
            .as_deref()
            .and_then(|p| by_id.get(p))
            .map(|p| p.layer.as_str());
        let ends = (
            network.bus(&branch.from_bus).map(|b| b.layer.as_str()),
            network.bus(&branch.to_bus).map(|b| b.layer.as_str()),
        );
        if let (Some(pl), (Ok(fl), Ok(tl))) = (parent_layer, ends) {
            let spans = (fl == pl && tl == c.layer) || (tl == pl && fl == c.layer);
            if !spans {
                report.push(
                    &c.id,
                    format!("pcc branch `{pcc}` does not connect layers `{pl}` and `{}`", c.layer),
                );
            }
        }
    }

    // Observability is limited to the own layer plus own and child PCCs.
    for c in controllers {
        for bus_id in &c.observed_buses {
            match network.bus(bus_id) {
                Err(_) => report.push(&c.id, format!("observed bus `{bus_id}` does not exist")),
                Ok(bus) if bus.layer != c.layer => report.push(
                    &c.id,
                    format!("observed bus `{bus_id}` is outside layer `{}`", c.layer),
                ),
                Ok(_) => {}
            }
        }
        let child_pccs: BTreeSet<&str> = controllers
            .iter()
            .filter(|k| k.parent.as_deref() == Some(c.id.as_str()))
            .filter_map(|k| k.pcc_branch.as_deref())
            .collect();
        for br_id in &c.observed_branches {
            match network.branch(br_id) {
                Err(_) => {
                    report.push(&c.id, format!("observed branch `{br_id}` does not exist"))
                }
                Ok(br) => {
                    let in_layer = network.branch_layer(br) == Some(c.layer.as_str());
                    let own = c.pcc_branch.as_deref() == Some(br_id.as_str());
                    if !(in_layer || own || child_pccs.contains(br_id.as_str())) {
                        report.push(
                            &c.id,
                            format!("observed branch `{br_id}` is outside the controller's scope"),
                        );
                    }
                }
            }
        }
    }

    report
}
