//! Discrete-time scenario engine.
//!
//! Every global tick (the gcd of all cycle times and event times) runs:
//! due events, then due controllers top-down on the measurements of the
//! previous plant solution, then a single plant resolve, then recording.

mod metrics;
mod scenario;
mod trace;

pub use metrics::{compute_metrics, summarize, MetricsSummary, RunSummary, GRID, P_PCC, P_REQUEST, V_VIOLATION};
pub use scenario::{Event, EventAction, Overrides, Scenario, ScenarioFile};
pub use trace::{RecordKind, Trace, TraceRecord};

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid_model::{ActorKind, GridNetwork, InputChannel};
use crate::hierarchy::{build_hierarchy, compute_all_sensitivities, propagate_setpoints, refresh_child_boxes, Hierarchy};
use crate::ofo::{ofo_step, MeasurementVector};
use crate::plant::{self, Dispatch};
use crate::powerflow::{extract_measurements, PowerFlowSolution};
use crate::qp::{QpResult, QpStatus};
use scenario::to_ms;

/// A run that stopped early; `trace` holds everything recorded until then.
#[derive(Debug)]
pub struct Aborted {
    pub trace: Trace,
    pub error: Error,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted after {} records: {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for Aborted {}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub struct Simulation {
    pub network: GridNetwork,
    pub hierarchy: Hierarchy,
    pub dispatch: Dispatch,
    /// Latest plant solution and the time it was obtained.
    pub solution: PowerFlowSolution,
    pub solved_at: f64,
    pub trace: Trace,
    /// Most recent QP result per controller.
    pub last_qp: BTreeMap<String, QpResult>,
    /// Active external requests per PCC branch id, W.
    requests: BTreeMap<String, f64>,
    events: Vec<Event>,
    next_event: usize,
    cycles_ms: Vec<u64>,
    tick_ms: u64,
    duration_ms: u64,
    tick: u64,
    rng: ChaCha8Rng,
    noise: f64,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.check()?;
        let network = scenario.network.clone();
        let dispatch = Dispatch::initial(&network);
        let sens = compute_all_sensitivities(&network, &scenario.hierarchy, &dispatch, scenario.delta)?;
        let hierarchy = build_hierarchy(&network, &scenario.hierarchy, &dispatch, &sens)?;
        let solution = plant::resolve(&network, &dispatch, None)?;

        let mut cycles_ms = Vec::with_capacity(hierarchy.nodes.len());
        let mut tick_ms = 0;
        for node in &hierarchy.nodes {
            let ms = to_ms(node.state.cycle_time, "cycle_time")?;
            cycles_ms.push(ms);
            tick_ms = gcd(tick_ms, ms);
        }
        for ev in &scenario.events {
            tick_ms = gcd(tick_ms, to_ms(ev.time, "event time")?);
        }
        if tick_ms == 0 {
            tick_ms = 1000;
        }
        Ok(Self {
            network,
            hierarchy,
            dispatch,
            solution,
            solved_at: 0.0,
            trace: Trace::default(),
            last_qp: BTreeMap::new(),
            requests: BTreeMap::new(),
            events: scenario.events.clone(),
            next_event: 0,
            cycles_ms,
            tick_ms,
            duration_ms: to_ms(scenario.duration, "duration")?,
            tick: 0,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            noise: scenario.measurement_noise,
        })
    }

    pub fn tick_seconds(&self) -> f64 {
        self.tick_ms as f64 / 1000.0
    }

    /// Time of the next tick, seconds.
    pub fn time(&self) -> f64 {
        (self.tick * self.tick_ms) as f64 / 1000.0
    }

    pub fn finished(&self) -> bool {
        self.duration_ms == 0 || self.tick * self.tick_ms > self.duration_ms
    }

    /// Runs one global tick. Returns `false` once the scenario is over.
    pub fn step(&mut self) -> Result<bool> {
        if self.finished() {
            return Ok(false);
        }
        let now_ms = self.tick * self.tick_ms;
        let now = now_ms as f64 / 1000.0;
        if self.tick == 0 {
            self.record_state(0.0);
        }

        while self.next_event < self.events.len()
            && to_ms(self.events[self.next_event].time, "event time")? <= now_ms
        {
            let ev = self.events[self.next_event].clone();
            self.apply_event(&ev, now)?;
            self.next_event += 1;
        }

        for k in 0..self.hierarchy.nodes.len() {
            if now_ms.is_multiple_of(self.cycles_ms[k]) {
                self.fire(k, now)?;
            }
        }

        let solution = match plant::resolve(&self.network, &self.dispatch, Some(&self.solution)) {
            Ok(s) => s,
            Err(e) => {
                self.trace.push(now, RecordKind::Metric, "plant", "diverged", 1.0);
                return Err(e);
            }
        };
        self.solution = solution;
        self.solved_at = now;
        self.record_state(now);
        self.tick += 1;
        Ok(!self.finished())
    }

    pub fn run(mut self) -> std::result::Result<Trace, Aborted> {
        loop {
            match self.step() {
                Ok(true) => {}
                Ok(false) => return Ok(self.trace),
                Err(error) => {
                    return Err(Aborted {
                        trace: self.trace,
                        error,
                    })
                }
            }
        }
    }

    fn apply_event(&mut self, ev: &Event, now: f64) -> Result<()> {
        match &ev.action {
            EventAction::SetPointRequest { controller, watts } => {
                let p = self.network.to_pu(*watts);
                self.hierarchy.set_external_request(controller, p)?;
                let pcc = self.hierarchy.node(controller)?.pcc_branch.ok_or_else(|| {
                    Error::Precondition(format!("`{controller}` has no PCC"))
                })?;
                let id = self.network.branches[pcc].id.clone();
                self.trace.push(now, RecordKind::Request, &id, P_REQUEST, *watts);
                self.requests.insert(id, *watts);
            }
            EventAction::LoadStep {
                bus,
                delta_p,
                delta_q,
            } => {
                let b = self.network.bus_idx(bus)?;
                let (p, q) = (self.network.to_pu(*delta_p), self.network.to_pu(*delta_q));
                self.dispatch.add_extra(b, p, q);
            }
            EventAction::ActorOutage { actor } => {
                self.dispatch.outages.insert(actor.clone());
            }
        }
        Ok(())
    }

    /// One controller cycle: measure, step, actuate, hand requests down.
    fn fire(&mut self, k: usize, now: f64) -> Result<()> {
        let id = self.hierarchy.nodes[k].id.clone();
        refresh_child_boxes(
            &mut self.hierarchy,
            &id,
            &self.network,
            &self.dispatch,
            &self.solution,
        )?;
        let node = &self.hierarchy.nodes[k];
        let mut y = extract_measurements(&self.solution, &node.state.scope, self.solved_at);
        if self.noise > 0.0 {
            for v in &mut y.values {
                *v += self.rng.random_range(-self.noise..=self.noise);
            }
        }
        let (u, qp) = ofo_step(&node.state, &y, now)?;
        self.actuate(k, &u);
        self.hierarchy.nodes[k].state.u = u;
        for (child, p_set) in propagate_setpoints(&mut self.hierarchy, &id)? {
            let w = self.network.to_watts(p_set);
            self.trace.push(now, RecordKind::Request, &child, "p_set", w);
        }
        let status = match qp.status {
            QpStatus::Optimal => 0.0,
            QpStatus::OptimalWithSlack => 1.0,
        };
        let w_norm = qp.w.iter().map(|w| w * w).sum::<f64>().sqrt();
        self.trace.push(now, RecordKind::QpStatus, &id, "status", status);
        self.trace.push(now, RecordKind::QpStatus, &id, "w_norm", w_norm);
        self.last_qp.insert(id, qp);
        Ok(())
    }

    fn actuate(&mut self, k: usize, u: &crate::ofo::SetpointVector) {
        let scope = &self.hierarchy.nodes[k].state.scope;
        for (j, ch) in scope.inputs.iter().enumerate() {
            if let InputChannel::Actor { id, .. } = ch {
                self.dispatch.setpoints.insert(id.clone(), (u.p[j], u.q[j]));
            }
        }
    }

    /// Current measurement vector of a controller, as it would see it now.
    pub fn measurements(&self, controller: &str) -> Result<MeasurementVector> {
        let node = self.hierarchy.node(controller)?;
        Ok(extract_measurements(&self.solution, &node.state.scope, self.solved_at))
    }

    fn record_state(&mut self, now: f64) {
        let net = &self.network;
        let sol = &self.solution;
        let mut violation: f64 = 0.0;
        for (i, bus) in net.buses.iter().enumerate() {
            let v = sol.vm[i];
            violation = violation.max(v - bus.v_max).max(bus.v_min - v);
            self.trace.push(now, RecordKind::Measurement, &bus.id, "v_pu", v);
        }
        for (i, br) in net.branches.iter().enumerate() {
            if br.is_pcc {
                self.trace
                    .push(now, RecordKind::Measurement, &br.id, P_PCC, net.to_watts(sol.branch_p[i]));
                self.trace
                    .push(now, RecordKind::Measurement, &br.id, "q_pcc", net.to_watts(sol.branch_q[i]));
            }
        }
        let inj = plant::injection_profile(net, &self.dispatch);
        if let Ok(inj) = inj {
            for (src, q) in inj.droop.iter().zip(&sol.droop_q) {
                self.trace
                    .push(now, RecordKind::Measurement, &src.actor, "q_droop", net.to_watts(*q));
            }
        }
        for actor in net.actors.iter().filter(|a| a.kind == ActorKind::Controllable) {
            let (p, q) = if self.dispatch.outages.contains(&actor.id) {
                (0.0, 0.0)
            } else {
                self.dispatch.setpoint(net, &actor.id).unwrap_or((0.0, 0.0))
            };
            self.trace.push(now, RecordKind::Setpoint, &actor.id, "p", net.to_watts(p));
            self.trace.push(now, RecordKind::Setpoint, &actor.id, "q", net.to_watts(q));
        }
        self.trace
            .push(now, RecordKind::Metric, GRID, V_VIOLATION, violation.max(0.0));
        for (pcc, &p_set) in &self.requests {
            if let (Ok(b), true) = (net.branch_idx(pcc), p_set != 0.0) {
                let eps = (p_set - net.to_watts(sol.branch_p[b])).abs() / p_set.abs();
                self.trace.push(now, RecordKind::Metric, pcc, "epsilon", eps);
            }
        }
    }
}

/// Runs a scenario to completion. Failures after the start keep the partial
/// trace; failures during setup abort with an empty one.
pub fn run_scenario(scenario: &Scenario) -> std::result::Result<Trace, Aborted> {
    match Simulation::new(scenario) {
        Ok(sim) => sim.run(),
        Err(error) => Err(Aborted {
            trace: Trace::default(),
            error,
        }),
    }
}
