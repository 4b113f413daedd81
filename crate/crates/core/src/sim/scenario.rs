use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_model::{parse_case, validate, GridNetwork, HierarchySpec};
use crate::sensitivity::DEFAULT_DELTA;

/// Scenario file layout. `network` is resolved relative to the scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub network: String,
    /// Replaces the hierarchy embedded in the network file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<HierarchySpec>,
    #[serde(default)]
    pub events: Vec<Event>,
    /// Seconds.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Finite-difference step for the sensitivities, per-unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Half-width of uniform measurement noise, per-unit. Zero disables it.
    #[serde(default)]
    pub measurement_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds.
    pub time: f64,
    #[serde(flatten)]
    pub action: EventAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventAction {
    /// Requested PCC flow (W, measured from→to) for a child of the primary.
    SetPointRequest { controller: String, watts: f64 },
    /// Additional injection at a bus (W / var, generator sign).
    LoadStep {
        bus: String,
        delta_p: f64,
        #[serde(default)]
        delta_q: f64,
    },
    ActorOutage { actor: String },
}

/// A validated, ready-to-run scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: GridNetwork,
    pub hierarchy: HierarchySpec,
    /// Sorted by time; equal times keep file order.
    pub events: Vec<Event>,
    pub duration: f64,
    pub seed: u64,
    pub delta: f64,
    pub measurement_noise: f64,
}

/// Run-time overrides that never touch the scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub duration: Option<f64>,
}

/// Converts seconds to whole milliseconds, rejecting finer resolution.
pub(crate) fn to_ms(seconds: f64, what: &str) -> Result<u64> {
    let ms = seconds * 1000.0;
    if !(ms.is_finite() && ms >= 0.0) || (ms - ms.round()).abs() > 1e-6 {
        return Err(Error::Validation(vec![format!(
            "{what} = {seconds} s must be a non-negative multiple of 1 ms"
        )]));
    }
    Ok(ms.round() as u64)
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with(path, &Overrides::default())
    }

    pub fn load_with(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: ScenarioFile =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_file(file, base, overrides)
    }

    pub fn from_file(file: ScenarioFile, base_dir: &Path, overrides: &Overrides) -> Result<Self> {
        let net_path: PathBuf = base_dir.join(&file.network);
        let text = std::fs::read_to_string(&net_path).map_err(|e| {
            Error::Validation(vec![format!(
                "network file `{}` cannot be read: {e}",
                net_path.display()
            )])
        })?;
        let (network, embedded) = parse_case(&text)?;
        let mut hierarchy = file.hierarchy.or(embedded).ok_or_else(|| {
            Error::Validation(vec!["scenario has no controller hierarchy".into()])
        })?;
        if let Some(alpha) = overrides.alpha {
            for c in &mut hierarchy.controllers {
                c.alpha = alpha;
            }
        }
        let mut events = file.events;
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        // A shortened run simply never reaches the later events.
        if let Some(d) = overrides.duration {
            events.retain(|e| e.time <= d);
        }
        let scenario = Scenario {
            network,
            hierarchy,
            events,
            duration: overrides.duration.unwrap_or(file.duration),
            seed: file.seed,
            delta: overrides.delta.or(file.delta).unwrap_or(DEFAULT_DELTA),
            measurement_noise: file.measurement_noise,
        };
        scenario.check()?;
        Ok(scenario)
    }

    /// Scenario-level validation on top of the network/hierarchy report.
    pub fn check(&self) -> Result<()> {
        let mut problems = validate(&self.network, &self.hierarchy).messages();
        if let Err(Error::Validation(m)) = to_ms(self.duration, "duration") {
            problems.extend(m);
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            problems.push(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.measurement_noise >= 0.0 && self.measurement_noise.is_finite()) {
            problems.push("measurement_noise must be a non-negative number".into());
        }
        for c in &self.hierarchy.controllers {
            if let Err(Error::Validation(m)) = to_ms(c.cycle_time, &format!("cycle_time of `{}`", c.id)) {
                problems.extend(m);
            } else if c.cycle_time > 0.0 && to_ms(c.cycle_time, "").unwrap_or(0) == 0 {
                problems.push(format!("cycle_time of `{}` is below 1 ms", c.id));
            }
        }
        let primary = self.hierarchy.primary().map(|p| p.id.clone());
        for ev in &self.events {
            if !(0.0..=self.duration).contains(&ev.time) {
                problems.push(format!(
                    "event at t={} s lies outside [0, {}]",
                    ev.time, self.duration
                ));
            }
            if let Err(Error::Validation(m)) = to_ms(ev.time, "event time") {
                problems.extend(m);
            }
            match &ev.action {
                EventAction::SetPointRequest { controller, watts } => {
                    match self.hierarchy.controller(controller) {
                        Err(_) => problems.push(format!("request for unknown controller `{controller}`")),
                        Ok(c) if c.parent.is_none() || c.parent != primary => problems.push(format!(
                            "request for `{controller}`: requests target children of the primary"
                        )),
                        Ok(_) => {}
                    }
                    if !watts.is_finite() {
                        problems.push(format!("request for `{controller}` is not finite"));
                    }
                }
                EventAction::LoadStep { bus, .. } => {
                    if self.network.bus_idx(bus).is_err() {
                        problems.push(format!("load step at unknown bus `{bus}`"));
                    }
                }
                EventAction::ActorOutage { actor } => {
                    if self.network.actor_idx(actor).is_err() {
                        problems.push(format!("outage of unknown actor `{actor}`"));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}
