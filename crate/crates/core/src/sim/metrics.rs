use serde::Serialize;

use super::trace::{RecordKind, Trace};
use crate::error::{Error, Result};
use crate::ofo::tracking_error;

pub const P_PCC: &str = "p_pcc";
pub const P_REQUEST: &str = "p_request";
pub const V_VIOLATION: &str = "v_violation";
pub const GRID: &str = "grid";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub pcc: String,
    pub p_set_w: f64,
    pub at_s: f64,
    /// Time of the PCC measurement the error is evaluated on.
    pub measured_at_s: f64,
    pub p_pcc_w: f64,
    pub epsilon: f64,
    /// Largest voltage band violation recorded up to `at_s`, per-unit.
    pub max_voltage_violation_pu: f64,
    /// Seconds from the request until 90 % of the requested change was reached.
    pub time_to_90_s: Option<f64>,
}

impl MetricsSummary {
    /// Tracking error as a percentage with one decimal, e.g. `7.3%`.
    pub fn epsilon_percent(&self) -> String {
        format!("{:.1}%", 100.0 * self.epsilon)
    }
}

/// Chooses the PCC to evaluate: an explicit subject, else the target of
/// the first external request, else the only PCC in the trace.
fn pick_pcc(trace: &Trace, pcc: Option<&str>) -> Result<String> {
    if let Some(p) = pcc {
        return Ok(p.to_string());
    }
    if let Some(r) = trace
        .records
        .iter()
        .find(|r| r.kind == RecordKind::Request && r.field == P_REQUEST)
    {
        return Ok(r.subject.clone());
    }
    let mut subjects: Vec<&str> = trace
        .records
        .iter()
        .filter(|r| r.kind == RecordKind::Measurement && r.field == P_PCC)
        .map(|r| r.subject.as_str())
        .collect();
    subjects.sort_unstable();
    subjects.dedup();
    match subjects.as_slice() {
        [only] => Ok(only.to_string()),
        [] => Err(Error::MissingMeasurements("trace has no PCC records".into())),
        _ => Err(Error::MissingMeasurements(format!(
            "trace has several PCCs ({}); choose one",
            subjects.join(", ")
        ))),
    }
}

pub fn compute_metrics(
    trace: &Trace,
    p_set_w: f64,
    at_s: f64,
    pcc: Option<&str>,
) -> Result<MetricsSummary> {
    let pcc = pick_pcc(trace, pcc)?;
    let flows: Vec<(f64, f64)> = trace
        .series(RecordKind::Measurement, &pcc, P_PCC)
        .map(|r| (r.time_s, r.value))
        .collect();
    let &(measured_at_s, p_pcc_w) = flows
        .iter()
        .rfind(|(t, _)| *t <= at_s + 1e-9)
        .ok_or_else(|| {
            Error::MissingMeasurements(format!("no `{P_PCC}` record for `{pcc}` at or before t={at_s} s"))
        })?;
    let epsilon = tracking_error(p_set_w, p_pcc_w)?;

    let max_voltage_violation_pu = trace
        .series(RecordKind::Metric, GRID, V_VIOLATION)
        .filter(|r| r.time_s <= at_s + 1e-9)
        .map(|r| r.value)
        .fold(0.0, f64::max);

    let t_request = trace
        .series(RecordKind::Request, &pcc, P_REQUEST)
        .next()
        .map_or(0.0, |r| r.time_s);
    let p0 = flows
        .iter()
        .rfind(|(t, _)| *t < t_request - 1e-9)
        .or(flows.first())
        .map(|&(_, p)| p)
        .unwrap_or(p_pcc_w);
    let change = p_set_w - p0;
    let time_to_90_s = if change == 0.0 {
        Some(0.0)
    } else {
        flows
            .iter()
            .filter(|(t, _)| *t >= t_request - 1e-9 && *t <= at_s + 1e-9)
            .find(|(_, p)| (p - p0) / change >= 0.9)
            .map(|(t, _)| t - t_request)
    };

    Ok(MetricsSummary {
        pcc,
        p_set_w,
        at_s,
        measured_at_s,
        p_pcc_w,
        epsilon,
        max_voltage_violation_pu,
        time_to_90_s,
    })
}

/// Footer written next to a trace: end-of-run tracking per requested PCC.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub records: usize,
    pub end_time_s: f64,
    pub max_voltage_violation_pu: f64,
    /// Controller cycles whose projection needed output slack.
    pub slack_cycles: usize,
    /// Latest request per PCC, evaluated at the end of the run.
    pub requests: Vec<MetricsSummary>,
}

pub fn summarize(trace: &Trace) -> RunSummary {
    let end_time_s = trace.records.last().map_or(0.0, |r| r.time_s);
    let mut latest = std::collections::BTreeMap::new();
    for r in trace
        .records
        .iter()
        .filter(|r| r.kind == RecordKind::Request && r.field == P_REQUEST)
    {
        latest.insert(r.subject.clone(), r.value);
    }
    let requests = latest
        .iter()
        .filter_map(|(pcc, &p_set)| compute_metrics(trace, p_set, end_time_s, Some(pcc)).ok())
        .collect();
    RunSummary {
        records: trace.len(),
        end_time_s,
        max_voltage_violation_pu: trace
            .series(RecordKind::Metric, GRID, V_VIOLATION)
            .map(|r| r.value)
            .fold(0.0, f64::max),
        slack_cycles: trace
            .records
            .iter()
            .filter(|r| r.kind == RecordKind::QpStatus && r.field == "status" && r.value != 0.0)
            .count(),
        requests,
    }
}
