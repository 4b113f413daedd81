//! Online feedback optimization controller for one grid layer.
//!
//! Each cycle the controller takes fresh measurements `y`, forms the composite
//! gradient `∇_uΦ + ∇hᵀ∇_yΦ`, projects its negative onto the linearized
//! feasible set with [`crate::qp`], and moves the set points by `α·w`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid_model::{ControllerScope, GridNetwork, InputChannel};
use crate::qp::{solve_least_distance, LeastDistanceProblem, OutputRow, QpResult, DEFAULT_RHO};
use crate::sensitivity::SensitivityMatrix;

/// Set points `[P_1..P_k, Q_1..Q_k]` of one controller, ordered by input id.
#[derive(Debug, Clone, PartialEq)]
pub struct SetpointVector {
    pub ids: Vec<String>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl SetpointVector {
    pub fn new(ids: Vec<String>, p: Vec<f64>, q: Vec<f64>) -> Self {
        debug_assert!(ids.len() == p.len() && p.len() == q.len());
        Self { ids, p, q }
    }

    pub fn dim(&self) -> usize {
        2 * self.ids.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.p.iter().chain(&self.q).copied().collect()
    }

    pub fn with_values(&self, v: &[f64]) -> Self {
        let k = self.ids.len();
        Self {
            ids: self.ids.clone(),
            p: v[..k].to_vec(),
            q: v[k..2 * k].to_vec(),
        }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    /// Simulation time of the measurement, seconds.
    pub timestamp: f64,
}

impl MeasurementVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    /// `Φ = Σ_j (P_j − P_ref,j)²` over the P coordinates.
    PrimaryCurtailment { p_reference: Vec<f64> },
    /// `Φ = (P_set − P_PCC)²` with `P_PCC = y[pcc_index]`.
    SecondaryTracking { p_set: f64, pcc_index: usize },
}

impl ObjectiveSpec {
    pub fn value(&self, u: &SetpointVector, y: &MeasurementVector) -> Result<f64> {
        match self {
            ObjectiveSpec::PrimaryCurtailment { p_reference } => {
                check_len("curtailment reference", u.p.len(), p_reference.len())?;
                Ok(u.p.iter().zip(p_reference).map(|(p, r)| (p - r).powi(2)).sum())
            }
            ObjectiveSpec::SecondaryTracking { p_set, pcc_index } => {
                let p = y.values.get(*pcc_index).ok_or(Error::Dimension {
                    context: "pcc measurement index",
                    expected: pcc_index + 1,
                    actual: y.len(),
                })?;
                Ok((p_set - p).powi(2))
            }
        }
    }
}

/// Actuator box per input channel, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
}

impl InputBox {
    pub fn lower(&self) -> Vec<f64> {
        self.p_min.iter().chain(&self.q_min).copied().collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.p_max.iter().chain(&self.q_max).copied().collect()
    }

    pub fn contains(&self, u: &SetpointVector) -> bool {
        let (lo, hi) = (self.lower(), self.upper());
        u.to_vec()
            .iter()
            .enumerate()
            .all(|(j, v)| *v >= lo[j] && *v <= hi[j])
    }
}

/// Limits `(lower, upper)` for one measurement row.
pub type RowLimits = (Option<f64>, Option<f64>);

#[derive(Debug, Clone)]
pub struct ControllerState {
    pub id: String,
    pub u: SetpointVector,
    pub sensitivity: SensitivityMatrix,
    pub objective: ObjectiveSpec,
    pub alpha: f64,
    pub cycle_time: f64,
    pub scope: ControllerScope,
    pub input_box: InputBox,
    pub output_limits: Vec<RowLimits>,
    pub rho: f64,
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

impl ControllerState {
    /// Builds a controller with boxes and limits taken from the network.
    /// Child-PCC inputs start with a degenerate box at their current value;
    /// the hierarchy widens it to the child's flexibility envelope.
    pub fn new(
        network: &GridNetwork,
        scope: ControllerScope,
        sensitivity: SensitivityMatrix,
        objective: ObjectiveSpec,
        alpha: f64,
        cycle_time: f64,
        u: SetpointVector,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Precondition(format!("alpha must be positive, got {alpha}")));
        }
        check_len("sensitivity rows", scope.measurement_len(), sensitivity.rows())?;
        check_len("sensitivity columns", scope.input_len(), sensitivity.cols())?;
        check_len("set point vector", scope.input_len(), u.dim())?;

        let k = scope.inputs.len();
        let mut input_box = InputBox {
            p_min: vec![0.0; k],
            p_max: vec![0.0; k],
            q_min: vec![0.0; k],
            q_max: vec![0.0; k],
        };
        for (j, ch) in scope.inputs.iter().enumerate() {
            match ch {
                InputChannel::Actor { index, .. } => {
                    let a = &network.actors[*index];
                    input_box.p_min[j] = a.p_min;
                    input_box.p_max[j] = a.p_max;
                    input_box.q_min[j] = a.q_min;
                    input_box.q_max[j] = a.q_max;
                }
                InputChannel::ChildPcc { .. } => {
                    input_box.p_min[j] = u.p[j];
                    input_box.p_max[j] = u.p[j];
                    input_box.q_min[j] = u.q[j];
                    input_box.q_max[j] = u.q[j];
                }
            }
        }

        let mut output_limits = Vec::with_capacity(scope.measurement_len());
        for &b in &scope.buses {
            let bus = &network.buses[b];
            output_limits.push((Some(bus.v_min), Some(bus.v_max)));
        }
        for &b in &scope.branches {
            // Magnitude rows only carry an upper limit.
            output_limits.push((None, Some(network.branches[b].s_max)));
        }
        for _ in &scope.pcc_branches {
            output_limits.push((None, None));
        }

        Ok(Self {
            id: scope.controller.clone(),
            u,
            sensitivity,
            objective,
            alpha,
            cycle_time,
            scope,
            input_box,
            output_limits,
            rho: DEFAULT_RHO,
        })
    }

    /// Replaces the set point request of a tracking controller in place.
    pub fn set_request(&mut self, p_set: f64) -> Result<()> {
        match &mut self.objective {
            ObjectiveSpec::SecondaryTracking { p_set: current, .. } => {
                *current = p_set;
                Ok(())
            }
            ObjectiveSpec::PrimaryCurtailment { .. } => Err(Error::Objective(format!(
                "controller `{}` has no set point request (curtailment objective)",
                self.id
            ))),
        }
    }

    pub fn p_set(&self) -> Option<f64> {
        match self.objective {
            ObjectiveSpec::SecondaryTracking { p_set, .. } => Some(p_set),
            ObjectiveSpec::PrimaryCurtailment { .. } => None,
        }
    }

    /// Builds the least-distance problem for the current cycle.
    pub fn least_distance_problem(&self, y: &MeasurementVector) -> Result<LeastDistanceProblem> {
        let (grad_u, grad_y) = objective_gradient(&self.objective, &self.u, y)?;
        let g = compose_gradient(self, &grad_u, &grad_y)?;
        let u = self.u.to_vec();
        let alpha = self.alpha;
        let input_lower = self
            .input_box
            .lower()
            .iter()
            .zip(&u)
            .map(|(lo, ui)| (lo - ui) / alpha)
            .collect();
        let input_upper = self
            .input_box
            .upper()
            .iter()
            .zip(&u)
            .map(|(hi, ui)| (hi - ui) / alpha)
            .collect();
        let mut rows = Vec::new();
        for (i, &(lo, hi)) in self.output_limits.iter().enumerate() {
            if lo.is_none() && hi.is_none() {
                continue;
            }
            let coeffs = self
                .sensitivity
                .matrix
                .row(i)
                .iter()
                .map(|v| alpha * v)
                .collect();
            rows.push(OutputRow {
                coeffs,
                lower: lo.map(|l| l - y.values[i]),
                upper: hi.map(|h| h - y.values[i]),
            });
        }
        Ok(LeastDistanceProblem {
            g,
            alpha,
            input_lower,
            input_upper,
            rows,
            rho: self.rho,
        })
    }
}

/// Partial gradients `(∇_uΦ, ∇_yΦ)` of the controller objective.
pub fn objective_gradient(
    objective: &ObjectiveSpec,
    u: &SetpointVector,
    y: &MeasurementVector,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut grad_u = vec![0.0; u.dim()];
    let mut grad_y = vec![0.0; y.len()];
    match objective {
        ObjectiveSpec::PrimaryCurtailment { p_reference } => {
            check_len("curtailment reference", u.p.len(), p_reference.len())?;
            for (j, (p, r)) in u.p.iter().zip(p_reference).enumerate() {
                grad_u[j] = 2.0 * (p - r);
            }
        }
        ObjectiveSpec::SecondaryTracking { p_set, pcc_index } => {
            if *pcc_index >= y.len() {
                return Err(Error::Dimension {
                    context: "pcc measurement index",
                    expected: pcc_index + 1,
                    actual: y.len(),
                });
            }
            grad_y[*pcc_index] = -2.0 * (p_set - y.values[*pcc_index]);
        }
    }
    Ok((grad_u, grad_y))
}

/// `g = ∇_uΦ + ∇hᵀ ∇_yΦ`.
pub fn compose_gradient(
    state: &ControllerState,
    grad_u: &[f64],
    grad_y: &[f64],
) -> Result<Vec<f64>> {
    let h = &state.sensitivity.matrix;
    check_len("input gradient", h.ncols(), grad_u.len())?;
    check_len("output gradient", h.nrows(), grad_y.len())?;
    let through = h.transpose() * DVector::from_column_slice(grad_y);
    Ok(grad_u.iter().zip(through.iter()).map(|(a, b)| a + b).collect())
}

/// One controller iteration: `u(t+1) = u(t) + α·σ̂(u, y)`.
pub fn ofo_step(
    state: &ControllerState,
    y: &MeasurementVector,
    now: f64,
) -> Result<(SetpointVector, QpResult)> {
    check_len("measurement vector", state.scope.measurement_len(), y.len())?;
    if y.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("measurement vector has non-finite entries".into()));
    }
    if y.timestamp > now + 1e-9 {
        return Err(Error::Precondition(format!(
            "measurement from t={} is newer than t={now}",
            y.timestamp
        )));
    }
    if now - y.timestamp > state.cycle_time + 1e-9 {
        return Err(Error::StaleMeasurement {
            measured: y.timestamp,
            now,
            cycle: state.cycle_time,
        });
    }
    let problem = state.least_distance_problem(y)?;
    let result = solve_least_distance(&problem)?;
    let lo = state.input_box.lower();
    let hi = state.input_box.upper();
    let next: Vec<f64> = state
        .u
        .to_vec()
        .iter()
        .zip(&result.w)
        .enumerate()
        .map(|(j, (u, w))| (u + state.alpha * w).clamp(lo[j], hi[j]))
        .collect();
    Ok((state.u.with_values(&next), result))
}

pub fn update_setpoint_request(state: &ControllerState, p_set: f64) -> Result<ControllerState> {
    let mut next = state.clone();
    next.set_request(p_set)?;
    Ok(next)
}

/// Relative remaining deviation `|P_set − P_PCC| / |P_set|`.
pub fn tracking_error(p_set: f64, p_pcc: f64) -> Result<f64> {
    if p_set == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    Ok((p_set - p_pcc).abs() / p_set.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn y(values: Vec<f64>) -> MeasurementVector {
        MeasurementVector {
            values,
            timestamp: 0.0,
        }
    }

    fn sv(p: Vec<f64>, q: Vec<f64>) -> SetpointVector {
        let ids = (0..p.len()).map(|i| format!("a{i}")).collect();
        SetpointVector::new(ids, p, q)
    }

    #[test]
    fn tracked_setpoint_has_zero_gradients() {
        let obj = ObjectiveSpec::SecondaryTracking {
            p_set: -0.3,
            pcc_index: 1,
        };
        let (gu, gy) = objective_gradient(&obj, &sv(vec![0.1], vec![0.0]), &y(vec![1.0, -0.3])).unwrap();
        assert_eq!(gu, vec![0.0, 0.0]);
        assert_eq!(gy, vec![0.0, 0.0]);
    }

    #[test]
    fn tracking_gradient_sign() {
        let obj = ObjectiveSpec::SecondaryTracking {
            p_set: -0.5,
            pcc_index: 0,
        };
        let (_, gy) = objective_gradient(&obj, &sv(vec![0.0], vec![0.0]), &y(vec![-0.3])).unwrap();
        assert!((gy[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn curtailment_gradient() {
        let obj = ObjectiveSpec::PrimaryCurtailment {
            p_reference: vec![0.5],
        };
        let (gu, gy) = objective_gradient(&obj, &sv(vec![0.2], vec![0.1]), &y(vec![1.0])).unwrap();
        assert!((gu[0] + 0.6).abs() < 1e-15);
        assert_eq!(gu[1], 0.0);
        assert_eq!(gy, vec![0.0]);
    }

    #[test]
    fn pcc_index_out_of_range() {
        let obj = ObjectiveSpec::SecondaryTracking {
            p_set: 0.0,
            pcc_index: 3,
        };
        assert!(objective_gradient(&obj, &sv(vec![0.0], vec![0.0]), &y(vec![1.0])).is_err());
    }

    #[test]
    fn tracking_error_values() {
        assert!((tracking_error(-14.5, -13.4415).unwrap() - 0.073).abs() < 1e-12);
        assert_eq!(tracking_error(2.0, 2.0).unwrap(), 0.0);
        assert!((tracking_error(30.0, 27.06).unwrap() - 0.098).abs() < 1e-12);
        assert!(matches!(tracking_error(0.0, 1.0), Err(Error::UndefinedMetric)));
    }

    fn toy_state(objective: ObjectiveSpec, h: DMatrix<f64>, u: SetpointVector) -> ControllerState {
        use crate::grid_model::ControllerScope;
        let k = u.ids.len();
        let scope = ControllerScope {
            controller: "c".into(),
            buses: vec![],
            branches: vec![],
            pcc_branches: (0..h.nrows()).collect(),
            inputs: (0..k)
                .map(|i| InputChannel::Actor {
                    id: u.ids[i].clone(),
                    index: i,
                })
                .collect(),
            own_pcc: Some(0),
        };
        let rows = (0..h.nrows()).map(|i| format!("p:{i}")).collect();
        let sens = SensitivityMatrix::from_parts("c", h.clone(), u.clone(), rows, scope.column_ids())
        .unwrap();
        ControllerState {
            id: "c".into(),
            u,
            sensitivity: sens,
            objective,
            alpha: 1.0,
            cycle_time: 5.0,
            output_limits: vec![(None, None); h.nrows()],
            scope,
            input_box: InputBox {
                p_min: vec![-1.0; k],
                p_max: vec![1.0; k],
                q_min: vec![-1.0; k],
                q_max: vec![1.0; k],
            },
            rho: DEFAULT_RHO,
        }
    }

    #[test]
    fn compose_identity_branch() {
        let state = toy_state(
            ObjectiveSpec::PrimaryCurtailment {
                p_reference: vec![0.0],
            },
            DMatrix::from_row_slice(1, 2, &[0.7, 0.1]),
            sv(vec![0.0], vec![0.0]),
        );
        let g = compose_gradient(&state, &[0.3, -0.2], &[0.0]).unwrap();
        assert_eq!(g, vec![0.3, -0.2]);
        let g = compose_gradient(&state, &[0.0, 0.0], &[2.0]).unwrap();
        assert!((g[0] - 1.4).abs() < 1e-15 && (g[1] - 0.2).abs() < 1e-15);
        assert!(compose_gradient(&state, &[0.0], &[2.0]).is_err());
    }

    #[test]
    fn fixed_point_when_tracked() {
        let state = toy_state(
            ObjectiveSpec::SecondaryTracking {
                p_set: -0.2,
                pcc_index: 0,
            },
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            sv(vec![0.3], vec![0.1]),
        );
        let (u, res) = ofo_step(&state, &y(vec![-0.2]), 0.0).unwrap();
        assert_eq!(u, state.u);
        assert!(res.w.iter().all(|w| w.abs() < 1e-12));
    }

    #[test]
    fn saturates_far_setpoint() {
        let mut state = toy_state(
            ObjectiveSpec::SecondaryTracking {
                p_set: -10.0,
                pcc_index: 0,
            },
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            sv(vec![0.0], vec![0.0]),
        );
        state.alpha = 50.0;
        let (u, _) = ofo_step(&state, &y(vec![0.0]), 0.0).unwrap();
        assert_eq!(u.p, vec![1.0]);
        assert_eq!(u.q, vec![0.0]);
    }

    #[test]
    fn stale_measurement_rejected() {
        let state = toy_state(
            ObjectiveSpec::SecondaryTracking {
                p_set: 0.0,
                pcc_index: 0,
            },
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            sv(vec![0.0], vec![0.0]),
        );
        let m = MeasurementVector {
            values: vec![0.0],
            timestamp: 0.0,
        };
        assert!(matches!(
            ofo_step(&state, &m, 5.0 + 1e-3),
            Err(Error::StaleMeasurement { .. })
        ));
        assert!(ofo_step(&state, &m, 5.0).is_ok());
    }

    #[test]
    fn request_update_only_for_tracking() {
        let state = toy_state(
            ObjectiveSpec::SecondaryTracking {
                p_set: 0.0,
                pcc_index: 0,
            },
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            sv(vec![0.0], vec![0.0]),
        );
        let a = update_setpoint_request(&state, 0.4).unwrap();
        let b = update_setpoint_request(&a, 0.4).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.p_set(), Some(0.4));
        assert_eq!(a.u, state.u);

        let primary = toy_state(
            ObjectiveSpec::PrimaryCurtailment {
                p_reference: vec![0.0],
            },
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            sv(vec![0.0], vec![0.0]),
        );
        assert!(matches!(
            update_setpoint_request(&primary, 0.1),
            Err(Error::Objective(_))
        ));
    }

    #[test]
    fn request_equal_to_measurement_gives_zero_step() {
        let state = toy_state(
            ObjectiveSpec::SecondaryTracking {
                p_set: 0.9,
                pcc_index: 0,
            },
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            sv(vec![0.3], vec![0.0]),
        );
        let measured = -0.25;
        let next = update_setpoint_request(&state, measured).unwrap();
        let (_, res) = ofo_step(&next, &y(vec![measured]), 0.0).unwrap();
        assert!(res.w.iter().all(|w| *w == 0.0));
    }
}
