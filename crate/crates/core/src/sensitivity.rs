//! Steady-state input→output sensitivities by central differences through
//! the power-flow plant.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid_model::{ControllerScope, GridNetwork, InputChannel};
use crate::ofo::SetpointVector;
use crate::plant::{self, Dispatch};
use crate::powerflow::{extract_measurements, PowerFlowSolution};

pub const DEFAULT_DELTA: f64 = 1e-4;

/// `∂y_i/∂u_j` for one controller; rows follow the measurement layout,
/// columns `[P_1..P_k, Q_1..Q_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    pub controller: String,
    pub matrix: DMatrix<f64>,
    pub base_point: SetpointVector,
    pub delta: f64,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

impl SensitivityMatrix {
    /// Wraps an externally obtained matrix (measured, estimated, ...).
    pub fn from_parts(
        controller: impl Into<String>,
        matrix: DMatrix<f64>,
        base_point: SetpointVector,
        row_ids: Vec<String>,
        col_ids: Vec<String>,
    ) -> Result<Self> {
        if matrix.nrows() != row_ids.len() {
            return Err(Error::Dimension {
                context: "sensitivity rows",
                expected: row_ids.len(),
                actual: matrix.nrows(),
            });
        }
        if matrix.ncols() != col_ids.len() || matrix.ncols() != base_point.dim() {
            return Err(Error::Dimension {
                context: "sensitivity columns",
                expected: col_ids.len(),
                actual: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("sensitivity entries must be finite".into()));
        }
        Ok(Self {
            controller: controller.into(),
            matrix,
            base_point,
            delta: 0.0,
            row_ids,
            col_ids,
        })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Long-format CSV: `row,column,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,column,value\n");
        for (i, r) in self.row_ids.iter().enumerate() {
            for (j, c) in self.col_ids.iter().enumerate() {
                out.push_str(&format!("{r},{c},{}\n", self.matrix[(i, j)]));
            }
        }
        out
    }
}

/// Applies an input perturbation to a dispatch. Actor columns move the actor
/// set point; child-PCC columns add the equivalent injection on the child
/// side of the PCC so the measured flow shifts by ≈ `amount`.
pub fn perturb(
    dispatch: &mut Dispatch,
    network: &GridNetwork,
    scope: &ControllerScope,
    column: usize,
    amount: f64,
) -> Result<()> {
    let k = scope.inputs.len();
    let (channel, reactive) = if column < k {
        (&scope.inputs[column], false)
    } else {
        (&scope.inputs[column - k], true)
    };
    match channel {
        InputChannel::Actor { id, .. } => {
            let current = dispatch.setpoint(network, id)?;
            let sp = dispatch.setpoints.entry(id.clone()).or_insert(current);
            if reactive {
                sp.1 += amount;
            } else {
                sp.0 += amount;
            }
        }
        InputChannel::ChildPcc {
            child_bus,
            orientation,
            ..
        } => {
            let inj = *orientation * amount;
            if reactive {
                dispatch.add_extra(*child_bus, 0.0, inj);
            } else {
                dispatch.add_extra(*child_bus, inj, 0.0);
            }
        }
    }
    Ok(())
}

/// Current value of every input channel of a scope.
pub fn operating_point(
    network: &GridNetwork,
    dispatch: &Dispatch,
    solution: &PowerFlowSolution,
    scope: &ControllerScope,
) -> Result<SetpointVector> {
    let mut p = Vec::with_capacity(scope.inputs.len());
    let mut q = Vec::with_capacity(scope.inputs.len());
    for ch in &scope.inputs {
        match ch {
            InputChannel::Actor { id, .. } => {
                let (pp, qq) = dispatch.setpoint(network, id)?;
                p.push(pp);
                q.push(qq);
            }
            InputChannel::ChildPcc { branch, .. } => {
                p.push(solution.branch_p[*branch]);
                q.push(solution.branch_q[*branch]);
            }
        }
    }
    Ok(SetpointVector::new(scope.input_ids(), p, q))
}

fn measure(
    network: &GridNetwork,
    dispatch: &Dispatch,
    warm: &PowerFlowSolution,
    scope: &ControllerScope,
) -> Result<DVector<f64>> {
    let sol = plant::resolve(network, dispatch, Some(warm))?;
    Ok(DVector::from_vec(extract_measurements(&sol, scope, 0.0).values))
}

pub fn compute_sensitivity(
    network: &GridNetwork,
    base: &Dispatch,
    scope: &ControllerScope,
    delta: f64,
) -> Result<SensitivityMatrix> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Precondition(format!(
            "perturbation delta must be positive, got {delta}"
        )));
    }
    let base_solution = plant::resolve(network, base, None)?;
    let base_point = operating_point(network, base, &base_solution, scope)?;
    let col_ids = scope.column_ids();
    let ncols = scope.input_len();

    let columns: Vec<Result<DVector<f64>>> = (0..ncols)
        .into_par_iter()
        .map(|j| {
            let wrap = |e: Error| Error::Sensitivity {
                input: col_ids[j].clone(),
                source: Box::new(e),
            };
            let mut plus = base.clone();
            perturb(&mut plus, network, scope, j, delta).map_err(wrap)?;
            let mut minus = base.clone();
            perturb(&mut minus, network, scope, j, -delta).map_err(wrap)?;
            let y_plus = measure(network, &plus, &base_solution, scope).map_err(wrap)?;
            let y_minus = measure(network, &minus, &base_solution, scope).map_err(wrap)?;
            Ok((y_plus - y_minus) / (2.0 * delta))
        })
        .collect();

    let nrows = scope.measurement_len();
    let mut matrix = DMatrix::zeros(nrows, ncols);
    for (j, col) in columns.into_iter().enumerate() {
        matrix.set_column(j, &col?);
    }
    Ok(SensitivityMatrix {
        controller: scope.controller.clone(),
        matrix,
        base_point,
        delta,
        row_ids: scope.row_ids(network),
        col_ids,
    })
}

/// Largest linear-prediction error `|h(u+Δu) − h(u) − ∇h·Δu|` over all rows.
pub fn verify_sensitivity(
    sens: &SensitivityMatrix,
    network: &GridNetwork,
    base: &Dispatch,
    scope: &ControllerScope,
    probe: &[f64],
) -> Result<f64> {
    if probe.len() != sens.cols() {
        return Err(Error::Dimension {
            context: "sensitivity probe",
            expected: sens.cols(),
            actual: probe.len(),
        });
    }
    let base_solution = plant::resolve(network, base, None)?;
    let y0 = DVector::from_vec(extract_measurements(&base_solution, scope, 0.0).values);
    let mut moved = base.clone();
    for (j, &d) in probe.iter().enumerate() {
        if d != 0.0 {
            perturb(&mut moved, network, scope, j, d)?;
        }
    }
    let y1 = measure(network, &moved, &base_solution, scope)?;
    let predicted = &sens.matrix * DVector::from_column_slice(probe);
    Ok((y1 - y0 - predicted).amax())
}
