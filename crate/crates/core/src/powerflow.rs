//! Polar Newton–Raphson AC power flow. This is the simulated plant `y = h(u)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid_model::{BusKind, GridNetwork};
use crate::voltvar::DroopCurve;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 30;

/// Voltage-dependent reactive injection of a droop-controlled inverter.
#[derive(Debug, Clone, PartialEq)]
pub struct DroopSource {
    pub actor: String,
    pub bus: usize,
    pub curve: DroopCurve,
    /// Reactive capability at the current active power, before the fraction.
    pub q_available: f64,
}

/// Net per-bus injections in per-unit (generator convention).
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionProfile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub droop: Vec<DroopSource>,
}

impl InjectionProfile {
    pub fn zeros(n_bus: usize) -> Self {
        Self {
            p: vec![0.0; n_bus],
            q: vec![0.0; n_bus],
            droop: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// Apparent power magnitude at the from-bus end.
    pub branch_s: Vec<f64>,
    /// Signed active power from→to, measured at the from-bus end.
    pub branch_p: Vec<f64>,
    /// Signed reactive power from→to, measured at the from-bus end.
    pub branch_q: Vec<f64>,
    /// Active power received at the to-bus end (to→from sign).
    pub branch_p_to: Vec<f64>,
    pub slack_p: f64,
    pub slack_q: f64,
    /// Reactive output of each droop source, in `InjectionProfile::droop` order.
    pub droop_q: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    /// Total series losses.
    pub fn losses(&self) -> f64 {
        self.branch_p
            .iter()
            .zip(&self.branch_p_to)
            .map(|(f, t)| f + t)
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Series admittance of every branch and the bus admittance matrix.
struct Admittance {
    ybus: DMatrix<Complex64>,
    y_series: Vec<Complex64>,
    ends: Vec<(usize, usize)>,
}

fn admittance(network: &GridNetwork) -> Result<Admittance> {
    let n = network.buses.len();
    let mut ybus = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut y_series = Vec::with_capacity(network.branches.len());
    let mut ends = Vec::with_capacity(network.branches.len());
    for br in &network.branches {
        let f = network.bus_idx(&br.from_bus)?;
        let t = network.bus_idx(&br.to_bus)?;
        let y = Complex64::new(1.0, 0.0) / Complex64::new(br.resistance, br.reactance);
        ybus[(f, f)] += y;
        ybus[(t, t)] += y;
        ybus[(f, t)] -= y;
        ybus[(t, f)] -= y;
        y_series.push(y);
        ends.push((f, t));
    }
    Ok(Admittance {
        ybus,
        y_series,
        ends,
    })
}

fn injections(ybus: &DMatrix<Complex64>, vm: &[f64], va: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = vm.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for k in 0..n {
            let y = ybus[(i, k)];
            if y.re == 0.0 && y.im == 0.0 {
                continue;
            }
            let (s, c) = (va[i] - va[k]).sin_cos();
            p[i] += vm[i] * vm[k] * (y.re * c + y.im * s);
            q[i] += vm[i] * vm[k] * (y.re * s - y.im * c);
        }
    }
    (p, q)
}

pub fn solve_ac_power_flow(
    network: &GridNetwork,
    injections_in: &InjectionProfile,
    warm_start: Option<&PowerFlowSolution>,
) -> Result<PowerFlowSolution> {
    solve_with_options(network, injections_in, warm_start, SolverOptions::default())
}

pub fn solve_with_options(
    network: &GridNetwork,
    inj: &InjectionProfile,
    warm_start: Option<&PowerFlowSolution>,
    opts: SolverOptions,
) -> Result<PowerFlowSolution> {
    let n = network.buses.len();
    if inj.p.len() != n || inj.q.len() != n {
        return Err(Error::Dimension {
            context: "injection profile",
            expected: n,
            actual: inj.p.len().min(inj.q.len()),
        });
    }
    let slack = network.slack_idx().ok_or_else(|| {
        Error::Precondition("network has no slack bus".into())
    })?;
    let adm = admittance(network)?;

    let (mut vm, mut va) = match warm_start {
        Some(ws) if ws.vm.len() == n => (ws.vm.clone(), ws.va.clone()),
        _ => (vec![1.0; n], vec![0.0; n]),
    };
    vm[slack] = network.buses[slack].v_setpoint;
    va[slack] = 0.0;

    // State ordering: angles of PQ buses, then magnitudes of PQ buses.
    let pq: Vec<usize> = (0..n)
        .filter(|&i| network.buses[i].kind == BusKind::Pq)
        .collect();
    let m = pq.len();
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in pq.iter().enumerate() {
        pos[i] = k;
    }

    let droop_at = |vm: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut q_spec = inj.q.clone();
        let mut dq_dv = vec![0.0; n];
        let mut out = Vec::with_capacity(inj.droop.len());
        for src in &inj.droop {
            let (q, slope) = src.curve.response(vm[src.bus], src.q_available);
            q_spec[src.bus] += q;
            dq_dv[src.bus] += slope;
            out.push(q);
        }
        (q_spec, dq_dv, out)
    };

    let mismatch_at = |vm: &[f64], va: &[f64]| {
        let (p_calc, q_calc) = injections(&adm.ybus, vm, va);
        let (q_spec, dq_dv, droop_q) = droop_at(vm);
        let mut mismatch = DVector::zeros(2 * m);
        for (k, &i) in pq.iter().enumerate() {
            mismatch[k] = p_calc[i] - inj.p[i];
            mismatch[m + k] = q_calc[i] - q_spec[i];
        }
        (mismatch, p_calc, q_calc, dq_dv, droop_q)
    };

    let mut iterations = 0;
    let (mut mismatch, mut p_calc, mut q_calc, mut dq_dv, mut droop_q) = mismatch_at(&vm, &va);
    loop {
        let max_mismatch = mismatch.amax();
        if !max_mismatch.is_finite() {
            return Err(Error::Divergence {
                iterations,
                mismatch: max_mismatch,
            });
        }
        if max_mismatch <= opts.tolerance {
            return Ok(finish(
                network,
                &adm,
                vm,
                va,
                p_calc[slack],
                q_calc[slack],
                droop_q,
                iterations,
                max_mismatch,
            ));
        }
        if iterations >= opts.max_iter {
            return Err(Error::Divergence {
                iterations,
                mismatch: max_mismatch,
            });
        }

        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            for k in 0..n {
                let y = adm.ybus[(i, k)];
                if (y.re == 0.0 && y.im == 0.0) || k == i {
                    continue;
                }
                let c = pos[k];
                if c == usize::MAX {
                    continue;
                }
                let (s, co) = (va[i] - va[k]).sin_cos();
                let (g, b) = (y.re, y.im);
                jac[(r, c)] = vm[i] * vm[k] * (g * s - b * co);
                jac[(r, m + c)] = vm[i] * (g * co + b * s);
                jac[(m + r, c)] = -vm[i] * vm[k] * (g * co + b * s);
                jac[(m + r, m + c)] = vm[i] * (g * s - b * co);
            }
            let y = adm.ybus[(i, i)];
            let (g, b) = (y.re, y.im);
            let v = vm[i];
            jac[(r, r)] = -q_calc[i] - b * v * v;
            jac[(r, m + r)] = p_calc[i] / v + g * v;
            jac[(m + r, r)] = p_calc[i] - g * v * v;
            jac[(m + r, m + r)] = q_calc[i] / v - b * v - dq_dv[i];
        }

        let lu = jac.lu();
        let dx = lu
            .solve(&(-&mismatch))
            .ok_or(Error::SingularJacobian {
                iteration: iterations,
            })?;

        // Backtracking on the mismatch norm. The full step is taken whenever
        // it reduces the mismatch, which keeps quadratic convergence on smooth
        // cases; the kinks of droop curves can otherwise make Newton cycle.
        let norm0 = mismatch.norm();
        let mut step = 1.0;
        loop {
            let mut vm_try = vm.clone();
            let mut va_try = va.clone();
            for (k, &i) in pq.iter().enumerate() {
                va_try[i] += step * dx[k];
                vm_try[i] += step * dx[m + k];
            }
            let trial = mismatch_at(&vm_try, &va_try);
            let accept = trial.0.norm() < (1.0 - 1e-4 * step) * norm0 || step < 1e-3;
            if accept {
                vm = vm_try;
                va = va_try;
                (mismatch, p_calc, q_calc, dq_dv, droop_q) = trial;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    network: &GridNetwork,
    adm: &Admittance,
    vm: Vec<f64>,
    va: Vec<f64>,
    slack_p: f64,
    slack_q: f64,
    droop_q: Vec<f64>,
    iterations: usize,
    max_mismatch: f64,
) -> PowerFlowSolution {
    let nb = network.branches.len();
    let mut branch_s = Vec::with_capacity(nb);
    let mut branch_p = Vec::with_capacity(nb);
    let mut branch_q = Vec::with_capacity(nb);
    let mut branch_p_to = Vec::with_capacity(nb);
    let volt: Vec<Complex64> = vm
        .iter()
        .zip(&va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    for (y, &(f, t)) in adm.y_series.iter().zip(&adm.ends) {
        let i_from = (volt[f] - volt[t]) * y;
        let s_from = volt[f] * i_from.conj();
        let s_to = volt[t] * (-i_from).conj();
        branch_s.push(s_from.norm());
        branch_p.push(s_from.re);
        branch_q.push(s_from.im);
        branch_p_to.push(s_to.re);
    }
    PowerFlowSolution {
        vm,
        va,
        branch_s,
        branch_p,
        branch_q,
        branch_p_to,
        slack_p,
        slack_q,
        droop_q,
        iterations,
        max_mismatch,
    }
}

/// Read access to solved quantities. Measurement extraction only goes
/// through this trait so that access can be audited.
pub trait MeasurementSource {
    fn bus_voltage(&self, bus: usize) -> f64;
    fn branch_apparent(&self, branch: usize) -> f64;
    fn branch_active(&self, branch: usize) -> f64;
}

impl MeasurementSource for PowerFlowSolution {
    fn bus_voltage(&self, bus: usize) -> f64 {
        self.vm[bus]
    }

    fn branch_apparent(&self, branch: usize) -> f64 {
        self.branch_s[branch]
    }

    fn branch_active(&self, branch: usize) -> f64 {
        self.branch_p[branch]
    }
}

/// Measurement vector `[V.., S.., P_pcc..]` for a controller scope.
pub fn extract_measurements(
    source: &impl MeasurementSource,
    scope: &crate::grid_model::ControllerScope,
    timestamp: f64,
) -> crate::ofo::MeasurementVector {
    let mut values = Vec::with_capacity(scope.measurement_len());
    values.extend(scope.buses.iter().map(|&b| source.bus_voltage(b)));
    values.extend(scope.branches.iter().map(|&b| source.branch_apparent(b)));
    values.extend(scope.pcc_branches.iter().map(|&b| source.branch_active(b)));
    crate::ofo::MeasurementVector { values, timestamp }
}

/// Bounds-checked variant of [`extract_measurements`].
pub fn try_extract_measurements(
    solution: &PowerFlowSolution,
    scope: &crate::grid_model::ControllerScope,
    timestamp: f64,
) -> Result<crate::ofo::MeasurementVector> {
    if let Some(&b) = scope.buses.iter().find(|&&b| b >= solution.vm.len()) {
        return Err(Error::UnknownId {
            kind: "bus index",
            id: b.to_string(),
        });
    }
    let nb = solution.branch_p.len();
    if let Some(&b) = scope
        .branches
        .iter()
        .chain(&scope.pcc_branches)
        .find(|&&b| b >= nb)
    {
        return Err(Error::UnknownId {
            kind: "branch index",
            id: b.to_string(),
        });
    }
    Ok(extract_measurements(solution, scope, timestamp))
}
