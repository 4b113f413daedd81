//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ofoflex::grid_model::{load_case, GridNetwork, HierarchySpec};
use ofoflex::plant::{self, Dispatch};
use ofoflex::qp::{LeastDistanceProblem, OutputRow};

pub fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)
}

pub fn lv7() -> (GridNetwork, HierarchySpec) {
    load_case(asset("lv7.json")).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dispatch with the given actors drawn uniformly from `fraction` of their boxes.
pub fn random_dispatch(net: &GridNetwork, actors: &[&str], rng: &mut ChaCha8Rng, fraction: f64) -> Dispatch {
    let mut d = Dispatch::initial(net);
    for id in actors {
        let a = net.actor(id).unwrap();
        let p = fraction * rng.random_range(a.p_min..=a.p_max);
        let q = fraction * rng.random_range(a.q_min..=a.q_max);
        d.setpoints.insert(id.to_string(), (p, q));
    }
    d
}

/// Random least-distance instance with `p` inputs and `n` output rows. The
/// box always contains zero, so the problem is feasible.
pub fn random_qp(seed: u64, p: usize, n: usize) -> LeastDistanceProblem {
    let mut r = rng(seed);
    let g: Vec<f64> = (0..p).map(|_| r.random_range(-2.0..2.0)).collect();
    let lower: Vec<f64> = (0..p).map(|_| -r.random_range(0.0..1.5)).collect();
    let upper: Vec<f64> = (0..p).map(|_| r.random_range(0.0..1.5)).collect();
    let mut prob = LeastDistanceProblem::boxed(g, r.random_range(0.05..1.0), lower, upper);
    for _ in 0..n {
        let coeffs: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        // Bounds around zero: mostly consistent, occasionally forcing slack.
        let lo = r.random_range(-1.0..0.2);
        let hi = lo + r.random_range(0.0..1.0);
        let (lower, upper) = match r.random_range(0..4) {
            0 => (Some(lo), None),
            1 => (None, Some(hi)),
            _ => (Some(lo), Some(hi)),
        };
        prob.rows.push(OutputRow { coeffs, lower, upper });
    }
    prob
}

/// Reference solution of the least-distance problem with slack, through the
/// Goldfarb–Idnani dual method of the `quadprog` crate.
pub fn quadprog_reference(prob: &LeastDistanceProblem) -> Vec<f64> {
    let p = prob.g.len();
    let r = prob.rows.len();
    let nx = p + r;
    let mut q = vec![0.0; nx * nx];
    for i in 0..nx {
        q[i * nx + i] = if i < p { 2.0 } else { 2.0 * prob.rho };
    }
    let mut c = vec![0.0; nx];
    for (cj, g) in c.iter_mut().zip(&prob.g) {
        *cj = 2.0 * g;
    }
    let mut a: Vec<f64> = Vec::new();
    let mut b = Vec::new();
    let mut row = |coef: &[(usize, f64)], rhs: f64| {
        let mut dense = vec![0.0; nx];
        for &(i, v) in coef {
            dense[i] = v;
        }
        a.extend(dense);
        b.push(rhs);
    };
    for j in 0..p {
        row(&[(j, 1.0)], prob.input_upper[j]);
        row(&[(j, -1.0)], -prob.input_lower[j]);
    }
    for (k, out) in prob.rows.iter().enumerate() {
        let s = p + k;
        let plus: Vec<(usize, f64)> = out.coeffs.iter().copied().enumerate().collect();
        if let Some(hi) = out.upper {
            let mut t = plus.clone();
            t.push((s, -1.0));
            row(&t, hi);
        }
        if let Some(lo) = out.lower {
            let mut t: Vec<(usize, f64)> = plus.iter().map(|&(j, v)| (j, -v)).collect();
            t.push((s, -1.0));
            row(&t, -lo);
        }
        row(&[(s, -1.0)], 0.0);
    }
    let sol = quadprog::solve_qp(&mut q, &c, &a, &b, 0, false).expect("reference QP solves");
    sol.sol[..p].to_vec()
}

/// Result of the brute-force constrained OPF.
#[derive(Debug, Clone)]
pub struct OpfOptimum {
    /// Best set points `[P_1, .., P_k, Q_1, .., Q_k]`, per-unit.
    pub u: Vec<f64>,
    pub p_pcc: f64,
    pub objective: f64,
    pub max_v: f64,
    pub evaluations: usize,
}

/// Minimizes `(p_set − P_pcc)²` over the boxes of `actors` subject to
/// `v_min ≤ V ≤ v_max` on `buses`, by exhaustive grid search with
/// successive zoom around the incumbent. Every candidate is a full AC
/// power-flow solve; nothing is linearized.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_opf(
    net: &GridNetwork,
    base: &Dispatch,
    actors: &[&str],
    buses: &[&str],
    pcc: &str,
    p_set: f64,
    points: usize,
    levels: usize,
) -> OpfOptimum {
    let k = actors.len();
    let dims = 2 * k;
    let mut lo = Vec::with_capacity(dims);
    let mut hi = Vec::with_capacity(dims);
    for id in actors {
        let a = net.actor(id).unwrap();
        lo.push(a.p_min);
        hi.push(a.p_max);
    }
    for id in actors {
        let a = net.actor(id).unwrap();
        lo.push(a.q_min);
        hi.push(a.q_max);
    }
    let (full_lo, full_hi) = (lo.clone(), hi.clone());
    let bus_idx: Vec<usize> = buses.iter().map(|b| net.bus_idx(b).unwrap()).collect();
    let pcc_idx = net.branch_idx(pcc).unwrap();

    let eval = |u: &[f64]| -> Option<(f64, f64, f64)> {
        let mut d = base.clone();
        for (j, id) in actors.iter().enumerate() {
            d.setpoints.insert(id.to_string(), (u[j], u[k + j]));
        }
        let sol = plant::resolve(net, &d, None).ok()?;
        let mut max_v: f64 = 0.0;
        for &b in &bus_idx {
            let v = sol.vm[b];
            let bus = &net.buses[b];
            if v < bus.v_min || v > bus.v_max {
                return None;
            }
            max_v = max_v.max(v);
        }
        let p = sol.branch_p[pcc_idx];
        Some(((p_set - p).powi(2), p, max_v))
    };

    let mut best: Option<OpfOptimum> = None;
    let mut evaluations = 0;
    for _ in 0..levels {
        let total = points.pow(dims as u32);
        let candidates: Vec<(Vec<f64>, (f64, f64, f64))> = (0..total)
            .into_par_iter()
            .filter_map(|mut idx| {
                let mut u = vec![0.0; dims];
                for d in 0..dims {
                    let i = idx % points;
                    idx /= points;
                    u[d] = lo[d] + (hi[d] - lo[d]) * i as f64 / (points - 1) as f64;
                }
                eval(&u).map(|r| (u, r))
            })
            .collect();
        evaluations += total;
        for (u, (obj, p, max_v)) in candidates {
            if best.as_ref().is_none_or(|b| obj < b.objective) {
                best = Some(OpfOptimum {
                    u,
                    p_pcc: p,
                    objective: obj,
                    max_v,
                    evaluations: 0,
                });
            }
        }
        let Some(b) = &best else { break };
        for d in 0..dims {
            let half = 0.35 * (hi[d] - lo[d]);
            lo[d] = (b.u[d] - half).max(full_lo[d]);
            hi[d] = (b.u[d] + half).min(full_hi[d]);
        }
    }
    let mut best = best.expect("some grid point is feasible");
    best.evaluations = evaluations;
    best
}

/// `Φ(u, h(u))` for a tracking controller, evaluated through the plant.
pub fn tracking_objective_through_plant(
    net: &GridNetwork,
    base: &Dispatch,
    actors: &[&str],
    u: &[f64],
    pcc: usize,
    p_set: f64,
) -> f64 {
    let k = actors.len();
    let mut d = base.clone();
    for (j, id) in actors.iter().enumerate() {
        d.setpoints.insert(id.to_string(), (u[j], u[k + j]));
    }
    let sol = plant::resolve(net, &d, None).unwrap();
    (p_set - sol.branch_p[pcc]).powi(2)
}
