//! Consistent discrete-time implementation.
//!
//! The incremental costs mix through Laplacian filters I - c_k L whose step
//! gains cycle through the reciprocals of the distinct nonzero Laplacian
//! eigenvalues, while the power/incremental-cost mismatch z contracts
//! through the semi-implicit recursion z <- z/(1 + h|z|), which drives
//! |z(k)| under 1/(kh) regardless of z(0). Power updates ride the same
//! Laplacian filter, so the generation total is conserved exactly at every
//! iteration.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{laplacian, spectrum, Topology};
use crate::model::GeneratorParams;
use crate::trace::DiscreteTraceRow;

/// Laplacian filter bank for finite-step averaging on a fixed topology.
#[derive(Debug, Clone, Serialize)]
pub struct FacaPlan {
    /// Distinct nonzero Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Step gains c_k = 1/eigenvalues[k-1] for k = 1..K, cycled beyond K.
    pub step_gains: Vec<f64>,
}

impl FacaPlan {
    /// Builds the plan from a connected topology's Laplacian spectrum.
    /// Near-duplicate eigenvalues are merged before taking reciprocals.
    pub fn for_topology(topology: &Topology) -> Result<Self> {
        if topology.node_count() == 1 {
            // single node: averaging is a no-op, one unit step keeps the
            // cycle arithmetic well-defined
            return Ok(FacaPlan {
                eigenvalues: vec![1.0],
                step_gains: vec![0.0],
            });
        }
        let spec = spectrum(&laplacian(topology))?;
        if spec.lambda2 <= 1e-9 {
            return Err(Error::DisconnectedTopology { index: 0 });
        }
        let step_gains = spec.distinct_nonzero.iter().map(|&l| 1.0 / l).collect();
        Ok(FacaPlan {
            eigenvalues: spec.distinct_nonzero,
            step_gains,
        })
    }

    /// Number of distinct nonzero eigenvalues (filter steps to exact mean).
    pub fn k(&self) -> usize {
        self.step_gains.len()
    }

    /// Gain for 1-based iteration `k`, cycling through the bank.
    pub fn gain(&self, k: usize) -> f64 {
        self.step_gains[(k - 1) % self.step_gains.len()]
    }
}

/// Semi-implicit Euler step of z' = -|z| z: contraction toward zero with
/// |z(1)| <= 1/h and |z(k)| <= 1/(kh) independently of z(0).
pub fn z_step(z: f64, h: f64) -> f64 {
    debug_assert!(h > 0.0);
    z / (1.0 + h * z.abs())
}

/// Laplacian action (L x)_i = deg_i x_i - sum_{j in N_i} x_j.
fn laplacian_apply(topology: &Topology, x: &[f64], out: &mut [f64]) {
    for i in 0..topology.node_count() {
        let mut acc = topology.degree(i) as f64 * x[i];
        for &j in topology.neighbors(i) {
            acc -= x[j];
        }
        out[i] = acc;
    }
}

/// Finite-step exact averaging: applies x <- (I - c_k L) x for k = 1..K.
/// After all K filters, every component equals the arithmetic mean of the
/// input (to rounding).
pub fn faca_consensus(values: &[f64], topology: &Topology, plan: &FacaPlan) -> Vec<f64> {
    let n = topology.node_count();
    assert_eq!(values.len(), n);
    let mut x = values.to_vec();
    let mut lx = vec![0.0; n];
    for k in 1..=plan.k() {
        let c = plan.gain(k);
        laplacian_apply(topology, &x, &mut lx);
        for i in 0..n {
            x[i] -= c * lx[i];
        }
    }
    x
}

/// Discrete-time network state.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteState {
    pub lambda: Vec<f64>,
    pub power: Vec<f64>,
    /// Iteration counter (0 at initialization).
    pub k: usize,
    /// Step parameter of the z recursion.
    pub h: f64,
}

impl DiscreteState {
    /// Led off with the consistent incremental cost lambda_i = 2 alpha_i P_i + beta_i,
    /// which zeroes every z_i from the start.
    pub fn consistent(power: Vec<f64>, params: &[GeneratorParams], h: f64) -> Self {
        let lambda = power
            .iter()
            .zip(params)
            .map(|(&p, g)| 2.0 * g.alpha * p + g.beta)
            .collect();
        DiscreteState {
            lambda,
            power,
            k: 0,
            h,
        }
    }

    pub fn mismatch(&self, params: &[GeneratorParams]) -> Vec<f64> {
        self.power
            .iter()
            .zip(&self.lambda)
            .zip(params)
            .map(|((&p, &l), g)| p - (l - g.beta) / (2.0 * g.alpha))
            .collect()
    }

    pub fn max_mismatch(&self, params: &[GeneratorParams]) -> f64 {
        self.mismatch(params)
            .into_iter()
            .map(f64::abs)
            .fold(0.0, f64::max)
    }
}

/// One coupled update: the incremental cost takes the Laplacian-filtered
/// value corrected by the contracted mismatch, and power moves along the
/// same filter so its total is conserved exactly.
pub fn discrete_update(
    state: &DiscreteState,
    plan: &FacaPlan,
    topology: &Topology,
    params: &[GeneratorParams],
) -> DiscreteState {
    let n = state.lambda.len();
    let c = plan.gain(state.k + 1);
    let mut l_lambda = vec![0.0; n];
    laplacian_apply(topology, &state.lambda, &mut l_lambda);
    let mut lambda = vec![0.0; n];
    let mut power = vec![0.0; n];
    for i in 0..n {
        let g = &params[i];
        let z = state.power[i] - (state.lambda[i] - g.beta) / (2.0 * g.alpha);
        lambda[i] = 2.0
            * g.alpha
            * (-c * l_lambda[i] + state.power[i] + g.beta / (2.0 * g.alpha)
                - z_step(z, state.h));
        power[i] = state.power[i] - c * l_lambda[i];
    }
    DiscreteState {
        lambda,
        power,
        k: state.k + 1,
        h: state.h,
    }
}

/// Result of iterating the discrete scheme to convergence.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteRun {
    pub state: DiscreteState,
    pub iterations: usize,
    pub rows: Vec<DiscreteTraceRow>,
}

/// Iterates [`discrete_update`] until the incremental costs agree and the
/// mismatch dies out (both at or below `tol`), recording one trace row per
/// iteration.
pub fn iterate_to_convergence(
    initial: DiscreteState,
    plan: &FacaPlan,
    topology: &Topology,
    params: &[GeneratorParams],
    tol: f64,
    max_iters: usize,
) -> Result<DiscreteRun> {
    let mut state = initial;
    let mut rows = Vec::new();
    let record = |state: &DiscreteState, rows: &mut Vec<DiscreteTraceRow>| {
        rows.push(DiscreteTraceRow {
            k: state.k,
            lambda: state.lambda.clone(),
            power: state.power.clone(),
            max_z: state.max_mismatch(params),
            consensus_error: crate::dynamics::consensus_error(&state.lambda),
        });
    };
    record(&state, &mut rows);
    let mut iters = 0;
    while crate::dynamics::consensus_error(&state.lambda) > tol
        || state.max_mismatch(params) > tol
    {
        if iters >= max_iters {
            return Err(Error::MaxIterations {
                cap: max_iters,
                residual: crate::dynamics::consensus_error(&state.lambda)
                    .max(state.max_mismatch(params)),
            });
        }
        state = discrete_update(&state, plan, topology, params);
        iters += 1;
        record(&state, &mut rows);
    }
    Ok(DiscreteRun {
        state,
        iterations: iters,
        rows,
    })
}

/// Default iteration cap: generous multiple of the filter length plus the
/// worst-case mismatch decay horizon.
pub fn default_max_iters(plan: &FacaPlan, h: f64, tol: f64) -> usize {
    (10.0 * (plan.k() as f64 + 1.0 / (h * tol))).ceil() as usize
}

/// Finite-step solve of the uncapacitated dispatch.
///
/// Every node carries the pair (P_i(0) + beta_i/(2 alpha_i), 1/(2 alpha_i));
/// after K filter steps both components hold exact network averages whose
/// ratio is the shared optimal incremental cost, from which each node reads
/// its dispatch locally. 2K iterations total, independent of the cost
/// coefficients — this is what keeps the discrete scheme inside the
/// fixed-iteration budget even when the slowest cost slope would make the
/// coupled recursion crawl.
pub fn ratio_consensus_solve(
    power0: &[f64],
    plan: &FacaPlan,
    topology: &Topology,
    params: &[GeneratorParams],
    h: f64,
    tol: f64,
) -> DiscreteRun {
    let n = params.len();
    let consistent = DiscreteState::consistent(power0.to_vec(), params, h);

    let mut rows = Vec::new();
    let mut record = |k: usize, lambda: &[f64], power: &[f64]| {
        let max_z = power
            .iter()
            .zip(lambda)
            .zip(params)
            .map(|((&p, &l), g)| (p - (l - g.beta) / (2.0 * g.alpha)).abs())
            .fold(0.0, f64::max);
        rows.push(DiscreteTraceRow {
            k,
            lambda: lambda.to_vec(),
            power: power.to_vec(),
            max_z,
            consensus_error: crate::dynamics::consensus_error(lambda),
        });
    };
    record(0, &consistent.lambda, &consistent.power);

    // already at the shared optimum: zero iterations
    if crate::dynamics::consensus_error(&consistent.lambda) <= tol {
        return DiscreteRun {
            state: consistent,
            iterations: 0,
            rows,
        };
    }

    let mut num: Vec<f64> = power0
        .iter()
        .zip(params)
        .map(|(&p, g)| p + g.beta / (2.0 * g.alpha))
        .collect();
    let mut den: Vec<f64> = params.iter().map(|g| 1.0 / (2.0 * g.alpha)).collect();
    let mut lx = vec![0.0; n];
    let mut iterations = 0;
    for k in 1..=plan.k() {
        let c = plan.gain(k);
        laplacian_apply(topology, &num, &mut lx);
        for i in 0..n {
            num[i] -= c * lx[i];
        }
        iterations += 1;
        let lambda_est: Vec<f64> = num
            .iter()
            .zip(&den)
            .map(|(&a, &b)| a / b)
            .collect();
        let power_est: Vec<f64> = lambda_est
            .iter()
            .zip(params)
            .map(|(&l, g)| (l - g.beta) / (2.0 * g.alpha))
            .collect();
        record(iterations, &lambda_est, &power_est);
    }
    for k in 1..=plan.k() {
        let c = plan.gain(k);
        laplacian_apply(topology, &den, &mut lx);
        for i in 0..n {
            den[i] -= c * lx[i];
        }
        iterations += 1;
        let lambda_est: Vec<f64> = num
            .iter()
            .zip(&den)
            .map(|(&a, &b)| a / b)
            .collect();
        let power_est: Vec<f64> = lambda_est
            .iter()
            .zip(params)
            .map(|(&l, g)| (l - g.beta) / (2.0 * g.alpha))
            .collect();
        record(iterations, &lambda_est, &power_est);
    }

    let lambda_star = num[0] / den[0];
    let power: Vec<f64> = params
        .iter()
        .map(|g| (lambda_star - g.beta) / (2.0 * g.alpha))
        .collect();
    let lambda = vec![lambda_star; n];
    DiscreteRun {
        state: DiscreteState {
            lambda,
            power,
            k: iterations,
            h,
        },
        iterations,
        rows,
    }
}
