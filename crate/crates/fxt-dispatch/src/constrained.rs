//! Capacity-constrained dispatch loop.
//!
//! The unconstrained protocol first finds the shared incremental cost and a
//! balanced dispatch. Generators outside their limits are then pinned,
//! round by round: each round saturates the new violators, re-dispatches
//! the free set, and corrects the shared incremental cost by the ratio of
//! two network averages (the spilled marginal-cost surplus over the free
//! set's aggregate slope), computed distributedly. The saturated set only
//! grows, so the loop runs at most N rounds.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::discrete::{faca_consensus, FacaPlan};
use crate::dynamics::{
    consensus_error, settling_bounds, sgn_mu, simulate, weighted_lambda_mean, Gains, SimConfig,
};
use crate::error::{Error, Result};
use crate::graph::{Topology, TopologySchedule};
use crate::model::GeneratorParams;
use crate::oracle::{kkt_audit, DispatchSolution, KktViolation};
use crate::trace::{DiscreteTraceRow, Trace};

/// Consensus tolerance for the averaging sub-runs.
pub const AVERAGE_CONSENSUS_TOL: f64 = 1e-9;

/// Which generators are pinned, and at which limit.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SaturationState {
    /// All pinned generators.
    pub theta: BTreeSet<usize>,
    /// Subset pinned at p_max; the rest of `theta` sits at p_min.
    pub at_max: BTreeSet<usize>,
}

impl SaturationState {
    /// Pinned power of generator `i`, if pinned.
    pub fn fixed_power(&self, i: usize, params: &[GeneratorParams]) -> Option<f64> {
        if self.at_max.contains(&i) {
            Some(params[i].p_max_value())
        } else if self.theta.contains(&i) {
            Some(params[i].p_min)
        } else {
            None
        }
    }

    /// Adds this round's violators, classifying each by the violated side.
    pub fn absorb(&mut self, omega: &BTreeSet<usize>, power: &[f64], params: &[GeneratorParams]) {
        for &i in omega {
            if power[i] > params[i].p_max_value() {
                self.at_max.insert(i);
            }
            self.theta.insert(i);
        }
    }

    pub fn fixed_powers(&self, params: &[GeneratorParams]) -> Vec<f64> {
        (0..params.len())
            .map(|i| self.fixed_power(i, params).unwrap_or(0.0))
            .collect()
    }
}

/// Generators outside their capacity box that are not yet pinned.
pub fn detect_violations(
    power: &[f64],
    params: &[GeneratorParams],
    theta: &BTreeSet<usize>,
) -> BTreeSet<usize> {
    power
        .iter()
        .enumerate()
        .filter(|&(i, &p)| !theta.contains(&i) && (p < params[i].p_min || p > params[i].p_max_value()))
        .map(|(i, _)| i)
        .collect()
}

/// Dispatch at a given shared incremental cost: free generators follow the
/// marginal-cost inverse, pinned generators hold their recorded limit.
pub fn saturate_and_dispatch(
    lambda: f64,
    params: &[GeneratorParams],
    sat: &SaturationState,
) -> Vec<f64> {
    params
        .iter()
        .enumerate()
        .map(|(i, g)| {
            sat.fixed_power(i, params)
                .unwrap_or((lambda - g.beta) / (2.0 * g.alpha))
        })
        .collect()
}

/// The per-node averaging pair seeding the incremental-cost correction.
///
/// Nodes pinned THIS round carry their scaled marginal-cost surplus at
/// their saturated power; free nodes carry their cost-curve slope
/// reciprocal. Nodes pinned in earlier rounds contribute zero: their
/// surplus at the running incremental cost was already folded in when they
/// entered, and re-summing it would overshoot the correction and cascade
/// the pinning. On the first round (omega = theta) this is exactly the
/// closed-form saturated-set correction.
pub fn consensus_pair_init(
    lambda: f64,
    power: &[f64],
    params: &[GeneratorParams],
    omega: &BTreeSet<usize>,
    sat: &SaturationState,
) -> (Vec<f64>, Vec<f64>) {
    let n = params.len();
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    for (i, g) in params.iter().enumerate() {
        if omega.contains(&i) {
            y[i] = (lambda - 2.0 * g.alpha * power[i] - g.beta) / (2.0 * g.alpha);
        } else if !sat.theta.contains(&i) {
            z[i] = 1.0 / (2.0 * g.alpha);
        }
    }
    (y, z)
}

/// Fixed-time average consensus: integrates the incremental-cost coupling
/// with unit slope (the alpha = 1/2 specialization) until all node values
/// agree to 1e-9, then returns the final values. The node mean is conserved
/// by the pairwise-antisymmetric coupling, so the shared value is the
/// arithmetic mean of the inputs.
///
/// The plain sign is always run with a boundary layer wide enough for the
/// explicit integrator to contract inside it (width ~ p*dt*spectral radius);
/// without it the terminal phase would chatter at O(p*dt) and never meet
/// the tolerance.
pub fn average_consensus_fxt(
    values: &[f64],
    schedule: &TopologySchedule,
    gains: &Gains,
) -> Result<Vec<f64>> {
    let n = values.len();
    assert_eq!(schedule.node_count(), n);
    if n == 1 || consensus_error(values) <= AVERAGE_CONSENSUS_TOL {
        return Ok(values.to_vec());
    }
    // settling bound of the unit-slope specialization, used as the give-up
    // horizon (doubled)
    let half_params: Vec<GeneratorParams> = (0..n)
        .map(|_| GeneratorParams::unconstrained(0.5, 1.0, 0.0))
        .collect();
    let bounds = settling_bounds(&half_params, schedule, gains, 0.0)?;
    let t_limit = 2.0 * bounds.t2;

    let dt = gains.dt;
    let lap_radius = 2.0 * schedule.max_degree() as f64;
    // unit-slope specialization: the effective 2*alpha is 1
    let eps = gains
        .smoothing_eps
        .max(crate::dynamics::stable_layer_width(gains.p, dt, 1.0, lap_radius))
        .max(f64::MIN_POSITIVE);
    let run_gains = Gains {
        smoothing_eps: eps,
        ..*gains
    };

    let mut x = values.to_vec();
    let steps = (t_limit / dt).ceil() as u64;
    for k in 0..=steps {
        let t = k as f64 * dt;
        if consensus_error(&x) <= AVERAGE_CONSENSUS_TOL {
            return Ok(x);
        }
        if k == steps {
            break;
        }
        let topo = schedule.active_topology(t);
        euler_consensus_step(&mut x, topo, &run_gains);
    }
    Err(Error::NotConverged {
        tol: AVERAGE_CONSENSUS_TOL,
        t_limit,
        residual: consensus_error(&x),
    })
}

fn euler_consensus_step(x: &mut [f64], topo: &Topology, gains: &Gains) {
    let dt = gains.dt;
    let mut dx = vec![0.0; x.len()];
    for &(i, j) in topo.edges() {
        let d = x[j] - x[i];
        let w = gains.p
            * (smoothed_sign(d, gains.smoothing_eps)
                + sgn_mu(d, gains.mu1)
                + sgn_mu(d, gains.mu2));
        dx[i] += w;
        dx[j] -= w;
    }
    for (xi, di) in x.iter_mut().zip(dx) {
        *xi += dt * di;
    }
}

fn smoothed_sign(x: f64, eps: f64) -> f64 {
    if eps > 0.0 {
        (x / eps).clamp(-1.0, 1.0)
    } else if x == 0.0 {
        0.0
    } else {
        x.signum()
    }
}

/// One saturation round of the dispatch loop.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Violators newly pinned this round.
    pub omega: BTreeSet<usize>,
    /// Pinned set after absorbing omega.
    pub theta: BTreeSet<usize>,
    pub y_c: f64,
    pub z_c: f64,
    pub lambda: f64,
    pub power: Vec<f64>,
}

/// Outcome of the constrained dispatch loop.
#[derive(Debug, Clone, Serialize)]
pub struct Algorithm1Run {
    pub solution: DispatchSolution,
    pub rounds: Vec<RoundRecord>,
    /// Optimality-condition violations of the returned solution (tolerance
    /// 1e-3); non-empty output flags a discrepancy instead of silently
    /// accepting it.
    pub kkt_violations: Vec<KktViolation>,
    /// Continuous phase-1 trace, when the continuous backend ran.
    #[serde(skip)]
    pub unconstrained_trace: Option<Trace>,
    /// Discrete phase-1 rows, when the discrete backend ran.
    #[serde(skip)]
    pub discrete_rows: Vec<DiscreteTraceRow>,
    /// Discrete phase-1 iteration count.
    pub iterations: Option<usize>,
}

const KKT_AUDIT_TOL: f64 = 1e-3;

fn saturation_loop(
    lambda0: f64,
    power0: Vec<f64>,
    p_tot: f64,
    params: &[GeneratorParams],
    mut average: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<(DispatchSolution, Vec<RoundRecord>, Vec<KktViolation>)> {
    let n = params.len();
    let mut lambda = lambda0;
    let mut power = power0;
    let mut sat = SaturationState::default();
    let mut rounds = Vec::new();

    for round in 1..=n {
        let omega = detect_violations(&power, params, &sat.theta);
        if omega.is_empty() {
            break;
        }
        sat.absorb(&omega, &power, params);
        if sat.theta.len() == n {
            return Err(Error::AllSaturated);
        }
        power = saturate_and_dispatch(lambda, params, &sat);
        let (y0, z0) = consensus_pair_init(lambda, &power, params, &omega, &sat);
        let y_c = mean(&average(&y0)?);
        let z_c = mean(&average(&z0)?);
        if z_c <= 0.0 {
            return Err(Error::AllSaturated);
        }
        lambda += y_c / z_c;
        power = saturate_and_dispatch(lambda, params, &sat);
        rounds.push(RoundRecord {
            round,
            omega,
            theta: sat.theta.clone(),
            y_c,
            z_c,
            lambda,
            power: power.clone(),
        });
    }

    let solution = DispatchSolution {
        lambda_star: lambda,
        p_star: power,
        saturated: sat.theta.clone(),
        at_max: sat.at_max.clone(),
    };
    let violations = kkt_audit(&solution, params, p_tot, KKT_AUDIT_TOL);
    Ok((solution, rounds, violations))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Constrained dispatch with the continuous protocol: phase 1 runs the
/// unconstrained consensus dynamics, then the saturation loop corrects the
/// incremental cost through fixed-time averaging sub-runs.
pub fn algorithm1_continuous(cfg: &SimConfig) -> Result<Algorithm1Run> {
    let trace = simulate(cfg);
    let lambda0 = weighted_lambda_mean(&trace.final_state.lambda, cfg.params);
    let power0 = trace.final_state.power.clone();
    let p_tot = crate::model::total_demand(cfg.loads, trace.final_state.t);
    let (solution, rounds, kkt_violations) =
        saturation_loop(lambda0, power0, p_tot, cfg.params, |v| {
            average_consensus_fxt(v, cfg.schedule, cfg.gains)
        })?;
    Ok(Algorithm1Run {
        solution,
        rounds,
        kkt_violations,
        unconstrained_trace: Some(trace),
        discrete_rows: Vec::new(),
        iterations: None,
    })
}

/// Constrained dispatch with the discrete scheme: phase 1 solves the
/// uncapacitated problem through the finite-step ratio consensus, and the
/// saturation loop averages through the same Laplacian filter bank on the
/// static topology. Every averaging pass costs K iterations, so the whole
/// solve stays within a topology-determined iteration budget.
pub fn algorithm1_discrete(
    params: &[GeneratorParams],
    topology: &Topology,
    power0: Vec<f64>,
    h: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Algorithm1Run> {
    let plan = FacaPlan::for_topology(topology)?;
    let run = crate::discrete::ratio_consensus_solve(&power0, &plan, topology, params, h, tol);
    let p_tot: f64 = run.state.power.iter().sum();
    let lambda0 = weighted_lambda_mean(&run.state.lambda, params);
    let consensus_iters = std::cell::Cell::new(0usize);
    let (solution, rounds, kkt_violations) =
        saturation_loop(lambda0, run.state.power.clone(), p_tot, params, |v| {
            consensus_iters.set(consensus_iters.get() + plan.k());
            Ok(faca_consensus(v, topology, &plan))
        })?;
    let iterations = run.iterations + consensus_iters.get();
    if iterations > max_iters {
        return Err(Error::MaxIterations {
            cap: max_iters,
            residual: consensus_error(&run.state.lambda),
        });
    }
    Ok(Algorithm1Run {
        solution,
        rounds,
        kkt_violations,
        unconstrained_trace: None,
        discrete_rows: run.rows,
        iterations: Some(iterations),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;

    fn clip_params() -> Vec<GeneratorParams> {
        vec![
            GeneratorParams::new(1.0, 0.0, 0.0, 0.0, None),
            GeneratorParams::new(0.5, 0.0, 0.0, 0.0, Some(1.5)),
        ]
    }

    #[test]
    fn detect_violations_cases() {
        let params = vec![
            GeneratorParams::new(1.0, 1.0, 0.0, 0.0, Some(10.0)),
            GeneratorParams::new(1.0, 1.0, 0.0, 2.0, Some(10.0)),
            GeneratorParams::new(1.0, 1.0, 0.0, 0.0, Some(5.0)),
        ];
        // all inside
        let none = detect_violations(&[5.0, 5.0, 5.0], &params, &BTreeSet::new());
        assert!(none.is_empty());
        // above max and below min
        let both = detect_violations(&[11.0, 1.0, 5.0], &params, &BTreeSet::new());
        assert_eq!(both, BTreeSet::from([0, 1]));
        // already pinned generators are excluded
        let theta = BTreeSet::from([0]);
        let rest = detect_violations(&[11.0, 1.0, 5.0], &params, &theta);
        assert_eq!(rest, BTreeSet::from([1]));
    }

    #[test]
    fn saturate_and_dispatch_cases() {
        let params = clip_params();
        let empty = SaturationState::default();
        // no pins: inverse marginal cost
        let p = saturate_and_dispatch(2.0, &params, &empty);
        assert_eq!(p, vec![1.0, 2.0]);

        // gen 1 pinned at max
        let mut sat = SaturationState::default();
        sat.theta.insert(1);
        sat.at_max.insert(1);
        let p = saturate_and_dispatch(3.0, &params, &sat);
        assert_eq!(p, vec![1.5, 1.5]);

        // everything pinned: fixed values verbatim
        let params2 = vec![
            GeneratorParams::new(1.0, 0.0, 0.0, 0.5, Some(2.0)),
            GeneratorParams::new(0.5, 0.0, 0.0, 0.0, Some(1.5)),
        ];
        let mut sat = SaturationState::default();
        sat.theta.insert(0);
        sat.theta.insert(1);
        sat.at_max.insert(1);
        let p = saturate_and_dispatch(99.0, &params2, &sat);
        assert_eq!(p, vec![0.5, 1.5]);
    }

    #[test]
    fn consensus_pair_matches_round_arithmetic() {
        // lambda_tilde = 2, gen 1 pinned at 1.5:
        // y = [0, 0.5], z = [0.5, 0] -> y_c = z_c = 0.25, correction 1.0
        let params = clip_params();
        let mut sat = SaturationState::default();
        sat.theta.insert(1);
        sat.at_max.insert(1);
        let power = saturate_and_dispatch(2.0, &params, &sat);
        let omega = sat.theta.clone();
        let (y, z) = consensus_pair_init(2.0, &power, &params, &omega, &sat);
        assert_eq!(y, vec![0.0, 0.5]);
        assert_eq!(z, vec![0.5, 0.0]);
    }

    #[test]
    fn average_consensus_recovers_means() {
        let gains = Gains::default();
        let k3 = TopologySchedule::static_topology(Topology::complete(3)).unwrap();
        let out = average_consensus_fxt(&[1.0, 2.0, 3.0], &k3, &gains).unwrap();
        for &v in &out {
            assert!((v - 2.0).abs() <= 1e-6, "got {v}");
        }

        let edge = TopologySchedule::static_topology(Topology::path(2)).unwrap();
        let out = average_consensus_fxt(&[0.0, 6.0], &edge, &gains).unwrap();
        for &v in &out {
            assert!((v - 3.0).abs() <= 1e-6, "got {v}");
        }

        // identical inputs return immediately
        let out = average_consensus_fxt(&[4.0, 4.0, 4.0], &k3, &gains).unwrap();
        assert_eq!(out, vec![4.0, 4.0, 4.0]);
    }

    #[test]
    fn average_consensus_conserves_mean_tightly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let gains = Gains::default();
        for _ in 0..10 {
            let n = rng.random_range(2..=7usize);
            let topo = crate::graph::random_connected(n, &mut rng);
            let sched = TopologySchedule::static_topology(topo).unwrap();
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            let mean_in = values.iter().sum::<f64>() / n as f64;
            let out = average_consensus_fxt(&values, &sched, &gains).unwrap();
            let mean_out = out.iter().sum::<f64>() / n as f64;
            let range = values
                .iter()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                - values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            assert!(
                (mean_out - mean_in).abs() <= 1e-9 * range.max(1.0),
                "mean drifted {mean_in} -> {mean_out}"
            );
            for &v in &out {
                assert!((v - mean_in).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn discrete_loop_reproduces_clip_example() {
        // lambda: 2 -> 3 after one round, P = [1.5, 1.5]
        let params = clip_params();
        let topo = Topology::path(2);
        let run = algorithm1_discrete(&params, &topo, vec![1.0, 2.0], 0.1, 1e-9, 100_000).unwrap();
        assert!((run.solution.lambda_star - 3.0).abs() < 1e-6);
        assert!((run.solution.p_star[0] - 1.5).abs() < 1e-6);
        assert!((run.solution.p_star[1] - 1.5).abs() < 1e-6);
        assert_eq!(run.rounds.len(), 1);
        assert!((run.rounds[0].y_c - 0.25).abs() < 1e-9);
        assert!((run.rounds[0].z_c - 0.25).abs() < 1e-9);
        assert!(run.kkt_violations.is_empty());
    }

    #[test]
    fn continuous_loop_reproduces_clip_example() {
        use crate::dynamics::NoiseModel;
        use crate::model::{Assignment, LoadSchedule, SystemState};

        let params = clip_params();
        let schedule = TopologySchedule::static_topology(Topology::path(2)).unwrap();
        let gains = Gains {
            smoothing_eps: crate::dynamics::stable_layer_width(1.0, 1e-4, 2.0, 2.0),
            ..Gains::default()
        };
        let loads = LoadSchedule::constant(vec![1.0, 2.0]);
        let assignment = Assignment { assign: vec![0, 1] };
        let power0 = vec![1.0, 2.0];
        let lambda0: Vec<f64> = power0
            .iter()
            .zip(&params)
            .map(|(&p, g)| 2.0 * g.alpha * p + g.beta)
            .collect();
        let cfg = crate::dynamics::SimConfig {
            params: &params,
            schedule: &schedule,
            gains: &gains,
            noise: &NoiseModel::none(),
            loads: &loads,
            assignment: &assignment,
            initial: SystemState::new(power0, lambda0, 0.0),
            t_end: 30.0,
            tol: 1e-4,
            sample_stride: 1000,
            stop_on_convergence: true,
            settle_after_convergence: 1.0,
        };
        let run = algorithm1_continuous(&cfg).unwrap();
        assert_eq!(run.rounds.len(), 1);
        assert!((run.solution.lambda_star - 3.0).abs() < 1e-3);
        assert!((run.solution.p_star[0] - 1.5).abs() < 1e-3);
        assert!((run.solution.p_star[1] - 1.5).abs() < 1e-3);
        assert!(run.kkt_violations.is_empty());
    }

    #[test]
    fn no_violations_means_zero_rounds() {
        let params = vec![
            GeneratorParams::new(0.5, 1.0, 0.0, 0.0, Some(100.0)),
            GeneratorParams::new(0.5, 1.0, 0.0, 0.0, Some(100.0)),
        ];
        let topo = Topology::path(2);
        let run = algorithm1_discrete(&params, &topo, vec![6.0, 0.0], 0.1, 1e-9, 100_000).unwrap();
        assert!(run.rounds.is_empty());
        assert!(run.solution.saturated.is_empty());
    }
}
