//! Continuous-time consensus dynamics on incremental costs.
//!
//! Each generator runs two coupled update laws: power moves along signed
//! powers of neighbor incremental-cost differences (so the network-wide
//! total is conserved), and the incremental cost chases consistency between
//! the local power and the local marginal cost. Both laws combine a
//! sub-linear and a super-linear signed power, which is what bounds the
//! settling time independently of the initial state.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{lambda2_star, Topology, TopologySchedule};
use crate::model::{
    event_deltas, sum_state_power, total_demand, Assignment, GeneratorParams, LoadSchedule,
    SystemState,
};
use crate::trace::{Trace, TraceRow};

/// Protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// Consensus gain multiplying the neighbor coupling.
    pub p: f64,
    /// Sub-linear consensus exponent, in (0, 1).
    pub mu1: f64,
    /// Super-linear consensus exponent, > 1.
    pub mu2: f64,
    /// Sub-linear consistency exponent, in (0, 1).
    pub nu1: f64,
    /// Super-linear consistency exponent, > 1.
    pub nu2: f64,
    /// Integrator step, seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Boundary-layer width replacing the plain sign in the consensus
    /// coupling by a saturated ramp; 0 keeps the exact sign.
    #[serde(default)]
    pub smoothing_eps: f64,
}

fn default_dt() -> f64 {
    1e-4
}

impl Default for Gains {
    fn default() -> Self {
        Gains {
            p: 1.0,
            mu1: 0.8,
            mu2: 1.2,
            nu1: 0.8,
            nu2: 1.2,
            dt: 1e-4,
            smoothing_eps: 0.0,
        }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0) {
            return Err(Error::Validation(format!("gain p must be > 0, got {}", self.p)));
        }
        if !(self.mu1 > 0.0 && self.mu1 < 1.0) {
            return Err(Error::Validation(format!("mu1 must lie in (0,1), got {}", self.mu1)));
        }
        if !(self.mu2 > 1.0) {
            return Err(Error::Validation(format!("mu2 must be > 1, got {}", self.mu2)));
        }
        if !(self.nu1 > 0.0 && self.nu1 < 1.0) {
            return Err(Error::Validation(format!("nu1 must lie in (0,1), got {}", self.nu1)));
        }
        if !(self.nu2 > 1.0) {
            return Err(Error::Validation(format!("nu2 must be > 1, got {}", self.nu2)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Validation(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.smoothing_eps < 0.0 {
            return Err(Error::Validation("smoothing_eps must be >= 0".into()));
        }
        Ok(())
    }
}

/// Additive per-bus disturbance model. Samples are zero-mean and bounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Uniform {
        bound: f64,
    },
    TruncatedGaussian {
        sigma: f64,
        /// Hard bound on |sample|; defaults to 3*sigma.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            kind: NoiseKind::None,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel::default()
    }

    pub fn uniform(bound: f64, seed: u64) -> Self {
        NoiseModel {
            kind: NoiseKind::Uniform { bound },
            seed,
        }
    }

    pub fn truncated_gaussian(sigma: f64, seed: u64) -> Self {
        NoiseModel {
            kind: NoiseKind::TruncatedGaussian { sigma, clip: None },
            seed,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, NoiseKind::None)
    }

    /// Hard bound on |omega_i|.
    pub fn clip_bound(&self) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Uniform { bound } => bound,
            NoiseKind::TruncatedGaussian { sigma, clip } => clip.unwrap_or(3.0 * sigma),
        }
    }

    fn sampler(&self) -> NoiseSampler {
        NoiseSampler {
            kind: self.kind,
            rng: rand::SeedableRng::seed_from_u64(self.seed),
        }
    }
}

struct NoiseSampler {
    kind: NoiseKind,
    rng: ChaCha8Rng,
}

impl NoiseSampler {
    fn sample(&mut self) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Uniform { bound } => self.rng.random_range(-bound..=bound),
            NoiseKind::TruncatedGaussian { sigma, clip } => {
                let clip = clip.unwrap_or(3.0 * sigma);
                loop {
                    let x: f64 = self.rng.sample(StandardNormal);
                    let x = sigma * x;
                    if x.abs() <= clip {
                        return x;
                    }
                }
            }
        }
    }

    fn fill(&mut self, omega: &mut [f64]) {
        for w in omega.iter_mut() {
            *w = self.sample();
        }
    }
}

/// Signed power: |x|^mu * sign(x). Odd in x, zero at zero.
pub fn sgn_mu(x: f64, mu: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.abs().powf(mu) * x.signum()
    }
}

fn sign_term(x: f64, eps: f64) -> f64 {
    if eps > 0.0 {
        (x / eps).clamp(-1.0, 1.0)
    } else if x == 0.0 {
        0.0
    } else {
        x.signum()
    }
}

/// Neighbor coupling: plain sign (optionally smoothed) plus the two signed
/// powers, evaluated at lambda_j - lambda_i.
fn coupling(d: f64, gains: &Gains) -> f64 {
    sign_term(d, gains.smoothing_eps) + sgn_mu(d, gains.mu1) + sgn_mu(d, gains.mu2)
}

/// Time derivatives of (P, lambda) at the given state.
///
/// `omega` is this step's disturbance sample, one entry per generator.
/// Returns (dP/dt, dlambda/dt). With the disturbance off, the dP entries
/// sum to zero by pairwise antisymmetry over the undirected edges.
pub fn rhs(
    state: &SystemState,
    topology: &Topology,
    params: &[GeneratorParams],
    gains: &Gains,
    omega: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = state.len();
    assert_eq!(topology.node_count(), n);
    let mut dp = vec![0.0; n];
    for &(i, j) in topology.edges() {
        let w = gains.p * coupling(state.lambda[j] - state.lambda[i], gains);
        dp[i] += w;
        dp[j] -= w;
    }
    for i in 0..n {
        dp[i] += omega[i];
    }
    let mut dlambda = vec![0.0; n];
    for i in 0..n {
        let g = &params[i];
        let e = state.power[i] - (state.lambda[i] - g.beta) / (2.0 * g.alpha);
        dlambda[i] = 2.0 * g.alpha * (dp[i] + sgn_mu(e, gains.nu1) + sgn_mu(e, gains.nu2));
    }
    (dp, dlambda)
}

/// Largest power-consistency residual max_i |P_i - (lambda_i - beta_i)/(2 alpha_i)|.
pub fn max_consistency_error(state: &SystemState, params: &[GeneratorParams]) -> f64 {
    state
        .power
        .iter()
        .zip(&state.lambda)
        .zip(params)
        .map(|((&p, &l), g)| (p - (l - g.beta) / (2.0 * g.alpha)).abs())
        .fold(0.0, f64::max)
}

/// Largest pairwise incremental-cost disagreement max_{ij} |lambda_i - lambda_j|.
pub fn consensus_error(lambda: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in lambda {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if lambda.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Disagreement Lyapunov value: 0.5 * sum (1/2alpha_i) (lambda_i - lambda_bar)^2
/// with lambda_bar the 1/(2alpha)-weighted mean. Zero iff all lambda equal.
pub fn lyapunov_v(state: &SystemState, params: &[GeneratorParams]) -> f64 {
    let inv_sum: f64 = params.iter().map(|g| 1.0 / (2.0 * g.alpha)).sum();
    let gamma = 1.0 / inv_sum;
    let bar: f64 = gamma
        * state
            .lambda
            .iter()
            .zip(params)
            .map(|(&l, g)| l / (2.0 * g.alpha))
            .sum::<f64>();
    0.5 * state
        .lambda
        .iter()
        .zip(params)
        .map(|(&l, g)| (l - bar).powi(2) / (2.0 * g.alpha))
        .sum::<f64>()
}

/// The 1/(2alpha)-weighted mean of the incremental costs; conserved by the
/// coupling terms in the disturbance-free protocol.
pub fn weighted_lambda_mean(lambda: &[f64], params: &[GeneratorParams]) -> f64 {
    let inv_sum: f64 = params.iter().map(|g| 1.0 / (2.0 * g.alpha)).sum();
    lambda
        .iter()
        .zip(params)
        .map(|(&l, g)| l / (2.0 * g.alpha))
        .sum::<f64>()
        / inv_sum
}

/// Settling-time and gain bounds for the protocol.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SettlingBounds {
    /// Bound on the consistency phase (power aligns with incremental cost).
    pub t1: f64,
    /// Bound on the consensus phase after the consistency phase.
    pub t2: f64,
    /// Sub-linear consensus decay coefficient.
    pub c1: f64,
    /// Super-linear consensus decay coefficient.
    pub c2: f64,
    /// Smallest gain p that rejects disturbances of magnitude `delta`.
    pub p_min_gain: f64,
    /// Disturbance magnitude the gain bound was computed for.
    pub delta: f64,
    /// Worst-case algebraic connectivity used in the coefficients.
    pub lambda2: f64,
}

impl SettlingBounds {
    pub fn total(&self) -> f64 {
        self.t1 + self.t2
    }
}

/// Boundary-layer width wide enough that one explicit-Euler step cannot
/// carry a pairwise difference across the layer: the worst per-step kick
/// on a difference is dt * p * two_alpha_max * spectral radius, and inside
/// the layer the same quantity over eps must stay below one for monotone
/// contraction. The factor 3 leaves headroom for the power terms and
/// bounded disturbances.
///
/// Narrower layers admit period-2 chatter cycles parked just outside the
/// linear region, which hold the consensus error at O(p*dt*degree)
/// indefinitely.
pub fn stable_layer_width(p: f64, dt: f64, two_alpha_max: f64, lap_radius: f64) -> f64 {
    3.0 * p * dt * two_alpha_max * lap_radius
}

/// Upper bound on the effective disturbance magnitude for a noise model:
/// the raw bound inflated by the worst-case weighted-mean feedback term.
pub fn delta_bound(noise: &NoiseModel, params: &[GeneratorParams]) -> f64 {
    let w = noise.clip_bound();
    if w == 0.0 {
        return 0.0;
    }
    let inv_sum: f64 = params.iter().map(|g| 1.0 / (2.0 * g.alpha)).sum();
    let gamma = 1.0 / inv_sum;
    let alpha_min = params.iter().map(|g| g.alpha).fold(f64::INFINITY, f64::min);
    w * (1.0 + gamma / (2.0 * alpha_min))
}

/// Evaluates the settling-time bounds and the minimum robust gain for a
/// given parameter set, switching schedule, and disturbance magnitude.
pub fn settling_bounds(
    params: &[GeneratorParams],
    schedule: &TopologySchedule,
    gains: &Gains,
    delta: f64,
) -> Result<SettlingBounds> {
    gains.validate()?;
    if delta < 0.0 {
        return Err(Error::Validation("delta must be >= 0".into()));
    }
    let n = params.len() as f64;
    let t1 = 2.0 / (2f64.powf((1.0 + gains.nu1) / 2.0) * (1.0 - gains.nu1))
        + 2.0 * n.powf((gains.nu2 - 1.0) / 2.0)
            / (2f64.powf((1.0 + gains.nu2) / 2.0) * (gains.nu2 - 1.0));
    if params.len() == 1 {
        // single bus: consensus is vacuous
        return Ok(SettlingBounds {
            t1,
            t2: 0.0,
            c1: f64::INFINITY,
            c2: f64::INFINITY,
            p_min_gain: 0.0,
            delta,
            lambda2: f64::INFINITY,
        });
    }
    let lambda2 = lambda2_star(schedule)?;
    let alpha_min = params.iter().map(|g| g.alpha).fold(f64::INFINITY, f64::min);
    let alpha_max = params.iter().map(|g| g.alpha).fold(0.0, f64::max);
    let base = lambda2 * alpha_min;
    let c1 = gains.p * 2f64.powf(gains.mu1) * base.powf((1.0 + gains.mu1) / 2.0);
    let c2 = gains.p * 2f64.powf(gains.mu2) / n.powf(gains.mu2 - 1.0)
        * base.powf((1.0 + gains.mu2) / 2.0);
    let t2 = 2.0 / (c1 * (1.0 - gains.mu1)) + 2.0 / (c2 * (gains.mu2 - 1.0));
    let p_min_gain = 2.0 * delta * (n * alpha_max / (lambda2 * alpha_min)).sqrt();
    Ok(SettlingBounds {
        t1,
        t2,
        c1,
        c2,
        p_min_gain,
        delta,
        lambda2,
    })
}

/// Everything one integration run needs.
pub struct SimConfig<'a> {
    pub params: &'a [GeneratorParams],
    pub schedule: &'a TopologySchedule,
    pub gains: &'a Gains,
    pub noise: &'a NoiseModel,
    pub loads: &'a LoadSchedule,
    pub assignment: &'a Assignment,
    pub initial: SystemState,
    pub t_end: f64,
    /// Convergence tolerance on both the consensus error and the
    /// consistency residual.
    pub tol: f64,
    /// Record every `sample_stride`-th step in the trace.
    pub sample_stride: usize,
    /// Stop as soon as convergence is detected and no load event remains.
    pub stop_on_convergence: bool,
    /// Extra time to keep integrating after detection, letting the
    /// consistency residual die out completely so the final state sits on
    /// the equilibrium rather than just inside the tolerance band.
    pub settle_after_convergence: f64,
}

/// Time for the consistency residual to vanish from level `e0`:
/// the decay integral of the two signed powers is bounded by
/// e0^(1-nu1)/(1-nu1) + margin from the super-linear term.
pub fn settle_window(tol: f64, nu1: f64) -> f64 {
    1.2 * tol.powf(1.0 - nu1) / (1.0 - nu1)
}

/// Runs the protocol with fixed-step explicit Euler integration.
///
/// The right-hand side is discontinuous, so a high-order smooth integrator
/// buys nothing; the fixed step keeps the power total conserved to rounding
/// and makes runs bit-reproducible for a given seed. Load events landing
/// inside a step are applied at the step end by adding each load's delta to
/// its assigned generator. Convergence (both residuals at or below `tol`)
/// is checked every step, not just at sample points.
pub fn simulate(cfg: &SimConfig) -> Trace {
    let n = cfg.params.len();
    let dt = cfg.gains.dt;
    let gains = cfg.gains;
    let mut state = cfg.initial.clone();
    assert_eq!(state.len(), n);

    let mut sampler = cfg.noise.sampler();
    let mut omega = vec![0.0; n];

    let event_times: Vec<f64> = cfg.loads.events.iter().map(|e| e.t).collect();
    let mut next_event = cfg
        .loads
        .events
        .iter()
        .position(|e| e.t > state.t)
        .unwrap_or(cfg.loads.events.len());
    let last_event_time = event_times.last().copied().unwrap_or(0.0);

    let mut trace = Trace::new(n, cfg.tol, event_times.clone());
    let steps = ((cfg.t_end - state.t) / dt).ceil().max(0.0) as u64;
    let t0 = state.t;
    let stride = cfg.sample_stride.max(1);

    let mut dp = vec![0.0; n];
    let mut pending_reentry: Vec<usize> = Vec::new();

    let record = |trace: &mut Trace, state: &SystemState, force: bool, step_idx: u64| {
        if force || step_idx % stride as u64 == 0 {
            let p_tot = total_demand(cfg.loads, state.t);
            trace.rows.push(TraceRow {
                t: state.t,
                lambda: state.lambda.clone(),
                power: state.power.clone(),
                consensus_error: consensus_error(&state.lambda),
                balance_residual: (sum_state_power(&state.power) - p_tot).abs(),
                lyapunov: lyapunov_v(state, cfg.params),
            });
        }
    };

    for k in 0..=steps {
        let t = t0 + k as f64 * dt;
        state.t = t;

        // metrics and detection at the current state
        let ce = consensus_error(&state.lambda);
        let me = max_consistency_error(&state, cfg.params);
        let p_tot_now = total_demand(cfg.loads, t);
        let residual = (sum_state_power(&state.power) - p_tot_now).abs();
        trace.max_balance_residual = trace.max_balance_residual.max(residual);
        if ce <= cfg.tol && me <= cfg.tol && trace.first_convergence.is_none() {
            trace.first_convergence = Some(t);
        }
        if ce <= cfg.tol {
            for &ev in &pending_reentry {
                trace.consensus_reentry[ev] = Some(t);
            }
            pending_reentry.clear();
        }

        record(&mut trace, &state, false, k);

        // the settle window counts from the latest of first convergence and
        // the last load event, both of which leave residuals to die out
        let done = k == steps
            || (cfg.stop_on_convergence
                && pending_reentry.is_empty()
                && trace.first_convergence.is_some_and(|tc| {
                    t >= tc.max(last_event_time) + cfg.settle_after_convergence
                }));
        if done {
            record(&mut trace, &state, true, k);
            break;
        }

        // one explicit Euler step under the active topology
        let topo = cfg.schedule.active_topology(t);
        dp.iter_mut().for_each(|v| *v = 0.0);
        for &(i, j) in topo.edges() {
            let w = gains.p * coupling(state.lambda[j] - state.lambda[i], gains);
            dp[i] += w;
            dp[j] -= w;
        }
        if !cfg.noise.is_none() {
            sampler.fill(&mut omega);
            for i in 0..n {
                dp[i] += omega[i];
            }
        }
        for i in 0..n {
            let g = &cfg.params[i];
            let e = state.power[i] - (state.lambda[i] - g.beta) / (2.0 * g.alpha);
            state.lambda[i] +=
                dt * 2.0 * g.alpha * (dp[i] + sgn_mu(e, gains.nu1) + sgn_mu(e, gains.nu2));
            state.power[i] += dt * dp[i];
        }

        // load events inside (t, t+dt] fire at the step end
        let t_next = t0 + (k + 1) as f64 * dt;
        while next_event < cfg.loads.events.len() && cfg.loads.events[next_event].t <= t_next {
            let old = if next_event == 0 {
                cfg.loads.base.clone()
            } else {
                cfg.loads.events[next_event - 1].demands.clone()
            };
            let deltas = event_deltas(
                &old,
                &cfg.loads.events[next_event].demands,
                cfg.assignment,
                n,
            );
            for i in 0..n {
                state.power[i] += deltas[i];
            }
            pending_reentry.push(next_event);
            next_event += 1;
        }
    }

    trace.final_state = state;
    trace
}

/// Convenience wrapper: one Euler step as a pure function, including event
/// application, with the disturbance sampled from the model.
pub fn step(
    state: &SystemState,
    schedule: &TopologySchedule,
    params: &[GeneratorParams],
    gains: &Gains,
    noise: &NoiseModel,
    loads: &LoadSchedule,
    assignment: &Assignment,
) -> SystemState {
    let n = state.len();
    let mut next = state.clone();
    let topo = schedule.active_topology(state.t);
    let mut omega = vec![0.0; n];
    if !noise.is_none() {
        noise.sampler().fill(&mut omega);
    }
    let (dp, dlambda) = rhs(state, topo, params, gains, &omega);
    for i in 0..n {
        next.power[i] += gains.dt * dp[i];
        next.lambda[i] += gains.dt * dlambda[i];
    }
    next.t = state.t + gains.dt;
    for (idx, ev) in loads.events.iter().enumerate() {
        if ev.t > state.t && ev.t <= next.t {
            let old = if idx == 0 {
                loads.base.clone()
            } else {
                loads.events[idx - 1].demands.clone()
            };
            let deltas = event_deltas(&old, &ev.demands, assignment, n);
            for i in 0..n {
                next.power[i] += deltas[i];
            }
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TopologySchedule;
    use crate::model::LoadSchedule;

    fn two_gen_params() -> Vec<GeneratorParams> {
        vec![
            GeneratorParams::unconstrained(0.5, 0.0, 0.0),
            GeneratorParams::unconstrained(0.5, 0.0, 0.0),
        ]
    }

    fn edge_schedule() -> TopologySchedule {
        TopologySchedule::static_topology(Topology::from_edges(2, &[(0, 1)]).unwrap()).unwrap()
    }

    #[test]
    fn sgn_mu_examples() {
        assert_eq!(sgn_mu(4.0, 0.5), 2.0);
        assert_eq!(sgn_mu(-3.0, 2.0), -9.0);
        assert_eq!(sgn_mu(0.0, 0.7), 0.0);
        assert_eq!(sgn_mu(-0.0, 1.3), 0.0);
    }

    #[test]
    fn sgn_mu_is_odd() {
        for &x in &[0.1, 1.0, 7.5, 1234.5] {
            for &mu in &[0.3, 0.8, 1.2, 2.0] {
                assert_eq!(sgn_mu(-x, mu), -sgn_mu(x, mu));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn sgn_mu_odd_and_sign_preserving(
            x in -1e6f64..1e6,
            mu in 0.05f64..4.0,
        ) {
            let y = sgn_mu(x, mu);
            proptest::prop_assert_eq!(sgn_mu(-x, mu), -y);
            proptest::prop_assert!(y * x >= 0.0);
            proptest::prop_assert_eq!(y.abs(), x.abs().powf(mu));
        }

        #[test]
        fn smoothed_sign_is_odd_and_bounded(
            x in -1e3f64..1e3,
            eps in 0.0f64..10.0,
        ) {
            let y = sign_term(x, eps);
            proptest::prop_assert!((-1.0..=1.0).contains(&y));
            proptest::prop_assert_eq!(sign_term(-x, eps), -y);
        }
    }

    #[test]
    fn rhs_zero_at_equilibrium() {
        let params = two_gen_params();
        let topo = Topology::from_edges(2, &[(0, 1)]).unwrap();
        let gains = Gains::default();
        // lambda equal, e = 0: P_i = lambda/(2 alpha) = 3/1 = 3
        let state = SystemState::new(vec![3.0, 3.0], vec![3.0, 3.0], 0.0);
        let (dp, dl) = rhs(&state, &topo, &params, &gains, &[0.0, 0.0]);
        assert_eq!(dp, vec![0.0, 0.0]);
        assert_eq!(dl, vec![0.0, 0.0]);
    }

    #[test]
    fn rhs_hand_evaluated_two_bus() {
        // lambda = [0, 1], e-consistent, p = 1, mu1 = 0.5, mu2 = 2:
        // coupling(1) = 1 + 1 + 1 = 3
        let params = two_gen_params();
        let topo = Topology::from_edges(2, &[(0, 1)]).unwrap();
        let gains = Gains {
            mu1: 0.5,
            mu2: 2.0,
            ..Gains::default()
        };
        let state = SystemState::new(vec![0.0, 1.0], vec![0.0, 1.0], 0.0);
        let (dp, _) = rhs(&state, &topo, &params, &gains, &[0.0, 0.0]);
        assert_eq!(dp[0], 3.0);
        assert_eq!(dp[1], -3.0);
    }

    #[test]
    fn rhs_power_change_sums_to_zero() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(2..=8usize);
            let topo = crate::graph::random_connected(n, &mut rng);
            let params: Vec<GeneratorParams> = (0..n)
                .map(|_| {
                    GeneratorParams::unconstrained(
                        rng.random_range(0.1..2.0),
                        rng.random_range(0.0..10.0),
                        0.0,
                    )
                })
                .collect();
            let state = SystemState::new(
                (0..n).map(|_| rng.random_range(-50.0..50.0)).collect(),
                (0..n).map(|_| rng.random_range(-100.0..100.0)).collect(),
                0.0,
            );
            let (dp, _) = rhs(&state, &topo, &params, &Gains::default(), &vec![0.0; n]);
            let total: f64 = dp.iter().sum();
            let scale: f64 = dp.iter().map(|d| d.abs()).sum::<f64>().max(1.0);
            assert!(total.abs() <= 1e-12 * scale, "sum {total} at scale {scale}");
        }
    }

    #[test]
    fn step_advances_euler_arithmetic() {
        let params = two_gen_params();
        let sched = edge_schedule();
        let gains = Gains {
            mu1: 0.5,
            mu2: 2.0,
            dt: 0.01,
            ..Gains::default()
        };
        let loads = LoadSchedule::constant(vec![1.0]);
        let assign = Assignment { assign: vec![0] };
        let state = SystemState::new(vec![0.0, 1.0], vec![0.0, 1.0], 0.0);
        let next = step(
            &state,
            &sched,
            &params,
            &gains,
            &NoiseModel::none(),
            &loads,
            &assign,
        );
        assert!((next.power[0] - 0.03).abs() < 1e-15);
        assert!((next.power[1] - (1.0 - 0.03)).abs() < 1e-15);
        assert!((next.t - 0.01).abs() < 1e-15);

        // equilibrium stays put except for time
        let eq = SystemState::new(vec![3.0, 3.0], vec![3.0, 3.0], 0.0);
        let next = step(
            &eq,
            &sched,
            &params,
            &gains,
            &NoiseModel::none(),
            &LoadSchedule::constant(vec![6.0]),
            &assign,
        );
        assert_eq!(next.power, eq.power);
        assert_eq!(next.lambda, eq.lambda);
        assert!((next.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_examples() {
        let params = two_gen_params();
        // consensus state
        let state = SystemState::new(vec![0.0, 0.0], vec![4.0, 4.0], 0.0);
        assert_eq!(lyapunov_v(&state, &params), 0.0);

        // alpha = 0.5, lambda = [0, 2]: weighted mean 1, V = 0.5*(1+1) = 1
        let state = SystemState::new(vec![0.0, 0.0], vec![0.0, 2.0], 0.0);
        assert!((lyapunov_v(&state, &params) - 1.0).abs() < 1e-12);

        // translation invariance
        let shifted = SystemState::new(vec![0.0, 0.0], vec![10.0, 12.0], 0.0);
        assert!((lyapunov_v(&shifted, &params) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn settling_bound_t1_pinned_value() {
        // nu1 = 0.8, nu2 = 1.2, N = 7:
        // T1 = 2/(2^0.9 * 0.2) + 2*7^0.1/(2^1.1 * 0.2) = 11.02615523...
        let params: Vec<GeneratorParams> = (0..7)
            .map(|_| GeneratorParams::unconstrained(1.0, 1.0, 0.0))
            .collect();
        let sched =
            TopologySchedule::static_topology(Topology::complete(7)).unwrap();
        let b = settling_bounds(&params, &sched, &Gains::default(), 0.0).unwrap();
        assert!((b.t1 - 11.026175221034954).abs() < 1e-9, "T1 = {}", b.t1);
        // delta = 0 admits any positive gain
        assert_eq!(b.p_min_gain, 0.0);
    }

    #[test]
    fn doubling_gain_halves_t2() {
        let params: Vec<GeneratorParams> = (0..5)
            .map(|i| GeneratorParams::unconstrained(0.3 + 0.1 * i as f64, 1.0, 0.0))
            .collect();
        let sched = TopologySchedule::static_topology(Topology::complete(5)).unwrap();
        let g1 = Gains::default();
        let g2 = Gains {
            p: 2.0,
            ..Gains::default()
        };
        let b1 = settling_bounds(&params, &sched, &g1, 0.0).unwrap();
        let b2 = settling_bounds(&params, &sched, &g2, 0.0).unwrap();
        assert!((b2.t2 - b1.t2 / 2.0).abs() < 1e-12 * b1.t2);
    }

    #[test]
    fn single_bus_bounds_are_finite() {
        let params = vec![GeneratorParams::unconstrained(1.0, 2.0, 0.0)];
        let sched =
            TopologySchedule::static_topology(Topology::from_edges(1, &[]).unwrap()).unwrap();
        let b = settling_bounds(&params, &sched, &Gains::default(), 0.5).unwrap();
        assert!(b.t1.is_finite());
        assert_eq!(b.t2, 0.0);
        assert_eq!(b.p_min_gain, 0.0);
    }

    #[test]
    fn noise_samples_respect_bounds() {
        let models = [
            NoiseModel::uniform(0.3, 9),
            NoiseModel::truncated_gaussian(0.1, 9),
        ];
        for model in models {
            let mut sampler = model.sampler();
            let clip = model.clip_bound();
            let mut sum = 0.0;
            const N: usize = 20000;
            for _ in 0..N {
                let x = sampler.sample();
                assert!(x.abs() <= clip, "sample {x} beyond clip {clip}");
                sum += x;
            }
            // empirical mean within 5 standard errors of zero
            let se = clip / (N as f64).sqrt();
            assert!(
                (sum / N as f64).abs() <= 5.0 * se,
                "mean {} vs se {se}",
                sum / N as f64
            );
        }
    }
}
