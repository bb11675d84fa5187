//! Runnable experiment descriptions: the JSON schema the CLI consumes,
//! canned case studies, and a seeded random-scenario generator for the
//! property suites.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constrained::{algorithm1_continuous, algorithm1_discrete, Algorithm1Run};
use crate::discrete::{default_max_iters, FacaPlan};
use crate::dynamics::{
    delta_bound, settling_bounds, simulate, Gains, NoiseModel, SettlingBounds, SimConfig,
};
use crate::error::{Error, Result};
use crate::graph::{random_connected, Topology, TopologySchedule};
use crate::model::{
    case30, case57, check_feasible, initial_dispatch, load_case, total_demand, Assignment, Case,
    LoadEvent, LoadSchedule, SystemState,
};
use crate::oracle::{constrained_optimum, unconstrained_optimum, DispatchSolution};
use crate::trace::{RunSummary, Trace};

/// Case data source: a path, a builtin name (`case30`, `case57`), or the
/// case object inlined into the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CaseRef {
    Name(String),
    Inline(Case),
}

impl CaseRef {
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<Case> {
        match self {
            CaseRef::Inline(case) => {
                case.validate()?;
                Ok(case.clone())
            }
            CaseRef::Name(name) => match name.as_str() {
                "case30" => Ok(case30()),
                "case57" => Ok(case57()),
                path => {
                    let mut candidate = std::path::PathBuf::from(path);
                    if candidate.is_relative() {
                        if let Some(base) = base_dir {
                            let joined = base.join(&candidate);
                            if joined.exists() {
                                candidate = joined;
                            }
                        }
                    }
                    if !candidate.exists() {
                        return Err(Error::MissingCase(path.to_string()));
                    }
                    load_case(candidate)
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unconstrained,
    Constrained,
    Discrete,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Unconstrained => write!(f, "unconstrained"),
            Mode::Constrained => write!(f, "constrained"),
            Mode::Discrete => write!(f, "discrete"),
        }
    }
}

/// Optional explicit starting point; anything omitted falls back to the
/// load-derived dispatch and the consistent incremental cost.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Init {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
}

fn default_tol() -> f64 {
    1e-3
}

fn default_h() -> f64 {
    0.1
}

/// A complete experiment description, serializable to JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub case: CaseRef,
    pub topology_schedule: TopologySchedule,
    #[serde(default)]
    pub gains: Gains,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Overrides the case's default loads when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loads: Option<LoadSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<usize>>,
    pub t_end: f64,
    /// Overrides `gains.dt` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub mode: Mode,
    /// Convergence tolerance on consensus error and consistency residual.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Discrete-mode step parameter.
    #[serde(default = "default_h")]
    pub h: f64,
    /// Discrete-mode iteration cap (None = derived from h and tol).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    /// Starting points to run (empty = one default start).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initializations: Vec<Init>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_stride: Option<usize>,
}

impl Scenario {
    pub fn from_json(text: &str, origin: &str) -> Result<Scenario> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            detail: e.to_string(),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Validates cross-references and materializes case data.
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<ResolvedScenario> {
        let case = self.case.resolve(base_dir)?;
        let mut gains = self.gains;
        if let Some(dt) = self.dt {
            gains.dt = dt;
        }
        gains.validate()?;
        let loads = match &self.loads {
            Some(l) => l.clone(),
            None => LoadSchedule::constant(case.loads.clone()),
        };
        loads.validate()?;
        let assignment = match &self.assignment {
            Some(a) => Assignment { assign: a.clone() },
            None => match &case.assignment {
                Some(a) if self.loads.is_none() => Assignment { assign: a.clone() },
                _ => Assignment::round_robin(loads.load_count(), case.gen_count()),
            },
        };
        assignment.validate(loads.load_count(), case.gen_count())?;
        if self.topology_schedule.node_count() != case.gen_count() {
            return Err(Error::Validation(format!(
                "schedule has {} nodes but the case has {} generators",
                self.topology_schedule.node_count(),
                case.gen_count()
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Validation("tol must be > 0".into()));
        }
        if self.mode == Mode::Discrete {
            if !(self.h > 0.0) {
                return Err(Error::Validation("h must be > 0".into()));
            }
            if !self.topology_schedule.is_static() {
                return Err(Error::Validation(
                    "discrete mode requires a static topology".into(),
                ));
            }
            if !self.noise.is_none() {
                return Err(Error::Validation(
                    "discrete mode does not model disturbances".into(),
                ));
            }
        }
        // capacity feasibility at the base demand and after every event
        if self.mode != Mode::Unconstrained {
            for p_tot in loads.totals() {
                check_feasible(&case.generators, p_tot)?;
            }
        }
        let mut noise = self.noise;
        if noise.seed == 0 {
            noise.seed = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        }
        Ok(ResolvedScenario {
            scenario: self.clone(),
            case,
            gains,
            noise,
            loads,
            assignment,
        })
    }
}

/// A scenario with its case data loaded and all defaults applied.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub scenario: Scenario,
    pub case: Case,
    pub gains: Gains,
    pub noise: NoiseModel,
    pub loads: LoadSchedule,
    pub assignment: Assignment,
}

impl ResolvedScenario {
    pub fn gen_count(&self) -> usize {
        self.case.gen_count()
    }

    /// Starting state for one initialization entry.
    pub fn initial_state(&self, init: &Init) -> Result<SystemState> {
        let n = self.gen_count();
        let power = match &init.power {
            Some(p) => {
                if p.len() != n {
                    return Err(Error::Validation(format!(
                        "initial power has {} entries, expected {n}",
                        p.len()
                    )));
                }
                p.clone()
            }
            None => initial_dispatch(&self.loads, &self.assignment, n),
        };
        let lambda = match &init.lambda {
            Some(l) => {
                if l.len() != n {
                    return Err(Error::Validation(format!(
                        "initial lambda has {} entries, expected {n}",
                        l.len()
                    )));
                }
                l.clone()
            }
            None => power
                .iter()
                .zip(&self.case.generators)
                .map(|(&p, g)| 2.0 * g.alpha * p + g.beta)
                .collect(),
        };
        Ok(SystemState::new(power, lambda, 0.0))
    }

    pub fn initializations(&self) -> Vec<Init> {
        if self.scenario.initializations.is_empty() {
            vec![Init::default()]
        } else {
            self.scenario.initializations.clone()
        }
    }

    /// Settling bounds with the disturbance magnitude taken from the noise
    /// model.
    pub fn bounds(&self) -> Result<SettlingBounds> {
        let delta = delta_bound(&self.noise, &self.case.generators);
        settling_bounds(
            &self.case.generators,
            &self.scenario.topology_schedule,
            &self.gains,
            delta,
        )
    }

    pub fn sim_config<'a>(&'a self, initial: SystemState, stop_on_convergence: bool) -> SimConfig<'a> {
        SimConfig {
            params: &self.case.generators,
            schedule: &self.scenario.topology_schedule,
            gains: &self.gains,
            noise: &self.noise,
            loads: &self.loads,
            assignment: &self.assignment,
            initial,
            t_end: self.scenario.t_end,
            tol: self.scenario.tol,
            sample_stride: self.scenario.sample_stride.unwrap_or_else(|| {
                let steps = (self.scenario.t_end / self.gains.dt).ceil() as usize;
                (steps / 2000).max(1)
            }),
            stop_on_convergence,
            settle_after_convergence: self.settle_window(),
        }
    }

    /// Residual-extinction window: tolerance-level decay plus, when load
    /// events fire, the decay of the largest per-generator jolt they cause.
    fn settle_window(&self) -> f64 {
        let mut settle = crate::dynamics::settle_window(self.scenario.tol, self.gains.nu1);
        let mut max_jolt: f64 = 0.0;
        let mut prev = self.loads.base.clone();
        for ev in &self.loads.events {
            let deltas = crate::model::event_deltas(
                &prev,
                &ev.demands,
                &self.assignment,
                self.gen_count(),
            );
            for d in deltas {
                max_jolt = max_jolt.max(d.abs());
            }
            prev = ev.demands.clone();
        }
        if max_jolt > 0.0 {
            settle += crate::dynamics::settle_window(max_jolt, self.gains.nu1);
        }
        settle
    }

    /// Final total demand (after all events).
    pub fn final_demand(&self) -> f64 {
        total_demand(&self.loads, f64::INFINITY)
    }

    /// Reference solution for the final demand, honoring limits except in
    /// unconstrained mode.
    pub fn oracle(&self) -> Result<DispatchSolution> {
        let p_tot = self.final_demand();
        match self.scenario.mode {
            Mode::Unconstrained => Ok(unconstrained_optimum(&self.case.generators, p_tot)),
            _ => constrained_optimum(&self.case.generators, p_tot),
        }
    }

    /// Runs the scenario per its mode with one initialization.
    pub fn run_init(&self, init: &Init) -> Result<RunOutcome> {
        let initial = self.initial_state(init)?;
        match self.scenario.mode {
            Mode::Unconstrained => {
                let cfg = self.sim_config(initial, true);
                let trace = simulate(&cfg);
                self.summarize_continuous(trace, None)
            }
            Mode::Constrained => {
                let cfg = self.sim_config(initial, true);
                let run = algorithm1_continuous(&cfg)?;
                let trace = run.unconstrained_trace.clone().expect("continuous phase ran");
                self.summarize_constrained(run, trace)
            }
            Mode::Discrete => {
                let topology = &self.scenario.topology_schedule.topologies()[0];
                let plan = FacaPlan::for_topology(topology)?;
                let max_iters = self
                    .scenario
                    .max_iters
                    .unwrap_or_else(|| default_max_iters(&plan, self.scenario.h, self.scenario.tol));
                let run = algorithm1_discrete(
                    &self.case.generators,
                    topology,
                    initial.power,
                    self.scenario.h,
                    self.scenario.tol,
                    max_iters,
                )?;
                self.summarize_discrete(run)
            }
        }
    }

    /// Runs every initialization; summaries in order.
    pub fn run(&self) -> Result<Vec<RunOutcome>> {
        self.initializations()
            .iter()
            .map(|init| self.run_init(init))
            .collect()
    }

    fn summarize_continuous(
        &self,
        trace: Trace,
        algorithm: Option<&Algorithm1Run>,
    ) -> Result<RunOutcome> {
        let oracle = self.oracle()?;
        let bounds = self.bounds()?;
        let bound_total = bounds.total();
        let p_tot = self.final_demand();

        let (achieved_lambda, achieved_power) = match algorithm {
            Some(run) => (run.solution.lambda_star, run.solution.p_star.clone()),
            None => (
                crate::dynamics::weighted_lambda_mean(
                    &trace.final_state.lambda,
                    &self.case.generators,
                ),
                trace.final_state.power.clone(),
            ),
        };
        let max_power_deviation = achieved_power
            .iter()
            .zip(&oracle.p_star)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let lambda_deviation = (achieved_lambda - oracle.lambda_star).abs();
        let achieved_cost: f64 = achieved_power
            .iter()
            .zip(&self.case.generators)
            .map(|(&p, g)| crate::model::cost(g, p))
            .sum();

        let converged_within_bound = trace
            .first_convergence
            .map(|t| t <= bound_total)
            .unwrap_or(false)
            && trace
                .event_times
                .iter()
                .zip(&trace.consensus_reentry)
                .all(|(&ev, re)| re.map(|t| t - ev <= bound_total).unwrap_or(false));
        let deviation_within_tol =
            max_power_deviation <= self.scenario.tol * p_tot.abs().max(1.0);
        let kkt_violations = algorithm
            .map(|run| {
                run.kkt_violations
                    .iter()
                    .map(|v| format!("generator {}: {}", v.generator, v.detail))
                    .collect()
            })
            .unwrap_or_default();
        let summary = RunSummary {
            scenario: self.scenario.name.clone(),
            mode: self.scenario.mode.to_string(),
            seed: self.scenario.seed,
            gains: self.gains,
            first_convergence_time: trace.first_convergence,
            iterations: None,
            bound_t1_plus_t2: Some(bound_total),
            oracle_lambda: oracle.lambda_star,
            oracle_power: oracle.p_star.clone(),
            oracle_cost: oracle.total_cost(&self.case.generators),
            achieved_lambda,
            achieved_power,
            achieved_cost,
            max_power_deviation,
            lambda_deviation,
            converged_within_bound,
            deviation_within_tol,
            pass: converged_within_bound && deviation_within_tol,
            consensus_reentry: trace.consensus_reentry.clone(),
            kkt_violations,
        };
        Ok(RunOutcome {
            summary,
            trace: Some(trace),
            algorithm: algorithm.cloned(),
        })
    }

    fn summarize_constrained(&self, run: Algorithm1Run, trace: Trace) -> Result<RunOutcome> {
        let outcome = self.summarize_continuous(trace, Some(&run))?;
        Ok(RunOutcome {
            algorithm: Some(run),
            ..outcome
        })
    }

    fn summarize_discrete(&self, run: Algorithm1Run) -> Result<RunOutcome> {
        let oracle = self.oracle()?;
        let p_tot = self.final_demand();
        let achieved_power = run.solution.p_star.clone();
        let max_power_deviation = achieved_power
            .iter()
            .zip(&oracle.p_star)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let lambda_deviation = (run.solution.lambda_star - oracle.lambda_star).abs();
        let achieved_cost = run.solution.total_cost(&self.case.generators);
        let deviation_within_tol =
            max_power_deviation <= self.scenario.tol * p_tot.abs().max(1.0);
        let summary = RunSummary {
            scenario: self.scenario.name.clone(),
            mode: self.scenario.mode.to_string(),
            seed: self.scenario.seed,
            gains: self.gains,
            first_convergence_time: None,
            iterations: run.iterations,
            bound_t1_plus_t2: None,
            oracle_lambda: oracle.lambda_star,
            oracle_power: oracle.p_star.clone(),
            oracle_cost: oracle.total_cost(&self.case.generators),
            achieved_lambda: run.solution.lambda_star,
            achieved_power,
            achieved_cost,
            max_power_deviation,
            lambda_deviation,
            converged_within_bound: true,
            deviation_within_tol,
            pass: deviation_within_tol,
            consensus_reentry: Vec::new(),
            kkt_violations: run
                .kkt_violations
                .iter()
                .map(|v| format!("generator {}: {}", v.generator, v.detail))
                .collect(),
        };
        Ok(RunOutcome {
            summary,
            trace: None,
            algorithm: Some(run),
        })
    }
}

/// Everything one scenario run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub trace: Option<Trace>,
    pub algorithm: Option<Algorithm1Run>,
}

/// Boundary-layer width that keeps the explicit integrator contracting
/// inside the layer for this parameter set and schedule.
pub fn stable_smoothing_eps(
    p: f64,
    dt: f64,
    schedule: &TopologySchedule,
    params: &[crate::model::GeneratorParams],
) -> f64 {
    let lap_radius = 2.0 * schedule.max_degree() as f64;
    let two_alpha_max = 2.0 * params.iter().map(|g| g.alpha).fold(0.0, f64::max);
    crate::dynamics::stable_layer_width(p, dt, two_alpha_max, lap_radius)
}

const SWITCHING_PERIOD_57: f64 = 0.0025;

/// 7-generator 57-bus study: random connected topologies switching every
/// 2.5 ms, capacity limits active, several seeded starting dispatches.
pub fn scenario_switching_57() -> Scenario {
    let case = case57();
    let n = case.gen_count();
    let seed = 5701u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topologies: Vec<Topology> = (0..8).map(|_| random_connected(n, &mut rng)).collect();
    let t_end = 0.5;
    let phase_count = (t_end / SWITCHING_PERIOD_57).ceil() as usize;
    let phases: Vec<(f64, usize)> = (0..phase_count)
        .map(|k| {
            (
                k as f64 * SWITCHING_PERIOD_57,
                rng.random_range(0..topologies.len()),
            )
        })
        .collect();
    let schedule = TopologySchedule::new(topologies, phases).expect("generated phases are valid");

    let p_tot = 141.13;
    let initializations: Vec<Init> = (0..3)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            Init {
                power: Some(raw.iter().map(|r| p_tot * r / total).collect()),
                lambda: None,
            }
        })
        .collect();

    let dt = 1e-6;
    let p = 1485.0;
    let smoothing = stable_smoothing_eps(p, dt, &schedule, &case.generators);
    Scenario {
        name: "iv-a".into(),
        case: CaseRef::Name("case57".into()),
        gains: Gains {
            p,
            dt,
            smoothing_eps: smoothing,
            ..Gains::default()
        },
        topology_schedule: schedule,
        noise: NoiseModel::none(),
        loads: Some(LoadSchedule::constant(vec![p_tot / n as f64; n])),
        assignment: None,
        t_end,
        dt: None,
        seed,
        mode: Mode::Constrained,
        tol: 1e-3,
        h: default_h(),
        max_iters: None,
        initializations,
        sample_stride: None,
    }
}

/// 7-generator 57-bus study with bounded Gaussian disturbance and a net
/// demand that steps through 141.13 / 69.83 / 212.81 MW.
pub fn scenario_timevarying_noise_57() -> Scenario {
    let case = case57();
    let n = case.gen_count();
    let seed = 5702u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topology = random_connected(n, &mut rng);
    let schedule = TopologySchedule::static_topology(topology).expect("connected by construction");

    let split = |total: f64| vec![total / n as f64; n];
    let loads = LoadSchedule {
        base: split(141.13),
        events: vec![
            LoadEvent { t: 0.66, demands: split(69.83) },
            LoadEvent { t: 1.1, demands: split(212.81) },
            LoadEvent { t: 1.31, demands: split(69.83) },
            LoadEvent { t: 1.75, demands: split(212.81) },
        ],
    };

    let dt = 1e-6;
    let p = 1485.0;
    let smoothing = stable_smoothing_eps(p, dt, &schedule, &case.generators);
    Scenario {
        name: "iv-b".into(),
        case: CaseRef::Name("case57".into()),
        gains: Gains {
            p,
            dt,
            smoothing_eps: smoothing,
            ..Gains::default()
        },
        topology_schedule: schedule,
        noise: NoiseModel::truncated_gaussian(0.1, seed),
        loads: Some(loads),
        assignment: None,
        // the last demand step at 1.75 s jolts every consistency residual
        // by ~20 MW, which takes a few seconds to die out; the horizon
        // leaves room for the dispatch to settle on the final optimum
        t_end: 9.0,
        dt: None,
        seed,
        mode: Mode::Unconstrained,
        tol: 1e-2,
        h: default_h(),
        max_iters: None,
        initializations: Vec::new(),
        sample_stride: None,
    }
}

/// 6-generator 30-bus study: 250 MW net demand solved by the discrete
/// scheme with step parameter 0.1.
pub fn scenario_comparison_30() -> Scenario {
    let case = case30();
    let n = case.gen_count();
    let seed = 3001u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topology = random_connected(n, &mut rng);
    let schedule = TopologySchedule::static_topology(topology).expect("connected by construction");
    Scenario {
        name: "iv-c".into(),
        case: CaseRef::Name("case30".into()),
        gains: Gains::default(),
        topology_schedule: schedule,
        noise: NoiseModel::none(),
        loads: Some(LoadSchedule::constant(vec![250.0])),
        assignment: Some(vec![0]),
        t_end: 0.0,
        dt: None,
        seed,
        mode: Mode::Discrete,
        tol: 1e-3,
        h: 0.1,
        max_iters: None,
        initializations: Vec::new(),
        sample_stride: None,
    }
}

/// Canned scenario by its CLI name.
pub fn canned(name: &str) -> Option<Scenario> {
    match name {
        "iv-a" => Some(scenario_switching_57()),
        "iv-b" => Some(scenario_timevarying_noise_57()),
        "iv-c" => Some(scenario_comparison_30()),
        _ => None,
    }
}

struct RandomBuild {
    constrained: bool,
    phases: usize,
    noise_bound: f64,
    lambda_range: f64,
}

fn random_scenario_build(n: usize, seed: u64, build: RandomBuild) -> Scenario {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let loads: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..50.0)).collect();
    let p_tot: f64 = loads.iter().sum();

    let generators: Vec<crate::model::GeneratorParams> = if build.constrained {
        // the dispatch problem class keeps every uncapacitated share at or
        // above the floor (shares are nonnegative); resample until the
        // instance satisfies that and leaves headroom above the demand
        loop {
            let candidate: Vec<crate::model::GeneratorParams> = (0..n)
                .map(|_| {
                    let alpha = rng.random_range(0.1..2.0);
                    let beta = rng.random_range(0.0..10.0);
                    let gamma = rng.random_range(0.0..5.0);
                    let p_max = p_tot / n as f64 * rng.random_range(0.4..2.5);
                    crate::model::GeneratorParams::new(alpha, beta, gamma, 0.0, Some(p_max))
                })
                .collect();
            if crate::model::p_max_sum(&candidate) < 1.02 * p_tot {
                continue;
            }
            let shares = crate::oracle::unconstrained_optimum(&candidate, p_tot);
            if shares
                .p_star
                .iter()
                .zip(&candidate)
                .all(|(&p, g)| p >= g.p_min)
            {
                break candidate;
            }
        }
    } else {
        (0..n)
            .map(|_| {
                crate::model::GeneratorParams::unconstrained(
                    rng.random_range(0.1..2.0),
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..5.0),
                )
            })
            .collect()
    };

    let topologies: Vec<Topology> = (0..build.phases.max(1))
        .map(|_| random_connected(n, &mut rng))
        .collect();
    let phase_period = 0.05;
    let phases: Vec<(f64, usize)> = (0..topologies.len())
        .map(|k| (k as f64 * phase_period, k))
        .collect();
    let schedule = TopologySchedule::new(topologies, phases).expect("phases are valid");

    let lambda0: Option<Vec<f64>> = if build.lambda_range > 0.0 {
        Some(
            (0..n)
                .map(|_| rng.random_range(-build.lambda_range..build.lambda_range))
                .collect(),
        )
    } else {
        None
    };

    let noise = if build.noise_bound > 0.0 {
        NoiseModel::uniform(build.noise_bound, seed.wrapping_add(1))
    } else {
        NoiseModel::none()
    };

    let mut gains = Gains::default();
    let delta = delta_bound(&noise, &generators);
    let bounds = settling_bounds(&generators, &schedule, &gains, delta)
        .expect("schedule is connected by construction");
    gains.p = bounds.p_min_gain.max(1.0);
    gains.smoothing_eps = stable_smoothing_eps(gains.p, gains.dt, &schedule, &generators);
    // gain changed, recompute the settling horizon
    let bounds = settling_bounds(&generators, &schedule, &gains, delta)
        .expect("schedule is connected by construction");

    let case = Case {
        name: format!("random-{n}-{seed}"),
        generators,
        loads,
        assignment: None,
    };

    Scenario {
        name: format!("random-{n}-{seed}"),
        case: CaseRef::Inline(case),
        topology_schedule: schedule,
        gains,
        noise,
        loads: None,
        assignment: None,
        // horizon: the settling bound itself plus the residual-extinction
        // window, so the recorded final state sits on the equilibrium
        t_end: bounds.total() + crate::dynamics::settle_window(1e-3, gains.nu1),
        dt: None,
        seed,
        mode: if build.constrained {
            Mode::Constrained
        } else {
            Mode::Unconstrained
        },
        tol: 1e-3,
        h: default_h(),
        max_iters: None,
        initializations: vec![Init {
            power: None,
            lambda: lambda0,
        }],
        sample_stride: None,
    }
}

/// Seeded random scenario on a static random connected topology. Cost
/// slopes in [0.1, 2), intercepts in [0, 10), random feasible limits when
/// `constrained`, incremental costs started in [-100, 100).
pub fn random_scenario(n: usize, seed: u64, constrained: bool) -> Scenario {
    random_scenario_build(
        n,
        seed,
        RandomBuild {
            constrained,
            phases: 1,
            noise_bound: 0.0,
            lambda_range: 100.0,
        },
    )
}

/// Random scenario switching through `phases` connected topologies every
/// 50 ms.
pub fn random_switching_scenario(n: usize, seed: u64, phases: usize) -> Scenario {
    random_scenario_build(
        n,
        seed,
        RandomBuild {
            constrained: false,
            phases,
            noise_bound: 0.0,
            lambda_range: 100.0,
        },
    )
}

/// Random scenario with bounded uniform disturbance; the gain is raised to
/// the robustness threshold.
pub fn random_noisy_scenario(n: usize, seed: u64, noise_bound: f64) -> Scenario {
    random_scenario_build(
        n,
        seed,
        RandomBuild {
            constrained: false,
            phases: 1,
            noise_bound,
            lambda_range: 100.0,
        },
    )
}
