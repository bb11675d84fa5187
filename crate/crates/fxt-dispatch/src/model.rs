//! Generators, loads, load-to-generator assignment, quadratic cost
//! functions, and case-file ingestion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadratic cost curve and capacity limits of one generator.
///
/// Cost is `alpha*P^2 + beta*P + gamma` in $/h with P in MW. `p_max` may be
/// infinite for the uncapacitated problem. The constant term `gamma` shows
/// up in total-cost reports but drops out of every optimality condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub p_min: f64,
    /// `None` means unbounded above.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
}

impl GeneratorParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, p_min: f64, p_max: Option<f64>) -> Self {
        GeneratorParams {
            alpha,
            beta,
            gamma,
            p_min,
            p_max,
        }
    }

    /// Unlimited generator (p_min = 0, p_max = +inf).
    pub fn unconstrained(alpha: f64, beta: f64, gamma: f64) -> Self {
        GeneratorParams::new(alpha, beta, gamma, 0.0, None)
    }

    pub fn p_max_value(&self) -> f64 {
        self.p_max.unwrap_or(f64::INFINITY)
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Validation(format!(
                "generator {index}: alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Validation(format!(
                "generator {index}: beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.gamma < 0.0 {
            return Err(Error::Validation(format!(
                "generator {index}: gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.p_min < 0.0 {
            return Err(Error::Validation(format!(
                "generator {index}: p_min must be >= 0, got {}",
                self.p_min
            )));
        }
        if !(self.p_min < self.p_max_value()) {
            return Err(Error::Validation(format!(
                "generator {index}: p_min {} must be < p_max {}",
                self.p_min,
                self.p_max_value()
            )));
        }
        Ok(())
    }
}

/// Generation cost in $ for dispatching `p` MW.
pub fn cost(params: &GeneratorParams, p: f64) -> f64 {
    params.alpha * p * p + params.beta * p + params.gamma
}

/// Base load demands plus timed demand changes (right-continuous).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSchedule {
    /// Base demand of each load in MW, active from t = 0.
    pub base: Vec<f64>,
    /// (time, full replacement demand vector), strictly increasing times.
    #[serde(default)]
    pub events: Vec<LoadEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadEvent {
    pub t: f64,
    pub demands: Vec<f64>,
}

impl LoadSchedule {
    pub fn constant(base: Vec<f64>) -> Self {
        LoadSchedule {
            base,
            events: Vec::new(),
        }
    }

    pub fn load_count(&self) -> usize {
        self.base.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base.iter().any(|&d| d < 0.0) {
            return Err(Error::Validation("load demands must be >= 0".into()));
        }
        let mut prev = -f64::INFINITY;
        for ev in &self.events {
            if ev.t <= prev {
                return Err(Error::Validation(
                    "load event times must be strictly increasing".into(),
                ));
            }
            if ev.t < 0.0 {
                return Err(Error::Validation("load event times must be >= 0".into()));
            }
            prev = ev.t;
            if ev.demands.len() != self.base.len() {
                return Err(Error::Validation(format!(
                    "load event at t = {} has {} demands, expected {}",
                    ev.t,
                    ev.demands.len(),
                    self.base.len()
                )));
            }
            if ev.demands.iter().any(|&d| d < 0.0) {
                return Err(Error::Validation("load demands must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Demand vector active at time `t` (events apply right-continuously).
    pub fn demands_at(&self, t: f64) -> &[f64] {
        let mut active = &self.base;
        for ev in &self.events {
            if ev.t <= t {
                active = &ev.demands;
            } else {
                break;
            }
        }
        active
    }

    /// Every distinct total demand this schedule ever presents, in order.
    pub fn totals(&self) -> Vec<f64> {
        let mut out = vec![sum_ascending(&self.base)];
        for ev in &self.events {
            out.push(sum_ascending(&ev.demands));
        }
        out
    }
}

/// Sum of demands at time `t` in ascending load-index order.
pub fn total_demand(loads: &LoadSchedule, t: f64) -> f64 {
    sum_ascending(loads.demands_at(t))
}

fn sum_ascending(values: &[f64]) -> f64 {
    values.iter().sum()
}

/// Load-to-generator association: load `k` reports its demand to exactly
/// one generator bus, `assign[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub assign: Vec<usize>,
}

impl Assignment {
    /// Default mapping: load k -> generator k mod n.
    pub fn round_robin(load_count: usize, gen_count: usize) -> Self {
        Assignment {
            assign: (0..load_count).map(|k| k % gen_count.max(1)).collect(),
        }
    }

    pub fn validate(&self, load_count: usize, gen_count: usize) -> Result<()> {
        if self.assign.len() != load_count {
            return Err(Error::Validation(format!(
                "assignment covers {} loads, expected {}",
                self.assign.len(),
                load_count
            )));
        }
        for (k, &g) in self.assign.iter().enumerate() {
            if g >= gen_count {
                return Err(Error::Validation(format!(
                    "load {k} assigned to missing generator {g}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-generator power each unit starts at: the sum of the demands of its
/// assigned loads, accumulated in ascending load index.
pub fn initial_dispatch(loads: &LoadSchedule, assignment: &Assignment, gen_count: usize) -> Vec<f64> {
    let mut p = vec![0.0; gen_count];
    for (k, &demand) in loads.base.iter().enumerate() {
        p[assignment.assign[k]] += demand;
    }
    p
}

/// Per-generator deltas produced by a demand change from `old` to `new`.
pub fn event_deltas(old: &[f64], new: &[f64], assignment: &Assignment, gen_count: usize) -> Vec<f64> {
    let mut dp = vec![0.0; gen_count];
    for k in 0..old.len() {
        dp[assignment.assign[k]] += new[k] - old[k];
    }
    dp
}

/// Instantaneous generator/incremental-cost state of the network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemState {
    /// Dispatched power per generator, MW.
    pub power: Vec<f64>,
    /// Incremental cost per generator, $/MW.
    pub lambda: Vec<f64>,
    /// Simulation time, seconds.
    pub t: f64,
}

impl SystemState {
    pub fn new(power: Vec<f64>, lambda: Vec<f64>, t: f64) -> Self {
        assert_eq!(power.len(), lambda.len());
        SystemState { power, lambda, t }
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }
}

/// A dispatch case: generator cost table plus default loads and assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    #[serde(default)]
    pub name: String,
    pub generators: Vec<GeneratorParams>,
    #[serde(default)]
    pub loads: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<usize>>,
}

impl Case {
    pub fn gen_count(&self) -> usize {
        self.generators.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.generators.is_empty() {
            return Err(Error::Validation("case has no generators".into()));
        }
        for (i, g) in self.generators.iter().enumerate() {
            g.validate(i)?;
        }
        if self.loads.iter().any(|&d| d < 0.0) {
            return Err(Error::Validation("case loads must be >= 0".into()));
        }
        if let Some(assign) = &self.assignment {
            Assignment {
                assign: assign.clone(),
            }
            .validate(self.loads.len(), self.generators.len())?;
        }
        Ok(())
    }

    pub fn assignment(&self) -> Assignment {
        match &self.assignment {
            Some(a) => Assignment { assign: a.clone() },
            None => Assignment::round_robin(self.loads.len(), self.generators.len()),
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.alpha).collect()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.beta).collect()
    }
}

/// Total generated power, summed in ascending generator index.
pub fn sum_state_power(power: &[f64]) -> f64 {
    power.iter().sum()
}

/// Sum of the lower capacity limits.
pub fn p_min_sum(params: &[GeneratorParams]) -> f64 {
    params.iter().map(|g| g.p_min).sum()
}

/// Sum of the upper capacity limits (infinite if any generator is unbounded).
pub fn p_max_sum(params: &[GeneratorParams]) -> f64 {
    params.iter().map(|g| g.p_max_value()).sum()
}

/// Rejects demands outside the generation capability range.
pub fn check_feasible(params: &[GeneratorParams], p_tot: f64) -> Result<()> {
    let lo = p_min_sum(params);
    let hi = p_max_sum(params);
    if p_tot < lo - 1e-9 || p_tot > hi + 1e-9 {
        return Err(Error::Infeasible {
            p_tot,
            p_min_sum: lo,
            p_max_sum: hi,
        });
    }
    Ok(())
}

/// Parses and validates a case file (JSON).
pub fn load_case(path: impl AsRef<Path>) -> Result<Case> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case(&text, &path.display().to_string())
}

/// Parses a case from JSON text; `origin` labels error messages.
pub fn parse_case(text: &str, origin: &str) -> Result<Case> {
    let case: Case = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        detail: e.to_string(),
    })?;
    case.validate()?;
    Ok(case)
}

/// Writes a case back to JSON. Round-trips bit-exactly through `load_case`.
pub fn save_case(case: &Case, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(case).expect("case serialization cannot fail");
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Cost table for the 6-generator 30-bus test case, transcribed from the
/// standard MATPOWER `case30` generator and cost tables.
pub fn case30() -> Case {
    parse_case(CASE30_JSON, "builtin:case30").expect("builtin case30 is valid")
}

/// Cost table for the 7-generator 57-bus test case, transcribed from the
/// standard MATPOWER `case57` generator and cost tables.
pub fn case57() -> Case {
    parse_case(CASE57_JSON, "builtin:case57").expect("builtin case57 is valid")
}

pub const CASE30_JSON: &str = include_str!("../data/case30.json");
pub const CASE57_JSON: &str = include_str!("../data/case57.json");
