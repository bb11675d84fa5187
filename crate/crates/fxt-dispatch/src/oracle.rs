//! Reference solvers for the dispatch problem: the closed-form
//! uncapacitated optimum, the active-set KKT solution with capacity limits,
//! a brute-force grid search used as an independent check, and the
//! saturated-set correction of the incremental cost.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_feasible, GeneratorParams};

/// Optimal dispatch: incremental cost, per-generator power, and which
/// generators sit at a capacity limit.
#[derive(Debug, Clone, Serialize)]
pub struct DispatchSolution {
    /// Optimal incremental cost, $/MW.
    pub lambda_star: f64,
    /// Optimal power per generator, MW.
    pub p_star: Vec<f64>,
    /// Indices of generators pinned at a limit.
    pub saturated: BTreeSet<usize>,
    /// Subset of `saturated` pinned at p_max (the rest sit at p_min).
    pub at_max: BTreeSet<usize>,
}

impl DispatchSolution {
    pub fn total_power(&self) -> f64 {
        self.p_star.iter().sum()
    }

    /// Total generation cost of this dispatch.
    pub fn total_cost(&self, params: &[GeneratorParams]) -> f64 {
        self.p_star
            .iter()
            .zip(params)
            .map(|(&p, g)| crate::model::cost(g, p))
            .sum()
    }
}

/// One violated optimality condition found by [`kkt_audit`].
#[derive(Debug, Clone, Serialize)]
pub struct KktViolation {
    pub generator: usize,
    pub detail: String,
}

/// Checks the three optimality branches and the balance constraint against
/// a candidate solution. Empty result means the candidate is optimal
/// within `tol`.
pub fn kkt_audit(
    solution: &DispatchSolution,
    params: &[GeneratorParams],
    p_tot: f64,
    tol: f64,
) -> Vec<KktViolation> {
    let mut violations = Vec::new();
    let balance = (solution.total_power() - p_tot).abs();
    if balance > tol * p_tot.abs().max(1.0) {
        violations.push(KktViolation {
            generator: usize::MAX,
            detail: format!("balance residual {balance:e} exceeds tolerance"),
        });
    }
    for (i, g) in params.iter().enumerate() {
        let p = solution.p_star[i];
        let marginal = 2.0 * g.alpha * p + g.beta;
        if p < g.p_min - tol || p > g.p_max_value() + tol {
            violations.push(KktViolation {
                generator: i,
                detail: format!("power {p} outside [{}, {}]", g.p_min, g.p_max_value()),
            });
        }
        let at_min = (p - g.p_min).abs() <= tol;
        let at_max = g.p_max.is_some() && (p - g.p_max_value()).abs() <= tol;
        if at_max {
            if marginal > solution.lambda_star + tol {
                violations.push(KktViolation {
                    generator: i,
                    detail: format!(
                        "at p_max but marginal cost {marginal} > lambda* {}",
                        solution.lambda_star
                    ),
                });
            }
        } else if at_min {
            if marginal < solution.lambda_star - tol {
                violations.push(KktViolation {
                    generator: i,
                    detail: format!(
                        "at p_min but marginal cost {marginal} < lambda* {}",
                        solution.lambda_star
                    ),
                });
            }
        } else if (marginal - solution.lambda_star).abs() > tol {
            violations.push(KktViolation {
                generator: i,
                detail: format!(
                    "free generator marginal cost {marginal} != lambda* {}",
                    solution.lambda_star
                ),
            });
        }
    }
    violations
}

/// Closed-form optimum ignoring capacity limits:
/// `lambda* = (P_tot + sum(beta_i/2alpha_i)) / sum(1/2alpha_i)` and
/// `P_i = (lambda* - beta_i) / (2 alpha_i)`.
pub fn unconstrained_optimum(params: &[GeneratorParams], p_tot: f64) -> DispatchSolution {
    let lambda = unconstrained_lambda(params, p_tot);
    let p_star = params
        .iter()
        .map(|g| (lambda - g.beta) / (2.0 * g.alpha))
        .collect();
    DispatchSolution {
        lambda_star: lambda,
        p_star,
        saturated: BTreeSet::new(),
        at_max: BTreeSet::new(),
    }
}

pub fn unconstrained_lambda(params: &[GeneratorParams], p_tot: f64) -> f64 {
    let inv: f64 = params.iter().map(|g| 1.0 / (2.0 * g.alpha)).sum();
    let beta_over: f64 = params.iter().map(|g| g.beta / (2.0 * g.alpha)).sum();
    (p_tot + beta_over) / inv
}

/// Incremental-cost correction once the set `theta` is pinned at fixed
/// powers: distributes the spilled power over the free generators.
pub fn lambda_correction(
    params: &[GeneratorParams],
    theta: &BTreeSet<usize>,
    fixed_p: &[f64],
    lambda_tilde: f64,
) -> Result<f64> {
    let free_inv: f64 = params
        .iter()
        .enumerate()
        .filter(|(i, _)| !theta.contains(i))
        .map(|(_, g)| 1.0 / (2.0 * g.alpha))
        .sum();
    if free_inv == 0.0 {
        return Err(Error::AllSaturated);
    }
    let spill: f64 = theta
        .iter()
        .map(|&i| {
            let g = &params[i];
            (lambda_tilde - 2.0 * g.alpha * fixed_p[i] - g.beta) / (2.0 * g.alpha)
        })
        .sum();
    Ok(lambda_tilde + spill / free_inv)
}

/// Unique KKT point of the capacity-constrained problem.
///
/// The aggregate box-clamped supply S(lambda) = sum_i clamp((lambda -
/// beta_i)/(2 alpha_i), p_min_i, p_max_i) is continuous, piecewise linear,
/// and nondecreasing, with breakpoints where a generator enters or leaves a
/// limit. Sweeping the sorted breakpoints finds the segment where S crosses
/// the demand; the free-set equality solve on that segment is the exact
/// active-set solution, and every generator's limit membership follows from
/// where lambda* lands relative to its breakpoints. A generator whose free
/// solve lands exactly on a limit stays classified free (the equality
/// branch holds there).
pub fn constrained_optimum(params: &[GeneratorParams], p_tot: f64) -> Result<DispatchSolution> {
    check_feasible(params, p_tot)?;
    let n = params.len();

    // entry/exit incremental costs of each generator's feasible interval
    let lambda_lo = |g: &GeneratorParams| 2.0 * g.alpha * g.p_min + g.beta;
    let lambda_hi = |g: &GeneratorParams| match g.p_max {
        Some(p_max) => 2.0 * g.alpha * p_max + g.beta,
        None => f64::INFINITY,
    };
    let supply = |lambda: f64| -> f64 {
        params
            .iter()
            .map(|g| ((lambda - g.beta) / (2.0 * g.alpha)).clamp(g.p_min, g.p_max_value()))
            .sum()
    };

    let mut breakpoints: Vec<f64> = params
        .iter()
        .flat_map(|g| [lambda_lo(g), lambda_hi(g)])
        .filter(|b| b.is_finite())
        .collect();
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breakpoints.dedup();

    // segment [seg_lo, seg_hi] on which S crosses the demand
    let slack = 1e-12 * p_tot.abs().max(1.0);
    let crossing = breakpoints
        .iter()
        .position(|&b| supply(b) >= p_tot - slack);
    let (seg_lo, seg_hi) = match crossing {
        Some(0) => (f64::NEG_INFINITY, breakpoints[0]),
        Some(k) => (breakpoints[k - 1], breakpoints[k]),
        None => (*breakpoints.last().expect("n >= 1"), f64::INFINITY),
    };

    // membership on the open segment
    let at_max: BTreeSet<usize> = (0..n)
        .filter(|&i| lambda_hi(&params[i]) <= seg_lo)
        .collect();
    let at_min: BTreeSet<usize> = (0..n)
        .filter(|&i| lambda_lo(&params[i]) >= seg_hi)
        .collect();
    let free: Vec<usize> = (0..n)
        .filter(|i| !at_max.contains(i) && !at_min.contains(i))
        .collect();

    let lambda_star = if free.is_empty() {
        // flat segment: the demand is met by pinned limits alone and any
        // incremental cost inside the segment is optimal
        seg_lo
    } else {
        let fixed: f64 = at_max
            .iter()
            .map(|&i| params[i].p_max_value())
            .chain(at_min.iter().map(|&i| params[i].p_min))
            .sum();
        let free_params: Vec<GeneratorParams> = free.iter().map(|&i| params[i]).collect();
        unconstrained_lambda(&free_params, p_tot - fixed)
    };

    let p_star: Vec<f64> = (0..n)
        .map(|i| {
            let g = &params[i];
            if at_max.contains(&i) {
                g.p_max_value()
            } else if at_min.contains(&i) {
                g.p_min
            } else {
                ((lambda_star - g.beta) / (2.0 * g.alpha)).clamp(g.p_min, g.p_max_value())
            }
        })
        .collect();
    let mut saturated = at_min;
    saturated.extend(at_max.iter().copied());
    Ok(DispatchSolution {
        lambda_star,
        p_star,
        saturated,
        at_max,
    })
}

/// Grid search over the feasible simplex, shrinking 3x around the incumbent
/// until the grid is finer than 1e-4 MW. Independent of the active-set
/// path; intended for N <= 4.
pub fn brute_force_optimum(
    params: &[GeneratorParams],
    p_tot: f64,
    grid: f64,
) -> Result<DispatchSolution> {
    assert!(params.len() <= 4, "brute force is for N <= 4");
    assert!(grid > 0.0);
    check_feasible(params, p_tot)?;
    let n = params.len();

    // search boxes per generator, refined around the incumbent
    let mut lo: Vec<f64> = params.iter().map(|g| g.p_min).collect();
    let mut hi: Vec<f64> = params
        .iter()
        .map(|g| g.p_max_value().min(p_tot + 1.0))
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut step = grid;

    loop {
        let points_per_dim: Vec<Vec<f64>> = (0..n - 1)
            .map(|i| {
                let mut pts = Vec::new();
                let mut p = lo[i];
                while p <= hi[i] + 1e-12 {
                    pts.push(p.min(hi[i]));
                    p += step;
                }
                // capacity-corner optima live exactly on the box edge
                if pts.last().is_none_or(|&last| last < hi[i] - 1e-12) {
                    pts.push(hi[i]);
                }
                pts
            })
            .collect();

        let mut stack_best: Option<(f64, Vec<f64>)> = best.clone();
        let mut point = vec![0.0; n];
        enumerate_grid(&points_per_dim, &mut point, 0, params, p_tot, &mut stack_best);
        best = stack_best;

        if step < 1e-4 {
            break;
        }
        // shrink the box 3x around the incumbent; near constrained corners
        // the incumbent's coordinate error can reach several grid widths,
        // so never shrink below a 10-step margin
        if let Some((_, ref p)) = best {
            for i in 0..n - 1 {
                let half = ((hi[i] - lo[i]) / 6.0).max(10.0 * step);
                let c = p[i];
                lo[i] = (c - half).max(params[i].p_min);
                hi[i] = (c + half).min(params[i].p_max_value().min(p_tot + 1.0));
            }
        }
        step /= 3.0;
    }

    let (_, p_star) = best.ok_or(Error::Infeasible {
        p_tot,
        p_min_sum: crate::model::p_min_sum(params),
        p_max_sum: crate::model::p_max_sum(params),
    })?;

    // classify saturation at the grid resolution
    let mut saturated = BTreeSet::new();
    let mut at_max = BTreeSet::new();
    for (i, g) in params.iter().enumerate() {
        if (p_star[i] - g.p_min).abs() < 1e-3 {
            saturated.insert(i);
        } else if g.p_max.is_some() && (p_star[i] - g.p_max_value()).abs() < 1e-3 {
            saturated.insert(i);
            at_max.insert(i);
        }
    }
    let free: Vec<usize> = (0..n).filter(|i| !saturated.contains(i)).collect();
    let lambda = if free.is_empty() {
        (0..n)
            .map(|i| 2.0 * params[i].alpha * p_star[i] + params[i].beta)
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        free.iter()
            .map(|&i| 2.0 * params[i].alpha * p_star[i] + params[i].beta)
            .sum::<f64>()
            / free.len() as f64
    };
    Ok(DispatchSolution {
        lambda_star: lambda,
        p_star,
        saturated,
        at_max,
    })
}

fn enumerate_grid(
    points_per_dim: &[Vec<f64>],
    point: &mut Vec<f64>,
    dim: usize,
    params: &[GeneratorParams],
    p_tot: f64,
    best: &mut Option<(f64, Vec<f64>)>,
) {
    let n = params.len();
    if dim == n - 1 {
        // last generator absorbs the residual demand; only feasible points
        // are scored
        let assigned: f64 = point[..n - 1].iter().sum();
        let last = p_tot - assigned;
        let g = &params[n - 1];
        let slack = 1e-9 * p_tot.abs().max(1.0);
        if last < g.p_min - slack || last > g.p_max_value() + slack {
            return;
        }
        point[n - 1] = last.clamp(g.p_min, g.p_max_value());
        let c: f64 = point
            .iter()
            .zip(params)
            .map(|(&p, g)| crate::model::cost(g, p))
            .sum();
        if best.as_ref().map_or(true, |(bc, _)| c < *bc) {
            *best = Some((c, point.clone()));
        }
        return;
    }
    for &p in &points_per_dim[dim] {
        point[dim] = p;
        enumerate_grid(points_per_dim, point, dim + 1, params, p_tot, best);
    }
}
