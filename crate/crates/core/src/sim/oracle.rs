//! Brute-force reference for one-dimensional contingency problems.
//!
//! All input sequences over a small level grid are enumerated, simulated and
//! checked against the full constraint set; the cheapest feasible contingency
//! cost is compared with the solver on the same instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate, AgentParams, AgentState, ControlInput, EquilibriumPair};
use crate::ocp::{
    assemble_solution, nominal_completion, ContingencyPlan, FhocpSpec, Horizons, NominalPlan, ObjectiveMode,
};
use crate::safeset::Ball;
use crate::solver::{solve_fhocp, SolveReport, SolveStatus, SolverOptions};
use crate::{Error, Result, Vec2};

/// Equality tolerance used when classifying enumerated sequences.
pub const ORACLE_TOL: f64 = 1e-9;

const MAX_SEQUENCES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub sequences: usize,
    pub feasible: usize,
    /// Cheapest feasible contingency cost, if any sequence is feasible.
    pub best_cost: Option<f64>,
    pub best_inputs: Vec<f64>,
}

/// Enumerates all `levels^N_c` input sequences along the x axis.
///
/// `spec` must be one-dimensional: every y component zero.
pub fn oracle_bruteforce(spec: &FhocpSpec, levels: &[f64]) -> Result<OracleVerdict> {
    let n_c = spec.horizons.n_c;
    let planar = spec.x0.p.y != 0.0
        || spec.x0.v.y != 0.0
        || spec.x_ref.p.y != 0.0
        || spec.x_ref.v.y != 0.0
        || spec.active_set.c.y != 0.0;
    if planar {
        return Err(Error::InvalidArgument("oracle needs a one-dimensional instance".into()));
    }
    if n_c > 4 {
        return Err(Error::InvalidArgument(format!("oracle supports N_c <= 4, got {n_c}")));
    }
    let total = levels
        .len()
        .checked_pow(n_c as u32)
        .filter(|t| *t <= MAX_SEQUENCES)
        .ok_or_else(|| Error::InvalidArgument("input grid too large for enumeration".into()))?;

    let mut verdict = OracleVerdict { sequences: total, feasible: 0, best_cost: None, best_inputs: Vec::new() };
    let mut digits = vec![0usize; n_c];
    for _ in 0..total {
        let inputs: Vec<ControlInput> = digits.iter().map(|&d| ControlInput::new(Vec2::new(levels[d], 0.0))).collect();
        let mut states = Vec::with_capacity(n_c + 1);
        let mut x = spec.x0;
        states.push(x);
        for u in &inputs {
            x = propagate(&x, &u.u, spec.params.ts);
            states.push(x);
        }
        let plan = ContingencyPlan { states, inputs, eq: EquilibriumPair::stopped_at(x.p) };
        let (nstates, ninputs) = nominal_completion(&plan, spec.horizons.n_n, spec.params.ts);
        let nominal =
            NominalPlan { states: nstates, inputs: ninputs, slacks: crate::ocp::minimal_slacks(&plan.states, spec) };
        let sol = assemble_solution(spec, nominal, plan, SolveReport::default());
        if sol.residual <= ORACLE_TOL {
            verdict.feasible += 1;
            if verdict.best_cost.is_none_or(|b| sol.j_c < b) {
                verdict.best_cost = Some(sol.j_c);
                verdict.best_inputs = sol.contingency.inputs.iter().map(|u| u.u.x).collect();
            }
        }
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < levels.len() {
                break;
            }
            *d = 0;
        }
    }
    Ok(verdict)
}

/// Random one-dimensional instance with `N_c = N_n = 3`.
///
/// Initial speeds are multiples of `Ts·a_max` so that grid sequences can stop
/// exactly; at most two full braking steps are needed.
pub fn random_oracle_instance(rng: &mut ChaCha8Rng) -> FhocpSpec {
    let params = AgentParams::default();
    let unit = params.ts * params.a_max;
    let v0 = unit * rng.gen_range(-2i32..=2) as f64;
    let p0 = rng.gen_range(-0.3..0.3);
    let radius = params.r + rng.gen_range(0.02..0.6);
    let x0 = AgentState::new(Vec2::new(p0, 0.0), Vec2::new(v0, 0.0));
    let x_ref = AgentState::at_rest(Vec2::new(rng.gen_range(-2.0..2.0), 0.0));
    FhocpSpec {
        active_set: Ball::new(Vec2::zeros(), radius),
        horizons: Horizons { n_n: 3, n_c: 3 },
        objective: ObjectiveMode::ContingencyCost,
        ..FhocpSpec::isolated(x0, x_ref, params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub index: usize,
    pub oracle_feasible: bool,
    pub oracle_cost: Option<f64>,
    pub solver_feasible: bool,
    pub solver_cost: f64,
    pub solver_status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSuiteReport {
    pub instances: usize,
    pub oracle_feasible: usize,
    /// Instances where brute force found a feasible sequence but the solver did not.
    pub verdict_mismatches: usize,
    /// Instances where the solver cost exceeds the brute-force optimum by more than 1e-3.
    pub cost_failures: usize,
    pub max_cost_excess: f64,
    pub cases: Vec<OracleCase>,
}

impl OracleSuiteReport {
    pub fn passed(&self) -> bool {
        self.verdict_mismatches == 0 && self.cost_failures == 0
    }
}

/// Compares solver and brute force on `count` random instances.
pub fn run_oracle_suite(count: usize, seed: u64, opts: &SolverOptions) -> Result<OracleSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = {
        let a = AgentParams::default().a_max;
        [-a, 0.0, a]
    };
    let mut report = OracleSuiteReport {
        instances: count,
        oracle_feasible: 0,
        verdict_mismatches: 0,
        cost_failures: 0,
        max_cost_excess: f64::NEG_INFINITY,
        cases: Vec::with_capacity(count),
    };
    for index in 0..count {
        let spec = random_oracle_instance(&mut rng);
        let verdict = oracle_bruteforce(&spec, &levels)?;
        let sol = solve_fhocp(&spec, None, opts);
        let solver_feasible = sol.report.status != SolveStatus::Error && sol.residual <= opts.feas_tol;
        if let Some(best) = verdict.best_cost {
            report.oracle_feasible += 1;
            if !solver_feasible {
                report.verdict_mismatches += 1;
            } else {
                let excess = sol.j_c - best;
                report.max_cost_excess = report.max_cost_excess.max(excess);
                if excess > 1e-3 {
                    report.cost_failures += 1;
                }
            }
        }
        report.cases.push(OracleCase {
            index,
            oracle_feasible: verdict.best_cost.is_some(),
            oracle_cost: verdict.best_cost,
            solver_feasible,
            solver_cost: sol.j_c,
            solver_status: sol.report.status,
        });
    }
    Ok(report)
}
