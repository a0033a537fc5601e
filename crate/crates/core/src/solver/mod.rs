//! Solver for the local problem: an augmented Lagrangian method over a
//! single-shooting transcription, plus the shifted-candidate fallback that keeps
//! the closed loop feasible when the numerical solve falls short.

pub mod al;
pub mod transcription;

use serde::{Deserialize, Serialize};

use crate::ocp::{
    assemble_solution, braking_plan, candidate_solution, minimal_slacks, nominal_completion, FhocpSolution, FhocpSpec,
    NominalPlan,
};
use crate::{Error, Result};
use al::{AlSettings, AlStatus};
use transcription::{FhocpNlp, Margins};

/// Residual below which a solver result is taken as exactly feasible by the closed loop.
pub const ACCEPT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_outer_iters: usize,
    /// Cap on quasi-Newton iterations summed over all outer iterations.
    pub max_inner_iters: usize,
    /// The same cap for solves without a warm start.
    pub max_inner_iters_cold: usize,
    pub penalty_growth: f64,
    pub initial_penalty: f64,
    pub max_penalty: f64,
    /// Constraint tightening used inside the solver [m].
    pub margin: f64,
    /// Relative tightening of the Lyapunov bound inside the solver.
    pub lyapunov_margin: f64,
    /// Speed smoothing inside the generator radius [m/s].
    pub smoothing: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-5,
            opt_tol: 1e-5,
            max_outer_iters: 50,
            max_inner_iters: 500,
            max_inner_iters_cold: 2000,
            penalty_growth: 10.0,
            initial_penalty: 10.0,
            max_penalty: 1e9,
            margin: 2e-5,
            lyapunov_margin: 2e-5,
            smoothing: 1e-3,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol > 0.0 && self.opt_tol > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be positive".into()));
        }
        if !(self.initial_penalty > 0.0 && self.penalty_growth >= 1.0) {
            return Err(Error::InvalidArgument("penalty parameters out of range".into()));
        }
        if !(self.margin >= 0.0 && self.lyapunov_margin >= 0.0 && self.smoothing > 0.0) {
            return Err(Error::InvalidArgument("solver margins out of range".into()));
        }
        Ok(())
    }

    fn al_settings(&self, warm: bool) -> AlSettings {
        AlSettings {
            feas_tol: self.feas_tol,
            opt_tol: self.opt_tol,
            max_outer_iters: self.max_outer_iters,
            max_inner_iters: if warm { self.max_inner_iters } else { self.max_inner_iters_cold },
            initial_penalty: self.initial_penalty,
            penalty_growth: self.penalty_growth,
            max_penalty: self.max_penalty,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 50,
            initial_step: 1.0,
        }
    }

    fn margins(&self) -> Margins {
        Margins { geometric: self.margin, lyapunov: self.lyapunov_margin, smoothing: self.smoothing }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    #[default]
    Optimal,
    FeasibleSuboptimal,
    FallbackUsed,
    Error,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::FeasibleSuboptimal => "feasible_suboptimal",
            SolveStatus::FallbackUsed => "fallback_used",
            SolveStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub residual: f64,
    pub cost: f64,
}

/// Solves the local problem, warm-started from `warm_start` when given.
///
/// The returned residual is measured against the untightened constraints. A
/// status other than [`SolveStatus::Error`] guarantees `residual ≤ feas_tol`.
pub fn solve_fhocp(spec: &FhocpSpec, warm_start: Option<&FhocpSolution>, opts: &SolverOptions) -> FhocpSolution {
    let mut nlp = FhocpNlp::new(spec, opts.margins());
    let z0 = match warm_start {
        Some(w) => nlp.encode(&w.nominal.inputs, &w.contingency.inputs),
        None => {
            let brake = braking_plan(&spec.x0, &spec.params, spec.horizons.n_c);
            let (_, inputs) = nominal_completion(&brake, spec.horizons.n_n, spec.params.ts);
            nlp.encode(&inputs, &brake.inputs)
        }
    };

    let (status, outer, inner, z, lambda) = if nlp.room() <= 0.0 {
        (AlStatus::Infeasible, 0, 0, z0, Vec::new())
    } else {
        normalize_objective(&mut nlp, &z0);
        let lambda0 = warm_start.map(|w| w.multipliers.as_slice());
        let res = al::minimize(&mut nlp, &z0, lambda0, &opts.al_settings(warm_start.is_some()));
        (res.status, res.outer_iters, res.inner_iters, res.z, res.lambda)
    };

    let (mut nominal, contingency) = nlp.decode(&z);
    polish_slacks(&mut nominal, spec);
    let mut status = match status {
        AlStatus::Converged => SolveStatus::Optimal,
        AlStatus::Feasible => SolveStatus::FeasibleSuboptimal,
        AlStatus::Infeasible | AlStatus::NonFinite => SolveStatus::Error,
    };
    let report = SolveReport { status, outer_iters: outer, inner_iters: inner, residual: 0.0, cost: 0.0 };
    let mut sol = assemble_solution(spec, nominal, contingency, report);
    sol.multipliers = lambda;
    // the tightened problem may miss its tolerance while the exact one holds
    if status == SolveStatus::Error && sol.residual <= ACCEPT_TOL && sol.j.is_finite() {
        status = SolveStatus::FeasibleSuboptimal;
    }
    if !(sol.residual <= opts.feas_tol) || !sol.j.is_finite() {
        status = SolveStatus::Error;
    }
    sol.report.status = status;
    sol.report.residual = sol.residual;
    sol.report.cost = sol.j;
    sol
}

/// Scales the objective so its gradient at `z0` has unit infinity norm.
fn normalize_objective(nlp: &mut FhocpNlp<'_>, z0: &[f64]) {
    use al::Nlp;
    let mut g = vec![0.0; nlp.num_constraints()];
    let zero = vec![0.0; nlp.num_constraints()];
    let mut grad = vec![0.0; nlp.dim()];
    nlp.eval(z0, &mut g);
    nlp.grad(&zero, &mut grad);
    let scale = grad.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if scale.is_finite() && scale > 1.0 {
        nlp.set_objective_scale(1.0 / scale);
    }
}

/// Sets the slacks to the smallest values the exact soft-separation constraint accepts.
fn polish_slacks(nominal: &mut NominalPlan, spec: &FhocpSpec) {
    nominal.slacks = minimal_slacks(&nominal.states, spec);
}

/// Solve with the shifted-candidate fallback.
///
/// With a previous solution, the solve is warm-started from the shifted
/// candidate and the candidate completion itself is returned whenever the
/// solver result is not exactly feasible or costs more than the candidate.
/// Without one (first step or a fresh join), the pure braking plan serves as the
/// fallback; if that is infeasible too, the problem is reported as initially
/// infeasible.
pub fn solve_with_fallback(
    spec: &FhocpSpec,
    prev_solution: Option<&FhocpSolution>,
    opts: &SolverOptions,
) -> Result<FhocpSolution> {
    let fallback_report = SolveReport { status: SolveStatus::FallbackUsed, ..SolveReport::default() };
    let candidate = prev_solution.map(|prev| candidate_solution(prev, spec, fallback_report));

    let warm = candidate.as_ref().map(|cand| {
        let mut warm = cand.clone();
        // keep the previous nominal tail as the nominal warm start
        if let Some(prev) = prev_solution {
            let mut inputs = prev.nominal.inputs[1..].to_vec();
            inputs.push(crate::dynamics::ControlInput::zero());
            inputs[0] = cand.contingency.inputs[0];
            warm.nominal.inputs = inputs;
            warm.multipliers = prev.multipliers.clone();
        }
        warm
    });
    let sol = solve_fhocp(spec, warm.as_ref(), opts);

    let solved = sol.report.status != SolveStatus::Error && sol.residual <= ACCEPT_TOL;
    match candidate {
        Some(cand) => {
            let cheaper = !spec.j_hat.is_finite() || sol.j_c <= cand.j_c + opts.opt_tol;
            if solved && cheaper {
                Ok(sol)
            } else {
                Ok(finish_fallback(cand, &sol))
            }
        }
        None => {
            if solved {
                return Ok(sol);
            }
            let brake = braking_plan(&spec.x0, &spec.params, spec.horizons.n_c);
            let (states, inputs) = nominal_completion(&brake, spec.horizons.n_n, spec.params.ts);
            let slacks = minimal_slacks(&states, spec);
            let fallback = assemble_solution(spec, NominalPlan { states, inputs, slacks }, brake, fallback_report);
            if fallback.residual <= ACCEPT_TOL {
                Ok(finish_fallback(fallback, &sol))
            } else {
                let (group, value) = crate::ocp::residual_breakdown(&fallback, spec).worst();
                Err(Error::InitialInfeasibility {
                    agent: spec.agent_id,
                    detail: format!(
                        "solver status {} and braking plan violates {group} by {value:.3e}",
                        sol.report.status.as_str()
                    ),
                })
            }
        }
    }
}

fn finish_fallback(mut fallback: FhocpSolution, attempted: &FhocpSolution) -> FhocpSolution {
    fallback.report = SolveReport {
        status: SolveStatus::FallbackUsed,
        outer_iters: attempted.report.outer_iters,
        inner_iters: attempted.report.inner_iters,
        residual: fallback.residual,
        cost: fallback.j,
    };
    fallback
}

/// Augmented Lagrangian value and gradient of the transcribed problem at `z`.
///
/// Exposed for gradient verification.
pub fn fhocp_augmented_lagrangian(
    spec: &FhocpSpec,
    opts: &SolverOptions,
    z: &[f64],
    lambda: &[f64],
    mu: f64,
    grad: &mut [f64],
) -> f64 {
    let mut nlp = FhocpNlp::new(spec, opts.margins());
    al::augmented_lagrangian(&mut nlp, z, lambda, mu, grad)
}

/// Dimensions `(variables, constraints)` of the transcribed problem.
pub fn fhocp_dimensions(spec: &FhocpSpec, opts: &SolverOptions) -> (usize, usize) {
    use al::Nlp;
    let nlp = FhocpNlp::new(spec, opts.margins());
    (nlp.dim(), nlp.num_constraints())
}
