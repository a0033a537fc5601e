//! Closed-loop coordinator.
//!
//! One call of [`closed_loop_step`] executes a synchronous round: every active
//! agent poses and solves its local problem from the same snapshot, all shared
//! first inputs are applied at once, candidate safe sets are generated from the
//! measured successor states and the freeze-or-shift rule selects the new active
//! sets. The Lyapunov bounds are then advanced and the runtime invariant checks
//! of the round are attached to its record.

pub mod oracle;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate, AgentParams, AgentState, ControlInput};
use crate::ocp::{
    bound_update, build_problem, candidate_solution, min_contingency_horizon, CostWeights, FhocpSolution, ObjectiveMode,
};
use crate::pnp::{self, JoinVerdict, PnpEvent};
use crate::safeset::{canonical_safe_set, fos_update, freeze_indicators, ActiveSafeSet, Ball};
use crate::solver::{solve_with_fallback, SolveReport, SolveStatus, SolverOptions};
use crate::{Error, Result, Vec2};

pub use oracle::{oracle_bruteforce, random_oracle_instance, run_oracle_suite, OracleSuiteReport, OracleVerdict};

/// Tolerances of the runtime invariant checks.
pub mod tolerances {
    /// Body distance and safe-set gap.
    pub const GEOMETRY: f64 = 1e-9;
    /// Footprint containment in the active set.
    pub const FOOTPRINT: f64 = 1e-6;
    /// Lyapunov decrease.
    pub const LYAPUNOV: f64 = 1e-6;
    /// Residual of the shifted candidate against the next problem.
    pub const CANDIDATE: f64 = 1e-8;
    /// Shifted-cost identity.
    pub const COST_IDENTITY: f64 = 1e-8;
    /// Equilibrium positions closer than this count as unchanged [m].
    pub const EQUILIBRIUM_SHIFT: f64 = 1e-3;
}

/// Circular static obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

/// Axis-aligned rectangular workspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

/// Returned by [`obstacle_clearance`] when nothing constrains the position.
pub const NO_CLEARANCE_LIMIT: f64 = 1e12;

/// Body clearance `h(p)` to obstacles and workspace walls; negative inside.
pub fn obstacle_clearance(p: &Vec2, r: f64, obstacles: &[Obstacle], bounds: Option<&Bounds>) -> f64 {
    let mut h = NO_CLEARANCE_LIMIT;
    for o in obstacles {
        h = h.min((p - o.center).norm() - o.radius - r);
    }
    if let Some(b) = bounds {
        h = h.min(p.x - b.min.x - r).min(b.max.x - p.x - r).min(p.y - b.min.y - r).min(b.max.y - p.y - r);
    }
    h
}

/// Collision check; returns the verdict and the minimum center distance.
///
/// Touching bodies do not collide.
pub fn check_collision_free(states: &[AgentState], radii: &[f64]) -> (bool, f64) {
    let (ok, _, dist) = pairwise_clearance(states, radii);
    (ok, dist)
}

/// `(collision free, min distance minus radius sum, min center distance)`.
fn pairwise_clearance(states: &[AgentState], radii: &[f64]) -> (bool, f64, f64) {
    let mut min_clear = f64::INFINITY;
    let mut min_dist = f64::INFINITY;
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            let d = (states[i].p - states[j].p).norm();
            min_dist = min_dist.min(d);
            min_clear = min_clear.min(d - radii[i] - radii[j]);
        }
    }
    (min_clear >= 0.0, min_clear, min_dist)
}

fn min_set_gap(sets: &[Ball]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            gap = gap.min(sets[i].gap(&sets[j]));
        }
    }
    gap
}

/// Safeguards that can be switched off to reproduce their failure modes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub disable_tail_constraint: bool,
    pub disable_fos: bool,
    pub disable_lyap_constraint: bool,
}

impl AblationFlags {
    pub fn any(&self) -> bool {
        self.disable_tail_constraint || self.disable_fos || self.disable_lyap_constraint
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nominal_horizon: usize,
    /// `None` uses the smallest sufficient horizon of each agent.
    pub contingency_horizon: Option<usize>,
    pub weights: CostWeights,
    pub solver: SolverOptions,
    pub objective: ObjectiveMode,
    pub ablation: AblationFlags,
    pub max_steps: usize,
    /// Distance to the selected equilibrium that counts as converged.
    pub eps_conv: f64,
    /// Steps the equilibria must stay unchanged before the run terminates.
    pub k_stable: usize,
    /// Abort on the first invariant violation.
    pub strict: bool,
    /// Solve the local problems of one round in parallel.
    pub parallel: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nominal_horizon: 20,
            contingency_horizon: None,
            weights: CostWeights::default(),
            solver: SolverOptions::default(),
            objective: ObjectiveMode::Tracking,
            ablation: AblationFlags::default(),
            max_steps: 300,
            eps_conv: 0.05,
            k_stable: 10,
            strict: false,
            parallel: true,
        }
    }
}

impl SimConfig {
    pub fn contingency_horizon_for(&self, params: &AgentParams) -> usize {
        let min = min_contingency_horizon(params).max(2);
        self.contingency_horizon.map_or(min, |n| n.max(2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.nominal_horizon < 1 {
            return Err(Error::Config("nominal horizon must be >= 1".into()));
        }
        self.weights.validate()?;
        self.solver.validate()?;
        if !(self.eps_conv > 0.0) {
            return Err(Error::Config("eps_conv must be positive".into()));
        }
        Ok(())
    }
}

/// Per-agent part of the closed-loop snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSlot {
    pub id: u32,
    pub params: AgentParams,
    pub state: AgentState,
    pub x_ref: AgentState,
    pub safe_set: ActiveSafeSet,
    /// Lyapunov bound for the next solve.
    pub j_hat: f64,
    pub last_solution: Option<FhocpSolution>,
    pub active: bool,
    /// Consecutive rounds the selected equilibrium stayed unchanged.
    pub eq_stable_steps: usize,
}

impl AgentSlot {
    /// Agent at `x0` with `Γ(x0)` as its first active set and no bound yet.
    pub fn new(id: u32, params: AgentParams, x0: AgentState, x_ref: AgentState) -> Self {
        Self {
            id,
            params,
            state: x0,
            x_ref,
            safe_set: ActiveSafeSet::initial(canonical_safe_set(&x0, &params)),
            j_hat: f64::INFINITY,
            last_solution: None,
            active: true,
            eq_stable_steps: 0,
        }
    }

    pub fn equilibrium(&self) -> Option<Vec2> {
        self.last_solution.as_ref().map(|s| s.contingency.eq.x_bar.p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: usize,
    pub agents: Vec<AgentSlot>,
    pub obstacles: Vec<Obstacle>,
    pub bounds: Option<Bounds>,
}

impl WorldState {
    pub fn new(agents: Vec<AgentSlot>, obstacles: Vec<Obstacle>, bounds: Option<Bounds>) -> Self {
        Self { t: 0, agents, obstacles, bounds }
    }

    pub fn active_agents(&self) -> impl Iterator<Item = &AgentSlot> {
        self.agents.iter().filter(|a| a.active)
    }

    pub fn agent(&self, id: u32) -> Option<&AgentSlot> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Checks the start conditions: admissible states, footprints clear of
    /// obstacles and walls, and pairwise disjoint active sets.
    pub fn validate_initial(&self) -> Result<()> {
        let active: Vec<&AgentSlot> = self.active_agents().collect();
        for a in &active {
            a.params.validate()?;
            if !a.state.is_finite() || a.state.v.norm() > a.params.v_max {
                return Err(Error::Config(format!("agent {} starts with an inadmissible state", a.id)));
            }
            let h = obstacle_clearance(&a.state.p, a.params.r, &self.obstacles, self.bounds.as_ref());
            if h < 0.0 {
                return Err(Error::Config(format!(
                    "agent {} starts inside an obstacle or outside the workspace (clearance {h:.3e})",
                    a.id
                )));
            }
        }
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                let (a, b) = (active[i], active[j]);
                if crate::safeset::overlap_strict(&a.safe_set.active, &b.safe_set.active) {
                    return Err(Error::Config(format!("initial safe sets of agents {} and {} overlap", a.id, b.id)));
                }
            }
        }
        Ok(())
    }
}

/// Logged outcome of one agent in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: u32,
    pub state: AgentState,
    pub input: ControlInput,
    /// Active set used by the solve.
    pub set: Ball,
    /// Freeze flag of that set.
    pub frozen: bool,
    pub j_c: f64,
    pub j_hat: f64,
    pub report: SolveReport,
    pub residual: f64,
    pub equilibrium: Vec2,
}

/// Invariant checks of the transition `t → t+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepChecks {
    /// Min distance minus radius sum between bodies at `t+1`.
    pub min_body_clearance: f64,
    pub min_pair_dist: f64,
    /// Min gap between the active sets selected for `t+1`.
    pub min_set_gap: f64,
    pub max_footprint_violation: f64,
    pub min_obstacle_clearance: f64,
    /// Max of `J_c*(t) − Ĵ(t)` over agents with a finite bound.
    pub max_lyapunov_violation: f64,
    pub max_candidate_residual: f64,
    pub max_cost_identity_error: f64,
    /// Pair counts of freeze outcomes `(χ_i, χ_j)` for `i < j`, indexed `2χ_i + χ_j`.
    pub chi_pairs: [usize; 4],
    pub frozen_next: usize,
}

impl StepChecks {
    /// Descriptions of all violated invariants.
    pub fn violations(&self) -> Vec<String> {
        use tolerances::*;
        let mut out = Vec::new();
        if self.min_body_clearance < -GEOMETRY {
            out.push(format!("collision: body clearance {:.3e}", self.min_body_clearance));
        }
        if self.min_set_gap < -GEOMETRY {
            out.push(format!("safe-set overlap: gap {:.3e}", self.min_set_gap));
        }
        if self.max_footprint_violation > FOOTPRINT {
            out.push(format!("footprint outside active set by {:.3e}", self.max_footprint_violation));
        }
        if self.min_obstacle_clearance < -GEOMETRY {
            out.push(format!("obstacle clearance {:.3e}", self.min_obstacle_clearance));
        }
        if self.max_lyapunov_violation > LYAPUNOV {
            out.push(format!("Lyapunov decrease violated by {:.3e}", self.max_lyapunov_violation));
        }
        if self.max_candidate_residual > CANDIDATE {
            out.push(format!("shifted candidate residual {:.3e}", self.max_candidate_residual));
        }
        if self.max_cost_identity_error > COST_IDENTITY {
            out.push(format!("shifted cost identity error {:.3e}", self.max_cost_identity_error));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub agents: Vec<AgentRecord>,
    /// Min center distance between bodies at `t` (`+∞` with fewer than two agents).
    pub min_pair_dist: f64,
    pub min_set_gap: f64,
    pub freeze_count: usize,
    pub checks: StepChecks,
    /// Plug-and-play events processed at the start of the round.
    pub events: Vec<String>,
}

fn chi_pair_counts(chi: &[bool]) -> [usize; 4] {
    let mut counts = [0; 4];
    for i in 0..chi.len() {
        for j in i + 1..chi.len() {
            counts[2 * chi[i] as usize + chi[j] as usize] += 1;
        }
    }
    counts
}

/// Executes one synchronous round.
pub fn closed_loop_step(world: &WorldState, config: &SimConfig) -> Result<(WorldState, StepRecord)> {
    let active: Vec<usize> = (0..world.agents.len()).filter(|&i| world.agents[i].active).collect();
    let specs = active.iter().map(|&i| build_problem(world, world.agents[i].id, config)).collect::<Result<Vec<_>>>()?;

    let solve = |(k, spec): (usize, &crate::ocp::FhocpSpec)| {
        let slot = &world.agents[active[k]];
        solve_with_fallback(spec, slot.last_solution.as_ref(), &config.solver)
    };
    let solutions: Vec<FhocpSolution> = if config.parallel {
        specs.par_iter().enumerate().map(solve).collect::<Result<Vec<_>>>()?
    } else {
        specs.iter().enumerate().map(solve).collect::<Result<Vec<_>>>()?
    };

    let mut next = world.clone();
    next.t = world.t + 1;
    let mut records = Vec::with_capacity(active.len());
    let mut max_lyap = f64::NEG_INFINITY;
    for (k, &i) in active.iter().enumerate() {
        let slot = &world.agents[i];
        let sol = &solutions[k];
        let u = sol.contingency.inputs[0];
        if slot.j_hat.is_finite() && !config.ablation.disable_lyap_constraint {
            max_lyap = max_lyap.max(sol.j_c - slot.j_hat);
        }
        records.push(AgentRecord {
            id: slot.id,
            state: slot.state,
            input: u,
            set: slot.safe_set.active,
            frozen: slot.safe_set.frozen,
            j_c: sol.j_c,
            j_hat: slot.j_hat,
            report: sol.report,
            residual: sol.residual,
            equilibrium: sol.contingency.eq.x_bar.p,
        });

        let dst = &mut next.agents[i];
        dst.state = propagate(&slot.state, &u.u, slot.params.ts);
        let x_bar = &sol.contingency.eq.x_bar;
        let e_p = slot.state.p - x_bar.p;
        let e_v = slot.state.v - x_bar.v;
        let du = u.u - sol.contingency.eq.u_bar.u;
        dst.j_hat = bound_update(sol.j_c, &e_p, &e_v, &du, &config.weights)?;
        let moved = slot.equilibrium().is_none_or(|p| (p - x_bar.p).norm() > tolerances::EQUILIBRIUM_SHIFT);
        dst.eq_stable_steps = if moved { 0 } else { slot.eq_stable_steps + 1 };
        dst.last_solution = Some(sol.clone());
    }

    // freeze-or-shift on the measured successor states
    let candidates: Vec<Ball> =
        active.iter().map(|&i| canonical_safe_set(&next.agents[i].state, &next.agents[i].params)).collect();
    let actives: Vec<Ball> = active.iter().map(|&i| world.agents[i].safe_set.active).collect();
    let chi =
        if config.ablation.disable_fos { vec![false; active.len()] } else { freeze_indicators(&candidates, &actives)? };
    let updated = fos_update(&candidates, &actives, &chi)?;
    for (k, &i) in active.iter().enumerate() {
        next.agents[i].safe_set.advance(updated[k], chi[k]);
    }

    let checks = transition_checks(world, &next, &active, &solutions, &chi, max_lyap, config)?;
    let states_now: Vec<AgentState> = active.iter().map(|&i| world.agents[i].state).collect();
    let radii: Vec<f64> = active.iter().map(|&i| world.agents[i].params.r).collect();
    let (_, _, min_pair_dist) = pairwise_clearance(&states_now, &radii);
    let record = StepRecord {
        t: world.t,
        agents: records,
        min_pair_dist,
        min_set_gap: min_set_gap(&actives),
        freeze_count: active.iter().filter(|&&i| world.agents[i].safe_set.frozen).count(),
        checks,
        events: Vec::new(),
    };
    if config.strict {
        let violations = record.checks.violations();
        if !violations.is_empty() {
            return Err(Error::InvariantViolation { t: world.t, detail: violations.join("; ") });
        }
    }
    Ok((next, record))
}

fn transition_checks(
    world: &WorldState,
    next: &WorldState,
    active: &[usize],
    solutions: &[FhocpSolution],
    chi: &[bool],
    max_lyap: f64,
    config: &SimConfig,
) -> Result<StepChecks> {
    let states: Vec<AgentState> = active.iter().map(|&i| next.agents[i].state).collect();
    let radii: Vec<f64> = active.iter().map(|&i| next.agents[i].params.r).collect();
    let sets: Vec<Ball> = active.iter().map(|&i| next.agents[i].safe_set.active).collect();
    let (_, min_body_clearance, min_pair_dist) = pairwise_clearance(&states, &radii);

    let mut footprint = f64::NEG_INFINITY;
    let mut obstacle = f64::INFINITY;
    let mut candidate = 0.0_f64;
    let mut identity = 0.0_f64;
    for (k, &i) in active.iter().enumerate() {
        let slot = &next.agents[i];
        let set = &slot.safe_set.active;
        footprint = footprint.max((slot.state.p - set.c).norm() - (set.r - slot.params.r));
        obstacle =
            obstacle.min(obstacle_clearance(&slot.state.p, slot.params.r, &next.obstacles, next.bounds.as_ref()));
        // recursive feasibility witness against the next round's problem
        let spec = build_problem(next, slot.id, config)?;
        let cand = candidate_solution(&solutions[k], &spec, SolveReport::default());
        candidate = candidate.max(cand.residual);
        if slot.j_hat.is_finite() {
            identity = identity.max((cand.j_c - slot.j_hat).abs());
        }
    }
    let _ = world;
    Ok(StepChecks {
        min_body_clearance,
        min_pair_dist,
        min_set_gap: min_set_gap(&sets),
        max_footprint_violation: footprint.max(0.0),
        min_obstacle_clearance: obstacle,
        max_lyapunov_violation: max_lyap.max(0.0),
        max_candidate_residual: candidate,
        max_cost_identity_error: identity,
        chi_pairs: chi_pair_counts(chi),
        frozen_next: chi.iter().filter(|c| **c).count(),
    })
}

/// Aggregate results of a run, derived from its log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps: usize,
    pub terminated: bool,
    pub collision_free: bool,
    /// Min distance minus radius sum over the whole run.
    pub min_body_clearance: f64,
    pub min_pair_dist: f64,
    pub min_set_gap: f64,
    pub disjointness_violations: usize,
    pub max_footprint_violation: f64,
    pub min_obstacle_clearance: f64,
    pub max_lyapunov_violation: f64,
    pub lyapunov_violations: usize,
    pub max_candidate_residual: f64,
    pub candidate_infeasibility_events: usize,
    pub max_cost_identity_error: f64,
    pub fallback_count: usize,
    pub solver_errors: usize,
    pub chi_pairs: [usize; 4],
    pub freeze_events: usize,
    /// Per agent: first round after which it stayed within `eps_conv` of its equilibrium.
    pub steps_to_convergence: Vec<(u32, Option<usize>)>,
    /// Per agent: `J_c(t) / J_c(t_0)` over the rounds it was active.
    pub normalized_cost: Vec<(u32, Vec<f64>)>,
    /// Every agent's `J_c` series is nonincreasing (up to the Lyapunov tolerance).
    pub normalized_cost_nonincreasing: bool,
    /// Per agent: rounds at the end of the run with an unchanged equilibrium.
    pub final_equilibrium_stable_steps: Vec<(u32, usize)>,
    pub joins_accepted: usize,
    pub joins_rejected: usize,
    pub leaves: usize,
    /// Joins where a neighbor representation failed to contain the true active set.
    pub join_check_failures: usize,
    pub invariant_violations: usize,
}

pub struct RunOutput {
    pub metrics: RunMetrics,
    pub log: Vec<StepRecord>,
    pub final_world: WorldState,
}

fn converged(world: &WorldState, config: &SimConfig) -> bool {
    world.active_agents().all(|a| match &a.last_solution {
        Some(sol) => {
            a.state.distance(&sol.contingency.eq.x_bar) <= config.eps_conv && a.eq_stable_steps >= config.k_stable
        }
        None => false,
    })
}

/// Runs the closed loop until convergence or `max_steps`, processing scheduled
/// plug-and-play events at the start of their rounds.
pub fn run_scenario(world: WorldState, events: &[PnpEvent], config: &SimConfig) -> Result<RunOutput> {
    config.validate()?;
    world.validate_initial()?;
    let mut world = world;
    let mut log: Vec<StepRecord> = Vec::new();
    let mut joins = (0usize, 0usize);
    let mut leaves = 0usize;
    let mut terminated = false;
    let mut join_check_failures = 0usize;
    let last_event = events.iter().map(PnpEvent::time).max();

    while world.t < config.max_steps {
        if world.active_agents().next().is_none() && last_event.is_none_or(|t| t < world.t) {
            terminated = true;
            break;
        }
        let mut notes = Vec::new();
        let now = world.t;
        for ev in events.iter().filter(|e| e.time() == now) {
            match ev {
                PnpEvent::Leave { id, .. } => {
                    pnp::leave(*id, &mut world)?;
                    leaves += 1;
                    notes.push(format!("leave {id}"));
                }
                PnpEvent::Join(req) => {
                    let verdict = pnp::try_join(req, &mut world, config)?;
                    if !(verdict.conservative && verdict.reconstruction_contains_sets) {
                        join_check_failures += 1;
                        if config.strict {
                            return Err(Error::InvariantViolation {
                                t: world.t,
                                detail: format!("neighbor representation at join of {} not conservative", req.id),
                            });
                        }
                    }
                    match verdict {
                        JoinVerdict { accepted: true, .. } => {
                            joins.0 += 1;
                            notes.push(format!("join {} accepted", req.id));
                        }
                        JoinVerdict { reason, .. } => {
                            joins.1 += 1;
                            notes.push(format!("join {} rejected: {}", req.id, reason.unwrap_or_default()));
                        }
                    }
                }
            }
        }
        if world.active_agents().next().is_none() {
            world.t += 1;
            continue;
        }
        let (next, mut record) = closed_loop_step(&world, config)?;
        record.events = notes;
        log.push(record);
        world = next;
        if converged(&world, config) && last_event.is_none_or(|t| t < world.t) {
            terminated = true;
            break;
        }
    }

    let mut metrics = compute_metrics(&log, &world, terminated, joins, leaves, config.eps_conv);
    metrics.join_check_failures = join_check_failures;
    metrics.invariant_violations += join_check_failures;
    Ok(RunOutput { metrics, log, final_world: world })
}

/// Derives the run metrics from a log.
pub fn compute_metrics(
    log: &[StepRecord],
    final_world: &WorldState,
    terminated: bool,
    joins: (usize, usize),
    leaves: usize,
    eps_conv: f64,
) -> RunMetrics {
    use tolerances::*;
    let mut m = RunMetrics {
        steps: log.len(),
        terminated,
        collision_free: true,
        min_body_clearance: f64::INFINITY,
        min_pair_dist: f64::INFINITY,
        min_set_gap: f64::INFINITY,
        disjointness_violations: 0,
        max_footprint_violation: 0.0,
        min_obstacle_clearance: f64::INFINITY,
        max_lyapunov_violation: 0.0,
        lyapunov_violations: 0,
        max_candidate_residual: 0.0,
        candidate_infeasibility_events: 0,
        max_cost_identity_error: 0.0,
        fallback_count: 0,
        solver_errors: 0,
        chi_pairs: [0; 4],
        freeze_events: 0,
        steps_to_convergence: Vec::new(),
        normalized_cost: Vec::new(),
        normalized_cost_nonincreasing: true,
        final_equilibrium_stable_steps: Vec::new(),
        joins_accepted: joins.0,
        joins_rejected: joins.1,
        leaves,
        join_check_failures: 0,
        invariant_violations: 0,
    };
    for rec in log {
        let c = &rec.checks;
        if c.min_body_clearance < -GEOMETRY {
            m.collision_free = false;
        }
        m.min_body_clearance = m.min_body_clearance.min(c.min_body_clearance);
        m.min_pair_dist = m.min_pair_dist.min(c.min_pair_dist).min(rec.min_pair_dist);
        m.min_set_gap = m.min_set_gap.min(c.min_set_gap).min(rec.min_set_gap);
        if c.min_set_gap < -GEOMETRY {
            m.disjointness_violations += 1;
        }
        m.max_footprint_violation = m.max_footprint_violation.max(c.max_footprint_violation);
        m.min_obstacle_clearance = m.min_obstacle_clearance.min(c.min_obstacle_clearance);
        m.max_lyapunov_violation = m.max_lyapunov_violation.max(c.max_lyapunov_violation);
        if c.max_lyapunov_violation > LYAPUNOV {
            m.lyapunov_violations += 1;
        }
        m.max_candidate_residual = m.max_candidate_residual.max(c.max_candidate_residual);
        if c.max_candidate_residual > CANDIDATE {
            m.candidate_infeasibility_events += 1;
        }
        m.max_cost_identity_error = m.max_cost_identity_error.max(c.max_cost_identity_error);
        for (acc, v) in m.chi_pairs.iter_mut().zip(c.chi_pairs) {
            *acc += v;
        }
        m.freeze_events += c.frozen_next;
        if !c.violations().is_empty() {
            m.invariant_violations += 1;
        }
        for a in &rec.agents {
            match a.report.status {
                SolveStatus::FallbackUsed => m.fallback_count += 1,
                SolveStatus::Error => m.solver_errors += 1,
                _ => {}
            }
        }
    }

    // per-agent series in order of first appearance
    let mut ids: Vec<u32> = Vec::new();
    for rec in log {
        for a in &rec.agents {
            if !ids.contains(&a.id) {
                ids.push(a.id);
            }
        }
    }
    for id in ids {
        let series: Vec<(usize, &AgentRecord)> =
            log.iter().filter_map(|r| r.agents.iter().find(|a| a.id == id).map(|a| (r.t, a))).collect();
        let j0 = series[0].1.j_c;
        let normalized: Vec<f64> = series.iter().map(|(_, a)| if j0 > 0.0 { a.j_c / j0 } else { 0.0 }).collect();
        for w in series.windows(2) {
            if w[1].1.j_c > w[0].1.j_c + LYAPUNOV {
                m.normalized_cost_nonincreasing = false;
            }
        }
        m.normalized_cost.push((id, normalized));

        // convergence: first t from which the agent stays near its equilibrium
        let eps = eps_conv;
        let mut first: Option<usize> = None;
        for (t, a) in &series {
            let near = (a.state.p - a.equilibrium).norm_squared() + a.state.v.norm_squared() <= eps * eps;
            if near {
                first.get_or_insert(*t);
            } else {
                first = None;
            }
        }
        m.steps_to_convergence.push((id, first));
        let stable = final_world.agent(id).map_or(0, |a| a.eq_stable_steps);
        m.final_equilibrium_stable_steps.push((id, stable));
    }
    m
}
