//! The local finite-horizon optimal control problem (FHOCP) of one agent.
//!
//! The problem couples a nominal tracking plan and a contingency plan through a
//! shared first input. The contingency plan must brake to a stopped equilibrium
//! while staying inside the active safe set, every suffix of it must fit inside
//! the safe set generated at its own start state, and its cost must respect the
//! recursively maintained Lyapunov bound `Ĵ`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate, AgentParams, AgentState, ControlInput, EquilibriumPair};
use crate::safeset::{canonical_radius, Ball};
use crate::sim::{obstacle_clearance, Bounds, Obstacle, SimConfig, WorldState};
use crate::solver::SolveReport;
use crate::{Error, Result, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizons {
    pub n_n: usize,
    pub n_c: usize,
}

impl Horizons {
    pub fn validate(&self, params: &AgentParams) -> Result<()> {
        if self.n_n < 1 {
            return Err(Error::InvalidArgument("nominal horizon must be >= 1".into()));
        }
        let min = min_contingency_horizon(params);
        if self.n_c < min.max(2) {
            return Err(Error::InvalidArgument(format!(
                "contingency horizon {} is below the required {}",
                self.n_c,
                min.max(2)
            )));
        }
        Ok(())
    }
}

/// Diagonal cost weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub q_p: [f64; 2],
    pub q_v: [f64; 2],
    pub r_u: [f64; 2],
    /// Equilibrium-offset weight on `(p, v)`.
    pub p_s: [f64; 4],
    pub q_s: [f64; 4],
    pub r_s: [f64; 2],
    pub gamma: f64,
    pub rho_nom: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q_p: [1.0; 2],
            q_v: [1.0; 2],
            r_u: [1.0; 2],
            p_s: [1.0; 4],
            q_s: [0.1; 4],
            r_s: [0.1; 2],
            gamma: 0.1,
            rho_nom: 100.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let rho = [self.rho_nom];
        let all = self.q_p.iter().chain(&self.q_v).chain(&self.r_u).chain(&self.p_s).chain(&rho);
        if all.copied().any(|w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::InvalidArgument("cost weights must be finite and >= 0".into()));
        }
        // the stage cost must be positive definite for the Lyapunov argument
        if self.q_s.iter().chain(&self.r_s).any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument(
                "contingency stage weights q_s and r_s must be strictly positive".into(),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn state_norm(w: &[f64; 4], dp: &Vec2, dv: &Vec2) -> f64 {
        w[0] * dp.x * dp.x + w[1] * dp.y * dp.y + w[2] * dv.x * dv.x + w[3] * dv.y * dv.y
    }

    #[inline]
    pub(crate) fn vec_norm(w: &[f64; 2], d: &Vec2) -> f64 {
        w[0] * d.x * d.x + w[1] * d.y * d.y
    }
}

/// What the solver minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Nominal tracking objective with the weighted equilibrium offset and slack penalty.
    #[default]
    Tracking,
    /// The contingency cost alone (used when comparing against brute force).
    ContingencyCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyPlan {
    /// `N_c + 1` states.
    pub states: Vec<AgentState>,
    /// `N_c` inputs.
    pub inputs: Vec<ControlInput>,
    pub eq: EquilibriumPair,
}

impl ContingencyPlan {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalPlan {
    pub states: Vec<AgentState>,
    pub inputs: Vec<ControlInput>,
    /// Soft-separation slacks indexed `[neighbor * N_n + k]`.
    pub slacks: Vec<f64>,
}

/// Everything an agent needs to pose its local problem at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhocpSpec {
    pub agent_id: u32,
    pub params: AgentParams,
    pub x0: AgentState,
    pub active_set: Ball,
    pub neighbor_sets: Vec<Ball>,
    pub obstacles: Vec<Obstacle>,
    pub bounds: Option<Bounds>,
    pub x_ref: AgentState,
    /// Lyapunov bound; `+∞` disables the bound.
    pub j_hat: f64,
    pub horizons: Horizons,
    pub weights: CostWeights,
    pub objective: ObjectiveMode,
    /// Enforce the tail-containment constraint.
    pub enforce_tail: bool,
}

impl FhocpSpec {
    /// A single agent with no neighbors, obstacles or bound, using `Γ(x0)` as active set.
    pub fn isolated(x0: AgentState, x_ref: AgentState, params: AgentParams) -> Self {
        let n_c = min_contingency_horizon(&params).max(2);
        Self {
            agent_id: 0,
            params,
            x0,
            active_set: crate::safeset::canonical_safe_set(&x0, &params),
            neighbor_sets: Vec::new(),
            obstacles: Vec::new(),
            bounds: None,
            x_ref,
            j_hat: f64::INFINITY,
            horizons: Horizons { n_n: 20, n_c },
            weights: CostWeights::default(),
            objective: ObjectiveMode::Tracking,
            enforce_tail: true,
        }
    }

    /// Body clearance to obstacles and workspace walls at `p`.
    pub fn clearance(&self, p: &Vec2) -> f64 {
        obstacle_clearance(p, self.params.r, &self.obstacles, self.bounds.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhocpSolution {
    pub nominal: NominalPlan,
    pub contingency: ContingencyPlan,
    /// Nominal objective value.
    pub j: f64,
    /// Contingency cost value.
    pub j_c: f64,
    /// Maximum constraint violation against the spec it was solved for.
    pub residual: f64,
    pub report: SolveReport,
    /// Constraint multipliers of the transcribed problem, reused as a warm start.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub multipliers: Vec<f64>,
}

/// Per-group constraint violations in natural units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualBreakdown {
    pub structure: f64,
    pub initial: f64,
    pub shared_input: f64,
    pub dynamics: f64,
    pub state_bounds: f64,
    pub input_bounds: f64,
    pub obstacles: f64,
    pub terminal_state: f64,
    pub terminal_equilibrium: f64,
    pub terminal_in_set: f64,
    pub containment: f64,
    pub tail: f64,
    pub lyapunov: f64,
    pub soft_separation: f64,
}

impl ResidualBreakdown {
    fn entries(&self) -> [(&'static str, f64); 14] {
        [
            ("structure", self.structure),
            ("initial", self.initial),
            ("shared_input", self.shared_input),
            ("dynamics", self.dynamics),
            ("state_bounds", self.state_bounds),
            ("input_bounds", self.input_bounds),
            ("obstacles", self.obstacles),
            ("terminal_state", self.terminal_state),
            ("terminal_equilibrium", self.terminal_equilibrium),
            ("terminal_in_set", self.terminal_in_set),
            ("containment", self.containment),
            ("tail", self.tail),
            ("lyapunov", self.lyapunov),
            ("soft_separation", self.soft_separation),
        ]
    }

    pub fn max(&self) -> f64 {
        self.entries().iter().fold(0.0, |m, (_, v)| m.max(*v))
    }

    /// The group with the largest violation.
    pub fn worst(&self) -> (&'static str, f64) {
        self.entries().into_iter().fold(("none", 0.0), |best, e| if e.1 > best.1 { e } else { best })
    }
}

/// Smallest contingency horizon that can brake from `v_max` to rest.
pub fn min_contingency_horizon(params: &AgentParams) -> usize {
    let ratio = params.v_max / (params.a_min_mag * params.ts);
    // guard against 2.0000000000000004-style rounding of exact ratios
    let steps = (ratio - 1e-12).ceil().max(0.0);
    1 + steps as usize
}

/// Contingency stage cost `ℓ(e, du)`.
pub fn stage_cost(e_p: &Vec2, e_v: &Vec2, du: &Vec2, w: &CostWeights) -> f64 {
    CostWeights::state_norm(&w.q_s, e_p, e_v) + CostWeights::vec_norm(&w.r_s, du)
}

/// Equilibrium offset cost `V(x̄, x_ref)`.
pub fn offset_cost(x_bar: &AgentState, x_ref: &AgentState, w: &CostWeights) -> f64 {
    CostWeights::state_norm(&w.p_s, &(x_bar.p - x_ref.p), &(x_bar.v - x_ref.v))
}

pub fn contingency_cost(plan: &ContingencyPlan, x_ref: &AgentState, w: &CostWeights) -> f64 {
    let x_bar = &plan.eq.x_bar;
    let u_bar = &plan.eq.u_bar.u;
    let stages: f64 = plan
        .states
        .iter()
        .zip(&plan.inputs)
        .map(|(x, u)| stage_cost(&(x.p - x_bar.p), &(x.v - x_bar.v), &(u.u - u_bar), w))
        .sum();
    stages + offset_cost(x_bar, x_ref, w)
}

pub fn nominal_objective(nom: &NominalPlan, x_ref: &AgentState, eq: &EquilibriumPair, w: &CostWeights) -> f64 {
    let mut j = 0.0;
    for (x, u) in nom.states.iter().zip(&nom.inputs) {
        j += CostWeights::vec_norm(&w.q_p, &(x.p - x_ref.p))
            + CostWeights::vec_norm(&w.q_v, &x.v)
            + CostWeights::vec_norm(&w.r_u, &u.u);
    }
    if let Some(last) = nom.states.last() {
        j += CostWeights::vec_norm(&w.q_p, &(last.p - x_ref.p));
    }
    j + w.gamma * offset_cost(&eq.x_bar, x_ref, w) + w.rho_nom * nom.slacks.iter().sum::<f64>()
}

/// Value minimized by the solver for `spec`.
pub fn objective_value(spec: &FhocpSpec, nom: &NominalPlan, cont: &ContingencyPlan) -> f64 {
    match spec.objective {
        ObjectiveMode::Tracking => nominal_objective(nom, &spec.x_ref, &cont.eq, &spec.weights),
        ObjectiveMode::ContingencyCost => contingency_cost(cont, &spec.x_ref, &spec.weights),
    }
}

fn max_dynamics_gap(states: &[AgentState], inputs: &[ControlInput], ts: f64) -> f64 {
    states.windows(2).zip(inputs).map(|(w, u)| w[1].distance(&propagate(&w[0], &u.u, ts))).fold(0.0, f64::max)
}

pub fn residual_breakdown(sol: &FhocpSolution, spec: &FhocpSpec) -> ResidualBreakdown {
    let mut out = ResidualBreakdown::default();
    let params = &spec.params;
    let nom = &sol.nominal;
    let cont = &sol.contingency;
    let (n_n, n_c) = (spec.horizons.n_n, spec.horizons.n_c);
    let n_nb = spec.neighbor_sets.len();
    if nom.states.len() != n_n + 1
        || nom.inputs.len() != n_n
        || nom.slacks.len() != n_nb * n_n
        || cont.states.len() != n_c + 1
        || cont.inputs.len() != n_c
    {
        out.structure = f64::INFINITY;
        return out;
    }
    let finite = nom.states.iter().chain(&cont.states).all(AgentState::is_finite)
        && nom.inputs.iter().chain(&cont.inputs).all(|u| u.u.iter().all(|c| c.is_finite()))
        && nom.slacks.iter().all(|s| s.is_finite());
    if !finite {
        out.structure = f64::INFINITY;
        return out;
    }

    out.initial = nom.states[0].distance(&spec.x0).max(cont.states[0].distance(&spec.x0));
    out.shared_input = (nom.inputs[0].u - cont.inputs[0].u).norm();
    out.dynamics = max_dynamics_gap(&nom.states, &nom.inputs, params.ts).max(max_dynamics_gap(
        &cont.states,
        &cont.inputs,
        params.ts,
    ));
    out.state_bounds =
        nom.states[1..].iter().chain(&cont.states[1..]).map(|x| x.v.norm() - params.v_max).fold(0.0, f64::max);
    out.input_bounds = nom.inputs.iter().chain(&cont.inputs).map(|u| u.u.norm() - params.a_max).fold(0.0, f64::max);
    out.obstacles = cont.states.iter().map(|x| -spec.clearance(&x.p)).fold(0.0, f64::max);

    let eq = &cont.eq;
    out.terminal_state = cont.states[n_c].distance(&eq.x_bar);
    out.terminal_equilibrium = propagate(&eq.x_bar, &eq.u_bar.u, params.ts).distance(&eq.x_bar)
        + (eq.x_bar.v.norm() - params.v_max).max(0.0)
        + (eq.u_bar.u.norm() - params.a_max).max(0.0);

    let set = &spec.active_set;
    let room = set.r - params.r;
    out.terminal_in_set = ((eq.x_bar.p - set.c).norm() - room).max(0.0);
    out.containment = cont.states.iter().map(|x| (x.p - set.c).norm() - room).fold(0.0, f64::max);

    if spec.enforce_tail {
        let mut worst = 0.0_f64;
        for k in 0..n_c {
            let xk = &cont.states[k];
            let room_k = canonical_radius(xk.v.norm(), params) - params.r;
            for xl in &cont.states[k + 1..] {
                worst = worst.max((xl.p - xk.p).norm() - room_k);
            }
        }
        out.tail = worst;
    }

    if spec.j_hat.is_finite() {
        let j_c = contingency_cost(cont, &spec.x_ref, &spec.weights);
        out.lyapunov = (j_c - spec.j_hat).max(0.0);
    }

    let mut soft = 0.0_f64;
    for (j, nb) in spec.neighbor_sets.iter().enumerate() {
        for k in 0..n_n {
            let x = &nom.states[k];
            let s = nom.slacks[j * n_n + k];
            let d = canonical_radius(x.v.norm(), params) + nb.r;
            let reach = ((x.p - nb.c).norm_squared() + s.max(0.0)).sqrt();
            soft = soft.max(d - reach).max(-s);
        }
    }
    out.soft_separation = soft;
    out
}

pub fn constraint_residual(sol: &FhocpSolution, spec: &FhocpSpec) -> f64 {
    residual_breakdown(sol, spec).max()
}

/// Braking plan from `x0`: decelerate at `a_min_mag` against the velocity until stopped.
pub fn braking_plan(x0: &AgentState, params: &AgentParams, n_c: usize) -> ContingencyPlan {
    let mut states = Vec::with_capacity(n_c + 1);
    let mut inputs = Vec::with_capacity(n_c);
    states.push(*x0);
    let mut x = *x0;
    for _ in 0..n_c {
        let speed = x.v.norm();
        let u = if speed == 0.0 {
            Vec2::zeros()
        } else if speed <= params.a_min_mag * params.ts {
            -x.v / params.ts
        } else {
            -x.v * (params.a_min_mag / speed)
        };
        x = propagate(&x, &u, params.ts);
        if x.v.norm() <= 1e-15 {
            x.v = Vec2::zeros();
        }
        inputs.push(ControlInput::new(u));
        states.push(x);
    }
    let eq = EquilibriumPair::stopped_at(x.p);
    ContingencyPlan { states, inputs, eq }
}

/// Nominal plan that follows `cont` and then rests at its equilibrium.
pub fn nominal_completion(cont: &ContingencyPlan, n_n: usize, ts: f64) -> (Vec<AgentState>, Vec<ControlInput>) {
    let mut states = Vec::with_capacity(n_n + 1);
    let mut inputs = Vec::with_capacity(n_n);
    for k in 0..n_n {
        inputs.push(cont.inputs.get(k).copied().unwrap_or(cont.eq.u_bar));
    }
    states.push(cont.states[0]);
    for k in 0..n_n {
        let next = match cont.states.get(k + 1) {
            Some(s) => *s,
            None => propagate(&states[k], &inputs[k].u, ts),
        };
        states.push(next);
    }
    (states, inputs)
}

/// Smallest nonnegative slacks that satisfy the soft separation for `states`.
pub fn minimal_slacks(states: &[AgentState], spec: &FhocpSpec) -> Vec<f64> {
    let n_n = spec.horizons.n_n;
    let mut slacks = Vec::with_capacity(spec.neighbor_sets.len() * n_n);
    for nb in &spec.neighbor_sets {
        for x in &states[..n_n] {
            let d = canonical_radius(x.v.norm(), &spec.params) + nb.r;
            slacks.push((d * d - (x.p - nb.c).norm_squared()).max(0.0));
        }
    }
    slacks
}

/// Evaluates costs and residual of a plan pair against `spec`.
pub fn assemble_solution(
    spec: &FhocpSpec,
    nominal: NominalPlan,
    contingency: ContingencyPlan,
    report: SolveReport,
) -> FhocpSolution {
    let j = nominal_objective(&nominal, &spec.x_ref, &contingency.eq, &spec.weights);
    let j_c = contingency_cost(&contingency, &spec.x_ref, &spec.weights);
    let mut sol = FhocpSolution { nominal, contingency, j, j_c, residual: 0.0, report, multipliers: Vec::new() };
    sol.residual = constraint_residual(&sol, spec);
    sol
}

/// Shifted contingency candidate: advance one step and pad with the equilibrium input.
pub fn shift_candidate(prev: &FhocpSolution, params: &AgentParams) -> ContingencyPlan {
    let plan = &prev.contingency;
    let n_c = plan.inputs.len();
    let mut states: Vec<AgentState> = plan.states[1..].to_vec();
    let mut inputs: Vec<ControlInput> = plan.inputs[1..].to_vec();
    inputs.push(plan.eq.u_bar);
    let last = states[n_c - 1];
    states.push(propagate(&last, &plan.eq.u_bar.u, params.ts));
    ContingencyPlan { states, inputs, eq: plan.eq }
}

/// Shifted candidate completed with a nominal plan equal to it and minimal slacks.
pub fn candidate_solution(prev: &FhocpSolution, spec: &FhocpSpec, report: SolveReport) -> FhocpSolution {
    let contingency = shift_candidate(prev, &spec.params);
    let (states, inputs) = nominal_completion(&contingency, spec.horizons.n_n, spec.params.ts);
    let slacks = minimal_slacks(&states, spec);
    let nominal = NominalPlan { states, inputs, slacks };
    assemble_solution(spec, nominal, contingency, report)
}

/// Lyapunov bound for the next step.
pub fn bound_update(j_star_prev: f64, e_p: &Vec2, e_v: &Vec2, du: &Vec2, w: &CostWeights) -> Result<f64> {
    if !j_star_prev.is_finite() {
        return Ok(f64::INFINITY);
    }
    let l = stage_cost(e_p, e_v, du, w);
    let next = j_star_prev - l;
    if next < -1e-9 * j_star_prev.abs().max(1.0) {
        return Err(Error::Internal(format!("stage cost {l} exceeds the contingency cost {j_star_prev}")));
    }
    Ok(next.max(0.0))
}

/// Poses the local problem of agent `id` from a world snapshot.
pub fn build_problem(world: &WorldState, id: u32, config: &SimConfig) -> Result<FhocpSpec> {
    let me = world
        .agents
        .iter()
        .find(|a| a.id == id && a.active)
        .ok_or_else(|| Error::InvalidArgument(format!("no active agent with id {id}")))?;
    let neighbor_sets = world.agents.iter().filter(|a| a.active && a.id != id).map(|a| a.safe_set.active).collect();
    let n_c = config.contingency_horizon_for(&me.params);
    Ok(FhocpSpec {
        agent_id: id,
        params: me.params,
        x0: me.state,
        active_set: me.safe_set.active,
        neighbor_sets,
        obstacles: world.obstacles.clone(),
        bounds: world.bounds,
        x_ref: me.x_ref,
        j_hat: if config.ablation.disable_lyap_constraint { f64::INFINITY } else { me.j_hat },
        horizons: Horizons { n_n: config.nominal_horizon, n_c },
        weights: config.weights,
        objective: config.objective,
        enforce_tail: !config.ablation.disable_tail_constraint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolveReport;
    use approx::assert_relative_eq;

    fn rest_plan(p: Vec2, n_c: usize) -> ContingencyPlan {
        ContingencyPlan {
            states: vec![AgentState::at_rest(p); n_c + 1],
            inputs: vec![ControlInput::zero(); n_c],
            eq: EquilibriumPair::stopped_at(p),
        }
    }

    #[test]
    fn horizon_bound() {
        let p = AgentParams::default();
        assert_eq!(min_contingency_horizon(&p), 10);
        assert_eq!(min_contingency_horizon(&AgentParams { v_max: 0.0, ..p }), 1);
        assert_eq!(min_contingency_horizon(&AgentParams { v_max: 0.35, ..p }), 2);
    }

    #[test]
    fn contingency_cost_examples() {
        let w = CostWeights::default();
        let plan = rest_plan(Vec2::new(1.0, 1.0), 10);
        assert_eq!(contingency_cost(&plan, &AgentState::at_rest(Vec2::new(1.0, 1.0)), &w), 0.0);
        let r = AgentState::at_rest(Vec2::new(1.0, 3.0));
        assert_relative_eq!(contingency_cost(&plan, &r, &w), 4.0, epsilon = 1e-15);

        let single = ContingencyPlan {
            states: vec![AgentState::at_rest(Vec2::new(1.0, 0.0)), AgentState::at_rest(Vec2::zeros())],
            inputs: vec![ControlInput::zero()],
            eq: EquilibriumPair::stopped_at(Vec2::zeros()),
        };
        assert_relative_eq!(contingency_cost(&single, &AgentState::at_rest(Vec2::zeros()), &w), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn nominal_objective_examples() {
        let w = CostWeights::default();
        let x = AgentState::at_rest(Vec2::new(2.0, 2.0));
        let nom = NominalPlan { states: vec![x; 4], inputs: vec![ControlInput::zero(); 3], slacks: vec![] };
        let eq = EquilibriumPair::stopped_at(x.p);
        assert_eq!(nominal_objective(&nom, &x, &eq, &w), 0.0);
        let off = EquilibriumPair::stopped_at(Vec2::new(3.0, 2.0));
        assert_relative_eq!(nominal_objective(&nom, &x, &off, &w), 0.1, epsilon = 1e-15);
        let slacked = NominalPlan { slacks: vec![0.01], ..nom };
        assert_relative_eq!(nominal_objective(&slacked, &x, &eq, &w), 1.0, epsilon = 1e-12);
    }

    fn rest_solution(spec: &FhocpSpec) -> FhocpSolution {
        let cont = rest_plan(spec.x0.p, spec.horizons.n_c);
        let (states, inputs) = nominal_completion(&cont, spec.horizons.n_n, spec.params.ts);
        let slacks = minimal_slacks(&states, spec);
        assemble_solution(spec, NominalPlan { states, inputs, slacks }, cont, SolveReport::default())
    }

    #[test]
    fn residual_of_simulated_plan_is_zero() {
        let p = AgentParams::default();
        let x0 = AgentState::new(Vec2::zeros(), Vec2::new(1.5, 0.5));
        let mut spec = FhocpSpec::isolated(x0, AgentState::at_rest(Vec2::new(5.0, 0.0)), p);
        spec.active_set = Ball::new(Vec2::zeros(), 10.0);
        let cont = braking_plan(&x0, &p, spec.horizons.n_c);
        let (states, inputs) = nominal_completion(&cont, spec.horizons.n_n, spec.params.ts);
        let sol =
            assemble_solution(&spec, NominalPlan { states, inputs, slacks: vec![] }, cont, SolveReport::default());
        let b = residual_breakdown(&sol, &spec);
        assert_eq!(b.initial, 0.0);
        assert!(b.dynamics < 1e-15, "{b:?}");
        assert!(sol.residual < 1e-12, "{b:?}");
    }

    #[test]
    fn containment_violation_is_reported_in_meters() {
        let p = AgentParams::default();
        let x0 = AgentState::at_rest(Vec2::zeros());
        let spec = FhocpSpec::isolated(x0, x0, p);
        let mut sol = rest_solution(&spec);
        assert_eq!(sol.residual, 0.0);
        let room = spec.active_set.r - p.r;
        let p_far = Vec2::new(room + 0.01, 0.0);
        sol.contingency.states[3].p = p_far;
        assert!(residual_breakdown(&sol, &spec).containment >= 0.01 - 1e-12);
        assert!(constraint_residual(&sol, &spec) >= 0.01 - 1e-12);
    }

    #[test]
    fn moving_equilibrium_is_flagged() {
        let p = AgentParams::default();
        let x0 = AgentState::at_rest(Vec2::zeros());
        let spec = FhocpSpec::isolated(x0, x0, p);
        let mut sol = rest_solution(&spec);
        sol.contingency.eq.x_bar.v = Vec2::new(0.1, 0.0);
        let b = residual_breakdown(&sol, &spec);
        // the fixed-point gap is the position drift Ts‖v̄‖ plus the velocity mismatch
        assert!(b.terminal_equilibrium >= 0.1 * 0.1 - 1e-15);
        assert!(b.terminal_state >= 0.1 - 1e-15);
    }

    #[test]
    fn infinite_bound_ignores_cost() {
        let p = AgentParams::default();
        let x0 = AgentState::at_rest(Vec2::zeros());
        let spec = FhocpSpec::isolated(x0, AgentState::at_rest(Vec2::new(100.0, 0.0)), p);
        let sol = rest_solution(&spec);
        assert!(sol.j_c > 1e3);
        assert_eq!(residual_breakdown(&sol, &spec).lyapunov, 0.0);
        let bounded = FhocpSpec { j_hat: 1.0, ..spec };
        assert!(residual_breakdown(&sol, &bounded).lyapunov > 1e3);
    }

    #[test]
    fn shift_of_rest_plan_is_identity() {
        let spec = FhocpSpec::isolated(
            AgentState::at_rest(Vec2::new(1.0, 2.0)),
            AgentState::at_rest(Vec2::zeros()),
            AgentParams::default(),
        );
        let sol = rest_solution(&spec);
        assert_eq!(shift_candidate(&sol, &spec.params), sol.contingency);
    }

    #[test]
    fn shift_of_braking_plan() {
        let p = AgentParams::default();
        let x0 = AgentState::new(Vec2::zeros(), Vec2::new(0.7, 0.0));
        let spec = FhocpSpec { horizons: Horizons { n_n: 3, n_c: 3 }, ..FhocpSpec::isolated(x0, x0, p) };
        let plan = braking_plan(&x0, &p, 3);
        // 0.7 m/s brakes in two steps of 3.5 m/s²
        assert_relative_eq!(plan.inputs[0].u.x, -3.5, epsilon = 1e-12);
        assert_relative_eq!(plan.inputs[1].u.x, -3.5, epsilon = 1e-12);
        assert_eq!(plan.inputs[2].u.x, 0.0);
        assert_relative_eq!(plan.eq.x_bar.p.x, 0.07, epsilon = 1e-12);

        let (states, inputs) = nominal_completion(&plan, 3, p.ts);
        let sol = assemble_solution(
            &spec,
            NominalPlan { states, inputs, slacks: vec![] },
            plan.clone(),
            SolveReport::default(),
        );
        let cand = shift_candidate(&sol, &p);
        assert_eq!(cand.states[0], step_of(&plan.states[0], &plan.inputs[0]));
        assert_eq!(cand.states[..3], plan.states[1..]);
        assert_eq!(cand.inputs[..2], plan.inputs[1..]);
        assert_eq!(cand.inputs[2], ControlInput::zero());
        assert_eq!(cand.states[3], plan.eq.x_bar);
        assert_eq!(cand.eq, plan.eq);
    }

    fn step_of(x: &AgentState, u: &ControlInput) -> AgentState {
        crate::dynamics::step(x, u, &AgentParams::default()).unwrap()
    }

    #[test]
    fn bound_update_examples() {
        let w = CostWeights::default();
        let z = Vec2::zeros();
        assert_eq!(bound_update(5.0, &z, &z, &z, &w).unwrap(), 5.0);
        // ℓ = 0.1·(1 + 1 + 0) + 0.1·1 = 0.3
        let b = bound_update(5.0, &Vec2::new(1.0, 0.0), &Vec2::new(0.0, 1.0), &Vec2::new(1.0, 0.0), &w).unwrap();
        assert_relative_eq!(b, 4.7, epsilon = 1e-14);
        assert!(bound_update(0.1, &Vec2::new(10.0, 0.0), &z, &z, &w).is_err());
        assert_eq!(bound_update(f64::INFINITY, &z, &z, &z, &w).unwrap(), f64::INFINITY);
    }

    #[test]
    fn weights_validation() {
        assert!(CostWeights::default().validate().is_ok());
        let bad = CostWeights { q_s: [0.0; 4], ..CostWeights::default() };
        assert!(bad.validate().is_err());
    }
}
