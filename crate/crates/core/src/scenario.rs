//! Scenario files and bundled presets.
//!
//! A scenario is a single JSON document. Everything except the agent list has a
//! default, so `{"agents": [{"id": 0, "p0": [0, 0], "p_ref": [3, 0]}]}` is a
//! complete file. Random scenarios leave `agents` empty and give a `random`
//! block; the agents are then drawn from `seed`.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentParams, AgentState};
use crate::ocp::{CostWeights, ObjectiveMode};
use crate::pnp::{JoinRequest, PnpEvent};
use crate::safeset::{canonical_safe_set, overlap_strict, radius_upper_bound};
use crate::sim::{AblationFlags, AgentSlot, Bounds, Obstacle, SimConfig, WorldState};
use crate::solver::SolverOptions;
use crate::{Error, Result, Vec2};

pub const PRESETS: [&str; 7] =
    ["density-5", "density-10", "density-20", "bottleneck", "pnp", "tail-counterexample", "fos-counterexample"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: u32,
    #[serde(default)]
    pub params: AgentParams,
    pub p0: Vec2,
    #[serde(default = "Vec2::zeros")]
    pub v0: Vec2,
    pub p_ref: Vec2,
}

impl AgentSpec {
    fn slot(&self) -> AgentSlot {
        AgentSlot::new(self.id, self.params, AgentState::new(self.p0, self.v0), AgentState::at_rest(self.p_ref))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    Join {
        time: usize,
        id: u32,
        #[serde(default)]
        params: AgentParams,
        p0: Vec2,
        #[serde(default = "Vec2::zeros")]
        v0: Vec2,
        p_ref: Vec2,
    },
    Leave {
        time: usize,
        id: u32,
    },
}

impl EventSpec {
    pub fn time(&self) -> usize {
        match self {
            EventSpec::Join { time, .. } | EventSpec::Leave { time, .. } => *time,
        }
    }

    pub fn to_event(&self) -> PnpEvent {
        match *self {
            EventSpec::Join { time, id, params, p0, v0, p_ref } => PnpEvent::Join(JoinRequest {
                id,
                params,
                state: AgentState::new(p0, v0),
                x_ref: AgentState::at_rest(p_ref),
                time,
            }),
            EventSpec::Leave { time, id } => PnpEvent::Leave { time, id },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    #[serde(default = "default_nominal")]
    pub nominal: usize,
    /// Omitted: smallest sufficient horizon per agent.
    #[serde(default)]
    pub contingency: Option<usize>,
}

fn default_nominal() -> usize {
    20
}

impl Default for HorizonSpec {
    fn default() -> Self {
        Self { nominal: default_nominal(), contingency: None }
    }
}

/// Random placement of starts and references in a square workspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    pub agents: usize,
    /// Side length [m]. Defaults to 20 m up to ten agents, scaled with sqrt(M) above.
    #[serde(default)]
    pub side: Option<f64>,
    #[serde(default)]
    pub params: AgentParams,
}

impl RandomSpec {
    pub fn side(&self) -> f64 {
        self.side.unwrap_or_else(|| 20.0 * (self.agents as f64 / 10.0).sqrt().max(1.0))
    }
}

fn default_max_steps() -> usize {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub random: Option<RandomSpec>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub bounds: Option<Bounds>,
    #[serde(default)]
    pub horizons: HorizonSpec,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub objective: ObjectiveMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub pnp_events: Vec<EventSpec>,
    #[serde(default)]
    pub ablation: AblationFlags,
}

impl ScenarioConfig {
    /// Fills the agent list of a random scenario from `seed`. No-op otherwise.
    pub fn materialize(&mut self) -> Result<()> {
        if let (Some(spec), true) = (self.random, self.agents.is_empty()) {
            self.agents = random_agents(&spec, self.seed)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() && self.random.is_none() && self.pnp_events.is_empty() {
            return Err(Error::Config("agents: scenario has no agents".into()));
        }
        let mut ids = HashSet::new();
        for a in &self.agents {
            if !ids.insert(a.id) {
                return Err(Error::Config(format!("agents: duplicate id {}", a.id)));
            }
            a.params.validate().map_err(|e| Error::Config(format!("agents[{}].params: {e}", a.id)))?;
        }
        for (k, ev) in self.pnp_events.iter().enumerate() {
            if ev.time() > self.max_steps {
                return Err(Error::Config(format!(
                    "pnp_events[{k}].time: {} outside [0, {}]",
                    ev.time(),
                    self.max_steps
                )));
            }
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0 && o.radius.is_finite()) {
                return Err(Error::Config(format!("obstacles[{k}].radius must be positive")));
            }
        }
        if let Some(b) = &self.bounds {
            if !(b.min.x < b.max.x && b.min.y < b.max.y) {
                return Err(Error::Config("bounds: min must be below max".into()));
            }
        }
        if self.horizons.nominal < 1 {
            return Err(Error::Config("horizons.nominal must be >= 1".into()));
        }
        self.weights.validate().map_err(|e| Error::Config(format!("weights: {e}")))?;
        self.solver.validate().map_err(|e| Error::Config(format!("solver: {e}")))?;
        for i in 0..self.agents.len() {
            for j in i + 1..self.agents.len() {
                let (a, b) = (&self.agents[i], &self.agents[j]);
                let sa = canonical_safe_set(&AgentState::new(a.p0, a.v0), &a.params);
                let sb = canonical_safe_set(&AgentState::new(b.p0, b.v0), &b.params);
                if overlap_strict(&sa, &sb) {
                    return Err(Error::Config(format!("initial safe sets of agents {} and {} overlap", a.id, b.id)));
                }
            }
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            nominal_horizon: self.horizons.nominal,
            contingency_horizon: self.horizons.contingency,
            weights: self.weights,
            solver: self.solver,
            objective: self.objective,
            ablation: self.ablation,
            max_steps: self.max_steps,
            ..SimConfig::default()
        }
    }

    pub fn world(&self) -> WorldState {
        WorldState::new(self.agents.iter().map(AgentSpec::slot).collect(), self.obstacles.clone(), self.bounds)
    }

    pub fn events(&self) -> Vec<PnpEvent> {
        self.pnp_events.iter().map(EventSpec::to_event).collect()
    }
}

/// Parses, materializes and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let mut cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    cfg.materialize()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

/// Starts and references drawn uniformly, at rest, pairwise at least `2·R_max`
/// apart so that every initial set and every reference equilibrium is
/// separated.
pub fn random_agents(spec: &RandomSpec, seed: u64) -> Result<Vec<AgentSpec>> {
    spec.params.validate()?;
    let side = spec.side();
    let sep = 2.0 * radius_upper_bound(&spec.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |taken: &[Vec2]| -> Result<Vec2> {
        for _ in 0..10_000 {
            let p = Vec2::new(rng.gen_range(-side / 2.0..side / 2.0), rng.gen_range(-side / 2.0..side / 2.0));
            if taken.iter().all(|q| (p - q).norm() >= sep) {
                return Ok(p);
            }
        }
        Err(Error::Config(format!("random: cannot place {} agents {sep:.3} m apart in a {side} m square", spec.agents)))
    };
    let mut starts: Vec<Vec2> = Vec::with_capacity(spec.agents);
    let mut refs: Vec<Vec2> = Vec::with_capacity(spec.agents);
    for _ in 0..spec.agents {
        let p = draw(&starts)?;
        starts.push(p);
        let q = draw(&refs)?;
        refs.push(q);
    }
    Ok((0..spec.agents)
        .map(|i| AgentSpec { id: i as u32, params: spec.params, p0: starts[i], v0: Vec2::zeros(), p_ref: refs[i] })
        .collect())
}

fn at_rest(id: u32, p0: [f64; 2], p_ref: [f64; 2]) -> AgentSpec {
    AgentSpec {
        id,
        params: AgentParams::default(),
        p0: Vec2::new(p0[0], p0[1]),
        v0: Vec2::zeros(),
        p_ref: Vec2::new(p_ref[0], p_ref[1]),
    }
}

fn base(name: &str, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        agents: Vec::new(),
        random: None,
        obstacles: Vec::new(),
        bounds: None,
        horizons: HorizonSpec::default(),
        weights: CostWeights::default(),
        solver: SolverOptions::default(),
        objective: ObjectiveMode::default(),
        seed,
        max_steps: 300,
        pnp_events: Vec::new(),
        ablation: AblationFlags::default(),
    }
}

/// Bundled scenario by name. Geometry of the obstacle presets is approximate.
pub fn preset(name: &str, seed: u64) -> Result<ScenarioConfig> {
    let mut cfg = base(name, seed);
    match name {
        "density-5" | "density-10" | "density-20" => {
            let m: usize = name["density-".len()..].parse().expect("preset name");
            cfg.random = Some(RandomSpec { agents: m, side: None, params: AgentParams::default() });
        }
        "bottleneck" => {
            // two discs leave a 1.4 m passage around the origin
            cfg.obstacles = vec![
                Obstacle { center: Vec2::new(0.0, 2.5), radius: 1.8 },
                Obstacle { center: Vec2::new(0.0, -2.5), radius: 1.8 },
            ];
            cfg.agents = vec![
                at_rest(0, [-6.0, 1.0], [6.0, -1.0]),
                at_rest(1, [-6.0, -1.0], [6.0, 1.0]),
                at_rest(2, [6.0, 1.0], [-6.0, -1.0]),
                at_rest(3, [6.0, -1.0], [-6.0, 1.0]),
            ];
        }
        "pnp" => {
            cfg.agents = vec![
                at_rest(0, [-6.0, 0.0], [6.0, 0.0]),
                at_rest(1, [0.0, -6.0], [0.0, 6.0]),
                at_rest(2, [6.0, 6.0], [-6.0, -6.0]),
            ];
            let join = |time, id, p0: [f64; 2], p_ref: [f64; 2]| EventSpec::Join {
                time,
                id,
                params: AgentParams::default(),
                p0: Vec2::new(p0[0], p0[1]),
                v0: Vec2::zeros(),
                p_ref: Vec2::new(p_ref[0], p_ref[1]),
            };
            cfg.pnp_events = vec![
                join(10, 3, [-8.0, 8.0], [8.0, -8.0]),
                join(20, 4, [8.0, -8.0], [-8.0, 4.0]),
                EventSpec::Leave { time: 25, id: 1 },
                join(30, 5, [0.0, -9.0], [3.0, 9.0]),
            ];
        }
        "tail-counterexample" => {
            // fast start with the reference behind: the plan wants to turn inside the set
            cfg.agents = vec![AgentSpec {
                id: 0,
                params: AgentParams::default(),
                p0: Vec2::zeros(),
                v0: Vec2::new(3.0, 0.0),
                p_ref: Vec2::new(-8.0, 0.0),
            }];
            cfg.horizons.contingency = Some(30);
            cfg.max_steps = 60;
        }
        "fos-counterexample" => {
            // three agents converging at full speed on a common point
            let radius = 2.46;
            cfg.agents = (0..3)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / 3.0;
                    let dir = Vec2::new(a.cos(), a.sin());
                    AgentSpec {
                        id: i,
                        params: AgentParams::default(),
                        p0: dir * radius,
                        v0: -dir * 3.0,
                        p_ref: -dir * 6.0,
                    }
                })
                .collect();
            cfg.max_steps = 60;
        }
        _ => return Err(Error::Config(format!("unknown preset {name:?}; available: {}", PRESETS.join(", ")))),
    }
    cfg.materialize()?;
    cfg.validate()?;
    Ok(cfg)
}

/// Preset name or path to a scenario file.
pub fn resolve(name_or_path: &str, seed: Option<u64>) -> Result<ScenarioConfig> {
    if PRESETS.contains(&name_or_path) {
        return preset(name_or_path, seed.unwrap_or(0));
    }
    let text = std::fs::read_to_string(name_or_path)?;
    let mut cfg: ScenarioConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
        if cfg.random.is_some() {
            cfg.agents.clear();
        }
    }
    cfg.validate()?;
    cfg.materialize()?;
    cfg.validate()?;
    Ok(cfg)
}
