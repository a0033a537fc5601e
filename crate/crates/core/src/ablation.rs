//! Runs a scenario with one safeguard switched off and counts the events that
//! safeguard exists to prevent, next to a run of the full scheme.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scenario::{preset, ScenarioConfig};
use crate::sim::{run_scenario, tolerances, AblationFlags, RunMetrics, StepRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Tail,
    Fos,
    Lyap,
}

impl Ablation {
    pub fn flags(self) -> AblationFlags {
        AblationFlags {
            disable_tail_constraint: self == Ablation::Tail,
            disable_fos: self == Ablation::Fos,
            disable_lyap_constraint: self == Ablation::Lyap,
        }
    }

    /// Scenario built to expose the failure mode.
    pub fn counterexample(self) -> Result<ScenarioConfig> {
        match self {
            Ablation::Tail | Ablation::Lyap => preset("tail-counterexample", 0),
            Ablation::Fos => preset("fos-counterexample", 0),
        }
    }

    pub fn event_name(self) -> &'static str {
        match self {
            Ablation::Tail => "candidate infeasibility",
            Ablation::Fos => "safe-set overlap",
            Ablation::Lyap => "bound increase",
        }
    }

    /// Number of failure events of this kind in a run.
    pub fn count_events(self, metrics: &RunMetrics, log: &[StepRecord]) -> usize {
        match self {
            Ablation::Tail => metrics.candidate_infeasibility_events,
            Ablation::Fos => metrics.disjointness_violations,
            // the run skips the decrease check when the constraint is off, so read the log
            Ablation::Lyap => log
                .iter()
                .filter(|r| r.agents.iter().any(|a| a.j_hat.is_finite() && a.j_c > a.j_hat + tolerances::LYAPUNOV))
                .count(),
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tail" => Ok(Ablation::Tail),
            "fos" => Ok(Ablation::Fos),
            "lyap" => Ok(Ablation::Lyap),
            _ => Err(Error::InvalidArgument(format!("unknown ablation {s:?}; expected tail, fos or lyap"))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Tail => "tail",
            Ablation::Fos => "fos",
            Ablation::Lyap => "lyap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub which: Ablation,
    pub scenario: String,
    pub event: String,
    pub ablated_events: usize,
    pub full_events: usize,
    pub ablated: RunMetrics,
    pub full: RunMetrics,
}

impl AblationReport {
    /// The ablated run shows the failure and the full scheme does not.
    pub fn reproduced(&self) -> bool {
        self.ablated_events > 0 && self.full_events == 0
    }
}

/// Runs `cfg` twice: with `which` disabled and with every safeguard on.
pub fn run_ablation(cfg: &ScenarioConfig, which: Ablation, parallel: bool) -> Result<AblationReport> {
    let run = |flags: AblationFlags| -> Result<(RunMetrics, usize)> {
        let mut sim = cfg.sim_config();
        sim.ablation = flags;
        sim.strict = false;
        sim.parallel = parallel;
        let out = run_scenario(cfg.world(), &cfg.events(), &sim)?;
        let n = which.count_events(&out.metrics, &out.log);
        Ok((out.metrics, n))
    };
    let (ablated, ablated_events) = run(which.flags())?;
    let (full, full_events) = run(AblationFlags::default())?;
    Ok(AblationReport {
        which,
        scenario: cfg.name.clone(),
        event: which.event_name().into(),
        ablated_events,
        full_events,
        ablated,
        full,
    })
}
