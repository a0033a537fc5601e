//! Safe-set generation and the freeze-or-shift update.
//!
//! Safe sets are closed balls in position space. The canonical generator Γ maps a
//! state to the ball that covers one worst-case step followed by braking to rest,
//! inflated by the body radius.

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentParams, AgentState, ControlInput};
use crate::{Error, Result, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub c: Vec2,
    #[serde(rename = "R")]
    pub r: f64,
}

impl Ball {
    pub fn new(c: Vec2, r: f64) -> Self {
        Self { c, r }
    }

    /// Signed gap between two balls: center distance minus radius sum.
    pub fn gap(&self, other: &Ball) -> f64 {
        (self.c - other.c).norm() - self.r - other.r
    }

    /// True if `other` lies inside `self` up to `tol`.
    pub fn contains_ball(&self, other: &Ball, tol: f64) -> bool {
        (self.c - other.c).norm() + other.r <= self.r + tol
    }
}

/// Active safe set of one agent with its one-step memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveSafeSet {
    pub active: Ball,
    /// Freeze indicator from the last update.
    pub frozen: bool,
    pub prev: Ball,
}

impl ActiveSafeSet {
    pub fn initial(ball: Ball) -> Self {
        Self { active: ball, frozen: false, prev: ball }
    }

    /// Records a FoS outcome, remembering the previously active ball.
    pub fn advance(&mut self, next: Ball, frozen: bool) {
        self.prev = self.active;
        self.active = next;
        self.frozen = frozen;
    }
}

/// Stopping radius for speed `speed` and first-step probe magnitude `probe`.
#[inline]
pub(crate) fn stopping_radius(speed: f64, probe: f64, params: &AgentParams) -> f64 {
    let ts = params.ts;
    let reach = speed + ts * probe;
    0.5 * ts * ts * probe + ts * speed + reach * reach / (2.0 * params.a_min_mag) + params.r
}

/// Generator with an explicit first-step probe input.
pub fn generate_safe_set(x: &AgentState, u_probe: &ControlInput, params: &AgentParams) -> Ball {
    let ts = params.ts;
    let probe = u_probe.u.norm();
    let reach = (x.v + u_probe.u * ts).norm();
    let r = 0.5 * ts * ts * probe + ts * x.v.norm() + reach * reach / (2.0 * params.a_min_mag) + params.r;
    Ball::new(x.p, r)
}

/// Canonical generator Γ: the worst-case probe of magnitude `a_max` aligned with `v`.
pub fn canonical_safe_set(x: &AgentState, params: &AgentParams) -> Ball {
    Ball::new(x.p, canonical_radius(x.v.norm(), params))
}

#[inline]
pub fn canonical_radius(speed: f64, params: &AgentParams) -> f64 {
    stopping_radius(speed, params.a_max, params)
}

/// Supremum of Γ's radius over admissible states.
pub fn radius_upper_bound(params: &AgentParams) -> f64 {
    stopping_radius(params.v_max, params.a_max, params)
}

/// Strict overlap: tangent balls do not overlap.
pub fn overlap_strict(a: &Ball, b: &Ball) -> bool {
    (a.c - b.c).norm() < a.r + b.r
}

pub fn freeze_indicators(candidates: &[Ball], actives: &[Ball]) -> Result<Vec<bool>> {
    if candidates.len() != actives.len() {
        return Err(Error::InvalidArgument(format!(
            "freeze_indicators: {} candidates but {} active sets",
            candidates.len(),
            actives.len()
        )));
    }
    Ok((0..candidates.len())
        .map(|i| {
            (0..candidates.len()).any(|j| {
                j != i
                    && (overlap_strict(&candidates[i], &candidates[j]) || overlap_strict(&candidates[i], &actives[j]))
            })
        })
        .collect())
}

pub fn fos_update(candidates: &[Ball], actives: &[Ball], chi: &[bool]) -> Result<Vec<Ball>> {
    if candidates.len() != actives.len() || chi.len() != actives.len() {
        return Err(Error::InvalidArgument(format!(
            "fos_update: length mismatch ({} candidates, {} actives, {} indicators)",
            candidates.len(),
            actives.len(),
            chi.len()
        )));
    }
    Ok(candidates
        .iter()
        .zip(actives)
        .zip(chi)
        .map(|((cand, act), &frozen)| if frozen { *act } else { *cand })
        .collect())
}

/// History-free outer approximation of any admissible active set of an agent at `p`.
pub fn reconstruction_ball(p: &Vec2, r_max: f64, r: f64) -> Result<Ball> {
    if !(r > 0.0) || r_max < r {
        return Err(Error::InvalidArgument(format!(
            "reconstruction_ball needs R_max >= r > 0, got R_max={r_max}, r={r}"
        )));
    }
    Ok(Ball::new(*p, 2.0 * r_max - r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ball(x: f64, y: f64, r: f64) -> Ball {
        Ball::new(Vec2::new(x, y), r)
    }

    #[test]
    fn generator_examples() {
        let p = AgentParams::default();
        let rest = AgentState::at_rest(Vec2::new(1.0, -2.0));
        let g = canonical_safe_set(&rest, &p);
        assert_relative_eq!(g.r, 0.235, epsilon = 1e-15);
        assert_eq!(g.c, rest.p);

        let moving = AgentState::new(Vec2::zeros(), Vec2::new(1.0, 0.0));
        let b = generate_safe_set(&moving, &ControlInput::zero(), &p);
        assert_relative_eq!(b.r, 0.1 + 1.0 / 7.0 + 0.2, epsilon = 1e-15);

        let b = generate_safe_set(&rest, &ControlInput::zero(), &p);
        assert_eq!(b.r, 0.2);
    }

    #[test]
    fn explicit_worst_probe_matches_canonical() {
        let p = AgentParams::default();
        let x = AgentState::new(Vec2::zeros(), Vec2::new(0.6, -0.8));
        let probe = ControlInput::new(x.v * p.a_max);
        assert_relative_eq!(generate_safe_set(&x, &probe, &p).r, canonical_safe_set(&x, &p).r, epsilon = 1e-14);
    }

    #[test]
    fn upper_bound_examples() {
        let p = AgentParams::default();
        assert_relative_eq!(radius_upper_bound(&p), 0.0175 + 0.3 + 11.2225 / 7.0 + 0.2, epsilon = 1e-14);
        assert!((radius_upper_bound(&p) - 2.120714).abs() < 1e-6);

        let still = AgentParams { v_max: 0.0, ..p };
        let expected = 0.5 * 0.01 * 3.5 + 0.01 * 3.5 * 3.5 / 7.0 + 0.2;
        assert_relative_eq!(radius_upper_bound(&still), expected, epsilon = 1e-15);

        let fat = AgentParams { r: 0.4, ..p };
        assert_relative_eq!(radius_upper_bound(&fat) - radius_upper_bound(&p), 0.2, epsilon = 1e-14);
    }

    #[test]
    fn overlap_examples() {
        assert!(overlap_strict(&ball(0.0, 0.0, 0.5), &ball(0.9, 0.0, 0.5)));
        assert!(!overlap_strict(&ball(0.0, 0.0, 0.5), &ball(1.0, 0.0, 0.5)));
        assert!(overlap_strict(&ball(1.0, 1.0, 0.3), &ball(1.0, 1.0, 0.3)));
    }

    #[test]
    fn freeze_indicator_examples() {
        let cands = [ball(0.0, 0.0, 0.5), ball(1.0, 0.0, 0.5)];
        let acts = [ball(-10.0, 0.0, 0.5), ball(10.0, 0.0, 0.5)];
        assert_eq!(freeze_indicators(&cands, &acts).unwrap(), vec![false, false]);

        let cands = [ball(0.0, 0.0, 0.5), ball(5.0, 0.0, 0.5)];
        let acts = [ball(-10.0, 0.0, 0.5), ball(0.8, 0.0, 0.5)];
        assert_eq!(freeze_indicators(&cands, &acts).unwrap(), vec![true, false]);

        assert_eq!(freeze_indicators(&cands[..1], &acts[..1]).unwrap(), vec![false]);
        assert!(freeze_indicators(&cands, &acts[..1]).is_err());
    }

    #[test]
    fn fos_examples() {
        let cands = [ball(0.0, 0.0, 0.5), ball(5.0, 0.0, 0.5)];
        let acts = [ball(-10.0, 0.0, 0.5), ball(0.8, 0.0, 0.5)];
        assert_eq!(fos_update(&cands, &acts, &[false, false]).unwrap(), cands.to_vec());
        assert_eq!(fos_update(&cands, &acts, &[true, true]).unwrap(), acts.to_vec());
        assert_eq!(fos_update(&cands, &acts, &[true, false]).unwrap(), vec![acts[0], cands[1]]);
        assert!(fos_update(&cands, &acts, &[true]).is_err());
    }

    #[test]
    fn reconstruction_examples() {
        let p = AgentParams::default();
        let rmax = radius_upper_bound(&p);
        let b = reconstruction_ball(&Vec2::new(1.0, 2.0), rmax, p.r).unwrap();
        assert!((b.r - 4.041429).abs() < 1e-6);
        assert_eq!(reconstruction_ball(&Vec2::zeros(), 0.2, 0.2).unwrap().r, 0.2);
        assert!(reconstruction_ball(&Vec2::zeros(), 0.1, 0.2).is_err());
    }

    #[test]
    fn active_set_memory() {
        let mut s = ActiveSafeSet::initial(ball(0.0, 0.0, 1.0));
        s.advance(ball(1.0, 0.0, 1.0), false);
        assert_eq!(s.prev, ball(0.0, 0.0, 1.0));
        s.advance(s.active, true);
        assert!(s.frozen);
        assert_eq!(s.prev, s.active);
    }
}
