//! Single-shooting transcription of the local problem for the double integrator.
//!
//! Decision vector layout:
//!
//! ```text
//! [ u0 | nominal u1..u_{Nn-1} | contingency u1..u_{Nc-2} ]
//! ```
//!
//! The shared first input appears once. States of both plans are recovered by
//! simulation. The last contingency input is eliminated as `-v_{Nc-1}/Ts`, which
//! brings the plan to rest exactly at step `Nc`, and the equilibrium position is
//! the final contingency position. Every constraint is a smooth inequality
//! `g(z) ≤ 0` expressed in meters (m/s, m/s² for speed and input bounds, or
//! normalized cost for the Lyapunov bound) and tightened by a small margin so
//! that tolerance-level violations of the relaxed problem still leave the
//! original constraints satisfied. The soft separation constraints carry their
//! slack price instead of explicit slack variables.

use crate::dynamics::{propagate, AgentState, ControlInput, EquilibriumPair};
use crate::ocp::{ContingencyPlan, FhocpSpec, NominalPlan, ObjectiveMode};
use crate::solver::al::Nlp;
use crate::Vec2;

/// Smoothed speed used inside the solver. It never exceeds the true speed, so the
/// smoothed generator radius is a conservative under-estimate of Γ.
#[inline]
fn smooth_speed(v: &Vec2, eps: f64) -> (f64, Vec2) {
    let root = (v.norm_squared() + eps * eps).sqrt();
    (root - eps, v / root)
}

#[derive(Debug, Clone, Copy)]
pub struct Margins {
    /// Tightening of geometric and speed constraints [m], [m/s].
    pub geometric: f64,
    /// Relative tightening of the Lyapunov bound.
    pub lyapunov: f64,
    /// Smoothing length of the speed inside the generator radius [m/s].
    pub smoothing: f64,
}

pub struct FhocpNlp<'a> {
    spec: &'a FhocpSpec,
    n_n: usize,
    n_c: usize,
    off_nom: usize,
    off_con: usize,
    dim: usize,
    soft: Vec<f64>,
    m: usize,
    margins: Margins,
    obj_scale: f64,
    lyap_bound: f64,
    lyap_scale: f64,
    room: f64,
    u_radius: f64,
    hard: usize,
    nom_p: Vec<Vec2>,
    nom_v: Vec<Vec2>,
    nom_u: Vec<Vec2>,
    con_p: Vec<Vec2>,
    con_v: Vec<Vec2>,
    con_u: Vec<Vec2>,
    ap_n: Vec<Vec2>,
    av_n: Vec<Vec2>,
    au_n: Vec<Vec2>,
    ap_c: Vec<Vec2>,
    av_c: Vec<Vec2>,
    au_c: Vec<Vec2>,
}

impl<'a> FhocpNlp<'a> {
    /// Requires `N_c ≥ 2` and `N_n ≥ 1`.
    pub fn new(spec: &'a FhocpSpec, margins: Margins) -> Self {
        let n_n = spec.horizons.n_n;
        let n_c = spec.horizons.n_c;
        assert!(n_c >= 2 && n_n >= 1, "transcription needs N_c >= 2 and N_n >= 1");
        let nb = spec.neighbor_sets.len();
        let off_nom = 2;
        let off_con = off_nom + 2 * (n_n - 1);
        let dim = off_con + 2 * (n_c - 2);
        let mut m = dim / 2 + n_n + (n_c - 1) + 1 + n_c * spec.obstacles.len() + n_c;
        if spec.bounds.is_some() {
            m += 4 * n_c;
        }
        if spec.enforce_tail {
            m += n_c * (n_c + 1) / 2;
        }
        if spec.j_hat.is_finite() {
            m += 1;
        }
        let hard = m;
        m += nb * n_n;
        let lyap_scale = spec.j_hat.abs().max(1e-12);
        let mut nlp = Self {
            spec,
            n_n,
            n_c,
            off_nom,
            off_con,
            dim,
            soft: vec![f64::INFINITY; m],
            m,
            margins,
            obj_scale: 1.0,
            lyap_bound: spec.j_hat - margins.lyapunov * lyap_scale,
            lyap_scale,
            room: spec.active_set.r - spec.params.r - margins.geometric,
            hard: 0,
            u_radius: spec.params.a_max - margins.geometric,
            nom_p: vec![Vec2::zeros(); n_n + 1],
            nom_v: vec![Vec2::zeros(); n_n + 1],
            nom_u: vec![Vec2::zeros(); n_n],
            con_p: vec![Vec2::zeros(); n_c + 1],
            con_v: vec![Vec2::zeros(); n_c + 1],
            con_u: vec![Vec2::zeros(); n_c],
            ap_n: vec![Vec2::zeros(); n_n + 1],
            av_n: vec![Vec2::zeros(); n_n + 1],
            au_n: vec![Vec2::zeros(); n_n],
            ap_c: vec![Vec2::zeros(); n_c + 1],
            av_c: vec![Vec2::zeros(); n_c + 1],
            au_c: vec![Vec2::zeros(); n_c],
        };
        nlp.hard = hard;
        nlp.update_soft_costs();
        nlp
    }

    /// Slack price of each separation constraint in the scaled units of `g`.
    fn update_soft_costs(&mut self) {
        let spec = self.spec;
        let price = match spec.objective {
            ObjectiveMode::Tracking => spec.weights.rho_nom * self.obj_scale,
            // the contingency objective leaves the nominal plan unconstrained
            ObjectiveMode::ContingencyCost => 0.0,
        };
        for (j, nb) in spec.neighbor_sets.iter().enumerate() {
            let d0 = nb.r + spec.params.r;
            for k in 0..self.n_n {
                self.soft[self.hard + j * self.n_n + k] = price * 2.0 * d0;
            }
        }
    }

    /// Containment room after tightening; nonpositive means the tightened problem is empty.
    pub fn room(&self) -> f64 {
        self.room
    }

    pub fn set_objective_scale(&mut self, scale: f64) {
        self.obj_scale = scale;
        self.update_soft_costs();
    }

    pub fn objective_scale(&self) -> f64 {
        self.obj_scale
    }

    #[inline]
    fn input(z: &[f64], i: usize) -> Vec2 {
        Vec2::new(z[i], z[i + 1])
    }

    fn rollout(&mut self, z: &[f64]) {
        let ts = self.spec.params.ts;
        let x0 = self.spec.x0;
        let u0 = Self::input(z, 0);

        let mut x = x0;
        self.nom_p[0] = x.p;
        self.nom_v[0] = x.v;
        for k in 0..self.n_n {
            let u = if k == 0 { u0 } else { Self::input(z, self.off_nom + 2 * (k - 1)) };
            self.nom_u[k] = u;
            x = propagate(&x, &u, ts);
            self.nom_p[k + 1] = x.p;
            self.nom_v[k + 1] = x.v;
        }

        let mut x = x0;
        self.con_p[0] = x.p;
        self.con_v[0] = x.v;
        for k in 0..self.n_c {
            let u = if k == 0 {
                u0
            } else if k == self.n_c - 1 {
                -x.v / ts
            } else {
                Self::input(z, self.off_con + 2 * (k - 1))
            };
            self.con_u[k] = u;
            x = propagate(&x, &u, ts);
            self.con_p[k + 1] = x.p;
            self.con_v[k + 1] = x.v;
        }
    }

    fn radius(&self, v: &Vec2) -> (f64, Vec2) {
        let p = &self.spec.params;
        let (n, dn) = smooth_speed(v, self.margins.smoothing);
        let reach = n + p.ts * p.a_max;
        let r = 0.5 * p.ts * p.ts * p.a_max + p.ts * n + reach * reach / (2.0 * p.a_min_mag) + p.r;
        let dr = p.ts + reach / p.a_min_mag;
        (r, dn * dr)
    }

    fn contingency_cost(&self) -> f64 {
        let w = &self.spec.weights;
        let pbar = self.con_p[self.n_c];
        let mut j = 0.0;
        for k in 0..self.n_c {
            let dp = self.con_p[k] - pbar;
            let v = self.con_v[k];
            let u = self.con_u[k];
            j += w.q_s[0] * dp.x * dp.x + w.q_s[1] * dp.y * dp.y;
            j += w.q_s[2] * v.x * v.x + w.q_s[3] * v.y * v.y;
            j += w.r_s[0] * u.x * u.x + w.r_s[1] * u.y * u.y;
        }
        j + self.offset_cost(&pbar, &w.p_s)
    }

    fn offset_cost(&self, pbar: &Vec2, ps: &[f64; 4]) -> f64 {
        let r = &self.spec.x_ref;
        let dp = pbar - r.p;
        ps[0] * dp.x * dp.x + ps[1] * dp.y * dp.y + ps[2] * r.v.x * r.v.x + ps[3] * r.v.y * r.v.y
    }

    fn tracking_objective(&self) -> f64 {
        let w = &self.spec.weights;
        let pref = self.spec.x_ref.p;
        let mut j = 0.0;
        for k in 0..self.n_n {
            let dp = self.nom_p[k] - pref;
            let v = self.nom_v[k];
            let u = self.nom_u[k];
            j += w.q_p[0] * dp.x * dp.x + w.q_p[1] * dp.y * dp.y;
            j += w.q_v[0] * v.x * v.x + w.q_v[1] * v.y * v.y;
            j += w.r_u[0] * u.x * u.x + w.r_u[1] * u.y * u.y;
        }
        let dp = self.nom_p[self.n_n] - pref;
        j += w.q_p[0] * dp.x * dp.x + w.q_p[1] * dp.y * dp.y;
        j + w.gamma * self.offset_cost(&self.con_p[self.n_c], &w.p_s)
    }

    /// Adds the gradient of `coef · J_c` to the contingency adjoints.
    fn add_contingency_cost_grad(&mut self, coef: f64) {
        let w = self.spec.weights;
        let n_c = self.n_c;
        let pbar = self.con_p[n_c];
        let mut to_pbar = Vec2::zeros();
        for k in 0..n_c {
            let dp = self.con_p[k] - pbar;
            let g = Vec2::new(2.0 * w.q_s[0] * dp.x, 2.0 * w.q_s[1] * dp.y) * coef;
            self.ap_c[k] += g;
            to_pbar -= g;
            let v = self.con_v[k];
            self.av_c[k] += Vec2::new(2.0 * w.q_s[2] * v.x, 2.0 * w.q_s[3] * v.y) * coef;
            let u = self.con_u[k];
            self.au_c[k] += Vec2::new(2.0 * w.r_s[0] * u.x, 2.0 * w.r_s[1] * u.y) * coef;
        }
        let dp = pbar - self.spec.x_ref.p;
        to_pbar += Vec2::new(2.0 * w.p_s[0] * dp.x, 2.0 * w.p_s[1] * dp.y) * coef;
        self.ap_c[n_c] += to_pbar;
    }

    fn add_tracking_grad(&mut self, coef: f64) {
        let w = self.spec.weights;
        let pref = self.spec.x_ref.p;
        for k in 0..=self.n_n {
            let dp = self.nom_p[k] - pref;
            self.ap_n[k] += Vec2::new(2.0 * w.q_p[0] * dp.x, 2.0 * w.q_p[1] * dp.y) * coef;
        }
        for k in 0..self.n_n {
            let v = self.nom_v[k];
            self.av_n[k] += Vec2::new(2.0 * w.q_v[0] * v.x, 2.0 * w.q_v[1] * v.y) * coef;
            let u = self.nom_u[k];
            self.au_n[k] += Vec2::new(2.0 * w.r_u[0] * u.x, 2.0 * w.r_u[1] * u.y) * coef;
        }
        let dp = self.con_p[self.n_c] - pref;
        self.ap_c[self.n_c] += Vec2::new(2.0 * w.p_s[0] * dp.x, 2.0 * w.p_s[1] * dp.y) * (coef * w.gamma);
    }

    /// Visits every constraint in a fixed order. The visitor receives the
    /// constraint index and value; when `grad_weights` is given the gradient
    /// contribution `w_i ∇g_i` is accumulated into the adjoints.
    fn constraints(&mut self, g: Option<&mut [f64]>, grad_weights: Option<&[f64]>) {
        let spec = self.spec;
        let params = spec.params;
        let delta = self.margins.geometric;
        let (n_n, n_c) = (self.n_n, self.n_c);
        let mut g = g;
        let mut idx = 0usize;
        let weight = |i: usize| grad_weights.map_or(0.0, |w| w[i]);
        macro_rules! emit {
            ($value:expr) => {
                if let Some(ref mut gv) = g {
                    gv[idx] = $value;
                }
            };
        }

        // input norm bounds on the free inputs
        {
            let cap = self.u_radius;
            for k in 0..self.dim / 2 {
                let u = if k < n_n { self.nom_u[k] } else { self.con_u[k - n_n + 1] };
                emit!((u.norm_squared() - cap * cap) / (2.0 * cap));
                let wi = weight(idx);
                if wi != 0.0 {
                    let target = if k < n_n { &mut self.au_n[k] } else { &mut self.au_c[k - n_n + 1] };
                    *target += u * (wi / cap);
                }
                idx += 1;
            }
        }
        // speed bounds on both plans
        let vcap = params.v_max - delta;
        for k in 1..=n_n {
            let v = self.nom_v[k];
            emit!((v.norm_squared() - vcap * vcap) / (2.0 * vcap));
            let wi = weight(idx);
            if wi != 0.0 {
                self.av_n[k] += v * (wi / vcap);
            }
            idx += 1;
        }
        for k in 1..n_c {
            let v = self.con_v[k];
            emit!((v.norm_squared() - vcap * vcap) / (2.0 * vcap));
            let wi = weight(idx);
            if wi != 0.0 {
                self.av_c[k] += v * (wi / vcap);
            }
            idx += 1;
        }
        // the eliminated last input -v/Ts must respect the input bound
        {
            let cap = params.ts * params.a_max - delta;
            let v = self.con_v[n_c - 1];
            emit!((v.norm_squared() - cap * cap) / (2.0 * cap));
            let wi = weight(idx);
            if wi != 0.0 {
                self.av_c[n_c - 1] += v * (wi / cap);
            }
            idx += 1;
        }
        // obstacle clearance of the contingency positions
        for o in &spec.obstacles {
            let rho = o.radius + params.r + delta;
            for k in 1..=n_c {
                let d = self.con_p[k] - o.center;
                emit!((rho * rho - d.norm_squared()) / (2.0 * rho));
                let wi = weight(idx);
                if wi != 0.0 {
                    self.ap_c[k] -= d * (wi / rho);
                }
                idx += 1;
            }
        }
        if let Some(b) = &spec.bounds {
            let lo = b.min + Vec2::repeat(params.r + delta);
            let hi = b.max - Vec2::repeat(params.r + delta);
            for k in 1..=n_c {
                let p = self.con_p[k];
                let rows = [
                    (lo.x - p.x, Vec2::new(-1.0, 0.0)),
                    (p.x - hi.x, Vec2::new(1.0, 0.0)),
                    (lo.y - p.y, Vec2::new(0.0, -1.0)),
                    (p.y - hi.y, Vec2::new(0.0, 1.0)),
                ];
                for (value, dir) in rows {
                    emit!(value);
                    let wi = weight(idx);
                    if wi != 0.0 {
                        self.ap_c[k] += dir * wi;
                    }
                    idx += 1;
                }
            }
        }
        // containment in the active set
        {
            let rho = self.room;
            let c = spec.active_set.c;
            for k in 1..=n_c {
                let d = self.con_p[k] - c;
                emit!((d.norm_squared() - rho * rho) / (2.0 * rho));
                let wi = weight(idx);
                if wi != 0.0 {
                    self.ap_c[k] += d * (wi / rho);
                }
                idx += 1;
            }
        }
        // tail containment: every suffix fits in the set generated at its start
        if spec.enforce_tail {
            for k in 0..n_c {
                let (rk, drk) = self.radius(&self.con_v[k]);
                let rho = rk - params.r - delta;
                let pk = self.con_p[k];
                for l in k + 1..=n_c {
                    let d = self.con_p[l] - pk;
                    let d2 = d.norm_squared();
                    emit!(0.5 * (d2 / rho - rho));
                    let wi = weight(idx);
                    if wi != 0.0 {
                        let gd = d * (wi / rho);
                        self.ap_c[l] += gd;
                        self.ap_c[k] -= gd;
                        let drho = 0.5 * (-d2 / (rho * rho) - 1.0) * wi;
                        self.av_c[k] += drk * drho;
                    }
                    idx += 1;
                }
            }
        }
        if spec.j_hat.is_finite() {
            emit!((self.contingency_cost() - self.lyap_bound) / self.lyap_scale);
            let wi = weight(idx);
            if wi != 0.0 {
                self.add_contingency_cost_grad(wi / self.lyap_scale);
            }
            idx += 1;
        }
        // soft nominal separation from the neighbors' active sets
        for nb in &spec.neighbor_sets {
            let d0 = nb.r + params.r;
            for k in 0..n_n {
                let (rk, drk) = self.radius(&self.nom_v[k]);
                let dist = rk + nb.r;
                let d = self.nom_p[k] - nb.c;
                emit!((dist * dist - d.norm_squared()) / (2.0 * d0));
                let wi = weight(idx);
                if wi != 0.0 {
                    self.ap_n[k] -= d * (wi / d0);
                    self.av_n[k] += drk * (dist * wi / d0);
                }
                idx += 1;
            }
        }
        debug_assert_eq!(idx, self.m);
    }

    /// Adjoint sweep through both rollouts; writes input gradients into `out`.
    fn backward(&mut self, out: &mut [f64]) {
        let ts = self.spec.params.ts;
        let h = 0.5 * ts * ts;

        let (mut lp, mut lv) = (self.ap_n[self.n_n], self.av_n[self.n_n]);
        for k in (0..self.n_n).rev() {
            let gu = self.au_n[k] + lp * h + lv * ts;
            let target = if k == 0 { 0 } else { self.off_nom + 2 * (k - 1) };
            out[target] += gu.x;
            out[target + 1] += gu.y;
            lv = self.av_n[k] + lp * ts + lv;
            lp = self.ap_n[k] + lp;
        }

        let (mut lp, mut lv) = (self.ap_c[self.n_c], self.av_c[self.n_c]);
        for k in (0..self.n_c).rev() {
            let gu = self.au_c[k] + lp * h + lv * ts;
            let mut av = self.av_c[k];
            if k == self.n_c - 1 {
                // u = -v/Ts
                av -= gu / ts;
            } else {
                let target = if k == 0 { 0 } else { self.off_con + 2 * (k - 1) };
                out[target] += gu.x;
                out[target + 1] += gu.y;
            }
            lv = av + lp * ts + lv;
            lp = self.ap_c[k] + lp;
        }
    }

    /// Decision vector reproducing the given input sequences.
    pub fn encode(&self, nominal: &[ControlInput], contingency: &[ControlInput]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        let u0 = contingency.first().or(nominal.first()).map_or(Vec2::zeros(), |u| u.u);
        z[0] = u0.x;
        z[1] = u0.y;
        for k in 1..self.n_n {
            if let Some(u) = nominal.get(k) {
                z[self.off_nom + 2 * (k - 1)] = u.u.x;
                z[self.off_nom + 2 * (k - 1) + 1] = u.u.y;
            }
        }
        for k in 1..self.n_c - 1 {
            if let Some(u) = contingency.get(k) {
                z[self.off_con + 2 * (k - 1)] = u.u.x;
                z[self.off_con + 2 * (k - 1) + 1] = u.u.y;
            }
        }
        z
    }

    /// Plans generated by `z`; the slacks are left empty.
    pub fn decode(&mut self, z: &[f64]) -> (NominalPlan, ContingencyPlan) {
        self.rollout(z);
        let states = |p: &[Vec2], v: &[Vec2]| -> Vec<AgentState> {
            p.iter().zip(v).map(|(p, v)| AgentState::new(*p, *v)).collect()
        };
        let inputs = |u: &[Vec2]| -> Vec<ControlInput> { u.iter().map(|u| ControlInput::new(*u)).collect() };
        let nominal =
            NominalPlan { states: states(&self.nom_p, &self.nom_v), inputs: inputs(&self.nom_u), slacks: Vec::new() };
        let contingency = ContingencyPlan {
            states: states(&self.con_p, &self.con_v),
            inputs: inputs(&self.con_u),
            eq: EquilibriumPair::stopped_at(self.con_p[self.n_c]),
        };
        (nominal, contingency)
    }

    fn objective(&self) -> f64 {
        match self.spec.objective {
            ObjectiveMode::Tracking => self.tracking_objective(),
            ObjectiveMode::ContingencyCost => self.contingency_cost(),
        }
    }
}

impl Nlp for FhocpNlp<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_constraints(&self) -> usize {
        self.m
    }

    fn eval(&mut self, z: &[f64], g: &mut [f64]) -> f64 {
        self.rollout(z);
        self.constraints(Some(g), None);
        self.objective() * self.obj_scale
    }

    fn grad(&mut self, w: &[f64], out: &mut [f64]) {
        for a in [&mut self.ap_n, &mut self.av_n, &mut self.ap_c, &mut self.av_c] {
            a.iter_mut().for_each(|x| *x = Vec2::zeros());
        }
        self.au_n.iter_mut().for_each(|x| *x = Vec2::zeros());
        self.au_c.iter_mut().for_each(|x| *x = Vec2::zeros());
        out.iter_mut().for_each(|x| *x = 0.0);

        match self.spec.objective {
            ObjectiveMode::Tracking => self.add_tracking_grad(self.obj_scale),
            ObjectiveMode::ContingencyCost => self.add_contingency_cost_grad(self.obj_scale),
        }
        self.constraints(None, Some(w));
        self.backward(out);
    }

    fn soft_costs(&self) -> &[f64] {
        &self.soft
    }
}
