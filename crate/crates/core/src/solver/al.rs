//! Augmented Lagrangian method for `min f(z) s.t. g(z) ≤ 0`.
//!
//! Constraints may be soft: `g_i(z) ≤ σ_i` with `σ_i ≥ 0` priced at `κ_i σ_i` in
//! the objective. The slack is minimized out in closed form, which leaves a
//! continuously differentiable augmented Lagrangian in `z` alone. The inner
//! problems are solved by a dense BFGS method with Armijo backtracking; the
//! first trial step of every iteration is 1.0.

/// A smooth inequality-constrained program.
pub trait Nlp {
    fn dim(&self) -> usize;

    fn num_constraints(&self) -> usize;

    /// Objective at `z`; writes the constraint values (`g ≤ 0` feasible) into `g`.
    fn eval(&mut self, z: &[f64], g: &mut [f64]) -> f64;

    /// Gradient of `f + Σ w_i g_i` at the point of the most recent [`Nlp::eval`].
    fn grad(&mut self, w: &[f64], out: &mut [f64]);

    /// Slack price per constraint; `f64::INFINITY` (or a missing entry) marks a hard constraint.
    fn soft_costs(&self) -> &[f64] {
        &[]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlSettings {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlStatus {
    Converged,
    /// Feasible to tolerance but not stationary within the iteration budget.
    Feasible,
    Infeasible,
    /// Objective or gradient became non-finite.
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct AlResult {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub status: AlStatus,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub max_violation: f64,
    pub stationarity: f64,
    pub objective: f64,
    /// Maximum constraint violation after each outer iteration.
    pub violation_history: Vec<f64>,
}

#[inline]
fn soft(kappa: &[f64], i: usize) -> f64 {
    kappa.get(i).copied().unwrap_or(f64::INFINITY)
}

/// Value of the augmented Lagrangian and its multiplier weights.
fn al_terms(f: f64, g: &[f64], lambda: &[f64], kappa: &[f64], mu: f64, w: &mut [f64]) -> f64 {
    let mut value = f;
    for (i, ((gi, li), wi)) in g.iter().zip(lambda).zip(w.iter_mut()).enumerate() {
        let shifted = (li + mu * gi).max(0.0);
        let k = soft(kappa, i);
        if shifted > k {
            // the optimal slack is positive and the multiplier saturates at its price
            let sigma = gi - (k - li) / mu;
            *wi = k;
            value += k * sigma + (k * k - li * li) / (2.0 * mu);
        } else {
            *wi = shifted;
            value += (shifted * shifted - li * li) / (2.0 * mu);
        }
    }
    value
}

/// Augmented Lagrangian value at `z`; fills `grad` with its gradient.
pub fn augmented_lagrangian<P: Nlp>(nlp: &mut P, z: &[f64], lambda: &[f64], mu: f64, grad: &mut [f64]) -> f64 {
    let m = nlp.num_constraints();
    let mut g = vec![0.0; m];
    let mut w = vec![0.0; m];
    let f = nlp.eval(z, &mut g);
    let value = al_terms(f, &g, lambda, nlp.soft_costs(), mu, &mut w);
    nlp.grad(&w, grad);
    value
}

struct Scratch {
    g: Vec<f64>,
    w: Vec<f64>,
    grad: Vec<f64>,
    grad_trial: Vec<f64>,
    trial: Vec<f64>,
    dir: Vec<f64>,
    hy: Vec<f64>,
    /// Inverse Hessian approximation, row-major.
    h: Vec<f64>,
}

/// Largest violation among the hard constraints.
fn max_violation(g: &[f64], kappa: &[f64]) -> f64 {
    g.iter().enumerate().filter(|(i, _)| soft(kappa, *i).is_infinite()).fold(0.0, |m, (_, &v)| m.max(v))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn reset_identity(h: &mut [f64], n: usize, scale: f64) {
    h.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..n {
        h[i * n + i] = scale;
    }
}

enum InnerOutcome {
    Converged,
    Budget,
    Stalled,
    NonFinite,
}

#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
fn inner_solve<P: Nlp>(
    nlp: &mut P,
    z: &mut [f64],
    lambda: &[f64],
    kappa: &[f64],
    mu: f64,
    tol: f64,
    budget: usize,
    s: &AlSettings,
    sc: &mut Scratch,
    used: &mut usize,
    fresh: &mut bool,
) -> (InnerOutcome, f64) {
    let n = z.len();
    let f = nlp.eval(z, &mut sc.g);
    let mut value = al_terms(f, &sc.g, lambda, kappa, mu, &mut sc.w);
    nlp.grad(&sc.w, &mut sc.grad);
    if !value.is_finite() || sc.grad.iter().any(|v| !v.is_finite()) {
        return (InnerOutcome::NonFinite, f64::INFINITY);
    }
    if *fresh {
        reset_identity(&mut sc.h, n, 1.0);
    }
    let mut pg = inf_norm(&sc.grad);
    while *used < budget {
        if pg <= tol {
            return (InnerOutcome::Converged, pg);
        }
        *used += 1;
        // quasi-Newton direction, steepest descent if it fails to descend
        let mut slope = 0.0;
        for i in 0..n {
            let row = &sc.h[i * n..(i + 1) * n];
            let d: f64 = -row.iter().zip(&sc.grad).map(|(a, b)| a * b).sum::<f64>();
            sc.dir[i] = d;
            slope += d * sc.grad[i];
        }
        if !(slope < 0.0) {
            reset_identity(&mut sc.h, n, 1.0);
            *fresh = true;
            slope = 0.0;
            for i in 0..n {
                sc.dir[i] = -sc.grad[i];
                slope -= sc.grad[i] * sc.grad[i];
            }
        }
        let mut accepted = false;
        let mut alpha = s.initial_step;
        for _ in 0..=s.max_backtracks {
            for i in 0..n {
                sc.trial[i] = z[i] + alpha * sc.dir[i];
            }
            let f_trial = nlp.eval(&sc.trial, &mut sc.g);
            let v_trial = al_terms(f_trial, &sc.g, lambda, kappa, mu, &mut sc.w);
            if v_trial.is_finite() && v_trial <= value + s.armijo * alpha * slope {
                value = v_trial;
                accepted = true;
                break;
            }
            alpha *= s.shrink;
        }
        if !accepted {
            // re-synchronize the cached rollout with the current iterate
            nlp.eval(z, &mut sc.g);
            if !*fresh {
                reset_identity(&mut sc.h, n, 1.0);
                *fresh = true;
                continue;
            }
            return (InnerOutcome::Stalled, pg);
        }
        nlp.grad(&sc.w, &mut sc.grad_trial);
        if sc.grad_trial.iter().any(|v| !v.is_finite()) {
            return (InnerOutcome::NonFinite, f64::INFINITY);
        }
        // BFGS update of the inverse Hessian with s = z⁺ − z, y = ∇⁺ − ∇
        let (mut sy, mut yy, mut ss) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let si = sc.trial[i] - z[i];
            let yi = sc.grad_trial[i] - sc.grad[i];
            sc.dir[i] = si;
            sc.grad[i] = yi;
            sy += si * yi;
            yy += yi * yi;
            ss += si * si;
        }
        // skip the update when the curvature pair is unreliable
        if sy > 1e-10 * (ss * yy).sqrt() && yy > 0.0 {
            if *fresh {
                reset_identity(&mut sc.h, n, sy / yy);
                *fresh = false;
            }
            let rho = 1.0 / sy;
            let mut yhy = 0.0;
            for i in 0..n {
                let row = &sc.h[i * n..(i + 1) * n];
                let v: f64 = row.iter().zip(&sc.grad).map(|(a, b)| a * b).sum();
                sc.hy[i] = v;
                yhy += v * sc.grad[i];
            }
            let c = (1.0 + rho * yhy) * rho;
            for i in 0..n {
                let (si, hyi) = (sc.dir[i], sc.hy[i]);
                let row = &mut sc.h[i * n..(i + 1) * n];
                for j in 0..n {
                    row[j] += c * si * sc.dir[j] - rho * (hyi * sc.dir[j] + si * sc.hy[j]);
                }
            }
        }
        z.copy_from_slice(&sc.trial);
        sc.grad.copy_from_slice(&sc.grad_trial);
        pg = inf_norm(&sc.grad);
    }
    (InnerOutcome::Budget, pg)
}

/// Runs the augmented Lagrangian method from `z0`.
pub fn minimize<P: Nlp>(nlp: &mut P, z0: &[f64], lambda0: Option<&[f64]>, s: &AlSettings) -> AlResult {
    let n = nlp.dim();
    let m = nlp.num_constraints();
    let kappa: Vec<f64> = (0..m).map(|i| soft(nlp.soft_costs(), i)).collect();
    let mut z = z0.to_vec();
    let mut lambda: Vec<f64> = match lambda0 {
        Some(l) if l.len() == m => l.iter().zip(&kappa).map(|(v, k)| v.max(0.0).min(*k)).collect(),
        _ => vec![0.0; m],
    };
    let mut sc = Scratch {
        g: vec![0.0; m],
        w: vec![0.0; m],
        grad: vec![0.0; n],
        grad_trial: vec![0.0; n],
        trial: vec![0.0; n],
        dir: vec![0.0; n],
        hy: vec![0.0; n],
        h: vec![0.0; n * n],
    };
    let mut mu = s.initial_penalty;
    // curvature carries over between outer iterations
    let mut fresh = true;
    let mut used = 0usize;
    let mut outer = 0usize;
    let mut history = Vec::new();
    let mut prev_violation = f64::INFINITY;
    let mut status = AlStatus::Infeasible;
    let mut stationarity = f64::INFINITY;

    // stationarity is measured relative to the objective gradient scale at the start
    let scale = {
        let zero = vec![0.0; m];
        nlp.eval(&z, &mut sc.g);
        nlp.grad(&zero, &mut sc.grad);
        sc.grad.iter().fold(1.0_f64, |a, v| a.max(v.abs()))
    };
    let tol = s.opt_tol * scale;

    while outer < s.max_outer_iters {
        outer += 1;
        // loose inner tolerances while the multipliers are still far off
        let inner_tol = (1e-2 * scale * 0.1_f64.powi(outer as i32 - 1)).max(tol);
        let (outcome, pg) = inner_solve(
            nlp,
            &mut z,
            &lambda,
            &kappa,
            mu,
            inner_tol,
            s.max_inner_iters,
            s,
            &mut sc,
            &mut used,
            &mut fresh,
        );
        if matches!(outcome, InnerOutcome::NonFinite) {
            status = AlStatus::NonFinite;
            break;
        }
        stationarity = pg;
        nlp.eval(&z, &mut sc.g);
        let violation = max_violation(&sc.g, &kappa);
        history.push(violation);
        // a large penalty that no longer reduces the violation: locally infeasible
        let k = history.len();
        if violation > s.feas_tol && mu >= 1e3 * s.initial_penalty && k > 3 && violation > 0.5 * history[k - 4] {
            status = AlStatus::Infeasible;
            break;
        }
        for (i, (li, gi)) in lambda.iter_mut().zip(&sc.g).enumerate() {
            *li = (*li + mu * gi).max(0.0).min(kappa[i]);
        }
        // complementarity: multipliers of clearly inactive constraints must vanish
        let complementarity = sc.g.iter().zip(&lambda).fold(0.0_f64, |acc, (gi, li)| acc.max((-gi).max(0.0).min(*li)));
        let converged_inner = matches!(outcome, InnerOutcome::Converged) && pg <= tol;
        if violation <= s.feas_tol && converged_inner && complementarity <= s.opt_tol * scale.max(1.0) {
            status = AlStatus::Converged;
            break;
        }
        status = if violation <= s.feas_tol { AlStatus::Feasible } else { AlStatus::Infeasible };
        if used >= s.max_inner_iters {
            break;
        }
        if violation > s.feas_tol && (violation > 0.25 * prev_violation || matches!(outcome, InnerOutcome::Stalled)) {
            mu = (mu * s.penalty_growth).min(s.max_penalty);
        }
        prev_violation = violation;
    }

    let objective = nlp.eval(&z, &mut sc.g);
    let max_violation = max_violation(&sc.g, &kappa);
    if status != AlStatus::NonFinite && status != AlStatus::Converged {
        status = if max_violation <= s.feas_tol { AlStatus::Feasible } else { AlStatus::Infeasible };
    }
    AlResult {
        z,
        lambda,
        status,
        outer_iters: outer,
        inner_iters: used,
        max_violation,
        stationarity,
        objective,
        violation_history: history,
    }
}
