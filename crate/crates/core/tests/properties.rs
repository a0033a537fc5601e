use contingency_mpc::dynamics::{step, translate, AgentParams, AgentState, ControlInput, EquilibriumPair};
use contingency_mpc::ocp::{
    assemble_solution, braking_plan, min_contingency_horizon, ContingencyPlan, FhocpSpec, NominalPlan,
};
use contingency_mpc::safeset::{
    canonical_radius, canonical_safe_set, fos_update, freeze_indicators, generate_safe_set, overlap_strict,
    radius_upper_bound, reconstruction_ball, Ball,
};
use contingency_mpc::solver::{fhocp_augmented_lagrangian, fhocp_dimensions, solve_fhocp, SolveStatus, SolverOptions};
use contingency_mpc::Vec2;
use proptest::prelude::*;

fn params() -> AgentParams {
    AgentParams::default()
}

fn vec2(range: f64) -> impl Strategy<Value = Vec2> {
    (-range..range, -range..range).prop_map(|(x, y)| Vec2::new(x, y))
}

/// Vector with norm at most `max`.
fn bounded(max: f64) -> impl Strategy<Value = Vec2> {
    (0.0..=max, 0.0..std::f64::consts::TAU).prop_map(|(m, a)| Vec2::new(m * a.cos(), m * a.sin()))
}

fn state() -> impl Strategy<Value = AgentState> {
    (vec2(20.0), bounded(params().v_max)).prop_map(|(p, v)| AgentState::new(p, v))
}

fn close(a: &AgentState, b: &AgentState, tol: f64) -> bool {
    (a.p - b.p).norm() <= tol && (a.v - b.v).norm() <= tol
}

proptest! {
    #[test]
    fn step_commutes_with_translation(x in state(), u in bounded(3.5), d in vec2(50.0)) {
        let p = params();
        let u = ControlInput::new(u);
        let a = step(&translate(&x, &d), &u, &p).unwrap();
        let b = translate(&step(&x, &u, &p).unwrap(), &d);
        prop_assert!(close(&a, &b, 1e-12));
    }

    #[test]
    fn step_is_affine(x1 in state(), x2 in state(), u1 in bounded(3.5), u2 in bounded(3.5), w in 0.0..1.0f64) {
        let p = params();
        let mix = AgentState::new(x1.p * w + x2.p * (1.0 - w), x1.v * w + x2.v * (1.0 - w));
        let umix = ControlInput::new(u1 * w + u2 * (1.0 - w));
        let lhs = step(&mix, &umix, &p).unwrap();
        let s1 = step(&x1, &ControlInput::new(u1), &p).unwrap();
        let s2 = step(&x2, &ControlInput::new(u2), &p).unwrap();
        let rhs = AgentState::new(s1.p * w + s2.p * (1.0 - w), s1.v * w + s2.v * (1.0 - w));
        prop_assert!(close(&lhs, &rhs, 1e-11));
    }

    #[test]
    fn any_probe_radius_is_bounded(x in state(), probe in bounded(3.5)) {
        let p = params();
        let g = generate_safe_set(&x, &ControlInput::new(probe), &p);
        let canon = canonical_radius(x.v.norm(), &p);
        prop_assert!(g.r <= canon + 1e-12);
        prop_assert!(canon <= radius_upper_bound(&p) + 1e-12);
        prop_assert!(g.r >= p.r);
    }

    #[test]
    fn braking_stays_inside_own_safe_set(x in state()) {
        let p = params();
        let set = canonical_safe_set(&x, &p);
        let plan = braking_plan(&x, &p, min_contingency_horizon(&p));
        prop_assert!(plan.states.last().unwrap().v.norm() <= 1e-12);
        for s in &plan.states {
            prop_assert!((s.p - set.c).norm() + p.r <= set.r + 1e-12);
        }
    }

    #[test]
    fn translated_safe_set_is_translated(x in state(), d in vec2(50.0)) {
        let p = params();
        let a = canonical_safe_set(&translate(&x, &d), &p);
        let b = canonical_safe_set(&x, &p);
        prop_assert!((a.c - (b.c + d)).norm() <= 1e-12);
        prop_assert_eq!(a.r, b.r);
    }
}

/// Active sets on a grid that keeps them pairwise disjoint, and arbitrary candidates.
fn fos_instance() -> impl Strategy<Value = (Vec<Ball>, Vec<Ball>)> {
    (2usize..8).prop_flat_map(|n| {
        let actives = proptest::collection::vec((vec2(0.4), 0.2..1.0f64), n).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (jitter, r))| Ball::new(Vec2::new(3.0 * i as f64, 0.0) + jitter * 0.5, r))
                .collect::<Vec<_>>()
        });
        let candidates = proptest::collection::vec((vec2(3.0 * n as f64), 0.2..2.2f64), n)
            .prop_map(|v| v.into_iter().map(|(c, r)| Ball::new(c, r)).collect::<Vec<_>>());
        (actives, candidates)
    })
}

proptest! {
    #[test]
    fn freeze_or_shift_keeps_sets_disjoint((actives, candidates) in fos_instance()) {
        for i in 0..actives.len() {
            for j in i + 1..actives.len() {
                prop_assume!(!overlap_strict(&actives[i], &actives[j]));
            }
        }
        let chi = freeze_indicators(&candidates, &actives).unwrap();
        let next = fos_update(&candidates, &actives, &chi).unwrap();
        for i in 0..next.len() {
            prop_assert_eq!(next[i], if chi[i] { actives[i] } else { candidates[i] });
            for j in i + 1..next.len() {
                prop_assert!(next[i].gap(&next[j]) >= -1e-12, "sets {} and {} overlap", i, j);
            }
        }
    }

    #[test]
    fn reconstruction_contains_any_active_set(
        origin in state(),
        offset in (0.0..1.0f64, 0.0..std::f64::consts::TAU),
        angles in proptest::collection::vec(0.0..std::f64::consts::TAU, 64),
    ) {
        // active set generated at some past state; the body is anywhere inside it
        let p = params();
        let set = canonical_safe_set(&origin, &p);
        let room = set.r - p.r;
        let pos = set.c + Vec2::new(offset.1.cos(), offset.1.sin()) * (room * offset.0);
        let rec = reconstruction_ball(&pos, radius_upper_bound(&p), p.r).unwrap();
        prop_assert!(rec.contains_ball(&set, 1e-9));
        for a in angles {
            let q = set.c + Vec2::new(a.cos(), a.sin()) * set.r;
            prop_assert!((q - rec.c).norm() <= rec.r + 1e-9);
        }
    }
}

fn isolated(x0: AgentState, p_ref: Vec2) -> FhocpSpec {
    FhocpSpec::isolated(x0, AgentState::at_rest(p_ref), params())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn problem_is_translation_equivariant(x in state(), r in vec2(8.0), d in vec2(100.0)) {
        let opts = SolverOptions::default();
        let spec = isolated(x, x.p + r);
        let a = solve_fhocp(&spec, None, &opts);
        prop_assert!(a.report.status != SolveStatus::Error, "{:?} res {:e}", a.report, a.residual);

        // the translated plan is exactly as good for the translated problem
        let shifted = translate(&x, &d);
        let spec_b = isolated(shifted, shifted.p + r);
        let move_all = |v: &[AgentState]| v.iter().map(|s| translate(s, &d)).collect::<Vec<_>>();
        let nominal = NominalPlan {
            states: move_all(&a.nominal.states),
            inputs: a.nominal.inputs.clone(),
            slacks: a.nominal.slacks.clone(),
        };
        let contingency = ContingencyPlan {
            states: move_all(&a.contingency.states),
            inputs: a.contingency.inputs.clone(),
            eq: EquilibriumPair::stopped_at(a.contingency.eq.x_bar.p + d),
        };
        let moved = assemble_solution(&spec_b, nominal, contingency, a.report);
        prop_assert!(moved.residual <= 1e-9);
        prop_assert!((moved.j_c - a.j_c).abs() <= 1e-9 * a.j_c.max(1.0));
        prop_assert!((moved.j - a.j).abs() <= 1e-9 * a.j.max(1.0));

        // and the solver finds it again up to its optimality tolerance
        let b = solve_fhocp(&spec_b, None, &opts);
        prop_assert!(b.report.status != SolveStatus::Error);
        prop_assert!((a.j - b.j).abs() <= 1e-3 * a.j.max(1.0), "{} vs {}", a.j, b.j);
    }

    #[test]
    fn al_gradient_matches_central_differences(
        x in state(),
        r in vec2(8.0),
        seed in proptest::collection::vec(-1.0..1.0f64, 128),
        mu in 1.0..1e3f64,
    ) {
        let spec = isolated(x, x.p + r);
        let opts = SolverOptions::default();
        let (n, m) = fhocp_dimensions(&spec, &opts);
        let z: Vec<f64> = (0..n).map(|i| 3.0 * seed[i % seed.len()]).collect();
        let lambda: Vec<f64> = (0..m).map(|i| seed[(i + 7) % seed.len()].max(0.0)).collect();
        let mut grad = vec![0.0; n];
        fhocp_augmented_lagrangian(&spec, &opts, &z, &lambda, mu, &mut grad);
        let mut scratch = vec![0.0; n];
        let mut zp = z.clone();
        let h = 1e-6;
        let scale = grad.iter().fold(1.0_f64, |a, g| a.max(g.abs()));
        for i in 0..n {
            zp[i] = z[i] + h;
            let fp = fhocp_augmented_lagrangian(&spec, &opts, &zp, &lambda, mu, &mut scratch);
            zp[i] = z[i] - h;
            let fm = fhocp_augmented_lagrangian(&spec, &opts, &zp, &lambda, mu, &mut scratch);
            zp[i] = z[i];
            let fd = (fp - fm) / (2.0 * h);
            prop_assert!((grad[i] - fd).abs() <= 1e-4 * scale, "component {}: {} vs {}", i, grad[i], fd);
        }
    }
}
