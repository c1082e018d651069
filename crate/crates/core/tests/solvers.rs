use std::sync::Arc;

use approx::assert_relative_eq;
use maxreg::evolve::{
    self, apriori_constant, mr_diagnostics, solve_glued, solve_spacetime, solve_theta, EvolutionProblem, Perturbation,
    Source,
};
use maxreg::fem::UniformMesh;
use maxreg::forms::{self, PiecewiseForm};
use maxreg::linalg::Vector;
use maxreg::oracle;
use maxreg::quasilinear::{solve_fixed_point, FixedPointOptions, QuasilinearProblem};
use maxreg::Error;

fn robin_problem() -> EvolutionProblem {
    let form = forms::robin_uniform_beta(16, |t| 1.0 + t, 1.0, 1.0).unwrap();
    EvolutionProblem::new(
        form,
        Perturbation::identity(17),
        Source::constant(Vector::from_element(17, 1.0)),
        UniformMesh::unit(16).interpolate(|x| x),
    )
    .unwrap()
}

fn l2h_to_oracle(traj: &evolve::Trajectory, reference: &oracle::OracleSolution, p: &EvolutionProblem) -> f64 {
    let exact = reference.sample(&traj.times).unwrap();
    traj.l2h_distance(&exact, p.triple()).unwrap()
}

#[test]
fn scalar_closed_forms() {
    let form = forms::scalar_form(|_| 1.0, 0.0, (0.0, 1.0)).unwrap();
    let p = EvolutionProblem::new(form, Perturbation::scalar(2.0, 1).unwrap(), Source::Zero, Vector::from_vec(vec![1.0]))
        .unwrap();
    let e: Vec<f64> = [50, 100, 200]
        .iter()
        .map(|&n| (solve_theta(&p, n, 1.0).unwrap().final_state()[0] - (-0.5f64).exp()).abs())
        .collect();
    assert!((e[0] / e[1]).log2() > 0.9 && (e[1] / e[2]).log2() > 0.9);
}

#[test]
fn robin_theta_scheme_is_first_order_against_oracle() {
    let p = robin_problem();
    let reference = oracle::reference_solve(&p, 1e-10).unwrap();
    let errs: Vec<f64> = [32, 64, 128, 256]
        .iter()
        .map(|&n| l2h_to_oracle(&solve_theta(&p, n, 1.0).unwrap(), &reference, &p))
        .collect();
    for (e, n) in errs.iter().zip([32, 64, 128, 256]) {
        assert!(*e <= 0.5 / n as f64, "{errs:?}");
    }
    assert!((errs[2] / errs[3]).log2() >= 0.9, "{errs:?}");
}

#[test]
fn oracle_self_consistency_on_robin() {
    let p = robin_problem();
    let a = oracle::reference_solve(&p, 1e-10).unwrap();
    let b = oracle::reference_solve(&p, 1e-12).unwrap();
    for i in 0..=50 {
        let t = i as f64 / 50.0;
        assert!((a.eval(t) - b.eval(t)).amax() <= 1e-9, "t = {t}");
    }
}

#[test]
fn single_piece_gluing_is_bitwise_identical() {
    let form = forms::robin_uniform_beta(8, |t| t, 1.0, 1.0).unwrap();
    let single = EvolutionProblem::new(
        form.clone(),
        Perturbation::identity(9),
        Source::Zero,
        Vector::from_element(9, 1.0),
    )
    .unwrap();
    let glued = EvolutionProblem::new(PiecewiseForm::single(form), single.b.clone(), Source::Zero, single.u0.clone())
        .unwrap();
    assert_eq!(solve_theta(&single, 40, 1.0).unwrap(), solve_glued(&glued, 40, 1.0).unwrap());
}

#[test]
fn runs_are_deterministic() {
    let p = robin_problem();
    let a = solve_theta(&p, 64, 0.5).unwrap();
    let b = solve_theta(&p, 64, 0.5).unwrap();
    assert_eq!(a, b);
    let a = solve_spacetime(&p, 16).unwrap();
    let b = solve_spacetime(&p, 16).unwrap();
    assert_eq!(a, b);
}

#[test]
fn spacetime_recovers_initial_value() {
    let p = robin_problem();
    for n in [16, 64, 256] {
        let u = solve_spacetime(&p, n).unwrap();
        let d = p.triple().v_norm(&(&u.states[0] - &p.u0));
        assert!(d <= 1e-10 * p.triple().v_norm(&p.u0), "n = {n}: {d:e}");
    }
}

#[test]
fn spacetime_and_theta_cross_validate() {
    // Initial value compatible with the Robin condition, so both schemes
    // are in their asymptotic regime on these grids.
    let base = robin_problem();
    let u0 = UniformMesh::unit(16).interpolate(|x| 1.0 + x * (1.0 - x));
    let p = EvolutionProblem::new(base.form.clone(), base.b.clone(), base.f.clone(), u0).unwrap();
    let diffs: Vec<f64> = [32, 64, 128, 256]
        .iter()
        .map(|&n| {
            let a = solve_spacetime(&p, n).unwrap();
            let b = solve_theta(&p, n, 1.0).unwrap();
            a.states.iter().zip(&b.states).map(|(x, y)| p.triple().h_norm(&(x - y))).fold(0.0, f64::max)
        })
        .collect();
    for w in diffs.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.0, "{diffs:?}");
    }
}

#[test]
fn spacetime_rejects_piecewise_forms() {
    let p0 = forms::scalar_form(|_| 1.0, 0.0, (0.0, 0.5)).unwrap();
    let p1 = forms::scalar_form(|_| 2.0, 0.0, (0.5, 1.0)).unwrap();
    let pw = PiecewiseForm::new(vec![0.0, 0.5, 1.0], vec![p0, p1]).unwrap();
    let p = EvolutionProblem::new(pw, Perturbation::identity(1), Source::Zero, Vector::from_vec(vec![1.0])).unwrap();
    assert!(matches!(solve_spacetime(&p, 8), Err(Error::Config(_))));
}

#[test]
fn constant_form_energy_residual_is_first_order() {
    let triple = Arc::new(maxreg::triple::GelfandTriple::identity(2));
    let a1 = maxreg::linalg::Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let form = forms::constant_form(triple, a1, maxreg::linalg::Mat::zeros(2, 2), 1.0).unwrap();
    let p = EvolutionProblem::new(form, Perturbation::identity(2), Source::Zero, Vector::from_vec(vec![1.0, -1.0]))
        .unwrap();
    let r: Vec<f64> = [100, 200, 400]
        .iter()
        .map(|&n| mr_diagnostics(&p, &solve_theta(&p, n, 1.0).unwrap()).unwrap().energy_residual)
        .collect();
    assert_relative_eq!((r[0] / r[1]).log2(), 1.0, max_relative = 0.05);
    assert_relative_eq!((r[1] / r[2]).log2(), 1.0, max_relative = 0.05);
}

#[test]
fn apriori_constant_solves_the_quadratic_inequality() {
    // δx² ≤ F x + ½M1 U² forces x ≤ C (U + F) with the derived C: the
    // largest root of the quadratic is compared on a brute-force grid.
    for &(delta, m1) in &[(0.1, 3.0), (0.5, 0.2), (1e-3, 10.0), (2.0, 1.0)] {
        let c = apriori_constant(delta, m1);
        for i in 0..=20 {
            for j in 0..=20 {
                let (f, u) = (i as f64 * 0.25, j as f64 * 0.25);
                let root = (f + (f * f + 2.0 * delta * m1 * u * u).sqrt()) / (2.0 * delta);
                assert!(root <= c * (u + f) * (1.0 + 1e-12), "delta {delta} m1 {m1} f {f} u {u}");
            }
        }
    }
}

#[test]
fn quasilinear_with_constant_m_matches_linear_solve() {
    let form = forms::scalar_form(|_| 1.0, 0.0, (0.0, 1.0)).unwrap();
    let p = QuasilinearProblem::new(form.clone(), Arc::new(|_, _| 2.0), 0.5, Source::Zero, Vector::from_vec(vec![1.0]))
        .unwrap();
    let fp = solve_fixed_point(&p, FixedPointOptions::default()).unwrap();
    let linear = EvolutionProblem::new(form, Perturbation::scalar(0.5, 1).unwrap(), Source::Zero, Vector::from_vec(vec![1.0]))
        .unwrap();
    let direct = solve_theta(&linear, FixedPointOptions::default().n_steps, 1.0).unwrap();
    assert_eq!(fp.trajectory.states, direct.states);
    assert!(fp.history.iter().all(|r| r.sub_apriori_satisfied));
}

#[test]
fn quasilinear_iteration_is_deterministic() {
    let run = || {
        let form = forms::scalar_form(|_| 1.0, 0.0, (0.0, 1.0)).unwrap();
        let p = QuasilinearProblem::new(
            form,
            Arc::new(|_, xi| (1.0 + xi * xi).clamp(0.1, 10.0)),
            0.1,
            Source::Zero,
            Vector::from_vec(vec![1.0]),
        )
        .unwrap();
        solve_fixed_point(&p, FixedPointOptions::default()).unwrap().history
    };
    assert_eq!(run(), run());
}

#[test]
fn oracle_restarts_at_breakpoints() {
    let p0 = forms::scalar_form(|_| 1.0, 0.0, (0.0, 0.5)).unwrap();
    let p1 = forms::scalar_form(|_| 2.0, 0.0, (0.5, 1.0)).unwrap();
    let pw = PiecewiseForm::new(vec![0.0, 0.5, 1.0], vec![p0, p1]).unwrap();
    let p = EvolutionProblem::new(pw, Perturbation::identity(1), Source::Zero, Vector::from_vec(vec![1.0])).unwrap();
    let s = oracle::reference_solve(&p, 1e-10).unwrap();
    assert!((s.final_state()[0] - (-1.5f64).exp()).abs() < 1e-10);
    assert!(s.step_times().contains(&0.5));
}

#[test]
fn stiffness_switches_to_fallback() {
    let form = forms::scalar_form(|_| 1e12, 0.0, (0.0, 1.0)).unwrap();
    let p = EvolutionProblem::new(form, Perturbation::identity(1), Source::Zero, Vector::from_vec(vec![1.0])).unwrap();
    let s = oracle::reference_solve_or_fallback(&p, 1e-10, 100).unwrap();
    assert_eq!(s.method, oracle::OracleMethod::ImplicitRichardson);
    assert!(s.final_state()[0].abs() < 1e-12);
}
