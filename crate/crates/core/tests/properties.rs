use std::sync::Arc;

use maxreg::evolve::{solve_theta, EvolutionProblem, Perturbation, Source};
use maxreg::forms;
use maxreg::linalg::{self, BandedMatrix, Mat, Vector};
use maxreg::sqrtop::{self, Power};
use maxreg::suite;
use maxreg::triple::GelfandTriple;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn half_powers_compose_to_the_operator(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let form = suite::random_symmetric_form(&mut rng, 8).unwrap();
        let fact = sqrtop::spectral_decompose(&form, 0.0).unwrap();
        let half = fact.power_matrix(Power::Half);
        let one = fact.power_matrix(Power::One);
        let inv = fact.power_matrix(Power::MinusOne);
        let n = form.dim();
        prop_assert!((&half * &half - &one).amax() <= 1e-9 * one.amax());
        prop_assert!((&one * &inv - Mat::identity(n, n)).amax() <= 1e-8);
        // 𝒜 acts as gram_H⁻¹ A1.
        let a = form.triple().riesz_h_matrix(&form.a1_matrix(0.0).unwrap());
        prop_assert!((&one - a).amax() <= 1e-9 * one.amax());
    }

    #[test]
    fn dual_norm_dominates_pairings(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let triple = suite::random_triple(&mut rng, 6).unwrap();
        let f = suite::random_spd(&mut rng, 6, 1.0, 0.0).column(0).into_owned();
        let v = suite::random_spd(&mut rng, 6, 1.0, 0.0).column(1).into_owned();
        let bound = triple.dual_norm(&f).unwrap() * triple.v_norm(&v);
        prop_assert!(triple.pairing(&f, &v).abs() <= bound * (1.0 + 1e-12));
        // Equality at the Riesz representative.
        let r = triple.riesz_v(&f).unwrap();
        let eq = triple.pairing(&f, &r) / (triple.dual_norm(&f).unwrap() * triple.v_norm(&r));
        prop_assert!((eq - 1.0).abs() < 1e-10);
    }

    #[test]
    fn implicit_euler_is_stable(seed in any::<u64>(), n in 4usize..40) {
        // θ = 1, f = 0: ‖u_{k+1}‖_H ≤ (1 + CΔt)‖u_k‖_H with C = M2²/(4α)·c_H² bound
        // reduced to the symmetric case, where the H-norm cannot grow.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let form = suite::random_symmetric_form(&mut rng, 6).unwrap();
        let dim = form.dim();
        let u0 = Vector::from_fn(dim, |i, _| (i as f64 + 1.0).sin());
        let p = EvolutionProblem::new(form, Perturbation::identity(dim), Source::Zero, u0).unwrap();
        let traj = solve_theta(&p, n, 1.0).unwrap();
        for w in traj.states.windows(2) {
            prop_assert!(p.triple().h_norm(&w[1]) <= p.triple().h_norm(&w[0]) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn banded_solver_matches_dense(seed in any::<u64>(), n in 3usize..30, kl in 0usize..4, ku in 0usize..4) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut band = BandedMatrix::zeros(n, kl, ku);
        let mut dense = Mat::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                let v = rng.gen_range(-1.0..1.0) + if i == j { 4.0 } else { 0.0 };
                band.add(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = band.solve(&b).unwrap();
        let y = linalg::solve(&dense, &Vector::from_vec(b), "dense").unwrap();
        for (a, c) in x.iter().zip(y.iter()) {
            prop_assert!((a - c).abs() <= 1e-10 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn quasi_coercive_shift_preserves_the_operator(omega in 0.0f64..3.0) {
        let triple = Arc::new(GelfandTriple::new(
            Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            Mat::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 2.0]),
        ).unwrap());
        let form = forms::constant_form(
            triple,
            Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]),
            Mat::from_row_slice(2, 2, &[0.1, -0.2, 0.3, 0.0]),
            1.0,
        ).unwrap();
        let shifted = form.with_shift(omega, form.constants().alpha).unwrap();
        let a = form.full_operator(0.3).unwrap();
        let b = shifted.full_operator(0.3).unwrap();
        prop_assert!((a - b).amax() <= 1e-12);
    }
}
