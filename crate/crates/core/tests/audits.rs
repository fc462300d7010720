//! Seeded random-suite audits of the compositionality checks.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsmlqr_core::lqr::{self, Analysis, AnalysisOptions, Instance, SearchConfig};
use rsmlqr_core::matkit;
use rsmlqr_core::riccati;
use rsmlqr_core::rsm::{self, CompositionPattern, LinearSystem};
use rsmlqr_core::sim;
use rsmlqr_core::Matrix;

fn suite_config(seed: u64) -> SearchConfig {
    SearchConfig {
        n_range: (1, 5),
        m_range: (1, 3),
        k_range: (0, 2),
        seed,
        ..SearchConfig::default()
    }
}

/// Analyzes `trials` seeded instances; returns the successful ones.
fn random_suite(seed: u64, trials: u64) -> Vec<(u64, Instance, Analysis)> {
    let config = suite_config(seed);
    (0..trials)
        .filter_map(|t| {
            let inst = lqr::sample_instance(&config, t).unwrap();
            let analysis = lqr::analyze(&inst, &AnalysisOptions::default()).ok()?;
            Some((t, inst, analysis))
        })
        .collect()
}

#[test]
fn suite_mostly_solvable() {
    let ok = random_suite(11, 300).len();
    assert!(ok >= 270, "only {ok}/300 instances synthesized");
}

#[test]
fn generalized_are_holds_for_both_candidates() {
    for (t, _, an) in random_suite(1, 1000) {
        let bnorm = an.composite.bbar.norm();
        for (x, res) in [
            (&an.report.equivalence.pbar_k, an.report.gare_residual_pbar_k),
            (&an.report.equivalence.k_pcal, an.report.gare_residual_k_pcal),
        ] {
            let scale = 1.0 + x.norm().powi(2) * bnorm.powi(2);
            assert!(res <= 1e-8 * scale, "trial {t}: residual {res:e}, scale {scale:e}");
        }
    }
}

#[test]
fn necessary_condition_never_violated() {
    for (t, _, an) in random_suite(2, 1000) {
        let r = &an.report;
        let decided_equal = r.equivalence.equivalent && r.equivalence.resolved;
        assert!(!decided_equal || r.necessary.holds(), "trial {t}");
        assert!(r.is_consistent(), "trial {t}: {:?}", r.inconsistencies);
    }
}

#[test]
fn sufficient_condition_is_sound() {
    let (mut predicted, mut unresolved) = (0, 0);
    for (t, _, an) in random_suite(3, 1000) {
        let r = &an.report;
        if r.sufficient.predicts_compositional {
            predicted += 1;
            let at = r.equivalence.clone().with_resolution(r.equivalence.resolution, 1e-6);
            if !at.resolved {
                unresolved += 1;
                continue;
            }
            let scale = r.equivalence.deviation / r.equivalence.relative_deviation.max(f64::MIN_POSITIVE);
            assert!(r.equivalence.deviation <= 1e-6 * scale, "trial {t}");
        }
    }
    assert!(predicted > 100 && unresolved * 20 < predicted, "{predicted} predicted, {unresolved} unresolved");
}

#[test]
fn riccati_equivalence_matches_gain_equivalence() {
    let mut agree = 0;
    for (t, _, an) in random_suite(4, 1000) {
        let r = &an.report;
        if r.equivalence.equivalent {
            assert!(r.gains.equivalent, "trial {t}: equal Riccati blocks but gains differ");
        }
        if r.equivalence.equivalent == r.gains.equivalent {
            agree += 1;
        }
        // gain side: F̄K = ℱ̂ forces B̄ᵀ(P̄K - K𝒫) = 0
        let lhs = an.composite.bbar.transpose() * (&r.equivalence.pbar_k - &r.equivalence.k_pcal);
        let gap = &an.cost.rbar * (&r.gain_composed - &r.gain_direct);
        assert!((lhs + gap).norm() <= 1e-8 * (1.0 + r.equivalence.k_pcal.norm()), "trial {t}");
    }
    assert!(agree > 0);
}

#[test]
fn no_shared_states_is_always_compositional() {
    let config = SearchConfig {
        k_range: (0, 0),
        ..suite_config(5)
    };
    let mut seen = 0;
    for t in 0..300 {
        let inst = lqr::sample_instance(&config, t).unwrap();
        assert!(inst.pattern.pairs().is_empty());
        let Ok(an) = lqr::analyze(&inst, &AnalysisOptions::default()) else {
            continue;
        };
        seen += 1;
        let r = &an.report;
        // the deviation is pure rounding here and never exceeds its estimate
        assert!(r.equivalence.deviation <= r.equivalence.resolution, "trial {t}");
        if r.equivalence.resolved {
            assert!(r.equivalence.equivalent, "trial {t}");
            assert!(r.gains.equivalent, "trial {t}");
            assert!(r.necessary.holds(), "trial {t}");
        }
    }
    assert!(seen > 250);
}

#[test]
fn direct_design_uses_the_sign_convention() {
    for (t, _, an) in random_suite(6, 300) {
        let (a, b) = (&an.composite.acal, &an.composite.bcal);
        let rinv = an.cost.rbar.clone().try_inverse().unwrap();
        let f = &an.direct.gain;
        let p = an.direct.p();
        assert!((f + &rinv * b.transpose() * p).norm() <= 1e-12 * (1.0 + f.norm()), "trial {t}");
        assert!(matkit::is_hurwitz(&(a + b * f), 0.0).unwrap().hurwitz, "trial {t}");
        let direct = riccati::solve_care(a, b, &an.cost.qcal, &an.cost.rbar).unwrap();
        assert!((&direct.p - p).norm() <= 1e-12 * (1.0 + p.norm()), "trial {t}");
    }
}

#[test]
fn gap_is_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (t, _, an) in random_suite(7, 400) {
        let n = an.composite.acal.nrows();
        for _ in 0..10 {
            let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let g = sim::optimality_gap(
                &an.composite,
                &an.cost,
                &an.report.gain_composed,
                &an.report.gain_direct,
                &x0,
            )
            .unwrap();
            if let Some(gap) = g.gap {
                let floor = -1e-8 * (1.0 + g.j_direct.value);
                assert!(gap >= floor, "trial {t}: gap {gap:e}");
            }
        }
    }
}

/// Symmetric Hurwitz closed loops `A_i + B_i F_i` glue into a Hurwitz
/// composite closed loop for any sharing pattern.
#[test]
fn symmetric_stable_subsystems_compose_stably() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let uniform = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    };
    for trial in 0..1000 {
        let part = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(1..=5usize);
            let m = rng.random_range(1..=3usize);
            let g = uniform(rng, n, n);
            let acl = -(g.transpose() * g + Matrix::identity(n, n) * 0.05);
            let b = uniform(rng, n, m);
            let f = uniform(rng, m, n);
            let a = &acl - &b * &f;
            (LinearSystem::new("s", a, b).unwrap(), f)
        };
        let (s1, f1) = part(&mut rng);
        let (s2, f2) = part(&mut rng);
        let (n1, n2) = (s1.states(), s2.states());
        let k = rng.random_range(0..=n1.min(n2).min(2));
        let left = rand::seq::index::sample(&mut rng, n1, k).into_vec();
        let right = rand::seq::index::sample(&mut rng, n2, k).into_vec();
        let pattern = CompositionPattern::new(n1, n2, left.into_iter().zip(right).collect()).unwrap();
        let sys = rsm::compose_open_loop(&s1, &s2, &pattern).unwrap();
        let fcal = rsm::compose_gains(&f1, &f2, &sys.kmat).unwrap();
        let acl = rsm::closed_loop_matrix(&sys, &fcal).unwrap();
        assert!(matkit::is_hurwitz(&acl, 0.0).unwrap().hurwitz, "trial {trial}");
    }
}

/// Without symmetry the composite of two stable loops can be unstable.
#[test]
fn asymmetric_stable_subsystems_can_compose_unstably() {
    // each loop has eigenvalues -0.1 ± i√10
    let a1 = Matrix::from_row_slice(2, 2, &[-0.1, 10.0, -1.0, -0.1]);
    let a2 = Matrix::from_row_slice(2, 2, &[-0.1, -1.0, 10.0, -0.1]);
    assert!(matkit::is_hurwitz(&a1, 0.0).unwrap().hurwitz);
    assert!(matkit::is_hurwitz(&a2, 0.0).unwrap().hurwitz);
    let zero = Matrix::zeros(2, 1);
    let s1 = LinearSystem::new("s1", a1, zero.clone()).unwrap();
    let s2 = LinearSystem::new("s2", a2, zero).unwrap();
    let pattern = CompositionPattern::new(2, 2, vec![(0, 0), (1, 1)]).unwrap();
    let sys = rsm::compose_open_loop(&s1, &s2, &pattern).unwrap();
    // full sharing sums the dynamics: [[-0.2, 9], [9, -0.2]] has eigenvalue 8.8
    let h = matkit::is_hurwitz(&sys.acal, 0.0).unwrap();
    assert!(!h.hurwitz);
    assert!((h.max_real_part - 8.8).abs() < 1e-12);
}

#[test]
fn lyapunov_cost_matches_trajectory_quadrature() {
    let config = SearchConfig {
        n_range: (1, 3),
        ..suite_config(8)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    for t in 0..200 {
        if checked == 100 {
            break;
        }
        let inst = lqr::sample_instance(&config, t).unwrap();
        let Ok(an) = lqr::analyze(&inst, &AnalysisOptions::default()) else {
            continue;
        };
        let (a, b) = (&an.composite.acal, &an.composite.bcal);
        let f = &an.report.gain_composed;
        let acl = a + b * f;
        let hz = matkit::is_hurwitz(&acl, 0.0).unwrap();
        if !hz.hurwitz || hz.max_real_part > -0.05 {
            continue;
        }
        let n = acl.nrows();
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let exact = sim::closed_loop_cost(a, b, f, &an.cost.qcal, &an.cost.rbar, &x0).unwrap();
        let horizon = 40.0 / -hz.max_real_part;
        let step = (0.05 / acl.norm()).min(0.01);
        let traj = sim::simulate(&acl, &x0, horizon, step).unwrap();
        let w = &an.cost.qcal + f.transpose() * &an.cost.rbar * f;
        let quad = traj.quadratic_integral(&w).unwrap();
        let rel = (quad - exact.value).abs() / exact.value.abs().max(1e-12);
        assert!(rel <= 1e-4, "trial {t}: lyapunov {} vs quadrature {quad}", exact.value);
        checked += 1;
    }
    assert_eq!(checked, 100);
}
