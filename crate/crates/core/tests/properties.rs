use nalgebra::DVector;
use proptest::prelude::*;
use rsmlqr_core::matkit::{self, block_diag, PSD_TOL};
use rsmlqr_core::riccati;
use rsmlqr_core::rsm::{self, CompositionPattern, LinearSystem, StateOrigin};
use rsmlqr_core::Matrix;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| Matrix::from_row_slice(rows, cols, &v))
}

fn square(max_n: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_n).prop_flat_map(|n| matrix(n, n, -1.0, 1.0))
}

fn orthogonal(n: usize) -> impl Strategy<Value = Matrix> {
    matrix(n, n, -1.0, 1.0).prop_map(|g| g.qr().q())
}

/// Stabilizable, detectable (Q PD) CARE data with at most `m` unstable modes.
/// Entries of A are scaled by 1/√n so the spectrum stays O(1). Letting one input
/// fight many unstable modes at n near 20 gives ‖P‖ ~ 1e10, where no double
/// precision solver meets the residual bound.
fn care_problem(max_n: usize) -> impl Strategy<Value = (Matrix, Matrix, Matrix, Matrix)> {
    (1..=max_n, 1..=3usize).prop_flat_map(|(n, m)| {
        let s = 2.0 / (n as f64).sqrt();
        (
            matrix(n, n, -s, s),
            matrix(n, m, -1.0, 1.0),
            matrix(n, n, -1.0, 1.0),
            matrix(m, m, -1.0, 1.0),
        )
            .prop_map(move |(mut a, b, g, h)| {
                let mut re: Vec<f64> = matkit::eigenvalues(&a).unwrap().iter().map(|z| z.re).collect();
                re.sort_by(|x, y| y.total_cmp(x));
                if let Some(&cut) = re.get(m) {
                    if cut > -0.05 {
                        a -= Matrix::identity(n, n) * (cut + 0.05);
                    }
                }
                if !matkit::is_stabilizable(&a, &b).unwrap() {
                    let re = matkit::is_hurwitz(&a, 0.0).unwrap().max_real_part;
                    a -= Matrix::identity(n, n) * (re + 0.5);
                }
                let q = matkit::symmetrize(&(g.transpose() * g + Matrix::identity(n, n) * 0.1));
                let r = matkit::symmetrize(&(h.transpose() * h + Matrix::identity(m, m) * 0.1));
                (a, b, q, r)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sym_eig_reconstructs(g in (1..=50usize).prop_flat_map(|n| matrix(n, n, -1.0, 1.0))) {
        let m = matkit::symmetrize(&(&g + g.transpose()));
        let e = matkit::sym_eig(&m).unwrap();
        let n = m.nrows();
        prop_assert!((e.reconstruct() - &m).norm() <= 1e-10 * m.norm().max(1e-300));
        prop_assert!((e.eigenvectors.transpose() * &e.eigenvectors - Matrix::identity(n, n)).norm() < 1e-10);
        prop_assert!(e.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn psd_sqrt_of_gram(g in (1..=8usize, 1..=8usize).prop_flat_map(|(r, c)| matrix(r, c, -2.0, 2.0))) {
        let m = g.transpose() * &g;
        let d = matkit::psd_sqrt_factor(&m, PSD_TOL).unwrap();
        prop_assert!((d.transpose() * &d - &m).norm() <= 1e-9 * (1.0 + m.norm()));
        prop_assert_eq!(d.nrows(), matkit::rank_svd(&m, None).unwrap());
    }

    #[test]
    fn observability_is_dual_controllability(a in square(6), seed in 0..4usize) {
        let n = a.nrows();
        let c = Matrix::from_fn(1 + seed % 2, n, |i, j| ((i * 7 + j * 3 + seed) % 5) as f64 - 2.0);
        let obs = matkit::is_observable(&a, &c, None).unwrap();
        let ctr = matkit::is_controllable(&a.transpose(), &c.transpose(), None).unwrap();
        prop_assert_eq!(obs, ctr);
    }

    #[test]
    fn rank_invariant_under_permutation_and_rotation(
        (m, q) in (2..=6usize).prop_flat_map(|n| (
            (1..=n).prop_flat_map(move |r| (matrix(n, r, -1.0, 1.0), matrix(r, n, -1.0, 1.0)))
                .prop_map(|(u, v)| u * v),
            orthogonal(n),
        )),
        shift in 0..6usize,
    ) {
        let n = m.nrows();
        let base = matkit::rank_svd(&m, None).unwrap();
        let mut perm = Matrix::zeros(n, n);
        for i in 0..n {
            perm[(i, (i + shift) % n)] = 1.0;
        }
        prop_assert_eq!(matkit::rank_svd(&(&perm * &m), None).unwrap(), base);
        prop_assert_eq!(matkit::rank_svd(&(&m * perm.transpose()), None).unwrap(), base);
        prop_assert_eq!(matkit::rank_svd(&(&q * &m), None).unwrap(), base);
        prop_assert_eq!(matkit::rank_svd(&(&m * &q), None).unwrap(), base);
    }

    #[test]
    fn care_solution_is_stabilizing((a, b, q, r) in care_problem(20)) {
        let sol = riccati::solve_care(&a, &b, &q, &r).unwrap();
        let (_, res) = riccati::care_residual(&a, &b, &q, &r, &sol.p).unwrap();
        prop_assert!(res <= 1e-9 * (1.0 + sol.p.norm() * a.norm()), "residual {res:e}");
        prop_assert!(matkit::max_asymmetry(&sol.p) <= 1e-10 * matkit::max_abs(&sol.p).max(1e-300));
        prop_assert!(matkit::definiteness(&sol.p, 1e-9).unwrap().psd);
        let f = r.clone().try_inverse().unwrap() * b.transpose() * &sol.p;
        prop_assert!(matkit::is_hurwitz(&(&a - &b * f), 0.0).unwrap().hurwitz);
    }

    #[test]
    fn care_is_homogeneous_in_weights((a, b, q, r) in care_problem(6), c in 0.1..10.0f64) {
        let p = riccati::solve_care(&a, &b, &q, &r).unwrap().p;
        let pc = riccati::solve_care(&a, &b, &(&q * c), &(&r * c)).unwrap().p;
        prop_assert!((&pc - &p * c).norm() <= 1e-9 * (p * c).norm().max(1e-12));
    }

    #[test]
    fn lyapunov_back_substitution(g in (1..=8usize).prop_flat_map(|n| (matrix(n, n, -1.0, 1.0), matrix(n, n, -1.0, 1.0)))) {
        let (a, h) = g;
        let n = a.nrows();
        let re = matkit::is_hurwitz(&a, 0.0).unwrap().max_real_part;
        let acl = &a - Matrix::identity(n, n) * (re.max(0.0) + 0.3);
        let w = h.transpose() * h;
        let x = riccati::solve_lyapunov(&acl, &w).unwrap();
        let rel = riccati::lyapunov_residual(&acl, &w, &x) / (w.norm() + x.norm() * acl.norm());
        prop_assert!(rel <= 1e-10, "relative residual {rel:e}");
        let bs = riccati::lyapunov_bartels_stewart(&acl, &w).unwrap();
        prop_assert!((&bs - &x).norm() <= 1e-9 * (1.0 + x.norm()));
    }

    #[test]
    fn closed_loop_identity(
        (a1, b1, f1) in (1..=4usize, 1..=3usize).prop_flat_map(|(n, m)| (matrix(n, n, -3.0, 3.0), matrix(n, m, -2.0, 2.0), matrix(m, n, -2.0, 2.0))),
        (a2, b2, f2) in (1..=4usize, 1..=3usize).prop_flat_map(|(n, m)| (matrix(n, n, -3.0, 3.0), matrix(n, m, -2.0, 2.0), matrix(m, n, -2.0, 2.0))),
        pick in 0..64usize,
    ) {
        let (n1, n2) = (a1.nrows(), a2.nrows());
        let k = (pick % (n1.min(n2) + 1)).min(n1).min(n2);
        let pairs = (0..k).map(|i| (i, (i + pick) % n2)).collect::<Vec<_>>();
        let pattern = match CompositionPattern::new(n1, n2, pairs) {
            Ok(p) => p,
            Err(_) => CompositionPattern::new(n1, n2, (0..k).map(|i| (i, i)).collect()).unwrap(),
        };
        let s1 = LinearSystem::new("s1", a1.clone(), b1.clone()).unwrap();
        let s2 = LinearSystem::new("s2", a2.clone(), b2.clone()).unwrap();
        let sys = rsm::compose_open_loop(&s1, &s2, &pattern).unwrap();
        let fcal = rsm::compose_gains(&f1, &f2, &sys.kmat).unwrap();
        let lhs = rsm::closed_loop_matrix(&sys, &fcal).unwrap();
        let kk = sys.k();
        let rhs = kk.transpose() * (block_diag(&a1, &a2) + block_diag(&b1, &b2) * block_diag(&f1, &f2)) * kk;
        let scale = 1.0 + rhs.norm();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * scale);
    }

    #[test]
    fn k_identifies_shared_states(xbar_seed in prop::collection::vec(-5.0..5.0f64, 8)) {
        let pattern = CompositionPattern::new(4, 4, vec![(0, 3), (2, 1)]).unwrap();
        let k = rsm::build_composition_matrix(&pattern).unwrap();
        let xbar = DVector::from_column_slice(&xbar_seed[..k.composite_dim()]);
        let stacked = &k.k * xbar;
        for &(j, s) in pattern.pairs() {
            prop_assert_eq!(stacked[j], stacked[4 + s]);
        }
    }
}

/// Every injective partial matching between `0..n1` and `0..n2`.
fn all_patterns(n1: usize, n2: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(j: usize, n1: usize, n2: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if j == n1 {
            out.push(cur.clone());
            return;
        }
        go(j + 1, n1, n2, used, cur, out);
        for k in 0..n2 {
            if !used[k] {
                used[k] = true;
                cur.push((j, k));
                go(j + 1, n1, n2, used, cur, out);
                cur.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, n1, n2, &mut vec![false; n2], &mut Vec::new(), &mut out);
    out
}

#[test]
fn composition_matrix_invariants_exhaustive() {
    let mut checked = 0;
    for n1 in 1..=4 {
        for n2 in 1..=4 {
            for pairs in all_patterns(n1, n2) {
                let shared = pairs.len();
                let pattern = CompositionPattern::new(n1, n2, pairs.clone()).unwrap();
                let k = rsm::build_composition_matrix(&pattern).unwrap();
                assert_eq!(k.k.shape(), (n1 + n2, n1 + n2 - shared));
                assert!(k.k.iter().all(|&x| x == 0.0 || x == 1.0));
                for row in k.k.row_iter() {
                    assert_eq!(row.sum(), 1.0);
                }
                for (c, col) in k.k.column_iter().enumerate() {
                    let top: f64 = col.rows(0, n1).sum();
                    let bottom: f64 = col.rows(n1, n2).sum();
                    match k.index_map[c] {
                        StateOrigin::Shared { first, second } => {
                            assert_eq!((top, bottom), (1.0, 1.0));
                            assert!(pairs.contains(&(first, second)));
                        }
                        _ => assert_eq!(top + bottom, 1.0),
                    }
                }
                let ktk = k.k.transpose() * &k.k;
                let mut twos = 0;
                for i in 0..ktk.nrows() {
                    for j in 0..ktk.ncols() {
                        if i != j {
                            assert_eq!(ktk[(i, j)], 0.0);
                        }
                    }
                    assert!(ktk[(i, i)] == 1.0 || ktk[(i, i)] == 2.0);
                    if ktk[(i, i)] == 2.0 {
                        twos += 1;
                    }
                }
                assert_eq!(twos, shared);
                checked += 1;
            }
        }
    }
    // partial matchings of sizes a, b: sum over k of C(a,k) C(b,k) k!
    let binom = |n: usize, k: usize| (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1));
    let fact = |k: usize| (1..=k).product::<usize>();
    let expected: usize = (1..=4)
        .flat_map(|a| (1..=4).map(move |b| (a, b)))
        .map(|(a, b)| (0..=a.min(b)).map(|k| binom(a, k) * binom(b, k) * fact(k)).sum::<usize>())
        .sum();
    assert_eq!(checked, expected);
}
