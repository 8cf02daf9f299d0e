use anaprior::linops::{restricted_injectivity_constant, LinearOperator, Matrix, Subspace, Vector};
use anaprior::guarantees::injectivity_constant;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d))
}

/// `rows x cols` matrix of rank at most `rank`.
fn low_rank(rows: usize, cols: usize, rank: usize) -> impl Strategy<Value = Matrix> {
    (matrix(rows, rank), matrix(rank, cols)).prop_map(|(a, b)| a * b)
}

fn sizes() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..7, 1usize..7).prop_flat_map(|(r, c)| (Just(r), Just(c), 0..=r.min(c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn adjoint_identity(a in matrix(4, 6), x in prop::collection::vec(-2.0..2.0f64, 6), y in prop::collection::vec(-2.0..2.0f64, 4)) {
        let op = LinearOperator::new(a);
        let (x, y) = (Vector::from_vec(x), Vector::from_vec(y));
        let lhs = op.apply(&x).unwrap().dot(&y);
        let rhs = x.dot(&op.adjoint_apply(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs().max(rhs.abs())));
    }

    #[test]
    fn projector_is_idempotent_and_symmetric(a in matrix(6, 3)) {
        let p = Subspace::span(&a).projector().into_matrix();
        prop_assert!((&p * &p - &p).amax() <= 1e-10);
        prop_assert!((&p - p.transpose()).amax() <= 1e-10);
    }

    #[test]
    fn penrose_identities((r, c, k) in sizes(), seed in any::<u64>()) {
        let a = deterministic_low_rank(r, c, k, seed);
        let pinv = LinearOperator::new(a.clone()).pseudoinverse().into_matrix();
        let scale = 1.0 + a.norm() * pinv.norm();
        prop_assert!((&a * &pinv * &a - &a).amax() <= 1e-9 * scale * (1.0 + a.amax()));
        prop_assert!((&pinv * &a * &pinv - &pinv).amax() <= 1e-9 * scale * (1.0 + pinv.amax()));
        let ap = &a * &pinv;
        let pa = &pinv * &a;
        prop_assert!((&ap - ap.transpose()).amax() <= 1e-9 * scale);
        prop_assert!((&pa - pa.transpose()).amax() <= 1e-9 * scale);
    }

    #[test]
    fn kernel_is_orthogonal_to_rows(a in low_rank(5, 7, 3)) {
        let op = LinearOperator::new(a.clone());
        let smax = op.operator_norm();
        let ker = op.kernel_basis(1e-10);
        prop_assert!(ker.dim() >= 4);
        for b in ker.basis().column_iter() {
            prop_assert!((&a * b).norm() <= 1e-9 * smax.max(1.0));
        }
    }

    #[test]
    fn injectivity_constant_detects_restricted_injectivity(
        a in matrix(3, 5),
        support in prop::collection::btree_set(0usize..5, 1..5),
        duplicate in any::<bool>(),
    ) {
        // With L = Id, INJ(T) is linear independence of the columns on T.
        let support: Vec<usize> = support.into_iter().collect();
        let mut a = a;
        if duplicate && support.len() >= 2 {
            let c = a.column(support[0]).clone_owned();
            a.set_column(support[1], &c);
        }
        let phi = LinearOperator::new(a.clone());
        let id = LinearOperator::identity(5);
        let t = Subspace::coordinates(5, &support).unwrap();
        let c_phi = injectivity_constant(&phi, &id, &t.orthogonal_complement()).unwrap();
        let sub = Matrix::from_fn(3, support.len(), |i, j| a[(i, support[j])]);
        let sv = sub.svd(false, false).singular_values;
        let rank = sv.iter().filter(|&&s| s > 1e-9 * sv.max().max(1.0)).count();
        prop_assert_eq!(c_phi > 0.0, rank == support.len());
        prop_assert!((restricted_injectivity_constant(&phi, &t).unwrap() - c_phi).abs() <= 1e-9);
    }
}

fn deterministic_low_rank(rows: usize, cols: usize, rank: usize, seed: u64) -> Matrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::from_fn(rows, rank, |_, _| rng.random_range(-2.0..2.0));
    let b = Matrix::from_fn(rank, cols, |_, _| rng.random_range(-2.0..2.0));
    a * b
}
