use convfy::harness::{regret_record, LinkChoice};
use convfy::negentropy::simplex_threshold;
use convfy::{simplex_project, ClassDistribution, ConvFYLoss, DecomposedTargetLoss, EntropyKind, Negentropy};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn eta_from(weights: Vec<f64>) -> ClassDistribution {
    let s: f64 = weights.iter().sum();
    ClassDistribution::new(weights.iter().map(|w| w / s).collect()).unwrap()
}

fn losses() -> Vec<(DecomposedTargetLoss, EntropyKind)> {
    vec![
        (
            DecomposedTargetLoss::make_zero_one(4).unwrap(),
            EntropyKind::Shannon,
        ),
        (
            DecomposedTargetLoss::make_zero_one(3).unwrap(),
            EntropyKind::SquaredNorm,
        ),
        (
            DecomposedTargetLoss::make_hamming(2).unwrap(),
            EntropyKind::SquaredNorm,
        ),
        (
            DecomposedTargetLoss::make_top_k(4, 2).unwrap(),
            EntropyKind::SquaredNorm,
        ),
        (
            DecomposedTargetLoss::from_matrix(&DMatrix::from_row_slice(
                3,
                4,
                &[0.0, 1.0, 2.0, 0.5, 1.0, 0.0, 1.0, 0.5, 2.0, 1.0, 0.0, 0.5],
            ))
            .unwrap(),
            EntropyKind::Shannon,
        ),
    ]
}

fn fy(i: usize) -> ConvFYLoss {
    let (loss, kind) = losses().swap_remove(i);
    let dim = loss.rho_dim();
    ConvFYLoss::new(loss, Negentropy::new(kind, dim)).unwrap()
}

fn case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (0..5usize).prop_flat_map(|i| {
        let f = fy(i);
        (
            Just(i),
            prop::collection::vec(-5.0..5.0f64, f.target().rho_dim()),
            prop::collection::vec(0.001..1.0f64, f.target().num_classes()),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_lands_on_simplex(v in prop::collection::vec(-10.0..10.0f64, 1..12)) {
        let p = simplex_project(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let again = simplex_project(&p);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let (tau, n) = simplex_threshold(&v);
        prop_assert!(n >= 1 && n <= v.len());
        let mass: f64 = v.iter().map(|x| (x - tau).max(0.0)).sum();
        prop_assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn target_regrets_are_nonnegative_with_a_zero((i, _theta, w) in case()) {
        let f = fy(i);
        let r = f.target().target_regrets(&eta_from(w)).unwrap();
        prop_assert!(r.iter().all(|&x| x >= -1e-12));
        prop_assert!(r.contains(&0.0));
    }

    #[test]
    fn bayes_term_is_convex((i, _theta, w) in case(), w2 in prop::collection::vec(0.001..1.0f64, 16)) {
        let f = fy(i);
        let loss = f.target();
        let k = loss.num_classes();
        let a = loss.mean_embedding(&eta_from(w)).unwrap();
        let b = loss.mean_embedding(&eta_from(w2[..k].to_vec())).unwrap();
        let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let t = |p: &[f64]| loss.transformed_bayes_negative(p).unwrap();
        prop_assert!(t(&m) <= 0.5 * (t(&a) + t(&b)) + 1e-12);
    }

    #[test]
    fn loss_is_nonnegative_and_bounded_regret((i, theta, w) in case()) {
        let f = fy(i);
        for y in 0..f.target().num_classes() {
            prop_assert!(f.loss_value(&theta, y).unwrap() >= -1e-10);
        }
        let eta = eta_from(w);
        for link in [LinkChoice::Argmax, LinkChoice::Sparse, LinkChoice::Random] {
            let r = regret_record(&f, link, &theta, &eta, 0).unwrap();
            prop_assert!(!r.violated, "{link:?}: {r:?}");
        }
    }

    #[test]
    fn surrogate_regret_is_risk_minus_bayes_risk((i, theta, w) in case()) {
        let f = fy(i);
        let eta = eta_from(w);
        let direct = f.surrogate_risk(&theta, &eta).unwrap() - f.surrogate_bayes_risk(&eta).unwrap();
        let closed = f.surrogate_regret(&theta, &eta).unwrap();
        prop_assert!((direct - closed).abs() < 1e-9);
        prop_assert!(closed >= -1e-10);
    }

    #[test]
    fn risk_is_expected_loss((i, theta, w) in case()) {
        let f = fy(i);
        let eta = eta_from(w);
        let expected: f64 = eta
            .as_slice()
            .iter()
            .enumerate()
            .map(|(y, p)| p * f.loss_value(&theta, y).unwrap())
            .sum();
        prop_assert!((expected - f.surrogate_risk(&theta, &eta).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn shannon_gradient_sums_to_zero(theta in prop::collection::vec(-5.0..5.0f64, 2..8), y in 0usize..8) {
        let k = theta.len();
        let f = ConvFYLoss::new(DecomposedTargetLoss::make_zero_one(k).unwrap(), Negentropy::shannon(k)).unwrap();
        let g = f.loss_grad(&theta, y % k).unwrap();
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn affine_dimension_is_bounded(
        rows in 1usize..5,
        cols in 1usize..6,
        vals in prop::collection::vec(0.0..3.0f64, 30),
    ) {
        let raw = DMatrix::from_row_slice(rows, cols, &vals[..rows * cols]);
        let loss = DecomposedTargetLoss::from_matrix(&raw).unwrap();
        prop_assert!(loss.affine_dimension() <= (cols - 1).min(rows));
    }
}

#[test]
fn csv_loss_matrix_with_and_without_header() {
    let with = "p1,p2,p3\n0,1,1\n1,0,1\n";
    let without = "0,1,1\n1,0,1\n";
    let a = DecomposedTargetLoss::from_csv_reader(with.as_bytes()).unwrap();
    let b = DecomposedTargetLoss::from_csv_reader(without.as_bytes()).unwrap();
    assert_eq!(a.num_classes(), 2);
    assert_eq!(a.num_predictions(), 3);
    assert_eq!(a.loss_matrix(), b.loss_matrix());
    assert_eq!(a.loss(2, 1), 1.0);
}

#[test]
fn csv_loss_matrix_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    std::fs::write(&path, "0,1\n1,0\n").unwrap();
    let loss = DecomposedTargetLoss::from_csv_path(&path).unwrap();
    let f = ConvFYLoss::new(loss, Negentropy::shannon(2)).unwrap();
    assert!(f.loss_value(&[0.0, 0.0], 0).unwrap() > 0.0);
    assert!(DecomposedTargetLoss::from_csv_path(dir.path().join("missing.csv")).is_err());
}
