//! Property tests for the library-wide invariants.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rda_core::data::{generate_contaminated_pair, read_csv, LabeledDataset, SyntheticConfig};
use rda_core::diagnostics::{diagnose, fit_farness};
use rda_core::discriminant::{fit, linear_score, predict, DASpec};
use rda_core::estimators::{
    c_step, classical_moments, exact_mcd, fast_mcd_fit, subset_covariance_log_det, subset_size, EstimatorConfig,
};

fn gaussian(rng: &mut ChaCha8Rng, m: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, p, |_, _| rng.sample(StandardNormal))
}

fn random_affine(rng: &mut ChaCha8Rng, p: usize) -> (DMatrix<f64>, DVector<f64>) {
    loop {
        let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        if a.determinant().abs() > 0.2 {
            let b = DVector::from_fn(p, |_, _| 5.0 * rng.sample::<f64, _>(StandardNormal));
            return (a, b);
        }
    }
}

fn transform(x: &DMatrix<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut y = x * a.transpose();
    for mut row in y.row_iter_mut() {
        row += b.transpose();
    }
    y
}

fn rel_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).norm() <= tol * b.norm().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(seed in any::<u64>(), n in 4usize..30, p in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, n, p).map(|v| v * 10f64.powi(rng.random_range(-8..8)));
        let labels: Vec<usize> = (0..n).map(|i| if i < 2 { i } else { rng.random_range(0..2) }).collect();
        let data = LabeledDataset::new(x, labels, vec!["neg".into(), "pos".into()]).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf, "class", None).unwrap();
        let back = read_csv(buf.as_slice(), "class").unwrap();
        prop_assert_eq!(back.labels(), data.labels());
        prop_assert_eq!(back.features(), data.features());
    }

    #[test]
    fn contamination_touches_exactly_the_configured_cases(
        seed in any::<u64>(),
        swap1 in 0usize..10, swap2 in 0usize..10, out1 in 0usize..10, out2 in 0usize..10,
    ) {
        let cfg = SyntheticConfig { seed, swap1, swap2, out1, out2, n1: 30, n2: 40, ..Default::default() };
        let pair = generate_contaminated_pair(&cfg).unwrap();
        prop_assert_eq!(pair.clean.n(), pair.contaminated.n());
        let relabeled = (0..pair.clean.n())
            .filter(|&i| pair.clean.labels()[i] != pair.contaminated.labels()[i])
            .count();
        let moved = (0..pair.clean.n())
            .filter(|&i| pair.clean.row(i) != pair.contaminated.row(i))
            .count();
        prop_assert_eq!(relabeled, swap1 + swap2);
        prop_assert_eq!(moved, out1 + out2);
    }

    #[test]
    fn c_step_sequences_are_monotone(seed in any::<u64>(), m in 8usize..40, p in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, m, p);
        let h = subset_size(0.5 + 0.5 * rng.random::<f64>() * 0.9, m).max(p + 1);
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(&mut rng);
        let mut subset: Vec<usize> = idx[..h].to_vec();
        let mut prev = subset_covariance_log_det(&x, &subset);
        let mut converged = false;
        for _ in 0..100 {
            let step = c_step(&x, &subset).unwrap();
            prop_assert!(step.log_det <= prev + 1e-10);
            let done = prev - step.log_det <= 1e-12 * prev.abs().max(1.0);
            prev = step.log_det;
            subset = step.subset;
            if done {
                converged = true;
                break;
            }
        }
        prop_assert!(converged);
    }

    #[test]
    fn exact_mcd_is_affine_equivariant(seed in any::<u64>(), m in 6usize..11) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, m, 2);
        let (a, b) = random_affine(&mut rng, 2);
        let e = exact_mcd(&x, 0.5).unwrap();
        let f = exact_mcd(&transform(&x, &a, &b), 0.5).unwrap();
        let want_center = &a * e.center() + &b;
        let want_scatter = &a * e.scatter() * a.transpose();
        prop_assert!((f.center() - &want_center).norm() <= 1e-8 * want_center.norm().max(1.0));
        prop_assert!(rel_close(f.scatter(), &want_scatter, 1e-8));
    }

    #[test]
    fn fast_mcd_objective_scales_with_det_squared(seed in any::<u64>(), m in 20usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, m, 2);
        let (a, b) = random_affine(&mut rng, 2);
        let cfg = EstimatorConfig { seed, n_starts: 50, ..Default::default() };
        let u = fast_mcd_fit(&x, &cfg).unwrap();
        let v = fast_mcd_fit(&transform(&x, &a, &b), &cfg).unwrap();
        let shift = 2.0 * a.determinant().abs().ln();
        let rel = ((v.objective_log_det - u.objective_log_det - shift).exp() - 1.0).abs();
        prop_assert!(rel < 1e-8, "relative gap {rel}");
    }

    #[test]
    fn classical_moments_match_full_coverage_mcd(seed in any::<u64>(), m in 4usize..12, p in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, m, p);
        let c = classical_moments(&x).unwrap();
        let e = exact_mcd(&x, 1.0).unwrap();
        prop_assert!((c.center() - e.center()).norm() < 1e-10);
        prop_assert!(rel_close(e.scatter(), c.scatter(), 1e-10));
    }
}

fn blob_data(seed: u64, groups: usize) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = 25;
    let x = DMatrix::from_fn(per * groups, 2, |i, j| {
        let z: f64 = rng.sample(StandardNormal);
        let g = (i / per) as f64;
        z * (1.0 + 0.3 * g) + if j == 0 { 2.5 * g } else { 1.5 * g * (g - 1.0) }
    });
    let labels = (0..per * groups).map(|i| i / per).collect();
    let names = (0..groups).map(|g| format!("c{g}")).collect();
    LabeledDataset::new(x, labels, names).unwrap()
}

fn specs() -> Vec<DASpec> {
    let fast = |mut s: DASpec| {
        s.estimator.n_starts = 60;
        s
    };
    vec![DASpec::cqda(), DASpec::clda(), fast(DASpec::rqda(0.75)), fast(DASpec::rlda(0.75))]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn priors_sum_to_one(seed in any::<u64>(), groups in 2usize..5) {
        let data = blob_data(seed, groups);
        for spec in specs() {
            let model = fit(&data, &spec).unwrap();
            prop_assert!((model.priors().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_the_cutoff_never_creates_outliers(seed in any::<u64>(), lo in 0.8f64..0.99, gap in 0.001f64..0.0099) {
        let data = blob_data(seed, 3);
        let mut a = DASpec::cqda();
        a.outlier_cutoff_prob = lo;
        let mut b = a.clone();
        b.outlier_cutoff_prob = lo + gap;
        let (ma, mb) = (fit(&data, &a).unwrap(), fit(&data, &b).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        for _ in 0..200 {
            let x = [8.0 * rng.random::<f64>() - 3.0, 8.0 * rng.random::<f64>() - 3.0];
            if !predict(&ma, &x).unwrap().overall_outlier {
                prop_assert!(!predict(&mb, &x).unwrap().overall_outlier);
            }
        }
    }

    #[test]
    fn linear_scores_differ_from_quadratic_by_a_constant(seed in any::<u64>(), robust in any::<bool>()) {
        let data = blob_data(seed, 3);
        let spec = if robust { specs()[3].clone() } else { DASpec::clda() };
        let model = fit(&data, &spec).unwrap();
        let common = model.common_scatter().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let x = [6.0 * rng.random::<f64>() - 2.0, 6.0 * rng.random::<f64>() - 2.0];
            let pred = predict(&model, &x).unwrap();
            let mut offsets = Vec::new();
            for g in 0..3 {
                let quad = -0.5 * common.log_det()
                    - 0.5 * model.class_model(g).mahalanobis_sq_slice(&x).unwrap()
                    + model.priors()[g].ln();
                let lin = linear_score(&x, model.class_model(g).center(), common, model.priors()[g]).unwrap();
                prop_assert!((lin - pred.scores[g]).abs() < 1e-9 * lin.abs().max(1.0));
                offsets.push(lin - quad);
            }
            prop_assert!(offsets.iter().all(|o| (o - offsets[0]).abs() < 1e-9 * offsets[0].abs().max(1.0)));
        }
    }

    #[test]
    fn per_case_diagnostic_identities(seed in any::<u64>()) {
        let cfg = SyntheticConfig { seed, ..Default::default() };
        let pair = generate_contaminated_pair(&cfg).unwrap();
        let mut spec = DASpec::rqda(0.75);
        spec.estimator.n_starts = 100;
        let model = fit(&pair.contaminated, &spec).unwrap();
        let fm = fit_farness(&model, &pair.contaminated).unwrap();
        for d in diagnose(&model, &pair.contaminated, &fm).unwrap() {
            prop_assert_eq!(d.silhouette, 1.0 - 2.0 * d.pac);
            prop_assert!((0.0..=1.0).contains(&d.pac));
            prop_assert!((d.posteriors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((d.pac - d.posteriors[1 - d.given]).abs() < 1e-12);
            if d.pac != 0.5 {
                prop_assert_eq!(d.predicted != d.given, d.pac > 0.5);
            }
            prop_assert!(d.farness.iter().flatten().all(|f| (0.0..=1.0).contains(f)));
        }
    }
}
