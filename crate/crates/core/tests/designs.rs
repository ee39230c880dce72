use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use multitreat::estimators::max_normalized_weights;
use multitreat::gps::{fit_multinomial_logit, FitOptions};
use multitreat::simulation::{draw_covariates, generate, true_scores, Allocation, SimulationDesign};
use multitreat::trimming::trim;
use multitreat::Dataset;

#[test]
fn covariate_law_moments() {
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let xs: Vec<[f64; 7]> = (0..draws).map(|_| draw_covariates(&mut rng)).collect();
    let mean: Vec<f64> = (0..7).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / draws as f64).collect();
    let expected_mean = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5];
    let mut expected_cov = [[0.0; 6]; 6];
    let normal = [[2.0, 1.0, -1.0], [1.0, 1.0, -0.5], [-1.0, -0.5, 1.0]];
    for r in 0..3 {
        expected_cov[r][..3].copy_from_slice(&normal[r]);
    }
    expected_cov[3][3] = 3.0;
    expected_cov[4][4] = 2.0;
    expected_cov[5][5] = 0.25;
    for a in 0..6 {
        assert!((mean[a + 1] - expected_mean[a + 1]).abs() < 0.05, "mean of X{}", a + 1);
        for b in 0..6 {
            let c = xs.iter().map(|x| (x[a + 1] - mean[a + 1]) * (x[b + 1] - mean[b + 1])).sum::<f64>()
                / (draws - 1) as f64;
            assert!((c - expected_cov[a][b]).abs() < 0.05, "cov(X{}, X{}) = {c}", a + 1, b + 1);
        }
    }
}

#[test]
fn design_two_fills_every_arm_exactly() {
    let d = generate(&SimulationDesign::design2(), 5).unwrap();
    assert_eq!(d.arm_counts(), vec![1000; 6]);
    assert_eq!(d.covariate_names(), ["X1", "X2", "X3", "X4", "X5", "X6"]);
}

#[test]
fn exported_design_reloads_identically() {
    let d = generate(&SimulationDesign::design1(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("design1.csv");
    d.save_csv(&path).unwrap();
    let back = Dataset::load_csv(&path, &d.csv_schema()).unwrap();
    assert_eq!(back.covariates(), d.covariates());
    assert_eq!(back.treatment(), d.treatment());
    assert_eq!(back.outcome(), d.outcome());
    let mut wrong = d.csv_schema();
    wrong.covariates.push("X7".into());
    let err = Dataset::load_csv(&path, &wrong).unwrap_err().to_string();
    assert!(err.contains("X7"), "{err}");
}

#[test]
fn trimming_design_two_tames_extreme_weights() {
    let d = generate(&SimulationDesign::design2(), 12).unwrap();
    let fit = FitOptions::default();
    let s = fit_multinomial_logit(&d, &fit).unwrap().predict_scores(&d).unwrap();
    let before = max_normalized_weights(&d, &s).unwrap();
    let r = trim(&d, &s, true, &fit).unwrap();
    let after = max_normalized_weights(&r.dataset, &r.scores).unwrap();
    assert!(r.n_dropped() > 0);
    let peak = |w: &[f64]| w.iter().copied().fold(0.0, f64::max);
    assert!(peak(&after) < peak(&before), "{before:?} -> {after:?}");
    assert!(r.g.iter().filter(|&&g| g <= r.lambda).count() == r.dataset.n());
}

#[test]
fn multinomial_assignment_follows_the_true_scores() {
    let mut design = SimulationDesign::design1();
    design.allocation = Allocation::Multinomial { total: 100_000 };
    let d = generate(&design, 31).unwrap();
    let s = true_scores(&design, &d).unwrap();
    for w in 0..3 {
        let mut order: Vec<usize> = (0..d.n()).collect();
        order.sort_by(|&a, &b| s.get(a, w).total_cmp(&s.get(b, w)));
        for bin in order.chunks(d.n() / 10) {
            let observed = bin.iter().filter(|&&i| d.treatment()[i] == w).count() as f64;
            let expected: f64 = bin.iter().map(|&i| s.get(i, w)).sum();
            let var: f64 = bin.iter().map(|&i| s.get(i, w) * (1.0 - s.get(i, w))).sum();
            let z = (observed - expected) / var.sqrt();
            assert!(z.abs() < 4.0, "level {} bin z = {z}", w + 1);
        }
    }
}
