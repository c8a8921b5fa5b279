mod common;

use common::{ols, total_ss};
use flps::measurement::ModelKind;
use flps::rng::{stream, Domain};
use flps::simgen::{
    generate_dataset, generate_item_params, MissingMode, ScenarioConfig, SlopeDistribution,
};

#[test]
fn large_sample_regression_targets() {
    let cfg = ScenarioConfig {
        j: 2,
        ..ScenarioConfig::new(ModelKind::Rasch, 100_000, 2)
    }
    .with_seed(11);
    let (data, truth) = generate_dataset(&cfg).unwrap();
    let eta = &truth.params.eta;
    let n = data.n_subjects();

    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let x = data.covariates(i);
            vec![1.0, x[0], x[1]]
        })
        .collect();
    let (beta, rss) = ols(&rows, eta);
    assert!((beta[1] + 1.0).abs() < 0.02, "beta1 {}", beta[1]);
    assert!((beta[2] - 0.5).abs() < 0.02, "beta2 {}", beta[2]);
    let r2_eta = 1.0 - rss / total_ss(eta);
    assert!((r2_eta - 0.5).abs() < 0.01, "R2 eta {r2_eta}");

    // Partial R-squared of covariates for Y given treatment and trait.
    let reduced: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let z = if data.z()[i] { 1.0 } else { 0.0 };
            vec![1.0, z, eta[i], z * eta[i]]
        })
        .collect();
    let full: Vec<Vec<f64>> = reduced
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            r.extend_from_slice(data.covariates(i));
            r
        })
        .collect();
    let (_, rss_reduced) = ols(&reduced, data.y());
    let (_, rss_full) = ols(&full, data.y());
    let r2_y = 1.0 - rss_full / rss_reduced;
    assert!((r2_y - 0.2).abs() < 0.01, "R2 Y {r2_y}");
}

#[test]
fn missing_fraction_and_arm_sizes() {
    let cfg = ScenarioConfig::new(ModelKind::Rasch, 1000, 100).with_seed(3);
    let (data, _) = generate_dataset(&cfg).unwrap();
    assert_eq!(data.n_treated(), 500);
    let m = data.responses();
    assert_eq!(m.n_rows(), 500);
    for r in 0..m.n_rows() {
        assert_eq!(m.row(r).iter().filter(|c| c.is_none()).count(), 40);
    }
    let frac = m.n_missing() as f64 / (500.0 * 100.0);
    assert_eq!(frac, 0.4);

    let bern = ScenarioConfig {
        missing_mode: MissingMode::Bernoulli,
        ..cfg
    };
    let (data, _) = generate_dataset(&bern).unwrap();
    let frac = data.responses().n_missing() as f64 / 50_000.0;
    assert!((0.39..=0.41).contains(&frac), "{frac}");
}

#[test]
fn same_seed_same_dataset() {
    let cfg = ScenarioConfig::new(ModelKind::Gpcm, 40, 6).with_seed(21);
    let a = generate_dataset(&cfg).unwrap();
    let b = generate_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&cfg.clone().with_seed(22)).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn rasch_intercepts_are_standard_normal() {
    let mut rng = stream(1, Domain::Simulation, 9);
    let items = generate_item_params(
        ModelKind::Rasch,
        100_000,
        2,
        SlopeDistribution::default(),
        &mut rng,
    )
    .unwrap();
    let mean = items.iter().map(|it| it.intercepts()[0]).sum::<f64>() / items.len() as f64;
    assert!(mean.abs() < 0.02, "{mean}");
    assert!(items.iter().all(|it| it.slope() == 1.0));
}

#[test]
fn two_pl_log_slopes() {
    let mut rng = stream(2, Domain::Simulation, 9);
    let items = generate_item_params(
        ModelKind::TwoPl,
        100_000,
        2,
        SlopeDistribution::default(),
        &mut rng,
    )
    .unwrap();
    let logs: Vec<f64> = items[1..].iter().map(|it| it.slope().ln()).collect();
    let n = logs.len() as f64;
    let m = logs.iter().sum::<f64>() / n;
    let sd = (logs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((m - 0.1).abs() < 0.01, "{m}");
    assert!((sd - 0.3).abs() < 0.01, "{sd}");
    assert_eq!(items[0].slope(), 1.0);
    assert_eq!(items[0].intercepts()[0], 0.0);
}

#[test]
fn polytomous_threshold_construction() {
    for kind in [ModelKind::Gpcm, ModelKind::Grm] {
        let mut rng = stream(3, Domain::Simulation, kind as u64);
        let items =
            generate_item_params(kind, 20_000, 4, SlopeDistribution::default(), &mut rng).unwrap();
        let mut avg = [0.0; 3];
        for it in &items[1..] {
            let d = it.intercepts();
            assert_eq!(d.len(), 3);
            assert!((d.iter().sum::<f64>()).abs() < 1e-12);
            for k in 0..2 {
                let gap = (d[k + 1] - d[k]).abs();
                assert!((0.5..=1.0).contains(&gap), "{gap}");
            }
            if kind == ModelKind::Grm {
                assert!(d[0] > d[1] && d[1] > d[2]);
            }
            for k in 0..3 {
                avg[k] += d[k] / (items.len() - 1) as f64;
            }
        }
        let expected = if kind == ModelKind::Gpcm {
            [-0.75, 0.0, 0.75]
        } else {
            [0.75, 0.0, -0.75]
        };
        for k in 0..3 {
            assert!((avg[k] - expected[k]).abs() < 0.05, "{kind:?} {avg:?}");
        }
        assert_eq!(items[0].intercepts()[0], 0.0);
        assert_eq!(items[0].slope(), 1.0);
    }
}

#[test]
fn controls_have_no_responses() {
    let cfg = ScenarioConfig::new(ModelKind::Grm, 30, 5).with_seed(4);
    let (data, truth) = generate_dataset(&cfg).unwrap();
    for i in 0..data.n_subjects() {
        assert_eq!(data.response_row(i).is_some(), data.z()[i]);
    }
    assert_eq!(truth.params.eta.len(), 30);
    let sp = &truth.params.structural;
    assert!((0.1..0.3).contains(&sp.omega));
    assert!((0.2..0.4).contains(&sp.tau0));
    assert!((-0.2..-0.1).contains(&sp.tau1));
}
