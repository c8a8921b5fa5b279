mod common;

use flps::measurement::{ItemParams, ModelKind, ResponseMatrix};
use flps::posterior::oracle::{oracle_posterior_summary, Oracle, OracleSettings};
use flps::posterior::{MeasurementSpec, PriorConfig, TrialDataset};
use flps::structural::{outcome_log_density, StructuralParams};
use flps::Error;

fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let r = (x - mean) / sd;
    -0.5 * r * r - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn rasch_items(d: &[f64]) -> Vec<ItemParams> {
    d.iter()
        .map(|&v| ItemParams::new(ModelKind::Rasch, None, vec![v]).unwrap())
        .collect()
}

/// Five subjects without covariates: three controls and two treated
/// subjects whose responses are all missing, plus one with responses.
fn tiny() -> TrialDataset {
    let z = vec![false, false, false, true, true, true];
    let y = vec![0.3, -1.2, 2.0, 0.7, -0.4, 1.1];
    let rows = vec![vec![None, None], vec![None, None], vec![Some(1), Some(0)]];
    let m = ResponseMatrix::from_rows(&rows, vec![2, 2]).unwrap();
    let spec = MeasurementSpec::new(ModelKind::Rasch, 2, 2).unwrap();
    let ids = (1..=6).map(|i| format!("s{i}")).collect();
    TrialDataset::new(ids, z, y, vec![], vec![], m, spec).unwrap()
}

fn structural() -> StructuralParams {
    StructuralParams {
        beta0: 0.4,
        beta: vec![],
        sigma_eta: 1.3,
        gamma0: -0.2,
        gamma: vec![],
        omega: 0.7,
        tau0: 0.25,
        tau1: 0.0,
        sigma_y: 0.9,
    }
}

#[test]
fn refuses_large_instances() {
    let prior = PriorConfig::weakly_informative(5.0);
    let (big_n, _) = common::instance(ModelKind::Rasch, 52, 4, 1);
    let items = rasch_items(&[0.0; 4]);
    assert!(matches!(
        Oracle::new(&big_n, &items, &prior, 61),
        Err(Error::OracleRefused(_))
    ));
    let (big_j, _) = common::instance(ModelKind::Rasch, 20, 7, 1);
    let items7 = rasch_items(&[0.0; 7]);
    assert!(matches!(
        Oracle::new(&big_j, &items7, &prior, 61),
        Err(Error::OracleRefused(_))
    ));
    let (ok, _) = common::instance(ModelKind::Rasch, 20, 4, 1);
    assert!(matches!(
        Oracle::new(&ok, &items, &prior, 40),
        Err(Error::OracleRefused(_))
    ));
    assert!(Oracle::new(&ok, &items[..3], &prior, 61).is_err());
    assert!(Oracle::new(&ok, &items, &prior, 61).is_ok());
}

#[test]
fn conjugate_factors_match_closed_form() {
    let data = tiny();
    let items = rasch_items(&[0.0, 0.5]);
    let prior = PriorConfig::flat();
    let oracle = Oracle::new(&data, &items, &prior, 61).unwrap();
    let sp = structural();
    let mu = sp.beta0;
    for i in 0..5 {
        let (slope, shift) = if data.z()[i] {
            (sp.omega + sp.tau1, sp.tau0)
        } else {
            (sp.omega, 0.0)
        };
        let mean = sp.gamma0 + shift + slope * mu;
        let sd = (sp.sigma_y.powi(2) + slope.powi(2) * sp.sigma_eta.powi(2)).sqrt();
        let expected = normal_logpdf(data.y()[i], mean, sd);
        let got = oracle.subject_log_marginal(i, &sp);
        assert!(
            (got - expected).abs() < 1e-8,
            "subject {i}: {got} vs {expected}"
        );
    }
}

#[test]
fn treated_factor_matches_dense_trapezoid() {
    let data = tiny();
    let items = rasch_items(&[0.0, 0.5]);
    let prior = PriorConfig::flat();
    let oracle = Oracle::new(&data, &items, &prior, 61).unwrap();
    let sp = StructuralParams {
        tau1: -0.3,
        ..structural()
    };
    let log_sigmoid = |x: f64| -(-x).exp().ln_1p();
    let integrand = |eta: f64| {
        let lik = log_sigmoid(eta - 0.0) + log_sigmoid(-(eta + 0.5));
        (normal_logpdf(eta, sp.beta0, sp.sigma_eta)
            + outcome_log_density(1.1, true, eta, &[], &sp).unwrap()
            + lik)
            .exp()
    };
    let (lo, hi, n) = (-14.0, 14.0, 200_000);
    let h = (hi - lo) / n as f64;
    let mut s = 0.5 * (integrand(lo) + integrand(hi));
    for k in 1..n {
        s += integrand(lo + k as f64 * h);
    }
    let expected = (s * h).ln();
    let got = oracle.subject_log_marginal(5, &sp);
    assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
}

#[test]
fn short_run_is_self_consistent() {
    let (data, truth) = common::instance(ModelKind::Rasch, 20, 4, 5);
    let prior = PriorConfig::weakly_informative(5.0);
    let settings = OracleSettings {
        iterations: 20_000,
        pilot: 9_000,
        seed: 3,
        ..OracleSettings::default()
    };
    let a = oracle_posterior_summary(&data, &truth.params.items, &prior, &settings).unwrap();
    let b = oracle_posterior_summary(&data, &truth.params.items, &prior, &settings).unwrap();
    assert_eq!(a, b);
    assert!(a.integration_error < 1e-10, "{}", a.integration_error);
    assert!(a.refinement_change < 1e-6, "{}", a.refinement_change);
    assert!(
        (0.1..0.6).contains(&a.acceptance_rate),
        "{}",
        a.acceptance_rate
    );
    assert_eq!(a.params.len(), 11);
    for p in &a.params {
        assert!(p.q2_5 < p.mean && p.mean < p.q97_5, "{p:?}");
        // Mixing is judged by the full-length comparison, not here.
        assert!(p.mcse > 0.0 && p.ess >= 1.0, "{p:?}");
    }
    assert!(a.get("sigma_y").unwrap().q2_5 > 0.0);
}
