mod common;

use common::{fd_gradient, instance, max_rel_error, random_point};
use flps::measurement::{matrix_log_lik, ItemParams, ModelKind, ResponseMatrix};
use flps::posterior::{
    Constraint, FlpsModel, ItemSource, MeasurementSpec, ParameterSet, PriorConfig, TrialDataset,
};
use flps::sampler::{run_chains, LogDensity, SamplerConfig};
use flps::structural::{eta_log_density, outcome_log_density, StructuralParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn structural(p: usize) -> StructuralParams {
    StructuralParams {
        beta0: 0.1,
        beta: vec![-0.7; p],
        sigma_eta: 1.3,
        gamma0: -0.2,
        gamma: vec![0.4; p],
        omega: 0.25,
        tau0: 0.3,
        tau1: -0.15,
        sigma_y: 0.8,
    }
}

fn model(kind: ModelKind, n: usize, j: usize, seed: u64, prior: PriorConfig) -> FlpsModel {
    let (data, _) = instance(kind, n, j, seed);
    FlpsModel::new(data, prior, ItemSource::Estimated).unwrap()
}

#[test]
fn dimension_formula_per_kind() {
    let (n, j, k, p) = (12, 5, 4, 2);
    for kind in ModelKind::ALL {
        let m = model(kind, n, j, 1, PriorConfig::default());
        let item_free = match kind {
            ModelKind::Rasch => j,
            ModelKind::TwoPl => 2 * j - 2,
            ModelKind::Gpcm | ModelKind::Grm => j * k - 2,
        };
        assert_eq!(m.n_params(), item_free + 2 * p + 7 + n, "{kind}");
        assert_eq!(m.n_structural(), 2 * p + 7);
        assert_eq!(m.names().len(), m.n_params());
    }
    let (data, _) = instance(ModelKind::Rasch, n, j, 1);
    let fixed = FlpsModel::new(
        data.with_constraint(Constraint::FixFirstItem),
        PriorConfig::default(),
        ItemSource::Estimated,
    )
    .unwrap();
    assert_eq!(fixed.n_params(), j - 1 + 2 * p + 7 + n);
}

#[test]
fn known_transforms() {
    // GRM thresholds (1, -1) are coded as (1, ln 2); a unit slope as 0.
    let spec = MeasurementSpec::new(ModelKind::Grm, 2, 3)
        .unwrap()
        .with_constraint(Constraint::None);
    let data = TrialDataset::new(
        vec![],
        vec![],
        vec![],
        vec![],
        vec![],
        ResponseMatrix::empty(vec![3, 3]).unwrap(),
        spec,
    )
    .unwrap();
    let m = FlpsModel::new(data, PriorConfig::default(), ItemSource::Estimated).unwrap();
    let ps = ParameterSet {
        items: vec![
            ItemParams::grm(1.0, vec![1.0, -1.0]).unwrap(),
            ItemParams::grm(2.0, vec![0.5, 0.0]).unwrap(),
        ],
        structural: structural(0),
        eta: vec![],
    };
    let v = m.to_unconstrained(&ps).unwrap();
    assert_eq!(&v[..3], &[0.0, 1.0, 2f64.ln()]);
    assert_eq!(m.from_unconstrained(&v).unwrap(), ps);
}

#[test]
fn fixed_coordinates_cannot_be_moved() {
    let m = model(ModelKind::TwoPl, 6, 3, 2, PriorConfig::default());
    let mut ps = m.from_unconstrained(&vec![0.1; m.n_params()]).unwrap();
    assert_eq!(ps.items[0].slope(), 1.0);
    assert_eq!(ps.items[0].intercepts()[0], 0.0);
    ps.items[0] = ItemParams::two_pl(1.5, 0.0).unwrap();
    assert!(m.to_unconstrained(&ps).is_err());
    ps.items[0] = ItemParams::two_pl(1.0, 0.2).unwrap();
    assert!(m.to_unconstrained(&ps).is_err());
}

#[test]
fn prior_term_oracles() {
    // One free 2PL item, no subjects, unit scales.
    let spec = MeasurementSpec::new(ModelKind::TwoPl, 1, 2)
        .unwrap()
        .with_constraint(Constraint::None);
    let data = TrialDataset::new(
        vec![],
        vec![],
        vec![],
        vec![],
        vec![],
        ResponseMatrix::empty(vec![2]).unwrap(),
        spec,
    )
    .unwrap();
    let m = FlpsModel::new(data.clone(), PriorConfig::default(), ItemSource::Estimated).unwrap();
    let ps = ParameterSet {
        items: vec![ItemParams::two_pl(1.0, 0.0).unwrap()],
        structural: StructuralParams {
            sigma_eta: 1.0,
            sigma_y: 1.0,
            ..structural(0)
        },
        eta: vec![],
    };
    // log LogNormal(1; 0.1, 0.3) + log N(0; 0, 1), 30-digit reference values
    let slope = 0.229_478_715_565_707_7;
    let intercept = -0.918_938_533_204_672_7;
    assert!((m.log_prior(&ps) - (slope + intercept)).abs() < 1e-14);
    // With no subjects the posterior is the prior.
    let v = m.to_unconstrained(&ps).unwrap();
    assert!((m.log_posterior(&v).unwrap() - m.log_prior(&ps)).abs() < 1e-14);

    let flat = FlpsModel::new(data, PriorConfig::flat(), ItemSource::Estimated).unwrap();
    assert_eq!(flat.log_prior(&ps), 0.0);
    // Scale Jacobian ln(sigma) shows up off the unit scale.
    let ps2 = ParameterSet {
        structural: StructuralParams {
            sigma_eta: 2.0,
            ..ps.structural.clone()
        },
        ..ps
    };
    assert!((flat.log_prior(&ps2) - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn single_control_subject_is_two_density_terms() {
    let spec = MeasurementSpec::new(ModelKind::Rasch, 2, 2).unwrap();
    let data = TrialDataset::new(
        vec!["c".into()],
        vec![false],
        vec![1.7],
        vec![0.4],
        vec!["x1".into()],
        ResponseMatrix::empty(vec![2, 2]).unwrap(),
        spec,
    )
    .unwrap();
    let m = FlpsModel::new(data, PriorConfig::flat(), ItemSource::Estimated).unwrap();
    let sp = StructuralParams {
        sigma_eta: 1.0,
        sigma_y: 1.0,
        ..structural(1)
    };
    let ps = ParameterSet {
        items: vec![
            ItemParams::rasch(0.3).unwrap(),
            ItemParams::rasch(-0.2).unwrap(),
        ],
        structural: sp.clone(),
        eta: vec![-0.6],
    };
    let v = m.to_unconstrained(&ps).unwrap();
    let expected = eta_log_density(-0.6, &[0.4], &sp).unwrap()
        + outcome_log_density(1.7, false, -0.6, &[0.4], &sp).unwrap();
    assert!((m.log_posterior(&v).unwrap() - expected).abs() < 1e-13);
}

#[test]
fn three_subject_hand_computation() {
    // Two treated, one control; Rasch, two items, no covariates.
    let spec = MeasurementSpec::new(ModelKind::Rasch, 2, 2).unwrap();
    let responses =
        ResponseMatrix::from_rows(&[vec![Some(1), None], vec![Some(0), Some(1)]], vec![2, 2])
            .unwrap();
    let data = TrialDataset::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec![true, false, true],
        vec![0.5, -1.0, 2.0],
        vec![],
        vec![],
        responses,
        spec,
    )
    .unwrap();
    let m = FlpsModel::new(data, PriorConfig::flat(), ItemSource::Estimated).unwrap();
    let sp = structural(0);
    let eta = [0.2, -0.4, 1.1];
    let d = [0.3, -0.8];
    let ps = ParameterSet {
        items: d.iter().map(|&v| ItemParams::rasch(v).unwrap()).collect(),
        structural: sp.clone(),
        eta: eta.to_vec(),
    };
    let v = m.to_unconstrained(&ps).unwrap();
    let logit = |x: f64| 1.0 / (1.0 + (-x).exp());
    let ln_norm = |x: f64, mu: f64, s: f64| {
        -0.5 * ((x - mu) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    };
    let mut expected =
        logit(eta[0] + d[0]).ln() + (1.0 - logit(eta[2] + d[0])).ln() + logit(eta[2] + d[1]).ln();
    let y = [0.5, -1.0, 2.0];
    let z = [1.0, 0.0, 1.0];
    for i in 0..3 {
        expected += ln_norm(eta[i], sp.beta0, sp.sigma_eta);
        let mu = sp.gamma0 + sp.omega * eta[i] + z[i] * (sp.tau0 + sp.tau1 * eta[i]);
        expected += ln_norm(y[i], mu, sp.sigma_y);
    }
    expected += sp.sigma_eta.ln() + sp.sigma_y.ln();
    assert!((m.log_posterior(&v).unwrap() - expected).abs() < 1e-12);
}

fn decomposition_gap(m: &FlpsModel, v: &[f64]) -> f64 {
    let data = m.data();
    let ps = m.from_unconstrained(v).unwrap();
    let treated_eta: Vec<f64> = data.treated().iter().map(|&i| ps.eta[i]).collect();
    let mut total =
        m.log_prior(&ps) + matrix_log_lik(data.responses(), &treated_eta, &ps.items).unwrap();
    for i in 0..data.n_subjects() {
        let x = data.covariates(i);
        total += eta_log_density(ps.eta[i], x, &ps.structural).unwrap();
        total +=
            outcome_log_density(data.y()[i], data.z()[i], ps.eta[i], x, &ps.structural).unwrap();
    }
    (m.log_posterior(v).unwrap() - total).abs()
}

#[test]
fn log_posterior_decomposes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for kind in ModelKind::ALL {
        for prior in [PriorConfig::default(), PriorConfig::weakly_informative(5.0)] {
            let m = model(kind, 20, 4, 3, prior);
            for _ in 0..5 {
                let v = random_point(&m, 1.5, &mut rng);
                assert!(decomposition_gap(&m, &v) < 1e-10, "{kind}");
            }
        }
    }
}

/// Rebuilds `data` with subjects reordered by `perm` (new position i holds old subject perm[i]).
fn permuted(data: &TrialDataset, perm: &[usize]) -> TrialDataset {
    let pick = |i: usize| perm[i];
    let n = data.n_subjects();
    let rows: Vec<Vec<Option<u8>>> = (0..n)
        .filter_map(|i| {
            data.response_row(pick(i))
                .map(|r| data.responses().row(r).to_vec())
        })
        .collect();
    TrialDataset::new(
        (0..n).map(|i| data.ids()[pick(i)].clone()).collect(),
        (0..n).map(|i| data.z()[pick(i)]).collect(),
        (0..n).map(|i| data.y()[pick(i)]).collect(),
        (0..n)
            .flat_map(|i| data.covariates(pick(i)).to_vec())
            .collect(),
        data.covariate_names().to_vec(),
        ResponseMatrix::from_rows(&rows, data.spec().categories.clone()).unwrap(),
        data.spec().clone(),
    )
    .unwrap()
}

#[test]
fn subject_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for kind in ModelKind::ALL {
        let (data, _) = instance(kind, 10, 3, 4);
        let perm = [3, 7, 0, 9, 1, 5, 2, 8, 6, 4];
        let a =
            FlpsModel::new(data.clone(), PriorConfig::default(), ItemSource::Estimated).unwrap();
        let b = FlpsModel::new(
            permuted(&data, &perm),
            PriorConfig::default(),
            ItemSource::Estimated,
        )
        .unwrap();
        let va = random_point(&a, 1.0, &mut rng);
        let mut ps = a.from_unconstrained(&va).unwrap();
        ps.eta = perm.iter().map(|&i| ps.eta[i]).collect();
        let vb = b.to_unconstrained(&ps).unwrap();
        let (la, ga) = a.grad_log_posterior(&va).unwrap();
        let (lb, gb) = b.grad_log_posterior(&vb).unwrap();
        assert!((la - lb).abs() < 1e-10 * la.abs().max(1.0), "{kind}");
        for (i, &old) in perm.iter().enumerate() {
            assert!((ga[a.eta_index(old)] - gb[b.eta_index(i)]).abs() < 1e-10);
        }
    }
}

/// Same trial plus one extra item that nobody answered.
fn with_unanswered_item(data: &TrialDataset) -> TrialDataset {
    let mut cats = data.spec().categories.clone();
    cats.push(*cats.last().unwrap());
    let rows: Vec<Vec<Option<u8>>> = (0..data.responses().n_rows())
        .map(|r| {
            let mut row = data.responses().row(r).to_vec();
            row.push(None);
            row
        })
        .collect();
    let spec = MeasurementSpec {
        categories: cats.clone(),
        ..data.spec().clone()
    };
    TrialDataset::new(
        data.ids().to_vec(),
        data.z().to_vec(),
        data.y().to_vec(),
        (0..data.n_subjects())
            .flat_map(|i| data.covariates(i).to_vec())
            .collect(),
        data.covariate_names().to_vec(),
        ResponseMatrix::from_rows(&rows, cats).unwrap(),
        spec,
    )
    .unwrap()
}

#[test]
fn missing_responses_are_neutral() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for kind in ModelKind::ALL {
        let (data, truth) = instance(kind, 10, 3, 5);
        let extended = with_unanswered_item(&data);

        // Known items: the unanswered item adds no coordinates at all.
        let items = truth.params.items.clone();
        let mut more = items.clone();
        more.push(items[1].clone());
        let a = FlpsModel::new(
            data.clone(),
            PriorConfig::default(),
            ItemSource::Fixed(items),
        )
        .unwrap();
        let b = FlpsModel::new(
            extended.clone(),
            PriorConfig::default(),
            ItemSource::Fixed(more),
        )
        .unwrap();
        let v = random_point(&a, 1.0, &mut rng);
        assert_eq!(
            a.grad_log_posterior(&v).unwrap(),
            b.grad_log_posterior(&v).unwrap(),
            "{kind}"
        );

        // Estimated items: only the new item's own prior terms differ.
        let a =
            FlpsModel::new(data.clone(), PriorConfig::default(), ItemSource::Estimated).unwrap();
        let b = FlpsModel::new(extended, PriorConfig::default(), ItemSource::Estimated).unwrap();
        let va = random_point(&a, 1.0, &mut rng);
        let pa = a.from_unconstrained(&va).unwrap();
        let mut pb = pa.clone();
        pb.items.push(pa.items[1].clone());
        let extra = b.n_params() - a.n_params();
        let item_end = a.n_params() - a.n_structural() - data.n_subjects();
        // Splice the original coordinates (a round trip through exp/ln is not bit-exact).
        let coded = b.to_unconstrained(&pb).unwrap();
        let mut vb = va[..item_end].to_vec();
        vb.extend_from_slice(&coded[item_end..item_end + extra]);
        vb.extend_from_slice(&va[item_end..]);
        let (la, ga) = a.grad_log_posterior(&va).unwrap();
        let (lb, gb) = b.grad_log_posterior(&vb).unwrap();
        assert!(
            ((la - a.log_prior(&pa)) - (lb - b.log_prior(&pb))).abs() < 1e-12,
            "{kind}"
        );
        assert_eq!(&ga[..item_end], &gb[..item_end]);
        assert_eq!(&ga[item_end..], &gb[item_end + extra..]);
    }
}

#[test]
fn identical_subjects_get_identical_eta_gradients() {
    let spec = MeasurementSpec::new(ModelKind::TwoPl, 3, 2).unwrap();
    let row = vec![Some(1), None, Some(0)];
    let data = TrialDataset::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec![true, true, false],
        vec![0.9, 0.9, 0.0],
        vec![0.5, 0.5, -1.0],
        vec!["x1".into()],
        ResponseMatrix::from_rows(&[row.clone(), row], vec![2; 3]).unwrap(),
        spec,
    )
    .unwrap();
    let m = FlpsModel::new(data, PriorConfig::default(), ItemSource::Estimated).unwrap();
    let mut v = vec![0.3; m.n_params()];
    v[m.eta_index(0)] = -0.4;
    v[m.eta_index(1)] = -0.4;
    let (_, g) = m.grad_log_posterior(&v).unwrap();
    assert_eq!(g[m.eta_index(0)], g[m.eta_index(1)]);
}

#[test]
fn flat_direction_has_zero_gradient() {
    // Item 2 is never answered and its intercept prior is flat.
    let spec = MeasurementSpec::new(ModelKind::Rasch, 2, 2).unwrap();
    let data = TrialDataset::new(
        vec!["a".into(), "b".into()],
        vec![true, false],
        vec![1.0, 0.0],
        vec![],
        vec![],
        ResponseMatrix::from_rows(&[vec![Some(1), None]], vec![2, 2]).unwrap(),
        spec,
    )
    .unwrap();
    let m = FlpsModel::new(data, PriorConfig::flat(), ItemSource::Estimated).unwrap();
    let (_, g) = m.grad_log_posterior(&vec![0.7; m.n_params()]).unwrap();
    assert_eq!(g[1], 0.0);
    assert_ne!(g[0], 0.0);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for kind in ModelKind::ALL {
        for prior in [PriorConfig::default(), PriorConfig::weakly_informative(5.0)] {
            let m = model(kind, 20, 4, 6, prior);
            for _ in 0..5 {
                let v = random_point(&m, 1.0, &mut rng);
                let (_, g) = m.grad_log_posterior(&v).unwrap();
                let fd = fd_gradient(|w| m.log_posterior(w).unwrap(), &v, 1e-4);
                let err = max_rel_error(&g, &fd, 1e-8);
                assert!(err < 1e-6, "{kind}: {err}");
            }
        }
    }
}

#[test]
fn out_of_support_gives_negative_infinity() {
    let m = model(ModelKind::Rasch, 4, 2, 1, PriorConfig::default());
    let mut v = vec![0.0; m.n_params()];
    v[m.eta_index(0)] = f64::INFINITY;
    let (lp, g) = m.grad_log_posterior(&v).unwrap();
    assert_eq!(lp, f64::NEG_INFINITY);
    assert!(g.iter().all(|x| *x == 0.0));
    assert!(m.log_posterior(&v[1..]).is_err());
}

#[test]
fn fixed_items_remove_item_coordinates() {
    let (data, truth) = instance(ModelKind::Gpcm, 8, 3, 2);
    let m = FlpsModel::new(
        data,
        PriorConfig::default(),
        ItemSource::Fixed(truth.params.items.clone()),
    )
    .unwrap();
    assert_eq!(m.n_params(), 2 * 2 + 7 + 8);
    let ps = m.from_unconstrained(&vec![0.0; m.n_params()]).unwrap();
    assert_eq!(ps.items, truth.params.items);
}

#[test]
fn sampled_scales_are_positive() {
    let m = model(
        ModelKind::TwoPl,
        20,
        4,
        11,
        PriorConfig::weakly_informative(5.0),
    );
    let cfg = SamplerConfig {
        iterations: 300,
        warmup: 150,
        seed: 4,
        ..SamplerConfig::default()
    };
    let d = run_chains(&m, &cfg).unwrap();
    for (k, name) in d.names.iter().enumerate() {
        if name.starts_with("sigma") || name.starts_with("a[") {
            assert!(d.pooled(k).iter().all(|v| *v > 0.0), "{name}");
        }
    }
    assert_eq!(d.names, m.param_names());
}

proptest! {
    #[test]
    fn unconstrained_round_trip(seed in 0u64..1000, kind_ix in 0usize..4, scale in 0.1f64..3.0) {
        let kind = ModelKind::ALL[kind_ix];
        let m = model(kind, 6, 3, seed % 7, PriorConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_point(&m, scale, &mut rng);
        let ps = m.from_unconstrained(&v).unwrap();
        let back = m.to_unconstrained(&ps).unwrap();
        for (a, b) in v.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }
        // Reported draws agree with the decoded parameter set.
        let mut out = vec![0.0; m.n_params()];
        m.constrain(&v, &mut out);
        for (c, role) in m.roles().iter().enumerate() {
            prop_assert_eq!(out[c], role.value_in(&ps));
        }
    }
}
