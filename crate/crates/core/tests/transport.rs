//! Case-mix standardization and X–M integration on synthetic studies.

use medmeta::model::{IpdRow, IpdStudy, RandomMethod};
use medmeta::simlab::{generate_study, true_nie_oracle, CovariateSpec, DgpConfig, TargetPopulation};
use medmeta::transport::{check_positivity, population_specific_meta, standardized_nie, TransportMethod, TransportOptions};
use medmeta::within_study::{fit_working_models, product_of_coefficients};
use medmeta::xm::{hybrid_nie, summarize_eta, HybridEstimand, SummaryScheme};
use medmeta::Error;

fn cfg(alpha1: f64, beta2: f64, l: CovariateSpec, n: usize, seed: u64) -> DgpConfig {
    DgpConfig {
        alpha0: 0.1,
        alpha1,
        alpha2: vec![0.4],
        beta0: -0.5,
        beta1: 0.25,
        beta2,
        beta3: vec![0.3],
        l_dist: vec![l],
        n,
        seed,
        ..DgpConfig::default()
    }
}

fn opts(bootstrap: usize, seed: u64) -> TransportOptions {
    TransportOptions { bootstrap, ..TransportOptions::interaction(false, seed) }
}

#[test]
fn positivity_report() {
    let src = generate_study(&cfg(0.5, 0.4, CovariateSpec::uniform("l", 0.0, 1.0), 4000, 1), "k", "v").unwrap();
    let tgt = generate_study(&cfg(0.5, 0.4, CovariateSpec::uniform("l", 0.0, 2.0), 4000, 2), "j", "v").unwrap();
    let self_overlap = check_positivity(&src, &src).unwrap();
    assert_eq!(self_overlap.covariates[0].contained, 1.0);
    assert!(!self_overlap.flagged);
    let half = check_positivity(&src, &tgt).unwrap();
    assert!((half.covariates[0].contained - 0.5).abs() < 0.03);
    assert!(half.flagged);
    let far = generate_study(&cfg(0.5, 0.4, CovariateSpec::uniform("l", 5.0, 6.0), 100, 3), "f", "v").unwrap();
    let none = check_positivity(&src, &far).unwrap();
    assert_eq!(none.covariates[0].contained, 0.0);
    assert!(none.flagged);
}

#[test]
fn linear_transport_equals_product_for_every_target() {
    let src = generate_study(&cfg(0.5, 0.4, CovariateSpec::normal("l", 0.0, 1.0), 2000, 4), "k", "v").unwrap();
    let wm = fit_working_models(&src, &["l".into()], false).unwrap();
    let product = product_of_coefficients(&wm).unwrap().value;
    for (i, l) in [CovariateSpec::normal("l", 0.0, 1.0), CovariateSpec::normal("l", 2.0, 0.5), CovariateSpec::uniform("l", -3.0, 0.0)].into_iter().enumerate() {
        let tgt = generate_study(&cfg(0.2, 0.1, l, 2000, 10 + i as u64), "j", "w").unwrap();
        let est = standardized_nie(&src, &tgt, 0, 1, &opts(20, 1)).unwrap();
        assert!((est.theta_jk - product).abs() < 1e-8, "{} vs {product}", est.theta_jk);
        assert_eq!(est.theta_jk, est.theta_from_means());
        assert_eq!(est.method, TransportMethod::ClosedFormLinear);
        let back = standardized_nie(&src, &tgt, 1, 0, &opts(20, 1)).unwrap();
        assert!((back.theta_jk + product).abs() < 1e-8);
        let same = standardized_nie(&src, &tgt, 1, 1, &opts(20, 1)).unwrap();
        assert_eq!(same.theta_jk, 0.0);
    }
}

#[test]
fn self_standardized_factual_means_match_plug_in() {
    let src = generate_study(&cfg(0.5, 0.4, CovariateSpec::normal("l", 1.0, 1.0), 3000, 5), "k", "v").unwrap();
    let wm = fit_working_models(&src, &["l".into()], false).unwrap();
    let est = standardized_nie(&src, &src, 0, 1, &opts(20, 2)).unwrap();
    let (a, b) = (&wm.mediator.coefficients, &wm.outcome.coefficients);
    let l_bar = medmeta::scalar::mean(src.covariate("l").unwrap());
    for x in [0.0, 1.0] {
        let m_bar = a[0] + a[1] * x + a[2] * l_bar;
        let want = b[0] + b[1] * x + b[2] * m_bar + b[3] * l_bar;
        assert!((est.counterfactual_means[x as usize][x as usize] - want).abs() < 1e-8);
    }
}

#[test]
fn interaction_transport_tracks_the_oracle() {
    let truth = DgpConfig { beta_xm: 0.3, alpha_xl: vec![0.3], ..cfg(0.5, 0.4, CovariateSpec::normal("l", 0.0, 1.0), 5000, 6) };
    let src = generate_study(&truth, "k", "v").unwrap();
    let tgt_l = [CovariateSpec::normal("l", 1.5, 1.0)];
    let tgt = generate_study(&DgpConfig { l_dist: tgt_l.to_vec(), seed: 7, ..truth.clone() }, "j", "v").unwrap();
    let o = TransportOptions { bootstrap: 200, seed: 3, terms: medmeta::ModelTerms { exposure_mediator: true, exposure_covariate: true } };
    let est = standardized_nie(&src, &tgt, 0, 1, &o).unwrap();
    assert_eq!(est.method, TransportMethod::NemGcomp);
    let (oracle, mc_se) = true_nie_oracle(&truth, TargetPopulation::Distribution(&tgt_l), 0, 1, 400_000, 8).unwrap();
    assert!((est.theta_jk - oracle).abs() < 2.0 * (est.se * est.se + mc_se * mc_se).sqrt(), "{} vs {oracle}", est.theta_jk);
}

#[test]
fn population_specific_pooling() {
    let tgt = generate_study(&cfg(0.5, 0.4, CovariateSpec::normal("l", 0.5, 1.0), 1500, 20), "j", "v").unwrap();
    let ests: Vec<_> = (0..4)
        .map(|i| {
            let src = generate_study(&cfg(0.5, 0.4, CovariateSpec::normal("l", 0.0, 1.0), 1500, 30 + i), &format!("k{i}"), "v").unwrap();
            standardized_nie(&src, &tgt, 0, 1, &opts(100, i)).unwrap()
        })
        .collect();
    let m = population_specific_meta(&ests, RandomMethod::Reml).unwrap();
    assert!((m.estimate - 0.2).abs() < 3.0 * m.se, "{m:?}");
    assert!(m.tau2 < 1e-3);

    let other = generate_study(&cfg(0.5, 0.4, CovariateSpec::normal("l", 0.5, 1.0), 500, 21), "j2", "v").unwrap();
    let mut mixed = ests.clone();
    mixed.push(standardized_nie(&other, &other, 0, 1, &opts(20, 9)).unwrap());
    assert_eq!(population_specific_meta(&mixed, RandomMethod::Dl).unwrap_err(), Error::MixedTarget);
}

#[test]
fn schema_mismatch_is_rejected() {
    let src = generate_study(&cfg(0.5, 0.4, CovariateSpec::normal("l", 0.0, 1.0), 200, 40), "k", "v").unwrap();
    let tgt = generate_study(&cfg(0.5, 0.4, CovariateSpec::normal("age", 0.0, 1.0), 200, 41), "j", "v").unwrap();
    assert!(matches!(standardized_nie(&src, &tgt, 0, 1, &opts(20, 1)), Err(Error::CovariateSchema(_))));
    assert!(matches!(hybrid_nie(&src, &tgt, HybridEstimand::EtaJ, 0, 1, &opts(20, 1)), Err(Error::CovariateSchema(_))));
}

#[test]
fn hybrid_composes_mediator_and_outcome_studies() {
    let k = generate_study(&cfg(0.1, 0.4, CovariateSpec::normal("l", 0.0, 1.0), 4000, 50), "k", "v1").unwrap();
    let j = generate_study(&cfg(0.3, 0.9, CovariateSpec::normal("l", 0.5, 1.0), 4000, 51), "j", "v2").unwrap().without_outcome();
    let eta = hybrid_nie(&k, &j, HybridEstimand::EtaJ, 0, 1, &opts(200, 4)).unwrap();
    assert!((eta.value - 0.12).abs() < 2.0 * eta.se, "{eta:?}");
    assert_eq!(eta.standardize_to, "j");
    assert_eq!((eta.outcome_version.as_str(), eta.mediator_version.as_str()), ("v1", "v2"));
    let gamma = hybrid_nie(&k, &j, HybridEstimand::GammaJk, 0, 1, &opts(200, 4)).unwrap();
    assert_eq!(gamma.standardize_to, "k");

    let zero = generate_study(&cfg(0.0, 0.9, CovariateSpec::normal("l", 0.5, 1.0), 4000, 52), "z", "v").unwrap().without_outcome();
    let eta0 = hybrid_nie(&k, &zero, HybridEstimand::EtaJ, 0, 1, &opts(200, 5)).unwrap();
    assert!(eta0.value.abs() < 2.0 * eta0.se, "{eta0:?}");
}

#[test]
fn identical_covariate_rows_make_eta_j_and_eta_k_agree() {
    let k = generate_study(&cfg(0.5, 0.4, CovariateSpec::normal("l", 0.0, 1.0), 500, 60), "k", "v").unwrap();
    // Same L rows, different treatments and mediators.
    let rows: Vec<_> = k.rows().enumerate().map(|(i, r)| IpdRow { x: ((i / 3) % 2) as f64, m: r.m * 0.7 + 0.1 * i as f64 % 1.3, y: None, l: r.l }).collect();
    let j = IpdStudy::from_rows("j", "v", k.covariate_names().to_vec(), &rows).unwrap();
    let o = TransportOptions { bootstrap: 20, ..TransportOptions::interaction(true, 6) };
    let a = hybrid_nie(&k, &j, HybridEstimand::EtaJ, 0, 1, &o).unwrap();
    let b = hybrid_nie(&k, &j, HybridEstimand::EtaK, 0, 1, &o).unwrap();
    assert!((a.value - b.value).abs() < 1e-8);
}

#[test]
fn eta_summaries() {
    // Every estimate shares study j, whose sampling error the pooled se cannot
    // see; a large j keeps that shared error small next to the outcome studies'.
    let j = generate_study(&cfg(0.3, 0.0, CovariateSpec::normal("l", 0.0, 1.0), 30_000, 70), "j", "v").unwrap().without_outcome();
    let ests: Vec<_> = (0..3)
        .map(|i| {
            let k = generate_study(&cfg(0.5, 0.4, CovariateSpec::normal("l", 0.0, 1.0), 3000, 71 + i), &format!("k{i}"), "v").unwrap();
            hybrid_nie(&k, &j, HybridEstimand::EtaJ, 0, 1, &opts(150, i)).unwrap()
        })
        .collect();
    let s = summarize_eta(&ests, HybridEstimand::EtaJ, SummaryScheme::Fixed).unwrap();
    assert_eq!(s.target_population, "j");
    assert!((s.meta.estimate - 0.12).abs() < 2.0 * s.meta.se, "{:?}", s.meta);
    let r = summarize_eta(&ests, HybridEstimand::EtaJ, SummaryScheme::Random(RandomMethod::Reml)).unwrap();
    assert!(r.meta.tau2 >= 0.0);
    let same = summarize_eta(&[ests[0].clone(), ests[0].clone()], HybridEstimand::EtaJ, SummaryScheme::Fixed).unwrap();
    assert!((same.meta.estimate - ests[0].value).abs() < 1e-15);
}

