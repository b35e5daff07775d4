use dcm_core::datagen::{generate, Discrimination, GenConfig};
use dcm_core::mcmc::{
    fit_mcmc, sample_class_probs, sample_profile_conditional, update_conjugate, update_metropolis, McmcSettings,
    MetropolisState, PriorSpec,
};
use dcm_core::models::slip_guess_of;
use dcm_core::rng::stream;
use dcm_core::{BinaryMatrix, ItemParams, ModelKind, QMatrix};

fn q_of(rows: &[&[u8]]) -> QMatrix {
    QMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Standard error of the mean of a correlated series by batch means.
fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs.chunks(size).take(batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    mean_sd(&means).1 / (batches as f64).sqrt()
}

#[test]
fn noiseless_row_puts_all_mass_on_truth() {
    let q = q_of(&[&[1, 0], &[0, 1], &[1, 1]]);
    let params = vec![ItemParams::Dina { slip: 0.0, guess: 0.0 }; 3];
    let mut rng = stream(1, &[]);
    for _ in 0..1000 {
        assert_eq!(sample_profile_conditional(&[0, 1, 0], &q, &params, &[0.25; 4], &mut rng).unwrap(), 2);
    }
}

#[test]
fn flat_likelihood_draws_follow_class_probs() {
    let q = q_of(&[&[1, 0], &[0, 1]]);
    let params = vec![ItemParams::Dina { slip: 0.5, guess: 0.5 }; 2];
    let pi = [0.1, 0.2, 0.3, 0.4];
    let mut rng = stream(2, &[]);
    let draws = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        counts[sample_profile_conditional(&[1, 0], &q, &params, &pi, &mut rng).unwrap()] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(pi)
        .map(|(&c, p)| {
            let e = p * draws as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 3 degrees of freedom, 0.999 quantile
    assert!(chi2 < 16.27, "chi2 = {chi2}");
}

#[test]
fn profile_draws_match_bayes_rule() {
    let q = q_of(&[&[1, 0], &[1, 1]]);
    let params = vec![ItemParams::Dina { slip: 0.1, guess: 0.25 }, ItemParams::Dina { slip: 0.2, guess: 0.3 }];
    let pi = [0.4, 0.3, 0.2, 0.1];
    // row (1, 0): profile 0 -> g1 (1-g2), 1 -> (1-s1)(1-g2), 2 -> g1 (1-g2), 3 -> (1-s1) s2
    let lik = [0.25 * 0.7, 0.9 * 0.7, 0.25 * 0.7, 0.9 * 0.2];
    let joint: Vec<f64> = lik.iter().zip(pi).map(|(l, p)| l * p).collect();
    let total: f64 = joint.iter().sum();
    let mut rng = stream(3, &[]);
    let draws = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        counts[sample_profile_conditional(&[1, 0], &q, &params, &pi, &mut rng).unwrap()] += 1;
    }
    for (c, j) in counts.iter().zip(&joint) {
        let p = j / total;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((*c as f64 / draws as f64 - p).abs() < 4.0 * se, "{counts:?} vs {p}");
    }
}

#[test]
fn conjugate_slip_and_guess_moments() {
    // one item on one attribute: 10 masters with 9 correct, no non-masters
    let q = q_of(&[&[1]]);
    let rows: Vec<Vec<u8>> = (0..10).map(|i| vec![u8::from(i < 9)]).collect();
    let data = BinaryMatrix::from_rows(&rows).unwrap();
    let profiles = vec![1usize; 10];
    let mut rng = stream(4, &[]);
    let (mut slips, mut guesses) = (Vec::new(), Vec::new());
    for _ in 0..20_000 {
        match &update_conjugate(&data, &profiles, &q, ModelKind::Dina, &mut rng).unwrap()[0] {
            ItemParams::Dina { slip, guess } => {
                slips.push(*slip);
                guesses.push(*guess);
            }
            _ => unreachable!(),
        }
    }
    // Beta(2, 10)
    let (m, sd) = mean_sd(&slips);
    assert!((m - 1.0 / 6.0).abs() < 3.0 * sd / (slips.len() as f64).sqrt(), "slip mean {m}");
    // empty non-master group: prior Beta(1, 1)
    let (m, sd) = mean_sd(&guesses);
    assert!((m - 0.5).abs() < 3.0 * sd / (guesses.len() as f64).sqrt());
    assert!((sd * sd - 1.0 / 12.0).abs() < 0.003);
}

#[test]
fn class_probs_follow_dirichlet_update() {
    let mut rng = stream(5, &[]);
    let profiles = [0, 0, 0, 1];
    let reps = 20_000;
    let mut sums = [0.0; 4];
    for _ in 0..reps {
        let p = sample_class_probs(&profiles, 4, &mut rng);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (s, v) in sums.iter_mut().zip(&p) {
            *s += v;
        }
    }
    // Dirichlet(4, 2, 1, 1)
    for (s, want) in sums.iter().zip([0.5, 0.25, 0.125, 0.125]) {
        assert!((s / reps as f64 - want).abs() < 0.006, "{sums:?}");
    }
}

#[test]
fn rrum_baseline_matches_quadrature() {
    let q = q_of(&[&[1]]);
    // masters: 10 with 8 correct; non-masters: 10 with 3 correct
    let mut rows = Vec::new();
    let mut profiles = Vec::new();
    for i in 0..10 {
        rows.push(vec![u8::from(i < 8)]);
        profiles.push(1usize);
    }
    for i in 0..10 {
        rows.push(vec![u8::from(i < 3)]);
        profiles.push(0usize);
    }
    let data = BinaryMatrix::from_rows(&rows).unwrap();

    // 2-D midpoint rule over (pi, r) with uniform priors
    let grid = 1500;
    let h = 1.0 / grid as f64;
    let (mut z, mut zpi) = (0.0, 0.0);
    for a in 0..grid {
        let pi = (a as f64 + 0.5) * h;
        for b in 0..grid {
            let r = (b as f64 + 0.5) * h;
            let p0 = pi * r;
            let ll = 8.0 * pi.ln() + 2.0 * (1.0 - pi).ln() + 3.0 * p0.ln() + 7.0 * (1.0 - p0).ln();
            let w = ll.exp();
            z += w;
            zpi += w * pi;
        }
    }
    let exact = zpi / z;

    let prior = PriorSpec::default();
    let mut state = MetropolisState::new(vec![ItemParams::Rrum { baseline: 0.8, penalties: vec![0.6] }], 0.5);
    let mut rng = stream(6, &[]);
    for _ in 0..5_000 {
        update_metropolis(&data, &profiles, &q, &mut state, &prior, true, &mut rng).unwrap();
    }
    let mut draws = Vec::with_capacity(200_000);
    for _ in 0..200_000 {
        update_metropolis(&data, &profiles, &q, &mut state, &prior, false, &mut rng).unwrap();
        if let ItemParams::Rrum { baseline, .. } = &state.item_params[0] {
            draws.push(*baseline);
        }
    }
    let (m, _) = mean_sd(&draws);
    let se = batch_se(&draws, 100);
    assert!((m - exact).abs() < 3.0 * se, "mcmc {m} vs quadrature {exact} (se {se})");
}

#[test]
fn tiny_proposals_are_always_accepted() {
    let q = q_of(&[&[1, 1]]);
    let data = BinaryMatrix::from_rows(&[vec![1], vec![0], vec![1]]).unwrap();
    let profiles = [3, 0, 1];
    let mut state = MetropolisState::new(vec![ItemParams::Crum { intercept: -1.0, mains: vec![1.0, 1.0] }], 1e-9);
    let mut rng = stream(7, &[]);
    for _ in 0..500 {
        update_metropolis(&data, &profiles, &q, &mut state, &PriorSpec::default(), false, &mut rng).unwrap();
    }
    assert!(state.acceptance_rates()[0] > 0.99);
}

#[test]
fn truncated_mains_stay_positive() {
    let q = q_of(&[&[1, 1]]);
    // data that pull the mains towards zero
    let rows: Vec<Vec<u8>> = (0..40).map(|i| vec![u8::from(i % 2 == 0)]).collect();
    let data = BinaryMatrix::from_rows(&rows).unwrap();
    let profiles: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let mut state = MetropolisState::new(vec![ItemParams::Crum { intercept: 0.0, mains: vec![0.5, 0.5] }], 2.0);
    let mut rng = stream(8, &[]);
    for _ in 0..5_000 {
        update_metropolis(&data, &profiles, &q, &mut state, &PriorSpec::default(), true, &mut rng).unwrap();
        match &state.item_params[0] {
            ItemParams::Crum { mains, .. } => assert!(mains.iter().all(|&l| l > 0.0)),
            _ => unreachable!(),
        }
    }
}

fn small_dataset(model: ModelKind, seed: u64) -> (BinaryMatrix, QMatrix) {
    let q = q_of(&[&[1, 0], &[0, 1], &[1, 1], &[1, 0], &[0, 1], &[1, 1]]);
    let ds = generate(&GenConfig::new(40, model, q.clone(), Discrimination::High, seed)).unwrap();
    (ds.responses, q)
}

fn short_settings() -> McmcSettings {
    McmcSettings { chains: 2, iterations: 600, burn_in: 200, keep_draws: true, ..McmcSettings::default() }
}

#[test]
fn fit_is_reproducible() {
    let (data, q) = small_dataset(ModelKind::Crum, 1);
    let a = fit_mcmc(&data, &q, ModelKind::Crum, &short_settings(), &PriorSpec::default(), 9).unwrap();
    let b = fit_mcmc(&data, &q, ModelKind::Crum, &short_settings(), &PriorSpec::default(), 9).unwrap();
    assert_eq!(a.item_params_eap, b.item_params_eap);
    assert_eq!(a.draws, b.draws);
    assert_eq!(a.map_profiles, b.map_profiles);
}

#[test]
fn slip_guess_is_transformed_before_averaging() {
    let (data, q) = small_dataset(ModelKind::Crum, 2);
    let fit = fit_mcmc(&data, &q, ModelKind::Crum, &short_settings(), &PriorSpec::default(), 3).unwrap();
    let (names, rows) = fit.draws.as_ref().unwrap();
    let col = names.iter().position(|n| n == "item2.slip_derived").unwrap();
    let direct = rows.iter().map(|r| r[col]).sum::<f64>() / rows.len() as f64;
    assert!((fit.slip_guess_eap[2].slip - direct).abs() < 1e-12);
    // the transform of the coefficient means is a different number
    let plug_in = slip_guess_of(&fit.item_params_eap[2], &q.row(2)).unwrap();
    assert!((plug_in.slip - direct).abs() > 1e-9);
}

#[test]
fn summary_is_well_formed() {
    for model in ModelKind::ALL {
        let (data, q) = small_dataset(model, 4);
        let fit = fit_mcmc(&data, &q, model, &short_settings(), &PriorSpec::default(), 5).unwrap();
        assert_eq!(fit.map_profiles.rows(), data.rows());
        for i in 0..data.rows() {
            assert!((fit.profile_posterior.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!((fit.class_probs_eap.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for sg in &fit.slip_guess_eap {
            assert!(sg.slip > 0.0 && sg.slip < 1.0 && sg.guess > 0.0 && sg.guess < 1.0);
        }
        if matches!(model, ModelKind::Dina | ModelKind::Dino) {
            assert!(fit.acceptance.is_empty());
        } else {
            assert!(fit.acceptance.iter().all(|a| *a > 0.05 && *a < 0.8), "{model}: {:?}", fit.acceptance);
        }
        let json = fit.to_json(&q);
        assert!(json["rhat"].is_object());
        let mut buf = Vec::new();
        fit.write_draws_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 2 * 400);
    }
}

#[test]
fn marginal_and_joint_map_agree_on_confident_posteriors() {
    let (data, q) = small_dataset(ModelKind::Dina, 6);
    let fit = fit_mcmc(&data, &q, ModelKind::Dina, &short_settings(), &PriorSpec::default(), 1).unwrap();
    let joint = fit.joint_map();
    let marginal = fit.marginal_map();
    for i in 0..data.rows() {
        if fit.profile_posterior.row(i).iter().any(|&p| p > 0.9) {
            assert_eq!(joint.row(i), marginal.row(i));
        }
    }
}
