//! Worked examples checked against independent oracles.

mod common;

use common::{normal_pdf, phi, quantile_bisection, simpson};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use supergame::dist::{log_interval_mass, sample_truncated, TruncationSide};
use supergame::equil::{best_response, is_ne, maximal_ne, minimal_ne};
use supergame::exper::{derive_seed, geometric_graph_with_positions, simulate_game};
use supergame::fit::{probit_mle, sml_fit, FitOptions};
use supergame::lik::{build_templates, loglik_from_templates, simulated_loglik, CrnBlock, Dataset, Game};
use supergame::model::SupermodularityViolation;
use supergame::oracle::{enumerate_scenarios, exact_likelihood};
use supergame::sampler::{find_threshold, locate_scenario, log_lambda, log_zeta, sample_scenario, Bucket, DrawOrder, Scenario};
use supergame::{ActionProfile, GameModel, Network, ShockFamily, ShockMatrix, Theta};

const N: ShockFamily = ShockFamily::Normal;

fn coordination() -> (GameModel, Theta) {
    (GameModel::coordination([vec![0.0], vec![0.0]]).unwrap(), Theta::scalar(vec![0.0], 1.0))
}

fn shocks(u: &[f64]) -> ShockMatrix {
    ShockMatrix::new(u.len(), 1, u.to_vec()).unwrap()
}

fn profile(y: &[bool]) -> ActionProfile {
    ActionProfile::from_vec(y.len(), 1, y.to_vec()).unwrap()
}

const LOW: Bucket = Bucket { lower: None, upper: Some(0) };
const FENCE: Bucket = Bucket { lower: Some(0), upper: Some(1) };

#[test]
fn normal_cdf_matches_series() {
    assert!((N.cdf(1.0) - phi(1.0)).abs() < 1e-13);
    assert!((N.cdf(1.0) - 0.841345).abs() < 1e-6);
    assert_eq!(N.cdf(0.0), 0.5);
    assert_eq!(N.cdf(f64::INFINITY), 1.0);
}

#[test]
fn interval_masses() {
    assert_eq!(log_interval_mass(f64::NEG_INFINITY, f64::INFINITY, N).unwrap(), 0.0);
    assert!((log_interval_mass(0.0, f64::INFINITY, N).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    let oracle = (phi(1.0) - phi(0.0)).ln();
    assert!((log_interval_mass(0.0, 1.0, N).unwrap() - oracle).abs() < 1e-13);
    assert!((oracle - 0.341345f64.ln()).abs() < 1e-5);
}

#[test]
fn narrow_tail_interval_matches_quadrature() {
    for (a, b) in [(8.0, 8.001), (-9.0, -8.9999), (5.0, 5.5), (-3.0, -2.0)] {
        let q = simpson(normal_pdf, a, b, 2000);
        let m = log_interval_mass(a, b, N).unwrap().exp();
        assert!((m - q).abs() <= 1e-11 * q, "[{a}, {b}]: {m} vs {q}");
    }
}

#[test]
fn truncated_sampling_examples() {
    assert_eq!(sample_truncated(0.5, f64::INFINITY, TruncationSide::BelowOrEqual, N).unwrap(), 0.0);
    let top = sample_truncated(1.0 - 1e-16, 0.0, TruncationSide::BelowOrEqual, N).unwrap();
    assert!(top <= 0.0 && top > -1e-6);
    let above = sample_truncated(0.5, 0.0, TruncationSide::Above, N).unwrap();
    assert!((above - quantile_bisection(0.75)).abs() < 1e-10);
    assert!((above - 0.674490).abs() < 1e-6);
}

#[test]
fn strategic_statistics() {
    let (g, _) = coordination();
    assert_eq!(g.strategic_statistic(&profile(&[true, true]), 0, 0).unwrap(), vec![1.0]);

    let count = GameModel::peer_effects_count(&vec![vec![0.0]; 3], Network::complete(3)).unwrap();
    assert_eq!(count.strategic_statistic(&profile(&[false, true, true]), 0, 0).unwrap(), vec![2.0]);

    // arcs 2->0 and 2->1: the dyad (0, 1) is supported through agent 2
    let support = GameModel::network_support(3, &vec![vec![0.0]; 6], false).unwrap();
    let mut y = ActionProfile::zeros(3, 2);
    y.as_slice();
    let (t, m) = support.split(support.arc(2, 0));
    y.set(t, m, true);
    let (t, m) = support.split(support.arc(2, 1));
    y.set(t, m, true);
    let (t, m) = support.split(support.arc(0, 1));
    assert_eq!(support.strategic_statistic(&y, t, m).unwrap(), vec![1.0]);
}

#[test]
fn systematic_utilities() {
    let (g, theta) = coordination();
    assert_eq!(g.systematic_utility(&theta, &profile(&[false, true]), 0, 0).unwrap(), 1.0);

    let mean = GameModel::peer_effects_mean(&vec![vec![1.0]; 3], Network::complete(3)).unwrap();
    let theta = Theta::scalar(vec![-0.5], 0.2);
    let u = mean.systematic_utility(&theta, &profile(&[false, true, false]), 0, 0).unwrap();
    assert!((u - -0.4).abs() < 1e-15);
    assert_eq!(mean.systematic_utility(&theta, &profile(&[false; 3]), 1, 0).unwrap(), -0.5);
}

#[test]
fn boundaries_and_supermodularity() {
    let (g, theta) = coordination();
    assert_eq!(g.bucket_boundaries(&theta, 0, 0).unwrap(), vec![0.0, 1.0]);
    let mean = GameModel::peer_effects_mean(&vec![vec![0.0]; 3], Network::complete(3)).unwrap();
    assert_eq!(mean.bucket_boundaries(&Theta::scalar(vec![0.0], 1.0), 0, 0).unwrap(), vec![0.0, 0.5, 1.0]);
    assert_eq!(mean.bucket_boundaries(&Theta::scalar(vec![0.0], 0.0), 0, 0).unwrap(), vec![0.0]);

    assert!(g.check_supermodular(&theta).is_ok());
    assert!(g.check_supermodular(&Theta::scalar(vec![0.0], 0.2)).is_ok());
    let err = g.check_supermodular(&Theta::scalar(vec![0.0], -0.1)).unwrap_err();
    assert!(matches!(err, SupermodularityViolation::NegativeDelta { component: 0, .. }));
}

#[test]
fn equilibrium_examples() {
    let (g, theta) = coordination();
    let inf = f64::INFINITY;
    assert_eq!(minimal_ne(&g, &theta, &shocks(&[inf, inf])).unwrap(), profile(&[false, false]));
    assert_eq!(minimal_ne(&g, &theta, &shocks(&[-inf, -inf])).unwrap(), profile(&[true, true]));
    let half = shocks(&[0.5, 0.5]);
    assert_eq!(best_response(&g, &theta, &half, &profile(&[true, true])).unwrap(), profile(&[true, true]));
    assert_eq!(minimal_ne(&g, &theta, &half).unwrap(), profile(&[false, false]));
    assert_eq!(maximal_ne(&g, &theta, &half).unwrap(), profile(&[true, true]));
    assert_eq!(minimal_ne(&g, &theta, &shocks(&[-0.1, -0.1])).unwrap(), profile(&[true, true]));
    assert_eq!(minimal_ne(&g, &theta, &shocks(&[1.5, 1.5])).unwrap(), profile(&[false, false]));
    assert!(!is_ne(&g, &theta, &half, &profile(&[true, false])).unwrap());
    assert!(is_ne(&g, &theta, &shocks(&[inf, inf]), &profile(&[false, false])).unwrap());
}

#[test]
fn threshold_walkthrough() {
    let (g, theta) = coordination();
    let ninf = f64::NEG_INFINITY;
    assert_eq!(find_threshold(&g, &theta, &shocks(&[ninf, ninf]), 0, 0).unwrap(), 1.0);
    assert_eq!(find_threshold(&g, &theta, &shocks(&[0.5, ninf]), 1, 0).unwrap(), 0.0);
    assert_eq!(find_threshold(&g, &theta, &shocks(&[-0.5, ninf]), 1, 0).unwrap(), 1.0);
}

#[test]
fn sampler_examples() {
    let (g, theta) = coordination();
    let both = profile(&[true, true]);
    // small uniforms put both draws below zero
    let d = sample_scenario(&g, &theta, &both, &[0.1, 0.1], DrawOrder::Index).unwrap();
    assert_eq!(d.scenario, Scenario { buckets: vec![LOW, LOW] });
    let expected = 2.0 * (phi(0.0) / phi(1.0)).ln();
    assert!((d.log_lambda - expected).abs() < 1e-13);
    assert!((expected - 2.0 * 0.594288f64.ln()).abs() < 1e-5);
    assert!((log_lambda(&g, &d).unwrap() - d.log_lambda).abs() < 1e-13);

    // first player on the fence forces the second below zero
    let d = sample_scenario(&g, &theta, &both, &[0.9, 0.5], DrawOrder::Index).unwrap();
    assert_eq!(d.scenario, Scenario { buckets: vec![FENCE, LOW] });
    assert!((d.log_lambda - ((phi(1.0) - phi(0.0)) / phi(1.0)).ln()).abs() < 1e-13);

    // first player low, second on the fence
    let d = sample_scenario(&g, &theta, &both, &[0.1, 0.9], DrawOrder::Index).unwrap();
    assert_eq!(d.scenario, Scenario { buckets: vec![LOW, FENCE] });
    let expected = ((phi(1.0) - phi(0.0)) / phi(1.0)).ln() + (phi(0.0) / phi(1.0)).ln();
    assert!((d.log_lambda - expected).abs() < 1e-13);

    let d = sample_scenario(&g, &theta, &profile(&[false, false]), &[0.3, 0.8], DrawOrder::Index).unwrap();
    assert!(d.u.as_slice().iter().all(|&u| u > 0.0));
    assert_eq!(minimal_ne(&g, &theta, &d.u).unwrap(), profile(&[false, false]));
}

#[test]
fn locating_and_zeta() {
    let (g, theta) = coordination();
    assert_eq!(locate_scenario(&g, &theta, &shocks(&[-0.3, -0.3])).unwrap().buckets, vec![LOW, LOW]);
    assert_eq!(locate_scenario(&g, &theta, &shocks(&[0.4, -0.3])).unwrap().buckets, vec![FENCE, LOW]);
    assert_eq!(locate_scenario(&g, &theta, &shocks(&[0.0, 1.0])).unwrap().buckets, vec![LOW, FENCE]);

    let fence = Scenario { buckets: vec![FENCE, FENCE] };
    let expected = 2.0 * (phi(1.0) - phi(0.0)).ln();
    assert!((log_zeta(&g, &theta, &fence).unwrap() - expected).abs() < 1e-13);
    assert!((expected - 2.0 * 0.341345f64.ln()).abs() < 1e-5);
    let open = Scenario { buckets: vec![Bucket::UNBOUNDED; 2] };
    assert_eq!(log_zeta(&g, &theta, &open).unwrap(), 0.0);
    let total: f64 = enumerate_scenarios(&g, &theta).unwrap().iter().map(|s| log_zeta(&g, &theta, &s.scenario).unwrap().exp()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn exact_likelihood_examples() {
    let (g, theta) = coordination();
    let both = exact_likelihood(&g, &theta, &profile(&[true, true])).unwrap();
    let closed = phi(0.0).powi(2) + 2.0 * phi(0.0) * (phi(1.0) - phi(0.0));
    assert!((both.probability - closed).abs() < 1e-13);
    assert_eq!(both.scenarios, 3);
    let independent = exact_likelihood(&g, &Theta::scalar(vec![0.0], 0.0), &profile(&[true, true])).unwrap();
    assert!((independent.probability - 0.25).abs() < 1e-15);
    let total: f64 = [[false, false], [true, false], [false, true], [true, true]]
        .iter()
        .map(|y| exact_likelihood(&g, &theta, &profile(y)).unwrap().probability)
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn recycled_equals_fresh_at_the_sampling_parameter() {
    let g = GameModel::peer_effects_count(&[vec![0.3], vec![-0.2], vec![0.1], vec![0.0]], Network::complete(4)).unwrap();
    let theta = Theta::scalar(vec![1.0], 0.4);
    let y = simulate_game(&g, &theta, 5).unwrap();
    let data = Dataset::single(g, y).unwrap();
    let crn = CrnBlock::new(3, 20).unwrap();
    let templates = build_templates(&data, &crn, &theta, DrawOrder::Index).unwrap();
    assert_eq!(
        loglik_from_templates(&templates, &data, &theta).unwrap().to_bits(),
        simulated_loglik(&data, &theta, &crn, &theta, DrawOrder::Index).unwrap().to_bits()
    );
}

/// Probit by iteratively reweighted least squares with a hand-rolled solver.
#[allow(clippy::needless_range_loop)]
fn irls_probit(rows: &[Vec<f64>], y: &[bool]) -> Vec<f64> {
    let k = rows[0].len();
    let mut b = vec![0.0; k];
    for _ in 0..100 {
        let mut xtwx = vec![vec![0.0; k]; k];
        let mut xtwz = vec![0.0; k];
        for (r, &yi) in rows.iter().zip(y) {
            let eta: f64 = r.iter().zip(&b).map(|(a, c)| a * c).sum();
            let (p, d) = (phi(eta), normal_pdf(eta));
            let w = d * d / (p * (1.0 - p));
            let z = eta + ((yi as u8 as f64) - p) / d;
            for i in 0..k {
                xtwz[i] += w * r[i] * z;
                for j in 0..k {
                    xtwx[i][j] += w * r[i] * r[j];
                }
            }
        }
        // Gauss-Jordan on the normal equations
        for i in 0..k {
            let piv = xtwx[i][i];
            for j in 0..k {
                xtwx[i][j] /= piv;
            }
            xtwz[i] /= piv;
            for r in 0..k {
                if r != i {
                    let f = xtwx[r][i];
                    for j in 0..k {
                        xtwx[r][j] -= f * xtwx[i][j];
                    }
                    xtwz[r] -= f * xtwz[i];
                }
            }
        }
        b = xtwz;
    }
    b
}

#[test]
fn probit_matches_reweighted_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..400).map(|_| vec![1.0, rng.random_range(-1.0..1.0), rng.random_bool(0.5) as u8 as f64]).collect();
    let y: Vec<bool> =
        rows.iter().map(|r| 0.2 + 0.8 * r[1] - 0.6 * r[2] + rng.sample::<f64, _>(rand_distr::StandardNormal) > 0.0).collect();
    let fit = probit_mle(&rows, &y).unwrap();
    for (a, b) in fit.coef.iter().zip(irls_probit(&rows, &y)) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn no_interaction_fit_collapses_to_probit() {
    let truth = Theta::scalar(vec![0.3, -0.8], 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut rows, mut y) = (Vec::new(), Vec::new());
    let games: Vec<Game> = (0..40)
        .map(|g| {
            let x: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0, rng.random_range(-1.0..1.0)]).collect();
            let model = GameModel::peer_effects_count(&x, Network::complete(10)).unwrap();
            let outcome = simulate_game(&model, &truth, derive_seed(12, g)).unwrap();
            rows.extend(x);
            y.extend_from_slice(outcome.as_slice());
            Game { model, outcome }
        })
        .collect();
    let data = Dataset::new(games).unwrap();
    let plain = probit_mle(&rows, &y).unwrap();
    // importance sampler centred at the null
    let start = Theta::scalar(plain.coef.clone(), 1e-3);
    let fit = sml_fit(&data, &start, &FitOptions { draws: 20, seed: 1, ..FitOptions::default() }).unwrap();
    let d = data.layout().delta_range().start;
    let delta = fit.theta_hat.delta[0][0];
    assert!(delta < 3.0 * fit.standard_errors[d], "delta {delta} se {}", fit.standard_errors[d]);
    for (a, b) in fit.theta_hat.beta[0].iter().zip(&plain.coef) {
        assert!((a - b).abs() < 0.1, "{a} vs {b}");
    }
}

#[test]
fn geometric_graph_degree_and_reach() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let radius = supergame::exper::default_radius();
    let (net, pos) = geometric_graph_with_positions(10_000, radius, 0.75, true, &mut rng);
    let mean_degree = net.link_count() as f64 / 10_000.0;
    assert!((mean_degree - 10.0).abs() < 0.5, "mean degree {mean_degree}");
    for t in 0..net.players() {
        for &s in net.peers(t) {
            let d2 = (pos[t].0 - pos[s].0).powi(2) + (pos[t].1 - pos[s].1).powi(2);
            assert!(d2 <= radius * radius);
        }
    }
}
