//! Closed-form expectations against Monte-Carlo averages.

mod common;

use common::{assert_mc_agreement, mean_sem, mvn_logpdf, random_spd, sample_niw, std_normal};
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use vbgs_core::{CanonicalNiw, ColorPosterior, Dirichlet, NiwNatural};

const SAMPLES: usize = 100_000;

fn random_niw(rng: &mut ChaCha8Rng) -> CanonicalNiw {
    let d = rng.random_range(1..=3usize);
    CanonicalNiw {
        mean: DVector::from_fn(d, |_, _| std_normal(rng)),
        kappa: rng.random_range(0.2..5.0),
        scale: random_spd(rng, d, 0.5),
        dof: d as f64 + rng.random_range(1.5..12.0),
    }
}

#[test]
fn niw_expected_log_likelihood_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(7001);
    let mut results = Vec::new();
    for _ in 0..50 {
        let p = random_niw(&mut rng);
        let d = p.mean.len();
        let x = &p.mean + DVector::from_fn(d, |_, _| std_normal(&mut rng));
        let analytic = NiwNatural::from_canonical(&p)
            .unwrap()
            .expected_log_likelihood(x.as_slice())
            .unwrap();
        let draws: Vec<f64> = (0..SAMPLES)
            .map(|_| {
                let (mu, sigma) = sample_niw(&mut rng, &p);
                mvn_logpdf(&x, &mu, &sigma)
            })
            .collect();
        let (mean, sem) = mean_sem(&draws);
        results.push((analytic, mean, sem));
    }
    assert_mc_agreement(&results, 3, "NIW");
}

#[test]
fn color_expected_log_likelihood_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(7002);
    let mut cases = vec![(Vector3::zeros(), 1.0, 0.01, Vector3::zeros())];
    while cases.len() < 50 {
        let m = Vector3::from_fn(|_, _| std_normal(&mut rng));
        let c = m + Vector3::from_fn(|_, _| 0.3 * std_normal(&mut rng));
        cases.push((m, rng.random_range(0.05..20.0), rng.random_range(1e-3..1.0), c));
    }
    let mut results = Vec::new();
    for (m, kappa, eps, c) in cases {
        let q = ColorPosterior::new(m, kappa, eps).unwrap();
        let analytic = q.expected_log_likelihood(c.as_slice());
        let sd = (eps / kappa).sqrt();
        let draws: Vec<f64> = (0..SAMPLES)
            .map(|_| {
                let mu = m + Vector3::from_fn(|_, _| sd * std_normal(&mut rng));
                let r2 = (c - mu).norm_squared();
                -1.5 * (2.0 * std::f64::consts::PI * eps).ln() - r2 / (2.0 * eps)
            })
            .collect();
        let (mean, sem) = mean_sem(&draws);
        results.push((analytic, mean, sem));
    }
    assert_mc_agreement(&results, 3, "color");
}

#[test]
fn dirichlet_expected_log_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(7003);
    let mut results = Vec::new();
    for _ in 0..10 {
        let k = rng.random_range(2..6usize);
        let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(0.3..8.0)).collect();
        let analytic = Dirichlet::new(alpha.clone()).unwrap().expected_log();
        let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
        let mut draws = vec![Vec::with_capacity(SAMPLES); k];
        for _ in 0..SAMPLES {
            let g: Vec<f64> = gammas.iter().map(|d| d.sample(&mut rng)).collect();
            let total: f64 = g.iter().sum();
            for (j, v) in g.iter().enumerate() {
                draws[j].push((v / total).ln());
            }
        }
        for j in 0..k {
            let (mean, sem) = mean_sem(&draws[j]);
            results.push((analytic[j], mean, sem));
        }
    }
    assert_mc_agreement(&results, 3, "Dirichlet");
}

#[test]
fn bartlett_sampler_reproduces_inverse_wishart_mean() {
    // guards the oracle itself: E[Σ] = V / (n − D − 1)
    let mut rng = ChaCha8Rng::seed_from_u64(7004);
    let p = CanonicalNiw {
        mean: DVector::zeros(2),
        kappa: 1.0,
        scale: random_spd(&mut rng, 2, 1.0),
        dof: 9.0,
    };
    let mut acc = nalgebra::DMatrix::zeros(2, 2);
    let n = 200_000;
    for _ in 0..n {
        acc += sample_niw(&mut rng, &p).1;
    }
    acc /= n as f64;
    let want = &p.scale / (9.0 - 3.0);
    assert!((acc - &want).abs().max() < 0.02 * want.abs().max(), "{want}");
}
