use acvae_core::rng::{SeedTree, Stream};
use acvae_core::stochastic::{kl_standard_normal, GaussianPosterior};
use acvae_core::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `E_q[log q(z) − log p(z)]` by sampling, with `p = N(0, I)`.
fn monte_carlo_kl(mu: &[f64], logvar: &[f64], draws: usize, rng: &mut impl Rng) -> f64 {
    let mut total = 0.0;
    for _ in 0..draws {
        let mut log_ratio = 0.0;
        for (&m, &lv) in mu.iter().zip(logvar) {
            let e: f64 = StandardNormal.sample(rng);
            let z = m + (0.5 * lv).exp() * e;
            // log N(z; m, σ²) − log N(z; 0, 1); the 2π terms cancel
            log_ratio += -0.5 * (lv + e * e) + 0.5 * z * z;
        }
        total += log_ratio;
    }
    total / draws as f64
}

#[test]
fn analytic_kl_matches_sampling() {
    let tree = SeedTree::new(2024);
    let mut rng = tree.stream(Stream::Fixture, 0);
    for case in 0..20 {
        let dim = 4;
        let mu: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let lv: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.0)).collect();
        let post = GaussianPosterior::new(
            Tensor::from_vec(1, dim, mu.clone()).unwrap(),
            Tensor::from_vec(1, dim, lv.clone()).unwrap(),
        )
        .unwrap();
        let analytic = kl_standard_normal(&post)[0];
        let sampled = monte_carlo_kl(&mu, &lv, 1_000_000, &mut tree.stream(Stream::Fixture, 1 + case));
        let rel = (analytic - sampled).abs() / analytic;
        assert!(rel < 0.01, "case {case}: analytic {analytic}, sampled {sampled}");
    }
}
