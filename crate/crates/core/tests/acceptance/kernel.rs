use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shel_core::inference::truncated_normal_cdf;

use crate::common::{trunc_cdf_oracle, uniform};
use crate::Outcome;

const DRAWS: usize = 10_000;
const REL_TOL: f64 = 1e-10;

pub fn truncated_normal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut worst_case = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..DRAWS {
        let mu = uniform(&mut rng, -5.0, 5.0);
        let sigma2 = 10f64.powf(uniform(&mut rng, -2.0, 2.0));
        let sd = sigma2.sqrt();
        let za = uniform(&mut rng, -30.0, 30.0);
        let width = 10f64.powf(uniform(&mut rng, -3.0, 1.0));
        let mut a = mu + sd * za;
        let mut b = a + sd * width;
        let x = a + (b - a) * uniform(&mut rng, 0.001, 0.999);
        match rng.random_range(0..10) {
            0 => a = f64::NEG_INFINITY,
            1 => b = f64::INFINITY,
            _ => {}
        }
        let got = truncated_normal_cdf(x, mu, sigma2, a, b).value;
        let want = trunc_cdf_oracle(x, mu, sigma2, a, b);
        let rel = ((got - want) / want).abs();
        if !(rel <= worst) {
            worst = if rel.is_nan() { f64::INFINITY } else { rel };
            worst_case = (x, mu, sigma2, a, b);
        }
    }
    Outcome::check(
        worst < REL_TOL,
        format!("max relative error {worst:.2e} over {DRAWS} draws (tolerance {REL_TOL:.0e}); worst at {worst_case:?}"),
    )
}
