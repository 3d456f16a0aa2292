//! Integrates the marginal optimal-transport field from N(0, 1) to
//! N(mu, s^2) with Euler steps and compares against the closed-form transport
//! map. A single target gives straight paths; a spread target curves them.
//!
//! cargo run --example flow_matching

use convsynth::cfm::{euler_integrate, ot_flow, standard_normal, target_field};
use convsynth::nn::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (sigma, s) = (1e-4, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x0 = standard_normal(4, 3, &mut rng);
    let mu = Mat::from_shape_fn((4, 3), |(i, j)| i as f64 - j as f64);
    println!("conditional target field toward mu:\n{:.3}", target_field(&x0, &mu, sigma)?);
    let a = |t: f64| 1.0 - (1.0 - sigma) * t;
    let field = |x: &Mat, t: f64| {
        let k = (t * s * s - (1.0 - sigma) * a(t)) / (a(t) * a(t) + t * t * s * s);
        &mu + &((x - &(&mu * t)) * k)
    };
    let exact = &mu + &(&x0 * (sigma * sigma + s * s).sqrt());
    for steps in [1, 4, 16, 64, 256] {
        let x = euler_integrate(&field, x0.clone(), steps)?;
        let err = (&x - &exact).mapv(f64::abs).fold(0.0f64, |m, &e| m.max(e));
        println!("{steps:3} Euler steps: max error {err:.2e}");
    }
    let straight = |x: &Mat, t: f64| (&mu - &(x * (1.0 - sigma))) / a(t);
    let one = euler_integrate(&straight, x0.clone(), 1)?;
    let err = (&one - &ot_flow(&x0, &mu, 1.0, sigma)?).mapv(f64::abs).fold(0.0f64, |m, &e| m.max(e));
    println!("single target, 1 Euler step: max error {err:.2e}");
    Ok(())
}
