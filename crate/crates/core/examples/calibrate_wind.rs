//! Finds the wind-speed offset whose stationary mean output matches a target energy per step.
//!
//! Usage: `cargo run --example calibrate_wind -- [target] [as-written|rated-capped]`

use rlmc_core::processes::{WindPower, WindPowerVariant};
use statrs::distribution::{Continuous, Normal};

const COEFF: f64 = 0.7633;
const NOISE: f64 = 0.4020;

/// Mean energy under the stationary law `y ~ N(0, noise² / (1 - coeff²))`, by the trapezoid rule.
fn stationary_mean(power: &WindPower, offset: f64) -> f64 {
    let sd = NOISE / (1.0 - COEFF * COEFF).sqrt();
    let normal = Normal::new(0.0, sd).unwrap();
    let steps = 20_000;
    let (lo, hi) = (-10.0 * sd, 10.0 * sd);
    let h = (hi - lo) / steps as f64;
    (0..=steps)
        .map(|k| {
            let y = lo + k as f64 * h;
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            w * normal.pdf(y) * power.energy_from_underlying(y, offset)
        })
        .sum::<f64>()
        * h
}

fn main() {
    let mut args = std::env::args().skip(1);
    let target: f64 = args
        .next()
        .map(|s| s.parse().expect("target must be a number"))
        .unwrap_or(0.35);
    let variant = match args.next().as_deref() {
        Some("as-written") => WindPowerVariant::AsWritten,
        _ => WindPowerVariant::RatedCapped,
    };
    let power = WindPower {
        variant,
        ..WindPower::default()
    };
    // the mean is increasing in the offset for offsets above zero
    let (mut lo, mut hi) = (0.0, 4.0);
    if stationary_mean(&power, lo) > target || stationary_mean(&power, hi) < target {
        eprintln!("target {target} is outside the reachable range");
        std::process::exit(1);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if stationary_mean(&power, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let offset = 0.5 * (lo + hi);
    println!("offset = {offset:.10}");
    println!(
        "mean energy per step = {:.6}",
        stationary_mean(&power, offset)
    );
}
