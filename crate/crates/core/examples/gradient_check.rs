//! Finite-difference check of every loss, then of a custom function.
//!
//!     cargo run --release --example gradient_check [seed]

use speaker_bases::training::{check_gradient, gradcheck_suite, GRADCHECK_TOLERANCE};

fn main() -> speaker_bases::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let report = gradcheck_suite(seed);
    println!("{report}");

    // The same checker works on any closure returning (value, gradient).
    let rosenbrock = |x: &[f64]| {
        let (a, b) = (x[0], x[1]);
        let value = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let grad = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((value, grad))
    };
    let err = check_gradient(&[-1.2, 1.0], rosenbrock)?;
    println!("rosenbrock relative error {err:.2e} (tolerance {GRADCHECK_TOLERANCE:e})");

    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
