//! Equal error rate of two Gaussian score distributions as they separate.
//!
//!     cargo run --example eer_sweep

use speaker_bases::eval::eer_from_scores;
use speaker_bases::numeric::SeededRng;

fn main() -> speaker_bases::Result<()> {
    let mut rng = SeededRng::new(3);
    let n = 2000;
    println!("{:>6} {:>8} {:>10} {:>8}", "gap", "eer", "threshold", "ideal");
    for step in 0..=8 {
        let gap = 0.5 * step as f64;
        let targets: Vec<f64> = (0..n).map(|_| gap + rng.normal()).collect();
        let impostors: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let r = eer_from_scores(&targets, &impostors)?;
        // Unit-variance normals cross at gap / 2, where both error rates are Φ(−gap/2).
        let ideal = 0.5 * libm::erfc(gap / 2.0 / std::f64::consts::SQRT_2);
        println!("{gap:>6.1} {:>8.4} {:>10.4} {ideal:>8.4}", r.eer, r.threshold);
    }
    Ok(())
}

