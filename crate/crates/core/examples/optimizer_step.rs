//! Adam with decoupled weight decay minimizing a quadratic bowl.
//! The bias slot is never decayed, so it lands on its target exactly.
//!
//!     cargo run --example optimizer_step

use speaker_bases::training::{OptimizerSettings, OptimizerState, ParamRole, ParamSlot};

fn main() -> speaker_bases::Result<()> {
    let settings = OptimizerSettings {
        learning_rate: 0.05,
        weight_decay: 0.01,
        ..Default::default()
    };
    settings.validate()?;
    let mut opt = OptimizerState::new(settings);

    let target = [1.0, -2.0];
    let mut weight = vec![0.0, 0.0];
    let mut bias = vec![0.0];
    for step in 0..=600 {
        // d/dθ ½‖θ − t‖²
        let gw: Vec<f64> = weight.iter().zip(&target).map(|(w, t)| w - t).collect();
        let gb = [bias[0] - 3.0];
        if step % 100 == 0 {
            println!("step {step:>3}: weight {weight:+.4?} bias {:+.4}", bias[0]);
        }
        opt.step(&mut [
            ParamSlot { role: ParamRole::Weight, values: &mut weight, grad: Some(&gw) },
            ParamSlot { role: ParamRole::Bias, values: &mut bias, grad: Some(&gb) },
        ])?;
    }
    println!("weight settles slightly inside the target because of decay");
    Ok(())
}
