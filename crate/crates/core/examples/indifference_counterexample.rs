//! Utility-indifference prices: exponential utility reproduces the entropic
//! one-step operator, while power utility breaks dynamic consistency.

use treeval::families::{exponential_uniqueness_witness, ui_dc_counterexample, EntropicFamily, UiStep, Utility};
use treeval::tree::Tree;
use treeval::valuation::OneStep;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tree = std::sync::Arc::new(Tree::regular(1, 3)?.with_weights(&[0.1, 0.2, 0.3, 0.4])?);
    let ent = EntropicFamily::new(tree.clone(), 2.0)?.one_step(tree.root());
    let ui = UiStep::new(Utility::exponential(2.0)?, 1.0, ent.weights.clone())?;
    let (own, kids) = (0.4, [1.0, -0.5, 2.0]);
    println!("exponential indifference {:.12}, entropic {:.12}", ui.evaluate(own, &kids)?, ent.evaluate(own, &kids)?);

    for utility in [Utility::crra(2.0)?, Utility::exponential(1.0)?] {
        let cx = ui_dc_counterexample(utility, 2.0, 10_000, 1)?;
        println!(
            "{utility:?}: time-1 prices agree to {:.1e}, time-0 prices {:.6} vs {:.6}, gap {:.2e} after {} samples",
            cx.time1_mismatch, cx.time0_prices.0, cx.time0_prices.1, cx.gap, cx.samples
        );
        println!("  constant-shift defect {:.2e}", exponential_uniqueness_witness(utility, 0.5, 50, 1)?);
    }
    Ok(())
}
