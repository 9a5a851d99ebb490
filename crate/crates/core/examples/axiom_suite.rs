//! Randomised axiom checks for several families on one tree, with the
//! witness of the first failure when there is one.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use treeval::families::{EntropicFamily, UiParams, Utility, WorstCaseParams};
use treeval::tree::Tree;
use treeval::valuation::{check_axioms, AxiomConfig, LinearStep, Valuation, ValuationFamily};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tree = Arc::new(Tree::random(&mut rng, 3, 3)?);
    // weights summing to 0.9 discount the future, so cash is not invariant
    let discounted = ValuationFamily::from_fn(tree.clone(), |t, x| {
        let n = t.children(x).len();
        Ok(Arc::new(LinearStep::children_only(vec![0.9 / n as f64; n])))
    })?;
    let families: Vec<(&str, Box<dyn Valuation>)> = vec![
        ("entropic", Box::new(EntropicFamily::new(tree.clone(), 1.0)?)),
        ("worst case with stopping", Box::new(WorstCaseParams::uniform(true).assemble(tree.clone())?)),
        ("power indifference", Box::new(UiParams { utility: Utility::crra(2.0)?, x0: 2.0 }.assemble(tree.clone())?)),
        ("discounted average", Box::new(discounted)),
    ];
    let cfg = AxiomConfig::new(300, 9);
    for (name, fam) in &families {
        let rep = check_axioms(fam.as_ref(), &cfg)?;
        println!("{name:<26} passed {:<5} worst residual {:.1e}", rep.passed(), rep.worst_residual());
        if let Some(o) = rep.outcomes.iter().find(|o| !o.passed) {
            println!("  {} fails: {}", o.axiom, o.witness.as_ref().map_or("", |w| w.detail.as_str()));
        }
    }
    Ok(())
}
