//! Convex duals of a valuation: numerical conjugates, the node-by-node
//! recursion of the dual, and recovery of the value from its dual.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use treeval::dual::{
    dual_recursion_sides, dual_value, primal_from_dual, DualDensity, DualSolverOptions, EntropicOracle, NumericConjugate,
};
use treeval::families::EntropicFamily;
use treeval::tree::{CashBalance, Tree};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tree = Arc::new(Tree::random(&mut rng, 3, 3)?);
    let fam = EntropicFamily::new(tree.clone(), 0.8)?;
    let root = tree.root();
    let opts = DualSolverOptions::default();

    let lambda = DualDensity::random(&tree, root, 1.0, &mut rng);
    let numeric = dual_value(&fam, root, &lambda, &opts)?;
    println!("dual at a random density: closed form {:.10}, numeric {numeric:.10}", fam.entropic_dual(root, lambda.values()));

    let sides = dual_recursion_sides(&EntropicOracle(&fam), &lambda)?;
    println!("recursion: lhs {:.12}, rhs {:.12}, residual {:.1e}", sides.lhs, sides.rhs(), sides.residual());

    let cash = CashBalance::from_fn(&tree, |x| (x.index() as f64).sin());
    let mut conj = NumericConjugate::new(&fam, root, opts.ascent.clone());
    let rec = primal_from_dual(&mut conj, &cash.restrict(&tree, root), &DualSolverOptions { tolerance: 1e-7, ..opts })?;
    println!(
        "value recovered from the dual {:.8} (direct {:.8}) after {} iterations",
        rec.value,
        fam.entropic_value(root, &cash),
        rec.iterations
    );
    Ok(())
}
