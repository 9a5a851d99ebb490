//! Value a cash balance on a binomial tree with the relative-entropy family,
//! first through its closed form and then by backward induction.

use std::sync::Arc;

use treeval::families::EntropicFamily;
use treeval::tree::{CashBalance, Tree};
use treeval::valuation::Valuation;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tree = Arc::new(Tree::regular(2, 2)?);
    let cash = CashBalance::from_values(&tree, vec![0.5, 1.0, -0.5, 3.0, 1.0, 0.0, -2.0])?;

    for gamma in [0.1, 1.0, 5.0] {
        let fam = EntropicFamily::new(tree.clone(), gamma)?;
        let recursive = fam.assemble()?;
        let root = tree.root();
        println!(
            "gamma {gamma:>4}: closed form {:+.6}  backward induction {:+.6}",
            fam.entropic_value(root, &cash),
            recursive.value(root, &cash)?
        );
    }

    let fam = EntropicFamily::new(tree.clone(), 1.0)?;
    for (x, v) in tree.nodes().zip(fam.values(&cash)?) {
        println!("  π at {:<3} = {v:+.6}", tree.label(x));
    }
    Ok(())
}
