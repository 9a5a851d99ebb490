//! A worst-case valuation that may stop early: at every node the value is the
//! smaller of the cash on hand and the least favourable continuation.

use std::sync::Arc;

use treeval::families::WorstCaseParams;
use treeval::tree::{CashBalance, Tree};
use treeval::valuation::Valuation;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tree = Arc::new(Tree::regular(2, 2)?);
    let cash = CashBalance::from_values(&tree, vec![0.2, 1.0, -0.5, 3.0, -1.0, 0.5, 0.0])?;

    let mut params = WorstCaseParams::uniform(false);
    params.alphas.insert(tree.root(), vec![vec![0.5, 0.5], vec![0.8, 0.2], vec![0.3, 0.7]]);
    let continuing = params.assemble(tree.clone())?;
    params.stopping = true;
    let stopping = params.assemble(tree.clone())?;

    for x in tree.nodes() {
        println!(
            "{:<3} cash {:+.2}  worst case {:+.4}  with stopping {:+.4}",
            tree.label(x),
            cash[x],
            continuing.value(x, &cash)?,
            stopping.value(x, &cash)?
        );
    }
    Ok(())
}
