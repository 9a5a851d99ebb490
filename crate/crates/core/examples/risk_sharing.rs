//! Optimal risk sharing between entropic subsidiaries that disagree on
//! probabilities and risk aversion.

use std::sync::Arc;

use treeval::dual::DualSolverOptions;
use treeval::families::EntropicFamily;
use treeval::risksharing::{share_value_with, stability_check, SharingMethod, Subsidiaries};
use treeval::tree::{CashBalance, Tree};
use treeval::valuation::Valuation;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = Tree::regular(2, 2)?;
    let optimist = base.with_weights(&[0.1, 0.2, 0.1, 0.25, 0.15, 0.1, 0.1])?;
    let pessimist = base.with_weights(&[0.1, 0.1, 0.2, 0.1, 0.1, 0.15, 0.25])?;
    let fams = vec![
        EntropicFamily::new(Arc::new(optimist), 1.0)?,
        EntropicFamily::new(Arc::new(pessimist), 3.0)?,
    ];
    let tree = fams[0].shared_tree().clone();
    let cash = CashBalance::from_values(&tree, vec![0.0, 1.0, -1.0, 2.0, 0.5, -0.5, -2.0])?;

    let subs = Subsidiaries::entropic(fams.clone())?;
    let opts = DualSolverOptions::default();
    let closed = share_value_with(&subs, tree.root(), &cash, SharingMethod::ClosedForm, &opts)?;
    let numeric = share_value_with(&subs, tree.root(), &cash, SharingMethod::DualAdditivity, &opts)?;
    println!("shared value {:.10} (numeric {:.10})", closed.value, numeric.value);
    println!("value of sharing zero cash {:.6}", closed.value_of_sharing);
    let solo: f64 = fams.iter().map(|f| f.entropic_value(tree.root(), &cash.scaled(0.5))).sum();
    println!("equal split without sharing {solo:.6}");

    let vals: Vec<&dyn Valuation> = fams.iter().map(|f| f as &dyn Valuation).collect();
    for x in tree.internal_nodes() {
        let s = stability_check(&vals, &closed.allocation, x)?;
        println!("stability at {}: residual {:.1e}", tree.label(x), s.residual);
    }
    Ok(())
}
