//! Pass from one-step pricing weights to a state-price density and back, and
//! price an asset with it.

use std::sync::Arc;

use treeval::market::{extract_state_price_density, round_trip_residual, Market, OneStepPrices};
use treeval::tree::{CashBalance, Tree};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tree = Arc::new(Tree::regular(2, 2)?);
    // risk-neutral weights for up 1.1, down 0.95: q = 1/3
    let prices: OneStepPrices = tree.internal_nodes().map(|x| (x, vec![1.0 / 3.0, 2.0 / 3.0])).collect();
    let spd = extract_state_price_density(&tree, &prices)?;
    for x in tree.nodes() {
        println!("ζ at {:<3} = {:.6}", tree.label(x), spd.get(x));
    }
    println!("round trip residual {:.1e}", round_trip_residual(&tree, &prices, &spd));

    let market = Market::binomial(tree.clone(), 100.0, 1.1, 0.95)?;
    let terminal = CashBalance::from_fn(&tree, |y| market.price(0, y));
    println!("price of the asset's terminal value at the root: {:.10}", spd.price(&tree, tree.root(), &terminal));
    Ok(())
}
