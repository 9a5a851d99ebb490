//! Valuation with access to a traded asset: the best hedge at every node and
//! the value it adds.

use std::sync::Arc;

use treeval::families::EntropicFamily;
use treeval::market::{market_value, Market, MarketFamily};
use treeval::optim::AscentOptions;
use treeval::tree::{CashBalance, Tree};
use treeval::valuation::Valuation;

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tree = Arc::new(Tree::regular(2, 2)?);
    let market = Market::binomial(tree.clone(), 100.0, 1.1, 0.95)?;
    let base = EntropicFamily::new(tree.clone(), 1.0)?.assemble()?;
    let cash = CashBalance::from_values(&tree, vec![0.0, 1.0, -1.0, 3.0, 0.0, 0.0, -3.0])?;
    let opts = AscentOptions::default();

    let hedged = MarketFamily::new(&base, market.clone(), opts.clone())?;
    let direct = market_value(&base, &market, tree.root(), &cash, &opts)?;
    println!("without market {:.8}", base.value(tree.root(), &cash)?);
    println!("with market    {:.8} (joint ascent {:.8})", hedged.value(tree.root(), &cash)?, direct.value);
    println!("market access  {:.8}", direct.access_value);

    let theta = hedged.strategy(tree.root(), &cash)?;
    for x in market.trading_nodes(tree.root()) {
        println!("hold {:+.6} units at {}", theta.holdings[&x][0], tree.label(x));
    }
    Ok(())
}
