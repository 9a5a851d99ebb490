//! Utility-indifference one-step valuations, certainty equivalents, and two
//! numerical witnesses: indifference pricing on a trinomial tree violates
//! dynamic consistency, and certainty equivalents of non-exponential
//! utilities violate translation invariance.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::entropic::log_sum_exp;
use crate::error::{Error, Result};
use crate::optim::bisect;
use crate::tree::{CashBalance, NodeId, Tree};
use crate::valuation::{OneStep, Valuation, ValuationFamily};

/// A strictly increasing concave utility.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Utility {
    /// `x^{1-R} / (1-R)` on `x > 0`, `R > 0`, `R ≠ 1`.
    Crra { r: f64 },
    /// `-exp(-γx) / γ`.
    Exponential { gamma: f64 },
}

impl Utility {
    pub fn crra(r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) || r == 1.0 {
            return Err(Error::Invalid(format!(
                "CRRA exponent must be positive and different from 1, got {r}"
            )));
        }
        Ok(Utility::Crra { r })
    }

    pub fn exponential(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Invalid(format!("risk aversion must be positive, got {gamma}")));
        }
        Ok(Utility::Exponential { gamma })
    }

    /// `U(x)`; for CRRA with `R > 1` non-positive wealth maps to `-∞`, for
    /// `R < 1` negative wealth is a domain error.
    pub fn eval(&self, x: f64) -> Result<f64> {
        match *self {
            Utility::Exponential { gamma } => Ok(-(-gamma * x).exp() / gamma),
            Utility::Crra { r } => {
                if x > 0.0 {
                    Ok(x.powf(1.0 - r) / (1.0 - r))
                } else if r > 1.0 {
                    Ok(f64::NEG_INFINITY)
                } else if x == 0.0 {
                    Ok(0.0)
                } else {
                    Err(Error::Domain(format!("CRRA utility undefined at wealth {x}")))
                }
            }
        }
    }

    /// `U^{-1}(v)`.
    pub fn inverse(&self, v: f64) -> Result<f64> {
        match *self {
            Utility::Exponential { gamma } => {
                if v < 0.0 {
                    Ok(-(-gamma * v).ln() / gamma)
                } else {
                    Err(Error::Domain(format!("{v} is outside the range of exponential utility")))
                }
            }
            Utility::Crra { r } => {
                let base = (1.0 - r) * v;
                if base > 0.0 {
                    Ok(base.powf(1.0 / (1.0 - r)))
                } else {
                    Err(Error::Domain(format!("{v} is outside the range of CRRA utility")))
                }
            }
        }
    }

    /// `U'(x)`.
    pub fn marginal(&self, x: f64) -> f64 {
        match *self {
            Utility::Exponential { gamma } => (-gamma * x).exp(),
            Utility::Crra { r } => x.powf(-r),
        }
    }
}

/// The price `b` solving `U(x0) = Σ p_y U(x0 + k_y - b)`.
pub fn indifference_price(utility: Utility, x0: f64, probs: &[f64], payoffs: &[f64]) -> Result<f64> {
    if probs.len() != payoffs.len() {
        return Err(Error::Invalid("probabilities and payoffs differ in length".into()));
    }
    let lo = payoffs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = payoffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo == 0.0 {
        return Ok(lo);
    }
    let target = utility.eval(x0)?;
    if let Utility::Crra { r } = utility {
        if !(x0 > 0.0) {
            return Err(Error::Domain(format!("reference wealth {x0} is outside the CRRA domain")));
        }
        // all terminal wealths must stay non-negative
        let edge = x0 + lo;
        if edge < hi {
            hi = edge;
            if r < 1.0 {
                let at_edge = expected_utility(utility, x0, probs, payoffs, edge)? - target;
                if at_edge > 0.0 {
                    return Err(Error::Domain(format!(
                        "no indifference price within the utility domain for payoffs {payoffs:?}"
                    )));
                }
            }
        }
    }
    bisect(
        |b| Ok(expected_utility(utility, x0, probs, payoffs, b)? - target),
        lo,
        hi,
        1e-12,
    )
}

fn expected_utility(utility: Utility, x0: f64, probs: &[f64], payoffs: &[f64], b: f64) -> Result<f64> {
    let mut s = 0.0;
    for (p, k) in probs.iter().zip(payoffs) {
        s += p * utility.eval(x0 + k - b)?;
    }
    Ok(s)
}

/// Closed-form dual of the CRRA indifference price,
/// `π̃(λ) = x0 - x0 (Σ p_y^{1/R} λ_y^{1-1/R})^{R/(R-1)}`, with its gradient.
pub fn crra_ui_dual(r: f64, x0: f64, probs: &[f64], lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
    Utility::crra(r)?;
    if probs.len() != lambda.len() {
        return Err(Error::Invalid("density and probabilities differ in length".into()));
    }
    if lambda.iter().any(|l| !(*l >= 0.0)) || (lambda.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Ok((f64::INFINITY, vec![0.0; lambda.len()]));
    }
    let s: f64 = probs
        .iter()
        .zip(lambda)
        .map(|(p, l)| p.powf(1.0 / r) * l.powf(1.0 - 1.0 / r))
        .sum();
    let value = x0 - x0 * s.powf(r / (r - 1.0));
    let scale = x0 * s.powf(1.0 / (r - 1.0));
    let grad = probs
        .iter()
        .zip(lambda)
        .map(|(p, l)| -scale * (p / l).powf(1.0 / r))
        .collect();
    Ok((value, grad))
}

/// Indifference price on `x ∪ x+1`; `probs[0]` is the mass kept at `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct UiStep {
    pub utility: Utility,
    pub x0: f64,
    pub probs: Vec<f64>,
}

impl UiStep {
    pub fn new(utility: Utility, x0: f64, probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("{probs:?} is not a strictly positive probability")));
        }
        if matches!(utility, Utility::Crra { .. }) && !(x0 > 0.0) {
            return Err(Error::Invalid(format!("reference wealth {x0} is outside the CRRA domain")));
        }
        Ok(UiStep { utility, x0, probs })
    }
}

impl OneStep for UiStep {
    fn evaluate(&self, own: f64, children: &[f64]) -> Result<f64> {
        if children.len() + 1 != self.probs.len() {
            return Err(Error::Invalid(format!(
                "indifference step expects {} children, got {}",
                self.probs.len() - 1,
                children.len()
            )));
        }
        let mut k = Vec::with_capacity(self.probs.len());
        k.push(own);
        k.extend_from_slice(children);
        indifference_price(self.utility, self.x0, &self.probs, &k)
    }

    fn conjugate(&self, mu: &[f64]) -> Option<Result<(f64, Vec<f64>)>> {
        match self.utility {
            Utility::Crra { r } => Some(crra_ui_dual(r, self.x0, &self.probs, mu)),
            Utility::Exponential { gamma } => {
                let v = super::entropic::relative_entropy(mu, &self.probs) / gamma;
                let g = mu
                    .iter()
                    .zip(&self.probs)
                    .map(|(m, p)| ((m / p).ln() + 1.0) / gamma)
                    .collect();
                Some(Ok((v, g)))
            }
        }
    }
}

/// Indifference family with one-step probabilities taken from the tree
/// weights, split as the entropic family splits them.
#[derive(Clone, Debug)]
pub struct UiParams {
    pub utility: Utility,
    pub x0: f64,
}

impl UiParams {
    pub fn one_step(&self, tree: &Tree, x: NodeId) -> Result<UiStep> {
        let mass = tree.subtree_mass(x);
        let mut probs = vec![tree.weight(x) / mass];
        probs.extend(tree.children(x).iter().map(|&z| tree.subtree_mass(z) / mass));
        UiStep::new(self.utility, self.x0, probs)
    }

    pub fn assemble(&self, tree: Arc<Tree>) -> Result<ValuationFamily> {
        ValuationFamily::from_fn(tree, |t, x| Ok(Arc::new(self.one_step(t, x)?) as Arc<dyn OneStep>))
    }
}

/// Two terminal claims with matching time-1 indifference prices and
/// different time-0 prices.
#[derive(Clone, Debug)]
pub struct DcCounterexample {
    pub tree: Tree,
    pub gap: f64,
    pub claim: Vec<f64>,
    pub other: Vec<f64>,
    pub time1_prices: Vec<f64>,
    /// Largest mismatch between the time-1 prices of the two claims.
    pub time1_mismatch: f64,
    pub time0_prices: (f64, f64),
    pub samples: usize,
}

/// Search a two-period trinomial tree with nine equally likely leaves for a
/// violation of dynamic consistency by indifference prices of terminal
/// claims. `x0` is the baseline terminal wealth.
pub fn ui_dc_counterexample(utility: Utility, x0: f64, budget: usize, seed: u64) -> Result<DcCounterexample> {
    let tree = Tree::regular(2, 3)?;
    let third = [1.0 / 3.0; 3];
    let ninth = [1.0 / 9.0; 9];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let time1 = |claim: &[f64]| -> Result<Vec<f64>> {
        (0..3).map(|n| indifference_price(utility, x0, &third, &claim[3 * n..3 * n + 3])).collect()
    };

    // Match the time-1 prices of `claim` by re-drawing two payoffs per
    // branch and solving for the third.
    let matched = |fresh: &[f64], prices: &[f64]| -> Option<Vec<f64>> {
        let target = utility.eval(x0).ok()?;
        let mut other = vec![0.0; 9];
        for n in 0..3 {
            let b = prices[n];
            let a0 = fresh[2 * n];
            let a1 = fresh[2 * n + 1];
            let rest = 3.0 * target - utility.eval(x0 + a0 - b).ok()? - utility.eval(x0 + a1 - b).ok()?;
            let w = utility.inverse(rest).ok()?;
            other[3 * n] = a0;
            other[3 * n + 1] = a1;
            other[3 * n + 2] = w - x0 + b;
        }
        Some(other)
    };

    let mut best: Option<DcCounterexample> = None;
    let mut consider = |claim: Vec<f64>, other: Vec<f64>, samples: usize| -> Result<Option<f64>> {
        let p1 = time1(&claim)?;
        let q1 = match time1(&other) {
            Ok(q) => q,
            Err(Error::Domain(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let b0 = indifference_price(utility, x0, &ninth, &claim)?;
        let c0 = match indifference_price(utility, x0, &ninth, &other) {
            Ok(c) => c,
            Err(Error::Domain(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let gap = (b0 - c0).abs();
        let mismatch = p1.iter().zip(&q1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if best.as_ref().is_none_or(|b| gap > b.gap) {
            best = Some(DcCounterexample {
                tree: tree.clone(),
                gap,
                claim,
                other,
                time1_prices: p1,
                time1_mismatch: mismatch,
                time0_prices: (b0, c0),
                samples,
            });
        }
        Ok(Some(gap))
    };

    let explore = budget.div_ceil(2).max(1);
    let mut used = 0;
    let mut base: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut base_gap = -1.0;
    while used < budget {
        used += 1;
        let (claim, fresh) = if used <= explore || base.is_none() {
            let c: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (c, f)
        } else {
            // local refinement around the best pair found so far
            let (c, f) = base.clone().unwrap();
            let scale = 0.1 * (1.0 - used as f64 / budget as f64) + 1e-3;
            let c: Vec<f64> = c.iter().map(|v| (v + scale * rng.gen_range(-1.0..1.0)).clamp(-1.0, 1.0)).collect();
            let f: Vec<f64> = f.iter().map(|v| (v + scale * rng.gen_range(-1.0..1.0)).clamp(-1.0, 1.0)).collect();
            (c, f)
        };
        let prices = time1(&claim)?;
        let Some(other) = matched(&fresh, &prices) else { continue };
        if let Some(gap) = consider(claim.clone(), other, used)? {
            if gap > base_gap {
                base_gap = gap;
                base = Some((claim, fresh));
            }
        }
    }
    best.ok_or_else(|| Error::NoConvergence {
        iterations: budget,
        residual: 0.0,
        best_value: 0.0,
        best_point: Vec::new(),
    })
}

/// Certainty-equivalent valuation `U(π_x(K)) = Σ_{y ∈ x+} (p_y/p̄_x) U(K_y)`.
#[derive(Clone, Debug)]
pub struct CertaintyEquivalent {
    tree: Arc<Tree>,
    utility: Utility,
}

impl CertaintyEquivalent {
    pub fn new(tree: Arc<Tree>, utility: Utility) -> Self {
        CertaintyEquivalent { tree, utility }
    }
}

impl Valuation for CertaintyEquivalent {
    fn tree(&self) -> &Tree {
        &self.tree
    }

    fn value(&self, x: NodeId, cash: &CashBalance) -> Result<f64> {
        let t = &self.tree;
        let mass = t.subtree_mass(x);
        match self.utility {
            Utility::Exponential { gamma } => {
                let lm = mass.ln();
                Ok(-log_sum_exp(t.descendants(x).iter().map(|&y| t.weight(y).ln() - lm - gamma * cash[y])) / gamma)
            }
            u => {
                let mut s = 0.0;
                for &y in t.descendants(x) {
                    s += t.weight(y) / mass * u.eval(cash[y])?;
                }
                u.inverse(s)
            }
        }
    }
}

/// Largest translation-invariance defect `|π(K + a) - π(K) - a|` of the
/// certainty-equivalent construction over `trials` random cash balances in
/// `[0.5, 3]` on a fixed depth-2 binary tree.
pub fn exponential_uniqueness_witness(utility: Utility, shift: f64, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = Arc::new(Tree::random(&mut rng, 2, 2)?);
    let ce = CertaintyEquivalent::new(tree.clone(), utility);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let k = CashBalance::from_fn(&tree, |_| rng.gen_range(0.5..3.0));
        let shifted = k.shifted_on(&tree, tree.root(), shift);
        for x in tree.nodes() {
            let d = ce.value(x, &shifted)? - ce.value(x, &k)? - shift;
            worst = worst.max(d.abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::EntropicFamily;

    #[test]
    fn constant_payoff_prices_at_itself() {
        let u = Utility::crra(2.0).unwrap();
        assert_eq!(indifference_price(u, 2.0, &[0.5, 0.5], &[0.3, 0.3]).unwrap(), 0.3);
    }

    #[test]
    fn exponential_matches_entropic_step() {
        let t = Arc::new(Tree::regular(1, 3).unwrap());
        let ent = EntropicFamily::new(t.clone(), 0.7).unwrap();
        let ui = UiParams { utility: Utility::exponential(0.7).unwrap(), x0: 1.5 };
        let a = ent.one_step(t.root());
        let b = ui.one_step(&t, t.root()).unwrap();
        for k in [[0.0, 1.0, -1.0, 2.0], [3.0, -2.0, 0.5, 0.1], [-4.0, 4.0, 0.0, 1.0]] {
            let va = a.evaluate(k[0], &k[1..]).unwrap();
            let vb = b.evaluate(k[0], &k[1..]).unwrap();
            assert!((va - vb).abs() < 1e-10, "{va} vs {vb}");
        }
    }

    #[test]
    fn crra_root_found_price() {
        // R = 2, x0 = 2, uniform over three outcomes
        let u = Utility::crra(2.0).unwrap();
        let p = [1.0 / 3.0; 3];
        let b = indifference_price(u, 2.0, &p, &[0.0, 1.0, -1.0]).unwrap();
        // -1/2 = (1/3)(-1/(2-b) - 1/(3-b) - 1/(1-b))
        let resid = -0.5 + (1.0 / (2.0 - b) + 1.0 / (3.0 - b) + 1.0 / (1.0 - b)) / 3.0;
        assert!(resid.abs() < 1e-10);
        assert!(b < 0.0 && b > -1.0);
    }

    #[test]
    fn crra_dual_at_reference_is_zero() {
        for r in [0.5, 2.0, 3.5] {
            let p = [0.2, 0.3, 0.5];
            let (v, _) = crra_ui_dual(r, 2.0, &p, &p).unwrap();
            assert!(v.abs() < 1e-14);
        }
        assert!(crra_ui_dual(1.0, 2.0, &[0.5, 0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn crra_domain_error_for_low_exponent() {
        let u = Utility::crra(0.5).unwrap();
        let err = indifference_price(u, 1.0, &[0.5, 0.5], &[-3.0, 10.0]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn equal_claims_have_zero_gap() {
        let u = Utility::crra(2.0).unwrap();
        let y = [0.1, -0.2, 0.3, 0.0, 0.5, -0.5, 0.2, 0.2, -0.1];
        let p = [1.0 / 9.0; 9];
        let a = indifference_price(u, 2.0, &p, &y).unwrap();
        let b = indifference_price(u, 2.0, &p, &y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_cash_has_no_ti_defect() {
        let t = Arc::new(Tree::regular(2, 2).unwrap());
        let ce = CertaintyEquivalent::new(t.clone(), Utility::crra(2.0).unwrap());
        let k = CashBalance::constant(&t, 1.3);
        let d = ce.value(t.root(), &k.shifted_on(&t, t.root(), 1.0)).unwrap() - ce.value(t.root(), &k).unwrap() - 1.0;
        assert!(d.abs() < 1e-14);
    }
}
