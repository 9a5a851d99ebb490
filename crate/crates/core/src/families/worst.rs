//! Worst-case coherent valuations.
//!
//! Each internal node carries a finite set of transition probabilities
//! `α^j(x)` over its children. The one-step operator takes the smallest of
//! the continuation values `α^j · k_{x+1}` and, when stopping is enabled, the
//! stop value `k_x`. Backward induction is then the Bellman recursion of a
//! worst-case stopping problem.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tree::{NodeId, Tree};
use crate::valuation::{OneStep, ValuationFamily};

#[derive(Clone, Debug, PartialEq)]
pub struct WorstCaseStep {
    pub alphas: Vec<Vec<f64>>,
    pub stopping: bool,
}

impl WorstCaseStep {
    pub fn new(alphas: Vec<Vec<f64>>, stopping: bool) -> Result<Self> {
        let first = alphas
            .first()
            .ok_or_else(|| Error::Invalid("worst-case step needs at least one distribution".into()))?;
        let arity = first.len();
        for a in &alphas {
            if a.len() != arity {
                return Err(Error::Invalid("distributions have different lengths".into()));
            }
            if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Invalid(format!("{a:?} is not a probability vector")));
            }
        }
        Ok(WorstCaseStep { alphas, stopping })
    }

    /// Index of the minimising choice: `None` for stopping, `Some(j)` for
    /// `α^j`; ties go to the first candidate (stop first).
    pub fn active(&self, own: f64, children: &[f64]) -> Option<usize> {
        let mut best = if self.stopping { own } else { f64::INFINITY };
        let mut arg = None;
        for (j, a) in self.alphas.iter().enumerate() {
            let v: f64 = a.iter().zip(children).map(|(w, k)| w * k).sum();
            if v < best {
                best = v;
                arg = Some(j);
            }
        }
        arg
    }
}

impl OneStep for WorstCaseStep {
    fn evaluate(&self, own: f64, children: &[f64]) -> Result<f64> {
        if children.len() != self.alphas[0].len() {
            return Err(Error::Invalid(format!(
                "worst-case step expects {} children, got {}",
                self.alphas[0].len(),
                children.len()
            )));
        }
        let cont = self
            .alphas
            .iter()
            .map(|a| a.iter().zip(children).map(|(w, k)| w * k).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        Ok(if self.stopping { own.min(cont) } else { cont })
    }

    fn linear_pieces(&self) -> Option<Vec<Vec<f64>>> {
        let n = self.alphas[0].len();
        let mut pieces = Vec::new();
        if self.stopping {
            let mut stop = vec![0.0; n + 1];
            stop[0] = 1.0;
            pieces.push(stop);
        }
        for a in &self.alphas {
            let mut p = vec![0.0];
            p.extend_from_slice(a);
            pieces.push(p);
        }
        Some(pieces)
    }
}

/// Per-node distribution sets; nodes without an entry use the uniform
/// distribution over their children.
#[derive(Clone, Debug, Default)]
pub struct WorstCaseParams {
    pub alphas: BTreeMap<NodeId, Vec<Vec<f64>>>,
    pub stopping: bool,
}

impl WorstCaseParams {
    pub fn uniform(stopping: bool) -> Self {
        WorstCaseParams { alphas: BTreeMap::new(), stopping }
    }

    pub fn one_step(&self, tree: &Tree, x: NodeId) -> Result<WorstCaseStep> {
        let n = tree.children(x).len();
        let alphas = match self.alphas.get(&x) {
            Some(a) => a.clone(),
            None => vec![vec![1.0 / n as f64; n]],
        };
        if alphas.iter().any(|a| a.len() != n) {
            return Err(Error::Invalid(format!(
                "distribution at `{}` must have {n} entries",
                tree.label(x)
            )));
        }
        WorstCaseStep::new(alphas, self.stopping)
    }

    pub fn assemble(&self, tree: Arc<Tree>) -> Result<ValuationFamily> {
        for &x in self.alphas.keys() {
            tree.check(x)?;
            if tree.is_leaf(x) {
                return Err(Error::Invalid(format!("distribution given at leaf `{}`", tree.label(x))));
            }
        }
        ValuationFamily::from_fn(tree, |t, x| Ok(Arc::new(self.one_step(t, x)?) as Arc<dyn OneStep>))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_distribution_is_linear() {
        let s = WorstCaseStep::new(vec![vec![0.25, 0.75]], false).unwrap();
        assert_eq!(s.evaluate(100.0, &[4.0, 8.0]).unwrap(), 7.0);
    }

    #[test]
    fn stopping_takes_minimum() {
        let s = WorstCaseStep::new(vec![vec![0.5, 0.5]], true).unwrap();
        assert_eq!(s.evaluate(-1.0, &[4.0, 6.0]).unwrap(), -1.0);
        assert_eq!(s.active(-1.0, &[4.0, 6.0]), None);
        assert_eq!(s.active(5.5, &[4.0, 6.0]), Some(0));
        assert_eq!(s.active(5.0, &[5.0, 5.0]), None);
    }

    #[test]
    fn several_distributions() {
        let s = WorstCaseStep::new(vec![vec![0.5, 0.5], vec![0.9, 0.1], vec![0.1, 0.9]], false).unwrap();
        assert!((s.evaluate(0.0, &[0.0, 10.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(s.active(0.0, &[0.0, 10.0]), Some(1));
    }

    #[test]
    fn rejects_non_probabilities() {
        assert!(WorstCaseStep::new(vec![], true).is_err());
        assert!(WorstCaseStep::new(vec![vec![0.5, 0.6]], true).is_err());
        assert!(WorstCaseStep::new(vec![vec![0.5, 0.5], vec![1.0]], true).is_err());
    }
}
