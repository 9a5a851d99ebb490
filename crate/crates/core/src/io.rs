//! File formats read by the command-line front end and the report writer.
//!
//! Every float in a report is written with 17 significant digits so that it
//! re-parses to the same bits; non-finite values become the strings `"inf"`,
//! `"-inf"` and `"nan"`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::families::{EntropicFamily, UiParams, Utility, WorstCaseParams};
use crate::market::{Market, OneStepPrices};
use crate::risksharing::Subsidiary;
use crate::tree::{CashBalance, NodeId, NodeRecord, Tree};
use crate::valuation::{OneStep, Valuation, ValuationFamily};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetRecord {
    pub name: String,
    pub prices: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFile {
    pub nodes: Vec<NodeRecord>,
    #[serde(default)]
    pub assets: Vec<AssetRecord>,
}

impl TreeFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn tree(&self) -> Result<Tree> {
        Tree::build(&self.nodes)
    }

    /// `None` when the file lists no assets.
    pub fn market(&self, tree: Arc<Tree>) -> Result<Option<Market>> {
        if self.assets.is_empty() {
            return Ok(None);
        }
        let assets: Vec<_> = self.assets.iter().map(|a| (a.name.clone(), a.prices.clone())).collect();
        Market::from_labels(tree, &assets).map(Some)
    }
}

/// A cash balance keyed by node label. Every node must be present.
pub fn parse_cash(tree: &Tree, text: &str) -> Result<CashBalance> {
    let map: BTreeMap<String, f64> = serde_json::from_str(text)?;
    CashBalance::from_labels(tree, &map)
}

/// Node-label-keyed map, e.g. a dual density on `x+`.
pub fn parse_node_map(tree: &Tree, text: &str) -> Result<BTreeMap<NodeId, f64>> {
    let map: BTreeMap<String, f64> = serde_json::from_str(text)?;
    map.iter().map(|(k, &v)| Ok((tree.node(k)?, v))).collect()
}

/// One-step pricing weights keyed by node label, one weight per child.
pub fn parse_one_step_prices(tree: &Tree, text: &str) -> Result<OneStepPrices> {
    let map: BTreeMap<String, Vec<f64>> = serde_json::from_str(text)?;
    map.iter().map(|(k, v)| Ok((tree.node(k)?, v.clone()))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityTag {
    Crra,
    Exponential,
}

/// The contents of a family descriptor file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum FamilyDescriptor {
    Entropic {
        gamma: f64,
    },
    Worst {
        #[serde(default)]
        alphas: BTreeMap<String, Vec<Vec<f64>>>,
        #[serde(default)]
        stopping: bool,
    },
    Ui {
        utility: UtilityTag,
        #[serde(rename = "R", default)]
        r: Option<f64>,
        #[serde(default)]
        gamma: Option<f64>,
        x0: f64,
    },
}

impl FamilyDescriptor {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn tag(&self) -> &'static str {
        match self {
            FamilyDescriptor::Entropic { .. } => "entropic",
            FamilyDescriptor::Worst { .. } => "worst",
            FamilyDescriptor::Ui { .. } => "ui",
        }
    }

    pub fn utility(&self) -> Result<Option<(Utility, f64)>> {
        let FamilyDescriptor::Ui { utility, r, gamma, x0 } = self else {
            return Ok(None);
        };
        let u = match (utility, r, gamma) {
            (UtilityTag::Crra, Some(r), None) => Utility::crra(*r)?,
            (UtilityTag::Exponential, None, Some(g)) => Utility::exponential(*g)?,
            (UtilityTag::Crra, _, _) => return Err(Error::Invalid("crra utility takes `R` and no `gamma`".into())),
            (UtilityTag::Exponential, _, _) => {
                return Err(Error::Invalid("exponential utility takes `gamma` and no `R`".into()))
            }
        };
        Ok(Some((u, *x0)))
    }

    pub fn build(&self, tree: Arc<Tree>) -> Result<LoadedFamily> {
        match self {
            FamilyDescriptor::Entropic { gamma } => Ok(LoadedFamily::Entropic(EntropicFamily::new(tree, *gamma)?)),
            FamilyDescriptor::Worst { alphas, stopping } => {
                let alphas = alphas
                    .iter()
                    .map(|(k, v)| Ok((tree.node(k)?, v.clone())))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                let params = WorstCaseParams { alphas, stopping: *stopping };
                Ok(LoadedFamily::Assembled(params.assemble(tree)?))
            }
            FamilyDescriptor::Ui { .. } => {
                let (utility, x0) = self.utility()?.expect("ui descriptor");
                Ok(LoadedFamily::Assembled(UiParams { utility, x0 }.assemble(tree)?))
            }
        }
    }
}

/// A family built from a descriptor. Entropic families keep their closed
/// forms.
#[derive(Clone, Debug)]
pub enum LoadedFamily {
    Entropic(EntropicFamily),
    Assembled(ValuationFamily),
}

impl LoadedFamily {
    pub fn valuation(&self) -> &dyn Valuation {
        match self {
            LoadedFamily::Entropic(f) => f,
            LoadedFamily::Assembled(f) => f,
        }
    }

    pub fn assembled(&self) -> Result<ValuationFamily> {
        match self {
            LoadedFamily::Entropic(f) => f.assemble(),
            LoadedFamily::Assembled(f) => Ok(f.clone()),
        }
    }

    pub fn one_step(&self, x: NodeId) -> Option<Arc<dyn OneStep>> {
        match self {
            LoadedFamily::Entropic(f) => {
                if f.tree().is_leaf(x) {
                    None
                } else {
                    Some(Arc::new(f.one_step(x)))
                }
            }
            LoadedFamily::Assembled(f) => f.one_step(x).cloned(),
        }
    }

    pub fn into_subsidiary(self) -> Subsidiary {
        match self {
            LoadedFamily::Entropic(f) => Subsidiary::Entropic(f),
            LoadedFamily::Assembled(f) => Subsidiary::Family(f),
        }
    }
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read `{}`: {e}", path.display())))
}

/// A float as a report value.
pub fn num(v: f64) -> Value {
    match serde_json::Number::from_f64(v) {
        Some(n) => Value::Number(n),
        None if v.is_nan() => Value::String("nan".into()),
        None if v > 0.0 => Value::String("inf".into()),
        None => Value::String("-inf".into()),
    }
}

pub fn nums(vs: &[f64]) -> Value {
    Value::Array(vs.iter().map(|&v| num(v)).collect())
}

/// Values keyed by node label, in tree pre-order.
pub fn node_map(tree: &Tree, pairs: impl IntoIterator<Item = (NodeId, f64)>) -> Value {
    let mut map = Map::new();
    for (y, v) in pairs {
        map.insert(tree.label(y).to_owned(), num(v));
    }
    Value::Object(map)
}

pub fn cash_map(tree: &Tree, cash: &CashBalance) -> Value {
    node_map(tree, tree.preorder().iter().map(|&y| (y, cash[y])))
}

/// Reads a float written by [`num`].
pub fn value_to_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) if s == "inf" => Some(f64::INFINITY),
        Value::String(s) if s == "-inf" => Some(f64::NEG_INFINITY),
        Value::String(s) if s == "nan" => Some(f64::NAN),
        _ => None,
    }
}

struct RoundTrip<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for RoundTrip<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        write!(writer, "{:.16e}", f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialise a report: indented, keys in insertion order, floats exact.
pub fn to_report_string(value: &Value) -> String {
    use serde::Serialize;
    let mut out = Vec::new();
    let fmt = RoundTrip(serde_json::ser::PrettyFormatter::with_indent(b"  "));
    let mut ser = serde_json::Serializer::with_formatter(&mut out, fmt);
    value.serialize(&mut ser).expect("serialising to memory cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("report is UTF-8")
}
