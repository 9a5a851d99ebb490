//! Concrete valuation families.

pub mod entropic;
pub mod ui;
pub mod worst;

pub use entropic::{log_sum_exp, relative_entropy, EntropicFamily, EntropicStep};
pub use ui::{
    crra_ui_dual, exponential_uniqueness_witness, indifference_price, ui_dc_counterexample, CertaintyEquivalent,
    DcCounterexample, UiParams, UiStep, Utility,
};
pub use worst::{WorstCaseParams, WorstCaseStep};
