//! Detection of lookahead bias in LLM-based forecasts.
//!
//! The central statistic is Lookahead Propensity (LAP): the geometric mean
//! of the lowest K% of prompt-token probabilities. Prompts a model saw in
//! training have few surprising tokens and therefore a high LAP. If a
//! model's forecasts are more accurate exactly where LAP is high, the
//! accuracy is plausibly memorized rather than inferred.

pub mod detection;
pub mod error;
pub mod lap;
pub mod panel;
pub mod parser;
pub mod regression;
pub mod report;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
pub use lap::{compute_lap, LapScore, ScoredPrompt};
pub use panel::{Column, PanelDataset, PanelObservation, PeriodLabel};
