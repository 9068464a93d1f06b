//! Outcome of iterative decoding, shared between the model and the analysis code.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::edit::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StopReason {
    /// The model predicted `STOP`.
    Stop,
    /// The model revisited a state.
    Loop,
    /// The action limit was reached.
    Cap,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Stop => "STOP",
            StopReason::Loop => "LOOP",
            StopReason::Cap => "CAP",
        })
    }
}

impl FromStr for StopReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "STOP" => Ok(StopReason::Stop),
            "LOOP" => Ok(StopReason::Loop),
            "CAP" => Ok(StopReason::Cap),
            other => Err(format!("unknown stop reason `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Predicted actions; ends with `STOP` only when the model chose to stop.
    pub trace: Trace,
    #[serde(rename = "output")]
    pub final_tokens: Vec<String>,
    pub stop_reason: StopReason,
    pub steps: usize,
}

impl DecodeResult {
    /// Whether the first predicted action was `STOP`.
    pub fn did_nothing(&self) -> bool {
        self.stop_reason == StopReason::Stop && self.trace.num_edits() == 0
    }
}
