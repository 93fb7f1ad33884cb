//! Run log persisted as line-delimited JSON.

use serde::{Deserialize, Serialize};

use super::config::Phase;
use crate::analysis::SegmentationMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub metrics: SegmentationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header { phase: Phase, config_hash: String },
    Step(StepRecord),
    Epoch(EpochRecord),
    Eval(EvalRecord),
    Final { checkpoint: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub phase: Phase,
    pub config_hash: String,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub evals: Vec<EvalRecord>,
    pub checkpoint: Option<String>,
}

impl RunLog {
    pub fn new(phase: Phase, config_hash: String) -> Self {
        RunLog { phase, config_hash, steps: Vec::new(), epochs: Vec::new(), evals: Vec::new(), checkpoint: None }
    }

    pub fn lrs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.lr).collect()
    }

    pub fn last_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }

    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![Line::Header { phase: self.phase, config_hash: self.config_hash.clone() }];
        lines.extend(self.steps.iter().cloned().map(Line::Step));
        lines.extend(self.epochs.iter().cloned().map(Line::Epoch));
        lines.extend(self.evals.iter().cloned().map(Line::Eval));
        lines.push(Line::Final { checkpoint: self.checkpoint.clone() });
        lines.iter().map(|l| serde_json::to_string(l).expect("record serializes") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut log: Option<RunLog> = None;
        for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line: Line = serde_json::from_str(raw).map_err(|e| format!("line {}: {e}", i + 1))?;
            match (line, log.as_mut()) {
                (Line::Header { phase, config_hash }, None) => log = Some(RunLog::new(phase, config_hash)),
                (Line::Header { .. }, Some(_)) => return Err(format!("line {}: duplicate header", i + 1)),
                (_, None) => return Err("missing header record".into()),
                (Line::Step(s), Some(l)) => l.steps.push(s),
                (Line::Epoch(e), Some(l)) => l.epochs.push(e),
                (Line::Eval(e), Some(l)) => l.evals.push(e),
                (Line::Final { checkpoint }, Some(l)) => l.checkpoint = checkpoint,
            }
        }
        log.ok_or_else(|| "empty run log".into())
    }
}
