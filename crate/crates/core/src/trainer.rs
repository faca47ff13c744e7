use std::fmt;

use crate::autodiff::{MathError, Param};

/// Errors shared by the three training stages.
#[derive(Debug)]
pub enum TrainError {
    Math(MathError),
    /// Loss went non-finite. Carries the parameters as of the last epoch
    /// that completed cleanly.
    Diverged {
        stage: &'static str,
        epoch: usize,
        last_stable: Vec<Param>,
    },
    /// A precondition of the stage was violated.
    Contract(String),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Math(e) => write!(f, "{e}"),
            TrainError::Diverged { stage, epoch, .. } => {
                write!(f, "{stage} diverged at epoch {epoch}; last stable checkpoint retained")
            }
            TrainError::Contract(msg) => write!(f, "contract violation: {msg}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<MathError> for TrainError {
    fn from(e: MathError) -> Self {
        TrainError::Math(e)
    }
}

/// One logged epoch: named scalar fields, emitted verbatim into stage CSVs.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub fields: Vec<(&'static str, f64)>,
}

/// Instrumentation threaded through every trainer: per-epoch logs plus the
/// label-mask audit that proves unseen-class data never reaches a loss.
#[derive(Debug, Default)]
pub struct TrainTrace {
    pub epochs: Vec<EpochLog>,
    pub mask_checked: u64,
    pub mask_violations: u64,
}

impl TrainTrace {
    pub fn new() -> TrainTrace {
        TrainTrace::default()
    }

    pub fn log(&mut self, epoch: usize, fields: Vec<(&'static str, f64)>) {
        self.epochs.push(EpochLog { epoch, fields });
    }

    /// Records that `label` was admitted into a loss; `allowed` is the
    /// contract the caller is bound to.
    pub fn audit_label(&mut self, label: usize, allowed: impl Fn(usize) -> bool) {
        self.mask_checked += 1;
        if !allowed(label) {
            self.mask_violations += 1;
        }
    }

    pub fn audit_all(&mut self, labels: &[usize], allowed: impl Fn(usize) -> bool) {
        for &l in labels {
            self.audit_label(l, &allowed);
        }
    }

    /// CSV body for this trace, `epoch` column first.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.epochs.first() {
            out.push_str("epoch");
            for (name, _) in &first.fields {
                out.push(',');
                out.push_str(name);
            }
            out.push('\n');
            for row in &self.epochs {
                out.push_str(&row.epoch.to_string());
                for (_, value) in &row.fields {
                    out.push(',');
                    out.push_str(&value.to_string());
                }
                out.push('\n');
            }
        }
        out
    }
}
