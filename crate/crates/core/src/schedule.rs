//! Pre-training schedule planner for model versions A and B.
//!
//! The schedule is loaded from a shipped transcription of the published
//! table (steps, batch size, printed example count, sequence length and
//! learning-rate endpoints per column). The printed example counts are kept
//! separate from the step and batch columns so [`validate_against_table`]
//! genuinely checks the arithmetic instead of restating it.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TABLE_TRANSCRIPTION: &str = include_str!("../data/schedule_table.tsv");

/// Relative error at or below which a printed example count is accepted.
pub const EXAMPLES_TOLERANCE: f64 = 0.005;

/// Printed example counts are given in millions.
pub const PRINTED_UNIT: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid phase {name:?}: {message}")]
    InvalidPhase { name: String, message: String },
    #[error("schedule table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error("schedule table has no column {0:?}")]
    MissingColumn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrShape {
    Constant,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePhase {
    pub name: String,
    pub steps: u64,
    pub batch_size: u64,
    pub seq_len: u32,
    pub lr_start: f64,
    pub lr_end: f64,
    pub lr_shape: LrShape,
}

impl SchedulePhase {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let fail = |message: &str| {
            Err(ScheduleError::InvalidPhase {
                name: self.name.clone(),
                message: message.to_string(),
            })
        };
        if self.steps == 0 {
            return fail("steps must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive");
        }
        if self.seq_len != 128 && self.seq_len != 512 {
            return fail("sequence length must be 128 or 512");
        }
        if !(self.lr_start >= 0.0 && self.lr_end >= 0.0) {
            return fail("learning rates must be non-negative");
        }
        if self.lr_shape == LrShape::Constant && self.lr_start != self.lr_end {
            return fail("constant phase needs lr_start == lr_end");
        }
        Ok(())
    }

    fn lr_at_offset(&self, offset: u64) -> f64 {
        match self.lr_shape {
            LrShape::Constant => self.lr_start,
            LrShape::Linear => {
                let t = offset as f64 / self.steps as f64;
                self.lr_start * (1.0 - t) + self.lr_end * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVersion {
    A,
    B,
}

impl FromStr for ModelVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(ModelVersion::A),
            "B" | "b" => Ok(ModelVersion::B),
            other => Err(format!("unknown model version {other:?} (expected A or B)")),
        }
    }
}

impl fmt::Display for ModelVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVersion::A => "A",
            ModelVersion::B => "B",
        })
    }
}

/// One column of the transcribed table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableColumn {
    pub phase: SchedulePhase,
    /// Printed example count, in units.
    pub printed_examples: u64,
}

pub fn parse_table(text: &str) -> Result<Vec<TableColumn>, ScheduleError> {
    let mut columns = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| ScheduleError::Table { line: i + 1, message };
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [name, steps, batch, examples, seq_len, lr_start, lr_end] = cols[..] else {
            return Err(err(format!("expected 7 columns, found {}", cols.len())));
        };
        let int = |s: &str| s.parse::<u64>().map_err(|e| err(format!("{s:?}: {e}")));
        let real = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let lr_start = real(lr_start)?;
        let lr_end = real(lr_end)?;
        let phase = SchedulePhase {
            name: name.to_string(),
            steps: int(steps)?,
            batch_size: int(batch)?,
            seq_len: int(seq_len)? as u32,
            lr_start,
            lr_end,
            lr_shape: if lr_start == lr_end {
                LrShape::Constant
            } else {
                LrShape::Linear
            },
        };
        phase.validate()?;
        let printed_examples = int(examples)?
            .checked_mul(PRINTED_UNIT)
            .ok_or_else(|| err("printed example count overflows".into()))?;
        columns.push(TableColumn { phase, printed_examples });
    }
    Ok(columns)
}

pub fn shipped_table() -> &'static [TableColumn] {
    static TABLE: OnceLock<Vec<TableColumn>> = OnceLock::new();
    TABLE.get_or_init(|| parse_table(TABLE_TRANSCRIPTION).expect("shipped table is valid"))
}

/// Printed example counts by column name.
pub fn printed_examples(table: &[TableColumn]) -> HashMap<String, u64> {
    table
        .iter()
        .map(|c| (c.phase.name.clone(), c.printed_examples))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub version: ModelVersion,
    pub phases: Vec<SchedulePhase>,
}

impl Schedule {
    pub fn new(version: ModelVersion, phases: Vec<SchedulePhase>) -> Result<Self, ScheduleError> {
        for p in &phases {
            p.validate()?;
        }
        Ok(Self { version, phases })
    }

    /// Builds a version from the given table: A runs Warmup, Step 1, Step 2,
    /// Step 3a, Step 3b; B runs Warmup, Step 1, Step 2, Step 3.
    pub fn from_table(version: ModelVersion, table: &[TableColumn]) -> Result<Self, ScheduleError> {
        let names: &[&str] = match version {
            ModelVersion::A => &["Warmup", "Step 1", "Step 2", "Step 3a", "Step 3b"],
            ModelVersion::B => &["Warmup", "Step 1", "Step 2", "Step 3"],
        };
        let phases = names
            .iter()
            .map(|n| {
                table
                    .iter()
                    .find(|c| c.phase.name == *n)
                    .map(|c| c.phase.clone())
                    .ok_or_else(|| ScheduleError::MissingColumn(n.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(version, phases)
    }

    pub fn version(version: ModelVersion) -> Self {
        Self::from_table(version, shipped_table()).expect("shipped table covers both versions")
    }

    pub fn total_steps(&self) -> u64 {
        self.phases.iter().map(|p| p.steps).sum()
    }

    /// First global step of every phase.
    pub fn phase_starts(&self) -> Vec<u64> {
        self.phases
            .iter()
            .scan(0u64, |acc, p| {
                let start = *acc;
                *acc += p.steps;
                Some(start)
            })
            .collect()
    }

    /// Learning rate at `global_step`. Linear phases interpolate from
    /// `lr_start` at their first step to `lr_end` at their end boundary;
    /// `global_step == total_steps()` is that final boundary and yields the
    /// last phase's `lr_end`.
    pub fn lr_at(&self, global_step: u64) -> Result<f64, ScheduleError> {
        let total = self.total_steps();
        if global_step > total || self.phases.is_empty() {
            return Err(ScheduleError::StepOutOfRange {
                step: global_step,
                total,
            });
        }
        let mut start = 0u64;
        for phase in &self.phases {
            if global_step < start + phase.steps {
                return Ok(phase.lr_at_offset(global_step - start));
            }
            start += phase.steps;
        }
        let last = self.phases.last().expect("nonempty");
        Ok(last.lr_at_offset(last.steps))
    }

    /// `(global_step, lr)` every `stride` steps plus the final boundary.
    pub fn lr_curve(&self, stride: u64) -> Vec<(u64, f64)> {
        let stride = stride.max(1);
        let total = self.total_steps();
        let mut out: Vec<(u64, f64)> = (0..total)
            .step_by(stride as usize)
            .map(|s| (s, self.lr_at(s).expect("in range")))
            .collect();
        out.push((total, self.lr_at(total).expect("in range")));
        out
    }
}

/// Examples consumed by one phase: exactly `steps × batch_size`.
pub fn phase_examples(phase: &SchedulePhase) -> u128 {
    phase.steps as u128 * phase.batch_size as u128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub phase: String,
    pub computed: u128,
    pub printed: Option<u64>,
    pub relative_error: Option<f64>,
    /// Computed and printed counts agree to within the printed unit.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub tolerance: f64,
    pub passed: bool,
    /// Phases whose computed count differs from the printed one at all,
    /// including differences hidden by the printed rounding.
    pub warnings: Vec<String>,
}

/// Compares `steps × batch_size` for every phase against the printed counts.
/// Passes when every relative error is within [`EXAMPLES_TOLERANCE`]; a phase
/// missing from `printed` fails validation.
pub fn validate_against_table(schedule: &Schedule, printed: &HashMap<String, u64>) -> ValidationReport {
    let mut rows = Vec::with_capacity(schedule.phases.len());
    let mut passed = true;
    let mut warnings = Vec::new();
    for phase in &schedule.phases {
        let computed = phase_examples(phase);
        let printed_count = printed.get(&phase.name).copied();
        let (relative_error, exact, residual) = match printed_count {
            Some(p) => {
                let diff = computed.abs_diff(p as u128);
                let rel = if p == 0 {
                    if diff == 0 { 0.0 } else { f64::INFINITY }
                } else {
                    diff as f64 / p as f64
                };
                (Some(rel), diff < PRINTED_UNIT as u128, diff != 0)
            }
            None => (None, false, true),
        };
        match relative_error {
            Some(rel) if rel <= EXAMPLES_TOLERANCE => {}
            _ => passed = false,
        }
        if residual {
            warnings.push(match relative_error {
                Some(rel) => format!(
                    "{}: computed {} vs printed {} ({:.3}% relative error)",
                    phase.name,
                    computed,
                    printed_count.unwrap_or_default(),
                    rel * 100.0
                ),
                None => format!("{}: no printed count", phase.name),
            });
        }
        rows.push(ValidationRow {
            phase: phase.name.clone(),
            computed,
            printed: printed_count,
            relative_error,
            exact,
        });
    }
    ValidationReport {
        rows,
        tolerance: EXAMPLES_TOLERANCE,
        passed,
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongSequenceShare {
    pub by_examples: f64,
    pub by_steps: f64,
}

/// Share of 512-token training, measured by examples and by steps.
pub fn long_sequence_share(schedule: &Schedule) -> LongSequenceShare {
    let (mut long_ex, mut all_ex, mut long_steps, mut all_steps) = (0u128, 0u128, 0u128, 0u128);
    for p in &schedule.phases {
        let ex = phase_examples(p);
        all_ex += ex;
        all_steps += p.steps as u128;
        if p.seq_len == 512 {
            long_ex += ex;
            long_steps += p.steps as u128;
        }
    }
    let ratio = |a: u128, b: u128| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    LongSequenceShare {
        by_examples: ratio(long_ex, all_ex),
        by_steps: ratio(long_steps, all_steps),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub name: String,
    pub start_step: u64,
    pub end_step: u64,
    pub steps: u64,
    pub batch_size: u64,
    pub seq_len: u32,
    pub examples: u128,
    pub lr_start: f64,
    pub lr_end: f64,
    pub lr_shape: LrShape,
}

pub fn phase_rows(schedule: &Schedule) -> Vec<PhaseRow> {
    schedule
        .phases
        .iter()
        .zip(schedule.phase_starts())
        .map(|(p, start)| PhaseRow {
            name: p.name.clone(),
            start_step: start,
            end_step: start + p.steps,
            steps: p.steps,
            batch_size: p.batch_size,
            seq_len: p.seq_len,
            examples: phase_examples(p),
            lr_start: p.lr_start,
            lr_end: p.lr_end,
            lr_shape: p.lr_shape,
        })
        .collect()
}
