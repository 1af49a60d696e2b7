//! Per-iteration run records and their CSV form.
//!
//! One header line, then one comma-separated record per line in the field
//! order of [`TraceRecord`]. Reals are written with 17 significant digits so a
//! trace read back from disk is bitwise equal to the one in memory.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::fmt17;

pub const TRACE_HEADER: &str = "k,i,evals,beta,m_norm,s1,s2,best_f,wall_ms";

/// Why an optimizer run stopped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExitReason {
    /// Momentum norm at or below the threshold after the minimum iterations.
    ThresholdMet,
    /// Smoothing radius reached the target accuracy.
    EpsilonReached,
    BudgetExhausted,
    /// A blackbox evaluation failed or produced a non-finite gradient.
    Aborted(String),
}

impl ExitReason {
    pub fn is_aborted(&self) -> bool {
        matches!(self, ExitReason::Aborted(_))
    }
}

impl fmt::Display for ExitReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitReason::ThresholdMet => f.write_str("threshold-met"),
            ExitReason::EpsilonReached => f.write_str("epsilon-reached"),
            ExitReason::BudgetExhausted => f.write_str("budget-exhausted"),
            ExitReason::Aborted(msg) => write!(f, "aborted: {msg}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    /// Iteration count within the subproblem after this update; 0 marks an initialisation record.
    pub k: u64,
    /// Subproblem index.
    pub i: u64,
    /// Cumulative oracle calls of the whole run.
    pub evals: u64,
    pub beta: f64,
    pub m_norm: f64,
    pub s1: f64,
    pub s2: f64,
    /// Smallest `F` value observed so far.
    pub best_f: f64,
    pub wall_ms: f64,
}

impl TraceRecord {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.k,
            self.i,
            self.evals,
            fmt17(self.beta),
            fmt17(self.m_norm),
            fmt17(self.s1),
            fmt17(self.s2),
            fmt17(self.best_f),
            fmt17(self.wall_ms)
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let err = |message: String| Error::Trace {
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", fields.len())));
        }
        let int = |j: usize| {
            fields[j]
                .parse::<u64>()
                .map_err(|e| err(format!("field {j}: {e}")))
        };
        let real = |j: usize| {
            fields[j]
                .parse::<f64>()
                .map_err(|e| err(format!("field {j}: {e}")))
        };
        Ok(Self {
            k: int(0)?,
            i: int(1)?,
            evals: int(2)?,
            beta: real(3)?,
            m_norm: real(4)?,
            s1: real(5)?,
            s2: real(6)?,
            best_f: real(7)?,
            wall_ms: real(8)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn extend(&mut self, other: RunTrace) {
        self.records.extend(other.records);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", r.to_line())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next().transpose()? {
            Some(header) if header.trim_end() == TRACE_HEADER => {}
            _ => {
                return Err(Error::Trace {
                    line: 1,
                    message: format!("expected header `{TRACE_HEADER}`"),
                })
            }
        }
        let mut records = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(TraceRecord::parse(line.trim_end(), idx + 2)?);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    /// Checks the structural invariants: cumulative evals never decrease, and
    /// within a subproblem `k` increases while `i` never goes backwards.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (idx, w) in self.records.windows(2).enumerate() {
            let (a, b) = (&w[0], &w[1]);
            if b.evals < a.evals {
                return Err(format!("record {}: evals decreased", idx + 1));
            }
            if b.i < a.i {
                return Err(format!("record {}: subproblem index decreased", idx + 1));
            }
            if b.i == a.i && b.k <= a.k {
                return Err(format!(
                    "record {}: k did not increase within subproblem {}",
                    idx + 1,
                    a.i
                ));
            }
        }
        Ok(())
    }
}
