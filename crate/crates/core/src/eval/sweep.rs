//! One-axis hyper-parameter sweeps and per-strategy call-cost tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{csv_field, run_eval, DatasetRecord, EvalConfig, EvalError, EvalReport, GatewayFactory};
use crate::gateway::CallKind;
use crate::kg::TripleStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepAxis {
    /// Search iterations.
    H,
    /// Expansion width cap.
    B,
    /// Weighted paths kept.
    K,
    /// Sub-question count.
    N,
}

impl FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "H" | "h" | "iterations" => Ok(SweepAxis::H),
            "b" | "B" | "width" => Ok(SweepAxis::B),
            "K" | "k" | "top_k" => Ok(SweepAxis::K),
            "n" | "N" | "subquestions" => Ok(SweepAxis::N),
            other => Err(format!("unknown sweep axis {other:?} (expected H, b, K or n)")),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::H => "H",
            SweepAxis::B => "b",
            SweepAxis::K => "K",
            SweepAxis::N => "n",
        })
    }
}

impl SweepAxis {
    pub fn apply(self, config: &mut EvalConfig, value: usize) {
        let s = &mut config.search;
        match self {
            SweepAxis::H => s.iterations = value,
            SweepAxis::B => s.width_cap = value,
            SweepAxis::K => s.top_k = value,
            SweepAxis::N => s.n_subquestions = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: usize,
    pub report: EvalReport,
}

/// One evaluation per value with everything else held fixed.
pub fn sweep(
    dataset: &[DatasetRecord],
    store: &TripleStore,
    gateways: &GatewayFactory<'_>,
    base: &EvalConfig,
    axis: SweepAxis,
    values: &[usize],
) -> Result<Vec<SweepPoint>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Invalid("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&value| {
            let mut config = base.clone();
            axis.apply(&mut config, value);
            let report = run_eval(dataset, store, gateways, &config)?;
            Ok(SweepPoint { axis, value, report })
        })
        .collect()
}

/// `axis_value,em,mean_calls,total_calls` rows.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("axis_value,em,mean_calls,total_calls\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.value,
            p.report.em,
            p.report.mean_calls,
            p.report.ledger.total()
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub strategy: String,
    pub questions: usize,
    pub em: f64,
    /// Mean calls per question, indexed like [`CallKind::ALL`].
    pub mean_by_kind: [f64; 6],
    pub mean_total: f64,
    pub max_total: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub rows: Vec<CostRow>,
}

/// Mean and max per-question calls for each report.
pub fn cost_report(reports: &[EvalReport]) -> CostTable {
    let rows = reports
        .iter()
        .map(|r| {
            let n = r.questions.max(1) as f64;
            let mut mean_by_kind = [0.0; 6];
            for kind in CallKind::ALL {
                mean_by_kind[kind.index()] = r.ledger.get(kind) as f64 / n;
            }
            CostRow {
                strategy: r.strategy.to_string(),
                questions: r.questions,
                em: r.em,
                mean_by_kind,
                mean_total: r.ledger.total() as f64 / n,
                max_total: r.max_calls,
            }
        })
        .collect();
    CostTable { rows }
}

impl CostTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,questions,em");
        for kind in CallKind::ALL {
            out.push_str(&format!(",mean_{}", kind.as_str()));
        }
        out.push_str(",mean_total,max_total\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", csv_field(&r.strategy), r.questions, r.em));
            for m in r.mean_by_kind {
                out.push_str(&format!(",{m}"));
            }
            out.push_str(&format!(",{},{}\n", r.mean_total, r.max_total));
        }
        out
    }
}

impl fmt::Display for CostTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<10} {:>5} {:>6}", "strategy", "qs", "EM")?;
        for kind in CallKind::ALL {
            write!(f, " {:>9}", kind.as_str().chars().take(9).collect::<String>())?;
        }
        writeln!(f, " {:>9} {:>6}", "mean", "max")?;
        for r in &self.rows {
            write!(f, "{:<10} {:>5} {:>6.3}", r.strategy, r.questions, r.em)?;
            for m in r.mean_by_kind {
                write!(f, " {m:>9.2}")?;
            }
            writeln!(f, " {:>9.2} {:>6}", r.mean_total, r.max_total)?;
        }
        Ok(())
    }
}
