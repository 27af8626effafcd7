use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "step,episodes,mean_return,loss_total,loss_pi_or_td,loss_v,entropy,alpha_max_dev";

/// One training-iteration summary. `mean_return` is NaN until an episode finishes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episodes: u64,
    pub mean_return: f64,
    pub loss_total: f64,
    /// Negated clip objective for PPO, TD loss for DQN.
    pub loss_pi_or_td: f64,
    pub loss_v: f64,
    pub entropy: f64,
    pub alpha_max_dev: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.episodes,
            self.mean_return,
            self.loss_total,
            self.loss_pi_or_td,
            self.loss_v,
            self.entropy,
            self.alpha_max_dev
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("expected header {METRICS_HEADER}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |column: usize, message: String| Error::Parse {
            line: i + 1,
            column,
            message,
        };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(bad(1, format!("expected 8 fields, found {}", cells.len())));
        }
        let int = |j: usize| {
            cells[j]
                .trim()
                .parse::<u64>()
                .map_err(|e| bad(j + 1, e.to_string()))
        };
        let float = |j: usize| {
            cells[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(j + 1, e.to_string()))
        };
        rows.push(MetricsRow {
            step: int(0)?,
            episodes: int(1)?,
            mean_return: float(2)?,
            loss_total: float(3)?,
            loss_pi_or_td: float(4)?,
            loss_v: float(5)?,
            entropy: float(6)?,
            alpha_max_dev: float(7)?,
        });
    }
    Ok(rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

/// Running means of loss terms over the minibatches of one iteration.
#[derive(Default)]
pub(crate) struct LossAccum {
    n: usize,
    total: f64,
    main: f64,
    value: f64,
    entropy: f64,
}

impl LossAccum {
    pub(crate) fn add(&mut self, total: f64, main: f64, value: f64, entropy: f64) {
        self.n += 1;
        self.total += total;
        self.main += main;
        self.value += value;
        self.entropy += entropy;
    }

    /// Fills the loss columns of `row`; zeros when nothing was accumulated.
    pub(crate) fn fill(&self, row: &mut MetricsRow) {
        let n = self.n.max(1) as f64;
        row.loss_total = self.total / n;
        row.loss_pi_or_td = self.main / n;
        row.loss_v = self.value / n;
        row.entropy = self.entropy / n;
    }
}
