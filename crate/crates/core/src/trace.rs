//! Per-round metric records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CSV_HEADER: &str = "round,agent,error,consensus_tv,kl_ref";

/// One agent's metrics after a round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub agent: usize,
    /// Localization error `‖μ_i − x_i‖` or mapping L¹ error.
    pub error: f64,
    /// Largest TV gap between agents' shared marginals, on cadence rounds.
    pub consensus_tv: Option<f64>,
    /// KL from a reference posterior, when one is tracked.
    pub kl_ref: Option<f64>,
}

/// Metrics before the first round plus one block of rows per round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub initial: Vec<TraceRow>,
    pub rows: Vec<TraceRow>,
}

impl RoundTrace {
    pub fn rounds(&self) -> usize {
        self.rows.last().map_or(0, |r| r.round)
    }

    pub fn rows_at(&self, round: usize) -> impl Iterator<Item = &TraceRow> {
        let src = if round == 0 { &self.initial } else { &self.rows };
        src.iter().filter(move |r| r.round == round)
    }

    /// `1/n Σ_i error_i` at a round (round 0 reads the initial metrics).
    pub fn mean_error(&self, round: usize) -> Option<f64> {
        let (s, n) = self.rows_at(round).fold((0.0, 0usize), |(s, n), r| (s + r.error, n + 1));
        (n > 0).then(|| s / n as f64)
    }

    /// Network-average error for each round `1..=T`.
    pub fn mean_error_series(&self) -> Vec<f64> {
        (1..=self.rounds()).filter_map(|t| self.mean_error(t)).collect()
    }

    /// First round at which the network-average error falls to `fraction` of its round-1 value.
    pub fn rounds_to_fraction(&self, fraction: f64) -> Option<usize> {
        let first = self.mean_error(1)?;
        (1..=self.rounds()).find(|&t| self.mean_error(t).is_some_and(|e| e <= fraction * first))
    }

    /// Writes rounds `1..=T` as CSV.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER.split(','))?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: usize, agent: usize, error: f64) -> TraceRow {
        TraceRow { round, agent, error, consensus_tv: None, kl_ref: Some(0.25) }
    }

    #[test]
    fn csv_layout() {
        let t = RoundTrace { initial: vec![row(0, 0, 9.0)], rows: vec![row(1, 0, 1.5), row(1, 1, 0.5)] };
        let s = t.to_csv_string();
        assert_eq!(s, "round,agent,error,consensus_tv,kl_ref\n1,0,1.5,,0.25\n1,1,0.5,,0.25\n");
        assert_eq!(t.mean_error(1), Some(1.0));
        assert_eq!(t.mean_error(0), Some(9.0));
        assert_eq!(RoundTrace::default().to_csv_string(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn fraction_search() {
        let rows = (1..=4).map(|t| row(t, 0, 1.0 / t as f64)).collect();
        let t = RoundTrace { initial: vec![], rows };
        assert_eq!(t.rounds_to_fraction(0.3), Some(4));
        assert_eq!(t.rounds_to_fraction(0.1), None);
    }
}
