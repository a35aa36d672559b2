//! Append-only metrics table shared by every experiment.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::Result;

pub const METRICS_HEADER: &str = "experiment,iter,loss,nfe_f,nfe_b,rmse,elapsed_ms";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub loss: Option<f64>,
    pub nfe_f: Option<usize>,
    pub nfe_b: Option<usize>,
    pub rmse: Option<f64>,
}

impl MetricsRow {
    pub fn new(iter: usize) -> Self {
        MetricsRow {
            iter,
            ..Default::default()
        }
    }

    pub fn loss(mut self, v: f64) -> Self {
        self.loss = Some(v);
        self
    }

    pub fn nfe(mut self, forward: usize, backward: usize) -> Self {
        self.nfe_f = Some(forward);
        self.nfe_b = Some(backward);
        self
    }

    pub fn rmse(mut self, v: f64) -> Self {
        self.rmse = Some(v);
        self
    }
}

#[derive(Debug)]
pub struct Metrics {
    experiment: String,
    rows: Vec<(String, MetricsRow, Option<u128>)>,
    started: Option<Instant>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Metrics {
    /// With `timing` off the elapsed column stays empty, keeping same-seed
    /// runs byte-identical.
    pub fn new(experiment: &str, timing: bool) -> Self {
        Metrics {
            experiment: experiment.to_string(),
            rows: Vec::new(),
            started: timing.then(Instant::now),
        }
    }

    pub fn push(&mut self, row: MetricsRow) {
        let name = self.experiment.clone();
        self.push_named(name, row);
    }

    /// Row of a sub-run, labelled `experiment:tag`.
    pub fn push_tagged(&mut self, tag: &str, row: MetricsRow) {
        let name = format!("{}:{tag}", self.experiment);
        self.push_named(name, row);
    }

    fn push_named(&mut self, name: String, row: MetricsRow) {
        let elapsed = self.started.map(|s| s.elapsed().as_millis());
        self.rows.push((name, row, elapsed));
    }

    pub fn rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().map(|(_, r, _)| r)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for (name, r, ms) in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                name,
                r.iter,
                opt(r.loss),
                opt(r.nfe_f),
                opt(r.nfe_b),
                opt(r.rmse),
                opt(*ms)
            );
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_fields_keep_every_column() {
        let mut m = Metrics::new("cnf", false);
        m.push(MetricsRow::new(0).loss(1.5));
        m.push_tagged("M=8", MetricsRow::new(1).nfe(20, 41).rmse(0.25));
        assert_eq!(m.to_csv(), format!("{METRICS_HEADER}\ncnf,0,1.5,,,,\ncnf:M=8,1,,20,41,0.25,\n"));
    }

    #[test]
    fn timing_fills_elapsed() {
        let mut m = Metrics::new("x", true);
        m.push(MetricsRow::new(0));
        let line = m.to_csv().lines().nth(1).unwrap().to_string();
        assert!(!line.ends_with(','), "{line}");
    }
}
