//! CSV emitters for traces, sweep summaries, epoch metrics, and gradient
//! checks (RFC 4180 via the `csv` crate). Floats use shortest round-trip
//! formatting, so outputs are byte-deterministic.

use std::path::Path;

use lpo_core::dynamics::{SweepRow, TrajectoryTrace};
use lpo_core::gradcheck::PointReport;
use lpo_core::losses::{LossKind, LossParams};
use lpo_core::trainer::EpochMetrics;

use crate::{CliError, Result};

fn to_csv<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    fill(&mut writer).map_err(|e| CliError::runtime(format!("csv write failed: {e}")))?;
    writer
        .into_inner()
        .map_err(|e| CliError::runtime(format!("csv flush failed: {e}")))
}

/// `step,x1,x2,loss`
pub fn trace_csv(trace: &TrajectoryTrace) -> Result<Vec<u8>> {
    to_csv(|w| {
        w.write_record(["step", "x1", "x2", "loss"])?;
        for p in &trace.points {
            w.write_record(&[
                p.step.to_string(),
                p.x1.to_string(),
                p.x2.to_string(),
                p.loss.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_trace(path: &Path, trace: &TrajectoryTrace) -> Result<()> {
    std::fs::write(path, trace_csv(trace)?)?;
    Ok(())
}

/// `r2,terminal_x1,terminal_x2,slope_x1,slope_x2`
pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    to_csv(|w| {
        w.write_record(["r2", "terminal_x1", "terminal_x2", "slope_x1", "slope_x2"])?;
        for r in rows {
            w.write_record(&[
                r.r2.to_string(),
                r.terminal_x1.to_string(),
                r.terminal_x2.to_string(),
                r.slope_x1.to_string(),
                r.slope_x2.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::write(path, sweep_csv(rows)?)?;
    Ok(())
}

/// `epoch,mean_x1,mean_x2,mean_loss,pref_accuracy,chosen_logprob_delta`
pub fn metrics_csv(metrics: &[EpochMetrics]) -> Result<Vec<u8>> {
    to_csv(|w| {
        w.write_record([
            "epoch",
            "mean_x1",
            "mean_x2",
            "mean_loss",
            "pref_accuracy",
            "chosen_logprob_delta",
        ])?;
        for m in metrics {
            w.write_record(&[
                m.epoch.to_string(),
                m.mean_x1.to_string(),
                m.mean_x2.to_string(),
                m.mean_loss.to_string(),
                m.pref_accuracy.to_string(),
                m.chosen_logprob_delta.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(metrics)?)?;
    Ok(())
}

/// Parses a metrics CSV back into rows (used by `report`).
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| CliError::runtime(format!("bad metrics row: {e}")))?;
        let field = |i: usize| -> Result<f64> {
            r.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::runtime(format!("bad metrics field {i}")))
        };
        out.push(EpochMetrics {
            epoch: field(0)? as usize,
            mean_x1: field(1)?,
            mean_x2: field(2)?,
            mean_loss: field(3)?,
            pref_accuracy: field(4)?,
            chosen_logprob_delta: field(5)?,
        });
    }
    Ok(out)
}

/// Parses a sweep summary CSV back into rows (used by `report`).
pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| CliError::runtime(format!("bad sweep row: {e}")))?;
        let field = |i: usize| -> Result<f64> {
            r.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::runtime(format!("bad sweep field {i}")))
        };
        out.push(SweepRow {
            r2: field(0)?,
            terminal_x1: field(1)?,
            terminal_x2: field(2)?,
            slope_x1: field(3)?,
            slope_x2: field(4)?,
        });
    }
    Ok(out)
}

/// `loss,beta,lambda,r1,r2,x1,x2,var,analytic,numeric,abs_err,rel_err,pass`
pub fn gradcheck_csv(
    loss: LossKind,
    params: &LossParams,
    reports: &[PointReport],
) -> Result<Vec<u8>> {
    to_csv(|w| {
        w.write_record([
            "loss", "beta", "lambda", "r1", "r2", "x1", "x2", "var", "analytic", "numeric",
            "abs_err", "rel_err", "pass",
        ])?;
        for rep in reports {
            for (var, g) in [("x1", &rep.x1), ("x2", &rep.x2)] {
                w.write_record(&[
                    loss.name().to_string(),
                    params.beta.to_string(),
                    params.lambda.to_string(),
                    params.r1.to_string(),
                    params.r2.to_string(),
                    rep.point.x1.to_string(),
                    rep.point.x2.to_string(),
                    var.to_string(),
                    g.analytic.to_string(),
                    g.numeric.to_string(),
                    g.abs_err.to_string(),
                    g.rel_err.to_string(),
                    rep.pass.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lpo_core::dynamics::{simulate, SimConfig};

    #[test]
    fn trace_csv_schema_and_determinism() {
        let trace = simulate(&SimConfig::default()).unwrap();
        let a = trace_csv(&trace).unwrap();
        let b = trace_csv(&trace).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("step,x1,x2,loss\n"));
        assert_eq!(text.lines().count(), trace.points.len() + 1);
    }

    #[test]
    fn metrics_roundtrip() {
        let rows = vec![EpochMetrics {
            epoch: 1,
            mean_x1: 0.125,
            mean_x2: -0.25,
            mean_loss: 1.5,
            pref_accuracy: 0.9,
            chosen_logprob_delta: -0.01,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics(&path, &rows).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].epoch, 1);
        assert_eq!(back[0].mean_x2, -0.25);
    }
}
