//! Markdown report rendering: joins the metrics of one or more training
//! runs into per-epoch comparison tables, and renders sweep summaries.

use std::path::Path;

use lpo_core::dynamics::SweepRow;
use lpo_core::trainer::EpochMetrics;

use crate::{csvio, CliError, Result};

/// One run's loaded artifacts.
pub struct RunData {
    pub name: String,
    pub metrics: Vec<EpochMetrics>,
    pub sweep: Option<Vec<SweepRow>>,
}

/// Loads `metrics.csv` / `summary.csv` from a run directory.
pub fn load_run(dir: &Path) -> Result<RunData> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let metrics_path = dir.join("metrics.csv");
    let sweep_path = dir.join("summary.csv");
    if !metrics_path.exists() && !sweep_path.exists() {
        return Err(CliError::usage(format!(
            "run directory {} has neither metrics.csv nor summary.csv",
            dir.display()
        )));
    }
    let metrics = if metrics_path.exists() {
        csvio::read_metrics(&metrics_path)?
    } else {
        Vec::new()
    };
    let sweep = if sweep_path.exists() {
        Some(csvio::read_sweep(&sweep_path)?)
    } else {
        None
    };
    Ok(RunData {
        name,
        metrics,
        sweep,
    })
}

/// Renders the comparison report.
pub fn render(runs: &[RunData]) -> String {
    let mut out = String::new();
    out.push_str("# Run comparison\n");

    let with_metrics: Vec<&RunData> = runs.iter().filter(|r| !r.metrics.is_empty()).collect();
    if !with_metrics.is_empty() {
        render_epoch_table(
            &mut out,
            "Preference accuracy by epoch",
            &with_metrics,
            |m| m.pref_accuracy,
        );
        render_epoch_table(
            &mut out,
            "Mean chosen margin x1 by epoch",
            &with_metrics,
            |m| m.mean_x1,
        );
        render_epoch_table(
            &mut out,
            "Mean rejected margin x2 by epoch",
            &with_metrics,
            |m| m.mean_x2,
        );
        render_epoch_table(
            &mut out,
            "Chosen log-prob drift by epoch",
            &with_metrics,
            |m| m.chosen_logprob_delta,
        );
        render_epoch_table(&mut out, "Mean loss by epoch", &with_metrics, |m| {
            m.mean_loss
        });
    }

    for run in runs {
        if let Some(sweep) = &run.sweep {
            out.push_str(&format!("\n## r2 sweep: {}\n\n", run.name));
            out.push_str("| r2 | terminal x1 | terminal x2 | slope x1 | slope x2 |\n");
            out.push_str("|---:|---:|---:|---:|---:|\n");
            for row in sweep {
                out.push_str(&format!(
                    "| {} | {:.6} | {:.6} | {:.6} | {:.6} |\n",
                    row.r2, row.terminal_x1, row.terminal_x2, row.slope_x1, row.slope_x2
                ));
            }
        }
    }
    out
}

fn render_epoch_table(
    out: &mut String,
    title: &str,
    runs: &[&RunData],
    metric: impl Fn(&EpochMetrics) -> f64,
) {
    out.push_str(&format!("\n## {title}\n\n"));
    out.push_str("| epoch |");
    for run in runs {
        out.push_str(&format!(" {} |", run.name));
    }
    out.push('\n');
    out.push_str("|---:|");
    for _ in runs {
        out.push_str("---:|");
    }
    out.push('\n');

    let max_epoch = runs
        .iter()
        .flat_map(|r| r.metrics.iter().map(|m| m.epoch))
        .max()
        .unwrap_or(0);
    for epoch in 0..=max_epoch {
        out.push_str(&format!("| {epoch} |"));
        for run in runs {
            match run.metrics.iter().find(|m| m.epoch == epoch) {
                Some(m) => out.push_str(&format!(" {:.6} |", metric(m))),
                None => out.push_str(" — |"),
            }
        }
        out.push('\n');
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(epochs: usize) -> Vec<EpochMetrics> {
        (0..=epochs)
            .map(|epoch| EpochMetrics {
                epoch,
                mean_x1: epoch as f64 * 0.1,
                mean_x2: -(epoch as f64) * 0.2,
                mean_loss: 1.0 / (epoch + 1) as f64,
                pref_accuracy: 0.5 + epoch as f64 * 0.1,
                chosen_logprob_delta: 0.0,
            })
            .collect()
    }

    #[test]
    fn renders_side_by_side_tables() {
        let runs = vec![
            RunData {
                name: "dpo".into(),
                metrics: metrics(3),
                sweep: None,
            },
            RunData {
                name: "lpo".into(),
                metrics: metrics(3),
                sweep: None,
            },
        ];
        let text = render(&runs);
        assert!(text.contains("| epoch | dpo | lpo |"));
        assert!(text.contains("Preference accuracy by epoch"));
    }

    #[test]
    fn renders_sweep_tables() {
        let runs = vec![RunData {
            name: "sweep".into(),
            metrics: Vec::new(),
            sweep: Some(vec![SweepRow {
                r2: 0.4,
                terminal_x1: 0.5,
                terminal_x2: -0.25,
                slope_x1: 0.01,
                slope_x2: -0.02,
            }]),
        }];
        let text = render(&runs);
        assert!(text.contains("## r2 sweep: sweep"));
        assert!(text.contains("| 0.4 |"));
    }
}
