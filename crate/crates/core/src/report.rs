//! Delimited report files and the model-by-variant metric matrix.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use feh_nn::ModelKind;

use crate::cv::{MetricsReport, Prediction, Summary};
use crate::grid::GridResult;
use crate::preprocess::Variant;

pub const PHASES: [&str; 2] = ["training", "validation"];
/// Row order of the matrix within each variant block.
pub const MATRIX_METRICS: [&str; 5] = ["r2", "wrmse", "wmae", "rmse", "mae"];

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn phase_summaries(r: &MetricsReport) -> [(&'static str, &crate::cv::MetricSummary); 2] {
    [("training", &r.train), ("validation", &r.validation)]
}

/// One row per model, variant, phase and metric.
pub fn metrics_table(reports: &[MetricsReport]) -> Vec<u8> {
    let mut rows = Vec::new();
    for r in reports {
        for (phase, s) in phase_summaries(r) {
            for (metric, v) in s.entries() {
                rows.push(vec![
                    r.model.to_string(),
                    r.variant.to_string(),
                    phase.to_string(),
                    metric.to_string(),
                    num(v.mean),
                    num(v.std),
                ]);
            }
        }
    }
    csv_bytes(&["model", "variant", "phase", "metric", "mean", "std"], rows)
}

/// Per-fold metrics, one row per fold and phase.
pub fn fold_table(report: &MetricsReport) -> Vec<u8> {
    let mut rows = Vec::new();
    for f in &report.folds {
        for (phase, m) in [("training", f.train), ("validation", f.validation)] {
            let mut row = vec![f.repeat.to_string(), f.fold.to_string(), phase.to_string()];
            row.extend(m.values().iter().map(|v| num(*v)));
            row.push(f.epochs_run.to_string());
            row.push(f.best_epoch.to_string());
            rows.push(row);
        }
    }
    csv_bytes(
        &["repeat", "fold", "phase", "r2", "rmse", "mae", "wrmse", "wmae", "epochs_run", "best_epoch"],
        rows,
    )
}

/// Per-epoch training and validation loss of every fold.
pub fn loss_curves(report: &MetricsReport) -> Vec<u8> {
    let mut rows = Vec::new();
    for f in &report.folds {
        for (e, (t, v)) in f.curve.train.iter().zip(&f.curve.validation).enumerate() {
            rows.push(vec![f.repeat.to_string(), f.fold.to_string(), e.to_string(), num(*t), num(*v)]);
        }
    }
    csv_bytes(&["repeat", "fold", "epoch", "train_loss", "validation_loss"], rows)
}

pub fn predictions_table(preds: &[Prediction]) -> Vec<u8> {
    let rows = preds.iter().map(|p| {
        vec![
            p.source_id.to_string(),
            num(p.predicted),
            p.truth.map(num).unwrap_or_default(),
        ]
    });
    csv_bytes(&["source_id", "predicted_feh", "true_feh"], rows)
}

pub fn grid_table(result: &GridResult) -> Vec<u8> {
    let mut rows = Vec::new();
    for r in &result.ranked {
        let v = &r.report.validation;
        rows.push(vec![
            r.rank.to_string(),
            num(r.cell.dropout),
            num(r.cell.learning_rate),
            r.cell.batch_size.to_string(),
            num(v.wrmse.mean),
            num(v.wrmse.std),
            num(v.mae.mean),
            num(v.r2.mean),
            String::new(),
        ]);
    }
    for f in &result.failed {
        rows.push(vec![
            String::new(),
            num(f.cell.dropout),
            num(f.cell.learning_rate),
            f.cell.batch_size.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            f.error.clone(),
        ]);
    }
    csv_bytes(
        &[
            "rank",
            "dropout",
            "learning_rate",
            "batch_size",
            "val_wrmse_mean",
            "val_wrmse_std",
            "val_mae_mean",
            "val_r2_mean",
            "error",
        ],
        rows,
    )
}

/// Metric summaries keyed by variant, metric, model and phase. Blocks are
/// variants, rows are metrics, columns are model and phase pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricMatrix {
    cells: BTreeMap<(u8, usize, usize, usize), Summary>,
}

fn model_index(m: ModelKind) -> usize {
    ModelKind::ALL.iter().position(|k| *k == m).expect("kind listed in ALL")
}

impl MetricMatrix {
    pub fn from_reports(reports: &[MetricsReport]) -> Self {
        let mut cells = BTreeMap::new();
        for r in reports {
            for (p, (_, s)) in phase_summaries(r).into_iter().enumerate() {
                let entries = s.entries();
                for (mi, name) in MATRIX_METRICS.iter().enumerate() {
                    let v = entries.iter().find(|e| e.0 == *name).expect("known metric").1;
                    cells.insert((r.variant.code(), mi, model_index(r.model), p), v);
                }
            }
        }
        Self { cells }
    }

    pub fn get(&self, variant: Variant, metric: &str, model: ModelKind, phase: &str) -> Option<Summary> {
        let mi = MATRIX_METRICS.iter().position(|m| *m == metric)?;
        let p = PHASES.iter().position(|x| *x == phase)?;
        self.cells.get(&(variant.code(), mi, model_index(model), p)).copied()
    }

    /// Rows and columns of the full layout: 3 variants x 5 metrics by
    /// 9 models x 2 phases.
    pub fn shape() -> (usize, usize) {
        (Variant::ALL.len() * MATRIX_METRICS.len(), ModelKind::ALL.len() * PHASES.len())
    }

    pub fn missing(&self) -> Vec<String> {
        let mut out = Vec::new();
        for v in Variant::ALL {
            for m in MATRIX_METRICS {
                for k in ModelKind::ALL {
                    for p in PHASES {
                        if self.get(v, m, k, p).is_none() {
                            out.push(format!("{v}/{m}/{k}/{p}"));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.missing().is_empty()
    }

    /// Wide table: `variant, metric`, then one `model/phase` column per
    /// pair holding `mean ± std`. Absent cells are left empty.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut header = vec!["variant".to_string(), "metric".to_string()];
        for k in ModelKind::ALL {
            for p in PHASES {
                header.push(format!("{k}/{p}"));
            }
        }
        let mut rows = Vec::new();
        for v in Variant::ALL {
            for m in MATRIX_METRICS {
                let mut row = vec![v.to_string(), m.to_string()];
                for k in ModelKind::ALL {
                    for p in PHASES {
                        row.push(
                            self.get(v, m, k, p)
                                .map(|s| format!("{:.4} ± {:.4}", s.mean, s.std))
                                .unwrap_or_default(),
                        );
                    }
                }
                rows.push(row);
            }
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        csv_bytes(&header, rows)
    }
}

/// Short plain-text digest of a report.
pub fn summary_text(report: &MetricsReport) -> String {
    let mut s = format!(
        "model {} variant {} folds {}\n",
        report.model,
        report.variant,
        report.folds.len()
    );
    for (phase, m) in phase_summaries(report) {
        s.push_str(&format!("{phase:>10}:"));
        for (name, v) in m.entries() {
            s.push_str(&format!("  {name} {:.4} ± {:.4}", v.mean, v.std));
        }
        s.push('\n');
    }
    s
}
