//! Command implementations and the output directory layout:
//!
//! ```text
//! <output>/config.snapshot   resolved configuration (TOML)
//! <output>/manifest.json     files written, with their sha256
//! <output>/data/             catalogs, dataset containers, weights
//! <output>/reports/          metric tables and rejection report
//! <output>/snapshots/        trained models and their specs
//! <output>/plots/            loss curves and prediction pairs
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use feh_core::catalog::{
    apply_selection, delimiter_for, join_photometry, load_catalog, load_photometry, split_train_validation,
    write_rejections, LightCurve, Rejection, StarRecord,
};
use feh_core::cv::{cross_validate, predict, FoldReport, MetricSummary, MetricsReport, Prediction};
use feh_core::dataset::{write_weights, Dataset, Manifest};
use feh_core::grid::grid_search;
use feh_core::metrics::metric_suite;
use feh_core::preprocess::{build_dataset, PreprocessConfig, StarFailure, Variant};
use feh_core::report::{self, atomic_write, MetricMatrix};
use feh_core::train::{predict_indices, train};
use feh_core::weighting::{compute_weights, fit_density};
use feh_nn::{ModelKind, ModelSpec, Snapshot};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

type Pairs = Vec<(StarRecord, LightCurve)>;

struct Ingested {
    train: Pairs,
    validation: Pairs,
    rejected: Vec<Rejection>,
    accepted: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct FileEntry {
    sha256: String,
    bytes: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RunManifest {
    tool_version: String,
    last_command: String,
    config_sha256: String,
    files: BTreeMap<String, FileEntry>,
}

/// Settings that determine a dataset container's contents.
#[derive(Serialize)]
struct DataKey<'a> {
    variant: Variant,
    catalog: &'a Option<PathBuf>,
    photometry: &'a Option<PathBuf>,
    columns: &'a feh_core::catalog::ColumnMap,
    selection: &'a feh_core::catalog::SelectionCriteria,
    split: &'a feh_core::catalog::SplitSpec,
    preprocess: &'a PreprocessConfig,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn lower(kind: ModelKind) -> String {
    kind.as_str().to_ascii_lowercase()
}

pub struct Run {
    cfg: RunConfig,
    out: PathBuf,
    written: BTreeMap<String, FileEntry>,
    ingested: Option<Ingested>,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Self {
        let out = cfg.output().to_path_buf();
        Self {
            cfg,
            out,
            written: BTreeMap::new(),
            ingested: None,
        }
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out.join(rel);
        atomic_write(&path, bytes).map_err(CliError::io(&path))?;
        self.written.insert(
            rel.to_string(),
            FileEntry {
                sha256: sha_hex(bytes),
                bytes: bytes.len(),
            },
        );
        Ok(path)
    }

    /// Writes the config snapshot and merges this command's files into the manifest.
    pub fn finish(mut self, command: &str) -> Result<(), CliError> {
        let snapshot = self.cfg.to_toml();
        self.write("config.snapshot", snapshot.as_bytes())?;
        let path = self.out.join("manifest.json");
        let mut manifest: RunManifest = std::fs::read(&path)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.last_command = command.to_string();
        manifest.config_sha256 = sha_hex(snapshot.as_bytes());
        manifest.files.extend(std::mem::take(&mut self.written));
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        atomic_write(&path, &json).map_err(CliError::io(&path))
    }

    fn ingest(&mut self) -> Result<&Ingested, CliError> {
        if self.ingested.is_none() {
            let cfg = &self.cfg;
            let cat = cfg.input_path(&cfg.paths.catalog, "catalog")?;
            let phot = cfg.input_path(&cfg.paths.photometry, "photometry")?;
            let records = load_catalog(&cat, delimiter_for(&cat), &cfg.columns)?;
            let (accepted, rejected) = apply_selection(&records, &cfg.selection);
            let (train, validation) = if accepted.len() >= 2 {
                split_train_validation(&accepted, &cfg.split)?
            } else {
                (accepted.clone(), Vec::new())
            };
            let photometry = load_photometry(&phot, delimiter_for(&phot))?;
            self.ingested = Some(Ingested {
                train: join_photometry(&train, &photometry)?,
                validation: join_photometry(&validation, &photometry)?,
                rejected,
                accepted: accepted.len(),
            });
        }
        Ok(self.ingested.as_ref().expect("just filled"))
    }

    pub fn cmd_ingest(&mut self) -> Result<(), CliError> {
        self.ingest()?;
        let ing = self.ingested.take().expect("ingested");
        let mut rej = Vec::new();
        write_rejections(&mut rej, &ing.rejected).map_err(|e| CliError::Io {
            path: "reports/rejections.csv".into(),
            source: e.into(),
        })?;
        self.write("reports/rejections.csv", &rej)?;
        for (name, pairs) in [("train", &ing.train), ("validation", &ing.validation)] {
            let mut w = csv::Writer::from_writer(Vec::new());
            for (r, _) in pairs.iter() {
                w.serialize(r).expect("in-memory write");
            }
            let bytes = w.into_inner().expect("in-memory flush");
            self.write(&format!("data/{name}_catalog.csv"), &bytes)?;
        }
        println!("accepted {}", ing.accepted);
        println!("rejected {}", ing.rejected.len());
        println!("train {}", ing.train.len());
        println!("validation {}", ing.validation.len());
        self.ingested = Some(ing);
        Ok(())
    }

    fn data_hash(&self, variant: Variant) -> String {
        let c = &self.cfg;
        let key = DataKey {
            variant,
            catalog: &c.paths.catalog,
            photometry: &c.paths.photometry,
            columns: &c.columns,
            selection: &c.selection,
            split: &c.split,
            preprocess: &c.preprocess,
        };
        let value = serde_json::to_value(&key).expect("key serializes");
        sha_hex(&serde_json::to_vec(&value).expect("json value serializes"))
    }

    fn container_paths(&self, variant: Variant, side: &str) -> (String, String) {
        (format!("data/{variant}_{side}.fehds"), format!("data/{variant}_{side}.manifest.json"))
    }

    /// Loads the variant's containers when their manifests match the current
    /// settings.
    fn load_cached(&self, variant: Variant) -> Result<Option<(Dataset, Dataset)>, CliError> {
        let hash = self.data_hash(variant);
        let mut out = Vec::new();
        for side in ["train", "validation"] {
            let (data, man) = self.container_paths(variant, side);
            let (data, man) = (self.out.join(data), self.out.join(man));
            let Ok(text) = std::fs::read(&man) else {
                return Ok(None);
            };
            let Ok(manifest) = serde_json::from_slice::<Manifest>(&text) else {
                return Ok(None);
            };
            if manifest.config_hash != hash || !data.exists() {
                return Ok(None);
            }
            let bytes = std::fs::read(&data).map_err(CliError::io(&data))?;
            if sha_hex(&bytes) != manifest.content_sha256 {
                return Err(CliError::Integrity(format!(
                    "{} does not match the checksum in its manifest",
                    data.display()
                )));
            }
            out.push(Dataset::read_from(bytes.as_slice())?);
        }
        let validation = out.pop().expect("two sides");
        let train = out.pop().expect("two sides");
        Ok(Some((train, validation)))
    }

    fn build_variant(&mut self, variant: Variant) -> Result<(Dataset, Dataset), CliError> {
        let hash = self.data_hash(variant);
        let mut pre = self.cfg.preprocess.clone();
        let ing = self.ingest()?;
        if pre.raw_length.is_none() {
            let longest = ing.train.iter().chain(&ing.validation).map(|(_, c)| c.points.len()).max();
            pre.raw_length = Some(longest.unwrap_or(0));
        }
        let (train, f_train) = build_dataset(&ing.train, variant, &pre);
        let (validation, f_val) = build_dataset(&ing.validation, variant, &pre);
        let failures: Vec<StarFailure> = f_train.into_iter().chain(f_val).collect();
        let key = serde_json::json!({ "hash": hash });
        for (side, ds, n_fail) in [("train", &train, 0), ("validation", &validation, failures.len())] {
            let bytes = ds.to_bytes()?;
            let mut manifest = Manifest::describe(ds, n_fail, &key)?;
            manifest.config_hash = hash.clone();
            let (data, man) = self.container_paths(variant, side);
            self.write(&data, &bytes)?;
            self.write(&man, &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
        }
        if !failures.is_empty() {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["source_id", "reason"]).expect("in-memory write");
            for f in &failures {
                w.write_record([f.source_id.to_string(), f.reason.clone()]).expect("in-memory write");
            }
            self.write(&format!("reports/{variant}_failures.csv"), &w.into_inner().expect("in-memory flush"))?;
        }
        println!(
            "{variant}: train {} validation {} length {} failed {}",
            train.len(),
            validation.len(),
            train.length,
            failures.len()
        );
        Ok((train, validation))
    }

    fn datasets(&mut self, variant: Variant) -> Result<(Dataset, Dataset), CliError> {
        match self.load_cached(variant)? {
            Some(d) => Ok(d),
            None => self.build_variant(variant),
        }
    }

    pub fn cmd_preprocess(&mut self) -> Result<(), CliError> {
        for v in self.cfg.variants()? {
            self.build_variant(v)?;
        }
        Ok(())
    }

    /// Inverse-density weights fitted on the training targets, applied to both sides.
    fn weights(&mut self, variant: Variant, train: &Dataset, validation: &Dataset) -> Result<(Vec<f64>, Vec<f64>), CliError> {
        let y_train = train.all_targets();
        let y_val = validation.all_targets();
        let density = fit_density(&y_train, self.cfg.weights.bandwidth)?;
        let w_train = compute_weights(&density, &y_train, self.cfg.weights.cap)?;
        let w_val = if y_val.is_empty() {
            Vec::new()
        } else {
            compute_weights(&density, &y_val, self.cfg.weights.cap)?
        };
        let ids: Vec<u64> = train.series.iter().chain(&validation.series).map(|s| s.source_id).collect();
        let all: Vec<f64> = w_train.iter().chain(&w_val).copied().collect();
        let mut buf = Vec::new();
        write_weights(&mut buf, &ids, &all).map_err(|e| CliError::Io {
            path: "weights".into(),
            source: e.into(),
        })?;
        self.write(&format!("data/{variant}_weights.csv"), &buf)?;
        Ok((w_train, w_val))
    }

    fn write_report(&mut self, prefix: &str, report: &MetricsReport) -> Result<(), CliError> {
        let tag = format!("{}_{}", lower(report.model), report.variant);
        self.write(&format!("reports/{prefix}_{tag}.csv"), &report::metrics_table(std::slice::from_ref(report)))?;
        self.write(&format!("reports/{prefix}_{tag}_folds.csv"), &report::fold_table(report))?;
        self.write(&format!("plots/loss_{prefix}_{tag}.csv"), &report::loss_curves(report))?;
        let preds: Vec<Prediction> = report.folds.iter().flat_map(|f| f.predictions.clone()).collect();
        self.write(&format!("plots/predictions_{prefix}_{tag}.csv"), &report::predictions_table(&preds))?;
        print!("{}", report::summary_text(report));
        Ok(())
    }

    pub fn cmd_cv(&mut self) -> Result<(), CliError> {
        let mut reports = Vec::new();
        for v in self.cfg.variants()? {
            let (train_ds, val_ds) = self.datasets(v)?;
            let (w, _) = self.weights(v, &train_ds, &val_ds)?;
            for kind in self.cfg.models()? {
                let spec = self.cfg.model_spec(kind);
                let rep = cross_validate(&spec, &train_ds, &w, &self.cfg.train)?;
                self.write_report("cv", &rep)?;
                reports.push(rep);
            }
        }
        self.write("reports/metrics.csv", &report::metrics_table(&reports))?;
        let matrix = MetricMatrix::from_reports(&reports);
        self.write("reports/a1_matrix.csv", &matrix.to_csv())?;
        let summary: String = reports.iter().map(report::summary_text).collect();
        self.write("reports/summary.txt", summary.as_bytes())?;
        Ok(())
    }

    pub fn cmd_train(&mut self) -> Result<(), CliError> {
        let mut reports = Vec::new();
        for v in self.cfg.variants()? {
            let (train_ds, val_ds) = self.datasets(v)?;
            if val_ds.is_empty() {
                return Err(CliError::Config("training needs a non-empty validation split".into()));
            }
            let (w_train, w_val) = self.weights(v, &train_ds, &val_ds)?;
            let mut all = train_ds.clone();
            all.series.extend(val_ds.series.iter().cloned());
            let weights: Vec<f64> = w_train.iter().chain(&w_val).copied().collect();
            let tr: Vec<usize> = (0..train_ds.len()).collect();
            let va: Vec<usize> = (train_ds.len()..all.len()).collect();
            for kind in self.cfg.models()? {
                let spec = self.cfg.model_spec(kind);
                let mut out = train(&spec, &all, &weights, &tr, &va, &self.cfg.train, &[])?;
                let tag = format!("{}_{v}", lower(kind));
                let snap = Snapshot::capture(&out.model);
                let mut bytes = Vec::new();
                snap.write_to(&mut bytes)?;
                self.write(&format!("snapshots/{tag}.snap"), &bytes)?;
                self.write(&format!("snapshots/{tag}.spec.toml"), spec.to_toml().as_bytes())?;
                let mut scored = Vec::new();
                for (idx, w) in [(&tr, &w_train), (&va, &w_val)] {
                    let pred = predict_indices(&mut out.model, &all, idx)?.to_vec();
                    let y = all.targets(idx).to_vec();
                    scored.push((metric_suite(&y, &pred, w).map_err(feh_core::train::EvalError::from)?, pred));
                }
                let (val_m, val_pred) = scored.pop().expect("two phases");
                let (train_m, _) = scored.pop().expect("two phases");
                let fold = FoldReport {
                    repeat: 0,
                    fold: 0,
                    train: train_m,
                    validation: val_m,
                    epochs_run: out.epochs_run,
                    best_epoch: out.best_epoch,
                    curve: out.curve,
                    predictions: va
                        .iter()
                        .zip(val_pred)
                        .map(|(&i, p)| Prediction {
                            source_id: all.series[i].source_id,
                            predicted: p,
                            truth: all.series[i].target,
                        })
                        .collect(),
                };
                let rep = MetricsReport {
                    model: kind,
                    variant: v,
                    train: MetricSummary::of(&[train_m]),
                    validation: MetricSummary::of(&[val_m]),
                    folds: vec![fold],
                };
                self.write_report("train", &rep)?;
                reports.push(rep);
            }
        }
        self.write("reports/train_metrics.csv", &report::metrics_table(&reports))?;
        Ok(())
    }

    pub fn cmd_gridsearch(&mut self) -> Result<(), CliError> {
        for v in self.cfg.variants()? {
            let (train_ds, val_ds) = self.datasets(v)?;
            let (w, _) = self.weights(v, &train_ds, &val_ds)?;
            for kind in self.cfg.models()? {
                let spec = self.cfg.model_spec(kind);
                let result = grid_search(&spec, &train_ds, &w, &self.cfg.grid, &self.cfg.train)?;
                let tag = format!("{}_{v}", lower(kind));
                self.write(&format!("reports/grid_{tag}.csv"), &report::grid_table(&result))?;
                println!(
                    "{kind} {v}: {} cells ranked, {} failed",
                    result.ranked.len(),
                    result.failed.len()
                );
                for r in result.ranked.iter().take(3) {
                    println!(
                        "  #{} dropout {} lr {} batch {}: val wRMSE {:.4}",
                        r.rank, r.cell.dropout, r.cell.learning_rate, r.cell.batch_size, r.report.validation.wrmse.mean
                    );
                }
            }
        }
        Ok(())
    }

    fn single<T: Copy>(items: Vec<T>, what: &str) -> Result<T, CliError> {
        match items.as_slice() {
            [one] => Ok(*one),
            _ => Err(CliError::Config(format!("predict needs a single {what}"))),
        }
    }

    pub fn cmd_predict(&mut self) -> Result<(), CliError> {
        let kind = Self::single(self.cfg.models()?, "model")?;
        let variant = Self::single(self.cfg.variants()?, "variant")?;
        let tag = format!("{}_{variant}", lower(kind));
        let snap_path = self
            .cfg
            .paths
            .snapshot
            .clone()
            .unwrap_or_else(|| self.out.join(format!("snapshots/{tag}.snap")));
        let input = self
            .cfg
            .paths
            .input
            .clone()
            .unwrap_or_else(|| self.out.join(format!("data/{variant}_validation.fehds")));
        for p in [&snap_path, &input] {
            if !p.exists() {
                return Err(CliError::MissingInput(p.clone()));
            }
        }
        let spec = match &self.cfg.paths.spec {
            Some(p) => {
                let p = self.cfg.input_path(&Some(p.clone()), "spec")?;
                ModelSpec::from_toml(&std::fs::read_to_string(&p).map_err(CliError::io(&p))?)?
            }
            None => self.cfg.model_spec(kind),
        };
        let snapshot = load_snapshot(&snap_path)?;
        let ds = Dataset::load(&input)?;
        let preds = predict(&snapshot, Some(&spec), &ds)?;
        let path = self.write(&format!("reports/predict_{tag}.csv"), &report::predictions_table(&preds))?;
        println!("predicted {} rows -> {}", preds.len(), path.display());
        Ok(())
    }
}

fn load_snapshot(path: &Path) -> Result<Snapshot, CliError> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(Snapshot::read_from(bytes.as_slice())?)
}
