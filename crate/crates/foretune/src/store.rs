//! Durable experiment storage.
//!
//! An experiment directory holds `manifest.json` (the plan, written once),
//! `trials.jsonl` (one record per line, appended at each commit and flushed
//! before the scheduler proceeds), and `report/` for analysis output. JSONL
//! keeps the store human-diffable and each line independently parseable, so
//! a crash can lose at most the line being written.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{digest_bytes, TaskParams};
use crate::error::{Error, Result};
use crate::searchers::{SearcherKind, TpeKnobs};
use crate::train::TrialRecord;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const REPORT_DIR: &str = "report";

/// The serializable plan: everything needed to reproduce or resume a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub variant: crate::model::ModelVariant,
    /// Dataset reference as given on the command line (path or synthetic
    /// descriptor).
    pub dataset: String,
    /// SHA-256 of the dataset bytes; resume refuses on mismatch.
    pub dataset_digest: String,
    pub searcher: SearcherKind,
    pub knobs: TpeKnobs,
    pub n_trials: u64,
    pub max_concurrent: usize,
    pub mem_budget: u64,
    pub master_seed: u64,
    pub task: TaskParams,
    /// The search space in its text form.
    pub space_text: String,
}

/// Digest identifying a plan: SHA-256 over its canonical JSON form.
pub fn plan_digest(plan: &PlanRecord) -> String {
    let json = serde_json::to_string(plan).expect("plan serializes");
    digest_bytes(json.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub created_at: String,
    pub plan: PlanRecord,
    pub plan_digest: String,
    /// Tuned parameters the chosen model variant does not consume.
    pub ignored_params: Vec<String>,
}

impl Manifest {
    pub fn new(plan: PlanRecord) -> Manifest {
        let digest = plan_digest(&plan);
        let ignored =
            plan.variant.ignored_params().iter().map(|s| s.to_string()).collect();
        Manifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
            plan,
            plan_digest: digest,
            ignored_params: ignored,
        }
    }
}

/// Append-only writer for one experiment directory.
#[derive(Debug)]
pub struct TrialStore {
    dir: PathBuf,
    file: File,
    manifest: Manifest,
    appended: u64,
    #[cfg(test)]
    fail_after: Option<u64>,
}

impl TrialStore {
    /// Create a fresh experiment directory. Refuses to overwrite an
    /// existing experiment.
    pub fn create(dir: &Path, manifest: Manifest) -> Result<TrialStore> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            return Err(Error::Store(format!(
                "{} already holds an experiment",
                dir.display()
            )));
        }
        fs::create_dir_all(dir.join(REPORT_DIR)).map_err(|e| Error::io(dir, e))?;
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
        let trials_path = dir.join(TRIALS_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&trials_path)
            .map_err(|e| Error::io(&trials_path, e))?;
        Ok(TrialStore {
            dir: dir.to_path_buf(),
            file,
            manifest,
            appended: 0,
            #[cfg(test)]
            fail_after: None,
        })
    }

    /// Append one record as a single line and flush it to the OS before
    /// returning; this is the scheduler's durability point.
    pub fn append_record(&mut self, record: &TrialRecord) -> Result<()> {
        #[cfg(test)]
        if self.fail_after == Some(self.appended) {
            return Err(Error::Store("injected write fault".into()));
        }
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|()| self.file.flush())
            .map_err(|e| Error::io(self.dir.join(TRIALS_FILE), e))?;
        self.appended += 1;
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn report_dir(&self) -> PathBuf {
        self.dir.join(REPORT_DIR)
    }

    /// Make the next `append_record` fail, for abort-path tests.
    #[cfg(test)]
    pub fn fail_after(&mut self, appended: u64) {
        self.fail_after = Some(appended);
    }
}

/// A fully loaded experiment directory.
#[derive(Clone, Debug)]
pub struct LoadedExperiment {
    pub manifest: Manifest,
    pub records: Vec<TrialRecord>,
    /// Count of dropped trailing fragments (0 or 1): a final line without a
    /// newline is a crash artifact, not data.
    pub dropped_partial: usize,
}

/// Read a store directory. Complete lines must parse; a truncated final
/// line is dropped with a warning count.
pub fn load_experiment(dir: &Path) -> Result<LoadedExperiment> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Store(format!("corrupt manifest: {e}")))?;
    let trials_path = dir.join(TRIALS_FILE);
    let raw = match fs::read_to_string(&trials_path) {
        Ok(r) => r,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(&trials_path, e)),
    };
    let mut records = Vec::new();
    let mut dropped_partial = 0;
    let mut rest = raw.as_str();
    let mut line_no = 0usize;
    while !rest.is_empty() {
        line_no += 1;
        match rest.split_once('\n') {
            Some((line, tail)) => {
                let record: TrialRecord = serde_json::from_str(line).map_err(|e| {
                    Error::Store(format!("{}: bad record on line {line_no}: {e}", trials_path.display()))
                })?;
                records.push(record);
                rest = tail;
            }
            None => {
                // no trailing newline: the durability point was never
                // reached for this fragment
                dropped_partial = 1;
                rest = "";
            }
        }
    }
    Ok(LoadedExperiment { manifest, records, dropped_partial })
}

/// State needed to continue an interrupted run: the loaded history plus a
/// store reopened for appending, with any crash fragment truncated away so
/// the resumed file is byte-identical to an uninterrupted one.
#[derive(Debug)]
pub struct ResumeState {
    pub store: TrialStore,
    pub records: Vec<TrialRecord>,
    pub dropped_partial: usize,
}

pub fn resume(dir: &Path) -> Result<ResumeState> {
    let loaded = load_experiment(dir)?;
    for (i, r) in loaded.records.iter().enumerate() {
        if r.trial_id != i as u64 {
            return Err(Error::Resume(format!(
                "stored trial ids are not dense: position {i} holds trial {}",
                r.trial_id
            )));
        }
        r.validate().map_err(|e| Error::Resume(e.to_string()))?;
    }
    if loaded.records.len() as u64 > loaded.manifest.plan.n_trials {
        return Err(Error::Resume(format!(
            "store holds {} records but the plan budgets {} trials",
            loaded.records.len(),
            loaded.manifest.plan.n_trials
        )));
    }
    let trials_path = dir.join(TRIALS_FILE);
    if loaded.dropped_partial > 0 {
        let keep: u64 = loaded
            .records
            .iter()
            .map(|r| serde_json::to_string(r).expect("round-trip").len() as u64 + 1)
            .sum();
        let f = OpenOptions::new()
            .write(true)
            .open(&trials_path)
            .map_err(|e| Error::io(&trials_path, e))?;
        f.set_len(keep).map_err(|e| Error::io(&trials_path, e))?;
    }
    let file = OpenOptions::new()
        .append(true)
        .open(&trials_path)
        .map_err(|e| Error::io(&trials_path, e))?;
    Ok(ResumeState {
        store: TrialStore {
            dir: dir.to_path_buf(),
            file,
            manifest: loaded.manifest,
            appended: loaded.records.len() as u64,
            #[cfg(test)]
            fail_after: None,
        },
        records: loaded.records,
        dropped_partial: loaded.dropped_partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperspace::{ParamConfig, ParamValue, SearchSpace};
    use crate::model::ModelVariant;
    use crate::train::{EpochRecord, TrialStatus};

    fn plan() -> PlanRecord {
        PlanRecord {
            variant: ModelVariant::Mixer,
            dataset: "synthetic://unit".into(),
            dataset_digest: "abc123".into(),
            searcher: SearcherKind::Random,
            knobs: TpeKnobs::default(),
            n_trials: 4,
            max_concurrent: 1,
            mem_budget: 1 << 30,
            master_seed: 7,
            task: TaskParams::default(),
            space_text: SearchSpace::builtin().to_text(),
        }
    }

    fn record(id: u64, status: TrialStatus) -> TrialRecord {
        let mut cfg = ParamConfig::new();
        cfg.insert("d_model", ParamValue::Int(64));
        cfg.insert("learning_rate", ParamValue::Float(0.001));
        let completed = status == TrialStatus::Completed;
        TrialRecord {
            trial_id: id,
            params: cfg,
            status,
            epochs: if completed {
                vec![EpochRecord { epoch: 1, train_loss: 0.5, val_loss: 0.4, lr_used: 0.001 }]
            } else {
                Vec::new()
            },
            val_mse: completed.then_some(0.1 + 0.2),
            val_mae: completed.then_some(0.25),
            test_mse: completed.then_some(0.5),
            test_mae: completed.then_some(0.45),
            wall_ms: 12,
            mem_bytes: 1024,
            seed: 99 + id,
        }
    }

    #[test]
    fn create_append_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("exp");
        let mut store = TrialStore::create(&root, Manifest::new(plan())).unwrap();
        for i in 0..4 {
            store.append_record(&record(i, TrialStatus::Completed)).unwrap();
        }
        let loaded = load_experiment(&root).unwrap();
        assert_eq!(loaded.records.len(), 4);
        assert_eq!(loaded.dropped_partial, 0);
        assert_eq!(loaded.records[2], record(2, TrialStatus::Completed));
        assert_eq!(loaded.manifest.plan, plan());
        assert_eq!(loaded.manifest.plan_digest, plan_digest(&plan()));
        assert!(root.join(REPORT_DIR).is_dir());
    }

    #[test]
    fn floats_round_trip_with_shortest_decimals() {
        let r = record(0, TrialStatus::Completed);
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.contains("0.30000000000000004"), "shortest form in {line}");
        let back: TrialRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.val_mse.unwrap().to_bits(), (0.1f64 + 0.2).to_bits());

        // a value whose shortest form the fast float path rounds 1 ulp off
        let v = 1.0743945791168459f64;
        let parsed: f64 = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(parsed.to_bits(), v.to_bits());
    }

    #[test]
    fn failed_records_serialize_without_metric_fields() {
        let line = serde_json::to_string(&record(1, TrialStatus::FailedOom)).unwrap();
        for f in ["val_mse", "val_mae", "test_mse", "test_mae"] {
            assert!(!line.contains(f), "{f} present in {line}");
        }
        let back: TrialRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, record(1, TrialStatus::FailedOom));
    }

    #[test]
    fn create_refuses_existing_experiment() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("exp");
        TrialStore::create(&root, Manifest::new(plan())).unwrap();
        let err = TrialStore::create(&root, Manifest::new(plan())).unwrap_err();
        assert!(err.to_string().contains("already holds"));
    }

    #[test]
    fn missing_or_corrupt_manifest_fails_to_load() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_experiment(dir.path()).is_err());
        fs::write(dir.path().join(MANIFEST_FILE), "{ not json").unwrap();
        let err = load_experiment(dir.path()).unwrap_err().to_string();
        assert!(err.contains("corrupt manifest"), "{err}");
    }

    #[test]
    fn truncated_final_line_is_dropped_and_resume_heals_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("exp");
        let mut store = TrialStore::create(&root, Manifest::new(plan())).unwrap();
        for i in 0..3 {
            store.append_record(&record(i, TrialStatus::Completed)).unwrap();
        }
        drop(store);
        let path = root.join(TRIALS_FILE);
        let intact = fs::read(&path).unwrap();
        let mut bytes = intact.clone();
        bytes.extend_from_slice(b"{\"trial_id\":3,\"par");
        fs::write(&path, &bytes).unwrap();

        let loaded = load_experiment(&root).unwrap();
        assert_eq!(loaded.records.len(), 3);
        assert_eq!(loaded.dropped_partial, 1);

        let resumed = resume(&root).unwrap();
        assert_eq!(resumed.records.len(), 3);
        assert_eq!(resumed.dropped_partial, 1);
        drop(resumed);
        assert_eq!(fs::read(&path).unwrap(), intact);
    }

    #[test]
    fn mid_file_corruption_is_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("exp");
        let mut store = TrialStore::create(&root, Manifest::new(plan())).unwrap();
        store.append_record(&record(0, TrialStatus::Completed)).unwrap();
        drop(store);
        let path = root.join(TRIALS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(b"garbage\n");
        fs::write(&path, &bytes).unwrap();
        let err = load_experiment(&root).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn empty_trials_file_loads_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("exp");
        TrialStore::create(&root, Manifest::new(plan())).unwrap();
        let loaded = load_experiment(&root).unwrap();
        assert!(loaded.records.is_empty());
        assert_eq!(loaded.dropped_partial, 0);
    }

    #[test]
    fn resume_refuses_inconsistent_stores() {
        // more records than the plan budgets
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("exp");
        let mut store = TrialStore::create(&root, Manifest::new(plan())).unwrap();
        for i in 0..5 {
            store.append_record(&record(i, TrialStatus::Completed)).unwrap();
        }
        drop(store);
        let err = resume(&root).unwrap_err().to_string();
        assert!(err.contains("budgets 4 trials"), "{err}");

        // non-dense trial ids
        let dir2 = tempfile::tempdir().unwrap();
        let root2 = dir2.path().join("exp");
        let mut store = TrialStore::create(&root2, Manifest::new(plan())).unwrap();
        store.append_record(&record(1, TrialStatus::Completed)).unwrap();
        drop(store);
        let err = resume(&root2).unwrap_err().to_string();
        assert!(err.contains("not dense"), "{err}");
    }

    #[test]
    fn plan_digest_is_stable_and_field_sensitive() {
        let a = plan_digest(&plan());
        assert_eq!(a, plan_digest(&plan()));
        assert_eq!(a.len(), 64);
        let mut p = plan();
        p.master_seed += 1;
        assert_ne!(a, plan_digest(&p));
    }
}
