//! End-to-end orchestration: in-memory stage functions plus file-backed
//! commands that materialize every artifact under the output directory and
//! record content hashes in `manifest.json`.
//!
//! Artifact layout (all under `output.dir`):
//!
//! | file | written by |
//! |---|---|
//! | `ranking_table.csv`, `ranking_schema.json` | preprocess |
//! | `train.csv`, `val.csv`, `test.csv`, `encoding.json` | preprocess |
//! | `class_balance.json`, `class_balance.csv` | preprocess |
//! | `ig_ranking.csv`, `ig_ranking.json` | rank-ig |
//! | `rf_ranking.csv`, `rf_ranking.json` | rank-rf |
//! | `filter_union.json`, `selection_<mode>.json` | filter |
//! | `rfe_trace.json`, `selection_igrf_rfe.json` | rfe |
//! | `model_<mode>.json` | train |
//! | `report_<mode>.json`, `report_<mode>.txt`, `confusion_<mode>.csv`, `roc_<mode>_<class>.csv` | evaluate |
//! | `comparison.csv`, `summary.md` | report |
//!
//! Wall-clock times go to `timings.json` so that `manifest.json` is
//! byte-identical across reruns with the same config and inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::data::{
    self, clean, deduplicate, one_hot, oversample_class, remove_minority, split_holdout,
    EncodedMatrix, FeatureGroup, MinMaxScaler, Schema, Table,
};
use crate::ensemble::{apply_threshold, combine_with_categoricals, Combine, FeatureSubset};
use crate::error::{Error, Result};
use crate::forest::{self, RfScore};
use crate::info_gain::{self, Discretizer, IgScore};
use crate::metrics::{weighted_report, EvalReport};
use crate::mlp::{self, argmax_rows, MlpModel};
use crate::plot;
use crate::rfe::{self, Evaluator, MlpEvaluator, RfeTrace, StubEvaluator};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    IgrfRfe,
    IgOnly,
    RfOnly,
    Union,
    Intersection,
    AllFeatures,
}

impl SelectMode {
    pub const ALL: [SelectMode; 6] = [
        SelectMode::IgOnly,
        SelectMode::RfOnly,
        SelectMode::Union,
        SelectMode::Intersection,
        SelectMode::IgrfRfe,
        SelectMode::AllFeatures,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectMode::IgrfRfe => "igrf_rfe",
            SelectMode::IgOnly => "ig_only",
            SelectMode::RfOnly => "rf_only",
            SelectMode::Union => "union",
            SelectMode::Intersection => "intersection",
            SelectMode::AllFeatures => "all_features",
        }
    }
}

impl fmt::Display for SelectMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage: String,
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
}

impl StageCounts {
    fn of(stage: &str, t: &Table) -> Self {
        let counts = t.class_counts();
        let total = t.row_count().max(1) as f64;
        StageCounts {
            stage: stage.to_string(),
            classes: t.schema().label_classes().to_vec(),
            proportions: counts.iter().map(|&c| c as f64 / total).collect(),
            counts,
        }
    }

    pub fn count(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class).map(|i| self.counts[i])
    }

    pub fn proportion(&self, class: &str) -> Option<f64> {
        self.classes.iter().position(|c| c == class).map(|i| self.proportions[i])
    }
}

/// Class counts after each preprocessing step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub removed_by_cleaning: BTreeMap<String, usize>,
    pub stages: Vec<StageCounts>,
}

impl ClassBalance {
    pub fn stage(&self, name: &str) -> Option<&StageCounts> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["stage", "class", "count", "proportion"])?;
        for s in &self.stages {
            for ((c, n), p) in s.classes.iter().zip(&s.counts).zip(&s.proportions) {
                w.write_record([s.stage.as_str(), c, &n.to_string(), &p.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Output of the preprocessing chain.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Cleaned, minority-removed, deduplicated training rows for ranking.
    pub ranking: Table,
    pub train: EncodedMatrix,
    pub val: EncodedMatrix,
    pub test: EncodedMatrix,
    pub scaler: MinMaxScaler,
    pub balance: ClassBalance,
}

/// clean → minority removal → (dedup for ranking) / (oversample, split the
/// test file into validation and test, one-hot, min-max fitted on train).
pub fn prepare(train_raw: &Table, test_raw: &Table, cfg: &PipelineConfig) -> Result<Prepared> {
    let p = &cfg.preprocess;
    let train_c = clean(train_raw);
    let test_c = clean(test_raw);
    let mut removed = BTreeMap::new();
    removed.insert("train".to_string(), train_raw.row_count() - train_c.row_count());
    removed.insert("test".to_string(), test_raw.row_count() - test_c.row_count());

    let drop: Vec<&str> = p.drop_classes.iter().map(String::as_str).collect();
    let train_m = remove_minority(&train_c, &drop)?;
    let test_m = remove_minority(&test_c, &drop)?;
    let ranking = deduplicate(&train_m);
    let train_o = match &p.oversample_class {
        Some(class) if p.oversample_factor > 1 => oversample_class(&train_m, class, p.oversample_factor)?,
        _ => train_m.clone(),
    };
    let (val_t, test_t) = split_holdout(&test_m, p.split_ratio, p.split_seed)?;
    if train_o.row_count() == 0 || val_t.row_count() == 0 || test_t.row_count() == 0 {
        return Err(Error::Data("a split is empty after preprocessing".into()));
    }

    let train_e = one_hot(&train_o, &train_o)?;
    let val_e = one_hot(&val_t, &train_o)?;
    let test_e = one_hot(&test_t, &train_o)?;
    let (train, mut others, scaler) = data::minmax_fit_transform(&train_e, &[val_e, test_e])?;
    let test = others.pop().expect("two matrices");
    let val = others.pop().expect("two matrices");

    let balance = ClassBalance {
        removed_by_cleaning: removed,
        stages: vec![
            StageCounts::of("train_raw", train_raw),
            StageCounts::of("test_raw", test_raw),
            StageCounts::of("train_clean", &train_m),
            StageCounts::of("test_clean", &test_m),
            StageCounts::of("ranking", &ranking),
            StageCounts::of("train", &train_o),
            StageCounts::of("validation", &val_t),
            StageCounts::of("test", &test_t),
        ],
    };
    Ok(Prepared { ranking, train, val, test, scaler, balance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rankings {
    pub ig: Vec<IgScore>,
    pub rf: Vec<RfScore>,
}

pub fn rank_ig(ranking: &Table, cfg: &PipelineConfig) -> Result<Vec<IgScore>> {
    info_gain::rank_ig(ranking, &Discretizer::equal_frequency(cfg.ig.bins))
}

pub fn rank_rf(ranking: &Table, cfg: &PipelineConfig) -> Result<Vec<RfScore>> {
    Ok(forest::rank_rf(ranking, &cfg.rf.forest)?.0)
}

pub fn rank(ranking: &Table, cfg: &PipelineConfig) -> Result<Rankings> {
    Ok(Rankings { ig: rank_ig(ranking, cfg)?, rf: rank_rf(ranking, cfg)? })
}

fn ig_survivors(r: &Rankings, cfg: &PipelineConfig) -> Result<BTreeSet<String>> {
    apply_threshold(r.ig.iter().map(|s| (s.feature.as_str(), s.normalized)), cfg.ig.threshold)
}

fn rf_survivors(r: &Rankings, cfg: &PipelineConfig) -> Result<BTreeSet<String>> {
    apply_threshold(r.rf.iter().map(|s| (s.feature.as_str(), s.mdi)), cfg.rf.threshold)
}

/// Stage-1 subset for the filter-only modes; `None` for `igrf_rfe` and
/// `all_features`.
pub fn filter(mode: SelectMode, schema: &Schema, r: &Rankings, cfg: &PipelineConfig) -> Result<Option<FeatureSubset>> {
    let (ig_t, rf_t) = (Some(cfg.ig.threshold), Some(cfg.rf.threshold));
    let none = BTreeSet::new();
    let out = match mode {
        SelectMode::Union => combine_with_categoricals(
            &ig_survivors(r, cfg)?,
            &rf_survivors(r, cfg)?,
            schema,
            Combine::Union,
            (ig_t, rf_t),
        )?,
        SelectMode::Intersection => combine_with_categoricals(
            &ig_survivors(r, cfg)?,
            &rf_survivors(r, cfg)?,
            schema,
            Combine::Intersection,
            (ig_t, rf_t),
        )?,
        SelectMode::IgOnly => {
            combine_with_categoricals(&ig_survivors(r, cfg)?, &none, schema, Combine::Union, (ig_t, None))?
        }
        SelectMode::RfOnly => {
            combine_with_categoricals(&none, &rf_survivors(r, cfg)?, schema, Combine::Union, (None, rf_t))?
        }
        SelectMode::IgrfRfe | SelectMode::AllFeatures => return Ok(None),
    };
    Ok(Some(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub mode: SelectMode,
    /// Schema order.
    pub features: Vec<String>,
    pub filter: Option<FeatureSubset>,
}

/// Builds the RFE evaluator named by `spec` (`mlp` or `stub:<spec>`).
pub fn make_evaluator<'a>(
    spec: &str,
    cfg: &PipelineConfig,
    train: &'a EncodedMatrix,
    val: &'a EncodedMatrix,
) -> Result<Box<dyn Evaluator + 'a>> {
    if spec == "mlp" {
        Ok(Box::new(MlpEvaluator { train, val, config: cfg.rfe_mlp() }))
    } else if spec.starts_with("stub:") {
        Ok(Box::new(StubEvaluator::parse(spec)?))
    } else {
        Err(Error::Config(format!("unknown evaluator '{spec}'")))
    }
}

/// Runs the stage combination for `mode`; `igrf_rfe` is the union filter
/// followed by RFE with `ev`.
pub fn select(
    mode: SelectMode,
    schema: &Schema,
    r: &Rankings,
    cfg: &PipelineConfig,
    ev: &dyn Evaluator,
) -> Result<(Selection, Option<RfeTrace>)> {
    match mode {
        SelectMode::AllFeatures => Ok((
            Selection {
                mode,
                features: schema.feature_names().into_iter().map(String::from).collect(),
                filter: None,
            },
            None,
        )),
        SelectMode::IgrfRfe => {
            let stage1 = filter(SelectMode::Union, schema, r, cfg)?.expect("union yields a subset");
            let (features, trace) = run_rfe(&stage1, cfg, ev)?;
            Ok((Selection { mode, features, filter: Some(stage1) }, Some(trace)))
        }
        _ => {
            let subset = filter(mode, schema, r, cfg)?.expect("filter mode");
            Ok((Selection { mode, features: subset.retained.clone(), filter: Some(subset) }, None))
        }
    }
}

pub fn run_rfe(stage1: &FeatureSubset, cfg: &PipelineConfig, ev: &dyn Evaluator) -> Result<(Vec<String>, RfeTrace)> {
    if stage1.is_empty() {
        return Err(Error::Data("stage-1 subset is empty".into()));
    }
    rfe::rfe(ev, &stage1.retained, cfg.rfe.patience, &cfg.rfe.seeds)
}

/// Fits the MLP on the subset's columns (early stopping on validation) and
/// evaluates on test.
pub fn train_eval(
    cfg: &PipelineConfig,
    features: &[String],
    train: &EncodedMatrix,
    val: &EncodedMatrix,
    test: &EncodedMatrix,
) -> Result<(MlpModel, EvalReport)> {
    let model = train_on(cfg, features, train, val)?;
    let report = evaluate_on(&model, features, test)?;
    Ok((model, report))
}

pub fn train_on(cfg: &PipelineConfig, features: &[String], train: &EncodedMatrix, val: &EncodedMatrix) -> Result<MlpModel> {
    if features.is_empty() {
        return Err(Error::Data("cannot train on an empty feature subset".into()));
    }
    let tr = train.select_features(features)?;
    let va = val.select_features(features)?;
    mlp::fit(&cfg.mlp, &tr, &va)
}

pub fn evaluate_on(model: &MlpModel, features: &[String], test: &EncodedMatrix) -> Result<EvalReport> {
    let te = test.select_features(features)?;
    let probs = model.predict_proba(te.values.view())?;
    let pred = argmax_rows(probs.view());
    weighted_report(&te.labels, &pred, probs.view(), &te.class_names)
}

// ---------------------------------------------------------------------------
// File-backed commands

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub stages: BTreeMap<String, StageRecord>,
    pub selected_features: BTreeMap<String, Vec<String>>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(cfg: &PipelineConfig) -> Self {
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            config: cfg.clone(),
            stages: BTreeMap::new(),
            selected_features: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize, Deserialize)]
struct Encoding {
    class_names: Vec<String>,
    feature_names: Vec<String>,
    groups: Vec<FeatureGroup>,
    scaler: MinMaxScaler,
}

/// Handle on an output directory; tracks the stage being recorded.
pub struct Workspace {
    pub cfg: PipelineConfig,
    dir: PathBuf,
    manifest: RunManifest,
    timings: BTreeMap<String, f64>,
}

struct Stage {
    name: String,
    record: StageRecord,
    started: Instant,
}

impl Workspace {
    /// Opens (creating if needed) `cfg.output.dir`, continuing any manifest
    /// already there.
    pub fn open(cfg: PipelineConfig) -> Result<Self> {
        let dir = cfg.output.dir.clone();
        fs::create_dir_all(&dir)?;
        let mut manifest = match fs::read_to_string(dir.join("manifest.json")) {
            Ok(s) => serde_json::from_str(&s)?,
            Err(_) => RunManifest::new(&cfg),
        };
        manifest.config = cfg.clone();
        manifest.tool_version = TOOL_VERSION.to_string();
        let timings = fs::read_to_string(dir.join("timings.json"))
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default();
        Ok(Workspace { cfg, dir, manifest, timings })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn begin(&self, name: &str) -> Stage {
        Stage { name: name.to_string(), record: StageRecord::default(), started: Instant::now() }
    }

    fn finish(&mut self, stage: Stage) -> Result<()> {
        self.timings.insert(stage.name.clone(), stage.started.elapsed().as_secs_f64());
        self.manifest.stages.insert(stage.name, stage.record);
        self.save()
    }

    fn save(&self) -> Result<()> {
        fs::write(self.path("manifest.json"), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        fs::write(self.path("timings.json"), serde_json::to_string_pretty(&self.timings)? + "\n")?;
        Ok(())
    }

    fn note(&mut self, note: String) {
        if !self.manifest.notes.contains(&note) {
            self.manifest.notes.push(note);
        }
    }

    fn read_artifact(&self, stage: &mut Stage, name: &str) -> Result<Vec<u8>> {
        let bytes = fs::read(self.path(name)).map_err(|_| {
            Error::Config(format!("missing artifact {name}; run the stage that produces it first"))
        })?;
        stage.record.inputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn read_input(&self, stage: &mut Stage, key: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        stage.record.inputs.insert(key.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn write_artifact(&self, stage: &mut Stage, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.path(name), bytes)?;
        stage.record.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&self, stage: &mut Stage, name: &str, value: &T) -> Result<()> {
        let s = serde_json::to_string_pretty(value)? + "\n";
        self.write_artifact(stage, name, s.as_bytes())
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, stage: &mut Stage, name: &str) -> Result<T> {
        let bytes = self.read_artifact(stage, name)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn write_with<F>(&self, stage: &mut Stage, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_artifact(stage, name, &buf)
    }

    pub fn preprocess(&mut self) -> Result<Prepared> {
        let mut st = self.begin("preprocess");
        let (train_path, test_path) = self.cfg.require_inputs()?;
        let (train_path, test_path) = (train_path.to_path_buf(), test_path.to_path_buf());
        let train_raw = data::read_csv(&self.read_input(&mut st, "data.train", &train_path)?[..], &self.cfg.schema)?;
        let test_raw = data::read_csv(&self.read_input(&mut st, "data.test", &test_path)?[..], &self.cfg.schema)?;
        let prep = prepare(&train_raw, &test_raw, &self.cfg)?;

        self.write_with(&mut st, "ranking_table.csv", |b| prep.ranking.write_csv(b))?;
        self.write_json(&mut st, "ranking_schema.json", prep.ranking.schema())?;
        self.write_with(&mut st, "train.csv", |b| prep.train.write_csv(b))?;
        self.write_with(&mut st, "val.csv", |b| prep.val.write_csv(b))?;
        self.write_with(&mut st, "test.csv", |b| prep.test.write_csv(b))?;
        let enc = Encoding {
            class_names: prep.train.class_names.clone(),
            feature_names: prep.train.feature_names.clone(),
            groups: prep.train.groups.clone(),
            scaler: prep.scaler.clone(),
        };
        self.write_json(&mut st, "encoding.json", &enc)?;
        self.write_json(&mut st, "class_balance.json", &prep.balance)?;
        self.write_with(&mut st, "class_balance.csv", |b| prep.balance.write_csv(b))?;
        self.finish(st)?;
        Ok(prep)
    }

    fn load_ranking_table(&self, st: &mut Stage) -> Result<Table> {
        let schema: Schema = self.read_json(st, "ranking_schema.json")?;
        let bytes = self.read_artifact(st, "ranking_table.csv")?;
        data::read_csv(&bytes[..], &schema)
    }

    fn load_matrices(&self, st: &mut Stage, names: &[&str]) -> Result<Vec<EncodedMatrix>> {
        let enc: Encoding = self.read_json(st, "encoding.json")?;
        names
            .iter()
            .map(|n| {
                let bytes = self.read_artifact(st, n)?;
                EncodedMatrix::read_csv(&bytes[..], &enc.class_names, &enc.groups)
            })
            .collect()
    }

    pub fn rank_ig(&mut self) -> Result<Vec<IgScore>> {
        let mut st = self.begin("rank-ig");
        let table = self.load_ranking_table(&mut st)?;
        let scores = rank_ig(&table, &self.cfg)?;
        self.write_with(&mut st, "ig_ranking.csv", |b| info_gain::write_ranking_csv(&scores, b))?;
        self.write_json(&mut st, "ig_ranking.json", &scores)?;
        if self.cfg.output.svg {
            let bars: Vec<(String, f64)> = scores.iter().map(|s| (s.feature.clone(), s.normalized)).collect();
            let svg = plot::bar_chart("Information gain (normalized)", &bars, Some(self.cfg.ig.threshold));
            self.write_artifact(&mut st, "ig_ranking.svg", svg.as_bytes())?;
        }
        self.finish(st)?;
        Ok(scores)
    }

    pub fn rank_rf(&mut self) -> Result<Vec<RfScore>> {
        let mut st = self.begin("rank-rf");
        let table = self.load_ranking_table(&mut st)?;
        let scores = rank_rf(&table, &self.cfg)?;
        self.write_with(&mut st, "rf_ranking.csv", |b| forest::write_ranking_csv(&scores, b))?;
        self.write_json(&mut st, "rf_ranking.json", &scores)?;
        if self.cfg.output.svg {
            let bars: Vec<(String, f64)> = scores.iter().map(|s| (s.feature.clone(), s.mdi)).collect();
            let svg = plot::bar_chart("Random forest importance (MDI)", &bars, Some(self.cfg.rf.threshold));
            self.write_artifact(&mut st, "rf_ranking.svg", svg.as_bytes())?;
        }
        self.finish(st)?;
        Ok(scores)
    }

    fn load_rankings(&self, st: &mut Stage) -> Result<(Rankings, Schema)> {
        let ig = self.read_json(st, "ig_ranking.json")?;
        let rf = self.read_json(st, "rf_ranking.json")?;
        let schema = self.read_json(st, "ranking_schema.json")?;
        Ok((Rankings { ig, rf }, schema))
    }

    /// Filter-only modes and `all_features`. Always (re)writes the union
    /// subset that RFE starts from.
    pub fn filter(&mut self, mode: SelectMode) -> Result<Selection> {
        if mode == SelectMode::IgrfRfe {
            return Err(Error::Config("igrf_rfe needs the rfe stage; use `rfe` or `pipeline`".into()));
        }
        let mut st = self.begin(&format!("filter:{mode}"));
        let (r, schema) = self.load_rankings(&mut st)?;
        let union = filter(SelectMode::Union, &schema, &r, &self.cfg)?.expect("union");
        self.write_json(&mut st, "filter_union.json", &union)?;
        let (sel, _) = select(mode, &schema, &r, &self.cfg, &StubEvaluator::Constant(0.0))?;
        self.write_json(&mut st, &format!("selection_{mode}.json"), &sel)?;
        self.manifest.selected_features.insert(mode.to_string(), sel.features.clone());
        self.finish(st)?;
        Ok(sel)
    }

    /// RFE over the stored union subset.
    pub fn rfe(&mut self) -> Result<(Selection, RfeTrace)> {
        let mut st = self.begin("rfe");
        let stage1: FeatureSubset = self.read_json(&mut st, "filter_union.json")?;
        let ev_spec = self.cfg.rfe.evaluator.clone();
        let mats = if ev_spec == "mlp" {
            self.load_matrices(&mut st, &["train.csv", "val.csv"])?
        } else {
            Vec::new()
        };
        let empty = EncodedMatrix {
            feature_names: Vec::new(),
            values: ndarray::Array2::zeros((0, 0)),
            labels: Vec::new(),
            class_names: Vec::new(),
            groups: Vec::new(),
        };
        let (train, val) = match &mats[..] {
            [t, v] => (t, v),
            _ => (&empty, &empty),
        };
        let ev = make_evaluator(&ev_spec, &self.cfg, train, val)?;
        let (features, trace) = run_rfe(&stage1, &self.cfg, ev.as_ref())?;
        if let Some(e) = self.cfg.rfe.epochs.filter(|&e| e < self.cfg.mlp.max_epochs) {
            self.note(format!(
                "rfe evaluator epoch budget reduced to {e} (full training uses {})",
                self.cfg.mlp.max_epochs
            ));
        }
        if ev_spec != "mlp" {
            self.note(format!("rfe ran with test evaluator '{ev_spec}'"));
        }
        let sel = Selection { mode: SelectMode::IgrfRfe, features, filter: Some(stage1) };
        self.write_json(&mut st, "rfe_trace.json", &trace)?;
        self.write_json(&mut st, "selection_igrf_rfe.json", &sel)?;
        self.manifest.selected_features.insert("igrf_rfe".into(), sel.features.clone());
        self.finish(st)?;
        Ok((sel, trace))
    }

    /// `filter` for the filter modes, `filter` + `rfe` for `igrf_rfe`.
    pub fn select(&mut self, mode: SelectMode) -> Result<Selection> {
        if mode == SelectMode::IgrfRfe {
            self.filter(SelectMode::Union)?;
            Ok(self.rfe()?.0)
        } else {
            self.filter(mode)
        }
    }

    pub fn train(&mut self, mode: SelectMode) -> Result<MlpModel> {
        let mut st = self.begin(&format!("train:{mode}"));
        let sel: Selection = self.read_json(&mut st, &format!("selection_{mode}.json"))?;
        let m = self.load_matrices(&mut st, &["train.csv", "val.csv"])?;
        let model = train_on(&self.cfg, &sel.features, &m[0], &m[1])?;
        self.write_artifact(&mut st, &format!("model_{mode}.json"), model.to_json()?.as_bytes())?;
        self.finish(st)?;
        Ok(model)
    }

    pub fn evaluate(&mut self, mode: SelectMode) -> Result<EvalReport> {
        let mut st = self.begin(&format!("evaluate:{mode}"));
        let sel: Selection = self.read_json(&mut st, &format!("selection_{mode}.json"))?;
        let model_bytes = self.read_artifact(&mut st, &format!("model_{mode}.json"))?;
        let model = MlpModel::from_json(std::str::from_utf8(&model_bytes).map_err(|e| Error::Data(e.to_string()))?)?;
        let m = self.load_matrices(&mut st, &["test.csv"])?;
        let report = evaluate_on(&model, &sel.features, &m[0])?;

        self.write_artifact(&mut st, &format!("report_{mode}.json"), (report.to_json()? + "\n").as_bytes())?;
        self.write_artifact(&mut st, &format!("report_{mode}.txt"), report.render_table().as_bytes())?;
        let names: Vec<String> = report.per_class.iter().map(|c| c.class.clone()).collect();
        self.write_with(&mut st, &format!("confusion_{mode}.csv"), |b| report.confusion.write_csv(&names, b))?;
        for (i, name) in names.iter().enumerate() {
            self.write_with(&mut st, &format!("roc_{mode}_{}.csv", file_safe(name)), |b| report.write_roc_csv(i, b))?;
        }
        if self.cfg.output.svg {
            let curves: Vec<(String, Vec<(f64, f64)>)> = names
                .iter()
                .zip(&report.roc)
                .filter_map(|(n, r)| r.clone().map(|p| (n.clone(), p)))
                .collect();
            let svg = plot::roc_chart(&format!("ROC ({mode})"), &curves);
            self.write_artifact(&mut st, &format!("roc_{mode}.svg"), svg.as_bytes())?;
        }
        self.finish(st)?;
        Ok(report)
    }

    pub fn train_eval(&mut self, mode: SelectMode) -> Result<EvalReport> {
        self.train(mode)?;
        self.evaluate(mode)
    }

    /// Collects every per-mode report present into `comparison.csv` and a
    /// markdown summary.
    pub fn report(&mut self) -> Result<String> {
        let mut st = self.begin("report");
        let mut md = String::from("# Run summary\n\n");
        if let Ok(b) = self.read_json::<ClassBalance>(&mut st, "class_balance.json") {
            md.push_str("## Class balance\n\n| stage | rows | largest class share |\n|---|---|---|\n");
            for s in &b.stages {
                let (i, p) = s
                    .proportions
                    .iter()
                    .enumerate()
                    .fold((0, 0.0), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
                let total: usize = s.counts.iter().sum();
                let name = s.classes.get(i).map(String::as_str).unwrap_or("-");
                md.push_str(&format!("| {} | {} | {} {:.2}% |\n", s.stage, total, name, p * 100.0));
            }
            let removed: Vec<String> = b.removed_by_cleaning.iter().map(|(k, v)| format!("{k} {v}")).collect();
            md.push_str(&format!("\nRows removed by cleaning: {}\n\n", removed.join(", ")));
        }
        if let Ok(u) = self.read_json::<FeatureSubset>(&mut st, "filter_union.json") {
            let p = &u.provenance;
            md.push_str(&format!(
                "## Filter stage\n\nIG survivors: {}\nRF survivors: {}\nin both: {}\nnumeric union: {}\ncategorical appended: {}\n\n",
                p.ig_survivors.len(),
                p.rf_survivors.len(),
                p.common.len(),
                p.numeric_size,
                p.categorical_appended.len()
            ));
        }

        let mut rows = Vec::new();
        for mode in SelectMode::ALL {
            let name = format!("report_{mode}.json");
            if !self.path(&name).exists() {
                continue;
            }
            let report: EvalReport = self.read_json(&mut st, &name)?;
            let n = self
                .read_json::<Selection>(&mut st, &format!("selection_{mode}.json"))
                .map(|s| s.features.len())
                .unwrap_or(0);
            rows.push((mode, n, report));
        }
        let mut csv_buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut csv_buf);
            w.write_record(["mode", "features", "accuracy", "precision", "recall", "f1", "fpr"])?;
            for (mode, n, r) in &rows {
                let wa = &r.weighted;
                w.write_record([
                    mode.to_string(),
                    n.to_string(),
                    r.accuracy.to_string(),
                    wa.precision.to_string(),
                    wa.recall.to_string(),
                    wa.f1.to_string(),
                    wa.fpr.to_string(),
                ])?;
            }
            w.flush()?;
        }
        self.write_artifact(&mut st, "comparison.csv", &csv_buf)?;
        if !rows.is_empty() {
            md.push_str("## Feature subsets\n\n| mode | features | accuracy | weighted F1 | weighted FPR |\n|---|---|---|---|---|\n");
            for (mode, n, r) in &rows {
                md.push_str(&format!(
                    "| {mode} | {n} | {:.2}% | {:.4} | {:.4} |\n",
                    r.accuracy * 100.0,
                    r.weighted.f1,
                    r.weighted.fpr
                ));
            }
        }
        if !self.manifest.notes.is_empty() {
            md.push_str("\n## Notes\n\n");
            for n in &self.manifest.notes {
                md.push_str(&format!("- {n}\n"));
            }
        }
        self.write_artifact(&mut st, "summary.md", md.as_bytes())?;
        self.finish(st)?;
        Ok(md)
    }

    /// preprocess → rank-ig → rank-rf → (select → train → evaluate) per mode → report.
    pub fn pipeline(&mut self, modes: &[SelectMode]) -> Result<Vec<(SelectMode, EvalReport)>> {
        self.preprocess()?;
        self.rank_ig()?;
        self.rank_rf()?;
        let mut out = Vec::new();
        for &mode in modes {
            self.select(mode)?;
            out.push((mode, self.train_eval(mode)?));
        }
        self.report()?;
        Ok(out)
    }
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn small_cfg() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.schema = synthetic::schema();
        c.preprocess.drop_classes.clear();
        c.preprocess.oversample_class = None;
        c.rf.forest.n_trees = 20;
        c.mlp.hidden_sizes = vec![8];
        c.mlp.max_epochs = 3;
        c.mlp.batch_size = 32;
        c
    }

    #[test]
    fn mode_names_round_trip() {
        for m in SelectMode::ALL {
            assert_eq!(m.as_str().parse::<SelectMode>().unwrap(), m);
        }
        assert!("bogus".parse::<SelectMode>().is_err());
    }

    #[test]
    fn prepare_and_select_in_memory() {
        let cfg = small_cfg();
        let train = synthetic::generate(400, 1).unwrap();
        let test = synthetic::generate(200, 2).unwrap();
        let prep = prepare(&train, &test, &cfg).unwrap();
        assert_eq!(prep.train.rows(), 400);
        assert_eq!(prep.val.rows() + prep.test.rows(), 200);
        assert_eq!(prep.val.rows(), 100);

        let r = rank(&prep.ranking, &cfg).unwrap();
        let schema = prep.ranking.schema();
        let ev = StubEvaluator::Constant(0.5);
        let (all, _) = select(SelectMode::AllFeatures, schema, &r, &cfg, &ev).unwrap();
        assert_eq!(all.features.len(), 20);

        let mut loose = cfg.clone();
        loose.ig.threshold = -1.0;
        let (ig, _) = select(SelectMode::IgOnly, schema, &r, &loose, &ev).unwrap();
        assert_eq!(ig.features.len(), 20);

        let (sel, trace) = select(SelectMode::IgrfRfe, schema, &r, &cfg, &ev).unwrap();
        assert_eq!(sel.features, sel.filter.unwrap().retained);
        assert_eq!(trace.unwrap().iterations.len(), cfg.rfe.patience);

        let (_, report) = train_eval(&cfg, &all.features, &prep.train, &prep.val, &prep.test).unwrap();
        assert_eq!(report.confusion.total(), prep.test.rows());
        assert!(train_eval(&cfg, &[], &prep.train, &prep.val, &prep.test).is_err());
    }
}
