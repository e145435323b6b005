//! Pipeline configuration: a sectioned `key = value` file where every key
//! has a default and can be overridden by an `IGRF_<SECTION>_<KEY>`
//! environment variable. The key list is in the workspace README.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ini::{Ini, ParseOption};
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnKind, Schema, UNSW_MINORITY};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::mlp::{LossKind, MlpConfig};

/// Every accepted `(section, key)` pair.
pub const KEYS: &[(&str, &[&str])] = &[
    ("data", &["train", "test"]),
    ("schema", &["preset", "columns", "classes"]),
    (
        "preprocess",
        &["drop_classes", "oversample_class", "oversample_factor", "split_ratio", "split_seed"],
    ),
    ("ig", &["bins", "threshold"]),
    (
        "rf",
        &["n_trees", "threshold", "seed", "max_depth", "min_samples_split", "features_per_split"],
    ),
    ("rfe", &["patience", "seeds", "epochs", "evaluator"]),
    (
        "mlp",
        &[
            "hidden_sizes",
            "learning_rate",
            "batch_size",
            "max_epochs",
            "early_stop_patience",
            "loss",
            "seed",
            "bn_epsilon",
            "bn_momentum",
        ],
    ),
    ("output", &["dir", "svg"]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub drop_classes: Vec<String>,
    /// Class whose rows are replicated in the training split; `None` disables it.
    pub oversample_class: Option<String>,
    pub oversample_factor: usize,
    /// Share of the test file that becomes the validation split.
    pub split_ratio: f64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgConfig {
    pub bins: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub forest: ForestConfig,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeConfig {
    pub patience: usize,
    pub seeds: Vec<u64>,
    /// Epoch budget for each evaluator fit; `None` uses `mlp.max_epochs`.
    pub epochs: Option<usize>,
    /// `mlp` or a `stub:<spec>` test evaluator.
    pub evaluator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub svg: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub schema: Schema,
    pub preprocess: PreprocessConfig,
    pub ig: IgConfig,
    pub rf: RfConfig,
    pub rfe: RfeConfig,
    pub mlp: MlpConfig,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataConfig { train: None, test: None },
            schema: Schema::unsw_nb15(),
            preprocess: PreprocessConfig {
                drop_classes: UNSW_MINORITY.iter().map(|s| s.to_string()).collect(),
                oversample_class: Some("Normal".into()),
                oversample_factor: 2,
                split_ratio: 0.5,
                split_seed: 2022,
            },
            ig: IgConfig { bins: 10, threshold: 0.25 },
            rf: RfConfig {
                forest: ForestConfig { seed: 2022, ..ForestConfig::default() },
                threshold: 0.02,
            },
            rfe: RfeConfig {
                patience: 5,
                seeds: crate::rfe::default_seeds(),
                epochs: None,
                evaluator: "mlp".into(),
            },
            mlp: MlpConfig::default(),
            output: OutputConfig { dir: PathBuf::from("out"), svg: false },
        }
    }
}

type Entries = BTreeMap<(String, String), String>;

fn parse_entries(text: &str) -> Result<Entries> {
    let opt = ParseOption { enabled_quote: false, enabled_escape: false, ..ParseOption::default() };
    let ini = Ini::load_from_str_opt(text, opt).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Entries::new();
    for (section, props) in ini.iter() {
        for (key, value) in props.iter() {
            let section = section.ok_or_else(|| {
                Error::Config(format!("key '{key}' appears before any [section]"))
            })?;
            let known = KEYS
                .iter()
                .find(|(s, _)| *s == section)
                .ok_or_else(|| Error::Config(format!("unknown section [{section}]")))?;
            if !known.1.contains(&key) {
                return Err(Error::Config(format!("unknown key '{key}' in [{section}]")));
            }
            out.insert((section.to_string(), key.to_string()), value.trim().to_string());
        }
    }
    Ok(out)
}

pub fn env_var_name(section: &str, key: &str) -> String {
    format!("IGRF_{}_{}", section.to_uppercase(), key.to_uppercase())
}

fn apply_env<F: Fn(&str) -> Option<String>>(entries: &mut Entries, env: F) {
    for (section, keys) in KEYS {
        for key in *keys {
            if let Some(v) = env(&env_var_name(section, key)) {
                entries.insert((section.to_string(), key.to_string()), v.trim().to_string());
            }
        }
    }
}

fn bad(section: &str, key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value '{value}' for {section}.{key}"))
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(section, key, v))
}

fn parse_f64(section: &str, key: &str, v: &str) -> Result<f64> {
    let x: f64 = parse_num(section, key, v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(bad(section, key, v))
    }
}

fn is_none(v: &str) -> bool {
    v.is_empty() || v.eq_ignore_ascii_case("none")
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

/// `2022-2031` or `1,2,3` (ranges and single values may be mixed).
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in list(v) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = parse_num("rfe", "seeds", a.trim())?;
                let b: u64 = parse_num("rfe", "seeds", b.trim())?;
                if b < a {
                    return Err(bad("rfe", "seeds", &part));
                }
                out.extend(a..=b);
            }
            None => out.push(parse_num("rfe", "seeds", &part)?),
        }
    }
    if out.is_empty() {
        return Err(Error::Config("rfe.seeds is empty".into()));
    }
    Ok(out)
}

fn parse_bool(section: &str, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(section, key, v)),
    }
}

/// `name:kind` pairs; kind is one of numeric, categorical, label, auxiliary.
fn parse_columns(v: &str) -> Result<Vec<Column>> {
    list(v)
        .into_iter()
        .map(|item| {
            let (name, kind) = item
                .split_once(':')
                .ok_or_else(|| bad("schema", "columns", &item))?;
            let kind = match kind.trim() {
                "numeric" => ColumnKind::Numeric,
                "categorical" => ColumnKind::Categorical,
                "label" => ColumnKind::Label,
                "auxiliary" => ColumnKind::Auxiliary,
                _ => return Err(bad("schema", "columns", &item)),
            };
            Ok(Column { name: name.trim().to_string(), kind })
        })
        .collect()
}

impl PipelineConfig {
    /// Reads `path`; relative data paths and the output directory are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base, |k| std::env::var(k).ok())
    }

    /// Defaults plus environment overrides only.
    pub fn from_env(base: &Path) -> Result<Self> {
        Self::parse("", base, |k| std::env::var(k).ok())
    }

    pub fn parse<F: Fn(&str) -> Option<String>>(text: &str, base: &Path, env: F) -> Result<Self> {
        let mut entries = parse_entries(text)?;
        apply_env(&mut entries, env);
        let mut c = PipelineConfig::default();
        let get = |s: &str, k: &str| entries.get(&(s.to_string(), k.to_string())).map(String::as_str);
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        if let Some(v) = get("data", "train") {
            c.data.train = Some(path(v));
        }
        if let Some(v) = get("data", "test") {
            c.data.test = Some(path(v));
        }

        match (get("schema", "preset"), get("schema", "columns")) {
            (Some(p), _) if p != "unsw_nb15" => return Err(bad("schema", "preset", p)),
            (Some(_), Some(_)) => {
                return Err(Error::Config("schema.preset and schema.columns are exclusive".into()))
            }
            (_, Some(cols)) => {
                let classes = get("schema", "classes")
                    .map(list)
                    .ok_or_else(|| Error::Config("schema.columns requires schema.classes".into()))?;
                c.schema = Schema::new(parse_columns(cols)?, classes)
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            _ => {}
        }

        let p = &mut c.preprocess;
        if let Some(v) = get("preprocess", "drop_classes") {
            p.drop_classes = if is_none(v) { Vec::new() } else { list(v) };
        }
        if let Some(v) = get("preprocess", "oversample_class") {
            p.oversample_class = if is_none(v) { None } else { Some(v.to_string()) };
        }
        if let Some(v) = get("preprocess", "oversample_factor") {
            p.oversample_factor = parse_num("preprocess", "oversample_factor", v)?;
        }
        if let Some(v) = get("preprocess", "split_ratio") {
            p.split_ratio = parse_f64("preprocess", "split_ratio", v)?;
        }
        if let Some(v) = get("preprocess", "split_seed") {
            p.split_seed = parse_num("preprocess", "split_seed", v)?;
        }

        if let Some(v) = get("ig", "bins") {
            c.ig.bins = parse_num("ig", "bins", v)?;
        }
        if let Some(v) = get("ig", "threshold") {
            c.ig.threshold = parse_f64("ig", "threshold", v)?;
        }

        let f = &mut c.rf.forest;
        if let Some(v) = get("rf", "n_trees") {
            f.n_trees = parse_num("rf", "n_trees", v)?;
        }
        if let Some(v) = get("rf", "seed") {
            f.seed = parse_num("rf", "seed", v)?;
        }
        if let Some(v) = get("rf", "max_depth") {
            f.max_depth = if is_none(v) { None } else { Some(parse_num("rf", "max_depth", v)?) };
        }
        if let Some(v) = get("rf", "min_samples_split") {
            f.min_samples_split = parse_num("rf", "min_samples_split", v)?;
        }
        if let Some(v) = get("rf", "features_per_split") {
            f.features_per_split = if is_none(v) || v == "auto" {
                None
            } else {
                Some(parse_num("rf", "features_per_split", v)?)
            };
        }
        if let Some(v) = get("rf", "threshold") {
            c.rf.threshold = parse_f64("rf", "threshold", v)?;
        }

        if let Some(v) = get("rfe", "patience") {
            c.rfe.patience = parse_num("rfe", "patience", v)?;
        }
        if let Some(v) = get("rfe", "seeds") {
            c.rfe.seeds = parse_seeds(v)?;
        }
        if let Some(v) = get("rfe", "epochs") {
            c.rfe.epochs = if is_none(v) { None } else { Some(parse_num("rfe", "epochs", v)?) };
        }
        if let Some(v) = get("rfe", "evaluator") {
            c.rfe.evaluator = v.to_string();
        }

        let m = &mut c.mlp;
        if let Some(v) = get("mlp", "hidden_sizes") {
            m.hidden_sizes = list(v)
                .iter()
                .map(|s| parse_num("mlp", "hidden_sizes", s))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("mlp", "learning_rate") {
            m.learning_rate = parse_f64("mlp", "learning_rate", v)?;
        }
        if let Some(v) = get("mlp", "batch_size") {
            m.batch_size = parse_num("mlp", "batch_size", v)?;
        }
        if let Some(v) = get("mlp", "max_epochs") {
            m.max_epochs = parse_num("mlp", "max_epochs", v)?;
        }
        if let Some(v) = get("mlp", "early_stop_patience") {
            m.early_stop_patience = parse_num("mlp", "early_stop_patience", v)?;
        }
        if let Some(v) = get("mlp", "loss") {
            m.loss = v.parse::<LossKind>()?;
        }
        if let Some(v) = get("mlp", "seed") {
            m.seed = parse_num("mlp", "seed", v)?;
        }
        if let Some(v) = get("mlp", "bn_epsilon") {
            m.bn_epsilon = parse_f64("mlp", "bn_epsilon", v)?;
        }
        if let Some(v) = get("mlp", "bn_momentum") {
            m.bn_momentum = parse_f64("mlp", "bn_momentum", v)?;
        }

        if let Some(v) = get("output", "dir") {
            c.output.dir = path(v);
        } else {
            c.output.dir = base.join("out");
        }
        if let Some(v) = get("output", "svg") {
            c.output.svg = parse_bool("output", "svg", v)?;
        }

        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.preprocess;
        if !(p.split_ratio > 0.0 && p.split_ratio < 1.0) {
            return Err(Error::Config("preprocess.split_ratio must be in (0, 1)".into()));
        }
        if p.oversample_factor == 0 {
            return Err(Error::Config("preprocess.oversample_factor must be at least 1".into()));
        }
        for class in p.drop_classes.iter().chain(&p.oversample_class) {
            if self.schema.class_index(class).is_none() {
                return Err(Error::Config(format!("class '{class}' is not declared in the schema")));
            }
        }
        if self.ig.bins < 2 {
            return Err(Error::Config("ig.bins must be at least 2".into()));
        }
        if self.rf.forest.n_trees == 0 || self.rf.forest.min_samples_split < 2 {
            return Err(Error::Config("rf.n_trees >= 1 and rf.min_samples_split >= 2 required".into()));
        }
        if self.rfe.patience == 0 || self.rfe.seeds.is_empty() {
            return Err(Error::Config("rfe.patience >= 1 and non-empty rfe.seeds required".into()));
        }
        if self.rfe.epochs == Some(0) {
            return Err(Error::Config("rfe.epochs must be at least 1".into()));
        }
        self.mlp.validate()
    }

    /// The MLP settings used inside the RFE evaluator.
    pub fn rfe_mlp(&self) -> MlpConfig {
        MlpConfig {
            max_epochs: self.rfe.epochs.unwrap_or(self.mlp.max_epochs),
            ..self.mlp.clone()
        }
    }

    pub fn require_inputs(&self) -> Result<(&Path, &Path)> {
        let train = self.data.train.as_deref().ok_or_else(|| Error::Config("data.train is not set".into()))?;
        let test = self.data.test.as_deref().ok_or_else(|| Error::Config("data.test is not set".into()))?;
        for p in [train, test] {
            if !p.exists() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok((train, test))
    }
}
