//! Bundled synthetic fixture against reviewed reference outputs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use igrf_core::config::PipelineConfig;
use igrf_core::pipeline::{SelectMode, Workspace};
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    preprocess_outputs: BTreeMap<String, String>,
    selected: BTreeMap<String, Vec<String>>,
    accuracy: BTreeMap<String, f64>,
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic")
}

fn config(out: &std::path::Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::parse(
        &std::fs::read_to_string(fixture_dir().join("config.ini")).unwrap(),
        &fixture_dir(),
        |_| None,
    )
    .unwrap();
    cfg.output.dir = out.to_path_buf();
    cfg
}

fn golden() -> Golden {
    serde_json::from_str(&std::fs::read_to_string(fixture_dir().join("golden.json")).unwrap()).unwrap()
}

#[test]
fn fixture_matches_golden_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ws = Workspace::open(config(tmp.path())).unwrap();
    let reports = ws.pipeline(&[SelectMode::IgrfRfe, SelectMode::AllFeatures]).unwrap();
    let g = golden();

    assert_eq!(ws.manifest().stages["preprocess"].outputs, g.preprocess_outputs);
    for (mode, features) in &g.selected {
        assert_eq!(&ws.manifest().selected_features[mode], features, "{mode}");
    }
    for (mode, report) in &reports {
        assert_eq!(report.accuracy, g.accuracy[mode.as_str()], "{mode}");
    }
}

#[test]
fn rerun_reproduces_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let run = || {
        let mut ws = Workspace::open(config(tmp.path())).unwrap();
        ws.pipeline(&[SelectMode::Union]).unwrap();
        std::fs::read(tmp.path().join("manifest.json")).unwrap()
    };
    let first = run();
    std::fs::remove_file(tmp.path().join("manifest.json")).unwrap();
    assert_eq!(first, run());
}
