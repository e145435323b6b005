//! Planted-signal dataset for end-to-end checks of the selection pipeline.
//!
//! Five informative features `sig0..sig4` are uniform on `[0, 1)`; the label
//! is the tertile bucket of their sum (`low`, `mid`, `high`). `dup0..dup4`
//! are exact copies of the informative features and `noise0..noise9` are
//! independent uniforms.

use rand::Rng as _;

use crate::data::{Column, ColumnKind, Schema, Table};
use crate::error::Result;
use crate::rng::seeded;

pub const N_SIGNAL: usize = 5;
pub const N_NOISE: usize = 10;
pub const CLASSES: [&str; 3] = ["low", "mid", "high"];

/// Bucket edges for a sum of five uniforms, close to its tertiles.
pub const SUM_EDGES: [f64; 2] = [2.222, 2.778];

pub fn signal_name(i: usize) -> String {
    format!("sig{i}")
}

pub fn duplicate_name(i: usize) -> String {
    format!("dup{i}")
}

pub fn noise_name(i: usize) -> String {
    format!("noise{i}")
}

pub fn schema() -> Schema {
    let mut columns = Vec::new();
    let names = (0..N_SIGNAL)
        .map(signal_name)
        .chain((0..N_SIGNAL).map(duplicate_name))
        .chain((0..N_NOISE).map(noise_name));
    for name in names {
        columns.push(Column { name, kind: ColumnKind::Numeric });
    }
    columns.push(Column { name: "class".into(), kind: ColumnKind::Label });
    Schema::new(columns, CLASSES.iter().map(|s| s.to_string()).collect()).expect("static schema is valid")
}

/// Signal group index of a feature (`sig3` and `dup3` are both group 3).
pub fn signal_group(feature: &str) -> Option<usize> {
    feature
        .strip_prefix("sig")
        .or_else(|| feature.strip_prefix("dup"))
        .and_then(|i| i.parse().ok())
}

pub fn is_noise(feature: &str) -> bool {
    feature.starts_with("noise")
}

pub fn generate(rows: usize, seed: u64) -> Result<Table> {
    let mut rng = seeded(seed);
    let width = 2 * N_SIGNAL + N_NOISE;
    let mut numeric = Vec::with_capacity(rows * width);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let signal: Vec<f64> = (0..N_SIGNAL).map(|_| rng.gen::<f64>()).collect();
        let sum: f64 = signal.iter().sum();
        labels.push(SUM_EDGES.iter().filter(|&&e| sum >= e).count());
        numeric.extend_from_slice(&signal);
        numeric.extend_from_slice(&signal);
        numeric.extend((0..N_NOISE).map(|_| rng.gen::<f64>()));
    }
    Table::from_parts(schema(), numeric, Vec::new(), Vec::new(), labels)
}
