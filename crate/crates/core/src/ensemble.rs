//! Filter stage: threshold the IG and RF rankings, union the survivors and
//! append every categorical feature.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Schema;
use crate::error::{Error, Result};

/// Features whose score is strictly greater than `tau`.
pub fn apply_threshold<'a, I>(scores: I, tau: f64) -> Result<BTreeSet<String>>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    if !tau.is_finite() {
        return Err(Error::Config(format!("threshold {tau} is not finite")));
    }
    Ok(scores
        .into_iter()
        .filter(|&(_, s)| s > tau)
        .map(|(f, _)| f.to_string())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Union,
    Intersection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub ig_threshold: Option<f64>,
    pub rf_threshold: Option<f64>,
    pub combine: Combine,
    pub ig_survivors: Vec<String>,
    pub rf_survivors: Vec<String>,
    pub common: Vec<String>,
    pub numeric_size: usize,
    pub categorical_appended: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSubset {
    /// Schema order.
    pub retained: Vec<String>,
    pub provenance: Provenance,
}

impl FeatureSubset {
    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Combines two numeric survivor sets and appends all categorical features.
pub fn combine_with_categoricals(
    ig_set: &BTreeSet<String>,
    rf_set: &BTreeSet<String>,
    schema: &Schema,
    combine: Combine,
    thresholds: (Option<f64>, Option<f64>),
) -> Result<FeatureSubset> {
    let numeric: BTreeSet<&str> = schema.numeric_names().into_iter().collect();
    for f in ig_set.iter().chain(rf_set) {
        if !numeric.contains(f.as_str()) {
            return Err(Error::Data(format!("'{f}' is not a numeric feature")));
        }
    }
    let chosen: BTreeSet<&String> = match combine {
        Combine::Union => ig_set.union(rf_set).collect(),
        Combine::Intersection => ig_set.intersection(rf_set).collect(),
    };
    let categoricals: Vec<String> = schema
        .categorical_names()
        .into_iter()
        .map(String::from)
        .collect();
    let retained: Vec<String> = schema
        .feature_names()
        .into_iter()
        .filter(|f| chosen.iter().any(|c| c.as_str() == *f) || categoricals.iter().any(|c| c == f))
        .map(String::from)
        .collect();
    Ok(FeatureSubset {
        provenance: Provenance {
            ig_threshold: thresholds.0,
            rf_threshold: thresholds.1,
            combine,
            ig_survivors: in_schema_order(ig_set, schema),
            rf_survivors: in_schema_order(rf_set, schema),
            common: in_schema_order(
                &ig_set.intersection(rf_set).cloned().collect(),
                schema,
            ),
            numeric_size: chosen.len(),
            categorical_appended: categoricals,
        },
        retained,
    })
}

/// Union of the two survivor sets plus every categorical feature.
pub fn union_with_categoricals(
    ig_set: &BTreeSet<String>,
    rf_set: &BTreeSet<String>,
    schema: &Schema,
) -> Result<FeatureSubset> {
    combine_with_categoricals(ig_set, rf_set, schema, Combine::Union, (None, None))
}

fn in_schema_order(set: &BTreeSet<String>, schema: &Schema) -> Vec<String> {
    schema
        .feature_names()
        .into_iter()
        .filter(|f| set.contains(*f))
        .map(String::from)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, ColumnKind};
    use proptest::prelude::*;

    fn schema(numeric: usize, categorical: usize) -> Schema {
        let mut cols: Vec<Column> = (0..numeric)
            .map(|i| Column { name: format!("n{i}"), kind: ColumnKind::Numeric })
            .collect();
        cols.extend((0..categorical).map(|i| Column { name: format!("c{i}"), kind: ColumnKind::Categorical }));
        cols.push(Column { name: "y".into(), kind: ColumnKind::Label });
        Schema::new(cols, vec!["a".into()]).unwrap()
    }

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn threshold_is_strict() {
        assert!(apply_threshold([("a", 0.25)], 0.25).unwrap().is_empty());
        assert_eq!(apply_threshold([("a", 0.1), ("b", 0.0)], -1.0).unwrap().len(), 2);
        assert!(apply_threshold([("a", 0.1)], f64::NAN).is_err());
    }

    #[test]
    fn disjoint_sets_with_categorical() {
        let s = schema(5, 1);
        let out = union_with_categoricals(&set(&["n0", "n1"]), &set(&["n2", "n3", "n4"]), &s).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out.retained, vec!["n0", "n1", "n2", "n3", "n4", "c0"]);
        assert_eq!(out.provenance.numeric_size, 5);
    }

    #[test]
    fn idempotent_union() {
        let s = schema(4, 0);
        let a = set(&["n1", "n3"]);
        let out = union_with_categoricals(&a, &a, &s).unwrap();
        assert_eq!(out.retained, vec!["n1", "n3"]);
    }

    #[test]
    fn rejects_non_numeric() {
        let s = schema(2, 1);
        assert!(union_with_categoricals(&set(&["c0"]), &set(&[]), &s).is_err());
    }

    #[test]
    fn paper_sized_union() {
        // 22 IG survivors, 19 RF survivors, 17 in common
        let s = schema(39, 3);
        let ig: BTreeSet<String> = (0..22).map(|i| format!("n{i}")).collect();
        let rf: BTreeSet<String> = (5..22).chain(30..32).map(|i| format!("n{i}")).collect();
        assert_eq!(rf.len(), 19);
        let out = union_with_categoricals(&ig, &rf, &s).unwrap();
        assert_eq!(out.provenance.numeric_size, 24);
        assert_eq!(out.len(), 27);
        let inter = combine_with_categoricals(&ig, &rf, &s, Combine::Intersection, (None, None)).unwrap();
        assert_eq!(inter.len(), 20);
    }

    proptest! {
        #[test]
        fn inclusion_exclusion_and_monotonicity(
            scores in prop::collection::vec((0.0f64..1.0, 0.0f64..0.1), 1..30),
            t1 in 0.0f64..1.0, t2 in 0.0f64..0.1, bump in 0.0f64..0.5,
        ) {
            let s = schema(scores.len(), 2);
            let names: Vec<String> = (0..scores.len()).map(|i| format!("n{i}")).collect();
            let ig = apply_threshold(names.iter().map(String::as_str).zip(scores.iter().map(|p| p.0)), t1).unwrap();
            let rf = apply_threshold(names.iter().map(String::as_str).zip(scores.iter().map(|p| p.1)), t2).unwrap();
            let out = union_with_categoricals(&ig, &rf, &s).unwrap();
            let common = ig.intersection(&rf).count();
            prop_assert_eq!(out.provenance.numeric_size, ig.len() + rf.len() - common);
            prop_assert!(out.provenance.numeric_size >= ig.len().max(rf.len()));
            prop_assert!(out.retained.contains(&"c0".to_string()) && out.retained.contains(&"c1".to_string()));

            let ig2 = apply_threshold(names.iter().map(String::as_str).zip(scores.iter().map(|p| p.0)), t1 + bump).unwrap();
            let rf2 = apply_threshold(names.iter().map(String::as_str).zip(scores.iter().map(|p| p.1)), t2 + bump / 10.0).unwrap();
            let out2 = union_with_categoricals(&ig2, &rf2, &s).unwrap();
            prop_assert!(out2.retained.iter().all(|f| out.retained.contains(f)));
        }
    }
}
