//! Wrapper stage: greedy backward elimination with patience, scoring each
//! candidate subset by the mean of an evaluator over a list of seeds.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EncodedMatrix;
use crate::error::{Error, Result};
use crate::mlp::{self, MlpConfig};

/// Scores a feature subset (higher is better). Must be deterministic for a
/// given `(subset, seed)` and must not depend on the order of `subset`.
pub trait Evaluator: Sync {
    fn score(&self, subset: &[String], seed: u64) -> Result<f64>;
}

pub const DEFAULT_SEEDS: std::ops::RangeInclusive<u64> = 2022..=2031;

pub fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.collect()
}

/// Mean score over `seeds`. Per-seed scores are summed in seed order so the
/// result does not depend on scheduling.
pub fn evaluate_elimination(ev: &dyn Evaluator, subset: &[String], seeds: &[u64]) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one evaluation seed is required".into()));
    }
    let scores: Vec<f64> = seeds
        .par_iter()
        .map(|&seed| {
            let s = ev
                .score(subset, seed)
                .map_err(|e| Error::Evaluator { seed, source: Box::new(e) })?;
            if s.is_finite() {
                Ok(s)
            } else {
                Err(Error::Evaluator {
                    seed,
                    source: Box::new(Error::Numeric(format!("score {s} is not finite"))),
                })
            }
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / seeds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    /// One entry per feature that was tried for removal, in subset order.
    pub scores: Vec<CandidateScore>,
    pub removed: String,
    pub local_best: f64,
    pub improved: bool,
    pub patience_after: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PatienceExhausted,
    SingleFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeTrace {
    pub init_features: Vec<String>,
    pub init_score: f64,
    pub seeds: Vec<u64>,
    pub patience: usize,
    pub iterations: Vec<Iteration>,
    pub best_performance: f64,
    pub selected_features: Vec<String>,
    /// Removed features in removal order.
    pub rm_list: Vec<String>,
    pub patience_remaining: usize,
    pub stop_reason: StopReason,
    /// Subset evaluations (each averaged over all seeds).
    pub subset_evaluations: usize,
}

impl RfeTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Greedy backward elimination.
///
/// Starting from `init_features` (whose score is the first best), each
/// iteration tries removing every remaining feature, removes the one whose
/// removal scores highest (ties go to the earliest in `init_features`
/// order), and compares that score with the best so far. A strict
/// improvement records the new subset and resets patience; anything else
/// spends one unit. Stops when patience reaches zero or one feature is left.
pub fn rfe(
    ev: &dyn Evaluator,
    init_features: &[String],
    patience: usize,
    seeds: &[u64],
) -> Result<(Vec<String>, RfeTrace)> {
    if init_features.is_empty() {
        return Err(Error::Config("RFE needs at least one feature".into()));
    }
    if patience == 0 {
        return Err(Error::Config("RFE patience must be at least 1".into()));
    }
    let unique: BTreeSet<&String> = init_features.iter().collect();
    if unique.len() != init_features.len() {
        return Err(Error::Config("duplicate feature in RFE input".into()));
    }

    let mut keep: Vec<String> = init_features.to_vec();
    let init_score = evaluate_elimination(ev, &keep, seeds)?;
    let mut evaluations = 1;
    let mut best = init_score;
    let mut selected = keep.clone();
    let mut remaining = patience;
    let mut iterations = Vec::new();
    let mut rm_list = Vec::new();

    let stop_reason = loop {
        if remaining == 0 {
            break StopReason::PatienceExhausted;
        }
        if keep.len() <= 1 {
            break StopReason::SingleFeature;
        }
        let scores: Vec<f64> = keep
            .iter()
            .map(|f| {
                let trial: Vec<String> = keep.iter().filter(|g| *g != f).cloned().collect();
                evaluate_elimination(ev, &trial, seeds)
            })
            .collect::<Result<_>>()?;
        evaluations += keep.len();

        let mut idx = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[idx] {
                idx = i;
            }
        }
        let local_best = scores[idx];
        let record: Vec<CandidateScore> = keep
            .iter()
            .zip(&scores)
            .map(|(f, &score)| CandidateScore { feature: f.clone(), score })
            .collect();
        let removed = keep.remove(idx);
        rm_list.push(removed.clone());

        let improved = local_best > best;
        if improved {
            best = local_best;
            selected = keep.clone();
            remaining = patience;
        } else {
            remaining -= 1;
        }
        iterations.push(Iteration {
            scores: record,
            removed,
            local_best,
            improved,
            patience_after: remaining,
        });
    };

    let trace = RfeTrace {
        init_features: init_features.to_vec(),
        init_score,
        seeds: seeds.to_vec(),
        patience,
        iterations,
        best_performance: best,
        selected_features: selected.clone(),
        rm_list,
        patience_remaining: remaining,
        stop_reason,
        subset_evaluations: evaluations,
    };
    Ok((selected, trace))
}

/// Counts calls to the wrapped evaluator.
pub struct CountingEvaluator<E> {
    pub inner: E,
    calls: AtomicUsize,
}

impl<E: Evaluator> CountingEvaluator<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<E: Evaluator> Evaluator for CountingEvaluator<E> {
    fn score(&self, subset: &[String], seed: u64) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(subset, seed)
    }
}

/// Closed-form evaluators for exercising the elimination logic without
/// training anything.
#[derive(Debug, Clone, PartialEq)]
pub enum StubEvaluator {
    /// Same score for every subset.
    Constant(f64),
    /// `|S| / divisor`: every removal makes things worse.
    Size(f64),
    /// `1 - step * |S △ target|`: best exactly at `target`.
    Peaked { target: BTreeSet<String>, step: f64 },
}

impl StubEvaluator {
    pub fn peaked<I: IntoIterator<Item = S>, S: Into<String>>(target: I) -> Self {
        StubEvaluator::Peaked {
            target: target.into_iter().map(Into::into).collect(),
            step: 0.1,
        }
    }

    /// Parses `constant:<v>`, `size:<divisor>` or `peaked:<f1>,<f2>,...`
    /// (the `stub:` prefix is optional).
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.strip_prefix("stub:").unwrap_or(spec);
        let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
        let number = |a: &str| {
            a.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("bad number '{a}' in evaluator '{spec}'")))
        };
        match kind {
            "constant" => Ok(StubEvaluator::Constant(number(arg)?)),
            "size" => {
                let d = number(arg)?;
                if d <= 0.0 {
                    return Err(Error::Config("size divisor must be positive".into()));
                }
                Ok(StubEvaluator::Size(d))
            }
            "peaked" => Ok(StubEvaluator::peaked(arg.split(',').map(str::trim).filter(|s| !s.is_empty()))),
            _ => Err(Error::Config(format!("unknown evaluator '{spec}'"))),
        }
    }
}

impl Evaluator for StubEvaluator {
    fn score(&self, subset: &[String], _seed: u64) -> Result<f64> {
        Ok(match self {
            StubEvaluator::Constant(v) => *v,
            StubEvaluator::Size(d) => subset.len() as f64 / d,
            StubEvaluator::Peaked { target, step } => {
                let s: BTreeSet<&String> = subset.iter().collect();
                let sym = s.iter().filter(|f| !target.contains(**f)).count()
                    + target.iter().filter(|f| !s.contains(f)).count();
                1.0 - step * sym as f64
            }
        })
    }
}

/// Trains the MLP on the subset's encoded columns and reports validation
/// accuracy.
pub struct MlpEvaluator<'a> {
    pub train: &'a EncodedMatrix,
    pub val: &'a EncodedMatrix,
    pub config: MlpConfig,
}

impl Evaluator for MlpEvaluator<'_> {
    fn score(&self, subset: &[String], seed: u64) -> Result<f64> {
        let train = self.train.select_features(subset)?;
        let val = self.val.select_features(subset)?;
        if train.width() == 0 {
            return Err(Error::Data("subset encodes to zero columns".into()));
        }
        let config = MlpConfig { seed, ..self.config.clone() };
        let model = mlp::fit(&config, &train, &val)?;
        mlp::accuracy(&model, &val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn constant_evaluator_spends_patience() {
        let ev = StubEvaluator::Constant(0.7);
        let (sel, trace) = rfe(&ev, &names(10), 3, &[1]).unwrap();
        assert_eq!(sel, names(10));
        assert_eq!(trace.iterations.len(), 3);
        assert_eq!(trace.rm_list, vec!["f0", "f1", "f2"]);
        assert_eq!(trace.stop_reason, StopReason::PatienceExhausted);
    }

    #[test]
    fn peaked_evaluator_finds_target() {
        let ev = StubEvaluator::peaked(["f0", "f2"]);
        let (sel, trace) = rfe(&ev, &names(5), 2, &[1, 2]).unwrap();
        assert_eq!(sel, vec!["f0", "f2"]);
        assert!((trace.best_performance - 1.0).abs() < 1e-12);
        assert_eq!(trace.rm_list[..3], ["f1", "f3", "f4"]);
    }

    #[test]
    fn monotone_worsening_keeps_everything() {
        let ev = StubEvaluator::Size(10.0);
        let (sel, trace) = rfe(&ev, &names(6), 1, &[7]).unwrap();
        assert_eq!(sel, names(6));
        assert_eq!(trace.iterations.len(), 1);
    }

    #[test]
    fn single_feature_runs_nothing() {
        let ev = CountingEvaluator::new(StubEvaluator::Constant(0.5));
        let (sel, trace) = rfe(&ev, &names(1), 3, &[1, 2, 3]).unwrap();
        assert_eq!(sel, names(1));
        assert!(trace.iterations.is_empty());
        assert_eq!(ev.calls(), 3);
    }

    #[test]
    fn rejects_bad_input() {
        let ev = StubEvaluator::Constant(0.5);
        assert!(rfe(&ev, &[], 3, &[1]).is_err());
        assert!(rfe(&ev, &names(3), 0, &[1]).is_err());
        assert!(rfe(&ev, &names(3), 1, &[]).is_err());
        assert!(rfe(&ev, &["a".into(), "a".into()], 1, &[1]).is_err());
    }

    struct Failing;
    impl Evaluator for Failing {
        fn score(&self, _: &[String], seed: u64) -> Result<f64> {
            if seed == 5 {
                Err(Error::Numeric("diverged".into()))
            } else {
                Ok(0.5)
            }
        }
    }

    #[test]
    fn evaluator_error_names_seed() {
        let err = evaluate_elimination(&Failing, &names(2), &[4, 5]).unwrap_err();
        assert!(matches!(err, Error::Evaluator { seed: 5, .. }));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn stub_parsing() {
        assert_eq!(StubEvaluator::parse("stub:constant:0.7").unwrap(), StubEvaluator::Constant(0.7));
        assert_eq!(StubEvaluator::parse("size:10").unwrap(), StubEvaluator::Size(10.0));
        assert_eq!(StubEvaluator::parse("peaked:a,b").unwrap(), StubEvaluator::peaked(["a", "b"]));
        assert!(StubEvaluator::parse("bogus").is_err());
        assert!(StubEvaluator::parse("size:0").is_err());
    }

    #[test]
    fn trace_json_round_trip() {
        let ev = StubEvaluator::peaked(["f1"]);
        let (_, trace) = rfe(&ev, &names(4), 2, &[1]).unwrap();
        assert_eq!(RfeTrace::from_json(&trace.to_json().unwrap()).unwrap(), trace);
    }
}
