//! Held-out scoring and parameter recovery.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::clicklog::{ClickLog, Position, SessionRecord};
use crate::error::{Error, Result};
use crate::models::{bernoulli_ln, ModelInstance, ModelKind, TableName};
use crate::parallel::CHUNK;

/// Perplexity value; `Infinite` flags a cell where the model gave an
/// observed outcome probability 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perplexity {
    Finite(f64),
    Infinite,
}

impl Perplexity {
    pub fn value(self) -> f64 {
        match self {
            Perplexity::Finite(v) => v,
            Perplexity::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Perplexity::Infinite)
    }
}

impl std::fmt::Display for Perplexity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Perplexity::Finite(v) => write!(f, "{v:.6}"),
            Perplexity::Infinite => f.write_str("infinite"),
        }
    }
}

impl Serialize for Perplexity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Perplexity::Finite(v) => s.serialize_f64(*v),
            Perplexity::Infinite => s.serialize_str("infinite"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Natural-log likelihood of the whole log (−∞ if any cell is infinite).
    pub total_ll: f64,
    pub per_rank_perplexity: BTreeMap<Position, Perplexity>,
    pub overall_perplexity: Perplexity,
    pub n_sessions: usize,
    pub unseen_items: Vec<String>,
    pub unseen_topics: Vec<String>,
}

impl Serialize for EvalReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Ranks<'a>(&'a BTreeMap<Position, Perplexity>);
        impl Serialize for Ranks<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(self.0.len()))?;
                for (p, v) in self.0 {
                    m.serialize_entry(&p.key(), v)?;
                }
                m.end()
            }
        }
        let mut m = s.serialize_map(Some(6))?;
        if self.total_ll.is_finite() {
            m.serialize_entry("total_ll", &self.total_ll)?;
        } else {
            m.serialize_entry("total_ll", "-infinity")?;
        }
        m.serialize_entry("per_rank_perplexity", &Ranks(&self.per_rank_perplexity))?;
        m.serialize_entry("overall_perplexity", &self.overall_perplexity)?;
        m.serialize_entry("n_sessions", &self.n_sessions)?;
        m.serialize_entry("unseen_items", &self.unseen_items)?;
        m.serialize_entry("unseen_topics", &self.unseen_topics)?;
        m.end()
    }
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table: one row per rank plus the overall value.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>14}", "position", "perplexity");
        for (p, v) in &self.per_rank_perplexity {
            let _ = writeln!(out, "{:<10} {:>14}", p.key(), v.to_string());
        }
        let _ = writeln!(out, "{:<10} {:>14}", "overall", self.overall_perplexity.to_string());
        let _ = writeln!(out, "sessions: {}", self.n_sessions);
        if self.total_ll.is_finite() {
            let _ = writeln!(out, "log-likelihood: {:.6}", self.total_ll);
        } else {
            let _ = writeln!(out, "log-likelihood: -infinity");
        }
        if !self.unseen_items.is_empty() || !self.unseen_topics.is_empty() {
            let _ = writeln!(
                out,
                "unseen (default probability used): {} items, {} topics",
                self.unseen_items.len(),
                self.unseen_topics.len()
            );
        }
        out
    }
}

#[derive(Clone)]
struct Partial {
    ll: f64,
    log2: Vec<f64>,
    infinite: Vec<bool>,
}

/// Per-rank perplexity with observed clicks as priors.
pub fn evaluate(model: &ModelInstance, log: &ClickLog) -> Result<EvalReport> {
    if log.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty log".into()));
    }
    let m = model.bind(log.vocab());
    m.check_log(log)?;
    let shape = m.shape();
    let cells = shape.cells();
    let zero = Partial {
        ll: 0.0,
        log2: vec![0.0; cells],
        infinite: vec![false; cells],
    };
    let parts: Vec<Partial> = log
        .sessions()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = zero.clone();
            for s in chunk {
                let q = m.conditionals(s)?;
                for (cell, (&q, &c)) in q.iter().zip(&s.clicks).enumerate() {
                    let l2 = if c { q.log2() } else { (1.0 - q).log2() };
                    if l2 == f64::NEG_INFINITY {
                        acc.infinite[cell] = true;
                    } else {
                        acc.log2[cell] += l2;
                    }
                    acc.ll += bernoulli_ln(q, c);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let total = parts.into_iter().fold(zero, |mut a, b| {
        a.ll += b.ll;
        for k in 0..cells {
            a.log2[k] += b.log2[k];
            a.infinite[k] |= b.infinite[k];
        }
        a
    });
    let n = log.len() as f64;
    let mut per_rank = BTreeMap::new();
    let mut exponent_sum = 0.0;
    let mut any_infinite = false;
    for cell in 0..cells {
        let p = shape.position(cell);
        if total.infinite[cell] {
            any_infinite = true;
            per_rank.insert(p, Perplexity::Infinite);
        } else {
            let e = -total.log2[cell] / n;
            exponent_sum += e;
            per_rank.insert(p, Perplexity::Finite(e.exp2()));
        }
    }
    let overall = if any_infinite {
        Perplexity::Infinite
    } else {
        Perplexity::Finite((exponent_sum / cells as f64).exp2())
    };
    Ok(EvalReport {
        total_ll: if any_infinite { f64::NEG_INFINITY } else { total.ll },
        per_rank_perplexity: per_rank,
        overall_perplexity: overall,
        n_sessions: log.len(),
        unseen_items: m.unseen_items().to_vec(),
        unseen_topics: m.unseen_topics().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryError {
    pub max: f64,
    pub mean: f64,
    /// Number of compared quantities.
    pub count: usize,
}

/// Distance between two models of the same kind over identified quantities:
/// every cell's conditional under an all-zero prior for each distinct layout
/// of `reference`, plus position×item products for PBM and TrustPBM.
pub fn recovery_error(truth: &ModelInstance, fitted: &ModelInstance, reference: &ClickLog) -> Result<RecoveryError> {
    if truth.kind() != fitted.kind() {
        return Err(Error::Mismatch(format!(
            "cannot compare {} with {}",
            truth.kind(),
            fitted.kind()
        )));
    }
    if truth.shape() != fitted.shape() {
        return Err(Error::Mismatch(format!(
            "cannot compare shapes {} and {}",
            truth.shape(),
            fitted.shape()
        )));
    }
    let vocab = reference.vocab();
    let (a, b) = (truth.bind(vocab), fitted.bind(vocab));
    a.check_log(reference)?;
    let mut diffs = Vec::new();
    let mut layouts = BTreeSet::new();
    for s in reference.sessions() {
        if !layouts.insert((&s.items, &s.topics)) {
            continue;
        }
        let blank = SessionRecord {
            clicks: vec![false; s.clicks.len()],
            ..s.clone()
        };
        let (qa, qb) = (a.conditionals(&blank)?, b.conditionals(&blank)?);
        diffs.extend(qa.iter().zip(&qb).map(|(x, y)| (x - y).abs()));
    }
    if matches!(truth.kind(), ModelKind::Pbm | ModelKind::TrustPbm) {
        let items: BTreeSet<&String> = truth
            .table(TableName::Item)
            .into_iter()
            .flat_map(|t| t.keys())
            .collect();
        for p in truth.shape().positions() {
            for y in &items {
                let product = |m: &ModelInstance| {
                    let f = m.value(TableName::Position, &p.key()).unwrap();
                    let g = m.value(TableName::Item, y).unwrap();
                    let h = m.value(TableName::Trust, &p.key()).unwrap_or(0.0);
                    f * g + h
                };
                diffs.push((product(truth) - product(fitted)).abs());
            }
        }
    }
    if diffs.is_empty() {
        return Ok(RecoveryError {
            max: 0.0,
            mean: 0.0,
            count: 0,
        });
    }
    Ok(RecoveryError {
        max: diffs.iter().copied().fold(0.0, f64::max),
        mean: diffs.iter().sum::<f64>() / diffs.len() as f64,
        count: diffs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clicklog::{InterfaceKind, LayoutShape};
    use crate::models::tests::table;
    use crate::simulation::{random_instance, simulate_log, LayoutPolicy, SimConfig};

    fn rcm(zeta: f64, shape: LayoutShape) -> ModelInstance {
        ModelInstance::new(ModelKind::Rcm, shape, [(TableName::Zeta, table(&[("value", zeta)]))].into()).unwrap()
    }

    fn sim(kind: ModelKind, shape: LayoutShape, sessions: usize, seed: u64) -> (ModelInstance, ClickLog) {
        let cfg = SimConfig::with_counts(shape, InterfaceKind::SingleList, 8, 0, sessions, seed, LayoutPolicy::UniformWithoutReplacement);
        let m = random_instance(kind, shape, &cfg.vocab(), seed).unwrap();
        let log = simulate_log(&m, &cfg).unwrap();
        (m, log)
    }

    #[test]
    fn coin_model_has_perplexity_two() {
        let shape = LayoutShape { m: 1, n: 4 };
        let (_, log) = sim(ModelKind::Dbn, shape, 500, 3);
        let r = evaluate(&rcm(0.5, shape), &log).unwrap();
        assert!(r.per_rank_perplexity.values().all(|&p| p == Perplexity::Finite(2.0)));
        assert_eq!(r.overall_perplexity, Perplexity::Finite(2.0));
    }

    #[test]
    fn perfect_prediction_has_perplexity_one() {
        let shape = LayoutShape { m: 1, n: 3 };
        let zero = rcm(0.0, shape);
        let cfg = SimConfig::with_counts(shape, InterfaceKind::SingleList, 3, 0, 50, 1, LayoutPolicy::Fixed);
        let log = simulate_log(&zero, &cfg).unwrap();
        let r = evaluate(&zero, &log).unwrap();
        assert_eq!(r.overall_perplexity, Perplexity::Finite(1.0));
        assert_eq!(r.total_ll, 0.0);
    }

    #[test]
    fn impossible_observation_is_flagged_not_raised() {
        let shape = LayoutShape { m: 1, n: 2 };
        let (_, log) = sim(ModelKind::Rcm, shape, 50, 2);
        let r = evaluate(&rcm(0.0, shape), &log).unwrap();
        assert!(r.overall_perplexity.is_infinite());
        assert!(r.to_json().unwrap().contains("\"infinite\""));
    }

    #[test]
    fn evaluation_ignores_session_order() {
        let shape = LayoutShape { m: 1, n: 3 };
        let (m, log) = sim(ModelKind::Pbm, shape, 400, 5);
        let order: Vec<usize> = (0..log.len()).rev().collect();
        let (a, b) = (evaluate(&m, &log).unwrap(), evaluate(&m, &log.reordered(&order)).unwrap());
        for (x, y) in a.per_rank_perplexity.values().zip(b.per_rank_perplexity.values()) {
            assert!((x.value() - y.value()).abs() < 1e-12);
        }
    }

    #[test]
    fn recovery_of_identical_and_rescaled_models_is_zero() {
        let shape = LayoutShape { m: 1, n: 3 };
        let (m, log) = sim(ModelKind::Pbm, shape, 100, 7);
        assert_eq!(recovery_error(&m, &m, &log).unwrap().max, 0.0);
        // c = max g keeps both rescaled tables inside [0,1]
        let c = m.table(TableName::Item).unwrap().values().copied().fold(0.0, f64::max);
        let mut tables = m.tables().clone();
        for v in tables.get_mut(&TableName::Position).unwrap().values_mut() {
            *v *= c;
        }
        for v in tables.get_mut(&TableName::Item).unwrap().values_mut() {
            *v /= c;
        }
        let scaled = ModelInstance::new(ModelKind::Pbm, shape, tables).unwrap();
        assert!(recovery_error(&m, &scaled, &log).unwrap().max < 1e-15);
        let other = rcm(0.5, shape);
        assert!(matches!(recovery_error(&m, &other, &log), Err(Error::Mismatch(_))));
    }
}
