//! Synthetic layouts and click sampling.
//!
//! Session `k` uses [`Stream::new(seed, k)`](Stream::new): first the layout
//! draws, then one uniform per cell in sampling order. Sessions are generated
//! in parallel and assembled in index order, so a log is a pure function of
//! the model and the config.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::clicklog::{ClickLog, InterfaceKind, ItemId, LayoutShape, Position, SessionRecord, TopicId, Vocab};
use crate::error::{Error, Result};
use crate::models::{BoundModel, KeyKind, ModelInstance, ModelKind, RowState, Table, TableName, SCALAR_KEY};
use crate::rng::Stream;
use crate::taxonomy::topological_order;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutPolicy {
    /// Items (and topics) drawn uniformly without replacement per session.
    UniformWithoutReplacement,
    /// The first `m·n` items (and first `m` topics) in row-major order, every session.
    Fixed,
}

impl LayoutPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            LayoutPolicy::UniformWithoutReplacement => "uniform_without_replacement",
            LayoutPolicy::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for LayoutPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_without_replacement" | "uniform" => Ok(LayoutPolicy::UniformWithoutReplacement),
            "fixed" => Ok(LayoutPolicy::Fixed),
            other => Err(Error::Config(format!(
                "unknown layout policy `{other}` (expected uniform_without_replacement or fixed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub shape: LayoutShape,
    pub kind: InterfaceKind,
    pub item_universe: Vec<String>,
    pub topic_universe: Vec<String>,
    pub sessions: usize,
    pub seed: u64,
    pub layout_policy: LayoutPolicy,
}

pub fn item_names(count: usize) -> Vec<String> {
    (1..=count).map(|k| format!("item-{k}")).collect()
}

pub fn topic_names(count: usize) -> Vec<String> {
    (1..=count).map(|k| format!("topic-{k}")).collect()
}

impl SimConfig {
    /// Config with generated universes `item-1..` and `topic-1..`.
    pub fn with_counts(
        shape: LayoutShape,
        kind: InterfaceKind,
        items: usize,
        topics: usize,
        sessions: usize,
        seed: u64,
        layout_policy: LayoutPolicy,
    ) -> Self {
        SimConfig {
            shape,
            kind,
            item_universe: item_names(items),
            topic_universe: if kind.has_topics() { topic_names(topics) } else { Vec::new() },
            sessions,
            seed,
            layout_policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sessions < 1 {
            return Err(Error::Config("sessions must be ≥ 1".into()));
        }
        if self.kind == InterfaceKind::SingleList && self.shape.m != 1 {
            return Err(Error::Config(format!(
                "single_list needs exactly one row, shape is {}",
                self.shape
            )));
        }
        let cells = self.shape.cells();
        if self.item_universe.len() < cells {
            return Err(Error::Config(format!(
                "item universe of {} is too small for {} cells",
                self.item_universe.len(),
                cells
            )));
        }
        if self.kind.has_topics() && self.topic_universe.len() < self.shape.m {
            return Err(Error::Config(format!(
                "topic universe of {} is too small for {} rows",
                self.topic_universe.len(),
                self.shape.m
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.item_universe.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Config(format!("duplicate item `{dup}` in universe")));
        }
        Ok(())
    }

    /// Vocabulary whose ids are universe indices.
    pub fn vocab(&self) -> Vocab {
        let topics: &[String] = if self.kind.has_topics() { &self.topic_universe } else { &[] };
        Vocab::from_names(&self.item_universe, topics)
    }
}

/// Layout skeleton for one session; ids index [`SimConfig::vocab`].
pub fn sample_layout(cfg: &SimConfig, stream: &mut Stream) -> Result<SessionRecord> {
    cfg.validate()?;
    let cells = cfg.shape.cells();
    let (items, topics) = match cfg.layout_policy {
        LayoutPolicy::Fixed => ((0..cells).collect(), (0..cfg.shape.m).collect()),
        LayoutPolicy::UniformWithoutReplacement => {
            let items = stream.distinct(cfg.item_universe.len(), cells);
            let topics = if cfg.kind.has_topics() {
                stream.distinct(cfg.topic_universe.len(), cfg.shape.m)
            } else {
                Vec::new()
            };
            (items, topics)
        }
    };
    let items: Vec<usize> = items;
    let topics: Vec<usize> = topics;
    Ok(SessionRecord {
        kind: cfg.kind,
        shape: cfg.shape,
        topics: cfg
            .kind
            .has_topics()
            .then(|| topics.iter().map(|&t| TopicId(t as u32)).collect()),
        items: items.iter().map(|&y| ItemId(y as u32)).collect(),
        clicks: vec![false; cells],
    })
}

/// Sampling order for a model, checked once so that no position reads a
/// prior that has not been sampled yet.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    order: Vec<Position>,
}

impl SamplingPlan {
    pub fn new(kind: ModelKind, shape: LayoutShape) -> Result<Self> {
        let seq = kind.descriptor().seq().clone();
        let order = topological_order(&seq, shape)?;
        let cond: Vec<Vec<Position>> = order.iter().map(|&p| seq.cond_clicks(p, shape)).collect();
        check_order(&order, &cond, shape)?;
        Ok(SamplingPlan { order })
    }

    pub fn order(&self) -> &[Position] {
        &self.order
    }
}

/// Every conditioning position must come earlier in `order`, and within a
/// row ranks must be visited left to right (the row state advances in rank order).
pub(crate) fn check_order(order: &[Position], cond: &[Vec<Position>], shape: LayoutShape) -> Result<()> {
    let mut sampled = vec![false; shape.cells()];
    let mut next_rank = vec![1usize; shape.m];
    for (p, prior) in order.iter().zip(cond) {
        if let Some(q) = prior.iter().find(|q| !sampled[shape.index(**q)]) {
            return Err(Error::Internal(format!("{p} would read unsampled prior {q}")));
        }
        if p.j != next_rank[p.i - 1] {
            return Err(Error::Internal(format!("{p} sampled out of rank order")));
        }
        next_rank[p.i - 1] += 1;
        sampled[shape.index(*p)] = true;
    }
    Ok(())
}

/// Draws the click matrix for `skeleton` following `plan`.
pub fn sample_clicks(
    m: &BoundModel,
    plan: &SamplingPlan,
    skeleton: &SessionRecord,
    stream: &mut Stream,
) -> Result<SessionRecord> {
    m.check_session(skeleton)?;
    let shape = m.shape();
    let mut s = skeleton.clone();
    let mut states = vec![RowState::start(); shape.m];
    for &p in &plan.order {
        let st = &mut states[p.i - 1];
        let q = m.prob(&s, p.i, p.j, st);
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Internal(format!("conditional at {p} is {q}, outside [0,1]")));
        }
        let c = stream.bernoulli(q);
        s.clicks[shape.index(p)] = c;
        m.observe(&s, p.i, p.j, st, c);
    }
    Ok(s)
}

/// Simulates `cfg.sessions` sessions from `model`.
pub fn simulate_log(model: &ModelInstance, cfg: &SimConfig) -> Result<ClickLog> {
    cfg.validate()?;
    if model.shape() != cfg.shape {
        return Err(Error::Mismatch(format!(
            "model shape {} differs from config shape {}",
            model.shape(),
            cfg.shape
        )));
    }
    if model.kind().needs_topics() && !cfg.kind.has_topics() {
        return Err(Error::Mismatch(format!(
            "{} needs a carousel interface, config has {}",
            model.kind(),
            cfg.kind
        )));
    }
    let vocab = cfg.vocab();
    let bound = model.bind(&vocab);
    let plan = SamplingPlan::new(model.kind(), cfg.shape)?;
    let sessions: Vec<SessionRecord> = (0..cfg.sessions)
        .into_par_iter()
        .map(|k| {
            let mut stream = Stream::new(cfg.seed, k as u64);
            let skeleton = sample_layout(cfg, &mut stream)?;
            sample_clicks(&bound, &plan, &skeleton, &mut stream)
        })
        .collect::<Result<_>>()?;
    let mut log = ClickLog::new();
    for s in &sessions {
        log.push_from(s, &vocab)?;
    }
    Ok(log)
}

/// Random parameter tables over `vocab`, entries in (0.05, 0.95); TrustPBM
/// additive terms are drawn inside the remaining mass so f·g+h ≤ 1 holds.
pub fn random_instance(kind: ModelKind, shape: LayoutShape, vocab: &Vocab, seed: u64) -> Result<ModelInstance> {
    let mut stream = Stream::new(seed, u64::MAX);
    let mut draw = || stream.uniform_in(0.05, 0.95);
    let mut tables = BTreeMap::new();
    for &(name, key) in kind.tables() {
        let keys: Vec<String> = match key {
            KeyKind::Scalar => vec![SCALAR_KEY.to_owned()],
            KeyKind::Cell => shape.positions().map(|p| p.key()).collect(),
            KeyKind::CellLastClick => shape
                .positions()
                .flat_map(|p| (0..p.j).map(move |r| crate::models::last_click_key(p, r)))
                .collect(),
            KeyKind::Item => vocab.items().to_vec(),
            KeyKind::Topic => vocab.topics().to_vec(),
        };
        let table: Table = keys.into_iter().map(|k| (k, draw())).collect();
        tables.insert(name, table);
    }
    if kind == ModelKind::TrustPbm {
        let gmax = tables[&TableName::Item]
            .values()
            .fold(crate::models::DEFAULT_UNSEEN, |a, &b| a.max(b));
        let f = tables[&TableName::Position].clone();
        for (key, h) in tables.get_mut(&TableName::Trust).unwrap().iter_mut() {
            *h *= 1.0 - f[key] * gmax;
        }
    }
    crate::models::make_model(kind, shape, vocab, tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::table;

    fn rcm(zeta: f64, shape: LayoutShape) -> ModelInstance {
        ModelInstance::new(ModelKind::Rcm, shape, [(TableName::Zeta, table(&[("value", zeta)]))].into()).unwrap()
    }

    fn cfg(shape: LayoutShape, items: usize, sessions: usize, policy: LayoutPolicy) -> SimConfig {
        let kind = if shape.m == 1 { InterfaceKind::SingleList } else { InterfaceKind::Grid };
        SimConfig::with_counts(shape, kind, items, 0, sessions, 42, policy)
    }

    #[test]
    fn zero_sessions_is_a_config_error() {
        let shape = LayoutShape { m: 1, n: 2 };
        let err = simulate_log(&rcm(0.5, shape), &cfg(shape, 2, 0, LayoutPolicy::Fixed)).unwrap_err();
        assert_eq!(err.to_string(), "sessions must be ≥ 1");
    }

    #[test]
    fn degenerate_rcm_gives_constant_clicks() {
        let shape = LayoutShape { m: 2, n: 3 };
        for (zeta, expect) in [(0.0, false), (1.0, true)] {
            let log = simulate_log(&rcm(zeta, shape), &cfg(shape, 6, 50, LayoutPolicy::UniformWithoutReplacement)).unwrap();
            assert!(log.sessions().iter().all(|s| s.clicks.iter().all(|&c| c == expect)));
        }
    }

    #[test]
    fn fixed_layout_repeats_and_uniform_layout_permutes() {
        let shape = LayoutShape { m: 2, n: 2 };
        let fixed = cfg(shape, 10, 1, LayoutPolicy::Fixed);
        let mut s = Stream::new(1, 0);
        let a = sample_layout(&fixed, &mut s).unwrap();
        let b = sample_layout(&fixed, &mut s).unwrap();
        assert_eq!(a, b);
        let full = cfg(shape, 4, 1, LayoutPolicy::UniformWithoutReplacement);
        for k in 0..20 {
            let mut ids: Vec<u32> = sample_layout(&full, &mut Stream::new(5, k)).unwrap().items.iter().map(|y| y.0).collect();
            ids.sort();
            assert_eq!(ids, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn uniform_layouts_have_no_duplicates() {
        let shape = LayoutShape { m: 3, n: 4 };
        let c = cfg(shape, 1000, 1, LayoutPolicy::UniformWithoutReplacement);
        for k in 0..10_000 {
            let s = sample_layout(&c, &mut Stream::new(9, k)).unwrap();
            let mut ids: Vec<u32> = s.items.iter().map(|y| y.0).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 12);
        }
    }

    #[test]
    fn universe_too_small_is_rejected() {
        let shape = LayoutShape { m: 1, n: 5 };
        assert!(cfg(shape, 4, 1, LayoutPolicy::UniformWithoutReplacement).validate().is_err());
    }

    #[test]
    fn same_seed_same_log() {
        let shape = LayoutShape { m: 1, n: 4 };
        let c = cfg(shape, 8, 300, LayoutPolicy::UniformWithoutReplacement);
        let m = random_instance(ModelKind::Dbn, shape, &c.vocab(), 3).unwrap();
        assert_eq!(simulate_log(&m, &c).unwrap(), simulate_log(&m, &c).unwrap());
    }

    #[test]
    fn cascade_rows_have_at_most_one_click() {
        let shape = LayoutShape { m: 3, n: 4 };
        let c = cfg(shape, 30, 2000, LayoutPolicy::UniformWithoutReplacement);
        let m = random_instance(ModelKind::Cascade, shape, &c.vocab(), 8).unwrap();
        let log = simulate_log(&m, &c).unwrap();
        for s in log.sessions() {
            for i in 1..=3 {
                assert!(s.row_clicks(i).iter().filter(|&&x| x).count() <= 1);
            }
        }
    }

    #[test]
    fn pbm_cell_rate_concentrates() {
        let shape = LayoutShape { m: 1, n: 1 };
        let vocab = Vocab::from_names(["item-1"], Vec::<&str>::new());
        let m = crate::models::make_model(
            ModelKind::Pbm,
            shape,
            &vocab,
            [
                (TableName::Position, table(&[("1,1", 0.5)])),
                (TableName::Item, table(&[("item-1", 0.6)])),
            ]
            .into(),
        )
        .unwrap();
        let log = simulate_log(&m, &cfg(shape, 1, 1_000_000, LayoutPolicy::Fixed)).unwrap();
        let rate = log.sessions().iter().filter(|s| s.clicks[0]).count() as f64 / 1e6;
        assert!((rate - 0.3).abs() < 0.002, "{rate}");
    }

    #[test]
    fn plans_never_read_unsampled_priors() {
        for kind in ModelKind::ALL {
            for shape in [LayoutShape { m: 1, n: 5 }, LayoutShape { m: 3, n: 3 }] {
                SamplingPlan::new(kind, shape).unwrap();
            }
        }
        let shape = LayoutShape { m: 1, n: 2 };
        let bad = check_order(
            &[Position::new(1, 2), Position::new(1, 1)],
            &[vec![Position::new(1, 1)], vec![]],
            shape,
        );
        assert!(bad.unwrap_err().to_string().contains("unsampled prior"));
    }

    #[test]
    fn random_trust_models_satisfy_the_bound() {
        let shape = LayoutShape { m: 2, n: 3 };
        let vocab = Vocab::from_names(item_names(12), Vec::<String>::new());
        for seed in 0..50 {
            random_instance(ModelKind::TrustPbm, shape, &vocab, seed).unwrap();
        }
    }
}
