//! The three design choices of a click model as data.
//!
//! A [`ModelDescriptor`] records which observed tuples clicks depend on
//! (global dependencies), which parts of them each click is conditioned on
//! (sequentiality), and how the conditional is split into factors
//! (factorization). The global-dependency choice alone places a model in
//! one of eight categories.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clicklog::{LayoutShape, Position};
use crate::error::{Error, Result};

/// The subset of `{T, Y, C'}` that click probabilities are conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct GlobalDeps {
    pub topics: bool,
    pub items: bool,
    pub clicks: bool,
}

impl GlobalDeps {
    pub const fn new(topics: bool, items: bool, clicks: bool) -> Self {
        GlobalDeps { topics, items, clicks }
    }

    /// All eight subsets.
    pub fn all() -> [GlobalDeps; 8] {
        let mut out = [GlobalDeps::default(); 8];
        for (k, d) in out.iter_mut().enumerate() {
            *d = GlobalDeps::new(k & 4 != 0, k & 2 != 0, k & 1 != 0);
        }
        out
    }

    pub fn uses(&self, var: Var) -> bool {
        match var {
            Var::Topics => self.topics,
            Var::Items => self.items,
            Var::Clicks => self.clicks,
        }
    }

    /// Parses names such as `["items", "clicks"]`; `"none"` alone means the empty set.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut d = GlobalDeps::default();
        for name in names {
            match name.as_ref().trim() {
                "topics" | "T" => d.topics = true,
                "items" | "Y" => d.items = true,
                "clicks" | "C'" => d.clicks = true,
                "none" | "" => {}
                other => {
                    return Err(Error::InvalidDescriptor(format!(
                        "unknown dependency `{other}` (expected topics, items, clicks)"
                    )))
                }
            }
        }
        Ok(d)
    }

    pub fn names(&self) -> Vec<&'static str> {
        Var::ALL
            .iter()
            .filter(|v| self.uses(**v))
            .map(|v| v.as_str())
            .collect()
    }
}

/// Leaf categories of the taxonomy tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaxonomyCategory {
    Random,
    ClicksOnly,
    ItemsOnly,
    ItemsClicks,
    TopicsOnly,
    TopicsClicks,
    TopicsItems,
    FullyDependent,
}

impl TaxonomyCategory {
    pub const ALL: [TaxonomyCategory; 8] = [
        TaxonomyCategory::Random,
        TaxonomyCategory::ClicksOnly,
        TaxonomyCategory::ItemsOnly,
        TaxonomyCategory::ItemsClicks,
        TaxonomyCategory::TopicsOnly,
        TaxonomyCategory::TopicsClicks,
        TaxonomyCategory::TopicsItems,
        TaxonomyCategory::FullyDependent,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TaxonomyCategory::Random => "Random",
            TaxonomyCategory::ClicksOnly => "Clicks-Only",
            TaxonomyCategory::ItemsOnly => "Items-Only",
            TaxonomyCategory::ItemsClicks => "Items-Clicks",
            TaxonomyCategory::TopicsOnly => "Topics-Only",
            TaxonomyCategory::TopicsClicks => "Topics-Clicks",
            TaxonomyCategory::TopicsItems => "Topics-Items",
            TaxonomyCategory::FullyDependent => "Fully Dependent",
        }
    }

    /// Only carousels display topics.
    pub fn requires_topics(self) -> bool {
        matches!(
            self,
            TaxonomyCategory::TopicsOnly
                | TaxonomyCategory::TopicsClicks
                | TaxonomyCategory::TopicsItems
                | TaxonomyCategory::FullyDependent
        )
    }
}

impl fmt::Display for TaxonomyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn classify(deps: GlobalDeps) -> TaxonomyCategory {
    use TaxonomyCategory::*;
    match (deps.topics, deps.items, deps.clicks) {
        (false, false, false) => Random,
        (false, false, true) => ClicksOnly,
        (false, true, false) => ItemsOnly,
        (false, true, true) => ItemsClicks,
        (true, false, false) => TopicsOnly,
        (true, false, true) => TopicsClicks,
        (true, true, false) => TopicsItems,
        (true, true, true) => FullyDependent,
    }
}

/// An observed variable tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Topics,
    Items,
    Clicks,
}

impl Var {
    pub const ALL: [Var; 3] = [Var::Topics, Var::Items, Var::Clicks];

    pub fn as_str(self) -> &'static str {
        match self {
            Var::Topics => "topics",
            Var::Items => "items",
            Var::Clicks => "clicks",
        }
    }
}

/// Shape-generic rule producing the conditioning set of a position `(i, j)`.
///
/// Topics resolve to list indices, items and clicks to positions:
///
/// | builder           | topics     | items / clicks                          |
/// |-------------------|------------|-----------------------------------------|
/// | `none`            | ∅          | ∅                                       |
/// | `self`            | `{i}`      | `{(i,j)}` (items only)                  |
/// | `same_row_prefix` | –          | `(i,l)`, `l < j`                        |
/// | `prefix_items`    | –          | `(i,l)`, `l ≤ j` (items only)           |
/// | `prefix_rows`     | `1..=i`    | every cell of lists `1..i`              |
/// | `prefix_clicks`   | –          | cells before `(i,j)` in row-major order |
/// | `all`             | `1..=M`    | every cell (clicks: except `(i,j)`)     |
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Builder {
    None,
    SelfOnly,
    SameRowPrefix,
    PrefixItems,
    PrefixRows,
    PrefixClicks,
    All,
    /// Per-position sets for one concrete shape; not part of the exchange format.
    Explicit(BTreeMap<Position, BTreeSet<Position>>),
}

impl Builder {
    pub fn name(&self) -> &'static str {
        match self {
            Builder::None => "none",
            Builder::SelfOnly => "self",
            Builder::SameRowPrefix => "same_row_prefix",
            Builder::PrefixItems => "prefix_items",
            Builder::PrefixRows => "prefix_rows",
            Builder::PrefixClicks => "prefix_clicks",
            Builder::All => "all",
            Builder::Explicit(_) => "explicit",
        }
    }

    pub fn from_name(name: &str) -> Result<Builder> {
        Ok(match name {
            "none" => Builder::None,
            "self" => Builder::SelfOnly,
            "same_row_prefix" => Builder::SameRowPrefix,
            "prefix_items" => Builder::PrefixItems,
            "prefix_rows" => Builder::PrefixRows,
            "prefix_clicks" => Builder::PrefixClicks,
            "all" => Builder::All,
            other => {
                return Err(Error::InvalidDescriptor(format!(
                    "unknown sequentiality builder `{other}`"
                )))
            }
        })
    }

    fn is_none(&self) -> bool {
        matches!(self, Builder::None)
    }

    fn cells(&self, p: Position, shape: LayoutShape, include_self_in_all: bool) -> Vec<Position> {
        let row = |i: usize, range: std::ops::RangeInclusive<usize>| {
            range.map(move |l| Position::new(i, l))
        };
        match self {
            Builder::None => Vec::new(),
            Builder::SelfOnly => vec![p],
            Builder::SameRowPrefix => row(p.i, 1..=p.j.saturating_sub(1)).collect(),
            Builder::PrefixItems => row(p.i, 1..=p.j).collect(),
            Builder::PrefixRows => (1..p.i).flat_map(|i| row(i, 1..=shape.n)).collect(),
            Builder::PrefixClicks => (0..shape.index(p)).map(|k| shape.position(k)).collect(),
            Builder::All => shape
                .positions()
                .filter(|&q| include_self_in_all || q != p)
                .collect(),
            Builder::Explicit(map) => map
                .get(&p)
                .map(|s| s.iter().copied().collect())
                .unwrap_or_default(),
        }
    }
}

/// Per-position conditioning sets for topics, items and other clicks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SequentialitySpec {
    topics: Builder,
    items: Builder,
    clicks: Builder,
}

impl SequentialitySpec {
    /// Rejects builders that make no sense for a tuple, and any click that
    /// conditions on itself.
    pub fn new(topics: Builder, items: Builder, clicks: Builder) -> Result<Self> {
        match &topics {
            Builder::None | Builder::SelfOnly | Builder::PrefixRows | Builder::All => {}
            other => {
                return Err(Error::InvalidDescriptor(format!(
                    "builder `{}` does not apply to topics",
                    other.name()
                )))
            }
        }
        match &clicks {
            Builder::SelfOnly | Builder::PrefixItems => {
                return Err(Error::InvalidDescriptor(format!(
                    "builder `{}` makes a click depend on itself",
                    clicks.name()
                )))
            }
            Builder::Explicit(map) => {
                if let Some(p) = map.iter().find(|(p, s)| s.contains(p)).map(|(p, _)| p) {
                    return Err(Error::InvalidDescriptor(format!(
                        "click at {p} depends on itself"
                    )));
                }
            }
            _ => {}
        }
        Ok(SequentialitySpec { topics, items, clicks })
    }

    pub fn none() -> Self {
        SequentialitySpec {
            topics: Builder::None,
            items: Builder::None,
            clicks: Builder::None,
        }
    }

    pub fn builder(&self, var: Var) -> &Builder {
        match var {
            Var::Topics => &self.topics,
            Var::Items => &self.items,
            Var::Clicks => &self.clicks,
        }
    }

    pub fn uses(&self, var: Var) -> bool {
        !self.builder(var).is_none()
    }

    /// List indices whose topics condition the click at `p`.
    pub fn cond_topics(&self, p: Position, shape: LayoutShape) -> Vec<usize> {
        match &self.topics {
            Builder::SelfOnly => vec![p.i],
            Builder::PrefixRows => (1..=p.i).collect(),
            Builder::All => (1..=shape.m).collect(),
            _ => Vec::new(),
        }
    }

    pub fn cond_items(&self, p: Position, shape: LayoutShape) -> Vec<Position> {
        self.items.cells(p, shape, true)
    }

    pub fn cond_clicks(&self, p: Position, shape: LayoutShape) -> Vec<Position> {
        self.clicks.cells(p, shape, false)
    }
}

/// A directed cycle in the click-conditioning graph, first node repeated at the end.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cyclic click dependency: {}", fmt_cycle(.cycle))]
pub struct CycleError {
    pub cycle: Vec<Position>,
}

fn fmt_cycle(cycle: &[Position]) -> String {
    cycle
        .iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// Successor lists of the graph with an edge `q -> p` whenever `q ∈ cond_clicks(p)`.
fn click_graph(seq: &SequentialitySpec, shape: LayoutShape) -> Result<Vec<Vec<usize>>> {
    let mut succ = vec![Vec::new(); shape.cells()];
    for p in shape.positions() {
        for q in seq.cond_clicks(p, shape) {
            shape.check(q)?;
            succ[shape.index(q)].push(shape.index(p));
        }
    }
    for s in &mut succ {
        s.sort_unstable();
        s.dedup();
    }
    Ok(succ)
}

/// Accepts iff the click-conditioning graph on `shape` is acyclic.
pub fn validate_sequentiality(seq: &SequentialitySpec, shape: LayoutShape) -> Result<()> {
    let succ = click_graph(seq, shape)?;
    match find_cycle(&succ) {
        None => Ok(()),
        Some(nodes) => Err(CycleError {
            cycle: nodes.into_iter().map(|k| shape.position(k)).collect(),
        }
        .into()),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mark {
    White,
    Grey,
    Black,
}

fn find_cycle(succ: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = succ.len();
    let mut mark = vec![Mark::White; n];
    for root in 0..n {
        if mark[root] != Mark::White {
            continue;
        }
        // (node, next successor slot)
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = Mark::Grey;
        while let Some(&mut (node, ref mut slot)) = stack.last_mut() {
            if let Some(&next) = succ[node].get(*slot) {
                *slot += 1;
                match mark[next] {
                    Mark::White => {
                        mark[next] = Mark::Grey;
                        stack.push((next, 0));
                    }
                    Mark::Grey => {
                        let start = stack.iter().position(|&(v, _)| v == next).unwrap();
                        let mut cycle: Vec<usize> = stack[start..].iter().map(|&(v, _)| v).collect();
                        // rotate so the smallest node leads
                        let lead = (0..cycle.len()).min_by_key(|&k| cycle[k]).unwrap();
                        cycle.rotate_left(lead);
                        cycle.push(cycle[0]);
                        return Some(cycle);
                    }
                    Mark::Black => {}
                }
            } else {
                mark[node] = Mark::Black;
                stack.pop();
            }
        }
    }
    None
}

/// Topological order of positions; ties go to the earliest row-major position.
pub fn topological_order(seq: &SequentialitySpec, shape: LayoutShape) -> Result<Vec<Position>> {
    validate_sequentiality(seq, shape)?;
    let succ = click_graph(seq, shape)?;
    let mut indegree = vec![0usize; succ.len()];
    for s in &succ {
        for &p in s {
            indegree[p] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(k, _)| Reverse(k))
        .collect();
    let mut order = Vec::with_capacity(succ.len());
    while let Some(Reverse(k)) = ready.pop() {
        order.push(shape.position(k));
        for &p in &succ[k] {
            indegree[p] -= 1;
            if indegree[p] == 0 {
                ready.push(Reverse(p));
            }
        }
    }
    Ok(order)
}

/// What a single factor consumes: its own position and/or observed tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeVar {
    Position,
    Topics,
    Items,
    Clicks,
}

impl ScopeVar {
    fn observed(self) -> Option<Var> {
        match self {
            ScopeVar::Position => None,
            ScopeVar::Topics => Some(Var::Topics),
            ScopeVar::Items => Some(Var::Items),
            ScopeVar::Clicks => Some(Var::Clicks),
        }
    }
}

pub type FactorScope = BTreeSet<ScopeVar>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Product,
    /// Product of all factors but the last, plus the last: `f·g + h`.
    ProductPlusTerm,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FactorizationDescriptor {
    factors: Vec<FactorScope>,
    combine: Combine,
}

impl FactorizationDescriptor {
    pub fn new(factors: Vec<FactorScope>, combine: Combine) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidDescriptor("factorization needs at least one factor".into()));
        }
        if combine == Combine::ProductPlusTerm && factors.len() < 2 {
            return Err(Error::InvalidDescriptor(
                "product_plus_term needs product factors and exactly one additive term".into(),
            ));
        }
        Ok(FactorizationDescriptor { factors, combine })
    }

    pub fn factors(&self) -> &[FactorScope] {
        &self.factors
    }

    pub fn combine(&self) -> Combine {
        self.combine
    }

    fn scope_vars(&self) -> BTreeSet<Var> {
        self.factors
            .iter()
            .flatten()
            .filter_map(|v| v.observed())
            .collect()
    }

    /// Factors compared up to commutativity of the product.
    fn canonical(&self) -> (Vec<FactorScope>, Option<FactorScope>) {
        let (product, term) = match self.combine {
            Combine::Product => (self.factors.clone(), None),
            Combine::ProductPlusTerm => {
                let (last, rest) = self.factors.split_last().expect("validated non-empty");
                (rest.to_vec(), Some(last.clone()))
            }
        };
        let mut product = product;
        product.sort();
        (product, term)
    }
}

/// The three design choices of one click model.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelDescriptor {
    deps: GlobalDeps,
    seq: SequentialitySpec,
    fact: FactorizationDescriptor,
}

impl ModelDescriptor {
    pub fn new(deps: GlobalDeps, seq: SequentialitySpec, fact: FactorizationDescriptor) -> Result<Self> {
        for var in Var::ALL {
            match (deps.uses(var), seq.uses(var)) {
                (true, false) => {
                    return Err(Error::InvalidDescriptor(format!(
                        "global dependencies include {} but no click is conditioned on them",
                        var.as_str()
                    )))
                }
                (false, true) => {
                    return Err(Error::InvalidDescriptor(format!(
                        "sequentiality conditions on {} which global dependencies exclude",
                        var.as_str()
                    )))
                }
                _ => {}
            }
        }
        let used: BTreeSet<Var> = Var::ALL.into_iter().filter(|&v| seq.uses(v)).collect();
        if fact.scope_vars() != used {
            return Err(Error::InvalidDescriptor(format!(
                "factor scopes cover {:?} but sequentiality conditions on {:?}",
                fact.scope_vars(),
                used
            )));
        }
        Ok(ModelDescriptor { deps, seq, fact })
    }

    pub fn deps(&self) -> GlobalDeps {
        self.deps
    }

    pub fn seq(&self) -> &SequentialitySpec {
        &self.seq
    }

    pub fn fact(&self) -> &FactorizationDescriptor {
        &self.fact
    }

    pub fn category(&self) -> TaxonomyCategory {
        classify(self.deps)
    }

    pub fn to_file(&self) -> Result<DescriptorFile> {
        let builder = |v: Var| match self.seq.builder(v) {
            Builder::Explicit(_) => Err(Error::InvalidDescriptor(
                "explicit sequentiality sets have no exchange form".into(),
            )),
            b => Ok(b.name().to_owned()),
        };
        Ok(DescriptorFile {
            deps: self.deps.names().into_iter().map(String::from).collect(),
            seq: SeqFile {
                topics: builder(Var::Topics)?,
                items: builder(Var::Items)?,
                clicks: builder(Var::Clicks)?,
            },
            factors: self
                .fact
                .factors
                .iter()
                .map(|s| s.iter().copied().collect())
                .collect(),
            combine: self.fact.combine,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file()?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DescriptorFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// Exchange form of a descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorFile {
    pub deps: Vec<String>,
    pub seq: SeqFile,
    pub factors: Vec<Vec<ScopeVar>>,
    pub combine: Combine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqFile {
    #[serde(default = "none_builder")]
    pub topics: String,
    #[serde(default = "none_builder")]
    pub items: String,
    #[serde(default = "none_builder")]
    pub clicks: String,
}

fn none_builder() -> String {
    "none".into()
}

impl TryFrom<DescriptorFile> for ModelDescriptor {
    type Error = Error;

    fn try_from(f: DescriptorFile) -> Result<Self> {
        let deps = GlobalDeps::from_names(&f.deps)?;
        let seq = SequentialitySpec::new(
            Builder::from_name(&f.seq.topics)?,
            Builder::from_name(&f.seq.items)?,
            Builder::from_name(&f.seq.clicks)?,
        )?;
        let fact = FactorizationDescriptor::new(
            f.factors.into_iter().map(|s| s.into_iter().collect()).collect(),
            f.combine,
        )?;
        ModelDescriptor::new(deps, seq, fact)
    }
}

/// Same dependencies, same conditioning sets, same factor shapes.
pub fn equivalent(a: &ModelDescriptor, b: &ModelDescriptor) -> bool {
    a.deps == b.deps
        && a.seq == b.seq
        && a.fact.combine == b.fact.combine
        && a.fact.canonical() == b.fact.canonical()
}

/// Models with a known descriptor. The first twelve can also be simulated and fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CatalogModel {
    Rcm,
    Rctr,
    Dctr,
    Pbm,
    TrustPbm,
    Cascade,
    Ubm,
    Dcm,
    Dbn,
    Cacm,
    TopicsItemsV1,
    TopicsItemsV2,
    TrustBias,
    Csm,
    Xpa,
    Rbnn,
    Ncm,
    GraphCm,
}

impl CatalogModel {
    pub const ALL: [CatalogModel; 18] = [
        CatalogModel::Rcm,
        CatalogModel::Rctr,
        CatalogModel::Dctr,
        CatalogModel::Pbm,
        CatalogModel::TrustPbm,
        CatalogModel::Cascade,
        CatalogModel::Ubm,
        CatalogModel::Dcm,
        CatalogModel::Dbn,
        CatalogModel::Cacm,
        CatalogModel::TopicsItemsV1,
        CatalogModel::TopicsItemsV2,
        CatalogModel::TrustBias,
        CatalogModel::Csm,
        CatalogModel::Xpa,
        CatalogModel::Rbnn,
        CatalogModel::Ncm,
        CatalogModel::GraphCm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CatalogModel::Rcm => "rcm",
            CatalogModel::Rctr => "rctr",
            CatalogModel::Dctr => "dctr",
            CatalogModel::Pbm => "pbm",
            CatalogModel::TrustPbm => "trust_pbm",
            CatalogModel::Cascade => "cascade",
            CatalogModel::Ubm => "ubm",
            CatalogModel::Dcm => "dcm",
            CatalogModel::Dbn => "dbn",
            CatalogModel::Cacm => "cacm",
            CatalogModel::TopicsItemsV1 => "topics_items_v1",
            CatalogModel::TopicsItemsV2 => "topics_items_v2",
            CatalogModel::TrustBias => "trust_bias",
            CatalogModel::Csm => "csm",
            CatalogModel::Xpa => "xpa",
            CatalogModel::Rbnn => "rbnn",
            CatalogModel::Ncm => "ncm",
            CatalogModel::GraphCm => "graphcm",
        }
    }
}

impl fmt::Display for CatalogModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CatalogModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CatalogModel::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownModel(s.to_owned()))
    }
}

fn scope(vars: &[ScopeVar]) -> FactorScope {
    vars.iter().copied().collect()
}

pub fn descriptor_of(model: CatalogModel) -> ModelDescriptor {
    use Builder as B;
    use CatalogModel as C;
    use ScopeVar::{Clicks, Items, Position as Pos, Topics};

    let (deps, seq, factors, combine) = match model {
        C::Rcm => (
            GlobalDeps::new(false, false, false),
            (B::None, B::None, B::None),
            vec![scope(&[])],
            Combine::Product,
        ),
        C::Rctr => (
            GlobalDeps::new(false, false, false),
            (B::None, B::None, B::None),
            vec![scope(&[Pos])],
            Combine::Product,
        ),
        C::Dctr => (
            GlobalDeps::new(false, true, false),
            (B::None, B::SelfOnly, B::None),
            vec![scope(&[Items])],
            Combine::Product,
        ),
        C::Pbm | C::TrustBias => (
            GlobalDeps::new(false, true, false),
            (B::None, B::SelfOnly, B::None),
            vec![scope(&[Pos]), scope(&[Items])],
            Combine::Product,
        ),
        C::TrustPbm => (
            GlobalDeps::new(false, true, false),
            (B::None, B::SelfOnly, B::None),
            vec![scope(&[Pos]), scope(&[Items]), scope(&[Pos])],
            Combine::ProductPlusTerm,
        ),
        C::Cascade | C::Ubm => (
            GlobalDeps::new(false, true, true),
            (B::None, B::SelfOnly, B::SameRowPrefix),
            vec![scope(&[Items]), scope(&[Clicks])],
            Combine::Product,
        ),
        C::Dcm => (
            GlobalDeps::new(false, true, true),
            (B::None, B::SelfOnly, B::SameRowPrefix),
            vec![scope(&[Items]), scope(&[Pos, Clicks])],
            Combine::Product,
        ),
        C::Dbn => (
            GlobalDeps::new(false, true, true),
            (B::None, B::PrefixItems, B::SameRowPrefix),
            vec![scope(&[Items]), scope(&[Items, Clicks])],
            Combine::Product,
        ),
        C::Cacm => (
            GlobalDeps::new(true, true, true),
            (B::PrefixRows, B::SelfOnly, B::SameRowPrefix),
            vec![scope(&[Topics]), scope(&[Items]), scope(&[Clicks])],
            Combine::Product,
        ),
        C::TopicsItemsV1 => (
            GlobalDeps::new(true, true, false),
            (B::PrefixRows, B::PrefixItems, B::None),
            vec![scope(&[Topics]), scope(&[Items])],
            Combine::Product,
        ),
        C::TopicsItemsV2 => (
            GlobalDeps::new(true, true, false),
            (B::PrefixRows, B::PrefixItems, B::None),
            vec![scope(&[Items]), scope(&[Topics, Items])],
            Combine::Product,
        ),
        C::Csm => (
            GlobalDeps::new(false, true, false),
            (B::None, B::All, B::None),
            vec![scope(&[Items])],
            Combine::Product,
        ),
        C::Xpa => (
            GlobalDeps::new(false, true, false),
            (B::None, B::All, B::None),
            vec![scope(&[Items]), scope(&[Items, Pos])],
            Combine::Product,
        ),
        C::Rbnn => (
            GlobalDeps::new(false, true, false),
            (B::None, B::PrefixItems, B::None),
            vec![scope(&[Items])],
            Combine::Product,
        ),
        C::Ncm => (
            GlobalDeps::new(false, true, true),
            (B::None, B::PrefixItems, B::SameRowPrefix),
            vec![scope(&[Items, Clicks])],
            Combine::Product,
        ),
        C::GraphCm => (
            GlobalDeps::new(false, true, true),
            (B::None, B::All, B::All),
            vec![scope(&[Clicks]), scope(&[Items, Clicks])],
            Combine::Product,
        ),
    };
    let seq = SequentialitySpec::new(seq.0, seq.1, seq.2).expect("catalog sequentiality is valid");
    let fact = FactorizationDescriptor::new(factors, combine).expect("catalog factorization is valid");
    ModelDescriptor::new(deps, seq, fact).expect("catalog descriptor is consistent")
}
