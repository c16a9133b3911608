//! Catalog of conditional click models and their parameter tables.
//!
//! A [`ModelInstance`] holds named tables keyed by strings (positions,
//! item and topic names). Binding it to a log's [`Vocab`] yields a
//! [`BoundModel`] with dense arrays; all probability computations run on the
//! bound form.
//!
//! Every catalog model conditions a click only on earlier clicks in the same
//! list, so row-major order is a valid evaluation order and each list is
//! processed left to right with a small [`RowState`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::clicklog::{ClickAssignment, ClickLog, LayoutShape, Position, SessionRecord, Vocab};
use crate::error::{Error, Result};
use crate::taxonomy::{descriptor_of, CatalogModel, ModelDescriptor};

pub const DEFAULT_UNSEEN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
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
}

impl ModelKind {
    pub const ALL: [ModelKind; 12] = [
        ModelKind::Rcm,
        ModelKind::Rctr,
        ModelKind::Dctr,
        ModelKind::Pbm,
        ModelKind::TrustPbm,
        ModelKind::Cascade,
        ModelKind::Ubm,
        ModelKind::Dcm,
        ModelKind::Dbn,
        ModelKind::Cacm,
        ModelKind::TopicsItemsV1,
        ModelKind::TopicsItemsV2,
    ];

    pub fn catalog(self) -> CatalogModel {
        match self {
            ModelKind::Rcm => CatalogModel::Rcm,
            ModelKind::Rctr => CatalogModel::Rctr,
            ModelKind::Dctr => CatalogModel::Dctr,
            ModelKind::Pbm => CatalogModel::Pbm,
            ModelKind::TrustPbm => CatalogModel::TrustPbm,
            ModelKind::Cascade => CatalogModel::Cascade,
            ModelKind::Ubm => CatalogModel::Ubm,
            ModelKind::Dcm => CatalogModel::Dcm,
            ModelKind::Dbn => CatalogModel::Dbn,
            ModelKind::Cacm => CatalogModel::Cacm,
            ModelKind::TopicsItemsV1 => CatalogModel::TopicsItemsV1,
            ModelKind::TopicsItemsV2 => CatalogModel::TopicsItemsV2,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.catalog().as_str()
    }

    pub fn descriptor(self) -> ModelDescriptor {
        descriptor_of(self.catalog())
    }

    pub fn needs_topics(self) -> bool {
        matches!(
            self,
            ModelKind::Cacm | ModelKind::TopicsItemsV1 | ModelKind::TopicsItemsV2
        )
    }

    /// Tables the kind is parameterized by, in storage order.
    pub fn tables(self) -> &'static [(TableName, KeyKind)] {
        use KeyKind as K;
        use TableName as T;
        match self {
            ModelKind::Rcm => &[(T::Zeta, K::Scalar)],
            ModelKind::Rctr => &[(T::Position, K::Cell)],
            ModelKind::Dctr | ModelKind::Cascade => &[(T::Item, K::Item)],
            ModelKind::Pbm => &[(T::Position, K::Cell), (T::Item, K::Item)],
            ModelKind::TrustPbm => &[(T::Position, K::Cell), (T::Item, K::Item), (T::Trust, K::Cell)],
            ModelKind::Ubm => &[(T::Item, K::Item), (T::Gamma, K::CellLastClick)],
            ModelKind::Dcm => &[(T::Item, K::Item), (T::Lambda, K::Cell)],
            ModelKind::Dbn => &[(T::Item, K::Item), (T::Sigma, K::Item), (T::Gamma, K::Scalar)],
            ModelKind::Cacm => &[(T::Tau, K::Topic), (T::Item, K::Item)],
            ModelKind::TopicsItemsV1 => &[
                (T::Rho, K::Topic),
                (T::Kappa, K::Topic),
                (T::Item, K::Item),
                (T::Beta, K::Scalar),
            ],
            ModelKind::TopicsItemsV2 => &[
                (T::Rho, K::Topic),
                (T::Kappa, K::Topic),
                (T::Item, K::Item),
                (T::Beta, K::Topic),
            ],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownModel(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TableName {
    Position,
    Item,
    Topic,
    Gamma,
    Lambda,
    Sigma,
    Tau,
    Kappa,
    Rho,
    Beta,
    Zeta,
    Trust,
}

impl TableName {
    pub const ALL: [TableName; 12] = [
        TableName::Position,
        TableName::Item,
        TableName::Topic,
        TableName::Gamma,
        TableName::Lambda,
        TableName::Sigma,
        TableName::Tau,
        TableName::Kappa,
        TableName::Rho,
        TableName::Beta,
        TableName::Zeta,
        TableName::Trust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TableName::Position => "position",
            TableName::Item => "item",
            TableName::Topic => "topic",
            TableName::Gamma => "gamma",
            TableName::Lambda => "lambda",
            TableName::Sigma => "sigma",
            TableName::Tau => "tau",
            TableName::Kappa => "kappa",
            TableName::Rho => "rho",
            TableName::Beta => "beta",
            TableName::Zeta => "zeta",
            TableName::Trust => "trust",
        }
    }

    pub fn from_name(s: &str) -> Option<TableName> {
        TableName::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for TableName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a table is keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    /// Single entry under [`SCALAR_KEY`].
    Scalar,
    /// `"i,j"` for every cell.
    Cell,
    /// `"i,j,r"` with `r` the rank of the last earlier click in list `i` (0 = none).
    CellLastClick,
    Item,
    Topic,
}

pub const SCALAR_KEY: &str = "value";

pub type Table = BTreeMap<String, f64>;

pub fn last_click_key(p: Position, r: usize) -> String {
    format!("{},{},{}", p.i, p.j, r)
}

/// Keys a shape-indexed table must contain.
fn shape_keys(key: KeyKind, shape: LayoutShape) -> Vec<String> {
    match key {
        KeyKind::Scalar => vec![SCALAR_KEY.to_owned()],
        KeyKind::Cell => shape.positions().map(|p| p.key()).collect(),
        KeyKind::CellLastClick => shape
            .positions()
            .flat_map(|p| (0..p.j).map(move |r| last_click_key(p, r)))
            .collect(),
        KeyKind::Item | KeyKind::Topic => Vec::new(),
    }
}

/// A catalog kind with concrete, validated parameter tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInstance {
    kind: ModelKind,
    shape: LayoutShape,
    tables: BTreeMap<TableName, Table>,
    unseen_default: f64,
}

fn check_prob(table: TableName, key: &str, v: f64) -> Result<()> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!(
            "probability out of range: {table}[{key}] = {v}"
        )))
    }
}

/// Builds a validated instance; every item and topic in `vocab` must have an entry.
pub fn make_model(
    kind: ModelKind,
    shape: LayoutShape,
    vocab: &Vocab,
    tables: BTreeMap<TableName, Table>,
) -> Result<ModelInstance> {
    let m = ModelInstance::new(kind, shape, tables)?;
    for &(name, key) in kind.tables() {
        let names: &[String] = match key {
            KeyKind::Item => vocab.items(),
            KeyKind::Topic => vocab.topics(),
            _ => continue,
        };
        let table = &m.tables[&name];
        if let Some(missing) = names.iter().find(|n| !table.contains_key(*n)) {
            return Err(Error::InvalidModel(format!("missing key: {name}[{missing}]")));
        }
    }
    Ok(m)
}

impl ModelInstance {
    /// Validates shape tables, ranges and the TrustPBM bound. Item and topic
    /// tables may be any size; unseen names fall back to the unseen default.
    pub fn new(kind: ModelKind, shape: LayoutShape, tables: BTreeMap<TableName, Table>) -> Result<Self> {
        Self::with_default(kind, shape, tables, DEFAULT_UNSEEN)
    }

    pub fn with_default(
        kind: ModelKind,
        shape: LayoutShape,
        tables: BTreeMap<TableName, Table>,
        unseen_default: f64,
    ) -> Result<Self> {
        check_prob(TableName::Item, "<unseen default>", unseen_default)?;
        let spec = kind.tables();
        for name in tables.keys() {
            if !spec.iter().any(|(t, _)| t == name) {
                return Err(Error::InvalidModel(format!("table `{name}` is not used by {kind}")));
            }
        }
        for &(name, key) in spec {
            let table = tables
                .get(&name)
                .ok_or_else(|| Error::InvalidModel(format!("missing table `{name}` for {kind}")))?;
            for (k, &v) in table {
                check_prob(name, k, v)?;
            }
            if matches!(key, KeyKind::Item | KeyKind::Topic) {
                continue;
            }
            let expected = shape_keys(key, shape);
            if let Some(missing) = expected.iter().find(|k| !table.contains_key(*k)) {
                return Err(Error::InvalidModel(format!("missing key: {name}[{missing}]")));
            }
            if table.len() != expected.len() {
                let extra = table.keys().find(|k| !expected.contains(k)).unwrap();
                return Err(Error::InvalidModel(format!(
                    "unexpected key {name}[{extra}] for shape {shape}"
                )));
            }
        }
        let m = ModelInstance {
            kind,
            shape,
            tables,
            unseen_default,
        };
        if kind == ModelKind::TrustPbm {
            m.check_trust_bound()?;
        }
        Ok(m)
    }

    fn check_trust_bound(&self) -> Result<()> {
        let f = &self.tables[&TableName::Position];
        let g = &self.tables[&TableName::Item];
        let h = &self.tables[&TableName::Trust];
        let (gmax_name, gmax) = g
            .iter()
            .map(|(k, &v)| (k.as_str(), v))
            .fold(("<unseen default>", self.unseen_default), |a, b| if b.1 > a.1 { b } else { a });
        for p in self.shape.positions() {
            let key = p.key();
            if f[&key] * gmax + h[&key] > 1.0 {
                return Err(Error::InvalidModel(format!(
                    "f·g+h exceeds 1 at {p}, item {gmax_name}"
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn shape(&self) -> LayoutShape {
        self.shape
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        self.kind.descriptor()
    }

    pub fn tables(&self) -> &BTreeMap<TableName, Table> {
        &self.tables
    }

    pub fn table(&self, name: TableName) -> Option<&Table> {
        self.tables.get(&name)
    }

    pub fn unseen_default(&self) -> f64 {
        self.unseen_default
    }

    /// Entry lookup with the unseen default for missing item/topic keys.
    pub fn value(&self, name: TableName, key: &str) -> Option<f64> {
        let table = self.tables.get(&name)?;
        let kind = self.kind.tables().iter().find(|(t, _)| *t == name)?.1;
        match (table.get(key), kind) {
            (Some(&v), _) => Some(v),
            (None, KeyKind::Item | KeyKind::Topic) => Some(self.unseen_default),
            (None, _) => None,
        }
    }

    /// Resolves tables against a vocabulary into dense arrays.
    pub fn bind(&self, vocab: &Vocab) -> BoundModel {
        let n = self.shape.n;
        let mut slots = Vec::new();
        let mut unseen_items = Vec::new();
        let mut unseen_topics = Vec::new();
        for &(name, key) in self.kind.tables() {
            let table = &self.tables[&name];
            let dense: Vec<f64> = match key {
                KeyKind::Scalar => vec![table[SCALAR_KEY]],
                KeyKind::Cell => self.shape.positions().map(|p| table[&p.key()]).collect(),
                KeyKind::CellLastClick => {
                    let mut v = vec![0.0; self.shape.cells() * n];
                    for p in self.shape.positions() {
                        for r in 0..p.j {
                            v[self.shape.index(p) * n + r] = table[&last_click_key(p, r)];
                        }
                    }
                    v
                }
                KeyKind::Item => lookup(table, vocab.items(), self.unseen_default, &mut unseen_items),
                KeyKind::Topic => lookup(table, vocab.topics(), self.unseen_default, &mut unseen_topics),
            };
            slots.push(dense);
        }
        unseen_items.sort();
        unseen_items.dedup();
        unseen_topics.sort();
        unseen_topics.dedup();
        BoundModel {
            kind: self.kind,
            shape: self.shape,
            slots,
            unseen_default: self.unseen_default,
            unseen_items,
            unseen_topics,
        }
    }

    pub fn to_params_file(&self) -> ParamsFile<'_> {
        ParamsFile {
            kind: self.kind.as_str(),
            shape: self.shape,
            unseen_default: self.unseen_default,
            tables: self.tables.iter().map(|(k, v)| (k.as_str(), v)).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_params_file())?)
    }

    pub fn write_json<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(self.to_json()?.as_bytes())?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a parameter file. Report fields written next to the tables
    /// (fit and oracle outputs) are accepted and ignored.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidModel("parameter file must be an object".into()))?;
        let kind: ModelKind = obj
            .get("kind")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::InvalidModel("parameter file needs a string `kind`".into()))?
            .parse()?;
        let shape = obj
            .get("shape")
            .ok_or_else(|| Error::InvalidModel("parameter file needs `shape`".into()))?;
        let dim = |k: &str| {
            shape
                .get(k)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::InvalidModel(format!("shape.{k} must be a positive integer")))
        };
        let shape = LayoutShape::new(dim("m")? as usize, dim("n")? as usize)
            .map_err(|e| Error::InvalidModel(e.to_string()))?;
        let unseen_default = match obj.get("unseen_default") {
            None => DEFAULT_UNSEEN,
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::InvalidModel("unseen_default must be a number".into()))?,
        };
        let mut tables = BTreeMap::new();
        for (key, v) in obj {
            if matches!(key.as_str(), "kind" | "shape" | "unseen_default") || REPORT_KEYS.contains(&key.as_str()) {
                continue;
            }
            let name = TableName::from_name(key)
                .ok_or_else(|| Error::InvalidModel(format!("unexpected key `{key}` in parameter file")))?;
            let entries = v
                .as_object()
                .ok_or_else(|| Error::InvalidModel(format!("table `{key}` must be an object")))?;
            let mut table = Table::new();
            for (k, x) in entries {
                let x = x
                    .as_f64()
                    .ok_or_else(|| Error::InvalidModel(format!("{key}[{k}] must be a number")))?;
                table.insert(k.clone(), x);
            }
            tables.insert(name, table);
        }
        ModelInstance::with_default(kind, shape, tables, unseen_default)
    }
}

/// Keys of fit/oracle reports that may share a file with a parameter set.
pub const REPORT_KEYS: &[&str] = &[
    "ll_trajectory",
    "iterations",
    "converged",
    "normalization",
    "undetermined",
    "unseen_items",
    "unseen_topics",
    "grid_step",
    "log_likelihood",
];

fn lookup(table: &Table, names: &[String], default: f64, unseen: &mut Vec<String>) -> Vec<f64> {
    names
        .iter()
        .map(|n| match table.get(n) {
            Some(&v) => v,
            None => {
                unseen.push(n.clone());
                default
            }
        })
        .collect()
}

/// Serialized form of a parameter set.
#[derive(Debug, Serialize)]
pub struct ParamsFile<'a> {
    pub kind: &'static str,
    pub shape: LayoutShape,
    pub unseen_default: f64,
    #[serde(flatten)]
    pub tables: BTreeMap<&'static str, &'a Table>,
}

/// Reference to one dense parameter: (table slot, entry index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct ParamRef {
    pub slot: u8,
    pub index: u32,
}

/// One conjunct of a click: the click needs every literal to hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Lit {
    /// Latent Bernoulli(θ) must be 1.
    Pos(ParamRef),
    /// Latent Bernoulli(θ) must be 0.
    Neg(ParamRef),
    /// Latents Bernoulli(θa), Bernoulli(θb) must not both be 1.
    Nand(ParamRef, ParamRef),
}

/// `q = leak + (1 - leak) · ∏ lits`, or `q = 0` when `zero` is set.
#[derive(Debug, Clone, Default)]
pub(crate) struct Gates {
    pub leak: Option<ParamRef>,
    pub lits: Vec<Lit>,
    pub zero: bool,
}

impl Gates {
    fn clear(&mut self) {
        self.leak = None;
        self.lits.clear();
        self.zero = false;
    }
}

/// Per-list evaluation state: rank of the last click so far (0 = none) and
/// the filtered examination probability of the next rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowState {
    pub last_click: usize,
    pub exam: f64,
}

impl RowState {
    pub fn start() -> Self {
        RowState {
            last_click: 0,
            exam: 1.0,
        }
    }
}

/// Dense length of a table slot (UBM's last-click table is padded to `cells·n`).
pub(crate) fn slot_len(key: KeyKind, shape: LayoutShape, vocab: &Vocab) -> usize {
    match key {
        KeyKind::Scalar => 1,
        KeyKind::Cell => shape.cells(),
        KeyKind::CellLastClick => shape.cells() * shape.n,
        KeyKind::Item => vocab.items().len(),
        KeyKind::Topic => vocab.topics().len(),
    }
}

/// `table[key]` label of a dense entry, as used in reports.
pub(crate) fn entry_label(kind: ModelKind, shape: LayoutShape, vocab: &Vocab, r: ParamRef) -> String {
    let (name, key) = kind.tables()[r.slot as usize];
    let index = r.index as usize;
    let key = match key {
        KeyKind::Scalar => SCALAR_KEY.to_owned(),
        KeyKind::Cell => shape.position(index).key(),
        KeyKind::CellLastClick => last_click_key(shape.position(index / shape.n), index % shape.n),
        KeyKind::Item => vocab.items()[index].clone(),
        KeyKind::Topic => vocab.topics()[index].clone(),
    };
    format!("{name}[{key}]")
}

/// A model resolved against one vocabulary; ids in sessions index the arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundModel {
    kind: ModelKind,
    shape: LayoutShape,
    pub(crate) slots: Vec<Vec<f64>>,
    unseen_default: f64,
    unseen_items: Vec<String>,
    unseen_topics: Vec<String>,
}

impl BoundModel {
    pub(crate) fn unseen_default(&self) -> f64 {
        self.unseen_default
    }

    /// Real (non-padding) entries of every slot, in slot then index order.
    pub(crate) fn entries(&self) -> Vec<ParamRef> {
        let n = self.shape.n;
        let mut out = Vec::new();
        for (slot, &(_, key)) in self.kind.tables().iter().enumerate() {
            for index in 0..self.slots[slot].len() {
                if key == KeyKind::CellLastClick && index % n >= self.shape.position(index / n).j {
                    continue;
                }
                out.push(ParamRef {
                    slot: slot as u8,
                    index: index as u32,
                });
            }
        }
        out
    }

    /// Dense model with every entry set by `value(slot, index)`.
    pub(crate) fn filled(
        kind: ModelKind,
        shape: LayoutShape,
        vocab: &Vocab,
        mut value: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let slots = kind
            .tables()
            .iter()
            .enumerate()
            .map(|(slot, &(_, key))| (0..slot_len(key, shape, vocab)).map(|k| value(slot, k)).collect())
            .collect();
        BoundModel {
            kind,
            shape,
            slots,
            unseen_default: DEFAULT_UNSEEN,
            unseen_items: Vec::new(),
            unseen_topics: Vec::new(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn shape(&self) -> LayoutShape {
        self.shape
    }

    pub fn unseen_items(&self) -> &[String] {
        &self.unseen_items
    }

    pub fn unseen_topics(&self) -> &[String] {
        &self.unseen_topics
    }

    pub(crate) fn slot_of(&self, name: TableName) -> usize {
        self.kind
            .tables()
            .iter()
            .position(|(t, _)| *t == name)
            .unwrap_or_else(|| panic!("{} has no table {name}", self.kind))
    }

    #[inline]
    fn t(&self, slot: usize) -> &[f64] {
        &self.slots[slot]
    }

    #[inline]
    pub(crate) fn param(&self, r: ParamRef) -> f64 {
        self.slots[r.slot as usize][r.index as usize]
    }

    /// Converts dense arrays back into named tables over `vocab`.
    pub fn to_instance(&self, vocab: &Vocab) -> Result<ModelInstance> {
        let n = self.shape.n;
        let mut tables = BTreeMap::new();
        for (slot, &(name, key)) in self.kind.tables().iter().enumerate() {
            let dense = &self.slots[slot];
            let table: Table = match key {
                KeyKind::Scalar => [(SCALAR_KEY.to_owned(), dense[0])].into(),
                KeyKind::Cell => self.shape.positions().map(|p| (p.key(), dense[self.shape.index(p)])).collect(),
                KeyKind::CellLastClick => self
                    .shape
                    .positions()
                    .flat_map(|p| (0..p.j).map(move |r| (p, r)))
                    .map(|(p, r)| (last_click_key(p, r), dense[self.shape.index(p) * n + r]))
                    .collect(),
                KeyKind::Item => vocab.items().iter().cloned().zip(dense.iter().copied()).collect(),
                KeyKind::Topic => vocab.topics().iter().cloned().zip(dense.iter().copied()).collect(),
            };
            tables.insert(name, table);
        }
        ModelInstance::with_default(self.kind, self.shape, tables, self.unseen_default)
    }

    /// Checks that `s` has this model's shape and, for topic models, topics.
    pub fn check_session(&self, s: &SessionRecord) -> Result<()> {
        if s.shape != self.shape {
            return Err(Error::Mismatch(format!(
                "session shape {} differs from model shape {}",
                s.shape, self.shape
            )));
        }
        if self.kind.needs_topics() && s.topics.is_none() {
            return Err(Error::Mismatch(format!(
                "{} needs carousel sessions with topics, got {}",
                self.kind, s.kind
            )));
        }
        Ok(())
    }

    pub fn check_log(&self, log: &ClickLog) -> Result<()> {
        match log.sessions().first() {
            Some(s) => self.check_session(s),
            None => Ok(()),
        }
    }

    /// Product of topic factors for list `i`: `first(T_i) · ∏_{k<i} pass(T_k)`.
    #[inline]
    fn topic_path(&self, s: &SessionRecord, i: usize, first: usize, pass: usize, negate_pass: bool) -> f64 {
        let topics = s.topics.as_ref().expect("checked topic session");
        let mut f = self.t(first)[topics[i - 1].0 as usize];
        for t in &topics[..i - 1] {
            let v = self.t(pass)[t.0 as usize];
            f *= if negate_pass { 1.0 - v } else { v };
        }
        f
    }

    /// `∏_{l<j} (1 - β · α(Y_{i,l}))`.
    #[inline]
    fn cannibalization(&self, s: &SessionRecord, i: usize, j: usize, beta: f64, item: usize) -> f64 {
        s.row_items(i)[..j - 1]
            .iter()
            .map(|y| 1.0 - beta * self.t(item)[y.0 as usize])
            .product()
    }

    /// `P(C_{i,j} = 1 | conditioning)` given the list state before rank `j`.
    pub fn prob(&self, s: &SessionRecord, i: usize, j: usize, st: &RowState) -> f64 {
        let p = Position::new(i, j);
        let cell = self.shape.index(p);
        let y = s.items[cell].0 as usize;
        match self.kind {
            ModelKind::Rcm => self.t(0)[0],
            ModelKind::Rctr => self.t(0)[cell],
            ModelKind::Dctr => self.t(0)[y],
            ModelKind::Pbm => self.t(0)[cell] * self.t(1)[y],
            ModelKind::TrustPbm => self.t(0)[cell] * self.t(1)[y] + self.t(2)[cell],
            ModelKind::Cascade => {
                if st.last_click == 0 {
                    self.t(0)[y]
                } else {
                    0.0
                }
            }
            ModelKind::Ubm => self.t(0)[y] * self.t(1)[cell * self.shape.n + st.last_click],
            ModelKind::Dcm | ModelKind::Dbn => self.t(0)[y] * st.exam,
            ModelKind::Cacm => {
                if st.last_click != 0 {
                    return 0.0;
                }
                self.topic_path(s, i, 0, 0, true) * self.t(1)[y]
            }
            ModelKind::TopicsItemsV1 => {
                let f = self.topic_path(s, i, 0, 1, false);
                let g = self.t(2)[y] * self.cannibalization(s, i, j, self.t(3)[0], 2);
                f * g
            }
            ModelKind::TopicsItemsV2 => {
                let topic = s.topics.as_ref().expect("checked topic session")[i - 1].0 as usize;
                let g = self.topic_path(s, i, 0, 1, false)
                    * self.cannibalization(s, i, j, self.t(3)[topic], 2);
                self.t(2)[y] * g
            }
        }
    }

    /// Advances the list state after observing `C_{i,j} = clicked`.
    pub fn observe(&self, s: &SessionRecord, i: usize, j: usize, st: &mut RowState, clicked: bool) {
        match self.kind {
            ModelKind::Dcm | ModelKind::Dbn => {
                let cell = self.shape.index(Position::new(i, j));
                let y = s.items[cell].0 as usize;
                let alpha = self.t(0)[y];
                st.exam = if clicked {
                    match self.kind {
                        ModelKind::Dcm => self.t(1)[cell],
                        _ => (1.0 - self.t(1)[y]) * self.t(2)[0],
                    }
                } else {
                    let denom = 1.0 - st.exam * alpha;
                    let posterior = if denom > 0.0 {
                        st.exam * (1.0 - alpha) / denom
                    } else {
                        0.0
                    };
                    match self.kind {
                        ModelKind::Dcm => posterior,
                        _ => posterior * self.t(2)[0],
                    }
                };
            }
            _ => {}
        }
        if clicked {
            st.last_click = j;
        }
    }

    /// Teacher-forced conditionals for every cell, row-major.
    pub fn conditionals(&self, s: &SessionRecord) -> Result<Vec<f64>> {
        self.check_session(s)?;
        let mut out = Vec::with_capacity(self.shape.cells());
        for i in 1..=self.shape.m {
            let mut st = RowState::start();
            for j in 1..=self.shape.n {
                let q = self.prob(s, i, j, &st);
                check_conditional(q, Position::new(i, j))?;
                out.push(q);
                let c = s.clicks[self.shape.index(Position::new(i, j))];
                self.observe(s, i, j, &mut st, c);
            }
        }
        Ok(out)
    }

    /// EM view of the conditional at `(i, j)` (TrustPBM in its noisy-OR form).
    pub(crate) fn gates(&self, s: &SessionRecord, i: usize, j: usize, st: &RowState, out: &mut Gates) {
        out.clear();
        let cell = self.shape.index(Position::new(i, j));
        let y = s.items[cell].0;
        let r = |slot: usize, index: usize| ParamRef {
            slot: slot as u8,
            index: index as u32,
        };
        let topics = |out: &mut Gates, first: usize, pass: usize, negate: bool| {
            let ts = s.topics.as_ref().expect("checked topic session");
            out.lits.push(Lit::Pos(r(first, ts[i - 1].0 as usize)));
            for t in &ts[..i - 1] {
                let pr = r(pass, t.0 as usize);
                out.lits.push(if negate { Lit::Neg(pr) } else { Lit::Pos(pr) });
            }
        };
        match self.kind {
            ModelKind::Rcm => out.lits.push(Lit::Pos(r(0, 0))),
            ModelKind::Rctr => out.lits.push(Lit::Pos(r(0, cell))),
            ModelKind::Dctr => out.lits.push(Lit::Pos(r(0, y as usize))),
            ModelKind::Pbm => {
                out.lits.push(Lit::Pos(r(0, cell)));
                out.lits.push(Lit::Pos(r(1, y as usize)));
            }
            ModelKind::TrustPbm => {
                out.leak = Some(r(2, cell));
                out.lits.push(Lit::Pos(r(0, cell)));
                out.lits.push(Lit::Pos(r(1, y as usize)));
            }
            ModelKind::Cascade => {
                if st.last_click == 0 {
                    out.lits.push(Lit::Pos(r(0, y as usize)));
                } else {
                    out.zero = true;
                }
            }
            ModelKind::Ubm => {
                out.lits.push(Lit::Pos(r(0, y as usize)));
                out.lits.push(Lit::Pos(r(1, cell * self.shape.n + st.last_click)));
            }
            ModelKind::Cacm => {
                if st.last_click != 0 {
                    out.zero = true;
                } else {
                    topics(out, 0, 0, true);
                    out.lits.push(Lit::Pos(r(1, y as usize)));
                }
            }
            ModelKind::TopicsItemsV1 | ModelKind::TopicsItemsV2 => {
                topics(out, 0, 1, false);
                out.lits.push(Lit::Pos(r(2, y as usize)));
                let beta = match self.kind {
                    ModelKind::TopicsItemsV1 => r(3, 0),
                    _ => r(3, s.topics.as_ref().expect("checked topic session")[i - 1].0 as usize),
                };
                for prev in &s.row_items(i)[..j - 1] {
                    out.lits.push(Lit::Nand(beta, r(2, prev.0 as usize)));
                }
            }
            ModelKind::Dcm | ModelKind::Dbn => {
                unreachable!("{} is fitted over its examination chain", self.kind)
            }
        }
    }

    /// Probability encoded by `gates`, in the same parameter space.
    #[cfg(test)]
    pub(crate) fn gate_prob(&self, g: &Gates) -> f64 {
        if g.zero {
            return 0.0;
        }
        let and: f64 = g
            .lits
            .iter()
            .map(|l| match *l {
                Lit::Pos(a) => self.param(a),
                Lit::Neg(a) => 1.0 - self.param(a),
                Lit::Nand(a, b) => 1.0 - self.param(a) * self.param(b),
            })
            .product();
        match g.leak {
            None => and,
            Some(h) => {
                let h = self.param(h);
                h + (1.0 - h) * and
            }
        }
    }
}

fn check_conditional(q: f64, p: Position) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::Internal(format!("conditional at {p} is {q}, outside [0,1]")))
    }
}

#[inline]
pub(crate) fn bernoulli_ln(q: f64, clicked: bool) -> f64 {
    if clicked {
        q.ln()
    } else {
        (-q).ln_1p()
    }
}

/// `P(C_p = 1 | prior)` where `prior` assigns exactly the positions in `cond_clicks(p)`.
pub fn conditional_click_prob(
    m: &BoundModel,
    s: &SessionRecord,
    p: Position,
    prior: &ClickAssignment,
) -> Result<f64> {
    m.check_session(s)?;
    m.shape.check(p)?;
    let wanted = m.kind.descriptor().seq().cond_clicks(p, m.shape);
    if prior.len() != wanted.len() || wanted.iter().any(|q| !prior.contains_key(q)) {
        let given: Vec<String> = prior.keys().map(|q| q.to_string()).collect();
        let want: Vec<String> = wanted.iter().map(|q| q.to_string()).collect();
        return Err(Error::InvalidPrior(format!(
            "{} at {p} conditions on [{}], prior assigns [{}]",
            m.kind,
            want.join(" "),
            given.join(" ")
        )));
    }
    let mut st = RowState::start();
    // Catalog conditioning sets are empty or the whole list prefix; only the
    // latter carries state between ranks.
    for j in 1..p.j {
        let Some(&c) = prior.get(&Position::new(p.i, j)) else {
            continue;
        };
        let q = m.prob(s, p.i, j, &st);
        if (c && q == 0.0) || (!c && q == 1.0) {
            return Err(Error::InvalidPrior(format!(
                "observed value at {} has zero probability under {}",
                Position::new(p.i, j),
                m.kind
            )));
        }
        m.observe(s, p.i, j, &mut st, c);
    }
    let q = m.prob(s, p.i, p.j, &st);
    check_conditional(q, p)?;
    Ok(q)
}

/// `log P(C = c | T, Y)` by chaining conditionals with observed clicks as priors.
pub fn joint_log_likelihood(m: &BoundModel, s: &SessionRecord) -> Result<f64> {
    m.check_session(s)?;
    let mut total = 0.0;
    for i in 1..=m.shape.m {
        let mut st = RowState::start();
        for j in 1..=m.shape.n {
            let q = m.prob(s, i, j, &st);
            check_conditional(q, Position::new(i, j))?;
            let c = s.clicks[m.shape.index(Position::new(i, j))];
            let lp = bernoulli_ln(q, c);
            if lp == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            total += lp;
            m.observe(s, i, j, &mut st, c);
        }
    }
    Ok(total)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::clicklog::{InterfaceKind, ItemId, TopicId};

    pub(crate) fn table(entries: &[(&str, f64)]) -> Table {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    pub(crate) fn single_session(items: &[u32], clicks: &[bool]) -> SessionRecord {
        SessionRecord {
            kind: InterfaceKind::SingleList,
            shape: LayoutShape { m: 1, n: items.len() },
            topics: None,
            items: items.iter().map(|&k| ItemId(k)).collect(),
            clicks: clicks.to_vec(),
        }
    }

    fn rcm(zeta: f64, shape: LayoutShape) -> ModelInstance {
        ModelInstance::new(ModelKind::Rcm, shape, [(TableName::Zeta, table(&[("value", zeta)]))].into()).unwrap()
    }

    #[test]
    fn rcm_is_constant() {
        let m = rcm(0.5, LayoutShape { m: 1, n: 3 }).bind(&Vocab::new());
        let s = single_session(&[0, 1, 2], &[true, false, true]);
        let prior: ClickAssignment = ClickAssignment::new();
        for j in 1..=3 {
            assert_eq!(conditional_click_prob(&m, &s, Position::new(1, j), &prior).unwrap(), 0.5);
        }
        let s2 = single_session(&[0, 1], &[true, false]);
        let m2 = rcm(0.5, LayoutShape { m: 1, n: 2 }).bind(&Vocab::new());
        assert_eq!(joint_log_likelihood(&m2, &s2).unwrap(), 0.25f64.ln());
    }

    #[test]
    fn cascade_stops_after_a_click() {
        let vocab = Vocab::from_names(["a", "b", "c"], Vec::<&str>::new());
        let m = ModelInstance::new(
            ModelKind::Cascade,
            LayoutShape { m: 1, n: 3 },
            [(TableName::Item, table(&[("a", 0.3), ("b", 0.6), ("c", 0.9)]))].into(),
        )
        .unwrap()
        .bind(&vocab);
        let s = single_session(&[0, 1, 2], &[false, false, false]);
        let prior: ClickAssignment = [(Position::new(1, 1), true), (Position::new(1, 2), false)].into();
        assert_eq!(conditional_click_prob(&m, &s, Position::new(1, 3), &prior).unwrap(), 0.0);
        let prior: ClickAssignment = [(Position::new(1, 1), false), (Position::new(1, 2), false)].into();
        assert_eq!(conditional_click_prob(&m, &s, Position::new(1, 3), &prior).unwrap(), 0.9);
    }

    #[test]
    fn pbm_is_a_direct_product() {
        let vocab = Vocab::from_names(["z", "a"], Vec::<&str>::new());
        let m = ModelInstance::new(
            ModelKind::Pbm,
            LayoutShape { m: 1, n: 2 },
            [
                (TableName::Position, table(&[("1,1", 1.0), ("1,2", 0.5)])),
                (TableName::Item, table(&[("a", 0.6)])),
            ]
            .into(),
        )
        .unwrap()
        .bind(&vocab);
        let s = SessionRecord {
            kind: InterfaceKind::SingleList,
            shape: LayoutShape { m: 1, n: 2 },
            topics: None,
            items: vec![ItemId(0), ItemId(1)],
            clicks: vec![false, false],
        };
        assert_eq!(m.unseen_items(), ["z".to_string()]);
        let q = conditional_click_prob(&m, &s, Position::new(1, 2), &ClickAssignment::new()).unwrap();
        assert_eq!(q, 0.3);
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let err = ModelInstance::new(
            ModelKind::Pbm,
            LayoutShape { m: 1, n: 1 },
            [
                (TableName::Position, table(&[("1,1", 1.0)])),
                (TableName::Item, table(&[("a", 1.2)])),
            ]
            .into(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("probability out of range"), "{err}");
    }

    #[test]
    fn trust_bound_is_enforced() {
        let err = ModelInstance::new(
            ModelKind::TrustPbm,
            LayoutShape { m: 1, n: 1 },
            [
                (TableName::Position, table(&[("1,1", 1.0)])),
                (TableName::Item, table(&[("a", 0.9)])),
                (TableName::Trust, table(&[("1,1", 0.2)])),
            ]
            .into(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("f·g+h exceeds 1"), "{err}");
    }

    #[test]
    fn missing_and_extra_keys_are_rejected() {
        let shape = LayoutShape { m: 1, n: 2 };
        let missing = ModelInstance::new(
            ModelKind::Rctr,
            shape,
            [(TableName::Position, table(&[("1,1", 0.5)]))].into(),
        );
        assert!(missing.unwrap_err().to_string().contains("missing key"));
        let extra = ModelInstance::new(
            ModelKind::Rctr,
            shape,
            [(TableName::Position, table(&[("1,1", 0.5), ("1,2", 0.5), ("2,1", 0.5)]))].into(),
        );
        assert!(extra.unwrap_err().to_string().contains("unexpected key"));
        let vocab = Vocab::from_names(["a", "b"], Vec::<&str>::new());
        let incomplete = make_model(
            ModelKind::Dctr,
            shape,
            &vocab,
            [(TableName::Item, table(&[("a", 0.5)]))].into(),
        );
        assert!(incomplete.unwrap_err().to_string().contains("missing key: item[b]"));
    }

    #[test]
    fn cacm_with_complete_tables_is_fully_dependent() {
        let vocab = Vocab::from_names(["a", "b"], ["t1", "t2"]);
        let m = make_model(
            ModelKind::Cacm,
            LayoutShape { m: 2, n: 1 },
            &vocab,
            [
                (TableName::Tau, table(&[("t1", 0.4), ("t2", 0.7)])),
                (TableName::Item, table(&[("a", 0.5), ("b", 0.8)])),
            ]
            .into(),
        )
        .unwrap();
        assert_eq!(m.descriptor().category(), crate::taxonomy::TaxonomyCategory::FullyDependent);
        let b = m.bind(&vocab);
        let s = SessionRecord {
            kind: InterfaceKind::Carousel,
            shape: LayoutShape { m: 2, n: 1 },
            topics: Some(vec![TopicId(0), TopicId(1)]),
            items: vec![ItemId(0), ItemId(1)],
            clicks: vec![false, false],
        };
        let q = b.conditionals(&s).unwrap();
        assert_eq!(q[0], 0.4 * 0.5);
        assert_eq!(q[1], 0.7 * (1.0 - 0.4) * 0.8);
    }

    #[test]
    fn prior_must_match_conditioning_set() {
        let m = rcm(0.5, LayoutShape { m: 1, n: 2 }).bind(&Vocab::new());
        let s = single_session(&[0, 1], &[false, false]);
        let prior: ClickAssignment = [(Position::new(1, 1), true)].into();
        assert!(matches!(
            conditional_click_prob(&m, &s, Position::new(1, 2), &prior),
            Err(Error::InvalidPrior(_))
        ));
    }

    #[test]
    fn topic_model_needs_topics() {
        let vocab = Vocab::from_names(["a"], ["t"]);
        let m = make_model(
            ModelKind::Cacm,
            LayoutShape { m: 1, n: 1 },
            &vocab,
            [
                (TableName::Tau, table(&[("t", 0.4)])),
                (TableName::Item, table(&[("a", 0.5)])),
            ]
            .into(),
        )
        .unwrap()
        .bind(&vocab);
        let s = single_session(&[0], &[false]);
        assert!(matches!(joint_log_likelihood(&m, &s), Err(Error::Mismatch(_))));
    }

    #[test]
    fn params_round_trip_through_json() {
        let m = ModelInstance::new(
            ModelKind::Ubm,
            LayoutShape { m: 1, n: 2 },
            [
                (TableName::Item, table(&[("a", 0.1), ("b", 1.0 / 3.0)])),
                (TableName::Gamma, table(&[("1,1,0", 0.9), ("1,2,0", 0.7), ("1,2,1", 0.123456789)])),
            ]
            .into(),
        )
        .unwrap();
        let text = m.to_json().unwrap();
        let back = ModelInstance::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
        assert!(ModelInstance::from_json(&text.replace("\"gamma\"", "\"gama\"")).is_err());
    }

    #[test]
    fn gates_reproduce_conditionals() {
        use crate::simulation::{random_instance, simulate_log, LayoutPolicy, SimConfig};
        let shape = LayoutShape { m: 2, n: 3 };
        let cfg = SimConfig::with_counts(shape, InterfaceKind::Carousel, 10, 3, 300, 4, LayoutPolicy::UniformWithoutReplacement);
        for kind in ModelKind::ALL {
            if matches!(kind, ModelKind::Dbn | ModelKind::Dcm | ModelKind::TrustPbm) {
                continue;
            }
            let m = random_instance(kind, shape, &cfg.vocab(), 6).unwrap();
            let log = simulate_log(&m, &cfg).unwrap();
            let b = m.bind(log.vocab());
            let mut g = Gates::default();
            for s in log.sessions() {
                for i in 1..=2 {
                    let mut st = RowState::start();
                    for j in 1..=3 {
                        b.gates(s, i, j, &st, &mut g);
                        let (a, e) = (b.gate_prob(&g), b.prob(s, i, j, &st));
                        assert!((a - e).abs() < 1e-15, "{kind}: {a} vs {e}");
                        b.observe(s, i, j, &mut st, s.clicks[shape.index(Position::new(i, j))]);
                    }
                }
            }
        }
    }
}
