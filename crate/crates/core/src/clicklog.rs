//! Observed variables of one impression and the line-delimited click-log format.
//!
//! A session shows `M` lists of `N` items each. Single lists are stored as
//! `M = 1` and grids are carousels without topics, so every model works on
//! the same `M × N` layout.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceKind {
    SingleList,
    Grid,
    Carousel,
}

impl InterfaceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InterfaceKind::SingleList => "single_list",
            InterfaceKind::Grid => "grid",
            InterfaceKind::Carousel => "carousel",
        }
    }

    pub fn has_topics(self) -> bool {
        self == InterfaceKind::Carousel
    }
}

impl fmt::Display for InterfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InterfaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_list" => Ok(InterfaceKind::SingleList),
            "grid" => Ok(InterfaceKind::Grid),
            "carousel" => Ok(InterfaceKind::Carousel),
            other => Err(Error::InvalidSession(format!(
                "unknown interface kind `{other}`"
            ))),
        }
    }
}

/// `m` lists with `n` items each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayoutShape {
    pub m: usize,
    pub n: usize,
}

impl LayoutShape {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidSession(format!(
                "shape {m}x{n} must have m >= 1 and n >= 1"
            )));
        }
        Ok(LayoutShape { m, n })
    }

    pub fn cells(&self) -> usize {
        self.m * self.n
    }

    pub fn contains(&self, p: Position) -> bool {
        (1..=self.m).contains(&p.i) && (1..=self.n).contains(&p.j)
    }

    /// Row-major offset of a (1-based) position.
    pub fn index(&self, p: Position) -> usize {
        (p.i - 1) * self.n + (p.j - 1)
    }

    pub fn position(&self, index: usize) -> Position {
        Position {
            i: index / self.n + 1,
            j: index % self.n + 1,
        }
    }

    /// All positions in row-major order.
    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        (0..self.cells()).map(move |k| self.position(k))
    }

    pub fn check(&self, p: Position) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::PositionOutOfRange { pos: p, shape: *self })
        }
    }
}

impl fmt::Display for LayoutShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.m, self.n)
    }
}

impl std::str::FromStr for LayoutShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("shape `{s}` is not of the form MxN"));
        let (m, n) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let m = m.trim().parse().map_err(|_| bad())?;
        let n = n.trim().parse().map_err(|_| bad())?;
        LayoutShape::new(m, n).map_err(|e| Error::Config(e.to_string()))
    }
}

/// 1-based cell coordinates: list `i`, rank `j` within the list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Position {
    pub i: usize,
    pub j: usize,
}

impl Position {
    pub fn new(i: usize, j: usize) -> Self {
        Position { i, j }
    }

    /// The `"i,j"` key used in parameter and report files.
    pub fn key(&self) -> String {
        format!("{},{}", self.i, self.j)
    }

    pub fn parse_key(key: &str) -> Option<Position> {
        let (i, j) = key.split_once(',')?;
        Some(Position {
            i: i.trim().parse().ok()?,
            j: j.trim().parse().ok()?,
        })
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.i, self.j)
    }
}

/// Dense index of an item in a [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(pub u32);

/// Dense index of a topic in a [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopicId(pub u32);

/// Click values keyed by position; used for conditioning sets and `C'`.
pub type ClickAssignment = BTreeMap<Position, bool>;

/// One impression. Items and clicks are stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    pub kind: InterfaceKind,
    pub shape: LayoutShape,
    pub topics: Option<Vec<TopicId>>,
    pub items: Vec<ItemId>,
    pub clicks: Vec<bool>,
}

impl SessionRecord {
    pub fn item(&self, p: Position) -> ItemId {
        self.items[self.shape.index(p)]
    }

    pub fn click(&self, p: Position) -> bool {
        self.clicks[self.shape.index(p)]
    }

    /// Topic of list `i` (1-based), if the session is a carousel.
    pub fn topic(&self, i: usize) -> Option<TopicId> {
        self.topics.as_ref().map(|t| t[i - 1])
    }

    pub fn row_items(&self, i: usize) -> &[ItemId] {
        let n = self.shape.n;
        &self.items[(i - 1) * n..i * n]
    }

    pub fn row_clicks(&self, i: usize) -> &[bool] {
        let n = self.shape.n;
        &self.clicks[(i - 1) * n..i * n]
    }

    pub fn n_clicks(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }

    /// Checks the record invariants that do not depend on a vocabulary.
    pub fn validate(&self) -> Result<()> {
        let cells = self.shape.cells();
        if self.items.len() != cells || self.clicks.len() != cells {
            return Err(Error::InvalidSession(format!(
                "items/clicks must have {cells} cells for shape {}",
                self.shape
            )));
        }
        validate_kind(self.kind, self.shape, self.topics.as_ref().map(Vec::len))?;
        let mut seen = HashSet::with_capacity(cells);
        for &it in &self.items {
            if !seen.insert(it) {
                return Err(Error::InvalidSession(format!(
                    "duplicate item index {} within session",
                    it.0
                )));
            }
        }
        Ok(())
    }
}

fn validate_kind(kind: InterfaceKind, shape: LayoutShape, topics: Option<usize>) -> Result<()> {
    match (kind, topics) {
        (InterfaceKind::SingleList, Some(_)) => {
            Err(Error::InvalidSession("topics forbidden for single_list".into()))
        }
        (InterfaceKind::Grid, Some(_)) => {
            Err(Error::InvalidSession("topics forbidden for grid".into()))
        }
        (InterfaceKind::Carousel, None) => {
            Err(Error::InvalidSession("topics required for carousel".into()))
        }
        (InterfaceKind::Carousel, Some(len)) if len != shape.m => Err(Error::InvalidSession(
            format!("carousel has {} lists but {len} topics", shape.m),
        )),
        (InterfaceKind::SingleList, None) if shape.m != 1 => Err(Error::InvalidSession(format!(
            "single_list must have exactly one list, found {}",
            shape.m
        ))),
        _ => Ok(()),
    }
}

/// Interned item and topic names, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    topics: Vec<String>,
    item_index: HashMap<String, u32>,
    topic_index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, T, S, U>(items: I, topics: T) -> Self
    where
        I: IntoIterator<Item = S>,
        T: IntoIterator<Item = U>,
        S: AsRef<str>,
        U: AsRef<str>,
    {
        let mut v = Vocab::new();
        for it in items {
            v.intern_item(it.as_ref());
        }
        for t in topics {
            v.intern_topic(t.as_ref());
        }
        v
    }

    pub fn intern_item(&mut self, name: &str) -> ItemId {
        if let Some(&k) = self.item_index.get(name) {
            return ItemId(k);
        }
        let k = self.items.len() as u32;
        self.items.push(name.to_owned());
        self.item_index.insert(name.to_owned(), k);
        ItemId(k)
    }

    pub fn intern_topic(&mut self, name: &str) -> TopicId {
        if let Some(&k) = self.topic_index.get(name) {
            return TopicId(k);
        }
        let k = self.topics.len() as u32;
        self.topics.push(name.to_owned());
        self.topic_index.insert(name.to_owned(), k);
        TopicId(k)
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    pub fn item_name(&self, id: ItemId) -> &str {
        &self.items[id.0 as usize]
    }

    pub fn topic_name(&self, id: TopicId) -> &str {
        &self.topics[id.0 as usize]
    }

    pub fn item_id(&self, name: &str) -> Option<ItemId> {
        self.item_index.get(name).map(|&k| ItemId(k))
    }

    pub fn topic_id(&self, name: &str) -> Option<TopicId> {
        self.topic_index.get(name).map(|&k| TopicId(k))
    }
}

/// A validated collection of same-shaped sessions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClickLog {
    layout: Option<(LayoutShape, InterfaceKind)>,
    sessions: Vec<SessionRecord>,
    vocab: Vocab,
}

impl ClickLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shape(&self) -> Option<LayoutShape> {
        self.layout.map(|(s, _)| s)
    }

    pub fn kind(&self) -> Option<InterfaceKind> {
        self.layout.map(|(_, k)| k)
    }

    pub fn sessions(&self) -> &[SessionRecord] {
        &self.sessions
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Same vocabulary and layout, sessions reordered by `order`.
    pub fn reordered(&self, order: &[usize]) -> ClickLog {
        ClickLog {
            layout: self.layout,
            sessions: order.iter().map(|&k| self.sessions[k].clone()).collect(),
            vocab: self.vocab.clone(),
        }
    }

    /// Splits into (first `k` sessions, rest), both sharing this vocabulary.
    pub fn split_at(&self, k: usize) -> (ClickLog, ClickLog) {
        let k = k.min(self.sessions.len());
        let head = ClickLog {
            layout: self.layout,
            sessions: self.sessions[..k].to_vec(),
            vocab: self.vocab.clone(),
        };
        let tail = ClickLog {
            layout: self.layout,
            sessions: self.sessions[k..].to_vec(),
            vocab: self.vocab.clone(),
        };
        (head, tail)
    }

    fn admit(&mut self, kind: InterfaceKind, shape: LayoutShape) -> Result<()> {
        match self.layout {
            None => {
                self.layout = Some((shape, kind));
                Ok(())
            }
            Some((s, _)) if s != shape => Err(Error::InvalidSession(format!(
                "shape mismatch: log is {s}, record is {shape}"
            ))),
            Some((_, k)) if k != kind => Err(Error::InvalidSession(format!(
                "interface kind mismatch: log is {k}, record is {kind}"
            ))),
            Some(_) => Ok(()),
        }
    }

    /// Validates and appends a session given by item/topic names.
    pub fn push_named<S: AsRef<str>>(
        &mut self,
        kind: InterfaceKind,
        topics: Option<&[S]>,
        items: &[Vec<S>],
        clicks: &[Vec<i64>],
    ) -> Result<()> {
        let m = items.len();
        let n = items.first().map_or(0, Vec::len);
        let shape = LayoutShape::new(m, n)?;
        if items.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSession("items rows have unequal lengths".into()));
        }
        if clicks.len() != m || clicks.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSession(format!(
                "clicks shape differs from items shape {shape}"
            )));
        }
        validate_kind(kind, shape, topics.map(<[S]>::len))?;
        let mut flat_clicks = Vec::with_capacity(shape.cells());
        for &c in clicks.iter().flatten() {
            match c {
                0 => flat_clicks.push(false),
                1 => flat_clicks.push(true),
                v => {
                    return Err(Error::InvalidSession(format!(
                        "click value {v} outside {{0,1}}"
                    )))
                }
            }
        }
        let mut seen = HashSet::with_capacity(shape.cells());
        for name in items.iter().flatten() {
            if !seen.insert(name.as_ref()) {
                return Err(Error::InvalidSession(format!(
                    "duplicate item `{}` within session",
                    name.as_ref()
                )));
            }
        }
        self.admit(kind, shape)?;
        let items = items
            .iter()
            .flatten()
            .map(|s| self.vocab.intern_item(s.as_ref()))
            .collect();
        let topics = topics.map(|ts| ts.iter().map(|t| self.vocab.intern_topic(t.as_ref())).collect());
        self.sessions.push(SessionRecord {
            kind,
            shape,
            topics,
            items,
            clicks: flat_clicks,
        });
        Ok(())
    }

    /// Appends a session whose ids refer to `names`, re-interning into this log.
    pub fn push_from(&mut self, session: &SessionRecord, names: &Vocab) -> Result<()> {
        session.validate()?;
        self.admit(session.kind, session.shape)?;
        let items = session
            .items
            .iter()
            .map(|&id| self.vocab.intern_item(names.item_name(id)))
            .collect();
        let topics = session.topics.as_ref().map(|ts| {
            ts.iter()
                .map(|&t| self.vocab.intern_topic(names.topic_name(t)))
                .collect()
        });
        self.sessions.push(SessionRecord {
            kind: session.kind,
            shape: session.shape,
            topics,
            items,
            clicks: session.clicks.clone(),
        });
        Ok(())
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    kind: InterfaceKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    topics: Option<Vec<&'a str>>,
    items: Vec<Vec<&'a str>>,
    clicks: Vec<Vec<u8>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    kind: String,
    #[serde(default)]
    topics: Option<Vec<String>>,
    items: Vec<Vec<String>>,
    clicks: Vec<Vec<i64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

const FORMAT_NAME: &str = "clicklog";
const FORMAT_VERSION: u32 = 1;

/// Reads a log; the first record fixes the shape and interface kind.
pub fn parse_log<R: BufRead>(source: R) -> Result<ClickLog> {
    let mut log = ClickLog::new();
    for (k, line) in source.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let at = |msg: String| Error::Parse { line: lineno, msg };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| at(format!("malformed record: {e}")))?;
        if lineno == 1 && value.get("format").is_some() {
            let header: Header =
                serde_json::from_value(value).map_err(|e| at(format!("malformed header: {e}")))?;
            if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
                return Err(at(format!(
                    "unsupported format {}/{}",
                    header.format, header.version
                )));
            }
            continue;
        }
        let rec: RecordIn =
            serde_json::from_value(value).map_err(|e| at(format!("malformed record: {e}")))?;
        let kind: InterfaceKind = rec.kind.parse().map_err(|e: Error| at(e.to_string()))?;
        log.push_named(kind, rec.topics.as_deref(), &rec.items, &rec.clicks)
            .map_err(|e| at(e.to_string()))?;
    }
    Ok(log)
}

/// Writes the canonical form: a header line, then one compact record per line.
pub fn write_log<W: Write>(log: &ClickLog, mut sink: W) -> Result<()> {
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
    };
    serde_json::to_writer(&mut sink, &header)?;
    sink.write_all(b"\n")?;
    let vocab = log.vocab();
    for s in log.sessions() {
        let n = s.shape.n;
        let rec = RecordOut {
            kind: s.kind,
            topics: s
                .topics
                .as_ref()
                .map(|ts| ts.iter().map(|&t| vocab.topic_name(t)).collect()),
            items: s
                .items
                .chunks(n)
                .map(|row| row.iter().map(|&it| vocab.item_name(it)).collect())
                .collect(),
            clicks: s
                .clicks
                .chunks(n)
                .map(|row| row.iter().map(|&c| c as u8).collect())
                .collect(),
        };
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// `C'` for position `p`: every other cell with its observed value.
pub fn complement_view(session: &SessionRecord, p: Position) -> Result<ClickAssignment> {
    session.shape.check(p)?;
    Ok(session
        .shape
        .positions()
        .filter(|&q| q != p)
        .map(|q| (q, session.click(q)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(s: &str) -> Result<ClickLog> {
        parse_log(s.as_bytes())
    }

    #[test]
    fn minimal_carousel_record() {
        let log = parse_str(
            r#"{"kind":"carousel","topics":["t1","t2"],"items":[["a","b","c"],["d","e","f"]],"clicks":[[0,0,0],[0,0,0]]}"#,
        )
        .unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.vocab().items().len(), 6);
        assert_eq!(log.shape(), Some(LayoutShape { m: 2, n: 3 }));
    }

    #[test]
    fn topics_forbidden_for_single_list() {
        let err = parse_str(
            r#"{"kind":"single_list","topics":["t"],"items":[["a","b"]],"clicks":[[0,1]]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("topics forbidden for single_list"), "{err}");
    }

    #[test]
    fn error_paths_report_line_numbers() {
        let cases = [
            (r#"{"kind":"grid","items":[["a","a"]],"clicks":[[0,0]]}"#, "duplicate item"),
            (r#"{"kind":"grid","items":[["a","b"]],"clicks":[[0,2]]}"#, "outside {0,1}"),
            (r#"{"kind":"grid","items":[["a","b"]],"clicks":[[0]]}"#, "clicks shape"),
            (r#"{"kind":"carousel","items":[["a","b"]],"clicks":[[0,0]]}"#, "topics required"),
            (r#"{"kind":"grid","topics":["x"],"items":[["a","b"]],"clicks":[[0,0]]}"#, "topics forbidden for grid"),
            (r#"{"kind":"grid","items":[["a","b"]],"clicks":[[0,0]],"extra":1}"#, "malformed"),
            (r#"{"kind":"grid","items":[["a","b"]],"#, "malformed"),
            (r#"{"kind":"list","items":[["a","b"]],"clicks":[[0,0]]}"#, "unknown interface kind"),
        ];
        for (line, needle) in cases {
            let text = format!("{{\"format\":\"clicklog\",\"version\":1}}\n{line}\n");
            let err = parse_str(&text).unwrap_err();
            let msg = err.to_string();
            assert!(msg.starts_with("line 2:"), "{msg}");
            assert!(msg.contains(needle), "{msg} should mention {needle}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let text = concat!(
            r#"{"kind":"grid","items":[["a","b"]],"clicks":[[0,0]]}"#,
            "\n",
            r#"{"kind":"grid","items":[["a","b","c"]],"clicks":[[0,0,0]]}"#,
            "\n"
        );
        let err = parse_str(text).unwrap_err();
        assert!(err.to_string().contains("line 2: shape mismatch"), "{err}");
    }

    #[test]
    fn unsupported_header_version() {
        let err = parse_str("{\"format\":\"clicklog\",\"version\":2}\n").unwrap_err();
        assert!(err.to_string().contains("unsupported format"));
    }

    #[test]
    fn empty_log_writes_header_only() {
        let mut out = Vec::new();
        write_log(&ClickLog::new(), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "{\"format\":\"clicklog\",\"version\":1}\n");
    }

    #[test]
    fn one_session_one_record_line() {
        let mut log = ClickLog::new();
        log.push_named::<&str>(InterfaceKind::SingleList, None, &[vec!["a", "b"]], &[vec![1, 0]])
            .unwrap();
        let mut out = Vec::new();
        write_log(&log, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(
            text.lines().nth(1).unwrap(),
            r#"{"kind":"single_list","items":[["a","b"]],"clicks":[[1,0]]}"#
        );
        assert_eq!(parse_str(&text).unwrap(), log);
    }

    #[test]
    fn header_is_optional() {
        let log = parse_str(r#"{"kind":"grid","items":[["a"],["b"]],"clicks":[[1],[0]]}"#).unwrap();
        assert_eq!(log.kind(), Some(InterfaceKind::Grid));
        assert_eq!(log.shape(), Some(LayoutShape { m: 2, n: 1 }));
    }

    fn session(shape: LayoutShape, clicks: &[bool]) -> SessionRecord {
        SessionRecord {
            kind: InterfaceKind::Grid,
            shape,
            topics: None,
            items: (0..shape.cells() as u32).map(ItemId).collect(),
            clicks: clicks.to_vec(),
        }
    }

    #[test]
    fn complement_of_single_cell_is_empty() {
        let s = session(LayoutShape { m: 1, n: 1 }, &[true]);
        assert!(complement_view(&s, Position::new(1, 1)).unwrap().is_empty());
    }

    #[test]
    fn complement_excludes_only_click() {
        let s = session(LayoutShape { m: 2, n: 2 }, &[true, false, false, false]);
        let c = complement_view(&s, Position::new(1, 1)).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.values().all(|&v| !v));
        assert!(!c.contains_key(&Position::new(1, 1)));
    }

    #[test]
    fn complement_preserves_other_values() {
        let clicks = [true, false, true, false, true, true];
        let s = session(LayoutShape { m: 2, n: 3 }, &clicks);
        let p = Position::new(2, 2);
        let c = complement_view(&s, p).unwrap();
        assert_eq!(c.len(), 5);
        let mut expected = ClickAssignment::new();
        for i in 1..=2 {
            for j in 1..=3 {
                if (i, j) != (2, 2) {
                    expected.insert(Position::new(i, j), clicks[(i - 1) * 3 + (j - 1)]);
                }
            }
        }
        assert_eq!(c, expected);
        assert!(complement_view(&s, Position::new(3, 1)).is_err());
    }

    #[test]
    fn shape_parses_from_flag() {
        assert_eq!("2x3".parse::<LayoutShape>().unwrap(), LayoutShape { m: 2, n: 3 });
        assert!("0x3".parse::<LayoutShape>().is_err());
        assert!("23".parse::<LayoutShape>().is_err());
    }
}
