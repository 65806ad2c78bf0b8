//! Judgement records, ingestion, and aggregation into frequency tables.
//!
//! Record CSV columns, in this order:
//!
//! ```text
//! participant_id,query_id,group,topicality,answer1_tag,answer1,answer2_tag,answer2
//! ```
//!
//! Sequence groups (`TUR`, `TRU`) carry two answers in group order; the eight
//! paired groups (`ConjPP` … `DisjMM`) carry a single `AND` or `OR` answer and
//! leave the second pair empty. JSON input is an array of objects with the
//! same field names.
//!
//! Frequency tables export as
//!
//! ```text
//! query_id,group,event,k,n,p_hat,ci_lo,ci_hi
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{Dimension, Sign};
use crate::measurement::Question;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{} invalid row(s):\n{}", .0.len(), join_issues(.0))]
    Invalid(Vec<RowIssue>),
    #[error("no records to aggregate")]
    Empty,
    #[error("unsupported file format for {0}")]
    UnknownFormat(String),
}

fn join_issues(issues: &[RowIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A problem with one input row; `row` is 1-based over data rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub row: usize,
    pub message: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

/// Between-subjects group a participant was assigned to for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    /// Topicality, then Understandability, then Reliability.
    Tur,
    /// Topicality, then Reliability, then Understandability.
    Tru,
    /// "Both statements" question for the sign pair `(U, R)`.
    Conj(Sign, Sign),
    /// "At least one statement" question for the sign pair `(U, R)`.
    Disj(Sign, Sign),
}

impl Group {
    /// Canonical order used for output and random-stream derivation.
    pub const ALL: [Group; 10] = [
        Group::Tur,
        Group::Tru,
        Group::Conj(Sign::Plus, Sign::Plus),
        Group::Conj(Sign::Plus, Sign::Minus),
        Group::Conj(Sign::Minus, Sign::Plus),
        Group::Conj(Sign::Minus, Sign::Minus),
        Group::Disj(Sign::Plus, Sign::Plus),
        Group::Disj(Sign::Plus, Sign::Minus),
        Group::Disj(Sign::Minus, Sign::Plus),
        Group::Disj(Sign::Minus, Sign::Minus),
    ];

    pub fn index(self) -> usize {
        Group::ALL.iter().position(|g| *g == self).unwrap()
    }

    pub fn is_sequence(self) -> bool {
        matches!(self, Group::Tur | Group::Tru)
    }

    /// Dimensions asked after Topicality, for sequence groups.
    pub fn order(self) -> Option<[Dimension; 2]> {
        match self {
            Group::Tur => Some([Dimension::Understandability, Dimension::Reliability]),
            Group::Tru => Some([Dimension::Reliability, Dimension::Understandability]),
            _ => None,
        }
    }

    /// Expected answer tags, in order.
    pub fn tags(self) -> &'static [QuestionTag] {
        match self {
            Group::Tur => &[QuestionTag::U, QuestionTag::R],
            Group::Tru => &[QuestionTag::R, QuestionTag::U],
            Group::Conj(..) => &[QuestionTag::And],
            Group::Disj(..) => &[QuestionTag::Or],
        }
    }
}

fn pm(s: Sign) -> char {
    match s {
        Sign::Plus => 'P',
        Sign::Minus => 'M',
    }
}

fn sign_from_pm(c: char) -> Option<Sign> {
    match c {
        'P' => Some(Sign::Plus),
        'M' => Some(Sign::Minus),
        _ => None,
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Tur => write!(f, "TUR"),
            Group::Tru => write!(f, "TRU"),
            Group::Conj(u, r) => write!(f, "Conj{}{}", pm(*u), pm(*r)),
            Group::Disj(u, r) => write!(f, "Disj{}{}", pm(*u), pm(*r)),
        }
    }
}

impl FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let err = || format!("unknown group {s:?}");
        match s {
            "TUR" => return Ok(Group::Tur),
            "TRU" => return Ok(Group::Tru),
            _ => {}
        }
        let (kind, signs) = if let Some(rest) = s.strip_prefix("Conj") {
            (true, rest)
        } else if let Some(rest) = s.strip_prefix("Disj") {
            (false, rest)
        } else {
            return Err(err());
        };
        let mut chars = signs.chars();
        let (u, r) = match (chars.next(), chars.next(), chars.next()) {
            (Some(a), Some(b), None) => (sign_from_pm(a).ok_or_else(err)?, sign_from_pm(b).ok_or_else(err)?),
            _ => return Err(err()),
        };
        Ok(if kind { Group::Conj(u, r) } else { Group::Disj(u, r) })
    }
}

impl Serialize for Group {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Group {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Label of an answered question after Topicality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QuestionTag {
    U,
    R,
    And,
    Or,
}

impl fmt::Display for QuestionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuestionTag::U => "U",
            QuestionTag::R => "R",
            QuestionTag::And => "AND",
            QuestionTag::Or => "OR",
        })
    }
}

impl FromStr for QuestionTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "U" => Ok(QuestionTag::U),
            "R" => Ok(QuestionTag::R),
            "AND" => Ok(QuestionTag::And),
            "OR" => Ok(QuestionTag::Or),
            other => Err(format!("unknown question tag {other:?}")),
        }
    }
}

/// One participant's answers for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgementRecord {
    pub participant_id: String,
    pub query_id: String,
    pub group: Group,
    pub topicality: Sign,
    answers: Vec<(QuestionTag, Sign)>,
}

impl JudgementRecord {
    pub fn new(
        participant_id: impl Into<String>,
        query_id: impl Into<String>,
        group: Group,
        topicality: Sign,
        answers: Vec<(QuestionTag, Sign)>,
    ) -> Result<Self, String> {
        let tags: Vec<QuestionTag> = answers.iter().map(|(t, _)| *t).collect();
        if tags != group.tags() {
            let expected: Vec<String> = group.tags().iter().map(|t| t.to_string()).collect();
            let got: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
            return Err(format!(
                "group {group} expects answers [{}] but got [{}]",
                expected.join(", "),
                got.join(", ")
            ));
        }
        let participant_id = participant_id.into();
        let query_id = query_id.into();
        if participant_id.trim().is_empty() {
            return Err("participant_id is empty".into());
        }
        if query_id.trim().is_empty() {
            return Err("query_id is empty".into());
        }
        Ok(JudgementRecord { participant_id, query_id, group, topicality, answers })
    }

    pub fn answers(&self) -> &[(QuestionTag, Sign)] {
        &self.answers
    }

    pub fn answer(&self, tag: QuestionTag) -> Option<Sign> {
        self.answers.iter().find(|(t, _)| *t == tag).map(|(_, s)| *s)
    }
}

/// Flat on-disk form shared by CSV and JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordRow {
    participant_id: String,
    query_id: String,
    group: String,
    topicality: String,
    answer1_tag: String,
    answer1: String,
    answer2_tag: Option<String>,
    answer2: Option<String>,
}

impl RecordRow {
    fn from_record(r: &JudgementRecord) -> Self {
        let second = r.answers.get(1);
        RecordRow {
            participant_id: r.participant_id.clone(),
            query_id: r.query_id.clone(),
            group: r.group.to_string(),
            topicality: r.topicality.to_string(),
            answer1_tag: r.answers[0].0.to_string(),
            answer1: r.answers[0].1.to_string(),
            answer2_tag: second.map(|(t, _)| t.to_string()),
            answer2: second.map(|(_, s)| s.to_string()),
        }
    }

    fn into_record(self) -> Result<JudgementRecord, String> {
        let group: Group = self.group.parse()?;
        let topicality: Sign = self.topicality.parse()?;
        let mut answers = vec![(self.answer1_tag.parse()?, self.answer1.parse()?)];
        let blank = |o: &Option<String>| o.as_deref().is_none_or(|s| s.trim().is_empty());
        match (blank(&self.answer2_tag), blank(&self.answer2)) {
            (true, true) => {}
            (false, false) => answers.push((
                self.answer2_tag.unwrap().parse()?,
                self.answer2.unwrap().parse()?,
            )),
            _ => return Err("answer2_tag and answer2 must both be set or both be empty".into()),
        }
        JudgementRecord::new(self.participant_id, self.query_id, group, topicality, answers)
    }
}

/// Record file encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Format, DataError> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "csv" => Ok(Format::Csv),
            Some(e) if e == "json" => Ok(Format::Json),
            _ => Err(DataError::UnknownFormat(path.display().to_string())),
        }
    }
}

fn validate_rows(rows: Vec<(usize, Result<RecordRow, String>)>) -> Result<Vec<JudgementRecord>, DataError> {
    let mut issues = Vec::new();
    let mut records = Vec::with_capacity(rows.len());
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (row, parsed) in rows {
        match parsed.and_then(RecordRow::into_record) {
            Ok(rec) => {
                let key = (rec.participant_id.clone(), rec.query_id.clone());
                if !seen.insert(key) {
                    issues.push(RowIssue {
                        row,
                        message: format!(
                            "duplicate record for participant {:?} and query {:?}",
                            rec.participant_id, rec.query_id
                        ),
                    });
                } else {
                    records.push(rec);
                }
            }
            Err(message) => issues.push(RowIssue { row, message }),
        }
    }
    if issues.is_empty() {
        Ok(records)
    } else {
        Err(DataError::Invalid(issues))
    }
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<JudgementRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = [
        "participant_id", "query_id", "group", "topicality",
        "answer1_tag", "answer1", "answer2_tag", "answer2",
    ];
    if headers.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(DataError::Invalid(vec![RowIssue {
            row: 0,
            message: format!("header must be {}", expected.join(",")),
        }]));
    }
    let rows = rdr
        .deserialize::<RecordRow>()
        .enumerate()
        .map(|(i, r)| (i + 1, r.map_err(|e| e.to_string())))
        .collect();
    validate_rows(rows)
}

pub fn read_records_json<R: Read>(reader: R) -> Result<Vec<JudgementRecord>, DataError> {
    let values: Vec<serde_json::Value> = serde_json::from_reader(reader)?;
    let rows = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| (i + 1, serde_json::from_value::<RecordRow>(v).map_err(|e| e.to_string())))
        .collect();
    validate_rows(rows)
}

/// Reads and validates a record file; all row problems are reported together.
pub fn ingest(path: &Path, format: Format) -> Result<Vec<JudgementRecord>, DataError> {
    let file = BufReader::new(File::open(path)?);
    match format {
        Format::Csv => read_records_csv(file),
        Format::Json => read_records_json(file),
    }
}

pub fn write_records_csv<W: Write>(writer: W, records: &[JudgementRecord]) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(RecordRow::from_record(r))?;
    }
    if records.is_empty() {
        wtr.write_record([
            "participant_id", "query_id", "group", "topicality",
            "answer1_tag", "answer1", "answer2_tag", "answer2",
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_records_json<W: Write>(writer: W, records: &[JudgementRecord]) -> Result<(), DataError> {
    let rows: Vec<RecordRow> = records.iter().map(RecordRow::from_record).collect();
    let mut w = BufWriter::new(writer);
    serde_json::to_writer_pretty(&mut w, &rows)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_records(path: &Path, format: Format, records: &[JudgementRecord]) -> Result<(), DataError> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_records_csv(file, records),
        Format::Json => write_records_json(file, records),
    }
}

/// An aggregated event within one group.
///
/// `Conditional::given` is stored in the order the questions were asked;
/// labels print it most-recent first, e.g. `R+|U+,T+`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Event {
    Topicality(Sign),
    Conditional { target: Question, given: Vec<Question> },
    Conjunction { u: Sign, r: Sign, given: Sign },
    Disjunction { u: Sign, r: Sign, given: Sign },
}

impl Event {
    pub fn conditional(target: Question, given: &[Question]) -> Self {
        Event::Conditional { target, given: given.to_vec() }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Topicality(s) => write!(f, "T{s}"),
            Event::Conditional { target, given } => {
                let given: Vec<String> = given.iter().rev().map(|q| q.to_string()).collect();
                write!(f, "{target}|{}", given.join(","))
            }
            Event::Conjunction { u, r, given } => write!(f, "U{u}^R{r}|T{given}"),
            Event::Disjunction { u, r, given } => write!(f, "U{u}vR{r}|T{given}"),
        }
    }
}

impl FromStr for Event {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || format!("invalid event label {s:?}");
        let s = s.trim();
        let Some((lhs, rhs)) = s.split_once('|') else {
            let q: Question = s.parse().map_err(|_| err())?;
            return match q.dimension {
                Dimension::Topicality => Ok(Event::Topicality(q.sign)),
                _ => Err(err()),
            };
        };
        for (sep, conj) in [('^', true), ('v', false)] {
            if let Some((a, b)) = lhs.split_once(sep) {
                let a: Question = a.parse().map_err(|_| err())?;
                let b: Question = b.parse().map_err(|_| err())?;
                let t: Question = rhs.parse().map_err(|_| err())?;
                if a.dimension != Dimension::Understandability
                    || b.dimension != Dimension::Reliability
                    || t.dimension != Dimension::Topicality
                {
                    return Err(err());
                }
                return Ok(if conj {
                    Event::Conjunction { u: a.sign, r: b.sign, given: t.sign }
                } else {
                    Event::Disjunction { u: a.sign, r: b.sign, given: t.sign }
                });
            }
        }
        let target: Question = lhs.parse().map_err(|_| err())?;
        let mut given = rhs
            .split(',')
            .map(|q| q.parse::<Question>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| err())?;
        given.reverse();
        Ok(Event::Conditional { target, given })
    }
}

/// An observed proportion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frequency {
    /// `k` successes among `n` trials.
    Counted { k: u64, n: u64 },
    /// An exact probability with a nominal sample size, e.g. a model's
    /// expected frequency.
    Exact { p: f64, n: u64 },
    /// A published value without a sample size.
    Reported { p: f64 },
}

impl Frequency {
    /// `None` for an empty stratum.
    pub fn p_hat(&self) -> Option<f64> {
        match *self {
            Frequency::Counted { n: 0, .. } => None,
            Frequency::Counted { k, n } => Some(k as f64 / n as f64),
            Frequency::Exact { p, .. } | Frequency::Reported { p } => Some(p),
        }
    }

    pub fn n(&self) -> Option<u64> {
        match *self {
            Frequency::Counted { n, .. } | Frequency::Exact { n, .. } => Some(n),
            Frequency::Reported { .. } => None,
        }
    }

    pub fn k(&self) -> Option<u64> {
        match *self {
            Frequency::Counted { k, .. } => Some(k),
            _ => None,
        }
    }

    pub fn is_empty_stratum(&self) -> bool {
        self.n() == Some(0)
    }

    /// 95% Wilson score interval; `None` without a positive sample size.
    pub fn wilson(&self) -> Option<(f64, f64)> {
        match (self.p_hat(), self.n()) {
            (Some(p), Some(n)) if n > 0 => Some(wilson_interval(p, n, Z_95)),
            _ => None,
        }
    }
}

/// Wilson score interval for proportion `p` over `n` trials.
pub fn wilson_interval(p: f64, n: u64, z: f64) -> (f64, f64) {
    let n = n as f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // Rounding can push an endpoint a hair past p at p ∈ {0, 1}.
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrequencyKey {
    pub query_id: String,
    pub group: Group,
    pub event: Event,
}

/// Empirical probabilities keyed by `(query, group, event)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrequencyTable {
    entries: BTreeMap<FrequencyKey, Frequency>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrequencyRow {
    query_id: String,
    group: String,
    event: String,
    k: Option<u64>,
    n: Option<u64>,
    p_hat: String,
    ci_lo: String,
    ci_hi: String,
}

fn opt_float(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

fn parse_opt_float(s: &str) -> Result<Option<f64>, String> {
    match s.trim() {
        "" | "n/a" => Ok(None),
        v => v.parse().map(Some).map_err(|_| format!("invalid number {v:?}")),
    }
}

impl FrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, group: Group, event: Event, freq: Frequency) {
        let key = FrequencyKey { query_id: query_id.to_string(), group, event };
        self.entries.insert(key, freq);
    }

    pub fn get(&self, query_id: &str, group: Group, event: &Event) -> Option<&Frequency> {
        // BTreeMap lookups need an owned key; the table is small.
        let key = FrequencyKey { query_id: query_id.to_string(), group, event: event.clone() };
        self.entries.get(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FrequencyKey, &Frequency)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn queries(&self) -> Vec<String> {
        let mut q: Vec<String> = self.entries.keys().map(|k| k.query_id.clone()).collect();
        q.dedup();
        q
    }

    pub fn has_group(&self, query_id: &str, group: Group) -> bool {
        self.entries.keys().any(|k| k.query_id == query_id && k.group == group)
    }

    /// Empty-stratum events, for reporting.
    pub fn empty_strata(&self) -> Vec<&FrequencyKey> {
        self.entries.iter().filter(|(_, f)| f.is_empty_stratum()).map(|(k, _)| k).collect()
    }

    /// Combines one event across every group of a query, weighting by sample
    /// size. Counted entries pool into a count; any exact entry makes the
    /// result exact.
    pub fn pooled(&self, query_id: &str, event: &Event) -> Option<Frequency> {
        let found: Vec<&Frequency> = self
            .entries
            .iter()
            .filter(|(k, _)| k.query_id == query_id && k.event == *event)
            .map(|(_, f)| f)
            .collect();
        match found.as_slice() {
            [] => None,
            [single] => Some(**single),
            many => {
                if many.iter().all(|f| matches!(f, Frequency::Counted { .. })) {
                    let (k, n) = many.iter().fold((0, 0), |(k, n), f| {
                        (k + f.k().unwrap_or(0), n + f.n().unwrap_or(0))
                    });
                    return Some(Frequency::Counted { k, n });
                }
                let (mut num, mut n_total) = (0.0, 0u64);
                for f in many {
                    let (Some(p), Some(n)) = (f.p_hat(), f.n()) else { continue };
                    num += p * n as f64;
                    n_total += n;
                }
                (n_total > 0).then(|| Frequency::Exact { p: num / n_total as f64, n: n_total })
            }
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        wtr.write_record(["query_id", "group", "event", "k", "n", "p_hat", "ci_lo", "ci_hi"])?;
        for (key, f) in &self.entries {
            let ci = f.wilson();
            wtr.serialize(FrequencyRow {
                query_id: key.query_id.clone(),
                group: key.group.to_string(),
                event: key.event.to_string(),
                k: f.k(),
                n: f.n(),
                p_hat: opt_float(f.p_hat()),
                ci_lo: opt_float(ci.map(|c| c.0)),
                ci_hi: opt_float(ci.map(|c| c.1)),
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header.join(",") != FREQUENCY_HEADER {
            return Err(DataError::Invalid(vec![RowIssue {
                row: 0,
                message: format!("header must be {FREQUENCY_HEADER}"),
            }]));
        }
        let mut table = FrequencyTable::new();
        let mut issues = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let i = i + 1;
            let row: FrequencyRow = match rec.deserialize(None) {
                Ok(r) => r,
                Err(e) => {
                    issues.push(RowIssue { row: i, message: e.to_string() });
                    continue;
                }
            };
            let parsed = (|| -> Result<(Group, Event, Frequency), String> {
                let group: Group = row.group.parse()?;
                let event: Event = row.event.parse()?;
                let p = parse_opt_float(&row.p_hat)?;
                let freq = match (row.k, row.n, p) {
                    (Some(k), Some(n), _) if k <= n => Frequency::Counted { k, n },
                    (Some(_), Some(_), _) => return Err("k exceeds n".into()),
                    (None, Some(n), Some(p)) => Frequency::Exact { p, n },
                    (None, None, Some(p)) => Frequency::Reported { p },
                    _ => return Err("row needs k and n, or p_hat".into()),
                };
                if let Some(p) = freq.p_hat() {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(format!("p_hat {p} outside [0, 1]"));
                    }
                }
                Ok((group, event, freq))
            })();
            match parsed {
                Ok((group, event, freq)) => table.insert(&row.query_id, group, event, freq),
                Err(message) => issues.push(RowIssue { row: i, message }),
            }
        }
        if issues.is_empty() {
            Ok(table)
        } else {
            Err(DataError::Invalid(issues))
        }
    }
}

pub const FREQUENCY_HEADER: &str = "query_id,group,event,k,n,p_hat,ci_lo,ci_hi";

/// Per-(query, group) tallies, indexed `[topicality][first answer][second answer]`
/// with `Plus = 0`.
#[derive(Default, Clone, Copy)]
struct Tally {
    by_topicality: [u64; 2],
    cells: [[[u64; 2]; 2]; 2],
}

fn idx(s: Sign) -> usize {
    match s {
        Sign::Plus => 0,
        Sign::Minus => 1,
    }
}

/// Counts every event of every group present, conditioning on the
/// Topicality answer. Strata with no records appear with `n = 0`.
pub fn aggregate<'a, I>(records: I) -> Result<FrequencyTable, DataError>
where
    I: IntoIterator<Item = &'a JudgementRecord>,
{
    let mut tallies: HashMap<(&'a str, Group), Tally> = HashMap::new();
    for rec in records {
        let tally = tallies.entry((rec.query_id.as_str(), rec.group)).or_default();
        let t = idx(rec.topicality);
        tally.by_topicality[t] += 1;
        let a = idx(rec.answers[0].1);
        let b = rec.answers.get(1).map_or(0, |(_, s)| idx(*s));
        tally.cells[t][a][b] += 1;
    }
    if tallies.is_empty() {
        return Err(DataError::Empty);
    }
    let mut table = FrequencyTable::new();
    for ((query, group), tally) in tallies {
        emit_group(&mut table, query, group, &tally);
    }
    Ok(table)
}

fn emit_group(table: &mut FrequencyTable, query: &str, group: Group, tally: &Tally) {
    let total = tally.by_topicality[0] + tally.by_topicality[1];
    for ts in Sign::BOTH {
        let n_t = tally.by_topicality[idx(ts)];
        table.insert(query, group, Event::Topicality(ts), Frequency::Counted { k: n_t, n: total });
        let cells = &tally.cells[idx(ts)];
        let tq = Question::t(ts);
        match group {
            Group::Tur | Group::Tru => {
                let [d1, d2] = group.order().unwrap();
                for s1 in Sign::BOTH {
                    let row = cells[idx(s1)];
                    let n_first = row[0] + row[1];
                    let q1 = Question::new(d1, s1);
                    table.insert(
                        query,
                        group,
                        Event::conditional(q1, &[tq]),
                        Frequency::Counted { k: n_first, n: n_t },
                    );
                    for s2 in Sign::BOTH {
                        table.insert(
                            query,
                            group,
                            Event::conditional(Question::new(d2, s2), &[tq, q1]),
                            Frequency::Counted { k: row[idx(s2)], n: n_first },
                        );
                    }
                }
            }
            Group::Conj(u, r) | Group::Disj(u, r) => {
                let yes = cells[0][0];
                let event = if matches!(group, Group::Conj(..)) {
                    Event::Conjunction { u, r, given: ts }
                } else {
                    Event::Disjunction { u, r, given: ts }
                };
                table.insert(query, group, event, Frequency::Counted { k: yes, n: n_t });
            }
        }
    }
}

/// The two published Query-2 values: `P(U−∧R+|T+) = 0.414` and
/// `P(U−|T+) = 0.198`.
pub fn query2_fixture() -> FrequencyTable {
    let mut table = FrequencyTable::new();
    table.insert(
        "q2",
        Group::Conj(Sign::Minus, Sign::Plus),
        Event::Conjunction { u: Sign::Minus, r: Sign::Plus, given: Sign::Plus },
        Frequency::Reported { p: 0.414 },
    );
    table.insert(
        "q2",
        Group::Tur,
        Event::conditional(Question::u(Sign::Minus), &[Question::t(Sign::Plus)]),
        Frequency::Reported { p: 0.198 },
    );
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "participant_id,query_id,group,topicality,answer1_tag,answer1,answer2_tag,answer2\n";

    fn csv_records(body: &str) -> Result<Vec<JudgementRecord>, DataError> {
        read_records_csv(format!("{HEADER}{body}").as_bytes())
    }

    fn rec(id: usize, group: Group, t: Sign, a: Sign, b: Sign) -> JudgementRecord {
        let answers = match group.tags() {
            [x, y] => vec![(*x, a), (*y, b)],
            [x] => vec![(*x, a)],
            _ => unreachable!(),
        };
        JudgementRecord::new(format!("p{id}"), "q1", group, t, answers).unwrap()
    }

    #[test]
    fn reads_well_formed_file() {
        let recs = csv_records(
            "a,q1,TUR,+,U,+,R,-\nb,q1,TRU,-,R,+,U,+\nc,q1,DisjPM,+,OR,-,,\n",
        )
        .unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].answer(QuestionTag::R), Some(Sign::Minus));
        assert_eq!(recs[2].group, Group::Disj(Sign::Plus, Sign::Minus));
        assert_eq!(recs[2].answers().len(), 1);
    }

    #[test]
    fn sequence_group_needs_two_answers() {
        let err = csv_records("a,q1,TUR,+,U,+,,\nb,q1,TUR,+,U,+,R,+\n").unwrap_err();
        let DataError::Invalid(issues) = err else { panic!("unexpected {err}") };
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].row, 1);
        assert!(issues[0].message.contains("TUR"));
    }

    #[test]
    fn issues_are_collected() {
        let err = csv_records("a,q1,TUR,+,R,+,U,+\nb,q1,Nope,+,U,+,R,+\nc,q1,ConjPP,?,AND,+,,\n")
            .unwrap_err();
        let DataError::Invalid(issues) = err else { panic!() };
        assert_eq!(issues.iter().map(|i| i.row).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn duplicates_are_rejected() {
        let err = csv_records("a,q1,TUR,+,U,+,R,+\na,q1,ConjPP,+,AND,+,,\na,q2,TUR,+,U,+,R,+\n")
            .unwrap_err();
        let DataError::Invalid(issues) = err else { panic!() };
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].row, 2);
        assert!(issues[0].message.contains("duplicate"));
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let ok = r#"[{"participant_id":"a","query_id":"q","group":"ConjMP","topicality":"+",
            "answer1_tag":"AND","answer1":"-","answer2_tag":null,"answer2":null}]"#;
        assert_eq!(read_records_json(ok.as_bytes()).unwrap().len(), 1);
        let bad = r#"[{"participant_id":"a","query_id":"q","group":"ConjMP","topicality":"+",
            "answer1_tag":"AND","answer1":"-","answer2_tag":null,"answer2":null,"age":3}]"#;
        assert!(matches!(read_records_json(bad.as_bytes()), Err(DataError::Invalid(_))));
    }

    #[test]
    fn counts_conditional_on_topicality() {
        let mut recs = Vec::new();
        for i in 0..100 {
            let u = Sign::from_bool(i < 64);
            recs.push(rec(i, Group::Tur, Sign::Plus, u, Sign::Plus));
        }
        let table = aggregate(&recs).unwrap();
        let f = table
            .get("q1", Group::Tur, &Event::conditional(Question::u(Sign::Plus), &[Question::t(Sign::Plus)]))
            .unwrap();
        assert_eq!(*f, Frequency::Counted { k: 64, n: 100 });
        assert_eq!(f.p_hat(), Some(0.64));
        // T− stratum is emitted but empty.
        let empty = table
            .get("q1", Group::Tur, &Event::conditional(Question::u(Sign::Plus), &[Question::t(Sign::Minus)]))
            .unwrap();
        assert!(empty.is_empty_stratum());
        assert_eq!(empty.p_hat(), None);
        assert!(!table.empty_strata().is_empty());
    }

    #[test]
    fn disjunction_counts() {
        let mut recs = Vec::new();
        let g = Group::Disj(Sign::Plus, Sign::Plus);
        for i in 0..80 {
            recs.push(rec(i, g, Sign::Plus, Sign::from_bool(i % 2 == 0), Sign::Plus));
        }
        for i in 80..95 {
            recs.push(rec(i, g, Sign::Minus, Sign::Plus, Sign::Plus));
        }
        let table = aggregate(&recs).unwrap();
        let ev = Event::Disjunction { u: Sign::Plus, r: Sign::Plus, given: Sign::Plus };
        assert_eq!(table.get("q1", g, &ev).unwrap().p_hat(), Some(0.5));
        assert_eq!(table.get("q1", g, &ev).unwrap().n(), Some(80));
    }

    #[test]
    fn aggregate_rejects_empty_input() {
        assert!(matches!(aggregate(&[]), Err(DataError::Empty)));
    }

    // Oracle: the Wilson bounds are the roots of (p̂ − p)² = z² p(1 − p) / n,
    // located here by bisection.
    fn wilson_by_bisection(p_hat: f64, n: f64, z: f64) -> (f64, f64) {
        let g = |p: f64| (p_hat - p).powi(2) - z * z * p * (1.0 - p) / n;
        let root = |mut lo: f64, mut hi: f64| {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (g(lo) > 0.0) == (g(mid) > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        (root(0.0, p_hat), root(p_hat, 1.0))
    }

    #[test]
    fn wilson_matches_root_oracle() {
        let (lo, hi) = wilson_by_bisection(0.5, 100.0, Z_95);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
        let (wlo, whi) = Frequency::Counted { k: 50, n: 100 }.wilson().unwrap();
        assert!((wlo - lo).abs() < 1e-12 && (whi - hi).abs() < 1e-12);
        for (k, n) in [(3u64, 17u64), (40, 41), (1, 250)] {
            let p = k as f64 / n as f64;
            let (olo, ohi) = wilson_by_bisection(p, n as f64, Z_95);
            let (wlo, whi) = wilson_interval(p, n, Z_95);
            assert!((wlo - olo).abs() < 1e-12 && (whi - ohi).abs() < 1e-12, "k={k} n={n}");
        }
    }

    #[test]
    fn event_labels_round_trip() {
        for label in ["T+", "U-|T+", "R+|U-,T+", "U+|R+,T-", "U-^R+|T+", "U+vR-|T-"] {
            let e: Event = label.parse().unwrap();
            assert_eq!(e.to_string(), label);
        }
        let e: Event = "R+|U-,T+".parse().unwrap();
        assert_eq!(
            e,
            Event::conditional(Question::r(Sign::Plus), &[Question::t(Sign::Plus), Question::u(Sign::Minus)])
        );
        assert!("R^U|T+".parse::<Event>().is_err());
        assert!("U+".parse::<Event>().is_err());
    }

    #[test]
    fn fixture_values() {
        let f = query2_fixture();
        let and = f
            .get("q2", Group::Conj(Sign::Minus, Sign::Plus), &"U-^R+|T+".parse().unwrap())
            .unwrap();
        assert_eq!(and.p_hat(), Some(0.414));
        let u = f.get("q2", Group::Tur, &"U-|T+".parse().unwrap()).unwrap();
        assert_eq!(u.p_hat(), Some(0.198));
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn frequency_csv_round_trip() {
        let mut table = query2_fixture();
        table.insert("q1", Group::Tur, Event::Topicality(Sign::Plus), Frequency::Counted { k: 3, n: 7 });
        table.insert("q1", Group::Tur, "U+|T-".parse().unwrap(), Frequency::Counted { k: 0, n: 0 });
        table.insert("q1", Group::Tru, "R+|T+".parse().unwrap(), Frequency::Exact { p: 0.1 + 0.2, n: 1000 });
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(FREQUENCY_HEADER));
        assert!(text.contains("n/a"));
        assert_eq!(FrequencyTable::read_csv(buf.as_slice()).unwrap(), table);
    }

    #[test]
    fn pooled_counts() {
        let mut t = FrequencyTable::new();
        let ev = Event::Topicality(Sign::Plus);
        t.insert("q", Group::Tur, ev.clone(), Frequency::Counted { k: 3, n: 4 });
        t.insert("q", Group::Tru, ev.clone(), Frequency::Counted { k: 5, n: 6 });
        assert_eq!(t.pooled("q", &ev), Some(Frequency::Counted { k: 8, n: 10 }));
        assert_eq!(t.pooled("other", &ev), None);
    }

    fn arb_record() -> impl Strategy<Value = (usize, bool, bool, bool, usize)> {
        (0usize..10, any::<bool>(), any::<bool>(), any::<bool>(), 0usize..3)
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(
            specs in prop::collection::vec(arb_record(), 1..60),
            seed in any::<u64>(),
        ) {
            let recs: Vec<JudgementRecord> = specs.iter().enumerate().map(|(i, (g, t, a, b, q))| {
                let group = Group::ALL[*g];
                let mut r = rec(i, group, Sign::from_bool(*t), Sign::from_bool(*a), Sign::from_bool(*b));
                r.query_id = format!("q{q}");
                r
            }).collect();
            let mut shuffled = recs.clone();
            // Deterministic Fisher–Yates driven by an LCG.
            let mut state = seed | 1;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            let a = aggregate(&recs).unwrap();
            prop_assert_eq!(&a, &aggregate(&shuffled).unwrap());
            for (_, f) in a.iter() {
                if let (Some(k), Some(n)) = (f.k(), f.n()) {
                    prop_assert!(k <= n);
                    if n > 0 {
                        let p = f.p_hat().unwrap();
                        prop_assert_eq!(p, k as f64 / n as f64);
                        let (lo, hi) = f.wilson().unwrap();
                        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
                    }
                }
            }

            let mut buf = Vec::new();
            write_records_csv(&mut buf, &recs).unwrap();
            prop_assert_eq!(&read_records_csv(buf.as_slice()).unwrap(), &recs);
            let mut buf = Vec::new();
            write_records_json(&mut buf, &recs).unwrap();
            prop_assert_eq!(&read_records_json(buf.as_slice()).unwrap(), &recs);
        }
    }
}
