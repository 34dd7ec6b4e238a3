use std::collections::HashMap;
use std::io::Read;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::{Event, ItemIdx, ItemVocab, SessionCorpus};
use crate::error::{Error, Result};

/// A CSV column, by zero-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl FromStr for Column {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_string()),
        })
    }
}

/// Keep only rows whose `column` equals `value` (e.g. click events only).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowFilter {
    pub column: Column,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub session: Column,
    pub timestamp: Column,
    pub item: Column,
    pub has_header: bool,
    pub delimiter: u8,
    pub filter: Option<RowFilter>,
}

impl Default for ColumnMap {
    /// `sessionId,timestamp,itemId,category` without a header row.
    fn default() -> Self {
        ColumnMap {
            session: Column::Index(0),
            timestamp: Column::Index(1),
            item: Column::Index(2),
            has_header: false,
            delimiter: b',',
            filter: None,
        }
    }
}

fn resolve(col: &Column, headers: Option<&csv::StringRecord>) -> Result<usize> {
    match col {
        Column::Index(i) => Ok(*i),
        Column::Name(name) => headers
            .and_then(|h| h.iter().position(|f| f.trim() == name))
            .ok_or_else(|| Error::InvalidArgument(format!("column {name:?} not found in header"))),
    }
}

/// Epoch seconds (integer or fractional) or an ISO-8601 date/date-time.
pub fn parse_timestamp(raw: &str) -> std::result::Result<i64, String> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        if v.is_finite() {
            return Ok(v.floor() as i64);
        }
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp());
    }
    Err(format!("unparseable timestamp {s:?}"))
}

/// Streams events out of delimited text.
pub fn read_events<R: Read>(reader: R, map: &ColumnMap) -> Result<impl Iterator<Item = Result<Event>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(map.has_header)
        .delimiter(map.delimiter)
        .flexible(true)
        .from_reader(reader);
    let headers = if map.has_header { Some(rdr.headers()?.clone()) } else { None };
    let session = resolve(&map.session, headers.as_ref())?;
    let timestamp = resolve(&map.timestamp, headers.as_ref())?;
    let item = resolve(&map.item, headers.as_ref())?;
    let filter = match &map.filter {
        Some(f) => Some((resolve(&f.column, headers.as_ref())?, f.value.clone())),
        None => None,
    };

    Ok(rdr.into_records().filter_map(move |rec| {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Some(Err(Error::MalformedRow {
                    line,
                    reason: e.to_string(),
                }));
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        if let Some((col, want)) = &filter {
            if rec.get(*col).map(str::trim) != Some(want.as_str()) {
                return None;
            }
        }
        let field = |i: usize, what: &str| -> Result<String> {
            match rec.get(i).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v.to_string()),
                _ => Err(Error::MalformedRow {
                    line,
                    reason: format!("missing {what} in column {i}"),
                }),
            }
        };
        let parsed = (|| {
            let session_key = field(session, "session key")?;
            let item_key = field(item, "item key")?;
            let ts = parse_timestamp(&field(timestamp, "timestamp")?).map_err(|reason| Error::MalformedRow { line, reason })?;
            if ts < 0 {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("negative timestamp {ts}"),
                });
            }
            Ok(Event {
                session_key,
                timestamp: ts,
                item_key,
            })
        })();
        Some(parsed)
    }))
}

/// Groups events into sessions by `session_key`.
///
/// Clicks within a session are ordered by timestamp (file order on ties)
/// and sessions by their first click (first appearance on ties). Item
/// indices are assigned in order of first appearance in that ordering.
pub fn ingest_events(rows: impl IntoIterator<Item = Result<Event>>) -> Result<SessionCorpus> {
    let mut groups: Vec<Vec<(i64, String)>> = Vec::new();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    for (n, row) in rows.into_iter().enumerate() {
        let ev = row?;
        if ev.session_key.is_empty() || ev.item_key.is_empty() || ev.timestamp < 0 {
            return Err(Error::MalformedRow {
                line: n as u64 + 1,
                reason: "empty key or negative timestamp".into(),
            });
        }
        let g = *by_key.entry(ev.session_key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push((ev.timestamp, ev.item_key));
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }
    for g in &mut groups {
        g.sort_by_key(|(t, _)| *t);
    }
    groups.sort_by_key(|g| g[0].0);

    let mut vocab = ItemVocab::new();
    let sessions: Vec<(i64, Vec<ItemIdx>)> = groups
        .into_iter()
        .map(|g| {
            let start = g[0].0;
            (start, g.iter().map(|(_, k)| vocab.intern(k)).collect())
        })
        .collect();
    Ok(SessionCorpus::from_sessions(sessions, vocab))
}
