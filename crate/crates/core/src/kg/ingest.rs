//! TSV and N-Triples ingestion.
//!
//! TSV is the canonical fixture format: UTF-8, exactly three tab-separated
//! fields per line, no header, `#` lines ignored. The N-Triples reader accepts
//! a strict subset (`<iri> <iri> <iri-or-"literal"> .`); IRIs are reduced to
//! their final path segment, so `<http://rdf.freebase.com/ns/m.0493b56>`
//! becomes `m.0493b56`.

use std::io::{BufRead, BufReader, Read};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EntityId, KgError, Triple, TripleStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripleFormat {
    Tsv,
    NTriples,
}

impl FromStr for TripleFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(TripleFormat::Tsv),
            "nt" | "ntriples" | "n-triples" => Ok(TripleFormat::NTriples),
            other => Err(format!("unknown triple format {other:?} (expected tsv or ntriples)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows_read: usize,
    pub duplicates_dropped: usize,
}

#[derive(Debug)]
pub struct Ingested {
    pub store: TripleStore,
    pub stats: IngestStats,
}

pub fn ingest_triples<R: Read>(source: R, format: TripleFormat) -> Result<Ingested, KgError> {
    let mut reader = BufReader::new(source);
    let mut builder = TripleStore::builder();
    let mut stats = IngestStats::default();
    let mut buf = Vec::new();
    let mut line_no = 0;

    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|_| KgError::Encoding(line_no))?;
        let line = line.trim_end_matches(['\n', '\r']);
        let parsed = match format {
            TripleFormat::Tsv => parse_tsv_line(line),
            TripleFormat::NTriples => parse_nt_line(line),
        };
        let triple = match parsed {
            Ok(Some(t)) => t,
            Ok(None) => continue,
            Err(()) => return Err(KgError::MalformedRow(line_no)),
        };
        stats.rows_read += 1;
        if !builder.insert(triple) {
            stats.duplicates_dropped += 1;
        }
    }

    if builder.is_empty() {
        return Err(KgError::EmptyInput);
    }
    Ok(Ingested { store: builder.build(), stats })
}

fn parse_tsv_line(line: &str) -> Result<Option<Triple>, ()> {
    if line.trim().is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split('\t').collect();
    let [head, relation, tail] = fields.as_slice() else {
        return Err(());
    };
    let head = EntityId::new(*head).map_err(|_| ())?;
    let tail = EntityId::new(*tail).map_err(|_| ())?;
    Triple::new(head, *relation, tail).map(Some).map_err(|_| ())
}

fn parse_nt_line(line: &str) -> Result<Option<Triple>, ()> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let mut rest = line;
    let subject = take_iri(&mut rest)?;
    let predicate = take_iri(&mut rest)?;
    rest = rest.trim_start();
    let object = if rest.starts_with('"') { take_literal(&mut rest)? } else { take_iri(&mut rest)? };
    let rest = rest.trim_start();
    let Some(after_dot) = rest.strip_prefix('.') else {
        return Err(());
    };
    let trailing = after_dot.trim();
    if !trailing.is_empty() && !trailing.starts_with('#') {
        return Err(());
    }
    let head = EntityId::new(subject).map_err(|_| ())?;
    let tail = EntityId::new(object).map_err(|_| ())?;
    Triple::new(head, predicate, tail).map(Some).map_err(|_| ())
}

fn take_iri(rest: &mut &str) -> Result<String, ()> {
    let s = rest.trim_start();
    let body = s.strip_prefix('<').ok_or(())?;
    let end = body.find('>').ok_or(())?;
    let iri = &body[..end];
    *rest = &body[end + 1..];
    let trimmed = iri.trim_end_matches(['/', '#']);
    let segment = trimmed.rsplit(['/', '#']).next().unwrap_or("");
    if segment.is_empty() || segment.contains(char::is_whitespace) {
        return Err(());
    }
    Ok(segment.to_string())
}

fn take_literal(rest: &mut &str) -> Result<String, ()> {
    let body = rest.strip_prefix('"').ok_or(())?;
    let mut value = String::new();
    let mut chars = body.char_indices();
    let close = loop {
        let (i, c) = chars.next().ok_or(())?;
        match c {
            '"' => break i,
            '\\' => {
                let (_, esc) = chars.next().ok_or(())?;
                match esc {
                    '"' => value.push('"'),
                    '\\' => value.push('\\'),
                    'n' | 'r' | 't' => value.push(' '),
                    'u' => {
                        let hex: String = (0..4).filter_map(|_| chars.next().map(|(_, c)| c)).collect();
                        let code = u32::from_str_radix(&hex, 16).map_err(|_| ())?;
                        value.push(char::from_u32(code).ok_or(())?);
                    }
                    _ => return Err(()),
                }
            }
            c => value.push(c),
        }
    };
    let mut tail = &body[close + 1..];
    // Language tags and datatypes are accepted but carry no meaning here.
    if let Some(lang) = tail.strip_prefix('@') {
        let end = lang.find(char::is_whitespace).unwrap_or(lang.len());
        tail = &lang[end..];
    } else if let Some(dt) = tail.strip_prefix("^^") {
        let mut dt = dt;
        take_iri(&mut dt)?;
        tail = dt;
    }
    *rest = tail;
    Ok(value)
}
