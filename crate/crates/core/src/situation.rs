//! Situation records: the XML envelope nodes exchange, the per-node store
//! that keeps the newest record per location, and the table export.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use quick_xml::escape::{escape, resolve_predefined_entity};
use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_SHORT_MESSAGE: usize = 256;
pub const MAX_LONG_MESSAGE: usize = 4096;
const SCALE: i64 = 10_000_000;
const DECLARATION: &str = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>";
const BARE_PROLOGUE: &str = "<?xml>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SituationError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("missing element <{0}>")]
    Missing(&'static str),
    #[error("malformed XML at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },
    #[error("table row {row}: {msg}")]
    Table { row: usize, msg: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SituationError {
    SituationError::Invalid { field, reason: reason.into() }
}

/// Degrees held as an integer count of 1e-7 degrees, so equality and
/// ordering are exact at the printed precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coordinate(i64);

impl Coordinate {
    pub fn from_units(units: i64) -> Self {
        Coordinate(units)
    }

    pub fn units(self) -> i64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    fn parse(field: &'static str, text: &str) -> Result<Self, SituationError> {
        let bad = || invalid(field, format!("'{text}' is not a decimal with at most 7 fractional digits"));
        let (neg, body) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() || int.len() > 3 || frac.len() > 7 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if body.contains('.') && frac.is_empty() {
            return Err(bad());
        }
        let int: i64 = int.parse().map_err(|_| bad())?;
        let frac_units: i64 = format!("{frac:0<7}").parse().map_err(|_| bad())?;
        let units = int * SCALE + frac_units;
        Ok(Coordinate(if neg { -units } else { units }))
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:07}", a / SCALE as u64, a % SCALE as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Situation {
    Red,
    Yellow,
    Green,
}

impl Situation {
    pub fn as_str(self) -> &'static str {
        match self {
            Situation::Red => "Red",
            Situation::Yellow => "Yellow",
            Situation::Green => "Green",
        }
    }
}

impl FromStr for Situation {
    type Err = SituationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Red" => Ok(Situation::Red),
            "Yellow" => Ok(Situation::Yellow),
            "Green" => Ok(Situation::Green),
            other => Err(invalid("Situation", format!("'{other}' is not Red, Yellow or Green"))),
        }
    }
}

/// Calendar instant written as `DDMMYYYYhhmmss`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Timestamp(NaiveDateTime);

impl Timestamp {
    pub fn new(dt: NaiveDateTime) -> Self {
        Timestamp(dt)
    }

    pub fn datetime(self) -> NaiveDateTime {
        self.0
    }
}

impl FromStr for Timestamp {
    type Err = SituationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 14 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(invalid("TimeStamp", format!("'{s}' is not 14 digits")));
        }
        let n = |r: std::ops::Range<usize>| s[r].parse::<u32>().expect("digits");
        let date = NaiveDate::from_ymd_opt(n(4..8) as i32, n(2..4), n(0..2));
        let dt = date.and_then(|d| d.and_hms_opt(n(8..10), n(10..12), n(12..14)));
        dt.map(Timestamp).ok_or_else(|| invalid("TimeStamp", format!("'{s}' is not a valid date and time")))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.0;
        write!(f, "{:02}{:02}{:04}{:02}{:02}{:02}", d.day(), d.month(), d.year(), d.hour(), d.minute(), d.second())
    }
}

/// Collapse runs of whitespace to one space and trim the ends.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SituationRecord {
    pub latitude: Coordinate,
    pub longitude: Coordinate,
    pub situation: Situation,
    pub timestamp: Timestamp,
    pub short_message: String,
    /// Empty when absent.
    pub long_message: String,
    pub ontology: String,
}

impl SituationRecord {
    pub fn validate(&self) -> Result<(), SituationError> {
        let lat = self.latitude.units();
        let lon = self.longitude.units();
        if !(-90 * SCALE..=90 * SCALE).contains(&lat) {
            return Err(invalid("Latitude", format!("{} outside [-90, 90]", self.latitude)));
        }
        if !(-180 * SCALE..=180 * SCALE).contains(&lon) {
            return Err(invalid("Longitude", format!("{} outside [-180, 180]", self.longitude)));
        }
        for (field, text, max) in [
            ("ShortMessage", &self.short_message, Some(MAX_SHORT_MESSAGE)),
            ("LongMessage", &self.long_message, Some(MAX_LONG_MESSAGE)),
            ("Ontology", &self.ontology, None),
        ] {
            if normalize_text(text) != *text {
                return Err(invalid(field, "text must have single spaces and no leading or trailing whitespace"));
            }
            if let Some(max) = max {
                if text.chars().count() > max {
                    return Err(invalid(field, format!("longer than {max} characters")));
                }
            }
            if text.chars().any(|c| c.is_control()) {
                return Err(invalid(field, "control characters are not allowed"));
            }
        }
        Ok(())
    }

    pub fn location_key(&self) -> (Coordinate, Coordinate) {
        (self.latitude, self.longitude)
    }

    /// `"lat, lon"` at seven decimals.
    pub fn location_label(&self) -> String {
        format!("{}, {}", self.latitude, self.longitude)
    }
}

/// Canonical document: fixed element order, two-space indent, no attributes.
pub fn encode_situation(r: &SituationRecord) -> Result<Vec<u8>, SituationError> {
    r.validate()?;
    let mut out = String::with_capacity(512);
    out.push_str(DECLARATION);
    out.push_str("\n<XML>\n  <Location>\n");
    out.push_str(&format!("    <Latitude>{}</Latitude>\n", r.latitude));
    out.push_str(&format!("    <Longitude>{}</Longitude>\n", r.longitude));
    out.push_str("  </Location>\n");
    out.push_str(&format!("  <Situation>{}</Situation>\n", r.situation.as_str()));
    out.push_str(&format!("  <TimeStamp>{}</TimeStamp>\n", r.timestamp));
    out.push_str(&format!("  <ShortMessage>{}</ShortMessage>\n", escape(r.short_message.as_str())));
    if !r.long_message.is_empty() {
        out.push_str(&format!("  <LongMessage>{}</LongMessage>\n", escape(r.long_message.as_str())));
    }
    out.push_str(&format!("  <Ontology>{}</Ontology>\n", escape(r.ontology.as_str())));
    out.push_str("</XML>\n");
    Ok(out.into_bytes())
}

const LEAVES: [&str; 7] = ["Latitude", "Longitude", "Situation", "TimeStamp", "ShortMessage", "LongMessage", "Ontology"];

fn leaf_index(name: &str) -> Option<usize> {
    LEAVES.iter().position(|l| *l == name)
}

fn allowed_parent(name: &str) -> Option<&'static str> {
    match name {
        "XML" => Some(""),
        "Location" => Some("XML"),
        "Latitude" | "Longitude" => Some("Location"),
        "Situation" | "TimeStamp" | "ShortMessage" | "LongMessage" | "Ontology" => Some("XML"),
        _ => None,
    }
}

/// Parse and validate a message. Whitespace between elements and inside text
/// is insignificant; the bare `<?xml>` prologue is accepted.
pub fn decode_situation(bytes: &[u8]) -> Result<SituationRecord, SituationError> {
    let text = std::str::from_utf8(bytes).map_err(|e| SituationError::Parse { offset: e.valid_up_to() as u64, msg: "invalid UTF-8".into() })?;
    let lead = text.len() - text.trim_start().len();
    let (body, base) = match text[lead..].strip_prefix(BARE_PROLOGUE) {
        Some(rest) => (rest, (lead + BARE_PROLOGUE.len()) as u64),
        None => (text, 0),
    };
    let mut reader = Reader::from_str(body);
    let mut stack: Vec<String> = Vec::new();
    let mut values: [Option<String>; 7] = Default::default();
    let mut seen_root = false;
    let perr = |reader: &Reader<&[u8]>, msg: String| SituationError::Parse { offset: base + reader.buffer_position(), msg };
    loop {
        let ev = reader.read_event().map_err(|e| SituationError::Parse { offset: base + reader.error_position(), msg: e.to_string() })?;
        match ev {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                open_element(&reader, &stack, &name, &mut seen_root, &values, perr)?;
                if e.attributes().next().is_some() {
                    return Err(perr(&reader, format!("<{name}> must not carry attributes")));
                }
                if let Some(i) = leaf_index(&name) {
                    values[i] = Some(String::new());
                }
                stack.push(name);
            }
            Event::Empty(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                open_element(&reader, &stack, &name, &mut seen_root, &values, perr)?;
                if let Some(i) = leaf_index(&name) {
                    values[i] = Some(String::new());
                }
            }
            Event::End(_) => {
                stack.pop();
            }
            Event::Text(t) => {
                let s = t.decode().map_err(|e| perr(&reader, e.to_string()))?;
                append_text(&reader, &stack, &mut values, &s, perr)?;
            }
            Event::CData(c) => {
                let s = c.decode().map_err(|e| perr(&reader, e.to_string()))?;
                append_text(&reader, &stack, &mut values, &s, perr)?;
            }
            Event::GeneralRef(r) => {
                let resolved = if r.is_char_ref() {
                    r.resolve_char_ref().map_err(|e| perr(&reader, e.to_string()))?.map(String::from)
                } else {
                    let name = r.decode().map_err(|e| perr(&reader, e.to_string()))?;
                    resolve_predefined_entity(&name).map(String::from)
                };
                let s = resolved.ok_or_else(|| perr(&reader, "unknown entity reference".into()))?;
                append_text(&reader, &stack, &mut values, &s, perr)?;
            }
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
            Event::Eof => break,
        }
    }
    if !seen_root {
        return Err(SituationError::Missing("XML"));
    }
    if !stack.is_empty() {
        return Err(SituationError::Parse { offset: base + body.len() as u64, msg: format!("unclosed <{}>", stack.join("><")) });
    }
    let take = |i: usize| values[i].clone().map(|v| normalize_text(&v));
    let need = |i: usize| take(i).ok_or(SituationError::Missing(LEAVES[i]));
    let record = SituationRecord {
        latitude: Coordinate::parse("Latitude", &need(0)?)?,
        longitude: Coordinate::parse("Longitude", &need(1)?)?,
        situation: need(2)?.parse()?,
        timestamp: need(3)?.parse()?,
        short_message: need(4)?,
        long_message: take(5).unwrap_or_default(),
        ontology: need(6)?,
    };
    record.validate()?;
    Ok(record)
}

fn open_element(
    reader: &Reader<&[u8]>,
    stack: &[String],
    name: &str,
    seen_root: &mut bool,
    values: &[Option<String>; 7],
    perr: impl Fn(&Reader<&[u8]>, String) -> SituationError,
) -> Result<(), SituationError> {
    let parent = stack.last().map_or("", String::as_str);
    match allowed_parent(name) {
        None => return Err(perr(reader, format!("unexpected element <{name}>"))),
        Some(p) if p != parent => return Err(perr(reader, format!("<{name}> cannot appear inside <{parent}>"))),
        _ => {}
    }
    if name == "XML" {
        if *seen_root {
            return Err(perr(reader, "second <XML> root".into()));
        }
        *seen_root = true;
    }
    if let Some(i) = leaf_index(name) {
        if values[i].is_some() {
            return Err(perr(reader, format!("<{name}> appears twice")));
        }
    }
    Ok(())
}

fn append_text(
    reader: &Reader<&[u8]>,
    stack: &[String],
    values: &mut [Option<String>; 7],
    s: &str,
    perr: impl Fn(&Reader<&[u8]>, String) -> SituationError,
) -> Result<(), SituationError> {
    match stack.last().and_then(|n| leaf_index(n)) {
        Some(i) => {
            values[i].get_or_insert_with(String::new).push_str(s);
            Ok(())
        }
        None if s.trim().is_empty() => Ok(()),
        None => Err(perr(reader, "text outside a value element".into())),
    }
}

/// Newest record per location.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SituationDb {
    records: BTreeMap<(Coordinate, Coordinate), SituationRecord>,
}

impl SituationDb {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert, or replace only when strictly newer. Returns whether the store
    /// changed.
    pub fn upsert(&mut self, record: SituationRecord) -> Result<bool, SituationError> {
        record.validate()?;
        let key = record.location_key();
        match self.records.get(&key) {
            Some(old) if old.timestamp >= record.timestamp => Ok(false),
            _ => {
                self.records.insert(key, record);
                Ok(true)
            }
        }
    }

    pub fn get(&self, latitude: Coordinate, longitude: Coordinate) -> Option<&SituationRecord> {
        self.records.get(&(latitude, longitude))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &SituationRecord> {
        self.records.values()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SituationRow {
    pub location: String,
    pub situation: String,
    pub timestamp: String,
    pub short_message: String,
}

pub const TABLE_HEADERS: [&str; 4] = ["Location", "Situation", "TimeStamp", "ShortMessage"];

/// Rows newest first; equal timestamps fall back to location order.
pub fn export_situation_table(db: &SituationDb) -> Vec<SituationRow> {
    let mut recs: Vec<&SituationRecord> = db.records().collect();
    recs.sort_by(|a, b| b.timestamp.cmp(&a.timestamp).then(a.location_key().cmp(&b.location_key())));
    recs.into_iter()
        .map(|r| SituationRow {
            location: r.location_label(),
            situation: r.situation.as_str().to_string(),
            timestamp: r.timestamp.to_string(),
            short_message: r.short_message.clone(),
        })
        .collect()
}

pub fn write_table_csv<W: Write>(rows: &[SituationRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["location", "situation", "timestamp", "short_message"])?;
    for r in rows {
        w.write_record([&r.location, &r.situation, &r.timestamp, &r.short_message])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width columns separated by two spaces; trailing blanks trimmed.
pub fn render_table_text(rows: &[SituationRow]) -> String {
    let cells: Vec<[&str; 4]> = rows
        .iter()
        .map(|r| [r.location.as_str(), r.situation.as_str(), r.timestamp.as_str(), r.short_message.as_str()])
        .collect();
    let mut widths = TABLE_HEADERS.map(|h| h.chars().count());
    for c in &cells {
        for (w, v) in widths.iter_mut().zip(c) {
            *w = (*w).max(v.chars().count());
        }
    }
    let line = |vals: [&str; 4]| {
        let mut s = String::new();
        for (i, v) in vals.iter().enumerate() {
            s.push_str(v);
            if i < 3 {
                s.push_str(&" ".repeat(widths[i] - v.chars().count() + 2));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(TABLE_HEADERS);
    for c in cells {
        out.push_str(&line(c));
    }
    out
}

/// Load records from a CSV with columns `location,situation,timestamp,short_message`
/// and optionally `long_message` and `ontology`, upserting each row.
pub fn read_db_csv<R: Read>(input: R) -> Result<SituationDb, SituationError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| SituationError::Table { row: 0, msg: e.to_string() })?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| col(name).ok_or_else(|| SituationError::Table { row: 0, msg: format!("missing column '{name}'") });
    let (loc, sit, ts, short) = (need("location")?, need("situation")?, need("timestamp")?, need("short_message")?);
    let (long, onto) = (col("long_message"), col("ontology"));
    let mut db = SituationDb::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| SituationError::Table { row, msg: e.to_string() })?;
        let get = |c: usize| rec.get(c).unwrap_or("").trim().to_string();
        let wrap = |e: SituationError| SituationError::Table { row, msg: e.to_string() };
        let location = get(loc);
        let (lat, lon) = location
            .split_once(',')
            .ok_or_else(|| SituationError::Table { row, msg: format!("location '{location}' is not 'lat, lon'") })?;
        let record = SituationRecord {
            latitude: Coordinate::parse("Latitude", lat.trim()).map_err(wrap)?,
            longitude: Coordinate::parse("Longitude", lon.trim()).map_err(wrap)?,
            situation: get(sit).parse().map_err(wrap)?,
            timestamp: get(ts).parse().map_err(wrap)?,
            short_message: normalize_text(&get(short)),
            long_message: long.map(|c| normalize_text(&get(c))).unwrap_or_default(),
            ontology: onto.map(|c| normalize_text(&get(c))).unwrap_or_default(),
        };
        db.upsert(record).map_err(wrap)?;
    }
    Ok(db)
}

/// Parse a `lat`/`lon` text the way the decoder does.
pub fn parse_coordinate(field: &'static str, text: &str) -> Result<Coordinate, SituationError> {
    Coordinate::parse(field, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(lat: &str, lon: &str, sit: Situation, ts: &str, msg: &str) -> SituationRecord {
        SituationRecord {
            latitude: parse_coordinate("Latitude", lat).unwrap(),
            longitude: parse_coordinate("Longitude", lon).unwrap(),
            situation: sit,
            timestamp: ts.parse().unwrap(),
            short_message: msg.into(),
            long_message: String::new(),
            ontology: "Safety".into(),
        }
    }

    #[test]
    fn coordinates_print_seven_decimals() {
        let c = parse_coordinate("Latitude", "24.861422").unwrap();
        assert_eq!(c.to_string(), "24.8614220");
        assert_eq!(parse_coordinate("Latitude", "-0.5").unwrap().to_string(), "-0.5000000");
        assert!(parse_coordinate("Latitude", "1.123456789").is_err());
        assert!(parse_coordinate("Latitude", "abc").is_err());
        assert!(parse_coordinate("Latitude", "1.").is_err());
    }

    #[test]
    fn timestamp_reading() {
        let t: Timestamp = "20052015201820".parse().unwrap();
        assert_eq!(t.datetime(), NaiveDate::from_ymd_opt(2015, 5, 20).unwrap().and_hms_opt(20, 18, 20).unwrap());
        assert_eq!(t.to_string(), "20052015201820");
        assert!("20052015209920".parse::<Timestamp>().is_err());
        assert!("31022015000000".parse::<Timestamp>().is_err());
        assert!("2005201520182".parse::<Timestamp>().is_err());
    }

    #[test]
    fn situation_is_case_sensitive() {
        assert!("red".parse::<Situation>().is_err());
        assert!(matches!("Blue".parse::<Situation>(), Err(SituationError::Invalid { field: "Situation", .. })));
    }

    #[test]
    fn encode_is_deterministic_and_canonical() {
        let r = rec("24.8614220", "67.0094390", Situation::Red, "20052015201820", "A & B <c>");
        let a = encode_situation(&r).unwrap();
        assert_eq!(a, encode_situation(&r).unwrap());
        let back = decode_situation(&a).unwrap();
        assert_eq!(back, r);
        assert_eq!(encode_situation(&back).unwrap(), a);
        assert!(!String::from_utf8(a).unwrap().contains("LongMessage"));
    }

    #[test]
    fn encoder_rejects_bad_records() {
        let mut r = rec("24.8614220", "67.0094390", Situation::Red, "20052015201820", "ok");
        r.short_message = " padded".into();
        assert!(matches!(encode_situation(&r), Err(SituationError::Invalid { field: "ShortMessage", .. })));
        r.short_message = "x".repeat(257);
        assert!(encode_situation(&r).is_err());
        let mut r = rec("24.8614220", "67.0094390", Situation::Red, "20052015201820", "ok");
        r.latitude = Coordinate::from_units(91 * SCALE);
        assert!(matches!(encode_situation(&r), Err(SituationError::Invalid { field: "Latitude", .. })));
    }

    #[test]
    fn decoder_errors() {
        assert!(matches!(decode_situation(b"<XML><Location>"), Err(SituationError::Parse { .. })));
        assert!(matches!(decode_situation(b"<XML></Location>"), Err(SituationError::Parse { .. })));
        let missing = b"<XML><Location><Latitude>1</Latitude><Longitude>2</Longitude></Location><Situation>Red</Situation><ShortMessage>x</ShortMessage><Ontology>S</Ontology></XML>";
        assert_eq!(decode_situation(missing), Err(SituationError::Missing("TimeStamp")));
        let blue = String::from_utf8(missing.to_vec()).unwrap().replace("Red", "Blue").replace("<ShortMessage>", "<TimeStamp>20052015201820</TimeStamp><ShortMessage>");
        assert!(matches!(decode_situation(blue.as_bytes()), Err(SituationError::Invalid { field: "Situation", .. })));
    }

    #[test]
    fn upsert_freshness() {
        let mut db = SituationDb::new();
        assert!(db.upsert(rec("1.0", "2.0", Situation::Red, "20052015201820", "new")).unwrap());
        assert_eq!(db.len(), 1);
        assert!(!db.upsert(rec("1.0", "2.0", Situation::Green, "20052015200820", "old")).unwrap());
        assert!(!db.upsert(rec("1.0", "2.0", Situation::Green, "20052015201820", "same time")).unwrap());
        assert_eq!(db.records().next().unwrap().short_message, "new");
    }

    #[test]
    fn empty_table_has_header_only() {
        let rows = export_situation_table(&SituationDb::new());
        assert!(rows.is_empty());
        let mut csv = Vec::new();
        write_table_csv(&rows, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "location,situation,timestamp,short_message\n");
        assert_eq!(render_table_text(&rows), "Location  Situation  TimeStamp  ShortMessage\n");
    }

    #[test]
    fn csv_round_trip_through_db() {
        let mut db = SituationDb::new();
        db.upsert(rec("24.8614620", "67.0099390", Situation::Red, "20052015201820", "Injured, trapped")).unwrap();
        let mut csv = Vec::new();
        write_table_csv(&export_situation_table(&db), &mut csv).unwrap();
        let again = read_db_csv(csv.as_slice()).unwrap();
        assert_eq!(export_situation_table(&again), export_situation_table(&db));
    }
}
