//! CSV readers and writers for every input dataset.
//!
//! All files are UTF-8 CSV with a mandatory header whose columns must match
//! the documented schema exactly (after trimming). Dates are `YYYY-MM-DD`,
//! time slots `HH:MM` on a half-hour boundary, timestamps
//! `YYYY-MM-DDTHH:MM:SS`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::panel::{Antenna, Commune, DateIndex, OdMatrix, PanelSeries, Slot, TransitionEvent, TransitionLog, Variable};
use crate::schedule::{InterventionKind, InterventionSchedule, Intervention};

pub const HEX_SCORES_HEADER: &str = "date,hex_id,commune_id,displacements";
pub const OD_HEADER: &str = "date,slot,origin,destination,trips";
pub const TRANSITIONS_HEADER: &str = "device,timestamp,antenna_id";
pub const ANTENNAS_HEADER: &str = "antenna_id,commune_id,lat,lon";
pub const CASES_HEADER: &str = "date,commune_id,cum_cases";
pub const SOCIO_HEADER: &str = "commune_id,name,population,income_index,is_rural";
pub const SCHEDULE_HEADER: &str = "commune_id,start,end,kind";

const TIMESTAMP_FMT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{}:{line}: {reason}", file.display())]
pub struct SchemaError {
    pub file: PathBuf,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{}:{line}: duplicate key {key}", file.display())]
    DuplicateKey { file: PathBuf, line: u64, key: String },
    #[error("{}: {source}", file.display())]
    Io { file: PathBuf, source: io::Error },
    #[error("{0}")]
    Schedule(#[from] crate::schedule::ScheduleError),
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct HexRecord {
    pub date: NaiveDate,
    pub hex_id: String,
    pub commune_id: String,
    pub displacements: u64,
}

/// One cumulative-case observation.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseRecord {
    pub date: NaiveDate,
    pub commune_id: String,
    pub cum_cases: f64,
}

/// A value raised to the running maximum of its series.
#[derive(Clone, Debug, PartialEq)]
pub struct Repair {
    pub commune_id: String,
    pub date: NaiveDate,
    pub reported: f64,
    pub repaired: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CaseTable {
    /// Per commune, date-sorted and non-decreasing.
    pub series: BTreeMap<String, Vec<(NaiveDate, f64)>>,
    pub repairs: Vec<Repair>,
}

impl CaseTable {
    pub fn records(&self) -> Vec<CaseRecord> {
        let mut out: Vec<CaseRecord> = self
            .series
            .iter()
            .flat_map(|(c, obs)| {
                obs.iter().map(move |(date, v)| CaseRecord { date: *date, commune_id: c.clone(), cum_cases: *v })
            })
            .collect();
        out.sort_by(|a, b| (a.date, &a.commune_id).cmp(&(b.date, &b.commune_id)));
        out
    }

    /// Cumulative case panels on the index; days without a row are missing.
    pub fn to_panels(&self, index: &DateIndex) -> Vec<PanelSeries> {
        self.series
            .iter()
            .map(|(c, obs)| {
                let mut vals = vec![None; index.n_days];
                for (date, v) in obs {
                    if let Some(d) = index.offset(*date) {
                        vals[d] = Some(*v);
                    }
                }
                PanelSeries::from_options(c.clone(), Variable::CumCases, &vals)
            })
            .collect()
    }
}

struct Rows {
    file: PathBuf,
    reader: csv::Reader<Box<dyn Read>>,
}

impl Rows {
    fn open(path: &Path, header: &str) -> Result<Self> {
        let f = File::open(path).map_err(|source| IngestError::Io { file: path.to_path_buf(), source })?;
        Self::from_reader(path, Box::new(f), header)
    }

    fn from_reader(path: &Path, input: Box<dyn Read>, header: &str) -> Result<Self> {
        let file = path.to_path_buf();
        let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
        let mut rec = csv::StringRecord::new();
        let got = match reader.read_record(&mut rec) {
            Ok(true) => rec.iter().map(str::trim).collect::<Vec<_>>().join(","),
            Ok(false) => String::new(),
            Err(e) => return Err(SchemaError { file, line: 1, reason: e.to_string() }.into()),
        };
        if got != header {
            return Err(SchemaError { file, line: 1, reason: format!("expected header `{header}`, found `{got}`") }.into());
        }
        Ok(Self { file, reader })
    }

    fn err(&self, line: u64, reason: impl Into<String>) -> IngestError {
        SchemaError { file: self.file.clone(), line, reason: reason.into() }.into()
    }

    /// Calls `f` with (line number, trimmed fields) for every data row.
    fn for_each<F>(&mut self, width: usize, mut f: F) -> Result<()>
    where
        F: FnMut(&Self, u64, &[&str]) -> Result<()>,
    {
        let mut rec = csv::StringRecord::new();
        loop {
            let more = self.reader.read_record(&mut rec).map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                self.err(line.max(1), e.to_string())
            })?;
            if !more {
                return Ok(());
            }
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() == 1 && rec[0].trim().is_empty() {
                continue;
            }
            if rec.len() != width {
                return Err(self.err(line, format!("expected {width} fields, found {}", rec.len())));
            }
            let fields: Vec<&str> = rec.iter().map(str::trim).collect();
            f(self, line, &fields)?;
        }
    }

    fn dup(&self, line: u64, key: String) -> IngestError {
        IngestError::DuplicateKey { file: self.file.clone(), line, key }
    }
}

fn parse_date(rows: &Rows, line: u64, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| rows.err(line, format!("invalid date `{s}`")))
}

fn parse_count(rows: &Rows, line: u64, col: &str, s: &str) -> Result<u64> {
    s.parse::<u64>().map_err(|_| rows.err(line, format!("{col} must be a non-negative integer, found `{s}`")))
}

fn parse_real(rows: &Rows, line: u64, col: &str, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(rows.err(line, format!("{col} must be a finite number, found `{s}`"))),
    }
}

fn nonempty<'a>(rows: &Rows, line: u64, col: &str, s: &'a str) -> Result<&'a str> {
    if s.is_empty() {
        Err(rows.err(line, format!("{col} is empty")))
    } else {
        Ok(s)
    }
}

pub fn read_hex_scores(path: &Path) -> Result<Vec<HexRecord>> {
    let mut rows = Rows::open(path, HEX_SCORES_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    rows.for_each(4, |rows, line, f| {
        let date = parse_date(rows, line, f[0])?;
        let hex_id = nonempty(rows, line, "hex_id", f[1])?.to_string();
        let commune_id = nonempty(rows, line, "commune_id", f[2])?.to_string();
        let displacements = parse_count(rows, line, "displacements", f[3])?;
        if !seen.insert((date, hex_id.clone())) {
            return Err(rows.dup(line, format!("({date}, {hex_id})")));
        }
        out.push(HexRecord { date, hex_id, commune_id, displacements });
        Ok(())
    })?;
    Ok(out)
}

/// Reads OD trips grouped into one matrix per (date, slot). When `communes`
/// is given, origins and destinations outside it are rejected.
pub fn read_od(path: &Path, communes: Option<&BTreeSet<String>>) -> Result<Vec<OdMatrix>> {
    let mut rows = Rows::open(path, OD_HEADER)?;
    let mut grouped: BTreeMap<(NaiveDate, Slot), OdMatrix> = BTreeMap::new();
    rows.for_each(5, |rows, line, f| {
        let date = parse_date(rows, line, f[0])?;
        let slot = Slot::parse(f[1]).ok_or_else(|| rows.err(line, format!("slot `{}` is not a half-hour boundary", f[1])))?;
        let origin = nonempty(rows, line, "origin", f[2])?.to_string();
        let destination = nonempty(rows, line, "destination", f[3])?.to_string();
        if let Some(known) = communes {
            for id in [&origin, &destination] {
                if !known.contains(id) {
                    return Err(rows.err(line, format!("unknown commune `{id}`")));
                }
            }
        }
        let trips = parse_count(rows, line, "trips", f[4])?;
        let m = grouped.entry((date, slot)).or_insert_with(|| OdMatrix { date, slot, trips: BTreeMap::new() });
        let key = (origin, destination);
        if m.trips.contains_key(&key) {
            return Err(rows.dup(line, format!("({date}, {slot}, {}, {})", key.0, key.1)));
        }
        m.trips.insert(key, trips);
        Ok(())
    })?;
    Ok(grouped.into_values().collect())
}

pub fn read_antennas(path: &Path) -> Result<BTreeMap<String, Antenna>> {
    let mut rows = Rows::open(path, ANTENNAS_HEADER)?;
    let mut out = BTreeMap::new();
    rows.for_each(4, |rows, line, f| {
        let id = nonempty(rows, line, "antenna_id", f[0])?.to_string();
        let commune = nonempty(rows, line, "commune_id", f[1])?.to_string();
        let lat = parse_real(rows, line, "lat", f[2])?;
        let lon = parse_real(rows, line, "lon", f[3])?;
        if out.insert(id.clone(), Antenna { commune, lat, lon }).is_some() {
            return Err(rows.dup(line, id));
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn read_transitions(path: &Path, antenna_map_path: &Path) -> Result<TransitionLog> {
    let antennas = read_antennas(antenna_map_path)?;
    let mut rows = Rows::open(path, TRANSITIONS_HEADER)?;
    let mut events = Vec::new();
    rows.for_each(3, |rows, line, f| {
        let device = nonempty(rows, line, "device", f[0])?.to_string();
        let timestamp = NaiveDateTime::parse_from_str(f[1], TIMESTAMP_FMT)
            .map_err(|_| rows.err(line, format!("invalid timestamp `{}`", f[1])))?;
        let antenna = f[2].to_string();
        if !antennas.contains_key(&antenna) {
            return Err(rows.err(line, format!("unmapped antenna `{antenna}`")));
        }
        events.push(TransitionEvent { device, timestamp, antenna });
        Ok(())
    })?;
    TransitionLog::new(events, antennas).map_err(|a| {
        SchemaError { file: path.to_path_buf(), line: 1, reason: format!("unmapped antenna `{a}`") }.into()
    })
}

/// Reads cumulative cases. Values that drop below an earlier value of the
/// same commune are raised to the running maximum and reported as repairs.
pub fn read_cases(path: &Path) -> Result<CaseTable> {
    let mut rows = Rows::open(path, CASES_HEADER)?;
    let mut raw: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    rows.for_each(3, |rows, line, f| {
        let date = parse_date(rows, line, f[0])?;
        let commune = nonempty(rows, line, "commune_id", f[1])?.to_string();
        let v = parse_real(rows, line, "cum_cases", f[2])?;
        if v < 0.0 {
            return Err(rows.err(line, format!("cum_cases must be >= 0, found {v}")));
        }
        if raw.entry(commune.clone()).or_default().insert(date, v).is_some() {
            return Err(rows.dup(line, format!("({date}, {commune})")));
        }
        Ok(())
    })?;
    Ok(repair_cumulative(raw))
}

fn repair_cumulative(raw: BTreeMap<String, BTreeMap<NaiveDate, f64>>) -> CaseTable {
    let mut table = CaseTable::default();
    for (commune, obs) in raw {
        let mut running = f64::NEG_INFINITY;
        let mut series = Vec::with_capacity(obs.len());
        for (date, v) in obs {
            if v < running {
                log::warn!("cumulative cases for {commune} drop on {date} ({v} < {running}); repaired");
                table.repairs.push(Repair { commune_id: commune.clone(), date, reported: v, repaired: running });
            } else {
                running = v;
            }
            series.push((date, running));
        }
        table.series.insert(commune, series);
    }
    table
}

pub fn read_socio(path: &Path) -> Result<Vec<Commune>> {
    let mut rows = Rows::open(path, SOCIO_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    rows.for_each(5, |rows, line, f| {
        let id = nonempty(rows, line, "commune_id", f[0])?.to_string();
        let name = f[1].to_string();
        let population = parse_count(rows, line, "population", f[2])?;
        if population == 0 {
            return Err(rows.err(line, "population must be >= 1"));
        }
        let income_index = parse_real(rows, line, "income_index", nonempty(rows, line, "income_index", f[3])?)?;
        let is_rural = match f[4] {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(rows.err(line, format!("is_rural must be true/false, found `{other}`"))),
        };
        if !seen.insert(id.clone()) {
            return Err(rows.dup(line, id));
        }
        out.push(Commune { id, name, population, income_index, is_rural });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_schedule(path: &Path) -> Result<InterventionSchedule> {
    let mut rows = Rows::open(path, SCHEDULE_HEADER)?;
    let mut entries = Vec::new();
    rows.for_each(4, |rows, line, f| {
        let commune = nonempty(rows, line, "commune_id", f[0])?.to_string();
        let start = parse_date(rows, line, f[1])?;
        let end = if f[2].is_empty() { None } else { Some(parse_date(rows, line, f[2])?) };
        let kind = InterventionKind::parse(f[3]).ok_or_else(|| rows.err(line, format!("unknown kind `{}`", f[3])))?;
        entries.push(Intervention { commune, start, end, kind });
        Ok(())
    })?;
    Ok(InterventionSchedule::new(entries)?)
}

// Writers. Each emits the exact header of its reader; floats use the
// shortest representation that round-trips.

fn create(path: &Path) -> Result<io::BufWriter<File>> {
    File::create(path).map(io::BufWriter::new).map_err(|source| IngestError::Io { file: path.to_path_buf(), source })
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { file: path.to_path_buf(), source }
}

pub fn write_rows<W: Write>(out: &mut W, header: &str, rows: impl IntoIterator<Item = String>) -> io::Result<()> {
    writeln!(out, "{header}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    out.flush()
}

fn write_file(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    write_rows(&mut w, header, rows).map_err(io_err(path))
}

/// Quotes a field only when CSV requires it.
pub fn field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_hex_scores(path: &Path, records: &[HexRecord]) -> Result<()> {
    write_file(
        path,
        HEX_SCORES_HEADER,
        records.iter().map(|r| format!("{},{},{},{}", r.date, field(&r.hex_id), field(&r.commune_id), r.displacements)),
    )
}

pub fn write_od(path: &Path, od: &[OdMatrix]) -> Result<()> {
    write_file(
        path,
        OD_HEADER,
        od.iter().flat_map(|m| {
            m.trips.iter().map(move |((o, d), t)| format!("{},{},{},{},{}", m.date, m.slot, field(o), field(d), t))
        }),
    )
}

pub fn write_transitions(path: &Path, antennas_path: &Path, log: &TransitionLog) -> Result<()> {
    write_file(
        antennas_path,
        ANTENNAS_HEADER,
        log.antenna_map.iter().map(|(id, a)| format!("{},{},{},{}", field(id), field(&a.commune), a.lat, a.lon)),
    )?;
    write_file(
        path,
        TRANSITIONS_HEADER,
        log.events()
            .iter()
            .map(|e| format!("{},{},{}", field(&e.device), e.timestamp.format(TIMESTAMP_FMT), field(&e.antenna))),
    )
}

pub fn write_cases(path: &Path, records: &[CaseRecord]) -> Result<()> {
    write_file(
        path,
        CASES_HEADER,
        records.iter().map(|r| format!("{},{},{}", r.date, field(&r.commune_id), r.cum_cases)),
    )
}

pub fn write_socio(path: &Path, communes: &[Commune]) -> Result<()> {
    write_file(
        path,
        SOCIO_HEADER,
        communes.iter().map(|c| {
            format!("{},{},{},{},{}", field(&c.id), field(&c.name), c.population, c.income_index, c.is_rural)
        }),
    )
}

pub fn write_schedule(path: &Path, schedule: &InterventionSchedule) -> Result<()> {
    write_file(
        path,
        SCHEDULE_HEADER,
        schedule.entries().iter().map(|e| {
            let end = e.end.map(|d| d.to_string()).unwrap_or_default();
            format!("{},{},{},{}", field(&e.commune), e.start, end, e.kind)
        }),
    )
}
