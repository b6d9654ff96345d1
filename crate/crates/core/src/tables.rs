//! Census-style name, geography, income and voter tables.
//!
//! All files are UTF-8 CSV with a required header row:
//!
//! | file    | header                                                |
//! |---------|-------------------------------------------------------|
//! | names   | `name,count,white,black,hispanic,asian,aian,other`    |
//! | geo     | `geo_id,white,black,hispanic,asian,aian,other`        |
//! | income  | `geo_id,median_income`                                |
//! | voters  | `id,first,middle,last,geo_id,race`                    |
//!
//! Name proportions may be empty or `(S)` (suppressed); such cells count
//! as zero and the row is renormalized.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::normalize_name;
use crate::race::{Race, RaceDistribution, NUM_RACES};

/// Minimum name frequency for inclusion in the Census name lists.
pub const DEFAULT_MIN_COUNT: u64 = 100;

pub const NAME_HEADER: [&str; 8] = [
    "name", "count", "white", "black", "hispanic", "asian", "aian", "other",
];
pub const GEO_HEADER: [&str; 7] = ["geo_id", "white", "black", "hispanic", "asian", "aian", "other"];
pub const INCOME_HEADER: [&str; 2] = ["geo_id", "median_income"];
pub const VOTER_HEADER: [&str; 6] = ["id", "first", "middle", "last", "geo_id", "race"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NameKind {
    Surname,
    Firstname,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NameEntry {
    pub count: u64,
    pub dist: RaceDistribution,
}

/// Listed names with their race distributions. Absence from the table is
/// what makes a name "unmatched".
#[derive(Clone, Debug)]
pub struct NameTable {
    kind: NameKind,
    min_count: u64,
    entries: HashMap<String, NameEntry>,
}

impl NameTable {
    /// Builds a table from already-normalized entries.
    pub fn from_entries(
        kind: NameKind,
        min_count: u64,
        entries: impl IntoIterator<Item = (String, NameEntry)>,
    ) -> Result<Self> {
        let mut map = HashMap::new();
        for (name, entry) in entries {
            let key = normalize_name(&name);
            if key.is_empty() {
                return Err(Error::InvalidValue("empty name key".into()));
            }
            if entry.count < min_count {
                return Err(Error::InvalidValue(format!(
                    "{key}: count {} below minimum {min_count}",
                    entry.count
                )));
            }
            if map.insert(key.clone(), entry).is_some() {
                return Err(Error::DuplicateKey {
                    file: "<memory>".into(),
                    key,
                    line: 0,
                });
            }
        }
        Ok(NameTable {
            kind,
            min_count,
            entries: map,
        })
    }

    pub fn kind(&self) -> NameKind {
        self.kind
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the entry for `raw` after normalization. `None` means the
    /// name is unlisted.
    pub fn lookup(&self, raw: &str) -> Option<&NameEntry> {
        let key = normalize_name(raw);
        if key.is_empty() {
            return None;
        }
        self.entries.get(&key)
    }

    pub fn contains(&self, raw: &str) -> bool {
        self.lookup(raw).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NameEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Entries sorted by key.
    pub fn sorted(&self) -> Vec<(&str, &NameEntry)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Total persons covered by the listed names.
    pub fn covered_population(&self) -> u64 {
        self.entries.values().map(|e| e.count).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(NAME_HEADER).map_err(|e| csv_err(path, e))?;
        for (name, e) in self.sorted() {
            let mut row = vec![name.to_string(), e.count.to_string()];
            row.extend(e.dist.as_array().iter().map(|p| p.to_string()));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads a name table with the default minimum count.
pub fn load_name_table(path: &Path, kind: NameKind) -> Result<NameTable> {
    load_name_table_with(path, kind, DEFAULT_MIN_COUNT)
}

pub fn load_name_table_with(path: &Path, kind: NameKind, min_count: u64) -> Result<NameTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_name_table(file, &path.display().to_string(), kind, min_count)
}

pub fn read_name_table<R: Read>(
    reader: R,
    source: &str,
    kind: NameKind,
    min_count: u64,
) -> Result<NameTable> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, source, &NAME_HEADER)?;
    let mut entries: HashMap<String, NameEntry> = HashMap::new();
    let mut first_seen: HashMap<String, u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_parse_err(source, e))?;
        let line = line_of(&rec);
        if rec.len() != NAME_HEADER.len() {
            return Err(Error::parse(
                source,
                line,
                format!("expected {} fields, found {}", NAME_HEADER.len(), rec.len()),
            ));
        }
        let key = normalize_name(&rec[0]);
        if key.is_empty() {
            return Err(Error::parse(source, line, "empty name"));
        }
        let count: u64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, line, format!("bad count {:?}", &rec[1])))?;
        if count < min_count {
            return Err(Error::parse(
                source,
                line,
                format!("count {count} below table minimum {min_count}"),
            ));
        }
        let mut p = [0.0; NUM_RACES];
        for (i, slot) in p.iter_mut().enumerate() {
            *slot = parse_proportion(&rec[2 + i])
                .ok_or_else(|| Error::parse(source, line, format!("bad proportion {:?}", &rec[2 + i])))?;
        }
        let dist = RaceDistribution::from_weights(p)
            .map_err(|_| Error::parse(source, line, "all race proportions are zero"))?;
        if let Some(prev) = first_seen.get(&key) {
            return Err(Error::DuplicateKey {
                file: source.to_string(),
                key: format!("{key} (first at line {prev})"),
                line,
            });
        }
        first_seen.insert(key.clone(), line);
        entries.insert(key, NameEntry { count, dist });
    }
    Ok(NameTable {
        kind,
        min_count,
        entries,
    })
}

fn parse_proportion(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("(S)") {
        return Some(0.0);
    }
    let v: f64 = t.parse().ok()?;
    (v.is_finite() && (0.0..=1.0).contains(&v)).then_some(v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeoUnit {
    pub counts: [u64; NUM_RACES],
    pub dist: RaceDistribution,
}

impl GeoUnit {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Per-unit race counts, the derived `P(R|G)` and the marginal `P(R)`.
#[derive(Clone, Debug)]
pub struct GeoTable {
    units: BTreeMap<String, GeoUnit>,
    marginal: RaceDistribution,
    dropped_empty: Vec<String>,
}

impl GeoTable {
    /// Builds the table from raw counts. Units with zero population are
    /// dropped and listed in [`GeoTable::dropped_empty`].
    pub fn from_counts(counts: impl IntoIterator<Item = (String, [u64; NUM_RACES])>) -> Result<Self> {
        let mut units = BTreeMap::new();
        let mut dropped_empty = Vec::new();
        let mut sums = [0u64; NUM_RACES];
        for (id, c) in counts {
            if units.contains_key(&id) || dropped_empty.contains(&id) {
                return Err(Error::InvalidValue(format!("duplicate geo id {id:?}")));
            }
            if c.iter().all(|&v| v == 0) {
                dropped_empty.push(id);
                continue;
            }
            for (s, v) in sums.iter_mut().zip(c) {
                *s += v;
            }
            let dist = RaceDistribution::from_counts(c)?;
            units.insert(id, GeoUnit { counts: c, dist });
        }
        let marginal = RaceDistribution::from_counts(sums)
            .map_err(|_| Error::Empty("geo table has no populated unit".into()))?;
        Ok(GeoTable {
            units,
            marginal,
            dropped_empty,
        })
    }

    pub fn unit(&self, geo: &str) -> Option<&GeoUnit> {
        self.units.get(geo)
    }

    /// `P(R | G = geo)`.
    pub fn dist(&self, geo: &str) -> Option<&RaceDistribution> {
        self.units.get(geo).map(|u| &u.dist)
    }

    /// Population-weighted `P(R)`.
    pub fn marginal(&self) -> &RaceDistribution {
        &self.marginal
    }

    pub fn units(&self) -> impl Iterator<Item = (&str, &GeoUnit)> {
        self.units.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn dropped_empty(&self) -> &[String] {
        &self.dropped_empty
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(GEO_HEADER).map_err(|e| csv_err(path, e))?;
        for (id, u) in &self.units {
            let mut row = vec![id.clone()];
            row.extend(u.counts.iter().map(|c| c.to_string()));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn load_geo_table(path: &Path) -> Result<GeoTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_geo_table(file, &path.display().to_string())
}

pub fn read_geo_table<R: Read>(reader: R, source: &str) -> Result<GeoTable> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, source, &GEO_HEADER)?;
    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_parse_err(source, e))?;
        let line = line_of(&rec);
        if rec.len() != GEO_HEADER.len() {
            return Err(Error::parse(source, line, format!("expected 7 fields, found {}", rec.len())));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::parse(source, line, "empty geo_id"));
        }
        if let Some(prev) = seen.insert(id.clone(), line) {
            return Err(Error::DuplicateKey {
                file: source.to_string(),
                key: format!("{id} (first at line {prev})"),
                line,
            });
        }
        let mut c = [0u64; NUM_RACES];
        for (i, slot) in c.iter_mut().enumerate() {
            let cell = rec[1 + i].trim();
            let v: i64 = cell
                .parse()
                .map_err(|_| Error::parse(source, line, format!("bad count {cell:?}")))?;
            if v < 0 {
                return Err(Error::parse(source, line, format!("negative count {v}")));
            }
            *slot = v as u64;
        }
        rows.push((id, c));
    }
    GeoTable::from_counts(rows).map_err(|e| match e {
        Error::Empty(m) => Error::Empty(format!("{source}: {m}")),
        other => other,
    })
}

/// Median household income per geo unit.
#[derive(Clone, Debug, Default)]
pub struct IncomeTable {
    incomes: BTreeMap<String, f64>,
}

impl IncomeTable {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut incomes = BTreeMap::new();
        for (id, v) in pairs {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidValue(format!("income for {id:?} must be positive, got {v}")));
            }
            if incomes.insert(id.clone(), v).is_some() {
                return Err(Error::InvalidValue(format!("duplicate geo id {id:?}")));
            }
        }
        Ok(IncomeTable { incomes })
    }

    pub fn get(&self, geo: &str) -> Option<f64> {
        self.incomes.get(geo).copied()
    }

    pub fn len(&self) -> usize {
        self.incomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.incomes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.incomes.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(INCOME_HEADER).map_err(|e| csv_err(path, e))?;
        for (id, v) in &self.incomes {
            w.write_record([id.as_str(), &format!("{v:.2}")])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn load_income_table(path: &Path) -> Result<IncomeTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_income_table(file, &path.display().to_string())
}

pub fn read_income_table<R: Read>(reader: R, source: &str) -> Result<IncomeTable> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, source, &INCOME_HEADER)?;
    let mut incomes = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_parse_err(source, e))?;
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(Error::parse(source, line, format!("expected 2 fields, found {}", rec.len())));
        }
        let id = rec[0].trim().to_string();
        let v: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, line, format!("bad income {:?}", &rec[1])))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::parse(source, line, format!("income must be positive, got {v}")));
        }
        if incomes.insert(id.clone(), v).is_some() {
            return Err(Error::parse(source, line, format!("duplicate geo id {id:?}")));
        }
    }
    Ok(IncomeTable { incomes })
}

/// One person to predict, train on, or evaluate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoterRecord {
    pub id: String,
    pub first: String,
    pub middle: String,
    pub last: String,
    pub geo: String,
    pub race: Option<Race>,
}

impl VoterRecord {
    /// First, middle and last name joined by single spaces; an empty middle
    /// name contributes nothing.
    pub fn full_name(&self) -> String {
        [&self.first, &self.middle, &self.last]
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn load_voters(path: &Path) -> Result<Vec<VoterRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_voters(file, &path.display().to_string())
}

pub fn read_voters<R: Read>(reader: R, source: &str) -> Result<Vec<VoterRecord>> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, source, &VOTER_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_parse_err(source, e))?;
        let line = line_of(&rec);
        if rec.len() != VOTER_HEADER.len() {
            return Err(Error::parse(source, line, format!("expected 6 fields, found {}", rec.len())));
        }
        if rec[3].trim().is_empty() {
            return Err(Error::parse(source, line, "empty last name"));
        }
        let race = match rec[5].trim() {
            "" => None,
            s => Some(s.parse::<Race>().map_err(|e| Error::parse(source, line, e.to_string()))?),
        };
        out.push(VoterRecord {
            id: rec[0].to_string(),
            first: rec[1].to_string(),
            middle: rec[2].to_string(),
            last: rec[3].to_string(),
            geo: rec[4].trim().to_string(),
            race,
        });
    }
    Ok(out)
}

pub fn write_voters(path: &Path, voters: &[VoterRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(VOTER_HEADER).map_err(|e| csv_err(path, e))?;
    for v in voters {
        let race = v.race.map(|r| r.label()).unwrap_or("");
        w.write_record([&v.id, &v.first, &v.middle, &v.last, &v.geo, race])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Match status of one voter against both name tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchStatus {
    pub surname: bool,
    pub firstname: bool,
}

impl MatchStatus {
    pub fn of(voter: &VoterRecord, surnames: &NameTable, firstnames: Option<&NameTable>) -> Self {
        MatchStatus {
            surname: surnames.contains(&voter.last),
            firstname: firstnames.is_some_and(|t| t.contains(&voter.first)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CoverageCell {
    pub voters: u64,
    pub by_race: [u64; NUM_RACES],
    pub unknown_race: u64,
}

/// Cross-tabulation of surname and first-name match status.
///
/// Cells are indexed `[surname][firstname]` with 0 = matched and
/// 1 = unmatched. Percentages are expressed within each surname group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub cells: [[CoverageCell; 2]; 2],
    pub total: u64,
}

fn status_index(matched: bool) -> usize {
    if matched {
        0
    } else {
        1
    }
}

impl CoverageReport {
    pub fn cell(&self, surname_matched: bool, firstname_matched: bool) -> &CoverageCell {
        &self.cells[status_index(surname_matched)][status_index(firstname_matched)]
    }

    pub fn group_size(&self, surname_matched: bool) -> u64 {
        self.cells[status_index(surname_matched)]
            .iter()
            .map(|c| c.voters)
            .sum()
    }

    /// Percent of all voters in the surname group.
    pub fn group_share(&self, surname_matched: bool) -> f64 {
        pct(self.group_size(surname_matched), self.total)
    }

    /// Percent of the surname group falling in the given first-name cell
    /// (the "% of group" row).
    pub fn cell_share(&self, surname_matched: bool, firstname_matched: bool) -> f64 {
        pct(
            self.cell(surname_matched, firstname_matched).voters,
            self.group_size(surname_matched),
        )
    }

    /// Percent of known-race voters in the surname group who are of `race`
    /// and fall in the given first-name cell. Sums to 100 across races and
    /// both first-name cells of a group.
    pub fn race_share(&self, surname_matched: bool, firstname_matched: bool, race: Race) -> f64 {
        let group = &self.cells[status_index(surname_matched)];
        let known: u64 = group.iter().map(|c| c.by_race.iter().sum::<u64>()).sum();
        pct(
            self.cell(surname_matched, firstname_matched).by_race[race.index()],
            known,
        )
    }

    /// Writes the table laid out with one row per race followed by the
    /// `pct_of_group` and `n_group` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let order = [(true, true), (true, false), (false, true), (false, false)];
        w.write_record([
            "row",
            "surname_matched_firstname_matched",
            "surname_matched_firstname_unmatched",
            "surname_unmatched_firstname_matched",
            "surname_unmatched_firstname_unmatched",
        ])
        .map_err(|e| csv_err(path, e))?;
        for race in Race::ALL {
            let mut row = vec![race.label().to_string()];
            row.extend(order.iter().map(|&(s, f)| format!("{:.4}", self.race_share(s, f, race))));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        let mut row = vec!["pct_of_group".to_string()];
        row.extend(order.iter().map(|&(s, f)| format!("{:.4}", self.cell_share(s, f))));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
        let mut row = vec!["n_group".to_string()];
        row.extend(order.iter().map(|&(s, _)| self.group_size(s).to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
        let mut row = vec!["pct_of_total".to_string()];
        row.extend(order.iter().map(|&(s, _)| format!("{:.4}", self.group_share(s))));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn coverage_report(
    surnames: &NameTable,
    firstnames: &NameTable,
    voters: &[VoterRecord],
) -> Result<CoverageReport> {
    if voters.is_empty() {
        return Err(Error::Empty("coverage report needs at least one voter".into()));
    }
    let mut cells: [[CoverageCell; 2]; 2] = Default::default();
    for v in voters {
        let m = MatchStatus::of(v, surnames, Some(firstnames));
        let cell = &mut cells[status_index(m.surname)][status_index(m.firstname)];
        cell.voters += 1;
        match v.race {
            Some(r) => cell.by_race[r.index()] += 1,
            None => cell.unknown_race += 1,
        }
    }
    Ok(CoverageReport {
        cells,
        total: voters.len() as u64,
    })
}

pub(crate) fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader)
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(f))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            what: "csv",
            message: format!("{}: {other:?}", path.display()),
        },
    }
}

fn csv_parse_err(source: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::parse(source, line, e.to_string())
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, source: &str, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_parse_err(source, e))?;
    let found: Vec<String> = header.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if found != expected {
        return Err(Error::parse(
            source,
            1,
            format!("header must be `{}`, found `{}`", expected.join(","), found.join(",")),
        ));
    }
    Ok(())
}

/// Writes `id,true_race` for voters with a known race.
pub fn write_truth(path: &Path, voters: &[VoterRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "true_race"]).map_err(|e| csv_err(path, e))?;
    for v in voters {
        if let Some(r) = v.race {
            w.write_record([v.id.as_str(), r.label()]).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: &Path) -> Result<HashMap<String, Race>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_truth(file, &path.display().to_string())
}

/// Reads `id,true_race`; repeated ids are an error.
pub fn read_truth<R: Read>(reader: R, source: &str) -> Result<HashMap<String, Race>> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, source, &["id", "true_race"])?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_parse_err(source, e))?;
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(Error::parse(source, line, format!("expected 2 fields, found {}", rec.len())));
        }
        let race = rec[1].trim().parse::<Race>().map_err(|e| Error::parse(source, line, e.to_string()))?;
        if out.insert(rec[0].to_string(), race).is_some() {
            return Err(Error::DuplicateKey {
                file: source.to_string(),
                key: rec[0].to_string(),
                line,
            });
        }
    }
    Ok(out)
}

/// Writes a plain name list, one name per line.
pub fn write_name_list(path: &Path, names: &[String]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    for n in names {
        writeln!(f, "{n}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HDR: &str = "name,count,white,black,hispanic,asian,aian,other\n";

    fn names(body: &str) -> Result<NameTable> {
        read_name_table(format!("{HDR}{body}").as_bytes(), "t.csv", NameKind::Surname, 100)
    }

    #[test]
    fn direct_row_mapping() {
        let t = names("garcia,100000,0.05,0.01,0.90,0.02,0.01,0.01\n").unwrap();
        let e = t.lookup("GARCIA").unwrap();
        assert_eq!(e.count, 100000);
        let want = [0.05, 0.01, 0.90, 0.02, 0.01, 0.01];
        for (a, b) in e.dist.as_array().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn renormalizes_rows() {
        let t = names("smith,500,0.5,0.3,0.1,0.05,0.0,0.0\n").unwrap();
        let d = t.lookup("smith").unwrap().dist;
        let want = [0.5 / 0.95, 0.3 / 0.95, 0.1 / 0.95, 0.05 / 0.95, 0.0, 0.0];
        for (a, b) in d.as_array().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((d.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d.get(Race::White) - 0.526315789).abs() < 1e-9);
    }

    #[test]
    fn suppressed_cells_are_zero() {
        let t = names("lee,200,0.4,,(S),0.4,,\n").unwrap();
        let d = t.lookup("LEE").unwrap().dist;
        assert_eq!(d.as_array(), &[0.5, 0.0, 0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn duplicate_normalized_key_is_an_error() {
        let err = names("García,200,1,0,0,0,0,0\ngarcia ,300,1,0,0,0,0,0\n").unwrap_err();
        match err {
            Error::DuplicateKey { key, line, .. } => {
                assert!(key.starts_with("GARCIA"));
                assert_eq!(line, 3);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = names("a,200,1,0,0,0,0,0\nb,xx,1,0,0,0,0,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = names("a,200,0,0,0,0,0,0\n").unwrap_err();
        assert!(err.to_string().contains("zero"), "{err}");
        let err = names("a,200,1.5,0,0,0,0,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = names("a,50,1,0,0,0,0,0\n").unwrap_err();
        assert!(err.to_string().contains("below"));
        let err = names("a,200,1,0,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn lookup_edge_cases() {
        let t = names("GARCIA,200,0,0,1,0,0,0\n").unwrap();
        assert!(t.lookup("García ").is_some());
        assert!(t.lookup("Smith").is_none());
        assert!(t.lookup("").is_none());
    }

    fn geo(body: &str) -> Result<GeoTable> {
        read_geo_table(
            format!("geo_id,white,black,hispanic,asian,aian,other\n{body}").as_bytes(),
            "g.csv",
        )
    }

    #[test]
    fn geo_single_unit() {
        let g = geo("t1,80,20,0,0,0,0\n").unwrap();
        assert_eq!(g.dist("t1").unwrap().as_array(), &[0.8, 0.2, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.marginal(), g.dist("t1").unwrap());
    }

    #[test]
    fn geo_symmetric_units() {
        let g = geo("a,100,0,0,0,0,0\nb,0,100,0,0,0,0\n").unwrap();
        assert_eq!(g.marginal().as_array(), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn geo_mixed_units_marginal() {
        // totals 100, 50, 250 -> summed counts (150, 70, 130, 30, 10, 10) / 400
        let g = geo("a,60,20,10,5,5,0\nb,10,30,5,5,0,0\nc,80,20,115,20,5,10\n").unwrap();
        let want = [150.0 / 400.0, 70.0 / 400.0, 130.0 / 400.0, 30.0 / 400.0, 10.0 / 400.0, 10.0 / 400.0];
        for (a, b) in g.marginal().as_array().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        // count-weighted mean of unit distributions
        let mut mean = [0.0; 6];
        for (_, u) in g.units() {
            for (m, p) in mean.iter_mut().zip(u.dist.as_array()) {
                *m += p * u.total() as f64 / 400.0;
            }
        }
        assert!(g.marginal().max_abs_diff(&RaceDistribution::new(mean).unwrap()) < 1e-9);
    }

    #[test]
    fn geo_errors_and_empty_units() {
        let g = geo("a,0,0,0,0,0,0\nb,1,0,0,0,0,0\n").unwrap();
        assert_eq!(g.dropped_empty(), ["a".to_string()]);
        assert!(g.dist("a").is_none());
        assert!(matches!(geo("a,1,-2,0,0,0,0\n").unwrap_err(), Error::Parse { line: 2, .. }));
        assert!(geo("a,0,0,0,0,0,0\n").is_err());
    }

    #[test]
    fn income_must_be_positive() {
        let ok = read_income_table("geo_id,median_income\na,50000.5\n".as_bytes(), "i").unwrap();
        assert_eq!(ok.get("a"), Some(50000.5));
        assert!(read_income_table("geo_id,median_income\na,0\n".as_bytes(), "i").is_err());
    }

    #[test]
    fn voters_parse() {
        let v = read_voters(
            "id,first,middle,last,geo_id,race\n1,Ana,,García,t1,hispanic\n2,Bo,J,Li,t2,\n".as_bytes(),
            "v",
        )
        .unwrap();
        assert_eq!(v[0].race, Some(Race::Hispanic));
        assert_eq!(v[1].race, None);
        assert_eq!(v[0].full_name(), "Ana García");
        assert_eq!(v[1].full_name(), "Bo J Li");
        let err = read_voters("id,first,middle,last,geo_id,race\n1,Ana,,,t1,\n".as_bytes(), "v").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = read_voters("id,first,middle,last,geo_id,race\n1,A,,B,t1,martian\n".as_bytes(), "v")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    fn voter(first: &str, last: &str, race: Race) -> VoterRecord {
        VoterRecord {
            id: format!("{first}-{last}"),
            first: first.into(),
            middle: String::new(),
            last: last.into(),
            geo: "t".into(),
            race: Some(race),
        }
    }

    #[test]
    fn coverage_four_voter_fixture() {
        let s = names("SMITH,200,1,0,0,0,0,0\n").unwrap();
        let f = read_name_table(
            format!("{HDR}ANA,200,0,0,1,0,0,0\nJOHN,200,1,0,0,0,0,0\n").as_bytes(),
            "f",
            NameKind::Firstname,
            100,
        )
        .unwrap();
        let voters = vec![
            voter("John", "Smith", Race::White),
            voter("John", "Smith", Race::White),
            voter("Ana", "Smith", Race::Hispanic),
            voter("Ana", "Quispe", Race::Hispanic),
        ];
        let rep = coverage_report(&s, &f, &voters).unwrap();
        assert_eq!(rep.group_share(true), 75.0);
        assert_eq!(rep.cell_share(true, true), 100.0);
        assert_eq!(rep.cell_share(true, false), 0.0);
        assert_eq!(rep.cell_share(false, true), 100.0);
        assert!((rep.race_share(true, true, Race::White) - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(rep.race_share(false, true, Race::Hispanic), 100.0);
        assert!(coverage_report(&s, &f, &[]).is_err());
    }

    #[test]
    fn coverage_all_matched() {
        let s = names("SMITH,200,1,0,0,0,0,0\n").unwrap();
        let f = read_name_table(format!("{HDR}JOHN,200,1,0,0,0,0,0\n").as_bytes(), "f", NameKind::Firstname, 100)
            .unwrap();
        let rep = coverage_report(&s, &f, &[voter("John", "Smith", Race::White)]).unwrap();
        assert_eq!(rep.group_size(false), 0);
        assert_eq!(rep.cell(false, true).voters, 0);
        assert_eq!(rep.cell(false, false).voters, 0);
        assert_eq!(rep.cell(true, false).voters, 0);
    }

    proptest! {
        #[test]
        fn loaded_rows_are_distributions(
            rows in proptest::collection::vec(
                (100u64..10_000, proptest::array::uniform6(0.0f64..1.0)), 1..20)
        ) {
            let mut body = String::new();
            for (i, (c, p)) in rows.iter().enumerate() {
                if p.iter().all(|v| *v == 0.0) { continue; }
                body.push_str(&format!("N{i},{c},{},{},{},{},{},{}\n", p[0], p[1], p[2], p[3], p[4], p[5]));
            }
            let t = names(&body).unwrap();
            for (_, e) in t.iter() {
                let s: f64 = e.dist.as_array().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(e.dist.as_array().iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn marginal_is_weighted_mean(
            units in proptest::collection::vec(proptest::array::uniform6(0u64..500), 1..12)
        ) {
            prop_assume!(units.iter().any(|u| u.iter().any(|&c| c > 0)));
            let g = GeoTable::from_counts(
                units.iter().enumerate().map(|(i, c)| (format!("g{i}"), *c))).unwrap();
            let total: u64 = g.units().map(|(_, u)| u.total()).sum();
            let mut mean = [0.0; 6];
            for (_, u) in g.units() {
                for (m, p) in mean.iter_mut().zip(u.dist.as_array()) {
                    *m += p * u.total() as f64 / total as f64;
                }
            }
            for (a, b) in g.marginal().as_array().iter().zip(mean) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn coverage_shares_sum_to_100(
            flags in proptest::collection::vec((any::<bool>(), any::<bool>(), 0usize..6), 1..60)
        ) {
            let s = names("SMITH,200,1,0,0,0,0,0\n").unwrap();
            let f = read_name_table(format!("{HDR}JOHN,200,1,0,0,0,0,0\n").as_bytes(),
                "f", NameKind::Firstname, 100).unwrap();
            let voters: Vec<_> = flags.iter().map(|&(sm, fm, r)| voter(
                if fm { "John" } else { "Zed" },
                if sm { "Smith" } else { "Quux" },
                Race::ALL[r])).collect();
            let rep = coverage_report(&s, &f, &voters).unwrap();
            for sm in [true, false] {
                if rep.group_size(sm) == 0 { continue; }
                let cells = rep.cell_share(sm, true) + rep.cell_share(sm, false);
                prop_assert!((cells - 100.0).abs() < 1e-6);
                let races: f64 = Race::ALL.iter()
                    .map(|&r| rep.race_share(sm, true, r) + rep.race_share(sm, false, r)).sum();
                prop_assert!((races - 100.0).abs() < 1e-6);
            }
        }
    }
}
