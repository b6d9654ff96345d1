//! Evaluation metrics over labelled predictions: precision-recall curves,
//! Brier scores (overall and by income decile), calibration tables and
//! tract-level mean absolute error, plus a multi-method comparison that
//! writes a directory of CSVs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{batch_predict, Method, PredictionSet, PriorModels, ReferenceTables};
use crate::race::{Race, RaceDistribution, NUM_RACES};
use crate::tables::{coverage_report, csv_err, csv_writer, CoverageReport, IncomeTable, VoterRecord};

pub const DECILES: usize = 10;
pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_MIN_GROUP: usize = 20;

/// One prediction joined with its true race.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub id: String,
    pub geo: String,
    pub probs: RaceDistribution,
    pub truth: Race,
    pub surname_matched: bool,
}

impl Scored {
    fn p(&self, race: Race) -> f64 {
        self.probs[race]
    }

    fn hit(&self, race: Race) -> bool {
        self.truth == race
    }
}

/// Joins predictions with true races; every prediction needs a label.
pub fn label_predictions(set: &PredictionSet, truth: &HashMap<String, Race>) -> Result<Vec<Scored>> {
    set.predictions
        .iter()
        .map(|p| {
            let race = truth
                .get(&p.id)
                .copied()
                .ok_or_else(|| Error::InvalidValue(format!("no true race for voter {:?}", p.id)))?;
            Ok(Scored {
                id: p.id.clone(),
                geo: p.geo.clone(),
                probs: p.posterior,
                truth: race,
                surname_matched: p.status.surname,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    All,
    Matched,
    Unmatched,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::All, Stratum::Matched, Stratum::Unmatched];

    pub fn label(self) -> &'static str {
        match self {
            Stratum::All => "all",
            Stratum::Matched => "matched",
            Stratum::Unmatched => "unmatched",
        }
    }

    pub fn contains(self, s: &Scored) -> bool {
        match self {
            Stratum::All => true,
            Stratum::Matched => s.surname_matched,
            Stratum::Unmatched => !s.surname_matched,
        }
    }

    pub fn select(self, records: &[Scored]) -> Vec<Scored> {
        records.iter().filter(|s| self.contains(s)).cloned().collect()
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stratum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(Stratum::All),
            "matched" => Ok(Stratum::Matched),
            "unmatched" => Ok(Stratum::Unmatched),
            other => Err(Error::InvalidValue(format!("unknown stratum {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrCurve {
    pub race: Race,
    /// Prevalence of `race` among the evaluated records.
    pub baseline: f64,
    pub positives: usize,
    /// Points in increasing threshold order.
    pub points: Vec<PrPoint>,
    /// Set when the curve is undefined.
    pub empty_reason: Option<String>,
}

/// Sweeps every distinct predicted probability for `race` as a threshold,
/// classifying records with `p >= threshold` as positive.
pub fn precision_recall_curve(records: &[Scored], race: Race) -> PrCurve {
    let positives = records.iter().filter(|s| s.hit(race)).count();
    let baseline = if records.is_empty() { 0.0 } else { positives as f64 / records.len() as f64 };
    let empty = |reason: String| PrCurve {
        race,
        baseline,
        positives,
        points: Vec::new(),
        empty_reason: Some(reason),
    };
    if records.is_empty() {
        return empty("no records".into());
    }
    if positives == 0 {
        return empty(format!("no records with true race {race}"));
    }
    let mut order: Vec<(f64, bool)> = records.iter().map(|s| (s.p(race), s.hit(race))).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let threshold = order[i].0;
        while i < order.len() && order[i].0 == threshold {
            if order[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
            true_positives: tp,
            false_positives: fp,
        });
    }
    points.reverse();
    PrCurve {
        race,
        baseline,
        positives,
        points,
        empty_reason: None,
    }
}

/// Mean of `(p_race - 1{truth = race})^2`.
pub fn brier_score(records: &[Scored], race: Race) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("no records to score".into()));
    }
    Ok(records.iter().map(|s| squared_error(s, race)).sum::<f64>() / records.len() as f64)
}

/// Average of the six race-specific Brier scores.
pub fn mean_brier(records: &[Scored]) -> Result<f64> {
    let mut total = 0.0;
    for race in Race::ALL {
        total += brier_score(records, race)?;
    }
    Ok(total / NUM_RACES as f64)
}

fn squared_error(s: &Scored, race: Race) -> f64 {
    let y = if s.hit(race) { 1.0 } else { 0.0 };
    (s.p(race) - y).powi(2)
}

/// How tracts are cut into income deciles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecileMode {
    /// Equal numbers of tracts per decile.
    #[default]
    Tracts,
    /// Deciles holding roughly equal numbers of voters.
    Voters,
}

impl FromStr for DecileMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tracts" => Ok(DecileMode::Tracts),
            "voters" => Ok(DecileMode::Voters),
            other => Err(Error::InvalidValue(format!("unknown decile mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecileValue {
    /// Weighted mean tract Brier; `None` when the decile has no voter of
    /// the relevant race.
    pub brier: Option<f64>,
    pub tracts: usize,
    pub weight: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BrierByDecile {
    pub race: Race,
    pub mode: DecileMode,
    /// Lowest income first.
    pub deciles: Vec<DecileValue>,
}

impl BrierByDecile {
    /// `max - min` over deciles with a value.
    pub fn range(&self) -> Option<f64> {
        let vals: Vec<f64> = self.deciles.iter().filter_map(|d| d.brier).collect();
        if vals.is_empty() {
            return None;
        }
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max - min)
    }
}

struct Tract {
    geo: String,
    income: f64,
    voters: usize,
    relevant: usize,
    sq_error: f64,
}

fn tracts_of(records: &[Scored], race: Race) -> BTreeMap<&str, (usize, usize, f64)> {
    let mut by_geo: BTreeMap<&str, (usize, usize, f64)> = BTreeMap::new();
    for s in records {
        let e = by_geo.entry(s.geo.as_str()).or_default();
        e.0 += 1;
        e.1 += usize::from(s.hit(race));
        e.2 += squared_error(s, race);
    }
    by_geo
}

/// Tract Brier scores averaged within income deciles, weighted by each
/// tract's number of voters of `race`. Tracts are ranked by median income,
/// ties broken by geo id.
pub fn brier_by_income_decile(records: &[Scored], race: Race, income: &IncomeTable, mode: DecileMode) -> Result<BrierByDecile> {
    let mut tracts = Vec::new();
    for (geo, (voters, relevant, sq_error)) in tracts_of(records, race) {
        let income = income
            .get(geo)
            .ok_or_else(|| Error::InvalidValue(format!("no median income for geo unit {geo:?}")))?;
        tracts.push(Tract {
            geo: geo.to_string(),
            income,
            voters,
            relevant,
            sq_error,
        });
    }
    tracts.sort_by(|a, b| a.income.total_cmp(&b.income).then_with(|| a.geo.cmp(&b.geo)));
    let n_tracts = tracts.len();
    let n_voters: usize = tracts.iter().map(|t| t.voters).sum();
    let mut sums = vec![(0.0, 0usize, 0usize); DECILES];
    let mut before = 0usize;
    for (rank, t) in tracts.iter().enumerate() {
        let d = match mode {
            DecileMode::Tracts => rank * DECILES / n_tracts,
            DecileMode::Voters => ((2 * before + t.voters) * DECILES / (2 * n_voters)).min(DECILES - 1),
        };
        before += t.voters;
        let tract_brier = t.sq_error / t.voters as f64;
        sums[d].0 += tract_brier * t.relevant as f64;
        sums[d].1 += t.relevant;
        sums[d].2 += 1;
    }
    Ok(BrierByDecile {
        race,
        mode,
        deciles: sums
            .into_iter()
            .map(|(s, w, n)| DecileValue {
                brier: (w > 0).then(|| s / w as f64),
                tracts: n,
                weight: w,
            })
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_predicted: f64,
    pub observed: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationTable {
    pub race: Race,
    /// Occupied bins only, in increasing order.
    pub bins: Vec<CalibrationBin>,
}

/// Equal-width bins on `[0, 1]`; the last bin includes 1.
pub fn calibration_table(records: &[Scored], race: Race, bins: usize) -> Result<CalibrationTable> {
    if bins < 2 {
        return Err(Error::InvalidValue(format!("at least 2 bins are required, got {bins}")));
    }
    let mut acc = vec![(0.0, 0usize, 0usize); bins];
    for s in records {
        let p = s.p(race);
        let b = ((p * bins as f64) as usize).min(bins - 1);
        acc[b].0 += p;
        acc[b].1 += usize::from(s.hit(race));
        acc[b].2 += 1;
    }
    let out = acc
        .into_iter()
        .enumerate()
        .filter(|(_, a)| a.2 > 0)
        .map(|(b, (sum, hits, count))| CalibrationBin {
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            mean_predicted: sum / count as f64,
            observed: hits as f64 / count as f64,
            count,
        })
        .collect();
    Ok(CalibrationTable { race, bins: out })
}

/// Which voters count toward the MAE qualifying threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupRule {
    /// Voters of the race being scored.
    #[default]
    RelevantRace,
    /// All voters in the tract.
    AllVoters,
}

impl FromStr for GroupRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relevant-race" => Ok(GroupRule::RelevantRace),
            "all-voters" => Ok(GroupRule::AllVoters),
            other => Err(Error::InvalidValue(format!("unknown group rule {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaeReport {
    pub race: Race,
    pub min_group: usize,
    pub rule: GroupRule,
    /// Percentage points; `None` when no tract qualifies.
    pub mae: Option<f64>,
    pub tracts: usize,
    pub empty_reason: Option<String>,
}

/// Unweighted mean over qualifying tracts of
/// `|mean p_race - share of race|`, in percentage points.
pub fn tract_mae(records: &[Scored], race: Race, min_group: usize, rule: GroupRule) -> Result<MaeReport> {
    if records.is_empty() {
        return Err(Error::Empty("no records to score".into()));
    }
    let mut by_geo: BTreeMap<&str, (usize, usize, f64)> = BTreeMap::new();
    for s in records {
        let e = by_geo.entry(s.geo.as_str()).or_default();
        e.0 += 1;
        e.1 += usize::from(s.hit(race));
        e.2 += s.p(race);
    }
    let errors: Vec<f64> = by_geo
        .values()
        .filter(|(n, hits, _)| match rule {
            GroupRule::RelevantRace => *hits >= min_group,
            GroupRule::AllVoters => *n >= min_group,
        })
        .map(|(n, hits, sum)| 100.0 * (sum / *n as f64 - *hits as f64 / *n as f64).abs())
        .collect();
    let tracts = errors.len();
    Ok(MaeReport {
        race,
        min_group,
        rule,
        mae: (tracts > 0).then(|| errors.iter().sum::<f64>() / tracts as f64),
        tracts,
        empty_reason: (tracts == 0).then(|| format!("no tract has at least {min_group} qualifying voters")),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalOptions {
    pub strata: Vec<Stratum>,
    pub bins: usize,
    pub min_group: usize,
    pub group_rule: GroupRule,
    pub decile_mode: DecileMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            strata: Stratum::ALL.to_vec(),
            bins: DEFAULT_BINS,
            min_group: DEFAULT_MIN_GROUP,
            group_rule: GroupRule::default(),
            decile_mode: DecileMode::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StratumReport {
    pub stratum: Stratum,
    pub n: usize,
    pub empty_reason: Option<String>,
    /// Indexed by race.
    pub brier: Vec<f64>,
    pub mean_brier: Option<f64>,
    pub pr: Vec<PrCurve>,
    pub calibration: Vec<CalibrationTable>,
    pub deciles: Vec<BrierByDecile>,
    pub mae: Vec<MaeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodReport {
    pub method: Method,
    pub predicted: usize,
    pub failures: usize,
    pub strata: Vec<StratumReport>,
}

impl MethodReport {
    pub fn stratum(&self, s: Stratum) -> Option<&StratumReport> {
        self.strata.iter().find(|r| r.stratum == s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub methods: Vec<MethodReport>,
    /// Methods that could not run at all, with the reason.
    pub errors: Vec<(Method, String)>,
    pub coverage: Option<CoverageReport>,
    #[serde(skip)]
    pub predictions: Vec<PredictionSet>,
}

impl Comparison {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// Mean Brier of `m` in stratum `s`, if computed.
    pub fn mean_brier(&self, m: Method, s: Stratum) -> Option<f64> {
        self.method(m)?.stratum(s)?.mean_brier
    }
}

/// Scores one stratum of labelled records.
pub fn evaluate_stratum(records: &[Scored], stratum: Stratum, income: Option<&IncomeTable>, opts: &EvalOptions) -> Result<StratumReport> {
    let rows = stratum.select(records);
    if rows.is_empty() {
        return Ok(StratumReport {
            stratum,
            n: 0,
            empty_reason: Some(format!("no {stratum} voters")),
            brier: Vec::new(),
            mean_brier: None,
            pr: Vec::new(),
            calibration: Vec::new(),
            deciles: Vec::new(),
            mae: Vec::new(),
        });
    }
    let mut report = StratumReport {
        stratum,
        n: rows.len(),
        empty_reason: None,
        brier: Vec::with_capacity(NUM_RACES),
        mean_brier: Some(mean_brier(&rows)?),
        pr: Vec::new(),
        calibration: Vec::new(),
        deciles: Vec::new(),
        mae: Vec::new(),
    };
    for race in Race::ALL {
        report.brier.push(brier_score(&rows, race)?);
        report.pr.push(precision_recall_curve(&rows, race));
        report.calibration.push(calibration_table(&rows, race, opts.bins)?);
        if let Some(income) = income {
            report.deciles.push(brier_by_income_decile(&rows, race, income, opts.decile_mode)?);
        }
        report.mae.push(tract_mae(&rows, race, opts.min_group, opts.group_rule)?);
    }
    Ok(report)
}

/// Runs every method over `voters` and scores each requested stratum.
/// A method that cannot run is recorded in `errors` and the rest continue.
pub fn method_comparison(
    voters: &[VoterRecord],
    truth: &HashMap<String, Race>,
    methods: &[Method],
    tables: &ReferenceTables,
    models: &PriorModels,
    income: Option<&IncomeTable>,
    opts: &EvalOptions,
) -> Result<Comparison> {
    if methods.is_empty() {
        return Err(Error::InvalidValue("at least one method is required".into()));
    }
    let mut out = Comparison {
        methods: Vec::new(),
        errors: Vec::new(),
        coverage: tables
            .firstnames
            .as_ref()
            .and_then(|f| coverage_report(&tables.surnames, f, voters).ok()),
        predictions: Vec::new(),
    };
    for &method in methods {
        let set = match batch_predict(voters, method, tables, models) {
            Ok(set) => set,
            Err(e) => {
                out.errors.push((method, e.to_string()));
                continue;
            }
        };
        let scored = label_predictions(&set, truth)?;
        let strata = opts
            .strata
            .iter()
            .map(|&s| evaluate_stratum(&scored, s, income, opts))
            .collect::<Result<_>>()?;
        out.methods.push(MethodReport {
            method,
            predicted: set.predictions.len(),
            failures: set.failures.len(),
            strata,
        });
        out.predictions.push(set);
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes the comparison as CSVs into `dir` and returns the written paths
/// (the JSON summary is left to the caller).
pub fn write_report_bundle(cmp: &Comparison, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("brier.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["method".to_string(), "stratum".into(), "n".into()];
    header.extend(Race::ALL.iter().map(|r| r.label().to_string()));
    header.push("mean".into());
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for m in &cmp.methods {
        for s in &m.strata {
            let mut row = vec![m.method.label().to_string(), s.stratum.label().into(), s.n.to_string()];
            if s.brier.is_empty() {
                row.extend(std::iter::repeat_n(String::new(), NUM_RACES));
            } else {
                row.extend(s.brier.iter().map(|b| format!("{b:.6}")));
            }
            row.push(fmt_opt(s.mean_brier));
            w.write_record(&row).map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    for m in &cmp.methods {
        for race in Race::ALL {
            let path = dir.join(format!("pr_{}_{}.csv", m.method.label(), race.label()));
            let mut w = csv_writer(&path)?;
            w.write_record(["stratum", "threshold", "precision", "recall", "true_positives", "false_positives", "baseline"])
                .map_err(|e| csv_err(&path, e))?;
            for s in &m.strata {
                let Some(c) = s.pr.get(race.index()) else { continue };
                for p in &c.points {
                    w.write_record([
                        s.stratum.label().to_string(),
                        format!("{:.6}", p.threshold),
                        format!("{:.6}", p.precision),
                        format!("{:.6}", p.recall),
                        p.true_positives.to_string(),
                        p.false_positives.to_string(),
                        format!("{:.6}", c.baseline),
                    ])
                    .map_err(|e| csv_err(&path, e))?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }

        let path = dir.join(format!("calibration_{}.csv", m.method.label()));
        let mut w = csv_writer(&path)?;
        w.write_record(["stratum", "race", "bin_lower", "bin_upper", "mean_predicted", "observed", "count"])
            .map_err(|e| csv_err(&path, e))?;
        for s in &m.strata {
            for t in &s.calibration {
                for b in &t.bins {
                    w.write_record([
                        s.stratum.label().to_string(),
                        t.race.label().to_string(),
                        format!("{:.2}", b.lower),
                        format!("{:.2}", b.upper),
                        format!("{:.6}", b.mean_predicted),
                        format!("{:.6}", b.observed),
                        b.count.to_string(),
                    ])
                    .map_err(|e| csv_err(&path, e))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    let path = dir.join("brier_decile.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["method", "stratum", "race", "decile", "brier", "tracts", "weight"])
        .map_err(|e| csv_err(&path, e))?;
    for m in &cmp.methods {
        for s in &m.strata {
            for d in &s.deciles {
                for (i, v) in d.deciles.iter().enumerate() {
                    w.write_record([
                        m.method.label().to_string(),
                        s.stratum.label().to_string(),
                        d.race.label().to_string(),
                        (i + 1).to_string(),
                        fmt_opt(v.brier),
                        v.tracts.to_string(),
                        v.weight.to_string(),
                    ])
                    .map_err(|e| csv_err(&path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("mae.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["method", "stratum", "race", "mae_pct", "tracts", "min_group", "rule"])
        .map_err(|e| csv_err(&path, e))?;
    for m in &cmp.methods {
        for s in &m.strata {
            for r in &s.mae {
                let rule = match r.rule {
                    GroupRule::RelevantRace => "relevant-race",
                    GroupRule::AllVoters => "all-voters",
                };
                w.write_record([
                    m.method.label().to_string(),
                    s.stratum.label().to_string(),
                    r.race.label().to_string(),
                    fmt_opt(r.mae),
                    r.tracts.to_string(),
                    r.min_group.to_string(),
                    rule.to_string(),
                ])
                .map_err(|e| csv_err(&path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    if let Some(cov) = &cmp.coverage {
        let path = dir.join("coverage.csv");
        cov.write_csv(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two-race record: `p` on Black, the rest on White.
    fn rec(p: f64, black: bool, geo: &str) -> Scored {
        Scored {
            id: String::new(),
            geo: geo.into(),
            probs: RaceDistribution::new([1.0 - p, p, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            truth: if black { Race::Black } else { Race::White },
            surname_matched: false,
        }
    }

    /// Independent O(n^2) enumeration of confusion counts.
    fn brute_force(records: &[Scored], race: Race) -> Vec<(f64, usize, usize)> {
        let mut thresholds: Vec<f64> = records.iter().map(|s| s.p(race)).collect();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        thresholds
            .into_iter()
            .map(|t| {
                let tp = records.iter().filter(|s| s.p(race) >= t && s.hit(race)).count();
                let fp = records.iter().filter(|s| s.p(race) >= t && !s.hit(race)).count();
                (t, tp, fp)
            })
            .collect()
    }

    #[test]
    fn pr_hand_fixture() {
        let probs = [0.9, 0.8, 0.7, 0.4, 0.3, 0.1];
        let labels = [true, true, false, true, false, false];
        let recs: Vec<_> = probs.iter().zip(labels).map(|(&p, l)| rec(p, l, "g")).collect();
        let c = precision_recall_curve(&recs, Race::Black);
        assert_eq!(c.points.len(), 6);
        let at = c.points.iter().find(|p| p.threshold == 0.7).unwrap();
        assert!((at.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((at.recall - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.baseline, 0.5);
        assert!(c.points.windows(2).all(|w| w[0].recall >= w[1].recall));
    }

    #[test]
    fn pr_perfect_and_constant() {
        let recs = vec![rec(1.0, true, "g"), rec(0.0, false, "g"), rec(1.0, true, "g")];
        let c = precision_recall_curve(&recs, Race::Black);
        let top = c.points.last().unwrap();
        assert_eq!((top.precision, top.recall), (1.0, 1.0));

        let recs: Vec<_> = (0..10).map(|i| rec(0.3, i < 3, "g")).collect();
        let c = precision_recall_curve(&recs, Race::Black);
        assert_eq!(c.points.len(), 1);
        assert!((c.points[0].precision - c.baseline).abs() < 1e-15);
    }

    #[test]
    fn pr_without_positives_is_empty_with_reason() {
        let recs = vec![rec(0.2, false, "g")];
        let c = precision_recall_curve(&recs, Race::Black);
        assert!(c.points.is_empty());
        assert!(c.empty_reason.unwrap().contains("black"));
    }

    #[test]
    fn pr_matches_brute_force_on_random_fixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recs: Vec<_> = (0..1000)
            .map(|_| {
                let p = (rng.random_range(0..50) as f64) / 49.0;
                rec(p, rng.random::<f64>() < p, "g")
            })
            .collect();
        let curve = precision_recall_curve(&recs, Race::Black);
        let want = brute_force(&recs, Race::Black);
        let got: Vec<_> = curve.points.iter().map(|p| (p.threshold, p.true_positives, p.false_positives)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn brier_fixtures() {
        let recs = vec![rec(0.8, true, "g"), rec(0.3, false, "g"), rec(0.6, true, "g")];
        let b = brier_score(&recs, Race::Black).unwrap();
        assert!((b - 0.29 / 3.0).abs() < 1e-15);
        assert_eq!(format!("{b:.5}"), "0.09667");
        let half: Vec<_> = (0..4).map(|i| rec(0.5, i % 2 == 0, "g")).collect();
        assert_eq!(brier_score(&half, Race::Black).unwrap(), 0.25);
        let perfect = vec![rec(1.0, true, "g"), rec(0.0, false, "g")];
        assert_eq!(brier_score(&perfect, Race::Black).unwrap(), 0.0);
        assert!(brier_score(&[], Race::Black).is_err());
    }

    #[test]
    fn decile_weighted_mean() {
        // Tract a: Brier 0.1 with 10 relevant voters, tract b: 0.3 with 30.
        let mut recs = Vec::new();
        let pa = 1.0 - 0.1f64.sqrt();
        let pb = 1.0 - 0.3f64.sqrt();
        recs.extend((0..10).map(|_| rec(pa, true, "a")));
        recs.extend((0..30).map(|_| rec(pb, true, "b")));
        let income = IncomeTable::from_pairs([("a".to_string(), 1.0), ("b".to_string(), 1.0)]).unwrap();
        let d = brier_by_income_decile(&recs, Race::Black, &income, DecileMode::Tracts).unwrap();
        // Two tracts land in deciles 0 and 5.
        assert!((d.deciles[0].brier.unwrap() - 0.1).abs() < 1e-12);
        assert!((d.deciles[5].brier.unwrap() - 0.3).abs() < 1e-12);
        let voters = brier_by_income_decile(&recs, Race::Black, &income, DecileMode::Voters).unwrap();
        assert_eq!(voters.deciles.iter().map(|d| d.tracts).sum::<usize>(), 2);
    }

    #[test]
    fn decile_same_tract_group_pools_weighted() {
        // Twenty tracts: each decile holds two, the first pair gets the
        // 0.1/10 and 0.3/30 tracts.
        let mut recs = Vec::new();
        let mut incomes = Vec::new();
        for t in 0..20 {
            let geo = format!("t{t:02}");
            let (p, n) = match t {
                0 => (1.0 - 0.1f64.sqrt(), 10),
                1 => (1.0 - 0.3f64.sqrt(), 30),
                _ => (0.5, 4),
            };
            recs.extend((0..n).map(|_| rec(p, true, &geo)));
            incomes.push((geo, (t + 1) as f64));
        }
        let income = IncomeTable::from_pairs(incomes).unwrap();
        let d = brier_by_income_decile(&recs, Race::Black, &income, DecileMode::Tracts).unwrap();
        assert!((d.deciles[0].brier.unwrap() - 0.25).abs() < 1e-12);
        assert!(d.deciles.iter().all(|v| v.tracts == 2));
    }

    #[test]
    fn decile_ties_and_missing() {
        let recs: Vec<_> = (0..10).map(|t| rec(0.5, t % 2 == 0, &format!("g{t}"))).collect();
        let income = IncomeTable::from_pairs((0..10).map(|t| (format!("g{t}"), 5.0))).unwrap();
        let d = brier_by_income_decile(&recs, Race::Black, &income, DecileMode::Tracts).unwrap();
        assert!(d.deciles.iter().all(|v| v.tracts == 1));
        // Odd tracts have no Black voter, so their deciles are missing.
        assert!(d.deciles[1].brier.is_none());
        assert_eq!(d.deciles[0].brier, Some(0.25));

        let single = vec![rec(0.5, true, "g0")];
        let d = brier_by_income_decile(&single, Race::Black, &income, DecileMode::Tracts).unwrap();
        assert_eq!(d.deciles.iter().filter(|v| v.brier.is_some()).count(), 1);

        let bad = vec![rec(0.5, true, "nowhere")];
        assert!(brier_by_income_decile(&bad, Race::Black, &income, DecileMode::Tracts).is_err());
    }

    #[test]
    fn overall_brier_is_count_weighted_tract_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let recs: Vec<_> = (0..500)
            .map(|_| rec(rng.random(), rng.random::<bool>(), &format!("g{}", rng.random_range(0..17))))
            .collect();
        let overall = brier_score(&recs, Race::Black).unwrap();
        let tracts = tracts_of(&recs, Race::Black);
        let weighted: f64 = tracts.values().map(|(n, _, sq)| (sq / *n as f64) * *n as f64).sum::<f64>() / recs.len() as f64;
        assert!((overall - weighted).abs() < 1e-12);
    }

    #[test]
    fn calibration_fixtures() {
        let zeros: Vec<_> = (0..5).map(|_| rec(0.0, false, "g")).collect();
        let t = calibration_table(&zeros, Race::Black, 10).unwrap();
        assert_eq!(t.bins.len(), 1);
        assert_eq!(t.bins[0].observed, 0.0);
        assert!(calibration_table(&[], Race::Black, 10).unwrap().bins.is_empty());
        assert!(calibration_table(&zeros, Race::Black, 1).is_err());
        let ones = vec![rec(1.0, true, "g")];
        let t = calibration_table(&ones, Race::Black, 10).unwrap();
        assert_eq!((t.bins[0].lower, t.bins[0].upper), (0.9, 1.0));
    }

    #[test]
    fn calibrated_stream_is_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let recs: Vec<_> = (0..100_000)
            .map(|_| {
                let p: f64 = rng.random();
                rec(p, rng.random::<f64>() < p, "g")
            })
            .collect();
        let t = calibration_table(&recs, Race::Black, 10).unwrap();
        assert_eq!(t.bins.iter().map(|b| b.count).sum::<usize>(), recs.len());
        for b in t.bins.iter().filter(|b| b.count >= 100) {
            let se = (b.mean_predicted * (1.0 - b.mean_predicted) / b.count as f64).sqrt();
            assert!((b.mean_predicted - b.observed).abs() < 3.0 * se, "{b:?}");
        }
    }

    #[test]
    fn mae_fixtures() {
        // 20 Black voters out of 40 (share 0.5), mean posterior 0.55.
        let mut recs: Vec<_> = (0..40).map(|i| rec(0.55, i < 20, "a")).collect();
        let r = tract_mae(&recs, Race::Black, 20, GroupRule::RelevantRace).unwrap();
        assert!((r.mae.unwrap() - 5.0).abs() < 1e-9);
        // Second tract with error 1.0 point; mean becomes 3.0.
        recs.extend((0..50).map(|i| rec(0.5, i < 26, "b")));
        let r = tract_mae(&recs, Race::Black, 20, GroupRule::RelevantRace).unwrap();
        assert_eq!(r.tracts, 2);
        assert!((r.mae.unwrap() - (5.0 + 2.0) / 2.0).abs() < 1e-9);

        let few: Vec<_> = (0..30).map(|i| rec(0.5, i < 5, "a")).collect();
        let r = tract_mae(&few, Race::Black, 20, GroupRule::RelevantRace).unwrap();
        assert!(r.mae.is_none() && r.empty_reason.is_some());
        let r = tract_mae(&few, Race::Black, 20, GroupRule::AllVoters).unwrap();
        assert_eq!(r.tracts, 1);
    }

    #[test]
    fn mae_two_tracts_average() {
        // Errors of 2.0 and 4.0 points.
        let mut recs: Vec<_> = (0..100).map(|i| rec(0.52, i < 50, "a")).collect();
        recs.extend((0..100).map(|i| rec(0.46, i < 50, "b")));
        let r = tract_mae(&recs, Race::Black, 20, GroupRule::RelevantRace).unwrap();
        assert!((r.mae.unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_stratum_reports_reason() {
        let recs = vec![rec(0.5, true, "g")];
        let mut matched = recs.clone();
        matched[0].surname_matched = true;
        let r = evaluate_stratum(&matched, Stratum::Unmatched, None, &EvalOptions::default()).unwrap();
        assert_eq!(r.n, 0);
        assert!(r.empty_reason.is_some());
    }

    proptest! {
        #[test]
        fn strata_counts_add_up(
            rows in proptest::collection::vec((0u8..20, any::<bool>(), any::<bool>()), 1..200)
        ) {
            let recs: Vec<_> = rows
                .iter()
                .map(|&(p, y, m)| Scored { surname_matched: m, ..rec(p as f64 / 19.0, y, "g") })
                .collect();
            let pooled = brute_force(&recs, Race::Black);
            let m = Stratum::Matched.select(&recs);
            let u = Stratum::Unmatched.select(&recs);
            for (t, tp, fp) in pooled {
                let count = |rs: &[Scored]| {
                    let tp = rs.iter().filter(|s| s.p(Race::Black) >= t && s.hit(Race::Black)).count();
                    let fp = rs.iter().filter(|s| s.p(Race::Black) >= t && !s.hit(Race::Black)).count();
                    (tp, fp)
                };
                let (a, b) = (count(&m), count(&u));
                prop_assert_eq!((a.0 + b.0, a.1 + b.1), (tp, fp));
            }
        }

        #[test]
        fn pr_recall_monotone(rows in proptest::collection::vec((0u8..10, any::<bool>()), 1..100)) {
            let recs: Vec<_> = rows.iter().map(|&(p, y)| rec(p as f64 / 9.0, y, "g")).collect();
            let c = precision_recall_curve(&recs, Race::Black);
            prop_assert!(c.points.windows(2).all(|w| w[0].recall >= w[1].recall));
            prop_assert!(c.points.iter().all(|p| (0.0..=1.0).contains(&p.precision)));
        }
    }
}
