//! Race posteriors from geography and name priors.
//!
//! Every rule has the same shape: multiply the geographic composition
//! `P(R|G)` by each available name prior divided by the population marginal
//! `P(R)`, then normalize. A missing prior (an unlisted name with no model
//! estimate) contributes no factor, which is the same as substituting the
//! marginal and letting it cancel.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior_model::PriorModel;
use crate::race::{Race, RaceDistribution, NUM_RACES};
use crate::tables::{csv_err, csv_writer, GeoTable, MatchStatus, NameTable, VoterRecord};

/// Factors below this switch the product to log space.
pub const LOG_SPACE_THRESHOLD: f64 = 1e-300;

/// Whether the full-name model replaces Census priors for every voter or
/// only for voters whose surname is unlisted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    UnmatchedOnly,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bisg,
    Bifsg,
    SurnameEmbed,
    SurnameFirstEmbed,
    FullNameEmbed(Scope),
}

impl Method {
    pub const STANDARD: [Method; 5] = [
        Method::Bisg,
        Method::Bifsg,
        Method::SurnameEmbed,
        Method::SurnameFirstEmbed,
        Method::FullNameEmbed(Scope::UnmatchedOnly),
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Bisg => "bisg",
            Method::Bifsg => "bifsg",
            Method::SurnameEmbed => "surname-embed",
            Method::SurnameFirstEmbed => "surname-first-embed",
            Method::FullNameEmbed(Scope::UnmatchedOnly) => "fullname-embed",
            Method::FullNameEmbed(Scope::All) => "fullname-embed-all",
        }
    }

    pub fn needs_firstnames(self) -> bool {
        matches!(self, Method::Bifsg | Method::SurnameFirstEmbed)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "bisg" => Method::Bisg,
            "bifsg" => Method::Bifsg,
            "surname-embed" => Method::SurnameEmbed,
            "surname-first-embed" => Method::SurnameFirstEmbed,
            "fullname-embed" => Method::FullNameEmbed(Scope::UnmatchedOnly),
            "fullname-embed-all" => Method::FullNameEmbed(Scope::All),
            other => return Err(Error::InvalidValue(format!("unknown method {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorSource {
    Census,
    Embedding,
    /// The population marginal, i.e. no name information.
    Marginal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourcedPrior {
    pub dist: RaceDistribution,
    pub source: PriorSource,
}

/// The priors actually used for one prediction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorBundle {
    pub surname: Option<SourcedPrior>,
    pub firstname: Option<SourcedPrior>,
    pub fullname: Option<RaceDistribution>,
}

/// Normalized `geo_r * prod_k prior_k[r] / marginal_r^K`.
///
/// A category whose factors are all positive but whose marginal is zero is
/// an error; a category with any zero factor gets posterior zero.
pub fn combine(geo: &RaceDistribution, priors: &[&RaceDistribution], marginal: &RaceDistribution) -> Result<RaceDistribution> {
    let k = priors.len() as i32;
    let m = marginal.as_array();
    let g = geo.as_array();
    let mut active = [false; NUM_RACES];
    let mut tiny = false;
    for r in 0..NUM_RACES {
        let factors = std::iter::once(g[r]).chain(priors.iter().map(|p| p.as_array()[r]));
        let mut any_positive = false;
        let mut all_positive = true;
        for f in factors {
            if f > 0.0 {
                any_positive = true;
                tiny |= f < LOG_SPACE_THRESHOLD;
            } else {
                all_positive = false;
            }
        }
        if any_positive && k > 0 && m[r] <= 0.0 {
            return Err(Error::InconsistentPriors(format!(
                "marginal is zero for {} but a numerator factor is positive",
                Race::ALL[r]
            )));
        }
        active[r] = all_positive;
        if all_positive && k > 0 {
            tiny |= m[r] < LOG_SPACE_THRESHOLD;
        }
    }
    if !active.iter().any(|&a| a) {
        return Err(Error::InconsistentPriors(
            "every category has a zero factor; geography and name priors are incompatible".into(),
        ));
    }
    let mut terms = [0.0; NUM_RACES];
    if tiny {
        let mut logs = [f64::NEG_INFINITY; NUM_RACES];
        for r in (0..NUM_RACES).filter(|&r| active[r]) {
            logs[r] = g[r].ln() + priors.iter().map(|p| p.as_array()[r].ln()).sum::<f64>() - k as f64 * m[r].ln();
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for r in (0..NUM_RACES).filter(|&r| active[r]) {
            terms[r] = (logs[r] - max).exp();
        }
    } else {
        for r in (0..NUM_RACES).filter(|&r| active[r]) {
            let mut t = g[r];
            for p in priors {
                t *= p.as_array()[r];
            }
            if k > 0 {
                t /= m[r].powi(k);
            }
            terms[r] = t;
        }
    }
    RaceDistribution::from_weights(terms).map_err(|e| Error::InconsistentPriors(e.to_string()))
}

/// BISG: `P(R|G,S)`. Without a surname prior the result is `P(R|G)`.
pub fn bisg_posterior(
    geo: &RaceDistribution,
    surname_prior: Option<&RaceDistribution>,
    marginal: &RaceDistribution,
) -> Result<RaceDistribution> {
    match surname_prior {
        Some(s) => combine(geo, &[s], marginal),
        None => Ok(*geo),
    }
}

/// BIFSG: `P(R|G,S,F)` for all four presence patterns of the two priors.
pub fn bifsg_posterior(
    geo: &RaceDistribution,
    surname_prior: Option<&RaceDistribution>,
    firstname_prior: Option<&RaceDistribution>,
    marginal: &RaceDistribution,
) -> Result<RaceDistribution> {
    match (surname_prior, firstname_prior) {
        (s, None) => bisg_posterior(geo, s, marginal),
        (None, Some(f)) => combine(geo, &[f], marginal),
        (Some(s), Some(f)) => combine(geo, &[f, s], marginal),
    }
}

/// Reference tables needed for prediction.
#[derive(Clone, Debug)]
pub struct ReferenceTables {
    pub surnames: NameTable,
    pub firstnames: Option<NameTable>,
    pub geo: GeoTable,
}

/// Trained name-prior networks, each bound to its embedding provider.
#[derive(Clone, Debug, Default)]
pub struct PriorModels {
    pub surname: Option<PriorModel>,
    pub firstname: Option<PriorModel>,
    pub fullname: Option<PriorModel>,
}

impl PriorModels {
    /// Checks that every model `method` needs is present.
    pub fn check_for(&self, method: Method, tables: &ReferenceTables) -> Result<()> {
        let missing = |what: &str| Err(Error::Config(format!("method {method} requires a {what}")));
        if method.needs_firstnames() && tables.firstnames.is_none() {
            return missing("first-name table");
        }
        match method {
            Method::SurnameEmbed if self.surname.is_none() => missing("surname model"),
            Method::SurnameFirstEmbed if self.surname.is_none() => missing("surname model"),
            Method::SurnameFirstEmbed if self.firstname.is_none() => missing("first-name model"),
            Method::FullNameEmbed(_) if self.fullname.is_none() => missing("full-name model"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Posterior {
    pub dist: RaceDistribution,
    pub priors: PriorBundle,
    pub status: MatchStatus,
}

fn census_prior(table: &NameTable, name: &str) -> Option<SourcedPrior> {
    table.lookup(name).map(|e| SourcedPrior {
        dist: e.dist,
        source: PriorSource::Census,
    })
}

fn embedded_prior(model: &PriorModel, name: &str) -> Result<Option<SourcedPrior>> {
    if name.trim().is_empty() {
        return Ok(None);
    }
    Ok(Some(SourcedPrior {
        dist: model.predict(name)?,
        source: PriorSource::Embedding,
    }))
}

fn marginal_prior(marginal: &RaceDistribution) -> Option<SourcedPrior> {
    Some(SourcedPrior {
        dist: *marginal,
        source: PriorSource::Marginal,
    })
}

/// Bayes factor argument: census and embedding priors enter the product,
/// a marginal prior does not (it cancels).
fn factor(p: &Option<SourcedPrior>) -> Option<&RaceDistribution> {
    match p {
        Some(SourcedPrior {
            dist,
            source: PriorSource::Census | PriorSource::Embedding,
        }) => Some(dist),
        _ => None,
    }
}

/// Posterior for one voter under `method`.
///
/// Embedding priors are substituted only for unlisted names, so for listed
/// names the embedding methods reproduce BISG/BIFSG exactly. The full-name
/// method combines its model output `m` as `geo_r * m_r / marginal_r`; with
/// [`Scope::UnmatchedOnly`] voters with a listed surname keep the BIFSG
/// prediction from Census priors.
pub fn ebisg_posterior(
    voter: &VoterRecord,
    method: Method,
    tables: &ReferenceTables,
    models: &PriorModels,
) -> Result<Posterior> {
    models.check_for(method, tables)?;
    let geo = tables.geo.dist(&voter.geo).ok_or_else(|| Error::UnknownGeo(voter.geo.clone()))?;
    let marginal = tables.geo.marginal();
    let status = MatchStatus::of(voter, &tables.surnames, tables.firstnames.as_ref());
    let census_surname = census_prior(&tables.surnames, &voter.last);
    let census_first = tables.firstnames.as_ref().and_then(|t| census_prior(t, &voter.first));

    let mut priors = PriorBundle::default();
    let dist = match method {
        Method::Bisg => {
            priors.surname = census_surname.or_else(|| marginal_prior(marginal));
            bisg_posterior(geo, factor(&priors.surname), marginal)?
        }
        Method::Bifsg => {
            priors.surname = census_surname.or_else(|| marginal_prior(marginal));
            priors.firstname = census_first.or_else(|| marginal_prior(marginal));
            bifsg_posterior(geo, factor(&priors.surname), factor(&priors.firstname), marginal)?
        }
        Method::SurnameEmbed => {
            priors.surname = match census_surname {
                Some(p) => Some(p),
                None => embedded_prior(models.surname.as_ref().expect("checked"), &voter.last)?,
            };
            bisg_posterior(geo, factor(&priors.surname), marginal)?
        }
        Method::SurnameFirstEmbed => {
            priors.surname = match census_surname {
                Some(p) => Some(p),
                None => embedded_prior(models.surname.as_ref().expect("checked"), &voter.last)?,
            };
            priors.firstname = match census_first {
                Some(p) => Some(p),
                None => embedded_prior(models.firstname.as_ref().expect("checked"), &voter.first)?
                    .or_else(|| marginal_prior(marginal)),
            };
            bifsg_posterior(geo, factor(&priors.surname), factor(&priors.firstname), marginal)?
        }
        Method::FullNameEmbed(scope) => {
            if scope == Scope::All || !status.surname {
                let m = models.fullname.as_ref().expect("checked").predict(&voter.full_name())?;
                priors.fullname = Some(m);
                combine(geo, &[&m], marginal)?
            } else {
                priors.surname = census_surname;
                priors.firstname = census_first.or_else(|| marginal_prior(marginal));
                bifsg_posterior(geo, factor(&priors.surname), factor(&priors.firstname), marginal)?
            }
        }
    };
    Ok(Posterior { dist, priors, status })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    /// Position of the voter in the input sequence.
    pub index: usize,
    pub id: String,
    pub geo: String,
    pub status: MatchStatus,
    pub posterior: RaceDistribution,
    pub priors: PriorBundle,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionFailure {
    pub index: usize,
    pub id: String,
    pub message: String,
}

/// Posteriors for a batch of voters under one method.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionSet {
    pub method: Method,
    /// Successful predictions in input order.
    pub predictions: Vec<Prediction>,
    pub failures: Vec<PredictionFailure>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    /// `id,method,match_surname,match_firstname,p_white,...,p_other` with
    /// six decimals.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut header = vec![
            "id".to_string(),
            "method".into(),
            "match_surname".into(),
            "match_firstname".into(),
        ];
        header.extend(Race::ALL.iter().map(|r| format!("p_{}", r.label())));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for p in &self.predictions {
            let mut row = vec![
                p.id.clone(),
                self.method.label().to_string(),
                u8::from(p.status.surname).to_string(),
                u8::from(p.status.firstname).to_string(),
            ];
            row.extend(p.posterior.as_array().iter().map(|v| format!("{v:.6}")));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_failures_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["index", "id", "message"]).map_err(|e| csv_err(path, e))?;
        for f in &self.failures {
            w.write_record([f.index.to_string(), f.id.clone(), f.message.clone()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Predicts every voter, collecting per-record failures instead of
/// stopping. Runs on the current rayon pool; output order matches input
/// order. A missing model or table is a configuration error for the whole
/// batch.
pub fn batch_predict(
    voters: &[VoterRecord],
    method: Method,
    tables: &ReferenceTables,
    models: &PriorModels,
) -> Result<PredictionSet> {
    models.check_for(method, tables)?;
    let results: Vec<_> = voters
        .par_iter()
        .enumerate()
        .map(|(index, v)| (index, v, ebisg_posterior(v, method, tables, models)))
        .collect();
    let mut predictions = Vec::with_capacity(voters.len());
    let mut failures = Vec::new();
    for (index, v, r) in results {
        match r {
            Ok(p) => predictions.push(Prediction {
                index,
                id: v.id.clone(),
                geo: v.geo.clone(),
                status: p.status,
                posterior: p.dist,
                priors: p.priors,
            }),
            Err(e) => failures.push(PredictionFailure {
                index,
                id: v.id.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok(PredictionSet {
        method,
        predictions,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(p: [f64; 6]) -> RaceDistribution {
        RaceDistribution::new(p).unwrap()
    }

    fn close(a: &RaceDistribution, b: [f64; 6], tol: f64) {
        for (x, y) in a.as_array().iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn bisg_hand_example() {
        let geo = d([0.8, 0.2, 0.0, 0.0, 0.0, 0.0]);
        let s = d([0.3, 0.7, 0.0, 0.0, 0.0, 0.0]);
        let m = d([0.6, 0.4, 0.0, 0.0, 0.0, 0.0]);
        // terms 0.4 and 0.35
        let out = bisg_posterior(&geo, Some(&s), &m).unwrap();
        close(&out, [0.4 / 0.75, 0.35 / 0.75, 0.0, 0.0, 0.0, 0.0], 1e-15);
        assert!((out.get(Race::White) - 0.533333333333).abs() < 1e-12);
    }

    #[test]
    fn bisg_without_prior_is_geo() {
        let geo = d([0.1, 0.2, 0.3, 0.2, 0.1, 0.1]);
        let m = d([0.5, 0.1, 0.1, 0.1, 0.1, 0.1]);
        assert_eq!(bisg_posterior(&geo, None, &m).unwrap(), geo);
        close(&bisg_posterior(&geo, Some(&m), &m).unwrap(), *geo.as_array(), 1e-15);
    }

    #[test]
    fn bifsg_hand_example_and_cases() {
        let geo = d([0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let s = d([0.4, 0.6, 0.0, 0.0, 0.0, 0.0]);
        let f = d([0.9, 0.1, 0.0, 0.0, 0.0, 0.0]);
        let m = d([0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        // terms 0.72 and 0.12
        let out = bifsg_posterior(&geo, Some(&s), Some(&f), &m).unwrap();
        close(&out, [0.72 / 0.84, 0.12 / 0.84, 0.0, 0.0, 0.0, 0.0], 1e-15);
        assert_eq!(bifsg_posterior(&geo, None, None, &m).unwrap(), geo);
        assert_eq!(
            bifsg_posterior(&geo, Some(&s), None, &m).unwrap(),
            bisg_posterior(&geo, Some(&s), &m).unwrap()
        );
        // first name only: 0.5*0.9/0.5 and 0.5*0.1/0.5
        close(&bifsg_posterior(&geo, None, Some(&f), &m).unwrap(), [0.9, 0.1, 0.0, 0.0, 0.0, 0.0], 1e-15);
    }

    #[test]
    fn zero_marginal_with_positive_factor_errors() {
        let geo = d([0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let s = d([0.5, 0.0, 0.5, 0.0, 0.0, 0.0]);
        let m = d([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(bisg_posterior(&geo, Some(&s), &m), Err(Error::InconsistentPriors(_))));
    }

    #[test]
    fn disjoint_support_errors() {
        let geo = d([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s = d([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let m = d([0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(bisg_posterior(&geo, Some(&s), &m), Err(Error::InconsistentPriors(_))));
    }

    #[test]
    fn log_space_path_matches_direct_ratio() {
        let geo = d([1.0 - 1e-305, 1e-305, 0.0, 0.0, 0.0, 0.0]);
        let s = d([1e-10, 1.0 - 1e-10, 0.0, 0.0, 0.0, 0.0]);
        let m = d([0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let out = bisg_posterior(&geo, Some(&s), &m).unwrap();
        // ratio black/white = 1e-305 / 1e-10 = 1e-295
        let ratio = out.get(Race::Black) / out.get(Race::White);
        assert!((ratio / 1e-295 - 1.0).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn method_labels_round_trip() {
        for m in Method::STANDARD.iter().chain([&Method::FullNameEmbed(Scope::All)]) {
            assert_eq!(m.label().parse::<Method>().unwrap(), *m);
        }
        assert!("bisg2".parse::<Method>().is_err());
    }

    fn arb_dist() -> impl Strategy<Value = RaceDistribution> {
        proptest::array::uniform6(0.01f64..1.0).prop_map(|w| RaceDistribution::from_weights(w).unwrap())
    }

    fn permute(p: &RaceDistribution, perm: &[usize]) -> RaceDistribution {
        let a = p.as_array();
        let mut out = [0.0; 6];
        for (i, &j) in perm.iter().enumerate() {
            out[i] = a[j];
        }
        RaceDistribution::new(out).unwrap()
    }

    proptest! {
        #[test]
        fn cancellation(geo in arb_dist(), m in arb_dist()) {
            let out = bisg_posterior(&geo, Some(&m), &m).unwrap();
            prop_assert!(out.max_abs_diff(&geo) <= 1e-12);
        }

        #[test]
        fn case_collapse(geo in arb_dist(), s in arb_dist(), m in arb_dist()) {
            prop_assert_eq!(
                bifsg_posterior(&geo, Some(&s), None, &m).unwrap(),
                bisg_posterior(&geo, Some(&s), &m).unwrap());
            prop_assert_eq!(bifsg_posterior(&geo, None, None, &m).unwrap(), geo);
        }

        #[test]
        fn outputs_are_distributions(geo in arb_dist(), s in arb_dist(), f in arb_dist(), m in arb_dist()) {
            let out = bifsg_posterior(&geo, Some(&s), Some(&f), &m).unwrap();
            prop_assert!((out.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn permutation_equivariance(
            geo in arb_dist(), s in arb_dist(), f in arb_dist(), m in arb_dist(),
            perm in Just(vec![0usize, 1, 2, 3, 4, 5]).prop_shuffle(),
        ) {
            let out = bifsg_posterior(&geo, Some(&s), Some(&f), &m).unwrap();
            let pout = bifsg_posterior(
                &permute(&geo, &perm), Some(&permute(&s, &perm)), Some(&permute(&f, &perm)), &permute(&m, &perm),
            ).unwrap();
            prop_assert!(pout.max_abs_diff(&permute(&out, &perm)) < 1e-14);
        }
    }
}
