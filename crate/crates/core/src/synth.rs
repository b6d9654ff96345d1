//! Synthetic populations with known generating distributions.
//!
//! Each voter draws race `R ~ pi`, a within-race subgroup `Z` uniformly,
//! geography `G ~ P(G|R)`, and surname, first and middle names from
//! `P(.|R,Z)`. Geography never depends on `Z`, so `S ⊥ G | R` and
//! `F ⊥ G | R` always hold. With `interaction_strength = 0` the names do not
//! depend on `Z` either and BIFSG's joint-independence assumption holds
//! exactly; larger values couple first and last names within race.
//!
//! Name probabilities mix a race's own vocabulary (Zipf weights over names
//! built from race-specific syllables) with borrowed names. With
//! interaction strength `l`, donor race `d(r,z)` and `mass(r,z)` the own
//! weight of the names assigned to subgroup `z`:
//!
//! ```text
//! P(s|r,z) = (1-leak_r) [(1-l) own_r(s) + l own_r(s) 1{sub(s)=z}/mass(r,z)]
//!          + leak_r     [(1-l) own(s)/6 + l own_d(r,z)(s)]
//! ```
//!
//! A subgroup therefore favours the same slice of its own vocabulary and
//! borrows from the same donor race for both name parts.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::normalize_name;
use crate::race::{Race, RaceDistribution, NUM_RACES};
use crate::tables::{
    write_truth, write_voters, GeoTable, IncomeTable, NameEntry, NameKind, NameTable, VoterRecord, DEFAULT_MIN_COUNT,
};

/// How names for one race are spelled and how often they occur.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NameStyle {
    pub onsets: Vec<String>,
    pub vowels: Vec<String>,
    pub endings: Vec<String>,
    /// Inclusive range for the number of onset+vowel syllables before the
    /// ending.
    pub syllables: (usize, usize),
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    /// Share of this race's names drawn from the pooled vocabulary.
    pub leak: f64,
}

impl NameStyle {
    fn new(onsets: &str, vowels: &str, endings: &str, syllables: (usize, usize), vocab_size: usize, zipf: f64, leak: f64) -> Self {
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect();
        NameStyle {
            onsets: split(onsets),
            vowels: split(vowels),
            endings: split(endings),
            syllables,
            vocab_size,
            zipf_exponent: zipf,
            leak,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config(format!("{what}: empty vocabulary")));
        }
        if self.onsets.is_empty() || self.vowels.is_empty() || self.endings.is_empty() {
            return Err(Error::Config(format!("{what}: empty fragment alphabet")));
        }
        if self.syllables.0 > self.syllables.1 {
            return Err(Error::Config(format!("{what}: syllable range {:?} is empty", self.syllables)));
        }
        if !(0.0..=1.0).contains(&self.leak) || !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return Err(Error::Config(format!("{what}: leak must be in [0,1] and zipf exponent >= 0")));
        }
        Ok(())
    }

    fn spell(&self, rng: &mut ChaCha8Rng) -> String {
        let n = rng.random_range(self.syllables.0..=self.syllables.1);
        let mut s = String::new();
        for _ in 0..n {
            s.push_str(&self.onsets[rng.random_range(0..self.onsets.len())]);
            s.push_str(&self.vowels[rng.random_range(0..self.vowels.len())]);
        }
        s.push_str(&self.endings[rng.random_range(0..self.endings.len())]);
        s
    }
}

/// Median income per geounit: `base * exp(-slope * (1 - white share) + sd * N(0,1))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncomeSpec {
    pub base: f64,
    pub minority_slope: f64,
    pub noise_sd: f64,
}

impl Default for IncomeSpec {
    fn default() -> Self {
        IncomeSpec {
            base: 90_000.0,
            minority_slope: 1.2,
            noise_sd: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub race_prior: RaceDistribution,
    pub geo_ids: Vec<String>,
    /// `geo_given_race[g][r] = P(G = g | R = r)`; each race column sums to 1.
    pub geo_given_race: Vec<[f64; NUM_RACES]>,
    /// One style per race, in race order.
    pub surname_styles: Vec<NameStyle>,
    pub firstname_styles: Vec<NameStyle>,
    /// Probability a voter has a middle name (drawn like a first name).
    pub middle_name_rate: f64,
    /// Size of the notional census behind the generated name tables.
    pub census_population: u64,
    /// Names whose expected census count is below this are left out of the
    /// generated tables.
    pub census_threshold: u64,
    pub interaction_strength: f64,
    /// Number of within-race subgroups the interaction acts through.
    pub subgroups: usize,
    /// `subgroup_donors[r][z]`: race whose names subgroup `z` of race `r`
    /// borrows under interaction.
    pub subgroup_donors: Vec<Vec<Race>>,
    pub income: IncomeSpec,
}

impl GeneratorConfig {
    /// A six-race configuration with `n_units` geounits of varying racial
    /// composition. The census threshold is the tables default; see
    /// [`GeneratorConfig::with_unmatched_share`].
    pub fn standard(seed: u64, n_units: usize) -> Result<Self> {
        if n_units == 0 {
            return Err(Error::Config("at least one geounit is required".into()));
        }
        let base_prior = [0.60, 0.13, 0.16, 0.06, 0.01, 0.04];
        let segregation = 1.5;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "geo"));
        let mut joint = Vec::with_capacity(n_units);
        for _ in 0..n_units {
            let size: f64 = rng.random_range(0.3..1.7);
            let mut comp = [0.0; NUM_RACES];
            for r in 0..NUM_RACES {
                let e: f64 = rng.sample(StandardNormal);
                comp[r] = base_prior[r] * (segregation * e).exp();
            }
            let total: f64 = comp.iter().sum();
            joint.push(comp.map(|c| size * c / total));
        }
        let mut col = [0.0; NUM_RACES];
        for row in &joint {
            for r in 0..NUM_RACES {
                col[r] += row[r];
            }
        }
        let total: f64 = col.iter().sum();
        let race_prior = RaceDistribution::new(col.map(|c| c / total))?;
        let geo_given_race = joint
            .iter()
            .map(|row| std::array::from_fn(|r| row[r] / col[r]))
            .collect();

        let surname_styles = vec![
            NameStyle::new(
                "B C D F G H K L M N P R S T W BR CR ST TH",
                "A E I O U EA OO",
                "SON TON LEY ER MAN FORD WOOD S ING HAM ELL BY",
                (1, 2),
                2500,
                1.05,
                0.12,
            ),
            NameStyle::new("J W B D G H M R T L", "A E O I", "SON INGTON ES EY ETT ARD INS ER", (1, 2), 1200, 1.0, 0.525),
            NameStyle::new(
                "R G M H L P S C V D Z T N B QU LL CH",
                "A E I O U IA UE",
                "EZ ES OS AS ERO ADO ILLO ANO EDA ERA ENA ON",
                (1, 3),
                5000,
                0.75,
                0.09,
            ),
            NameStyle::new(
                "NG TR K P CH W L ZH SH Y T H M X S J PH D",
                "A I O U UA IA AO E OO AN",
                "NG N MOTO KI TA H UCHI ANG EN I WA YA RA",
                (1, 2),
                4000,
                0.7,
                0.09,
            ),
            NameStyle::new(
                "B Y T N K W S H CH TS M",
                "E A O I AY EE",
                "AY IE ZZIE ONE HORSE BEAR ALLY ETT ITTY OWA EGO",
                (1, 2),
                400,
                0.9,
                0.675,
            ),
            NameStyle::new("K R S M A D L N", "A E I O U AI", "ANI ARI OV EV IC SKI ADZE YAN", (1, 2), 1500, 0.8, 0.75),
        ];
        let firstname_styles = vec![
            NameStyle::new("J M D K S E B C R L T A", "A E I O", "Y IE ER ON A ETH ICA EL IN ATHAN", (1, 2), 1500, 1.0, 0.15),
            NameStyle::new("D T K J SH L M TR", "A E I O", "ONTE ISHA ANDRE IQUA ELL ARIUS ANTE AYLA ONNA EEM", (1, 2), 1250, 0.95, 0.525),
            NameStyle::new("J M L C R G A F", "A E I O U", "O A ITA ITO ANDO ERTO ELA INA ESUS ARDO IANA", (1, 2), 1250, 0.95, 0.225),
            NameStyle::new("W Y X J H L M Z S K", "A E I O U", "EI UN ING KO MI HUI HAO YA JUN AN", (1, 2), 1500, 0.85, 0.525),
            NameStyle::new("W T N K H", "A O I", "ONI AKWE ATA OTA", (1, 2), 200, 1.0, 0.9),
            NameStyle::new("A R S N K", "A I E", "ANA IR ESH IYA", (1, 2), 300, 1.0, 0.75),
        ];
        Ok(GeneratorConfig {
            seed,
            race_prior,
            geo_ids: (0..n_units).map(|g| format!("T{:05}", g + 1)).collect(),
            geo_given_race,
            surname_styles,
            firstname_styles,
            middle_name_rate: 0.9,
            census_population: 300_000_000,
            census_threshold: DEFAULT_MIN_COUNT,
            interaction_strength: 0.0,
            subgroups: 3,
            subgroup_donors: {
                use Race::*;
                vec![
                    vec![White, Hispanic, Other],
                    vec![White, White, Hispanic],
                    vec![White, Asian, Hispanic],
                    vec![White, Hispanic, Asian],
                    vec![White, White, Hispanic],
                    vec![White, Asian, Hispanic],
                ]
            },
            income: IncomeSpec::default(),
        })
    }

    /// Returns a copy whose census threshold leaves as close as possible to
    /// `target` of voters with an unlisted surname.
    pub fn with_unmatched_share(mut self, target: f64) -> Result<Self> {
        let truth = TrueTables::build(&self)?;
        self.census_threshold = truth.threshold_for_unmatched_share(self.census_population, target);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.geo_ids.is_empty() || self.geo_ids.len() != self.geo_given_race.len() {
            return Err(Error::Config(format!(
                "{} geo ids for {} P(G|R) rows",
                self.geo_ids.len(),
                self.geo_given_race.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &self.geo_ids {
            if id.trim().is_empty() || !seen.insert(id) {
                return Err(Error::Config(format!("geo id {id:?} is empty or repeated")));
            }
        }
        for r in 0..NUM_RACES {
            let mut sum = 0.0;
            for row in &self.geo_given_race {
                if !(row[r] >= 0.0 && row[r].is_finite()) {
                    return Err(Error::Config(format!("P(G|R) entry {} is not a probability", row[r])));
                }
                sum += row[r];
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "P(G|R={}) sums to {sum}",
                    Race::ALL[r].label()
                )));
            }
        }
        if self.surname_styles.len() != NUM_RACES || self.firstname_styles.len() != NUM_RACES {
            return Err(Error::Config("one surname and one first-name style per race are required".into()));
        }
        for (r, s) in self.surname_styles.iter().enumerate() {
            s.validate(&format!("surname style {}", Race::ALL[r].label()))?;
        }
        for (r, s) in self.firstname_styles.iter().enumerate() {
            s.validate(&format!("first-name style {}", Race::ALL[r].label()))?;
        }
        if !(0.0..=1.0).contains(&self.interaction_strength) {
            return Err(Error::Config(format!(
                "interaction_strength must be in [0,1], got {}",
                self.interaction_strength
            )));
        }
        if !(0.0..=1.0).contains(&self.middle_name_rate) {
            return Err(Error::Config("middle_name_rate must be in [0,1]".into()));
        }
        if self.subgroups == 0 {
            return Err(Error::Config("subgroups must be at least 1".into()));
        }
        if self.subgroup_donors.len() != NUM_RACES || self.subgroup_donors.iter().any(|d| d.len() != self.subgroups) {
            return Err(Error::Config(format!(
                "subgroup_donors needs {NUM_RACES} rows of {} races",
                self.subgroups
            )));
        }
        if self.census_population == 0 {
            return Err(Error::Config("census_population must be positive".into()));
        }
        Ok(())
    }
}

/// Which variables [`TrueTables::analytic_posterior`] conditions on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conditioning {
    GeoSurname,
    GeoSurnameFirst,
}

/// Exact generating distribution of one name kind.
#[derive(Clone, Debug)]
struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
    home: Vec<usize>,
    own: Vec<f64>,
    sub: Vec<usize>,
    /// `mass[r][z]`: own weight of race `r`'s names in subgroup `z`.
    mass: Vec<Vec<f64>>,
    leak: [f64; NUM_RACES],
    donors: Vec<Vec<usize>>,
    samplers: Vec<Sampler>,
}

#[derive(Clone, Debug)]
struct Sampler {
    ids: Vec<usize>,
    all: WeightedIndex<f64>,
    by_sub: Vec<(Vec<usize>, WeightedIndex<f64>)>,
}

impl Vocabulary {
    fn build(styles: &[NameStyle], subgroups: usize, donors: &[Vec<Race>], seed: u64) -> Result<Self> {
        let mut names = Vec::new();
        let mut index = HashMap::new();
        let mut home = Vec::new();
        let mut own = Vec::new();
        let mut sub = Vec::new();
        let mut mass = vec![vec![0.0; subgroups]; NUM_RACES];
        let mut samplers = Vec::new();
        for (r, style) in styles.iter().enumerate() {
            if style.vocab_size < subgroups {
                return Err(Error::Config(format!(
                    "vocabulary of {} names cannot cover {subgroups} subgroups",
                    style.vocab_size
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Race::ALL[r].label()));
            let mut ids = Vec::with_capacity(style.vocab_size);
            let mut attempts = 0usize;
            while ids.len() < style.vocab_size {
                attempts += 1;
                if attempts > 200 * style.vocab_size + 1000 {
                    return Err(Error::Config(format!(
                        "could only spell {} distinct {} names of the {} requested",
                        ids.len(),
                        Race::ALL[r].label(),
                        style.vocab_size
                    )));
                }
                let name = normalize_name(&style.spell(&mut rng));
                if name.is_empty() || index.contains_key(&name) {
                    continue;
                }
                let rank = ids.len();
                let id = names.len();
                index.insert(name.clone(), id);
                names.push(name);
                home.push(r);
                sub.push(rank % subgroups);
                own.push(1.0 / ((rank + 1) as f64).powf(style.zipf_exponent));
                ids.push(id);
            }
            let total: f64 = ids.iter().map(|&i| own[i]).sum();
            for &i in &ids {
                own[i] /= total;
                mass[r][sub[i]] += own[i];
            }
            let weights: Vec<f64> = ids.iter().map(|&i| own[i]).collect();
            let all = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
            let by_sub = (0..subgroups)
                .map(|z| {
                    let members: Vec<usize> = ids.iter().copied().filter(|&i| sub[i] == z).collect();
                    let w: Vec<f64> = members.iter().map(|&i| own[i]).collect();
                    WeightedIndex::new(&w)
                        .map(|d| (members, d))
                        .map_err(|e| Error::Config(e.to_string()))
                })
                .collect::<Result<_>>()?;
            samplers.push(Sampler { ids, all, by_sub });
        }
        Ok(Vocabulary {
            names,
            index,
            home,
            own,
            sub,
            mass,
            leak: std::array::from_fn(|r| styles[r].leak),
            donors: donors.iter().map(|d| d.iter().map(|r| r.index()).collect()).collect(),
            samplers,
        })
    }

    /// `P(name i | r, z)`.
    fn p_given_sub(&self, i: usize, r: usize, z: usize, lambda: f64) -> f64 {
        let o = self.own[i];
        let mut p = self.leak[r] * (1.0 - lambda) * o / NUM_RACES as f64;
        if self.home[i] == self.donors[r][z] {
            p += self.leak[r] * lambda * o;
        }
        if self.home[i] == r {
            let coupled = if self.sub[i] == z { lambda / self.mass[r][z] } else { 0.0 };
            p += (1.0 - self.leak[r]) * o * ((1.0 - lambda) + coupled);
        }
        p
    }

    /// `P(name i | r)`, averaging over the uniform subgroup.
    fn p_given_race(&self, i: usize, r: usize, lambda: f64) -> f64 {
        let k = self.mass[r].len();
        (0..k).map(|z| self.p_given_sub(i, r, z, lambda)).sum::<f64>() / k as f64
    }

    fn sample(&self, r: usize, z: usize, lambda: f64, rng: &mut ChaCha8Rng) -> usize {
        if rng.random::<f64>() < self.leak[r] {
            let donor = if rng.random::<f64>() < lambda {
                self.donors[r][z]
            } else {
                rng.random_range(0..NUM_RACES)
            };
            let s = &self.samplers[donor];
            return s.ids[s.all.sample(rng)];
        }
        let s = &self.samplers[r];
        if rng.random::<f64>() < lambda {
            let (members, d) = &s.by_sub[z];
            members[d.sample(rng)]
        } else {
            s.ids[s.all.sample(rng)]
        }
    }
}

/// The exact distributions a population was drawn from.
#[derive(Clone, Debug)]
pub struct TrueTables {
    prior: [f64; NUM_RACES],
    geo_ids: Vec<String>,
    geo_index: HashMap<String, usize>,
    geo_given_race: Vec<[f64; NUM_RACES]>,
    surnames: Vocabulary,
    firstnames: Vocabulary,
    lambda: f64,
    subgroups: usize,
    middle_name_rate: f64,
}

impl TrueTables {
    pub fn build(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(TrueTables {
            prior: *cfg.race_prior.as_array(),
            geo_ids: cfg.geo_ids.clone(),
            geo_index: cfg.geo_ids.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect(),
            geo_given_race: cfg.geo_given_race.clone(),
            surnames: Vocabulary::build(&cfg.surname_styles, cfg.subgroups, &cfg.subgroup_donors, derive_seed(cfg.seed, "surnames"))?,
            firstnames: Vocabulary::build(&cfg.firstname_styles, cfg.subgroups, &cfg.subgroup_donors, derive_seed(cfg.seed, "firstnames"))?,
            lambda: cfg.interaction_strength,
            subgroups: cfg.subgroups,
            middle_name_rate: cfg.middle_name_rate,
        })
    }

    fn vocab(&self, kind: NameKind) -> &Vocabulary {
        match kind {
            NameKind::Surname => &self.surnames,
            NameKind::Firstname => &self.firstnames,
        }
    }

    /// `P(R)`.
    pub fn prior(&self) -> RaceDistribution {
        RaceDistribution::from_weights(self.prior).expect("validated prior")
    }

    pub fn geo_ids(&self) -> &[String] {
        &self.geo_ids
    }

    /// All names of `kind` in the generating vocabulary.
    pub fn names(&self, kind: NameKind) -> &[String] {
        &self.vocab(kind).names
    }

    /// The race whose own vocabulary contains `name`.
    pub fn home_race(&self, kind: NameKind, name: &str) -> Option<Race> {
        let v = self.vocab(kind);
        v.index.get(&normalize_name(name)).map(|&i| Race::ALL[v.home[i]])
    }

    fn name_index(&self, kind: NameKind, name: &str) -> Result<usize> {
        self.vocab(kind)
            .index
            .get(&normalize_name(name))
            .copied()
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    fn geo_row(&self, geo: &str) -> Result<&[f64; NUM_RACES]> {
        self.geo_index
            .get(geo)
            .map(|&g| &self.geo_given_race[g])
            .ok_or_else(|| Error::UnknownGeo(geo.to_string()))
    }

    /// `P(name|R = r)` for every race.
    pub fn name_likelihood(&self, kind: NameKind, name: &str) -> Result<[f64; NUM_RACES]> {
        let i = self.name_index(kind, name)?;
        let v = self.vocab(kind);
        Ok(std::array::from_fn(|r| v.p_given_race(i, r, self.lambda)))
    }

    /// Population share of `name`.
    pub fn name_probability(&self, kind: NameKind, name: &str) -> Result<f64> {
        let l = self.name_likelihood(kind, name)?;
        Ok((0..NUM_RACES).map(|r| self.prior[r] * l[r]).sum())
    }

    /// `P(R|name)`.
    pub fn name_dist(&self, kind: NameKind, name: &str) -> Result<RaceDistribution> {
        let l = self.name_likelihood(kind, name)?;
        RaceDistribution::from_weights(std::array::from_fn(|r| self.prior[r] * l[r]))
    }

    /// `P(R|G)`.
    pub fn geo_dist(&self, geo: &str) -> Result<RaceDistribution> {
        let row = self.geo_row(geo)?;
        RaceDistribution::from_weights(std::array::from_fn(|r| self.prior[r] * row[r]))
    }

    /// Exact `P(R | g, s)` or `P(R | g, s, f)` by summing the generating
    /// joint over subgroups.
    pub fn analytic_posterior(&self, surname: &str, firstname: &str, geo: &str, on: Conditioning) -> Result<RaceDistribution> {
        let row = self.geo_row(geo)?;
        let s = self.name_index(NameKind::Surname, surname)?;
        let f = match on {
            Conditioning::GeoSurname => None,
            Conditioning::GeoSurnameFirst => Some(self.name_index(NameKind::Firstname, firstname)?),
        };
        let k = self.subgroups;
        let joint: [f64; NUM_RACES] = std::array::from_fn(|r| {
            let names: f64 = (0..k)
                .map(|z| {
                    let ps = self.surnames.p_given_sub(s, r, z, self.lambda);
                    ps * f.map_or(1.0, |f| self.firstnames.p_given_sub(f, r, z, self.lambda))
                })
                .sum::<f64>()
                / k as f64;
            self.prior[r] * row[r] * names
        });
        if joint.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidValue(format!(
                "conditioning event ({surname}, {firstname}, {geo}) has probability zero"
            )));
        }
        RaceDistribution::from_weights(joint)
    }

    /// Expected census count of every name of `kind`.
    fn census_counts(&self, kind: NameKind, census_population: u64) -> Vec<(usize, u64, f64)> {
        let v = self.vocab(kind);
        (0..v.names.len())
            .map(|i| {
                let p: f64 = (0..NUM_RACES).map(|r| self.prior[r] * v.p_given_race(i, r, self.lambda)).sum();
                (i, (census_population as f64 * p).round() as u64, p)
            })
            .collect()
    }

    /// Share of voters whose surname falls below `threshold`.
    pub fn unmatched_share(&self, census_population: u64, threshold: u64) -> f64 {
        self.census_counts(NameKind::Surname, census_population)
            .iter()
            .filter(|(_, c, _)| *c < threshold)
            .map(|(_, _, p)| p)
            .sum()
    }

    /// The threshold whose expected unmatched surname share is closest to
    /// `target`.
    pub fn threshold_for_unmatched_share(&self, census_population: u64, target: f64) -> u64 {
        let mut counts = self.census_counts(NameKind::Surname, census_population);
        counts.sort_by_key(|&(_, c, _)| c);
        let mut best = (f64::INFINITY, 1);
        let mut below = 0.0;
        let mut i = 0;
        while i <= counts.len() {
            let threshold = counts.get(i).map_or(u64::MAX, |c| c.1);
            let gap = (below - target).abs();
            if gap < best.0 {
                best = (gap, threshold);
            }
            if i == counts.len() {
                break;
            }
            while i < counts.len() && counts[i].1 == threshold {
                below += counts[i].2;
                i += 1;
            }
        }
        best.1
    }

    /// Census-style table of the names whose expected count reaches
    /// `threshold`, carrying exact `P(R|name)`.
    pub fn name_table(&self, kind: NameKind, census_population: u64, threshold: u64) -> Result<NameTable> {
        let v = self.vocab(kind);
        let mut entries = Vec::new();
        for (i, count, _) in self.census_counts(kind, census_population) {
            if count >= threshold && count > 0 {
                entries.push((
                    v.names[i].clone(),
                    NameEntry {
                        count,
                        dist: self.name_dist(kind, &v.names[i])?,
                    },
                ));
            }
        }
        NameTable::from_entries(kind, threshold, entries)
    }

    /// Census-style geography table with counts `census_population * P(R, G)`.
    pub fn geo_table(&self, census_population: u64) -> Result<GeoTable> {
        GeoTable::from_counts(self.geo_ids.iter().zip(&self.geo_given_race).map(|(id, row)| {
            let counts = std::array::from_fn(|r| (census_population as f64 * self.prior[r] * row[r]).round() as u64);
            (id.clone(), counts)
        }))
    }

    /// Draws `n` voters with ids `<prefix>000001`, ... and true races set.
    pub fn sample_voters(&self, n: usize, seed: u64, id_prefix: &str) -> Result<Vec<VoterRecord>> {
        if n == 0 {
            return Err(Error::InvalidValue("population size must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let race_dist = WeightedIndex::new(self.prior).map_err(|e| Error::Config(e.to_string()))?;
        let geo_dists: Vec<WeightedIndex<f64>> = (0..NUM_RACES)
            .map(|r| {
                WeightedIndex::new(self.geo_given_race.iter().map(|row| row[r])).map_err(|e| Error::Config(e.to_string()))
            })
            .collect::<Result<_>>()?;
        let width = n.to_string().len().max(6);
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let r = race_dist.sample(&mut rng);
            let z = rng.random_range(0..self.subgroups);
            let g = geo_dists[r].sample(&mut rng);
            let s = self.surnames.sample(r, z, self.lambda, &mut rng);
            let f = self.firstnames.sample(r, z, self.lambda, &mut rng);
            let middle = if rng.random::<f64>() < self.middle_name_rate {
                self.firstnames.names[self.firstnames.sample(r, z, self.lambda, &mut rng)].clone()
            } else {
                String::new()
            };
            out.push(VoterRecord {
                id: format!("{id_prefix}{:0width$}", k + 1),
                first: self.firstnames.names[f].clone(),
                middle,
                last: self.surnames.names[s].clone(),
                geo: self.geo_ids[g].clone(),
                race: Some(Race::ALL[r]),
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticPopulation {
    pub config: GeneratorConfig,
    pub truth: TrueTables,
    pub voters: Vec<VoterRecord>,
    pub surnames: NameTable,
    pub firstnames: NameTable,
    pub geo: GeoTable,
    pub income: IncomeTable,
}

pub fn generate_population(cfg: &GeneratorConfig, n: usize) -> Result<SyntheticPopulation> {
    let truth = TrueTables::build(cfg)?;
    let voters = truth.sample_voters(n, derive_seed(cfg.seed, "voters"), "v")?;
    let surnames = truth.name_table(NameKind::Surname, cfg.census_population, cfg.census_threshold)?;
    let firstnames = truth.name_table(NameKind::Firstname, cfg.census_population, cfg.census_threshold)?;
    let geo = truth.geo_table(cfg.census_population)?;
    let income = income_table(cfg, &truth)?;
    Ok(SyntheticPopulation {
        config: cfg.clone(),
        truth,
        voters,
        surnames,
        firstnames,
        geo,
        income,
    })
}

fn income_table(cfg: &GeneratorConfig, truth: &TrueTables) -> Result<IncomeTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "income"));
    let mut pairs = Vec::with_capacity(cfg.geo_ids.len());
    for id in &cfg.geo_ids {
        let white = truth.geo_dist(id)?[Race::White];
        let noise: f64 = rng.sample(StandardNormal);
        let income = cfg.income.base * (-cfg.income.minority_slope * (1.0 - white) + cfg.income.noise_sd * noise).exp();
        pairs.push((id.clone(), income.round()));
    }
    IncomeTable::from_pairs(pairs)
}

impl SyntheticPopulation {
    /// Writes `surnames.csv`, `firstnames.csv`, `geo.csv`, `income.csv`,
    /// `voters.csv` (race column empty) and `truth.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths: Vec<_> = ["surnames.csv", "firstnames.csv", "geo.csv", "income.csv", "voters.csv", "truth.csv"]
            .iter()
            .map(|f| dir.join(f))
            .collect();
        self.surnames.write_csv(&paths[0])?;
        self.firstnames.write_csv(&paths[1])?;
        self.geo.write_csv(&paths[2])?;
        self.income.write_csv(&paths[3])?;
        let unlabeled: Vec<VoterRecord> = self.voters.iter().map(|v| VoterRecord { race: None, ..v.clone() }).collect();
        write_voters(&paths[4], &unlabeled)?;
        write_truth(&paths[5], &self.voters)?;
        Ok(paths)
    }
}

/// Two clusters of names spelled with the surname styles of races `a` and
/// `c`, labelled with their race; `n` names per cluster.
pub fn separable_name_clusters(seed: u64, n: usize, a: Race, c: Race) -> Result<Vec<(String, Race)>> {
    if a == c {
        return Err(Error::InvalidValue("clusters need two different races".into()));
    }
    let base = GeneratorConfig::standard(seed, 1)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(2 * n);
    for race in [a, c] {
        let style = &base.surname_styles[race.index()];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, race.label()));
        let mut made = 0;
        let mut attempts = 0;
        while made < n {
            attempts += 1;
            if attempts > 200 * n + 1000 {
                return Err(Error::Config(format!("could not spell {n} distinct {race} names")));
            }
            let name = style.spell(&mut rng);
            if seen.insert(name.clone()) {
                out.push((name, race));
                made += 1;
            }
        }
    }
    Ok(out)
}

/// Stable per-purpose seed derived from a master seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
