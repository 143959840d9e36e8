//! Interaction ingestion, preprocessing and client partitioning.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Success threshold on a student's per-skill correct rate.
pub const SUCCESS_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: u64,
    pub skill_id: u64,
    /// 1 when the first attempt was correct.
    pub correct: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogSource {
    RealCsv,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
    pub source: LogSource,
    /// Rows discarded at ingestion because a required value was unusable.
    pub dropped_rows: usize,
}

impl InteractionLog {
    pub fn new(records: Vec<Interaction>, source: LogSource) -> Self {
        Self {
            records,
            source,
            dropped_rows: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.user_id)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn num_skills(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.skill_id)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Writes the log as `user_id,skill_id,correct`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["user_id", "skill_id", "correct"])?;
        for r in &self.records {
            w.write_record([
                r.user_id.to_string(),
                r.skill_id.to_string(),
                r.correct.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Header names of the three ingested columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnNames {
    pub user: String,
    pub skill: String,
    pub correct: String,
}

impl Default for ColumnNames {
    fn default() -> Self {
        Self {
            user: "user_id".into(),
            skill: "skill_id".into(),
            correct: "correct".into(),
        }
    }
}

/// Reads a header-bearing delimited table. Columns other than the three named
/// ones are ignored, in any order. Rows whose required values are missing or
/// unparseable are dropped and counted in [`InteractionLog::dropped_rows`].
pub fn load_interactions<R: Read>(
    reader: R,
    columns: &ColumnNames,
    delimiter: u8,
) -> Result<InteractionLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ui, si, ci) = (
        find(&columns.user)?,
        find(&columns.skill)?,
        find(&columns.correct)?,
    );

    let mut records = Vec::new();
    let mut dropped = 0;
    for row in rdr.records() {
        let row = row?;
        let parsed = (|| {
            Some(Interaction {
                user_id: parse_id(row.get(ui)?)?,
                skill_id: parse_id(row.get(si)?)?,
                correct: parse_binary(row.get(ci)?)?,
            })
        })();
        match parsed {
            Some(r) => records.push(r),
            None => dropped += 1,
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with missing or unparseable values");
    }
    Ok(InteractionLog {
        records,
        source: LogSource::RealCsv,
        dropped_rows: dropped,
    })
}

// Exported tables sometimes store integer ids as floats ("123.0").
fn parse_id(s: &str) -> Option<u64> {
    if let Ok(v) = s.parse::<u64>() {
        return Some(v);
    }
    let f = s.parse::<f64>().ok()?;
    (f.is_finite() && f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64).then_some(f as u64)
}

fn parse_binary(s: &str) -> Option<u8> {
    let v = s.parse::<f64>().ok()?;
    if v == 0.0 {
        Some(0)
    } else if v == 1.0 {
        Some(1)
    } else {
        None
    }
}

/// Latent-trait generator for desk-scale experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_skills: usize,
    pub min_interactions_per_user: usize,
    pub max_interactions_per_user: usize,
    pub user_ability_spread: f64,
    pub skill_difficulty_spread: f64,
    /// Location of the ability distribution; shifts the overall success rate.
    pub user_ability_mean: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 50,
            num_skills: 20,
            min_interactions_per_user: 60,
            max_interactions_per_user: 120,
            user_ability_spread: 1.0,
            skill_difficulty_spread: 1.0,
            user_ability_mean: 0.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_users == 0 || self.num_skills == 0 {
            return bad("synthetic num_users and num_skills must be positive");
        }
        if self.min_interactions_per_user == 0
            || self.min_interactions_per_user > self.max_interactions_per_user
        {
            return bad("synthetic interactions_per_user range must be positive and ordered");
        }
        let spreads = [self.user_ability_spread, self.skill_difficulty_spread];
        if spreads.iter().any(|s| !s.is_finite() || *s < 0.0) || !self.user_ability_mean.is_finite()
        {
            return bad("synthetic spreads must be finite and non-negative");
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws ability `a_u ~ N(mean, spread_u)` per user and difficulty
/// `d_s ~ N(0, spread_s)` per skill, then for each interaction a uniformly
/// chosen skill and an outcome `~ Bernoulli(logistic(a_u - d_s))`.
pub fn synthesize_log(cfg: &SynthConfig) -> Result<InteractionLog> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, &[rng::TAG_SYNTH]);
    let ability = Normal::new(cfg.user_ability_mean, cfg.user_ability_spread)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let difficulty = Normal::new(0.0, cfg.skill_difficulty_spread)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let abilities: Vec<f64> = (0..cfg.num_users)
        .map(|_| ability.sample(&mut rng))
        .collect();
    let difficulties: Vec<f64> = (0..cfg.num_skills)
        .map(|_| difficulty.sample(&mut rng))
        .collect();

    let mut records = Vec::new();
    for (user, &a) in abilities.iter().enumerate() {
        let count = rng.random_range(cfg.min_interactions_per_user..=cfg.max_interactions_per_user);
        for _ in 0..count {
            let skill = rng.random_range(0..cfg.num_skills);
            let p = logistic(a - difficulties[skill]);
            let correct = Bernoulli::new(p)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?
                .sample(&mut rng);
            records.push(Interaction {
                user_id: user as u64,
                skill_id: skill as u64,
                correct: correct as u8,
            });
        }
    }
    Ok(InteractionLog::new(records, LogSource::Synthetic))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub passes: usize,
    pub users: usize,
    pub skills: usize,
    pub interactions: usize,
}

/// Removes users with fewer than `min_user` interactions and skills with fewer
/// than `min_skill` interactions, alternating until neither rule removes
/// anything.
pub fn filter_active(
    log: &InteractionLog,
    min_user: usize,
    min_skill: usize,
) -> Result<(InteractionLog, FilterStats)> {
    if log.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut records = log.records.clone();
    let mut passes = 0;
    loop {
        passes += 1;
        let before = records.len();

        let mut per_user: HashMap<u64, usize> = HashMap::new();
        for r in &records {
            *per_user.entry(r.user_id).or_default() += 1;
        }
        records.retain(|r| per_user[&r.user_id] >= min_user);

        let mut per_skill: HashMap<u64, usize> = HashMap::new();
        for r in &records {
            *per_skill.entry(r.skill_id).or_default() += 1;
        }
        records.retain(|r| per_skill[&r.skill_id] >= min_skill);

        if records.len() == before {
            break;
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    let out = InteractionLog {
        records,
        source: log.source,
        dropped_rows: log.dropped_rows,
    };
    let stats = FilterStats {
        passes,
        users: out.num_users(),
        skills: out.num_skills(),
        interactions: out.len(),
    };
    Ok((out, stats))
}

/// One engineered row per (student, skill) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentSkillExample {
    pub user_idx: usize,
    pub skill_idx: usize,
    pub user_mean_correct: f64,
    pub user_interaction_count: f64,
    pub skill_mean_correct: f64,
    pub target_correct_rate: f64,
    pub label: u8,
}

impl StudentSkillExample {
    pub fn continuous(&self) -> [f64; 3] {
        [
            self.user_mean_correct,
            self.user_interaction_count,
            self.skill_mean_correct,
        ]
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

pub fn label_for(rate: f64) -> u8 {
    u8::from(rate >= SUCCESS_THRESHOLD)
}

/// Raw-id ↔ dense-index maps. Dense indices follow ascending raw id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub user_map: BTreeMap<u64, usize>,
    pub skill_map: BTreeMap<u64, usize>,
    pub users: Vec<u64>,
    pub skills: Vec<u64>,
}

impl IdMaps {
    fn build<I: IntoIterator<Item = (u64, u64)>>(pairs: I) -> Self {
        let (mut users, mut skills) = (BTreeSet::new(), BTreeSet::new());
        for (u, s) in pairs {
            users.insert(u);
            skills.insert(s);
        }
        let users: Vec<u64> = users.into_iter().collect();
        let skills: Vec<u64> = skills.into_iter().collect();
        Self {
            user_map: users.iter().enumerate().map(|(i, &u)| (u, i)).collect(),
            skill_map: skills.iter().enumerate().map(|(i, &s)| (s, i)).collect(),
            users,
            skills,
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_skills(&self) -> usize {
        self.skills.len()
    }

    /// Writes `kind,raw_id,index` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "raw_id", "index"])?;
        for (i, u) in self.users.iter().enumerate() {
            w.write_record(["user", &u.to_string(), &i.to_string()])?;
        }
        for (i, s) in self.skills.iter().enumerate() {
            w.write_record(["skill", &s.to_string(), &i.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Default)]
struct Tally {
    correct: u64,
    total: u64,
}

impl Tally {
    fn add(&mut self, correct: u8) {
        self.correct += u64::from(correct);
        self.total += 1;
    }

    fn rate(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Aggregates the filtered log into unscaled per-pair examples, ordered by
/// `(user_idx, skill_idx)`.
pub fn engineer_features(log: &InteractionLog) -> Result<(Vec<StudentSkillExample>, IdMaps)> {
    if log.is_empty() {
        return Err(Error::EmptyInput);
    }
    let maps = IdMaps::build(log.records.iter().map(|r| (r.user_id, r.skill_id)));

    let mut users: Vec<Tally> = (0..maps.num_users()).map(|_| Tally::default()).collect();
    let mut skills: Vec<Tally> = (0..maps.num_skills()).map(|_| Tally::default()).collect();
    let mut pairs: BTreeMap<(usize, usize), Tally> = BTreeMap::new();
    for r in &log.records {
        let (u, s) = (maps.user_map[&r.user_id], maps.skill_map[&r.skill_id]);
        users[u].add(r.correct);
        skills[s].add(r.correct);
        pairs.entry((u, s)).or_default().add(r.correct);
    }

    let examples = pairs
        .into_iter()
        .map(|((u, s), t)| {
            let rate = t.rate();
            StudentSkillExample {
                user_idx: u,
                skill_idx: s,
                user_mean_correct: users[u].rate(),
                user_interaction_count: users[u].total as f64,
                skill_mean_correct: skills[s].rate(),
                target_correct_rate: rate,
                label: label_for(rate),
            }
        })
        .collect();
    Ok((examples, maps))
}

/// Observed range of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        values.fold(
            FeatureRange {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, v| FeatureRange {
                min: r.min.min(v),
                max: r.max.max(v),
            },
        )
    }

    /// Constant features map to 0.
    pub fn scale(&self, x: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (x - self.min) / span
        } else {
            0.0
        }
    }

    pub fn unscale(&self, x: f64) -> f64 {
        self.min + x * (self.max - self.min)
    }
}

/// Min-max parameters of the three continuous features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub user_mean_correct: FeatureRange,
    pub user_interaction_count: FeatureRange,
    pub skill_mean_correct: FeatureRange,
}

impl MinMaxScaler {
    pub fn fit(examples: &[StudentSkillExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            user_mean_correct: FeatureRange::fit(examples.iter().map(|e| e.user_mean_correct)),
            user_interaction_count: FeatureRange::fit(
                examples.iter().map(|e| e.user_interaction_count),
            ),
            skill_mean_correct: FeatureRange::fit(examples.iter().map(|e| e.skill_mean_correct)),
        })
    }

    pub fn transform(&self, e: &StudentSkillExample) -> StudentSkillExample {
        StudentSkillExample {
            user_mean_correct: self.user_mean_correct.scale(e.user_mean_correct),
            user_interaction_count: self.user_interaction_count.scale(e.user_interaction_count),
            skill_mean_correct: self.skill_mean_correct.scale(e.skill_mean_correct),
            ..*e
        }
    }

    pub fn inverse(&self, e: &StudentSkillExample) -> StudentSkillExample {
        StudentSkillExample {
            user_mean_correct: self.user_mean_correct.unscale(e.user_mean_correct),
            user_interaction_count: self
                .user_interaction_count
                .unscale(e.user_interaction_count),
            skill_mean_correct: self.skill_mean_correct.unscale(e.skill_mean_correct),
            ..*e
        }
    }
}

pub fn minmax_scale(
    examples: &[StudentSkillExample],
) -> Result<(Vec<StudentSkillExample>, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(examples)?;
    Ok((
        examples.iter().map(|e| scaler.transform(e)).collect(),
        scaler,
    ))
}

/// One student's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: Vec<StudentSkillExample>,
    pub test: Vec<StudentSkillExample>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Test-set size for `n` rows: `ceil(n * fraction)`, leaving at least one
/// training row. Fewer than two rows go entirely to training.
fn test_count(n: usize, test_fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    let raw = (n as f64 * test_fraction - 1e-9).ceil().max(0.0) as usize;
    raw.min(n - 1)
}

fn check_fraction(test_fraction: f64) -> Result<()> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    Ok(())
}

/// Splits examples into one client per student, each with a shuffled local
/// train/test split. Clients are returned in ascending `client_id` order.
pub fn partition_by_user(
    examples: &[StudentSkillExample],
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    check_fraction(test_fraction)?;
    let mut by_user: BTreeMap<usize, Vec<StudentSkillExample>> = BTreeMap::new();
    for e in examples {
        by_user.entry(e.user_idx).or_default().push(*e);
    }
    Ok(by_user
        .into_iter()
        .map(|(user, mut rows)| {
            let mut rng = rng::stream(seed, &[rng::TAG_PARTITION, user as u64]);
            rows.shuffle(&mut rng);
            let n_test = test_count(rows.len(), test_fraction);
            let train = rows.split_off(n_test);
            ClientDataset {
                client_id: user,
                train,
                test: rows,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralSplit {
    pub train: Vec<StudentSkillExample>,
    pub test: Vec<StudentSkillExample>,
    /// False when only one label was present and the split fell back to
    /// unstratified sampling.
    pub stratified: bool,
}

/// Label-stratified train/test split. Each side keeps the original example
/// order.
pub fn central_split(
    examples: &[StudentSkillExample],
    test_fraction: f64,
    seed: u64,
) -> Result<CentralSplit> {
    check_fraction(test_fraction)?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng::stream(seed, &[rng::TAG_CENTRAL_SPLIT]);
    let positives: Vec<usize> = (0..examples.len())
        .filter(|&i| examples[i].is_positive())
        .collect();
    let negatives: Vec<usize> = (0..examples.len())
        .filter(|&i| !examples[i].is_positive())
        .collect();
    let stratified = !positives.is_empty() && !negatives.is_empty();

    let mut in_test = vec![false; examples.len()];
    let strata = if stratified {
        vec![positives, negatives]
    } else {
        log::warn!(
            "{}; splitting without stratification",
            Error::DegenerateLabels
        );
        vec![(0..examples.len()).collect()]
    };
    for mut stratum in strata {
        stratum.shuffle(&mut rng);
        let k = ((stratum.len() as f64) * test_fraction).round() as usize;
        for &i in &stratum[..k.min(stratum.len())] {
            in_test[i] = true;
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = examples.iter().zip(&in_test).partition(|(_, &t)| t);
    Ok(CentralSplit {
        train: train.into_iter().map(|(e, _)| *e).collect(),
        test: test.into_iter().map(|(e, _)| *e).collect(),
        stratified,
    })
}

/// Column order of the processed example table.
pub const EXAMPLE_COLUMNS: [&str; 7] = [
    "user_idx",
    "skill_idx",
    "user_mean_correct",
    "user_interaction_count",
    "skill_mean_correct",
    "target_correct_rate",
    "label",
];

pub fn write_examples_csv<W: Write>(writer: W, examples: &[StudentSkillExample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EXAMPLE_COLUMNS)?;
    for e in examples {
        w.write_record([
            e.user_idx.to_string(),
            e.skill_idx.to_string(),
            e.user_mean_correct.to_string(),
            e.user_interaction_count.to_string(),
            e.skill_mean_correct.to_string(),
            e.target_correct_rate.to_string(),
            e.label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples_csv<R: Read>(reader: R) -> Result<Vec<StudentSkillExample>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(EXAMPLE_COLUMNS) {
        return Err(Error::malformed(
            "example table",
            format!("unexpected header {headers:?}"),
        ));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = || {
            Error::malformed(
                "example table",
                format!("bad value on data row {}", line + 1),
            )
        };
        let f = |i: usize| row[i].parse::<f64>().map_err(|_| bad());
        let u = |i: usize| row[i].parse::<usize>().map_err(|_| bad());
        out.push(StudentSkillExample {
            user_idx: u(0)?,
            skill_idx: u(1)?,
            user_mean_correct: f(2)?,
            user_interaction_count: f(3)?,
            skill_mean_correct: f(4)?,
            target_correct_rate: f(5)?,
            label: row[6].parse::<u8>().map_err(|_| bad())?,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}
