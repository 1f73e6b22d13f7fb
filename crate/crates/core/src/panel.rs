//! Regression panel construction.
//!
//! Joins LAP scores, parsed verdicts and outcome series into
//! [`PanelObservation`] rows. Every input event either becomes a row or is
//! written to the drop log with a reason; nothing is lost silently.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::LapRow;
use crate::parser::VerdictRow;
use crate::stats;

/// Market close in exchange-local time. News at or after this instant
/// belongs to the next day.
pub const MARKET_CLOSE: NaiveTime = match NaiveTime::from_hms_opt(16, 0, 0) {
    Some(t) => t,
    None => panic!("invalid market close"),
};

/// A numeric panel column addressable by name from regression specs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Outcome,
    Llm,
    Lap,
    Confidence,
    FirstTokenProb,
    Small,
}

impl Column {
    pub const ALL: [Column; 6] = [
        Column::Outcome,
        Column::Llm,
        Column::Lap,
        Column::Confidence,
        Column::FirstTokenProb,
        Column::Small,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::Outcome => "outcome",
            Column::Llm => "llm",
            Column::Lap => "lap",
            Column::Confidence => "confidence",
            Column::FirstTokenProb => "first_token_prob",
            Column::Small => "small",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Column::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownColumn(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    /// Unique row key; the prompt id for headline-level rows.
    pub obs_id: String,
    pub entity_id: String,
    /// ISO date (`YYYY-MM-DD`) or quarter (`YYYYQn`).
    pub time_id: String,
    pub cluster_id: String,
    /// Percent units.
    pub outcome: f64,
    pub llm: f64,
    pub lap: f64,
    pub confidence: Option<f64>,
    pub first_token_prob: Option<f64>,
    pub small: Option<bool>,
}

impl PanelObservation {
    pub fn get(&self, column: Column) -> Option<f64> {
        match column {
            Column::Outcome => Some(self.outcome),
            Column::Llm => Some(self.llm),
            Column::Lap => Some(self.lap),
            Column::Confidence => self.confidence,
            Column::FirstTokenProb => self.first_token_prob,
            Column::Small => self.small.map(|s| if s { 1.0 } else { 0.0 }),
        }
    }

    fn set(&mut self, column: Column, value: f64) {
        match column {
            Column::Outcome => self.outcome = value,
            Column::Llm => self.llm = value,
            Column::Lap => self.lap = value,
            Column::Confidence => self.confidence = Some(value),
            Column::FirstTokenProb => self.first_token_prob = Some(value),
            Column::Small => self.small = Some(value != 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodLabel {
    InSample,
    OutOfSample,
    Unsplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub observations: Vec<PanelObservation>,
    pub period_label: PeriodLabel,
    pub standardized: bool,
}

impl PanelDataset {
    pub fn new(observations: Vec<PanelObservation>) -> Self {
        PanelDataset {
            observations,
            period_label: PeriodLabel::Unsplit,
            standardized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Checks the raw-data invariants: unique row keys, finite outcomes and,
    /// before standardization, LAP in (0, 1].
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for o in &self.observations {
            if !seen.insert(o.obs_id.as_str()) {
                return Err(Error::DuplicateId(o.obs_id.clone()));
            }
            if !o.outcome.is_finite() {
                return Err(Error::InvalidConfig(format!("non-finite outcome in `{}`", o.obs_id)));
            }
            if !self.standardized && !(o.lap > 0.0 && o.lap <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "lap {} outside (0, 1] in `{}`",
                    o.lap, o.obs_id
                )));
            }
        }
        Ok(())
    }
}

/// Maps a news timestamp to the trading day whose close first reflects it:
/// strictly before 16:00 is the same day, 16:00 or later is the next day.
pub fn event_day(timestamp: NaiveDateTime) -> NaiveDate {
    if timestamp.time() < MARKET_CLOSE {
        timestamp.date()
    } else {
        timestamp.date() + Duration::days(1)
    }
}

/// String form of [`event_day`]. Accepts `YYYY-MM-DD HH:MM[:SS]` with a
/// space or `T` separator; a bare date is ambiguous with respect to the
/// close and is rejected.
pub fn assign_event_day(timestamp: &str) -> Result<NaiveDate> {
    let ts = timestamp.trim();
    const FORMATS: [&str; 4] = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
    ];
    for fmt in FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(ts, fmt) {
            return Ok(event_day(dt));
        }
    }
    if NaiveDate::parse_from_str(ts, "%Y-%m-%d").is_ok() {
        return Err(Error::AmbiguousTimestamp(ts.to_string()));
    }
    Err(Error::InvalidTimestamp(ts.to_string()))
}

/// Calendar quarter, e.g. `2020Q1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quarter {
    pub year: i32,
    /// 1..=4
    pub quarter: u8,
}

impl Quarter {
    pub fn plus(self, quarters: i32) -> Quarter {
        let idx = self.year * 4 + i32::from(self.quarter) - 1 + quarters;
        Quarter {
            year: idx.div_euclid(4),
            quarter: (idx.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, u32::from(self.quarter) * 3 - 2, 1).expect("valid quarter")
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase().replace('-', "");
        let (y, q) = t
            .split_once('Q')
            .ok_or_else(|| Error::InvalidTimestamp(s.to_string()))?;
        let year: i32 = y.parse().map_err(|_| Error::InvalidTimestamp(s.to_string()))?;
        let quarter: u8 = q.parse().map_err(|_| Error::InvalidTimestamp(s.to_string()))?;
        if !(1..=4).contains(&quarter) {
            return Err(Error::InvalidTimestamp(s.to_string()));
        }
        Ok(Quarter { year, quarter })
    }
}

/// Start date of a panel time id, for date-window filtering.
pub fn time_id_date(time_id: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(time_id, "%Y-%m-%d")
        .or_else(|_| time_id.parse::<Quarter>().map(Quarter::first_day))
        .map_err(|_| Error::InvalidTimestamp(time_id.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    MissingLap,
    MissingVerdict,
    UnparseableResponse,
    AmbiguousTimestamp,
    InvalidTimestamp,
    /// No market date after the event day exists in the return calendar.
    NoNextTradingDay,
    /// The market traded but the entity has no return that day.
    MissingReturn { date: NaiveDate },
    MissingCapex { quarter: String },
    InvalidLap { value: f64 },
}

impl DropReason {
    pub fn code(&self) -> &'static str {
        match self {
            DropReason::MissingLap => "missing_lap",
            DropReason::MissingVerdict => "missing_verdict",
            DropReason::UnparseableResponse => "unparseable_response",
            DropReason::AmbiguousTimestamp => "ambiguous_timestamp",
            DropReason::InvalidTimestamp => "invalid_timestamp",
            DropReason::NoNextTradingDay => "no_next_trading_day",
            DropReason::MissingReturn { .. } => "missing_return",
            DropReason::MissingCapex { .. } => "missing_capex",
            DropReason::InvalidLap { .. } => "invalid_lap",
        }
    }

    fn detail(&self) -> String {
        match self {
            DropReason::MissingReturn { date } => date.to_string(),
            DropReason::MissingCapex { quarter } => quarter.clone(),
            DropReason::InvalidLap { value } => value.to_string(),
            _ => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedObservation {
    pub obs_id: String,
    pub entity_id: String,
    pub reason: DropReason,
}

/// Daily close-to-close returns keyed by (entity, date). The union of all
/// dates present is taken as the market's trading calendar.
#[derive(Debug, Clone, Default)]
pub struct ReturnTable {
    calendar: BTreeSet<NaiveDate>,
    returns: HashMap<(String, NaiveDate), f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnRow {
    pub entity_id: String,
    pub date: NaiveDate,
    pub return_pct: f64,
}

impl ReturnTable {
    pub fn from_rows(rows: impl IntoIterator<Item = ReturnRow>) -> Self {
        let mut t = ReturnTable::default();
        for r in rows {
            t.calendar.insert(r.date);
            t.returns.insert((r.entity_id, r.date), r.return_pct);
        }
        t
    }

    pub fn next_trading_day(&self, after: NaiveDate) -> Option<NaiveDate> {
        self.calendar
            .range((std::ops::Bound::Excluded(after), std::ops::Bound::Unbounded))
            .next()
            .copied()
    }

    /// The return realized over the first close strictly after the event
    /// day: day `t` news earns the return ending on `t+1`, rolled forward
    /// over weekends and holidays.
    pub fn attach_outcome(&self, entity_id: &str, event_day: NaiveDate) -> std::result::Result<(NaiveDate, f64), DropReason> {
        let date = self
            .next_trading_day(event_day)
            .ok_or(DropReason::NoNextTradingDay)?;
        self.returns
            .get(&(entity_id.to_string(), date))
            .map(|&r| (date, r))
            .ok_or(DropReason::MissingReturn { date })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketCapRow {
    pub entity_id: String,
    pub date: NaiveDate,
    pub mktcap: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MarketCapTable {
    by_date: BTreeMap<NaiveDate, HashMap<String, f64>>,
}

impl MarketCapTable {
    pub fn from_rows(rows: impl IntoIterator<Item = MarketCapRow>) -> Self {
        let mut t = MarketCapTable::default();
        for r in rows {
            t.by_date.entry(r.date).or_default().insert(r.entity_id, r.mktcap);
        }
        t
    }

    /// Latest date strictly before `day` with any market-cap data.
    pub fn previous_day(&self, day: NaiveDate) -> Option<NaiveDate> {
        self.by_date.range(..day).next_back().map(|(d, _)| *d)
    }
}

/// Flags observations whose entity sat strictly below the 20th percentile
/// (linear interpolation) of the previous trading day's market-cap cross
/// section. Observations without a prior-day cap get `small = None`.
pub fn mark_small(panel: &PanelDataset, caps: &MarketCapTable) -> PanelDataset {
    let mut boundaries: HashMap<NaiveDate, f64> = HashMap::new();
    let mut out = panel.clone();
    for obs in &mut out.observations {
        obs.small = time_id_date(&obs.time_id)
            .ok()
            .and_then(|t| caps.previous_day(t))
            .and_then(|prev| {
                let cross = &caps.by_date[&prev];
                let cap = *cross.get(&obs.entity_id)?;
                let boundary = *boundaries.entry(prev).or_insert_with(|| {
                    let mut values: Vec<f64> = cross.values().copied().collect();
                    values.sort_by(f64::total_cmp);
                    stats::quantile_sorted(&values, 0.2)
                });
                Some(cap < boundary)
            });
    }
    out
}

/// Replaces each named column with `(x - mean) / sd` using the sample
/// (n - 1) standard deviation over the rows where the column is present.
pub fn standardize(panel: &PanelDataset, columns: &[Column]) -> Result<PanelDataset> {
    let mut out = panel.clone();
    for &col in columns {
        let values: Vec<f64> = panel.observations.iter().filter_map(|o| o.get(col)).collect();
        let mean = stats::mean(&values);
        let sd = stats::sample_sd(&values);
        if values.len() < 2 || !sd.is_finite() || sd <= 1e-14 * mean.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::DegenerateColumn(col.name().to_string()));
        }
        for obs in &mut out.observations {
            if let Some(v) = obs.get(col) {
                obs.set(col, (v - mean) / sd);
            }
        }
    }
    out.standardized = true;
    Ok(out)
}

/// In-sample and out-of-sample windows, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub in_sample_start: Option<NaiveDate>,
    pub in_sample_end: NaiveDate,
    pub out_of_sample_start: NaiveDate,
    pub out_of_sample_end: Option<NaiveDate>,
}

impl SplitConfig {
    /// Llama 2 (70B): trained through Sep 2022, released Aug 2023.
    pub fn llama2() -> Self {
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        SplitConfig {
            in_sample_start: Some(d(2012, 1, 1)),
            in_sample_end: d(2022, 9, 30),
            out_of_sample_start: d(2023, 9, 1),
            out_of_sample_end: Some(d(2024, 12, 31)),
        }
    }
}

pub fn split_periods(panel: &PanelDataset, split: &SplitConfig) -> Result<(PanelDataset, PanelDataset)> {
    if split.out_of_sample_start <= split.in_sample_end {
        return Err(Error::InvalidSplit(format!(
            "out-of-sample start {} is not after in-sample end {}",
            split.out_of_sample_start, split.in_sample_end
        )));
    }
    if split.in_sample_start.is_some_and(|s| s > split.in_sample_end)
        || split.out_of_sample_end.is_some_and(|e| e < split.out_of_sample_start)
    {
        return Err(Error::InvalidSplit("window start after its end".into()));
    }
    let mut ins = Vec::new();
    let mut oos = Vec::new();
    for obs in &panel.observations {
        let d = time_id_date(&obs.time_id)?;
        if d <= split.in_sample_end && split.in_sample_start.is_none_or(|s| d >= s) {
            ins.push(obs.clone());
        } else if d >= split.out_of_sample_start && split.out_of_sample_end.is_none_or(|e| d <= e) {
            oos.push(obs.clone());
        }
    }
    let wrap = |observations, period_label| PanelDataset {
        observations,
        period_label,
        standardized: false,
    };
    Ok((wrap(ins, PeriodLabel::InSample), wrap(oos, PeriodLabel::OutOfSample)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlineEvent {
    pub prompt_id: String,
    pub entity_id: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallEvent {
    pub prompt_id: String,
    pub entity_id: String,
    pub quarter: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapexRow {
    pub entity_id: String,
    pub quarter: String,
    pub capex_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterBy {
    #[default]
    Time,
    Entity,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Average same-entity same-day rows into one observation.
    pub aggregate_daily: bool,
    /// Which identifier is copied into `cluster_id`.
    pub cluster_by: ClusterBy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelBuild {
    pub panel: PanelDataset,
    pub dropped: Vec<DroppedObservation>,
    pub n_input: usize,
    /// Rows folded into another by daily aggregation.
    pub n_merged: usize,
}

impl PanelBuild {
    /// `n_input == rows + dropped + merged`.
    pub fn is_balanced(&self) -> bool {
        self.n_input == self.panel.len() + self.dropped.len() + self.n_merged
    }
}

/// Per-prompt inputs shared by both panel kinds.
pub struct PromptInputs<'a> {
    pub laps: &'a [LapRow],
    pub verdicts: &'a [VerdictRow],
    /// Probability of the first generated token, by prompt id.
    pub first_token_probs: &'a HashMap<String, f64>,
}

struct JoinedPrompt {
    lap: f64,
    llm: f64,
    confidence: Option<f64>,
    first_token_prob: Option<f64>,
}

impl PromptInputs<'_> {
    fn index(&self) -> (HashMap<&str, &LapRow>, HashMap<&str, &VerdictRow>) {
        (
            self.laps.iter().map(|r| (r.prompt_id.as_str(), r)).collect(),
            self.verdicts.iter().map(|r| (r.prompt_id.as_str(), r)).collect(),
        )
    }

    fn join(
        &self,
        prompt_id: &str,
        laps: &HashMap<&str, &LapRow>,
        verdicts: &HashMap<&str, &VerdictRow>,
    ) -> std::result::Result<JoinedPrompt, DropReason> {
        let lap = laps.get(prompt_id).ok_or(DropReason::MissingLap)?.lap_raw;
        if !(lap > 0.0 && lap <= 1.0) {
            return Err(DropReason::InvalidLap { value: lap });
        }
        let verdict = verdicts.get(prompt_id).ok_or(DropReason::MissingVerdict)?;
        let llm = verdict.score.ok_or(DropReason::UnparseableResponse)?;
        Ok(JoinedPrompt {
            lap,
            llm,
            confidence: verdict.confidence,
            first_token_prob: self.first_token_probs.get(prompt_id).copied(),
        })
    }
}

fn finish(
    rows: Vec<PanelObservation>,
    dropped: Vec<DroppedObservation>,
    n_input: usize,
    options: BuildOptions,
) -> PanelBuild {
    let (rows, n_merged) = if options.aggregate_daily {
        aggregate_daily(rows)
    } else {
        (rows, 0)
    };
    PanelBuild {
        panel: PanelDataset::new(rows),
        dropped,
        n_input,
        n_merged,
    }
}

/// Builds the headline panel: event day from the 16:00 rule, outcome from
/// the next trading day's return.
pub fn build_return_panel(
    events: &[HeadlineEvent],
    inputs: &PromptInputs<'_>,
    returns: &ReturnTable,
    options: BuildOptions,
) -> PanelBuild {
    let (laps, verdicts) = inputs.index();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for ev in events {
        let result = (|| {
            let day = assign_event_day(&ev.timestamp).map_err(|e| match e {
                Error::AmbiguousTimestamp(_) => DropReason::AmbiguousTimestamp,
                _ => DropReason::InvalidTimestamp,
            })?;
            let joined = inputs.join(&ev.prompt_id, &laps, &verdicts)?;
            let (_, ret) = returns.attach_outcome(&ev.entity_id, day)?;
            Ok::<_, DropReason>((day, joined, ret))
        })();
        match result {
            Ok((day, j, ret)) => {
                let time_id = day.to_string();
                rows.push(PanelObservation {
                    obs_id: ev.prompt_id.clone(),
                    entity_id: ev.entity_id.clone(),
                    cluster_id: match options.cluster_by {
                        ClusterBy::Time => time_id.clone(),
                        ClusterBy::Entity => ev.entity_id.clone(),
                    },
                    time_id,
                    outcome: ret,
                    llm: j.llm,
                    lap: j.lap,
                    confidence: j.confidence,
                    first_token_prob: j.first_token_prob,
                    small: None,
                });
            }
            Err(reason) => dropped.push(DroppedObservation {
                obs_id: ev.prompt_id.clone(),
                entity_id: ev.entity_id.clone(),
                reason,
            }),
        }
    }
    finish(rows, dropped, events.len(), options)
}

/// Builds the earnings-call panel: a call in quarter `q` is matched to
/// capital expenditure reported for quarter `q + 2`.
pub fn build_capex_panel(
    events: &[CallEvent],
    inputs: &PromptInputs<'_>,
    capex: &[CapexRow],
    options: BuildOptions,
) -> PanelBuild {
    let (laps, verdicts) = inputs.index();
    let capex_index: HashMap<(&str, Quarter), f64> = capex
        .iter()
        .filter_map(|r| Some(((r.entity_id.as_str(), r.quarter.parse::<Quarter>().ok()?), r.capex_pct)))
        .collect();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for ev in events {
        let result = (|| {
            let q: Quarter = ev.quarter.parse().map_err(|_| DropReason::InvalidTimestamp)?;
            let joined = inputs.join(&ev.prompt_id, &laps, &verdicts)?;
            let target = q.plus(2);
            let value = capex_index
                .get(&(ev.entity_id.as_str(), target))
                .copied()
                .ok_or(DropReason::MissingCapex {
                    quarter: target.to_string(),
                })?;
            Ok::<_, DropReason>((q, joined, value))
        })();
        match result {
            Ok((q, j, value)) => {
                let time_id = q.to_string();
                rows.push(PanelObservation {
                    obs_id: ev.prompt_id.clone(),
                    entity_id: ev.entity_id.clone(),
                    cluster_id: match options.cluster_by {
                        ClusterBy::Time => time_id.clone(),
                        ClusterBy::Entity => ev.entity_id.clone(),
                    },
                    time_id,
                    outcome: value,
                    llm: j.llm,
                    lap: j.lap,
                    confidence: j.confidence,
                    first_token_prob: j.first_token_prob,
                    small: None,
                });
            }
            Err(reason) => dropped.push(DroppedObservation {
                obs_id: ev.prompt_id.clone(),
                entity_id: ev.entity_id.clone(),
                reason,
            }),
        }
    }
    finish(rows, dropped, events.len(), options)
}

/// Averages rows sharing (entity, time). The merged row keeps the first
/// row's id. Optional columns average over the rows where present.
fn aggregate_daily(rows: Vec<PanelObservation>) -> (Vec<PanelObservation>, usize) {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<PanelObservation>> = HashMap::new();
    for r in rows {
        let key = (r.entity_id.clone(), r.time_id.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut merged = 0;
    let out = order
        .into_iter()
        .map(|key| {
            let g = groups.remove(&key).unwrap();
            merged += g.len() - 1;
            let avg = |f: &dyn Fn(&PanelObservation) -> Option<f64>| {
                let v: Vec<f64> = g.iter().filter_map(f).collect();
                (!v.is_empty()).then(|| stats::mean(&v))
            };
            let mut first = g[0].clone();
            first.outcome = avg(&|o| Some(o.outcome)).unwrap();
            first.llm = avg(&|o| Some(o.llm)).unwrap();
            first.lap = avg(&|o| Some(o.lap)).unwrap();
            first.confidence = avg(&|o| o.confidence);
            first.first_token_prob = avg(&|o| o.first_token_prob);
            first
        })
        .collect();
    (out, merged)
}

/// CSV form of a panel row; `small` is written as 0/1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PanelCsvRow {
    obs_id: String,
    entity_id: String,
    time_id: String,
    cluster_id: String,
    outcome: f64,
    llm: f64,
    lap: f64,
    confidence: Option<f64>,
    first_token_prob: Option<f64>,
    small: Option<u8>,
}

pub fn write_panel_csv<W: Write>(writer: W, panel: &PanelDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for o in &panel.observations {
        w.serialize(PanelCsvRow {
            obs_id: o.obs_id.clone(),
            entity_id: o.entity_id.clone(),
            time_id: o.time_id.clone(),
            cluster_id: o.cluster_id.clone(),
            outcome: o.outcome,
            llm: o.llm,
            lap: o.lap,
            confidence: o.confidence,
            first_token_prob: o.first_token_prob,
            small: o.small.map(u8::from),
        })
        .map_err(|e| Error::io("writing panel CSV", e))?;
    }
    w.flush().map_err(|e| Error::io("writing panel CSV", e))
}

pub fn read_panel_csv<R: Read>(reader: R) -> Result<PanelDataset> {
    let mut observations = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize::<PanelCsvRow>() {
        let r = row.map_err(|e| Error::io("reading panel CSV", e))?;
        observations.push(PanelObservation {
            obs_id: r.obs_id,
            entity_id: r.entity_id,
            time_id: r.time_id,
            cluster_id: r.cluster_id,
            outcome: r.outcome,
            llm: r.llm,
            lap: r.lap,
            confidence: r.confidence,
            first_token_prob: r.first_token_prob,
            small: r.small.map(|s| s != 0),
        });
    }
    Ok(PanelDataset::new(observations))
}

pub fn write_drop_log<W: Write>(writer: W, dropped: &[DroppedObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["obs_id", "entity_id", "reason", "detail"])
        .map_err(|e| Error::io("writing drop log", e))?;
    for d in dropped {
        w.write_record([d.obs_id.as_str(), d.entity_id.as_str(), d.reason.code(), &d.reason.detail()])
            .map_err(|e| Error::io("writing drop log", e))?;
    }
    w.flush().map_err(|e| Error::io("writing drop log", e))
}

/// Reads any headered CSV into serde rows.
pub fn read_csv_rows<T: serde::de::DeserializeOwned, R: Read>(reader: R, what: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::io(format!("reading {what}"), e))
}

/// Weekday check used by calendar fixtures.
pub fn is_weekend(d: NaiveDate) -> bool {
    d.weekday().number_from_monday() > 5
}
