//! Reference policies: the ten-daily baseline schedule, constant and uniform
//! random discharges.

use std::io;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, EnvState};
use crate::hydro::{volume_to_discharge, Discharge, MonthDay, StorageVolume};
use crate::seed::{rng_for, Stream};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("{0} is outside the Nov 01 - Jun 30 schedule")]
    OutsideSchedule(NaiveDate),
    #[error("discharge {value} cumecs outside [{lo}, {hi}]")]
    OutOfBounds { value: f64, lo: f64, hi: f64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("schedule csv line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// What a policy sees when choosing today's release.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub state: &'a EnvState,
    /// One-step forecast of today's inflow, BCM/day.
    pub inflow_estimate: StorageVolume,
}

/// Common interface for every discharge policy.
pub trait Policy {
    /// Today's release; implementations keep it within `[0, a_max]`.
    fn act(&mut self, obs: &Observation<'_>, explore: bool) -> Action;

    fn name(&self) -> String;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&mut self, obs: &Observation<'_>, explore: bool) -> Action {
        (**self).act(obs, explore)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub period_start: MonthDay,
    pub period_end: MonthDay,
    pub discharge_cumecs: f64,
}

/// Ten-daily release table for Nov 01 - Jun 30; outside it the release
/// matches the inflow estimate so the level stays put.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePolicy {
    entries: Vec<ScheduleEntry>,
    a_max: Discharge,
}

/// Baseline discharges in cumecs, Nov 01-10 through Jun 21-30.
pub const BASELINE_DISCHARGES: [f64; 24] = [
    73.1, 68.6, 64.1, // Nov
    59.6, 55.1, 48.5, // Dec
    41.8, 35.2, 33.6, // Jan
    31.9, 30.3, 29.2, // Feb
    28.1, 27.0, 23.8, // Mar
    20.5, 17.3, 16.1, // Apr
    14.9, 13.7, 12.5, // May
    11.3, 57.6, 104.0, // Jun
];

const SCHEDULE_MONTHS: [u32; 8] = [11, 12, 1, 2, 3, 4, 5, 6];

fn month_end(month: u32) -> u32 {
    // Common year; Feb 29 is folded into the Feb 21-28 row by lookup.
    match month {
        2 => 28,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    }
}

/// Position of a calendar day in the Nov..Jun ordering, `None` outside it.
fn schedule_ordinal(md: MonthDay) -> Option<u32> {
    let idx = SCHEDULE_MONTHS.iter().position(|m| *m == md.month)? as u32;
    Some(idx * 32 + md.day)
}

/// Row index (0 = Nov 01-10, 23 = Jun 21-30) of the default ten-daily table.
pub fn lookup_period(date: NaiveDate) -> Result<usize> {
    let month_idx = SCHEDULE_MONTHS
        .iter()
        .position(|m| *m == date.month())
        .ok_or(PolicyError::OutsideSchedule(date))?;
    let third = match date.day() {
        1..=10 => 0,
        11..=20 => 1,
        _ => 2,
    };
    Ok(month_idx * 3 + third)
}

impl SchedulePolicy {
    pub fn baseline(a_max: Discharge) -> Self {
        let mut entries = Vec::with_capacity(24);
        for (mi, month) in SCHEDULE_MONTHS.iter().enumerate() {
            for third in 0..3 {
                let start = 1 + 10 * third as u32;
                let end = if third == 2 { month_end(*month) } else { start + 9 };
                entries.push(ScheduleEntry {
                    period_start: MonthDay { month: *month, day: start },
                    period_end: MonthDay { month: *month, day: end },
                    discharge_cumecs: BASELINE_DISCHARGES[mi * 3 + third],
                });
            }
        }
        Self::new(entries, a_max).expect("embedded schedule is valid")
    }

    /// Validates that entries tile Nov 01 - Jun 30 without gaps or overlaps.
    pub fn new(entries: Vec<ScheduleEntry>, a_max: Discharge) -> Result<Self> {
        let bad = |m: String| Err(PolicyError::InvalidSchedule(m));
        if entries.is_empty() {
            return bad("no entries".into());
        }
        if entries[0].period_start != (MonthDay { month: 11, day: 1 }) {
            return bad(format!("first period starts {} instead of 11-01", entries[0].period_start));
        }
        let last = entries.last().unwrap().period_end;
        if last != (MonthDay { month: 6, day: 30 }) {
            return bad(format!("last period ends {last} instead of 06-30"));
        }
        for (i, e) in entries.iter().enumerate() {
            let (Some(a), Some(b)) = (schedule_ordinal(e.period_start), schedule_ordinal(e.period_end)) else {
                return bad(format!("period {} - {} leaves Nov-Jun", e.period_start, e.period_end));
            };
            if a > b {
                return bad(format!("period {} - {} is reversed", e.period_start, e.period_end));
            }
            if !(e.discharge_cumecs > 0.0 && e.discharge_cumecs <= a_max.0) {
                return bad(format!("discharge {} must lie in (0, a_max]", e.discharge_cumecs));
            }
            if i > 0 {
                let prev = entries[i - 1].period_end;
                let expected = if prev.day >= month_end(prev.month) {
                    let next_month = if prev.month == 12 { 1 } else { prev.month + 1 };
                    MonthDay { month: next_month, day: 1 }
                } else {
                    MonthDay { month: prev.month, day: prev.day + 1 }
                };
                if e.period_start != expected {
                    return bad(format!("gap or overlap before period starting {}", e.period_start));
                }
            }
        }
        Ok(Self { entries, a_max })
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    /// Scheduled discharge for `date`, `None` outside Nov-Jun.
    pub fn scheduled(&self, date: NaiveDate) -> Option<Discharge> {
        let mut md = MonthDay::of(date);
        if md.month == 2 && md.day == 29 {
            md.day = 28;
        }
        let ord = schedule_ordinal(md)?;
        self.entries
            .iter()
            .find(|e| schedule_ordinal(e.period_start).unwrap() <= ord && ord <= schedule_ordinal(e.period_end).unwrap())
            .map(|e| Discharge(e.discharge_cumecs))
    }

    pub fn baseline_act(&self, date: NaiveDate, inflow_estimate: StorageVolume) -> Action {
        let q = match self.scheduled(date) {
            Some(q) => q,
            None => volume_to_discharge(StorageVolume(inflow_estimate.0.max(0.0))),
        };
        Action { discharge: Discharge(q.0.clamp(0.0, self.a_max.0)) }
    }

    /// CSV with header `period_start,period_end,discharge_cumecs`.
    pub fn from_csv_reader<R: io::Read>(reader: R, a_max: Discharge) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["period_start", "period_end", "discharge_cumecs"] {
            return Err(PolicyError::Parse { line: 1, msg: format!("unexpected header {headers:?}") });
        }
        let mut entries = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let perr = |msg: String| PolicyError::Parse { line, msg };
            if row.len() != 3 {
                return Err(perr(format!("expected 3 fields, got {}", row.len())));
            }
            entries.push(ScheduleEntry {
                period_start: row[0].parse().map_err(|e| perr(format!("{e}")))?,
                period_end: row[1].parse().map_err(|e| perr(format!("{e}")))?,
                discharge_cumecs: row[2].parse().map_err(|e| perr(format!("bad discharge {:?}: {e}", &row[2])))?,
            });
        }
        Self::new(entries, a_max)
    }

    pub fn from_csv_path(path: &Path, a_max: Discharge) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?, a_max)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["period_start", "period_end", "discharge_cumecs"])?;
        for e in &self.entries {
            w.write_record([e.period_start.to_string(), e.period_end.to_string(), e.discharge_cumecs.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Policy for SchedulePolicy {
    fn act(&mut self, obs: &Observation<'_>, _explore: bool) -> Action {
        self.baseline_act(obs.state.date, obs.inflow_estimate)
    }

    fn name(&self) -> String {
        "baseline".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy {
    discharge: Discharge,
}

pub fn constant_policy(c: Discharge, a_max: Discharge) -> Result<ConstantPolicy> {
    if !(c.0 >= 0.0 && c.0 <= a_max.0) {
        return Err(PolicyError::OutOfBounds { value: c.0, lo: 0.0, hi: a_max.0 });
    }
    Ok(ConstantPolicy { discharge: c })
}

impl Policy for ConstantPolicy {
    fn act(&mut self, _obs: &Observation<'_>, _explore: bool) -> Action {
        Action { discharge: self.discharge }
    }

    fn name(&self) -> String {
        format!("constant-{}", self.discharge.0)
    }
}

/// Uniform draws in `[lo, hi]` cumecs, reproducible from the seed.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    lo: f64,
    hi: f64,
    rng: ChaCha8Rng,
}

pub fn random_policy(seed: u64, bounds: (Discharge, Discharge), a_max: Discharge) -> Result<RandomPolicy> {
    let (lo, hi) = (bounds.0 .0, bounds.1 .0);
    if !(lo >= 0.0 && lo <= hi && hi <= a_max.0) {
        return Err(PolicyError::OutOfBounds { value: if lo < 0.0 || lo > hi { lo } else { hi }, lo: 0.0, hi: a_max.0 });
    }
    Ok(RandomPolicy { lo, hi, rng: rng_for(seed, Stream::Policy, 0) })
}

impl Policy for RandomPolicy {
    fn act(&mut self, _obs: &Observation<'_>, _explore: bool) -> Action {
        let u: f64 = self.rng.random();
        Action { discharge: Discharge(self.lo + u * (self.hi - self.lo)) }
    }

    fn name(&self) -> String {
        "random".into()
    }
}
