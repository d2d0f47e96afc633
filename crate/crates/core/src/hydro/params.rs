use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{Discharge, HydroError, Result, StageStorageCurve, StorageVolume, WaterLevel};

const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

fn parse_month(s: &str) -> Option<u32> {
    let s = s.trim();
    if let Ok(m) = s.parse::<u32>() {
        return (1..=12).contains(&m).then_some(m);
    }
    let lower = s.to_ascii_lowercase();
    MONTHS
        .iter()
        .position(|m| lower.starts_with(&m.to_ascii_lowercase()))
        .map(|i| i as u32 + 1)
}

fn days_in_month(month: u32, year: i32) -> u32 {
    let next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    };
    next.and_then(|d| d.pred_opt()).map(|d| d.day()).unwrap_or(31)
}

/// A calendar day without a year, written `MM-DD`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MonthDay {
    pub month: u32,
    pub day: u32,
}

impl MonthDay {
    pub fn new(month: u32, day: u32) -> Result<Self> {
        // 2000 is a leap year, so Feb 29 is accepted.
        if NaiveDate::from_ymd_opt(2000, month, day).is_none() {
            return Err(HydroError::InvalidParams(format!("no calendar day {month:02}-{day:02}")));
        }
        Ok(Self { month, day })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self { month: date.month(), day: date.day() }
    }

    /// This day in `year`; Feb 29 falls back to Feb 28 in common years.
    pub fn in_year(&self, year: i32) -> NaiveDate {
        NaiveDate::from_ymd_opt(year, self.month, self.day)
            .or_else(|| NaiveDate::from_ymd_opt(year, self.month, self.day - 1))
            .expect("validated month-day")
    }
}

impl fmt::Display for MonthDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}-{:02}", self.month, self.day)
    }
}

impl FromStr for MonthDay {
    type Err = HydroError;

    /// Accepts `06-01` or `01 June`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || HydroError::InvalidParams(format!("cannot parse calendar day {s:?}"));
        let s = s.trim();
        if let Some((m, d)) = s.split_once('-') {
            let month = parse_month(m).ok_or_else(bad)?;
            let day = d.trim().parse().map_err(|_| bad())?;
            return Self::new(month, day);
        }
        let mut parts = s.split_whitespace();
        let (a, b) = (parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?);
        let (day, month) = match a.parse::<u32>() {
            Ok(d) => (d, parse_month(b).ok_or_else(bad)?),
            Err(_) => (b.parse().map_err(|_| bad())?, parse_month(a).ok_or_else(bad)?),
        };
        Self::new(month, day)
    }
}

impl TryFrom<String> for MonthDay {
    type Error = HydroError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MonthDay> for String {
    fn from(m: MonthDay) -> String {
        m.to_string()
    }
}

/// Inclusive run of months that may wrap over the year end, e.g. `Nov-Jun`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MonthRange {
    pub first: u32,
    pub last: u32,
}

impl MonthRange {
    pub fn contains(&self, month: u32) -> bool {
        if self.first <= self.last {
            (self.first..=self.last).contains(&month)
        } else {
            month >= self.first || month <= self.last
        }
    }

    /// Days covered in a common (non-leap) year.
    pub fn days_in_common_year(&self) -> u32 {
        (1..=12).filter(|m| self.contains(*m)).map(|m| days_in_month(m, 2001)).sum()
    }
}

impl fmt::Display for MonthRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", MONTHS[self.first as usize - 1], MONTHS[self.last as usize - 1])
    }
}

impl FromStr for MonthRange {
    type Err = HydroError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || HydroError::InvalidParams(format!("cannot parse month range {s:?}"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        Ok(Self { first: parse_month(a).ok_or_else(bad)?, last: parse_month(b).ok_or_else(bad)? })
    }
}

impl TryFrom<String> for MonthRange {
    type Error = HydroError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MonthRange> for String {
    fn from(m: MonthRange) -> String {
        m.to_string()
    }
}

/// Simulator parameters.
///
/// Serialized as a flat key-value (TOML) table. Unknown keys are ignored so
/// the same file can also carry run options for the command line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub dam_cap: WaterLevel,
    pub dam_break_damage: f64,
    pub dam_base_water: StorageVolume,
    pub water_year_start: MonthDay,
    pub water_year_end: MonthDay,
    #[serde(rename = "dry_season_months")]
    pub dry_season: MonthRange,
    pub discount: f64,
    pub max_step: usize,
    pub flooded_area_slope: f64,
    pub power_potential_slope: f64,
    pub wheat_slope: f64,
    pub rice_slope: f64,
    pub a_max: Discharge,
    pub flood_window: usize,
    pub rainfall_window: usize,
}

impl SimParams {
    pub const DEFAULT_DAM_CAP: WaterLevel = WaterLevel(342.934);

    pub fn validate(&self, curve: &StageStorageCurve) -> Result<()> {
        let bad = |m: String| Err(HydroError::InvalidParams(m));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount must lie in (0, 1), got {}", self.discount));
        }
        if self.max_step == 0 {
            return bad("max_step must be at least 1".into());
        }
        for (name, v) in [
            ("flooded_area_slope", self.flooded_area_slope),
            ("power_potential_slope", self.power_potential_slope),
            ("wheat_slope", self.wheat_slope),
            ("rice_slope", self.rice_slope),
            ("dam_break_damage", self.dam_break_damage),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.a_max.0 > 0.0 && self.a_max.0.is_finite()) {
            return bad(format!("a_max must be positive, got {}", self.a_max.0));
        }
        if self.flood_window == 0 || self.rainfall_window == 0 {
            return bad("flood_window and rainfall_window must be at least 1".into());
        }
        let cap_storage = curve.storage_from_level(self.dam_cap)?;
        if !(self.dam_base_water.0 >= 0.0 && self.dam_base_water.0 < cap_storage.0) {
            return bad(format!(
                "dam_base_water {} must lie in [0, storage(dam_cap) = {})",
                self.dam_base_water.0, cap_storage.0
            ));
        }
        Ok(())
    }

    pub fn is_dry_season(&self, date: NaiveDate) -> bool {
        self.dry_season.contains(date.month())
    }

    /// Daily weight on the irrigation terms so a whole dry season at constant
    /// level accrues each crop potential once.
    pub fn irrigation_scale(&self) -> f64 {
        1.0 / self.dry_season.days_in_common_year() as f64
    }

    /// First day of the water year containing `date`.
    pub fn water_year_start_for(&self, date: NaiveDate) -> NaiveDate {
        let this_year = self.water_year_start.in_year(date.year());
        if date >= this_year {
            this_year
        } else {
            self.water_year_start.in_year(date.year() - 1)
        }
    }

    pub fn from_toml_str(s: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat parameter table always serializes")
    }
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dam_cap: Self::DEFAULT_DAM_CAP,
            dam_break_damage: 80.0,
            dam_base_water: StorageVolume(0.1),
            water_year_start: MonthDay { month: 6, day: 1 },
            water_year_end: MonthDay { month: 5, day: 31 },
            dry_season: MonthRange { first: 11, last: 6 },
            discount: 0.999,
            max_step: 365,
            flooded_area_slope: 0.00006,
            power_potential_slope: 0.003,
            wheat_slope: 30.0,
            rice_slope: 30.0,
            a_max: Discharge(3000.0),
            flood_window: 14,
            rainfall_window: 7,
        }
    }
}
