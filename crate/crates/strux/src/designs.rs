//! Per-unit design rows built from raw event logs.
//!
//! Two panels: weekly app-category choices with a download-history state and
//! a lagged social-influence signal, and daily contribution outcomes with
//! lagged activity, leaderboard and badge states. Every covariate in a row
//! is computed from strictly earlier periods.

use std::collections::BTreeMap;

use crate::dpmix::UnitData;
use crate::error::{invalid, Error, Result};
use crate::par;

/// Which diffusion signal enters the choice utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfluenceSource {
    LocalImitators,
    GlobalImitators,
    LocalAdopters,
    GlobalAdopters,
    None,
}

impl InfluenceSource {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "local_imitators" => Self::LocalImitators,
            "global_imitators" => Self::GlobalImitators,
            "local_adopters" => Self::LocalAdopters,
            "global_adopters" => Self::GlobalAdopters,
            "none" => Self::None,
            other => return invalid(format!("unknown influence source '{other}'")),
        })
    }
}

/// Weekly signal series. Local series are indexed [locale][category][week],
/// global ones [category][week]; week 1 sits at index 0. Only the series
/// selected by the [`InfluenceSource`] has to be filled.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InfluenceSignals {
    pub local_imitators: Vec<Vec<Vec<f64>>>,
    pub global_imitators: Vec<Vec<f64>>,
    pub local_adopters: Vec<Vec<Vec<f64>>>,
    pub global_adopters: Vec<Vec<f64>>,
}

impl InfluenceSignals {
    fn series(&self, source: InfluenceSource, locale: usize) -> Option<&[Vec<f64>]> {
        match source {
            InfluenceSource::LocalImitators => self.local_imitators.get(locale).map(|v| v.as_slice()),
            InfluenceSource::GlobalImitators => Some(&self.global_imitators),
            InfluenceSource::LocalAdopters => self.local_adopters.get(locale).map(|v| v.as_slice()),
            InfluenceSource::GlobalAdopters => Some(&self.global_adopters),
            InfluenceSource::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitInfo {
    pub locale: usize,
    /// Factor scores of the unit (three in the usual setup).
    pub factors: Vec<f64>,
    /// Tenure in days.
    pub tenure: f64,
}

/// One download; weeks are 1-based, categories 1..=J.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownloadEvent {
    pub unit: usize,
    pub week: usize,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppChoiceRow {
    pub unit: usize,
    pub week: usize,
    /// 0 is the outside option.
    pub chosen: usize,
    /// Weeks before this one with a download.
    pub s: u32,
    /// Previous week's signal per category; `None` when no source is used.
    pub influence: Option<Vec<f64>>,
    pub factors: Vec<f64>,
    pub tenure: f64,
}

impl AppChoiceRow {
    /// Covariates of inside alternative `j` (1..=J):
    /// [e_j (J), s, c_j, F...], without c_j when no source is used.
    pub fn design(&self, j: usize, categories: usize) -> Vec<f64> {
        let mut x = vec![0.0; categories];
        x[j - 1] = 1.0;
        x.push(self.s as f64);
        if let Some(c) = &self.influence {
            x.push(c[j - 1]);
        }
        x.extend_from_slice(&self.factors);
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppPanel {
    pub categories: usize,
    pub weeks: usize,
    pub source: InfluenceSource,
    /// Sorted by (unit, week).
    pub rows: Vec<AppChoiceRow>,
}

impl AppPanel {
    pub fn design_dim(&self) -> usize {
        let f = self.rows.first().map_or(0, |r| r.factors.len());
        self.categories + 1 + usize::from(self.source != InfluenceSource::None) + f
    }

    pub fn unit_rows(&self, unit: usize) -> &[AppChoiceRow] {
        let lo = self.rows.partition_point(|r| r.unit < unit);
        let hi = self.rows.partition_point(|r| r.unit <= unit);
        &self.rows[lo..hi]
    }

    /// Units in ascending id order.
    pub fn units(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self.rows.iter().map(|r| r.unit).collect();
        u.dedup();
        u
    }

    /// One multinomial unit per panel unit; `z` gives the unit-level
    /// covariates.
    pub fn to_unit_data(&self, z: &dyn Fn(usize, &[AppChoiceRow]) -> Vec<f64>) -> Result<Vec<UnitData>> {
        let j = self.categories;
        self.units()
            .into_iter()
            .map(|u| {
                let rows = self.unit_rows(u);
                let designs: Vec<Vec<Vec<f64>>> = rows.iter().map(|r| (1..=j).map(|k| r.design(k, j)).collect()).collect();
                let choices: Vec<usize> = rows.iter().map(|r| r.chosen).collect();
                UnitData::multinomial(u, &designs, &choices, z(u, rows))
            })
            .collect()
    }
}

/// Build the weekly choice panel. When a unit downloads more than once in a
/// week, the first event of that week is its choice.
pub fn build_app_panel(
    events: &[DownloadEvent],
    units: &[UnitInfo],
    weeks: usize,
    categories: usize,
    signals: &InfluenceSignals,
    source: InfluenceSource,
) -> Result<AppPanel> {
    if weeks == 0 || categories == 0 {
        return invalid("weeks and categories must be positive");
    }
    if let Some(f) = units.first() {
        if units.iter().any(|u| u.factors.len() != f.factors.len()) {
            return Err(Error::Dimension("units have different factor counts".into()));
        }
    }
    for (i, u) in units.iter().enumerate() {
        if !u.tenure.is_finite() || u.factors.iter().any(|v| !v.is_finite()) {
            return invalid(format!("unit {i}: non-finite covariate"));
        }
        if source != InfluenceSource::None {
            let s = signals.series(source, u.locale).ok_or_else(|| Error::Invalid(format!("unit {i}: no signal for locale {}", u.locale)))?;
            // The last row reads week `weeks − 1`.
            if s.len() != categories || s.iter().any(|c| c.len() + 1 < weeks) {
                return Err(Error::Dimension(format!("unit {i}: signal does not cover {categories} categories × {} weeks", weeks - 1)));
            }
        }
    }
    let mut choices = vec![vec![0usize; weeks]; units.len()];
    let mut last_week = 0;
    for (i, e) in events.iter().enumerate() {
        if e.category == 0 || e.category > categories {
            return invalid(format!("event {i}: unknown category {}", e.category));
        }
        if e.unit >= units.len() {
            return invalid(format!("event {i}: unknown unit {}", e.unit));
        }
        if e.week == 0 || e.week > weeks {
            return invalid(format!("event {i}: week {} outside 1..={weeks}", e.week));
        }
        if e.week < last_week {
            return invalid(format!("event {i}: events not sorted by week"));
        }
        last_week = e.week;
        let slot = &mut choices[e.unit][e.week - 1];
        if *slot == 0 {
            *slot = e.category;
        }
    }
    let per_unit = par::map_range(units.len(), |i| {
        let u = &units[i];
        let series = signals.series(source, u.locale);
        let mut s = 0u32;
        let mut rows = Vec::with_capacity(weeks);
        for t in 1..=weeks {
            if t > 1 && choices[i][t - 2] != 0 {
                s += 1;
            }
            let influence = series.map(|c| c.iter().map(|v| if t == 1 { 0.0 } else { v[t - 2] }).collect());
            rows.push(AppChoiceRow { unit: i, week: t, chosen: choices[i][t - 1], s, influence, factors: u.factors.clone(), tenure: u.tenure });
        }
        rows
    });
    Ok(AppPanel { categories, weeks, source, rows: per_unit.into_iter().flatten().collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActivityKind {
    Comment,
    PostAnswered,
    Revision,
    Accepted,
    Review,
    PostAsked,
}

impl ActivityKind {
    pub fn is_contribution(self) -> bool {
        matches!(self, Self::Comment | Self::PostAnswered | Self::Revision)
    }

    pub fn is_reciprocity(self) -> bool {
        !self.is_contribution()
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "comment" => Self::Comment,
            "post_answered" => Self::PostAnswered,
            "revision" => Self::Revision,
            "accepted" => Self::Accepted,
            "review" => Self::Review,
            "post_asked" => Self::PostAsked,
            other => return invalid(format!("unknown activity kind '{other}'")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivityEvent {
    pub user: usize,
    pub day: usize,
    pub kind: ActivityKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BadgeLevel {
    Gold,
    Silver,
    Bronze,
}

impl BadgeLevel {
    pub fn index(self) -> usize {
        match self {
            Self::Gold => 0,
            Self::Silver => 1,
            Self::Bronze => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "gold" => Self::Gold,
            "silver" => Self::Silver,
            "bronze" => Self::Bronze,
            other => return invalid(format!("unknown badge level '{other}'")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BadgeEvent {
    pub user: usize,
    pub day: usize,
    pub level: BadgeLevel,
}

/// A user's leaderboard line for one week (rank 1 is the top).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderboardEntry {
    pub user: usize,
    pub week: usize,
    pub rank: u32,
    pub points: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GamificationConfig {
    /// Days 0..days are in the horizon; week = day / week_len.
    pub days: usize,
    pub week_len: usize,
    /// Binomial trials per day; 1 makes the outcome "any contribution today".
    pub n_trials: u32,
}

impl Default for GamificationConfig {
    fn default() -> Self {
        Self { days: 0, week_len: 7, n_trials: 1 }
    }
}

pub const GAMIFICATION_COLUMNS: [&str; 14] =
    ["const", "cont", "rcv", "crep", "rep", "rnk", "drnk", "offboard", "bdg_g", "bdg_s", "bdg_b", "cbdg_g", "cbdg_s", "cbdg_b"];

#[derive(Debug, Clone, PartialEq)]
pub struct GamificationRow {
    pub user: usize,
    pub day: usize,
    pub week: usize,
    /// Raw contribution events on this day.
    pub contributions: u32,
    /// Cumulative contributions through the previous day.
    pub cont_prev: u32,
    /// Cumulative reciprocity events through the previous day.
    pub rcv_prev: u32,
    /// Points summed over leaderboard weeks through the previous week.
    pub crep: f64,
    /// Points in the previous week.
    pub rep: f64,
    /// Rank in the previous week, 0 when off the board.
    pub rnk: f64,
    /// rank(w−1) − rank(w−2); 0 unless both weeks are on the board.
    pub drnk: f64,
    pub offboard: bool,
    /// Badges earned on the previous day (gold, silver, bronze).
    pub bdg: [u32; 3],
    /// Badges earned through the previous day.
    pub cbdg: [u32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamificationPanel {
    pub users: Vec<usize>,
    pub rows: Vec<GamificationRow>,
    pub n_trials: u32,
    /// Mean of `cont_prev` over the rows the panel was built from. A held-out
    /// panel should reuse the training value.
    pub cont_mean: f64,
}

impl GamificationPanel {
    pub fn successes(&self, row: &GamificationRow) -> u32 {
        row.contributions.min(self.n_trials)
    }

    /// The 14 covariates, in [`GAMIFICATION_COLUMNS`] order. Counts and
    /// points are scaled by 1/100; contributions are demeaned first.
    pub fn design(&self, row: &GamificationRow) -> [f64; 14] {
        [
            1.0,
            (row.cont_prev as f64 - self.cont_mean) / 100.0,
            row.rcv_prev as f64 / 100.0,
            row.crep / 100.0,
            row.rep / 100.0,
            row.rnk / 100.0,
            row.drnk / 100.0,
            f64::from(u8::from(row.offboard)),
            row.bdg[0] as f64,
            row.bdg[1] as f64,
            row.bdg[2] as f64,
            row.cbdg[0] as f64,
            row.cbdg[1] as f64,
            row.cbdg[2] as f64,
        ]
    }

    pub fn user_rows(&self, user: usize) -> &[GamificationRow] {
        let lo = self.rows.partition_point(|r| r.user < user);
        let hi = self.rows.partition_point(|r| r.user <= user);
        &self.rows[lo..hi]
    }

    /// One binomial unit per user with at least one row, in `users` order.
    pub fn to_unit_data(&self, z: &dyn Fn(usize, &[GamificationRow]) -> Vec<f64>) -> Result<Vec<UnitData>> {
        self.users
            .iter()
            .filter(|&&u| !self.user_rows(u).is_empty())
            .map(|&u| {
                let rows = self.user_rows(u);
                let x: Vec<Vec<f64>> = rows.iter().map(|r| self.design(r).to_vec()).collect();
                let s: Vec<u32> = rows.iter().map(|r| self.successes(r)).collect();
                UnitData::binomial(u, &x, &s, &vec![self.n_trials; rows.len()], z(u, rows))
            })
            .collect()
    }
}

#[derive(Default)]
struct UserLog {
    contrib: Vec<u32>,
    recip: Vec<u32>,
    badges: Vec<[u32; 3]>,
    board: BTreeMap<usize, (u32, f64)>,
}

/// Build the daily contribution panel over every user seen in any log.
pub fn build_gamification_panel(
    activities: &[ActivityEvent],
    leaderboard: &[LeaderboardEntry],
    badges: &[BadgeEvent],
    cfg: &GamificationConfig,
) -> Result<GamificationPanel> {
    let days = cfg.days;
    if days == 0 || cfg.week_len == 0 || cfg.n_trials == 0 {
        return invalid("days, week length and trial count must be positive");
    }
    let weeks = days.div_ceil(cfg.week_len);
    let mut logs: BTreeMap<usize, UserLog> = BTreeMap::new();
    let fresh = || UserLog { contrib: vec![0; days], recip: vec![0; days], badges: vec![[0; 3]; days], board: BTreeMap::new() };
    for (i, a) in activities.iter().enumerate() {
        if a.day >= days {
            return invalid(format!("activity {i}: day {} outside the horizon", a.day));
        }
        let log = logs.entry(a.user).or_insert_with(fresh);
        if a.kind.is_contribution() {
            log.contrib[a.day] += 1;
        } else {
            log.recip[a.day] += 1;
        }
    }
    for (i, b) in badges.iter().enumerate() {
        if b.day >= days {
            return invalid(format!("badge {i}: day {} outside the horizon", b.day));
        }
        logs.entry(b.user).or_insert_with(fresh).badges[b.day][b.level.index()] += 1;
    }
    for (i, e) in leaderboard.iter().enumerate() {
        if e.week >= weeks {
            return invalid(format!("leaderboard row {i}: week {} outside the horizon", e.week));
        }
        if e.rank == 0 || !e.points.is_finite() {
            return invalid(format!("leaderboard row {i}: rank must be positive and points finite"));
        }
        let log = logs.entry(e.user).or_insert_with(fresh);
        if log.board.insert(e.week, (e.rank, e.points)).is_some() {
            return invalid(format!("leaderboard row {i}: duplicate entry for user {} week {}", e.user, e.week));
        }
    }
    let users: Vec<usize> = logs.keys().copied().collect();
    let entries: Vec<(&usize, &UserLog)> = logs.iter().collect();
    let per_user = par::map_slice(&entries, |_, (user, log)| {
        let mut rows = Vec::with_capacity(days);
        let (mut cont, mut rcv) = (0u32, 0u32);
        let mut cbdg = [0u32; 3];
        // Cumulative points through each week.
        let mut crep_by_week = vec![0.0; weeks];
        let mut acc = 0.0;
        for (w, slot) in crep_by_week.iter_mut().enumerate() {
            acc += log.board.get(&w).map_or(0.0, |e| e.1);
            *slot = acc;
        }
        for day in 0..days {
            let mut bdg = [0u32; 3];
            if day > 0 {
                cont += log.contrib[day - 1];
                rcv += log.recip[day - 1];
                bdg = log.badges[day - 1];
                for l in 0..3 {
                    cbdg[l] += bdg[l];
                }
            }
            let week = day / cfg.week_len;
            let prev = week.checked_sub(1).and_then(|w| log.board.get(&w));
            let prior = week.checked_sub(2).and_then(|w| log.board.get(&w));
            let (rnk, rep, offboard) = match prev {
                Some(&(r, p)) => (r as f64, p, false),
                None => (0.0, 0.0, true),
            };
            let drnk = match (prev, prior) {
                (Some(a), Some(b)) => a.0 as f64 - b.0 as f64,
                _ => 0.0,
            };
            let crep = if week >= 1 { crep_by_week[week - 1] } else { 0.0 };
            rows.push(GamificationRow {
                user: **user,
                day,
                week,
                contributions: log.contrib[day],
                cont_prev: cont,
                rcv_prev: rcv,
                crep,
                rep,
                rnk,
                drnk,
                offboard,
                bdg,
                cbdg,
            });
        }
        rows
    });
    let rows: Vec<GamificationRow> = per_user.into_iter().flatten().collect();
    let cont_mean = if rows.is_empty() { 0.0 } else { rows.iter().map(|r| r.cont_prev as f64).sum::<f64>() / rows.len() as f64 };
    Ok(GamificationPanel { users, rows, n_trials: cfg.n_trials, cont_mean })
}
