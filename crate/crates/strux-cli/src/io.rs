//! CSV schemas.
//!
//! | file | columns |
//! |------|---------|
//! | adoption | category_id, day, cumulative_adopters |
//! | choice | unit_id, week, chosen_category, alt1_x1 … altJ_xd |
//! | auction | auction_id, bid_index, bidder_id, proxy_bid, board_bid, cum_bidders, time_trend, cluster_id |
//! | activity | user_id, day, activity_type, count |
//! | leaderboard | user_id, week, reputation, weekly_reputation, rank |
//! | badges | user_id, day, level |
//!
//! Every file is UTF-8 with a header row. `chosen_category` is 0 for the
//! outside option. Choice covariate columns are `alt{j}_{name}` with the same
//! names, in the same order, for every alternative.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use strux::auction::{AuctionPanel, AuctionTrace, Bid};
use strux::clustering::Partition;
use strux::designs::{ActivityEvent, ActivityKind, BadgeEvent, BadgeLevel, LeaderboardEntry};
use strux::dpmix::UnitData;

use crate::error::{validation, CliError, CliResult, Stage};

fn open(path: &Path) -> CliResult<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = open(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        out.push(rec.map_err(|e| CliError::Validation(format!("{} row {}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

/// Header row first, so an empty table still has its columns.
pub fn write_records<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).estimating(&path.display().to_string())?;
    w.write_record(header).estimating("csv header")?;
    for r in rows {
        w.serialize(r).estimating("csv row")?;
    }
    w.flush().estimating("csv flush")?;
    Ok(())
}

pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).estimating(&path.display().to_string())?;
    w.write_record(header).estimating("csv header")?;
    for r in rows {
        w.write_record(r).estimating("csv row")?;
    }
    w.flush().estimating("csv flush")?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdoptionRecord {
    pub category_id: usize,
    pub day: usize,
    pub cumulative_adopters: f64,
}

pub const ADOPTION_HEADER: [&str; 3] = ["category_id", "day", "cumulative_adopters"];

/// Category ids (ascending) and their series. Every category must cover the
/// same contiguous run of days.
pub fn read_adoption(path: &Path) -> CliResult<(Vec<usize>, Vec<Vec<f64>>)> {
    let recs: Vec<AdoptionRecord> = read_records(path)?;
    let mut by: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for r in &recs {
        if !r.cumulative_adopters.is_finite() {
            return validation(format!("category {} day {}: non-finite adopters", r.category_id, r.day));
        }
        by.entry(r.category_id).or_default().push((r.day, r.cumulative_adopters));
    }
    if by.is_empty() {
        return validation(format!("{}: no rows", path.display()));
    }
    let mut ids = Vec::new();
    let mut ys = Vec::new();
    let mut span = None;
    for (id, mut rows) in by {
        rows.sort_by_key(|r| r.0);
        let first = rows[0].0;
        if rows.iter().enumerate().any(|(k, r)| r.0 != first + k) {
            return validation(format!("category {id}: days must be contiguous without repeats"));
        }
        let s = (first, rows.len());
        if *span.get_or_insert(s) != s {
            return validation(format!("category {id}: covers different days than the others"));
        }
        ids.push(id);
        ys.push(rows.into_iter().map(|r| r.1).collect());
    }
    Ok((ids, ys))
}

// ---------------------------------------------------------------------------

fn alt_column(name: &str) -> Option<(usize, &str)> {
    let rest = name.strip_prefix("alt")?;
    let (j, cov) = rest.split_once('_')?;
    let j: usize = j.parse().ok()?;
    (j >= 1 && !cov.is_empty()).then_some((j, cov))
}

/// Choice panel: one multinomial unit per `unit_id`, in first-appearance
/// order, with observations sorted by week.
pub fn read_choice(path: &Path) -> CliResult<Vec<UnitData>> {
    let mut r = open(path)?;
    let header = r.headers().validating("choice header")?.clone();
    let fixed = ["unit_id", "week", "chosen_category"];
    if header.len() < 4 || header.iter().take(3).ne(fixed.iter().copied()) {
        return validation(format!("{}: header must start with unit_id, week, chosen_category", path.display()));
    }
    let mut names: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut cols = Vec::new();
    for h in header.iter().skip(3) {
        let Some((j, cov)) = alt_column(h) else {
            return validation(format!("{}: column '{h}' is not alt<j>_<name>", path.display()));
        };
        names.entry(j).or_default().push(cov.to_string());
        cols.push(j);
    }
    let alts = names.len();
    if names.keys().copied().ne(1..=alts) {
        return validation("choice alternatives must be numbered 1..J");
    }
    let d = names[&1].len();
    if names.values().any(|n| *n != names[&1]) {
        return validation("every alternative needs the same covariate columns in the same order");
    }
    let mut units: Vec<(u64, Vec<(usize, usize, Vec<Vec<f64>>)>)> = Vec::new();
    let mut index: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Validation(format!("{} row {}: {e}", path.display(), i + 1)))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let parse_u = |k: usize| -> CliResult<u64> {
            field(k).trim().parse().map_err(|_| CliError::Validation(format!("row {}: column {} is not an integer", i + 1, header.get(k).unwrap_or("?"))))
        };
        let (unit, week, chosen) = (parse_u(0)?, parse_u(1)? as usize, parse_u(2)? as usize);
        if chosen > alts {
            return validation(format!("row {}: chosen_category {chosen} outside 0..={alts}", i + 1));
        }
        let mut x = vec![Vec::with_capacity(d); alts];
        for (k, &j) in cols.iter().enumerate() {
            let v: f64 = field(k + 3).trim().parse().map_err(|_| CliError::Validation(format!("row {}: column {} is not a number", i + 1, &header[k + 3])))?;
            x[j - 1].push(v);
        }
        let slot = *index.entry(unit).or_insert_with(|| {
            units.push((unit, Vec::new()));
            units.len() - 1
        });
        units[slot].1.push((week, chosen, x));
    }
    if units.is_empty() {
        return validation(format!("{}: no rows", path.display()));
    }
    units
        .into_iter()
        .map(|(id, mut obs)| {
            obs.sort_by_key(|o| o.0);
            if obs.windows(2).any(|w| w[0].0 == w[1].0) {
                return validation(format!("unit {id}: repeated week"));
            }
            let designs: Vec<Vec<Vec<f64>>> = obs.iter().map(|o| o.2.clone()).collect();
            let choices: Vec<usize> = obs.iter().map(|o| o.1).collect();
            UnitData::multinomial(id as usize, &designs, &choices, vec![1.0]).validating(&format!("unit {id}"))
        })
        .collect()
}

pub fn write_choice(path: &Path, units: &[UnitData]) -> CliResult<()> {
    let first = units.first().and_then(|u| u.design(0)).ok_or_else(|| CliError::Estimation("empty choice panel".into()))?;
    let (alts, d) = (first.len(), first[0].len());
    let mut header: Vec<String> = ["unit_id", "week", "chosen_category"].iter().map(|s| s.to_string()).collect();
    for j in 1..=alts {
        for k in 1..=d {
            header.push(format!("alt{j}_x{k}"));
        }
    }
    let mut rows = Vec::new();
    for u in units {
        let choices = u.choices().unwrap_or(&[]);
        for (t, &c) in choices.iter().enumerate() {
            let mut row = vec![u.id().to_string(), (t + 1).to_string(), c.to_string()];
            for alt in u.design(t).unwrap_or_default() {
                row.extend(alt.iter().map(|v| v.to_string()));
            }
            rows.push(row);
        }
    }
    write_rows(path, &header, &rows)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionRecord {
    pub auction_id: u64,
    pub bid_index: usize,
    pub bidder_id: u64,
    pub proxy_bid: f64,
    pub board_bid: f64,
    pub cum_bidders: usize,
    pub time_trend: f64,
    pub cluster_id: u64,
}

pub const AUCTION_HEADER: [&str; 8] =
    ["auction_id", "bid_index", "bidder_id", "proxy_bid", "board_bid", "cum_bidders", "time_trend", "cluster_id"];

/// Auction panel with the original identifiers kept alongside the dense
/// indices the library uses.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionData {
    pub panel: AuctionPanel,
    /// Original id of dense bidder i (ascending).
    pub bidder_ids: Vec<u64>,
    /// Original id of dense auction j (first-appearance order).
    pub auction_ids: Vec<u64>,
    pub clusters: Partition,
}

pub fn read_auction(path: &Path) -> CliResult<AuctionData> {
    let recs: Vec<AuctionRecord> = read_records(path)?;
    if recs.is_empty() {
        return validation(format!("{}: no rows", path.display()));
    }
    let mut bidder_ids: Vec<u64> = recs.iter().map(|r| r.bidder_id).collect();
    bidder_ids.sort_unstable();
    bidder_ids.dedup();
    let dense: BTreeMap<u64, usize> = bidder_ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let mut auction_ids = Vec::new();
    let mut groups: BTreeMap<u64, Vec<AuctionRecord>> = BTreeMap::new();
    for r in &recs {
        if !groups.contains_key(&r.auction_id) {
            auction_ids.push(r.auction_id);
        }
        groups.entry(r.auction_id).or_default().push(*r);
    }
    let mut labels = Vec::new();
    let mut cluster_of = Vec::new();
    for &a in &auction_ids {
        let g = &groups[&a];
        if g.iter().any(|r| r.cluster_id != g[0].cluster_id) {
            return validation(format!("auction {a}: rows disagree on cluster_id"));
        }
        labels.push(g[0].cluster_id);
    }
    let clusters = {
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let map: BTreeMap<u64, usize> = sorted.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        cluster_of.extend(labels.iter().map(|c| map[c]));
        Partition::new(cluster_of.clone(), sorted.len()).validating("clusters")?
    };
    let mut traces = Vec::with_capacity(auction_ids.len());
    for (j, &a) in auction_ids.iter().enumerate() {
        let mut g = groups[&a].clone();
        g.sort_by_key(|r| r.bid_index);
        if g.windows(2).any(|w| w[0].bid_index == w[1].bid_index) {
            return validation(format!("auction {a}: repeated bid_index"));
        }
        let bids = g.iter().map(|r| Bid { bidder: dense[&r.bidder_id], amount: r.proxy_bid }).collect();
        let board = g.iter().map(|r| r.board_bid).collect();
        let counts = g.iter().map(|r| r.cum_bidders).collect();
        let trend = g.iter().map(|r| r.time_trend).collect();
        traces.push(AuctionTrace::new(j, cluster_of[j], bids, board, counts, trend).validating(&format!("auction {a}"))?);
    }
    let nj = traces.len();
    let panel = AuctionPanel::with_covariates(traces, vec![vec![1.0]; bidder_ids.len()], vec![vec![1.0]; nj]).validating("auction panel")?;
    Ok(AuctionData { panel, bidder_ids, auction_ids, clusters })
}

pub fn write_auction(path: &Path, panel: &AuctionPanel) -> CliResult<()> {
    let rows: Vec<AuctionRecord> = panel
        .traces
        .iter()
        .flat_map(|tr| {
            (0..tr.len()).map(move |t| AuctionRecord {
                auction_id: tr.id as u64,
                bid_index: t,
                bidder_id: tr.bids[t].bidder as u64,
                proxy_bid: tr.bids[t].amount,
                board_bid: tr.board[t],
                cum_bidders: tr.counts[t],
                time_trend: tr.trend[t],
                cluster_id: tr.cluster as u64,
            })
        })
        .collect();
    write_records(path, &AUCTION_HEADER, &rows)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityRecord {
    pub user_id: usize,
    pub day: usize,
    pub activity_type: String,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRecord {
    pub user_id: usize,
    pub week: usize,
    /// Cumulative points through this week.
    pub reputation: f64,
    pub weekly_reputation: f64,
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadgeRecord {
    pub user_id: usize,
    pub day: usize,
    pub level: String,
}

pub const ACTIVITY_HEADER: [&str; 4] = ["user_id", "day", "activity_type", "count"];
pub const LEADERBOARD_HEADER: [&str; 5] = ["user_id", "week", "reputation", "weekly_reputation", "rank"];
pub const BADGE_HEADER: [&str; 3] = ["user_id", "day", "level"];

pub fn activity_name(k: ActivityKind) -> &'static str {
    match k {
        ActivityKind::Comment => "comment",
        ActivityKind::PostAnswered => "post_answered",
        ActivityKind::Revision => "revision",
        ActivityKind::Accepted => "accepted",
        ActivityKind::Review => "review",
        ActivityKind::PostAsked => "post_asked",
    }
}

pub fn badge_name(b: BadgeLevel) -> &'static str {
    match b {
        BadgeLevel::Gold => "gold",
        BadgeLevel::Silver => "silver",
        BadgeLevel::Bronze => "bronze",
    }
}

pub struct GamificationLogsIn {
    pub activities: Vec<ActivityEvent>,
    pub leaderboard: Vec<LeaderboardEntry>,
    pub badges: Vec<BadgeEvent>,
}

pub fn read_gamification(activity: &Path, leaderboard: &Path, badges: &Path) -> CliResult<GamificationLogsIn> {
    let mut acts = Vec::new();
    for (i, r) in read_records::<ActivityRecord>(activity)?.into_iter().enumerate() {
        let kind = ActivityKind::parse(&r.activity_type).validating(&format!("activity row {}", i + 1))?;
        acts.extend(std::iter::repeat_n(ActivityEvent { user: r.user_id, day: r.day, kind }, r.count as usize));
    }
    acts.sort_by_key(|a| (a.day, a.user, a.kind));
    let board = read_records::<LeaderboardRecord>(leaderboard)?
        .into_iter()
        .map(|r| LeaderboardEntry { user: r.user_id, week: r.week, rank: r.rank, points: r.weekly_reputation })
        .collect();
    let mut bdg = Vec::new();
    for (i, r) in read_records::<BadgeRecord>(badges)?.into_iter().enumerate() {
        let level = BadgeLevel::parse(&r.level).validating(&format!("badge row {}", i + 1))?;
        bdg.push(BadgeEvent { user: r.user_id, day: r.day, level });
    }
    Ok(GamificationLogsIn { activities: acts, leaderboard: board, badges: bdg })
}

pub fn write_gamification(dir: &Path, acts: &[ActivityEvent], board: &[LeaderboardEntry], badges: &[BadgeEvent]) -> CliResult<()> {
    let mut counts: BTreeMap<(usize, usize, ActivityKind), u32> = BTreeMap::new();
    for a in acts {
        *counts.entry((a.user, a.day, a.kind)).or_default() += 1;
    }
    let rows: Vec<ActivityRecord> = counts
        .into_iter()
        .map(|((user_id, day, k), count)| ActivityRecord { user_id, day, activity_type: activity_name(k).to_string(), count })
        .collect();
    write_records(&dir.join("activity.csv"), &ACTIVITY_HEADER, &rows)?;
    let mut sorted = board.to_vec();
    sorted.sort_by_key(|e| (e.user, e.week));
    let mut total: BTreeMap<usize, f64> = BTreeMap::new();
    let rows: Vec<LeaderboardRecord> = sorted
        .iter()
        .map(|e| {
            let t = total.entry(e.user).or_default();
            *t += e.points;
            LeaderboardRecord { user_id: e.user, week: e.week, reputation: *t, weekly_reputation: e.points, rank: e.rank }
        })
        .collect();
    write_records(&dir.join("leaderboard.csv"), &LEADERBOARD_HEADER, &rows)?;
    let rows: Vec<BadgeRecord> =
        badges.iter().map(|b| BadgeRecord { user_id: b.user, day: b.day, level: badge_name(b.level).to_string() }).collect();
    write_records(&dir.join("badges.csv"), &BADGE_HEADER, &rows)
}

// ---------------------------------------------------------------------------

/// All-numeric table with a header row.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = open(path)?;
    let header: Vec<String> = r.headers().validating("header")?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Validation(format!("{} row {}: {e}", path.display(), i + 1)))?;
        let row: Result<Vec<f64>, _> = rec.iter().map(|v| v.trim().parse::<f64>()).collect();
        match row {
            Ok(v) if v.iter().all(|x| x.is_finite()) => rows.push(v),
            _ => return validation(format!("{} row {}: every field must be a finite number", path.display(), i + 1)),
        }
    }
    if rows.is_empty() {
        return validation(format!("{}: no rows", path.display()));
    }
    Ok((header, rows))
}
