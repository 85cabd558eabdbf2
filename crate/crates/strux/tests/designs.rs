use strux::designs::*;

fn units(n: usize) -> Vec<UnitInfo> {
    (0..n).map(|i| UnitInfo { locale: i % 2, factors: vec![0.1 * i as f64, -0.2, 0.3], tenure: 30.0 + i as f64 }).collect()
}

fn signals(j: usize, weeks: usize) -> InfluenceSignals {
    let series = |scale: f64| -> Vec<Vec<f64>> { (0..j).map(|c| (0..weeks).map(|w| scale * (c + 1) as f64 * (w + 1) as f64).collect()).collect() };
    InfluenceSignals {
        local_imitators: vec![series(1.0), series(2.0)],
        global_imitators: series(10.0),
        local_adopters: vec![series(3.0), series(4.0)],
        global_adopters: series(20.0),
    }
}

#[test]
fn download_history_increments_after_each_download_week() {
    let ev = [DownloadEvent { unit: 0, week: 2, category: 1 }, DownloadEvent { unit: 0, week: 5, category: 3 }];
    let p = build_app_panel(&ev, &units(1), 6, 3, &signals(3, 6), InfluenceSource::GlobalImitators).unwrap();
    let s: Vec<u32> = p.rows.iter().map(|r| r.s).collect();
    assert_eq!(s, vec![0, 0, 1, 1, 1, 2]);
    let chosen: Vec<usize> = p.rows.iter().map(|r| r.chosen).collect();
    assert_eq!(chosen, vec![0, 1, 0, 0, 3, 0]);
}

#[test]
fn no_events_gives_zero_states() {
    let p = build_app_panel(&[], &units(3), 4, 2, &signals(2, 4), InfluenceSource::LocalImitators).unwrap();
    assert_eq!(p.rows.len(), 12);
    assert!(p.rows.iter().all(|r| r.s == 0 && r.chosen == 0));
}

#[test]
fn influence_is_lagged_one_week() {
    let sig = signals(2, 5);
    let p = build_app_panel(&[], &units(2), 5, 2, &sig, InfluenceSource::LocalImitators).unwrap();
    let r = &p.unit_rows(1)[3];
    assert_eq!(r.week, 4);
    // Locale 1, week 3 values.
    assert_eq!(r.influence.as_deref().unwrap(), &[sig.local_imitators[1][0][2], sig.local_imitators[1][1][2]]);
    assert_eq!(p.unit_rows(0)[0].influence.as_deref().unwrap(), &[0.0, 0.0]);
}

#[test]
fn none_source_drops_exactly_one_column() {
    let ev = [DownloadEvent { unit: 1, week: 1, category: 2 }];
    let sig = signals(2, 4);
    let with = build_app_panel(&ev, &units(2), 4, 2, &sig, InfluenceSource::GlobalAdopters).unwrap();
    let without = build_app_panel(&ev, &units(2), 4, 2, &InfluenceSignals::default(), InfluenceSource::None).unwrap();
    assert_eq!(with.design_dim(), without.design_dim() + 1);
    assert_eq!(with.design_dim(), 2 + 5);
    for (a, b) in with.rows.iter().zip(&without.rows) {
        for j in 1..=2 {
            let mut x = a.design(j, 2);
            x.remove(3);
            assert_eq!(x, b.design(j, 2));
        }
    }
}

#[test]
fn unknown_category_names_the_event() {
    let ev = [DownloadEvent { unit: 0, week: 1, category: 1 }, DownloadEvent { unit: 0, week: 2, category: 9 }];
    let err = build_app_panel(&ev, &units(1), 3, 3, &InfluenceSignals::default(), InfluenceSource::None).unwrap_err();
    assert!(err.to_string().contains("event 1"), "{err}");
}

#[test]
fn unsorted_events_rejected() {
    let ev = [DownloadEvent { unit: 0, week: 3, category: 1 }, DownloadEvent { unit: 0, week: 2, category: 1 }];
    assert!(build_app_panel(&ev, &units(1), 3, 1, &InfluenceSignals::default(), InfluenceSource::None).is_err());
}

#[test]
fn short_signal_rejected() {
    let sig = signals(2, 2);
    assert!(build_app_panel(&[], &units(1), 5, 2, &sig, InfluenceSource::GlobalImitators).is_err());
}

fn gam_cfg(days: usize) -> GamificationConfig {
    GamificationConfig { days, ..GamificationConfig::default() }
}

#[test]
fn badge_enters_next_day_and_accumulates() {
    let b = [BadgeEvent { user: 4, day: 9, level: BadgeLevel::Silver }];
    let p = build_gamification_panel(&[], &[], &b, &gam_cfg(14)).unwrap();
    let rows = p.user_rows(4);
    assert_eq!(rows[9].bdg, [0, 0, 0]);
    assert_eq!(rows[10].bdg, [0, 1, 0]);
    assert_eq!(rows[11].bdg, [0, 0, 0]);
    for r in rows {
        assert_eq!(r.cbdg[1], u32::from(r.day >= 10));
    }
}

#[test]
fn rank_change_uses_the_two_previous_weeks() {
    let lb = [
        LeaderboardEntry { user: 1, week: 3, rank: 120, points: 300.0 },
        LeaderboardEntry { user: 1, week: 4, rank: 100, points: 250.0 },
    ];
    let p = build_gamification_panel(&[], &lb, &[], &gam_cfg(42)).unwrap();
    let rows = p.user_rows(1);
    for r in rows.iter().filter(|r| r.week == 5) {
        assert_eq!(r.drnk, -20.0);
        assert_eq!(r.rnk, 100.0);
        assert_eq!(r.rep, 250.0);
        assert_eq!(r.crep, 550.0);
        assert!(!r.offboard);
    }
    // Week 4 rows see week 3 only: on the board, no change available.
    let r4 = rows.iter().find(|r| r.week == 4).unwrap();
    assert_eq!((r4.rnk, r4.drnk, r4.offboard), (120.0, 0.0, false));
    let r2 = rows.iter().find(|r| r.week == 2).unwrap();
    assert_eq!((r2.rnk, r2.offboard), (0.0, true));
}

#[test]
fn zero_activity_user_has_zero_states() {
    let lb = [LeaderboardEntry { user: 7, week: 5, rank: 10, points: 1.0 }];
    let a = [ActivityEvent { user: 2, day: 3, kind: ActivityKind::Comment }];
    let p = build_gamification_panel(&a, &lb, &[], &gam_cfg(42)).unwrap();
    for r in p.user_rows(7) {
        assert_eq!((r.contributions, r.cont_prev, r.rcv_prev, r.cbdg), (0, 0, 0, [0; 3]));
        // After demeaning the only offset left is −mean/100.
        assert_eq!(p.design(r)[1], -p.cont_mean / 100.0);
    }
}

fn busy_logs() -> (Vec<ActivityEvent>, Vec<LeaderboardEntry>, Vec<BadgeEvent>) {
    let kinds = [ActivityKind::Comment, ActivityKind::Accepted, ActivityKind::Revision, ActivityKind::Review, ActivityKind::PostAnswered, ActivityKind::PostAsked];
    let acts: Vec<ActivityEvent> = (0..200).map(|i| ActivityEvent { user: i % 5, day: (i * 7) % 28, kind: kinds[i % 6] }).collect();
    let lb: Vec<LeaderboardEntry> = (0..4).flat_map(|w| (0..3).map(move |u| LeaderboardEntry { user: u, week: w, rank: (10 + u * 3 + w) as u32, points: 10.0 * (u + w) as f64 })).collect();
    let badges: Vec<BadgeEvent> = (0..20).map(|i| BadgeEvent { user: i % 4, day: (i * 3) % 28, level: [BadgeLevel::Gold, BadgeLevel::Silver, BadgeLevel::Bronze][i % 3] }).collect();
    (acts, lb, badges)
}

#[test]
fn daily_counts_sum_to_contribution_events() {
    let (acts, lb, badges) = busy_logs();
    let p = build_gamification_panel(&acts, &lb, &badges, &gam_cfg(28)).unwrap();
    let total: u32 = p.rows.iter().map(|r| r.contributions).sum();
    assert_eq!(total as usize, acts.iter().filter(|a| a.kind.is_contribution()).count());
    assert!(p.rows.iter().all(|r| p.successes(r) <= 1));
    // Cumulative states are non-decreasing per user.
    for &u in &p.users {
        let rows = p.user_rows(u);
        assert!(rows.windows(2).all(|w| w[1].cont_prev >= w[0].cont_prev && w[1].rcv_prev >= w[0].rcv_prev && w[1].crep >= w[0].crep));
    }
}

#[test]
fn rebuild_is_bit_identical() {
    let (acts, lb, badges) = busy_logs();
    let a = build_gamification_panel(&acts, &lb, &badges, &gam_cfg(28)).unwrap();
    let b = build_gamification_panel(&acts, &lb, &badges, &gam_cfg(28)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn lag_audit_rows_ignore_same_day_and_later_events() {
    // Adding events on day d (and leaderboard week w) must not change any
    // state of rows on or before d (weeks on or before w).
    let (acts, lb, badges) = busy_logs();
    let base = build_gamification_panel(&acts, &lb, &badges, &gam_cfg(28)).unwrap();
    for d in [0usize, 6, 13, 20, 27] {
        let mut a2 = acts.clone();
        a2.push(ActivityEvent { user: 0, day: d, kind: ActivityKind::Revision });
        a2.push(ActivityEvent { user: 0, day: d, kind: ActivityKind::Review });
        let mut b2 = badges.clone();
        b2.push(BadgeEvent { user: 0, day: d, level: BadgeLevel::Gold });
        let w = d / 7;
        let lb2: Vec<LeaderboardEntry> = lb.iter().map(|e| if e.user == 0 && e.week == w { LeaderboardEntry { rank: 99, points: 999.0, ..*e } } else { *e }).collect();
        let alt = build_gamification_panel(&a2, &lb2, &b2, &gam_cfg(28)).unwrap();
        for (x, y) in base.user_rows(0).iter().zip(alt.user_rows(0)) {
            if x.day <= d {
                let mut y = y.clone();
                if y.day == d {
                    y.contributions = x.contributions;
                }
                if x.week <= w {
                    assert_eq!(x, &y, "day {d}");
                } else {
                    assert_eq!((x.cont_prev, x.bdg), (y.cont_prev, y.bdg));
                }
            }
        }
    }
}

#[test]
fn app_panel_lag_audit() {
    let ev = [DownloadEvent { unit: 0, week: 2, category: 1 }];
    let sig = signals(2, 6);
    let base = build_app_panel(&ev, &units(1), 6, 2, &sig, InfluenceSource::GlobalImitators).unwrap();
    let mut sig2 = sig.clone();
    for c in &mut sig2.global_imitators {
        c[3] += 100.0;
    }
    let ev2 = [ev[0], DownloadEvent { unit: 0, week: 4, category: 2 }];
    let alt = build_app_panel(&ev2, &units(1), 6, 2, &sig2, InfluenceSource::GlobalImitators).unwrap();
    for (x, y) in base.rows.iter().zip(&alt.rows).take(4) {
        assert_eq!((x.s, &x.influence), (y.s, &y.influence));
    }
    assert_ne!(base.rows[4].s, alt.rows[4].s);
}

#[test]
fn bad_logs_rejected() {
    let lb = [LeaderboardEntry { user: 1, week: 0, rank: 1, points: 1.0 }, LeaderboardEntry { user: 1, week: 0, rank: 2, points: 1.0 }];
    assert!(build_gamification_panel(&[], &lb, &[], &gam_cfg(7)).is_err());
    let a = [ActivityEvent { user: 0, day: 7, kind: ActivityKind::Comment }];
    assert!(build_gamification_panel(&a, &[], &[], &gam_cfg(7)).is_err());
    assert!(ActivityKind::parse("upvote").is_err());
    assert_eq!(ActivityKind::parse("post_asked").unwrap(), ActivityKind::PostAsked);
}
