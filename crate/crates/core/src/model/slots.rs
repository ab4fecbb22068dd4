use std::fmt;

use serde::{Deserialize, Serialize};

pub const MINUTES_PER_DAY: u32 = 1440;
pub const MINUTES_PER_WEEK: u32 = 7 * MINUTES_PER_DAY;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeekPattern {
    WeekdayPeak,
    WeekdayOffPeak,
    WeekdayNight,
    WeekendOffPeak,
    WeekendNight,
    Custom,
}

/// A traffic period used for travel-time calibration, as a set of
/// half-open `[start, end)` minute-of-week intervals. Minute 0 is Monday 00:00.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlot {
    pub id: String,
    pub pattern: WeekPattern,
    pub ranges: Vec<(u32, u32)>,
}

impl TimeSlot {
    pub fn covered_minutes(&self) -> u64 {
        self.ranges.iter().map(|&(s, e)| e.saturating_sub(s) as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotDiagnostic {
    /// Minutes `[start, end)` not covered by any slot.
    Gap { start: u32, end: u32 },
    /// Minutes `[start, end)` covered by more than one interval.
    Overlap { start: u32, end: u32, slots: Vec<String> },
    /// Interval outside `[0, 10080)` or with `end <= start`.
    BadRange { slot: String, start: u32, end: u32 },
}

impl fmt::Display for SlotDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotDiagnostic::Gap { start, end } => write!(f, "gap [{start}, {end})"),
            SlotDiagnostic::Overlap { start, end, slots } => {
                write!(f, "overlap [{start}, {end}) between {}", slots.join(", "))
            }
            SlotDiagnostic::BadRange { slot, start, end } => {
                write!(f, "slot {slot}: invalid range [{start}, {end})")
            }
        }
    }
}

/// Checks that the slots partition the week `[0, 10080)` exactly once.
///
/// Never aborts: every gap, overlap, and malformed interval is reported.
pub fn validate_week_partition(slots: &[TimeSlot]) -> Result<(), Vec<SlotDiagnostic>> {
    let mut diags = Vec::new();
    // Sweep over interval endpoints; coverage counts who covers each piece.
    let mut edges: Vec<(u32, i32, usize)> = Vec::new();
    for (si, slot) in slots.iter().enumerate() {
        for &(start, end) in &slot.ranges {
            if end <= start || end > MINUTES_PER_WEEK {
                diags.push(SlotDiagnostic::BadRange {
                    slot: slot.id.clone(),
                    start,
                    end,
                });
                continue;
            }
            edges.push((start, 1, si));
            edges.push((end, -1, si));
        }
    }
    // Closings sort before openings at the same minute.
    edges.sort_by_key(|&(t, delta, si)| (t, delta, si));
    let mut active: Vec<usize> = Vec::new();
    let mut cursor = 0u32;
    let mut i = 0;
    let push_piece = |diags: &mut Vec<SlotDiagnostic>, active: &[usize], start: u32, end: u32| {
        if start >= end {
            return;
        }
        match active.len() {
            0 => merge_gap(diags, start, end),
            1 => {}
            _ => {
                let mut names: Vec<String> = active.iter().map(|&s| slots[s].id.clone()).collect();
                names.sort();
                names.dedup();
                merge_overlap(diags, start, end, names);
            }
        }
    };
    while i < edges.len() {
        let t = edges[i].0;
        push_piece(&mut diags, &active, cursor, t);
        while i < edges.len() && edges[i].0 == t {
            let (_, delta, si) = edges[i];
            if delta > 0 {
                active.push(si);
            } else if let Some(pos) = active.iter().position(|&a| a == si) {
                active.remove(pos);
            }
            i += 1;
        }
        cursor = t;
    }
    push_piece(&mut diags, &active, cursor, MINUTES_PER_WEEK);
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

fn merge_gap(diags: &mut Vec<SlotDiagnostic>, start: u32, end: u32) {
    if let Some(SlotDiagnostic::Gap { end: prev_end, .. }) = diags.last_mut() {
        if *prev_end == start {
            *prev_end = end;
            return;
        }
    }
    diags.push(SlotDiagnostic::Gap { start, end });
}

fn merge_overlap(diags: &mut Vec<SlotDiagnostic>, start: u32, end: u32, names: Vec<String>) {
    if let Some(SlotDiagnostic::Overlap {
        end: prev_end, slots, ..
    }) = diags.last_mut()
    {
        if *prev_end == start && *slots == names {
            *prev_end = end;
            return;
        }
    }
    diags.push(SlotDiagnostic::Overlap {
        start,
        end,
        slots: names,
    });
}

/// Minute-of-week lookup table for a validated partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotCalendar {
    ids: Vec<String>,
    by_minute: Vec<u16>,
    /// Minute of week at simulation time 0.
    offset_minutes: u32,
}

impl SlotCalendar {
    /// `slots` must already pass [`validate_week_partition`].
    pub fn new(slots: &[TimeSlot], offset_minutes: u32) -> Self {
        let mut by_minute = vec![u16::MAX; MINUTES_PER_WEEK as usize];
        for (si, slot) in slots.iter().enumerate() {
            for &(s, e) in &slot.ranges {
                for m in s..e.min(MINUTES_PER_WEEK) {
                    by_minute[m as usize] = si as u16;
                }
            }
        }
        SlotCalendar {
            ids: slots.iter().map(|s| s.id.clone()).collect(),
            by_minute,
            offset_minutes: offset_minutes % MINUTES_PER_WEEK,
        }
    }

    pub fn slot_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    pub fn minute_of_week(&self, sim_minute: f64) -> f64 {
        (sim_minute + self.offset_minutes as f64).rem_euclid(MINUTES_PER_WEEK as f64)
    }

    /// Slot index in force at `sim_minute`.
    pub fn slot_at(&self, sim_minute: f64) -> usize {
        let m = (self.minute_of_week(sim_minute).floor() as usize).min(MINUTES_PER_WEEK as usize - 1);
        self.by_minute[m] as usize
    }

    pub fn offset_minutes(&self) -> u32 {
        self.offset_minutes
    }
}

fn day_ranges(days: &[u32], pieces: &[(u32, u32)]) -> Vec<(u32, u32)> {
    let mut out: Vec<(u32, u32)> = Vec::new();
    for &d in days {
        for &(s, e) in pieces {
            let (s, e) = (d * MINUTES_PER_DAY + s, d * MINUTES_PER_DAY + e);
            match out.last_mut() {
                Some(last) if last.1 == s => last.1 = e,
                _ => out.push((s, e)),
            }
        }
    }
    out
}

/// The five operational periods used for travel-time correction: weekday
/// peak (07-09, 17-19), weekday off-peak (06-07, 09-17, 19-23), weekday night
/// (23-06), weekend off-peak (06-23) and weekend night (23-06). Each minute
/// is classified by its own calendar day.
pub fn five_period_scheme() -> Vec<TimeSlot> {
    const H: u32 = 60;
    let weekdays = [0, 1, 2, 3, 4];
    let weekend = [5, 6];
    let night = [(0, 6 * H), (23 * H, 24 * H)];
    vec![
        TimeSlot {
            id: "weekday_peak".into(),
            pattern: WeekPattern::WeekdayPeak,
            ranges: day_ranges(&weekdays, &[(7 * H, 9 * H), (17 * H, 19 * H)]),
        },
        TimeSlot {
            id: "weekday_off_peak".into(),
            pattern: WeekPattern::WeekdayOffPeak,
            ranges: day_ranges(&weekdays, &[(6 * H, 7 * H), (9 * H, 17 * H), (19 * H, 23 * H)]),
        },
        TimeSlot {
            id: "weekday_night".into(),
            pattern: WeekPattern::WeekdayNight,
            ranges: day_ranges(&weekdays, &night),
        },
        TimeSlot {
            id: "weekend_off_peak".into(),
            pattern: WeekPattern::WeekendOffPeak,
            ranges: day_ranges(&weekend, &[(6 * H, 23 * H)]),
        },
        TimeSlot {
            id: "weekend_night".into(),
            pattern: WeekPattern::WeekendNight,
            ranges: day_ranges(&weekend, &night),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slot(id: &str, ranges: &[(u32, u32)]) -> TimeSlot {
        TimeSlot {
            id: id.into(),
            pattern: WeekPattern::Custom,
            ranges: ranges.to_vec(),
        }
    }

    #[test]
    fn five_period_scheme_partitions_the_week() {
        let slots = five_period_scheme();
        assert_eq!(slots.len(), 5);
        assert_eq!(validate_week_partition(&slots), Ok(()));
        let total: u64 = slots.iter().map(TimeSlot::covered_minutes).sum();
        assert_eq!(total, MINUTES_PER_WEEK as u64);
    }

    #[test]
    fn overlap_is_reported() {
        let slots = vec![slot("a", &[(0, 10080)]), slot("b", &[(0, 1)])];
        let diags = validate_week_partition(&slots).unwrap_err();
        assert_eq!(
            diags,
            vec![SlotDiagnostic::Overlap {
                start: 0,
                end: 1,
                slots: vec!["a".into(), "b".into()]
            }]
        );
    }

    #[test]
    fn weekday_only_leaves_a_gap() {
        let slots = vec![slot("weekdays", &[(0, 5 * 1440)])];
        let diags = validate_week_partition(&slots).unwrap_err();
        assert_eq!(
            diags,
            vec![SlotDiagnostic::Gap {
                start: 7200,
                end: 10080
            }]
        );
    }

    #[test]
    fn malformed_range_reported() {
        let slots = vec![slot("a", &[(0, 10080), (50, 40)])];
        let diags = validate_week_partition(&slots).unwrap_err();
        assert!(matches!(diags[0], SlotDiagnostic::BadRange { .. }));
    }

    #[test]
    fn calendar_lookup_uses_offset() {
        let slots = five_period_scheme();
        let cal = SlotCalendar::new(&slots, 0);
        // Monday 07:30.
        assert_eq!(cal.slot_ids()[cal.slot_at(450.0)], "weekday_peak");
        // Saturday 12:00.
        assert_eq!(cal.slot_ids()[cal.slot_at(5.0 * 1440.0 + 720.0)], "weekend_off_peak");
        // Sim time 0 on a Sunday: 02:00 is weekend night.
        let sunday = SlotCalendar::new(&slots, 6 * 1440);
        assert_eq!(sunday.slot_ids()[sunday.slot_at(120.0)], "weekend_night");
        // Wraps after a week.
        assert_eq!(cal.slot_at(450.0), cal.slot_at(450.0 + 10080.0 * 3.0));
    }

    proptest! {
        /// Random cut points define a partition; the check accepts exactly
        /// those sets whose covered length is 10080 with no overlap.
        #[test]
        fn accepts_iff_exact_cover(cuts in prop::collection::btree_set(1u32..10080, 0..12),
                                   drop in prop::option::of(0usize..13),
                                   dup in prop::option::of(0usize..13)) {
            let mut points: Vec<u32> = vec![0];
            points.extend(cuts.iter().copied());
            points.push(10080);
            let mut slots: Vec<TimeSlot> = points
                .windows(2)
                .enumerate()
                .map(|(i, w)| slot(&format!("s{i}"), &[(w[0], w[1])]))
                .collect();
            let n = slots.len();
            let mut expect_ok = true;
            if let Some(d) = dup.filter(|&d| d < n) {
                let copy = slots[d].clone();
                slots.push(TimeSlot { id: "dup".into(), ..copy });
                expect_ok = false;
            }
            if let Some(d) = drop.filter(|&d| d < n) {
                slots.remove(d);
                if dup.map(|x| x == d).unwrap_or(false) {
                    // The duplicate replaces the dropped slot exactly.
                    expect_ok = true;
                } else {
                    expect_ok = false;
                }
            }
            let covered: u64 = slots.iter().map(TimeSlot::covered_minutes).sum();
            let result = validate_week_partition(&slots);
            prop_assert_eq!(result.is_ok(), expect_ok);
            if result.is_ok() {
                prop_assert_eq!(covered, 10080);
            }
        }
    }
}
