use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    CallArrival,
    TriageDone,
    DispatchDecision,
    ArriveScene,
    SceneDone,
    ArriveEd,
    OffloadDone,
    ArriveBase,
    SanitizationDone,
    ShiftStart,
    ShiftEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::CallArrival => "call_arrival",
            EventKind::TriageDone => "triage_done",
            EventKind::DispatchDecision => "dispatch_decision",
            EventKind::ArriveScene => "arrive_scene",
            EventKind::SceneDone => "scene_done",
            EventKind::ArriveEd => "arrive_ed",
            EventKind::OffloadDone => "offload_done",
            EventKind::ArriveBase => "arrive_base",
            EventKind::SanitizationDone => "sanitization_done",
            EventKind::ShiftStart => "shift_start",
            EventKind::ShiftEnd => "shift_end",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub call: Option<u64>,
    pub ambulance: Option<usize>,
    /// Generation zone, for call arrivals.
    pub zone: Option<usize>,
    /// Call arrivals that schedule the zone's next arrival when they fire.
    pub chained: bool,
}

struct Entry(Event);

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Reversed so the max-heap pops the earliest (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .total_cmp(&self.0.time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Future event list popping in `(time, seq)` order; `seq` is assigned when
/// an event is scheduled.
#[derive(Default)]
pub struct EventCalendar {
    heap: BinaryHeap<Entry>,
    next_seq: u64,
}

impl EventCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(
        &mut self,
        time: f64,
        kind: EventKind,
        call: Option<u64>,
        ambulance: Option<usize>,
        zone: Option<usize>,
        chained: bool,
    ) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event {
            time,
            seq,
            kind,
            call,
            ambulance,
            zone,
            chained,
        }));
        seq
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
