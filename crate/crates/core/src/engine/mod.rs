//! Event calendar and mission lifecycle: triage, dispatch with threshold
//! queueing, travel, on-scene resolution, ED selection, offload, sanitization
//! and direct redispatch.

mod calendar;
mod queue;
mod record;

use std::fmt;

pub use calendar::{Event, EventCalendar, EventKind};
pub use queue::{DispatchQueue, QueueKey};
pub use record::{write_records_csv, EventLog, EventLogEntry, MissionRecord, EVENT_LOG_HEADER, RECORDS_HEADER};

use crate::calibration::TravelLeg;
use crate::demand::{next_arrival, spawn_call, CallStatus, EmergencyCall};
use crate::model::{
    Ambulance, PointIdx, PointKind, Schedule, SeverityTag, SimulationInstance, UrgencyClass, MINUTES_PER_DAY,
};
use crate::stochastic::{Phase, RngStream};

/// Resource state of an ambulance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AmbulanceState {
    IdleAtBase,
    Dispatched,
    OnScene,
    ToEd,
    AtEd,
    Returning,
    Sanitizing,
    OffShift,
}

impl AmbulanceState {
    /// Legal lifecycle transitions.
    pub fn can_become(self, next: AmbulanceState) -> bool {
        use AmbulanceState::*;
        matches!(
            (self, next),
            (IdleAtBase, Dispatched)
                | (IdleAtBase, OffShift)
                | (OffShift, IdleAtBase)
                | (Dispatched, OnScene)
                | (Dispatched, Returning)
                | (Dispatched, Dispatched)
                | (OnScene, ToEd)
                | (OnScene, Returning)
                | (OnScene, Dispatched)
                | (ToEd, AtEd)
                | (AtEd, Returning)
                | (AtEd, Dispatched)
                | (Returning, IdleAtBase)
                | (Returning, Sanitizing)
                | (Returning, OffShift)
                | (Sanitizing, IdleAtBase)
                | (Sanitizing, OffShift)
        )
    }
}

/// Where the serving ambulance was when it was assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchOrigin {
    Base,
    /// Direct redispatch at the end of a previous mission.
    Field,
}

impl DispatchOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            DispatchOrigin::Base => "base",
            DispatchOrigin::Field => "field",
        }
    }
}

impl fmt::Display for DispatchOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A call injected at a fixed time, in addition to the zones' own arrivals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedCall {
    pub time: f64,
    pub zone: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep the event log entries (the digest is always computed).
    pub keep_events: bool,
    pub check_invariants: bool,
    pub scripted_calls: Vec<ScriptedCall>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvariantReport {
    pub events_checked: u64,
    pub violations: Vec<String>,
}

impl InvariantReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationOutput {
    pub replication_index: u32,
    pub records: Vec<MissionRecord>,
    pub events: EventLog,
    pub invariants: Option<InvariantReport>,
}

/// Per-call draws taken up front from the call's own stream, in a fixed
/// order, so every scenario sees the same values for the same call.
#[derive(Debug, Clone, Copy)]
struct CallDraws {
    triage: f64,
    assignment: f64,
    preparation: f64,
    cancelled: bool,
    onscene_tag: SeverityTag,
    transport: bool,
    treatment: f64,
    load: f64,
    discharge: f64,
    sanitize: bool,
    sanitization: f64,
}

struct CallState {
    call: EmergencyCall,
    draws: CallDraws,
    stream: RngStream,
    threshold: f64,
    ambulance: Option<usize>,
    origin: Option<DispatchOrigin>,
    ed: Option<usize>,
}

impl CallState {
    fn key(&self) -> QueueKey {
        QueueKey {
            tag: self.call.triage_tag,
            arrival: self.call.arrival_minute,
            call_id: self.call.call_id,
        }
    }
}

struct Unit {
    def: Ambulance,
    state: AmbulanceState,
    on_shift: bool,
    position: PointIdx,
    current_call: Option<u64>,
    sanitize_for: Option<f64>,
}

struct Sim<'a> {
    inst: &'a SimulationInstance,
    rep: u32,
    now: f64,
    calendar: EventCalendar,
    queue: DispatchQueue,
    calls: Vec<CallState>,
    units: Vec<Unit>,
    arrival_streams: Vec<RngStream>,
    attribute_streams: Vec<RngStream>,
    // [urgency] largest base-to-scene factor over slots.
    max_alpha: [f64; 2],
    log: EventLog,
    check: Option<InvariantReport>,
    in_post_mission: Option<usize>,
}

/// Runs one replication over `[0, horizon)`.
pub fn run_replication(inst: &SimulationInstance, replication_index: u32, options: &RunOptions) -> ReplicationOutput {
    let mut sim = Sim::new(inst, replication_index, options);
    sim.run();
    sim.finish(replication_index)
}

fn minute_of_day(inst: &SimulationInstance, t: f64) -> f64 {
    (t + inst.week_start_offset_minutes as f64).rem_euclid(MINUTES_PER_DAY as f64)
}

impl<'a> Sim<'a> {
    fn new(inst: &'a SimulationInstance, rep: u32, options: &RunOptions) -> Self {
        let seed = inst.base_seed;
        let zones = &inst.demand.zones;
        let mut max_alpha = [0.0f64; 2];
        for u in UrgencyClass::ALL {
            for s in 0..inst.network.time_slots.len() {
                max_alpha[u.index()] =
                    max_alpha[u.index()].max(inst.network.travel.alpha(TravelLeg::BaseToScene, s, u));
            }
        }
        let mut sim = Sim {
            inst,
            rep,
            now: 0.0,
            calendar: EventCalendar::new(),
            queue: DispatchQueue::new(),
            calls: Vec::new(),
            units: Vec::new(),
            arrival_streams: zones
                .iter()
                .map(|z| RngStream::new(seed, rep, &format!("arrivals/{}", z.id)))
                .collect(),
            attribute_streams: zones
                .iter()
                .map(|z| RngStream::new(seed, rep, &format!("calls/{}", z.id)))
                .collect(),
            max_alpha,
            log: EventLog::new(options.keep_events),
            check: options.check_invariants.then(InvariantReport::default),
            in_post_mission: None,
        };
        let md0 = minute_of_day(inst, 0.0);
        for (i, def) in inst.fleet().into_iter().enumerate() {
            let on_shift = def.schedule.on_shift_at(md0);
            if let Schedule::H12 { on_minute, off_minute } = def.schedule {
                for (minute, kind) in [(on_minute, EventKind::ShiftStart), (off_minute, EventKind::ShiftEnd)] {
                    let mut first = (minute as f64 - md0).rem_euclid(MINUTES_PER_DAY as f64);
                    if first == 0.0 {
                        first = MINUTES_PER_DAY as f64;
                    }
                    sim.schedule(first, kind, None, Some(i));
                }
            }
            sim.units.push(Unit {
                position: def.home_base,
                state: if on_shift {
                    AmbulanceState::IdleAtBase
                } else {
                    AmbulanceState::OffShift
                },
                on_shift,
                def,
                current_call: None,
                sanitize_for: None,
            });
        }
        for sc in &options.scripted_calls {
            if sc.time < inst.horizon_minutes {
                sim.calendar
                    .schedule(sc.time, EventKind::CallArrival, None, None, Some(sc.zone), false);
            }
        }
        for z in 0..zones.len() {
            let t = next_arrival(
                &zones[z],
                0.0,
                &inst.demand.scheme,
                inst.demand.boundary_policy,
                &mut sim.arrival_streams[z],
            );
            if t < inst.horizon_minutes {
                sim.calendar
                    .schedule(t, EventKind::CallArrival, None, None, Some(z), true);
            }
        }
        sim
    }

    fn schedule(&mut self, time: f64, kind: EventKind, call: Option<u64>, amb: Option<usize>) {
        if time < self.inst.horizon_minutes {
            self.calendar.schedule(time, kind, call, amb, None, false);
        }
    }

    fn violation(&mut self, msg: String) {
        if let Some(r) = &mut self.check {
            r.violations.push(msg);
        }
    }

    fn set_state(&mut self, amb: usize, next: AmbulanceState) {
        let cur = self.units[amb].state;
        if self.check.is_some() && !cur.can_become(next) {
            let msg = format!(
                "t={:.6} ambulance {}: illegal transition {:?} -> {:?}",
                self.now, self.units[amb].def.id, cur, next
            );
            self.violation(msg);
        }
        self.units[amb].state = next;
    }

    fn slot(&self, t: f64) -> usize {
        self.inst.network.calendar.slot_at(t)
    }

    fn leg_from(&self, position: PointIdx) -> TravelLeg {
        match self.inst.network.kind(position) {
            PointKind::Base => TravelLeg::BaseToScene,
            PointKind::DemandSquare => TravelLeg::SceneToScene,
            PointKind::EmergencyDept => TravelLeg::EdToScene,
        }
    }

    /// Calibrated estimate (no noise) from `position` to the call's scene.
    fn estimate_to(&self, position: PointIdx, call: usize) -> f64 {
        let c = &self.calls[call].call;
        self.inst
            .network
            .travel
            .estimate(
                position,
                c.scene,
                self.leg_from(position),
                self.slot(self.now),
                c.triage_tag.urgency(),
            )
            .expect("travel pairs checked at load")
    }

    fn run(&mut self) {
        let mut last_time = f64::NEG_INFINITY;
        while let Some(ev) = self.calendar.pop() {
            if ev.time >= self.inst.horizon_minutes {
                break;
            }
            if self.check.is_some() && ev.time < last_time {
                self.violation(format!("calendar went back in time at seq {}", ev.seq));
            }
            last_time = ev.time;
            self.now = ev.time;
            if let Some(r) = &mut self.check {
                r.events_checked += 1;
            }
            self.handle(ev);
        }
    }

    fn log_event(&mut self, ev: &Event, call: Option<u64>, amb: Option<usize>) {
        let amb_id = amb.map(|a| self.units[a].def.id.as_str());
        self.log.push(ev.time, ev.seq, ev.kind, call, amb_id);
    }

    fn handle(&mut self, ev: Event) {
        match ev.kind {
            EventKind::CallArrival => self.on_call_arrival(ev),
            EventKind::TriageDone => {
                let c = ev.call.expect("call") as usize;
                self.log_event(&ev, ev.call, None);
                self.calls[c].call.times.triage_done = Some(self.now);
                let t = self.now + self.calls[c].draws.assignment;
                self.schedule(t, EventKind::DispatchDecision, ev.call, None);
            }
            EventKind::DispatchDecision => self.on_dispatch_decision(ev),
            EventKind::ArriveScene => self.on_arrive_scene(ev),
            EventKind::SceneDone => self.on_scene_done(ev),
            EventKind::ArriveEd => self.on_arrive_ed(ev),
            EventKind::OffloadDone => {
                let c = ev.call.expect("call") as usize;
                let a = ev.ambulance.expect("ambulance");
                self.log_event(&ev, ev.call, Some(a));
                self.calls[c].call.status = CallStatus::Transported;
                self.calls[c].call.times.mission_end = Some(self.now);
                self.post_mission(a, c);
            }
            EventKind::ArriveBase => {
                let a = ev.ambulance.expect("ambulance");
                self.log_event(&ev, None, Some(a));
                self.units[a].position = self.units[a].def.home_base;
                if let Some(d) = self.units[a].sanitize_for.take() {
                    self.set_state(a, AmbulanceState::Sanitizing);
                    self.schedule(self.now + d, EventKind::SanitizationDone, None, Some(a));
                } else {
                    self.become_available(a);
                }
            }
            EventKind::SanitizationDone => {
                let a = ev.ambulance.expect("ambulance");
                self.log_event(&ev, None, Some(a));
                self.become_available(a);
            }
            EventKind::ShiftStart => {
                let a = ev.ambulance.expect("ambulance");
                self.log_event(&ev, None, Some(a));
                self.units[a].on_shift = true;
                self.schedule(self.now + MINUTES_PER_DAY as f64, EventKind::ShiftStart, None, Some(a));
                if self.units[a].state == AmbulanceState::OffShift {
                    self.set_state(a, AmbulanceState::IdleAtBase);
                    self.rescan_queue();
                }
            }
            EventKind::ShiftEnd => {
                let a = ev.ambulance.expect("ambulance");
                self.log_event(&ev, None, Some(a));
                self.units[a].on_shift = false;
                self.schedule(self.now + MINUTES_PER_DAY as f64, EventKind::ShiftEnd, None, Some(a));
                if self.units[a].state == AmbulanceState::IdleAtBase {
                    self.set_state(a, AmbulanceState::OffShift);
                }
            }
        }
    }

    fn on_call_arrival(&mut self, ev: Event) {
        let z = ev.zone.expect("zone");
        let id = self.calls.len() as u64;
        let inst = self.inst;
        let call = spawn_call(&inst.demand, z, id, self.now, &mut self.attribute_streams[z]);
        let mut stream = RngStream::new(inst.base_seed, self.rep, &format!("call/{id}"));
        let draws = draw_call(inst, call.triage_tag, &mut stream);
        let threshold = self.effective_threshold(&call);
        self.calls.push(CallState {
            call,
            draws,
            stream,
            threshold,
            ambulance: None,
            origin: None,
            ed: None,
        });
        self.log_event(&ev, Some(id), None);
        self.schedule(self.now + draws.triage, EventKind::TriageDone, Some(id), None);
        if ev.chained {
            let t = next_arrival(
                &inst.demand.zones[z],
                self.now,
                &inst.demand.scheme,
                inst.demand.boundary_policy,
                &mut self.arrival_streams[z],
            );
            if t < inst.horizon_minutes {
                self.calendar
                    .schedule(t, EventKind::CallArrival, None, None, Some(z), true);
            }
        }
    }

    /// The scenario threshold, raised where needed so the nearest home base
    /// of the fleet can always reach the scene.
    fn effective_threshold(&self, call: &EmergencyCall) -> f64 {
        let u = call.triage_tag.urgency();
        let nearest = self
            .units
            .iter()
            .filter_map(|unit| {
                self.inst
                    .network
                    .travel
                    .nominal(unit.def.home_base, call.scene, TravelLeg::BaseToScene)
            })
            .fold(f64::INFINITY, f64::min);
        let floor = nearest * self.max_alpha[u.index()];
        self.inst
            .scenario
            .threshold(u)
            .max(if floor.is_finite() { floor } else { 0.0 })
    }

    /// Nearest idle, on-shift ambulance within the call's threshold.
    fn select_ambulance(&self, c: usize) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, u) in self.units.iter().enumerate() {
            if u.state != AmbulanceState::IdleAtBase || !u.on_shift {
                continue;
            }
            let t = self.estimate_to(u.position, c);
            if best.map(|(bt, _)| t < bt).unwrap_or(true) {
                best = Some((t, i));
            }
        }
        best.filter(|&(t, _)| t <= self.calls[c].threshold).map(|(_, i)| i)
    }

    fn reserve(&mut self, a: usize, c: usize, origin: DispatchOrigin) {
        if self.check.is_some() {
            let u = &self.units[a];
            let mut msgs = Vec::new();
            if let Some(other) = u.current_call {
                msgs.push(format!(
                    "t={:.6} ambulance {} preempted: call {} assigned while serving call {}",
                    self.now, u.def.id, c, other
                ));
            }
            let legal = match origin {
                DispatchOrigin::Base => u.state == AmbulanceState::IdleAtBase && u.on_shift,
                DispatchOrigin::Field => self.in_post_mission == Some(a),
            };
            if !legal {
                msgs.push(format!(
                    "t={:.6} ambulance {} dispatched from state {:?} (on shift: {})",
                    self.now, u.def.id, u.state, u.on_shift
                ));
            }
            for m in msgs {
                self.violation(m);
            }
        }
        self.set_state(a, AmbulanceState::Dispatched);
        self.units[a].current_call = Some(c as u64);
        let cs = &mut self.calls[c];
        cs.ambulance = Some(a);
        cs.origin = Some(origin);
        cs.call.status = CallStatus::Assigned;
    }

    fn on_dispatch_decision(&mut self, ev: Event) {
        let c = ev.call.expect("call") as usize;
        let a = match ev.ambulance {
            Some(a) => a,
            None => match self.select_ambulance(c) {
                Some(a) => {
                    self.reserve(a, c, DispatchOrigin::Base);
                    a
                }
                None => {
                    self.log_event(&ev, ev.call, None);
                    let key = self.calls[c].key();
                    self.queue.push(key);
                    self.calls[c].call.status = CallStatus::Queued;
                    return;
                }
            },
        };
        self.log_event(&ev, ev.call, Some(a));
        let from_base = self.calls[c].origin == Some(DispatchOrigin::Base);
        let depart = if from_base {
            self.now + self.calls[c].draws.preparation
        } else {
            self.now
        };
        let position = self.units[a].position;
        let leg = self.leg_from(position);
        let slot = self.slot(depart);
        let inst = self.inst;
        let cs = &mut self.calls[c];
        let travel = inst
            .network
            .travel
            .travel_time(
                position,
                cs.call.scene,
                leg,
                slot,
                cs.call.triage_tag.urgency(),
                Some(&mut cs.stream),
            )
            .expect("travel pairs checked at load");
        cs.call.times.assigned = Some(self.now);
        cs.call.times.depart = Some(depart);
        cs.call.status = CallStatus::EnRoute;
        self.schedule(depart + travel, EventKind::ArriveScene, ev.call, Some(a));
    }

    fn on_arrive_scene(&mut self, ev: Event) {
        let c = ev.call.expect("call") as usize;
        let a = ev.ambulance.expect("ambulance");
        self.log_event(&ev, ev.call, Some(a));
        self.units[a].position = self.calls[c].call.scene;
        let d = self.calls[c].draws;
        if d.cancelled {
            let cs = &mut self.calls[c];
            cs.call.status = CallStatus::CancelledEnRoute;
            cs.call.times.mission_end = Some(self.now);
            self.post_mission(a, c);
            return;
        }
        self.set_state(a, AmbulanceState::OnScene);
        let cs = &mut self.calls[c];
        cs.call.times.arrive_scene = Some(self.now);
        cs.call.onscene_tag = Some(d.onscene_tag);
        cs.call.status = CallStatus::Served;
        let on_scene = if d.transport { d.load } else { d.treatment };
        self.schedule(self.now + on_scene, EventKind::SceneDone, ev.call, Some(a));
    }

    fn on_scene_done(&mut self, ev: Event) {
        let c = ev.call.expect("call") as usize;
        let a = ev.ambulance.expect("ambulance");
        self.log_event(&ev, ev.call, Some(a));
        self.calls[c].call.times.depart_scene = Some(self.now);
        if !self.calls[c].draws.transport {
            self.calls[c].call.status = CallStatus::ClosedOnSite;
            self.calls[c].call.times.mission_end = Some(self.now);
            self.post_mission(a, c);
            return;
        }
        let slot = self.slot(self.now);
        let (ed, travel) = select_ed(self.inst, &self.calls[c].call, slot);
        self.calls[c].ed = Some(ed);
        self.set_state(a, AmbulanceState::ToEd);
        self.schedule(self.now + travel, EventKind::ArriveEd, ev.call, Some(a));
    }

    fn on_arrive_ed(&mut self, ev: Event) {
        let c = ev.call.expect("call") as usize;
        let a = ev.ambulance.expect("ambulance");
        self.log_event(&ev, ev.call, Some(a));
        let ed = &self.inst.eds[self.calls[c].ed.expect("ED chosen")];
        self.units[a].position = ed.point;
        self.set_state(a, AmbulanceState::AtEd);
        let cs = &mut self.calls[c];
        let delay = offload_delay(ed, &mut cs.stream);
        let times = &mut cs.call.times;
        times.arrive_ed = Some(self.now);
        times.offload_start = Some(self.now + delay);
        let done = self.now + delay + cs.draws.discharge;
        times.offload_done = Some(done);
        self.schedule(done, EventKind::OffloadDone, ev.call, Some(a));
    }

    /// Sanitize at base, take a queued call nearby, or head home.
    fn post_mission(&mut self, a: usize, c: usize) {
        self.units[a].current_call = None;
        let d = self.calls[c].draws;
        if d.sanitize {
            self.units[a].sanitize_for = Some(d.sanitization);
            self.return_to_base(a);
            return;
        }
        if self.units[a].on_shift {
            let position = self.units[a].position;
            let pick = self
                .queue
                .iter()
                .map(|k| k.call_id as usize)
                .find(|&q| self.estimate_to(position, q) <= self.calls[q].threshold);
            if let Some(q) = pick {
                let key = self.calls[q].key();
                if self.check.is_some() {
                    self.check_queue_discipline(&key, Some(position));
                }
                self.queue.remove(&key);
                self.in_post_mission = Some(a);
                self.reserve(a, q, DispatchOrigin::Field);
                self.in_post_mission = None;
                self.calendar.schedule(
                    self.now,
                    EventKind::DispatchDecision,
                    Some(q as u64),
                    Some(a),
                    None,
                    false,
                );
                return;
            }
        }
        self.return_to_base(a);
    }

    fn return_to_base(&mut self, a: usize) {
        self.set_state(a, AmbulanceState::Returning);
        let u = &self.units[a];
        let t = self
            .inst
            .network
            .travel
            .travel_time(
                u.position,
                u.def.home_base,
                TravelLeg::ReturnToBase,
                self.slot(self.now),
                UrgencyClass::NonUrgent,
                None,
            )
            .expect("travel pairs checked at load");
        self.schedule(self.now + t, EventKind::ArriveBase, None, Some(a));
    }

    fn become_available(&mut self, a: usize) {
        if self.units[a].on_shift {
            self.set_state(a, AmbulanceState::IdleAtBase);
            self.rescan_queue();
        } else {
            self.set_state(a, AmbulanceState::OffShift);
        }
    }

    /// Assigns queued calls, in priority order, to idle units within reach.
    fn rescan_queue(&mut self) {
        if self.queue.is_empty() {
            return;
        }
        let waiting: Vec<QueueKey> = self.queue.iter().copied().collect();
        for key in waiting {
            if !self
                .units
                .iter()
                .any(|u| u.state == AmbulanceState::IdleAtBase && u.on_shift)
            {
                break;
            }
            let c = key.call_id as usize;
            if let Some(a) = self.select_ambulance(c) {
                if self.check.is_some() {
                    self.check_queue_discipline(&key, None);
                }
                self.queue.remove(&key);
                self.reserve(a, c, DispatchOrigin::Base);
                self.calendar.schedule(
                    self.now,
                    EventKind::DispatchDecision,
                    Some(key.call_id),
                    Some(a),
                    None,
                    false,
                );
            }
        }
    }

    /// No strictly higher-priority queued call may be reachable by the
    /// resources considered for `key` (idle units, or the unit at `field`).
    fn check_queue_discipline(&mut self, key: &QueueKey, field: Option<PointIdx>) {
        let mut bad = Vec::new();
        for other in self.queue.iter().filter(|o| o.outranks(key)) {
            let q = other.call_id as usize;
            let reachable = match field {
                Some(p) => self.estimate_to(p, q) <= self.calls[q].threshold,
                None => self.select_ambulance(q).is_some(),
            };
            if reachable {
                bad.push(other.call_id);
            }
        }
        for q in bad {
            let msg = format!(
                "t={:.6} call {} served from queue while higher-priority call {} was reachable",
                self.now, key.call_id, q
            );
            self.violation(msg);
        }
    }

    fn finish(mut self, replication_index: u32) -> ReplicationOutput {
        let inst = self.inst;
        let records: Vec<MissionRecord> = self
            .calls
            .iter()
            .map(|cs| {
                let unit = cs.ambulance.map(|a| &self.units[a].def);
                MissionRecord::new(
                    cs.call.clone(),
                    unit.map(|u| u.id.clone()),
                    unit.map(|u| inst.network.point_id(u.home_base).to_string()),
                    cs.origin,
                    cs.ed.map(|e| inst.network.point_id(inst.eds[e].point).to_string()),
                    inst.warmup_minutes,
                )
            })
            .collect();
        if let Some(report) = &mut self.check {
            let mut terminal = 0usize;
            let mut censored = 0usize;
            for r in &records {
                if r.censored {
                    censored += 1;
                } else {
                    terminal += 1;
                }
                if !r.call.times.is_monotone(r.call.arrival_minute) {
                    report
                        .violations
                        .push(format!("call {}: timestamps not monotone", r.call.call_id));
                }
                if r.response_time_minutes.is_some()
                    != matches!(r.call.status, CallStatus::ClosedOnSite | CallStatus::Transported)
                {
                    report
                        .violations
                        .push(format!("call {}: response time presence mismatch", r.call.call_id));
                }
            }
            if terminal + censored != records.len() {
                report.violations.push(format!(
                    "conservation: {} spawned, {terminal} terminal, {censored} censored",
                    records.len()
                ));
            }
        }
        ReplicationOutput {
            replication_index,
            records,
            events: self.log,
            invariants: self.check,
        }
    }
}

fn draw_call(inst: &SimulationInstance, triage: SeverityTag, s: &mut RngStream) -> CallDraws {
    let cat = &inst.service_times;
    let ut = triage.urgency();
    let triage_time = cat.sample(Phase::TelephoneTriage, ut, s);
    let assignment = cat.sample(Phase::AmbulanceAssignment, ut, s);
    let preparation = cat.sample(Phase::AmbulancePreparation, ut, s);
    let cancelled = s.bernoulli(inst.outcomes[triage.index()].cancel_en_route);
    let row = &inst.severity_transition[triage.index()];
    let onscene_tag = SeverityTag::from_index(s.categorical(row).expect("stochastic row")).expect("four tags");
    let transport = s.bernoulli(inst.outcomes[onscene_tag.index()].transport_given_reached());
    let uo = onscene_tag.urgency();
    CallDraws {
        triage: triage_time,
        assignment,
        preparation,
        cancelled,
        onscene_tag,
        transport,
        treatment: cat.sample(Phase::TreatmentOnSite, uo, s),
        load: cat.sample(Phase::PatientLoad, uo, s),
        discharge: cat.sample(Phase::PatientDischarge, uo, s),
        sanitize: s.bernoulli(inst.sanitization_probability),
        sanitization: cat.sample(Phase::Sanitization, uo, s),
    }
}

/// Nearest ED (calibrated scene-to-ED time, on-scene urgency) among those
/// serving the call's referral group; ties go to the lower ED id.
pub fn select_ed(inst: &SimulationInstance, call: &EmergencyCall, slot: usize) -> (usize, f64) {
    let group = &inst.demand.groups[call.pathology_group];
    let urgency = call.current_tag().urgency();
    let mut best: Option<(f64, &str, usize)> = None;
    for (i, ed) in inst.eds.iter().enumerate() {
        if !ed.groups.contains(group) {
            continue;
        }
        let t = inst
            .network
            .travel
            .estimate(call.scene, ed.point, TravelLeg::SceneToEd, slot, urgency)
            .expect("travel pairs checked at load");
        let id = inst.network.point_id(ed.point);
        let better = match best {
            None => true,
            Some((bt, bid, _)) => t < bt || (t == bt && id < bid),
        };
        if better {
            best = Some((t, id, i));
        }
    }
    let (t, _, i) = best.expect("every referral group has an ED");
    (i, t)
}

/// AOD block: with the ED's probability, a draw from its delay distribution.
pub fn offload_delay(ed: &crate::model::EdFacility, stream: &mut RngStream) -> f64 {
    if stream.bernoulli(ed.aod_probability) {
        ed.aod_delay.sample(stream)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests;
