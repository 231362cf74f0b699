//! Flow-level discrete-event network simulator.
//!
//! Fluid model: at any instant every active flow gets a max-min fair
//! rate subject to a per-flow pair cap and separate per-node ingress and
//! egress budgets (full duplex). Rates are recomputed at every flow
//! arrival and completion, so within an epoch rates are constant and
//! transfer volumes integrate exactly. Control messages are free.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ids::WorkerId;

fn default_pair_bw() -> f64 {
    10e6
}
fn default_node_capacity() -> f64 {
    100e6
}
fn default_bytes_per_parameter() -> u64 {
    8
}
fn default_compute_time() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Available bandwidth between any two workers, bits/second.
    #[serde(default = "default_pair_bw")]
    pub per_pair_bw: f64,
    /// Per-worker bandwidth limit, bits/second, applied separately to
    /// ingress and egress.
    #[serde(default = "default_node_capacity")]
    pub node_capacity: f64,
    #[serde(default = "default_bytes_per_parameter")]
    pub bytes_per_parameter: u64,
    /// Seconds per local SGD step.
    #[serde(default = "default_compute_time")]
    pub compute_time_per_sgd_step: f64,
    /// Per-worker compute-speed multipliers (heterogeneity); 1.0 when absent.
    #[serde(default)]
    pub compute_multipliers: BTreeMap<WorkerId, f64>,
    /// Seconds before a failed contact is detected.
    #[serde(default)]
    pub failure_detection_delay: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            per_pair_bw: default_pair_bw(),
            node_capacity: default_node_capacity(),
            bytes_per_parameter: default_bytes_per_parameter(),
            compute_time_per_sgd_step: default_compute_time(),
            compute_multipliers: BTreeMap::new(),
            failure_detection_delay: 0.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.per_pair_bw > 0.0 && self.node_capacity > 0.0) {
            return Err(CoreError::InvalidConfig("bandwidths must be positive".into()));
        }
        if self.bytes_per_parameter == 0 {
            return Err(CoreError::InvalidConfig(
                "bytes_per_parameter must be positive".into(),
            ));
        }
        if self.compute_time_per_sgd_step <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "compute time must be positive".into(),
            ));
        }
        if self.failure_detection_delay < 0.0 {
            return Err(CoreError::InvalidConfig(
                "detection delay must be non-negative".into(),
            ));
        }
        if self.compute_multipliers.values().any(|m| *m <= 0.0) {
            return Err(CoreError::InvalidConfig(
                "compute multipliers must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn compute_time(&self, worker: WorkerId, steps: u64) -> f64 {
        let mult = self.compute_multipliers.get(&worker).copied().unwrap_or(1.0);
        steps as f64 * self.compute_time_per_sgd_step * mult
    }
}

/// Max-min fair rates (bits/second) for a set of concurrent flows given
/// as (src, dst) pairs, by progressive filling: all unfrozen flows rise
/// together; whichever constraint saturates first freezes its flows.
pub fn allocate_rates(flows: &[(WorkerId, WorkerId)], cfg: &NetConfig) -> Vec<f64> {
    let m = flows.len();
    let mut rates = vec![0.0f64; m];
    let mut frozen = vec![false; m];
    let mut level = 0.0f64;
    while frozen.iter().any(|f| !f) {
        // candidate levels at which some constraint saturates
        let mut lambda = cfg.per_pair_bw;
        let mut egress_load: BTreeMap<WorkerId, (f64, usize)> = BTreeMap::new();
        let mut ingress_load: BTreeMap<WorkerId, (f64, usize)> = BTreeMap::new();
        for (i, (src, dst)) in flows.iter().enumerate() {
            let e = egress_load.entry(*src).or_insert((0.0, 0));
            let g = ingress_load.entry(*dst).or_insert((0.0, 0));
            if frozen[i] {
                e.0 += rates[i];
                g.0 += rates[i];
            } else {
                e.1 += 1;
                g.1 += 1;
            }
        }
        for (load, count) in egress_load.values().chain(ingress_load.values()) {
            if *count > 0 {
                lambda = lambda.min((cfg.node_capacity - load) / *count as f64);
            }
        }
        level = level.max(lambda);
        for (i, f) in frozen.iter_mut().enumerate() {
            if !*f {
                rates[i] = level;
            }
        }
        // freeze flows bound by a saturated constraint
        let tol = 1e-9 * cfg.node_capacity.max(cfg.per_pair_bw);
        let mut any = false;
        if (level - cfg.per_pair_bw).abs() <= tol {
            for f in frozen.iter_mut() {
                if !*f {
                    *f = true;
                    any = true;
                }
            }
        } else {
            for (i, (src, dst)) in flows.iter().enumerate() {
                if frozen[i] {
                    continue;
                }
                let (e_load, e_cnt) = egress_load[src];
                let (g_load, g_cnt) = ingress_load[dst];
                let egress_total = e_load + e_cnt as f64 * level;
                let ingress_total = g_load + g_cnt as f64 * level;
                if egress_total >= cfg.node_capacity - tol
                    || ingress_total >= cfg.node_capacity - tol
                {
                    frozen[i] = true;
                    any = true;
                }
            }
        }
        if !any {
            // numerically stuck; freeze everything at the current level
            for f in frozen.iter_mut() {
                *f = true;
            }
        }
    }
    rates
}

const COMPLETION_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
struct FlowState {
    src: WorkerId,
    dst: WorkerId,
    bits: f64,
    remaining: f64,
    release: f64,
    released: bool,
    done: bool,
    completion: f64,
    delivered: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimEvent {
    Released(usize),
    Completed(usize),
    Wakeup,
}

/// Piecewise-constant-rate fluid executor. Drivers add flows and
/// wakeups as the schedule unfolds; ties are processed in flow-id order
/// so runs are bit-identical.
pub struct FluidSim {
    cfg: NetConfig,
    time: f64,
    flows: Vec<FlowState>,
    wakeups: Vec<f64>,
}

impl FluidSim {
    pub fn new(cfg: NetConfig) -> Self {
        FluidSim {
            cfg,
            time: 0.0,
            flows: Vec::new(),
            wakeups: Vec::new(),
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Adds a flow of `bytes` bytes that becomes transferable at
    /// `release`. Loopback (src == dst) and empty flows complete
    /// instantly upon release.
    pub fn add_flow(&mut self, src: WorkerId, dst: WorkerId, bytes: u64, release: f64) -> usize {
        let bits = bytes as f64 * 8.0;
        self.flows.push(FlowState {
            src,
            dst,
            bits,
            remaining: bits,
            release: release.max(self.time),
            released: false,
            done: false,
            completion: f64::NAN,
            delivered: 0.0,
        });
        self.flows.len() - 1
    }

    pub fn schedule_wakeup(&mut self, t: f64) {
        self.wakeups.push(t.max(self.time));
    }

    pub fn completion(&self, id: usize) -> f64 {
        self.flows[id].completion
    }

    pub fn delivered(&self, id: usize) -> f64 {
        self.flows[id].delivered
    }

    pub fn flow_dst(&self, id: usize) -> WorkerId {
        self.flows[id].dst
    }

    fn is_transfer(f: &FlowState) -> bool {
        f.src != f.dst && f.bits > 0.0
    }

    /// Advances to the next event instant and returns everything that
    /// happened there. `None` once no releases, transfers or wakeups remain.
    pub fn step(&mut self) -> Option<(f64, Vec<SimEvent>)> {
        let active: Vec<usize> = self
            .flows
            .iter()
            .enumerate()
            .filter(|(_, f)| f.released && !f.done)
            .map(|(i, _)| i)
            .collect();
        let pairs: Vec<(WorkerId, WorkerId)> =
            active.iter().map(|&i| (self.flows[i].src, self.flows[i].dst)).collect();
        let rates = allocate_rates(&pairs, &self.cfg);

        let mut next = f64::INFINITY;
        for f in &self.flows {
            if !f.released {
                next = next.min(f.release);
            }
        }
        for (k, &i) in active.iter().enumerate() {
            if rates[k] > 0.0 {
                next = next.min(self.time + self.flows[i].remaining / rates[k]);
            }
        }
        for &w in &self.wakeups {
            next = next.min(w);
        }
        if !next.is_finite() {
            return None;
        }

        let dt = (next - self.time).max(0.0);
        for (k, &i) in active.iter().enumerate() {
            let moved = rates[k] * dt;
            let f = &mut self.flows[i];
            f.remaining -= moved;
            f.delivered += moved;
        }
        self.time = next;

        let mut events = Vec::new();
        // completions of transfers that just drained; a residue too
        // small to advance the clock by one ulp also counts as drained
        for (k, &i) in active.iter().enumerate() {
            let f = &mut self.flows[i];
            let stalled = rates[k] > 0.0 && self.time + f.remaining / rates[k] <= self.time;
            if f.remaining <= COMPLETION_EPS + f.bits * 1e-12 || stalled {
                f.done = true;
                f.completion = self.time;
                f.delivered = f.bits;
                events.push(SimEvent::Completed(i));
            }
        }
        // releases due now; degenerate flows complete immediately
        for i in 0..self.flows.len() {
            let f = &mut self.flows[i];
            if !f.released && f.release <= self.time + 1e-15 {
                f.released = true;
                events.push(SimEvent::Released(i));
                if !Self::is_transfer(f) {
                    f.done = true;
                    f.completion = self.time;
                    events.push(SimEvent::Completed(i));
                }
            }
        }
        let before = self.wakeups.len();
        self.wakeups.retain(|w| *w > self.time + 1e-15);
        if self.wakeups.len() != before {
            events.push(SimEvent::Wakeup);
        }
        Some((self.time, events))
    }
}

/// Inbound segment demand of one worker in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InFlow {
    pub src: WorkerId,
    pub bytes: u64,
}

/// Logical training trace reduced to what timing needs: per round, per
/// worker, the inbound transfers, plus the uniform local step count.
#[derive(Debug, Clone, Default)]
pub struct LogicalTrace {
    pub sgd_steps: u64,
    pub rounds: Vec<BTreeMap<WorkerId, Vec<InFlow>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub round: u64,
    pub worker: WorkerId,
    pub update_start: f64,
    pub update_end: f64,
    /// When aggregation fires: all inbound flows done and the local
    /// update finished. The next round's update starts here.
    pub agg_time: f64,
    pub sync_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub rows: Vec<TimelineRow>,
}

impl Timeline {
    /// Instant at which every participant of `round` has aggregated.
    pub fn round_completion(&self, round: u64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.round == round)
            .map(|r| r.agg_time)
            .fold(None, |acc, t| Some(acc.map_or(t, |a: f64| a.max(t))))
    }

    pub fn mean_sync_time(&self, round: u64) -> Option<f64> {
        let times: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.round == round)
            .map(|r| r.sync_time)
            .collect();
        if times.is_empty() {
            None
        } else {
            Some(times.iter().sum::<f64>() / times.len() as f64)
        }
    }

    pub fn total_time(&self) -> f64 {
        self.rows.iter().map(|r| r.agg_time).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SchedState {
    Pending,
    Updating,
    Awaiting,
    Done,
}

struct WorkerSched {
    id: WorkerId,
    state: SchedState,
    round: usize,
    update_start: f64,
    update_end: f64,
}

/// Converts a logical trace into wall-clock timings. A flow for round r
/// from provider j is released when j finishes its round-r local
/// update; a worker's round-(r+1) update starts at its aggregation time.
pub fn simulate(trace: &LogicalTrace, cfg: &NetConfig) -> Result<Timeline> {
    cfg.validate()?;
    let num_rounds = trace.rounds.len();
    if num_rounds == 0 {
        return Ok(Timeline::default());
    }

    // participation index and reverse (per-src) demand index
    let mut first_round: BTreeMap<WorkerId, usize> = BTreeMap::new();
    let mut outbound: Vec<BTreeMap<WorkerId, Vec<(WorkerId, u64)>>> = vec![BTreeMap::new(); num_rounds];
    for (r, demands) in trace.rounds.iter().enumerate() {
        for (&dst, flows) in demands {
            first_round.entry(dst).or_insert(r);
            for f in flows {
                if !trace.rounds[r].contains_key(&f.src) {
                    return Err(CoreError::Trace(format!(
                        "round {r}: provider {} is not a participant",
                        f.src
                    )));
                }
                outbound[r].entry(f.src).or_default().push((dst, f.bytes));
            }
        }
    }
    let mut remaining_aggs: Vec<usize> = trace.rounds.iter().map(|r| r.len()).collect();
    let mut round_complete: Vec<f64> = vec![f64::NAN; num_rounds];

    let mut sim = FluidSim::new(cfg.clone());
    let mut scheds: BTreeMap<WorkerId, WorkerSched> = first_round
        .keys()
        .map(|&id| {
            (
                id,
                WorkerSched {
                    id,
                    state: SchedState::Pending,
                    round: 0,
                    update_start: 0.0,
                    update_end: 0.0,
                },
            )
        })
        .collect();
    // flow id -> (dst, round)
    let mut flow_dst: BTreeMap<usize, (WorkerId, usize)> = BTreeMap::new();
    let mut rows: Vec<TimelineRow> = Vec::new();

    // start a worker's round: fix its update window and release its
    // outbound segments for that round
    fn start_round(
        sim: &mut FluidSim,
        trace: &LogicalTrace,
        outbound: &[BTreeMap<WorkerId, Vec<(WorkerId, u64)>>],
        flow_dst: &mut BTreeMap<usize, (WorkerId, usize)>,
        scheds: &mut BTreeMap<WorkerId, WorkerSched>,
        cfg: &NetConfig,
        id: WorkerId,
        r: usize,
        t: f64,
    ) {
        let end = t + cfg.compute_time(id, trace.sgd_steps);
        {
            let s = scheds.get_mut(&id).unwrap();
            s.state = SchedState::Updating;
            s.round = r;
            s.update_start = t;
            s.update_end = end;
        }
        sim.schedule_wakeup(end);
        if let Some(list) = outbound[r].get(&id) {
            for &(dst, bytes) in list {
                let fid = sim.add_flow(id, dst, bytes, end);
                flow_dst.insert(fid, (dst, r));
            }
        }
    }

    for (&id, &fr) in &first_round {
        if fr == 0 {
            start_round(
                &mut sim, trace, &outbound, &mut flow_dst, &mut scheds, cfg, id, 0, 0.0,
            );
        }
        let _ = id;
    }

    // Inbound completions counted per (round, dst): a segment can land
    // before its receiver has even started that round.
    let mut inbound_done: BTreeMap<(usize, WorkerId), usize> = BTreeMap::new();
    let inbound_expected = |r: usize, id: WorkerId| -> usize {
        trace.rounds[r].get(&id).map_or(0, |v| v.len())
    };

    while let Some((now, events)) = sim.step() {
        for ev in events {
            if let SimEvent::Completed(fid) = ev {
                if let Some(&(dst, r)) = flow_dst.get(&fid) {
                    *inbound_done.entry((r, dst)).or_insert(0) += 1;
                }
            }
        }
        // aggregation checks after every event batch
        let ids: Vec<WorkerId> = scheds.keys().copied().collect();
        for id in ids {
            let (round, ready) = {
                let s = &scheds[&id];
                let updating_done =
                    s.state == SchedState::Updating && now >= s.update_end - 1e-15;
                let all_in = inbound_done.get(&(s.round, id)).copied().unwrap_or(0)
                    >= inbound_expected(s.round, id);
                (
                    s.round,
                    (updating_done || s.state == SchedState::Awaiting) && all_in,
                )
            };
            if scheds[&id].state == SchedState::Updating && now >= scheds[&id].update_end - 1e-15 {
                scheds.get_mut(&id).unwrap().state = SchedState::Awaiting;
            }
            if !ready || scheds[&id].state != SchedState::Awaiting {
                continue;
            }
            let (update_start, update_end, agg) = {
                let s = &scheds[&id];
                (s.update_start, s.update_end, now)
            };
            rows.push(TimelineRow {
                round: round as u64,
                worker: id,
                update_start,
                update_end,
                agg_time: agg,
                sync_time: agg - update_end,
            });
            remaining_aggs[round] -= 1;
            if remaining_aggs[round] == 0 {
                round_complete[round] = rows
                    .iter()
                    .filter(|row| row.round == round as u64)
                    .map(|row| row.agg_time)
                    .fold(0.0, f64::max);
            }
            scheds.get_mut(&id).unwrap().state = SchedState::Done;
            // continue into the next round this worker participates in
            let next = round + 1;
            if next < num_rounds && trace.rounds[next].contains_key(&id) {
                start_round(
                    &mut sim, trace, &outbound, &mut flow_dst, &mut scheds, cfg, id, next, agg,
                );
            }
            // a completed round may unblock late joiners
            if remaining_aggs[round] == 0 {
                let t = round_complete[round];
                let joiners: Vec<WorkerId> = scheds
                    .values()
                    .filter(|s| s.state == SchedState::Pending && first_round[&s.id] == round + 1)
                    .map(|s| s.id)
                    .collect();
                for j in joiners {
                    start_round(
                        &mut sim, trace, &outbound, &mut flow_dst, &mut scheds, cfg, j,
                        round + 1, t,
                    );
                }
            }
        }
    }

    rows.sort_by_key(|r| (r.round, r.worker));
    Ok(Timeline { rows })
}

/// Timing of the centralized FedAvg baseline: per round every worker
/// uploads its full model to the server (sharing the server's ingress),
/// then downloads the aggregate (sharing its egress); the server's own
/// transfers are zero-cost loopback. Downloads start only after every
/// upload of the round has arrived.
pub fn fedavg_timing(
    workers: &[WorkerId],
    server: WorkerId,
    rounds: usize,
    sgd_steps: u64,
    model_bytes: u64,
    cfg: &NetConfig,
) -> Result<Timeline> {
    cfg.validate()?;
    if !workers.contains(&server) {
        return Err(CoreError::InvalidConfig(format!(
            "server {server} is not a federation member"
        )));
    }
    if rounds == 0 || workers.is_empty() {
        return Ok(Timeline::default());
    }
    let mut sim = FluidSim::new(cfg.clone());
    let mut scheds: BTreeMap<WorkerId, (usize, f64, f64)> = BTreeMap::new(); // round, start, end
    let mut uploads_left: Vec<usize> = vec![workers.len(); rounds];
    let mut upload_round: BTreeMap<usize, usize> = BTreeMap::new();
    let mut download_of: BTreeMap<usize, (WorkerId, usize)> = BTreeMap::new();
    let mut rows: Vec<TimelineRow> = Vec::new();

    let start =
        |sim: &mut FluidSim, scheds: &mut BTreeMap<WorkerId, (usize, f64, f64)>,
         upload_round: &mut BTreeMap<usize, usize>, id: WorkerId, r: usize, t: f64| {
            let end = t + cfg.compute_time(id, sgd_steps);
            scheds.insert(id, (r, t, end));
            let fid = sim.add_flow(id, server, model_bytes, end);
            upload_round.insert(fid, r);
        };
    for &id in workers {
        start(&mut sim, &mut scheds, &mut upload_round, id, 0, 0.0);
    }

    while let Some((now, events)) = sim.step() {
        for ev in events {
            let SimEvent::Completed(fid) = ev else { continue };
            if let Some(&r) = upload_round.get(&fid) {
                uploads_left[r] -= 1;
                if uploads_left[r] == 0 {
                    // aggregate ready; broadcast
                    for &id in workers {
                        let bytes = if id == server { 0 } else { model_bytes };
                        let did = sim.add_flow(server, id, bytes, now);
                        download_of.insert(did, (id, r));
                    }
                }
            } else if let Some(&(id, r)) = download_of.get(&fid) {
                let (_, ustart, uend) = scheds[&id];
                rows.push(TimelineRow {
                    round: r as u64,
                    worker: id,
                    update_start: ustart,
                    update_end: uend,
                    agg_time: now,
                    sync_time: now - uend,
                });
                if r + 1 < rounds {
                    start(&mut sim, &mut scheds, &mut upload_round, id, r + 1, now);
                }
            }
        }
    }

    rows.sort_by_key(|r| (r.round, r.worker));
    Ok(Timeline { rows })
}
