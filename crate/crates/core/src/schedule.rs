//! Ordering chunk operators under a device memory budget, swap planning and
//! a two-resource overlap timeline.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::dataflow::{Buffer, ChunkDataflow, ChunkOp, Cost, Direction, OpKind, SwapOutMode, Transfer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Strategy {
    /// Every stage over all chunks before the next stage.
    StageBased,
    /// Source intervals outer, destinations inner (mirrored in backward).
    DestOrder,
    /// Destination intervals outer, holding the accumulator resident. In
    /// backward, source intervals outer, holding their gradient resident.
    Locality,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::StageBased, Strategy::DestOrder, Strategy::Locality];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::StageBased => "stage",
            Strategy::DestOrder => "dest",
            Strategy::Locality => "locality",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stage" => Ok(Strategy::StageBased),
            "dest" => Ok(Strategy::DestOrder),
            "locality" => Ok(Strategy::Locality),
            _ => Err(ScheduleError::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("op {op} needs {needed} bytes resident but the budget is {budget}")]
    Infeasible { op: String, needed: u64, budget: u64 },
    #[error("buffer {buffer} read by {op} does not exist yet")]
    Missing { op: String, buffer: Buffer },
    #[error("dataflow has a dependency cycle")]
    Cycle,
    #[error("unknown strategy {0:?} (expected stage, dest or locality)")]
    UnknownStrategy(String),
    #[error("rates must be positive")]
    Rates,
}

pub type Result<T, E = ScheduleError> = std::result::Result<T, E>;

/// Byte counters of one schedule. Initial loads of host data and final
/// spills are tallied apart from swaps, which are reloads of data that was
/// already on the device and write-backs of evicted dirty data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SwapCounters {
    pub load_bytes: u64,
    pub spill_bytes: u64,
    pub swap_h2d_bytes: u64,
    pub swap_d2h_bytes: u64,
    pub swap_ins: usize,
    pub swap_outs: usize,
}

impl SwapCounters {
    pub fn swap_bytes(&self) -> u64 {
        self.swap_h2d_bytes + self.swap_d2h_bytes
    }

    pub fn add(&mut self, o: &SwapCounters) {
        self.load_bytes += o.load_bytes;
        self.spill_bytes += o.spill_bytes;
        self.swap_h2d_bytes += o.swap_h2d_bytes;
        self.swap_d2h_bytes += o.swap_d2h_bytes;
        self.swap_ins += o.swap_ins;
        self.swap_outs += o.swap_outs;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Schedule {
    pub strategy: Strategy,
    pub budget: Option<u64>,
    /// The input dataflow with swap operators appended.
    pub dataflow: ChunkDataflow,
    /// Linear execution order over `dataflow.ops`.
    pub order: Vec<usize>,
    /// Resident bytes after each step of `order`.
    pub trace: Vec<u64>,
    pub peak_bytes: u64,
    pub counters: SwapCounters,
    /// Whether evictions come from the exact search rather than the
    /// furthest-next-use fallback.
    pub exact: bool,
}

impl Schedule {
    pub fn ops(&self) -> impl Iterator<Item = &ChunkOp> {
        self.order.iter().map(|&k| &self.dataflow.ops[k])
    }

    /// One line per scheduled op.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (op, bytes) in self.ops().zip(&self.trace) {
            out.push_str(&format!("{} resident={bytes}\n", op.label()));
        }
        out
    }
}

fn priority(op: &ChunkOp, strategy: Strategy, last_source: &BTreeMap<usize, usize>) -> [usize; 5] {
    let r = op.stage_rank();
    let i = op.i.unwrap_or(0);
    let vertex_op = op.j.is_none();
    match (op.direction, op.kind, vertex_op) {
        (Direction::Forward, OpKind::PreCompute, _) => [0, i, 0, 0, 0],
        (Direction::Forward, OpKind::ApplyVertex, _) => match strategy {
            Strategy::Locality => [1, i, 1, 0, 0],
            Strategy::StageBased => [2, i, 0, 0, 0],
            Strategy::DestOrder => [1, last_source.get(&i).copied().unwrap_or(0), i, usize::MAX, 0],
        },
        (Direction::Backward, OpKind::ApplyVertex, _) => [0, i, 0, 0, 0],
        (Direction::Backward, OpKind::PreCompute, _) => [2, i, 0, 0, 0],
        (_, _, _) => {
            let j = op.j.unwrap_or(0);
            // Backward accumulates into source intervals, so the roles of
            // the two axes swap.
            let (acc, other) = match op.direction {
                Direction::Forward => (j, i),
                Direction::Backward => (i, j),
            };
            match strategy {
                Strategy::Locality => [1, acc, 0, other, r],
                Strategy::StageBased => [1, r, j, i, 0],
                Strategy::DestOrder => [1, other, acc, r, 0],
            }
        }
    }
}

/// Topological order of the compute ops, choosing among ready ops by the
/// strategy's priority.
pub fn compute_order(df: &ChunkDataflow, strategy: Strategy) -> Result<Vec<usize>> {
    let mut last_source = BTreeMap::new();
    for op in df.compute_ops() {
        if let (Some(i), Some(j)) = (op.i, op.j) {
            let e = last_source.entry(j).or_insert(0);
            *e = (*e).max(i);
        }
    }
    let keys: Vec<[usize; 5]> = df.ops.iter().map(|o| priority(o, strategy, &last_source)).collect();
    let succ = df.successors();
    let mut indeg: Vec<usize> = df.deps.iter().map(Vec::len).collect();
    let mut heap: BinaryHeap<Reverse<([usize; 5], usize)>> = BinaryHeap::new();
    for (k, o) in df.ops.iter().enumerate() {
        if indeg[k] == 0 && !o.kind.is_transfer() {
            heap.push(Reverse((keys[k], k)));
        }
    }
    let mut order = Vec::with_capacity(df.ops.len());
    while let Some(Reverse((_, k))) = heap.pop() {
        order.push(k);
        for &v in &succ[k] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                heap.push(Reverse((keys[v], v)));
            }
        }
    }
    if order.len() != df.compute_ops().count() {
        return Err(ScheduleError::Cycle);
    }
    Ok(order)
}

/// The accumulator a Locality schedule keeps pinned while op `op` runs its
/// column (forward) or row (backward).
fn pinned(op: &ChunkOp, df: &ChunkDataflow) -> Option<Buffer> {
    match (op.direction, op.kind) {
        (Direction::Forward, OpKind::Scatter | OpKind::ApplyEdge | OpKind::Gather | OpKind::FusedGather) => {
            Some(Buffer::Accum(op.j?))
        }
        (Direction::Backward, OpKind::Gather | OpKind::ApplyEdge | OpKind::Scatter) => {
            let i = op.i?;
            if df.sizes.contains_key(&Buffer::GradPre(i)) {
                Some(Buffer::GradPre(i))
            } else {
                Some(Buffer::GradVertex(i))
            }
        }
        _ => None,
    }
}

struct Planner<'a> {
    df: &'a ChunkDataflow,
    strategy: Strategy,
    budget: Option<u64>,
    /// Positions in the compute order where each buffer is touched.
    uses: BTreeMap<Buffer, Vec<usize>>,
    /// Resident buffers and whether the device copy is newer than the host.
    resident: BTreeMap<Buffer, bool>,
    on_host: BTreeSet<Buffer>,
    seen_on_device: BTreeSet<Buffer>,
    used: u64,
    out: ChunkDataflow,
    order: Vec<usize>,
    trace: Vec<u64>,
    peak: u64,
    counters: SwapCounters,
    /// Last emitted op touching each buffer, for swap dependencies.
    last_touch: BTreeMap<Buffer, usize>,
    pending: Vec<usize>,
    /// Victims to evict before each compute position, when an exact plan
    /// was found.
    plan: Option<Vec<Vec<Buffer>>>,
}

impl Planner<'_> {
    fn next_use(&self, b: &Buffer, after: usize) -> usize {
        self.uses
            .get(b)
            .and_then(|u| u.iter().find(|&&k| k > after))
            .copied()
            .unwrap_or(usize::MAX)
    }

    fn emit(&mut self, kind: OpKind, b: Buffer, transfer: Transfer, bytes: u64, deps: Vec<usize>) -> usize {
        let id = self.out.ops.len();
        let mut op = ChunkOp {
            id,
            kind,
            direction: self.df.direction,
            i: None,
            j: None,
            reads: Vec::new(),
            creates: Vec::new(),
            updates: Vec::new(),
            transfer: Some(transfer),
            cost: Cost { flops: 0, bytes },
        };
        match kind {
            OpKind::SwapIn => op.creates.push(b),
            _ => op.reads.push(b),
        }
        self.out.ops.push(op);
        self.out.deps.push(deps);
        self.order.push(id);
        self.trace.push(self.used);
        self.last_touch.insert(b, id);
        id
    }

    fn swap_out(&mut self, b: Buffer, final_use: bool) {
        let dirty = self.resident.remove(&b).expect("resident buffer");
        self.used -= self.df.size(&b);
        let size = self.df.size(&b);
        let is_output = self.df.outputs.contains(&b);
        let (mode, bytes) = match (final_use, is_output, dirty) {
            (false, _, true) => {
                self.counters.swap_d2h_bytes += size;
                self.counters.swap_outs += 1;
                (SwapOutMode::Evict, size)
            }
            // The host copy stays valid.
            (false, _, false) | (true, true, false) => (SwapOutMode::Discard, 0),
            (true, true, true) => {
                self.counters.spill_bytes += size;
                (SwapOutMode::Spill, size)
            }
            (true, _, _) => (SwapOutMode::Free, 0),
        };
        if mode == SwapOutMode::Evict || mode == SwapOutMode::Spill {
            self.on_host.insert(b);
        }
        if final_use && !is_output {
            self.on_host.remove(&b);
        }
        let deps = self.last_touch.get(&b).copied().into_iter().collect();
        let id = self.emit(OpKind::SwapOut, b, Transfer::Out(mode), bytes, deps);
        self.pending.push(id);
    }

    fn make_room(&mut self, op: &ChunkOp, pos: usize, required: u64) -> Result<()> {
        let Some(budget) = self.budget else {
            return Ok(());
        };
        if let Some(plan) = &self.plan {
            for b in plan[pos].clone() {
                self.swap_out(b, false);
            }
            debug_assert!(self.used + required <= budget);
            return Ok(());
        }
        let touched: BTreeSet<Buffer> = op.touched().copied().collect();
        let pin = match self.strategy {
            Strategy::Locality => pinned(op, self.df),
            _ => None,
        };
        let mut victims: Vec<Buffer> = Vec::new();
        let mut used = self.used;
        while used + required > budget {
            let pick = |allow_pinned: bool| {
                self.resident
                    .iter()
                    .filter(|(b, _)| {
                        !touched.contains(b) && !victims.contains(b) && (allow_pinned || Some(**b) != pin)
                    })
                    .max_by_key(|(b, &dirty)| (self.next_use(b, pos), !dirty, self.df.size(b), Reverse(**b)))
                    .map(|(b, _)| *b)
            };
            let Some(victim) = pick(false).or_else(|| pick(true)) else {
                return Err(ScheduleError::Infeasible {
                    op: op.label(),
                    needed: self.df.working_set(op),
                    budget,
                });
            };
            used -= self.df.size(&victim);
            victims.push(victim);
        }
        // Keep any victim, soonest needed first, whose eviction turned out
        // unnecessary once later (larger) victims were chosen.
        let mut kept = Vec::new();
        for (k, b) in victims.iter().enumerate().rev() {
            let size = self.df.size(b);
            if used + size + required <= budget {
                used += size;
                kept.push(k);
            }
        }
        for (k, b) in victims.into_iter().enumerate() {
            if !kept.contains(&k) {
                self.swap_out(b, false);
            }
        }
        Ok(())
    }

    fn run(&mut self, compute: &[usize]) -> Result<()> {
        for (pos, &k) in compute.iter().enumerate() {
            let op = self.df.ops[k].clone();
            if let Some(budget) = self.budget {
                let needed = self.df.working_set(&op);
                if needed > budget {
                    return Err(ScheduleError::Infeasible { op: op.label(), needed, budget });
                }
            }
            let mut load = Vec::new();
            for b in op.reads.iter().chain(&op.updates) {
                if !self.resident.contains_key(b) && !load.contains(b) {
                    if !self.on_host.contains(b) {
                        return Err(ScheduleError::Missing { op: op.label(), buffer: *b });
                    }
                    load.push(*b);
                }
            }
            let created: u64 = op.creates.iter().filter(|b| !self.resident.contains_key(b)).map(|b| self.df.size(b)).sum();
            let required = load.iter().map(|b| self.df.size(b)).sum::<u64>() + created;
            self.make_room(&op, pos, required)?;
            let mut deps = self.df.deps[k].clone();
            for b in load {
                let size = self.df.size(&b);
                let reload = self.seen_on_device.contains(&b);
                if reload {
                    self.counters.swap_h2d_bytes += size;
                    self.counters.swap_ins += 1;
                } else {
                    self.counters.load_bytes += size;
                }
                self.seen_on_device.insert(b);
                self.resident.insert(b, false);
                self.used += size;
                let mut in_deps: Vec<usize> = std::mem::take(&mut self.pending);
                in_deps.extend(self.last_touch.get(&b).copied());
                let id = self.emit(OpKind::SwapIn, b, Transfer::In { reload }, size, in_deps);
                deps.push(id);
            }
            deps.append(&mut self.pending);
            for b in &op.creates {
                if !self.resident.contains_key(b) {
                    self.used += self.df.size(b);
                }
                self.seen_on_device.insert(*b);
            }
            for b in op.creates.iter().chain(&op.updates) {
                self.resident.insert(*b, true);
                self.on_host.remove(b);
            }
            self.peak = self.peak.max(self.used);
            deps.sort_unstable();
            deps.dedup();
            self.out.deps[k] = deps;
            self.order.push(k);
            self.trace.push(self.used);
            for b in op.touched() {
                self.last_touch.insert(*b, k);
            }
            let done: BTreeSet<Buffer> = op
                .touched()
                .filter(|b| self.next_use(b, pos) == usize::MAX)
                .copied()
                .collect();
            for b in done {
                if self.resident.contains_key(&b) {
                    self.swap_out(b, true);
                }
            }
        }
        Ok(())
    }
}

/// Orders the compute ops by `strategy` and inserts the transfers needed to
/// stay within `budget` bytes of device memory (`None` for unbounded).
///
/// Victims are chosen by furthest next use, preferring clean buffers on
/// ties. Under Locality the current column's accumulator is evicted only if
/// nothing else fits.
pub fn build_schedule(df: &ChunkDataflow, strategy: Strategy, budget: Option<u64>) -> Result<Schedule> {
    let compute = compute_order(df, strategy)?;
    let mut uses: BTreeMap<Buffer, Vec<usize>> = BTreeMap::new();
    for (pos, &k) in compute.iter().enumerate() {
        for b in df.ops[k].touched() {
            let u = uses.entry(*b).or_default();
            if u.last() != Some(&pos) {
                u.push(pos);
            }
        }
    }
    let mut planner = Planner {
        df,
        strategy,
        budget,
        uses,
        resident: BTreeMap::new(),
        on_host: df.inputs.clone(),
        seen_on_device: BTreeSet::new(),
        used: 0,
        out: df.clone(),
        order: Vec::new(),
        trace: Vec::new(),
        peak: 0,
        counters: SwapCounters::default(),
        last_touch: BTreeMap::new(),
        pending: Vec::new(),
        plan: None,
    };
    if let Some(budget) = budget {
        planner.plan = exact_plan(df, &compute, strategy, budget, EXACT_STATE_LIMIT);
    }
    planner.run(&compute)?;
    Ok(Schedule {
        strategy,
        budget,
        dataflow: planner.out,
        order: planner.order,
        trace: planner.trace,
        peak_bytes: planner.peak,
        counters: planner.counters,
        exact: planner.plan.is_some(),
    })
}

/// The dataflow with swap operators for a Locality schedule under `budget`.
pub fn insert_swaps(df: &ChunkDataflow, budget: u64) -> Result<ChunkDataflow> {
    build_schedule(df, Strategy::Locality, Some(budget)).map(|s| s.dataflow)
}

/// States the exact eviction search may settle before giving up.
const EXACT_STATE_LIMIT: usize = 20_000;

type PlanState = (usize, Vec<(Buffer, bool)>);

/// Cheapest eviction plan for a fixed compute order: a shortest path over
/// (position, resident set) where moving a step costs the bytes reloaded
/// plus the dirty bytes written back. Only minimal victim sets are tried;
/// deferring any extra eviction never costs more. Under Locality the
/// column's accumulator is a victim only when nothing else makes room.
/// Returns `None` if the budget is infeasible or the search grows past
/// `limit` states.
fn exact_plan(
    df: &ChunkDataflow,
    compute: &[usize],
    strategy: Strategy,
    budget: u64,
    limit: usize,
) -> Option<Vec<Vec<Buffer>>> {
    let touched: Vec<BTreeSet<Buffer>> = compute.iter().map(|&k| df.ops[k].touched().copied().collect()).collect();
    let mut first = BTreeMap::new();
    let mut last = BTreeMap::new();
    for (pos, t) in touched.iter().enumerate() {
        for b in t {
            first.entry(*b).or_insert(pos);
            last.insert(*b, pos);
        }
    }
    let mut best: BTreeMap<PlanState, u64> = BTreeMap::new();
    let mut parent: BTreeMap<PlanState, (PlanState, Vec<Buffer>)> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    let start: PlanState = (0, Vec::new());
    best.insert(start.clone(), 0);
    heap.push(Reverse((0u64, Reverse(0usize), start)));
    let mut settled = 0;
    let mut transitions = 0;
    while let Some(Reverse((cost, _, state))) = heap.pop() {
        if best.get(&state).is_some_and(|&c| c < cost) {
            continue;
        }
        settled += 1;
        if settled > limit {
            return None;
        }
        let (pos, resident) = state.clone();
        if pos == compute.len() {
            let mut plan = vec![Vec::new(); compute.len()];
            let mut cur = state;
            while let Some((prev, victims)) = parent.get(&cur) {
                plan[prev.0] = victims.clone();
                cur = prev.clone();
            }
            return Some(plan);
        }
        let op = &df.ops[compute[pos]];
        let now = &touched[pos];
        let is_resident = |b: &Buffer| resident.iter().any(|(r, _)| r == b);
        let used: u64 = resident.iter().map(|(b, _)| df.size(b)).sum();
        let required: u64 = now.iter().filter(|b| !is_resident(b)).map(|b| df.size(b)).sum();
        let reload: u64 = now
            .iter()
            .filter(|b| !is_resident(b) && first[*b] < pos)
            .map(|b| df.size(b))
            .sum();
        let pin = match strategy {
            Strategy::Locality => pinned(op, df),
            _ => None,
        };
        let mut candidates: Vec<(Buffer, bool)> = resident.iter().filter(|(b, _)| !now.contains(b)).copied().collect();
        let free_unpinned: u64 = candidates.iter().filter(|(b, _)| Some(*b) != pin).map(|(b, _)| df.size(b)).sum();
        if used - free_unpinned + required <= budget {
            candidates.retain(|(b, _)| Some(*b) != pin);
        }
        let need = (used + required).saturating_sub(budget);
        let sizes: Vec<u64> = candidates.iter().map(|(b, _)| df.size(b)).collect();
        if sizes.iter().sum::<u64>() < need {
            return None;
        }
        let mut options: Vec<u32> = Vec::new();
        if need == 0 {
            options.push(0);
        } else if candidates.len() > 16 {
            return None;
        } else {
            minimal_sets(&sizes, need, 0, 0, 0, u64::MAX, &mut options);
        }
        transitions += options.len();
        if transitions > limit * 8 {
            return None;
        }
        for mask in options {
            let victims: Vec<Buffer> =
                (0..candidates.len()).filter(|k| mask >> k & 1 == 1).map(|k| candidates[k].0).collect();
            let write_back: u64 = (0..candidates.len())
                .filter(|k| mask >> k & 1 == 1 && candidates[*k].1)
                .map(|k| sizes[k])
                .sum();
            let mut next: BTreeMap<Buffer, bool> =
                resident.iter().filter(|(b, _)| !victims.contains(b)).copied().collect();
            for b in now {
                next.entry(*b).or_insert(false);
            }
            for b in op.creates.iter().chain(&op.updates) {
                next.insert(*b, true);
            }
            next.retain(|b, _| last[b] > pos);
            let nstate: PlanState = (pos + 1, next.into_iter().collect());
            let c = cost + reload + write_back;
            if best.get(&nstate).is_none_or(|&old| c < old) {
                best.insert(nstate.clone(), c);
                parent.insert(nstate.clone(), (state.clone(), victims));
                heap.push(Reverse((c, Reverse(pos + 1), nstate)));
            }
        }
    }
    None
}

/// Collects every subset of `sizes` (as bit masks) that frees at least
/// `need` and stops doing so if any member is dropped.
fn minimal_sets(sizes: &[u64], need: u64, k: usize, mask: u32, freed: u64, smallest: u64, out: &mut Vec<u32>) {
    if freed >= need {
        if freed - smallest < need {
            out.push(mask);
        }
        return;
    }
    if k == sizes.len() || freed + sizes[k..].iter().sum::<u64>() < need {
        return;
    }
    minimal_sets(sizes, need, k + 1, mask | 1 << k, freed + sizes[k], smallest.min(sizes[k]), out);
    minimal_sets(sizes, need, k + 1, mask, freed, smallest, out);
}

/// Throughput of the two simulated resources.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rates {
    /// Flops per second.
    pub compute_rate: f64,
    /// Bytes per second.
    pub transfer_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Resource {
    Compute,
    Transfer,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimelineEvent {
    pub op: String,
    pub resource: Resource,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timeline {
    pub events: Vec<TimelineEvent>,
    pub makespan: f64,
    pub stall_time: f64,
    pub compute_time: f64,
    pub transfer_time: f64,
}

/// Replays a schedule on one compute and one transfer resource, each issuing
/// its ops in schedule order.
///
/// A compute op waits for every transfer scheduled before it. A transfer
/// feeding compute op `c` may start once compute op `c - 2` has finished,
/// i.e. it overlaps at most the op right before its consumer. A transfer
/// moving a buffer out waits for the last compute op that touched it.
/// Transfers of zero bytes cost nothing and are skipped.
pub fn simulate_timeline(s: &Schedule, rates: Rates) -> Result<Timeline> {
    if !(rates.compute_rate > 0.0 && rates.transfer_rate > 0.0) {
        return Err(ScheduleError::Rates);
    }
    let ops: Vec<&ChunkOp> = s.ops().collect();
    // Index of the next compute op at or after each position.
    let mut next_compute = vec![usize::MAX; ops.len() + 1];
    let mut compute_rank = vec![usize::MAX; ops.len()];
    let mut rank = 0;
    for k in 0..ops.len() {
        if !ops[k].kind.is_transfer() {
            compute_rank[k] = rank;
            rank += 1;
        }
    }
    for k in (0..ops.len()).rev() {
        next_compute[k] = if ops[k].kind.is_transfer() { next_compute[k + 1] } else { compute_rank[k] };
    }
    let mut compute_end: Vec<f64> = Vec::with_capacity(rank);
    let mut last_touch_end: BTreeMap<Buffer, f64> = BTreeMap::new();
    let (mut compute_free, mut transfer_free) = (0.0f64, 0.0f64);
    let mut transfers_done = 0.0f64;
    let mut events = Vec::new();
    let (mut compute_time, mut transfer_time) = (0.0, 0.0);
    for (k, op) in ops.iter().enumerate() {
        if op.kind.is_transfer() {
            if op.cost.bytes == 0 {
                continue;
            }
            let duration = op.cost.bytes as f64 / rates.transfer_rate;
            let consumer = next_compute[k];
            let mut ready = transfer_free;
            if consumer != usize::MAX && consumer >= 2 {
                ready = ready.max(compute_end[consumer - 2]);
            }
            if op.kind == OpKind::SwapOut {
                for b in &op.reads {
                    if let Some(&t) = last_touch_end.get(b) {
                        ready = ready.max(t);
                    }
                }
            }
            let end = ready + duration;
            transfer_free = end;
            transfers_done = end;
            transfer_time += duration;
            events.push(TimelineEvent { op: op.label(), resource: Resource::Transfer, start: ready, end });
        } else {
            let duration = op.cost.flops as f64 / rates.compute_rate;
            let start = compute_free.max(transfers_done);
            let end = start + duration;
            compute_free = end;
            compute_end.push(end);
            compute_time += duration;
            for b in op.touched() {
                last_touch_end.insert(*b, end);
            }
            events.push(TimelineEvent { op: op.label(), resource: Resource::Compute, start, end });
        }
    }
    let makespan = compute_free.max(transfer_free);
    Ok(Timeline {
        events,
        makespan,
        stall_time: makespan - compute_time,
        compute_time,
        transfer_time,
    })
}
