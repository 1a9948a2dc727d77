use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saga_core::dataflow::{build_layer_dataflow, Buffer, BuildOptions, ChunkDataflow, Direction, OpKind};
use saga_core::graph::{partition_2d, Graph};
use saga_core::passes::hoist_vertex_computation;
use saga_core::schedule::{build_schedule, Schedule, Strategy};
use saga_core::tensor::{DType, Tensor};
use saga_core::zoo::build_ggcn;

fn dense_grid_ggcn(seed: u64, hoist: bool) -> ChunkDataflow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 12;
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if rng.gen_bool(0.5) {
                edges.push((s, d));
            }
        }
    }
    let g = Graph::new(n, edges, None, Tensor::zeros(vec![n, 8], DType::F64)).unwrap();
    let mut p = build_ggcn(8, 8, &mut rng).unwrap();
    if hoist {
        p = hoist_vertex_computation(&p).0;
    }
    let part = partition_2d(&g, 4).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!(!part.chunk(i, j).is_empty());
        }
    }
    build_layer_dataflow(&p, &part, Direction::Forward, BuildOptions::default())
}

/// Minimum reload plus write-back bytes over every eviction choice for a
/// fixed compute order, by shortest path over resident sets.
fn min_swap_bytes(df: &ChunkDataflow, order: &[usize], budget: u64) -> u64 {
    let touched: Vec<BTreeSet<Buffer>> = order.iter().map(|&k| df.ops[k].touched().copied().collect()).collect();
    let last_use = |b: &Buffer| touched.iter().rposition(|t| t.contains(b)).unwrap();
    let first_use = |b: &Buffer| touched.iter().position(|t| t.contains(b)).unwrap();
    type State = (usize, Vec<(Buffer, bool)>);
    let mut best: HashMap<State, u64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let start: State = (0, Vec::new());
    best.insert(start.clone(), 0);
    heap.push(Reverse((0u64, start)));
    while let Some(Reverse((cost, state))) = heap.pop() {
        if best.get(&state).is_some_and(|&c| c < cost) {
            continue;
        }
        let (pos, resident) = state;
        if pos == order.len() {
            return cost;
        }
        let op = &df.ops[order[pos]];
        let now = &touched[pos];
        let used: u64 = resident.iter().map(|(b, _)| df.size(b)).sum();
        let required: u64 = now
            .iter()
            .filter(|b| !resident.iter().any(|(r, _)| r == *b))
            .map(|b| df.size(b))
            .sum();
        let reload: u64 = now
            .iter()
            .filter(|b| !resident.iter().any(|(r, _)| r == *b) && first_use(b) < pos)
            .map(|b| df.size(b))
            .sum();
        let candidates: Vec<(Buffer, bool)> = resident.iter().filter(|(b, _)| !now.contains(b)).copied().collect();
        for mask in 0u32..(1 << candidates.len()) {
            let evicted: Vec<&(Buffer, bool)> = candidates.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, c)| c).collect();
            let freed: u64 = evicted.iter().map(|(b, _)| df.size(b)).sum();
            if used - freed + required > budget {
                continue;
            }
            let write_back: u64 = evicted.iter().filter(|(_, d)| *d).map(|(b, _)| df.size(b)).sum();
            let mut next: BTreeMap<Buffer, bool> = resident.iter().filter(|c| !evicted.contains(c)).copied().collect();
            for b in now {
                next.entry(*b).or_insert(false);
            }
            for b in op.creates.iter().chain(&op.updates) {
                next.insert(*b, true);
            }
            next.retain(|b, _| last_use(b) > pos);
            let state: State = (pos + 1, next.into_iter().collect());
            let c = cost + reload + write_back;
            if best.get(&state).is_none_or(|&old| c < old) {
                best.insert(state.clone(), c);
                heap.push(Reverse((c, state)));
            }
        }
    }
    panic!("no feasible plan");
}

fn compute_positions(s: &Schedule) -> Vec<usize> {
    s.order.iter().copied().filter(|&k| !s.dataflow.ops[k].kind.is_transfer()).collect()
}

#[test]
fn locality_plan_matches_exhaustive_minimum() {
    for hoist in [false, true] {
        let df = dense_grid_ggcn(7, hoist);
        let ws = df.ops.iter().map(|o| df.working_set(o)).max().unwrap();
        let v = df.size(&Buffer::Vertex(0));
        for extra in [0, v / 2, v, 2 * v, 3 * v] {
            let budget = ws + extra;
            let s = build_schedule(&df, Strategy::Locality, Some(budget)).unwrap();
            assert!(s.exact);
            let oracle = min_swap_bytes(&df, &compute_positions(&s), budget);
            assert_eq!(s.counters.swap_bytes(), oracle, "hoist={hoist} budget={budget}");
        }
    }
}

#[test]
fn locality_moves_fewest_bytes_on_dense_grid() {
    for seed in 0..5 {
        let df = dense_grid_ggcn(seed, false);
        let ws = df.ops.iter().map(|o| df.working_set(o)).max().unwrap();
        let v = df.size(&Buffer::Vertex(0));
        for budget in [ws, ws + v, ws + 2 * v] {
            let bytes = |s| build_schedule(&df, s, Some(budget)).unwrap().counters.swap_bytes();
            let loc = bytes(Strategy::Locality);
            assert!(loc < bytes(Strategy::StageBased), "seed {seed}");
            assert!(loc < bytes(Strategy::DestOrder), "seed {seed}");
        }
    }
}

#[test]
fn swap_outs_are_matched_or_final() {
    let df = dense_grid_ggcn(1, false);
    let ws = df.ops.iter().map(|o| df.working_set(o)).max().unwrap();
    for s in Strategy::ALL {
        let sched = build_schedule(&df, s, Some(ws)).unwrap();
        let ops: Vec<_> = sched.ops().collect();
        for (k, op) in ops.iter().enumerate() {
            if let Some(saga_core::dataflow::Transfer::Out(mode)) = op.transfer {
                use saga_core::dataflow::SwapOutMode::*;
                let b = op.reads[0];
                let reloaded = ops[k + 1..].iter().any(|o| o.kind == OpKind::SwapIn && o.creates[0] == b);
                match mode {
                    Evict | Discard => assert!(reloaded, "{}", op.label()),
                    Spill | Free => assert!(!reloaded, "{}", op.label()),
                }
            }
        }
        assert!(sched.trace.iter().all(|&r| r <= ws));
        let order: Vec<usize> = compute_positions(&sched);
        assert!(df.is_topological(&order));
    }
}

