//! Acceptance checks. Prints one pass/fail line per criterion and exits
//! non-zero if any fails.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saga_cli::{run_train, to_json, RunConfig};
use saga_core::dataflow::{build_layer_dataflow, Buffer, BuildOptions, ChunkDataflow, Direction, OpKind};
use saga_core::engine::{softmax_cross_entropy, Budget, Engine, EngineConfig};
use saga_core::frontend::{ExprGraph, LayerProgram, NodeOp};
use saga_core::graph::{partition_2d, random_graph, Graph, Partition, SynthSpec};
use saga_core::kernels::{apply_edge_chunk, scatter_chunk, AccumState, KernelConfig, Kernels, Need, VertexSide};
use saga_core::oracle::{dense_adjacency_aggregate, dense_forward, dense_forward_model, finite_diff_grad};
use saga_core::passes::{fuse_sag, hoist_vertex_computation, optimize};
use saga_core::ring::{build_nonring_schedule, build_ring_schedule, maximal_fat_tree, speedup, DeviceTopology, RingAction};
use saga_core::schedule::{build_schedule, Schedule, Strategy};
use saga_core::tensor::{DType, Tensor};
use saga_core::zoo::{build_commnet, build_ggcn, build_model, ModelKind, ModelShape};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn engine(intervals: usize, budget: Budget, threads: usize) -> Engine {
    Engine::new(EngineConfig {
        intervals,
        budget,
        strategy: Strategy::Locality,
        kernels: KernelConfig { threads, subgroup_edges: None },
    })
    .expect("engine")
}

fn model(kind: ModelKind, seed: u64, spec: SynthSpec, shape: &ModelShape) -> (Vec<LayerProgram>, Graph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(&SynthSpec { edge_types: Some(shape.edge_types), ..spec }, &mut rng).expect("graph");
    let g = kind.prepare_graph(&g).expect("prepare");
    (build_model(kind, shape, &mut rng).expect("model"), g)
}

/// Chunked 2-layer forward under a budget that forces swapping vs. the
/// dense oracle.
fn oracle_equivalence() -> Check {
    let shape = ModelShape { layers: 2, input_width: 16, hidden: 16, output_width: 8, edge_types: 3 };
    let mut worst = 0.0f64;
    let mut runs = 0;
    for kind in ModelKind::ALL {
        for k in 0..20u64 {
            let mut r = ChaCha8Rng::seed_from_u64(1000 + k);
            let vertices = r.gen_range(40..=200);
            let edges = r.gen_range(vertices..=2000.min(vertices * vertices));
            let spec = SynthSpec { vertices, edges, features: 16, classes: None, edge_types: None };
            let (layers, g) = model(kind, k, spec, &shape);
            let layers: Vec<LayerProgram> = if k % 2 == 1 { layers.iter().map(|p| optimize(p).0).collect() } else { layers };
            let want = dense_forward_model(&layers, &g).map_err(|e| e.to_string())?;
            let got = engine(4, Budget::Tight, 1).forward(&layers, &g, false).map_err(|e| e.to_string())?;
            for (l, f) in got.layers.iter().enumerate() {
                ensure(f.stats.counters.swap_bytes() > 0, || format!("{kind} graph {k} layer {l} did not swap"))?;
            }
            let d = got.output.max_abs_diff(&want);
            ensure(d <= 1e-10, || format!("{kind} graph {k}: max abs diff {d:e}"))?;
            worst = worst.max(d);
            runs += 1;
        }
    }
    Ok(format!("{runs} runs, max abs diff {worst:.2e}"))
}

fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let num = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.data().iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Tape gradients of every parameter vs. central differences of the
/// dense-oracle loss.
fn gradient_correctness() -> Check {
    let shape = ModelShape { layers: 2, input_width: 4, hidden: 5, output_width: 3, edge_types: 2 };
    let spec = SynthSpec { vertices: 18, edges: 60, features: 4, classes: Some(3), edge_types: None };
    let mut worst = 0.0f64;
    let mut tensors = 0;
    for kind in ModelKind::ALL {
        let (layers, g) = model(kind, 5, spec, &shape);
        let labels = g.labels().expect("labels").to_vec();
        let e = engine(2, Budget::Tight, 1);
        let f = e.forward(&layers, &g, true).map_err(|e| e.to_string())?;
        let (_, seed) = softmax_cross_entropy(&f.output, &labels, 3).map_err(|e| e.to_string())?;
        let (grads, _) = e.backward(&layers, &g, &f, &seed).map_err(|e| e.to_string())?;
        let flat: Vec<(usize, String, Tensor)> = layers
            .iter()
            .enumerate()
            .flat_map(|(k, p)| p.params.iter().map(move |(n, t)| (k, n.clone(), t.clone())))
            .collect();
        let values: Vec<Tensor> = flat.iter().map(|f| f.2.clone()).collect();
        let fd = finite_diff_grad(
            |ps| {
                let mut probe = layers.clone();
                for ((k, name, _), t) in flat.iter().zip(ps) {
                    probe[*k].set_param(name, t.clone()).expect("param");
                }
                let out = dense_forward_model(&probe, &g)?;
                Ok(softmax_cross_entropy(&out, &labels, 3).expect("loss").0)
            },
            &values,
            1e-6,
        )
        .map_err(|e| e.to_string())?;
        for ((k, name, _), want) in flat.iter().zip(&fd) {
            let err = rel_err(&grads[*k][name], want);
            ensure(err <= 1e-5, || format!("{kind} layer {k} {name}: rel err {err:e}"))?;
            worst = worst.max(err);
            tensors += 1;
        }
    }
    Ok(format!("{tensors} parameter tensors, max rel err {worst:.2e}"))
}

fn dense_grid_ggcn(seed: u64) -> ChunkDataflow {
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
    let g = Graph::new(n, edges, None, Tensor::zeros(vec![n, 8], DType::F64)).expect("graph");
    let p = build_ggcn(8, 8, &mut rng).expect("ggcn");
    let part = partition_2d(&g, 4).expect("partition");
    assert!((0..3).all(|i| (0..3).all(|j| !part.chunk(i, j).is_empty())));
    build_layer_dataflow(&p, &part, Direction::Forward, BuildOptions::default())
}

/// Fewest reload plus write-back bytes over every eviction choice for a
/// fixed compute order.
fn min_swap_bytes(df: &ChunkDataflow, order: &[usize], budget: u64) -> u64 {
    let touched: Vec<BTreeSet<Buffer>> = order.iter().map(|&k| df.ops[k].touched().copied().collect()).collect();
    let last_use = |b: &Buffer| touched.iter().rposition(|t| t.contains(b)).expect("used");
    let first_use = |b: &Buffer| touched.iter().position(|t| t.contains(b)).expect("used");
    type State = (usize, Vec<(Buffer, bool)>);
    let mut best: HashMap<State, u64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert((0, Vec::new()), 0);
    heap.push(Reverse((0u64, (0usize, Vec::new()))));
    while let Some(Reverse((cost, (pos, resident)))) = heap.pop() {
        if best.get(&(pos, resident.clone())).is_some_and(|&c| c < cost) {
            continue;
        }
        if pos == order.len() {
            return cost;
        }
        let op = &df.ops[order[pos]];
        let now = &touched[pos];
        let held = |b: &Buffer| resident.iter().any(|(r, _)| r == b);
        let used: u64 = resident.iter().map(|(b, _)| df.size(b)).sum();
        let required: u64 = now.iter().filter(|b| !held(b)).map(|b| df.size(b)).sum();
        let reload: u64 = now.iter().filter(|b| !held(b) && first_use(b) < pos).map(|b| df.size(b)).sum();
        let candidates: Vec<(Buffer, bool)> = resident.iter().filter(|(b, _)| !now.contains(b)).copied().collect();
        for mask in 0u32..(1 << candidates.len()) {
            let evicted: Vec<&(Buffer, bool)> =
                candidates.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, c)| c).collect();
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

fn compute_order(s: &Schedule) -> Vec<usize> {
    s.order.iter().copied().filter(|&k| !s.dataflow.ops[k].kind.is_transfer()).collect()
}

fn scheduling_dominance() -> Check {
    let mut lines = Vec::new();
    for seed in 0..3 {
        let df = dense_grid_ggcn(seed);
        let ws = df.ops.iter().map(|o| df.working_set(o)).max().expect("ops");
        let v = df.size(&Buffer::Vertex(0));
        for budget in [ws, ws + v] {
            let plan = |s| build_schedule(&df, s, Some(budget)).map_err(|e| e.to_string());
            let (loc, stage, dest) = (plan(Strategy::Locality)?, plan(Strategy::StageBased)?, plan(Strategy::DestOrder)?);
            let l = loc.counters.swap_bytes();
            ensure(l < stage.counters.swap_bytes() && l < dest.counters.swap_bytes(), || {
                format!("seed {seed} budget {budget}: locality {l}, stage {}, dest {}", stage.counters.swap_bytes(), dest.counters.swap_bytes())
            })?;
            let oracle = min_swap_bytes(&df, &compute_order(&loc), budget);
            ensure(l == oracle, || format!("seed {seed} budget {budget}: locality {l} bytes, enumerated minimum {oracle}"))?;
            if seed == 0 && budget == ws {
                lines.push(format!(
                    "locality {l} = oracle {oracle}, stage {}, dest {}",
                    stage.counters.swap_bytes(),
                    dest.counters.swap_bytes()
                ));
            }
        }
    }
    Ok(lines.join("; "))
}

fn matmuls(g: &ExprGraph) -> usize {
    g.nodes().iter().filter(|n| n.op == NodeOp::Matmul).count()
}

fn applications(p: &LayerProgram, g: &Graph) -> usize {
    matmuls(&p.apply_edge) * g.num_edges() + p.precompute.iter().map(|pc| matmuls(&pc.expr)).sum::<usize>() * g.num_vertices()
}

fn layer(kind: ModelKind, seed: u64) -> LayerProgram {
    let shape = ModelShape { layers: 1, input_width: 5, hidden: 6, output_width: 5, edge_types: 3 };
    build_model(kind, &shape, &mut ChaCha8Rng::seed_from_u64(seed)).expect("model").remove(0)
}

fn graph_for(kind: ModelKind, seed: u64, vertices: usize, edges: usize) -> Graph {
    let spec = SynthSpec { vertices, edges, features: 5, classes: None, edge_types: Some(3) };
    kind.prepare_graph(&random_graph(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).expect("graph")).expect("prepare")
}

fn optimization_passes() -> Check {
    let ggcn = layer(ModelKind::GGcn, 0);
    let g = graph_for(ModelKind::GGcn, 1, 10, 30);
    let hoisted = hoist_vertex_computation(&ggcn).0;
    let (before, after) = (applications(&ggcn, &g), applications(&hoisted, &g));
    ensure(before == 2 * g.num_edges() && after == 2 * g.num_vertices(), || format!("G-GCN matmul applications {before} -> {after}"))?;
    ensure(fuse_sag(&hoisted).1.applied, || "post-hoist G-GCN not fused".into())?;
    ensure(fuse_sag(&layer(ModelKind::Gcn, 0)).1.applied, || "GCN not fused".into())?;

    let e = engine(3, Budget::Unbounded, 1);
    let mut fused_diff = 0.0f64;
    for kind in [ModelKind::Gcn, ModelKind::GGcn] {
        let p = hoist_vertex_computation(&layer(kind, 2)).0;
        let f = fuse_sag(&p).0;
        for seed in 0..10 {
            let g = graph_for(kind, 50 + seed, 30, 150);
            let a = e.forward(std::slice::from_ref(&p), &g, false).map_err(|e| e.to_string())?.output;
            let b = e.forward(std::slice::from_ref(&f), &g, false).map_err(|e| e.to_string())?.output;
            fused_diff = fused_diff.max(a.max_abs_diff(&b));
        }
    }
    ensure(fused_diff <= 1e-12, || format!("fused vs unfused diff {fused_diff:e}"))?;

    let mut pass_diff = 0.0f64;
    for kind in ModelKind::ALL {
        let p = layer(kind, 3);
        let variants = [hoist_vertex_computation(&p).0, fuse_sag(&p).0, optimize(&p).0];
        for seed in 0..50 {
            let g = graph_for(kind, 100 + seed, 20, 60);
            let want = dense_forward(&p, &g, &p.params).map_err(|e| e.to_string())?;
            for q in &variants {
                pass_diff = pass_diff.max(dense_forward(q, &g, &q.params).map_err(|e| e.to_string())?.max_abs_diff(&want));
            }
        }
    }
    ensure(pass_diff <= 1e-12, || format!("pass semantics diff {pass_diff:e}"))?;
    Ok(format!("G-GCN matmuls {before} -> {after}; fused diff {fused_diff:.1e}; passes diff {pass_diff:.1e}"))
}

fn backward_rank(kind: OpKind) -> Option<usize> {
    match kind {
        OpKind::ApplyVertex => Some(0),
        OpKind::Gather => Some(1),
        OpKind::ApplyEdge => Some(2),
        OpKind::Scatter => Some(3),
        OpKind::PreCompute => Some(4),
        _ => None,
    }
}

fn backward_stage_order() -> Check {
    let edges: Vec<(usize, usize)> = (0..6).flat_map(|s| (0..6).map(move |d| (s, d))).collect();
    let g = Graph::new(6, edges, None, Tensor::zeros(vec![6, 5], DType::F64)).expect("graph");
    let part = partition_2d(&g, 2).expect("partition");
    let mut checked = 0;
    for kind in ModelKind::ALL {
        let p = layer(kind, 0);
        for program in [p.clone(), optimize(&p).0] {
            let df = build_layer_dataflow(&program, &part, Direction::Backward, BuildOptions { training: true, ..Default::default() });
            for (v, preds) in df.deps.iter().enumerate() {
                for &u in preds {
                    let (a, b) = (&df.ops[u], &df.ops[v]);
                    let (ra, rb) = (backward_rank(a.kind), backward_rank(b.kind));
                    ensure(ra.is_some() && rb.is_some() && ra <= rb, || format!("{kind}: {} -> {}", a.label(), b.label()))?;
                    checked += 1;
                }
            }
            for kinds in [OpKind::ApplyVertex, OpKind::Gather, OpKind::ApplyEdge, OpKind::Scatter] {
                ensure(df.ops.iter().any(|o| o.kind == kinds), || format!("{kind}: no backward {kinds:?}"))?;
            }
        }
    }
    Ok(format!("{checked} dependency edges ordered across 10 backward dataflows"))
}

fn ring_streaming() -> Check {
    let t = DeviceTopology::switched(4, 2, 1.0);
    let loaders = maximal_fat_tree(&t);
    let names: Vec<&str> = loaders.iter().map(|&d| t.device_name(d)).collect();
    ensure(names == ["dev0", "dev2"], || format!("fat-tree selected {names:?}"))?;
    let chunks = 8;
    let s = build_ring_schedule(&t, chunks, &loaders).map_err(|e| e.to_string())?;
    // Chunk ids count from zero: the first step loads the first and third.
    let first: Vec<(usize, usize)> = s.steps[0]
        .iter()
        .enumerate()
        .flat_map(|(d, acts)| acts.iter().filter_map(move |a| matches!(a, RingAction::LoadFromHost(_)).then(|| (d, a.chunk()))))
        .collect();
    ensure(first == [(0, 0), (2, 2)], || format!("first-step loads {first:?}"))?;
    for (label, sched) in [("ring", &s), ("non-ring", &build_nonring_schedule(&t, chunks).map_err(|e| e.to_string())?)] {
        let mut loads = vec![0; chunks];
        let mut computes = vec![vec![0; chunks]; 4];
        for step in &sched.steps {
            for (d, acts) in step.iter().enumerate() {
                for a in acts {
                    match a {
                        RingAction::LoadFromHost(c) => loads[*c] += 1,
                        RingAction::Compute(c) => computes[d][*c] += 1,
                        _ => {}
                    }
                }
            }
        }
        ensure(computes.iter().flatten().all(|&n| n == 1), || format!("{label}: chunk computed {computes:?}"))?;
        if label == "ring" {
            ensure(loads.iter().all(|&n| n == 1), || format!("ring host loads per chunk {loads:?}"))?;
        }
    }
    let shared = DeviceTopology::shared_root(2, 1.0);
    let sp = speedup(&shared, 64, 1.0, 1.0).map_err(|e| e.to_string())?;
    let (r, n) = (sp.ring_speedup(), sp.nonring_speedup());
    ensure(r >= 1.8 && n <= 1.2, || format!("ring speedup {r:.3}, non-ring {n:.3}"))?;
    Ok(format!("loaders {names:?}; ring speedup {r:.2}x, non-ring {n:.2}x"))
}

fn slice(t: &Tensor, part: &Partition, i: usize) -> Tensor {
    let r = part.interval(i);
    t.slice_rows(r.start, r.end)
}

fn aggregate(k: &Kernels, p: &LayerProgram, part: &Partition, h: &Tensor) -> Vec<AccumState> {
    (0..part.p())
        .map(|j| {
            let mut state = AccumState::new(p.accumulator, part.interval(j).len(), p.edge_width(), DType::F64);
            for i in 0..part.p() {
                let (src, dest) = (slice(h, part, i), slice(h, part, j));
                let e = scatter_chunk(
                    VertexSide { features: &src, pre: &[] },
                    VertexSide { features: &dest, pre: &[] },
                    part.chunk(i, j),
                    &Need::of(&p.apply_edge),
                )
                .expect("scatter");
                let acc = apply_edge_chunk(&p.apply_edge, &e, &p.params).expect("apply edge");
                k.gather_chunk(&acc, part.chunk(i, j), &mut state).expect("gather");
            }
            state
        })
        .collect()
}

fn kernel_properties() -> Check {
    let passthrough = build_commnet(6, 4, &mut ChaCha8Rng::seed_from_u64(0)).expect("commnet");
    let single = Kernels::new(KernelConfig { threads: 1, subgroup_edges: None }).map_err(|e| e.to_string())?;
    let many = Kernels::new(KernelConfig { threads: 4, subgroup_edges: None }).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let spec = SynthSpec { vertices: 50, edges: 400, features: 6, classes: None, edge_types: None };
        let g = random_graph(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).expect("graph");
        let part = partition_2d(&g, 13).expect("partition");
        let parts: Vec<Tensor> = aggregate(&single, &passthrough, &part, g.features()).iter().map(|s| s.finish().expect("finish").0).collect();
        let got = Tensor::concat_rows(&parts).expect("concat");
        worst = worst.max(got.max_abs_diff(&dense_adjacency_aggregate(&g, g.features())));
    }
    ensure(worst <= 1e-10, || format!("passthrough sum vs dense product: {worst:e}"))?;

    let programs: Vec<LayerProgram> = [ModelKind::Gcn, ModelKind::MpGcn, ModelKind::GGcn, ModelKind::GgNn].iter().map(|&k| layer(k, 4)).collect();
    for c in 0..20u64 {
        let mut r = ChaCha8Rng::seed_from_u64(500 + c);
        let (n, m) = (r.gen_range(5..60), r.gen_range(0..800));
        let kind = ModelKind::ALL[c as usize % 5];
        let g = graph_for(kind, 500 + c, n, m);
        let part = partition_2d(&g, n).expect("partition");
        for p in programs.iter().filter(|p| p.input_width == 5) {
            if (p.name == "ggnn") != (kind == ModelKind::GgNn) {
                continue;
            }
            let a = aggregate(&single, p, &part, g.features());
            let b = aggregate(&many, p, &part, g.features());
            ensure(a == b, || format!("chunk {c} {}: threaded result differs", p.name))?;
        }
    }
    Ok(format!("max diff vs dense Aᵀ·H {worst:.1e}; 20 chunks bitwise equal across 1 and 4 threads"))
}

fn end_to_end() -> Check {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/tiny20/config.json");
    let cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
    ensure(cfg.model == "gcn" && cfg.layers == 2 && cfg.epochs == 10 && cfg.lr == 0.01 && cfg.threads == 1, || format!("{cfg:?}"))?;
    let a = run_train(&cfg).map_err(|e| e.to_string())?;
    let b = run_train(&cfg).map_err(|e| e.to_string())?;
    ensure(a.metrics.vertices == 20, || format!("{} vertices", a.metrics.vertices))?;
    let mut losses: Vec<f64> = a.metrics.epochs.iter().map(|e| e.loss).collect();
    losses.push(a.metrics.final_loss);
    ensure(losses.windows(2).all(|w| w[1] < w[0]), || format!("losses {losses:?}"))?;
    ensure(to_json(&a.metrics).ok() == to_json(&b.metrics).ok(), || "metrics differ between runs".into())?;
    for (x, y) in a.trained.iter().zip(&b.trained) {
        for (name, t) in &x.params {
            ensure(t.data() == y.params[name].data(), || format!("parameter {name} differs between runs"))?;
        }
    }
    Ok(format!("loss {:.6} -> {:.6} over 10 epochs, bit-identical reruns", losses[0], losses[losses.len() - 1]))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Duration, fn() -> Check); 8] = [
        (1, "oracle equivalence", Duration::from_secs(60), oracle_equivalence),
        (2, "gradient correctness", Duration::from_secs(120), gradient_correctness),
        (3, "scheduling dominance", Duration::from_secs(30), scheduling_dominance),
        (4, "optimization passes", Duration::from_secs(60), optimization_passes),
        (5, "backward stage order", Duration::from_secs(30), backward_stage_order),
        (6, "ring streaming", Duration::from_secs(10), ring_streaming),
        (7, "kernel properties", Duration::from_secs(30), kernel_properties),
        (8, "end-to-end training", Duration::from_secs(30), end_to_end),
    ];
    let mut failed = 0;
    for (n, name, limit, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let result = result.and_then(|m| if took <= limit { Ok(m) } else { Err(format!("{m}; over the {limit:?} limit")) });
        match result {
            Ok(m) => println!("[PASS] criterion {n} {name} ({:.2}s): {m}", took.as_secs_f64()),
            Err(m) => {
                failed += 1;
                println!("[FAIL] criterion {n} {name} ({:.2}s): {m}", took.as_secs_f64());
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
