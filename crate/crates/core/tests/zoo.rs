use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use saga_core::engine::{Budget, Engine, EngineConfig};
use saga_core::graph::{random_graph, Graph, SynthSpec};
use saga_core::oracle::{dense_adjacency_aggregate, dense_forward, dense_forward_model, naive_matmul};
use saga_core::tensor::{DType, Tensor};
use saga_core::zoo::{build_gcn, build_ggcn, build_model, ModelKind, ModelShape};

fn relu(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x.max(0.0)).collect()).unwrap()
}

fn scale(t: &Tensor, k: f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x * k).collect()).unwrap()
}

fn engine_forward(layers: &[saga_core::frontend::LayerProgram], g: &Graph) -> Tensor {
    let e = Engine::new(EngineConfig { intervals: 2, budget: Budget::Tight, ..Default::default() }).unwrap();
    e.forward(layers, g, false).unwrap().output
}

#[test]
fn ggcn_with_zero_gates_halves_the_neighbor_sum() {
    let f = Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
    let g = Graph::new(2, vec![(0, 1), (1, 0), (1, 1)], None, f).unwrap();
    let mut p = build_ggcn(2, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    p.set_param("w_h", Tensor::zeros(vec![2, 2], DType::F64)).unwrap();
    p.set_param("w_c", Tensor::zeros(vec![2, 2], DType::F64)).unwrap();
    p.set_param("w", Tensor::identity(2, DType::F64)).unwrap();
    let want = relu(&scale(&dense_adjacency_aggregate(&g, g.features()), 0.5));
    assert_eq!(want.data(), &[1.5, 2.0, 2.0, 1.0]);
    assert_eq!(dense_forward(&p, &g, &p.params).unwrap(), want);
    assert_eq!(engine_forward(std::slice::from_ref(&p), &g), want);
}

#[test]
fn gcn_with_unit_weights_sums_in_neighbors() {
    let f = Tensor::new(vec![3, 2], vec![1.0, -1.0, 2.0, -5.0, 0.5, 0.5]).unwrap();
    let g = Graph::new(3, vec![(0, 2), (1, 2), (2, 0), (1, 0)], None, f).unwrap();
    let mut p = build_gcn(2, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    p.set_param("w", Tensor::identity(2, DType::F64)).unwrap();
    let out = dense_forward(&p, &g, &p.params).unwrap();
    assert_eq!(out.data(), &[2.5, 0.0, 0.0, 0.0, 3.0, 0.0]);
    assert_eq!(engine_forward(std::slice::from_ref(&p), &g), out);
}

/// With unit edge data GCN is `ReLU(Aᵀ · H · W)` in row-vector form.
#[test]
fn oracle_matches_linear_closed_form() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = SynthSpec { vertices: 25, edges: 120, features: 5, classes: None, edge_types: None };
        let g = random_graph(&spec, &mut rng).unwrap();
        let p = build_gcn(5, 3, &mut rng).unwrap();
        let want = relu(&naive_matmul(&dense_adjacency_aggregate(&g, g.features()), &p.params["w"]));
        let got = dense_forward(&p, &g, &p.params).unwrap();
        assert!(got.max_abs_diff(&want) <= 1e-12, "seed {seed}");
    }
}

#[test]
fn two_layer_models_match_the_oracle_on_30_vertices() {
    for kind in ModelKind::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let spec = SynthSpec { vertices: 30, edges: 150, features: 6, classes: None, edge_types: Some(3) };
        let g = kind.prepare_graph(&random_graph(&spec, &mut rng).unwrap()).unwrap();
        let shape = ModelShape { layers: 2, input_width: 6, hidden: 7, output_width: 4, edge_types: 3 };
        let layers = build_model(kind, &shape, &mut rng).unwrap();
        let want = dense_forward_model(&layers, &g).unwrap();
        let got = engine_forward(&layers, &g);
        assert!(got.max_abs_diff(&want) <= 1e-10, "{kind}");
        let width = if kind.fixed_width() { 6 } else { 4 };
        assert_eq!(got.shape(), &[30, width]);
    }
}

#[test]
fn unknown_model_name_lists_the_valid_ones() {
    let err = "gat".parse::<ModelKind>().unwrap_err().to_string();
    for kind in ModelKind::ALL {
        assert!(err.contains(kind.name()), "{err}");
    }
}
