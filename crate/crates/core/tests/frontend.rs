use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saga_core::frontend::{
    evaluate_expr, trace_udf, validate_program, Bindings, Ctx, Eager, LayerProgram, LayerSpec, Placeholder,
    Signature, Stage, Val,
};
use saga_core::tensor::{ElementwiseOp, Tensor};
use saga_core::zoo::{build_model, ModelKind, ModelShape};

#[derive(Clone, Copy, Debug)]
enum Step {
    Unary(ElementwiseOp, usize),
    Binary(ElementwiseOp, usize, usize),
    Linear(usize),
}

fn step() -> impl Strategy<Value = Step> {
    let unary = prop_oneof![Just(ElementwiseOp::Sigmoid), Just(ElementwiseOp::Tanh), Just(ElementwiseOp::Relu)];
    let binary = prop_oneof![
        Just(ElementwiseOp::Add),
        Just(ElementwiseOp::Sub),
        Just(ElementwiseOp::Mul),
        Just(ElementwiseOp::Max)
    ];
    prop_oneof![
        (unary, any::<usize>()).prop_map(|(o, a)| Step::Unary(o, a)),
        (binary, any::<usize>(), any::<usize>()).prop_map(|(o, a, b)| Step::Binary(o, a, b)),
        any::<usize>().prop_map(Step::Linear),
    ]
}

/// Interprets a step list as an ApplyEdge function. Operand indices wrap
/// into the values built so far; edge data (width 1) broadcasts per row.
fn program(steps: &[Step], c: &mut dyn Ctx) -> saga_core::frontend::Result<Val> {
    let mut vals = vec![c.src()?, c.dest()?];
    let data = c.data()?;
    for &s in steps {
        let n = vals.len();
        let v = match s {
            Step::Unary(op, a) => c.elementwise(op, vals[a % n], None)?,
            Step::Binary(op, a, b) if b % 3 == 0 => c.elementwise(op, vals[a % n], Some(data))?,
            Step::Binary(op, a, b) => c.elementwise(op, vals[a % n], Some(vals[b % n]))?,
            Step::Linear(a) => {
                let w = c.param("w")?;
                c.matmul(vals[a % n], w)?
            }
        };
        vals.push(v);
    }
    Ok(*vals.last().expect("nonempty"))
}

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn traced_equals_eager(steps in prop::collection::vec(step(), 1..12), rows in 1usize..6, width in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(&mut rng, vec![width, width]);
        let params: BTreeMap<String, Tensor> = [("w".to_string(), w)].into();
        let sig = Signature::new()
            .rows(Placeholder::EdgeSrc, width)
            .rows(Placeholder::EdgeDest, width)
            .rows(Placeholder::EdgeData, 1)
            .params(&params);
        let udf = |c: &mut dyn Ctx| program(&steps, c);
        let g = trace_udf(Stage::ApplyEdge, &udf, &sig).unwrap();
        let b = Bindings::new()
            .with_params(&params)
            .with(Placeholder::EdgeSrc, random(&mut rng, vec![rows, width]))
            .with(Placeholder::EdgeDest, random(&mut rng, vec![rows, width]))
            .with(Placeholder::EdgeData, random(&mut rng, vec![rows, 1]));
        let traced = evaluate_expr(&g, &b, None).unwrap();
        let eager = Eager::run(Stage::ApplyEdge, &udf, &b).unwrap();
        prop_assert_eq!(traced.data(), eager.data());
    }
}

#[test]
fn zoo_programs_validate_and_reject_scope_violations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shape = ModelShape { layers: 1, input_width: 3, hidden: 3, output_width: 3, edge_types: 2 };
    for kind in ModelKind::ALL {
        let p = &build_model(kind, &shape, &mut rng).unwrap()[0];
        assert!(validate_program(p).is_ok(), "{kind}");
        let spec = LayerSpec {
            input_width: p.input_width,
            edge_data_width: p.edge_data_width,
            accumulator: p.accumulator,
            params: p.params.clone(),
        };
        let swapped = LayerProgram::from_parts(&p.name, spec, p.apply_vertex.clone(), p.apply_edge.clone());
        let diags = validate_program(&swapped).unwrap_err();
        assert!(diags.len() >= 2, "{kind}: {diags:?}");
    }
}

#[test]
fn accum_inside_apply_edge_is_rejected() {
    let sig = Signature::new().rows(Placeholder::EdgeSrc, 2).rows(Placeholder::Accum, 2);
    assert!(trace_udf(Stage::ApplyEdge, &|c| c.accum(), &sig).is_err());
    let b = Bindings::new().with(Placeholder::Accum, Tensor::zeros(vec![1, 2], Default::default()));
    assert!(Eager::run(Stage::ApplyEdge, &|c| c.accum(), &b).is_err());
}
