//! Ready-made layer programs: GCN, CommNet, max-pooling GCN, gated GCN and
//! gated graph neural network.
//!
//! All programs use the row convention `x · W` with `W` stored
//! `[in, out]`. Weights use Glorot-uniform initialization, biases start at
//! zero.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{Accumulator, Ctx, FrontendError, LayerProgram, LayerSpec, Result as FResult, Val};
use crate::graph::{Graph, GraphError};
use crate::tensor::{DType, Tensor};

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("{0} must be positive")]
    Dimension(&'static str),
    #[error("unknown model `{0}`; expected one of gcn, commnet, mpgcn, ggcn, ggnn")]
    UnknownModel(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T, E = ZooError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    CommNet,
    MpGcn,
    GGcn,
    GgNn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Gcn,
        ModelKind::CommNet,
        ModelKind::MpGcn,
        ModelKind::GGcn,
        ModelKind::GgNn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::CommNet => "commnet",
            ModelKind::MpGcn => "mpgcn",
            ModelKind::GGcn => "ggcn",
            ModelKind::GgNn => "ggnn",
        }
    }

    /// Whether every layer keeps the feature width (the recurrent model).
    pub fn fixed_width(self) -> bool {
        self == ModelKind::GgNn
    }

    /// Fills edge values the way the model reads them: degree normalization
    /// for GCN, integer types for GG-NN (all zero when the graph has none).
    pub fn prepare_graph(self, g: &Graph) -> Result<Graph> {
        Ok(match self {
            ModelKind::Gcn => g.with_degree_normalization()?,
            ModelKind::GgNn if g.edge_values().is_none() => {
                g.with_edge_values(vec![0.0; g.num_edges()])?
            }
            _ => g.clone(),
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ZooError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ZooError::UnknownModel(s.to_string()))
    }
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(vec![rows, cols], data).expect("finite weights")
}

fn zeros(n: usize) -> Tensor {
    Tensor::zeros(vec![n], DType::F64)
}

fn positive(pairs: &[(&'static str, usize)]) -> Result<()> {
    match pairs.iter().find(|(_, v)| *v == 0) {
        Some((what, _)) => Err(ZooError::Dimension(what)),
        None => Ok(()),
    }
}

fn spec(input: usize, acc: Accumulator, params: Vec<(&str, Tensor)>) -> LayerSpec {
    LayerSpec {
        input_width: input,
        edge_data_width: 1,
        accumulator: acc,
        params: params
            .into_iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect::<BTreeMap<_, _>>(),
    }
}

fn linear(c: &mut dyn Ctx, x: Val, w: &str) -> FResult<Val> {
    let w = c.param(w)?;
    c.matmul(x, w)
}

/// `acc = src * edge.data`, sum, `ReLU(accum · W)`.
pub fn build_gcn(f_in: usize, f_out: usize, rng: &mut impl Rng) -> Result<LayerProgram> {
    positive(&[("f_in", f_in), ("f_out", f_out)])?;
    let s = spec(f_in, Accumulator::Sum, vec![("w", glorot(rng, f_in, f_out))]);
    Ok(LayerProgram::new(
        "gcn",
        s,
        &|c| {
            let (src, data) = (c.src()?, c.data()?);
            c.mul(src, data)
        },
        &|c| {
            let a = c.accum()?;
            let h = linear(c, a, "w")?;
            c.relu(h)
        },
    )?)
}

/// `acc = src`, sum, `ReLU(vertex · W_H + accum · W_C)`.
pub fn build_commnet(f: usize, h: usize, rng: &mut impl Rng) -> Result<LayerProgram> {
    positive(&[("f", f), ("h", h)])?;
    let s = spec(
        f,
        Accumulator::Sum,
        vec![("w_h", glorot(rng, f, h)), ("w_c", glorot(rng, f, h))],
    );
    Ok(LayerProgram::new("commnet", s, &|c| c.src(), &|c| {
        let (v, a) = (c.vertex()?, c.accum()?);
        let hv = linear(c, v, "w_h")?;
        let ha = linear(c, a, "w_c")?;
        let sum = c.add(hv, ha)?;
        c.relu(sum)
    })?)
}

/// `acc = sigmoid(src · W_pool + b)`, max, `ReLU(accum · W)`.
pub fn build_mpgcn(f_in: usize, f_pool: usize, f_out: usize, rng: &mut impl Rng) -> Result<LayerProgram> {
    positive(&[("f_in", f_in), ("f_pool", f_pool), ("f_out", f_out)])?;
    let s = spec(
        f_in,
        Accumulator::Max,
        vec![
            ("w_pool", glorot(rng, f_in, f_pool)),
            ("b_pool", zeros(f_pool)),
            ("w", glorot(rng, f_pool, f_out)),
        ],
    );
    Ok(LayerProgram::new(
        "mpgcn",
        s,
        &|c| {
            let src = c.src()?;
            let h = linear(c, src, "w_pool")?;
            let b = c.param("b_pool")?;
            let h = c.add(h, b)?;
            c.sigmoid(h)
        },
        &|c| {
            let a = c.accum()?;
            let h = linear(c, a, "w")?;
            c.relu(h)
        },
    )?)
}

/// Edge gate `eta = sigmoid(src · W_H + dest · W_C)`, `acc = eta * src`,
/// sum, `ReLU(accum · W)`.
pub fn build_ggcn(f_in: usize, f_out: usize, rng: &mut impl Rng) -> Result<LayerProgram> {
    positive(&[("f_in", f_in), ("f_out", f_out)])?;
    let s = spec(
        f_in,
        Accumulator::Sum,
        vec![
            ("w_h", glorot(rng, f_in, f_in)),
            ("w_c", glorot(rng, f_in, f_in)),
            ("w", glorot(rng, f_in, f_out)),
        ],
    );
    Ok(LayerProgram::new(
        "ggcn",
        s,
        &|c| {
            let (src, dest) = (c.src()?, c.dest()?);
            let hs = linear(c, src, "w_h")?;
            let hd = linear(c, dest, "w_c")?;
            let pre = c.add(hs, hd)?;
            let eta = c.sigmoid(pre)?;
            c.mul(eta, src)
        },
        &|c| {
            let a = c.accum()?;
            let h = linear(c, a, "w")?;
            c.relu(h)
        },
    )?)
}

/// Name of the GG-NN propagation matrix for edge type `t`.
pub fn ggnn_type_param(t: usize) -> String {
    format!("a{t}")
}

/// `acc = src · A[edge.data]` with one matrix per edge type, sum, and a GRU
/// cell with input `accum` and state `vertex`:
///
/// ```text
/// z  = sigmoid(accum · W_z + vertex · U_z + b_z)
/// r  = sigmoid(accum · W_r + vertex · U_r + b_r)
/// h~ = tanh(accum · W_h + (r * vertex) · U_h + b_h)
/// h' = (1 - z) * vertex + z * h~
/// ```
pub fn build_ggnn(f: usize, edge_types: usize, rng: &mut impl Rng) -> Result<LayerProgram> {
    positive(&[("f", f), ("edge_types", edge_types)])?;
    let mut params: Vec<(String, Tensor)> = (0..edge_types)
        .map(|t| (ggnn_type_param(t), glorot(rng, f, f)))
        .collect();
    for gate in ["z", "r", "h"] {
        params.push((format!("w_{gate}"), glorot(rng, f, f)));
        params.push((format!("u_{gate}"), glorot(rng, f, f)));
        params.push((format!("b_{gate}"), zeros(f)));
    }
    let s = LayerSpec {
        input_width: f,
        edge_data_width: 1,
        accumulator: Accumulator::Sum,
        params: params.into_iter().collect(),
    };
    let ones = Tensor::filled(vec![f], 1.0, DType::F64).expect("finite");
    Ok(LayerProgram::new(
        "ggnn",
        s,
        &|c| {
            let (src, kind) = (c.src()?, c.data()?);
            let options = (0..edge_types)
                .map(|t| linear(c, src, &ggnn_type_param(t)))
                .collect::<FResult<Vec<_>>>()?;
            c.select(kind, &options)
        },
        &|c| {
            let (h, x) = (c.vertex()?, c.accum()?);
            let gate = |c: &mut dyn Ctx, name: &str, state: Val| -> FResult<Val> {
                let a = linear(c, x, &format!("w_{name}"))?;
                let b = linear(c, state, &format!("u_{name}"))?;
                let sum = c.add(a, b)?;
                let bias = c.param(&format!("b_{name}"))?;
                c.add(sum, bias)
            };
            let z = gate(c, "z", h)?;
            let z = c.sigmoid(z)?;
            let r = gate(c, "r", h)?;
            let r = c.sigmoid(r)?;
            let rh = c.mul(r, h)?;
            let cand = gate(c, "h", rh)?;
            let cand = c.tanh(cand)?;
            let one = c.constant(ones.clone())?;
            let keep = c.sub(one, z)?;
            let old = c.mul(keep, h)?;
            let new = c.mul(z, cand)?;
            c.add(old, new)
        },
    )?)
}

/// Shape of a multi-layer model.
#[derive(Clone, Debug)]
pub struct ModelShape {
    pub layers: usize,
    pub input_width: usize,
    pub hidden: usize,
    pub output_width: usize,
    /// Edge types for GG-NN.
    pub edge_types: usize,
}

/// Builds `layers` programs of one kind. Widths go input -> hidden -> ...
/// -> output; GG-NN keeps the input width throughout.
pub fn build_model(kind: ModelKind, shape: &ModelShape, rng: &mut impl Rng) -> Result<Vec<LayerProgram>> {
    if shape.layers == 0 {
        return Err(ZooError::Dimension("layers"));
    }
    (0..shape.layers)
        .map(|l| {
            let f_in = if l == 0 { shape.input_width } else { shape.hidden };
            let f_out = if l + 1 == shape.layers {
                shape.output_width
            } else {
                shape.hidden
            };
            match kind {
                ModelKind::Gcn => build_gcn(f_in, f_out, rng),
                ModelKind::CommNet => build_commnet(f_in, f_out, rng),
                ModelKind::MpGcn => build_mpgcn(f_in, shape.hidden, f_out, rng),
                ModelKind::GGcn => build_ggcn(f_in, f_out, rng),
                ModelKind::GgNn => build_ggnn(shape.input_width, shape.edge_types, rng),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::validate_program;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_programs_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let programs = [
            build_gcn(4, 3, &mut rng).unwrap(),
            build_commnet(4, 3, &mut rng).unwrap(),
            build_mpgcn(4, 5, 3, &mut rng).unwrap(),
            build_ggcn(4, 3, &mut rng).unwrap(),
            build_ggnn(4, 2, &mut rng).unwrap(),
        ];
        for p in &programs {
            assert_eq!(validate_program(p), Ok(vec![]), "{}", p.name);
        }
        assert_eq!(programs[2].accumulator, Accumulator::Max);
        assert_eq!(programs[4].output_width(), 4);
    }

    #[test]
    fn ggcn_edge_stage_has_five_operations() {
        let p = build_ggcn(4, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.apply_edge.op_count(), 5);
        assert_eq!(p.edge_width(), 4);
    }

    #[test]
    fn commnet_edge_stage_is_passthrough() {
        let p = build_commnet(4, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.apply_edge.nodes().len(), 1);
        assert_eq!(p.apply_edge.op_count(), 0);
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(build_gcn(0, 3, &mut rng), Err(ZooError::Dimension("f_in"))));
        assert!(build_ggnn(3, 0, &mut rng).is_err());
    }

    #[test]
    fn model_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        let err = "gat".parse::<ModelKind>().unwrap_err().to_string();
        assert!(err.contains("gcn, commnet, mpgcn, ggcn, ggnn"));
    }
}
