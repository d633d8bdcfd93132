//! Layer specifications for the four supported models, the GCN
//! normalization, the attention softmax, and the model-spec file format.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::graph::Graph;
use crate::matrix::{DenseMatrix, SparseTile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    #[serde(rename = "graphsage", alias = "sage")]
    GraphSage,
    Gin,
    Gat,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::GraphSage => "graphsage",
            ModelKind::Gin => "gin",
            ModelKind::Gat => "gat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    None,
    Relu,
    LeakyRelu(f32),
}

/// Phase order of a layer. Linear aggregations commute with the dense
/// transform, so GCN/GraphSAGE/GAT default to transform-first (enabling the
/// in-array result reuse); GIN aggregates first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerOrder {
    TransformFirst,
    AggregateFirst,
}

/// A fully materialized layer.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub model: ModelKind,
    /// in_dim x out_dim.
    pub weight: DenseMatrix,
    pub bias: Option<Vec<f32>>,
    pub activation: Activation,
    /// GIN self-confidence term.
    pub epsilon: f32,
    /// GAT split attention vectors (a1, a2), each of length out_dim.
    pub attention: Option<(Vec<f32>, Vec<f32>)>,
    pub order: LayerOrder,
}

impl LayerSpec {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn validate(&self, index: usize, input_dim: usize) -> Result<()> {
        let err = |msg: String| SimError::Layer {
            layer: index,
            phase: "spec".into(),
            msg,
        };
        if self.in_dim() != input_dim {
            return Err(err(format!(
                "weight expects {} input features, got {input_dim}",
                self.in_dim()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_dim() {
                return Err(err(format!(
                    "bias length {} != out_dim {}",
                    b.len(),
                    self.out_dim()
                )));
            }
        }
        if !self.epsilon.is_finite() {
            return Err(err("epsilon must be finite".into()));
        }
        if let Activation::LeakyRelu(slope) = self.activation {
            if !(0.0 < slope && slope < 1.0) {
                return Err(err(format!("LeakyReLU slope {slope} outside (0, 1)")));
            }
        }
        match (self.model, &self.attention) {
            (ModelKind::Gat, None) => {
                return Err(err("GAT layer needs attention vectors".into()))
            }
            (ModelKind::Gat, Some((a1, a2))) => {
                if a1.len() != self.out_dim() || a2.len() != self.out_dim() {
                    return Err(err(format!(
                        "attention vector lengths ({}, {}) != out_dim {}",
                        a1.len(),
                        a2.len(),
                        self.out_dim()
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Symmetric GCN normalization: A-hat = A + I with entry (i, j) valued
/// 1 / (sqrt(deg_hat(i)) * sqrt(deg_hat(j))).
pub fn gcn_normalize(g: &Graph) -> SparseTile {
    let hat = g.adjacency_with_self_loops();
    let deg_hat = hat.row_lengths();
    hat.map_values(|i, j, _| {
        1.0 / ((deg_hat[i] as f32).sqrt() * (deg_hat[j] as f32).sqrt())
    })
}

/// Mean-aggregation weights: A + I with 1/(deg+1) per row.
pub fn mean_normalize(g: &Graph) -> SparseTile {
    let hat = g.adjacency_with_self_loops();
    let deg_hat = hat.row_lengths();
    hat.map_values(|i, _, _| 1.0 / deg_hat[i] as f32)
}

/// Row-wise softmax over the stored entries of a logits tile, with
/// LeakyReLU applied first. Runs in the scalar post-processing unit.
pub fn attention_softmax(logits: &SparseTile, slope: f32) -> SparseTile {
    let squashed = logits.map_values(|_, _, v| if v < 0.0 { v * slope } else { v });
    let mut row_max = vec![f32::NEG_INFINITY; squashed.n_rows()];
    for e in squashed.entries() {
        row_max[e.row] = row_max[e.row].max(e.val);
    }
    let mut row_sum = vec![0.0f32; squashed.n_rows()];
    for e in squashed.entries() {
        row_sum[e.row] += (e.val - row_max[e.row]).exp();
    }
    squashed.map_values(|i, _, v| (v - row_max[i]).exp() / row_sum[i])
}

fn apply_activation(m: &mut DenseMatrix, act: Activation) {
    match act {
        Activation::None => {}
        Activation::Relu => {
            for v in m.data_mut() {
                *v = v.max(0.0);
            }
        }
        Activation::LeakyRelu(slope) => {
            for v in m.data_mut() {
                if *v < 0.0 {
                    *v *= slope;
                }
            }
        }
    }
}

/// Bias add and activation, fused into the drain of the final GEMM pass
/// (no extra cycles are charged).
pub fn apply_bias_activation(m: &mut DenseMatrix, bias: Option<&[f32]>, act: Activation) {
    if let Some(b) = bias {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let v = m.get(r, c) + b[c];
                m.set(r, c, v);
            }
        }
    }
    apply_activation(m, act);
}

// --- model spec file -------------------------------------------------------

/// Weight/bias initialization of one layer in a model-spec file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerInit {
    /// Deterministic random values from the given seed.
    Seeded { seed: u64 },
    /// Load from CSV files.
    Files {
        weight: String,
        #[serde(default)]
        bias: Option<String>,
        #[serde(default)]
        a1: Option<String>,
        #[serde(default)]
        a2: Option<String>,
    },
}

impl Default for LayerInit {
    fn default() -> Self {
        LayerInit::Seeded { seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpecFile {
    pub model: ModelKind,
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default)]
    pub activation: Option<String>,
    #[serde(default)]
    pub bias: bool,
    #[serde(default)]
    pub epsilon: f32,
    #[serde(default = "default_slope")]
    pub leaky_slope: f32,
    #[serde(default)]
    pub init: LayerInit,
    #[serde(default)]
    pub order: Option<LayerOrder>,
}

fn default_slope() -> f32 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpecFile {
    pub layers: Vec<LayerSpecFile>,
}

impl ModelSpecFile {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json)
            .map_err(|e| SimError::BadConfig(format!("model spec JSON: {e}")))
    }
}

fn seeded_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let scale = 1.0 / (rows as f32).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("positive dims")
}

/// Materializes the layers of a spec file (loading or generating weights).
pub fn build_layers(spec: &ModelSpecFile, base_seed: u64) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, lf) in spec.layers.iter().enumerate() {
        let activation = match lf.activation.as_deref() {
            None | Some("none") => {
                if lf.model == ModelKind::Gat {
                    Activation::LeakyRelu(lf.leaky_slope)
                } else {
                    Activation::None
                }
            }
            Some("relu") => Activation::Relu,
            Some("leaky_relu") => Activation::LeakyRelu(lf.leaky_slope),
            Some(other) => {
                return Err(SimError::Layer {
                    layer: i,
                    phase: "spec".into(),
                    msg: format!("unknown activation `{other}`"),
                })
            }
        };
        let (weight, bias, attention) = match &lf.init {
            LayerInit::Seeded { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    base_seed ^ seed.wrapping_add(0x9e37_79b9 * (i as u64 + 1)),
                );
                let weight = seeded_matrix(&mut rng, lf.in_dim, lf.out_dim);
                let bias = lf.bias.then(|| {
                    (0..lf.out_dim).map(|_| rng.gen_range(-0.1..0.1)).collect()
                });
                let attention = (lf.model == ModelKind::Gat).then(|| {
                    let a1 = (0..lf.out_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
                    let a2 = (0..lf.out_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
                    (a1, a2)
                });
                (weight, bias, attention)
            }
            LayerInit::Files { weight, bias, a1, a2 } => {
                let w = crate::io::read_dense_csv(std::path::Path::new(weight))?;
                let b = match bias {
                    Some(p) => {
                        let m = crate::io::read_dense_csv(std::path::Path::new(p))?;
                        Some(m.data().to_vec())
                    }
                    None => None,
                };
                let att = match (a1, a2) {
                    (Some(p1), Some(p2)) => {
                        let m1 = crate::io::read_dense_csv(std::path::Path::new(p1))?;
                        let m2 = crate::io::read_dense_csv(std::path::Path::new(p2))?;
                        Some((m1.data().to_vec(), m2.data().to_vec()))
                    }
                    _ => None,
                };
                (w, b, att)
            }
        };
        let order = lf.order.unwrap_or(match lf.model {
            ModelKind::Gin => LayerOrder::AggregateFirst,
            _ => LayerOrder::TransformFirst,
        });
        layers.push(LayerSpec {
            model: lf.model,
            weight,
            bias,
            activation,
            epsilon: lf.epsilon,
            attention,
            order,
        });
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Entry;

    fn two_node_graph() -> Graph {
        let adj = SparseTile::from_coo(
            2,
            2,
            vec![
                Entry { row: 0, col: 1, val: 1.0 },
                Entry { row: 1, col: 0, val: 1.0 },
            ],
        )
        .unwrap();
        let feats = DenseMatrix::from_rows(vec![vec![1.0], vec![3.0]]).unwrap();
        Graph::new(adj, feats).unwrap()
    }

    #[test]
    fn gcn_normalize_two_nodes_all_half() {
        let g = two_node_graph();
        let norm = gcn_normalize(&g);
        assert_eq!(norm.nnz(), 4);
        for e in norm.entries() {
            assert!((e.val - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn gcn_normalize_isolated_node_is_one() {
        let adj = SparseTile::empty(1, 1);
        let g = Graph::new(adj, DenseMatrix::zeros(1, 1)).unwrap();
        let norm = gcn_normalize(&g);
        assert_eq!(norm.entries().len(), 1);
        assert_eq!(norm.entries()[0].val, 1.0);
    }

    #[test]
    fn gcn_normalize_symmetric_in_symmetric_out() {
        let adj = SparseTile::from_coo(
            3,
            3,
            vec![
                Entry { row: 0, col: 2, val: 1.0 },
                Entry { row: 2, col: 0, val: 1.0 },
            ],
        )
        .unwrap();
        let g = Graph::new(adj, DenseMatrix::zeros(3, 1)).unwrap();
        let norm = gcn_normalize(&g);
        for e in norm.entries() {
            let mirrored = norm
                .row_entries(e.col)
                .iter()
                .find(|m| m.col == e.row)
                .unwrap();
            assert_eq!(e.val, mirrored.val);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = SparseTile::from_coo(
            2,
            2,
            vec![
                Entry { row: 0, col: 0, val: 1.0 },
                Entry { row: 0, col: 1, val: -2.0 },
                Entry { row: 1, col: 1, val: 0.5 },
            ],
        )
        .unwrap();
        let att = attention_softmax(&logits, 0.2);
        let mut sums = vec![0.0f32; 2];
        for e in att.entries() {
            assert!(e.val > 0.0);
            sums[e.row] += e.val;
        }
        for s in sums {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_validation_catches_dim_breaks() {
        let spec = LayerSpec {
            model: ModelKind::Gcn,
            weight: DenseMatrix::zeros(4, 2),
            bias: Some(vec![0.0; 3]),
            activation: Activation::None,
            epsilon: 0.0,
            attention: None,
            order: LayerOrder::TransformFirst,
        };
        assert!(spec.validate(0, 4).is_err()); // bad bias length
        let spec = LayerSpec { bias: None, ..spec };
        assert!(spec.validate(0, 4).is_ok());
        assert!(spec.validate(0, 5).is_err()); // chained dim mismatch
    }

    #[test]
    fn model_spec_json_round_trip() {
        let json = r#"{
            "layers": [
                {"model": "gcn", "in_dim": 4, "out_dim": 2, "activation": "relu",
                 "bias": true, "init": {"kind": "seeded", "seed": 3}},
                {"model": "gat", "in_dim": 2, "out_dim": 2}
            ]
        }"#;
        let spec = ModelSpecFile::from_json(json).unwrap();
        let layers = build_layers(&spec, 11).unwrap();
        assert_eq!(layers.len(), 2);
        assert!(layers[0].bias.is_some());
        assert!(layers[1].attention.is_some());
        assert_eq!(layers[1].order, LayerOrder::TransformFirst);
        // deterministic per seed
        let again = build_layers(&spec, 11).unwrap();
        assert_eq!(again[0].weight, layers[0].weight);
        let other = build_layers(&spec, 12).unwrap();
        assert_ne!(other[0].weight, layers[0].weight);
    }
}
