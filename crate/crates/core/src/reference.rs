//! Independent dense-math reference for the four layer kinds.
//!
//! Everything here is plain f64 arithmetic over explicit loops; none of the
//! systolic, Strassen, scheduling, or packing code paths are involved. The
//! simulated engine is required to agree with these within the configured
//! relative tolerance.

use crate::gnn::{Activation, LayerSpec, ModelKind};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;

/// Row-major f64 matrix used only inside the reference.
#[derive(Debug, Clone)]
pub struct MatF64 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatF64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatF64 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        MatF64 {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|&v| v as f64).collect(),
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matmul(&self, other: &MatF64) -> MatF64 {
        assert_eq!(self.cols, other.rows);
        let mut out = MatF64::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// Worst relative deviation against an f32 matrix.
    pub fn max_rel_deviation(&self, got: &DenseMatrix) -> f64 {
        assert_eq!(self.rows, got.rows());
        assert_eq!(self.cols, got.cols());
        let mut worst = 0.0f64;
        for (want, have) in self.data.iter().zip(got.data().iter()) {
            let have = *have as f64;
            let denom = want.abs().max(have.abs()).max(1.0);
            worst = worst.max((want - have).abs() / denom);
        }
        worst
    }
}

fn apply_bias_activation(m: &mut MatF64, spec: &LayerSpec) {
    if let Some(bias) = &spec.bias {
        for r in 0..m.rows {
            for c in 0..m.cols {
                let v = m.get(r, c) + bias[c] as f64;
                m.set(r, c, v);
            }
        }
    }
    match spec.activation {
        Activation::None => {}
        Activation::Relu => {
            for v in m.data.iter_mut() {
                *v = v.max(0.0);
            }
        }
        Activation::LeakyRelu(slope) => {
            for v in m.data.iter_mut() {
                if *v < 0.0 {
                    *v *= slope as f64;
                }
            }
        }
    }
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v < 0.0 {
        v * slope
    } else {
        v
    }
}

/// Symmetric-normalized aggregation of GCN: sum over A+I neighborhoods with
/// 1/sqrt(deg_hat(i) * deg_hat(j)) coefficients.
pub fn gcn_reference(g: &Graph, spec: &LayerSpec, h: &MatF64) -> MatF64 {
    let theta = MatF64::from_dense(&spec.weight);
    let xp = h.matmul(&theta);
    let hat = g.adjacency_with_self_loops();
    let deg_hat = hat.row_lengths();
    let mut out = MatF64::zeros(g.n_nodes, xp.cols);
    for e in hat.entries() {
        let coef = 1.0 / ((deg_hat[e.row] as f64).sqrt() * (deg_hat[e.col] as f64).sqrt());
        for c in 0..xp.cols {
            let v = out.get(e.row, c) + coef * xp.get(e.col, c);
            out.set(e.row, c, v);
        }
    }
    apply_bias_activation(&mut out, spec);
    out
}

/// Mean over the closed neighborhood, transform, bias/activation, then
/// row-wise L2 normalization (zero rows stay zero).
pub fn sage_reference(g: &Graph, spec: &LayerSpec, h: &MatF64) -> MatF64 {
    let hat = g.adjacency_with_self_loops();
    let mut mean = MatF64::zeros(g.n_nodes, h.cols);
    for v in 0..g.n_nodes {
        let neigh = hat.row_entries(v);
        for e in neigh {
            for c in 0..h.cols {
                let acc = mean.get(v, c) + h.get(e.col, c);
                mean.set(v, c, acc);
            }
        }
        let n = neigh.len() as f64;
        for c in 0..h.cols {
            let acc = mean.get(v, c) / n;
            mean.set(v, c, acc);
        }
    }
    let theta = MatF64::from_dense(&spec.weight);
    let mut out = mean.matmul(&theta);
    apply_bias_activation(&mut out, spec);
    for r in 0..out.rows {
        let norm: f64 = (0..out.cols).map(|c| out.get(r, c).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in 0..out.cols {
                let v = out.get(r, c) / norm;
                out.set(r, c, v);
            }
        }
    }
    out
}

/// (1 + epsilon) * self + neighbor sum, then the dense transform.
pub fn gin_reference(g: &Graph, spec: &LayerSpec, h: &MatF64) -> MatF64 {
    let mut combined = MatF64::zeros(g.n_nodes, h.cols);
    for v in 0..g.n_nodes {
        for c in 0..h.cols {
            combined.set(v, c, (1.0 + spec.epsilon as f64) * h.get(v, c));
        }
    }
    for e in g.adjacency.entries() {
        for c in 0..h.cols {
            let acc = combined.get(e.row, c) + h.get(e.col, c);
            combined.set(e.row, c, acc);
        }
    }
    let theta = MatF64::from_dense(&spec.weight);
    let mut out = combined.matmul(&theta);
    apply_bias_activation(&mut out, spec);
    out
}

/// Dense masked-softmax attention over A+I, then the weighted aggregation.
pub fn gat_reference(g: &Graph, spec: &LayerSpec, h: &MatF64) -> MatF64 {
    let w = MatF64::from_dense(&spec.weight);
    let z = h.matmul(&w);
    let (a1, a2) = spec.attention.as_ref().expect("GAT layer carries attention vectors");
    let slope = match spec.activation {
        Activation::LeakyRelu(s) => s as f64,
        _ => 0.2,
    };
    let h1: Vec<f64> = (0..z.rows)
        .map(|i| (0..z.cols).map(|c| z.get(i, c) * a1[c] as f64).sum())
        .collect();
    let h2: Vec<f64> = (0..z.rows)
        .map(|j| (0..z.cols).map(|c| z.get(j, c) * a2[c] as f64).sum())
        .collect();

    let hat = g.adjacency_with_self_loops();
    let n = g.n_nodes;
    // dense logits with -inf outside the pattern
    let mut logits = vec![f64::NEG_INFINITY; n * n];
    for e in hat.entries() {
        logits[e.row * n + e.col] = leaky(h1[e.row] + h2[e.col], slope);
    }
    let mut att = MatF64::zeros(n, n);
    for i in 0..n {
        let row = &logits[i * n..(i + 1) * n];
        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..n {
            if row[j].is_finite() {
                denom += (row[j] - maxv).exp();
            }
        }
        for j in 0..n {
            if row[j].is_finite() {
                att.set(i, j, (row[j] - maxv).exp() / denom);
            }
        }
    }
    let mut out = att.matmul(&z);
    apply_bias_activation(&mut out, spec);
    out
}

/// Dispatches one layer.
pub fn layer_reference(g: &Graph, spec: &LayerSpec, h: &MatF64) -> MatF64 {
    match spec.model {
        ModelKind::Gcn => gcn_reference(g, spec, h),
        ModelKind::GraphSage => sage_reference(g, spec, h),
        ModelKind::Gin => gin_reference(g, spec, h),
        ModelKind::Gat => gat_reference(g, spec, h),
    }
}

/// Runs the whole stack in reference arithmetic.
pub fn run_reference(g: &Graph, layers: &[LayerSpec]) -> MatF64 {
    let mut h = MatF64::from_dense(&g.features);
    for spec in layers {
        h = layer_reference(g, spec, &h);
    }
    h
}
