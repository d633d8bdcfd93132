//! Graph container: adjacency pattern, node features, degrees.

use std::path::Path;

use crate::error::{Result, SimError};
use crate::io;
use crate::matrix::{DenseMatrix, Entry, SparseTile};

/// An unweighted graph with node features.
#[derive(Debug, Clone)]
pub struct Graph {
    pub n_nodes: usize,
    /// Square adjacency pattern; every stored value is 1.
    pub adjacency: SparseTile,
    /// Node features, n_nodes x feature_dim.
    pub features: DenseMatrix,
    /// deg(v) = nonzero count of adjacency row v.
    pub degrees: Vec<usize>,
}

impl Graph {
    pub fn new(adjacency: SparseTile, features: DenseMatrix) -> Result<Self> {
        if adjacency.n_rows() != adjacency.n_cols() {
            return Err(SimError::BadShape(format!(
                "adjacency must be square, got {}x{}",
                adjacency.n_rows(),
                adjacency.n_cols()
            )));
        }
        if features.rows() != adjacency.n_rows() {
            return Err(SimError::BadShape(format!(
                "feature rows {} != node count {}",
                features.rows(),
                adjacency.n_rows()
            )));
        }
        if adjacency.entries().iter().any(|e| e.val != 1.0) {
            return Err(SimError::BadSparse(
                "unweighted adjacency must store ones".into(),
            ));
        }
        let degrees = adjacency.row_lengths();
        Ok(Graph {
            n_nodes: adjacency.n_rows(),
            adjacency,
            features,
            degrees,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// A + I pattern (self-loop added to every node, kept if present).
    pub fn adjacency_with_self_loops(&self) -> SparseTile {
        let mut entries: Vec<Entry> = self.adjacency.entries().to_vec();
        for v in 0..self.n_nodes {
            if !self
                .adjacency
                .row_entries(v)
                .iter()
                .any(|e| e.col == v)
            {
                entries.push(Entry { row: v, col: v, val: 1.0 });
            }
        }
        SparseTile::from_coo(self.n_nodes, self.n_nodes, entries)
            .expect("self-loop pattern is valid")
    }

    /// Relabels nodes: new index perm[v] takes node v's row. Used by the
    /// permutation-equivariance checks.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        assert_eq!(perm.len(), self.n_nodes);
        let entries = self
            .adjacency
            .entries()
            .iter()
            .map(|e| Entry { row: perm[e.row], col: perm[e.col], val: e.val })
            .collect();
        let adjacency = SparseTile::from_coo(self.n_nodes, self.n_nodes, entries)?;
        let mut features = DenseMatrix::zeros(self.n_nodes, self.feature_dim());
        for v in 0..self.n_nodes {
            for c in 0..self.feature_dim() {
                features.set(perm[v], c, self.features.get(v, c));
            }
        }
        Graph::new(adjacency, features)
    }
}

/// Loads a graph from an adjacency file (Matrix Market by header sniff or
/// `.mtx` extension, whitespace edge list otherwise) plus a feature CSV.
pub fn load_dataset(
    adjacency_path: &Path,
    features_path: &Path,
    symmetrize: bool,
) -> Result<Graph> {
    let features = io::read_dense_csv(features_path)?;
    let n = features.rows();
    let adjacency = load_adjacency(adjacency_path, Some(n), symmetrize)?;
    Graph::new(adjacency, features)
}

/// Loads just the adjacency structure.
pub fn load_adjacency(
    path: &Path,
    n_nodes: Option<usize>,
    symmetrize: bool,
) -> Result<SparseTile> {
    let is_mtx = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("mtx"))
        .unwrap_or(false)
        || sniff_matrix_market(path)?;
    let adj = if is_mtx {
        let t = io::read_matrix_market(path)?;
        let t = t.map_values(|_, _, _| 1.0);
        if let Some(n) = n_nodes {
            if t.n_rows() != n || t.n_cols() != n {
                return Err(SimError::BadShape(format!(
                    "adjacency {}x{} does not match {n} nodes",
                    t.n_rows(),
                    t.n_cols()
                )));
            }
        }
        if symmetrize {
            symmetrize_pattern(&t)?
        } else {
            t
        }
    } else {
        io::read_edge_list(path, n_nodes, symmetrize)?
    };
    Ok(adj)
}

fn sniff_matrix_market(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut head = [0u8; 14];
    let mut f = std::fs::File::open(path)?;
    let n = f.read(&mut head)?;
    Ok(n >= 14 && &head == b"%%MatrixMarket")
}

fn symmetrize_pattern(t: &SparseTile) -> Result<SparseTile> {
    let mut seen = std::collections::BTreeSet::new();
    for e in t.entries() {
        seen.insert((e.row, e.col));
        seen.insert((e.col, e.row));
    }
    let entries = seen
        .into_iter()
        .map(|(r, c)| Entry { row: r, col: c, val: 1.0 })
        .collect();
    SparseTile::from_coo(t.n_rows(), t.n_cols(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_graph() -> Graph {
        let adj = SparseTile::from_coo(
            3,
            3,
            vec![
                Entry { row: 0, col: 1, val: 1.0 },
                Entry { row: 1, col: 0, val: 1.0 },
                Entry { row: 1, col: 2, val: 1.0 },
                Entry { row: 2, col: 1, val: 1.0 },
            ],
        )
        .unwrap();
        let feats = DenseMatrix::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        Graph::new(adj, feats).unwrap()
    }

    #[test]
    fn degrees_match_row_counts() {
        let g = small_graph();
        assert_eq!(g.degrees, vec![1, 2, 1]);
        assert_eq!(g.n_edges(), 4);
    }

    #[test]
    fn self_loops_added_once() {
        let g = small_graph();
        let hat = g.adjacency_with_self_loops();
        assert_eq!(hat.nnz(), 7);
        let again = Graph::new(hat.clone(), g.features.clone()).unwrap();
        assert_eq!(again.adjacency_with_self_loops().nnz(), 7);
    }

    #[test]
    fn weighted_adjacency_rejected() {
        let adj = SparseTile::from_coo(2, 2, vec![Entry { row: 0, col: 1, val: 2.0 }]).unwrap();
        let feats = DenseMatrix::zeros(2, 1);
        assert!(Graph::new(adj, feats).is_err());
    }

    #[test]
    fn permute_relabels_consistently() {
        let g = small_graph();
        let p = g.permute(&[2, 0, 1]).unwrap();
        // old edge (0,1) becomes (2,0)
        assert!(p.adjacency.entries().iter().any(|e| e.row == 2 && e.col == 0));
        assert_eq!(p.features.get(2, 0), 1.0);
        assert_eq!(p.degrees[0], 2); // old node 1
    }

    #[test]
    fn load_dataset_counts_nodes_edges_features() {
        let dir = std::env::temp_dir();
        let ep = dir.join(format!("gnnsim-graph-{}-edges.txt", std::process::id()));
        let fp = dir.join(format!("gnnsim-graph-{}-feats.csv", std::process::id()));
        std::fs::write(&ep, "0 1\n1 2\n3 0\n").unwrap();
        std::fs::write(&fp, "4,2\n1,0\n0,1\n1,1\n0,0\n").unwrap();
        let g = load_dataset(&ep, &fp, true).unwrap();
        assert_eq!(g.n_nodes, 4);
        assert_eq!(g.n_edges(), 6);
        assert_eq!(g.feature_dim(), 2);
        std::fs::remove_file(&ep).ok();
        std::fs::remove_file(&fp).ok();
    }
}
