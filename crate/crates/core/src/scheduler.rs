//! Maps matrix work onto tiles and clusters: ring mapping of 2x2 block
//! grids for the transformation GEMMs, chain mapping of nonzero sparse
//! tiles for aggregation, with empty-tile elimination and a block address
//! table for the scratchpad.

use serde::Serialize;

use crate::matrix::{SparseTile, INPUT_ELEM_BYTES};

/// Block traversal order across passes. Only row-major is implemented;
/// space-filling layouts are intentionally out of scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TraversalOrder {
    RowMajor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MapMode {
    RingDense,
    ChainSparse,
}

/// One work tile placed on one physical tile during one pass.
#[derive(Debug, Clone, Serialize)]
pub struct Assignment {
    pub work: String,
    pub physical_tile: usize,
    pub pass: usize,
}

/// Scratchpad placement of one operand block.
#[derive(Debug, Clone, Serialize)]
pub struct AddressEntry {
    pub block: (usize, usize),
    pub bank: usize,
    pub offset: u64,
    pub bytes: u64,
}

/// A planned mapping of work onto the physical tiles.
#[derive(Debug, Clone, Serialize)]
pub struct TileMap {
    pub mode: MapMode,
    pub order: TraversalOrder,
    pub passes: usize,
    pub assignments: Vec<Assignment>,
    pub address_table: Vec<AddressEntry>,
}

impl TileMap {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tile map serializes")
    }
}

/// Geometry knobs the scheduler needs.
#[derive(Debug, Clone, Copy)]
pub struct ClusterGeometry {
    pub tile_dim: usize,
    pub tiles_per_cluster: usize,
    pub scratchpad_banks: usize,
}

impl ClusterGeometry {
    /// A cluster of four tiles covers a 2x2 block square per pass.
    pub fn footprint(&self) -> usize {
        2 * self.tile_dim
    }
}

fn build_addresses(
    blocks_r: usize,
    blocks_c: usize,
    block_bytes: u64,
    banks: usize,
) -> Vec<AddressEntry> {
    let mut table = Vec::with_capacity(blocks_r * blocks_c);
    let mut offsets = vec![0u64; banks.max(1)];
    for br in 0..blocks_r {
        for bc in 0..blocks_c {
            let bank = (br + bc) % banks.max(1);
            table.push(AddressEntry {
                block: (br, bc),
                bank,
                offset: offsets[bank],
                bytes: block_bytes,
            });
            offsets[bank] += block_bytes;
        }
    }
    table
}

/// Plans the transformation GEMM X (rows x k) times W (k x cols) onto the
/// four-tile ring. Each pass owns one output macro-block (output-stationary
/// across the k chunks); within a pass the four quadrant sub-blocks of each
/// operand macro-block map onto the four ring tiles.
pub fn map_transformation(
    x_rows: usize,
    x_cols: usize,
    w_cols: usize,
    geo: ClusterGeometry,
) -> TileMap {
    let fp = geo.footprint();
    let rb = x_rows.div_ceil(fp);
    let kb = x_cols.div_ceil(fp);
    let cb = w_cols.div_ceil(fp);
    let mut assignments = Vec::new();
    let mut pass = 0usize;
    for i in 0..rb {
        for j in 0..cb {
            for k in 0..kb {
                for quadrant in 0..4usize {
                    assignments.push(Assignment {
                        work: format!("X[{i},{k}].q{quadrant}"),
                        physical_tile: quadrant,
                        pass,
                    });
                    assignments.push(Assignment {
                        work: format!("W[{k},{j}].q{quadrant}"),
                        physical_tile: quadrant,
                        pass,
                    });
                }
            }
            pass += 1;
        }
    }
    let block_bytes = (fp * fp) as u64 * INPUT_ELEM_BYTES;
    TileMap {
        mode: MapMode::RingDense,
        order: TraversalOrder::RowMajor,
        passes: pass,
        assignments,
        address_table: build_addresses(rb, kb.max(cb), block_bytes, geo.scratchpad_banks),
    }
}

/// A sparse matrix cut into a grid of tiles.
#[derive(Debug, Clone)]
pub struct TileGrid {
    pub tiles: Vec<Vec<SparseTile>>,
    pub block_rows: usize,
    pub block_cols: usize,
    pub tile_dim: usize,
    pub n_rows: usize,
    pub n_cols: usize,
}

/// Cuts a sparse matrix into `tile_dim`-sized tiles (edge tiles smaller).
pub fn tile_sparse(s: &SparseTile, tile_dim: usize) -> TileGrid {
    let block_rows = s.n_rows().div_ceil(tile_dim);
    let block_cols = s.n_cols().div_ceil(tile_dim);
    let mut tiles = Vec::with_capacity(block_rows);
    for bi in 0..block_rows {
        let rows = tile_dim.min(s.n_rows() - bi * tile_dim);
        let mut row = Vec::with_capacity(block_cols);
        for bj in 0..block_cols {
            let cols = tile_dim.min(s.n_cols() - bj * tile_dim);
            row.push(s.sub_tile(bi * tile_dim, bj * tile_dim, rows, cols));
        }
        tiles.push(row);
    }
    TileGrid {
        tiles,
        block_rows,
        block_cols,
        tile_dim,
        n_rows: s.n_rows(),
        n_cols: s.n_cols(),
    }
}

impl TileGrid {
    pub fn nonzero_count(&self) -> usize {
        self.tiles
            .iter()
            .flat_map(|r| r.iter())
            .filter(|t| !t.is_empty())
            .count()
    }
}

/// Plans the aggregation SpMM: per tile-column, the nonzero tiles are
/// chained onto the physical tiles so one dense panel traverses all of
/// them; empty tiles are eliminated outright.
pub fn map_aggregation(grid: &TileGrid, geo: ClusterGeometry) -> TileMap {
    let chain = geo.tiles_per_cluster;
    let mut assignments = Vec::new();
    let mut pass = 0usize;
    for bj in 0..grid.block_cols {
        let nonzero: Vec<usize> = (0..grid.block_rows)
            .filter(|&bi| !grid.tiles[bi][bj].is_empty())
            .collect();
        for chunk in nonzero.chunks(chain) {
            for (slot, &bi) in chunk.iter().enumerate() {
                assignments.push(Assignment {
                    work: format!("A[{bi},{bj}]"),
                    physical_tile: slot,
                    pass,
                });
            }
            pass += 1;
        }
    }
    let block_bytes = (grid.tile_dim * grid.tile_dim) as u64 * INPUT_ELEM_BYTES;
    TileMap {
        mode: MapMode::ChainSparse,
        order: TraversalOrder::RowMajor,
        passes: pass,
        assignments,
        address_table: build_addresses(
            grid.block_rows,
            grid.block_cols,
            block_bytes,
            geo.scratchpad_banks,
        ),
    }
}

/// Expected aggregation pass count: per column, ceil(nonzero / chain).
pub fn expected_aggregation_passes(grid: &TileGrid, chain: usize) -> usize {
    (0..grid.block_cols)
        .map(|bj| {
            let nz = (0..grid.block_rows)
                .filter(|&bi| !grid.tiles[bi][bj].is_empty())
                .count();
            nz.div_ceil(chain)
        })
        .sum()
}
