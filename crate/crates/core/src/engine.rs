//! Lowers GNN layers onto the simulated hardware: dense transforms run on
//! the Strassen cluster (or as plain blocked GEMM with `strassen` off),
//! aggregations run as chained sparse-tile passes with optional greedy
//! packing, and scalar work (softmax, normalization, combines) runs in a
//! modeled post-processing unit.

use std::collections::BTreeSet;

use crate::balancer::{greedy_pack, reorder_results, PackOptions, PackedTile};
use crate::config::EngineConfig;
use crate::error::{Result, SimError};
use crate::gnn::{
    apply_bias_activation, attention_softmax, gcn_normalize, mean_normalize, Activation,
    LayerOrder, LayerSpec, ModelKind,
};
use crate::graph::Graph;
use crate::matrix::{DenseMatrix, Entry, SparseTile, INDEX_BYTES, INPUT_ELEM_BYTES, OUTPUT_ELEM_BYTES};
use crate::pe::{plain_streams, DenseOperand, PeMode, Reduction, SystolicTile, TileStats, TraceSink};
use crate::reference::{layer_reference, MatF64};
use crate::report::{LayerReport, PhaseStats, SimReport};
use crate::scheduler::{tile_sparse, ClusterGeometry, TileGrid};
use crate::strassen::TileCluster;

/// Elements the scalar post-processing unit handles per cycle.
const POST_LANE_WIDTH: u64 = 64;

/// Balances pass cycles across the configured clusters; a phase finishes
/// when its most loaded cluster does.
struct ParallelLoad {
    loads: Vec<u64>,
}

impl ParallelLoad {
    fn new(clusters: usize) -> Self {
        ParallelLoad { loads: vec![0; clusters.max(1)] }
    }

    fn assign(&mut self, cycles: u64) {
        let i = self
            .loads
            .iter()
            .enumerate()
            .min_by_key(|(_, &l)| l)
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.loads[i] += cycles;
    }

    fn makespan(&self) -> u64 {
        self.loads.iter().copied().max().unwrap_or(0)
    }
}

/// Macro blocks of the latest transformation result still resident in the
/// arrays, eligible for the zero-traffic feedback path.
#[derive(Debug, Clone, Default)]
struct Residency {
    footprint: usize,
    macros: BTreeSet<(usize, usize)>,
}

impl Residency {
    fn covers(&self, row: usize, col: usize) -> Option<(usize, usize)> {
        if self.footprint == 0 {
            return None;
        }
        let key = (row / self.footprint, col / self.footprint);
        self.macros.contains(&key).then_some(key)
    }
}

enum ChainItem {
    Plain { block_row: usize, tile: SparseTile },
    Packed { tile: PackedTile, sources: Vec<usize> },
}

/// The simulated accelerator.
pub struct Engine {
    pub cfg: EngineConfig,
    cluster: TileCluster,
    agg_tile: SystolicTile,
    residency: Residency,
    /// Feedback credits already consumed: (macro row, macro col, bj, fpanel).
    used_credits: BTreeSet<(usize, usize, usize, usize)>,
    /// Per-cycle PE event trace of the aggregation passes, when enabled.
    trace: Option<TraceSink>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        let cfg = cfg.validated()?;
        let cluster = TileCluster::new(cfg.tile_rows, cfg.fifo_cam_depth);
        let agg_tile = SystolicTile::new(cfg.tile_rows, cfg.tile_cols, cfg.fifo_cam_depth);
        Ok(Engine {
            cfg,
            cluster,
            agg_tile,
            residency: Residency::default(),
            used_credits: BTreeSet::new(),
            trace: None,
        })
    }

    pub fn set_trace(&mut self, sink: TraceSink) {
        self.trace = Some(sink);
    }

    fn geometry(&self) -> ClusterGeometry {
        ClusterGeometry {
            tile_dim: self.cfg.tile_rows,
            tiles_per_cluster: self.cfg.tiles_per_cluster,
            scratchpad_banks: self.cfg.scratchpad_banks,
        }
    }

    /// Dense GEMM on the cluster(s): one output macro-block per pass
    /// (output-stationary), k chunks accumulated in the registers. The
    /// macro blocks of the final passes stay resident for the feedback path.
    pub fn cluster_gemm(
        &mut self,
        x: &DenseMatrix,
        w: &DenseMatrix,
        phase: &mut PhaseStats,
    ) -> Result<DenseMatrix> {
        if x.cols() != w.rows() {
            return Err(SimError::DimMismatch {
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: w.rows(),
                right_cols: w.cols(),
            });
        }
        let fp = self.geometry().footprint();
        let rb = x.rows().div_ceil(fp);
        let kb = x.cols().div_ceil(fp);
        let cb = w.cols().div_ceil(fp);
        let mut out = DenseMatrix::zeros(x.rows(), w.cols());
        let mut balance = ParallelLoad::new(self.cfg.clusters);
        let grid_pes =
            (self.cfg.tile_rows * self.cfg.tile_cols * self.cfg.tiles_per_cluster) as u64;

        let mut resident = Residency { footprint: fp, macros: BTreeSet::new() };
        let total_passes = rb * cb;
        let mut pass_index = 0usize;
        for i in 0..rb {
            let mr = fp.min(x.rows() - i * fp);
            for j in 0..cb {
                let mc = fp.min(w.cols() - j * fp);
                let mut pass_cycles = 0u64;
                let mut acc = DenseMatrix::zeros(mr, mc);
                for k in 0..kb {
                    let mk = fp.min(x.cols() - k * fp);
                    let xm = x.sub_block(i * fp, k * fp, mr, mk);
                    let wm = w.sub_block(k * fp, j * fp, mk, mc);
                    let (partial, stats) = if self.cfg.strassen {
                        self.cluster.strassen_multiply(&xm, &wm)?
                    } else {
                        self.cluster.blocked_multiply(&xm, &wm)?
                    };
                    acc.add_assign(&partial);

                    let drain = stats
                        .stages
                        .iter()
                        .find(|s| s.name == "drain")
                        .map(|s| s.end - s.start)
                        .unwrap_or(0);
                    // k chunks accumulate in-register; only the final one drains
                    pass_cycles += stats.cycles - if k + 1 < kb { drain } else { 0 };
                    phase.counters.macs += stats.macs;
                    phase.counters.mult_invocations += stats.scalar_mults;
                    phase.counters.adds += stats.adds;
                    phase.counters.forward_hops += stats.forwards;
                    phase.counters.active_pe_cycles += stats.macs;
                    let mut bytes = stats.bytes_moved;
                    if k + 1 < kb {
                        // the C write-back happens once per pass, not per chunk
                        let block = (mr.div_ceil(2) * mc.div_ceil(2)) as u64;
                        bytes = bytes.saturating_sub(4 * block * OUTPUT_ELEM_BYTES);
                    }
                    phase.counters.bytes_scratchpad += bytes;
                }
                out.paste_block(i * fp, j * fp, &acc);
                balance.assign(pass_cycles);
                phase.counters.pe_cycles_available += grid_pes * pass_cycles;
                pass_index += 1;
                // the final pass per cluster leaves its output in-array
                if pass_index + self.cfg.clusters > total_passes {
                    resident.macros.insert((i, j));
                }
            }
        }
        phase.cycles += balance.makespan();
        self.residency = resident;
        self.used_credits.clear();
        Ok(out)
    }

    /// Chained sparse-dense multiplication over a tiled sparse operand,
    /// with optional greedy packing per tile column. `use_feedback` lets the
    /// first pass over a resident result panel skip the scratchpad.
    pub fn aggregation_spmm(
        &mut self,
        s: &SparseTile,
        d: &DenseMatrix,
        mode: PeMode,
        phase: &mut PhaseStats,
        use_feedback: bool,
    ) -> Result<DenseMatrix> {
        if s.n_cols() != d.rows() {
            return Err(SimError::DimMismatch {
                left_rows: s.n_rows(),
                left_cols: s.n_cols(),
                right_rows: d.rows(),
                right_cols: d.cols(),
            });
        }
        let t_dim = self.cfg.tile_rows;
        let c_dim = self.cfg.tile_cols;
        let grid = tile_sparse(s, t_dim);
        let chain = self.cfg.tiles_per_cluster;
        let fpanels = d.cols().div_ceil(c_dim);
        let mut out = DenseMatrix::zeros(s.n_rows(), d.cols());
        let mut balance = ParallelLoad::new(self.cfg.clusters);
        let grid_pes = (t_dim * c_dim) as u64;

        for bj in 0..grid.block_cols {
            let items = self.chain_items(&grid, bj)?;
            if items.is_empty() {
                continue;
            }
            let k_dim = grid.tiles[0][bj].n_cols();
            for f in 0..fpanels {
                let cwidth = c_dim.min(d.cols() - f * c_dim);
                let panel = d.sub_block(bj * t_dim, f * c_dim, k_dim, cwidth);
                let mut feedback_credit = false;
                if use_feedback {
                    if let Some(key) = self.residency.covers(bj * t_dim, f * c_dim) {
                        let credit = (key.0, key.1, bj, f);
                        if self.used_credits.insert(credit) {
                            feedback_credit = true;
                        }
                    }
                }
                let mut first_pass = true;
                for chunk in items.chunks(chain) {
                    let from_registers = feedback_credit && first_pass;
                    let mut chain_max = 0u64;
                    for item in chunk {
                        let (per_source, stats) =
                            self.run_chain_item(item, &panel, k_dim, mode, from_registers)?;
                        chain_max = chain_max.max(stats.cycles);
                        phase.counters.macs += stats.macs;
                        phase.counters.mult_invocations += stats.mult_invocations;
                        phase.counters.reduce_ops += stats.reduce_ops;
                        phase.counters.stall_cycles += stats.stall_cycles;
                        phase.counters.active_pe_cycles += stats.active_pe_cycles;
                        phase.counters.pe_cycles_available += grid_pes * stats.cycles;
                        phase.counters.bytes_scratchpad += stats.bytes_scratchpad;
                        for (src_block_row, triples) in per_source {
                            for (r, c, v) in triples {
                                let row = src_block_row * t_dim + r;
                                if row >= out.rows() {
                                    continue; // padded row of an edge tile
                                }
                                let col = f * c_dim + c;
                                let cur = out.get(row, col);
                                out.set(row, col, cur + v);
                                // scratchpad accumulator read + write
                                phase.counters.bytes_scratchpad += 2 * OUTPUT_ELEM_BYTES;
                                phase.counters.adds += 1;
                            }
                        }
                    }
                    if from_registers {
                        // one feedback rotation readies the d registers
                        phase.cycles += t_dim as u64;
                    }
                    first_pass = false;
                    // the dense panel traverses the chain, one tile of
                    // latency per chained hop
                    let pass_cycles =
                        chain_max + (chunk.len().saturating_sub(1) * t_dim) as u64;
                    balance.assign(pass_cycles);
                }
            }
        }
        phase.cycles += balance.makespan();
        Ok(out)
    }

    /// Builds the chain work items of one tile column, packing when enabled.
    fn chain_items(&self, grid: &TileGrid, bj: usize) -> Result<Vec<ChainItem>> {
        let nonzero: Vec<usize> = (0..grid.block_rows)
            .filter(|&bi| !grid.tiles[bi][bj].is_empty())
            .collect();
        let padded: Vec<SparseTile> = nonzero
            .iter()
            .map(|&bi| pad_tile_rows(&grid.tiles[bi][bj], self.cfg.tile_rows))
            .collect();
        if !self.cfg.packing || nonzero.len() < 2 {
            return Ok(nonzero
                .into_iter()
                .zip(padded)
                .map(|(block_row, tile)| ChainItem::Plain { block_row, tile })
                .collect());
        }
        let opts = PackOptions {
            alpha: self.cfg.alpha,
            sparsity_counts_zeros: self.cfg.sparsity_counts_zeros,
            max_group: self.cfg.pack_group,
        };
        let (plan, packed) = greedy_pack(&padded, opts)?;
        let mut items = Vec::new();
        for (group, ptile) in plan.pairs.iter().zip(packed) {
            let sources = group.iter().map(|&local| nonzero[local]).collect();
            items.push(ChainItem::Packed { tile: ptile, sources });
        }
        for &local in &plan.leftovers {
            items.push(ChainItem::Plain {
                block_row: nonzero[local],
                tile: padded[local].clone(),
            });
        }
        Ok(items)
    }

    /// Runs one chain slot; yields (source block-row, triples) per source.
    fn run_chain_item(
        &mut self,
        item: &ChainItem,
        panel: &DenseMatrix,
        k_dim: usize,
        mode: PeMode,
        from_registers: bool,
    ) -> Result<(Vec<(usize, Vec<(usize, usize, f32)>)>, TileStats)> {
        let operand = if from_registers {
            self.agg_tile.set_d_plane(panel.clone());
            DenseOperand::Resident
        } else {
            DenseOperand::Stream(panel)
        };
        match item {
            ChainItem::Plain { block_row, tile } => {
                let streams = plain_streams(tile);
                let (raw, stats) = self.agg_tile.run_spmm_streams(
                    &streams,
                    k_dim,
                    operand,
                    mode,
                    false,
                    1,
                    self.trace.as_mut(),
                )?;
                let triples = raw
                    .into_iter()
                    .map(|dr| (dr.packed_row, dr.col, dr.val))
                    .collect();
                Ok((vec![(*block_row, triples)], stats))
            }
            ChainItem::Packed { tile, sources } => {
                let (raw, stats) = self.agg_tile.run_spmm_streams(
                    &tile.rows,
                    tile.n_cols,
                    operand,
                    mode,
                    true,
                    tile.sources(),
                    self.trace.as_mut(),
                )?;
                let routed = reorder_results(tile, &raw)?;
                let per_source = sources.iter().copied().zip(routed).collect();
                Ok((per_source, stats))
            }
        }
    }

    fn post_vector_op(phase: &mut PhaseStats, elements: u64, ops_per_element: u64) {
        phase.cycles += elements.div_ceil(POST_LANE_WIDTH);
        phase.counters.adds += elements * ops_per_element;
    }

    // --- layer drivers ------------------------------------------------------

    /// GCN: X' = H x Theta on the cluster, then the normalized adjacency
    /// times X' as weighted SpMM riding the feedback path.
    pub fn gcn_layer(
        &mut self,
        g: &Graph,
        spec: &LayerSpec,
        h: &DenseMatrix,
        layer: &mut LayerReport,
    ) -> Result<DenseMatrix> {
        let xp = self.cluster_gemm(h, &spec.weight, &mut layer.transformation)?;
        let norm = gcn_normalize(g);
        let mut out = self.aggregation_spmm(
            &norm,
            &xp,
            PeMode::WeightedSpmm,
            &mut layer.aggregation,
            true,
        )?;
        apply_bias_activation(&mut out, spec.bias.as_deref(), spec.activation);
        Ok(out)
    }

    /// GraphSAGE: transform, mean aggregation over the closed neighborhood
    /// (direct reduction path cross-checked against the weighted path), then
    /// row-wise L2 normalization.
    pub fn sage_layer(
        &mut self,
        g: &Graph,
        spec: &LayerSpec,
        h: &DenseMatrix,
        layer: &mut LayerReport,
    ) -> Result<DenseMatrix> {
        let xp = self.cluster_gemm(h, &spec.weight, &mut layer.transformation)?;
        let hat = g.adjacency_with_self_loops();

        // direct path: neighborhood sums via the direct-aggregation mode,
        // divided by the closed-neighborhood size afterwards
        let sums = self.aggregation_spmm(
            &hat,
            &xp,
            PeMode::DirectAggr(Reduction::Add),
            &mut layer.aggregation,
            true,
        )?;
        let deg_hat = hat.row_lengths();
        let mut direct = sums;
        for r in 0..direct.rows() {
            let inv = 1.0 / deg_hat[r] as f32;
            for c in 0..direct.cols() {
                let v = direct.get(r, c) * inv;
                direct.set(r, c, v);
            }
        }
        Self::post_vector_op(&mut layer.post, (direct.rows() * direct.cols()) as u64, 1);

        // weighted path: 1/(deg+1) coefficients as SpMM; must agree
        let mean_tile = mean_normalize(g);
        let mut scratch = PhaseStats::default();
        let weighted =
            self.aggregation_spmm(&mean_tile, &xp, PeMode::WeightedSpmm, &mut scratch, false)?;
        let dev = rel_dev(&direct, &weighted);
        if dev > 1e-6 {
            return Err(SimError::Layer {
                layer: layer.index,
                phase: "aggregation".into(),
                msg: format!(
                    "direct and weighted mean paths diverged: rel {dev:.3e} > 1e-6"
                ),
            });
        }

        let mut out = direct;
        apply_bias_activation(&mut out, spec.bias.as_deref(), spec.activation);
        // row-wise L2 normalization in the post unit; zero rows stay zero
        for r in 0..out.rows() {
            let norm: f32 = out.row(r).iter().map(|v| v * v).sum::<f32>().sqrt();
            if norm > 0.0 {
                for c in 0..out.cols() {
                    let v = out.get(r, c) / norm;
                    out.set(r, c, v);
                }
            }
        }
        Self::post_vector_op(&mut layer.post, (out.rows() * out.cols()) as u64, 2);
        Ok(out)
    }

    /// GIN: aggregate first (neighbor sums without self), combine with the
    /// (1 + epsilon)-scaled self term, then the dense transform.
    pub fn gin_layer(
        &mut self,
        g: &Graph,
        spec: &LayerSpec,
        h: &DenseMatrix,
        layer: &mut LayerReport,
    ) -> Result<DenseMatrix> {
        debug_assert_eq!(spec.order, LayerOrder::AggregateFirst);
        let sums = self.aggregation_spmm(
            &g.adjacency,
            h,
            PeMode::DirectAggr(Reduction::Add),
            &mut layer.aggregation,
            false,
        )?;
        let mut combined = sums;
        let scale = 1.0 + spec.epsilon;
        for r in 0..combined.rows() {
            for c in 0..combined.cols() {
                let v = combined.get(r, c) + scale * h.get(r, c);
                combined.set(r, c, v);
            }
        }
        Self::post_vector_op(
            &mut layer.post,
            (combined.rows() * combined.cols()) as u64,
            2,
        );
        let mut out = self.cluster_gemm(&combined, &spec.weight, &mut layer.transformation)?;
        apply_bias_activation(&mut out, spec.bias.as_deref(), spec.activation);
        Ok(out)
    }

    /// GAT attention tile: H1' = Z a1 and H2' = Z a2 on the cluster, logits
    /// on the self-looped pattern, LeakyReLU plus row softmax in the post
    /// unit. Rows sum to one.
    pub fn gat_attention(
        &mut self,
        g: &Graph,
        spec: &LayerSpec,
        z: &DenseMatrix,
        transformation: &mut PhaseStats,
        post: &mut PhaseStats,
    ) -> Result<SparseTile> {
        let (a1, a2) = spec.attention.as_ref().ok_or_else(|| SimError::Layer {
            layer: 0,
            phase: "attention".into(),
            msg: "GAT layer without attention vectors".into(),
        })?;
        let a1m = DenseMatrix::from_vec(z.cols(), 1, a1.clone())?;
        let a2m = DenseMatrix::from_vec(z.cols(), 1, a2.clone())?;
        let h1 = self.cluster_gemm(z, &a1m, transformation)?;
        let h2 = self.cluster_gemm(z, &a2m, transformation)?;

        let hat = g.adjacency_with_self_loops();
        let logits = hat.map_values(|i, j, _| h1.get(i, 0) + h2.get(j, 0));
        let slope = match spec.activation {
            Activation::LeakyRelu(s) => s,
            _ => 0.2,
        };
        let att = attention_softmax(&logits, slope);
        let entries = att.nnz() as u64;
        post.cycles += entries * self.cfg.softmax_cycles_per_entry;
        post.counters.adds += entries * 3;
        post.counters.bytes_scratchpad += entries * (OUTPUT_ELEM_BYTES + 2 * INDEX_BYTES);
        Ok(att)
    }

    /// GAT: Z = H W, the attention tile, then attention x Z as weighted SpMM.
    pub fn gat_layer(
        &mut self,
        g: &Graph,
        spec: &LayerSpec,
        h: &DenseMatrix,
        layer: &mut LayerReport,
    ) -> Result<DenseMatrix> {
        let z = self.cluster_gemm(h, &spec.weight, &mut layer.transformation)?;
        let att = self.gat_attention(g, spec, &z, &mut layer.transformation, &mut layer.post)?;
        let mut out =
            self.aggregation_spmm(&att, &z, PeMode::WeightedSpmm, &mut layer.aggregation, false)?;
        apply_bias_activation(&mut out, spec.bias.as_deref(), spec.activation);
        Ok(out)
    }

    /// Runs all layers through the simulated hardware, checking each
    /// against the dense-math reference when verification is on.
    pub fn run_inference(
        &mut self,
        g: &Graph,
        layers: &[LayerSpec],
        seed: u64,
    ) -> Result<(DenseMatrix, SimReport)> {
        let mut report = SimReport::new(self.cfg.clone(), seed);
        let mut h = g.features.clone();
        let mut ref_h = MatF64::from_dense(&g.features);

        // initial HBM traffic: graph structure, features, and weights
        let mut input_hbm = (g.features.rows() * g.features.cols()) as u64 * INPUT_ELEM_BYTES
            + g.adjacency.nnz() as u64 * (2 * INDEX_BYTES + INPUT_ELEM_BYTES);
        for spec in layers {
            input_hbm += (spec.weight.rows() * spec.weight.cols()) as u64 * INPUT_ELEM_BYTES;
        }

        for (i, spec) in layers.iter().enumerate() {
            spec.validate(i, h.cols())?;
            let mut layer = LayerReport {
                index: i,
                model: spec.model.name().into(),
                ..Default::default()
            };
            if i == 0 {
                layer.transformation.counters.bytes_hbm += input_hbm;
            }
            h = match spec.model {
                ModelKind::Gcn => self.gcn_layer(g, spec, &h, &mut layer)?,
                ModelKind::GraphSage => self.sage_layer(g, spec, &h, &mut layer)?,
                ModelKind::Gin => self.gin_layer(g, spec, &h, &mut layer)?,
                ModelKind::Gat => self.gat_layer(g, spec, &h, &mut layer)?,
            };
            if i + 1 == layers.len() {
                // final embeddings leave for HBM
                layer.post.counters.bytes_hbm +=
                    (h.rows() * h.cols()) as u64 * OUTPUT_ELEM_BYTES;
            }
            if self.cfg.verify {
                ref_h = layer_reference(g, spec, &ref_h);
                let dev = ref_h.max_rel_deviation(&h);
                layer.max_rel_deviation = dev;
                if dev > self.cfg.verify_tolerance {
                    return Err(SimError::VerificationFailed {
                        layer: i,
                        phase: "layer".into(),
                        deviation: dev,
                        tolerance: self.cfg.verify_tolerance,
                    });
                }
            }
            report.layers.push(layer);
        }
        report.verified = self.cfg.verify;
        report.finalize();
        Ok((h, report))
    }
}

fn rel_dev(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.max_abs_rel_diff(b)
}

/// Pads a tile's row count up to the PE grid height so packed partners
/// share dimensions.
fn pad_tile_rows(t: &SparseTile, rows: usize) -> SparseTile {
    if t.n_rows() == rows {
        return t.clone();
    }
    let entries: Vec<Entry> = t.entries().to_vec();
    SparseTile::from_coo(rows, t.n_cols(), entries).expect("padding preserves entries")
}
