//! Offline greedy packing of complementary sparse tiles into condensed
//! tiles, and the result reordering that scatters packed outputs back to
//! the coordinates of their source tiles.
//!
//! Packing pairs occupancy-heavy tiles with light ones. Within a pair the
//! rows of the fuller tile, sorted by nonzero count descending, are merged
//! with the rows of the lighter tile sorted ascending; the sorted-reverse
//! pairing minimizes the longest combined row and with it the tail of the
//! packed pass. Each merged entry carries a source mask bit; two arrays per
//! packed tile map (packed row position, mask) back to the original row.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::matrix::{DenseMatrix, Entry, SparseTile};
use crate::pe::{
    DenseOperand, PeMode, RawDrain, StreamEntry, SystolicTile, TileStats, TraceSink,
};

/// Two (or up to four) complementary sparse tiles fused row-wise.
#[derive(Debug, Clone)]
pub struct PackedTile {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Per packed row: merged entries in non-decreasing column order, ties
    /// ordered by mask, `dup_follows` set on every entry whose successor
    /// shares its column.
    pub rows: Vec<Vec<StreamEntry>>,
    /// `row_reordering[packed_row][mask]` is the original row of that source;
    /// None where the source has no row mapped at this position.
    pub row_reordering: Vec<Vec<Option<usize>>>,
    /// Identities of the packed sources (caller-chosen tile ids).
    pub source_ids: Vec<usize>,
}

impl PackedTile {
    pub fn sources(&self) -> usize {
        self.source_ids.len()
    }

    /// Longest merged row (the packed pass tail is driven by it).
    pub fn max_row_len(&self) -> usize {
        self.rows.iter().map(|r| r.len()).max().unwrap_or(0)
    }

    /// Reconstructs every source tile (entry multisets must round-trip).
    pub fn unpack(&self) -> Result<Vec<SparseTile>> {
        let mut per_source: Vec<Vec<Entry>> = vec![Vec::new(); self.sources()];
        for (packed_row, entries) in self.rows.iter().enumerate() {
            for e in entries {
                let mask = e.mask as usize;
                let orig = self.row_reordering[packed_row]
                    .get(mask)
                    .copied()
                    .flatten()
                    .ok_or(SimError::ReorderCorruption {
                        mask: e.mask,
                        packed_row,
                    })?;
                per_source[mask].push(Entry {
                    row: orig,
                    col: e.col as usize,
                    val: e.val,
                });
            }
        }
        per_source
            .into_iter()
            .map(|entries| SparseTile::from_coo(self.n_rows, self.n_cols, entries))
            .collect()
    }
}

/// Accepted pairing decisions of one packing run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PackingPlan {
    pub alpha: f64,
    /// Groups of packed tile ids (pairs unless grouping is widened).
    pub pairs: Vec<Vec<usize>>,
    pub leftovers: Vec<usize>,
    /// Predicted cycle savings per accepted group.
    pub predicted_savings: Vec<u64>,
}

/// Knobs of the greedy packer.
#[derive(Debug, Clone, Copy)]
pub struct PackOptions {
    /// Occupancy cutoff separating seeking tiles from complementary ones.
    pub alpha: f64,
    /// When true, "sparsity" counts zero cells instead of nonzero cells,
    /// flipping the cutoff to 1 - alpha.
    pub sparsity_counts_zeros: bool,
    /// Maximum tiles fused into one packed tile (2..=4).
    pub max_group: usize,
}

impl Default for PackOptions {
    fn default() -> Self {
        PackOptions {
            alpha: 0.5,
            sparsity_counts_zeros: false,
            max_group: 2,
        }
    }
}

/// Predicted pass cycles for a set of row lengths against a K-deep dense
/// stream: fill skew, the dense stream, the tail of the longest row, drain.
fn predicted_pass_cycles(n_rows: usize, k_dim: usize, max_row_len: usize, banks: usize) -> u64 {
    let tail = max_row_len.saturating_sub(k_dim);
    (n_rows + k_dim + tail + n_rows * banks) as u64 + 1
}

fn predicted_tile_cycles(t: &SparseTile) -> u64 {
    let max_len = t.row_lengths().into_iter().max().unwrap_or(0);
    predicted_pass_cycles(t.n_rows(), t.n_cols(), max_len, 1)
}

/// Merges the rows of `sources` (already chosen) into a packed tile.
///
/// Rows of the first (fullest) source are sorted by nonzero count
/// descending; every further source is sorted ascending, so heavy rows pair
/// with light ones.
pub fn pack_tiles(sources: &[(usize, &SparseTile)]) -> Result<PackedTile> {
    assert!(
        (2..=4).contains(&sources.len()),
        "packing fuses 2 to 4 sources"
    );
    let (n_rows, n_cols) = (sources[0].1.n_rows(), sources[0].1.n_cols());
    for (_, t) in sources {
        if t.n_rows() != n_rows || t.n_cols() != n_cols {
            return Err(SimError::Packing(format!(
                "tile dims differ: {}x{} vs {}x{}",
                n_rows,
                n_cols,
                t.n_rows(),
                t.n_cols()
            )));
        }
    }

    // row orders: descending for the fullest source, ascending for the rest;
    // ties break on the original row index for determinism
    let mut orders: Vec<Vec<usize>> = Vec::new();
    for (i, (_, t)) in sources.iter().enumerate() {
        let lens = t.row_lengths();
        let mut idx: Vec<usize> = (0..n_rows).collect();
        if i == 0 {
            idx.sort_by_key(|&r| (std::cmp::Reverse(lens[r]), r));
        } else {
            idx.sort_by_key(|&r| (lens[r], r));
        }
        orders.push(idx);
    }

    let mut rows = Vec::with_capacity(n_rows);
    let mut row_reordering = Vec::with_capacity(n_rows);
    for pos in 0..n_rows {
        let mut merged: Vec<StreamEntry> = Vec::new();
        let mut mapping = Vec::with_capacity(sources.len());
        for (mask, (_, t)) in sources.iter().enumerate() {
            let orig_row = orders[mask][pos];
            mapping.push(Some(orig_row));
            for e in t.row_entries(orig_row) {
                merged.push(StreamEntry {
                    col: e.col as u32,
                    val: e.val,
                    mask: mask as u8,
                    dup_follows: false,
                });
            }
        }
        merged.sort_by_key(|e| (e.col, e.mask));
        for i in 0..merged.len().saturating_sub(1) {
            if merged[i].col == merged[i + 1].col {
                debug_assert_ne!(
                    merged[i].mask, merged[i + 1].mask,
                    "one source row holds a duplicate column"
                );
                merged[i].dup_follows = true;
            }
        }
        rows.push(merged);
        row_reordering.push(mapping);
    }

    Ok(PackedTile {
        n_rows,
        n_cols,
        rows,
        row_reordering,
        source_ids: sources.iter().map(|(id, _)| *id).collect(),
    })
}

/// Greedy packing: nonzero tiles sorted by occupancy, fullest paired with
/// emptiest while the predicted cycles of the packed pass undercut the
/// separate passes. The cutoff only separates seeking tiles (above it) from
/// complementary ones: two seeking tiles are never fused.
pub fn greedy_pack(
    tiles: &[SparseTile],
    opts: PackOptions,
) -> Result<(PackingPlan, Vec<PackedTile>)> {
    if !(0.0..1.0).contains(&opts.alpha) || opts.alpha == 0.0 {
        return Err(SimError::Packing(format!(
            "alpha {} outside (0, 1)",
            opts.alpha
        )));
    }
    if !(2..=4).contains(&opts.max_group) {
        return Err(SimError::Packing(format!(
            "max_group {} outside 2..=4",
            opts.max_group
        )));
    }
    let cutoff = if opts.sparsity_counts_zeros {
        1.0 - opts.alpha
    } else {
        opts.alpha
    };

    // empty tiles are dropped outright; only tiles with nonzeros take part
    let mut order: Vec<usize> = (0..tiles.len()).filter(|&i| !tiles[i].is_empty()).collect();
    for &i in &order {
        if tiles[i].n_rows() != tiles[order[0]].n_rows()
            || tiles[i].n_cols() != tiles[order[0]].n_cols()
        {
            return Err(SimError::Packing("tiles must share dimensions".into()));
        }
    }
    order.sort_by(|&a, &b| {
        tiles[b]
            .occupancy()
            .partial_cmp(&tiles[a].occupancy())
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut plan = PackingPlan {
        alpha: opts.alpha,
        pairs: Vec::new(),
        leftovers: Vec::new(),
        predicted_savings: Vec::new(),
    };
    let mut packed = Vec::new();

    let mut lo = 0usize;
    let mut hi = order.len();
    while lo < hi {
        let full_id = order[lo];
        if hi - lo == 1 {
            plan.leftovers.push(full_id);
            lo += 1;
            break;
        }
        let mut group = vec![(full_id, &tiles[full_id])];
        let mut separate_cycles = predicted_tile_cycles(&tiles[full_id]);
        let mut accepted_savings = 0u64;
        // absorb complementary tiles from the empty end while each absorption
        // still predicts a saving
        while group.len() < opts.max_group && lo + 1 < hi {
            let cand_id = order[hi - 1];
            let full_side = tiles[full_id].occupancy() > cutoff;
            let cand_side = tiles[cand_id].occupancy() > cutoff;
            if full_side && cand_side {
                // two seeking tiles never pack; a group holds at most one
                // tile above the cutoff
                break;
            }
            let mut trial = group.clone();
            trial.push((cand_id, &tiles[cand_id]));
            let trial_packed = pack_tiles(&trial)?;
            let packed_cycles = predicted_pass_cycles(
                trial_packed.n_rows,
                trial_packed.n_cols,
                trial_packed.max_row_len(),
                trial.len(),
            );
            let trial_separate = separate_cycles + predicted_tile_cycles(&tiles[cand_id]);
            if packed_cycles >= trial_separate {
                break;
            }
            accepted_savings = trial_separate - packed_cycles;
            separate_cycles = trial_separate;
            group = trial;
            hi -= 1;
        }
        if group.len() >= 2 {
            plan.pairs.push(group.iter().map(|(id, _)| *id).collect());
            plan.predicted_savings.push(accepted_savings);
            packed.push(pack_tiles(&group)?);
        } else {
            plan.leftovers.push(full_id);
        }
        lo += 1;
    }
    for &rest in &order[lo..hi.max(lo)] {
        plan.leftovers.push(rest);
    }
    plan.leftovers.sort_unstable();
    Ok((plan, packed))
}

/// Routes raw packed drains back to the coordinates of their source tiles.
/// Returns one sorted triple list per source.
pub fn reorder_results(
    p: &PackedTile,
    raw: &[RawDrain],
) -> Result<Vec<Vec<(usize, usize, f32)>>> {
    let mut per_source: Vec<Vec<(usize, usize, f32)>> = vec![Vec::new(); p.sources()];
    for d in raw {
        let row = p
            .row_reordering
            .get(d.packed_row)
            .and_then(|m| m.get(d.mask as usize))
            .copied()
            .flatten()
            .ok_or(SimError::ReorderCorruption {
                mask: d.mask,
                packed_row: d.packed_row,
            })?;
        per_source[d.mask as usize].push((row, d.col, d.val));
    }
    for list in per_source.iter_mut() {
        list.sort_by_key(|&(r, c, _)| (r, c));
    }
    Ok(per_source)
}

/// Executes a packed tile on a systolic tile and reorders the outputs.
/// Returns the per-source triples and the pass stats.
pub fn run_packed_spmm(
    tile: &mut SystolicTile,
    p: &PackedTile,
    d: &DenseMatrix,
    mode: PeMode,
    trace: Option<&mut TraceSink>,
) -> Result<(Vec<Vec<(usize, usize, f32)>>, TileStats)> {
    if d.rows() != p.n_cols {
        return Err(SimError::DimMismatch {
            left_rows: p.n_rows,
            left_cols: p.n_cols,
            right_rows: d.rows(),
            right_cols: d.cols(),
        });
    }
    let (raw, stats) = tile.run_spmm_streams(
        &p.rows,
        p.n_cols,
        DenseOperand::Stream(d),
        mode,
        true,
        p.sources(),
        trace,
    )?;
    let routed = reorder_results(p, &raw)?;
    Ok((routed, stats))
}

/// Dense view of reordered triples, for oracle comparisons.
pub fn triples_to_dense(n_rows: usize, n_cols: usize, triples: &[(usize, usize, f32)]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n_rows, n_cols);
    for &(r, c, v) in triples {
        m.set(r, c, v);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::spmm_oracle;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tile_from_lens(lens: &[usize], n_cols: usize) -> SparseTile {
        let entries = lens
            .iter()
            .enumerate()
            .flat_map(|(r, &len)| (0..len).map(move |c| Entry { row: r, col: c, val: 1.0 }))
            .collect();
        SparseTile::from_coo(lens.len(), n_cols, entries).unwrap()
    }

    fn random_tile(rng: &mut StdRng, rows: usize, cols: usize, occ: f64) -> SparseTile {
        let mut entries = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if rng.gen_bool(occ) {
                    entries.push(Entry { row: r, col: c, val: rng.gen_range(-4..=4) as f32 });
                }
            }
        }
        SparseTile::from_coo(rows, cols, entries).unwrap()
    }

    #[test]
    fn sorted_reverse_pairing_of_row_counts() {
        // row counts [4,1,0,2] and [1,3,4,2]: fullest row meets emptiest
        let t1 = tile_from_lens(&[4, 1, 0, 2], 8);
        let t2 = tile_from_lens(&[1, 3, 4, 2], 8);
        let p = pack_tiles(&[(0, &t1), (1, &t2)]).unwrap();
        // packed position 0 holds t1's heaviest row (0, len 4) and t2's
        // lightest (0, len 1)
        assert_eq!(p.row_reordering[0], vec![Some(0), Some(0)]);
        assert_eq!(p.rows[0].len(), 5);
        // position by position the combined lengths are balanced
        let combined: Vec<usize> = p.rows.iter().map(|r| r.len()).collect();
        assert_eq!(combined.iter().max(), Some(&5));
        // exhaustive check happens in `sorted_pairing_minimizes_max_row`
    }

    #[test]
    fn pack_with_empty_partner_degenerates() {
        let t1 = tile_from_lens(&[2, 1], 4);
        let t2 = SparseTile::empty(2, 4);
        let p = pack_tiles(&[(7, &t1), (9, &t2)]).unwrap();
        assert!(p.rows.iter().flatten().all(|e| e.mask == 0));
        let unpacked = p.unpack().unwrap();
        assert_eq!(unpacked[0].entries(), t1.entries());
        assert!(unpacked[1].is_empty());
    }

    #[test]
    fn identical_patterns_kept_as_masked_copies() {
        let t = tile_from_lens(&[2, 2], 4);
        let p = pack_tiles(&[(0, &t), (1, &t)]).unwrap();
        // every column collides: both copies kept, distinguished by mask
        for row in &p.rows {
            assert_eq!(row.len(), 4);
            let dup_count = row.iter().filter(|e| e.dup_follows).count();
            assert_eq!(dup_count, 2);
        }
        let unpacked = p.unpack().unwrap();
        assert_eq!(unpacked[0].entries(), t.entries());
        assert_eq!(unpacked[1].entries(), t.entries());
    }

    #[test]
    fn unpack_round_trips_random_pairs() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..20 {
            let rows = rng.gen_range(1..=16);
            let cols = rng.gen_range(1..=16);
            let t1 = random_tile(&mut rng, rows, cols, 0.4);
            let t2 = random_tile(&mut rng, rows, cols, 0.1);
            let p = pack_tiles(&[(0, &t1), (1, &t2)]).unwrap();
            let unpacked = p.unpack().unwrap();
            assert_eq!(unpacked[0].entries(), t1.entries());
            assert_eq!(unpacked[1].entries(), t2.entries());
        }
    }

    #[test]
    fn greedy_pack_pairs_full_with_empty_sides() {
        let mut rng = StdRng::seed_from_u64(41);
        let tiles: Vec<SparseTile> = vec![
            random_tile(&mut rng, 8, 8, 0.7),
            random_tile(&mut rng, 8, 8, 0.05),
            random_tile(&mut rng, 8, 8, 0.6),
            random_tile(&mut rng, 8, 8, 0.1),
            SparseTile::empty(8, 8),
        ];
        let (plan, packed) = greedy_pack(&tiles, PackOptions::default()).unwrap();
        assert_eq!(plan.pairs.len(), 2);
        assert_eq!(packed.len(), 2);
        // fullest pairs with emptiest
        assert_eq!(plan.pairs[0], vec![0, 1]);
        assert_eq!(plan.pairs[1], vec![2, 3]);
        // the empty tile was dropped, not a leftover
        assert!(!plan.leftovers.contains(&4));
        for (pair, saving) in plan.pairs.iter().zip(&plan.predicted_savings) {
            assert!(*saving > 0, "{pair:?}");
        }
    }

    #[test]
    fn two_light_tiles_still_pack() {
        let mut rng = StdRng::seed_from_u64(43);
        let tiles = vec![
            random_tile(&mut rng, 8, 8, 0.2),
            random_tile(&mut rng, 8, 8, 0.15),
        ];
        let (plan, _) = greedy_pack(&tiles, PackOptions::default()).unwrap();
        assert_eq!(plan.pairs.len(), 1, "light tiles are complementary to each other");
    }

    #[test]
    fn two_seeking_tiles_never_pack() {
        let mut rng = StdRng::seed_from_u64(44);
        let tiles = vec![
            random_tile(&mut rng, 8, 8, 0.8),
            random_tile(&mut rng, 8, 8, 0.7),
        ];
        let (plan, packed) = greedy_pack(&tiles, PackOptions::default()).unwrap();
        assert!(packed.is_empty());
        assert_eq!(plan.leftovers, vec![0, 1]);
    }

    #[test]
    fn zero_counting_reading_flips_cutoff() {
        let mut rng = StdRng::seed_from_u64(45);
        // occupancies 0.8 and 0.7: zero fractions 0.2 and 0.3, both below an
        // alpha of 0.45 under the zero-counting reading, so both are
        // "seeking" there as well and still refuse to pack
        let tiles = vec![
            random_tile(&mut rng, 8, 8, 0.8),
            random_tile(&mut rng, 8, 8, 0.7),
        ];
        let opts = PackOptions { alpha: 0.45, sparsity_counts_zeros: true, ..Default::default() };
        let (plan, _) = greedy_pack(&tiles, opts).unwrap();
        assert!(plan.pairs.is_empty());
        // under the same flag, two mostly-zero tiles are complementary
        let light = vec![
            random_tile(&mut rng, 8, 8, 0.3),
            random_tile(&mut rng, 8, 8, 0.05),
        ];
        let (plan, _) = greedy_pack(&light, opts).unwrap();
        assert_eq!(plan.pairs.len(), 1);
    }

    #[test]
    fn greedy_pack_rejects_bad_alpha() {
        let tiles = vec![tile_from_lens(&[1], 4)];
        let err = greedy_pack(&tiles, PackOptions { alpha: 0.0, ..Default::default() });
        assert!(err.is_err());
    }

    #[test]
    fn pack_rejects_mismatched_dims() {
        let t1 = tile_from_lens(&[1, 1], 4);
        let t2 = tile_from_lens(&[1, 1, 1], 4);
        assert!(pack_tiles(&[(0, &t1), (1, &t2)]).is_err());
        assert!(greedy_pack(&[t1, t2], PackOptions::default()).is_err());
    }

    #[test]
    fn packed_execution_bit_identical_to_unpacked() {
        let mut rng = StdRng::seed_from_u64(53);
        for _ in 0..15 {
            let rows = rng.gen_range(1..=16);
            let cols = rng.gen_range(2..=24);
            let t1 = random_tile(&mut rng, rows, cols, 0.45);
            let t2 = random_tile(&mut rng, rows, cols, 0.05);
            let dcols = rng.gen_range(1..=6);
            let d = DenseMatrix::from_vec(
                cols,
                dcols,
                (0..cols * dcols).map(|_| rng.gen_range(-4..=4) as f32).collect(),
            )
            .unwrap();
            let p = pack_tiles(&[(0, &t1), (1, &t2)]).unwrap();
            let mut tile = SystolicTile::new(rows, dcols, 4);
            let (routed, stats) =
                run_packed_spmm(&mut tile, &p, &d, PeMode::WeightedSpmm, None).unwrap();
            let got1 = triples_to_dense(rows, dcols, &routed[0]);
            let got2 = triples_to_dense(rows, dcols, &routed[1]);
            assert_eq!(got1, spmm_oracle(&t1, &d).unwrap());
            assert_eq!(got2, spmm_oracle(&t2, &d).unwrap());

            // packed pass beats the two separate passes
            let (_, s1) = tile
                .run_spmm(&t1, DenseOperand::Stream(&d), PeMode::WeightedSpmm, None)
                .unwrap();
            let (_, s2) = tile
                .run_spmm(&t2, DenseOperand::Stream(&d), PeMode::WeightedSpmm, None)
                .unwrap();
            assert!(
                stats.cycles < s1.cycles + s2.cycles,
                "packed {} vs separate {}",
                stats.cycles,
                s1.cycles + s2.cycles
            );
        }
    }

    #[test]
    fn packed_direct_aggregation_matches_both_oracles() {
        let mut rng = StdRng::seed_from_u64(59);
        let rows = 8;
        let cols = 12;
        let t1 = random_tile(&mut rng, rows, cols, 0.5).map_values(|_, _, _| 1.0);
        let t2 = random_tile(&mut rng, rows, cols, 0.2).map_values(|_, _, _| 1.0);
        let d = DenseMatrix::from_vec(
            cols,
            3,
            (0..cols * 3).map(|_| rng.gen_range(-4..=4) as f32).collect(),
        )
        .unwrap();
        let p = pack_tiles(&[(0, &t1), (1, &t2)]).unwrap();
        let mut tile = SystolicTile::new(rows, 3, 4);
        let (routed, stats) =
            run_packed_spmm(&mut tile, &p, &d, PeMode::DirectAggr(crate::pe::Reduction::Add), None)
                .unwrap();
        assert_eq!(stats.mult_invocations, 0);
        assert_eq!(
            triples_to_dense(rows, 3, &routed[0]),
            spmm_oracle(&t1, &d).unwrap()
        );
        assert_eq!(
            triples_to_dense(rows, 3, &routed[1]),
            spmm_oracle(&t2, &d).unwrap()
        );
    }

    #[test]
    fn reorder_routes_by_table_lookup() {
        let t1 = tile_from_lens(&[0, 0, 0, 1], 4);
        let t2 = SparseTile::empty(4, 4);
        let p = pack_tiles(&[(0, &t1), (1, &t2)]).unwrap();
        // t1 row 3 (its only nonzero row) sorts to packed position 0
        assert_eq!(p.row_reordering[0][0], Some(3));
        let raw = [RawDrain { packed_row: 0, mask: 0, col: 2, val: 5.0 }];
        let routed = reorder_results(&p, &raw).unwrap();
        assert_eq!(routed[0], vec![(3, 2, 5.0)]);
        assert!(routed[1].is_empty());
    }

    #[test]
    fn reorder_empty_drain_gives_empty_lists() {
        let t1 = tile_from_lens(&[1], 4);
        let t2 = tile_from_lens(&[0], 4);
        let p = pack_tiles(&[(0, &t1), (1, &t2)]).unwrap();
        let routed = reorder_results(&p, &[]).unwrap();
        assert!(routed.iter().all(|l| l.is_empty()));
    }

    #[test]
    fn reorder_rejects_unknown_mask() {
        let t1 = tile_from_lens(&[1], 4);
        let t2 = tile_from_lens(&[0], 4);
        let p = pack_tiles(&[(0, &t1), (1, &t2)]).unwrap();
        let raw = [RawDrain { packed_row: 0, mask: 3, col: 0, val: 1.0 }];
        assert!(matches!(
            reorder_results(&p, &raw),
            Err(SimError::ReorderCorruption { mask: 3, .. })
        ));
    }

    #[test]
    fn sorted_pairing_minimizes_max_row() {
        // exhaustive oracle over all row pairings for small tiles
        fn exhaustive_min_max(l1: &[usize], l2: &[usize]) -> usize {
            fn go(l1: &[usize], remaining: &mut Vec<usize>, pos: usize, cur: usize, best: &mut usize) {
                if pos == l1.len() {
                    *best = (*best).min(cur);
                    return;
                }
                for i in 0..remaining.len() {
                    let v = remaining.remove(i);
                    let m = cur.max(l1[pos] + v);
                    if m < *best {
                        go(l1, remaining, pos + 1, m, best);
                    }
                    remaining.insert(i, v);
                }
            }
            let mut best = usize::MAX;
            let mut rem = l2.to_vec();
            go(l1, &mut rem, 0, 0, &mut best);
            best
        }

        let mut rng = StdRng::seed_from_u64(61);
        for _ in 0..25 {
            let rows = rng.gen_range(2..=7);
            let cols = 12;
            let l1: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..=cols)).collect();
            let l2: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..=cols)).collect();
            let t1 = tile_from_lens(&l1, cols);
            let t2 = tile_from_lens(&l2, cols);
            let p = pack_tiles(&[(0, &t1), (1, &t2)]).unwrap();
            // count by source lengths, dups included (packed rows merge them)
            let mut sorted1 = l1.clone();
            sorted1.sort_unstable_by(|a, b| b.cmp(a));
            let mut sorted2 = l2.clone();
            sorted2.sort_unstable();
            let greedy_max = sorted1
                .iter()
                .zip(&sorted2)
                .map(|(a, b)| a + b)
                .max()
                .unwrap();
            assert_eq!(greedy_max, exhaustive_min_max(&l1, &l2));
            assert_eq!(p.max_row_len(), greedy_max);
        }
    }

    #[test]
    fn three_way_grouping_behind_knob() {
        let mut rng = StdRng::seed_from_u64(67);
        let tiles: Vec<SparseTile> = vec![
            random_tile(&mut rng, 8, 8, 0.6),
            random_tile(&mut rng, 8, 8, 0.05),
            random_tile(&mut rng, 8, 8, 0.05),
        ];
        let opts = PackOptions { max_group: 3, ..Default::default() };
        let (plan, packed) = greedy_pack(&tiles, opts).unwrap();
        assert_eq!(plan.pairs.len(), 1);
        assert_eq!(plan.pairs[0].len(), 3);
        let p = &packed[0];
        let unpacked = p.unpack().unwrap();
        for (slot, &tid) in plan.pairs[0].iter().enumerate() {
            assert_eq!(unpacked[slot].entries(), tiles[tid].entries());
        }
    }

    #[test]
    fn plan_serializes_to_json() {
        let mut rng = StdRng::seed_from_u64(71);
        let tiles: Vec<SparseTile> = vec![
            random_tile(&mut rng, 4, 4, 0.8),
            random_tile(&mut rng, 4, 4, 0.1),
        ];
        let (plan, _) = greedy_pack(&tiles, PackOptions::default()).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        assert!(json.contains("\"alpha\""));
        let back: PackingPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back.pairs, plan.pairs);
    }
}
