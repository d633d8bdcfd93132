//! Property tests for the structural invariants: format round trips,
//! partition identity, oracle agreement, FIFO ordering, and the
//! semantics-preservation of packing.

use proptest::prelude::*;

use gnnsim::balancer::{pack_tiles, run_packed_spmm, triples_to_dense};
use gnnsim::matrix::{
    dense_matmul_oracle, partition_2x2, spmm_oracle, DenseMatrix, Entry, SparseTile,
};
use gnnsim::pe::{
    assemble_drains, DenseOperand, FifoCam, FifoEntry, PeMode, SystolicTile,
};

fn arb_dense(max_r: usize, max_c: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-4i8..=4, r * c).prop_map(move |vals| {
            DenseMatrix::from_vec(r, c, vals.into_iter().map(|v| v as f32).collect()).unwrap()
        })
    })
}

fn arb_tile(max_r: usize, max_c: usize) -> impl Strategy<Value = SparseTile> {
    (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
        proptest::collection::vec(proptest::bool::weighted(0.25), r * c).prop_map(
            move |mask| {
                let mut entries = Vec::new();
                for (i, keep) in mask.into_iter().enumerate() {
                    if keep {
                        entries.push(Entry {
                            row: i / c,
                            col: i % c,
                            val: ((i % 7) as f32) - 3.0,
                        });
                    }
                }
                SparseTile::from_coo(r, c, entries).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csr_round_trip(t in arb_tile(12, 12)) {
        let (ptrs, cols, vals) = t.to_csr();
        let back = SparseTile::from_csr(t.n_cols(), &ptrs, &cols, &vals).unwrap();
        prop_assert_eq!(back.entries(), t.entries());
    }

    #[test]
    fn partition_then_reassemble_is_identity(m in arb_dense(9, 9)) {
        let p = partition_2x2(&m);
        prop_assert_eq!(p.reassemble(), m);
    }

    #[test]
    fn spmm_oracle_agrees_with_dense_oracle(a in arb_dense(8, 8), b in arb_dense(8, 6)) {
        prop_assume!(a.cols() == b.rows());
        let s = SparseTile::from_dense(&a);
        prop_assert_eq!(
            spmm_oracle(&s, &b).unwrap(),
            dense_matmul_oracle(&a, &b).unwrap()
        );
    }

    #[test]
    fn oracles_are_pure(a in arb_dense(6, 6), b in arb_dense(6, 5)) {
        prop_assume!(a.cols() == b.rows());
        let c1 = dense_matmul_oracle(&a, &b).unwrap();
        let c2 = dense_matmul_oracle(&a, &b).unwrap();
        prop_assert_eq!(c1.data(), c2.data());
    }

    #[test]
    fn fifo_ordering_survives_any_op_sequence(ops in proptest::collection::vec((any::<bool>(), 1u32..5), 0..60)) {
        let mut f = FifoCam::new(4);
        let mut next = 0u32;
        let mut probe = 0u32;
        for (push, step) in ops {
            if push {
                if !f.is_full() {
                    next += step;
                    f.push(FifoEntry { idx: next, val: 1.0, mask: 0, dup_follows: false });
                }
            } else {
                probe = probe.max(probe + step / 2);
                f.find_and_skip(probe.min(next));
            }
            prop_assert!(f.indices_strictly_increasing());
            prop_assert!(f.occupancy() <= f.capacity());
        }
    }

    #[test]
    fn tile_spmm_equals_oracle(s in arb_tile(16, 24), dcols in 1usize..5) {
        let d = DenseMatrix::from_vec(
            s.n_cols(),
            dcols,
            (0..s.n_cols() * dcols).map(|i| ((i % 9) as f32) - 4.0).collect(),
        ).unwrap();
        let mut tile = SystolicTile::new(s.n_rows(), dcols, 4);
        let (drains, _) = tile
            .run_spmm(&s, DenseOperand::Stream(&d), PeMode::WeightedSpmm, None)
            .unwrap();
        prop_assert_eq!(
            assemble_drains(s.n_rows(), dcols, &drains),
            spmm_oracle(&s, &d).unwrap()
        );
    }

    #[test]
    fn pack_unpack_round_trip(rows in 1usize..10, cols in 1usize..16, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mk = |rng: &mut rand::rngs::StdRng, occ: f64| {
            let mut entries = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if rng.gen_bool(occ) {
                        entries.push(Entry { row: r, col: c, val: rng.gen_range(-3..=3) as f32 });
                    }
                }
            }
            SparseTile::from_coo(rows, cols, entries).unwrap()
        };
        let t1 = mk(&mut rng, 0.4);
        let t2 = mk(&mut rng, 0.15);
        let p = pack_tiles(&[(0, &t1), (1, &t2)]).unwrap();
        let unpacked = p.unpack().unwrap();
        prop_assert_eq!(unpacked[0].entries(), t1.entries());
        prop_assert_eq!(unpacked[1].entries(), t2.entries());
        // per-source columns strictly increase within each packed row
        for row in &p.rows {
            for mask in 0..2u8 {
                let cols: Vec<u32> = row.iter().filter(|e| e.mask == mask).map(|e| e.col).collect();
                prop_assert!(cols.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn packed_execution_preserves_semantics(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let rows = rng.gen_range(1..=12);
        let cols = rng.gen_range(2..=20);
        let dcols = rng.gen_range(1..=4);
        let mk = |rng: &mut rand::rngs::StdRng, occ: f64| {
            let mut entries = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if rng.gen_bool(occ) {
                        entries.push(Entry { row: r, col: c, val: rng.gen_range(-3..=3) as f32 });
                    }
                }
            }
            SparseTile::from_coo(rows, cols, entries).unwrap()
        };
        let t1 = mk(&mut rng, 0.45);
        let t2 = mk(&mut rng, 0.1);
        let d = DenseMatrix::from_vec(
            cols,
            dcols,
            (0..cols * dcols).map(|_| rng.gen_range(-3..=3) as f32).collect(),
        ).unwrap();
        let p = pack_tiles(&[(0, &t1), (1, &t2)]).unwrap();
        let mut tile = SystolicTile::new(rows, dcols, 4);
        let (routed, _) = run_packed_spmm(&mut tile, &p, &d, PeMode::WeightedSpmm, None).unwrap();
        prop_assert_eq!(triples_to_dense(rows, dcols, &routed[0]), spmm_oracle(&t1, &d).unwrap());
        prop_assert_eq!(triples_to_dense(rows, dcols, &routed[1]), spmm_oracle(&t2, &d).unwrap());
    }
}
