//! Cycle-level model of one output-stationary systolic tile of hybrid-mode
//! processing elements.
//!
//! Each PE owns a small searchable FIFO (`FifoCam`) used in the sparse modes
//! to match incoming sparse column indices against the dense row counter
//! `b_row`. Matching is pipelined: an index match fetched in cycle `t` commits
//! its multiply-accumulate (or reduction) in cycle `t+1`. Dense-dense mode
//! bypasses the FIFO entirely and accumulates in place.
//!
//! Flow control: the dense stream never stalls (one element per column per
//! cycle, `b_row` advances as elements pass through). A full FIFO stalls the
//! sparse stream of that row for a cycle; nothing is ever dropped. In packed
//! mode, two entries with the same column from different source tiles are
//! served back-to-back by holding the dense element in place for one extra
//! cycle, each feeding its own accumulator bank.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Result, SimError};
use crate::matrix::{
    DenseMatrix, SparseTile, INDEX_BYTES, INPUT_ELEM_BYTES, OUTPUT_ELEM_BYTES,
};

/// Default searchable-FIFO depth; four entries cover the in-flight window.
pub const DEFAULT_FIFO_CAPACITY: usize = 4;

/// Reduction applied in direct-aggregation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Add,
    Min,
    Max,
    Mean,
}

/// Operating mode of a processing element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeMode {
    DenseDense,
    WeightedSpmm,
    DirectAggr(Reduction),
}

/// Maximum number of source tiles distinguishable by the entry mask.
pub const MAX_SOURCES: usize = 4;

/// One element of a (possibly packed) sparse row stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamEntry {
    pub col: u32,
    pub val: f32,
    pub mask: u8,
    /// True when the next stream entry of this row carries the same column
    /// (a packed duplicate from another source tile).
    pub dup_follows: bool,
}

/// Stored element of the searchable FIFO.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FifoEntry {
    pub idx: u32,
    pub val: f32,
    pub mask: u8,
    pub dup_follows: bool,
}

/// Circular searchable FIFO (index FIFO + value FIFO searched in parallel).
///
/// Indices from head to tail are strictly increasing; in packed mode two
/// adjacent entries may share an index when their source masks differ.
#[derive(Debug, Clone)]
pub struct FifoCam {
    capacity: usize,
    entries: VecDeque<FifoEntry>,
    high_water: usize,
    allow_dup_index: bool,
    #[cfg(debug_assertions)]
    shadow: Vec<FifoEntry>,
}

impl FifoCam {
    pub fn new(capacity: usize) -> Self {
        FifoCam {
            capacity,
            entries: VecDeque::with_capacity(capacity),
            high_water: 0,
            allow_dup_index: false,
            #[cfg(debug_assertions)]
            shadow: Vec::new(),
        }
    }

    pub fn with_dup_indices(capacity: usize) -> Self {
        let mut f = Self::new(capacity);
        f.allow_dup_index = true;
        f
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.entries.len()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn high_water(&self) -> usize {
        self.high_water
    }

    pub fn head(&self) -> Option<&FifoEntry> {
        self.entries.front()
    }

    pub fn head_idx(&self) -> Option<u32> {
        self.entries.front().map(|e| e.idx)
    }

    /// Enqueues an entry; returns false (and leaves the FIFO unchanged) when full.
    pub fn push(&mut self, entry: FifoEntry) -> bool {
        if self.is_full() {
            return false;
        }
        if let Some(back) = self.entries.back() {
            debug_assert!(
                back.idx < entry.idx
                    || (self.allow_dup_index && back.idx == entry.idx && back.mask != entry.mask),
                "FIFO indices must be strictly increasing per source: {} then {}",
                back.idx,
                entry.idx
            );
        }
        self.entries.push_back(entry);
        self.high_water = self.high_water.max(self.entries.len());
        #[cfg(debug_assertions)]
        self.shadow.push(entry);
        true
    }

    /// Expels every entry with a stored index strictly below `idx`, then
    /// reports whether the new head stores exactly `idx`.
    ///
    /// On a hit the head rests on the matched entry; on a miss it rests on
    /// the first entry above `idx` (or the FIFO is empty).
    pub fn find_and_skip(&mut self, idx: u32) -> (bool, f32) {
        #[cfg(debug_assertions)]
        let expected = {
            self.shadow.retain(|e| e.idx >= idx);
            match self.shadow.first() {
                Some(e) if e.idx == idx => (true, e.val),
                _ => (false, 0.0),
            }
        };
        while matches!(self.entries.front(), Some(e) if e.idx < idx) {
            self.entries.pop_front();
        }
        let found = match self.entries.front() {
            Some(e) if e.idx == idx => (true, e.val),
            _ => (false, 0.0),
        };
        #[cfg(debug_assertions)]
        debug_assert_eq!(
            found, expected,
            "Find&Skip diverged from the linear-scan shadow at idx {idx}"
        );
        found
    }

    /// Removes and returns the head entry (used to consume a matched element).
    pub fn pop_head(&mut self) -> Option<FifoEntry> {
        #[cfg(debug_assertions)]
        if !self.shadow.is_empty() {
            self.shadow.remove(0);
        }
        self.entries.pop_front()
    }

    /// Expels all entries with index strictly below `idx`.
    pub fn purge_below(&mut self, idx: u32) {
        #[cfg(debug_assertions)]
        self.shadow.retain(|e| e.idx >= idx);
        while matches!(self.entries.front(), Some(e) if e.idx < idx) {
            self.entries.pop_front();
        }
    }

    /// Checks the strictly-increasing (per source) invariant.
    pub fn indices_strictly_increasing(&self) -> bool {
        self.entries
            .iter()
            .zip(self.entries.iter().skip(1))
            .all(|(a, b)| {
                a.idx < b.idx || (self.allow_dup_index && a.idx == b.idx && a.mask != b.mask)
            })
    }
}

/// One accumulator bank of a PE.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    pub value: f32,
    pub matches: u64,
}

#[derive(Debug, Clone, Copy)]
struct PendingOp {
    a: f32,
    b: f32,
    mask: u8,
}

/// Sparse-side input of one PE cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseIn {
    pub row: u32,
    pub entry: StreamEntry,
}

/// Dense-side input of one PE cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseIn {
    pub row: u32,
    pub col: u32,
    pub val: f32,
}

/// What a PE committed this cycle (the pipelined op scheduled last cycle).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Committed {
    Mac { a: f32, b: f32, mask: u8 },
    Reduce { b: f32, mask: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommittedAt {
    pub op: Committed,
    pub out_row: u32,
    pub out_col: u32,
}

/// Outcome of one PE cycle.
#[derive(Debug, Clone, Default)]
pub struct CycleOut {
    /// Sparse input was consumed (latched or enqueued); forward it east.
    pub forward_sparse: Option<SparseIn>,
    /// Dense input was released; forward it south.
    pub forward_dense: Option<DenseIn>,
    /// Sparse input could not be accepted (FIFO full); upstream must hold.
    pub stall: bool,
    /// Dense element is retained one extra cycle for a packed duplicate.
    pub dense_hold: bool,
    /// Operation committed this cycle (scheduled in the previous one).
    pub committed: Option<CommittedAt>,
}

/// Hybrid-mode processing element.
#[derive(Debug, Clone)]
pub struct ProcessingElement {
    pub mode: PeMode,
    pub fifo: FifoCam,
    pub a_buf: f32,
    pub b_buf: f32,
    pub d_reg: f32,
    pub b_row: u32,
    pub prop_c: bool,
    pub c_bank: [Accumulator; MAX_SOURCES],
    pub c_h_idx: Option<u32>,
    pub c_v_idx: Option<u32>,
    assigned_row: u32,
    assigned_col: u32,
    pending: Option<PendingOp>,
    pub macs: u64,
    pub mult_invocations: u64,
    pub reduce_ops: u64,
    pub active_cycles: u64,
    pub stall_cycles: u64,
    pub fifo_pushes: u64,
}

impl ProcessingElement {
    pub fn new(mode: PeMode, fifo_capacity: usize, packed: bool) -> Self {
        let fifo = if packed {
            FifoCam::with_dup_indices(fifo_capacity)
        } else {
            FifoCam::new(fifo_capacity)
        };
        ProcessingElement {
            mode,
            fifo,
            a_buf: 0.0,
            b_buf: 0.0,
            d_reg: 0.0,
            b_row: 0,
            prop_c: false,
            c_bank: [Accumulator::default(); MAX_SOURCES],
            c_h_idx: None,
            c_v_idx: None,
            assigned_row: 0,
            assigned_col: 0,
            pending: None,
            macs: 0,
            mult_invocations: 0,
            reduce_ops: 0,
            active_cycles: 0,
            stall_cycles: 0,
            fifo_pushes: 0,
        }
    }

    pub fn assign(&mut self, row: u32, col: u32) {
        self.assigned_row = row;
        self.assigned_col = col;
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    fn commit_pending(&mut self) -> Option<CommittedAt> {
        let op = self.pending.take()?;
        let bank = &mut self.c_bank[op.mask as usize];
        let committed = match self.mode {
            PeMode::DirectAggr(red) => {
                let b = op.b;
                bank.value = match (red, bank.matches) {
                    (Reduction::Add | Reduction::Mean, _) => bank.value + b,
                    (Reduction::Min, 0) => b,
                    (Reduction::Min, _) => bank.value.min(b),
                    (Reduction::Max, 0) => b,
                    (Reduction::Max, _) => bank.value.max(b),
                };
                bank.matches += 1;
                self.reduce_ops += 1;
                Committed::Reduce { b, mask: op.mask }
            }
            _ => {
                bank.value += op.a * op.b;
                bank.matches += 1;
                self.macs += 1;
                self.mult_invocations += 1;
                Committed::Mac {
                    a: op.a,
                    b: op.b,
                    mask: op.mask,
                }
            }
        };
        self.active_cycles += 1;
        Some(CommittedAt {
            op: committed,
            out_row: self.c_h_idx.unwrap_or(self.assigned_row),
            out_col: self.c_v_idx.unwrap_or(self.assigned_col),
        })
    }

    fn schedule(&mut self, a: f32, b: f32, mask: u8, row: u32, col: u32) {
        debug_assert!(self.pending.is_none(), "MAC pipeline holds one op");
        self.a_buf = a;
        self.b_buf = b;
        self.pending = Some(PendingOp { a, b, mask });
        self.c_h_idx = Some(row);
        self.c_v_idx = Some(col);
    }

    /// Advances this PE by one cycle.
    ///
    /// Dense-dense mode multiplies and accumulates in place when both
    /// operands are present. The sparse modes match the incoming column
    /// index (or the FIFO contents) against `b_row` and schedule the
    /// fetched operands to commit in the next cycle.
    pub fn pe_cycle(&mut self, sparse_in: Option<SparseIn>, dense_in: Option<DenseIn>) -> CycleOut {
        let mut out = CycleOut::default();

        if self.mode == PeMode::DenseDense {
            if let (Some(s), Some(d)) = (sparse_in, dense_in) {
                // a arrives from the west, b from the north; FIFO is bypassed
                self.a_buf = s.entry.val;
                self.b_buf = d.val;
                self.c_bank[0].value += self.a_buf * self.b_buf;
                self.c_bank[0].matches += 1;
                self.macs += 1;
                self.mult_invocations += 1;
                self.active_cycles += 1;
                self.b_row += 1;
                out.committed = Some(CommittedAt {
                    op: Committed::Mac {
                        a: self.a_buf,
                        b: self.b_buf,
                        mask: 0,
                    },
                    out_row: self.assigned_row,
                    out_col: self.assigned_col,
                });
                out.forward_sparse = Some(s);
                out.forward_dense = Some(d);
            }
            return out;
        }

        // the op fetched last cycle lands first (FIFO_CAM and MAC are pipelined)
        out.committed = self.commit_pending();

        let Some(d) = dense_in else {
            // starved: the dense element is held upstream, nothing to compare
            return out;
        };
        debug_assert_eq!(
            d.row, self.b_row,
            "dense stream desynchronized from the b_row counter"
        );

        let mut hold = false;
        match sparse_in {
            Some(s) => {
                debug_assert_eq!(s.row, self.assigned_row, "sparse row misrouted");
                if s.entry.col == self.b_row {
                    // direct index match
                    self.fifo.purge_below(self.b_row);
                    self.schedule(s.entry.val, d.val, s.entry.mask, s.row, d.col);
                    hold = s.entry.dup_follows || self.fifo.head_idx() == Some(self.b_row);
                    out.forward_sparse = Some(s);
                } else if s.entry.col > self.b_row {
                    if let Some(h) = self.find_in_fifo(d) {
                        hold = h;
                    }
                    let pushed = self.fifo.push(FifoEntry {
                        idx: s.entry.col,
                        val: s.entry.val,
                        mask: s.entry.mask,
                        dup_follows: s.entry.dup_follows,
                    });
                    if pushed {
                        self.fifo_pushes += 1;
                        out.forward_sparse = Some(s);
                    } else {
                        out.stall = true;
                        self.stall_cycles += 1;
                    }
                } else {
                    // a_col < b_row cannot occur: an element is always matched
                    // or enqueued before its row index passes
                    panic!(
                        "sparse column {} arrived after dense row {} passed",
                        s.entry.col, self.b_row
                    );
                }
            }
            None => {
                if let Some(h) = self.find_in_fifo(d) {
                    hold = h;
                }
            }
        }

        if hold {
            out.dense_hold = true;
        } else {
            self.b_row += 1;
            out.forward_dense = Some(d);
        }
        out
    }

    /// Consults the FIFO for the current dense row. Returns Some(hold) when a
    /// match was consumed, None when nothing matched.
    fn find_in_fifo(&mut self, d: DenseIn) -> Option<bool> {
        let (found, _val) = self.fifo.find_and_skip(self.b_row);
        if !found {
            return None;
        }
        let ent = self.fifo.pop_head().expect("matched entry present");
        self.schedule(ent.val, d.val, ent.mask, self.assigned_row, d.col);
        Some(ent.dup_follows || self.fifo.head_idx() == Some(self.b_row))
    }

    /// Drains the accumulator banks: (mask, value, matches).
    pub fn drain(&self) -> Vec<(u8, f32, u64)> {
        let mut out = Vec::new();
        for (mask, bank) in self.c_bank.iter().enumerate() {
            if bank.matches > 0 {
                let value = match self.mode {
                    PeMode::DirectAggr(Reduction::Mean) => bank.value / bank.matches as f32,
                    _ => bank.value,
                };
                out.push((mask as u8, value, bank.matches));
            }
        }
        out
    }
}

/// Tab-separated per-cycle event sink: `cycle pe_row pe_col event operands`.
pub struct TraceSink {
    out: Box<dyn Write + Send>,
}

impl TraceSink {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        TraceSink { out }
    }

    pub fn to_file(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::create(path)?;
        Ok(TraceSink {
            out: Box::new(std::io::BufWriter::new(f)),
        })
    }

    pub fn in_memory() -> (Self, std::sync::Arc<std::sync::Mutex<Vec<u8>>>) {
        let buf = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let writer = SharedBuf(buf.clone());
        (TraceSink { out: Box::new(writer) }, buf)
    }

    pub fn line(&mut self, cycle: u64, row: usize, col: usize, event: &str, operands: &str) {
        let _ = writeln!(self.out, "{cycle}\t{row}\t{col}\t{event}\t{operands}");
    }
}

struct SharedBuf(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Counters produced by one tile pass.
#[derive(Debug, Clone, Default)]
pub struct TileStats {
    pub cycles: u64,
    pub compute_cycles: u64,
    pub drain_cycles: u64,
    pub macs: u64,
    pub mult_invocations: u64,
    pub reduce_ops: u64,
    pub stall_cycles: u64,
    pub dup_hold_cycles: u64,
    pub fifo_high_water: usize,
    /// Total committed-op cycles summed over PEs.
    pub active_pe_cycles: u64,
    /// Committed ops per PE of the worked region, row-major.
    pub pe_active: Vec<u64>,
    /// Active-PE count per cycle; length always equals `cycles`.
    pub activity_log: Vec<u32>,
    pub bytes_scratchpad: u64,
    /// PEs of the configured grid (for utilization accounting).
    pub grid_pes: u64,
}

impl TileStats {
    pub fn utilization(&self) -> f64 {
        if self.cycles == 0 || self.grid_pes == 0 {
            return 0.0;
        }
        self.active_pe_cycles as f64 / (self.grid_pes as f64 * self.cycles as f64)
    }

    pub fn merge(&mut self, other: &TileStats) {
        self.cycles += other.cycles;
        self.compute_cycles += other.compute_cycles;
        self.drain_cycles += other.drain_cycles;
        self.macs += other.macs;
        self.mult_invocations += other.mult_invocations;
        self.reduce_ops += other.reduce_ops;
        self.stall_cycles += other.stall_cycles;
        self.dup_hold_cycles += other.dup_hold_cycles;
        self.fifo_high_water = self.fifo_high_water.max(other.fifo_high_water);
        self.active_pe_cycles += other.active_pe_cycles;
        self.bytes_scratchpad += other.bytes_scratchpad;
    }
}

/// Closed-form cycle count of a dense R x K by K x C pass including drain:
/// K stream cycles, R-1 + C-1 wavefront skew, R drain cycles.
pub fn dense_pass_cycles(r: usize, c: usize, k: usize) -> u64 {
    (k + (r - 1) + (c - 1) + r) as u64
}

/// A raw drained output: packed row position, source mask, column, value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawDrain {
    pub packed_row: usize,
    pub mask: u8,
    pub col: usize,
    pub val: f32,
}

/// Assembles drains into a dense matrix (for oracle comparisons).
pub fn assemble_drains(n_rows: usize, n_cols: usize, drains: &[RawDrain]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n_rows, n_cols);
    for d in drains {
        m.set(d.packed_row, d.col, d.val);
    }
    m
}

/// Where the dense operand of an aggregation pass comes from.
pub enum DenseOperand<'a> {
    /// Streamed from scratchpad (bytes are charged).
    Stream(&'a DenseMatrix),
    /// Recirculated from the in-array registers after `feedback_x_prime`
    /// (no scratchpad bytes are charged for the operand).
    Resident,
}

/// Stats of a feedback pass.
#[derive(Debug, Clone)]
pub struct FeedbackStats {
    pub cycles: u64,
    pub bytes_moved: u64,
    /// prop_c control values per cycle: 1 for the initial cycle, then 0.
    pub prop_c_log: Vec<bool>,
}

#[derive(Clone, Copy)]
struct DenseSlot {
    k: u32,
    val: f32,
    spent: bool,
    hold: bool,
}

#[derive(Clone, Copy)]
struct SparseSlot {
    entry: StreamEntry,
    done: bool,
}

/// One output-stationary systolic tile.
///
/// Data moves one hop per cycle: sparse operands west to east, dense
/// operands north to south, and the feedback path returns results from the
/// bottom row into the `d` registers.
pub struct SystolicTile {
    pub rows: usize,
    pub cols: usize,
    pub fifo_capacity: usize,
    resident_result: Option<DenseMatrix>,
    d_plane: Option<DenseMatrix>,
}

impl SystolicTile {
    pub fn new(rows: usize, cols: usize, fifo_capacity: usize) -> Self {
        SystolicTile {
            rows,
            cols,
            fifo_capacity,
            resident_result: None,
            d_plane: None,
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(32, 32, DEFAULT_FIFO_CAPACITY)
    }

    pub fn resident_result(&self) -> Option<&DenseMatrix> {
        self.resident_result.as_ref()
    }

    pub fn d_plane(&self) -> Option<&DenseMatrix> {
        self.d_plane.as_ref()
    }

    /// Marks a matrix as already resident in the d registers (the engine
    /// uses this when a transformation pass left its result in the array).
    pub fn set_d_plane(&mut self, m: DenseMatrix) {
        self.d_plane = Some(m);
    }

    /// Dense-dense pass: `a` is R x K, `b` is K x C, result R x C.
    ///
    /// The event loop walks the wavefront cycle by cycle: `a[r][k]` enters
    /// row r at the west edge at cycle r + k, `b[k][c]` enters column c at
    /// the north edge at cycle k + c, and each value moves one hop per
    /// cycle, so PE (r, c) sees the k-th operand pair at cycle r + c + k.
    /// The pass ends with R drain cycles shifting the results out.
    pub fn run_dense(
        &mut self,
        a: &DenseMatrix,
        b: &DenseMatrix,
        mut trace: Option<&mut TraceSink>,
    ) -> Result<(DenseMatrix, TileStats)> {
        if a.cols() != b.rows() {
            return Err(SimError::DimMismatch {
                left_rows: a.rows(),
                left_cols: a.cols(),
                right_rows: b.rows(),
                right_cols: b.cols(),
            });
        }
        let (r_dim, k_dim, c_dim) = (a.rows(), a.cols(), b.cols());
        if r_dim > self.rows || c_dim > self.cols {
            return Err(SimError::TileOverflow {
                work_rows: r_dim,
                work_cols: c_dim,
                tile_rows: self.rows,
                tile_cols: self.cols,
            });
        }

        let mut acc = vec![0.0f32; r_dim * c_dim];
        let mut stats = TileStats {
            grid_pes: (self.rows * self.cols) as u64,
            pe_active: vec![0u64; r_dim * c_dim],
            ..TileStats::default()
        };

        let adata = a.data();
        let bdata = b.data();
        let mut cycle: u64 = 0;
        loop {
            let mut active: u32 = 0;
            for r in 0..r_dim {
                let t = cycle as i64 - r as i64;
                if t < 0 {
                    continue;
                }
                // active columns satisfy 0 <= t - c < K
                let c_lo = (t - (k_dim as i64 - 1)).max(0) as usize;
                let c_hi = ((t + 1).min(c_dim as i64)).max(0) as usize;
                let arow = &adata[r * k_dim..(r + 1) * k_dim];
                for c in c_lo..c_hi {
                    let k = (t - c as i64) as usize;
                    let av = arow[k];
                    let bv = bdata[k * c_dim + c];
                    acc[r * c_dim + c] += av * bv;
                    stats.pe_active[r * c_dim + c] += 1;
                    active += 1;
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.line(cycle, r, c, "mac", &format!("{av} {bv}"));
                    }
                }
            }
            if active == 0 {
                break;
            }
            stats.activity_log.push(active);
            stats.macs += active as u64;
            stats.active_pe_cycles += active as u64;
            cycle += 1;
        }
        stats.compute_cycles = cycle;
        stats.drain_cycles = r_dim as u64;
        stats.cycles = stats.compute_cycles + stats.drain_cycles;
        stats
            .activity_log
            .extend(std::iter::repeat(0).take(r_dim));
        stats.mult_invocations = stats.macs;
        stats.bytes_scratchpad = (r_dim * k_dim + k_dim * c_dim) as u64 * INPUT_ELEM_BYTES
            + (r_dim * c_dim) as u64 * OUTPUT_ELEM_BYTES;

        let result = DenseMatrix::from_vec(r_dim, c_dim, acc)?;
        debug_assert_eq!(stats.activity_log.len() as u64, stats.cycles);
        self.resident_result = Some(result.clone());
        self.d_plane = None;
        Ok((result, stats))
    }

    /// Feedback pass: recirculates the resident result into the `d`
    /// registers so the following aggregation consumes it without touching
    /// the scratchpad. Costs `rows` cycles; prop_c is raised for the first
    /// cycle only.
    pub fn feedback_x_prime(
        &mut self,
        mut trace: Option<&mut TraceSink>,
    ) -> Result<FeedbackStats> {
        let result = self
            .resident_result
            .as_ref()
            .ok_or(SimError::NoResidentResult)?;
        let cycles = result.rows() as u64;
        let mut prop_c_log = vec![false; cycles as usize];
        if let Some(first) = prop_c_log.first_mut() {
            *first = true;
        }
        if let Some(tr) = trace.as_deref_mut() {
            for (i, flag) in prop_c_log.iter().enumerate() {
                tr.line(i as u64, 0, 0, "prop_c", if *flag { "1" } else { "0" });
            }
        }
        self.d_plane = Some(result.clone());
        Ok(FeedbackStats {
            cycles,
            bytes_moved: 0,
            prop_c_log,
        })
    }

    /// Sparse-times-dense pass over explicit row streams.
    ///
    /// `streams[r]` feeds PE row r west-to-east; the dense operand streams
    /// north-to-south, one column per PE column. `k_dim` is the shared inner
    /// dimension. Returns the drained raw outputs and the pass counters.
    pub fn run_spmm_streams(
        &mut self,
        streams: &[Vec<StreamEntry>],
        k_dim: usize,
        dense: DenseOperand<'_>,
        mode: PeMode,
        packed: bool,
        banks_used: usize,
        mut trace: Option<&mut TraceSink>,
    ) -> Result<(Vec<RawDrain>, TileStats)> {
        assert!(mode != PeMode::DenseDense, "use run_dense for dense work");
        let r_dim = streams.len();
        let d_mat = match dense {
            DenseOperand::Stream(m) => m.clone(),
            DenseOperand::Resident => {
                self.d_plane.clone().ok_or(SimError::NoResidentResult)?
            }
        };
        let charged_dense = matches!(dense, DenseOperand::Stream(_));
        let c_dim = d_mat.cols();
        if r_dim > self.rows || c_dim > self.cols {
            return Err(SimError::TileOverflow {
                work_rows: r_dim,
                work_cols: c_dim,
                tile_rows: self.rows,
                tile_cols: self.cols,
            });
        }
        if d_mat.rows() != k_dim {
            return Err(SimError::DimMismatch {
                left_rows: r_dim,
                left_cols: k_dim,
                right_rows: d_mat.rows(),
                right_cols: d_mat.cols(),
            });
        }

        let mut pes: Vec<ProcessingElement> = (0..r_dim * c_dim)
            .map(|i| {
                let mut pe = ProcessingElement::new(mode, self.fifo_capacity, packed);
                pe.assign((i / c_dim) as u32, (i % c_dim) as u32);
                pe
            })
            .collect();

        let mut sparse_slots: Vec<Option<SparseSlot>> = vec![None; r_dim * c_dim];
        let mut dense_slots: Vec<Option<DenseSlot>> = vec![None; r_dim * c_dim];
        let mut row_cursor = vec![0usize; r_dim];
        let mut col_cursor = vec![0usize; c_dim];

        let mut stats = TileStats {
            grid_pes: (self.rows * self.cols) as u64,
            ..TileStats::default()
        };

        let total_entries: usize = streams.iter().map(|s| s.len()).sum();
        // generous progress bound; a valid pass terminates well inside it
        let cycle_budget = (k_dim + r_dim + c_dim + total_entries + 64) as u64 * 4;

        let mut cycle: u64 = 0;
        loop {
            // phase A: lanes shift one hop, edges inject
            let mut lane_activity = false;

            // dense lanes move south; a spent, unheld element vacates its slot
            for c in 0..c_dim {
                for r in (0..r_dim).rev() {
                    let i = r * c_dim + c;
                    let Some(slot) = dense_slots[i] else { continue };
                    if !slot.spent || slot.hold {
                        continue;
                    }
                    if r + 1 < r_dim {
                        let below = (r + 1) * c_dim + c;
                        if dense_slots[below].is_none() {
                            dense_slots[below] = Some(DenseSlot {
                                spent: false,
                                hold: false,
                                ..slot
                            });
                            dense_slots[i] = None;
                            lane_activity = true;
                        }
                    } else {
                        dense_slots[i] = None; // exits at the south edge
                    }
                }
                if dense_slots[c].is_none() && cycle >= c as u64 && col_cursor[c] < k_dim {
                    let k = col_cursor[c];
                    dense_slots[c] = Some(DenseSlot {
                        k: k as u32,
                        val: d_mat.get(k, c),
                        spent: false,
                        hold: false,
                    });
                    col_cursor[c] += 1;
                    lane_activity = true;
                }
            }

            // sparse lanes move east
            for r in 0..r_dim {
                for c in (0..c_dim).rev() {
                    let i = r * c_dim + c;
                    let Some(slot) = sparse_slots[i] else { continue };
                    if !slot.done {
                        continue;
                    }
                    if c + 1 < c_dim {
                        let east = i + 1;
                        if sparse_slots[east].is_none() {
                            sparse_slots[east] = Some(SparseSlot {
                                entry: slot.entry,
                                done: false,
                            });
                            sparse_slots[i] = None;
                            lane_activity = true;
                        }
                    } else {
                        sparse_slots[i] = None; // exits east
                    }
                }
                let i0 = r * c_dim;
                if sparse_slots[i0].is_none()
                    && cycle >= r as u64
                    && row_cursor[r] < streams[r].len()
                {
                    sparse_slots[i0] = Some(SparseSlot {
                        entry: streams[r][row_cursor[r]],
                        done: false,
                    });
                    row_cursor[r] += 1;
                    lane_activity = true;
                }
            }

            // phase B: every PE with work runs one cycle
            let mut committed_this_cycle: u32 = 0;
            let mut processed_any = false;
            for r in 0..r_dim {
                for c in 0..c_dim {
                    let i = r * c_dim + c;
                    let s_in = sparse_slots[i].filter(|s| !s.done).map(|s| SparseIn {
                        row: r as u32,
                        entry: s.entry,
                    });
                    let d_in = dense_slots[i].filter(|d| !d.spent || d.hold).map(|d| DenseIn {
                        row: d.k,
                        col: c as u32,
                        val: d.val,
                    });
                    if s_in.is_none() && d_in.is_none() && !pes[i].has_pending() {
                        continue;
                    }
                    let out = pes[i].pe_cycle(s_in, d_in);
                    processed_any = true;

                    if let Some(commit) = &out.committed {
                        committed_this_cycle += 1;
                        if let Some(tr) = trace.as_deref_mut() {
                            match commit.op {
                                Committed::Mac { a, b, mask } => {
                                    tr.line(cycle, r, c, "mac", &format!("{a} {b} m{mask}"))
                                }
                                Committed::Reduce { b, mask } => {
                                    tr.line(cycle, r, c, "reduce", &format!("{b} m{mask}"))
                                }
                            }
                        }
                    }
                    if out.stall {
                        stats.stall_cycles += 1;
                        if let Some(tr) = trace.as_deref_mut() {
                            tr.line(cycle, r, c, "stall", "fifo_full");
                        }
                    }
                    if out.forward_sparse.is_some() {
                        if let Some(s) = sparse_slots[i].as_mut() {
                            s.done = true;
                        }
                    }
                    if d_in.is_some() {
                        if let Some(d) = dense_slots[i].as_mut() {
                            if out.dense_hold {
                                d.hold = true;
                                stats.dup_hold_cycles += 1;
                            } else {
                                d.spent = true;
                                d.hold = false;
                            }
                        }
                    }
                }
            }

            if !lane_activity && !processed_any {
                break;
            }
            stats.activity_log.push(committed_this_cycle);
            cycle += 1;
            if cycle > cycle_budget {
                let row = row_cursor
                    .iter()
                    .enumerate()
                    .find(|(r, cur)| **cur < streams[*r].len())
                    .map(|(r, _)| r)
                    .unwrap_or(0);
                return Err(SimError::FifoPermanentOverflow { row, cycles: cycle });
            }
        }

        stats.compute_cycles = cycle;
        stats.drain_cycles = (r_dim * banks_used) as u64;
        stats.cycles = stats.compute_cycles + stats.drain_cycles;
        stats
            .activity_log
            .extend(std::iter::repeat(0).take(stats.drain_cycles as usize));

        let mut drains = Vec::new();
        stats.pe_active = vec![0u64; r_dim * c_dim];
        for r in 0..r_dim {
            for c in 0..c_dim {
                let i = r * c_dim + c;
                let pe = &pes[i];
                stats.pe_active[i] = pe.active_cycles;
                stats.active_pe_cycles += pe.active_cycles;
                stats.macs += pe.macs;
                stats.mult_invocations += pe.mult_invocations;
                stats.reduce_ops += pe.reduce_ops;
                stats.fifo_high_water = stats.fifo_high_water.max(pe.fifo.high_water());
                for (mask, val, _) in pe.drain() {
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.line(stats.cycles, r, c, "drain", &format!("{val} m{mask}"));
                    }
                    drains.push(RawDrain {
                        packed_row: r,
                        mask,
                        col: c,
                        val,
                    });
                }
            }
        }

        stats.bytes_scratchpad = total_entries as u64 * (INPUT_ELEM_BYTES + INDEX_BYTES)
            + drains.len() as u64 * (OUTPUT_ELEM_BYTES + 2 * INDEX_BYTES);
        if charged_dense {
            stats.bytes_scratchpad += (k_dim * c_dim) as u64 * INPUT_ELEM_BYTES;
        }
        debug_assert_eq!(stats.activity_log.len() as u64, stats.cycles);
        Ok((drains, stats))
    }

    /// Sparse-times-dense pass for one plain sparse tile.
    pub fn run_spmm(
        &mut self,
        s: &SparseTile,
        dense: DenseOperand<'_>,
        mode: PeMode,
        trace: Option<&mut TraceSink>,
    ) -> Result<(Vec<RawDrain>, TileStats)> {
        let streams = plain_streams(s);
        self.run_spmm_streams(&streams, s.n_cols(), dense, mode, false, 1, trace)
    }
}

/// Converts a sparse tile into per-row PE streams (mask 0).
pub fn plain_streams(s: &SparseTile) -> Vec<Vec<StreamEntry>> {
    let mut streams = vec![Vec::new(); s.n_rows()];
    for e in s.entries() {
        streams[e.row].push(StreamEntry {
            col: e.col as u32,
            val: e.val,
            mask: 0,
            dup_follows: false,
        });
    }
    streams
}

/// Runs a dense pass on scratch inputs and compares the event-driven cycle
/// count against the closed form.
pub fn dense_cycles_match(tile: &mut SystolicTile, r: usize, c: usize, k: usize) -> Result<bool> {
    let a = DenseMatrix::zeros(r, k);
    let b = DenseMatrix::zeros(k, c);
    let (_, stats) = tile.run_dense(&a, &b, None)?;
    Ok(stats.cycles == dense_pass_cycles(r, c, k))
}
