//! Value-semantic matrix containers, sparse tiles, block partitioning, and
//! the brute-force reference products every simulated path is checked against.
//!
//! Values are stored as `f32`. Inputs are semantically 16-bit floats (loads
//! are charged 2 bytes/element), accumulation is 32-bit. Reference products
//! accumulate in ascending-k order so repeated runs are bit-identical.

use crate::error::{Result, SimError};

/// Bytes charged per streamed input element (16-bit float inputs).
pub const INPUT_ELEM_BYTES: u64 = 2;
/// Bytes charged per accumulated/output element (32-bit float outputs).
pub const OUTPUT_ELEM_BYTES: u64 = 4;
/// Bytes charged per sparse coordinate index.
pub const INDEX_BYTES: u64 = 4;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dims must be >= 1");
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(SimError::BadShape("matrix must be at least 1x1".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(SimError::BadShape(format!(
                    "row {} has {} entries, expected {}",
                    i,
                    r.len(),
                    cols
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(SimError::BadShape("matrix dims must be >= 1".into()));
        }
        if data.len() != rows * cols {
            return Err(SimError::BadShape(format!(
                "data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the rectangle anchored at (r0, c0), zero-filling past the edge.
    pub fn sub_block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(rows, cols);
        for r in 0..rows {
            if r0 + r >= self.rows {
                break;
            }
            for c in 0..cols {
                if c0 + c >= self.cols {
                    break;
                }
                out.set(r, c, self.get(r0 + r, c0 + c));
            }
        }
        out
    }

    /// Writes `block` into this matrix at (r0, c0), clipping at the edges.
    pub fn paste_block(&mut self, r0: usize, c0: usize, block: &DenseMatrix) {
        for r in 0..block.rows {
            if r0 + r >= self.rows {
                break;
            }
            for c in 0..block.cols {
                if c0 + c >= self.cols {
                    break;
                }
                self.set(r0 + r, c0 + c, block.get(r, c));
            }
        }
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    pub fn max_abs_rel_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        let mut worst = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let a = *a as f64;
            let b = *b as f64;
            let denom = a.abs().max(b.abs()).max(1.0);
            worst = worst.max((a - b).abs() / denom);
        }
        worst
    }
}

/// One stored nonzero of a sparse tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub val: f32,
}

/// Storage format a tile was constructed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatTag {
    Coo,
    Csr,
}

/// Sorted-COO sparse tile. CSR/CSC inputs are normalized into this on load.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTile {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<Entry>,
    format_tag: FormatTag,
}

impl SparseTile {
    /// Builds a tile from unsorted coordinates, sorting and validating them.
    pub fn from_coo(
        n_rows: usize,
        n_cols: usize,
        mut entries: Vec<Entry>,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(SimError::BadSparse("tile dims must be >= 1".into()));
        }
        entries.sort_by(|a, b| (a.row, a.col).cmp(&(b.row, b.col)));
        for w in entries.windows(2) {
            if w[0].row == w[1].row && w[0].col == w[1].col {
                return Err(SimError::DuplicateCoord {
                    row: w[0].row,
                    col: w[0].col,
                });
            }
        }
        for e in &entries {
            if e.row >= n_rows || e.col >= n_cols {
                return Err(SimError::IndexOutOfRange {
                    row: e.row,
                    col: e.col,
                    n_rows,
                    n_cols,
                });
            }
        }
        Ok(SparseTile {
            n_rows,
            n_cols,
            entries,
            format_tag: FormatTag::Coo,
        })
    }

    /// Materializes a CSR description as a sorted-COO tile.
    ///
    /// `csr_rows` holds `n_rows + 1` monotone pointers; the last equals the
    /// nonzero count. Columns inside one row need not be sorted but must not
    /// repeat.
    pub fn from_csr(
        n_cols: usize,
        csr_rows: &[usize],
        cols: &[usize],
        vals: &[f32],
    ) -> Result<Self> {
        if csr_rows.len() < 2 {
            return Err(SimError::BadSparse(
                "row pointer list needs at least 2 entries".into(),
            ));
        }
        if cols.len() != vals.len() {
            return Err(SimError::BadSparse(format!(
                "col/val length mismatch: {} vs {}",
                cols.len(),
                vals.len()
            )));
        }
        let n_rows = csr_rows.len() - 1;
        for r in 0..n_rows {
            if csr_rows[r] > csr_rows[r + 1] {
                return Err(SimError::NonMonotoneRowPtr {
                    row: r,
                    prev: csr_rows[r],
                    next: csr_rows[r + 1],
                });
            }
        }
        if csr_rows[n_rows] != cols.len() {
            return Err(SimError::BadSparse(format!(
                "final row pointer {} != nnz {}",
                csr_rows[n_rows],
                cols.len()
            )));
        }
        let mut entries = Vec::with_capacity(cols.len());
        for r in 0..n_rows {
            for i in csr_rows[r]..csr_rows[r + 1] {
                entries.push(Entry {
                    row: r,
                    col: cols[i],
                    val: vals[i],
                });
            }
        }
        let mut tile = Self::from_coo(n_rows, n_cols, entries)?;
        tile.format_tag = FormatTag::Csr;
        Ok(tile)
    }

    /// Materializes a CSC description by transposing it into row-major
    /// sorted COO (there are no column-oriented kernels downstream).
    pub fn from_csc(
        n_rows: usize,
        csc_cols: &[usize],
        rows: &[usize],
        vals: &[f32],
    ) -> Result<Self> {
        let transposed = Self::from_csr(n_rows, csc_cols, rows, vals)?;
        let entries = transposed
            .entries
            .iter()
            .map(|e| Entry { row: e.col, col: e.row, val: e.val })
            .collect();
        let mut tile = Self::from_coo(n_rows, csc_cols.len() - 1, entries)?;
        tile.format_tag = FormatTag::Csr;
        Ok(tile)
    }

    /// Converts a dense matrix into a tile holding its nonzero pattern.
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut entries = Vec::new();
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let v = m.get(r, c);
                if v != 0.0 {
                    entries.push(Entry { row: r, col: c, val: v });
                }
            }
        }
        SparseTile {
            n_rows: m.rows(),
            n_cols: m.cols(),
            entries,
            format_tag: FormatTag::Coo,
        }
    }

    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        SparseTile {
            n_rows,
            n_cols,
            entries: Vec::new(),
            format_tag: FormatTag::Coo,
        }
    }

    pub fn identity_pattern(n: usize) -> Self {
        let entries = (0..n)
            .map(|i| Entry { row: i, col: i, val: 1.0 })
            .collect();
        SparseTile {
            n_rows: n,
            n_cols: n,
            entries,
            format_tag: FormatTag::Coo,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fraction of cells that hold a nonzero, in [0, 1].
    pub fn occupancy(&self) -> f64 {
        self.entries.len() as f64 / (self.n_rows as f64 * self.n_cols as f64)
    }

    /// Entries of one row, in ascending column order.
    pub fn row_entries(&self, row: usize) -> &[Entry] {
        let start = self.entries.partition_point(|e| e.row < row);
        let end = self.entries.partition_point(|e| e.row <= row);
        &self.entries[start..end]
    }

    /// Nonzero count per row.
    pub fn row_lengths(&self) -> Vec<usize> {
        let mut lens = vec![0usize; self.n_rows];
        for e in &self.entries {
            lens[e.row] += 1;
        }
        lens
    }

    /// CSR view: (row pointers, column indices, values).
    pub fn to_csr(&self) -> (Vec<usize>, Vec<usize>, Vec<f32>) {
        let mut ptrs = vec![0usize; self.n_rows + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            ptrs[e.row + 1] += 1;
            cols.push(e.col);
            vals.push(e.val);
        }
        for r in 0..self.n_rows {
            ptrs[r + 1] += ptrs[r];
        }
        (ptrs, cols, vals)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for e in &self.entries {
            m.set(e.row, e.col, e.val);
        }
        m
    }

    /// Replaces every stored value, keeping the pattern.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f32) -> f32) -> SparseTile {
        let entries = self
            .entries
            .iter()
            .map(|e| Entry {
                row: e.row,
                col: e.col,
                val: f(e.row, e.col, e.val),
            })
            .collect();
        SparseTile {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            entries,
            format_tag: self.format_tag,
        }
    }

    /// Sub-tile covering rows [r0, r0+rows) x cols [c0, c0+cols), re-indexed to the origin.
    pub fn sub_tile(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> SparseTile {
        let entries = self
            .entries
            .iter()
            .filter(|e| e.row >= r0 && e.row < r0 + rows && e.col >= c0 && e.col < c0 + cols)
            .map(|e| Entry {
                row: e.row - r0,
                col: e.col - c0,
                val: e.val,
            })
            .collect();
        SparseTile {
            n_rows: rows,
            n_cols: cols,
            entries,
            format_tag: self.format_tag,
        }
    }
}

/// Reference dense product: triple loop, 32-bit accumulation, k ascending.
pub fn dense_matmul_oracle(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(SimError::DimMismatch {
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: b.rows(),
            right_cols: b.cols(),
        });
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0f32;
            for k in 0..a.cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Reference sparse-dense product: out[r, c] = sum over entries (r, k, v) of v * d[k, c].
pub fn spmm_oracle(s: &SparseTile, d: &DenseMatrix) -> Result<DenseMatrix> {
    if s.n_cols() != d.rows() {
        return Err(SimError::DimMismatch {
            left_rows: s.n_rows(),
            left_cols: s.n_cols(),
            right_rows: d.rows(),
            right_cols: d.cols(),
        });
    }
    let mut out = DenseMatrix::zeros(s.n_rows(), d.cols());
    // entries are sorted by (row, col), so k ascends within each output row
    for e in s.entries() {
        for c in 0..d.cols() {
            let cur = out.get(e.row, c);
            out.set(e.row, c, cur + e.val * d.get(e.col, c));
        }
    }
    Ok(out)
}

/// 2x2 block split of a matrix, zero-padded to even dims.
///
/// Blocks are row-major: 0 = top-left, 1 = top-right, 2 = bottom-left,
/// 3 = bottom-right. `reassemble` strips the recorded padding.
#[derive(Debug, Clone)]
pub struct BlockPartition {
    pub parent_rows: usize,
    pub parent_cols: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub pad_rows: usize,
    pub pad_cols: usize,
    pub blocks: [DenseMatrix; 4],
}

/// Splits `m` into four equal blocks, zero-padding odd dims first.
pub fn partition_2x2(m: &DenseMatrix) -> BlockPartition {
    let padded_rows = m.rows() + m.rows() % 2;
    let padded_cols = m.cols() + m.cols() % 2;
    let br = padded_rows / 2;
    let bc = padded_cols / 2;
    let blocks = [
        m.sub_block(0, 0, br, bc),
        m.sub_block(0, bc, br, bc),
        m.sub_block(br, 0, br, bc),
        m.sub_block(br, bc, br, bc),
    ];
    BlockPartition {
        parent_rows: m.rows(),
        parent_cols: m.cols(),
        block_rows: br,
        block_cols: bc,
        pad_rows: padded_rows - m.rows(),
        pad_cols: padded_cols - m.cols(),
        blocks,
    }
}

impl BlockPartition {
    /// Reconstructs the parent matrix, stripping padding.
    pub fn reassemble(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.parent_rows, self.parent_cols);
        let anchors = [
            (0, 0),
            (0, self.block_cols),
            (self.block_rows, 0),
            (self.block_rows, self.block_cols),
        ];
        for (b, (r0, c0)) in self.blocks.iter().zip(anchors) {
            out.paste_block(r0, c0, b);
        }
        out
    }

    /// Reassembles four result blocks into a matrix of the given final shape.
    pub fn assemble_from(
        blocks: &[DenseMatrix; 4],
        final_rows: usize,
        final_cols: usize,
    ) -> DenseMatrix {
        let br = blocks[0].rows();
        let bc = blocks[0].cols();
        let mut out = DenseMatrix::zeros(final_rows, final_cols);
        let anchors = [(0, 0), (0, bc), (br, 0), (br, bc)];
        for (b, (r0, c0)) in blocks.iter().zip(anchors) {
            out.paste_block(r0, c0, b);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_oracle_identity() {
        let b = DenseMatrix::from_rows(vec![
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
        ])
        .unwrap();
        let i = DenseMatrix::identity(3);
        assert_eq!(dense_matmul_oracle(&i, &b).unwrap(), b);
    }

    #[test]
    fn dense_oracle_hand_example() {
        let a = DenseMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(vec![vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = dense_matmul_oracle(&a, &b).unwrap();
        let want = DenseMatrix::from_rows(vec![vec![19.0, 22.0], vec![43.0, 50.0]]).unwrap();
        assert_eq!(c, want);
    }

    #[test]
    fn dense_oracle_zero_annihilates() {
        let z = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::from_rows(vec![
            vec![1.0, -1.0],
            vec![2.0, -2.0],
            vec![3.0, -3.0],
        ])
        .unwrap();
        let c = dense_matmul_oracle(&z, &b).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_oracle_rejects_mismatch() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(4, 2);
        let err = dense_matmul_oracle(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn spmm_oracle_empty_tile() {
        let s = SparseTile::empty(3, 4);
        let d = DenseMatrix::from_rows(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let out = spmm_oracle(&s, &d).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spmm_oracle_identity_pattern() {
        let s = SparseTile::identity_pattern(3);
        let d = DenseMatrix::from_rows(vec![vec![5.0, 1.0], vec![6.0, 2.0], vec![7.0, 3.0]])
            .unwrap();
        assert_eq!(spmm_oracle(&s, &d).unwrap(), d);
    }

    #[test]
    fn spmm_oracle_single_entry() {
        let s = SparseTile::from_coo(4, 4, vec![Entry { row: 0, col: 2, val: 3.0 }]).unwrap();
        let d = DenseMatrix::from_rows(vec![vec![10.0], vec![20.0], vec![30.0], vec![40.0]])
            .unwrap();
        let out = spmm_oracle(&s, &d).unwrap();
        assert_eq!(out.get(0, 0), 90.0);
        assert_eq!(out.get(1, 0), 0.0);
        assert_eq!(out.get(2, 0), 0.0);
        assert_eq!(out.get(3, 0), 0.0);
    }

    #[test]
    fn partition_even_and_reassemble() {
        let m = DenseMatrix::from_vec(4, 4, (0..16).map(|v| v as f32).collect()).unwrap();
        let p = partition_2x2(&m);
        assert_eq!(p.block_rows, 2);
        assert_eq!(p.pad_rows, 0);
        assert_eq!(p.blocks[0].get(1, 1), 5.0);
        assert_eq!(p.blocks[3].get(0, 0), 10.0);
        assert_eq!(p.reassemble(), m);
    }

    #[test]
    fn partition_odd_pads_and_strips() {
        let m = DenseMatrix::from_vec(3, 3, (1..=9).map(|v| v as f32).collect()).unwrap();
        let p = partition_2x2(&m);
        assert_eq!(p.pad_rows, 1);
        assert_eq!(p.pad_cols, 1);
        assert_eq!(p.block_rows, 2);
        // padded cells are zero
        assert_eq!(p.blocks[3].get(1, 1), 0.0);
        assert_eq!(p.reassemble(), m);
    }

    #[test]
    fn partition_2x2_to_scalars() {
        let m = DenseMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let p = partition_2x2(&m);
        assert_eq!(p.block_rows, 1);
        assert_eq!(p.blocks[1].get(0, 0), 2.0);
    }

    #[test]
    fn csr_materializes_sorted() {
        let t = SparseTile::from_csr(4, &[0, 1, 1], &[2], &[3.0]).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.entries(), &[Entry { row: 0, col: 2, val: 3.0 }]);
    }

    #[test]
    fn csr_empty() {
        let t = SparseTile::from_csr(4, &[0, 0], &[], &[]).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn csr_rejects_duplicates() {
        let err = SparseTile::from_csr(4, &[0, 2], &[1, 1], &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, SimError::DuplicateCoord { row: 0, col: 1 }));
    }

    #[test]
    fn csr_rejects_non_monotone() {
        let err = SparseTile::from_csr(4, &[0, 2, 1], &[0, 1], &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, SimError::NonMonotoneRowPtr { row: 1, .. }));
    }

    #[test]
    fn csr_rejects_out_of_range_col() {
        let err = SparseTile::from_csr(2, &[0, 1], &[5], &[1.0]).unwrap_err();
        assert!(matches!(err, SimError::IndexOutOfRange { col: 5, .. }));
    }

    #[test]
    fn csc_transposes_into_row_major() {
        // [[1,0],[0,2],[3,0]] in CSC
        let t = SparseTile::from_csc(3, &[0, 2, 3], &[0, 2, 1], &[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.n_cols(), 2);
        assert_eq!(
            t.entries(),
            &[
                Entry { row: 0, col: 0, val: 1.0 },
                Entry { row: 1, col: 1, val: 2.0 },
                Entry { row: 2, col: 0, val: 3.0 },
            ]
        );
    }

    #[test]
    fn csr_round_trip() {
        let t = SparseTile::from_coo(
            3,
            5,
            vec![
                Entry { row: 0, col: 4, val: 1.0 },
                Entry { row: 2, col: 0, val: -2.0 },
                Entry { row: 2, col: 3, val: 7.0 },
            ],
        )
        .unwrap();
        let (ptrs, cols, vals) = t.to_csr();
        let back = SparseTile::from_csr(5, &ptrs, &cols, &vals).unwrap();
        assert_eq!(back.entries(), t.entries());
    }

    #[test]
    fn spmm_matches_dense_oracle_on_densified() {
        let d1 = DenseMatrix::from_rows(vec![
            vec![1.0, 0.0, 2.0],
            vec![0.0, 0.0, 0.0],
            vec![3.0, 4.0, 0.0],
        ])
        .unwrap();
        let d2 = DenseMatrix::from_rows(vec![
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 6.0],
        ])
        .unwrap();
        let s = SparseTile::from_dense(&d1);
        assert_eq!(
            spmm_oracle(&s, &d2).unwrap(),
            dense_matmul_oracle(&d1, &d2).unwrap()
        );
    }
}
