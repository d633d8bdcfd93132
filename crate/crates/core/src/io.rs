//! File formats: Matrix Market tiles, dense CSV matrices, and whitespace
//! edge lists. Parse errors carry the offending line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Result, SimError};
use crate::matrix::{DenseMatrix, Entry, SparseTile};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> SimError {
    SimError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads a Matrix Market coordinate file into a sparse tile.
///
/// Accepts `real` and `pattern` fields, `general` and `symmetric` symmetry
/// (symmetric entries are mirrored). Indices are 1-based in the file.
pub fn read_matrix_market(path: &Path) -> Result<SparseTile> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let header = header?;
    let fields: Vec<String> = header.split_whitespace().map(|s| s.to_lowercase()).collect();
    if fields.len() < 4 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(parse_err(path, 1, "expected `%%MatrixMarket matrix ...` header"));
    }
    if fields[2] != "coordinate" {
        return Err(parse_err(path, 1, format!("unsupported format `{}`", fields[2])));
    }
    let pattern = match fields[3].as_str() {
        "real" | "integer" => false,
        "pattern" => true,
        other => return Err(parse_err(path, 1, format!("unsupported field `{other}`"))),
    };
    let symmetric = match fields.get(4).map(|s| s.as_str()) {
        Some("general") | None => false,
        Some("symmetric") => true,
        Some(other) => return Err(parse_err(path, 1, format!("unsupported symmetry `{other}`"))),
    };

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut entries: Vec<Entry> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        if dims.is_none() {
            let r = parse_field::<usize>(&mut it, path, line_no, "rows")?;
            let c = parse_field::<usize>(&mut it, path, line_no, "cols")?;
            let nnz = parse_field::<usize>(&mut it, path, line_no, "nnz")?;
            dims = Some((r, c, nnz));
            entries.reserve(nnz);
            continue;
        }
        let (n_rows, n_cols, _) = dims.unwrap();
        let i = parse_field::<usize>(&mut it, path, line_no, "row index")?;
        let j = parse_field::<usize>(&mut it, path, line_no, "col index")?;
        if i == 0 || j == 0 || i > n_rows || j > n_cols {
            return Err(parse_err(
                path,
                line_no,
                format!("index ({i}, {j}) outside 1..={n_rows} x 1..={n_cols}"),
            ));
        }
        let val = if pattern {
            1.0
        } else {
            parse_field::<f32>(&mut it, path, line_no, "value")?
        };
        entries.push(Entry { row: i - 1, col: j - 1, val });
        if symmetric && i != j {
            entries.push(Entry { row: j - 1, col: i - 1, val });
        }
    }
    let (n_rows, n_cols, nnz) = dims.ok_or_else(|| parse_err(path, 1, "missing size line"))?;
    if !symmetric && entries.len() != nnz {
        return Err(parse_err(
            path,
            0,
            format!("size line promised {nnz} entries, found {}", entries.len()),
        ));
    }
    SparseTile::from_coo(n_rows, n_cols, entries)
}

fn parse_field<T: std::str::FromStr>(
    it: &mut std::str::SplitWhitespace<'_>,
    path: &Path,
    line: usize,
    what: &str,
) -> Result<T> {
    it.next()
        .ok_or_else(|| parse_err(path, line, format!("missing {what}")))?
        .parse::<T>()
        .map_err(|_| parse_err(path, line, format!("malformed {what}")))
}

/// Writes a tile as `coordinate real general` with 1-based indices.
pub fn write_matrix_market(path: &Path, t: &SparseTile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", t.n_rows(), t.n_cols(), t.nnz())?;
    for e in t.entries() {
        writeln!(w, "{} {} {}", e.row + 1, e.col + 1, e.val)?;
    }
    Ok(())
}

/// Reads a dense matrix from CSV: a `rows,cols` header line, then one
/// comma-separated line per row.
pub fn read_dense_csv(path: &Path) -> Result<DenseMatrix> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let header = header?;
    let dims: Vec<&str> = header.trim().split(',').collect();
    if dims.len() != 2 {
        return Err(parse_err(path, 1, "header must be `rows,cols`"));
    }
    let rows: usize = dims[0]
        .trim()
        .parse()
        .map_err(|_| parse_err(path, 1, "malformed row count"))?;
    let cols: usize = dims[1]
        .trim()
        .parse()
        .map_err(|_| parse_err(path, 1, "malformed col count"))?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0usize;
        for piece in line.trim().split(',') {
            let v: f32 = piece
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("malformed value `{piece}`")))?;
            data.push(v);
            count += 1;
        }
        if count != cols {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {cols} values, found {count}"),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(parse_err(
            path,
            0,
            format!("expected {rows} data rows, found {seen}"),
        ));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

/// Writes a dense matrix as CSV with a `rows,cols` header line.
pub fn write_dense_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dense_csv_to(&mut w, m)
}

pub fn write_dense_csv_to(w: &mut impl Write, m: &DenseMatrix) -> Result<()> {
    writeln!(w, "{},{}", m.rows(), m.cols())?;
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a whitespace edge list (`src dst` per line, 0-based) into an
/// unweighted adjacency pattern. Lines starting with `#` or `%` are
/// comments. With `n_nodes` unset, the node count is one past the largest
/// index seen.
pub fn read_edge_list(
    path: &Path,
    n_nodes: Option<usize>,
    symmetrize: bool,
) -> Result<SparseTile> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut edges: Vec<(usize, usize, usize)> = Vec::new(); // (src, dst, line)
    let mut max_node = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let src = parse_field::<usize>(&mut it, path, line_no, "source node")?;
        let dst = parse_field::<usize>(&mut it, path, line_no, "destination node")?;
        max_node = max_node.max(src).max(dst);
        edges.push((src, dst, line_no));
    }
    let n = n_nodes.unwrap_or(if edges.is_empty() { 1 } else { max_node + 1 });
    let mut seen = std::collections::BTreeSet::new();
    for &(src, dst, line_no) in &edges {
        if src >= n || dst >= n {
            return Err(parse_err(
                path,
                line_no,
                format!("edge ({src}, {dst}) references node >= {n}"),
            ));
        }
        seen.insert((src, dst));
        if symmetrize {
            seen.insert((dst, src));
        }
    }
    let entries = seen
        .into_iter()
        .map(|(r, c)| Entry { row: r, col: c, val: 1.0 })
        .collect();
    SparseTile::from_coo(n, n, entries)
}

/// Writes an edge list, one `src dst` pair per stored entry.
pub fn write_edge_list(path: &Path, adj: &SparseTile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in adj.entries() {
        writeln!(w, "{} {}", e.row, e.col)?;
    }
    Ok(())
}
