use thiserror::Error;

/// Errors surfaced by the simulator and its loaders.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("invalid matrix shape: {0}")]
    BadShape(String),

    #[error("invalid sparse data: {0}")]
    BadSparse(String),

    #[error("CSR row pointers not monotone at row {row}: {prev} > {next}")]
    NonMonotoneRowPtr { row: usize, prev: usize, next: usize },

    #[error("duplicate coordinate ({row}, {col}) in sparse input")]
    DuplicateCoord { row: usize, col: usize },

    #[error("index ({row}, {col}) out of range for {n_rows}x{n_cols} tile")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("work of {work_rows}x{work_cols} exceeds {tile_rows}x{tile_cols} tile; caller must pre-tile")]
    TileOverflow {
        work_rows: usize,
        work_cols: usize,
        tile_rows: usize,
        tile_cols: usize,
    },

    #[error("sparse row {row} made no progress for {cycles} cycles: FIFO permanently full")]
    FifoPermanentOverflow { row: usize, cycles: u64 },

    #[error("feedback requested but no completed result is resident in the array")]
    NoResidentResult,

    #[error("block dim {block} exceeds supported cluster capacity {max}")]
    BlockTooLarge { block: usize, max: usize },

    #[error("packing: {0}")]
    Packing(String),

    #[error("drained mask {mask} has no row_reordering entry (packed row {packed_row})")]
    ReorderCorruption { mask: u8, packed_row: usize },

    #[error("invalid config: {0}")]
    BadConfig(String),

    #[error("missing energy constant `{0}`")]
    MissingEnergyConstant(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("layer {layer} ({phase}): {msg}")]
    Layer {
        layer: usize,
        phase: String,
        msg: String,
    },

    #[error("verification failed at layer {layer} ({phase}): max relative deviation {deviation:.3e} exceeds {tolerance:.1e}")]
    VerificationFailed {
        layer: usize,
        phase: String,
        deviation: f64,
        tolerance: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
