//! Dataset ingestion: CSV parsing with a header row, per-column block
//! assignment, block-contiguous reordering, and the whitening
//! preprocessor.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use mslca::blocks::{inv_sqrt_psd, BlockStructure, ScatterMatrix};
use mslca::elliptical::{compute_constants, EllipticalModel};
use mslca::mcd::{consistency_correct, fast_mcd, subset_size};
use mslca::mslca::sample_covariance;

/// Errors raised while reading or transforming input data.
#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    Csv(csv::Error),
    /// Cell at (1-based row, column name) is not a finite number.
    NonNumericCell { row: usize, column: String, value: String },
    MissingColumn(String),
    BadBlockSpec(String),
    TooFewRows(usize),
    Core(mslca::Error),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io(e) => write!(f, "io error: {e}"),
            DataError::Csv(e) => write!(f, "csv error: {e}"),
            DataError::NonNumericCell { row, column, value } => {
                write!(f, "row {row}, column '{column}': '{value}' is not a finite number")
            }
            DataError::MissingColumn(c) => write!(f, "missing column: {c}"),
            DataError::BadBlockSpec(s) => write!(f, "invalid block specification: {s}"),
            DataError::TooFewRows(n) => write!(f, "need at least 2 data rows, got {n}"),
            DataError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Csv(e)
    }
}

impl From<mslca::Error> for DataError {
    fn from(e: mslca::Error) -> Self {
        DataError::Core(e)
    }
}

/// Parsed input: rows, column names reordered block-contiguously, and the
/// implied block structure.
#[derive(Debug)]
pub struct Dataset {
    pub rows: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub structure: BlockStructure,
}

/// Parse a block spec like "1,1,2" into per-column block labels.
fn parse_block_spec(spec: &str, n_cols: usize) -> Result<Vec<usize>, DataError> {
    let labels: Vec<usize> = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| DataError::BadBlockSpec(spec.to_string()))?;
    if labels.len() != n_cols {
        return Err(DataError::BadBlockSpec(format!(
            "{spec} assigns {} columns but the file has {n_cols}",
            labels.len()
        )));
    }
    Ok(labels)
}

/// Load a CSV file (header required) and group its columns into blocks.
/// `block_spec` lists one block label per column, e.g. "1,1,2"; columns
/// are reordered so that blocks are contiguous, in ascending label order.
pub fn load_csv(path: &Path, block_spec: &str) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(DataError::Csv)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let n_cols = headers.len();
    let labels = parse_block_spec(block_spec, n_cols)?;

    let mut values: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(n_cols);
        for (c, cell) in record.iter().enumerate() {
            let parsed: Option<f64> = cell.parse().ok().filter(|v: &f64| v.is_finite());
            match parsed {
                Some(v) => row.push(v),
                None => {
                    return Err(DataError::NonNumericCell {
                        row: r + 1,
                        column: headers.get(c).cloned().unwrap_or_else(|| format!("#{c}")),
                        value: cell.to_string(),
                    })
                }
            }
        }
        if row.len() != n_cols {
            return Err(DataError::MissingColumn(format!(
                "row {} has {} cells, expected {n_cols}",
                r + 1,
                row.len()
            )));
        }
        values.push(row);
    }
    if values.len() < 2 {
        return Err(DataError::TooFewRows(values.len()));
    }

    // stable reorder: ascending block label, original order within a block
    let mut distinct: Vec<usize> = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let mut order: Vec<usize> = Vec::with_capacity(n_cols);
    let mut dims = Vec::with_capacity(distinct.len());
    for &b in &distinct {
        let cols: Vec<usize> = (0..n_cols).filter(|&c| labels[c] == b).collect();
        dims.push(cols.len());
        order.extend(cols);
    }
    let structure = BlockStructure::new(dims).map_err(DataError::Core)?;
    let n = values.len();
    let rows = DMatrix::from_fn(n, n_cols, |i, j| values[i][order[j]]);
    let column_names = order.iter().map(|&c| headers[c].clone()).collect();
    Ok(Dataset { rows, column_names, structure })
}

/// Write a matrix as CSV with the given header, using 17 significant
/// digits so that reading it back reproduces every value bit-exactly.
pub fn write_csv(
    path: &Path,
    header: &[String],
    rows: &DMatrix<f64>,
) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for i in 0..rows.nrows() {
        let record: Vec<String> = (0..rows.ncols())
            .map(|j| format!("{:.16e}", rows[(i, j)]))
            .collect();
        writer.write_record(&record)?;
    }
    writer.flush().map_err(DataError::Io)?;
    Ok(())
}

/// Which scatter estimate drives the whitening transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhitenTag {
    Classical,
    Mcd,
}

/// Per-block whitening transform; block k of every row is multiplied by
/// `blocks[k]`, the inverse square root of the estimated block scatter.
pub struct WhitenRecord {
    pub blocks: Vec<DMatrix<f64>>,
}

impl WhitenRecord {
    /// Map a direction fitted on whitened data back to raw coordinates.
    pub fn back_map(&self, direction: &nalgebra::DVector<f64>, bs: &BlockStructure) -> nalgebra::DVector<f64> {
        let mut out = direction.clone();
        for (k, w) in self.blocks.iter().enumerate() {
            let seg = w * direction.rows(bs.offset(k), bs.dim(k));
            out.rows_mut(bs.offset(k), bs.dim(k)).copy_from(&seg);
        }
        out
    }
}

/// Whiten each block by its estimated within-block scatter. The classical
/// tag uses the block sample covariance; the MCD tag uses the
/// consistency-corrected MCD scatter of the block at coverage gamma.
pub fn whiten(
    data: &DMatrix<f64>,
    bs: &BlockStructure,
    tag: WhitenTag,
    gamma: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, WhitenRecord), DataError> {
    let n = data.nrows();
    let mut out = data.clone();
    let mut transforms = Vec::with_capacity(bs.k());
    for k in 0..bs.k() {
        let p = bs.dim(k);
        let block = data.columns(bs.offset(k), p).into_owned();
        let scatter = match tag {
            WhitenTag::Classical => sample_covariance(&block),
            WhitenTag::Mcd => {
                if p == 1 {
                    // the h > q subset search needs p >= 2; scalar blocks
                    // fall back to the classical variance
                    sample_covariance(&block)
                } else {
                    // the MCD plumbing wants a block structure; any split
                    // of the columns works since only the scatter is used
                    let block_bs = BlockStructure::new(vec![1, p - 1])?;
                    let h = subset_size(n, gamma);
                    let fit = fast_mcd(&block, h, 200, seed ^ (k as u64), &block_bs)?;
                    let model = EllipticalModel::gaussian(ScatterMatrix::identity(
                        block_bs.clone(),
                    ))?;
                    let c = compute_constants(gamma, &model)?;
                    consistency_correct(&fit, &c).entries().clone()
                }
            }
        };
        let w = inv_sqrt_psd(&scatter)?;
        let transformed = &block * w.transpose();
        out.columns_mut(bs.offset(k), p).copy_from(&transformed);
        transforms.push(w);
    }
    Ok((out, WhitenRecord { blocks: transforms }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_blocks_in_spec_order() {
        let f = write_temp("a,b,c\n1,2,3\n4,5,6\n");
        let ds = load_csv(f.path(), "1,1,2").unwrap();
        assert_eq!(ds.structure.dims(), &[2, 1]);
        assert_eq!(ds.column_names, vec!["a", "b", "c"]);
        assert_eq!(ds.rows[(1, 2)], 6.0);
    }

    #[test]
    fn reorders_interleaved_blocks() {
        let f = write_temp("a,b,c,d\n1,2,3,4\n5,6,7,8\n");
        let ds = load_csv(f.path(), "2,1,2,1").unwrap();
        assert_eq!(ds.column_names, vec!["b", "d", "a", "c"]);
        assert_eq!(ds.rows.row(0).iter().cloned().collect::<Vec<_>>(), vec![2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn rejects_non_numeric_cell_with_location() {
        let f = write_temp("a,b\n1,2\n3,oops\n");
        match load_csv(f.path(), "1,2") {
            Err(DataError::NonNumericCell { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("expected NonNumericCell, got {other:?}"),
        }
    }

    #[test]
    fn rejects_nan() {
        let f = write_temp("a,b\n1,2\nNaN,4\n");
        assert!(matches!(
            load_csv(f.path(), "1,2"),
            Err(DataError::NonNumericCell { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let rows = DMatrix::from_row_slice(
            2,
            2,
            &[std::f64::consts::PI, 1.0 / 3.0, -2.7182818284590455e-10, 12345.678901234567],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.csv");
        write_csv(&path, &["x".into(), "y".into()], &rows).unwrap();
        let ds = load_csv(&path, "1,2").unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(ds.rows[(i, j)].to_bits(), rows[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn classical_whitening_makes_block_covariance_identity() {
        let bs = BlockStructure::new(vec![2, 2]).unwrap();
        let v = mslca::sim::random_a2_scatter(&[2, 2], 3, 0.4);
        let model = EllipticalModel::gaussian(v).unwrap();
        let data = model.sample(300, 5).unwrap();
        let (white, record) = whiten(&data, &bs, WhitenTag::Classical, 0.75, 1).unwrap();
        let cov = sample_covariance(&white);
        for k in 0..2 {
            let block = cov.view((bs.offset(k), bs.offset(k)), (2, 2)).into_owned();
            assert!((block - DMatrix::identity(2, 2)).amax() < 1e-10);
        }
        // back-mapping composes to the identity on raw directions
        let dir = nalgebra::DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0]);
        let mapped = record.back_map(&dir, &bs);
        for k in 0..2 {
            let seg = record.blocks[k].clone()
                * dir.rows(bs.offset(k), bs.dim(k)).into_owned();
            assert!((mapped.rows(bs.offset(k), 2) - seg).amax() < 1e-14);
        }
    }

    #[test]
    fn mcd_whitening_runs() {
        let bs = BlockStructure::new(vec![2, 2]).unwrap();
        let model = EllipticalModel::gaussian(ScatterMatrix::identity(bs.clone())).unwrap();
        let data = model.sample(1000, 7).unwrap();
        let (white, _) = whiten(&data, &bs, WhitenTag::Mcd, 0.75, 2).unwrap();
        let cov = sample_covariance(&white);
        for k in 0..2 {
            let block = cov.view((bs.offset(k), bs.offset(k)), (2, 2)).into_owned();
            // robust whitening is consistent, not exact, on clean data
            assert!((block - DMatrix::identity(2, 2)).amax() < 0.2);
        }
    }
}
