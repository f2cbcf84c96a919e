//! Coordinate-list contact data: rescaling genomic positions to the unit
//! interval, binning samples into symmetric matrices, and block aggregation.

use std::io::BufRead;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ContactPoint, ContactSample};
use crate::matrix::SymmetricMatrix;

/// One `(pos_i, pos_j, count)` line of a coordinate-list file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawContactRecord {
    pub pos_i: u64,
    pub pos_j: u64,
    pub count: f64,
    /// Source line (1-based), 0 when not read from a file.
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChromContext {
    pub chrom_length: u64,
    pub resolution: u64,
}

impl ChromContext {
    pub fn new(chrom_length: u64, resolution: u64) -> Result<Self> {
        if chrom_length == 0 || resolution == 0 || resolution > chrom_length {
            return Err(Error::invalid(format!(
                "need 0 < resolution <= chrom_length, got resolution {resolution}, length {chrom_length}"
            )));
        }
        Ok(Self { chrom_length, resolution })
    }

    /// Number of bins at this resolution (last partial bin included).
    pub fn bins(&self) -> usize {
        self.chrom_length.div_ceil(self.resolution) as usize
    }
}

/// How positions in the file are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionConvention {
    /// Positions are bin starts and are shifted by half a resolution.
    #[default]
    BinStart,
    /// Positions are already midpoints.
    Midpoint,
}

/// Maps genomic positions onto `[0, 1]`, keeping counts and ordering `x <= y`.
pub fn rescale_to_unit(
    records: &[RawContactRecord],
    ctx: &ChromContext,
    convention: PositionConvention,
) -> Result<ContactSample> {
    let len = ctx.chrom_length as f64;
    let shift = match convention {
        PositionConvention::BinStart => ctx.resolution as f64 / 2.0,
        PositionConvention::Midpoint => 0.0,
    };
    let mut points = Vec::with_capacity(records.len());
    for r in records {
        for pos in [r.pos_i, r.pos_j] {
            if pos >= ctx.chrom_length {
                return Err(Error::OutOfRange {
                    line: r.line,
                    message: format!("position {pos} is not below the chromosome length {}", ctx.chrom_length),
                });
            }
        }
        if !(r.count > 0.0) || !r.count.is_finite() {
            return Err(Error::OutOfRange { line: r.line, message: format!("count {} is not positive", r.count) });
        }
        // a partial last bin can push its center past the end
        let x = ((r.pos_i as f64 + shift) / len).min(1.0);
        let y = ((r.pos_j as f64 + shift) / len).min(1.0);
        points.push(ContactPoint::new(x.min(y), x.max(y), r.count));
    }
    ContactSample::new(points)
}

/// Reads a three-column `pos_i pos_j count` listing; `#` starts a comment line.
/// Columns may be separated by tabs or spaces.
pub fn parse_coordinate_list(reader: impl BufRead) -> Result<Vec<RawContactRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse { line: lineno, message: format!("expected 3 columns, found {}", fields.len()) });
        }
        let pos = |s: &str| {
            s.parse::<u64>().map_err(|e| Error::Parse { line: lineno, message: format!("bad position {s:?}: {e}") })
        };
        let count = fields[2]
            .parse::<f64>()
            .map_err(|e| Error::Parse { line: lineno, message: format!("bad count {:?}: {e}", fields[2]) })?;
        out.push(RawContactRecord { pos_i: pos(fields[0])?, pos_j: pos(fields[1])?, count, line: lineno });
    }
    Ok(out)
}

/// Histogram of a sample on `bins x bins` cells, mirrored across the diagonal.
///
/// Cells are half-open `[(i-1)/n, i/n)`; coordinate 1.0 falls in the last
/// cell. The upper triangle including the diagonal carries the total count.
pub fn bin_sample(sample: &ContactSample, bins: usize) -> Result<SymmetricMatrix> {
    if bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
    }
    let mut c = SymmetricMatrix::zeros(bins);
    let cell = |v: f64| ((v * bins as f64).floor() as usize).min(bins - 1);
    for p in sample.points() {
        let (i, j) = (cell(p.x), cell(p.y));
        c.add_symmetric(i.min(j), i.max(j), p.count);
    }
    Ok(c)
}

/// Sums `factor x factor` blocks. When `factor` does not divide `n`, the last
/// block absorbs the remainder.
pub fn rebin(c: &SymmetricMatrix, factor: usize) -> Result<SymmetricMatrix> {
    if factor < 1 {
        return Err(Error::invalid("rebinning factor must be at least 1"));
    }
    let n = c.n();
    let m = (n / factor).max(1);
    let block = |i: usize| (i / factor).min(m - 1);
    let mut out = Array2::<f64>::zeros((m, m));
    for i in 0..n {
        for j in 0..n {
            let (bi, bj) = (block(i), block(j));
            if bi <= bj {
                out[[bi, bj]] += c.get(i, j);
            }
        }
    }
    for bi in 0..m {
        for bj in (bi + 1)..m {
            out[[bj, bi]] = out[[bi, bj]];
        }
    }
    Ok(SymmetricMatrix::from_upper_unchecked(out))
}
