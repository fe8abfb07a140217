//! Compressed sparse column matrices with deterministic assembly.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Real sparse matrix in compressed sparse column form. Row indices are sorted
/// within each column and contain no duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    values: Vec<f64>,
}

/// Triplet accumulator. Duplicates are summed in insertion order, so the same
/// sequence of pushes always produces bit-identical values.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn extend(&mut self, other: TripletBuilder) {
        self.entries.extend(other.entries);
    }

    pub fn build(mut self) -> CscMatrix {
        // stable sort keeps insertion order among duplicates
        self.entries.sort_by_key(|&(r, c, _)| (c, r));
        let mut colptr = vec![0usize; self.ncols + 1];
        let mut rowidx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                rowidx.push(r);
                values.push(v);
                colptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..self.ncols {
            colptr[c + 1] += colptr[c];
        }
        CscMatrix { nrows: self.nrows, ncols: self.ncols, colptr, rowidx, values }
    }
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, colptr: vec![0; ncols + 1], rowidx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, colptr: (0..=n).collect(), rowidx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, t: &[(usize, usize, f64)]) -> Self {
        let mut b = TripletBuilder::with_capacity(nrows, ncols, t.len());
        for &(r, c, v) in t {
            b.push(r, c, v);
        }
        b.build()
    }

    /// Builds from raw parts, validating the structure.
    pub fn from_parts(nrows: usize, ncols: usize, colptr: Vec<usize>, rowidx: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let ok = colptr.len() == ncols + 1
            && colptr[0] == 0
            && colptr.windows(2).all(|w| w[0] <= w[1])
            && *colptr.last().unwrap() == rowidx.len()
            && rowidx.len() == values.len()
            && (0..ncols).all(|c| {
                let r = &rowidx[colptr[c]..colptr[c + 1]];
                r.windows(2).all(|w| w[0] < w[1]) && r.iter().all(|&i| i < nrows)
            });
        if !ok {
            return Err(Error::Degenerate("malformed compressed column structure".into()));
        }
        Ok(Self { nrows, ncols, colptr, rowidx, values })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn colptr(&self) -> &[usize] {
        &self.colptr
    }

    pub fn rowidx(&self) -> &[usize] {
        &self.rowidx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `(row, value)` pairs of column `c`.
    pub fn col(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.colptr[c]..self.colptr[c + 1];
        self.rowidx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let s = &self.rowidx[self.colptr[c]..self.colptr[c + 1]];
        match s.binary_search(&r) {
            Ok(k) => self.values[self.colptr[c] + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| self.col(c).map(move |(r, v)| (r, c, v)))
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.nrows + 1];
        for &r in &self.rowidx {
            counts[r + 1] += 1;
        }
        for r in 0..self.nrows {
            counts[r + 1] += counts[r];
        }
        let colptr = counts.clone();
        let mut next = counts;
        let mut rowidx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for c in 0..self.ncols {
            for (r, v) in self.col(c) {
                let k = next[r];
                rowidx[k] = c;
                values[k] = v;
                next[r] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, colptr, rowidx, values }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        y.fill(0.0);
        self.matvec_add(1.0, x, y);
    }

    /// `y += alpha A x`.
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for c in 0..self.ncols {
            let xc = alpha * x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.colptr[c]..self.colptr[c + 1] {
                y[self.rowidx[k]] += self.values[k] * xc;
            }
        }
    }

    /// `y += alpha A x` for complex vectors.
    pub fn matvec_add_complex(&self, alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
        for c in 0..self.ncols {
            let xc = alpha * x[c];
            for k in self.colptr[c]..self.colptr[c + 1] {
                y[self.rowidx[k]] += xc * self.values[k];
            }
        }
    }

    pub fn matvec_complex(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        y.fill(Complex64::new(0.0, 0.0));
        self.matvec_add_complex(Complex64::new(1.0, 0.0), x, y);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Column sums weighted by `w` on rows: `sum_i w_i A_ij`.
    pub fn weighted_col_sums(&self, w: &[f64]) -> Vec<f64> {
        (0..self.ncols).map(|c| self.col(c).map(|(r, v)| w[r] * v).sum()).collect()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self + other`, entries summed in a fixed order.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut b = TripletBuilder::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for (r, c, v) in self.triplets().chain(other.triplets()) {
            b.push(r, c, v);
        }
        b.build()
    }

    /// Drops explicit zeros.
    pub fn pruned(&self) -> Self {
        let t: Vec<_> = self.triplets().filter(|t| t.2 != 0.0).collect();
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Max absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.ncols).map(|c| self.col(c).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }

    /// Writes Matrix Market coordinate format. `header` lines become `%` comments.
    pub fn write_matrix_market(&self, path: &Path, header: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_matrix_market_to(&mut w, header).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_matrix_market_to(&self, w: &mut impl Write, header: &[String]) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        for h in header {
            for line in h.lines() {
                writeln!(w, "% {line}")?;
            }
        }
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            // `{:e}` prints the shortest representation that round-trips
            writeln!(w, "{} {} {:e}", r + 1, c + 1, v)?;
        }
        Ok(())
    }

    pub fn read_matrix_market(path: &Path) -> Result<(Self, Vec<String>)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let perr = |msg: String| Error::Parse { path: path.to_path_buf(), msg };
        let mut lines = BufReader::new(file).lines();
        let banner = lines.next().ok_or_else(|| perr("empty file".into()))?.map_err(|e| Error::io(path, e))?;
        let lower = banner.to_ascii_lowercase();
        if !lower.starts_with("%%matrixmarket matrix coordinate real") {
            return Err(perr(format!("unsupported banner: {banner}")));
        }
        let symmetric = lower.contains("symmetric");
        let mut header = Vec::new();
        let mut size: Option<(usize, usize, usize)> = None;
        let mut trip = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let l = line.trim();
            if let Some(c) = l.strip_prefix('%') {
                header.push(c.trim().to_string());
                continue;
            }
            if l.is_empty() {
                continue;
            }
            let toks: Vec<&str> = l.split_whitespace().collect();
            let bad = |_| perr(format!("line {}: cannot parse '{l}'", lineno + 2));
            if size.is_none() {
                if toks.len() != 3 {
                    return Err(perr(format!("line {}: expected size line", lineno + 2)));
                }
                let n: Vec<usize> = toks.iter().map(|t| t.parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(bad)?;
                size = Some((n[0], n[1], n[2]));
                trip.reserve(n[2]);
                continue;
            }
            if toks.len() != 3 {
                return Err(perr(format!("line {}: expected 'row col value'", lineno + 2)));
            }
            let r: usize = toks[0].parse().map_err(bad)?;
            let c: usize = toks[1].parse().map_err(|_| perr(format!("line {}: bad column", lineno + 2)))?;
            let v: f64 = toks[2].parse().map_err(|_| perr(format!("line {}: bad value", lineno + 2)))?;
            if r == 0 || c == 0 {
                return Err(perr(format!("line {}: indices are 1-based", lineno + 2)));
            }
            trip.push((r - 1, c - 1, v));
            if symmetric && r != c {
                trip.push((c - 1, r - 1, v));
            }
        }
        let (m, n, _) = size.ok_or_else(|| perr("missing size line".into()))?;
        if trip.iter().any(|&(r, c, _)| r >= m || c >= n) {
            return Err(perr("index out of range".into()));
        }
        Ok((Self::from_triplets(m, n, &trip), header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicates_sum_and_transpose() {
        let a = CscMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (2, 1, 2.0), (0, 0, 0.5), (1, 1, -1.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 0), 1.5);
        let t = a.transpose();
        assert_eq!(t.get(1, 2), 2.0);
        assert_eq!(t.get(1, 1), -1.0);
        assert_eq!(t.transpose(), a);
    }

    #[test]
    fn matrix_market_round_trip() {
        let a = CscMatrix::from_triplets(3, 3, &[(0, 0, 0.1), (2, 1, -1.0 / 3.0), (1, 2, 1e-300)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        a.write_matrix_market(&p, &["grid 3".into(), "eps 0.1".into()]).unwrap();
        let (b, h) = CscMatrix::read_matrix_market(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(h, vec!["grid 3".to_string(), "eps 0.1".to_string()]);
    }

    proptest! {
        #[test]
        fn matvec_matches_dense(entries in proptest::collection::vec((0usize..6, 0usize..5, -3.0..3.0f64), 0..30),
                                x in proptest::collection::vec(-1.0..1.0f64, 5)) {
            let a = CscMatrix::from_triplets(6, 5, &entries);
            let d = a.to_dense();
            let y = a.mul_vec(&x);
            for r in 0..6 {
                let e: f64 = (0..5).map(|c| d[r][c] * x[c]).sum();
                prop_assert!((e - y[r]).abs() < 1e-12);
            }
        }
    }
}
